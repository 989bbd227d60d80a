//! Serial revolute chains: forward kinematics, geometric Jacobian and a
//! damped SVD pseudoinverse.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ChainError;

/// End-effector pose: translation in meters plus unit-quaternion orientation.
pub type Pose = Isometry3<f64>;

/// Singular values below this fraction of the largest one are damped.
pub const DAMPING_THRESHOLD: f64 = 1e-4;
/// Damping factor used for the small singular values.
pub const DAMPING_LAMBDA: f64 = 1e-3;

const AXIS_NORM_TOL: f64 = 1e-9;

/// Inclusive joint range in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl JointLimit {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// A revolute joint: fixed transform from the parent frame followed by a
/// rotation about `axis` (expressed in the joint frame).
#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub axis: Unit<Vector3<f64>>,
    pub origin: Isometry3<f64>,
    pub limit: JointLimit,
}

impl Joint {
    /// Transform from the parent frame to this joint's frame at angle `angle`.
    pub fn transform(&self, angle: f64) -> Isometry3<f64> {
        self.origin * UnitQuaternion::from_axis_angle(&self.axis, angle)
    }
}

/// A joint vector for one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl fmt::Display for JointConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.6}")?;
        }
        write!(f, "]")
    }
}

/// World frames of every joint plus the end effector for one configuration.
#[derive(Clone, Debug)]
pub struct ChainFrames {
    /// Frame of joint `i` after applying its rotation.
    pub joints: Vec<Isometry3<f64>>,
    pub end_effector: Isometry3<f64>,
}

impl ChainFrames {
    /// Joint origins followed by the end-effector origin (`n + 1` points).
    /// Consecutive points bound the movable links.
    pub fn link_points(&self) -> Vec<Vector3<f64>> {
        self.joints
            .iter()
            .chain(std::iter::once(&self.end_effector))
            .map(|f| f.translation.vector)
            .collect()
    }
}

/// A serial manipulator made of revolute joints.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    pub name: String,
    pub joints: Vec<Joint>,
    /// One bounding radius per movable link (joint `i` to joint `i + 1`, the
    /// last one ending at the tool frame).
    pub link_radii: Vec<f64>,
    /// Fixed transform from the last joint frame to the end effector.
    pub tip: Isometry3<f64>,
    /// Where the chain is mounted in the world.
    pub base: Isometry3<f64>,
}

impl KinematicChain {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<Joint>,
        link_radii: Vec<f64>,
        tip: Isometry3<f64>,
    ) -> Result<Self, ChainError> {
        let chain = Self {
            name: name.into(),
            joints,
            link_radii,
            tip,
            base: Isometry3::identity(),
        };
        chain.validate()?;
        Ok(chain)
    }

    pub fn with_base(mut self, base: Isometry3<f64>) -> Self {
        self.base = base;
        self
    }

    fn validate(&self) -> Result<(), ChainError> {
        if self.joints.is_empty() {
            return Err(ChainError::Empty);
        }
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.limit.min < j.limit.max) {
                return Err(ChainError::InvalidLimit {
                    joint: i,
                    min: j.limit.min,
                    max: j.limit.max,
                });
            }
        }
        if self.link_radii.len() != self.joints.len() {
            return Err(ChainError::LinkRadii {
                expected: self.joints.len(),
                got: self.link_radii.len(),
            });
        }
        if let Some(i) = self.link_radii.iter().position(|r| !(*r > 0.0)) {
            return Err(ChainError::NonPositiveRadius { link: i });
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn limits(&self) -> Vec<JointLimit> {
        self.joints.iter().map(|j| j.limit).collect()
    }

    fn check_len(&self, q: &JointConfig) -> Result<(), ChainError> {
        if q.len() != self.dof() {
            return Err(ChainError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// True when every angle lies inside its joint limit.
    pub fn is_within_limits(&self, q: &JointConfig) -> bool {
        q.len() == self.dof() && self.joints.iter().zip(&q.0).all(|(j, v)| j.limit.contains(*v))
    }

    pub fn clamp(&self, q: &mut JointConfig) {
        for (j, v) in self.joints.iter().zip(q.0.iter_mut()) {
            *v = j.limit.clamp(*v);
        }
    }

    /// Midpoint of every joint range.
    pub fn mid_config(&self) -> JointConfig {
        JointConfig(
            self.joints
                .iter()
                .map(|j| 0.5 * (j.limit.min + j.limit.max))
                .collect(),
        )
    }

    pub fn frames(&self, q: &JointConfig) -> Result<ChainFrames, ChainError> {
        self.check_len(q)?;
        let mut current = self.base;
        let mut joints = Vec::with_capacity(self.dof());
        for (joint, angle) in self.joints.iter().zip(&q.0) {
            current *= joint.transform(*angle);
            joints.push(current);
        }
        let end_effector = current * self.tip;
        Ok(ChainFrames {
            joints,
            end_effector,
        })
    }

    pub fn forward_kinematics(&self, q: &JointConfig) -> Result<Pose, ChainError> {
        Ok(self.frames(q)?.end_effector)
    }

    /// Geometric Jacobian (6 x n): rows 0..3 linear velocity, rows 3..6
    /// angular velocity, both in the world frame.
    pub fn jacobian(&self, q: &JointConfig) -> Result<DMatrix<f64>, ChainError> {
        let frames = self.frames(q)?;
        Ok(jacobian_from_frames(self, &frames))
    }

    /// Upper bound on the distance from the first joint origin to the end
    /// effector, over all configurations.
    pub fn reach(&self) -> f64 {
        self.link_lengths().iter().sum()
    }

    /// Length of every movable link; independent of the configuration.
    pub fn link_lengths(&self) -> Vec<f64> {
        self.joints
            .iter()
            .skip(1)
            .map(|j| j.origin.translation.vector.norm())
            .chain(std::iter::once(self.tip.translation.vector.norm()))
            .collect()
    }

    /// World position of the first joint, which no joint motion can move.
    pub fn shoulder(&self) -> Vector3<f64> {
        (self.base * self.joints[0].origin).translation.vector
    }

    pub fn from_json_str(s: &str) -> Result<Self, ChainError> {
        let file: ChainFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ChainError> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json_str(&s)
    }

    /// A 7-DOF arm with Baxter-like proportions (shoulder roll/pitch, elbow
    /// roll/pitch, wrist roll/pitch/roll). Not a calibrated Baxter model.
    pub fn baxter_like() -> Self {
        Self::from_json_str(BAXTER_LIKE_JSON).expect("bundled chain is valid")
    }
}

pub(crate) fn jacobian_from_frames(chain: &KinematicChain, frames: &ChainFrames) -> DMatrix<f64> {
    let n = chain.dof();
    let p_end = frames.end_effector.translation.vector;
    let mut jac = DMatrix::zeros(6, n);
    for (i, (joint, frame)) in chain.joints.iter().zip(&frames.joints).enumerate() {
        let z = frame.rotation * joint.axis.into_inner();
        let lin = z.cross(&(p_end - frame.translation.vector));
        for r in 0..3 {
            jac[(r, i)] = lin[r];
            jac[(r + 3, i)] = z[r];
        }
    }
    jac
}

/// Moore-Penrose pseudoinverse via SVD. Singular values below
/// `DAMPING_THRESHOLD * sigma_max` are inverted as `s / (s^2 + lambda^2)`.
pub fn pseudoinverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = DAMPING_THRESHOLD * sigma_max;
    let inv: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|&s| {
            if s >= cutoff && s > 0.0 {
                1.0 / s
            } else {
                s / (s * s + DAMPING_LAMBDA * DAMPING_LAMBDA)
            }
        })
        .collect();
    let k = inv.len();
    let mut out = DMatrix::zeros(cols, rows);
    for idx in 0..k {
        if inv[idx] == 0.0 {
            continue;
        }
        let vcol = v_t.row(idx).transpose();
        let ucol = u.column(idx);
        out += (vcol * ucol.transpose()) * inv[idx];
    }
    out
}

/// Six-component pose error `target - current`: position difference followed
/// by the rotation vector of `target * current^-1`, both in the world frame.
pub fn pose_error(target: &Pose, current: &Pose) -> [f64; 6] {
    let dp = target.translation.vector - current.translation.vector;
    let dw = (target.rotation * current.rotation.inverse()).scaled_axis();
    [dp.x, dp.y, dp.z, dw.x, dw.y, dw.z]
}

/// Position error (m) and orientation error (rad) between two poses.
pub fn pose_residual(target: &Pose, current: &Pose) -> (f64, f64) {
    let dp = (target.translation.vector - current.translation.vector).norm();
    let dw = target.rotation.angle_to(&current.rotation);
    (dp, dw)
}

pub fn pose_from_parts(position: [f64; 3], rpy: [f64; 3]) -> Pose {
    Isometry3::from_parts(
        Translation3::new(position[0], position[1], position[2]),
        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub axis: [f64; 3],
    pub offset: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    pub limit: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TipSpec {
    pub offset: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

/// On-disk chain definition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainFile {
    pub name: String,
    pub joints: Vec<JointSpec>,
    pub link_radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tip: Option<TipSpec>,
}

impl TryFrom<ChainFile> for KinematicChain {
    type Error = ChainError;

    fn try_from(file: ChainFile) -> Result<Self, ChainError> {
        let mut joints = Vec::with_capacity(file.joints.len());
        for (i, spec) in file.joints.into_iter().enumerate() {
            let axis = Vector3::from(spec.axis);
            if (axis.norm() - 1.0).abs() > AXIS_NORM_TOL {
                return Err(ChainError::InvalidAxis {
                    joint: i,
                    norm: axis.norm(),
                });
            }
            joints.push(Joint {
                name: spec.name.unwrap_or_else(|| format!("joint{i}")),
                axis: Unit::new_unchecked(axis),
                origin: pose_from_parts(spec.offset, spec.rpy),
                limit: JointLimit::new(spec.limit[0], spec.limit[1]),
            });
        }
        let tip = file
            .tip
            .map(|t| pose_from_parts(t.offset, t.rpy))
            .unwrap_or_else(Isometry3::identity);
        KinematicChain::new(file.name, joints, file.link_radii, tip)
    }
}

pub const BAXTER_LIKE_JSON: &str = include_str!("../fixtures/baxter_like_arm.json");
