//! Deterministic discrete-time scene engine.
//!
//! A scene holds manipulators following end-effector waypoints and scripted
//! spherical obstacles. Every tick advances the obstacles, asks the planner
//! for new joint configurations and records the resulting sphere states in a
//! trajectory log. [`oracle_check`] replays a log and verifies that no pair
//! of spheres touched, both at the logged instants and in between.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Isometry3, Translation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::chain::{pose_from_parts, ChainFile, JointConfig, KinematicChain, Pose};
use crate::error::{LogError, PlanError, SceneError};
use crate::pso::{IkSettings, SwarmConfig};
use crate::planner::{generate_ik_solution, ArmRequest, Ordering, PlanRequest, PlannerConfig};
use crate::rvo::{decompose_chain, min_clearance, Owner, Sphere};

pub const LOG_FORMAT: &str = "rvoik-trajectory/1";

/// Where a manipulator's kinematic description comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainSource {
    /// Name of a bundled chain (`"baxter_like"`).
    Builtin(String),
    Inline(ChainFile),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BaseSpec {
    #[serde(default)]
    pub position: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

/// End-effector target at time `t`, given either as a pose or as the joint
/// configuration whose forward kinematics defines it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WaypointSpec {
    Config {
        t: f64,
        config: Vec<f64>,
    },
    Pose {
        t: f64,
        position: [f64; 3],
        #[serde(default)]
        rpy: [f64; 3],
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManipulatorSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub chain: Option<ChainSource>,
    /// Chain definition file, relative to the scene file.
    #[serde(default)]
    pub chain_file: Option<String>,
    #[serde(default)]
    pub base: BaseSpec,
    pub initial: Vec<f64>,
    #[serde(default)]
    pub waypoints: Vec<WaypointSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint {
    pub t: f64,
    pub position: [f64; 3],
}

/// Motion of one spherical obstacle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleScript {
    ConstantVelocity {
        radius: f64,
        center: [f64; 3],
        velocity: [f64; 3],
    },
    /// Piecewise-linear path through timed points, held at both ends.
    Waypoints { radius: f64, points: Vec<TimedPoint> },
    /// `center + amplitude * sin(frequency * t + phase)` per axis,
    /// frequencies in rad/s.
    Parametric {
        radius: f64,
        center: [f64; 3],
        amplitude: [f64; 3],
        frequency: [f64; 3],
        #[serde(default)]
        phase: [f64; 3],
    },
}

impl ObstacleScript {
    pub fn radius(&self) -> f64 {
        match self {
            ObstacleScript::ConstantVelocity { radius, .. }
            | ObstacleScript::Waypoints { radius, .. }
            | ObstacleScript::Parametric { radius, .. } => *radius,
        }
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        match self {
            ObstacleScript::ConstantVelocity {
                center, velocity, ..
            } => Vector3::from(*center) + Vector3::from(*velocity) * t,
            ObstacleScript::Waypoints { points, .. } => {
                let first = &points[0];
                if t <= first.t {
                    return Vector3::from(first.position);
                }
                for w in points.windows(2) {
                    if t <= w[1].t {
                        let s = (t - w[0].t) / (w[1].t - w[0].t);
                        let a = Vector3::from(w[0].position);
                        let b = Vector3::from(w[1].position);
                        return a + (b - a) * s;
                    }
                }
                Vector3::from(points[points.len() - 1].position)
            }
            ObstacleScript::Parametric {
                center,
                amplitude,
                frequency,
                phase,
                ..
            } => Vector3::from_fn(|i, _| {
                center[i] + amplitude[i] * (frequency[i] * t + phase[i]).sin()
            }),
        }
    }

    /// Velocity at `t`: exact for analytic scripts, a finite difference over
    /// `dt` for waypoint paths (backward, forward at the start).
    pub fn velocity(&self, t: f64, dt: f64) -> Vector3<f64> {
        match self {
            ObstacleScript::ConstantVelocity { velocity, .. } => Vector3::from(*velocity),
            ObstacleScript::Waypoints { .. } => {
                if t >= dt {
                    (self.position(t) - self.position(t - dt)) / dt
                } else {
                    (self.position(t + dt) - self.position(t)) / dt
                }
            }
            ObstacleScript::Parametric {
                amplitude,
                frequency,
                phase,
                ..
            } => Vector3::from_fn(|i, _| {
                amplitude[i] * frequency[i] * (frequency[i] * t + phase[i]).cos()
            }),
        }
    }

    fn validate(&self, index: usize) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::Invalid(format!("obstacle {index}: {m}")));
        if !(self.radius() > 0.0 && self.radius().is_finite()) {
            return bad("radius must be positive");
        }
        if let ObstacleScript::Waypoints { points, .. } = self {
            if points.is_empty() {
                return bad("waypoint list is empty");
            }
            if points.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return bad("waypoint times must be strictly increasing");
            }
        }
        Ok(())
    }
}

fn default_dt() -> f64 {
    0.01
}
fn default_tau() -> f64 {
    5.0
}
fn default_reciprocity() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub ordering: Ordering,
    #[serde(default = "default_reciprocity")]
    pub reciprocity: f64,
}

/// On-disk scene description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub manipulators: Vec<ManipulatorSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleScript>,
    pub sim: SimSettings,
    #[serde(default)]
    pub pso: Option<SwarmConfig>,
    #[serde(default)]
    pub ik: Option<IkSettings>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetWaypoint {
    pub t: f64,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manipulator {
    pub name: String,
    /// Chain with its base pose applied.
    pub chain: KinematicChain,
    pub initial: JointConfig,
    pub waypoints: Vec<TargetWaypoint>,
}

impl Manipulator {
    /// End-effector target at time `t`: linear in position, spherical in
    /// orientation between waypoints, held before the first and after the
    /// last. Without waypoints the initial pose is held.
    pub fn target(&self, t: f64) -> Pose {
        let Some(first) = self.waypoints.first() else {
            return self
                .chain
                .forward_kinematics(&self.initial)
                .expect("initial config validated");
        };
        if t <= first.t {
            return first.pose;
        }
        for w in self.waypoints.windows(2) {
            if t <= w[1].t {
                let s = (t - w[0].t) / (w[1].t - w[0].t);
                let a = w[0].pose.translation.vector;
                let b = w[1].pose.translation.vector;
                let rot = w[0]
                    .pose
                    .rotation
                    .try_slerp(&w[1].pose.rotation, s, 1e-12)
                    .unwrap_or(w[0].pose.rotation);
                return Isometry3::from_parts(Translation3::from(a + (b - a) * s), rot);
            }
        }
        self.waypoints[self.waypoints.len() - 1].pose
    }
}

/// Flag overrides applied on top of a scene file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub rng_seed: Option<u64>,
    pub dt: Option<f64>,
    pub tau: Option<f64>,
    pub particles: Option<usize>,
    pub iterations: Option<usize>,
}

/// A validated scene ready to run.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub name: String,
    pub manipulators: Vec<Manipulator>,
    pub obstacles: Vec<ObstacleScript>,
    pub dt: f64,
    pub duration: f64,
    pub tau: f64,
    pub planner: PlannerConfig,
}

fn resolve_chain(
    spec: &ManipulatorSpec,
    index: usize,
    dir: Option<&Path>,
) -> Result<KinematicChain, SceneError> {
    let chain_err = |source| SceneError::Chain { index, source };
    match (&spec.chain, &spec.chain_file) {
        (Some(_), Some(_)) => Err(SceneError::Invalid(format!(
            "manipulator {index}: give either chain or chain_file, not both"
        ))),
        (None, None) => Err(SceneError::Invalid(format!(
            "manipulator {index}: missing chain"
        ))),
        (Some(ChainSource::Builtin(name)), None) => match name.as_str() {
            "baxter_like" => Ok(KinematicChain::baxter_like()),
            other => Err(SceneError::Invalid(format!(
                "manipulator {index}: unknown bundled chain `{other}`"
            ))),
        },
        (Some(ChainSource::Inline(file)), None) => {
            KinematicChain::try_from(file.clone()).map_err(chain_err)
        }
        (None, Some(path)) => {
            let path = match dir {
                Some(d) => d.join(path),
                None => PathBuf::from(path),
            };
            let text = std::fs::read_to_string(&path).map_err(|source| SceneError::Io {
                path: path.display().to_string(),
                source,
            })?;
            KinematicChain::from_json_str(&text).map_err(chain_err)
        }
    }
}

impl Scene {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_file_with(path, &Overrides::default())
    }

    pub fn from_file_with(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: SceneFile = serde_json::from_str(&text)?;
        let fallback = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_spec(file, path.parent(), overrides, &fallback)
    }

    pub fn from_json_str(text: &str, overrides: &Overrides) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(text)?;
        Self::from_spec(file, None, overrides, "scene")
    }

    /// Resolves chains and targets, applies `overrides` and validates.
    pub fn from_spec(
        file: SceneFile,
        dir: Option<&Path>,
        overrides: &Overrides,
        fallback_name: &str,
    ) -> Result<Self, SceneError> {
        let mut manipulators = Vec::with_capacity(file.manipulators.len());
        for (index, spec) in file.manipulators.iter().enumerate() {
            let base = pose_from_parts(spec.base.position, spec.base.rpy);
            let chain = resolve_chain(spec, index, dir)?.with_base(base);
            let initial = JointConfig::new(spec.initial.clone());
            if initial.len() != chain.dof() {
                return Err(SceneError::Invalid(format!(
                    "manipulator {index}: initial config has {} values, chain has {} joints",
                    initial.len(),
                    chain.dof()
                )));
            }
            if !chain.is_within_limits(&initial) {
                return Err(SceneError::Invalid(format!(
                    "manipulator {index}: initial config violates joint limits"
                )));
            }
            let mut waypoints = Vec::with_capacity(spec.waypoints.len());
            for w in &spec.waypoints {
                let (t, pose) = match w {
                    WaypointSpec::Config { t, config } => {
                        let q = JointConfig::new(config.clone());
                        let pose = chain.forward_kinematics(&q).map_err(|source| {
                            SceneError::Chain { index, source }
                        })?;
                        (*t, pose)
                    }
                    WaypointSpec::Pose { t, position, rpy } => {
                        (*t, pose_from_parts(*position, *rpy))
                    }
                };
                waypoints.push(TargetWaypoint { t, pose });
            }
            if waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(SceneError::Invalid(format!(
                    "manipulator {index}: waypoint times must be strictly increasing"
                )));
            }
            manipulators.push(Manipulator {
                name: spec.name.clone().unwrap_or_else(|| format!("m{index}")),
                chain,
                initial,
                waypoints,
            });
        }
        let mut swarm = file.pso.unwrap_or_default();
        let mut dt = file.sim.dt;
        let mut tau = file.sim.tau;
        if let Some(seed) = overrides.rng_seed {
            swarm.rng_seed = seed;
        }
        if let Some(v) = overrides.dt {
            dt = v;
        }
        if let Some(v) = overrides.tau {
            tau = v;
        }
        if let Some(v) = overrides.particles {
            swarm.particles = v;
        }
        if let Some(v) = overrides.iterations {
            swarm.iterations = v;
        }
        swarm.tau = tau;
        let scene = Scene {
            name: file.name.unwrap_or_else(|| fallback_name.to_string()),
            manipulators,
            obstacles: file.obstacles,
            dt,
            duration: file.sim.duration,
            tau,
            planner: PlannerConfig {
                swarm,
                ik: file.ik.unwrap_or_default(),
                ordering: file.sim.ordering,
                reciprocity: file.sim.reciprocity,
            },
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be non-negative, got {}", self.duration));
        }
        if !(self.tau >= self.dt && self.tau.is_finite()) {
            return bad(format!("tau ({}) must be at least dt ({})", self.tau, self.dt));
        }
        if self.manipulators.is_empty() {
            return bad("scene has no manipulators".into());
        }
        if let Err(m) = self.planner.swarm.validate() {
            return bad(format!("pso: {m}"));
        }
        if !(self.planner.reciprocity > 0.0 && self.planner.reciprocity <= 1.0) {
            return bad(format!(
                "reciprocity must lie in (0, 1], got {}",
                self.planner.reciprocity
            ));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            o.validate(i)?;
        }
        let spheres = self.spheres_at_start();
        for (i, a) in spheres.iter().enumerate() {
            for b in &spheres[i + 1..] {
                if !a.owner.interacts_with(&b.owner) {
                    continue;
                }
                let distance = (a.center - b.center).norm();
                let radii = a.radius + b.radius;
                if distance <= radii {
                    return Err(SceneError::InitialCollision {
                        a: a.owner.to_string(),
                        b: b.owner.to_string(),
                        distance,
                        radii,
                    });
                }
            }
        }
        Ok(())
    }

    /// Number of ticks the run will record.
    pub fn ticks(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn total_dof(&self) -> usize {
        self.manipulators.iter().map(|m| m.chain.dof()).sum()
    }

    pub fn obstacle_spheres(&self, t: f64) -> Vec<Sphere> {
        self.obstacles
            .iter()
            .enumerate()
            .map(|(id, o)| {
                Sphere::new(
                    o.position(t),
                    o.radius(),
                    o.velocity(t, self.dt),
                    Owner::Obstacle { id },
                )
            })
            .collect()
    }

    fn arm_spheres(&self, configs: &[JointConfig], previous: &[JointConfig]) -> Vec<Sphere> {
        self.manipulators
            .iter()
            .enumerate()
            .flat_map(|(i, m)| {
                decompose_chain(&m.chain, &configs[i], &previous[i], self.dt, i)
                    .expect("configs match chains")
            })
            .collect()
    }

    /// Every sphere at time zero, manipulators first.
    pub fn spheres_at_start(&self) -> Vec<Sphere> {
        let initial: Vec<JointConfig> = self.manipulators.iter().map(|m| m.initial.clone()).collect();
        let mut spheres = self.arm_spheres(&initial, &initial);
        spheres.extend(self.obstacle_spheres(0.0));
        spheres
    }

    /// Settings after overrides, echoed into every output.
    pub fn effective_config(&self) -> serde_json::Value {
        serde_json::json!({
            "scene": self.name,
            "sim": {
                "dt": self.dt,
                "duration": self.duration,
                "tau": self.tau,
                "ordering": self.planner.ordering,
                "reciprocity": self.planner.reciprocity,
            },
            "pso": self.planner.swarm,
            "ik": self.planner.ik,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Record planner wall time. Disable for bit-exact log comparisons.
    pub record_timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record_timing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorInfo {
    pub name: String,
    pub dof: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereInfo {
    pub owner: Owner,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradedTick {
    pub tick: usize,
    pub manipulator: usize,
    pub kind: String,
    pub message: String,
}

/// A tick on which the plain IK solution was predicted to collide and the
/// swarm searched for another one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTick {
    pub tick: usize,
    pub manipulator: usize,
    pub rounds: usize,
    pub ik_calls: usize,
    /// Penalty of the global best after each round.
    pub penalties: Vec<f64>,
    /// Raw constraint-factor sum of the global best after each round.
    pub psi_aggs: Vec<f64>,
}

/// Self-describing first line of a trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub scene: String,
    pub dt: f64,
    pub ticks: usize,
    pub config: serde_json::Value,
    pub manipulators: Vec<ManipulatorInfo>,
    pub spheres: Vec<SphereInfo>,
    /// Joint configurations at time zero.
    pub initial_configs: Vec<Vec<f64>>,
    /// `[x, y, z, vx, vy, vz]` of every sphere at time zero.
    pub initial_spheres: Vec<[f64; 6]>,
    pub columns: Vec<String>,
    #[serde(default)]
    pub degraded: Vec<DegradedTick>,
    #[serde(default)]
    pub searches: Vec<SearchTick>,
}

/// One logged tick, at the end of the step.
#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    pub time: f64,
    pub configs: Vec<Vec<f64>>,
    /// End-effector `[x, y, z, qw, qx, qy, qz]` per manipulator.
    pub end_effectors: Vec<[f64; 7]>,
    /// `[x, y, z, r, vx, vy, vz]` per sphere, in header order.
    pub spheres: Vec<[f64; 7]>,
    /// Smallest surface gap over interacting pairs; `inf` without pairs.
    pub min_clearance: f64,
    pub phi: f64,
    pub psi_agg: f64,
    pub solve_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub records: Vec<TickRecord>,
}

fn columns_for(manipulators: &[ManipulatorInfo], spheres: usize) -> Vec<String> {
    let mut cols = vec!["tick".to_string(), "time".to_string()];
    for (i, m) in manipulators.iter().enumerate() {
        for j in 0..m.dof {
            cols.push(format!("m{i}_q{j}"));
        }
        for c in ["x", "y", "z", "qw", "qx", "qy", "qz"] {
            cols.push(format!("m{i}_ee_{c}"));
        }
    }
    for k in 0..spheres {
        for c in ["x", "y", "z", "r", "vx", "vy", "vz"] {
            cols.push(format!("s{k}_{c}"));
        }
    }
    for c in ["min_clearance", "phi", "psi_agg", "solve_ms"] {
        cols.push(c.to_string());
    }
    cols
}

fn pose_row(pose: &Pose) -> [f64; 7] {
    let t = pose.translation.vector;
    let q = pose.rotation;
    [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
}

fn sphere_row(s: &Sphere) -> [f64; 7] {
    [
        s.center.x, s.center.y, s.center.z, s.radius, s.velocity.x, s.velocity.y, s.velocity.z,
    ]
}

fn discrete_min_clearance(spheres: &[Sphere]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in spheres.iter().enumerate() {
        for b in &spheres[i + 1..] {
            if a.owner.interacts_with(&b.owner) {
                best = best.min((a.center - b.center).norm() - a.radius - b.radius);
            }
        }
    }
    best
}

/// Runs the scene tick by tick. Planner degradations are recorded in the
/// header and never abort the run.
pub fn run(scene: &Scene, options: RunOptions) -> Result<TrajectoryLog, PlanError> {
    let start_spheres = scene.spheres_at_start();
    let manipulators: Vec<ManipulatorInfo> = scene
        .manipulators
        .iter()
        .map(|m| ManipulatorInfo {
            name: m.name.clone(),
            dof: m.chain.dof(),
        })
        .collect();
    let mut header = LogHeader {
        format: LOG_FORMAT.to_string(),
        scene: scene.name.clone(),
        dt: scene.dt,
        ticks: scene.ticks(),
        config: scene.effective_config(),
        columns: columns_for(&manipulators, start_spheres.len()),
        manipulators,
        spheres: start_spheres
            .iter()
            .map(|s| SphereInfo {
                owner: s.owner,
                radius: s.radius,
            })
            .collect(),
        initial_configs: scene.manipulators.iter().map(|m| m.initial.0.clone()).collect(),
        initial_spheres: start_spheres
            .iter()
            .map(|s| [s.center.x, s.center.y, s.center.z, s.velocity.x, s.velocity.y, s.velocity.z])
            .collect(),
        degraded: Vec::new(),
        searches: Vec::new(),
    };

    let mut current: Vec<JointConfig> = scene.manipulators.iter().map(|m| m.initial.clone()).collect();
    let mut previous = current.clone();
    let mut records = Vec::with_capacity(header.ticks);
    for k in 0..header.ticks {
        let t0 = k as f64 * scene.dt;
        let t1 = (k + 1) as f64 * scene.dt;
        let req = PlanRequest {
            arms: scene
                .manipulators
                .iter()
                .enumerate()
                .map(|(i, m)| ArmRequest {
                    chain: &m.chain,
                    current: current[i].clone(),
                    previous: previous[i].clone(),
                    target: m.target(t1),
                })
                .collect(),
            obstacles: scene.obstacle_spheres(t0),
            dt: scene.dt,
            tick: k as u64,
        };
        let clock = Instant::now();
        let plan = generate_ik_solution(&req, &scene.planner)?;
        let solve_ms = if options.record_timing {
            clock.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let next: Vec<JointConfig> = plan.arms.iter().map(|a| a.config.clone()).collect();
        for (i, arm) in plan.arms.iter().enumerate() {
            let d = &arm.diagnostics;
            if d.pso_iterations > 0 {
                header.searches.push(SearchTick {
                    tick: k + 1,
                    manipulator: i,
                    rounds: d.pso_iterations,
                    ik_calls: d.ik_calls,
                    penalties: d.pso_history.iter().map(|r| r.penalty).collect(),
                    psi_aggs: d.pso_history.iter().map(|r| r.psi_agg).collect(),
                });
            }
            if let Some(e) = &arm.degraded {
                header.degraded.push(DegradedTick {
                    tick: k + 1,
                    manipulator: i,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                });
            }
        }
        let mut spheres = scene.arm_spheres(&next, &current);
        spheres.extend(scene.obstacle_spheres(t1));
        records.push(TickRecord {
            tick: k + 1,
            time: t1,
            configs: next.iter().map(|q| q.0.clone()).collect(),
            end_effectors: scene
                .manipulators
                .iter()
                .zip(&next)
                .map(|(m, q)| pose_row(&m.chain.forward_kinematics(q).expect("valid config")))
                .collect(),
            min_clearance: discrete_min_clearance(&spheres),
            spheres: spheres.iter().map(sphere_row).collect(),
            phi: plan.arms.iter().map(|a| a.diagnostics.phi).sum(),
            psi_agg: plan.arms.iter().map(|a| a.diagnostics.psi_agg).sum(),
            solve_ms,
        });
        previous = std::mem::replace(&mut current, next);
    }
    Ok(TrajectoryLog { header, records })
}

impl TrajectoryLog {
    /// JSON header line, CSV column line, one CSV line per tick.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        writeln!(out)?;
        writeln!(out, "{}", self.header.columns.join(","))?;
        let mut line = String::new();
        for r in &self.records {
            line.clear();
            let _ = write!(line, "{},{}", r.tick, r.time);
            for (q, ee) in r.configs.iter().zip(&r.end_effectors) {
                for v in q.iter().chain(ee) {
                    let _ = write!(line, ",{v}");
                }
            }
            for v in r.spheres.iter().flatten() {
                let _ = write!(line, ",{v}");
            }
            let _ = write!(
                line,
                ",{},{},{},{}",
                r.min_clearance, r.phi, r.psi_agg, r.solve_ms
            );
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_string_lossy(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("log is ASCII")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, LogError> {
        let mut lines = input.lines();
        let body_err = |line: usize, message: String| LogError::Body { line, message };
        let header_line = lines
            .next()
            .ok_or_else(|| body_err(1, "empty file".into()))??;
        let header: LogHeader = serde_json::from_str(&header_line)?;
        if header.format != LOG_FORMAT {
            return Err(body_err(1, format!("unknown format `{}`", header.format)));
        }
        let expected = columns_for(&header.manipulators, header.spheres.len());
        if header.columns != expected {
            return Err(body_err(1, "column list does not match the header".into()));
        }
        let column_line = lines
            .next()
            .ok_or_else(|| body_err(2, "missing column line".into()))??;
        if column_line.split(',').ne(header.columns.iter().map(String::as_str)) {
            return Err(body_err(2, "column line does not match the header".into()));
        }
        let mut records = Vec::with_capacity(header.ticks);
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 3;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.columns.len() {
                return Err(body_err(
                    line_no,
                    format!("expected {} fields, found {}", header.columns.len(), fields.len()),
                ));
            }
            let mut values = Vec::with_capacity(fields.len());
            for (f, name) in fields.iter().zip(&header.columns) {
                values.push(
                    f.parse::<f64>()
                        .map_err(|_| body_err(line_no, format!("bad value `{f}` in column {name}")))?,
                );
            }
            let mut it = values.into_iter();
            let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
            let tick = take(1)[0] as usize;
            let time = take(1)[0];
            let mut configs = Vec::new();
            let mut end_effectors = Vec::new();
            for m in &header.manipulators {
                configs.push(take(m.dof));
                let ee = take(7);
                end_effectors.push(std::array::from_fn(|i| ee[i]));
            }
            let spheres = (0..header.spheres.len())
                .map(|_| {
                    let s = take(7);
                    std::array::from_fn(|i| s[i])
                })
                .collect();
            let tail = take(4);
            records.push(TickRecord {
                tick,
                time,
                configs,
                end_effectors,
                spheres,
                min_clearance: tail[0],
                phi: tail[1],
                psi_agg: tail[2],
                solve_ms: tail[3],
            });
        }
        if records.len() != header.ticks {
            return Err(body_err(
                records.len() + 3,
                format!("expected {} records, found {} (truncated?)", header.ticks, records.len()),
            ));
        }
        Ok(TrajectoryLog { header, records })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Spheres overlap at a logged instant.
    Discrete,
    /// Spheres are apart at both ends of a step but touch in between.
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub tick: usize,
    pub time: f64,
    pub a: String,
    pub b: String,
    pub kind: ViolationKind,
    pub clearance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub ticks: usize,
    pub pairs: usize,
    /// Smallest gap over every instant and every step; `None` without pairs.
    pub min_clearance: Option<f64>,
    pub min_clearance_pair: Option<(String, String)>,
    pub violation_count: usize,
    pub first_violation: Option<Violation>,
    /// The first violations found, at most [`MAX_REPORTED_VIOLATIONS`].
    pub violations: Vec<Violation>,
}

pub const MAX_REPORTED_VIOLATIONS: usize = 100;

impl OracleReport {
    pub fn is_clean(&self) -> bool {
        self.violation_count == 0
    }
}

/// Checks every interacting sphere pair at every logged instant and along
/// the straight motion between consecutive instants, starting from the
/// initial state in the header.
pub fn oracle_check(log: &TrajectoryLog) -> OracleReport {
    let info = &log.header.spheres;
    let pairs: Vec<(usize, usize)> = (0..info.len())
        .flat_map(|i| ((i + 1)..info.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| info[i].owner.interacts_with(&info[j].owner))
        .collect();
    let mut report = OracleReport {
        ticks: log.records.len(),
        pairs: pairs.len(),
        min_clearance: None,
        min_clearance_pair: None,
        violation_count: 0,
        first_violation: None,
        violations: Vec::new(),
    };
    let names = |i: usize, j: usize| (info[i].owner.to_string(), info[j].owner.to_string());
    let note = |report: &mut OracleReport, i: usize, j: usize, gap: f64| {
        if report.min_clearance.is_none_or(|m| gap < m) {
            report.min_clearance = Some(gap);
            report.min_clearance_pair = Some(names(i, j));
        }
    };
    let flag = |report: &mut OracleReport, v: Violation| {
        report.violation_count += 1;
        if report.first_violation.is_none() {
            report.first_violation = Some(v.clone());
        }
        if report.violations.len() < MAX_REPORTED_VIOLATIONS {
            report.violations.push(v);
        }
    };

    let mut prev: Vec<Vector3<f64>> = log
        .header
        .initial_spheres
        .iter()
        .map(|s| Vector3::new(s[0], s[1], s[2]))
        .collect();
    let mut prev_time = 0.0;
    for &(i, j) in &pairs {
        let gap = (prev[i] - prev[j]).norm() - info[i].radius - info[j].radius;
        note(&mut report, i, j, gap);
        if gap <= 0.0 {
            let (a, b) = names(i, j);
            flag(&mut report, Violation { tick: 0, time: 0.0, a, b, kind: ViolationKind::Discrete, clearance: gap });
        }
    }
    for rec in &log.records {
        let now: Vec<Vector3<f64>> = rec
            .spheres
            .iter()
            .map(|s| Vector3::new(s[0], s[1], s[2]))
            .collect();
        let span = rec.time - prev_time;
        for &(i, j) in &pairs {
            let reach = info[i].radius + info[j].radius;
            let gap = (now[i] - now[j]).norm() - reach;
            note(&mut report, i, j, gap);
            let swept = if span > 0.0 {
                let rel0 = prev[i] - prev[j];
                let rel1 = now[i] - now[j];
                min_clearance(rel0, (rel1 - rel0) / span, reach, span)
            } else {
                gap
            };
            note(&mut report, i, j, swept);
            let kind = if gap <= 0.0 {
                Some(ViolationKind::Discrete)
            } else {
                (swept <= 0.0).then_some(ViolationKind::Continuous)
            };
            let clearance = swept.min(gap);
            if let Some(kind) = kind {
                let (a, b) = names(i, j);
                flag(&mut report, Violation { tick: rec.tick, time: rec.time, a, b, kind, clearance });
            }
        }
        prev = now;
        prev_time = rec.time;
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub scene: String,
    pub dof: usize,
    pub spheres: usize,
    pub dt: f64,
    pub tau: f64,
    #[serde(rename = "T")]
    pub iterations: usize,
    #[serde(rename = "N")]
    pub particles: usize,
    pub rng_seed: u64,
    pub repetitions: usize,
    /// Planner wall time of every tick of every repetition, in ms.
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "scene,dof,spheres,dt_s,tau_s,T,N,rng_seed,repetitions,samples,median_ms,p95_ms,mean_ms,max_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4}",
            self.scene,
            self.dof,
            self.spheres,
            self.dt,
            self.tau,
            self.iterations,
            self.particles,
            self.rng_seed,
            self.repetitions,
            self.samples_ms.len(),
            self.median_ms,
            self.p95_ms,
            self.mean_ms,
            self.max_ms
        )
    }
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Runs the scene `repetitions` times and summarizes per-tick planner time.
pub fn benchmark(scene: &Scene, repetitions: usize) -> Result<BenchReport, PlanError> {
    if repetitions == 0 {
        return Err(PlanError::InvalidRequest("repetitions must be at least 1".into()));
    }
    let mut samples = Vec::with_capacity(repetitions * scene.ticks());
    for _ in 0..repetitions {
        let log = run(scene, RunOptions::default())?;
        samples.extend(log.records.iter().map(|r| r.solve_ms));
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = if samples.is_empty() {
        f64::NAN
    } else {
        samples.iter().sum::<f64>() / samples.len() as f64
    };
    Ok(BenchReport {
        scene: scene.name.clone(),
        dof: scene.total_dof(),
        spheres: scene.spheres_at_start().len(),
        dt: scene.dt,
        tau: scene.tau,
        iterations: scene.planner.swarm.iterations,
        particles: scene.planner.swarm.particles,
        rng_seed: scene.planner.swarm.rng_seed,
        repetitions,
        median_ms: percentile(&sorted, 50.0),
        p95_ms: percentile(&sorted, 95.0),
        max_ms: sorted.last().copied().unwrap_or(f64::NAN),
        mean_ms: mean,
        samples_ms: samples,
    })
}
