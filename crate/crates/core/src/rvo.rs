//! Sphere decomposition of manipulators and the truncated velocity-obstacle
//! constraint factor.
//!
//! For a sphere `s` and an obstacle `a` with combined radius `R`, relative
//! position `dO = O_a - O_s` and window `tau`, the set of relative velocities
//! `v = v_s - v_a` that lead to contact within `tau` is
//! `{ v : exists t in (0, tau], |v - dO/t| <= R/t }`: a cone with apex at the
//! origin and axis `dO`, cut off by the cap ball of radius `R/tau` centered at
//! `dO/tau`. The constraint factor `psi` is the signed distance from `v` to
//! the boundary of that region, negative inside.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::chain::{JointConfig, KinematicChain};
use crate::error::ChainError;

/// Identifies what a sphere belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Owner {
    Link {
        manipulator: usize,
        link: usize,
        part: usize,
    },
    Obstacle {
        id: usize,
    },
}

impl Owner {
    pub fn manipulator(&self) -> Option<usize> {
        match self {
            Owner::Link { manipulator, .. } => Some(*manipulator),
            Owner::Obstacle { .. } => None,
        }
    }

    /// Spheres of the same manipulator overlap by construction and are never
    /// checked against each other; obstacles may pass through each other.
    pub fn interacts_with(&self, other: &Owner) -> bool {
        match (self.manipulator(), other.manipulator()) {
            (Some(a), Some(b)) => a != b,
            (None, None) => false,
            _ => true,
        }
    }
}

impl std::fmt::Display for Owner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Owner::Link {
                manipulator,
                link,
                part,
            } => write!(f, "m{manipulator}.l{link}.{part}"),
            Owner::Obstacle { id } => write!(f, "obstacle{id}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub velocity: Vector3<f64>,
    pub owner: Owner,
}

impl Sphere {
    pub fn new(center: Vector3<f64>, radius: f64, velocity: Vector3<f64>, owner: Owner) -> Self {
        Self {
            center,
            radius,
            velocity,
            owner,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.radius > 0.0
            && self.center.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RvoResult {
    /// Signed distance of the relative velocity to the obstacle boundary;
    /// `psi <= 0` predicts contact within `tau`.
    pub psi: f64,
    /// From the relative velocity to the closest boundary point.
    pub omega: Vector3<f64>,
    /// From the cap center `dO/tau` to the relative velocity.
    pub p: Vector3<f64>,
    pub pair: (Owner, Owner),
    pub tau: f64,
}

/// Spheres needed to cover a link segment.
pub fn link_sphere_count(length: f64, radius: f64) -> usize {
    // slack so that a link exactly as long as its radius gets one sphere
    ((length / radius - 1e-9).ceil() as usize).max(1)
}

/// Covers every movable link with spheres of the link's bounding radius.
/// Centers are placed at configuration `q`; velocities are the finite
/// difference of the same attachment points between `q_prev` and `q`.
pub fn decompose_chain(
    chain: &KinematicChain,
    q: &JointConfig,
    q_prev: &JointConfig,
    dt: f64,
    manipulator: usize,
) -> Result<Vec<Sphere>, ChainError> {
    spheres_between(chain, q_prev, q, dt, manipulator, true)
}

/// Same spheres as [`decompose_chain`], but centered at `from`: the state at
/// the start of a step that moves the chain from `from` to `to` in `dt`.
pub fn sweep_spheres(
    chain: &KinematicChain,
    from: &JointConfig,
    to: &JointConfig,
    dt: f64,
    manipulator: usize,
) -> Result<Vec<Sphere>, ChainError> {
    spheres_between(chain, from, to, dt, manipulator, false)
}

fn spheres_between(
    chain: &KinematicChain,
    from: &JointConfig,
    to: &JointConfig,
    dt: f64,
    manipulator: usize,
    at_end: bool,
) -> Result<Vec<Sphere>, ChainError> {
    assert!(dt > 0.0, "dt must be positive");
    let start = chain.frames(from)?.link_points();
    let end = chain.frames(to)?.link_points();
    let lengths = chain.link_lengths();
    let mut spheres = Vec::new();
    for (link, &radius) in chain.link_radii.iter().enumerate() {
        let (a, b) = (start[link], start[link + 1]);
        let (c, d) = (end[link], end[link + 1]);
        let k = link_sphere_count(lengths[link], radius);
        for part in 0..k {
            let t = (part as f64 + 0.5) / k as f64;
            let p0 = a + (b - a) * t;
            let p1 = c + (d - c) * t;
            spheres.push(Sphere {
                center: if at_end { p1 } else { p0 },
                radius,
                velocity: (p1 - p0) / dt,
                owner: Owner::Link {
                    manipulator,
                    link,
                    part,
                },
            });
        }
    }
    Ok(spheres)
}

/// Euclidean distance between centers.
pub fn sphere_distance(a: &Sphere, b: &Sphere) -> f64 {
    (a.center - b.center).norm()
}

pub fn spheres_collide(a: &Sphere, b: &Sphere) -> bool {
    sphere_distance(a, b) <= a.radius + b.radius
}

/// True when `s`, moving at `v_s - v_a` relative to `a`, touches `a` at some
/// `t` in `[0, tau]`.
pub fn rvo_membership(s: &Sphere, a: &Sphere, tau: f64) -> bool {
    let rel_pos = s.center - a.center;
    let rel_vel = s.velocity - a.velocity;
    let reach = s.radius + a.radius;
    let speed_sq = rel_vel.norm_squared();
    if rel_pos.norm_squared() <= reach * reach {
        return true;
    }
    if speed_sq == 0.0 {
        return false;
    }
    let t = (-rel_pos.dot(&rel_vel) / speed_sq).clamp(0.0, tau);
    (rel_pos + rel_vel * t).norm_squared() <= reach * reach
}

/// Some vector orthogonal to unit `u`.
fn any_orthogonal(u: &Vector3<f64>) -> Vector3<f64> {
    let pick = if u.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    u.cross(&pick).normalize()
}

/// Constraint factor of sphere `s` with respect to obstacle `a`.
pub fn constraint_factor(s: &Sphere, a: &Sphere, tau: f64) -> RvoResult {
    assert!(tau > 0.0, "tau must be positive");
    let rel_pos = a.center - s.center;
    let v = s.velocity - a.velocity;
    let reach = s.radius + a.radius;
    let dist = rel_pos.norm();
    let cap_center = rel_pos / tau;
    let p = v - cap_center;
    let pair = (s.owner, a.owner);

    if dist <= reach {
        // already touching: negative by the penetration depth
        return RvoResult {
            psi: dist - reach,
            omega: Vector3::zeros(),
            p,
            pair,
            tau,
        };
    }
    let cap_radius = reach / tau;

    // Work in the half-plane spanned by the axis `u` and the perpendicular
    // part of `v`; the region is rotationally symmetric about `u`.
    let u = rel_pos / dist;
    let along = v.dot(&u);
    let perp = v - u * along;
    let across = perp.norm();
    let side = if across > 1e-300 {
        perp / across
    } else {
        any_orthogonal(&u)
    };

    let cap_dist = dist / tau;
    let sin_a = reach / dist;
    let cos_a = (1.0 - sin_a * sin_a).max(0.0).sqrt();

    let inside_cap = (along - cap_dist).powi(2) + across * across <= cap_radius * cap_radius;
    let inside_cone = along >= cap_dist * cos_a * cos_a && across * cos_a <= along * sin_a;
    let inside = inside_cap || inside_cone;

    // closest point on the cone's lateral line beyond the tangent point
    let leg_dir = (cos_a, sin_a);
    let s_leg = (along * leg_dir.0 + across * leg_dir.1).max(cap_dist * cos_a);
    let leg = (s_leg * leg_dir.0, s_leg * leg_dir.1);

    // closest point on the cap arc that faces the apex
    let w = (along - cap_dist, across);
    let w_len = (w.0 * w.0 + w.1 * w.1).sqrt();
    let tangent = (cap_dist - cap_radius * sin_a, cap_radius * cos_a);
    let arc = if w_len < 1e-300 {
        (cap_dist - cap_radius, 0.0)
    } else {
        // angle from the cap center; the arc spans [pi/2 + alpha, pi]
        let phi = w.1.atan2(w.0);
        let start = std::f64::consts::FRAC_PI_2 + sin_a.asin();
        if phi >= start {
            (
                cap_dist + cap_radius * w.0 / w_len,
                cap_radius * w.1 / w_len,
            )
        } else {
            tangent
        }
    };

    let d_leg = (leg.0 - along).hypot(leg.1 - across);
    let d_arc = (arc.0 - along).hypot(arc.1 - across);
    let closest = if d_leg <= d_arc { leg } else { arc };
    let omega = u * (closest.0 - along) + side * (closest.1 - across);
    let gap = d_leg.min(d_arc);
    let psi = if p.norm() == 0.0 {
        -cap_radius
    } else if inside {
        -gap
    } else {
        gap
    };
    RvoResult {
        psi,
        omega,
        p,
        pair,
        tau,
    }
}

/// Largest radius and largest speed among `spheres`.
pub fn reach_bounds(spheres: &[Sphere]) -> (f64, f64) {
    spheres.iter().fold((0.0, 0.0), |(r, v), s| {
        (f64::max(r, s.radius), f64::max(v, s.velocity.norm()))
    })
}

/// Spheres that could reach `subject` within `tau`, given the
/// [`reach_bounds`] of any superset of `spheres`. Spheres of the subject's
/// own manipulator are skipped.
pub fn neighbors<'a>(
    spheres: &'a [Sphere],
    subject: &'a Sphere,
    tau: f64,
    (max_radius, max_speed): (f64, f64),
) -> impl Iterator<Item = &'a Sphere> + 'a {
    let region = subject.radius + max_radius + (subject.velocity.norm() + max_speed) * tau;
    spheres
        .iter()
        .filter(move |s| subject.owner.interacts_with(&s.owner) && sphere_distance(subject, s) <= region)
}

/// Keeps the spheres that could reach `subject` within `tau` under constant
/// velocities. Spheres of the subject's own manipulator are dropped.
pub fn neighbor_filter(spheres: &[Sphere], subject: &Sphere, tau: f64) -> Vec<Sphere> {
    let candidates: Vec<Sphere> = spheres
        .iter()
        .filter(|s| subject.owner.interacts_with(&s.owner))
        .copied()
        .collect();
    let bounds = reach_bounds(&candidates);
    neighbors(&candidates, subject, tau, bounds).copied().collect()
}

/// Velocity this sphere must be evaluated with when it only takes `share` of
/// the avoidance effort against another planning agent.
pub fn reciprocal_velocity(candidate: Vector3<f64>, previous: Vector3<f64>, share: f64) -> Vector3<f64> {
    previous + (candidate - previous) / share
}

/// Earliest `t` in `[0, horizon]` at which two spheres moving at constant
/// velocity touch, from the roots of `|dp + t dv|^2 = R^2`.
pub fn first_contact(
    rel_pos: Vector3<f64>,
    rel_vel: Vector3<f64>,
    reach: f64,
    horizon: f64,
) -> Option<f64> {
    let c = rel_pos.norm_squared() - reach * reach;
    if c <= 0.0 {
        return Some(0.0);
    }
    let a = rel_vel.norm_squared();
    let b = rel_pos.dot(&rel_vel);
    if a == 0.0 || b >= 0.0 {
        return None;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    // numerically stable smaller root of a t^2 + 2 b t + c
    let t = c / (-b + disc.sqrt());
    (t <= horizon).then_some(t)
}

/// Smallest gap `|dp + t dv| - R` over `t` in `[0, horizon]`.
pub fn min_clearance(rel_pos: Vector3<f64>, rel_vel: Vector3<f64>, reach: f64, horizon: f64) -> f64 {
    let a = rel_vel.norm_squared();
    let t = if a == 0.0 {
        0.0
    } else {
        (-rel_pos.dot(&rel_vel) / a).clamp(0.0, horizon)
    };
    (rel_pos + rel_vel * t).norm() - reach
}
