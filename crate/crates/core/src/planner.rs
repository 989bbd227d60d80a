//! One planning tick for every manipulator in a scene.
//!
//! Each manipulator first takes the plain IK solution seeded from its
//! current configuration. Only when that solution is predicted to collide
//! does the particle swarm search for a better seed. Manipulators are
//! planned one after another in declared order by default, each seeing the
//! motion already chosen for the ones before it.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::chain::{pose_residual, JointConfig, KinematicChain, Pose};
use crate::error::{IkError, PlanError};
use crate::pso::{
    evaluate_config, fitness, init_swarm, run_swarm, solve_ik_for, Evaluation, FitnessContext,
    IkSettings, RoundRecord, SwarmConfig,
};
use crate::rvo::{decompose_chain, sweep_spheres, Sphere};

/// How manipulators see each other within one tick.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// Plan in declared order; later manipulators see the motion chosen for
    /// earlier ones.
    #[default]
    Sequential,
    /// Everyone plans against the previous tick's motion and takes only a
    /// share of the avoidance against other manipulators.
    Simultaneous,
}

fn default_reciprocity() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    #[serde(default)]
    pub swarm: SwarmConfig,
    #[serde(default)]
    pub ik: IkSettings,
    #[serde(default)]
    pub ordering: Ordering,
    /// Share of the avoidance effort a manipulator takes against another
    /// planning manipulator. Only used with [`Ordering::Simultaneous`].
    #[serde(default = "default_reciprocity")]
    pub reciprocity: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            swarm: SwarmConfig::default(),
            ik: IkSettings::default(),
            ordering: Ordering::default(),
            reciprocity: default_reciprocity(),
        }
    }
}

/// One manipulator's part of a planning request.
#[derive(Clone, Debug)]
pub struct ArmRequest<'a> {
    pub chain: &'a KinematicChain,
    pub current: JointConfig,
    /// Configuration one tick before `current`; equal to it at rest.
    pub previous: JointConfig,
    pub target: Pose,
}

#[derive(Clone, Debug)]
pub struct PlanRequest<'a> {
    pub arms: Vec<ArmRequest<'a>>,
    /// Obstacle spheres at the start of the step, with their velocities.
    pub obstacles: Vec<Sphere>,
    pub dt: f64,
    /// Tick index, mixed into the swarm seed so that ticks draw different
    /// particles while staying reproducible.
    pub tick: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmDiagnostics {
    /// Fitness of the emitted configuration.
    pub phi: f64,
    pub penalty: f64,
    pub psi_agg: f64,
    /// Smallest constraint factor; `None` when no pair was in range.
    pub min_psi: Option<f64>,
    pub pairs: usize,
    /// Swarm rounds run, the initial one included; 0 when the plain IK
    /// solution was already safe.
    pub pso_iterations: usize,
    pub ik_calls: usize,
    pub position_error: f64,
    pub orientation_error: f64,
    pub solve_ms: f64,
    pub pso_history: Vec<RoundRecord>,
    /// Least-penalty configuration found when the result is degraded.
    pub best_effort: Option<JointConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmPlan {
    /// Configuration to apply; within joint limits.
    pub config: JointConfig,
    /// Why the previous configuration is being held, if it is.
    pub degraded: Option<PlanError>,
    pub diagnostics: ArmDiagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub arms: Vec<ArmPlan>,
    pub solve_ms: f64,
}

impl PlanResult {
    pub fn is_degraded(&self) -> bool {
        self.arms.iter().any(|a| a.degraded.is_some())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn validate(req: &PlanRequest<'_>, cfg: &PlannerConfig) -> Result<(), PlanError> {
    let invalid = |m: String| Err(PlanError::InvalidRequest(m));
    if !(req.dt > 0.0) {
        return invalid(format!("dt must be positive, got {}", req.dt));
    }
    if let Err(m) = cfg.swarm.validate() {
        return invalid(m);
    }
    if !(cfg.reciprocity > 0.0 && cfg.reciprocity <= 1.0) {
        return invalid(format!("reciprocity must lie in (0, 1], got {}", cfg.reciprocity));
    }
    for (i, arm) in req.arms.iter().enumerate() {
        for q in [&arm.current, &arm.previous] {
            if q.len() != arm.chain.dof() {
                return invalid(format!(
                    "manipulator {i}: config has {} values, chain has {} joints",
                    q.len(),
                    arm.chain.dof()
                ));
            }
        }
    }
    if let Some(o) = req.obstacles.iter().find(|o| !o.is_valid()) {
        return invalid(format!("obstacle {} is not a valid sphere", o.owner));
    }
    Ok(())
}

/// Plans one tick. Per-manipulator failures do not abort the tick: the
/// affected manipulator holds its configuration and is flagged degraded.
pub fn generate_ik_solution(
    req: &PlanRequest<'_>,
    cfg: &PlannerConfig,
) -> Result<PlanResult, PlanError> {
    validate(req, cfg)?;
    let start = Instant::now();
    // spheres of every manipulator continuing last tick's motion
    let coasting: Vec<Vec<Sphere>> = req
        .arms
        .iter()
        .enumerate()
        .map(|(i, a)| decompose_chain(a.chain, &a.current, &a.previous, req.dt, i))
        .collect::<Result<_, _>>()
        .map_err(|e| PlanError::InvalidRequest(e.to_string()))?;
    let mut planned: Vec<Vec<Sphere>> = Vec::with_capacity(req.arms.len());
    let mut arms = Vec::with_capacity(req.arms.len());
    for (i, arm) in req.arms.iter().enumerate() {
        let mut others = req.obstacles.clone();
        for (j, spheres) in coasting.iter().enumerate() {
            if j == i {
                continue;
            }
            let seen = match cfg.ordering {
                Ordering::Sequential if j < i => &planned[j],
                _ => spheres,
            };
            others.extend_from_slice(seen);
        }
        let reciprocity = match cfg.ordering {
            Ordering::Simultaneous => Some((cfg.reciprocity, coasting[i].as_slice())),
            Ordering::Sequential => None,
        };
        let plan = plan_arm(arm, i, &others, reciprocity, req, cfg);
        planned.push(
            sweep_spheres(arm.chain, &arm.current, &plan.config, req.dt, i)
                .expect("planned config matches chain"),
        );
        arms.push(plan);
    }
    Ok(PlanResult {
        arms,
        solve_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn plan_arm(
    arm: &ArmRequest<'_>,
    index: usize,
    others: &[Sphere],
    reciprocity: Option<(f64, &[Sphere])>,
    req: &PlanRequest<'_>,
    cfg: &PlannerConfig,
) -> ArmPlan {
    let start = Instant::now();
    let ctx = FitnessContext {
        chain: arm.chain,
        manipulator: index,
        current: &arm.current,
        target: arm.target,
        ik: &cfg.ik,
        others,
        dt: req.dt,
        reciprocity,
    };
    let swarm = SwarmConfig {
        rng_seed: cfg.swarm.rng_seed ^ splitmix64(req.tick.wrapping_mul(1 << 16) ^ index as u64),
        ..cfg.swarm.clone()
    };

    let mut ik_calls = 1;
    let (initial, initial_error) = match solve_ik_for(&arm.current, &ctx) {
        Ok(config) => (evaluate_config(&config, &ctx, &swarm), None),
        Err(e) => (Evaluation::failed(), Some(e)),
    };
    let (chosen, degraded, history, pso_iterations) = if initial.is_safe() {
        (initial, None, Vec::new(), 0)
    } else {
        let mut f = |x: &[f64]| {
            ik_calls += 1;
            fitness(&JointConfig(x.to_vec()), &ctx, &swarm)
        };
        let mut state = init_swarm(arm.chain, &arm.current, &swarm, Some(initial), &mut f);
        run_swarm(&mut state, &swarm, &mut f);
        let best = state.global_best_eval;
        let degraded = if best.is_safe() {
            None
        } else if best.config.is_none() {
            Some(PlanError::IkFailure(initial_error.unwrap_or(
                IkError::InvalidRequest("no particle produced an IK solution".into()),
            )))
        } else {
            Some(PlanError::NoSafeSolution {
                penalty: best.penalty,
            })
        };
        (best, degraded, state.history, state.iteration)
    };

    let (config, emitted, best_effort) = match degraded {
        None => {
            let config = chosen.config.clone().expect("safe evaluation has a config");
            (config, chosen, None)
        }
        Some(_) => {
            let held = evaluate_config(&arm.current, &ctx, &swarm);
            (arm.current.clone(), held, chosen.config)
        }
    };
    let pose = arm
        .chain
        .forward_kinematics(&config)
        .expect("config matches chain");
    let (position_error, orientation_error) = pose_residual(&arm.target, &pose);
    ArmPlan {
        diagnostics: ArmDiagnostics {
            phi: emitted.fitness,
            penalty: emitted.penalty,
            psi_agg: emitted.psi_agg,
            min_psi: (emitted.pairs > 0).then_some(emitted.min_psi),
            pairs: emitted.pairs,
            pso_iterations,
            ik_calls,
            position_error,
            orientation_error,
            solve_ms: start.elapsed().as_secs_f64() * 1e3,
            pso_history: history,
            best_effort,
        },
        config,
        degraded,
    }
}
