//! Particle swarm over IK seeds.
//!
//! Each particle position is a seed joint vector. Its fitness is obtained by
//! solving IK from that seed, covering the resulting configuration with
//! spheres and scoring how deep their relative velocities sit inside the
//! velocity obstacles of everything around them.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{JointConfig, JointLimit, KinematicChain, Pose};
use crate::error::IkError;
use crate::ik::{solve_racing_ik, IkRequest, RaceMode};
use crate::rvo::{constraint_factor, neighbors, reach_bounds, reciprocal_velocity, sweep_spheres, Sphere};

fn default_c() -> f64 {
    2.0
}
fn default_alpha() -> f64 {
    10.0
}
fn default_one() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    5.0
}
fn default_velocity_clamp() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    /// Number of particles.
    #[serde(rename = "N")]
    pub particles: usize,
    /// Evaluation rounds, the initial one included.
    #[serde(rename = "T")]
    pub iterations: usize,
    #[serde(default = "default_c")]
    pub c1: f64,
    #[serde(default = "default_c")]
    pub c2: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_one")]
    pub beta: f64,
    /// Per-joint weights of the angular distance term; empty means all ones.
    #[serde(default)]
    pub lambda: Vec<f64>,
    /// Velocity-obstacle time window (s). Scene files set it under `sim`.
    #[serde(default = "default_tau", skip_serializing)]
    pub tau: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_one")]
    pub inertia: f64,
    /// Per-joint speed cap as a fraction of the joint range.
    #[serde(default = "default_velocity_clamp")]
    pub velocity_clamp: f64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            particles: 3,
            iterations: 4,
            c1: 2.0,
            c2: 2.0,
            alpha: 10.0,
            beta: 1.0,
            lambda: Vec::new(),
            tau: 5.0,
            rng_seed: 0,
            inertia: 1.0,
            velocity_clamp: 0.25,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.particles == 0 {
            return Err("N must be at least 1".into());
        }
        if self.iterations == 0 {
            return Err("T must be at least 1".into());
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return Err("c1 and c2 must be non-negative".into());
        }
        if !(self.alpha > 0.0) || !(self.beta >= 0.0) {
            return Err("alpha must be positive and beta non-negative".into());
        }
        if self.lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err("lambda weights must be non-negative".into());
        }
        if !(self.tau > 0.0) {
            return Err("tau must be positive".into());
        }
        Ok(())
    }

    pub fn joint_weight(&self, i: usize) -> f64 {
        self.lambda.get(i).copied().unwrap_or(1.0)
    }
}

/// Score of one candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Quantity minimized by the swarm; `+inf` when IK failed.
    pub fitness: f64,
    /// Sum of `max(0, -psi)` over all checked pairs.
    pub penalty: f64,
    /// Raw sum of `psi` over all checked pairs.
    pub psi_agg: f64,
    /// Smallest `psi`; `+inf` when no pair was in range.
    pub min_psi: f64,
    /// Weighted angular distance to the current configuration.
    pub angular_error: f64,
    pub pairs: usize,
    /// IK solution the score belongs to.
    pub config: Option<JointConfig>,
}

impl Evaluation {
    pub fn failed() -> Self {
        Self {
            fitness: f64::INFINITY,
            penalty: f64::INFINITY,
            psi_agg: f64::NAN,
            min_psi: f64::NAN,
            angular_error: f64::INFINITY,
            pairs: 0,
            config: None,
        }
    }

    /// No predicted collision for any pair.
    pub fn is_safe(&self) -> bool {
        self.config.is_some() && self.penalty == 0.0 && !(self.min_psi <= 0.0)
    }

    /// Plain objective value, for swarms over arbitrary functions.
    pub fn of_value(value: f64) -> Self {
        Self {
            fitness: value,
            penalty: 0.0,
            psi_agg: 0.0,
            min_psi: f64::INFINITY,
            angular_error: 0.0,
            pairs: 0,
            config: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub id: usize,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

/// Global best at the end of one evaluation round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub iteration: usize,
    pub fitness: f64,
    pub penalty: f64,
    pub psi_agg: f64,
    pub min_psi: f64,
}

#[derive(Clone, Debug)]
pub struct SwarmState {
    pub particles: Vec<Particle>,
    pub global_best: Vec<f64>,
    pub global_best_eval: Evaluation,
    /// Completed evaluation rounds; 1 after initialization.
    pub iteration: usize,
    pub history: Vec<RoundRecord>,
    /// Evaluations performed so far.
    pub evaluations: usize,
    limits: Vec<JointLimit>,
    rng: ChaCha8Rng,
}

impl SwarmState {
    pub fn limits(&self) -> &[JointLimit] {
        &self.limits
    }

    fn record_round(&mut self) {
        let g = &self.global_best_eval;
        self.history.push(RoundRecord {
            iteration: self.iteration,
            fitness: g.fitness,
            penalty: g.penalty,
            psi_agg: g.psi_agg,
            min_psi: g.min_psi,
        });
    }

    fn offer_global(&mut self, index: usize, eval: &Evaluation) {
        if eval.fitness < self.global_best_eval.fitness {
            self.global_best = self.particles[index].position.clone();
            self.global_best_eval = eval.clone();
        }
    }
}

/// Builds the swarm: particle 0 sits on `current` (warm start), the rest are
/// uniform in the joint limits. `warm` may carry an already computed
/// evaluation of `current`, which is then not re-evaluated.
pub fn init_swarm<F>(
    chain: &KinematicChain,
    current: &JointConfig,
    cfg: &SwarmConfig,
    warm: Option<Evaluation>,
    mut fitness: F,
) -> SwarmState
where
    F: FnMut(&[f64]) -> Evaluation,
{
    init_swarm_in(&chain.limits(), current.as_slice(), cfg, warm, &mut fitness)
}

/// [`init_swarm`] over an explicit box.
pub fn init_swarm_in<F>(
    limits: &[JointLimit],
    current: &[f64],
    cfg: &SwarmConfig,
    warm: Option<Evaluation>,
    fitness: &mut F,
) -> SwarmState
where
    F: FnMut(&[f64]) -> Evaluation,
{
    assert_eq!(limits.len(), current.len(), "dimension mismatch");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = limits.len();
    let mut positions = vec![current.iter().zip(limits).map(|(v, l)| l.clamp(*v)).collect::<Vec<_>>()];
    for _ in 1..cfg.particles {
        positions.push(
            limits
                .iter()
                .map(|l| rng.random_range(l.min..=l.max))
                .collect(),
        );
    }
    let mut evaluations = 0;
    let mut evals = Vec::with_capacity(positions.len());
    for (i, pos) in positions.iter().enumerate() {
        match (i, &warm) {
            (0, Some(w)) => evals.push(w.clone()),
            _ => {
                evals.push(fitness(pos));
                evaluations += 1;
            }
        }
    }
    let particles: Vec<Particle> = positions
        .into_iter()
        .zip(&evals)
        .enumerate()
        .map(|(id, (position, eval))| Particle {
            id,
            velocity: vec![0.0; n],
            best_position: position.clone(),
            best_fitness: eval.fitness,
            position,
        })
        .collect();
    let mut state = SwarmState {
        global_best: particles[0].position.clone(),
        global_best_eval: evals[0].clone(),
        particles,
        iteration: 1,
        history: Vec::new(),
        evaluations,
        limits: limits.to_vec(),
        rng,
    };
    for (i, eval) in evals.iter().enumerate().skip(1) {
        state.offer_global(i, eval);
    }
    state.record_round();
    state
}

/// One velocity/position update of every particle followed by evaluation
/// and best-position bookkeeping in particle order.
pub fn pso_step<F>(state: &mut SwarmState, cfg: &SwarmConfig, mut fitness: F)
where
    F: FnMut(&[f64]) -> Evaluation,
{
    let open01: Open01 = Open01;
    for i in 0..state.particles.len() {
        let r1: f64 = open01.sample(&mut state.rng);
        let r2: f64 = open01.sample(&mut state.rng);
        let g = &state.global_best;
        let p = &mut state.particles[i];
        for j in 0..p.position.len() {
            let limit = state.limits[j];
            let cap = cfg.velocity_clamp * limit.range();
            let x = p.position[j];
            let v = cfg.inertia * p.velocity[j]
                + cfg.c1 * r1 * (p.best_position[j] - x)
                + cfg.c2 * r2 * (g[j] - x);
            let v = v.clamp(-cap, cap);
            p.velocity[j] = v;
            p.position[j] = limit.clamp(x + v);
        }
    }
    for i in 0..state.particles.len() {
        let eval = fitness(&state.particles[i].position);
        state.evaluations += 1;
        let p = &mut state.particles[i];
        if eval.fitness < p.best_fitness {
            p.best_fitness = eval.fitness;
            p.best_position = p.position.clone();
        }
        state.offer_global(i, &eval);
    }
    state.iteration += 1;
    state.record_round();
}

/// Stop once the round budget is spent or the global best is collision-free.
pub fn should_terminate(state: &SwarmState, cfg: &SwarmConfig) -> bool {
    state.iteration >= cfg.iterations || state.global_best_eval.is_safe()
}

/// Runs rounds until [`should_terminate`] holds.
pub fn run_swarm<F>(state: &mut SwarmState, cfg: &SwarmConfig, mut fitness: F)
where
    F: FnMut(&[f64]) -> Evaluation,
{
    while !should_terminate(state, cfg) {
        pso_step(state, cfg, &mut fitness);
    }
}

/// IK settings used for every fitness evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkSettings {
    #[serde(default = "IkSettings::default_position")]
    pub position_tolerance: f64,
    #[serde(default = "IkSettings::default_orientation")]
    pub orientation_tolerance: f64,
    #[serde(default = "IkSettings::default_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub restarts: usize,
    #[serde(default)]
    pub mode: RaceMode,
}

impl IkSettings {
    fn default_position() -> f64 {
        1e-4
    }
    fn default_orientation() -> f64 {
        1e-3
    }
    fn default_iterations() -> usize {
        100
    }

    pub fn request(&self, target: Pose, seed: JointConfig) -> IkRequest {
        IkRequest::new(target, seed)
            .with_tolerances(self.position_tolerance, self.orientation_tolerance)
            .with_max_iterations(self.max_iterations)
            .with_restarts(self.restarts)
            .with_mode(self.mode)
    }
}

impl Default for IkSettings {
    fn default() -> Self {
        Self {
            position_tolerance: Self::default_position(),
            orientation_tolerance: Self::default_orientation(),
            max_iterations: Self::default_iterations(),
            restarts: 0,
            mode: RaceMode::Sequential,
        }
    }
}

/// Everything a fitness evaluation of one manipulator needs to know about
/// the scene at the current tick.
#[derive(Clone, Debug)]
pub struct FitnessContext<'a> {
    pub chain: &'a KinematicChain,
    pub manipulator: usize,
    /// Configuration at the start of the step.
    pub current: &'a JointConfig,
    pub target: Pose,
    pub ik: &'a IkSettings,
    /// Obstacle spheres and other manipulators' spheres at the start of the
    /// step, with their velocities.
    pub others: &'a [Sphere],
    pub dt: f64,
    /// Share of the avoidance effort taken against other manipulators, and
    /// this manipulator's own sphere velocities from the previous step.
    pub reciprocity: Option<(f64, &'a [Sphere])>,
}

/// Scores an already solved configuration.
pub fn evaluate_config(config: &JointConfig, ctx: &FitnessContext<'_>, cfg: &SwarmConfig) -> Evaluation {
    let own = sweep_spheres(ctx.chain, ctx.current, config, ctx.dt, ctx.manipulator)
        .expect("configuration matches chain");
    let angular_error: f64 = config
        .0
        .iter()
        .zip(&ctx.current.0)
        .enumerate()
        .map(|(i, (a, b))| cfg.joint_weight(i) * (a - b).abs())
        .sum();
    let mut penalty = 0.0;
    let mut psi_agg = 0.0;
    let mut min_psi = f64::INFINITY;
    let mut pairs = 0;
    let bounds = reach_bounds(ctx.others);
    for (k, sphere) in own.iter().enumerate() {
        for other in neighbors(ctx.others, sphere, cfg.tau, bounds) {
            let mut subject = *sphere;
            if let (Some((share, previous)), Some(_)) = (ctx.reciprocity, other.owner.manipulator()) {
                if let Some(prev) = previous.get(k) {
                    subject.velocity = reciprocal_velocity(sphere.velocity, prev.velocity, share);
                }
            }
            let psi = constraint_factor(&subject, other, cfg.tau).psi;
            penalty += (-psi).max(0.0);
            psi_agg += psi;
            min_psi = min_psi.min(psi);
            pairs += 1;
        }
    }
    Evaluation {
        fitness: cfg.alpha * penalty + cfg.beta * angular_error,
        penalty,
        psi_agg,
        min_psi,
        angular_error,
        pairs,
        config: Some(config.clone()),
    }
}

/// Solves IK from `seed` and scores the solution. IK failure yields an
/// infinitely unfit evaluation.
pub fn fitness(seed: &JointConfig, ctx: &FitnessContext<'_>, cfg: &SwarmConfig) -> Evaluation {
    match solve_ik_for(seed, ctx) {
        Ok(config) => evaluate_config(&config, ctx, cfg),
        Err(_) => Evaluation::failed(),
    }
}

pub(crate) fn solve_ik_for(seed: &JointConfig, ctx: &FitnessContext<'_>) -> Result<JointConfig, IkError> {
    let req = ctx.ik.request(ctx.target, seed.clone());
    solve_racing_ik(ctx.chain, &req).map(|s| s.config)
}
