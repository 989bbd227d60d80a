//! Inverse kinematics: a pseudoinverse Newton iteration, a seed-proximal SQP
//! and a combinator that races the two.

use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{
    jacobian_from_frames, pose_error, pose_residual, pseudoinverse, JointConfig, JointLimit,
    KinematicChain, Pose,
};
use crate::error::IkError;

/// Largest per-joint change applied in one iteration (rad).
pub const MAX_STEP: f64 = 0.5;
/// Residual improvement below which an iteration counts as stalled.
pub const STALL_EPS: f64 = 1e-12;
/// Consecutive stalled iterations before giving up.
pub const STALL_WINDOW: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverTag {
    Jacobian,
    Sqp,
}

/// How `solve_racing_ik` schedules its two solvers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceMode {
    /// Jacobian first, then SQP, each with half the time budget.
    #[default]
    Sequential,
    /// Both solvers on their own thread; first success cancels the other.
    Threaded,
}

#[derive(Clone, Debug)]
pub struct IkRequest {
    pub target: Pose,
    pub seed: JointConfig,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    pub max_iterations: usize,
    /// Wall-clock budget; `None` means iterations are the only limit.
    pub time_budget: Option<Duration>,
    /// Extra attempts from uniform random seeds after both solvers fail.
    pub restarts: usize,
    /// Iterations each solver may spend over all attempts of a racing
    /// solve. `None` gives every attempt the full `max_iterations`.
    pub iteration_budget: Option<usize>,
    pub rng_seed: u64,
    pub mode: RaceMode,
}

impl IkRequest {
    pub fn new(target: Pose, seed: JointConfig) -> Self {
        Self {
            target,
            seed,
            position_tolerance: 1e-4,
            orientation_tolerance: 1e-3,
            max_iterations: 500,
            time_budget: None,
            restarts: 3,
            iteration_budget: None,
            rng_seed: 0,
            mode: RaceMode::Sequential,
        }
    }

    pub fn with_tolerances(mut self, position: f64, orientation: f64) -> Self {
        self.position_tolerance = position;
        self.orientation_tolerance = orientation;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_restarts(mut self, n: usize) -> Self {
        self.restarts = n;
        self
    }

    pub fn with_iteration_budget(mut self, budget: Option<usize>) -> Self {
        self.iteration_budget = budget;
        self
    }

    pub fn with_rng_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: RaceMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_time_budget(mut self, budget: Option<Duration>) -> Self {
        self.time_budget = budget;
        self
    }

    fn validate(&self, chain: &KinematicChain) -> Result<(), IkError> {
        if !(self.position_tolerance > 0.0 && self.orientation_tolerance > 0.0) {
            return Err(IkError::InvalidRequest(
                "tolerances must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(IkError::InvalidRequest(
                "max_iterations must be at least 1".into(),
            ));
        }
        if self.seed.len() != chain.dof() {
            return Err(IkError::InvalidRequest(format!(
                "seed has {} values, chain has {} joints",
                self.seed.len(),
                chain.dof()
            )));
        }
        if self.seed.0.iter().any(|v| !v.is_finite()) {
            return Err(IkError::InvalidRequest("seed is not finite".into()));
        }
        Ok(())
    }

    fn within(&self, residual: (f64, f64)) -> bool {
        residual.0 <= self.position_tolerance && residual.1 <= self.orientation_tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkSolution {
    pub config: JointConfig,
    pub position_error: f64,
    pub orientation_error: f64,
    pub iterations: usize,
    pub solver: SolverTag,
}

/// Stop conditions shared by both solvers.
struct Budget<'a> {
    deadline: Option<Instant>,
    cancel: Option<&'a AtomicBool>,
}

impl Budget<'_> {
    fn exhausted(&self) -> bool {
        self.cancel.is_some_and(|c| c.load(Ordering::Relaxed))
            || self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

fn residual_of(chain: &KinematicChain, target: &Pose, q: &JointConfig) -> (f64, f64) {
    let pose = chain.forward_kinematics(q).expect("length checked");
    pose_residual(target, &pose)
}

fn finish(
    chain: &KinematicChain,
    req: &IkRequest,
    config: JointConfig,
    iterations: usize,
    solver: SolverTag,
) -> IkSolution {
    let (position_error, orientation_error) = residual_of(chain, &req.target, &config);
    IkSolution {
        config,
        position_error,
        orientation_error,
        iterations,
        solver,
    }
}

fn out_of_reach(chain: &KinematicChain, req: &IkRequest) -> Option<f64> {
    let dist = (req.target.translation.vector - chain.shoulder()).norm();
    let excess = dist - chain.reach();
    (excess > req.position_tolerance).then_some(excess)
}

fn clamped_seed(chain: &KinematicChain, req: &IkRequest) -> JointConfig {
    let mut q = req.seed.clone();
    chain.clamp(&mut q);
    q
}

fn cap_step(step: &mut DVector<f64>) {
    let peak = step.amax();
    if peak > MAX_STEP {
        *step *= MAX_STEP / peak;
    }
}

/// Tracks the best residual seen and counts iterations without progress.
struct StallMonitor {
    best: f64,
    stalled: usize,
}

impl StallMonitor {
    fn new() -> Self {
        Self {
            best: f64::INFINITY,
            stalled: 0,
        }
    }

    /// Returns true once the residual has not improved for `STALL_WINDOW`
    /// consecutive observations.
    fn observe(&mut self, residual: f64) -> bool {
        if self.best - residual < STALL_EPS {
            self.stalled += 1;
        } else {
            self.stalled = 0;
        }
        self.best = self.best.min(residual);
        self.stalled >= STALL_WINDOW
    }
}

fn norm6(e: &[f64; 6]) -> f64 {
    e.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Newton iteration `q <- clamp(q + J^+ err)` from the request seed.
pub fn solve_jacobian_ik(chain: &KinematicChain, req: &IkRequest) -> Result<IkSolution, IkError> {
    let budget = Budget {
        deadline: req.time_budget.map(|b| Instant::now() + b),
        cancel: None,
    };
    jacobian_ik(chain, req, &budget)
}

fn jacobian_ik(
    chain: &KinematicChain,
    req: &IkRequest,
    budget: &Budget<'_>,
) -> Result<IkSolution, IkError> {
    req.validate(chain)?;
    let mut q = clamped_seed(chain, req);
    if let Some(excess) = out_of_reach(chain, req) {
        return Err(IkError::UnreachableTarget {
            iterations: 0,
            residual: excess,
        });
    }
    let mut monitor = StallMonitor::new();
    let mut last = (f64::INFINITY, f64::INFINITY);
    for it in 0..=req.max_iterations {
        let frames = chain.frames(&q).expect("length checked");
        let residual = pose_residual(&req.target, &frames.end_effector);
        last = residual;
        if req.within(residual) {
            return Ok(finish(chain, req, q, it, SolverTag::Jacobian));
        }
        if it == req.max_iterations || budget.exhausted() {
            break;
        }
        let err = pose_error(&req.target, &frames.end_effector);
        if monitor.observe(norm6(&err)) {
            return Err(IkError::UnreachableTarget {
                iterations: it,
                residual: monitor.best,
            });
        }
        let jac = jacobian_from_frames(chain, &frames);
        let mut step = pseudoinverse(&jac) * DVector::from_row_slice(&err);
        cap_step(&mut step);
        for (i, v) in q.0.iter_mut().enumerate() {
            *v += step[i];
        }
        chain.clamp(&mut q);
    }
    Err(IkError::NoConvergence {
        iterations: req.max_iterations,
        position_error: last.0,
        orientation_error: last.1,
    })
}

/// Solution of `min 0.5 |y|^2  s.t.  A y = r,  lower <= y <= upper` by a
/// primal active-set loop over the bound constraints. When the equality is
/// unreachable inside the box the least-squares compromise is returned.
struct BoxQp {
    y: DVector<f64>,
    multipliers: DVector<f64>,
}

fn solve_box_qp(
    a: &DMatrix<f64>,
    r: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> BoxQp {
    let n = a.ncols();
    // 0 = free, -1 = fixed at lower, +1 = fixed at upper
    let mut fixed = vec![0i8; n];
    let mut y = DVector::zeros(n);
    let mut multipliers = DVector::zeros(a.nrows());
    for _ in 0..(4 * n + 8) {
        let free: Vec<usize> = (0..n).filter(|&i| fixed[i] == 0).collect();
        for i in 0..n {
            y[i] = match fixed[i] {
                -1 => lower[i],
                1 => upper[i],
                _ => 0.0,
            };
        }
        let rhs = r - a * &y;
        if !free.is_empty() {
            let a_free = a.select_columns(&free);
            let y_free = pseudoinverse(&a_free) * &rhs;
            // worst bound violation among the free variables
            let mut worst: Option<(usize, i8, f64)> = None;
            for (k, &i) in free.iter().enumerate() {
                let v = y_free[k];
                let (side, amount) = if v < lower[i] {
                    (-1, lower[i] - v)
                } else if v > upper[i] {
                    (1, v - upper[i])
                } else {
                    continue;
                };
                if worst.is_none_or(|w| amount > w.2) {
                    worst = Some((i, side, amount));
                }
            }
            if let Some((i, side, _)) = worst {
                fixed[i] = side;
                continue;
            }
            for (k, &i) in free.iter().enumerate() {
                y[i] = y_free[k];
            }
            // y_F + A_F^T mu = 0
            multipliers = -(pseudoinverse(&a_free.transpose()) * y_free);
        } else {
            multipliers = DVector::zeros(a.nrows());
        }
        let grad = &y + a.transpose() * &multipliers;
        // release the fixed variable whose bound multiplier has the wrong sign
        let mut release: Option<(usize, f64)> = None;
        for i in 0..n {
            let wrong = match fixed[i] {
                -1 => -grad[i],
                1 => grad[i],
                _ => continue,
            };
            if wrong > 1e-12 && release.is_none_or(|w| wrong > w.1) {
                release = Some((i, wrong));
            }
        }
        match release {
            Some((i, _)) => fixed[i] = 0,
            None => break,
        }
    }
    BoxQp { y, multipliers }
}

/// Minimizer of `0.5 y^T H y - g^T y` over `lower <= y <= upper` for a
/// symmetric positive definite `H`, by a primal active-set method started
/// from `y = 0`, which must lie in the box.
fn solve_bounded_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> DVector<f64> {
    let n = g.len();
    let mut y = DVector::zeros(n);
    let mut fixed = vec![false; n];
    for _ in 0..(8 * n + 8) {
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        let mut target = y.clone();
        if !free.is_empty() {
            let h_free = h.select_rows(&free).select_columns(&free);
            let mut rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
            for (k, &i) in free.iter().enumerate() {
                for j in (0..n).filter(|&j| fixed[j]) {
                    rhs[k] -= h[(i, j)] * y[j];
                }
            }
            let Some(chol) = h_free.cholesky() else {
                break;
            };
            let sol = chol.solve(&rhs);
            for (k, &i) in free.iter().enumerate() {
                target[i] = sol[k];
            }
        }
        // walk toward the free minimizer and stop at the first bound hit
        let mut t = 1.0;
        let mut blocking = None;
        for &i in &free {
            let d = target[i] - y[i];
            let room = if d > 0.0 {
                upper[i] - y[i]
            } else if d < 0.0 {
                lower[i] - y[i]
            } else {
                continue;
            };
            let ti = (room / d).max(0.0);
            if ti < t {
                t = ti;
                blocking = Some(i);
            }
        }
        for &i in &free {
            y[i] += t * (target[i] - y[i]);
        }
        if let Some(i) = blocking {
            y[i] = if target[i] > y[i] { upper[i] } else { lower[i] };
            fixed[i] = true;
            continue;
        }
        // release the bound whose multiplier has the wrong sign
        let grad = h * &y - g;
        let release = (0..n)
            .filter(|&i| fixed[i])
            .map(|i| (i, if y[i] >= upper[i] { grad[i] } else { -grad[i] }))
            .filter(|&(_, wrong)| wrong > 1e-14)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match release {
            Some((i, _)) => fixed[i] = false,
            None => break,
        }
    }
    y
}

fn l1(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Fraction of the tolerance tube used when sliding back toward the seed.
const SLIDE_MARGIN: f64 = 0.5;
const SQP_STATIONARY: f64 = 1e-10;
/// Damping beyond which no descent direction is left to find.
const MAX_DAMPING: f64 = 1e8;

/// Finds the joint vector closest to the seed whose end-effector pose lies
/// within the request tolerances and whose angles respect the joint limits.
pub fn solve_sqp_ik(chain: &KinematicChain, req: &IkRequest) -> Result<IkSolution, IkError> {
    let budget = Budget {
        deadline: req.time_budget.map(|b| Instant::now() + b),
        cancel: None,
    };
    sqp_ik(chain, req, &budget)
}

fn sqp_ik(
    chain: &KinematicChain,
    req: &IkRequest,
    budget: &Budget<'_>,
) -> Result<IkSolution, IkError> {
    req.validate(chain)?;
    let seed = clamped_seed(chain, req);
    if req.within(residual_of(chain, &req.target, &seed)) {
        return Ok(finish(chain, req, seed, 0, SolverTag::Sqp));
    }
    if let Some(excess) = out_of_reach(chain, req) {
        return Err(IkError::Infeasible {
            iterations: 0,
            residual: excess,
        });
    }
    let n = chain.dof();
    let limits = chain.limits();
    let seed_v = DVector::from_column_slice(seed.as_slice());
    let lower = DVector::from_iterator(n, limits.iter().zip(&seed.0).map(|(l, s)| l.min - s));
    let upper = DVector::from_iterator(n, limits.iter().zip(&seed.0).map(|(l, s)| l.max - s));

    let error_at = |q: &DVector<f64>| -> DVector<f64> {
        let pose = chain
            .forward_kinematics(&JointConfig(q.as_slice().to_vec()))
            .expect("length checked");
        DVector::from_row_slice(&pose_error(&req.target, &pose))
    };
    let mut penalty = 10.0_f64;
    let merit = |q: &DVector<f64>, e: &DVector<f64>, penalty: f64| -> f64 {
        0.5 * (q - &seed_v).norm_squared() + penalty * l1(e)
    };

    let mut q = seed_v.clone();
    let mut iterations = 0;

    // restoration: bound-constrained Levenberg-Marquardt descent on the pose
    // error until the tolerances hold
    let mut monitor = StallMonitor::new();
    let mut damping = 1e-2;
    loop {
        let frames = chain
            .frames(&JointConfig(q.as_slice().to_vec()))
            .expect("length checked");
        let residual = pose_residual(&req.target, &frames.end_effector);
        if req.within(residual) {
            break;
        }
        let e = DVector::from_row_slice(&pose_error(&req.target, &frames.end_effector));
        let e_norm = e.norm();
        let jac = jacobian_from_frames(chain, &frames);
        let hessian = jac.tr_mul(&jac);
        let gradient = jac.tr_mul(&e);
        let lo = DVector::from_iterator(n, limits.iter().zip(q.iter()).map(|(l, v)| l.min - v));
        let hi = DVector::from_iterator(n, limits.iter().zip(q.iter()).map(|(l, v)| l.max - v));
        loop {
            if iterations == req.max_iterations || budget.exhausted() {
                return Err(IkError::NoConvergence {
                    iterations,
                    position_error: residual.0,
                    orientation_error: residual.1,
                });
            }
            iterations += 1;
            let damped = &hessian + DMatrix::identity(n, n) * damping;
            let mut step = solve_bounded_qp(&damped, &gradient, &lo, &hi);
            cap_step(&mut step);
            let mut next = &q + &step;
            for i in 0..n {
                next[i] = limits[i].clamp(next[i]);
            }
            let trial = error_at(&next).norm();
            if trial < e_norm {
                if monitor.observe(trial) {
                    return Err(IkError::Infeasible {
                        iterations,
                        residual: monitor.best,
                    });
                }
                q = next;
                damping = (damping / 3.0).max(1e-6);
                break;
            }
            damping *= 10.0;
            if damping > MAX_DAMPING {
                return Err(IkError::Infeasible {
                    iterations,
                    residual: e_norm,
                });
            }
        }
    }

    // proximal phase: move toward the seed while keeping the linearized
    // tolerance constraints, remembering the closest feasible iterate
    let mut best = q.clone();
    let mut best_distance = (&q - &seed_v).norm_squared();
    let mut idle = 0;
    while iterations < req.max_iterations && !budget.exhausted() {
        iterations += 1;
        let frames = chain
            .frames(&JointConfig(q.as_slice().to_vec()))
            .expect("length checked");
        let residual = pose_residual(&req.target, &frames.end_effector);
        let distance = (&q - &seed_v).norm_squared();
        if req.within(residual) && distance < best_distance - STALL_EPS {
            best = q.clone();
            best_distance = distance;
            idle = 0;
        } else {
            idle += 1;
            if idle >= STALL_WINDOW {
                break;
            }
        }
        let e = DVector::from_row_slice(&pose_error(&req.target, &frames.end_effector));
        let jac = jacobian_from_frames(chain, &frames);

        // QP in y = q_next - seed: linearized constraint J (q_next - q) = e
        let rhs = &e + &jac * (&q - &seed_v);
        let qp = solve_box_qp(&jac, &rhs, &lower, &upper);
        let mut step = &seed_v + &qp.y - &q;
        cap_step(&mut step);
        if step.amax() < SQP_STATIONARY {
            break;
        }

        penalty = penalty.max(1.5 * qp.multipliers.amax() + 1e-3);
        let predicted = e.clone() - &jac * &step;
        let slope = (&q - &seed_v).dot(&step) - penalty * (l1(&e) - l1(&predicted));
        let phi0 = merit(&q, &e, penalty);
        let mut alpha = 1.0;
        let mut next = &q + &step;
        loop {
            let e_next = error_at(&next);
            let phi = merit(&next, &e_next, penalty);
            let accept = if slope < 0.0 {
                phi <= phi0 + 1e-4 * alpha * slope
            } else {
                phi < phi0
            };
            if accept || alpha < 1e-3 {
                break;
            }
            alpha *= 0.5;
            next = &q + &step * alpha;
        }
        for i in 0..n {
            next[i] = limits[i].clamp(next[i]);
        }
        q = next;
    }
    let config = JointConfig(q.as_slice().to_vec());
    let config = if req.within(residual_of(chain, &req.target, &config))
        && (&q - &seed_v).norm_squared() < best_distance
    {
        config
    } else {
        JointConfig(best.as_slice().to_vec())
    };
    let config = slide_toward_seed(chain, req, &config, &seed, &limits);
    Ok(finish(chain, req, config, iterations, SolverTag::Sqp))
}

/// The tolerance constraints are inequalities: move from the converged point
/// toward the seed until the residual reaches a fraction of the tolerance.
fn slide_toward_seed(
    chain: &KinematicChain,
    req: &IkRequest,
    solution: &JointConfig,
    seed: &JointConfig,
    limits: &[JointLimit],
) -> JointConfig {
    let point = |t: f64| {
        JointConfig(
            solution
                .0
                .iter()
                .zip(&seed.0)
                .zip(limits)
                .map(|((a, s), l)| l.clamp(a + t * (s - a)))
                .collect(),
        )
    };
    let inside = |q: &JointConfig| {
        let (p, o) = residual_of(chain, &req.target, q);
        p <= SLIDE_MARGIN * req.position_tolerance && o <= SLIDE_MARGIN * req.orientation_tolerance
    };
    if !inside(solution) {
        return solution.clone();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if inside(&point(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    point(lo)
}

/// Uniform random configuration inside the joint limits.
pub fn random_config<R: Rng>(chain: &KinematicChain, rng: &mut R) -> JointConfig {
    JointConfig(
        chain
            .joints
            .iter()
            .map(|j| rng.random_range(j.limit.min..=j.limit.max))
            .collect(),
    )
}

/// Runs the Jacobian and SQP solvers against each other; the first success
/// wins. Fails only when every attempt of both solvers fails.
pub fn solve_racing_ik(chain: &KinematicChain, req: &IkRequest) -> Result<IkSolution, IkError> {
    req.validate(chain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.rng_seed);
    let mut attempt = req.clone();
    let mut last_err = None;
    // iterations spent so far by the jacobian and the sqp solver
    let mut spent = (0, 0);
    for round in 0..=req.restarts {
        if round > 0 {
            attempt.seed = random_config(chain, &mut rng);
        }
        if let Some(budget) = req.iteration_budget {
            let left = budget.saturating_sub(spent.0.max(spent.1));
            if left == 0 {
                break;
            }
            attempt.max_iterations = req.max_iterations.min(left);
        }
        let result = match req.mode {
            RaceMode::Sequential => race_sequential(chain, &attempt),
            RaceMode::Threaded => race_threaded(chain, &attempt),
        };
        match result {
            Ok(sol) => return Ok(sol),
            Err(e) => {
                // unreachable targets stay unreachable from any seed
                let stop = matches!(&e, IkError::BothFailed { jacobian, .. }
                    if matches!(**jacobian, IkError::UnreachableTarget { iterations: 0, .. }));
                if let IkError::BothFailed { jacobian, sqp } = &e {
                    spent.0 += jacobian.iterations();
                    spent.1 += sqp.iterations();
                }
                last_err = Some(e);
                if stop {
                    break;
                }
            }
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn race_sequential(chain: &KinematicChain, req: &IkRequest) -> Result<IkSolution, IkError> {
    let half = req.time_budget.map(|b| b / 2);
    let budget = || Budget {
        deadline: half.map(|b| Instant::now() + b),
        cancel: None,
    };
    let jac_err = match jacobian_ik(chain, req, &budget()) {
        Ok(sol) => return Ok(sol),
        Err(e) => e,
    };
    match sqp_ik(chain, req, &budget()) {
        Ok(sol) => Ok(sol),
        Err(sqp_err) => Err(IkError::BothFailed {
            jacobian: Box::new(jac_err),
            sqp: Box::new(sqp_err),
        }),
    }
}

const NO_WINNER: u8 = 0;

fn race_threaded(chain: &KinematicChain, req: &IkRequest) -> Result<IkSolution, IkError> {
    let cancel = AtomicBool::new(false);
    let winner = AtomicU8::new(NO_WINNER);
    let deadline = req.time_budget.map(|b| Instant::now() + b);
    let run = |tag: SolverTag| {
        let budget = Budget {
            deadline,
            cancel: Some(&cancel),
        };
        let out = match tag {
            SolverTag::Jacobian => jacobian_ik(chain, req, &budget),
            SolverTag::Sqp => sqp_ik(chain, req, &budget),
        };
        if out.is_ok() {
            let id = tag as u8 + 1;
            let _ = winner.compare_exchange(NO_WINNER, id, Ordering::AcqRel, Ordering::Acquire);
            cancel.store(true, Ordering::Release);
        }
        out
    };
    let (jac, sqp) = std::thread::scope(|s| {
        let handle = s.spawn(|| run(SolverTag::Sqp));
        let jac = run(SolverTag::Jacobian);
        (jac, handle.join().expect("sqp worker panicked"))
    });
    let first = winner.load(Ordering::Acquire);
    match (jac, sqp) {
        (Ok(a), Ok(b)) => Ok(if first == SolverTag::Sqp as u8 + 1 { b } else { a }),
        (Ok(a), Err(_)) => Ok(a),
        (Err(_), Ok(b)) => Ok(b),
        (Err(a), Err(b)) => Err(IkError::BothFailed {
            jacobian: Box::new(a),
            sqp: Box::new(b),
        }),
    }
}
