//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvoik::chain::{pose_residual, ChainFile, JointSpec, TipSpec};
use rvoik::ik::{random_config, solve_racing_ik, IkRequest};
use rvoik::pso::{fitness, init_swarm, pso_step, FitnessContext, IkSettings, SwarmConfig, SwarmState};
use rvoik::rvo::{constraint_factor, Owner, Sphere};
use rvoik::sim::{benchmark, oracle_check, run, RunOptions, Scene, TrajectoryLog};
use rvoik::{JointConfig, KinematicChain};

/// Joint-limit and IK-budget tallies gathered while the other criteria run.
#[derive(Default)]
struct Invariants {
    configs: usize,
    out_of_limits: usize,
    searches: usize,
    over_budget: usize,
}

impl Invariants {
    fn config(&mut self, chain: &KinematicChain, q: &JointConfig) {
        self.configs += 1;
        self.out_of_limits += !chain.is_within_limits(q) as usize;
    }

    fn log(&mut self, scene: &Scene, log: &TrajectoryLog) {
        for r in &log.records {
            for (m, q) in scene.manipulators.iter().zip(&r.configs) {
                self.config(&m.chain, &JointConfig::new(q.clone()));
            }
        }
        let budget = 1 + scene.planner.swarm.particles * scene.planner.swarm.iterations + 1;
        for s in &log.header.searches {
            self.searches += 1;
            self.over_budget += (s.ik_calls > budget) as usize;
        }
    }
}

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scene(name: &str) -> Scene {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("fixtures/scenes/{name}.json"));
    Scene::from_file(path).unwrap()
}

fn vec3<R: Rng>(rng: &mut R, s: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

/// Contact within the horizon from the roots of the contact quadratic.
fn collides_within(s: &Sphere, a: &Sphere, tau: f64) -> bool {
    let d = s.center - a.center;
    let v = s.velocity - a.velocity;
    let r = s.radius + a.radius;
    let qa = v.dot(&v);
    let qb = 2.0 * d.dot(&v);
    let qc = d.dot(&d) - r * r;
    if qc <= 0.0 {
        return true;
    }
    if qa == 0.0 {
        return false;
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return false;
    }
    let t1 = (-qb - disc.sqrt()) / (2.0 * qa);
    let t2 = (-qb + disc.sqrt()) / (2.0 * qa);
    t2 >= 0.0 && t1 <= tau
}

fn sign_oracle_agreement() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let cases = 10_000;
    let mut disagreements = 0;
    let mut worst_psi: f64 = 0.0;
    for _ in 0..cases {
        let link = Owner::Link {
            manipulator: 0,
            link: 0,
            part: 0,
        };
        let mut s = Sphere::new(vec3(&mut rng, 2.0), rng.random_range(0.02..0.4), vec3(&mut rng, 1.0), link);
        let a = Sphere::new(
            vec3(&mut rng, 2.0),
            rng.random_range(0.02..0.4),
            vec3(&mut rng, 1.0),
            Owner::Obstacle { id: 0 },
        );
        let tau = rng.random_range(0.1..6.0);
        if rng.random_bool(0.5) {
            // aim roughly at the obstacle so that near misses are common
            let eta = rng.random_range(0.3..2.0) * tau;
            s.velocity = a.velocity + (a.center - s.center) / eta + vec3(&mut rng, 0.3);
        }
        let psi = constraint_factor(&s, &a, tau).psi;
        if (psi <= 0.0) != collides_within(&s, &a, tau) {
            disagreements += 1;
            worst_psi = worst_psi.max(psi.abs());
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let agreement = 1.0 - disagreements as f64 / cases as f64;
    ensure(
        agreement >= 0.999 && worst_psi < 1e-6 && secs < 10.0,
        format!(
            "{cases} cases, agreement {:.3}%, {disagreements} disagreements (max |psi| {worst_psi:.1e}), {secs:.2} s",
            agreement * 100.0
        ),
    )
}

fn desk_scale_safety(inv: &mut Invariants) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in ["crossing_obstacle", "two_arms_shared_space"] {
        let s = scene(name);
        let clock = Instant::now();
        let log = run(&s, RunOptions::default()).map_err(|e| format!("{name}: {e}"))?;
        let secs = clock.elapsed().as_secs_f64();
        let report = oracle_check(&log);
        let clearance = report.min_clearance.unwrap_or(f64::NAN);
        ok &= report.violation_count == 0 && clearance > 0.0 && secs < 60.0;
        inv.log(&s, &log);
        lines.push(format!(
            "{name}: {} ticks, {} penetrations, min clearance {clearance:.4} m, {} degraded, {secs:.1} s",
            log.records.len(),
            report.violation_count,
            log.header.degraded.len()
        ));
    }
    ensure(ok, lines.join("; "))
}

type Mat4 = [[f64; 4]; 4];

fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn translation(t: [f64; 3]) -> Mat4 {
    let mut m = rotation([0.0, 0.0, 1.0], 0.0);
    for i in 0..3 {
        m[i][3] = t[i];
    }
    m
}

fn rotation(axis: [f64; 3], angle: f64) -> Mat4 {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y, 0.0],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x, 0.0],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn rpy(r: [f64; 3]) -> Mat4 {
    let rx = rotation([1.0, 0.0, 0.0], r[0]);
    let ry = rotation([0.0, 1.0, 0.0], r[1]);
    let rz = rotation([0.0, 0.0, 1.0], r[2]);
    matmul(&rz, &matmul(&ry, &rx))
}

fn transform_product(file: &ChainFile, q: &[f64]) -> Mat4 {
    let mut t = translation([0.0; 3]);
    for (joint, angle) in file.joints.iter().zip(q) {
        t = matmul(&t, &translation(joint.offset));
        t = matmul(&t, &rpy(joint.rpy));
        t = matmul(&t, &rotation(joint.axis, *angle));
    }
    if let Some(tip) = &file.tip {
        t = matmul(&t, &translation(tip.offset));
        t = matmul(&t, &rpy(tip.rpy));
    }
    t
}

fn random_chain_file<R: Rng>(rng: &mut R, dof: usize) -> ChainFile {
    let v3 = |rng: &mut R, s: f64| [rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)];
    let joints = (0..dof)
        .map(|_| {
            let axis = loop {
                let v = vec3(rng, 1.0);
                if v.norm() > 0.1 {
                    break v.normalize();
                }
            };
            JointSpec {
                name: None,
                axis: [axis.x, axis.y, axis.z],
                offset: v3(rng, 0.4),
                rpy: v3(rng, PI),
                limit: [-PI, PI],
            }
        })
        .collect();
    ChainFile {
        name: "random".into(),
        joints,
        link_radii: vec![0.05; dof],
        tip: Some(TipSpec {
            offset: v3(rng, 0.3),
            rpy: v3(rng, PI),
        }),
    }
}

fn kinematics_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let h = 1e-6;
    let mut jac_err: f64 = 0.0;
    let mut fk_err: f64 = 0.0;
    for _ in 0..100 {
        let dof = rng.random_range(1..=8);
        let file = random_chain_file(&mut rng, dof);
        let chain = KinematicChain::try_from(file.clone()).unwrap();
        let q = JointConfig::new((0..dof).map(|_| rng.random_range(-PI..PI)).collect());

        let analytic = chain.jacobian(&q).unwrap();
        let mut numeric = DMatrix::zeros(6, dof);
        for i in 0..dof {
            let (mut plus, mut minus) = (q.clone(), q.clone());
            plus.0[i] += h;
            minus.0[i] -= h;
            let fp = chain.forward_kinematics(&plus).unwrap();
            let fm = chain.forward_kinematics(&minus).unwrap();
            let dp = (fp.translation.vector - fm.translation.vector) / (2.0 * h);
            let dw = (fp.rotation * fm.rotation.inverse()).scaled_axis() / (2.0 * h);
            for r in 0..3 {
                numeric[(r, i)] = dp[r];
                numeric[(r + 3, i)] = dw[r];
            }
        }
        jac_err = jac_err.max((analytic - numeric).abs().max());

        let pose = chain.forward_kinematics(&q).unwrap().to_homogeneous();
        let oracle = transform_product(&file, q.as_slice());
        for i in 0..3 {
            for j in 0..4 {
                fk_err = fk_err.max((pose[(i, j)] - oracle[i][j]).abs());
            }
        }
    }
    ensure(
        jac_err < 1e-5 && fk_err < 1e-9,
        format!("100 chains, jacobian max error {jac_err:.2e}, forward kinematics max error {fk_err:.2e}"),
    )
}

fn ik_quality(inv: &mut Invariants) -> Outcome {
    let chain = KinematicChain::baxter_like();
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let targets = 500;
    let mut solved = 0;
    let mut unverified = 0;
    for k in 0..targets {
        let truth = random_config(&chain, &mut rng);
        let seed = random_config(&chain, &mut rng);
        // attempts of at most 100 iterations, restarted from random seeds
        // until either solver has spent 500
        let req = IkRequest::new(chain.forward_kinematics(&truth).unwrap(), seed)
            .with_max_iterations(100)
            .with_restarts(usize::MAX - 1)
            .with_iteration_budget(Some(500))
            .with_rng_seed(k);
        if let Ok(sol) = solve_racing_ik(&chain, &req) {
            solved += 1;
            inv.config(&chain, &sol.config);
            let (p, r) = pose_residual(&req.target, &chain.forward_kinematics(&sol.config).unwrap());
            unverified += (p > 1e-4 || r > 1e-3 || sol.iterations > 100) as usize;
        }
    }
    let rate = solved as f64 / targets as f64;
    ensure(
        rate >= 0.99 && unverified == 0,
        format!(
            "{solved}/{targets} solved ({:.1}%) within 500 iterations per solver, {unverified} failed re-verification",
            rate * 100.0
        ),
    )
}

fn swarm_fingerprint(state: &SwarmState) -> String {
    format!("{:?}", (&state.particles, &state.global_best, &state.history))
}

fn pso_contracts() -> Outcome {
    let chain = KinematicChain::baxter_like();
    let ik = IkSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let mut steps = 0;
    let mut regressions = 0;
    let mut out_of_bounds = 0;
    let mut nondeterministic = 0;
    let limits = chain.limits();
    let within = |state: &SwarmState| {
        state
            .particles
            .iter()
            .all(|p| p.position.iter().zip(&limits).all(|(x, l)| l.contains(*x)))
    };
    while steps < 1000 {
        let current = random_config(&chain, &mut rng);
        let mut goal = current.clone();
        goal.0.iter_mut().for_each(|q| *q += rng.random_range(-0.02..0.02));
        chain.clamp(&mut goal);
        let points = chain.frames(&current).unwrap().link_points();
        let near = points[rng.random_range(1..points.len())];
        let offset = vec3(&mut rng, 1.0).normalize() * rng.random_range(0.15..0.5);
        let others = vec![Sphere::new(
            near + offset,
            0.05,
            -offset * rng.random_range(0.0..0.3),
            Owner::Obstacle { id: 0 },
        )];
        let cfg = SwarmConfig {
            particles: rng.random_range(1..6),
            iterations: 10,
            c1: rng.random_range(0.0..3.0),
            c2: rng.random_range(0.0..3.0),
            rng_seed: rng.random(),
            ..SwarmConfig::default()
        };
        let ctx = FitnessContext {
            chain: &chain,
            manipulator: 0,
            current: &current,
            target: chain.forward_kinematics(&goal).unwrap(),
            ik: &ik,
            others: &others,
            dt: 0.01,
            reciprocity: None,
        };
        let swarm = || {
            let f = |x: &[f64]| fitness(&JointConfig::new(x.to_vec()), &ctx, &cfg);
            let mut state = init_swarm(&chain, &current, &cfg, None, f);
            let mut trace = vec![swarm_fingerprint(&state)];
            let mut local = (0, 0, 0);
            out_of_bounds_check(&within, &state, &mut local.1);
            for _ in 0..cfg.iterations {
                let before = state.global_best_eval.fitness;
                pso_step(&mut state, &cfg, f);
                local.0 += 1;
                local.2 += (state.global_best_eval.fitness > before) as usize;
                out_of_bounds_check(&within, &state, &mut local.1);
                trace.push(swarm_fingerprint(&state));
            }
            (trace, local)
        };
        let (first, (n, oob, worse)) = swarm();
        let (second, _) = swarm();
        steps += n;
        out_of_bounds += oob;
        regressions += worse;
        nondeterministic += (first != second) as usize;
    }
    ensure(
        regressions == 0 && out_of_bounds == 0 && nondeterministic == 0,
        format!(
            "{steps} steps, {regressions} global-best regressions, {out_of_bounds} out-of-bounds swarms, {nondeterministic} non-reproducible runs"
        ),
    )
}

fn out_of_bounds_check(within: &impl Fn(&SwarmState) -> bool, state: &SwarmState, count: &mut usize) {
    *count += !within(state) as usize;
}

fn colliding_seed_trend(inv: &mut Invariants) -> Outcome {
    let s = scene("colliding_seed");
    let log = run(&s, RunOptions::default()).map_err(|e| e.to_string())?;
    inv.log(&s, &log);
    let Some(search) = log.header.searches.first() else {
        return Err("the colliding seed triggered no search".into());
    };
    let p = &search.penalties;
    let psi = &search.psi_aggs;
    let strictly_decreasing = p.windows(2).all(|w| w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0));
    let reaches_zero = p.iter().position(|&v| v == 0.0);
    let rising = psi.windows(2).all(|w| w[1] >= w[0]) && psi.last() > psi.first();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    ensure(
        p[0] > 0.0
            && strictly_decreasing
            && reaches_zero.is_some_and(|k| k < s.planner.swarm.iterations && s.planner.swarm.iterations <= 10)
            && rising,
        format!("T {}, penalties [{}], psi_agg [{}]", s.planner.swarm.iterations, fmt(p), fmt(psi)),
    )
}

fn performance_envelope(inv: &mut Invariants) -> Outcome {
    let mut rows = Vec::new();
    for name in ["bench_1arm_1obstacle", "bench_4arms", "bench_6arms"] {
        let s = scene(name);
        let log = run(&s, RunOptions::default()).map_err(|e| e.to_string())?;
        inv.log(&s, &log);
        let report = benchmark(&s, 5).map_err(|e| e.to_string())?;
        rows.push((report.dof, report.median_ms));
    }
    let (d1, m1) = rows[0];
    let monotone = rows.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1);
    let sub_quadratic = rows[1..]
        .iter()
        .all(|&(d, m)| m / m1 < (d as f64 / d1 as f64).powi(2));
    let (d7, m7) = rows[2];
    ensure(
        m1 <= 50.0 && monotone && sub_quadratic,
        format!(
            "median ms by DOF {}; 7 to {d7} DOF ratio {:.1} (quadratic bound {:.0})",
            rows.iter().map(|(d, m)| format!("{d}: {m:.4}")).collect::<Vec<_>>().join(", "),
            m7 / m1,
            (d7 as f64 / d1 as f64).powi(2)
        ),
    )
}

fn invariants(inv: &Invariants) -> Outcome {
    ensure(
        inv.out_of_limits == 0 && inv.over_budget == 0 && inv.configs > 0 && inv.searches > 0,
        format!(
            "{} configurations ({} outside limits), {} searched ticks ({} over the IK budget)",
            inv.configs, inv.out_of_limits, inv.searches, inv.over_budget
        ),
    )
}

fn main() -> ExitCode {
    let mut inv = Invariants::default();
    let mut failed = 0;
    let mut report = |id: &str, title: &str, outcome: std::thread::Result<Outcome>| {
        let (verdict, detail) = match outcome {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => ("FAIL", d),
            Err(panic) => (
                "FAIL",
                panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            ),
        };
        failed += (verdict == "FAIL") as usize;
        println!("{id} {verdict} {title}: {detail}");
    };
    report("AC1", "constraint sign vs collision oracle", catch_unwind(sign_oracle_agreement));
    report("AC2", "desk-scale safety", catch_unwind(AssertUnwindSafe(|| desk_scale_safety(&mut inv))));
    report("AC3", "kinematics correctness", catch_unwind(kinematics_correctness));
    report("AC4", "IK quality", catch_unwind(AssertUnwindSafe(|| ik_quality(&mut inv))));
    report("AC5", "swarm contracts", catch_unwind(pso_contracts));
    report("AC6", "colliding seed trend", catch_unwind(AssertUnwindSafe(|| colliding_seed_trend(&mut inv))));
    report("AC7", "performance envelope", catch_unwind(AssertUnwindSafe(|| performance_envelope(&mut inv))));
    report("AC8", "joint limits and IK budget", catch_unwind(AssertUnwindSafe(|| invariants(&inv))));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
