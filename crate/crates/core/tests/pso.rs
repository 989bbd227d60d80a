use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvoik::pso::{
    evaluate_config, fitness, init_swarm, init_swarm_in, pso_step, run_swarm, Evaluation,
    FitnessContext, IkSettings, SwarmConfig, SwarmState,
};
use rvoik::rvo::{constraint_factor, sweep_spheres, Owner, Sphere};
use rvoik::{JointConfig, JointLimit, KinematicChain};

fn stub_arm() -> KinematicChain {
    // one joint, one sphere of radius 0.1 centered at (0.05, 0, 0)
    let json = r#"{"name":"stub","joints":[
        {"axis":[0,0,1],"offset":[0,0,0],"limit":[-3,3]}],
        "link_radii":[0.1],"tip":{"offset":[0.1,0,0]}}"#;
    KinematicChain::from_json_str(json).unwrap()
}

fn obstacle(center: [f64; 3], radius: f64) -> Sphere {
    Sphere::new(Vector3::from(center), radius, Vector3::zeros(), Owner::Obstacle { id: 0 })
}

fn rastrigin(x: &[f64]) -> Evaluation {
    let v: f64 = x
        .iter()
        .map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos() + 10.0)
        .sum();
    Evaluation::of_value(v)
}

#[test]
fn safe_fixed_point_scores_zero() {
    let chain = KinematicChain::baxter_like();
    let current = JointConfig::new(vec![0.1, -0.4, 0.2, 1.0, 0.0, 0.7, 0.0]);
    let target = chain.forward_kinematics(&current).unwrap();
    let ik = IkSettings::default();
    let others = [obstacle([3.0, 3.0, 3.0], 0.1)];
    let ctx = FitnessContext {
        chain: &chain,
        manipulator: 0,
        current: &current,
        target,
        ik: &ik,
        others: &others,
        dt: 0.01,
        reciprocity: None,
    };
    let cfg = SwarmConfig::default();
    let eval = fitness(&current, &ctx, &cfg);
    assert_eq!(eval.config.as_ref(), Some(&current));
    assert_eq!(eval.angular_error, 0.0);
    assert_eq!(eval.penalty, 0.0);
    assert_eq!(eval.fitness, 0.0);
    assert!(eval.is_safe());
    // the warm evaluation is reused, so a single particle costs nothing
    let single = SwarmConfig { particles: 1, ..cfg };
    let state = init_swarm(&chain, &current, &single, Some(eval), |_| unreachable!("warm start reused"));
    assert_eq!(state.global_best_eval.fitness, 0.0);
    assert_eq!(state.evaluations, 0);
    assert!(rvoik::pso::should_terminate(&state, &single));
}

#[test]
fn single_violation_penalty_arithmetic() {
    let chain = stub_arm();
    let current = JointConfig::new(vec![0.0]);
    let target = chain.forward_kinematics(&current).unwrap();
    let ik = IkSettings::default();
    // center distance 0.1, combined radius 0.3
    let others = [obstacle([0.15, 0.0, 0.0], 0.2)];
    let ctx = FitnessContext {
        chain: &chain,
        manipulator: 0,
        current: &current,
        target,
        ik: &ik,
        others: &others,
        dt: 0.01,
        reciprocity: None,
    };
    let cfg = SwarmConfig {
        alpha: 1.0,
        beta: 0.0,
        ..SwarmConfig::default()
    };
    let eval = evaluate_config(&current, &ctx, &cfg);
    assert_eq!(eval.pairs, 1);
    assert!((eval.min_psi + 0.2).abs() < 1e-12);
    assert!((eval.fitness - 0.2).abs() < 1e-12);
    assert!((eval.psi_agg + 0.2).abs() < 1e-12);
    assert!(!eval.is_safe());
}

#[test]
fn fitness_weights_combine_penalty_and_joint_distance() {
    let chain = KinematicChain::baxter_like();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ik = IkSettings::default();
    for _ in 0..20 {
        let current = rvoik::ik::random_config(&chain, &mut rng);
        let candidate = rvoik::ik::random_config(&chain, &mut rng);
        let others: Vec<Sphere> = (0..4)
            .map(|i| {
                Sphere::new(
                    Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.3..0.6)),
                    0.08,
                    Vector3::new(rng.random_range(-0.3..0.3), 0.0, 0.0),
                    Owner::Obstacle { id: i },
                )
            })
            .collect();
        let lambda: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..2.0)).collect();
        let cfg = SwarmConfig {
            alpha: 3.0,
            beta: 0.5,
            lambda: lambda.clone(),
            tau: 2.0,
            ..SwarmConfig::default()
        };
        let ctx = FitnessContext {
            chain: &chain,
            manipulator: 0,
            current: &current,
            target: chain.forward_kinematics(&candidate).unwrap(),
            ik: &ik,
            others: &others,
            dt: 0.1,
            reciprocity: None,
        };
        let eval = evaluate_config(&candidate, &ctx, &cfg);
        // every pair scored by brute force, the neighbor filter is conservative
        let own = sweep_spheres(&chain, &current, &candidate, 0.1, 0).unwrap();
        let mut penalty = 0.0;
        for s in &own {
            for o in &others {
                penalty += (-constraint_factor(s, o, 2.0).psi).max(0.0);
            }
        }
        let e: f64 = (0..7)
            .map(|i| lambda[i] * (candidate.0[i] - current.0[i]).abs())
            .sum();
        assert!((eval.penalty - penalty).abs() < 1e-9);
        assert!((eval.angular_error - e).abs() < 1e-12);
        assert!((eval.fitness - (3.0 * penalty + 0.5 * e)).abs() < 1e-9);
    }
}

#[test]
fn ik_failure_is_infinitely_unfit() {
    let chain = KinematicChain::baxter_like();
    let current = chain.mid_config();
    let target = rvoik::chain::pose_from_parts([5.0, 0.0, 0.0], [0.0; 3]);
    let ik = IkSettings::default();
    let ctx = FitnessContext {
        chain: &chain,
        manipulator: 0,
        current: &current,
        target,
        ik: &ik,
        others: &[],
        dt: 0.01,
        reciprocity: None,
    };
    let eval = fitness(&current, &ctx, &SwarmConfig::default());
    assert_eq!(eval.fitness, f64::INFINITY);
    assert!(eval.config.is_none());
    assert!(!eval.is_safe());
}

fn random_box<R: Rng>(rng: &mut R, n: usize) -> Vec<JointLimit> {
    (0..n)
        .map(|_| {
            let lo = rng.random_range(-4.0..0.0);
            JointLimit::new(lo, lo + rng.random_range(0.1..5.0))
        })
        .collect()
}

fn within(state: &SwarmState) -> bool {
    state.particles.iter().all(|p| {
        p.position
            .iter()
            .zip(state.limits())
            .all(|(x, l)| l.contains(*x))
    })
}

#[test]
fn global_best_is_monotone_and_bounds_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut steps = 0;
    while steps < 1000 {
        let n = rng.random_range(1..8);
        let limits = random_box(&mut rng, n);
        let current: Vec<f64> = limits.iter().map(|l| rng.random_range(l.min..=l.max)).collect();
        let cfg = SwarmConfig {
            particles: rng.random_range(1..6),
            iterations: 50,
            c1: rng.random_range(0.0..3.0),
            c2: rng.random_range(0.0..3.0),
            inertia: rng.random_range(0.0..1.2),
            rng_seed: rng.random(),
            ..SwarmConfig::default()
        };
        let mut f = |x: &[f64]| rastrigin(x);
        let mut state = init_swarm_in(&limits, &current, &cfg, None, &mut f);
        assert!(within(&state));
        for _ in 0..50 {
            let before = state.global_best_eval.fitness;
            pso_step(&mut state, &cfg, &mut f);
            steps += 1;
            assert!(state.global_best_eval.fitness <= before);
            assert!(within(&state));
            for p in &state.particles {
                assert!(p.best_fitness >= state.global_best_eval.fitness);
            }
        }
    }
}

#[test]
fn equal_seeds_give_identical_swarms() {
    let limits = vec![JointLimit::new(-2.0, 2.0); 5];
    let cfg = SwarmConfig {
        particles: 4,
        iterations: 30,
        rng_seed: 99,
        ..SwarmConfig::default()
    };
    let run = || {
        let mut f = |x: &[f64]| rastrigin(x);
        let mut state = init_swarm_in(&limits, &[0.5; 5], &cfg, None, &mut f);
        run_swarm(&mut state, &cfg, &mut f);
        format!("{:?}", (state.particles, state.global_best, state.history))
    };
    assert_eq!(run(), run());
    let other = SwarmConfig { rng_seed: 100, ..cfg.clone() };
    let mut f = |x: &[f64]| rastrigin(x);
    let a = init_swarm_in(&limits, &[0.5; 5], &other, None, &mut f);
    let b = init_swarm_in(&limits, &[0.5; 5], &cfg, None, &mut f);
    assert_ne!(a.particles[1].position, b.particles[1].position);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn initial_positions_respect_limits(seed in any::<u64>(), n in 1usize..9, particles in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limits = random_box(&mut rng, n);
        let current: Vec<f64> = limits.iter().map(|l| l.min - 1.0).collect();
        let cfg = SwarmConfig { particles, rng_seed: seed, ..SwarmConfig::default() };
        let state = init_swarm_in(&limits, &current, &cfg, None, &mut |x: &[f64]| rastrigin(x));
        prop_assert!(within(&state));
        prop_assert_eq!(state.particles.len(), particles);
        prop_assert!(state.particles.iter().all(|p| p.velocity.iter().all(|v| *v == 0.0)));
    }
}
