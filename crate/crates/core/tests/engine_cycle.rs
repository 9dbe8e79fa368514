use nalgebra::{DMatrix, DVector};
use otmatch::assignment::{centralized_selection, AgentOrder};
use otmatch::control::{AgentModel, LtiModel, Unicycle};
use otmatch::decentral::DecentralOptions;
use otmatch::engine::{run_simulation, surrogate_cost, EngineConfig, Mode, Simulation};
use otmatch::measures::{make_uniform_measure, w2_exact, DiscreteMeasure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| DVector::from_fn(2, |_, _| rng.random_range(lo..hi)))
        .collect()
}

fn planar_lti(rng: &mut ChaCha8Rng, h: usize) -> LtiModel {
    loop {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let radius = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let a = if radius > 0.0 {
            a * (rng.random_range(0.6..1.05) / radius)
        } else {
            a
        };
        let m = rng.random_range(1..=2);
        let b = DMatrix::from_fn(2, m, |_, _| rng.random_range(-1.0..1.0));
        if let Ok(model) = LtiModel::new(a, b, h) {
            if model.gramian().is_ok() {
                return model;
            }
        }
    }
}

fn centralized(h: usize, cycles: usize) -> EngineConfig {
    EngineConfig {
        mode: Mode::Centralized,
        horizon: h,
        cycles,
        ..EngineConfig::default()
    }
}

#[test]
fn single_agent_lands_on_the_target_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let targets = make_uniform_measure(points(&mut rng, 7, 0.0, 10.0)).unwrap();
    let model = planar_lti(&mut rng, 6);
    let sim = run_simulation(
        AgentModel::Lti(model),
        targets.clone(),
        vec![DVector::zeros(2)],
        centralized(6, 1),
    )
    .unwrap();
    let x = sim.positions()[0].clone();
    let mean = targets.points().iter().fold(DVector::zeros(2), |acc, y| acc + y) / 7.0;
    assert!((&x - &mean).norm() <= 1e-8 * (1.0 + mean.norm()));
    let one_agent: f64 = targets.points().iter().map(|y| (&x - y).norm_squared() / 7.0).sum();
    let c = &sim.record().cycles[0];
    assert!((c.w2_sq_end - one_agent).abs() <= 1e-9);
    assert!(c.psi_end <= c.psi_start);
}

#[test]
fn centralized_lti_descends_and_bounds_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for instance in 0..50 {
        let m = rng.random_range(2..=8);
        let n = rng.random_range(m..=25);
        let h = rng.random_range(2..=10);
        let targets = make_uniform_measure(points(&mut rng, n, 0.0, 50.0)).unwrap();
        let initial = points(&mut rng, m, -20.0, 20.0);
        let model = AgentModel::Lti(planar_lti(&mut rng, h));
        let order = if instance % 2 == 0 {
            AgentOrder::Ascending
        } else {
            AgentOrder::Shuffled { seed: instance }
        };
        let config = EngineConfig {
            order,
            ..centralized(h, 4)
        };
        let mut sim = Simulation::new(model, targets.clone(), initial, config).unwrap();
        for _ in 0..4 {
            let start = sim.positions();
            let c = sim.step_cycle().unwrap();
            assert!(c.descent_ok && c.bound_ok, "instance {instance}: {c:?}");
            assert!(c.psi_end <= c.psi_start + 1e-9);
            assert!(c.w2_sq_start <= c.psi_start + 1e-9 && c.w2_sq_end <= c.psi_end + 1e-9);
            // Strict decrease as soon as one agent is away from its barycenter.
            let plan = sim.state().plan.as_ref().unwrap();
            if start.iter().zip(&plan.barycenters).any(|(x, y)| (x - y).norm() > 1e-6) {
                assert!(c.psi_end < c.psi_start, "instance {instance}: no strict decrease");
            }
        }
    }
}

#[test]
fn surrogate_splits_into_barycentric_and_spread_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let m = rng.random_range(1..=6);
        let n = rng.random_range(m..=20);
        let targets = make_uniform_measure(points(&mut rng, n, 0.0, 10.0)).unwrap();
        let positions = points(&mut rng, m, -5.0, 15.0);
        let order: Vec<usize> = (0..m).collect();
        let plan = centralized_selection(&positions, &targets, &order, 0).unwrap();
        let x = points(&mut rng, m, -5.0, 15.0);
        let psi = surrogate_cost(&plan, &x, &targets);
        let mut split = 0.0;
        for (i, local) in plan.plans.iter().enumerate() {
            let y = &plan.barycenters[i];
            split += plan.masses[i] * (&x[i] - y).norm_squared();
            split += local
                .pairs
                .iter()
                .map(|&(j, w)| w * (y - targets.point(j)).norm_squared())
                .sum::<f64>();
        }
        assert!((psi - split).abs() <= 1e-9 * (1.0 + psi));
        // The plan is a coupling, so it never undercuts the exact cost.
        let mu = make_uniform_measure(x.clone()).unwrap();
        assert!(w2_exact(&mu, &targets).unwrap().0 <= psi + 1e-9);
    }
}

fn unicycle_run(seed: u64, gamma: f64, cycles: usize) -> Simulation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: DiscreteMeasure = make_uniform_measure(points(&mut rng, 60, 20.0, 60.0)).unwrap();
    let initial: Vec<DVector<f64>> = (0..12)
        .map(|_| {
            DVector::from_vec(vec![
                rng.random_range(0.0..8.0),
                rng.random_range(0.0..8.0),
                rng.random_range(-3.0..3.0),
            ])
        })
        .collect();
    let model = AgentModel::Unicycle(Unicycle::new(0.1, 1.0, DMatrix::identity(2, 2) * 1e-2).unwrap());
    let config = EngineConfig {
        mode: Mode::Decentralized,
        horizon: 30,
        cycles,
        comm_range: 10.0,
        decentral: DecentralOptions {
            gamma,
            ..DecentralOptions::default()
        },
        seed,
        ..EngineConfig::default()
    };
    run_simulation(model, targets, initial, config).unwrap()
}

#[test]
fn nonlinear_descent_follows_terminal_error_decrease() {
    for seed in 0..3 {
        let sim = unicycle_run(seed, 0.7, 5);
        for c in &sim.record().cycles {
            if c.errors_nonincreasing {
                assert!(c.descent_ok, "seed {seed}: {c:?}");
            }
        }
        assert!(sim.record().final_w2() < sim.record().initial_w2);
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let a = unicycle_run(7, 0.7, 4);
    let b = unicycle_run(7, 0.7, 4);
    assert_eq!(a.record(), b.record());
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.record().write_csv(&mut ca).unwrap();
    b.record().write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    let (mut ta, mut tb) = (Vec::new(), Vec::new());
    a.write_trajectories(&mut ta).unwrap();
    b.write_trajectories(&mut tb).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn per_step_trace_ends_at_the_boundary_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let targets = make_uniform_measure(points(&mut rng, 10, 0.0, 10.0)).unwrap();
    let model = AgentModel::Lti(planar_lti(&mut rng, 5));
    let config = EngineConfig {
        w2_every_step: true,
        ..centralized(5, 2)
    };
    let sim = run_simulation(model, targets, points(&mut rng, 3, 0.0, 10.0), config).unwrap();
    let trace = &sim.record().w2_trace;
    assert_eq!(
        trace.iter().map(|t| t.0).collect::<Vec<_>>(),
        (0..=10).collect::<Vec<_>>()
    );
    assert_eq!(trace[0].1, sim.record().initial_w2);
    assert_eq!(trace[5].1, sim.record().cycles[0].w2);
    assert_eq!(trace[10].1, sim.record().final_w2());
}
