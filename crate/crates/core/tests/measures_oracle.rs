use nalgebra::DVector;
use otmatch::measures::{make_uniform_measure, w2_distance, w2_exact, DiscreteMeasure};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-scale..scale))))
        .collect()
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let drift: f64 = 1.0 - w.iter().sum::<f64>();
    w[0] += drift;
    w
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> f64 {
    let n = xs.len();
    permutations(n)
        .iter()
        .map(|p| (0..n).map(|i| (&xs[i] - &ys[p[i]]).norm_squared()).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn matches_permutation_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..200 {
        let n = 2 + case % 5;
        let xs = random_points(&mut rng, n, 2, 10.0);
        let ys = random_points(&mut rng, n, 2, 10.0);
        let mu = make_uniform_measure(xs.clone()).unwrap();
        let nu = make_uniform_measure(ys.clone()).unwrap();
        let (cost, plan) = w2_exact(&mu, &nu).unwrap();
        let oracle = brute_force(&xs, &ys);
        assert!((cost - oracle).abs() <= 1e-9, "case {case}: {cost} vs {oracle}");
        plan.validate(mu.weights(), nu.weights(), 1e-8).unwrap();
    }
}

/// On the line the monotone (quantile) coupling is optimal for convex costs.
fn quantile_cost(xs: &[(f64, f64)], ys: &[(f64, f64)]) -> f64 {
    let mut a: Vec<_> = xs.to_vec();
    let mut b: Vec<_> = ys.to_vec();
    a.sort_by(|p, q| p.0.total_cmp(&q.0));
    b.sort_by(|p, q| p.0.total_cmp(&q.0));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut cost = 0.0;
    loop {
        let m = ra.min(rb);
        cost += m * (a[i].0 - b[j].0).powi(2);
        ra -= m;
        rb -= m;
        if ra <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra += a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb += b[j].1;
        }
    }
    cost
}

#[test]
fn matches_quantile_coupling_in_one_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let (m, n) = (1 + case % 9, 1 + (case * 7) % 13);
        let xs = random_points(&mut rng, m, 1, 5.0);
        let ys = random_points(&mut rng, n, 1, 5.0);
        let wa = random_weights(&mut rng, m);
        let wb = random_weights(&mut rng, n);
        let mu = DiscreteMeasure::new(xs.clone(), wa.clone()).unwrap();
        let nu = DiscreteMeasure::new(ys.clone(), wb.clone()).unwrap();
        let (cost, plan) = w2_exact(&mu, &nu).unwrap();
        let a: Vec<_> = xs.iter().map(|p| p[0]).zip(wa.iter().copied()).collect();
        let b: Vec<_> = ys.iter().map(|p| p[0]).zip(wb.iter().copied()).collect();
        let oracle = quantile_cost(&a, &b);
        assert!(
            (cost - oracle).abs() <= 1e-9 * (1.0 + oracle),
            "case {case}: {cost} vs {oracle}"
        );
        plan.validate(&wa, &wb, 1e-8).unwrap();
    }
}

#[test]
fn atoms_give_euclidean_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let a = random_points(&mut rng, 1, 3, 100.0);
        let b = random_points(&mut rng, 1, 3, 100.0);
        let d = (&a[0] - &b[0]).norm();
        let w = w2_distance(&make_uniform_measure(a).unwrap(), &make_uniform_measure(b).unwrap()).unwrap();
        assert!((w - d).abs() <= 1e-12 * (1.0 + d));
    }
}

#[test]
fn feasible_at_simulation_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mu = make_uniform_measure(random_points(&mut rng, 100, 2, 50.0)).unwrap();
    let nu = make_uniform_measure(random_points(&mut rng, 1538, 2, 50.0)).unwrap();
    let (cost, plan) = w2_exact(&mu, &nu).unwrap();
    plan.validate(mu.weights(), nu.weights(), 1e-8).unwrap();
    assert!((plan.total_mass() - 1.0).abs() <= 1e-9);
    assert!((plan.cost(mu.points(), nu.points()) - cost).abs() <= 1e-9 * cost);
    // Every basic solution has at most M + N − 1 positive entries.
    assert!(plan.entries.len() < 100 + 1538);
}

#[test]
fn repeated_solves_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mu = make_uniform_measure(random_points(&mut rng, 30, 2, 50.0)).unwrap();
    let nu = make_uniform_measure(random_points(&mut rng, 200, 2, 50.0)).unwrap();
    let a = w2_exact(&mu, &nu).unwrap();
    let b = w2_exact(&mu, &nu).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

fn small_measure() -> impl Strategy<Value = DiscreteMeasure> {
    (1usize..6).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 2), n),
            prop::collection::vec(0.01f64..1.0, n),
        )
            .prop_map(|(pts, raw)| {
                let total: f64 = raw.iter().sum();
                let mut w: Vec<f64> = raw.iter().map(|r| r / total).collect();
                let drift = 1.0 - w.iter().sum::<f64>();
                w[0] += drift;
                DiscreteMeasure::new(pts.into_iter().map(DVector::from_vec).collect(), w).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn symmetric(mu in small_measure(), nu in small_measure()) {
        let a = w2_distance(&mu, &nu).unwrap();
        let b = w2_distance(&nu, &mu).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn triangle_inequality(a in small_measure(), b in small_measure(), c in small_measure()) {
        let ab = w2_distance(&a, &b).unwrap();
        let bc = w2_distance(&b, &c).unwrap();
        let ac = w2_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-8);
    }

    #[test]
    fn plans_are_feasible(mu in small_measure(), nu in small_measure()) {
        let (cost, plan) = w2_exact(&mu, &nu).unwrap();
        prop_assert!(plan.validate(mu.weights(), nu.weights(), 1e-8).is_ok());
        prop_assert!(plan.entries.iter().all(|e| e.2 >= 0.0));
        prop_assert!(cost >= 0.0);
    }

    #[test]
    fn self_distance_is_zero(mu in small_measure()) {
        prop_assert!(w2_exact(&mu, &mu).unwrap().0.abs() <= 1e-9);
    }
}
