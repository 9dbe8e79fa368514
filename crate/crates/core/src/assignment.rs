//! Sample selection: greedy local transport against residual capacities,
//! sequential residual updates, and barycenter extraction.

use std::io::Write;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, TransportPlan};
use crate::numeric::{compensated_sum, sq_dist, CompensatedSum};

/// Residuals in `[−SNAP_TOL, 0)` are rounding noise and snap to zero.
pub const SNAP_TOL: f64 = 1e-12;
/// Unallocated mass below this is treated as fully allocated.
pub const SHORTFALL_TOL: f64 = 1e-12;

/// Remaining assignable mass per target sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCapacities {
    beta: Vec<f64>,
}

impl ResidualCapacities {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidMeasure(
                "residual capacities must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { beta })
    }

    pub fn from_measure(targets: &DiscreteMeasure) -> Self {
        Self {
            beta: targets.weights().to_vec(),
        }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            beta: vec![1.0 / n as f64; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.beta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.beta.iter().copied())
    }
}

/// One agent's allocation: `(sample index, mass)` pairs in selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPlan {
    pub agent: usize,
    pub pairs: Vec<(usize, f64)>,
}

impl LocalPlan {
    pub fn mass(&self) -> f64 {
        compensated_sum(self.pairs.iter().map(|p| p.1))
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `Σ_j π̃_j ‖x − y_j‖²`.
    pub fn cost(&self, x: &DVector<f64>, targets: &DiscreteMeasure) -> f64 {
        compensated_sum(self.pairs.iter().map(|&(j, m)| m * sq_dist(x, targets.point(j))))
    }
}

/// Sample indices ordered by `(distance to x, index)`.
pub fn nearest_order(x: &DVector<f64>, targets: &DiscreteMeasure) -> Vec<usize> {
    let d: Vec<f64> = targets.points().iter().map(|y| sq_dist(x, y)).collect();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    order
}

/// Greedy allocation that stops when capacity runs out. Returns the plan and
/// the unallocated remainder.
pub fn greedy_local_assign_partial(
    agent: usize,
    x: &DVector<f64>,
    targets: &DiscreteMeasure,
    residual: &ResidualCapacities,
    mass: f64,
) -> Result<(LocalPlan, f64)> {
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::InvalidMeasure(format!(
            "agent mass must be positive, got {mass}"
        )));
    }
    if residual.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} residual entries for {} samples",
            residual.len(),
            targets.len()
        )));
    }
    let mut pairs = Vec::new();
    let mut allocated = CompensatedSum::new();
    for j in nearest_order(x, targets) {
        let remaining = mass - allocated.value();
        if remaining <= 0.0 {
            break;
        }
        let cap = residual.beta[j];
        if cap <= 0.0 {
            continue;
        }
        let take = cap.min(remaining);
        pairs.push((j, take));
        allocated.add(take);
    }
    let remainder = (mass - allocated.value()).max(0.0);
    Ok((LocalPlan { agent, pairs }, remainder))
}

/// Nearest-first allocation of `mass` against `residual`.
pub fn greedy_local_assign(
    agent: usize,
    x: &DVector<f64>,
    targets: &DiscreteMeasure,
    residual: &ResidualCapacities,
    mass: f64,
) -> Result<LocalPlan> {
    let (plan, remainder) = greedy_local_assign_partial(agent, x, targets, residual, mass)?;
    if remainder > SHORTFALL_TOL {
        return Err(Error::CapacityShortfall { remainder });
    }
    Ok(plan)
}

/// Subtracts the plan's allocations from the residual capacities.
pub fn apply_residual_update(residual: &ResidualCapacities, plan: &LocalPlan) -> Result<ResidualCapacities> {
    let mut beta = residual.beta.clone();
    for &(j, m) in &plan.pairs {
        let cap = *beta.get(j).ok_or_else(|| {
            Error::DimensionMismatch(format!("sample {j} outside {} residual entries", residual.len()))
        })?;
        let next = cap - m;
        if next < -SNAP_TOL {
            return Err(Error::OverAllocation {
                sample: j,
                allocated: m,
                residual: cap,
            });
        }
        beta[j] = next.max(0.0);
    }
    Ok(ResidualCapacities { beta })
}

/// Transport-weighted mean of the allocated samples and the allocated mass.
pub fn barycenter(plan: &LocalPlan, targets: &DiscreteMeasure) -> Result<(DVector<f64>, f64)> {
    if plan.pairs.is_empty() {
        return Err(Error::EmptyPlan);
    }
    let omega = plan.mass();
    let dim = targets.dim();
    let y = DVector::from_fn(dim, |k, _| {
        compensated_sum(plan.pairs.iter().map(|&(j, m)| m * targets.point(j)[k])) / omega
    });
    Ok((y, omega))
}

/// Selection results for every agent in one cycle, indexed by agent id.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclePlan {
    pub cycle: usize,
    pub plans: Vec<LocalPlan>,
    pub barycenters: Vec<DVector<f64>>,
    pub masses: Vec<f64>,
}

impl CyclePlan {
    /// Builds a plan and computes each agent's barycenter and mass.
    pub fn from_local_plans(cycle: usize, plans: Vec<LocalPlan>, targets: &DiscreteMeasure) -> Result<Self> {
        let mut barycenters = Vec::with_capacity(plans.len());
        let mut masses = Vec::with_capacity(plans.len());
        for (i, p) in plans.iter().enumerate() {
            debug_assert_eq!(p.agent, i);
            let (y, w) = barycenter(p, targets)?;
            barycenters.push(y);
            masses.push(w);
        }
        Ok(Self {
            cycle,
            plans,
            barycenters,
            masses,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.plans.len()
    }

    /// Checks stored barycenters and masses against the local plans.
    pub fn verify(&self, targets: &DiscreteMeasure) -> Result<()> {
        for (i, p) in self.plans.iter().enumerate() {
            let (y, w) = barycenter(p, targets)?;
            let dy = (&y - &self.barycenters[i]).norm();
            let dw = (w - self.masses[i]).abs();
            if dy > 1e-12 * (1.0 + y.norm()) || dw > 1e-12 {
                return Err(Error::InvariantViolation {
                    cycle: self.cycle,
                    detail: format!("agent {i}: stored barycenter or mass out of date"),
                });
            }
        }
        Ok(())
    }

    /// Total allocation per target sample.
    pub fn sample_loads(&self, n_samples: usize) -> Vec<f64> {
        let mut acc = vec![CompensatedSum::new(); n_samples];
        for p in &self.plans {
            for &(j, m) in &p.pairs {
                acc[j].add(m);
            }
        }
        acc.iter().map(|a| a.value()).collect()
    }

    /// Stacks the local plans into an agent-by-sample coupling.
    pub fn to_transport_plan(&self, n_samples: usize) -> TransportPlan {
        let mut entries: Vec<_> = self
            .plans
            .iter()
            .flat_map(|p| p.pairs.iter().map(move |&(j, m)| (p.agent, j, m)))
            .collect();
        entries.sort_by_key(|e| (e.0, e.1));
        TransportPlan {
            entries,
            n_rows: self.plans.len(),
            n_cols: n_samples,
        }
    }

    /// `Σ_i Σ_j π̃_ij ‖x_i − y_j‖²`.
    pub fn cost(&self, positions: &[DVector<f64>], targets: &DiscreteMeasure) -> f64 {
        compensated_sum(self.plans.iter().map(|p| p.cost(&positions[p.agent], targets)))
    }

    /// Writes `cycle agent j mass` rows, then `agent y* ω` rows.
    pub fn write_debug<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# cycle agent sample mass")?;
        for p in &self.plans {
            for &(j, m) in &p.pairs {
                writeln!(w, "{} {} {} {}", self.cycle, p.agent, j, m)?;
            }
        }
        writeln!(w, "# agent barycenter mass")?;
        for (i, (y, m)) in self.barycenters.iter().zip(&self.masses).enumerate() {
            write!(w, "{i}")?;
            for c in y.iter() {
                write!(w, " {c}")?;
            }
            writeln!(w, " {m}")?;
        }
        Ok(())
    }
}

/// Order in which agents select during the centralized phase.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentOrder {
    Ascending,
    Permutation(Vec<usize>),
    /// Fresh shuffle every cycle, derived from the seed and cycle index.
    Shuffled {
        seed: u64,
    },
}

impl AgentOrder {
    pub fn order(&self, n_agents: usize, cycle: usize) -> Result<Vec<usize>> {
        match self {
            AgentOrder::Ascending => Ok((0..n_agents).collect()),
            AgentOrder::Permutation(p) => {
                let mut seen = vec![false; n_agents];
                if p.len() != n_agents
                    || p.iter()
                        .any(|&i| i >= n_agents || std::mem::replace(&mut seen[i], true))
                {
                    return Err(Error::config(
                        "agent_order",
                        format!("not a permutation of 0..{n_agents}"),
                    ));
                }
                Ok(p.clone())
            }
            AgentOrder::Shuffled { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (cycle as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut p: Vec<usize> = (0..n_agents).collect();
                p.shuffle(&mut rng);
                Ok(p)
            }
        }
    }
}

/// Sequential greedy selection with shared residual capacities. Every agent
/// carries mass `1/M`.
pub fn centralized_selection(
    positions: &[DVector<f64>],
    targets: &DiscreteMeasure,
    order: &[usize],
    cycle: usize,
) -> Result<CyclePlan> {
    let m = positions.len();
    if m == 0 {
        return Err(Error::EmptySupport);
    }
    let mass = 1.0 / m as f64;
    let mut residual = ResidualCapacities::from_measure(targets);
    let mut plans: Vec<Option<LocalPlan>> = vec![None; m];
    for &i in order {
        let plan = greedy_local_assign(i, &positions[i], targets, &residual, mass)?;
        residual = apply_residual_update(&residual, &plan)?;
        plans[i] = Some(plan);
    }
    let plans: Vec<LocalPlan> = plans
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::config("agent_order", format!("agent {i} missing"))))
        .collect::<Result<_>>()?;
    let left = residual.total();
    if left > 1e-8 {
        return Err(Error::InvariantViolation {
            cycle,
            detail: format!("residual capacity {left:e} left after centralized selection"),
        });
    }
    CyclePlan::from_local_plans(cycle, plans, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{make_uniform_measure, w2_exact};
    use approx::assert_abs_diff_eq;

    fn line(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(
            points.iter().map(|&p| DVector::from_vec(vec![p])).collect(),
            weights.to_vec(),
        )
        .unwrap()
    }

    fn p1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    #[test]
    fn greedy_fills_nearest_first() {
        let targets = line(&[1.0, 2.0, 50.0], &[0.3, 0.3, 0.4]);
        let residual = ResidualCapacities::new(vec![0.3, 0.3, 0.4]).unwrap();
        let plan = greedy_local_assign(0, &p1(0.0), &targets, &residual, 0.5).unwrap();
        assert_eq!(plan.pairs.len(), 2);
        assert_eq!(plan.pairs[0], (0, 0.3));
        assert_eq!(plan.pairs[1].0, 1);
        assert_abs_diff_eq!(plan.pairs[1].1, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn first_capacity_suffices() {
        let targets = line(&[7.0, 3.0], &[0.5, 0.5]);
        let plan =
            greedy_local_assign(0, &p1(2.0), &targets, &ResidualCapacities::from_measure(&targets), 0.5).unwrap();
        assert_eq!(plan.pairs, vec![(1, 0.5)]);
    }

    #[test]
    fn ties_break_by_lower_index() {
        let targets = line(&[1.0, -1.0, 5.0], &[0.1, 0.1, 0.8]);
        let residual = ResidualCapacities::new(vec![0.1, 0.1, 1.0]).unwrap();
        let plan = greedy_local_assign(0, &p1(0.0), &targets, &residual, 0.25).unwrap();
        assert_eq!(plan.pairs[0], (0, 0.1));
        assert_eq!(plan.pairs[1], (1, 0.1));
        assert_eq!(plan.pairs[2].0, 2);
        assert_abs_diff_eq!(plan.pairs[2].1, 0.05, epsilon = 1e-15);
    }

    #[test]
    fn shortfall_reports_remainder() {
        let targets = line(&[1.0, 2.0], &[0.5, 0.5]);
        let residual = ResidualCapacities::new(vec![0.1, 0.1]).unwrap();
        match greedy_local_assign(0, &p1(0.0), &targets, &residual, 0.5) {
            Err(Error::CapacityShortfall { remainder }) => assert_abs_diff_eq!(remainder, 0.3, epsilon = 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn residual_update_examples() {
        let r = ResidualCapacities::new(vec![0.3, 0.3]).unwrap();
        let plan = LocalPlan {
            agent: 0,
            pairs: vec![(0, 0.3), (1, 0.2)],
        };
        let next = apply_residual_update(&r, &plan).unwrap();
        assert_eq!(next.as_slice()[0], 0.0);
        assert_abs_diff_eq!(next.as_slice()[1], 0.1, epsilon = 1e-15);

        let empty = LocalPlan {
            agent: 0,
            pairs: vec![],
        };
        assert_eq!(apply_residual_update(&r, &empty).unwrap(), r);

        let full = ResidualCapacities::new(vec![0.5]).unwrap();
        let take = LocalPlan {
            agent: 0,
            pairs: vec![(0, 0.5)],
        };
        assert_eq!(apply_residual_update(&full, &take).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn residual_snaps_rounding_noise() {
        let r = ResidualCapacities::new(vec![0.1]).unwrap();
        let plan = LocalPlan {
            agent: 0,
            pairs: vec![(0, 0.1 + 5e-13)],
        };
        assert_eq!(apply_residual_update(&r, &plan).unwrap().as_slice(), &[0.0]);
        let over = LocalPlan {
            agent: 0,
            pairs: vec![(0, 0.2)],
        };
        assert!(matches!(
            apply_residual_update(&r, &over),
            Err(Error::OverAllocation { sample: 0, .. })
        ));
    }

    #[test]
    fn barycenter_examples() {
        let pts = |v: &[[f64; 2]]| v.iter().map(|p| DVector::from_row_slice(p)).collect::<Vec<_>>();
        let t = make_uniform_measure(pts(&[[2.0, 3.0], [0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [4.0, 0.0]])).unwrap();

        let (y, w) = barycenter(
            &LocalPlan {
                agent: 0,
                pairs: vec![(0, 0.5)],
            },
            &t,
        )
        .unwrap();
        assert_eq!((y[0], y[1], w), (2.0, 3.0, 0.5));

        let (y, w) = barycenter(
            &LocalPlan {
                agent: 0,
                pairs: vec![(1, 0.25), (2, 0.25)],
            },
            &t,
        )
        .unwrap();
        assert_eq!((y[0], y[1], w), (1.0, 0.0, 0.5));

        let (y, w) = barycenter(
            &LocalPlan {
                agent: 0,
                pairs: vec![(3, 0.3), (4, 0.2)],
            },
            &t,
        )
        .unwrap();
        assert_abs_diff_eq!(y[0], 2.2, epsilon = 1e-15);
        assert_eq!(y[1], 0.0);
        assert_abs_diff_eq!(w, 0.5, epsilon = 1e-15);

        assert!(matches!(
            barycenter(
                &LocalPlan {
                    agent: 0,
                    pairs: vec![]
                },
                &t
            ),
            Err(Error::EmptyPlan)
        ));
    }

    #[test]
    fn centralized_two_agents_apart() {
        let t = line(&[1.0, 9.0], &[0.5, 0.5]);
        let plan = centralized_selection(&[p1(0.0), p1(10.0)], &t, &[0, 1], 0).unwrap();
        assert_eq!(plan.plans[0].pairs, vec![(0, 0.5)]);
        assert_eq!(plan.plans[1].pairs, vec![(1, 0.5)]);
    }

    #[test]
    fn centralized_order_dependence() {
        let t = line(&[1.0, 9.0], &[0.5, 0.5]);
        let a = centralized_selection(&[p1(0.0), p1(0.0)], &t, &[0, 1], 0).unwrap();
        assert_eq!(a.plans[0].pairs, vec![(0, 0.5)]);
        assert_eq!(a.plans[1].pairs, vec![(1, 0.5)]);
        let b = centralized_selection(&[p1(0.0), p1(0.0)], &t, &[1, 0], 0).unwrap();
        assert_eq!(b.plans[1].pairs, vec![(0, 0.5)]);
        assert_eq!(b.plans[0].pairs, vec![(1, 0.5)]);
    }

    #[test]
    fn single_agent_matches_exact_transport() {
        let t = line(&[-3.0, 1.0, 2.5, 8.0], &[0.1, 0.2, 0.3, 0.4]);
        let x = p1(0.7);
        let plan = centralized_selection(std::slice::from_ref(&x), &t, &[0], 0).unwrap();
        let cost = plan.cost(std::slice::from_ref(&x), &t);
        let (exact, _) = w2_exact(&make_uniform_measure(vec![x]).unwrap(), &t).unwrap();
        assert_abs_diff_eq!(cost, exact, epsilon = 1e-12);
    }

    #[test]
    fn agent_orders() {
        assert_eq!(AgentOrder::Ascending.order(3, 0).unwrap(), vec![0, 1, 2]);
        assert!(AgentOrder::Permutation(vec![0, 0, 1]).order(3, 0).is_err());
        assert!(AgentOrder::Permutation(vec![0, 1]).order(3, 0).is_err());
        let s = AgentOrder::Shuffled { seed: 4 };
        let mut p = s.order(20, 1).unwrap();
        assert_eq!(p, s.order(20, 1).unwrap());
        assert_ne!(p, s.order(20, 2).unwrap());
        p.sort();
        assert_eq!(p, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn debug_dump_lists_rows() {
        let t = line(&[1.0, 9.0], &[0.5, 0.5]);
        let plan = centralized_selection(&[p1(0.0), p1(10.0)], &t, &[0, 1], 3).unwrap();
        let mut buf = Vec::new();
        plan.write_debug(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("3 0 0 0.5\n"));
        assert!(text.contains("3 1 1 0.5\n"));
        assert!(text.contains("1 9 0.5\n"));
    }
}
