//! Discrete probability measures, target generation, and exact 2-Wasserstein
//! distance.

mod io;
mod simplex;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, sq_dist};

pub use io::{format_measure, parse_measure, read_measure, write_measure};

/// Tolerance on the total mass of a probability measure.
pub const MASS_TOL: f64 = 1e-9;

/// Weighted point set in `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySupport);
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidMeasure("points must share a positive dimension".into()));
        }
        if points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidMeasure("non-finite coordinate".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, j: usize) -> &DVector<f64> {
        &self.points[j]
    }
}

/// Uniform measure on the given support.
pub fn make_uniform_measure(points: Vec<DVector<f64>>) -> Result<DiscreteMeasure> {
    if points.is_empty() {
        return Err(Error::EmptySupport);
    }
    let w = 1.0 / points.len() as f64;
    let n = points.len();
    DiscreteMeasure::new(points, vec![w; n])
}

/// Sparse coupling between an `n_rows`-atom and an `n_cols`-atom measure.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub entries: Vec<(usize, usize, f64)>,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n_rows];
        for &(i, _, m) in &self.entries {
            s[i] += m;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n_cols];
        for &(_, j, m) in &self.entries {
            s[j] += m;
        }
        s
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.entries.iter().map(|e| e.2))
    }

    /// `Σ π_ij ‖x_i − y_j‖²`.
    pub fn cost(&self, rows: &[DVector<f64>], cols: &[DVector<f64>]) -> f64 {
        compensated_sum(self.entries.iter().map(|&(i, j, m)| m * sq_dist(&rows[i], &cols[j])))
    }

    /// Checks nonnegativity and both marginals to within `tol`.
    pub fn validate(&self, row_marginal: &[f64], col_marginal: &[f64], tol: f64) -> Result<()> {
        if row_marginal.len() != self.n_rows || col_marginal.len() != self.n_cols {
            return Err(Error::DimensionMismatch("plan and marginal sizes differ".into()));
        }
        for &(i, j, m) in &self.entries {
            if i >= self.n_rows || j >= self.n_cols {
                return Err(Error::InvalidMeasure(format!("entry ({i}, {j}) out of range")));
            }
            if !(m >= 0.0) {
                return Err(Error::InvalidMeasure(format!("negative mass at ({i}, {j})")));
            }
        }
        for (k, (s, a)) in self.row_sums().iter().zip(row_marginal).enumerate() {
            if (s - a).abs() > tol {
                return Err(Error::InvalidMeasure(format!("row {k} sums to {s}, expected {a}")));
            }
        }
        for (k, (s, b)) in self.col_sums().iter().zip(col_marginal).enumerate() {
            if (s - b).abs() > tol {
                return Err(Error::InvalidMeasure(format!("column {k} sums to {s}, expected {b}")));
            }
        }
        Ok(())
    }
}

/// Squared 2-Wasserstein distance and an optimal coupling.
pub fn w2_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, TransportPlan)> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch(format!(
            "measures live in R^{} and R^{}",
            mu.dim(),
            nu.dim()
        )));
    }
    let cost: Vec<f64> = mu
        .points()
        .iter()
        .flat_map(|x| nu.points().iter().map(move |y| sq_dist(x, y)))
        .collect();
    let sol = simplex::solve_transport(mu.weights(), nu.weights(), &cost)?;
    log::trace!("{}x{} transport solved in {} pivots", mu.len(), nu.len(), sol.pivots);
    let plan = TransportPlan {
        entries: sol.entries,
        n_rows: mu.len(),
        n_cols: nu.len(),
    };
    Ok((sol.cost.max(0.0), plan))
}

/// 2-Wasserstein distance (square root of [`w2_exact`]).
pub fn w2_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    w2_exact(mu, nu).map(|(c, _)| c.sqrt())
}

/// `(row, col, mass)` triple of a transport plan.
pub type TransportEntry = (usize, usize, f64);

/// Exact transport between arbitrary balanced marginals under a dense
/// row-major cost matrix. Returns `(cost, entries)`.
pub fn transport_exact(rows: &[f64], cols: &[f64], cost: &[f64]) -> Result<(f64, Vec<TransportEntry>)> {
    let sol = simplex::solve_transport(rows, cols, cost)?;
    Ok((sol.cost, sol.entries))
}

/// One component of a Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub weight: f64,
}

/// Draws `n_samples` i.i.d. points from a Gaussian mixture and returns them
/// with uniform weights. Deterministic for a fixed seed.
pub fn sample_target_from_mixture(
    mixture: &[GaussianComponent],
    n_samples: usize,
    seed: u64,
) -> Result<DiscreteMeasure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_mixture_with(mixture, n_samples, &mut rng)
}

pub(crate) fn sample_mixture_with(
    mixture: &[GaussianComponent],
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DiscreteMeasure> {
    if mixture.is_empty() {
        return Err(Error::BadMixture("no components".into()));
    }
    if n_samples == 0 {
        return Err(Error::EmptySupport);
    }
    let dim = mixture[0].mean.len();
    let mut factors = Vec::with_capacity(mixture.len());
    for (k, c) in mixture.iter().enumerate() {
        if c.mean.len() != dim || c.covariance.shape() != (dim, dim) {
            return Err(Error::BadMixture(format!("component {k} has inconsistent dimension")));
        }
        if !(c.weight >= 0.0) || !c.weight.is_finite() {
            return Err(Error::BadMixture(format!("component {k} has invalid weight")));
        }
        let cov = &c.covariance;
        let asym = (cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::BadCovariance { component: k });
        }
        let chol = cov.clone().cholesky().ok_or(Error::BadCovariance { component: k })?;
        let l = chol.l();
        if l.diagonal().iter().any(|d| !(*d > 0.0)) {
            return Err(Error::BadCovariance { component: k });
        }
        factors.push(l);
    }
    let total: f64 = mixture.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::BadMixture(format!("component weights sum to {total}, not 1")));
    }
    let picker = WeightedIndex::new(mixture.iter().map(|c| c.weight)).map_err(|e| Error::BadMixture(e.to_string()))?;
    let points = (0..n_samples)
        .map(|_| {
            let k = picker.sample(rng);
            let z = DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)));
            &mixture[k].mean + &factors[k] * z
        })
        .collect();
    make_uniform_measure(points)
}
