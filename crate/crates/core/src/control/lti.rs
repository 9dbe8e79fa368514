use nalgebra::{DMatrix, DVector};

use super::ControlSequence;
use crate::error::{Error, Result};

/// Relative singular-value cutoff for the controllability rank test.
const RANK_TOL: f64 = 1e-10;
/// Largest accepted condition number of the Gramian.
pub const MAX_GRAMIAN_CONDITION: f64 = 1e12;

/// Linear time-invariant agent `x⁺ = A x + B u` with a fixed planning horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    horizon: usize,
}

impl LtiModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, horizon: usize) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must have {n} rows and at least one column, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("A and B must be finite".into()));
        }
        let rank = controllability_rank(&a, &b);
        if rank < n {
            return Err(Error::NotControllable { rank, dim: n });
        }
        let model = Self { a, b, horizon };
        model.check_horizon()?;
        Ok(model)
    }

    /// Horizons shorter than the state dimension are accepted only when the
    /// H-step reachability map is already onto (e.g. fully actuated systems).
    fn check_horizon(&self) -> Result<()> {
        let n = self.state_dim();
        if self.horizon == 0 || (self.horizon < n && numerical_rank(&self.reachability_matrix()) < n) {
            return Err(Error::HorizonTooShort {
                horizon: self.horizon,
                dim: n,
            });
        }
        Ok(())
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Same dynamics with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let model = Self {
            horizon,
            ..self.clone()
        };
        model.check_horizon()?;
        Ok(model)
    }

    /// Blocks `A^t B` for `t = 0..H`.
    fn powers_times_b(&self) -> Vec<DMatrix<f64>> {
        let mut blocks = Vec::with_capacity(self.horizon);
        let mut cur = self.b.clone();
        for _ in 0..self.horizon {
            let next = &self.a * &cur;
            blocks.push(cur);
            cur = next;
        }
        blocks
    }

    /// `Φ_H = [A^{H−1}B, …, AB, B]`.
    pub fn reachability_matrix(&self) -> DMatrix<f64> {
        let (n, m, h) = (self.state_dim(), self.input_dim(), self.horizon);
        let blocks = self.powers_times_b();
        let mut phi = DMatrix::zeros(n, m * h);
        for t in 0..h {
            phi.view_mut((0, t * m), (n, m)).copy_from(&blocks[h - 1 - t]);
        }
        phi
    }

    /// `Γ_H = Σ_t A^t B Bᵀ (Aᵀ)^t`, rejected when numerically singular.
    pub fn gramian(&self) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let mut gram = DMatrix::zeros(n, n);
        for blk in self.powers_times_b() {
            gram += &blk * blk.transpose();
        }
        let gram = (&gram + gram.transpose()) * 0.5;
        let eig = gram.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= MAX_GRAMIAN_CONDITION) {
            return Err(Error::GramianIllConditioned { condition });
        }
        Ok(gram)
    }

    /// `A^H x0`.
    pub fn free_response(&self, x0: &DVector<f64>) -> DVector<f64> {
        let mut x = x0.clone();
        for _ in 0..self.horizon {
            x = &self.a * x;
        }
        x
    }

    /// Minimum-norm input sequence reaching `y_star` in exactly `H` steps.
    pub fn optimal_controls(&self, x0: &DVector<f64>, y_star: &DVector<f64>) -> Result<ControlSequence> {
        let n = self.state_dim();
        if x0.len() != n || y_star.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "state dimension is {n}, got x0 of length {} and y* of length {}",
                x0.len(),
                y_star.len()
            )));
        }
        let gram = self.gramian()?;
        let chol = gram.cholesky().ok_or(Error::GramianIllConditioned {
            condition: f64::INFINITY,
        })?;
        let blocks = self.powers_times_b();
        let h = self.horizon;
        let controls_for =
            |z: &DVector<f64>| -> Vec<DVector<f64>> { (0..h).map(|t| blocks[h - 1 - t].transpose() * z).collect() };

        let mut z = chol.solve(&(y_star - self.free_response(x0)));
        let mut controls = controls_for(&z);
        let mut terminal = self.terminal(x0, &controls);
        // One refinement pass against the simulated terminal state. The
        // correction stays in the row space of Φ, so minimality is preserved.
        let miss = y_star - &terminal;
        if miss.norm() > 0.0 {
            z += chol.solve(&miss);
            let refined = controls_for(&z);
            let refined_terminal = self.terminal(x0, &refined);
            if (y_star - &refined_terminal).norm() < miss.norm() {
                controls = refined;
                terminal = refined_terminal;
            }
        }
        Ok(ControlSequence {
            controls,
            terminal_state: terminal,
        })
    }

    fn terminal(&self, x0: &DVector<f64>, controls: &[DVector<f64>]) -> DVector<f64> {
        let mut x = x0.clone();
        for u in controls {
            x = &self.a * x + &self.b * u;
        }
        x
    }

    /// State trajectory of length `controls.len() + 1`.
    pub fn simulate(&self, x0: &DVector<f64>, controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut traj = Vec::with_capacity(controls.len() + 1);
        traj.push(x0.clone());
        for u in controls {
            let next = &self.a * traj.last().unwrap() + &self.b * u;
            traj.push(next);
        }
        traj
    }
}

/// Numerical rank of `[B, AB, …, A^{n−1}B]`.
pub(crate) fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut cur = b.clone();
    for k in 0..n {
        c.view_mut((0, k * m), (n, m)).copy_from(&cur);
        cur = a * cur;
    }
    numerical_rank(&c)
}

pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eye(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn reachability_identity_blocks() {
        let m = LtiModel::new(eye(2), eye(2), 2).unwrap();
        let phi = m.reachability_matrix();
        let mut expected = DMatrix::zeros(2, 4);
        expected.view_mut((0, 0), (2, 2)).copy_from(&eye(2));
        expected.view_mut((0, 2), (2, 2)).copy_from(&eye(2));
        assert_eq!(phi, expected);
    }

    #[test]
    fn reachability_nilpotent_drift() {
        let m = LtiModel::new(DMatrix::zeros(2, 2), eye(2), 2).unwrap();
        let phi = m.reachability_matrix();
        assert_eq!(phi.columns(0, 2), DMatrix::<f64>::zeros(2, 2));
        assert_eq!(phi.columns(2, 2), eye(2));
    }

    #[test]
    fn gramian_of_integrator() {
        assert_eq!(
            LtiModel::new(eye(2), eye(2), 2).unwrap().gramian().unwrap(),
            eye(2) * 2.0
        );
        assert_eq!(
            LtiModel::new(eye(2), eye(2), 50).unwrap().gramian().unwrap(),
            eye(2) * 50.0
        );
    }

    #[test]
    fn single_step_integrator() {
        let m = LtiModel::new(eye(2), eye(2), 1).unwrap();
        let seq = m
            .optimal_controls(&DVector::zeros(2), &DVector::from_vec(vec![3.0, 4.0]))
            .unwrap();
        assert_eq!(seq.controls, vec![DVector::from_vec(vec![3.0, 4.0])]);
        assert_eq!(seq.terminal_state, DVector::from_vec(vec![3.0, 4.0]));
    }

    #[test]
    fn two_step_integrator_splits_evenly() {
        let m = LtiModel::new(eye(2), eye(2), 2).unwrap();
        let seq = m
            .optimal_controls(&DVector::zeros(2), &DVector::from_vec(vec![2.0, 0.0]))
            .unwrap();
        for u in &seq.controls {
            assert_relative_eq!(u[0], 1.0, epsilon = 1e-15);
            assert_relative_eq!(u[1], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn uncontrollable_pair_rejected() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(matches!(
            LtiModel::new(eye(2), b, 4),
            Err(Error::NotControllable { rank: 1, dim: 2 })
        ));
    }

    #[test]
    fn short_horizon_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(matches!(
            LtiModel::new(a, b, 1),
            Err(Error::HorizonTooShort { horizon: 1, dim: 2 })
        ));
    }

    #[test]
    fn ill_conditioned_gramian_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-7]);
        let m = LtiModel::new(a, b, 2).unwrap();
        assert!(matches!(m.gramian(), Err(Error::GramianIllConditioned { .. })));
    }

    #[test]
    fn zero_controls_keep_identity_system_still() {
        let m = LtiModel::new(eye(2), eye(2), 3).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -2.0]);
        let traj = m.simulate(&x0, &vec![DVector::zeros(2); 3]);
        assert_eq!(traj.len(), 4);
        assert!(traj.iter().all(|x| *x == x0));
    }
}
