use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::ControlSequence;
use crate::error::{Error, Result};

/// Control-affine dynamics `x⁺ = f(x) + g(x) u` with output `h(x)` and a
/// quadratic input penalty `uᵀ R u`.
pub trait ControlAffine {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `g(x)`, an `n × m` matrix.
    fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `∂(g(x) u)/∂x` for fixed `u`.
    fn input_map_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn output(&self, x: &DVector<f64>) -> DVector<f64>;
    fn output_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn penalty(&self) -> &DMatrix<f64>;

    /// Spatial position used for transport cost and metrics.
    fn position(&self, x: &DVector<f64>) -> DVector<f64> {
        self.output(x)
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.input_map(x) * u
    }

    fn step_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.drift_jacobian(x) + self.input_map_jacobian(x, u)
    }

    fn simulate(&self, x0: &DVector<f64>, controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut traj = Vec::with_capacity(controls.len() + 1);
        traj.push(x0.clone());
        for u in controls {
            let next = self.step(traj.last().unwrap(), u);
            traj.push(next);
        }
        traj
    }
}

fn check_penalty(r: &DMatrix<f64>, m: usize) -> Result<()> {
    if r.shape() != (m, m) || r.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadPenalty);
    }
    if (r - r.transpose()).amax() > 1e-12 {
        return Err(Error::BadPenalty);
    }
    if !(r.clone().symmetric_eigen().eigenvalues.min() > 0.0) {
        return Err(Error::BadPenalty);
    }
    Ok(())
}

/// Unicycle with state `(px, py, θ)`, inputs `(v, w)` and a look-ahead output
/// point at distance `d` along the heading.
#[derive(Debug, Clone, PartialEq)]
pub struct Unicycle {
    dt: f64,
    lookahead: f64,
    r: DMatrix<f64>,
}

impl Unicycle {
    pub fn new(dt: f64, lookahead: f64, r: DMatrix<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::config("unicycle.dt", "must be positive"));
        }
        if !(lookahead >= 0.0) || !lookahead.is_finite() {
            return Err(Error::config("unicycle.lookahead", "must be nonnegative"));
        }
        check_penalty(&r, 2)?;
        Ok(Self { dt, lookahead, r })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn lookahead(&self) -> f64 {
        self.lookahead
    }
}

impl ControlAffine for Unicycle {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(3, 3)
    }

    fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        let dt = self.dt;
        DMatrix::from_row_slice(3, 2, &[dt * c, 0.0, dt * s, 0.0, 0.0, dt])
    }

    fn input_map_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        let dv = self.dt * u[0];
        let mut j = DMatrix::zeros(3, 3);
        j[(0, 2)] = -dv * s;
        j[(1, 2)] = dv * c;
        j
    }

    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        let (s, c) = x[2].sin_cos();
        DVector::from_vec(vec![x[0] + self.lookahead * c, x[1] + self.lookahead * s])
    }

    fn output_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        let d = self.lookahead;
        DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -d * s, 0.0, 1.0, d * c])
    }

    fn penalty(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn position(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(0, 2).into_owned()
    }
}

/// Linear dynamics `x⁺ = A x + B u` with output `C x`, viewed as control-affine.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAffine {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LinearAffine {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || b.nrows() != n || c.ncols() != n || b.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::DimensionMismatch("inconsistent A, B, C shapes".into()));
        }
        check_penalty(&r, b.ncols())?;
        Ok(Self { a, b, c, r })
    }

    /// Full-state output.
    pub fn full_state(a: DMatrix<f64>, b: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, DMatrix::identity(n, n), r)
    }
}

impl ControlAffine for LinearAffine {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }
    fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
    fn input_map(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }
    fn input_map_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.a.nrows();
        DMatrix::zeros(n, n)
    }
    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
    fn output_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.c.clone()
    }
    fn penalty(&self) -> &DMatrix<f64> {
        &self.r
    }
}

/// Closed-form minimizer of the one-step cost with the output map linearized
/// in `u` around `u = 0`.
pub fn nonlinear_one_step_control<M: ControlAffine + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    y_star: &DVector<f64>,
    omega: f64,
) -> DVector<f64> {
    let fx = model.drift(x);
    let g_hat = model.output_jacobian(&fx) * model.input_map(x);
    let resid = model.output(&fx) - y_star;
    let lhs = g_hat.transpose() * &g_hat * omega + model.penalty();
    let rhs = -(g_hat.transpose() * resid * omega);
    lhs.cholesky().expect("ωĝᵀĝ + R is positive definite").solve(&rhs)
}

/// `½ω‖h(f(x) + g(x)u) − y*‖² + ½uᵀRu` evaluated with the true output map.
pub fn one_step_cost<M: ControlAffine + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    y_star: &DVector<f64>,
    omega: f64,
) -> f64 {
    let e = model.output(&model.step(x, u)) - y_star;
    0.5 * omega * e.norm_squared() + 0.5 * u.dot(&(model.penalty() * u))
}

/// The affine problem seen by the one-step closed form: a single integrator in
/// output space starting at `h(f(x))` with input matrix `ĝ`.
pub fn linearize_one_step<M: ControlAffine + ?Sized>(
    model: &M,
    x: &DVector<f64>,
) -> Result<(LinearAffine, DVector<f64>)> {
    let fx = model.drift(x);
    let g_hat = model.output_jacobian(&fx) * model.input_map(x);
    let p = g_hat.nrows();
    let lin = LinearAffine::full_state(DMatrix::identity(p, p), g_hat, model.penalty().clone())?;
    Ok((lin, model.output(&fx)))
}

/// Cost of a full input sequence: terminal tracking plus input energy.
pub fn horizon_cost<M: ControlAffine + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    y_star: &DVector<f64>,
    omega: f64,
) -> f64 {
    let traj = model.simulate(x0, controls);
    let e = model.output(traj.last().unwrap()) - y_star;
    let r = model.penalty();
    0.5 * omega * e.norm_squared() + controls.iter().map(|u| 0.5 * u.dot(&(r * u))).sum::<f64>()
}

/// Cost and adjoint gradient, one block per time step.
pub fn horizon_gradient<M: ControlAffine + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    y_star: &DVector<f64>,
    omega: f64,
) -> (f64, Vec<DVector<f64>>) {
    let traj = model.simulate(x0, controls);
    let x_end = traj.last().unwrap();
    let e = model.output(x_end) - y_star;
    let r = model.penalty();
    let cost = 0.5 * omega * e.norm_squared() + controls.iter().map(|u| 0.5 * u.dot(&(r * u))).sum::<f64>();
    let mut lambda = model.output_jacobian(x_end).transpose() * e * omega;
    let mut grad = vec![DVector::zeros(0); controls.len()];
    for t in (0..controls.len()).rev() {
        let x = &traj[t];
        let u = &controls[t];
        grad[t] = r * u + model.input_map(x).transpose() * &lambda;
        lambda = model.step_jacobian(x, u).transpose() * lambda;
    }
    (cost, grad)
}

/// `max_t ‖u(t) + R⁻¹ g(x(t))ᵀ λ(t+1)‖` along the trajectory generated by
/// `controls`, with the costate propagated backward from the terminal cost.
pub fn pmp_residual<M: ControlAffine + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    y_star: &DVector<f64>,
    omega: f64,
) -> f64 {
    let (_, grad) = horizon_gradient(model, x0, controls, y_star, omega);
    let chol = model
        .penalty()
        .clone()
        .cholesky()
        .expect("penalty is positive definite");
    stationarity(&chol, &grad)
}

fn stationarity(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, grad: &[DVector<f64>]) -> f64 {
    grad.iter().map(|g| chol.solve(g).norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    pub max_iterations: usize,
    /// Target for the penalty-scaled stationarity measure (the PMP residual).
    pub tolerance: f64,
    /// Number of correction pairs kept by L-BFGS.
    pub memory: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-6,
            memory: 10,
        }
    }
}

fn flatten(blocks: &[DVector<f64>]) -> DVector<f64> {
    let len = blocks.iter().map(|b| b.len()).sum();
    DVector::from_iterator(len, blocks.iter().flat_map(|b| b.iter().copied()))
}

fn unflatten(v: &DVector<f64>, m: usize) -> Vec<DVector<f64>> {
    v.as_slice().chunks(m).map(DVector::from_column_slice).collect()
}

/// Minimizes the horizon cost by L-BFGS on adjoint gradients, starting from
/// the zero sequence, with Armijo backtracking.
pub fn nonlinear_horizon_controls<M: ControlAffine + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    y_star: &DVector<f64>,
    omega: f64,
    horizon: usize,
    opts: &DescentOptions,
) -> Result<ControlSequence> {
    if horizon == 0 {
        return Err(Error::HorizonTooShort { horizon, dim: 1 });
    }
    if x0.len() != model.state_dim() || y_star.len() != model.output_dim() {
        return Err(Error::DimensionMismatch("x0 or y* has the wrong length".into()));
    }
    let m = model.input_dim();
    let chol = model.penalty().clone().cholesky().ok_or(Error::BadPenalty)?;

    let eval = |u: &DVector<f64>| {
        let blocks = unflatten(u, m);
        let (c, g) = horizon_gradient(model, x0, &blocks, y_star, omega);
        let s = stationarity(&chol, &g);
        (c, flatten(&g), s)
    };

    let mut u = DVector::zeros(m * horizon);
    let (mut cost, mut grad, mut stat) = eval(&u);
    let mut best = (stat, u.clone());
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    while iterations < opts.max_iterations && stat > opts.tolerance {
        iterations += 1;
        let mut dir = two_loop(&grad, &pairs);
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = -&grad;
            slope = grad.dot(&dir);
        }
        // Cost differences below this are indistinguishable from rounding.
        let noise = 1e-14 * (1.0 + cost.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &u + &dir * step;
            let (c, g, s) = eval(&trial);
            let armijo = c <= cost + 1e-4 * step * slope;
            let flat = (c - cost).abs() <= noise && g.norm() < grad.norm();
            if c.is_finite() && (armijo || flat) {
                accepted = Some((trial, c, g, s));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, c, g, s)) = accepted else {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        };
        let sv = &trial - &u;
        let yv = &g - &grad;
        let sy = sv.dot(&yv);
        if sy > 1e-16 * sv.norm() * yv.norm() && sy > 0.0 {
            if pairs.len() == opts.memory.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((sv, yv, 1.0 / sy));
        }
        u = trial;
        cost = c;
        grad = g;
        stat = s;
        if stat < best.0 {
            best = (stat, u.clone());
        }
    }

    let controls = unflatten(&best.1, m);
    let terminal_state = model.simulate(x0, &controls).pop().unwrap();
    let seq = ControlSequence {
        controls,
        terminal_state,
    };
    if best.0 <= opts.tolerance {
        Ok(seq)
    } else {
        Err(Error::NoConvergence {
            iterations,
            residual: best.0,
            best: Box::new(seq),
        })
    }
}

fn two_loop(grad: &DVector<f64>, pairs: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * s.dot(&q);
        q -= y * a;
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * y.dot(&q);
        q += s * (a - b);
    }
    -q
}
