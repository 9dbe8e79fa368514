//! Two-phase cycle loop: selection, then `H` steps of control, with surrogate
//! cost and exact Wasserstein metrics at every cycle boundary.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assignment::{centralized_selection, AgentOrder, CyclePlan};
use crate::control::AgentModel;
use crate::decentral::{build_comm_graph, decentralized_selection, DecentralOptions, MemoryStore};
use crate::error::{Error, Result};
use crate::measures::{make_uniform_measure, w2_exact, DiscreteMeasure};

/// Slack for the descent and upper-bound checks.
pub const METRIC_TOL: f64 = 1e-9;
/// Relative terminal accuracy demanded of linear agents.
pub const TERMINAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Centralized,
    Decentralized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub mode: Mode,
    pub horizon: usize,
    pub cycles: usize,
    pub order: AgentOrder,
    /// Communication range, used in decentralized mode.
    pub comm_range: f64,
    pub decentral: DecentralOptions,
    /// Record the exact W₂ after every step, not just at cycle boundaries.
    pub w2_every_step: bool,
    /// Seed for protocol randomness (message drops).
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Centralized,
            horizon: 50,
            cycles: 20,
            order: AgentOrder::Ascending,
            comm_range: 20.0,
            decentral: DecentralOptions::default(),
            w2_every_step: false,
            seed: 0,
        }
    }
}

/// One row of `metrics.csv` plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleMetrics {
    pub cycle: usize,
    pub psi_start: f64,
    pub psi_end: f64,
    /// `W₂(μ, ν)` at the end of the cycle (not squared).
    pub w2: f64,
    pub w2_sq_start: f64,
    pub w2_sq_end: f64,
    pub descent_ok: bool,
    pub bound_ok: bool,
    /// Every agent ended the cycle no farther from its barycenter than it began.
    pub errors_nonincreasing: bool,
    pub max_terminal_error: f64,
    pub shortfalls: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRecord {
    pub initial_w2: f64,
    pub cycles: Vec<CycleMetrics>,
    /// `(step, W₂)` pairs when per-step tracing is on.
    pub w2_trace: Vec<(usize, f64)>,
}

impl MetricsRecord {
    pub fn final_w2(&self) -> f64 {
        self.cycles.last().map_or(self.initial_w2, |c| c.w2)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cycle,psi_start,psi_end,w2,descent_ok,bound_ok")?;
        for c in &self.cycles {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.cycle, c.psi_start, c.psi_end, c.w2, c.descent_ok, c.bound_ok
            )?;
        }
        Ok(())
    }

    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,w2")?;
        for (k, v) in &self.w2_trace {
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    }
}

/// `Ψ = Σ_i Σ_j π̃_ij ‖x_i − y_j‖²`.
pub fn surrogate_cost(plan: &CyclePlan, positions: &[DVector<f64>], targets: &DiscreteMeasure) -> f64 {
    plan.cost(positions, targets)
}

/// Mutable simulation state at a cycle boundary.
#[derive(Debug, Clone)]
pub struct SimState {
    pub cycle: usize,
    pub step: usize,
    pub states: Vec<DVector<f64>>,
    pub plan: Option<CyclePlan>,
    pub store: MemoryStore,
    rng: ChaCha8Rng,
}

pub struct Simulation {
    model: AgentModel,
    targets: DiscreteMeasure,
    config: EngineConfig,
    state: SimState,
    record: MetricsRecord,
    /// `trajectory[k][i]` is agent `i`'s state after step `k`.
    trajectory: Vec<Vec<DVector<f64>>>,
    w2_sq_now: f64,
}

impl Simulation {
    pub fn new(
        model: AgentModel,
        targets: DiscreteMeasure,
        initial: Vec<DVector<f64>>,
        config: EngineConfig,
    ) -> Result<Self> {
        if initial.is_empty() {
            return Err(Error::EmptySupport);
        }
        let n = model.state_dim();
        if initial.iter().any(|x| x.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "initial states must have dimension {n}"
            )));
        }
        if model.position(&initial[0]).len() != targets.dim() {
            return Err(Error::DimensionMismatch(
                "agent positions and targets differ in dimension".into(),
            ));
        }
        if config.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if let AgentModel::Lti(m) = &model {
            if m.horizon() != config.horizon {
                return Err(Error::config("horizon", "differs from the linear model's horizon"));
            }
        }
        if config.mode == Mode::Decentralized && !(config.comm_range > 0.0) {
            return Err(Error::config("comm_range", "must be positive in decentralized mode"));
        }
        let m = initial.len();
        let mut sim = Self {
            model,
            targets,
            state: SimState {
                cycle: 0,
                step: 0,
                states: initial.clone(),
                plan: None,
                store: MemoryStore::new(m),
                rng: ChaCha8Rng::seed_from_u64(config.seed),
            },
            config,
            record: MetricsRecord::default(),
            trajectory: vec![initial],
            w2_sq_now: 0.0,
        };
        sim.w2_sq_now = sim.w2_sq(&sim.positions())?;
        sim.record.initial_w2 = sim.w2_sq_now.sqrt();
        if sim.config.w2_every_step {
            sim.record.w2_trace.push((0, sim.record.initial_w2));
        }
        Ok(sim)
    }

    pub fn model(&self) -> &AgentModel {
        &self.model
    }

    pub fn targets(&self) -> &DiscreteMeasure {
        &self.targets
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn record(&self) -> &MetricsRecord {
        &self.record
    }

    pub fn trajectory(&self) -> &[Vec<DVector<f64>>] {
        &self.trajectory
    }

    pub fn n_agents(&self) -> usize {
        self.state.states.len()
    }

    /// Current agent positions.
    pub fn positions(&self) -> Vec<DVector<f64>> {
        self.state.states.iter().map(|x| self.model.position(x)).collect()
    }

    fn w2_sq(&self, positions: &[DVector<f64>]) -> Result<f64> {
        let mu = make_uniform_measure(positions.to_vec())?;
        Ok(w2_exact(&mu, &self.targets)?.0)
    }

    /// Runs one selection phase and `H` control steps.
    pub fn step_cycle(&mut self) -> Result<CycleMetrics> {
        let cycle = self.state.cycle;
        let h = self.config.horizon;
        let start_positions = self.positions();

        let (plan, shortfalls) = match self.config.mode {
            Mode::Centralized => {
                let order = self.config.order.order(self.n_agents(), cycle)?;
                (
                    centralized_selection(&start_positions, &self.targets, &order, cycle)?,
                    0,
                )
            }
            Mode::Decentralized => {
                let graph = build_comm_graph(&start_positions, self.config.comm_range)?;
                let round = decentralized_selection(
                    &start_positions,
                    &self.targets,
                    &graph,
                    &self.state.store,
                    &self.config.decentral,
                    cycle,
                    &mut self.state.rng,
                )?;
                self.state.store = round.store;
                (round.plan, round.shortfalls.len())
            }
        };
        let psi_start = surrogate_cost(&plan, &start_positions, &self.targets);
        let w2_sq_start = self.w2_sq_now;

        let mut paths = Vec::with_capacity(self.n_agents());
        let mut errors_nonincreasing = true;
        let mut max_terminal_error: f64 = 0.0;
        for (i, x0) in self.state.states.iter().enumerate() {
            let y = &plan.barycenters[i];
            let seq = self.model.cycle_controls(x0, y, plan.masses[i], h)?;
            let path = self.model.simulate(x0, &seq.controls);
            let end = path.last().unwrap();
            let e_start = (&start_positions[i] - y).norm();
            let e_end = (self.model.position(end) - y).norm();
            if self.model.is_linear() && e_end > TERMINAL_TOL * (1.0 + y.norm()) {
                return Err(Error::InvariantViolation {
                    cycle,
                    detail: format!("agent {i} missed its barycenter by {e_end:e}"),
                });
            }
            errors_nonincreasing &= e_end <= e_start;
            max_terminal_error = max_terminal_error.max(e_end);
            paths.push(path);
        }
        for k in 1..=h {
            let row: Vec<DVector<f64>> = paths.iter().map(|p| p[k].clone()).collect();
            if self.config.w2_every_step && k < h {
                let pos: Vec<_> = row.iter().map(|x| self.model.position(x)).collect();
                let w = self.w2_sq(&pos)?.sqrt();
                self.record.w2_trace.push((self.state.step + k, w));
            }
            self.trajectory.push(row);
        }
        self.state.states = paths.into_iter().map(|mut p| p.pop().unwrap()).collect();
        self.state.step += h;

        let end_positions = self.positions();
        let psi_end = surrogate_cost(&plan, &end_positions, &self.targets);
        let w2_sq_end = self.w2_sq(&end_positions)?;
        self.w2_sq_now = w2_sq_end;
        if self.config.w2_every_step {
            self.record.w2_trace.push((self.state.step, w2_sq_end.sqrt()));
        }

        let descent_ok = psi_end <= psi_start + METRIC_TOL;
        let bound_ok = w2_sq_start <= psi_start + METRIC_TOL && w2_sq_end <= psi_end + METRIC_TOL;
        let metrics = CycleMetrics {
            cycle,
            psi_start,
            psi_end,
            w2: w2_sq_end.sqrt(),
            w2_sq_start,
            w2_sq_end,
            descent_ok,
            bound_ok,
            errors_nonincreasing,
            max_terminal_error,
            shortfalls,
        };
        log::info!(
            "cycle {cycle}: psi {psi_start:.6} -> {psi_end:.6}, W2 {:.6}, descent {descent_ok}, bound {bound_ok}",
            metrics.w2
        );

        // The row is kept even when the checks below abort the run.
        self.state.plan = Some(plan);
        self.state.cycle += 1;
        self.record.cycles.push(metrics.clone());

        if self.config.mode == Mode::Centralized && !bound_ok {
            return Err(Error::InvariantViolation {
                cycle,
                detail: format!(
                    "W2^2 exceeds the surrogate cost ({w2_sq_start:e} vs {psi_start:e}, {w2_sq_end:e} vs {psi_end:e})"
                ),
            });
        }
        if !descent_ok && (self.model.is_linear() || errors_nonincreasing) {
            return Err(Error::InvariantViolation {
                cycle,
                detail: format!("surrogate cost rose from {psi_start:e} to {psi_end:e}"),
            });
        }
        Ok(metrics)
    }

    /// Runs the configured number of cycles.
    pub fn run(&mut self) -> Result<&MetricsRecord> {
        while self.state.cycle < self.config.cycles {
            self.step_cycle()?;
        }
        Ok(&self.record)
    }

    /// Writes `step,agent,x0,x1,...` rows for every recorded state.
    pub fn write_trajectories<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.model.state_dim();
        write!(w, "step,agent")?;
        for k in 0..n {
            write!(w, ",x{k}")?;
        }
        writeln!(w)?;
        for (step, row) in self.trajectory.iter().enumerate() {
            for (i, x) in row.iter().enumerate() {
                write!(w, "{step},{i}")?;
                for v in x.iter() {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Builds a simulation and runs it to completion.
pub fn run_simulation(
    model: AgentModel,
    targets: DiscreteMeasure,
    initial: Vec<DVector<f64>>,
    config: EngineConfig,
) -> Result<Simulation> {
    let mut sim = Simulation::new(model, targets, initial, config)?;
    sim.run()?;
    Ok(sim)
}
