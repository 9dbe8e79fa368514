//! Scenario construction and the artifact-writing run entry point.

pub mod config;
pub mod presets;
pub mod svg;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{parse_config, parse_config_str, ScenarioConfig};
pub use presets::{preset, PRESET_NAMES};
pub use svg::{emit_snapshot, Snapshot};

use crate::assignment::AgentOrder;
use crate::control::{AgentModel, LtiModel, Unicycle};
use crate::decentral::DecentralOptions;
use crate::engine::{EngineConfig, MetricsRecord, Mode, Simulation};
use crate::error::{Error, Result};
use crate::measures::{read_measure, sample_mixture_with, DiscreteMeasure, GaussianComponent};
use config::{DynamicsSpec, InitialKind, ModeSpec, OrderSpec, TargetKind};

const STREAM_TARGET: u64 = 1;
const STREAM_INITIAL: u64 = 2;
const STREAM_SYSTEM: u64 = 3;
const STREAM_PROTOCOL: u64 = 4;
const STREAM_ORDER: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Everything needed to start a simulation, with all defaults resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: AgentModel,
    pub targets: DiscreteMeasure,
    pub initial: Vec<DVector<f64>>,
    pub engine: EngineConfig,
}

impl Scenario {
    pub fn simulation(&self) -> Result<Simulation> {
        Simulation::new(
            self.model.clone(),
            self.targets.clone(),
            self.initial.clone(),
            self.engine.clone(),
        )
    }
}

fn rows_to_matrix(key: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::config(key, "must be a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A slowly contracting planar rotation driven through one random input
/// direction, redrawn until controllable with a usable Gramian.
fn generate_lti(rng: &mut ChaCha8Rng, horizon: usize) -> Result<LtiModel> {
    for _ in 0..1000 {
        let theta: f64 = rng.random_range(0.05..0.3);
        let rho: f64 = rng.random_range(0.95..1.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        let a = DMatrix::from_row_slice(2, 2, &[rho * c, -rho * s, rho * s, rho * c]);
        let b = DMatrix::from_row_slice(2, 1, &[phi.cos(), phi.sin()]);
        if let Ok(model) = LtiModel::new(a, b, horizon) {
            if model.gramian().is_ok() {
                return Ok(model);
            }
        }
    }
    Err(Error::config("lti", "could not draw a controllable system"))
}

fn initial_states(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
    let d = &cfg.domain;
    let points: Vec<[f64; 2]> = match cfg.initial.kind {
        InitialKind::Concentrated => {
            let c = cfg.initial.center.expect("validated");
            let w = cfg.initial.half_width.expect("validated");
            (0..cfg.agents)
                .map(|_| {
                    [
                        rng.random_range(c[0] - w..c[0] + w),
                        rng.random_range(c[1] - w..c[1] + w),
                    ]
                })
                .collect()
        }
        InitialKind::Uniform => (0..cfg.agents)
            .map(|_| {
                [
                    rng.random_range(d.min[0]..d.max[0]),
                    rng.random_range(d.min[1]..d.max[1]),
                ]
            })
            .collect(),
        InitialKind::File => {
            let m = read_measure(cfg.initial.path.as_ref().expect("validated"))?;
            if m.dim() != 2 {
                return Err(Error::config("initial.path", "initial positions must be planar"));
            }
            if m.len() != cfg.agents {
                return Err(Error::config("agents", format!("file holds {} positions", m.len())));
            }
            m.points().iter().map(|p| [p[0], p[1]]).collect()
        }
    };
    Ok(points
        .into_iter()
        .map(|[x, y]| match cfg.dynamics {
            DynamicsSpec::Lti => DVector::from_vec(vec![x, y]),
            DynamicsSpec::Unicycle => {
                let heading = cfg
                    .initial
                    .heading
                    .unwrap_or_else(|| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
                DVector::from_vec(vec![x, y, heading])
            }
        })
        .collect())
}

fn targets(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<DiscreteMeasure> {
    match cfg.target.kind {
        TargetKind::Mixture => {
            let mixture: Vec<GaussianComponent> = cfg
                .target
                .components
                .iter()
                .map(|c| GaussianComponent {
                    mean: DVector::from_row_slice(&c.mean),
                    covariance: DMatrix::from_row_slice(2, 2, &[c.cov[0][0], c.cov[0][1], c.cov[1][0], c.cov[1][1]]),
                    weight: c.weight,
                })
                .collect();
            sample_mixture_with(&mixture, cfg.samples, rng)
        }
        TargetKind::File => {
            let m = read_measure(cfg.target.path.as_ref().expect("validated"))?;
            if m.dim() != 2 {
                return Err(Error::config("target.path", "targets must be planar"));
            }
            Ok(m)
        }
    }
}

/// Resolves defaults, draws targets, initial states and (if needed) the
/// system matrices.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    let seed = cfg.seed;

    let model = match cfg.dynamics {
        DynamicsSpec::Lti => {
            let lti = match (&cfg.lti.a, &cfg.lti.b) {
                (Some(a), Some(b)) => {
                    let a = rows_to_matrix("lti.a", a)?;
                    let b = rows_to_matrix("lti.b", b)?;
                    if a.nrows() != 2 {
                        return Err(Error::config("lti.a", "agents move in the plane, so A must be 2x2"));
                    }
                    LtiModel::new(a, b, cfg.horizon).map_err(|e| Error::config("lti", e.to_string()))?
                }
                (None, None) => {
                    let system_seed = *cfg.lti.system_seed.get_or_insert(seed);
                    generate_lti(&mut stream(system_seed, STREAM_SYSTEM), cfg.horizon)?
                }
                _ => return Err(Error::config("lti", "give both a and b, or neither")),
            };
            cfg.lti.a = Some(matrix_to_rows(lti.a()));
            cfg.lti.b = Some(matrix_to_rows(lti.b()));
            AgentModel::Lti(lti)
        }
        DynamicsSpec::Unicycle => {
            let u = &mut cfg.unicycle;
            let dt = *u.dt.get_or_insert(0.1);
            let lookahead = *u.lookahead.get_or_insert(0.1 * cfg.domain.diagonal() / 10.0);
            let r = *u.control_penalty.get_or_insert(1e-2);
            AgentModel::Unicycle(Unicycle::new(dt, lookahead, DMatrix::identity(2, 2) * r)?)
        }
    };

    let targets = targets(&cfg, &mut stream(seed, STREAM_TARGET))?;
    cfg.samples = targets.len();
    let initial = initial_states(&cfg, &mut stream(seed, STREAM_INITIAL))?;

    let order = match &cfg.agent_order {
        OrderSpec::Named(s) if s == "shuffled" => AgentOrder::Shuffled {
            seed: stream(seed, STREAM_ORDER).next_u64(),
        },
        OrderSpec::Named(_) => AgentOrder::Ascending,
        OrderSpec::Permutation(p) => AgentOrder::Permutation(p.clone()),
    };
    let engine = EngineConfig {
        mode: match cfg.mode {
            ModeSpec::Centralized => Mode::Centralized,
            ModeSpec::Decentralized => Mode::Decentralized,
        },
        horizon: cfg.horizon,
        cycles: cfg.cycles,
        order,
        comm_range: cfg.comm_range,
        decentral: DecentralOptions {
            gamma: cfg.gamma,
            staleness: cfg.memory.staleness,
            drop_probability: cfg.memory.drop_probability,
        },
        w2_every_step: cfg.w2_every_step,
        seed: stream(seed, STREAM_PROTOCOL).next_u64(),
    };
    Ok(Scenario {
        config: cfg,
        model,
        targets,
        initial,
        engine,
    })
}

/// Where a run's configuration comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigSource {
    File(PathBuf),
    Preset(String),
}

/// Command-line overrides applied on top of the configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub cycles: Option<usize>,
}

pub fn load_config(source: &ConfigSource, overrides: &Overrides) -> Result<ScenarioConfig> {
    let mut cfg = match source {
        ConfigSource::File(p) => parse_config(p)?,
        ConfigSource::Preset(name) => {
            let text = preset(name).ok_or_else(|| {
                Error::config(
                    "preset",
                    format!("unknown preset `{name}`; available: {}", PRESET_NAMES.join(", ")),
                )
            })?;
            parse_config_str(&text)?
        }
    };
    if let Some(s) = overrides.seed {
        cfg.seed = s;
        // A generated system follows the run seed unless pinned explicitly.
        if cfg.lti.a.is_none() {
            cfg.lti.system_seed = None;
        }
    }
    if let Some(o) = &overrides.out {
        cfg.output_dir = o.clone();
    }
    if let Some(c) = overrides.cycles {
        cfg.cycles = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    seed: u64,
    status: String,
    cycles_completed: usize,
    initial_w2: f64,
    final_w2: f64,
    descent_ok_all: bool,
    bound_ok_all: bool,
    config: &'a ScenarioConfig,
}

/// Result of [`execute`]: the finished (or aborted) simulation and its error.
pub struct RunOutcome {
    pub scenario: Scenario,
    pub simulation: Simulation,
    pub error: Option<Error>,
}

impl RunOutcome {
    pub fn record(&self) -> &MetricsRecord {
        self.simulation.record()
    }
}

/// Runs a resolved configuration and writes all artifacts into
/// `cfg.output_dir`. An aborted run still writes what it recorded.
pub fn execute(cfg: &ScenarioConfig) -> Result<RunOutcome> {
    let scenario = build_scenario(cfg)?;
    let mut sim = scenario.simulation()?;
    let mut error = None;
    while sim.state().cycle < scenario.engine.cycles {
        if let Err(e) = sim.step_cycle() {
            log::error!("run aborted: {e}");
            error = Some(e);
            break;
        }
    }
    write_artifacts(&scenario, &sim, error.as_ref())?;
    Ok(RunOutcome {
        scenario,
        simulation: sim,
        error,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_artifacts(scenario: &Scenario, sim: &Simulation, error: Option<&Error>) -> Result<()> {
    let dir = &scenario.config.output_dir;
    std::fs::create_dir_all(dir)?;
    let record = sim.record();
    record.write_csv(create(dir, "metrics.csv")?)?;
    sim.write_trajectories(create(dir, "trajectories.csv")?)?;
    if scenario.config.w2_every_step {
        record.write_trace_csv(create(dir, "w2_trace.csv")?)?;
    }
    std::fs::write(dir.join("config.toml"), scenario.config.to_toml())?;

    let manifest = Manifest {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: scenario.config.seed,
        status: error.map_or_else(|| "ok".to_string(), |e| format!("aborted: {e}")),
        cycles_completed: record.cycles.len(),
        initial_w2: record.initial_w2,
        final_w2: record.final_w2(),
        descent_ok_all: record.cycles.iter().all(|c| c.descent_ok),
        bound_ok_all: record.cycles.iter().all(|c| c.bound_ok),
        config: &scenario.config,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), json + "\n")?;

    emit_snapshot(&snapshot_of(scenario, sim), dir.join("snapshot.svg"))
}

/// Snapshot of a simulation: start, end, and every recorded position.
pub fn snapshot_of(scenario: &Scenario, sim: &Simulation) -> Snapshot {
    let model = sim.model();
    let traj = sim.trajectory();
    let m = sim.n_agents();
    let paths: Vec<Vec<DVector<f64>>> = (0..m)
        .map(|i| traj.iter().map(|row| model.position(&row[i])).collect())
        .collect();
    let d = &scenario.config.domain;
    Snapshot {
        targets: sim.targets().points().to_vec(),
        initial: paths.iter().map(|p| p[0].clone()).collect(),
        last: paths.iter().map(|p| p.last().unwrap().clone()).collect(),
        paths,
        bounds: (d.min, d.max),
    }
}

/// Loads, runs and reports; returns the process exit code.
pub fn run(source: &ConfigSource, overrides: &Overrides) -> i32 {
    let outcome = load_config(source, overrides).and_then(|cfg| execute(&cfg));
    match outcome {
        Ok(RunOutcome {
            error: None,
            scenario,
            simulation,
        }) => {
            log::info!(
                "wrote {} (final W2 {:.6})",
                scenario.config.output_dir.display(),
                simulation.record().final_w2()
            );
            0
        }
        Ok(RunOutcome { error: Some(e), .. }) | Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
