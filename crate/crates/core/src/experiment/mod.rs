//! Configuration-driven experiments: training, simulation, market impact and
//! realism reports.

mod config;
mod impact;
mod realism;
mod training;

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::agents::{AgentsError, CganWorldAgent, CganWorldConfig, PovAgent, PovStats, ReplayAgent, ReplayStats, WorldKind, WorldModel, WorldStats};
use crate::cgan::{Checkpoint, ModelError};
use crate::data::lobster::{parse_lobster, LobsterError, LobsterSession};
use crate::data::{FeatureScalers, ScalerError};
use crate::exchange::{write_mid_series, Exchange, ExchangeRecords};
use crate::kernel::{EventLog, Kernel, KernelConfig, KernelError, NANOS_PER_SEC};
use crate::lob::{MidPrice, Nanos, DEFAULT_DEPTH};
use crate::stylized::StatsError;

pub use config::{AgentSpec, ClockTime, ImpactSettings, PovSpec, SessionTimes, SimConfig, TrainingSettings};
pub use impact::{impact, BandPoint, ImpactReport, LambdaSection, SignTest};
pub use realism::{realism, RealismReport, TraceSource};
pub use training::{train, TrainOutput};

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("config schema error in {path}: {source}")]
    Schema {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{count} malformed LOBSTER rows, first: {first}")]
    DataIssues { count: usize, first: String },
    #[error("need at least {needed} {what}, got {found}")]
    TooFew { what: &'static str, needed: usize, found: usize },
    #[error(transparent)]
    Lobster(#[from] LobsterError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scaler(#[from] ScalerError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Agents(#[from] AgentsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExpError + '_ {
    move |source| ExpError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>, ExpError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Historical data plus, in CGAN mode, the trained model.
#[derive(Debug, Clone)]
pub struct World {
    pub kind: WorldKind,
    pub session: Arc<LobsterSession>,
    pub model: Option<Arc<WorldModel>>,
}

impl World {
    pub fn replay(session: LobsterSession) -> Self {
        World { kind: WorldKind::Replay, session: Arc::new(session), model: None }
    }

    pub fn cgan(session: LobsterSession, model: WorldModel) -> Self {
        World { kind: WorldKind::Cgan, session: Arc::new(session), model: Some(Arc::new(model)) }
    }

    /// Load the data and, for CGAN mode, the checkpoint and scalers named in `cfg`.
    pub fn load(cfg: &SimConfig) -> Result<Self, ExpError> {
        let session = parse_lobster(&cfg.messages, &cfg.book)?;
        match cfg.world {
            WorldKind::Replay => Ok(Self::replay(session)),
            WorldKind::Cgan => Ok(Self::cgan(session, load_model(cfg)?)),
        }
    }
}

/// Checkpoint plus scalers: the explicit scaler path, else the one recorded
/// in the checkpoint, else `scalers.json` beside it.
pub fn load_model(cfg: &SimConfig) -> Result<WorldModel, ExpError> {
    let ck_path = cfg.checkpoint.as_ref().ok_or_else(|| ExpError::Invalid("cgan world needs a checkpoint".into()))?;
    let ck = Checkpoint::load(ck_path)?;
    let dir = ck_path.parent().unwrap_or(Path::new("."));
    let scaler_path = cfg
        .scalers
        .clone()
        .or_else(|| ck.scaler_file.as_ref().map(|f| dir.join(f)))
        .unwrap_or_else(|| dir.join("scalers.json"));
    if !scaler_path.exists() {
        return Err(ExpError::MissingFile(scaler_path));
    }
    let scalers = FeatureScalers::load(&scaler_path)?;
    Ok(WorldModel { generator: ck.sampler()?, scalers, price_tick: cfg.training.price_tick })
}

/// Everything one kernel run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub log: EventLog,
    pub records: ExchangeRecords,
    pub replay: Option<ReplayStats>,
    pub world: Option<WorldStats>,
    pub pov: Vec<PovStats>,
}

impl RunOutput {
    pub fn mid_grid(&self, from: Nanos, to: Nanos, step: Nanos) -> Vec<(Nanos, MidPrice)> {
        self.records.mid_grid(from, to, step)
    }
}

/// One serial run: exchange, world agent, then the experimental agents, in
/// that registration order so agent ids and RNG streams do not depend on
/// which experimental agents are present.
pub fn run_once(cfg: &SimConfig, world: &World, seed: u64, agents: &[AgentSpec]) -> Result<RunOutput, ExpError> {
    let times = cfg.session;
    let mut k = Kernel::new(KernelConfig { start_time: times.start.0, end_time: times.end.0, seed, latency: cfg.latency_ns })?;
    let ex = k.register_agent(Box::new(Exchange::new()))?;
    let w = match world.kind {
        WorldKind::Replay => k.register_agent(Box::new(ReplayAgent::new(ex, &world.session.rows)))?,
        WorldKind::Cgan => {
            let model = world.model.clone().ok_or_else(|| ExpError::Invalid("cgan world without a model".into()))?;
            let wc = CganWorldConfig {
                session_open: times.open.0,
                warmup: (cfg.warmup_secs * NANOS_PER_SEC as f64).round() as Nanos,
                ttl: cfg.order_ttl_secs.map(|s| (s * NANOS_PER_SEC as f64).round() as Nanos),
                depth: DEFAULT_DEPTH,
            };
            k.register_agent(Box::new(CganWorldAgent::new(ex, model, wc, &world.session, times.start.0)?))?
        }
    };
    let mut pov_ids = Vec::new();
    for spec in agents {
        match spec {
            AgentSpec::Pov(p) => pov_ids.push(k.register_agent(Box::new(PovAgent::new(ex, p.to_config())?))?),
        }
    }
    let log = k.run()?;
    let records = k.agent::<Exchange>(ex).expect("exchange registered").records().clone();
    let (replay, world_stats) = match world.kind {
        WorldKind::Replay => (k.agent::<ReplayAgent>(w).map(|a| a.stats()), None),
        WorldKind::Cgan => (None, k.agent::<CganWorldAgent>(w).map(|a| a.stats())),
    };
    let pov = pov_ids.iter().filter_map(|id| k.agent::<PovAgent>(*id).map(|a| a.stats())).collect();
    Ok(RunOutput { seed, log, records, replay, world: world_stats, pov })
}

pub const EVENTS_FILE: &str = "events.csv";
pub const ORDERS_FILE: &str = "orders.csv";
pub const MIDS_FILE: &str = "mid.csv";
pub const TRADES_FILE: &str = "trades.csv";
pub const CONFIG_ECHO: &str = "config.json";

/// Write the four trace files and a config echo into `dir`.
pub fn write_trace(cfg: &SimConfig, run: &RunOutput, dir: &Path) -> Result<(), ExpError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(EVENTS_FILE);
    run.log.write_csv(create(&path)?).map_err(io_err(&path))?;
    let path = dir.join(ORDERS_FILE);
    run.records.write_order_log(create(&path)?).map_err(io_err(&path))?;
    let path = dir.join(MIDS_FILE);
    let grid = run.mid_grid(cfg.session.start.0, cfg.session.end.0, NANOS_PER_SEC);
    write_mid_series(&grid, create(&path)?).map_err(io_err(&path))?;
    let path = dir.join(TRADES_FILE);
    run.records.write_trades(create(&path)?).map_err(io_err(&path))?;
    let path = dir.join(CONFIG_ECHO);
    fs::write(&path, cfg.to_json()).map_err(io_err(&path))?;
    Ok(())
}

/// Run every configured seed and write one trace directory per seed.
pub fn simulate(cfg: &SimConfig, world: &World) -> Result<Vec<PathBuf>, ExpError> {
    cfg.validate()?;
    let mut dirs = Vec::new();
    for &seed in &cfg.seeds {
        let run = run_once(cfg, world, seed, &cfg.agents)?;
        let dir = cfg.output.join(format!("seed-{seed}"));
        write_trace(cfg, &run, &dir)?;
        if let Some(s) = run.replay {
            log::info!("seed {seed}: replay divergent executions {} of {}", s.divergent_executions, s.executions);
        }
        dirs.push(dir);
    }
    Ok(dirs)
}
