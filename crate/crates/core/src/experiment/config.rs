use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{io_err, ExpError};
use crate::agents::{PovConfig, WorldKind};
use crate::cgan::{ModelConfig, TrainConfig};
use crate::kernel::{clock, NANOS_PER_SEC};
use crate::lob::{Nanos, Side};
use crate::stylized::ReportConfig;

/// Time of day written as `HH:MM:SS` with optional fractional seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClockTime(pub Nanos);

impl FromStr for ClockTime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected HH:MM:SS[.fff], got {s:?}");
        let mut parts = s.split(':');
        let (Some(h), Some(m), Some(sec), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let h: i64 = h.parse().map_err(|_| bad())?;
        let m: i64 = m.parse().map_err(|_| bad())?;
        let (whole, frac) = sec.split_once('.').unwrap_or((sec, ""));
        let whole: i64 = whole.parse().map_err(|_| bad())?;
        if !(0..24).contains(&h) || !(0..60).contains(&m) || !(0..60).contains(&whole) || frac.len() > 9 {
            return Err(bad());
        }
        let frac_ns = if frac.is_empty() {
            0
        } else {
            let digits: i64 = frac.parse().map_err(|_| bad())?;
            digits * 10i64.pow(9 - frac.len() as u32)
        };
        Ok(ClockTime(clock(h, m, whole) + frac_ns))
    }
}

impl fmt::Display for ClockTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let secs = self.0.div_euclid(NANOS_PER_SEC);
        let ns = self.0.rem_euclid(NANOS_PER_SEC);
        write!(f, "{:02}:{:02}:{:02}", secs / 3600, secs / 60 % 60, secs % 60)?;
        if ns != 0 {
            write!(f, ".{ns:09}")?;
        }
        Ok(())
    }
}

impl Serialize for ClockTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClockTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionTimes {
    /// Market open; the time-of-day feature counts from here.
    pub open: ClockTime,
    pub start: ClockTime,
    pub end: ClockTime,
}

impl Default for SessionTimes {
    fn default() -> Self {
        SessionTimes { open: ClockTime(clock(9, 30, 0)), start: ClockTime(clock(9, 30, 0)), end: ClockTime(clock(16, 0, 0)) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PovSpec {
    pub lambda: f64,
    pub wakeup_secs: f64,
    pub side: Side,
    pub target: u64,
    pub start: ClockTime,
    pub end: ClockTime,
}

impl Default for PovSpec {
    fn default() -> Self {
        let d = PovConfig::default();
        PovSpec {
            lambda: d.lambda,
            wakeup_secs: d.wakeup_period as f64 / NANOS_PER_SEC as f64,
            side: d.side,
            target: d.target,
            start: ClockTime(d.start),
            end: ClockTime(d.end),
        }
    }
}

impl PovSpec {
    pub fn to_config(&self) -> PovConfig {
        PovConfig {
            lambda: self.lambda,
            wakeup_period: (self.wakeup_secs * NANOS_PER_SEC as f64).round() as Nanos,
            side: self.side,
            target: self.target,
            start: self.start.0,
            end: self.end.0,
        }
    }
}

/// Experimental agents added next to the world agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum AgentSpec {
    Pov(PovSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpactSettings {
    pub lambdas: Vec<f64>,
    /// POV template; its `lambda` is replaced by each entry of `lambdas`.
    pub pov: PovSpec,
    pub grid_secs: f64,
    /// Slice written to the per-λ CSV files.
    pub report_from: ClockTime,
    pub report_to: ClockTime,
    /// Start of the post-activity decay window.
    pub decay_after: ClockTime,
}

impl Default for ImpactSettings {
    fn default() -> Self {
        ImpactSettings {
            lambdas: vec![0.01, 0.1, 0.25],
            pov: PovSpec::default(),
            grid_secs: 1.0,
            report_from: ClockTime(clock(10, 0, 0)),
            report_to: ClockTime(clock(12, 0, 0)),
            decay_after: ClockTime(clock(11, 5, 0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Price grid generated orders are snapped to.
    pub price_tick: i64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings { model: ModelConfig::default(), train: TrainConfig::default(), price_tick: 100 }
    }
}

fn default_warmup() -> f64 {
    1800.0
}

fn default_ttl() -> Option<f64> {
    Some(300.0)
}

fn default_seeds() -> Vec<u64> {
    (0..50).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub symbol: String,
    /// LOBSTER message file.
    pub messages: PathBuf,
    /// LOBSTER order book file.
    pub book: PathBuf,
    #[serde(default)]
    pub session: SessionTimes,
    #[serde(default)]
    pub world: WorldKind,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub scalers: Option<PathBuf>,
    #[serde(default = "default_warmup")]
    pub warmup_secs: f64,
    /// Lifetime of generated orders; `null` keeps them until filled.
    #[serde(default = "default_ttl")]
    pub order_ttl_secs: Option<f64>,
    #[serde(default)]
    pub latency_ns: Nanos,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    #[serde(default)]
    pub impact: ImpactSettings,
    #[serde(default)]
    pub training: TrainingSettings,
    #[serde(default)]
    pub realism: ReportConfig,
}

impl SimConfig {
    /// Minimal config over one LOBSTER pair with every default.
    pub fn new(messages: impl Into<PathBuf>, book: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        SimConfig {
            symbol: String::new(),
            messages: messages.into(),
            book: book.into(),
            session: SessionTimes::default(),
            world: WorldKind::default(),
            checkpoint: None,
            scalers: None,
            warmup_secs: default_warmup(),
            order_ttl_secs: default_ttl(),
            latency_ns: 0,
            agents: Vec::new(),
            seeds: default_seeds(),
            output: output.into(),
            impact: ImpactSettings::default(),
            training: TrainingSettings::default(),
            realism: ReportConfig::default(),
        }
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self, ExpError> {
        serde_json::from_str(text).map_err(|source| ExpError::Schema { path: origin.to_path_buf(), source })
    }

    /// Read a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ExpError> {
        if !path.exists() {
            return Err(ExpError::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.messages);
        resolve(&mut cfg.book);
        resolve(&mut cfg.output);
        cfg.checkpoint.as_mut().map(resolve);
        cfg.scalers.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that do not need a model: files, seeds, times, agent parameters.
    pub fn validate(&self) -> Result<(), ExpError> {
        for p in [&self.messages, &self.book] {
            if !p.exists() {
                return Err(ExpError::MissingFile(p.clone()));
            }
        }
        if self.world == WorldKind::Cgan {
            match &self.checkpoint {
                Some(p) if !p.exists() => return Err(ExpError::MissingFile(p.clone())),
                None => return Err(ExpError::Invalid("world \"cgan\" needs a checkpoint".into())),
                _ => {}
            }
        }
        if let Some(p) = &self.scalers {
            if !p.exists() {
                return Err(ExpError::MissingFile(p.clone()));
            }
        }
        self.validate_run()
    }

    /// The parameter checks of [`validate`](Self::validate) without file checks.
    pub fn validate_run(&self) -> Result<(), ExpError> {
        let invalid = |m: String| Err(ExpError::Invalid(m));
        if self.seeds.is_empty() {
            return invalid("no seeds".into());
        }
        let distinct: HashSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return invalid("seeds must be distinct".into());
        }
        let t = self.session;
        if !(t.open <= t.start && t.start < t.end) {
            return invalid(format!("session times must satisfy open <= start < end, got {} {} {}", t.open, t.start, t.end));
        }
        if !(self.warmup_secs >= 0.0) {
            return invalid("warmup_secs must be non-negative".into());
        }
        if self.order_ttl_secs.is_some_and(|s| !(s > 0.0)) {
            return invalid("order_ttl_secs must be positive".into());
        }
        for AgentSpec::Pov(p) in &self.agents {
            p.to_config().validate()?;
        }
        if self.impact.lambdas.is_empty() {
            return invalid("impact lambdas must not be empty".into());
        }
        for &lambda in &self.impact.lambdas {
            PovSpec { lambda, ..self.impact.pov.clone() }.to_config().validate()?;
        }
        if !(self.impact.grid_secs > 0.0) {
            return invalid("impact grid must be positive".into());
        }
        if self.training.price_tick < 1 {
            return invalid("price_tick must be at least 1".into());
        }
        self.training.model.validate()?;
        self.training.train.validate()?;
        Ok(())
    }
}
