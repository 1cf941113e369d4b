use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{create, io_err, ExpError, MIDS_FILE, TRADES_FILE};
use crate::data::lobster::{parse_lobster, MessageType};
use crate::lob::Nanos;
use crate::stylized::{PriceSeries, ReportConfig, StylizedFactsReport};

type Series = Vec<(Nanos, f64)>;

/// A trace to score: a simulation output directory or a LOBSTER file pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceSource {
    Trace(PathBuf),
    Lobster { messages: PathBuf, book: PathBuf },
}

impl TraceSource {
    pub fn id(&self) -> String {
        match self {
            TraceSource::Trace(p) => p.display().to_string(),
            TraceSource::Lobster { messages, .. } => messages.display().to_string(),
        }
    }

    /// Mid-price observations and executions `(time, volume)`.
    fn load(&self) -> Result<(Series, Series), ExpError> {
        match self {
            TraceSource::Trace(dir) => {
                let mids = read_csv(&dir.join(MIDS_FILE), 2)?;
                let trades = read_csv(&dir.join(TRADES_FILE), 3)?;
                Ok((mids.iter().map(|r| (r[0] as Nanos, r[1])).collect(), trades.iter().map(|r| (r[0] as Nanos, r[2])).collect()))
            }
            TraceSource::Lobster { messages, book } => {
                let s = parse_lobster(messages, book)?;
                let mids = s.rows.iter().filter_map(|(m, b)| b.mid_price().map(|p| (m.time.nanos, p.ticks()))).collect();
                let trades = s
                    .rows
                    .iter()
                    .filter(|(m, _)| matches!(m.kind, MessageType::ExecuteVisible | MessageType::ExecuteHidden))
                    .map(|(m, _)| (m.time.nanos, m.size as f64))
                    .collect();
                Ok((mids, trades))
            }
        }
    }
}

/// Numeric CSV with a header row; keeps the first `cols` columns.
fn read_csv(path: &Path, cols: usize) -> Result<Vec<Vec<f64>>, ExpError> {
    if !path.exists() {
        return Err(ExpError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let row: Result<Vec<f64>, _> = line.split(',').take(cols).map(str::parse::<f64>).collect();
        match row {
            Ok(r) if r.len() == cols => rows.push(r),
            _ => return Err(ExpError::Invalid(format!("{}:{}: malformed row", path.display(), i + 1))),
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealismReport {
    pub reports: Vec<StylizedFactsReport>,
}

impl RealismReport {
    /// `realism.json`, `realism_curves.csv`, `realism_kurtosis.csv` and `realism_summary.csv`.
    pub fn write(&self, dir: &Path) -> Result<(), ExpError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("realism.json");
        fs::write(&path, serde_json::to_string_pretty(self).expect("report serializes")).map_err(io_err(&path))?;
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());

        let path = dir.join("realism_curves.csv");
        let mut out = create(&path)?;
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "trace,lag,autocorrelation,volatility_clustering,band")?;
            for r in &self.reports {
                for (a, v) in r.autocorrelation.iter().zip(&r.volatility_clustering) {
                    writeln!(out, "{},{},{},{},{}", r.trace_id, a.lag, cell(a.value), cell(v.value), cell(r.band))?;
                }
            }
            out.flush()
        };
        write().map_err(io_err(&path))?;

        let path = dir.join("realism_kurtosis.csv");
        let mut out = create(&path)?;
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "trace,step,returns,excess_kurtosis")?;
            for r in &self.reports {
                for k in &r.kurtosis {
                    writeln!(out, "{},{},{},{}", r.trace_id, k.step, k.returns, cell(k.excess_kurtosis))?;
                }
            }
            out.flush()
        };
        write().map_err(io_err(&path))?;

        let path = dir.join("realism_summary.csv");
        let mut out = create(&path)?;
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "trace,prices,returns,volume_volatility")?;
            for r in &self.reports {
                writeln!(out, "{},{},{},{}", r.trace_id, r.prices, r.returns, cell(r.volume_volatility))?;
            }
            out.flush()
        };
        write().map_err(io_err(&path))
    }
}

/// Volume traded in `[t_i, t_{i+1})` for consecutive grid times.
fn bucket_volumes(times: &[Nanos], trades: &[(Nanos, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; times.len().saturating_sub(1)];
    for &(t, v) in trades {
        let i = times.partition_point(|g| *g <= t);
        if i >= 1 && i < times.len() {
            out[i - 1] += v;
        }
    }
    out
}

/// Stylized-facts report for one source on a `config.grid` resampling.
pub fn score(source: &TraceSource, config: &ReportConfig) -> Result<StylizedFactsReport, ExpError> {
    let (mids, trades) = source.load()?;
    let (Some(first), Some(last)) = (mids.first(), mids.last()) else {
        return Err(ExpError::Invalid(format!("{}: no mid-prices", source.id())));
    };
    let prices = PriceSeries::resample(&mids, first.0, last.0, config.grid)?;
    let volumes = bucket_volumes(prices.times(), &trades);
    let volumes = (!volumes.is_empty()).then_some(volumes);
    Ok(StylizedFactsReport::compute(source.id(), &prices, volumes.as_deref(), config)?)
}

/// Side-by-side reports for at least two traces.
pub fn realism(sources: &[TraceSource], config: &ReportConfig) -> Result<RealismReport, ExpError> {
    if sources.len() < 2 {
        return Err(ExpError::TooFew { what: "traces", needed: 2, found: sources.len() });
    }
    let reports = sources.iter().map(|s| score(s, config)).collect::<Result<_, _>>()?;
    Ok(RealismReport { reports })
}
