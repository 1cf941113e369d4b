//! Stylized-facts metrics over resampled mid-price and volume series.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::NANOS_PER_SEC;
use crate::lob::{MidPrice, Nanos};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("non-positive price {value} at index {index}")]
    NonPositivePrice { index: usize, value: f64 },
    #[error("timestamps not strictly increasing at index {0}")]
    NotIncreasing(usize),
    #[error("need at least {needed} observations, found {found}")]
    TooShort { needed: usize, found: usize },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Mid-prices on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    times: Vec<Nanos>,
    mids: Vec<f64>,
}

impl PriceSeries {
    pub fn new(times: Vec<Nanos>, mids: Vec<f64>) -> Result<Self, StatsError> {
        if times.len() != mids.len() {
            return Err(StatsError::LengthMismatch(times.len(), mids.len()));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(StatsError::NotIncreasing(i + 1));
        }
        if let Some(i) = mids.iter().position(|m| !(*m > 0.0)) {
            return Err(StatsError::NonPositivePrice { index: i, value: mids[i] });
        }
        Ok(PriceSeries { times, mids })
    }

    /// Prices at `from, from + step, ..., ≤ to`, carrying the last observation
    /// forward. Grid points before the first observation are dropped.
    pub fn resample(points: &[(Nanos, f64)], from: Nanos, to: Nanos, step: Nanos) -> Result<Self, StatsError> {
        if step <= 0 {
            return Err(StatsError::InvalidParameter("grid step must be positive".into()));
        }
        let (mut times, mut mids) = (Vec::new(), Vec::new());
        let mut last = None;
        let mut i = 0;
        let mut t = from;
        while t <= to {
            while i < points.len() && points[i].0 <= t {
                last = Some(points[i].1);
                i += 1;
            }
            if let Some(m) = last {
                times.push(t);
                mids.push(m);
            }
            t += step;
        }
        Self::new(times, mids)
    }

    pub fn from_mid_grid(grid: &[(Nanos, MidPrice)]) -> Result<Self, StatsError> {
        Self::new(grid.iter().map(|(t, _)| *t).collect(), grid.iter().map(|(_, m)| m.ticks()).collect())
    }

    pub fn len(&self) -> usize {
        self.mids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mids.is_empty()
    }

    pub fn times(&self) -> &[Nanos] {
        &self.times
    }

    pub fn mids(&self) -> &[f64] {
        &self.mids
    }

    /// Grid spacing, if at least two points.
    pub fn step(&self) -> Option<Nanos> {
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }
}

/// Non-overlapping log-returns over `step` grid intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub step: usize,
    pub values: Vec<f64>,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `r_i = ln m((i+1)·step) − ln m(i·step)`.
pub fn log_returns(series: &PriceSeries, step: usize) -> Result<ReturnSeries, StatsError> {
    if step == 0 {
        return Err(StatsError::InvalidParameter("aggregation step must be positive".into()));
    }
    if series.len() <= step {
        return Err(StatsError::TooShort { needed: step + 1, found: series.len() });
    }
    let sampled: Vec<f64> = series.mids.iter().step_by(step).copied().collect();
    let values = sampled.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    Ok(ReturnSeries { step, values })
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooShort { needed: 2, found: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    // centered sums at rounding level mean a constant series
    let floor = |v: &[f64]| {
        let m = v.iter().fold(0.0f64, |acc, a| acc.max(a.abs()));
        n * (n * f64::EPSILON * m).powi(2)
    };
    if sxx <= floor(x) || syy <= floor(y) {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn lagged(values: &[f64], lag: usize) -> Result<f64, StatsError> {
    if values.len() < lag + 2 {
        return Err(StatsError::TooShort { needed: lag + 2, found: values.len() });
    }
    pearson(&values[..values.len() - lag], &values[lag..])
}

/// `corr(r_t, r_{t+τ})` over the `n − τ` overlapping pairs.
pub fn autocorrelation(returns: &ReturnSeries, lag: usize) -> Result<f64, StatsError> {
    lagged(&returns.values, lag)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolatilityMeasure {
    #[default]
    Absolute,
    Squared,
}

/// `corr(|r_t|, |r_{t+τ}|)`, or of squared returns.
pub fn volatility_clustering(returns: &ReturnSeries, lag: usize, measure: VolatilityMeasure) -> Result<f64, StatsError> {
    let v: Vec<f64> = match measure {
        VolatilityMeasure::Absolute => returns.values.iter().map(|r| r.abs()).collect(),
        VolatilityMeasure::Squared => returns.values.iter().map(|r| r * r).collect(),
    };
    lagged(&v, lag)
}

/// Correlation between traded volume and absolute return per bucket.
pub fn volume_volatility_correlation(volumes: &[f64], abs_returns: &[f64]) -> Result<f64, StatsError> {
    pearson(volumes, abs_returns)
}

/// `m4 / m2² − 3` with population moments.
pub fn excess_kurtosis(values: &[f64]) -> Result<f64, StatsError> {
    if values.len() < 4 {
        return Err(StatsError::TooShort { needed: 4, found: values.len() });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in values {
        let d = (v - mean) * (v - mean);
        m2 += d;
        m4 += d * d;
    }
    m2 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

pub const MIN_KURTOSIS_RETURNS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtosisEntry {
    /// Aggregation period in grid steps.
    pub step: usize,
    pub returns: usize,
    /// `None` when skipped for lack of data or zero variance.
    pub excess_kurtosis: Option<f64>,
}

pub fn aggregation_kurtosis(series: &PriceSeries, steps: &[usize]) -> Vec<KurtosisEntry> {
    steps
        .iter()
        .map(|&step| {
            let returns = log_returns(series, step).map(|r| r.values).unwrap_or_default();
            let k = if returns.len() >= MIN_KURTOSIS_RETURNS { excess_kurtosis(&returns).ok() } else { None };
            KurtosisEntry { step, returns: returns.len(), excess_kurtosis: k }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub grid: Nanos,
    pub max_lag: usize,
    /// Aggregation periods for the kurtosis table, in grid steps.
    pub kurtosis_steps: Vec<usize>,
    pub volatility: VolatilityMeasure,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { grid: 60 * NANOS_PER_SEC, max_lag: 30, kurtosis_steps: vec![1, 5, 15, 30], volatility: VolatilityMeasure::Absolute }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagValue {
    pub lag: usize,
    /// `None` when undefined.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizedFactsReport {
    pub trace_id: String,
    pub grid_secs: f64,
    pub prices: usize,
    pub returns: usize,
    /// `2/√n` significance band for the correlation curves.
    pub band: Option<f64>,
    pub autocorrelation: Vec<LagValue>,
    pub volatility_clustering: Vec<LagValue>,
    pub volume_volatility: Option<f64>,
    pub kurtosis: Vec<KurtosisEntry>,
}

impl StylizedFactsReport {
    /// `volumes[i]` is the traded volume over the interval of return `i`.
    pub fn compute(
        trace_id: impl Into<String>,
        prices: &PriceSeries,
        volumes: Option<&[f64]>,
        config: &ReportConfig,
    ) -> Result<Self, StatsError> {
        // too few prices leaves every metric undefined rather than failing
        let r = log_returns(prices, 1).unwrap_or(ReturnSeries { step: 1, values: Vec::new() });
        let curve = |f: &dyn Fn(usize) -> Result<f64, StatsError>| -> Vec<LagValue> {
            (1..=config.max_lag).map(|lag| LagValue { lag, value: f(lag).ok() }).collect()
        };
        let volume_volatility = match volumes {
            Some(v) if !r.is_empty() => {
                if v.len() != r.len() {
                    return Err(StatsError::LengthMismatch(v.len(), r.len()));
                }
                let abs: Vec<f64> = r.values.iter().map(|x| x.abs()).collect();
                volume_volatility_correlation(v, &abs).ok()
            }
            _ => None,
        };
        Ok(StylizedFactsReport {
            trace_id: trace_id.into(),
            grid_secs: config.grid as f64 / NANOS_PER_SEC as f64,
            prices: prices.len(),
            returns: r.len(),
            band: (!r.is_empty()).then(|| 2.0 / (r.len() as f64).sqrt()),
            autocorrelation: curve(&|lag| autocorrelation(&r, lag)),
            volatility_clustering: curve(&|lag| volatility_clustering(&r, lag, config.volatility)),
            volume_volatility,
            kurtosis: aggregation_kurtosis(prices, &config.kurtosis_steps),
        })
    }

    /// `lag,autocorrelation,volatility_clustering`; undefined values are empty.
    pub fn write_curves_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "lag,autocorrelation,volatility_clustering")?;
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for (a, v) in self.autocorrelation.iter().zip(&self.volatility_clustering) {
            writeln!(out, "{},{},{}", a.lag, cell(a.value), cell(v.value))?;
        }
        Ok(())
    }

    /// `step,returns,excess_kurtosis`; skipped periods are empty.
    pub fn write_kurtosis_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,returns,excess_kurtosis")?;
        for k in &self.kurtosis {
            writeln!(out, "{},{},{}", k.step, k.returns, k.excess_kurtosis.map_or(String::new(), |x| x.to_string()))?;
        }
        Ok(())
    }
}
