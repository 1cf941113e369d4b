use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::statistics::{Data, OrderStatistics};

use super::config::{AgentSpec, ClockTime, PovSpec, SimConfig};
use super::{create, io_err, run_once, ExpError, World};
use crate::kernel::NANOS_PER_SEC;
use crate::lob::Nanos;

/// Quantiles of d(t) across seeds at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub time: Nanos,
    pub seeds: usize,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
}

/// One-sided sign test on per-seed window means of d(t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub positive: usize,
    /// Seeds with a non-zero window mean.
    pub nonzero: usize,
    /// `P(X ≥ positive)` for `X ~ Binomial(nonzero, 1/2)`.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSection {
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub grid: Vec<BandPoint>,
    /// Share of grid points in the active window with a positive median.
    pub window_positive_fraction: f64,
    pub sign_test: SignTest,
    pub window_peak_abs_median: f64,
    /// Largest |median| at or after the decay start.
    pub after_max_abs_median: f64,
    pub pov_transacted: Vec<u64>,
}

impl LambdaSection {
    /// `after_max_abs_median / window_peak_abs_median`.
    pub fn decay_ratio(&self) -> f64 {
        if self.window_peak_abs_median > 0.0 {
            self.after_max_abs_median / self.window_peak_abs_median
        } else {
            0.0
        }
    }

    /// `time,seeds,q05,q25,median,q75,q95` restricted to `[from, to]`.
    pub fn write_csv<W: Write>(&self, mut out: W, from: Nanos, to: Nanos) -> std::io::Result<()> {
        writeln!(out, "time,seeds,q05,q25,median,q75,q95")?;
        for p in self.grid.iter().filter(|p| (from..=to).contains(&p.time)) {
            writeln!(out, "{},{},{},{},{},{},{}", p.time, p.seeds, p.q05, p.q25, p.median, p.q75, p.q95)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub world: String,
    pub grid_secs: f64,
    pub window_start: ClockTime,
    pub window_end: ClockTime,
    pub decay_after: ClockTime,
    pub sections: Vec<LambdaSection>,
}

impl ImpactReport {
    /// `impact.json` plus `impact_lambda_<λ>.csv` per section.
    pub fn write(&self, dir: &Path, from: Nanos, to: Nanos) -> Result<(), ExpError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("impact.json");
        std::fs::write(&path, serde_json::to_string_pretty(self).expect("report serializes")).map_err(io_err(&path))?;
        for s in &self.sections {
            let path = dir.join(format!("impact_lambda_{}.csv", s.lambda));
            s.write_csv(create(&path)?, from, to).map_err(io_err(&path))?;
        }
        Ok(())
    }
}

fn d_series(cfg: &SimConfig, base: &HashMap<Nanos, f64>, with: &super::RunOutput, step: Nanos) -> HashMap<Nanos, f64> {
    with.mid_grid(cfg.session.start.0, cfg.session.end.0, step)
        .into_iter()
        .filter_map(|(t, m)| base.get(&t).map(|b| (t, (m.ticks() - b) / b)))
        .collect()
}

fn band(time: Nanos, values: Vec<f64>) -> BandPoint {
    let seeds = values.len();
    let mut data = Data::new(values);
    BandPoint {
        time,
        seeds,
        q05: data.quantile(0.05),
        q25: data.quantile(0.25),
        median: data.quantile(0.5),
        q75: data.quantile(0.75),
        q95: data.quantile(0.95),
    }
}

pub fn sign_test(window_means: &[f64]) -> SignTest {
    let positive = window_means.iter().filter(|m| **m > 0.0).count();
    let nonzero = window_means.iter().filter(|m| **m != 0.0).count();
    let p_value = if positive == 0 {
        1.0
    } else {
        let b = Binomial::new(0.5, nonzero as u64).expect("valid binomial");
        1.0 - b.cdf(positive as u64 - 1)
    };
    SignTest { positive, nonzero, p_value }
}

/// Paired with/without-POV runs per seed and λ. The baseline run for a seed
/// is shared by every λ.
pub fn impact(cfg: &SimConfig, world: &World, lambdas: &[f64], seeds: &[u64]) -> Result<ImpactReport, ExpError> {
    if lambdas.is_empty() {
        return Err(ExpError::Invalid("impact lambdas must not be empty".into()));
    }
    if seeds.len() < 2 {
        return Err(ExpError::TooFew { what: "seeds", needed: 2, found: seeds.len() });
    }
    let settings = &cfg.impact;
    let step = (settings.grid_secs * NANOS_PER_SEC as f64).round() as Nanos;
    let (w0, w1) = (settings.pov.start.0, settings.pov.end.0);
    let after = settings.decay_after.0;

    // per λ, per seed: d(t)
    let mut series: Vec<Vec<HashMap<Nanos, f64>>> = vec![Vec::new(); lambdas.len()];
    let mut transacted: Vec<Vec<u64>> = vec![Vec::new(); lambdas.len()];
    for &seed in seeds {
        let base_run = run_once(cfg, world, seed, &[])?;
        let base: HashMap<Nanos, f64> =
            base_run.mid_grid(cfg.session.start.0, cfg.session.end.0, step).into_iter().map(|(t, m)| (t, m.ticks())).collect();
        for (i, &lambda) in lambdas.iter().enumerate() {
            let pov = AgentSpec::Pov(PovSpec { lambda, ..settings.pov.clone() });
            let run = run_once(cfg, world, seed, &[pov])?;
            transacted[i].push(run.pov.first().map_or(0, |p| p.transacted));
            series[i].push(d_series(cfg, &base, &run, step));
            log::info!("impact seed {seed} lambda {lambda}: transacted {}", transacted[i].last().unwrap());
        }
    }

    let mut sections = Vec::new();
    for (i, &lambda) in lambdas.iter().enumerate() {
        let mut grid = Vec::new();
        let mut t = cfg.session.start.0;
        while t <= cfg.session.end.0 {
            let values: Vec<f64> = series[i].iter().filter_map(|s| s.get(&t).copied()).collect();
            if !values.is_empty() {
                grid.push(band(t, values));
            }
            t += step;
        }
        let in_window: Vec<&BandPoint> = grid.iter().filter(|p| (w0..=w1).contains(&p.time)).collect();
        let window_positive_fraction =
            in_window.iter().filter(|p| p.median > 0.0).count() as f64 / in_window.len().max(1) as f64;
        let window_peak_abs_median = in_window.iter().map(|p| p.median.abs()).fold(0.0, f64::max);
        let after_max_abs_median = grid.iter().filter(|p| p.time >= after).map(|p| p.median.abs()).fold(0.0, f64::max);
        let means: Vec<f64> = series[i]
            .iter()
            .map(|s| {
                let v: Vec<f64> = s.iter().filter(|(t, _)| (w0..=w1).contains(*t)).map(|(_, d)| *d).collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect();
        sections.push(LambdaSection {
            lambda,
            seeds: seeds.to_vec(),
            grid,
            window_positive_fraction,
            sign_test: sign_test(&means),
            window_peak_abs_median,
            after_max_abs_median,
            pov_transacted: transacted[i].clone(),
        });
    }
    Ok(ImpactReport {
        world: format!("{:?}", world.kind).to_lowercase(),
        grid_secs: settings.grid_secs,
        window_start: settings.pov.start,
        window_end: settings.pov.end,
        decay_after: settings.decay_after,
        sections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_matches_binomial_tail() {
        // 15 of 20 positive: P(X >= 15) = (C(20,15)+...+C(20,20)) / 2^20
        let c = |n: u64, k: u64| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
        let tail: f64 = (15..=20).map(|k| c(20, k)).sum::<f64>() / 2f64.powi(20);
        let means: Vec<f64> = (0..20).map(|i| if i < 15 { 1e-4 } else { -1e-4 }).collect();
        let t = sign_test(&means);
        assert_eq!((t.positive, t.nonzero), (15, 20));
        assert!((t.p_value - tail).abs() < 1e-12, "{} vs {tail}", t.p_value);
        assert_eq!(sign_test(&[0.0, 0.0]).p_value, 1.0);
    }

    #[test]
    fn bands_are_ordered() {
        let p = band(0, vec![0.3, -0.1, 0.2, 0.5, -0.4, 0.0, 0.1]);
        assert!(p.q05 <= p.q25 && p.q25 <= p.median && p.median <= p.q75 && p.q75 <= p.q95);
        assert_eq!(p.median, 0.1);
    }
}
