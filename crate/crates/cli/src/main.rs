use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use marketsim::agents::WorldKind;
use marketsim::cgan::GpMode;
use marketsim::data::lobster::write_lobster;
use marketsim::experiment::{self, SimConfig, TraceSource, World};
use marketsim::synthetic::{generate, SyntheticConfig};

#[derive(Parser)]
#[command(name = "marketsim", version, about = "Limit order book simulation with a CGAN world agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Run seeds 0..N instead of the configured list.
    #[arg(long)]
    seeds: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// World agent: cgan or replay.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<WorldKind>,
    /// generated-point, interpolate or weight-clip.
    #[arg(long)]
    gp_mode: Option<GpMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit scalers and train the CGAN on the configured session.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run one simulation per seed and write trace directories.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Paired with/without-POV runs and quantile bands of the mid-price difference.
    Impact {
        #[command(flatten)]
        common: Common,
        /// Override the configured participation rates.
        #[arg(long = "lambda")]
        lambdas: Vec<f64>,
    },
    /// Stylized-facts reports for simulation traces and LOBSTER files.
    Realism {
        /// Simulation output directory (repeatable).
        #[arg(long = "trace")]
        traces: Vec<PathBuf>,
        /// LOBSTER message and book file (repeatable).
        #[arg(long = "lobster", num_args = 2, value_names = ["MESSAGES", "BOOK"])]
        lobster: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Resampling grid in seconds.
        #[arg(long, default_value_t = 60.0)]
        grid_secs: f64,
    },
    /// Write a synthetic LOBSTER session from the built-in oracle process.
    GenSample {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        orders: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        depth: usize,
        #[arg(long, default_value = "SYNTH")]
        symbol: String,
    },
}

fn parse_mode(s: &str) -> Result<WorldKind, String> {
    match s {
        "cgan" => Ok(WorldKind::Cgan),
        "replay" => Ok(WorldKind::Replay),
        other => Err(format!("unknown mode {other:?}, expected cgan or replay")),
    }
}

fn load_config(c: &Common) -> Result<SimConfig> {
    let mut cfg = SimConfig::load(&c.config)?;
    if let Some(n) = c.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(out) = &c.out {
        cfg.output = out.clone();
    }
    if let Some(mode) = c.mode {
        cfg.world = mode;
    }
    if let Some(gp) = c.gp_mode {
        cfg.training.train.gp_mode = gp;
    }
    Ok(cfg)
}

fn gen_sample(out: &Path, orders: usize, seed: u64, depth: usize, symbol: &str) -> Result<()> {
    let cfg = SyntheticConfig { orders, seed, depth, ..SyntheticConfig::default() };
    let s = generate(&cfg);
    let (Some(first), Some(last)) = (s.session.rows.first(), s.session.rows.last()) else {
        bail!("empty session");
    };
    let ms = |t: i64| t / 1_000_000;
    let stem = format!("{symbol}_2026-01-05_{}_{}", ms(first.0.time.nanos), ms(last.0.time.nanos) + 1);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let msg = out.join(format!("{stem}_message_{depth}.csv"));
    let book = out.join(format!("{stem}_orderbook_{depth}.csv"));
    write_lobster(&s.session, &msg, &book)?;
    println!("{}\n{}", msg.display(), book.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { common, epochs } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.training.train.epochs = e;
            }
            let out = experiment::train(&cfg)?;
            let last = out.metrics.last().context("no metrics")?;
            println!("checkpoint {}", out.checkpoint.display());
            println!("final ks {:?}", last.ks);
        }
        Command::Simulate { common } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let world = World::load(&cfg)?;
            for dir in experiment::simulate(&cfg, &world)? {
                println!("{}", dir.display());
            }
        }
        Command::Impact { common, lambdas } => {
            let mut cfg = load_config(&common)?;
            if !lambdas.is_empty() {
                cfg.impact.lambdas = lambdas;
            }
            cfg.validate()?;
            let world = World::load(&cfg)?;
            let report = experiment::impact(&cfg, &world, &cfg.impact.lambdas, &cfg.seeds)?;
            report.write(&cfg.output, cfg.impact.report_from.0, cfg.impact.report_to.0)?;
            for s in &report.sections {
                println!(
                    "lambda {}: positive {:.3}, sign test {}/{} p={:.4}, decay ratio {:.3}",
                    s.lambda,
                    s.window_positive_fraction,
                    s.sign_test.positive,
                    s.sign_test.nonzero,
                    s.sign_test.p_value,
                    s.decay_ratio()
                );
            }
        }
        Command::Realism { traces, lobster, out, grid_secs } => {
            let mut sources: Vec<TraceSource> = traces.into_iter().map(TraceSource::Trace).collect();
            for pair in lobster.chunks(2) {
                sources.push(TraceSource::Lobster { messages: pair[0].clone(), book: pair[1].clone() });
            }
            let config = marketsim::stylized::ReportConfig {
                grid: (grid_secs * 1e9).round() as i64,
                ..Default::default()
            };
            experiment::realism(&sources, &config)?.write(&out)?;
            println!("{}", out.join("realism.json").display());
        }
        Command::GenSample { out, orders, seed, depth, symbol } => gen_sample(&out, orders, seed, depth, &symbol)?,
    }
    Ok(())
}
