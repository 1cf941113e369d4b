use std::fs;
use std::io::Write;
use std::path::PathBuf;

use super::{create, io_err, ExpError, SimConfig};
use crate::cgan::{EpochMetrics, ModelError, Trainer, TrainingSet};
use crate::data::lobster::parse_lobster;
use crate::data::{annotate_session, FeatureScalers, NUM_FEATURES};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SCALERS_FILE: &str = "scalers.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub scalers: PathBuf,
    pub metrics_file: PathBuf,
    pub metrics: Vec<EpochMetrics>,
}

/// Fit scalers on the configured session, train, and write checkpoint,
/// scalers and per-epoch metrics into the output directory.
pub fn train(cfg: &SimConfig) -> Result<TrainOutput, ExpError> {
    for p in [&cfg.messages, &cfg.book] {
        if !p.exists() {
            return Err(ExpError::MissingFile(p.clone()));
        }
    }
    cfg.validate_run()?;
    let session = parse_lobster(&cfg.messages, &cfg.book)?;
    if let Some(first) = session.issues.first() {
        return Err(ExpError::DataIssues { count: session.issues.len(), first: first.to_string() });
    }
    let raw: Vec<[f64; NUM_FEATURES]> =
        annotate_session(&session, cfg.session.open.0).iter().map(|o| o.raw_features()).collect();
    let scalers = FeatureScalers::fit(&raw)?;
    let rows: Vec<[f64; NUM_FEATURES]> = raw.iter().map(|r| scalers.normalize(r)).collect();
    let set = TrainingSet::from_segments(&[rows], cfg.training.model.history);

    let out = &cfg.output;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let scaler_path = out.join(SCALERS_FILE);
    scalers.save(&scaler_path)?;
    let ck_path = out.join(CHECKPOINT_FILE);

    let mut train_cfg = cfg.training.train.clone();
    train_cfg.price_tick = cfg.training.price_tick;
    let mut trainer = Trainer::new(cfg.training.model.clone(), train_cfg, Some(scalers))?;
    let result = trainer.train(&set, Some(&ck_path)).map(|m| m.to_vec());
    let metrics = trainer.metrics().to_vec();
    let metrics_path = out.join(METRICS_FILE);
    let mut w = create(&metrics_path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", EpochMetrics::CSV_HEADER)?;
        for m in &metrics {
            writeln!(w, "{}", m.csv_row())?;
        }
        w.flush()
    };
    write().map_err(io_err(&metrics_path))?;

    let mut ck = match result {
        Ok(_) => trainer.checkpoint(),
        Err(ModelError::Diverged { last_good, epoch, step, reason }) => {
            let mut ck = *last_good.clone();
            ck.scaler_file = Some(SCALERS_FILE.into());
            ck.save(&ck_path)?;
            return Err(ModelError::Diverged { epoch, step, reason, last_good }.into());
        }
        Err(e) => return Err(e.into()),
    };
    ck.scaler_file = Some(SCALERS_FILE.into());
    ck.save(&ck_path)?;
    Ok(TrainOutput { checkpoint: ck_path, scalers: scaler_path, metrics_file: metrics_path, metrics })
}
