//! WGAN-GP training loop and Kolmogorov–Smirnov convergence metrics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::checkpoint::Checkpoint;
use super::critic::Critic;
use super::generator::Generator;
use super::sample::denormalize;
use super::{ModelConfig, ModelError, NormalizedOrder, ORDER_DIM};
use crate::data::{FeatureScalers, FeatureWindow, NUM_FEATURES};

/// Where the gradient penalty is evaluated, or whether clipping replaces it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GpMode {
    #[default]
    GeneratedPoint,
    Interpolate,
    WeightClip,
}

impl FromStr for GpMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "generated-point" => Ok(GpMode::GeneratedPoint),
            "interpolate" => Ok(GpMode::Interpolate),
            "weight-clip" => Ok(GpMode::WeightClip),
            other => Err(format!("unknown gp mode {other:?}")),
        }
    }
}

impl fmt::Display for GpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GpMode::GeneratedPoint => "generated-point",
            GpMode::Interpolate => "interpolate",
            GpMode::WeightClip => "weight-clip",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    pub lambda_gp: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gp_mode: GpMode,
    /// Weight bound in weight-clip mode.
    pub clip: f64,
    pub seed: u64,
    /// Held-out pairs used for the per-epoch KS metrics.
    pub eval_samples: usize,
    /// Price grid used when denormalizing for metrics.
    pub price_tick: i64,
    /// Decay of the exponential moving average of generator weights used
    /// for evaluation and sampling; 0 uses the raw weights.
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            critic_steps: 5,
            lambda_gp: 10.0,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            gp_mode: GpMode::GeneratedPoint,
            clip: 0.01,
            seed: 0,
            eval_samples: 2_000,
            price_tick: 100,
            ema_decay: 0.99,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size < 2 {
            return Err(ModelError::BatchTooSmall(self.batch_size));
        }
        if self.critic_steps == 0 {
            return Err(ModelError::InvalidConfig("critic steps must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lambda_gp >= 0.0 && self.clip > 0.0) {
            return Err(ModelError::InvalidConfig("lr and lambda_gp must be non-negative, clip positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(ModelError::InvalidConfig("ema_decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Normalized order rows and the indices that have a full history behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    rows: Vec<[f64; NUM_FEATURES]>,
    targets: Vec<usize>,
    history: usize,
}

impl TrainingSet {
    /// Pairs never span segment boundaries.
    pub fn from_segments(segments: &[Vec<[f64; NUM_FEATURES]>], history: usize) -> Self {
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for seg in segments {
            let base = rows.len();
            rows.extend_from_slice(seg);
            targets.extend((history..seg.len()).map(|i| base + i));
        }
        TrainingSet { rows, targets, history }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn history(&self) -> usize {
        self.history
    }

    /// Target order and the window of the orders before it.
    pub fn pair(&self, i: usize) -> (NormalizedOrder, FeatureWindow) {
        let t = self.targets[i];
        (
            NormalizedOrder::from_slice(&self.rows[t][..ORDER_DIM]),
            FeatureWindow::from_chronological(&self.rows[t - self.history..t]),
        )
    }

    pub fn batch(&self, idx: &[usize]) -> TrainBatch {
        let b = idx.len();
        let mut x = Array2::zeros((b, ORDER_DIM));
        let mut steps = vec![Array2::zeros((b, NUM_FEATURES)); self.history];
        for (r, &i) in idx.iter().enumerate() {
            let t = self.targets[i];
            x.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&self.rows[t][..ORDER_DIM]);
            for (k, step) in steps.iter_mut().enumerate() {
                step.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&self.rows[t - self.history + k]);
            }
        }
        TrainBatch { x, steps }
    }
}

#[derive(Debug, Clone)]
pub struct TrainBatch {
    /// Real orders, `batch × 4`.
    pub x: Array2<f64>,
    /// Chronological window steps, each `batch × features`.
    pub steps: Vec<Array2<f64>>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean losses over the epoch; absent before training.
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    /// KS distances for price, volume, direction, time.
    pub ks: [f64; ORDER_DIM],
    pub buy_fraction_real: f64,
    pub buy_fraction_generated: f64,
}

impl EpochMetrics {
    pub fn max_ks(&self) -> f64 {
        self.ks.iter().copied().fold(0.0, f64::max)
    }

    pub const CSV_HEADER: &'static str = "epoch,d_loss,g_loss,ks_price,ks_volume,ks_direction,ks_time,buy_fraction_real,buy_fraction_generated";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            opt(self.d_loss),
            opt(self.g_loss),
            self.ks[0],
            self.ks[1],
            self.ks[2],
            self.ks[3],
            self.buy_fraction_real,
            self.buy_fraction_generated
        )
    }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub struct Trainer {
    model: ModelConfig,
    config: TrainConfig,
    generator: Generator,
    /// Moving average of the generator weights.
    ema: Generator,
    critic: Critic,
    opt_g: Adam,
    opt_d: Adam,
    rng: ChaCha8Rng,
    scalers: Option<FeatureScalers>,
    history: Vec<EpochMetrics>,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig, scalers: Option<FeatureScalers>) -> Result<Self, ModelError> {
        model.validate()?;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Generator::new(&model, &mut rng);
        let critic = Critic::new(&model, &mut rng);
        Ok(Self::from_parts(model, config, generator, critic, rng, scalers))
    }

    /// Start from explicit networks (toy problems, resumed runs).
    pub fn with_networks(
        config: TrainConfig,
        generator: Generator,
        critic: Critic,
        scalers: Option<FeatureScalers>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = generator.config().clone();
        Ok(Self::from_parts(model, config, generator, critic, rng, scalers))
    }

    fn from_parts(
        model: ModelConfig,
        config: TrainConfig,
        generator: Generator,
        critic: Critic,
        rng: ChaCha8Rng,
        scalers: Option<FeatureScalers>,
    ) -> Self {
        let opt_g = Adam::new(generator.params().len(), config.lr, config.beta1, config.beta2);
        let opt_d = Adam::new(critic.params().len(), config.lr, config.beta1, config.beta2);
        let ema = generator.clone();
        Trainer { model, config, generator, ema, critic, opt_g, opt_d, rng, scalers, history: Vec::new(), epoch: 0 }
    }

    /// Raw generator weights, as optimized.
    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// Generator used for evaluation and sampling.
    pub fn sampler(&self) -> &Generator {
        if self.config.ema_decay > 0.0 {
            &self.ema
        } else {
            &self.generator
        }
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.epoch, &self.model, &self.config, &self.generator, &self.critic);
        if self.config.ema_decay > 0.0 {
            ck.generator_ema = Some(self.ema.params().clone());
        }
        ck
    }

    fn noise(&mut self, batch: usize) -> Array2<f64> {
        let rng = &mut self.rng;
        Array2::from_shape_simple_fn((batch, self.model.noise_dim), || StandardNormal.sample(rng))
    }

    fn critic_update(&mut self, batch: &TrainBatch) -> Result<f64, ModelError> {
        let b = batch.len();
        let noise = self.noise(b);
        let fake = self.generator.forward_batch(batch.steps.clone(), &noise)?.output().clone();
        let enc = self.critic.encode(batch.steps.clone());
        let e = enc.as_ref().map(|t| t.output());
        let both = concatenate(Axis(0), &[batch.x.view(), fake.view()]).expect("same width");
        let e2 = e.map(|e| concatenate(Axis(0), &[e.view(), e.view()]).expect("same width"));
        let tape = self.critic.mlp_forward(self.critic.mlp_input(&both, e2.as_ref()))?;
        let scores = tape.score();
        let real_mean = scores.slice(s![..b]).mean().unwrap();
        let fake_mean = scores.slice(s![b..]).mean().unwrap();
        let mut loss = fake_mean - real_mean;

        let mut d_score = Array1::from_elem(2 * b, 1.0 / b as f64);
        d_score.slice_mut(s![..b]).fill(-1.0 / b as f64);
        let mut grads = self.critic.params().zeros_like();
        let d_in = self.critic.mlp_backward(&tape, &d_score, &mut grads);

        if self.config.gp_mode != GpMode::WeightClip {
            let x_eval = match self.config.gp_mode {
                GpMode::Interpolate => {
                    let mut x = fake.clone();
                    for r in 0..b {
                        let t: f64 = self.rng.random();
                        let row = &batch.x.row(r) * t + &fake.row(r) * (1.0 - t);
                        x.row_mut(r).assign(&row);
                    }
                    x
                }
                _ => fake,
            };
            let pt = self.critic.mlp_forward(self.critic.mlp_input(&x_eval, e))?;
            let ig = self.critic.input_gradient(&pt);
            let (penalty, adj) = self.critic.penalty(&ig, self.config.lambda_gp);
            self.critic.penalty_backward(&pt, &ig, adj, &mut grads);
            loss += penalty;
        }
        if let Some(enc) = &enc {
            let d_e = &d_in.slice(s![..b, ORDER_DIM..]) + &d_in.slice(s![b.., ORDER_DIM..]);
            self.critic.backward_encoder(enc, &d_e, &mut grads);
        }
        if !loss.is_finite() || !grads.all_finite() {
            return Err(ModelError::NonFinite("critic loss or gradient".into()));
        }
        self.opt_d.step(self.critic.params_mut(), &grads);
        if self.config.gp_mode == GpMode::WeightClip {
            self.critic.params_mut().clamp(self.config.clip);
        }
        Ok(loss)
    }

    fn generator_update(&mut self, batch: &TrainBatch) -> Result<f64, ModelError> {
        let b = batch.len();
        let noise = self.noise(b);
        let gt = self.generator.forward_batch(batch.steps.clone(), &noise)?;
        let enc = self.critic.encode(batch.steps.clone());
        let tape = self.critic.mlp_forward(self.critic.mlp_input(gt.output(), enc.as_ref().map(|t| t.output())))?;
        let loss = -tape.score().mean().unwrap();
        let d_score = Array1::from_elem(b, -1.0 / b as f64);
        let mut scratch = self.critic.params().zeros_like();
        let d_in = self.critic.mlp_backward(&tape, &d_score, &mut scratch);
        let d_out = d_in.slice(s![.., ..ORDER_DIM]).to_owned();
        let mut grads = self.generator.params().zeros_like();
        self.generator.backward(&gt, &d_out, &mut grads);
        if !loss.is_finite() || !grads.all_finite() {
            return Err(ModelError::NonFinite("generator loss or gradient".into()));
        }
        self.opt_g.step(self.generator.params_mut(), &grads);
        let d = self.config.ema_decay;
        if d > 0.0 {
            for (a, w) in self.ema.params_mut().values_mut().iter_mut().zip(self.generator.params().values()) {
                *a = d * *a + (1.0 - d) * w;
            }
        }
        Ok(loss)
    }

    /// `critic_steps` critic updates cycling through `batches`, then one
    /// generator update conditioned on the last batch.
    pub fn train_step(&mut self, batches: &[TrainBatch]) -> Result<StepLosses, ModelError> {
        let last = batches.last().ok_or(ModelError::EmptyDataset)?;
        if let Some(small) = batches.iter().find(|b| b.len() < 2) {
            return Err(ModelError::BatchTooSmall(small.len()));
        }
        let mut d_loss = 0.0;
        for k in 0..self.config.critic_steps {
            d_loss = self.critic_update(&batches[k % batches.len()])?;
        }
        let g_loss = self.generator_update(last)?;
        Ok(StepLosses { d_loss, g_loss })
    }

    /// Evenly strided evaluation indices.
    fn eval_indices(&self, data: &TrainingSet) -> Vec<usize> {
        let n = data.len();
        let k = self.config.eval_samples.min(n).max(1);
        (0..k).map(|i| i * n / k).collect()
    }

    /// KS distances between real and generated order fields on `idx`.
    pub fn evaluate(&self, data: &TrainingSet, idx: &[usize], epoch: usize) -> Result<EpochMetrics, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x6b73_6576_616c);
        rng.set_stream(epoch as u64);
        let mut real: [Vec<f64>; ORDER_DIM] = Default::default();
        let mut fake: [Vec<f64>; ORDER_DIM] = Default::default();
        for chunk in idx.chunks(256) {
            let batch = data.batch(chunk);
            let noise = Array2::from_shape_simple_fn((chunk.len(), self.model.noise_dim), || StandardNormal.sample(&mut rng));
            let out = self.sampler().forward_batch(batch.steps, &noise)?;
            for (rows, dst) in [(&batch.x, &mut real), (out.output(), &mut fake)] {
                for row in rows.rows() {
                    let v = self.order_fields(&NormalizedOrder::from_slice(row.as_slice().unwrap()));
                    for f in 0..ORDER_DIM {
                        dst[f].push(v[f]);
                    }
                }
            }
        }
        let ks = std::array::from_fn(|f| ks_distance(&real[f], &fake[f]));
        let buys = |v: &[f64]| v.iter().filter(|d| **d > 0.0).count() as f64 / v.len().max(1) as f64;
        Ok(EpochMetrics {
            epoch,
            d_loss: None,
            g_loss: None,
            ks,
            buy_fraction_real: buys(&real[2]),
            buy_fraction_generated: buys(&fake[2]),
        })
    }

    /// Order fields in raw units when scalers are known, else normalized
    /// with the direction reduced to its sign.
    fn order_fields(&self, x: &NormalizedOrder) -> [f64; ORDER_DIM] {
        match &self.scalers {
            Some(sc) => {
                let o = denormalize(x, sc, self.config.price_tick);
                [o.price.0 as f64, o.volume as f64, o.side.direction() as f64, o.interarrival as f64]
            }
            None => [x.price, x.volume, if x.direction < 0.0 { -1.0 } else { 1.0 }, x.time],
        }
    }

    /// Run the configured number of epochs. Metrics for the untrained model
    /// are recorded as epoch 0; a checkpoint is written after every epoch
    /// when `checkpoint` is given.
    pub fn train(&mut self, data: &TrainingSet, checkpoint: Option<&Path>) -> Result<&[EpochMetrics], ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        if data.history() != self.model.history {
            return Err(ModelError::DimensionMismatch { what: "training history", expected: self.model.history, found: data.history() });
        }
        let eval = self.eval_indices(data);
        if self.history.is_empty() {
            let m = self.evaluate(data, &eval, 0)?;
            log::info!("epoch 0: ks {:?}", m.ks);
            self.history.push(m);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..self.config.epochs {
            let epoch = self.epoch + 1;
            let last_good = self.checkpoint();
            order.shuffle(&mut self.rng);
            let batches: Vec<&[usize]> =
                order.chunks(self.config.batch_size).filter(|c| c.len() >= 2).collect();
            let (mut d_sum, mut g_sum, mut n) = (0.0, 0.0, 0usize);
            for (step, group) in batches.chunks(self.config.critic_steps).enumerate() {
                let tb: Vec<TrainBatch> = group.iter().map(|idx| data.batch(idx)).collect();
                match self.train_step(&tb) {
                    Ok(l) => {
                        d_sum += l.d_loss;
                        g_sum += l.g_loss;
                        n += 1;
                    }
                    Err(e) => {
                        self.generator.set_params(last_good.generator.clone())?;
                        self.critic.set_params(last_good.critic.clone())?;
                        if let Some(ema) = &last_good.generator_ema {
                            self.ema.set_params(ema.clone())?;
                        }
                        return Err(ModelError::Diverged { epoch, step, reason: e.to_string(), last_good: Box::new(last_good) });
                    }
                }
            }
            self.epoch = epoch;
            let mut m = self.evaluate(data, &eval, epoch)?;
            m.d_loss = Some(d_sum / n.max(1) as f64);
            m.g_loss = Some(g_sum / n.max(1) as f64);
            log::info!("epoch {epoch}: d {:.4} g {:.4} ks {:?}", m.d_loss.unwrap(), m.g_loss.unwrap(), m.ks);
            self.history.push(m);
            if let Some(path) = checkpoint {
                self.checkpoint().save(path)?;
            }
        }
        Ok(&self.history)
    }
}
