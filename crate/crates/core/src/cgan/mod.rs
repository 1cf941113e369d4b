//! Conditional Wasserstein GAN over order flow.
//!
//! The generator maps (noise, conditioning window) to a normalized order
//! tuple `(price, volume, direction, time)`; the critic scores (order, window)
//! pairs. Both networks are written directly on ndarray with hand-derived
//! gradients, including the second-order term of the gradient penalty.

pub mod adam;
pub mod checkpoint;
pub mod critic;
pub mod generator;
pub mod lstm;
pub mod params;
pub mod sample;
pub mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureWindow, HISTORY_LEN, NUM_FEATURES};

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use critic::{gradient_penalty, Critic};
pub use generator::Generator;
pub use params::ParamSet;
pub use sample::{denormalize, sample_order, SampledOrder};
pub use train::{ks_distance, EpochMetrics, GpMode, TrainConfig, Trainer, TrainingSet};

/// Width of the generated order tuple.
pub const ORDER_DIM: usize = 4;
pub const ORDER_FIELDS: [&str; ORDER_DIM] = ["price", "volume", "direction", "time"];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parameter layout does not match the {0} architecture")]
    LayoutMismatch(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("batch size must be at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged { epoch: usize, step: usize, reason: String, last_good: Box<Checkpoint> },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Architecture hyperparameters shared by generator and critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub history: usize,
    pub features: usize,
    pub noise_dim: usize,
    pub hidden: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub critic_widths: Vec<usize>,
    /// Without an encoder the critic sees only the order tuple.
    pub critic_encoder: bool,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            history: HISTORY_LEN,
            features: NUM_FEATURES,
            noise_dim: 50,
            hidden: 32,
            conv_layers: 2,
            conv_channels: 16,
            kernel: 3,
            critic_widths: vec![64, 64],
            critic_encoder: true,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn window_len(&self) -> usize {
        self.history * self.features
    }

    /// Length of the single-channel sequence entering the conv stack.
    pub fn conv_length(&self) -> usize {
        self.hidden + self.noise_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.history == 0 || self.features == 0 {
            return bad("history and features must be positive");
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        if self.kernel.is_multiple_of(2) {
            return bad("convolution kernel must be odd");
        }
        if self.conv_layers > 0 && self.conv_channels == 0 {
            return bad("conv channels must be positive");
        }
        if self.critic_widths.contains(&0) {
            return bad("critic widths must be positive");
        }
        Ok(())
    }

    pub fn check_window(&self, y: &FeatureWindow) -> Result<(), ModelError> {
        if y.len() != self.window_len() {
            return Err(ModelError::DimensionMismatch { what: "feature window", expected: self.window_len(), found: y.len() });
        }
        Ok(())
    }
}

/// Generator output, each field nominally in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedOrder {
    pub price: f64,
    pub volume: f64,
    pub direction: f64,
    pub time: f64,
}

impl NormalizedOrder {
    pub fn from_slice(v: &[f64]) -> Self {
        NormalizedOrder { price: v[0], volume: v[1], direction: v[2], time: v[3] }
    }

    pub fn as_array(&self) -> [f64; ORDER_DIM] {
        [self.price, self.volume, self.direction, self.time]
    }
}

/// Chronological `batch × features` step matrices for a batch of windows.
pub fn window_steps(windows: &[&FeatureWindow], features: usize) -> Vec<Array2<f64>> {
    let history = windows.first().map_or(0, |w| w.history());
    (0..history)
        .map(|t| {
            let mut m = Array2::zeros((windows.len(), features));
            for (b, w) in windows.iter().enumerate() {
                m.row_mut(b).as_slice_mut().expect("contiguous").copy_from_slice(w.step(t));
            }
            m
        })
        .collect()
}

pub(crate) fn leaky_relu(mut x: Array2<f64>, slope: f64) -> Array2<f64> {
    x.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
    x
}

pub(crate) fn check_finite(x: &Array2<f64>, what: &str) -> Result<(), ModelError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(what.to_string()))
    }
}
