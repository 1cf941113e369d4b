//! Versioned JSON model checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::critic::Critic;
use super::generator::Generator;
use super::params::ParamSet;
use super::train::TrainConfig;
use super::{ModelConfig, ModelError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub epoch: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Path of the scaler JSON the model was trained with.
    pub scaler_file: Option<String>,
    pub generator: ParamSet,
    /// Averaged generator weights, preferred for sampling when present.
    #[serde(default)]
    pub generator_ema: Option<ParamSet>,
    pub critic: ParamSet,
}

impl Checkpoint {
    pub fn new(epoch: usize, model: &ModelConfig, train: &TrainConfig, generator: &Generator, critic: &Critic) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch,
            model: model.clone(),
            train: train.clone(),
            scaler_file: None,
            generator: generator.params().clone(),
            generator_ema: None,
            critic: critic.params().clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    /// Parse and check that both parameter sets fit the stored architecture.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Version(ck.version));
        }
        ck.model.validate()?;
        ck.generator()?;
        ck.sampler()?;
        ck.critic()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn generator(&self) -> Result<Generator, ModelError> {
        let mut g = Generator::zeros(&self.model);
        g.set_params(self.generator.clone())?;
        Ok(g)
    }

    /// The generator to sample orders from: averaged weights if stored.
    pub fn sampler(&self) -> Result<Generator, ModelError> {
        let mut g = Generator::zeros(&self.model);
        g.set_params(self.generator_ema.as_ref().unwrap_or(&self.generator).clone())?;
        Ok(g)
    }

    pub fn critic(&self) -> Result<Critic, ModelError> {
        let mut c = Critic::zeros(&self.model);
        c.set_params(self.critic.clone())?;
        Ok(c)
    }
}
