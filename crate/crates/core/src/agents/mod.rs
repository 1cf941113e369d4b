//! Trading agents: the CGAN and replay world agents and the POV execution agent.

mod pov;
mod replay;
mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lob::Nanos;

pub use pov::{PovAgent, PovConfig, PovStats};
pub use replay::{id_namespace, opening_orders, ReplayAgent, ReplayCursor, ReplayStats};
pub use world::{CganWorldAgent, GeneratedOrder, CganWorldConfig, WorldModel, WorldStats};

#[derive(Debug, Error)]
pub enum AgentsError {
    #[error("historical stream ends at t={covers_until}, warm-up needs data until t={needed}")]
    WarmupTooShort { covers_until: Nanos, needed: Nanos },
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
}

/// Which agent emulates the rest of the market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldKind {
    #[default]
    Cgan,
    Replay,
}
