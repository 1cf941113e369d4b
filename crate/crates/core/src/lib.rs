//! Agent-based limit order book simulation with a conditional WGAN world agent.

pub mod agents;
pub mod cgan;
pub mod data;
pub mod exchange;
pub mod experiment;
pub mod kernel;
pub mod lob;
pub mod stylized;
pub mod synthetic;
