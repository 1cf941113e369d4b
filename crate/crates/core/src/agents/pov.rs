//! Percentage-of-volume execution agent.

use std::any::Any;

use serde::{Deserialize, Serialize};

use super::replay::id_namespace;
use super::AgentsError;
use crate::kernel::{clock, Agent, AgentError, AgentId, Context, Payload, NANOS_PER_SEC};
use crate::lob::{Nanos, Order, OrderId, Side};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PovConfig {
    pub lambda: f64,
    pub wakeup_period: Nanos,
    pub side: Side,
    /// Target quantity in shares.
    pub target: u64,
    pub start: Nanos,
    pub end: Nanos,
}

impl Default for PovConfig {
    fn default() -> Self {
        PovConfig {
            lambda: 0.1,
            wakeup_period: 60 * NANOS_PER_SEC,
            side: Side::Buy,
            target: 1_000_000,
            start: clock(10, 30, 0),
            end: clock(11, 0, 0),
        }
    }
}

impl PovConfig {
    pub fn validate(&self) -> Result<(), AgentsError> {
        let bad = |m: &str| Err(AgentsError::InvalidConfig(m.to_string()));
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must lie in (0, 1]");
        }
        if self.target == 0 {
            return bad("target quantity must be at least 1");
        }
        if self.start >= self.end {
            return bad("start must precede end");
        }
        if self.wakeup_period <= 0 {
            return bad("wakeup period must be positive");
        }
        Ok(())
    }

    /// Order size for one wakeup: `min(round(λ·V), remaining)`.
    pub fn order_size(&self, market_volume: u64, remaining: u64) -> u64 {
        ((self.lambda * market_volume as f64).round() as u64).min(remaining)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PovStats {
    pub orders: u64,
    pub transacted: u64,
    pub discarded: u64,
}

pub struct PovAgent {
    exchange: AgentId,
    config: PovConfig,
    last_volume: Option<u64>,
    /// Volume sent but not yet acknowledged.
    pending: u64,
    next_id: OrderId,
    stats: PovStats,
    /// Submitted orders with their send time.
    pub submitted: Vec<(Nanos, Order)>,
}

impl PovAgent {
    pub fn new(exchange: AgentId, config: PovConfig) -> Result<Self, AgentsError> {
        config.validate()?;
        Ok(PovAgent { exchange, config, last_volume: None, pending: 0, next_id: 0, stats: PovStats::default(), submitted: Vec::new() })
    }

    pub fn config(&self) -> &PovConfig {
        &self.config
    }

    pub fn stats(&self) -> PovStats {
        self.stats
    }

    fn remaining(&self) -> u64 {
        self.config.target.saturating_sub(self.stats.transacted + self.pending)
    }

    fn done(&self, now: Nanos) -> bool {
        now > self.config.end || self.stats.transacted >= self.config.target
    }
}

impl Agent for PovAgent {
    fn name(&self) -> &str {
        "pov"
    }

    fn on_start(&mut self, ctx: &mut Context<'_>) -> Result<(), AgentError> {
        self.next_id = id_namespace(ctx.id());
        // one observation before the window so the first active wakeup has a V_t
        let first = (self.config.start - self.config.wakeup_period).max(ctx.now());
        ctx.wakeup_at(first);
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut Context<'_>, _sender: AgentId, payload: &Payload) -> Result<(), AgentError> {
        let now = ctx.now();
        match payload {
            Payload::Wakeup => {
                if !self.done(now) {
                    ctx.send(self.exchange, Payload::QueryMarket { depth: 1 });
                    let mut next = now + self.config.wakeup_period;
                    if next > self.config.start && now < self.config.start {
                        next = self.config.start;
                    }
                    if next <= self.config.end {
                        ctx.wakeup_at(next);
                    }
                }
            }
            Payload::MarketData(md) => {
                let previous = self.last_volume.replace(md.traded_volume);
                let active = now >= self.config.start && !self.done(now);
                if let (Some(prev), true) = (previous, active) {
                    let v = md.traded_volume.saturating_sub(prev);
                    let size = self.config.order_size(v, self.remaining());
                    if size > 0 {
                        let order = Order::market(self.next_id, self.config.side, size, now);
                        self.next_id += 1;
                        self.pending += size;
                        self.stats.orders += 1;
                        self.submitted.push((now, order));
                        ctx.send(self.exchange, Payload::Submit { order, marketable_only: true, ttl: None });
                    }
                }
            }
            Payload::Executed { order_id, filled, discarded, .. } if *order_id >= id_namespace(ctx.id()) => {
                if let Some((_, o)) = self.submitted.iter().find(|(_, o)| o.id == *order_id) {
                    self.pending = self.pending.saturating_sub(o.volume);
                }
                self.stats.transacted += filled;
                self.stats.discarded += discarded;
            }
            Payload::Rejected { order_id, .. } => {
                if let Some((_, o)) = self.submitted.iter().find(|(_, o)| o.id == *order_id) {
                    self.pending = self.pending.saturating_sub(o.volume);
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
