//! Market replay: historical LOBSTER messages re-submitted at their timestamps.

use std::any::Any;
use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::data::lobster::{LobsterBookRow, LobsterMessage, MessageType};
use crate::kernel::{Agent, AgentError, AgentId, Context, Payload};
use crate::lob::{Nanos, Order, OrderId, Price, Side};

/// First id of an agent's private order-id namespace.
pub fn id_namespace(agent: AgentId) -> OrderId {
    ((agent.0 as u64) + 1) << 40
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReplayStats {
    pub submitted: u64,
    /// Executions replayed as marketable orders.
    pub executions: u64,
    /// Replayed executions whose endogenous fills differ from the record.
    pub divergent_executions: u64,
    /// Replayed adds that traded on arrival.
    pub crossing_adds: u64,
    /// Cancels and deletes of ids the exchange does not know.
    pub cancels_not_found: u64,
    pub skipped: u64,
}

/// Walks a message stream and turns each message into exchange actions.
///
/// Adds become limit orders and cancels/deletes become cancels. LOBSTER does
/// not record the aggressor behind a visible execution, so each type 4
/// message becomes a marketable-only order on the opposite side at the
/// execution price; its fills are compared against the recorded one. Hidden
/// executions, crosses and halts are skipped.
#[derive(Debug, Clone)]
pub struct ReplayCursor {
    messages: Vec<LobsterMessage>,
    next: usize,
    /// Time to live attached to replayed adds, if any.
    ttl: Option<Nanos>,
    next_id: OrderId,
    /// Aggressor id → (historical resting id, size).
    expected: HashMap<OrderId, (OrderId, u64)>,
    replayed_adds: HashSet<OrderId>,
    /// Replayed adds not yet deleted by a later message.
    outstanding: HashSet<OrderId>,
    pub stats: ReplayStats,
}

impl ReplayCursor {
    pub fn new(messages: Vec<LobsterMessage>, ttl: Option<Nanos>) -> Self {
        ReplayCursor {
            messages,
            next: 0,
            ttl,
            next_id: 0,
            expected: HashMap::new(),
            replayed_adds: HashSet::new(),
            outstanding: HashSet::new(),
            stats: ReplayStats::default(),
        }
    }

    pub fn set_namespace(&mut self, agent: AgentId) {
        if self.next_id == 0 {
            self.next_id = id_namespace(agent);
        }
    }

    pub fn peek_time(&self) -> Option<Nanos> {
        self.messages.get(self.next).map(|m| m.time.nanos)
    }

    pub fn is_exhausted(&self) -> bool {
        self.next >= self.messages.len()
    }

    /// Ids of replayed adds that no later message deleted, sorted.
    pub fn outstanding_adds(&self) -> Vec<OrderId> {
        let mut ids: Vec<OrderId> = self.outstanding.iter().copied().collect();
        ids.sort_unstable();
        ids
    }

    fn fresh_id(&mut self) -> OrderId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Send every message stamped at or before `now`, in file order.
    pub fn emit_due(&mut self, ctx: &mut Context<'_>, exchange: AgentId) {
        while let Some(m) = self.messages.get(self.next).copied() {
            if m.time.nanos > ctx.now() {
                break;
            }
            self.next += 1;
            self.emit(ctx, exchange, &m);
        }
    }

    fn emit(&mut self, ctx: &mut Context<'_>, exchange: AgentId, m: &LobsterMessage) {
        let side = m.side();
        let payload = match m.kind {
            MessageType::NewLimit => {
                self.replayed_adds.insert(m.order_id);
                self.outstanding.insert(m.order_id);
                Payload::Submit {
                    order: Order::limit(m.order_id, side, Price(m.price), m.size, ctx.now()),
                    marketable_only: false,
                    ttl: self.ttl,
                }
            }
            MessageType::PartialCancel => Payload::Cancel { order_id: m.order_id, volume: Some(m.size) },
            MessageType::Delete => {
                self.outstanding.remove(&m.order_id);
                Payload::Cancel { order_id: m.order_id, volume: None }
            }
            MessageType::ExecuteVisible => {
                let id = self.fresh_id();
                self.expected.insert(id, (m.order_id, m.size));
                self.stats.executions += 1;
                Payload::Submit {
                    order: Order::limit(id, side.opposite(), Price(m.price), m.size, ctx.now()),
                    marketable_only: true,
                    ttl: None,
                }
            }
            _ => {
                self.stats.skipped += 1;
                return;
            }
        };
        if matches!(payload, Payload::Submit { .. }) {
            self.stats.submitted += 1;
        }
        ctx.send(exchange, payload);
    }

    /// Fold an exchange reply into the counters. Returns true if the reply
    /// belonged to this cursor.
    pub fn on_reply(&mut self, payload: &Payload) -> bool {
        match payload {
            Payload::Executed { order_id, filled, fills, .. } => {
                if let Some((resting, size)) = self.expected.remove(order_id) {
                    let exact = fills.len() == 1 && fills[0].resting_id == resting && fills[0].volume == size;
                    if !exact {
                        self.stats.divergent_executions += 1;
                    }
                    true
                } else if self.replayed_adds.remove(order_id) {
                    if *filled > 0 {
                        self.stats.crossing_adds += 1;
                    }
                    true
                } else {
                    false
                }
            }
            Payload::CancelAck { found, .. } => {
                if !found {
                    self.stats.cancels_not_found += 1;
                }
                true
            }
            _ => false,
        }
    }
}

/// Orders that reproduce the book a session starts from: the first book row
/// with the first message's own effect removed, one order per level.
pub fn opening_orders(first: &(LobsterMessage, LobsterBookRow), first_id: OrderId) -> Vec<Order> {
    let (m, row) = first;
    let snap = row.to_snapshot(m.time.nanos);
    let mut levels: Vec<(Side, Price, i64)> = snap
        .asks
        .iter()
        .map(|&(p, v)| (Side::Sell, p, v as i64))
        .chain(snap.bids.iter().map(|&(p, v)| (Side::Buy, p, v as i64)))
        .collect();
    let delta = match m.kind {
        MessageType::NewLimit => -(m.size as i64),
        MessageType::PartialCancel | MessageType::Delete | MessageType::ExecuteVisible => m.size as i64,
        _ => 0,
    };
    if delta != 0 {
        match levels.iter_mut().find(|(s, p, _)| *s == m.side() && p.0 == m.price) {
            Some(level) => level.2 += delta,
            None => levels.push((m.side(), Price(m.price), delta)),
        }
    }
    levels
        .into_iter()
        .filter(|(_, _, v)| *v > 0)
        .enumerate()
        .map(|(i, (side, price, v))| Order::limit(first_id + i as u64, side, price, v as u64, first.0.time.nanos))
        .collect()
}

/// World agent that replays a historical session verbatim.
pub struct ReplayAgent {
    exchange: AgentId,
    cursor: ReplayCursor,
    opening: Option<(LobsterMessage, LobsterBookRow)>,
}

impl ReplayAgent {
    pub fn new(exchange: AgentId, rows: &[(LobsterMessage, LobsterBookRow)]) -> Self {
        ReplayAgent {
            exchange,
            cursor: ReplayCursor::new(rows.iter().map(|(m, _)| *m).collect(), None),
            opening: rows.first().cloned(),
        }
    }

    pub fn stats(&self) -> ReplayStats {
        self.cursor.stats
    }

    fn schedule_next(&self, ctx: &mut Context<'_>) {
        if let Some(t) = self.cursor.peek_time() {
            ctx.wakeup_at(t.max(ctx.now()));
        }
    }
}

impl Agent for ReplayAgent {
    fn name(&self) -> &str {
        "replay"
    }

    fn on_start(&mut self, ctx: &mut Context<'_>) -> Result<(), AgentError> {
        self.cursor.set_namespace(ctx.id());
        if let Some(first) = self.opening.take() {
            let base = self.cursor.fresh_id();
            let orders = opening_orders(&first, base);
            self.cursor.next_id = base + orders.len() as u64 + 1;
            for order in orders {
                ctx.send(self.exchange, Payload::Submit { order, marketable_only: false, ttl: None });
            }
        }
        // messages stamped before the session start are replayed immediately
        self.schedule_next(ctx);
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut Context<'_>, _sender: AgentId, payload: &Payload) -> Result<(), AgentError> {
        match payload {
            Payload::Wakeup => {
                self.cursor.emit_due(ctx, self.exchange);
                self.schedule_next(ctx);
            }
            other => {
                self.cursor.on_reply(other);
            }
        }
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
