//! Exchange agent: owns the order book and answers market-data queries.

use std::any::Any;
use std::collections::HashMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::kernel::{Agent, AgentError, AgentId, Context, Fill, MarketData, Payload};
use crate::lob::{MidPrice, Nanos, Order, OrderBook, OrderId, Price, Side, Trade};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderEventKind {
    Submit,
    Cancel,
    Expire,
    Reject,
}

impl OrderEventKind {
    fn as_str(self) -> &'static str {
        match self {
            OrderEventKind::Submit => "submit",
            OrderEventKind::Cancel => "cancel",
            OrderEventKind::Expire => "expire",
            OrderEventKind::Reject => "reject",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderLogRecord {
    pub time: Nanos,
    pub agent: AgentId,
    pub side: Side,
    pub price: Price,
    pub volume: u64,
    pub order_id: OrderId,
    pub event: OrderEventKind,
}

/// Everything the exchange observed during a run.
#[derive(Debug, Clone, Default)]
pub struct ExchangeRecords {
    pub orders: Vec<OrderLogRecord>,
    pub trades: Vec<Trade>,
    /// Mid-price after every processed submit, cancel or expiry.
    pub mids: Vec<(Nanos, Option<MidPrice>)>,
}

impl ExchangeRecords {
    /// `time,agent,side,price_ticks,volume,order_id,event`
    pub fn write_order_log<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time,agent,side,price_ticks,volume,order_id,event")?;
        for r in &self.orders {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.time,
                r.agent,
                r.side.direction(),
                r.price,
                r.volume,
                r.order_id,
                r.event.as_str()
            )?;
        }
        Ok(())
    }

    /// `time,price_ticks,volume,buy_id,sell_id`
    pub fn write_trades<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time,price_ticks,volume,buy_id,sell_id")?;
        for t in &self.trades {
            writeln!(out, "{},{},{},{},{}", t.timestamp, t.price, t.volume, t.buy_order_id, t.sell_order_id)?;
        }
        Ok(())
    }

    /// Mid-price sampled every `step` on `[from, to]`, carrying the last
    /// defined value forward. Points before the first defined mid are dropped.
    pub fn mid_grid(&self, from: Nanos, to: Nanos, step: Nanos) -> Vec<(Nanos, MidPrice)> {
        let mut out = Vec::new();
        let mut last: Option<MidPrice> = None;
        let mut i = 0;
        let mut t = from;
        while t <= to {
            while i < self.mids.len() && self.mids[i].0 <= t {
                if let Some(m) = self.mids[i].1 {
                    last = Some(m);
                }
                i += 1;
            }
            if let Some(m) = last {
                out.push((t, m));
            }
            t += step;
        }
        out
    }

    /// Traded shares per bucket `[t, t + step)` for `t` on the same grid.
    pub fn volume_grid(&self, from: Nanos, to: Nanos, step: Nanos) -> Vec<(Nanos, u64)> {
        let n = ((to - from) / step + 1).max(0) as usize;
        let mut buckets = vec![0u64; n];
        for t in &self.trades {
            if t.timestamp < from {
                continue;
            }
            let b = ((t.timestamp - from) / step) as usize;
            if b < n {
                buckets[b] += t.volume;
            }
        }
        buckets.into_iter().enumerate().map(|(i, v)| (from + i as Nanos * step, v)).collect()
    }
}

pub fn write_mid_series<W: Write>(series: &[(Nanos, MidPrice)], mut out: W) -> io::Result<()> {
    writeln!(out, "time,mid_ticks")?;
    for (t, m) in series {
        writeln!(out, "{t},{m}")?;
    }
    Ok(())
}

pub struct Exchange {
    book: OrderBook,
    owners: HashMap<OrderId, AgentId>,
    traded_volume: u64,
    last_mid: Option<MidPrice>,
    records: ExchangeRecords,
}

impl Default for Exchange {
    fn default() -> Self {
        Self::new()
    }
}

impl Exchange {
    pub fn new() -> Self {
        Exchange {
            book: OrderBook::new(),
            owners: HashMap::new(),
            traded_volume: 0,
            last_mid: None,
            records: ExchangeRecords::default(),
        }
    }

    pub fn book(&self) -> &OrderBook {
        &self.book
    }

    pub fn traded_volume(&self) -> u64 {
        self.traded_volume
    }

    pub fn records(&self) -> &ExchangeRecords {
        &self.records
    }

    fn log_order(&mut self, time: Nanos, agent: AgentId, order: &Order, volume: u64, event: OrderEventKind) {
        self.records.orders.push(OrderLogRecord {
            time,
            agent,
            side: order.side,
            price: order.price,
            volume,
            order_id: order.id,
            event,
        });
    }

    fn record_mid(&mut self, time: Nanos) {
        let mid = self.book.mid();
        if mid.is_some() {
            self.last_mid = mid;
        }
        self.records.mids.push((time, mid));
    }

    fn remove_order(&mut self, ctx: &Context<'_>, order_id: OrderId, volume: Option<u64>, event: OrderEventKind) -> (u64, bool) {
        let resting = self.book.resting(order_id);
        let cancelled = self.book.cancel(order_id, volume).volume();
        if let Some((side, price, _)) = resting {
            let owner = self.owners.get(&order_id).copied().unwrap_or(AgentId(usize::MAX));
            let order = Order::limit(order_id, side, price, cancelled, ctx.now());
            self.log_order(ctx.now(), owner, &order, cancelled, event);
            if !self.book.contains(order_id) {
                self.owners.remove(&order_id);
            }
        }
        (cancelled, resting.is_some())
    }
}

impl Agent for Exchange {
    fn name(&self) -> &str {
        "exchange"
    }

    fn priority(&self) -> u8 {
        0
    }

    fn on_message(&mut self, ctx: &mut Context<'_>, sender: AgentId, payload: &Payload) -> Result<(), AgentError> {
        let now = ctx.now();
        match payload {
            Payload::Submit { order, marketable_only, ttl } => {
                let order = Order { timestamp: now, ..*order };
                match self.book.submit(order, *marketable_only) {
                    Ok(outcome) => {
                        self.log_order(now, sender, &order, order.volume, OrderEventKind::Submit);
                        let mut fills = Vec::with_capacity(outcome.trades.len());
                        for trade in &outcome.trades {
                            self.traded_volume += trade.volume;
                            let resting_id = trade.resting_order_id();
                            fills.push(Fill { resting_id, price: trade.price, volume: trade.volume });
                            if let Some(&owner) = self.owners.get(&resting_id) {
                                ctx.send(
                                    owner,
                                    Payload::Filled { order_id: resting_id, price: trade.price, volume: trade.volume },
                                );
                                if !self.book.contains(resting_id) {
                                    self.owners.remove(&resting_id);
                                }
                            }
                        }
                        self.records.trades.extend_from_slice(&outcome.trades);
                        let rested = outcome.resting.map_or(0, |r| r.volume);
                        if rested > 0 {
                            self.owners.insert(order.id, sender);
                            if let Some(ttl) = ttl {
                                ctx.send_at(ctx.id(), now + ttl, Payload::Expire { order_id: order.id });
                            }
                        }
                        ctx.send(
                            sender,
                            Payload::Executed {
                                order_id: order.id,
                                filled: outcome.filled(),
                                discarded: outcome.discarded,
                                rested,
                                fills,
                            },
                        );
                    }
                    Err(e) => {
                        self.log_order(now, sender, &order, order.volume, OrderEventKind::Reject);
                        ctx.send(sender, Payload::Rejected { order_id: order.id, reason: e.to_string() });
                    }
                }
                self.record_mid(now);
            }
            Payload::Cancel { order_id, volume } => {
                let (cancelled, found) = self.remove_order(ctx, *order_id, *volume, OrderEventKind::Cancel);
                ctx.send(sender, Payload::CancelAck { order_id: *order_id, cancelled, found });
                self.record_mid(now);
            }
            Payload::Expire { order_id } => {
                self.remove_order(ctx, *order_id, None, OrderEventKind::Expire);
                self.record_mid(now);
            }
            Payload::QueryMarket { depth } => {
                let md = MarketData {
                    snapshot: self.book.snapshot(*depth, now),
                    traded_volume: self.traded_volume,
                    last_mid: self.last_mid,
                };
                ctx.send(sender, Payload::MarketData(Box::new(md)));
            }
            Payload::Wakeup => {}
            other => {
                return Err(AgentError::new(format!("exchange cannot handle {}", other.kind())));
            }
        }
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
