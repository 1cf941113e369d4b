//! CGAN world agent: warm-up by replay, then one generated order per wakeup.

use std::any::Any;
use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::replay::{id_namespace, opening_orders, ReplayCursor};
use super::AgentsError;
use crate::cgan::{sample_order, Generator};
use crate::data::lobster::{LobsterBookRow, LobsterMessage, LobsterSession};
use crate::data::{annotate_session, AnnotatedOrder, BookFeatures, FeatureScalers, FeatureWindow, QuoteTracker, NUM_FEATURES};
use crate::kernel::{clock, Agent, AgentError, AgentId, Context, Payload, NANOS_PER_SEC};
use crate::lob::{Nanos, Order, OrderId, Price, DEFAULT_DEPTH};

/// Trained generator plus everything needed to turn its output into orders.
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub generator: Generator,
    pub scalers: FeatureScalers,
    pub price_tick: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CganWorldConfig {
    pub session_open: Nanos,
    /// Replay period before generation starts.
    pub warmup: Nanos,
    /// Lifetime of generated orders, and of replayed warm-up orders counted
    /// from the end of warm-up; `None` keeps them until filled.
    pub ttl: Option<Nanos>,
    pub depth: usize,
}

impl Default for CganWorldConfig {
    fn default() -> Self {
        CganWorldConfig {
            session_open: clock(9, 30, 0),
            warmup: 30 * 60 * NANOS_PER_SEC,
            ttl: Some(5 * 60 * NANOS_PER_SEC),
            depth: DEFAULT_DEPTH,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WorldStats {
    pub warmup_orders: u64,
    pub generated: u64,
    pub rejected: u64,
}

/// One generated order with the book features it was conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratedOrder {
    pub order: Order,
    pub interarrival: Nanos,
    pub book: BookFeatures,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    raw: [f64; NUM_FEATURES],
    norm: [f64; NUM_FEATURES],
}

pub struct CganWorldAgent {
    exchange: AgentId,
    model: Arc<WorldModel>,
    config: CganWorldConfig,
    history_len: usize,
    cursor: ReplayCursor,
    opening: Option<(LobsterMessage, LobsterBookRow)>,
    opening_ids: Vec<OrderId>,
    warm_orders: Vec<AnnotatedOrder>,
    generation_start: Nanos,
    history: VecDeque<Entry>,
    tracker: QuoteTracker,
    next_id: OrderId,
    stats: WorldStats,
    wakeup_time: Nanos,
    warmup_done: bool,
    pub generated: Vec<GeneratedOrder>,
}

fn set_book(raw: &mut [f64; NUM_FEATURES], b: &BookFeatures) {
    raw[4..].copy_from_slice(&[
        b.best_bid_price,
        b.best_bid_volume,
        b.best_ask_price,
        b.best_ask_volume,
        b.mid_price,
        b.time_period,
    ]);
}

impl CganWorldAgent {
    /// `start_time` is the kernel start; warm-up covers `[start, start + warmup)`
    /// and is extended until the history holds a full window.
    pub fn new(
        exchange: AgentId,
        model: Arc<WorldModel>,
        config: CganWorldConfig,
        session: &LobsterSession,
        start_time: Nanos,
    ) -> Result<Self, AgentsError> {
        let history_len = model.generator.config().history;
        let warm_end = start_time + config.warmup;
        let last_time = session.rows.last().map_or(Nanos::MIN, |(m, _)| m.time.nanos);
        if config.warmup > 0 && last_time < warm_end - 1 {
            return Err(AgentsError::WarmupTooShort { covers_until: last_time, needed: warm_end });
        }
        let annotated = annotate_session(session, config.session_open);
        let in_window = annotated.iter().filter(|o| o.time < warm_end).count();
        let generation_start = if in_window >= history_len {
            warm_end
        } else {
            annotated.get(history_len - 1).map_or(warm_end, |o| o.time + 1)
        };
        let warm_orders: Vec<AnnotatedOrder> = annotated.into_iter().filter(|o| o.time < generation_start).collect();
        let messages = session.rows.iter().map(|(m, _)| *m).filter(|m| m.time.nanos < generation_start).collect();
        Ok(CganWorldAgent {
            exchange,
            model,
            config,
            history_len,
            cursor: ReplayCursor::new(messages, None),
            opening: session.rows.first().cloned(),
            opening_ids: Vec::new(),
            warm_orders,
            generation_start,
            history: VecDeque::with_capacity(history_len + 1),
            tracker: QuoteTracker::default(),
            next_id: 0,
            stats: WorldStats::default(),
            wakeup_time: start_time,
            warmup_done: false,
            generated: Vec::new(),
        })
    }

    pub fn stats(&self) -> WorldStats {
        self.stats
    }

    pub fn generation_start(&self) -> Nanos {
        self.generation_start
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    fn push_entry(&mut self, raw: [f64; NUM_FEATURES]) {
        let norm = self.model.scalers.normalize(&raw);
        self.history.push_back(Entry { raw, norm });
        while self.history.len() > self.history_len {
            self.history.pop_front();
        }
    }

    fn absorb_warm_orders(&mut self, until: Nanos) {
        let n = self.warm_orders.iter().take_while(|o| o.time <= until).count();
        let taken: Vec<AnnotatedOrder> = self.warm_orders.drain(..n).collect();
        for o in taken {
            self.stats.warmup_orders += 1;
            self.push_entry(o.raw_features());
            let b = o.book;
            let quote = |p: f64, v: f64| (v > 0.0).then_some((Price(p as i64), v as u64));
            self.tracker.observe(
                quote(b.best_bid_price, b.best_bid_volume),
                quote(b.best_ask_price, b.best_ask_volume),
                o.time,
                self.config.session_open,
            );
        }
    }

    fn finish_warmup(&mut self, ctx: &mut Context<'_>) -> Result<(), AgentError> {
        self.cursor.emit_due(ctx, self.exchange);
        self.absorb_warm_orders(Nanos::MAX);
        if self.history.len() < self.history_len {
            return Err(AgentError::new(format!(
                "insufficient warm-up: {} annotated orders, {} required",
                self.history.len(),
                self.history_len
            )));
        }
        if let Some(ttl) = self.config.ttl {
            let at = ctx.now() + ttl;
            for id in self.opening_ids.drain(..).chain(self.cursor.outstanding_adds()) {
                ctx.send_at(self.exchange, at, Payload::Cancel { order_id: id, volume: None });
            }
        }
        self.warmup_done = true;
        Ok(())
    }

    fn window(&self) -> FeatureWindow {
        let rows: Vec<[f64; NUM_FEATURES]> = self.history.iter().map(|e| e.norm).collect();
        FeatureWindow::from_chronological(&rows)
    }

    fn generate(&mut self, ctx: &mut Context<'_>, snapshot: &crate::lob::LobSnapshot) -> Result<(), AgentError> {
        let book = self.tracker.observe_snapshot(snapshot, self.config.session_open);
        if let Some(last) = self.history.back_mut() {
            set_book(&mut last.raw, &book);
            last.norm = self.model.scalers.normalize(&last.raw);
        }
        let window = self.window();
        let model = Arc::clone(&self.model);
        let o = sample_order(&model.generator, &window, ctx.rng(), &model.scalers, model.price_tick)
            .map_err(|e| AgentError::new(e.to_string()))?;
        let now = ctx.now();
        let order = Order::limit(self.next_id, o.side, o.price, o.volume, now);
        self.next_id += 1;
        ctx.send(self.exchange, Payload::Submit { order, marketable_only: false, ttl: self.config.ttl });
        self.generated.push(GeneratedOrder { order, interarrival: o.interarrival, book });
        self.stats.generated += 1;

        let mut raw = [0.0; NUM_FEATURES];
        raw[..4].copy_from_slice(&[o.price.0 as f64, o.volume as f64, o.side.direction() as f64, o.interarrival as f64]);
        set_book(&mut raw, &book);
        self.push_entry(raw);
        ctx.wakeup_at((self.wakeup_time + o.interarrival).max(now));
        Ok(())
    }
}

impl Agent for CganWorldAgent {
    fn name(&self) -> &str {
        "cgan-world"
    }

    fn on_start(&mut self, ctx: &mut Context<'_>) -> Result<(), AgentError> {
        self.cursor.set_namespace(ctx.id());
        self.next_id = id_namespace(ctx.id()) + (1 << 39);
        if let Some(first) = self.opening.take() {
            if first.0.time.nanos < self.generation_start {
                for order in opening_orders(&first, id_namespace(ctx.id()) + (1 << 38)) {
                    self.opening_ids.push(order.id);
                    ctx.send(self.exchange, Payload::Submit { order, marketable_only: false, ttl: None });
                }
            }
        }
        if let Some(t) = self.cursor.peek_time() {
            ctx.wakeup_at(t.max(ctx.now()));
        }
        ctx.wakeup_at(self.generation_start.max(ctx.now()));
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut Context<'_>, _sender: AgentId, payload: &Payload) -> Result<(), AgentError> {
        match payload {
            Payload::Wakeup if ctx.now() < self.generation_start => {
                self.cursor.emit_due(ctx, self.exchange);
                self.absorb_warm_orders(ctx.now());
                if let Some(t) = self.cursor.peek_time() {
                    ctx.wakeup_at(t);
                }
            }
            Payload::Wakeup => {
                if !self.warmup_done {
                    self.finish_warmup(ctx)?;
                }
                self.wakeup_time = ctx.now();
                ctx.send(self.exchange, Payload::QueryMarket { depth: self.config.depth });
            }
            Payload::MarketData(md) => {
                let snapshot = md.snapshot.clone();
                self.generate(ctx, &snapshot)?;
            }
            Payload::Rejected { .. } => self.stats.rejected += 1,
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
