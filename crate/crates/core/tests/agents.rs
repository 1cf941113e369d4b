use std::any::Any;
use std::collections::BTreeMap;
use std::sync::Arc;

use marketsim::agents::{CganWorldAgent, CganWorldConfig, PovAgent, PovConfig, ReplayAgent, WorldModel};
use marketsim::cgan::{Generator, ModelConfig};
use marketsim::data::lobster::{LobsterBookRow, LobsterMessage, LobsterSession, LobsterTime, MessageType};
use marketsim::data::{annotate_session, FeatureScalers};
use marketsim::exchange::Exchange;
use marketsim::kernel::{clock, Agent, AgentError, AgentId, Context, Kernel, KernelConfig, KernelError, Payload, NANOS_PER_SEC};
use marketsim::lob::{MidPrice, Nanos, Order, OrderBook, Price, Side};
use marketsim::synthetic::{generate, SyntheticConfig, SyntheticSession};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const OPEN: Nanos = clock(9, 30, 0);

fn synthetic(orders: usize) -> SyntheticSession {
    generate(&SyntheticConfig { orders, ..SyntheticConfig::default() })
}

fn untrained_model(session: &LobsterSession) -> Arc<WorldModel> {
    let raw: Vec<[f64; 10]> = annotate_session(session, OPEN).iter().map(|o| o.raw_features()).collect();
    let scalers = FeatureScalers::fit(&raw).unwrap();
    let generator = Generator::new(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(3));
    Arc::new(WorldModel { generator, scalers, price_tick: 100 })
}

fn kernel(seed: u64, end: Nanos) -> Kernel {
    Kernel::new(KernelConfig { start_time: OPEN, end_time: end, seed, latency: 0 }).unwrap()
}

/// Last historical mid at every distinct message time.
fn historical_mids(rows: &[(LobsterMessage, LobsterBookRow)], until: Nanos) -> BTreeMap<Nanos, Option<MidPrice>> {
    rows.iter().filter(|(m, _)| m.time.nanos < until).map(|(m, b)| (m.time.nanos, b.mid_price())).collect()
}

fn simulated_mids(exchange: &Exchange) -> BTreeMap<Nanos, Option<MidPrice>> {
    exchange.records().mids.iter().copied().collect()
}

struct Observer {
    exchange: AgentId,
    checks: usize,
    crossed: usize,
}

impl Agent for Observer {
    fn name(&self) -> &str {
        "observer"
    }

    fn on_start(&mut self, ctx: &mut Context<'_>) -> Result<(), AgentError> {
        ctx.wakeup_at(ctx.now());
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut Context<'_>, _: AgentId, payload: &Payload) -> Result<(), AgentError> {
        match payload {
            Payload::Wakeup => {
                ctx.send(self.exchange, Payload::QueryMarket { depth: 1 });
                ctx.wakeup_at(ctx.now() + NANOS_PER_SEC);
            }
            Payload::MarketData(md) => {
                self.checks += 1;
                if let (Some((b, _)), Some((a, _))) = (md.snapshot.best_bid(), md.snapshot.best_ask()) {
                    if b >= a {
                        self.crossed += 1;
                    }
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

#[test]
fn replay_reproduces_historical_mids() {
    let s = synthetic(4_000);
    let end = s.session.rows.last().unwrap().0.time.nanos + 1;
    let mut k = kernel(1, end);
    let ex = k.register_agent(Box::new(Exchange::new())).unwrap();
    let rp = k.register_agent(Box::new(ReplayAgent::new(ex, &s.session.rows))).unwrap();
    k.run().unwrap();
    let hist = historical_mids(&s.session.rows, end);
    let sim = simulated_mids(k.agent::<Exchange>(ex).unwrap());
    for (t, m) in &hist {
        let got = sim.get(t).copied().flatten();
        match (m, got) {
            (Some(a), Some(b)) => assert!((a.ticks() - b.ticks()).abs() <= 100.0, "t={t}: {a} vs {b}"),
            (a, b) => assert_eq!(a.is_some(), b.is_some(), "t={t}"),
        }
    }
    let stats = k.agent::<ReplayAgent>(rp).unwrap().stats();
    assert_eq!(stats.divergent_executions, 0);
    assert_eq!(stats.cancels_not_found, 0);
    assert!(stats.executions > 0);
}

fn handmade_session(messages: &[(MessageType, u64, u64, i64, Side)]) -> LobsterSession {
    let mut book = OrderBook::new();
    let mut rows = Vec::new();
    for (i, &(kind, id, size, price, side)) in messages.iter().enumerate() {
        let t = OPEN + i as Nanos * NANOS_PER_SEC;
        match kind {
            MessageType::NewLimit => {
                book.submit(Order::limit(id, side, Price(price), size, t), false).unwrap();
            }
            _ => {
                book.cancel(id, Some(size));
            }
        }
        let m = LobsterMessage { time: LobsterTime::from_nanos(t), kind, order_id: id, size, price, direction: side.direction() as i8 };
        rows.push((m, LobsterBookRow::from_snapshot(&book.snapshot(5, t), 5)));
    }
    LobsterSession { rows, issues: Vec::new() }
}

#[test]
fn replayed_delete_removes_exactly_the_remaining_size() {
    use MessageType::*;
    let s = handmade_session(&[
        (NewLimit, 1, 100, 10_000, Side::Buy),
        (NewLimit, 2, 50, 10_000, Side::Buy),
        (NewLimit, 3, 70, 10_100, Side::Sell),
        (PartialCancel, 1, 30, 10_000, Side::Buy),
        (Delete, 1, 70, 10_000, Side::Buy),
        (Delete, 99, 10, 10_000, Side::Buy),
    ]);
    let mut k = kernel(0, OPEN + 10 * NANOS_PER_SEC);
    let ex = k.register_agent(Box::new(Exchange::new())).unwrap();
    let rp = k.register_agent(Box::new(ReplayAgent::new(ex, &s.rows))).unwrap();
    let log = k.run().unwrap();
    let book = k.agent::<Exchange>(ex).unwrap().book();
    assert_eq!(book.best_bid(), Some((Price(10_000), 50)));
    assert_eq!(book.best_ask(), Some((Price(10_100), 70)));
    assert_eq!(k.agent::<ReplayAgent>(rp).unwrap().stats().cancels_not_found, 1);
    // exhausted cursor: nothing sent after the last message
    let last = s.rows.last().unwrap().0.time.nanos;
    assert!(log.records.iter().filter(|r| r.sender == rp).all(|r| r.time <= last));
}

#[test]
fn warmup_replay_reproduces_historical_mids() {
    let s = synthetic(6_000);
    let model = untrained_model(&s.session);
    let config = CganWorldConfig { warmup: 10 * 60 * NANOS_PER_SEC, ..CganWorldConfig::default() };
    let world = CganWorldAgent::new(AgentId(0), model, config.clone(), &s.session, OPEN).unwrap();
    let gen_start = world.generation_start();
    assert_eq!(gen_start, OPEN + config.warmup);
    let mut k = kernel(5, gen_start - 1);
    let ex = k.register_agent(Box::new(Exchange::new())).unwrap();
    assert_eq!(ex, AgentId(0));
    k.register_agent(Box::new(world)).unwrap();
    k.run().unwrap();
    let hist = historical_mids(&s.session.rows, gen_start);
    let sim = simulated_mids(k.agent::<Exchange>(ex).unwrap());
    assert!(hist.len() > 100);
    for (t, m) in &hist {
        assert_eq!(sim.get(t).copied().flatten(), *m, "t={t}");
    }
}

#[test]
fn generation_follows_interarrivals_and_keeps_orders_valid() {
    let s = synthetic(20_000);
    let model = untrained_model(&s.session);
    let end = clock(10, 30, 0);
    for seed in 0..5 {
        let mut k = kernel(seed, end);
        let ex = k.register_agent(Box::new(Exchange::new())).unwrap();
        let world = CganWorldAgent::new(ex, model.clone(), CganWorldConfig::default(), &s.session, OPEN).unwrap();
        let w = k.register_agent(Box::new(world)).unwrap();
        let ob = k.register_agent(Box::new(Observer { exchange: ex, checks: 0, crossed: 0 })).unwrap();
        k.run().unwrap();
        let world = k.agent::<CganWorldAgent>(w).unwrap();
        let gen = &world.generated;
        assert!(gen.len() > 100, "seed {seed}: {} orders", gen.len());
        assert_eq!(world.history_len(), 50);
        assert_eq!(gen[0].order.timestamp, world.generation_start());
        for pair in gen.windows(2) {
            assert_eq!(pair[1].order.timestamp, pair[0].order.timestamp + pair[0].interarrival);
        }
        for g in gen {
            assert!(g.order.volume >= 1 && g.order.price.0 >= 100 && g.order.price.0 % 100 == 0);
            assert!(g.interarrival >= 1);
        }
        let obs = k.agent::<Observer>(ob).unwrap();
        assert!(obs.checks >= 3600);
        assert_eq!(obs.crossed, 0, "seed {seed}");
    }
}

#[test]
fn pov_trades_change_the_conditioning_features() {
    let s = synthetic(20_000);
    let model = untrained_model(&s.session);
    let end = clock(10, 40, 0);
    let run = |with_pov: bool| {
        let mut k = kernel(11, end);
        let ex = k.register_agent(Box::new(Exchange::new())).unwrap();
        let world = CganWorldAgent::new(ex, model.clone(), CganWorldConfig::default(), &s.session, OPEN).unwrap();
        let w = k.register_agent(Box::new(world)).unwrap();
        let mut first_trade = None;
        if with_pov {
            let pov = PovConfig { lambda: 0.25, ..PovConfig::default() };
            let p = k.register_agent(Box::new(PovAgent::new(ex, pov).unwrap())).unwrap();
            k.run().unwrap();
            let pov = k.agent::<PovAgent>(p).unwrap();
            assert!(pov.stats().transacted > 0);
            first_trade = pov.submitted.first().map(|(t, _)| *t);
        } else {
            k.run().unwrap();
        }
        (k.agent::<CganWorldAgent>(w).unwrap().generated.clone(), first_trade)
    };
    let (without, _) = run(false);
    let (with, first_trade) = run(true);
    let first_trade = first_trade.unwrap();
    assert!(first_trade >= clock(10, 30, 0));
    let split = with.iter().zip(&without).position(|(a, b)| a != b).expect("runs diverge");
    assert!(with[split].order.timestamp >= first_trade);
    // identical noise up to the divergence point, so the first difference is in the features
    assert_ne!(with[split].book, without[split].book);
    assert_eq!(with[..split], without[..split]);
}

#[test]
fn pov_respects_target_and_window() {
    let s = synthetic(20_000);
    let end = clock(11, 10, 0);
    let mut k = kernel(2, end);
    let ex = k.register_agent(Box::new(Exchange::new())).unwrap();
    k.register_agent(Box::new(ReplayAgent::new(ex, &s.session.rows))).unwrap();
    let config = PovConfig { lambda: 1.0, target: 2_000, ..PovConfig::default() };
    let p = k.register_agent(Box::new(PovAgent::new(ex, config.clone()).unwrap())).unwrap();
    k.run().unwrap();
    let pov = k.agent::<PovAgent>(p).unwrap();
    assert!(pov.stats().transacted <= config.target);
    assert!(pov.stats().orders > 0);
    for (t, o) in &pov.submitted {
        assert!((config.start..=config.end).contains(t));
        assert_eq!(o.side, Side::Buy);
    }
}

#[test]
fn pov_stops_at_end_of_window() {
    let s = synthetic(20_000);
    let mut k = kernel(2, clock(11, 10, 0));
    let ex = k.register_agent(Box::new(Exchange::new())).unwrap();
    k.register_agent(Box::new(ReplayAgent::new(ex, &s.session.rows))).unwrap();
    let config = PovConfig { lambda: 0.5, side: Side::Sell, ..PovConfig::default() };
    let p = k.register_agent(Box::new(PovAgent::new(ex, config.clone()).unwrap())).unwrap();
    k.run().unwrap();
    let pov = k.agent::<PovAgent>(p).unwrap();
    assert!(pov.stats().orders >= 20, "orders {}", pov.stats().orders);
    assert!(pov.submitted.iter().all(|(t, o)| *t >= config.start && *t <= config.end && o.side == Side::Sell));
}

#[test]
fn full_window_after_exactly_n_warmup_orders() {
    let s = synthetic(200);
    let model = untrained_model(&s.session);
    let fiftieth = annotate_session(&s.session, OPEN)[49].time;
    let config = CganWorldConfig { warmup: fiftieth + 1 - OPEN, ..CganWorldConfig::default() };
    let mut k = kernel(0, fiftieth + 60 * NANOS_PER_SEC);
    let ex = k.register_agent(Box::new(Exchange::new())).unwrap();
    let world = CganWorldAgent::new(ex, model, config, &s.session, OPEN).unwrap();
    let w = k.register_agent(Box::new(world)).unwrap();
    k.run().unwrap();
    let world = k.agent::<CganWorldAgent>(w).unwrap();
    assert_eq!(world.stats().warmup_orders, 50);
    assert!(world.stats().generated > 0);
}

#[test]
fn zero_warmup_without_history_fails_at_first_wakeup() {
    let s = synthetic(200);
    let model = untrained_model(&s.session);
    let empty = LobsterSession { rows: Vec::new(), issues: Vec::new() };
    let config = CganWorldConfig { warmup: 0, ..CganWorldConfig::default() };
    let mut k = kernel(0, OPEN + NANOS_PER_SEC);
    let ex = k.register_agent(Box::new(Exchange::new())).unwrap();
    let world = CganWorldAgent::new(ex, model, config, &empty, OPEN).unwrap();
    k.register_agent(Box::new(world)).unwrap();
    match k.run() {
        Err(KernelError::AgentFailed { source, .. }) => assert!(source.0.contains("insufficient warm-up")),
        other => panic!("expected failure, got {other:?}"),
    }
}

#[test]
fn short_warmup_extends_to_a_full_window() {
    let s = synthetic(200);
    let model = untrained_model(&s.session);
    let config = CganWorldConfig { warmup: 1, ..CganWorldConfig::default() };
    let world = CganWorldAgent::new(AgentId(0), model, config, &s.session, OPEN).unwrap();
    assert_eq!(world.generation_start(), annotate_session(&s.session, OPEN)[49].time + 1);
}

#[test]
fn stream_shorter_than_warmup_is_rejected() {
    let s = synthetic(200);
    let model = untrained_model(&s.session);
    assert!(CganWorldAgent::new(AgentId(0), model, CganWorldConfig::default(), &s.session, OPEN).is_err());
}
