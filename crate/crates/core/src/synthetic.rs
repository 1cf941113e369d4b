//! A synthetic order process with known marginals, written out as LOBSTER files.
//!
//! Each order is priced a geometric number of ticks away from the last mid
//! (occasionally one tick through it, which makes it marketable), has a
//! log-normal size, a buy probability that follows the sign of the recent
//! mid-price return, and an exponential interarrival whose rate depends on the
//! mid-price level. Unfilled residuals expire after a fixed time to live.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, LogNormal};
use serde::{Deserialize, Serialize};

use crate::data::lobster::{LobsterBookRow, LobsterMessage, LobsterSession, LobsterTime, MessageType};
use crate::kernel::{clock, NANOS_PER_SEC};
use crate::lob::{Nanos, Order, OrderBook, OrderId, Price, Side};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub start_time: Nanos,
    pub orders: usize,
    /// Initial mid in price units (10^-4 currency).
    pub start_mid: i64,
    pub tick: i64,
    pub mean_interarrival_secs: f64,
    /// Log-rate change per unit relative mid deviation from `start_mid`.
    pub rate_sensitivity: f64,
    /// Success probability of the geometric tick offset.
    pub offset_p: f64,
    /// Probability that an order is priced one tick through the mid instead.
    pub aggressive_prob: f64,
    pub volume_log_mean: f64,
    pub volume_log_sd: f64,
    /// Buy probability is `0.5 ± direction_bias` by the sign of the recent return.
    pub direction_bias: f64,
    /// Orders back over which the recent return is measured.
    pub momentum_lookback: usize,
    pub ttl: Nanos,
    pub depth: usize,
    /// Levels per side placed at the start time.
    pub seed_levels: usize,
    pub seed_volume: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 7,
            start_time: clock(9, 30, 0),
            orders: 20_000,
            start_mid: 1_000_050,
            tick: 100,
            mean_interarrival_secs: 0.5,
            rate_sensitivity: 20.0,
            offset_p: 0.2,
            aggressive_prob: 0.35,
            volume_log_mean: 100f64.ln(),
            volume_log_sd: 0.7,
            direction_bias: 0.15,
            momentum_lookback: 20,
            ttl: 300 * NANOS_PER_SEC,
            depth: 10,
            seed_levels: 5,
            seed_volume: 200,
        }
    }
}

/// An order as drawn by the process, before matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleOrder {
    pub time: Nanos,
    pub side: Side,
    pub price: Price,
    pub volume: u64,
    pub interarrival: Nanos,
}

#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub session: LobsterSession,
    pub orders: Vec<OracleOrder>,
}

struct Writer {
    depth: usize,
    /// Book mirrored message by message for the per-row snapshots.
    shadow: OrderBook,
    rows: Vec<(LobsterMessage, LobsterBookRow)>,
}

impl Writer {
    fn push(&mut self, time: Nanos, kind: MessageType, id: OrderId, size: u64, price: Price, side: Side) {
        match kind {
            MessageType::NewLimit => {
                self.shadow.submit(Order::limit(id, side, price, size, time), false).expect("valid residual");
            }
            _ => {
                self.shadow.cancel(id, Some(size));
            }
        }
        let msg = LobsterMessage {
            time: LobsterTime::from_nanos(time),
            kind,
            order_id: id,
            size,
            price: price.0,
            direction: side.direction() as i8,
        };
        let book = LobsterBookRow::from_snapshot(&self.shadow.snapshot(self.depth, time), self.depth);
        self.rows.push((msg, book));
    }
}

fn floor_to(x: i64, tick: i64) -> i64 {
    x.div_euclid(tick) * tick
}

/// Run the process for `config.orders` orders.
pub fn generate(config: &SyntheticConfig) -> SyntheticSession {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tick = config.tick;
    let geometric = Geometric::new(config.offset_p).expect("offset probability in (0, 1]");
    let volume = LogNormal::new(config.volume_log_mean, config.volume_log_sd).expect("finite volume parameters");
    let unit_exp = Exp::new(1.0).expect("unit rate");

    let mut book = OrderBook::new();
    let mut writer = Writer { depth: config.depth, shadow: OrderBook::new(), rows: Vec::new() };
    let mut expiries: BinaryHeap<Reverse<(Nanos, OrderId)>> = BinaryHeap::new();
    let mut orders = Vec::with_capacity(config.orders);
    let mut next_id: OrderId = 1;
    let mut time = config.start_time;
    let mut prev_time = config.start_time;
    let mut mids: Vec<f64> = Vec::with_capacity(config.orders);

    let place = |book: &mut OrderBook,
                     writer: &mut Writer,
                     expiries: &mut BinaryHeap<Reverse<(Nanos, OrderId)>>,
                     id: OrderId,
                     side: Side,
                     price: Price,
                     size: u64,
                     time: Nanos| {
        let out = book.submit(Order::limit(id, side, price, size, time), false).expect("valid order");
        for t in &out.trades {
            writer.push(time, MessageType::ExecuteVisible, t.resting_order_id(), t.volume, t.price, side.opposite());
        }
        if let Some(rest) = out.resting {
            writer.push(time, MessageType::NewLimit, id, rest.volume, price, side);
            expiries.push(Reverse((time + config.ttl, id)));
        }
    };

    let half = config.start_mid.rem_euclid(tick).max(tick / 2);
    let seed_bid = floor_to(config.start_mid - half, tick);
    for level in 0..config.seed_levels as i64 {
        for side in [Side::Buy, Side::Sell] {
            let price = match side {
                Side::Buy => seed_bid - level * tick,
                Side::Sell => seed_bid + (level + 1) * tick,
            };
            place(&mut book, &mut writer, &mut expiries, next_id, side, Price(price), config.seed_volume, time);
            orders.push(OracleOrder { time, side, price: Price(price), volume: config.seed_volume, interarrival: (time - prev_time).max(1) });
            prev_time = time;
            next_id += 1;
            time += 1;
        }
    }

    let mut last_mid = book.mid().map_or(config.start_mid as f64, |m| m.ticks());
    while orders.len() < config.orders {
        let rel = last_mid / config.start_mid as f64 - 1.0;
        let rate = (config.rate_sensitivity * rel).clamp(-3.0, 3.0).exp() / config.mean_interarrival_secs;
        let wait = (unit_exp.sample(&mut rng) / rate * 1e9).round().max(1.0) as Nanos;
        time += wait;

        while let Some(&Reverse((at, id))) = expiries.peek() {
            if at > time {
                break;
            }
            expiries.pop();
            if let Some((side, price, remaining)) = book.resting(id) {
                book.cancel(id, None);
                writer.push(at, MessageType::Delete, id, remaining, price, side);
            }
        }
        if let Some(m) = book.mid() {
            last_mid = m.ticks();
        }
        mids.push(last_mid);

        let ret = mids.len().checked_sub(config.momentum_lookback + 1).map_or(0.0, |i| last_mid - mids[i]);
        let p_buy = match ret.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 0.5 + config.direction_bias,
            Some(std::cmp::Ordering::Less) => 0.5 - config.direction_bias,
            _ => 0.5,
        };
        let side = if rng.random_bool(p_buy) { Side::Buy } else { Side::Sell };
        let offset = if rng.random_bool(config.aggressive_prob) { -1 } else { geometric.sample(&mut rng) as i64 };
        let anchor = floor_to((last_mid - tick as f64 / 2.0).floor() as i64, tick);
        let price = match side {
            Side::Buy => anchor - offset * tick,
            Side::Sell => anchor + tick + offset * tick,
        }
        .max(tick);
        let size = (volume.sample(&mut rng).round() as u64).max(1);

        place(&mut book, &mut writer, &mut expiries, next_id, side, Price(price), size, time);
        orders.push(OracleOrder { time, side, price: Price(price), volume: size, interarrival: time - prev_time });
        prev_time = time;
        next_id += 1;
    }
    SyntheticSession { session: LobsterSession { rows: writer.rows, issues: Vec::new() }, orders }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::reconstruct_orders;

    fn small() -> SyntheticConfig {
        SyntheticConfig { orders: 3_000, ..SyntheticConfig::default() }
    }

    #[test]
    fn reconstruction_recovers_the_drawn_orders() {
        let s = generate(&small());
        let msgs: Vec<LobsterMessage> = s.session.messages().copied().collect();
        let rec = reconstruct_orders(&msgs);
        assert_eq!(rec.len(), s.orders.len());
        for (r, o) in rec.iter().zip(&s.orders) {
            assert_eq!((r.time, r.side, r.price, r.volume), (o.time, o.side, o.price, o.volume));
        }
    }

    #[test]
    fn book_rows_match_an_independent_replay() {
        let s = generate(&small());
        let mut book = OrderBook::new();
        for (m, row) in &s.session.rows {
            match m.kind {
                MessageType::NewLimit => {
                    book.submit(Order::limit(m.order_id, m.side(), Price(m.price), m.size, m.time.nanos), false).unwrap();
                }
                _ => assert_eq!(book.cancel(m.order_id, Some(m.size)).volume(), m.size),
            }
            assert_eq!(&LobsterBookRow::from_snapshot(&book.snapshot(10, 0), 10), row);
        }
    }

    #[test]
    fn deterministic_and_time_ordered() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.orders, b.orders);
        assert!(a.session.rows.windows(2).all(|w| w[0].0.time <= w[1].0.time));
        assert!(a.orders.iter().all(|o| o.interarrival >= 1 && o.volume >= 1 && o.price.0 % 100 == 0));
        let buys = a.orders.iter().filter(|o| o.side == Side::Buy).count() as f64 / a.orders.len() as f64;
        assert!((0.4..0.6).contains(&buys), "buy fraction {buys}");
    }
}
