//! Brute-force price-then-FIFO matcher: a flat list of resting orders
//! scanned linearly for every fill.

#![allow(dead_code)]

use marketsim::lob::{Nanos, Order, OrderId, Price, Side, Trade};
use rand::Rng;

#[derive(Debug, Clone)]
struct Resting {
    id: OrderId,
    side: Side,
    price: Price,
    remaining: u64,
    arrival: u64,
}

#[derive(Debug, Default)]
pub struct ReferenceBook {
    resting: Vec<Resting>,
    arrivals: u64,
    pub trades: Vec<Trade>,
}

impl ReferenceBook {
    fn best_match(&self, order: &Order) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.resting.iter().enumerate() {
            if r.side == order.side {
                continue;
            }
            let crosses = match order.side {
                Side::Buy => order.price >= r.price,
                Side::Sell => order.price <= r.price,
            };
            if !crosses {
                continue;
            }
            let better = match best {
                None => true,
                Some(j) => {
                    let b = &self.resting[j];
                    let price_better = match order.side {
                        Side::Buy => r.price < b.price,
                        Side::Sell => r.price > b.price,
                    };
                    price_better || (r.price == b.price && r.arrival < b.arrival)
                }
            };
            if better {
                best = Some(i);
            }
        }
        best
    }

    pub fn submit(&mut self, order: Order, marketable_only: bool) {
        let mut remaining = order.volume;
        while remaining > 0 {
            let Some(i) = self.best_match(&order) else { break };
            let r = &mut self.resting[i];
            let qty = remaining.min(r.remaining);
            let (buy_order_id, sell_order_id) = match order.side {
                Side::Buy => (order.id, r.id),
                Side::Sell => (r.id, order.id),
            };
            self.trades.push(Trade {
                buy_order_id,
                sell_order_id,
                price: r.price,
                volume: qty,
                timestamp: order.timestamp,
                aggressor: order.side,
            });
            r.remaining -= qty;
            remaining -= qty;
            if r.remaining == 0 {
                self.resting.remove(i);
            }
        }
        if remaining > 0 && !marketable_only {
            self.arrivals += 1;
            self.resting.push(Resting { id: order.id, side: order.side, price: order.price, remaining, arrival: self.arrivals });
        }
    }

    pub fn cancel(&mut self, id: OrderId, volume: Option<u64>) -> u64 {
        let Some(i) = self.resting.iter().position(|r| r.id == id) else { return 0 };
        let qty = volume.map_or(self.resting[i].remaining, |v| v.min(self.resting[i].remaining));
        self.resting[i].remaining -= qty;
        if self.resting[i].remaining == 0 {
            self.resting.remove(i);
        }
        qty
    }

    pub fn live_ids(&self) -> Vec<OrderId> {
        self.resting.iter().map(|r| r.id).collect()
    }

    /// Aggregated best `depth` levels per side, best first.
    pub fn levels(&self, side: Side, depth: usize) -> Vec<(Price, u64)> {
        let mut prices: Vec<Price> = self.resting.iter().filter(|r| r.side == side).map(|r| r.price).collect();
        prices.sort();
        prices.dedup();
        if side == Side::Buy {
            prices.reverse();
        }
        prices
            .into_iter()
            .take(depth)
            .map(|p| (p, self.resting.iter().filter(|r| r.side == side && r.price == p).map(|r| r.remaining).sum()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Op {
    Submit(Order, bool),
    Cancel(OrderId, Option<u64>),
}

/// Random submits around a 100-tick mid with a mix of cancels against live
/// ids and unknown ids.
pub fn random_ops<R: Rng>(rng: &mut R, n: usize) -> Vec<Op> {
    let mut ops = Vec::with_capacity(n);
    let mut issued: Vec<OrderId> = Vec::new();
    for k in 0..n {
        let t = k as Nanos;
        if !issued.is_empty() && rng.random_bool(0.3) {
            let id = if rng.random_bool(0.9) { issued[rng.random_range(0..issued.len())] } else { 1_000_000 + k as u64 };
            let volume = if rng.random_bool(0.5) { None } else { Some(rng.random_range(1..=60)) };
            ops.push(Op::Cancel(id, volume));
        } else {
            let id = k as u64 + 1;
            let side = if rng.random_bool(0.5) { Side::Buy } else { Side::Sell };
            let volume = rng.random_range(1..=100);
            let order = if rng.random_bool(0.05) {
                Order::market(id, side, volume, t)
            } else {
                Order::limit(id, side, Price(100 * rng.random_range(90..=110)), volume, t)
            };
            ops.push(Op::Submit(order, rng.random_bool(0.1)));
            issued.push(id);
        }
    }
    ops
}
