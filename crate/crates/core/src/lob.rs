//! Limit order book with price-then-FIFO matching.
//!
//! Prices are integer ticks. A crossing order executes against the opposite
//! side best price first and, within a price, in arrival order. Trades print
//! at the resting order's price. Whatever is left rests at the back of its
//! level, unless the order was flagged marketable-only, in which case the
//! residual is discarded.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nanoseconds. Used both for absolute time of day and for durations.
pub type Nanos = i64;
pub type OrderId = u64;

pub const DEFAULT_DEPTH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Price(pub i64);

impl Price {
    /// Limit used for buy orders that should sweep any ask.
    pub const MARKET_BUY: Price = Price(i64::MAX);
    /// Limit used for sell orders that should sweep any bid.
    pub const MARKET_SELL: Price = Price(1);

    pub fn ticks(self) -> i64 {
        self.0
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    /// +1 for buy (bid), -1 for sell (ask).
    pub fn direction(self) -> i64 {
        match self {
            Side::Buy => 1,
            Side::Sell => -1,
        }
    }

    pub fn from_direction(direction: i64) -> Option<Side> {
        match direction {
            1 => Some(Side::Buy),
            -1 => Some(Side::Sell),
            _ => None,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub side: Side,
    pub price: Price,
    pub volume: u64,
    pub timestamp: Nanos,
}

impl Order {
    pub fn limit(id: OrderId, side: Side, price: Price, volume: u64, timestamp: Nanos) -> Self {
        Order { id, side, price, volume, timestamp }
    }

    /// An order priced to cross any opposite level. Submit it with
    /// `marketable_only` so the residual is dropped instead of resting.
    pub fn market(id: OrderId, side: Side, volume: u64, timestamp: Nanos) -> Self {
        let price = match side {
            Side::Buy => Price::MARKET_BUY,
            Side::Sell => Price::MARKET_SELL,
        };
        Order { id, side, price, volume, timestamp }
    }

    fn crosses(&self, opposite: Price) -> bool {
        match self.side {
            Side::Buy => self.price >= opposite,
            Side::Sell => self.price <= opposite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub buy_order_id: OrderId,
    pub sell_order_id: OrderId,
    pub price: Price,
    pub volume: u64,
    pub timestamp: Nanos,
    /// Side of the incoming order that triggered the match.
    pub aggressor: Side,
}

impl Trade {
    pub fn resting_order_id(&self) -> OrderId {
        match self.aggressor {
            Side::Buy => self.sell_order_id,
            Side::Sell => self.buy_order_id,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BookError {
    #[error("order id {0} is already resting in the book")]
    DuplicateId(OrderId),
    #[error("order {0} has zero volume")]
    ZeroVolume(OrderId),
    #[error("order {id} has non-positive price {price}")]
    NonPositivePrice { id: OrderId, price: Price },
    #[error("mid-price is undefined: one side of the book is empty")]
    UndefinedMid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RestingEntry {
    id: OrderId,
    remaining: u64,
    sequence: u64,
}

/// FIFO queue of resting orders at a single price.
#[derive(Debug, Clone)]
pub struct PriceLevel {
    price: Price,
    queue: VecDeque<RestingEntry>,
    total: u64,
}

impl PriceLevel {
    fn new(price: Price) -> Self {
        PriceLevel { price, queue: VecDeque::new(), total: 0 }
    }

    pub fn price(&self) -> Price {
        self.price
    }

    pub fn total_volume(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Resting (order id, remaining volume) pairs in priority order.
    pub fn orders(&self) -> impl Iterator<Item = (OrderId, u64)> + '_ {
        self.queue.iter().map(|e| (e.id, e.remaining))
    }
}

/// Result of [`OrderBook::submit`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubmitOutcome {
    pub trades: Vec<Trade>,
    /// Residual now resting in the book, if any.
    pub resting: Option<Order>,
    /// Residual volume dropped because the order was marketable-only.
    pub discarded: u64,
}

impl SubmitOutcome {
    pub fn filled(&self) -> u64 {
        self.trades.iter().map(|t| t.volume).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancelOutcome {
    Cancelled(u64),
    NotFound,
}

impl CancelOutcome {
    pub fn volume(self) -> u64 {
        match self {
            CancelOutcome::Cancelled(v) => v,
            CancelOutcome::NotFound => 0,
        }
    }
}

/// Aggregated view of the best `depth` levels per side, best first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LobSnapshot {
    pub timestamp: Nanos,
    pub depth: usize,
    pub bids: Vec<(Price, u64)>,
    pub asks: Vec<(Price, u64)>,
}

impl LobSnapshot {
    pub fn best_bid(&self) -> Option<(Price, u64)> {
        self.bids.first().copied()
    }

    pub fn best_ask(&self) -> Option<(Price, u64)> {
        self.asks.first().copied()
    }

    pub fn mid_price(&self) -> Result<MidPrice, BookError> {
        mid_price(self)
    }
}

/// Exact midpoint stored as twice the tick value so half ticks are
/// representable without rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MidPrice {
    pub twice_ticks: i64,
}

impl MidPrice {
    pub fn from_quotes(bid: Price, ask: Price) -> Self {
        MidPrice { twice_ticks: bid.0 + ask.0 }
    }

    pub fn ticks(self) -> f64 {
        self.twice_ticks as f64 / 2.0
    }

    pub fn is_half_tick(self) -> bool {
        self.twice_ticks % 2 != 0
    }
}

impl fmt::Display for MidPrice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_half_tick() {
            write!(f, "{}.5", self.twice_ticks.div_euclid(2))
        } else {
            write!(f, "{}", self.twice_ticks / 2)
        }
    }
}

/// (best bid + best ask) / 2, or [`BookError::UndefinedMid`] when a side is empty.
pub fn mid_price(snapshot: &LobSnapshot) -> Result<MidPrice, BookError> {
    match (snapshot.best_bid(), snapshot.best_ask()) {
        (Some((bid, _)), Some((ask, _))) => Ok(MidPrice::from_quotes(bid, ask)),
        _ => Err(BookError::UndefinedMid),
    }
}

#[derive(Debug, Clone, Default)]
pub struct OrderBook {
    bids: BTreeMap<Price, PriceLevel>,
    asks: BTreeMap<Price, PriceLevel>,
    index: HashMap<OrderId, (Side, Price)>,
    next_sequence: u64,
    trade_log: Vec<Trade>,
}

impl OrderBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best_bid(&self) -> Option<(Price, u64)> {
        self.bids.last_key_value().map(|(p, l)| (*p, l.total))
    }

    pub fn best_ask(&self) -> Option<(Price, u64)> {
        self.asks.first_key_value().map(|(p, l)| (*p, l.total))
    }

    pub fn mid(&self) -> Option<MidPrice> {
        match (self.best_bid(), self.best_ask()) {
            (Some((b, _)), Some((a, _))) => Some(MidPrice::from_quotes(b, a)),
            _ => None,
        }
    }

    pub fn contains(&self, id: OrderId) -> bool {
        self.index.contains_key(&id)
    }

    /// Side, price and remaining volume of a resting order.
    pub fn resting(&self, id: OrderId) -> Option<(Side, Price, u64)> {
        let &(side, price) = self.index.get(&id)?;
        let level = self.levels(side).get(&price)?;
        level
            .queue
            .iter()
            .find(|e| e.id == id)
            .map(|e| (side, price, e.remaining))
    }

    pub fn resting_count(&self) -> usize {
        self.index.len()
    }

    pub fn trade_log(&self) -> &[Trade] {
        &self.trade_log
    }

    /// Bid levels best (highest) first.
    pub fn bid_levels(&self) -> impl Iterator<Item = &PriceLevel> {
        self.bids.values().rev()
    }

    /// Ask levels best (lowest) first.
    pub fn ask_levels(&self) -> impl Iterator<Item = &PriceLevel> {
        self.asks.values()
    }

    fn levels(&self, side: Side) -> &BTreeMap<Price, PriceLevel> {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn levels_mut(&mut self, side: Side) -> &mut BTreeMap<Price, PriceLevel> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    pub fn submit(&mut self, order: Order, marketable_only: bool) -> Result<SubmitOutcome, BookError> {
        if order.volume == 0 {
            return Err(BookError::ZeroVolume(order.id));
        }
        if order.price.0 <= 0 {
            return Err(BookError::NonPositivePrice { id: order.id, price: order.price });
        }
        if self.index.contains_key(&order.id) {
            return Err(BookError::DuplicateId(order.id));
        }

        let mut remaining = order.volume;
        let mut trades = Vec::new();
        let opposite_side = order.side.opposite();

        while remaining > 0 {
            let best = match order.side {
                Side::Buy => self.asks.first_key_value().map(|(p, _)| *p),
                Side::Sell => self.bids.last_key_value().map(|(p, _)| *p),
            };
            let Some(level_price) = best else { break };
            if !order.crosses(level_price) {
                break;
            }

            let levels = self.levels_mut(opposite_side);
            let level = levels.get_mut(&level_price).expect("best level exists");
            let mut filled_ids = Vec::new();
            while remaining > 0 {
                let Some(front) = level.queue.front_mut() else { break };
                let qty = remaining.min(front.remaining);
                front.remaining -= qty;
                level.total -= qty;
                remaining -= qty;
                let (buy_order_id, sell_order_id) = match order.side {
                    Side::Buy => (order.id, front.id),
                    Side::Sell => (front.id, order.id),
                };
                trades.push(Trade {
                    buy_order_id,
                    sell_order_id,
                    price: level_price,
                    volume: qty,
                    timestamp: order.timestamp,
                    aggressor: order.side,
                });
                if front.remaining == 0 {
                    filled_ids.push(front.id);
                    level.queue.pop_front();
                }
            }
            if level.queue.is_empty() {
                levels.remove(&level_price);
            }
            for id in filled_ids {
                self.index.remove(&id);
            }
        }

        self.trade_log.extend_from_slice(&trades);

        let mut outcome = SubmitOutcome { trades, resting: None, discarded: 0 };
        if remaining > 0 {
            if marketable_only {
                outcome.discarded = remaining;
            } else {
                let sequence = self.next_sequence;
                self.next_sequence += 1;
                let level = self
                    .levels_mut(order.side)
                    .entry(order.price)
                    .or_insert_with(|| PriceLevel::new(order.price));
                level.queue.push_back(RestingEntry { id: order.id, remaining, sequence });
                level.total += remaining;
                self.index.insert(order.id, (order.side, order.price));
                outcome.resting = Some(Order { volume: remaining, ..order });
            }
        }
        Ok(outcome)
    }

    /// Remove `volume` shares (or everything when `None`) from a resting order.
    pub fn cancel(&mut self, id: OrderId, volume: Option<u64>) -> CancelOutcome {
        let Some(&(side, price)) = self.index.get(&id) else {
            return CancelOutcome::NotFound;
        };
        let levels = self.levels_mut(side);
        let level = levels.get_mut(&price).expect("indexed level exists");
        let pos = level
            .queue
            .iter()
            .position(|e| e.id == id)
            .expect("indexed order is queued");
        let entry = &mut level.queue[pos];
        let qty = volume.map_or(entry.remaining, |v| v.min(entry.remaining));
        entry.remaining -= qty;
        level.total -= qty;
        if entry.remaining == 0 {
            level.queue.remove(pos);
            if level.queue.is_empty() {
                levels.remove(&price);
            }
            self.index.remove(&id);
        }
        CancelOutcome::Cancelled(qty)
    }

    pub fn snapshot(&self, depth: usize, timestamp: Nanos) -> LobSnapshot {
        LobSnapshot {
            timestamp,
            depth,
            bids: self.bid_levels().take(depth).map(|l| (l.price, l.total)).collect(),
            asks: self.ask_levels().take(depth).map(|l| (l.price, l.total)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(id: OrderId, price: i64, vol: u64) -> Order {
        Order::limit(id, Side::Sell, Price(price), vol, 0)
    }

    fn bid(id: OrderId, price: i64, vol: u64) -> Order {
        Order::limit(id, Side::Buy, Price(price), vol, 0)
    }

    #[test]
    fn partial_fill_against_single_ask() {
        let mut book = OrderBook::new();
        book.submit(ask(7, 1_000_000, 100), false).unwrap();
        let out = book.submit(bid(8, 1_000_100, 50), false).unwrap();
        assert_eq!(out.trades.len(), 1);
        assert_eq!(out.trades[0].volume, 50);
        assert_eq!(out.trades[0].price, Price(1_000_000));
        assert_eq!(out.trades[0].sell_order_id, 7);
        assert!(out.resting.is_none());
        assert_eq!(book.best_ask(), Some((Price(1_000_000), 50)));
        assert_eq!(book.best_bid(), None);
    }

    #[test]
    fn non_crossing_order_rests() {
        let mut book = OrderBook::new();
        let out = book.submit(bid(1, 999_900, 10), false).unwrap();
        assert!(out.trades.is_empty());
        assert_eq!(out.resting.unwrap().volume, 10);
        assert_eq!(book.best_bid(), Some((Price(999_900), 10)));
    }

    #[test]
    fn fifo_within_level() {
        let mut book = OrderBook::new();
        book.submit(ask(1, 1_000_000, 30), false).unwrap();
        book.submit(ask(2, 1_000_000, 30), false).unwrap();
        let out = book.submit(bid(3, 1_000_000, 40), false).unwrap();
        let fills: Vec<_> = out.trades.iter().map(|t| (t.sell_order_id, t.volume)).collect();
        assert_eq!(fills, vec![(1, 30), (2, 10)]);
        assert_eq!(book.resting(2), Some((Side::Sell, Price(1_000_000), 20)));
        assert!(!book.contains(1));
    }

    #[test]
    fn sweeps_levels_best_first_and_rests_residual() {
        let mut book = OrderBook::new();
        book.submit(ask(1, 101, 5), false).unwrap();
        book.submit(ask(2, 100, 5), false).unwrap();
        book.submit(ask(3, 103, 5), false).unwrap();
        let out = book.submit(bid(4, 102, 12), false).unwrap();
        let prices: Vec<_> = out.trades.iter().map(|t| t.price.0).collect();
        assert_eq!(prices, vec![100, 101]);
        assert_eq!(out.resting.unwrap().volume, 2);
        assert_eq!(book.best_bid(), Some((Price(102), 2)));
        assert_eq!(book.best_ask(), Some((Price(103), 5)));
    }

    #[test]
    fn marketable_only_discards_residual() {
        let mut book = OrderBook::new();
        book.submit(ask(1, 100, 5), false).unwrap();
        let out = book.submit(Order::market(2, Side::Buy, 8, 0), true).unwrap();
        assert_eq!(out.filled(), 5);
        assert_eq!(out.discarded, 3);
        assert!(out.resting.is_none());
        assert_eq!(book.resting_count(), 0);
    }

    #[test]
    fn rejects_bad_orders() {
        let mut book = OrderBook::new();
        book.submit(bid(1, 100, 1), false).unwrap();
        assert_eq!(book.submit(bid(1, 99, 1), false), Err(BookError::DuplicateId(1)));
        assert_eq!(book.submit(bid(2, 99, 0), false), Err(BookError::ZeroVolume(2)));
        assert!(matches!(
            book.submit(bid(3, 0, 1), false),
            Err(BookError::NonPositivePrice { .. })
        ));
    }

    #[test]
    fn self_trade_is_allowed() {
        let mut book = OrderBook::new();
        book.submit(ask(1, 100, 5), false).unwrap();
        let out = book.submit(bid(2, 100, 5), false).unwrap();
        assert_eq!(out.filled(), 5);
    }

    #[test]
    fn cancel_partial_full_and_unknown() {
        let mut book = OrderBook::new();
        book.submit(bid(1, 100, 25), false).unwrap();
        assert_eq!(book.cancel(1, Some(10)), CancelOutcome::Cancelled(10));
        assert_eq!(book.resting(1), Some((Side::Buy, Price(100), 15)));
        assert_eq!(book.cancel(1, None), CancelOutcome::Cancelled(15));
        assert_eq!(book.best_bid(), None);
        assert_eq!(book.cancel(1, None), CancelOutcome::NotFound);
        assert_eq!(book.cancel(99, Some(3)).volume(), 0);
    }

    #[test]
    fn cancel_more_than_remaining_is_capped() {
        let mut book = OrderBook::new();
        book.submit(ask(1, 100, 4), false).unwrap();
        assert_eq!(book.cancel(1, Some(10)), CancelOutcome::Cancelled(4));
        assert!(!book.contains(1));
    }

    #[test]
    fn snapshot_truncates_to_depth() {
        let mut book = OrderBook::new();
        assert_eq!(book.snapshot(DEFAULT_DEPTH, 0).asks.len(), 0);
        for i in 0..25 {
            book.submit(ask(i, 1_000 + i as i64, 1 + i), false).unwrap();
        }
        book.submit(ask(100, 1_000, 2), false).unwrap();
        let snap = book.snapshot(DEFAULT_DEPTH, 5);
        assert_eq!(snap.asks.len(), 20);
        assert!(snap.bids.is_empty());
        assert_eq!(snap.asks[0], (Price(1_000), 3));
        assert!(snap.asks.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn mid_price_cases() {
        let mut book = OrderBook::new();
        book.submit(bid(1, 999_900, 1), false).unwrap();
        assert_eq!(mid_price(&book.snapshot(20, 0)), Err(BookError::UndefinedMid));
        book.submit(ask(2, 1_000_100, 1), false).unwrap();
        assert_eq!(mid_price(&book.snapshot(20, 0)).unwrap().ticks(), 1_000_000.0);

        let mut tight = OrderBook::new();
        tight.submit(bid(1, 100, 1), false).unwrap();
        tight.submit(ask(2, 101, 1), false).unwrap();
        let mid = tight.snapshot(20, 0).mid_price().unwrap();
        assert_eq!(mid.twice_ticks, 201);
        assert!(mid.is_half_tick());
        assert_eq!(mid.to_string(), "100.5");
    }
}
