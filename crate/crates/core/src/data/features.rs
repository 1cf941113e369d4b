//! Order reconstruction from LOBSTER messages and conditioning windows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lobster::{LobsterMessage, LobsterSession, MessageType};
use super::scaler::{FeatureScalers, NUM_FEATURES};
use crate::lob::{LobSnapshot, Nanos, Price, Side};

/// History length of the conditioning window.
pub const HISTORY_LEN: usize = 50;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("insufficient warm-up: {have} annotated orders, {need} required")]
    InsufficientWarmup { have: usize, need: usize },
}

/// Book state attached to an order: best quotes, mid and time of day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BookFeatures {
    pub best_bid_price: f64,
    pub best_bid_volume: f64,
    pub best_ask_price: f64,
    pub best_ask_volume: f64,
    pub mid_price: f64,
    /// Seconds since session open.
    pub time_period: f64,
}

/// Remembers the last defined quotes so one-sided or empty books still
/// produce finite features.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuoteTracker {
    last_bid: Option<Price>,
    last_ask: Option<Price>,
    last_mid: Option<f64>,
}

impl QuoteTracker {
    pub fn observe(
        &mut self,
        best_bid: Option<(Price, u64)>,
        best_ask: Option<(Price, u64)>,
        time: Nanos,
        session_open: Nanos,
    ) -> BookFeatures {
        if let Some((p, _)) = best_bid {
            self.last_bid = Some(p);
        }
        if let Some((p, _)) = best_ask {
            self.last_ask = Some(p);
        }
        if let (Some((b, _)), Some((a, _))) = (best_bid, best_ask) {
            self.last_mid = Some((b.0 + a.0) as f64 / 2.0);
        }
        let bid = self.last_bid.or(self.last_ask).map_or(0.0, |p| p.0 as f64);
        let ask = self.last_ask.or(self.last_bid).map_or(0.0, |p| p.0 as f64);
        let mid = self.last_mid.unwrap_or((bid + ask) / 2.0);
        BookFeatures {
            best_bid_price: bid,
            best_bid_volume: best_bid.map_or(0.0, |(_, v)| v as f64),
            best_ask_price: ask,
            best_ask_volume: best_ask.map_or(0.0, |(_, v)| v as f64),
            mid_price: mid,
            time_period: (time - session_open) as f64 / 1e9,
        }
    }

    pub fn observe_snapshot(&mut self, snapshot: &LobSnapshot, session_open: Nanos) -> BookFeatures {
        self.observe(snapshot.best_bid(), snapshot.best_ask(), snapshot.timestamp, session_open)
    }

    pub fn last_mid(&self) -> Option<f64> {
        self.last_mid
    }
}

/// An order with the market context observed just before the next order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedOrder {
    pub time: Nanos,
    pub price: Price,
    pub volume: u64,
    pub side: Side,
    /// Offset from the previous order, at least 1 ns.
    pub interarrival: Nanos,
    pub book: BookFeatures,
}

impl AnnotatedOrder {
    pub fn raw_features(&self) -> [f64; NUM_FEATURES] {
        [
            self.price.0 as f64,
            self.volume as f64,
            self.side.direction() as f64,
            self.interarrival as f64,
            self.book.best_bid_price,
            self.book.best_bid_volume,
            self.book.best_ask_price,
            self.book.best_ask_volume,
            self.book.mid_price,
            self.book.time_period,
        ]
    }
}

/// An order recovered from the message stream, with the row range it spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconstructedOrder {
    pub time: Nanos,
    pub side: Side,
    pub price: Price,
    pub volume: u64,
    pub first_row: usize,
    pub last_row: usize,
}

/// Recover submitted orders from LOBSTER messages.
///
/// New limit orders (type 1) map directly. LOBSTER does not print the
/// aggressor of a trade, only the executions (type 4) of the resting orders
/// it hit, so consecutive executions at the same timestamp against the same
/// side are folded into one marketable order priced at the worst fill. A type
/// 1 message on the aggressor's side at the same timestamp right after such a
/// run, priced through it, is the residual of that order and is merged in.
pub fn reconstruct_orders(messages: &[LobsterMessage]) -> Vec<ReconstructedOrder> {
    let mut out = Vec::new();
    let mut pending: Option<ReconstructedOrder> = None;
    for (row, m) in messages.iter().enumerate() {
        match m.kind {
            MessageType::ExecuteVisible => {
                let aggressor = m.side().opposite();
                match pending.as_mut() {
                    Some(p) if p.time == m.time.nanos && p.side == aggressor => {
                        p.volume += m.size;
                        p.price = match aggressor {
                            Side::Buy => p.price.max(Price(m.price)),
                            Side::Sell => p.price.min(Price(m.price)),
                        };
                        p.last_row = row;
                    }
                    _ => {
                        out.extend(pending.take());
                        pending = Some(ReconstructedOrder {
                            time: m.time.nanos,
                            side: aggressor,
                            price: Price(m.price),
                            volume: m.size,
                            first_row: row,
                            last_row: row,
                        });
                    }
                }
            }
            MessageType::NewLimit => {
                let side = m.side();
                let residual_of_pending = pending.as_ref().is_some_and(|p| {
                    p.time == m.time.nanos
                        && p.side == side
                        && match side {
                            Side::Buy => m.price >= p.price.0,
                            Side::Sell => m.price <= p.price.0,
                        }
                });
                if residual_of_pending {
                    let mut p = pending.take().expect("checked");
                    p.price = Price(m.price);
                    p.volume += m.size;
                    p.last_row = row;
                    out.push(p);
                } else {
                    out.extend(pending.take());
                    out.push(ReconstructedOrder {
                        time: m.time.nanos,
                        side,
                        price: Price(m.price),
                        volume: m.size,
                        first_row: row,
                        last_row: row,
                    });
                }
            }
            _ => out.extend(pending.take()),
        }
    }
    out.extend(pending);
    out
}

/// Reconstruct orders and attach the book state observed just before the
/// following order (after matching and any cancellations in between).
pub fn annotate_session(session: &LobsterSession, session_open: Nanos) -> Vec<AnnotatedOrder> {
    let messages: Vec<LobsterMessage> = session.rows.iter().map(|(m, _)| *m).collect();
    let orders = reconstruct_orders(&messages);
    let mut tracker = QuoteTracker::default();
    let mut out = Vec::with_capacity(orders.len());
    let mut row = 0usize;
    let mut features = None;
    let mut prev_time = session_open;
    for (j, o) in orders.iter().enumerate() {
        let observe_row = orders.get(j + 1).map_or(session.rows.len() - 1, |next| next.first_row - 1);
        while row <= observe_row {
            let (m, book) = &session.rows[row];
            features = Some(tracker.observe(book.best_bid(), book.best_ask(), m.time.nanos, session_open));
            row += 1;
        }
        out.push(AnnotatedOrder {
            time: o.time,
            price: o.price,
            volume: o.volume,
            side: o.side,
            interarrival: (o.time - prev_time).max(1),
            book: features.expect("at least one row observed"),
        });
        prev_time = o.time;
    }
    out
}

/// Normalized conditioning vector: `HISTORY_LEN` groups of 10 features,
/// most recent order first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    values: Vec<f64>,
    history: usize,
}

impl FeatureWindow {
    pub fn from_values(values: Vec<f64>) -> Option<Self> {
        (values.len().is_multiple_of(NUM_FEATURES) && !values.is_empty()).then_some(FeatureWindow {
            history: values.len() / NUM_FEATURES,
            values,
        })
    }

    /// Build from normalized rows in chronological order (oldest first).
    pub fn from_chronological(rows: &[[f64; NUM_FEATURES]]) -> Self {
        let values = rows.iter().rev().flat_map(|r| r.iter().copied()).collect();
        FeatureWindow { values, history: rows.len() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn history(&self) -> usize {
        self.history
    }

    /// Features of order `t - i`, `i` in `1..=history`.
    pub fn lag(&self, i: usize) -> &[f64] {
        &self.values[(i - 1) * NUM_FEATURES..i * NUM_FEATURES]
    }

    /// Step `t` of the chronological sequence (0 = oldest).
    pub fn step(&self, t: usize) -> &[f64] {
        self.lag(self.history - t)
    }
}

/// Assemble the window from the last `history` annotated orders.
pub fn build_feature_window(
    orders: &[AnnotatedOrder],
    scalers: &FeatureScalers,
    history: usize,
) -> Result<FeatureWindow, FeatureError> {
    if orders.len() < history {
        return Err(FeatureError::InsufficientWarmup { have: orders.len(), need: history });
    }
    let rows: Vec<[f64; NUM_FEATURES]> = orders[orders.len() - history..]
        .iter()
        .map(|o| scalers.normalize(&o.raw_features()))
        .collect();
    Ok(FeatureWindow::from_chronological(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::lobster::{LobsterBookRow, LobsterTime};

    fn msg(t: i64, kind: MessageType, id: u64, size: u64, price: i64, dir: i8) -> LobsterMessage {
        LobsterMessage { time: LobsterTime::from_nanos(t), kind, order_id: id, size, price, direction: dir }
    }

    #[test]
    fn executions_fold_into_aggressor_with_residual() {
        use MessageType::*;
        let msgs = vec![
            msg(10, NewLimit, 1, 5, 101, -1),
            msg(11, NewLimit, 2, 5, 102, -1),
            msg(20, ExecuteVisible, 1, 5, 101, -1),
            msg(20, ExecuteVisible, 2, 3, 102, -1),
            msg(30, ExecuteVisible, 2, 2, 102, -1),
            msg(30, NewLimit, 9, 4, 103, 1),
            msg(40, Delete, 9, 4, 103, 1),
            msg(41, NewLimit, 10, 1, 90, 1),
        ];
        let orders = reconstruct_orders(&msgs);
        let summary: Vec<_> = orders.iter().map(|o| (o.time, o.side, o.price.0, o.volume)).collect();
        assert_eq!(
            summary,
            vec![
                (10, Side::Sell, 101, 5),
                (11, Side::Sell, 102, 5),
                (20, Side::Buy, 102, 8),
                (30, Side::Buy, 103, 6),
                (41, Side::Buy, 90, 1),
            ]
        );
        assert_eq!((orders[3].first_row, orders[3].last_row), (4, 5));
    }

    #[test]
    fn unrelated_add_after_execution_is_separate() {
        use MessageType::*;
        let msgs = vec![
            msg(20, ExecuteVisible, 1, 5, 101, -1),
            // same time but a sell: not the residual of a buy
            msg(20, NewLimit, 2, 5, 105, -1),
        ];
        assert_eq!(reconstruct_orders(&msgs).len(), 2);
    }

    fn row(bid: i64, bv: u64, ask: i64, av: u64) -> LobsterBookRow {
        use super::super::lobster::{BookLevelRow, EMPTY_ASK_PRICE, EMPTY_BID_PRICE};
        LobsterBookRow {
            levels: vec![BookLevelRow {
                ask_price: if av == 0 { EMPTY_ASK_PRICE } else { ask },
                ask_size: av,
                bid_price: if bv == 0 { EMPTY_BID_PRICE } else { bid },
                bid_size: bv,
            }],
        }
    }

    #[test]
    fn annotation_uses_state_before_next_order() {
        use MessageType::*;
        let open = 0;
        let session = LobsterSession {
            rows: vec![
                (msg(1_000, NewLimit, 1, 10, 99, 1), row(99, 10, 0, 0)),
                (msg(2_000, NewLimit, 2, 20, 101, -1), row(99, 10, 101, 20)),
                (msg(2_500, Delete, 1, 10, 99, 1), row(0, 0, 101, 20)),
                (msg(3_000, NewLimit, 3, 5, 98, 1), row(98, 5, 101, 20)),
            ],
            issues: vec![],
        };
        let ann = annotate_session(&session, open);
        assert_eq!(ann.len(), 3);
        // first order sees a one-sided book: ask falls back to the bid price
        assert_eq!(ann[0].book.best_ask_price, 99.0);
        assert_eq!(ann[0].book.best_ask_volume, 0.0);
        assert_eq!(ann[0].interarrival, 1_000);
        // second order is annotated after the delete that preceded order 3
        assert_eq!(ann[1].book.best_bid_volume, 0.0);
        assert_eq!(ann[1].book.best_bid_price, 99.0);
        assert_eq!(ann[1].book.mid_price, 100.0);
        assert_eq!(ann[1].book.time_period, 2_500e-9);
        assert_eq!(ann[2].book.mid_price, 99.5);
        assert_eq!(ann[2].interarrival, 1_000);
    }

    fn synthetic_orders(n: usize) -> Vec<AnnotatedOrder> {
        (0..n)
            .map(|i| AnnotatedOrder {
                time: i as i64 * 1_000,
                price: Price(1_000 + (i % 7) as i64),
                volume: 1 + (i % 13) as u64,
                side: if i % 2 == 0 { Side::Buy } else { Side::Sell },
                interarrival: 1 + (i % 5) as i64 * 100,
                book: BookFeatures {
                    best_bid_price: 999.0 - (i % 3) as f64,
                    best_bid_volume: (i % 11) as f64,
                    best_ask_price: 1_001.0 + (i % 4) as f64,
                    best_ask_volume: (i % 9) as f64,
                    mid_price: 1_000.0 + (i % 2) as f64 * 0.5,
                    time_period: i as f64,
                },
            })
            .collect()
    }

    #[test]
    fn window_has_expected_shape_and_order() {
        let orders = synthetic_orders(60);
        let rows: Vec<_> = orders.iter().map(|o| o.raw_features()).collect();
        let sc = FeatureScalers::fit(&rows).unwrap();
        let w = build_feature_window(&orders[..50], &sc, HISTORY_LEN).unwrap();
        assert_eq!(w.len(), 500);
        assert!(w.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        // lag 1 is the latest order, step 0 the oldest
        assert_eq!(w.lag(1), &sc.normalize(&orders[49].raw_features())[..]);
        assert_eq!(w.step(0), &sc.normalize(&orders[0].raw_features())[..]);
        assert_eq!(
            build_feature_window(&orders[..49], &sc, HISTORY_LEN),
            Err(FeatureError::InsufficientWarmup { have: 49, need: 50 })
        );
        let again = build_feature_window(&orders[..50], &sc, HISTORY_LEN).unwrap();
        assert_eq!(w, again);
    }
}
