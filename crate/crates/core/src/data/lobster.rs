//! Reader and writer for LOBSTER message and order book files.
//!
//! Message file columns: `time,type,order_id,size,price,direction`, where time
//! is seconds after midnight with up to nanosecond decimals and prices are in
//! units of 10^-4 currency. The order book file carries one row per message
//! with `ask price, ask size, bid price, bid size` repeated per level.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::lob::{LobSnapshot, MidPrice, Nanos, OrderId, Price, Side};

/// Price LOBSTER writes for a missing ask level.
pub const EMPTY_ASK_PRICE: i64 = 9_999_999_999;
/// Price LOBSTER writes for a missing bid level.
pub const EMPTY_BID_PRICE: i64 = -9_999_999_999;

#[derive(Debug, Error)]
pub enum LobsterError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("row count mismatch: {messages} message rows vs {books} order book rows")]
    RowCountMismatch { messages: usize, books: usize },
    #[error("no valid rows in {0}")]
    Empty(PathBuf),
}

/// Seconds-after-midnight timestamp that remembers how many decimals it was
/// written with, so files round-trip exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LobsterTime {
    pub nanos: Nanos,
    pub decimals: u8,
}

impl LobsterTime {
    pub fn from_nanos(nanos: Nanos) -> Self {
        LobsterTime { nanos, decimals: 9 }
    }

    pub fn seconds(self) -> f64 {
        self.nanos as f64 / 1e9
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (int, frac) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int.is_empty() || frac.len() > 9 || !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let secs: i64 = int.parse().ok()?;
        let mut frac_nanos: i64 = 0;
        if !frac.is_empty() {
            frac_nanos = frac.parse::<i64>().ok()? * 10i64.pow(9 - frac.len() as u32);
        }
        let decimals = if s.contains('.') { frac.len() as u8 } else { u8::MAX };
        Some(LobsterTime { nanos: secs.checked_mul(1_000_000_000)? + frac_nanos, decimals })
    }
}

impl fmt::Display for LobsterTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let secs = self.nanos.div_euclid(1_000_000_000);
        let frac = self.nanos.rem_euclid(1_000_000_000);
        match self.decimals {
            u8::MAX => write!(f, "{secs}"),
            d => {
                let scaled = frac / 10i64.pow(9 - d as u32);
                write!(f, "{secs}.{scaled:0width$}", width = d as usize)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    NewLimit = 1,
    PartialCancel = 2,
    Delete = 3,
    ExecuteVisible = 4,
    ExecuteHidden = 5,
    Cross = 6,
    Halt = 7,
}

impl MessageType {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => MessageType::NewLimit,
            2 => MessageType::PartialCancel,
            3 => MessageType::Delete,
            4 => MessageType::ExecuteVisible,
            5 => MessageType::ExecuteHidden,
            6 => MessageType::Cross,
            7 => MessageType::Halt,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LobsterMessage {
    pub time: LobsterTime,
    pub kind: MessageType,
    pub order_id: OrderId,
    pub size: u64,
    pub price: i64,
    /// +1 buy, -1 sell. For executions this is the side of the resting order.
    pub direction: i8,
}

impl LobsterMessage {
    pub fn side(&self) -> Side {
        if self.direction > 0 {
            Side::Buy
        } else {
            Side::Sell
        }
    }

    fn parse(line: &str) -> Result<Self, String> {
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != 6 {
            return Err(format!("expected 6 fields, found {}", cols.len()));
        }
        let time = LobsterTime::parse(cols[0]).ok_or_else(|| format!("bad time {:?}", cols[0]))?;
        let code: u8 = cols[1].parse().map_err(|_| format!("bad type {:?}", cols[1]))?;
        let kind = MessageType::from_code(code).ok_or_else(|| format!("unknown message type {code}"))?;
        let order_id = cols[2].parse().map_err(|_| format!("bad order id {:?}", cols[2]))?;
        let size = cols[3].parse().map_err(|_| format!("bad size {:?}", cols[3]))?;
        let price = cols[4].parse().map_err(|_| format!("bad price {:?}", cols[4]))?;
        let direction: i8 = cols[5].parse().map_err(|_| format!("bad direction {:?}", cols[5]))?;
        if direction != 1 && direction != -1 {
            return Err(format!("direction must be 1 or -1, found {direction}"));
        }
        Ok(LobsterMessage { time, kind, order_id, size, price, direction })
    }
}

impl fmt::Display for LobsterMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.time,
            self.kind.code(),
            self.order_id,
            self.size,
            self.price,
            self.direction
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BookLevelRow {
    pub ask_price: i64,
    pub ask_size: u64,
    pub bid_price: i64,
    pub bid_size: u64,
}

impl BookLevelRow {
    pub const EMPTY: BookLevelRow =
        BookLevelRow { ask_price: EMPTY_ASK_PRICE, ask_size: 0, bid_price: EMPTY_BID_PRICE, bid_size: 0 };

    fn ask(&self) -> Option<(Price, u64)> {
        (self.ask_price != EMPTY_ASK_PRICE && self.ask_size > 0).then_some((Price(self.ask_price), self.ask_size))
    }

    fn bid(&self) -> Option<(Price, u64)> {
        (self.bid_price != EMPTY_BID_PRICE && self.bid_size > 0).then_some((Price(self.bid_price), self.bid_size))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LobsterBookRow {
    pub levels: Vec<BookLevelRow>,
}

impl LobsterBookRow {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn best_ask(&self) -> Option<(Price, u64)> {
        self.levels.first().and_then(BookLevelRow::ask)
    }

    pub fn best_bid(&self) -> Option<(Price, u64)> {
        self.levels.first().and_then(BookLevelRow::bid)
    }

    pub fn mid_price(&self) -> Option<MidPrice> {
        match (self.best_bid(), self.best_ask()) {
            (Some((b, _)), Some((a, _))) => Some(MidPrice::from_quotes(b, a)),
            _ => None,
        }
    }

    pub fn to_snapshot(&self, timestamp: Nanos) -> LobSnapshot {
        LobSnapshot {
            timestamp,
            depth: self.depth(),
            bids: self.levels.iter().map_while(BookLevelRow::bid).collect(),
            asks: self.levels.iter().map_while(BookLevelRow::ask).collect(),
        }
    }

    /// Encode a snapshot at a fixed depth, padding with LOBSTER's sentinels.
    pub fn from_snapshot(snapshot: &LobSnapshot, depth: usize) -> Self {
        let levels = (0..depth)
            .map(|i| {
                let mut row = BookLevelRow::EMPTY;
                if let Some(&(p, v)) = snapshot.asks.get(i) {
                    row.ask_price = p.0;
                    row.ask_size = v;
                }
                if let Some(&(p, v)) = snapshot.bids.get(i) {
                    row.bid_price = p.0;
                    row.bid_size = v;
                }
                row
            })
            .collect();
        LobsterBookRow { levels }
    }

    fn parse(line: &str) -> Result<Self, String> {
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.is_empty() || !cols.len().is_multiple_of(4) {
            return Err(format!("expected a multiple of 4 fields, found {}", cols.len()));
        }
        let num = |s: &str| s.parse::<i64>().map_err(|_| format!("bad number {s:?}"));
        let mut levels = Vec::with_capacity(cols.len() / 4);
        for c in cols.chunks(4) {
            let ask_size = num(c[1])?;
            let bid_size = num(c[3])?;
            if ask_size < 0 || bid_size < 0 {
                return Err("negative size".into());
            }
            levels.push(BookLevelRow {
                ask_price: num(c[0])?,
                ask_size: ask_size as u64,
                bid_price: num(c[2])?,
                bid_size: bid_size as u64,
            });
        }
        let row = LobsterBookRow { levels };
        let asks: Vec<_> = row.levels.iter().filter_map(BookLevelRow::ask).collect();
        let bids: Vec<_> = row.levels.iter().filter_map(BookLevelRow::bid).collect();
        if asks.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err("ask prices not strictly ascending".into());
        }
        if bids.windows(2).any(|w| w[0].0 <= w[1].0) {
            return Err("bid prices not strictly descending".into());
        }
        Ok(row)
    }
}

impl fmt::Display for LobsterBookRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.levels.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{},{},{},{}", l.ask_price, l.ask_size, l.bid_price, l.bid_size)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseIssue {
    pub file: PathBuf,
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file.display(), self.line, self.reason)
    }
}

/// Paired, time-ordered message and book rows plus any rows that were skipped.
#[derive(Debug, Clone, Default)]
pub struct LobsterSession {
    pub rows: Vec<(LobsterMessage, LobsterBookRow)>,
    pub issues: Vec<ParseIssue>,
}

impl LobsterSession {
    pub fn messages(&self) -> impl Iterator<Item = &LobsterMessage> {
        self.rows.iter().map(|(m, _)| m)
    }

    pub fn depth(&self) -> usize {
        self.rows.first().map_or(0, |(_, b)| b.depth())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, LobsterError> {
    let io_err = |source| LobsterError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io_err)?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err)?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    Ok(lines)
}

/// Parse a message file and its order book file. Malformed rows are skipped
/// together with their partner row and reported in `issues`.
pub fn parse_lobster(message_path: &Path, book_path: &Path) -> Result<LobsterSession, LobsterError> {
    let messages = read_lines(message_path)?;
    let books = read_lines(book_path)?;
    if messages.len() != books.len() {
        return Err(LobsterError::RowCountMismatch { messages: messages.len(), books: books.len() });
    }
    let mut session = LobsterSession::default();
    let mut depth: Option<usize> = None;
    let mut last_time: Nanos = Nanos::MIN;
    for (i, (m, b)) in messages.iter().zip(&books).enumerate() {
        let issue = |file: &Path, reason: String| ParseIssue { file: file.to_path_buf(), line: i + 1, reason };
        let msg = match LobsterMessage::parse(m) {
            Ok(msg) if msg.time.nanos < last_time => {
                session.issues.push(issue(message_path, "time decreases".into()));
                continue;
            }
            Ok(msg) => msg,
            Err(reason) => {
                session.issues.push(issue(message_path, reason));
                continue;
            }
        };
        let book = match LobsterBookRow::parse(b) {
            Ok(row) if depth.is_some_and(|d| d != row.depth()) => {
                session.issues.push(issue(book_path, format!("depth {} differs from {}", row.depth(), depth.unwrap())));
                continue;
            }
            Ok(row) => row,
            Err(reason) => {
                session.issues.push(issue(book_path, reason));
                continue;
            }
        };
        depth = Some(book.depth());
        last_time = msg.time.nanos;
        session.rows.push((msg, book));
    }
    if session.rows.is_empty() {
        return Err(LobsterError::Empty(message_path.to_path_buf()));
    }
    Ok(session)
}

pub fn write_messages<'a, W: Write>(messages: impl IntoIterator<Item = &'a LobsterMessage>, mut out: W) -> io::Result<()> {
    for m in messages {
        writeln!(out, "{m}")?;
    }
    Ok(())
}

pub fn write_book_rows<'a, W: Write>(rows: impl IntoIterator<Item = &'a LobsterBookRow>, mut out: W) -> io::Result<()> {
    for r in rows {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

/// Write both files of a session.
pub fn write_lobster(session: &LobsterSession, message_path: &Path, book_path: &Path) -> io::Result<()> {
    let mut m = io::BufWriter::new(File::create(message_path)?);
    write_messages(session.rows.iter().map(|(m, _)| m), &mut m)?;
    m.flush()?;
    let mut b = io::BufWriter::new(File::create(book_path)?);
    write_book_rows(session.rows.iter().map(|(_, b)| b), &mut b)?;
    b.flush()
}
