//! Deterministic discrete-event kernel.
//!
//! Events are delivered in `(fire_time, priority, sequence)` order. The
//! sequence number is assigned at scheduling time, so two events with equal
//! time and priority are delivered in the order they were scheduled. Every
//! agent owns an RNG stream keyed by `(master seed, agent id)`; registering
//! another agent never shifts the draws of the ones before it.

use std::any::Any;
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt::{self, Write as _};
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lob::{LobSnapshot, MidPrice, Nanos, Order, OrderId, Price};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub usize);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const NANOS_PER_SEC: Nanos = 1_000_000_000;

/// Seconds after midnight to nanoseconds.
pub fn secs(s: f64) -> Nanos {
    (s * NANOS_PER_SEC as f64).round() as Nanos
}

/// Wall-clock `hh:mm:ss` to nanoseconds after midnight.
pub const fn clock(h: i64, m: i64, s: i64) -> Nanos {
    ((h * 60 + m) * 60 + s) * NANOS_PER_SEC
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub start_time: Nanos,
    pub end_time: Nanos,
    pub seed: u64,
    /// Delay applied to every message between agents.
    #[serde(default)]
    pub latency: Nanos,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            start_time: clock(9, 30, 0),
            end_time: clock(16, 0, 0),
            seed: 0,
            latency: 0,
        }
    }
}

/// Book state returned in reply to [`Payload::QueryMarket`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarketData {
    pub snapshot: LobSnapshot,
    /// Cumulative shares traded on the exchange since the session started.
    pub traded_volume: u64,
    pub last_mid: Option<MidPrice>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Wakeup,
    Submit { order: Order, marketable_only: bool, ttl: Option<Nanos> },
    Cancel { order_id: OrderId, volume: Option<u64> },
    /// Time-to-live expiry the exchange schedules for itself.
    Expire { order_id: OrderId },
    QueryMarket { depth: usize },
    MarketData(Box<MarketData>),
    /// Sent to the submitter once its order has been processed.
    Executed { order_id: OrderId, filled: u64, discarded: u64, rested: u64, fills: Vec<Fill> },
    /// Sent to the owner of a resting order that traded.
    Filled { order_id: OrderId, price: Price, volume: u64 },
    CancelAck { order_id: OrderId, cancelled: u64, found: bool },
    Rejected { order_id: OrderId, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fill {
    pub resting_id: OrderId,
    pub price: Price,
    pub volume: u64,
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Wakeup => "wakeup",
            Payload::Submit { .. } => "submit",
            Payload::Cancel { .. } => "cancel",
            Payload::Expire { .. } => "expire",
            Payload::QueryMarket { .. } => "query",
            Payload::MarketData(_) => "market_data",
            Payload::Executed { .. } => "executed",
            Payload::Filled { .. } => "filled",
            Payload::CancelAck { .. } => "cancel_ack",
            Payload::Rejected { .. } => "rejected",
        }
    }

    /// Comma-separated payload fields used in the event log.
    pub fn fields(&self) -> String {
        let mut s = String::new();
        match self {
            Payload::Wakeup => {}
            Payload::Submit { order, marketable_only, ttl } => {
                let _ = write!(
                    s,
                    "{},{},{},{},{},{}",
                    order.id,
                    order.side.direction(),
                    order.price,
                    order.volume,
                    u8::from(*marketable_only),
                    ttl.map_or(String::new(), |t| t.to_string())
                );
            }
            Payload::Cancel { order_id, volume } => {
                let _ = write!(s, "{},{}", order_id, volume.map_or(String::new(), |v| v.to_string()));
            }
            Payload::Expire { order_id } => {
                let _ = write!(s, "{order_id}");
            }
            Payload::QueryMarket { depth } => {
                let _ = write!(s, "{depth}");
            }
            Payload::MarketData(md) => {
                let side = |lvl: Option<(Price, u64)>| lvl.map_or(",".to_string(), |(p, v)| format!("{p},{v}"));
                let _ = write!(
                    s,
                    "{},{},{}",
                    side(md.snapshot.best_bid()),
                    side(md.snapshot.best_ask()),
                    md.traded_volume
                );
            }
            Payload::Executed { order_id, filled, discarded, rested, .. } => {
                let _ = write!(s, "{order_id},{filled},{discarded},{rested}");
            }
            Payload::Filled { order_id, price, volume } => {
                let _ = write!(s, "{order_id},{price},{volume}");
            }
            Payload::CancelAck { order_id, cancelled, found } => {
                let _ = write!(s, "{order_id},{cancelled},{}", u8::from(*found));
            }
            Payload::Rejected { order_id, reason } => {
                let _ = write!(s, "{order_id},{}", reason.replace(',', ";"));
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Event {
    pub fire_time: Nanos,
    pub priority: u8,
    pub sequence: u64,
    pub recipient: AgentId,
    pub sender: AgentId,
    pub payload: Payload,
}

impl Event {
    fn key(&self) -> (Nanos, u8, u64) {
        (self.fire_time, self.priority, self.sequence)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct AgentError(pub String);

impl AgentError {
    pub fn new(msg: impl Into<String>) -> Self {
        AgentError(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("agents cannot be registered once the run has started")]
    RegistrationClosed,
    #[error("event for t={fire_time} is in the past (now {now})")]
    PastEvent { fire_time: Nanos, now: Nanos },
    #[error("unknown recipient agent {0}")]
    UnknownRecipient(AgentId),
    #[error("invalid kernel config: {0}")]
    InvalidConfig(String),
    #[error("kernel has no registered agents")]
    NoAgents,
    #[error("agent {agent} failed handling event #{sequence} ({kind}) at t={time}: {source}")]
    AgentFailed {
        agent: AgentId,
        time: Nanos,
        sequence: u64,
        kind: &'static str,
        #[source]
        source: AgentError,
    },
}

pub trait Agent: Any {
    fn name(&self) -> &str;

    /// Events addressed to lower priorities are served first at equal times.
    fn priority(&self) -> u8 {
        1
    }

    /// Called once at `start_time`, in registration order.
    fn on_start(&mut self, _ctx: &mut Context<'_>) -> Result<(), AgentError> {
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut Context<'_>, sender: AgentId, payload: &Payload) -> Result<(), AgentError>;

    fn as_any(&self) -> &dyn Any;
}

struct Outgoing {
    recipient: AgentId,
    fire_time: Nanos,
    payload: Payload,
}

/// Handle passed to agents while they process an event.
pub struct Context<'a> {
    now: Nanos,
    me: AgentId,
    latency: Nanos,
    rng: &'a mut ChaCha8Rng,
    outbox: Vec<Outgoing>,
}

impl Context<'_> {
    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn id(&self) -> AgentId {
        self.me
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    /// Send a message that arrives after the configured latency.
    pub fn send(&mut self, to: AgentId, payload: Payload) {
        let fire_time = self.now + self.latency;
        self.outbox.push(Outgoing { recipient: to, fire_time, payload });
    }

    pub fn send_at(&mut self, to: AgentId, fire_time: Nanos, payload: Payload) {
        self.outbox.push(Outgoing { recipient: to, fire_time, payload });
    }

    pub fn wakeup_at(&mut self, time: Nanos) {
        let me = self.me;
        self.outbox.push(Outgoing { recipient: me, fire_time: time, payload: Payload::Wakeup });
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub time: Nanos,
    pub sequence: u64,
    pub recipient: AgentId,
    pub sender: AgentId,
    pub kind: &'static str,
    pub fields: String,
}

/// Ordered record of every delivered event.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub records: Vec<LogRecord>,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Header `time,agent_id,event_kind,sender,payload...`, one line per delivery.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time,agent_id,event_kind,sender,payload")?;
        for r in &self.records {
            if r.fields.is_empty() {
                writeln!(out, "{},{},{},{}", r.time, r.recipient, r.kind, r.sender)?;
            } else {
                writeln!(out, "{},{},{},{},{}", r.time, r.recipient, r.kind, r.sender, r.fields)?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("log is utf-8")
    }
}

/// Per-agent RNG: ChaCha8 keyed by the master seed, stream selected by agent id.
pub fn agent_rng(master_seed: u64, agent: AgentId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(agent.0 as u64);
    rng
}

pub struct Kernel {
    config: KernelConfig,
    agents: Vec<Box<dyn Agent>>,
    rngs: Vec<ChaCha8Rng>,
    queue: BinaryHeap<Reverse<Event>>,
    now: Nanos,
    next_sequence: u64,
    started: bool,
}

impl Kernel {
    pub fn new(config: KernelConfig) -> Result<Self, KernelError> {
        if config.start_time >= config.end_time {
            return Err(KernelError::InvalidConfig(format!(
                "start_time {} must precede end_time {}",
                config.start_time, config.end_time
            )));
        }
        if config.latency < 0 {
            return Err(KernelError::InvalidConfig("latency must be non-negative".into()));
        }
        Ok(Kernel {
            config,
            agents: Vec::new(),
            rngs: Vec::new(),
            queue: BinaryHeap::new(),
            now: config.start_time,
            next_sequence: 0,
            started: false,
        })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn register_agent(&mut self, agent: Box<dyn Agent>) -> Result<AgentId, KernelError> {
        if self.started {
            return Err(KernelError::RegistrationClosed);
        }
        let id = AgentId(self.agents.len());
        self.rngs.push(agent_rng(self.config.seed, id));
        self.agents.push(agent);
        Ok(id)
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    /// Borrow a registered agent as its concrete type.
    pub fn agent<T: Agent>(&self, id: AgentId) -> Option<&T> {
        self.agents.get(id.0)?.as_any().downcast_ref::<T>()
    }

    pub fn rng_of(&mut self, id: AgentId) -> Option<&mut ChaCha8Rng> {
        self.rngs.get_mut(id.0)
    }

    /// Queue a message. The sequence number is assigned here.
    pub fn schedule(
        &mut self,
        fire_time: Nanos,
        recipient: AgentId,
        sender: AgentId,
        payload: Payload,
    ) -> Result<u64, KernelError> {
        if fire_time < self.now {
            return Err(KernelError::PastEvent { fire_time, now: self.now });
        }
        let priority = self
            .agents
            .get(recipient.0)
            .ok_or(KernelError::UnknownRecipient(recipient))?
            .priority();
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push(Reverse(Event { fire_time, priority, sequence, recipient, sender, payload }));
        Ok(sequence)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn dispatch(&mut self, agent: AgentId, sender: AgentId, event: Option<(u64, &'static str, &Payload)>) -> Result<(), KernelError> {
        let mut ctx = Context {
            now: self.now,
            me: agent,
            latency: self.config.latency,
            rng: &mut self.rngs[agent.0],
            outbox: Vec::new(),
        };
        let handler = &mut self.agents[agent.0];
        let result = match event {
            Some((_, _, payload)) => handler.on_message(&mut ctx, sender, payload),
            None => handler.on_start(&mut ctx),
        };
        let outbox = std::mem::take(&mut ctx.outbox);
        if let Err(source) = result {
            let (sequence, kind) = event.map_or((u64::MAX, "start"), |(s, k, _)| (s, k));
            return Err(KernelError::AgentFailed { agent, time: self.now, sequence, kind, source });
        }
        for out in outbox {
            self.schedule(out.fire_time, out.recipient, agent, out.payload)?;
        }
        Ok(())
    }

    /// Deliver events until the queue drains or the next event is past `end_time`.
    pub fn run(&mut self) -> Result<EventLog, KernelError> {
        if self.agents.is_empty() {
            return Err(KernelError::NoAgents);
        }
        self.started = true;
        let mut log = EventLog::default();
        for i in 0..self.agents.len() {
            self.dispatch(AgentId(i), AgentId(i), None)?;
        }
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.fire_time > self.config.end_time {
                break;
            }
            let Reverse(event) = self.queue.pop().expect("peeked");
            debug_assert!(event.fire_time >= self.now);
            self.now = event.fire_time;
            log.records.push(LogRecord {
                time: event.fire_time,
                sequence: event.sequence,
                recipient: event.recipient,
                sender: event.sender,
                kind: event.payload.kind(),
                fields: event.payload.fields(),
            });
            self.dispatch(
                event.recipient,
                event.sender,
                Some((event.sequence, event.payload.kind(), &event.payload)),
            )?;
        }
        Ok(log)
    }
}
