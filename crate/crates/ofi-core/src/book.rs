//! Limit-order-book state on a discrete price lattice 1..=M and the
//! event-driven simulator over the six transition types (limit / market /
//! cancel on each side).
//!
//! Offset conventions: limit buys are priced at `best_ask - offset`, limit
//! sells at `best_bid + offset`; cancel buys target `best_bid - offset`,
//! cancel sells `best_ask + offset`. The asymmetry is intentional and kept
//! as-is. Events landing off-lattice, market orders against an empty side,
//! and cancels at empty levels are recorded no-ops.

use crate::flows::{FlowError, RateConfig};
use crate::rng::root_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BookError {
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error(transparent)]
    Config(#[from] FlowError),
    #[error("malformed record: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn letter(self) -> char {
        match self {
            Side::Buy => 'B',
            Side::Sell => 'S',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Limit,
    Market,
    Cancel,
}

impl EventKind {
    pub fn letter(self) -> char {
        match self {
            EventKind::Limit => 'L',
            EventKind::Market => 'M',
            EventKind::Cancel => 'C',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BookEvent {
    pub time: f64,
    pub side: Side,
    pub kind: EventKind,
    /// Distance from the reference best quote; present iff kind != Market.
    pub level_offset: Option<u32>,
    pub size: u64,
}

impl BookEvent {
    pub fn validate(&self) -> Result<(), BookError> {
        if self.size == 0 {
            return Err(BookError::InvalidEvent("size must be >= 1".into()));
        }
        match (self.kind, self.level_offset) {
            (EventKind::Market, Some(_)) => {
                Err(BookError::InvalidEvent("market orders carry no level offset".into()))
            }
            (EventKind::Market, None) => Ok(()),
            (_, Some(o)) if o >= 1 => Ok(()),
            (_, _) => Err(BookError::InvalidEvent(
                "limit/cancel events need a level offset >= 1".into(),
            )),
        }
    }
}

/// Book state; `ask_volumes[p]` / `bid_volumes[p]` are indexed by price
/// level p in 1..=m (slots 0 and m+1 are unused sentinels).
#[derive(Debug, Clone, PartialEq)]
pub struct BookState {
    m: usize,
    ask_volumes: Vec<u64>,
    bid_volumes: Vec<u64>,
    best_ask: usize,
    best_bid: usize,
    pub clock: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApplyOutcome {
    pub applied: bool,
    pub mid: f64,
}

impl BookState {
    pub fn new(m: usize) -> Self {
        assert!(m >= 2, "lattice needs at least two price levels");
        Self {
            m,
            ask_volumes: vec![0; m + 2],
            bid_volumes: vec![0; m + 2],
            best_ask: m + 1,
            best_bid: 0,
            clock: 0.0,
        }
    }

    /// Builds a state from explicit per-level volumes (index 0 = price 1).
    pub fn with_volumes(m: usize, asks: &[u64], bids: &[u64]) -> Result<Self, BookError> {
        if asks.len() != m || bids.len() != m {
            return Err(BookError::InvalidEvent("volume vectors must have length m".into()));
        }
        let mut s = Self::new(m);
        for p in 1..=m {
            if asks[p - 1] > 0 && bids[p - 1] > 0 {
                return Err(BookError::InvalidEvent(format!(
                    "price {p} carries both ask and bid volume"
                )));
            }
            s.ask_volumes[p] = asks[p - 1];
            s.bid_volumes[p] = bids[p - 1];
        }
        s.best_ask = (1..=m).find(|&p| s.ask_volumes[p] > 0).unwrap_or(m + 1);
        s.best_bid = (1..=m).rev().find(|&p| s.bid_volumes[p] > 0).unwrap_or(0);
        if s.best_bid > s.best_ask {
            return Err(BookError::InvalidEvent("best bid above best ask".into()));
        }
        Ok(s)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ask_volume(&self, price: usize) -> u64 {
        self.ask_volumes[price]
    }

    pub fn bid_volume(&self, price: usize) -> u64 {
        self.bid_volumes[price]
    }

    /// Lowest occupied ask level, or m+1 when the ask side is empty.
    pub fn best_ask(&self) -> usize {
        self.best_ask
    }

    /// Highest occupied bid level, or 0 when the bid side is empty.
    pub fn best_bid(&self) -> usize {
        self.best_bid
    }

    pub fn mid_price(&self) -> f64 {
        (self.best_ask + self.best_bid) as f64 / 2.0
    }

    fn add_bid(&mut self, price: usize, size: u64) {
        self.bid_volumes[price] += size;
        if price > self.best_bid {
            self.best_bid = price;
        }
    }

    fn add_ask(&mut self, price: usize, size: u64) {
        self.ask_volumes[price] += size;
        if price < self.best_ask {
            self.best_ask = price;
        }
    }

    fn remove_bid(&mut self, price: usize, size: u64) {
        self.bid_volumes[price] -= size.min(self.bid_volumes[price]);
        if price == self.best_bid && self.bid_volumes[price] == 0 {
            self.best_bid = (1..price).rev().find(|&p| self.bid_volumes[p] > 0).unwrap_or(0);
        }
    }

    fn remove_ask(&mut self, price: usize, size: u64) {
        self.ask_volumes[price] -= size.min(self.ask_volumes[price]);
        if price == self.best_ask && self.ask_volumes[price] == 0 {
            self.best_ask = (price + 1..=self.m).find(|&p| self.ask_volumes[p] > 0).unwrap_or(self.m + 1);
        }
    }

    /// Applies one event; removal sizes are clamped to the available
    /// volume. Returns whether the event changed the state.
    pub fn apply_event(&mut self, ev: &BookEvent) -> Result<ApplyOutcome, BookError> {
        ev.validate()?;
        if ev.time < self.clock {
            return Err(BookError::InvalidEvent(format!(
                "event time {} precedes the book clock {}",
                ev.time, self.clock
            )));
        }
        self.clock = ev.time;
        let applied = match (ev.side, ev.kind) {
            (Side::Buy, EventKind::Limit) => {
                let off = ev.level_offset.unwrap() as usize;
                if self.best_ask > off {
                    self.add_bid(self.best_ask - off, ev.size);
                    true
                } else {
                    false // priced off the lattice
                }
            }
            (Side::Sell, EventKind::Limit) => {
                let off = ev.level_offset.unwrap() as usize;
                if self.best_bid + off <= self.m {
                    self.add_ask(self.best_bid + off, ev.size);
                    true
                } else {
                    false
                }
            }
            (Side::Buy, EventKind::Market) => {
                if self.best_ask <= self.m {
                    self.remove_ask(self.best_ask, ev.size);
                    true
                } else {
                    false // empty ask side
                }
            }
            (Side::Sell, EventKind::Market) => {
                if self.best_bid >= 1 {
                    self.remove_bid(self.best_bid, ev.size);
                    true
                } else {
                    false
                }
            }
            (Side::Buy, EventKind::Cancel) => {
                let off = ev.level_offset.unwrap() as usize;
                if self.best_bid > off && self.bid_volumes[self.best_bid - off] > 0 {
                    self.remove_bid(self.best_bid - off, ev.size);
                    true
                } else {
                    false
                }
            }
            (Side::Sell, EventKind::Cancel) => {
                let off = ev.level_offset.unwrap() as usize;
                let p = self.best_ask + off;
                if p <= self.m && self.ask_volumes[p] > 0 {
                    self.remove_ask(p, ev.size);
                    true
                } else {
                    false
                }
            }
        };
        Ok(ApplyOutcome { applied, mid: self.mid_price() })
    }
}

/// One simulated event together with the post-event quote summary.
#[derive(Debug, Clone, PartialEq)]
pub struct BookRecord {
    pub event: BookEvent,
    pub applied: bool,
    pub best_bid: usize,
    pub best_ask: usize,
    pub mid: f64,
}

const CSV_HEADER: &str = "time,side,kind,level_offset,size,best_bid,best_ask,mid";

fn fmt_mid(mid: f64) -> String {
    if mid.fract() == 0.0 {
        format!("{}", mid as i64)
    } else {
        format!("{mid}")
    }
}

pub fn write_csv<W: Write>(records: &[BookRecord], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        let off = r.event.level_offset.map(|o| o.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{:.9},{},{},{},{},{},{},{}",
            r.event.time,
            r.event.side.letter(),
            r.event.kind.letter(),
            off,
            r.event.size,
            r.best_bid,
            r.best_ask,
            fmt_mid(r.mid)
        )?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<BookRecord>, BookError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| BookError::Parse(e.to_string()))?;
        if i == 0 {
            if line.trim() != CSV_HEADER {
                return Err(BookError::Parse(format!("unexpected header: {line}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(BookError::Parse(format!("line {}: expected 8 fields", i + 1)));
        }
        let bad = |what: &str| BookError::Parse(format!("line {}: bad {what}", i + 1));
        let side = match fields[1] {
            "B" => Side::Buy,
            "S" => Side::Sell,
            _ => return Err(bad("side")),
        };
        let kind = match fields[2] {
            "L" => EventKind::Limit,
            "M" => EventKind::Market,
            "C" => EventKind::Cancel,
            _ => return Err(bad("kind")),
        };
        let level_offset = if fields[3].is_empty() {
            None
        } else {
            Some(fields[3].parse().map_err(|_| bad("level_offset"))?)
        };
        out.push(BookRecord {
            event: BookEvent {
                time: fields[0].parse().map_err(|_| bad("time"))?,
                side,
                kind,
                level_offset,
                size: fields[4].parse().map_err(|_| bad("size"))?,
            },
            applied: true, // not represented in the schema
            best_bid: fields[5].parse().map_err(|_| bad("best_bid"))?,
            best_ask: fields[6].parse().map_err(|_| bad("best_ask"))?,
            mid: fields[7].parse().map_err(|_| bad("mid"))?,
        });
    }
    Ok(out)
}

/// Flattened event menu with cumulative rate weights for O(log n) clock
/// selection at a constant total rate.
struct EventMenu {
    entries: Vec<(Side, EventKind, Option<u32>)>,
    cumulative: Vec<f64>,
    total: f64,
}

impl EventMenu {
    fn new(config: &RateConfig) -> Self {
        let mut entries = Vec::new();
        let mut rates = Vec::new();
        let mut push = |side, kind, off, rate: f64| {
            if rate > 0.0 {
                entries.push((side, kind, off));
                rates.push(rate);
            }
        };
        push(Side::Buy, EventKind::Market, None, config.mu_plus);
        push(Side::Sell, EventKind::Market, None, config.mu_minus);
        for (i, &r) in config.limit_rates_plus.iter().enumerate() {
            push(Side::Buy, EventKind::Limit, Some(i as u32 + 1), r);
        }
        for (i, &r) in config.limit_rates_minus.iter().enumerate() {
            push(Side::Sell, EventKind::Limit, Some(i as u32 + 1), r);
        }
        for (i, &r) in config.cancel_rates_plus.iter().enumerate() {
            push(Side::Buy, EventKind::Cancel, Some(i as u32 + 1), r);
        }
        for (i, &r) in config.cancel_rates_minus.iter().enumerate() {
            push(Side::Sell, EventKind::Cancel, Some(i as u32 + 1), r);
        }
        let mut cumulative = Vec::with_capacity(rates.len());
        let mut acc = 0.0;
        for r in rates {
            acc += r;
            cumulative.push(acc);
        }
        Self { entries, cumulative, total: acc }
    }

    fn pick<R: Rng>(&self, rng: &mut R) -> (Side, EventKind, Option<u32>) {
        let u = rng.random::<f64>() * self.total;
        let idx = self.cumulative.partition_point(|&c| c <= u).min(self.entries.len() - 1);
        self.entries[idx]
    }
}

/// Runs the unit-size event chain: exponential holding times at the
/// constant total rate, event type chosen in proportion to its rate.
/// Gated/off-lattice events are recorded no-ops, so the emitted stream is
/// exactly Poisson with the configured total rate.
pub fn simulate_book(
    config: &RateConfig,
    mut state: BookState,
    horizon: f64,
    seed: u64,
) -> Result<(Vec<BookRecord>, BookState), BookError> {
    config.validate()?;
    if !(horizon > 0.0) {
        return Err(BookError::InvalidEvent("horizon must be > 0".into()));
    }
    let menu = EventMenu::new(config);
    let mut rng = root_rng(seed);
    let mut records = Vec::new();
    let mut t = state.clock;
    loop {
        t += -rng.random::<f64>().ln() / menu.total;
        if t > horizon {
            break;
        }
        let (side, kind, level_offset) = menu.pick(&mut rng);
        let event = BookEvent { time: t, side, kind, level_offset, size: 1 };
        let outcome = state.apply_event(&event)?;
        records.push(BookRecord {
            event,
            applied: outcome.applied,
            best_bid: state.best_bid(),
            best_ask: state.best_ask(),
            mid: outcome.mid,
        });
    }
    Ok((records, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, std_error};
    use proptest::prelude::*;

    fn flat_config(m: usize) -> RateConfig {
        RateConfig {
            mu_plus: 1.0,
            mu_minus: 1.0,
            limit_rates_plus: vec![1.0; m],
            limit_rates_minus: vec![1.0; m],
            cancel_rates_plus: vec![0.5; m],
            cancel_rates_minus: vec![0.5; m],
        }
    }

    #[test]
    fn best_quote_conventions() {
        let s = BookState::with_volumes(5, &[0, 0, 3, 0, 1], &[0; 5]).unwrap();
        assert_eq!(s.best_ask(), 3);
        let empty = BookState::new(5);
        assert_eq!(empty.best_ask(), 6);
        assert_eq!(empty.best_bid(), 0);
        assert_eq!(empty.mid_price(), 3.0);
        let s = BookState::with_volumes(3, &[7, 0, 0], &[0; 3]).unwrap();
        assert_eq!(s.best_ask(), 1);
        let s = BookState::with_volumes(5, &[0; 5], &[2, 0, 4, 0, 0]).unwrap();
        assert_eq!(s.best_bid(), 3);
        let s = BookState::with_volumes(2, &[0, 0], &[0, 9]).unwrap();
        assert_eq!(s.best_bid(), 2);
        let s = BookState::with_volumes(5, &[0, 0, 0, 1, 0], &[0, 1, 0, 0, 0]).unwrap();
        assert_eq!(s.mid_price(), 3.0);
    }

    #[test]
    fn limit_buy_prices_off_best_ask() {
        let mut s = BookState::with_volumes(5, &[0, 0, 0, 2, 0], &[0; 5]).unwrap();
        let ev = BookEvent {
            time: 0.1,
            side: Side::Buy,
            kind: EventKind::Limit,
            level_offset: Some(2),
            size: 1,
        };
        assert!(s.apply_event(&ev).unwrap().applied);
        assert_eq!(s.bid_volume(2), 1);
        assert_eq!(s.best_bid(), 2);
        // offset beyond the lattice edge: no-op
        let far = BookEvent { level_offset: Some(4), time: 0.2, ..ev };
        assert!(!s.apply_event(&far).unwrap().applied);
    }

    #[test]
    fn market_orders_gate_on_empty_sides() {
        let mut s = BookState::new(4);
        let buy = BookEvent {
            time: 0.1,
            side: Side::Buy,
            kind: EventKind::Market,
            level_offset: None,
            size: 1,
        };
        assert!(!s.apply_event(&buy).unwrap().applied);
        let mut s = BookState::with_volumes(4, &[0, 1, 0, 0], &[0; 4]).unwrap();
        assert!(s.apply_event(&buy).unwrap().applied);
        assert_eq!(s.best_ask(), 5); // side emptied
    }

    #[test]
    fn cancels_noop_on_empty_levels() {
        let mut s = BookState::with_volumes(4, &[0; 4], &[1, 0, 1, 0]).unwrap();
        let ev = BookEvent {
            time: 0.1,
            side: Side::Buy,
            kind: EventKind::Cancel,
            level_offset: Some(1),
            size: 1,
        };
        // best bid 3, offset 1 -> price 2 has no volume
        assert!(!s.apply_event(&ev).unwrap().applied);
        let deeper = BookEvent { level_offset: Some(2), time: 0.2, ..ev };
        assert!(s.apply_event(&deeper).unwrap().applied);
        assert_eq!(s.bid_volume(1), 0);
    }

    #[test]
    fn rejects_stale_and_malformed_events() {
        let mut s = BookState::new(3);
        s.clock = 1.0;
        let ev = BookEvent {
            time: 0.5,
            side: Side::Buy,
            kind: EventKind::Market,
            level_offset: None,
            size: 1,
        };
        assert!(s.apply_event(&ev).is_err());
        let bad = BookEvent {
            time: 2.0,
            side: Side::Buy,
            kind: EventKind::Limit,
            level_offset: None,
            size: 1,
        };
        assert!(s.apply_event(&bad).is_err());
        let zero = BookEvent {
            time: 2.0,
            side: Side::Buy,
            kind: EventKind::Market,
            level_offset: None,
            size: 0,
        };
        assert!(s.apply_event(&zero).is_err());
    }

    #[test]
    fn single_clock_degenerate_config() {
        let cfg = RateConfig {
            mu_plus: 2.0,
            mu_minus: 0.0,
            limit_rates_plus: vec![],
            limit_rates_minus: vec![],
            cancel_rates_plus: vec![],
            cancel_rates_minus: vec![],
        };
        let (recs, _) = simulate_book(&cfg, BookState::new(3), 50.0, 7).unwrap();
        assert!(recs.iter().all(|r| r.event.side == Side::Buy && r.event.kind == EventKind::Market));
        let gaps: Vec<f64> = recs
            .windows(2)
            .map(|w| w[1].event.time - w[0].event.time)
            .collect();
        let m = mean(&gaps);
        assert!((m - 0.5).abs() < 4.0 * std_error(&gaps), "mean gap {m}");
    }

    #[test]
    fn event_count_matches_total_rate() {
        let cfg = flat_config(2); // total rate 2 + 4 + 2 = 8
        assert_eq!(cfg.total_rate(), 8.0);
        let counts: Vec<f64> = (0..2000)
            .map(|s| simulate_book(&cfg, BookState::new(2), 1.0, s).unwrap().0.len() as f64)
            .collect();
        let m = mean(&counts);
        assert!((m - 8.0).abs() < 3.0 * std_error(&counts), "mean count {m}");
    }

    #[test]
    fn identical_seed_replays_identically() {
        let cfg = flat_config(4);
        let (a, _) = simulate_book(&cfg, BookState::new(4), 5.0, 99).unwrap();
        let (b, _) = simulate_book(&cfg, BookState::new(4), 5.0, 99).unwrap();
        assert_eq!(a, b);
        let (c, _) = simulate_book(&cfg, BookState::new(4), 5.0, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_config_rejected() {
        let cfg = RateConfig {
            mu_plus: 0.0,
            mu_minus: 0.0,
            limit_rates_plus: vec![0.0],
            limit_rates_minus: vec![],
            cancel_rates_plus: vec![],
            cancel_rates_minus: vec![],
        };
        assert!(simulate_book(&cfg, BookState::new(2), 1.0, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let cfg = flat_config(4);
        let (recs, _) = simulate_book(&cfg, BookState::new(4), 2.0, 5).unwrap();
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let parsed = read_csv(&buf[..]).unwrap();
        assert_eq!(parsed.len(), recs.len());
        for (p, r) in parsed.iter().zip(&recs) {
            assert!((p.event.time - r.event.time).abs() < 1e-9);
            assert_eq!(p.event.side, r.event.side);
            assert_eq!(p.event.kind, r.event.kind);
            assert_eq!(p.event.level_offset, r.event.level_offset);
            assert_eq!((p.best_bid, p.best_ask), (r.best_bid, r.best_ask));
            assert_eq!(p.mid, r.mid);
        }
    }

    fn check_invariants(s: &BookState) {
        for p in 1..=s.m() {
            assert!(
                s.ask_volume(p) == 0 || s.bid_volume(p) == 0,
                "price {p} holds volume on both sides"
            );
        }
        assert!(s.best_bid() <= s.best_ask());
        assert_eq!(
            s.best_ask(),
            (1..=s.m()).find(|&p| s.ask_volume(p) > 0).unwrap_or(s.m() + 1)
        );
        assert_eq!(
            s.best_bid(),
            (1..=s.m()).rev().find(|&p| s.bid_volume(p) > 0).unwrap_or(0)
        );
    }

    proptest! {
        #[test]
        fn random_event_sequences_preserve_invariants(
            events in proptest::collection::vec((0u8..6, 1u32..5, 1u64..4), 0..300)
        ) {
            let mut s = BookState::new(4);
            for (i, (code, off, size)) in events.into_iter().enumerate() {
                let (side, kind) = match code {
                    0 => (Side::Buy, EventKind::Limit),
                    1 => (Side::Sell, EventKind::Limit),
                    2 => (Side::Buy, EventKind::Market),
                    3 => (Side::Sell, EventKind::Market),
                    4 => (Side::Buy, EventKind::Cancel),
                    _ => (Side::Sell, EventKind::Cancel),
                };
                let ev = BookEvent {
                    time: i as f64,
                    side,
                    kind,
                    level_offset: if kind == EventKind::Market { None } else { Some(off) },
                    size,
                };
                s.apply_event(&ev).unwrap();
                check_invariants(&s);
            }
        }
    }
}
