//! Measurement procedures over local transfer logs: cross-rollup
//! fragmentation statistics and the liquidity-unification behavior detector.
//!
//! Log input is delimited text, one record per line:
//! `<timestamp> <chain> <token> <address> <IN|OUT> <amount>`, with
//! timestamps nondecreasing. The detector flags an OUT record on chain `c`
//! when (a) an earlier IN for the same (user, token) exists on `c`, and
//! (b) an OUT for the same (user, token) exists on a different chain within
//! the lookback window `[t - W, t)`. Only the cross-chain OUT leg is
//! windowed; the prior-IN leg may be any earlier record. Amounts are not
//! matched between legs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::{Address, Amount};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    In,
    Out,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::In => "IN",
            Direction::Out => "OUT",
        })
    }
}

/// One transfer-log record. `chain` is a free-form label (a rollup id or a
/// named chain), direction is as classified by the log producer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferRecord {
    pub timestamp: i64,
    pub chain: String,
    pub token: String,
    pub user: Address,
    pub direction: Direction,
    pub amount: Amount,
}

impl fmt::Display for TransferRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {}",
            self.timestamp, self.chain, self.token, self.user, self.direction, self.amount
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyzerError {
    #[error("unsorted_log: timestamp regresses at line {line}")]
    UnsortedLog { line: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("window_seconds must be positive")]
    BadWindow,
    #[error("chain {chain} is not in the snapshot universe")]
    UnknownChain { chain: String },
}

/// Parses a transfer log, rejecting malformed lines and timestamp
/// regressions with their line numbers. `#` comment lines and blank lines
/// are ignored.
pub fn parse_log(text: &str) -> Result<Vec<TransferRecord>, AnalyzerError> {
    let mut records = Vec::new();
    let mut last_ts: Option<i64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(AnalyzerError::Malformed {
                line,
                message: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let malformed = |message: String| AnalyzerError::Malformed { line, message };
        let record = TransferRecord {
            timestamp: fields[0]
                .parse()
                .map_err(|e| malformed(format!("bad timestamp {:?}: {e}", fields[0])))?,
            chain: fields[1].to_string(),
            token: fields[2].to_string(),
            user: Address::parse(fields[3])
                .map_err(|e| malformed(format!("bad address {:?}: {e}", fields[3])))?,
            direction: match fields[4] {
                "IN" => Direction::In,
                "OUT" => Direction::Out,
                other => return Err(malformed(format!("bad direction {other:?}"))),
            },
            amount: fields[5]
                .parse()
                .map_err(|e| malformed(format!("bad amount {:?}: {e}", fields[5])))?,
        };
        if let Some(prev) = last_ts {
            if record.timestamp < prev {
                return Err(AnalyzerError::UnsortedLog { line });
            }
        }
        last_ts = Some(record.timestamp);
        records.push(record);
    }
    Ok(records)
}

/// One detected liquidity-unification event, anchored at an OUT record.
/// Support lists hold record indices into the input log, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionEvent {
    pub anchor: usize,
    pub user: Address,
    pub token: String,
    pub chain: String,
    /// Earlier IN records for (user, token) on the anchor chain.
    pub in_support: Vec<usize>,
    /// OUT records for (user, token) on other chains within the window.
    pub out_support: Vec<usize>,
}

/// Scans a timestamp-sorted log for unification events. Output order follows
/// the anchors' log order. The cross-chain window is half-open,
/// `[t - window, t)`: a simultaneous OUT on another chain does not count.
pub fn detect_unification(
    log: &[TransferRecord],
    window_seconds: i64,
) -> Result<Vec<DetectionEvent>, AnalyzerError> {
    if window_seconds <= 0 {
        return Err(AnalyzerError::BadWindow);
    }
    for (idx, pair) in log.windows(2).enumerate() {
        if pair[1].timestamp < pair[0].timestamp {
            return Err(AnalyzerError::UnsortedLog { line: idx + 2 });
        }
    }

    type Key = (Address, String);
    // per (user, token): IN indices by chain, and all OUTs seen so far
    let mut ins_by_chain: BTreeMap<Key, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
    let mut outs: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
    let mut events = Vec::new();

    for (idx, record) in log.iter().enumerate() {
        let key = (record.user.clone(), record.token.clone());
        if record.direction == Direction::Out {
            let in_support: Vec<usize> = ins_by_chain
                .get(&key)
                .and_then(|by_chain| by_chain.get(&record.chain))
                .cloned()
                .unwrap_or_default();
            let since = record.timestamp.saturating_sub(window_seconds);
            let out_support: Vec<usize> = outs
                .get(&key)
                .map(|prior| {
                    prior
                        .iter()
                        .copied()
                        .filter(|&i| {
                            log[i].chain != record.chain
                                && log[i].timestamp >= since
                                && log[i].timestamp < record.timestamp
                        })
                        .collect()
                })
                .unwrap_or_default();
            if !in_support.is_empty() && !out_support.is_empty() {
                events.push(DetectionEvent {
                    anchor: idx,
                    user: record.user.clone(),
                    token: record.token.clone(),
                    chain: record.chain.clone(),
                    in_support,
                    out_support,
                });
            }
            outs.entry(key).or_default().push(idx);
        } else {
            ins_by_chain
                .entry(key)
                .or_default()
                .entry(record.chain.clone())
                .or_default()
                .push(idx);
        }
    }
    Ok(events)
}

/// Detected events and the OUT-record population they are measured against:
/// the share of transfer-out activity involved in liquidity unification, as
/// an exact rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnificationShare {
    pub events: usize,
    pub out_records: usize,
}

impl UnificationShare {
    /// Percentage with two decimals, computed in integer arithmetic.
    pub fn percent(&self) -> String {
        if self.out_records == 0 {
            return "0.00%".into();
        }
        let basis_points = self.events * 10_000 / self.out_records;
        format!("{}.{:02}%", basis_points / 100, basis_points % 100)
    }
}

pub fn unification_share(log: &[TransferRecord], events: &[DetectionEvent]) -> UnificationShare {
    UnificationShare {
        events: events.len(),
        out_records: log.iter().filter(|r| r.direction == Direction::Out).count(),
    }
}

/// Which chains each (token, user) pair holds a positive balance on, within
/// a declared chain universe.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HoldingSnapshot {
    universe: BTreeSet<String>,
    holdings: BTreeMap<(String, Address), BTreeSet<String>>,
}

impl HoldingSnapshot {
    pub fn new(universe: BTreeSet<String>) -> Self {
        HoldingSnapshot { universe, holdings: BTreeMap::new() }
    }

    /// Records that `user` holds `token` on `chains`. Empty sets are not
    /// stored; chains outside the universe are rejected.
    pub fn insert(
        &mut self,
        token: &str,
        user: &Address,
        chains: BTreeSet<String>,
    ) -> Result<(), AnalyzerError> {
        if let Some(chain) = chains.iter().find(|c| !self.universe.contains(*c)) {
            return Err(AnalyzerError::UnknownChain { chain: chain.clone() });
        }
        if !chains.is_empty() {
            self.holdings.insert((token.to_string(), user.clone()), chains);
        }
        Ok(())
    }

    /// Derives a snapshot from a transfer log: a user holds a token on a
    /// chain iff total IN amounts exceed total OUT amounts there. The
    /// universe is the set of chains appearing in the log.
    pub fn from_log(log: &[TransferRecord]) -> Self {
        let universe: BTreeSet<String> = log.iter().map(|r| r.chain.clone()).collect();
        let mut flows: BTreeMap<(String, Address, String), (Amount, Amount)> = BTreeMap::new();
        for record in log {
            let key = (record.token.clone(), record.user.clone(), record.chain.clone());
            let (ins, outs) = flows.entry(key).or_default();
            match record.direction {
                Direction::In => *ins = ins.saturating_add(record.amount),
                Direction::Out => *outs = outs.saturating_add(record.amount),
            }
        }
        let mut snapshot = HoldingSnapshot::new(universe);
        for ((token, user, chain), (ins, outs)) in flows {
            if ins > outs {
                snapshot
                    .holdings
                    .entry((token, user))
                    .or_default()
                    .insert(chain);
            }
        }
        snapshot
    }

    pub fn is_empty(&self) -> bool {
        self.holdings.is_empty()
    }
}

/// Exact fragmentation counts: users per (token, chain-multiplicity k), plus
/// the k >= 2 totals per token and overall.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FragmentationStats {
    pub counts: BTreeMap<(String, usize), usize>,
    pub multi_chain: BTreeMap<String, usize>,
    pub multi_chain_total: usize,
}

pub fn fragmentation_stats(snapshot: &HoldingSnapshot) -> FragmentationStats {
    let mut stats = FragmentationStats::default();
    for ((token, _user), chains) in &snapshot.holdings {
        let k = chains.len();
        *stats.counts.entry((token.clone(), k)).or_default() += 1;
        if k >= 2 {
            *stats.multi_chain.entry(token.clone()).or_default() += 1;
            stats.multi_chain_total += 1;
        }
    }
    stats
}

/// Synthetic log builders for oracle equivalence and planted-rate checks.
pub mod synth {
    use super::*;

    fn synth_user(k: u32) -> Address {
        let mut bytes = [0u8; 20];
        bytes[0] = 0x51;
        bytes[16..].copy_from_slice(&(k + 1).to_be_bytes());
        Address::from_bytes(bytes)
    }

    /// A random timestamp-sorted log over small user/token/chain pools,
    /// deterministic in `seed`. Timestamp gaps straddle the default 2-hour
    /// window so both in-window and out-of-window pairs occur.
    pub fn random_log(seed: u64, len: usize) -> Vec<TransferRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chains = ["arbitrum", "optimism", "zksync"];
        let tokens = ["USDT", "WETH"];
        let mut ts: i64 = 0;
        (0..len)
            .map(|_| {
                ts += rng.random_range(0..=4_000);
                TransferRecord {
                    timestamp: ts,
                    chain: chains[rng.random_range(0..chains.len())].to_string(),
                    token: tokens[rng.random_range(0..tokens.len())].to_string(),
                    user: synth_user(rng.random_range(0..3)),
                    direction: if rng.random_bool(0.5) { Direction::In } else { Direction::Out },
                    amount: rng.random_range(0..1_000),
                }
            })
            .collect()
    }

    /// A log with exactly `planted` detectable unification events among
    /// `total_outs` OUT records, so the detected share is exactly
    /// `planted / total_outs`.
    ///
    /// Each planted group uses a fresh user and contributes one anchor plus
    /// one cross-chain evidence OUT; each decoy group contributes one OUT
    /// that has a prior same-chain IN but no cross-chain OUT, so it can
    /// never anchor an event. Requires `total_outs >= 2 * planted`.
    pub fn planted_log(seed: u64, total_outs: usize, planted: usize) -> Vec<TransferRecord> {
        assert!(total_outs >= 2 * planted, "each planted event consumes two OUT records");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let decoys = total_outs - 2 * planted;

        let mut groups: Vec<bool> = std::iter::repeat_n(true, planted)
            .chain(std::iter::repeat_n(false, decoys))
            .collect();
        groups.shuffle(&mut rng);

        let mut log = Vec::new();
        for (g, is_planted) in groups.into_iter().enumerate() {
            let base = g as i64 * 10_000;
            let user = synth_user(g as u32);
            let record = |timestamp: i64, chain: &str, direction: Direction| TransferRecord {
                timestamp,
                chain: chain.to_string(),
                token: "TOK".to_string(),
                user: user.clone(),
                direction,
                amount: 1,
            };
            if is_planted {
                // evidence OUT on beta, then IN + anchor OUT on alpha
                log.push(record(base + 10, "beta", Direction::Out));
                log.push(record(base + 20, "alpha", Direction::In));
                log.push(record(base + 30, "alpha", Direction::Out));
            } else {
                // same-chain IN then OUT: no cross-chain evidence, no event
                log.push(record(base + 10, "alpha", Direction::In));
                log.push(record(base + 20, "alpha", Direction::Out));
            }
        }
        log
    }
}
