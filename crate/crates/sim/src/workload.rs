//! Synthetic transaction traces.
//!
//! A trace lists plain transfers by block; nonces are left to the runner,
//! which assigns them from each engine's own state. Three activity models
//! are available:
//!
//! * `Uniform`: every transaction picks sender and recipient uniformly.
//! * `TargetRatio`: each epoch draws a fresh active set of the requested
//!   fraction of accounts and confines all traffic to it.
//! * `Bands`: accounts are born through faucet transfers and send in
//!   sessions whose inter-transaction gaps follow mainnet-like distance bands
//!   mapped onto epochs (see [`BANDS`]).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::{BufRead, Write};

use ethanos_core::hash::Address;
use ethanos_core::state::UNIT;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Funds births under the `Bands` model.
pub const FAUCET: Address = Address::from_low_u64(0xfa0c);

/// Fee every generated transaction carries.
pub const FEE: u128 = 1;

/// Address of pool account `i`.
pub fn pool_address(i: u64) -> Address {
    Address::from_low_u64(0x10_0000 + i)
}

/// Inter-transaction distance bands: share of accounts and gap as a
/// fraction of an epoch. A 30-day month maps onto one epoch; the open-ended
/// last band sends about once per run.
pub const BANDS: [(&str, f64, f64); 6] = [
    ("1 day", 0.6234, 1.0 / 30.0),
    ("1 week", 0.1366, 7.0 / 30.0),
    ("2 weeks", 0.0638, 14.0 / 30.0),
    ("1 month", 0.0657, 1.0),
    ("6 months", 0.0945, 6.0),
    ("others", 0.0160, 12.0),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivityModel {
    Uniform,
    TargetRatio {
        ratio: f64,
    },
    Bands {
        /// Mean sends per session (geometric).
        session_sends: f64,
        /// Chance that an account whose session ended starts another one
        /// after one to three epochs.
        wake_probability: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Funding {
    /// Transfers move random value; conservation is exercised.
    Funded,
    /// Every pool transfer carries value 0; accounts only pay fees.
    ZeroValue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TxsPerBlock {
    Fixed { n: u64 },
    Uniform { min: u64, max: u64 },
}

impl TxsPerBlock {
    fn max(&self) -> u64 {
        match *self {
            TxsPerBlock::Fixed { n } => n,
            TxsPerBlock::Uniform { max, .. } => max,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            TxsPerBlock::Fixed { n } => n,
            TxsPerBlock::Uniform { min, max } => rng.gen_range(min..=max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub accounts: u64,
    pub blocks: u64,
    pub epoch_length: u64,
    /// Per-block capacity; under `Bands` sends beyond it wait a block.
    pub txs_per_block: TxsPerBlock,
    /// Per-sender cap per block the trace must respect.
    pub max_txs_per_acct_per_block: u64,
    pub activity: ActivityModel,
    pub funding: Funding,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            accounts: 2000,
            blocks: 500,
            epoch_length: 100,
            txs_per_block: TxsPerBlock::Fixed { n: 20 },
            max_txs_per_acct_per_block: 1024,
            activity: ActivityModel::Bands {
                session_sends: 4.0,
                wake_probability: 0.25,
            },
            funding: Funding::Funded,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid spec: {0}")]
    Invalid(&'static str),
    #[error("infeasible spec: {txs} transactions per block exceed {senders} senders x cap {cap}")]
    Infeasible { txs: u64, senders: u64, cap: u64 },
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let invalid = |m| Err(WorkloadError::Invalid(m));
        if self.accounts == 0 {
            return invalid("accounts must be positive");
        }
        if self.blocks == 0 {
            return invalid("blocks must be positive");
        }
        if self.epoch_length == 0 {
            return invalid("epoch length must be positive");
        }
        if self.max_txs_per_acct_per_block == 0 {
            return invalid("per-account cap must be positive");
        }
        if let TxsPerBlock::Uniform { min, max } = self.txs_per_block {
            if min > max {
                return invalid("txs_per_block min exceeds max");
            }
        }
        let cap = self.max_txs_per_acct_per_block;
        let senders = match self.activity {
            ActivityModel::Uniform => self.accounts,
            ActivityModel::TargetRatio { ratio } => {
                if !(ratio > 0.0 && ratio <= 1.0) {
                    return invalid("target ratio must lie in (0, 1]");
                }
                active_count(self.accounts, ratio)
            }
            ActivityModel::Bands {
                session_sends,
                wake_probability,
            } => {
                if !(session_sends >= 1.0) {
                    return invalid("session_sends must be at least 1");
                }
                if !(0.0..=1.0).contains(&wake_probability) {
                    return invalid("wake_probability must lie in [0, 1]");
                }
                let births = births_per_block(self.accounts, self.blocks);
                if births > cap {
                    return Err(WorkloadError::Infeasible {
                        txs: births,
                        senders: 1,
                        cap,
                    });
                }
                return Ok(());
            }
        };
        let txs = self.txs_per_block.max();
        if txs > senders.saturating_mul(cap) {
            return Err(WorkloadError::Infeasible { txs, senders, cap });
        }
        Ok(())
    }

    fn unit_value(&self) -> u128 {
        match self.funding {
            Funding::Funded => 100 * UNIT,
            Funding::ZeroValue => 1_000_000 * FEE,
        }
    }
}

fn active_count(accounts: u64, ratio: f64) -> u64 {
    ((accounts as f64 * ratio).round() as u64).clamp(1, accounts)
}

/// Births are spread over the first 80% of the run.
fn births_per_block(accounts: u64, blocks: u64) -> u64 {
    let window = (blocks * 4 / 5).max(1);
    accounts.div_ceil(window)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceTx {
    pub block: u64,
    pub from: Address,
    pub to: Address,
    pub value: u128,
    pub fee: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub spec: WorkloadSpec,
    pub genesis: Vec<(Address, u128)>,
    /// Band labels and gaps in blocks, present under `Bands`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub band_gaps: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    /// Sorted by block.
    pub txs: Vec<TraceTx>,
}

impl Trace {
    /// Transactions of each block `1..=blocks`, indexed by `block - 1`.
    pub fn by_block(&self) -> Vec<&[TraceTx]> {
        let mut out = Vec::with_capacity(self.meta.spec.blocks as usize);
        let mut rest = &self.txs[..];
        for b in 1..=self.meta.spec.blocks {
            let n = rest.iter().take_while(|t| t.block == b).count();
            out.push(&rest[..n]);
            rest = &rest[n..];
        }
        out
    }

    /// JSON lines: the metadata object, then one transaction per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.meta)?;
        w.write_all(b"\n")?;
        for tx in &self.txs {
            serde_json::to_writer(&mut w, tx)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        out
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceReadError> {
        let mut lines = r.lines();
        let first = lines.next().ok_or(TraceReadError::Empty)??;
        let meta: TraceMeta = serde_json::from_str(&first)?;
        let mut txs = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let tx: TraceTx = serde_json::from_str(&line)?;
            if tx.block == 0 || tx.block > meta.spec.blocks {
                return Err(TraceReadError::BlockRange(tx.block));
            }
            if txs.last().is_some_and(|p: &TraceTx| p.block > tx.block) {
                return Err(TraceReadError::Unsorted(tx.block));
            }
            txs.push(tx);
        }
        Ok(Trace { meta, txs })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error("trace is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("transaction at block {0} lies outside the trace")]
    BlockRange(u64),
    #[error("transaction at block {0} is out of order")]
    Unsorted(u64),
}

/// Sender-side balances the generator tracks so every transfer is payable.
struct Ledger {
    balances: BTreeMap<Address, u128>,
    funding: Funding,
}

impl Ledger {
    fn can_pay(&self, a: &Address) -> bool {
        self.balances.get(a).copied().unwrap_or(0) >= FEE
    }

    fn value_for(&self, rng: &mut ChaCha8Rng, from: &Address) -> u128 {
        match self.funding {
            Funding::ZeroValue => 0,
            Funding::Funded => {
                let spendable = self.balances[from] - FEE;
                rng.gen_range(0..=spendable / 8)
            }
        }
    }

    fn apply(&mut self, tx: &TraceTx) {
        *self.balances.get_mut(&tx.from).expect("sender funded") -= tx.value + tx.fee;
        *self.balances.entry(tx.to).or_insert(0) += tx.value;
    }
}

pub fn generate_workload(spec: &WorkloadSpec) -> Result<Trace, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.activity {
        ActivityModel::Uniform => Ok(flat(spec, &mut rng, None)),
        ActivityModel::TargetRatio { ratio } => Ok(flat(spec, &mut rng, Some(ratio))),
        ActivityModel::Bands {
            session_sends,
            wake_probability,
        } => Ok(bands(spec, &mut rng, session_sends, wake_probability)),
    }
}

/// Uniform and target-ratio traces over a genesis-funded pool.
fn flat(spec: &WorkloadSpec, rng: &mut ChaCha8Rng, ratio: Option<f64>) -> Trace {
    let pool: Vec<Address> = (0..spec.accounts).map(pool_address).collect();
    let genesis: Vec<(Address, u128)> = pool.iter().map(|a| (*a, spec.unit_value())).collect();
    let mut ledger = Ledger {
        balances: genesis.iter().copied().collect(),
        funding: spec.funding,
    };
    let cap = spec.max_txs_per_acct_per_block;
    let mut txs = Vec::new();
    let mut active = pool.clone();
    let mut uncovered: Vec<Address> = Vec::new();
    for block in 1..=spec.blocks {
        if (block - 1) % spec.epoch_length == 0 {
            if let Some(r) = ratio {
                active = pool
                    .choose_multiple(rng, active_count(spec.accounts, r) as usize)
                    .copied()
                    .collect();
                active.sort();
                uncovered = active.clone();
                uncovered.shuffle(rng);
            }
        }
        let mut sent: BTreeMap<Address, u64> = BTreeMap::new();
        for _ in 0..spec.txs_per_block.sample(rng) {
            let from = loop {
                let a = uncovered
                    .pop()
                    .unwrap_or_else(|| *active.choose(rng).expect("non-empty pool"));
                if sent.get(&a).copied().unwrap_or(0) < cap {
                    break a;
                }
            };
            let to = if active.len() == 1 {
                from
            } else {
                loop {
                    let b = *active.choose(rng).expect("non-empty pool");
                    if b != from {
                        break b;
                    }
                }
            };
            if !ledger.can_pay(&from) {
                continue;
            }
            *sent.entry(from).or_insert(0) += 1;
            let tx = TraceTx {
                block,
                from,
                to,
                value: ledger.value_for(rng, &from),
                fee: FEE,
            };
            ledger.apply(&tx);
            txs.push(tx);
        }
    }
    Trace {
        meta: TraceMeta {
            spec: *spec,
            genesis,
            band_gaps: Vec::new(),
        },
        txs,
    }
}

/// Accounts with a scheduled send, with O(1) membership updates.
#[derive(Default)]
struct LiveSet {
    members: Vec<u64>,
    slot: BTreeMap<u64, usize>,
}

impl LiveSet {
    fn insert(&mut self, i: u64) {
        if !self.slot.contains_key(&i) {
            self.slot.insert(i, self.members.len());
            self.members.push(i);
        }
    }

    fn remove(&mut self, i: u64) {
        if let Some(pos) = self.slot.remove(&i) {
            self.members.swap_remove(pos);
            if let Some(moved) = self.members.get(pos) {
                self.slot.insert(*moved, pos);
            }
        }
    }
}

struct BandAccount {
    band: usize,
    /// Sends left in the current session.
    remaining: u64,
}

fn bands(spec: &WorkloadSpec, rng: &mut ChaCha8Rng, session_sends: f64, wake: f64) -> Trace {
    let eps = spec.epoch_length as f64;
    let gap_of = |band: usize| (BANDS[band].2 * eps).max(1.0);
    let sample_gap = |rng: &mut ChaCha8Rng, band: usize| -> u64 {
        ((gap_of(band) * rng.gen_range(0.5..1.5)).round() as u64).max(1)
    };
    // geometric on {1, 2, ...} with the requested mean
    let sample_session = |rng: &mut ChaCha8Rng| -> u64 {
        let p = 1.0 / session_sends;
        let mut n = 1;
        while n < 10_000 && !rng.gen_bool(p) {
            n += 1;
        }
        n
    };
    let cumulative: Vec<f64> = BANDS
        .iter()
        .scan(0.0, |acc, b| {
            *acc += b.1;
            Some(*acc)
        })
        .collect();
    let pick_band = |rng: &mut ChaCha8Rng| -> usize {
        let x = rng.gen_range(0.0..cumulative[cumulative.len() - 1]);
        cumulative.iter().position(|c| x < *c).unwrap_or(BANDS.len() - 1)
    };

    let faucet_funds = spec.unit_value() * (spec.accounts as u128 + 1);
    let genesis = vec![(FAUCET, faucet_funds)];
    let mut ledger = Ledger {
        balances: genesis.iter().copied().collect(),
        funding: spec.funding,
    };
    let births = births_per_block(spec.accounts, spec.blocks);
    let mut accounts: Vec<BandAccount> = Vec::new();
    let mut live = LiveSet::default();
    // (due block, account index); ties resolve by index
    let mut queue: BinaryHeap<Reverse<(u64, u64)>> = BinaryHeap::new();
    let mut txs = Vec::new();

    for block in 1..=spec.blocks {
        for _ in 0..births {
            let i = accounts.len() as u64;
            if i >= spec.accounts {
                break;
            }
            let tx = TraceTx {
                block,
                from: FAUCET,
                to: pool_address(i),
                value: spec.unit_value(),
                fee: FEE,
            };
            ledger.apply(&tx);
            txs.push(tx);
            let band = pick_band(rng);
            accounts.push(BandAccount {
                band,
                remaining: sample_session(rng),
            });
            live.insert(i);
            queue.push(Reverse((block + sample_gap(rng, band), i)));
        }

        let capacity = spec.txs_per_block.sample(rng);
        let mut sent = 0;
        let mut deferred = Vec::new();
        while let Some(Reverse((due, i))) = queue.peek().copied() {
            if due > block {
                break;
            }
            queue.pop();
            if sent >= capacity {
                deferred.push(i);
                continue;
            }
            let from = pool_address(i);
            if !ledger.can_pay(&from) {
                live.remove(i);
                continue;
            }
            // a woken account rejoins the live set with its first send
            live.insert(i);
            let to = pick_recipient(rng, &live, accounts.len() as u64, i);
            let tx = TraceTx {
                block,
                from,
                to,
                value: ledger.value_for(rng, &from),
                fee: FEE,
            };
            ledger.apply(&tx);
            txs.push(tx);
            sent += 1;

            let acct = &mut accounts[i as usize];
            acct.remaining -= 1;
            if acct.remaining > 0 {
                queue.push(Reverse((block + sample_gap(rng, acct.band), i)));
            } else {
                live.remove(i);
                if rng.gen_bool(wake) {
                    acct.remaining = sample_session(rng);
                    let dormancy = rng.gen_range(spec.epoch_length..=3 * spec.epoch_length);
                    queue.push(Reverse((block + dormancy, i)));
                }
            }
        }
        for i in deferred {
            queue.push(Reverse((block + 1, i)));
        }
    }
    Trace {
        meta: TraceMeta {
            spec: *spec,
            genesis,
            band_gaps: BANDS
                .iter()
                .enumerate()
                .map(|(b, (label, _, _))| (label.to_string(), gap_of(b)))
                .collect(),
        },
        txs,
    }
}

fn pick_recipient(rng: &mut ChaCha8Rng, live: &LiveSet, born: u64, sender: u64) -> Address {
    for _ in 0..8 {
        let i = if live.members.len() > 1 && rng.gen_bool(0.9) {
            live.members[rng.gen_range(0..live.members.len())]
        } else {
            rng.gen_range(0..born)
        };
        if i != sender {
            return pool_address(i);
        }
    }
    pool_address((sender + 1) % born.max(2))
}

/// Distinct pool accounts sending or receiving in each epoch `1..`.
pub fn epoch_activity(trace: &Trace) -> Vec<BTreeSet<Address>> {
    let eps = trace.meta.spec.epoch_length;
    let epochs = trace.meta.spec.blocks.div_ceil(eps) as usize;
    let mut out = vec![BTreeSet::new(); epochs];
    for tx in &trace.txs {
        let e = ((tx.block - 1) / eps) as usize;
        for a in [tx.from, tx.to] {
            if a != FAUCET {
                out[e].insert(a);
            }
        }
    }
    out
}

/// Active pool accounts per epoch over the accounts existing by its end.
pub fn active_ratios(trace: &Trace) -> Vec<f64> {
    let eps = trace.meta.spec.epoch_length;
    let mut existing: BTreeSet<Address> = trace
        .meta
        .genesis
        .iter()
        .map(|(a, _)| *a)
        .filter(|a| *a != FAUCET)
        .collect();
    let activity = epoch_activity(trace);
    let mut out = Vec::with_capacity(activity.len());
    let mut txs = trace.txs.iter().peekable();
    for (e, active) in activity.iter().enumerate() {
        let end = (e as u64 + 1) * eps;
        while let Some(tx) = txs.next_if(|t| t.block <= end) {
            existing.insert(tx.to);
        }
        out.push(active.len() as f64 / existing.len().max(1) as f64);
    }
    out
}
