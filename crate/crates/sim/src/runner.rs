//! Replays a trace through an engine and checks it against a flat ledger.
//!
//! Nonces come from each engine's own state. Under ethanos the runner sends
//! a restore at the front of the block for every sender whose effective
//! state differs from its live state. Live miners sponsor restores in order,
//! each up to the per-block cap. The chain itself never inserts restores.

use std::collections::{BTreeMap, BTreeSet};

use ethanos_core::chain::{BlockError, Chain, ChainConfig, Engine, EpochConfig};
use ethanos_core::hash::{keccak, Address, Hash};
use ethanos_core::restoration::{CheckpointSource, RestoreError};
use ethanos_core::state::{Account, Transaction, TxError, RESTORE_ADDRESS};
use ethanos_core::storage::StorageStats;
use ethanos_core::trie::{self, TrieError};
use serde::{Deserialize, Serialize};

use crate::sync::{sync, Genesis, PivotPolicy, SyncError, SyncMode, SyncOptions, SyncReport};
use crate::workload::Trace;

pub fn default_miners() -> Vec<Address> {
    (0..4).map(|i| Address::from_low_u64(0xa11_0000 + i)).collect()
}

/// Syncs run against the host at every checkpoint after genesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyncPlan {
    pub vanilla: PivotPolicy,
    pub ethanos: PivotPolicy,
    pub batch_size: usize,
}

impl Default for SyncPlan {
    fn default() -> Self {
        SyncPlan {
            vanilla: PivotPolicy::default(),
            ethanos: PivotPolicy::LastCheckpoint,
            batch_size: SyncOptions::default().batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub epoch: EpochConfig,
    pub miners: Vec<Address>,
    pub sync: Option<SyncPlan>,
    /// Run the two engines on separate threads.
    pub parallel: bool,
}

impl RunConfig {
    /// Epoch length and per-block cap taken from the trace's spec.
    pub fn for_trace(trace: &Trace) -> RunConfig {
        let spec = &trace.meta.spec;
        RunConfig {
            epoch: EpochConfig {
                epoch_length: spec.epoch_length,
                max_txs_per_acct_per_block: spec.max_txs_per_acct_per_block,
                ..EpochConfig::default()
            },
            miners: default_miners(),
            sync: None,
            parallel: true,
        }
    }

    pub fn genesis(&self, engine: Engine, trace: &Trace) -> Genesis {
        Genesis {
            config: ChainConfig {
                engine,
                epoch: self.epoch,
                miners: self.miners.clone(),
            },
            alloc: trace.meta.genesis.clone(),
        }
    }
}

/// Balances by plain arithmetic over included transactions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ledger {
    balances: BTreeMap<Address, u128>,
}

impl Ledger {
    pub fn from_alloc(alloc: &[(Address, u128)]) -> Ledger {
        Ledger {
            balances: alloc.iter().copied().collect(),
        }
    }

    pub fn apply(&mut self, tx: &Transaction, miner: &Address) {
        *self.balances.entry(tx.from).or_insert(0) -= tx.value + tx.fee;
        if !tx.is_restore() {
            *self.balances.entry(tx.to).or_insert(0) += tx.value;
        }
        *self.balances.entry(*miner).or_insert(0) += tx.fee;
    }

    pub fn reward(&mut self, miner: &Address, amount: u128) {
        *self.balances.entry(*miner).or_insert(0) += amount;
    }

    pub fn balance(&self, a: &Address) -> u128 {
        self.balances.get(a).copied().unwrap_or(0)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Address> {
        self.balances.keys()
    }

    pub fn total(&self) -> u128 {
        self.balances.values().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoreRecord {
    pub block: u64,
    pub target: Address,
    pub last_active: u64,
    pub void_proofs: usize,
    pub pawn_proofs: usize,
    pub proof_count: usize,
    pub bundle_bytes: usize,
    pub tx_bytes: usize,
}

/// One engine's view of a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointStats {
    pub index: u64,
    pub block: u64,
    /// Trie the next block reads: the whole state under vanilla, the
    /// checkpoint trie under ethanos.
    pub trie: trie::TrieSummary,
    pub store: StorageStats,
    /// Accounts touched during the epoch ending here.
    pub active_accounts: u64,
    pub normal_txs: u64,
    pub restore_txs: u64,
    pub restore_bytes: u64,
    pub syncs: Vec<SyncReport>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{engine:?} block {block}: transaction {index} excluded: {reason}")]
    Excluded {
        engine: Engine,
        block: u64,
        index: usize,
        reason: TxError,
    },
    #[error("{engine:?} block {block}: {source}")]
    Block {
        engine: Engine,
        block: u64,
        source: BlockError,
    },
    #[error("{engine:?} block {block}: cannot restore {target}: {source}")]
    Restore {
        engine: Engine,
        block: u64,
        target: Address,
        source: RestoreError,
    },
    #[error("{engine:?} block {block}: {account} holds {got} but the ledger says {expected}")]
    Divergence {
        engine: Engine,
        block: u64,
        account: Address,
        expected: u128,
        got: u128,
    },
    #[error("{engine:?} checkpoint {index}: trie accounts differ from the epoch's activity")]
    Sweep { engine: Engine, index: u64 },
    #[error("checkpoint {index}: bloom misses active account {account}")]
    BloomFalseNegative { index: u64, account: Address },
    #[error("{engine:?}: {source}")]
    Trie { engine: Engine, source: TrieError },
    #[error("{engine:?} checkpoint {index}, {mode} sync: {source}")]
    Sync {
        engine: Engine,
        index: u64,
        mode: SyncMode,
        source: SyncError,
    },
    #[error("block {block}: no live miner has cap or funds left to restore {target}")]
    NoSponsor { block: u64, target: Address },
    #[error("genesis: {0}")]
    Genesis(BlockError),
}

#[derive(Debug)]
pub struct EngineRun {
    pub engine: Engine,
    pub genesis: Genesis,
    pub chain: Chain,
    pub ledger: Ledger,
    pub checkpoints: Vec<CheckpointStats>,
    /// Accounts touched per epoch; entry 0 is the genesis allocation.
    pub activity: Vec<BTreeSet<Address>>,
    pub restores: Vec<RestoreRecord>,
    pub normal_txs: u64,
}

impl EngineRun {
    pub fn restore_txs(&self) -> u64 {
        self.restores.len() as u64
    }
}

struct Runner {
    engine: Engine,
    genesis: Genesis,
    chain: Chain,
    ledger: Ledger,
    activity: Vec<BTreeSet<Address>>,
    restores: Vec<RestoreRecord>,
    epoch_normal: u64,
    epoch_restores: u64,
    epoch_restore_bytes: u64,
    normal_txs: u64,
    checkpoints: Vec<CheckpointStats>,
    sync: Option<SyncPlan>,
}

impl Runner {
    fn effective(&self, a: &Address) -> Result<Option<Account>, RestoreError> {
        self.chain.effective_account(a)
    }

    fn check(&self, accounts: impl IntoIterator<Item = Address>) -> Result<(), RunError> {
        let block = self.chain.head();
        for a in accounts {
            let got = self
                .effective(&a)
                .map_err(|source| self.restore_err(a, source))?
                .map_or(0, |x| x.balance);
            let expected = self.ledger.balance(&a);
            if got != expected {
                return Err(RunError::Divergence {
                    engine: self.engine,
                    block,
                    account: a,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    fn restore_err(&self, target: Address, source: RestoreError) -> RunError {
        RunError::Restore {
            engine: self.engine,
            block: self.chain.head() + 1,
            target,
            source,
        }
    }

    /// Whether `target` has dormant state its live state lacks.
    fn needs_restore(&self, target: &Address) -> Result<bool, RunError> {
        let live = self
            .chain
            .account(target)
            .map_err(|_| self.restore_err(*target, RestoreError::CorruptState))?;
        let effective = self
            .effective(target)
            .map_err(|e| self.restore_err(*target, e))?;
        Ok(effective != live)
    }

    fn restore_for(
        &self,
        target: &Address,
        sponsor: Address,
        sponsor_nonce: u64,
    ) -> Result<(Transaction, RestoreRecord), RunError> {
        let bundle = self
            .chain
            .build_restore(target)
            .map_err(|e| self.restore_err(*target, e))?;
        let payload = bundle.encode();
        let record = RestoreRecord {
            block: self.chain.head() + 1,
            target: *target,
            last_active: bundle.last_active,
            void_proofs: bundle.void_proofs.len(),
            pawn_proofs: bundle.pawn_proofs.len(),
            proof_count: bundle.proof_count(),
            bundle_bytes: payload.len(),
            tx_bytes: 0,
        };
        let tx = Transaction {
            from: sponsor,
            to: RESTORE_ADDRESS,
            value: 0,
            fee: crate::workload::FEE,
            nonce: sponsor_nonce,
            payload: Some(payload),
        };
        let record = RestoreRecord {
            tx_bytes: tx.encode().len(),
            ..record
        };
        Ok((tx, record))
    }

    /// Live miners that can still send this block: address, next nonce and
    /// how many restores they can pay for.
    fn sponsors(&self) -> Result<Vec<(Address, u64, u64)>, RunError> {
        let cap = self.genesis.config.epoch.max_txs_per_acct_per_block;
        let mut out: Vec<(Address, u64, u64)> = Vec::new();
        for m in &self.genesis.config.miners {
            if out.iter().any(|s| s.0 == *m) {
                continue;
            }
            let live = self
                .chain
                .account(m)
                .map_err(|_| self.restore_err(*m, RestoreError::CorruptState))?;
            if let Some(a) = live {
                let affordable = u64::try_from(a.balance / crate::workload::FEE).unwrap_or(u64::MAX);
                out.push((*m, a.nonce, cap.min(affordable)));
            }
        }
        Ok(out)
    }

    fn next_nonce(&self, nonces: &mut BTreeMap<Address, u64>, a: &Address) -> Result<u64, RunError> {
        if let Some(n) = nonces.get_mut(a) {
            *n += 1;
            return Ok(*n - 1);
        }
        let n = self
            .effective(a)
            .map_err(|e| self.restore_err(*a, e))?
            .map_or(0, |x| x.nonce);
        nonces.insert(*a, n + 1);
        Ok(n)
    }

    fn block(&mut self, txs: &[crate::workload::TraceTx]) -> Result<(), RunError> {
        let number = self.chain.head() + 1;
        let miner = self.genesis.config.miner_for(number);
        let mut pending = Vec::with_capacity(txs.len());
        let mut nonces: BTreeMap<Address, u64> = BTreeMap::new();
        let mut restores = Vec::new();
        // Restores lead the block so no earlier transfer can respawn a
        // target between planning and execution.
        if self.engine == Engine::Ethanos {
            let mut sponsors = self.sponsors()?;
            let mut seen = BTreeSet::new();
            for t in txs.iter().filter(|t| seen.insert(t.from)) {
                if !self.needs_restore(&t.from)? {
                    continue;
                }
                let slot = sponsors
                    .iter_mut()
                    .find(|s| s.2 > 0 && s.0 != t.from)
                    .ok_or(RunError::NoSponsor {
                        block: number,
                        target: t.from,
                    })?;
                let (tx, record) = self.restore_for(&t.from, slot.0, slot.1)?;
                slot.1 += 1;
                slot.2 -= 1;
                nonces.insert(slot.0, slot.1);
                pending.push(tx);
                restores.push(record);
            }
        }

        for t in txs {
            let nonce = self.next_nonce(&mut nonces, &t.from)?;
            pending.push(Transaction::transfer(t.from, t.to, t.value, t.fee, nonce));
        }

        let produced = self
            .chain
            .produce_block(&pending)
            .map_err(|source| RunError::Block {
                engine: self.engine,
                block: number,
                source,
            })?;
        if let Some((index, reason)) = produced.excluded.into_iter().next() {
            return Err(RunError::Excluded {
                engine: self.engine,
                block: number,
                index,
                reason,
            });
        }

        let epoch = self.genesis.config.latest_checkpoint_for(number) as usize + 1;
        if self.activity.len() <= epoch {
            self.activity.resize(epoch + 1, BTreeSet::new());
        }
        let mut touched = BTreeSet::from([miner]);
        for tx in &produced.block.txs {
            self.ledger.apply(tx, &miner);
            touched.insert(tx.from);
            if tx.is_restore() {
                self.epoch_restores += 1;
                self.epoch_restore_bytes += tx.encode().len() as u64;
            } else {
                touched.insert(tx.to);
                self.epoch_normal += 1;
                self.normal_txs += 1;
            }
        }
        for r in &restores {
            touched.insert(r.target);
        }
        self.restores.extend(restores);
        self.ledger
            .reward(&miner, self.genesis.config.epoch.block_reward);
        self.activity[epoch].extend(touched.iter().copied());
        self.check(touched)?;

        if self.genesis.config.is_checkpoint(number) {
            self.checkpoint(number)?;
        }
        Ok(())
    }

    fn checkpoint(&mut self, number: u64) -> Result<(), RunError> {
        let engine = self.engine;
        let index = number / self.genesis.config.epoch.epoch_length;
        let accounts: Vec<Address> = self.ledger.accounts().copied().collect();
        self.check(accounts)?;

        let root = self.chain.head_header().state_root;
        let summary =
            trie::walk(self.chain.store(), &root).map_err(|source| RunError::Trie { engine, source })?;
        let in_trie: BTreeSet<Hash> = self
            .chain
            .checkpoint_accounts(index)
            .map_err(|source| RunError::Trie { engine, source })?
            .into_iter()
            .map(|(h, _)| h)
            .collect();
        // vanilla keeps every account ever touched; ethanos only the epoch's
        let expected: BTreeSet<Hash> = match engine {
            Engine::Vanilla => self.ledger.accounts().map(|a| keccak(&a.0)).collect(),
            Engine::Ethanos => self.activity[index as usize]
                .iter()
                .map(|a| keccak(&a.0))
                .collect(),
        };
        if in_trie != expected {
            return Err(RunError::Sweep { engine, index });
        }
        if let Some(bloom) = self.chain.checkpoint_bloom(index) {
            if let Some(a) = self.activity[index as usize]
                .iter()
                .find(|a| !bloom.query(a))
            {
                return Err(RunError::BloomFalseNegative { index, account: *a });
            }
        }

        let mut syncs = Vec::new();
        if let Some(plan) = self.sync.filter(|_| number > 0) {
            let opts = SyncOptions {
                batch_size: plan.batch_size,
                pivot: match engine {
                    Engine::Vanilla => plan.vanilla,
                    Engine::Ethanos => plan.ethanos,
                },
                fault: None,
            };
            for mode in SyncMode::ALL {
                let (_, report) = sync(&self.chain, &self.genesis, mode, &opts).map_err(|source| {
                    RunError::Sync {
                        engine,
                        index,
                        mode,
                        source,
                    }
                })?;
                syncs.push(report);
            }
        }

        self.checkpoints.push(CheckpointStats {
            index,
            block: number,
            trie: summary,
            store: self.chain.store().stats(),
            active_accounts: self.activity[index as usize].len() as u64,
            normal_txs: self.epoch_normal,
            restore_txs: self.epoch_restores,
            restore_bytes: self.epoch_restore_bytes,
            syncs,
        });
        self.epoch_normal = 0;
        self.epoch_restores = 0;
        self.epoch_restore_bytes = 0;
        Ok(())
    }
}

pub fn run_engine(trace: &Trace, engine: Engine, cfg: &RunConfig) -> Result<EngineRun, RunError> {
    let genesis = cfg.genesis(engine, trace);
    let chain = genesis.build().map_err(RunError::Genesis)?;
    let mut runner = Runner {
        engine,
        ledger: Ledger::from_alloc(&genesis.alloc),
        activity: vec![genesis.alloc.iter().map(|(a, _)| *a).collect()],
        genesis,
        chain,
        restores: Vec::new(),
        epoch_normal: 0,
        epoch_restores: 0,
        epoch_restore_bytes: 0,
        normal_txs: 0,
        checkpoints: Vec::new(),
        sync: cfg.sync,
    };
    runner.checkpoint(0)?;
    for txs in trace.by_block() {
        runner.block(txs)?;
    }
    Ok(EngineRun {
        engine,
        genesis: runner.genesis,
        chain: runner.chain,
        ledger: runner.ledger,
        checkpoints: runner.checkpoints,
        activity: runner.activity,
        restores: runner.restores,
        normal_txs: runner.normal_txs,
    })
}

/// Both engines on one trace, with per-checkpoint rows.
#[derive(Debug)]
pub struct DualRun {
    pub vanilla: EngineRun,
    pub ethanos: EngineRun,
    pub rows: Vec<MetricsRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub checkpoint: u64,
    pub block: u64,
    pub active_accounts: u64,
    pub total_accounts: u64,
    pub vanilla_trie_nodes: u64,
    pub vanilla_trie_bytes: u64,
    pub ethanos_trie_nodes: u64,
    pub ethanos_trie_bytes: u64,
    pub vanilla_store_bytes: u64,
    pub ethanos_store_bytes: u64,
    pub normal_txs: u64,
    pub restore_txs: u64,
    pub restore_bytes: u64,
    pub syncs: Vec<SyncSize>,
}

/// Deterministic part of a [`SyncReport`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncSize {
    pub engine: Engine,
    pub mode: SyncMode,
    pub pivot_policy: PivotPolicy,
    pub pivot: u64,
    pub stored: StorageStats,
    pub wire_bytes: u64,
    pub trie_nodes_downloaded: u64,
}

impl From<&SyncReport> for SyncSize {
    fn from(r: &SyncReport) -> Self {
        SyncSize {
            engine: r.engine,
            mode: r.mode,
            pivot_policy: r.pivot_policy,
            pivot: r.pivot,
            stored: r.stored,
            wire_bytes: r.wire.total(),
            trie_nodes_downloaded: r.trie_nodes_downloaded,
        }
    }
}

pub fn run_dual(trace: &Trace, cfg: &RunConfig) -> Result<DualRun, RunError> {
    let (vanilla, ethanos) = if cfg.parallel {
        std::thread::scope(|s| {
            let v = s.spawn(|| run_engine(trace, Engine::Vanilla, cfg));
            let e = run_engine(trace, Engine::Ethanos, cfg);
            (v.join().expect("vanilla runner panicked"), e)
        })
    } else {
        (
            run_engine(trace, Engine::Vanilla, cfg),
            run_engine(trace, Engine::Ethanos, cfg),
        )
    };
    let (vanilla, ethanos) = (vanilla?, ethanos?);
    let rows = vanilla
        .checkpoints
        .iter()
        .zip(&ethanos.checkpoints)
        .map(|(v, e)| MetricsRow {
            checkpoint: e.index,
            block: e.block,
            active_accounts: e.active_accounts,
            total_accounts: v.trie.leaves,
            vanilla_trie_nodes: v.trie.nodes,
            vanilla_trie_bytes: v.trie.bytes,
            ethanos_trie_nodes: e.trie.nodes,
            ethanos_trie_bytes: e.trie.bytes,
            vanilla_store_bytes: v.store.total(),
            ethanos_store_bytes: e.store.total(),
            normal_txs: e.normal_txs,
            restore_txs: e.restore_txs,
            restore_bytes: e.restore_bytes,
            syncs: v.syncs.iter().chain(&e.syncs).map(SyncSize::from).collect(),
        })
        .collect();
    Ok(DualRun {
        vanilla,
        ethanos,
        rows,
    })
}
