//! Block production, verification and epoch scheduling.
//!
//! Block 0 is genesis and also checkpoint 0; checkpoint `n` is block `n * ε`.
//! Under [`Engine::Ethanos`] every block `b` with `(b - 1) % ε == 0` starts
//! from the empty trie, and accounts not found in the working trie are read
//! from the last checkpoint `(b - 1) / ε`. Checkpoint headers commit to a
//! bloom over every account in their trie. [`Engine::Vanilla`] keeps one trie
//! for the whole chain and never sweeps.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::bloom::{Bloom, BloomParams};
use crate::codec::{DecodeError, Put, Reader};
use crate::hash::{keccak, Address, Hash, EMPTY_ROOT};
use crate::restoration::{
    apply_restore, build_restore, effective_account, CheckpointSource, RespawnRule,
    RestoreBundle, RestoreError,
};
use crate::state::{
    apply_block_reward, apply_transaction, validate_transaction, write_account, Account,
    AccountResolver, EthanosResolver, StateRef, Transaction, TxError, VanillaResolver,
    RESTORE_ADDRESS, UNIT,
};
use crate::storage::{DataCategory, KvStore, MemDb, NodeDb, Overlay};
use crate::trie::{self, TrieError, TriePath};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Engine {
    /// One persistent state trie, no sweeping, no restores.
    Vanilla,
    /// Fresh trie per epoch, checkpoint fallback, restores.
    Ethanos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochConfig {
    /// Blocks per epoch, `ε >= 1`.
    pub epoch_length: u64,
    /// Per-account send cap per block, `C >= 1`.
    pub max_txs_per_acct_per_block: u64,
    pub block_reward: u128,
    pub bloom: BloomParams,
}

impl Default for EpochConfig {
    fn default() -> Self {
        EpochConfig {
            epoch_length: 100,
            max_txs_per_acct_per_block: 1024,
            block_reward: 2 * UNIT,
            bloom: BloomParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainConfig {
    pub engine: Engine,
    pub epoch: EpochConfig,
    /// Round-robin schedule: block `b` is mined by `miners[(b - 1) % len]`.
    pub miners: Vec<Address>,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.epoch.epoch_length == 0 {
            return Err("epoch length must be at least 1");
        }
        if self.epoch.max_txs_per_acct_per_block == 0 {
            return Err("per-block transaction cap must be at least 1");
        }
        if !self.epoch.bloom.is_valid() {
            return Err("bloom needs at least 8 bits and 1 hash");
        }
        if self.miners.is_empty() {
            return Err("miner set is empty");
        }
        if self.miners.contains(&RESTORE_ADDRESS) {
            return Err("the restore address cannot mine");
        }
        Ok(())
    }

    pub fn respawn_rule(&self) -> RespawnRule {
        RespawnRule {
            max_txs_per_block: self.epoch.max_txs_per_acct_per_block,
        }
    }

    pub fn miner_for(&self, number: u64) -> Address {
        debug_assert!(number >= 1);
        self.miners[((number - 1) % self.miners.len() as u64) as usize]
    }

    pub fn is_checkpoint(&self, number: u64) -> bool {
        number % self.epoch.epoch_length == 0
    }

    /// Checkpoint consulted while building block `number`.
    pub fn latest_checkpoint_for(&self, number: u64) -> u64 {
        number.saturating_sub(1) / self.epoch.epoch_length
    }
}

/// Fixed 156-byte header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Header {
    pub number: u64,
    pub prev_hash: Hash,
    pub tx_root: Hash,
    pub state_root: Hash,
    /// Digest of the checkpoint bloom; zero on other blocks and under vanilla.
    pub bloom_digest: Hash,
    pub miner: Address,
}

pub const HEADER_LEN: usize = 8 + 32 * 4 + 20;

impl Header {
    /// `u64 number | prev_hash | tx_root | state_root | bloom_digest | miner`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.put_u64(self.number);
        out.put_hash(&self.prev_hash);
        out.put_hash(&self.tx_root);
        out.put_hash(&self.state_root);
        out.put_hash(&self.bloom_digest);
        out.put_address(&self.miner);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Header, DecodeError> {
        let mut r = Reader::new(bytes);
        let h = Header {
            number: r.u64()?,
            prev_hash: r.hash()?,
            tx_root: r.hash()?,
            state_root: r.hash()?,
            bloom_digest: r.hash()?,
            miner: r.address()?,
        };
        r.finish()?;
        Ok(h)
    }

    pub fn hash(&self) -> Hash {
        keccak(&self.encode())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub header: Header,
    pub txs: Vec<Transaction>,
}

/// `u32 count | (u32 len | tx)*`.
pub fn encode_body(txs: &[Transaction]) -> Vec<u8> {
    let mut out = Vec::new();
    out.put_u32(txs.len() as u32);
    for tx in txs {
        out.put_bytes(&tx.encode());
    }
    out
}

pub fn decode_body(bytes: &[u8]) -> Result<Vec<Transaction>, DecodeError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()? as usize;
    let mut txs = Vec::with_capacity(n.min(bytes.len() / 81));
    for _ in 0..n {
        txs.push(Transaction::decode(r.bytes()?)?);
    }
    r.finish()?;
    Ok(txs)
}

/// `u32 count | (tx_hash | u8 status)*`; included transactions always succeed.
pub fn encode_receipts(txs: &[Transaction]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 33 * txs.len());
    out.put_u32(txs.len() as u32);
    for tx in txs {
        out.put_hash(&tx.hash());
        out.put_u8(1);
    }
    out
}

/// Root of the trie mapping each big-endian `u32` index to its transaction.
pub fn tx_root(txs: &[Transaction]) -> Hash {
    let encoded: Vec<(TriePath, Vec<u8>)> = txs
        .iter()
        .enumerate()
        .map(|(i, tx)| (TriePath::secure(&(i as u32).to_be_bytes()), tx.encode()))
        .collect();
    trie::root_of(encoded.iter().map(|(p, v)| (*p, v.as_slice())))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlockError {
    #[error("expected block {expected}, got {got}")]
    Number { expected: u64, got: u64 },
    #[error("prev_hash does not link to the parent")]
    PrevHash,
    #[error("miner is not scheduled for this height")]
    Miner,
    #[error("tx_root mismatch")]
    TxRoot,
    #[error("state_root mismatch")]
    StateRoot,
    #[error("bloom digest mismatch")]
    Bloom,
    #[error("receipts do not match the body")]
    Receipts,
    #[error("transaction {index} is invalid: {reason}")]
    InvalidTx { index: usize, reason: TxError },
    #[error("body does not decode: {0}")]
    Body(DecodeError),
    #[error("local state is incomplete: {0}")]
    Integrity(TrieError),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

/// A produced block and the pending transactions left out of it.
#[derive(Clone, Debug)]
pub struct Produced {
    pub block: Block,
    pub excluded: Vec<(usize, TxError)>,
}

/// Storage keys of a block's body and receipts, when held locally.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlockKeys {
    pub body: Option<Hash>,
    pub receipts: Option<Hash>,
}

/// Either resolver behind one type, since resolvers are generic-method traits.
#[derive(Clone, Copy, Debug)]
pub enum AnyResolver {
    Vanilla(VanillaResolver),
    Ethanos(EthanosResolver),
}

impl AccountResolver for AnyResolver {
    fn resolve<D: NodeDb + ?Sized>(
        &self,
        db: &D,
        working: &Hash,
        addr: &Address,
    ) -> Result<Option<Account>, TxError> {
        match self {
            AnyResolver::Vanilla(r) => r.resolve(db, working, addr),
            AnyResolver::Ethanos(r) => r.resolve(db, working, addr),
        }
    }

    fn fresh_nonce(&self, block: u64) -> u64 {
        match self {
            AnyResolver::Vanilla(r) => r.fresh_nonce(block),
            AnyResolver::Ethanos(r) => r.fresh_nonce(block),
        }
    }
}

struct Executed {
    txs: Vec<Transaction>,
    excluded: Vec<(usize, TxError)>,
    state_root: Hash,
    tx_root: Hash,
    bloom: Option<Bloom>,
    dirty: crate::storage::MemDb,
}

/// State roots that building block `number` reads, given at least the
/// headers before it.
pub fn required_roots(config: &ChainConfig, headers: &[Header], number: u64) -> Vec<Hash> {
    let parent = headers[(number - 1) as usize].state_root;
    let mut out = Vec::with_capacity(2);
    match config.engine {
        Engine::Vanilla => out.push(parent),
        Engine::Ethanos => {
            if !config.is_checkpoint(number - 1) {
                out.push(parent);
            }
            let cp = config.latest_checkpoint_for(number) * config.epoch.epoch_length;
            let root = headers[cp as usize].state_root;
            if !out.contains(&root) {
                out.push(root);
            }
        }
    }
    out.retain(|r| *r != EMPTY_ROOT);
    out
}

/// Which state tries a replica persists.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Retention {
    /// Every block's trie is committed to the store.
    #[default]
    Archive,
    /// Block tries accumulate in memory; [`Chain::flush`] persists only the
    /// tries the next block reads and discards the rest.
    Pruned,
}

/// Blocks a pruned replica executes between automatic flushes.
pub const FLUSH_INTERVAL: u64 = 128;

/// Read view over the store and the unflushed nodes.
struct Layered<'a> {
    store: &'a KvStore,
    pending: &'a MemDb,
}

impl NodeDb for Layered<'_> {
    fn node(&self, key: &Hash) -> Option<&[u8]> {
        self.pending.node(key).or_else(|| self.store.get(key))
    }
}

/// A chain replica: headers, bodies, state tries and checkpoint blooms.
#[derive(Clone, Debug)]
pub struct Chain {
    config: ChainConfig,
    retention: Retention,
    store: KvStore,
    pending: MemDb,
    since_flush: u64,
    headers: Vec<Header>,
    hashes: Vec<Hash>,
    keys: Vec<BlockKeys>,
    /// Indexed by checkpoint; `None` under vanilla.
    blooms: Vec<Option<Bloom>>,
}

impl CheckpointSource for Chain {
    fn checkpoint_root(&self, index: u64) -> Option<Hash> {
        let number = index.checked_mul(self.config.epoch.epoch_length)?;
        self.headers.get(number as usize).map(|h| h.state_root)
    }

    fn checkpoint_bloom(&self, index: u64) -> Option<&Bloom> {
        self.blooms.get(index as usize)?.as_ref()
    }
}

impl Chain {
    /// Starts a chain whose genesis state funds `alloc` with nonce 0.
    pub fn new(config: ChainConfig, alloc: &[(Address, u128)]) -> Result<Chain, BlockError> {
        config.validate().map_err(BlockError::Config)?;
        let mut store = KvStore::new();
        let mut root = EMPTY_ROOT;
        for (addr, balance) in alloc {
            root = write_account(&mut store, &root, addr, &Account::with_balance(*balance))
                .map_err(integrity)?;
        }
        let bloom = match config.engine {
            Engine::Vanilla => None,
            Engine::Ethanos => Some(bloom_of(&store, &root, config.epoch.bloom)?),
        };
        let header = Header {
            number: 0,
            prev_hash: Hash::ZERO,
            tx_root: tx_root(&[]),
            state_root: root,
            bloom_digest: bloom.as_ref().map_or(Hash::ZERO, Bloom::digest),
            miner: Address::ZERO,
        };
        let mut chain = Chain {
            config,
            retention: Retention::Archive,
            store,
            pending: MemDb::new(),
            since_flush: 0,
            headers: Vec::new(),
            hashes: Vec::new(),
            keys: Vec::new(),
            blooms: Vec::new(),
        };
        chain.append(header, &[], bloom);
        Ok(chain)
    }

    /// Rebuilds a replica from downloaded data: a linked header chain from
    /// genesis up to the pivot, every checkpoint bloom at or before it, and a
    /// store already holding the pivot's state trie and (under ethanos) the
    /// checkpoint trie the next block will consult.
    pub fn from_synced(
        config: ChainConfig,
        store: KvStore,
        headers: Vec<Header>,
        blooms: Vec<Option<Bloom>>,
    ) -> Result<Chain, BlockError> {
        config.validate().map_err(BlockError::Config)?;
        let Some(pivot) = headers.last().map(|h| h.number) else {
            return Err(BlockError::Number {
                expected: 0,
                got: u64::MAX,
            });
        };
        let mut hashes = Vec::with_capacity(headers.len());
        for (i, h) in headers.iter().enumerate() {
            if h.number != i as u64 {
                return Err(BlockError::Number {
                    expected: i as u64,
                    got: h.number,
                });
            }
            let prev = hashes.last().copied().unwrap_or(Hash::ZERO);
            if h.prev_hash != prev {
                return Err(BlockError::PrevHash);
            }
            hashes.push(h.hash());
        }
        let mut chain = Chain {
            keys: alloc::vec![BlockKeys::default(); headers.len()],
            config,
            retention: Retention::Archive,
            store,
            pending: MemDb::new(),
            since_flush: 0,
            headers,
            hashes,
            blooms: Vec::new(),
        };
        let checkpoints = pivot / chain.config.epoch.epoch_length + 1;
        for i in 0..checkpoints {
            let digest = chain.headers[(i * chain.config.epoch.epoch_length) as usize].bloom_digest;
            let bloom = blooms.get(i as usize).cloned().flatten();
            match (chain.config.engine, &bloom) {
                (Engine::Vanilla, None) if digest == Hash::ZERO => {}
                (Engine::Ethanos, Some(b)) if b.digest() == digest => {}
                _ => return Err(BlockError::Bloom),
            }
            if let Some(b) = &bloom {
                chain.store.put(DataCategory::Headers, b.encode());
            }
            chain.blooms.push(bloom);
        }
        for h in &chain.headers {
            chain.store.put(DataCategory::Headers, h.encode());
        }
        for root in chain.required_roots(pivot + 1) {
            trie::walk(&chain.store, &root).map_err(BlockError::Integrity)?;
        }
        Ok(chain)
    }

    /// State roots that building block `number` reads from.
    pub fn required_roots(&self, number: u64) -> Vec<Hash> {
        required_roots(&self.config, &self.headers, number)
    }

    pub fn with_retention(mut self, retention: Retention) -> Chain {
        self.flush();
        self.retention = retention;
        self
    }

    pub fn retention(&self) -> Retention {
        self.retention
    }

    /// Persists the tries the next block reads and drops every other
    /// unflushed node.
    pub fn flush(&mut self) {
        let pending = core::mem::take(&mut self.pending);
        let mut roots = self.required_roots(self.head() + 1);
        roots.push(self.head_header().state_root);
        for root in roots {
            trie::commit(&mut self.store, &root, &pending)
                .expect("unflushed tries close over the store");
        }
        self.since_flush = 0;
    }

    /// Nodes executed but not yet flushed.
    pub fn pending_nodes(&self) -> usize {
        self.pending.len()
    }

    fn db(&self) -> Layered<'_> {
        Layered {
            store: &self.store,
            pending: &self.pending,
        }
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn store(&self) -> &KvStore {
        &self.store
    }

    pub fn head(&self) -> u64 {
        self.headers.len() as u64 - 1
    }

    pub fn head_header(&self) -> &Header {
        self.headers.last().expect("genesis always present")
    }

    pub fn header(&self, number: u64) -> Option<&Header> {
        self.headers.get(number as usize)
    }

    pub fn headers(&self) -> &[Header] {
        &self.headers
    }

    pub fn block_hash(&self, number: u64) -> Option<Hash> {
        self.hashes.get(number as usize).copied()
    }

    pub fn block_keys(&self, number: u64) -> Option<BlockKeys> {
        self.keys.get(number as usize).copied()
    }

    pub fn body_bytes(&self, number: u64) -> Option<&[u8]> {
        self.store.get(&self.keys.get(number as usize)?.body?)
    }

    pub fn receipts_bytes(&self, number: u64) -> Option<&[u8]> {
        self.store.get(&self.keys.get(number as usize)?.receipts?)
    }

    pub fn block(&self, number: u64) -> Option<Block> {
        let txs = decode_body(self.body_bytes(number)?).ok()?;
        Some(Block {
            header: *self.header(number)?,
            txs,
        })
    }

    /// Number of checkpoints so far, counting genesis.
    pub fn checkpoint_count(&self) -> u64 {
        self.head() / self.config.epoch.epoch_length + 1
    }

    pub fn checkpoint_bloom_bytes(&self, index: u64) -> Option<Vec<u8>> {
        self.checkpoint_bloom(index).map(Bloom::encode)
    }

    /// Working trie a block starts from.
    fn base_root(&self, number: u64) -> Hash {
        let parent = self.headers[(number - 1) as usize].state_root;
        match self.config.engine {
            Engine::Vanilla => parent,
            Engine::Ethanos if self.config.is_checkpoint(number - 1) => EMPTY_ROOT,
            Engine::Ethanos => parent,
        }
    }

    pub fn resolver_for(&self, number: u64) -> AnyResolver {
        match self.config.engine {
            Engine::Vanilla => AnyResolver::Vanilla(VanillaResolver),
            Engine::Ethanos => AnyResolver::Ethanos(EthanosResolver {
                checkpoint_root: self
                    .checkpoint_root(self.config.latest_checkpoint_for(number))
                    .unwrap_or(EMPTY_ROOT),
                rule: self.config.respawn_rule(),
            }),
        }
    }

    /// Live state of `addr` as the next block would resolve it.
    pub fn account(&self, addr: &Address) -> Result<Option<Account>, TxError> {
        let next = self.head() + 1;
        self.resolver_for(next)
            .resolve(&self.db(), &self.base_root(next), addr)
    }

    /// Validates `tx` against the state the next block starts from.
    /// Restores are also checked against the checkpoints, as in execution.
    pub fn validate(&self, tx: &Transaction) -> Result<Account, TxError> {
        let next = self.head() + 1;
        let state = StateRef {
            root: self.base_root(next),
            block_number: next,
        };
        let db = self.db();
        let resolver = self.resolver_for(next);
        let sender = validate_transaction(&db, &state, &resolver, tx)?;
        if tx.is_restore() {
            match self.config.engine {
                Engine::Vanilla => return Err(TxError::RestoreUnsupported),
                Engine::Ethanos => {
                    let latest = self.config.latest_checkpoint_for(next);
                    let miner = self.config.miner_for(next);
                    let mut scratch = Overlay::new(&db);
                    apply_restore(&mut scratch, &state, &resolver, self, latest, tx, &miner)?;
                }
            }
        }
        Ok(sender)
    }

    /// The state `addr` would hold after restoring every swept incarnation.
    /// Requires full checkpoint history.
    pub fn effective_account(&self, addr: &Address) -> Result<Option<Account>, RestoreError> {
        let live = self.account(addr).map_err(|_| RestoreError::CorruptState)?;
        match self.config.engine {
            Engine::Vanilla => Ok(live),
            Engine::Ethanos => effective_account(
                &self.db(),
                self,
                addr,
                self.config.latest_checkpoint_for(self.head() + 1),
                live,
            ),
        }
    }

    /// Builds a restore bundle valid for the next block. Requires full
    /// checkpoint history.
    pub fn build_restore(&self, target: &Address) -> Result<RestoreBundle, RestoreError> {
        build_restore(
            &self.db(),
            self,
            target,
            self.config.latest_checkpoint_for(self.head() + 1),
        )
    }

    /// Every account bound in checkpoint `index`'s trie.
    pub fn checkpoint_accounts(&self, index: u64) -> Result<Vec<(Hash, Account)>, TrieError> {
        let root = self.checkpoint_root(index).ok_or(TrieError::Absent)?;
        trie::leaves(&self.db(), &root)?
            .into_iter()
            .map(|(p, v)| {
                let a = Account::decode(&v).map_err(|source| TrieError::Corrupt {
                    hash: root,
                    source,
                })?;
                Ok((p.to_hash(), a))
            })
            .collect()
    }

    fn execute(&self, number: u64, txs: &[Transaction], strict: bool) -> Result<Executed, BlockError> {
        let miner = self.config.miner_for(number);
        let resolver = self.resolver_for(number);
        let latest = self.config.latest_checkpoint_for(number);
        let cap = self.config.epoch.max_txs_per_acct_per_block;
        let db = self.db();
        let mut overlay = Overlay::new(&db);
        let mut root = self.base_root(number);
        let mut sent: BTreeMap<Address, u64> = BTreeMap::new();
        let mut included = Vec::with_capacity(txs.len());
        let mut excluded = Vec::new();
        for (index, tx) in txs.iter().enumerate() {
            let state = StateRef {
                root,
                block_number: number,
            };
            let count = sent.entry(tx.from).or_insert(0);
            let result = if *count >= cap {
                Err(TxError::PerBlockCap)
            } else if tx.is_restore() {
                match self.config.engine {
                    Engine::Vanilla => Err(TxError::RestoreUnsupported),
                    Engine::Ethanos => {
                        apply_restore(&mut overlay, &state, &resolver, self, latest, tx, &miner)
                    }
                }
            } else {
                apply_transaction(&mut overlay, &state, &resolver, tx, &miner)
            };
            match result {
                Ok(r) => {
                    root = r;
                    *count += 1;
                    included.push(tx.clone());
                }
                Err(TxError::Trie(e)) => return Err(BlockError::Integrity(e)),
                Err(reason) if strict => return Err(BlockError::InvalidTx { index, reason }),
                Err(reason) => excluded.push((index, reason)),
            }
        }
        let state = StateRef {
            root,
            block_number: number,
        };
        root = apply_block_reward(
            &mut overlay,
            &state,
            &resolver,
            &miner,
            self.config.epoch.block_reward,
        )
        .map_err(|e| match e {
            TxError::Trie(t) => BlockError::Integrity(t),
            other => BlockError::InvalidTx {
                index: txs.len(),
                reason: other,
            },
        })?;
        let bloom = match self.config.engine {
            Engine::Ethanos if self.config.is_checkpoint(number) => {
                Some(bloom_of(&overlay, &root, self.config.epoch.bloom)?)
            }
            _ => None,
        };
        Ok(Executed {
            tx_root: tx_root(&included),
            txs: included,
            excluded,
            state_root: root,
            bloom,
            dirty: overlay.into_dirty(),
        })
    }

    /// Builds and commits the next block from `pending`, leaving out
    /// transactions that fail validation.
    pub fn produce_block(&mut self, pending: &[Transaction]) -> Result<Produced, BlockError> {
        let number = self.head() + 1;
        let ex = self.execute(number, pending, false)?;
        let header = Header {
            number,
            prev_hash: self.hashes[self.hashes.len() - 1],
            tx_root: ex.tx_root,
            state_root: ex.state_root,
            bloom_digest: ex.bloom.as_ref().map_or(Hash::ZERO, Bloom::digest),
            miner: self.config.miner_for(number),
        };
        let block = Block {
            header,
            txs: ex.txs.clone(),
        };
        let excluded = ex.excluded.clone();
        self.commit(header, ex)?;
        Ok(Produced { block, excluded })
    }

    /// Re-executes `block` on top of the head and checks every commitment.
    pub fn verify_block(&self, block: &Block) -> Result<(), BlockError> {
        self.check(block).map(|_| ())
    }

    fn check(&self, block: &Block) -> Result<Executed, BlockError> {
        let h = &block.header;
        let expected = self.head() + 1;
        if h.number != expected {
            return Err(BlockError::Number {
                expected,
                got: h.number,
            });
        }
        if h.prev_hash != self.hashes[self.hashes.len() - 1] {
            return Err(BlockError::PrevHash);
        }
        if h.miner != self.config.miner_for(h.number) {
            return Err(BlockError::Miner);
        }
        if tx_root(&block.txs) != h.tx_root {
            return Err(BlockError::TxRoot);
        }
        let ex = self.execute(h.number, &block.txs, true)?;
        if ex.state_root != h.state_root {
            return Err(BlockError::StateRoot);
        }
        let digest = ex.bloom.as_ref().map_or(Hash::ZERO, Bloom::digest);
        if digest != h.bloom_digest {
            return Err(BlockError::Bloom);
        }
        Ok(ex)
    }

    /// Verifies `block` and appends it.
    pub fn import_block(&mut self, block: &Block) -> Result<(), BlockError> {
        let ex = self.check(block)?;
        self.commit(block.header, ex)
    }

    /// Stores the body and receipts of a block that is not replayed, after
    /// checking them against its header.
    pub fn attach_body(&mut self, number: u64, body: &[u8], receipts: &[u8]) -> Result<(), BlockError> {
        let header = *self.header(number).ok_or(BlockError::Number {
            expected: self.head(),
            got: number,
        })?;
        let txs = decode_body(body).map_err(BlockError::Body)?;
        if tx_root(&txs) != header.tx_root {
            return Err(BlockError::TxRoot);
        }
        if encode_receipts(&txs) != receipts {
            return Err(BlockError::Receipts);
        }
        self.keys[number as usize] = self.store_block_data(number, &txs);
        Ok(())
    }

    fn store_block_data(&mut self, number: u64, txs: &[Transaction]) -> BlockKeys {
        let body = self.store.put(DataCategory::Bodies, encode_body(txs));
        let receipts = self.store.put(DataCategory::Receipts, encode_receipts(txs));
        for (i, tx) in txs.iter().enumerate() {
            let mut entry = Vec::with_capacity(44);
            entry.put_hash(&tx.hash());
            entry.put_u64(number);
            entry.put_u32(i as u32);
            self.store.put(DataCategory::TxIndex, entry);
        }
        BlockKeys {
            body: Some(body),
            receipts: Some(receipts),
        }
    }

    fn commit(&mut self, header: Header, ex: Executed) -> Result<(), BlockError> {
        match self.retention {
            Retention::Archive => {
                trie::commit(&mut self.store, &ex.state_root, &ex.dirty)
                    .map_err(BlockError::Integrity)?;
            }
            Retention::Pruned => {
                let pending = core::mem::take(&mut self.pending);
                let mut layer = Overlay::with_dirty(&self.store, pending);
                let result = trie::commit(&mut layer, &ex.state_root, &ex.dirty);
                self.pending = layer.into_dirty();
                result.map_err(BlockError::Integrity)?;
            }
        }
        self.append(header, &ex.txs, ex.bloom);
        if self.retention == Retention::Pruned {
            self.since_flush += 1;
            if self.since_flush >= FLUSH_INTERVAL {
                self.flush();
            }
        }
        Ok(())
    }

    fn append(&mut self, header: Header, txs: &[Transaction], bloom: Option<Bloom>) {
        let hash = self.store.put(DataCategory::Headers, header.encode());
        let keys = self.store_block_data(header.number, txs);
        if self.config.is_checkpoint(header.number) {
            if let Some(b) = &bloom {
                self.store.put(DataCategory::Headers, b.encode());
            }
            self.blooms.push(bloom);
        }
        self.headers.push(header);
        self.hashes.push(hash);
        self.keys.push(keys);
    }
}

fn integrity(e: TxError) -> BlockError {
    match e {
        TxError::Trie(t) => BlockError::Integrity(t),
        _ => BlockError::Integrity(TrieError::Invariant(Hash::ZERO)),
    }
}

/// Bloom over every account bound under `root`.
fn bloom_of<D: NodeDb + ?Sized>(db: &D, root: &Hash, params: BloomParams) -> Result<Bloom, BlockError> {
    let mut bloom = Bloom::new(params);
    for (path, _) in trie::leaves(db, root).map_err(BlockError::Integrity)? {
        bloom.insert_key(&path.to_hash());
    }
    Ok(bloom)
}
