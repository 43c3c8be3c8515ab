//! Bootstrapping a client replica from a host over an in-process wire.
//!
//! The host runs on its own thread and answers request frames; the client
//! verifies every record before using it: headers against the hash chain
//! from its locally computed genesis, trie nodes against the hashes it asked
//! for, blooms against header digests, bodies and receipts against the
//! header's transaction root. Frames are records of the persistence format,
//! and the bytes of every response record are tallied per category.
//!
//! Full archive sync replays every block into an archive replica. Fast and
//! compact sync download the tries the block after the pivot reads, replay
//! the tail into a pruned replica, and differ only in which pre-pivot bodies
//! and receipts they fetch.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Instant;

use ethanos_core::bloom::Bloom;
use ethanos_core::chain::{
    decode_body, required_roots, Block, BlockError, Chain, ChainConfig, Engine, Header, Retention,
};
use ethanos_core::codec::{DecodeError, Put, Reader};
use ethanos_core::hash::{keccak, Address, Hash};
use ethanos_core::storage::{
    decode_records, encode_record, record_len, DataCategory, KvStore, Record, StorageStats,
};
use ethanos_core::trie::Node;
use serde::{Deserialize, Serialize};

/// Distance of the standard pivot from the head.
pub const PIVOT_DISTANCE: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncMode {
    FullArchive,
    Fast,
    Compact,
}

impl SyncMode {
    pub const ALL: [SyncMode; 3] = [SyncMode::FullArchive, SyncMode::Fast, SyncMode::Compact];

    pub fn name(self) -> &'static str {
        match self {
            SyncMode::FullArchive => "full-archive",
            SyncMode::Fast => "fast",
            SyncMode::Compact => "compact",
        }
    }
}

impl fmt::Display for SyncMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyncMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SyncMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown sync mode {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PivotPolicy {
    /// The last checkpoint at or below the head.
    LastCheckpoint,
    /// `head - d`, clamped to genesis.
    HeadMinus(u64),
}

impl Default for PivotPolicy {
    fn default() -> Self {
        PivotPolicy::HeadMinus(PIVOT_DISTANCE)
    }
}

impl fmt::Display for PivotPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PivotPolicy::LastCheckpoint => f.write_str("last-checkpoint"),
            PivotPolicy::HeadMinus(d) => write!(f, "head-minus-{d}"),
        }
    }
}

impl FromStr for PivotPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "last-checkpoint" {
            return Ok(PivotPolicy::LastCheckpoint);
        }
        s.strip_prefix("head-minus-")
            .and_then(|d| d.parse().ok())
            .map(PivotPolicy::HeadMinus)
            .ok_or_else(|| format!("unknown pivot policy {s:?}"))
    }
}

pub fn select_pivot(config: &ChainConfig, head: u64, policy: PivotPolicy) -> u64 {
    match policy {
        PivotPolicy::LastCheckpoint => head / config.epoch.epoch_length * config.epoch.epoch_length,
        PivotPolicy::HeadMinus(d) => head.saturating_sub(d),
    }
}

/// What a client trusts before syncing: the chain rules and genesis funds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Genesis {
    pub config: ChainConfig,
    pub alloc: Vec<(Address, u128)>,
}

impl Genesis {
    pub fn build(&self) -> Result<Chain, BlockError> {
        Chain::new(self.config.clone(), &self.alloc)
    }
}

/// Flips one bit of the `response`-th response frame at `byte` (mod length).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fault {
    pub response: u64,
    pub byte: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyncOptions {
    /// Items per headers, bodies, receipts or trie-node request.
    pub batch_size: usize,
    pub pivot: PivotPolicy,
    pub fault: Option<Fault>,
}

impl Default for SyncOptions {
    fn default() -> Self {
        SyncOptions {
            batch_size: 256,
            pivot: PivotPolicy::default(),
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SyncRequest {
    HeadersRange { from: u64, to: u64 },
    Bodies(Vec<u64>),
    Receipts(Vec<u64>),
    TrieNodes(Vec<Hash>),
    CheckpointState(u64),
}

impl SyncRequest {
    /// One `Other` record keyed by the request tag.
    pub fn encode(&self) -> Vec<u8> {
        let mut params = Vec::new();
        let tag = match self {
            SyncRequest::HeadersRange { from, to } => {
                params.put_u64(*from);
                params.put_u64(*to);
                0
            }
            SyncRequest::Bodies(ns) | SyncRequest::Receipts(ns) => {
                params.put_u32(ns.len() as u32);
                for n in ns {
                    params.put_u64(*n);
                }
                if matches!(self, SyncRequest::Bodies(_)) {
                    1
                } else {
                    2
                }
            }
            SyncRequest::TrieNodes(hs) => {
                params.put_u32(hs.len() as u32);
                for h in hs {
                    params.put_hash(h);
                }
                3
            }
            SyncRequest::CheckpointState(i) => {
                params.put_u64(*i);
                4
            }
        };
        let mut out = Vec::new();
        encode_record(&mut out, DataCategory::Other, &[tag], &params);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<SyncRequest, DecodeError> {
        let records = decode_records(frame)?;
        let [Record {
            category,
            key,
            value,
        }] = records.as_slice()
        else {
            return Err(DecodeError::Invalid("request frame holds one record"));
        };
        if *category != DataCategory::Other as u8 || key.len() != 1 {
            return Err(DecodeError::Invalid("request record"));
        }
        let mut r = Reader::new(value);
        let numbers = |r: &mut Reader| -> Result<Vec<u64>, DecodeError> {
            (0..r.u32()?).map(|_| r.u64()).collect()
        };
        let req = match key[0] {
            0 => SyncRequest::HeadersRange {
                from: r.u64()?,
                to: r.u64()?,
            },
            1 => SyncRequest::Bodies(numbers(&mut r)?),
            2 => SyncRequest::Receipts(numbers(&mut r)?),
            3 => SyncRequest::TrieNodes((0..r.u32()?).map(|_| r.hash()).collect::<Result<_, _>>()?),
            4 => SyncRequest::CheckpointState(r.u64()?),
            _ => return Err(DecodeError::Invalid("request tag")),
        };
        r.finish()?;
        Ok(req)
    }
}

/// Builds the response frame: one record per item the host holds, in
/// request order. Items the host lacks are omitted.
pub fn respond(host: &Chain, req: &SyncRequest) -> Vec<u8> {
    let mut out = Vec::new();
    let mut content = |category, value: &[u8]| {
        encode_record(&mut out, category, keccak(value).as_bytes(), value);
    };
    match req {
        SyncRequest::HeadersRange { from, to } => {
            for n in *from..=*to {
                match host.header(n) {
                    Some(h) => content(DataCategory::Headers, &h.encode()),
                    None => break,
                }
            }
        }
        SyncRequest::Bodies(ns) => {
            for n in ns {
                if let Some(b) = host.body_bytes(*n) {
                    content(DataCategory::Bodies, b);
                }
            }
        }
        SyncRequest::Receipts(ns) => {
            for n in ns {
                if let Some(b) = host.receipts_bytes(*n) {
                    content(DataCategory::Receipts, b);
                }
            }
        }
        SyncRequest::TrieNodes(hs) => {
            for h in hs {
                if host.store().category_of(h) == Some(DataCategory::TrieNodes) {
                    if let Some(v) = host.store().get(h) {
                        content(DataCategory::TrieNodes, v);
                    }
                }
            }
        }
        SyncRequest::CheckpointState(i) => {
            if let Some(b) = host.checkpoint_bloom_bytes(*i) {
                content(DataCategory::Headers, &b);
            }
        }
    }
    out
}

fn serve(host: &Chain, requests: Receiver<Vec<u8>>, responses: Sender<Vec<u8>>, fault: Option<Fault>) {
    for (n, frame) in requests.into_iter().enumerate() {
        let mut resp = match SyncRequest::decode(&frame) {
            Ok(req) => respond(host, &req),
            Err(_) => Vec::new(),
        };
        if let Some(f) = fault.filter(|f| f.response == n as u64) {
            if resp.is_empty() {
                resp.push(0xff);
            } else {
                let i = f.byte % resp.len();
                resp[i] ^= 0x01;
            }
        }
        if responses.send(resp).is_err() {
            break;
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SyncError {
    #[error("host hung up")]
    Disconnected,
    #[error("malformed frame: {0}")]
    Frame(DecodeError),
    #[error("response carries {got} records where {expected} were requested")]
    Count { expected: usize, got: usize },
    #[error("record has category {got}, expected {expected}")]
    Category { expected: DataCategory, got: u8 },
    #[error("record key does not match its content")]
    NotContentAddressed,
    #[error("header {0} does not extend the verified chain")]
    Header(u64),
    #[error("trie node {0} is missing or corrupt")]
    TrieNode(Hash),
    #[error("bloom of checkpoint {0} does not match its header")]
    Bloom(u64),
    #[error("block {number}: {source}")]
    Block { number: u64, source: BlockError },
    #[error("local genesis: {0}")]
    Genesis(BlockError),
    #[error("synced head differs from the host's")]
    RootMismatch,
}

/// Client end of the wire with byte accounting.
struct Wire {
    requests: Sender<Vec<u8>>,
    responses: Receiver<Vec<u8>>,
    stats: StorageStats,
    calls: u64,
}

impl Wire {
    fn call(&mut self, req: &SyncRequest) -> Result<Vec<Record>, SyncError> {
        let frame = req.encode();
        self.stats.add(DataCategory::Other, frame.len() as u64);
        self.requests.send(frame).map_err(|_| SyncError::Disconnected)?;
        let resp = self.responses.recv().map_err(|_| SyncError::Disconnected)?;
        self.calls += 1;
        let records = decode_records(&resp).map_err(SyncError::Frame)?;
        for r in &records {
            let category = DataCategory::from_u8(r.category).ok_or(SyncError::Category {
                expected: DataCategory::Other,
                got: r.category,
            })?;
            self.stats
                .add(category, record_len(r.key.len(), r.value.len()) as u64);
        }
        Ok(records)
    }

    /// Fetches `expected` content-addressed records of one category.
    fn fetch(
        &mut self,
        req: &SyncRequest,
        category: DataCategory,
        expected: usize,
    ) -> Result<Vec<Vec<u8>>, SyncError> {
        let records = self.call(req)?;
        if records.len() != expected {
            return Err(SyncError::Count {
                expected,
                got: records.len(),
            });
        }
        records
            .into_iter()
            .map(|r| {
                if r.category != category as u8 {
                    return Err(SyncError::Category {
                        expected: category,
                        got: r.category,
                    });
                }
                if r.key != keccak(&r.value).as_bytes() {
                    return Err(SyncError::NotContentAddressed);
                }
                Ok(r.value)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub mode: SyncMode,
    pub engine: Engine,
    pub pivot_policy: PivotPolicy,
    pub pivot: u64,
    pub head: u64,
    /// Client store after sync; the size compared across modes.
    pub stored: StorageStats,
    /// Record bytes received per category; request frames count as `other`.
    pub wire: StorageStats,
    pub requests: u64,
    pub trie_nodes_downloaded: u64,
    pub download_ms: f64,
    pub replay_ms: f64,
    pub final_root: Hash,
    pub host_root: Hash,
    pub verified: bool,
}

impl SyncReport {
    pub fn stored_bytes(&self) -> u64 {
        self.stored.total()
    }
}

/// Syncs a fresh client from `host` up to the host's head.
pub fn sync(
    host: &Chain,
    genesis: &Genesis,
    mode: SyncMode,
    opts: &SyncOptions,
) -> Result<(Chain, SyncReport), SyncError> {
    let (req_tx, req_rx) = channel();
    let (resp_tx, resp_rx) = channel();
    std::thread::scope(|s| {
        s.spawn(|| serve(host, req_rx, resp_tx, opts.fault));
        let mut wire = Wire {
            requests: req_tx,
            responses: resp_rx,
            stats: StorageStats::default(),
            calls: 0,
        };
        let result = Client {
            wire: &mut wire,
            genesis,
            opts,
            head: host.head(),
        }
        .run(mode);
        drop(wire);
        let (client, mut report) = result?;
        report.host_root = host.head_header().state_root;
        report.verified = client.head_header() == host.head_header();
        if !report.verified {
            return Err(SyncError::RootMismatch);
        }
        Ok((client, report))
    })
}

pub fn full_archive_sync(
    host: &Chain,
    genesis: &Genesis,
    opts: &SyncOptions,
) -> Result<(Chain, SyncReport), SyncError> {
    sync(host, genesis, SyncMode::FullArchive, opts)
}

pub fn fast_sync(
    host: &Chain,
    genesis: &Genesis,
    opts: &SyncOptions,
) -> Result<(Chain, SyncReport), SyncError> {
    sync(host, genesis, SyncMode::Fast, opts)
}

pub fn compact_sync(
    host: &Chain,
    genesis: &Genesis,
    opts: &SyncOptions,
) -> Result<(Chain, SyncReport), SyncError> {
    sync(host, genesis, SyncMode::Compact, opts)
}

struct Client<'a> {
    wire: &'a mut Wire,
    genesis: &'a Genesis,
    opts: &'a SyncOptions,
    head: u64,
}

impl Client<'_> {
    fn run(mut self, mode: SyncMode) -> Result<(Chain, SyncReport), SyncError> {
        let started = Instant::now();
        let local = self.genesis.build().map_err(SyncError::Genesis)?;
        let headers = self.headers(local.block_hash(0).expect("genesis"))?;
        let config = &self.genesis.config;
        let pivot = match mode {
            SyncMode::FullArchive => 0,
            _ => select_pivot(config, self.head, self.opts.pivot),
        };

        let mut trie_nodes = 0;
        let mut client = match mode {
            SyncMode::FullArchive => local,
            SyncMode::Fast | SyncMode::Compact => {
                let mut store = KvStore::new();
                let roots = required_roots(config, &headers, pivot + 1);
                trie_nodes = self.tries(&mut store, roots)?;
                let blooms = self.blooms(config, &headers, pivot)?;
                let mut chain = Chain::from_synced(
                    config.clone(),
                    store,
                    headers[..=pivot as usize].to_vec(),
                    blooms,
                )
                .map_err(|source| SyncError::Block {
                    number: pivot,
                    source,
                })?
                .with_retention(Retention::Pruned);
                let attached: Vec<u64> = match mode {
                    SyncMode::Fast => (0..=pivot).collect(),
                    _ => vec![pivot],
                };
                let bodies = self.block_data(DataCategory::Bodies, &attached)?;
                let receipts = self.block_data(DataCategory::Receipts, &attached)?;
                for ((n, body), receipts) in attached.iter().zip(&bodies).zip(&receipts) {
                    chain
                        .attach_body(*n, body, receipts)
                        .map_err(|source| SyncError::Block { number: *n, source })?;
                }
                chain
            }
        };

        let tail: Vec<u64> = (pivot + 1..=self.head).collect();
        let bodies = self.block_data(DataCategory::Bodies, &tail)?;
        let download_ms = started.elapsed().as_secs_f64() * 1e3;

        let replay = Instant::now();
        for (n, body) in tail.iter().zip(&bodies) {
            let at = |source| SyncError::Block { number: *n, source };
            let txs = decode_body(body).map_err(|e| at(BlockError::Body(e)))?;
            let block = Block {
                header: headers[*n as usize],
                txs,
            };
            client.import_block(&block).map_err(at)?;
        }
        client.flush();
        let replay_ms = replay.elapsed().as_secs_f64() * 1e3;

        let report = SyncReport {
            mode,
            engine: config.engine,
            pivot_policy: self.opts.pivot,
            pivot,
            head: self.head,
            stored: client.store().stats(),
            wire: self.wire.stats,
            requests: self.wire.calls,
            trie_nodes_downloaded: trie_nodes,
            download_ms,
            replay_ms,
            final_root: client.head_header().state_root,
            host_root: Hash::ZERO,
            verified: false,
        };
        Ok((client, report))
    }

    /// Headers `0..=head`, linked from the trusted genesis hash.
    fn headers(&mut self, genesis: Hash) -> Result<Vec<Header>, SyncError> {
        let mut out: Vec<Header> = Vec::with_capacity(self.head as usize + 1);
        let mut prev = Hash::ZERO;
        let batch = self.opts.batch_size.max(1) as u64;
        let mut from = 0;
        while from <= self.head {
            let to = (from + batch - 1).min(self.head);
            let req = SyncRequest::HeadersRange { from, to };
            let count = (to - from + 1) as usize;
            from = to + 1;
            for bytes in self.wire.fetch(&req, DataCategory::Headers, count)? {
                let n = out.len() as u64;
                let h = Header::decode(&bytes).map_err(|_| SyncError::Header(n))?;
                let hash = h.hash();
                let linked = if n == 0 {
                    hash == genesis
                } else {
                    h.prev_hash == prev
                };
                if h.number != n || !linked {
                    return Err(SyncError::Header(n));
                }
                prev = hash;
                out.push(h);
            }
        }
        Ok(out)
    }

    fn block_data(&mut self, category: DataCategory, numbers: &[u64]) -> Result<Vec<Vec<u8>>, SyncError> {
        let mut out = Vec::with_capacity(numbers.len());
        for chunk in numbers.chunks(self.opts.batch_size.max(1)) {
            let req = match category {
                DataCategory::Bodies => SyncRequest::Bodies(chunk.to_vec()),
                _ => SyncRequest::Receipts(chunk.to_vec()),
            };
            out.extend(self.wire.fetch(&req, category, chunk.len())?);
        }
        Ok(out)
    }

    /// Breadth-first download of every node under `roots` missing from `store`.
    fn tries(&mut self, store: &mut KvStore, roots: Vec<Hash>) -> Result<u64, SyncError> {
        let mut queue: VecDeque<Hash> = VecDeque::new();
        let mut queued: BTreeSet<Hash> = BTreeSet::new();
        for r in roots {
            if queued.insert(r) {
                queue.push_back(r);
            }
        }
        let mut fetched = 0;
        while !queue.is_empty() {
            let n = queue.len().min(self.opts.batch_size.max(1));
            let batch: Vec<Hash> = queue.drain(..n).collect();
            let req = SyncRequest::TrieNodes(batch.clone());
            let nodes = self
                .wire
                .fetch(&req, DataCategory::TrieNodes, batch.len())
                .map_err(|e| match e {
                    SyncError::Count { .. } | SyncError::NotContentAddressed => {
                        SyncError::TrieNode(batch[0])
                    }
                    other => other,
                })?;
            for (h, bytes) in batch.iter().zip(nodes) {
                if keccak(&bytes) != *h {
                    return Err(SyncError::TrieNode(*h));
                }
                let node = Node::decode(&bytes).map_err(|_| SyncError::TrieNode(*h))?;
                for c in node.children() {
                    if !store.contains(&c) && queued.insert(c) {
                        queue.push_back(c);
                    }
                }
                store.put(DataCategory::TrieNodes, bytes);
                fetched += 1;
            }
        }
        Ok(fetched)
    }

    /// Checkpoint blooms up to the pivot, checked against header digests.
    fn blooms(
        &mut self,
        config: &ChainConfig,
        headers: &[Header],
        pivot: u64,
    ) -> Result<Vec<Option<Bloom>>, SyncError> {
        let eps = config.epoch.epoch_length;
        let count = pivot / eps + 1;
        if config.engine == Engine::Vanilla {
            return Ok(vec![None; count as usize]);
        }
        let mut out = Vec::with_capacity(count as usize);
        for i in 0..count {
            let req = SyncRequest::CheckpointState(i);
            let bytes = self
                .wire
                .fetch(&req, DataCategory::Headers, 1)?
                .pop()
                .expect("fetch returns the requested count");
            let bloom = Bloom::decode(&bytes).map_err(|_| SyncError::Bloom(i))?;
            if bloom.digest() != headers[(i * eps) as usize].bloom_digest {
                return Err(SyncError::Bloom(i));
            }
            out.push(Some(bloom));
        }
        Ok(out)
    }
}
