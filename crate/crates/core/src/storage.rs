//! Content-addressed key-value store with per-category byte accounting.
//!
//! Every entry is keyed by the Keccak-256 of its value. The store keeps a
//! running tally of `key.len() + value.len()` per [`DataCategory`], which is
//! what the sync experiments report as "storage size".

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::codec::{DecodeError, Put, Reader};
use crate::hash::{keccak, Hash, HASH_LEN};

/// Kind of data an entry belongs to. Every write names exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[repr(u8)]
pub enum DataCategory {
    Headers = 0,
    Bodies = 1,
    Receipts = 2,
    TrieNodes = 3,
    TxIndex = 4,
    Other = 5,
}

impl DataCategory {
    pub const ALL: [DataCategory; 6] = [
        DataCategory::Headers,
        DataCategory::Bodies,
        DataCategory::Receipts,
        DataCategory::TrieNodes,
        DataCategory::TxIndex,
        DataCategory::Other,
    ];

    pub fn from_u8(v: u8) -> Option<DataCategory> {
        DataCategory::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DataCategory::Headers => "headers",
            DataCategory::Bodies => "bodies",
            DataCategory::Receipts => "receipts",
            DataCategory::TrieNodes => "trie_nodes",
            DataCategory::TxIndex => "tx_index",
            DataCategory::Other => "other",
        }
    }
}

impl fmt::Display for DataCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Byte counts per category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StorageStats {
    pub headers: u64,
    pub bodies: u64,
    pub receipts: u64,
    pub trie_nodes: u64,
    pub tx_index: u64,
    pub other: u64,
}

impl StorageStats {
    pub fn get(&self, category: DataCategory) -> u64 {
        match category {
            DataCategory::Headers => self.headers,
            DataCategory::Bodies => self.bodies,
            DataCategory::Receipts => self.receipts,
            DataCategory::TrieNodes => self.trie_nodes,
            DataCategory::TxIndex => self.tx_index,
            DataCategory::Other => self.other,
        }
    }

    pub fn get_mut(&mut self, category: DataCategory) -> &mut u64 {
        match category {
            DataCategory::Headers => &mut self.headers,
            DataCategory::Bodies => &mut self.bodies,
            DataCategory::Receipts => &mut self.receipts,
            DataCategory::TrieNodes => &mut self.trie_nodes,
            DataCategory::TxIndex => &mut self.tx_index,
            DataCategory::Other => &mut self.other,
        }
    }

    pub fn total(&self) -> u64 {
        DataCategory::ALL.iter().map(|c| self.get(*c)).sum()
    }

    pub fn add(&mut self, category: DataCategory, bytes: u64) {
        *self.get_mut(category) += bytes;
    }
}

/// Read access to content-addressed trie nodes.
pub trait NodeDb {
    fn node(&self, key: &Hash) -> Option<&[u8]>;
}

/// Write access: inserting a node returns its content key.
pub trait NodeDbMut: NodeDb {
    fn insert_node(&mut self, encoded: Vec<u8>) -> Hash;
}

impl<T: NodeDb + ?Sized> NodeDb for &T {
    fn node(&self, key: &Hash) -> Option<&[u8]> {
        (**self).node(key)
    }
}

impl<T: NodeDb + ?Sized> NodeDb for &mut T {
    fn node(&self, key: &Hash) -> Option<&[u8]> {
        (**self).node(key)
    }
}

impl<T: NodeDbMut + ?Sized> NodeDbMut for &mut T {
    fn insert_node(&mut self, encoded: Vec<u8>) -> Hash {
        (**self).insert_node(encoded)
    }
}

/// Plain in-memory node map without accounting.
#[derive(Clone, Debug, Default)]
pub struct MemDb {
    nodes: BTreeMap<Hash, Vec<u8>>,
}

impl MemDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, key: &Hash) -> bool {
        self.nodes.contains_key(key)
    }
}

impl NodeDb for MemDb {
    fn node(&self, key: &Hash) -> Option<&[u8]> {
        self.nodes.get(key).map(Vec::as_slice)
    }
}

impl NodeDbMut for MemDb {
    fn insert_node(&mut self, encoded: Vec<u8>) -> Hash {
        let key = keccak(&encoded);
        self.nodes.entry(key).or_insert(encoded);
        key
    }
}

/// Uncommitted writes layered over a read-only node source.
///
/// Block execution writes every intermediate node here; only the nodes
/// reachable from the post-block root are committed afterwards (see
/// [`crate::trie::commit`]). Dropping the overlay discards everything.
pub struct Overlay<'a, B: NodeDb + ?Sized = KvStore> {
    base: &'a B,
    dirty: MemDb,
}

impl<'a, B: NodeDb + ?Sized> Overlay<'a, B> {
    pub fn new(base: &'a B) -> Self {
        Self::with_dirty(base, MemDb::new())
    }

    /// Resumes an overlay whose earlier writes are `dirty`.
    pub fn with_dirty(base: &'a B, dirty: MemDb) -> Self {
        Overlay { base, dirty }
    }

    pub fn base(&self) -> &'a B {
        self.base
    }

    pub fn into_dirty(self) -> MemDb {
        self.dirty
    }
}

impl<B: NodeDb + ?Sized> NodeDb for Overlay<'_, B> {
    fn node(&self, key: &Hash) -> Option<&[u8]> {
        self.dirty.node(key).or_else(|| self.base.node(key))
    }
}

impl<B: NodeDb + ?Sized> NodeDbMut for Overlay<'_, B> {
    fn insert_node(&mut self, encoded: Vec<u8>) -> Hash {
        self.dirty.insert_node(encoded)
    }
}

#[derive(Clone, Debug)]
struct Entry {
    category: DataCategory,
    value: Vec<u8>,
}

/// The content-addressed database backing a node.
#[derive(Clone, Debug, Default)]
pub struct KvStore {
    entries: BTreeMap<Hash, Entry>,
    stats: StorageStats,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LoadError {
    #[error("malformed record stream: {0}")]
    Decode(#[from] DecodeError),
    #[error("unknown category byte {0}")]
    Category(u8),
    #[error("record key {0} is not the hash of its value")]
    NotContentAddressed(Hash),
}

impl KvStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `value` under its hash. Re-putting an existing value is a no-op
    /// for accounting.
    pub fn put(&mut self, category: DataCategory, value: Vec<u8>) -> Hash {
        let key = keccak(&value);
        self.put_keyed(key, category, value);
        key
    }

    fn put_keyed(&mut self, key: Hash, category: DataCategory, value: Vec<u8>) {
        use alloc::collections::btree_map::Entry as Slot;
        match self.entries.entry(key) {
            Slot::Occupied(existing) => {
                assert_eq!(
                    existing.get().value,
                    value,
                    "keccak collision: distinct values under {key}"
                );
            }
            Slot::Vacant(slot) => {
                self.stats
                    .add(category, (HASH_LEN + value.len()) as u64);
                slot.insert(Entry { category, value });
            }
        }
    }

    pub fn get(&self, key: &Hash) -> Option<&[u8]> {
        self.entries.get(key).map(|e| e.value.as_slice())
    }

    pub fn contains(&self, key: &Hash) -> bool {
        self.entries.contains_key(key)
    }

    pub fn category_of(&self, key: &Hash) -> Option<DataCategory> {
        self.entries.get(key).map(|e| e.category)
    }

    /// Removes an entry, returning its category and value.
    pub fn delete(&mut self, key: &Hash) -> Option<(DataCategory, Vec<u8>)> {
        let entry = self.entries.remove(key)?;
        *self.stats.get_mut(entry.category) -= (HASH_LEN + entry.value.len()) as u64;
        Some((entry.category, entry.value))
    }

    pub fn stats(&self) -> StorageStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Hash, DataCategory, &[u8])> {
        self.entries
            .iter()
            .map(|(k, e)| (k, e.category, e.value.as_slice()))
    }

    /// Serializes the whole store as a stream of records, ordered by key.
    pub fn dump(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (key, entry) in &self.entries {
            encode_record(&mut out, entry.category, key.as_bytes(), &entry.value);
        }
        out
    }

    /// Rebuilds a store from [`KvStore::dump`] output, re-checking content
    /// addressing of every record.
    pub fn load(bytes: &[u8]) -> Result<KvStore, LoadError> {
        let mut store = KvStore::new();
        for record in decode_records(bytes)? {
            let category =
                DataCategory::from_u8(record.category).ok_or(LoadError::Category(record.category))?;
            let key = Hash::from_slice(&record.key)
                .ok_or(DecodeError::Invalid("record key length"))?;
            if keccak(&record.value) != key {
                return Err(LoadError::NotContentAddressed(key));
            }
            store.put_keyed(key, category, record.value);
        }
        Ok(store)
    }
}

impl NodeDb for KvStore {
    fn node(&self, key: &Hash) -> Option<&[u8]> {
        self.get(key)
    }
}

impl NodeDbMut for KvStore {
    fn insert_node(&mut self, encoded: Vec<u8>) -> Hash {
        self.put(DataCategory::TrieNodes, encoded)
    }
}

/// One `(category, key, value)` record of the persistence/wire format.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub category: u8,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

/// Appends `category | u32 len | key | u32 len | value` (lengths little-endian).
pub fn encode_record(out: &mut Vec<u8>, category: DataCategory, key: &[u8], value: &[u8]) {
    out.put_u8(category as u8);
    out.put_bytes(key);
    out.put_bytes(value);
}

/// Size of a record carrying `key_len` and `value_len` bytes.
pub const fn record_len(key_len: usize, value_len: usize) -> usize {
    1 + 4 + key_len + 4 + value_len
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>, DecodeError> {
    let mut r = Reader::new(bytes);
    let mut out = Vec::new();
    while r.remaining() > 0 {
        let category = r.u8()?;
        let key = r.bytes()?.to_vec();
        let value = r.bytes()?.to_vec();
        out.push(Record {
            category,
            key,
            value,
        });
    }
    Ok(out)
}
