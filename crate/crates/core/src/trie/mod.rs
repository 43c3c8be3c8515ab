//! Persistent Merkle Patricia trie over a content-addressed node store.
//!
//! Keys are fixed 64-nibble paths (normally the Keccak-256 of the key bytes),
//! so every binding lives in a leaf and branch values never occur in tries
//! built by [`put`]. Every [`put`] writes fresh nodes along the updated path and
//! returns a new root; older roots stay readable.

mod node;
mod proof;

use alloc::vec::Vec;

pub use node::Node;
pub use proof::{
    prove, prove_membership, prove_void, verify_membership, verify_void, MembershipProof, Proof,
    ProofError, VoidProof,
};

use crate::codec::DecodeError;
use crate::hash::{keccak, Hash, EMPTY_ROOT};
use crate::storage::{MemDb, NodeDb, NodeDbMut};

/// Number of nibbles in every key path.
pub const PATH_NIBBLES: usize = 64;

/// A 64-nibble trie path.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TriePath([u8; PATH_NIBBLES]);

impl TriePath {
    /// The secure path of `key`: the nibbles of `keccak(key)`.
    pub fn secure(key: &[u8]) -> TriePath {
        TriePath::from_hash(&keccak(key))
    }

    pub fn from_hash(hash: &Hash) -> TriePath {
        let mut nibbles = [0u8; PATH_NIBBLES];
        for (i, b) in hash.0.iter().enumerate() {
            nibbles[2 * i] = b >> 4;
            nibbles[2 * i + 1] = b & 0x0f;
        }
        TriePath(nibbles)
    }

    /// Raw nibble path; used where a test needs to control trie shape.
    pub fn from_nibbles(nibbles: &[u8]) -> Option<TriePath> {
        if nibbles.len() != PATH_NIBBLES || nibbles.iter().any(|n| *n > 0x0f) {
            return None;
        }
        let mut out = [0u8; PATH_NIBBLES];
        out.copy_from_slice(nibbles);
        Some(TriePath(out))
    }

    pub fn nibbles(&self) -> &[u8] {
        &self.0
    }

    /// Packs the nibbles back into the 32-byte digest they came from.
    pub fn to_hash(&self) -> Hash {
        let mut out = [0u8; 32];
        for (i, b) in out.iter_mut().enumerate() {
            *b = (self.0[2 * i] << 4) | self.0[2 * i + 1];
        }
        Hash(out)
    }
}

impl core::fmt::Debug for TriePath {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "TriePath(")?;
        for n in &self.0[..8] {
            write!(f, "{n:x}")?;
        }
        write!(f, "..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrieError {
    #[error("node {0} missing from store")]
    MissingNode(Hash),
    #[error("node {hash} is corrupt: {source}")]
    Corrupt { hash: Hash, source: DecodeError },
    #[error("trie invariant violated at {0}")]
    Invariant(Hash),
    #[error("key is absent; prove non-membership instead")]
    Absent,
    #[error("key is present; prove membership instead")]
    Present,
}

pub(crate) fn load<D: NodeDb + ?Sized>(db: &D, hash: &Hash) -> Result<Node, TrieError> {
    let bytes = db.node(hash).ok_or(TrieError::MissingNode(*hash))?;
    Node::decode(bytes).map_err(|source| TrieError::Corrupt {
        hash: *hash,
        source,
    })
}

fn common_prefix(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Binds `path -> value` under `root`, returning the new root.
pub fn put<D: NodeDbMut + ?Sized>(
    db: &mut D,
    root: &Hash,
    path: &TriePath,
    value: &[u8],
) -> Result<Hash, TrieError> {
    let start = (*root != EMPTY_ROOT).then_some(*root);
    insert(db, start, path.nibbles(), value)
}

fn insert<D: NodeDbMut + ?Sized>(
    db: &mut D,
    at: Option<Hash>,
    path: &[u8],
    value: &[u8],
) -> Result<Hash, TrieError> {
    let Some(hash) = at else {
        return Ok(db.insert_node(
            Node::Leaf {
                path: path.to_vec(),
                value: value.to_vec(),
            }
            .encode(),
        ));
    };
    match load(db, &hash)? {
        Node::Leaf {
            path: leaf_path,
            value: leaf_value,
        } => {
            if leaf_path == path {
                return Ok(db.insert_node(
                    Node::Leaf {
                        path: path.to_vec(),
                        value: value.to_vec(),
                    }
                    .encode(),
                ));
            }
            let p = common_prefix(&leaf_path, path);
            if p >= leaf_path.len() || p >= path.len() {
                return Err(TrieError::Invariant(hash));
            }
            let mut children = [None; 16];
            children[leaf_path[p] as usize] = Some(db.insert_node(
                Node::Leaf {
                    path: leaf_path[p + 1..].to_vec(),
                    value: leaf_value,
                }
                .encode(),
            ));
            children[path[p] as usize] = Some(db.insert_node(
                Node::Leaf {
                    path: path[p + 1..].to_vec(),
                    value: value.to_vec(),
                }
                .encode(),
            ));
            let branch = db.insert_node(
                Node::Branch {
                    children,
                    value: None,
                }
                .encode(),
            );
            Ok(wrap_extension(db, &path[..p], branch))
        }
        Node::Extension {
            path: ext_path,
            child,
        } => {
            let p = common_prefix(&ext_path, path);
            if p == ext_path.len() {
                let new_child = insert(db, Some(child), &path[p..], value)?;
                return Ok(db.insert_node(
                    Node::Extension {
                        path: ext_path,
                        child: new_child,
                    }
                    .encode(),
                ));
            }
            if p >= path.len() {
                return Err(TrieError::Invariant(hash));
            }
            let mut children = [None; 16];
            children[ext_path[p] as usize] = Some(wrap_extension(db, &ext_path[p + 1..], child));
            children[path[p] as usize] = Some(db.insert_node(
                Node::Leaf {
                    path: path[p + 1..].to_vec(),
                    value: value.to_vec(),
                }
                .encode(),
            ));
            let branch = db.insert_node(
                Node::Branch {
                    children,
                    value: None,
                }
                .encode(),
            );
            Ok(wrap_extension(db, &path[..p], branch))
        }
        Node::Branch {
            mut children,
            value: branch_value,
        } => {
            let Some((&slot, rest)) = path.split_first() else {
                return Err(TrieError::Invariant(hash));
            };
            let slot = slot as usize;
            children[slot] = Some(insert(db, children[slot], rest, value)?);
            Ok(db.insert_node(
                Node::Branch {
                    children,
                    value: branch_value,
                }
                .encode(),
            ))
        }
    }
}

fn wrap_extension<D: NodeDbMut + ?Sized>(db: &mut D, prefix: &[u8], child: Hash) -> Hash {
    if prefix.is_empty() {
        child
    } else {
        db.insert_node(
            Node::Extension {
                path: prefix.to_vec(),
                child,
            }
            .encode(),
        )
    }
}

/// Looks up the value bound to `path` under `root`.
pub fn get<D: NodeDb + ?Sized>(
    db: &D,
    root: &Hash,
    path: &TriePath,
) -> Result<Option<Vec<u8>>, TrieError> {
    if *root == EMPTY_ROOT {
        return Ok(None);
    }
    let mut at = *root;
    let mut rest = path.nibbles();
    loop {
        match load(db, &at)? {
            Node::Leaf { path, value } => {
                return Ok((path == rest).then_some(value));
            }
            Node::Extension { path, child } => match rest.strip_prefix(path.as_slice()) {
                Some(r) => {
                    rest = r;
                    at = child;
                }
                None => return Ok(None),
            },
            Node::Branch { children, value } => match rest.split_first() {
                None => return Ok(value),
                Some((slot, r)) => match children[*slot as usize] {
                    Some(c) => {
                        rest = r;
                        at = c;
                    }
                    None => return Ok(None),
                },
            },
        }
    }
}

/// Size of the trie reachable from a root.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrieSummary {
    pub nodes: u64,
    /// `32 + encoded length` summed over distinct nodes, matching store accounting.
    pub bytes: u64,
    pub leaves: u64,
}

/// Visits every distinct node reachable from `root`.
pub fn walk<D: NodeDb + ?Sized>(db: &D, root: &Hash) -> Result<TrieSummary, TrieError> {
    let mut summary = TrieSummary::default();
    if *root == EMPTY_ROOT {
        return Ok(summary);
    }
    let mut seen = alloc::collections::BTreeSet::new();
    let mut stack = alloc::vec![*root];
    while let Some(h) = stack.pop() {
        if !seen.insert(h) {
            continue;
        }
        let bytes = db.node(&h).ok_or(TrieError::MissingNode(h))?;
        summary.nodes += 1;
        summary.bytes += 32 + bytes.len() as u64;
        let node = Node::decode(bytes).map_err(|source| TrieError::Corrupt { hash: h, source })?;
        if matches!(node, Node::Leaf { .. }) {
            summary.leaves += 1;
        }
        stack.extend(node.children());
    }
    Ok(summary)
}

/// All `(path, value)` bindings under `root`, in path order.
pub fn leaves<D: NodeDb + ?Sized>(
    db: &D,
    root: &Hash,
) -> Result<Vec<(TriePath, Vec<u8>)>, TrieError> {
    let mut out = Vec::new();
    if *root != EMPTY_ROOT {
        let mut prefix = Vec::with_capacity(PATH_NIBBLES);
        collect(db, root, &mut prefix, &mut out)?;
    }
    Ok(out)
}

fn collect<D: NodeDb + ?Sized>(
    db: &D,
    at: &Hash,
    prefix: &mut Vec<u8>,
    out: &mut Vec<(TriePath, Vec<u8>)>,
) -> Result<(), TrieError> {
    let mark = prefix.len();
    match load(db, at)? {
        Node::Leaf { path, value } => {
            prefix.extend_from_slice(&path);
            let p = TriePath::from_nibbles(prefix).ok_or(TrieError::Invariant(*at))?;
            out.push((p, value));
        }
        Node::Extension { path, child } => {
            prefix.extend_from_slice(&path);
            collect(db, &child, prefix, out)?;
        }
        Node::Branch { children, value } => {
            if value.is_some() {
                return Err(TrieError::Invariant(*at));
            }
            for (slot, child) in children.iter().enumerate() {
                if let Some(c) = child {
                    prefix.push(slot as u8);
                    collect(db, c, prefix, out)?;
                    prefix.pop();
                }
            }
        }
    }
    prefix.truncate(mark);
    Ok(())
}

/// Moves the nodes reachable from `root` out of `dirty` into `store`.
///
/// Descent stops at nodes that are not in `dirty`; those are already
/// committed. Returns the number of nodes written.
pub fn commit<T: NodeDbMut + ?Sized>(
    store: &mut T,
    root: &Hash,
    dirty: &MemDb,
) -> Result<usize, TrieError> {
    let mut written = 0;
    if *root == EMPTY_ROOT {
        return Ok(0);
    }
    let mut stack = alloc::vec![*root];
    while let Some(h) = stack.pop() {
        let Some(bytes) = dirty.node(&h) else {
            if store.node(&h).is_none() {
                return Err(TrieError::MissingNode(h));
            }
            continue;
        };
        if store.node(&h).is_some() {
            continue;
        }
        let node = Node::decode(bytes).map_err(|source| TrieError::Corrupt { hash: h, source })?;
        store.insert_node(bytes.to_vec());
        written += 1;
        stack.extend(node.children());
    }
    Ok(written)
}

/// Root of a trie holding exactly `entries`, computed in scratch memory.
pub fn root_of<'a>(entries: impl IntoIterator<Item = (TriePath, &'a [u8])>) -> Hash {
    let mut db = MemDb::new();
    let mut root = EMPTY_ROOT;
    for (path, value) in entries {
        root = put(&mut db, &root, &path, value).expect("scratch trie is self-contained");
    }
    root
}

#[cfg(test)]
mod tests;
