//! Membership and void (non-membership) proofs.
//!
//! A proof is the list of node encodings along the key path, starting at the
//! root. Verification needs only the claimed root: each node must hash to the
//! reference its predecessor follows.

use alloc::vec::Vec;

use super::{load, Node, TrieError, TriePath, PATH_NIBBLES};
use crate::codec::{DecodeError, Put, Reader};
use crate::hash::{keccak, Hash, EMPTY_ROOT};
use crate::storage::NodeDb;

/// Root-to-leaf node path proving a binding.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MembershipProof {
    pub nodes: Vec<Vec<u8>>,
}

/// Root-to-divergence node path proving a key is unbound.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VoidProof {
    pub nodes: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Proof {
    Membership(MembershipProof),
    Void(VoidProof),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProofError {
    #[error("first node does not hash to the claimed root")]
    RootMismatch,
    #[error("node {0} does not hash to the reference held by its parent")]
    BrokenChain(usize),
    #[error("node {0} is malformed")]
    Malformed(usize),
    #[error("proof path diverges from the key path")]
    PathMismatch,
    #[error("proof ends before reaching a terminal node")]
    Incomplete,
    #[error("proof has nodes past its terminal node")]
    TrailingNodes,
    #[error("terminal node continues along the key path; key may be present")]
    FakeVoid,
}

macro_rules! node_list_codec {
    ($ty:ident) => {
        impl $ty {
            /// `u32 count` followed by `u32 len | bytes` per node.
            pub fn encode(&self) -> Vec<u8> {
                let mut out = Vec::new();
                self.encode_into(&mut out);
                out
            }

            pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
                out.put_u32(self.nodes.len() as u32);
                for n in &self.nodes {
                    out.put_bytes(n);
                }
            }

            pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
                let mut r = Reader::new(bytes);
                let p = Self::decode_from(&mut r)?;
                r.finish()?;
                Ok(p)
            }

            pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                let count = r.u32()? as usize;
                if count > PATH_NIBBLES + 1 {
                    return Err(DecodeError::Invalid("proof length"));
                }
                let mut nodes = Vec::with_capacity(count);
                for _ in 0..count {
                    nodes.push(r.bytes()?.to_vec());
                }
                Ok($ty { nodes })
            }

            pub fn encoded_len(&self) -> usize {
                4 + self.nodes.iter().map(|n| 4 + n.len()).sum::<usize>()
            }
        }
    };
}

node_list_codec!(MembershipProof);
node_list_codec!(VoidProof);

/// Collects the node path for `path`, ending at a leaf or a divergence.
pub fn prove<D: NodeDb + ?Sized>(db: &D, root: &Hash, path: &TriePath) -> Result<Proof, TrieError> {
    let mut nodes = Vec::new();
    if *root == EMPTY_ROOT {
        return Ok(Proof::Void(VoidProof { nodes }));
    }
    let mut at = *root;
    let mut rest = path.nibbles();
    loop {
        let node = load(db, &at)?;
        nodes.push(db.node(&at).ok_or(TrieError::MissingNode(at))?.to_vec());
        match node {
            Node::Leaf { path: leaf_path, .. } => {
                return Ok(if leaf_path == rest {
                    Proof::Membership(MembershipProof { nodes })
                } else {
                    Proof::Void(VoidProof { nodes })
                });
            }
            Node::Extension {
                path: ext_path,
                child,
            } => match rest.strip_prefix(ext_path.as_slice()) {
                Some(r) => {
                    rest = r;
                    at = child;
                }
                None => return Ok(Proof::Void(VoidProof { nodes })),
            },
            Node::Branch { children, .. } => {
                let Some((slot, r)) = rest.split_first() else {
                    return Err(TrieError::Invariant(at));
                };
                match children[*slot as usize] {
                    Some(c) => {
                        rest = r;
                        at = c;
                    }
                    None => return Ok(Proof::Void(VoidProof { nodes })),
                }
            }
        }
    }
}

pub fn prove_membership<D: NodeDb + ?Sized>(
    db: &D,
    root: &Hash,
    path: &TriePath,
) -> Result<MembershipProof, TrieError> {
    match prove(db, root, path)? {
        Proof::Membership(p) => Ok(p),
        Proof::Void(_) => Err(TrieError::Absent),
    }
}

pub fn prove_void<D: NodeDb + ?Sized>(
    db: &D,
    root: &Hash,
    path: &TriePath,
) -> Result<VoidProof, TrieError> {
    match prove(db, root, path)? {
        Proof::Void(p) => Ok(p),
        Proof::Membership(_) => Err(TrieError::Present),
    }
}

/// What the verifier learned from one step along the key path.
enum Step<'p> {
    Descend(Hash, &'p [u8]),
    Found(Vec<u8>),
    Diverged,
}

fn step<'p>(node: Node, rest: &'p [u8]) -> Step<'p> {
    match node {
        Node::Leaf { path, value } => {
            if path == rest {
                Step::Found(value)
            } else {
                Step::Diverged
            }
        }
        Node::Extension { path, child } => match rest.strip_prefix(path.as_slice()) {
            Some(r) => Step::Descend(child, r),
            None => Step::Diverged,
        },
        Node::Branch { children, value } => match rest.split_first() {
            None => match value {
                Some(v) => Step::Found(v),
                None => Step::Diverged,
            },
            Some((slot, r)) => match children[*slot as usize] {
                Some(c) => Step::Descend(c, r),
                None => Step::Diverged,
            },
        },
    }
}

fn checked_node(nodes: &[Vec<u8>], i: usize, expected: &Hash) -> Result<Node, ProofError> {
    let bytes = &nodes[i];
    if keccak(bytes) != *expected {
        return Err(if i == 0 {
            ProofError::RootMismatch
        } else {
            ProofError::BrokenChain(i)
        });
    }
    Node::decode(bytes).map_err(|_| ProofError::Malformed(i))
}

/// Checks `proof` against `root` and returns the value bound to `path`.
pub fn verify_membership(
    root: &Hash,
    path: &TriePath,
    proof: &MembershipProof,
) -> Result<Vec<u8>, ProofError> {
    let mut expected = *root;
    let mut rest = path.nibbles();
    for i in 0..proof.nodes.len() {
        let node = checked_node(&proof.nodes, i, &expected)?;
        match step(node, rest) {
            Step::Descend(child, r) => {
                expected = child;
                rest = r;
            }
            Step::Found(value) => {
                return if i + 1 == proof.nodes.len() {
                    Ok(value)
                } else {
                    Err(ProofError::TrailingNodes)
                };
            }
            Step::Diverged => return Err(ProofError::PathMismatch),
        }
    }
    Err(ProofError::Incomplete)
}

/// Checks that `proof` shows `path` unbound under `root`.
pub fn verify_void(root: &Hash, path: &TriePath, proof: &VoidProof) -> Result<(), ProofError> {
    if proof.nodes.is_empty() {
        return if *root == EMPTY_ROOT {
            Ok(())
        } else {
            Err(ProofError::Incomplete)
        };
    }
    let mut expected = *root;
    let mut rest = path.nibbles();
    for i in 0..proof.nodes.len() {
        let node = checked_node(&proof.nodes, i, &expected)?;
        let last = i + 1 == proof.nodes.len();
        match step(node, rest) {
            Step::Descend(child, r) => {
                if last {
                    return Err(ProofError::FakeVoid);
                }
                expected = child;
                rest = r;
            }
            Step::Found(_) => return Err(ProofError::FakeVoid),
            Step::Diverged => {
                return if last {
                    Ok(())
                } else {
                    Err(ProofError::TrailingNodes)
                };
            }
        }
    }
    unreachable!("loop returns on the last node")
}
