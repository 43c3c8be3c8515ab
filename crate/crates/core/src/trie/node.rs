//! Canonical node encoding.
//!
//! ```text
//! path      := u8 nibble-count | ceil(count/2) packed bytes (high nibble first,
//!              odd counts pad the last low nibble with 0)
//! leaf      := 0x00 | path | u32 value-len | value
//! extension := 0x01 | path (count >= 1) | child hash (32)
//! branch    := 0x02 | u16 slot bitmap | child hash (32) per set bit, ascending
//!              | 0x00                       (no value)
//!              | 0x01 | u32 value-len | value
//! ```
//!
//! All integers are little-endian. Children are always referenced by hash.
//! Decoding rejects anything that would not be produced by [`Node::encode`].

use alloc::vec::Vec;

use crate::codec::{DecodeError, Put, Reader};
use crate::hash::Hash;

const TAG_LEAF: u8 = 0;
const TAG_EXTENSION: u8 = 1;
const TAG_BRANCH: u8 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Leaf {
        path: Vec<u8>,
        value: Vec<u8>,
    },
    Extension {
        path: Vec<u8>,
        child: Hash,
    },
    Branch {
        children: [Option<Hash>; 16],
        value: Option<Vec<u8>>,
    },
}

impl Node {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Node::Leaf { path, value } => {
                out.put_u8(TAG_LEAF);
                put_path(&mut out, path);
                out.put_bytes(value);
            }
            Node::Extension { path, child } => {
                out.put_u8(TAG_EXTENSION);
                put_path(&mut out, path);
                out.put_hash(child);
            }
            Node::Branch { children, value } => {
                out.put_u8(TAG_BRANCH);
                let mut bitmap = 0u16;
                for (i, c) in children.iter().enumerate() {
                    if c.is_some() {
                        bitmap |= 1 << i;
                    }
                }
                out.put_u16(bitmap);
                for c in children.iter().flatten() {
                    out.put_hash(c);
                }
                match value {
                    None => out.put_u8(0),
                    Some(v) => {
                        out.put_u8(1);
                        out.put_bytes(v);
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Node, DecodeError> {
        let mut r = Reader::new(bytes);
        let node = match r.u8()? {
            TAG_LEAF => {
                let path = take_path(&mut r)?;
                let value = r.bytes()?.to_vec();
                Node::Leaf { path, value }
            }
            TAG_EXTENSION => {
                let path = take_path(&mut r)?;
                if path.is_empty() {
                    return Err(DecodeError::Invalid("empty extension path"));
                }
                let child = r.hash()?;
                Node::Extension { path, child }
            }
            TAG_BRANCH => {
                let bitmap = r.u16()?;
                let mut children = [None; 16];
                for (i, slot) in children.iter_mut().enumerate() {
                    if bitmap & (1 << i) != 0 {
                        *slot = Some(r.hash()?);
                    }
                }
                let value = match r.u8()? {
                    0 => None,
                    1 => Some(r.bytes()?.to_vec()),
                    _ => return Err(DecodeError::Invalid("branch value flag")),
                };
                let occupied = bitmap.count_ones() as usize + usize::from(value.is_some());
                if occupied < 2 || bitmap == 0 {
                    return Err(DecodeError::Invalid("degenerate branch"));
                }
                Node::Branch { children, value }
            }
            _ => return Err(DecodeError::Invalid("node tag")),
        };
        r.finish()?;
        Ok(node)
    }

    /// Hashes of the nodes this node references.
    pub fn children(&self) -> Vec<Hash> {
        match self {
            Node::Leaf { .. } => Vec::new(),
            Node::Extension { child, .. } => alloc::vec![*child],
            Node::Branch { children, .. } => children.iter().flatten().copied().collect(),
        }
    }
}

fn put_path(out: &mut Vec<u8>, nibbles: &[u8]) {
    debug_assert!(nibbles.len() <= u8::MAX as usize);
    out.put_u8(nibbles.len() as u8);
    for pair in nibbles.chunks(2) {
        let hi = pair[0];
        let lo = pair.get(1).copied().unwrap_or(0);
        out.push((hi << 4) | lo);
    }
}

fn take_path(r: &mut Reader<'_>) -> Result<Vec<u8>, DecodeError> {
    let count = r.u8()? as usize;
    let packed = r.take(count.div_ceil(2))?;
    let mut nibbles = Vec::with_capacity(count);
    for b in packed {
        nibbles.push(b >> 4);
        nibbles.push(b & 0x0f);
    }
    if count % 2 == 1 {
        if nibbles.pop() != Some(0) {
            return Err(DecodeError::Invalid("path padding"));
        }
    }
    Ok(nibbles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::keccak;
    use alloc::vec;

    #[test]
    fn roundtrip_each_variant() {
        let nodes = [
            Node::Leaf {
                path: vec![1, 2, 3],
                value: vec![9, 9],
            },
            Node::Leaf {
                path: vec![],
                value: vec![],
            },
            Node::Extension {
                path: vec![0xa],
                child: keccak(b"c"),
            },
            Node::Branch {
                children: {
                    let mut c = [None; 16];
                    c[0] = Some(keccak(b"0"));
                    c[15] = Some(keccak(b"f"));
                    c
                },
                value: None,
            },
        ];
        for n in nodes {
            assert_eq!(Node::decode(&n.encode()).unwrap(), n);
        }
    }

    #[test]
    fn frozen_leaf_bytes() {
        let n = Node::Leaf {
            path: vec![0xa, 0xb, 0xc],
            value: vec![0x55],
        };
        assert_eq!(n.encode(), vec![0, 3, 0xab, 0xc0, 1, 0, 0, 0, 0x55]);
    }

    #[test]
    fn rejects_non_canonical() {
        // odd path with non-zero padding nibble
        assert!(Node::decode(&[0, 1, 0xab, 0, 0, 0, 0]).is_err());
        // extension with empty path
        let mut ext = vec![1, 0];
        ext.extend_from_slice(&[0; 32]);
        assert!(Node::decode(&ext).is_err());
        // branch with a single child and no value
        let mut br = vec![2, 1, 0];
        br.extend_from_slice(&[0; 32]);
        br.push(0);
        assert!(Node::decode(&br).is_err());
        // trailing garbage
        let mut leaf = Node::Leaf {
            path: vec![1],
            value: vec![],
        }
        .encode();
        leaf.push(0);
        assert!(Node::decode(&leaf).is_err());
        assert!(Node::decode(&[]).is_err());
        assert!(Node::decode(&[7]).is_err());
    }
}
