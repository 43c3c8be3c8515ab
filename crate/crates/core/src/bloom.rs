//! Per-checkpoint bloom filter over account addresses.
//!
//! Elements are the Keccak-256 of the address, which is also the account's
//! secure trie path, so a checkpoint bloom can be rebuilt from trie leaves
//! alone. Bit positions use double hashing: `h1 + i * h2 mod m`, with `h1`
//! and `h2` read little-endian from the first 16 digest bytes (`h2` forced
//! odd).

use alloc::vec;
use alloc::vec::Vec;

use crate::codec::{DecodeError, Put, Reader};
use crate::hash::{keccak, Address, Hash};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BloomParams {
    /// Number of bits `m`; at least 8.
    pub bits: u32,
    /// Number of probes `k`; at least 1.
    pub hashes: u8,
}

impl Default for BloomParams {
    fn default() -> Self {
        BloomParams {
            bits: 1 << 20,
            hashes: 4,
        }
    }
}

impl BloomParams {
    pub fn is_valid(&self) -> bool {
        self.bits >= 8 && self.hashes >= 1
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Bloom {
    params: BloomParams,
    bytes: Vec<u8>,
}

impl core::fmt::Debug for Bloom {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Bloom")
            .field("params", &self.params)
            .field("set_bits", &self.set_bits())
            .finish()
    }
}

impl Bloom {
    pub fn new(params: BloomParams) -> Bloom {
        assert!(params.is_valid(), "bloom needs >= 8 bits and >= 1 hash");
        Bloom {
            params,
            bytes: vec![0; params.bits.div_ceil(8) as usize],
        }
    }

    pub fn params(&self) -> BloomParams {
        self.params
    }

    fn positions(&self, key: &Hash) -> impl Iterator<Item = u32> + '_ {
        let mut lo = [0u8; 8];
        let mut hi = [0u8; 8];
        lo.copy_from_slice(&key.0[..8]);
        hi.copy_from_slice(&key.0[8..16]);
        let h1 = u64::from_le_bytes(lo);
        let h2 = u64::from_le_bytes(hi) | 1;
        let m = u64::from(self.params.bits);
        (0..u64::from(self.params.hashes))
            .map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as u32)
    }

    /// Inserts a pre-hashed element (a secure trie path).
    pub fn insert_key(&mut self, key: &Hash) {
        let ps: Vec<u32> = self.positions(key).collect();
        for p in ps {
            self.bytes[(p / 8) as usize] |= 1 << (p % 8);
        }
    }

    pub fn contains_key(&self, key: &Hash) -> bool {
        self.positions(key)
            .all(|p| self.bytes[(p / 8) as usize] & (1 << (p % 8)) != 0)
    }

    pub fn insert(&mut self, addr: &Address) {
        self.insert_key(&keccak(&addr.0));
    }

    /// `false` is definitive; `true` may be a false positive.
    pub fn query(&self, addr: &Address) -> bool {
        self.contains_key(&keccak(&addr.0))
    }

    pub fn set_bits(&self) -> u32 {
        self.bytes.iter().map(|b| b.count_ones()).sum()
    }

    /// `u32 bits | u8 hashes | ceil(bits/8) bytes`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.bytes.len());
        out.put_u32(self.params.bits);
        out.put_u8(self.params.hashes);
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Bloom, DecodeError> {
        let mut r = Reader::new(bytes);
        let params = BloomParams {
            bits: r.u32()?,
            hashes: r.u8()?,
        };
        if !params.is_valid() {
            return Err(DecodeError::Invalid("bloom parameters"));
        }
        let body = r.take(params.bits.div_ceil(8) as usize)?;
        r.finish()?;
        let spare = params.bits % 8;
        if spare != 0 && body[body.len() - 1] >> spare != 0 {
            return Err(DecodeError::Invalid("bloom padding"));
        }
        Ok(Bloom {
            params,
            bytes: body.to_vec(),
        })
    }

    /// Hash committed in the checkpoint header.
    pub fn digest(&self) -> Hash {
        keccak(&self.encode())
    }
}
