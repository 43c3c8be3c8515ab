//! Core data structures for an account-sweeping chain: content-addressed
//! storage, a persistent Merkle Patricia trie with proofs, account state
//! transitions, checkpoint blooms, block production and verification, and
//! restoration of swept accounts.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod codec;
pub mod hash;
pub mod storage;
pub mod trie;
pub mod state;
pub mod bloom;
pub mod restoration;
pub mod chain;
