//! Accounts, transactions, and the per-transaction state transition.
//!
//! Account lookup goes through an [`AccountResolver`] so the same transition
//! code serves a single persistent trie and the swept layout (working trie
//! backed by the last checkpoint).

use alloc::vec::Vec;

use crate::codec::{DecodeError, Put, Reader};
use crate::hash::{keccak, Address, Hash};
use crate::restoration::{RespawnRule, RestoreError};
use crate::storage::{NodeDb, NodeDbMut};
use crate::trie::{self, TrieError, TriePath};

/// Base units per coin.
pub const UNIT: u128 = 1_000_000_000;

/// Reserved recipient marking a restore transaction.
pub const RESTORE_ADDRESS: Address = Address::from_low_u64(0x1234);

const FLAG_STORAGE: u8 = 1;
const FLAG_CODE: u8 = 2;
const FLAG_RESTORED: u8 = 4;

/// Leaf value of the state trie.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Account {
    pub nonce: u64,
    pub balance: u128,
    /// Always `None`: contract accounts are treated as externally owned.
    pub storage_root: Option<Hash>,
    /// Always `None`, as above.
    pub code_hash: Option<Hash>,
    /// Set only on an incarnation produced by a restore transaction.
    pub restored: bool,
}

impl Account {
    pub fn with_balance(balance: u128) -> Account {
        Account {
            balance,
            ..Account::default()
        }
    }

    /// `u64 nonce | u128 balance | u8 flags | [storage_root] | [code_hash]`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(25);
        out.put_u64(self.nonce);
        out.put_u128(self.balance);
        let mut flags = 0;
        if self.storage_root.is_some() {
            flags |= FLAG_STORAGE;
        }
        if self.code_hash.is_some() {
            flags |= FLAG_CODE;
        }
        if self.restored {
            flags |= FLAG_RESTORED;
        }
        out.put_u8(flags);
        if let Some(h) = &self.storage_root {
            out.put_hash(h);
        }
        if let Some(h) = &self.code_hash {
            out.put_hash(h);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Account, DecodeError> {
        let mut r = Reader::new(bytes);
        let nonce = r.u64()?;
        let balance = r.u128()?;
        let flags = r.u8()?;
        if flags & !(FLAG_STORAGE | FLAG_CODE | FLAG_RESTORED) != 0 {
            return Err(DecodeError::Invalid("account flags"));
        }
        let storage_root = if flags & FLAG_STORAGE != 0 {
            Some(r.hash()?)
        } else {
            None
        };
        let code_hash = if flags & FLAG_CODE != 0 {
            Some(r.hash()?)
        } else {
            None
        };
        r.finish()?;
        Ok(Account {
            nonce,
            balance,
            storage_root,
            code_hash,
            restored: flags & FLAG_RESTORED != 0,
        })
    }
}

/// An unsigned transfer; the sender field stands in for a signature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub from: Address,
    pub to: Address,
    pub value: u128,
    pub fee: u128,
    pub nonce: u64,
    /// Encoded restore bundle; present only on restore transactions.
    pub payload: Option<Vec<u8>>,
}

impl Transaction {
    pub fn transfer(from: Address, to: Address, value: u128, fee: u128, nonce: u64) -> Self {
        Transaction {
            from,
            to,
            value,
            fee,
            nonce,
            payload: None,
        }
    }

    pub fn is_restore(&self) -> bool {
        self.to == RESTORE_ADDRESS
    }

    /// `from | to | u128 value | u128 fee | u64 nonce | u8 has_payload | [u32 len | payload]`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(81 + self.payload.as_ref().map_or(0, |p| 4 + p.len()));
        self.encode_into(&mut out);
        out
    }

    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        out.put_address(&self.from);
        out.put_address(&self.to);
        out.put_u128(self.value);
        out.put_u128(self.fee);
        out.put_u64(self.nonce);
        match &self.payload {
            None => out.put_u8(0),
            Some(p) => {
                out.put_u8(1);
                out.put_bytes(p);
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Transaction, DecodeError> {
        let mut r = Reader::new(bytes);
        let tx = Transaction::decode_from(&mut r)?;
        r.finish()?;
        Ok(tx)
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Transaction, DecodeError> {
        let from = r.address()?;
        let to = r.address()?;
        let value = r.u128()?;
        let fee = r.u128()?;
        let nonce = r.u64()?;
        let payload = match r.u8()? {
            0 => None,
            1 => Some(r.bytes()?.to_vec()),
            _ => return Err(DecodeError::Invalid("payload flag")),
        };
        Ok(Transaction {
            from,
            to,
            value,
            fee,
            nonce,
            payload,
        })
    }

    pub fn hash(&self) -> Hash {
        keccak(&self.encode())
    }
}

/// State a transaction applies to: the working root while building block
/// `block_number`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateRef {
    pub root: Hash,
    pub block_number: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TxError {
    #[error("fee must be positive")]
    ZeroFee,
    #[error("sender has no live state")]
    UnknownSender,
    #[error("nonce mismatch: account at {expected}, transaction carries {got}")]
    NonceMismatch { expected: u64, got: u64 },
    #[error("insufficient balance: need {need}, have {have}")]
    InsufficientBalance { need: u128, have: u128 },
    #[error("balance overflow")]
    Overflow,
    #[error("sender exceeded the per-block transaction cap")]
    PerBlockCap,
    #[error("restore transactions are not supported by this engine")]
    RestoreUnsupported,
    #[error("restore rejected: {0}")]
    Restore(#[from] RestoreError),
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error("stored account is corrupt: {0}")]
    CorruptAccount(DecodeError),
}

/// Strategy for finding an account's live state and creating new ones.
pub trait AccountResolver {
    /// Live state of `addr` for a block whose working trie is at `working`.
    fn resolve<D: NodeDb + ?Sized>(
        &self,
        db: &D,
        working: &Hash,
        addr: &Address,
    ) -> Result<Option<Account>, TxError>;

    /// Nonce given to an account created in block `block`.
    fn fresh_nonce(&self, block: u64) -> u64;

    /// Live state, or a freshly created empty account.
    fn resolve_or_create<D: NodeDb + ?Sized>(
        &self,
        db: &D,
        state: &StateRef,
        addr: &Address,
    ) -> Result<Account, TxError> {
        Ok(self
            .resolve(db, &state.root, addr)?
            .unwrap_or_else(|| Account {
                nonce: self.fresh_nonce(state.block_number),
                ..Account::default()
            }))
    }
}

pub(crate) fn read_account<D: NodeDb + ?Sized>(
    db: &D,
    root: &Hash,
    addr: &Address,
) -> Result<Option<Account>, TxError> {
    match trie::get(db, root, &TriePath::secure(&addr.0))? {
        None => Ok(None),
        Some(bytes) => Account::decode(&bytes)
            .map(Some)
            .map_err(TxError::CorruptAccount),
    }
}

pub(crate) fn write_account<D: NodeDbMut + ?Sized>(
    db: &mut D,
    root: &Hash,
    addr: &Address,
    account: &Account,
) -> Result<Hash, TxError> {
    Ok(trie::put(db, root, &TriePath::secure(&addr.0), &account.encode())?)
}

/// One persistent trie; new accounts start at nonce 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct VanillaResolver;

impl AccountResolver for VanillaResolver {
    fn resolve<D: NodeDb + ?Sized>(
        &self,
        db: &D,
        working: &Hash,
        addr: &Address,
    ) -> Result<Option<Account>, TxError> {
        read_account(db, working, addr)
    }

    fn fresh_nonce(&self, _block: u64) -> u64 {
        0
    }
}

/// Working trie first, then the last checkpoint; never older history.
/// New accounts respawn with nonce `block * C`.
#[derive(Clone, Copy, Debug)]
pub struct EthanosResolver {
    pub checkpoint_root: Hash,
    pub rule: RespawnRule,
}

impl AccountResolver for EthanosResolver {
    fn resolve<D: NodeDb + ?Sized>(
        &self,
        db: &D,
        working: &Hash,
        addr: &Address,
    ) -> Result<Option<Account>, TxError> {
        match read_account(db, working, addr)? {
            Some(a) => Ok(Some(a)),
            None => read_account(db, &self.checkpoint_root, addr),
        }
    }

    fn fresh_nonce(&self, block: u64) -> u64 {
        self.rule.respawn_nonce(block)
    }
}

/// Checks fee, sender existence, nonce equality and `balance >= value + fee`.
/// Returns the sender's live state.
pub fn validate_transaction<D: NodeDb + ?Sized, R: AccountResolver>(
    db: &D,
    state: &StateRef,
    resolver: &R,
    tx: &Transaction,
) -> Result<Account, TxError> {
    if tx.fee == 0 {
        return Err(TxError::ZeroFee);
    }
    let sender = resolver
        .resolve(db, &state.root, &tx.from)?
        .ok_or(TxError::UnknownSender)?;
    if sender.nonce != tx.nonce {
        return Err(TxError::NonceMismatch {
            expected: sender.nonce,
            got: tx.nonce,
        });
    }
    let need = tx.value.checked_add(tx.fee).ok_or(TxError::Overflow)?;
    if sender.balance < need {
        return Err(TxError::InsufficientBalance {
            need,
            have: sender.balance,
        });
    }
    Ok(sender)
}

/// Debits the sender, credits the recipient, then credits the fee to `miner`.
pub fn apply_transaction<D: NodeDbMut + ?Sized, R: AccountResolver>(
    db: &mut D,
    state: &StateRef,
    resolver: &R,
    tx: &Transaction,
    miner: &Address,
) -> Result<Hash, TxError> {
    let mut sender = validate_transaction(db, state, resolver, tx)?;
    sender.balance -= tx.value + tx.fee;
    sender.nonce = sender.nonce.checked_add(1).ok_or(TxError::Overflow)?;
    let mut root = write_account(db, &state.root, &tx.from, &sender)?;

    let at = StateRef { root, ..*state };
    let mut recipient = resolver.resolve_or_create(db, &at, &tx.to)?;
    recipient.balance = recipient
        .balance
        .checked_add(tx.value)
        .ok_or(TxError::Overflow)?;
    root = write_account(db, &root, &tx.to, &recipient)?;

    credit(db, &StateRef { root, ..*state }, resolver, miner, tx.fee)
}

/// Credits `reward` to `miner`, creating the account if it has no live state.
pub fn apply_block_reward<D: NodeDbMut + ?Sized, R: AccountResolver>(
    db: &mut D,
    state: &StateRef,
    resolver: &R,
    miner: &Address,
    reward: u128,
) -> Result<Hash, TxError> {
    credit(db, state, resolver, miner, reward)
}

pub(crate) fn credit<D: NodeDbMut + ?Sized, R: AccountResolver>(
    db: &mut D,
    state: &StateRef,
    resolver: &R,
    addr: &Address,
    amount: u128,
) -> Result<Hash, TxError> {
    let mut account = resolver.resolve_or_create(db, state, addr)?;
    account.balance = account
        .balance
        .checked_add(amount)
        .ok_or(TxError::Overflow)?;
    write_account(db, &state.root, addr, &account)
}
