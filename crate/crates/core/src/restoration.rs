//! Restoring swept accounts.
//!
//! An account's checkpoint history splits into *runs*: maximal sequences of
//! consecutive checkpoints whose tries hold it. Each run is one incarnation,
//! because an account present at checkpoint `j` is resolved from that
//! checkpoint throughout epoch `j + 1`. A restore names the last checkpoint
//! `k` of the incarnation being revived and must explain every later
//! checkpoint whose bloom answers positive: with a void proof where the
//! account was absent, or a pawn proof where a respawned incarnation lived.
//!
//! The restored state merges the revived state, the last state of every pawn
//! run, and the live state. A pawn run reaching the latest checkpoint is the
//! live incarnation itself and contributes through the live state only.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::bloom::Bloom;
use crate::codec::{DecodeError, Put, Reader};
use crate::hash::{keccak, Address, Hash};
use crate::state::{
    read_account, validate_transaction, write_account, Account, AccountResolver, StateRef,
    Transaction, TxError,
};
use crate::storage::{NodeDb, NodeDbMut};
use crate::trie::{
    prove_membership, prove_void, verify_membership, verify_void, MembershipProof, ProofError,
    TriePath, VoidProof,
};

/// Initial nonce of a respawned account: `block * C`, where `C` caps the
/// transactions one account may send per block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RespawnRule {
    pub max_txs_per_block: u64,
}

impl Default for RespawnRule {
    fn default() -> Self {
        RespawnRule {
            max_txs_per_block: 1024,
        }
    }
}

impl RespawnRule {
    pub fn respawn_nonce(&self, block: u64) -> u64 {
        block.saturating_mul(self.max_txs_per_block)
    }

    pub fn respawn(&self, block: u64, value: u128) -> Account {
        Account {
            nonce: self.respawn_nonce(block),
            balance: value,
            ..Account::default()
        }
    }
}

/// The merge function: sums balances and nonces and sets the restored flag.
pub fn merge(a: &Account, b: &Account) -> Result<Account, RestoreError> {
    Ok(Account {
        nonce: a.nonce.checked_add(b.nonce).ok_or(RestoreError::Overflow)?,
        balance: a
            .balance
            .checked_add(b.balance)
            .ok_or(RestoreError::Overflow)?,
        storage_root: None,
        code_hash: None,
        restored: true,
    })
}

/// Committed checkpoint data a verifier consults.
pub trait CheckpointSource {
    fn checkpoint_root(&self, index: u64) -> Option<Hash>;
    fn checkpoint_bloom(&self, index: u64) -> Option<&Bloom>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RestoreError {
    #[error("restore transaction carries no bundle")]
    MissingPayload,
    #[error("restore transaction must carry value 0")]
    NonZeroValue,
    #[error("an account cannot sponsor its own restore")]
    SelfSponsor,
    #[error("bundle is malformed: {0}")]
    Malformed(DecodeError),
    #[error("last active checkpoint {claimed} is not before the latest checkpoint {latest}")]
    NotBeforeLatest { claimed: u64, latest: u64 },
    #[error("checkpoint {0} is unknown")]
    UnknownCheckpoint(u64),
    #[error("membership proof at the last active checkpoint failed: {0}")]
    BadMembership(ProofError),
    #[error("void proof at checkpoint {index} failed: {source}")]
    BadVoid { index: u64, source: ProofError },
    #[error("pawn proof at checkpoint {index} failed: {source}")]
    BadPawn { index: u64, source: ProofError },
    #[error("proven account state is corrupt")]
    CorruptState,
    #[error("checkpoint {0} answers positive but the bundle does not explain it")]
    IncompleteCoverage(u64),
    #[error("checkpoint {0} needs no proof but the bundle carries one")]
    UnexpectedProof(u64),
    #[error("checkpoint {0} is proven twice")]
    DuplicateProof(u64),
    #[error("a pawn at checkpoint {0} continues the claimed incarnation")]
    PawnContinuesTarget(u64),
    #[error("checkpoint {0} holds a restored incarnation, not a pawn")]
    PawnRestored(u64),
    #[error("target has no dormant state to restore")]
    NotDormant,
    #[error("target never existed at or before the latest checkpoint")]
    NoHistory,
    #[error("merged balance or nonce overflows")]
    Overflow,
}

/// Proof material for reviving `target`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RestoreBundle {
    pub target: Address,
    /// Last checkpoint of the incarnation being revived.
    pub last_active: u64,
    pub membership: MembershipProof,
    pub void_proofs: BTreeMap<u64, VoidProof>,
    /// Strictly increasing checkpoint indices.
    pub pawn_proofs: Vec<(u64, MembershipProof)>,
}

impl RestoreBundle {
    pub fn proof_count(&self) -> usize {
        1 + self.void_proofs.len() + self.pawn_proofs.len()
    }

    /// `target | u64 k | proof | u32 n | (u64 j | proof)* | u32 n | (u64 j | proof)*`,
    /// voids first, pawns second, each in ascending index order.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.put_address(&self.target);
        out.put_u64(self.last_active);
        self.membership.encode_into(&mut out);
        out.put_u32(self.void_proofs.len() as u32);
        for (j, p) in &self.void_proofs {
            out.put_u64(*j);
            p.encode_into(&mut out);
        }
        out.put_u32(self.pawn_proofs.len() as u32);
        for (j, p) in &self.pawn_proofs {
            out.put_u64(*j);
            p.encode_into(&mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<RestoreBundle, DecodeError> {
        let mut r = Reader::new(bytes);
        let target = r.address()?;
        let last_active = r.u64()?;
        let membership = MembershipProof::decode_from(&mut r)?;
        let mut void_proofs = BTreeMap::new();
        let mut prev = None;
        for _ in 0..r.u32()? {
            let j = r.u64()?;
            if prev.is_some_and(|p| j <= p) {
                return Err(DecodeError::Invalid("void proof order"));
            }
            prev = Some(j);
            void_proofs.insert(j, VoidProof::decode_from(&mut r)?);
        }
        let mut pawn_proofs = Vec::new();
        let mut prev = None;
        for _ in 0..r.u32()? {
            let j = r.u64()?;
            if prev.is_some_and(|p| j <= p) {
                return Err(DecodeError::Invalid("pawn proof order"));
            }
            prev = Some(j);
            pawn_proofs.push((j, MembershipProof::decode_from(&mut r)?));
        }
        r.finish()?;
        Ok(RestoreBundle {
            target,
            last_active,
            membership,
            void_proofs,
            pawn_proofs,
        })
    }
}

fn decode_state(bytes: &[u8]) -> Result<Account, RestoreError> {
    Account::decode(bytes).map_err(|_| RestoreError::CorruptState)
}

/// Splits ascending `(index, state)` pairs into runs of consecutive indices.
fn runs(history: &[(u64, Account)]) -> Vec<&[(u64, Account)]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=history.len() {
        if i == history.len() || history[i].0 != history[i - 1].0 + 1 {
            if i > start {
                out.push(&history[start..i]);
            }
            start = i;
        }
    }
    out
}

/// Checks `bundle` against checkpoints `0..=latest` and returns the merged
/// state. `live` is the target's state as the current block resolves it.
pub fn verify_restore<C: CheckpointSource + ?Sized>(
    checkpoints: &C,
    bundle: &RestoreBundle,
    latest: u64,
    live: Option<Account>,
) -> Result<Account, RestoreError> {
    let k = bundle.last_active;
    if k >= latest {
        return Err(RestoreError::NotBeforeLatest { claimed: k, latest });
    }
    if live.is_some_and(|a| a.restored) {
        return Err(RestoreError::NotDormant);
    }
    let path = TriePath::secure(&bundle.target.0);
    let key = keccak(&bundle.target.0);
    let root_k = checkpoints
        .checkpoint_root(k)
        .ok_or(RestoreError::UnknownCheckpoint(k))?;
    let base = verify_membership(&root_k, &path, &bundle.membership)
        .map_err(RestoreError::BadMembership)?;
    let base = decode_state(&base)?;

    let mut pawns: BTreeMap<u64, &MembershipProof> = BTreeMap::new();
    for (j, p) in &bundle.pawn_proofs {
        if pawns.insert(*j, p).is_some() || bundle.void_proofs.contains_key(j) {
            return Err(RestoreError::DuplicateProof(*j));
        }
    }
    let out_of_range = |j: &u64| *j <= k || *j > latest;
    if let Some(j) = bundle
        .void_proofs
        .keys()
        .chain(pawns.keys())
        .find(|j| out_of_range(j))
    {
        return Err(RestoreError::UnexpectedProof(*j));
    }

    let mut pawn_states: Vec<(u64, Account)> = Vec::new();
    for j in k + 1..=latest {
        let bloom = checkpoints
            .checkpoint_bloom(j)
            .ok_or(RestoreError::UnknownCheckpoint(j))?;
        let root = checkpoints
            .checkpoint_root(j)
            .ok_or(RestoreError::UnknownCheckpoint(j))?;
        let positive = bloom.contains_key(&key);
        match (bundle.void_proofs.get(&j), pawns.get(&j)) {
            (None, None) if positive => return Err(RestoreError::IncompleteCoverage(j)),
            (None, None) => {}
            _ if !positive => return Err(RestoreError::UnexpectedProof(j)),
            (Some(v), None) => verify_void(&root, &path, v)
                .map_err(|source| RestoreError::BadVoid { index: j, source })?,
            (None, Some(p)) => {
                if j == k + 1 {
                    return Err(RestoreError::PawnContinuesTarget(j));
                }
                let state = verify_membership(&root, &path, p)
                    .map_err(|source| RestoreError::BadPawn { index: j, source })?;
                let state = decode_state(&state)?;
                if state.restored {
                    return Err(RestoreError::PawnRestored(j));
                }
                pawn_states.push((j, state));
            }
            (Some(_), Some(_)) => return Err(RestoreError::DuplicateProof(j)),
        }
    }

    let mut merged = merge(&base, &Account::default())?;
    for run in runs(&pawn_states) {
        let (end, state) = run[run.len() - 1];
        // the live state supersedes the run it continues
        if end == latest && live.is_some() {
            continue;
        }
        merged = merge(&merged, &state)?;
    }
    if let Some(l) = live {
        merged = merge(&merged, &l)?;
    }
    Ok(merged)
}

/// Present states of `target` at checkpoints `0..=latest`.
pub fn checkpoint_history<D: NodeDb + ?Sized, C: CheckpointSource + ?Sized>(
    db: &D,
    checkpoints: &C,
    target: &Address,
    latest: u64,
) -> Result<Vec<(u64, Account)>, RestoreError> {
    let mut out = Vec::new();
    for j in 0..=latest {
        let root = checkpoints
            .checkpoint_root(j)
            .ok_or(RestoreError::UnknownCheckpoint(j))?;
        let state = read_account(db, &root, target).map_err(|_| RestoreError::CorruptState)?;
        if let Some(s) = state {
            out.push((j, s));
        }
    }
    Ok(out)
}

/// Index of the run a restore revives: the latest restored incarnation,
/// otherwise the oldest.
fn base_run(runs: &[&[(u64, Account)]]) -> usize {
    runs.iter()
        .rposition(|r| r[r.len() - 1].1.restored)
        .unwrap_or(0)
}

/// Builds a bundle from full checkpoint history (an archive node's view).
pub fn build_restore<D: NodeDb + ?Sized, C: CheckpointSource + ?Sized>(
    db: &D,
    checkpoints: &C,
    target: &Address,
    latest: u64,
) -> Result<RestoreBundle, RestoreError> {
    let history = checkpoint_history(db, checkpoints, target, latest)?;
    let runs = runs(&history);
    if runs.is_empty() {
        return Err(RestoreError::NoHistory);
    }
    let base = runs[base_run(&runs)];
    let k = base[base.len() - 1].0;
    if k >= latest {
        return Err(RestoreError::NotDormant);
    }
    let path = TriePath::secure(&target.0);
    let key = keccak(&target.0);
    let prove_err = |_| RestoreError::CorruptState;
    let root_k = checkpoints
        .checkpoint_root(k)
        .ok_or(RestoreError::UnknownCheckpoint(k))?;
    let membership = prove_membership(db, &root_k, &path).map_err(prove_err)?;
    let mut void_proofs = BTreeMap::new();
    let mut pawn_proofs = Vec::new();
    let present: BTreeMap<u64, ()> = history.iter().map(|(j, _)| (*j, ())).collect();
    for j in k + 1..=latest {
        let bloom = checkpoints
            .checkpoint_bloom(j)
            .ok_or(RestoreError::UnknownCheckpoint(j))?;
        if !bloom.contains_key(&key) {
            continue;
        }
        let root = checkpoints
            .checkpoint_root(j)
            .ok_or(RestoreError::UnknownCheckpoint(j))?;
        if present.contains_key(&j) {
            pawn_proofs.push((j, prove_membership(db, &root, &path).map_err(prove_err)?));
        } else {
            void_proofs.insert(j, prove_void(db, &root, &path).map_err(prove_err)?);
        }
    }
    Ok(RestoreBundle {
        target: *target,
        last_active: k,
        membership,
        void_proofs,
        pawn_proofs,
    })
}

/// The state `target` would hold once every dormant incarnation is merged
/// back: the live state if it is already restored, otherwise the merge of
/// the revivable incarnation, later pawns, and the live state.
pub fn effective_account<D: NodeDb + ?Sized, C: CheckpointSource + ?Sized>(
    db: &D,
    checkpoints: &C,
    target: &Address,
    latest: u64,
    live: Option<Account>,
) -> Result<Option<Account>, RestoreError> {
    if live.is_some_and(|a| a.restored) {
        return Ok(live);
    }
    let history = checkpoint_history(db, checkpoints, target, latest)?;
    let runs = runs(&history);
    if runs.is_empty() {
        return Ok(live);
    }
    let b = base_run(&runs);
    let mut parts: Vec<Account> = Vec::new();
    for run in &runs[b..] {
        let (end, state) = run[run.len() - 1];
        if end == latest && live.is_some() {
            continue;
        }
        parts.push(state);
    }
    parts.extend(live);
    if parts.len() == 1 {
        return Ok(Some(parts[0]));
    }
    let mut acc = parts[0];
    for p in &parts[1..] {
        acc = merge(&acc, p)?;
    }
    Ok(Some(acc))
}

/// Applies a restore transaction: the sponsor `tx.from` pays the fee and the
/// bundle's target receives the merged state.
#[allow(clippy::too_many_arguments)]
pub fn apply_restore<D, R, C>(
    db: &mut D,
    state: &StateRef,
    resolver: &R,
    checkpoints: &C,
    latest: u64,
    tx: &Transaction,
    miner: &Address,
) -> Result<Hash, TxError>
where
    D: NodeDbMut + ?Sized,
    R: AccountResolver,
    C: CheckpointSource + ?Sized,
{
    if tx.value != 0 {
        return Err(RestoreError::NonZeroValue.into());
    }
    let payload = tx.payload.as_ref().ok_or(RestoreError::MissingPayload)?;
    let bundle = RestoreBundle::decode(payload).map_err(RestoreError::Malformed)?;
    if bundle.target == tx.from {
        return Err(RestoreError::SelfSponsor.into());
    }
    let mut sponsor = validate_transaction(db, state, resolver, tx)?;
    let live = resolver.resolve(db, &state.root, &bundle.target)?;
    let restored = verify_restore(checkpoints, &bundle, latest, live)?;

    sponsor.balance -= tx.fee;
    sponsor.nonce = sponsor.nonce.checked_add(1).ok_or(TxError::Overflow)?;
    let root = write_account(db, &state.root, &tx.from, &sponsor)?;
    let root = write_account(db, &root, &bundle.target, &restored)?;
    crate::state::credit(db, &StateRef { root, ..*state }, resolver, miner, tx.fee)
}

#[cfg(test)]
mod tests;
