use super::*;
use crate::bloom::BloomParams;
use crate::hash::EMPTY_ROOT;
use crate::state::{EthanosResolver, UNIT};
use crate::storage::KvStore;
use alloc::vec;
use proptest::prelude::*;

/// A hand-built sequence of checkpoint tries with blooms over their leaves.
struct History {
    store: KvStore,
    roots: Vec<Hash>,
    blooms: Vec<Bloom>,
    params: BloomParams,
}

impl History {
    fn new(params: BloomParams) -> History {
        History {
            store: KvStore::new(),
            roots: Vec::new(),
            blooms: Vec::new(),
            params,
        }
    }

    fn push(&mut self, accounts: &[(Address, Account)]) -> u64 {
        let mut root = EMPTY_ROOT;
        let mut bloom = Bloom::new(self.params);
        for (a, acct) in accounts {
            root = write_account(&mut self.store, &root, a, acct).unwrap();
            bloom.insert(a);
        }
        self.roots.push(root);
        self.blooms.push(bloom);
        self.latest()
    }

    fn latest(&self) -> u64 {
        self.roots.len() as u64 - 1
    }

    fn build(&self, target: &Address) -> Result<RestoreBundle, RestoreError> {
        build_restore(&self.store, self, target, self.latest())
    }

    fn verify(&self, b: &RestoreBundle, live: Option<Account>) -> Result<Account, RestoreError> {
        verify_restore(self, b, self.latest(), live)
    }
}

impl CheckpointSource for History {
    fn checkpoint_root(&self, index: u64) -> Option<Hash> {
        self.roots.get(index as usize).copied()
    }
    fn checkpoint_bloom(&self, index: u64) -> Option<&Bloom> {
        self.blooms.get(index as usize)
    }
}

fn big() -> BloomParams {
    BloomParams { bits: 1 << 16, hashes: 4 }
}

fn acct(balance: u128, nonce: u64) -> Account {
    Account {
        nonce,
        balance,
        ..Account::default()
    }
}

const T: Address = Address::from_low_u64(0xabc);
fn other(i: u64) -> Address {
    Address::from_low_u64(0x1_0000 + i)
}

#[test]
fn respawn_nonce_is_block_times_cap() {
    let rule = RespawnRule::default();
    assert_eq!(rule.respawn_nonce(0), 0);
    assert_eq!(rule.respawn_nonce(50), 51_200);
    assert_eq!(rule.respawn(50, 9), acct(9, 50 * 1024));
}

#[test]
fn merge_properties() {
    let x = acct(40 * UNIT, 3);
    let id = merge(&x, &Account::default()).unwrap();
    assert_eq!((id.balance, id.nonce, id.restored), (x.balance, x.nonce, true));
    let k = 50u64;
    let pawn = acct(5_120_000_000, k * 1024);
    let m = merge(&x, &pawn).unwrap();
    assert_eq!(m.balance, 40 * UNIT + 5_120_000_000);
    assert_eq!(m.nonce, 3 + 51_200);
    assert_eq!(merge(&pawn, &x).unwrap(), m);
    assert_eq!(
        merge(&acct(u128::MAX, 0), &acct(1, 0)),
        Err(RestoreError::Overflow)
    );
    assert_eq!(
        merge(&acct(0, u64::MAX), &acct(0, 1)),
        Err(RestoreError::Overflow)
    );
}

#[test]
fn minimal_bundle_has_one_proof() {
    let mut h = History::new(big());
    h.push(&[(other(0), acct(1, 0))]);
    h.push(&[(T, acct(77, 4)), (other(1), acct(1, 0))]);
    h.push(&[(other(2), acct(1, 0))]);
    let b = h.build(&T).unwrap();
    assert_eq!(b.last_active, 1);
    assert_eq!(b.proof_count(), 1);
    let restored = h.verify(&b, None).unwrap();
    assert_eq!((restored.balance, restored.nonce, restored.restored), (77, 4, true));
}

#[test]
fn bloom_false_positive_costs_one_void_proof() {
    // small bloom: pick fillers so exactly one of the three later checkpoints
    // answers positive for T without holding it
    let params = BloomParams { bits: 64, hashes: 1 };
    let key = keccak(&T.0);
    let mut probe = Bloom::new(params);
    probe.insert_key(&key);
    let collides = |a: &Address| {
        let mut b = Bloom::new(params);
        b.insert(a);
        b.contains_key(&key)
    };
    let hit = (0..).map(other).find(|a| collides(a)).unwrap();
    let miss: Vec<Address> = (0..).map(other).filter(|a| !collides(a)).take(3).collect();

    let mut h = History::new(params);
    h.push(&[(T, acct(10, 2))]);
    h.push(&[(miss[0], acct(1, 0))]);
    h.push(&[(hit, acct(1, 0))]);
    h.push(&[(miss[1], acct(1, 0)), (miss[2], acct(1, 0))]);
    let b = h.build(&T).unwrap();
    assert_eq!(b.last_active, 0);
    assert_eq!(b.void_proofs.keys().copied().collect::<Vec<_>>(), vec![2]);
    assert_eq!(b.proof_count(), 2);
    assert_eq!(h.verify(&b, None).unwrap().balance, 10);

    let mut missing = b.clone();
    missing.void_proofs.clear();
    assert_eq!(
        h.verify(&missing, None),
        Err(RestoreError::IncompleteCoverage(2))
    );
    let mut extra = b.clone();
    let v = prove_void(&h.store, &h.roots[1], &TriePath::secure(&T.0)).unwrap();
    extra.void_proofs.insert(1, v);
    assert_eq!(h.verify(&extra, None), Err(RestoreError::UnexpectedProof(1)));
}

/// T lives at 0..=1, is swept at 2, respawns as a pawn at 3, is swept at 4,
/// respawns at 5..=6, and is swept again at 7.
fn two_pawn_history() -> History {
    let mut h = History::new(big());
    h.push(&[(T, acct(100, 5)), (other(0), acct(1, 0))]);
    h.push(&[(T, acct(90, 6))]);
    h.push(&[(other(1), acct(1, 0))]);
    h.push(&[(T, acct(7, 3 * 1024))]);
    h.push(&[(other(2), acct(1, 0))]);
    h.push(&[(T, acct(3, 5 * 1024))]);
    h.push(&[(T, acct(4, 5 * 1024 + 1))]);
    h.push(&[(other(3), acct(1, 0))]);
    h
}

#[test]
fn pawn_incarnations_are_merged() {
    let h = two_pawn_history();
    let b = h.build(&T).unwrap();
    assert_eq!(b.last_active, 1);
    assert_eq!(
        b.pawn_proofs.iter().map(|(j, _)| *j).collect::<Vec<_>>(),
        vec![3, 5, 6]
    );
    assert!(b.void_proofs.is_empty());
    let r = h.verify(&b, None).unwrap();
    // last state of each run: 90 (k=1), 7 (run 3), 4 (run 5..=6)
    assert_eq!(r.balance, 90 + 7 + 4);
    assert_eq!(r.nonce, 6 + 3 * 1024 + 5 * 1024 + 1);
    assert!(r.restored);

    let eff = effective_account(&h.store, &h, &T, h.latest(), None).unwrap().unwrap();
    assert_eq!((eff.balance, eff.nonce), (r.balance, r.nonce));
}

#[test]
fn live_pawn_is_merged_and_replaces_latest_run() {
    let mut h = History::new(big());
    h.push(&[(T, acct(50, 1))]);
    h.push(&[(other(0), acct(1, 0))]);
    h.push(&[(T, acct(8, 2048))]);
    let b = h.build(&T).unwrap();
    assert_eq!(b.pawn_proofs.len(), 1);
    // the pawn at checkpoint 2 has moved on in the working trie
    let live = acct(6, 2049);
    let r = h.verify(&b, Some(live)).unwrap();
    assert_eq!((r.balance, r.nonce), (56, 2050));
    let eff = effective_account(&h.store, &h, &T, 2, Some(live)).unwrap().unwrap();
    assert_eq!(eff.balance, 56);

    // a pawn born this epoch, absent from every later checkpoint
    let mut h = History::new(big());
    h.push(&[(T, acct(50, 1))]);
    h.push(&[(other(0), acct(1, 0))]);
    let b = h.build(&T).unwrap();
    let r = h.verify(&b, Some(acct(2, 2048))).unwrap();
    assert_eq!(r.balance, 52);
}

#[test]
fn restored_live_state_is_not_dormant() {
    let h = two_pawn_history();
    let b = h.build(&T).unwrap();
    let live = Account {
        restored: true,
        ..acct(1, 1)
    };
    assert_eq!(h.verify(&b, Some(live)), Err(RestoreError::NotDormant));
}

#[test]
fn stale_claim_before_a_restored_incarnation_fails() {
    // T at 0, swept at 1, restored during epoch 2, swept at 3
    let mut h = History::new(big());
    h.push(&[(T, acct(10, 1))]);
    h.push(&[(other(0), acct(1, 0))]);
    let restored = Account {
        restored: true,
        ..acct(9, 2)
    };
    h.push(&[(T, restored)]);
    h.push(&[(other(1), acct(1, 0))]);
    let honest = h.build(&T).unwrap();
    assert_eq!(honest.last_active, 2);
    assert_eq!(h.verify(&honest, None).unwrap().balance, 9);

    let path = TriePath::secure(&T.0);
    let membership_at = |j: usize| prove_membership(&h.store, &h.roots[j], &path).unwrap();
    let void_at = |j: usize| prove_void(&h.store, &h.roots[j], &path).unwrap();
    let mut stale = RestoreBundle {
        target: T,
        last_active: 0,
        membership: membership_at(0),
        void_proofs: BTreeMap::new(),
        pawn_proofs: vec![(2, membership_at(2))],
    };
    assert_eq!(h.verify(&stale, None), Err(RestoreError::PawnRestored(2)));
    stale.pawn_proofs.clear();
    assert_eq!(
        h.verify(&stale, None),
        Err(RestoreError::IncompleteCoverage(2))
    );
    // a void proof cannot be forged for a checkpoint that holds T
    let mut forged = void_at(1);
    forged.nodes = membership_at(2).nodes;
    stale.void_proofs.insert(2, forged);
    assert!(matches!(
        h.verify(&stale, None),
        Err(RestoreError::BadVoid { index: 2, .. })
    ));
}

#[test]
fn claiming_a_mid_incarnation_checkpoint_fails() {
    let h = two_pawn_history();
    let path = TriePath::secure(&T.0);
    let proof_at = |j: usize| prove_membership(&h.store, &h.roots[j], &path).unwrap();
    // k = 0 while T continued into checkpoint 1
    let b = RestoreBundle {
        target: T,
        last_active: 0,
        membership: proof_at(0),
        void_proofs: BTreeMap::new(),
        pawn_proofs: vec![(1, proof_at(1)), (3, proof_at(3)), (5, proof_at(5)), (6, proof_at(6))],
    };
    assert_eq!(h.verify(&b, None), Err(RestoreError::PawnContinuesTarget(1)));
}

#[test]
fn structural_rejections() {
    let h = two_pawn_history();
    let good = h.build(&T).unwrap();

    let mut b = good.clone();
    b.last_active = h.latest();
    assert!(matches!(h.verify(&b, None), Err(RestoreError::NotBeforeLatest { .. })));

    let mut b = good.clone();
    b.membership.nodes[0][3] ^= 1;
    assert_eq!(
        h.verify(&b, None),
        Err(RestoreError::BadMembership(ProofError::RootMismatch))
    );

    let mut b = good.clone();
    let last = b.pawn_proofs.len() - 1;
    let n = b.pawn_proofs[last].1.nodes.len() - 1;
    b.pawn_proofs[last].1.nodes[n][2] ^= 1;
    assert!(matches!(h.verify(&b, None), Err(RestoreError::BadPawn { index: 6, .. })));

    let mut b = good.clone();
    let dup = b.pawn_proofs[0].clone();
    b.pawn_proofs.push(dup);
    assert_eq!(h.verify(&b, None), Err(RestoreError::DuplicateProof(3)));

    let mut b = good.clone();
    b.target = other(0);
    assert!(matches!(h.verify(&b, None), Err(RestoreError::BadMembership(_))));

    let mut b = good;
    b.void_proofs.insert(99, VoidProof::default());
    assert_eq!(h.verify(&b, None), Err(RestoreError::UnexpectedProof(99)));
}

#[test]
fn builder_errors() {
    let mut h = History::new(big());
    h.push(&[(other(0), acct(1, 0))]);
    h.push(&[(T, acct(1, 0))]);
    assert_eq!(h.build(&other(5)), Err(RestoreError::NoHistory));
    assert_eq!(h.build(&T), Err(RestoreError::NotDormant));
}

#[test]
fn bundle_codec_roundtrip() {
    let h = two_pawn_history();
    let mut b = h.build(&T).unwrap();
    b.void_proofs.insert(
        2,
        prove_void(&h.store, &h.roots[2], &TriePath::secure(&T.0)).unwrap(),
    );
    let bytes = b.encode();
    assert_eq!(RestoreBundle::decode(&bytes).unwrap(), b);
    assert!(RestoreBundle::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut trailing = bytes;
    trailing.push(0);
    assert!(RestoreBundle::decode(&trailing).is_err());
}

#[test]
fn apply_restore_moves_fee_and_state() {
    let mut h = History::new(big());
    let sponsor = other(9);
    let miner = other(10);
    h.push(&[(T, acct(40, 3)), (sponsor, acct(100, 0))]);
    h.push(&[(sponsor, acct(100, 0))]);
    h.push(&[(sponsor, acct(100, 0))]);
    let bundle = h.build(&T).unwrap();
    let resolver = EthanosResolver {
        checkpoint_root: h.roots[2],
        rule: RespawnRule::default(),
    };
    let state = StateRef {
        root: EMPTY_ROOT,
        block_number: 3 * 10 + 1,
    };
    let mut tx = Transaction {
        from: sponsor,
        to: crate::state::RESTORE_ADDRESS,
        value: 0,
        fee: 5,
        nonce: 0,
        payload: Some(bundle.encode()),
    };
    let mut store = core::mem::take(&mut h.store);
    let root = apply_restore(&mut store, &state, &resolver, &h, 2, &tx, &miner).unwrap();
    let read = |a: &Address| read_account(&store, &root, a).unwrap().unwrap();
    assert_eq!((read(&sponsor).balance, read(&sponsor).nonce), (95, 1));
    let t = read(&T);
    assert_eq!((t.balance, t.nonce, t.restored), (40, 3, true));
    assert_eq!(read(&miner).balance, 5);

    // a second restore in the same epoch sees the restored live state
    tx.nonce = 1;
    let again = StateRef { root, ..state };
    assert_eq!(
        apply_restore(&mut store, &again, &resolver, &h, 2, &tx, &miner),
        Err(TxError::Restore(RestoreError::NotDormant))
    );
    tx.value = 1;
    assert_eq!(
        apply_restore(&mut store, &again, &resolver, &h, 2, &tx, &miner),
        Err(TxError::Restore(RestoreError::NonZeroValue))
    );
    tx.value = 0;
    tx.from = T;
    assert_eq!(
        apply_restore(&mut store, &again, &resolver, &h, 2, &tx, &miner),
        Err(TxError::Restore(RestoreError::SelfSponsor))
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Random presence patterns of unrestored states: a bundle exists iff the
    /// oldest incarnation ended before the latest checkpoint, and the merge
    /// equals the independently summed run tails.
    #[test]
    fn build_verify_roundtrip(pattern in prop::collection::vec(any::<bool>(), 2..9), bals in prop::collection::vec(0u128..1000, 9)) {
        let mut h = History::new(big());
        for (j, present) in pattern.iter().enumerate() {
            let mut accts = vec![(other(j as u64), acct(1, 0))];
            if *present {
                accts.push((T, acct(bals[j], j as u64)));
            }
            h.push(&accts);
        }
        let latest = h.latest() as usize;
        let first_end = pattern.iter().position(|p| *p).map(|s| {
            (s..pattern.len()).take_while(|i| pattern[*i]).last().unwrap()
        });
        match (first_end, h.build(&T)) {
            (None, r) => prop_assert_eq!(r, Err(RestoreError::NoHistory)),
            (Some(e), r) if e == latest => prop_assert_eq!(r, Err(RestoreError::NotDormant)),
            (Some(_), Ok(b)) => {
                // tails of every run
                let mut expect = 0u128;
                for j in 0..pattern.len() {
                    if pattern[j] && (j + 1 == pattern.len() || !pattern[j + 1]) {
                        expect += bals[j];
                    }
                }
                let got = h.verify(&b, None).unwrap();
                prop_assert_eq!(got.balance, expect);
                let eff = effective_account(&h.store, &h, &T, latest as u64, None).unwrap().unwrap();
                prop_assert_eq!(eff.balance, expect);
            }
            (Some(_), Err(e)) => prop_assert!(false, "unexpected {e:?}"),
        }
    }
}
