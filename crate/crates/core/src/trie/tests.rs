use super::*;
use crate::storage::{DataCategory, KvStore};
use alloc::collections::BTreeMap;
use alloc::vec;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn key(i: u64) -> TriePath {
    TriePath::secure(&i.to_be_bytes())
}

/// Six hex characters padded with zero nibbles to a full path.
fn raw(hex6: &str) -> TriePath {
    let mut nibbles: Vec<u8> = hex6
        .chars()
        .map(|c| c.to_digit(16).unwrap() as u8)
        .collect();
    nibbles.resize(PATH_NIBBLES, 0);
    TriePath::from_nibbles(&nibbles).unwrap()
}

fn build(db: &mut KvStore, entries: &[(TriePath, Vec<u8>)]) -> Hash {
    let mut root = EMPTY_ROOT;
    for (p, v) in entries {
        root = put(db, &root, p, v).unwrap();
    }
    root
}

#[test]
fn single_leaf_root() {
    let mut db = KvStore::new();
    let p = key(1);
    let root = put(&mut db, &EMPTY_ROOT, &p, b"acct").unwrap();
    let leaf = Node::Leaf {
        path: p.nibbles().to_vec(),
        value: b"acct".to_vec(),
    };
    assert_eq!(root, keccak(&leaf.encode()));
    assert_eq!(db.stats().trie_nodes, 32 + leaf.encode().len() as u64);
}

#[test]
fn same_value_same_root() {
    let mut db = KvStore::new();
    let r1 = put(&mut db, &EMPTY_ROOT, &key(1), b"v").unwrap();
    let r2 = put(&mut db, &r1, &key(1), b"v").unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn get_after_put_and_unknown() {
    let mut db = KvStore::new();
    let root = build(&mut db, &[(key(1), b"a".to_vec()), (key(2), b"b".to_vec())]);
    assert_eq!(get(&db, &root, &key(1)).unwrap(), Some(b"a".to_vec()));
    assert_eq!(get(&db, &root, &key(2)).unwrap(), Some(b"b".to_vec()));
    assert_eq!(get(&db, &root, &key(3)).unwrap(), None);
    assert_eq!(get(&db, &EMPTY_ROOT, &key(3)).unwrap(), None);
}

#[test]
fn missing_and_corrupt_nodes_are_integrity_errors() {
    let db = KvStore::new();
    let ghost = keccak(b"ghost");
    assert_eq!(get(&db, &ghost, &key(1)), Err(TrieError::MissingNode(ghost)));
    let mut db = KvStore::new();
    let junk = db.put(DataCategory::TrieNodes, vec![9, 9, 9]);
    assert!(matches!(
        put(&mut db, &junk, &key(1), b"x"),
        Err(TrieError::Corrupt { .. })
    ));
}

#[test]
fn thousand_accounts_against_shadow_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut db = KvStore::new();
    let mut shadow = BTreeMap::new();
    let mut root = EMPTY_ROOT;
    for _ in 0..1000 {
        let k = key(rng.gen_range(0..5000));
        let v: Vec<u8> = (0..rng.gen_range(1..40)).map(|_| rng.gen()).collect();
        root = put(&mut db, &root, &k, &v).unwrap();
        shadow.insert(k, v);
    }
    for (k, v) in &shadow {
        assert_eq!(get(&db, &root, k).unwrap().as_ref(), Some(v));
    }
    let listed = leaves(&db, &root).unwrap();
    assert_eq!(listed.len(), shadow.len());
    assert!(listed.iter().all(|(k, v)| shadow.get(k) == Some(v)));
    assert_eq!(walk(&db, &root).unwrap().leaves, shadow.len() as u64);
}

#[test]
fn old_roots_stay_readable() {
    let mut db = KvStore::new();
    let r1 = build(&mut db, &[(key(1), b"one".to_vec()), (key(2), b"two".to_vec())]);
    let r2 = put(&mut db, &r1, &key(1), b"uno").unwrap();
    let r3 = put(&mut db, &r2, &key(3), b"tres").unwrap();
    assert_eq!(get(&db, &r1, &key(1)).unwrap(), Some(b"one".to_vec()));
    assert_eq!(get(&db, &r1, &key(3)).unwrap(), None);
    assert_eq!(get(&db, &r3, &key(1)).unwrap(), Some(b"uno".to_vec()));
    assert_eq!(get(&db, &r3, &key(2)).unwrap(), Some(b"two".to_vec()));
}

#[test]
fn single_account_proof_is_one_node() {
    let mut db = KvStore::new();
    let root = put(&mut db, &EMPTY_ROOT, &key(9), b"a").unwrap();
    let p = prove_membership(&db, &root, &key(9)).unwrap();
    assert_eq!(p.nodes.len(), 1);
    assert_eq!(verify_membership(&root, &key(9), &p).unwrap(), b"a".to_vec());
}

#[test]
fn empty_trie_void_proof() {
    let db = KvStore::new();
    let p = prove_void(&db, &EMPTY_ROOT, &key(1)).unwrap();
    assert!(p.nodes.is_empty());
    assert_eq!(verify_void(&EMPTY_ROOT, &key(1), &p), Ok(()));
    assert_eq!(
        prove_membership(&db, &EMPTY_ROOT, &key(1)),
        Err(TrieError::Absent)
    );
    // an empty proof says nothing about a non-empty trie
    assert_eq!(
        verify_void(&keccak(b"x"), &key(1), &VoidProof::default()),
        Err(ProofError::Incomplete)
    );
}

/// Five accounts with shared prefixes, keyed by raw address nibbles:
///
/// ```text
/// root branch {a, d}
///   a -> ext "7" -> branch {d, f}
///          d -> ext "3" -> branch {3: a7d337, 9: a7d397}
///          f -> leaf a7f9b2
///   d -> ext "81" -> branch {3: d81355, 5: d815fc}
/// ```
fn five_account_trie(db: &mut KvStore) -> Hash {
    let accounts = ["a7d337", "a7d397", "a7f9b2", "d81355", "d815fc"];
    let entries: Vec<_> = accounts
        .iter()
        .map(|a| (raw(a), a.as_bytes().to_vec()))
        .collect();
    build(db, &entries)
}

#[test]
fn worked_example_proof_depths() {
    let mut db = KvStore::new();
    let root = five_account_trie(&mut db);

    // hand-walked depths: root, ext, branch, leaf
    let p = prove_membership(&db, &root, &raw("d81355")).unwrap();
    assert_eq!(p.nodes.len(), 4);
    assert!(matches!(Node::decode(&p.nodes[1]).unwrap(), Node::Extension { ref path, .. } if path == &[8, 1]));
    // root, ext "7", branch {d,f}, ext "3", branch {3,9}, leaf
    let p = prove_membership(&db, &root, &raw("a7d397")).unwrap();
    assert_eq!(p.nodes.len(), 6);
    let p = prove_membership(&db, &root, &raw("a7f9b2")).unwrap();
    assert_eq!(p.nodes.len(), 4);

    // absent 0xa7ec6b: [root, ext "7", branch {d, f}] and the branch lacks 'e'
    let v = prove_void(&db, &root, &raw("a7ec6b")).unwrap();
    assert_eq!(v.nodes.len(), 3);
    match Node::decode(&v.nodes[2]).unwrap() {
        Node::Branch { children, .. } => {
            assert!(children[0xd].is_some() && children[0xf].is_some());
            assert!(children[0xe].is_none());
            assert_eq!(children.iter().flatten().count(), 2);
        }
        other => panic!("expected branch, got {other:?}"),
    }
    assert_eq!(verify_void(&root, &raw("a7ec6b"), &v), Ok(()));
}

#[test]
fn tampered_membership_proof_fails_chain() {
    let mut db = KvStore::new();
    let root = five_account_trie(&mut db);
    let p = prove_membership(&db, &root, &raw("d815fc")).unwrap();
    for i in 0..p.nodes.len() {
        let mut bad = p.clone();
        bad.nodes[i][1] ^= 0x01;
        let err = verify_membership(&root, &raw("d815fc"), &bad).unwrap_err();
        if i == 0 {
            assert_eq!(err, ProofError::RootMismatch);
        } else {
            assert_eq!(err, ProofError::BrokenChain(i));
        }
    }
}

#[test]
fn proof_for_other_address_is_path_mismatch() {
    let mut db = KvStore::new();
    let root = five_account_trie(&mut db);
    let pa = prove_membership(&db, &root, &raw("a7d337")).unwrap();
    // shares every node with a7d337 down to the leaf
    assert_eq!(
        verify_membership(&root, &raw("a7d33f"), &pa),
        Err(ProofError::PathMismatch)
    );
    // splits off at the root, so the second node is the wrong child
    assert_eq!(
        verify_membership(&root, &raw("d81355"), &pa),
        Err(ProofError::BrokenChain(1))
    );
}

#[test]
fn truncated_membership_is_fake_void() {
    let mut db = KvStore::new();
    let root = five_account_trie(&mut db);
    let p = prove_membership(&db, &root, &raw("a7d397")).unwrap();
    for cut in 1..p.nodes.len() {
        let forged = VoidProof {
            nodes: p.nodes[..cut].to_vec(),
        };
        assert_eq!(
            verify_void(&root, &raw("a7d397"), &forged),
            Err(ProofError::FakeVoid)
        );
    }
    let whole = VoidProof { nodes: p.nodes };
    assert_eq!(
        verify_void(&root, &raw("a7d397"), &whole),
        Err(ProofError::FakeVoid)
    );
}

#[test]
fn wrong_root_rejects_void() {
    let mut db = KvStore::new();
    let root = five_account_trie(&mut db);
    let v = prove_void(&db, &root, &raw("a7ec6b")).unwrap();
    assert_eq!(
        verify_void(&keccak(b"other"), &raw("a7ec6b"), &v),
        Err(ProofError::RootMismatch)
    );
}

#[test]
fn present_and_absent_keys_thousand_each() {
    let mut db = KvStore::new();
    let entries: Vec<_> = (0..1000u64).map(|i| (key(i), i.to_le_bytes().to_vec())).collect();
    let root = build(&mut db, &entries);
    let mut deepest = (0, key(0));
    for (k, v) in &entries {
        let p = prove_membership(&db, &root, k).unwrap();
        if p.nodes.len() > deepest.0 {
            deepest = (p.nodes.len(), *k);
        }
        assert_eq!(&verify_membership(&root, k, &p).unwrap(), v);
        assert_eq!(prove_void(&db, &root, k), Err(TrieError::Present));
    }
    let p = prove_membership(&db, &root, &deepest.1).unwrap();
    assert!(verify_membership(&root, &deepest.1, &p).is_ok());
    for i in 1000..2000u64 {
        let v = prove_void(&db, &root, &key(i)).unwrap();
        assert_eq!(verify_void(&root, &key(i), &v), Ok(()));
        assert_eq!(prove_membership(&db, &root, &key(i)), Err(TrieError::Absent));
    }
}

#[test]
fn proof_codec_roundtrip() {
    let mut db = KvStore::new();
    let root = five_account_trie(&mut db);
    let p = prove_membership(&db, &root, &raw("a7d337")).unwrap();
    let bytes = p.encode();
    assert_eq!(bytes.len(), p.encoded_len());
    assert_eq!(MembershipProof::decode(&bytes).unwrap(), p);
    assert!(MembershipProof::decode(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn average_proof_depth_grows_with_log16() {
    // 2^k random keys: mean depth bounded by k/4 + constant
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in [4u32, 8, 10, 12] {
        let n = 1u64 << k;
        let mut db = KvStore::new();
        let entries: Vec<_> = (0..n).map(|_| (key(rng.gen()), vec![1u8])).collect();
        let root = build(&mut db, &entries);
        let total: usize = entries
            .iter()
            .map(|(p, _)| prove_membership(&db, &root, p).unwrap().nodes.len())
            .sum();
        let mean = total as f64 / n as f64;
        assert!(mean <= k as f64 / 4.0 + 2.5, "k={k}: mean depth {mean}");
    }
}

#[test]
fn commit_moves_only_reachable_nodes() {
    let mut store = KvStore::new();
    let base = put(&mut store, &EMPTY_ROOT, &key(0), b"base").unwrap();
    let before = store.stats().trie_nodes;
    let mut overlay = crate::storage::Overlay::new(&store);
    let mut root = base;
    for i in 1..20u64 {
        root = put(&mut overlay, &root, &key(i), b"v").unwrap();
    }
    let dirty = overlay.into_dirty();
    let reachable = walk(&dirty_and(&store, &dirty), &root).unwrap();
    let written = commit(&mut store, &root, &dirty).unwrap();
    // intermediate roots of the 19 puts are garbage
    assert!(written < dirty.len());
    assert!(written as u64 <= reachable.nodes);
    assert_eq!(walk(&store, &root).unwrap(), reachable);
    assert!(store.stats().trie_nodes - before <= reachable.bytes);
    for i in 0..20u64 {
        assert!(get(&store, &root, &key(i)).unwrap().is_some());
    }
}

struct Both<'a>(&'a KvStore, &'a MemDb);
impl NodeDb for Both<'_> {
    fn node(&self, key: &Hash) -> Option<&[u8]> {
        self.1.node(key).or_else(|| self.0.get(key))
    }
}
fn dirty_and<'a>(s: &'a KvStore, d: &'a MemDb) -> Both<'a> {
    Both(s, d)
}

#[test]
fn root_of_matches_incremental() {
    let entries: Vec<_> = (0..30u64).map(|i| (key(i), i.to_le_bytes().to_vec())).collect();
    let mut db = KvStore::new();
    let root = build(&mut db, &entries);
    assert_eq!(root_of(entries.iter().map(|(p, v)| (*p, v.as_slice()))), root);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn insertion_order_never_changes_root(seed in any::<u64>(), n in 1usize..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries: Vec<_> = (0..n as u64).map(|i| (key(i * 7919 + seed % 13), vec![i as u8; (i % 9) as usize + 1])).collect();
        let mut db = KvStore::new();
        let a = build(&mut db, &entries);
        entries.shuffle(&mut rng);
        let mut db2 = KvStore::new();
        let b = build(&mut db2, &entries);
        prop_assert_eq!(a, b);
        prop_assert_eq!(walk(&db, &a).unwrap(), walk(&db2, &b).unwrap());
    }

    #[test]
    fn exactly_one_proof_kind_and_sound(seed in any::<u64>(), probe in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut db = KvStore::new();
        let mut root = EMPTY_ROOT;
        for _ in 0..rng.gen_range(0..60) {
            root = put(&mut db, &root, &key(rng.gen_range(0..200)), &[rng.gen()]).unwrap();
        }
        let p = key(probe);
        let truth = get(&db, &root, &p).unwrap();
        let m = prove_membership(&db, &root, &p);
        let v = prove_void(&db, &root, &p);
        prop_assert!(m.is_ok() != v.is_ok());
        match truth {
            Some(val) => prop_assert_eq!(verify_membership(&root, &p, &m.unwrap()).unwrap(), val),
            None => prop_assert!(verify_void(&root, &p, &v.unwrap()).is_ok()),
        }
    }

    #[test]
    fn flipped_bit_never_verifies(seed in any::<u64>(), node_pick in any::<usize>(), byte_pick in any::<usize>(), bit in 0u8..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut db = KvStore::new();
        let mut root = EMPTY_ROOT;
        for i in 0..rng.gen_range(1..80u64) {
            root = put(&mut db, &root, &key(i), &i.to_le_bytes()).unwrap();
        }
        let p = key(0);
        let mut proof = prove_membership(&db, &root, &p).unwrap();
        let i = node_pick % proof.nodes.len();
        let j = byte_pick % proof.nodes[i].len();
        proof.nodes[i][j] ^= 1 << bit;
        prop_assert!(verify_membership(&root, &p, &proof).is_err());
    }
}
