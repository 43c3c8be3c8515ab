//! Dormancy, restore and replication through the public API only.

use ethanos_core::bloom::BloomParams;
use ethanos_core::chain::{Block, BlockError, Chain, ChainConfig, Engine, EpochConfig};
use ethanos_core::hash::{Address, Hash};
use ethanos_core::restoration::RestoreBundle;
use ethanos_core::state::{Transaction, TxError, RESTORE_ADDRESS, UNIT};
use ethanos_core::storage::{DataCategory, KvStore};

const EPOCH: u64 = 3;
const CAP: u64 = 8;
const MINER: Address = Address::from_low_u64(0x3000);

fn user(i: u64) -> Address {
    Address::from_low_u64(0x200 + i)
}

fn genesis() -> Chain {
    let config = ChainConfig {
        engine: Engine::Ethanos,
        epoch: EpochConfig {
            epoch_length: EPOCH,
            max_txs_per_acct_per_block: CAP,
            block_reward: UNIT,
            bloom: BloomParams { bits: 512, hashes: 3 },
        },
        miners: vec![MINER],
    };
    Chain::new(config, &[(user(0), 50 * UNIT), (user(1), 50 * UNIT)]).unwrap()
}

fn send(c: &Chain, from: Address, to: Address, value: u128) -> Transaction {
    let nonce = c.account(&from).unwrap().unwrap().nonce;
    Transaction::transfer(from, to, value, 1, nonce)
}

fn mine(c: &mut Chain, txs: &[Transaction]) -> Block {
    let p = c.produce_block(txs).unwrap();
    assert!(p.excluded.is_empty(), "{:?}", p.excluded);
    p.block
}

#[test]
fn dormant_account_is_restored_and_replicated() {
    let mut host = genesis();
    let mut blocks = Vec::new();
    let tx = send(&host, user(0), user(1), 5 * UNIT);
    blocks.push(mine(&mut host, &[tx]));
    // user(0) sits out epochs 2 and 3 while user(1) stays busy.
    while host.head() < 3 * EPOCH {
        let tx = send(&host, user(1), MINER, 1);
        blocks.push(mine(&mut host, &[tx]));
    }
    assert_eq!(host.account(&user(0)).unwrap(), None);
    let dormant = host.effective_account(&user(0)).unwrap().unwrap();
    assert_eq!(dormant.balance, 45 * UNIT - 1);
    assert_eq!(
        host.validate(&Transaction::transfer(user(0), user(1), 1, 1, 1)),
        Err(TxError::UnknownSender)
    );

    let bundle = host.build_restore(&user(0)).unwrap();
    assert_eq!(bundle.last_active, 1);
    let payload = bundle.encode();
    assert_eq!(RestoreBundle::decode(&payload).unwrap(), bundle);
    let restore = Transaction {
        from: MINER,
        to: RESTORE_ADDRESS,
        value: 0,
        fee: 1,
        nonce: host.account(&MINER).unwrap().unwrap().nonce,
        payload: Some(payload),
    };
    blocks.push(mine(&mut host, &[restore.clone()]));
    let restored = host.account(&user(0)).unwrap().unwrap();
    assert!(restored.restored);
    assert_eq!(restored.balance, dormant.balance);
    assert_eq!(restored.nonce, 1);

    // A second restore of the same incarnation is stale.
    let again = Transaction {
        nonce: restore.nonce + 1,
        ..restore
    };
    assert!(matches!(host.validate(&again), Err(TxError::Restore(_))));

    let mut replica = genesis();
    for b in &blocks {
        replica.verify_block(b).unwrap();
        replica.import_block(b).unwrap();
    }
    assert_eq!(replica.head_header(), host.head_header());
    assert_eq!(replica.store().stats(), host.store().stats());
}

#[test]
fn tampered_blocks_are_rejected() {
    let mut host = genesis();
    let tx = send(&host, user(0), user(1), UNIT);
    let block = mine(&mut host, &[tx]);
    let replica = genesis();

    let mut bad = block.clone();
    bad.header.state_root = Hash([1; 32]);
    assert_eq!(replica.verify_block(&bad), Err(BlockError::StateRoot));

    let mut bad = block.clone();
    bad.txs[0].value += 1;
    assert_eq!(replica.verify_block(&bad), Err(BlockError::TxRoot));

    let mut bad = block.clone();
    bad.header.prev_hash = Hash([2; 32]);
    assert_eq!(replica.verify_block(&bad), Err(BlockError::PrevHash));

    let mut bad = block;
    bad.header.number = 2;
    assert_eq!(replica.verify_block(&bad), Err(BlockError::Number { expected: 1, got: 2 }));
}

#[test]
fn store_dump_survives_reload() {
    let mut host = genesis();
    for _ in 0..2 * EPOCH {
        let tx = send(&host, user(1), user(0), 1);
        mine(&mut host, &[tx]);
    }
    let dump = host.store().dump();
    let back = KvStore::load(&dump).unwrap();
    assert_eq!(back.stats(), host.store().stats());
    assert_eq!(back.dump(), dump);
    assert!(back.stats().get(DataCategory::TrieNodes) > 0);
    assert!(KvStore::load(&dump[..dump.len() - 1]).is_err());
}
