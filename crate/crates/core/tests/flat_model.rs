//! Block execution checked against a flat account map that models sweeping
//! by last-touched epoch instead of tries and checkpoints.

use std::collections::BTreeMap;

use ethanos_core::bloom::BloomParams;
use ethanos_core::chain::{Chain, ChainConfig, Engine, EpochConfig};
use ethanos_core::hash::Address;
use ethanos_core::state::{Account, Transaction};
use proptest::prelude::*;

struct Flat {
    engine: Engine,
    epoch_length: u64,
    cap: u64,
    reward: u128,
    miners: Vec<Address>,
    /// State and the last epoch in which the account was written.
    accounts: BTreeMap<Address, (Account, u64)>,
}

impl Flat {
    fn epoch(&self, block: u64) -> u64 {
        if block == 0 {
            0
        } else {
            (block - 1) / self.epoch_length + 1
        }
    }

    /// Ethanos sees an account only if it was written this epoch or last.
    fn live(&self, a: &Address, block: u64) -> Option<Account> {
        let (acct, touched) = self.accounts.get(a)?;
        match self.engine {
            Engine::Vanilla => Some(*acct),
            Engine::Ethanos => (touched + 1 >= self.epoch(block)).then_some(*acct),
        }
    }

    fn live_or_new(&self, a: &Address, block: u64) -> Account {
        self.live(a, block).unwrap_or(Account {
            nonce: match self.engine {
                Engine::Vanilla => 0,
                Engine::Ethanos => block * self.cap,
            },
            ..Account::default()
        })
    }

    fn write(&mut self, a: Address, acct: Account, block: u64) {
        let e = self.epoch(block);
        self.accounts.insert(a, (acct, e));
    }

    fn credit(&mut self, a: Address, amount: u128, block: u64) {
        let mut acct = self.live_or_new(&a, block);
        acct.balance += amount;
        self.write(a, acct, block);
    }

    /// Applies `txs` as block `block` and returns which were included.
    fn block(&mut self, block: u64, txs: &[Transaction]) -> Vec<bool> {
        let miner = self.miners[((block - 1) % self.miners.len() as u64) as usize];
        let mut sent: BTreeMap<Address, u64> = BTreeMap::new();
        let mut included = Vec::new();
        for tx in txs {
            let count = sent.entry(tx.from).or_default();
            let ok = *count < self.cap
                && tx.fee > 0
                && self.live(&tx.from, block).is_some_and(|s| {
                    s.nonce == tx.nonce && s.balance >= tx.value + tx.fee
                });
            if ok {
                *count += 1;
                let mut s = self.live(&tx.from, block).unwrap();
                s.balance -= tx.value + tx.fee;
                s.nonce += 1;
                self.write(tx.from, s, block);
                self.credit(tx.to, tx.value, block);
                self.credit(miner, tx.fee, block);
            }
            included.push(ok);
        }
        self.credit(miner, self.reward, block);
        included
    }
}

fn addr(i: u8) -> Address {
    Address::from_low_u64(0x100 + u64::from(i))
}

#[derive(Debug, Clone)]
struct Draft {
    from: u8,
    to: u8,
    value: u128,
    fee: u128,
    nonce_skew: i8,
}

fn draft() -> impl Strategy<Value = Draft> {
    (0u8..9, 0u8..9, 0u128..70, 0u128..3, prop_oneof![6 => Just(0i8), 1 => -2i8..3]).prop_map(
        |(from, to, value, fee, nonce_skew)| Draft {
            from,
            to,
            value,
            fee,
            nonce_skew,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn execution_matches_the_flat_model(
        ethanos in any::<bool>(),
        epoch_length in 1u64..6,
        cap in 1u64..4,
        blocks in prop::collection::vec(prop::collection::vec(draft(), 0..7), 1..25),
    ) {
        let engine = if ethanos { Engine::Ethanos } else { Engine::Vanilla };
        let miners = vec![addr(6), addr(7)];
        let config = ChainConfig {
            engine,
            epoch: EpochConfig {
                epoch_length,
                max_txs_per_acct_per_block: cap,
                block_reward: 5,
                bloom: BloomParams { bits: 256, hashes: 3 },
            },
            miners: miners.clone(),
        };
        let alloc: Vec<(Address, u128)> = (0..6).map(|i| (addr(i), 100)).collect();
        let mut chain = Chain::new(config, &alloc).unwrap();
        let mut flat = Flat {
            engine,
            epoch_length,
            cap,
            reward: 5,
            miners,
            accounts: alloc.iter().map(|(a, b)| (*a, (Account::with_balance(*b), 0))).collect(),
        };
        for drafts in blocks {
            let number = chain.head() + 1;
            let mut next: BTreeMap<Address, u64> = BTreeMap::new();
            let txs: Vec<Transaction> = drafts
                .iter()
                .map(|d| {
                    let from = addr(d.from);
                    let base = *next
                        .entry(from)
                        .or_insert_with(|| flat.live(&from, number).map_or(0, |a| a.nonce));
                    next.insert(from, base + 1);
                    let nonce = base.saturating_add_signed(i64::from(d.nonce_skew));
                    Transaction::transfer(from, addr(d.to), d.value, d.fee, nonce)
                })
                .collect();
            let produced = chain.produce_block(&txs).unwrap();
            let expected = flat.block(number, &txs);
            let got: Vec<bool> = {
                let mut v = vec![true; txs.len()];
                for (i, _) in &produced.excluded {
                    v[*i] = false;
                }
                v
            };
            prop_assert_eq!(&got, &expected, "block {}", number);
            for i in 0..9 {
                let a = addr(i);
                prop_assert_eq!(chain.account(&a).unwrap(), flat.live(&a, number + 1), "block {} account {}", number, i);
            }
        }
    }
}
