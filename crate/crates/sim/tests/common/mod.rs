#![allow(dead_code)]

use ethanos_core::bloom::BloomParams;
use ethanos_core::chain::Engine;
use ethanos_sim::runner::{run_engine, EngineRun, RunConfig};
use ethanos_sim::workload::{generate_workload, Trace, TxsPerBlock, WorkloadSpec};

pub fn spec(accounts: u64, blocks: u64, epoch_length: u64, seed: u64) -> WorkloadSpec {
    WorkloadSpec {
        accounts,
        blocks,
        epoch_length,
        txs_per_block: TxsPerBlock::Fixed { n: 8 },
        seed,
        ..WorkloadSpec::default()
    }
}

pub fn trace(accounts: u64, blocks: u64, epoch_length: u64, seed: u64) -> Trace {
    generate_workload(&spec(accounts, blocks, epoch_length, seed)).unwrap()
}

pub fn config(trace: &Trace) -> RunConfig {
    let mut cfg = RunConfig::for_trace(trace);
    cfg.epoch.bloom = BloomParams { bits: 2048, hashes: 4 };
    cfg.parallel = false;
    cfg
}

pub fn host(trace: &Trace, engine: Engine) -> EngineRun {
    run_engine(trace, engine, &config(trace)).unwrap()
}
