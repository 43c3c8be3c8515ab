//! CSV and JSON artifacts of a dual run.
//!
//! Column order is fixed by the row structs below and documented in the
//! README. Timings are left out so reruns with the same seed produce
//! byte-identical files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ethanos_core::hash::Address;
use serde::Serialize;

use crate::runner::{DualRun, MetricsRow, RestoreRecord};
use crate::workload::{Trace, BANDS};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no checkpoint rows to report")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

const ACTIVE_RATIO_COLUMNS: [&str; 5] = [
    "checkpoint",
    "block",
    "active_accounts",
    "total_accounts",
    "active_ratio",
];

#[derive(Serialize)]
struct ActiveRatioRow {
    checkpoint: u64,
    block: u64,
    active_accounts: u64,
    total_accounts: u64,
    active_ratio: f64,
}

const TRIE_SIZE_COLUMNS: [&str; 8] = [
    "checkpoint",
    "block",
    "vanilla_trie_nodes",
    "vanilla_trie_bytes",
    "ethanos_trie_nodes",
    "ethanos_trie_bytes",
    "vanilla_store_bytes",
    "ethanos_store_bytes",
];

#[derive(Serialize)]
struct TrieSizeRow {
    checkpoint: u64,
    block: u64,
    vanilla_trie_nodes: u64,
    vanilla_trie_bytes: u64,
    ethanos_trie_nodes: u64,
    ethanos_trie_bytes: u64,
    vanilla_store_bytes: u64,
    ethanos_store_bytes: u64,
}

const SYNC_SIZE_COLUMNS: [&str; 13] = [
    "checkpoint",
    "engine",
    "mode",
    "pivot_policy",
    "pivot",
    "headers",
    "bodies",
    "receipts",
    "trie_nodes",
    "tx_index",
    "other",
    "stored_total",
    "wire_total",
];

#[derive(Serialize)]
struct SyncSizeRow {
    checkpoint: u64,
    engine: String,
    mode: String,
    pivot_policy: String,
    pivot: u64,
    headers: u64,
    bodies: u64,
    receipts: u64,
    trie_nodes: u64,
    tx_index: u64,
    other: u64,
    stored_total: u64,
    wire_total: u64,
}

const RESTORE_COUNT_COLUMNS: [&str; 5] = [
    "checkpoint",
    "normal_txs",
    "restore_txs",
    "restore_bytes",
    "restore_fraction",
];

#[derive(Serialize)]
struct RestoreCountRow {
    checkpoint: u64,
    normal_txs: u64,
    restore_txs: u64,
    restore_bytes: u64,
    restore_fraction: f64,
}

const RESTORE_COLUMNS: [&str; 8] = [
    "block",
    "target",
    "last_active",
    "void_proofs",
    "pawn_proofs",
    "proof_count",
    "bundle_bytes",
    "tx_bytes",
];

#[derive(Serialize)]
struct RestoreRow {
    block: u64,
    target: Address,
    last_active: u64,
    void_proofs: usize,
    pawn_proofs: usize,
    proof_count: usize,
    bundle_bytes: usize,
    tx_bytes: usize,
}

impl From<&RestoreRecord> for RestoreRow {
    fn from(r: &RestoreRecord) -> Self {
        RestoreRow {
            block: r.block,
            target: r.target,
            last_active: r.last_active,
            void_proofs: r.void_proofs,
            pawn_proofs: r.pawn_proofs,
            proof_count: r.proof_count,
            bundle_bytes: r.bundle_bytes,
            tx_bytes: r.tx_bytes,
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    accounts: u64,
    blocks: u64,
    epoch_length: u64,
    normal_txs: u64,
    restore_txs: u64,
    vanilla_head_root: String,
    ethanos_head_root: String,
    /// Modeling choice: calendar distance bands expressed in blocks.
    band_mapping: Vec<BandMapping<'a>>,
    rows: &'a [MetricsRow],
}

#[derive(Serialize)]
struct BandMapping<'a> {
    band: &'a str,
    share: f64,
    gap_blocks: f64,
}

/// Writes `header` even when there are no rows; it must match `T`'s fields.
fn write_csv<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = T>,
) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every artifact into `dir` and returns the paths written.
pub fn emit_report(dir: &Path, trace: &Trace, run: &DualRun) -> Result<Vec<PathBuf>, ReportError> {
    let rows = &run.rows;
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    fs::create_dir_all(dir)?;
    let path = |name: &str| dir.join(name);
    let mut written = Vec::new();

    let p = path("active_ratio.csv");
    write_csv(
        &p,
        &ACTIVE_RATIO_COLUMNS,
        rows.iter().map(|r| ActiveRatioRow {
            checkpoint: r.checkpoint,
            block: r.block,
            active_accounts: r.active_accounts,
            total_accounts: r.total_accounts,
            active_ratio: r.active_accounts as f64 / r.total_accounts.max(1) as f64,
        }),
    )?;
    written.push(p);

    let p = path("trie_sizes.csv");
    write_csv(
        &p,
        &TRIE_SIZE_COLUMNS,
        rows.iter().map(|r| TrieSizeRow {
            checkpoint: r.checkpoint,
            block: r.block,
            vanilla_trie_nodes: r.vanilla_trie_nodes,
            vanilla_trie_bytes: r.vanilla_trie_bytes,
            ethanos_trie_nodes: r.ethanos_trie_nodes,
            ethanos_trie_bytes: r.ethanos_trie_bytes,
            vanilla_store_bytes: r.vanilla_store_bytes,
            ethanos_store_bytes: r.ethanos_store_bytes,
        }),
    )?;
    written.push(p);

    let p = path("sync_sizes.csv");
    write_csv(
        &p,
        &SYNC_SIZE_COLUMNS,
        rows.iter().flat_map(|r| {
            r.syncs.iter().map(move |s| SyncSizeRow {
                checkpoint: r.checkpoint,
                engine: format!("{:?}", s.engine).to_lowercase(),
                mode: s.mode.to_string(),
                pivot_policy: s.pivot_policy.to_string(),
                pivot: s.pivot,
                headers: s.stored.headers,
                bodies: s.stored.bodies,
                receipts: s.stored.receipts,
                trie_nodes: s.stored.trie_nodes,
                tx_index: s.stored.tx_index,
                other: s.stored.other,
                stored_total: s.stored.total(),
                wire_total: s.wire_bytes,
            })
        }),
    )?;
    written.push(p);

    let p = path("restore_counts.csv");
    write_csv(
        &p,
        &RESTORE_COUNT_COLUMNS,
        rows.iter().map(|r| RestoreCountRow {
            checkpoint: r.checkpoint,
            normal_txs: r.normal_txs,
            restore_txs: r.restore_txs,
            restore_bytes: r.restore_bytes,
            restore_fraction: r.restore_txs as f64 / (r.normal_txs + r.restore_txs).max(1) as f64,
        }),
    )?;
    written.push(p);

    let p = path("restores.csv");
    write_csv(&p, &RESTORE_COLUMNS, run.ethanos.restores.iter().map(RestoreRow::from))?;
    written.push(p);

    let spec = &trace.meta.spec;
    let summary = Summary {
        seed: spec.seed,
        accounts: spec.accounts,
        blocks: spec.blocks,
        epoch_length: spec.epoch_length,
        normal_txs: run.ethanos.normal_txs,
        restore_txs: run.ethanos.restore_txs(),
        vanilla_head_root: run.vanilla.chain.head_header().state_root.to_hex(),
        ethanos_head_root: run.ethanos.chain.head_header().state_root.to_hex(),
        band_mapping: BANDS
            .iter()
            .map(|(band, share, gap)| BandMapping {
                band,
                share: *share,
                gap_blocks: (gap * spec.epoch_length as f64).max(1.0),
            })
            .collect(),
        rows,
    };
    let p = path("metrics.json");
    fs::write(&p, serde_json::to_vec_pretty(&summary)?)?;
    written.push(p);
    Ok(written)
}
