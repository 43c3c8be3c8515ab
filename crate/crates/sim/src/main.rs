use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ethanos_sim::config::KeyValues;
use ethanos_sim::persist::{load_trace, save_json, save_store, save_trace};
use ethanos_sim::report::emit_report;
use ethanos_sim::runner::{run_dual, SyncPlan};
use ethanos_sim::sync::{sync, SyncOptions};
use ethanos_sim::workload::{active_ratios, generate_workload};

#[derive(Parser)]
#[command(name = "ethanos", about = "Account-sweeping chain simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epoch_len: Option<u64>,
    #[arg(long)]
    bloom_bits: Option<u32>,
    #[arg(long)]
    bloom_hashes: Option<u8>,
    /// `last-checkpoint` or `head-minus-<n>`.
    #[arg(long)]
    pivot_policy: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a transaction trace.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        accounts: Option<u64>,
        #[arg(long)]
        blocks: Option<u64>,
        /// `n` or `min..max`.
        #[arg(long)]
        txs_per_block: Option<String>,
        /// `bands`, `uniform` or `ratio`.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        ratio: Option<f64>,
        /// `funded` or `zero-value`.
        #[arg(long)]
        funding: Option<String>,
    },
    /// Replay a trace through both engines and write metrics.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        /// Also sync every engine in every mode at each checkpoint.
        #[arg(long)]
        sync_metrics: bool,
    },
    /// Build a host from a trace and sync a client from it.
    Sync {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        /// `ethanos` or `vanilla`.
        #[arg(long)]
        engine: Option<String>,
        /// `full-archive`, `fast` or `compact`.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Write the client's store next to the report.
        #[arg(long)]
        save_store: bool,
    },
    /// Replay a trace and check both engines against the flat ledger.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
    },
}

fn settings(common: &Common, extra: &[(&str, Option<String>)]) -> Result<KeyValues> {
    let mut kv = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            KeyValues::parse(&text)?
        }
        None => KeyValues::default(),
    };
    let flags = [
        ("seed", common.seed.map(|v| v.to_string())),
        ("epoch_len", common.epoch_len.map(|v| v.to_string())),
        ("bloom_bits", common.bloom_bits.map(|v| v.to_string())),
        ("bloom_hashes", common.bloom_hashes.map(|v| v.to_string())),
        ("pivot_policy", common.pivot_policy.clone()),
        ("out_dir", common.out_dir.as_ref().map(|p| p.display().to_string())),
    ];
    for (k, v) in flags.iter().chain(extra) {
        if let Some(v) = v {
            kv.set(k, v);
        }
    }
    Ok(kv)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            common,
            accounts,
            blocks,
            txs_per_block,
            model,
            ratio,
            funding,
        } => {
            let kv = settings(
                &common,
                &[
                    ("accounts", accounts.map(|v| v.to_string())),
                    ("blocks", blocks.map(|v| v.to_string())),
                    ("txs_per_block", txs_per_block),
                    ("model", model),
                    ("ratio", ratio.map(|v| v.to_string())),
                    ("funding", funding),
                ],
            )?;
            let spec = kv.workload_spec()?;
            let trace = generate_workload(&spec)?;
            let dir = kv.out_dir()?;
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("trace.jsonl");
            save_trace(&path, &trace)?;
            let ratios: Vec<String> = active_ratios(&trace).iter().map(|r| format!("{r:.3}")).collect();
            println!(
                "wrote {} ({} transactions; active ratio per epoch: {})",
                path.display(),
                trace.txs.len(),
                ratios.join(" ")
            );
        }
        Command::Run {
            common,
            trace,
            sync_metrics,
        } => {
            let kv = settings(&common, &[])?;
            let trace = load_trace(&trace)?;
            let mut cfg = kv.run_config(&trace)?;
            if sync_metrics {
                let mut plan = SyncPlan::default();
                if let Some(p) = kv.pivot_policy()? {
                    plan.vanilla = p;
                    plan.ethanos = p;
                }
                cfg.sync = Some(plan);
            }
            let run = run_dual(&trace, &cfg)?;
            let files = emit_report(&kv.out_dir()?, &trace, &run)?;
            println!(
                "{} normal and {} restore transactions; ledger agrees with both engines",
                run.ethanos.normal_txs,
                run.ethanos.restore_txs()
            );
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Sync {
            common,
            trace,
            engine,
            mode,
            batch_size,
            save_store: keep_store,
        } => {
            let kv = settings(
                &common,
                &[
                    ("engine", engine),
                    ("mode", mode),
                    ("batch_size", batch_size.map(|v| v.to_string())),
                ],
            )?;
            let trace = load_trace(&trace)?;
            let mut cfg = kv.run_config(&trace)?;
            cfg.parallel = false;
            let engine = kv.engine()?;
            let host = ethanos_sim::runner::run_engine(&trace, engine, &cfg)?;
            let opts = SyncOptions {
                batch_size: kv.batch_size()?,
                pivot: kv.pivot_policy()?.unwrap_or_default(),
                fault: None,
            };
            let mode = kv.mode()?;
            let (client, report) = sync(&host.chain, &host.genesis, mode, &opts)?;
            let dir = kv.out_dir()?;
            std::fs::create_dir_all(&dir)?;
            let name = format!("sync_{:?}_{}", engine, mode).to_lowercase();
            save_json(&dir.join(format!("{name}.json")), &report)?;
            if keep_store {
                save_store(&dir.join(format!("{name}.db")), client.store())?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Verify { common, trace } => {
            let kv = settings(&common, &[])?;
            let trace = load_trace(&trace)?;
            let cfg = kv.run_config(&trace)?;
            match run_dual(&trace, &cfg) {
                Ok(run) => println!(
                    "ok: {} accounts agree with the ledger at {} checkpoints",
                    run.ethanos.ledger.accounts().count(),
                    run.rows.len()
                ),
                Err(e) => bail!("verification failed: {e}"),
            }
        }
    }
    Ok(())
}
