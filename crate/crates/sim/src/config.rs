//! `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the CLI
//! flag names with underscores (`epoch_len`, `bloom_bits`, ...). Values on
//! the command line override the file.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use ethanos_core::bloom::BloomParams;
use ethanos_core::chain::Engine;

use crate::runner::RunConfig;
use crate::sync::{PivotPolicy, SyncMode};
use crate::workload::{ActivityModel, Funding, Trace, TxsPerBlock, WorkloadSpec};

pub const KEYS: [&str; 18] = [
    "seed",
    "epoch_len",
    "bloom_bits",
    "bloom_hashes",
    "pivot_policy",
    "out_dir",
    "accounts",
    "blocks",
    "txs_per_block",
    "max_txs_per_block",
    "model",
    "ratio",
    "session_sends",
    "wake_probability",
    "funding",
    "engine",
    "mode",
    "batch_size",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {0}: expected key = value")]
    Syntax(usize),
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("{key}: cannot parse {value:?}")]
    Value { key: String, value: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    values: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<KeyValues, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
            let key = k.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { line: i + 1, key });
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(KeyValues { values })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.values
            .get(key)
            .map(|v| {
                v.parse().map_err(|_| ConfigError::Value {
                    key: key.to_string(),
                    value: v.clone(),
                })
            })
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn out_dir(&self) -> Result<PathBuf, ConfigError> {
        self.or("out_dir", PathBuf::from("out"))
    }

    pub fn workload_spec(&self) -> Result<WorkloadSpec, ConfigError> {
        let d = WorkloadSpec::default();
        let bad = |key: &str, value: &str| ConfigError::Value {
            key: key.to_string(),
            value: value.to_string(),
        };
        let (session_sends, wake_probability) = match d.activity {
            ActivityModel::Bands {
                session_sends,
                wake_probability,
            } => (session_sends, wake_probability),
            _ => (4.0, 0.25),
        };
        let model: String = self.or("model", "bands".to_string())?;
        let activity = match model.as_str() {
            "bands" => ActivityModel::Bands {
                session_sends: self.or("session_sends", session_sends)?,
                wake_probability: self.or("wake_probability", wake_probability)?,
            },
            "uniform" => ActivityModel::Uniform,
            "ratio" => ActivityModel::TargetRatio {
                ratio: self.or("ratio", 0.1)?,
            },
            other => return Err(bad("model", other)),
        };
        let funding: String = self.or("funding", "funded".to_string())?;
        let funding = match funding.as_str() {
            "funded" => Funding::Funded,
            "zero-value" | "zero_value" => Funding::ZeroValue,
            other => return Err(bad("funding", other)),
        };
        let txs_per_block = match self.get::<String>("txs_per_block")? {
            None => d.txs_per_block,
            Some(v) => match v.split_once("..") {
                Some((a, b)) => TxsPerBlock::Uniform {
                    min: a.trim().parse().map_err(|_| bad("txs_per_block", &v))?,
                    max: b.trim().parse().map_err(|_| bad("txs_per_block", &v))?,
                },
                None => TxsPerBlock::Fixed {
                    n: v.parse().map_err(|_| bad("txs_per_block", &v))?,
                },
            },
        };
        Ok(WorkloadSpec {
            accounts: self.or("accounts", d.accounts)?,
            blocks: self.or("blocks", d.blocks)?,
            epoch_length: self.or("epoch_len", d.epoch_length)?,
            txs_per_block,
            max_txs_per_acct_per_block: self.or("max_txs_per_block", d.max_txs_per_acct_per_block)?,
            activity,
            funding,
            seed: self.or("seed", d.seed)?,
        })
    }

    /// Run settings for `trace`; epoch length and cap default to the trace's.
    pub fn run_config(&self, trace: &Trace) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::for_trace(trace);
        cfg.epoch.epoch_length = self.or("epoch_len", cfg.epoch.epoch_length)?;
        cfg.epoch.max_txs_per_acct_per_block =
            self.or("max_txs_per_block", cfg.epoch.max_txs_per_acct_per_block)?;
        cfg.epoch.bloom = BloomParams {
            bits: self.or("bloom_bits", cfg.epoch.bloom.bits)?,
            hashes: self.or("bloom_hashes", cfg.epoch.bloom.hashes)?,
        };
        Ok(cfg)
    }

    pub fn pivot_policy(&self) -> Result<Option<PivotPolicy>, ConfigError> {
        self.get("pivot_policy")
    }

    pub fn engine(&self) -> Result<Engine, ConfigError> {
        let v: String = self.or("engine", "ethanos".to_string())?;
        match v.as_str() {
            "ethanos" => Ok(Engine::Ethanos),
            "vanilla" => Ok(Engine::Vanilla),
            _ => Err(ConfigError::Value {
                key: "engine".into(),
                value: v,
            }),
        }
    }

    pub fn mode(&self) -> Result<SyncMode, ConfigError> {
        self.or("mode", SyncMode::Compact)
    }

    pub fn batch_size(&self) -> Result<usize, ConfigError> {
        self.or("batch_size", crate::sync::SyncOptions::default().batch_size)
    }
}
