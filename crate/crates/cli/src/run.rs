//! Shared run plumbing: the output directory record, the worker pool with a
//! single writer, and oracle connection.

use std::fs;
use std::path::Path;
use std::sync::mpsc;
use std::time::Duration;

use anyhow::Context;
use rayon::prelude::*;
use saliency_forge::io::SCHEMA_VERSION;
use saliency_forge::oracle::{HttpOracle, Oracle, OracleEndpoint};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::InputDigest;
use crate::InvalidInput;

/// Version of the run-directory layout written here.
pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub image: String,
    pub error: String,
}

/// `run.json`: everything needed to repeat the run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub tool_version: String,
    pub run_format_version: u32,
    pub manifest_schema_version: u32,
    pub seed: u64,
    pub status: RunStatus,
    pub images: usize,
    pub failures: Vec<Failure>,
    pub inputs: InputDigest,
}

impl RunRecord {
    pub fn new(command: &str, seed: u64, images: usize, failures: Vec<Failure>, inputs: InputDigest) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            run_format_version: RUN_FORMAT_VERSION,
            manifest_schema_version: SCHEMA_VERSION,
            seed,
            status: if failures.is_empty() {
                RunStatus::Complete
            } else {
                RunStatus::Partial
            },
            images,
            failures,
            inputs,
        }
    }
}

pub fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes `config.toml` (fully resolved) and `run.json`.
pub fn write_run_files(dir: &Path, config: &RunConfig, record: &RunRecord) -> anyhow::Result<()> {
    write_text(&dir.join("config.toml"), &config.to_toml())?;
    write_json(&dir.join("run.json"), record)
}

/// Runs `work` over `items` on `workers` threads. Results reach `sink` on
/// the calling thread, one at a time, in completion order.
pub fn for_each_parallel<T, R>(
    workers: usize,
    items: &[T],
    work: impl Fn(usize, &T) -> R + Sync,
    mut sink: impl FnMut(usize, R) -> anyhow::Result<()>,
) -> anyhow::Result<()>
where
    T: Sync,
    R: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("cannot start worker pool")?;
    let (tx, rx) = mpsc::channel::<(usize, R)>();
    let work = &work;
    let pool = &pool;
    std::thread::scope(|scope| {
        scope.spawn(move || {
            pool.install(|| {
                items.par_iter().enumerate().for_each_with(tx, |tx, (i, item)| {
                    // The receiver only hangs up after a write error; the
                    // remaining results are dropped.
                    let _ = tx.send((i, work(i, item)));
                })
            })
        });
        for (i, r) in rx {
            sink(i, r)?;
        }
        Ok(())
    })
}

/// Instantiates the configured oracle; network oracles must pass a health
/// check first.
pub fn connect_oracle(config: &RunConfig) -> anyhow::Result<Box<dyn Oracle>> {
    let endpoint = config
        .oracle
        .as_ref()
        .ok_or_else(|| InvalidInput("this command needs an oracle (--oracle or [oracle])".into()))?;
    match endpoint {
        OracleEndpoint::Network {
            address,
            timeout_secs,
            max_batch,
        } => {
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                return Err(InvalidInput("oracle timeout must be positive".into()).into());
            }
            let client = HttpOracle::new(address, Duration::from_secs_f64(*timeout_secs), *max_batch)?;
            let model = client.health()?;
            eprintln!("oracle {address} is up (model '{model}')");
            Ok(Box::new(client))
        }
        OracleEndpoint::Stub { .. } => Ok(endpoint.connect()?),
    }
}
