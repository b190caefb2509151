//! Library side of the `saliency-forge` command: each subcommand is a
//! function taking a resolved [`RunConfig`], so runs can be driven from
//! tests without spawning the binary.

pub mod commands;
pub mod config;
pub mod dataset;
mod plots;
pub mod run;

use std::path::PathBuf;

use saliency_forge::RngSeed;

pub use commands::aggregate::{cmd_aggregate, AggregateSummary};
pub use commands::evaluate::{cmd_evaluate, EvaluateSummary};
pub use commands::flip_compare::{cmd_flip_compare, FlipCompareSummary};
pub use commands::gen_noise::cmd_gen_noise;
pub use config::RunConfig;

/// Bad flags, config or inputs. Nothing has been written.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InvalidInput(pub String);

/// Some images failed after outputs were started; the run record is marked
/// partial.
#[derive(Debug, thiserror::Error)]
#[error("{failed} of {total} images failed; outputs in {} are partial", dir.display())]
pub struct PartialRun {
    pub failed: usize,
    pub total: usize,
    pub dir: PathBuf,
    pub oracle_unavailable: bool,
}

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_ORACLE_UNAVAILABLE: i32 = 3;

/// Process exit status for an error from any command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use saliency_forge::Error;
    for cause in err.chain() {
        if cause.downcast_ref::<InvalidInput>().is_some() {
            return EXIT_INVALID_INPUT;
        }
        if let Some(p) = cause.downcast_ref::<PartialRun>() {
            return if p.oracle_unavailable {
                EXIT_ORACLE_UNAVAILABLE
            } else {
                EXIT_FAILURE
            };
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Validation(_) | Error::Io { .. } | Error::Parse { .. } => EXIT_INVALID_INPUT,
                Error::OracleUnavailable(_) => EXIT_ORACLE_UNAVAILABLE,
                _ => EXIT_FAILURE,
            };
        }
    }
    EXIT_FAILURE
}

const NOISE_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;

/// Seed for the noise maps appended to image `index`.
pub fn noise_seed(run_seed: u64, index: usize) -> RngSeed {
    RngSeed(run_seed).derive(index as u64).derive(NOISE_STREAM)
}

/// Seed for the RBM trained on image `index`.
pub fn train_seed(run_seed: u64, index: usize) -> RngSeed {
    RngSeed(run_seed).derive(index as u64).derive(TRAIN_STREAM)
}
