//! Run configuration and the tracegen / train / eval / compare commands.

mod config;
mod eval;
mod tracegen;

use std::path::Path;

use thiserror::Error;

use crate::agent::AgentError;
use crate::qoe::QoeError;
use crate::sim::SimError;

pub use config::{default_loss_set, parse_loss_set, QoeSelection, RunConfig};
pub use eval::{
    cmd_compare, cmd_eval, cmd_train, evaluate, load_traces, write_eval_outputs, Algo, CompareRow, EvalReport,
    EvalSetup, Policy, TraceResult, TrainOutputs,
};
pub use tracegen::{format_trace, write_traces, TraceModel};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown algorithm {0:?}; expected nancy, pensieve, robustmpc, bola, rb or bb")]
    UnknownAlgo(String),
    #[error("algorithm {0} needs a checkpoint")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Qoe(#[from] QoeError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}

/// splitmix64 finalizer over `seed ^ salt * golden`.
pub(crate) fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
