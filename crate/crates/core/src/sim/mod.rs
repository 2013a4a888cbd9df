//! Trace-driven streaming environment.
//!
//! One session downloads a video chunk by chunk over a [`Trace`]. Each chunk
//! is cut into slices, protected by systematic network coding, and sent over a
//! link that erases every slice independently with the trace's loss ratio.
//! Generations that arrive short of full rank are repaired in retransmission
//! rounds costing one round trip each.

mod session;
mod trace;
mod video;

use thiserror::Error;

use crate::qoe::QoeError;
use crate::rlnc::{CodecError, HEADER_BYTES};

pub use session::{
    download_chunk, download_uncoded, observe, observation_len, ChannelMode, ChunkRecord,
    DownloadResult, Observation, Session, SessionState, StepOutcome,
};
pub use trace::{load_trace, transfer_time, Trace, TraceSample};
pub use video::VideoManifest;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("io: {0}")]
    Io(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("action {0:?} outside the action alphabets")]
    InvalidAction(Action),
    #[error("chunk could not be delivered within {0} retransmission rounds")]
    Undeliverable(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Qoe(#[from] QoeError),
}

/// Video quality levels available for every chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct BitrateLadder {
    pub levels_kbps: Vec<u32>,
    /// Seconds of playback per chunk.
    pub chunk_duration: f64,
    /// First level counted as HD.
    pub hd_threshold_index: usize,
}

impl Default for BitrateLadder {
    fn default() -> Self {
        Self {
            levels_kbps: vec![300, 750, 1200, 1850, 2850, 4300],
            chunk_duration: 4.0,
            hd_threshold_index: 3,
        }
    }
}

impl BitrateLadder {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.levels_kbps.is_empty() || self.levels_kbps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::Config("ladder must be non-empty and strictly ascending".into()));
        }
        if !(self.chunk_duration > 0.0) || self.hd_threshold_index >= self.levels_kbps.len() {
            return Err(SimError::Config("bad chunk duration or HD threshold".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.levels_kbps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels_kbps.is_empty()
    }

    pub fn max_kbps(&self) -> u32 {
        *self.levels_kbps.last().expect("non-empty ladder")
    }
}

/// Indices into the bitrate, generation-size and code-rate alphabets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub bitrate: usize,
    pub gen_size: usize,
    pub rate: usize,
}

impl Action {
    pub fn new(bitrate: usize, gen_size: usize, rate: usize) -> Self {
        Self {
            bitrate,
            gen_size,
            rate,
        }
    }
}

/// Static environment parameters shared by every session.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub ladder: BitrateLadder,
    pub slice_size: usize,
    pub header_bytes: usize,
    pub buffer_cap: f64,
    pub history_len: usize,
    pub gen_sizes: Vec<usize>,
    pub code_rates: Vec<f64>,
    /// Weight of the newest measurement in the loss EWMA.
    pub loss_ewma_weight: f64,
    /// Bound on repair rounds per generation; only reachable at loss ratio 1.
    pub max_rounds: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            ladder: BitrateLadder::default(),
            slice_size: 1024,
            header_bytes: HEADER_BYTES,
            buffer_cap: 60.0,
            history_len: 8,
            gen_sizes: vec![8, 16, 32, 64],
            code_rates: vec![1.0, 0.95, 0.9, 0.85, 0.8],
            loss_ewma_weight: 0.25,
            max_rounds: 1000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.ladder.validate()?;
        if self.slice_size == 0 || self.history_len == 0 || !(self.buffer_cap > 0.0) {
            return Err(SimError::Config("slice size, history and buffer cap must be positive".into()));
        }
        if self.gen_sizes.is_empty() || self.gen_sizes.contains(&0) {
            return Err(SimError::Config("generation sizes must be non-empty and positive".into()));
        }
        if self.code_rates.is_empty() || self.code_rates.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(SimError::Config("code rates must be non-empty and in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.loss_ewma_weight) {
            return Err(SimError::Config("loss EWMA weight must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn max_gen_size(&self) -> usize {
        *self.gen_sizes.iter().max().expect("non-empty")
    }

    /// Index of the largest generation size.
    pub fn max_gen_index(&self) -> usize {
        let max = self.max_gen_size();
        self.gen_sizes.iter().position(|&k| k == max).expect("present")
    }

    /// Index of the highest code rate (1.0 in the default alphabet).
    pub fn uncoded_rate_index(&self) -> usize {
        let mut best = 0;
        for (i, &r) in self.code_rates.iter().enumerate() {
            if r > self.code_rates[best] {
                best = i;
            }
        }
        best
    }

    /// Action at `bitrate` with no coding redundancy and the largest generations.
    pub fn uncoded_action(&self, bitrate: usize) -> Action {
        Action::new(bitrate, self.max_gen_index(), self.uncoded_rate_index())
    }

    pub fn check_action(&self, a: Action) -> Result<(), SimError> {
        if a.bitrate < self.ladder.len() && a.gen_size < self.gen_sizes.len() && a.rate < self.code_rates.len() {
            Ok(())
        } else {
            Err(SimError::InvalidAction(a))
        }
    }
}
