use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use super::tracegen::TraceModel;
use super::HarnessError;
use crate::agent::{Optimizer, TrainConfig};
use crate::qoe::Variant;
use crate::sim::{BitrateLadder, SimConfig, VideoManifest};

/// The 21 loss ratios 0.000, 0.001, ..., 0.020.
pub fn default_loss_set() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 1000.0).collect()
}

/// Parses `"0.01,0.015, 0.02"`.
pub fn parse_loss_set(s: &str) -> Result<Vec<f64>, HarnessError> {
    let set: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| HarnessError::Config(format!("bad loss ratio {t:?}")))
        })
        .collect::<Result<_, _>>()?;
    check_loss_set(&set)?;
    Ok(set)
}

fn check_loss_set(set: &[f64]) -> Result<(), HarnessError> {
    if set.is_empty() || set.iter().any(|p| !(0.0..1.0).contains(p)) {
        return Err(HarnessError::Config("loss set must be non-empty ratios in [0, 1)".into()));
    }
    Ok(())
}

/// Which QoE variants a run reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QoeSelection {
    One(Variant),
    All,
}

impl QoeSelection {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            QoeSelection::One(v) => vec![v],
            QoeSelection::All => Variant::ALL.to_vec(),
        }
    }

    /// Variant used for per-chunk rewards and training.
    pub fn reward_variant(self) -> Variant {
        match self {
            QoeSelection::One(v) => v,
            QoeSelection::All => Variant::Linear,
        }
    }
}

impl FromStr for QoeSelection {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(QoeSelection::All);
        }
        s.parse::<Variant>()
            .map(QoeSelection::One)
            .map_err(|_| HarnessError::Config(format!("qoe must be 1, 2, 3 or all, got {s:?}")))
    }
}

/// Flat key-value run configuration, read from TOML.
///
/// Every key is optional; see the repository README for the full list.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub algo: String,
    /// Algorithms for `compare`; the first is the reference.
    pub algos: Vec<String>,
    pub qoe: String,
    pub traces: Option<PathBuf>,
    pub out: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub manifest: Option<PathBuf>,

    pub ladder_kbps: Vec<u32>,
    pub chunk_duration: f64,
    pub hd_threshold_index: usize,
    pub chunk_count: usize,
    pub size_jitter: f64,
    pub manifest_seed: u64,
    pub slice_size: usize,
    pub header_bytes: usize,
    pub buffer_cap: f64,
    pub history_len: usize,
    pub gen_sizes: Vec<usize>,
    pub code_rates: Vec<f64>,
    pub loss_ewma_weight: f64,
    pub rtt: f64,
    pub loss_set: Vec<f64>,

    pub alpha: f64,
    pub critic_alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub gamma: f64,
    pub workers: usize,
    pub episodes_per_worker: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub clip_norm: f64,
    pub optimizer: String,
    pub asynchronous: bool,
    pub validate_every: usize,
    pub validation_episodes: usize,

    pub mpc_horizon: usize,
    pub bola_gamma_p: f64,
    pub bb_reservoir: f64,
    pub bb_cushion: f64,

    pub trace_count: usize,
    pub trace_duration: f64,
    pub trace_min_mbps: f64,
    pub trace_max_mbps: f64,
    pub trace_dwell: f64,
    pub trace_interval: f64,
    pub trace_jitter: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let train = TrainConfig::default();
        let model = TraceModel::default();
        Self {
            seed: 0,
            algo: "nancy".into(),
            algos: Vec::new(),
            qoe: "all".into(),
            traces: None,
            out: PathBuf::from("out"),
            checkpoints: Vec::new(),
            manifest: None,

            ladder_kbps: sim.ladder.levels_kbps,
            chunk_duration: sim.ladder.chunk_duration,
            hd_threshold_index: sim.ladder.hd_threshold_index,
            chunk_count: 48,
            size_jitter: 0.1,
            manifest_seed: 0,
            slice_size: sim.slice_size,
            header_bytes: sim.header_bytes,
            buffer_cap: sim.buffer_cap,
            history_len: sim.history_len,
            gen_sizes: sim.gen_sizes,
            code_rates: sim.code_rates,
            loss_ewma_weight: sim.loss_ewma_weight,
            rtt: 0.08,
            loss_set: default_loss_set(),

            alpha: train.alpha,
            critic_alpha: train.critic_alpha,
            beta_start: train.beta_start,
            beta_end: train.beta_end,
            gamma: train.gamma,
            workers: train.workers,
            episodes_per_worker: train.episodes_per_worker,
            epochs: train.epochs,
            hidden: train.hidden,
            clip_norm: train.clip_norm,
            optimizer: "adam".into(),
            asynchronous: train.asynchronous,
            validate_every: train.validate_every,
            validation_episodes: 16,

            mpc_horizon: 5,
            bola_gamma_p: 5.0,
            bb_reservoir: 5.0,
            bb_cushion: 10.0,

            trace_count: 40,
            trace_duration: 320.0,
            trace_min_mbps: model.min_mbps,
            trace_max_mbps: model.max_mbps,
            trace_dwell: model.mean_dwell,
            trace_interval: model.interval,
            trace_jitter: model.jitter,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Checks alphabets, ranges and that referenced input paths exist.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.sim_config()?;
        self.train_config()?;
        self.qoe_selection()?;
        check_loss_set(&self.loss_set)?;
        if self.chunk_count < 2 {
            return Err(HarnessError::Config("chunk_count must be at least 2".into()));
        }
        if !(self.rtt >= 0.0) {
            return Err(HarnessError::Config("rtt must be non-negative".into()));
        }
        if self.mpc_horizon == 0 {
            return Err(HarnessError::Config("mpc_horizon must be positive".into()));
        }
        let inputs = self.traces.iter().chain(&self.manifest).chain(&self.checkpoints);
        for p in inputs {
            if !p.exists() {
                return Err(HarnessError::io(p, "does not exist"));
            }
        }
        Ok(())
    }

    pub fn qoe_selection(&self) -> Result<QoeSelection, HarnessError> {
        self.qoe.parse()
    }

    pub fn sim_config(&self) -> Result<SimConfig, HarnessError> {
        let cfg = SimConfig {
            ladder: BitrateLadder {
                levels_kbps: self.ladder_kbps.clone(),
                chunk_duration: self.chunk_duration,
                hd_threshold_index: self.hd_threshold_index,
            },
            slice_size: self.slice_size,
            header_bytes: self.header_bytes,
            buffer_cap: self.buffer_cap,
            history_len: self.history_len,
            gen_sizes: self.gen_sizes.clone(),
            code_rates: self.code_rates.clone(),
            loss_ewma_weight: self.loss_ewma_weight,
            ..SimConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, HarnessError> {
        let optimizer: Optimizer = self.optimizer.parse().map_err(HarnessError::Config)?;
        let cfg = TrainConfig {
            alpha: self.alpha,
            critic_alpha: self.critic_alpha,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            gamma: self.gamma,
            workers: self.workers,
            episodes_per_worker: self.episodes_per_worker,
            epochs: self.epochs,
            seed: self.seed,
            hidden: self.hidden.clone(),
            clip_norm: self.clip_norm,
            optimizer,
            asynchronous: self.asynchronous,
            validate_every: self.validate_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn trace_model(&self) -> TraceModel {
        TraceModel {
            min_mbps: self.trace_min_mbps,
            max_mbps: self.trace_max_mbps,
            mean_dwell: self.trace_dwell,
            interval: self.trace_interval,
            jitter: self.trace_jitter,
        }
    }

    /// Loads the manifest file if one is configured, otherwise synthesizes one.
    pub fn manifest(&self, sim: &SimConfig) -> Result<VideoManifest, HarnessError> {
        match &self.manifest {
            Some(p) => Ok(VideoManifest::load(p)?),
            None => Ok(VideoManifest::synthesize(
                &sim.ladder,
                self.chunk_count,
                self.size_jitter,
                self.manifest_seed,
            )),
        }
    }
}
