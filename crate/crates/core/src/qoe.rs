//! Quality-of-experience scoring.
//!
//! `QoE = sum q(R_n) - mu * sum T_n - sum |q(R_{n+1}) - q(R_n)|`, with three
//! choices of `q`: linear in Mbps, log relative to the lowest rung, and a
//! lookup table that favours HD rungs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QoeError {
    #[error("bitrate {0} kbps is not on the ladder")]
    UnknownLevel(u32),
    #[error("empty chunk log")]
    EmptyLog,
    #[error("invalid QoE parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Linear,
    Log,
    Hd,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Linear, Variant::Log, Variant::Hd];

    /// Rebuffering weight paired with each variant.
    pub fn default_mu(self) -> f64 {
        match self {
            Variant::Linear => 4.3,
            Variant::Log => 2.66,
            Variant::Hd => 8.0,
        }
    }

    /// 1-based index used on the command line and in CSV headers.
    pub fn number(self) -> u8 {
        match self {
            Variant::Linear => 1,
            Variant::Log => 2,
            Variant::Hd => 3,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "qoe{}", self.number())
    }
}

impl FromStr for Variant {
    type Err = QoeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "qoe1" | "linear" => Ok(Variant::Linear),
            "2" | "qoe2" | "log" => Ok(Variant::Log),
            "3" | "qoe3" | "hd" => Ok(Variant::Hd),
            other => Err(QoeError::InvalidParams(format!("unknown QoE variant {other:?}"))),
        }
    }
}

/// Per-rung scores for the HD variant on the default six-rung ladder.
pub const DEFAULT_HD_SCORES: [f64; 6] = [1.0, 2.0, 3.0, 12.0, 15.0, 20.0];

#[derive(Debug, Clone, PartialEq)]
pub struct QoeParams {
    pub variant: Variant,
    pub mu: f64,
    levels_kbps: Vec<u32>,
    hd_scores: Vec<f64>,
}

impl QoeParams {
    pub fn new(
        variant: Variant,
        mu: f64,
        levels_kbps: Vec<u32>,
        hd_scores: Vec<f64>,
    ) -> Result<Self, QoeError> {
        if !(mu > 0.0) {
            return Err(QoeError::InvalidParams(format!("mu must be positive, got {mu}")));
        }
        if levels_kbps.is_empty() || levels_kbps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QoeError::InvalidParams("ladder must be non-empty and strictly ascending".into()));
        }
        if hd_scores.len() != levels_kbps.len() || hd_scores.windows(2).any(|w| w[0] > w[1]) {
            return Err(QoeError::InvalidParams(
                "hd scores must be ascending with one entry per ladder level".into(),
            ));
        }
        Ok(Self {
            variant,
            mu,
            levels_kbps,
            hd_scores,
        })
    }

    /// Variant with its standard `mu` and, for six-rung ladders, the standard HD table.
    pub fn standard(variant: Variant, levels_kbps: &[u32]) -> Result<Self, QoeError> {
        let hd = if levels_kbps.len() == DEFAULT_HD_SCORES.len() {
            DEFAULT_HD_SCORES.to_vec()
        } else {
            // Linear ramp for non-standard ladders.
            (1..=levels_kbps.len()).map(|i| i as f64).collect()
        };
        Self::new(variant, variant.default_mu(), levels_kbps.to_vec(), hd)
    }

    pub fn r_min(&self) -> u32 {
        self.levels_kbps[0]
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels_kbps
    }

    pub fn hd_scores(&self) -> &[f64] {
        &self.hd_scores
    }

    fn level_of(&self, r: u32) -> Result<usize, QoeError> {
        self.levels_kbps
            .iter()
            .position(|&l| l == r)
            .ok_or(QoeError::UnknownLevel(r))
    }

    pub fn quality(&self, r: u32) -> Result<f64, QoeError> {
        let level = self.level_of(r)?;
        Ok(self.quality_at(level))
    }

    /// Quality of ladder rung `level`.
    pub fn quality_at(&self, level: usize) -> f64 {
        let r = self.levels_kbps[level];
        match self.variant {
            Variant::Linear => r as f64 / 1000.0,
            Variant::Log => (r as f64 / self.r_min() as f64).ln(),
            Variant::Hd => self.hd_scores[level],
        }
    }

    pub fn chunk_reward(&self, prev_r: Option<u32>, r: u32, rebuffer: f64) -> Result<f64, QoeError> {
        let q = self.quality(r)?;
        let smooth = match prev_r {
            Some(p) => (q - self.quality(p)?).abs(),
            None => 0.0,
        };
        Ok(q - self.mu * rebuffer - smooth)
    }

    pub fn session_qoe(&self, log: &ChunkLog) -> Result<f64, QoeError> {
        if log.entries.is_empty() {
            return Err(QoeError::EmptyLog);
        }
        let q: Vec<f64> = log
            .entries
            .iter()
            .map(|e| self.quality(e.bitrate_kbps))
            .collect::<Result<_, _>>()?;
        let quality: f64 = q.iter().sum();
        let rebuffer: f64 = log.entries.iter().map(|e| e.rebuffer_s).sum();
        let smooth: f64 = q.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        Ok(quality - self.mu * rebuffer - smooth)
    }
}

/// Free-function form of [`QoeParams::quality`].
pub fn quality(params: &QoeParams, r: u32) -> Result<f64, QoeError> {
    params.quality(r)
}

pub fn chunk_reward(params: &QoeParams, prev_r: Option<u32>, r: u32, rebuffer: f64) -> Result<f64, QoeError> {
    params.chunk_reward(prev_r, r, rebuffer)
}

pub fn session_qoe(params: &QoeParams, log: &ChunkLog) -> Result<f64, QoeError> {
    params.session_qoe(log)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkEntry {
    pub bitrate_kbps: u32,
    pub rebuffer_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChunkLog {
    pub entries: Vec<ChunkEntry>,
}

impl ChunkLog {
    pub fn push(&mut self, bitrate_kbps: u32, rebuffer_s: f64) {
        self.entries.push(ChunkEntry {
            bitrate_kbps,
            rebuffer_s,
        });
    }

    pub fn from_pairs(pairs: &[(u32, f64)]) -> Self {
        Self {
            entries: pairs
                .iter()
                .map(|&(bitrate_kbps, rebuffer_s)| ChunkEntry {
                    bitrate_kbps,
                    rebuffer_s,
                })
                .collect(),
        }
    }

    /// Per-chunk rewards with predecessor chaining; sums to the session score.
    pub fn rewards(&self, params: &QoeParams) -> Result<Vec<f64>, QoeError> {
        let mut prev = None;
        self.entries
            .iter()
            .map(|e| {
                let r = params.chunk_reward(prev, e.bitrate_kbps, e.rebuffer_s);
                prev = Some(e.bitrate_kbps);
                r
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LADDER: [u32; 6] = [300, 750, 1200, 1850, 2850, 4300];

    fn params(v: Variant) -> QoeParams {
        QoeParams::standard(v, &LADDER).unwrap()
    }

    #[test]
    fn quality_examples() {
        assert_eq!(params(Variant::Linear).quality(4300).unwrap(), 4.3);
        assert_eq!(params(Variant::Log).quality(300).unwrap(), 0.0);
        assert_eq!(params(Variant::Hd).quality(4300).unwrap(), 20.0);
        assert_eq!(params(Variant::Linear).quality(999), Err(QoeError::UnknownLevel(999)));
    }

    #[test]
    fn standard_mu_values() {
        assert_eq!(params(Variant::Linear).mu, 4.3);
        assert_eq!(params(Variant::Log).mu, 2.66);
        assert_eq!(params(Variant::Hd).mu, 8.0);
    }

    #[test]
    fn chunk_reward_examples() {
        let p = params(Variant::Linear);
        assert!((p.chunk_reward(None, 1850, 0.0).unwrap() - 1.85).abs() < 1e-12);
        assert!((p.chunk_reward(Some(1850), 1850, 1.0).unwrap() - (1.85 - 4.3)).abs() < 1e-12);
        assert!((p.chunk_reward(Some(300), 4300, 0.0).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn session_examples() {
        let p = params(Variant::Linear);
        let single = ChunkLog::from_pairs(&[(2850, 0.0)]);
        assert_eq!(p.session_qoe(&single).unwrap(), 2.85);

        let flat = ChunkLog::from_pairs(&[(1200, 0.5), (1200, 0.0), (1200, 0.25)]);
        assert!((p.session_qoe(&flat).unwrap() - (3.0 * 1.2 - 4.3 * 0.75)).abs() < 1e-12);

        let log = ChunkLog::from_pairs(&[(300, 0.0), (4300, 0.5), (300, 0.0)]);
        assert!((p.session_qoe(&log).unwrap() - (-5.25)).abs() < 1e-9);

        assert_eq!(p.session_qoe(&ChunkLog::default()), Err(QoeError::EmptyLog));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(QoeParams::new(Variant::Linear, 0.0, LADDER.to_vec(), DEFAULT_HD_SCORES.to_vec()).is_err());
        assert!(QoeParams::new(Variant::Linear, 1.0, vec![300, 300], vec![1.0, 2.0]).is_err());
        assert!(QoeParams::new(Variant::Hd, 1.0, vec![300, 400], vec![2.0, 1.0]).is_err());
    }

    fn arb_log() -> impl Strategy<Value = Vec<(usize, f64)>> {
        prop::collection::vec((0usize..6, 0.0f64..10.0), 1..40)
    }

    proptest! {
        #[test]
        fn telescoping_identity(entries in arb_log(), vi in 0usize..3) {
            let p = params(Variant::ALL[vi]);
            let pairs: Vec<(u32, f64)> = entries.iter().map(|&(l, t)| (LADDER[l], t)).collect();
            let log = ChunkLog::from_pairs(&pairs);
            let sum: f64 = log.rewards(&p).unwrap().iter().sum();
            let total = p.session_qoe(&log).unwrap();
            prop_assert!((sum - total).abs() <= 1e-9 * (1.0 + total.abs()));
        }

        #[test]
        fn non_increasing_in_rebuffer(entries in arb_log(), idx: prop::sample::Index, extra in 0.0f64..5.0) {
            let p = params(Variant::Linear);
            let pairs: Vec<(u32, f64)> = entries.iter().map(|&(l, t)| (LADDER[l], t)).collect();
            let mut bumped = pairs.clone();
            let i = idx.index(bumped.len());
            bumped[i].1 += extra;
            let a = p.session_qoe(&ChunkLog::from_pairs(&pairs)).unwrap();
            let b = p.session_qoe(&ChunkLog::from_pairs(&bumped)).unwrap();
            prop_assert!(b <= a + 1e-12);
        }

        #[test]
        fn swapping_equal_bitrate_neighbours(entries in arb_log(), idx: prop::sample::Index) {
            let p = params(Variant::Log);
            let mut pairs: Vec<(u32, f64)> = entries.iter().map(|&(l, t)| (LADDER[l], t)).collect();
            prop_assume!(pairs.len() >= 2);
            let i = idx.index(pairs.len() - 1);
            pairs[i + 1].0 = pairs[i].0;
            let mut swapped = pairs.clone();
            swapped.swap(i, i + 1);
            let a = p.session_qoe(&ChunkLog::from_pairs(&pairs)).unwrap();
            let b = p.session_qoe(&ChunkLog::from_pairs(&swapped)).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }

        #[test]
        fn zero_rebuffer_leaves_quality_minus_smoothness(entries in arb_log()) {
            let p = params(Variant::Linear);
            let pairs: Vec<(u32, f64)> = entries.iter().map(|&(l, _)| (LADDER[l], 0.0)).collect();
            let q: Vec<f64> = pairs.iter().map(|&(r, _)| r as f64 / 1000.0).collect();
            let expect: f64 = q.iter().sum::<f64>() - q.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
            let got = p.session_qoe(&ChunkLog::from_pairs(&pairs)).unwrap();
            prop_assert!((got - expect).abs() <= 1e-9);
        }
    }
}
