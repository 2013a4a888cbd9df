use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;

/// Two-state Markov-modulated bandwidth process.
///
/// Each trace draws a bandwidth level for each of its two states uniformly
/// in `[min_mbps, max_mbps]`. The process switches state after a
/// geometrically distributed dwell with mean `mean_dwell` seconds, and every
/// sample jitters its state level by up to `jitter` (relative), clamped to
/// the range.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceModel {
    pub min_mbps: f64,
    pub max_mbps: f64,
    pub mean_dwell: f64,
    pub interval: f64,
    pub jitter: f64,
}

impl Default for TraceModel {
    fn default() -> Self {
        Self {
            min_mbps: 0.3,
            max_mbps: 5.0,
            mean_dwell: 10.0,
            interval: 1.0,
            jitter: 0.1,
        }
    }
}

impl TraceModel {
    fn validate(&self) -> Result<(), HarnessError> {
        if !(self.min_mbps > 0.0 && self.max_mbps >= self.min_mbps) {
            return Err(HarnessError::Config("trace bandwidth range must be positive and ordered".into()));
        }
        if !(self.mean_dwell >= self.interval && self.interval > 0.0) {
            return Err(HarnessError::Config("dwell must be at least one sampling interval".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(HarnessError::Config("jitter must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// `(seconds, Mbps)` samples covering `duration` seconds.
    pub fn generate(&self, duration: f64, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = [
            rng.random_range(self.min_mbps..=self.max_mbps),
            rng.random_range(self.min_mbps..=self.max_mbps),
        ];
        let mut state = rng.random_range(0..2usize);
        let switch_p = self.interval / self.mean_dwell;
        let n = (duration / self.interval).round().max(1.0) as usize;
        (0..n)
            .map(|i| {
                if i > 0 && rng.random_bool(switch_p) {
                    state ^= 1;
                }
                let noise = 1.0 + self.jitter * rng.random_range(-1.0..=1.0);
                let mbps = (levels[state] * noise).clamp(self.min_mbps, self.max_mbps);
                (i as f64 * self.interval, mbps)
            })
            .collect()
    }
}

/// Canonical text form: one `seconds mbps` pair per line.
pub fn format_trace(samples: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (t, b) in samples {
        let _ = writeln!(s, "{t:.3} {b:.6}");
    }
    s
}

/// Writes `count` traces named `trace_000.txt`, ... into `dir`.
pub fn write_traces(
    dir: &Path,
    count: usize,
    duration: f64,
    model: &TraceModel,
    seed: u64,
) -> Result<Vec<PathBuf>, HarnessError> {
    if count == 0 {
        return Err(HarnessError::Config("trace count must be at least 1".into()));
    }
    if !(duration > 0.0) {
        return Err(HarnessError::Config("trace duration must be positive".into()));
    }
    model.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let width = (count - 1).to_string().len().max(3);
    (0..count)
        .map(|i| {
            let path = dir.join(format!("trace_{i:0width$}.txt"));
            let samples = model.generate(duration, super::mix(seed, i as u64));
            std::fs::write(&path, format_trace(&samples)).map_err(|e| HarnessError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
