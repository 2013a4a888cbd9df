//! Bandwidth traces: one `seconds bandwidth_mbps` pair per line.

use std::fs;
use std::path::Path;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    /// Seconds since the first sample.
    pub time: f64,
    pub mbps: f64,
}

/// Piecewise-constant link capacity with a per-slice loss ratio.
///
/// Each sample holds until the next timestamp; the last one holds for the
/// preceding gap, after which the trace wraps around.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub name: String,
    pub samples: Vec<TraceSample>,
    pub loss_ratio: f64,
    pub rtt: f64,
    period: f64,
}

impl Trace {
    pub fn new(
        name: impl Into<String>,
        samples: Vec<(f64, f64)>,
        loss_ratio: f64,
        rtt: f64,
    ) -> Result<Self, SimError> {
        if samples.is_empty() {
            return Err(SimError::EmptyTrace);
        }
        if !(0.0..=1.0).contains(&loss_ratio) || !(rtt >= 0.0) {
            return Err(SimError::Config(format!(
                "loss ratio {loss_ratio} or rtt {rtt} out of range"
            )));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(SimError::Parse {
                    line: i + 2,
                    msg: "timestamps must be strictly increasing".into(),
                });
            }
        }
        if let Some(i) = samples.iter().position(|s| !(s.1 > 0.0) || !s.1.is_finite()) {
            return Err(SimError::Parse {
                line: i + 1,
                msg: "bandwidth must be positive".into(),
            });
        }
        let t0 = samples[0].0;
        let samples: Vec<TraceSample> = samples
            .into_iter()
            .map(|(t, mbps)| TraceSample { time: t - t0, mbps })
            .collect();
        let n = samples.len();
        let period = if n == 1 {
            f64::INFINITY
        } else {
            samples[n - 1].time + (samples[n - 1].time - samples[n - 2].time)
        };
        Ok(Self {
            name: name.into(),
            samples,
            loss_ratio,
            rtt,
            period,
        })
    }

    /// Parses the text format; `line` numbers in errors are 1-based.
    pub fn parse(name: &str, text: &str, loss_ratio: f64, rtt: f64) -> Result<Self, SimError> {
        let mut samples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let parsed = match (it.next(), it.next(), it.next()) {
                (Some(t), Some(b), None) => t.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
                _ => None,
            };
            let Some((t, b)) = parsed else {
                return Err(SimError::Parse {
                    line: i + 1,
                    msg: format!("expected `seconds mbps`, got {line:?}"),
                });
            };
            if let Some(&(prev, _)) = samples.last() {
                if !(t > prev) {
                    return Err(SimError::Parse {
                        line: i + 1,
                        msg: "timestamps must be strictly increasing".into(),
                    });
                }
            }
            if !(b > 0.0) || !t.is_finite() || !b.is_finite() {
                return Err(SimError::Parse {
                    line: i + 1,
                    msg: "bandwidth must be positive and finite".into(),
                });
            }
            samples.push((t, b));
        }
        Self::new(name, samples, loss_ratio, rtt)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn with_loss(&self, loss_ratio: f64) -> Self {
        Self {
            loss_ratio,
            ..self.clone()
        }
    }

    /// Capacity in Mbps at trace time `t` (wrapped).
    pub fn bandwidth_at(&self, t: f64) -> f64 {
        self.samples[self.segment(self.wrap(t))].mbps
    }

    fn wrap(&self, t: f64) -> f64 {
        if self.period.is_finite() {
            t.rem_euclid(self.period)
        } else {
            t.max(0.0)
        }
    }

    fn segment(&self, t: f64) -> usize {
        self.samples.partition_point(|s| s.time <= t).saturating_sub(1)
    }

    fn segment_end(&self, i: usize) -> f64 {
        self.samples.get(i + 1).map_or(self.period, |s| s.time)
    }

    pub fn mean_mbps(&self) -> f64 {
        if !self.period.is_finite() {
            return self.samples[0].mbps;
        }
        (0..self.samples.len())
            .map(|i| self.samples[i].mbps * (self.segment_end(i) - self.samples[i].time))
            .sum::<f64>()
            / self.period
    }
}

/// Loads a trace file.
pub fn load_trace(path: &Path, loss_ratio: f64, rtt: f64) -> Result<Trace, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Trace::parse(&name, &text, loss_ratio, rtt)
}

/// Seconds needed to push `bytes` through the link starting at trace time
/// `start`, excluding round trips.
pub fn transfer_time(trace: &Trace, start: f64, bytes: u64) -> f64 {
    if bytes == 0 {
        return 0.0;
    }
    let mut remaining = bytes as f64 * 8.0;
    let mut t = trace.wrap(start);
    let mut seg = trace.segment(t);
    let mut elapsed = 0.0;

    if trace.period.is_finite() {
        let period_bits: f64 = (0..trace.samples.len())
            .map(|i| trace.samples[i].mbps * 1e6 * (trace.segment_end(i) - trace.samples[i].time))
            .sum();
        // Whole laps contribute the same capacity regardless of phase.
        let laps = (remaining / period_bits).floor() - 1.0;
        if laps > 0.0 {
            remaining -= laps * period_bits;
            elapsed += laps * trace.period;
        }
    }

    loop {
        let rate = trace.samples[seg].mbps * 1e6;
        let end = trace.segment_end(seg);
        let capacity = rate * (end - t);
        if remaining <= capacity {
            return elapsed + remaining / rate;
        }
        remaining -= capacity;
        elapsed += end - t;
        seg += 1;
        if seg == trace.samples.len() {
            seg = 0;
        }
        t = trace.samples[seg].time;
    }
}
