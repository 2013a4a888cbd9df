//! Classical bitrate selectors: rate-based, buffer-based, BOLA and robustMPC.
//!
//! None of them knows about coding; they always request the uncoded action
//! (largest generation, rate 1) and pay for losses with retransmissions.

use std::collections::VecDeque;

use crate::qoe::QoeParams;
use crate::sim::{Action, BitrateLadder, Session, VideoManifest};

/// Throughput history for the rate-driven selectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    window: usize,
    error_window: usize,
    throughputs: VecDeque<f64>,
    errors: VecDeque<f64>,
    last_prediction: Option<f64>,
}

impl Default for PredictorState {
    fn default() -> Self {
        Self::new(5, 5)
    }
}

impl PredictorState {
    pub fn new(window: usize, error_window: usize) -> Self {
        assert!(window > 0 && error_window > 0);
        Self {
            window,
            error_window,
            throughputs: VecDeque::with_capacity(window),
            errors: VecDeque::with_capacity(error_window),
            last_prediction: None,
        }
    }

    pub fn from_samples(samples: &[f64]) -> Self {
        let mut p = Self::default();
        for &s in samples {
            p.observe(s);
        }
        p
    }

    /// Records a measured throughput (Mbps) and scores the previous forecast.
    pub fn observe(&mut self, mbps: f64) {
        if let Some(pred) = self.last_prediction {
            if mbps > 0.0 {
                if self.errors.len() == self.error_window {
                    self.errors.pop_front();
                }
                self.errors.push_back((pred - mbps).abs() / mbps);
            }
        }
        if self.throughputs.len() == self.window {
            self.throughputs.pop_front();
        }
        self.throughputs.push_back(mbps);
        self.last_prediction = self.harmonic_mean();
    }

    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.throughputs.iter().copied()
    }

    pub fn harmonic_mean(&self) -> Option<f64> {
        if self.throughputs.is_empty() {
            return None;
        }
        let inv: f64 = self.throughputs.iter().map(|&x| 1.0 / x.max(1e-9)).sum();
        Some(self.throughputs.len() as f64 / inv)
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    /// Harmonic mean discounted by the worst recent relative error.
    pub fn robust_estimate(&self) -> Option<f64> {
        self.harmonic_mean().map(|hm| hm / (1.0 + self.max_error()))
    }
}

/// Highest level whose bitrate does not exceed the harmonic-mean forecast.
pub fn rb_select(pred: &PredictorState, ladder: &BitrateLadder) -> usize {
    let Some(hm) = pred.harmonic_mean() else {
        return 0;
    };
    highest_sustainable(ladder, hm)
}

fn highest_sustainable(ladder: &BitrateLadder, mbps: f64) -> usize {
    ladder
        .levels_kbps
        .iter()
        .rposition(|&k| k as f64 / 1000.0 <= mbps)
        .unwrap_or(0)
}

/// Buffer-based: lowest level inside the reservoir, highest past the cushion,
/// linear in between.
pub fn bb_select(buffer: f64, ladder: &BitrateLadder, reservoir: f64, cushion: f64) -> usize {
    let top = ladder.len() - 1;
    if buffer <= reservoir {
        return 0;
    }
    if buffer >= reservoir + cushion {
        return top;
    }
    let frac = (buffer - reservoir) / cushion;
    ((frac * top as f64).floor() as usize).min(top)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BolaParams {
    pub v: f64,
    pub gamma_p: f64,
}

impl BolaParams {
    /// BOLA-basic control parameter: the top level is chosen once the buffer
    /// nears `buffer_cap`.
    pub fn derive(ladder: &BitrateLadder, buffer_cap: f64, gamma_p: f64) -> Self {
        let q_max = buffer_cap / ladder.chunk_duration;
        let u_max = (ladder.max_kbps() as f64 / ladder.levels_kbps[0] as f64).ln();
        Self {
            v: (q_max - 1.0).max(1.0) / (u_max + gamma_p),
            gamma_p,
        }
    }
}

/// Maximizes `(V (u_m + gamma_p) - Q) / S_m` with `u_m = ln(S_m / S_0)` and
/// `Q` the buffer in chunks. Ties go to the lower level.
pub fn bola_select(
    buffer: f64,
    ladder: &BitrateLadder,
    params: BolaParams,
    manifest: &VideoManifest,
    chunk_index: usize,
) -> usize {
    let chunk = chunk_index.min(manifest.chunk_count() - 1);
    let q = buffer / ladder.chunk_duration;
    let s0 = manifest.size(chunk, 0) as f64;
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for m in 0..manifest.levels() {
        let s = manifest.size(chunk, m) as f64;
        let u = (s / s0).ln();
        let score = (params.v * (u + params.gamma_p) - q) / s;
        if score > best_score {
            best = m;
            best_score = score;
        }
    }
    best
}

/// Exhaustive-lookahead model predictive control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mpc {
    pub horizon: usize,
    pub chunk_duration: f64,
}

impl Mpc {
    /// Plans the next `horizon` chunks (fewer near the end of the video)
    /// under the robust throughput forecast and returns the first level of
    /// the best plan. Plans are searched in lexicographic order so ties
    /// favour lower levels.
    pub fn select(
        &self,
        pred: &PredictorState,
        buffer: f64,
        last_index: usize,
        manifest: &VideoManifest,
        chunk_index: usize,
        qoe: &QoeParams,
    ) -> usize {
        let Some(mbps) = pred.robust_estimate() else {
            return 0;
        };
        self.select_with_forecast(mbps, buffer, last_index, manifest, chunk_index, qoe)
    }

    pub fn select_with_forecast(
        &self,
        mbps: f64,
        buffer: f64,
        last_index: usize,
        manifest: &VideoManifest,
        chunk_index: usize,
        qoe: &QoeParams,
    ) -> usize {
        let depth = self.horizon.min(manifest.chunk_count().saturating_sub(chunk_index));
        if depth == 0 {
            return last_index;
        }
        let mut search = Search {
            mpc: self,
            bytes_per_sec: mbps.max(1e-9) * 1e6 / 8.0,
            manifest,
            qoe,
            chunk_index,
            depth,
            quality: (0..manifest.levels()).map(|l| qoe.quality_at(l)).collect(),
            best: f64::NEG_INFINITY,
            best_first: 0,
        };
        search.dfs(0, buffer, last_index, 0.0, None);
        search.best_first
    }
}

struct Search<'a> {
    mpc: &'a Mpc,
    bytes_per_sec: f64,
    manifest: &'a VideoManifest,
    qoe: &'a QoeParams,
    chunk_index: usize,
    depth: usize,
    quality: Vec<f64>,
    best: f64,
    best_first: usize,
}

impl Search<'_> {
    fn dfs(&mut self, step: usize, buffer: f64, prev: usize, score: f64, first: Option<usize>) {
        if step == self.depth {
            if score > self.best {
                self.best = score;
                self.best_first = first.expect("depth >= 1");
            }
            return;
        }
        for level in 0..self.manifest.levels() {
            let size = self.manifest.size(self.chunk_index + step, level) as f64;
            let dt = size / self.bytes_per_sec;
            let rebuffer = (dt - buffer).max(0.0);
            let next_buffer = (buffer - dt).max(0.0) + self.mpc.chunk_duration;
            let q = self.quality[level];
            let gain = q - self.qoe.mu * rebuffer - (q - self.quality[prev]).abs();
            self.dfs(step + 1, next_buffer, level, score + gain, first.or(Some(level)));
        }
    }
}

/// Parameterized rule-based controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    RateBased,
    BufferBased { reservoir: f64, cushion: f64 },
    Bola { gamma_p: f64 },
    RobustMpc { horizon: usize },
}

/// Runs a [`BaselineKind`] over a session, keeping its own throughput history.
#[derive(Debug, Clone)]
pub struct BaselineAgent {
    kind: BaselineKind,
    predictor: PredictorState,
    seen: usize,
}

impl BaselineAgent {
    pub fn new(kind: BaselineKind) -> Self {
        Self {
            kind,
            predictor: PredictorState::default(),
            seen: 0,
        }
    }

    pub fn decide(&mut self, session: &Session<'_>) -> Action {
        let state = session.state();
        let cfg = session.config();
        // Feed every chunk completed since the last decision, oldest first.
        let fresh = state.chunk_index.saturating_sub(self.seen);
        for &t in state.throughput_mbps.iter().take(fresh).collect::<Vec<_>>().iter().rev() {
            self.predictor.observe(*t);
        }
        self.seen = state.chunk_index;

        let level = match self.kind {
            BaselineKind::RateBased => rb_select(&self.predictor, &cfg.ladder),
            BaselineKind::BufferBased { reservoir, cushion } => {
                bb_select(state.buffer, &cfg.ladder, reservoir, cushion)
            }
            BaselineKind::Bola { gamma_p } => bola_select(
                state.buffer,
                &cfg.ladder,
                BolaParams::derive(&cfg.ladder, cfg.buffer_cap, gamma_p),
                session.manifest(),
                state.chunk_index,
            ),
            BaselineKind::RobustMpc { horizon } => Mpc {
                horizon,
                chunk_duration: cfg.ladder.chunk_duration,
            }
            .select(
                &self.predictor,
                state.buffer,
                state.last_action.map_or(0, |a| a.bitrate),
                session.manifest(),
                state.chunk_index,
                session.qoe(),
            ),
        };
        cfg.uncoded_action(level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qoe::Variant;
    use crate::sim::{ChannelMode, SimConfig, Trace};
    use proptest::prelude::*;

    fn ladder() -> BitrateLadder {
        BitrateLadder::default()
    }

    #[test]
    fn rb_examples() {
        let l = ladder();
        assert_eq!(rb_select(&PredictorState::from_samples(&[2.0, 2.0, 2.0]), &l), 3);
        assert_eq!(rb_select(&PredictorState::from_samples(&[0.1]), &l), 0);
        assert_eq!(rb_select(&PredictorState::from_samples(&[100.0]), &l), 5);
        // Harmonic, not arithmetic: 1 and 4 Mbps forecast 1.6 Mbps.
        assert_eq!(rb_select(&PredictorState::from_samples(&[1.0, 4.0]), &l), 2);
    }

    #[test]
    fn predictor_window_and_errors() {
        let mut p = PredictorState::new(2, 5);
        p.observe(1.0);
        assert_eq!(p.max_error(), 0.0);
        p.observe(2.0); // forecast was 1.0 -> 50% error
        assert!((p.max_error() - 0.5).abs() < 1e-12);
        p.observe(2.0);
        assert_eq!(p.samples().collect::<Vec<_>>(), vec![2.0, 2.0]);
        assert!((p.robust_estimate().unwrap() - 2.0 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn bb_examples() {
        let l = ladder();
        assert_eq!(bb_select(2.0, &l, 5.0, 10.0), 0);
        assert_eq!(bb_select(40.0, &l, 5.0, 10.0), 5);
        assert_eq!(bb_select(10.0, &l, 5.0, 10.0), 2);
    }

    #[test]
    fn bola_large_backlog_picks_largest_chunk() {
        let l = ladder();
        let manifest = VideoManifest::synthesize(&l, 4, 0.0, 0);
        let params = BolaParams { v: 0.1, gamma_p: 5.0 };
        // Q = 1000 chunks dwarfs V (u + gamma_p): all scores negative.
        assert_eq!(bola_select(4000.0, &l, params, &manifest, 0), 5);
    }

    #[test]
    fn bola_two_level_objective() {
        let l = BitrateLadder {
            levels_kbps: vec![1000, 2000],
            chunk_duration: 4.0,
            hd_threshold_index: 1,
        };
        let manifest = VideoManifest::new(vec![vec![500_000, 1_000_000]]).unwrap();
        let params = BolaParams { v: 2.0, gamma_p: 5.0 };
        let u1 = 2f64.ln();
        let score = |m: usize, q: f64| {
            let s = manifest.size(0, m) as f64;
            let u = if m == 0 { 0.0 } else { u1 };
            (params.v * (u + params.gamma_p) - q) / s
        };
        for buffer in [0.0, 8.0, 20.0, 39.0, 42.0, 44.0, 60.0, 400.0] {
            let q = buffer / 4.0;
            let expect = if score(1, q) > score(0, q) { 1 } else { 0 };
            assert_eq!(bola_select(buffer, &l, params, &manifest, 0), expect, "buffer {buffer}");
        }
        // Between V*gamma_p and V*(u1 + gamma_p) only level 1 scores positive.
        let q = params.v * (params.gamma_p + u1 / 2.0);
        assert_eq!(bola_select(q * 4.0, &l, params, &manifest, 0), 1);
        // Empty buffer: the small chunk wins.
        assert_eq!(bola_select(0.0, &l, params, &manifest, 0), 0);
    }

    #[test]
    fn bola_monotone_in_buffer() {
        let l = ladder();
        let manifest = VideoManifest::synthesize(&l, 48, 0.1, 7);
        let params = BolaParams::derive(&l, 60.0, 5.0);
        for chunk in [0, 10, 47] {
            let picks: Vec<usize> = (0..=600)
                .map(|i| bola_select(i as f64 * 0.1, &l, params, &manifest, chunk))
                .collect();
            assert!(picks.windows(2).all(|w| w[0] <= w[1]), "chunk {chunk}: {picks:?}");
            assert_eq!(picks[0], 0);
            assert_eq!(*picks.last().unwrap(), 5);
        }
    }

    fn qoe() -> QoeParams {
        QoeParams::standard(Variant::Linear, &ladder().levels_kbps).unwrap()
    }

    /// Independent enumerator: walks every plan as a base-L counter.
    fn brute_force_mpc(
        mbps: f64,
        buffer: f64,
        last: usize,
        manifest: &VideoManifest,
        chunk: usize,
        horizon: usize,
        qoe: &QoeParams,
    ) -> usize {
        let levels = manifest.levels();
        let depth = horizon.min(manifest.chunk_count() - chunk);
        let total = levels.pow(depth as u32);
        let mut best = (f64::NEG_INFINITY, 0);
        for code in 0..total {
            let mut plan = vec![0; depth];
            let mut c = code;
            for i in (0..depth).rev() {
                plan[i] = c % levels;
                c /= levels;
            }
            let mut buf = buffer;
            let mut prev_q = qoe.quality_at(last);
            let (mut q_sum, mut rebuf, mut smooth) = (0.0, 0.0, 0.0);
            for (i, &l) in plan.iter().enumerate() {
                let dt = manifest.size(chunk + i, l) as f64 * 8.0 / (mbps * 1e6);
                rebuf += (dt - buf).max(0.0);
                buf = (buf - dt).max(0.0) + 4.0;
                let q = qoe.quality_at(l);
                q_sum += q;
                smooth += (q - prev_q).abs();
                prev_q = q;
            }
            let score = q_sum - qoe.mu * rebuf - smooth;
            if score > best.0 + 1e-12 {
                best = (score, plan[0]);
            }
        }
        best.1
    }

    #[test]
    fn mpc_examples() {
        let l = ladder();
        let manifest = VideoManifest::synthesize(&l, 48, 0.1, 2);
        let mpc1 = Mpc { horizon: 1, chunk_duration: 4.0 };
        let q = qoe();
        assert_eq!(mpc1.select(&PredictorState::from_samples(&[50.0; 5]), 30.0, 5, &manifest, 3, &q), 5);
        assert_eq!(mpc1.select(&PredictorState::from_samples(&[0.1; 5]), 0.0, 0, &manifest, 3, &q), 0);
        assert_eq!(mpc1.select(&PredictorState::default(), 10.0, 3, &manifest, 3, &q), 0);
    }

    #[test]
    fn mpc_matches_brute_force() {
        let l = ladder();
        let q = qoe();
        let mpc = Mpc { horizon: 3, chunk_duration: 4.0 };
        for seed in 0..40u64 {
            let manifest = VideoManifest::synthesize(&l, 48, 0.1, seed);
            let mbps = 0.3 + (seed as f64 * 0.37) % 5.0;
            let buffer = (seed as f64 * 1.7) % 25.0;
            let last = (seed as usize) % 6;
            let chunk = (seed as usize * 5) % 48;
            let got = mpc.select_with_forecast(mbps, buffer, last, &manifest, chunk, &q);
            let want = brute_force_mpc(mbps, buffer, last, &manifest, chunk, 3, &q);
            assert_eq!(got, want, "seed {seed}");
        }
    }

    #[test]
    fn mpc_horizon_one_without_rebuffer_penalty_is_greedy_on_quality() {
        let l = ladder();
        let manifest = VideoManifest::synthesize(&l, 48, 0.1, 2);
        let q = QoeParams::new(Variant::Linear, 1e-12, l.levels_kbps.clone(), crate::qoe::DEFAULT_HD_SCORES.to_vec()).unwrap();
        let mpc = Mpc { horizon: 1, chunk_duration: 4.0 };
        // q - |q - q_last| is maximized at any level >= last (all score q_last
        // when above), so the lowest such level wins the tie: stay put.
        for last in 0..6 {
            assert_eq!(mpc.select_with_forecast(0.5, 0.0, last, &manifest, 0, &q), last);
        }
    }

    #[test]
    fn agents_return_valid_indices_through_an_episode() {
        let cfg = SimConfig::default();
        let manifest = VideoManifest::synthesize(&cfg.ladder, 48, 0.1, 1);
        let trace = Trace::parse("v", "0 0.4\n10 4\n25 1.2\n40 3\n", 0.01, 0.08).unwrap();
        let q = qoe();
        for kind in [
            BaselineKind::RateBased,
            BaselineKind::BufferBased { reservoir: 5.0, cushion: 10.0 },
            BaselineKind::Bola { gamma_p: 5.0 },
            BaselineKind::RobustMpc { horizon: 3 },
        ] {
            let mut s = Session::new(&cfg, &manifest, &trace, &q, 4, ChannelMode::Coded).unwrap();
            let mut agent = BaselineAgent::new(kind);
            while !s.done() {
                let a = agent.decide(&s);
                assert!(cfg.check_action(a).is_ok());
                assert_eq!(a.rate, cfg.uncoded_rate_index());
                assert_eq!(cfg.gen_sizes[a.gen_size], 64);
                s.step(a).unwrap();
            }
        }
    }

    proptest! {
        #[test]
        fn rb_doubling_never_lowers(samples in prop::collection::vec(0.05f64..20.0, 1..5)) {
            let l = ladder();
            let a = rb_select(&PredictorState::from_samples(&samples), &l);
            let doubled: Vec<f64> = samples.iter().map(|x| x * 2.0).collect();
            prop_assert!(rb_select(&PredictorState::from_samples(&doubled), &l) >= a);
        }

        #[test]
        fn bb_monotone(b1 in 0.0f64..80.0, b2 in 0.0f64..80.0) {
            let l = ladder();
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            prop_assert!(bb_select(lo, &l, 5.0, 10.0) <= bb_select(hi, &l, 5.0, 10.0));
        }
    }
}
