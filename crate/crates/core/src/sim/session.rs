use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{transfer_time, Action, SimConfig, SimError, Trace, VideoManifest};
use crate::qoe::{ChunkLog, QoeParams};
use crate::rlnc::{generation_seed, plan_generations, RankTracker};

/// Outcome of downloading one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct DownloadResult {
    pub bitrate_kbps: u32,
    pub gen_size: usize,
    pub code_rate: f64,
    pub source_bytes: u64,
    /// Every byte put on the wire, headers and retransmissions included.
    pub sent_bytes: u64,
    pub transfer_time: f64,
    pub download_time: f64,
    pub rebuffer_time: f64,
    pub retransmission_rounds: usize,
    pub slices_sent: usize,
    pub slices_lost: usize,
    pub generations: usize,
    pub buffer_before: f64,
    pub buffer_after: f64,
    /// Time spent waiting because the buffer hit its cap.
    pub idle_time: f64,
}

impl DownloadResult {
    /// Delivered video rate in Mbps, as seen by the client.
    pub fn throughput_mbps(&self) -> f64 {
        if self.download_time > 0.0 {
            self.source_bytes as f64 * 8.0 / self.download_time / 1e6
        } else {
            0.0
        }
    }

    pub fn loss_ratio(&self) -> f64 {
        if self.slices_sent == 0 {
            0.0
        } else {
            self.slices_lost as f64 / self.slices_sent as f64
        }
    }
}

/// Ground truth of a streaming session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub clock: f64,
    /// Trace time at clock zero.
    pub trace_offset: f64,
    pub buffer: f64,
    pub chunk_index: usize,
    pub last_action: Option<Action>,
    pub last_loss: f64,
    pub ewma_loss: f64,
    /// Newest first.
    pub throughput_mbps: VecDeque<f64>,
    pub download_times: VecDeque<f64>,
    pub loss_ratios: VecDeque<f64>,
    history_len: usize,
}

impl SessionState {
    pub fn new(history_len: usize, trace_offset: f64) -> Self {
        Self {
            clock: 0.0,
            trace_offset,
            buffer: 0.0,
            chunk_index: 0,
            last_action: None,
            last_loss: 0.0,
            ewma_loss: 0.0,
            throughput_mbps: VecDeque::with_capacity(history_len),
            download_times: VecDeque::with_capacity(history_len),
            loss_ratios: VecDeque::with_capacity(history_len),
            history_len,
        }
    }

    pub fn trace_time(&self) -> f64 {
        self.trace_offset + self.clock
    }

    fn push_history(ring: &mut VecDeque<f64>, cap: usize, v: f64) {
        if ring.len() == cap {
            ring.pop_back();
        }
        ring.push_front(v);
    }

    /// Advances the state past a finished download.
    pub fn apply(&mut self, res: &DownloadResult, action: Action, ewma_weight: f64) {
        self.clock += res.download_time + res.idle_time;
        self.buffer = res.buffer_after;
        self.chunk_index += 1;
        let loss = res.loss_ratio();
        self.ewma_loss = if self.last_action.is_none() {
            loss
        } else {
            (1.0 - ewma_weight) * self.ewma_loss + ewma_weight * loss
        };
        self.last_loss = loss;
        self.last_action = Some(action);
        let h = self.history_len;
        Self::push_history(&mut self.throughput_mbps, h, res.throughput_mbps());
        Self::push_history(&mut self.download_times, h, res.download_time);
        Self::push_history(&mut self.loss_ratios, h, loss);
    }
}

struct Delivery {
    slices_sent: usize,
    slices_lost: usize,
    rounds: usize,
    generations: usize,
}

fn finish(
    state: &SessionState,
    trace: &Trace,
    cfg: &SimConfig,
    bitrate_kbps: u32,
    gen_size: usize,
    code_rate: f64,
    source_bytes: u64,
    d: Delivery,
) -> DownloadResult {
    let sent_bytes = (d.slices_sent * (cfg.slice_size + cfg.header_bytes)) as u64;
    let transfer = transfer_time(trace, state.trace_time(), sent_bytes);
    let download_time = transfer + trace.rtt * (1 + d.rounds) as f64;
    let buffer_before = state.buffer;
    let rebuffer_time = (download_time - buffer_before).max(0.0);
    let mut buffer_after = (buffer_before - download_time).max(0.0) + cfg.ladder.chunk_duration;
    let mut idle_time = 0.0;
    if buffer_after > cfg.buffer_cap {
        idle_time = buffer_after - cfg.buffer_cap;
        buffer_after = cfg.buffer_cap;
    }
    DownloadResult {
        bitrate_kbps,
        gen_size,
        code_rate,
        source_bytes,
        sent_bytes,
        transfer_time: transfer,
        download_time,
        rebuffer_time,
        retransmission_rounds: d.rounds,
        slices_sent: d.slices_sent,
        slices_lost: d.slices_lost,
        generations: d.generations,
        buffer_before,
        buffer_after,
        idle_time,
    }
}

/// Downloads the next chunk with network-coded protection.
///
/// Every coded slice is erased independently with the trace's loss ratio.
/// A generation received short of full rank gets its deficit resent as
/// fresh repair slices, one round trip per round, until decodable. Rounds
/// are counted per generation and summed over the chunk.
pub fn download_chunk(
    state: &SessionState,
    trace: &Trace,
    manifest: &VideoManifest,
    cfg: &SimConfig,
    action: Action,
    rng_seed: u64,
) -> Result<DownloadResult, SimError> {
    if state.chunk_index >= manifest.chunk_count() {
        return Err(SimError::EpisodeFinished);
    }
    cfg.check_action(action)?;
    let k = cfg.gen_sizes[action.gen_size];
    let rho = cfg.code_rates[action.rate];
    let source_bytes = manifest.size(state.chunk_index, action.bitrate);
    let plan = plan_generations(source_bytes, cfg.slice_size, k, rho)?;
    let p = trace.loss_ratio;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let chunk_seed: u32 = rng.random();
    let mut d = Delivery {
        slices_sent: 0,
        slices_lost: 0,
        rounds: 0,
        generations: plan.generation_count(),
    };
    let mut received = Vec::new();
    for (g, gen) in plan.entries.iter().enumerate() {
        received.clear();
        received.extend((0..gen.coded).map(|_| !rng.random_bool(p)));
        d.slices_sent += gen.coded;
        d.slices_lost += received.iter().filter(|&&r| !r).count();

        let mut tracker = RankTracker::new(gen.source, generation_seed(chunk_seed, g), &received[..gen.source]);
        for (j, &r) in received[gen.source..].iter().enumerate() {
            if r {
                tracker.receive_repair(j as u32);
            }
        }
        let mut next_repair = (gen.coded - gen.source) as u32;
        let mut rounds = 0;
        while tracker.deficit() > 0 {
            rounds += 1;
            if rounds > cfg.max_rounds {
                return Err(SimError::Undeliverable(cfg.max_rounds));
            }
            for _ in 0..tracker.deficit() {
                d.slices_sent += 1;
                if rng.random_bool(p) {
                    d.slices_lost += 1;
                } else {
                    tracker.receive_repair(next_repair);
                }
                next_repair += 1;
            }
        }
        d.rounds += rounds;
    }
    Ok(finish(
        state,
        trace,
        cfg,
        cfg.ladder.levels_kbps[action.bitrate],
        k,
        rho,
        source_bytes,
        d,
    ))
}

/// Downloads the next chunk as plain slices with selective retransmission
/// of every lost slice; the reference for the uncoded environment.
pub fn download_uncoded(
    state: &SessionState,
    trace: &Trace,
    manifest: &VideoManifest,
    cfg: &SimConfig,
    bitrate: usize,
    rng_seed: u64,
) -> Result<DownloadResult, SimError> {
    if state.chunk_index >= manifest.chunk_count() {
        return Err(SimError::EpisodeFinished);
    }
    if bitrate >= cfg.ladder.len() {
        return Err(SimError::InvalidAction(Action::new(bitrate, 0, 0)));
    }
    let source_bytes = manifest.size(state.chunk_index, bitrate);
    let slices = source_bytes.div_ceil(cfg.slice_size as u64) as usize;
    let p = trace.loss_ratio;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut d = Delivery {
        slices_sent: 0,
        slices_lost: 0,
        rounds: 0,
        generations: 0,
    };
    let mut outstanding = slices;
    while outstanding > 0 {
        if d.slices_sent > 0 {
            d.rounds += 1;
            if d.rounds > cfg.max_rounds {
                return Err(SimError::Undeliverable(cfg.max_rounds));
            }
        }
        let lost = (0..outstanding).filter(|_| rng.random_bool(p)).count();
        d.slices_sent += outstanding;
        d.slices_lost += lost;
        outstanding = lost;
    }
    Ok(finish(
        state,
        trace,
        cfg,
        cfg.ladder.levels_kbps[bitrate],
        cfg.max_gen_size(),
        1.0,
        source_bytes,
        d,
    ))
}

/// Agent-visible features; see [`observe`] for the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn observation_len(cfg: &SimConfig) -> usize {
    2 * cfg.history_len + cfg.ladder.len() + 7
}

/// Builds the feature vector:
///
/// | slots | feature |
/// |---|---|
/// | `H` | past throughputs, newest first, Mbps / 10 |
/// | `H` | past download times, newest first, s / 10 |
/// | `L` | next chunk size at every level, MB |
/// | 1 | buffer, s / 10 |
/// | 1 | fraction of chunks remaining |
/// | 1 | last bitrate / top bitrate |
/// | 1 | last code rate |
/// | 1 | last generation size / largest |
/// | 1 | last measured loss ratio / 0.02 |
/// | 1 | loss EWMA / 0.02 |
pub fn observe(state: &SessionState, manifest: &VideoManifest, cfg: &SimConfig) -> Observation {
    let h = cfg.history_len;
    let mut v = Vec::with_capacity(observation_len(cfg));
    let ring = |v: &mut Vec<f64>, r: &VecDeque<f64>, scale: f64| {
        v.extend(r.iter().take(h).map(|x| x / scale));
        v.extend(std::iter::repeat_n(0.0, h - r.len().min(h)));
    };
    ring(&mut v, &state.throughput_mbps, 10.0);
    ring(&mut v, &state.download_times, 10.0);
    if state.chunk_index < manifest.chunk_count() {
        v.extend(
            (0..cfg.ladder.len()).map(|l| manifest.size(state.chunk_index, l) as f64 / 1e6),
        );
    } else {
        v.extend(std::iter::repeat_n(0.0, cfg.ladder.len()));
    }
    v.push(state.buffer / 10.0);
    let total = manifest.chunk_count() as f64;
    v.push((total - state.chunk_index as f64) / total);
    match state.last_action {
        Some(a) => {
            v.push(cfg.ladder.levels_kbps[a.bitrate] as f64 / cfg.ladder.max_kbps() as f64);
            v.push(cfg.code_rates[a.rate]);
            v.push(cfg.gen_sizes[a.gen_size] as f64 / cfg.max_gen_size() as f64);
        }
        None => v.extend([0.0, 0.0, 0.0]),
    }
    v.push(state.last_loss / 0.02);
    v.push(state.ewma_loss / 0.02);
    Observation(v)
}

/// How slices are protected on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    /// Systematic network coding with per-generation repair.
    Coded,
    /// Plain slices, every loss retransmitted; gen size and rate are ignored.
    Uncoded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRecord {
    pub chunk: usize,
    pub action: Action,
    pub result: DownloadResult,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: DownloadResult,
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One streaming episode over a trace.
///
/// Construction downloads the first chunk at the lowest bitrate without
/// protection (startup); agent steps begin with the second chunk. Startup
/// time is not scored.
#[derive(Debug, Clone)]
pub struct Session<'a> {
    cfg: &'a SimConfig,
    manifest: &'a VideoManifest,
    trace: &'a Trace,
    qoe: &'a QoeParams,
    mode: ChannelMode,
    seed: u64,
    state: SessionState,
    startup: DownloadResult,
    log: ChunkLog,
    records: Vec<ChunkRecord>,
}

impl<'a> Session<'a> {
    pub fn new(
        cfg: &'a SimConfig,
        manifest: &'a VideoManifest,
        trace: &'a Trace,
        qoe: &'a QoeParams,
        seed: u64,
        mode: ChannelMode,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        if manifest.levels() != cfg.ladder.len() {
            return Err(SimError::Config(format!(
                "manifest has {} levels, ladder has {}",
                manifest.levels(),
                cfg.ladder.len()
            )));
        }
        if manifest.chunk_count() < 2 {
            return Err(SimError::Manifest("need at least two chunks".into()));
        }
        let offset = if trace.period().is_finite() {
            ChaCha8Rng::seed_from_u64(mix(seed, 0x0FF5E7)).random_range(0.0..trace.period())
        } else {
            0.0
        };
        let mut state = SessionState::new(cfg.history_len, offset);
        let action = cfg.uncoded_action(0);
        let chunk_seed = mix(seed, 0);
        let startup = match mode {
            ChannelMode::Coded => download_chunk(&state, trace, manifest, cfg, action, chunk_seed)?,
            ChannelMode::Uncoded => download_uncoded(&state, trace, manifest, cfg, 0, chunk_seed)?,
        };
        state.apply(&startup, action, cfg.loss_ewma_weight);
        Ok(Self {
            cfg,
            manifest,
            trace,
            qoe,
            mode,
            seed,
            state,
            startup,
            log: ChunkLog::default(),
            records: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        self.cfg
    }

    pub fn manifest(&self) -> &VideoManifest {
        self.manifest
    }

    pub fn trace(&self) -> &Trace {
        self.trace
    }

    pub fn qoe(&self) -> &QoeParams {
        self.qoe
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn startup(&self) -> &DownloadResult {
        &self.startup
    }

    pub fn log(&self) -> &ChunkLog {
        &self.log
    }

    pub fn records(&self) -> &[ChunkRecord] {
        &self.records
    }

    pub fn done(&self) -> bool {
        self.state.chunk_index >= self.manifest.chunk_count()
    }

    pub fn observation(&self) -> Observation {
        observe(&self.state, self.manifest, self.cfg)
    }

    /// Downloads the next chunk with `action` and scores it.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome, SimError> {
        if self.done() {
            return Err(SimError::EpisodeFinished);
        }
        let chunk = self.state.chunk_index;
        let chunk_seed = mix(self.seed, chunk as u64);
        let info = match self.mode {
            ChannelMode::Coded => {
                download_chunk(&self.state, self.trace, self.manifest, self.cfg, action, chunk_seed)?
            }
            ChannelMode::Uncoded => download_uncoded(
                &self.state,
                self.trace,
                self.manifest,
                self.cfg,
                action.bitrate,
                chunk_seed,
            )?,
        };
        let prev = self.records.last().map(|r| r.result.bitrate_kbps);
        let reward = self.qoe.chunk_reward(prev, info.bitrate_kbps, info.rebuffer_time)?;
        self.state.apply(&info, action, self.cfg.loss_ewma_weight);
        self.log.push(info.bitrate_kbps, info.rebuffer_time);
        self.records.push(ChunkRecord {
            chunk,
            action,
            result: info.clone(),
            reward,
        });
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.done(),
            info,
        })
    }
}
