//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::path::Path;
use std::time::Instant;

use ncabr_core::agent::{
    actor_forward, critic_forward, gradients, loss_terms, update, AgentKind, LossWeights, NetShape, PolicyParams,
    Sample, Step, TrainConfig, Trajectory,
};
use ncabr_core::gf256::FieldMatrix;
use ncabr_core::harness::{cmd_compare, cmd_eval, cmd_train, write_traces, RunConfig, TraceModel};
use ncabr_core::qoe::{ChunkLog, QoeParams, Variant};
use ncabr_core::rlnc::{coded_count, decode_generation, encode_generation, CodecError};
use ncabr_core::sim::{download_chunk, Action, ChannelMode, Session, SessionState, SimConfig, Trace, VideoManifest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 2024;

type ToyBatch = Vec<(Vec<f64>, Vec<usize>, f64, f64)>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ladder() -> Vec<u32> {
    SimConfig::default().ladder.levels_kbps
}

fn directional_qoe(work: &Path) -> Outcome {
    let train_dir = work.join("train_traces");
    let test_dir = work.join("test_traces");
    let defaults = RunConfig::default();
    let model = defaults.trace_model();
    write_traces(&train_dir, defaults.trace_count, defaults.trace_duration, &model, SEED).unwrap();
    write_traces(&test_dir, 10, defaults.trace_duration, &model, SEED + 1).unwrap();

    let out = work.join("directional");
    let mut checkpoints = Vec::new();
    for algo in ["nancy", "pensieve"] {
        let cfg = RunConfig {
            algo: algo.into(),
            traces: Some(train_dir.clone()),
            out: out.clone(),
            qoe: "1".into(),
            seed: SEED,
            ..RunConfig::default()
        };
        checkpoints.push(cmd_train(&cfg).unwrap().checkpoint);
    }
    let cfg = RunConfig {
        algos: vec!["nancy".into(), "pensieve".into(), "robustmpc".into()],
        traces: Some(test_dir),
        out,
        qoe: "1".into(),
        seed: SEED,
        checkpoints,
        loss_set: (10..=20).map(|i| i as f64 / 1000.0).collect(),
        ..RunConfig::default()
    };
    let rows = cmd_compare(&cfg).unwrap();
    let q = |algo: &str| rows.iter().find(|r| r.algo == algo).unwrap().mean_qoe;
    let (nancy, pensieve, mpc) = (q("nancy"), q("pensieve"), q("robustmpc"));
    let pass = nancy >= 1.10 * pensieve && nancy >= 1.10 * mpc;
    outcome(
        pass,
        format!(
            "mean QoE1 nancy={nancy:.3} pensieve={pensieve:.3} robustmpc={mpc:.3}; ratios {:.3} and {:.3} (need >= 1.10)",
            nancy / pensieve,
            nancy / mpc
        ),
    )
}

fn degeneracy(work: &Path) -> Outcome {
    let dir = work.join("degeneracy_traces");
    let paths = write_traces(&dir, 5, 320.0, &TraceModel::default(), SEED + 2).unwrap();
    let cfg = SimConfig::default();
    let manifest = VideoManifest::synthesize(&cfg.ladder, 48, 0.1, SEED);
    let qoe = QoeParams::standard(Variant::Linear, &cfg.ladder.levels_kbps).unwrap();
    let mut compared = 0;
    let mut mismatches = 0;
    for (i, p) in paths.iter().enumerate() {
        let trace = ncabr_core::sim::load_trace(p, 0.0, 0.08).unwrap();
        let seed = SEED + i as u64;
        let mut coded = Session::new(&cfg, &manifest, &trace, &qoe, seed, ChannelMode::Coded).unwrap();
        let mut plain = Session::new(&cfg, &manifest, &trace, &qoe, seed, ChannelMode::Uncoded).unwrap();
        let mut pairs = vec![(coded.startup().download_time, plain.startup().download_time)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while !coded.done() {
            let action = cfg.uncoded_action(rng.random_range(0..cfg.ladder.len()));
            let a = coded.step(action).unwrap();
            let b = plain.step(action).unwrap();
            pairs.push((a.info.download_time, b.info.download_time));
        }
        assert!(plain.done());
        compared += pairs.len();
        mismatches += pairs.iter().filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    outcome(
        compared == 5 * 48 && mismatches == 0,
        format!("{compared} chunk download times compared, {mismatches} differ in any bit"),
    )
}

fn binomial_tail_below(k: usize, n: usize, p: f64) -> f64 {
    // P[Binomial(n, 1 - p) < k]
    let mut total = 0.0;
    for r in 0..k.min(n + 1) {
        let mut c = 1.0;
        for j in 0..r {
            c = c * (n - j) as f64 / (j + 1) as f64;
        }
        total += c * (1.0 - p).powi(r as i32) * p.powi((n - r) as i32);
    }
    total
}

fn coefficient_rank(slices: &[&ncabr_core::rlnc::CodedSlice], k: usize) -> usize {
    if slices.is_empty() {
        return 0;
    }
    let rows: Vec<&[u8]> = slices.iter().map(|s| s.coeffs.as_slice()).collect();
    let m = FieldMatrix::from_rows(&rows).unwrap();
    debug_assert_eq!(m.cols(), k);
    m.rank()
}

fn codec_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let ks = [8usize, 16, 32, 64];
    let rhos = [0.8, 0.85, 0.9, 0.95, 1.0];
    let ps = [0.0, 0.01, 0.02, 0.05];
    let mut combos = Vec::new();
    for &k in &ks {
        for &rho in &rhos {
            for &p in &ps {
                combos.push((k, rho, p));
            }
        }
    }
    let n_s = 8;
    let mut full_rank = 0;
    let mut full_rank_failures = 0;
    let mut short_rank_misreported = 0;
    for t in 0..10_000 {
        let (k, rho, p) = combos[t % combos.len()];
        let data: Vec<u8> = (0..n_s * k).map(|_| rng.random()).collect();
        let source = FieldMatrix::from_vec(n_s, k, data).unwrap();
        let n = coded_count(k, rho);
        let slices = encode_generation(&source, n, 0, rng.random()).unwrap();
        let received: Vec<_> = slices.iter().filter(|_| !rng.random_bool(p)).collect();
        let rank = coefficient_rank(&received, k);
        let owned: Vec<_> = received.iter().map(|s| (*s).clone()).collect();
        let decoded = decode_generation(&owned, k);
        if rank == k {
            full_rank += 1;
            if decoded.as_ref() != Ok(&source) {
                full_rank_failures += 1;
            }
        } else if decoded != Err(CodecError::InsufficientRank(rank)) {
            short_rank_misreported += 1;
        }
    }

    let (k, n, p) = (16, 20, 0.05);
    let trials = 10_000;
    let mut failures = 0;
    for _ in 0..trials {
        let data: Vec<u8> = (0..n_s * k).map(|_| rng.random()).collect();
        let source = FieldMatrix::from_vec(n_s, k, data).unwrap();
        let slices = encode_generation(&source, n, 0, rng.random()).unwrap();
        let received: Vec<_> = slices.into_iter().filter(|_| !rng.random_bool(p)).collect();
        if decode_generation(&received, k).as_ref() != Ok(&source) {
            failures += 1;
        }
    }
    let measured = failures as f64 / trials as f64;
    let oracle = binomial_tail_below(k, n, p);
    let pass = full_rank_failures == 0 && short_rank_misreported == 0 && (measured - oracle).abs() <= 0.01;
    outcome(
        pass,
        format!(
            "{full_rank} full-rank trials, {full_rank_failures} decode failures, {short_rank_misreported} short-rank misreports; \
             (K=16,N=20,p=0.05) failure rate {measured:.4} vs binomial tail {oracle:.4}"
        ),
    )
}

fn qoe_exactness() -> Outcome {
    let levels = ladder();
    let lin = QoeParams::standard(Variant::Linear, &levels).unwrap();
    let log = QoeParams::standard(Variant::Log, &levels).unwrap();
    let hd = QoeParams::standard(Variant::Hd, &levels).unwrap();
    let checks = [
        (lin.quality(4300).unwrap(), 4.3),
        (log.quality(300).unwrap(), 0.0),
        (hd.quality(4300).unwrap(), 20.0),
        (lin.chunk_reward(None, 1850, 0.0).unwrap(), 1.85),
        (lin.chunk_reward(Some(1850), 1850, 1.0).unwrap(), 1.85 - 4.3),
        (lin.chunk_reward(Some(300), 4300, 0.0).unwrap(), 0.3),
        (
            lin.session_qoe(&ChunkLog::from_pairs(&[(300, 0.0), (4300, 0.5), (300, 0.0)])).unwrap(),
            -5.25,
        ),
    ];
    let worst_example = checks.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_telescope: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=60);
        let pairs: Vec<(u32, f64)> = (0..len)
            .map(|_| {
                let r = levels[rng.random_range(0..levels.len())];
                let t = if rng.random_bool(0.3) { rng.random_range(0.0..5.0) } else { 0.0 };
                (r, t)
            })
            .collect();
        let chunk_log = ChunkLog::from_pairs(&pairs);
        for params in [&lin, &log, &hd] {
            let mut prev = None;
            let mut sum = 0.0;
            for &(r, t) in &pairs {
                sum += params.chunk_reward(prev, r, t).unwrap();
                prev = Some(r);
            }
            let session = params.session_qoe(&chunk_log).unwrap();
            worst_telescope = worst_telescope.max((sum - session).abs() / session.abs().max(1.0));
        }
    }
    outcome(
        worst_example <= 1e-9 && worst_telescope <= 1e-9,
        format!("worst example error {worst_example:.2e}; worst telescoping error {worst_telescope:.2e} over 1000 logs x 3 variants"),
    )
}

fn toy_instance(seed: u64) -> (PolicyParams, ToyBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = NetShape {
        input: 8,
        hidden: vec![10, 10],
        heads: vec![3, 2, 2],
    };
    let params = PolicyParams::new(&shape, &mut rng);
    let samples = (0..3)
        .map(|_| {
            let obs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let action = vec![rng.random_range(0..3), rng.random_range(0..2), rng.random_range(0..2)];
            (obs, action, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))
        })
        .collect();
    (params, samples)
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)` over all parameters.
fn fd_error(params: &PolicyParams, samples: &[Sample<'_>], weights: LossWeights) -> f64 {
    let h = 1e-5;
    let (_, grads) = gradients(params, samples, weights).unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    for ti in 0..probe.tensors().len() {
        for i in 0..probe.tensors()[ti].len() {
            let orig = probe.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = orig + h;
            let up = loss_terms(&probe, samples).unwrap().weighted(weights);
            probe.tensors_mut()[ti][i] = orig - h;
            let down = loss_terms(&probe, samples).unwrap().weighted(weights);
            probe.tensors_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[flat];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
            flat += 1;
        }
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let terms = [
        ("actor", LossWeights { policy: 1.0, entropy: 0.0, critic: 0.0 }),
        ("entropy", LossWeights { policy: 0.0, entropy: 1.0, critic: 0.0 }),
        ("critic", LossWeights { policy: 0.0, entropy: 0.0, critic: 1.0 }),
    ];
    let mut worst = [0.0f64; 3];
    for inst in 0..20 {
        let (params, raw) = toy_instance(SEED + inst);
        let samples: Vec<Sample<'_>> = raw
            .iter()
            .map(|(o, a, adv, g)| Sample {
                obs: o,
                action: a,
                advantage: *adv,
                target: *g,
            })
            .collect();
        for (slot, (_, w)) in worst.iter_mut().zip(terms) {
            *slot = slot.max(fd_error(&params, &samples, w));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.iter().all(|&e| e <= 1e-4) && secs <= 10.0,
        format!(
            "worst relative error actor {:.2e}, entropy {:.2e}, critic {:.2e} over 20 instances in {secs:.2}s",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn sign_property() -> Outcome {
    let sim = SimConfig::default();
    let shape = AgentKind::Nancy.net_shape(&sim, &[128, 128]);
    let cfg = TrainConfig {
        alpha: 1e-3,
        critic_alpha: 1e-3,
        ..TrainConfig::default()
    };
    let mut raised = 0;
    for i in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + i);
        let params = PolicyParams::new(&shape, &mut rng);
        let obs: Vec<f64> = (0..shape.input).map(|_| rng.random_range(0.0..1.0)).collect();
        let action: Vec<usize> = shape.heads.iter().map(|&n| rng.random_range(0..n)).collect();
        let value = critic_forward(&params, &obs).unwrap();
        let traj = Trajectory {
            steps: vec![Step {
                obs: obs.clone(),
                action: action.clone(),
                reward: value + rng.random_range(0.1..5.0),
                done: true,
            }],
        };
        let before = actor_forward(&params, &obs).unwrap().joint_log_prob(&action);
        let (next, metrics) = update(&params, &[traj], &cfg, 0.0).unwrap();
        let after = actor_forward(&next, &obs).unwrap().joint_log_prob(&action);
        if metrics.mean_advantage > 0.0 && after > before {
            raised += 1;
        }
    }
    outcome(raised == 100, format!("{raised}/100 positive-advantage updates raised the joint log-probability"))
}

fn retransmission_reduction() -> Outcome {
    let cfg = SimConfig::default();
    let manifest = VideoManifest::synthesize(&cfg.ladder, 48, 0.1, SEED);
    let trace = Trace::new("flat", vec![(0.0, 3.0)], 0.02, 0.08).unwrap();
    let state = SessionState::new(cfg.history_len, 0.0);
    let k16 = cfg.gen_sizes.iter().position(|&k| k == 16).unwrap();
    let rate = |r: f64| cfg.code_rates.iter().position(|&x| x == r).unwrap();
    let mean_rounds = |a: Action| {
        (0..1000u64)
            .map(|s| download_chunk(&state, &trace, &manifest, &cfg, a, SEED + s).unwrap().retransmission_rounds)
            .sum::<usize>() as f64
            / 1000.0
    };
    let coded = mean_rounds(Action::new(3, k16, rate(0.8)));
    let plain = mean_rounds(Action::new(3, k16, rate(1.0)));
    outcome(
        coded <= 0.1 * plain,
        format!("mean rounds {coded:.3} at rho=0.8 vs {plain:.3} at rho=1.0 (ratio {:.4}, need <= 0.10)", coded / plain),
    )
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism(work: &Path) -> Outcome {
    let traces = work.join("determinism_traces");
    write_traces(&traces, 3, 200.0, &TraceModel::default(), SEED + 3).unwrap();
    let run = |tag: &str| {
        let out = work.join(format!("determinism_{tag}"));
        let base = RunConfig {
            traces: Some(traces.clone()),
            out: out.clone(),
            seed: SEED,
            workers: 1,
            epochs: 30,
            validate_every: 10,
            validation_episodes: 2,
            chunk_count: 16,
            ..RunConfig::default()
        };
        let trained = cmd_train(&base).unwrap();
        for algo in ["nancy", "bb"] {
            let cfg = RunConfig {
                algo: algo.into(),
                checkpoints: vec![trained.checkpoint.clone()],
                ..base.clone()
            };
            cmd_eval(&cfg).unwrap();
        }
        read_all(&out)
    };
    let a = run("a");
    let b = run("b");
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        a.len() == b.len() && a.len() == 8 && differing.is_empty(),
        format!("{} artifacts per run, differing: {:?}", a.len(), differing),
    )
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Check<'_>)> = vec![
        ("directional QoE gain", Box::new(|| directional_qoe(work.path()))),
        ("degeneracy equivalence", Box::new(|| degeneracy(work.path()))),
        ("codec soundness", Box::new(codec_soundness)),
        ("QoE exactness", Box::new(qoe_exactness)),
        ("gradient correctness", Box::new(gradient_correctness)),
        ("policy-gradient sign", Box::new(sign_property)),
        ("retransmission reduction", Box::new(retransmission_reduction)),
        ("determinism", Box::new(|| determinism(work.path()))),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} ({name}): {verdict} [{:.1}s] {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
