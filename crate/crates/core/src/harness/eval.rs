use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{QoeSelection, RunConfig};
use super::{mix, HarnessError};
use crate::agent::{
    act_greedy, save_checkpoint, train, AgentKind, Checkpoint, CurvePoint, PolicyParams, TrainEnv, TrainResult,
};
use crate::baselines::{BaselineAgent, BaselineKind};
use crate::par::map_ordered;
use crate::qoe::{QoeParams, Variant};
use crate::sim::{load_trace, ChannelMode, ChunkRecord, Session, SimConfig, Trace, VideoManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algo {
    Nancy,
    Pensieve,
    RobustMpc,
    Bola,
    Rb,
    Bb,
}

impl Algo {
    pub const ALL: [Algo; 6] = [Algo::Nancy, Algo::Pensieve, Algo::RobustMpc, Algo::Bola, Algo::Rb, Algo::Bb];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Nancy => "nancy",
            Algo::Pensieve => "pensieve",
            Algo::RobustMpc => "robustmpc",
            Algo::Bola => "bola",
            Algo::Rb => "rb",
            Algo::Bb => "bb",
        }
    }

    pub fn agent_kind(self) -> Option<AgentKind> {
        match self {
            Algo::Nancy => Some(AgentKind::Nancy),
            Algo::Pensieve => Some(AgentKind::Pensieve),
            _ => None,
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| HarnessError::UnknownAlgo(s.to_string()))
    }
}

/// A bitrate controller ready to run.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Agent { kind: AgentKind, params: PolicyParams },
    Baseline(BaselineKind),
}

impl Policy {
    /// Builds the policy for `algo`, taking learned weights from the
    /// configured checkpoint of the matching kind.
    pub fn for_algo(algo: Algo, cfg: &RunConfig) -> Result<Self, HarnessError> {
        let baseline = match algo {
            Algo::RobustMpc => BaselineKind::RobustMpc {
                horizon: cfg.mpc_horizon,
            },
            Algo::Bola => BaselineKind::Bola {
                gamma_p: cfg.bola_gamma_p,
            },
            Algo::Rb => BaselineKind::RateBased,
            Algo::Bb => BaselineKind::BufferBased {
                reservoir: cfg.bb_reservoir,
                cushion: cfg.bb_cushion,
            },
            Algo::Nancy | Algo::Pensieve => {
                let kind = algo.agent_kind().expect("learned");
                for path in &cfg.checkpoints {
                    let ck = crate::agent::load_checkpoint(path)?;
                    if ck.kind == kind {
                        return Ok(Policy::Agent { kind, params: ck.params });
                    }
                }
                return Err(HarnessError::MissingCheckpoint(algo.name().into()));
            }
        };
        Ok(Policy::Baseline(baseline))
    }
}

/// Traces, loss draws and session seeds shared by every algorithm in a run.
#[derive(Debug, Clone)]
pub struct EvalSetup {
    pub sim: SimConfig,
    pub manifest: VideoManifest,
    pub traces: Vec<Trace>,
    pub losses: Vec<f64>,
    pub seeds: Vec<u64>,
    pub qoe: QoeSelection,
    scorers: Vec<QoeParams>,
}

impl EvalSetup {
    /// Draws one loss ratio per trace from `loss_set`; draws depend only on
    /// `seed` and the trace position.
    pub fn new(
        sim: SimConfig,
        manifest: VideoManifest,
        traces: Vec<Trace>,
        loss_set: &[f64],
        seed: u64,
        qoe: QoeSelection,
    ) -> Result<Self, HarnessError> {
        if traces.is_empty() {
            return Err(HarnessError::Config("no evaluation traces".into()));
        }
        if loss_set.is_empty() {
            return Err(HarnessError::Config("empty loss set".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x1055));
        let losses = traces.iter().map(|_| loss_set[rng.random_range(0..loss_set.len())]).collect();
        let seeds = (0..traces.len()).map(|i| mix(seed, i as u64)).collect();
        let scorers = Variant::ALL
            .iter()
            .map(|&v| QoeParams::standard(v, &sim.ladder.levels_kbps))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            sim,
            manifest,
            traces,
            losses,
            seeds,
            qoe,
            scorers,
        })
    }

    pub fn scorer(&self, v: Variant) -> &QoeParams {
        &self.scorers[v.number() as usize - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    pub name: String,
    pub loss_ratio: f64,
    /// Session QoE for the linear, log and HD variants.
    pub qoe: [f64; 3],
    pub mean_bitrate_kbps: f64,
    pub records: Vec<ChunkRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub algo: String,
    pub traces: Vec<TraceResult>,
}

impl EvalReport {
    pub fn mean_qoe(&self, v: Variant) -> f64 {
        let i = v.number() as usize - 1;
        self.traces.iter().map(|t| t.qoe[i]).sum::<f64>() / self.traces.len() as f64
    }

    pub fn mean_bitrate_kbps(&self) -> f64 {
        self.traces.iter().map(|t| t.mean_bitrate_kbps).sum::<f64>() / self.traces.len() as f64
    }

    pub fn mean_retransmission_rounds(&self) -> f64 {
        let (sum, n) = self.traces.iter().flat_map(|t| &t.records).fold((0usize, 0usize), |(s, n), r| {
            (s + r.result.retransmission_rounds, n + 1)
        });
        sum as f64 / n.max(1) as f64
    }

    /// `algo=bb traces=3 qoe1=... qoe2=... qoe3=...`
    pub fn summary_line(&self, variants: &[Variant]) -> String {
        let mut s = format!("algo={} traces={}", self.algo, self.traces.len());
        for &v in variants {
            let _ = write!(s, " {v}={:.6}", self.mean_qoe(v));
        }
        let _ = write!(s, " bitrate_kbps={:.3}", self.mean_bitrate_kbps());
        s
    }
}

fn run_trace(setup: &EvalSetup, policy: &Policy, i: usize) -> Result<TraceResult, HarnessError> {
    let trace = setup.traces[i].with_loss(setup.losses[i]);
    let reward = setup.scorer(setup.qoe.reward_variant());
    let mut session = Session::new(&setup.sim, &setup.manifest, &trace, reward, setup.seeds[i], ChannelMode::Coded)?;
    let mut baseline = match policy {
        Policy::Baseline(kind) => Some(BaselineAgent::new(*kind)),
        Policy::Agent { .. } => None,
    };
    while !session.done() {
        let action = match (policy, baseline.as_mut()) {
            (Policy::Agent { kind, params }, _) => {
                let idx = act_greedy(params, session.observation().as_slice())?;
                kind.to_action(&setup.sim, &idx)
            }
            (Policy::Baseline(_), Some(agent)) => agent.decide(&session),
            (Policy::Baseline(_), None) => unreachable!("baseline agent is built above"),
        };
        session.step(action)?;
    }
    let mut qoe = [0.0; 3];
    for (slot, v) in qoe.iter_mut().zip(Variant::ALL) {
        *slot = setup.scorer(v).session_qoe(session.log())?;
    }
    let records = session.records().to_vec();
    let mean_bitrate_kbps =
        records.iter().map(|r| r.result.bitrate_kbps as f64).sum::<f64>() / records.len().max(1) as f64;
    Ok(TraceResult {
        name: trace.name.clone(),
        loss_ratio: setup.losses[i],
        qoe,
        mean_bitrate_kbps,
        records,
    })
}

/// Runs `policy` over every trace of `setup`; results come back in trace order.
pub fn evaluate(setup: &EvalSetup, policy: &Policy, algo: &str) -> Result<EvalReport, HarnessError> {
    let idx: Vec<usize> = (0..setup.traces.len()).collect();
    let traces = map_ordered(&idx, |&i| run_trace(setup, policy, i))?;
    Ok(EvalReport {
        algo: algo.to_string(),
        traces,
    })
}

/// Loads every file in `dir`, sorted by name; the trace name is the file stem.
pub fn load_traces(dir: &Path, rtt: f64) -> Result<Vec<Trace>, HarnessError> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| HarnessError::io(dir, err)))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    if paths.is_empty() {
        return Err(HarnessError::Config(format!("no trace files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let mut t = load_trace(p, 0.0, rtt).map_err(|e| HarnessError::io(p, e))?;
            t.name = p.file_stem().map_or_else(|| t.name.clone(), |s| s.to_string_lossy().into_owned());
            Ok(t)
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Writes `<algo>_chunks.csv`, `<algo>_traces.csv` and `<algo>_summary.csv`
/// into `out` and returns the summary line.
pub fn write_eval_outputs(report: &EvalReport, out: &Path, variants: &[Variant]) -> Result<String, HarnessError> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut chunks = String::from("trace,chunk,bitrate_kbps,rebuffer_s,buffer_s,download_s,retx_rounds,rho,K,reward\n");
    let mut traces = String::from("trace,loss_ratio,qoe1,qoe2,qoe3\n");
    for t in &report.traces {
        for r in &t.records {
            let d = &r.result;
            let _ = writeln!(
                chunks,
                "{},{},{},{},{},{},{},{},{},{}",
                t.name,
                r.chunk,
                d.bitrate_kbps,
                d.rebuffer_time,
                d.buffer_after,
                d.download_time,
                d.retransmission_rounds,
                d.code_rate,
                d.gen_size,
                r.reward
            );
        }
        let _ = writeln!(traces, "{},{},{},{},{}", t.name, t.loss_ratio, t.qoe[0], t.qoe[1], t.qoe[2]);
    }
    let mut summary = String::from("algo,variant,mean_qoe,mean_bitrate_kbps\n");
    for &v in variants {
        let _ = writeln!(summary, "{},{v},{},{}", report.algo, report.mean_qoe(v), report.mean_bitrate_kbps());
    }
    write_file(&out.join(format!("{}_chunks.csv", report.algo)), &chunks)?;
    write_file(&out.join(format!("{}_traces.csv", report.algo)), &traces)?;
    write_file(&out.join(format!("{}_summary.csv", report.algo)), &summary)?;
    Ok(report.summary_line(variants))
}

fn setup_from(cfg: &RunConfig) -> Result<EvalSetup, HarnessError> {
    cfg.validate()?;
    let sim = cfg.sim_config()?;
    let manifest = cfg.manifest(&sim)?;
    let dir = cfg
        .traces
        .as_deref()
        .ok_or_else(|| HarnessError::Config("a trace directory is required".into()))?;
    let traces = load_traces(dir, cfg.rtt)?;
    EvalSetup::new(sim, manifest, traces, &cfg.loss_set, cfg.seed, cfg.qoe_selection()?)
}

/// Evaluates `cfg.algo` and writes its CSVs into `cfg.out`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(EvalReport, String), HarnessError> {
    let algo: Algo = cfg.algo.parse()?;
    let policy = Policy::for_algo(algo, cfg)?;
    let setup = setup_from(cfg)?;
    let report = evaluate(&setup, &policy, algo.name())?;
    let line = write_eval_outputs(&report, &cfg.out, &setup.qoe.variants())?;
    Ok((report, line))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub algo: String,
    pub variant: Variant,
    pub mean_qoe: f64,
    pub mean_bitrate_kbps: f64,
    /// `(mean_qoe - reference) / |reference|` against the first algorithm.
    pub gain: f64,
}

/// Paired evaluation of `cfg.algos`; writes per-algorithm CSVs and `compare.csv`.
pub fn cmd_compare(cfg: &RunConfig) -> Result<Vec<CompareRow>, HarnessError> {
    if cfg.algos.len() < 2 {
        return Err(HarnessError::Config("compare needs at least two algorithms".into()));
    }
    let algos: Vec<Algo> = cfg.algos.iter().map(|a| a.parse()).collect::<Result<_, _>>()?;
    let policies: Vec<Policy> = algos.iter().map(|&a| Policy::for_algo(a, cfg)).collect::<Result<_, _>>()?;
    let setup = setup_from(cfg)?;
    let variants = setup.qoe.variants();
    let mut reports = Vec::new();
    for (algo, policy) in algos.iter().zip(&policies) {
        let report = evaluate(&setup, policy, algo.name())?;
        write_eval_outputs(&report, &cfg.out, &variants)?;
        reports.push(report);
    }
    let mut rows = Vec::new();
    for report in &reports {
        for &v in &variants {
            let reference = reports[0].mean_qoe(v);
            let q = report.mean_qoe(v);
            rows.push(CompareRow {
                algo: report.algo.clone(),
                variant: v,
                mean_qoe: q,
                mean_bitrate_kbps: report.mean_bitrate_kbps(),
                gain: (q - reference) / reference.abs(),
            });
        }
    }
    let mut csv = format!("algo,variant,mean_qoe,mean_bitrate_kbps,gain_vs_{}\n", reports[0].algo);
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.algo, r.variant, r.mean_qoe, r.mean_bitrate_kbps, r.gain);
    }
    write_file(&cfg.out.join("compare.csv"), &csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub result: TrainResult,
}

fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("epoch,mean_reward,mean_entropy\n");
    for p in curve {
        let _ = writeln!(s, "{},{},{}", p.epoch, p.mean_reward, p.mean_entropy);
    }
    s
}

/// Trains `cfg.algo` (nancy or pensieve) and writes `<algo>.ckpt` and
/// `<algo>_curve.csv` into `cfg.out`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutputs, HarnessError> {
    let algo: Algo = cfg.algo.parse()?;
    let kind = algo
        .agent_kind()
        .ok_or_else(|| HarnessError::Config(format!("{algo} is not trainable")))?;
    let setup = setup_from(cfg)?;
    let tc = cfg.train_config()?;
    let mut env = TrainEnv {
        qoe: setup.scorer(setup.qoe.reward_variant()).clone(),
        sim: setup.sim,
        manifest: setup.manifest,
        traces: setup.traces,
        loss_set: cfg.loss_set.clone(),
        validation: Vec::new(),
        kind,
    };
    env.spread_validation(cfg.validation_episodes, mix(cfg.seed, 0x7A11));
    let shape = kind.net_shape(&env.sim, &tc.hidden);
    let init = PolicyParams::new(&shape, &mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x1417)));
    let result = train(&env, &tc, init)?;

    std::fs::create_dir_all(&cfg.out).map_err(|e| HarnessError::io(&cfg.out, e))?;
    let checkpoint = cfg.out.join(format!("{algo}.ckpt"));
    save_checkpoint(
        &Checkpoint {
            kind,
            params: result.params.clone(),
        },
        &checkpoint,
    )?;
    let curve = cfg.out.join(format!("{algo}_curve.csv"));
    write_file(&curve, &curve_csv(&result.curve))?;
    Ok(TrainOutputs {
        checkpoint,
        curve,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{write_traces, TraceModel};
    use crate::qoe::ChunkLog;

    fn cfg_with_traces(dir: &Path, out: &Path, count: usize) -> RunConfig {
        write_traces(dir, count, 200.0, &TraceModel::default(), 3).unwrap();
        RunConfig {
            traces: Some(dir.to_path_buf()),
            out: out.to_path_buf(),
            chunk_count: 12,
            mpc_horizon: 3,
            ..RunConfig::default()
        }
    }

    #[test]
    fn algo_names() {
        for a in Algo::ALL {
            assert_eq!(a.name().parse::<Algo>().unwrap(), a);
        }
        assert!(matches!("dash".parse::<Algo>(), Err(HarnessError::UnknownAlgo(_))));
        assert!(matches!(
            Policy::for_algo(Algo::Nancy, &RunConfig::default()),
            Err(HarnessError::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn bb_summary_is_row_mean() {
        let t = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            algo: "bb".into(),
            ..cfg_with_traces(&t.path().join("traces"), &t.path().join("out"), 3)
        };
        let (report, line) = cmd_eval(&cfg).unwrap();
        assert_eq!(report.traces.len(), 3);
        let rows = std::fs::read_to_string(t.path().join("out/bb_traces.csv")).unwrap();
        let q1: Vec<f64> = rows.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
        assert_eq!(q1.len(), 3);
        assert_eq!(report.mean_qoe(Variant::Linear), q1.iter().sum::<f64>() / 3.0);
        assert!(line.starts_with("algo=bb traces=3 qoe1="));
    }

    #[test]
    fn per_trace_qoe_recomputes_from_chunks() {
        let t = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            algo: "robustmpc".into(),
            ..cfg_with_traces(&t.path().join("traces"), &t.path().join("out"), 2)
        };
        cmd_eval(&cfg).unwrap();
        let chunks = std::fs::read_to_string(t.path().join("out/robustmpc_chunks.csv")).unwrap();
        let traces = std::fs::read_to_string(t.path().join("out/robustmpc_traces.csv")).unwrap();
        let scorer = QoeParams::standard(Variant::Linear, &cfg.ladder_kbps).unwrap();
        for row in traces.lines().skip(1) {
            let cols: Vec<&str> = row.split(',').collect();
            let mut log = ChunkLog::default();
            for c in chunks.lines().skip(1).filter(|l| l.starts_with(&format!("{},", cols[0]))) {
                let f: Vec<&str> = c.split(',').collect();
                log.push(f[2].parse().unwrap(), f[3].parse().unwrap());
            }
            assert_eq!(log.entries.len(), 11);
            assert_eq!(scorer.session_qoe(&log).unwrap(), cols[2].parse::<f64>().unwrap());
        }
    }

    #[test]
    fn loss_column_from_the_grid() {
        let t = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            algo: "rb".into(),
            ..cfg_with_traces(&t.path().join("traces"), &t.path().join("out"), 8)
        };
        cmd_eval(&cfg).unwrap();
        let rows = std::fs::read_to_string(t.path().join("out/rb_traces.csv")).unwrap();
        for r in rows.lines().skip(1) {
            let p: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
            let milli = p * 1000.0;
            assert!((milli - milli.round()).abs() < 1e-9 && (0.0..=20.0).contains(&milli), "{p}");
        }
    }

    #[test]
    fn compare_same_algorithm_twice() {
        let t = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            algos: vec!["bb".into(), "bola".into(), "bb".into()],
            ..cfg_with_traces(&t.path().join("traces"), &t.path().join("out"), 3)
        };
        let rows = cmd_compare(&cfg).unwrap();
        assert_eq!(rows.len(), 9);
        for i in 0..3 {
            assert_eq!(rows[i], rows[6 + i]);
            assert_eq!(rows[i].gain, 0.0);
            let r = &rows[3 + i];
            let hand = (r.mean_qoe - rows[i].mean_qoe) / rows[i].mean_qoe.abs();
            assert_eq!(r.gain, hand);
        }
        let csv = std::fs::read_to_string(t.path().join("out/compare.csv")).unwrap();
        assert!(csv.starts_with("algo,variant,mean_qoe,mean_bitrate_kbps,gain_vs_bb\n"));
        assert_eq!(csv.lines().count(), 10);
    }

    #[test]
    fn paired_losses_across_algorithms() {
        let t = tempfile::tempdir().unwrap();
        let cfg = cfg_with_traces(&t.path().join("traces"), &t.path().join("out"), 4);
        let setup = setup_from(&cfg).unwrap();
        let a = evaluate(&setup, &Policy::Baseline(BaselineKind::RateBased), "rb").unwrap();
        let b = evaluate(&setup, &Policy::Baseline(BaselineKind::Bola { gamma_p: 5.0 }), "bola").unwrap();
        let la: Vec<f64> = a.traces.iter().map(|t| t.loss_ratio).collect();
        let lb: Vec<f64> = b.traces.iter().map(|t| t.loss_ratio).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn train_then_eval_learned_policy() {
        let t = tempfile::tempdir().unwrap();
        let base = cfg_with_traces(&t.path().join("traces"), &t.path().join("out"), 2);
        let cfg = RunConfig {
            epochs: 3,
            workers: 2,
            hidden: vec![16],
            validation_episodes: 2,
            validate_every: 1,
            ..base
        };
        let out = cmd_train(&cfg).unwrap();
        let curve = std::fs::read_to_string(&out.curve).unwrap();
        assert_eq!(curve.lines().count(), 4);
        let eval_cfg = RunConfig {
            algo: "nancy".into(),
            checkpoints: vec![out.checkpoint.clone()],
            ..cfg.clone()
        };
        let (report, _) = cmd_eval(&eval_cfg).unwrap();
        assert_eq!(report.traces.len(), 2);
        let missing = RunConfig {
            algo: "pensieve".into(),
            ..eval_cfg
        };
        assert!(matches!(cmd_eval(&missing), Err(HarnessError::MissingCheckpoint(_))));
    }
}
