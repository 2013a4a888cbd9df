//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string, or an error message string.

use ncabr_core::baselines::{BaselineAgent, BaselineKind};
use ncabr_core::harness::TraceModel;
use ncabr_core::qoe::{ChunkLog, QoeParams, Variant};
use ncabr_core::rlnc::decode_failure_prob;
use ncabr_core::sim::{Action, ChannelMode, Session, SimConfig, Trace, VideoManifest};
use serde_json::json;
use wasm_bindgen::prelude::*;

const TRACE_SECONDS: f64 = 320.0;
const CHUNKS: usize = 48;
const RTT: f64 = 0.08;

fn binomial_below(k: usize, n: usize, p: f64) -> f64 {
    let mut total = 0.0;
    let mut c = 1.0;
    for r in 0..k.min(n + 1) {
        if r > 0 {
            c = c * (n - r + 1) as f64 / r as f64;
        }
        total += c * (1.0 - p).powi(r as i32) * p.powi((n - r) as i32);
    }
    total
}

/// Generation decode-failure probability over loss ratios `0..=p_max`.
///
/// Returns `[{"p", "measured", "binomial"}]`; `binomial` is the exact
/// probability that fewer than `k` of `n` slices arrive.
#[wasm_bindgen]
pub fn decode_failure_curve(k: u32, n: u32, p_max: f64, points: u32, trials: u32, seed: u32) -> Result<String, String> {
    let (k, n) = (k as usize, n as usize);
    if k == 0 || n < k || n > 255 {
        return Err(format!("need 0 < k <= n <= 255, got k={k} n={n}"));
    }
    if !(0.0..1.0).contains(&p_max) || points < 2 || trials == 0 {
        return Err("need 0 <= p_max < 1, at least 2 points and 1 trial".into());
    }
    let curve: Vec<_> = (0..points)
        .map(|i| {
            let p = p_max * i as f64 / (points - 1) as f64;
            let measured = decode_failure_prob(k, n, p, trials as usize, seed as u64 + i as u64);
            json!({ "p": p, "measured": measured, "binomial": binomial_below(k, n, p) })
        })
        .collect();
    Ok(serde_json::Value::from(curve).to_string())
}

fn baseline(name: &str) -> Result<BaselineKind, String> {
    Ok(match name {
        "rb" => BaselineKind::RateBased,
        "bb" => BaselineKind::BufferBased { reservoir: 5.0, cushion: 10.0 },
        "bola" => BaselineKind::Bola { gamma_p: 5.0 },
        "robustmpc" => BaselineKind::RobustMpc { horizon: 5 },
        _ => return Err(format!("unknown controller {name:?}; expected rb, bb, bola or robustmpc")),
    })
}

/// Streams one synthetic session with a rule-based bitrate controller and a
/// fixed coding setting.
///
/// `gen_size` and `code_rate` must be members of the default action sets.
/// Returns per-chunk records and the three QoE scores.
#[wasm_bindgen]
pub fn simulate_session(controller: &str, gen_size: u32, code_rate: f64, loss: f64, seed: u32) -> Result<String, String> {
    let kind = baseline(controller)?;
    let cfg = SimConfig::default();
    let g = cfg
        .gen_sizes
        .iter()
        .position(|&x| x == gen_size as usize)
        .ok_or_else(|| format!("generation size must be one of {:?}", cfg.gen_sizes))?;
    let r = cfg
        .code_rates
        .iter()
        .position(|&x| (x - code_rate).abs() < 1e-9)
        .ok_or_else(|| format!("code rate must be one of {:?}", cfg.code_rates))?;

    let samples = TraceModel::default().generate(TRACE_SECONDS, seed as u64);
    let trace = Trace::new("demo", samples, loss, RTT).map_err(|e| e.to_string())?;
    let manifest = VideoManifest::synthesize(&cfg.ladder, CHUNKS, 0.1, seed as u64);
    let scorers: Vec<QoeParams> = Variant::ALL
        .iter()
        .map(|&v| QoeParams::standard(v, &cfg.ladder.levels_kbps))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut session =
        Session::new(&cfg, &manifest, &trace, &scorers[0], seed as u64, ChannelMode::Coded).map_err(|e| e.to_string())?;
    let mut agent = BaselineAgent::new(kind);
    while !session.done() {
        let level = agent.decide(&session).bitrate;
        session.step(Action::new(level, g, r)).map_err(|e| e.to_string())?;
    }

    let chunks: Vec<_> = session
        .records()
        .iter()
        .map(|rec| {
            json!({
                "chunk": rec.chunk,
                "bitrate_kbps": rec.result.bitrate_kbps,
                "buffer_s": rec.result.buffer_after,
                "rebuffer_s": rec.result.rebuffer_time,
                "download_s": rec.result.download_time,
                "rounds": rec.result.retransmission_rounds,
                "throughput_mbps": rec.result.throughput_mbps(),
            })
        })
        .collect();
    let qoe: Vec<f64> = scorers
        .iter()
        .map(|s| s.session_qoe(session.log()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let rounds: usize = session.records().iter().map(|r| r.result.retransmission_rounds).sum();
    Ok(json!({
        "chunks": chunks,
        "qoe": qoe,
        "total_rounds": rounds,
    })
    .to_string())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| format!("bad {what} {t:?}")))
        .collect()
}

/// Scores a hand-entered session: comma-separated bitrates (kbps, from the
/// default ladder) and matching rebuffer durations in seconds.
///
/// Returns `{"rewards": [...], "total": x}` for QoE variant 1, 2 or 3.
#[wasm_bindgen]
pub fn qoe_score(variant: u8, bitrates_kbps: &str, rebuffers_s: &str) -> Result<String, String> {
    let variant: Variant = variant.to_string().parse().map_err(|_| format!("unknown QoE variant {variant}"))?;
    let rates: Vec<u32> = parse_list(bitrates_kbps, "bitrate")?;
    let stalls: Vec<f64> = parse_list(rebuffers_s, "rebuffer time")?;
    if rates.len() != stalls.len() || rates.is_empty() {
        return Err(format!("{} bitrates but {} rebuffer times", rates.len(), stalls.len()));
    }
    let params = QoeParams::standard(variant, &SimConfig::default().ladder.levels_kbps).map_err(|e| e.to_string())?;
    let pairs: Vec<(u32, f64)> = rates.into_iter().zip(stalls).collect();
    let log = ChunkLog::from_pairs(&pairs);
    let rewards = log.rewards(&params).map_err(|e| e.to_string())?;
    let total = params.session_qoe(&log).map_err(|e| e.to_string())?;
    Ok(json!({ "rewards": rewards, "total": total }).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn failure_curve_tracks_binomial() {
        let v = parse(&decode_failure_curve(16, 20, 0.2, 5, 4000, 1).unwrap());
        let pts = v.as_array().unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[0]["measured"], 0.0);
        for p in pts {
            let (m, b) = (p["measured"].as_f64().unwrap(), p["binomial"].as_f64().unwrap());
            assert!((m - b).abs() < 0.03, "{p}");
        }
        assert!(decode_failure_curve(8, 4, 0.1, 5, 10, 0).is_err());
    }

    #[test]
    fn binomial_oracle_small_case() {
        // fewer than 2 of 2 arrive: 1 - (1-p)^2
        assert!((binomial_below(2, 2, 0.1) - 0.19).abs() < 1e-12);
        assert_eq!(binomial_below(1, 3, 0.0), 0.0);
    }

    #[test]
    fn session_reports_every_scored_chunk() {
        let v = parse(&simulate_session("bb", 32, 0.9, 0.02, 7).unwrap());
        assert_eq!(v["chunks"].as_array().unwrap().len(), CHUNKS - 1);
        assert_eq!(v["qoe"].as_array().unwrap().len(), 3);
        assert!(v["chunks"][0]["throughput_mbps"].as_f64().unwrap() > 0.0);
        let again = simulate_session("bb", 32, 0.9, 0.02, 7).unwrap();
        assert_eq!(v, parse(&again));
    }

    #[test]
    fn session_rejects_bad_inputs() {
        assert!(simulate_session("dash", 32, 0.9, 0.0, 0).is_err());
        assert!(simulate_session("rb", 33, 0.9, 0.0, 0).is_err());
        assert!(simulate_session("rb", 32, 0.42, 0.0, 0).is_err());
        assert!(simulate_session("rb", 32, 0.9, 1.5, 0).is_err());
    }

    #[test]
    fn qoe_matches_hand_computation() {
        let v = parse(&qoe_score(1, "300, 4300, 300", "0, 0.5, 0").unwrap());
        assert!((v["total"].as_f64().unwrap() + 5.25).abs() < 1e-12);
        let sum: f64 = v["rewards"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum + 5.25).abs() < 1e-12);
        assert!(qoe_score(4, "300", "0").is_err());
        assert!(qoe_score(1, "300,750", "0").is_err());
        assert!(qoe_score(1, "301", "0").is_err());
    }
}
