//! Plain-text checkpoint format.
//!
//! ```text
//! ncabr-checkpoint 1
//! kind nancy
//! input 29
//! hidden 128 128
//! heads 6 4 5
//! actor.0.w 128 29 <row-major values>
//! actor.0.b 128 1 <values>
//! ...
//! ```
//!
//! Tensors follow in order: actor trunk layers, actor heads, critic trunk
//! layers, value head; weights before bias. Values use the shortest
//! representation that round-trips exactly.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::net::Dense;
use super::policy::{NetShape, PolicyParams};
use super::{AgentError, AgentKind};

const MAGIC: &str = "ncabr-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: AgentKind,
    pub params: PolicyParams,
}

fn bad(msg: impl Into<String>) -> AgentError {
    AgentError::Checkpoint(msg.into())
}

fn named_layers(p: &PolicyParams) -> Vec<(String, &Dense)> {
    let mut out = Vec::new();
    out.extend(p.actor_trunk.iter().enumerate().map(|(i, l)| (format!("actor.{i}"), l)));
    out.extend(p.heads.iter().enumerate().map(|(i, l)| (format!("head.{i}"), l)));
    out.extend(p.critic_trunk.iter().enumerate().map(|(i, l)| (format!("critic.{i}"), l)));
    out.push(("value".to_string(), &p.value_head));
    out
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint<W: Write>(ck: &Checkpoint, mut w: W) -> Result<(), AgentError> {
    let shape = ck.params.shape();
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "kind {}", ck.kind);
    let _ = writeln!(s, "input {}", shape.input);
    let _ = writeln!(s, "hidden {}", join(&shape.hidden));
    let _ = writeln!(s, "heads {}", join(&shape.heads));
    for (name, l) in named_layers(&ck.params) {
        for (suffix, rows, cols, vals) in [("w", l.outputs, l.inputs, &l.weights), ("b", l.outputs, 1, &l.bias)] {
            let _ = write!(s, "{name}.{suffix} {rows} {cols}");
            for v in vals.iter() {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
    }
    w.write_all(s.as_bytes()).map_err(|e| bad(e.to_string()))
}

fn parse_list(line: &str, key: &str) -> Result<Vec<usize>, AgentError> {
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| bad(format!("expected {key:?} line, got {line:?}")))?;
    rest.split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad number {t:?} in {key} line"))))
        .collect()
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint, AgentError> {
    let mut lines = BufReader::new(r).lines();
    let mut next = |what: &str| -> Result<String, AgentError> {
        lines
            .next()
            .ok_or_else(|| bad(format!("missing {what}")))?
            .map_err(|e| bad(e.to_string()))
    };
    if next("header")?.trim() != MAGIC {
        return Err(bad("not a checkpoint or unsupported version"));
    }
    let kind_line = next("kind")?;
    let kind: AgentKind = kind_line
        .strip_prefix("kind ")
        .ok_or_else(|| bad("missing kind"))?
        .trim()
        .parse()
        .map_err(bad)?;
    let input = parse_list(&next("input")?, "input")?;
    let [input] = input[..] else {
        return Err(bad("input line needs one value"));
    };
    let shape = NetShape {
        input,
        hidden: parse_list(&next("hidden")?, "hidden")?,
        heads: parse_list(&next("heads")?, "heads")?,
    };
    if shape.heads.is_empty() || shape.heads.contains(&0) || shape.hidden.contains(&0) || input == 0 {
        return Err(bad("layer sizes must be positive"));
    }
    let mut params = PolicyParams::zeros(&shape);
    let names: Vec<String> = named_layers(&params).into_iter().map(|(n, _)| n).collect();
    let mut tensors = params.tensors_mut();
    for (i, t) in tensors.iter_mut().enumerate() {
        let expected = format!("{}.{}", names[i / 2], if i % 2 == 0 { "w" } else { "b" });
        let line = next(&expected)?;
        let mut tok = line.split_whitespace();
        if tok.next() != Some(expected.as_str()) {
            return Err(bad(format!("expected tensor {expected}")));
        }
        let dims: Vec<usize> = tok
            .by_ref()
            .take(2)
            .map(|d| d.parse().map_err(|_| bad(format!("bad dimension in {expected}"))))
            .collect::<Result<_, _>>()?;
        if dims.len() != 2 || dims[0] * dims[1] != t.len() {
            return Err(bad(format!("{expected}: shape does not match header")));
        }
        let mut n = 0;
        for (slot, v) in t.iter_mut().zip(tok.by_ref()) {
            *slot = v.parse().map_err(|_| bad(format!("bad value {v:?} in {expected}")))?;
            if !slot.is_finite() {
                return Err(bad(format!("non-finite value in {expected}")));
            }
            n += 1;
        }
        if n != t.len() || tok.next().is_some() {
            return Err(bad(format!("{expected}: wrong number of values")));
        }
    }
    Ok(Checkpoint { kind, params })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), AgentError> {
    let file = std::fs::File::create(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(ck, &mut w)?;
    w.flush().map_err(|e| bad(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, AgentError> {
    let file = std::fs::File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    read_checkpoint(file)
}
