use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BitrateLadder, SimError};

/// Chunk sizes in bytes, indexed `[chunk][level]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoManifest {
    pub sizes: Vec<Vec<u64>>,
}

impl VideoManifest {
    pub fn new(sizes: Vec<Vec<u64>>) -> Result<Self, SimError> {
        if sizes.is_empty() {
            return Err(SimError::Manifest("no chunks".into()));
        }
        let levels = sizes[0].len();
        for (c, row) in sizes.iter().enumerate() {
            if row.len() != levels || levels == 0 {
                return Err(SimError::Manifest(format!("chunk {c} has {} levels", row.len())));
            }
            if row.contains(&0) || row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SimError::Manifest(format!(
                    "chunk {c} sizes must be positive and strictly increasing"
                )));
            }
        }
        Ok(Self { sizes })
    }

    /// Nominal `kbps * duration / 8` bytes per chunk with uniform `±jitter`
    /// relative noise.
    pub fn synthesize(ladder: &BitrateLadder, chunk_count: usize, jitter: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = (0..chunk_count)
            .map(|_| {
                let mut row: Vec<u64> = Vec::with_capacity(ladder.levels_kbps.len());
                for &kbps in &ladder.levels_kbps {
                    let nominal = kbps as f64 * 1000.0 * ladder.chunk_duration / 8.0;
                    let noise = if jitter > 0.0 {
                        rng.random_range(-jitter..=jitter)
                    } else {
                        0.0
                    };
                    let mut size = (nominal * (1.0 + noise)).round().max(1.0) as u64;
                    if let Some(&prev) = row.last() {
                        size = size.max(prev + 1);
                    }
                    row.push(size);
                }
                row
            })
            .collect();
        Self { sizes }
    }

    /// Parses `chunk_index level_index size_bytes` triples.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut triples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let parsed = match f.as_slice() {
                [c, l, s] => match (c.parse::<usize>(), l.parse::<usize>(), s.parse::<u64>()) {
                    (Ok(c), Ok(l), Ok(s)) => Some((c, l, s)),
                    _ => None,
                },
                _ => None,
            };
            let Some(t) = parsed else {
                return Err(SimError::Parse {
                    line: i + 1,
                    msg: format!("expected `chunk level bytes`, got {line:?}"),
                });
            };
            triples.push(t);
        }
        let chunks = triples.iter().map(|t| t.0 + 1).max().unwrap_or(0);
        let levels = triples.iter().map(|t| t.1 + 1).max().unwrap_or(0);
        let mut sizes = vec![vec![0u64; levels]; chunks];
        for (c, l, s) in triples {
            if sizes[c][l] != 0 {
                return Err(SimError::Manifest(format!("duplicate entry for chunk {c} level {l}")));
            }
            sizes[c][l] = s;
        }
        Self::new(sizes)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn chunk_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn levels(&self) -> usize {
        self.sizes[0].len()
    }

    pub fn size(&self, chunk: usize, level: usize) -> u64 {
        self.sizes[chunk][level]
    }
}
