//! Systematic per-generation random linear network coding.
//!
//! A chunk of `chunk_size` bytes is cut into `m = ceil(chunk_size / slice_size)`
//! slices, grouped into generations of (at most) `k` source slices. Each
//! generation of `k_g` source slices is expanded to `n_g = ceil(k_g / rho)`
//! coded slices: the sources themselves followed by `n_g - k_g` repair slices
//! whose coefficients come from a seeded generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gf256::{self, EchelonBasis, FieldError, FieldMatrix};

/// Per-slice framing overhead: generation index, slice index, seed, flags.
pub const HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("code rate {0} outside (0, 1]")]
    InvalidRate(f64),
    #[error("chunk, slice and generation sizes must be positive")]
    InvalidSize,
    #[error("generation with {k} source slices cannot have {coded} coded slices")]
    InvalidPlan { k: usize, coded: usize },
    #[error("received rank {0} is short of the generation size")]
    InsufficientRank(usize),
    #[error("malformed slice set: {0}")]
    Malformed(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Number of coded slices for `k` sources at rate `rho`.
pub fn coded_count(k: usize, rho: f64) -> usize {
    // The epsilon keeps exact quotients like 16 / 0.8 from rounding up.
    ((k as f64 / rho) - 1e-9).ceil().max(k as f64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Generation {
    pub source: usize,
    pub coded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationPlan {
    pub entries: Vec<Generation>,
    pub slice_size: usize,
    pub chunk_size: u64,
}

impl GenerationPlan {
    pub fn source_slices(&self) -> usize {
        self.entries.iter().map(|g| g.source).sum()
    }

    pub fn coded_slices(&self) -> usize {
        self.entries.iter().map(|g| g.coded).sum()
    }

    pub fn generation_count(&self) -> usize {
        self.entries.len()
    }
}

pub fn plan_generations(
    chunk_size: u64,
    slice_size: usize,
    k: usize,
    rho: f64,
) -> Result<GenerationPlan, CodecError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(CodecError::InvalidRate(rho));
    }
    if chunk_size == 0 || slice_size == 0 || k == 0 {
        return Err(CodecError::InvalidSize);
    }
    let m = chunk_size.div_ceil(slice_size as u64) as usize;
    let full = m / k;
    let mut entries = vec![
        Generation {
            source: k,
            coded: coded_count(k, rho),
        };
        full
    ];
    let rest = m - full * k;
    if rest > 0 {
        entries.push(Generation {
            source: rest,
            coded: coded_count(rest, rho),
        });
    }
    Ok(GenerationPlan {
        entries,
        slice_size,
        chunk_size,
    })
}

/// Per-generation seed derived from a chunk seed.
pub fn generation_seed(chunk_seed: u32, generation_index: usize) -> u32 {
    chunk_seed ^ (generation_index as u32).wrapping_mul(0x9E37_79B9)
}

/// Coefficients of repair slice `repair_index` in a generation of `k` sources.
///
/// Deterministic in `(seed, repair_index)`; all-zero draws are rejected.
pub fn repair_coefficients(seed: u32, repair_index: u32, k: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(((seed as u64) << 32) | repair_index as u64);
    let mut coeffs = vec![0u8; k];
    loop {
        rng.fill(coeffs.as_mut_slice());
        if coeffs.iter().any(|&c| c != 0) {
            return coeffs;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedSlice {
    pub generation_index: usize,
    pub coeffs: Vec<u8>,
    pub payload: Vec<u8>,
    pub is_systematic: bool,
}

/// Encodes a generation.
///
/// `source` is `n_s x k_g`: column `i` holds source slice `i`. Returns the
/// `k_g` systematic slices followed by `n_g - k_g` repair slices.
pub fn encode_generation(
    source: &FieldMatrix,
    n_g: usize,
    generation_index: usize,
    seed: u32,
) -> Result<Vec<CodedSlice>, CodecError> {
    let k = source.cols();
    if n_g < k {
        return Err(CodecError::InvalidPlan {
            k,
            coded: n_g,
        });
    }
    // One row per source slice makes the repair combinations contiguous.
    let slices = source.transpose();
    let mut out = Vec::with_capacity(n_g);
    for i in 0..k {
        let mut coeffs = vec![0u8; k];
        coeffs[i] = 1;
        out.push(CodedSlice {
            generation_index,
            coeffs,
            payload: slices.row(i).to_vec(),
            is_systematic: true,
        });
    }
    for j in 0..(n_g - k) {
        out.push(repair_slice(&slices, generation_index, seed, j as u32));
    }
    Ok(out)
}

fn repair_slice(slices: &FieldMatrix, generation_index: usize, seed: u32, index: u32) -> CodedSlice {
    let coeffs = repair_coefficients(seed, index, slices.rows());
    let mut payload = vec![0u8; slices.cols()];
    for (i, &c) in coeffs.iter().enumerate() {
        gf256::mul_add_slice(&mut payload, slices.row(i), c);
    }
    CodedSlice {
        generation_index,
        coeffs,
        payload,
        is_systematic: false,
    }
}

/// Additional repair slice beyond the planned `n_g`, as sent on retransmission.
pub fn extra_repair_slice(
    source: &FieldMatrix,
    generation_index: usize,
    seed: u32,
    repair_index: u32,
) -> CodedSlice {
    repair_slice(&source.transpose(), generation_index, seed, repair_index)
}

/// Recovers the `n_s x k_g` source matrix from received slices.
pub fn decode_generation(slices: &[CodedSlice], k_g: usize) -> Result<FieldMatrix, CodecError> {
    let Some(first) = slices.first() else {
        return Err(CodecError::InsufficientRank(0));
    };
    let n_s = first.payload.len();
    if slices.iter().any(|s| {
        s.coeffs.len() != k_g
            || s.payload.len() != n_s
            || s.generation_index != first.generation_index
    }) {
        return Err(CodecError::Malformed(
            "slices disagree on generation, coefficient length or payload size".into(),
        ));
    }

    let mut systematic: Vec<Option<&CodedSlice>> = vec![None; k_g];
    for s in slices.iter().filter(|s| s.is_systematic) {
        if let Some(i) = s.coeffs.iter().position(|&c| c == 1) {
            systematic[i] = Some(s);
        }
    }
    if systematic.iter().all(Option::is_some) {
        let cols: Vec<&[u8]> = systematic.iter().map(|s| s.unwrap().payload.as_slice()).collect();
        return Ok(FieldMatrix::from_columns(&cols)?);
    }

    let mut basis = EchelonBasis::new(k_g);
    let mut chosen = Vec::with_capacity(k_g);
    for s in slices {
        if basis.insert(&s.coeffs) {
            chosen.push(s);
            if basis.is_full() {
                break;
            }
        }
    }
    if !basis.is_full() {
        return Err(CodecError::InsufficientRank(basis.rank()));
    }
    let coeff_cols: Vec<&[u8]> = chosen.iter().map(|s| s.coeffs.as_slice()).collect();
    let payload_cols: Vec<&[u8]> = chosen.iter().map(|s| s.payload.as_slice()).collect();
    let a = FieldMatrix::from_columns(&coeff_cols)?;
    let y = FieldMatrix::from_columns(&payload_cols)?;
    Ok(gf256::solve(&a, &y)?)
}

/// Splits chunk bytes into per-generation source matrices, zero-padding the
/// last slice.
pub fn source_matrices(data: &[u8], plan: &GenerationPlan) -> Vec<FieldMatrix> {
    let n_s = plan.slice_size;
    let mut offset = 0;
    plan.entries
        .iter()
        .map(|g| {
            let cols: Vec<Vec<u8>> = (0..g.source)
                .map(|_| {
                    let mut col = vec![0u8; n_s];
                    let end = (offset + n_s).min(data.len());
                    if offset < end {
                        col[..end - offset].copy_from_slice(&data[offset..end]);
                    }
                    offset += n_s;
                    col
                })
                .collect();
            FieldMatrix::from_columns(&cols).expect("uniform columns")
        })
        .collect()
}

/// Encodes a whole chunk according to `plan`.
pub fn encode_chunk(
    data: &[u8],
    plan: &GenerationPlan,
    chunk_seed: u32,
) -> Result<Vec<Vec<CodedSlice>>, CodecError> {
    if data.len() as u64 != plan.chunk_size {
        return Err(CodecError::Malformed("data length differs from plan".into()));
    }
    source_matrices(data, plan)
        .iter()
        .zip(&plan.entries)
        .enumerate()
        .map(|(g, (src, e))| encode_generation(src, e.coded, g, generation_seed(chunk_seed, g)))
        .collect()
}

/// Decodes a whole chunk and strips the padding of the last slice.
pub fn decode_chunk(
    received: &[Vec<CodedSlice>],
    plan: &GenerationPlan,
) -> Result<Vec<u8>, CodecError> {
    if received.len() != plan.entries.len() {
        return Err(CodecError::Malformed("generation count differs from plan".into()));
    }
    let mut out = Vec::with_capacity(plan.source_slices() * plan.slice_size);
    for (slices, g) in received.iter().zip(&plan.entries) {
        let x = decode_generation(slices, g.source)?;
        for c in 0..x.cols() {
            out.extend(x.column(c));
        }
    }
    out.truncate(plan.chunk_size as usize);
    Ok(out)
}

/// Which coded slices of each generation arrived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossPattern {
    pub received: Vec<Vec<bool>>,
}

impl LossPattern {
    /// Independent Bernoulli(p) erasures over every coded slice of `plan`.
    pub fn draw<R: Rng>(plan: &GenerationPlan, p: f64, rng: &mut R) -> Self {
        let received = plan
            .entries
            .iter()
            .map(|g| (0..g.coded).map(|_| !rng.random_bool(p)).collect())
            .collect();
        Self { received }
    }

    pub fn matches(&self, plan: &GenerationPlan) -> bool {
        self.received.len() == plan.entries.len()
            && self
                .received
                .iter()
                .zip(&plan.entries)
                .all(|(r, g)| r.len() == g.coded)
    }
}

/// Receiver-side rank tracker for one generation, working on coefficients only.
///
/// Received systematic slices are unit vectors, so the rank equals the number
/// of them plus the rank of the repair coefficients restricted to the missing
/// source positions. This is the exact rank of the full received matrix.
#[derive(Debug, Clone)]
pub struct RankTracker {
    k: usize,
    seed: u32,
    missing: Vec<usize>,
    basis: EchelonBasis,
}

impl RankTracker {
    /// Starts from the systematic part of the first transmission.
    pub fn new(k: usize, seed: u32, systematic_received: &[bool]) -> Self {
        debug_assert_eq!(systematic_received.len(), k);
        let missing: Vec<usize> = (0..k).filter(|&i| !systematic_received[i]).collect();
        let basis = EchelonBasis::new(missing.len());
        Self {
            k,
            seed,
            missing,
            basis,
        }
    }

    /// Offers repair slice `repair_index`; returns whether it raised the rank.
    pub fn receive_repair(&mut self, repair_index: u32) -> bool {
        if self.basis.is_full() {
            return false;
        }
        let coeffs = repair_coefficients(self.seed, repair_index, self.k);
        let restricted: Vec<u8> = self.missing.iter().map(|&i| coeffs[i]).collect();
        self.basis.insert(&restricted)
    }

    pub fn rank(&self) -> usize {
        self.k - self.missing.len() + self.basis.rank()
    }

    pub fn deficit(&self) -> usize {
        self.k - self.rank()
    }
}

/// Rank of the received coefficient matrix of one generation.
pub fn received_rank(k: usize, seed: u32, received: &[bool]) -> usize {
    let mut t = RankTracker::new(k, seed, &received[..k]);
    for (j, _) in received[k..].iter().enumerate().filter(|(_, &r)| r) {
        t.receive_repair(j as u32);
    }
    t.rank()
}

/// Monte Carlo probability that a `(k, n)` generation is undecodable after
/// i.i.d. slice erasures with probability `p`.
pub fn decode_failure_prob(k: usize, n: usize, p: f64, trials: usize, seed: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let p = p.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n];
    let mut failures = 0usize;
    for _ in 0..trials {
        let code_seed: u32 = rng.random();
        mask.iter_mut().for_each(|m| *m = !rng.random_bool(p));
        if n < k || received_rank(k, code_seed, &mask) < k {
            failures += 1;
        }
    }
    failures as f64 / trials as f64
}
