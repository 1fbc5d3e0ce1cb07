//! Scaled adjacency matrices.
//!
//! A *word* over `{A, T}` (where `T` stands for `Aᵀ`) describes a sequence of
//! hops: `A` follows an edge forwards, `T` follows one backwards. The scaled
//! adjacency matrix of a word is the left-to-right boolean product of the
//! corresponding factors, so entry `(u, v)` is set iff some walk from `u` to
//! `v` follows the word's hop directions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::{
    self, apply_self_loops, pattern_difference, pattern_intersection, pattern_union, remove_self_loops,
    transpose, SelfLoopMode, Semiring, SparseError, SparseMatrix,
};

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("a scale word needs at least one letter")]
    EmptyWord,
    #[error("invalid letter '{0}' in scale word (expected A or T)")]
    InvalidLetter(char),
    #[error("proximity order must be at least 2, got {0}")]
    OrderTooSmall(usize),
    #[error("invalid weight strategy: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

pub type Result<T> = std::result::Result<T, ScaleError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hop {
    /// Follow an edge forwards (`A`).
    #[serde(rename = "A")]
    Forward,
    /// Follow an edge backwards (`Aᵀ`).
    #[serde(rename = "T")]
    Backward,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScaleSpec {
    word: Vec<Hop>,
    pub selfloop_mode: SelfLoopMode,
}

impl ScaleSpec {
    pub fn new(word: Vec<Hop>, selfloop_mode: SelfLoopMode) -> Result<Self> {
        if word.is_empty() {
            return Err(ScaleError::EmptyWord);
        }
        Ok(Self { word, selfloop_mode })
    }

    /// Parses a word such as `"AT"`; `Aᵀ` may also be written `T`.
    pub fn parse(word: &str, selfloop_mode: SelfLoopMode) -> Result<Self> {
        let word = word
            .replace("Aᵀ", "T")
            .chars()
            .map(|ch| match ch {
                'A' | 'a' => Ok(Hop::Forward),
                'T' | 't' => Ok(Hop::Backward),
                other => Err(ScaleError::InvalidLetter(other)),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(word, selfloop_mode)
    }

    pub fn word(&self) -> &[Hop] {
        &self.word
    }

    /// Number of hops.
    pub fn scale(&self) -> usize {
        self.word.len()
    }

    /// Every word of exactly `len` letters, in lexicographic order with `A < T`.
    pub fn all_words(len: usize) -> Vec<Vec<Hop>> {
        (0..1usize << len)
            .map(|bits| {
                (0..len)
                    .map(|i| {
                        if bits >> (len - 1 - i) & 1 == 1 {
                            Hop::Backward
                        } else {
                            Hop::Forward
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

impl fmt::Display for ScaleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for hop in &self.word {
            f.write_str(match hop {
                Hop::Forward => "A",
                Hop::Backward => "T",
            })?;
        }
        Ok(())
    }
}

impl FromStr for ScaleSpec {
    type Err = ScaleError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, SelfLoopMode::Keep)
    }
}

/// A scaled adjacency pattern with optional edge weights on the same support.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledGraph {
    pub spec: ScaleSpec,
    pub matrix: SparseMatrix,
    pub weighted: Option<SparseMatrix>,
}

/// Left-to-right pattern product of `A`/`Aᵀ` per the word, followed by the
/// spec's self-loop mode.
pub fn build_scaled_adjacency(a: &SparseMatrix, spec: &ScaleSpec) -> Result<ScaledGraph> {
    if !a.is_square() {
        return Err(SparseError::NotSquare(a.n_rows(), a.n_cols()).into());
    }
    let forward = a.pattern();
    let backward = transpose(&forward);
    let factor = |hop: Hop| match hop {
        Hop::Forward => &forward,
        Hop::Backward => &backward,
    };
    let mut product = factor(spec.word[0]).clone();
    for &hop in &spec.word[1..] {
        product = sparse::spgemm(&product, factor(hop), Semiring::Pattern)?;
    }
    let matrix = apply_self_loops(&product, spec.selfloop_mode)?;
    Ok(ScaledGraph {
        spec: spec.clone(),
        matrix,
        weighted: None,
    })
}

/// How the meeting and diffusion matrices of a proximity order are fused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    Intersect,
    Union,
}

fn proximity_side(a: &SparseMatrix, k: usize, prune: bool, meeting: bool) -> Result<SparseMatrix> {
    if k < 2 {
        return Err(ScaleError::OrderTooSmall(k));
    }
    if !a.is_square() {
        return Err(SparseError::NotSquare(a.n_rows(), a.n_cols()).into());
    }
    let forward = a.pattern();
    let backward = transpose(&forward);
    // M(k) = A M(k-1) Aᵀ and D(k) = Aᵀ D(k-1) A, with M(1) = D(1) = I.
    let (left, right) = if meeting {
        (&forward, &backward)
    } else {
        (&backward, &forward)
    };
    let prune_if = |m: SparseMatrix| -> Result<SparseMatrix> {
        Ok(if prune { remove_self_loops(&m)? } else { m })
    };
    let mut current = prune_if(sparse::spgemm(left, right, Semiring::Pattern)?)?;
    for _ in 2..k {
        let inner = sparse::spgemm(left, &current, Semiring::Pattern)?;
        current = prune_if(sparse::spgemm(&inner, right, Semiring::Pattern)?)?;
    }
    Ok(current)
}

/// `M(k) = A^{k-1} (Aᵀ)^{k-1}` as a pattern: nodes sharing a `(k-1)`-hop
/// meeting node. With `prune`, generated self-loops are removed from every
/// order before it seeds the next one, and from the result.
pub fn meeting_matrix(a: &SparseMatrix, k: usize, prune: bool) -> Result<SparseMatrix> {
    proximity_side(a, k, prune, true)
}

/// `D(k) = (Aᵀ)^{k-1} A^{k-1}` as a pattern: nodes sharing a `(k-1)`-hop
/// diffusion node. Pruning as in [`meeting_matrix`].
pub fn diffusion_matrix(a: &SparseMatrix, k: usize, prune: bool) -> Result<SparseMatrix> {
    proximity_side(a, k, prune, false)
}

/// k-th order proximity: `combine(M(k), D(k))`.
pub fn proximity_matrix(
    a: &SparseMatrix,
    k: usize,
    combine: Combine,
    prune_generated_selfloops: bool,
) -> Result<SparseMatrix> {
    let m = meeting_matrix(a, k, prune_generated_selfloops)?;
    let d = diffusion_matrix(a, k, prune_generated_selfloops)?;
    Ok(match combine {
        Combine::Intersect => pattern_intersection(&m, &d)?,
        Combine::Union => pattern_union(&m, &d)?,
    })
}

/// Support of `scaled` minus the union of the supports of `bases`.
pub fn remove_shared_edges(scaled: &SparseMatrix, bases: &[&SparseMatrix]) -> Result<SparseMatrix> {
    let mut out = scaled.pattern();
    for base in bases {
        out = pattern_difference(&out, base)?;
    }
    Ok(out)
}

/// Edge-weight assignment for a fixed support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightStrategy {
    /// Every weight is exactly 1.
    Ones,
    /// Independent draws from `U[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// Each weight picks a peak with probability `weights[i]` and adds
    /// `N(0, spread²)` noise; negative draws are reflected at 0.
    Mixture {
        peaks: Vec<f64>,
        weights: Vec<f64>,
        spread: f64,
    },
}

impl WeightStrategy {
    /// `U[0.0001, 10000)`, the random-weight range used for the inception
    /// ablation.
    pub fn default_uniform() -> Self {
        WeightStrategy::Uniform { lo: 1e-4, hi: 1e4 }
    }
}

/// Same support as `s`, values drawn per `strategy`; deterministic in `seed`.
pub fn assign_weights(s: &SparseMatrix, strategy: &WeightStrategy, seed: u64) -> Result<SparseMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match strategy {
        WeightStrategy::Ones => Ok(s.pattern()),
        &WeightStrategy::Uniform { lo, hi } => {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(ScaleError::InvalidWeights(format!("uniform range [{lo}, {hi})")));
            }
            Ok(s.map_values(|_, _, _| rng.random_range(lo..hi)))
        }
        WeightStrategy::Mixture {
            peaks,
            weights,
            spread,
        } => {
            let total: f64 = weights.iter().sum();
            if peaks.is_empty() || peaks.len() != weights.len() {
                return Err(ScaleError::InvalidWeights(
                    "mixture needs one weight per peak".into(),
                ));
            }
            if (total - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
                return Err(ScaleError::InvalidWeights(format!(
                    "mixture weights must be non-negative and sum to 1, got {total}"
                )));
            }
            if peaks.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(ScaleError::InvalidWeights("peaks must be finite and >= 0".into()));
            }
            let pick = WeightedIndex::new(weights)
                .map_err(|e| ScaleError::InvalidWeights(e.to_string()))?;
            let noise =
                Normal::new(0.0, *spread).map_err(|e| ScaleError::InvalidWeights(e.to_string()))?;
            Ok(s.map_values(|_, _, _| (peaks[pick.sample(&mut rng)] + noise.sample(&mut rng)).abs()))
        }
    }
}

/// The six model-facing matrices: `A`, `Aᵀ`, `AAᵀ`, `AᵀA`, `AA`, `AᵀAᵀ`.
///
/// `first` is applied to `A` before any product (so `Add` yields `Â = A + I`
/// and products of `Â`); `higher` is then applied to each second-scale
/// product, e.g. `Remove` drops the generated self-loops of `AAᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSet {
    pub a: SparseMatrix,
    pub at: SparseMatrix,
    pub aat: SparseMatrix,
    pub ata: SparseMatrix,
    pub aa: SparseMatrix,
    pub atat: SparseMatrix,
}

impl ScaleSet {
    pub fn precompute(adjacency: &SparseMatrix, first: SelfLoopMode, higher: SelfLoopMode) -> Result<Self> {
        let a = apply_self_loops(&adjacency.pattern(), first)?;
        let at = transpose(&a);
        let product = |x: &SparseMatrix, y: &SparseMatrix| -> Result<SparseMatrix> {
            Ok(apply_self_loops(&sparse::spgemm(x, y, Semiring::Pattern)?, higher)?)
        };
        Ok(Self {
            aat: product(&a, &at)?,
            ata: product(&at, &a)?,
            aa: product(&a, &a)?,
            atat: product(&at, &at)?,
            a,
            at,
        })
    }

    /// The `(M, N)` pairs governed by α, β and γ respectively.
    pub fn pairs(&self) -> [(&SparseMatrix, &SparseMatrix); 3] {
        [(&self.a, &self.at), (&self.aat, &self.ata), (&self.aa, &self.atat)]
    }
}
