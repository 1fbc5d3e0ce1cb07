use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};

/// Largest number of non-zero pairs for which the exact null distribution
/// is used.
pub const EXACT_MAX_PAIRS: usize = 25;
/// Smallest number of non-zero pairs accepted.
pub const MIN_PAIRS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    /// `W = min(W+, W-)`.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n_pairs: usize,
    pub method: TestMethod,
}

/// Ranks of `values` (1-based), ties receiving the average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided exact p-value of `w = min(W+, W-)` under the null that every
/// sign pattern of `ranks` is equally likely: `min(1, 2 P(W+ <= w))`.
/// Ranks must be multiples of 1/2.
pub fn exact_two_sided_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[s]: number of sign patterns whose doubled W+ equals s.
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let below: f64 = counts[..=limit.min(total)].iter().sum();
    let patterns = 2f64.powi(ranks.len() as i32);
    (2.0 * below / patterns).min(1.0)
}

/// Paired two-sided Wilcoxon signed-rank test of `xs` against `ys`.
///
/// Zero differences are dropped and tied absolute differences share their
/// average rank. The exact distribution is used for at most
/// [`EXACT_MAX_PAIRS`] pairs; beyond that, the normal approximation with tie
/// and continuity corrections.
pub fn wilcoxon_signed_rank(xs: &[f64], ys: &[f64]) -> Result<ComparisonResult> {
    wilcoxon_with_method(xs, ys, None)
}

/// As [`wilcoxon_signed_rank`], optionally forcing the method.
pub fn wilcoxon_with_method(xs: &[f64], ys: &[f64], method: Option<TestMethod>) -> Result<ComparisonResult> {
    if xs.len() != ys.len() {
        return Err(HarnessError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(HarnessError::NonFiniteSample);
    }
    let diffs: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).filter(|&d| d != 0.0).collect();
    if diffs.is_empty() {
        return Err(HarnessError::AllZeroDifferences);
    }
    let n = diffs.len();
    if n < MIN_PAIRS {
        return Err(HarnessError::TooFewPairs(n));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);

    let method = method.unwrap_or(if n <= EXACT_MAX_PAIRS {
        TestMethod::Exact
    } else {
        TestMethod::NormalApprox
    });
    let p_value = match method {
        TestMethod::Exact => exact_two_sided_p(&ranks, w),
        TestMethod::NormalApprox => {
            let nf = n as f64;
            let mean = nf * (nf + 1.0) / 4.0;
            let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
            let mut sorted = abs.clone();
            sorted.sort_by(f64::total_cmp);
            for group in sorted.chunk_by(|a, b| a == b) {
                let t = group.len() as f64;
                var -= (t * t * t - t) / 48.0;
            }
            if var <= 0.0 {
                1.0
            } else {
                let z = ((mean - w) - 0.5).max(0.0) / var.sqrt();
                // Two-sided: 2 (1 - Φ(z)) = erfc(z / √2).
                libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
            }
        }
    };
    Ok(ComparisonResult {
        statistic: w,
        p_value,
        n_pairs: n,
        method,
    })
}
