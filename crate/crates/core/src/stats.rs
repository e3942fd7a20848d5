//! Paired statistical toolkit: exact McNemar, bootstrap intervals,
//! task-blocked sign permutation, agreement coefficients, rank correlation.
//!
//! All randomized procedures take an explicit seed so parallel callers never
//! share generator state and results replay exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::hash::Hash;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("input length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("constant input after ranking; correlation undefined")]
    ConstantInput,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: String,
    /// Enumeration size for exact tests, replicate count for Monte Carlo.
    pub samples: u64,
}

/// One (task, seed) outcome pair for two compared conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomePair {
    pub task_id: String,
    pub seed: u64,
    pub outcome_a: bool,
    pub outcome_b: bool,
}

/// Per task-seed aligned/less-restricted outcome pairs with discordant counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedComparison {
    pub pairs: Vec<OutcomePair>,
    pub concordant: u64,
    /// a-only successes.
    pub b: u64,
    /// b-only successes.
    pub c: u64,
}

impl PairedComparison {
    pub fn from_pairs(pairs: Vec<OutcomePair>) -> Self {
        let mut concordant = 0;
        let mut b = 0;
        let mut c = 0;
        for p in &pairs {
            match (p.outcome_a, p.outcome_b) {
                (true, false) => b += 1,
                (false, true) => c += 1,
                _ => concordant += 1,
            }
        }
        PairedComparison {
            pairs,
            concordant,
            b,
            c,
        }
    }

    pub fn mcnemar(&self) -> TestResult {
        mcnemar_exact(self.b, self.c)
    }
}

fn binom_tail_le(n: u64, k: u64) -> f64 {
    // P(X <= k) for X ~ Binomial(n, 1/2), built from the iterated pmf ratio.
    let mut pmf = 0.5f64.powi(n as i32);
    let mut acc = 0.0;
    for i in 0..=k {
        acc += pmf;
        pmf *= (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Two-sided exact McNemar test on discordant counts: p = min(1, 2·P(X ≤ min(b,c)))
/// over n = b + c discordant pairs at rate one-half; p = 1 when n = 0.
pub fn mcnemar_exact(b: u64, c: u64) -> TestResult {
    let n = b + c;
    let p = if n == 0 {
        1.0
    } else {
        (2.0 * binom_tail_le(n, b.min(c))).min(1.0)
    };
    TestResult {
        statistic: b as f64 - c as f64,
        p_value: p,
        method: "mcnemar_exact".to_string(),
        samples: 1u64 << n.min(62),
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Percentile bootstrap interval over resampled means, seeded and reproducible.
pub fn bootstrap_ci(
    diffs: &[f64],
    replicates: u64,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    bootstrap_stat_ci(diffs, replicates, level, seed, mean)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn bootstrap_stat_ci(
    values: &[f64],
    replicates: u64,
    level: f64,
    seed: u64,
    stat: fn(&[f64]) -> f64,
) -> Result<(f64, f64), StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(replicates as usize);
    let mut resample = vec![0.0; values.len()];
    for _ in 0..replicates {
        for slot in resample.iter_mut() {
            *slot = values[rng.gen_range(0..values.len())];
        }
        resample.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        stats.push(stat(&resample));
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&stats, alpha), quantile(&stats, 1.0 - alpha)))
}

/// Sample median plus a percentile interval of bootstrap medians.
pub fn median_with_bootstrap(
    values: &[f64],
    replicates: u64,
    level: f64,
    seed: u64,
) -> Result<(f64, f64, f64), StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let med = median_of_sorted(&sorted);
    let (lo, hi) = bootstrap_stat_ci(values, replicates, level, seed, median_of_sorted)?;
    Ok((med, lo, hi))
}

pub const DEFAULT_PERMUTATION_REPLICATES: u64 = 100_000;
const EXACT_ENUMERATION_LIMIT: usize = 20;
const TIE_EPS: f64 = 1e-12;

/// Task-blocked sign-permutation test with a fixed default generator seed.
pub fn sign_permutation_blocked(per_task_diffs: &[f64]) -> Result<TestResult, StatsError> {
    sign_permutation_blocked_with(per_task_diffs, DEFAULT_PERMUTATION_REPLICATES, 0)
}

/// Statistic is the mean of per-task diffs; the null flips signs independently
/// per task. Exact enumeration over 2^k when the number of nonzero diffs
/// k ≤ 20, else seeded Monte Carlo. Zero diffs carry no sign. Two-sided p is
/// the share of flipped means with |mean| ≥ |observed|.
pub fn sign_permutation_blocked_with(
    per_task_diffs: &[f64],
    replicates: u64,
    seed: u64,
) -> Result<TestResult, StatsError> {
    if per_task_diffs.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = per_task_diffs.len() as f64;
    let observed = per_task_diffs.iter().sum::<f64>() / n;
    let nonzero: Vec<f64> = per_task_diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let k = nonzero.len();
    if k == 0 {
        return Ok(TestResult {
            statistic: observed,
            p_value: 1.0,
            method: "sign_permutation_exact".to_string(),
            samples: 1,
        });
    }
    let threshold = observed.abs() - TIE_EPS;
    if k <= EXACT_ENUMERATION_LIMIT {
        let total = 1u64 << k;
        let mut hits = 0u64;
        for mask in 0..total {
            let mut sum = 0.0;
            for (i, d) in nonzero.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    sum -= d;
                } else {
                    sum += d;
                }
            }
            if (sum / n).abs() >= threshold {
                hits += 1;
            }
        }
        Ok(TestResult {
            statistic: observed,
            p_value: hits as f64 / total as f64,
            method: "sign_permutation_exact".to_string(),
            samples: total,
        })
    } else {
        let replicates = replicates.max(DEFAULT_PERMUTATION_REPLICATES);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0u64;
        for _ in 0..replicates {
            let sum: f64 = nonzero
                .iter()
                .map(|d| if rng.gen::<bool>() { *d } else { -*d })
                .sum();
            if (sum / n).abs() >= threshold {
                hits += 1;
            }
        }
        Ok(TestResult {
            statistic: observed,
            p_value: hits as f64 / replicates as f64,
            method: "sign_permutation_monte_carlo".to_string(),
            samples: replicates,
        })
    }
}

/// Cohen's kappa over two equal-length categorical label lists.
///
/// κ = (p_o − p_e)/(1 − p_e); when p_e = 1 (a single shared category) the
/// degenerate convention κ = 1 applies, since p_o is then also 1.
pub fn cohen_kappa<T: Eq + Hash>(labels_a: &[T], labels_b: &[T]) -> Result<f64, StatsError> {
    if labels_a.len() != labels_b.len() {
        return Err(StatsError::LengthMismatch(labels_a.len(), labels_b.len()));
    }
    if labels_a.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = labels_a.len() as f64;
    let mut marg_a: HashMap<&T, f64> = HashMap::new();
    let mut marg_b: HashMap<&T, f64> = HashMap::new();
    let mut agree = 0.0;
    for (a, b) in labels_a.iter().zip(labels_b) {
        *marg_a.entry(a).or_insert(0.0) += 1.0;
        *marg_b.entry(b).or_insert(0.0) += 1.0;
        if a == b {
            agree += 1.0;
        }
    }
    let p_o = agree / n;
    let p_e: f64 = marg_a
        .iter()
        .map(|(cat, ca)| ca / n * marg_b.get(cat).copied().unwrap_or(0.0) / n)
        .sum();
    if (1.0 - p_e).abs() < TIE_EPS {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Raw observed agreement (share of identical labels).
pub fn observed_agreement<T: Eq>(labels_a: &[T], labels_b: &[T]) -> Result<f64, StatsError> {
    if labels_a.len() != labels_b.len() {
        return Err(StatsError::LengthMismatch(labels_a.len(), labels_b.len()));
    }
    if labels_a.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let agree = labels_a
        .iter()
        .zip(labels_b)
        .filter(|(a, b)| a == b)
        .count();
    Ok(agree as f64 / labels_a.len() as f64)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &slot in &idx[i..=j] {
            ranks[slot] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(StatsError::EmptyInput);
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
