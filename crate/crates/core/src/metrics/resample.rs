use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

use super::report::ScoredSet;

/// Largest number of pairs for which `PermutationMethod::Auto` enumerates
/// every swap pattern.
pub const EXACT_PERMUTATION_LIMIT: usize = 20;
pub const DEFAULT_PERMUTATION_DRAWS: usize = 10_000;
const MAX_REDRAWS: usize = 100;

/// A fresh generator for the `index`-th resample, independent of the order
/// in which resamples are evaluated.
fn stream_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub n_resamples: usize,
}

/// Percentile bootstrap interval for a statistic of `n` items. `metric`
/// receives the resampled item indices and returns `None` when the
/// statistic is undefined on that resample, in which case it is redrawn.
pub fn bootstrap_ci(
    n: usize,
    metric: impl Fn(&[usize]) -> Option<f64>,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<ConfidenceInterval> {
    if n_resamples < 100 {
        return Err(Error::config(format!("n_resamples must be at least 100, got {n_resamples}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("confidence level {level} outside (0, 1)")));
    }
    if n == 0 {
        return Err(Error::contract("cannot bootstrap an empty set"));
    }
    let mut values = Vec::with_capacity(n_resamples);
    let mut idx = vec![0usize; n];
    for r in 0..n_resamples {
        let mut rng = stream_rng(seed, r);
        let mut value = None;
        for _ in 0..MAX_REDRAWS {
            idx.iter_mut().for_each(|i| *i = rng.gen_range(0..n));
            value = metric(&idx);
            if value.is_some() {
                break;
            }
        }
        let v = value.ok_or_else(|| {
            Error::contract(format!("metric undefined on {MAX_REDRAWS} consecutive draws of resample {r}"))
        })?;
        values.push(v);
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(ConfidenceInterval { lo: quantile(&values, tail), hi: quantile(&values, 1.0 - tail), level, n_resamples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PermutationMethod {
    /// Exact up to `EXACT_PERMUTATION_LIMIT` pairs, Monte-Carlo beyond.
    Auto,
    Exact,
    MonteCarlo { draws: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PermutationResult {
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    /// Number of randomizations evaluated.
    pub draws: u64,
}

fn at_least(stat: f64, observed: f64) -> bool {
    // absorb summation-order rounding so that ties with the observed value count
    stat.abs() >= observed.abs() - 1e-12 * observed.abs().max(1.0)
}

/// Two-sided paired permutation test on the mean difference `a - b`, where
/// each randomization independently swaps the members of every pair.
pub fn permutation_test(a: &[f64], b: &[f64], method: PermutationMethod, seed: u64) -> Result<PermutationResult> {
    if a.len() != b.len() {
        return Err(Error::contract(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::contract("permutation test needs at least one pair"));
    }
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = diffs.iter().sum::<f64>() / n as f64;
    let exact = match method {
        PermutationMethod::Exact => true,
        PermutationMethod::Auto => n <= EXACT_PERMUTATION_LIMIT,
        PermutationMethod::MonteCarlo { .. } => false,
    };
    if exact {
        if n > 30 {
            return Err(Error::config(format!("exact enumeration over {n} pairs is infeasible")));
        }
        let total = 1u64 << n;
        let mut count = 0u64;
        for mask in 0..total {
            let s: f64 = diffs.iter().enumerate().map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d }).sum();
            if at_least(s / n as f64, observed) {
                count += 1;
            }
        }
        return Ok(PermutationResult { statistic: observed, p_value: count as f64 / total as f64, exact: true, draws: total });
    }
    let draws = match method {
        PermutationMethod::MonteCarlo { draws } => draws,
        _ => DEFAULT_PERMUTATION_DRAWS,
    };
    if draws == 0 {
        return Err(Error::config("Monte-Carlo permutation test needs at least one draw"));
    }
    let mut count = 0u64;
    for d in 0..draws {
        let mut rng = stream_rng(seed, d);
        let s: f64 = diffs.iter().map(|x| if rng.gen::<bool>() { -x } else { *x }).sum();
        if at_least(s / n as f64, observed) {
            count += 1;
        }
    }
    Ok(PermutationResult {
        statistic: observed,
        p_value: (count + 1) as f64 / (draws + 1) as f64,
        exact: false,
        draws: draws as u64,
    })
}

/// Permutation test for a difference in a set-level metric (such as mAP)
/// between two systems scored on the same notes, pooled over several
/// paired runs. Each randomization swaps the two systems' score rows for
/// every note independently; the statistic is the mean over runs of
/// `metric(a) - metric(b)`.
pub fn metric_permutation_test(
    runs: &[(ScoredSet, ScoredSet)],
    metric: impl Fn(&ScoredSet) -> Option<f64>,
    draws: usize,
    seed: u64,
) -> Result<PermutationResult> {
    if runs.is_empty() || draws == 0 {
        return Err(Error::config("metric permutation test needs at least one run and one draw"));
    }
    for (a, b) in runs {
        if a.labels != b.labels {
            return Err(Error::contract("paired score sets must cover the same notes and labels"));
        }
    }
    let eval = |a: &ScoredSet, b: &ScoredSet| -> Result<f64> {
        match (metric(a), metric(b)) {
            (Some(x), Some(y)) => Ok(x - y),
            _ => Err(Error::contract("metric undefined on a paired score set")),
        }
    };
    let mut observed = 0.0;
    for (a, b) in runs {
        observed += eval(a, b)?;
    }
    observed /= runs.len() as f64;

    let mut count = 0u64;
    let mut sa = runs[0].0.clone();
    let mut sb = runs[0].1.clone();
    for d in 0..draws {
        let mut rng = stream_rng(seed, d);
        let mut stat = 0.0;
        for (a, b) in runs {
            sa.clone_from(a);
            sb.clone_from(b);
            for i in 0..a.len() {
                if rng.gen::<bool>() {
                    std::mem::swap(&mut sa.scores[i], &mut sb.scores[i]);
                }
            }
            stat += eval(&sa, &sb)?;
        }
        if at_least(stat / runs.len() as f64, observed) {
            count += 1;
        }
    }
    Ok(PermutationResult {
        statistic: observed,
        p_value: (count + 1) as f64 / (draws + 1) as f64,
        exact: false,
        draws: draws as u64,
    })
}
