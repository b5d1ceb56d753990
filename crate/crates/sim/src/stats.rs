//! Small statistics toolbox: quantiles, sample dispersion, and a
//! one-sided Mann-Whitney U test for comparing travel-time samples.

use statrs::distribution::{ContinuousCDF, Normal};

/// Linear-interpolation quantile (the "type 7" estimator used by most
/// statistics environments). `sorted` must be ascending and non-empty;
/// `q` in `[0, 1]`.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&q), "quantile level {q} outside [0, 1]");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Convenience: sort a copy and take the median.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_type7(&sorted, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "mean of an empty sample");
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two points.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Result of a one-sided Mann-Whitney U test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankTest {
    /// The U statistic of the first sample.
    pub u: f64,
    /// Normal-approximation z score (tie-corrected, continuity-corrected).
    pub z: f64,
    /// One-sided p-value for the alternative "xs is stochastically less
    /// than ys".
    pub p: f64,
}

/// One-sided Mann-Whitney U test with the alternative that `xs` tends to
/// take smaller values than `ys`.
///
/// Uses average ranks for ties, the tie-corrected normal approximation
/// for the null distribution, and a continuity correction of 1/2 — the
/// same recipe as the standard `method="asymptotic"` implementations.
pub fn mann_whitney_less(xs: &[f64], ys: &[f64]) -> RankTest {
    let n1 = xs.len();
    let n2 = ys.len();
    assert!(n1 > 0 && n2 > 0, "both samples must be non-empty");
    let n = n1 + n2;

    // Rank the pooled sample with average ranks for ties.
    let mut pooled: Vec<(f64, bool)> = xs
        .iter()
        .map(|&v| (v, true))
        .chain(ys.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| f64::total_cmp(&a.0, &b.0));

    let mut ranks = vec![0.0f64; n];
    let mut tie_term = 0.0f64; // sum of t^3 - t over tie groups
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i) as f64;
        // Positions i..j (0-based) share the average of ranks i+1 ..= j.
        let avg_rank = ((i + 1) + j) as f64 / 2.0;
        for item in &mut ranks[i..j] {
            *item = avg_rank;
        }
        tie_term += t * t * t - t;
        i = j;
    }

    let r1: f64 =
        pooled.iter().zip(&ranks).filter(|((_, is_x), _)| *is_x).map(|(_, r)| *r).sum();
    let u1 = r1 - (n1 * (n1 + 1)) as f64 / 2.0;

    let mu = (n1 * n2) as f64 / 2.0;
    let nf = n as f64;
    let variance =
        (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if variance <= 0.0 {
        // All observations identical: no evidence either way.
        return RankTest { u: u1, z: 0.0, p: 0.5 };
    }
    let z = (u1 - mu + 0.5) / variance.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    RankTest { u: u1, z, p: normal.cdf(z) }
}
