//! Summary statistics used by generators, reports and checks.

use alloc::vec::Vec;

use crate::math;

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    math::sqrt(ss / (values.len() - 1) as f64)
}

pub fn standard_error(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    sample_std(values) / math::sqrt(values.len() as f64)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Kolmogorov distance between the empirical CDF and `U(0, 1)`.
pub fn ks_uniform(values: &[f64]) -> f64 {
    let v = sorted(values);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = x.clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Center of the fullest of `bins` equal-width bins over `[lo, hi]`.
pub fn histogram_mode(values: &[f64], bins: usize, lo: f64, hi: f64) -> f64 {
    let mut counts = alloc::vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = math::floor((v - lo) / width);
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        counts[b] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    lo + (best as f64 + 0.5) * width
}

/// Mode of a histogram after a centered moving average over `window` bins
/// (odd; truncated at the edges). The raw argmax of a fine histogram is
/// dominated by bin noise when the density is flat near its peak.
pub fn smoothed_histogram_mode(values: &[f64], bins: usize, window: usize, lo: f64, hi: f64) -> f64 {
    let mut counts = alloc::vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = math::floor((v - lo) / width);
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        counts[b] += 1;
    }
    let half = window / 2;
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..bins {
        let (a, b) = (i.saturating_sub(half), (i + half).min(bins - 1));
        let avg = counts[a..=b].iter().sum::<usize>() as f64 / (b - a + 1) as f64;
        if avg > best.1 {
            best = (i, avg);
        }
    }
    lo + (best.0 as f64 + 0.5) * width
}
