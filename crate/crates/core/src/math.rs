//! Small numeric helpers shared by the feature and statistics modules.

use alloc::vec::Vec;

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator). Zero for fewer than two samples.
pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    ss / (xs.len() - 1) as f64
}

fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    sqrt(ss / xs.len() as f64)
}

/// Linear-interpolation quantile of an ascending slice (`p` in `[0, 1]`).
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = p * (n - 1) as f64;
            let lo = libm::floor(pos) as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

/// `[mean, population std, median, IQR]`, all zero for an empty sample.
pub(crate) fn summary4(xs: &[f64]) -> [f64; 4] {
    if xs.is_empty() {
        return [0.0; 4];
    }
    let mut sorted: Vec<f64> = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    [
        mean(xs),
        population_std(xs),
        quantile_sorted(&sorted, 0.5),
        q3 - q1,
    ]
}

/// Normalized histogram over log-spaced bins between `lo` and `hi`.
/// Samples outside the range land in the first or last bin.
pub(crate) fn log_histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut hist = alloc::vec![0.0; bins];
    if samples.is_empty() {
        return hist;
    }
    let span = ln(hi / lo);
    for &s in samples {
        let idx = if s <= lo {
            0
        } else if s >= hi {
            bins - 1
        } else {
            ((bins as f64 * ln(s / lo) / span) as usize).min(bins - 1)
        };
        hist[idx] += 1.0;
    }
    let n = samples.len() as f64;
    for h in &mut hist {
        *h /= n;
    }
    hist
}

/// SplitMix64 finalizer, used to derive independent seed streams.
pub(crate) fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
