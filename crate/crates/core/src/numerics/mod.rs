//! Numerical building blocks shared across the crate.

pub mod interp;
pub mod quadrature;
pub mod roots;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pairwise (cascade) summation. The summation tree depends only on the
/// length of the slice, so results do not depend on how terms were produced.
pub fn pairwise_sum(terms: &mut [f64]) -> f64 {
    const BLOCK: usize = 32;
    if terms.len() <= BLOCK {
        return terms.iter().sum();
    }
    let mid = terms.len() / 2;
    let (a, b) = terms.split_at_mut(mid);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Independent generator for chunk `stream` of a run seeded with `root`.
pub fn stream_rng(root: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut buf = values.to_vec();
    let mean = pairwise_sum(&mut buf) / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&mut sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// One-sample Kolmogorov–Smirnov statistic against U[0, 1].
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i as f64 + 1.0) / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    // sqrt(-ln(0.005) / 2) = 1.6276
    1.627_624 / (n as f64).sqrt()
}
