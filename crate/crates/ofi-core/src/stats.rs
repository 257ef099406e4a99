//! Statistical test machinery used by the verification harness:
//! Kolmogorov–Smirnov one- and two-sample tests, chi-square goodness of
//! fit, Wilson intervals, Spearman rank correlation, empirical
//! characteristic functions.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

/// Survival function of the Kolmogorov distribution,
/// Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2).
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// One-sample KS distance between the empirical CDF of `xs` and `cdf`.
pub fn ks_distance_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let v = sorted(xs);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// One-sample KS test; returns (distance, asymptotic p-value).
pub fn ks_test_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> (f64, f64) {
    let d = ks_distance_one_sample(xs, cdf);
    let n = xs.len() as f64;
    (d, kolmogorov_sf(n.sqrt() * d))
}

/// Two-sample KS distance.
pub fn ks_distance_two_sample(xs: &[f64], ys: &[f64]) -> f64 {
    let a = sorted(xs);
    let b = sorted(ys);
    let (na, nb) = (a.len(), b.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    d
}

/// Two-sample KS test; returns (distance, asymptotic p-value).
pub fn ks_test_two_sample(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let d = ks_distance_two_sample(xs, ys);
    let na = xs.len() as f64;
    let nb = ys.len() as f64;
    let ne = na * nb / (na + nb);
    (d, kolmogorov_sf(ne.sqrt() * d))
}

/// Chi-square goodness of fit against expected bin counts; returns
/// (statistic, p-value). Bins with expected count below 5 should be merged
/// by the caller.
pub fn chi_square_gof(observed: &[f64], expected: &[f64]) -> (f64, f64) {
    assert_eq!(observed.len(), expected.len());
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let df = observed.len().saturating_sub(1) as f64;
    let p = if df > 0.0 {
        statrs::function::gamma::gamma_ur(df / 2.0, stat / 2.0)
    } else {
        1.0
    };
    (stat, p)
}

/// Upper limit of the Wilson score interval for a binomial proportion.
pub fn wilson_upper(successes: u64, n: u64, z: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = p + z2 / (2.0 * nf);
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center + half) / denom).min(1.0)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Spearman rank correlation.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

/// Permutation test for positive Spearman correlation; returns the
/// one-sided p-value P(rho_perm >= rho_observed).
pub fn spearman_permutation_pvalue<R: Rng>(
    xs: &[f64],
    ys: &[f64],
    n_perm: usize,
    rng: &mut R,
) -> f64 {
    let observed = spearman_rho(xs, ys);
    let rx = ranks(xs);
    let mut ry = ranks(ys);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        ry.shuffle(rng);
        if pearson(&rx, &ry) >= observed {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (n_perm + 1) as f64
}

/// Empirical characteristic function of `xs` on the grid `s_grid`.
pub fn empirical_cf(xs: &[f64], s_grid: &[f64]) -> Vec<Complex64> {
    let n = xs.len() as f64;
    s_grid
        .iter()
        .map(|&s| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &x in xs {
                let (sin, cos) = (s * x).sin_cos();
                acc += Complex64::new(cos, sin);
            }
            acc / n
        })
        .collect()
}

/// Equispaced grid of `n` points on `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}
