//! Estimation pipeline on event logs: per-interval arrival counts,
//! generalized inverse Gaussian fits to count samples, piecewise-constant
//! intensity estimates for the buy and sell flows, the windowed buy/sell
//! intensity imbalance ratio, and a shared-driver correlation diagnostic.

use crate::book::{read_csv, BookError, BookEvent, BookRecord, EventKind, Side};
use crate::dist::bessel::bessel_k;
use crate::dist::gig::GigParams;
use crate::dist::quad::integrate;
use crate::dist::DistError;
use crate::rng::stream_rng;
use crate::stats::{mean, spearman_permutation_pvalue, spearman_rho, variance};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::io::BufRead;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("event log is empty (or empty after exclusions)")]
    EmptyLog,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate sample: all observations are equal")]
    DegenerateSample,
    #[error("fit diverged: {0}")]
    FitDiverged(String),
    #[error(transparent)]
    Book(#[from] BookError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Quad(#[from] crate::dist::quad::QuadError),
}

/// Opening/closing trim applied by default to a loaded session.
pub const DEFAULT_TRIM_SECONDS: f64 = 300.0;

/// Default averaging window for the imbalance ratio series.
pub const DEFAULT_IMBALANCE_WINDOW: f64 = 60.0;

/// A time-ordered event log with session bounds and excluded windows.
/// By default the first and last five minutes of the session are excluded;
/// override with [`EventLog::with_exclusions`].
#[derive(Debug, Clone)]
pub struct EventLog {
    pub events: Vec<BookEvent>,
    pub session_start: f64,
    pub session_end: f64,
    /// Half-open windows [lo, hi) removed from every estimate.
    pub excluded: Vec<(f64, f64)>,
}

impl EventLog {
    pub fn new(events: Vec<BookEvent>) -> Result<Self, EstimateError> {
        if events.is_empty() {
            return Err(EstimateError::EmptyLog);
        }
        for e in &events {
            e.validate()?;
        }
        if events.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(EstimateError::InsufficientData(
                "event times must be nondecreasing".into(),
            ));
        }
        let start = events.first().unwrap().time;
        let end = events.last().unwrap().time;
        let excluded = if end - start > 2.0 * DEFAULT_TRIM_SECONDS {
            vec![
                (start, start + DEFAULT_TRIM_SECONDS),
                (end - DEFAULT_TRIM_SECONDS, end),
            ]
        } else {
            Vec::new()
        };
        Ok(Self { events, session_start: start, session_end: end, excluded })
    }

    pub fn from_records(records: &[BookRecord]) -> Result<Self, EstimateError> {
        Self::new(records.iter().map(|r| r.event.clone()).collect())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, EstimateError> {
        Self::from_records(&read_csv(input)?)
    }

    /// Replaces the excluded windows (e.g. an empty list to keep the whole
    /// session).
    pub fn with_exclusions(mut self, excluded: Vec<(f64, f64)>) -> Self {
        self.excluded = excluded;
        self
    }

    pub fn is_excluded(&self, t: f64) -> bool {
        self.excluded.iter().any(|&(lo, hi)| lo <= t && t < hi)
    }

    pub fn span(&self) -> f64 {
        self.session_end - self.session_start
    }
}

/// Flow-direction classification of an event: cancels act on the opposite
/// force (a cancelled sell order strengthens the buyers), limit and market
/// orders act on their own side.
pub fn stream_side(event: &BookEvent) -> Side {
    match (event.kind, event.side) {
        (EventKind::Cancel, Side::Buy) => Side::Sell,
        (EventKind::Cancel, Side::Sell) => Side::Buy,
        (_, side) => side,
    }
}

/// Per-bin event counts for one flow direction. Bins tile the session from
/// its start; bins overlapping an excluded window are dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinSeries {
    pub bin_width: f64,
    pub starts: Vec<f64>,
    pub counts: Vec<u64>,
}

impl BinSeries {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Two-column series "window_start,value".
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window_start,value\n");
        for (s, c) in self.starts.iter().zip(&self.counts) {
            out.push_str(&format!("{s},{c}\n"));
        }
        out
    }
}

fn bin_layout(log: &EventLog, width: f64) -> Result<Vec<(f64, f64)>, EstimateError> {
    if !(width > 0.0) {
        return Err(EstimateError::InsufficientData(format!(
            "bin width must be > 0, got {width}"
        )));
    }
    let span = log.span();
    let n_bins = ((span / width).ceil() as usize).max(1);
    let mut bins = Vec::with_capacity(n_bins);
    for i in 0..n_bins {
        let lo = log.session_start + i as f64 * width;
        let hi = lo + width;
        let overlaps = log.excluded.iter().any(|&(elo, ehi)| lo < ehi && elo < hi);
        if !overlaps {
            bins.push((lo, hi));
        }
    }
    Ok(bins)
}

fn count_into_bins(log: &EventLog, side: Side, bins: &[(f64, f64)]) -> Vec<u64> {
    let mut counts = vec![0u64; bins.len()];
    for e in &log.events {
        if stream_side(e) != side {
            continue;
        }
        // bins are half-open; the session's final instant (when the span is
        // an exact multiple of the width) belongs to the last kept bin
        let pos = bins.partition_point(|&(_, hi)| hi <= e.time);
        if let Some(&(lo, hi)) = bins.get(pos) {
            if lo <= e.time && e.time < hi {
                counts[pos] += 1;
            }
        } else if let Some((&(lo, hi), c)) = bins.last().zip(counts.last_mut()) {
            if lo <= e.time && e.time <= hi {
                *c += 1;
            }
        }
    }
    counts
}

/// Counts events of one flow direction in equal-width bins, dropping bins
/// that overlap an excluded window.
pub fn bin_counts(log: &EventLog, side: Side, bin_width: f64) -> Result<BinSeries, EstimateError> {
    let bins = bin_layout(log, bin_width)?;
    if !log.events.iter().any(|e| !log.is_excluded(e.time)) {
        return Err(EstimateError::EmptyLog);
    }
    let counts = count_into_bins(log, side, &bins);
    Ok(BinSeries {
        bin_width,
        starts: bins.iter().map(|&(lo, _)| lo).collect(),
        counts,
    })
}

/// Piecewise-constant intensity estimate (events per second) plus a
/// dispersion diagnostic of the per-window counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntensitySeries {
    pub window: f64,
    pub starts: Vec<f64>,
    pub values: Vec<f64>,
    pub mean_count: f64,
    /// Sample variance of the window counts over their sample mean;
    /// approximately 1 for a homogeneous Poisson stream.
    pub dispersion_ratio: f64,
    /// Set when the dispersion ratio exceeds what Poisson sampling noise
    /// explains (three standard errors of the dispersion index).
    pub overdispersed: bool,
}

impl IntensitySeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window_start,value\n");
        for (s, v) in self.starts.iter().zip(&self.values) {
            out.push_str(&format!("{s},{v}\n"));
        }
        out
    }
}

pub fn estimate_intensity(
    log: &EventLog,
    side: Side,
    window: f64,
) -> Result<IntensitySeries, EstimateError> {
    let bins = bin_counts(log, side, window)?;
    let counts: Vec<f64> = bins.counts.iter().map(|&c| c as f64).collect();
    let values: Vec<f64> = counts.iter().map(|c| c / window).collect();
    let m = mean(&counts);
    let n = counts.len();
    let ratio = if n >= 2 && m > 0.0 { variance(&counts) / m } else { 1.0 };
    // under Poisson counts the dispersion index has standard error
    // ~ sqrt(2/(n-1))
    let overdispersed = n >= 2 && ratio > 1.0 + 3.0 * (2.0 / (n as f64 - 1.0)).sqrt();
    Ok(IntensitySeries {
        window,
        starts: bins.starts,
        values,
        mean_count: m,
        dispersion_ratio: ratio,
        overdispersed,
    })
}

/// Windowed intensity-imbalance ratio r(t) = (buy count + 1/2) / (sell
/// count + 1/2). The additive 1/2 keeps empty windows finite at the cost
/// of a small bias of order 1/(2 * mean count).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioSeries {
    pub window: f64,
    pub starts: Vec<f64>,
    pub values: Vec<f64>,
}

impl RatioSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window_start,value\n");
        for (s, v) in self.starts.iter().zip(&self.values) {
            out.push_str(&format!("{s},{v}\n"));
        }
        out
    }
}

pub fn imbalance_series(log: &EventLog, window: f64) -> Result<RatioSeries, EstimateError> {
    let buys = bin_counts(log, Side::Buy, window)?;
    let sells = bin_counts(log, Side::Sell, window)?;
    let values = buys
        .counts
        .iter()
        .zip(&sells.counts)
        .map(|(&b, &s)| (b as f64 + 0.5) / (s as f64 + 0.5))
        .collect();
    Ok(RatioSeries { window, starts: buys.starts, values })
}

/// Rank-correlation diagnostic between per-window buy and sell counts.
/// A shared random driver makes both streams rise and fall together, so a
/// strongly positive rank correlation is evidence for a common driver;
/// independent or deterministic intensities give correlation near zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriverDiagnostic {
    pub n_windows: usize,
    pub rho: f64,
    /// One-sided permutation p-value for positive rank correlation.
    pub p_value: f64,
}

pub fn check_common_driver(log: &EventLog, window: f64) -> Result<DriverDiagnostic, EstimateError> {
    let buys = bin_counts(log, Side::Buy, window)?;
    let sells = bin_counts(log, Side::Sell, window)?;
    let n = buys.counts.len();
    if n < 50 {
        return Err(EstimateError::InsufficientData(format!(
            "need at least 50 windows for the driver diagnostic, got {n}"
        )));
    }
    let xs: Vec<f64> = buys.counts.iter().map(|&c| c as f64).collect();
    let ys: Vec<f64> = sells.counts.iter().map(|&c| c as f64).collect();
    let rho = spearman_rho(&xs, &ys);
    let mut rng = stream_rng(0x64726976, 0);
    let p_value = spearman_permutation_pvalue(&xs, &ys, 2000, &mut rng);
    Ok(DriverDiagnostic { n_windows: n, rho, p_value })
}

/// Result of a maximum-likelihood generalized inverse Gaussian fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GigFit {
    pub params: GigParams,
    pub log_likelihood: f64,
    pub converged: bool,
    pub n_observations: usize,
}

impl GigFit {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serializes")
    }
}

/// Sufficient statistics of a positive sample for the GIG likelihood.
struct SuffStats {
    n: f64,
    s_ln: f64,
    s_x: f64,
    s_inv: f64,
}

impl SuffStats {
    fn of(data: &[f64]) -> Self {
        let mut s_ln = 0.0;
        let mut s_x = 0.0;
        let mut s_inv = 0.0;
        for &x in data {
            s_ln += x.ln();
            s_x += x;
            s_inv += x.recip();
        }
        Self { n: data.len() as f64, s_ln, s_x, s_inv }
    }

    /// Sample log-likelihood; -inf outside the admissible region.
    fn log_likelihood(&self, p: &GigParams) -> f64 {
        if p.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        let GigParams { nu, mu, lambda } = *p;
        let ln_norm = if mu == 0.0 {
            nu * (0.5 * lambda).ln() - ln_gamma(nu)
        } else if lambda == 0.0 {
            -nu * (0.5 * mu).ln() - ln_gamma(-nu)
        } else {
            let omega = (mu * lambda).sqrt();
            match bessel_k(nu, omega) {
                Ok(k) if k.is_finite() && k > 0.0 => {
                    0.5 * nu * (lambda.ln() - mu.ln()) - std::f64::consts::LN_2 - k.ln()
                }
                _ => return f64::NEG_INFINITY,
            }
        };
        self.n * ln_norm + (nu - 1.0) * self.s_ln - 0.5 * (mu * self.s_inv + lambda * self.s_x)
    }
}

/// Nelder-Mead simplex minimizer; returns (argmin, min, converged).
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, f64, bool) {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut converged = false;
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[d].1);
        if worst.is_finite() && worst - best < tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let at = |coef: f64| -> Vec<f64> {
            (0..d)
                .map(|j| centroid[j] + coef * (centroid[j] - simplex[d].0[j]))
                .collect()
        };
        let xr = at(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = at(2.0);
            let fe = f(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let xc = at(if fr < simplex[d].1 { 0.5 } else { -0.5 });
            let fc = f(&xc);
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                for i in 1..=d {
                    let x: Vec<f64> = (0..d)
                        .map(|j| 0.5 * (simplex[0].0[j] + simplex[i].0[j]))
                        .collect();
                    let fx = f(&x);
                    simplex[i] = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    (x, fx, converged)
}

const FIT_TOL: f64 = 1e-8;
const FIT_MAX_ITER: usize = 4000;
const PARAM_BOX: f64 = 30.0;

fn boxed(theta: &[f64]) -> bool {
    theta.iter().all(|t| t.is_finite() && t.abs() <= PARAM_BOX)
}

/// Multi-start maximum-likelihood fit of the generalized inverse Gaussian
/// family, including its gamma (mu = 0) and inverse gamma (lambda = 0)
/// boundary submodels. Starts are moment-based plus an optional caller
/// initialization; the best likelihood across all starts wins.
pub fn fit_gig(data: &[f64], init: Option<GigParams>) -> Result<GigFit, EstimateError> {
    if data.len() < 30 {
        return Err(EstimateError::InsufficientData(format!(
            "GIG fit needs at least 30 observations, got {}",
            data.len()
        )));
    }
    if data.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(EstimateError::InsufficientData(
            "GIG fit requires strictly positive finite observations".into(),
        ));
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * hi {
        return Err(EstimateError::DegenerateSample);
    }
    let stats = SuffStats::of(data);
    let m = stats.s_x / stats.n;
    let v = {
        let xs: Vec<f64> = data.to_vec();
        variance(&xs).max(1e-12 * m * m)
    };

    // interior parameterization (nu, ln mu, ln lambda)
    let interior_obj = |theta: &[f64]| -> f64 {
        if !boxed(theta) {
            return f64::INFINITY;
        }
        let p = GigParams { nu: theta[0], mu: theta[1].exp(), lambda: theta[2].exp() };
        -stats.log_likelihood(&p)
    };
    // gamma boundary (ln shape, ln rate-doubled): mu = 0
    let gamma_obj = |theta: &[f64]| -> f64 {
        if !boxed(theta) {
            return f64::INFINITY;
        }
        let p = GigParams { nu: theta[0].exp(), mu: 0.0, lambda: theta[1].exp() };
        -stats.log_likelihood(&p)
    };
    // inverse gamma boundary (ln(-nu), ln mu): lambda = 0
    let inv_gamma_obj = |theta: &[f64]| -> f64 {
        if !boxed(theta) {
            return f64::INFINITY;
        }
        let p = GigParams { nu: -theta[0].exp(), mu: theta[1].exp(), lambda: 0.0 };
        -stats.log_likelihood(&p)
    };

    // moment-matched starts: inverse-Gaussian-shaped, gamma-shaped (small
    // mu), and a symmetric middle start
    let ig_shape = (m * m * m / v).max(1e-8);
    let mut interior_starts = vec![
        vec![-0.5, ig_shape.ln(), (m / v).max(1e-8).ln()],
        vec![(m * m / v).max(0.1), (0.01 * m).max(1e-8).ln(), (2.0 * m / v).max(1e-8).ln()],
        vec![0.0, m.max(1e-8).ln(), m.max(1e-8).recip().ln()],
    ];
    if let Some(p) = init {
        if p.validate().is_ok() && p.mu > 0.0 && p.lambda > 0.0 {
            interior_starts.push(vec![p.nu, p.mu.ln(), p.lambda.ln()]);
        }
    }

    let mut best: Option<(GigParams, f64, bool)> = None;
    let mut consider = |params: GigParams, neg_ll: f64, conv: bool| {
        let ll = -neg_ll;
        if ll.is_finite() && params.validate().is_ok() {
            let better = best.as_ref().map_or(true, |(_, b, _)| ll > *b);
            if better {
                best = Some((params, ll, conv));
            }
        }
    };

    for start in &interior_starts {
        let (theta, f, conv) = nelder_mead(interior_obj, start, 0.25, FIT_MAX_ITER, FIT_TOL);
        consider(
            GigParams { nu: theta[0], mu: theta[1].exp(), lambda: theta[2].exp() },
            f,
            conv,
        );
    }
    {
        let start = vec![(m * m / v).max(0.05).ln(), (2.0 * m / v).max(1e-8).ln()];
        let (theta, f, conv) = nelder_mead(gamma_obj, &start, 0.25, FIT_MAX_ITER, FIT_TOL);
        consider(GigParams { nu: theta[0].exp(), mu: 0.0, lambda: theta[1].exp() }, f, conv);
    }
    {
        let shape = (m * m / v + 2.0).max(1.05);
        let start = vec![shape.ln(), (2.0 * m * (shape - 1.0)).ln()];
        let (theta, f, conv) = nelder_mead(inv_gamma_obj, &start, 0.25, FIT_MAX_ITER, FIT_TOL);
        consider(GigParams { nu: -theta[0].exp(), mu: theta[1].exp(), lambda: 0.0 }, f, conv);
    }

    let (params, log_likelihood, converged) = best.ok_or_else(|| {
        EstimateError::FitDiverged("no start produced a finite log-likelihood".into())
    })?;
    Ok(GigFit { params, log_likelihood, converged, n_observations: data.len() })
}

/// Kolmogorov-Smirnov distance between a positive sample and a fitted GIG
/// law, evaluating the fitted CDF incrementally along the sorted sample so
/// each quadrature segment stays short.
pub fn gig_ks_statistic(data: &[f64], params: &GigParams) -> Result<f64, EstimateError> {
    if data.is_empty() {
        return Err(EstimateError::EmptyLog);
    }
    let mut xs = data.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let closed_form = params.mu == 0.0 || params.lambda == 0.0;
    let mut cdf = Vec::with_capacity(xs.len());
    if closed_form {
        for &x in &xs {
            cdf.push(params.cdf(x)?);
        }
    } else {
        let mut acc = params.cdf(xs[0])?;
        cdf.push(acc);
        for w in xs.windows(2) {
            if w[1] > w[0] {
                acc += integrate(|t| params.pdf(t).unwrap_or(0.0), w[0], w[1], 1e-10, 4000)?;
            }
            cdf.push(acc.min(1.0));
        }
    }
    let mut d: f64 = 0.0;
    for (i, f) in cdf.iter().enumerate() {
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    Ok(d)
}

/// Histogram of a positive sample with the fitted density evaluated at bin
/// midpoints: "bin_left,bin_right,count,fitted_density".
pub fn histogram_csv(
    data: &[f64],
    n_bins: usize,
    params: &GigParams,
) -> Result<String, EstimateError> {
    if data.is_empty() {
        return Err(EstimateError::EmptyLog);
    }
    if n_bins == 0 {
        return Err(EstimateError::InsufficientData("histogram needs at least one bin".into()));
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / n_bins as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0u64; n_bins];
    for &x in data {
        let i = (((x - lo) / width) as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    let mut out = String::from("bin_left,bin_right,count,fitted_density\n");
    for (i, c) in counts.iter().enumerate() {
        let left = lo + i as f64 * width;
        let right = left + width;
        let mid = 0.5 * (left + right);
        let dens = if mid > 0.0 { params.pdf(mid)? } else { 0.0 };
        out.push_str(&format!("{left},{right},{c},{dens}\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{
        sample_cox_arrivals, sample_poisson_arrivals, sample_subordinator_path, place_arrivals,
        SubordinatorFamily, SubordinatorSpec,
    };
    use crate::rng::stream_rng;
    use rand_distr::{Distribution, Exp};

    fn event_at(time: f64, side: Side, kind: EventKind) -> BookEvent {
        let level_offset = if kind == EventKind::Market { None } else { Some(1) };
        BookEvent { time, side, kind, level_offset, size: 1 }
    }

    fn log_from_arrivals(buys: &[f64], sells: &[f64]) -> EventLog {
        let mut events: Vec<BookEvent> = buys
            .iter()
            .map(|&t| event_at(t, Side::Buy, EventKind::Limit))
            .chain(sells.iter().map(|&t| event_at(t, Side::Sell, EventKind::Limit)))
            .collect();
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        EventLog::new(events).unwrap()
    }

    #[test]
    fn poisson_bin_counts_match_rate() {
        let mut rng = stream_rng(2024, 0);
        let arrivals = sample_poisson_arrivals(4.0, 8400.0, &mut rng);
        let log = log_from_arrivals(&arrivals, &[]);
        let bins = bin_counts(&log, Side::Buy, 15.0).unwrap();
        assert!(bins.counts.len() >= 500, "got {} bins", bins.counts.len());
        let counts: Vec<f64> = bins.counts.iter().map(|&c| c as f64).collect();
        let m = mean(&counts);
        let sigma = (60.0 / counts.len() as f64).sqrt();
        assert!((m - 60.0).abs() < 3.0 * sigma, "mean count {m} vs 60 +- {}", 3.0 * sigma);
    }

    #[test]
    fn single_event_occupies_one_bin() {
        let log = log_from_arrivals(&[3.7], &[]).with_exclusions(Vec::new());
        let bins = bin_counts(&log, Side::Buy, 1.0).unwrap();
        assert_eq!(bins.total(), 1);
        assert_eq!(bins.counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn cancels_feed_the_opposite_stream() {
        let events = vec![
            event_at(1.0, Side::Buy, EventKind::Limit),
            event_at(2.0, Side::Buy, EventKind::Market),
            event_at(3.0, Side::Sell, EventKind::Cancel),
            event_at(4.0, Side::Sell, EventKind::Limit),
            event_at(5.0, Side::Buy, EventKind::Cancel),
        ];
        let log = EventLog::new(events).unwrap().with_exclusions(Vec::new());
        let buys = bin_counts(&log, Side::Buy, 10.0).unwrap();
        let sells = bin_counts(&log, Side::Sell, 10.0).unwrap();
        assert_eq!(buys.total(), 3, "limit buy + market buy + sell cancel");
        assert_eq!(sells.total(), 2, "limit sell + buy cancel");
    }

    #[test]
    fn bin_totals_account_for_every_unexcluded_event() {
        let mut rng = stream_rng(7, 0);
        let buys = sample_poisson_arrivals(2.0, 100.0, &mut rng);
        let sells = sample_poisson_arrivals(3.0, 100.0, &mut rng);
        let mut log = log_from_arrivals(&buys, &sells);
        // exclusion aligned with the 5 s bin lattice
        let lo = log.session_start + 20.0;
        log = log.with_exclusions(vec![(lo, lo + 20.0)]);
        let total = bin_counts(&log, Side::Buy, 5.0).unwrap().total()
            + bin_counts(&log, Side::Sell, 5.0).unwrap().total();
        let kept = log.events.iter().filter(|e| !log.is_excluded(e.time)).count() as u64;
        assert_eq!(total, kept);
    }

    #[test]
    fn fit_recovers_interior_law() {
        let truth = GigParams::new(-0.5, 4.0, 1.0).unwrap();
        let mut rng = stream_rng(11, 0);
        let data = truth.sample(10_000, &mut rng);
        let fit = fit_gig(&data, None).unwrap();
        assert!(fit.converged);
        let stats = SuffStats::of(&data);
        let ll_truth = stats.log_likelihood(&truth);
        assert!(
            fit.log_likelihood >= ll_truth - 2.0,
            "fit ll {} vs truth ll {}",
            fit.log_likelihood,
            ll_truth
        );
        let d = gig_ks_statistic(&data, &fit.params).unwrap();
        assert!(d < 0.02, "KS distance {d}");
    }

    #[test]
    fn fit_is_self_consistent_on_boundary_families() {
        let cases = [
            GigParams::new(2.0, 0.0, 3.0).unwrap(),  // gamma
            GigParams::new(-2.0, 3.0, 0.0).unwrap(), // inverse gamma
            GigParams::new(1.0, 2.0, 2.0).unwrap(),  // interior
        ];
        for (i, truth) in cases.iter().enumerate() {
            let mut rng = stream_rng(23, i as u64);
            let data = truth.sample(5_000, &mut rng);
            let fit = fit_gig(&data, None).unwrap();
            let d = gig_ks_statistic(&data, &fit.params).unwrap();
            assert!(d < 0.02, "case {i}: KS distance {d}");
        }
    }

    #[test]
    fn fit_tracks_exponential_data_in_the_gamma_limit() {
        let mut rng = stream_rng(31, 0);
        let exp = Exp::new(1.0).unwrap();
        let data: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut rng)).collect();
        let fit = fit_gig(&data, None).unwrap();
        for i in 1..=10 {
            let x = 0.2 * i as f64;
            let fitted = fit.params.pdf(x).unwrap();
            let target = (-x).exp();
            assert!(
                (fitted - target).abs() / target < 0.05,
                "density at {x}: fitted {fitted}, exponential {target}"
            );
        }
    }

    #[test]
    fn fit_rejects_small_and_degenerate_samples() {
        let small: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert!(matches!(fit_gig(&small, None), Err(EstimateError::InsufficientData(_))));
        let flat = vec![2.5; 100];
        assert!(matches!(fit_gig(&flat, None), Err(EstimateError::DegenerateSample)));
    }

    #[test]
    fn homogeneous_intensity_estimates_fluctuate_around_rate() {
        let mut rng = stream_rng(5, 0);
        let arrivals = sample_poisson_arrivals(3.0, 2200.0, &mut rng);
        let log = log_from_arrivals(&arrivals, &[]);
        let est = estimate_intensity(&log, Side::Buy, 15.0).unwrap();
        assert!(est.values.len() >= 100);
        let m = mean(&est.values);
        let sigma = (3.0 / 15.0 / est.values.len() as f64).sqrt();
        assert!((m - 3.0).abs() < 3.0 * sigma, "mean intensity {m}");
        assert!(!est.overdispersed, "dispersion ratio {}", est.dispersion_ratio);
    }

    #[test]
    fn empty_window_has_zero_intensity() {
        let log = log_from_arrivals(&[1.0, 45.0], &[]).with_exclusions(Vec::new());
        let est = estimate_intensity(&log, Side::Buy, 10.0).unwrap();
        assert!(est.values[1..est.values.len() - 1].iter().all(|&v| v == 0.0));
        assert!(est.values[0] > 0.0);
    }

    #[test]
    fn gamma_driver_counts_are_overdispersed() {
        let family = SubordinatorFamily::Gamma { shape: 2.0, rate: 2.0 };
        let mut rng = stream_rng(13, 0);
        let grid: Vec<f64> = (0..=440).map(|i| 5.0 * i as f64).collect();
        let path = sample_subordinator_path(&family, &grid, &mut rng).unwrap();
        let arrivals = place_arrivals(&path, 10.0, &mut rng);
        let log = log_from_arrivals(&arrivals, &[]);
        let est = estimate_intensity(&log, Side::Buy, 15.0).unwrap();
        assert!(est.overdispersed, "dispersion ratio {}", est.dispersion_ratio);
    }

    #[test]
    fn symmetric_flows_balance_around_one() {
        let mut rng = stream_rng(17, 0);
        let buys = sample_poisson_arrivals(6.0, 6700.0, &mut rng);
        let sells = sample_poisson_arrivals(6.0, 6700.0, &mut rng);
        let log = log_from_arrivals(&buys, &sells);
        let r = imbalance_series(&log, 60.0).unwrap();
        assert!(r.values.len() >= 100);
        let m = mean(&r.values);
        assert!((0.95..=1.05).contains(&m), "mean ratio {m}");
    }

    #[test]
    fn one_sided_log_stays_finite() {
        let mut rng = stream_rng(19, 0);
        let buys = sample_poisson_arrivals(5.0, 120.0, &mut rng);
        let log = log_from_arrivals(&buys, &[]).with_exclusions(Vec::new());
        let r = imbalance_series(&log, 60.0).unwrap();
        assert!(r.values.iter().all(|v| v.is_finite() && *v > 1.0));
    }

    #[test]
    fn side_swap_inverts_the_ratio() {
        let mut rng = stream_rng(29, 0);
        let buys = sample_poisson_arrivals(4.0, 900.0, &mut rng);
        let sells = sample_poisson_arrivals(2.0, 900.0, &mut rng);
        let log = log_from_arrivals(&buys, &sells);
        let swapped = EventLog::new(
            log.events
                .iter()
                .map(|e| BookEvent {
                    side: match e.side {
                        Side::Buy => Side::Sell,
                        Side::Sell => Side::Buy,
                    },
                    ..e.clone()
                })
                .collect(),
        )
        .unwrap();
        let r = imbalance_series(&log, 60.0).unwrap();
        let r_swapped = imbalance_series(&swapped, 60.0).unwrap();
        for (a, b) in r.values.iter().zip(&r_swapped.values) {
            assert!((a * b - 1.0).abs() < 1e-12, "{a} * {b} != 1");
        }
    }

    #[test]
    fn doubled_buy_rate_doubles_the_ratio() {
        let spec = SubordinatorSpec::new(
            SubordinatorFamily::Gamma { shape: 2.0, rate: 2.0 },
            40.0,
            20.0,
        )
        .unwrap();
        let mut rng = stream_rng(37, 0);
        let arrivals = sample_cox_arrivals(&spec, 2100.0, &mut rng).unwrap();
        let log = log_from_arrivals(&arrivals.plus, &arrivals.minus);
        let r = imbalance_series(&log, 60.0).unwrap();
        let m = mean(&r.values);
        let se = (variance(&r.values) / r.values.len() as f64).sqrt();
        assert!((m - 2.0).abs() < 3.0 * se + 0.02, "mean ratio {m}, se {se}");
    }

    #[test]
    fn common_driver_shows_positive_rank_correlation() {
        let family = SubordinatorFamily::Gamma { shape: 2.0, rate: 2.0 };
        let mut rng = stream_rng(41, 0);
        // one driver path shared by both streams, resolved at the window scale
        let grid: Vec<f64> = (0..=560).map(|i| 15.0 * i as f64).collect();
        let path = sample_subordinator_path(&family, &grid, &mut rng).unwrap();
        let buys = place_arrivals(&path, 10.0, &mut rng);
        let sells = place_arrivals(&path, 10.0, &mut rng);
        let log = log_from_arrivals(&buys, &sells);
        let diag = check_common_driver(&log, 15.0).unwrap();
        assert!(diag.n_windows >= 500);
        assert!(diag.rho > 0.5, "rho {}", diag.rho);
        assert!(diag.p_value < 0.01, "p {}", diag.p_value);
    }

    #[test]
    fn independent_drivers_show_no_correlation() {
        let family = SubordinatorFamily::Gamma { shape: 2.0, rate: 2.0 };
        let mut rng = stream_rng(43, 0);
        let grid: Vec<f64> = (0..=840).map(|i| 10.0 * i as f64).collect();
        let path_b = sample_subordinator_path(&family, &grid, &mut rng).unwrap();
        let path_s = sample_subordinator_path(&family, &grid, &mut rng).unwrap();
        let buys = place_arrivals(&path_b, 10.0, &mut rng);
        let sells = place_arrivals(&path_s, 10.0, &mut rng);
        let log = log_from_arrivals(&buys, &sells);
        let diag = check_common_driver(&log, 15.0).unwrap();
        assert!(diag.rho.abs() < 0.15, "rho {}", diag.rho);
        assert!(diag.p_value > 0.01, "p {}", diag.p_value);
    }

    #[test]
    fn deterministic_driver_shows_no_correlation() {
        let spec = SubordinatorSpec::new(
            SubordinatorFamily::DeterministicLinear { slope: 1.0 },
            10.0,
            10.0,
        )
        .unwrap();
        let mut rng = stream_rng(47, 0);
        let arrivals = sample_cox_arrivals(&spec, 8400.0, &mut rng).unwrap();
        let log = log_from_arrivals(&arrivals.plus, &arrivals.minus);
        let diag = check_common_driver(&log, 15.0).unwrap();
        assert!(diag.rho.abs() < 0.15, "rho {}", diag.rho);
        assert!(diag.p_value > 0.01, "p {}", diag.p_value);
    }

    #[test]
    fn too_few_windows_are_rejected() {
        let mut rng = stream_rng(53, 0);
        let buys = sample_poisson_arrivals(5.0, 100.0, &mut rng);
        let log = log_from_arrivals(&buys, &buys).with_exclusions(Vec::new());
        assert!(matches!(
            check_common_driver(&log, 15.0),
            Err(EstimateError::InsufficientData(_))
        ));
    }

    #[test]
    fn intensity_is_translation_invariant() {
        let mut rng = stream_rng(59, 0);
        let arrivals = sample_poisson_arrivals(3.0, 2200.0, &mut rng);
        let log = log_from_arrivals(&arrivals, &[]);
        let shifted = EventLog::new(
            log.events
                .iter()
                .map(|e| BookEvent { time: e.time + 4096.0, ..e.clone() })
                .collect(),
        )
        .unwrap();
        let a = estimate_intensity(&log, Side::Buy, 15.0).unwrap();
        let b = estimate_intensity(&shifted, Side::Buy, 15.0).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn default_trims_cover_session_edges() {
        let mut rng = stream_rng(61, 0);
        let arrivals = sample_poisson_arrivals(2.0, 1000.0, &mut rng);
        let log = log_from_arrivals(&arrivals, &[]);
        assert_eq!(log.excluded.len(), 2);
        assert!(log.is_excluded(log.session_start + 1.0));
        assert!(log.is_excluded(log.session_end - 1.0));
        assert!(!log.is_excluded(log.session_start + 500.0));
    }

    #[test]
    fn histogram_rows_cover_the_sample() {
        let truth = GigParams::new(-0.5, 4.0, 1.0).unwrap();
        let mut rng = stream_rng(67, 0);
        let data = truth.sample(2_000, &mut rng);
        let csv = histogram_csv(&data, 20, &truth).unwrap();
        let total: u64 = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 2_000);
    }
}
