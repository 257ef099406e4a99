//! Monte Carlo harness for the scaling limits of the imbalance process:
//! triangular-array row construction, moment/tail-bound checks, the
//! count-vs-intensity transfer check, and convergence runs against normal
//! and generalized hyperbolic targets.

use crate::dist::gh::GhParams;
use crate::dist::gig::GigParams;
use crate::dist::quad::integrate;
use crate::dist::DistError;
use crate::flows::{FlowError, SubordinatorSpec};
use crate::ofi::{JumpLaw, OfiError};
use crate::rng::stream_rng;
use crate::stats::{
    ks_distance_two_sample, linspace, mean, std_error, wilson_upper,
};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("invalid scaling schedule: {0}")]
    ScheduleInvalid(String),
    #[error(transparent)]
    Ofi(#[from] OfiError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Quad(#[from] crate::dist::quad::QuadError),
}

/// Row construction for the scaling sequence: at index n the driver is
/// k_n times the base driver, jump sizes shrink by 1/sqrt(k_n), and every
/// jump carries the deterministic shift drift/k_n. `size_scaling` exists
/// so negative controls can break the moment balance on purpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitScalingSchedule {
    pub k_list: Vec<u64>,
    pub base_spec: SubordinatorSpec,
    pub base_jumps: JumpLaw,
    pub drift: f64,
    pub delta: f64,
    pub delta1: f64,
    pub beta: f64,
    /// Bound constant per row: C_n = c_base * k_n.
    pub c_base: f64,
    pub size_scaling: bool,
}

impl LimitScalingSchedule {
    pub fn new(
        k_list: Vec<u64>,
        base_spec: SubordinatorSpec,
        base_jumps: JumpLaw,
        drift: f64,
        delta: f64,
        delta1: f64,
        beta: f64,
        c_base: f64,
    ) -> Result<Self, LimitError> {
        if k_list.is_empty() || k_list[0] == 0 || k_list.windows(2).any(|w| w[1] < w[0]) {
            return Err(LimitError::ScheduleInvalid(
                "k_list must be a nondecreasing sequence of positive integers".into(),
            ));
        }
        if !(delta > 0.0 && delta <= 1.0 && delta1 > 0.0 && delta1 <= 1.0) {
            return Err(LimitError::ScheduleInvalid(format!(
                "exponents must lie in (0, 1], got delta={delta}, delta1={delta1}"
            )));
        }
        if !(1.0..=2.0).contains(&beta) {
            return Err(LimitError::ScheduleInvalid(format!(
                "moment order must lie in [1, 2], got {beta}"
            )));
        }
        if !(c_base > 0.0) {
            return Err(LimitError::ScheduleInvalid("c_base must be > 0".into()));
        }
        Ok(Self {
            k_list,
            base_spec,
            base_jumps,
            drift,
            delta,
            delta1,
            beta,
            c_base,
            size_scaling: true,
        })
    }

    pub fn c_n(&self, k: u64) -> f64 {
        self.c_base * k as f64
    }

    /// One jump of row n.
    pub fn sample_row_jump<R: Rng + ?Sized>(&self, k: u64, rng: &mut R) -> f64 {
        let kf = k as f64;
        let scale = if self.size_scaling { kf.sqrt().recip() } else { 1.0 };
        self.base_jumps.sample_mixed(rng) * scale + self.drift / kf
    }

    /// Sum of `n` row-n jumps.
    fn sample_row_jump_sum<R: Rng + ?Sized>(&self, k: u64, n: u64, rng: &mut R) -> f64 {
        let kf = k as f64;
        let scale = if self.size_scaling { kf.sqrt().recip() } else { 1.0 };
        self.base_jumps.sample_mixed_sum(n, rng) * scale + n as f64 * self.drift / kf
    }

    /// Realized cumulative intensity of row n at time t.
    pub fn sample_lambda_n<R: Rng + ?Sized>(&self, k: u64, t: f64, rng: &mut R) -> Result<f64, LimitError> {
        let driver = self.base_spec.family.sample_terminal(t, rng)?;
        Ok(self.base_spec.alpha_total() * k as f64 * driver)
    }

    /// Terminal value of the row-n process at time t: a Poisson number of
    /// row jumps at the realized intensity.
    pub fn sample_row_terminal<R: Rng + ?Sized>(&self, k: u64, t: f64, rng: &mut R) -> Result<f64, LimitError> {
        let lambda = self.sample_lambda_n(k, t, rng)?;
        let n = if lambda > 0.0 {
            Poisson::new(lambda).map_err(|e| LimitError::ScheduleInvalid(e.to_string()))?.sample(rng) as u64
        } else {
            0
        };
        Ok(self.sample_row_jump_sum(k, n, rng))
    }

    /// E|X_{n,1}|^beta, Monte Carlo with a fixed internal stream.
    pub fn row_abs_moment(&self, k: u64) -> f64 {
        let mut rng = stream_rng(0x6d6f6d, k);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += self.sample_row_jump(k, &mut rng).abs().powf(self.beta);
        }
        acc / n as f64
    }

    /// Per-row values C_n^{delta1/delta} m_n^beta and their supremum over
    /// the configured rows; the sequence must stay bounded (no upward
    /// trend), otherwise the schedule is rejected.
    pub fn k_condition(&self) -> Result<KReport, LimitError> {
        let values: Vec<f64> = self
            .k_list
            .iter()
            .map(|&k| self.c_n(k).powf(self.delta1 / self.delta) * self.row_abs_moment(k))
            .collect();
        let sup = values.iter().cloned().fold(f64::NAN, f64::max);
        if !sup.is_finite() {
            return Err(LimitError::ScheduleInvalid(
                "moment-bound constant is not finite".into(),
            ));
        }
        // bounded over the configured range: allow Monte Carlo slack but
        // refuse a clear upward trend of the row values
        let first = values[0];
        let last = *values.last().unwrap();
        if values.len() > 1 && last > 1.5 * first {
            return Err(LimitError::ScheduleInvalid(format!(
                "moment-bound values grow along the schedule ({first:.4} -> {last:.4}); \
                 the supremum is unbounded"
            )));
        }
        Ok(KReport { k_list: self.k_list.clone(), values, sup })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KReport {
    pub k_list: Vec<u64>,
    pub values: Vec<f64>,
    pub sup: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub details: String,
}

impl CriterionResult {
    fn new(name: &str, pass: bool, value: f64, threshold: f64, details: String) -> Self {
        Self { name: name.to_string(), pass, value, threshold, details }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub n_values: Vec<u64>,
    pub ks_distances: Vec<f64>,
    pub criteria: Vec<CriterionResult>,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two-column plot data: row index vs KS distance.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("k_n,ks_distance\n");
        for (k, d) in self.n_values.iter().zip(&self.ks_distances) {
            out.push_str(&format!("{k},{d}\n"));
        }
        out
    }
}

/// Parallel Monte Carlo map: one derived RNG stream per path, so the
/// result is independent of the thread count.
pub fn par_paths<T: Send, F: Fn(&mut crate::rng::PathRng) -> T + Sync>(
    paths: usize,
    seed: u64,
    stream_base: u64,
    f: F,
) -> Vec<T> {
    (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, stream_base + i as u64);
            f(&mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntensityBoundMargin {
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Checks E Lambda_n^delta(t) <= (C_n t)^{delta1} at each grid time.
pub fn check_intensity_bound(
    schedule: &LimitScalingSchedule,
    k: u64,
    t_grid: &[f64],
    mc_paths: usize,
    seed: u64,
) -> Result<Vec<IntensityBoundMargin>, LimitError> {
    let mut out = Vec::with_capacity(t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        let xs: Vec<f64> = par_paths(mc_paths, seed, (j as u64) << 32, |rng| {
            schedule.sample_lambda_n(k, t, rng).map(|l| l.powf(schedule.delta))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        let est = mean(&xs);
        let se = std_error(&xs);
        let bound = (schedule.c_n(k) * t).powf(schedule.delta1);
        out.push(IntensityBoundMargin { t, estimate: est, std_error: se, bound, pass: est + 3.0 * se <= bound });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailMargin {
    pub epsilon: f64,
    pub t: f64,
    pub tail_upper: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Checks the tail bound P(|Q_n(t)| >= eps) <= eps^{-beta delta}
/// (m_n^beta)^delta (C_n t)^{delta1} with a Wilson upper confidence limit.
pub fn check_tail_bound(
    schedule: &LimitScalingSchedule,
    k: u64,
    eps_grid: &[f64],
    t_grid: &[f64],
    mc_paths: usize,
    seed: u64,
) -> Result<Vec<TailMargin>, LimitError> {
    let m_beta = schedule.row_abs_moment(k);
    let mut out = Vec::new();
    for (j, &t) in t_grid.iter().enumerate() {
        let qs: Vec<f64> = par_paths(mc_paths, seed, (j as u64) << 32, |rng| {
            schedule.sample_row_terminal(k, t, rng)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        for &eps in eps_grid {
            let hits = qs.iter().filter(|q| q.abs() >= eps).count() as u64;
            let upper = wilson_upper(hits, mc_paths as u64, 1.96);
            let bound = eps.powf(-schedule.beta * schedule.delta)
                * m_beta.powf(schedule.delta)
                * (schedule.c_n(k) * t).powf(schedule.delta1);
            // bound >= 1 is vacuous; zero observed exceedances cannot
            // contradict the bound either
            let pass = upper <= bound || bound >= 1.0 || hits == 0;
            out.push(TailMargin { epsilon: eps, t, tail_upper: upper, bound, pass });
        }
    }
    Ok(out)
}

/// Two-sample KS between the scaled count N_n/k_n and the scaled intensity
/// Lambda_n/k_n at t = 1, per row.
pub fn check_transfer_bound(
    schedule: &LimitScalingSchedule,
    mc_paths: usize,
    seed: u64,
) -> Result<ConvergenceReport, LimitError> {
    let mut distances = Vec::new();
    for (j, &k) in schedule.k_list.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = par_paths(mc_paths, seed, (j as u64) << 32, |rng| {
            let lam = schedule.sample_lambda_n(k, 1.0, rng)?;
            let n = if lam > 0.0 {
                Poisson::new(lam).map_err(|e| LimitError::ScheduleInvalid(e.to_string()))?.sample(rng)
            } else {
                0.0
            };
            Ok::<_, LimitError>((n / k as f64, lam / k as f64))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        let counts: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let lams: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        distances.push(ks_distance_two_sample(&counts, &lams));
    }
    let last = *distances.last().unwrap();
    let noise = 2.0 / (mc_paths as f64 / 2.0).sqrt();
    let monotone = distances.windows(2).all(|w| w[1] <= w[0] + noise);
    let criteria = vec![
        CriterionResult::new(
            "count_intensity_transfer_endpoint",
            last < 0.02,
            last,
            0.02,
            format!("KS(N_n/k_n, Lambda_n/k_n) at k_n = {}", schedule.k_list.last().unwrap()),
        ),
        CriterionResult::new(
            "count_intensity_transfer_monotone",
            monotone,
            *distances.first().unwrap() - last,
            0.0,
            format!("distances along k_list: {distances:?}"),
        ),
    ];
    Ok(ConvergenceReport { seed, n_values: schedule.k_list.clone(), ks_distances: distances, criteria })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CltRowReport {
    pub kn_a: f64,
    pub kn_sigma2: f64,
    pub lindeberg: f64,
    pub ks_to_normal: f64,
}

/// Empirical row diagnostics: k_n * mean, k_n * variance, the Lindeberg
/// remainder at `eps`, and the KS distance of the deterministic-count row
/// sum S_{n,k_n} to Normal(a, sigma^2) with the configured targets.
pub fn check_clt_row(
    schedule: &LimitScalingSchedule,
    k: u64,
    eps: f64,
    target_a: f64,
    target_sigma: f64,
    mc_paths: usize,
    seed: u64,
) -> Result<CltRowReport, LimitError> {
    let kf = k as f64;
    // per-jump moment estimates
    let jump_draws = 1_000_000usize;
    let jumps: Vec<f64> = par_paths(jump_draws, seed, 1 << 40, |rng| schedule.sample_row_jump(k, rng));
    let a_n = mean(&jumps);
    let sigma2_n: f64 = jumps.iter().map(|x| (x - a_n) * (x - a_n)).sum::<f64>() / jump_draws as f64;
    let lindeberg: f64 = kf
        * jumps
            .iter()
            .map(|x| {
                let d = x - a_n;
                if d.abs() >= eps { d * d } else { 0.0 }
            })
            .sum::<f64>()
        / jump_draws as f64;
    // deterministic-count row sums
    let sums: Vec<f64> = par_paths(mc_paths, seed, 2 << 40, |rng| schedule.sample_row_jump_sum(k, k, rng));
    let ks = crate::stats::ks_distance_one_sample(&sums, |x| {
        crate::dist::normal_cdf((x - target_a) / target_sigma)
    });
    Ok(CltRowReport { kn_a: kf * a_n, kn_sigma2: kf * sigma2_n, lindeberg, ks_to_normal: ks })
}

/// Convergence of the row terminals Q_n(1) to a generalized hyperbolic
/// target, measured by two-sample KS against the target's own
/// variance-mean mixture sampler.
pub fn run_gh_convergence(
    schedule: &LimitScalingSchedule,
    gh_target: &GhParams,
    mc_paths: usize,
    seed: u64,
) -> Result<ConvergenceReport, LimitError> {
    schedule.k_condition()?;
    let mut distances = Vec::new();
    for (j, &k) in schedule.k_list.iter().enumerate() {
        let sims: Vec<f64> = par_paths(mc_paths, seed, (j as u64) << 32, |rng| {
            schedule.sample_row_terminal(k, 1.0, rng)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        let targets: Vec<f64> =
            par_paths(mc_paths, seed ^ 0x7461, (j as u64) << 32, |rng| gh_target.sample_one(rng));
        distances.push(ks_distance_two_sample(&sims, &targets));
    }
    let last = *distances.last().unwrap();
    let noise = 2.0 / (mc_paths as f64 / 2.0).sqrt();
    let monotone = distances.windows(2).all(|w| w[1] <= w[0] + noise);
    let criteria = vec![
        CriterionResult::new(
            "gh_limit_endpoint",
            last < 0.015,
            last,
            0.015,
            format!("KS(Q_n(1), target) at k_n = {}", schedule.k_list.last().unwrap()),
        ),
        CriterionResult::new(
            "gh_limit_monotone",
            monotone,
            *distances.first().unwrap() - last,
            0.0,
            format!("distances along k_list: {distances:?}"),
        ),
    ];
    Ok(ConvergenceReport { seed, n_values: schedule.k_list.clone(), ks_distances: distances, criteria })
}

/// CF of a mixed infinitely divisible target: f(s) = integral of
/// exp(u * log_h(s)) against the mixing density. `log_h` is the cumulant
/// of the row-sum limit per unit of mixing mass, passed in log form so the
/// power (h(s))^u needs no branch tracking.
pub fn mixed_target_cf<F: Fn(f64) -> Complex64>(
    log_h: &F,
    mixing: &GigParams,
    s: f64,
) -> Result<Complex64, LimitError> {
    let lh = log_h(s);
    let kernel_re = |u: f64| {
        if u <= 0.0 {
            0.0
        } else {
            ((u * lh).exp() * mixing.pdf(u).unwrap_or(0.0)).re
        }
    };
    let kernel_im = |u: f64| {
        if u <= 0.0 {
            0.0
        } else {
            ((u * lh).exp() * mixing.pdf(u).unwrap_or(0.0)).im
        }
    };
    let hi = 2.0 * mixing.mode().max(1.0);
    let quad = |f: &dyn Fn(f64) -> f64| -> Result<f64, LimitError> {
        let head = integrate(f, 0.0, hi, 1e-9, 20_000)?;
        let tail = integrate(
            |w: f64| {
                let d = 1.0 - w;
                f(hi + w / d) / (d * d)
            },
            0.0,
            1.0,
            1e-9,
            20_000,
        )?;
        Ok(head + tail)
    };
    Ok(Complex64::new(quad(&kernel_re)?, quad(&kernel_im)?))
}

/// Convergence of the empirical CF of Q_n(1) to the quadrature-mixed
/// target CF on an s-grid.
pub fn run_cf_convergence<F: Fn(f64) -> Complex64 + Sync>(
    schedule: &LimitScalingSchedule,
    log_h: &F,
    mixing: &GigParams,
    mc_paths: usize,
    seed: u64,
) -> Result<ConvergenceReport, LimitError> {
    let grid = linspace(-5.0, 5.0, 41);
    let target: Vec<Complex64> = grid
        .iter()
        .map(|&s| mixed_target_cf(log_h, mixing, s))
        .collect::<Result<_, _>>()?;
    let mut sup_errors = Vec::new();
    for (j, &k) in schedule.k_list.iter().enumerate() {
        let sims: Vec<f64> = par_paths(mc_paths, seed, (j as u64) << 32, |rng| {
            schedule.sample_row_terminal(k, 1.0, rng)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        let ecf = crate::stats::empirical_cf(&sims, &grid);
        let sup = ecf
            .iter()
            .zip(&target)
            .map(|(e, t)| (e - t).norm())
            .fold(0.0f64, f64::max);
        sup_errors.push(sup);
    }
    let last = *sup_errors.last().unwrap();
    let criteria = vec![CriterionResult::new(
        "mixed_cf_endpoint",
        last < 0.02,
        last,
        0.02,
        format!("sup CF error at k_n = {}", schedule.k_list.last().unwrap()),
    )];
    Ok(ConvergenceReport { seed, n_values: schedule.k_list.clone(), ks_distances: sup_errors, criteria })
}
