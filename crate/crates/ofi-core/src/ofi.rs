//! Order-flow-imbalance processes: the two-sided random sum driven by a
//! pair of Cox streams, its single-stream compound reduction with mixture
//! jumps, and the intensity-imbalance reparameterization.

use crate::book::Side;
use crate::dist::DistError;
use crate::flows::{
    place_arrivals, sample_cox_arrivals, sample_subordinator_path, FlowError, SubordinatorFamily,
    SubordinatorSpec,
};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OfiError {
    #[error("invalid jump law: {0}")]
    InvalidJumpLaw(String),
    #[error("intensity multipliers must be positive, got {0} and {1}")]
    NonPositiveIntensity(f64, f64),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Law of a nonnegative order size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum SizeDist {
    Exponential { mean: f64 },
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl SizeDist {
    pub fn validate(&self) -> Result<(), OfiError> {
        let ok = match *self {
            SizeDist::Exponential { mean } => mean > 0.0 && mean.is_finite(),
            SizeDist::Constant { value } => value > 0.0 && value.is_finite(),
            SizeDist::Uniform { lo, hi } => lo >= 0.0 && hi > lo && hi.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(OfiError::InvalidJumpLaw(format!("bad size law {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SizeDist::Exponential { mean } => mean,
            SizeDist::Constant { value } => value,
            SizeDist::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            SizeDist::Exponential { mean } => mean * mean,
            SizeDist::Constant { .. } => 0.0,
            SizeDist::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
        }
    }

    /// E X^beta (the size is nonnegative, so this is the absolute moment).
    pub fn abs_moment(&self, beta: f64) -> f64 {
        match *self {
            SizeDist::Exponential { mean } => mean.powf(beta) * gamma(1.0 + beta),
            SizeDist::Constant { value } => value.powf(beta),
            SizeDist::Uniform { lo, hi } => {
                (hi.powf(beta + 1.0) - lo.powf(beta + 1.0)) / ((beta + 1.0) * (hi - lo))
            }
        }
    }

    pub fn cf(&self, s: f64) -> Complex64 {
        let i = Complex64::new(0.0, 1.0);
        match *self {
            SizeDist::Exponential { mean } => (Complex64::new(1.0, 0.0) - i * s * mean).inv(),
            SizeDist::Constant { value } => (i * s * value).exp(),
            SizeDist::Uniform { lo, hi } => {
                if s == 0.0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    ((i * s * hi).exp() - (i * s * lo).exp()) / (i * s * (hi - lo))
                }
            }
        }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SizeDist::Exponential { mean } => Exp::new(1.0 / mean).unwrap().sample(rng),
            SizeDist::Constant { value } => value,
            SizeDist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// Sum of `n` independent draws in O(1) where an exact identity exists
    /// (sum of exponentials is gamma; constants are deterministic).
    pub fn sample_sum<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> f64 {
        if n == 0 {
            return 0.0;
        }
        match *self {
            SizeDist::Exponential { mean } => {
                rand_distr::Gamma::new(n as f64, mean).unwrap().sample(rng)
            }
            SizeDist::Constant { value } => n as f64 * value,
            SizeDist::Uniform { .. } => (0..n).map(|_| self.sample_one(rng)).sum(),
        }
    }
}

/// Two-component jump law of the imbalance process: upward jumps X+ with
/// probability `mix_weight`, downward jumps -X- otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpLaw {
    pub plus_law: SizeDist,
    pub minus_law: SizeDist,
    /// p = alpha+ / (alpha+ + alpha-).
    pub mix_weight: f64,
}

/// Mixture moments of the signed jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureMoments {
    pub mean: f64,
    pub variance: f64,
    pub abs_beta_moment: f64,
}

impl JumpLaw {
    pub fn new(plus_law: SizeDist, minus_law: SizeDist, mix_weight: f64) -> Result<Self, OfiError> {
        plus_law.validate()?;
        minus_law.validate()?;
        if !(mix_weight > 0.0 && mix_weight < 1.0) {
            return Err(OfiError::InvalidJumpLaw(format!(
                "mix weight must lie in (0, 1), got {mix_weight}"
            )));
        }
        Ok(Self { plus_law, minus_law, mix_weight })
    }

    /// Pairs component laws with the weight implied by a two-sided split.
    pub fn for_spec(plus_law: SizeDist, minus_law: SizeDist, spec: &SubordinatorSpec) -> Result<Self, OfiError> {
        Self::new(plus_law, minus_law, spec.mix_weight())
    }

    /// CF of the signed mixed jump: p f+(s) + (1-p) f-(-s).
    pub fn cf(&self, s: f64) -> Complex64 {
        let p = self.mix_weight;
        p * self.plus_law.cf(s) + (1.0 - p) * self.minus_law.cf(-s)
    }

    /// Mean, variance, and beta-th absolute moment of the signed jump.
    /// Mean: p E X+ - (1-p) E X-. Variance expands the mixture second
    /// moment: p D X+ + q D X- + p q (E X+ + E X-)^2.
    pub fn moments(&self, beta: f64) -> MixtureMoments {
        let (p, q) = (self.mix_weight, 1.0 - self.mix_weight);
        let (mp, mm) = (self.plus_law.mean(), self.minus_law.mean());
        MixtureMoments {
            mean: p * mp - q * mm,
            variance: p * self.plus_law.variance()
                + q * self.minus_law.variance()
                + p * q * (mp + mm) * (mp + mm),
            abs_beta_moment: p * self.plus_law.abs_moment(beta) + q * self.minus_law.abs_moment(beta),
        }
    }

    /// One signed jump from the mixture.
    pub fn sample_mixed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.mix_weight {
            self.plus_law.sample_one(rng)
        } else {
            -self.minus_law.sample_one(rng)
        }
    }

    /// Sum of `n` mixed jumps: the upward count is binomial, and each
    /// component sum collapses via `SizeDist::sample_sum`.
    pub fn sample_mixed_sum<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let n_plus = rand_distr::Binomial::new(n, self.mix_weight).unwrap().sample(rng);
        self.plus_law.sample_sum(n_plus, rng) - self.minus_law.sample_sum(n - n_plus, rng)
    }
}

/// A simulated imbalance path: `values[k]` is the running sum after the
/// k-th event, with the conventional starting point (0, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct OfiPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Which component produced each jump; one entry per event.
    pub sides: Vec<Side>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfiSummary {
    pub terminal: f64,
    pub n_events_plus: usize,
    pub n_events_minus: usize,
    pub seed: u64,
}

impl OfiPath {
    fn from_jumps(mut jumps: Vec<(f64, f64, Side)>, seed: u64) -> Self {
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut times = Vec::with_capacity(jumps.len() + 1);
        let mut values = Vec::with_capacity(jumps.len() + 1);
        let mut sides = Vec::with_capacity(jumps.len());
        times.push(0.0);
        values.push(0.0);
        let mut acc = 0.0;
        for (t, dx, side) in jumps {
            acc += dx;
            times.push(t);
            values.push(acc);
            sides.push(side);
        }
        Self { times, values, sides, seed }
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Right-continuous step evaluation Q(t).
    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&u| u <= t);
        if idx == 0 {
            0.0
        } else {
            self.values[idx - 1]
        }
    }

    pub fn summary(&self) -> OfiSummary {
        OfiSummary {
            terminal: self.terminal(),
            n_events_plus: self.sides.iter().filter(|s| **s == Side::Buy).count(),
            n_events_minus: self.sides.iter().filter(|s| **s == Side::Sell).count(),
            seed: self.seed,
        }
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "time,value,side")?;
        writeln!(out, "{:.9},{},", self.times[0], self.values[0])?;
        for k in 0..self.sides.len() {
            writeln!(
                out,
                "{:.9},{},{}",
                self.times[k + 1],
                self.values[k + 1],
                self.sides[k].letter()
            )?;
        }
        Ok(())
    }
}

/// Builds the path from the two side streams with independent size draws.
pub fn simulate_ofi_two_sided<R: Rng + ?Sized>(
    jumps: &JumpLaw,
    spec: &SubordinatorSpec,
    horizon: f64,
    seed: u64,
    rng: &mut R,
) -> Result<OfiPath, OfiError> {
    let arrivals = sample_cox_arrivals(spec, horizon, rng)?;
    let mut events = Vec::with_capacity(arrivals.plus.len() + arrivals.minus.len());
    for t in arrivals.plus {
        events.push((t, jumps.plus_law.sample_one(rng), Side::Buy));
    }
    for t in arrivals.minus {
        events.push((t, -jumps.minus_law.sample_one(rng), Side::Sell));
    }
    Ok(OfiPath::from_jumps(events, seed))
}

/// Builds the path from one merged stream at the summed intensity, drawing
/// each jump from the signed mixture.
pub fn simulate_ofi_compound<R: Rng + ?Sized>(
    jumps: &JumpLaw,
    spec: &SubordinatorSpec,
    horizon: f64,
    seed: u64,
    rng: &mut R,
) -> Result<OfiPath, OfiError> {
    let grid = spec.family.default_grid(horizon);
    let path = sample_subordinator_path(&spec.family, &grid, rng)?;
    let times = place_arrivals(&path, spec.alpha_total(), rng);
    let events = times
        .into_iter()
        .map(|t| {
            let dx = jumps.sample_mixed(rng);
            let side = if dx >= 0.0 { Side::Buy } else { Side::Sell };
            (t, dx, side)
        })
        .collect();
    Ok(OfiPath::from_jumps(events, seed))
}

/// Terminal value only, via the one-dimensional reduction: one driver
/// draw, one Poisson count, i.i.d. mixture jumps. Used by the Monte Carlo
/// harness where paths are not needed.
pub fn simulate_ofi_terminal<R: Rng + ?Sized>(
    jumps: &JumpLaw,
    spec: &SubordinatorSpec,
    horizon: f64,
    rng: &mut R,
) -> Result<f64, OfiError> {
    let driver = spec.family.sample_terminal(horizon, rng)?;
    let mean = spec.alpha_total() * driver;
    let n = if mean > 0.0 {
        rand_distr::Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
    } else {
        0
    };
    let mut acc = 0.0;
    for _ in 0..n {
        acc += jumps.sample_mixed(rng);
    }
    Ok(acc)
}

/// Analytic CF of Q(t) for a deterministic-linear driver with the given
/// slope: exp{(alpha+ + alpha-) * slope * t * (f(s) - 1)}.
pub fn compound_cf(jumps: &JumpLaw, spec: &SubordinatorSpec, t: f64, s: f64) -> Result<Complex64, OfiError> {
    let slope = match spec.family {
        SubordinatorFamily::DeterministicLinear { slope } => slope,
        _ => {
            return Err(OfiError::InvalidJumpLaw(
                "closed-form CF is available only for the deterministic-linear driver".into(),
            ))
        }
    };
    let rate = spec.alpha_total() * slope * t;
    Ok((rate * (jumps.cf(s) - 1.0)).exp())
}

/// Intensity-imbalance view of a two-sided split: ratio r = alpha+/alpha-
/// with the common-driver scale alpha-.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceState {
    pub r: f64,
    pub lambda_star_scale: f64,
}

pub fn imbalance_reparameterize(alpha_plus: f64, alpha_minus: f64) -> Result<ImbalanceState, OfiError> {
    if !(alpha_plus > 0.0 && alpha_minus > 0.0) {
        return Err(OfiError::NonPositiveIntensity(alpha_plus, alpha_minus));
    }
    Ok(ImbalanceState { r: alpha_plus / alpha_minus, lambda_star_scale: alpha_minus })
}

impl ImbalanceState {
    pub fn alpha_plus(&self) -> f64 {
        self.r * self.lambda_star_scale
    }

    pub fn alpha_minus(&self) -> f64 {
        self.lambda_star_scale
    }

    /// Total intensity multiplier (1 + r) * scale.
    pub fn total_factor(&self) -> f64 {
        (1.0 + self.r) * self.lambda_star_scale
    }

    pub fn mix_weight(&self) -> f64 {
        self.r / (1.0 + self.r)
    }
}
