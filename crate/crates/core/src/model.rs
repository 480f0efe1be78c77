//! Static parameters of the two-population system: Erlang memory kernels,
//! sigmoid jump-rate functions and population fractions.
//!
//! Coordinates are laid out as one flat vector of length `n1 + n2 + 2`:
//! indices `0..=n1` hold the population-1 cascade (the first entry is the
//! quantity fed into `f1`), indices `n1+1..n` hold the population-2 cascade.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::config::{Config, ConfigError};

/// Largest delay order accepted for an Erlang kernel.
pub const MAX_DELAY_ORDER: usize = 20;

/// Points of the cascade state space.
pub type State = Vec<f64>;

/// A logistic jump-rate function `fmin + (fmax - fmin) / (1 + exp(-slope (x - center)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    /// Strict lower bound of the rate (events / time).
    pub fmin: f64,
    /// Upper bound of the rate (events / time).
    pub fmax: f64,
    /// Steepness (1 / state unit).
    pub slope: f64,
    /// Midpoint (state units).
    pub center: f64,
}

impl RateSpec {
    pub fn constant(rate: f64) -> Self {
        // slope 0 pins the sigmoid at its midpoint
        Self { fmin: 0.5 * rate, fmax: 1.5 * rate, slope: 0.0, center: 0.0 }
    }

    fn logistic(&self, x: f64) -> f64 {
        let z = self.slope * (x - self.center);
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    }

    /// Rate value and its exact derivative.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let s = self.logistic(x);
        let span = self.fmax - self.fmin;
        (self.fmin + span * s, span * self.slope * s * (1.0 - s))
    }

    pub fn value(&self, x: f64) -> f64 {
        self.fmin + (self.fmax - self.fmin) * self.logistic(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval(x).1
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        let s = self.logistic(x);
        (self.fmax - self.fmin) * self.slope * self.slope * s * (1.0 - s) * (1.0 - 2.0 * s)
    }

    /// Global Lipschitz constant `(fmax - fmin) * slope / 4`.
    pub fn lipschitz(&self) -> f64 {
        (self.fmax - self.fmin) * self.slope / 4.0
    }
}

/// Erlang kernel `c * exp(-nu s) * s^n / n!`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub c: f64,
    pub nu: f64,
    pub n: usize,
}

impl KernelParams {
    /// Length of the cascade carried by this kernel.
    pub fn order(&self) -> usize {
        self.n + 1
    }

    pub fn eval(&self, s: f64) -> Result<f64, ModelError> {
        if !(s >= 0.0) {
            return Err(ModelError::NegativeTime(s));
        }
        Ok(self.c * (-self.nu * s).exp() * s.powi(self.n as i32) / factorial(self.n))
    }

    /// `int_0^inf |h(s)| ds = 1 / nu^(n+1)`.
    pub fn l1_norm(&self) -> f64 {
        self.nu.powi(-(self.n as i32 + 1))
    }

    /// Time of the maximal absolute kernel value.
    pub fn peak_time(&self) -> f64 {
        self.n as f64 / self.nu
    }

    /// Advances a free cascade block by `t` in place.
    ///
    /// The block generator is `-nu I` plus the unit superdiagonal, so
    /// `exp(tA)[i][j] = exp(-nu t) t^(j-i) / (j-i)!` for `j >= i`.
    pub fn flow_block(&self, block: &mut [f64], t: f64) {
        let m = block.len();
        if t == 0.0 || m == 0 {
            return;
        }
        let decay = (-self.nu * t).exp();
        let mut powers = [0.0; MAX_DELAY_ORDER + 2];
        powers[0] = 1.0;
        for k in 1..m {
            powers[k] = powers[k - 1] * t / k as f64;
        }
        for i in 0..m {
            let mut acc = 0.0;
            for j in i..m {
                acc += powers[j - i] * block[j];
            }
            block[i] = decay * acc;
        }
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("{0}: rate not strictly lower bounded (fmin must be > 0)")]
    RateLowerBound(&'static str),
    #[error("{0}: fmax must exceed fmin")]
    RateUpperBound(&'static str),
    #[error("{0}: slope must be finite and >= 0")]
    RateSlope(&'static str),
    #[error("{0}: center must be finite")]
    RateCenter(&'static str),
    #[error("{0}: decay rate nu must be > 0")]
    NonPositiveNu(&'static str),
    #[error("{0}: sign c must be -1 or +1")]
    BadSign(&'static str),
    #[error("{0}: delay order {1} exceeds {MAX_DELAY_ORDER}")]
    DelayTooLong(&'static str, usize),
    #[error("population fractions must lie in (0, 1)")]
    FractionRange,
    #[error("fractions do not sum to 1 (p1 + p2 = {0})")]
    FractionSum(f64),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("kernel evaluated at negative time {0}")]
    NegativeTime(f64),
    #[error("state has dimension {got}, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Population label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Population {
    One,
    Two,
}

impl Population {
    pub fn from_index(k: usize) -> Option<Self> {
        match k {
            1 => Some(Population::One),
            2 => Some(Population::Two),
            _ => None,
        }
    }
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Population::One => write!(f, "1"),
            Population::Two => write!(f, "2"),
        }
    }
}

/// The full parameter set. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct Model {
    k12: KernelParams,
    k21: KernelParams,
    f1: RateSpec,
    f2: RateSpec,
    p1: f64,
    p2: f64,
    dim: usize,
}

/// Unvalidated mirror of [`Model`] used for (de)serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub k12: KernelParams,
    pub k21: KernelParams,
    pub f1: RateSpec,
    pub f2: RateSpec,
    pub p1: f64,
    pub p2: f64,
}

impl TryFrom<ModelSpec> for Model {
    type Error = ModelError;
    fn try_from(s: ModelSpec) -> Result<Self, Self::Error> {
        Model::new(s.k12, s.k21, s.f1, s.f2, s.p1, s.p2)
    }
}

impl From<Model> for ModelSpec {
    fn from(m: Model) -> Self {
        ModelSpec { k12: m.k12, k21: m.k21, f1: m.f1, f2: m.f2, p1: m.p1, p2: m.p2 }
    }
}

fn check_rate(name: &'static str, f: &RateSpec, out: &mut Vec<Violation>) {
    if !(f.fmin > 0.0) {
        out.push(Violation::RateLowerBound(name));
    }
    if !(f.fmax > f.fmin) || !f.fmax.is_finite() {
        out.push(Violation::RateUpperBound(name));
    }
    if !(f.slope >= 0.0) || !f.slope.is_finite() {
        out.push(Violation::RateSlope(name));
    }
    if !f.center.is_finite() {
        out.push(Violation::RateCenter(name));
    }
}

fn check_kernel(name: &'static str, k: &KernelParams, out: &mut Vec<Violation>) {
    if !(k.nu > 0.0) || !k.nu.is_finite() {
        out.push(Violation::NonPositiveNu(name));
    }
    if k.c != 1.0 && k.c != -1.0 {
        out.push(Violation::BadSign(name));
    }
    if k.n > MAX_DELAY_ORDER {
        out.push(Violation::DelayTooLong(name, k.n));
    }
}

impl Model {
    pub fn new(
        k12: KernelParams,
        k21: KernelParams,
        f1: RateSpec,
        f2: RateSpec,
        p1: f64,
        p2: f64,
    ) -> Result<Self, ModelError> {
        let mut v = Vec::new();
        check_kernel("h12", &k12, &mut v);
        check_kernel("h21", &k21, &mut v);
        check_rate("f1", &f1, &mut v);
        check_rate("f2", &f2, &mut v);
        if !(p1 > 0.0 && p1 < 1.0 && p2 > 0.0 && p2 < 1.0) {
            v.push(Violation::FractionRange);
        }
        if !((p1 + p2 - 1.0).abs() <= 1e-12) {
            v.push(Violation::FractionSum(p1 + p2));
        }
        if !v.is_empty() {
            return Err(ModelError::Invalid(v));
        }
        Ok(Self { k12, k21, f1, f2, p1, p2, dim: k12.n + k21.n + 2 })
    }

    /// The desk-scale oscillatory benchmark: `n1 = n2 = 1`, unit decay rates,
    /// `c1 = +1`, `c2 = -1`, equal fractions. Rates are mirror-image sigmoids
    /// centred so that `x* = (m, m, -m, -m)` with `m` the rate midpoint and
    /// `rho = -16`.
    pub fn benchmark() -> Self {
        let (fmin, fmax) = (0.05, 0.55);
        let mid = 0.5 * (fmin + fmax);
        // f'(center) = (fmax - fmin) slope / 4 = 4, so rho = -16
        let slope = 16.0 / (fmax - fmin);
        Model::new(
            KernelParams { c: 1.0, nu: 1.0, n: 1 },
            KernelParams { c: -1.0, nu: 1.0, n: 1 },
            RateSpec { fmin, fmax, slope, center: mid },
            RateSpec { fmin, fmax, slope, center: -mid },
            0.5,
            0.5,
        )
        .expect("benchmark parameters are valid")
    }

    pub fn k12(&self) -> &KernelParams {
        &self.k12
    }
    pub fn k21(&self) -> &KernelParams {
        &self.k21
    }
    pub fn f1(&self) -> &RateSpec {
        &self.f1
    }
    pub fn f2(&self) -> &RateSpec {
        &self.f2
    }
    pub fn p1(&self) -> f64 {
        self.p1
    }
    pub fn p2(&self) -> f64 {
        self.p2
    }
    pub fn n1(&self) -> usize {
        self.k12.n
    }
    pub fn n2(&self) -> usize {
        self.k21.n
    }
    pub fn c1(&self) -> f64 {
        self.k12.c
    }
    pub fn c2(&self) -> f64 {
        self.k21.c
    }
    pub fn nu1(&self) -> f64 {
        self.k12.nu
    }
    pub fn nu2(&self) -> f64 {
        self.k21.nu
    }

    /// State dimension `n1 + n2 + 2`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Index of the population-1 coordinate receiving population-2 jumps.
    pub fn noisy1(&self) -> usize {
        self.k12.n
    }
    /// First population-2 coordinate (argument of `f2`).
    pub fn head2(&self) -> usize {
        self.k12.n + 1
    }
    /// Index of the population-2 coordinate receiving population-1 jumps.
    pub fn noisy2(&self) -> usize {
        self.dim - 1
    }

    pub fn kernel(&self, pop: Population) -> &KernelParams {
        match pop {
            Population::One => &self.k12,
            Population::Two => &self.k21,
        }
    }

    /// Index range of a population's cascade block.
    pub fn block(&self, pop: Population) -> std::ops::Range<usize> {
        match pop {
            Population::One => 0..self.head2(),
            Population::Two => self.head2()..self.dim,
        }
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.dim {
            return Err(ModelError::Dimension { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// Exact free flow of both cascades (no interaction, no jumps).
    pub fn free_flow(&self, x: &mut [f64], t: f64) {
        let h = self.head2();
        let (a, b) = x.split_at_mut(h);
        self.k12.flow_block(a, t);
        self.k21.flow_block(b, t);
    }

    /// Depth of each coordinate in its cascade: 1 for the noise-driven entry,
    /// `n_k + 1` for the head of the chain.
    pub fn cascade_depths(&self) -> Vec<usize> {
        let (n1, n2) = (self.n1(), self.n2());
        (0..=n1).map(|i| n1 + 1 - i).chain((0..=n2).map(|i| n2 + 1 - i)).collect()
    }
}

/// Builds a validated model from a flat key-value configuration.
///
/// Recognised keys: `n1 n2 nu1 nu2 c1 c2 p1 p2` and
/// `f1.fmin f1.fmax f1.slope f1.center` (same for `f2`).
pub fn make_model(config: &Config) -> Result<Model, ModelError> {
    let rate = |p: &str| -> Result<RateSpec, ConfigError> {
        Ok(RateSpec {
            fmin: config.f64(&format!("{p}.fmin"))?,
            fmax: config.f64(&format!("{p}.fmax"))?,
            slope: config.f64(&format!("{p}.slope"))?,
            center: config.f64(&format!("{p}.center"))?,
        })
    };
    let k12 = KernelParams { c: config.f64("c1")?, nu: config.f64("nu1")?, n: config.usize("n1")? };
    let k21 = KernelParams { c: config.f64("c2")?, nu: config.f64("nu2")?, n: config.usize("n2")? };
    let f1 = rate("f1")?;
    let f2 = rate("f2")?;
    Model::new(k12, k21, f1, f2, config.f64("p1")?, config.f64("p2")?)
}
