//! The small-noise diffusion `dY = b(Y) dt + N^{-1/2} sigma(Y) dB` with
//! two-dimensional Brownian forcing that only reaches the last entry of each
//! cascade.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelError, State};
use crate::ode::step_count;
use crate::rng::{self, StreamRng};

/// Uniformly gridded trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub grid: Vec<f64>,
    pub states: Vec<State>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn last(&self) -> Option<&State> {
        self.states.last()
    }

    /// Step of the uniform grid, or `None` for paths with fewer than two points.
    pub fn step(&self) -> Option<f64> {
        (self.grid.len() >= 2).then(|| self.grid[1] - self.grid[0])
    }

    /// Maximal Euclidean distance between matching states of two paths.
    pub fn sup_distance(&self, other: &Path) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| distance(a, b))
            .fold(0.0, f64::max)
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Drift into a caller-provided buffer. No dimension checks.
pub fn drift_into(model: &Model, x: &[f64], out: &mut [f64]) {
    let (nu1, nu2) = (model.nu1(), model.nu2());
    let (a, h, n) = (model.noisy1(), model.head2(), model.dim());
    for i in 0..a {
        out[i] = -nu1 * x[i] + x[i + 1];
    }
    out[a] = -nu1 * x[a] + model.c1() * model.f2().value(x[h]);
    for i in h..n - 1 {
        out[i] = -nu2 * x[i] + x[i + 1];
    }
    out[n - 1] = -nu2 * x[n - 1] + model.c2() * model.f1().value(x[0]);
}

pub fn drift(model: &Model, x: &[f64]) -> Result<State, ModelError> {
    model.check_dim(x)?;
    let mut out = vec![0.0; x.len()];
    drift_into(model, x, &mut out);
    Ok(out)
}

/// Analytic Jacobian of the drift.
pub fn drift_jacobian(model: &Model, x: &[f64]) -> DMatrix<f64> {
    let n = model.dim();
    let (a, h) = (model.noisy1(), model.head2());
    let mut j = DMatrix::zeros(n, n);
    for i in 0..h {
        j[(i, i)] = -model.nu1();
    }
    for i in h..n {
        j[(i, i)] = -model.nu2();
    }
    for i in 0..a {
        j[(i, i + 1)] = 1.0;
    }
    for i in h..n - 1 {
        j[(i, i + 1)] = 1.0;
    }
    j[(a, h)] += model.c1() * model.f2().derivative(x[h]);
    j[(n - 1, 0)] += model.c2() * model.f1().derivative(x[0]);
    j
}

/// The two nonzero dispersion entries: `(row n-1, column 0)` and
/// `(row noisy1, column 1)`.
pub fn dispersion_entries(model: &Model, x: &[f64]) -> (f64, f64) {
    let g1 = model.c2() / model.p1().sqrt() * model.f1().value(x[0]).sqrt();
    let g2 = model.c1() / model.p2().sqrt() * model.f2().value(x[model.head2()]).sqrt();
    (g1, g2)
}

/// The `n x 2` dispersion matrix.
pub fn dispersion(model: &Model, x: &[f64]) -> Result<DMatrix<f64>, ModelError> {
    model.check_dim(x)?;
    let mut s = DMatrix::zeros(model.dim(), 2);
    let (g1, g2) = dispersion_entries(model, x);
    s[(model.noisy2(), 0)] = g1;
    s[(model.noisy1(), 1)] = g2;
    Ok(s)
}

/// Jacobian of dispersion column `col` (0 or 1) with respect to the state.
pub fn dispersion_column_jacobian(model: &Model, x: &[f64], col: usize) -> DMatrix<f64> {
    let n = model.dim();
    let mut j = DMatrix::zeros(n, n);
    match col {
        0 => {
            let (f, d) = model.f1().eval(x[0]);
            j[(model.noisy2(), 0)] = model.c2() / model.p1().sqrt() * d / (2.0 * f.sqrt());
        }
        _ => {
            let h = model.head2();
            let (f, d) = model.f2().eval(x[h]);
            j[(model.noisy1(), h)] = model.c1() / model.p2().sqrt() * d / (2.0 * f.sqrt());
        }
    }
    j
}

/// `b(x) + sigma(x) u` into `out`, with `u = (u1, u2)`.
pub fn controlled_field_into(model: &Model, x: &[f64], u: [f64; 2], out: &mut [f64]) {
    drift_into(model, x, out);
    let (g1, g2) = dispersion_entries(model, x);
    out[model.noisy2()] += g1 * u[0];
    out[model.noisy1()] += g2 * u[1];
}

/// Euler-Maruyama stepping for a fixed population size.
#[derive(Debug, Clone)]
pub struct EulerMaruyama<'a> {
    model: &'a Model,
    dt: f64,
    noise: f64,
    buf: Vec<f64>,
}

impl<'a> EulerMaruyama<'a> {
    /// `noise_scale` multiplies `N^{-1/2}`; zero gives the explicit Euler
    /// scheme of the limit system.
    pub fn new(model: &'a Model, population: f64, dt: f64, noise_scale: f64) -> Self {
        Self {
            model,
            dt,
            noise: noise_scale * (dt / population).sqrt(),
            buf: vec![0.0; model.dim()],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step<R: Rng + ?Sized>(&mut self, y: &mut [f64], rng: &mut R) {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        self.step_with(y, z1, z2);
    }

    /// Step with given standard normal draws for `B^1` and `B^2`.
    pub fn step_with(&mut self, y: &mut [f64], z1: f64, z2: f64) {
        drift_into(self.model, y, &mut self.buf);
        let (g1, g2) = dispersion_entries(self.model, y);
        for (yi, bi) in y.iter_mut().zip(&self.buf) {
            *yi += bi * self.dt;
        }
        y[self.model.noisy2()] += self.noise * g1 * z1;
        y[self.model.noisy1()] += self.noise * g2 * z2;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeOptions {
    /// Multiplier on the noise term; 0 switches the noise off.
    pub noise_scale: f64,
    /// Keep every `record_stride`-th state.
    pub record_stride: usize,
}

impl Default for SdeOptions {
    fn default() -> Self {
        Self { noise_scale: 1.0, record_stride: 1 }
    }
}

/// Euler-Maruyama path of the diffusion for total population `population`.
pub fn simulate_sde(
    model: &Model,
    population: f64,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Path, ModelError> {
    simulate_sde_with(model, population, x0, horizon, dt, &mut rng::stream(seed, rng::streams::SDE, 0), SdeOptions::default())
}

pub fn simulate_sde_with(
    model: &Model,
    population: f64,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut StreamRng,
    opts: SdeOptions,
) -> Result<Path, ModelError> {
    model.check_dim(x0)?;
    let steps = step_count(horizon, dt);
    let h = if steps > 0 { horizon / steps as f64 } else { dt };
    let stride = opts.record_stride.max(1);
    let mut em = EulerMaruyama::new(model, population, h, opts.noise_scale);
    let mut y = x0.to_vec();
    let mut path = Path { grid: vec![0.0], states: vec![y.clone()] };
    for k in 1..=steps {
        em.step(&mut y, rng);
        if k % stride == 0 || k == steps {
            path.grid.push(k as f64 * h);
            path.states.push(y.clone());
        }
    }
    Ok(path)
}
