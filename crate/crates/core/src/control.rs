//! Controllability: the linear cascade subsystems, their Gram matrices and
//! minimum-energy controls, steering of the full nonlinear system by
//! decoupling the two populations, Lie-bracket rank, a small-time local
//! controllability certificate and cost-scaling exponents.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, Population, State};
use crate::ode::{step_count, Rk4};
use crate::quad::Rule;
use crate::sde::{controlled_field_into, dispersion, dispersion_column_jacobian, drift_into, drift_jacobian, Path};
use crate::stats::{linear_fit, LinearFit};

const GRAM_NODES: usize = 64;
const MAX_CONDITION: f64 = 1e12;
const HEAD_NODES: usize = 40;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("time horizon must be positive (got {0})")]
    Horizon(f64),
    #[error("Gram matrix is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("boundary data has dimension {got}, subsystem expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("integration step {dt} does not divide the control step {step}")]
    Grid { dt: f64, step: f64 },
    #[error("steering verification residual {residual:e} exceeds {tol:e}; refine dt")]
    Verification { residual: f64, tol: f64 },
    #[error("need at least 3 horizons for a scaling fit (got {0})")]
    Fit(usize),
    #[error("coordinate {l} outside 1..={m}")]
    Coordinate { l: usize, m: usize },
}

/// Piecewise-constant control `(h1dot, h2dot)` on a uniform grid over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub horizon: f64,
    pub values: Vec<[f64; 2]>,
}

impl Control {
    pub fn new(horizon: f64, values: Vec<[f64; 2]>) -> Self {
        Self { horizon, values }
    }

    pub fn zero(horizon: f64, intervals: usize) -> Self {
        Self { horizon, values: vec![[0.0, 0.0]; intervals.max(1)] }
    }

    pub fn intervals(&self) -> usize {
        self.values.len()
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.values.len() as f64
    }

    /// Interval end points `0, dt, ..., horizon`.
    pub fn grid(&self) -> Vec<f64> {
        let h = self.step();
        (0..=self.values.len()).map(|k| k as f64 * h).collect()
    }

    /// Value on the interval containing `t` (right-continuous).
    pub fn at(&self, t: f64) -> [f64; 2] {
        let k = ((t / self.step()).floor().max(0.0) as usize).min(self.values.len() - 1);
        self.values[k]
    }

    /// `1/2 sum |u_k|^2 dt`.
    pub fn action(&self) -> f64 {
        0.5 * self.step() * self.values.iter().map(|u| u[0] * u[0] + u[1] * u[1]).sum::<f64>()
    }

    /// `max |h1dot| + max |h2dot|`.
    pub fn sup_norm(&self) -> f64 {
        let m1 = self.values.iter().map(|u| u[0].abs()).fold(0.0, f64::max);
        let m2 = self.values.iter().map(|u| u[1].abs()).fold(0.0, f64::max);
        m1 + m2
    }
}

/// `x' = A x + B u` for one cascade, `A = -nu I + N` with `N` the unit
/// superdiagonal and `B` the last basis vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSubsystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub population: Population,
    pub nu: f64,
}

impl LinearSubsystem {
    pub fn new(nu: f64, m: usize, population: Population) -> Self {
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            a[(i, i)] = -nu;
            if i + 1 < m {
                a[(i, i + 1)] = 1.0;
            }
        }
        let mut b = DVector::zeros(m);
        b[m - 1] = 1.0;
        Self { a, b, population, nu }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Closed-form `exp(tA)`.
    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        let m = self.dim();
        let decay = (-self.nu * t).exp();
        let mut p = vec![1.0; m];
        for k in 1..m {
            p[k] = p[k - 1] * t / k as f64;
        }
        DMatrix::from_fn(m, m, |i, j| if j >= i { decay * p[j - i] } else { 0.0 })
    }

    /// `exp(tA) B`, the last column of `exp(tA)`.
    pub fn exp_b(&self, t: f64) -> DVector<f64> {
        let m = self.dim();
        let decay = (-self.nu * t).exp();
        let mut g = DVector::zeros(m);
        let mut p = decay;
        for j in 0..m {
            g[m - 1 - j] = p;
            p *= t / (j + 1) as f64;
        }
        g
    }

    /// Kalman matrix `[B, AB, ..., A^(m-1) B]`.
    pub fn kalman(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut k = DMatrix::zeros(m, m);
        let mut v = self.b.clone();
        for j in 0..m {
            k.set_column(j, &v);
            v = &self.a * v;
        }
        k
    }

    pub fn kalman_rank(&self) -> usize {
        self.kalman().rank(1e-10)
    }
}

pub fn linear_subsystem(model: &Model, population: Population) -> LinearSubsystem {
    let k = model.kernel(population);
    LinearSubsystem::new(k.nu, k.n + 1, population)
}

/// `Q_T = int_0^T exp(sA) B B* exp(sA*) ds` by Gauss-Legendre.
pub fn gram_matrix(sys: &LinearSubsystem, t: f64) -> Result<DMatrix<f64>, ControlError> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(ControlError::Horizon(t));
    }
    let m = sys.dim();
    let rule = Rule::new(GRAM_NODES, 0.0, t);
    let mut q = DMatrix::zeros(m, m);
    for (s, w) in rule.nodes.iter().zip(&rule.weights) {
        let g = sys.exp_b(*s);
        q += *w * &g * g.transpose();
    }
    Ok(0.5 * (&q + q.transpose()))
}

fn condition(q: &DMatrix<f64>) -> f64 {
    let s = q.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = s.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v.abs()), b.max(v.abs())));
    hi / lo
}

/// Minimum-energy steering of one linear subsystem.
#[derive(Debug, Clone)]
pub struct MinEnergy {
    pub sys: LinearSubsystem,
    pub horizon: f64,
    pub x: DVector<f64>,
    /// `Q_T^{-1} (y - exp(TA) x)`.
    pub w: DVector<f64>,
    /// `<exp(TA)x - y, Q_T^{-1} (exp(TA)x - y)>`, equal to `int_0^T u^2`.
    pub cost: f64,
}

impl MinEnergy {
    /// `u(t) = B* exp((T-t)A*) w`.
    pub fn u(&self, t: f64) -> f64 {
        let r = self.horizon - t;
        let m = self.w.len();
        let mut g = (-self.sys.nu * r).exp();
        let mut acc = 0.0;
        for j in 0..m {
            acc += g * self.w[m - 1 - j];
            g *= r / (j + 1) as f64;
        }
        acc
    }

    /// Closed-form controlled state `exp(tA)x + Q_t exp((T-t)A*) w`.
    pub fn state(&self, t: f64) -> DVector<f64> {
        let free = self.sys.exp(t) * &self.x;
        if t <= 0.0 {
            return free;
        }
        let qt = gram_matrix(&self.sys, t).expect("t > 0");
        free + qt * self.sys.exp(self.horizon - t).transpose() * &self.w
    }
}

pub fn min_energy_control(sys: &LinearSubsystem, t: f64, x: &[f64], y: &[f64]) -> Result<MinEnergy, ControlError> {
    let m = sys.dim();
    for v in [x, y] {
        if v.len() != m {
            return Err(ControlError::Dimension { expected: m, got: v.len() });
        }
    }
    let q = gram_matrix(sys, t)?;
    let cond = condition(&q);
    if !(cond < MAX_CONDITION) {
        return Err(ControlError::IllConditioned(cond));
    }
    let x = DVector::from_column_slice(x);
    let d = DVector::from_column_slice(y) - sys.exp(t) * &x;
    let chol = q.cholesky().ok_or(ControlError::IllConditioned(cond))?;
    let w = chol.solve(&d);
    let cost = d.dot(&w);
    Ok(MinEnergy { sys: sys.clone(), horizon: t, x, w, cost })
}

/// RK4 path of `phi' = b(phi) + sigma(phi) h'` with `h'` piecewise constant.
pub fn integrate_controlled(model: &Model, x: &[f64], control: &Control, dt: f64) -> Result<Path, ControlError> {
    let step = control.step();
    let sub = (step / dt).round().max(1.0) as usize;
    if ((sub as f64) * dt - step).abs() > 1e-9 * step {
        return Err(ControlError::Grid { dt, step });
    }
    let h = step / sub as f64;
    let mut rk = Rk4::new(x.len());
    let mut phi = x.to_vec();
    let mut path = Path { grid: vec![0.0], states: vec![phi.clone()] };
    for (k, u) in control.values.iter().enumerate() {
        for j in 1..=sub {
            rk.step(0.0, &mut phi, h, |_, y, o| controlled_field_into(model, y, *u, o));
            path.grid.push((k * sub + j) as f64 * h);
            path.states.push(phi.clone());
        }
    }
    Ok(path)
}

/// Controlled endpoint for a continuous-time control `u(t)`.
pub fn integrate_controlled_fn(model: &Model, x: &[f64], horizon: f64, dt: f64, u: impl Fn(f64) -> [f64; 2]) -> State {
    let steps = step_count(horizon, dt);
    let h = horizon / steps.max(1) as f64;
    let mut rk = Rk4::new(x.len());
    let mut phi = x.to_vec();
    for k in 0..steps {
        rk.step(k as f64 * h, &mut phi, h, |t, y, o| controlled_field_into(model, y, u(t), o));
    }
    phi
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Steering {
    /// Midpoint samples of the continuous-time control on the `dt` grid.
    pub control: Control,
    pub achieved: State,
    /// `1/2 int |h'|^2` of the piecewise-constant representative.
    pub action: f64,
    pub residual: f64,
}

/// Decoupled steering. Each cascade follows the minimum-energy path of its
/// linear subsystem written in deviations from the equilibrium, so that
/// `u_k = c_k f(x*) + v_k` and the equilibrium is held by `v = 0`. The
/// interaction term is then cancelled through `h'`.
pub struct Decoupled<'a> {
    model: &'a Model,
    eq: State,
    rule: (Vec<f64>, Vec<f64>),
    pub pop1: MinEnergy,
    pub pop2: MinEnergy,
}

impl<'a> Decoupled<'a> {
    pub fn new(model: &'a Model, x: &[f64], y: &[f64], t: f64) -> Result<Self, ControlError> {
        let eq = crate::limit::find_equilibrium(model).map(|e| e.point).unwrap_or_else(|_| vec![0.0; model.dim()]);
        let shift = |v: &[f64], r: std::ops::Range<usize>| -> Vec<f64> { r.map(|i| v[i] - eq[i]).collect() };
        let (b1, b2) = (model.block(Population::One), model.block(Population::Two));
        let pop1 = min_energy_control(&linear_subsystem(model, Population::One), t, &shift(x, b1.clone()), &shift(y, b1))?;
        let pop2 = min_energy_control(&linear_subsystem(model, Population::Two), t, &shift(x, b2.clone()), &shift(y, b2))?;
        Ok(Self { model, eq, rule: crate::quad::gauss_legendre(HEAD_NODES), pop1, pop2 })
    }

    /// Heads `(Phi_1, Psi_1)` of the decoupled paths:
    /// `[exp(tA) x]_1 + int_0^t [exp((t-s)A) B]_1 u(s) ds`.
    fn heads(&self, t: f64) -> (f64, f64) {
        let first = |me: &MinEnergy| {
            let m = me.sys.dim();
            let free = me.sys.exp(t).row(0).transpose().dot(&me.x);
            if t <= 0.0 {
                return free;
            }
            let (c, h) = (0.5 * t, 0.5 * t);
            let mut forced = 0.0;
            for (z, w) in self.rule.0.iter().zip(&self.rule.1) {
                let s = c + h * z;
                let r = t - s;
                let mut g = (-me.sys.nu * r).exp();
                for k in 1..m {
                    g *= r / k as f64;
                }
                forced += w * g * me.u(s);
            }
            free + h * forced
        };
        let m = self.model;
        (first(&self.pop1) + self.eq[0], first(&self.pop2) + self.eq[m.head2()])
    }

    /// `(h1', h2')`. Column 1 drives population 2 and column 2 drives
    /// population 1, following the dispersion layout.
    pub fn h_dot(&self, t: f64) -> [f64; 2] {
        let m = self.model;
        let (phi1, psi1) = self.heads(t);
        let (f1, f2) = (m.f1().value(phi1), m.f2().value(psi1));
        let (f1s, f2s) = (m.f1().value(self.eq[0]), m.f2().value(self.eq[m.head2()]));
        let u1 = m.c1() * f2s + self.pop1.u(t);
        let u2 = m.c2() * f1s + self.pop2.u(t);
        let h2 = (u1 - m.c1() * f2) / (m.c1() / m.p2().sqrt() * f2.sqrt());
        let h1 = (u2 - m.c2() * f1) / (m.c2() / m.p1().sqrt() * f1.sqrt());
        [h1, h2]
    }
}

/// Steers `x` to `y` in time `t`; the endpoint is verified by RK4 with step `dt`.
pub fn steer(model: &Model, x: &[f64], y: &[f64], t: f64, dt: f64) -> Result<Steering, ControlError> {
    model.check_dim(x).map_err(|_| ControlError::Dimension { expected: model.dim(), got: x.len() })?;
    model.check_dim(y).map_err(|_| ControlError::Dimension { expected: model.dim(), got: y.len() })?;
    let dec = Decoupled::new(model, x, y, t)?;
    let achieved = integrate_controlled_fn(model, x, t, dt, |s| dec.h_dot(s));
    let steps = step_count(t, dt);
    let h = t / steps as f64;
    let values = (0..steps).map(|k| dec.h_dot((k as f64 + 0.5) * h)).collect();
    let control = Control::new(t, values);
    let residual = crate::sde::distance(&achieved, y);
    Ok(Steering { action: control.action(), control, achieved, residual })
}

/// Like [`steer`] but fails when the residual exceeds `tol`.
pub fn steer_checked(model: &Model, x: &[f64], y: &[f64], t: f64, dt: f64, tol: f64) -> Result<Steering, ControlError> {
    let s = steer(model, x, y, t, dt)?;
    if !(s.residual <= tol) {
        return Err(ControlError::Verification { residual: s.residual, tol });
    }
    Ok(s)
}

/// Rank of `sigma^1, sigma^2` and their iterated brackets with `b` up to `depth`.
pub fn hormander_rank_depth(model: &Model, x: &[f64], depth: usize) -> usize {
    let n = model.dim();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for col in 0..2 {
        for k in 0..=depth {
            cols.push(DVector::from_vec(bracket(model, x, col, k)));
        }
        let m = DMatrix::from_columns(&cols);
        if rank(&m) == n {
            return n;
        }
    }
    rank(&DMatrix::from_columns(&cols))
}

/// Full bracket depth `n`, stopping once the span is complete.
pub fn hormander_rank(model: &Model, x: &[f64]) -> usize {
    let n = model.dim();
    (0..=n).map(|d| hormander_rank_depth(model, x, d)).find(|&r| r == n).unwrap_or_else(|| hormander_rank_depth(model, x, n))
}

fn rank(m: &DMatrix<f64>) -> usize {
    let s = m.clone().svd(false, false).singular_values;
    let top = s.iter().cloned().fold(0.0, f64::max);
    s.iter().filter(|v| **v > 1e-8 * top.max(1e-300)).count()
}

const FD_STEP: f64 = 1e-3;

/// `V_k` with `V_0 = sigma^col` and `V_{k+1} = Db V_k - DV_k b`.
fn bracket(model: &Model, x: &[f64], col: usize, k: usize) -> Vec<f64> {
    let n = model.dim();
    let s = dispersion(model, x).expect("dimension checked");
    let sigma: Vec<f64> = (0..n).map(|i| s[(i, col)]).collect();
    if k == 0 {
        return sigma;
    }
    let mut b = vec![0.0; n];
    drift_into(model, x, &mut b);
    let db = drift_jacobian(model, x);
    let prev = if k == 1 { DVector::from_vec(sigma) } else { DVector::from_vec(bracket(model, x, col, k - 1)) };
    let dv = if k == 1 {
        dispersion_column_jacobian(model, x, col)
    } else {
        // central differences of the analytic lower-order field
        let mut j = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        for c in 0..n {
            xp[c] = x[c] + FD_STEP;
            let fp = bracket(model, &xp, col, k - 1);
            xp[c] = x[c] - FD_STEP;
            let fm = bracket(model, &xp, col, k - 1);
            xp[c] = x[c];
            for r in 0..n {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * FD_STEP);
            }
        }
        j
    };
    (db * prev - dv * DVector::from_vec(b)).as_slice().to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StlcCertificate {
    pub delta: f64,
    /// Columns are the variational responses to the unit-target controls.
    pub z: Vec<Vec<f64>>,
    pub min_singular_value: f64,
    pub radii: Vec<f64>,
    /// `max |u^1| + max |u^2|` over the constructed controls.
    pub control_bound: f64,
    pub within_bound: bool,
}

const STLC_STEPS: usize = 2000;

/// Variational certificate along the limit flow from `x0` over `[0, delta]`.
///
/// The controls reach `r_k e_k` for the linearization frozen at `x0`, with
/// `r_k = 0.1 delta^{d_k}` and `d_k` the cascade depth of coordinate `k`.
pub fn stlc_certificate(model: &Model, x0: &[f64], delta: f64, bound: f64) -> Result<StlcCertificate, ControlError> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(ControlError::Horizon(delta));
    }
    let n = model.dim();
    let a0 = drift_jacobian(model, x0);
    let b0 = dispersion(model, x0).expect("dimension checked");
    let radii: Vec<f64> = model.cascade_depths().iter().map(|&d| 0.1 * delta.powi(d as i32)).collect();
    // limit-flow path sampled at half steps for RK4 stage times
    let h = delta / STLC_STEPS as f64;
    let mut xs = Vec::with_capacity(2 * STLC_STEPS + 1);
    let mut rk = Rk4::new(n);
    let mut x = x0.to_vec();
    xs.push(x.clone());
    for _ in 0..2 * STLC_STEPS {
        rk.step(0.0, &mut x, 0.5 * h, |_, y, o| drift_into(model, y, o));
        xs.push(x.clone());
    }
    let at = |t: f64| -> (DMatrix<f64>, DMatrix<f64>) {
        let i = ((t / (0.5 * h)).round() as usize).min(xs.len() - 1);
        (drift_jacobian(model, &xs[i]), dispersion(model, &xs[i]).expect("dimension checked"))
    };
    let (z, control_bound) = variational_certificate(&a0, &b0, at, delta, &radii)?;
    let min_singular_value = z.clone().svd(false, false).singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if control_bound > bound {
        log::warn!("certificate controls reach {control_bound:.3e}, above the bound {bound:.3e}");
    }
    Ok(StlcCertificate {
        delta,
        z: (0..n).map(|c| z.column(c).iter().copied().collect()).collect(),
        min_singular_value,
        radii,
        control_bound,
        within_bound: control_bound <= bound,
    })
}

/// Integrates `Z' = A(t) Z + B(t) U(t)`, `Z(0) = 0`, where `U` steers the
/// frozen pair `(a0, b0)` from 0 to `diag(radii)` in time `delta`.
pub fn variational_certificate(
    a0: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    at: impl Fn(f64) -> (DMatrix<f64>, DMatrix<f64>),
    delta: f64,
    radii: &[f64],
) -> Result<(DMatrix<f64>, f64), ControlError> {
    let n = a0.nrows();
    let rule = Rule::new(GRAM_NODES, 0.0, delta);
    let mut g = DMatrix::zeros(n, n);
    for (s, w) in rule.nodes.iter().zip(&rule.weights) {
        let e = (a0 * *s).exp() * b0;
        g += *w * &e * e.transpose();
    }
    let g = 0.5 * (&g + g.transpose());
    let cond = condition(&g);
    if !(cond.is_finite()) {
        return Err(ControlError::IllConditioned(cond));
    }
    let target = DMatrix::from_diagonal(&DVector::from_column_slice(radii));
    let w = g.clone().lu().solve(&target).ok_or(ControlError::IllConditioned(cond))?;
    // U(t) = B0* exp((delta - t) A0*) W
    let controls = |t: f64| -> DMatrix<f64> { b0.transpose() * (a0.transpose() * (delta - t)).exp() * &w };
    let mut z = vec![0.0; n * n];
    let h = delta / STLC_STEPS as f64;
    let mut rk = Rk4::new(n * n);
    let mut bound: f64 = 0.0;
    for k in 0..STLC_STEPS {
        let t0 = k as f64 * h;
        let u0 = controls(t0);
        let sup = |u: &DMatrix<f64>| (0..u.ncols()).map(|c| u[(0, c)].abs() + u[(1, c)].abs()).fold(0.0, f64::max);
        bound = bound.max(sup(&u0));
        rk.step(t0, &mut z, h, |t, y, out| {
            let (a, b) = at(t);
            let zm = DMatrix::from_column_slice(n, n, y);
            let d = a * zm + b * controls(t);
            out.copy_from_slice(d.as_slice());
        });
    }
    bound = bound.max({
        let u = controls(delta);
        (0..u.ncols()).map(|c| u[(0, c)].abs() + u[(1, c)].abs()).fold(0.0, f64::max)
    });
    Ok((DMatrix::from_column_slice(n, n, &z), bound))
}

/// Log-log slope of `sigma_min(Z(delta)) / control_bound`, the smallest
/// reach per unit of control, against `delta`. The slowest cascade
/// direction predicts the largest cascade depth.
pub fn stlc_reach_scaling(model: &Model, x0: &[f64], deltas: &[f64], bound: f64) -> Result<ScalingFit, ControlError> {
    if deltas.len() < 3 {
        return Err(ControlError::Fit(deltas.len()));
    }
    let mut points = Vec::new();
    for &d in deltas {
        let c = stlc_certificate(model, x0, d, bound)?;
        points.push((d, c.min_singular_value / c.control_bound));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let depth = model.cascade_depths().into_iter().max().unwrap_or(1);
    Ok(ScalingFit { fit: linear_fit(&lx, &ly), points, predicted: depth as f64 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingFit {
    pub points: Vec<(f64, f64)>,
    pub fit: LinearFit,
    pub predicted: f64,
}

/// Log-log slope of the minimum energy for a displacement `eps e_l` off the
/// free flow, over the horizons `deltas`. `l` counts from 1.
pub fn dm_cost_scaling(model: &Model, population: Population, l: usize, deltas: &[f64], eps: f64) -> Result<ScalingFit, ControlError> {
    let sys = linear_subsystem(model, population);
    dm_cost_scaling_sys(&sys, l, deltas, eps)
}

pub fn dm_cost_scaling_sys(sys: &LinearSubsystem, l: usize, deltas: &[f64], eps: f64) -> Result<ScalingFit, ControlError> {
    let m = sys.dim();
    if l == 0 || l > m {
        return Err(ControlError::Coordinate { l, m });
    }
    if deltas.len() < 3 {
        return Err(ControlError::Fit(deltas.len()));
    }
    let mut points = Vec::new();
    for &d in deltas {
        let z = vec![0.0; m];
        let mut target = vec![0.0; m];
        target[l - 1] = eps;
        let me = min_energy_control(sys, d, &z, &target)?;
        points.push((d, me.cost));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    Ok(ScalingFit { fit: linear_fit(&lx, &ly), points, predicted: -((2 * (m - l) + 1) as f64) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit::find_equilibrium;
    use crate::model::{KernelParams, RateSpec};
    use crate::sde::distance;
    use proptest::prelude::*;

    #[test]
    fn scalar_subsystem() {
        let s = LinearSubsystem::new(1.0, 1, Population::One);
        assert_eq!(s.a[(0, 0)], -1.0);
        assert_eq!(s.b[0], 1.0);
        let q = gram_matrix(&s, 1.0).unwrap();
        assert!((q[(0, 0)] - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-12);
        assert!(gram_matrix(&s, 0.0).is_err());
    }

    #[test]
    fn structure_and_kalman_rank() {
        let s = LinearSubsystem::new(0.7, 3, Population::Two);
        assert_eq!(s.kalman_rank(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { -0.7 } else if j == i + 1 { 1.0 } else { 0.0 };
                assert_eq!(s.a[(i, j)], want);
            }
        }
        let e = s.exp(0.9);
        let reference = (&s.a * 0.9).exp();
        assert!((e - reference).norm() < 1e-13);
    }

    #[test]
    fn scalar_min_energy() {
        let s = LinearSubsystem::new(1.0, 1, Population::One);
        let me = min_energy_control(&s, 1.0, &[0.0], &[1.0]).unwrap();
        let q = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((me.cost - 1.0 / q).abs() < 1e-12);
        assert!((me.cost - 2.31304).abs() < 1e-5);
        let zero = min_energy_control(&s, 1.0, &[0.0], &[0.0]).unwrap();
        assert_eq!(zero.cost, 0.0);
        assert_eq!(zero.u(0.3), 0.0);
    }

    /// RK4 integration of `x' = Ax + Bu` and Simpson quadrature of `u^2`.
    fn verify(me: &MinEnergy, steps: usize) -> (DVector<f64>, f64) {
        let t = me.horizon;
        let h = t / steps as f64;
        let m = me.sys.dim();
        let mut x = me.x.as_slice().to_vec();
        let mut rk = Rk4::new(m);
        let mut energy = 0.0;
        for k in 0..steps {
            let t0 = k as f64 * h;
            rk.step(t0, &mut x, h, |s, y, o| {
                let u = me.u(s);
                for i in 0..m {
                    o[i] = -me.sys.nu * y[i] + if i + 1 < m { y[i + 1] } else { u };
                }
            });
            energy += h / 6.0 * (me.u(t0).powi(2) + 4.0 * me.u(t0 + 0.5 * h).powi(2) + me.u(t0 + h).powi(2));
        }
        (DVector::from_vec(x), energy)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn duality_and_endpoint(m in 1usize..5, nu in 0.2f64..3.0, t in 0.3f64..4.0,
                                seed in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let s = LinearSubsystem::new(nu, m, Population::One);
            let me = min_energy_control(&s, t, &seed[..m], &seed[4..4 + m]).unwrap();
            let (end, energy) = verify(&me, 4000);
            let y = DVector::from_column_slice(&seed[4..4 + m]);
            prop_assert!((end - &y).norm() < 1e-8);
            prop_assert!((energy - me.cost).abs() <= 1e-6 * me.cost.max(1e-12));
            prop_assert!((me.state(t) - y).norm() < 1e-9);
        }

        #[test]
        fn gram_is_spd(m in 1usize..6, nu in 0.1f64..3.0, t in 0.01f64..10.0) {
            let q = gram_matrix(&LinearSubsystem::new(nu, m, Population::One), t).unwrap();
            prop_assert!((&q - q.transpose()).norm() < 1e-12);
            let lo = q.symmetric_eigen().eigenvalues.min();
            prop_assert!(lo > 0.0);
        }
    }

    #[test]
    fn gram_matches_fine_simpson() {
        let s = LinearSubsystem::new(0.8, 3, Population::One);
        let t = 2.5;
        let q = gram_matrix(&s, t).unwrap();
        let steps = 20_000;
        let h = t / steps as f64;
        let mut r = DMatrix::zeros(3, 3);
        for i in 0..=steps {
            let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let g = s.exp_b(i as f64 * h);
            r += (w * h / 3.0) * &g * g.transpose();
        }
        assert!((q - r).norm() < 1e-12);
    }

    #[test]
    fn equilibrium_needs_no_control() {
        let m = Model::benchmark();
        let x = find_equilibrium(&m).unwrap().point;
        let s = steer(&m, &x, &x, 1.5, 1e-3).unwrap();
        assert!(s.action < 1e-20, "{}", s.action);
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn steering_residual_is_fourth_order() {
        let m = Model::benchmark();
        let x = [0.5, -0.2, 0.1, 0.3];
        let y = [-0.1, 0.4, -0.5, 0.0];
        let r1 = steer(&m, &x, &y, 2.0, 0.02).unwrap().residual;
        let r2 = steer(&m, &x, &y, 2.0, 0.01).unwrap().residual;
        let ratio = r1 / r2;
        assert!(ratio > 12.0 && ratio < 20.0, "{r1:e} {r2:e}");
        let fine = steer(&m, &x, &y, 2.0, 1e-4).unwrap();
        assert!(fine.residual < 1e-4);
        assert!(fine.control.sup_norm().is_finite());
    }

    #[test]
    fn zero_control_matches_limit_flow() {
        let m = Model::benchmark();
        let x = [0.1, 0.2, -0.3, 0.4];
        let p = integrate_controlled(&m, &x, &Control::zero(2.0, 20), 0.01).unwrap();
        let q = crate::limit::integrate_limit(&m, &x, 2.0, 0.01);
        assert_eq!(p.states.last(), q.states.last());
        assert!(integrate_controlled(&m, &x, &Control::zero(2.0, 20), 0.03).is_err());
    }

    #[test]
    fn controlled_rk4_order() {
        let m = Model::benchmark();
        let x = [0.1, 0.2, -0.3, 0.4];
        let c = Control::new(2.0, vec![[0.3, -0.2], [1.0, 0.5], [-0.4, 0.0], [0.2, 0.2]]);
        let end = |dt: f64| integrate_controlled(&m, &x, &c, dt).unwrap().states.last().unwrap().clone();
        let reference = end(0.05 / 4.0);
        let ratio = distance(&end(0.05), &reference) / distance(&end(0.025), &reference);
        assert!((ratio - 17.0).abs() < 3.0, "{ratio}");
    }

    #[test]
    fn action_values() {
        assert_eq!(Control::zero(1.0, 4).action(), 0.0);
        assert!((Control::new(1.0, vec![[1.0, 0.0]; 5]).action() - 0.5).abs() < 1e-15);
        assert!((Control::new(2.0, vec![[1.0, 1.0]; 8]).action() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn hormander_rank_benchmark() {
        let m = Model::benchmark();
        let x = find_equilibrium(&m).unwrap().point;
        assert_eq!(hormander_rank(&m, &x), 4);
        assert_eq!(hormander_rank_depth(&m, &x, 0), 2);
    }

    #[test]
    fn truncated_brackets_do_not_span() {
        let m = Model::new(
            KernelParams { c: 1.0, nu: 1.0, n: 2 },
            KernelParams { c: -1.0, nu: 0.5, n: 1 },
            RateSpec { fmin: 0.2, fmax: 1.0, slope: 3.0, center: 0.1 },
            RateSpec { fmin: 0.2, fmax: 1.0, slope: 3.0, center: -0.1 },
            0.3,
            0.7,
        )
        .unwrap();
        let x = [0.1, -0.2, 0.3, 0.05, 0.2];
        assert_eq!(hormander_rank_depth(&m, &x, 1), 4);
        assert_eq!(hormander_rank_depth(&m, &x, 2), 5);
        assert_eq!(hormander_rank(&m, &x), 5);
    }

    #[test]
    fn frozen_certificate_is_exact() {
        let sys = LinearSubsystem::new(1.0, 2, Population::One);
        let a = sys.a.clone();
        let mut b = DMatrix::zeros(2, 2);
        b[(1, 1)] = 1.0;
        b[(0, 0)] = 0.5;
        let radii = [0.01, 0.02];
        let (z, _) = variational_certificate(&a, &b, |_| (a.clone(), b.clone()), 0.3, &radii).unwrap();
        assert!((z - DMatrix::from_diagonal(&DVector::from_column_slice(&radii))).norm() < 1e-12);
    }

    #[test]
    fn scalar_cost_scaling() {
        let s = LinearSubsystem::new(1.0, 1, Population::One);
        let f = dm_cost_scaling_sys(&s, 1, &[0.4, 0.2, 0.1, 0.05, 0.025], 0.01).unwrap();
        assert!((f.fit.slope + 1.0).abs() < 0.2, "{}", f.fit.slope);
        assert!(dm_cost_scaling_sys(&s, 1, &[0.4, 0.2], 0.01).is_err());
        assert!(dm_cost_scaling_sys(&s, 2, &[0.4, 0.2, 0.1], 0.01).is_err());
    }
}
