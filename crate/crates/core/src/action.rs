//! Freidlin-Wentzell action, numerical quasipotentials by direct
//! transcription, class cost matrices and `{i}`-graph weights.
//!
//! Every reported quasipotential is the action of an explicit
//! piecewise-constant control whose RK4 endpoint lies within the feasibility
//! tolerance of the target, so values are upper bounds on the infimum.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Control, Decoupled};
use crate::limit::{integrate_limit, LimitSet};
use crate::model::{Model, State};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::quad::gauss_legendre;
use crate::rng::{stream, streams};
use crate::sde::{controlled_field_into, dispersion_entries, distance};

#[derive(Debug, Error)]
pub enum ActionError {
    #[error("time horizon must be positive (got {0})")]
    Horizon(f64),
    #[error("no feasible control found for T = {0} (endpoint tolerance too tight for the options)")]
    Infeasible(f64),
    #[error("state has dimension {got}, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("class cost matrix needs at least 2 classes (got {0})")]
    Classes(usize),
    #[error("cost matrix must be square with a row per class")]
    Shape,
    #[error("exhaustive {{i}}-graph enumeration supports at most {max} classes (got {got})")]
    TooManyClasses { max: usize, got: usize },
}

/// `1/2 sum (|h1'|^2 + |h2'|^2) dt`.
pub fn action_of_control(control: &Control) -> f64 {
    control.action()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpOptions {
    /// Piecewise-constant control intervals `M`.
    pub intervals: usize,
    /// Starts per horizon: the steering construction plus perturbations of it.
    pub restarts: usize,
    /// Endpoint feasibility tolerance in state norm.
    pub tol: f64,
    pub penalty_start: f64,
    pub penalty_factor: f64,
    pub penalty_stages: usize,
    pub max_iter: usize,
    /// Largest RK4 step of the transcription.
    pub max_step: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub t_count: usize,
    /// Also try horizons at which the free flow from `x` passes near `y`.
    pub flow_aligned: bool,
    /// Orbit phases sampled per class in class costs.
    pub phases: usize,
    /// Relative size of the random perturbations of the steering start.
    pub perturbation: f64,
    /// Costs at or below this end the search early.
    pub negligible: f64,
    /// Reject paths entering the tubes around other classes.
    pub avoid_other_classes: bool,
    pub avoid_radius: f64,
    pub seed: u64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            intervals: 64,
            restarts: 8,
            tol: 1e-4,
            penalty_start: 10.0,
            penalty_factor: 10.0,
            penalty_stages: 5,
            max_iter: 200,
            max_step: 0.05,
            t_min: 0.25,
            t_max: 64.0,
            t_count: 12,
            flow_aligned: true,
            phases: 16,
            perturbation: 0.3,
            negligible: 1e-12,
            avoid_other_classes: false,
            avoid_radius: 0.05,
            seed: 0,
        }
    }
}

impl QpOptions {
    /// Doubles the control intervals, restarts and phases, and inserts a
    /// point between each pair of neighbouring horizons.
    pub fn refined(&self) -> Self {
        Self {
            intervals: self.intervals * 2,
            restarts: self.restarts * 2,
            t_count: (2 * self.t_count).saturating_sub(1).max(1),
            phases: self.phases * 2,
            max_iter: self.max_iter * 2,
            ..self.clone()
        }
    }

    /// Log-spaced horizons; refinement keeps every coarse point.
    pub fn horizons(&self) -> Vec<f64> {
        if self.t_count <= 1 {
            return vec![self.t_max];
        }
        let (a, b) = (self.t_min.ln(), self.t_max.ln());
        (0..self.t_count).map(|k| (a + (b - a) * k as f64 / (self.t_count - 1) as f64).exp()).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpResult {
    pub cost: f64,
    pub horizon: f64,
    pub control: Control,
    pub residual: f64,
    /// Cost of the feasible control obtained from the steering construction.
    pub steer_cost: Option<f64>,
    /// `(T, best cost)` for every horizon that produced a feasible control.
    pub by_horizon: Vec<(f64, f64)>,
}

impl QpResult {
    fn trivial() -> Self {
        Self { cost: 0.0, horizon: 0.0, control: Control::zero(0.0, 1), residual: 0.0, steer_cost: None, by_horizon: Vec::new() }
    }
}

/// Direct transcription of `phi' = b(phi) + sigma(phi) h'` with `h'`
/// piecewise constant on `intervals` pieces and `sub` RK4 steps per piece.
pub struct Transcription<'a> {
    model: &'a Model,
    x: State,
    y: State,
    horizon: f64,
    intervals: usize,
    sub: usize,
    h: f64,
}

impl<'a> Transcription<'a> {
    pub fn new(model: &'a Model, x: &[f64], y: &[f64], horizon: f64, intervals: usize, max_step: f64) -> Self {
        let piece = horizon / intervals as f64;
        let sub = (piece / max_step).ceil().max(1.0) as usize;
        Self { model, x: x.to_vec(), y: y.to_vec(), horizon, intervals, sub, h: piece / sub as f64 }
    }

    pub fn steps(&self) -> usize {
        self.intervals * self.sub
    }

    fn piece(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    pub fn action(&self, u: &[f64]) -> f64 {
        0.5 * self.piece() * u.iter().map(|v| v * v).sum::<f64>()
    }

    /// Endpoint; fills `store` with the state at the start of every step
    /// followed by the endpoint.
    pub fn forward(&self, u: &[f64], store: &mut Vec<f64>) -> State {
        let n = self.x.len();
        store.clear();
        let mut rk = crate::ode::Rk4::new(n);
        let mut x = self.x.clone();
        for k in 0..self.intervals {
            let uk = [u[2 * k], u[2 * k + 1]];
            for _ in 0..self.sub {
                store.extend_from_slice(&x);
                rk.step(0.0, &mut x, self.h, |_, y, o| controlled_field_into(self.model, y, uk, o));
            }
        }
        store.extend_from_slice(&x);
        x
    }

    pub fn endpoint(&self, u: &[f64]) -> State {
        self.forward(u, &mut Vec::new())
    }

    /// Gradient of `<lambda, phi(T)>` with respect to `u`, given the
    /// trajectory stored by [`forward`](Self::forward).
    pub fn adjoint(&self, u: &[f64], store: &[f64], lambda: &[f64], grad: &mut [f64]) {
        let n = self.x.len();
        let h = self.h;
        let mut lam = lambda.to_vec();
        let mut ys = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut k = vec![0.0; n];
        let mut bk = vec![0.0; n];
        let mut by = vec![0.0; n];
        let mut acc = vec![0.0; n];
        grad.iter_mut().for_each(|g| *g = 0.0);
        for step in (0..self.steps()).rev() {
            let piece = step / self.sub;
            let uk = [u[2 * piece], u[2 * piece + 1]];
            let x = &store[step * n..(step + 1) * n];
            ys[0].copy_from_slice(x);
            for (s, c) in [(1usize, 0.5 * h), (2, 0.5 * h), (3, h)] {
                controlled_field_into(self.model, &ys[s - 1], uk, &mut k);
                for i in 0..n {
                    ys[s][i] = x[i] + c * k[i];
                }
            }
            acc.copy_from_slice(&lam);
            let mut gu = [0.0; 2];
            // stage weights h/6, h/3, h/3, h/6 and feed-forward factors h/2, h/2, h
            let w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
            let feed = [0.5 * h, 0.5 * h, h];
            by.iter_mut().for_each(|v| *v = 0.0);
            for s in (0..4).rev() {
                for i in 0..n {
                    bk[i] = w[s] * lam[i] + if s < 3 { feed[s] * by[i] } else { 0.0 };
                }
                let gs = field_vjp(self.model, &ys[s], uk, &bk, &mut by);
                gu[0] += gs[0];
                gu[1] += gs[1];
                for i in 0..n {
                    acc[i] += by[i];
                }
            }
            grad[2 * piece] += gu[0];
            grad[2 * piece + 1] += gu[1];
            lam.copy_from_slice(&acc);
        }
    }

    /// `action + mu |phi(T) - y|^2` and its gradient.
    pub fn penalized(&self, u: &[f64], mu: f64, grad: &mut [f64], store: &mut Vec<f64>) -> f64 {
        let end = self.forward(u, store);
        let r: Vec<f64> = end.iter().zip(&self.y).map(|(a, b)| a - b).collect();
        if r.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let lambda: Vec<f64> = r.iter().map(|v| 2.0 * mu * v).collect();
        self.adjoint(u, store, &lambda, grad);
        let dt = self.piece();
        for (g, v) in grad.iter_mut().zip(u) {
            *g += dt * v;
        }
        self.action(u) + mu * r.iter().map(|v| v * v).sum::<f64>()
    }

    /// Gauss-Newton minimum-norm corrections of the endpoint.
    pub fn restore(&self, u: &mut [f64], tol: f64) -> f64 {
        let n = self.x.len();
        let mut store = Vec::new();
        let mut rows = vec![vec![0.0; u.len()]; n];
        let mut best = f64::INFINITY;
        for _ in 0..25 {
            let end = self.forward(u, &mut store);
            let r: Vec<f64> = self.y.iter().zip(&end).map(|(a, b)| a - b).collect();
            let res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !res.is_finite() {
                return f64::INFINITY;
            }
            best = res;
            if res <= tol {
                return res;
            }
            let mut e = vec![0.0; n];
            for i in 0..n {
                e.iter_mut().for_each(|v| *v = 0.0);
                e[i] = 1.0;
                self.adjoint(u, &store, &e, &mut rows[i]);
            }
            let jjt = nalgebra::DMatrix::from_fn(n, n, |a, b| rows[a].iter().zip(&rows[b]).map(|(p, q)| p * q).sum::<f64>());
            let Some(c) = jjt.lu().solve(&nalgebra::DVector::from_vec(r)) else {
                return best;
            };
            for (j, v) in u.iter_mut().enumerate() {
                *v += (0..n).map(|i| rows[i][j] * c[i]).sum::<f64>();
            }
        }
        let end = self.forward(u, &mut store);
        best.min(distance(&end, &self.y))
    }

    fn control(&self, u: &[f64]) -> Control {
        Control::new(self.horizon, u.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }
}

/// `(J_x^T v, J_u^T v)` for the controlled field at `(x, u)`.
fn field_vjp(model: &Model, x: &[f64], u: [f64; 2], v: &[f64], out: &mut [f64]) -> [f64; 2] {
    let n = x.len();
    let (a, h) = (model.noisy1(), model.head2());
    for i in 0..n {
        let nu = if i < h { model.nu1() } else { model.nu2() };
        out[i] = -nu * v[i];
        if i > 0 && i != h {
            out[i] += v[i - 1];
        }
    }
    let (f1, d1) = model.f1().eval(x[0]);
    let (f2, d2) = model.f2().eval(x[h]);
    let dg1 = model.c2() / model.p1().sqrt() * d1 / (2.0 * f1.sqrt());
    let dg2 = model.c1() / model.p2().sqrt() * d2 / (2.0 * f2.sqrt());
    out[h] += (model.c1() * d2 + u[1] * dg2) * v[a];
    out[0] += (model.c2() * d1 + u[0] * dg1) * v[n - 1];
    let (g1, g2) = dispersion_entries(model, x);
    [g1 * v[n - 1], g2 * v[a]]
}

/// Interval averages of the steering control (3-point Gauss per interval).
fn steer_start(model: &Model, x: &[f64], y: &[f64], horizon: f64, intervals: usize) -> Option<Vec<f64>> {
    let dec = Decoupled::new(model, x, y, horizon).ok()?;
    let (z, w) = gauss_legendre(3);
    let piece = horizon / intervals as f64;
    let mut u = Vec::with_capacity(2 * intervals);
    for k in 0..intervals {
        let mut avg = [0.0; 2];
        for (zi, wi) in z.iter().zip(&w) {
            let hd = dec.h_dot(piece * (k as f64 + 0.5 + 0.5 * zi));
            avg[0] += 0.5 * wi * hd[0];
            avg[1] += 0.5 * wi * hd[1];
        }
        u.extend_from_slice(&avg);
    }
    u.iter().all(|v| v.is_finite()).then_some(u)
}

struct Candidate {
    cost: f64,
    u: Vec<f64>,
    residual: f64,
}

fn enters(store: &[f64], n: usize, avoid: &[State], radius: f64) -> bool {
    !avoid.is_empty() && store.chunks_exact(n).any(|x| avoid.iter().any(|p| distance(x, p) < radius))
}

/// Penalty continuation from `u0`, then endpoint restoration.
fn optimize(tr: &Transcription, u0: Vec<f64>, opts: &QpOptions, avoid: &[State]) -> Option<Candidate> {
    let mut u = u0;
    let mut mu = opts.penalty_start;
    let mut store = Vec::new();
    let lb = LbfgsOptions { max_iter: opts.max_iter, ..Default::default() };
    for _ in 0..opts.penalty_stages {
        let m = lbfgs(|v, g| tr.penalized(v, mu, g, &mut store), &u, &lb);
        if m.f.is_finite() {
            u = m.x;
        }
        mu *= opts.penalty_factor;
    }
    feasible(tr, u, opts, avoid)
}

fn feasible(tr: &Transcription, mut u: Vec<f64>, opts: &QpOptions, avoid: &[State]) -> Option<Candidate> {
    let residual = tr.restore(&mut u, 0.5 * opts.tol);
    if !(residual < opts.tol) {
        return None;
    }
    let mut store = Vec::new();
    tr.forward(&u, &mut store);
    if enters(&store, tr.x.len(), avoid, opts.avoid_radius) {
        return None;
    }
    Some(Candidate { cost: tr.action(&u), u, residual })
}

/// Resamples a control onto `intervals` pieces by midpoint lookup.
fn resample(control: &Control, intervals: usize) -> Vec<f64> {
    let piece = control.horizon / intervals as f64;
    (0..intervals).flat_map(|k| control.at((k as f64 + 0.5) * piece)).collect()
}

fn check_states(model: &Model, x: &[f64], y: &[f64]) -> Result<(), ActionError> {
    for v in [x, y] {
        if v.len() != model.dim() {
            return Err(ActionError::Dimension { expected: model.dim(), got: v.len() });
        }
    }
    Ok(())
}

/// Numerical `V_T(x, y)`.
pub fn quasipotential_vt(model: &Model, x: &[f64], y: &[f64], horizon: f64, opts: &QpOptions) -> Result<QpResult, ActionError> {
    vt_inner(model, x, y, horizon, opts, &[], None, 0)
}

#[allow(clippy::too_many_arguments)]
fn vt_inner(
    model: &Model,
    x: &[f64],
    y: &[f64],
    horizon: f64,
    opts: &QpOptions,
    avoid: &[State],
    warm: Option<&Control>,
    salt: u64,
) -> Result<QpResult, ActionError> {
    check_states(model, x, y)?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(ActionError::Horizon(horizon));
    }
    let m = opts.intervals.max(1);
    let tr = Transcription::new(model, x, y, horizon, m, opts.max_step);
    let mut best: Option<Candidate> = None;
    let keep = |c: Option<Candidate>, best: &mut Option<Candidate>| {
        if let Some(c) = c {
            if best.as_ref().is_none_or(|b| c.cost < b.cost) {
                *best = Some(c);
            }
        }
    };
    let done = |best: &Option<Candidate>| best.as_ref().is_some_and(|b| b.cost <= opts.negligible);

    if let Some(w) = warm {
        let u = resample(w, m);
        keep(feasible(&tr, u.clone(), opts, avoid), &mut best);
        if !done(&best) {
            keep(optimize(&tr, u, opts, avoid), &mut best);
        }
    }
    let zero = vec![0.0; 2 * m];
    if !done(&best) {
        keep(feasible(&tr, zero.clone(), opts, avoid), &mut best);
    }
    if !done(&best) {
        keep(optimize(&tr, zero.clone(), opts, avoid), &mut best);
    }
    let steer = steer_start(model, x, y, horizon, m);
    let mut steer_cost = None;
    if let Some(s) = &steer {
        if !done(&best) {
            let c = optimize(&tr, s.clone(), opts, avoid);
            if let Some(f) = feasible(&tr, s.clone(), opts, avoid) {
                steer_cost = Some(f.cost);
                keep(Some(f), &mut best);
            }
            keep(c, &mut best);
        }
    }
    let base = steer.unwrap_or(zero);
    let scale = opts.perturbation * (base.iter().map(|v| v * v).sum::<f64>() / base.len() as f64).sqrt().max(0.1);
    let mut rng = stream(opts.seed, streams::OPTIM, salt);
    for _ in 1..opts.restarts {
        if done(&best) {
            break;
        }
        let u: Vec<f64> = base.iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        keep(optimize(&tr, u, opts, avoid), &mut best);
    }
    let b = best.ok_or(ActionError::Infeasible(horizon))?;
    Ok(QpResult {
        cost: b.cost,
        horizon,
        control: tr.control(&b.u),
        residual: b.residual,
        steer_cost,
        by_horizon: vec![(horizon, b.cost)],
    })
}

/// Horizons at which the free flow from `x` passes within `0.1` of `y`
/// (local minima of the distance).
fn flow_aligned_horizons(model: &Model, x: &[f64], y: &[f64], opts: &QpOptions) -> Vec<f64> {
    let p = integrate_limit(model, x, opts.t_max, opts.max_step.min(0.01));
    let d: Vec<f64> = p.states.iter().map(|s| distance(s, y)).collect();
    let mut out = Vec::new();
    for k in 1..d.len().saturating_sub(1) {
        if d[k] <= d[k - 1] && d[k] < d[k + 1] && d[k] < 0.1 && p.grid[k] >= 0.05 {
            out.push(p.grid[k]);
        }
    }
    out.truncate(4);
    out
}

/// Numerical `V(x, y) = inf_T V_T(x, y)` over the horizon grid.
pub fn quasipotential_v(model: &Model, x: &[f64], y: &[f64], opts: &QpOptions) -> Result<QpResult, ActionError> {
    v_inner(model, x, y, opts, &[], None)
}

/// Like [`quasipotential_v`], seeded with an earlier result, which is
/// re-evaluated as a candidate so the returned cost never exceeds it.
pub fn quasipotential_v_warm(model: &Model, x: &[f64], y: &[f64], opts: &QpOptions, warm: &QpResult) -> Result<QpResult, ActionError> {
    v_inner(model, x, y, opts, &[], Some(warm))
}

fn v_inner(model: &Model, x: &[f64], y: &[f64], opts: &QpOptions, avoid: &[State], warm: Option<&QpResult>) -> Result<QpResult, ActionError> {
    check_states(model, x, y)?;
    if distance(x, y) <= opts.tol {
        return Ok(QpResult::trivial());
    }
    let mut horizons = opts.horizons();
    if opts.flow_aligned {
        horizons.extend(flow_aligned_horizons(model, x, y, opts));
    }
    let mut best: Option<QpResult> = None;
    let mut by_horizon = Vec::new();
    let tried = |r: Result<QpResult, ActionError>, best: &mut Option<QpResult>, by: &mut Vec<(f64, f64)>| {
        if let Ok(r) = r {
            by.push((r.horizon, r.cost));
            if best.as_ref().is_none_or(|b| r.cost < b.cost) {
                *best = Some(r);
            }
        }
    };
    if let Some(w) = warm.filter(|w| w.horizon > 0.0) {
        tried(vt_inner(model, x, y, w.horizon, opts, avoid, Some(&w.control), 0), &mut best, &mut by_horizon);
    }
    for (k, &t) in horizons.iter().enumerate() {
        if best.as_ref().is_some_and(|b| b.cost <= opts.negligible) {
            break;
        }
        tried(vt_inner(model, x, y, t, opts, avoid, None, k as u64 + 1), &mut best, &mut by_horizon);
    }
    if let Some(w) = warm.filter(|w| best.as_ref().is_none_or(|b| w.cost < b.cost)) {
        best = Some(w.clone());
    }
    let mut b = best.ok_or(ActionError::Infeasible(opts.t_max))?;
    by_horizon.sort_by(|p, q| p.0.total_cmp(&q.0));
    b.by_horizon = by_horizon;
    Ok(b)
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Option<f64>>> = v.iter().map(|r| r.iter().map(|x| x.is_finite().then_some(*x)).collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let rows = Vec::<Vec<Option<f64>>>::deserialize(d)?;
        Ok(rows.into_iter().map(|r| r.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect()).collect())
    }
}

mod inf_as_null_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

/// Pairwise class costs `V(K_i, K_j)`; `null` in JSON stands for `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    #[serde(with = "inf_as_null")]
    pub entries: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl CostMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self, ActionError> {
        let l = entries.len();
        if entries.iter().any(|r| r.len() != l) {
            return Err(ActionError::Shape);
        }
        let labels = (0..l).map(|i| format!("K{}", i + 1)).collect();
        Ok(Self { entries, labels })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn validate(&self) -> Result<(), ActionError> {
        let l = self.entries.len();
        if self.entries.iter().any(|r| r.len() != l) || self.labels.len() != l {
            return Err(ActionError::Shape);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    #[serde(with = "inf_as_null_vec")]
    pub w: Vec<f64>,
    pub argmin_class: usize,
}

fn class_label(i: usize) -> String {
    if i == 0 {
        "x*".to_string()
    } else {
        format!("orbit{i}")
    }
}

fn avoid_points(model: &Model, ls: &LimitSet, skip: &[usize]) -> Vec<State> {
    (0..ls.len())
        .filter(|k| !skip.contains(k))
        .flat_map(|k| if k == 0 { vec![ls.equilibrium.point.clone()] } else { ls.class_points(model, k, 64) })
        .collect()
}

/// `min` over sampled source and target phases of `V`.
fn cell(model: &Model, sources: &[State], targets: &[State], opts: &QpOptions, avoid: &[State]) -> f64 {
    let mut best = f64::INFINITY;
    for s in sources {
        for t in targets {
            if best <= opts.negligible {
                return best;
            }
            match v_inner(model, s, t, opts, avoid, None) {
                Ok(r) => best = best.min(r.cost),
                Err(e) => log::warn!("class cost pair failed: {e}"),
            }
        }
    }
    best
}

/// Class cost matrix over the classes of `ls` (0 is `x*`).
pub fn class_costs(model: &Model, ls: &LimitSet, opts: &QpOptions) -> Result<CostMatrix, ActionError> {
    let l = ls.len();
    if l < 2 {
        return Err(ActionError::Classes(l));
    }
    let points: Vec<Vec<State>> = (0..l).map(|i| ls.class_points(model, i, opts.phases)).collect();
    let cells: Vec<(usize, usize)> = (0..l).flat_map(|i| (0..l).map(move |j| (i, j))).collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let avoid = if opts.avoid_other_classes { avoid_points(model, ls, &[i, j]) } else { Vec::new() };
            cell(model, &points[i], &points[j], opts, &avoid)
        })
        .collect();
    let entries = (0..l).map(|i| values[i * l..(i + 1) * l].to_vec()).collect();
    Ok(CostMatrix { entries, labels: (0..l).map(class_label).collect() })
}

/// `V(K_i, x)` for every class.
pub fn costs_to_point(model: &Model, ls: &LimitSet, x: &[f64], opts: &QpOptions) -> Vec<f64> {
    let target = [x.to_vec()];
    (0..ls.len())
        .into_par_iter()
        .map(|i| cell(model, &ls.class_points(model, i, opts.phases), &target, opts, &[]))
        .collect()
}

/// `{i}`-graph weights by minimum arborescences; for `L <= 6` they are
/// cross-checked against exhaustive enumeration.
pub fn fw_weights(costs: &CostMatrix) -> Result<Weights, ActionError> {
    costs.validate()?;
    let w = fw_weights_arborescence(&costs.entries);
    if costs.len() <= 6 {
        let e = fw_weights_enumerate(&costs.entries)?;
        for (a, b) in w.iter().zip(&e) {
            let scale = a.abs().max(b.abs()).max(1.0);
            if !(a == b || (a - b).abs() <= 1e-9 * scale) {
                log::warn!("arborescence weight {a} differs from enumeration {b}");
            }
        }
    }
    let argmin_class = w.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
    Ok(Weights { w, argmin_class })
}

pub const MAX_ENUMERATION: usize = 8;

/// Exhaustive minimum over `{i}`-graphs. Each non-root class picks one
/// outgoing arrow and following arrows must end in `i`.
pub fn fw_weights_enumerate(v: &[Vec<f64>]) -> Result<Vec<f64>, ActionError> {
    let l = v.len();
    if l > MAX_ENUMERATION {
        return Err(ActionError::TooManyClasses { max: MAX_ENUMERATION, got: l });
    }
    Ok((0..l).map(|root| enumerate_root(v, root)).collect())
}

fn enumerate_root(v: &[Vec<f64>], root: usize) -> f64 {
    fn go(v: &[Vec<f64>], root: usize, m: usize, next: &mut Vec<usize>, acc: f64, best: &mut f64) {
        let l = v.len();
        if m == l {
            *best = best.min(acc);
            return;
        }
        if m == root {
            return go(v, root, m + 1, next, acc, best);
        }
        for t in 0..l {
            if t == m || !v[m][t].is_finite() {
                continue;
            }
            next[m] = t;
            // chains stop at the root or at a class not yet assigned
            if !cycles_back(next, m) {
                go(v, root, m + 1, next, acc + v[m][t], best);
            }
            next[m] = usize::MAX;
        }
    }
    fn cycles_back(next: &[usize], m: usize) -> bool {
        let mut x = next[m];
        for _ in 0..next.len() {
            if x == usize::MAX {
                return false;
            }
            if x == m {
                return true;
            }
            x = next[x];
        }
        true
    }
    let mut next = vec![usize::MAX; v.len()];
    let mut best = f64::INFINITY;
    go(v, root, 0, &mut next, 0.0, &mut best);
    best
}

/// Chu-Liu/Edmonds minimum in-arborescence into each root.
pub fn fw_weights_arborescence(v: &[Vec<f64>]) -> Vec<f64> {
    let l = v.len();
    (0..l)
        .map(|root| {
            // parent -> child edges of the reversed graph: arrow m -> t becomes t -> m
            let edges: Vec<(usize, usize, f64)> = (0..l)
                .flat_map(|m| (0..l).map(move |t| (m, t)))
                .filter(|&(m, t)| m != t && v[m][t].is_finite())
                .map(|(m, t)| (t, m, v[m][t]))
                .collect();
            min_arborescence(l, edges, root).unwrap_or(f64::INFINITY)
        })
        .collect()
}

fn min_arborescence(mut n: usize, mut edges: Vec<(usize, usize, f64)>, mut root: usize) -> Option<f64> {
    let mut total = 0.0;
    loop {
        let mut in_w = vec![f64::INFINITY; n];
        let mut pre = vec![usize::MAX; n];
        for &(u, v, w) in &edges {
            if u != v && w < in_w[v] {
                in_w[v] = w;
                pre[v] = u;
            }
        }
        if (0..n).any(|v| v != root && !in_w[v].is_finite()) {
            return None;
        }
        in_w[root] = 0.0;
        let mut id = vec![usize::MAX; n];
        let mut vis = vec![usize::MAX; n];
        let mut count = 0;
        for v in 0..n {
            total += in_w[v];
            let mut x = v;
            while vis[x] != v && id[x] == usize::MAX && x != root {
                vis[x] = v;
                x = pre[x];
            }
            if x != root && id[x] == usize::MAX {
                let mut y = pre[x];
                while y != x {
                    id[y] = count;
                    y = pre[y];
                }
                id[x] = count;
                count += 1;
            }
        }
        if count == 0 {
            return Some(total);
        }
        for x in id.iter_mut() {
            if *x == usize::MAX {
                *x = count;
                count += 1;
            }
        }
        edges = edges
            .into_iter()
            .filter_map(|(u, v, w)| {
                let (a, b) = (id[u], id[v]);
                (a != b).then(|| (a, b, w - in_w[v]))
            })
            .collect();
        n = count;
        root = id[root];
    }
}

/// `W(x) = min_i (W(K_i) + V(K_i, x)) - min_j W(K_j)`.
pub fn w_of_x(weights: &Weights, costs_to_x: &[f64]) -> f64 {
    let wmin = weights.w.iter().cloned().fold(f64::INFINITY, f64::min);
    let best = weights.w.iter().zip(costs_to_x).map(|(w, v)| w + v).fold(f64::INFINITY, f64::min);
    (best - wmin).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit::{default_trials, find_equilibrium, find_limit_cycles, CycleOptions};

    #[test]
    fn action_examples() {
        assert_eq!(action_of_control(&Control::zero(3.0, 5)), 0.0);
        assert!((action_of_control(&Control::new(1.0, vec![[1.0, 0.0]; 4])) - 0.5).abs() < 1e-15);
        assert!((action_of_control(&Control::new(2.0, vec![[1.0, 1.0]; 4])) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn adjoint_gradient_matches_differences() {
        let m = Model::benchmark();
        let x = [0.1, 0.2, -0.3, 0.4];
        let y = [0.3, 0.0, -0.1, 0.2];
        let tr = Transcription::new(&m, &x, &y, 1.3, 6, 0.05);
        let u: Vec<f64> = (0..12).map(|k| (k as f64 * 0.7).sin()).collect();
        let mut g = vec![0.0; 12];
        let mut store = Vec::new();
        tr.penalized(&u, 3.0, &mut g, &mut store);
        for k in 0..12 {
            let e = 1e-6;
            let mut up = u.clone();
            up[k] += e;
            let mut um = u.clone();
            um[k] -= e;
            let mut tmp = vec![0.0; 12];
            let fd = (tr.penalized(&up, 3.0, &mut tmp, &mut store) - tr.penalized(&um, 3.0, &mut tmp, &mut store)) / (2.0 * e);
            assert!((fd - g[k]).abs() < 1e-6 * fd.abs().max(1.0), "{k}: {fd} {}", g[k]);
        }
    }

    #[test]
    fn restore_reaches_target() {
        let m = Model::benchmark();
        let x = [0.1, 0.2, -0.3, 0.4];
        let y = [0.3, 0.0, -0.1, 0.2];
        let tr = Transcription::new(&m, &x, &y, 2.0, 16, 0.05);
        let mut u = vec![0.0; 32];
        let r = tr.restore(&mut u, 1e-10);
        assert!(r < 1e-10, "{r}");
    }

    fn quick() -> QpOptions {
        QpOptions { restarts: 2, intervals: 24, t_count: 4, t_min: 0.5, t_max: 8.0, max_iter: 60, ..Default::default() }
    }

    #[test]
    fn equilibrium_to_itself_is_free() {
        let m = Model::benchmark();
        let x = find_equilibrium(&m).unwrap().point;
        assert_eq!(quasipotential_v(&m, &x, &x, &quick()).unwrap().cost, 0.0);
        let r = quasipotential_vt(&m, &x, &x, 1.0, &quick()).unwrap();
        assert!(r.cost <= 1e-8);
    }

    #[test]
    fn optimizer_improves_on_steering() {
        let m = Model::benchmark();
        let x = [0.3, 0.3, -0.3, -0.3];
        let y = [0.35, 0.3, -0.3, -0.3];
        let r = quasipotential_vt(&m, &x, &y, 2.0, &quick()).unwrap();
        assert!(r.residual < 1e-4);
        assert!(r.cost <= r.steer_cost.unwrap());
        assert!(r.cost > 0.0);
        let end = Transcription::new(&m, &x, &y, 2.0, 24, 0.05).endpoint(&resample(&r.control, 24));
        assert!(distance(&end, &y) < 1e-4);
    }

    #[test]
    fn orbit_transport_is_nearly_free() {
        let m = Model::benchmark();
        let eq = find_equilibrium(&m).unwrap();
        let ls = find_limit_cycles(&m, &default_trials(&m, &eq, 4, 1), &CycleOptions::default()).unwrap();
        let o = &ls.orbits[0];
        let p = o.phase_points(&m, 4);
        let r = quasipotential_vt(&m, &p[0], &p[1], o.period / 4.0, &quick()).unwrap();
        assert!(r.cost < 1e-3, "{}", r.cost);
        let v = quasipotential_v(&m, &p[2], &p[3], &quick()).unwrap();
        assert!(v.cost < 1e-3, "{}", v.cost);
    }

    #[test]
    fn two_class_weights() {
        let c = CostMatrix::new(vec![vec![0.0, 0.7], vec![0.2, 0.0]]).unwrap();
        let w = fw_weights(&c).unwrap();
        assert_eq!(w.w, vec![0.2, 0.7]);
        assert_eq!(w.argmin_class, 0);
    }

    #[test]
    fn enumeration_matches_arborescence() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for l in 3..=6 {
            for _ in 0..25 {
                let v: Vec<Vec<f64>> =
                    (0..l).map(|i| (0..l).map(|j| if i == j { 0.0 } else { rng.random_range(0.0..5.0) }).collect()).collect();
                let a = fw_weights_arborescence(&v);
                let e = fw_weights_enumerate(&v).unwrap();
                for (p, q) in a.iter().zip(&e) {
                    assert!((p - q).abs() < 1e-12, "{a:?} {e:?}");
                }
            }
        }
    }

    #[test]
    fn constant_shift() {
        let v = vec![vec![0.0, 1.0, 4.0], vec![2.0, 0.0, 0.5], vec![3.0, 1.5, 0.0]];
        let s: Vec<Vec<f64>> = v.iter().enumerate().map(|(i, r)| r.iter().enumerate().map(|(j, x)| if i == j { *x } else { x + 2.0 }).collect()).collect();
        let (a, b) = (fw_weights_enumerate(&v).unwrap(), fw_weights_enumerate(&s).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((q - p - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_arrows() {
        let inf = f64::INFINITY;
        let v = vec![vec![0.0, inf, inf], vec![1.0, 0.0, inf], vec![inf, 2.0, 0.0]];
        assert_eq!(fw_weights_arborescence(&v), vec![3.0, inf, inf]);
        assert_eq!(fw_weights_enumerate(&v).unwrap(), vec![3.0, inf, inf]);
        let c = CostMatrix::new(v).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("null"));
        assert_eq!(serde_json::from_str::<CostMatrix>(&json).unwrap(), c);
    }

    #[test]
    fn w_of_x_vanishes_on_minimizing_class() {
        let w = Weights { w: vec![0.4, 0.1], argmin_class: 1 };
        assert_eq!(w_of_x(&w, &[0.5, 0.0]), 0.0);
        assert!((w_of_x(&w, &[0.05, 0.6]) - 0.35).abs() < 1e-15);
        assert!(w_of_x(&w, &[1.0, 1.0]) >= 0.0);
    }

    #[test]
    fn refined_grid_keeps_coarse_points() {
        let o = QpOptions::default();
        let (a, b) = (o.horizons(), o.refined().horizons());
        for t in &a {
            assert!(b.iter().any(|s| (s - t).abs() < 1e-12 * t));
        }
    }
}
