//! The deterministic limit system `x' = b(x)`: integration, the equilibrium,
//! its characteristic roots, and detection of periodic orbits.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, State};
use crate::ode::{step_count, Rk4};
use crate::sde::{distance, drift_into, drift_jacobian, Path};

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("scalar equilibrium solve did not converge on bracket [{lo}, {hi}] (g = {glo}, {ghi})")]
    Equilibrium { lo: f64, hi: f64, glo: f64, ghi: f64 },
    #[error("polynomial root solver did not converge (max residual {0:e})")]
    Roots(f64),
}

/// Classical RK4 path of the limit system.
pub fn integrate_limit(model: &Model, x0: &[f64], horizon: f64, dt: f64) -> Path {
    let steps = step_count(horizon, dt);
    let h = if steps > 0 { horizon / steps as f64 } else { dt };
    let mut rk = Rk4::new(x0.len());
    let mut x = x0.to_vec();
    let mut path = Path { grid: Vec::with_capacity(steps + 1), states: Vec::with_capacity(steps + 1) };
    path.grid.push(0.0);
    path.states.push(x.clone());
    for k in 1..=steps {
        rk.step(0.0, &mut x, h, |_, y, out| drift_into(model, y, out));
        path.grid.push(k as f64 * h);
        path.states.push(x.clone());
    }
    path
}

/// Endpoint of the limit flow after time `t` with steps close to `dt`.
pub fn flow(model: &Model, x0: &[f64], t: f64, dt: f64) -> State {
    let steps = step_count(t, dt);
    let mut x = x0.to_vec();
    if steps == 0 {
        return x;
    }
    let h = t / steps as f64;
    let mut rk = Rk4::new(x.len());
    for _ in 0..steps {
        rk.step(0.0, &mut x, h, |_, y, out| drift_into(model, y, out));
    }
    x
}

/// Flow endpoint together with the monodromy (state transition) matrix.
pub fn flow_with_variation(model: &Model, x0: &[f64], t: f64, steps: usize) -> (State, DMatrix<f64>) {
    let n = x0.len();
    let mut z = vec![0.0; n + n * n];
    z[..n].copy_from_slice(x0);
    for i in 0..n {
        z[n + i * n + i] = 1.0;
    }
    let h = t / steps.max(1) as f64;
    let mut rk = Rk4::new(z.len());
    for _ in 0..steps.max(1) {
        rk.step(0.0, &mut z, h, |_, y, out| {
            let (x, phi) = y.split_at(n);
            drift_into(model, x, &mut out[..n]);
            let j = drift_jacobian(model, x);
            // column-major n x n product J * Phi
            for c in 0..n {
                for r in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += j[(r, k)] * phi[c * n + k];
                    }
                    out[n + c * n + r] = acc;
                }
            }
        });
    }
    let m = DMatrix::from_column_slice(n, n, &z[n..]);
    (z[..n].to_vec(), m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub point: State,
    pub rho: f64,
    pub roots: Vec<Complex64>,
    pub unstable_count: usize,
    pub assumption4: bool,
}

impl Equilibrium {
    /// Root with the largest real part and nonnegative imaginary part.
    pub fn leading_root(&self) -> Complex64 {
        self.roots
            .iter()
            .copied()
            .filter(|z| z.im >= 0.0)
            .max_by(|a, b| a.re.total_cmp(&b.re))
            .unwrap_or_default()
    }
}

/// Unique equilibrium via the scalar fixed-point reduction for `x_1`.
pub fn find_equilibrium(model: &Model) -> Result<Equilibrium, LimitError> {
    let (n1, n2) = (model.n1() as i32, model.n2() as i32);
    let a = model.c1() / model.nu1().powi(n1 + 1);
    let b = model.c2() / model.nu2().powi(n2 + 1);
    let g = |x: f64| x - a * model.f2().value(b * model.f1().value(x));
    let (f2lo, f2hi) = (model.f2().fmin, model.f2().fmax);
    let (mut lo, mut hi) = if a > 0.0 { (a * f2lo, a * f2hi) } else { (a * f2hi, a * f2lo) };
    let pad = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    lo -= pad;
    hi += pad;
    let (glo, ghi) = (g(lo), g(hi));
    if !(glo <= 0.0 && ghi >= 0.0) {
        return Err(LimitError::Equilibrium { lo, hi, glo, ghi });
    }
    let (bl, bh) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    // Newton polish; the derivative is 1 - a f2' b f1'
    for _ in 0..3 {
        let (f1, d1) = model.f1().eval(x);
        let d2 = model.f2().derivative(b * f1);
        let dg = 1.0 - a * d2 * b * d1;
        if dg.abs() > 1e-14 {
            let next = x - g(x) / dg;
            if next.is_finite() && (bl..=bh).contains(&next) {
                x = next;
            }
        }
    }
    let gx = g(x);
    if !(gx.abs() < 1e-12) {
        return Err(LimitError::Equilibrium { lo: bl, hi: bh, glo: gx, ghi: gx });
    }
    let mut point = vec![0.0; model.dim()];
    let (noisy1, head2, noisy2) = (model.noisy1(), model.head2(), model.noisy2());
    point[0] = x;
    let y = b * model.f1().value(x);
    point[head2] = y;
    point[noisy1] = model.c1() * model.f2().value(y) / model.nu1();
    for i in (0..noisy1).rev() {
        point[i] = point[i + 1] / model.nu1();
    }
    point[noisy2] = model.c2() * model.f1().value(x) / model.nu2();
    for i in (head2..noisy2).rev() {
        point[i] = point[i + 1] / model.nu2();
    }
    characteristic_roots(model, &point)
}

/// `rho = c1 c2 f1'(x_1) f2'(x_{n1+2})` and the roots of
/// `(nu1 + l)^(n1+1) (nu2 + l)^(n2+1) = rho`.
pub fn characteristic_roots(model: &Model, eq: &[f64]) -> Result<Equilibrium, LimitError> {
    let rho = model.c1() * model.c2() * model.f1().derivative(eq[0]) * model.f2().derivative(eq[model.head2()]);
    let roots = cascade_roots(model.nu1(), model.n1() + 1, model.nu2(), model.n2() + 1, rho)?;
    let unstable_count = roots.iter().filter(|z| z.re > 0.0).count();
    Ok(Equilibrium {
        point: eq.to_vec(),
        rho,
        roots,
        unstable_count,
        assumption4: rho < 0.0 && unstable_count >= 2,
    })
}

fn char_poly(nu1: f64, a: usize, nu2: f64, b: usize, rho: f64, z: Complex64) -> (Complex64, Complex64) {
    let (u, v) = (z + nu1, z + nu2);
    let (ua, vb) = (u.powu(a as u32), v.powu(b as u32));
    let p = ua * vb - rho;
    let dp = ua * vb * (a as f64 / u + b as f64 / v);
    (p, dp)
}

/// All `a + b` roots by Aberth iteration with a Newton polish, sorted by
/// decreasing real part then decreasing imaginary part.
pub fn cascade_roots(nu1: f64, a: usize, nu2: f64, b: usize, rho: f64) -> Result<Vec<Complex64>, LimitError> {
    let n = a + b;
    if rho == 0.0 {
        let mut z = vec![Complex64::new(-nu1, 0.0); a];
        z.extend(std::iter::repeat_n(Complex64::new(-nu2, 0.0), b));
        z.sort_by(|p, q| q.re.total_cmp(&p.re));
        return Ok(z);
    }
    let eval = |z: Complex64| char_poly(nu1, a, nu2, b, rho, z);
    let center = -(a as f64 * nu1 + b as f64 * nu2) / n as f64;
    let radius = rho.abs().powf(1.0 / n as f64) + (nu1 - nu2).abs() + 1.0;
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / n as f64 + 0.4;
            Complex64::new(center, 0.0) + Complex64::from_polar(radius, th)
        })
        .collect();
    for _ in 0..500 {
        let mut moved: f64 = 0.0;
        for i in 0..n {
            let (p, dp) = eval(z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let mut s = Complex64::new(0.0, 0.0);
            for j in 0..n {
                if j != i {
                    s += 1.0 / (z[i] - z[j]);
                }
            }
            let w = ratio / (1.0 - ratio * s);
            if !(w.re.is_finite() && w.im.is_finite()) {
                continue;
            }
            z[i] -= w;
            moved = moved.max(w.norm());
        }
        if moved < 1e-15 * (1.0 + radius) {
            break;
        }
    }
    let mut worst: f64 = 0.0;
    for r in z.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = eval(*r);
            if dp.norm() > 0.0 {
                let next = *r - p / dp;
                if eval(next).0.norm() <= p.norm() {
                    *r = next;
                }
            }
        }
        if r.im.abs() < 1e-12 * (1.0 + r.re.abs()) {
            r.im = 0.0;
        }
        let res = eval(*r).0.norm();
        worst = if res.is_nan() { f64::INFINITY } else { worst.max(res) };
    }
    if !(worst < 1e-8) {
        return Err(LimitError::Roots(worst));
    }
    // real parts equal up to rounding are ordered by imaginary part
    let key = |w: &Complex64| ((w.re * 1e9).round(), w.im);
    z.sort_by(|p, q| {
        let (kp, kq) = (key(p), key(q));
        kq.0.total_cmp(&kp.0).then(kq.1.total_cmp(&kp.1))
    });
    Ok(z)
}

/// A periodic orbit of the limit system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub anchor: State,
    pub period: f64,
    /// States at equally spaced times over one period, starting at the anchor.
    pub samples: Vec<State>,
    pub floquet: Vec<Complex64>,
    pub stable: bool,
}

impl Orbit {
    /// Euclidean distance from `x` to the closed polygon through the samples.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let m = self.samples.len();
        (0..m)
            .map(|k| segment_distance(x, &self.samples[k], &self.samples[(k + 1) % m]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Symmetric Hausdorff distance between the sample polygons.
    pub fn hausdorff(&self, other: &Orbit) -> f64 {
        let a = self.samples.iter().map(|x| other.distance(x)).fold(0.0, f64::max);
        let b = other.samples.iter().map(|x| self.distance(x)).fold(0.0, f64::max);
        a.max(b)
    }

    /// `count` points at equally spaced phases, computed by flowing the anchor.
    pub fn phase_points(&self, model: &Model, count: usize) -> Vec<State> {
        let dt = self.period / 4000.0;
        let mut out = Vec::with_capacity(count);
        let mut x = self.anchor.clone();
        let step = self.period / count as f64;
        for k in 0..count {
            if k > 0 {
                x = flow(model, &x, step, dt);
            }
            out.push(x.clone());
        }
        out
    }

    /// Multiplier closest to 1.
    pub fn trivial_multiplier(&self) -> Complex64 {
        self.floquet
            .iter()
            .copied()
            .min_by(|a, b| (a - 1.0).norm().total_cmp(&(b - 1.0).norm()))
            .unwrap_or_default()
    }
}

fn segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut dot = 0.0;
    for i in 0..x.len() {
        let d = b[i] - a[i];
        ab2 += d * d;
        dot += (x[i] - a[i]) * d;
    }
    let s = if ab2 > 0.0 { (dot / ab2).clamp(0.0, 1.0) } else { 0.0 };
    x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let p = a[i] + s * (b[i] - a[i]);
            (xi - p) * (xi - p)
        })
        .sum::<f64>()
        .sqrt()
}

/// Equivalence classes of the limit set: `x*` first, then the orbits found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSet {
    pub equilibrium: Equilibrium,
    pub orbits: Vec<Orbit>,
    pub warnings: Vec<String>,
}

impl LimitSet {
    /// Number of classes `L`.
    pub fn len(&self) -> usize {
        1 + self.orbits.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Representative points of class `i` (0 is `x*`).
    pub fn class_points(&self, model: &Model, i: usize, phases: usize) -> Vec<State> {
        if i == 0 {
            vec![self.equilibrium.point.clone()]
        } else {
            self.orbits[i - 1].phase_points(model, phases)
        }
    }

    /// Distance from `x` to class `i`.
    pub fn class_distance(&self, i: usize, x: &[f64]) -> f64 {
        if i == 0 {
            distance(x, &self.equilibrium.point)
        } else {
            self.orbits[i - 1].distance(x)
        }
    }

    /// Index of the first stable orbit class, if any.
    pub fn stable_class(&self) -> Option<usize> {
        self.orbits.iter().position(|o| o.stable).map(|k| k + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleOptions {
    /// Transient length in estimated periods.
    pub transient_periods: f64,
    /// RK4 steps per estimated period.
    pub steps_per_period: usize,
    /// Samples stored per orbit.
    pub samples: usize,
    /// Hausdorff distance below which two orbits are merged.
    pub dedup_tol: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            transient_periods: 50.0,
            steps_per_period: 2000,
            samples: 512,
            dedup_tol: 1e-3,
            newton_tol: 1e-11,
            max_newton: 30,
        }
    }
}

impl CycleOptions {
    pub fn refined(self) -> Self {
        Self { steps_per_period: self.steps_per_period * 2, samples: self.samples * 2, ..self }
    }
}

/// Right null vector of `J - lambda I` for the leading root.
fn leading_eigenvector(model: &Model, eq: &Equilibrium) -> Vec<Complex64> {
    let n = model.dim();
    let j = drift_jacobian(model, &eq.point);
    let lam = eq.leading_root();
    let m = DMatrix::from_fn(n, n, |r, c| {
        Complex64::new(j[(r, c)], 0.0) - if r == c { lam } else { Complex64::new(0.0, 0.0) }
    });
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    (0..n).map(|c| vt[(k, c)].conj()).collect()
}

/// Plane through `point` with unit normal `normal`.
#[derive(Debug, Clone)]
struct Section {
    point: State,
    normal: Vec<f64>,
}

impl Section {
    fn eval(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.point).zip(&self.normal).map(|((a, b), n)| (a - b) * n).sum()
    }
}

fn default_section(model: &Model, eq: &Equilibrium) -> Section {
    let v = leading_eigenvector(model, eq);
    let re: Vec<f64> = v.iter().map(|z| z.re).collect();
    let scale = 1e-3 / crate::sde::norm(&re).max(1e-300);
    let probe: Vec<f64> = eq.point.iter().zip(&re).map(|(p, r)| p + scale * r).collect();
    let mut normal = vec![0.0; model.dim()];
    drift_into(model, &probe, &mut normal);
    let len = crate::sde::norm(&normal);
    if !(len > 0.0) || !len.is_finite() {
        let mut e = vec![0.0; model.dim()];
        e[0] = 1.0;
        return Section { point: eq.point.clone(), normal: e };
    }
    normal.iter_mut().for_each(|v| *v /= len);
    Section { point: eq.point.clone(), normal }
}

/// Upward crossings of the section along a trajectory, located to RK4 accuracy.
fn crossings(model: &Model, sec: &Section, x0: &[f64], horizon: f64, dt: f64, max: usize) -> Vec<(f64, State)> {
    let mut out = Vec::new();
    let steps = step_count(horizon, dt);
    let mut rk = Rk4::new(x0.len());
    let mut x = x0.to_vec();
    let mut g = sec.eval(&x);
    let mut buf = vec![0.0; x0.len()];
    for k in 0..steps {
        let prev = x.clone();
        rk.step(0.0, &mut x, dt, |_, y, o| drift_into(model, y, o));
        let gn = sec.eval(&x);
        if g < 0.0 && gn >= 0.0 {
            // Newton on the sub-step length
            let mut s = dt * g / (g - gn);
            let mut y = prev.clone();
            for _ in 0..8 {
                y.copy_from_slice(&prev);
                rk.step(0.0, &mut y, s, |_, z, o| drift_into(model, z, o));
                drift_into(model, &y, &mut buf);
                let dg: f64 = buf.iter().zip(&sec.normal).map(|(a, b)| a * b).sum();
                if dg.abs() < 1e-300 {
                    break;
                }
                let ds = sec.eval(&y) / dg;
                s = (s - ds).clamp(0.0, dt);
                if ds.abs() < 1e-15 {
                    break;
                }
            }
            y.copy_from_slice(&prev);
            rk.step(0.0, &mut y, s, |_, z, o| drift_into(model, z, o));
            out.push((k as f64 * dt + s, y));
            if out.len() >= max {
                break;
            }
        }
        g = gn;
    }
    out
}

/// Newton shooting for a periodic orbit on the section.
fn shoot(model: &Model, sec: &Section, x0: &[f64], t0: f64, opts: &CycleOptions) -> Option<(State, f64, DMatrix<f64>)> {
    let n = x0.len();
    let (mut x, mut t) = (x0.to_vec(), t0);
    for _ in 0..opts.max_newton {
        let (xt, m) = flow_with_variation(model, &x, t, opts.steps_per_period);
        let mut bt = vec![0.0; n];
        drift_into(model, &xt, &mut bt);
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        let mut rhs = DVector::zeros(n + 1);
        for r in 0..n {
            for c in 0..n {
                jac[(r, c)] = m[(r, c)] - if r == c { 1.0 } else { 0.0 };
            }
            jac[(r, n)] = bt[r];
            rhs[r] = -(xt[r] - x[r]);
        }
        for c in 0..n {
            jac[(n, c)] = sec.normal[c];
        }
        rhs[n] = -sec.eval(&x);
        let res = rhs.norm();
        if res < opts.newton_tol {
            return Some((x, t, m));
        }
        let d = jac.lu().solve(&rhs)?;
        // damp steps that would change the period drastically
        let mut lam = 1.0;
        while lam * d[n].abs() > 0.25 * t {
            lam *= 0.5;
        }
        for i in 0..n {
            x[i] += lam * d[i];
        }
        t += lam * d[n];
        if !(t > 0.0) || x.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    let (xt, m) = flow_with_variation(model, &x, t, opts.steps_per_period);
    let res = distance(&xt, &x);
    (res < 1e-9).then_some((x, t, m))
}

/// Locates periodic orbits attracting the given trial points.
pub fn find_limit_cycles(model: &Model, trial_points: &[State], opts: &CycleOptions) -> Result<LimitSet, LimitError> {
    let eq = find_equilibrium(model)?;
    let mut warnings = Vec::new();
    if !eq.assumption4 {
        let w = format!(
            "instability criterion fails (rho = {:.6}, {} unstable roots); no orbit search",
            eq.rho, eq.unstable_count
        );
        log::warn!("{w}");
        warnings.push(w);
        return Ok(LimitSet { equilibrium: eq, orbits: Vec::new(), warnings });
    }
    let lead = eq.leading_root();
    let period_guess = 2.0 * std::f64::consts::PI / lead.im.abs().max(1e-6);
    let dt = period_guess / opts.steps_per_period as f64;
    let primary = default_section(model, &eq);
    let mut fallback_normal = vec![0.0; model.dim()];
    fallback_normal[0] = 1.0;
    let fallback = Section { point: eq.point.clone(), normal: fallback_normal };

    let found: Vec<Option<Orbit>> = trial_points
        .par_iter()
        .map(|x0| {
            let settled = flow(model, x0, opts.transient_periods * period_guess, dt);
            if distance(&settled, &eq.point) < 1e-8 {
                return None;
            }
            for sec in [&primary, &fallback] {
                let cs = crossings(model, sec, &settled, 20.0 * period_guess, dt, 3);
                if cs.len() < 3 {
                    continue;
                }
                let t_ret = cs[2].0 - cs[1].0;
                if let Some((anchor, period, mono)) = shoot(model, sec, &cs[1].1, t_ret, opts) {
                    return Some(build_orbit(model, anchor, period, &mono, opts));
                }
            }
            None
        })
        .collect();

    let mut orbits: Vec<Orbit> = Vec::new();
    for o in found.into_iter().flatten() {
        if !orbits.iter().any(|p| p.hausdorff(&o) < opts.dedup_tol) {
            orbits.push(o);
        }
    }
    orbits.sort_by(|a, b| {
        a.anchor
            .iter()
            .zip(&b.anchor)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    if orbits.is_empty() {
        let w = "no periodic orbit found from any trial point".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(LimitSet { equilibrium: eq, orbits, warnings })
}

fn build_orbit(model: &Model, anchor: State, period: f64, mono: &DMatrix<f64>, opts: &CycleOptions) -> Orbit {
    let floquet: Vec<Complex64> = mono.complex_eigenvalues().iter().copied().collect();
    let trivial = floquet
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let stable = floquet.iter().enumerate().all(|(i, z)| i == trivial || z.norm() < 1.0);
    let m = opts.samples.max(3);
    let per = (opts.steps_per_period / m).max(4);
    let h = period / (m * per) as f64;
    let mut rk = Rk4::new(anchor.len());
    let mut x = anchor.clone();
    let mut samples = Vec::with_capacity(m);
    for _ in 0..m {
        samples.push(x.clone());
        for _ in 0..per {
            rk.step(0.0, &mut x, h, |_, y, o| drift_into(model, y, o));
        }
    }
    Orbit { anchor, period, samples, floquet, stable }
}

/// Default trial battery: small kicks off `x*` along the unstable plane and
/// `count` deterministic pseudo-random points in a box around it.
pub fn default_trials(model: &Model, eq: &Equilibrium, count: usize, seed: u64) -> Vec<State> {
    use rand::Rng;
    let v = leading_eigenvector(model, eq);
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut out = vec![eq.point.iter().zip(&v).map(|(p, z)| p + 1e-2 * z.re / norm).collect()];
    let mut rng = crate::rng::stream(seed, crate::rng::streams::LIMIT, 0);
    let span = model.f1().fmax.max(model.f2().fmax);
    for _ in 0..count {
        out.push(eq.point.iter().map(|p| p + span * (2.0 * rng.random::<f64>() - 1.0)).collect());
    }
    out
}
