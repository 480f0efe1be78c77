//! Monte Carlo studies: exit-time growth, occupation measures and weak error
//! between the event-level process and its diffusion approximation.
//!
//! Replicas run in parallel on independent streams and are reduced in
//! replica order, so results do not depend on the number of workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hawkes::{terminal_state, HawkesError};
use crate::limit::{flow, LimitSet, Orbit};
use crate::model::{Model, State};
use crate::rng::{stream, streams};
use crate::sde::{distance, norm, EulerMaruyama};
use crate::stats::{linear_fit, LinearFit, Moments};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("tube radii must satisfy 3 eps < eps_bar (got eps = {eps}, eps_bar = {eps_bar})")]
    Tube { eps: f64, eps_bar: f64 },
    #[error("population sizes must be strictly increasing and positive")]
    Sizes,
    #[error("need at least {need} {what} (got {got})")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("no periodic orbit in the limit set")]
    NoOrbit,
    #[error("cap {cap} reached in {hit} of {replicas} replicas at N = {n}; shrink the tube or the N range")]
    Capped { n: f64, hit: usize, replicas: usize, cap: f64 },
    #[error("population {n} does not split into integer sizes with fractions ({p1}, {p2})")]
    Split { n: u64, p1: f64, p2: f64 },
    #[error("region {0} intersects the orbit tube")]
    Region(usize),
    #[error("Monte Carlo error exceeds the signal at N = {n}: |diff| = {diff:e}, se = {se:e}; about {needed} replicas needed")]
    Noise { n: f64, diff: f64, se: f64, needed: u64 },
    #[error(transparent)]
    Hawkes(#[from] HawkesError),
    #[error("invalid option: {0}")]
    Invalid(String),
}

/// One estimate with its Monte Carlo error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Population size `N` (or another swept parameter).
    pub param: f64,
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub replicas: u64,
    /// Replicas stopped by a cap, or cells with zero visits.
    pub censored: u64,
}

/// One row per replica and cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRow {
    pub param: f64,
    pub label: String,
    pub replica: u64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedFit {
    pub label: String,
    pub fit: LinearFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub study: String,
    pub inputs: serde_json::Value,
    pub seed: u64,
    pub records: Vec<Record>,
    pub fits: Vec<NamedFit>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<ReplicaRow>,
}

impl StudyResult {
    pub fn fit(&self, label: &str) -> Option<&LinearFit> {
        self.fits.iter().find(|f| f.label == label).map(|f| &f.fit)
    }

    pub fn records_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.label == label)
    }

    /// Tidy CSV: `study,param,label,replica,value`.
    pub fn write_rows<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["study", "param", "label", "replica", "value"])?;
        for r in &self.rows {
            out.write_record([self.study.clone(), r.param.to_string(), r.label.clone(), r.replica.to_string(), format!("{:e}", r.value)])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_sizes(ns: &[f64], need: usize) -> Result<(), ExperimentError> {
    if ns.len() < need {
        return Err(ExperimentError::TooFew { what: "population sizes", need, got: ns.len() });
    }
    if ns.iter().any(|n| !(*n > 0.0)) || ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::Sizes);
    }
    Ok(())
}

fn stable_orbit(ls: &LimitSet) -> Result<&Orbit, ExperimentError> {
    ls.stable_class().or(if ls.orbits.is_empty() { None } else { Some(1) }).map(|k| &ls.orbits[k - 1]).ok_or(ExperimentError::NoOrbit)
}

/// Point at distance `eps` from the anchor, orthogonal to the flow there and
/// pointing towards `x*`.
pub fn tube_start(model: &Model, ls: &LimitSet, orbit: &Orbit, eps: f64) -> State {
    let a = &orbit.anchor;
    let tangent = crate::sde::drift(model, a).expect("orbit states have the model dimension");
    let tn = norm(&tangent).max(1e-300);
    let mut v: Vec<f64> = ls.equilibrium.point.iter().zip(a).map(|(p, q)| p - q).collect();
    let proj = v.iter().zip(&tangent).map(|(p, t)| p * t).sum::<f64>() / (tn * tn);
    v.iter_mut().zip(&tangent).for_each(|(p, t)| *p -= proj * t);
    let vn = norm(&v);
    if vn == 0.0 {
        v = vec![0.0; a.len()];
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|p| *p /= vn);
    }
    a.iter().zip(&v).map(|(p, q)| p + eps * q).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitOptions {
    pub ns: Vec<f64>,
    pub eps: f64,
    pub eps_bar: f64,
    /// Simulation time cap per replica.
    pub cap: f64,
    pub replicas: u64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for ExitOptions {
    fn default() -> Self {
        Self { ns: vec![50.0, 100.0, 200.0, 400.0], eps: 0.02, eps_bar: 0.1, cap: 5000.0, replicas: 200, dt: 0.01, seed: 1 }
    }
}

/// First exit time from the `eps_bar` tube around the stable orbit, started
/// on the boundary of the `eps` tube; `log E sigma_0` is fitted against `N`.
pub fn exit_time_study(model: &Model, ls: &LimitSet, opts: &ExitOptions) -> Result<StudyResult, ExperimentError> {
    if !(3.0 * opts.eps < opts.eps_bar) || !(opts.eps > 0.0) {
        return Err(ExperimentError::Tube { eps: opts.eps, eps_bar: opts.eps_bar });
    }
    check_sizes(&opts.ns, 3)?;
    if opts.replicas < 2 || !(opts.dt > 0.0) || !(opts.cap > 0.0) {
        return Err(ExperimentError::Invalid("need replicas >= 2, dt > 0 and cap > 0".into()));
    }
    let orbit = stable_orbit(ls)?;
    let start = tube_start(model, ls, orbit, opts.eps);
    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (k, &n) in opts.ns.iter().enumerate() {
        let times: Vec<(f64, bool)> = (0..opts.replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(opts.seed, streams::EXIT, ((k as u64) << 32) | r);
                let mut em = EulerMaruyama::new(model, n, opts.dt, 1.0);
                let mut y = start.clone();
                let mut steps = 0u64;
                let max_steps = (opts.cap / opts.dt).ceil() as u64;
                while steps < max_steps {
                    em.step(&mut y, &mut rng);
                    steps += 1;
                    if orbit.distance(&y) > opts.eps_bar {
                        return (steps as f64 * opts.dt, false);
                    }
                }
                (opts.cap, true)
            })
            .collect();
        let m = Moments::from_slice(&times.iter().map(|t| t.0).collect::<Vec<_>>());
        let hit = times.iter().filter(|t| t.1).count();
        if hit > 0 {
            warnings.push(format!("N = {n}: {hit} of {} replicas capped at {}", opts.replicas, opts.cap));
        }
        if k + 1 == opts.ns.len() && 2 * hit > opts.replicas as usize {
            return Err(ExperimentError::Capped { n, hit, replicas: opts.replicas as usize, cap: opts.cap });
        }
        rows.extend(times.iter().enumerate().map(|(r, t)| ReplicaRow { param: n, label: "sigma0".into(), replica: r as u64, value: t.0 }));
        records.push(Record {
            param: n,
            label: "sigma0".into(),
            estimate: m.mean,
            std_error: m.std_error(),
            replicas: opts.replicas,
            censored: hit as u64,
        });
    }
    let x: Vec<f64> = records.iter().map(|r| r.param).collect();
    let y: Vec<f64> = records.iter().map(|r| r.estimate.ln()).collect();
    Ok(StudyResult {
        study: "exit-times".into(),
        inputs: serde_json::to_value(opts).unwrap_or_default(),
        seed: opts.seed,
        records,
        fits: vec![NamedFit { label: "log_mean_sigma0_vs_N".into(), fit: linear_fit(&x, &y) }],
        warnings,
        rows,
    })
}

/// Ball region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: State,
    pub radius: f64,
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        distance(x, &self.center) < self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationOptions {
    pub ns: Vec<f64>,
    pub regions: Vec<Region>,
    /// Radius of the tube `B_eps(K)` around the stable orbit.
    pub eps: f64,
    pub horizon: f64,
    /// Burn-in in orbit periods.
    pub burn_in_periods: f64,
    /// Independent chains per `N`.
    pub replicas: u64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for OccupationOptions {
    fn default() -> Self {
        Self {
            ns: vec![50.0, 100.0, 200.0],
            regions: Vec::new(),
            eps: 0.02,
            horizon: 1000.0,
            burn_in_periods: 20.0,
            replicas: 4,
            dt: 0.01,
            seed: 1,
        }
    }
}

/// Long-run occupation fractions of `B_eps(K)` and of each region, and the
/// slope of `log mu(D)` against `N` per region.
pub fn occupation_study(model: &Model, ls: &LimitSet, opts: &OccupationOptions) -> Result<StudyResult, ExperimentError> {
    check_sizes(&opts.ns, 1)?;
    if opts.replicas < 2 || !(opts.dt > 0.0) || !(opts.horizon > 0.0) {
        return Err(ExperimentError::Invalid("need replicas >= 2, dt > 0 and horizon > 0".into()));
    }
    let orbit = stable_orbit(ls)?;
    for (i, d) in opts.regions.iter().enumerate() {
        if orbit.distance(&d.center) <= d.radius + opts.eps {
            return Err(ExperimentError::Region(i));
        }
    }
    let burn = (opts.burn_in_periods * orbit.period / opts.dt).ceil() as u64;
    let steps = (opts.horizon / opts.dt).ceil() as u64;
    let cells = 1 + opts.regions.len();
    let labels: Vec<String> = std::iter::once("tube".to_string()).chain((0..opts.regions.len()).map(|i| format!("D{}", i + 1))).collect();
    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (k, &n) in opts.ns.iter().enumerate() {
        let fractions: Vec<Vec<f64>> = (0..opts.replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(opts.seed, streams::OCCUPATION, ((k as u64) << 32) | r);
                let mut em = EulerMaruyama::new(model, n, opts.dt, 1.0);
                let mut y = orbit.anchor.clone();
                for _ in 0..burn {
                    em.step(&mut y, &mut rng);
                }
                let mut counts = vec![0u64; cells];
                for _ in 0..steps {
                    em.step(&mut y, &mut rng);
                    if orbit.distance(&y) < opts.eps {
                        counts[0] += 1;
                    }
                    for (c, d) in counts[1..].iter_mut().zip(&opts.regions) {
                        if d.contains(&y) {
                            *c += 1;
                        }
                    }
                }
                counts.iter().map(|&c| c as f64 / steps as f64).collect()
            })
            .collect();
        for (c, label) in labels.iter().enumerate() {
            let vals: Vec<f64> = fractions.iter().map(|f| f[c]).collect();
            let m = Moments::from_slice(&vals);
            let censored = (m.mean == 0.0) as u64;
            if censored == 1 {
                warnings.push(format!(
                    "N = {n}: no visits to {label}; occupation below {:.1e}",
                    1.0 / (steps as f64 * opts.replicas as f64)
                ));
            }
            rows.extend(vals.iter().enumerate().map(|(r, v)| ReplicaRow { param: n, label: label.clone(), replica: r as u64, value: *v }));
            records.push(Record { param: n, label: label.clone(), estimate: m.mean, std_error: m.std_error(), replicas: opts.replicas, censored });
        }
    }
    let mut fits = Vec::new();
    for label in labels.iter().skip(1) {
        let pts: Vec<(f64, f64)> = records.iter().filter(|r| &r.label == label && r.estimate > 0.0).map(|r| (r.param, r.estimate.ln())).collect();
        if pts.len() >= 3 {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            fits.push(NamedFit { label: format!("log_mu_{label}_vs_N"), fit: linear_fit(&x, &y) });
        } else {
            warnings.push(format!("{label}: fewer than 3 sizes with visits, no fit"));
        }
    }
    Ok(StudyResult {
        study: "occupation".into(),
        inputs: serde_json::to_value(opts).unwrap_or_default(),
        seed: opts.seed,
        records,
        fits,
        warnings,
        rows,
    })
}

/// Test statistics for the weak-error study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Statistic {
    Constant(f64),
    /// `tanh` of coordinate `index` (0-based), a bounded smoothing.
    SmoothCoordinate { index: usize },
    /// `(x_index - center)^3`.
    CenteredCubic { index: usize, center: f64 },
}

impl Statistic {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Statistic::Constant(c) => *c,
            Statistic::SmoothCoordinate { index } => x[*index].tanh(),
            Statistic::CenteredCubic { index, center } => (x[*index] - center).powi(3),
        }
    }

    fn index(&self) -> Option<usize> {
        match self {
            Statistic::Constant(_) => None,
            Statistic::SmoothCoordinate { index } | Statistic::CenteredCubic { index, .. } => Some(*index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakOptions {
    pub ns: Vec<u64>,
    pub x0: State,
    pub t: f64,
    /// `None` centres a cubic on the first coordinate of the limit flow at `t`.
    pub statistic: Option<Statistic>,
    pub replicas: u64,
    pub dt: f64,
    /// Two-level Richardson extrapolation of the Euler-Maruyama bias.
    pub richardson: bool,
    pub seed: u64,
}

impl Default for WeakOptions {
    fn default() -> Self {
        Self {
            ns: vec![10, 20, 40, 80],
            x0: Vec::new(),
            t: 1.0,
            statistic: None,
            replicas: 100_000,
            dt: 0.01,
            richardson: true,
            seed: 1,
        }
    }
}

/// `E phi(Y_t)` estimator for one replica: Euler-Maruyama at `dt`, or the
/// extrapolation `2 Y_{dt/2} - Y_dt` on a shared Brownian path.
fn sde_sample(model: &Model, n: f64, x0: &[f64], t: f64, dt: f64, richardson: bool, phi: &Statistic, rng: &mut crate::rng::StreamRng) -> f64 {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let steps = crate::ode::step_count(t, dt);
    let h = t / steps as f64;
    if !richardson {
        let mut em = EulerMaruyama::new(model, n, h, 1.0);
        let mut y = x0.to_vec();
        for _ in 0..steps {
            em.step(&mut y, rng);
        }
        return phi.eval(&y);
    }
    let mut coarse = EulerMaruyama::new(model, n, h, 1.0);
    let mut fine = EulerMaruyama::new(model, n, 0.5 * h, 1.0);
    let (mut yc, mut yf) = (x0.to_vec(), x0.to_vec());
    for _ in 0..steps {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        fine.step_with(&mut yf, z[0], z[1]);
        fine.step_with(&mut yf, z[2], z[3]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        coarse.step_with(&mut yc, s * (z[0] + z[2]), s * (z[1] + z[3]));
    }
    2.0 * phi.eval(&yf) - phi.eval(&yc)
}

/// `|E phi(X^N_t) - E phi(Y^N_t)|` per `N` and its log-log slope.
pub fn weak_error_study(model: &Model, opts: &WeakOptions) -> Result<StudyResult, ExperimentError> {
    let nsf: Vec<f64> = opts.ns.iter().map(|&n| n as f64).collect();
    check_sizes(&nsf, 1)?;
    model.check_dim(&opts.x0).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    if opts.replicas < 2 || !(opts.dt > 0.0) || !(opts.t > 0.0) {
        return Err(ExperimentError::Invalid("need replicas >= 2, dt > 0 and t > 0".into()));
    }
    let phi = match &opts.statistic {
        Some(s) => s.clone(),
        None => Statistic::CenteredCubic { index: 0, center: flow(model, &opts.x0, opts.t, opts.dt.min(1e-3))[0] },
    };
    if phi.index().is_some_and(|i| i >= model.dim()) {
        return Err(ExperimentError::Invalid("statistic index outside the state".into()));
    }
    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (k, &n) in opts.ns.iter().enumerate() {
        let n1 = model.p1() * n as f64;
        let n2 = model.p2() * n as f64;
        if (n1 - n1.round()).abs() > 1e-9 || (n2 - n2.round()).abs() > 1e-9 || n1.round() < 1.0 || n2.round() < 1.0 {
            return Err(ExperimentError::Split { n, p1: model.p1(), p2: model.p2() });
        }
        let (n1, n2) = (n1.round() as u64, n2.round() as u64);
        let pairs: Vec<Result<(f64, f64), HawkesError>> = (0..opts.replicas)
            .into_par_iter()
            .map(|r| {
                let id = ((k as u64) << 40) | r;
                let mut rh = stream(opts.seed, streams::HAWKES, id);
                let x = terminal_state(model, n1, n2, &opts.x0, opts.t, &mut rh)?;
                let mut rs = stream(opts.seed, streams::WEAK, id);
                let y = sde_sample(model, n as f64, &opts.x0, opts.t, opts.dt, opts.richardson, &phi, &mut rs);
                Ok((phi.eval(&x), y))
            })
            .collect();
        let pairs = pairs.into_iter().collect::<Result<Vec<_>, _>>()?;
        let mx = Moments::from_slice(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let my = Moments::from_slice(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let diff = mx.mean - my.mean;
        let se = (mx.variance() / mx.count as f64 + my.variance() / my.count as f64).sqrt();
        let nf = n as f64;
        rows.extend(pairs.iter().enumerate().flat_map(|(r, p)| {
            [
                ReplicaRow { param: nf, label: "hawkes".into(), replica: r as u64, value: p.0 },
                ReplicaRow { param: nf, label: "sde".into(), replica: r as u64, value: p.1 },
            ]
        }));
        records.push(Record { param: nf, label: "hawkes".into(), estimate: mx.mean, std_error: mx.std_error(), replicas: opts.replicas, censored: 0 });
        records.push(Record { param: nf, label: "sde".into(), estimate: my.mean, std_error: my.std_error(), replicas: opts.replicas, censored: 0 });
        records.push(Record { param: nf, label: "error".into(), estimate: diff.abs(), std_error: se, replicas: opts.replicas, censored: 0 });
        if se > 0.0 && diff.abs() < 2.0 * se {
            // replicas needed for |diff| = 3 se
            let needed = if diff == 0.0 { u64::MAX } else { (opts.replicas as f64 * (3.0 * se / diff.abs()).powi(2)).ceil() as u64 };
            warnings.push(ExperimentError::Noise { n: nf, diff: diff.abs(), se, needed }.to_string());
        }
    }
    let pts: Vec<(f64, f64)> = records.iter().filter(|r| r.label == "error" && r.estimate > 0.0).map(|r| (r.param.ln(), r.estimate.ln())).collect();
    let mut fits = Vec::new();
    if pts.len() >= 3 {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        fits.push(NamedFit { label: "log_error_vs_log_N".into(), fit: linear_fit(&x, &y) });
    }
    let mut inputs = serde_json::to_value(opts).unwrap_or_default();
    inputs["resolved_statistic"] = serde_json::to_value(&phi).unwrap_or_default();
    Ok(StudyResult { study: "weak-error".into(), inputs, seed: opts.seed, records, fits, warnings, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit::{default_trials, find_equilibrium, find_limit_cycles, CycleOptions};

    fn bench() -> (Model, LimitSet) {
        let m = Model::benchmark();
        let eq = find_equilibrium(&m).unwrap();
        let ls = find_limit_cycles(&m, &default_trials(&m, &eq, 4, 1), &CycleOptions::default()).unwrap();
        (m, ls)
    }

    #[test]
    fn tube_condition() {
        let (m, ls) = bench();
        let o = ExitOptions { eps: 0.04, eps_bar: 0.1, ..Default::default() };
        assert!(matches!(exit_time_study(&m, &ls, &o), Err(ExperimentError::Tube { .. })));
        let o = ExitOptions { ns: vec![100.0, 50.0, 200.0], ..Default::default() };
        assert!(matches!(exit_time_study(&m, &ls, &o), Err(ExperimentError::Sizes)));
    }

    #[test]
    fn start_point_on_inner_tube() {
        let (m, ls) = bench();
        let o = &ls.orbits[0];
        let s = tube_start(&m, &ls, o, 0.02);
        assert!((distance(&s, &o.anchor) - 0.02).abs() < 1e-12);
        assert!((o.distance(&s) - 0.02).abs() < 2e-3);
    }

    #[test]
    fn exit_study_is_reproducible() {
        let (m, ls) = bench();
        let o = ExitOptions { ns: vec![20.0, 30.0, 40.0], replicas: 8, ..Default::default() };
        let a = exit_time_study(&m, &ls, &o).unwrap();
        let b = exit_time_study(&m, &ls, &o).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.rows.len(), 24);
    }

    #[test]
    fn capped_largest_size_is_an_error() {
        let (m, ls) = bench();
        let o = ExitOptions { ns: vec![2000.0, 3000.0, 4000.0], replicas: 4, cap: 1.0, ..Default::default() };
        assert!(matches!(exit_time_study(&m, &ls, &o), Err(ExperimentError::Capped { .. })));
    }

    #[test]
    fn constant_statistic_has_no_error() {
        let m = Model::benchmark();
        let o = WeakOptions {
            ns: vec![10, 20, 40],
            x0: vec![0.3, 0.3, -0.3, -0.3],
            statistic: Some(Statistic::Constant(2.0)),
            replicas: 50,
            ..Default::default()
        };
        let r = weak_error_study(&m, &o).unwrap();
        for rec in r.records_for("error") {
            assert_eq!(rec.estimate, 0.0);
        }
        let o = WeakOptions { ns: vec![15], ..o };
        assert!(matches!(weak_error_study(&m, &o), Err(ExperimentError::Split { .. })));
    }

    #[test]
    fn regions_must_avoid_the_tube() {
        let (m, ls) = bench();
        let on_orbit = Region { center: ls.orbits[0].anchor.clone(), radius: 0.05 };
        let o = OccupationOptions { regions: vec![on_orbit], ..Default::default() };
        assert!(matches!(occupation_study(&m, &ls, &o), Err(ExperimentError::Region(0))));
    }

    #[test]
    fn richardson_removes_first_order_bias_without_noise() {
        // huge N: the noise is negligible and the scheme reduces to Euler
        let m = Model::benchmark();
        let x0 = [0.1, 0.2, -0.3, 0.4];
        let exact = flow(&m, &x0, 1.0, 1e-4)[0];
        let phi = Statistic::SmoothCoordinate { index: 0 };
        let mut rng = stream(1, 2, 3);
        let e1 = (sde_sample(&m, 1e18, &x0, 1.0, 0.02, false, &phi, &mut rng) - exact.tanh()).abs();
        let e2 = (sde_sample(&m, 1e18, &x0, 1.0, 0.02, true, &phi, &mut rng) - exact.tanh()).abs();
        assert!(e2 < 0.1 * e1, "{e1:e} {e2:e}");
    }
}
