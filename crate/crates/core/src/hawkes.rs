//! Event-level simulation of the finite-population system.
//!
//! With Erlang kernels the aggregated memory terms form a piecewise
//! deterministic Markov process: between events every cascade relaxes
//! linearly, and each population-2 event raises the last population-1
//! coordinate by `c1 / N2` (symmetrically for population 1). Events are drawn
//! by thinning against the constant bound `N1 fmax1 + N2 fmax2`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelError, Population, State};
use crate::rng::{self, StreamRng};

#[derive(Debug, Error)]
pub enum HawkesError {
    #[error("population sizes must be at least 1 (got N1 = {0}, N2 = {1})")]
    Counts(u64, u64),
    #[error("horizon must be finite and >= 0 (got {0})")]
    Horizon(f64),
    #[error("time {t} lies beyond the recorded horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Aggregated event trains of both populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub times1: Vec<f64>,
    pub times2: Vec<f64>,
    pub unit_counts: (u64, u64),
    pub horizon: f64,
    /// Cascade state at time 0.
    pub initial: State,
}

impl EventRecord {
    pub fn is_empty(&self) -> bool {
        self.times1.is_empty() && self.times2.is_empty()
    }

    pub fn len(&self) -> usize {
        self.times1.len() + self.times2.len()
    }

    /// All events merged in time order.
    pub fn merged(&self) -> Vec<(Population, f64)> {
        let mut out: Vec<(Population, f64)> = self
            .times1
            .iter()
            .map(|&t| (Population::One, t))
            .chain(self.times2.iter().map(|&t| (Population::Two, t)))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1));
        out
    }
}

/// Cascade state at time 0, after every event (right limits) and at the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadePath {
    pub grid: Vec<f64>,
    pub states: Vec<State>,
}

impl CascadePath {
    /// State at time `t`, flowing forward from the last knot at or before `t`.
    pub fn state_at(&self, model: &Model, t: f64) -> State {
        let k = self.grid.partition_point(|&s| s <= t).max(1) - 1;
        let mut x = self.states[k].clone();
        model.free_flow(&mut x, t - self.grid[k]);
        x
    }

    /// Exact resampling on the uniform grid `0, dt, 2dt, ...` up to the last knot.
    pub fn resample(&self, model: &Model, dt: f64) -> crate::sde::Path {
        let end = *self.grid.last().unwrap_or(&0.0);
        let steps = crate::ode::step_count(end, dt);
        let grid: Vec<f64> = (0..=steps).map(|k| if k == steps { end } else { k as f64 * dt }).collect();
        let states = grid.iter().map(|&t| self.state_at(model, t)).collect();
        crate::sde::Path { grid, states }
    }
}

fn check(n1: u64, n2: u64, horizon: f64) -> Result<(), HawkesError> {
    if n1 == 0 || n2 == 0 {
        return Err(HawkesError::Counts(n1, n2));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(HawkesError::Horizon(horizon));
    }
    Ok(())
}

/// Runs the thinning loop, calling `on_event` with the post-jump state.
fn run<R: Rng + ?Sized>(
    model: &Model,
    n1: u64,
    n2: u64,
    x: &mut [f64],
    horizon: f64,
    rng: &mut R,
    mut on_event: impl FnMut(Population, f64, &[f64]),
) {
    let (w1, w2) = (n1 as f64, n2 as f64);
    let bound = w1 * model.f1().fmax + w2 * model.f2().fmax;
    let (jump1, jump2) = (model.c2() / w1, model.c1() / w2);
    let (head2, noisy1, noisy2) = (model.head2(), model.noisy1(), model.noisy2());
    let mut t = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        let next = t + e / bound;
        if next > horizon {
            model.free_flow(x, horizon - t);
            return;
        }
        model.free_flow(x, next - t);
        t = next;
        let l1 = w1 * model.f1().value(x[0]);
        let l2 = w2 * model.f2().value(x[head2]);
        let u = rng.random::<f64>() * bound;
        if u < l1 {
            x[noisy2] += jump1;
            on_event(Population::One, t, x);
        } else if u < l1 + l2 {
            x[noisy1] += jump2;
            on_event(Population::Two, t, x);
        }
    }
}

/// Simulates from the zero state under `seed`.
pub fn simulate_hawkes(
    model: &Model,
    n1: u64,
    n2: u64,
    horizon: f64,
    seed: u64,
) -> Result<(EventRecord, CascadePath), HawkesError> {
    let x0 = vec![0.0; model.dim()];
    simulate_hawkes_from(model, n1, n2, &x0, horizon, &mut rng::stream(seed, rng::streams::HAWKES, 0))
}

pub fn simulate_hawkes_from(
    model: &Model,
    n1: u64,
    n2: u64,
    x0: &[f64],
    horizon: f64,
    rng: &mut StreamRng,
) -> Result<(EventRecord, CascadePath), HawkesError> {
    check(n1, n2, horizon)?;
    model.check_dim(x0)?;
    let mut rec = EventRecord {
        times1: Vec::new(),
        times2: Vec::new(),
        unit_counts: (n1, n2),
        horizon,
        initial: x0.to_vec(),
    };
    let mut path = CascadePath { grid: vec![0.0], states: vec![x0.to_vec()] };
    let mut x = x0.to_vec();
    run(model, n1, n2, &mut x, horizon, rng, |pop, t, state| {
        match pop {
            Population::One => rec.times1.push(t),
            Population::Two => rec.times2.push(t),
        }
        path.grid.push(t);
        path.states.push(state.to_vec());
    });
    if horizon > 0.0 {
        path.grid.push(horizon);
        path.states.push(x);
    }
    Ok((rec, path))
}

/// State at `horizon` only, without storing events.
pub fn terminal_state<R: Rng + ?Sized>(
    model: &Model,
    n1: u64,
    n2: u64,
    x0: &[f64],
    horizon: f64,
    rng: &mut R,
) -> Result<State, HawkesError> {
    check(n1, n2, horizon)?;
    model.check_dim(x0)?;
    let mut x = x0.to_vec();
    run(model, n1, n2, &mut x, horizon, rng, |_, _, _| {});
    Ok(x)
}

/// Cascade state at time `t` by direct convolution of the kernels with the
/// recorded event trains (plus the free flow of the initial state).
pub fn cascade_from_events(model: &Model, events: &EventRecord, t: f64) -> Result<State, HawkesError> {
    if t > events.horizon * (1.0 + 1e-12) || t < 0.0 {
        return Err(HawkesError::BeyondHorizon { t, horizon: events.horizon });
    }
    let mut x = if events.initial.is_empty() { vec![0.0; model.dim()] } else { events.initial.clone() };
    model.check_dim(&x)?;
    model.free_flow(&mut x, t);
    let (w1, w2) = (events.unit_counts.0 as f64, events.unit_counts.1 as f64);
    // population-2 events feed the population-1 cascade and vice versa
    add_train(&mut x[model.block(Population::One)], model.k12(), model.c1() / w2, &events.times2, t);
    add_train(&mut x[model.block(Population::Two)], model.k21(), model.c2() / w1, &events.times1, t);
    Ok(x)
}

fn add_train(block: &mut [f64], k: &crate::model::KernelParams, weight: f64, times: &[f64], t: f64) {
    let n = k.n;
    for &s in times.iter().take_while(|&&s| s <= t) {
        let u = t - s;
        let decay = weight * (-k.nu * u).exp();
        // entry i carries u^(n-i)/(n-i)!
        let mut p = decay;
        for j in 0..=n {
            block[n - j] += p;
            p *= u / (j + 1) as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KernelParams, RateSpec};
    use crate::stats::{ks_test, Moments};

    fn constant_model(l1: f64, l2: f64, n1: usize) -> Model {
        Model::new(
            KernelParams { c: 1.0, nu: 1.0, n: n1 },
            KernelParams { c: -1.0, nu: 1.3, n: 1 },
            RateSpec::constant(l1),
            RateSpec::constant(l2),
            0.5,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn zero_horizon() {
        let m = Model::benchmark();
        let (rec, path) = simulate_hawkes(&m, 1, 1, 0.0, 3).unwrap();
        assert!(rec.is_empty());
        assert_eq!(path.states, vec![vec![0.0; 4]]);
    }

    #[test]
    fn rejects_bad_input() {
        let m = Model::benchmark();
        assert!(matches!(simulate_hawkes(&m, 0, 1, 1.0, 0), Err(HawkesError::Counts(0, 1))));
        assert!(matches!(simulate_hawkes(&m, 1, 1, -1.0, 0), Err(HawkesError::Horizon(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let m = Model::benchmark();
        let a = simulate_hawkes(&m, 20, 20, 5.0, 9).unwrap();
        let b = simulate_hawkes(&m, 20, 20, 5.0, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.0.len() > 10);
    }

    #[test]
    fn single_jump_closed_form() {
        let m = constant_model(1.0, 1.0, 0);
        let rec = EventRecord {
            times1: vec![],
            times2: vec![0.4],
            unit_counts: (3, 4),
            horizon: 2.0,
            initial: vec![],
        };
        let x = cascade_from_events(&m, &rec, 1.5).unwrap();
        assert!((x[0] - 0.25 * (-1.1f64).exp()).abs() < 1e-15);
        assert_eq!(&x[1..], &[0.0, 0.0]);
        let empty = EventRecord { times2: vec![], ..rec.clone() };
        assert_eq!(cascade_from_events(&m, &empty, 1.0).unwrap(), vec![0.0; 3]);
        assert!(cascade_from_events(&m, &rec, 2.5).is_err());
    }

    #[test]
    fn pdmp_matches_convolution_and_jumps_are_exact() {
        let m = Model::benchmark();
        let x0 = vec![0.2, -0.1, 0.3, 0.05];
        let mut r = rng::stream(5, 1, 0);
        let (rec, path) = simulate_hawkes_from(&m, 7, 5, &x0, 10.0, &mut r).unwrap();
        for (t, x) in path.grid.iter().zip(&path.states) {
            let y = cascade_from_events(&m, &rec, *t).unwrap();
            let gap = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap < 1e-12, "gap {gap} at {t}");
        }
        // jumps: left limit vs right limit at each event
        for k in 1..path.grid.len() - 1 {
            let mut left = path.states[k - 1].clone();
            m.free_flow(&mut left, path.grid[k] - path.grid[k - 1]);
            let d: Vec<f64> = path.states[k].iter().zip(&left).map(|(a, b)| a - b).collect();
            let is1 = rec.times1.binary_search_by(|s| s.total_cmp(&path.grid[k])).is_ok();
            let (idx, size) = if is1 { (3, -1.0 / 7.0) } else { (1, 1.0 / 5.0) };
            for (i, v) in d.iter().enumerate() {
                let want = if i == idx { size } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_rates_give_poisson_counts() {
        let m = constant_model(1.5, 0.8, 1);
        let (n1, horizon) = (4u64, 2.0);
        let mut counts = Moments::default();
        for rep in 0..1000 {
            let mut r = rng::stream(17, rng::streams::HAWKES, rep);
            let (rec, _) = simulate_hawkes_from(&m, n1, 3, &[0.0; 4], horizon, &mut r).unwrap();
            counts.push(rec.times1.len() as f64);
        }
        let want = n1 as f64 * 1.5 * horizon;
        assert!((counts.mean - want).abs() < 3.0 * counts.std_error(), "{} vs {want}", counts.mean);
    }

    #[test]
    fn constant_rate_gaps_are_exponential() {
        let m = constant_model(2.0, 1.0, 0);
        let mut r = rng::stream(23, rng::streams::HAWKES, 0);
        let (rec, _) = simulate_hawkes_from(&m, 2, 3, &[0.0; 3], 2000.0, &mut r).unwrap();
        let times: Vec<f64> = rec.merged().into_iter().map(|e| e.1).collect();
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).take(10_000).collect();
        assert_eq!(gaps.len(), 10_000);
        let rate = 2.0 * 2.0 + 3.0 * 1.0;
        let ks = ks_test(&gaps, |x| 1.0 - (-rate * x).exp());
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn resampling_is_exact_flow() {
        let m = Model::benchmark();
        let (rec, path) = simulate_hawkes(&m, 5, 5, 3.0, 4).unwrap();
        let p = path.resample(&m, 0.01);
        assert_eq!(p.len(), 301);
        for (t, x) in p.grid.iter().zip(&p.states) {
            let y = cascade_from_events(&m, &rec, *t).unwrap();
            assert!(crate::sde::distance(x, &y) < 1e-12);
        }
    }
}
