//! Scaling laws of the diffusion and of the action near `x*`.

use osc_hawkes::action::{quasipotential_v, QpOptions};
use osc_hawkes::experiments::{exit_time_study, ExitOptions};
use osc_hawkes::limit::{default_trials, find_equilibrium, find_limit_cycles, CycleOptions};
use osc_hawkes::rng::{stream, streams};
use osc_hawkes::sde::{simulate_sde_with, SdeOptions};
use osc_hawkes::stats::linear_fit;
use osc_hawkes::Model;

#[test]
fn small_time_variance_grows_with_cascade_depth() {
    let m = Model::benchmark();
    let x = find_equilibrium(&m).unwrap().point;
    let dt = 5e-4;
    let reps = 10_000;
    // rows: recorded times 0.05, 0.1, 0.15, 0.2; columns: coordinates
    let mut sums = vec![[0.0f64; 4]; 4];
    let mut squares = vec![[0.0f64; 4]; 4];
    for r in 0..reps {
        let mut rng = stream(3, streams::SDE, r);
        let p = simulate_sde_with(&m, 100.0, &x, 0.2, dt, &mut rng, SdeOptions { noise_scale: 1.0, record_stride: 100 }).unwrap();
        for (k, s) in p.states.iter().skip(1).enumerate() {
            for i in 0..4 {
                let d = s[i] - x[i];
                sums[k][i] += d;
                squares[k][i] += d * d;
            }
        }
    }
    let times = [0.05f64, 0.1, 0.2];
    let rows = [0, 1, 3];
    let var = |k: usize, i: usize| {
        let n = reps as f64;
        let mean = sums[k][i] / n;
        squares[k][i] / n - mean * mean
    };
    // coordinate index -> distance from the noisy end of its block
    for (i, depth) in [(0, 1), (1, 0), (2, 1), (3, 0)] {
        let lx: Vec<f64> = times.iter().map(|t| t.ln()).collect();
        let ly: Vec<f64> = rows.iter().map(|&k| var(k, i).ln()).collect();
        let slope = linear_fit(&lx, &ly).slope;
        let want = 2.0 * depth as f64 + 1.0;
        assert!((slope - want).abs() <= 0.3, "coordinate {i}: slope {slope}, want {want}");
    }
}

#[test]
fn action_grows_quadratically_near_the_equilibrium() {
    let m = Model::benchmark();
    let x = find_equilibrium(&m).unwrap().point;
    let v = [0.3, -0.5, 0.7, 0.4];
    let opts = QpOptions { restarts: 2, intervals: 32, t_count: 6, t_min: 0.5, t_max: 16.0, tol: 1e-6, ..Default::default() };
    let eps = [0.04, 0.02, 0.01];
    let costs: Vec<f64> = eps
        .iter()
        .map(|e| {
            let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + e * b).collect();
            quasipotential_v(&m, &x, &y, &opts).unwrap().cost
        })
        .collect();
    let lx: Vec<f64> = eps.iter().map(|e: &f64| e.ln()).collect();
    let ly: Vec<f64> = costs.iter().map(|c| c.ln()).collect();
    let slope = linear_fit(&lx, &ly).slope;
    assert!((slope - 2.0).abs() <= 0.3, "costs {costs:?}, slope {slope}");
}

#[test]
fn exit_estimates_are_robust_to_halving_dt() {
    let m = Model::benchmark();
    let eq = find_equilibrium(&m).unwrap();
    let ls = find_limit_cycles(&m, &default_trials(&m, &eq, 4, 1), &CycleOptions::default()).unwrap();
    let opts = ExitOptions { ns: vec![50.0, 75.0, 100.0], replicas: 400, ..Default::default() };
    let coarse = exit_time_study(&m, &ls, &opts).unwrap();
    let fine = exit_time_study(&m, &ls, &ExitOptions { dt: 0.5 * opts.dt, seed: 2, ..opts.clone() }).unwrap();
    for (a, b) in coarse.records.iter().zip(&fine.records) {
        let se = a.std_error.hypot(b.std_error);
        assert!((a.estimate - b.estimate).abs() < 3.0 * se, "N = {}: {} vs {} (se {se})", a.param, a.estimate, b.estimate);
    }
}
