//! Fixed-step classical Runge-Kutta integration on flat slices.

/// Scratch space for one RK4 integration of dimension `n`.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Self { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    /// One step of `x' = f(t, x)` from `t` to `t + dt`, in place.
    pub fn step<F>(&mut self, t: f64, x: &mut [f64], dt: f64, mut f: F)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = x.len();
        let h2 = 0.5 * dt;
        f(t, x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + h2 * self.k1[i];
        }
        f(t + h2, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + h2 * self.k2[i];
        }
        f(t + h2, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        f(t + dt, &self.tmp, &mut self.k4);
        let h6 = dt / 6.0;
        for i in 0..n {
            x[i] += h6 * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }
}

/// Number of uniform steps used to cover `horizon` with steps close to `dt`.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    if horizon <= 0.0 {
        return 0;
    }
    ((horizon / dt).round() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_fourth_order() {
        let err = |steps: usize| {
            let mut rk = Rk4::new(1);
            let mut x = [1.0];
            let dt = 1.0 / steps as f64;
            for k in 0..steps {
                rk.step(k as f64 * dt, &mut x, dt, |_, y, out| out[0] = -2.0 * y[0]);
            }
            (x[0] - (-2.0f64).exp()).abs()
        };
        let ratio = err(10) / err(20);
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }

    #[test]
    fn step_counts() {
        assert_eq!(step_count(1.0, 0.1), 10);
        assert_eq!(step_count(0.0, 0.1), 0);
        assert_eq!(step_count(0.01, 0.1), 1);
    }
}
