//! Fixed-step classical Runge–Kutta integration with reusable stage buffers.

/// Stage storage for the classical fourth-order Runge–Kutta scheme.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.k1.len()
    }

    /// Advances `x` in place by one step of size `dt` of the autonomous
    /// system `ẋ = rhs(x)`.
    pub fn step<E, F>(&mut self, x: &mut [f64], dt: f64, mut rhs: F) -> Result<(), E>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<(), E>,
    {
        let n = x.len();
        debug_assert_eq!(n, self.dim());
        rhs(x, &mut self.k1)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k1[i];
        }
        rhs(&self.tmp, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k2[i];
        }
        rhs(&self.tmp, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        rhs(&self.tmp, &mut self.k4)?;
        for i in 0..n {
            x[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }

    /// Integrates over `duration` with `steps` equal steps.
    pub fn integrate<E, F>(&mut self, x: &mut [f64], duration: f64, steps: usize, mut rhs: F) -> Result<(), E>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<(), E>,
    {
        let dt = duration / steps as f64;
        for _ in 0..steps {
            self.step(x, dt, &mut rhs)?;
        }
        Ok(())
    }
}

/// One RK4 step of a scalar ODE `ṡ = g(s)`.
pub fn rk4_scalar(s: f64, dt: f64, g: impl Fn(f64) -> f64) -> f64 {
    let k1 = g(s);
    let k2 = g(s + 0.5 * dt * k1);
    let k3 = g(s + 0.5 * dt * k2);
    let k4 = g(s + dt * k3);
    s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    #[test]
    fn exponential_decay_fourth_order() {
        let exact = (-1.0f64).exp();
        let err = |steps: usize| {
            let mut x = [1.0];
            Rk4::new(1)
                .integrate(&mut x, 1.0, steps, |x, dx| {
                    dx[0] = -x[0];
                    Ok::<_, Infallible>(())
                })
                .unwrap();
            (x[0] - exact).abs()
        };
        let ratio = err(10) / err(20);
        assert!(ratio > 15.0 && ratio < 17.0, "ratio {ratio}");
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let mut x = [1.0, 0.0];
        Rk4::new(2)
            .integrate(&mut x, std::f64::consts::TAU, 2000, |x, dx| {
                dx[0] = x[1];
                dx[1] = -x[0];
                Ok::<_, Infallible>(())
            })
            .unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10 && x[1].abs() < 1e-10);
    }

    #[test]
    fn scalar_step_matches_vector_step() {
        let g = |s: f64| -0.7 * s * s;
        let mut x = [0.9];
        Rk4::new(1)
            .step(&mut x, 0.1, |x, dx| {
                dx[0] = g(x[0]);
                Ok::<_, Infallible>(())
            })
            .unwrap();
        assert_eq!(x[0], rk4_scalar(0.9, 0.1, g));
    }
}
