use super::{ControlSystem, ModelError};

/// Linear plant `ẋ = Ax + Bu` with linear feedback `u = −Kx` and quadratic
/// certificate `V(x) = xᵀPx`. All matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearQuadratic {
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    k: Vec<f64>,
    p: Vec<f64>,
}

impl LinearQuadratic {
    pub fn new(n: usize, m: usize, a: Vec<f64>, b: Vec<f64>, k: Vec<f64>, p: Vec<f64>) -> Result<Self, ModelError> {
        let expect = |what, got: usize, expected| {
            if got == expected {
                Ok(())
            } else {
                Err(ModelError::Dimension { what, expected, got })
            }
        };
        expect("A", a.len(), n * n)?;
        expect("B", b.len(), n * m)?;
        expect("K", k.len(), m * n)?;
        expect("P", p.len(), n * n)?;
        Ok(Self { n, m, a, b, k, p })
    }
}

impl ControlSystem for LinearQuadratic {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn vector_field(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        for i in 0..self.n {
            let ax: f64 = (0..self.n).map(|j| self.a[i * self.n + j] * x[j]).sum();
            let bu: f64 = (0..self.m).map(|j| self.b[i * self.m + j] * u[j]).sum();
            dx[i] = ax + bu;
        }
    }

    fn feedback(&self, x: &[f64], u: &mut [f64]) -> Result<(), ModelError> {
        for i in 0..self.m {
            u[i] = -(0..self.n).map(|j| self.k[i * self.n + j] * x[j]).sum::<f64>();
        }
        Ok(())
    }

    fn lyapunov(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                v += x[i] * self.p[i * self.n + j] * x[j];
            }
        }
        v
    }

    fn lyapunov_gradient(&self, x: &[f64], grad: &mut [f64]) {
        for i in 0..self.n {
            grad[i] = (0..self.n)
                .map(|j| (self.p[i * self.n + j] + self.p[j * self.n + i]) * x[j])
                .sum();
        }
    }

    fn lyapunov_hessian(&self) -> Option<Vec<f64>> {
        let n = self.n;
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = self.p[i * n + j] + self.p[j * n + i];
            }
        }
        Some(h)
    }
}
