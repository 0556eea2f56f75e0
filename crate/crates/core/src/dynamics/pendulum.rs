//! Inverted pendulum benchmark.
//!
//! `ẋ₁ = x₂`, `ẋ₂ = (sin x₁ − u cos x₁)·ω₀` with the feedback
//! `κ(x) = (31.6x₁ + 40.4x₂ + sin x₁)/cos x₁` and the certificate
//! `V(x) = 1.278x₁² + 0.632x₁x₂ + 0.404x₂²`.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use super::{ControlSystem, Gamma, LevelSet, ModelError, SystemModel};
use crate::certificates::{self, CertError, EstimationOptions, GammaRateMethod, DEFAULT_GRID};

pub const PENDULUM_OMEGA0: f64 = 0.1;
/// Level `c` of the benchmark operating region.
pub const PENDULUM_LEVEL: f64 = 0.258;
pub const PENDULUM_SIGMA: f64 = 0.35;

const P11: f64 = 1.278;
const P12: f64 = 0.632;
const P22: f64 = 0.404;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pendulum {
    pub omega0: f64,
}

impl ControlSystem for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn vector_field(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let (s, c) = x[0].sin_cos();
        dx[0] = x[1];
        dx[1] = (s - u[0] * c) * self.omega0;
    }

    fn feedback(&self, x: &[f64], u: &mut [f64]) -> Result<(), ModelError> {
        if !(x[0].abs() < FRAC_PI_2) {
            return Err(ModelError::Domain {
                state: x.to_vec(),
                reason: "feedback is singular for |x1| >= pi/2".into(),
            });
        }
        let (s, c) = x[0].sin_cos();
        u[0] = (31.6 * x[0] + 40.4 * x[1] + s) / c;
        Ok(())
    }

    fn lyapunov(&self, x: &[f64]) -> f64 {
        P11 * x[0] * x[0] + P12 * x[0] * x[1] + P22 * x[1] * x[1]
    }

    fn lyapunov_gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad[0] = 2.0 * P11 * x[0] + P12 * x[1];
        grad[1] = P12 * x[0] + 2.0 * P22 * x[1];
    }

    fn lyapunov_hessian(&self) -> Option<Vec<f64>> {
        Some(vec![2.0 * P11, P12, P12, 2.0 * P22])
    }
}

/// The pendulum benchmark with a linear decay function `γ(s) = ρs`.
///
/// `ρ` is certified on the benchmark level set with the comparison-function
/// bound `inf(−ℒ_f V/‖x‖²) / sup(V/‖x‖²)`.
pub fn pendulum_model(omega0: f64) -> Result<SystemModel, CertError> {
    if !(omega0 > 0.0 && omega0.is_finite()) {
        return Err(CertError::InvalidInput(format!("omega0 must be positive, got {omega0}")));
    }
    let model = SystemModel::new("pendulum", Arc::new(Pendulum { omega0 }), Gamma::Linear(1.0));
    let level = LevelSet::new(&model, PENDULUM_LEVEL)?;
    let opts = EstimationOptions {
        gamma_method: GammaRateMethod::Comparison,
        ..EstimationOptions::default()
    };
    let rho = certificates::estimate_gamma_rate(&model, &level, DEFAULT_GRID, &opts)?;
    Ok(model.with_gamma(Gamma::Linear(rho)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lie_derivative;

    fn model() -> SystemModel {
        pendulum_model(PENDULUM_OMEGA0).unwrap()
    }

    #[test]
    fn equilibrium() {
        let m = model();
        assert_eq!(m.kappa(&[0.0, 0.0]).unwrap(), vec![0.0]);
        assert_eq!(m.f(&[0.0, 0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(lie_derivative(&m, &[0.0, 0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(m.v(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn lyapunov_value_at_sample_point() {
        // 1.278·0.01 + 0.632·0.01 + 0.404·0.01
        let v = model().v(&[0.1, 0.1]);
        assert!((v - 0.02314).abs() < 1e-15, "{v}");
    }

    #[test]
    fn closed_loop_acceleration_matches_symbolic_evaluation() {
        let m = model();
        let x = [0.1, 0.0];
        let u = m.kappa(&x).unwrap();
        let kappa = (31.6 * 0.1 + 0.1f64.sin()) / 0.1f64.cos();
        assert!((u[0] - kappa).abs() < 1e-14);
        let dx = m.f(&x, &u).unwrap();
        assert_eq!(dx[0], 0.0);
        let expected = (0.1f64.sin() - kappa * 0.1f64.cos()) * 0.1;
        assert!((dx[1] - expected).abs() < 1e-15);
        // sin x₁ cancels: the closed loop is −ω₀(31.6x₁ + 40.4x₂)
        assert!((dx[1] + 0.316).abs() < 1e-12);
    }

    #[test]
    fn lie_derivative_negative_off_origin() {
        let m = model();
        let x = [0.1, -0.1];
        let u = m.kappa(&x).unwrap();
        // V′ = (2·1.278·0.1 − 0.0632, 0.0632 − 0.0808), ẋ = (−0.1, −0.1·(3.16 − 4.04))
        let expected = (0.2556 - 0.0632) * -0.1 + (0.0632 - 0.0808) * 0.088;
        let lf = lie_derivative(&m, &x, &u).unwrap();
        assert!((lf - expected).abs() < 1e-12, "{lf} vs {expected}");
        assert!(lf < 0.0);
    }

    #[test]
    fn feedback_domain_error() {
        let m = model();
        assert!(matches!(
            m.kappa(&[FRAC_PI_2, 0.0]),
            Err(ModelError::Domain { .. })
        ));
        assert!(m.kappa(&[-2.0, 0.0]).is_err());
        assert!(m.kappa(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn invalid_omega() {
        assert!(pendulum_model(0.0).is_err());
        assert!(pendulum_model(-1.0).is_err());
    }

    #[test]
    fn decay_rate_is_positive_and_below_direct_ratio() {
        let m = model();
        let rho = m.gamma().linear_rate().unwrap();
        let level = LevelSet::new(&m, PENDULUM_LEVEL).unwrap();
        let direct = certificates::estimate_gamma_rate(&m, &level, 100, &EstimationOptions::default()).unwrap();
        assert!(rho > 0.0 && rho < direct, "rho {rho}, direct {direct}");
    }
}
