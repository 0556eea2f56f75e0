//! Continuous-time plant, feedback law and Lyapunov certificate.
//!
//! A [`ControlSystem`] bundles the vector field `f(x, u)`, the feedback law
//! `κ(x)` and the control Lyapunov function `V(x)` with its gradient. A
//! [`SystemModel`] adds a name and the decay function `γ` so that the closed
//! loop under continuous feedback satisfies `V′(x) f(x, κ(x)) ≤ −γ(V(x))` on
//! the operating level set.

mod linear;
mod pendulum;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg;

pub use linear::LinearQuadratic;
pub use pendulum::{pendulum_model, Pendulum, PENDULUM_LEVEL, PENDULUM_OMEGA0, PENDULUM_SIGMA};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("state {state:?} outside the model domain: {reason}")]
    Domain { state: Vec<f64>, reason: String },
    #[error("unknown model `{0}`")]
    Unknown(String),
    #[error("model has no closed-form level-set bounds; supply a bounding box")]
    NoBoundingBox,
    #[error("invalid level {0}: must be positive and finite")]
    InvalidLevel(f64),
}

/// Plant dynamics, feedback law and Lyapunov certificate as callables.
///
/// Implementations write into caller-provided buffers so the simulation hot
/// loop stays allocation free.
pub trait ControlSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// `dx ← f(x, u)`.
    fn vector_field(&self, x: &[f64], u: &[f64], dx: &mut [f64]);

    /// `u ← κ(x)`; fails outside the domain of the feedback law.
    fn feedback(&self, x: &[f64], u: &mut [f64]) -> Result<(), ModelError>;

    fn lyapunov(&self, x: &[f64]) -> f64;

    /// `grad ← V′(x)`.
    fn lyapunov_gradient(&self, x: &[f64], grad: &mut [f64]);

    /// Constant Hessian (row-major) when `V` is a quadratic form.
    fn lyapunov_hessian(&self) -> Option<Vec<f64>> {
        None
    }
}

/// The class-𝒦 decay function γ of the Lyapunov decrease condition.
#[derive(Clone)]
pub enum Gamma {
    /// `γ(s) = ρ·s`.
    Linear(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Gamma {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Gamma::Linear(rate) => rate * s,
            Gamma::Custom(g) => g(s),
        }
    }

    pub fn linear_rate(&self) -> Option<f64> {
        match self {
            Gamma::Linear(rate) => Some(*rate),
            Gamma::Custom(_) => None,
        }
    }
}

impl fmt::Debug for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Linear(rate) => write!(f, "Linear({rate})"),
            Gamma::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// A named closed-loop model: plant, feedback, certificate and decay rate.
///
/// Cheap to clone; the system itself is shared and immutable.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    system: Arc<dyn ControlSystem>,
    gamma: Gamma,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim())
            .field("input_dim", &self.input_dim())
            .field("gamma", &self.gamma)
            .finish()
    }
}

impl SystemModel {
    pub fn new(name: impl Into<String>, system: Arc<dyn ControlSystem>, gamma: Gamma) -> Self {
        Self {
            name: name.into(),
            system,
            gamma,
        }
    }

    pub fn with_gamma(mut self, gamma: Gamma) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn system(&self) -> &dyn ControlSystem {
        self.system.as_ref()
    }

    pub fn gamma(&self) -> &Gamma {
        &self.gamma
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    pub fn check_state(&self, x: &[f64]) -> Result<(), ModelError> {
        check_dim("state", self.state_dim(), x.len())
    }

    pub fn check_input(&self, u: &[f64]) -> Result<(), ModelError> {
        check_dim("input", self.input_dim(), u.len())
    }

    pub fn f_into(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        self.system.vector_field(x, u, dx);
    }

    pub fn f(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_state(x)?;
        self.check_input(u)?;
        let mut dx = vec![0.0; x.len()];
        self.system.vector_field(x, u, &mut dx);
        Ok(dx)
    }

    pub fn kappa_into(&self, x: &[f64], u: &mut [f64]) -> Result<(), ModelError> {
        self.system.feedback(x, u)
    }

    pub fn kappa(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_state(x)?;
        let mut u = vec![0.0; self.input_dim()];
        self.system.feedback(x, &mut u)?;
        Ok(u)
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        self.system.lyapunov(x)
    }

    pub fn v_grad_into(&self, x: &[f64], grad: &mut [f64]) {
        self.system.lyapunov_gradient(x, grad);
    }

    pub fn v_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.system.lyapunov_gradient(x, &mut g);
        g
    }

    /// Closed-loop vector field `f(x, κ(x))` with scratch input buffer `u`.
    pub fn closed_loop_into(&self, x: &[f64], u: &mut [f64], dx: &mut [f64]) -> Result<(), ModelError> {
        self.system.feedback(x, u)?;
        self.system.vector_field(x, u, dx);
        Ok(())
    }

    /// Axis-aligned bounds `(lo, hi)` of the level set `{V ≤ c}`.
    ///
    /// Available in closed form when `V(x) = xᵀPx`: the half-width along axis
    /// `i` is `√(c·(P⁻¹)ᵢᵢ)`.
    pub fn level_set_bounds(&self, c: f64) -> Option<Vec<(f64, f64)>> {
        let n = self.state_dim();
        let hessian = self.system.lyapunov_hessian()?;
        let p: Vec<f64> = hessian.iter().map(|h| 0.5 * h).collect();
        let p_inv = linalg::inverse(&p, n)?;
        Some(
            (0..n)
                .map(|i| {
                    let w = (c * p_inv[i * n + i]).sqrt();
                    (-w, w)
                })
                .collect(),
        )
    }

    /// Ellipsoid comparison bounds `α₁(r) = λ_min(P)·r²`, `α₂(r) = λ_max(P)·r²`
    /// for quadratic `V`, returned as `(λ_min, λ_max)`.
    pub fn alpha_bounds(&self) -> Option<(f64, f64)> {
        let n = self.state_dim();
        let hessian = self.system.lyapunov_hessian()?;
        let p: Vec<f64> = hessian.iter().map(|h| 0.5 * h).collect();
        Some((
            linalg::symmetric_min_eigenvalue(&p, n),
            linalg::symmetric_max_eigenvalue(&p, n),
        ))
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::Dimension { what, expected, got })
    }
}

/// Lie derivative `ℒ_f V(x, u) = V′(x)·f(x, u)`.
pub fn lie_derivative(model: &SystemModel, x: &[f64], u: &[f64]) -> Result<f64, ModelError> {
    let dx = model.f(x, u)?;
    Ok(linalg::dot(&model.v_grad(x), &dx))
}

/// The operating region `𝒳_c = {x | V(x) ≤ c}` together with an enclosing box
/// used for grid sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub c: f64,
    /// Enclosing axis-aligned box, one `(lo, hi)` per state coordinate.
    pub bounds: Vec<(f64, f64)>,
    /// Radius of the excluded ball around the origin, as a fraction of the
    /// level set's radius. Used by the ratio estimates where `0/0` occurs.
    pub margin_fraction: f64,
}

pub const DEFAULT_MARGIN_FRACTION: f64 = 1e-3;

impl LevelSet {
    pub fn new(model: &SystemModel, c: f64) -> Result<Self, ModelError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(ModelError::InvalidLevel(c));
        }
        let bounds = model.level_set_bounds(c).ok_or(ModelError::NoBoundingBox)?;
        Ok(Self {
            c,
            bounds,
            margin_fraction: DEFAULT_MARGIN_FRACTION,
        })
    }

    pub fn with_bounds(c: f64, bounds: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(ModelError::InvalidLevel(c));
        }
        Ok(Self {
            c,
            bounds,
            margin_fraction: DEFAULT_MARGIN_FRACTION,
        })
    }

    pub fn with_margin_fraction(mut self, fraction: f64) -> Self {
        self.margin_fraction = fraction;
        self
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, model: &SystemModel, x: &[f64]) -> bool {
        model.v(x) <= self.c
    }

    /// Copy of the level set whose box is scaled about its centre by `factor`.
    pub fn inflated(&self, factor: f64) -> Self {
        let bounds = self
            .bounds
            .iter()
            .map(|&(lo, hi)| {
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo) * factor;
                (mid - half, mid + half)
            })
            .collect();
        Self {
            bounds,
            ..self.clone()
        }
    }
}

/// Looks up a registered model by name.
///
/// The pendulum's decay rate is certified on its benchmark level set.
pub fn registered_model(name: &str) -> Result<SystemModel, crate::certificates::CertError> {
    match name {
        "pendulum" => pendulum_model(PENDULUM_OMEGA0),
        other => Err(ModelError::Unknown(other.to_string()).into()),
    }
}

pub const REGISTERED_MODELS: &[&str] = &["pendulum"];
