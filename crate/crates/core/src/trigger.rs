//! Sensor-side transmission rule.
//!
//! At every sampling instant `k` the sensor advances its copy of the
//! actuator's prediction, bounds the growth of `V` over the next period under
//! the predicted input and transmits when that bound would exceed the decay
//! budget accumulated since the last transmission.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::certificates::{increment_bound, CertifiedConstants};
use crate::dynamics::ModelError;
use crate::prediction::{PredictionError, PredictionModel};

#[derive(Debug, Error)]
pub enum TriggerError {
    #[error("sample {k} evaluated out of order (last evaluated: {last:?})")]
    OutOfOrder { k: u64, last: Option<u64> },
    #[error("non-finite bound increment at sample {k}, state {state:?}; the state has likely left the certified region")]
    NonFiniteLambda { k: u64, state: Vec<f64> },
    #[error("non-finite state {state:?} at sample {k}")]
    NonFiniteState { k: u64, state: Vec<f64> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
}

/// Why a sampling instant did or did not transmit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reason {
    Initial,
    MaxInterval,
    LevelSetExit,
    LyapunovBound,
    /// The prediction or the feedback at the prediction could not be
    /// evaluated, e.g. a lookup-table query outside its box.
    PredictionDomain,
    NoTransmit,
}

impl Reason {
    pub const ALL: [Reason; 6] = [
        Reason::Initial,
        Reason::MaxInterval,
        Reason::LevelSetExit,
        Reason::LyapunovBound,
        Reason::PredictionDomain,
        Reason::NoTransmit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Initial => "initial",
            Reason::MaxInterval => "max_interval",
            Reason::LevelSetExit => "level_set_exit",
            Reason::LyapunovBound => "lyapunov_bound",
            Reason::PredictionDomain => "prediction_domain",
            Reason::NoTransmit => "none",
        }
    }

    pub fn transmits(self) -> bool {
        self != Reason::NoTransmit
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Reason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Reason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown reason `{s}`"))
    }
}

impl Serialize for Reason {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerDecision {
    pub transmit: bool,
    pub reason: Reason,
    /// Bound on the growth of `V` over the next period; absent at `k = 0` and
    /// when the prediction could not be evaluated.
    pub lambda: Option<f64>,
    /// Decay budget the bound was compared against; absent at `k = 0`.
    pub budget: Option<f64>,
    /// Input applied on `[kh, (k+1)h)`.
    pub u_next: Vec<f64>,
}

/// Persistent sensor-side state.
#[derive(Debug, Clone)]
pub struct TriggerState {
    prediction: PredictionModel,
    constants: CertifiedConstants,
    nu: u64,
    i_ref: u64,
    v_ref: f64,
    xhat_sens: Vec<f64>,
    last_k: Option<u64>,
    grad: Vec<f64>,
    field: Vec<f64>,
}

/// `ceil(10/(h·σ·ρ))`: large enough never to bind before the decay budget
/// is exhausted. For nonlinear γ the rate `γ(c)/c` is used.
pub fn default_nu(prediction: &PredictionModel, constants: &CertifiedConstants) -> u64 {
    let rate = constants
        .gamma_rate
        .unwrap_or_else(|| prediction.model().gamma().eval(constants.c) / constants.c);
    let nu = (10.0 / (prediction.step() * constants.sigma * rate)).ceil();
    if nu.is_finite() && nu >= 1.0 {
        nu as u64
    } else {
        u64::MAX / 2
    }
}

impl TriggerState {
    pub fn new(prediction: PredictionModel, constants: CertifiedConstants, nu: u64) -> Self {
        let n = prediction.model().state_dim();
        Self {
            prediction,
            constants,
            nu,
            i_ref: 0,
            v_ref: 0.0,
            xhat_sens: vec![0.0; n],
            last_k: None,
            grad: vec![0.0; n],
            field: vec![0.0; n],
        }
    }

    pub fn nu(&self) -> u64 {
        self.nu
    }

    pub fn i_ref(&self) -> u64 {
        self.i_ref
    }

    pub fn v_ref(&self) -> f64 {
        self.v_ref
    }

    pub fn xhat_sens(&self) -> &[f64] {
        &self.xhat_sens
    }

    pub fn prediction(&self) -> &PredictionModel {
        &self.prediction
    }

    pub fn constants(&self) -> &CertifiedConstants {
        &self.constants
    }

    /// `V_ref − (k − i_ref + 1)·h·σ·γ(V_ref)`.
    pub fn decay_budget(&self, k: u64) -> f64 {
        let periods = k.saturating_sub(self.i_ref) as f64 + 1.0;
        let per_period = self.prediction.step() * self.constants.sigma * self.prediction.model().gamma().eval(self.v_ref);
        self.v_ref - periods * per_period
    }

    /// Evaluates the rule at sampling instant `k` with measured state `x_k`.
    ///
    /// Must be called once for every `k = 0, 1, 2, …` in order.
    pub fn evaluate(&mut self, k: u64, x_k: &[f64]) -> Result<TriggerDecision, TriggerError> {
        let model = self.prediction.model().clone();
        model.check_state(x_k)?;
        if x_k.iter().any(|v| !v.is_finite()) {
            return Err(TriggerError::NonFiniteState { k, state: x_k.to_vec() });
        }
        let expected = self.last_k.map_or(0, |last| last + 1);
        if k != expected {
            return Err(TriggerError::OutOfOrder { k, last: self.last_k });
        }

        if k == 0 {
            let u_next = model.kappa(x_k)?;
            self.reset(0, x_k);
            self.last_k = Some(0);
            return Ok(TriggerDecision {
                transmit: true,
                reason: Reason::Initial,
                lambda: None,
                budget: None,
                u_next,
            });
        }

        let mut domain_error = false;
        let mut u_sens = None;
        match self.prediction.predict(&self.xhat_sens) {
            Ok(next) => {
                self.xhat_sens = next;
                match model.kappa(&self.xhat_sens) {
                    Ok(u) => u_sens = Some(u),
                    Err(ModelError::Domain { .. }) => domain_error = true,
                    Err(e) => return Err(e.into()),
                }
            }
            Err(e) if e.is_domain_error() => domain_error = true,
            Err(e) => return Err(e.into()),
        }

        let lambda = match &u_sens {
            Some(u) => {
                model.v_grad_into(x_k, &mut self.grad);
                model.f_into(x_k, u, &mut self.field);
                let l = increment_bound(&self.grad, &self.field, self.constants.mu, self.prediction.step());
                if !l.is_finite() {
                    return Err(TriggerError::NonFiniteLambda { k, state: x_k.to_vec() });
                }
                Some(l)
            }
            None => None,
        };
        let budget = self.decay_budget(k);
        let v_k = model.v(x_k);

        let reason = if k - self.i_ref > self.nu {
            Reason::MaxInterval
        } else if domain_error {
            Reason::PredictionDomain
        } else if model.v(&self.xhat_sens) > self.constants.c {
            Reason::LevelSetExit
        } else if lambda.is_some_and(|l| v_k + l >= budget) {
            Reason::LyapunovBound
        } else {
            Reason::NoTransmit
        };

        let transmit = reason.transmits();
        let u_next = if transmit {
            let u = model.kappa(x_k)?;
            self.reset(k, x_k);
            u
        } else {
            u_sens.expect("held decisions always carry the predicted input")
        };
        self.last_k = Some(k);
        Ok(TriggerDecision {
            transmit,
            reason,
            lambda,
            budget: Some(budget),
            u_next,
        })
    }

    fn reset(&mut self, k: u64, x_k: &[f64]) {
        self.i_ref = k;
        self.v_ref = self.prediction.model().v(x_k);
        self.xhat_sens.copy_from_slice(x_k);
    }
}
