//! Sampled-data prediction maps `x̂ ← f_p(x̂)` used by the actuator between
//! transmissions (and mirrored by the sensor).
//!
//! Every kind keeps the origin fixed. Lookup tables interpolate
//! multilinearly, so they are continuous and piecewise smooth rather than
//! continuously differentiable; smoothness-sensitive checks use the
//! Runge–Kutta or Euler kinds.

mod table;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{LevelSet, ModelError, SystemModel};
use crate::integrate::Rk4;

pub use table::LookupTable;

/// Sub-steps per sampling period of the reference discretisation.
pub const DEFAULT_REFERENCE_SUBSTEPS: usize = 100;

#[derive(Debug, Error)]
pub enum PredictionError {
    #[error("prediction query {point:?} outside the lookup-table domain")]
    OutsideTable { point: Vec<f64> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite prediction from {point:?}")]
    NonFinite { point: Vec<f64> },
    #[error("invalid prediction setup: {0}")]
    InvalidInput(String),
    #[error("lookup-table format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PredictionError {
    /// Errors that mean the prediction cannot be evaluated at this point, as
    /// opposed to a broken setup.
    pub fn is_domain_error(&self) -> bool {
        matches!(
            self,
            PredictionError::OutsideTable { .. }
                | PredictionError::NonFinite { .. }
                | PredictionError::Model(ModelError::Domain { .. })
        )
    }
}

#[derive(Debug, Clone)]
pub enum PredictionKind {
    /// `f_p(x̂) = x̂`.
    Zoh,
    /// `f_p(x̂) = x̂ + scale·h·f(x̂, κ(x̂))`.
    ScaledEuler { scale: f64 },
    /// One classical RK4 step of length `h` of the closed loop.
    RungeKutta4,
    LookupTable(Arc<LookupTable>),
    /// RK4 with `substeps` steps per period; an accurate stand-in for the
    /// exact discretisation.
    ReferenceExact { substeps: usize },
}

impl PredictionKind {
    pub fn name(&self) -> &'static str {
        match self {
            PredictionKind::Zoh => "zoh",
            PredictionKind::ScaledEuler { .. } => "scaled_euler",
            PredictionKind::RungeKutta4 => "rk4",
            PredictionKind::LookupTable(_) => "lookup_table",
            PredictionKind::ReferenceExact { .. } => "reference_exact",
        }
    }
}

impl fmt::Display for PredictionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictionKind::ScaledEuler { scale } => write!(f, "scaled_euler({scale})"),
            PredictionKind::ReferenceExact { substeps } => write!(f, "reference_exact({substeps})"),
            other => f.write_str(other.name()),
        }
    }
}

/// A one-step prediction map for a fixed sampling period.
#[derive(Debug, Clone)]
pub struct PredictionModel {
    kind: PredictionKind,
    step: f64,
    model: SystemModel,
}

impl PredictionModel {
    pub fn new(model: SystemModel, kind: PredictionKind, step: f64) -> Result<Self, PredictionError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(PredictionError::InvalidInput(format!("step {step} must be positive")));
        }
        match &kind {
            PredictionKind::ScaledEuler { scale } if !scale.is_finite() => {
                return Err(PredictionError::InvalidInput(format!("Euler scale {scale}")));
            }
            PredictionKind::ReferenceExact { substeps: 0 } => {
                return Err(PredictionError::InvalidInput("reference needs >= 1 sub-step".into()));
            }
            PredictionKind::LookupTable(table) => {
                if table.dim() != model.state_dim() {
                    return Err(PredictionError::InvalidInput(format!(
                        "table dimension {} != state dimension {}",
                        table.dim(),
                        model.state_dim()
                    )));
                }
                if table.step().to_bits() != step.to_bits() {
                    return Err(PredictionError::InvalidInput(format!(
                        "table built for step {} used with step {step}",
                        table.step()
                    )));
                }
            }
            _ => {}
        }
        Ok(Self { kind, step, model })
    }

    pub fn zoh(model: SystemModel, step: f64) -> Result<Self, PredictionError> {
        Self::new(model, PredictionKind::Zoh, step)
    }

    pub fn scaled_euler(model: SystemModel, step: f64, scale: f64) -> Result<Self, PredictionError> {
        Self::new(model, PredictionKind::ScaledEuler { scale }, step)
    }

    pub fn runge_kutta4(model: SystemModel, step: f64) -> Result<Self, PredictionError> {
        Self::new(model, PredictionKind::RungeKutta4, step)
    }

    pub fn reference_exact(model: SystemModel, step: f64, substeps: usize) -> Result<Self, PredictionError> {
        Self::new(model, PredictionKind::ReferenceExact { substeps }, step)
    }

    pub fn lookup_table(model: SystemModel, table: Arc<LookupTable>) -> Result<Self, PredictionError> {
        let step = table.step();
        Self::new(model, PredictionKind::LookupTable(table), step)
    }

    pub fn kind(&self) -> &PredictionKind {
        &self.kind
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    /// One prediction step `f_p(x̂)`.
    pub fn predict(&self, xhat: &[f64]) -> Result<Vec<f64>, PredictionError> {
        self.model.check_state(xhat)?;
        if xhat.iter().any(|v| !v.is_finite()) {
            return Err(PredictionError::NonFinite { point: xhat.to_vec() });
        }
        let out = match &self.kind {
            PredictionKind::Zoh => xhat.to_vec(),
            PredictionKind::ScaledEuler { scale } => {
                let mut u = vec![0.0; self.model.input_dim()];
                let mut dx = vec![0.0; xhat.len()];
                self.model.closed_loop_into(xhat, &mut u, &mut dx)?;
                xhat.iter().zip(&dx).map(|(x, d)| x + scale * self.step * d).collect()
            }
            PredictionKind::RungeKutta4 => self.integrate(xhat, 1)?,
            PredictionKind::ReferenceExact { substeps } => self.integrate(xhat, *substeps)?,
            PredictionKind::LookupTable(table) => table.interpolate(xhat)?,
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(PredictionError::NonFinite { point: xhat.to_vec() });
        }
        Ok(out)
    }

    fn integrate(&self, xhat: &[f64], substeps: usize) -> Result<Vec<f64>, PredictionError> {
        let mut x = xhat.to_vec();
        let mut u = vec![0.0; self.model.input_dim()];
        Rk4::new(x.len()).integrate(&mut x, self.step, substeps, |y, dy| {
            self.model.closed_loop_into(y, &mut u, dy)
        })?;
        Ok(x)
    }
}

/// Tabulates `reference` on a grid over the level set's box inflated by 10%
/// and returns the interpolating prediction.
///
/// Each axis carries `points_per_axis` uniform nodes plus a node at zero, so
/// the origin is a grid node with image exactly zero.
pub fn build_lookup_table(
    model: &SystemModel,
    level: &LevelSet,
    points_per_axis: usize,
    reference: &PredictionModel,
) -> Result<PredictionModel, PredictionError> {
    if points_per_axis < 2 {
        return Err(PredictionError::InvalidInput(format!(
            "lookup table needs >= 2 points per axis, got {points_per_axis}"
        )));
    }
    if !matches!(
        reference.kind(),
        PredictionKind::ReferenceExact { .. } | PredictionKind::RungeKutta4
    ) {
        return Err(PredictionError::InvalidInput(format!(
            "lookup table reference must be reference_exact or rk4, got {}",
            reference.kind()
        )));
    }
    if level.dim() != model.state_dim() {
        return Err(ModelError::Dimension {
            what: "level-set bounds",
            expected: model.state_dim(),
            got: level.dim(),
        }
        .into());
    }
    let axes: Vec<Vec<f64>> = level
        .inflated(1.1)
        .bounds
        .iter()
        .map(|&(lo, hi)| table::axis_with_origin(lo, hi, points_per_axis))
        .collect();
    let nodes = table::node_count(&axes);
    let images: Vec<Result<Vec<f64>, PredictionError>> = (0..nodes)
        .into_par_iter()
        .map(|flat| {
            let x = table::node_point(&axes, flat);
            if x.iter().all(|&v| v == 0.0) {
                Ok(vec![0.0; x.len()])
            } else {
                reference.predict(&x)
            }
        })
        .collect();
    let mut values = Vec::with_capacity(nodes * model.state_dim());
    for image in images {
        values.extend(image?);
    }
    let table = LookupTable::new(reference.step(), axes, values)?;
    PredictionModel::lookup_table(model.clone(), Arc::new(table))
}
