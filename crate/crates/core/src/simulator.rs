//! Closed-loop simulation of the sampled-data loop with a prediction-based
//! actuator.
//!
//! Between sampling instants the plant flows under the constant input
//! `κ(x̂)`; at each instant the trigger sees `x(kh)` first, then the
//! actuator's `x̂` jumps to the received state or to its own prediction.
//! Flows use fixed-step RK4 aligned with the sampling grid.
//!
//! An online monitor checks the decay guarantees at every integration
//! sub-step, so the checks do not depend on how densely rows are recorded.

use std::convert::Infallible;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::DecayStepper;
use crate::certificates::CertifiedConstants;
use crate::dynamics::{ModelError, SystemModel};
use crate::integrate::Rk4;
use crate::prediction::{PredictionError, PredictionKind, PredictionModel};
use crate::trigger::{default_nu, Reason, TriggerError, TriggerState};

pub const DEFAULT_SUBSTEPS: usize = 20;
/// Runs abort once `V(x)` exceeds this multiple of the level `c`.
pub const ESCAPE_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sampling period {h:e} exceeds the certified bound {h_max:e}; set the unsafe override to run anyway")]
    UnsafeStep { h: f64, h_max: f64 },
    #[error("initial state has V = {v0} > c = {c}")]
    OutsideLevelSet { v0: f64, c: f64 },
    #[error("state {state:?} left the safety region at t = {t}")]
    Escaped { t: f64, state: Vec<f64> },
    #[error("at t = {t}: {source}")]
    Feedback { t: f64, source: ModelError },
    #[error(transparent)]
    Trigger(#[from] TriggerError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
    #[error("sensor and actuator predictions differ at sample {k}: {sensor:?} vs {actuator:?}")]
    MirrorMismatch { k: u64, sensor: Vec<f64>, actuator: Vec<f64> },
    #[error("traces are not comparable: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Transmit according to the trigger rule.
    EventTriggered,
    /// Transmit at every sampling instant.
    Periodic,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: SystemModel,
    pub prediction: PredictionKind,
    pub mode: Mode,
    pub h: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    /// Maximum number of periods between transmissions; `None` uses
    /// [`default_nu`].
    pub nu: Option<u64>,
    pub substeps: usize,
    /// Record every `decimation`-th integration sub-step. Sampling instants
    /// are always recorded.
    pub decimation: usize,
    /// Carried into the summary for randomised batteries; a single run is
    /// deterministic.
    pub seed: u64,
    pub unsafe_h_override: bool,
}

impl SimConfig {
    pub fn new(model: SystemModel, prediction: PredictionKind, h: f64, horizon: f64, x0: Vec<f64>) -> Self {
        Self {
            model,
            prediction,
            mode: Mode::EventTriggered,
            h,
            horizon,
            x0,
            nu: None,
            substeps: DEFAULT_SUBSTEPS,
            decimation: 1,
            seed: 0,
            unsafe_h_override: false,
        }
    }

    fn validate(&self, constants: &CertifiedConstants) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h = {} must be positive", self.h));
        }
        if !(self.horizon >= self.h && self.horizon.is_finite()) {
            return bad(format!("horizon {} shorter than h = {}", self.horizon, self.h));
        }
        if self.substeps == 0 || self.decimation == 0 {
            return bad("substeps and decimation must be >= 1".into());
        }
        self.model
            .check_state(&self.x0)
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if self.x0.iter().any(|v| !v.is_finite()) {
            return bad(format!("non-finite x0 {:?}", self.x0));
        }
        if self.h > constants.h_sigma_masp && !self.unsafe_h_override {
            return Err(SimError::UnsafeStep {
                h: self.h,
                h_max: constants.h_sigma_masp,
            });
        }
        let v0 = self.model.v(&self.x0);
        if v0 > constants.c {
            return Err(SimError::OutsideLevelSet { v0, c: constants.c });
        }
        Ok(())
    }
}

/// Worst margin seen by a monitored inequality; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Worst {
    pub margin: f64,
    pub t: f64,
    pub checked: u64,
}

impl Default for Worst {
    fn default() -> Self {
        Self {
            margin: f64::INFINITY,
            t: f64::NAN,
            checked: 0,
        }
    }
}

impl Worst {
    fn update(&mut self, margin: f64, t: f64) {
        self.checked += 1;
        if margin < self.margin || margin.is_nan() {
            self.margin = margin;
            self.t = t;
        }
    }
}

/// Inequalities checked at every integration sub-step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MonitorReport {
    /// `S(t − h) − V(x(t))` for `t ≥ h`.
    pub criterion: Worst,
    /// `V(x(τ_l)) − V(x(t))` on `[τ_l, τ_{l+1})`.
    pub event_bound: Worst,
    /// `budget_k − V(x((k+1)h))` after every held sample.
    pub hold_budget: Worst,
    /// `c − V(x(t))`.
    pub level_set: Worst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub k: u64,
    pub t: f64,
    /// Index of the trace row at this instant.
    pub row: usize,
    pub reason: Reason,
    /// `V(x)` at the event, the new reference value.
    pub v: f64,
}

/// Recorded simulation output. Vector quantities are stored flat, row-major.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub model: SystemModel,
    pub prediction: String,
    pub mode: Mode,
    pub sigma: f64,
    pub c: f64,
    pub h: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub nu: u64,
    pub substeps: usize,
    pub decimation: usize,
    pub seed: u64,
    pub state_dim: usize,
    pub input_dim: usize,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// `S(t − h)`, NaN for `t < h`.
    pub s: Vec<f64>,
    /// Trigger outcome at sampling instants, `None` on sub-step rows.
    pub sample: Vec<Option<Reason>>,
    pub lambda: Vec<f64>,
    pub budget: Vec<f64>,
    pub events: Vec<Event>,
    pub monitor: MonitorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub model: String,
    pub prediction: String,
    pub mode: Mode,
    pub h: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub nu: u64,
    pub substeps: usize,
    pub seed: u64,
    pub samples: u64,
    pub transmissions: usize,
    pub min_gap: f64,
    pub mean_gap: f64,
    pub max_gap: f64,
    pub half_life: Option<f64>,
    pub input_energy: f64,
    pub final_state: Vec<f64>,
    pub final_v: f64,
    pub monitor: MonitorReport,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn x_at(&self, row: usize) -> &[f64] {
        &self.x[row * self.state_dim..(row + 1) * self.state_dim]
    }

    pub fn xhat_at(&self, row: usize) -> &[f64] {
        &self.xhat[row * self.state_dim..(row + 1) * self.state_dim]
    }

    pub fn u_at(&self, row: usize) -> &[f64] {
        &self.u[row * self.input_dim..(row + 1) * self.input_dim]
    }

    pub fn v0(&self) -> f64 {
        self.v.first().copied().unwrap_or(0.0)
    }

    /// Time span actually simulated: the last sampling instant.
    pub fn end_time(&self) -> f64 {
        self.t.last().copied().unwrap_or(0.0)
    }

    pub fn transmissions(&self) -> usize {
        self.events.len()
    }

    /// Times between consecutive transmissions.
    pub fn gaps(&self) -> Vec<f64> {
        self.events.windows(2).map(|w| (w[1].k - w[0].k) as f64 * self.h).collect()
    }

    /// Mean gap; by convention the horizon when there is a single event.
    pub fn mean_gap(&self) -> f64 {
        let gaps = self.gaps();
        if gaps.is_empty() {
            self.horizon
        } else {
            gaps.iter().sum::<f64>() / gaps.len() as f64
        }
    }

    pub fn min_gap(&self) -> f64 {
        self.gaps().into_iter().reduce(f64::min).unwrap_or(self.horizon)
    }

    pub fn max_gap(&self) -> f64 {
        self.gaps().into_iter().reduce(f64::max).unwrap_or(self.horizon)
    }

    /// First time `V` reaches half its initial value, interpolated linearly
    /// between rows.
    pub fn half_life(&self) -> Option<f64> {
        let target = 0.5 * self.v0();
        if self.v0() == 0.0 {
            return Some(0.0);
        }
        let i = self.v.iter().position(|&v| v <= target)?;
        if i == 0 {
            return Some(self.t[0]);
        }
        let (t0, t1, v0, v1) = (self.t[i - 1], self.t[i], self.v[i - 1], self.v[i]);
        Some(t0 + (t1 - t0) * (v0 - target) / (v0 - v1))
    }

    /// `∫‖u‖² dt` by the trapezoidal rule over the recorded rows.
    pub fn input_energy(&self) -> f64 {
        let sq = |row: usize| self.u_at(row).iter().map(|u| u * u).sum::<f64>();
        (1..self.len())
            .map(|i| 0.5 * (self.t[i] - self.t[i - 1]) * (sq(i) + sq(i - 1)))
            .sum()
    }

    pub fn final_state(&self) -> &[f64] {
        self.x_at(self.len() - 1)
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            model: self.model.name().to_string(),
            prediction: self.prediction.clone(),
            mode: self.mode,
            h: self.h,
            horizon: self.horizon,
            x0: self.x0.clone(),
            nu: self.nu,
            substeps: self.substeps,
            seed: self.seed,
            samples: self.sample.iter().filter(|s| s.is_some()).count() as u64,
            transmissions: self.transmissions(),
            min_gap: self.min_gap(),
            mean_gap: self.mean_gap(),
            max_gap: self.max_gap(),
            half_life: self.half_life(),
            input_energy: self.input_energy(),
            final_state: self.final_state().to_vec(),
            final_v: *self.v.last().unwrap_or(&0.0),
            monitor: self.monitor,
        }
    }

    /// Writes the trace as CSV. Quantities undefined on a row are left empty.
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        self.write_csv_strided(w, 1)
    }

    /// Writes every `stride`-th row plus every transmission and the last row.
    pub fn write_csv_strided<W: Write>(&self, w: W, stride: usize) -> io::Result<()> {
        let stride = stride.max(1);
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.state_dim).map(|i| format!("x{i}")));
        header.extend((1..=self.state_dim).map(|i| format!("xhat{i}")));
        header.extend((1..=self.input_dim).map(|i| format!("u{i}")));
        header.extend(["V", "S", "transmit", "reason", "lambda", "budget"].map(String::from));
        w.write_record(&header)?;
        let num = |v: f64| if v.is_nan() { String::new() } else { format!("{v:.16e}") };
        let mut fields = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            let event = self.sample[i].is_some_and(Reason::transmits);
            if i % stride != 0 && !event && i + 1 != self.len() {
                continue;
            }
            fields.clear();
            fields.push(num(self.t[i]));
            fields.extend(self.x_at(i).iter().map(|&v| num(v)));
            fields.extend(self.xhat_at(i).iter().map(|&v| num(v)));
            fields.extend(self.u_at(i).iter().map(|&v| num(v)));
            fields.push(num(self.v[i]));
            fields.push(num(self.s[i]));
            let (transmit, reason) = match self.sample[i] {
                Some(r) => (if r.transmits() { "1" } else { "0" }, r.as_str()),
                None => ("0", ""),
            };
            fields.push(transmit.to_string());
            fields.push(reason.to_string());
            fields.push(num(self.lambda[i]));
            fields.push(num(self.budget[i]));
            w.write_record(&fields)?;
        }
        w.flush()
    }
}

/// Simulates the loop in the configured mode.
pub fn run(config: &SimConfig, constants: &CertifiedConstants) -> Result<SimTrace, SimError> {
    config.validate(constants)?;
    let model = &config.model;
    let n = model.state_dim();
    let m = model.input_dim();
    let h = config.h;
    let dt = h / config.substeps as f64;
    let samples = ((config.horizon / h) * (1.0 + 1e-12)).floor() as u64;

    let prediction = PredictionModel::new(model.clone(), config.prediction.clone(), h)?;
    let nu = match config.mode {
        Mode::Periodic => 0,
        Mode::EventTriggered => config.nu.unwrap_or_else(|| default_nu(&prediction, constants)),
    };
    let mut trigger = TriggerState::new(prediction.clone(), *constants, nu);

    let v0 = model.v(&config.x0);
    let mut decay = DecayStepper::new(model.gamma().clone(), constants.sigma, v0);
    let escape = ESCAPE_FACTOR * constants.c;
    let tol_rows = config.substeps / config.decimation + 1;
    let capacity = (samples as usize).saturating_mul(tol_rows).min(1 << 26) + 1;

    let mut trace = SimTrace {
        model: model.clone(),
        prediction: config.prediction.to_string(),
        mode: config.mode,
        sigma: constants.sigma,
        c: constants.c,
        h,
        horizon: config.horizon,
        x0: config.x0.clone(),
        nu,
        substeps: config.substeps,
        decimation: config.decimation,
        seed: config.seed,
        state_dim: n,
        input_dim: m,
        t: Vec::with_capacity(capacity),
        x: Vec::with_capacity(capacity * n),
        xhat: Vec::with_capacity(capacity * n),
        u: Vec::with_capacity(capacity * m),
        v: Vec::with_capacity(capacity),
        s: Vec::with_capacity(capacity),
        sample: Vec::with_capacity(capacity),
        lambda: Vec::with_capacity(capacity),
        budget: Vec::with_capacity(capacity),
        events: Vec::new(),
        monitor: MonitorReport::default(),
    };

    let mut x = config.x0.clone();
    let mut xhat = config.x0.clone();
    let mut u = vec![0.0; m];
    let mut rk4 = Rk4::new(n);
    let mut v_event = v0;
    let mut pending_budget: Option<f64> = None;

    for k in 0..=samples {
        let t_k = k as f64 * h;
        let decision = trigger.evaluate(k, &x).map_err(|e| match e {
            TriggerError::Model(source) => SimError::Feedback { t: t_k, source },
            other => SimError::Trigger(other),
        })?;
        if decision.transmit {
            xhat.copy_from_slice(&x);
        } else {
            xhat = prediction.predict(&xhat)?;
        }
        if xhat.iter().zip(trigger.xhat_sens()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(SimError::MirrorMismatch {
                k,
                sensor: trigger.xhat_sens().to_vec(),
                actuator: xhat.clone(),
            });
        }
        model
            .kappa_into(&xhat, &mut u)
            .map_err(|source| SimError::Feedback { t: t_k, source })?;

        let v = model.v(&x);
        if let Some(budget) = pending_budget.take() {
            trace.monitor.hold_budget.update(budget - v, t_k);
        }
        // the interval ending here is checked against the previous event
        trace.monitor.event_bound.update(v_event - v, t_k);
        if decision.transmit {
            v_event = v;
            trace.events.push(Event {
                k,
                t: t_k,
                row: trace.t.len(),
                reason: decision.reason,
                v,
            });
        } else {
            pending_budget = decision.budget;
        }
        let s = if k >= 1 { decay.advance_to((k - 1) as f64 * h) } else { f64::NAN };
        monitor_point(&mut trace.monitor, s, v, constants.c, t_k);
        push_row(
            &mut trace,
            t_k,
            &x,
            &xhat,
            &u,
            v,
            s,
            Some(decision.reason),
            decision.lambda.unwrap_or(f64::NAN),
            decision.budget.unwrap_or(f64::NAN),
        );

        if k == samples {
            break;
        }
        for j in 1..=config.substeps {
            rk4.step(&mut x, dt, |y, dy| {
                model.f_into(y, &u, dy);
                Ok::<(), Infallible>(())
            })
            .unwrap_or_else(|e| match e {});
            let v = model.v(&x);
            if j == config.substeps {
                // the next sampling instant is handled by the next iteration
                if !(v <= escape) {
                    return Err(SimError::Escaped { t: (k + 1) as f64 * h, state: x });
                }
                break;
            }
            let t = t_k + j as f64 * dt;
            if !(v <= escape) {
                return Err(SimError::Escaped { t, state: x });
            }
            trace.monitor.event_bound.update(v_event - v, t);
            let s = if k >= 1 {
                decay.advance_to((k - 1) as f64 * h + j as f64 * dt)
            } else {
                f64::NAN
            };
            monitor_point(&mut trace.monitor, s, v, constants.c, t);
            if j % config.decimation == 0 {
                push_row(&mut trace, t, &x, &xhat, &u, v, s, None, f64::NAN, f64::NAN);
            }
        }
    }
    Ok(trace)
}

/// Periodic baseline: every sampling instant transmits.
pub fn run_time_triggered(config: &SimConfig, constants: &CertifiedConstants) -> Result<SimTrace, SimError> {
    let config = SimConfig {
        mode: Mode::Periodic,
        ..config.clone()
    };
    run(&config, constants)
}

/// Runs independent scenarios in parallel; results keep the input order.
pub fn run_batch(
    configs: &[(String, SimConfig)],
    constants: &CertifiedConstants,
) -> Vec<(String, Result<SimTrace, SimError>)> {
    configs
        .par_iter()
        .map(|(name, config)| (name.clone(), run(config, constants)))
        .collect()
}

fn monitor_point(monitor: &mut MonitorReport, s: f64, v: f64, c: f64, t: f64) {
    if !s.is_nan() {
        monitor.criterion.update(s - v, t);
    }
    monitor.level_set.update(c - v, t);
}

#[allow(clippy::too_many_arguments)]
fn push_row(
    trace: &mut SimTrace,
    t: f64,
    x: &[f64],
    xhat: &[f64],
    u: &[f64],
    v: f64,
    s: f64,
    sample: Option<Reason>,
    lambda: f64,
    budget: f64,
) {
    trace.t.push(t);
    trace.x.extend_from_slice(x);
    trace.xhat.extend_from_slice(xhat);
    trace.u.extend_from_slice(u);
    trace.v.push(v);
    trace.s.push(s);
    trace.sample.push(sample);
    trace.lambda.push(lambda);
    trace.budget.push(budget);
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub prediction: String,
    pub mode: Mode,
    pub transmissions: usize,
    pub mean_gap: f64,
    pub min_gap: f64,
    pub half_life: Option<f64>,
    pub input_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub model: String,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>9} {:>13} {:>10} {:>10} {:>10} {:>12}\n",
            "prediction", "mode", "transmissions", "mean_gap", "min_gap", "half_life", "input_energy"
        );
        for r in &self.rows {
            let mode = match r.mode {
                Mode::EventTriggered => "event",
                Mode::Periodic => "periodic",
            };
            let half = r.half_life.map_or("-".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!(
                "{:<24} {:>9} {:>13} {:>10.4} {:>10.4} {:>10} {:>12.5e}\n",
                r.prediction, mode, r.transmissions, r.mean_gap, r.min_gap, half, r.input_energy
            ));
        }
        out
    }
}

/// Tabulates transmission and decay statistics of traces that share model,
/// initial state and horizon.
pub fn compare(traces: &[&SimTrace]) -> Result<ComparisonReport, SimError> {
    let first = traces
        .first()
        .ok_or_else(|| SimError::Mismatch("no traces to compare".into()))?;
    for t in &traces[1..] {
        if t.model.name() != first.model.name() {
            return Err(SimError::Mismatch(format!(
                "models `{}` and `{}`",
                first.model.name(),
                t.model.name()
            )));
        }
        if t.x0.len() != first.x0.len() || t.x0.iter().zip(&first.x0).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(SimError::Mismatch(format!("initial states {:?} and {:?}", first.x0, t.x0)));
        }
        if t.horizon.to_bits() != first.horizon.to_bits() {
            return Err(SimError::Mismatch(format!("horizons {} and {}", first.horizon, t.horizon)));
        }
    }
    Ok(ComparisonReport {
        model: first.model.name().to_string(),
        x0: first.x0.clone(),
        horizon: first.horizon,
        rows: traces
            .iter()
            .map(|t| ComparisonRow {
                prediction: t.prediction.clone(),
                mode: t.mode,
                transmissions: t.transmissions(),
                mean_gap: t.mean_gap(),
                min_gap: t.min_gap(),
                half_life: t.half_life(),
                input_energy: t.input_energy(),
            })
            .collect(),
    })
}
