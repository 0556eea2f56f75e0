//! Trace verification: the reference decay `S`, the convergence criterion
//! `V(x(t+h)) ≤ S(t)` and the non-monotone decrease conditions between
//! transmissions.
//!
//! Every check reports its worst margin (slack of the inequality, negative
//! when violated) and where it occurred.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::certificates::CertifiedConstants;
use crate::dynamics::{Gamma, SystemModel};
use crate::integrate::rk4_scalar;
use crate::simulator::SimTrace;

/// Largest RK4 step used when `γ` has no closed-form solution.
pub const DECAY_MAX_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("decay grid does not match the trace: {0}")]
    GridMismatch(String),
}

/// Relative tolerance applied to `max(V₀, 1)`.
pub fn check_tolerance(v0: f64) -> f64 {
    1e-9 * v0.max(1.0)
}

/// Incremental evaluator of `S` with `Ṡ = −σγ(S)`, `S(0) = V₀`, for
/// nondecreasing query times. Linear `γ` uses the closed form.
#[derive(Debug, Clone)]
pub struct DecayStepper {
    gamma: Gamma,
    sigma: f64,
    v0: f64,
    t: f64,
    s: f64,
    max_step: f64,
}

impl DecayStepper {
    pub fn new(gamma: Gamma, sigma: f64, v0: f64) -> Self {
        Self::with_max_step(gamma, sigma, v0, DECAY_MAX_STEP)
    }

    pub fn with_max_step(gamma: Gamma, sigma: f64, v0: f64, max_step: f64) -> Self {
        Self {
            gamma,
            sigma,
            v0,
            t: 0.0,
            s: v0,
            max_step,
        }
    }

    /// `S(t)`; `t` must not precede the previous query on the numeric path.
    pub fn advance_to(&mut self, t: f64) -> f64 {
        if let Some(rate) = self.gamma.linear_rate() {
            return self.v0 * (-self.sigma * rate * t).exp();
        }
        self.step_numeric(t)
    }

    /// RK4 value regardless of whether a closed form exists.
    pub fn step_numeric(&mut self, t: f64) -> f64 {
        debug_assert!(t >= self.t, "decay queries must be nondecreasing");
        let span = t - self.t;
        if span > 0.0 {
            let steps = (span / self.max_step).ceil().max(1.0) as usize;
            let dt = span / steps as f64;
            for _ in 0..steps {
                let (sigma, gamma) = (self.sigma, &self.gamma);
                self.s = rk4_scalar(self.s, dt, |s| -sigma * gamma.eval(s.max(0.0))).max(0.0);
            }
            self.t = t;
        }
        self.s
    }
}

/// `S(t, x₀)` sampled on a time grid.
#[derive(Debug, Clone)]
pub struct ReferenceDecay {
    pub sigma: f64,
    pub gamma: Gamma,
    pub v0: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ReferenceDecay {
    pub fn new(gamma: Gamma, sigma: f64, v0: f64, grid: &[f64]) -> Result<Self, AnalysisError> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(AnalysisError::InvalidInput(format!("sigma {sigma} not in (0, 1)")));
        }
        if !(v0 >= 0.0 && v0.is_finite()) {
            return Err(AnalysisError::InvalidInput(format!("V0 = {v0}")));
        }
        if grid.iter().any(|t| !(*t >= 0.0)) || grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(AnalysisError::InvalidInput("grid must be nonnegative and nondecreasing".into()));
        }
        let mut stepper = DecayStepper::new(gamma.clone(), sigma, v0);
        let values = grid.iter().map(|&t| stepper.advance_to(t)).collect();
        Ok(Self {
            sigma,
            gamma,
            v0,
            times: grid.to_vec(),
            values,
        })
    }

    /// Decay sampled on a trace's own time grid.
    pub fn for_trace(trace: &SimTrace) -> Result<Self, AnalysisError> {
        Self::new(trace.model.gamma().clone(), trace.sigma, trace.v0(), &trace.t)
    }

    /// `S(t)` at an arbitrary time, independent of the stored grid.
    pub fn value_at(&self, t: f64) -> f64 {
        DecayStepper::new(self.gamma.clone(), self.sigma, self.v0).advance_to(t)
    }

    /// RK4 integration on the same grid, for cross-checking the closed form.
    pub fn integrated(&self) -> Vec<f64> {
        let mut stepper = DecayStepper::new(self.gamma.clone(), self.sigma, self.v0);
        self.times.iter().map(|&t| stepper.step_numeric(t)).collect()
    }
}

/// `S(·, x₀)` with `S(0) = V(x₀)` on `grid`.
pub fn reference_decay(model: &SystemModel, sigma: f64, x0: &[f64], grid: &[f64]) -> Result<ReferenceDecay, AnalysisError> {
    model
        .check_state(x0)
        .map_err(|e| AnalysisError::InvalidInput(e.to_string()))?;
    ReferenceDecay::new(model.gamma().clone(), sigma, model.v(x0), grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Time(f64),
    /// Index of the earlier event of a consecutive pair.
    Event(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Time(t) => write!(f, "t = {t:.9}"),
            Location::Event(l) => write!(f, "event {l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub status: CheckStatus,
    pub worst_margin: Option<f64>,
    pub location: Option<Location>,
    pub evaluated: u64,
    pub note: Option<String>,
}

impl CheckOutcome {
    fn from_margins(name: &str, tolerance: f64, worst: Option<(f64, Location)>, evaluated: u64) -> Self {
        let status = match worst {
            Some((m, _)) if !(m >= -tolerance) => CheckStatus::Fail,
            _ => CheckStatus::Pass,
        };
        Self {
            name: name.to_string(),
            status,
            worst_margin: worst.map(|w| w.0),
            location: worst.map(|w| w.1),
            evaluated,
            note: None,
        }
    }

    fn skipped(name: &str, note: &str) -> Self {
        Self {
            name: name.to_string(),
            status: CheckStatus::Skipped,
            worst_margin: None,
            location: None,
            evaluated: 0,
            note: Some(note.to_string()),
        }
    }

    fn with_note(mut self, note: &str) -> Self {
        self.note = Some(note.to_string());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CheckReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.outcomes.iter().filter(|o| o.status == CheckStatus::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }

    pub fn extend(&mut self, other: CheckReport) {
        self.outcomes.extend(other.outcomes);
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            let status = match o.status {
                CheckStatus::Pass => "pass",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skipped => "skip",
            };
            write!(f, "{status:<5} {:<28}", o.name)?;
            if let Some(m) = o.worst_margin {
                write!(f, " worst margin {m:+.3e}")?;
            }
            if let Some(loc) = o.location {
                write!(f, " at {loc}")?;
            }
            if let Some(note) = &o.note {
                write!(f, " ({note})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn track(worst: &mut Option<(f64, Location)>, margin: f64, at: Location) {
    if worst.is_none_or(|(m, _)| margin < m || margin.is_nan()) {
        *worst = Some((margin, at));
    }
}

fn monitor_outcome(name: &str, tolerance: f64, w: &crate::simulator::Worst) -> CheckOutcome {
    let worst = (w.checked > 0).then_some((w.margin, Location::Time(w.t)));
    CheckOutcome::from_margins(name, tolerance, worst, w.checked)
}

/// Checks `V(x(t)) ≤ S(t − h)` at every recorded row with `t ≥ h`, and
/// reports the simulator's sub-step monitor for the same inequality.
pub fn check_convergence_criterion(trace: &SimTrace, decay: &ReferenceDecay) -> Result<CheckReport, AnalysisError> {
    if decay.times.len() != trace.t.len() || decay.times.iter().zip(&trace.t).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(AnalysisError::GridMismatch(format!(
            "{} decay samples for {} trace rows",
            decay.times.len(),
            trace.t.len()
        )));
    }
    let tolerance = check_tolerance(trace.v0());
    let h = trace.h;
    let match_tol = 1e-9 * h;
    let mut worst = None;
    let mut evaluated = 0;
    for (i, &t) in trace.t.iter().enumerate() {
        if t < h - match_tol {
            continue;
        }
        let target = t - h;
        let j = trace.t.partition_point(|&s| s < target - match_tol);
        if j >= trace.t.len() || (trace.t[j] - target).abs() > match_tol {
            return Err(AnalysisError::GridMismatch(format!("no row at t − h for t = {t}")));
        }
        evaluated += 1;
        track(&mut worst, decay.values[j] - trace.v[i], Location::Time(t));
    }
    Ok(CheckReport {
        outcomes: vec![
            CheckOutcome::from_margins("criterion_rows", tolerance, worst, evaluated),
            monitor_outcome("criterion_substeps", tolerance, &trace.monitor.criterion),
        ],
    })
}

/// Checks between consecutive transmissions `τ_l < τ_{l+1}`:
///
/// - `V(x(τ_l + r)) ≤ V(x(τ_l))` for `0 ≤ r < τ_{l+1} − τ_l` (rows and
///   every sub-step),
/// - `V(x(τ_{l+1})) − V(x(τ_l)) ≤ −(τ_{l+1} − τ_l)·σγ(V(x(τ_l)))`,
/// - spacing `h ≤ τ_{l+1} − τ_l ≤ (ν+1)h`,
/// - `½(V(x) + V(x̂)) ≤ c` at every transmission,
///
/// plus the simulator's hold-soundness and level-set monitors.
pub fn check_nonmonotone_conditions(trace: &SimTrace, constants: &CertifiedConstants) -> CheckReport {
    let tolerance = check_tolerance(trace.v0());
    let mut report = CheckReport::default();

    let mut worst = None;
    let mut event = 0;
    for (i, &t) in trace.t.iter().enumerate() {
        while event + 1 < trace.events.len() && trace.events[event + 1].row <= i {
            event += 1;
        }
        if let Some(e) = trace.events.get(event) {
            if i > e.row {
                track(&mut worst, e.v - trace.v[i], Location::Time(t));
            }
        }
    }
    report
        .outcomes
        .push(CheckOutcome::from_margins("nonincreasing_rows", tolerance, worst, trace.len() as u64));
    report
        .outcomes
        .push(monitor_outcome("nonincreasing_substeps", tolerance, &trace.monitor.event_bound));

    if trace.events.len() < 2 {
        report.outcomes.push(CheckOutcome::skipped(
            "event_decrease",
            "fewer than two transmissions",
        ));
        report.outcomes.push(
            CheckOutcome::from_margins("spacing", 0.0, None, 0).with_note("vacuous: fewer than two transmissions"),
        );
    } else {
        let mut decrease = None;
        let mut spacing = None;
        for (l, pair) in trace.events.windows(2).enumerate() {
            let dk = pair[1].k - pair[0].k;
            let gap = dk as f64 * trace.h;
            let allowed = pair[0].v - gap * constants.sigma * trace.model.gamma().eval(pair[0].v);
            track(&mut decrease, allowed - pair[1].v, Location::Event(l));
            let slack = (dk as f64 - 1.0).min((trace.nu as f64 + 1.0) - dk as f64);
            track(&mut spacing, slack, Location::Event(l));
        }
        let pairs = trace.events.len() as u64 - 1;
        report
            .outcomes
            .push(CheckOutcome::from_margins("event_decrease", tolerance, decrease, pairs));
        report.outcomes.push(CheckOutcome::from_margins("spacing", 0.0, spacing, pairs));
    }

    let mut composite = None;
    for e in &trace.events {
        let xhat_v = trace.model.v(trace.xhat_at(e.row));
        let value = 0.5 * (trace.v[e.row] + xhat_v);
        track(&mut composite, constants.c - value, Location::Time(e.t));
    }
    report.outcomes.push(CheckOutcome::from_margins(
        "composite_level",
        tolerance,
        composite,
        trace.events.len() as u64,
    ));
    report
        .outcomes
        .push(monitor_outcome("hold_budget", tolerance, &trace.monitor.hold_budget));
    report
        .outcomes
        .push(monitor_outcome("level_set", tolerance, &trace.monitor.level_set));
    report
}

/// Whether the premises `C₁ ≤ C₂ − r·σγ(C₂)` and `C₂ ≤ S(s)` hold; when they
/// do, `C₁ ≤ S(s + r)` follows. Negative or non-finite `r`, `s` count as
/// failed premises.
pub fn decay_chain_holds(c1: f64, c2: f64, r: f64, s: f64, decay: &ReferenceDecay) -> bool {
    if !(r >= 0.0 && s >= 0.0 && r.is_finite() && s.is_finite()) {
        return false;
    }
    c1 <= c2 - r * decay.sigma * decay.gamma.eval(c2) && c2 <= decay.value_at(s)
}
