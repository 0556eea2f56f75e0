//! Level-set constants, the σ-MASP sampling bound and the inter-sample
//! Lyapunov bound.
//!
//! All constants are estimated on a uniform grid over a box enclosing
//! `𝒳_c = {V ≤ c}`. Supremum estimates are inflated and infimum estimates
//! deflated by the factors in [`EstimationOptions`]. Evaluation is parallel
//! over grid points; reductions run in index order so the result does not
//! depend on scheduling.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{LevelSet, ModelError, SystemModel};
use crate::linalg;

pub const DEFAULT_GRID: usize = 200;
pub const MIN_GRID: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite {quantity} at {point:?}")]
    NonFinite { quantity: &'static str, point: Vec<f64> },
    #[error("Lyapunov decrease violated at {point:?}: {detail}")]
    AssumptionViolated { point: Vec<f64>, detail: String },
    #[error("decay rate estimate {0} is not positive")]
    NonPositiveRate(f64),
    #[error("no grid point of the level set lies outside the margin ball")]
    EmptyLevelSet,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

/// How the rate `ρ` of a linear decay function `γ(s) = ρs` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaRateMethod {
    /// `inf −ℒ_f V(x, κ(x)) / V(x)`: the largest admissible linear rate.
    DirectRatio,
    /// `inf(−ℒ_f V/‖x‖²) / sup(V/‖x‖²)`, i.e. `γ = α₃ ∘ α₂⁻¹` with quadratic
    /// comparison functions.
    Comparison,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationOptions {
    /// Multiplier applied to supremum estimates.
    pub sup_inflation: f64,
    /// Multiplier applied to infimum estimates.
    pub inf_deflation: f64,
    pub gamma_method: GammaRateMethod,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            sup_inflation: 1.05,
            inf_deflation: 0.95,
            gamma_method: GammaRateMethod::DirectRatio,
            fd_step: 1e-6,
        }
    }
}

impl EstimationOptions {
    /// No safety factors; used where exact grid values are wanted.
    pub fn exact() -> Self {
        Self {
            sup_inflation: 1.0,
            inf_deflation: 1.0,
            ..Self::default()
        }
    }
}

/// Grid points of a level set, stored flat with stride `dim`.
#[derive(Debug, Clone)]
pub struct LevelSetSamples {
    pub dim: usize,
    pub points: Vec<f64>,
    /// Largest norm among the samples.
    pub radius: f64,
}

impl LevelSetSamples {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }
}

/// Uniform grid with `resolution` points per axis over the level set's box,
/// keeping the points with `V(x) ≤ c`.
pub fn sample_level_set(model: &SystemModel, level: &LevelSet, resolution: usize) -> Result<LevelSetSamples, CertError> {
    let dim = model.state_dim();
    if level.dim() != dim {
        return Err(ModelError::Dimension {
            what: "level-set bounds",
            expected: dim,
            got: level.dim(),
        }
        .into());
    }
    if resolution < 2 {
        return Err(CertError::InvalidInput(format!("grid resolution {resolution} < 2")));
    }
    let total = resolution
        .checked_pow(dim as u32)
        .ok_or_else(|| CertError::InvalidInput("grid too large".into()))?;
    let axis = |i: usize, k: usize| {
        let (lo, hi) = level.bounds[i];
        lo + (hi - lo) * k as f64 / (resolution - 1) as f64
    };
    let mut points = Vec::new();
    let mut radius = 0.0f64;
    let mut x = vec![0.0; dim];
    for flat in 0..total {
        let mut rem = flat;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = axis(i, rem % resolution);
            rem /= resolution;
        }
        if model.v(&x) <= level.c {
            radius = radius.max(linalg::norm(&x));
            points.extend_from_slice(&x);
        }
    }
    if points.is_empty() {
        return Err(CertError::EmptyLevelSet);
    }
    Ok(LevelSetSamples { dim, points, radius })
}

/// Evaluates `f` at every sample in parallel; the first error in sample order
/// wins.
fn par_eval<T, F>(samples: &LevelSetSamples, f: F) -> Result<Vec<T>, CertError>
where
    T: Send,
    F: Fn(&[f64]) -> Result<T, CertError> + Sync + Send,
{
    let results: Vec<Result<T, CertError>> = samples.points.par_chunks(samples.dim).map(f).collect();
    results.into_iter().collect()
}

fn finite(value: f64, quantity: &'static str, x: &[f64]) -> Result<f64, CertError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(CertError::NonFinite {
            quantity,
            point: x.to_vec(),
        })
    }
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::INFINITY, f64::min)
}

/// Central-difference Jacobian of `g: ℝⁿ → ℝᵐ` at `x`, row-major `m × n`.
fn fd_jacobian(x: &[f64], out_dim: usize, rel_step: f64, mut g: impl FnMut(&[f64], &mut [f64])) -> Vec<f64> {
    let n = x.len();
    let mut jac = vec![0.0; out_dim * n];
    let mut xp = x.to_vec();
    let mut plus = vec![0.0; out_dim];
    let mut minus = vec![0.0; out_dim];
    for j in 0..n {
        let step = rel_step * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        g(&xp, &mut plus);
        xp[j] = x[j] - step;
        g(&xp, &mut minus);
        xp[j] = x[j];
        for i in 0..out_dim {
            jac[i * n + j] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    jac
}

/// Inputs `κ(x₃)` used as candidates in the Lipschitz estimate of `f(·, u)`:
/// a coarse sub-grid of the level set plus, per input component, the inputs
/// at the full-grid points where that component is extremal. For
/// control-affine plants the Jacobian norm is convex in `u`, so for scalar
/// inputs these extremes attain the supremum.
fn input_candidates(
    model: &SystemModel,
    level: &LevelSet,
    resolution: usize,
    samples: &LevelSetSamples,
) -> Result<Vec<Vec<f64>>, CertError> {
    let kappa_checked = |x: &[f64]| -> Result<Vec<f64>, CertError> {
        let u = model.kappa(x)?;
        for &ui in &u {
            finite(ui, "feedback", x)?;
        }
        Ok(u)
    };
    let coarse = sample_level_set(model, level, (resolution / 8).max(MIN_GRID))?;
    let mut candidates = par_eval(&coarse, kappa_checked)?;
    let inputs = par_eval(samples, kappa_checked)?;
    for comp in 0..model.input_dim() {
        let mut lo = 0;
        let mut hi = 0;
        for (idx, u) in inputs.iter().enumerate() {
            if u[comp] < inputs[lo][comp] {
                lo = idx;
            }
            if u[comp] > inputs[hi][comp] {
                hi = idx;
            }
        }
        candidates.push(inputs[lo].clone());
        candidates.push(inputs[hi].clone());
    }
    Ok(candidates)
}

/// Grid estimate of `L₁,c = sup ‖f(x₁,κ(x₃)) − f(x₂,κ(x₃))‖/‖x₁ − x₂‖`,
/// computed as the largest spectral norm of the state Jacobian of
/// `f(·, κ(x₃))`. Equal to the difference-quotient supremum on convex level
/// sets when `f` is continuously differentiable.
pub fn estimate_l1(
    model: &SystemModel,
    level: &LevelSet,
    resolution: usize,
    opts: &EstimationOptions,
) -> Result<f64, CertError> {
    check_resolution(resolution)?;
    let samples = sample_level_set(model, level, resolution)?;
    let candidates = input_candidates(model, level, resolution, &samples)?;
    let n = model.state_dim();
    let per_point = par_eval(&samples, |x| {
        let mut best = 0.0f64;
        for u in &candidates {
            let jac = fd_jacobian(x, n, opts.fd_step, |y, out| model.f_into(y, u, out));
            let norm = finite(linalg::spectral_norm(&jac, n, n), "vector-field Jacobian", x)?;
            best = best.max(norm);
        }
        Ok(best)
    })?;
    Ok(max_of(per_point) * opts.sup_inflation)
}

/// Lipschitz constant `L₂,c` of the gradient `V′` on the level set. Exact
/// (no safety factor) when `V` is quadratic.
pub fn estimate_l2(
    model: &SystemModel,
    level: &LevelSet,
    resolution: usize,
    opts: &EstimationOptions,
) -> Result<f64, CertError> {
    check_resolution(resolution)?;
    let n = model.state_dim();
    if let Some(hessian) = model.system().lyapunov_hessian() {
        return Ok(linalg::spectral_norm(&hessian, n, n));
    }
    let samples = sample_level_set(model, level, resolution)?;
    let per_point = par_eval(&samples, |x| {
        let jac = fd_jacobian(x, n, opts.fd_step, |y, out| model.v_grad_into(y, out));
        finite(linalg::spectral_norm(&jac, n, n), "Lyapunov Hessian", x)
    })?;
    Ok(max_of(per_point) * opts.sup_inflation)
}

/// Closed-loop quantities at one sample point.
struct PointEval {
    v: f64,
    lie: f64,
    grad_norm: f64,
    field_norm: f64,
    norm_sq: f64,
}

fn closed_loop_points(
    model: &SystemModel,
    level: &LevelSet,
    resolution: usize,
) -> Result<Vec<PointEval>, CertError> {
    let samples = sample_level_set(model, level, resolution)?;
    let margin = level.margin_fraction * samples.radius;
    let evals = par_eval(&samples, |x| {
        let norm_sq = linalg::dot(x, x);
        if norm_sq.sqrt() < margin {
            return Ok(None);
        }
        let u = model.kappa(x)?;
        let fx = model.f(x, &u)?;
        let g = model.v_grad(x);
        let lie = finite(linalg::dot(&g, &fx), "Lie derivative", x)?;
        if lie >= 0.0 {
            return Err(CertError::AssumptionViolated {
                point: x.to_vec(),
                detail: format!("L_f V = {lie} is not negative"),
            });
        }
        Ok(Some(PointEval {
            v: model.v(x),
            lie,
            grad_norm: linalg::norm(&g),
            field_norm: linalg::norm(&fx),
            norm_sq,
        }))
    })?;
    let evals: Vec<PointEval> = evals.into_iter().flatten().collect();
    if evals.is_empty() {
        return Err(CertError::EmptyLevelSet);
    }
    Ok(evals)
}

/// `M_max,c = sup (‖V′‖‖f‖ + ‖f‖²)/|ℒ_f V|` along `u = κ(x)`, over grid
/// points outside the margin ball.
pub fn estimate_m_max(
    model: &SystemModel,
    level: &LevelSet,
    resolution: usize,
    opts: &EstimationOptions,
) -> Result<f64, CertError> {
    check_resolution(resolution)?;
    let evals = closed_loop_points(model, level, resolution)?;
    let sup = max_of(
        evals
            .iter()
            .map(|e| (e.grad_norm * e.field_norm + e.field_norm * e.field_norm) / e.lie.abs()),
    );
    Ok(sup * opts.sup_inflation)
}

/// Rate `ρ` of a linear decay function `γ(s) = ρs` with
/// `ℒ_f V(x, κ(x)) ≤ −ρV(x)` on the sampled level set.
pub fn estimate_gamma_rate(
    model: &SystemModel,
    level: &LevelSet,
    resolution: usize,
    opts: &EstimationOptions,
) -> Result<f64, CertError> {
    check_resolution(resolution)?;
    let evals = closed_loop_points(model, level, resolution)?;
    let rate = match opts.gamma_method {
        GammaRateMethod::DirectRatio => min_of(evals.iter().map(|e| -e.lie / e.v)),
        GammaRateMethod::Comparison => {
            let decrease = min_of(evals.iter().map(|e| -e.lie / e.norm_sq));
            let growth = max_of(evals.iter().map(|e| e.v / e.norm_sq));
            decrease / growth
        }
    } * opts.inf_deflation;
    if rate > 0.0 && rate.is_finite() {
        Ok(rate)
    } else {
        Err(CertError::NonPositiveRate(rate))
    }
}

/// Checks `ℒ_f V(x, κ(x)) ≤ −γ(V(x))` at every sample outside the margin ball
/// and returns the smallest slack `−ℒ_f V − γ(V)`.
pub fn verify_decay(model: &SystemModel, level: &LevelSet, resolution: usize) -> Result<f64, CertError> {
    let samples = sample_level_set(model, level, resolution)?;
    let margin = level.margin_fraction * samples.radius;
    let slack = par_eval(&samples, |x| {
        if linalg::norm(x) < margin {
            return Ok(f64::INFINITY);
        }
        let u = model.kappa(x)?;
        let lie = finite(linalg::dot(&model.v_grad(x), &model.f(x, &u)?), "Lie derivative", x)?;
        let slack = -lie - model.gamma().eval(model.v(x));
        if slack < 0.0 {
            return Err(CertError::AssumptionViolated {
                point: x.to_vec(),
                detail: format!("L_f V = {lie} exceeds -gamma(V)"),
            });
        }
        Ok(slack)
    })?;
    Ok(min_of(slack))
}

fn check_resolution(resolution: usize) -> Result<(), CertError> {
    if resolution < MIN_GRID {
        Err(CertError::InvalidInput(format!(
            "grid resolution {resolution} below minimum {MIN_GRID}"
        )))
    } else {
        Ok(())
    }
}

/// `μ_c = √e · max{L₁, L₂(1 + L₁√e)}`.
pub fn mu_c(l1: f64, l2: f64) -> f64 {
    let sqrt_e = std::f64::consts::E.sqrt();
    sqrt_e * l1.max(l2 * (1.0 + l1 * sqrt_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaspTerm {
    /// `(3(1−σ)/(2μ_c M_max,c))²`
    Performance,
    /// `(1 + 2L₁,c)⁻¹`
    Lipschitz,
}

impl MaspTerm {
    pub fn as_str(self) -> &'static str {
        match self {
            MaspTerm::Performance => "performance",
            MaspTerm::Lipschitz => "lipschitz",
        }
    }
}

impl fmt::Display for MaspTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaMasp {
    pub h: f64,
    pub performance_term: f64,
    pub lipschitz_term: f64,
    pub active: MaspTerm,
}

fn masp_from(sigma: f64, l1: f64, mu: f64, m_max: f64) -> SigmaMasp {
    let performance_term = {
        let q = 3.0 * (1.0 - sigma) / (2.0 * mu * m_max);
        q * q
    };
    let lipschitz_term = 1.0 / (1.0 + 2.0 * l1);
    let (h, active) = if performance_term <= lipschitz_term {
        (performance_term, MaspTerm::Performance)
    } else {
        (lipschitz_term, MaspTerm::Lipschitz)
    };
    SigmaMasp {
        h,
        performance_term,
        lipschitz_term,
        active,
    }
}

/// Certified level-set constants and the resulting σ-MASP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertifiedConstants {
    pub c: f64,
    pub sigma: f64,
    pub l1: f64,
    pub l2: f64,
    pub mu: f64,
    pub m_max: f64,
    /// Rate of the linear decay function, when the model's γ is linear.
    pub gamma_rate: Option<f64>,
    pub h_sigma_masp: f64,
    pub grid_resolution: usize,
}

impl CertifiedConstants {
    /// Assembles the constants, deriving `μ_c` and the σ-MASP.
    pub fn from_estimates(
        c: f64,
        sigma: f64,
        l1: f64,
        l2: f64,
        m_max: f64,
        gamma_rate: Option<f64>,
        grid_resolution: usize,
    ) -> Result<Self, CertError> {
        let mu = mu_c(l1, l2);
        let masp = masp_from(sigma, l1, mu, m_max);
        let constants = Self {
            c,
            sigma,
            l1,
            l2,
            mu,
            m_max,
            gamma_rate,
            h_sigma_masp: masp.h,
            grid_resolution,
        };
        constants.check_ranges()?;
        Ok(constants)
    }

    fn check_ranges(&self) -> Result<(), CertError> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(CertError::InvalidInput(format!("sigma {} not in (0, 1)", self.sigma)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(CertError::InvalidInput(format!("level {} must be positive", self.c)));
        }
        for (name, v) in [("l1", self.l1), ("l2", self.l2), ("mu", self.mu), ("m_max", self.m_max)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CertError::InvalidInput(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if let Some(rate) = self.gamma_rate {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(CertError::NonPositiveRate(rate));
            }
        }
        if !(self.h_sigma_masp > 0.0 && self.h_sigma_masp.is_finite()) {
            return Err(CertError::InvalidInput(format!("h_sigma_masp {} invalid", self.h_sigma_masp)));
        }
        Ok(())
    }

    /// Validates ranges and that `μ_c` and `h` are exactly what the stored
    /// `L₁`, `L₂`, `M_max` and `σ` produce.
    pub fn validate(&self) -> Result<(), CertError> {
        self.check_ranges()?;
        let mu = mu_c(self.l1, self.l2);
        if mu.to_bits() != self.mu.to_bits() {
            return Err(CertError::InvalidInput(format!("stored mu {} != recomputed {mu}", self.mu)));
        }
        let h = compute_sigma_masp(self)?.h;
        if h.to_bits() != self.h_sigma_masp.to_bits() {
            return Err(CertError::InvalidInput(format!(
                "stored h_sigma_masp {} != recomputed {h}",
                self.h_sigma_masp
            )));
        }
        Ok(())
    }

    /// Serialises as `key = value` lines; floats carry 17 significant digits.
    pub fn to_manifest(&self, model: &str) -> String {
        let masp = masp_from(self.sigma, self.l1, self.mu, self.m_max);
        let mut s = String::new();
        let _ = writeln!(s, "# certified level-set constants");
        let _ = writeln!(s, "model = {model}");
        let _ = writeln!(s, "grid_resolution = {}", self.grid_resolution);
        for (key, v) in [
            ("c", self.c),
            ("sigma", self.sigma),
            ("l1", self.l1),
            ("l2", self.l2),
            ("mu", self.mu),
            ("m_max", self.m_max),
        ] {
            let _ = writeln!(s, "{key} = {v:.16e}");
        }
        if let Some(rate) = self.gamma_rate {
            let _ = writeln!(s, "gamma_rate = {rate:.16e}");
        }
        let _ = writeln!(s, "h_sigma_masp = {:.16e}", self.h_sigma_masp);
        let _ = writeln!(s, "active_term = {}", masp.active);
        s
    }

    /// Parses a manifest, returning the model name and validated constants.
    pub fn from_manifest(text: &str) -> Result<(String, Self), CertError> {
        let entries = parse_key_values(text)?;
        let get = |key: &str| -> Result<(usize, &str), CertError> {
            entries
                .iter()
                .find(|(_, k, _)| k == key)
                .map(|(line, _, v)| (*line, v.as_str()))
                .ok_or_else(|| CertError::Manifest {
                    line: 0,
                    message: format!("missing key `{key}`"),
                })
        };
        let float = |key: &str| -> Result<f64, CertError> {
            let (line, v) = get(key)?;
            v.parse::<f64>().map_err(|e| CertError::Manifest {
                line,
                message: format!("`{key}`: {e}"),
            })
        };
        let (_, model) = get("model")?;
        let (line, grid) = get("grid_resolution")?;
        let grid_resolution = grid.parse::<usize>().map_err(|e| CertError::Manifest {
            line,
            message: format!("`grid_resolution`: {e}"),
        })?;
        let gamma_rate = match get("gamma_rate") {
            Ok(_) => Some(float("gamma_rate")?),
            Err(_) => None,
        };
        let constants = Self {
            c: float("c")?,
            sigma: float("sigma")?,
            l1: float("l1")?,
            l2: float("l2")?,
            mu: float("mu")?,
            m_max: float("m_max")?,
            gamma_rate,
            h_sigma_masp: float("h_sigma_masp")?,
            grid_resolution,
        };
        constants.validate()?;
        Ok((model.to_string(), constants))
    }
}

/// `(line, key, value)` triples of a flat `key = value` file. `#` starts a
/// comment.
pub(crate) fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>, CertError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| CertError::Manifest {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = k.trim().to_string();
        if out.iter().any(|(_, existing, _)| *existing == key) {
            return Err(CertError::Manifest {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        out.push((line, key, v.trim().to_string()));
    }
    Ok(out)
}

/// The σ-MASP `min{(3(1−σ)/(2μ_c M_max,c))², (1 + 2L₁,c)⁻¹}`.
pub fn compute_sigma_masp(constants: &CertifiedConstants) -> Result<SigmaMasp, CertError> {
    let CertifiedConstants { sigma, l1, mu, m_max, .. } = *constants;
    for v in [sigma, l1, mu, m_max] {
        if !v.is_finite() {
            return Err(CertError::InvalidInput(format!("non-finite constant {v}")));
        }
    }
    Ok(masp_from(sigma, l1, mu, m_max))
}

/// Estimates all constants on `level` and checks the model's decay function
/// against the sampled decrease condition.
pub fn certify(
    model: &SystemModel,
    level: &LevelSet,
    sigma: f64,
    resolution: usize,
    opts: &EstimationOptions,
) -> Result<CertifiedConstants, CertError> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(CertError::InvalidInput(format!("sigma {sigma} not in (0, 1)")));
    }
    let l1 = estimate_l1(model, level, resolution, opts)?;
    let l2 = estimate_l2(model, level, resolution, opts)?;
    let m_max = estimate_m_max(model, level, resolution, opts)?;
    verify_decay(model, level, resolution)?;
    CertifiedConstants::from_estimates(
        level.c,
        sigma,
        l1,
        l2,
        m_max,
        model.gamma().linear_rate(),
        resolution,
    )
}

/// `m·⟨g, f⟩ + ⅔·m^{3/2}·μ·(‖g‖‖f‖ + ‖f‖²)`: worst-case growth of `V` over a
/// hold of length `m` from a point with gradient `g` and velocity `f`.
pub fn increment_bound(grad: &[f64], field: &[f64], mu: f64, m: f64) -> f64 {
    let fnorm = linalg::norm(field);
    m * linalg::dot(grad, field) + 2.0 / 3.0 * m.powf(1.5) * mu * (linalg::norm(grad) * fnorm + fnorm * fnorm)
}

/// Upper bound on `V(x̃(m))` along `ẋ = f(x, u*)` from `x̃(0) = x`:
/// `V(x) + m·ℒ_f V(x,u*) + ⅔m^{3/2}μ_c(‖V′(x)‖‖f(x,u*)‖ + ‖f(x,u*)‖²)`.
pub fn v_bound(
    model: &SystemModel,
    constants: &CertifiedConstants,
    x: &[f64],
    u_star: &[f64],
    m: f64,
) -> Result<f64, CertError> {
    if !(m >= 0.0 && m.is_finite()) {
        return Err(CertError::InvalidInput(format!("hold length {m} must be >= 0")));
    }
    let fx = model.f(x, u_star)?;
    Ok(model.v(x) + increment_bound(&model.v_grad(x), &fx, constants.mu, m))
}

/// Bound on `|ℒ_f V(x̃(t), u*) − ℒ_f V(x̃₀, u*)|` for
/// `t ∈ [0, (1 + 2L₁,c)⁻¹]`.
pub fn lie_derivative_deviation_bound(
    model: &SystemModel,
    constants: &CertifiedConstants,
    x0: &[f64],
    u_star: &[f64],
    t: f64,
) -> Result<f64, CertError> {
    let t_max = 1.0 / (1.0 + 2.0 * constants.l1);
    if !(t >= 0.0 && t <= t_max) {
        return Err(CertError::InvalidInput(format!("t = {t} outside [0, {t_max}]")));
    }
    let fx = model.f(x0, u_star)?;
    let fnorm = linalg::norm(&fx);
    Ok(t.sqrt() * constants.mu * (linalg::norm(&model.v_grad(x0)) * fnorm + fnorm * fnorm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Gamma, LinearQuadratic};
    use std::sync::Arc;

    fn scalar_decay() -> SystemModel {
        // ẋ = −x, κ ≡ 0, V = x²
        let sys = LinearQuadratic::new(1, 1, vec![-1.0], vec![0.0], vec![0.0], vec![1.0]).unwrap();
        SystemModel::new("scalar", Arc::new(sys), Gamma::Linear(2.0))
    }

    fn constants(l1: f64, l2: f64, m_max: f64, sigma: f64) -> CertifiedConstants {
        CertifiedConstants::from_estimates(1.0, sigma, l1, l2, m_max, Some(1.0), 16).unwrap()
    }

    #[test]
    fn scalar_m_max_is_three_halves() {
        let m = scalar_decay();
        let level = LevelSet::new(&m, 1.0).unwrap();
        let est = estimate_m_max(&m, &level, 64, &EstimationOptions::exact()).unwrap();
        assert!((est - 1.5).abs() < 1e-12, "{est}");
        let inflated = estimate_m_max(&m, &level, 64, &EstimationOptions::default()).unwrap();
        assert!((inflated - 1.575).abs() < 1e-12);
    }

    #[test]
    fn scalar_gamma_rate_is_two() {
        let m = scalar_decay();
        let level = LevelSet::new(&m, 1.0).unwrap();
        for method in [GammaRateMethod::DirectRatio, GammaRateMethod::Comparison] {
            let opts = EstimationOptions {
                gamma_method: method,
                ..EstimationOptions::exact()
            };
            let rho = estimate_gamma_rate(&m, &level, 64, &opts).unwrap();
            assert!((rho - 2.0).abs() < 1e-12, "{method:?}: {rho}");
        }
    }

    #[test]
    fn unstable_system_fails_certification_with_point() {
        let sys = LinearQuadratic::new(1, 1, vec![0.5], vec![0.0], vec![0.0], vec![1.0]).unwrap();
        let m = SystemModel::new("unstable", Arc::new(sys), Gamma::Linear(1.0));
        let level = LevelSet::new(&m, 1.0).unwrap();
        let err = estimate_m_max(&m, &level, 16, &EstimationOptions::default()).unwrap_err();
        match err {
            CertError::AssumptionViolated { point, .. } => assert_eq!(point, vec![-1.0]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(estimate_gamma_rate(&m, &level, 16, &EstimationOptions::default()).is_err());
    }

    #[test]
    fn grid_below_minimum_rejected() {
        let m = scalar_decay();
        let level = LevelSet::new(&m, 1.0).unwrap();
        assert!(matches!(
            estimate_l1(&m, &level, 4, &EstimationOptions::default()),
            Err(CertError::InvalidInput(_))
        ));
    }

    #[test]
    fn l2_of_linear_v_is_zero() {
        struct LinearV;
        impl crate::dynamics::ControlSystem for LinearV {
            fn state_dim(&self) -> usize {
                2
            }
            fn input_dim(&self) -> usize {
                1
            }
            fn vector_field(&self, x: &[f64], _u: &[f64], dx: &mut [f64]) {
                dx[0] = -x[0];
                dx[1] = -x[1];
            }
            fn feedback(&self, _x: &[f64], u: &mut [f64]) -> Result<(), ModelError> {
                u[0] = 0.0;
                Ok(())
            }
            fn lyapunov(&self, x: &[f64]) -> f64 {
                x[0] + 2.0 * x[1]
            }
            fn lyapunov_gradient(&self, _x: &[f64], g: &mut [f64]) {
                g[0] = 1.0;
                g[1] = 2.0;
            }
        }
        let m = SystemModel::new("linear-v", Arc::new(LinearV), Gamma::Linear(1.0));
        let level = LevelSet::with_bounds(1.0, vec![(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        assert_eq!(estimate_l2(&m, &level, 16, &EstimationOptions::default()).unwrap(), 0.0);
    }

    #[test]
    fn mu_formula() {
        let sqrt_e = std::f64::consts::E.sqrt();
        assert_eq!(mu_c(2.0, 0.0), sqrt_e * 2.0);
        assert_eq!(mu_c(1.0, 2.0), sqrt_e * 2.0 * (1.0 + sqrt_e));
    }

    #[test]
    fn masp_limits() {
        // σ → 1 drives the performance term to zero
        let near_one = constants(1.0, 2.0, 3.0, 1.0 - 1e-9);
        let masp = compute_sigma_masp(&near_one).unwrap();
        assert_eq!(masp.active, MaspTerm::Performance);
        assert!(masp.h < 1e-17);

        // μ·M → 0 leaves the Lipschitz term
        let tiny = constants(1.5, 0.0, 0.0, 0.35);
        let masp = compute_sigma_masp(&tiny).unwrap();
        assert_eq!(masp.active, MaspTerm::Lipschitz);
        assert_eq!(masp.h, 1.0 / 4.0);
        assert!(masp.performance_term.is_infinite());
    }

    #[test]
    fn from_estimates_rejects_bad_sigma() {
        assert!(CertifiedConstants::from_estimates(1.0, 1.0, 1.0, 1.0, 1.0, None, 16).is_err());
        assert!(CertifiedConstants::from_estimates(1.0, 0.0, 1.0, 1.0, 1.0, None, 16).is_err());
        assert!(CertifiedConstants::from_estimates(1.0, 0.5, f64::NAN, 1.0, 1.0, None, 16).is_err());
    }

    #[test]
    fn manifest_roundtrip_is_exact() {
        let k = constants(1.6294629735723, 2.760563859954523, 11.00322067768841, 0.35);
        let text = k.to_manifest("pendulum");
        let (model, back) = CertifiedConstants::from_manifest(&text).unwrap();
        assert_eq!(model, "pendulum");
        assert_eq!(back, k);
        assert_eq!(back.h_sigma_masp.to_bits(), compute_sigma_masp(&back).unwrap().h.to_bits());
        assert_eq!(back.to_manifest("pendulum"), text);
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let k = constants(1.0, 2.0, 3.0, 0.35);
        let text = k.to_manifest("m").replace("l2 = ", "l2 = x");
        match CertifiedConstants::from_manifest(&text) {
            Err(CertError::Manifest { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
        let tampered = k.to_manifest("m").replace("mu = ", "mu = 1");
        assert!(matches!(
            CertifiedConstants::from_manifest(&tampered),
            Err(CertError::InvalidInput(_))
        ));
        assert!(CertifiedConstants::from_manifest("garbage").is_err());
    }

    #[test]
    fn v_bound_edge_cases() {
        let m = scalar_decay();
        let k = constants(1.0, 2.0, 1.5, 0.35);
        assert!((v_bound(&m, &k, &[0.7], &[0.0], 0.0).unwrap() - 0.49).abs() < 1e-15);
        assert_eq!(v_bound(&m, &k, &[0.0], &[0.0], 0.2).unwrap(), 0.0);
        assert!(v_bound(&m, &k, &[0.7], &[0.0], -1e-3).is_err());
    }

    #[test]
    fn deviation_bound_edge_cases() {
        let m = scalar_decay();
        let k = constants(1.0, 2.0, 1.5, 0.35);
        assert_eq!(lie_derivative_deviation_bound(&m, &k, &[0.5], &[0.0], 0.0).unwrap(), 0.0);
        assert_eq!(lie_derivative_deviation_bound(&m, &k, &[0.0], &[0.0], 0.3).unwrap(), 0.0);
        assert!(lie_derivative_deviation_bound(&m, &k, &[0.5], &[0.0], 0.34).is_err());
        assert!(lie_derivative_deviation_bound(&m, &k, &[0.5], &[0.0], -0.1).is_err());
    }
}
