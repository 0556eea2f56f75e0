use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use super::benchmark::PendulumBenchmark;
use super::spec::{CheckName, ExperimentSpec, ModeName, PredictionName, ScenarioSpec, StepSpec};
use super::{CliError, RunArgs};
use crate::acceptance::{run_acceptance, AcceptanceOptions};
use crate::analysis::{check_convergence_criterion, check_nonmonotone_conditions, CheckReport, ReferenceDecay};
use crate::certificates::{certify, CertifiedConstants, EstimationOptions, DEFAULT_GRID};
use crate::dynamics::{registered_model, LevelSet, ModelError, SystemModel};
use crate::prediction::{build_lookup_table, PredictionKind, PredictionModel, DEFAULT_REFERENCE_SUBSTEPS};
use crate::simulator::{compare, run_batch, Mode, SimConfig, SimTrace, TraceSummary, DEFAULT_SUBSTEPS};

const DEFAULT_TABLE_POINTS: usize = 64;

fn model_by_name(name: &str) -> Result<SystemModel, CliError> {
    registered_model(name).map_err(|e| match e {
        crate::certificates::CertError::Model(ModelError::Unknown(_)) => CliError::Config(format!(
            "unknown model `{name}`; registered: {}",
            crate::dynamics::REGISTERED_MODELS.join(", ")
        )),
        other => other.into(),
    })
}

/// Benchmark defaults, available for the pendulum only.
fn defaults_for(model: &str) -> Result<Option<PendulumBenchmark>, CliError> {
    if model != "pendulum" {
        return Ok(None);
    }
    PendulumBenchmark::load()
        .map(Some)
        .map_err(|e| CliError::Config(format!("embedded benchmark settings: {e}")))
}

fn required<T>(value: Option<T>, what: &str, model: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("`{what}` is required for model `{model}`")))
}

fn certify_model(model: &SystemModel, c: f64, sigma: f64, grid: usize) -> Result<CertifiedConstants, CliError> {
    let level = LevelSet::new(model, c).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(certify(model, &level, sigma, grid, &EstimationOptions::default())?)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::io(format!("writing {}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)
        .map_err(|e| CliError::io(format!("writing {}", path.display()))(e.into()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}

/// Certifies `model` and writes `<out>/<model>.constants`.
pub fn cmd_certify(
    model_name: &str,
    c: Option<f64>,
    sigma: Option<f64>,
    grid: Option<usize>,
    out: &Path,
) -> Result<CertifiedConstants, CliError> {
    let model = model_by_name(model_name)?;
    let bench = defaults_for(model_name)?;
    let c = required(c.or(bench.as_ref().map(|b| b.c)), "c", model_name)?;
    let sigma = required(sigma.or(bench.as_ref().map(|b| b.sigma)), "sigma", model_name)?;
    let grid = grid.or(bench.as_ref().map(|b| b.grid)).unwrap_or(DEFAULT_GRID);
    let constants = certify_model(&model, c, sigma, grid)?;
    let masp = crate::certificates::compute_sigma_masp(&constants)?;
    create_dir(out)?;
    let path = out.join(format!("{model_name}.constants"));
    write_text(&path, &constants.to_manifest(model_name))?;
    println!("model            {model_name}");
    println!("c, sigma         {c}, {sigma}");
    println!("L1, L2           {:.6}, {:.6}", constants.l1, constants.l2);
    println!("mu, M_max        {:.6}, {:.6}", constants.mu, constants.m_max);
    if let Some(rate) = constants.gamma_rate {
        println!("gamma rate       {rate:.6}");
    }
    println!("performance term {:.6e}", masp.performance_term);
    println!("lipschitz term   {:.6e}", masp.lipschitz_term);
    println!("h_sigma_masp     {:.6e} s ({} term active)", masp.h, masp.active);
    println!("manifest         {}", path.display());
    Ok(constants)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub spec: String,
    pub out_root: PathBuf,
    pub unsafe_h_override: bool,
    /// Require at least two scenarios and print the comparison table.
    pub compare: bool,
}

impl RunOptions {
    pub(super) fn from_args(args: RunArgs, compare: bool) -> Self {
        Self {
            spec: args.spec,
            out_root: super::output_root(args.out),
            unsafe_h_override: args.unsafe_h_override,
            compare,
        }
    }
}

struct LoadedSpec {
    spec: ExperimentSpec,
    name: String,
    base_dir: PathBuf,
}

fn load_spec(arg: &str) -> Result<LoadedSpec, CliError> {
    let path = Path::new(arg);
    let (text, origin, name, base_dir) = if path.is_file() {
        let text = fs::read_to_string(path).map_err(CliError::io(format!("reading {arg}")))?;
        let name = path.file_stem().map_or("spec".into(), |s| s.to_string_lossy().into_owned());
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (text, arg.to_string(), name, base)
    } else if let Some(text) = ExperimentSpec::bundled(arg) {
        (text.to_string(), format!("bundled spec `{arg}`"), arg.to_string(), PathBuf::new())
    } else {
        return Err(CliError::Config(format!("no spec file or bundled spec named `{arg}`")));
    };
    let spec = ExperimentSpec::parse(&text).map_err(|e| CliError::Spec {
        origin,
        message: e.to_string(),
    })?;
    Ok(LoadedSpec { spec, name, base_dir })
}

#[derive(Serialize)]
struct ScenarioOutput<'a> {
    scenario: &'a str,
    summary: TraceSummary,
    checks: &'a CheckReport,
    passed: bool,
}

#[derive(Serialize)]
struct BatchStatus {
    scenario: String,
    passed: bool,
    error: Option<String>,
}

fn scenario_config(
    name: &str,
    s: &ScenarioSpec,
    model: &SystemModel,
    constants: &CertifiedConstants,
    bench: Option<&PendulumBenchmark>,
    force_unsafe: bool,
    out_dir: &Path,
) -> Result<SimConfig, CliError> {
    let ctx = |msg: String| CliError::Config(format!("scenario `{name}`: {msg}"));
    let h = match s.h {
        StepSpec::Seconds(h) => h,
        StepSpec::Keyword(_) => constants.h_sigma_masp,
    };
    let unsafe_h_override = s.unsafe_h_override || force_unsafe;
    if h > constants.h_sigma_masp && !unsafe_h_override {
        return Err(ctx(format!(
            "h = {h:e} exceeds the certified h_sigma_masp = {:e}; refusing without the unsafe override",
            constants.h_sigma_masp
        )));
    }
    let x0 = s
        .x0
        .clone()
        .or(bench.map(|b| b.x0.clone()))
        .ok_or_else(|| ctx("`x0` is required".into()))?;
    let horizon = s
        .horizon
        .or(bench.map(|b| b.horizon))
        .ok_or_else(|| ctx("`horizon` is required".into()))?;
    let reference_substeps = s.reference_substeps.unwrap_or(DEFAULT_REFERENCE_SUBSTEPS);
    let prediction = match s.prediction {
        PredictionName::Zoh => PredictionKind::Zoh,
        PredictionName::ScaledEuler => PredictionKind::ScaledEuler {
            scale: s
                .euler_scale
                .or(bench.map(|b| b.euler_scale))
                .ok_or_else(|| ctx("`euler_scale` is required".into()))?,
        },
        PredictionName::Rk4 => PredictionKind::RungeKutta4,
        PredictionName::ReferenceExact => PredictionKind::ReferenceExact {
            substeps: reference_substeps,
        },
        PredictionName::LookupTable => {
            let level = LevelSet::new(model, constants.c).map_err(|e| ctx(e.to_string()))?;
            let reference = PredictionModel::reference_exact(model.clone(), h, reference_substeps)?;
            let points = s.table_points.unwrap_or(DEFAULT_TABLE_POINTS);
            let table = build_lookup_table(model, &level, points, &reference)?;
            let PredictionKind::LookupTable(t) = table.kind() else {
                unreachable!("build_lookup_table returns a table prediction")
            };
            let path = out_dir.join(format!("{name}.lut"));
            t.save(&path)?;
            PredictionKind::LookupTable(Arc::clone(t))
        }
    };
    let mut config = SimConfig::new(model.clone(), prediction, h, horizon, x0);
    config.mode = match s.mode {
        ModeName::Event => Mode::EventTriggered,
        ModeName::Periodic => Mode::Periodic,
    };
    config.nu = s.nu;
    config.substeps = s.substeps.or(bench.map(|b| b.substeps)).unwrap_or(DEFAULT_SUBSTEPS);
    config.decimation = s.decimation.unwrap_or(1);
    config.seed = s.seed;
    config.unsafe_h_override = unsafe_h_override;
    Ok(config)
}

fn run_checks(trace: &SimTrace, checks: &[CheckName], constants: &CertifiedConstants) -> Result<CheckReport, CliError> {
    let mut report = CheckReport::default();
    for check in checks {
        match check {
            CheckName::Convergence => {
                let decay = ReferenceDecay::for_trace(trace).map_err(|e| CliError::Config(e.to_string()))?;
                report.extend(check_convergence_criterion(trace, &decay).map_err(|e| CliError::Config(e.to_string()))?);
            }
            CheckName::Nonmonotone => report.extend(check_nonmonotone_conditions(trace, constants)),
        }
    }
    Ok(report)
}

/// Runs every scenario of a spec, writing traces, summaries and check
/// reports. Fails with exit code 1 when a run aborts or a check fails.
pub fn cmd_run(opts: &RunOptions) -> Result<(), CliError> {
    let LoadedSpec { spec, name, base_dir } = load_spec(&opts.spec)?;
    if opts.compare && spec.scenarios.len() < 2 {
        return Err(CliError::Config("compare needs at least two scenarios".into()));
    }
    if spec.scenarios.is_empty() {
        eprintln!("warning: spec `{}` has no scenarios; nothing to run", opts.spec);
        return Ok(());
    }
    let batch = &spec.batch;
    let out_dir = opts.out_root.join(batch.out.clone().unwrap_or_else(|| PathBuf::from(&name)));
    create_dir(&out_dir)?;

    let model = model_by_name(&batch.model)?;
    let bench = defaults_for(&batch.model)?;
    let constants = match &batch.constants {
        Some(path) => {
            let path = base_dir.join(path);
            let text = fs::read_to_string(&path).map_err(CliError::io(format!("reading {}", path.display())))?;
            let (manifest_model, constants) = CertifiedConstants::from_manifest(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if manifest_model != batch.model {
                return Err(CliError::Config(format!(
                    "constants manifest is for `{manifest_model}`, spec uses `{}`",
                    batch.model
                )));
            }
            for (what, spec_value, stored) in [("c", batch.c, constants.c), ("sigma", batch.sigma, constants.sigma)] {
                if spec_value.is_some_and(|v| v != stored) {
                    return Err(CliError::Config(format!("spec {what} differs from the constants manifest")));
                }
            }
            constants
        }
        None => {
            let c = required(batch.c.or(bench.as_ref().map(|b| b.c)), "c", &batch.model)?;
            let sigma = required(batch.sigma.or(bench.as_ref().map(|b| b.sigma)), "sigma", &batch.model)?;
            let grid = batch.grid.or(bench.as_ref().map(|b| b.grid)).unwrap_or(DEFAULT_GRID);
            let constants = certify_model(&model, c, sigma, grid)?;
            write_text(&out_dir.join("constants.txt"), &constants.to_manifest(&batch.model))?;
            constants
        }
    };
    println!(
        "{}: h_sigma_masp = {:.6e} s, {} scenario(s)",
        batch.model,
        constants.h_sigma_masp,
        spec.scenarios.len()
    );

    let mut configs = Vec::new();
    for (scenario, s) in &spec.scenarios {
        let config = scenario_config(
            scenario,
            s,
            &model,
            &constants,
            bench.as_ref(),
            opts.unsafe_h_override,
            &out_dir,
        )?;
        configs.push((scenario.clone(), config));
    }

    let results = run_batch(&configs, &constants);
    let mut statuses = Vec::new();
    let mut traces = Vec::new();
    for (scenario, result) in results {
        let s = &spec.scenarios[&scenario];
        let trace = match result {
            Ok(trace) => trace,
            Err(e) => {
                eprintln!("{scenario}: run aborted: {e}");
                statuses.push(BatchStatus {
                    scenario,
                    passed: false,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let checks = run_checks(&trace, &s.checks, &constants)?;
        let csv_path = out_dir.join(format!("{scenario}.csv"));
        let file = File::create(&csv_path).map_err(CliError::io(format!("creating {}", csv_path.display())))?;
        trace
            .write_csv_strided(file, s.csv_stride.unwrap_or(1))
            .map_err(CliError::io(format!("writing {}", csv_path.display())))?;
        let passed = checks.passed();
        write_json(
            &out_dir.join(format!("{scenario}.summary.json")),
            &ScenarioOutput {
                scenario: &scenario,
                summary: trace.summary(),
                checks: &checks,
                passed,
            },
        )?;
        println!(
            "{scenario}: {} transmissions, mean gap {:.4} s, min gap {:.4} s, checks {}",
            trace.transmissions(),
            trace.mean_gap(),
            trace.min_gap(),
            if passed { "passed" } else { "FAILED" }
        );
        if !passed {
            print!("{checks}");
        }
        statuses.push(BatchStatus {
            scenario,
            passed,
            error: None,
        });
        traces.push(trace);
    }

    if traces.len() >= 2 {
        let refs: Vec<&SimTrace> = traces.iter().collect();
        match compare(&refs) {
            Ok(report) => {
                write_text(&out_dir.join("comparison.txt"), &report.to_table())?;
                write_json(&out_dir.join("comparison.json"), &report)?;
                print!("{}", report.to_table());
            }
            Err(e) if opts.compare => return Err(e.into()),
            Err(e) => eprintln!("note: no comparison table: {e}"),
        }
    }
    write_json(&out_dir.join("summary.json"), &statuses)?;
    let failed = statuses.iter().filter(|s| !s.passed).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed(format!("{failed} scenario(s) failed")));
    }
    Ok(())
}

/// Runs the acceptance battery and prints one line per criterion.
pub fn cmd_accept(only: &[String], out: &Path, constants: Option<&Path>) -> Result<(), CliError> {
    let opts = AcceptanceOptions {
        only: only.to_vec(),
        out_dir: out.join("accept"),
        constants: constants.map(Path::to_path_buf),
    };
    let report = run_acceptance(&opts).map_err(|e| CliError::Config(e.to_string()))?;
    print!("{report}");
    write_json(&opts.out_dir.join("acceptance.json"), &report)?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed("acceptance criteria failed".into()))
    }
}
