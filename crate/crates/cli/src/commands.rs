//! The four subcommands.

use serde::Serialize;
use tpe_core::hilbert::{Quadrature, Sector, QUADRATURE_WINDOW};
use tpe_core::metrics::OutcomeGrid;
use tpe_core::protocol::{self, with_threads, RunConfig, SweepPoint};
use tpe_core::validation::{self, Level};

use crate::config::Settings;
use crate::output::{float, timestamp, InvariantCheck, OutputDir, Table};
use crate::CliError;

/// Largest `|Σ P h² − 1|` accepted for a full-window outcome plane.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// What a finished command reports back to the driver.
pub struct Finished {
    pub checks: Vec<InvariantCheck>,
    pub lines: Vec<String>,
}

fn config_error(e: tpe_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_error(e: tpe_core::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn threaded<T: Send>(threads: usize, f: impl FnOnce() -> tpe_core::Result<T> + Send) -> Result<T, CliError> {
    with_threads(threads, f).map_err(config_error)?.map_err(runtime_error)
}

fn validated(config: &RunConfig, warnings: &mut Vec<String>) -> Result<(), CliError> {
    for w in config.validate().map_err(config_error)? {
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }
    Ok(())
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> InvariantCheck {
    InvariantCheck { name: name.into(), passed, detail: detail.into() }
}

#[derive(Serialize)]
pub struct PlaneSummary {
    sector: Sector,
    quadrature: Quadrature,
    sector_probability: f64,
    qss_time: f64,
    qss_residual: f64,
    total_probability: f64,
    max_fidelity: f64,
    mean_concurrence: Option<f64>,
}

fn plane_tables(grid: &OutcomeGrid) -> Result<Vec<(&'static str, Table)>, CliError> {
    let fields: [(&'static str, &[f64]); 4] =
        [("P", &grid.density), ("F", &grid.overlap), ("C", &grid.concurrence), ("gradF", &grid.gradient)];
    let mut out = Vec::with_capacity(fields.len());
    for (name, values) in fields {
        let mut t = Table::new(&["xi_a", "xi_b", "value"])?;
        for (i, &xa) in grid.axis_a.iter().enumerate() {
            for (j, &xb) in grid.axis_b.iter().enumerate() {
                t.row([float(xa), float(xb), float(values[grid.index(i, j)])])?;
            }
        }
        out.push((name, t));
    }
    Ok(out)
}

/// Outcome planes (probability, Bell overlap, concurrence, overlap
/// gradient) per selected sector and quadrature.
pub fn grid(settings: &Settings, out: &mut OutputDir, warnings: &mut Vec<String>) -> Result<(Vec<InvariantCheck>, Vec<PlaneSummary>), CliError> {
    let mut checks = Vec::new();
    let mut summaries = Vec::new();
    for sector in settings.sectors() {
        for q in settings.quadratures() {
            validated(&settings.analytic(sector, q), warnings)?;
        }
        let state = threaded(settings.threads, || protocol::analytic_state(&settings.params, sector))?;
        for q in settings.quadratures() {
            let grid = threaded(settings.threads, || protocol::analytic_grid(&state, &settings.params, q, settings.grid))?;
            for (name, table) in plane_tables(&grid)? {
                out.write_table(&format!("grid_{}_{q}_{name}.csv", sector.name()), table)?;
            }
            let total = grid.total_probability();
            if settings.grid.window >= QUADRATURE_WINDOW {
                let err = (total - 1.0).abs();
                checks.push(check(
                    format!("probability normalization ({}, {q})", sector.name()),
                    err <= NORMALIZATION_TOL,
                    format!("|ΣPh² - 1| = {err:.3e} (limit {NORMALIZATION_TOL:e})"),
                ));
            }
            let in_range = |v: &[f64]| v.iter().all(|x| (0.0..=1.0).contains(x));
            checks.push(check(
                format!("F, C within [0, 1] ({}, {q})", sector.name()),
                in_range(&grid.overlap) && in_range(&grid.concurrence),
                "",
            ));
            summaries.push(PlaneSummary {
                sector,
                quadrature: q,
                sector_probability: state.sector_probability,
                qss_time: state.qss_time,
                qss_residual: state.qss_residual,
                total_probability: total,
                max_fidelity: grid.overlap.iter().copied().fold(0.0, f64::max),
                mean_concurrence: grid.weighted_mean(&grid.concurrence, |_, _| true),
            });
        }
    }
    Ok((checks, summaries))
}

pub const SWEEP_HEADER: [&str; 16] = [
    "alpha",
    "beta",
    "eta",
    "trajectories",
    "completed",
    "aborts",
    "heralded",
    "success_fraction",
    "max_fidelity_phase",
    "max_fidelity_plus",
    "mean_fidelity",
    "mean_fidelity_std_error",
    "mean_concurrence",
    "lobe_center",
    "cutoff",
    "invalid",
];

fn sweep_row(p: &SweepPoint) -> Vec<String> {
    vec![
        float(p.alpha),
        float(p.beta),
        float(p.eta),
        p.trajectories.to_string(),
        p.completed.to_string(),
        p.aborts.to_string(),
        p.heralded.to_string(),
        float(p.success_fraction),
        float(p.max_fidelity_phase),
        float(p.max_fidelity_plus),
        float(p.mean_fidelity),
        float(p.mean_fidelity_std_error),
        float(p.mean_concurrence),
        float(p.lobe_center),
        float(p.cutoff),
        p.invalid.to_string(),
    ]
}

/// Mean fidelity must not drop with rising efficiency by more than two
/// combined standard errors.
pub fn monotone_in_eta(points: &[SweepPoint]) -> (bool, String) {
    let mut violations = Vec::new();
    for a in points {
        for b in points {
            if a.alpha == b.alpha && a.eta > b.eta && a.mean_fidelity.is_finite() && b.mean_fidelity.is_finite() {
                let se = a.mean_fidelity_std_error.hypot(b.mean_fidelity_std_error);
                let se = if se.is_finite() { se } else { 0.0 };
                if a.mean_fidelity < b.mean_fidelity - 2.0 * se {
                    violations.push(format!("α={} η={} < η={}", a.alpha, a.eta, b.eta));
                }
            }
        }
    }
    (violations.is_empty(), violations.join("; "))
}

/// Stochastic sweep over `α = β` and `η`.
pub fn sweep(settings: &Settings, out: &mut OutputDir, warnings: &mut Vec<String>) -> Result<(Vec<InvariantCheck>, Vec<SweepPoint>), CliError> {
    let config = settings.stochastic();
    for &alpha in &settings.sweep_alphas {
        for &eta in &settings.sweep_etas {
            let mut c = config.clone();
            c.params.alpha = alpha;
            c.params.beta = alpha;
            c.params.eta = eta;
            validated(&c, warnings)?;
        }
    }
    let result = threaded(settings.threads, || protocol::run_sweep(&config, &settings.sweep_alphas, &settings.sweep_etas))?;
    let mut table = Table::new(&SWEEP_HEADER)?;
    for p in &result.points {
        table.row(sweep_row(p))?;
    }
    out.write_table("sweep.csv", table)?;
    let unit = |x: f64| x.is_nan() || (0.0..=1.0 + 1e-12).contains(&x);
    let ranges = result
        .points
        .iter()
        .all(|p| unit(p.max_fidelity_phase) && unit(p.max_fidelity_plus) && unit(p.mean_fidelity) && unit(p.success_fraction));
    let invalid: Vec<String> = result.points.iter().filter(|p| p.invalid).map(|p| format!("(α={}, η={})", p.alpha, p.eta)).collect();
    let (monotone, detail) = monotone_in_eta(&result.points);
    let checks = vec![
        check("fidelities and success fractions within [0, 1]", ranges, ""),
        check("abort share at most 1% at every point", invalid.is_empty(), invalid.join(" ")),
        check("mean fidelity non-decreasing in η within 2σ", monotone, detail),
    ];
    Ok((checks, result.points))
}

#[derive(Serialize)]
pub struct CompareSummary {
    alpha: f64,
    beta: f64,
    sector: Sector,
    quadrature: Quadrature,
    trajectories: usize,
    samples: usize,
    bin_width: f64,
    bins: usize,
    artifact_bins: usize,
    excluded_bins: usize,
    median_abs_delta_f: Option<f64>,
}

/// Analytic vs stochastic path on binned outcomes.
pub fn compare(settings: &Settings, out: &mut OutputDir, warnings: &mut Vec<String>) -> Result<(Vec<InvariantCheck>, CompareSummary), CliError> {
    let config = settings.stochastic();
    let (alpha, beta) = config.params.effective_amplitudes();
    if alpha > 1.0 || beta > 1.0 {
        return Err(CliError::Config(format!("`compare` needs alpha, beta <= 1 (got {alpha}, {beta})")));
    }
    validated(&config, warnings)?;
    validated(&settings.analytic(config.sector, config.quadrature), warnings)?;
    let report = threaded(settings.threads, || protocol::compare_paths(&config, settings.compare_bin_width))?;
    let mut table = Table::new(&["xi_a", "xi_b", "samples", "mean_abs_delta_f", "mean_c_analytic", "mean_c_stochastic", "artifact"])?;
    for b in &report.bins {
        table.row([
            float(b.xi_a),
            float(b.xi_b),
            b.samples.to_string(),
            float(b.mean_abs_delta_f),
            float(b.mean_c_analytic),
            float(b.mean_c_stochastic),
            b.artifact.to_string(),
        ])?;
    }
    out.write_table("compare_bins.csv", table)?;
    let in_range = report.bins.iter().all(|b| (0.0..=1.0).contains(&b.mean_abs_delta_f));
    let summary = CompareSummary {
        alpha: report.alpha,
        beta: report.beta,
        sector: report.sector,
        quadrature: report.quadrature,
        trajectories: report.trajectories,
        samples: report.samples,
        bin_width: report.bin_width,
        bins: report.bins.len(),
        artifact_bins: report.bins.iter().filter(|b| b.artifact).count(),
        excluded_bins: report.excluded_bins,
        median_abs_delta_f: report.median_abs_delta_f,
    };
    Ok((vec![check("per-bin |ΔF| within [0, 1]", in_range, "")], summary))
}

#[derive(Serialize)]
pub struct ValidateSummary {
    level: Level,
    seconds: Vec<(String, f64)>,
}

/// The validation suites.
pub fn validate(settings: &Settings, level: Level, out: &mut OutputDir) -> Result<(Vec<InvariantCheck>, ValidateSummary), CliError> {
    let results = with_threads(settings.threads, || validation::run_suite(level, settings.params.seed)).map_err(config_error)?;
    let mut table = Table::new(&["check", "passed", "detail"])?;
    for c in &results {
        table.row([c.name.clone(), c.passed.to_string(), c.detail.clone()])?;
    }
    out.write_table("validate.csv", table)?;
    let seconds = results.iter().map(|c| (c.name.clone(), c.seconds)).collect();
    let checks = results.into_iter().map(|c| check(c.name, c.passed, c.detail)).collect();
    Ok((checks, ValidateSummary { level, seconds }))
}

/// Dispatch one command: run it, write its files and manifest, and report.
pub fn execute(command: &str, settings: &Settings, level: Level) -> Result<Finished, CliError> {
    let started = timestamp();
    let mut out = OutputDir::create(&settings.out)?;
    let mut warnings = Vec::new();
    let seed = settings.params.seed;
    let (checks, manifest) = match command {
        "grid" => {
            let (checks, summary) = grid(settings, &mut out, &mut warnings)?;
            let m = out.write_manifest(command, settings, seed, started, &checks, &summary, &warnings)?;
            (checks, m)
        }
        "sweep" => {
            let (checks, summary) = sweep(settings, &mut out, &mut warnings)?;
            let m = out.write_manifest(command, settings, seed, started, &checks, &summary, &warnings)?;
            (checks, m)
        }
        "compare" => {
            let (checks, summary) = compare(settings, &mut out, &mut warnings)?;
            let m = out.write_manifest(command, settings, seed, started, &checks, &summary, &warnings)?;
            (checks, m)
        }
        "validate" => {
            let (checks, summary) = validate(settings, level, &mut out)?;
            let m = out.write_manifest(command, settings, seed, started, &checks, &summary, &warnings)?;
            (checks, m)
        }
        other => return Err(CliError::Config(format!("unknown command {other}"))),
    };
    let mut lines: Vec<String> = warnings.iter().map(|w| format!("warning: {w}")).collect();
    for c in &checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        lines.push(if c.detail.is_empty() { format!("[{mark}] {}", c.name) } else { format!("[{mark}] {}: {}", c.name, c.detail) });
    }
    lines.push(format!("wrote {} data files and {}", out.files.len(), manifest.display()));
    Ok(Finished { checks, lines })
}
