//! End-to-end protocol runs.
//!
//! * Analytic path: step-I state → parity projection → two-photon loss to
//!   the quasi-steady state → step-III homodyne outcome grid.
//! * Stochastic path: step-I state → homodyne-monitored pair channel →
//!   parity verdict from the matched-filter output `x_c` → step-III outcome
//!   sampled from the conditional state → two-qubit diagnostics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    evolve_branches_density, evolve_branches_pure, quasi_steady_state, residual_lindbladian, BranchState, Drift,
    MatchedFilter, Model, MonitoredChannel, ProtocolParams, QssOptions, Rk4, TimeGrid, TwoPhotonPropagator, Verdict,
};
use crate::dynamics::lindblad::Jump;
use crate::dynamics::three_mode::{pair_operator, three_wave_hamiltonian};
use crate::error::{Error, Result};
use crate::hilbert::{self, DensityMatrix, Factor, Quadrature, Sector, SpaceLayout, QUADRATURE_WINDOW};
use crate::measurement::{self, apply_mode_loss, qubit_operator_grid, sample_quadratures, uniform_axis, SAMPLING_STEP};
use crate::metrics::{self, BellTarget, OutcomeGrid};
use crate::qlinalg::{CMatrix, C64};

/// Fock-tail tolerance used to pick the stochastic-path truncation.
pub const STOCHASTIC_TAIL_TOLERANCE: f64 = 1e-10;
/// Largest `κ dt` of a trajectory step.
pub const SME_RATE_FRACTION: f64 = 0.005;
/// Largest `‖L'†L'‖ dt` of a trajectory step.
pub const SME_GENERATOR_FRACTION: f64 = 0.2;
/// Share of aborted trajectories above which a point is flagged invalid.
pub const ABORT_LIMIT: f64 = 0.01;

/// Which pipeline a [`RunConfig`] drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Path {
    Analytic,
    Stochastic,
}

/// Square outcome grid `[−window, window]²` with spacing `step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub window: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { window: QUADRATURE_WINDOW, step: 0.1 }
    }
}

impl GridSpec {
    pub fn axis(&self) -> Result<Vec<f64>> {
        if !(self.window > 0.0 && self.window <= QUADRATURE_WINDOW) {
            return Err(Error::InvalidParameter(format!("grid window {} outside (0, {QUADRATURE_WINDOW}]", self.window)));
        }
        let axis = uniform_axis(-self.window, self.window, self.step)?;
        if axis.len() < 3 {
            return Err(Error::GridTooSmall(axis.len()));
        }
        Ok(axis)
    }
}

/// Everything one run needs besides the master seed (in `params.seed`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: ProtocolParams,
    pub path: Path,
    /// Parity sector of the analytic path.
    pub sector: Sector,
    pub quadrature: Quadrature,
    /// Outcome grid of the analytic path.
    pub grid: GridSpec,
    /// Trajectory count `M` of the stochastic path.
    pub trajectories: usize,
    /// Parity cutoff on `x_c`; `None` selects half the lobe center.
    pub cutoff: Option<f64>,
    /// Step-II model of the stochastic path.
    pub model: Model,
    /// Trajectory step; `None` selects [`sme_dt`].
    pub sme_dt: Option<f64>,
}

impl RunConfig {
    pub fn analytic(params: ProtocolParams, sector: Sector, quadrature: Quadrature) -> Self {
        Self {
            params,
            path: Path::Analytic,
            sector,
            quadrature,
            grid: GridSpec::default(),
            trajectories: 1,
            cutoff: None,
            model: Model::Effective,
            sme_dt: None,
        }
    }

    pub fn stochastic(params: ProtocolParams, quadrature: Quadrature, trajectories: usize) -> Self {
        Self { path: Path::Stochastic, trajectories, ..Self::analytic(params, Sector::Even, quadrature) }
    }

    /// Check internal consistency; returns the parameter warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.params.validate()?;
        match self.path {
            Path::Analytic => {
                self.grid.axis()?;
                if self.params.kappa_a > 0.0 || self.params.kappa_b > 0.0 {
                    return Err(Error::InvalidParameter(
                        "the analytic path has no quasi-steady state under single-photon loss; use the stochastic path".into(),
                    ));
                }
                if self.model != Model::Effective {
                    return Err(Error::InvalidParameter("the analytic path uses the effective model".into()));
                }
            }
            Path::Stochastic => {
                if self.trajectories == 0 {
                    return Err(Error::InvalidParameter("trajectory count must be at least 1".into()));
                }
                if let Some(dt) = self.sme_dt {
                    if !(dt > 0.0) {
                        return Err(Error::InvalidParameter(format!("sme_dt = {dt} must be positive")));
                    }
                }
                if let Some(c) = self.cutoff {
                    if !(c >= 0.0) {
                        return Err(Error::InvalidParameter(format!("cutoff = {c} must be non-negative")));
                    }
                }
            }
        }
        Ok(warnings)
    }
}

/// Quasi-steady state of one parity sector on the analytic path.
#[derive(Clone, Debug)]
pub struct AnalyticState {
    pub sector: Sector,
    /// State after step II, over (qubit A, qubit B, mode a, mode b).
    pub state: DensityMatrix,
    /// Probability of the sector in the step-I state.
    pub sector_probability: f64,
    /// Evolution time needed to reach the quasi-steady state.
    pub qss_time: f64,
    pub qss_residual: f64,
}

/// Step I, parity projection and step II of the analytic path.
pub fn analytic_state(params: &ProtocolParams, sector: Sector) -> Result<AnalyticState> {
    let (alpha, beta) = params.effective_amplitudes();
    let n = params.truncation_for(alpha.max(beta));
    let layout = SpaceLayout::protocol(n, n)?;
    let psi = hilbert::step1_joint_state(alpha, beta, &layout)?;
    let (projected, sector_probability) = hilbert::parity_project(&psi, &layout, sector)?;
    let rho0 = DensityMatrix::from_pure(&projected, layout)?;
    let qss = quasi_steady_state(&rho0, params.kappa_2ph(), QssOptions::default())?;
    Ok(AnalyticState { sector, state: qss.state, sector_probability, qss_time: qss.time, qss_residual: qss.residual })
}

/// Outcome grid of an analytic state, with readout loss `η` when enabled.
pub fn analytic_grid(state: &AnalyticState, params: &ProtocolParams, quadrature: Quadrature, grid: GridSpec) -> Result<OutcomeGrid> {
    let axis = grid.axis()?;
    let rho = if params.eta_readout && params.eta < 1.0 {
        apply_mode_loss(&state.state, params.eta)?
    } else {
        state.state.clone()
    };
    let ops = qubit_operator_grid(&rho, quadrature, &axis, &axis)?;
    OutcomeGrid::from_qubit_operators(quadrature, state.sector, axis.clone(), axis, &ops, params.clone())
}

/// The analytic path: one filled outcome grid.
pub fn run_analytic(config: &RunConfig) -> Result<OutcomeGrid> {
    if config.path != Path::Analytic {
        return Err(Error::InvalidParameter("run_analytic needs an analytic configuration".into()));
    }
    config.validate()?;
    let state = analytic_state(&config.params, config.sector)?;
    analytic_grid(&state, &config.params, config.quadrature, config.grid)
}

/// Trajectory step for pair-loss rate `κ` at truncation `n`:
/// `min(0.005/κ, 0.2/(κ (n−1)²))`.
pub fn sme_dt(kappa: f64, n: usize) -> f64 {
    let top = ((n.max(2) - 1) as f64).powi(2);
    (SME_RATE_FRACTION / kappa).min(SME_GENERATOR_FRACTION / (kappa * top))
}

/// Per-trajectory outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub index: usize,
    /// Matched-filter output; NaN for aborted trajectories.
    pub x_c: f64,
    pub verdict: Verdict,
    /// Step-III outcome (heralded trajectories only).
    pub outcome: Option<measurement::QuadratureOutcome>,
    /// Bell phase of the heralded sector, when defined.
    pub phase: Option<f64>,
    /// Overlap with the phase-adapted Bell state of the heralded sector.
    pub fidelity_phase: Option<f64>,
    /// Overlap with `|Φ⁺⟩` (even) or `|Ψ⁺⟩` (odd).
    pub fidelity_plus: Option<f64>,
    pub concurrence: Option<f64>,
    /// Integrator failure message of an aborted trajectory.
    pub abort: Option<String>,
}

impl TrajectoryRecord {
    pub fn heralded(&self) -> bool {
        self.abort.is_none() && self.verdict != Verdict::Ambiguous && self.fidelity_phase.is_some()
    }
}

enum Engine {
    Pure { hamiltonian: Option<CMatrix> },
    Density { residual: Box<dyn Drift + Send> },
}

/// Shared, trajectory-independent pieces of a stochastic run.
pub struct StochasticSetup {
    pub truncation: usize,
    pub grid: TimeGrid,
    pub filter: MatchedFilter,
    pub cutoff: f64,
    init: BranchState,
    channel: MonitoredChannel,
    engine: Engine,
    keep: Vec<Factor>,
}

impl StochasticSetup {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let params = &config.params;
        let (alpha, beta) = params.effective_amplitudes();
        let kappa = params.kappa_2ph();
        if !(kappa > 0.0) {
            return Err(Error::InvalidParameter("the pair channel needs g > 0".into()));
        }
        let n = params
            .truncation
            .unwrap_or_else(|| hilbert::minimal_truncation(alpha.max(beta), STOCHASTIC_TAIL_TOLERANCE).max(2));
        let mut dt = config.sme_dt.unwrap_or_else(|| sme_dt(kappa, n));
        if config.model == Model::ThreeMode {
            dt = dt.min(params.dt_for(Model::ThreeMode));
        }
        let grid = TimeGrid::covering(params.t_total, dt)?;
        let filter = MatchedFilter::for_params(params, n, grid)?;
        let cutoff = config.cutoff.unwrap_or_else(|| filter.default_cutoff());
        let single = |layout: &SpaceLayout| -> Result<Vec<Jump>> {
            let mut jumps = Vec::new();
            if params.kappa_a > 0.0 {
                jumps.push(Jump::new(params.kappa_a, layout.lowering(Factor::ModeA)?));
            }
            if params.kappa_b > 0.0 {
                jumps.push(Jump::new(params.kappa_b, layout.lowering(Factor::ModeB)?));
            }
            Ok(jumps)
        };
        let coh = |amp: f64, dim: usize| hilbert::coherent_state(C64::new(amp, 0.0), dim);
        let (layout, phi, channel, hamiltonian) = match config.model {
            Model::Effective => {
                let layout = SpaceLayout::modes(n, n)?;
                let phi = coh(alpha, n)?.kron(&coh(beta, n)?);
                let channel = MonitoredChannel::new(kappa, pair_operator(&layout)?, params.theta_c(), params.eta)?;
                (layout, phi, channel, None)
            }
            Model::ThreeMode => {
                let nc = params.truncation_c;
                let layout = SpaceLayout::three_modes(n, n, nc)?;
                let phi = coh(alpha, n)?.kron(&coh(beta, n)?).kron(&hilbert::fock_state(0, nc));
                let channel =
                    MonitoredChannel::new(params.kappa_c, layout.lowering(Factor::ModeC)?, params.theta_c(), params.eta)?;
                let h = three_wave_hamiltonian(&layout, params.g)?;
                (layout, phi, channel, Some(h))
            }
        };
        let jumps = single(&layout)?;
        let engine = if params.eta == 1.0 && jumps.is_empty() {
            Engine::Pure { hamiltonian }
        } else if hamiltonian.is_none() && jumps.is_empty() {
            Engine::Density { residual: Box::new(TwoPhotonPropagator::new(&layout, kappa * (1.0 - params.eta), grid.dt)?) }
        } else {
            let l = residual_lindbladian(layout.dim(), hamiltonian, jumps, std::slice::from_ref(&channel))?;
            Engine::Density { residual: Box::new(Rk4::new(l, grid.dt)?) }
        };
        let keep = vec![Factor::QubitA, Factor::QubitB, Factor::ModeA, Factor::ModeB];
        let init = BranchState::protocol(layout, phi)?;
        Ok(Self { truncation: n, grid, filter, cutoff, init, channel, engine, keep })
    }

    /// Conditional state after step II over (qubits, modes) and the
    /// recorded increments of the monitored channel.
    fn evolve(&self, rng: &mut ChaCha8Rng) -> Result<(DensityMatrix, Vec<f64>)> {
        let t_end = self.grid.t_end();
        let channels = std::slice::from_ref(&self.channel);
        let (state, mut currents) = match &self.engine {
            Engine::Pure { hamiltonian } => {
                let out = evolve_branches_pure(&self.init, hamiltonian.as_ref(), channels, self.grid.dt, t_end, rng)?;
                (out.state.to_density_matrix()?, out.currents)
            }
            Engine::Density { residual } => {
                let out = evolve_branches_density(&self.init, residual.as_ref(), channels, t_end, rng)?;
                (out.state.to_density_matrix()?, out.currents)
            }
        };
        let state = if state.layout().position(Factor::ModeC).is_some() { state.partial_trace(&self.keep)? } else { state };
        Ok((state, currents.swap_remove(0)))
    }
}

/// Random stream of trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One stochastic trajectory. Integrator failures are recorded, not
/// propagated.
pub fn run_trajectory(setup: &StochasticSetup, config: &RunConfig, index: usize) -> TrajectoryRecord {
    let mut record = TrajectoryRecord {
        index,
        x_c: f64::NAN,
        verdict: Verdict::Ambiguous,
        outcome: None,
        phase: None,
        fidelity_phase: None,
        fidelity_plus: None,
        concurrence: None,
        abort: None,
    };
    let mut rng = trajectory_rng(config.params.seed, index);
    if let Err(e) = trajectory_body(setup, config, &mut rng, &mut record) {
        record.abort = Some(e.to_string());
    }
    record
}

fn trajectory_body(setup: &StochasticSetup, config: &RunConfig, rng: &mut ChaCha8Rng, record: &mut TrajectoryRecord) -> Result<()> {
    let (state, current) = setup.evolve(rng)?;
    record.x_c = setup.filter.integrate(&current)?;
    record.verdict = crate::dynamics::parity_verdict(record.x_c, setup.cutoff);
    let Some(sector) = record.verdict.sector() else {
        return Ok(());
    };
    let params = &config.params;
    let readout = if params.eta_readout && params.eta < 1.0 { apply_mode_loss(&state, params.eta)? } else { state };
    let outcome = sample_quadratures(&readout, config.quadrature, SAMPLING_STEP, rng)?;
    let sigma = qubit_operator_grid(&readout, config.quadrature, &[outcome.xi_a], &[outcome.xi_b])?.remove(0);
    let p = sigma.trace().re;
    if !(p > measurement::DENSITY_FLOOR) {
        return Err(Error::ZeroProbability("sampled outcome"));
    }
    let rho_q = DensityMatrix::new(sigma.scale_real(1.0 / p), SpaceLayout::qubits())?;
    let coherence = match sector {
        Sector::Even => rho_q.matrix()[(metrics::GG, metrics::EE)],
        Sector::Odd => rho_q.matrix()[(metrics::GE, metrics::EG)],
    };
    let best_phase = if coherence.norm() > 0.0 { coherence.arg() } else { 0.0 };
    record.outcome = Some(outcome);
    record.phase = metrics::extract_bell_phase(&rho_q, sector).ok();
    record.fidelity_phase = Some(metrics::bell_overlap(&rho_q, BellTarget::with_phase(sector, best_phase))?);
    record.fidelity_plus = Some(metrics::bell_overlap(&rho_q, BellTarget::plus(sector))?);
    record.concurrence = Some(metrics::concurrence(&rho_q)?);
    Ok(())
}

/// Aggregates of one `(α, η)` point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub trajectories: usize,
    pub completed: usize,
    pub aborts: usize,
    pub heralded: usize,
    /// Heralded share of the completed trajectories.
    pub success_fraction: f64,
    /// Maximum phase-adapted Bell fidelity (NaN without heralded runs).
    pub max_fidelity_phase: f64,
    /// Maximum overlap with the fixed `|Φ⁺⟩`/`|Ψ⁺⟩`.
    pub max_fidelity_plus: f64,
    /// Mean phase-adapted fidelity over heralded trajectories.
    pub mean_fidelity: f64,
    /// Standard error of `mean_fidelity`.
    pub mean_fidelity_std_error: f64,
    pub mean_concurrence: f64,
    pub lobe_center: f64,
    pub cutoff: f64,
    /// More than 1% of the trajectories aborted.
    pub invalid: bool,
}

impl SweepPoint {
    pub fn from_records(params: &ProtocolParams, setup: &StochasticSetup, records: &[TrajectoryRecord]) -> Self {
        let aborts = records.iter().filter(|r| r.abort.is_some()).count();
        let completed = records.len() - aborts;
        let heralded: Vec<&TrajectoryRecord> = records.iter().filter(|r| r.heralded()).collect();
        let fid: Vec<f64> = heralded.iter().filter_map(|r| r.fidelity_phase).collect();
        let plus: Vec<f64> = heralded.iter().filter_map(|r| r.fidelity_plus).collect();
        let conc: Vec<f64> = heralded.iter().filter_map(|r| r.concurrence).collect();
        let max = |v: &[f64]| v.iter().copied().fold(f64::NAN, f64::max);
        let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        let m = mean(&fid);
        let se = if fid.len() > 1 {
            (fid.iter().map(|f| (f - m).powi(2)).sum::<f64>() / (fid.len() - 1) as f64 / fid.len() as f64).sqrt()
        } else {
            f64::NAN
        };
        let (alpha, beta) = params.effective_amplitudes();
        Self {
            alpha,
            beta,
            eta: params.eta,
            trajectories: records.len(),
            completed,
            aborts,
            heralded: heralded.len(),
            success_fraction: if completed > 0 { heralded.len() as f64 / completed as f64 } else { 0.0 },
            max_fidelity_phase: max(&fid),
            max_fidelity_plus: max(&plus),
            mean_fidelity: m,
            mean_fidelity_std_error: se,
            mean_concurrence: mean(&conc),
            lobe_center: setup.filter.lobe_center,
            cutoff: setup.cutoff,
            invalid: aborts as f64 > ABORT_LIMIT * records.len() as f64,
        }
    }
}

/// A stochastic run: every trajectory and the aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticRun {
    pub records: Vec<TrajectoryRecord>,
    pub summary: SweepPoint,
    pub truncation: usize,
    pub dt: f64,
}

/// The stochastic path for one parameter point. Trajectory `k` draws from
/// stream `k` of the master seed, so results do not depend on scheduling.
pub fn run_stochastic(config: &RunConfig) -> Result<StochasticRun> {
    if config.path != Path::Stochastic {
        return Err(Error::InvalidParameter("run_stochastic needs a stochastic configuration".into()));
    }
    config.validate()?;
    let setup = StochasticSetup::new(config)?;
    let run = |k: usize| run_trajectory(&setup, config, k);
    #[cfg(feature = "parallel")]
    let records: Vec<TrajectoryRecord> = {
        use rayon::prelude::*;
        (0..config.trajectories).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let records: Vec<TrajectoryRecord> = (0..config.trajectories).map(run).collect();
    let summary = SweepPoint::from_records(&config.params, &setup, &records);
    Ok(StochasticRun { records, summary, truncation: setup.truncation, dt: setup.grid.dt })
}

/// Default sweep axes.
pub const SWEEP_ALPHAS: [f64; 5] = [0.25, 0.5, 0.75, 1.0, 1.25];
pub const SWEEP_ETAS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
pub const SWEEP_TRAJECTORIES: usize = 500;

/// Stochastic sweep over `α = β` and `η`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub alphas: Vec<f64>,
    pub etas: Vec<f64>,
    /// Row-major, `α` slow.
    pub points: Vec<SweepPoint>,
}

/// Run the stochastic path at every `(α, η)` with `β = α`; all points
/// share the master seed.
pub fn run_sweep(config: &RunConfig, alphas: &[f64], etas: &[f64]) -> Result<SweepResult> {
    let mut points = Vec::with_capacity(alphas.len() * etas.len());
    for &alpha in alphas {
        for &eta in etas {
            let mut c = config.clone();
            c.params.alpha = alpha;
            c.params.beta = alpha;
            c.params.eta = eta;
            points.push(run_stochastic(&c)?.summary);
        }
    }
    Ok(SweepResult { alphas: alphas.to_vec(), etas: etas.to_vec(), points })
}

/// Minimum samples for a comparison bin.
pub const COMPARE_MIN_SAMPLES: usize = 10;
/// Concurrence deficit of the analytic path that marks an artifact bin.
pub const ARTIFACT_MARGIN: f64 = 0.1;

/// One bin of [`compare_paths`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareBin {
    pub xi_a: f64,
    pub xi_b: f64,
    pub samples: usize,
    pub mean_abs_delta_f: f64,
    pub mean_c_analytic: f64,
    pub mean_c_stochastic: f64,
    pub artifact: bool,
}

/// Agreement of the analytic and stochastic paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub alpha: f64,
    pub beta: f64,
    pub sector: Sector,
    pub quadrature: Quadrature,
    pub trajectories: usize,
    /// Heralded trajectories of the requested sector.
    pub samples: usize,
    pub bin_width: f64,
    /// Bins with at least [`COMPARE_MIN_SAMPLES`] samples.
    pub bins: Vec<CompareBin>,
    pub excluded_bins: usize,
    /// Median of the per-bin mean `|ΔF|` outside artifact bins.
    pub median_abs_delta_f: Option<f64>,
}

/// Bin stochastic samples of one sector onto the analytic grid and compare
/// the overlap with `|Φ⁺⟩`/`|Ψ⁺⟩` and the concurrence per bin.
pub fn compare_paths(config: &RunConfig, bin_width: f64) -> Result<CompareReport> {
    let params = &config.params;
    let (alpha, beta) = params.effective_amplitudes();
    if alpha > 1.0 || beta > 1.0 {
        return Err(Error::InvalidParameter("path comparison needs α, β ≤ 1".into()));
    }
    if !(bin_width > 0.0) {
        return Err(Error::InvalidParameter(format!("bin width {bin_width}")));
    }
    let mut analytic = RunConfig::analytic(params.clone(), config.sector, config.quadrature);
    analytic.grid = config.grid;
    let grid = run_analytic(&analytic)?;
    let mut stochastic = config.clone();
    stochastic.path = Path::Stochastic;
    let run = run_stochastic(&stochastic)?;
    let window = config.grid.window;
    let nbins = (2.0 * window / bin_width).ceil() as usize;
    let mut acc = vec![(0usize, 0.0, 0.0, 0.0); nbins * nbins];
    let mut samples = 0;
    for r in &run.records {
        let (Some(o), Some(f), Some(c)) = (r.outcome, r.fidelity_plus, r.concurrence) else { continue };
        if r.verdict.sector() != Some(config.sector) || o.xi_a.abs() > window || o.xi_b.abs() > window {
            continue;
        }
        samples += 1;
        let cell = grid.nearest(o.xi_a, o.xi_b);
        let bin = |x: f64| (((x + window) / bin_width) as usize).min(nbins - 1);
        let a = &mut acc[bin(o.xi_a) * nbins + bin(o.xi_b)];
        a.0 += 1;
        a.1 += (f - grid.overlap[cell]).abs();
        a.2 += grid.concurrence[cell];
        a.3 += c;
    }
    let mut bins = Vec::new();
    let mut excluded = 0;
    for (k, &(n, df, ca, cs)) in acc.iter().enumerate() {
        if n == 0 {
            continue;
        }
        if n < COMPARE_MIN_SAMPLES {
            excluded += 1;
            continue;
        }
        let nf = n as f64;
        let (ca, cs) = (ca / nf, cs / nf);
        bins.push(CompareBin {
            xi_a: -window + (k / nbins) as f64 * bin_width + 0.5 * bin_width,
            xi_b: -window + (k % nbins) as f64 * bin_width + 0.5 * bin_width,
            samples: n,
            mean_abs_delta_f: df / nf,
            mean_c_analytic: ca,
            mean_c_stochastic: cs,
            artifact: cs - ca > ARTIFACT_MARGIN,
        });
    }
    let mut clean: Vec<f64> = bins.iter().filter(|b| !b.artifact).map(|b| b.mean_abs_delta_f).collect();
    clean.sort_by(|a, b| a.total_cmp(b));
    let median = (!clean.is_empty()).then(|| {
        let m = clean.len();
        if m % 2 == 1 {
            clean[m / 2]
        } else {
            0.5 * (clean[m / 2 - 1] + clean[m / 2])
        }
    });
    Ok(CompareReport {
        alpha,
        beta,
        sector: config.sector,
        quadrature: config.quadrature,
        trajectories: config.trajectories,
        samples,
        bin_width,
        bins,
        excluded_bins: excluded,
        median_abs_delta_f: median,
    })
}

/// Run `f` with at most `threads` worker threads (0 keeps the default).
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Run `f` (single-threaded build).
#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send>(_threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}
