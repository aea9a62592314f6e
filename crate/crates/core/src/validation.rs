//! Named pass/fail checks of the simulator's physics and numerics.
//!
//! The quick level exercises the structural invariants (trace and
//! positivity preservation, dark states, conservation laws, oracles,
//! measurement completeness, entanglement measures, parity bookkeeping and
//! determinism) in well under a minute. The full level adds the headline
//! checks: adiabatic elimination of mode c, the parity lobes of the
//! integrated current, the structure of the X and Y outcome planes, the
//! stochastic fidelity points and the consistency of the trajectory
//! ensemble with the master equation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::lindblad::{self, Jump, Lindbladian, Rk4};
use crate::dynamics::parity::{nominal_lobe_center, CONVENTION_FACTOR};
use crate::dynamics::three_mode::pair_operator;
use crate::dynamics::{
    compare_adiabatic_elimination, evolve_sme_homodyne, evolve_sse_homodyne, quasi_steady_state, GaussianMixture,
    MonitoredChannel, ProtocolParams, QssOptions, TwoPhotonPropagator,
};
use crate::error::{Error, Result};
use crate::hilbert::{self, DensityMatrix, Factor, Quadrature, Sector, SpaceLayout, StateVector};
use crate::metrics::{self, BellTarget, OutcomeGrid};
use crate::protocol::{self, GridSpec, RunConfig, StochasticRun, SweepPoint};
use crate::qlinalg::{self, CMatrix, C64, ZERO};

/// Depth of a validation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Quick,
    Full,
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured quantities and the thresholds they were held to.
    pub detail: String,
    pub seconds: f64,
}

impl Check {
    /// Run `body`, timing it; an error fails the check with its message.
    pub fn run(name: &str, body: impl FnOnce() -> Result<(bool, String)>) -> Self {
        let start = Instant::now();
        let (passed, detail) = match body() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        Self { name: name.to_string(), passed, detail, seconds: start.elapsed().as_secs_f64() }
    }
}

/// Run every check of `level` with master seed `seed`.
pub fn run_suite(level: Level, seed: u64) -> Vec<Check> {
    let mut checks = quick_suite(seed);
    if level == Level::Full {
        checks.extend(full_extras(seed));
    }
    checks
}

/// Wall-clock budget of the quick level, in seconds.
pub const QUICK_BUDGET_SECONDS: f64 = 60.0;

/// The structural invariant checks.
pub fn quick_suite(seed: u64) -> Vec<Check> {
    let planes = ReferencePlanes::compute();
    let on_planes = |name: &str, f: fn(&ReferencePlanes) -> Result<(bool, String)>| {
        Check::run(name, || f(planes.as_ref().map_err(clone_err)?))
    };
    vec![
        Check::run("trace, Hermiticity and positivity preservation", || preservation(seed)),
        Check::run("dark states of D(ab) are fixed points", || dark_fixed_points(seed)),
        Check::run("<n_a - n_b> conservation <= 1e-8", difference_conservation),
        Check::run("RK4 vs superoperator exponential <= 1e-8", rk4_vs_expm),
        on_planes("quadrature completeness <= 1e-6", completeness),
        Check::run("concurrence local-unitary invariance <= 1e-9", || lu_invariance(seed)),
        Check::run("Werner-state concurrence closed form", werner_closed_form),
        on_planes("parity sectors never mix <= 1e-12", no_parity_mixing),
        on_planes("even/odd X planes related by quarter turn <= 1e-6", quarter_turn),
        Check::run("byte reproducibility under a fixed seed", || reproducibility(seed)),
    ]
}

/// The headline checks added by the full level.
pub fn full_extras(seed: u64) -> Vec<Check> {
    let mut out = vec![Check::run("adiabatic elimination within 5%", adiabatic_elimination)];
    let planes = ReferencePlanes::compute();
    out.push(Check::run("X plane structure", || x_plane_structure(&planes.as_ref().map_err(clone_err)?.x_even)));
    out.push(Check::run("Y plane structure", || y_plane_structure(&planes.as_ref().map_err(clone_err)?.y_even)));
    let strong = headline_run(0.75, 1.0, seed);
    out.push(Check::run("parity lobes at α=β=0.75, η=1", || parity_lobes(strong.as_ref().map_err(clone_err)?)));
    out.push(Check::run("max fidelity at α=0.75, η=1 >= 0.99", || {
        headline(&strong.as_ref().map_err(clone_err)?.summary, 0.99, false)
    }));
    out.push(Check::run("max fidelity at α=0.5, η=0.7 > 0.80", || {
        headline(&headline_run(0.5, 0.7, seed)?.summary, 0.80, true)
    }));
    out.push(Check::run("trajectory ensemble matches master equation", || {
        unraveling_consistency(seed, UNRAVELING_TRAJECTORIES)
    }));
    out
}

fn clone_err(e: &Error) -> Error {
    Error::InvalidState(e.to_string())
}

/// Analytic states and outcome planes at the default parameters.
pub struct ReferencePlanes {
    pub even: protocol::AnalyticState,
    pub odd: protocol::AnalyticState,
    pub x_even: OutcomeGrid,
    pub x_odd: OutcomeGrid,
    pub y_even: OutcomeGrid,
}

/// Amplitude of the reference outcome planes.
pub const REFERENCE_AMPLITUDE: f64 = 0.75;

impl ReferencePlanes {
    pub fn compute() -> Result<Self> {
        let params =
            ProtocolParams { alpha: REFERENCE_AMPLITUDE, beta: REFERENCE_AMPLITUDE, ..ProtocolParams::default() };
        let grid = GridSpec::default();
        let even = protocol::analytic_state(&params, Sector::Even)?;
        let odd = protocol::analytic_state(&params, Sector::Odd)?;
        let x_even = protocol::analytic_grid(&even, &params, Quadrature::X, grid)?;
        let x_odd = protocol::analytic_grid(&odd, &params, Quadrature::X, grid)?;
        let y_even = protocol::analytic_grid(&even, &params, Quadrature::Y, grid)?;
        Ok(Self { even, odd, x_even, x_odd, y_even })
    }
}

fn random_density(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> CMatrix {
    let a = CMatrix::from_fn(dim, rank, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let mut m = a.matmul(&a.dagger());
    let tr = m.trace().re;
    m.scale_mut(1.0 / tr);
    m
}

/// Trace, Hermiticity and positivity after deterministic and monitored
/// evolution of random mixed states.
pub fn preservation(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let n = 4;
    let layout = SpaceLayout::modes(n, n)?;
    let pair = pair_operator(&layout)?;
    let h = layout.embed(&hilbert::number_op(n), Factor::ModeA)?.scale_real(0.3);
    let jumps = vec![
        Jump::new(1.0, pair.clone()),
        Jump::new(0.05, layout.lowering(Factor::ModeA)?),
        Jump::new(0.05, layout.lowering(Factor::ModeB)?),
    ];
    let (mut trace_err, mut herm_err, mut min_eig) = (0.0f64, 0.0f64, f64::INFINITY);
    let mut record = |rho: &DensityMatrix| -> Result<()> {
        trace_err = trace_err.max((rho.trace() - 1.0).abs());
        herm_err = herm_err.max(rho.matrix().hermiticity_error());
        min_eig = min_eig.min(rho.min_eigenvalue()?);
        Ok(())
    };
    for rank in [1, 3, 16] {
        let rho = DensityMatrix::new(random_density(&mut rng, n * n, rank), layout.clone())?;
        let rk4 = Rk4::new(Lindbladian::new(n * n, Some(h.clone()), jumps.clone())?, 0.005)?;
        record(&lindblad::evolve_lindblad(&rho, &rk4, 2.0)?)?;
        let prop = TwoPhotonPropagator::new(&layout, 1.0, 2.0)?;
        record(&DensityMatrix::new(prop.propagate(rho.matrix())?, layout.clone())?)?;
        let channel = MonitoredChannel::new(1.0, pair.clone(), 0.0, 0.6)?;
        let residual = Rk4::new(
            crate::dynamics::residual_lindbladian(n * n, Some(h.clone()), jumps[1..].to_vec(), std::slice::from_ref(&channel))?,
            0.002,
        )?;
        let out = evolve_sme_homodyne(&rho, &residual, &[channel], 2.0, &mut rng)?;
        record(&out.state)?;
    }
    let passed = trace_err <= 1e-10 && herm_err <= 1e-12 && min_eig >= -1e-10;
    Ok((passed, format!("max |Tr-1| = {trace_err:.2e}, max ||ρ-ρ†|| = {herm_err:.2e}, min eigenvalue = {min_eig:.2e}")))
}

/// Random pure states on `min(n_a, n_b) = 0` are annihilated by the
/// generator and left unchanged by the propagator.
pub fn dark_fixed_points(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    let n = 5;
    let layout = SpaceLayout::modes(n, n)?;
    let dense = Lindbladian::new(n * n, None, vec![Jump::new(1.0, pair_operator(&layout)?)])?;
    let prop = TwoPhotonPropagator::new(&layout, 1.0, 5.0)?;
    let dark: Vec<usize> = (0..n * n).filter(|i| (i / n).min(i % n) == 0).collect();
    let (mut gen, mut moved) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let mut psi = vec![ZERO; n * n];
        for &i in &dark {
            psi[i] = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        let psi = StateVector(psi).normalized()?;
        let rho = psi.projector();
        gen = gen.max(dense.rhs(&rho)?.max_abs()).max(prop.generator(&rho)?.max_abs());
        moved = moved.max((&prop.propagate(&rho)? - &rho).max_abs());
    }
    let passed = gen <= 1e-14 && moved <= 1e-14;
    Ok((passed, format!("max |L ρ| = {gen:.2e}, max |e^(tL) ρ - ρ| = {moved:.2e} over 20 states")))
}

fn even_state(alpha: f64, beta: f64, n: usize) -> Result<DensityMatrix> {
    let layout = SpaceLayout::protocol(n, n)?;
    let psi = hilbert::step1_joint_state_within(alpha, beta, &layout, hilbert::CROSS_CHECK_TAIL_TOLERANCE)?;
    let (even, _) = hilbert::parity_project(&psi, &layout, Sector::Even)?;
    DensityMatrix::from_pure(&even, layout)
}

/// `⟨n_a − n_b⟩` before and after two-photon loss.
pub fn difference_conservation() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for (alpha, beta, n) in [(0.75, 0.5, 16), (0.5, 0.3, 10)] {
        let rho = even_state(alpha, beta, n)?;
        let layout = rho.layout().clone();
        let diff = &layout.embed(&hilbert::number_op(n), Factor::ModeA)? - &layout.embed(&hilbert::number_op(n), Factor::ModeB)?;
        let before = rho.expectation(&diff).re;
        let qss = quasi_steady_state(&rho, 1.0, QssOptions::default())?;
        worst = worst.max((qss.state.expectation(&diff).re - before).abs());
    }
    // independent integrator on the mode space
    let n = 7;
    let layout = SpaceLayout::modes(n, n)?;
    let tol = hilbert::CROSS_CHECK_TAIL_TOLERANCE;
    let psi = hilbert::coherent_state_within(C64::new(0.5, 0.0), n, tol)?.kron(&hilbert::coherent_state_within(C64::new(0.3, 0.0), n, tol)?);
    let rho = DensityMatrix::from_pure(&psi, layout.clone())?;
    let diff = &layout.embed(&hilbert::number_op(n), Factor::ModeA)? - &layout.embed(&hilbert::number_op(n), Factor::ModeB)?;
    let rk4 = Rk4::new(Lindbladian::new(n * n, None, vec![Jump::new(1.0, pair_operator(&layout)?)])?, 0.005)?;
    let out = lindblad::evolve_lindblad(&rho, &rk4, 3.0)?;
    worst = worst.max((out.expectation(&diff).re - rho.expectation(&diff).re).abs());
    Ok((worst <= 1e-8, format!("max |Δ<n_a - n_b>| = {worst:.2e}")))
}

/// RK4 integration against `exp(tS)` of the vectorized generator.
pub fn rk4_vs_expm() -> Result<(bool, String)> {
    let n = 5;
    let layout = SpaceLayout::modes(n, n)?;
    let tol = hilbert::CROSS_CHECK_TAIL_TOLERANCE;
    let a = hilbert::coherent_state_within(C64::new(0.4, 0.0), n, tol)?;
    let b = hilbert::coherent_state_within(C64::new(0.35, 0.0), n, tol)?;
    let rho = DensityMatrix::from_pure(&a.kron(&b), layout.clone())?;
    let jumps = vec![Jump::new(1.0, pair_operator(&layout)?), Jump::new(0.1, layout.lowering(Factor::ModeA)?)];
    let h = layout.embed(&hilbert::number_op(n), Factor::ModeB)?.scale_real(0.2);
    let lind = Lindbladian::new(n * n, Some(h), jumps)?;
    let t = 3.0;
    let rk4 = Rk4::new(lind.clone(), 0.005)?;
    let got = lindblad::evolve_lindblad(&rho, &rk4, t)?;
    let oracle = lindblad::propagate_superoperator(rho.matrix(), &lind, t)?;
    let err = (got.matrix() - &oracle).frobenius_norm();
    Ok((err <= 1e-8, format!("||ρ_RK4 - ρ_expm||_F = {err:.2e} at t = {t}")))
}

/// `Σ P h²` of the reference planes.
pub fn completeness(planes: &ReferencePlanes) -> Result<(bool, String)> {
    let x = (planes.x_even.total_probability() - 1.0).abs();
    let y = (planes.y_even.total_probability() - 1.0).abs();
    let xo = (planes.x_odd.total_probability() - 1.0).abs();
    let worst = x.max(y).max(xo);
    Ok((worst <= 1e-6, format!("|ΣPh² - 1| = {x:.2e} (X even), {xo:.2e} (X odd), {y:.2e} (Y even)")))
}

fn random_unitary(rng: &mut ChaCha8Rng) -> Result<CMatrix> {
    let (a, b, c, d) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let mut h = CMatrix::identity(2).scale_real(a);
    h.axpy(C64::new(b, 0.0), &qlinalg::pauli_x());
    h.axpy(C64::new(c, 0.0), &qlinalg::pauli_y());
    h.axpy(C64::new(d, 0.0), &qlinalg::pauli_z());
    qlinalg::expm(&h.scale(C64::new(0.0, 1.0)))
}

/// Concurrence of random states is unchanged by random local unitaries.
pub fn lu_invariance(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0003);
    let mut worst = 0.0f64;
    for k in 0..60 {
        let rho = DensityMatrix::new(random_density(&mut rng, 4, 1 + k % 4), SpaceLayout::qubits())?;
        let u = qlinalg::kron(&random_unitary(&mut rng)?, &random_unitary(&mut rng)?)?;
        let rotated = DensityMatrix::new(u.matmul(rho.matrix()).matmul(&u.dagger()), SpaceLayout::qubits())?;
        worst = worst.max((metrics::concurrence(&rho)? - metrics::concurrence(&rotated)?).abs());
    }
    Ok((worst <= 1e-9, format!("max |C(ρ) - C(UρU†)| = {worst:.2e} over 60 states")))
}

/// `C = max(0, (3p − 1)/2)` for `p|Φ⁺⟩⟨Φ⁺| + (1 − p) I/4`.
pub fn werner_closed_form() -> Result<(bool, String)> {
    let bell = BellTarget::PhiPlus.vector();
    let mut worst = 0.0f64;
    for k in 0..=40 {
        let p = k as f64 / 40.0;
        let mut m = CMatrix::outer(&bell, &bell).scale_real(p);
        m += &CMatrix::identity(4).scale_real((1.0 - p) / 4.0);
        let c = metrics::concurrence(&DensityMatrix::new(m, SpaceLayout::qubits())?)?;
        worst = worst.max((c - ((3.0 * p - 1.0) / 2.0).max(0.0)).abs());
    }
    Ok((worst <= 1e-9, format!("max deviation {worst:.2e} over p in [0, 1]")))
}

fn cross_sector(m: &CMatrix, mode_dim: usize) -> f64 {
    let even = |q: usize| q == metrics::GG || q == metrics::EE;
    let mut worst = 0.0f64;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if even(i / mode_dim) != even(j / mode_dim) || !even(i / mode_dim) {
                worst = worst.max(m[(i, j)].norm());
            }
        }
    }
    worst
}

/// An even-sector state stays in the even sector under two-photon loss.
pub fn no_parity_mixing(planes: &ReferencePlanes) -> Result<(bool, String)> {
    let rho = even_state(0.4, 0.3, 6)?;
    let d = 36;
    let rk4 = Rk4::new(Lindbladian::new(rho.dim(), None, vec![Jump::new(1.0, pair_operator(rho.layout())?)])?, 0.005)?;
    let mut worst = cross_sector(lindblad::evolve_lindblad(&rho, &rk4, 2.0)?.matrix(), d);
    let n = planes.even.state.layout().factor_dim(Factor::ModeA).unwrap_or(0);
    worst = worst.max(cross_sector(planes.even.state.matrix(), n * n));
    Ok((worst <= 1e-12, format!("max odd-sector element = {worst:.2e}")))
}

/// `F_even(x_a, x_b) = F_odd(x_a, −x_b)` on the X plane.
pub fn quarter_turn(planes: &ReferencePlanes) -> Result<(bool, String)> {
    let (e, o) = (&planes.x_even, &planes.x_odd);
    let n = e.cols();
    let mut worst = 0.0f64;
    for i in 0..e.rows() {
        for j in 0..n {
            worst = worst.max((e.overlap[e.index(i, j)] - o.overlap[o.index(i, n - 1 - j)]).abs());
        }
    }
    Ok((worst <= 1e-6, format!("max |F_even(x_a,x_b) - F_odd(x_a,-x_b)| = {worst:.2e}")))
}

/// Repeated stochastic runs, also with a different worker count, give
/// identical records.
pub fn reproducibility(seed: u64) -> Result<(bool, String)> {
    let params = ProtocolParams { alpha: 0.5, beta: 0.5, t_total: 2.0, seed, ..ProtocolParams::default() };
    let config = RunConfig::stochastic(params, Quadrature::Y, 4);
    let first = format!("{:?}", protocol::run_stochastic(&config)?);
    let second = format!("{:?}", protocol::run_stochastic(&config)?);
    let single = format!("{:?}", protocol::with_threads(1, || protocol::run_stochastic(&config))??);
    let passed = first == second && first == single;
    Ok((passed, format!("{} bytes of trajectory records; repeat equal: {}, one-thread equal: {}", first.len(), first == second, first == single)))
}

/// Three-mode vs eliminated model, `⟨n_a⟩(t)` for `t ≤ 5/κ_2ph`.
pub fn adiabatic_elimination() -> Result<(bool, String)> {
    let params = ProtocolParams { alpha: 0.5, beta: 0.5, ..ProtocolParams::default() };
    let ratio = params.g / params.kappa_c;
    let t_end = 5.0 / params.kappa_2ph();
    let cmp = compare_adiabatic_elimination(&params, 8, 4, t_end, 50)?;
    let dev = cmp.max_relative_deviation();
    Ok((dev <= 0.05, format!("g/κ_c = {ratio}, max relative deviation of <n_a> = {:.3}% (limit 5%)", 100.0 * dev)))
}

/// Trajectories used for the stochastic headline points.
pub const HEADLINE_TRAJECTORIES: usize = protocol::SWEEP_TRAJECTORIES;

/// One stochastic headline point (`β = α`, Y readout).
pub fn headline_run(alpha: f64, eta: f64, seed: u64) -> Result<StochasticRun> {
    let params = ProtocolParams { alpha, beta: alpha, eta, seed, ..ProtocolParams::default() };
    protocol::run_stochastic(&RunConfig::stochastic(params, Quadrature::Y, HEADLINE_TRAJECTORIES))
}

/// Max phase-adapted fidelity against `threshold` (`>` when `strict`).
pub fn headline(point: &SweepPoint, threshold: f64, strict: bool) -> Result<(bool, String)> {
    let f = point.max_fidelity_phase;
    let passed = !point.invalid && if strict { f > threshold } else { f >= threshold };
    Ok((
        passed,
        format!(
            "max F = {f:.4} (fixed target {:.4}), heralded {}/{}, aborts {}, threshold {}{threshold}",
            point.max_fidelity_plus,
            point.heralded,
            point.completed,
            point.aborts,
            if strict { ">" } else { ">=" }
        ),
    ))
}

/// Minimum sample count of the lobe fit.
pub const LOBE_MIN_SAMPLES: usize = 500;

/// Two-Gaussian fit of the integrated current: bimodality, centers at
/// `±K·2g·min(α,β)²/κ_c` within 10% and symmetric within 5%.
pub fn parity_lobes(run: &StochasticRun) -> Result<(bool, String)> {
    let samples: Vec<f64> = run.records.iter().map(|r| r.x_c).filter(|x| x.is_finite()).collect();
    if samples.len() < LOBE_MIN_SAMPLES {
        return Ok((false, format!("only {} samples (need {LOBE_MIN_SAMPLES})", samples.len())));
    }
    let fit = GaussianMixture::fit(&samples)?;
    let p = ProtocolParams::default();
    let expected = CONVENTION_FACTOR * nominal_lobe_center(p.g, p.kappa_c, run.summary.alpha, run.summary.beta);
    let [lo, hi] = fit.means;
    let dev = ((hi - expected).abs() / expected).max((lo + expected).abs() / expected);
    let asym = (hi + lo).abs() / (0.5 * (hi - lo));
    let bimodal = fit.is_bimodal();
    let passed = bimodal && dev <= 0.10 && asym <= 0.05;
    Ok((
        passed,
        format!(
            "{} samples: centers {lo:.3}/{hi:.3} vs ±{expected:.3} (dev {:.1}%, limit 10%), asymmetry {:.1}% (limit 5%), \
             widths {:.3}/{:.3}, Ashman D = {:.2} (bimodal iff > 2)",
            samples.len(),
            100.0 * dev,
            100.0 * asym,
            fit.sigmas[0],
            fit.sigmas[1],
            fit.ashman_d()
        ),
    ))
}

/// X-plane structure: `F` near 1 on the anti-diagonal, `C` near 0 at the
/// probability centroids of the same-sign quadrants, which carry most of
/// the outcome probability.
pub fn x_plane_structure(grid: &OutcomeGrid) -> Result<(bool, String)> {
    let n = grid.cols();
    let f_anti = (0..grid.rows()).map(|i| grid.overlap[grid.index(i, n - 1 - i)]).fold(0.0, f64::max);
    let pos = grid.centroid(|a, b| a > 0.0 && b > 0.0).ok_or(Error::ZeroProbability("quadrant"))?;
    let neg = grid.centroid(|a, b| a < 0.0 && b < 0.0).ok_or(Error::ZeroProbability("quadrant"))?;
    let c_pos = grid.concurrence[grid.nearest(pos.0, pos.1)];
    let c_neg = grid.concurrence[grid.nearest(neg.0, neg.1)];
    let share = (grid.quadrant_mass(1.0, 1.0) + grid.quadrant_mass(-1.0, -1.0)) / grid.total_probability();
    let (ok_f, ok_c, ok_m) = (f_anti >= 0.95, c_pos.max(c_neg) <= 0.05, share >= 0.60);
    Ok((
        ok_f && ok_c && ok_m,
        format!(
            "(i) max F on x_a=-x_b = {f_anti:.4} [{}]; (ii) C at centroids ({:.3},{:.3}) = {c_pos:.4}, ({:.3},{:.3}) = {c_neg:.4} \
             (limit 0.05) [{}]; (iii) same-sign quadrant share = {share:.4} (limit 0.60) [{}]",
            verdict(ok_f),
            pos.0,
            pos.1,
            neg.0,
            neg.1,
            verdict(ok_c),
            verdict(ok_m)
        ),
    ))
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

/// Fringes of `F` along a line of the outcome plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FringeReport {
    /// Positions of the interior local minima of `F`.
    pub minima: Vec<f64>,
    /// `(start, end, phase monotone)` of every span between consecutive minima.
    pub fringes: Vec<(f64, f64, bool)>,
}

/// Fringes of `F` along `ξ_a = ξ_b`; the Bell phase is unwrapped within
/// each fringe and tested for monotonicity.
pub fn diagonal_fringes(grid: &OutcomeGrid) -> FringeReport {
    let m = grid.rows().min(grid.cols());
    let f: Vec<f64> = (0..m).map(|i| grid.overlap[grid.index(i, i)]).collect();
    let phase: Vec<f64> = (0..m).map(|i| grid.phase[grid.index(i, i)]).collect();
    let minima: Vec<usize> = (1..m.saturating_sub(1)).filter(|&i| f[i] < f[i - 1] && f[i] <= f[i + 1]).collect();
    let fringes = minima
        .windows(2)
        .map(|w| {
            let span = &phase[w[0]..=w[1]];
            let mut steps = Vec::with_capacity(span.len());
            let mut monotone = span.iter().all(|p| p.is_finite());
            if monotone {
                for pair in span.windows(2) {
                    let d = pair[1] - pair[0];
                    steps.push(d - (2.0 * std::f64::consts::PI) * (d / (2.0 * std::f64::consts::PI)).round());
                }
                let up = steps.iter().all(|&d| d > 0.0);
                let down = steps.iter().all(|&d| d < 0.0);
                monotone = up || down;
            }
            (grid.axis_a[w[0]], grid.axis_a[w[1]], monotone)
        })
        .collect();
    FringeReport { minima: minima.iter().map(|&i| grid.axis_a[i]).collect(), fringes }
}

/// Y-plane structure: probability-weighted concurrence near 1 and at
/// least two fringes of `F` along `y_a = y_b` with monotone Bell phase.
pub fn y_plane_structure(grid: &OutcomeGrid) -> Result<(bool, String)> {
    let mean_c = grid.weighted_mean(&grid.concurrence, |_, _| true).ok_or(Error::ZeroProbability("outcome plane"))?;
    let report = diagonal_fringes(grid);
    let monotone = report.fringes.iter().filter(|f| f.2).count();
    let ok_c = mean_c >= 0.9;
    let ok_f = report.fringes.len() >= 2 && monotone == report.fringes.len();
    let spans: Vec<String> = report.fringes.iter().map(|(a, b, _)| format!("[{a:.1},{b:.1}]")).collect();
    Ok((
        ok_c && ok_f,
        format!(
            "weighted mean C = {mean_c:.4} (limit 0.9) [{}]; {} fringes {} with monotone phase in {} [{}]",
            verdict(ok_c),
            report.fringes.len(),
            spans.join(" "),
            monotone,
            verdict(ok_f)
        ),
    ))
}

/// Trajectories of the ensemble-consistency check.
pub const UNRAVELING_TRAJECTORIES: usize = 2000;

/// Mean of `M` unit-efficiency trajectories at `α = β = 0.5`, `N = 6`
/// against the Lindblad solution at `t ∈ {1, 3, 10}/κ_2ph`, within three
/// Monte Carlo standard errors in Frobenius norm.
pub fn unraveling_consistency(seed: u64, trajectories: usize) -> Result<(bool, String)> {
    if trajectories < 2 {
        return Err(Error::InvalidParameter("need at least 2 trajectories".into()));
    }
    let n = 6;
    let params = ProtocolParams { alpha: 0.5, beta: 0.5, ..ProtocolParams::default() };
    let kappa = params.kappa_2ph();
    let layout = SpaceLayout::protocol(n, n)?;
    let psi0 = hilbert::step1_joint_state_within(0.5, 0.5, &layout, hilbert::CROSS_CHECK_TAIL_TOLERANCE)?;
    let pair = pair_operator(&layout)?;
    let channel = MonitoredChannel::new(kappa, pair.clone(), params.theta_c(), 1.0)?;
    let dt = protocol::sme_dt(kappa, n);
    let times = [1.0 / kappa, 3.0 / kappa, 10.0 / kappa];
    let rho0 = DensityMatrix::from_pure(&psi0, layout.clone())?;
    let rk4 = Rk4::new(Lindbladian::new(layout.dim(), None, vec![Jump::new(kappa, pair)])?, dt)?;
    let (_, reference) = lindblad::evolve_lindblad_sampled(&rho0, &rk4, times[2], &times)?;
    let run = |k: usize| -> Result<Vec<StateVector>> {
        let mut rng = protocol::trajectory_rng(seed, k);
        let mut psi = psi0.clone();
        let mut t = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &target in &times {
            psi = evolve_sse_homodyne(&psi, None, std::slice::from_ref(&channel), dt, target - t, &mut rng)?.state;
            t = target;
            out.push(psi.clone());
        }
        Ok(out)
    };
    #[cfg(feature = "parallel")]
    let states: Vec<Vec<StateVector>> = {
        use rayon::prelude::*;
        (0..trajectories).into_par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let states: Vec<Vec<StateVector>> = (0..trajectories).map(run).collect::<Result<_>>()?;
    let m = trajectories as f64;
    let d = layout.dim();
    let mut passed = true;
    let mut parts = Vec::new();
    for (s, reference) in reference.iter().enumerate() {
        let mut sum = CMatrix::zeros(d, d);
        let mut sq = vec![0.0; d * d];
        for traj in &states {
            let p = traj[s].projector();
            for (k, z) in p.as_slice().iter().enumerate() {
                sq[k] += z.norm_sqr();
            }
            sum += &p;
        }
        let mean = sum.scale_real(1.0 / m);
        let var: f64 = mean
            .as_slice()
            .iter()
            .zip(&sq)
            .map(|(z, s2)| (s2 / m - z.norm_sqr()).max(0.0) * m / (m - 1.0))
            .sum();
        let se = (var / m).sqrt();
        let dist = (&mean - reference.matrix()).frobenius_norm();
        passed &= dist <= 3.0 * se;
        parts.push(format!("t={}: ||ρ̄-ρ||_F = {dist:.4} vs 3σ = {:.4}", times[s] * kappa, 3.0 * se));
    }
    Ok((passed, format!("M = {trajectories}, dt = {dt}: {}", parts.join("; "))))
}
