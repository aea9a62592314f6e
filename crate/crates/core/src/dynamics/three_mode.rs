//! The full three-mode model `H = ig(abc† − a†b†c)` with loss `(κ_c, c)`,
//! used to validate the eliminated two-photon-loss model.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, Factor, SpaceLayout};
use crate::qlinalg::{CMatrix, C64};

use super::lindblad::{self, Jump, Lindbladian, Rk4};
use super::params::{Model, ProtocolParams};
use super::sme::{self, MonitoredChannel, SmeOutput};

/// Pair-annihilation operator `ab` on `layout`.
pub fn pair_operator(layout: &SpaceLayout) -> Result<CMatrix> {
    Ok(layout.lowering(Factor::ModeA)?.matmul(&layout.lowering(Factor::ModeB)?))
}

/// Rotating-frame interaction `H = ig(abc† − a†b†c)`.
pub fn three_wave_hamiltonian(layout: &SpaceLayout, g: f64) -> Result<CMatrix> {
    let abcd = pair_operator(layout)?.matmul(&layout.lowering(Factor::ModeC)?.dagger());
    let h = &abcd - &abcd.dagger();
    Ok(h.scale(C64::new(0.0, g)))
}

fn single_photon_jumps(layout: &SpaceLayout, params: &ProtocolParams) -> Result<Vec<Jump>> {
    let mut jumps = Vec::new();
    if params.kappa_a > 0.0 {
        jumps.push(Jump::new(params.kappa_a, layout.lowering(Factor::ModeA)?));
    }
    if params.kappa_b > 0.0 {
        jumps.push(Jump::new(params.kappa_b, layout.lowering(Factor::ModeB)?));
    }
    Ok(jumps)
}

/// Generator of the three-mode model on `layout` (must contain mode c).
pub fn three_mode_lindbladian(layout: &SpaceLayout, params: &ProtocolParams) -> Result<Lindbladian> {
    let mut jumps = single_photon_jumps(layout, params)?;
    jumps.push(Jump::new(params.kappa_c, layout.lowering(Factor::ModeC)?));
    Lindbladian::new(layout.dim(), Some(three_wave_hamiltonian(layout, params.g)?), jumps)
}

/// Generator of the eliminated model `κ_2ph D(ab)` (plus residual
/// single-photon loss) on `layout`.
pub fn effective_lindbladian(layout: &SpaceLayout, params: &ProtocolParams) -> Result<Lindbladian> {
    let mut jumps = single_photon_jumps(layout, params)?;
    jumps.push(Jump::new(params.kappa_2ph(), pair_operator(layout)?));
    Lindbladian::new(layout.dim(), None, jumps)
}

/// How to run [`evolve_full_three_mode`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThreeModeRun {
    /// Unconditional Lindblad evolution.
    Deterministic,
    /// Homodyne monitoring of the output of mode c at phase `θ_c` with
    /// efficiency `η` from the parameters.
    Monitored,
}

/// Result of [`evolve_full_three_mode`].
#[derive(Clone, Debug)]
pub enum ThreeModeOutcome {
    Deterministic(DensityMatrix),
    Monitored(SmeOutput<DensityMatrix>),
}

fn require_regime(layout: &SpaceLayout, params: &ProtocolParams) -> Result<()> {
    layout.require(Factor::ModeC)?;
    if params.kappa_c < 10.0 * params.kappa_2ph() {
        return Err(Error::InvalidParameter(format!(
            "three-mode model needs κ_c ≥ 10 κ_2ph (κ_c = {}, κ_2ph = {})",
            params.kappa_c,
            params.kappa_2ph()
        )));
    }
    Ok(())
}

/// Evolve a state including mode c for `t_end` under the three-mode model.
pub fn evolve_full_three_mode<R: Rng + ?Sized>(
    rho0: &DensityMatrix,
    params: &ProtocolParams,
    t_end: f64,
    run: ThreeModeRun,
    rng: &mut R,
) -> Result<ThreeModeOutcome> {
    let layout = rho0.layout();
    require_regime(layout, params)?;
    let dt = params.dt_for(Model::ThreeMode);
    match run {
        ThreeModeRun::Deterministic => {
            let rk4 = Rk4::stable(three_mode_lindbladian(layout, params)?, dt)?;
            Ok(ThreeModeOutcome::Deterministic(lindblad::evolve_lindblad(rho0, &rk4, t_end)?))
        }
        ThreeModeRun::Monitored => {
            let channel = MonitoredChannel::new(params.kappa_c, layout.lowering(Factor::ModeC)?, params.theta_c(), params.eta)?;
            let residual = sme::residual_lindbladian(
                layout.dim(),
                Some(three_wave_hamiltonian(layout, params.g)?),
                single_photon_jumps(layout, params)?,
                std::slice::from_ref(&channel),
            )?;
            let grid = sme::TimeGrid::covering(t_end, dt.min(residual.rk4_stable_dt()))?;
            let rk4 = Rk4::new(residual, grid.dt)?;
            Ok(ThreeModeOutcome::Monitored(sme::evolve_sme_homodyne(rho0, &rk4, &[channel], grid.t_end(), rng)?))
        }
    }
}

/// `⟨n_a⟩(t)` of the full and the eliminated model at the sample times.
#[derive(Clone, Debug)]
pub struct EliminationComparison {
    pub times: Vec<f64>,
    pub full: Vec<f64>,
    pub effective: Vec<f64>,
}

impl EliminationComparison {
    /// Largest `|n_full − n_eff| / n_eff` over the samples.
    pub fn max_relative_deviation(&self) -> f64 {
        self.full
            .iter()
            .zip(&self.effective)
            .map(|(f, e)| (f - e).abs() / e.abs().max(1e-300))
            .fold(0.0, f64::max)
    }
}

/// Evolve `|α, β, 0_c⟩` with both models and sample `⟨n_a⟩`.
pub fn compare_adiabatic_elimination(
    params: &ProtocolParams,
    n_ab: usize,
    n_c: usize,
    t_end: f64,
    samples: usize,
) -> Result<EliminationComparison> {
    let full_layout = SpaceLayout::three_modes(n_ab, n_ab, n_c)?;
    let eff_layout = SpaceLayout::modes(n_ab, n_ab)?;
    require_regime(&full_layout, params)?;
    let (alpha, beta) = params.effective_amplitudes();
    let tol = crate::hilbert::CROSS_CHECK_TAIL_TOLERANCE;
    let a = crate::hilbert::coherent_state_within(C64::new(alpha, 0.0), n_ab, tol)?;
    let b = crate::hilbert::coherent_state_within(C64::new(beta, 0.0), n_ab, tol)?;
    let ab = a.kron(&b);
    let full_psi = ab.kron(&crate::hilbert::fock_state(0, n_c));
    let times: Vec<f64> = (1..=samples).map(|k| t_end * k as f64 / samples as f64).collect();
    let dt = params.dt_for(Model::ThreeMode);
    let na = crate::hilbert::number_op(n_ab);
    let full = occupation_trace(&full_layout, three_mode_lindbladian(&full_layout, params)?, dt, &full_psi, &na, t_end, &times)?;
    let effective = occupation_trace(&eff_layout, effective_lindbladian(&eff_layout, params)?, dt, &ab, &na, t_end, &times)?;
    Ok(EliminationComparison { times, full, effective })
}

/// Basis indices grouped by `n_a − n_b` when the Hamiltonian and every jump
/// operator of `l` are block-diagonal in that label; `None` otherwise.
fn difference_blocks(layout: &SpaceLayout, l: &Lindbladian) -> Result<Option<Vec<Vec<usize>>>> {
    let d = layout.dim();
    let diag = |f: Factor| -> Result<Vec<f64>> {
        let n = layout.factor_dim(f).ok_or_else(|| Error::DimensionMismatch(format!("layout has no {f:?} factor")))?;
        let op = layout.embed(&crate::hilbert::number_op(n), f)?;
        Ok((0..d).map(|i| op[(i, i)].re).collect())
    };
    let (na, nb) = (diag(Factor::ModeA)?, diag(Factor::ModeB)?);
    let label: Vec<i64> = (0..d).map(|i| (na[i] - nb[i]).round() as i64).collect();
    let closed = |m: &CMatrix| (0..d).all(|i| (0..d).all(|j| label[i] == label[j] || m[(i, j)] == C64::new(0.0, 0.0)));
    if !l.hamiltonian().map_or(true, closed) || !l.jumps().iter().all(|j| closed(&j.op)) {
        return Ok(None);
    }
    let mut blocks: std::collections::BTreeMap<i64, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, k) in label.into_iter().enumerate() {
        blocks.entry(k).or_default().push(i);
    }
    Ok(Some(blocks.into_values().collect()))
}

fn restrict(m: &CMatrix, idx: &[usize]) -> CMatrix {
    let mut out = CMatrix::zeros(idx.len(), idx.len());
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            out[(r, c)] = m[(i, j)];
        }
    }
    out
}

/// Weight below which an `n_a − n_b` block of the initial state is skipped.
const BLOCK_WEIGHT_FLOOR: f64 = 1e-14;

/// `⟨n_a⟩(t)` at `times` for the pure initial state `psi` (with `n_a`
/// given on mode a alone). When the generator conserves `n_a − n_b`, the
/// diagonal blocks of `ρ` in that label evolve independently of each other
/// and of the off-diagonal blocks, and `n_a` is diagonal in it, so each
/// block is evolved on its own: exact, and far cheaper than the full state.
#[allow(clippy::too_many_arguments)]
fn occupation_trace(
    layout: &SpaceLayout,
    l: Lindbladian,
    dt: f64,
    psi: &crate::hilbert::StateVector,
    n_a: &CMatrix,
    t_end: f64,
    times: &[f64],
) -> Result<Vec<f64>> {
    let na = layout.embed(n_a, Factor::ModeA)?;
    let Some(blocks) = difference_blocks(layout, &l)? else {
        let rk = Rk4::stable(l, dt)?;
        let rho = DensityMatrix::from_pure(psi, layout.clone())?;
        let (_, states) = lindblad::evolve_lindblad_sampled(&rho, &rk, t_end, times)?;
        return Ok(lindblad::expectations(&states, &na));
    };
    let mut out = vec![0.0; times.len()];
    for idx in blocks {
        let weight: f64 = idx.iter().map(|&i| psi.0[i].norm_sqr()).sum();
        if weight < BLOCK_WEIGHT_FLOOR {
            continue;
        }
        let h = l.hamiltonian().map(|h| restrict(h, &idx));
        let jumps = l.jumps().iter().map(|j| Jump::new(j.rate, restrict(&j.op, &idx))).collect();
        let rk = Rk4::stable(Lindbladian::new(idx.len(), h, jumps)?, dt)?;
        let rho0 = CMatrix::from_fn(idx.len(), idx.len(), |r, c| psi.0[idx[r]] * psi.0[idx[c]].conj());
        let (_, states) = lindblad::evolve_matrix_sampled(&rho0, &rk, t_end, times)?;
        let na_k = restrict(&na, &idx);
        for (acc, rho) in out.iter_mut().zip(&states) {
            *acc += na_k.matmul(rho).trace().re;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn product(layout: &SpaceLayout, alpha: f64, c_level: usize) -> DensityMatrix {
        let n = layout.factor_dim(Factor::ModeA).unwrap();
        let nc = layout.factor_dim(Factor::ModeC).unwrap();
        let a = hilbert::coherent_state_within(C64::new(alpha, 0.0), n, 1e-2).unwrap();
        let psi = a.kron(&a).kron(&hilbert::fock_state(c_level, nc));
        DensityMatrix::from_pure(&psi, layout.clone()).unwrap()
    }

    #[test]
    fn block_evolution_matches_full_state() {
        let params = ProtocolParams { alpha: 0.6, beta: 0.5, g: 1.0, kappa_c: 20.0, ..ProtocolParams::default() };
        let layout = SpaceLayout::three_modes(4, 4, 3).unwrap();
        let l = three_mode_lindbladian(&layout, &params).unwrap();
        assert_eq!(difference_blocks(&layout, &l).unwrap().map(|b| b.len()), Some(7));
        let a = hilbert::coherent_state_within(C64::new(0.6, 0.0), 4, 1e-1).unwrap();
        let b = hilbert::coherent_state_within(C64::new(0.5, 0.0), 4, 1e-1).unwrap();
        let psi = a.kron(&b).kron(&hilbert::fock_state(0, 3));
        let times = [0.1, 0.4];
        let dt = params.dt_for(Model::ThreeMode);
        let blocks = occupation_trace(&layout, l.clone(), dt, &psi, &hilbert::number_op(4), 0.4, &times).unwrap();
        let rk = Rk4::stable(l, dt).unwrap();
        let rho = DensityMatrix::from_pure(&psi, layout.clone()).unwrap();
        let (_, states) = lindblad::evolve_lindblad_sampled(&rho, &rk, 0.4, &times).unwrap();
        let na = layout.embed(&hilbert::number_op(4), Factor::ModeA).unwrap();
        for (x, y) in blocks.iter().zip(lindblad::expectations(&states, &na)) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn single_photon_loss_breaks_the_block_structure() {
        let params = ProtocolParams { g: 1.0, kappa_c: 20.0, kappa_a: 0.01, ..ProtocolParams::default() };
        let layout = SpaceLayout::three_modes(3, 3, 2).unwrap();
        let l = three_mode_lindbladian(&layout, &params).unwrap();
        assert!(difference_blocks(&layout, &l).unwrap().is_none());
    }

    #[test]
    fn hamiltonian_is_hermitian_and_conserves_difference() {
        let layout = SpaceLayout::three_modes(4, 4, 3).unwrap();
        let h = three_wave_hamiltonian(&layout, 0.7).unwrap();
        assert!(h.hermiticity_error() < 1e-15);
        let na = layout.embed(&hilbert::number_op(4), Factor::ModeA).unwrap();
        let nb = layout.embed(&hilbert::number_op(4), Factor::ModeB).unwrap();
        assert!(h.commutator(&(&na - &nb)).max_abs() < 1e-13);
    }

    #[test]
    fn zero_coupling_freezes_a_b_and_empties_c() {
        let layout = SpaceLayout::three_modes(4, 4, 3).unwrap();
        let rho = product(&layout, 0.5, 1);
        let params = ProtocolParams { g: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ThreeModeOutcome::Deterministic(out) = evolve_full_three_mode(&rho, &params, 0.2, ThreeModeRun::Deterministic, &mut rng).unwrap() else {
            panic!("deterministic run")
        };
        let ab_before = rho.partial_trace(&[Factor::ModeA, Factor::ModeB]).unwrap();
        let ab_after = out.partial_trace(&[Factor::ModeA, Factor::ModeB]).unwrap();
        assert!((ab_before.matrix() - ab_after.matrix()).max_abs() < 1e-12);
        let nc = out.expectation(&layout.embed(&hilbert::number_op(3), Factor::ModeC).unwrap()).re;
        assert!((nc - (-100.0f64 * 0.2).exp()).abs() < 1e-9, "{nc}");
    }

    #[test]
    fn regime_is_enforced() {
        let layout = SpaceLayout::three_modes(3, 3, 2).unwrap();
        let rho = product(&layout, 0.3, 0);
        let params = ProtocolParams { g: 20.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(evolve_full_three_mode(&rho, &params, 0.1, ThreeModeRun::Deterministic, &mut rng).is_err());
    }

    #[test]
    fn difference_of_occupations_is_conserved() {
        let layout = SpaceLayout::three_modes(4, 4, 3).unwrap();
        let n = 4;
        let a = hilbert::coherent_state_within(C64::new(0.6, 0.0), n, 1e-2).unwrap();
        let b = hilbert::coherent_state_within(C64::new(0.3, 0.0), n, 1e-2).unwrap();
        let rho = DensityMatrix::from_pure(&a.kron(&b).kron(&hilbert::fock_state(0, 3)), layout.clone()).unwrap();
        let params = ProtocolParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ThreeModeOutcome::Deterministic(out) = evolve_full_three_mode(&rho, &params, 1.0, ThreeModeRun::Deterministic, &mut rng).unwrap() else {
            panic!()
        };
        let d = &layout.embed(&hilbert::number_op(n), Factor::ModeA).unwrap() - &layout.embed(&hilbert::number_op(n), Factor::ModeB).unwrap();
        assert!((out.expectation(&d).re - rho.expectation(&d).re).abs() < 1e-8);
    }

    #[test]
    fn monitored_run_reports_a_current() {
        let layout = SpaceLayout::three_modes(3, 3, 2).unwrap();
        let rho = product(&layout, 0.5, 0);
        let params = ProtocolParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ThreeModeOutcome::Monitored(out) = evolve_full_three_mode(&rho, &params, 0.05, ThreeModeRun::Monitored, &mut rng).unwrap() else {
            panic!()
        };
        assert_eq!(out.currents.len(), 1);
        out.state.check(true).unwrap();
    }
}
