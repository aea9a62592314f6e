//! Homodyne-monitored trajectories.
//!
//! Every channel `c` is a decay `r_c D(L_c)` whose output is detected with
//! efficiency `η_c` at homodyne phase `θ_c`. With `L'_c = √(η_c r_c) L_c e^{−iθ_c}`
//! and `ℓ_c = L'_c + L'_c†`, one step of length `dt` is
//!
//! `dy_c = ⟨ℓ_c⟩ dt + dW_c` (the recorded increment `dJ_c`),
//! `M = I + Σ_c [L'_c dy_c − ½ L'_c†L'_c dt + ½ L'_c² (dy_c² − dt)]`,
//! `ρ ← R(M ρ M†) / Tr[·]`,
//!
//! where `R` propagates everything the measurement operator does not carry:
//! the Hamiltonian, unmonitored channels and the undetected share
//! `(1 − η_c) r_c D(L_c)` of each monitored channel. Expanding `MρM†` to
//! first order reproduces the Euler–Maruyama increment
//! `Σ_c (L'_c ρ + ρ L'_c† − ⟨ℓ_c⟩ρ) dW_c` plus `η_c r_c D(L_c) ρ dt`, so the
//! scheme is the standard homodyne stochastic master equation; writing it
//! in measurement-operator form keeps every conditional state positive.
//! With all `η_c = 0` the step is exactly `R`. For a pure state and unit
//! efficiency the same `M` acts on the state vector.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, StateVector};
use crate::qlinalg::{CMatrix, SparseRows, C64, ZERO};

use super::lindblad::{Drift, POSITIVITY_CHECK_MAX_DIM, POSITIVITY_FAILURE};

/// A homodyne-monitored decay channel `(rate, L, θ, η)`.
#[derive(Clone, Debug)]
pub struct MonitoredChannel {
    pub rate: f64,
    pub op: CMatrix,
    pub phase: f64,
    pub eta: f64,
}

impl MonitoredChannel {
    pub fn new(rate: f64, op: CMatrix, phase: f64, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("channel efficiency {eta} outside [0, 1]")));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::InvalidParameter(format!("channel rate {rate}")));
        }
        Ok(Self { rate, op, phase, eta })
    }

    /// The undetected share `((1 − η) r, L)` of the channel.
    pub fn undetected_jump(&self) -> super::lindblad::Jump {
        super::lindblad::Jump::new((1.0 - self.eta) * self.rate, self.op.clone())
    }
}

/// Per-step measurement operator builder for a fixed channel set.
#[derive(Clone, Debug)]
pub(crate) struct MeasurementOps {
    dim: usize,
    /// `L'_c`
    pub(crate) ops: Vec<SparseRows>,
    /// `L'_c` dense, `−½ L'_c†L'_c`, `½ L'_c²`
    l: Vec<CMatrix>,
    half_ldl: Vec<CMatrix>,
    half_l2: Vec<CMatrix>,
}

impl MeasurementOps {
    pub(crate) fn new(dim: usize, channels: &[MonitoredChannel]) -> Result<Self> {
        let mut out = Self { dim, ops: vec![], l: vec![], half_ldl: vec![], half_l2: vec![] };
        for c in channels {
            if !c.op.is_square() || c.op.rows() != dim {
                return Err(Error::DimensionMismatch("monitored operator shape".into()));
            }
            let l = c.op.scale(C64::from_polar((c.eta * c.rate).sqrt(), -c.phase));
            out.ops.push(SparseRows::from_dense(&l));
            out.half_ldl.push(l.dagger().matmul(&l).scale_real(-0.5));
            out.half_l2.push(l.matmul(&l).scale_real(0.5));
            out.l.push(l);
        }
        Ok(out)
    }

    /// `M(dy)` for the recorded increments of one step.
    pub(crate) fn kraus(&self, dys: &[f64], dt: f64) -> SparseRows {
        let mut m = CMatrix::identity(self.dim);
        for (c, &dy) in dys.iter().enumerate() {
            m.axpy(C64::new(dy, 0.0), &self.l[c]);
            m.axpy(C64::new(dt, 0.0), &self.half_ldl[c]);
            m.axpy(C64::new(dy * dy - dt, 0.0), &self.half_l2[c]);
        }
        SparseRows::from_dense(&m)
    }

    /// Recorded increments `⟨ℓ_c⟩ dt + dW_c` given the `⟨ℓ_c⟩`.
    pub(crate) fn record(means: &[f64], dws: &[f64], dt: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend(means.iter().zip(dws).map(|(m, w)| m * dt + w));
    }
}

/// Time grid of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// `steps = ⌈t_end / dt⌉` with the step shortened to land on `t_end`.
    pub fn covering(t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !(t_end >= 0.0) {
            return Err(Error::InvalidParameter(format!("t_end = {t_end}, dt = {dt}")));
        }
        let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
        Ok(Self { dt: if steps == 0 { dt } else { t_end / steps as f64 }, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.dt * self.steps as f64
    }
}

/// Outcome of one monitored evolution.
#[derive(Clone, Debug)]
pub struct SmeOutput<S> {
    pub state: S,
    /// Homodyne increments `dJ` per channel per step.
    pub currents: Vec<Vec<f64>>,
    pub grid: TimeGrid,
}

/// Draw the Wiener increments of one step (one standard normal per channel,
/// in channel order — every engine consumes randomness identically).
pub(crate) fn wiener_increments<R: Rng + ?Sized>(rng: &mut R, channels: usize, dt: f64, out: &mut Vec<f64>) {
    out.clear();
    let s = dt.sqrt();
    for _ in 0..channels {
        let z: f64 = rng.sample(StandardNormal);
        out.push(z * s);
    }
}

/// `Tr[(L + L†) ρ] = 2 Re Tr[L ρ]` for a sparse `L`.
pub(crate) fn expect_quadrature(l: &SparseRows, rho: &CMatrix) -> f64 {
    let mut acc = ZERO;
    for i in 0..l.rows() {
        for &(k, z) in l.row(i) {
            acc += z * rho[(k, i)];
        }
    }
    2.0 * acc.re
}

fn check_dims(drift: &dyn Drift, dim: usize, channels: &[MonitoredChannel]) -> Result<()> {
    if drift.dim() != dim {
        return Err(Error::DimensionMismatch(format!("drift dim {} vs state dim {dim}", drift.dim())));
    }
    for c in channels {
        if !c.op.is_square() || c.op.rows() != dim {
            return Err(Error::DimensionMismatch("monitored operator shape".into()));
        }
    }
    Ok(())
}

/// `M ρ M†` for a sparse `M`.
pub(crate) fn sandwich(m: &SparseRows, rho: &CMatrix, scratch: &mut CMatrix, out: &mut CMatrix) {
    m.mul_dense_into(rho, scratch);
    m.dense_mul_adjoint_into(scratch, out);
}

/// Density-matrix homodyne trajectory. `residual` propagates the part of
/// the generator not carried by the measurement operators (see the module
/// documentation); [`residual_lindbladian`] builds it from a full channel
/// list.
pub fn evolve_sme_homodyne<R: Rng + ?Sized>(
    rho0: &DensityMatrix,
    residual: &dyn Drift,
    channels: &[MonitoredChannel],
    t_end: f64,
    rng: &mut R,
) -> Result<SmeOutput<DensityMatrix>> {
    let n = rho0.dim();
    check_dims(residual, n, channels)?;
    let grid = TimeGrid::covering(t_end, residual.dt())?;
    if (grid.dt - residual.dt()).abs() > 1e-12 * residual.dt() {
        return Err(Error::InvalidParameter(format!(
            "t_end = {t_end} is not a multiple of the drift step {}",
            residual.dt()
        )));
    }
    let meas = MeasurementOps::new(n, channels)?;
    let mut currents = vec![Vec::with_capacity(grid.steps); channels.len()];
    let mut rho = rho0.matrix().clone();
    let mut scratch = CMatrix::zeros(n, n);
    let mut kept = CMatrix::zeros(n, n);
    let (mut dws, mut means, mut dys) = (Vec::new(), Vec::new(), Vec::new());
    for step in 0..grid.steps {
        wiener_increments(rng, channels.len(), grid.dt, &mut dws);
        means.clear();
        means.extend(meas.ops.iter().map(|l| expect_quadrature(l, &rho)));
        MeasurementOps::record(&means, &dws, grid.dt, &mut dys);
        for (c, dy) in dys.iter().enumerate() {
            currents[c].push(*dy);
        }
        let m = meas.kraus(&dys, grid.dt);
        sandwich(&m, &rho, &mut scratch, &mut kept);
        let mut next = residual.advance(&kept)?;
        next.hermitize();
        let tr = next.trace().re;
        if !(tr > 0.0) || !next.is_finite() {
            return Err(Error::IntegratorFailure { time: (step + 1) as f64 * grid.dt, reason: format!("trace {tr}") });
        }
        next.scale_mut(1.0 / tr);
        rho = next;
    }
    let state = DensityMatrix::new(rho, rho0.layout().clone())?;
    if n <= POSITIVITY_CHECK_MAX_DIM && grid.steps > 0 {
        let min = state.min_eigenvalue()?;
        if min < POSITIVITY_FAILURE {
            return Err(Error::IntegratorFailure { time: grid.t_end(), reason: format!("eigenvalue {min:.3e}; reduce dt") });
        }
    }
    Ok(SmeOutput { state, currents, grid })
}

/// Generator of everything the measurement operators do not carry:
/// `H`, the unmonitored `jumps` and each channel's undetected share.
pub fn residual_lindbladian(
    dim: usize,
    hamiltonian: Option<CMatrix>,
    jumps: Vec<super::lindblad::Jump>,
    channels: &[MonitoredChannel],
) -> Result<super::lindblad::Lindbladian> {
    let mut all = jumps;
    all.extend(channels.iter().filter(|c| c.eta < 1.0).map(|c| c.undetected_jump()));
    super::lindblad::Lindbladian::new(dim, hamiltonian, all)
}

/// Pure-state homodyne trajectory: every channel must have unit
/// efficiency and there may be no other dissipation.
pub fn evolve_sse_homodyne<R: Rng + ?Sized>(
    psi0: &StateVector,
    hamiltonian: Option<&CMatrix>,
    channels: &[MonitoredChannel],
    dt: f64,
    t_end: f64,
    rng: &mut R,
) -> Result<SmeOutput<StateVector>> {
    let n = psi0.len();
    if channels.iter().any(|c| c.eta != 1.0) {
        return Err(Error::InvalidParameter("pure-state trajectories need unit efficiency on every channel".into()));
    }
    let grid = TimeGrid::covering(t_end, dt)?;
    let meas = MeasurementOps::new(n, channels)?;
    let h = match hamiltonian {
        Some(h) if h.rows() != n || !h.is_square() => return Err(Error::DimensionMismatch("Hamiltonian shape".into())),
        Some(h) => Some(h.scale(C64::new(0.0, -grid.dt))),
        None => None,
    };
    let mut psi = psi0.clone().normalized()?.0;
    let mut currents = vec![Vec::with_capacity(grid.steps); channels.len()];
    let (mut dws, mut means, mut dys) = (Vec::new(), Vec::new(), Vec::new());
    let mut lpsi = vec![ZERO; n];
    for step in 0..grid.steps {
        wiener_increments(rng, channels.len(), grid.dt, &mut dws);
        means.clear();
        for l in &meas.ops {
            l.apply_into(&psi, &mut lpsi);
            means.push(2.0 * psi.iter().zip(&lpsi).map(|(p, lp)| p.conj() * lp).sum::<C64>().re);
        }
        MeasurementOps::record(&means, &dws, grid.dt, &mut dys);
        for (c, dy) in dys.iter().enumerate() {
            currents[c].push(*dy);
        }
        let mut m = meas.kraus(&dys, grid.dt);
        if let Some(h) = &h {
            let mut dense = m.to_dense();
            dense += h;
            m = SparseRows::from_dense(&dense);
        }
        let mut next = m.apply(&psi);
        let norm = next.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::IntegratorFailure { time: (step + 1) as f64 * grid.dt, reason: format!("norm {norm}") });
        }
        for z in &mut next {
            *z /= norm;
        }
        psi = next;
    }
    Ok(SmeOutput { state: StateVector(psi), currents, grid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lindblad::{self, Jump, Lindbladian, Rk4};
    use crate::dynamics::two_photon::TwoPhotonPropagator;
    use crate::hilbert::{self, Factor, SpaceLayout};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ab(layout: &SpaceLayout) -> CMatrix {
        layout.lowering(Factor::ModeA).unwrap().matmul(&layout.lowering(Factor::ModeB).unwrap())
    }

    fn coherent_pair(alpha: f64, n: usize) -> (SpaceLayout, StateVector) {
        let layout = SpaceLayout::modes(n, n).unwrap();
        let a = hilbert::coherent_state_within(C64::new(alpha, 0.0), n, 1e-6).unwrap();
        (layout, a.kron(&a))
    }

    #[test]
    fn unmonitored_limit_equals_deterministic_evolution() {
        let (layout, psi) = coherent_pair(0.5, 6);
        let rho = DensityMatrix::from_pure(&psi, layout.clone()).unwrap();
        let lind = Lindbladian::new(36, None, vec![Jump::new(1.0, ab(&layout))]).unwrap();
        let rk4 = Rk4::new(lind, 0.01).unwrap();
        let channel = MonitoredChannel::new(1.0, ab(&layout), 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = evolve_sme_homodyne(&rho, &rk4, &[channel], 2.0, &mut rng).unwrap();
        let reference = lindblad::evolve_lindblad(&rho, &rk4, 2.0).unwrap();
        assert!((out.state.matrix() - reference.matrix()).max_abs() < 1e-14);
        // with η = 0 the record is pure noise
        assert_eq!(out.currents[0].len(), 200);
    }

    #[test]
    fn pure_and_density_schemes_agree_pathwise_at_unit_efficiency() {
        let (layout, psi) = coherent_pair(0.75, 8);
        let rho = DensityMatrix::from_pure(&psi, layout.clone()).unwrap();
        let channel = MonitoredChannel::new(1.0, ab(&layout), 0.0, 1.0).unwrap();
        let dt = 5e-4;
        // at η = 1 nothing is left for the residual propagator
        let prop = TwoPhotonPropagator::new(&layout, 0.0, dt).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        let dm = evolve_sme_homodyne(&rho, &prop, &[channel.clone()], 2.0, &mut r1).unwrap();
        let pure = evolve_sse_homodyne(&psi, None, &[channel], dt, 2.0, &mut r2).unwrap();
        let pure_rho = pure.state.projector();
        assert!((dm.state.matrix() - &pure_rho).frobenius_norm() < 1e-10);
        for (a, b) in dm.currents[0].iter().zip(&pure.currents[0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((dm.state.purity() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn conditional_states_stay_positive() {
        let (layout, psi) = coherent_pair(0.75, 9);
        let rho = DensityMatrix::from_pure(&psi, layout.clone()).unwrap();
        let channel = MonitoredChannel::new(1.0, ab(&layout), 0.0, 0.7).unwrap();
        let prop = TwoPhotonPropagator::new(&layout, 0.3, 0.0025).unwrap();
        for seed in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = evolve_sme_homodyne(&rho, &prop, &[channel.clone()], 2.0, &mut rng).unwrap();
            assert!(out.state.min_eigenvalue().unwrap() > -1e-12);
            out.state.check(false).unwrap();
        }
    }

    #[test]
    fn residual_generator_keeps_undetected_share() {
        let layout = SpaceLayout::modes(4, 4).unwrap();
        let ch = MonitoredChannel::new(2.0, ab(&layout), 0.0, 0.25).unwrap();
        let res = residual_lindbladian(16, None, vec![], &[ch]).unwrap();
        assert_eq!(res.jumps().len(), 1);
        assert!((res.jumps()[0].rate - 1.5).abs() < 1e-15);
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let (layout, psi) = coherent_pair(0.5, 6);
        let channel = MonitoredChannel::new(1.0, ab(&layout), 0.0, 1.0).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            evolve_sse_homodyne(&psi, None, &[channel.clone()], 0.005, 1.0, &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.state, b.state);
        assert_eq!(a.currents, b.currents);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (layout, psi) = coherent_pair(0.5, 6);
        assert!(MonitoredChannel::new(1.0, ab(&layout), 0.0, 1.5).is_err());
        let half = MonitoredChannel::new(1.0, ab(&layout), 0.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(evolve_sse_homodyne(&psi, None, &[half], 0.01, 1.0, &mut rng).is_err());
    }

    #[test]
    fn time_grid_lands_on_t_end() {
        let g = TimeGrid::covering(10.0, 0.003).unwrap();
        assert!((g.t_end() - 10.0).abs() < 1e-12 && g.dt <= 0.003);
        assert_eq!(TimeGrid::covering(1.0, 0.01).unwrap().steps, 100);
    }
}
