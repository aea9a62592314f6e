//! Trajectories of the four-branch protocol state without building the
//! full qubit ⊗ mode density matrix.
//!
//! After the conditional displacements the joint state is
//! `Σ_q c_q |q⟩ ⊗ |φ_q⟩` with `|φ_ee⟩ = |α,β⟩ = |φ⟩`, `|φ_eg⟩ = P_b|φ⟩`,
//! `|φ_ge⟩ = P P_b|φ⟩`, `|φ_gg⟩ = P|φ⟩`, where `P_b = (−1)^{n_b}` and
//! `P = (−1)^{n_a+n_b}`. Given the measurement record every step of the
//! monitored evolution is a linear map `𝒦` on mode-space operators followed
//! by a common scalar normalization, and `𝒦` commutes with left and right
//! multiplication by `P` (the pair operator `ab`, the three-wave Hamiltonian
//! and the `c` loss all preserve the total parity of modes a and b). Hence
//! every block of the joint state is `P^s 𝒦(|u⟩⟨u'|) P^{s'}` with
//! `u, u' ∈ {φ, P_bφ}`: three mode-space blocks (two vectors for pure
//! states) carry the whole conditional state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, Factor, SpaceLayout, StateVector};
use crate::qlinalg::{CMatrix, C64, ZERO};

use super::lindblad::Drift;
use super::sme::{expect_quadrature, sandwich, wiener_increments, MeasurementOps, MonitoredChannel, SmeOutput, TimeGrid};

/// `(s_q, t_q)` for the two-qubit index `q = 2 q_A + q_B`
/// (`gg`, `ge`, `eg`, `ee`): the branch vector is `P^{s_q} u_{t_q}`.
const BRANCH: [(bool, usize); 4] = [(true, 0), (true, 1), (false, 1), (false, 0)];

/// Initial four-branch state.
#[derive(Clone, Debug)]
pub struct BranchState {
    mode_layout: SpaceLayout,
    coefficients: [C64; 4],
    phi: StateVector,
    parity: Vec<f64>,
    parity_b: Vec<f64>,
}

impl BranchState {
    /// `Σ_q c_q |q⟩ ⊗ |φ_q⟩` for a mode-space `φ` (qubit amplitudes need not
    /// be normalized; the joint state is normalized on construction).
    pub fn new(mode_layout: SpaceLayout, phi: StateVector, coefficients: [C64; 4]) -> Result<Self> {
        if mode_layout.has_qubits() {
            return Err(Error::InvalidParameter("branch mode layout must not contain qubits".into()));
        }
        if phi.len() != mode_layout.dim() {
            return Err(Error::DimensionMismatch(format!("φ of len {} for mode dim {}", phi.len(), mode_layout.dim())));
        }
        let parity = mode_layout.parity_signs(&[Factor::ModeA, Factor::ModeB])?;
        let parity_b = mode_layout.parity_signs(&[Factor::ModeB])?;
        let phi = phi.normalized()?;
        let mut state = Self { mode_layout, coefficients, phi, parity, parity_b };
        let norm = state.joint_norm_sqr(&[state.phi.0.clone(), state.u1()]).sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidState("zero four-branch state".into()));
        }
        for c in &mut state.coefficients {
            *c /= norm;
        }
        Ok(state)
    }

    /// The step-I protocol state: all four branches with amplitude ½.
    pub fn protocol(mode_layout: SpaceLayout, phi: StateVector) -> Result<Self> {
        Self::new(mode_layout, phi, [C64::new(0.5, 0.0); 4])
    }

    fn u1(&self) -> Vec<C64> {
        self.phi.0.iter().zip(&self.parity_b).map(|(z, s)| z * *s).collect()
    }

    fn joint_norm_sqr(&self, v: &[Vec<C64>; 2]) -> f64 {
        let n: [f64; 2] = [0, 1].map(|t| v[t].iter().map(|z| z.norm_sqr()).sum());
        (0..4).map(|q| self.coefficients[q].norm_sqr() * n[BRANCH[q].1]).sum()
    }

    pub fn mode_layout(&self) -> &SpaceLayout {
        &self.mode_layout
    }

    pub fn coefficients(&self) -> &[C64; 4] {
        &self.coefficients
    }

    /// The joint state vector over qubits ⊗ modes.
    pub fn joint_state(&self) -> Result<StateVector> {
        BranchPure { base: self.clone(), vectors: [self.phi.0.clone(), self.u1()] }.to_state_vector()
    }
}

/// Conditional pure state: `Σ_q c_q |q⟩ ⊗ P^{s_q} v_{t_q}`.
#[derive(Clone, Debug)]
pub struct BranchPure {
    base: BranchState,
    vectors: [Vec<C64>; 2],
}

impl BranchPure {
    pub fn to_state_vector(&self) -> Result<StateVector> {
        let d = self.base.mode_layout.dim();
        let mut out = vec![ZERO; 4 * d];
        for q in 0..4 {
            let (s, t) = BRANCH[q];
            let c = self.base.coefficients[q];
            for k in 0..d {
                let p = if s { self.base.parity[k] } else { 1.0 };
                out[q * d + k] = c * self.vectors[t][k] * p;
            }
        }
        Ok(StateVector(out))
    }

    pub fn to_density_matrix(&self) -> Result<DensityMatrix> {
        DensityMatrix::from_pure(&self.to_state_vector()?, self.base.mode_layout.with_qubits()?)
    }
}

/// Conditional mixed state: blocks `B_00 = 𝒦(φφ†)`, `B_01 = 𝒦(φ(P_bφ)†)`,
/// `B_11 = 𝒦(P_bφ(P_bφ)†)`.
#[derive(Clone, Debug)]
pub struct BranchDensity {
    base: BranchState,
    blocks: [CMatrix; 3],
}

impl BranchDensity {
    fn block(&self, t: usize, tp: usize) -> std::borrow::Cow<'_, CMatrix> {
        match (t, tp) {
            (0, 0) => std::borrow::Cow::Borrowed(&self.blocks[0]),
            (0, 1) => std::borrow::Cow::Borrowed(&self.blocks[1]),
            (1, 0) => std::borrow::Cow::Owned(self.blocks[1].dagger()),
            _ => std::borrow::Cow::Borrowed(&self.blocks[2]),
        }
    }

    pub fn to_density_matrix(&self) -> Result<DensityMatrix> {
        let d = self.base.mode_layout.dim();
        let mut out = CMatrix::try_zeros(4 * d, 4 * d)?;
        for q in 0..4 {
            for qp in 0..4 {
                let (s, t) = BRANCH[q];
                let (sp, tp) = BRANCH[qp];
                let c = self.base.coefficients[q] * self.base.coefficients[qp].conj();
                let b = self.block(t, tp);
                for k in 0..d {
                    let pk = if s { self.base.parity[k] } else { 1.0 };
                    for kp in 0..d {
                        let pkp = if sp { self.base.parity[kp] } else { 1.0 };
                        out[(q * d + k, qp * d + kp)] = c * b[(k, kp)] * (pk * pkp);
                    }
                }
            }
        }
        DensityMatrix::new(out, self.base.mode_layout.with_qubits()?)
    }
}

fn weights(base: &BranchState) -> [f64; 2] {
    let mut w = [0.0; 2];
    for q in 0..4 {
        w[BRANCH[q].1] += base.coefficients[q].norm_sqr();
    }
    w
}

/// Mixed-state monitored evolution of the four-branch state. `residual`
/// and `channels` act on the mode space (see [`super::sme`]).
pub fn evolve_branches_density<R: Rng + ?Sized>(
    init: &BranchState,
    residual: &dyn Drift,
    channels: &[MonitoredChannel],
    t_end: f64,
    rng: &mut R,
) -> Result<SmeOutput<BranchDensity>> {
    let d = init.mode_layout.dim();
    if residual.dim() != d {
        return Err(Error::DimensionMismatch(format!("residual dim {} vs mode dim {d}", residual.dim())));
    }
    let grid = TimeGrid::covering(t_end, residual.dt())?;
    if (grid.dt - residual.dt()).abs() > 1e-12 * residual.dt() {
        return Err(Error::InvalidParameter(format!("t_end = {t_end} is not a multiple of dt = {}", residual.dt())));
    }
    let meas = MeasurementOps::new(d, channels)?;
    let w = weights(init);
    let u0 = init.phi.0.clone();
    let u1 = init.u1();
    let mut blocks = [CMatrix::outer(&u0, &u0), CMatrix::outer(&u0, &u1), CMatrix::outer(&u1, &u1)];
    let mut currents = vec![Vec::with_capacity(grid.steps); channels.len()];
    let mut scratch = CMatrix::zeros(d, d);
    let mut kept = CMatrix::zeros(d, d);
    let (mut dws, mut means, mut dys) = (Vec::new(), Vec::new(), Vec::new());
    for step in 0..grid.steps {
        wiener_increments(rng, channels.len(), grid.dt, &mut dws);
        means.clear();
        for l in &meas.ops {
            means.push(w[0] * expect_quadrature(l, &blocks[0]) + w[1] * expect_quadrature(l, &blocks[2]));
        }
        MeasurementOps::record(&means, &dws, grid.dt, &mut dys);
        for (c, dy) in dys.iter().enumerate() {
            currents[c].push(*dy);
        }
        let m = meas.kraus(&dys, grid.dt);
        for b in blocks.iter_mut() {
            sandwich(&m, b, &mut scratch, &mut kept);
            *b = residual.advance(&kept)?;
        }
        blocks[0].hermitize();
        blocks[2].hermitize();
        let tr = w[0] * blocks[0].trace().re + w[1] * blocks[2].trace().re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::IntegratorFailure { time: (step + 1) as f64 * grid.dt, reason: format!("trace {tr}") });
        }
        for b in blocks.iter_mut() {
            b.scale_mut(1.0 / tr);
        }
    }
    Ok(SmeOutput { state: BranchDensity { base: init.clone(), blocks }, currents, grid })
}

/// Pure-state (unit efficiency) monitored evolution of the four-branch
/// state; `hamiltonian` and `channels` act on the mode space.
pub fn evolve_branches_pure<R: Rng + ?Sized>(
    init: &BranchState,
    hamiltonian: Option<&CMatrix>,
    channels: &[MonitoredChannel],
    dt: f64,
    t_end: f64,
    rng: &mut R,
) -> Result<SmeOutput<BranchPure>> {
    let d = init.mode_layout.dim();
    if channels.iter().any(|c| c.eta != 1.0) {
        return Err(Error::InvalidParameter("pure-state trajectories need unit efficiency on every channel".into()));
    }
    let grid = TimeGrid::covering(t_end, dt)?;
    let meas = MeasurementOps::new(d, channels)?;
    let h = match hamiltonian {
        Some(h) if h.rows() != d || !h.is_square() => return Err(Error::DimensionMismatch("Hamiltonian shape".into())),
        Some(h) => Some(h.scale(C64::new(0.0, -grid.dt))),
        None => None,
    };
    let w = weights(init);
    let mut v = [init.phi.0.clone(), init.u1()];
    let mut currents = vec![Vec::with_capacity(grid.steps); channels.len()];
    let (mut dws, mut means, mut dys) = (Vec::new(), Vec::new(), Vec::new());
    let mut lv = vec![ZERO; d];
    for step in 0..grid.steps {
        wiener_increments(rng, channels.len(), grid.dt, &mut dws);
        means.clear();
        for l in &meas.ops {
            let mut acc = 0.0;
            for t in 0..2 {
                l.apply_into(&v[t], &mut lv);
                acc += w[t] * 2.0 * v[t].iter().zip(&lv).map(|(p, q)| p.conj() * q).sum::<C64>().re;
            }
            means.push(acc);
        }
        MeasurementOps::record(&means, &dws, grid.dt, &mut dys);
        for (c, dy) in dys.iter().enumerate() {
            currents[c].push(*dy);
        }
        let mut m = meas.kraus(&dys, grid.dt);
        if let Some(h) = &h {
            let mut dense = m.to_dense();
            dense += h;
            m = crate::qlinalg::SparseRows::from_dense(&dense);
        }
        for vt in v.iter_mut() {
            *vt = m.apply(vt);
        }
        let norm = (w[0] * v[0].iter().map(|z| z.norm_sqr()).sum::<f64>()
            + w[1] * v[1].iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::IntegratorFailure { time: (step + 1) as f64 * grid.dt, reason: format!("norm {norm}") });
        }
        for vt in v.iter_mut() {
            for z in vt.iter_mut() {
                *z /= norm;
            }
        }
    }
    Ok(SmeOutput { state: BranchPure { base: init.clone(), vectors: v }, currents, grid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::sme::{evolve_sme_homodyne, evolve_sse_homodyne};
    use crate::dynamics::two_photon::TwoPhotonPropagator;
    use crate::hilbert;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ab(layout: &SpaceLayout) -> CMatrix {
        layout.lowering(Factor::ModeA).unwrap().matmul(&layout.lowering(Factor::ModeB).unwrap())
    }

    fn setup(alpha: f64, beta: f64, n: usize) -> (SpaceLayout, SpaceLayout, BranchState) {
        let modes = SpaceLayout::modes(n, n).unwrap();
        let full = modes.with_qubits().unwrap();
        let a = hilbert::coherent_state_within(C64::new(alpha, 0.0), n, 1e-4).unwrap();
        let b = hilbert::coherent_state_within(C64::new(beta, 0.0), n, 1e-4).unwrap();
        let init = BranchState::protocol(modes.clone(), a.kron(&b)).unwrap();
        (modes, full, init)
    }

    #[test]
    fn joint_state_matches_step1_construction() {
        let n = 10;
        let (_, full, init) = setup(0.75, 0.6, n);
        let psi = init.joint_state().unwrap();
        let reference = hilbert::step1_joint_state_within(0.75, 0.6, &full, 1e-4).unwrap();
        for (x, y) in psi.0.iter().zip(&reference.0) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn density_blocks_match_full_state_evolution() {
        let (n, eta, dt) = (6, 0.6, 0.005);
        let (modes, full, init) = setup(0.6, 0.5, n);
        let ch_modes = MonitoredChannel::new(1.0, ab(&modes), 0.0, eta).unwrap();
        let ch_full = MonitoredChannel::new(1.0, ab(&full), 0.0, eta).unwrap();
        let res_modes = TwoPhotonPropagator::new(&modes, 1.0 - eta, dt).unwrap();
        let res_full = TwoPhotonPropagator::new(&full, 1.0 - eta, dt).unwrap();
        let rho0 = DensityMatrix::from_pure(&init.joint_state().unwrap(), full.clone()).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(21);
        let mut r2 = ChaCha8Rng::seed_from_u64(21);
        let fast = evolve_branches_density(&init, &res_modes, &[ch_modes], 1.0, &mut r1).unwrap();
        let slow = evolve_sme_homodyne(&rho0, &res_full, &[ch_full], 1.0, &mut r2).unwrap();
        let err = (fast.state.to_density_matrix().unwrap().matrix() - slow.state.matrix()).max_abs();
        assert!(err < 1e-12, "{err:.3e}");
        for (a, b) in fast.currents[0].iter().zip(&slow.currents[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_branches_match_full_vector_evolution() {
        let (n, dt) = (7, 0.004);
        let (modes, full, init) = setup(0.75, 0.75, n);
        let ch_modes = MonitoredChannel::new(1.0, ab(&modes), 0.0, 1.0).unwrap();
        let ch_full = MonitoredChannel::new(1.0, ab(&full), 0.0, 1.0).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let fast = evolve_branches_pure(&init, None, &[ch_modes.clone()], dt, 2.0, &mut r1).unwrap();
        let slow = evolve_sse_homodyne(&init.joint_state().unwrap(), None, &[ch_full], dt, 2.0, &mut r2).unwrap();
        let fv = fast.state.to_state_vector().unwrap();
        let err = fv.0.iter().zip(&slow.state.0).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err:.3e}");
        // and the mixed-state engine agrees at unit efficiency
        let res = TwoPhotonPropagator::new(&modes, 0.0, dt).unwrap();
        let mut r3 = ChaCha8Rng::seed_from_u64(4);
        let mixed = evolve_branches_density(&init, &res, &[ch_modes], 2.0, &mut r3).unwrap();
        let diff = (mixed.state.to_density_matrix().unwrap().matrix() - &fv.projector()).max_abs();
        assert!(diff < 1e-12, "{diff:.3e}");
    }

    #[test]
    fn density_blocks_match_full_state_with_rk4_residual() {
        // three-wave Hamiltonian plus partially detected c loss
        let (n, nc, eta, dt) = (4, 3, 0.5, 2e-3);
        let modes = SpaceLayout::three_modes(n, n, nc).unwrap();
        let full = modes.with_qubits().unwrap();
        let a = hilbert::coherent_state_within(C64::new(0.4, 0.0), n, 1e-2).unwrap();
        let b = hilbert::coherent_state_within(C64::new(0.3, 0.0), n, 1e-2).unwrap();
        let phi = a.kron(&b).kron(&hilbert::fock_state(0, nc));
        let init = BranchState::protocol(modes.clone(), phi).unwrap();
        let build = |layout: &SpaceLayout| {
            let h = crate::dynamics::three_mode::three_wave_hamiltonian(layout, 5.0).unwrap();
            let ch = MonitoredChannel::new(100.0, layout.lowering(Factor::ModeC).unwrap(), 0.0, eta).unwrap();
            let l = crate::dynamics::sme::residual_lindbladian(layout.dim(), Some(h), vec![], std::slice::from_ref(&ch)).unwrap();
            (ch, crate::dynamics::lindblad::Rk4::new(l, dt).unwrap())
        };
        let (ch_m, res_m) = build(&modes);
        let (ch_f, res_f) = build(&full);
        let rho0 = DensityMatrix::from_pure(&init.joint_state().unwrap(), full.clone()).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(8);
        let mut r2 = ChaCha8Rng::seed_from_u64(8);
        let fast = evolve_branches_density(&init, &res_m, &[ch_m], 0.1, &mut r1).unwrap();
        let slow = evolve_sme_homodyne(&rho0, &res_f, &[ch_f], 0.1, &mut r2).unwrap();
        let fast = fast.state.to_density_matrix().unwrap();
        let err = (fast.matrix() - slow.state.matrix()).max_abs();
        assert!(err < 1e-11, "{err:.3e}");
        assert!(fast.min_eigenvalue().unwrap() > -1e-10);
    }

    #[test]
    fn rejects_qubit_layouts() {
        let full = SpaceLayout::protocol(4, 4).unwrap();
        let phi = StateVector(vec![C64::new(1.0, 0.0); 64]);
        assert!(BranchState::protocol(full, phi).is_err());
    }
}
