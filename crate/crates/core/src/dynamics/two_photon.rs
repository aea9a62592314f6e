//! Exact propagation of pure two-photon loss `κ D(ab)`.
//!
//! In the Fock basis the generator only couples the density-matrix element
//! `ρ[(m,n),(m',n')]` to `ρ[(m+1,n+1),(m'+1,n'+1)]`, so the element space
//! splits into independent "ladders" obtained by shifting all four indices
//! together. On a ladder with bottom `(m,n,m',n')` (one index zero) and
//! rung `j` the equations are upper-bidiagonal,
//!
//! `ẋ_j = −γ_j x_j + f_{j+1} x_{j+1}`,
//! `γ_j = κ/2 [(m+j)(n+j) + (m'+j)(n'+j)]`,
//! `f_j = κ √((m+j)(n+j)(m'+j)(n'+j))`,
//!
//! and are integrated exactly with a small matrix exponential per ladder.
//! All other tensor factors (qubits, mode c) are spectators.

use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, Factor, SpaceLayout};
use crate::qlinalg::{self, CMatrix, C64, ZERO};

use super::lindblad::Drift;

#[derive(Clone, Debug)]
struct Ladder {
    /// Offsets of rung 0 inside the mode-a/mode-b block (row, col).
    row0: usize,
    col0: usize,
    len: usize,
    /// Row-major `len × len` propagator over one step.
    prop: Vec<f64>,
    /// Decay rates and feeds along the ladder.
    gamma: Vec<f64>,
    feed: Vec<f64>,
}

/// Exact fixed-step propagator for `κ D(ab)` on any layout containing
/// modes a and b.
#[derive(Clone, Debug)]
pub struct TwoPhotonPropagator {
    kappa: f64,
    dt: f64,
    dim: usize,
    stride_a: usize,
    stride_b: usize,
    spectators: Vec<usize>,
    ladders: Vec<Ladder>,
}

impl TwoPhotonPropagator {
    pub fn new(layout: &SpaceLayout, kappa: f64, dt: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !(dt >= 0.0) || !kappa.is_finite() || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("kappa = {kappa}, dt = {dt}")));
        }
        let n_a = layout.factor_dim(Factor::ModeA).ok_or_else(|| Error::InvalidParameter("layout lacks mode a".into()))?;
        let n_b = layout.factor_dim(Factor::ModeB).ok_or_else(|| Error::InvalidParameter("layout lacks mode b".into()))?;
        let stride_a = layout.stride(Factor::ModeA)?;
        let stride_b = layout.stride(Factor::ModeB)?;
        let pa = layout.require(Factor::ModeA)?;
        let pb = layout.require(Factor::ModeB)?;
        let spectators: Vec<usize> = (0..layout.dim())
            .filter(|&i| {
                let idx = layout.unflatten(i);
                idx[pa] == 0 && idx[pb] == 0
            })
            .collect();
        let mut ladders = Vec::new();
        for m in 0..n_a {
            for n in 0..n_b {
                for mp in 0..n_a {
                    for np in 0..n_b {
                        if m.min(n).min(mp).min(np) != 0 {
                            continue;
                        }
                        let len = 1 + (n_a - 1 - m.max(mp)).min(n_b - 1 - n.max(np));
                        ladders.push(Self::ladder(kappa, dt, (m, n, mp, np), len, stride_a, stride_b)?);
                    }
                }
            }
        }
        Ok(Self { kappa, dt, dim: layout.dim(), stride_a, stride_b, spectators, ladders })
    }

    fn ladder(
        kappa: f64,
        dt: f64,
        (m, n, mp, np): (usize, usize, usize, usize),
        len: usize,
        stride_a: usize,
        stride_b: usize,
    ) -> Result<Ladder> {
        let gamma: Vec<f64> = (0..len)
            .map(|j| 0.5 * kappa * (((m + j) * (n + j) + (mp + j) * (np + j)) as f64))
            .collect();
        // feed[j] couples rung j to rung j + 1
        let feed: Vec<f64> = (0..len.saturating_sub(1))
            .map(|j| kappa * (((m + j + 1) * (n + j + 1) * (mp + j + 1) * (np + j + 1)) as f64).sqrt())
            .collect();
        let prop = if len == 1 {
            vec![(-gamma[0] * dt).exp()]
        } else {
            let gen = CMatrix::from_fn(len, len, |i, j| {
                if i == j {
                    C64::new(-gamma[i] * dt, 0.0)
                } else if j == i + 1 {
                    C64::new(feed[i] * dt, 0.0)
                } else {
                    ZERO
                }
            });
            qlinalg::expm(&gen)?.as_slice().iter().map(|z| z.re).collect()
        };
        Ok(Ladder { row0: m * stride_a + n * stride_b, col0: mp * stride_a + np * stride_b, len, prop, gamma, feed })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    fn step_of(&self) -> usize {
        self.stride_a + self.stride_b
    }

    /// Apply `f(ladder, values)` to every ladder of every spectator block.
    fn for_each_ladder(&self, rho: &CMatrix, out: &mut CMatrix, f: impl Fn(&Ladder, &[C64], &mut [C64])) {
        let n = self.dim;
        let step = self.step_of();
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for &r in &self.spectators {
            for &c in &self.spectators {
                for l in &self.ladders {
                    x.clear();
                    let (r0, c0) = (r + l.row0, c + l.col0);
                    for j in 0..l.len {
                        x.push(src[(r0 + j * step) * n + c0 + j * step]);
                    }
                    y.clear();
                    y.resize(l.len, ZERO);
                    f(l, &x, &mut y);
                    for (j, v) in y.iter().enumerate() {
                        dst[(r0 + j * step) * n + c0 + j * step] = *v;
                    }
                }
            }
        }
    }

    fn check(&self, rho: &CMatrix) -> Result<()> {
        if !rho.is_square() || rho.rows() != self.dim {
            return Err(Error::DimensionMismatch(format!("{}x{} operator for dim {}", rho.rows(), rho.cols(), self.dim)));
        }
        Ok(())
    }

    /// One exact step of length `dt` applied to an arbitrary operator.
    pub fn propagate(&self, rho: &CMatrix) -> Result<CMatrix> {
        self.check(rho)?;
        let mut out = CMatrix::zeros(self.dim, self.dim);
        self.for_each_ladder(rho, &mut out, |l, x, y| {
            for i in 0..l.len {
                let row = &l.prop[i * l.len..(i + 1) * l.len];
                y[i] = row[i..].iter().zip(&x[i..]).map(|(p, v)| v * *p).sum();
            }
        });
        Ok(out)
    }

    /// Generator action `κ D(ab) ρ`.
    pub fn generator(&self, rho: &CMatrix) -> Result<CMatrix> {
        self.check(rho)?;
        let mut out = CMatrix::zeros(self.dim, self.dim);
        self.for_each_ladder(rho, &mut out, |l, x, y| {
            for i in 0..l.len {
                y[i] = x[i] * -l.gamma[i];
                if i + 1 < l.len {
                    y[i] += x[i + 1] * l.feed[i];
                }
            }
        });
        Ok(out)
    }

    /// Exact `t → ∞` limit: only ladders whose rung 0 is dark on both sides
    /// survive, with `x₀(∞) = Σ_k Π_{j≤k} (f_j/γ_j) x_k(0)`.
    pub fn dark_limit(&self, rho: &CMatrix) -> Result<CMatrix> {
        self.check(rho)?;
        let mut out = CMatrix::zeros(self.dim, self.dim);
        self.for_each_ladder(rho, &mut out, |l, x, y| {
            if l.gamma[0] != 0.0 {
                return;
            }
            let mut weight = 1.0;
            let mut acc = x[0];
            for k in 1..l.len {
                weight *= l.feed[k - 1] / l.gamma[k];
                acc += x[k] * weight;
            }
            y[0] = acc;
        });
        Ok(out)
    }
}

impl Drift for TwoPhotonPropagator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn advance(&self, rho: &CMatrix) -> Result<CMatrix> {
        self.propagate(rho)
    }
}

/// Controls for [`quasi_steady_state`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QssOptions {
    /// Stop when `‖dρ/dt‖_F < tol · κ`.
    pub tol: f64,
    /// Give up after `t_max / κ`.
    pub t_max: f64,
    /// Propagation chunk (in units of `1/κ`) between residual checks.
    pub chunk: f64,
}

impl Default for QssOptions {
    fn default() -> Self {
        Self { tol: 1e-8, t_max: 50.0, chunk: 0.5 }
    }
}

/// Result of [`quasi_steady_state`].
#[derive(Clone, Debug)]
pub struct QuasiSteadyState {
    pub state: DensityMatrix,
    /// Time at which the residual criterion was met.
    pub time: f64,
    pub residual: f64,
}

/// Evolve under `κ D(ab)` alone until `‖dρ/dt‖_F < tol·κ`.
pub fn quasi_steady_state(rho0: &DensityMatrix, kappa: f64, opts: QssOptions) -> Result<QuasiSteadyState> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa = {kappa}")));
    }
    let chunk = opts.chunk / kappa;
    let prop = TwoPhotonPropagator::new(rho0.layout(), kappa, chunk)?;
    let mut rho = rho0.matrix().clone();
    let mut t = 0.0;
    loop {
        let residual = prop.generator(&rho)?.frobenius_norm();
        if residual < opts.tol * kappa {
            let state = DensityMatrix::new(rho, rho0.layout().clone())?;
            return Ok(QuasiSteadyState { state, time: t, residual });
        }
        if t >= opts.t_max / kappa - 1e-12 {
            return Err(Error::NotConverged { t_max: opts.t_max / kappa, residual });
        }
        rho = prop.propagate(&rho)?;
        t += chunk;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lindblad::{self, Jump, Lindbladian, Rk4};
    use crate::hilbert::{self, Sector};
    use proptest::prelude::*;

    fn ab(layout: &SpaceLayout) -> CMatrix {
        layout.lowering(Factor::ModeA).unwrap().matmul(&layout.lowering(Factor::ModeB).unwrap())
    }

    fn even_state(alpha: f64, beta: f64, n: usize, tail: f64) -> DensityMatrix {
        let layout = SpaceLayout::protocol(n, n).unwrap();
        let psi = hilbert::step1_joint_state_within(alpha, beta, &layout, tail).unwrap();
        let (e, _) = hilbert::parity_project(&psi, &layout, Sector::Even).unwrap();
        DensityMatrix::from_pure(&e, layout).unwrap()
    }

    #[test]
    fn generator_matches_dense_lindbladian() {
        let rho = even_state(0.6, 0.5, 7, 1e-5);
        let lind = Lindbladian::new(rho.dim(), None, vec![Jump::new(1.3, ab(rho.layout()))]).unwrap();
        let prop = TwoPhotonPropagator::new(rho.layout(), 1.3, 0.1).unwrap();
        let err = (&prop.generator(rho.matrix()).unwrap() - &lind.rhs(rho.matrix()).unwrap()).max_abs();
        assert!(err < 1e-13, "{err}");
    }

    #[test]
    fn propagator_matches_rk4() {
        let rho = even_state(0.75, 0.75, 8, 1e-6);
        let lind = Lindbladian::new(rho.dim(), None, vec![Jump::new(1.0, ab(rho.layout()))]).unwrap();
        let rk4 = Rk4::new(lind, 0.002).unwrap();
        let t = 2.0;
        let reference = lindblad::evolve_lindblad(&rho, &rk4, t).unwrap();
        let prop = TwoPhotonPropagator::new(rho.layout(), 1.0, 0.25).unwrap();
        let mut m = rho.matrix().clone();
        for _ in 0..8 {
            m = prop.propagate(&m).unwrap();
        }
        assert!((&m - reference.matrix()).frobenius_norm() < 1e-10);
    }

    #[test]
    fn spectator_mode_c_is_untouched() {
        let layout = SpaceLayout::three_modes(3, 3, 2).unwrap();
        let mut psi = vec![ZERO; layout.dim()];
        // |1,0,1⟩ + |1,1,0⟩
        psi[(1 * 3 + 0) * 2 + 1] = C64::new(0.6, 0.0);
        psi[(1 * 3 + 1) * 2 + 0] = C64::new(0.8, 0.0);
        let rho = CMatrix::outer(&psi, &psi);
        let lind = Lindbladian::new(layout.dim(), None, vec![Jump::new(1.0, ab(&layout))]).unwrap();
        let prop = TwoPhotonPropagator::new(&layout, 1.0, 0.1).unwrap();
        assert!((&prop.generator(&rho).unwrap() - &lind.rhs(&rho).unwrap()).max_abs() < 1e-14);
    }

    #[test]
    fn vacuum_and_single_excitation_are_fixed_points() {
        let layout = SpaceLayout::modes(4, 4).unwrap();
        for k in [0usize, 4] {
            // k = 0: |0,0⟩; k = 4: |1,0⟩
            let rho = DensityMatrix::from_pure(&hilbert::fock_state(k, 16), layout.clone()).unwrap();
            let qss = quasi_steady_state(&rho, 1.0, QssOptions::default()).unwrap();
            assert_eq!(qss.state.matrix(), rho.matrix());
            assert_eq!(qss.time, 0.0);
        }
    }

    #[test]
    fn qss_of_even_state_is_dark_and_correlated() {
        let rho = even_state(0.75, 0.75, 16, 1e-10);
        let qss = quasi_steady_state(&rho, 1.0, QssOptions::default()).unwrap();
        assert!(qss.time <= 50.0 && qss.residual < 1e-8);
        let l = ab(rho.layout());
        let pairs = qss.state.expectation(&l.dagger().matmul(&l)).re;
        assert!(pairs < 1e-8, "{pairs}");
        assert!((qss.state.trace() - 1.0).abs() < 1e-12);
        // remaining correlation: ⟨ee|ρ|gg⟩ block is nonzero
        let modes = qss.state.partial_trace(&[Factor::QubitA, Factor::QubitB]).unwrap();
        assert!(modes.matrix()[(3, 0)].norm() > 1e-3);
        let limit = TwoPhotonPropagator::new(rho.layout(), 1.0, 1.0).unwrap().dark_limit(rho.matrix()).unwrap();
        assert!((&limit - qss.state.matrix()).frobenius_norm() < 1e-7);
    }

    #[test]
    fn dark_limit_matches_superoperator_null_space() {
        // mode-space oracle at small truncation: e^{tS} for large t projects
        // onto the null space of the vectorized generator.
        let n = 5;
        let layout = SpaceLayout::modes(n, n).unwrap();
        let a = hilbert::coherent_state_within(C64::new(0.7, 0.0), n, 1e-3).unwrap();
        let b = hilbert::coherent_state_within(C64::new(0.6, 0.0), n, 1e-3).unwrap();
        let psi = a.kron(&b);
        let rho = DensityMatrix::from_pure(&psi, layout.clone()).unwrap();
        let lind = Lindbladian::new(n * n, None, vec![Jump::new(1.0, ab(&layout))]).unwrap();
        let oracle = lindblad::propagate_superoperator(rho.matrix(), &lind, 80.0).unwrap();
        let limit = TwoPhotonPropagator::new(&layout, 1.0, 1.0).unwrap().dark_limit(rho.matrix()).unwrap();
        assert!((&limit - &oracle).frobenius_norm() < 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let rho = even_state(0.75, 0.75, 16, 1e-10);
        let opts = QssOptions { t_max: 2.0, ..Default::default() };
        assert!(matches!(quasi_steady_state(&rho, 1.0, opts), Err(Error::NotConverged { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn dark_states_are_fixed_points(re in proptest::collection::vec(-1.0f64..1.0, 14), im in proptest::collection::vec(-1.0f64..1.0, 14)) {
            // random pure state supported on min(n_a, n_b) = 0 for N = 4
            let layout = SpaceLayout::modes(4, 4).unwrap();
            let dark: Vec<usize> = (0..16).filter(|i| (i / 4).min(i % 4) == 0).collect();
            let mut psi = vec![ZERO; 16];
            for (k, &i) in dark.iter().enumerate() {
                psi[i] = C64::new(re[k % 14], im[k % 14]);
            }
            let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-3);
            let psi: Vec<C64> = psi.iter().map(|z| z / norm).collect();
            let rho = CMatrix::outer(&psi, &psi);
            let prop = TwoPhotonPropagator::new(&layout, 1.0, 3.0).unwrap();
            prop_assert_eq!(prop.generator(&rho).unwrap().max_abs(), 0.0);
            prop_assert!((&prop.propagate(&rho).unwrap() - &rho).max_abs() < 1e-15);
        }

        #[test]
        fn no_parity_mixing(alpha in 0.1f64..1.0, beta in 0.1f64..1.0) {
            let rho = even_state(alpha, beta, 12, 1e-5);
            let prop = TwoPhotonPropagator::new(rho.layout(), 1.0, 2.0).unwrap();
            let out = prop.propagate(rho.matrix()).unwrap();
            let d = 144;
            let mut cross: f64 = 0.0;
            for i in 0..out.rows() {
                for j in 0..out.cols() {
                    let (qi, qj) = (i / d, j / d);
                    let even_i = qi == 0 || qi == 3;
                    let even_j = qj == 0 || qj == 3;
                    if !(even_i && even_j) {
                        cross = cross.max(out[(i, j)].norm());
                    }
                }
            }
            prop_assert!(cross <= 1e-12);
        }
    }
}
