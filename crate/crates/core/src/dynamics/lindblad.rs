//! Deterministic Lindblad evolution and the vectorized-generator oracle.

use crate::error::{Error, Result};
use crate::hilbert::DensityMatrix;
use crate::qlinalg::{self, CMatrix, SparseRows, C64, ZERO};

/// One dissipation channel `rate · D(op)`.
#[derive(Clone, Debug)]
pub struct Jump {
    pub rate: f64,
    pub op: CMatrix,
}

impl Jump {
    pub fn new(rate: f64, op: CMatrix) -> Self {
        Self { rate, op }
    }
}

/// Generator `𝓛ρ = −i[H, ρ] + Σ rate·(LρL† − ½{L†L, ρ})`, stored as the
/// effective non-Hermitian part `K = −iH − ½ Σ rate L†L` plus the jumps.
#[derive(Clone, Debug)]
pub struct Lindbladian {
    dim: usize,
    hamiltonian: Option<CMatrix>,
    jumps: Vec<Jump>,
    k: SparseRows,
    jump_ops: Vec<(f64, SparseRows)>,
}

impl Lindbladian {
    pub fn new(dim: usize, hamiltonian: Option<CMatrix>, jumps: Vec<Jump>) -> Result<Self> {
        let mut k = CMatrix::zeros(dim, dim);
        if let Some(h) = &hamiltonian {
            check_square(h, dim, "Hamiltonian")?;
            k.axpy(C64::new(0.0, -1.0), h);
        }
        let mut jump_ops = Vec::with_capacity(jumps.len());
        for j in &jumps {
            check_square(&j.op, dim, "jump operator")?;
            if !(j.rate >= 0.0) || !j.rate.is_finite() {
                return Err(Error::InvalidParameter(format!("jump rate {}", j.rate)));
            }
            let ldl = j.op.dagger().matmul(&j.op);
            k.axpy(C64::new(-0.5 * j.rate, 0.0), &ldl);
            jump_ops.push((j.rate, SparseRows::from_dense(&j.op)));
        }
        Ok(Self { dim, hamiltonian, jumps, k: SparseRows::from_dense(&k), jump_ops })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn hamiltonian(&self) -> Option<&CMatrix> {
        self.hamiltonian.as_ref()
    }

    /// `dρ/dt` for a Hermitian `ρ`.
    pub fn rhs(&self, rho: &CMatrix) -> Result<CMatrix> {
        check_square(rho, self.dim, "density matrix")?;
        let mut out = CMatrix::zeros(self.dim, self.dim);
        let mut scratch = CMatrix::zeros(self.dim, self.dim);
        self.rhs_into(rho, &mut out, &mut scratch);
        Ok(out)
    }

    /// `𝓛ρ` for an arbitrary (not necessarily Hermitian) operator `ρ`.
    pub fn rhs_general(&self, rho: &CMatrix) -> Result<CMatrix> {
        check_square(rho, self.dim, "operator")?;
        let mut out = CMatrix::zeros(self.dim, self.dim);
        let mut scratch = CMatrix::zeros(self.dim, self.dim);
        self.rhs_into_general(rho, &mut out, &mut scratch, false);
        Ok(out)
    }

    /// `out = 𝓛ρ`, exploiting `Kρ + ρK† = X + X†` with `X = Kρ` for Hermitian ρ.
    fn rhs_into(&self, rho: &CMatrix, out: &mut CMatrix, scratch: &mut CMatrix) {
        self.rhs_into_general(rho, out, scratch, true);
    }

    fn rhs_into_general(&self, rho: &CMatrix, out: &mut CMatrix, scratch: &mut CMatrix, hermitian: bool) {
        let n = self.dim;
        self.k.mul_dense_into(rho, scratch);
        if hermitian {
            let x = scratch.as_slice();
            let o = out.as_mut_slice();
            for i in 0..n {
                for j in 0..n {
                    o[i * n + j] = x[i * n + j] + x[j * n + i].conj();
                }
            }
        } else {
            // ρK† = (Kρ†)†
            let mut y = CMatrix::zeros(n, n);
            self.k.mul_dense_into(&rho.dagger(), &mut y);
            let (x, y) = (scratch.as_slice(), y.as_slice());
            let o = out.as_mut_slice();
            for i in 0..n {
                for j in 0..n {
                    o[i * n + j] = x[i * n + j] + y[j * n + i].conj();
                }
            }
        }
        let mut lr = CMatrix::zeros(n, n);
        for (rate, l) in &self.jump_ops {
            if *rate == 0.0 {
                continue;
            }
            l.mul_dense_into(rho, &mut lr);
            l.dense_mul_adjoint_into(&lr, scratch);
            out.axpy(C64::new(*rate, 0.0), scratch);
        }
    }

    /// Row-major vectorized generator: `vec(𝓛ρ) = S vec(ρ)` using
    /// `vec(AρB) = (A ⊗ Bᵀ) vec(ρ)`.
    pub fn superoperator(&self) -> Result<CMatrix> {
        let n = self.dim;
        let id = CMatrix::identity(n);
        let k = self.k.to_dense();
        let mut s = qlinalg::kron(&k, &id)?;
        s += &qlinalg::kron(&id, &k.conj())?;
        for (rate, l) in &self.jump_ops {
            let l = l.to_dense();
            s.axpy(C64::new(*rate, 0.0), &qlinalg::kron(&l, &l.conj())?);
        }
        Ok(s)
    }

    /// Upper bound on the spectral radius of the generator, from induced
    /// 1-norms: `2‖K‖ + Σ rate‖L‖²`.
    pub fn spectral_bound(&self) -> f64 {
        let k = qlinalg::norm1(&self.k.to_dense());
        let jumps: f64 = self.jump_ops.iter().map(|(r, l)| r * qlinalg::norm1(&l.to_dense()).powi(2)).sum();
        2.0 * k + jumps
    }

    /// Largest RK4 step that keeps the whole generator spectrum inside the
    /// stability region.
    pub fn rk4_stable_dt(&self) -> f64 {
        RK4_STABILITY / self.spectral_bound().max(1e-300)
    }
}

/// Conservative radius of the RK4 stability region along both axes.
pub const RK4_STABILITY: f64 = 2.5;

fn check_square(m: &CMatrix, dim: usize, what: &str) -> Result<()> {
    if !m.is_square() || m.rows() != dim {
        return Err(Error::DimensionMismatch(format!("{what} is {}x{}, expected {dim}x{dim}", m.rows(), m.cols())));
    }
    Ok(())
}

/// `dρ/dt = −i[H, ρ] + Σ rate·D(L)ρ` for a list of `(rate, L)` channels.
pub fn lindblad_rhs(rho: &DensityMatrix, jumps: &[(f64, CMatrix)], h: Option<&CMatrix>) -> Result<CMatrix> {
    let l = Lindbladian::new(
        rho.dim(),
        h.cloned(),
        jumps.iter().map(|(r, op)| Jump::new(*r, op.clone())).collect(),
    )?;
    l.rhs(rho.matrix())
}

/// A fixed-step deterministic propagator `ρ(t) → ρ(t + dt)`. `advance`
/// must be the same linear map for non-Hermitian operators (the branch
/// engine propagates off-diagonal blocks through it).
pub trait Drift: Sync {
    fn dim(&self) -> usize;
    fn dt(&self) -> f64;
    fn advance(&self, rho: &CMatrix) -> Result<CMatrix>;
}

/// Classical fourth-order Runge–Kutta on a [`Lindbladian`], with
/// symmetrization after every step.
#[derive(Clone, Debug)]
pub struct Rk4 {
    lindbladian: Lindbladian,
    dt: f64,
}

/// Smallest eigenvalue tolerated before declaring an integrator failure.
pub const POSITIVITY_FAILURE: f64 = -1e-6;
/// Largest dimension for which positivity is checked by diagonalization.
pub const POSITIVITY_CHECK_MAX_DIM: usize = 256;

impl Rk4 {
    pub fn new(lindbladian: Lindbladian, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt = {dt}")));
        }
        Ok(Self { lindbladian, dt })
    }

    /// RK4 at `min(requested, stability limit)`.
    pub fn stable(lindbladian: Lindbladian, requested: f64) -> Result<Self> {
        let dt = requested.min(lindbladian.rk4_stable_dt());
        Self::new(lindbladian, dt)
    }

    pub fn lindbladian(&self) -> &Lindbladian {
        &self.lindbladian
    }

    fn step_with(&self, rho: &CMatrix, h: f64) -> CMatrix {
        self.step_general(rho, h, true)
    }

    /// One RK4 step; `hermitian` selects the Hermitian fast path and
    /// symmetrizes the result.
    fn step_general(&self, rho: &CMatrix, h: f64, hermitian: bool) -> CMatrix {
        let n = self.lindbladian.dim;
        let mut scratch = CMatrix::zeros(n, n);
        let mut k1 = CMatrix::zeros(n, n);
        let mut k2 = CMatrix::zeros(n, n);
        let mut k3 = CMatrix::zeros(n, n);
        let mut k4 = CMatrix::zeros(n, n);
        let l = &self.lindbladian;
        l.rhs_into_general(rho, &mut k1, &mut scratch, hermitian);
        let mut tmp = rho.clone();
        tmp.axpy(C64::new(h / 2.0, 0.0), &k1);
        l.rhs_into_general(&tmp, &mut k2, &mut scratch, hermitian);
        tmp = rho.clone();
        tmp.axpy(C64::new(h / 2.0, 0.0), &k2);
        l.rhs_into_general(&tmp, &mut k3, &mut scratch, hermitian);
        tmp = rho.clone();
        tmp.axpy(C64::new(h, 0.0), &k3);
        l.rhs_into_general(&tmp, &mut k4, &mut scratch, hermitian);
        let mut out = rho.clone();
        let o = out.as_mut_slice();
        let (a, b, c, d) = (k1.as_slice(), k2.as_slice(), k3.as_slice(), k4.as_slice());
        for i in 0..o.len() {
            o[i] += (a[i] + (b[i] + c[i]) * 2.0 + d[i]) * (h / 6.0);
        }
        if hermitian {
            out.hermitize();
        }
        out
    }
}

impl Drift for Rk4 {
    fn dim(&self) -> usize {
        self.lindbladian.dim
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn advance(&self, rho: &CMatrix) -> Result<CMatrix> {
        Ok(self.step_general(rho, self.dt, false))
    }
}

/// Evolve `ρ₀` to `t_end` with fixed-step RK4. The step is shortened so an
/// integer number of steps lands on `t_end`. Positivity is checked at the
/// end (and trace drift beyond 1e−8 is reported) for dims up to
/// [`POSITIVITY_CHECK_MAX_DIM`].
pub fn evolve_lindblad(rho0: &DensityMatrix, rk4: &Rk4, t_end: f64) -> Result<DensityMatrix> {
    evolve_lindblad_sampled(rho0, rk4, t_end, &[]).map(|(rho, _)| rho)
}

/// As [`evolve_lindblad`], additionally returning `ρ` at each requested
/// sample time (which must lie in `[0, t_end]`).
pub fn evolve_lindblad_sampled(
    rho0: &DensityMatrix,
    rk4: &Rk4,
    t_end: f64,
    sample_times: &[f64],
) -> Result<(DensityMatrix, Vec<DensityMatrix>)> {
    if rho0.dim() != rk4.lindbladian.dim {
        return Err(Error::DimensionMismatch(format!(
            "state dim {} vs generator dim {}",
            rho0.dim(),
            rk4.lindbladian.dim
        )));
    }
    let (rho, sampled) = evolve_matrix_sampled(rho0.matrix(), rk4, t_end, sample_times)?;
    let out = DensityMatrix::new(rho, rho0.layout().clone())?;
    if out.dim() <= POSITIVITY_CHECK_MAX_DIM && t_end > 0.0 {
        let min = out.min_eigenvalue()?;
        if min < POSITIVITY_FAILURE {
            return Err(Error::IntegratorFailure {
                time: t_end,
                reason: format!("eigenvalue {min:.3e} below {POSITIVITY_FAILURE}; reduce dt"),
            });
        }
    }
    let samples = sampled.into_iter().map(|m| DensityMatrix::new(m, rho0.layout().clone())).collect::<Result<_>>()?;
    Ok((out, samples))
}

/// Fixed-step RK4 of a Hermitian operator `ρ₀` (any trace) to `t_end`,
/// returning the final operator and the samples; fails on non-finite
/// values or trace drift beyond 1e−8 relative to `Tr ρ₀`.
pub(crate) fn evolve_matrix_sampled(
    rho0: &CMatrix,
    rk4: &Rk4,
    t_end: f64,
    sample_times: &[f64],
) -> Result<(CMatrix, Vec<CMatrix>)> {
    check_square(rho0, rk4.lindbladian.dim, "density matrix")?;
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("t_end = {t_end}")));
    }
    let steps = (t_end / rk4.dt).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let tr0 = rho0.trace().re;
    let mut rho = rho0.clone();
    let mut pending: Vec<(usize, usize)> = sample_times
        .iter()
        .enumerate()
        .map(|(i, &t)| (i, if h == 0.0 { 0 } else { (t / h).round() as usize }))
        .collect();
    pending.sort_by_key(|&(_, s)| s);
    let mut ordered: Vec<(usize, CMatrix)> = Vec::new();
    let mut next = 0;
    for step in 0..=steps {
        while next < pending.len() && pending[next].1 == step {
            ordered.push((pending[next].0, rho.clone()));
            next += 1;
        }
        if step == steps {
            break;
        }
        rho = rk4.step_with(&rho, h);
        if !rho.is_finite() {
            return Err(Error::IntegratorFailure { time: (step + 1) as f64 * h, reason: "non-finite state; reduce dt".into() });
        }
    }
    if next < pending.len() {
        return Err(Error::InvalidParameter("sample time beyond t_end".into()));
    }
    let drift = (rho.trace().re - tr0).abs();
    if drift > 1e-8 * tr0.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::IntegratorFailure { time: t_end, reason: format!("trace drift {drift:.3e}; reduce dt") });
    }
    ordered.sort_by_key(|(i, _)| *i);
    Ok((rho, ordered.into_iter().map(|(_, m)| m).collect()))
}

/// Oracle propagation `vec ρ(t) = exp(t S) vec ρ₀` with the dense
/// vectorized generator. `S` is split into the connected components of its
/// sparsity graph and each diagonal block is exponentiated separately
/// (exact, since the blocks do not couple). Works for any operator
/// `ρ₀` (not only Hermitian ones); small dimensions only.
pub fn propagate_superoperator(rho0: &CMatrix, lindbladian: &Lindbladian, t: f64) -> Result<CMatrix> {
    let n = lindbladian.dim;
    check_square(rho0, n, "operator")?;
    let s = lindbladian.superoperator()?;
    let m = n * n;
    // union–find over the nonzero pattern
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..m {
        for (j, z) in s.row(i).iter().enumerate() {
            if *z != ZERO {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..m {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let v = rho0.as_slice();
    let mut out = vec![ZERO; m];
    for idx in groups.values() {
        let block = CMatrix::from_fn(idx.len(), idx.len(), |a, b| s[(idx[a], idx[b])] * t);
        let e = qlinalg::expm(&block)?;
        let x: Vec<C64> = idx.iter().map(|&i| v[i]).collect();
        for (a, y) in e.apply(&x).into_iter().enumerate() {
            out[idx[a]] = y;
        }
    }
    CMatrix::from_vec(n, n, out)
}

/// [`propagate_superoperator`] applied to a density matrix.
pub fn evolve_superoperator(rho0: &DensityMatrix, lindbladian: &Lindbladian, t: f64) -> Result<DensityMatrix> {
    DensityMatrix::new(propagate_superoperator(rho0.matrix(), lindbladian, t)?, rho0.layout().clone())
}

/// Expectation value `Tr[Oρ]` for each state of a sampled trajectory.
pub fn expectations(states: &[DensityMatrix], op: &CMatrix) -> Vec<f64> {
    states.iter().map(|s| s.expectation(op).re).collect()
}
