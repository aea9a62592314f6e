//! States and operators of the composite qubit ⊗ qubit ⊗ Fock-mode space.
//!
//! Conventions used throughout the crate:
//! * qubit basis `|g⟩ = 0`, `|e⟩ = 1`;
//! * factor order `(qubit_A, qubit_B, mode_a, mode_b[, mode_c])`;
//! * quadratures `X = (a + a†)/√2`, `Y = (a − a†)/(i√2)`, so a coherent
//!   state `|α⟩` with real α has `⟨X⟩ = √2 α` and vacuum variance 1/2.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlinalg::{self, CMatrix, C64, ONE, ZERO};

/// Default outcome window for quadrature measurements.
pub const QUADRATURE_WINDOW: f64 = 6.0;
/// Coherent-state Fock tail allowed by the truncation check.
pub const FOCK_TAIL_TOLERANCE: f64 = 1e-10;
/// Relaxed tail tolerance for integrator cross-checks at small truncations.
pub const CROSS_CHECK_TAIL_TOLERANCE: f64 = 1e-6;
/// Default Fock truncation of modes a and b on the deterministic path.
pub const DEFAULT_TRUNCATION: usize = 16;
/// Default truncation of the parity mode c in the three-mode model.
pub const DEFAULT_TRUNCATION_C: usize = 6;
/// Largest Fock truncation accepted by the Hermite-function recursion.
pub const MAX_TRUNCATION: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Factor {
    QubitA,
    QubitB,
    ModeA,
    ModeB,
    ModeC,
}

impl Factor {
    fn rank(self) -> usize {
        match self {
            Factor::QubitA => 0,
            Factor::QubitB => 1,
            Factor::ModeA => 2,
            Factor::ModeB => 3,
            Factor::ModeC => 4,
        }
    }

    pub fn is_qubit(self) -> bool {
        matches!(self, Factor::QubitA | Factor::QubitB)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeLabel {
    A,
    B,
    C,
}

/// Numerical basis of one bosonic mode: Fock levels `0..truncation`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub label: ModeLabel,
    pub truncation: usize,
}

impl ModeSpec {
    pub fn new(label: ModeLabel, truncation: usize) -> Result<Self> {
        if truncation < 2 {
            return Err(Error::InvalidParameter(format!("mode truncation must be at least 2, got {truncation}")));
        }
        Ok(Self { label, truncation })
    }

    /// Check the coherent-state tail criterion for amplitude `alpha`.
    pub fn supports_amplitude(&self, alpha: f64) -> Result<()> {
        self.supports_amplitude_within(alpha, FOCK_TAIL_TOLERANCE)
    }

    pub fn supports_amplitude_within(&self, alpha: f64, tolerance: f64) -> Result<()> {
        let tail = fock_tail(alpha * alpha, self.truncation);
        if tail < tolerance {
            Ok(())
        } else {
            Err(Error::TruncationTooSmall { amplitude: alpha, truncation: self.truncation, tail })
        }
    }

    fn factor(&self) -> Factor {
        match self.label {
            ModeLabel::A => Factor::ModeA,
            ModeLabel::B => Factor::ModeB,
            ModeLabel::C => Factor::ModeC,
        }
    }
}

/// Ordered tensor factors of the simulated space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceLayout {
    factors: Vec<(Factor, usize)>,
}

impl SpaceLayout {
    /// Build a layout from qubit flags and mode specs. Factors always appear
    /// in canonical order regardless of argument order.
    pub fn new(qubits: bool, modes: &[ModeSpec]) -> Result<Self> {
        let mut factors = Vec::new();
        if qubits {
            factors.push((Factor::QubitA, 2));
            factors.push((Factor::QubitB, 2));
        }
        for m in modes {
            if m.truncation < 2 {
                return Err(Error::InvalidParameter(format!("mode truncation {} < 2", m.truncation)));
            }
            factors.push((m.factor(), m.truncation));
        }
        factors.sort_by_key(|(f, _)| f.rank());
        if factors.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter("duplicate factor in layout".into()));
        }
        if factors.is_empty() {
            return Err(Error::InvalidParameter("empty layout".into()));
        }
        let layout = Self { factors };
        qlinalg::CMatrix::try_zeros(layout.dim(), 1)?;
        Ok(layout)
    }

    /// Qubits A, B and modes a, b.
    pub fn protocol(n_a: usize, n_b: usize) -> Result<Self> {
        Self::new(true, &[ModeSpec::new(ModeLabel::A, n_a)?, ModeSpec::new(ModeLabel::B, n_b)?])
    }

    /// Qubits A, B and modes a, b, c.
    pub fn protocol_with_c(n_a: usize, n_b: usize, n_c: usize) -> Result<Self> {
        Self::new(
            true,
            &[ModeSpec::new(ModeLabel::A, n_a)?, ModeSpec::new(ModeLabel::B, n_b)?, ModeSpec::new(ModeLabel::C, n_c)?],
        )
    }

    /// Modes a and b only.
    pub fn modes(n_a: usize, n_b: usize) -> Result<Self> {
        Self::new(false, &[ModeSpec::new(ModeLabel::A, n_a)?, ModeSpec::new(ModeLabel::B, n_b)?])
    }

    /// Modes a, b and c only.
    pub fn three_modes(n_a: usize, n_b: usize, n_c: usize) -> Result<Self> {
        Self::new(
            false,
            &[ModeSpec::new(ModeLabel::A, n_a)?, ModeSpec::new(ModeLabel::B, n_b)?, ModeSpec::new(ModeLabel::C, n_c)?],
        )
    }

    /// The same modes with the two qubits prepended.
    pub fn with_qubits(&self) -> Result<Self> {
        let mut factors: Vec<(Factor, usize)> = self.factors.iter().copied().filter(|(f, _)| !f.is_qubit()).collect();
        factors.insert(0, (Factor::QubitB, 2));
        factors.insert(0, (Factor::QubitA, 2));
        let layout = Self { factors };
        qlinalg::CMatrix::try_zeros(layout.dim(), 1)?;
        Ok(layout)
    }

    /// The layout with the qubit factors removed.
    pub fn without_qubits(&self) -> Result<Self> {
        let factors: Vec<(Factor, usize)> = self.factors.iter().copied().filter(|(f, _)| !f.is_qubit()).collect();
        if factors.is_empty() {
            return Err(Error::InvalidParameter("layout has only qubits".into()));
        }
        Ok(Self { factors })
    }

    /// Diagonal of `(−1)^{n}` summed over the listed mode factors.
    pub fn parity_signs(&self, modes: &[Factor]) -> Result<Vec<f64>> {
        let pos: Vec<usize> = modes.iter().map(|f| self.require(*f)).collect::<Result<_>>()?;
        Ok((0..self.dim())
            .map(|i| {
                let idx = self.unflatten(i);
                if pos.iter().map(|&p| idx[p]).sum::<usize>() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect())
    }

    /// Two qubits without modes.
    pub fn qubits() -> Self {
        Self { factors: vec![(Factor::QubitA, 2), (Factor::QubitB, 2)] }
    }

    pub fn factors(&self) -> &[(Factor, usize)] {
        &self.factors
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|(_, d)| *d).collect()
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(|(_, d)| *d).product()
    }

    pub fn position(&self, factor: Factor) -> Option<usize> {
        self.factors.iter().position(|(f, _)| *f == factor)
    }

    pub fn require(&self, factor: Factor) -> Result<usize> {
        self.position(factor)
            .ok_or_else(|| Error::InvalidParameter(format!("layout has no {factor:?} factor")))
    }

    pub fn factor_dim(&self, factor: Factor) -> Option<usize> {
        self.position(factor).map(|p| self.factors[p].1)
    }

    pub fn has_qubits(&self) -> bool {
        self.position(Factor::QubitA).is_some() && self.position(Factor::QubitB).is_some()
    }

    /// Stride of `factor` in the flattened basis index.
    pub fn stride(&self, factor: Factor) -> Result<usize> {
        let p = self.require(factor)?;
        Ok(self.factors[p + 1..].iter().map(|(_, d)| *d).product())
    }

    /// Decompose a flat basis index into per-factor indices.
    pub fn unflatten(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        for (k, (_, d)) in self.factors.iter().enumerate().rev() {
            out[k] = index % d;
            index /= d;
        }
        out
    }

    /// Layout with only the listed factors kept (in canonical order).
    pub fn restrict(&self, keep: &[Factor]) -> Result<Self> {
        let factors: Vec<_> = self.factors.iter().copied().filter(|(f, _)| keep.contains(f)).collect();
        if factors.len() != keep.len() {
            return Err(Error::InvalidParameter(format!("cannot keep {keep:?} from {:?}", self.factors)));
        }
        Ok(Self { factors })
    }

    /// `I ⊗ … ⊗ op ⊗ … ⊗ I` with `op` acting on `factor`.
    pub fn embed(&self, op: &CMatrix, factor: Factor) -> Result<CMatrix> {
        let p = self.require(factor)?;
        if op.rows() != self.factors[p].1 || !op.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "operator {}x{} on a factor of dim {}",
                op.rows(),
                op.cols(),
                self.factors[p].1
            )));
        }
        let left: usize = self.factors[..p].iter().map(|(_, d)| *d).product();
        let right: usize = self.factors[p + 1..].iter().map(|(_, d)| *d).product();
        qlinalg::kron(&qlinalg::kron(&CMatrix::identity(left), op)?, &CMatrix::identity(right))
    }

    /// Annihilation operator of a mode factor, embedded in the full space.
    pub fn lowering(&self, factor: Factor) -> Result<CMatrix> {
        let p = self.require(factor)?;
        if factor.is_qubit() {
            return Err(Error::InvalidParameter("lowering operator of a qubit factor".into()));
        }
        self.embed(&annihilation_op(self.factors[p].1), factor)
    }
}

/// Complex amplitudes over some basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(pub Vec<C64>);

impl StateVector {
    pub fn amplitudes(&self) -> &[C64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidState(format!("cannot normalize vector of norm {n}")));
        }
        for z in &mut self.0 {
            *z /= n;
        }
        Ok(self)
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn kron(&self, other: &StateVector) -> StateVector {
        StateVector(qlinalg::kron_vec(&self.0, &other.0))
    }

    pub fn projector(&self) -> CMatrix {
        CMatrix::outer(&self.0, &self.0)
    }
}

/// Density matrix over a [`SpaceLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
    layout: SpaceLayout,
}

/// Tolerances for [`DensityMatrix::check`].
pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-8;

impl DensityMatrix {
    pub fn new(matrix: CMatrix, layout: SpaceLayout) -> Result<Self> {
        if !matrix.is_square() || matrix.rows() != layout.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix for layout of dim {}",
                matrix.rows(),
                matrix.cols(),
                layout.dim()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite("density matrix"));
        }
        Ok(Self { matrix, layout })
    }

    pub fn from_pure(psi: &StateVector, layout: SpaceLayout) -> Result<Self> {
        Self::new(psi.projector(), layout)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut CMatrix {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn purity(&self) -> f64 {
        // Tr ρ² = Σ |ρ_ij|² for Hermitian ρ
        self.matrix.as_slice().iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn expectation(&self, op: &CMatrix) -> C64 {
        let n = self.dim();
        let mut acc = ZERO;
        for i in 0..n {
            for (j, o) in op.row(i).iter().enumerate() {
                if *o != ZERO {
                    acc += o * self.matrix[(j, i)];
                }
            }
        }
        acc
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(qlinalg::eig_hermitian(&self.matrix)?.eigenvalues[0])
    }

    /// Hermiticity and unit trace; positivity as well when `positivity` is set.
    pub fn check(&self, positivity: bool) -> Result<()> {
        let norm = self.matrix.frobenius_norm().max(1e-300);
        let herr = self.matrix.hermiticity_error() / norm;
        if herr > HERMITICITY_TOL {
            return Err(Error::InvalidState(format!("hermiticity error {herr:.3e}")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        if positivity {
            let min = self.min_eigenvalue()?;
            if min < -POSITIVITY_TOL {
                return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
            }
        }
        Ok(())
    }

    pub fn normalize(&mut self) -> Result<()> {
        let tr = self.trace();
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::InvalidState(format!("cannot normalize trace {tr}")));
        }
        self.matrix.scale_mut(1.0 / tr);
        Ok(())
    }

    pub fn partial_trace(&self, keep: &[Factor]) -> Result<DensityMatrix> {
        let idx: Vec<usize> = keep.iter().map(|f| self.layout.require(*f)).collect::<Result<_>>()?;
        let reduced = qlinalg::partial_trace(&self.matrix, &self.layout.dims(), &idx)?;
        DensityMatrix::new(reduced, self.layout.restrict(keep)?)
    }
}

/// `Σ_{n≥N} e^{−x} xⁿ/n!`, the Poisson mass beyond the truncation.
pub fn fock_tail(mean_photons: f64, truncation: usize) -> f64 {
    let x = mean_photons;
    if x == 0.0 {
        return 0.0;
    }
    let n = truncation as f64;
    let mut log_term = -x + n * x.ln() - ln_factorial(truncation);
    let mut sum = 0.0;
    let mut k = truncation;
    loop {
        let term = log_term.exp();
        sum += term;
        if term < 1e-30 * sum.max(1e-300) || k > truncation + 10_000 {
            break;
        }
        k += 1;
        log_term += x.ln() - (k as f64).ln();
        if term == 0.0 && log_term < -745.0 && (k as f64) > x {
            break;
        }
    }
    sum
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Smallest truncation whose coherent-state tail is below `tolerance`.
pub fn minimal_truncation(amplitude: f64, tolerance: f64) -> usize {
    let x = amplitude * amplitude;
    (2..MAX_TRUNCATION).find(|&n| fock_tail(x, n) < tolerance).unwrap_or(MAX_TRUNCATION)
}

/// Default mode truncation for amplitude `amplitude`: 16 levels, raised
/// when the coherent-state tail criterion needs more.
pub fn default_truncation(amplitude: f64) -> usize {
    DEFAULT_TRUNCATION.max(minimal_truncation(amplitude, FOCK_TAIL_TOLERANCE))
}

/// Coherent state `|α⟩` truncated to `n` levels and renormalized.
pub fn coherent_state(alpha: C64, n: usize) -> Result<StateVector> {
    coherent_state_within(alpha, n, FOCK_TAIL_TOLERANCE)
}

/// [`coherent_state`] with an explicit Fock-tail tolerance. Intended for
/// integrator cross-checks at deliberately small truncations, where both
/// sides see the same truncated space.
pub fn coherent_state_within(alpha: C64, n: usize, tail_tolerance: f64) -> Result<StateVector> {
    let spec = ModeSpec::new(ModeLabel::A, n)?;
    spec.supports_amplitude_within(alpha.norm(), tail_tolerance)?;
    let mut amps = Vec::with_capacity(n);
    let mut a = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for k in 0..n {
        amps.push(a);
        a = a * alpha / ((k + 1) as f64).sqrt();
    }
    StateVector(amps).normalized()
}

/// Fock state `|k⟩` in an `n`-level mode.
pub fn fock_state(k: usize, n: usize) -> StateVector {
    let mut v = vec![ZERO; n];
    v[k] = ONE;
    StateVector(v)
}

/// `a|k⟩ = √k |k−1⟩`
pub fn annihilation_op(n: usize) -> CMatrix {
    let mut a = CMatrix::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = C64::new((k as f64).sqrt(), 0.0);
    }
    a
}

pub fn number_op(n: usize) -> CMatrix {
    CMatrix::from_real_diag(&(0..n).map(|k| k as f64).collect::<Vec<_>>())
}

/// `(X, Y)` with `X = (a + a†)/√2` and `Y = (a − a†)/(i√2)`.
pub fn quadrature_ops(n: usize) -> (CMatrix, CMatrix) {
    let a = annihilation_op(n);
    let ad = a.dagger();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let x = (&a + &ad).scale_real(s);
    let y = (&a - &ad).scale(C64::new(0.0, -s));
    (x, y)
}

/// Measured quadrature of a homodyne detector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrature {
    X,
    Y,
}

impl Quadrature {
    /// Local-oscillator phase θ: `X_θ = (a e^{−iθ} + a† e^{iθ})/√2`.
    pub fn phase(self) -> f64 {
        match self {
            Quadrature::X => 0.0,
            Quadrature::Y => PI / 2.0,
        }
    }
}

impl std::fmt::Display for Quadrature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Quadrature::X => "X",
            Quadrature::Y => "Y",
        })
    }
}

impl std::str::FromStr for Quadrature {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" | "x" => Ok(Quadrature::X),
            "Y" | "y" => Ok(Quadrature::Y),
            other => Err(Error::InvalidParameter(format!("unknown quadrature {other:?}"))),
        }
    }
}

/// Hermite functions `ψ_k(ξ) = H_k(ξ) e^{−ξ²/2} / (π^{1/4} √(2ᵏ k!))` for
/// `k < n`, by the three-term recursion (no factorials or powers).
pub fn hermite_functions(xi: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    out[0] = PI.powf(-0.25) * (-xi * xi / 2.0).exp();
    if n > 1 {
        out[1] = 2f64.sqrt() * xi * out[0];
    }
    for k in 2..n {
        let kf = k as f64;
        out[k] = (2.0 / kf).sqrt() * xi * out[k - 1] - ((kf - 1.0) / kf).sqrt() * out[k - 2];
    }
    out
}

/// Unnormalized eigenvector `|ξ⟩_θ` of `X_θ` in the Fock basis:
/// components `e^{ikθ} ψ_k(ξ)`.
pub fn quadrature_eigenvector(xi: f64, theta: f64, n: usize) -> Result<StateVector> {
    quadrature_eigenvector_in_window(xi, theta, n, QUADRATURE_WINDOW)
}

pub fn quadrature_eigenvector_in_window(xi: f64, theta: f64, n: usize, window: f64) -> Result<StateVector> {
    if !xi.is_finite() || xi.abs() > window {
        return Err(Error::OutsideWindow { xi, window });
    }
    if n > MAX_TRUNCATION || window > 30.0 {
        return Err(Error::Overflow("Hermite recursion"));
    }
    let h = hermite_functions(xi, n);
    Ok(StateVector(
        h.iter()
            .enumerate()
            .map(|(k, &v)| C64::from_polar(1.0, k as f64 * theta) * v)
            .collect(),
    ))
}

/// `(|e, α⟩ + |g, −α⟩)/√2` over (qubit, mode).
pub fn qubit_photon_state(alpha: f64, n: usize) -> Result<StateVector> {
    let plus = coherent_state(C64::new(alpha, 0.0), n)?;
    let minus = coherent_state(C64::new(-alpha, 0.0), n)?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = Vec::with_capacity(2 * n);
    v.extend(minus.0.iter().map(|z| z * s)); // |g⟩ = index 0
    v.extend(plus.0.iter().map(|z| z * s));
    Ok(StateVector(v))
}

/// Four-branch joint state after the conditional displacements,
/// `(|ee,α,β⟩ + |gg,−α,−β⟩ + |eg,α,−β⟩ + |ge,−α,β⟩)/2`. A mode c present in
/// the layout starts in vacuum.
pub fn step1_joint_state(alpha: f64, beta: f64, layout: &SpaceLayout) -> Result<StateVector> {
    step1_joint_state_within(alpha, beta, layout, FOCK_TAIL_TOLERANCE)
}

/// [`step1_joint_state`] with an explicit Fock-tail tolerance.
pub fn step1_joint_state_within(alpha: f64, beta: f64, layout: &SpaceLayout, tail_tolerance: f64) -> Result<StateVector> {
    let n_a = layout.factor_dim(Factor::ModeA).ok_or_else(|| Error::InvalidParameter("layout lacks mode a".into()))?;
    let n_b = layout.factor_dim(Factor::ModeB).ok_or_else(|| Error::InvalidParameter("layout lacks mode b".into()))?;
    if !layout.has_qubits() {
        return Err(Error::InvalidParameter("layout lacks the qubits".into()));
    }
    let n_c = layout.factor_dim(Factor::ModeC).unwrap_or(1);
    let coh = |amp: f64, n: usize| coherent_state_within(C64::new(amp, 0.0), n, tail_tolerance);
    let coh_a = [coh(-alpha, n_a)?, coh(alpha, n_a)?];
    let coh_b = [coh(-beta, n_b)?, coh(beta, n_b)?];
    let mut v = vec![ZERO; layout.dim()];
    for qa in 0..2 {
        for qb in 0..2 {
            let base = ((qa * 2 + qb) * n_a) * n_b;
            for m in 0..n_a {
                for k in 0..n_b {
                    // mode c in vacuum: only the c = 0 slot is filled
                    v[((base + m * n_b) + k) * n_c] = 0.5 * coh_a[qa].0[m] * coh_b[qb].0[k];
                }
            }
        }
    }
    StateVector(v).normalized()
}

/// Joint qubit parity sector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sector {
    Even,
    Odd,
}

impl Sector {
    /// Whether the two-qubit basis state `(q_A, q_B)` lies in this sector.
    pub fn contains(self, qa: usize, qb: usize) -> bool {
        match self {
            Sector::Even => qa == qb,
            Sector::Odd => qa != qb,
        }
    }

    pub fn other(self) -> Sector {
        match self {
            Sector::Even => Sector::Odd,
            Sector::Odd => Sector::Even,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sector::Even => "even",
            Sector::Odd => "odd",
        }
    }
}

impl std::fmt::Display for Sector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Sector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(Sector::Even),
            "odd" => Ok(Sector::Odd),
            other => Err(Error::InvalidParameter(format!("unknown sector {other:?}"))),
        }
    }
}

/// Two-qubit parity projector embedded in `layout`, as a 0/1 mask over
/// basis indices.
pub fn parity_mask(layout: &SpaceLayout, sector: Sector) -> Result<Vec<bool>> {
    let pa = layout.require(Factor::QubitA)?;
    let pb = layout.require(Factor::QubitB)?;
    Ok((0..layout.dim())
        .map(|i| {
            let idx = layout.unflatten(i);
            sector.contains(idx[pa], idx[pb])
        })
        .collect())
}

/// Project `psi` onto a qubit-parity sector; returns the renormalized state
/// and the sector probability.
pub fn parity_project(psi: &StateVector, layout: &SpaceLayout, sector: Sector) -> Result<(StateVector, f64)> {
    if psi.len() != layout.dim() {
        return Err(Error::DimensionMismatch(format!("state of len {} for layout dim {}", psi.len(), layout.dim())));
    }
    let mask = parity_mask(layout, sector)?;
    let projected: Vec<C64> = psi.0.iter().zip(&mask).map(|(z, &m)| if m { *z } else { ZERO }).collect();
    let prob = projected.iter().map(|z| z.norm_sqr()).sum::<f64>() / psi.norm().powi(2);
    if prob < 1e-300 {
        return Err(Error::ZeroProbability(sector.name()));
    }
    Ok((StateVector(projected).normalized()?, prob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn vacuum_coherent_state() {
        let v = coherent_state(ZERO, 8).unwrap();
        assert_eq!(v, fock_state(0, 8));
    }

    #[test]
    fn coherent_amplitudes_match_poisson_formula() {
        let alpha = 0.75;
        let v = coherent_state(C64::new(alpha, 0.0), 16).unwrap();
        assert!((v.0[0].re - 0.754839601989).abs() < 1e-11);
        for (n, z) in v.0.iter().enumerate() {
            let closed = (-alpha * alpha / 2.0).exp() * alpha.powi(n as i32) / factorial(n).sqrt();
            assert!((z.re - closed).abs() < 1e-12 && z.im.abs() < 1e-15, "n={n}");
        }
    }

    #[test]
    fn coherent_overlap_closed_form() {
        let a = coherent_state(C64::new(-0.75, 0.0), 16).unwrap();
        let b = coherent_state(C64::new(0.75, 0.0), 16).unwrap();
        let expect = (-2.0 * 0.75f64 * 0.75).exp();
        assert!((a.inner(&b).re - expect).abs() < 1e-10);
        assert!((expect - 0.32465).abs() < 1e-5);
    }

    #[test]
    fn truncation_too_small_is_rejected() {
        assert!(matches!(coherent_state(C64::new(1.5, 0.0), 8), Err(Error::TruncationTooSmall { .. })));
        // α = 1.5 needs N = 18 for a 1e-10 tail (tail at N = 16 is 2.5e-9)
        assert!(coherent_state(C64::new(1.5, 0.0), 16).is_err());
        assert!(coherent_state(C64::new(1.5, 0.0), 18).is_ok());
        assert_eq!(default_truncation(1.5), 18);
        assert_eq!(default_truncation(0.75), 16);
    }

    #[test]
    fn minimal_truncations() {
        // cross-checked with direct Poisson sums
        assert_eq!(minimal_truncation(0.5, 1e-10), 9);
        assert!(fock_tail(0.25, 8) > 1e-10 && fock_tail(0.25, 9) < 1e-10);
        assert_eq!(minimal_truncation(0.75, 1e-10), 11);
        assert_eq!(minimal_truncation(1.5, 1e-10), 18);
        assert!((fock_tail(2.25, 16) - 2.501798169562937e-09).abs() < 1e-20);
    }

    #[test]
    fn ladder_action() {
        let a = annihilation_op(3);
        assert_eq!(a.apply(&fock_state(1, 3).0), fock_state(0, 3).0);
    }

    #[test]
    fn canonical_commutator_in_interior() {
        let n = 10;
        let (x, y) = quadrature_ops(n);
        let comm = x.commutator(&y);
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let expect = if i == j { C64::new(0.0, 1.0) } else { ZERO };
                assert!((comm[(i, j)] - expect).norm() < 1e-13, "({i},{j})");
            }
        }
    }

    #[test]
    fn coherent_x_expectation() {
        let alpha = 0.75;
        let v = coherent_state(C64::new(alpha, 0.0), 16).unwrap();
        let (x, _) = quadrature_ops(16);
        let ex = v.inner(&StateVector(x.apply(&v.0)));
        assert!((ex.re - 2f64.sqrt() * alpha).abs() < 1e-9);
    }

    #[test]
    fn hermite_function_values_at_origin() {
        let v = quadrature_eigenvector(0.0, 0.0, 4).unwrap();
        assert!((v.0[0].re - PI.powf(-0.25)).abs() < 1e-15);
        assert!((v.0[0].re - 0.75113).abs() < 1e-5);
        assert_eq!(v.0[1], ZERO);
        assert!(matches!(quadrature_eigenvector(6.5, 0.0, 4), Err(Error::OutsideWindow { .. })));
    }

    /// Slow oracle: explicit Hermite polynomials with factorial normalization.
    fn hermite_oracle(xi: f64, k: usize) -> f64 {
        let mut h0 = 1.0;
        let mut h1 = 2.0 * xi;
        let hk = match k {
            0 => h0,
            1 => h1,
            _ => {
                for j in 1..k {
                    let h2 = 2.0 * xi * h1 - 2.0 * j as f64 * h0;
                    h0 = h1;
                    h1 = h2;
                }
                h1
            }
        };
        hk * (-xi * xi / 2.0).exp() / (PI.powf(0.25) * (2f64.powi(k as i32) * factorial(k)).sqrt())
    }

    proptest! {
        #[test]
        fn hermite_recursion_matches_polynomial_oracle(xi in -6.0f64..6.0, k in 0usize..40) {
            let h = hermite_functions(xi, 40);
            let o = hermite_oracle(xi, k);
            prop_assert!((h[k] - o).abs() <= 1e-9 * o.abs().max(1e-3), "k={} {} vs {}", k, h[k], o);
        }

        #[test]
        fn step1_parity_weights_are_half(alpha in 0.0f64..1.5, beta in 0.0f64..1.5) {
            let layout = SpaceLayout::protocol(default_truncation(alpha), default_truncation(beta)).unwrap();
            let psi = step1_joint_state(alpha, beta, &layout).unwrap();
            prop_assert!((psi.norm() - 1.0).abs() < 1e-10);
            let (_, pe) = parity_project(&psi, &layout, Sector::Even).unwrap();
            let (_, po) = parity_project(&psi, &layout, Sector::Odd).unwrap();
            prop_assert!((pe - 0.5).abs() < 1e-10 && (po - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn povm_completeness_for_coherent_state() {
        let n = 16;
        let v = coherent_state(C64::new(0.75, 0.0), n).unwrap();
        let h = 0.01;
        let mut total = 0.0;
        let steps = (12.0 / h) as usize;
        for k in 0..=steps {
            let xi = -6.0 + k as f64 * h;
            let e = quadrature_eigenvector(xi, 0.0, n).unwrap();
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            total += w * e.inner(&v).norm_sqr() * h;
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn step1_zero_amplitude_limit() {
        let layout = SpaceLayout::protocol(4, 4).unwrap();
        let psi = step1_joint_state(0.0, 0.0, &layout).unwrap();
        // |++⟩ ⊗ |0,0⟩
        for (i, z) in psi.0.iter().enumerate() {
            let idx = layout.unflatten(i);
            let expect = if idx[2] == 0 && idx[3] == 0 { 0.5 } else { 0.0 };
            assert!((z.re - expect).abs() < 1e-15 && z.im == 0.0);
        }
    }

    #[test]
    fn step1_equals_product_of_qubit_photon_states() {
        let (alpha, beta, n) = (0.75, 0.6, 12);
        let layout = SpaceLayout::protocol(n, n).unwrap();
        let psi = step1_joint_state(alpha, beta, &layout).unwrap();
        // (qA, a) ⊗ (qB, b), reordered to (qA, qB, a, b)
        let sa = qubit_photon_state(alpha, n).unwrap();
        let sb = qubit_photon_state(beta, n).unwrap();
        for qa in 0..2 {
            for qb in 0..2 {
                for m in 0..n {
                    for k in 0..n {
                        let i = ((qa * 2 + qb) * n + m) * n + k;
                        let prod = sa.0[qa * n + m] * sb.0[qb * n + k];
                        assert!((psi.0[i] - prod).norm() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn step1_qubit_marginal_coherences() {
        let (alpha, n) = (0.75, 16);
        let layout = SpaceLayout::protocol(n, n).unwrap();
        let psi = step1_joint_state(alpha, alpha, &layout).unwrap();
        let rho = DensityMatrix::from_pure(&psi, layout).unwrap();
        let q = rho.partial_trace(&[Factor::QubitA, Factor::QubitB]).unwrap();
        let overlap = (-2.0 * alpha * alpha).exp();
        // index = 2 qA + qB; |gg⟩=0, |ge⟩=1, |eg⟩=2, |ee⟩=3
        assert!((q.matrix()[(3, 3)].re - 0.25).abs() < 1e-12);
        assert!((q.matrix()[(3, 2)].re - 0.25 * overlap).abs() < 1e-10);
        assert!((q.matrix()[(3, 1)].re - 0.25 * overlap).abs() < 1e-10);
        assert!((q.matrix()[(3, 0)].re - 0.25 * overlap * overlap).abs() < 1e-10);
    }

    #[test]
    fn parity_projection_cases() {
        let layout = SpaceLayout::protocol(12, 12).unwrap();
        let psi = step1_joint_state(0.75, 0.75, &layout).unwrap();
        let (even, p) = parity_project(&psi, &layout, Sector::Even).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        // equals (|ee,α,β⟩ + |gg,−α,−β⟩)/√2
        let mut expect = psi.0.clone();
        for (i, z) in expect.iter_mut().enumerate() {
            let idx = layout.unflatten(i);
            *z = if idx[0] == idx[1] { *z * 2f64.sqrt() } else { ZERO };
        }
        for (a, b) in even.0.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-14);
        }
        let (ee, p) = parity_project(&even, &layout, Sector::Even).unwrap();
        assert!((p - 1.0).abs() < 1e-14 && ee == even);
        let mut only_ee = even.clone();
        for (i, z) in only_ee.0.iter_mut().enumerate() {
            let idx = layout.unflatten(i);
            if !(idx[0] == 1 && idx[1] == 1) {
                *z = ZERO;
            }
        }
        assert!(matches!(parity_project(&only_ee, &layout, Sector::Odd), Err(Error::ZeroProbability(_))));
    }
}
