//! Two-qubit entanglement and fidelity diagnostics, and outcome grids of
//! them over the step-III homodyne outcome plane.

use serde::{Deserialize, Serialize};

use crate::dynamics::ProtocolParams;
use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, Quadrature, Sector};
use crate::measurement::DENSITY_FLOOR;
use crate::qlinalg::{self, CMatrix, C64, ZERO};

/// Two-qubit basis indices (`q = 2 q_A + q_B`, `|g⟩ = 0`, `|e⟩ = 1`).
pub const GG: usize = 0;
pub const GE: usize = 1;
pub const EG: usize = 2;
pub const EE: usize = 3;

/// Coherence magnitude below which the Bell phase is undefined.
pub const PHASE_COHERENCE_FLOOR: f64 = 1e-6;
/// Minimum sector weight for a meaningful Bell phase.
pub const PHASE_SECTOR_WEIGHT: f64 = 0.9;
/// Negative eigenvalues of `ρ` above this (relative) are clamped to zero in
/// the concurrence; below it the input is rejected.
pub const CONCURRENCE_CLAMP: f64 = -1e-10;

/// Bell-state targets: `Φ^φ = (|ee⟩ + e^{iφ}|gg⟩)/√2`,
/// `Ψ^φ = (|eg⟩ + e^{iφ}|ge⟩)/√2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BellTarget {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
    Phi(f64),
    Psi(f64),
}

impl BellTarget {
    /// `|Φ⁺⟩` for the even sector and `|Ψ⁺⟩` for the odd one.
    pub fn plus(sector: Sector) -> Self {
        match sector {
            Sector::Even => BellTarget::PhiPlus,
            Sector::Odd => BellTarget::PsiPlus,
        }
    }

    /// The phase-`φ` Bell state of a parity sector.
    pub fn with_phase(sector: Sector, phi: f64) -> Self {
        match sector {
            Sector::Even => BellTarget::Phi(phi),
            Sector::Odd => BellTarget::Psi(phi),
        }
    }

    pub fn vector(self) -> [C64; 4] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (first, second, phi) = match self {
            BellTarget::PhiPlus => (EE, GG, 0.0),
            BellTarget::PhiMinus => (EE, GG, std::f64::consts::PI),
            BellTarget::PsiPlus => (EG, GE, 0.0),
            BellTarget::PsiMinus => (EG, GE, std::f64::consts::PI),
            BellTarget::Phi(phi) => (EE, GG, phi),
            BellTarget::Psi(phi) => (EG, GE, phi),
        };
        let mut v = [ZERO; 4];
        v[first] = C64::new(s, 0.0);
        v[second] = C64::from_polar(s, phi);
        v
    }
}

fn require_two_qubit(rho: &CMatrix) -> Result<()> {
    if rho.rows() != 4 || !rho.is_square() {
        return Err(Error::DimensionMismatch(format!("{}x{} is not a two-qubit state", rho.rows(), rho.cols())));
    }
    Ok(())
}

/// `⟨target|ρ_q|target⟩`.
pub fn bell_overlap(rho_q: &DensityMatrix, target: BellTarget) -> Result<f64> {
    bell_overlap_matrix(rho_q.matrix(), target)
}

fn bell_overlap_matrix(rho: &CMatrix, target: BellTarget) -> Result<f64> {
    require_two_qubit(rho)?;
    let v = target.vector();
    let mut acc = ZERO;
    for i in 0..4 {
        for j in 0..4 {
            acc += v[i].conj() * rho[(i, j)] * v[j];
        }
    }
    Ok(acc.re)
}

/// Wootters concurrence `max(0, λ₁ − λ₂ − λ₃ − λ₄)`, with `λᵢ` the
/// decreasing square roots of the spectrum of `ρ ρ̃`,
/// `ρ̃ = (σ_y ⊗ σ_y) ρ* (σ_y ⊗ σ_y)`.
///
/// With `ρ = W W†` (`W` the eigenvectors scaled by `√pᵢ`), `ρ ρ̃` shares its
/// nonzero spectrum with `τ τ†`, `τ = Wᵀ (σ_y ⊗ σ_y) W`, so the `λᵢ` are the
/// singular values of `τ`. Unlike square roots of near-zero eigenvalues of
/// `ρ ρ̃` these are well conditioned; eigenvalues of `ρ` at the rounding
/// floor are dropped from `W`.
pub fn concurrence(rho_q: &DensityMatrix) -> Result<f64> {
    concurrence_matrix(rho_q.matrix())
}

/// Relative size below which eigenvalues of `ρ` are treated as rounding noise.
const CONCURRENCE_RANK_TOL: f64 = 1e-13;

fn concurrence_matrix(rho: &CMatrix) -> Result<f64> {
    require_two_qubit(rho)?;
    let mut rho = rho.clone();
    rho.hermitize();
    let eig = qlinalg::eig_hermitian(&rho)?;
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut columns = Vec::new();
    for (k, &p) in eig.eigenvalues.iter().enumerate() {
        if p < CONCURRENCE_CLAMP * top.max(1.0) {
            return Err(Error::InvalidState(format!("negative eigenvalue {p:.3e} in concurrence")));
        }
        if p > CONCURRENCE_RANK_TOL * top {
            let s = p.sqrt();
            columns.push((0..4).map(|i| eig.eigenvectors[(i, k)] * s).collect::<Vec<C64>>());
        }
    }
    if columns.is_empty() {
        return Ok(0.0);
    }
    // σ_y ⊗ σ_y = antidiagonal (−1, 1, 1, −1)
    let yy = [(3, -1.0), (2, 1.0), (1, 1.0), (0, -1.0)];
    let r = columns.len();
    let tau = nalgebra::DMatrix::<C64>::from_fn(r, r, |i, j| {
        (0..4).map(|k| columns[i][k] * columns[j][yy[k].0] * yy[k].1).sum::<C64>()
    });
    let mut lambdas: Vec<f64> = tau.singular_values().iter().copied().collect();
    lambdas.resize(4, 0.0);
    lambdas.sort_by(|a, b| b.total_cmp(a));
    Ok((lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).clamp(0.0, 1.0))
}

/// Relative phase `φ` of the Bell state `Φ^φ` (even) or `Ψ^φ` (odd) closest
/// to `ρ_q`: `arg⟨gg|ρ_q|ee⟩` or `arg⟨ge|ρ_q|eg⟩`, in `(−π, π]`.
pub fn extract_bell_phase(rho_q: &DensityMatrix, sector: Sector) -> Result<f64> {
    extract_bell_phase_matrix(rho_q.matrix(), sector)
}

fn extract_bell_phase_matrix(rho: &CMatrix, sector: Sector) -> Result<f64> {
    require_two_qubit(rho)?;
    let (first, second) = match sector {
        Sector::Even => (EE, GG),
        Sector::Odd => (EG, GE),
    };
    let weight = rho[(first, first)].re + rho[(second, second)].re;
    let trace = rho.trace().re;
    if weight < PHASE_SECTOR_WEIGHT * trace {
        return Err(Error::InvalidState(format!("{sector} sector weight {:.3} below {PHASE_SECTOR_WEIGHT}", weight / trace)));
    }
    let coherence = rho[(second, first)];
    if coherence.norm() < PHASE_COHERENCE_FLOOR * trace {
        return Err(Error::UndefinedPhase { coherence: coherence.norm() });
    }
    let phi = coherence.arg();
    // arg returns [−π, π]; map −π to π
    Ok(if phi <= -std::f64::consts::PI { std::f64::consts::PI } else { phi })
}

/// Gradient magnitude of a field sampled on a uniform `rows × cols` grid
/// (row index along `ξ_a`) with spacing `h`: central differences inside,
/// second-order one-sided differences on the edges.
pub fn gradient_magnitude(field: &[f64], rows: usize, cols: usize, h: f64) -> Result<Vec<f64>> {
    if rows < 3 || cols < 3 {
        return Err(Error::GridTooSmall(rows.min(cols)));
    }
    if field.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!("{} values for a {rows}x{cols} grid", field.len())));
    }
    let f = |i: usize, j: usize| field[i * cols + j];
    let diff = |get: &dyn Fn(usize) -> f64, k: usize, n: usize| -> f64 {
        if k == 0 {
            (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h)
        } else if k == n - 1 {
            (3.0 * get(n - 1) - 4.0 * get(n - 2) + get(n - 3)) / (2.0 * h)
        } else {
            (get(k + 1) - get(k - 1)) / (2.0 * h)
        }
    };
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let da = diff(&|k| f(k, j), i, rows);
            let db = diff(&|k| f(i, k), j, cols);
            out[i * cols + j] = da.hypot(db);
        }
    }
    Ok(out)
}

/// Diagnostics of one outcome plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeGrid {
    pub quadrature: Quadrature,
    pub sector: Sector,
    pub axis_a: Vec<f64>,
    pub axis_b: Vec<f64>,
    /// Outcome density `P(ξ_a, ξ_b)`, row-major with `ξ_a` slow.
    pub density: Vec<f64>,
    /// Overlap with `|Φ⁺⟩` (even) or `|Ψ⁺⟩` (odd).
    pub overlap: Vec<f64>,
    pub concurrence: Vec<f64>,
    /// `|∇F|`.
    pub gradient: Vec<f64>,
    /// Bell phase; NaN where undefined.
    pub phase: Vec<f64>,
    pub params: ProtocolParams,
}

impl OutcomeGrid {
    /// Fill a grid from the unnormalized conditional qubit operators
    /// `⟨ξ_a, ξ_b|ρ|ξ_a, ξ_b⟩` of every cell (row-major, `ξ_a` slow).
    /// Cells with density below the floor get `F = C = 0`.
    pub fn from_qubit_operators(
        quadrature: Quadrature,
        sector: Sector,
        axis_a: Vec<f64>,
        axis_b: Vec<f64>,
        operators: &[CMatrix],
        params: ProtocolParams,
    ) -> Result<Self> {
        let (rows, cols) = (axis_a.len(), axis_b.len());
        if operators.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!("{} cells for a {rows}x{cols} grid", operators.len())));
        }
        let h = uniform_step(&axis_a)?;
        let hb = uniform_step(&axis_b)?;
        if (h - hb).abs() > 1e-9 * h {
            return Err(Error::InvalidParameter(format!("unequal axis steps {h} and {hb}")));
        }
        let target = BellTarget::plus(sector);
        let cell = |sigma: &CMatrix| -> Result<(f64, f64, f64, f64)> {
            let p = sigma.trace().re;
            if !(p > DENSITY_FLOOR) {
                return Ok((p.max(0.0), 0.0, 0.0, f64::NAN));
            }
            let rho = sigma.scale_real(1.0 / p);
            let f = bell_overlap_matrix(&rho, target)?.clamp(0.0, 1.0);
            let c = concurrence_matrix(&rho)?;
            let phi = extract_bell_phase_matrix(&rho, sector).unwrap_or(f64::NAN);
            Ok((p, f, c, phi))
        };
        #[cfg(feature = "parallel")]
        let cells: Vec<(f64, f64, f64, f64)> = {
            use rayon::prelude::*;
            operators.par_iter().map(cell).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let cells: Vec<(f64, f64, f64, f64)> = operators.iter().map(cell).collect::<Result<_>>()?;
        let overlap: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let gradient = gradient_magnitude(&overlap, rows, cols, h)?;
        Ok(Self {
            quadrature,
            sector,
            density: cells.iter().map(|c| c.0).collect(),
            concurrence: cells.iter().map(|c| c.2).collect(),
            phase: cells.iter().map(|c| c.3).collect(),
            overlap,
            gradient,
            axis_a,
            axis_b,
            params,
        })
    }

    pub fn rows(&self) -> usize {
        self.axis_a.len()
    }

    pub fn cols(&self) -> usize {
        self.axis_b.len()
    }

    pub fn step(&self) -> f64 {
        self.axis_a[1] - self.axis_a[0]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.cols() + j
    }

    /// `Σ P h²`.
    pub fn total_probability(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.step().powi(2)
    }

    /// Probability of the quadrant `sign_a·ξ_a > 0, sign_b·ξ_b > 0`. Cells
    /// centered on an axis straddle two quadrants and count half per axis
    /// they lie on, so the four quadrants sum to [`Self::total_probability`].
    pub fn quadrant_mass(&self, sign_a: f64, sign_b: f64) -> f64 {
        let h = self.step();
        let share = |x: f64, sign: f64| {
            if x.abs() < 0.5 * h {
                0.5
            } else if x * sign > 0.0 {
                1.0
            } else {
                0.0
            }
        };
        let mut mass = 0.0;
        for (i, &xa) in self.axis_a.iter().enumerate() {
            let wa = share(xa, sign_a);
            if wa == 0.0 {
                continue;
            }
            for (j, &xb) in self.axis_b.iter().enumerate() {
                mass += wa * share(xb, sign_b) * self.density[self.index(i, j)];
            }
        }
        mass * h * h
    }

    /// Recompute `|∇F|` from the overlap field.
    pub fn overlap_gradient(&self) -> Result<Vec<f64>> {
        gradient_magnitude(&self.overlap, self.rows(), self.cols(), self.step())
    }

    /// Probability-weighted mean of a per-cell quantity over the cells
    /// selected by `keep(ξ_a, ξ_b)`; `None` if they carry no probability.
    pub fn weighted_mean(&self, values: &[f64], keep: impl Fn(f64, f64) -> bool) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &xa) in self.axis_a.iter().enumerate() {
            for (j, &xb) in self.axis_b.iter().enumerate() {
                let k = self.index(i, j);
                if keep(xa, xb) && values[k].is_finite() {
                    num += self.density[k] * values[k];
                    den += self.density[k];
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    /// Probability-weighted centroid `(ξ̄_a, ξ̄_b)` of the selected cells.
    pub fn centroid(&self, keep: impl Fn(f64, f64) -> bool + Copy) -> Option<(f64, f64)> {
        let mut xa_vals = vec![0.0; self.density.len()];
        let mut xb_vals = vec![0.0; self.density.len()];
        for (i, &xa) in self.axis_a.iter().enumerate() {
            for (j, &xb) in self.axis_b.iter().enumerate() {
                xa_vals[self.index(i, j)] = xa;
                xb_vals[self.index(i, j)] = xb;
            }
        }
        Some((self.weighted_mean(&xa_vals, keep)?, self.weighted_mean(&xb_vals, keep)?))
    }

    /// Index of the cell nearest to `(ξ_a, ξ_b)`.
    pub fn nearest(&self, xi_a: f64, xi_b: f64) -> usize {
        let near = |axis: &[f64], x: f64| {
            axis.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        self.index(near(&self.axis_a, xi_a), near(&self.axis_b, xi_b))
    }
}

fn uniform_step(axis: &[f64]) -> Result<f64> {
    if axis.len() < 3 {
        return Err(Error::GridTooSmall(axis.len()));
    }
    let h = axis[1] - axis[0];
    if !(h > 0.0) || axis.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(Error::InvalidParameter("grid axis is not uniform and increasing".into()));
    }
    Ok(h)
}
