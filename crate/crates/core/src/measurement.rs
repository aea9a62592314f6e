//! Step-III homodyne projections of modes a and b.
//!
//! The outcome density of an ideal joint quadrature measurement is
//! `P(ξ_a, ξ_b) = ⟨ξ_a, ξ_b| ρ |ξ_a, ξ_b⟩` with the (unnormalizable)
//! quadrature eigenvectors of [`hilbert::quadrature_eigenvector`]; the
//! conditional state of the remaining factors is that same matrix element,
//! taken as an operator, divided by `P`. A finite efficiency `η` is modelled
//! as a beam-splitter loss of transmissivity `η` on each mode followed by
//! ideal detection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{self, DensityMatrix, Factor, Quadrature, SpaceLayout, StateVector, QUADRATURE_WINDOW};
use crate::qlinalg::{CMatrix, C64, ZERO};

/// Densities below this are reported as zero-probability outcomes.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Step of the marginal/conditional grids used by [`sample_quadratures`].
pub const SAMPLING_STEP: f64 = 0.01;

/// One joint homodyne outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOutcome {
    pub xi_a: f64,
    pub xi_b: f64,
    pub quadrature: Quadrature,
    pub density: f64,
}

/// `Σ_{k,k'} v̄_k ρ[(…k…), (…k'…)] v_{k'}`: the matrix element of `rho` in
/// `factor` between `v` and itself, as an operator on the other factors.
/// Returns `None` for the layout when no factor remains (a 1×1 result).
pub fn contract_factor(rho: &CMatrix, layout: &SpaceLayout, factor: Factor, v: &[C64]) -> Result<(CMatrix, Option<SpaceLayout>)> {
    let p = layout.require(factor)?;
    let n = layout.factors()[p].1;
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!("vector of len {} for a factor of dim {n}", v.len())));
    }
    if !rho.is_square() || rho.rows() != layout.dim() {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix for layout dim {}", rho.rows(), rho.cols(), layout.dim())));
    }
    let s = layout.stride(factor)?;
    let d = layout.dim();
    let dr = d / n;
    let full = |r: usize, k: usize| (r / s) * n * s + k * s + r % s;
    // columns first: A[i, r'] = Σ_k' ρ[i, (r', k')] v_k'
    let mut a = CMatrix::zeros(d, dr);
    for i in 0..d {
        let row = rho.row(i);
        for rp in 0..dr {
            let base = full(rp, 0);
            let mut acc = ZERO;
            for (k, vk) in v.iter().enumerate() {
                acc += row[base + k * s] * vk;
            }
            a[(i, rp)] = acc;
        }
    }
    let mut out = CMatrix::zeros(dr, dr);
    for r in 0..dr {
        for (k, vk) in v.iter().enumerate() {
            let c = vk.conj();
            if c == ZERO {
                continue;
            }
            let arow = a.row(full(r, k));
            for rp in 0..dr {
                out[(r, rp)] += c * arow[rp];
            }
        }
    }
    let rest: Vec<Factor> = layout.factors().iter().map(|(f, _)| *f).filter(|f| *f != factor).collect();
    let rest_layout = if rest.is_empty() { None } else { Some(layout.restrict(&rest)?) };
    Ok((out, rest_layout))
}

fn eigenvector(layout: &SpaceLayout, factor: Factor, quadrature: Quadrature, xi: f64) -> Result<StateVector> {
    let n = layout
        .factor_dim(factor)
        .ok_or_else(|| Error::InvalidParameter(format!("layout has no {factor:?} factor")))?;
    hilbert::quadrature_eigenvector(xi, quadrature.phase(), n)
}

/// `⟨ξ_a, ξ_b| ρ |ξ_a, ξ_b⟩` as an operator on the remaining factors.
pub fn conditional_operator(rho: &DensityMatrix, quadrature: Quadrature, xi_a: f64, xi_b: f64) -> Result<(CMatrix, Option<SpaceLayout>)> {
    let layout = rho.layout();
    let va = eigenvector(layout, Factor::ModeA, quadrature, xi_a)?;
    let vb = eigenvector(layout, Factor::ModeB, quadrature, xi_b)?;
    let (sa, la) = contract_factor(rho.matrix(), layout, Factor::ModeA, &va.0)?;
    let la = la.ok_or_else(|| Error::InvalidParameter("layout lacks mode b".into()))?;
    contract_factor(&sa, &la, Factor::ModeB, &vb.0)
}

/// Ideal joint homodyne projection onto `(ξ_a, ξ_b)`. Returns the
/// normalized post-measurement state over the input layout (modes a and b
/// left in the normalized truncated eigenvectors) and the outcome density.
pub fn project_quadratures(rho: &DensityMatrix, quadrature: Quadrature, xi_a: f64, xi_b: f64) -> Result<(DensityMatrix, f64)> {
    let layout = rho.layout().clone();
    let (sigma, rest) = conditional_operator(rho, quadrature, xi_a, xi_b)?;
    let density = sigma.trace().re;
    if !(density > DENSITY_FLOOR) {
        return Err(Error::ZeroProbability("homodyne outcome"));
    }
    let va = eigenvector(&layout, Factor::ModeA, quadrature, xi_a)?.normalized()?;
    let vb = eigenvector(&layout, Factor::ModeB, quadrature, xi_b)?.normalized()?;
    let pa = layout.require(Factor::ModeA)?;
    let pb = layout.require(Factor::ModeB)?;
    let rest_pos: Vec<usize> = (0..layout.factors().len()).filter(|&p| p != pa && p != pb).collect();
    let rest_dims: Vec<usize> = rest_pos.iter().map(|&p| layout.factors()[p].1).collect();
    // per basis index: (rest index, amplitude of the projected mode state)
    let map: Vec<(usize, C64)> = (0..layout.dim())
        .map(|i| {
            let idx = layout.unflatten(i);
            let r = rest_pos.iter().zip(&rest_dims).fold(0, |acc, (&p, &d)| acc * d + idx[p]);
            (r, va.0[idx[pa]] * vb.0[idx[pb]])
        })
        .collect();
    debug_assert_eq!(rest.as_ref().map_or(1, |l| l.dim()), sigma.rows());
    let d = layout.dim();
    let mut post = CMatrix::zeros(d, d);
    for (i, &(r, u)) in map.iter().enumerate() {
        if u == ZERO {
            continue;
        }
        for (j, &(rp, w)) in map.iter().enumerate() {
            post[(i, j)] = sigma[(r, rp)] * u * w.conj() / density;
        }
    }
    post.hermitize();
    Ok((DensityMatrix::new(post, layout)?, density))
}

/// Reduced two-qubit state of a post-measurement state.
pub fn post_measurement_qubit_state(rho_post: &DensityMatrix) -> Result<DensityMatrix> {
    let mut q = rho_post.partial_trace(&[Factor::QubitA, Factor::QubitB])?;
    q.matrix_mut().hermitize();
    Ok(q)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Kraus operators `K_j = Σ_n √(C(n,j) η^{n−j} (1−η)^j) |n−j⟩⟨n|` of a pure
/// loss channel of transmissivity `η` on an `n`-level truncation.
pub fn loss_kraus(n: usize, eta: f64) -> Result<Vec<CMatrix>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("transmissivity {eta} outside [0, 1]")));
    }
    Ok((0..n)
        .map(|j| {
            let mut k = CMatrix::zeros(n, n);
            for m in j..n {
                let amp = binomial(m, j) * eta.powi((m - j) as i32) * (1.0 - eta).powi(j as i32);
                k[(m - j, m)] = C64::new(amp.sqrt(), 0.0);
            }
            k
        })
        .collect())
}

/// Apply the loss channel of transmissivity `eta` to one mode factor.
pub fn apply_loss(rho: &DensityMatrix, factor: Factor, eta: f64) -> Result<DensityMatrix> {
    if factor.is_qubit() {
        return Err(Error::InvalidParameter("loss channel on a qubit factor".into()));
    }
    if eta == 1.0 {
        return Ok(rho.clone());
    }
    let layout = rho.layout();
    let n = layout
        .factor_dim(factor)
        .ok_or_else(|| Error::InvalidParameter(format!("layout has no {factor:?} factor")))?;
    let s = layout.stride(factor)?;
    let d = layout.dim();
    let kraus = loss_kraus(n, eta)?;
    let mut out = CMatrix::zeros(d, d);
    // each K_j maps |m⟩ → |m − j⟩ with weight w_j(m): shift both indices
    for (j, k) in kraus.iter().enumerate() {
        let w: Vec<f64> = (0..n).map(|m| if m >= j { k[(m - j, m)].re } else { 0.0 }).collect();
        for i in 0..d {
            let mi = (i / s) % n;
            if mi < j {
                continue;
            }
            let wi = w[mi];
            let ti = i - j * s;
            let src = rho.matrix().row(i);
            for (jj, z) in src.iter().enumerate() {
                let mj = (jj / s) % n;
                if mj < j {
                    continue;
                }
                out[(ti, jj - j * s)] += z * (wi * w[mj]);
            }
        }
    }
    DensityMatrix::new(out, layout.clone())
}

/// Apply loss `eta` to both modes a and b.
pub fn apply_mode_loss(rho: &DensityMatrix, eta: f64) -> Result<DensityMatrix> {
    apply_loss(&apply_loss(rho, Factor::ModeA, eta)?, Factor::ModeB, eta)
}

/// Finite-efficiency homodyne projection: loss `eta` on both modes, then
/// [`project_quadratures`]. `eta = 1` is the ideal measurement.
pub fn lossy_homodyne(rho: &DensityMatrix, quadrature: Quadrature, xi_a: f64, xi_b: f64, eta: f64) -> Result<(DensityMatrix, f64)> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidParameter(format!("efficiency {eta} outside (0, 1]")));
    }
    project_quadratures(&apply_mode_loss(rho, eta)?, quadrature, xi_a, xi_b)
}

/// Uniform axis `[lo, hi]` with spacing `step` (endpoints included when
/// they fall on the lattice).
pub fn uniform_axis(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi > lo) {
        return Err(Error::InvalidParameter(format!("axis [{lo}, {hi}] with step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

/// Unnormalized conditional qubit operators `⟨ξ_a, ξ_b|ρ|ξ_a, ξ_b⟩` (with
/// every non-qubit factor other than a, b traced out) for every cell of the
/// outer product of the two axes, in row-major order (`ξ_a` slow). The
/// trace of each is the outcome density.
pub fn qubit_operator_grid(rho: &DensityMatrix, quadrature: Quadrature, axis_a: &[f64], axis_b: &[f64]) -> Result<Vec<CMatrix>> {
    let rho = if rho.layout().position(Factor::ModeC).is_some() {
        rho.partial_trace(&[Factor::QubitA, Factor::QubitB, Factor::ModeA, Factor::ModeB])?
    } else {
        rho.clone()
    };
    let layout = rho.layout();
    if !layout.has_qubits() {
        return Err(Error::InvalidParameter("grid evaluation needs the qubits".into()));
    }
    let vb: Vec<StateVector> = axis_b
        .iter()
        .map(|&x| eigenvector(layout, Factor::ModeB, quadrature, x))
        .collect::<Result<_>>()?;
    let per_a = |&xa: &f64| -> Result<Vec<CMatrix>> {
        let va = eigenvector(layout, Factor::ModeA, quadrature, xa)?;
        let (sa, la) = contract_factor(rho.matrix(), layout, Factor::ModeA, &va.0)?;
        let la = la.expect("qubits remain");
        vb.iter()
            .map(|v| contract_factor(&sa, &la, Factor::ModeB, &v.0).map(|(m, _)| m))
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<CMatrix>> = {
        use rayon::prelude::*;
        axis_a.par_iter().map(per_a).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<CMatrix>> = axis_a.iter().map(per_a).collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Draw `ξ` from a density tabulated on a uniform axis by inverse CDF on the
/// trapezoidal cumulative, interpolating linearly inside the chosen cell.
fn inverse_cdf<R: Rng + ?Sized>(axis: &[f64], density: &[f64], rng: &mut R) -> Result<f64> {
    let mut cdf = Vec::with_capacity(axis.len());
    cdf.push(0.0);
    for i in 1..axis.len() {
        let prev = cdf[i - 1];
        cdf.push(prev + 0.5 * (density[i].max(0.0) + density[i - 1].max(0.0)) * (axis[i] - axis[i - 1]));
    }
    let total = *cdf.last().unwrap_or(&0.0);
    if !(total > DENSITY_FLOOR) {
        return Err(Error::ZeroProbability("homodyne marginal"));
    }
    let u = rng.random::<f64>() * total;
    let i = cdf.partition_point(|&c| c < u).clamp(1, axis.len() - 1);
    let frac = if cdf[i] > cdf[i - 1] { (u - cdf[i - 1]) / (cdf[i] - cdf[i - 1]) } else { 0.5 };
    Ok(axis[i - 1] + frac * (axis[i] - axis[i - 1]))
}

fn diagonal_density(sigma: &CMatrix, v: &[C64]) -> f64 {
    let mut acc = ZERO;
    for (i, vi) in v.iter().enumerate() {
        let row = sigma.row(i);
        let mut inner = ZERO;
        for (j, vj) in v.iter().enumerate() {
            inner += row[j] * vj;
        }
        acc += vi.conj() * inner;
    }
    acc.re
}

/// Sample a joint outcome from the exact outcome density of `rho`:
/// `ξ_a` from its marginal, then `ξ_b` from the conditional density given
/// `ξ_a`, each by inverse CDF on a grid of spacing `step` over the window.
pub fn sample_quadratures<R: Rng + ?Sized>(rho: &DensityMatrix, quadrature: Quadrature, step: f64, rng: &mut R) -> Result<QuadratureOutcome> {
    let layout = rho.layout();
    let axis = uniform_axis(-QUADRATURE_WINDOW, QUADRATURE_WINDOW, step)?;
    let rho_a = rho.partial_trace(&[Factor::ModeA])?;
    let marginal_a: Vec<f64> = axis
        .iter()
        .map(|&x| eigenvector(layout, Factor::ModeA, quadrature, x).map(|v| diagonal_density(rho_a.matrix(), &v.0)))
        .collect::<Result<_>>()?;
    let xi_a = inverse_cdf(&axis, &marginal_a, rng)?;
    let va = eigenvector(layout, Factor::ModeA, quadrature, xi_a)?;
    let (sa, la) = contract_factor(rho.matrix(), layout, Factor::ModeA, &va.0)?;
    let la = la.ok_or_else(|| Error::InvalidParameter("layout lacks mode b".into()))?;
    let pb = la.require(Factor::ModeB)?;
    let rho_b = crate::qlinalg::partial_trace(&sa, &la.dims(), &[pb])?;
    let conditional_b: Vec<f64> = axis
        .iter()
        .map(|&x| eigenvector(&la, Factor::ModeB, quadrature, x).map(|v| diagonal_density(&rho_b, &v.0)))
        .collect::<Result<_>>()?;
    let xi_b = inverse_cdf(&axis, &conditional_b, rng)?;
    let vb = eigenvector(&la, Factor::ModeB, quadrature, xi_b)?;
    let density = diagonal_density(&rho_b, &vb.0);
    Ok(QuadratureOutcome { xi_a, xi_b, quadrature, density })
}
