//! Dense complex linear algebra.
//!
//! Everything in the simulator is expressed through [`CMatrix`], a row-major
//! dense matrix of `Complex64`. Operators in truncated Fock spaces are very
//! sparse (ladder operators carry one nonzero per column), so the
//! multiplication kernel skips zero entries on both operands while keeping the
//! storage dense.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Largest number of entries any single matrix may hold.
pub const MAX_ENTRIES: usize = 1 << 22;

fn check_size(rows: usize, cols: usize) -> Result<()> {
    match rows.checked_mul(cols) {
        Some(n) if n <= MAX_ENTRIES => Ok(()),
        _ => Err(Error::DimensionOverflow { rows, cols, max: MAX_ENTRIES }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    /// Zero matrix. Panics past [`MAX_ENTRIES`]; use [`CMatrix::try_zeros`]
    /// where the size comes from user input.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::try_zeros(rows, cols).expect("matrix size")
    }

    pub fn try_zeros(rows: usize, cols: usize) -> Result<Self> {
        check_size(rows, cols)?;
        Ok(Self { rows, cols, data: vec![ZERO; rows * cols] })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        check_size(rows, cols)?;
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Self::from_fn(r, c, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let d: Vec<C64> = diag.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_diag(&d)
    }

    /// `|u><v|`
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<C64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> C64 {
        self.diag().into_iter().sum()
    }

    pub fn dagger(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        m
    }

    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_mut(&mut self, s: f64) {
        for z in &mut self.data {
            *z *= s;
        }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: C64, other: &CMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "axpy shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `‖A − A†‖_F`
    pub fn hermiticity_error(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self.data[i * n + j] - self.data[j * n + i].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// `(A + A†)/2`, in place.
    pub fn hermitize(&mut self) {
        let n = self.rows;
        for i in 0..n {
            let d = self.data[i * n + i];
            self.data[i * n + i] = C64::new(d.re, 0.0);
            for j in i + 1..n {
                let avg = (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5;
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg.conj();
            }
        }
    }

    /// Nonzero pattern of each row as `(col, value)` pairs.
    fn row_nonzeros(&self) -> Vec<Vec<(usize, C64)>> {
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, z)| **z != ZERO)
                    .map(|(j, z)| (j, *z))
                    .collect()
            })
            .collect()
    }

    /// Matrix product. Zero entries of either operand are skipped, so the
    /// cost of a sparse-times-dense product is proportional to the number
    /// of nonzeros rather than `n³`.
    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = CMatrix::zeros(self.rows, other.cols);
        self.matmul_into(other, &mut out);
        out
    }

    /// `out = self · other`, reusing `out`'s allocation.
    pub fn matmul_into(&self, other: &CMatrix, out: &mut CMatrix) {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        assert_eq!((out.rows, out.cols), (self.rows, other.cols), "matmul output shape");
        out.data.fill(ZERO);
        let nnz = other.data.iter().filter(|z| **z != ZERO).count();
        let dense_rhs = nnz * 4 > other.data.len();
        let pattern = if dense_rhs { Vec::new() } else { other.row_nonzeros() };
        let oc = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * oc..(i + 1) * oc];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                if dense_rhs {
                    let b_row = &other.data[k * oc..(k + 1) * oc];
                    for (o, b) in out_row.iter_mut().zip(b_row) {
                        *o += a * b;
                    }
                } else {
                    for &(j, b) in &pattern[k] {
                        out_row[j] += a * b;
                    }
                }
            }
        }
    }

    /// Matrix–vector product.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "apply dimension");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).filter(|(a, _)| **a != ZERO).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `[A, B] = AB − BA`
    pub fn commutator(&self, other: &CMatrix) -> CMatrix {
        &self.matmul(other) - &other.matmul(self)
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<C64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        self.axpy(ONE, rhs);
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        self.axpy(-ONE, rhs);
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

impl Mul<C64> for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: C64) -> CMatrix {
        self.scale(rhs)
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale_real(-1.0)
    }
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let rows = a.rows.checked_mul(b.rows);
    let cols = a.cols.checked_mul(b.cols);
    let (rows, cols) = match (rows, cols) {
        (Some(r), Some(c)) => (r, c),
        _ => return Err(Error::DimensionOverflow { rows: usize::MAX, cols: usize::MAX, max: MAX_ENTRIES }),
    };
    let mut out = CMatrix::try_zeros(rows, cols)?;
    for i in 0..a.rows {
        for j in 0..a.cols {
            let s = a.data[i * a.cols + j];
            if s == ZERO {
                continue;
            }
            for k in 0..b.rows {
                let dst = (i * b.rows + k) * cols + j * b.cols;
                let src = &b.data[k * b.cols..(k + 1) * b.cols];
                for (o, x) in out.data[dst..dst + b.cols].iter_mut().zip(src) {
                    *o = s * x;
                }
            }
        }
    }
    Ok(out)
}

/// Kronecker product of a list of factors, left to right.
pub fn kron_all(factors: &[&CMatrix]) -> Result<CMatrix> {
    let mut acc = CMatrix::identity(1);
    for f in factors {
        acc = kron(&acc, f)?;
    }
    Ok(acc)
}

/// Kronecker product of vectors.
pub fn kron_vec(u: &[C64], v: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(u.len() * v.len());
    for a in u {
        for b in v {
            out.push(a * b);
        }
    }
    out
}

/// Trace over every tensor factor not listed in `keep`. `dims` gives the
/// factor dimensions in the order used to build `rho`.
pub fn partial_trace(rho: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix> {
    let total: usize = dims.iter().product();
    if !rho.is_square() || rho.rows != total {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{} but factor dims {:?} multiply to {}",
            rho.rows, rho.cols, dims, total
        )));
    }
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if let Some(&bad) = keep_sorted.iter().find(|&&k| k >= dims.len()) {
        return Err(Error::FactorOutOfRange { index: bad, factors: dims.len() });
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|k| !keep_sorted.contains(k)).collect();
    let kept_dims: Vec<usize> = keep_sorted.iter().map(|&k| dims[k]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let kept_dim: usize = kept_dims.iter().product();
    let traced_dim: usize = traced_dims.iter().product();

    // strides of each factor in the full index
    let mut strides = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let offset = |factor_list: &[usize], factor_dims: &[usize], mut idx: usize| -> usize {
        let mut off = 0;
        for pos in (0..factor_list.len()).rev() {
            let d = factor_dims[pos];
            off += (idx % d) * strides[factor_list[pos]];
            idx /= d;
        }
        off
    };
    let kept_off: Vec<usize> = (0..kept_dim).map(|i| offset(&keep_sorted, &kept_dims, i)).collect();
    let traced_off: Vec<usize> = (0..traced_dim).map(|i| offset(&traced, &traced_dims, i)).collect();

    let mut out = CMatrix::zeros(kept_dim, kept_dim);
    for (i, &ki) in kept_off.iter().enumerate() {
        for (j, &kj) in kept_off.iter().enumerate() {
            let mut acc = ZERO;
            for &t in &traced_off {
                acc += rho.data[(ki + t) * total + kj + t];
            }
            out.data[i * kept_dim + j] = acc;
        }
    }
    Ok(out)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub eigenvalues: Vec<f64>,
    /// Columns are the eigenvectors, in the order of `eigenvalues`.
    pub eigenvectors: CMatrix,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> CMatrix {
        let v = &self.eigenvectors;
        let lam = CMatrix::from_real_diag(&self.eigenvalues);
        v.matmul(&lam).matmul(&v.dagger())
    }
}

pub fn eig_hermitian(a: &CMatrix) -> Result<HermitianEigen> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!("eig of a {}x{} matrix", a.rows, a.cols)));
    }
    let norm = a.frobenius_norm();
    let herr = a.hermiticity_error();
    if herr > 1e-10 * norm.max(f64::MIN_POSITIVE) && herr > 1e-300 {
        return Err(Error::NotHermitian { deviation: herr / norm });
    }
    let mut h = a.clone();
    h.hermitize();
    let eig = nalgebra::SymmetricEigen::new(h.to_nalgebra());
    let n = a.rows;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEigen { eigenvalues, eigenvectors })
}

/// Solve `A X = B` by LU with partial pivoting.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let n = a.rows;
    if !a.is_square() || b.rows != n {
        return Err(Error::DimensionMismatch("solve".into()));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let m = b.cols;
    for col in 0..n {
        let (piv, best) = (col..n)
            .map(|r| (r, lu.data[r * n + col].norm()))
            .fold((col, -1.0), |acc, (r, v)| if v > acc.1 { (r, v) } else { acc });
        if best <= 0.0 || !best.is_finite() {
            return Err(Error::Singular);
        }
        if piv != col {
            for j in 0..n {
                lu.data.swap(col * n + j, piv * n + j);
            }
            for j in 0..m {
                x.data.swap(col * m + j, piv * m + j);
            }
        }
        let p = lu.data[col * n + col];
        let (upper, lower) = lu.data.split_at_mut((col + 1) * n);
        let pivot_row = &upper[col * n..(col + 1) * n];
        let (xu, xl) = x.data.split_at_mut((col + 1) * m);
        let x_pivot = &xu[col * m..(col + 1) * m];
        for (r, row) in lower.chunks_mut(n).enumerate() {
            let f = row[col] / p;
            if f == ZERO {
                continue;
            }
            for j in col..n {
                if pivot_row[j] != ZERO {
                    row[j] -= f * pivot_row[j];
                }
            }
            let xr = &mut xl[r * m..(r + 1) * m];
            for j in 0..m {
                if x_pivot[j] != ZERO {
                    xr[j] -= f * x_pivot[j];
                }
            }
        }
    }
    // back substitution
    for col in (0..n).rev() {
        let p = lu.data[col * n + col];
        for j in 0..m {
            x.data[col * m + j] /= p;
        }
        for r in 0..col {
            let f = lu.data[r * n + col];
            if f == ZERO {
                continue;
            }
            for j in 0..m {
                let v = x.data[col * m + j];
                x.data[r * m + j] -= f * v;
            }
        }
    }
    Ok(x)
}

/// `1`-norm (maximum absolute column sum).
pub fn norm1(a: &CMatrix) -> f64 {
    (0..a.cols).map(|j| (0..a.rows).map(|i| a[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by degree-13 Padé approximation with scaling and
/// squaring (Higham 2005).
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!("expm of a {}x{} matrix", a.rows, a.cols)));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("expm input"));
    }
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.rows;
    let norm = norm1(a);
    if norm > 1e12 {
        return Err(Error::Overflow("expm argument norm"));
    }
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a.scale_real(0.5f64.powi(s));
    let id = CMatrix::identity(n);
    let a2 = a.matmul(&a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);
    let r = |v: f64| C64::new(v, 0.0);

    let mut u_inner = a6.scale(r(B[13]));
    u_inner.axpy(r(B[11]), &a4);
    u_inner.axpy(r(B[9]), &a2);
    let mut u = a6.matmul(&u_inner);
    u.axpy(r(B[7]), &a6);
    u.axpy(r(B[5]), &a4);
    u.axpy(r(B[3]), &a2);
    u.axpy(r(B[1]), &id);
    let u = a.matmul(&u);

    let mut v_inner = a6.scale(r(B[12]));
    v_inner.axpy(r(B[10]), &a4);
    v_inner.axpy(r(B[8]), &a2);
    let mut v = a6.matmul(&v_inner);
    v.axpy(r(B[6]), &a6);
    v.axpy(r(B[4]), &a4);
    v.axpy(r(B[2]), &a2);
    v.axpy(r(B[0]), &id);

    let p = &v + &u;
    let q = &v - &u;
    let mut e = solve(&q, &p)?;
    for _ in 0..s {
        e = e.matmul(&e);
    }
    if !e.is_finite() {
        return Err(Error::Overflow("expm result"));
    }
    Ok(e)
}

/// Row-compressed view of a dense operator, used to apply ladder-type
/// operators (a handful of nonzeros per row) in `O(nnz)` instead of `O(n²)`.
/// Storage of record stays [`CMatrix`]; this is a derived view.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    rows: usize,
    cols: usize,
    row_start: Vec<usize>,
    entries: Vec<(usize, C64)>,
}

impl SparseRows {
    pub fn from_dense(m: &CMatrix) -> Self {
        let mut row_start = Vec::with_capacity(m.rows() + 1);
        let mut entries = Vec::new();
        row_start.push(0);
        for i in 0..m.rows() {
            for (j, z) in m.row(i).iter().enumerate() {
                if *z != ZERO {
                    entries.push((j, *z));
                }
            }
            row_start.push(entries.len());
        }
        Self { rows: m.rows(), cols: m.cols(), row_start, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, C64)] {
        &self.entries[self.row_start[i]..self.row_start[i + 1]]
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for &(j, z) in self.row(i) {
                m[(i, j)] = z;
            }
        }
        m
    }

    pub fn dagger(&self) -> Self {
        Self::from_dense(&self.to_dense().dagger())
    }

    /// `y = S x`
    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!((x.len(), y.len()), (self.cols, self.rows), "sparse apply dimension");
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).iter().map(|&(j, z)| z * x[j]).sum();
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.rows];
        self.apply_into(x, &mut y);
        y
    }

    /// `out = S · B`
    pub fn mul_dense_into(&self, b: &CMatrix, out: &mut CMatrix) {
        assert_eq!(self.cols, b.rows(), "sparse·dense inner dimension");
        assert_eq!((out.rows(), out.cols()), (self.rows, b.cols()), "sparse·dense output shape");
        let n = b.cols();
        let od = out.as_mut_slice();
        od.fill(ZERO);
        for i in 0..self.rows {
            let orow = &mut od[i * n..(i + 1) * n];
            for &(k, z) in self.row(i) {
                for (o, v) in orow.iter_mut().zip(b.row(k)) {
                    *o += z * v;
                }
            }
        }
    }

    pub fn mul_dense(&self, b: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.rows, b.cols());
        self.mul_dense_into(b, &mut out);
        out
    }

    /// `out = B · S†`
    pub fn dense_mul_adjoint_into(&self, b: &CMatrix, out: &mut CMatrix) {
        assert_eq!(b.cols(), self.cols, "dense·sparse† inner dimension");
        assert_eq!((out.rows(), out.cols()), (b.rows(), self.rows), "dense·sparse† output shape");
        let n = self.rows;
        let od = out.as_mut_slice();
        od.fill(ZERO);
        for r in 0..b.rows() {
            let brow = b.row(r);
            let orow = &mut od[r * n..(r + 1) * n];
            for (j, o) in orow.iter_mut().enumerate() {
                *o = self.row(j).iter().map(|&(k, z)| brow[k] * z.conj()).sum();
            }
        }
    }

    pub fn dense_mul_adjoint(&self, b: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(b.rows(), self.rows);
        self.dense_mul_adjoint_into(b, &mut out);
        out
    }
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_vec(2, 2, vec![ZERO, -I, I, ZERO]).expect("2x2")
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rand_matrix(rows: usize, cols: usize, seed: &[f64]) -> CMatrix {
        CMatrix::from_fn(rows, cols, |i, j| {
            let k = (i * cols + j) * 2;
            c(seed[k % seed.len()] + 0.1 * i as f64, seed[(k + 1) % seed.len()] - 0.07 * j as f64)
        })
    }

    fn rel_err(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn sparse_rows_match_dense_products() {
        let s = CMatrix::from_fn(5, 5, |i, j| if j == i + 1 { c((j as f64).sqrt(), 0.3) } else { ZERO });
        let b = rand_matrix(5, 5, &[0.3, -1.2, 0.8, 0.1, 2.0, -0.4, 0.9]);
        let sp = SparseRows::from_dense(&s);
        assert_eq!(sp.nnz(), 4);
        assert!(rel_err(&sp.mul_dense(&b), &s.matmul(&b)) < 1e-15);
        assert!(rel_err(&sp.dense_mul_adjoint(&b), &b.matmul(&s.dagger())) < 1e-15);
        let v: Vec<C64> = (0..5).map(|k| c(k as f64, -0.5)).collect();
        assert_eq!(sp.apply(&v), s.apply(&v));
        assert_eq!(sp.dagger().to_dense(), s.dagger());
    }

    #[test]
    fn kron_identities() {
        let i4 = kron(&CMatrix::identity(2), &CMatrix::identity(2)).unwrap();
        assert_eq!(i4, CMatrix::identity(4));
        let d = kron(&CMatrix::from_real_diag(&[1.0, 2.0]), &CMatrix::from_real_diag(&[3.0, 4.0])).unwrap();
        assert_eq!(d, CMatrix::from_real_diag(&[3.0, 4.0, 6.0, 8.0]));
    }

    #[test]
    fn kron_bitflip_both() {
        let xx = kron(&pauli_x(), &pauli_x()).unwrap();
        let out = xx.apply(&[ONE, ZERO, ZERO, ZERO]);
        assert_eq!(out, vec![ZERO, ZERO, ZERO, ONE]);
    }

    #[test]
    fn kron_overflow_is_an_error() {
        let big = CMatrix::identity(1 << 11);
        assert!(matches!(kron(&big, &big), Err(Error::DimensionOverflow { .. })));
    }

    #[test]
    fn partial_trace_of_bell_state() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let phi = [c(s, 0.0), ZERO, ZERO, c(s, 0.0)];
        let rho = CMatrix::outer(&phi, &phi);
        let red = partial_trace(&rho, &[2, 2], &[1]).unwrap();
        assert!(rel_err(&red, &CMatrix::identity(2).scale_real(0.5)) < 1e-15);
    }

    #[test]
    fn partial_trace_errors() {
        let rho = CMatrix::identity(4);
        assert!(matches!(partial_trace(&rho, &[2, 2], &[2]), Err(Error::FactorOutOfRange { .. })));
        assert!(matches!(partial_trace(&rho, &[2, 3], &[0]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn partial_trace_middle_factor() {
        // three factors, keep the outer two: compare with explicit sum
        let dims = [2, 3, 2];
        let seed: Vec<f64> = (0..300).map(|k| ((k * 37 % 101) as f64) / 50.0 - 1.0).collect();
        let rho = rand_matrix(12, 12, &seed);
        let red = partial_trace(&rho, &dims, &[0, 2]).unwrap();
        for a in 0..2 {
            for c2 in 0..2 {
                for a2 in 0..2 {
                    for c3 in 0..2 {
                        let mut acc = ZERO;
                        for b in 0..3 {
                            acc += rho[((a * 3 + b) * 2 + c2, (a2 * 3 + b) * 2 + c3)];
                        }
                        assert!((red[(a * 2 + c2, a2 * 2 + c3)] - acc).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn eig_simple_cases() {
        let e = eig_hermitian(&CMatrix::from_real_diag(&[2.0, 1.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 2.0]);
        let e = eig_hermitian(&pauli_x()).unwrap();
        assert!((e.eigenvalues[0] + 1.0).abs() < 1e-14 && (e.eigenvalues[1] - 1.0).abs() < 1e-14);
        let mut bad = pauli_x();
        bad[(0, 1)] = c(2.0, 0.0);
        assert!(matches!(eig_hermitian(&bad), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn expm_closed_forms() {
        assert!(rel_err(&expm(&CMatrix::zeros(3, 3)).unwrap(), &CMatrix::identity(3)) < 1e-15);
        let d = expm(&CMatrix::from_real_diag(&[2f64.ln(), 3f64.ln()])).unwrap();
        assert!(rel_err(&d, &CMatrix::from_real_diag(&[2.0, 3.0])) < 1e-14);
        // exp(iθσx) = cos θ I + i sin θ σx, at θ = π/2 this is iσx
        let theta = std::f64::consts::FRAC_PI_2;
        let e = expm(&pauli_x().scale(c(0.0, theta))).unwrap();
        let mut oracle = CMatrix::identity(2).scale_real(theta.cos());
        oracle.axpy(c(0.0, theta.sin()), &pauli_x());
        assert!((&e - &oracle).frobenius_norm() < 1e-14);
        assert!((&e - &pauli_x().scale(I)).frobenius_norm() < 1e-14);
    }

    #[test]
    fn expm_matches_taylor_series_for_large_norm() {
        let seed: Vec<f64> = (0..200).map(|k| ((k * 53 % 97) as f64) / 20.0 - 2.4).collect();
        let a = rand_matrix(5, 5, &seed);
        // scaled Taylor oracle: exp(A) = exp(A/2^k)^(2^k)
        let k = 10;
        let small = a.scale_real(0.5f64.powi(k));
        let mut term = CMatrix::identity(5);
        let mut sum = CMatrix::identity(5);
        for j in 1..30 {
            term = term.matmul(&small).scale_real(1.0 / j as f64);
            sum += &term;
        }
        for _ in 0..k {
            sum = sum.matmul(&sum);
        }
        assert!(rel_err(&expm(&a).unwrap(), &sum) < 1e-10);
    }

    #[test]
    fn solve_recovers_rhs() {
        let seed: Vec<f64> = (0..200).map(|k| ((k * 31 % 89) as f64) / 40.0 - 1.1).collect();
        let a = rand_matrix(6, 6, &seed);
        let b = rand_matrix(6, 2, &seed[7..]);
        let x = solve(&a, &b).unwrap();
        assert!(rel_err(&a.matmul(&x), &b) < 1e-12);
    }

    #[test]
    fn sparse_and_dense_products_agree() {
        let seed: Vec<f64> = (0..400).map(|k| ((k * 29 % 83) as f64) / 40.0 - 1.0).collect();
        let dense = rand_matrix(7, 7, &seed);
        let mut sparse = CMatrix::zeros(7, 7);
        sparse[(0, 3)] = c(1.5, -0.5);
        sparse[(4, 1)] = c(-2.0, 0.25);
        let naive = |a: &CMatrix, b: &CMatrix| {
            CMatrix::from_fn(7, 7, |i, j| (0..7).map(|k| a[(i, k)] * b[(k, j)]).sum())
        };
        assert!(rel_err(&dense.matmul(&sparse), &naive(&dense, &sparse)) < 1e-15);
        assert!(rel_err(&sparse.matmul(&dense), &naive(&sparse, &dense)) < 1e-15);
        assert!(rel_err(&dense.matmul(&dense), &naive(&dense, &dense)) < 1e-14);
    }

    fn arb_matrix(max: usize) -> impl Strategy<Value = CMatrix> {
        (2..=max, 2..=max).prop_flat_map(|(r, c)| {
            prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), r * c)
                .prop_map(move |v| CMatrix::from_fn(r, c, |i, j| C64::new(v[i * c + j].0, v[i * c + j].1)))
        })
    }

    fn arb_hermitian(max: usize) -> impl Strategy<Value = CMatrix> {
        (2..=max).prop_flat_map(|n| {
            prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n).prop_map(move |v| {
                let m = CMatrix::from_fn(n, n, |i, j| C64::new(v[i * n + j].0, v[i * n + j].1));
                let mut h = &m + &m.dagger();
                h.hermitize();
                h
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn kron_is_associative_and_bilinear(a in arb_matrix(4), b in arb_matrix(4), c2 in arb_matrix(4), s in -2.0f64..2.0) {
            let left = kron(&kron(&a, &b).unwrap(), &c2).unwrap();
            let right = kron(&a, &kron(&b, &c2).unwrap()).unwrap();
            prop_assert!(rel_err(&left, &right) < 1e-12);
            let scaled = kron(&a.scale_real(s), &b).unwrap();
            let direct = kron(&a, &b).unwrap().scale_real(s);
            prop_assert!((&scaled - &direct).frobenius_norm() <= 1e-12 * direct.frobenius_norm().max(1.0));
            let sum = kron(&a, &(&b + &b)).unwrap();
            let split = &kron(&a, &b).unwrap() + &kron(&a, &b).unwrap();
            prop_assert!(rel_err(&sum, &split) < 1e-12);
        }

        #[test]
        fn partial_trace_of_product(a in arb_matrix(4), b in arb_matrix(4)) {
            prop_assume!(a.is_square() && b.is_square());
            let ab = kron(&a, &b).unwrap();
            let red = partial_trace(&ab, &[a.rows(), b.rows()], &[0]).unwrap();
            let expect = a.scale(b.trace());
            prop_assert!((&red - &expect).frobenius_norm() <= 1e-12 * expect.frobenius_norm().max(1.0));
            let t = partial_trace(&ab, &[a.rows(), b.rows()], &[1]).unwrap().trace();
            prop_assert!((t - ab.trace()).norm() <= 1e-12 * ab.trace().norm().max(1.0));
        }

        #[test]
        fn eig_reconstructs(h in arb_hermitian(24)) {
            let e = eig_hermitian(&h).unwrap();
            let n = h.rows();
            prop_assert!(rel_err(&e.reconstruct(), &h) <= 1e-10);
            let v = &e.eigenvectors;
            prop_assert!((&v.dagger().matmul(v) - &CMatrix::identity(n)).frobenius_norm() <= 1e-10);
            prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn expm_of_commuting_sum_factorises(d1 in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 5),
                                            d2 in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 5)) {
            let a = CMatrix::from_diag(&d1.iter().map(|&(r, i)| c(r, i)).collect::<Vec<_>>());
            let b = CMatrix::from_diag(&d2.iter().map(|&(r, i)| c(r, i)).collect::<Vec<_>>());
            let lhs = expm(&(&a + &b)).unwrap();
            let rhs = expm(&a).unwrap().matmul(&expm(&b).unwrap());
            prop_assert!(rel_err(&lhs, &rhs) < 1e-12);
        }
    }

    #[test]
    fn eig_reconstructs_at_dimension_256() {
        let n = 256;
        let m = CMatrix::from_fn(n, n, |i, j| {
            c(((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.5, ((i * 3 + j * 5) % 11) as f64 / 11.0 - 0.5)
        });
        let mut h = &m + &m.dagger();
        h.hermitize();
        let e = eig_hermitian(&h).unwrap();
        assert!(rel_err(&e.reconstruct(), &h) <= 1e-10);
        let v = &e.eigenvectors;
        assert!((&v.dagger().matmul(v) - &CMatrix::identity(n)).frobenius_norm() <= 1e-10);
    }
}
