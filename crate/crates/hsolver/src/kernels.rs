//! Dense linear-algebra primitives: Cholesky, triangular solves,
//! tolerance-truncated low-rank factorization, and extreme singular values.
//!
//! Everything here works on small dense blocks (cluster diagonal blocks,
//! coupling blocks, orthogonal bases). The truncation backend is SVD, which
//! meets the same contract as a rank-revealing QR with the tightest possible
//! tail norm.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        DenseMatrix {
            rows: r,
            cols: c,
            values: rows.concat(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.values[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// `self * other`, ikj loop order to stream rows of both operands.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                let orow = out.row_mut(i);
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn tr_matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, other.rows, "tr_matmul shape");
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let aki = self.get(k, i);
                if aki == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                let orow = out.row_mut(i);
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += aki * b;
                }
            }
        }
        out
    }

    /// `self * otherᵀ` without materializing the transpose.
    pub fn matmul_transb(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.cols, "matmul_transb shape");
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let mut acc = 0.0;
                for (a, b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape");
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for (a, xv) in self.row(i).iter().zip(x) {
                acc += a * xv;
            }
            y[i] = acc;
        }
        y
    }

    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "tr_matvec shape");
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (yv, a) in y.iter_mut().zip(self.row(i)) {
                *yv += xi * a;
            }
        }
        y
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values,
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values,
        }
    }

    pub fn sub_assign(&mut self, other: &DenseMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
    }

    pub fn scaled(&self, c: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Columns `lo..hi` as a new matrix.
    pub fn columns(&self, lo: usize, hi: usize) -> DenseMatrix {
        assert!(lo <= hi && hi <= self.cols);
        let mut out = Self::zeros(self.rows, hi - lo);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[lo..hi]);
        }
        out
    }

    /// Dense copy of rows `rlo..rhi`, columns `clo..chi`.
    pub fn submatrix(&self, rlo: usize, rhi: usize, clo: usize, chi: usize) -> DenseMatrix {
        assert!(rlo <= rhi && rhi <= self.rows);
        assert!(clo <= chi && chi <= self.cols);
        let mut out = Self::zeros(rhi - rlo, chi - clo);
        for i in rlo..rhi {
            out.row_mut(i - rlo).copy_from_slice(&self.row(i)[clo..chi]);
        }
        out
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hconcat(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, other.rows, "hconcat rows");
        let mut out = Self::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            out.row_mut(i)[..self.cols].copy_from_slice(self.row(i));
            out.row_mut(i)[self.cols..].copy_from_slice(other.row(i));
        }
        out
    }

    pub fn norm_fro(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Spectral norm (largest singular value); 0 for empty matrices.
    pub fn norm_two(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        extreme_singular_values(self).0
    }

    /// Largest absolute deviation from symmetry, `max |M - Mᵀ|`.
    pub fn max_asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Averages `M` with its transpose, squashing roundoff asymmetry.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
    }

    pub(crate) fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub(crate) fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
        DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// Truncation threshold interpretation for [`truncated_lowrank`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsMode {
    /// Keep singular values `σ > eps`.
    Absolute,
    /// Keep singular values `σ > eps·σ_max`.
    Relative,
}

/// Result of a tolerance-truncated low-rank factorization `M ≈ U1·V1ᵀ`.
#[derive(Debug, Clone)]
pub struct TruncatedFactor {
    /// Orthonormal columns spanning the kept left singular directions.
    pub u1: DenseMatrix,
    /// Right singular vectors scaled by their singular values.
    pub v1: DenseMatrix,
    /// Number of kept singular values.
    pub rank: usize,
    /// Spectral norm of the discarded remainder (largest discarded σ).
    pub tail_norm: f64,
}

/// Cholesky factorization `M = G·Gᵀ` with `G` lower triangular.
///
/// Only the lower triangle of `M` is read. A nonpositive pivot means the
/// (Schur-complement) block is not positive definite and aborts with the
/// pivot index and value for diagnostics.
pub fn dense_cholesky(m: &DenseMatrix) -> Result<DenseMatrix> {
    if m.rows() != m.cols() {
        return Err(Error::dim(format!(
            "cholesky requires a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let mut g = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            let gjk = g.get(j, k);
            d -= gjk * gjk;
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot_index: j,
                pivot: d,
            });
        }
        let gjj = d.sqrt();
        g.set(j, j, gjj);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= g.get(i, k) * g.get(j, k);
            }
            g.set(i, j, s / gjj);
        }
    }
    Ok(g)
}

/// Which triangular system [`tri_solve`] solves, for `G` lower triangular.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriSolveMode {
    /// `G·X = B`, i.e. `X = G⁻¹·B`.
    LeftForward,
    /// `Gᵀ·X = B`, i.e. `X = G⁻ᵀ·B`.
    LeftBackward,
    /// `X·Gᵀ = B`, i.e. `X = B·G⁻ᵀ`.
    RightForward,
    /// `X·G = B`, i.e. `X = B·G⁻¹`.
    RightBackward,
}

/// Solves a triangular system with lower-triangular `G` in one of four modes.
/// In-place `y <- G^-1 y` for lower-triangular `G` on a vector slice.
pub fn tri_forward_vec(g: &DenseMatrix, y: &mut [f64]) {
    let n = g.rows();
    debug_assert_eq!(y.len(), n);
    for i in 0..n {
        let mut acc = y[i];
        let row = g.row(i);
        for (j, yj) in y[..i].iter().enumerate() {
            acc -= row[j] * yj;
        }
        y[i] = acc / row[i];
    }
}

/// In-place `y <- G^-T y` for lower-triangular `G` on a vector slice.
pub fn tri_backward_t_vec(g: &DenseMatrix, y: &mut [f64]) {
    let n = g.rows();
    debug_assert_eq!(y.len(), n);
    for i in (0..n).rev() {
        let mut acc = y[i];
        for j in (i + 1)..n {
            acc -= g.get(j, i) * y[j];
        }
        y[i] = acc / g.get(i, i);
    }
}

pub fn tri_solve(g: &DenseMatrix, b: &DenseMatrix, mode: TriSolveMode) -> Result<DenseMatrix> {
    if g.rows() != g.cols() {
        return Err(Error::dim(format!(
            "triangular factor must be square, got {}x{}",
            g.rows(),
            g.cols()
        )));
    }
    let n = g.rows();
    let left = matches!(mode, TriSolveMode::LeftForward | TriSolveMode::LeftBackward);
    let b_dim = if left { b.rows() } else { b.cols() };
    if b_dim != n {
        return Err(Error::dim(format!(
            "tri_solve: factor is {n}x{n} but operand is {}x{} ({mode:?})",
            b.rows(),
            b.cols()
        )));
    }
    for i in 0..n {
        if g.get(i, i) == 0.0 {
            return Err(Error::SingularTriangular { index: i });
        }
    }
    let mut x = b.clone();
    match mode {
        TriSolveMode::LeftForward => {
            for i in 0..n {
                for j in 0..i {
                    let gij = g.get(i, j);
                    if gij == 0.0 {
                        continue;
                    }
                    let (done, cur) = x.values.split_at_mut(i * x.cols);
                    let xj = &done[j * x.cols..(j + 1) * x.cols];
                    for (xi, xjv) in cur[..x.cols].iter_mut().zip(xj) {
                        *xi -= gij * xjv;
                    }
                }
                let inv = 1.0 / g.get(i, i);
                for v in x.row_mut(i) {
                    *v *= inv;
                }
            }
        }
        TriSolveMode::LeftBackward => {
            for i in (0..n).rev() {
                for j in (i + 1)..n {
                    let gji = g.get(j, i);
                    if gji == 0.0 {
                        continue;
                    }
                    let (cur, rest) = x.values.split_at_mut((i + 1) * x.cols);
                    let xj = &rest[(j - i - 1) * x.cols..(j - i) * x.cols];
                    for (xi, xjv) in cur[i * x.cols..].iter_mut().zip(xj) {
                        *xi -= gji * xjv;
                    }
                }
                let inv = 1.0 / g.get(i, i);
                for v in x.row_mut(i) {
                    *v *= inv;
                }
            }
        }
        TriSolveMode::RightForward => {
            // Row r solves G·xᵀ = bᵀ by forward substitution.
            for r in 0..x.rows {
                let row = x.row_mut(r);
                for i in 0..n {
                    let mut acc = row[i];
                    for j in 0..i {
                        acc -= g.get(i, j) * row[j];
                    }
                    row[i] = acc / g.get(i, i);
                }
            }
        }
        TriSolveMode::RightBackward => {
            // Row r solves Gᵀ·xᵀ = bᵀ by backward substitution.
            for r in 0..x.rows {
                let row = x.row_mut(r);
                for i in (0..n).rev() {
                    let mut acc = row[i];
                    for j in (i + 1)..n {
                        acc -= g.get(j, i) * row[j];
                    }
                    row[i] = acc / g.get(i, i);
                }
            }
        }
    }
    Ok(x)
}

/// Tolerance-truncated low-rank factorization via SVD.
///
/// Returns `U1, V1` with `M = U1·V1ᵀ + R`, `‖R‖₂ = tail_norm`. Singular
/// values strictly above the threshold are kept (a value exactly at the
/// threshold is discarded), so `tail_norm ≤ eps` in absolute mode and
/// `tail_norm ≤ eps·σ_max` in relative mode.
pub fn truncated_lowrank(m: &DenseMatrix, eps: f64, mode: EpsMode) -> TruncatedFactor {
    assert!(eps >= 0.0, "truncation tolerance must be nonnegative");
    if m.is_empty() {
        return TruncatedFactor {
            u1: DenseMatrix::zeros(m.rows(), 0),
            v1: DenseMatrix::zeros(m.cols(), 0),
            rank: 0,
            tail_norm: 0.0,
        };
    }
    let svd = m.to_na().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let sigma = svd.singular_values;

    // Sort defensively even though nalgebra returns descending order.
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let sigma_max = sigma[order[0]];
    let threshold = match mode {
        EpsMode::Absolute => eps,
        EpsMode::Relative => eps * sigma_max,
    };
    let rank = order.iter().take_while(|&&i| sigma[i] > threshold).count();
    let tail_norm = if rank < order.len() {
        sigma[order[rank]]
    } else {
        0.0
    };

    let mut u1 = DenseMatrix::zeros(m.rows(), rank);
    let mut v1 = DenseMatrix::zeros(m.cols(), rank);
    for (k, &idx) in order[..rank].iter().enumerate() {
        for i in 0..m.rows() {
            u1.set(i, k, u[(i, idx)]);
        }
        for j in 0..m.cols() {
            v1.set(j, k, sigma[idx] * v_t[(idx, j)]);
        }
    }
    TruncatedFactor {
        u1,
        v1,
        rank,
        tail_norm,
    }
}

/// Largest and smallest singular values of a nonempty matrix.
pub fn extreme_singular_values(m: &DenseMatrix) -> (f64, f64) {
    assert!(!m.is_empty(), "extreme_singular_values on empty matrix");
    let sigma = m.to_na().singular_values();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for s in sigma.iter() {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    // A rectangular matrix has min(rows, cols) singular values; the
    // remaining dimensions contribute exact zeros.
    if m.rows() != m.cols() {
        lo = 0.0;
    }
    (hi, lo)
}

/// Orthonormal basis of the complement of `span(u1)`.
///
/// Input `u1` is r×k with orthonormal columns; the result `u2` is r×(r−k)
/// and `[u1 | u2]` is square orthogonal. Computed with Householder
/// reflectors so orthogonality holds to machine precision.
pub fn orthonormal_complement(u1: &DenseMatrix) -> DenseMatrix {
    let r = u1.rows();
    let k = u1.cols();
    assert!(k <= r, "more columns than rows");
    if k == 0 {
        return DenseMatrix::identity(r);
    }
    if k == r {
        return DenseMatrix::zeros(r, 0);
    }

    // Householder QR of u1; reflector j is I - 2·v_j·v_jᵀ on rows j..r.
    let mut a = u1.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v: Vec<f64> = (j..r).map(|i| a.get(i, j)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * norm;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm > 0.0 {
            for x in &mut v {
                *x /= vnorm;
            }
        }
        for c in j..k {
            let dot: f64 = (j..r).map(|i| v[i - j] * a.get(i, c)).sum();
            for i in j..r {
                let av = a.get(i, c) - 2.0 * dot * v[i - j];
                a.set(i, c, av);
            }
        }
        reflectors.push(v);
    }

    // Q·e_i for i in k..r, applying reflectors innermost-first.
    let mut u2 = DenseMatrix::zeros(r, r - k);
    for (col, i) in (k..r).enumerate() {
        let mut x = vec![0.0; r];
        x[i] = 1.0;
        for (j, v) in reflectors.iter().enumerate().rev() {
            let dot: f64 = v.iter().zip(&x[j..]).map(|(a, b)| a * b).sum();
            for (vi, xi) in v.iter().zip(x[j..].iter_mut()) {
                *xi -= 2.0 * dot * vi;
            }
        }
        for i in 0..r {
            u2.set(i, col, x[i]);
        }
    }
    u2
}
