//! Minimal dense numeric kernel: row-major `f64` matrices, a rank-3 tensor,
//! window pooling, the two MFB normalizations, and a one-sided Jacobi SVD.
//!
//! Everything here is deterministic: fixed accumulation order, and the only
//! parallelism is over independent output rows, which is bitwise identical
//! for any thread count.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// Flop threshold above which matrix products fan out over row blocks.
const PAR_FLOP_THRESHOLD: usize = 1 << 18;

/// Largest dimension accepted by [`svd`].
pub const SVD_MAX_DIM: usize = 512;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data; length must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Read access to entry `(r, c)`.
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    /// Write access to entry `(r, c)`.
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = value;
    }

    /// Borrow row `r` as a slice.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Mutably borrow row `r`.
    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Underlying row-major storage.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the underlying storage.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Returns a matrix whose rows are the listed rows of `self`.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    /// Transposed copy.
    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        let cols = other.cols;
        let inner = self.cols;
        let work = self.rows * cols * inner;
        let body = |(i, out_row): (usize, &mut [f64])| {
            let a_row = &self.data[i * inner..(i + 1) * inner];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * cols..(k + 1) * cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if work >= PAR_FLOP_THRESHOLD {
            out.data.par_chunks_mut(cols).enumerate().for_each(body);
        } else {
            out.data.chunks_mut(cols).enumerate().for_each(body);
        }
        out
    }

    /// Matrix product `self * other^T` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.cols,
            "matmul_nt shape mismatch: {}x{} * ({}x{})^T",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.rows);
        let cols = other.rows;
        let inner = self.cols;
        let work = self.rows * cols * inner;
        let body = |(i, out_row): (usize, &mut [f64])| {
            let a_row = &self.data[i * inner..(i + 1) * inner];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &other.data[j * inner..(j + 1) * inner];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        };
        if work >= PAR_FLOP_THRESHOLD {
            out.data.par_chunks_mut(cols).enumerate().for_each(body);
        } else {
            out.data.chunks_mut(cols).enumerate().for_each(body);
        }
        out
    }

    /// Matrix product `self^T * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, other.rows,
            "matmul_tn shape mismatch: ({}x{})^T * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.cols, other.cols);
        let cols = other.cols;
        let work = self.rows * self.cols * cols;
        let body = |(k, out_row): (usize, &mut [f64])| {
            for i in 0..self.rows {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[i * cols..(i + 1) * cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if work >= PAR_FLOP_THRESHOLD {
            out.data.par_chunks_mut(cols).enumerate().for_each(body);
        } else {
            out.data.chunks_mut(cols).enumerate().for_each(body);
        }
        out
    }

    /// Matrix-vector product `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(
            self.cols,
            x.len(),
            "matvec shape mismatch: {}x{} * len {}",
            self.rows,
            self.cols,
            x.len()
        );
        let mut out = vec![0.0; self.rows];
        for (o, row) in out.iter_mut().zip(self.data.chunks(self.cols)) {
            let mut acc = 0.0;
            for (&a, &b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = acc;
        }
        out
    }

    /// Matrix-vector product `self^T * x`.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(
            self.rows,
            x.len(),
            "matvec_t shape mismatch: ({}x{})^T * len {}",
            self.rows,
            self.cols,
            x.len()
        );
        let mut out = vec![0.0; self.cols];
        for (row, &xi) in self.data.chunks(self.cols).zip(x) {
            if xi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(row) {
                *o += xi * a;
            }
        }
        out
    }

    /// Elementwise product with a same-shaped matrix.
    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "hadamard shape mismatch"
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "axpy shape mismatch"
        );
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// In-place multiplication by a scalar.
    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&a| a * a).sum::<f64>().sqrt()
    }

    /// Largest absolute entrywise difference to another matrix.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "max_abs_diff shape mismatch"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }
}

/// Outer product `x * y^T` as a dense matrix.
pub fn outer(x: &[f64], y: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(x.len(), y.len());
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &yj) in out.row_mut(i).iter_mut().zip(y) {
            *o = xi * yj;
        }
    }
    out
}

/// Dense rank-3 tensor with the last index fastest (row-major order).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    /// All-zero tensor of the given shape.
    pub fn zeros(d1: usize, d2: usize, d3: usize) -> Self {
        Tensor3 {
            dims: (d1, d2, d3),
            data: vec![0.0; d1 * d2 * d3],
        }
    }

    /// Shape as `(d1, d2, d3)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Read access to entry `(i, j, l)`.
    #[inline]
    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        self.data[self.offset(i, j, l)]
    }

    /// Write access to entry `(i, j, l)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, l: usize, value: f64) {
        let idx = self.offset(i, j, l);
        self.data[idx] = value;
    }

    /// In-place `self[i][j][l] += value`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, l: usize, value: f64) {
        let idx = self.offset(i, j, l);
        self.data[idx] += value;
    }

    /// Underlying storage, last index fastest.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the underlying storage.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The `d1 x d2` slice obtained by fixing the last index to `l`.
    pub fn slice_last(&self, l: usize) -> Matrix {
        let (d1, d2, d3) = self.dims;
        assert!(l < d3, "slice index {} out of bounds for depth {}", l, d3);
        let mut out = Matrix::zeros(d1, d2);
        for i in 0..d1 {
            for j in 0..d2 {
                out.set(i, j, self.data[(i * d2 + j) * d3 + l]);
            }
        }
        out
    }

    /// Frobenius norm over all entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&a| a * a).sum::<f64>().sqrt()
    }

    /// Largest absolute entrywise difference to another tensor.
    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims, other.dims, "tensor shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, l: usize) -> usize {
        let (d1, d2, d3) = self.dims;
        debug_assert!(i < d1 && j < d2 && l < d3);
        (i * d2 + j) * d3 + l
    }
}

/// Stacks outer products of matching columns into a rank-3 tensor:
/// `out[i][j][m] = a[i][m] * b[j][m]`. Both inputs must share their column
/// count, which becomes the tensor depth.
pub fn slice_tensor_product(a: &Matrix, b: &Matrix) -> Tensor3 {
    assert_eq!(
        a.cols(),
        b.cols(),
        "slice product needs matching column counts"
    );
    let (d1, d2, d3) = (a.rows(), b.rows(), a.cols());
    let mut out = Tensor3::zeros(d1, d2, d3);
    for i in 0..d1 {
        for j in 0..d2 {
            for m in 0..d3 {
                out.set(i, j, m, a.get(i, m) * b.get(j, m));
            }
        }
    }
    out
}

/// Sums non-overlapping windows of size `k`; window `j` covers
/// `x[j*k .. (j+1)*k]`. With `k = 1` this is the identity.
pub fn sum_pool(x: &[f64], k: usize) -> Vec<f64> {
    assert!(k > 0, "pool window must be positive");
    assert_eq!(
        x.len() % k,
        0,
        "pool input length {} not divisible by window {}",
        x.len(),
        k
    );
    x.chunks(k).map(|w| w.iter().sum()).collect()
}

/// Applies [`sum_pool`] to every row of a matrix.
pub fn sum_pool_rows(x: &Matrix, k: usize) -> Matrix {
    assert!(k > 0, "pool window must be positive");
    assert_eq!(
        x.cols() % k,
        0,
        "pool input width {} not divisible by window {}",
        x.cols(),
        k
    );
    let out_cols = x.cols() / k;
    let mut out = Matrix::zeros(x.rows(), out_cols);
    for r in 0..x.rows() {
        let src = x.row(r);
        let dst = out.row_mut(r);
        for (j, w) in src.chunks(k).enumerate() {
            dst[j] = w.iter().sum();
        }
    }
    out
}

/// Adjoint of [`sum_pool_rows`]: repeats every pooled coordinate across its
/// window, turning a `b x d` gradient into a `b x (d*k)` one.
pub fn sum_pool_backward_rows(grad: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::zeros(grad.rows(), grad.cols() * k);
    for r in 0..grad.rows() {
        let src = grad.row(r);
        let dst = out.row_mut(r);
        for (j, &g) in src.iter().enumerate() {
            dst[j * k..(j + 1) * k].fill(g);
        }
    }
    out
}

/// Materializes the pooling operator as a `d x (k*d)` 0/1 matrix, so that
/// `sk_matrix(d, k) * x == sum_pool(x, k)`. Kept for cross-checking the
/// windowed implementation against plain matrix algebra.
pub fn sk_matrix(d: usize, k: usize) -> Matrix {
    let mut s = Matrix::zeros(d, k * d);
    for j in 0..d {
        for l in 0..k {
            s.set(j, j * k + l, 1.0);
        }
    }
    s
}

/// Signed square root applied elementwise: `sign(x) * sqrt(|x|)`.
pub fn power_normalize(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.signum() * v.abs().sqrt()).collect()
}

/// Scales `x` to unit Euclidean norm; norms below `eps` leave direction
/// untouched apart from the `1/eps` scale, so the zero vector maps to itself.
pub fn l2_normalize(x: &[f64], eps: f64) -> Vec<f64> {
    let norm = x.iter().map(|&v| v * v).sum::<f64>().sqrt();
    let denom = norm.max(eps);
    x.iter().map(|&v| v / denom).collect()
}

/// Thin singular value decomposition `a = u * diag(sigma) * v^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Left singular vectors, orthonormal columns.
    pub u: Matrix,
    /// Singular values, descending and non-negative.
    pub sigma: Vec<f64>,
    /// Right singular vectors, orthonormal columns.
    pub v: Matrix,
}

/// One-sided Jacobi SVD for matrices up to 512x512.
///
/// Returns a thin decomposition with `min(rows, cols)` singular values in
/// descending order. Sweeps rotate column pairs until every off-diagonal
/// Gram entry falls below `1e-14` relative to the column norms, with a cap
/// of 60 sweeps; hitting the cap is reported as an error carrying the worst
/// remaining ratio.
pub fn svd(a: &Matrix) -> Result<Svd> {
    assert!(
        a.rows() <= SVD_MAX_DIM && a.cols() <= SVD_MAX_DIM,
        "svd supports matrices up to {0}x{0}, got {1}x{2}",
        SVD_MAX_DIM,
        a.rows(),
        a.cols()
    );
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        // Factorize the transpose and swap the factors back.
        let t = svd_tall(&a.transpose())?;
        Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

/// Jacobi core for `rows >= cols`. Works on the transposed copy so each
/// column of the input is a contiguous row.
fn svd_tall(a: &Matrix) -> Result<Svd> {
    const TOL: f64 = 1e-14;
    const MAX_SWEEPS: usize = 60;

    let m = a.rows();
    let n = a.cols();
    let mut bt = a.transpose(); // row p holds column p of `a`
    let mut vt = Matrix::identity(n); // row p holds column p of the final v

    let mut converged = false;
    let mut worst = 0.0_f64;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        worst = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                {
                    let rp = bt.row(p);
                    let rq = bt.row(q);
                    for (&x, &y) in rp.iter().zip(rq) {
                        app += x * x;
                        aqq += y * y;
                        apq += x * y;
                    }
                }
                if app == 0.0 || aqq == 0.0 {
                    continue;
                }
                let ratio = apq.abs() / (app * aqq).sqrt();
                worst = worst.max(ratio);
                if ratio <= TOL {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut bt, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdConvergence {
            sweeps: MAX_SWEEPS,
            residual: worst,
        });
    }

    // Column norms are the singular values; values at rounding level are
    // treated as exact zeros so rank-deficient inputs get clean factors.
    let mut sigma: Vec<f64> = (0..n)
        .map(|p| bt.row(p).iter().map(|&x| x * x).sum::<f64>().sqrt())
        .collect();
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = sigma_max * 1e-15;
    for s in &mut sigma {
        if *s <= cutoff {
            *s = 0.0;
        }
    }

    // Sort descending, permuting the accumulated factors along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());

    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut sorted_sigma = vec![0.0; n];
    let mut zero_cols = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        sorted_sigma[dst] = sigma[src];
        for r in 0..n {
            v.set(r, dst, vt.get(src, r));
        }
        if sigma[src] > 0.0 {
            let inv = 1.0 / sigma[src];
            for r in 0..m {
                u.set(r, dst, bt.get(src, r) * inv);
            }
        } else {
            zero_cols.push(dst);
        }
    }
    if !zero_cols.is_empty() {
        complete_orthonormal(&mut u, &zero_cols);
    }

    Ok(Svd {
        u,
        sigma: sorted_sigma,
        v,
    })
}

/// Applies the plane rotation `(c, s)` to rows `p`, `q` of `m`.
fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let (lo, hi) = if p < q { (p, q) } else { (q, p) };
    let data = m.data_mut();
    let (head, tail) = data.split_at_mut(hi * cols);
    let row_lo = &mut head[lo * cols..(lo + 1) * cols];
    let row_hi = &mut tail[..cols];
    let (rp, rq) = if p < q { (row_lo, row_hi) } else { (row_hi, row_lo) };
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let xp = c * *x - s * *y;
        let yq = s * *x + c * *y;
        *x = xp;
        *y = yq;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to all other
/// columns, via Gram-Schmidt over the standard basis.
fn complete_orthonormal(u: &mut Matrix, targets: &[usize]) {
    let m = u.rows();
    let n = u.cols();
    let mut filled: Vec<usize> = (0..n).filter(|c| !targets.contains(c)).collect();
    let mut candidate = 0;
    for &col in targets {
        loop {
            assert!(candidate < m, "ran out of basis vectors during completion");
            let mut vec = vec![0.0; m];
            vec[candidate] = 1.0;
            candidate += 1;
            // Two Gram-Schmidt passes keep the completion orthogonal to
            // working precision.
            for _ in 0..2 {
                for &f in &filled {
                    let dot: f64 = (0..m).map(|r| vec[r] * u.get(r, f)).sum();
                    for (r, item) in vec.iter_mut().enumerate() {
                        *item -= dot * u.get(r, f);
                    }
                }
            }
            let norm = vec.iter().map(|&x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                for (r, &x) in vec.iter().enumerate() {
                    u.set(r, col, x / norm);
                }
                filled.push(col);
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    #[test]
    fn matmul_matches_hand_computed_product() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn identity_is_neutral_for_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 5, 7);
        assert_eq!(a.matmul(&Matrix::identity(7)).data(), a.data());
        assert_eq!(Matrix::identity(5).matmul(&a).data(), a.data());
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 6, 4);
            let b = random_matrix(&mut rng, 5, 4);
            let c = random_matrix(&mut rng, 6, 3);
            assert_eq!(a.matmul_nt(&b).data(), a.matmul(&b.transpose()).data());
            assert_eq!(a.matmul_tn(&c).data(), a.transpose().matmul(&c).data());
        }
    }

    #[test]
    fn matvec_pair_matches_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 4, 6);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ax = a.matvec(&x);
        let aty = a.matvec_t(&y);
        for i in 0..4 {
            let expect: f64 = (0..6).map(|j| a.get(i, j) * x[j]).sum();
            assert!((ax[i] - expect).abs() < 1e-15);
        }
        for j in 0..6 {
            let expect: f64 = (0..4).map(|i| a.get(i, j) * y[i]).sum();
            assert!((aty[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn transpose_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 3, 8);
        assert_eq!(a.transpose().transpose().data(), a.data());
    }

    #[test]
    fn outer_product_has_rank_one_structure() {
        let x = [1.0, 2.0];
        let y = [3.0, 4.0, 5.0];
        let o = outer(&x, &y);
        assert_eq!(o.data(), &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn parallel_and_sequential_products_are_bitwise_equal() {
        // 128x128x128 exceeds the parallel threshold; a 1-row slice of the
        // same data stays sequential. Row results must agree bit for bit.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 128, 128);
        let b = random_matrix(&mut rng, 128, 128);
        let big = a.matmul(&b);
        for i in (0..128).step_by(31) {
            let row = Matrix::from_vec(1, 128, a.row(i).to_vec());
            let small = row.matmul(&b);
            assert_eq!(small.data(), big.row(i));
        }
    }

    #[test]
    fn sum_pool_windows_of_three() {
        assert_eq!(sum_pool(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3), vec![6.0, 15.0]);
    }

    #[test]
    fn sum_pool_window_one_is_identity() {
        let x = [0.5, -1.25, 3.0];
        assert_eq!(sum_pool(&x, 1), x.to_vec());
    }

    #[test]
    #[should_panic(expected = "not divisible")]
    fn sum_pool_rejects_ragged_input() {
        sum_pool(&[1.0, 2.0, 3.0], 2);
    }

    #[test]
    fn sum_pool_matches_materialized_operator_on_all_small_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for d in 1..=16 {
            for k in 1..=8 {
                let x: Vec<f64> = (0..d * k).map(|_| rng.random_range(-2.0..2.0)).collect();
                let pooled = sum_pool(&x, k);
                let via_matrix = sk_matrix(d, k).matvec(&x);
                for (a, b) in pooled.iter().zip(&via_matrix) {
                    assert!((a - b).abs() <= 1e-12, "d={} k={}", d, k);
                }
            }
        }
    }

    #[test]
    fn sum_pool_backward_is_the_adjoint() {
        // <pool(x), g> == <x, pool_backward(g)> for random x, g.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 3, 12);
        let g = random_matrix(&mut rng, 3, 4);
        let k = 3;
        let lhs: f64 = sum_pool_rows(&x, k)
            .data()
            .iter()
            .zip(g.data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(sum_pool_backward_rows(&g, k).data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn power_normalize_takes_signed_square_roots() {
        assert_eq!(power_normalize(&[4.0, -9.0, 0.0]), vec![2.0, -3.0, 0.0]);
    }

    #[test]
    fn l2_normalize_scales_to_unit_norm() {
        let out = l2_normalize(&[3.0, 4.0], 1e-12);
        assert!((out[0] - 0.6).abs() < 1e-15);
        assert!((out[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_keeps_zero_vector_at_zero() {
        assert_eq!(l2_normalize(&[0.0, 0.0, 0.0], 1e-12), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn slice_tensor_product_stacks_outer_products() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Matrix::from_vec(3, 2, vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let t = slice_tensor_product(&a, &b);
        assert_eq!(t.dims(), (2, 3, 2));
        for i in 0..2 {
            for j in 0..3 {
                for m in 0..2 {
                    assert_eq!(t.get(i, j, m), a.get(i, m) * b.get(j, m));
                }
            }
        }
    }

    #[test]
    fn tensor3_layout_round_trips() {
        let mut t = Tensor3::zeros(2, 3, 4);
        let mut v = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                for l in 0..4 {
                    t.set(i, j, l, v);
                    v += 1.0;
                }
            }
        }
        // Last index fastest: consecutive l values sit next to each other.
        assert_eq!(t.data()[..4], [0.0, 1.0, 2.0, 3.0]);
        assert_eq!(t.get(1, 2, 3), 23.0);
        let slice = t.slice_last(1);
        assert_eq!(slice.get(0, 0), 1.0);
        assert_eq!(slice.get(1, 2), 21.0);
    }

    fn assert_svd_contract(a: &Matrix) {
        let Svd { u, sigma, v } = svd(a).expect("svd converges");
        let r = sigma.len();
        assert_eq!(r, a.rows().min(a.cols()));
        assert_eq!((u.rows(), u.cols()), (a.rows(), r));
        assert_eq!((v.rows(), v.cols()), (a.cols(), r));
        // Non-negative, descending.
        for i in 0..r {
            assert!(sigma[i] >= 0.0);
            if i + 1 < r {
                assert!(sigma[i] >= sigma[i + 1]);
            }
        }
        // Orthonormal columns.
        for (label, f) in [("u", &u), ("v", &v)] {
            let gram = f.matmul_tn(f);
            let eye = Matrix::identity(r);
            assert!(
                gram.max_abs_diff(&eye) <= 1e-10,
                "{} columns not orthonormal: {}",
                label,
                gram.max_abs_diff(&eye)
            );
        }
        // Reconstruction.
        let mut us = u.clone();
        for row in 0..us.rows() {
            for (c, &s) in sigma.iter().enumerate() {
                us.set(row, c, us.get(row, c) * s);
            }
        }
        let recon = us.matmul_nt(&v);
        let tol = 1e-10 * a.frobenius_norm().max(1.0);
        assert!(
            recon.max_abs_diff(a) <= tol,
            "reconstruction residual {} above {}",
            recon.max_abs_diff(a),
            tol
        );
    }

    #[test]
    fn svd_handles_random_square_tall_and_wide_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..40 {
            let shapes = [(6, 6), (9, 4), (4, 9), (1, 5), (5, 1), (12, 12)];
            for &(m, n) in &shapes {
                assert_svd_contract(&random_matrix(&mut rng, m, n));
            }
        }
    }

    #[test]
    fn svd_recovers_diagonal_singular_values() {
        let mut a = Matrix::zeros(4, 4);
        for (i, &d) in [3.0, -1.0, 0.5, 2.0].iter().enumerate() {
            a.set(i, i, d);
        }
        let out = svd(&a).unwrap();
        let got: Vec<f64> = out.sigma.clone();
        assert!((got[0] - 3.0).abs() < 1e-12);
        assert!((got[1] - 2.0).abs() < 1e-12);
        assert!((got[2] - 1.0).abs() < 1e-12);
        assert!((got[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn svd_handles_rank_deficient_and_zero_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Duplicate columns force rank deficiency.
        let base = random_matrix(&mut rng, 6, 2);
        let mut dup = Matrix::zeros(6, 4);
        for r in 0..6 {
            dup.set(r, 0, base.get(r, 0));
            dup.set(r, 1, base.get(r, 1));
            dup.set(r, 2, base.get(r, 0));
            dup.set(r, 3, base.get(r, 1));
        }
        assert_svd_contract(&dup);
        let out = svd(&dup).unwrap();
        assert_eq!(out.sigma.iter().filter(|&&s| s > 0.0).count(), 2);
        // All-zero input keeps a valid orthonormal frame.
        assert_svd_contract(&Matrix::zeros(5, 3));
        // Single zero column.
        let mut one_zero = random_matrix(&mut rng, 5, 3);
        for r in 0..5 {
            one_zero.set(r, 1, 0.0);
        }
        assert_svd_contract(&one_zero);
    }

    #[test]
    fn svd_handles_moderately_large_rectangles() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        assert_svd_contract(&random_matrix(&mut rng, 60, 40));
    }

    proptest! {
        #[test]
        fn prop_sum_pool_preserves_totals(d in 1usize..=16, k in 1usize..=8, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..d * k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let pooled = sum_pool(&x, k);
            prop_assert_eq!(pooled.len(), d);
            let total: f64 = x.iter().sum();
            let pooled_total: f64 = pooled.iter().sum();
            prop_assert!((total - pooled_total).abs() <= 1e-12);
        }

        #[test]
        fn prop_sum_pool_equals_materialized_operator(d in 1usize..=16, k in 1usize..=8, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..d * k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let direct = sum_pool(&x, k);
            let via_matrix = sk_matrix(d, k).matvec(&x);
            for (a, b) in direct.iter().zip(&via_matrix) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn prop_l2_normalize_lands_on_unit_sphere_or_zero(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let norm = l2_normalize(&x, 1e-12).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-12 || norm == 0.0);
        }

        #[test]
        fn prop_hadamard_commutes(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 4, 5);
            let b = random_matrix(&mut rng, 4, 5);
            let ab = a.hadamard(&b);
            let ba = b.hadamard(&a);
            prop_assert_eq!(ab.data(), ba.data());
        }
    }
}
