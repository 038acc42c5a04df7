use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Default relative jitter: multiplied by the mean diagonal of the matrix.
pub const DEFAULT_JITTER: f64 = 1e-6;
/// Number of x10 jitter escalations attempted after the first failure.
pub const JITTER_RETRIES: usize = 5;
/// Relative tolerance for the symmetry check in [`cholesky`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Lower-triangular matrix with packed row-major storage of the lower triangle.
///
/// Entry `(i, j)` with `j <= i` lives at `packed[i * (i + 1) / 2 + j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLower")]
pub struct LowerTriangular {
    dim: usize,
    packed: Vec<f64>,
}

#[derive(Deserialize)]
struct RawLower {
    dim: usize,
    packed: Vec<f64>,
}

impl TryFrom<RawLower> for LowerTriangular {
    type Error = Error;

    fn try_from(raw: RawLower) -> Result<Self> {
        LowerTriangular::from_packed(raw.dim, raw.packed)
    }
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl LowerTriangular {
    pub fn zeros(dim: usize) -> Self {
        LowerTriangular { dim, packed: vec![0.0; dim * (dim + 1) / 2] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim);
        for i in 0..dim {
            l.set(i, i, 1.0);
        }
        l
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut l = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            l.set(i, i, d);
        }
        l
    }

    pub fn from_packed(dim: usize, packed: Vec<f64>) -> Result<Self> {
        if packed.len() != dim * (dim + 1) / 2 {
            return Err(Error::DimensionMismatch(format!(
                "{} packed entries for a lower triangle of dimension {dim}",
                packed.len()
            )));
        }
        Ok(LowerTriangular { dim, packed })
    }

    /// Takes the lower triangle of a square matrix, ignoring the strict upper part.
    pub fn from_dense_lower(m: &DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NonSquare { rows: m.rows(), cols: m.cols() });
        }
        let n = m.rows();
        let mut l = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                l.set(i, j, m[(i, j)]);
            }
        }
        Ok(l)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.packed[packed_index(i, j)]
        }
    }

    /// Sets a lower-triangle entry. Panics if `j > i`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j <= i, "cannot set strictly-upper entry ({i}, {j})");
        self.packed[packed_index(i, j)] = v;
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub fn packed_mut(&mut self) -> &mut [f64] {
        &mut self.packed
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    /// `L L^T`.
    pub fn gram(&self) -> DenseMatrix {
        let n = self.dim;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// `2 * sum(log diag(L))`, the log-determinant of `L L^T`.
    pub fn gram_logdet(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.get(i, i).abs().ln()).sum::<f64>()
    }

    /// Product `L * B`.
    pub fn matmul(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.rows() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "lower {}x{} times {}x{}",
                self.dim,
                self.dim,
                b.rows(),
                b.cols()
            )));
        }
        let mut out = DenseMatrix::zeros(self.dim, b.cols());
        for i in 0..self.dim {
            for k in 0..=i {
                let l = self.get(i, k);
                if l == 0.0 {
                    continue;
                }
                for c in 0..b.cols() {
                    out[(i, c)] += l * b[(k, c)];
                }
            }
        }
        Ok(out)
    }

    /// Product `L^T * B`.
    pub fn tr_matmul(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.rows() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "lower^T {}x{} times {}x{}",
                self.dim,
                self.dim,
                b.rows(),
                b.cols()
            )));
        }
        let mut out = DenseMatrix::zeros(self.dim, b.cols());
        for k in 0..self.dim {
            for i in 0..=k {
                let l = self.get(k, i);
                if l == 0.0 {
                    continue;
                }
                for c in 0..b.cols() {
                    out[(i, c)] += l * b[(k, c)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch("lower matvec".into()));
        }
        Ok((0..self.dim).map(|i| (0..=i).map(|k| self.get(i, k) * v[k]).sum()).collect())
    }

    /// Block-diagonal assembly of several factors into one lower triangle.
    pub fn block_diag(blocks: &[LowerTriangular]) -> Self {
        let n = blocks.iter().map(|b| b.dim).sum();
        let mut out = Self::zeros(n);
        let mut off = 0;
        for b in blocks {
            for i in 0..b.dim {
                for j in 0..=i {
                    out.set(off + i, off + j, b.get(i, j));
                }
            }
            off += b.dim;
        }
        out
    }
}

/// Cholesky factorisation with relative jitter escalation.
///
/// Factorises `A + j * mean(diag(A)) * I`, starting with `j = jitter`. On
/// failure `j` is multiplied by ten (or set to [`DEFAULT_JITTER`] when it
/// was zero) up to [`JITTER_RETRIES`] times.
pub fn cholesky(a: &DenseMatrix, jitter: f64) -> Result<LowerTriangular> {
    if !a.is_square() {
        return Err(Error::NonSquare { rows: a.rows(), cols: a.cols() });
    }
    if !(jitter >= 0.0) {
        return Err(Error::InvalidParameter(format!("jitter must be non-negative, got {jitter}")));
    }
    let n = a.rows();
    let scale = a.max_abs().max(1.0);
    let deviation = a.asymmetry();
    if deviation > SYMMETRY_TOLERANCE * scale {
        return Err(Error::AsymmetricInput { deviation });
    }
    let mean_diag = if n == 0 { 0.0 } else { a.trace() / n as f64 };
    let mut j = jitter;
    let mut failed_minor = 0;
    for attempt in 0..=JITTER_RETRIES {
        match cholesky_raw(a, j * mean_diag.abs()) {
            Ok(l) => return Ok(l),
            Err(minor) => failed_minor = minor,
        }
        if attempt < JITTER_RETRIES {
            j = if j == 0.0 { DEFAULT_JITTER } else { j * 10.0 };
        }
    }
    Err(Error::NotPositiveDefinite { minor: failed_minor, attempts: JITTER_RETRIES + 1 })
}

/// Plain Cholesky on `A + shift * I`; returns the failing minor on error.
fn cholesky_raw(a: &DenseMatrix, shift: f64) -> std::result::Result<LowerTriangular, usize> {
    let n = a.rows();
    let mut l = LowerTriangular::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            if i == j {
                s += shift;
            }
            let row_i = &l.packed[packed_index(i, 0)..packed_index(i, 0) + j];
            let row_j = &l.packed[packed_index(j, 0)..packed_index(j, 0) + j];
            s -= row_i.iter().zip(row_j).map(|(x, y)| x * y).sum::<f64>();
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(i);
                }
                l.packed[packed_index(i, i)] = s.sqrt();
            } else {
                l.packed[packed_index(i, j)] = s / l.packed[packed_index(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solves `L X = B`, or `L^T X = B` when `transpose` is set.
pub fn tri_solve(l: &LowerTriangular, b: &DenseMatrix, transpose: bool) -> Result<DenseMatrix> {
    let n = l.dim();
    if b.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "triangular solve with dim {n} against {} rows",
            b.rows()
        )));
    }
    if let Some(index) = (0..n).find(|&i| l.get(i, i) == 0.0) {
        return Err(Error::ZeroDiagonal { index });
    }
    let mut x = b.clone();
    let cols = b.cols();
    if !transpose {
        for i in 0..n {
            let d = l.get(i, i);
            for k in 0..i {
                let lik = l.get(i, k);
                if lik == 0.0 {
                    continue;
                }
                for c in 0..cols {
                    let v = x[(k, c)];
                    x[(i, c)] -= lik * v;
                }
            }
            x.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
    } else {
        for i in (0..n).rev() {
            let d = l.get(i, i);
            for k in i + 1..n {
                let lki = l.get(k, i);
                if lki == 0.0 {
                    continue;
                }
                for c in 0..cols {
                    let v = x[(k, c)];
                    x[(i, c)] -= lki * v;
                }
            }
            x.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
    }
    Ok(x)
}

/// Solves `A X = B` given the Cholesky factor of `A`.
pub fn cho_solve(l: &LowerTriangular, b: &DenseMatrix) -> Result<DenseMatrix> {
    let y = tri_solve(l, b, false)?;
    tri_solve(l, &y, true)
}
