use crate::error::{Error, Result};
use crate::numerics::{tri_solve, DenseMatrix, LowerTriangular, StructuredPSD};

use super::{PosteriorCov, PosteriorMoments, VariationalGaussian};

/// Prior covariance of the test points: a full Gram or its diagonal.
#[derive(Clone, Debug, PartialEq)]
pub enum Knn {
    Full(DenseMatrix),
    Diag(Vec<f64>),
}

impl Knn {
    pub fn len(&self) -> usize {
        match self {
            Knn::Full(m) => m.rows(),
            Knn::Diag(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Covariance of one scalar conditional: full `N x N` or marginal variances.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum CovPart {
    Full(DenseMatrix),
    Diag(Vec<f64>),
}

impl CovPart {
    pub(crate) fn diag(&self) -> Vec<f64> {
        match self {
            CovPart::Full(m) => m.diag(),
            CovPart::Diag(d) => d.clone(),
        }
    }
}

/// Core Gaussian conditioning given the Cholesky factor of `Kmm`.
///
/// Unwhitened: `mean = Kmn^T Kmm^{-1} m`,
/// `cov = Knn - Kmn^T Kmm^{-1} Kmn + Kmn^T Kmm^{-1} S Kmm^{-1} Kmn`.
/// Whitened, with `A = L^{-1} Kmn`: `mean = A^T m`, `cov = Knn - A^T A + A^T S A`.
pub(crate) fn conditional_core(
    kmn: &DenseMatrix,
    lkk: &LowerTriangular,
    knn: &Knn,
    q_mu: &[f64],
    q_sqrt: Option<&LowerTriangular>,
    whiten: bool,
) -> Result<(Vec<f64>, CovPart)> {
    let (m, n) = kmn.shape();
    if lkk.dim() != m || q_mu.len() != m || q_sqrt.is_some_and(|l| l.dim() != m) {
        return Err(Error::DimensionMismatch(format!(
            "Kmn is {m}x{n}, Kmm factor {}, q_mu {}, q_sqrt {:?}",
            lkk.dim(),
            q_mu.len(),
            q_sqrt.map(LowerTriangular::dim)
        )));
    }
    if knn.len() != n {
        return Err(Error::DimensionMismatch(format!("Knn covers {} points, Kmn {n}", knn.len())));
    }
    let a = tri_solve(lkk, kmn, false)?;
    let a2 = if whiten { a.clone() } else { tri_solve(lkk, &a, true)? };
    let mean: Vec<f64> = (0..n).map(|j| (0..m).map(|i| a2[(i, j)] * q_mu[i]).sum()).collect();
    let b = q_sqrt.map(|l| l.tr_matmul(&a2)).transpose()?;
    let cov = match knn {
        Knn::Full(k) => {
            let mut cov = k.sub(&a.tr_matmul(&a)?)?;
            if let Some(b) = &b {
                cov = cov.add(&b.tr_matmul(b)?)?;
            }
            CovPart::Full(cov)
        }
        Knn::Diag(d) => {
            let mut var = d.clone();
            for i in 0..m {
                for (j, v) in var.iter_mut().enumerate() {
                    *v -= a[(i, j)] * a[(i, j)];
                }
            }
            if let Some(b) = &b {
                for i in 0..m {
                    for (j, v) in var.iter_mut().enumerate() {
                        *v += b[(i, j)] * b[(i, j)];
                    }
                }
            }
            CovPart::Diag(var)
        }
    };
    Ok((mean, cov))
}

/// Single-output conditional `q(f(X))` from `Kmn`, `Kmm` and `Knn`.
///
/// `full_cov` must agree with the form of `knn`; a full `Knn` is reduced to
/// its diagonal when `full_cov` is false. The result has one output column.
pub fn base_conditional(
    kmn: &DenseMatrix,
    kmm: &StructuredPSD,
    knn: &Knn,
    q: &VariationalGaussian,
    full_cov: bool,
) -> Result<PosteriorMoments> {
    let knn = match (knn, full_cov) {
        (Knn::Diag(_), true) => return Err(Error::ShapeMismatch("full covariance needs a full Knn".into())),
        (Knn::Full(k), false) => Knn::Diag(k.diag()),
        (k, _) => k.clone(),
    };
    let lkk = kmm.factor()?.to_lower();
    let lq = q.full_sqrt();
    let (mean, cov) = conditional_core(kmn, &lkk, &knn, &q.q_mu, Some(&lq), q.whiten)?;
    Ok(single_output_moments(mean, cov, full_cov, false))
}

/// Wraps a scalar conditional as a `P = 1` result in the requested mode.
pub(crate) fn single_output_moments(mean: Vec<f64>, cov: CovPart, full_cov: bool, full_output_cov: bool) -> PosteriorMoments {
    let n = mean.len();
    let mean = DenseMatrix::column_vector(&mean);
    let cov = match (cov, full_cov, full_output_cov) {
        (CovPart::Full(c), true, true) => PosteriorCov::Full(c),
        (CovPart::Full(c), true, false) => PosteriorCov::PerOutput(vec![c]),
        (c, false, true) => PosteriorCov::PerPoint(DenseMatrix::column_vector(&c.diag())),
        (c, false, false) => PosteriorCov::Marginal(DenseMatrix::column_vector(&c.diag())),
        (CovPart::Diag(_), true, _) => unreachable!("full covariance requested from a diagonal"),
    };
    debug_assert_eq!(mean.rows(), n);
    PosteriorMoments { mean, cov }
}
