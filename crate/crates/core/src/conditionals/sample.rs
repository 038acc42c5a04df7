use crate::covariances::Dispatcher;
use crate::error::{Error, Result};
use crate::numerics::{cholesky, DenseMatrix, LowerTriangular, RngState};

use super::{ConditionalRequest, PosteriorCov, PosteriorMoments};

/// Lower-triangular square root of a PSD matrix. Singular inputs get a tiny
/// diagonal lift before factorising.
pub fn psd_sqrt(cov: &DenseMatrix) -> Result<LowerTriangular> {
    match cholesky(cov, 0.0) {
        Ok(l) => Ok(l),
        Err(Error::NotPositiveDefinite { .. }) => {
            let mut lifted = cov.clone();
            lifted.add_diag(1e-12 * cov.max_abs().max(1e-300));
            cholesky(&lifted, 0.0)
        }
        Err(e) => Err(e),
    }
}

/// Draws `mean + cov^{1/2} eps` from per-point moments.
///
/// Accepts the `N x P` and `N x P x P` layouts; outputs at different points
/// are sampled independently.
pub fn sample_from_moments(moments: &PosteriorMoments, rng: &mut RngState, num_samples: usize) -> Result<Vec<DenseMatrix>> {
    let (n, p) = moments.mean.shape();
    match &moments.cov {
        PosteriorCov::Marginal(var) => {
            let sd: Vec<f64> = var.as_slice().iter().map(|v| v.max(0.0).sqrt()).collect();
            Ok((0..num_samples)
                .map(|_| {
                    let eps = rng.standard_normal(n, p);
                    DenseMatrix::from_fn(n, p, |i, a| moments.mean[(i, a)] + sd[i * p + a] * eps[(i, a)])
                })
                .collect())
        }
        PosteriorCov::PerPoint(_) => {
            let roots = (0..n)
                .map(|i| psd_sqrt(&moments.point_covariance(i).expect("per-point layout")))
                .collect::<Result<Vec<_>>>()?;
            Ok((0..num_samples)
                .map(|_| {
                    let eps = rng.standard_normal(n, p);
                    let mut out = moments.mean.clone();
                    for (i, l) in roots.iter().enumerate() {
                        let z = l.matvec(eps.row(i)).expect("P-vector");
                        out.row_mut(i).iter_mut().zip(z).for_each(|(o, z)| *o += z);
                    }
                    out
                })
                .collect())
        }
        _ => Err(Error::UnsupportedMode("sampling uses the N x P or N x P x P layouts".into())),
    }
}

/// Samples of `f(Xnew)` from the approximate posterior, `num_samples` draws
/// of `N x P`.
///
/// Uses per-point `P x P` covariances when `req.full_output_cov` is set and
/// marginal variances otherwise; `req.full_cov` is ignored.
pub fn sample_conditional(
    d: &Dispatcher,
    req: &ConditionalRequest<'_>,
    rng: &mut RngState,
    num_samples: usize,
) -> Result<Vec<DenseMatrix>> {
    let req = req.full_cov(false);
    let moments = d.conditional(&req)?;
    sample_from_moments(&moments, rng, num_samples)
}
