//! KL divergence between the variational distribution and the prior over
//! inducing variables.

use crate::conditionals::{QSqrt, VariationalGaussian};
use crate::covariances::Dispatcher;
use crate::error::{Error, Result};
use crate::inducing::InducingVariable;
use crate::kernels::Kernel;
use crate::numerics::{DenseMatrix, LowerTriangular, StructuredFactor, StructuredPSD};

fn frobenius2(m: &DenseMatrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum()
}

/// `KL(N(m, L L^T) || N(0, I))`.
fn whitened_kl(m: &[f64], l: &LowerTriangular) -> f64 {
    let trace: f64 = l.packed().iter().map(|v| v * v).sum();
    let mahalanobis: f64 = m.iter().map(|v| v * v).sum();
    0.5 * (mahalanobis + trace - m.len() as f64 - l.gram_logdet())
}

/// `KL(N(m, L L^T) || N(0, K))` given a factor of `K`; traces use triangular
/// solves against the factor.
fn factored_kl(m: &[f64], l: &LowerTriangular, k: &StructuredFactor) -> Result<f64> {
    if k.dim() != m.len() {
        return Err(Error::DimensionMismatch(format!("Kuu is {0}x{0}, q has {1} inducing variables", k.dim(), m.len())));
    }
    let alpha = k.tri_solve(&DenseMatrix::column_vector(m), false)?;
    let beta = k.tri_solve(&l.to_dense(), false)?;
    Ok(0.5 * (frobenius2(&alpha) + frobenius2(&beta) - m.len() as f64 + k.logdet() - l.gram_logdet()))
}

/// `KL(q(u) || p(u))`.
///
/// Whitened distributions are compared with `N(0, I)` and `kuu` is ignored.
/// Otherwise `kuu` is required; block-diagonal `Kuu` with a blocked `q`
/// decomposes into one KL per latent block.
pub fn gauss_kl(q: &VariationalGaussian, kuu: Option<&StructuredPSD>) -> Result<f64> {
    if q.whiten {
        return Ok(match &q.q_sqrt {
            QSqrt::Full(l) => whitened_kl(&q.q_mu, l),
            QSqrt::Blocks(_) => q.blocks()?.into_iter().map(|(m, l)| whitened_kl(m, l)).sum(),
        });
    }
    let kuu = kuu.ok_or_else(|| Error::InvalidParameter("an unwhitened KL needs Kuu".into()))?;
    match (kuu, &q.q_sqrt) {
        (StructuredPSD::BlockDiagonal(b), QSqrt::Blocks(_)) => {
            let factor = kuu.factor()?;
            let blocks = q.blocks()?;
            if blocks.len() != b.num_blocks() {
                return Err(Error::ShapeMismatch(format!("{} q blocks for {} Kuu blocks", blocks.len(), b.num_blocks())));
            }
            blocks
                .into_iter()
                .enumerate()
                .map(|(i, (m, l))| factored_kl(m, l, &StructuredFactor::Dense(factor.block(i).clone())))
                .sum()
        }
        _ => factored_kl(&q.q_mu, &q.full_sqrt(), &kuu.factor()?),
    }
}

/// KL term of the bound for a given inducing variable and kernel; `Kuu` is
/// only built for unwhitened `q`.
pub fn prior_kl(d: &Dispatcher, iv: &InducingVariable, kernel: &Kernel, q: &VariationalGaussian, jitter: f64) -> Result<f64> {
    if q.whiten {
        return gauss_kl(q, None);
    }
    let kuu = d.kuu(iv, kernel, jitter)?;
    gauss_kl(q, Some(&kuu))
}
