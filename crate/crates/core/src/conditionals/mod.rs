//! Posterior moments `q(f(X))` in the four covariance layouts, one efficient
//! routine per structure class, selected through the dispatcher.

mod base;
mod paths;
mod sample;

use serde::{Deserialize, Serialize};

pub use base::{base_conditional, Knn};
pub use paths::{
    fully_correlated_conditional, fully_correlated_path, independent_path, mixed_latent_path, single_output_path,
    uses_full_tensor, MultioutputKnn, FULL_TENSOR_CUTOFF,
};
pub use sample::{psd_sqrt, sample_conditional, sample_from_moments};

use crate::covariances::Dispatcher;
use crate::error::{Error, Result};
use crate::inducing::InducingVariable;
use crate::kernels::Kernel;
use crate::numerics::{DenseMatrix, LowerTriangular, DEFAULT_JITTER};

/// Square root of the variational covariance: one dense factor, or one
/// factor per latent process (mean-field across latents).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum QSqrt {
    Full(LowerTriangular),
    Blocks(Vec<LowerTriangular>),
}

impl QSqrt {
    pub fn dim(&self) -> usize {
        match self {
            QSqrt::Full(l) => l.dim(),
            QSqrt::Blocks(b) => b.iter().map(LowerTriangular::dim).sum(),
        }
    }
}

/// Free-form Gaussian `q(u) = N(m, S)` with `S = q_sqrt q_sqrt^T`.
///
/// With `whiten` the parameters describe `v` where `u = L v`, `L L^T = Kuu`.
/// `q_mu` is stacked; block paths read latent `l` from its own contiguous range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalGaussian {
    pub q_mu: Vec<f64>,
    pub q_sqrt: QSqrt,
    pub whiten: bool,
}

impl VariationalGaussian {
    pub fn new(q_mu: Vec<f64>, q_sqrt: QSqrt, whiten: bool) -> Result<Self> {
        if q_mu.len() != q_sqrt.dim() {
            return Err(Error::DimensionMismatch(format!("q_mu has {} entries, q_sqrt is {}", q_mu.len(), q_sqrt.dim())));
        }
        Ok(VariationalGaussian { q_mu, q_sqrt, whiten })
    }

    /// Zero mean, identity square root.
    pub fn standard(m: usize, whiten: bool) -> Self {
        VariationalGaussian { q_mu: vec![0.0; m], q_sqrt: QSqrt::Full(LowerTriangular::identity(m)), whiten }
    }

    /// Zero mean, identity square-root blocks of the given sizes.
    pub fn standard_blocks(sizes: &[usize], whiten: bool) -> Self {
        VariationalGaussian {
            q_mu: vec![0.0; sizes.iter().sum()],
            q_sqrt: QSqrt::Blocks(sizes.iter().map(|&m| LowerTriangular::identity(m)).collect()),
            whiten,
        }
    }

    /// Default initialisation for a model: standard form, blocked when the
    /// inducing variable has latent structure.
    pub fn initial(iv: &InducingVariable, kernel: &Kernel, whiten: bool) -> Self {
        match iv.block_sizes(kernel) {
            Some(sizes) => Self::standard_blocks(&sizes, whiten),
            None => Self::standard(iv.num_inducing(kernel), whiten),
        }
    }

    pub fn num_inducing(&self) -> usize {
        self.q_mu.len()
    }

    /// `q_sqrt` as one lower triangle (block-diagonal when blocked).
    pub fn full_sqrt(&self) -> LowerTriangular {
        match &self.q_sqrt {
            QSqrt::Full(l) => l.clone(),
            QSqrt::Blocks(b) => LowerTriangular::block_diag(b),
        }
    }

    /// `S = q_sqrt q_sqrt^T`.
    pub fn covariance(&self) -> DenseMatrix {
        self.full_sqrt().gram()
    }

    /// Latent-block views `(q_mu range, factor)`.
    pub fn blocks(&self) -> Result<Vec<(&[f64], &LowerTriangular)>> {
        let QSqrt::Blocks(b) = &self.q_sqrt else {
            return Err(Error::ShapeMismatch("latent paths need a block-diagonal q_sqrt".into()));
        };
        let mut off = 0;
        Ok(b.iter()
            .map(|l| {
                let r = (&self.q_mu[off..off + l.dim()], l);
                off += l.dim();
                r
            })
            .collect())
    }
}

/// Covariance of the predictive in one of the four layouts.
#[derive(Clone, Debug, PartialEq)]
pub enum PosteriorCov {
    /// `N x P x N x P` stored as `(N*P) x (N*P)`.
    Full(DenseMatrix),
    /// `P x N x N`.
    PerOutput(Vec<DenseMatrix>),
    /// `N x P x P` stored as `(N*P) x P`.
    PerPoint(DenseMatrix),
    /// `N x P`.
    Marginal(DenseMatrix),
}

/// Predictive mean (`N x P`) and covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMoments {
    pub mean: DenseMatrix,
    pub cov: PosteriorCov,
}

impl PosteriorMoments {
    pub fn num_points(&self) -> usize {
        self.mean.rows()
    }

    pub fn num_outputs(&self) -> usize {
        self.mean.cols()
    }

    /// `(full_cov, full_output_cov)` of the stored covariance.
    pub fn flags(&self) -> (bool, bool) {
        match self.cov {
            PosteriorCov::Full(_) => (true, true),
            PosteriorCov::PerOutput(_) => (true, false),
            PosteriorCov::PerPoint(_) => (false, true),
            PosteriorCov::Marginal(_) => (false, false),
        }
    }

    /// Logical covariance shape: `[N,P,N,P]`, `[P,N,N]`, `[N,P,P]` or `[N,P]`.
    pub fn cov_shape(&self) -> Vec<usize> {
        let (n, p) = self.mean.shape();
        match &self.cov {
            PosteriorCov::Full(m) => {
                debug_assert_eq!(m.shape(), (n * p, n * p));
                vec![n, p, n, p]
            }
            PosteriorCov::PerOutput(v) => vec![v.len(), v.first().map_or(n, DenseMatrix::rows), v.first().map_or(n, DenseMatrix::cols)],
            PosteriorCov::PerPoint(m) => vec![m.rows() / p.max(1), p, m.cols()],
            PosteriorCov::Marginal(m) => vec![m.rows(), m.cols()],
        }
    }

    /// Marginal variances `N x P`, whatever the stored layout.
    pub fn marginal_variances(&self) -> DenseMatrix {
        let (n, p) = self.mean.shape();
        match &self.cov {
            PosteriorCov::Full(m) => DenseMatrix::from_fn(n, p, |i, a| m[(i * p + a, i * p + a)]),
            PosteriorCov::PerOutput(v) => DenseMatrix::from_fn(n, p, |i, a| v[a][(i, i)]),
            PosteriorCov::PerPoint(m) => DenseMatrix::from_fn(n, p, |i, a| m[(i * p + a, a)]),
            PosteriorCov::Marginal(m) => m.clone(),
        }
    }

    /// `P x P` covariance at point `n`, when the layout carries it.
    pub fn point_covariance(&self, i: usize) -> Option<DenseMatrix> {
        let p = self.mean.cols();
        match &self.cov {
            PosteriorCov::Full(m) => Some(m.block(i * p, i * p, p, p)),
            PosteriorCov::PerPoint(m) => Some(m.block(i * p, 0, p, p)),
            _ => None,
        }
    }

    /// Reduces a full-tensor result to the requested layout.
    pub fn into_mode(self, full_cov: bool, full_output_cov: bool) -> Result<Self> {
        if self.flags() == (full_cov, full_output_cov) {
            return Ok(self);
        }
        let (n, p) = self.mean.shape();
        let PosteriorCov::Full(m) = &self.cov else {
            if !full_cov && !full_output_cov {
                return Ok(PosteriorMoments { cov: PosteriorCov::Marginal(self.marginal_variances()), mean: self.mean });
            }
            return Err(Error::UnsupportedMode(format!("cannot derive {:?} from {:?}", (full_cov, full_output_cov), self.flags())));
        };
        let cov = match (full_cov, full_output_cov) {
            (true, false) => PosteriorCov::PerOutput(
                (0..p).map(|a| DenseMatrix::from_fn(n, n, |i, j| m[(i * p + a, j * p + a)])).collect(),
            ),
            (false, true) => {
                let mut d = DenseMatrix::zeros(n * p, p);
                for i in 0..n {
                    for a in 0..p {
                        for b in 0..p {
                            d[(i * p + a, b)] = m[(i * p + a, i * p + b)];
                        }
                    }
                }
                PosteriorCov::PerPoint(d)
            }
            _ => PosteriorCov::Marginal(self.marginal_variances()),
        };
        Ok(PosteriorMoments { mean: self.mean, cov })
    }

    /// Adds a function to the mean in place.
    pub fn shift_mean(&mut self, offset: &DenseMatrix) -> Result<()> {
        self.mean = self.mean.add(offset)?;
        Ok(())
    }
}

/// Everything a conditional implementation needs.
#[derive(Clone, Copy, Debug)]
pub struct ConditionalRequest<'a> {
    pub xnew: &'a DenseMatrix,
    pub iv: &'a InducingVariable,
    pub kernel: &'a Kernel,
    pub q: &'a VariationalGaussian,
    pub full_cov: bool,
    pub full_output_cov: bool,
    /// Absolute diagonal jitter added to `Kuu`.
    pub jitter: f64,
}

impl<'a> ConditionalRequest<'a> {
    pub fn new(xnew: &'a DenseMatrix, iv: &'a InducingVariable, kernel: &'a Kernel, q: &'a VariationalGaussian) -> Self {
        ConditionalRequest { xnew, iv, kernel, q, full_cov: false, full_output_cov: false, jitter: DEFAULT_JITTER }
    }

    pub fn full_cov(mut self, on: bool) -> Self {
        self.full_cov = on;
        self
    }

    pub fn full_output_cov(mut self, on: bool) -> Self {
        self.full_output_cov = on;
        self
    }

    pub fn jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }
}

/// `q(f(Xnew))` through the process-wide dispatcher.
pub fn conditional(
    xnew: &DenseMatrix,
    iv: &InducingVariable,
    kernel: &Kernel,
    q: &VariationalGaussian,
    full_cov: bool,
    full_output_cov: bool,
) -> Result<PosteriorMoments> {
    let req = ConditionalRequest::new(xnew, iv, kernel, q).full_cov(full_cov).full_output_cov(full_output_cov);
    Dispatcher::global().conditional(&req)
}
