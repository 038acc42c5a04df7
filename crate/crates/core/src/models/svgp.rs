use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::{Dataset, MeanFunction};
use crate::conditionals::{ConditionalRequest, PosteriorMoments, QSqrt, VariationalGaussian};
use crate::covariances::{Dispatcher, KufResult};
use crate::divergences::prior_kl;
use crate::error::{Error, Result};
use crate::inducing::InducingVariable;
use crate::kernels::Kernel;
use crate::likelihoods::{Likelihood, Observation};
use crate::numerics::{cho_solve, cholesky, DenseMatrix, LowerTriangular, StructuredFactor, DEFAULT_JITTER};

/// Sparse variational GP: kernel, likelihood, inducing variable and `q(u)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SVGPModel {
    pub kernel: Kernel,
    pub likelihood: Likelihood,
    pub inducing: InducingVariable,
    pub q: VariationalGaussian,
    #[serde(default)]
    pub mean: MeanFunction,
    /// Size of the full training set, for minibatch scaling.
    pub num_data: usize,
    /// Absolute diagonal jitter on `Kuu`.
    pub jitter: f64,
    /// Registry used for every covariance and conditional; the shipped one
    /// when unset.
    #[serde(skip)]
    pub dispatcher: Option<Arc<Dispatcher>>,
}

/// Equality of parameters; the dispatcher is ignored.
impl PartialEq for SVGPModel {
    fn eq(&self, other: &Self) -> bool {
        self.kernel == other.kernel
            && self.likelihood == other.likelihood
            && self.inducing == other.inducing
            && self.q == other.q
            && self.mean == other.mean
            && self.num_data == other.num_data
            && self.jitter == other.jitter
    }
}

/// ELBO gradient with respect to `q_mu` and the packed lower triangle of
/// each `q_sqrt` block (one block for a dense `q_sqrt`).
#[derive(Clone, Debug, PartialEq)]
pub struct QGradient {
    pub q_mu: Vec<f64>,
    pub q_sqrt: Vec<Vec<f64>>,
}

impl SVGPModel {
    /// Model with the default `q(u)` for the inducing variable.
    pub fn new(kernel: Kernel, likelihood: Likelihood, inducing: InducingVariable, num_data: usize, whiten: bool) -> Result<Self> {
        let q = VariationalGaussian::initial(&inducing, &kernel, whiten);
        let model = SVGPModel {
            kernel,
            likelihood,
            inducing,
            q,
            mean: MeanFunction::Zero,
            num_data,
            jitter: DEFAULT_JITTER,
            dispatcher: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_dispatcher(mut self, d: Arc<Dispatcher>) -> Self {
        self.dispatcher = Some(d);
        self
    }

    pub fn dispatcher(&self) -> Arc<Dispatcher> {
        self.dispatcher.clone().unwrap_or_else(Dispatcher::global)
    }

    pub fn num_outputs(&self) -> usize {
        self.kernel.num_outputs()
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.likelihood.validate()?;
        let m = self.inducing.num_inducing(&self.kernel);
        if self.q.num_inducing() != m {
            return Err(Error::DimensionMismatch(format!("q has {} inducing variables, expected {m}", self.q.num_inducing())));
        }
        if let (Some(sizes), QSqrt::Blocks(b)) = (self.inducing.block_sizes(&self.kernel), &self.q.q_sqrt) {
            if sizes != b.iter().map(LowerTriangular::dim).collect::<Vec<_>>() {
                return Err(Error::ShapeMismatch(format!("q blocks do not match latent sizes {sizes:?}")));
            }
        }
        if let Some(p) = self.likelihood.num_outputs() {
            if p != self.num_outputs() {
                return Err(Error::DimensionMismatch(format!("likelihood covers {p} outputs, kernel {}", self.num_outputs())));
            }
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::InvalidParameter(format!("jitter must be non-negative, got {}", self.jitter)));
        }
        Ok(())
    }

    /// `q(f(Xnew))` plus the mean function.
    pub fn predict_f(&self, xnew: &DenseMatrix, full_cov: bool, full_output_cov: bool) -> Result<PosteriorMoments> {
        predict_layer(&self.dispatcher(), &self.kernel, &self.inducing, &self.q, &self.mean, xnew, full_cov, full_output_cov, self.jitter)
    }

    /// Mean and marginal variance of the observations.
    pub fn predict_y(&self, xnew: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
        let f = self.predict_f(xnew, false, false)?;
        let var = f.marginal_variances();
        self.likelihood.predict_observation_moments(&f.mean, &var)
    }

    /// `log p(y_n | data)` under the predictive, per row.
    pub fn predict_log_density(&self, data: &Dataset) -> Result<Vec<f64>> {
        let f = self.predict_f(&data.x, false, self.likelihood.is_output_correlated())?;
        self.likelihood.predict_log_density(&f.mean, &f.cov, &data.y)
    }

    pub fn prior_kl(&self) -> Result<f64> {
        prior_kl(&self.dispatcher(), &self.inducing, &self.kernel, &self.q, self.jitter)
    }

    /// `Σ_n E_q[log p(y_n | f_n)]` over a batch.
    pub fn expected_log_likelihood(&self, batch: &Dataset) -> Result<f64> {
        let f = self.predict_f(&batch.x, false, self.likelihood.is_output_correlated())?;
        Ok(self.likelihood.variational_expectations(&f.mean, &f.cov, &batch.y)?.sum())
    }

    /// `scale * Σ_n E_q[log p(y_n | f_n)] - KL(q(u) || p(u))`; `scale` is
    /// `N / |batch|` for an unbiased minibatch estimate.
    pub fn elbo(&self, batch: &Dataset, scale: f64) -> Result<f64> {
        let value = scale * self.expected_log_likelihood(batch)? - self.prior_kl()?;
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective(value));
        }
        Ok(value)
    }

    /// ELBO with the scale implied by `num_data`.
    pub fn elbo_minibatch(&self, batch: &Dataset) -> Result<f64> {
        self.elbo(batch, self.num_data as f64 / batch.len().max(1) as f64)
    }

    fn gaussian_noise(&self) -> Result<f64> {
        match self.likelihood.observation {
            Observation::Gaussian { variance } => Ok(variance),
            _ => Err(Error::UnsupportedCombination("closed-form q updates need a Gaussian likelihood".into())),
        }
    }

    /// Cross-covariance with every output stacked: `M̃ x (N*P)` with column
    /// `n*P + p`, latent blocks already mixed.
    fn stacked_kuf(&self, d: &Dispatcher, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(match d.kuf(&self.inducing, &self.kernel, x)? {
            KufResult::Single(k) => k,
            KufResult::FullyCorrelated { data, .. } => data,
            KufResult::Latent(blocks) => {
                let p = self.num_outputs();
                let n = x.rows();
                let mixing = self.kernel.as_multioutput().and_then(|k| k.mixing().cloned());
                let coef = |a: usize, l: usize| mixing.as_ref().map_or(f64::from(u8::from(a == l)), |w| w[(a, l)]);
                let rows: usize = blocks.iter().map(DenseMatrix::rows).sum();
                let mut out = DenseMatrix::zeros(rows, n * p);
                let mut off = 0;
                for (l, b) in blocks.iter().enumerate() {
                    for i in 0..b.rows() {
                        for j in 0..n {
                            for a in 0..p {
                                out[(off + i, j * p + a)] = coef(a, l) * b[(i, j)];
                            }
                        }
                    }
                    off += b.rows();
                }
                out
            }
        })
    }

    /// Observed residuals `y - m(x)` and the matching `Kuf` columns.
    fn observed_columns(&self, d: &Dispatcher, data: &Dataset) -> Result<(DenseMatrix, Vec<f64>)> {
        let p = self.num_outputs();
        if data.num_outputs() != p {
            return Err(Error::DimensionMismatch(format!("data has {} outputs, model {p}", data.num_outputs())));
        }
        let kuf = self.stacked_kuf(d, &data.x)?;
        let offset = self.mean.eval(&data.x, p)?;
        let observed: Vec<usize> = (0..data.len() * p).filter(|&j| !data.y.as_slice()[j].is_nan()).collect();
        let resid = observed.iter().map(|&j| data.y.as_slice()[j] - offset.as_slice()[j]).collect();
        Ok((kuf.select(&(0..kuf.rows()).collect::<Vec<_>>(), &observed), resid))
    }

    /// Closed-form optimal `q(u)` for a Gaussian likelihood on the full data,
    /// in this model's whitening convention.
    ///
    /// With `A = L⁻¹ Kuf` and `B = I + σ⁻² A Aᵀ` the whitened optimum is
    /// `N(σ⁻² B⁻¹ A r, B⁻¹)`; `u = L v` maps it back otherwise.
    pub fn optimal_q(&self, data: &Dataset) -> Result<VariationalGaussian> {
        let sigma2 = self.gaussian_noise()?;
        let mixed = self.kernel.as_multioutput().is_some_and(|k| k.mixing().is_some());
        if matches!(self.q.q_sqrt, QSqrt::Blocks(_)) && mixed {
            return Err(Error::UnsupportedCombination("the optimum couples mixed latent blocks".into()));
        }
        let d = self.dispatcher();
        let factor = d.kuu(&self.inducing, &self.kernel, self.jitter)?.factor()?;
        let (kuf, resid) = self.observed_columns(&d, data)?;
        let a = factor.tri_solve(&kuf, false)?;
        let mut b = a.matmul(&a.transpose())?.scaled(1.0 / sigma2);
        b.add_diag(1.0);
        let binv = cho_solve(&cholesky(&b, 0.0)?, &DenseMatrix::identity(b.rows()))?;
        let binv = binv.add(&binv.transpose())?.scaled(0.5);
        let ar = a.matvec(&resid)?;
        let mv = binv.matvec(&ar)?.into_iter().map(|v| v / sigma2).collect::<Vec<_>>();
        let lv = cholesky(&binv, 0.0)?;
        let whitened = match &self.q.q_sqrt {
            QSqrt::Full(_) => VariationalGaussian::new(mv, QSqrt::Full(lv), true)?,
            QSqrt::Blocks(blocks) => {
                let mut off = 0;
                let mut out = Vec::with_capacity(blocks.len());
                for blk in blocks {
                    let k = blk.dim();
                    let idx: Vec<usize> = (off..off + k).collect();
                    out.push(cholesky(&binv.select(&idx, &idx), 0.0)?);
                    off += k;
                }
                VariationalGaussian::new(mv, QSqrt::Blocks(out), true)?
            }
        };
        if self.q.whiten {
            Ok(whitened)
        } else {
            convert_whitening(&whitened, &factor, false)
        }
    }

    /// The same distribution over `u` in the other whitening convention.
    pub fn convert_q(&self, whiten: bool) -> Result<VariationalGaussian> {
        let factor = self.dispatcher().kuu(&self.inducing, &self.kernel, self.jitter)?.factor()?;
        convert_whitening(&self.q, &factor, whiten)
    }

    /// Analytic ELBO gradient with respect to `q` for a Gaussian likelihood.
    ///
    /// The bound is quadratic in `m` and in `q_sqrt` through
    /// `E[(y - f)²] = (r - aᵀm)² + aᵀ S a`, with `a` one column of
    /// `L⁻¹ Kuf` (whitened) or `Kuu⁻¹ Kuf`.
    pub fn q_gradient(&self, batch: &Dataset, scale: f64) -> Result<QGradient> {
        let sigma2 = self.gaussian_noise()?;
        let d = self.dispatcher();
        let factor = d.kuu(&self.inducing, &self.kernel, self.jitter)?.factor()?;
        let (kuf, resid) = self.observed_columns(&d, batch)?;
        let proj = if self.q.whiten { factor.tri_solve(&kuf, false)? } else { factor.solve(&kuf)? };
        let m = &self.q.q_mu;
        let fitted = proj.tr_matmul(&DenseMatrix::column_vector(m))?;
        let err: Vec<f64> = resid.iter().zip(fitted.as_slice()).map(|(r, f)| (r - f) * scale / sigma2).collect();
        let mut grad_m = proj.matvec(&err)?;
        let kl_m = if self.q.whiten { m.clone() } else { factor.solve(&DenseMatrix::column_vector(m))?.into_vec() };
        grad_m.iter_mut().zip(&kl_m).for_each(|(g, k)| *g -= k);

        let l = self.q.full_sqrt().to_dense();
        let data_term = proj.matmul(&proj.transpose())?.matmul(&l)?.scaled(-scale / sigma2);
        let kl_l = if self.q.whiten { l.clone() } else { factor.solve(&l)? };
        let mut g = data_term.sub(&kl_l)?;
        for i in 0..l.rows() {
            g[(i, i)] += 1.0 / l[(i, i)];
        }
        let sizes: Vec<usize> = match &self.q.q_sqrt {
            QSqrt::Full(l) => vec![l.dim()],
            QSqrt::Blocks(b) => b.iter().map(LowerTriangular::dim).collect(),
        };
        let mut off = 0;
        let mut q_sqrt = Vec::with_capacity(sizes.len());
        for k in sizes {
            let idx: Vec<usize> = (off..off + k).collect();
            q_sqrt.push(LowerTriangular::from_dense_lower(&g.select(&idx, &idx))?.packed().to_vec());
            off += k;
        }
        Ok(QGradient { q_mu: grad_m, q_sqrt })
    }
}

/// `u = L v`: maps means by `L` and square roots by the lower-triangular
/// product `L q_sqrt` (or the inverse maps when whitening).
fn convert_whitening(q: &VariationalGaussian, factor: &StructuredFactor, whiten: bool) -> Result<VariationalGaussian> {
    if q.whiten == whiten {
        return Ok(q.clone());
    }
    let mu = DenseMatrix::column_vector(&q.q_mu);
    let q_mu = if whiten { factor.tri_solve(&mu, false)? } else { factor.lower_matmul(&mu)? }.into_vec();
    let map = |l: &LowerTriangular, f: &LowerTriangular| -> Result<LowerTriangular> {
        let out = if whiten { crate::numerics::tri_solve(f, &l.to_dense(), false)? } else { f.matmul(&l.to_dense())? };
        LowerTriangular::from_dense_lower(&out)
    };
    let q_sqrt = match &q.q_sqrt {
        QSqrt::Full(l) => QSqrt::Full(map(l, &factor.to_lower())?),
        QSqrt::Blocks(b) => {
            if factor.num_blocks() != b.len() {
                return Err(Error::ShapeMismatch(format!("{} q blocks for {} Kuu blocks", b.len(), factor.num_blocks())));
            }
            QSqrt::Blocks(b.iter().enumerate().map(|(i, l)| map(l, factor.block(i))).collect::<Result<_>>()?)
        }
    };
    VariationalGaussian::new(q_mu, q_sqrt, whiten)
}

/// Conditional plus mean function for one (kernel, inducing variable, q)
/// triple; shared by the SVGP and each deep GP layer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn predict_layer(
    d: &Dispatcher,
    kernel: &Kernel,
    iv: &InducingVariable,
    q: &VariationalGaussian,
    mean: &MeanFunction,
    xnew: &DenseMatrix,
    full_cov: bool,
    full_output_cov: bool,
    jitter: f64,
) -> Result<PosteriorMoments> {
    let req = ConditionalRequest::new(xnew, iv, kernel, q)
        .full_cov(full_cov)
        .full_output_cov(full_output_cov)
        .jitter(jitter);
    let mut moments = d.conditional(&req)?;
    if !mean.is_zero() {
        let p = moments.num_outputs();
        moments.shift_mean(&mean.eval(xnew, p)?)?;
    }
    Ok(moments)
}
