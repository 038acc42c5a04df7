use serde::{Deserialize, Serialize};

use super::convolutional::ConvolutionalKernel;
use super::single::SingleOutputKernel;
use crate::covariances::{tags, TypeTag};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Matrix-valued covariance functions over `P` outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MultioutputKernel {
    /// One kernel, `P` independent outputs.
    SharedIndependent { base: SingleOutputKernel, num_outputs: usize },
    /// One kernel per output, outputs independent.
    SeparateIndependent { kernels: Vec<SingleOutputKernel> },
    /// `f = W g` with `L` independent latent processes; `W` is `P x L`.
    LinearCoregionalization { kernels: Vec<SingleOutputKernel>, mixing: DenseMatrix },
    /// Coregionalisation where every latent shares one kernel.
    IntrinsicCoregionalization { base: SingleOutputKernel, mixing: DenseMatrix },
    /// One output per image patch, `k_f({x,p},{x',p'}) = k_g(x[p], x'[p'])`.
    Convolutional(ConvolutionalKernel),
}

/// Output of [`MultioutputKernel::mo_k`].
#[derive(Clone, Debug, PartialEq)]
pub enum OutputGram {
    /// `N x P x N2 x P` stored as `(N*P) x (N2*P)`.
    Full { n: usize, n2: usize, p: usize, data: DenseMatrix },
    /// `P x N x N2`: one Gram per output, cross-output terms dropped.
    PerOutput(Vec<DenseMatrix>),
    /// `L x N x N2`: latent Grams of a coregionalisation kernel, unmixed.
    Latent(Vec<DenseMatrix>),
}

/// Output of [`MultioutputKernel::mo_k_diag`].
#[derive(Clone, Debug, PartialEq)]
pub enum OutputDiag {
    /// `N x P x P` stored as `(N*P) x P`; row `n*P + p`.
    Full { n: usize, p: usize, data: DenseMatrix },
    /// `N x P` marginal variances.
    Marginal(DenseMatrix),
}

impl MultioutputKernel {
    pub fn linear_coregionalization(kernels: Vec<SingleOutputKernel>, mixing: DenseMatrix) -> Result<Self> {
        let k = MultioutputKernel::LinearCoregionalization { kernels, mixing };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MultioutputKernel::SharedIndependent { base, num_outputs } => {
                base.validate()?;
                if *num_outputs == 0 {
                    return Err(Error::InvalidParameter("need at least one output".into()));
                }
            }
            MultioutputKernel::SeparateIndependent { kernels } => {
                self.check_latents(kernels)?;
            }
            MultioutputKernel::LinearCoregionalization { kernels, mixing } => {
                self.check_latents(kernels)?;
                if mixing.cols() != kernels.len() || mixing.rows() == 0 {
                    return Err(Error::DimensionMismatch(format!(
                        "mixing matrix is {}x{} for {} latent kernels",
                        mixing.rows(),
                        mixing.cols(),
                        kernels.len()
                    )));
                }
            }
            MultioutputKernel::IntrinsicCoregionalization { base, mixing } => {
                base.validate()?;
                if mixing.cols() == 0 || mixing.rows() == 0 {
                    return Err(Error::DimensionMismatch("empty mixing matrix".into()));
                }
            }
            MultioutputKernel::Convolutional(c) => c.base.validate()?,
        }
        if self.mixing().is_some_and(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("mixing matrix has non-finite entries".into()));
        }
        Ok(())
    }

    fn check_latents(&self, kernels: &[SingleOutputKernel]) -> Result<()> {
        let first = kernels.first().ok_or_else(|| Error::InvalidParameter("need at least one latent kernel".into()))?;
        for k in kernels {
            k.validate()?;
            if k.input_dim != first.input_dim {
                return Err(Error::DimensionMismatch("latent kernels disagree on input dimension".into()));
            }
        }
        Ok(())
    }

    pub fn tag(&self) -> TypeTag {
        match self {
            MultioutputKernel::SharedIndependent { .. } => tags::SHARED_INDEPENDENT,
            MultioutputKernel::SeparateIndependent { .. } => tags::SEPARATE_INDEPENDENT,
            MultioutputKernel::LinearCoregionalization { .. } => tags::LINEAR_COREGIONALIZATION,
            MultioutputKernel::IntrinsicCoregionalization { .. } => tags::INTRINSIC_COREGIONALIZATION,
            MultioutputKernel::Convolutional(_) => tags::CONVOLUTIONAL,
        }
    }

    pub fn num_outputs(&self) -> usize {
        match self {
            MultioutputKernel::SharedIndependent { num_outputs, .. } => *num_outputs,
            MultioutputKernel::SeparateIndependent { kernels } => kernels.len(),
            MultioutputKernel::LinearCoregionalization { mixing, .. }
            | MultioutputKernel::IntrinsicCoregionalization { mixing, .. } => mixing.rows(),
            MultioutputKernel::Convolutional(c) => c.num_patches(),
        }
    }

    /// Number of independent latent processes, if the kernel is built from them.
    pub fn num_latents(&self) -> Option<usize> {
        match self {
            MultioutputKernel::SharedIndependent { num_outputs, .. } => Some(*num_outputs),
            MultioutputKernel::SeparateIndependent { kernels } => Some(kernels.len()),
            MultioutputKernel::LinearCoregionalization { kernels, .. } => Some(kernels.len()),
            MultioutputKernel::IntrinsicCoregionalization { mixing, .. } => Some(mixing.cols()),
            MultioutputKernel::Convolutional(_) => None,
        }
    }

    /// Kernel of latent process `l`.
    pub fn latent_kernel(&self, l: usize) -> Option<&SingleOutputKernel> {
        match self {
            MultioutputKernel::SharedIndependent { base, num_outputs } => (l < *num_outputs).then_some(base),
            MultioutputKernel::SeparateIndependent { kernels }
            | MultioutputKernel::LinearCoregionalization { kernels, .. } => kernels.get(l),
            MultioutputKernel::IntrinsicCoregionalization { base, mixing } => (l < mixing.cols()).then_some(base),
            MultioutputKernel::Convolutional(_) => None,
        }
    }

    /// True when every latent process shares a single kernel.
    pub fn latents_share_kernel(&self) -> bool {
        matches!(
            self,
            MultioutputKernel::SharedIndependent { .. } | MultioutputKernel::IntrinsicCoregionalization { .. }
        )
    }

    /// Mixing matrix `W` (`P x L`) for coregionalisation kernels.
    pub fn mixing(&self) -> Option<&DenseMatrix> {
        match self {
            MultioutputKernel::LinearCoregionalization { mixing, .. }
            | MultioutputKernel::IntrinsicCoregionalization { mixing, .. } => Some(mixing),
            _ => None,
        }
    }

    /// True when outputs can be correlated a priori.
    pub fn has_output_correlation(&self) -> bool {
        matches!(
            self,
            MultioutputKernel::LinearCoregionalization { .. }
                | MultioutputKernel::IntrinsicCoregionalization { .. }
                | MultioutputKernel::Convolutional(_)
        )
    }

    pub fn input_dim(&self) -> usize {
        match self {
            MultioutputKernel::Convolutional(c) => c.input_dim(),
            _ => self.latent_kernel(0).map_or(0, |k| k.input_dim),
        }
    }

    /// Latent Grams `k_l(X, X2)`, one per latent process.
    pub fn latent_grams(&self, x: &DenseMatrix, x2: Option<&DenseMatrix>) -> Result<Vec<DenseMatrix>> {
        let l = self.num_latents().ok_or_else(|| Error::UnsupportedMode("kernel has no latent processes".into()))?;
        if self.latents_share_kernel() {
            let g = self.latent_kernel(0).expect("at least one latent").k_full(x, x2)?;
            return Ok(vec![g; l]);
        }
        (0..l).map(|i| self.latent_kernel(i).expect("index in range").k_full(x, x2)).collect()
    }

    /// Latent marginal variances as an `N x L` matrix.
    pub fn latent_diag(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let l = self.num_latents().ok_or_else(|| Error::UnsupportedMode("kernel has no latent processes".into()))?;
        let cols = (0..l)
            .map(|i| self.latent_kernel(i).expect("index in range").k_diag(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(DenseMatrix::from_fn(x.rows(), l, |n, i| cols[i][n]))
    }

    /// Covariance between all outputs at `X` and `X2`.
    ///
    /// With `full_output_cov` the full `N x P x N2 x P` tensor is returned.
    /// Otherwise independent kernels and the convolutional kernel return one
    /// Gram per output, while coregionalisation kernels return their unmixed
    /// latent Grams (`L x N x N2`).
    pub fn mo_k(&self, x: &DenseMatrix, x2: Option<&DenseMatrix>, full_output_cov: bool) -> Result<OutputGram> {
        let n = x.rows();
        let n2 = x2.map_or(n, DenseMatrix::rows);
        let p = self.num_outputs();
        if let MultioutputKernel::Convolutional(c) = self {
            let g = c.patch_gram(x, x2)?;
            return Ok(if full_output_cov {
                OutputGram::Full { n, n2, p, data: g }
            } else {
                OutputGram::PerOutput(
                    (0..p).map(|q| DenseMatrix::from_fn(n, n2, |i, j| g[(i * p + q, j * p + q)])).collect(),
                )
            });
        }
        let latents = self.latent_grams(x, x2)?;
        if !full_output_cov {
            return Ok(match self.mixing() {
                Some(_) => OutputGram::Latent(latents),
                None => OutputGram::PerOutput(latents),
            });
        }
        let mut data = DenseMatrix::zeros(n * p, n2 * p);
        match self.mixing() {
            None => {
                for (q, g) in latents.iter().enumerate() {
                    for i in 0..n {
                        for j in 0..n2 {
                            data[(i * p + q, j * p + q)] = g[(i, j)];
                        }
                    }
                }
            }
            Some(w) => {
                for (l, g) in latents.iter().enumerate() {
                    for a in 0..p {
                        for b in 0..p {
                            let c = w[(a, l)] * w[(b, l)];
                            if c == 0.0 {
                                continue;
                            }
                            for i in 0..n {
                                for j in 0..n2 {
                                    data[(i * p + a, j * p + b)] += c * g[(i, j)];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(OutputGram::Full { n, n2, p, data })
    }

    /// Per-output Grams `P x N x N2`, mixing latent Grams where needed.
    pub fn per_output_grams(&self, x: &DenseMatrix, x2: Option<&DenseMatrix>) -> Result<Vec<DenseMatrix>> {
        match self.mo_k(x, x2, false)? {
            OutputGram::PerOutput(g) => Ok(g),
            OutputGram::Latent(latents) => {
                let w = self.mixing().expect("latent form implies mixing");
                Ok(mix_marginal_grams(w, &latents))
            }
            OutputGram::Full { .. } => unreachable!("marginal mode never returns the full tensor"),
        }
    }

    /// Covariance between outputs at the same input.
    pub fn mo_k_diag(&self, x: &DenseMatrix, full_output_cov: bool) -> Result<OutputDiag> {
        let n = x.rows();
        let p = self.num_outputs();
        if let MultioutputKernel::Convolutional(c) = self {
            let patches = super::convolutional::extract_patches(x, &c.geometry)?;
            let mut data = DenseMatrix::zeros(n * p, p);
            for i in 0..n {
                let block = patches.block(i * p, 0, p, c.geometry.patch_size());
                let g = c.base.k_full(&block, None)?;
                for a in 0..p {
                    data.row_mut(i * p + a).copy_from_slice(g.row(a));
                }
            }
            return Ok(if full_output_cov {
                OutputDiag::Full { n, p, data }
            } else {
                OutputDiag::Marginal(DenseMatrix::from_fn(n, p, |i, a| data[(i * p + a, a)]))
            });
        }
        let latent = self.latent_diag(x)?;
        match (self.mixing(), full_output_cov) {
            (None, false) => Ok(OutputDiag::Marginal(latent)),
            (None, true) => {
                let mut data = DenseMatrix::zeros(n * p, p);
                for i in 0..n {
                    for a in 0..p {
                        data[(i * p + a, a)] = latent[(i, a)];
                    }
                }
                Ok(OutputDiag::Full { n, p, data })
            }
            (Some(w), false) => Ok(OutputDiag::Marginal(mix_marginal_diag(w, &latent))),
            (Some(w), true) => Ok(OutputDiag::Full { n, p, data: mix_full_diag(w, &latent) }),
        }
    }
}

/// `sum_l W_pl^2 K_l` for every output `p`.
pub fn mix_marginal_grams(w: &DenseMatrix, latents: &[DenseMatrix]) -> Vec<DenseMatrix> {
    (0..w.rows())
        .map(|p| {
            let (r, c) = latents[0].shape();
            let mut acc = DenseMatrix::zeros(r, c);
            for (l, g) in latents.iter().enumerate() {
                let c2 = w[(p, l)] * w[(p, l)];
                acc.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(a, b)| *a += c2 * b);
            }
            acc
        })
        .collect()
}

/// `N x L` latent variances to `N x P` output variances.
pub fn mix_marginal_diag(w: &DenseMatrix, latent: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(latent.rows(), w.rows(), |n, p| {
        (0..w.cols()).map(|l| w[(p, l)] * w[(p, l)] * latent[(n, l)]).sum()
    })
}

/// `N x L` latent variances to `N x P x P` output covariances, `(N*P) x P`.
pub fn mix_full_diag(w: &DenseMatrix, latent: &DenseMatrix) -> DenseMatrix {
    let p = w.rows();
    let n = latent.rows();
    let mut data = DenseMatrix::zeros(n * p, p);
    for i in 0..n {
        for a in 0..p {
            for b in 0..p {
                data[(i * p + a, b)] = (0..w.cols()).map(|l| w[(a, l)] * latent[(i, l)] * w[(b, l)]).sum();
            }
        }
    }
    data
}
