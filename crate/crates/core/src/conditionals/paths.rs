use crate::covariances::{Dispatcher, KufResult};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, MultioutputKernel, OutputDiag, OutputGram};
use crate::numerics::{DenseMatrix, LowerTriangular, StructuredFactor, StructuredPSD};

use super::base::{conditional_core, single_output_moments, CovPart, Knn};
use super::{ConditionalRequest, PosteriorCov, PosteriorMoments, VariationalGaussian};

/// Largest `N * P` for which mixed-mode fully-correlated conditionals build
/// the whole `NP x NP` tensor before slicing. Above it they stream per output
/// or per point.
pub const FULL_TENSOR_CUTOFF: usize = 512;

pub fn uses_full_tensor(n: usize, p: usize) -> bool {
    n * p <= FULL_TENSOR_CUTOFF
}

fn check_q(q: &VariationalGaussian, m: usize) -> Result<()> {
    if q.num_inducing() != m {
        return Err(Error::ShapeMismatch(format!("q has {} inducing variables, the model needs {m}", q.num_inducing())));
    }
    Ok(())
}

fn multioutput(kernel: &Kernel) -> Result<&MultioutputKernel> {
    kernel
        .as_multioutput()
        .ok_or_else(|| Error::UnsupportedCombination(format!("{} is not a multioutput kernel", kernel.tag())))
}

/// Scalar-process conditional, reported with one output column.
pub fn single_output_path(d: &Dispatcher, req: &ConditionalRequest<'_>) -> Result<PosteriorMoments> {
    let lkk = d.kuu(req.iv, req.kernel, req.jitter)?.factor()?.to_lower();
    let kmn = d.kuf(req.iv, req.kernel, req.xnew)?.into_single()?;
    check_q(req.q, kmn.rows())?;
    let knn = if req.full_cov {
        Knn::Full(req.kernel.k_full(req.xnew, None)?)
    } else {
        Knn::Diag(req.kernel.k_diag(req.xnew)?)
    };
    let lq = req.q.full_sqrt();
    let (mean, cov) = conditional_core(&kmn, &lkk, &knn, &req.q.q_mu, Some(&lq), req.q.whiten)?;
    Ok(single_output_moments(mean, cov, req.full_cov, req.full_output_cov))
}

/// Prior covariance at the test points for the fully-correlated routine.
#[derive(Clone, Debug, PartialEq)]
pub enum MultioutputKnn {
    /// `(N*P) x (N*P)`.
    Full(DenseMatrix),
    /// `P x N x N`.
    PerOutput(Vec<DenseMatrix>),
    /// `(N*P) x P`.
    PerPoint(DenseMatrix),
    /// `N x P`.
    Marginal(DenseMatrix),
}

fn flat_to_matrix(v: Vec<f64>, n: usize, p: usize) -> DenseMatrix {
    DenseMatrix::from_vec(n, p, v).expect("length n*p")
}

/// Conditional of a process whose inducing variables correlate with every
/// output. `kmn` is `M̃ x (N*P)` with column `n*P + p`.
///
/// A full `Knn` yields the whole tensor, then reduced to the requested layout.
/// `PerOutput` / `PerPoint` inputs are processed one output or one point at a
/// time and only produce the matching layout.
#[allow(clippy::too_many_arguments)]
pub fn fully_correlated_conditional(
    kmn: &DenseMatrix,
    n: usize,
    p: usize,
    lkk: &LowerTriangular,
    knn: &MultioutputKnn,
    q: &VariationalGaussian,
    full_cov: bool,
    full_output_cov: bool,
) -> Result<PosteriorMoments> {
    if kmn.cols() != n * p {
        return Err(Error::DimensionMismatch(format!("Kmn has {} columns for N={n}, P={p}", kmn.cols())));
    }
    let lq = q.full_sqrt();
    let core = |cols: &DenseMatrix, k: &Knn| conditional_core(cols, lkk, k, &q.q_mu, Some(&lq), q.whiten);
    match knn {
        MultioutputKnn::Full(k) => {
            let (mean, cov) = if full_cov || full_output_cov {
                core(kmn, &Knn::Full(k.clone()))?
            } else {
                core(kmn, &Knn::Diag(k.diag()))?
            };
            let mean = flat_to_matrix(mean, n, p);
            match cov {
                CovPart::Full(c) => PosteriorMoments { mean, cov: PosteriorCov::Full(c) }.into_mode(full_cov, full_output_cov),
                CovPart::Diag(v) => Ok(PosteriorMoments { mean, cov: PosteriorCov::Marginal(flat_to_matrix(v, n, p)) }),
            }
        }
        MultioutputKnn::Marginal(k) => {
            if full_cov || full_output_cov {
                return Err(Error::UnsupportedMode("marginal Knn only supports the N x P layout".into()));
            }
            let (mean, cov) = core(kmn, &Knn::Diag(k.as_slice().to_vec()))?;
            Ok(PosteriorMoments { mean: flat_to_matrix(mean, n, p), cov: PosteriorCov::Marginal(flat_to_matrix(cov.diag(), n, p)) })
        }
        MultioutputKnn::PerOutput(grams) => {
            if !(full_cov && !full_output_cov) || grams.len() != p {
                return Err(Error::UnsupportedMode("per-output Knn only supports the P x N x N layout".into()));
            }
            let mut mean = DenseMatrix::zeros(n, p);
            let mut covs = Vec::with_capacity(p);
            for (a, g) in grams.iter().enumerate() {
                let idx: Vec<usize> = (0..n).map(|i| i * p + a).collect();
                let cols = kmn.select(&(0..kmn.rows()).collect::<Vec<_>>(), &idx);
                let (mu, cov) = core(&cols, &Knn::Full(g.clone()))?;
                for (i, v) in mu.into_iter().enumerate() {
                    mean[(i, a)] = v;
                }
                let CovPart::Full(c) = cov else { unreachable!("full Knn gives full covariance") };
                covs.push(c);
            }
            Ok(PosteriorMoments { mean, cov: PosteriorCov::PerOutput(covs) })
        }
        MultioutputKnn::PerPoint(blocks) => {
            if !(!full_cov && full_output_cov) || blocks.shape() != (n * p, p) {
                return Err(Error::UnsupportedMode("per-point Knn only supports the N x P x P layout".into()));
            }
            let mut mean = DenseMatrix::zeros(n, p);
            let mut out = DenseMatrix::zeros(n * p, p);
            let rows: Vec<usize> = (0..kmn.rows()).collect();
            for i in 0..n {
                let idx: Vec<usize> = (i * p..(i + 1) * p).collect();
                let cols = kmn.select(&rows, &idx);
                let (mu, cov) = core(&cols, &Knn::Full(blocks.block(i * p, 0, p, p)))?;
                mean.row_mut(i).copy_from_slice(&mu);
                let CovPart::Full(c) = cov else { unreachable!("full Knn gives full covariance") };
                for a in 0..p {
                    out.row_mut(i * p + a).copy_from_slice(c.row(a));
                }
            }
            Ok(PosteriorMoments { mean, cov: PosteriorCov::PerPoint(out) })
        }
    }
}

/// Inducing points of a multioutput kernel: `M * P` inducing outputs that
/// covary with every predicted output.
pub fn fully_correlated_path(d: &Dispatcher, req: &ConditionalRequest<'_>) -> Result<PosteriorMoments> {
    let mo = multioutput(req.kernel)?;
    let lkk = d.kuu(req.iv, req.kernel, req.jitter)?.factor()?.to_lower();
    let KufResult::FullyCorrelated { n, p, data, .. } = d.kuf(req.iv, req.kernel, req.xnew)? else {
        return Err(Error::ShapeMismatch("fully-correlated conditional needs an M x P x N x P Kuf".into()));
    };
    check_q(req.q, data.rows())?;
    let x = req.xnew;
    let knn = match (req.full_cov, req.full_output_cov) {
        (false, false) => match mo.mo_k_diag(x, false)? {
            OutputDiag::Marginal(m) => MultioutputKnn::Marginal(m),
            _ => unreachable!("marginal requested"),
        },
        (true, true) => MultioutputKnn::Full(full_gram(mo, x)?),
        _ if uses_full_tensor(n, p) => MultioutputKnn::Full(full_gram(mo, x)?),
        (true, false) => MultioutputKnn::PerOutput(mo.per_output_grams(x, None)?),
        (false, true) => match mo.mo_k_diag(x, true)? {
            OutputDiag::Full { data, .. } => MultioutputKnn::PerPoint(data),
            _ => unreachable!("full output covariance requested"),
        },
    };
    fully_correlated_conditional(&data, n, p, &lkk, &knn, req.q, req.full_cov, req.full_output_cov)
}

fn full_gram(mo: &MultioutputKernel, x: &DenseMatrix) -> Result<DenseMatrix> {
    match mo.mo_k(x, None, true)? {
        OutputGram::Full { data, .. } => Ok(data),
        _ => unreachable!("full output covariance requested"),
    }
}

/// Moments of each latent process under its own block of `q`.
fn latent_moments(d: &Dispatcher, req: &ConditionalRequest<'_>) -> Result<(Vec<Vec<f64>>, Vec<CovPart>)> {
    let mo = multioutput(req.kernel)?;
    let l = mo.num_latents().ok_or_else(|| Error::UnsupportedCombination("kernel has no latent processes".into()))?;
    let kuu = d.kuu(req.iv, req.kernel, req.jitter)?;
    if !matches!(kuu, StructuredPSD::BlockDiagonal(_)) {
        return Err(Error::ShapeMismatch("latent paths need a block-diagonal Kuu".into()));
    }
    let factor = kuu.factor()?;
    let StructuredFactor::Blocks { .. } = &factor else { unreachable!("block Kuu factors blockwise") };
    let KufResult::Latent(kufs) = d.kuf(req.iv, req.kernel, req.xnew)? else {
        return Err(Error::ShapeMismatch("latent paths need an L x M x N Kuf".into()));
    };
    let blocks = req.q.blocks()?;
    if blocks.len() != l || kufs.len() != l || factor.num_blocks() != l {
        return Err(Error::ShapeMismatch(format!(
            "{l} latent processes but q has {} blocks and Kuf {}",
            blocks.len(),
            kufs.len()
        )));
    }
    let knn_of = |i: usize| -> Result<Knn> {
        let k = mo.latent_kernel(i).expect("index in range");
        Ok(if req.full_cov { Knn::Full(k.k_full(req.xnew, None)?) } else { Knn::Diag(k.k_diag(req.xnew)?) })
    };
    let shared_knn = if mo.latents_share_kernel() { Some(knn_of(0)?) } else { None };
    let mut means = Vec::with_capacity(l);
    let mut covs = Vec::with_capacity(l);
    for (i, (mu, lq)) in blocks.into_iter().enumerate() {
        let knn = match &shared_knn {
            Some(k) => k.clone(),
            None => knn_of(i)?,
        };
        if kufs[i].rows() != lq.dim() {
            return Err(Error::ShapeMismatch(format!("latent {i}: Kuf has {} rows, q block {}", kufs[i].rows(), lq.dim())));
        }
        let (m, c) = conditional_core(&kufs[i], factor.block(i), &knn, mu, Some(lq), req.q.whiten)?;
        means.push(m);
        covs.push(c);
    }
    Ok((means, covs))
}

/// Combines latent moments into output moments, `f = W g`. Without `W`
/// each latent is one output.
fn mix(means: &[Vec<f64>], covs: &[CovPart], w: Option<&DenseMatrix>, full_cov: bool, full_output_cov: bool) -> PosteriorMoments {
    let l = means.len();
    let n = means[0].len();
    let p = w.map_or(l, DenseMatrix::rows);
    let coef = |a: usize, j: usize| match w {
        Some(w) => w[(a, j)],
        None => f64::from(u8::from(a == j)),
    };
    let mean = DenseMatrix::from_fn(n, p, |i, a| (0..l).map(|j| coef(a, j) * means[j][i]).sum());
    let cov = match (full_cov, full_output_cov) {
        (false, false) => {
            let diags: Vec<Vec<f64>> = covs.iter().map(CovPart::diag).collect();
            PosteriorCov::Marginal(DenseMatrix::from_fn(n, p, |i, a| (0..l).map(|j| coef(a, j).powi(2) * diags[j][i]).sum()))
        }
        (false, true) => {
            let diags: Vec<Vec<f64>> = covs.iter().map(CovPart::diag).collect();
            let mut out = DenseMatrix::zeros(n * p, p);
            for i in 0..n {
                for a in 0..p {
                    for b in 0..p {
                        out[(i * p + a, b)] = (0..l).map(|j| coef(a, j) * coef(b, j) * diags[j][i]).sum();
                    }
                }
            }
            PosteriorCov::PerPoint(out)
        }
        (true, false) => PosteriorCov::PerOutput(
            (0..p)
                .map(|a| {
                    let mut acc = DenseMatrix::zeros(n, n);
                    for (j, c) in covs.iter().enumerate() {
                        let CovPart::Full(c) = c else { unreachable!("full_cov gives full latent covariances") };
                        let s = coef(a, j).powi(2);
                        if s != 0.0 {
                            acc.as_mut_slice().iter_mut().zip(c.as_slice()).for_each(|(x, y)| *x += s * y);
                        }
                    }
                    acc
                })
                .collect(),
        ),
        (true, true) => {
            let mut out = DenseMatrix::zeros(n * p, n * p);
            for (j, c) in covs.iter().enumerate() {
                let CovPart::Full(c) = c else { unreachable!("full_cov gives full latent covariances") };
                for a in 0..p {
                    for b in 0..p {
                        let s = coef(a, j) * coef(b, j);
                        if s == 0.0 {
                            continue;
                        }
                        for i in 0..n {
                            for k in 0..n {
                                out[(i * p + a, k * p + b)] += s * c[(i, k)];
                            }
                        }
                    }
                }
            }
            PosteriorCov::Full(out)
        }
    };
    PosteriorMoments { mean, cov }
}

/// Independent outputs with their own inducing blocks: `L = P` separate
/// scalar conditionals.
pub fn independent_path(d: &Dispatcher, req: &ConditionalRequest<'_>) -> Result<PosteriorMoments> {
    let (means, covs) = latent_moments(d, req)?;
    Ok(mix(&means, &covs, None, req.full_cov, req.full_output_cov))
}

/// Latent inducing variables of a mixed kernel: latent moments first, then
/// `mean = W mu_g`, `cov = W Sigma_g W^T`.
pub fn mixed_latent_path(d: &Dispatcher, req: &ConditionalRequest<'_>) -> Result<PosteriorMoments> {
    let mo = multioutput(req.kernel)?;
    let (means, covs) = latent_moments(d, req)?;
    Ok(mix(&means, &covs, mo.mixing(), req.full_cov, req.full_output_cov))
}
