//! Observation models and expected log-likelihoods under Gaussian marginals
//! of the latent function.
//!
//! Missing observations are `NaN` entries of `Y`; they contribute nothing,
//! and a correlated Gaussian is marginalised onto the observed outputs.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::conditionals::{psd_sqrt, PosteriorCov, PosteriorMoments};
use crate::error::{Error, Result};
use crate::numerics::{
    cholesky, gauss_hermite_nodes, gaussian_expectation, log_normal_cdf, normal_cdf, symmetric_eigenvalues, tri_solve,
    DenseMatrix, RngState,
};

pub const DEFAULT_QUADRATURE_NODES: usize = 20;

/// Observation model `p(y | f)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Gaussian { variance: f64 },
    /// Noise covariance shared by all points, over `P` outputs.
    CorrelatedGaussian { cov: DenseMatrix },
    /// Probit link, `y` in `{0, 1}`.
    Bernoulli,
    /// Exponential link, `y` a non-negative count.
    Poisson,
}

/// How expectations over `q(f)` are computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    ClosedForm,
    GaussHermite(usize),
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Likelihood {
    pub observation: Observation,
    pub strategy: Strategy,
}

/// Per-point expected log-likelihoods, with standard errors for Monte Carlo.
#[derive(Clone, Debug, PartialEq)]
pub struct Expectations {
    pub values: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
}

impl Expectations {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn gaussian_log_density(y: f64, f: f64, variance: f64) -> f64 {
    -0.5 * (2.0 * PI * variance).ln() - 0.5 * (y - f) * (y - f) / variance
}

fn poisson_log_density(y: f64, f: f64) -> f64 {
    y * f - f.exp() - libm::lgamma(y + 1.0)
}

fn bernoulli_log_density(y: f64, f: f64) -> f64 {
    log_normal_cdf(if y > 0.5 { f } else { -f })
}

impl Likelihood {
    /// Gaussian noise with the closed-form expectation.
    pub fn gaussian(variance: f64) -> Result<Self> {
        Self::with_strategy(Observation::Gaussian { variance }, Strategy::ClosedForm)
    }

    pub fn correlated_gaussian(cov: DenseMatrix) -> Result<Self> {
        Self::with_strategy(Observation::CorrelatedGaussian { cov }, Strategy::ClosedForm)
    }

    pub fn bernoulli() -> Self {
        Likelihood { observation: Observation::Bernoulli, strategy: Strategy::GaussHermite(DEFAULT_QUADRATURE_NODES) }
    }

    pub fn poisson() -> Self {
        Likelihood { observation: Observation::Poisson, strategy: Strategy::ClosedForm }
    }

    pub fn with_strategy(observation: Observation, strategy: Strategy) -> Result<Self> {
        let lik = Likelihood { observation, strategy };
        lik.validate()?;
        Ok(lik)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.observation {
            Observation::Gaussian { variance } if !(*variance > 0.0 && variance.is_finite()) => {
                return Err(Error::InvalidParameter(format!("noise variance must be positive, got {variance}")));
            }
            Observation::CorrelatedGaussian { cov } => {
                if !cov.is_square() || cov.rows() == 0 {
                    return Err(Error::NonSquare { rows: cov.rows(), cols: cov.cols() });
                }
                let scale = cov.max_abs().max(f64::MIN_POSITIVE);
                if cov.asymmetry() > 1e-12 * scale {
                    return Err(Error::AsymmetricInput { deviation: cov.asymmetry() });
                }
                if symmetric_eigenvalues(cov)[0] < -1e-12 * scale {
                    return Err(Error::InvalidParameter("noise covariance is not PSD".into()));
                }
            }
            _ => {}
        }
        match self.strategy {
            Strategy::GaussHermite(0) | Strategy::MonteCarlo { samples: 0, .. } => {
                Err(Error::InvalidParameter("strategy needs at least one node or sample".into()))
            }
            _ => Ok(()),
        }
    }

    /// Whether outputs at the same point are coupled, so expectations need
    /// `P x P` marginals.
    pub fn is_output_correlated(&self) -> bool {
        matches!(self.observation, Observation::CorrelatedGaussian { .. })
    }

    /// Number of outputs the likelihood is tied to, if any.
    pub fn num_outputs(&self) -> Option<usize> {
        match &self.observation {
            Observation::CorrelatedGaussian { cov } => Some(cov.rows()),
            _ => None,
        }
    }

    /// `log p(y | f)` for one scalar output of a factorised likelihood.
    pub fn log_density(&self, y: f64, f: f64) -> Result<f64> {
        match &self.observation {
            Observation::Gaussian { variance } => Ok(gaussian_log_density(y, f, *variance)),
            Observation::Bernoulli => Ok(bernoulli_log_density(y, f)),
            Observation::Poisson => Ok(poisson_log_density(y, f)),
            Observation::CorrelatedGaussian { .. } => {
                Err(Error::UnsupportedCombination("correlated Gaussian has no scalar log density".into()))
            }
        }
    }

    /// `log p(y_n | f_n)` for every row, skipping `NaN` outputs.
    pub fn log_density_rows(&self, f: &DenseMatrix, y: &DenseMatrix) -> Result<Vec<f64>> {
        check_same_shape(f, y)?;
        if let Observation::CorrelatedGaussian { cov } = &self.observation {
            check_outputs(cov, y.cols())?;
            return (0..y.rows()).map(|n| correlated_log_density(cov, f.row(n), y.row(n), None)).collect();
        }
        (0..y.rows())
            .map(|n| {
                let mut total = 0.0;
                for (&yv, &fv) in y.row(n).iter().zip(f.row(n)) {
                    if !yv.is_nan() {
                        total += self.log_density(yv, fv)?;
                    }
                }
                Ok(total)
            })
            .collect()
    }

    /// `E_q(f_n)[log p(y_n | f_n)]` for each of the `N` points.
    ///
    /// `fvar` is `N x P` marginals or `N x P x P` per-point covariances; only
    /// the correlated Gaussian takes the latter.
    pub fn variational_expectations(&self, fmu: &DenseMatrix, fvar: &PosteriorCov, y: &DenseMatrix) -> Result<Expectations> {
        check_same_shape(fmu, y)?;
        let (n, p) = y.shape();
        match fvar {
            PosteriorCov::Marginal(v) => {
                if v.shape() != (n, p) {
                    return Err(Error::ShapeMismatch(format!("Fvar is {:?}, Fmu is {:?}", v.shape(), (n, p))));
                }
                if self.is_output_correlated() {
                    return Err(Error::ShapeMismatch("a correlated Gaussian needs N x P x P Fvar".into()));
                }
            }
            PosteriorCov::PerPoint(v) => {
                if v.shape() != (n * p, p) {
                    return Err(Error::ShapeMismatch(format!("Fvar is {:?}, expected {:?}", v.shape(), (n * p, p))));
                }
                if !self.is_output_correlated() {
                    return Err(match self.strategy {
                        Strategy::GaussHermite(_) => Error::UnsupportedCombination(
                            "Gauss-Hermite quadrature is per output; pass N x P marginals".into(),
                        ),
                        _ => Error::ShapeMismatch("factorised likelihoods take N x P Fvar".into()),
                    });
                }
            }
            _ => return Err(Error::ShapeMismatch("Fvar must be N x P or N x P x P".into())),
        }
        match (&self.observation, self.strategy) {
            (Observation::CorrelatedGaussian { cov }, Strategy::ClosedForm) => {
                check_outputs(cov, p)?;
                let PosteriorCov::PerPoint(v) = fvar else { unreachable!() };
                let values = (0..n)
                    .map(|i| correlated_log_density(cov, fmu.row(i), y.row(i), Some(&v.block(i * p, 0, p, p))))
                    .collect::<Result<_>>()?;
                Ok(Expectations { values, std_errors: None })
            }
            (Observation::CorrelatedGaussian { .. }, Strategy::GaussHermite(_)) => Err(Error::UnsupportedCombination(
                "correlated Gaussian with a per-output quadrature".into(),
            )),
            (_, Strategy::MonteCarlo { samples, seed }) => self.monte_carlo(fmu, fvar, y, samples, seed),
            (Observation::Gaussian { variance }, Strategy::ClosedForm) => {
                Ok(self.factorised(fmu, fvar, y, |yv, m, v| gaussian_log_density(yv, m, *variance) - 0.5 * v / variance))
            }
            (Observation::Poisson, Strategy::ClosedForm) => Ok(self.factorised(fmu, fvar, y, |yv, m, v| {
                yv * m - (m + 0.5 * v).exp() - libm::lgamma(yv + 1.0)
            })),
            (Observation::Bernoulli, Strategy::ClosedForm) => Err(Error::UnsupportedCombination(
                "the probit expectation has no closed form; use quadrature".into(),
            )),
            (_, Strategy::GaussHermite(k)) => {
                let (nodes, weights) = gauss_hermite_nodes(k)?;
                Ok(self.factorised(fmu, fvar, y, |yv, m, v| {
                    if v == 0.0 {
                        self.log_density(yv, m).expect("factorised")
                    } else {
                        gaussian_expectation(&nodes, &weights, m, v, |f| self.log_density(yv, f).expect("factorised"))
                    }
                }))
            }
        }
    }

    fn factorised(
        &self,
        fmu: &DenseMatrix,
        fvar: &PosteriorCov,
        y: &DenseMatrix,
        term: impl Fn(f64, f64, f64) -> f64,
    ) -> Expectations {
        let PosteriorCov::Marginal(v) = fvar else { unreachable!("checked by caller") };
        let values = (0..y.rows())
            .map(|n| {
                (0..y.cols())
                    .filter(|&a| !y[(n, a)].is_nan())
                    .map(|a| term(y[(n, a)], fmu[(n, a)], v[(n, a)]))
                    .sum()
            })
            .collect();
        Expectations { values, std_errors: None }
    }

    fn monte_carlo(&self, fmu: &DenseMatrix, fvar: &PosteriorCov, y: &DenseMatrix, samples: usize, seed: u64) -> Result<Expectations> {
        let mut rng = RngState::new(seed);
        let moments = PosteriorMoments { mean: fmu.clone(), cov: fvar.clone() };
        let (n, p) = y.shape();
        let roots = match fvar {
            PosteriorCov::PerPoint(_) => {
                Some((0..n).map(|i| psd_sqrt(&moments.point_covariance(i).expect("per point"))).collect::<Result<Vec<_>>>()?)
            }
            _ => None,
        };
        let marginal = moments.marginal_variances();
        let mut sum = vec![0.0; n];
        let mut sum2 = vec![0.0; n];
        let mut f = DenseMatrix::zeros(n, p);
        for _ in 0..samples {
            let eps = rng.standard_normal(n, p);
            for i in 0..n {
                match &roots {
                    Some(r) => {
                        let z = r[i].matvec(eps.row(i))?;
                        for a in 0..p {
                            f[(i, a)] = fmu[(i, a)] + z[a];
                        }
                    }
                    None => {
                        for a in 0..p {
                            f[(i, a)] = fmu[(i, a)] + marginal[(i, a)].max(0.0).sqrt() * eps[(i, a)];
                        }
                    }
                }
            }
            for (i, v) in self.log_density_rows(&f, y)?.into_iter().enumerate() {
                sum[i] += v;
                sum2[i] += v * v;
            }
        }
        let s = samples as f64;
        let values: Vec<f64> = sum.iter().map(|t| t / s).collect();
        let std_errors = values
            .iter()
            .zip(&sum2)
            .map(|(m, t2)| if samples > 1 { ((t2 / s - m * m).max(0.0) / (s - 1.0)).sqrt() } else { f64::INFINITY })
            .collect();
        Ok(Expectations { values, std_errors: Some(std_errors) })
    }

    /// Restricts a correlated Gaussian to the observed outputs; factorised
    /// likelihoods are returned unchanged.
    pub fn marginalize_outputs(&self, subset: &[usize]) -> Result<Likelihood> {
        if subset.is_empty() {
            return Err(Error::EmptySubset);
        }
        match &self.observation {
            Observation::CorrelatedGaussian { cov } => {
                if let Some(&bad) = subset.iter().find(|&&s| s >= cov.rows()) {
                    return Err(Error::InvalidParameter(format!("output {bad} out of range for {} outputs", cov.rows())));
                }
                Ok(Likelihood {
                    observation: Observation::CorrelatedGaussian { cov: cov.select(subset, subset) },
                    strategy: self.strategy,
                })
            }
            _ => Ok(self.clone()),
        }
    }

    /// Mean and marginal variance of `y` (`N x P` each) under `q(f)`.
    pub fn predict_observation_moments(&self, fmu: &DenseMatrix, fvar: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
        check_same_shape(fmu, fvar)?;
        let (n, p) = fmu.shape();
        match &self.observation {
            Observation::Gaussian { variance } => Ok((fmu.clone(), DenseMatrix::from_fn(n, p, |i, a| fvar[(i, a)] + variance))),
            Observation::CorrelatedGaussian { cov } => {
                check_outputs(cov, p)?;
                Ok((fmu.clone(), DenseMatrix::from_fn(n, p, |i, a| fvar[(i, a)] + cov[(a, a)])))
            }
            Observation::Bernoulli => {
                let prob = DenseMatrix::from_fn(n, p, |i, a| normal_cdf(fmu[(i, a)] / (1.0 + fvar[(i, a)]).sqrt()));
                let var = DenseMatrix::from_fn(n, p, |i, a| prob[(i, a)] * (1.0 - prob[(i, a)]));
                Ok((prob, var))
            }
            Observation::Poisson => {
                let (nodes, weights) = gauss_hermite_nodes(self.quadrature_nodes())?;
                let mut mean = DenseMatrix::zeros(n, p);
                let mut var = DenseMatrix::zeros(n, p);
                for i in 0..n {
                    for a in 0..p {
                        let (m, v) = (fmu[(i, a)], fvar[(i, a)]);
                        let rate = gaussian_expectation(&nodes, &weights, m, v, f64::exp);
                        let rate2 = gaussian_expectation(&nodes, &weights, m, v, |f| (2.0 * f).exp());
                        mean[(i, a)] = rate;
                        var[(i, a)] = rate + (rate2 - rate * rate).max(0.0);
                    }
                }
                Ok((mean, var))
            }
        }
    }

    /// Adds the observation noise to a Gaussian predictive in any layout.
    pub fn add_noise(&self, moments: &PosteriorMoments) -> Result<PosteriorMoments> {
        let p = moments.num_outputs();
        let noise = match &self.observation {
            Observation::Gaussian { variance } => DenseMatrix::from_diag(&vec![*variance; p]),
            Observation::CorrelatedGaussian { cov } => {
                check_outputs(cov, p)?;
                cov.clone()
            }
            _ => return Err(Error::UnsupportedCombination("observation noise is only additive for Gaussian likelihoods".into())),
        };
        let n = moments.num_points();
        let cov = match &moments.cov {
            PosteriorCov::Full(m) => {
                let mut m = m.clone();
                for i in 0..n {
                    for a in 0..p {
                        for b in 0..p {
                            m[(i * p + a, i * p + b)] += noise[(a, b)];
                        }
                    }
                }
                PosteriorCov::Full(m)
            }
            PosteriorCov::PerOutput(v) => PosteriorCov::PerOutput(
                v.iter()
                    .enumerate()
                    .map(|(a, m)| {
                        let mut m = m.clone();
                        m.add_diag(noise[(a, a)]);
                        m
                    })
                    .collect(),
            ),
            PosteriorCov::PerPoint(m) => {
                PosteriorCov::PerPoint(DenseMatrix::from_fn(n * p, p, |r, b| m[(r, b)] + noise[(r % p, b)]))
            }
            PosteriorCov::Marginal(m) => PosteriorCov::Marginal(DenseMatrix::from_fn(n, p, |i, a| m[(i, a)] + noise[(a, a)])),
        };
        Ok(PosteriorMoments { mean: moments.mean.clone(), cov })
    }

    /// `log ∫ p(y_n | f) q(f) df` per point, treating outputs as independent
    /// unless the likelihood is correlated (then `fvar` must be per-point).
    pub fn predict_log_density(&self, fmu: &DenseMatrix, fvar: &PosteriorCov, y: &DenseMatrix) -> Result<Vec<f64>> {
        check_same_shape(fmu, y)?;
        let (n, p) = y.shape();
        if let Observation::CorrelatedGaussian { cov } = &self.observation {
            check_outputs(cov, p)?;
            let PosteriorCov::PerPoint(v) = fvar else {
                return Err(Error::ShapeMismatch("a correlated Gaussian needs N x P x P Fvar".into()));
            };
            return (0..n)
                .map(|i| {
                    let total = cov.add(&v.block(i * p, 0, p, p))?;
                    correlated_log_density(&total, fmu.row(i), y.row(i), None)
                })
                .collect();
        }
        let moments = PosteriorMoments { mean: fmu.clone(), cov: fvar.clone() };
        let var = moments.marginal_variances();
        let rule = match self.observation {
            Observation::Poisson => Some(gauss_hermite_nodes(self.quadrature_nodes())?),
            _ => None,
        };
        Ok((0..n)
            .map(|i| {
                (0..p)
                    .filter(|&a| !y[(i, a)].is_nan())
                    .map(|a| {
                        let (yv, m, v) = (y[(i, a)], fmu[(i, a)], var[(i, a)]);
                        match &self.observation {
                            Observation::Gaussian { variance } => gaussian_log_density(yv, m, v + variance),
                            Observation::Bernoulli => bernoulli_log_density(yv, m / (1.0 + v).sqrt()),
                            _ => {
                                let (nodes, weights) = rule.as_ref().expect("poisson rule");
                                let sd = v.max(0.0).sqrt();
                                let terms: Vec<f64> = nodes
                                    .iter()
                                    .zip(weights)
                                    .map(|(x, w)| w.ln() + poisson_log_density(yv, m + sd * x))
                                    .collect();
                                log_sum_exp(&terms)
                            }
                        }
                    })
                    .sum()
            })
            .collect())
    }

    fn quadrature_nodes(&self) -> usize {
        match self.strategy {
            Strategy::GaussHermite(k) => k,
            _ => DEFAULT_QUADRATURE_NODES,
        }
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn check_same_shape(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_outputs(cov: &DenseMatrix, p: usize) -> Result<()> {
    if cov.rows() != p {
        return Err(Error::ShapeMismatch(format!("noise covariance is {0}x{0} for {p} outputs", cov.rows())));
    }
    Ok(())
}

/// `log N(y; f, Σ) - ½ Tr(Σ⁻¹ V)` over the non-`NaN` entries of `y`.
fn correlated_log_density(cov: &DenseMatrix, f: &[f64], y: &[f64], v: Option<&DenseMatrix>) -> Result<f64> {
    let observed: Vec<usize> = (0..y.len()).filter(|&a| !y[a].is_nan()).collect();
    if observed.is_empty() {
        return Ok(0.0);
    }
    let sigma = cov.select(&observed, &observed);
    let l = cholesky(&sigma, 0.0)?;
    let r = DenseMatrix::column_vector(&observed.iter().map(|&a| y[a] - f[a]).collect::<Vec<_>>());
    let alpha = tri_solve(&l, &r, false)?;
    let mut value = -0.5 * observed.len() as f64 * (2.0 * PI).ln()
        - 0.5 * l.gram_logdet()
        - 0.5 * alpha.as_slice().iter().map(|x| x * x).sum::<f64>();
    if let Some(v) = v {
        let inv_v = crate::numerics::cho_solve(&l, &v.select(&observed, &observed))?;
        value -= 0.5 * inv_v.trace();
    }
    Ok(value)
}
