use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::svgp::predict_layer;
use super::{Dataset, MeanFunction};
use crate::conditionals::{PosteriorMoments, VariationalGaussian};
use crate::covariances::Dispatcher;
use crate::divergences::prior_kl;
use crate::error::{Error, Result};
use crate::inducing::InducingVariable;
use crate::kernels::Kernel;
use crate::likelihoods::Likelihood;
use crate::numerics::{DenseMatrix, RngState, DEFAULT_JITTER};

/// One GP in a deep stack; its output width is the kernel's output count.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Layer {
    pub kernel: Kernel,
    pub inducing: InducingVariable,
    pub q: VariationalGaussian,
    #[serde(default)]
    pub mean: MeanFunction,
}

impl Layer {
    pub fn new(kernel: Kernel, inducing: InducingVariable, mean: MeanFunction, whiten: bool) -> Self {
        let q = VariationalGaussian::initial(&inducing, &kernel, whiten);
        Layer { kernel, inducing, q, mean }
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.kernel.num_outputs()
    }
}

/// Hierarchically chained GPs with noiseless transitions between layers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DGPModel {
    pub layers: Vec<Layer>,
    pub likelihood: Likelihood,
    /// Monte Carlo samples per data point through the inner layers.
    pub num_samples: usize,
    pub num_data: usize,
    pub jitter: f64,
    #[serde(skip)]
    pub dispatcher: Option<Arc<Dispatcher>>,
}

impl DGPModel {
    pub fn new(layers: Vec<Layer>, likelihood: Likelihood, num_samples: usize, num_data: usize) -> Result<Self> {
        let m = DGPModel { layers, likelihood, num_samples, num_data, jitter: DEFAULT_JITTER, dispatcher: None };
        m.validate()?;
        Ok(m)
    }

    pub fn dispatcher(&self) -> Arc<Dispatcher> {
        self.dispatcher.clone().unwrap_or_else(Dispatcher::global)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::input_dim)
    }

    pub fn num_outputs(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("a deep GP needs at least one layer".into()));
        }
        if self.num_samples == 0 {
            return Err(Error::InvalidParameter("at least one sample per data point is required".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.kernel.validate()?;
            let m = layer.inducing.num_inducing(&layer.kernel);
            if layer.q.num_inducing() != m {
                return Err(Error::DimensionMismatch(format!("layer {i}: q has {} inducing variables, expected {m}", layer.q.num_inducing())));
            }
            if i > 0 && layer.input_dim() != self.layers[i - 1].output_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} takes {} inputs but layer {} emits {}",
                    layer.input_dim(),
                    i - 1,
                    self.layers[i - 1].output_dim()
                )));
            }
        }
        self.likelihood.validate()
    }

    fn layer_moments(&self, d: &Dispatcher, i: usize, h: &DenseMatrix, full_output_cov: bool) -> Result<PosteriorMoments> {
        let l = &self.layers[i];
        predict_layer(d, &l.kernel, &l.inducing, &l.q, &l.mean, h, false, full_output_cov, self.jitter)
    }

    /// Propagates one reparameterised sample through every layer but the
    /// last and returns the final layer's moments.
    fn propagate(&self, d: &Dispatcher, x: &DenseMatrix, rng: &mut RngState, full_output_cov: bool) -> Result<PosteriorMoments> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for i in 0..last {
            let m = self.layer_moments(d, i, &h, false)?;
            let var = m.marginal_variances();
            let eps = rng.standard_normal(h.rows(), m.num_outputs());
            h = DenseMatrix::from_fn(h.rows(), m.num_outputs(), |n, a| m.mean[(n, a)] + var[(n, a)].max(0.0).sqrt() * eps[(n, a)]);
        }
        self.layer_moments(d, last, &h, full_output_cov)
    }

    /// `KL(q(U_l) || p(U_l))` for every layer.
    pub fn layer_kls(&self) -> Result<Vec<f64>> {
        let d = self.dispatcher();
        self.layers.iter().map(|l| prior_kl(&d, &l.inducing, &l.kernel, &l.q, self.jitter)).collect()
    }

    /// Doubly stochastic bound: samples through the inner layers, analytic
    /// expectation at the last one, minus every layer's KL.
    pub fn elbo(&self, batch: &Dataset, rng: &mut RngState, scale: f64) -> Result<f64> {
        let d = self.dispatcher();
        let corr = self.likelihood.is_output_correlated();
        let ell = if self.layers.len() == 1 {
            let f = self.layer_moments(&d, 0, &batch.x, corr)?;
            self.likelihood.variational_expectations(&f.mean, &f.cov, &batch.y)?.sum()
        } else {
            let mut total = 0.0;
            for _ in 0..self.num_samples {
                let f = self.propagate(&d, &batch.x, rng, corr)?;
                total += self.likelihood.variational_expectations(&f.mean, &f.cov, &batch.y)?.sum();
            }
            total / self.num_samples as f64
        };
        let value = scale * ell - self.layer_kls()?.into_iter().sum::<f64>();
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective(value));
        }
        Ok(value)
    }

    /// Final-layer moments for `num_samples` propagated samples; the
    /// predictive is their equally weighted mixture.
    pub fn predict_f_samples(&self, xnew: &DenseMatrix, rng: &mut RngState, num_samples: usize) -> Result<Vec<PosteriorMoments>> {
        let d = self.dispatcher();
        (0..num_samples).map(|_| self.propagate(&d, xnew, rng, false)).collect()
    }

    /// Mean and marginal variance of the mixture predictive of `f`.
    pub fn predict_f(&self, xnew: &DenseMatrix, rng: &mut RngState, num_samples: usize) -> Result<(DenseMatrix, DenseMatrix)> {
        let samples = self.predict_f_samples(xnew, rng, num_samples.max(1))?;
        let s = samples.len() as f64;
        let (n, p) = samples[0].mean.shape();
        let mut mean = DenseMatrix::zeros(n, p);
        let mut second = DenseMatrix::zeros(n, p);
        for m in &samples {
            let var = m.marginal_variances();
            for i in 0..n {
                for a in 0..p {
                    mean[(i, a)] += m.mean[(i, a)] / s;
                    second[(i, a)] += (var[(i, a)] + m.mean[(i, a)].powi(2)) / s;
                }
            }
        }
        let var = DenseMatrix::from_fn(n, p, |i, a| (second[(i, a)] - mean[(i, a)].powi(2)).max(0.0));
        Ok((mean, var))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelFamily, SingleOutputKernel};
    use crate::models::SVGPModel;

    fn data() -> Dataset {
        let x = DenseMatrix::from_fn(12, 1, |i, _| -2.0 + 4.0 * i as f64 / 11.0);
        let y = DenseMatrix::from_fn(12, 1, |i, _| (2.0 * x[(i, 0)]).sin() + 0.1 * (i as f64).cos());
        Dataset::new(x, y).unwrap()
    }

    fn svgp(data: &Dataset) -> SVGPModel {
        let z = DenseMatrix::from_fn(5, 1, |i, _| -2.0 + i as f64);
        let mut m = SVGPModel::new(
            SingleOutputKernel::squared_exponential(1.0, 0.7, 1).unwrap().into(),
            Likelihood::gaussian(0.1).unwrap(),
            InducingVariable::points(z).unwrap(),
            data.len(),
            true,
        )
        .unwrap();
        m.q.q_mu = vec![0.3, -0.5, 0.8, 0.1, -0.2];
        m
    }

    fn as_layer(m: &SVGPModel) -> Layer {
        Layer { kernel: m.kernel.clone(), inducing: m.inducing.clone(), q: m.q.clone(), mean: m.mean.clone() }
    }

    #[test]
    fn single_layer_is_svgp() {
        let data = data();
        let s = svgp(&data);
        let dgp = DGPModel::new(vec![as_layer(&s)], s.likelihood.clone(), 10, 12).unwrap();
        let want = s.elbo(&data, 1.0).unwrap();
        for seed in 0..5 {
            assert_eq!(dgp.elbo(&data, &mut RngState::new(seed), 1.0).unwrap(), want);
        }
    }

    fn two_layer(s: &SVGPModel) -> DGPModel {
        let white = SingleOutputKernel::isotropic(KernelFamily::White, 1e-10, 1.0, 1).unwrap();
        let z = DenseMatrix::from_fn(3, 1, |i, _| 10.0 + i as f64);
        let first = Layer::new(white.into(), InducingVariable::points(z).unwrap(), MeanFunction::Identity, true);
        DGPModel::new(vec![first, as_layer(s)], s.likelihood.clone(), 1, 12).unwrap()
    }

    #[test]
    fn layer_kls_are_prior_kls() {
        let s = svgp(&data());
        let dgp = two_layer(&s);
        let d = Dispatcher::global();
        let want: Vec<f64> =
            dgp.layers.iter().map(|l| prior_kl(&d, &l.inducing, &l.kernel, &l.q, dgp.jitter).unwrap()).collect();
        assert_eq!(dgp.layer_kls().unwrap(), want);
        assert_eq!(dgp.layer_kls().unwrap()[1], s.prior_kl().unwrap());
    }

    #[test]
    fn degenerate_first_layer_matches_svgp() {
        let data = data();
        let s = svgp(&data);
        let dgp = two_layer(&s);
        let want = s.elbo(&data, 1.0).unwrap();
        let values: Vec<f64> = (0..200).map(|seed| dgp.elbo(&data, &mut RngState::new(seed), 1.0).unwrap()).collect();
        let mean = values.iter().sum::<f64>() / 200.0;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
        assert!((mean - want).abs() <= 3.0 * sd / 200f64.sqrt() + 1e-9, "{mean} vs {want}");
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let data = data();
        let mut dgp = two_layer(&svgp(&data));
        dgp.layers[0].kernel = SingleOutputKernel::squared_exponential(0.5, 1.0, 1).unwrap().into();
        let a = dgp.elbo(&data, &mut RngState::new(42), 1.0).unwrap();
        let b = dgp.elbo(&data, &mut RngState::new(42), 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, dgp.elbo(&data, &mut RngState::new(43), 1.0).unwrap());
    }

    #[test]
    fn widths_are_checked() {
        let s = svgp(&data());
        let two = SingleOutputKernel::squared_exponential(1.0, 1.0, 2).unwrap();
        let z = DenseMatrix::zeros(2, 2);
        let bad = Layer::new(two.into(), InducingVariable::points(z).unwrap(), MeanFunction::Zero, true);
        assert!(DGPModel::new(vec![as_layer(&s), bad], s.likelihood.clone(), 1, 12).is_err());
    }
}
