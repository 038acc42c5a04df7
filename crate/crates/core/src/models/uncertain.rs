use serde::{Deserialize, Serialize};

use super::{Dataset, SVGPModel};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, RngState};

/// Per-point input distributions `q(x_n) = N(mean_n, diag(variance_n))`
/// under the prior `p(x_n) = N(0, I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertainInputs {
    pub mean: DenseMatrix,
    pub variance: DenseMatrix,
}

impl UncertainInputs {
    pub fn new(mean: DenseMatrix, variance: DenseMatrix) -> Result<Self> {
        if mean.shape() != variance.shape() {
            return Err(Error::ShapeMismatch(format!("means {:?}, variances {:?}", mean.shape(), variance.shape())));
        }
        if variance.as_slice().iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("input variances must be positive".into()));
        }
        Ok(UncertainInputs { mean, variance })
    }

    pub fn len(&self) -> usize {
        self.mean.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One reparameterised draw of every input.
    pub fn sample(&self, rng: &mut RngState) -> DenseMatrix {
        let (n, d) = self.mean.shape();
        let eps = rng.standard_normal(n, d);
        DenseMatrix::from_fn(n, d, |i, j| self.mean[(i, j)] + self.variance[(i, j)].sqrt() * eps[(i, j)])
    }
}

/// `Σ_n KL(q(x_n) || N(0, I))`.
pub fn input_kl(inputs: &UncertainInputs) -> f64 {
    inputs
        .mean
        .as_slice()
        .iter()
        .zip(inputs.variance.as_slice())
        .map(|(m, s)| 0.5 * (s + m * m - 1.0 - s.ln()))
        .sum()
}

/// Bound with latent inputs: expected log-likelihood at sampled inputs,
/// averaged over `num_samples` draws, minus the input and inducing KLs.
pub fn uncertain_elbo(
    model: &SVGPModel,
    inputs: &UncertainInputs,
    y: &DenseMatrix,
    rng: &mut RngState,
    num_samples: usize,
) -> Result<f64> {
    if inputs.len() != y.rows() {
        return Err(Error::DimensionMismatch(format!("{} input distributions for {} outputs", inputs.len(), y.rows())));
    }
    batch_bound(model, inputs, y, rng, num_samples, 1.0)
}

fn batch_bound(
    model: &SVGPModel,
    inputs: &UncertainInputs,
    y: &DenseMatrix,
    rng: &mut RngState,
    num_samples: usize,
    scale: f64,
) -> Result<f64> {
    if num_samples == 0 {
        return Err(Error::InvalidParameter("at least one sample is required".into()));
    }
    let mut total = 0.0;
    for _ in 0..num_samples {
        let batch = Dataset::new(inputs.sample(rng), y.clone())?;
        total += model.expected_log_likelihood(&batch)?;
    }
    let value = scale * (total / num_samples as f64 - input_kl(inputs)) - model.prior_kl()?;
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective(value));
    }
    Ok(value)
}

/// An SVGP whose training inputs are latent, with their variational
/// distributions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UncertainSVGP {
    pub model: SVGPModel,
    pub inputs: UncertainInputs,
    pub num_samples: usize,
}

impl UncertainSVGP {
    pub fn new(model: SVGPModel, inputs: UncertainInputs, num_samples: usize) -> Result<Self> {
        if inputs.mean.cols() != model.kernel.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "inputs have {} columns, kernel expects {}",
                inputs.mean.cols(),
                model.kernel.input_dim()
            )));
        }
        Ok(UncertainSVGP { model, inputs, num_samples })
    }

    /// Bound on the rows `idx` of `y`, scaled by `N / |idx|`.
    pub fn elbo(&self, y: &DenseMatrix, idx: &[usize], rng: &mut RngState) -> Result<f64> {
        if self.inputs.len() != y.rows() {
            return Err(Error::DimensionMismatch(format!("{} input distributions for {} outputs", self.inputs.len(), y.rows())));
        }
        if idx.len() == y.rows() && idx.iter().enumerate().all(|(i, &j)| i == j) {
            return batch_bound(&self.model, &self.inputs, y, rng, self.num_samples, 1.0);
        }
        let inputs = UncertainInputs { mean: self.inputs.mean.select_rows(idx), variance: self.inputs.variance.select_rows(idx) };
        let scale = y.rows() as f64 / idx.len().max(1) as f64;
        batch_bound(&self.model, &inputs, &y.select_rows(idx), rng, self.num_samples, scale)
    }
}
