//! Models built from the lower layers: exact GP regression, the sparse
//! variational GP, deep GP stacks and uncertain-input wrappers.

mod dgp;
mod gpr;
mod svgp;
mod uncertain;

use serde::{Deserialize, Serialize};

pub use dgp::{DGPModel, Layer};
pub use gpr::GPRModel;
pub use svgp::{QGradient, SVGPModel};
pub use uncertain::{input_kl, uncertain_elbo, UncertainInputs, UncertainSVGP};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Inputs `N x D` and outputs `N x P`; a `NaN` output is unobserved.
///
/// Heterotopic observations (one output per row) are stored with every
/// other output of the row set to `NaN`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
}

impl Dataset {
    pub fn new(x: DenseMatrix, y: DenseMatrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::DimensionMismatch(format!("{} input rows, {} output rows", x.rows(), y.rows())));
        }
        if !x.is_finite() {
            return Err(Error::InvalidParameter("inputs must be finite".into()));
        }
        if y.as_slice().iter().any(|v| v.is_infinite()) {
            return Err(Error::InvalidParameter("outputs must be finite or NaN".into()));
        }
        Ok(Dataset { x, y })
    }

    /// One scalar observation `y[n]` of output `output[n]` at `x[n]` per row.
    pub fn heterotopic(x: DenseMatrix, y: &[f64], output: &[usize], num_outputs: usize) -> Result<Self> {
        if y.len() != x.rows() || output.len() != x.rows() {
            return Err(Error::DimensionMismatch("heterotopic columns differ in length".into()));
        }
        if let Some(&bad) = output.iter().find(|&&p| p >= num_outputs) {
            return Err(Error::InvalidParameter(format!("output index {bad} out of range for {num_outputs} outputs")));
        }
        let mut ym = DenseMatrix::from_fn(x.rows(), num_outputs, |_, _| f64::NAN);
        for (n, (&v, &p)) in y.iter().zip(output).enumerate() {
            ym[(n, p)] = v;
        }
        Dataset::new(x, ym)
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn num_outputs(&self) -> usize {
        self.y.cols()
    }

    /// Number of observed (non-`NaN`) scalar outputs.
    pub fn num_observations(&self) -> usize {
        self.y.as_slice().iter().filter(|v| !v.is_nan()).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { x: self.x.select_rows(idx), y: self.y.select_rows(idx) }
    }
}

/// Prior mean of the latent function.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum MeanFunction {
    #[default]
    Zero,
    Constant(f64),
    /// The first `P` input columns; used between deep GP layers.
    Identity,
}

impl MeanFunction {
    /// Mean at each row of `x` for `p` outputs.
    pub fn eval(&self, x: &DenseMatrix, p: usize) -> Result<DenseMatrix> {
        match self {
            MeanFunction::Zero => Ok(DenseMatrix::zeros(x.rows(), p)),
            MeanFunction::Constant(c) => Ok(DenseMatrix::from_fn(x.rows(), p, |_, _| *c)),
            MeanFunction::Identity => {
                if p > x.cols() {
                    return Err(Error::DimensionMismatch(format!("identity mean maps {} inputs to {p} outputs", x.cols())));
                }
                Ok(DenseMatrix::from_fn(x.rows(), p, |i, a| x[(i, a)]))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, MeanFunction::Zero)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heterotopic_layout() {
        let x = DenseMatrix::from_fn(3, 1, |i, _| i as f64);
        let d = Dataset::heterotopic(x, &[1.0, 2.0, 3.0], &[0, 1, 0], 2).unwrap();
        assert_eq!(d.num_observations(), 3);
        assert_eq!(d.y[(1, 1)], 2.0);
        assert!(d.y[(1, 0)].is_nan());
        assert!(Dataset::heterotopic(DenseMatrix::zeros(1, 1), &[0.0], &[2], 2).is_err());
    }

    #[test]
    fn mean_functions() {
        let x = DenseMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(MeanFunction::Constant(2.5).eval(&x, 2).unwrap(), DenseMatrix::from_fn(2, 2, |_, _| 2.5));
        assert_eq!(MeanFunction::Identity.eval(&x, 2).unwrap(), x.select(&[0, 1], &[0, 1]));
        assert!(MeanFunction::Identity.eval(&x, 4).is_err());
    }
}
