use serde::{Deserialize, Serialize};

use crate::covariances::{tags, TypeTag};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Hyperparameters shared by every single-output family.
///
/// `lengthscales` holds either one shared value or one value per input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl KernelParams {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let p = KernelParams { variance, lengthscales };
        p.validate(None)?;
        Ok(p)
    }

    pub fn validate(&self, input_dim: Option<usize>) -> Result<()> {
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return Err(Error::InvalidParameter(format!("kernel variance must be positive, got {}", self.variance)));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidParameter("at least one lengthscale is required".into()));
        }
        if self.lengthscales.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidParameter("lengthscales must be positive".into()));
        }
        if let Some(d) = input_dim {
            if self.lengthscales.len() != 1 && self.lengthscales.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "{} lengthscales for input dimension {d}",
                    self.lengthscales.len()
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn lengthscale(&self, d: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[d]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    SquaredExponential,
    Matern12,
    Matern32,
    Matern52,
    Linear,
    White,
}

impl KernelFamily {
    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelFamily::Linear)
    }

    pub fn tag(self) -> TypeTag {
        match self {
            KernelFamily::SquaredExponential => tags::SQUARED_EXPONENTIAL,
            KernelFamily::Matern12 => tags::MATERN12,
            KernelFamily::Matern32 => tags::MATERN32,
            KernelFamily::Matern52 => tags::MATERN52,
            KernelFamily::Linear => tags::LINEAR,
            KernelFamily::White => tags::WHITE,
        }
    }

    /// Profile as a function of the scaled distance `r`.
    fn profile(self, r2: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-0.5 * r2).exp(),
            KernelFamily::Matern12 => (-r2.sqrt()).exp(),
            KernelFamily::Matern32 => {
                let s = (3.0 * r2).sqrt();
                (1.0 + s) * (-s).exp()
            }
            KernelFamily::Matern52 => {
                let s = (5.0 * r2).sqrt();
                (1.0 + s + 5.0 * r2 / 3.0) * (-s).exp()
            }
            KernelFamily::Linear | KernelFamily::White => unreachable!("not a distance profile"),
        }
    }
}

/// Covariance function for a scalar-valued process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleOutputKernel {
    pub family: KernelFamily,
    pub params: KernelParams,
    pub input_dim: usize,
}

impl SingleOutputKernel {
    pub fn new(family: KernelFamily, params: KernelParams, input_dim: usize) -> Result<Self> {
        params.validate(Some(input_dim))?;
        Ok(SingleOutputKernel { family, params, input_dim })
    }

    /// Isotropic kernel with one shared lengthscale.
    pub fn isotropic(family: KernelFamily, variance: f64, lengthscale: f64, input_dim: usize) -> Result<Self> {
        Self::new(family, KernelParams::new(variance, vec![lengthscale])?, input_dim)
    }

    pub fn squared_exponential(variance: f64, lengthscale: f64, input_dim: usize) -> Result<Self> {
        Self::isotropic(KernelFamily::SquaredExponential, variance, lengthscale, input_dim)
    }

    pub fn tag(&self) -> TypeTag {
        self.family.tag()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate(Some(self.input_dim))
    }

    fn check_cols(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "kernel expects {} input columns, got {}",
                self.input_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Scalar evaluation for a pair of input rows.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let var = self.params.variance;
        match self.family {
            KernelFamily::Linear => var * x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>(),
            KernelFamily::White => {
                if x == y {
                    var
                } else {
                    0.0
                }
            }
            fam => {
                let r2: f64 = x
                    .iter()
                    .zip(y)
                    .enumerate()
                    .map(|(d, (a, b))| {
                        let t = (a - b) / self.params.lengthscale(d);
                        t * t
                    })
                    .sum();
                var * fam.profile(r2)
            }
        }
    }

    /// Gram matrix `k(X, X2)`; `X2 = None` means `X2 = X`.
    ///
    /// The white kernel contributes only on the diagonal of `k(X, X)` and is
    /// zero between distinct point sets.
    pub fn k_full(&self, x: &DenseMatrix, x2: Option<&DenseMatrix>) -> Result<DenseMatrix> {
        self.check_cols(x)?;
        match x2 {
            None => {
                let n = x.rows();
                if self.family == KernelFamily::White {
                    return Ok(DenseMatrix::from_diag(&vec![self.params.variance; n]));
                }
                let mut out = DenseMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..=i {
                        let v = self.eval(x.row(i), x.row(j));
                        out[(i, j)] = v;
                        out[(j, i)] = v;
                    }
                }
                Ok(out)
            }
            Some(x2) => {
                self.check_cols(x2)?;
                if self.family == KernelFamily::White {
                    return Ok(DenseMatrix::zeros(x.rows(), x2.rows()));
                }
                Ok(DenseMatrix::from_fn(x.rows(), x2.rows(), |i, j| self.eval(x.row(i), x2.row(j))))
            }
        }
    }

    pub fn k_diag(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        self.check_cols(x)?;
        Ok((0..x.rows())
            .map(|i| match self.family {
                KernelFamily::Linear => self.params.variance * x.row(i).iter().map(|v| v * v).sum::<f64>(),
                _ => self.params.variance,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut s = seed;
        DenseMatrix::from_fn(n, d, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        })
    }

    fn min_eigenvalue(a: &DenseMatrix) -> f64 {
        crate::numerics::symmetric_eigenvalues(a).into_iter().fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn sqexp_values() {
        let k = SingleOutputKernel::squared_exponential(1.0, 1.0, 1).unwrap();
        assert_eq!(k.eval(&[0.3], &[0.3]), 1.0);
        let k = SingleOutputKernel::squared_exponential(2.0, 0.5, 1).unwrap();
        assert!((k.eval(&[0.0], &[1.0]) - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn matern32_gram_is_psd() {
        let k = SingleOutputKernel::isotropic(KernelFamily::Matern32, 1.3, 0.7, 2).unwrap();
        let g = k.k_full(&points(6, 2, 5), None).unwrap();
        assert!(min_eigenvalue(&g) > -1e-10);
    }

    #[test]
    fn diag_matches_full() {
        let x = points(7, 3, 1);
        for fam in [
            KernelFamily::SquaredExponential,
            KernelFamily::Matern12,
            KernelFamily::Matern32,
            KernelFamily::Matern52,
            KernelFamily::Linear,
            KernelFamily::White,
        ] {
            let k = SingleOutputKernel::new(fam, KernelParams::new(1.7, vec![0.5, 1.0, 2.0]).unwrap(), 3).unwrap();
            assert_eq!(k.k_full(&x, None).unwrap().diag(), k.k_diag(&x).unwrap(), "{fam:?}");
        }
    }

    #[test]
    fn linear_diag_is_scaled_norm() {
        let k = SingleOutputKernel::isotropic(KernelFamily::Linear, 2.0, 1.0, 2).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(k.k_diag(&x).unwrap(), vec![10.0]);
    }

    #[test]
    fn white_cross_covariance_is_zero() {
        let k = SingleOutputKernel::isotropic(KernelFamily::White, 0.3, 1.0, 1).unwrap();
        let x = points(3, 1, 2);
        assert_eq!(k.k_full(&x, Some(&x)).unwrap().max_abs(), 0.0);
        assert_eq!(k.k_full(&x, None).unwrap(), DenseMatrix::from_diag(&[0.3; 3]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let k = SingleOutputKernel::squared_exponential(1.0, 1.0, 2).unwrap();
        assert!(matches!(k.k_full(&points(2, 3, 0), None), Err(Error::DimensionMismatch(_))));
        assert!(KernelParams::new(-1.0, vec![1.0]).is_err());
        assert!(SingleOutputKernel::new(KernelFamily::Matern12, KernelParams::new(1.0, vec![1.0, 1.0, 1.0]).unwrap(), 2).is_err());
    }
}
