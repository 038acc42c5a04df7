use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{Dataset, MeanFunction};
use crate::conditionals::{PosteriorCov, PosteriorMoments};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::numerics::{cholesky, tri_solve, DenseMatrix, LowerTriangular};

/// Exact GP regression with Gaussian noise; the reference every sparse
/// approximation is measured against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GPRModel {
    pub kernel: Kernel,
    pub noise_variance: f64,
    pub x: DenseMatrix,
    /// `N x 1`.
    pub y: DenseMatrix,
    #[serde(default)]
    pub mean: MeanFunction,
}

impl GPRModel {
    pub fn new(kernel: Kernel, noise_variance: f64, data: &Dataset) -> Result<Self> {
        let m = GPRModel { kernel, noise_variance, x: data.x.clone(), y: data.y.clone(), mean: MeanFunction::Zero };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.kernel.num_outputs() != 1 || self.y.cols() != 1 {
            return Err(Error::UnsupportedCombination("exact regression takes a single output".into()));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::InvalidParameter(format!("noise variance must be non-negative, got {}", self.noise_variance)));
        }
        if self.x.rows() != self.y.rows() || self.x.cols() != self.kernel.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "X is {:?}, Y is {:?}, kernel input dimension {}",
                self.x.shape(),
                self.y.shape(),
                self.kernel.input_dim()
            )));
        }
        if !self.y.is_finite() {
            return Err(Error::InvalidParameter("exact regression needs every output observed".into()));
        }
        Ok(())
    }

    /// Cholesky factor of `Kff + σ² I` and `L⁻¹ (y - m(X))`.
    fn factor(&self) -> Result<(LowerTriangular, DenseMatrix)> {
        let mut k = self.kernel.k_full(&self.x, None)?;
        k.add_diag(self.noise_variance);
        let l = cholesky(&k, 0.0)?;
        let r = self.y.sub(&self.mean.eval(&self.x, 1)?)?;
        let alpha = tri_solve(&l, &r, false)?;
        Ok((l, alpha))
    }

    /// `log N(y; m(X), Kff + σ² I)`.
    pub fn log_marginal(&self) -> Result<f64> {
        let (l, alpha) = self.factor()?;
        let n = self.x.rows() as f64;
        let fit: f64 = alpha.as_slice().iter().map(|a| a * a).sum();
        let value = -0.5 * fit - 0.5 * l.gram_logdet() - 0.5 * n * (2.0 * PI).ln();
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective(value));
        }
        Ok(value)
    }

    /// Posterior of the latent function at `xnew`.
    pub fn predict_f(&self, xnew: &DenseMatrix, full_cov: bool) -> Result<PosteriorMoments> {
        let (l, alpha) = self.factor()?;
        let a = tri_solve(&l, &self.kernel.k_full(&self.x, Some(xnew))?, false)?;
        let mean = a.tr_matmul(&alpha)?.add(&self.mean.eval(xnew, 1)?)?;
        let cov = if full_cov {
            PosteriorCov::PerOutput(vec![self.kernel.k_full(xnew, None)?.sub(&a.tr_matmul(&a)?)?])
        } else {
            let kd = self.kernel.k_diag(xnew)?;
            let var = (0..xnew.rows()).map(|j| kd[j] - (0..a.rows()).map(|i| a[(i, j)].powi(2)).sum::<f64>()).collect();
            PosteriorCov::Marginal(DenseMatrix::from_vec(xnew.rows(), 1, var)?)
        };
        Ok(PosteriorMoments { mean, cov })
    }

    /// Predictive of noisy observations: the latent posterior plus `σ²`.
    pub fn predict_y(&self, xnew: &DenseMatrix, full_cov: bool) -> Result<PosteriorMoments> {
        let mut m = self.predict_f(xnew, full_cov)?;
        match &mut m.cov {
            PosteriorCov::PerOutput(v) => v[0].add_diag(self.noise_variance),
            PosteriorCov::Marginal(v) => v.as_mut_slice().iter_mut().for_each(|x| *x += self.noise_variance),
            _ => unreachable!("single-output layouts"),
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelFamily, SingleOutputKernel};
    use crate::numerics::RngState;

    fn se(variance: f64, lengthscale: f64) -> Kernel {
        SingleOutputKernel::squared_exponential(variance, lengthscale, 1).unwrap().into()
    }

    fn data(n: usize, seed: u64) -> Dataset {
        let mut rng = RngState::new(seed);
        let x = DenseMatrix::from_fn(n, 1, |_, _| 4.0 * rng.uniform() - 2.0);
        let y = DenseMatrix::from_fn(n, 1, |i, _| x[(i, 0)].sin() + 0.1 * rng.normal());
        Dataset::new(x, y).unwrap()
    }

    /// Gauss-Jordan inverse and log-determinant, independent of the Cholesky code.
    fn inverse_logdet(a: &DenseMatrix) -> (DenseMatrix, f64) {
        let n = a.rows();
        let mut m = a.clone();
        let mut inv = DenseMatrix::identity(n);
        let mut logdet = 0.0;
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs())).unwrap();
            if piv != c {
                for k in 0..n {
                    let (t, u) = (m[(c, k)], inv[(c, k)]);
                    m[(c, k)] = m[(piv, k)];
                    m[(piv, k)] = t;
                    inv[(c, k)] = inv[(piv, k)];
                    inv[(piv, k)] = u;
                }
            }
            let d = m[(c, c)];
            logdet += d.abs().ln();
            for k in 0..n {
                m[(c, k)] /= d;
                inv[(c, k)] /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = m[(r, c)];
                    for k in 0..n {
                        m[(r, k)] -= f * m[(c, k)];
                        inv[(r, k)] -= f * inv[(c, k)];
                    }
                }
            }
        }
        (inv, logdet)
    }

    #[test]
    fn single_point_noiseless() {
        let d = Dataset::new(DenseMatrix::zeros(1, 1), DenseMatrix::zeros(1, 1)).unwrap();
        let m = GPRModel::new(se(1.0, 1.0), 0.0, &d).unwrap();
        assert!((m.log_marginal().unwrap() + 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn white_kernel_is_independent_gaussians() {
        let d = data(6, 1);
        let white = SingleOutputKernel::isotropic(KernelFamily::White, 0.7, 1.0, 1).unwrap();
        let m = GPRModel::new(white.into(), 0.2, &d).unwrap();
        let want: f64 = d.y.as_slice().iter().map(|y| -0.5 * (2.0 * PI * 0.9).ln() - 0.5 * y * y / 0.9).sum();
        assert!((m.log_marginal().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn dense_oracle() {
        let d = data(8, 2);
        let m = GPRModel::new(se(1.3, 0.8), 0.05, &d).unwrap();
        let mut k = m.kernel.k_full(&d.x, None).unwrap();
        k.add_diag(0.05);
        let (inv, logdet) = inverse_logdet(&k);
        let y = d.y.as_slice();
        let quad: f64 = (0..8).map(|i| (0..8).map(|j| y[i] * inv[(i, j)] * y[j]).sum::<f64>()).sum();
        let want = -0.5 * quad - 0.5 * logdet - 4.0 * (2.0 * PI).ln();
        assert!((m.log_marginal().unwrap() - want).abs() < 1e-10);

        let xs = DenseMatrix::from_fn(3, 1, |i, _| -1.5 + i as f64);
        let ksf = m.kernel.k_full(&xs, Some(&d.x)).unwrap();
        let w = ksf.matmul(&inv).unwrap();
        let pred = m.predict_f(&xs, true).unwrap();
        let mean = w.matmul(&d.y).unwrap();
        assert!(pred.mean.max_abs_diff(&mean) < 1e-10);
        let cov = m.kernel.k_full(&xs, None).unwrap().sub(&w.matmul(&ksf.transpose()).unwrap()).unwrap();
        let PosteriorCov::PerOutput(c) = &pred.cov else { panic!() };
        assert!(c[0].max_abs_diff(&cov) < 1e-10);
        let marg = m.predict_f(&xs, false).unwrap().marginal_variances();
        assert!(marg.max_abs_diff(&DenseMatrix::from_vec(3, 1, cov.diag()).unwrap()) < 1e-12);
    }

    #[test]
    fn far_and_near_limits() {
        let d = data(5, 3);
        let m = GPRModel::new(se(1.0, 0.5), 1e-8, &d).unwrap();
        let far = m.predict_f(&DenseMatrix::from_rows(&[vec![100.0]]).unwrap(), false).unwrap();
        assert!(far.mean[(0, 0)].abs() < 1e-12);
        assert!((far.marginal_variances()[(0, 0)] - 1.0).abs() < 1e-12);
        let near = m.predict_f(&d.x, false).unwrap();
        assert!(near.mean.max_abs_diff(&d.y) < 1e-4);
        let noisy = m.predict_y(&d.x, false).unwrap().marginal_variances();
        assert!(noisy.max_abs_diff(&near.marginal_variances().add(&DenseMatrix::from_fn(5, 1, |_, _| 1e-8)).unwrap()) < 1e-15);
    }
}
