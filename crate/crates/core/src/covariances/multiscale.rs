//! Closed-form covariances of Gaussian-window inducing variables under the
//! squared-exponential kernel.
//!
//! With window `N(x; z_m, diag(s_m^2))` and lengthscales `l_d`, integrating the
//! kernel against one window widens each lengthscale to `sqrt(l_d^2 + s_md^2)`
//! and against two windows to `sqrt(l_d^2 + s_md^2 + s_m'd^2)`. The prefactor
//! `prod_d l_d / width_d` makes both collapse to the kernel as the scales vanish.

use crate::error::{Error, Result};
use crate::inducing::Multiscale;
use crate::kernels::{KernelFamily, SingleOutputKernel};
use crate::numerics::DenseMatrix;

fn check(ms: &Multiscale, k: &SingleOutputKernel) -> Result<()> {
    if k.family != KernelFamily::SquaredExponential {
        return Err(Error::UnsupportedCombination(format!("multiscale covariances need a squared-exponential kernel, got {:?}", k.family)));
    }
    if ms.z.cols() != k.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "inducing centres have {} columns, kernel expects {}",
            ms.z.cols(),
            k.input_dim
        )));
    }
    Ok(())
}

fn windowed(k: &SingleOutputKernel, a: &[f64], b: &[f64], extra: impl Fn(usize) -> f64) -> f64 {
    let mut log_prefactor = 0.0;
    let mut quad = 0.0;
    for d in 0..a.len() {
        let l2 = k.params.lengthscale(d).powi(2);
        let w2 = l2 + extra(d);
        log_prefactor += 0.5 * (l2 / w2).ln();
        quad += (a[d] - b[d]).powi(2) / w2;
    }
    k.params.variance * (log_prefactor - 0.5 * quad).exp()
}

/// `Kuu[m, m'] = ∫∫ w_m(x) k(x, x') w_m'(x') dx dx'`.
pub fn multiscale_kuu(ms: &Multiscale, k: &SingleOutputKernel) -> Result<DenseMatrix> {
    check(ms, k)?;
    let m = ms.z.rows();
    let mut out = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = windowed(k, ms.z.row(i), ms.z.row(j), |d| ms.scales[(i, d)].powi(2) + ms.scales[(j, d)].powi(2));
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// `Kuf[m, n] = ∫ w_m(x) k(x, x_n) dx`.
pub fn multiscale_kuf(ms: &Multiscale, k: &SingleOutputKernel, x: &DenseMatrix) -> Result<DenseMatrix> {
    check(ms, k)?;
    if x.cols() != k.input_dim {
        return Err(Error::DimensionMismatch(format!("inputs have {} columns, kernel expects {}", x.cols(), k.input_dim)));
    }
    Ok(DenseMatrix::from_fn(ms.z.rows(), x.rows(), |i, n| {
        windowed(k, ms.z.row(i), x.row(n), |d| ms.scales[(i, d)].powi(2))
    }))
}
