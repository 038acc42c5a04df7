//! Covariance functions: single-output families, multioutput combinations and
//! the patch-based convolutional kernel.

mod convolutional;
mod multioutput;
mod single;

use std::any::Any;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use convolutional::{extract_patches, ConvolutionalKernel, PatchGeometry};
pub use multioutput::{
    mix_full_diag, mix_marginal_diag, mix_marginal_grams, MultioutputKernel, OutputDiag, OutputGram,
};
pub use single::{KernelFamily, KernelParams, SingleOutputKernel};

use crate::covariances::TypeTag;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Extension point for kernels defined outside this crate.
///
/// The tag must be declared in the dispatcher's kernel hierarchy before any
/// implementation is registered for it.
pub trait CustomKernel: fmt::Debug + Send + Sync + 'static {
    fn tag(&self) -> TypeTag;
    fn input_dim(&self) -> usize;
    fn k_full(&self, x: &DenseMatrix, x2: Option<&DenseMatrix>) -> Result<DenseMatrix>;
    fn k_diag(&self, x: &DenseMatrix) -> Result<Vec<f64>>;
    fn as_any(&self) -> &dyn Any;
}

/// Any covariance function understood by the dispatcher.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Kernel {
    Single(SingleOutputKernel),
    Multi(MultioutputKernel),
    #[serde(skip)]
    Custom(Arc<dyn CustomKernel>),
}

impl PartialEq for Kernel {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Kernel::Single(a), Kernel::Single(b)) => a == b,
            (Kernel::Multi(a), Kernel::Multi(b)) => a == b,
            (Kernel::Custom(a), Kernel::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl From<SingleOutputKernel> for Kernel {
    fn from(k: SingleOutputKernel) -> Self {
        Kernel::Single(k)
    }
}

impl From<MultioutputKernel> for Kernel {
    fn from(k: MultioutputKernel) -> Self {
        Kernel::Multi(k)
    }
}

impl Kernel {
    pub fn tag(&self) -> TypeTag {
        match self {
            Kernel::Single(k) => k.tag(),
            Kernel::Multi(k) => k.tag(),
            Kernel::Custom(k) => k.tag(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Single(k) => k.validate(),
            Kernel::Multi(k) => k.validate(),
            Kernel::Custom(_) => Ok(()),
        }
    }

    /// Number of outputs of the process as seen by a model.
    ///
    /// The convolutional kernel is counted as single-output here; its
    /// per-patch view is reached through [`Kernel::as_multioutput`].
    pub fn num_outputs(&self) -> usize {
        match self {
            Kernel::Multi(MultioutputKernel::Convolutional(_)) => 1,
            Kernel::Multi(k) => k.num_outputs(),
            _ => 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Kernel::Single(k) => k.input_dim,
            Kernel::Multi(k) => k.input_dim(),
            Kernel::Custom(k) => k.input_dim(),
        }
    }

    pub fn as_single(&self) -> Option<&SingleOutputKernel> {
        match self {
            Kernel::Single(k) => Some(k),
            _ => None,
        }
    }

    pub fn as_multioutput(&self) -> Option<&MultioutputKernel> {
        match self {
            Kernel::Multi(k) => Some(k),
            _ => None,
        }
    }

    /// True when the prior couples outputs at a shared input.
    pub fn has_output_correlation(&self) -> bool {
        match self {
            Kernel::Multi(MultioutputKernel::Convolutional(_)) => false,
            Kernel::Multi(k) => k.has_output_correlation(),
            _ => false,
        }
    }

    /// Scalar-process Gram. Defined for single-output kernels, the summed
    /// convolutional kernel and custom kernels.
    pub fn k_full(&self, x: &DenseMatrix, x2: Option<&DenseMatrix>) -> Result<DenseMatrix> {
        match self {
            Kernel::Single(k) => k.k_full(x, x2),
            Kernel::Multi(MultioutputKernel::Convolutional(c)) => c.k_full(x, x2),
            Kernel::Multi(_) => Err(Error::UnsupportedMode("single-output Gram of a multioutput kernel".into())),
            Kernel::Custom(k) => k.k_full(x, x2),
        }
    }

    pub fn k_diag(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        match self {
            Kernel::Single(k) => k.k_diag(x),
            Kernel::Multi(MultioutputKernel::Convolutional(c)) => c.k_diag(x),
            Kernel::Multi(_) => Err(Error::UnsupportedMode("single-output diagonal of a multioutput kernel".into())),
            Kernel::Custom(k) => k.k_diag(x),
        }
    }
}

/// Free-function form of [`MultioutputKernel::mo_k`].
pub fn mo_k(kernel: &MultioutputKernel, x: &DenseMatrix, x2: Option<&DenseMatrix>, full_output_cov: bool) -> Result<OutputGram> {
    kernel.mo_k(x, x2, full_output_cov)
}

/// Free-function form of [`MultioutputKernel::mo_k_diag`].
pub fn mo_k_diag(kernel: &MultioutputKernel, x: &DenseMatrix, full_output_cov: bool) -> Result<OutputDiag> {
    kernel.mo_k_diag(x, full_output_cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::symmetric_eigenvalues;

    fn grid(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut s = seed;
        DenseMatrix::from_fn(n, d, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 3.0 - 1.5
        })
    }

    fn lmc(w: DenseMatrix) -> MultioutputKernel {
        let l = w.cols();
        let kernels = (0..l)
            .map(|i| {
                let fam = [KernelFamily::SquaredExponential, KernelFamily::Matern32, KernelFamily::Matern52][i % 3];
                SingleOutputKernel::isotropic(fam, 0.5 + i as f64, 0.4 + 0.3 * i as f64, 2).unwrap()
            })
            .collect();
        MultioutputKernel::linear_coregionalization(kernels, w).unwrap()
    }

    fn full(g: OutputGram) -> DenseMatrix {
        match g {
            OutputGram::Full { data, .. } => data,
            other => panic!("expected full tensor, got {other:?}"),
        }
    }

    #[test]
    fn shared_independent_full_is_block_identity() {
        let base = SingleOutputKernel::squared_exponential(1.4, 0.8, 1).unwrap();
        let k = MultioutputKernel::SharedIndependent { base, num_outputs: 3 };
        let x = DenseMatrix::from_rows(&[vec![0.2]]).unwrap();
        let g = full(k.mo_k(&x, None, true).unwrap());
        assert_eq!(g, DenseMatrix::from_diag(&[1.4; 3]));
        match k.mo_k_diag(&x, true).unwrap() {
            OutputDiag::Full { data, .. } => assert_eq!(data, DenseMatrix::from_diag(&[1.4; 3])),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identity_mixing_decouples_outputs() {
        let k = lmc(DenseMatrix::identity(3));
        let x = grid(4, 2, 1);
        let g = full(k.mo_k(&x, None, true).unwrap());
        for n in 0..4 {
            for p in 0..3 {
                for q in 0..3 {
                    let expected = if p == q { k.latent_kernel(p).unwrap().eval(x.row(n), x.row(n)) } else { 0.0 };
                    assert_eq!(g[(n * 3 + p, n * 3 + q)], expected);
                }
            }
        }
    }

    #[test]
    fn lmc_matches_direct_sum() {
        let w = DenseMatrix::from_rows(&[vec![0.3, -1.1], vec![0.8, 0.5], vec![-0.6, 0.9]]).unwrap();
        let k = lmc(w.clone());
        let (x, x2) = (grid(5, 2, 2), grid(4, 2, 3));
        let g = full(k.mo_k(&x, Some(&x2), true).unwrap());
        for n in 0..5 {
            for m in 0..4 {
                for p in 0..3 {
                    for q in 0..3 {
                        let direct: f64 = (0..2)
                            .map(|l| w[(p, l)] * k.latent_kernel(l).unwrap().eval(x.row(n), x2.row(m)) * w[(q, l)])
                            .sum();
                        assert!((g[(n * 3 + p, m * 3 + q)] - direct).abs() < 1e-12);
                    }
                }
            }
        }
        // full tensor symmetric under (n,p) <-> (n',p') when X2 = X
        let gs = full(k.mo_k(&x, None, true).unwrap());
        assert!(gs.asymmetry() < 1e-15);
        assert!(symmetric_eigenvalues(&gs)[0] > -1e-10);
    }

    #[test]
    fn lmc_marginal_modes() {
        let w = DenseMatrix::from_rows(&[vec![0.3, -1.1], vec![0.8, 0.5], vec![-0.6, 0.9]]).unwrap();
        let k = lmc(w.clone());
        let x = grid(3, 2, 4);
        match k.mo_k(&x, None, false).unwrap() {
            OutputGram::Latent(g) => assert_eq!(g.len(), 2),
            other => panic!("{other:?}"),
        }
        let marg = match k.mo_k_diag(&x, false).unwrap() {
            OutputDiag::Marginal(m) => m,
            other => panic!("{other:?}"),
        };
        let fullv = match k.mo_k_diag(&x, true).unwrap() {
            OutputDiag::Full { data, .. } => data,
            other => panic!("{other:?}"),
        };
        for n in 0..3 {
            for p in 0..3 {
                let direct: f64 = (0..2).map(|l| w[(p, l)].powi(2) * k.latent_kernel(l).unwrap().params.variance).sum();
                assert!((marg[(n, p)] - direct).abs() < 1e-12);
                for q in 0..3 {
                    let direct: f64 =
                        (0..2).map(|l| w[(p, l)] * w[(q, l)] * k.latent_kernel(l).unwrap().params.variance).sum();
                    assert!((fullv[(n * 3 + p, q)] - direct).abs() < 1e-12);
                }
            }
        }
        let per = k.per_output_grams(&x, None).unwrap();
        let g = full(k.mo_k(&x, None, true).unwrap());
        for p in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert!((per[p][(i, j)] - g[(i * 3 + p, j * 3 + p)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn convolutional_constant_image_diag() {
        let base = SingleOutputKernel::squared_exponential(0.9, 1.0, 4).unwrap();
        let conv = ConvolutionalKernel::new(base.clone(), PatchGeometry::new(3, 3, 2, 2).unwrap()).unwrap();
        let k = MultioutputKernel::Convolutional(conv);
        let x = DenseMatrix::from_rows(&[vec![0.4; 9], vec![-1.0; 9]]).unwrap();
        match k.mo_k_diag(&x, false).unwrap() {
            OutputDiag::Marginal(m) => assert!(m.as_slice().iter().all(|&v| (v - 0.9).abs() < 1e-15)),
            other => panic!("{other:?}"),
        }
        match k.mo_k_diag(&x, true).unwrap() {
            OutputDiag::Full { data, .. } => assert!(data.as_slice().iter().all(|&v| (v - 0.9).abs() < 1e-15)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kernel_wrapper_routes_single_output_gram() {
        let base = SingleOutputKernel::squared_exponential(1.0, 1.0, 2).unwrap();
        let lmc = Kernel::Multi(MultioutputKernel::SharedIndependent { base: base.clone(), num_outputs: 2 });
        assert!(matches!(lmc.k_full(&grid(2, 2, 0), None), Err(Error::UnsupportedMode(_))));
        let single = Kernel::from(base);
        assert_eq!(single.num_outputs(), 1);
        assert!(single.k_full(&grid(2, 2, 0), None).is_ok());
    }
}
