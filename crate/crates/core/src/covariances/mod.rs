//! Type-keyed dispatch and the `Kuu` / `Kuf` covariances for every shipped
//! (inducing variable, kernel) pair.

mod dispatch;
mod multiscale;

use serde::{Deserialize, Serialize};

pub use dispatch::{tags, ConditionalFn, Dispatcher, KufFn, KuuFn, Registry, TypeHierarchy, TypeTag};
pub use multiscale::{multiscale_kuf, multiscale_kuu};

use crate::conditionals;
use crate::error::{Error, Result};
use crate::inducing::InducingVariable;
use crate::kernels::{Kernel, MultioutputKernel, OutputGram};
use crate::numerics::{BlockDiagonal, DenseMatrix, StructuredPSD};

/// Prior covariance of the inducing variables, `M̃ x M̃`.
pub type KuuResult = StructuredPSD;

/// Cross-covariance between inducing variables and function values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KufResult {
    /// `M x N` for a scalar process.
    Single(DenseMatrix),
    /// `M x P x N x P` stored as `(M*P) x (N*P)`.
    FullyCorrelated { m: usize, n: usize, p: usize, data: DenseMatrix },
    /// `L x M_l x N`: one block per latent process, unmixed.
    Latent(Vec<DenseMatrix>),
}

impl KufResult {
    pub fn into_single(self) -> Result<DenseMatrix> {
        match self {
            KufResult::Single(m) => Ok(m),
            other => Err(Error::ShapeMismatch(format!("expected a single-output Kuf, got {}", other.describe()))),
        }
    }

    fn describe(&self) -> &'static str {
        match self {
            KufResult::Single(_) => "single-output",
            KufResult::FullyCorrelated { .. } => "fully-correlated",
            KufResult::Latent(_) => "latent",
        }
    }
}

/// `Kuu` through the process-wide dispatcher.
pub fn kuu(iv: &InducingVariable, kernel: &Kernel, jitter: f64) -> Result<KuuResult> {
    Dispatcher::global().kuu(iv, kernel, jitter)
}

/// `Kuf` through the process-wide dispatcher.
pub fn kuf(iv: &InducingVariable, kernel: &Kernel, x: &DenseMatrix) -> Result<KufResult> {
    Dispatcher::global().kuf(iv, kernel, x)
}

fn inputs(iv: &InducingVariable) -> Result<&DenseMatrix> {
    iv.inducing_inputs()
        .ok_or_else(|| Error::UnsupportedCombination(format!("{} has no inducing locations", iv.tag())))
}

fn multioutput(kernel: &Kernel) -> Result<&MultioutputKernel> {
    kernel
        .as_multioutput()
        .ok_or_else(|| Error::UnsupportedCombination(format!("{} is not a multioutput kernel", kernel.tag())))
}

fn convolutional(kernel: &Kernel) -> Result<&crate::kernels::ConvolutionalKernel> {
    match kernel {
        Kernel::Multi(MultioutputKernel::Convolutional(c)) => Ok(c),
        other => Err(Error::UnsupportedCombination(format!("{} is not convolutional", other.tag()))),
    }
}

fn jittered(mut k: DenseMatrix, jitter: f64) -> DenseMatrix {
    k.add_diag(jitter);
    k
}

fn kuu_points(_: &Dispatcher, iv: &InducingVariable, kernel: &Kernel, jitter: f64) -> Result<KuuResult> {
    Ok(StructuredPSD::Dense(jittered(kernel.k_full(inputs(iv)?, None)?, jitter)))
}

fn kuf_points(_: &Dispatcher, iv: &InducingVariable, kernel: &Kernel, x: &DenseMatrix) -> Result<KufResult> {
    Ok(KufResult::Single(kernel.k_full(inputs(iv)?, Some(x))?))
}

fn kuu_points_multioutput(_: &Dispatcher, iv: &InducingVariable, kernel: &Kernel, jitter: f64) -> Result<KuuResult> {
    match multioutput(kernel)?.mo_k(inputs(iv)?, None, true)? {
        OutputGram::Full { data, .. } => Ok(StructuredPSD::Dense(jittered(data, jitter))),
        _ => unreachable!("full output covariance requested"),
    }
}

fn kuf_points_multioutput(_: &Dispatcher, iv: &InducingVariable, kernel: &Kernel, x: &DenseMatrix) -> Result<KufResult> {
    match multioutput(kernel)?.mo_k(inputs(iv)?, Some(x), true)? {
        OutputGram::Full { n, n2, p, data } => Ok(KufResult::FullyCorrelated { m: n, n: n2, p, data }),
        _ => unreachable!("full output covariance requested"),
    }
}

fn kuu_multiscale(_: &Dispatcher, iv: &InducingVariable, kernel: &Kernel, jitter: f64) -> Result<KuuResult> {
    let (InducingVariable::Multiscale(ms), Kernel::Single(k)) = (iv, kernel) else {
        return Err(Error::UnsupportedCombination("multiscale covariances need a squared-exponential kernel".into()));
    };
    Ok(StructuredPSD::Dense(jittered(multiscale_kuu(ms, k)?, jitter)))
}

fn kuf_multiscale(_: &Dispatcher, iv: &InducingVariable, kernel: &Kernel, x: &DenseMatrix) -> Result<KufResult> {
    let (InducingVariable::Multiscale(ms), Kernel::Single(k)) = (iv, kernel) else {
        return Err(Error::UnsupportedCombination("multiscale covariances need a squared-exponential kernel".into()));
    };
    Ok(KufResult::Single(multiscale_kuf(ms, k, x)?))
}

fn kuu_patches(_: &Dispatcher, iv: &InducingVariable, kernel: &Kernel, jitter: f64) -> Result<KuuResult> {
    let conv = convolutional(kernel)?;
    Ok(StructuredPSD::Dense(jittered(conv.base.k_full(inputs(iv)?, None)?, jitter)))
}

fn kuf_patches(_: &Dispatcher, iv: &InducingVariable, kernel: &Kernel, x: &DenseMatrix) -> Result<KufResult> {
    Ok(KufResult::Single(convolutional(kernel)?.patch_image_cross(inputs(iv)?, x)?))
}

/// Latent sub-problems `(inducing part, latent kernel)` for the block paths.
fn latent_pairs<'a>(iv: &'a InducingVariable, kernel: &'a Kernel) -> Result<Vec<(&'a InducingVariable, Kernel)>> {
    let mo = multioutput(kernel)?;
    let l = mo
        .num_latents()
        .ok_or_else(|| Error::UnsupportedCombination(format!("{} has no latent processes", kernel.tag())))?;
    let parts = iv.latent_parts(l)?;
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(i, part)| (part, Kernel::Single(mo.latent_kernel(i).expect("index in range").clone())))
        .collect())
}

/// True when one `Kuu` block and one `Kuf` block serve every latent.
fn fully_shared(iv: &InducingVariable, kernel: &Kernel) -> bool {
    matches!(iv, InducingVariable::SharedIndependent(_)) && kernel.as_multioutput().is_some_and(MultioutputKernel::latents_share_kernel)
}

fn kuu_latent(d: &Dispatcher, iv: &InducingVariable, kernel: &Kernel, jitter: f64) -> Result<KuuResult> {
    let pairs = latent_pairs(iv, kernel)?;
    if fully_shared(iv, kernel) {
        let (part, k) = &pairs[0];
        let block = d.kuu(part, k, jitter)?.densify();
        return Ok(StructuredPSD::BlockDiagonal(BlockDiagonal::shared(block, pairs.len())?));
    }
    let blocks = pairs
        .iter()
        .map(|(part, k)| Ok(d.kuu(part, k, jitter)?.densify()))
        .collect::<Result<Vec<_>>>()?;
    Ok(StructuredPSD::BlockDiagonal(BlockDiagonal::new(blocks)?))
}

fn kuf_latent(d: &Dispatcher, iv: &InducingVariable, kernel: &Kernel, x: &DenseMatrix) -> Result<KufResult> {
    let pairs = latent_pairs(iv, kernel)?;
    if fully_shared(iv, kernel) {
        let (part, k) = &pairs[0];
        let block = d.kuf(part, k, x)?.into_single()?;
        return Ok(KufResult::Latent(vec![block; pairs.len()]));
    }
    let blocks = pairs
        .iter()
        .map(|(part, k)| d.kuf(part, k, x)?.into_single())
        .collect::<Result<Vec<_>>>()?;
    Ok(KufResult::Latent(blocks))
}

pub(crate) fn register_shipped(d: &mut Dispatcher) -> Result<()> {
    use tags::*;
    for t in [INDUCING_POINTS, INDUCING_PATCHES, SHARED_INDEPENDENT_IV, SEPARATE_INDEPENDENT_IV] {
        d.declare_inducing(t, INDUCING_VARIABLE)?;
    }
    d.declare_inducing(MULTISCALE, INDUCING_POINTS)?;
    for t in [SQUARED_EXPONENTIAL, MATERN12, MATERN32, MATERN52, LINEAR, WHITE, MULTIOUTPUT_KERNEL] {
        d.declare_kernel(t, KERNEL)?;
    }
    for t in [SHARED_INDEPENDENT, SEPARATE_INDEPENDENT, INDEPENDENT_LATENT, CONVOLUTIONAL] {
        d.declare_kernel(t, MULTIOUTPUT_KERNEL)?;
    }
    d.declare_kernel(LINEAR_COREGIONALIZATION, INDEPENDENT_LATENT)?;
    d.declare_kernel(INTRINSIC_COREGIONALIZATION, INDEPENDENT_LATENT)?;

    d.register_kuu(INDUCING_POINTS, KERNEL, kuu_points)?;
    d.register_kuf(INDUCING_POINTS, KERNEL, kuf_points)?;
    d.register_kuu(INDUCING_POINTS, MULTIOUTPUT_KERNEL, kuu_points_multioutput)?;
    d.register_kuf(INDUCING_POINTS, MULTIOUTPUT_KERNEL, kuf_points_multioutput)?;
    d.register_kuu(MULTISCALE, SQUARED_EXPONENTIAL, kuu_multiscale)?;
    d.register_kuf(MULTISCALE, SQUARED_EXPONENTIAL, kuf_multiscale)?;
    d.register_kuu(INDUCING_PATCHES, CONVOLUTIONAL, kuu_patches)?;
    d.register_kuf(INDUCING_PATCHES, CONVOLUTIONAL, kuf_patches)?;
    for iv in [SHARED_INDEPENDENT_IV, SEPARATE_INDEPENDENT_IV] {
        for k in [SHARED_INDEPENDENT, SEPARATE_INDEPENDENT, INDEPENDENT_LATENT] {
            d.register_kuu(iv, k, kuu_latent)?;
            d.register_kuf(iv, k, kuf_latent)?;
        }
    }

    d.register_conditional(INDUCING_VARIABLE, KERNEL, conditionals::single_output_path)?;
    d.register_conditional(INDUCING_POINTS, MULTIOUTPUT_KERNEL, conditionals::fully_correlated_path)?;
    for iv in [SHARED_INDEPENDENT_IV, SEPARATE_INDEPENDENT_IV] {
        d.register_conditional(iv, SHARED_INDEPENDENT, conditionals::independent_path)?;
        d.register_conditional(iv, SEPARATE_INDEPENDENT, conditionals::independent_path)?;
        d.register_conditional(iv, INDEPENDENT_LATENT, conditionals::mixed_latent_path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inducing::Multiscale;
    use crate::kernels::{ConvolutionalKernel, KernelFamily, PatchGeometry, SingleOutputKernel};
    use crate::numerics::symmetric_eigenvalues;

    fn pts(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut s = seed;
        DenseMatrix::from_fn(n, d, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        })
    }

    fn se(d: usize) -> SingleOutputKernel {
        SingleOutputKernel::squared_exponential(1.3, 0.9, d).unwrap()
    }

    fn lmc(w: DenseMatrix) -> Kernel {
        let ks = (0..w.cols())
            .map(|i| SingleOutputKernel::isotropic(KernelFamily::Matern52, 1.0 + 0.2 * i as f64, 0.6 + 0.5 * i as f64, 1).unwrap())
            .collect();
        Kernel::Multi(MultioutputKernel::linear_coregionalization(ks, w).unwrap())
    }

    #[test]
    fn shipped_dispatcher_is_unambiguous() {
        Dispatcher::shipped().validate().unwrap();
    }

    #[test]
    fn resolution_examples() {
        use tags::*;
        let d = Dispatcher::shipped();
        let kuu_of = |iv, k| d.resolved_pairs(iv, k)[0].clone();
        let cond_of = |iv, k| d.resolved_pairs(iv, k)[2].clone();
        assert_eq!(kuu_of(MULTISCALE, SQUARED_EXPONENTIAL).unwrap(), (MULTISCALE, SQUARED_EXPONENTIAL));
        assert_eq!(kuu_of(MULTISCALE, MATERN32).unwrap(), (INDUCING_POINTS, KERNEL));
        assert_eq!(kuu_of(INDUCING_POINTS, LINEAR_COREGIONALIZATION).unwrap(), (INDUCING_POINTS, MULTIOUTPUT_KERNEL));
        assert_eq!(cond_of(INDUCING_PATCHES, CONVOLUTIONAL).unwrap(), (INDUCING_VARIABLE, KERNEL));
        assert_eq!(cond_of(SHARED_INDEPENDENT_IV, INTRINSIC_COREGIONALIZATION).unwrap(), (SHARED_INDEPENDENT_IV, INDEPENDENT_LATENT));
        assert_eq!(cond_of(INDUCING_POINTS, CONVOLUTIONAL).unwrap(), (INDUCING_POINTS, MULTIOUTPUT_KERNEL));
        assert!(matches!(kuu_of(INDUCING_PATCHES, SQUARED_EXPONENTIAL), Err(Error::NoImplementation { .. })));
        assert!(matches!(kuu_of(TypeTag("Orphan"), KERNEL), Err(Error::UnknownTag(_))));
    }

    #[test]
    fn specific_registration_overrides_fallback() {
        let mut d = Dispatcher::empty();
        d.declare_inducing(tags::INDUCING_POINTS, tags::INDUCING_VARIABLE).unwrap();
        d.declare_inducing(tags::MULTISCALE, tags::INDUCING_POINTS).unwrap();
        d.declare_kernel(tags::SQUARED_EXPONENTIAL, tags::KERNEL).unwrap();
        d.register_kuu(tags::INDUCING_POINTS, tags::KERNEL, kuu_points).unwrap();
        let ms = InducingVariable::Multiscale(Multiscale::new(pts(3, 1, 1), DenseMatrix::from_fn(3, 1, |_, _| 0.5)).unwrap());
        let k = Kernel::from(se(1));
        let fallback = d.kuu(&ms, &k, 0.0).unwrap().densify();
        assert_eq!(fallback, k.k_full(ms.inducing_inputs().unwrap(), None).unwrap());
        d.register_kuu(tags::MULTISCALE, tags::SQUARED_EXPONENTIAL, kuu_multiscale).unwrap();
        let specific = d.kuu(&ms, &k, 0.0).unwrap().densify();
        assert!(specific.max_abs_diff(&fallback) > 1e-3);
        assert!(matches!(
            d.register_kuu(tags::MULTISCALE, tags::SQUARED_EXPONENTIAL, kuu_multiscale),
            Err(Error::DuplicateRegistration { .. })
        ));
    }

    #[test]
    fn points_kuf_at_z_is_kuu_without_jitter() {
        let z = pts(5, 2, 3);
        let iv = InducingVariable::points(z.clone()).unwrap();
        let k = Kernel::from(se(2));
        let kuu = kuu(&iv, &k, 1e-4).unwrap().densify();
        let kuf = kuf(&iv, &k, &z).unwrap().into_single().unwrap();
        let mut expected = kuu.clone();
        expected.add_diag(-1e-4);
        assert!(kuf.max_abs_diff(&expected) < 1e-15);
        assert_eq!(kuf, k.k_full(&z, Some(&z)).unwrap());
    }

    #[test]
    fn multioutput_kuf_matches_mo_k() {
        let w = DenseMatrix::from_rows(&[vec![1.0, 0.3], vec![-0.4, 0.8], vec![0.5, 0.5]]).unwrap();
        let k = lmc(w);
        let (z, x) = (pts(4, 1, 5), pts(6, 1, 6));
        let iv = InducingVariable::points(z.clone()).unwrap();
        let KufResult::FullyCorrelated { m, n, p, data } = kuf(&iv, &k, &x).unwrap() else { panic!() };
        assert_eq!((m, n, p), (4, 6, 3));
        let OutputGram::Full { data: oracle, .. } = k.as_multioutput().unwrap().mo_k(&z, Some(&x), true).unwrap() else {
            panic!()
        };
        assert!(data.max_abs_diff(&oracle) < 1e-12);
        assert_eq!(iv.num_inducing(&k), kuu(&iv, &k, 0.0).unwrap().dim());
    }

    #[test]
    fn latent_kuu_blocks() {
        let base = se(1);
        let k = Kernel::Multi(MultioutputKernel::SeparateIndependent { kernels: vec![base.clone(), base] });
        let iv = InducingVariable::shared(InducingVariable::points(pts(3, 1, 7)).unwrap());
        let StructuredPSD::BlockDiagonal(b) = kuu(&iv, &k, 1e-6).unwrap() else { panic!() };
        assert_eq!(b.num_blocks(), 2);
        assert_eq!(b.block(0), b.block(1));
        assert_eq!(iv.num_inducing(&k), b.dim());

        let imc = Kernel::Multi(MultioutputKernel::IntrinsicCoregionalization {
            base: se(1),
            mixing: DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![0.1, 0.2]]).unwrap(),
        });
        let StructuredPSD::BlockDiagonal(b) = kuu(&iv, &imc, 1e-6).unwrap() else { panic!() };
        assert!(b.is_shared());
        assert_eq!(b.stored_blocks().len(), 1);
        assert_eq!(b.num_blocks(), 2);
    }

    #[test]
    fn identity_mixing_dense_kuu_is_permuted_block_diagonal() {
        let k = lmc(DenseMatrix::identity(2));
        let z = pts(3, 1, 8);
        let dense = kuu(&InducingVariable::points(z.clone()).unwrap(), &k, 0.0).unwrap().densify();
        let blocks = kuu(&InducingVariable::shared(InducingVariable::points(z).unwrap()), &k, 0.0).unwrap().densify();
        // dense index m*P + p, block index p*M + m
        for a in 0..6 {
            for b in 0..6 {
                let (ma, pa, mb, pb) = (a / 2, a % 2, b / 2, b % 2);
                assert!((dense[(a, b)] - blocks[(pa * 3 + ma, pb * 3 + mb)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn every_kuu_is_psd() {
        let z = pts(4, 1, 9);
        let w = DenseMatrix::from_rows(&[vec![1.0, 0.3], vec![-0.4, 0.8], vec![0.5, 0.5]]).unwrap();
        let cases = vec![
            (InducingVariable::points(z.clone()).unwrap(), Kernel::from(se(1))),
            (InducingVariable::points(z.clone()).unwrap(), lmc(w.clone())),
            (InducingVariable::shared(InducingVariable::points(z.clone()).unwrap()), lmc(w)),
            (
                InducingVariable::Multiscale(Multiscale::new(z.clone(), DenseMatrix::from_fn(4, 1, |i, _| 0.1 + 0.2 * i as f64)).unwrap()),
                Kernel::from(se(1)),
            ),
        ];
        for (iv, k) in cases {
            let m = kuu(&iv, &k, 0.0).unwrap().densify();
            assert!(m.asymmetry() < 1e-14);
            assert!(symmetric_eigenvalues(&m)[0] > -1e-8, "{:?}", iv.tag());
        }
    }

    #[test]
    fn patch_kuf_sums_patch_responses() {
        let base = SingleOutputKernel::squared_exponential(0.7, 1.1, 4).unwrap();
        let conv = ConvolutionalKernel::new(base.clone(), PatchGeometry::new(3, 3, 2, 2).unwrap()).unwrap();
        let k = Kernel::Multi(MultioutputKernel::Convolutional(conv));
        let z = pts(3, 4, 10);
        let x = pts(2, 9, 11);
        let iv = InducingVariable::Patches(crate::inducing::InducingPatches { z: z.clone() });
        let kuf = kuf(&iv, &k, &x).unwrap().into_single().unwrap();
        for m in 0..3 {
            for n in 0..2 {
                let img = x.row(n);
                let mut s = 0.0;
                for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let patch = [img[r * 3 + c], img[r * 3 + c + 1], img[(r + 1) * 3 + c], img[(r + 1) * 3 + c + 1]];
                    s += base.eval(z.row(m), &patch);
                }
                assert!((kuf[(m, n)] - s).abs() < 1e-14);
            }
        }
        assert_eq!(kuu(&iv, &k, 0.0).unwrap().densify(), base.k_full(&z, None).unwrap());
    }
}
