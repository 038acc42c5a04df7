use super::store::Transform;
use crate::conditionals::{QSqrt, VariationalGaussian};
use crate::inducing::InducingVariable;
use crate::kernels::{Kernel, MultioutputKernel, SingleOutputKernel};
use crate::likelihoods::{Likelihood, Observation};
use crate::models::{DGPModel, GPRModel, MeanFunction, SVGPModel, UncertainSVGP};
use crate::numerics::{cholesky, LowerTriangular};

/// Callback receiving each parameter's name, transform and mutable values.
pub type Visitor<'a> = dyn FnMut(&str, Transform, &mut [f64]) + 'a;

/// Models expose their parameters as named slots in a fixed order.
pub trait Parameterized {
    fn visit_parameters(&mut self, f: &mut Visitor<'_>);
}

fn single(prefix: &str, k: &mut SingleOutputKernel, f: &mut Visitor<'_>) {
    f(&format!("{prefix}.variance"), Transform::Positive, std::slice::from_mut(&mut k.params.variance));
    f(&format!("{prefix}.lengthscales"), Transform::Positive, &mut k.params.lengthscales);
}

pub(crate) fn kernel(prefix: &str, k: &mut Kernel, f: &mut Visitor<'_>) {
    match k {
        Kernel::Single(s) => single(prefix, s, f),
        Kernel::Multi(MultioutputKernel::SharedIndependent { base, .. }) => single(prefix, base, f),
        Kernel::Multi(MultioutputKernel::SeparateIndependent { kernels }) => {
            for (i, s) in kernels.iter_mut().enumerate() {
                single(&format!("{prefix}.{i}"), s, f);
            }
        }
        Kernel::Multi(MultioutputKernel::LinearCoregionalization { kernels, mixing }) => {
            for (i, s) in kernels.iter_mut().enumerate() {
                single(&format!("{prefix}.{i}"), s, f);
            }
            f(&format!("{prefix}.mixing"), Transform::Identity, mixing.as_mut_slice());
        }
        Kernel::Multi(MultioutputKernel::IntrinsicCoregionalization { base, mixing }) => {
            single(prefix, base, f);
            f(&format!("{prefix}.mixing"), Transform::Identity, mixing.as_mut_slice());
        }
        Kernel::Multi(MultioutputKernel::Convolutional(c)) => single(prefix, &mut c.base, f),
        Kernel::Custom(_) => {}
    }
}

pub(crate) fn inducing(prefix: &str, iv: &mut InducingVariable, f: &mut Visitor<'_>) {
    match iv {
        InducingVariable::Points(p) => f(&format!("{prefix}.z"), Transform::Identity, p.z.as_mut_slice()),
        InducingVariable::Patches(p) => f(&format!("{prefix}.z"), Transform::Identity, p.z.as_mut_slice()),
        InducingVariable::Multiscale(m) => {
            f(&format!("{prefix}.z"), Transform::Identity, m.z.as_mut_slice());
            f(&format!("{prefix}.scales"), Transform::Positive, m.scales.as_mut_slice());
        }
        InducingVariable::SharedIndependent(b) => inducing(prefix, b, f),
        InducingVariable::SeparateIndependent(v) => {
            for (i, b) in v.iter_mut().enumerate() {
                inducing(&format!("{prefix}.{i}"), b, f);
            }
        }
        InducingVariable::Custom(_) => {}
    }
}

/// Slot names of `q_sqrt`: `q.sqrt` for a dense factor, `q.sqrt.<l>` per block.
pub(crate) fn q_sqrt_names(prefix: &str, q: &VariationalGaussian) -> Vec<String> {
    match &q.q_sqrt {
        QSqrt::Full(_) => vec![format!("{prefix}.sqrt")],
        QSqrt::Blocks(b) => (0..b.len()).map(|i| format!("{prefix}.sqrt.{i}")).collect(),
    }
}

pub(crate) fn variational(prefix: &str, q: &mut VariationalGaussian, f: &mut Visitor<'_>) {
    let names = q_sqrt_names(prefix, q);
    f(&format!("{prefix}.mu"), Transform::Identity, &mut q.q_mu);
    let blocks: Vec<&mut LowerTriangular> = match &mut q.q_sqrt {
        QSqrt::Full(l) => vec![l],
        QSqrt::Blocks(b) => b.iter_mut().collect(),
    };
    for (name, l) in names.iter().zip(blocks) {
        let dim = l.dim();
        f(name, Transform::LowerTriangular { dim }, l.packed_mut());
    }
}

pub(crate) fn likelihood(prefix: &str, lik: &mut Likelihood, f: &mut Visitor<'_>) {
    match &mut lik.observation {
        Observation::Gaussian { variance } => f(&format!("{prefix}.variance"), Transform::Positive, std::slice::from_mut(variance)),
        Observation::CorrelatedGaussian { cov } => {
            // Trained through its Cholesky factor so it stays PSD.
            let Ok(l) = cholesky(cov, 0.0) else { return };
            let dim = l.dim();
            let mut packed = l.packed().to_vec();
            f(&format!("{prefix}.cov_sqrt"), Transform::LowerTriangular { dim }, &mut packed);
            if packed.as_slice() == l.packed() {
                return;
            }
            if let Ok(l) = LowerTriangular::from_packed(dim, packed) {
                *cov = l.gram();
            }
        }
        Observation::Bernoulli | Observation::Poisson => {}
    }
}

pub(crate) fn mean(prefix: &str, m: &mut MeanFunction, f: &mut Visitor<'_>) {
    if let MeanFunction::Constant(c) = m {
        f(&format!("{prefix}.constant"), Transform::Identity, std::slice::from_mut(c));
    }
}

impl Parameterized for SVGPModel {
    fn visit_parameters(&mut self, f: &mut Visitor<'_>) {
        kernel("kernel", &mut self.kernel, f);
        inducing("inducing", &mut self.inducing, f);
        variational("q", &mut self.q, f);
        likelihood("likelihood", &mut self.likelihood, f);
        mean("mean", &mut self.mean, f);
    }
}

impl Parameterized for GPRModel {
    fn visit_parameters(&mut self, f: &mut Visitor<'_>) {
        kernel("kernel", &mut self.kernel, f);
        f("likelihood.variance", Transform::Positive, std::slice::from_mut(&mut self.noise_variance));
        mean("mean", &mut self.mean, f);
    }
}

impl Parameterized for DGPModel {
    fn visit_parameters(&mut self, f: &mut Visitor<'_>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            kernel(&format!("layers.{i}.kernel"), &mut layer.kernel, f);
            inducing(&format!("layers.{i}.inducing"), &mut layer.inducing, f);
            variational(&format!("layers.{i}.q"), &mut layer.q, f);
            mean(&format!("layers.{i}.mean"), &mut layer.mean, f);
        }
        likelihood("likelihood", &mut self.likelihood, f);
    }
}

impl Parameterized for UncertainSVGP {
    fn visit_parameters(&mut self, f: &mut Visitor<'_>) {
        self.model.visit_parameters(f);
        f("inputs.mean", Transform::Identity, self.inputs.mean.as_mut_slice());
        f("inputs.variance", Transform::Positive, self.inputs.variance.as_mut_slice());
    }
}
