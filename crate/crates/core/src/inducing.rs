//! Inducing-variable definitions.

use std::any::Any;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::covariances::{tags, TypeTag};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, MultioutputKernel};
use crate::numerics::DenseMatrix;

/// Point evaluations `u = f(Z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducingPoints {
    pub z: DenseMatrix,
}

impl InducingPoints {
    pub fn new(z: DenseMatrix) -> Result<Self> {
        if z.rows() == 0 {
            return Err(Error::InvalidParameter("need at least one inducing point".into()));
        }
        Ok(InducingPoints { z })
    }
}

/// Gaussian-window integrals `u_m = ∫ f(x) N(x; z_m, diag(s_m^2)) dx`.
/// `scales` holds the window standard deviations, one row per inducing variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multiscale {
    pub z: DenseMatrix,
    pub scales: DenseMatrix,
}

impl Multiscale {
    pub fn new(z: DenseMatrix, scales: DenseMatrix) -> Result<Self> {
        if z.rows() == 0 {
            return Err(Error::InvalidParameter("need at least one inducing variable".into()));
        }
        if z.shape() != scales.shape() {
            return Err(Error::DimensionMismatch(format!(
                "centres are {:?} but scales are {:?}",
                z.shape(),
                scales.shape()
            )));
        }
        if scales.as_slice().iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter("window scales must be positive".into()));
        }
        Ok(Multiscale { z, scales })
    }
}

/// Inducing variables living in patch space of a convolutional kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducingPatches {
    pub z: DenseMatrix,
}

/// Extension point for inducing variables defined outside this crate.
pub trait CustomInducing: fmt::Debug + Send + Sync + 'static {
    fn tag(&self) -> TypeTag;
    fn num_inducing(&self, kernel: &Kernel) -> usize;
    /// Locations usable by point-based fallback implementations, if any.
    fn inducing_inputs(&self) -> Option<&DenseMatrix> {
        None
    }
    fn as_any(&self) -> &dyn Any;
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum InducingVariable {
    Points(InducingPoints),
    Multiscale(Multiscale),
    Patches(InducingPatches),
    /// One set of inducing variables shared by every latent process.
    SharedIndependent(Box<InducingVariable>),
    /// One set per latent process.
    SeparateIndependent(Vec<InducingVariable>),
    #[serde(skip)]
    Custom(Arc<dyn CustomInducing>),
}

impl PartialEq for InducingVariable {
    fn eq(&self, other: &Self) -> bool {
        use InducingVariable::*;
        match (self, other) {
            (Points(a), Points(b)) => a == b,
            (Multiscale(a), Multiscale(b)) => a == b,
            (Patches(a), Patches(b)) => a == b,
            (SharedIndependent(a), SharedIndependent(b)) => a == b,
            (SeparateIndependent(a), SeparateIndependent(b)) => a == b,
            (Custom(a), Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl InducingVariable {
    pub fn points(z: DenseMatrix) -> Result<Self> {
        Ok(InducingVariable::Points(InducingPoints::new(z)?))
    }

    pub fn shared(base: InducingVariable) -> Self {
        InducingVariable::SharedIndependent(Box::new(base))
    }

    pub fn tag(&self) -> TypeTag {
        match self {
            InducingVariable::Points(_) => tags::INDUCING_POINTS,
            InducingVariable::Multiscale(_) => tags::MULTISCALE,
            InducingVariable::Patches(_) => tags::INDUCING_PATCHES,
            InducingVariable::SharedIndependent(_) => tags::SHARED_INDEPENDENT_IV,
            InducingVariable::SeparateIndependent(_) => tags::SEPARATE_INDEPENDENT_IV,
            InducingVariable::Custom(c) => c.tag(),
        }
    }

    /// Inducing locations for point-like variables (points, multiscale
    /// centres, patches).
    pub fn inducing_inputs(&self) -> Option<&DenseMatrix> {
        match self {
            InducingVariable::Points(p) => Some(&p.z),
            InducingVariable::Multiscale(m) => Some(&m.z),
            InducingVariable::Patches(p) => Some(&p.z),
            InducingVariable::Custom(c) => c.inducing_inputs(),
            _ => None,
        }
    }

    /// Number of base inducing variables of a point-like set.
    pub fn len(&self) -> usize {
        match self {
            InducingVariable::SharedIndependent(b) => b.len(),
            InducingVariable::SeparateIndependent(v) => v.iter().map(InducingVariable::len).sum(),
            other => other.inducing_inputs().map_or(0, DenseMatrix::rows),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Latent sub-variables: `L` references for the shared and separate forms.
    pub fn latent_parts(&self, num_latents: usize) -> Result<Vec<&InducingVariable>> {
        match self {
            InducingVariable::SharedIndependent(b) => Ok(vec![b.as_ref(); num_latents]),
            InducingVariable::SeparateIndependent(v) => {
                if v.len() != num_latents {
                    return Err(Error::ShapeMismatch(format!(
                        "{} separate inducing sets for {num_latents} latent processes",
                        v.len()
                    )));
                }
                Ok(v.iter().collect())
            }
            _ => Err(Error::UnsupportedCombination("inducing variable has no latent structure".into())),
        }
    }

    /// Total number of inducing variables `M̃` when paired with `kernel`.
    pub fn num_inducing(&self, kernel: &Kernel) -> usize {
        match self {
            InducingVariable::Custom(c) => c.num_inducing(kernel),
            InducingVariable::SharedIndependent(b) => {
                let l = kernel.as_multioutput().and_then(MultioutputKernel::num_latents).unwrap_or(1);
                b.len() * l
            }
            InducingVariable::SeparateIndependent(v) => v.iter().map(InducingVariable::len).sum(),
            InducingVariable::Points(p) => match kernel {
                Kernel::Multi(k) => p.z.rows() * k.num_outputs(),
                _ => p.z.rows(),
            },
            other => other.len(),
        }
    }

    /// Sizes of the latent blocks, when the variable has latent structure.
    pub fn block_sizes(&self, kernel: &Kernel) -> Option<Vec<usize>> {
        match self {
            InducingVariable::SharedIndependent(b) => {
                let l = kernel.as_multioutput().and_then(MultioutputKernel::num_latents).unwrap_or(1);
                Some(vec![b.len(); l])
            }
            InducingVariable::SeparateIndependent(v) => Some(v.iter().map(InducingVariable::len).collect()),
            _ => None,
        }
    }

    /// Input dimension of the inducing locations.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            InducingVariable::SharedIndependent(b) => b.input_dim(),
            InducingVariable::SeparateIndependent(v) => v.first().and_then(InducingVariable::input_dim),
            other => other.inducing_inputs().map(DenseMatrix::cols),
        }
    }
}
