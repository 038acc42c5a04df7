use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::conditionals::{ConditionalRequest, PosteriorMoments};
use crate::error::{Error, Result};
use crate::inducing::InducingVariable;
use crate::kernels::Kernel;
use crate::numerics::DenseMatrix;

use super::{KufResult, KuuResult};

/// Name of a node in one of the two type hierarchies.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TypeTag(pub &'static str);

impl TypeTag {
    pub fn name(self) -> &'static str {
        self.0
    }
}

impl fmt::Debug for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

/// Tags of every shipped type.
pub mod tags {
    use super::TypeTag;

    pub const INDUCING_VARIABLE: TypeTag = TypeTag("InducingVariable");
    pub const INDUCING_POINTS: TypeTag = TypeTag("InducingPoints");
    pub const MULTISCALE: TypeTag = TypeTag("Multiscale");
    pub const INDUCING_PATCHES: TypeTag = TypeTag("InducingPatches");
    pub const SHARED_INDEPENDENT_IV: TypeTag = TypeTag("SharedIndependentInducingVariables");
    pub const SEPARATE_INDEPENDENT_IV: TypeTag = TypeTag("SeparateIndependentInducingVariables");

    pub const KERNEL: TypeTag = TypeTag("Kernel");
    pub const SQUARED_EXPONENTIAL: TypeTag = TypeTag("SquaredExponential");
    pub const MATERN12: TypeTag = TypeTag("Matern12");
    pub const MATERN32: TypeTag = TypeTag("Matern32");
    pub const MATERN52: TypeTag = TypeTag("Matern52");
    pub const LINEAR: TypeTag = TypeTag("Linear");
    pub const WHITE: TypeTag = TypeTag("White");
    pub const MULTIOUTPUT_KERNEL: TypeTag = TypeTag("MultioutputKernel");
    pub const SHARED_INDEPENDENT: TypeTag = TypeTag("SharedIndependent");
    pub const SEPARATE_INDEPENDENT: TypeTag = TypeTag("SeparateIndependent");
    pub const INDEPENDENT_LATENT: TypeTag = TypeTag("IndependentLatent");
    pub const LINEAR_COREGIONALIZATION: TypeTag = TypeTag("LinearCoregionalization");
    pub const INTRINSIC_COREGIONALIZATION: TypeTag = TypeTag("IntrinsicCoregionalization");
    pub const CONVOLUTIONAL: TypeTag = TypeTag("Convolutional");
}

/// Single-inheritance tree of type tags.
#[derive(Clone, Debug)]
pub struct TypeHierarchy {
    root: TypeTag,
    parent: HashMap<TypeTag, Option<TypeTag>>,
}

impl TypeHierarchy {
    pub fn new(root: TypeTag) -> Self {
        TypeHierarchy { root, parent: HashMap::from([(root, None)]) }
    }

    pub fn root(&self) -> TypeTag {
        self.root
    }

    /// Adds `tag` below `parent`. Re-declaring with the same parent is a no-op.
    pub fn declare(&mut self, tag: TypeTag, parent: TypeTag) -> Result<()> {
        if !self.parent.contains_key(&parent) {
            return Err(Error::UnknownTag(parent.to_string()));
        }
        match self.parent.get(&tag) {
            Some(existing) if *existing == Some(parent) => Ok(()),
            Some(_) => Err(Error::InvalidParameter(format!("{tag} is already declared under another parent"))),
            None => {
                self.parent.insert(tag, Some(parent));
                Ok(())
            }
        }
    }

    pub fn contains(&self, tag: TypeTag) -> bool {
        self.parent.contains_key(&tag)
    }

    /// `tag` followed by its ancestors up to the root.
    pub fn lineage(&self, tag: TypeTag) -> Result<Vec<TypeTag>> {
        let mut out = vec![tag];
        let mut cur = *self.parent.get(&tag).ok_or_else(|| Error::UnknownTag(tag.to_string()))?;
        while let Some(p) = cur {
            out.push(p);
            cur = self.parent[&p];
        }
        Ok(out)
    }

    pub fn tags(&self) -> Vec<TypeTag> {
        let mut t: Vec<_> = self.parent.keys().copied().collect();
        t.sort();
        t
    }
}

/// Map from `(inducing tag, kernel tag)` to an implementation.
pub struct Registry<F: ?Sized> {
    name: &'static str,
    entries: BTreeMap<(TypeTag, TypeTag), Arc<F>>,
}

impl<F: ?Sized> Clone for Registry<F> {
    fn clone(&self) -> Self {
        Registry { name: self.name, entries: self.entries.clone() }
    }
}

impl<F: ?Sized> Registry<F> {
    pub fn new(name: &'static str) -> Self {
        Registry { name, entries: BTreeMap::new() }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn registered_pairs(&self) -> Vec<(TypeTag, TypeTag)> {
        self.entries.keys().copied().collect()
    }

    fn insert(&mut self, iv: TypeTag, kernel: TypeTag, f: Arc<F>) -> Result<()> {
        if self.entries.contains_key(&(iv, kernel)) {
            return Err(Error::DuplicateRegistration {
                registry: self.name,
                iv: iv.to_string(),
                kernel: kernel.to_string(),
            });
        }
        self.entries.insert((iv, kernel), f);
        Ok(())
    }

    /// Picks the registered pair nearest to `(iv, kernel)`.
    ///
    /// A candidate is any registered pair whose tags are ancestors (or the
    /// tags themselves) of the query. Candidate `a` beats `b` when both of its
    /// tags are at least as specific. The unique unbeaten candidate wins;
    /// several unbeaten candidates are an ambiguity.
    pub fn resolve(
        &self,
        iv_types: &TypeHierarchy,
        kernel_types: &TypeHierarchy,
        iv: TypeTag,
        kernel: TypeTag,
    ) -> Result<((TypeTag, TypeTag), Arc<F>)> {
        let iv_line = iv_types.lineage(iv)?;
        let k_line = kernel_types.lineage(kernel)?;
        let mut candidates = Vec::new();
        for (di, a) in iv_line.iter().enumerate() {
            for (dk, b) in k_line.iter().enumerate() {
                if let Some(f) = self.entries.get(&(*a, *b)) {
                    candidates.push((di, dk, (*a, *b), f));
                }
            }
        }
        let minimal: Vec<_> = candidates
            .iter()
            .filter(|c| {
                !candidates
                    .iter()
                    .any(|o| o.0 <= c.0 && o.1 <= c.1 && (o.0, o.1) != (c.0, c.1))
            })
            .collect();
        match minimal.as_slice() {
            [] => Err(Error::NoImplementation { registry: self.name, iv: iv.to_string(), kernel: kernel.to_string() }),
            [one] => Ok((one.2, Arc::clone(one.3))),
            many => Err(Error::AmbiguityDetected {
                registry: self.name,
                iv: iv.to_string(),
                kernel: kernel.to_string(),
                candidates: many.iter().map(|c| format!("({}, {})", c.2 .0, c.2 .1)).collect::<Vec<_>>().join(", "),
            }),
        }
    }
}

pub type KuuFn = dyn Fn(&Dispatcher, &InducingVariable, &Kernel, f64) -> Result<KuuResult> + Send + Sync;
pub type KufFn = dyn Fn(&Dispatcher, &InducingVariable, &Kernel, &DenseMatrix) -> Result<KufResult> + Send + Sync;
pub type ConditionalFn = dyn Fn(&Dispatcher, &ConditionalRequest<'_>) -> Result<PosteriorMoments> + Send + Sync;

/// Type hierarchies plus the three registries used by the inference code.
///
/// Users extend the shipped set by cloning [`Dispatcher::shipped`], declaring
/// their own tags and registering implementations for new pairs.
#[derive(Clone)]
pub struct Dispatcher {
    pub inducing_types: TypeHierarchy,
    pub kernel_types: TypeHierarchy,
    kuu: Registry<KuuFn>,
    kuf: Registry<KufFn>,
    conditional: Registry<ConditionalFn>,
}

impl fmt::Debug for Dispatcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dispatcher")
            .field("kuu", &self.kuu.registered_pairs())
            .field("kuf", &self.kuf.registered_pairs())
            .field("conditional", &self.conditional.registered_pairs())
            .finish()
    }
}

impl Dispatcher {
    /// Both hierarchies with only their roots and no registrations.
    pub fn empty() -> Self {
        Dispatcher {
            inducing_types: TypeHierarchy::new(tags::INDUCING_VARIABLE),
            kernel_types: TypeHierarchy::new(tags::KERNEL),
            kuu: Registry::new("Kuu"),
            kuf: Registry::new("Kuf"),
            conditional: Registry::new("conditional"),
        }
    }

    /// All shipped types and implementations.
    pub fn shipped() -> Self {
        let mut d = Dispatcher::empty();
        super::register_shipped(&mut d).expect("shipped registrations are consistent");
        d
    }

    /// Process-wide shipped dispatcher.
    pub fn global() -> Arc<Dispatcher> {
        static GLOBAL: OnceLock<Arc<Dispatcher>> = OnceLock::new();
        Arc::clone(GLOBAL.get_or_init(|| Arc::new(Dispatcher::shipped())))
    }

    pub fn declare_inducing(&mut self, tag: TypeTag, parent: TypeTag) -> Result<()> {
        self.inducing_types.declare(tag, parent)
    }

    pub fn declare_kernel(&mut self, tag: TypeTag, parent: TypeTag) -> Result<()> {
        self.kernel_types.declare(tag, parent)
    }

    fn check_tags(&self, iv: TypeTag, kernel: TypeTag) -> Result<()> {
        if !self.inducing_types.contains(iv) {
            return Err(Error::UnknownTag(iv.to_string()));
        }
        if !self.kernel_types.contains(kernel) {
            return Err(Error::UnknownTag(kernel.to_string()));
        }
        Ok(())
    }

    pub fn register_kuu(
        &mut self,
        iv: TypeTag,
        kernel: TypeTag,
        f: impl Fn(&Dispatcher, &InducingVariable, &Kernel, f64) -> Result<KuuResult> + Send + Sync + 'static,
    ) -> Result<()> {
        self.check_tags(iv, kernel)?;
        self.kuu.insert(iv, kernel, Arc::new(f))
    }

    pub fn register_kuf(
        &mut self,
        iv: TypeTag,
        kernel: TypeTag,
        f: impl Fn(&Dispatcher, &InducingVariable, &Kernel, &DenseMatrix) -> Result<KufResult> + Send + Sync + 'static,
    ) -> Result<()> {
        self.check_tags(iv, kernel)?;
        self.kuf.insert(iv, kernel, Arc::new(f))
    }

    pub fn register_conditional(
        &mut self,
        iv: TypeTag,
        kernel: TypeTag,
        f: impl Fn(&Dispatcher, &ConditionalRequest<'_>) -> Result<PosteriorMoments> + Send + Sync + 'static,
    ) -> Result<()> {
        self.check_tags(iv, kernel)?;
        self.conditional.insert(iv, kernel, Arc::new(f))
    }

    /// Registered pair that would serve `(iv, kernel)` in each registry.
    pub fn resolved_pairs(&self, iv: TypeTag, kernel: TypeTag) -> [Result<(TypeTag, TypeTag)>; 3] {
        let (it, kt) = (&self.inducing_types, &self.kernel_types);
        [
            self.kuu.resolve(it, kt, iv, kernel).map(|r| r.0),
            self.kuf.resolve(it, kt, iv, kernel).map(|r| r.0),
            self.conditional.resolve(it, kt, iv, kernel).map(|r| r.0),
        ]
    }

    /// Resolves every declared tag pair in every registry and reports the
    /// first ambiguity. Missing implementations are not an error here.
    pub fn validate(&self) -> Result<()> {
        for iv in self.inducing_types.tags() {
            for k in self.kernel_types.tags() {
                for r in self.resolved_pairs(iv, k) {
                    if let Err(e @ Error::AmbiguityDetected { .. }) = r {
                        return Err(e);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn kuu(&self, iv: &InducingVariable, kernel: &Kernel, jitter: f64) -> Result<KuuResult> {
        let (_, f) = self.kuu.resolve(&self.inducing_types, &self.kernel_types, iv.tag(), kernel.tag())?;
        f(self, iv, kernel, jitter)
    }

    pub fn kuf(&self, iv: &InducingVariable, kernel: &Kernel, x: &DenseMatrix) -> Result<KufResult> {
        let (_, f) = self.kuf.resolve(&self.inducing_types, &self.kernel_types, iv.tag(), kernel.tag())?;
        f(self, iv, kernel, x)
    }

    pub fn conditional(&self, req: &ConditionalRequest<'_>) -> Result<PosteriorMoments> {
        let (_, f) =
            self.conditional.resolve(&self.inducing_types, &self.kernel_types, req.iv.tag(), req.kernel.tag())?;
        f(self, req)
    }
}
