//! Parameter store with constraint transforms, gradients by central finite
//! differences (with analytic entries where available), Adam, and the
//! training loop.

mod fit;
mod store;
mod visit;

pub use fit::{
    adam_step, finite_difference, fit, fit_gpr, gradient, Adam, FitConfig, GradientStrategy, Trace, TraceRecord, TraceWarning,
    Trainable, DEFAULT_FD_STEP,
};
pub use store::{softplus, softplus_inverse, ParameterStore, Slot, Transform, POSITIVE_FLOOR};
pub use visit::Parameterized;
