use serde::{Deserialize, Serialize};

use super::visit::Parameterized;
use crate::error::{Error, Result};

/// Lower bound added by the positive transform.
pub const POSITIVE_FLOOR: f64 = 1e-12;

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Map between the constrained value of a parameter and its free
/// (unconstrained) representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// `softplus(free) + 1e-12`.
    Positive,
    /// Packed lower triangle of dimension `dim`: diagonal positive, the rest
    /// unconstrained.
    LowerTriangular { dim: usize },
}

impl Transform {
    fn positive_at(self, k: usize) -> bool {
        match self {
            Transform::Identity => false,
            Transform::Positive => true,
            Transform::LowerTriangular { .. } => {
                // Packed row-major: row i ends at index i(i+3)/2.
                let i = ((((8 * k + 1) as f64).sqrt() - 1.0) / 2.0).floor() as usize;
                k == i * (i + 3) / 2
            }
        }
    }

    pub fn to_free(self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(k, &v)| if self.positive_at(k) { softplus_inverse((v - POSITIVE_FLOOR).max(f64::MIN_POSITIVE)) } else { v })
            .collect()
    }

    pub fn to_value(self, free: &[f64]) -> Vec<f64> {
        free.iter()
            .enumerate()
            .map(|(k, &x)| if self.positive_at(k) { softplus(x) + POSITIVE_FLOOR } else { x })
            .collect()
    }

    /// `d value / d free`, elementwise.
    pub fn jacobian(self, free: &[f64]) -> Vec<f64> {
        free.iter().enumerate().map(|(k, &x)| if self.positive_at(k) { sigmoid(x) } else { 1.0 }).collect()
    }
}

/// One named parameter of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub transform: Transform,
    /// Free-space values.
    pub free: Vec<f64>,
    pub trainable: bool,
}

impl Slot {
    pub fn values(&self) -> Vec<f64> {
        self.transform.to_value(&self.free)
    }
}

/// Every parameter of a model, held in free space.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    pub slots: Vec<Slot>,
}

fn matches(name: &str, prefix: &str) -> bool {
    name == prefix || (name.starts_with(prefix) && name[prefix.len()..].starts_with('.'))
}

impl ParameterStore {
    pub fn from_model<M: Parameterized + Clone>(model: &M) -> Self {
        let mut slots = Vec::new();
        model.clone().visit_parameters(&mut |name, transform, values| {
            slots.push(Slot { name: name.to_string(), transform, free: transform.to_free(values), trainable: true });
        });
        ParameterStore { slots }
    }

    /// Writes the constrained values of trainable slots into `model`; frozen
    /// slots keep the model's exact values. Slot names must match.
    pub fn apply<M: Parameterized>(&self, model: &mut M) -> Result<()> {
        let mut err = None;
        let mut i = 0;
        model.visit_parameters(&mut |name, _, values| {
            match self.slots.get(i) {
                Some(s) if s.name == name && s.free.len() == values.len() => {
                    if s.trainable {
                        values.copy_from_slice(&s.values())
                    }
                }
                _ if err.is_none() => err = Some(Error::ShapeMismatch(format!("parameter store does not match slot {name}"))),
                _ => {}
            }
            i += 1;
        });
        match err {
            Some(e) => Err(e),
            None if i != self.slots.len() => Err(Error::ShapeMismatch("parameter store has extra slots".into())),
            None => Ok(()),
        }
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.name.as_str()).collect()
    }

    /// Sets the trainable flag of every slot named `prefix` or nested under
    /// it (`kernel` covers `kernel.variance`); returns how many changed.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut count = 0;
        for s in self.slots.iter_mut().filter(|s| matches(&s.name, prefix)) {
            count += usize::from(s.trainable != trainable);
            s.trainable = trainable;
        }
        count
    }

    pub fn freeze(&mut self, prefix: &str) -> usize {
        self.set_trainable(prefix, false)
    }

    pub fn freeze_all(&mut self) {
        self.slots.iter_mut().for_each(|s| s.trainable = false);
    }

    /// `(slot, element)` of every trainable free coordinate.
    pub fn layout(&self) -> Vec<(usize, usize)> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.trainable)
            .flat_map(|(i, s)| (0..s.free.len()).map(move |k| (i, k)))
            .collect()
    }

    pub fn free_vector(&self) -> Vec<f64> {
        self.slots.iter().filter(|s| s.trainable).flat_map(|s| s.free.iter().copied()).collect()
    }

    pub fn set_free_vector(&mut self, v: &[f64]) -> Result<()> {
        let layout = self.layout();
        if v.len() != layout.len() {
            return Err(Error::DimensionMismatch(format!("{} free values for {} trainable coordinates", v.len(), layout.len())));
        }
        for (&(i, k), &x) in layout.iter().zip(v) {
            self.slots[i].free[k] = x;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inducing::InducingVariable;
    use crate::kernels::{MultioutputKernel, SingleOutputKernel};
    use crate::likelihoods::{Likelihood, Observation};
    use crate::models::SVGPModel;
    use crate::numerics::DenseMatrix;

    fn model() -> SVGPModel {
        let base = SingleOutputKernel::squared_exponential(1.0, 0.5, 1).unwrap();
        let kernel = MultioutputKernel::SharedIndependent { base, num_outputs: 2 };
        let iv = InducingVariable::shared(InducingVariable::points(DenseMatrix::from_fn(3, 1, |i, _| i as f64)).unwrap());
        SVGPModel::new(kernel.into(), Likelihood::gaussian(0.3).unwrap(), iv, 10, true).unwrap()
    }

    #[test]
    fn slot_names_and_sizes() {
        let store = ParameterStore::from_model(&model());
        assert_eq!(
            store.names(),
            ["kernel.variance", "kernel.lengthscales", "inducing.z", "q.mu", "q.sqrt.0", "q.sqrt.1", "likelihood.variance"]
        );
        assert_eq!(store.slot("q.sqrt.1").unwrap().free.len(), 6);
        assert_eq!(store.layout().len(), 1 + 1 + 3 + 6 + 12 + 1);
    }

    #[test]
    fn apply_round_trips_values() {
        let m = model();
        let mut store = ParameterStore::from_model(&m);
        let mut out = m.clone();
        store.apply(&mut out).unwrap();
        let Observation::Gaussian { variance } = out.likelihood.observation else { panic!() };
        assert!((variance - 0.3).abs() < 1e-12);
        assert!(out.q.q_mu.iter().zip(&m.q.q_mu).all(|(a, b)| (a - b).abs() < 1e-12));
        let mut x = store.free_vector();
        x[0] += 1.0;
        store.set_free_vector(&x).unwrap();
        store.apply(&mut out).unwrap();
        let MultioutputKernel::SharedIndependent { base, .. } = out.kernel.as_multioutput().unwrap() else { panic!() };
        let want = softplus(softplus_inverse(1.0 - POSITIVE_FLOOR) + 1.0) + POSITIVE_FLOOR;
        assert!((base.params.variance - want).abs() < 1e-12);
        assert_eq!(base.params.variance, store.slot("kernel.variance").unwrap().values()[0]);
    }

    #[test]
    fn prefix_freezing() {
        let mut store = ParameterStore::from_model(&model());
        assert_eq!(store.freeze("q.sqrt"), 2);
        assert_eq!(store.freeze("q.s"), 0);
        assert_eq!(store.set_trainable("q", true), 2);
        assert!(store.set_free_vector(&[0.0]).is_err());
    }
}
