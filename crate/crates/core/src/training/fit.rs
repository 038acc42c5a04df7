use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::store::ParameterStore;
use super::visit::{q_sqrt_names, Parameterized};
use crate::error::{Error, Result};
use crate::likelihoods::Observation;
use crate::models::{DGPModel, Dataset, GPRModel, SVGPModel, UncertainSVGP};
use crate::numerics::RngState;

/// Relative central-difference step: `h (1 + |θ|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Trailing window for the divergence heuristic.
const DIVERGENCE_WINDOW: usize = 20;

/// An objective to maximise over a model's parameters.
pub trait Trainable: Parameterized + Clone {
    /// Objective on rows `batch` of `data`, deterministic given `seed`.
    fn objective(&self, data: &Dataset, batch: &[usize], seed: u64) -> Result<f64>;

    /// Constrained-space gradient entries by slot name, where a closed form
    /// exists.
    fn analytic_gradient(&self, _data: &Dataset, _batch: &[usize]) -> Option<Result<Vec<(String, Vec<f64>)>>> {
        None
    }
}

fn is_full(data: &Dataset, batch: &[usize]) -> bool {
    batch.len() == data.len() && batch.iter().enumerate().all(|(i, &j)| i == j)
}

fn with_batch<R>(data: &Dataset, batch: &[usize], f: impl FnOnce(&Dataset) -> R) -> R {
    if is_full(data, batch) {
        f(data)
    } else {
        f(&data.subset(batch))
    }
}

impl Trainable for SVGPModel {
    fn objective(&self, data: &Dataset, batch: &[usize], _seed: u64) -> Result<f64> {
        let scale = self.num_data as f64 / batch.len().max(1) as f64;
        with_batch(data, batch, |b| self.elbo(b, scale))
    }

    fn analytic_gradient(&self, data: &Dataset, batch: &[usize]) -> Option<Result<Vec<(String, Vec<f64>)>>> {
        if !matches!(self.likelihood.observation, Observation::Gaussian { .. }) {
            return None;
        }
        let scale = self.num_data as f64 / batch.len().max(1) as f64;
        Some(with_batch(data, batch, |b| self.q_gradient(b, scale)).map(|g| {
            let mut out = vec![("q.mu".to_string(), g.q_mu)];
            out.extend(q_sqrt_names("q", &self.q).into_iter().zip(g.q_sqrt));
            out
        }))
    }
}

impl Trainable for GPRModel {
    fn objective(&self, _data: &Dataset, _batch: &[usize], _seed: u64) -> Result<f64> {
        self.log_marginal()
    }
}

impl Trainable for DGPModel {
    fn objective(&self, data: &Dataset, batch: &[usize], seed: u64) -> Result<f64> {
        let scale = self.num_data as f64 / batch.len().max(1) as f64;
        with_batch(data, batch, |b| self.elbo(b, &mut RngState::new(seed), scale))
    }
}

impl Trainable for UncertainSVGP {
    fn objective(&self, data: &Dataset, batch: &[usize], seed: u64) -> Result<f64> {
        self.elbo(&data.y, batch, &mut RngState::new(seed))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientStrategy {
    /// Central differences for every coordinate.
    FiniteDifference,
    /// Closed-form entries where the model provides them, differences
    /// elsewhere.
    Analytic,
}

/// Central differences of `f` at `x` for the listed coordinates, step
/// `h (1 + |x_i|)`.
pub fn finite_difference(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], coords: &[usize], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let step = h * (1.0 + x[i].abs());
            probe[i] = x[i] + step;
            let plus = f(&probe)?;
            probe[i] = x[i] - step;
            let minus = f(&probe)?;
            probe[i] = x[i];
            for v in [plus, minus] {
                if !v.is_finite() {
                    return Err(Error::NonFiniteObjective(v));
                }
            }
            Ok((plus - minus) / (2.0 * step))
        })
        .collect()
}

/// Gradient of the objective with respect to the store's trainable free
/// coordinates, in [`ParameterStore::layout`] order.
///
/// Every evaluation uses the same `seed`, so stochastic objectives are
/// differenced under common random numbers.
pub fn gradient<M: Trainable>(
    model: &M,
    store: &ParameterStore,
    data: &Dataset,
    batch: &[usize],
    seed: u64,
    strategy: GradientStrategy,
    h: f64,
) -> Result<Vec<f64>> {
    let layout = store.layout();
    let position: HashMap<(usize, usize), usize> = layout.iter().enumerate().map(|(p, &c)| (c, p)).collect();
    let mut grad = vec![0.0; layout.len()];
    let mut covered = vec![false; layout.len()];
    if strategy == GradientStrategy::Analytic {
        let mut current = model.clone();
        store.apply(&mut current)?;
        if let Some(entries) = current.analytic_gradient(data, batch) {
            for (name, g) in entries? {
                let Some(i) = store.slots.iter().position(|s| s.name == name) else { continue };
                let slot = &store.slots[i];
                if !slot.trainable {
                    continue;
                }
                let jac = slot.transform.jacobian(&slot.free);
                for (k, (gk, jk)) in g.iter().zip(jac).enumerate() {
                    let p = position[&(i, k)];
                    grad[p] = gk * jk;
                    covered[p] = true;
                }
            }
        }
    }
    let remaining: Vec<usize> = (0..layout.len()).filter(|&p| !covered[p]).collect();
    if !remaining.is_empty() {
        let x = store.free_vector();
        let mut scratch = store.clone();
        let fd = finite_difference(
            |v| {
                scratch.set_free_vector(v)?;
                let mut m = model.clone();
                scratch.apply(&mut m)?;
                m.objective(data, batch, seed)
            },
            &x,
            &remaining,
            h,
        )?;
        for (p, g) in remaining.into_iter().zip(fd) {
            grad[p] = g;
        }
    }
    Ok(grad)
}

/// Adam state over the trainable free coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, dim: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// One descent step on `params` given the gradient of a loss.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "Adam over {} coordinates got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powf(self.t as f64);
        let c2 = 1.0 - self.beta2.powf(self.t as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Adam step on a store's free coordinates; `grad` is a loss gradient.
pub fn adam_step(store: &mut ParameterStore, grad: &[f64], state: &mut Adam) -> Result<()> {
    let mut x = store.free_vector();
    state.step(&mut x, grad)?;
    store.set_free_vector(&x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    /// Rows per step; the full data when `None`.
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub seed: u64,
    pub gradient: GradientStrategy,
    pub fd_step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 1000,
            batch_size: None,
            lr: 1e-2,
            seed: 0,
            gradient: GradientStrategy::Analytic,
            fd_step: DEFAULT_FD_STEP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub elbo: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceWarning {
    pub step: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub warnings: Vec<TraceWarning>,
}

impl Trace {
    pub fn last_elbo(&self) -> Option<f64> {
        self.records.last().map(|r| r.elbo)
    }
}

/// Flags a drop larger than ten trailing standard deviations.
fn divergence(history: &[f64], value: f64) -> Option<String> {
    if history.len() < DIVERGENCE_WINDOW {
        return None;
    }
    let window = &history[history.len() - DIVERGENCE_WINDOW..];
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let sd = (window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (window.len() - 1) as f64).sqrt();
    let prev = *window.last().expect("non-empty window");
    (prev - value > 10.0 * sd && prev > value).then(|| format!("objective fell from {prev} to {value} (trailing sd {sd:e})"))
}

/// Runs Adam on the store's trainable coordinates and returns the trained
/// model with its trace.
///
/// Minibatches are drawn without replacement within each epoch. The
/// recorded value is the objective on the step's batch before the update.
pub fn fit<M: Trainable>(model: &M, store: &mut ParameterStore, data: &Dataset, config: &FitConfig) -> Result<(M, Trace)> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("no training data".into()));
    }
    let n = data.len();
    let batch_size = config.batch_size.unwrap_or(n).clamp(1, n);
    let mut rng = RngState::new(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut adam = Adam::new(config.lr, store.layout().len());
    let mut trace = Trace::default();
    let mut history = Vec::with_capacity(config.steps);
    let start = Instant::now();
    for step in 0..config.steps {
        let batch: Vec<usize> = if batch_size == n {
            (0..n).collect()
        } else {
            if cursor + batch_size > n {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            cursor += batch_size;
            order[cursor - batch_size..cursor].to_vec()
        };
        let seed = rng.next_u64();
        let mut current = model.clone();
        store.apply(&mut current)?;
        let elbo = current.objective(data, &batch, seed)?;
        if !elbo.is_finite() {
            return Err(Error::NonFiniteObjective(elbo));
        }
        if let Some(message) = divergence(&history, elbo) {
            trace.warnings.push(TraceWarning { step, message });
        }
        history.push(elbo);
        if !adam.m.is_empty() {
            let g = gradient(model, store, data, &batch, seed, config.gradient, config.fd_step)?;
            let loss_grad: Vec<f64> = g.into_iter().map(|v| -v).collect();
            adam_step(store, &loss_grad, &mut adam)?;
        }
        trace.records.push(TraceRecord { step, elbo, wall_ms: start.elapsed().as_secs_f64() * 1e3 });
    }
    let mut trained = model.clone();
    if config.steps > 0 {
        store.apply(&mut trained)?;
    }
    Ok((trained, trace))
}

/// Maximises the exact log marginal likelihood over kernel and noise
/// parameters.
pub fn fit_gpr(model: &GPRModel, steps: usize, lr: f64) -> Result<(GPRModel, Trace)> {
    let data = Dataset::new(model.x.clone(), model.y.clone())?;
    let mut store = ParameterStore::from_model(model);
    let config = FitConfig { steps, lr, gradient: GradientStrategy::FiniteDifference, ..FitConfig::default() };
    fit(model, &mut store, &data, &config)
}
