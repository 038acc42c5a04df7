//! The four batch commands.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use svgp::conditionals::{PosteriorCov, PosteriorMoments};
use svgp::kernels::{Kernel, MultioutputKernel};
use svgp::likelihoods::{Likelihood, Observation};
use svgp::models::Dataset;
use svgp::numerics::{DenseMatrix, RngState};
use svgp::training::{fit, ParameterStore, Trace, Trainable};

use crate::data::{read_table, write_csv, write_tensor, Table};
use crate::error::{CliError, Result};
use crate::model_file::{ModelFile, StoredModel, TrainingMeta, SCHEMA_VERSION};
use crate::schema::Config;

/// Sampling controls for models whose predictive is Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    pub samples: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling { samples: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PredictFlags {
    pub full_cov: bool,
    pub full_output_cov: bool,
    pub observation_noise: bool,
    pub sampling: Sampling,
}

/// Default companion path: `out` with `suffix` appended to its file name.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

fn fit_model<M: Trainable>(model: &M, data: &Dataset, config: &Config) -> Result<(M, Trace, f64)> {
    let mut store = ParameterStore::from_model(model);
    for prefix in &config.train.freeze {
        if store.freeze(prefix) == 0 {
            let names = store.names().join(", ");
            return Err(CliError::Config(format!("`freeze` entry `{prefix}` matches no parameter (parameters: {names})")));
        }
    }
    let (fitted, trace) = fit(model, &mut store, data, &config.train.fit)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let elbo = fitted.objective(data, &all, config.train.fit.seed)?;
    Ok((fitted, trace, elbo))
}

/// Number of outputs the model predicts.
pub fn num_outputs(model: &StoredModel) -> usize {
    let single_or = |k: &Kernel| match k {
        Kernel::Multi(MultioutputKernel::Convolutional(_)) => 1,
        k => k.num_outputs(),
    };
    match model {
        StoredModel::Gpr(_) => 1,
        StoredModel::Svgp(m) => single_or(&m.kernel),
        StoredModel::Uncertain(u) => single_or(&u.model.kernel),
        StoredModel::Dgp(m) => m.layers.last().map_or(1, |l| single_or(&l.kernel)),
    }
}

pub fn input_dim(model: &StoredModel) -> usize {
    match model {
        StoredModel::Gpr(m) => m.kernel.input_dim(),
        StoredModel::Svgp(m) => m.kernel.input_dim(),
        StoredModel::Uncertain(u) => u.model.kernel.input_dim(),
        StoredModel::Dgp(m) => m.input_dim(),
    }
}

/// Fits the model described by `config_text` to `table`.
pub fn train_model(config_text: &str, table: &Table) -> Result<(ModelFile, Trace)> {
    let config = Config::parse(config_text)?;
    let p = config.num_outputs();
    let data = table.dataset(p)?;
    let initial = config.build(&data.x, &data.y)?;
    let (model, trace, elbo) = match &initial {
        StoredModel::Gpr(m) => fit_model(m, &data, &config).map(|(m, t, e)| (StoredModel::Gpr(m), t, e))?,
        StoredModel::Svgp(m) => fit_model(m, &data, &config).map(|(m, t, e)| (StoredModel::Svgp(m), t, e))?,
        StoredModel::Dgp(m) => fit_model(m, &data, &config).map(|(m, t, e)| (StoredModel::Dgp(m), t, e))?,
        StoredModel::Uncertain(m) => fit_model(m, &data, &config).map(|(m, t, e)| (StoredModel::Uncertain(m), t, e))?,
    };
    let training = TrainingMeta { seed: config.train.fit.seed, steps: config.train.fit.steps, final_elbo: Some(elbo) };
    Ok((ModelFile { schema_version: SCHEMA_VERSION, model, whiten: config.whiten, training }, trace))
}

#[derive(Serialize)]
struct TraceLine {
    step: usize,
    elbo: f64,
    wall_ms: f64,
}

pub fn cmd_train(config: &Path, data: &Path, out: &Path, trace_path: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(config).map_err(|e| CliError::io(config, e))?;
    Config::parse(&text)?;
    let table = read_table(data, false)?;
    let (file, trace) = train_model(&text, &table)?;
    for w in &trace.warnings {
        eprintln!("warning: step {}: {}", w.step, w.message);
    }
    file.save(out)?;
    let trace_path = trace_path.map_or_else(|| sibling(out, ".trace.jsonl"), Path::to_path_buf);
    let mut lines = String::new();
    for r in &trace.records {
        let line = TraceLine { step: r.step, elbo: r.elbo, wall_ms: r.wall_ms };
        lines.push_str(&serde_json::to_string(&line).map_err(|e| CliError::Io(e.to_string()))?);
        lines.push('\n');
    }
    std::fs::write(&trace_path, lines).map_err(|e| CliError::io(&trace_path, e))
}

fn gaussian_like(lik: &Likelihood) -> bool {
    matches!(lik.observation, Observation::Gaussian { .. } | Observation::CorrelatedGaussian { .. })
}

/// Predictive moments in the layout selected by the flags.
pub fn predict(model: &StoredModel, x: &DenseMatrix, flags: &PredictFlags) -> Result<PosteriorMoments> {
    let d = input_dim(model);
    if x.cols() != d {
        return Err(CliError::Data(format!("the data has {} input columns, the model expects {d}", x.cols())));
    }
    let full = flags.full_cov || flags.full_output_cov;
    match model {
        StoredModel::Gpr(m) => {
            let f = if flags.observation_noise { m.predict_y(x, flags.full_cov)? } else { m.predict_f(x, flags.full_cov)? };
            let cov = match (f.cov, flags.full_cov, flags.full_output_cov) {
                (PosteriorCov::PerOutput(mut v), true, true) => PosteriorCov::Full(v.remove(0)),
                (PosteriorCov::Marginal(v), false, true) => PosteriorCov::PerPoint(v),
                (cov, _, _) => cov,
            };
            Ok(PosteriorMoments { mean: f.mean, cov })
        }
        StoredModel::Svgp(_) | StoredModel::Uncertain(_) => {
            let m = match model {
                StoredModel::Svgp(m) => m,
                StoredModel::Uncertain(u) => &u.model,
                _ => unreachable!(),
            };
            let f = m.predict_f(x, flags.full_cov, flags.full_output_cov)?;
            if !flags.observation_noise {
                return Ok(f);
            }
            if gaussian_like(&m.likelihood) {
                return Ok(m.likelihood.add_noise(&f)?);
            }
            if full {
                return Err(CliError::Config("observation noise with a full covariance needs a Gaussian likelihood".into()));
            }
            let (mean, var) = m.likelihood.predict_observation_moments(&f.mean, &f.marginal_variances())?;
            Ok(PosteriorMoments { mean, cov: PosteriorCov::Marginal(var) })
        }
        StoredModel::Dgp(m) => {
            if full {
                return Err(CliError::Config("deep GP predictions are marginal; drop --full-cov and --full-output-cov".into()));
            }
            let mut rng = RngState::new(flags.sampling.seed);
            let (mean, var) = m.predict_f(x, &mut rng, flags.sampling.samples)?;
            if !flags.observation_noise {
                return Ok(PosteriorMoments { mean, cov: PosteriorCov::Marginal(var) });
            }
            let (mean, var) = m.likelihood.predict_observation_moments(&mean, &var)?;
            Ok(PosteriorMoments { mean, cov: PosteriorCov::Marginal(var) })
        }
    }
}

/// Logical shape and 2-D storage of a non-marginal covariance.
pub fn covariance_tensor(moments: &PosteriorMoments) -> Option<(Vec<usize>, DenseMatrix)> {
    let (n, p) = moments.mean.shape();
    match &moments.cov {
        PosteriorCov::Full(m) => Some((vec![n, p, n, p], m.clone())),
        PosteriorCov::PerOutput(v) => {
            let data: Vec<f64> = v.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
            Some((vec![p, n, n], DenseMatrix::from_vec(p * n, n, data).expect("stacked blocks")))
        }
        PosteriorCov::PerPoint(m) => Some((vec![n, p, p], m.clone())),
        PosteriorCov::Marginal(_) => None,
    }
}

fn numbered(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (0..k).map(move |i| format!("{prefix}{i}"))
}

pub fn cmd_predict(model: &Path, data: &Path, out: &Path, cov_out: Option<&Path>, flags: &PredictFlags) -> Result<()> {
    let file = ModelFile::load(model)?;
    let table = read_table(data, true)?;
    let moments = predict(&file.model, &table.x, flags)?;
    let var = moments.marginal_variances();
    let (d, p) = (table.x.cols(), moments.mean.cols());
    let header: Vec<String> = numbered("x", d).chain(numbered("mu", p)).chain(numbered("var", p)).collect();
    let rows = (0..table.x.rows()).map(|i| [table.x.row(i), moments.mean.row(i), var.row(i)].concat());
    write_csv(out, &header, rows)?;
    if let Some((shape, m)) = covariance_tensor(&moments) {
        let path = cov_out.map_or_else(|| sibling(out, ".cov"), Path::to_path_buf);
        write_tensor(&path, &shape, &m)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputMetrics {
    pub output: usize,
    pub count: usize,
    pub mlpd: Option<f64>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub num_observations: usize,
    /// Total log predictive density per observed scalar.
    pub mlpd: f64,
    pub rmse: f64,
    pub per_output: Vec<OutputMetrics>,
}

fn log_mean_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + (terms.iter().map(|t| (t - max).exp()).sum::<f64>() / terms.len() as f64).ln()
}

fn gaussian_log_density(y: f64, mu: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (y - mu) * (y - mu) / var
}

/// `N x P` log predictive densities of each observed scalar (`NaN` where
/// unobserved) and the joint log density of each row.
fn log_densities(model: &StoredModel, data: &Dataset, sampling: Sampling) -> Result<(DenseMatrix, Vec<f64>)> {
    let (n, p) = data.y.shape();
    let scalar = |lik: &Likelihood, mean: &DenseMatrix, var: &DenseMatrix| -> Result<DenseMatrix> {
        let mut out = DenseMatrix::from_fn(n, p, |_, _| f64::NAN);
        for a in 0..p {
            let col = |m: &DenseMatrix| DenseMatrix::from_fn(n, 1, |i, _| m[(i, a)]);
            let y = col(&data.y);
            let lik = lik.marginalize_outputs(&[a])?;
            let cov = if lik.is_output_correlated() { PosteriorCov::PerPoint(col(var)) } else { PosteriorCov::Marginal(col(var)) };
            let lp = lik.predict_log_density(&col(mean), &cov, &y)?;
            for i in 0..n {
                if !y[(i, 0)].is_nan() {
                    out[(i, a)] = lp[i];
                }
            }
        }
        Ok(out)
    };
    match model {
        StoredModel::Gpr(m) => {
            let f = m.predict_y(&data.x, false)?;
            let var = f.marginal_variances();
            let lp = DenseMatrix::from_fn(n, 1, |i, _| gaussian_log_density(data.y[(i, 0)], f.mean[(i, 0)], var[(i, 0)]));
            let rows = lp.as_slice().to_vec();
            Ok((lp, rows))
        }
        StoredModel::Svgp(_) | StoredModel::Uncertain(_) => {
            let m = match model {
                StoredModel::Svgp(m) => m,
                StoredModel::Uncertain(u) => &u.model,
                _ => unreachable!(),
            };
            let f = m.predict_f(&data.x, false, false)?;
            let lp = scalar(&m.likelihood, &f.mean, &f.marginal_variances())?;
            let rows = if m.likelihood.is_output_correlated() {
                let observed: Vec<Vec<usize>> = (0..n).map(|i| (0..p).filter(|&a| !data.y[(i, a)].is_nan()).collect()).collect();
                if observed.iter().all(|o| o.len() == p) {
                    m.predict_log_density(data)?
                } else {
                    (0..n).map(|i| if observed[i].len() == 1 { lp[(i, observed[i][0])] } else { f64::NAN }).collect::<Vec<_>>()
                }
            } else {
                (0..n).map(|i| lp.row(i).iter().filter(|v| !v.is_nan()).sum()).collect()
            };
            if rows.iter().any(|v| v.is_nan()) {
                return Err(CliError::Data("rows with partially observed outputs need an independent likelihood".into()));
            }
            Ok((lp, rows))
        }
        StoredModel::Dgp(m) => {
            if m.likelihood.is_output_correlated() {
                return Err(CliError::Config("deep GP evaluation needs an independent likelihood".into()));
            }
            let mut rng = RngState::new(sampling.seed);
            let draws = m.predict_f_samples(&data.x, &mut rng, sampling.samples)?;
            let per: Vec<DenseMatrix> = draws.iter().map(|f| scalar(&m.likelihood, &f.mean, &f.marginal_variances())).collect::<Result<_>>()?;
            let lp = DenseMatrix::from_fn(n, p, |i, a| {
                if data.y[(i, a)].is_nan() {
                    f64::NAN
                } else {
                    log_mean_exp(&per.iter().map(|s| s[(i, a)]).collect::<Vec<_>>())
                }
            });
            let rows = (0..n)
                .map(|i| log_mean_exp(&per.iter().map(|s| s.row(i).iter().filter(|v| !v.is_nan()).sum()).collect::<Vec<_>>()))
                .collect();
            Ok((lp, rows))
        }
    }
}

pub fn evaluate(model: &StoredModel, table: &Table, sampling: Sampling) -> Result<Metrics> {
    let p = num_outputs(model);
    let data = table.dataset(p)?;
    let d = input_dim(model);
    if data.x.cols() != d {
        return Err(CliError::Data(format!("the data has {} input columns, the model expects {d}", data.x.cols())));
    }
    let flags = PredictFlags { observation_noise: true, sampling, ..PredictFlags::default() };
    let mean = predict(model, &data.x, &flags)?.mean;
    let (lp, rows) = log_densities(model, &data, sampling)?;
    let n_obs = data.num_observations();
    if n_obs == 0 {
        return Err(CliError::Data("the data has no observed outputs".into()));
    }
    let mut sq_total = 0.0;
    let per_output = (0..p)
        .map(|a| {
            let obs: Vec<usize> = (0..data.len()).filter(|&i| !data.y[(i, a)].is_nan()).collect();
            let sq: f64 = obs.iter().map(|&i| (data.y[(i, a)] - mean[(i, a)]).powi(2)).sum();
            sq_total += sq;
            let c = obs.len() as f64;
            OutputMetrics {
                output: a,
                count: obs.len(),
                mlpd: (!obs.is_empty()).then(|| obs.iter().map(|&i| lp[(i, a)]).sum::<f64>() / c),
                rmse: (!obs.is_empty()).then(|| (sq / c).sqrt()),
            }
        })
        .collect();
    Ok(Metrics {
        num_observations: n_obs,
        mlpd: rows.iter().sum::<f64>() / n_obs as f64,
        rmse: (sq_total / n_obs as f64).sqrt(),
        per_output,
    })
}

pub fn cmd_eval(model: &Path, data: &Path, out: Option<&Path>, sampling: Sampling) -> Result<()> {
    let file = ModelFile::load(model)?;
    let table = read_table(data, false)?;
    let metrics = evaluate(&file.model, &table, sampling)?;
    let mut text = serde_json::to_string_pretty(&metrics).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string())),
    }
}

/// One axis of a plot grid, parsed from `min:max:steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts[..] else { return Err(format!("`{s}` is not min:max:steps")) };
        let num = |t: &str| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("`{t}` is not a finite number"));
        let (min, max) = (num(lo)?, num(hi)?);
        let steps: usize = n.trim().parse().map_err(|_| format!("`{n}` is not a step count"))?;
        if steps == 0 {
            return Err("a grid needs at least one step".into());
        }
        if max < min {
            return Err(format!("grid maximum {max} is below minimum {min}"));
        }
        Ok(Axis { min, max, steps })
    }
}

impl Axis {
    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.min];
        }
        let span = self.max - self.min;
        (0..self.steps).map(|i| self.min + span * i as f64 / (self.steps - 1) as f64).collect()
    }
}

/// Grid inputs in row-major order: the last axis varies fastest.
pub fn grid(axes: &[Axis]) -> DenseMatrix {
    let pts: Vec<Vec<f64>> = axes.iter().map(Axis::points).collect();
    let n: usize = pts.iter().map(Vec::len).product();
    DenseMatrix::from_fn(n, axes.len(), |r, j| {
        let stride: usize = pts[j + 1..].iter().map(Vec::len).product();
        pts[j][(r / stride) % pts[j].len()]
    })
}

pub fn cmd_plotdata(model: &Path, axes: &[Axis], out: &Path, flags: &PredictFlags) -> Result<()> {
    let file = ModelFile::load(model)?;
    let d = input_dim(&file.model);
    if axes.len() != d || d > 2 {
        return Err(CliError::Config(format!("the model has {d} inputs; give one --grid per input (at most two)")));
    }
    let x = grid(axes);
    let flags = PredictFlags { full_cov: false, full_output_cov: false, ..*flags };
    let moments = predict(&file.model, &x, &flags)?;
    let var = moments.marginal_variances();
    let p = moments.mean.cols();
    let mut header: Vec<String> = numbered("x", d).collect();
    for a in 0..p {
        header.extend([format!("mu{a}"), format!("var{a}"), format!("lower{a}"), format!("upper{a}")]);
    }
    let rows = (0..x.rows()).map(|i| {
        let mut row = x.row(i).to_vec();
        for a in 0..p {
            let (mu, v) = (moments.mean[(i, a)], var[(i, a)]);
            let half = 2.0 * v.max(0.0).sqrt();
            row.extend([mu, v, mu - half, mu + half]);
        }
        row
    });
    write_csv(out, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!("-3:3:5".parse::<Axis>().unwrap().points(), [-3.0, -1.5, 0.0, 1.5, 3.0]);
        assert_eq!("0.5:2:1".parse::<Axis>().unwrap().points(), [0.5]);
        for bad in ["1:2", "a:2:3", "0:1:0", "2:1:3", "0:inf:3", "0:1:-1"] {
            assert!(bad.parse::<Axis>().is_err(), "{bad}");
        }
    }

    #[test]
    fn grid_is_row_major() {
        let g = grid(&["0:1:2".parse().unwrap(), "5:7:3".parse().unwrap()]);
        let want = [[0.0, 5.0], [0.0, 6.0], [0.0, 7.0], [1.0, 5.0], [1.0, 6.0], [1.0, 7.0]];
        for (i, w) in want.iter().enumerate() {
            assert_eq!(g.row(i), w);
        }
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("dir/model.json"), ".trace.jsonl"), Path::new("dir/model.json.trace.jsonl"));
    }

    #[test]
    fn log_mean_exp_is_stable() {
        assert!((log_mean_exp(&[-1000.0, -1000.0]) + 1000.0).abs() < 1e-12);
        assert!((log_mean_exp(&[0.0, 2f64.ln()]) - 1.5f64.ln()).abs() < 1e-15);
    }
}
