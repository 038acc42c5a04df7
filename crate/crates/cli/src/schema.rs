//! Typed view of a parsed config and construction of the models it describes.

use svgp::inducing::{InducingPatches, InducingVariable, Multiscale};
use svgp::kernels::{extract_patches, ConvolutionalKernel, Kernel, KernelFamily, KernelParams, MultioutputKernel, PatchGeometry, SingleOutputKernel};
use svgp::likelihoods::{Likelihood, Observation, Strategy};
use svgp::models::{DGPModel, GPRModel, Layer, MeanFunction, SVGPModel, UncertainInputs, UncertainSVGP};
use svgp::numerics::{DenseMatrix, DEFAULT_JITTER};
use svgp::training::{FitConfig, GradientStrategy, DEFAULT_FD_STEP};

use crate::config::{Block, Node, Value};
use crate::error::{config_err, CliError, Result};
use crate::model_file::StoredModel;

/// Environment variable replacing the default `Kuu` jitter.
pub const JITTER_ENV: &str = "SVGP_JITTER";

const DEFAULT_NUM_INDUCING: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gpr,
    Svgp,
    Dgp,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseSpec {
    pub family: KernelFamily,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Base(BaseSpec),
    Shared { base: BaseSpec, outputs: usize },
    Separate(Vec<BaseSpec>),
    Lmc { w: DenseMatrix, latents: Vec<BaseSpec> },
    Imc { w: DenseMatrix, base: BaseSpec },
    Conv { base: BaseSpec, image: (usize, usize), patch: (usize, usize) },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Shared,
    Separate,
    Correlated,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Locations {
    Num(usize),
    Given(DenseMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InducingSpec {
    Points { at: Locations, layout: Option<Layout> },
    Multiscale { at: Locations, scale: f64 },
    Patches { num: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kernel: KernelSpec,
    pub inducing: InducingSpec,
    pub mean: Option<MeanFunction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub fit: FitConfig,
    pub freeze: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub kind: ModelKind,
    pub kernel: Option<KernelSpec>,
    pub likelihood: Likelihood,
    pub inducing: Option<InducingSpec>,
    pub mean: MeanFunction,
    pub whiten: bool,
    pub jitter: Option<f64>,
    pub layers: Vec<LayerSpec>,
    pub input_variance: f64,
    pub samples: usize,
    pub train: TrainSpec,
}

fn cfg<T>(line: usize, message: impl std::fmt::Display) -> Result<T> {
    Err(CliError::Config(format!("line {line}: {message}")))
}

/// Checked access to the fields of one block.
struct Fields<'a> {
    block: &'a Block,
    context: String,
    line: usize,
}

impl<'a> Fields<'a> {
    fn new(block: &'a Block, context: &str, line: usize, allowed: &[&str]) -> Result<Self> {
        for e in &block.entries {
            if !allowed.contains(&e.key.as_str()) {
                return cfg(e.line, format!("unknown key `{}` in {context} (expected one of: {})", e.key, allowed.join(", ")));
            }
        }
        Ok(Fields { block, context: context.to_string(), line })
    }

    fn get(&self, key: &str) -> Option<(&'a Value, usize)> {
        self.block.get(key).map(|e| (&e.value, e.line))
    }

    fn require<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        match v {
            Some(v) => Ok(v),
            None => cfg(self.line, format!("{} needs `{key}`", self.context)),
        }
    }

    fn number(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::Number(v), _)) => Ok(Some(*v)),
            Some((v, line)) => cfg(line, format!("`{key}` must be a number, found a {}", v.kind())),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => as_count(v, line, key).map(Some),
        }
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::Bool(b), _)) => Ok(Some(*b)),
            Some((v, line)) => cfg(line, format!("`{key}` must be true or false, found a {}", v.kind())),
        }
    }

    fn node(&self, key: &str) -> Result<Option<&'a Node>> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::Node(n), _)) => Ok(Some(n)),
            Some((v, line)) => cfg(line, format!("`{key}` must be a named value, found a {}", v.kind())),
        }
    }

    fn list(&self, key: &str) -> Result<Option<(&'a [Value], usize)>> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::List(items), line)) => Ok(Some((items, line))),
            Some((v, line)) => cfg(line, format!("`{key}` must be a list, found a {}", v.kind())),
        }
    }

    /// A number or a list of numbers.
    fn numbers(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::Number(v), _)) => Ok(Some(vec![*v])),
            Some((Value::List(items), line)) => items.iter().map(|v| as_number(v, line, key)).collect::<Result<_>>().map(Some),
            Some((v, line)) => cfg(line, format!("`{key}` must be a number or list, found a {}", v.kind())),
        }
    }

    fn matrix(&self, key: &str) -> Result<Option<DenseMatrix>> {
        let Some((rows, line)) = self.list(key)? else { return Ok(None) };
        let rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| match r {
                Value::List(items) => items.iter().map(|v| as_number(v, line, key)).collect(),
                Value::Number(v) => Ok(vec![*v]),
                other => cfg(line, format!("`{key}` rows must be lists of numbers, found a {}", other.kind())),
            })
            .collect::<Result<_>>()?;
        if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len() || r.is_empty()) {
            return cfg(line, format!("`{key}` must be a non-empty rectangular matrix"));
        }
        DenseMatrix::from_rows(&rows).map(Some).map_err(config_err)
    }

    fn pair(&self, key: &str) -> Result<Option<(usize, usize)>> {
        let Some((items, line)) = self.list(key)? else { return Ok(None) };
        match items {
            [a, b] => Ok(Some((as_count(a, line, key)?, as_count(b, line, key)?))),
            _ => cfg(line, format!("`{key}` must be a list of two sizes")),
        }
    }

    /// A string, or a bare name without fields.
    fn word(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::Str(s), _)) => Ok(Some(s.clone())),
            Some((Value::Node(n), _)) if n.fields.entries.is_empty() => Ok(Some(n.name.clone())),
            Some((v, line)) => cfg(line, format!("`{key}` must be a name, found a {}", v.kind())),
        }
    }
}

fn as_number(v: &Value, line: usize, key: &str) -> Result<f64> {
    match v {
        Value::Number(x) => Ok(*x),
        other => cfg(line, format!("`{key}` must hold numbers, found a {}", other.kind())),
    }
}

fn as_count(v: &Value, line: usize, key: &str) -> Result<usize> {
    match v {
        Value::Number(x) if *x >= 0.0 && x.fract() == 0.0 && *x <= u32::MAX as f64 => Ok(*x as usize),
        _ => cfg(line, format!("`{key}` must be a non-negative integer")),
    }
}

fn family(name: &str) -> Option<KernelFamily> {
    Some(match name {
        "sqexp" | "rbf" => KernelFamily::SquaredExponential,
        "matern12" => KernelFamily::Matern12,
        "matern32" => KernelFamily::Matern32,
        "matern52" => KernelFamily::Matern52,
        "linear" => KernelFamily::Linear,
        "white" => KernelFamily::White,
        _ => return None,
    })
}

fn base_spec(node: &Node) -> Result<BaseSpec> {
    let Some(fam) = family(&node.name) else {
        return cfg(node.line, format!("`{}` is not a base kernel (sqexp, matern12, matern32, matern52, linear, white)", node.name));
    };
    let f = Fields::new(&node.fields, &node.name, node.line, &["variance", "lengthscales"])?;
    let variance = f.number("variance")?.unwrap_or(1.0);
    let lengthscales = f.numbers("lengthscales")?.unwrap_or_else(|| vec![1.0]);
    KernelParams::new(variance, lengthscales.clone()).map_err(|e| CliError::Config(format!("line {}: {e}", node.line)))?;
    Ok(BaseSpec { family: fam, variance, lengthscales })
}

fn base_list(items: &[Value], line: usize, key: &str) -> Result<Vec<BaseSpec>> {
    if items.is_empty() {
        return cfg(line, format!("`{key}` needs at least one kernel"));
    }
    items
        .iter()
        .map(|v| match v {
            Value::Node(n) => base_spec(n),
            other => cfg(line, format!("`{key}` must hold kernels, found a {}", other.kind())),
        })
        .collect()
}

fn kernel_spec(node: &Node) -> Result<KernelSpec> {
    let ctx = node.name.as_str();
    match ctx {
        "shared" => {
            let f = Fields::new(&node.fields, ctx, node.line, &["base", "outputs"])?;
            let base = base_spec(f.require("base", f.node("base")?)?)?;
            let outputs = f.require("outputs", f.count("outputs")?)?;
            if outputs == 0 {
                return cfg(node.line, "`outputs` must be positive");
            }
            Ok(KernelSpec::Shared { base, outputs })
        }
        "separate" => {
            let f = Fields::new(&node.fields, ctx, node.line, &["kernels"])?;
            let (items, line) = f.require("kernels", f.list("kernels")?)?;
            Ok(KernelSpec::Separate(base_list(items, line, "kernels")?))
        }
        "lmc" => {
            let f = Fields::new(&node.fields, ctx, node.line, &["W", "latents"])?;
            let w = f.require("W", f.matrix("W")?)?;
            let (items, line) = f.require("latents", f.list("latents")?)?;
            let latents = base_list(items, line, "latents")?;
            if latents.len() != w.cols() {
                return cfg(node.line, format!("W has {} columns for {} latents", w.cols(), latents.len()));
            }
            Ok(KernelSpec::Lmc { w, latents })
        }
        "imc" => {
            let f = Fields::new(&node.fields, ctx, node.line, &["W", "base"])?;
            let w = f.require("W", f.matrix("W")?)?;
            let base = base_spec(f.require("base", f.node("base")?)?)?;
            Ok(KernelSpec::Imc { w, base })
        }
        "conv" => {
            let f = Fields::new(&node.fields, ctx, node.line, &["base", "image", "patch"])?;
            let base = base_spec(f.require("base", f.node("base")?)?)?;
            let image = f.require("image", f.pair("image")?)?;
            let patch = f.require("patch", f.pair("patch")?)?;
            PatchGeometry::new(image.0, image.1, patch.0, patch.1).map_err(config_err)?;
            Ok(KernelSpec::Conv { base, image, patch })
        }
        _ => base_spec(node).map(KernelSpec::Base),
    }
}

fn likelihood_spec(node: &Node) -> Result<Likelihood> {
    let f = Fields::new(&node.fields, &node.name, node.line, &["variance", "cov", "quadrature", "samples", "seed"])?;
    let observation = match node.name.as_str() {
        "gaussian" => Observation::Gaussian { variance: f.number("variance")?.unwrap_or(1.0) },
        "correlated_gaussian" => Observation::CorrelatedGaussian { cov: f.require("cov", f.matrix("cov")?)? },
        "bernoulli" => Observation::Bernoulli,
        "poisson" => Observation::Poisson,
        other => return cfg(node.line, format!("unknown likelihood `{other}` (gaussian, correlated_gaussian, bernoulli, poisson)")),
    };
    for (key, applies) in [("variance", node.name == "gaussian"), ("cov", node.name == "correlated_gaussian")] {
        if !applies && node.fields.get(key).is_some() {
            return cfg(node.line, format!("`{key}` does not apply to `{}`", node.name));
        }
    }
    let quadrature = f.count("quadrature")?;
    let samples = f.count("samples")?;
    let seed = f.count("seed")?;
    let strategy = match (quadrature, samples) {
        (Some(_), Some(_)) => return cfg(node.line, "choose either `quadrature` or `samples`"),
        (Some(k), None) => Strategy::GaussHermite(k),
        (None, Some(s)) => Strategy::MonteCarlo { samples: s, seed: seed.unwrap_or(0) as u64 },
        (None, None) if seed.is_some() => return cfg(node.line, "`seed` needs `samples`"),
        (None, None) => match observation {
            Observation::Bernoulli => Strategy::GaussHermite(svgp::likelihoods::DEFAULT_QUADRATURE_NODES),
            _ => Strategy::ClosedForm,
        },
    };
    Likelihood::with_strategy(observation, strategy).map_err(|e| CliError::Config(format!("line {}: {e}", node.line)))
}

fn locations(f: &Fields, line: usize) -> Result<Locations> {
    match (f.count("num")?, f.matrix("z")?) {
        (Some(_), Some(_)) => cfg(line, "give either `num` or `z`"),
        (Some(0), None) => cfg(line, "`num` must be positive"),
        (Some(n), None) => Ok(Locations::Num(n)),
        (None, Some(z)) => Ok(Locations::Given(z)),
        (None, None) => Ok(Locations::Num(DEFAULT_NUM_INDUCING)),
    }
}

fn inducing_spec(node: &Node) -> Result<InducingSpec> {
    match node.name.as_str() {
        "points" => {
            let f = Fields::new(&node.fields, "points", node.line, &["num", "z", "layout"])?;
            let at = locations(&f, node.line)?;
            let layout = match f.word("layout")?.as_deref() {
                None => None,
                Some("shared") => Some(Layout::Shared),
                Some("separate") => Some(Layout::Separate),
                Some("correlated") => Some(Layout::Correlated),
                Some(other) => return cfg(node.line, format!("unknown layout `{other}` (shared, separate, correlated)")),
            };
            Ok(InducingSpec::Points { at, layout })
        }
        "multiscale" => {
            let f = Fields::new(&node.fields, "multiscale", node.line, &["num", "z", "scale"])?;
            let at = locations(&f, node.line)?;
            let scale = f.number("scale")?.unwrap_or(0.1);
            if !(scale > 0.0) {
                return cfg(node.line, "`scale` must be positive");
            }
            Ok(InducingSpec::Multiscale { at, scale })
        }
        "patches" => {
            let f = Fields::new(&node.fields, "patches", node.line, &["num"])?;
            let num = f.count("num")?.unwrap_or(DEFAULT_NUM_INDUCING);
            if num == 0 {
                return cfg(node.line, "`num` must be positive");
            }
            Ok(InducingSpec::Patches { num })
        }
        other => cfg(node.line, format!("unknown inducing variable `{other}` (points, multiscale, patches)")),
    }
}

fn mean_spec(node: &Node) -> Result<MeanFunction> {
    match node.name.as_str() {
        "zero" => Fields::new(&node.fields, "zero", node.line, &[]).map(|_| MeanFunction::Zero),
        "identity" => Fields::new(&node.fields, "identity", node.line, &[]).map(|_| MeanFunction::Identity),
        "constant" => {
            let f = Fields::new(&node.fields, "constant", node.line, &["value"])?;
            Ok(MeanFunction::Constant(f.number("value")?.unwrap_or(0.0)))
        }
        other => cfg(node.line, format!("unknown mean function `{other}` (zero, constant, identity)")),
    }
}

fn layer_spec(v: &Value, line: usize) -> Result<LayerSpec> {
    let Value::Node(node) = v else { return cfg(line, "`layers` must hold `layer { ... }` entries") };
    if node.name != "layer" {
        return cfg(node.line, format!("expected `layer {{ ... }}`, found `{}`", node.name));
    }
    let f = Fields::new(&node.fields, "layer", node.line, &["kernel", "inducing", "mean"])?;
    let kernel = kernel_spec(f.require("kernel", f.node("kernel")?)?)?;
    let inducing = match f.node("inducing")? {
        Some(n) => inducing_spec(n)?,
        None => InducingSpec::Points { at: Locations::Num(DEFAULT_NUM_INDUCING), layout: None },
    };
    let mean = f.node("mean")?.map(mean_spec).transpose()?;
    Ok(LayerSpec { kernel, inducing, mean })
}

fn train_spec(node: Option<&Node>) -> Result<TrainSpec> {
    let mut fit = FitConfig::default();
    let Some(node) = node else { return Ok(TrainSpec { fit, freeze: Vec::new() }) };
    let f = Fields::new(&node.fields, "train", node.line, &["steps", "lr", "batch_size", "seed", "gradient", "fd_step", "freeze"])?;
    if let Some(s) = f.count("steps")? {
        fit.steps = s;
    }
    if let Some(lr) = f.number("lr")? {
        if !(lr > 0.0) {
            return cfg(node.line, "`lr` must be positive");
        }
        fit.lr = lr;
    }
    fit.batch_size = f.count("batch_size")?;
    if fit.batch_size == Some(0) {
        return cfg(node.line, "`batch_size` must be positive");
    }
    fit.seed = f.count("seed")?.unwrap_or(0) as u64;
    fit.gradient = match f.word("gradient")?.as_deref() {
        None | Some("analytic") => GradientStrategy::Analytic,
        Some("finite_difference") => GradientStrategy::FiniteDifference,
        Some(other) => return cfg(node.line, format!("unknown gradient `{other}` (analytic, finite_difference)")),
    };
    fit.fd_step = f.number("fd_step")?.unwrap_or(DEFAULT_FD_STEP);
    if !(fit.fd_step > 0.0) {
        return cfg(node.line, "`fd_step` must be positive");
    }
    let freeze = match f.list("freeze")? {
        None => Vec::new(),
        Some((items, line)) => items
            .iter()
            .map(|v| match v {
                Value::Str(s) => Ok(s.clone()),
                Value::Node(n) if n.fields.entries.is_empty() => Ok(n.name.clone()),
                other => cfg(line, format!("`freeze` must hold parameter names, found a {}", other.kind())),
            })
            .collect::<Result<_>>()?,
    };
    Ok(TrainSpec { fit, freeze })
}

impl Config {
    pub fn parse(src: &str) -> Result<Self> {
        let block = crate::config::parse(src).map_err(|e| CliError::Config(e.to_string()))?;
        Self::from_block(&block)
    }

    pub fn from_block(block: &Block) -> Result<Self> {
        let all = [
            "model", "kernel", "likelihood", "inducing", "mean", "whiten", "jitter", "layers", "input_variance", "samples", "train",
        ];
        let f = Fields::new(block, "the config", 1, &all)?;
        let kind = match f.word("model")?.as_deref() {
            Some("gpr") => ModelKind::Gpr,
            Some("svgp") => ModelKind::Svgp,
            Some("dgp") => ModelKind::Dgp,
            Some("svgp+uncertain") => ModelKind::Uncertain,
            Some(other) => return cfg(block.get("model").map_or(1, |e| e.line), format!("unknown model `{other}` (gpr, svgp, dgp, svgp+uncertain)")),
            None => return cfg(1, "the config needs `model`"),
        };
        let allowed: &[&str] = match kind {
            ModelKind::Gpr => &["model", "kernel", "likelihood", "mean", "train"],
            ModelKind::Svgp => &["model", "kernel", "likelihood", "inducing", "mean", "whiten", "jitter", "train"],
            ModelKind::Dgp => &["model", "likelihood", "whiten", "jitter", "layers", "samples", "train"],
            ModelKind::Uncertain => {
                &["model", "kernel", "likelihood", "inducing", "mean", "whiten", "jitter", "input_variance", "samples", "train"]
            }
        };
        for e in &block.entries {
            if !allowed.contains(&e.key.as_str()) {
                return cfg(e.line, format!("`{}` does not apply to model `{}`", e.key, f.word("model")?.unwrap_or_default()));
            }
        }

        let kernel = f.node("kernel")?.map(kernel_spec).transpose()?;
        if kind != ModelKind::Dgp && kernel.is_none() {
            return cfg(1, "the config needs `kernel`");
        }
        let likelihood = match f.node("likelihood")? {
            Some(n) => likelihood_spec(n)?,
            None => Likelihood::gaussian(1.0).map_err(config_err)?,
        };
        if kind == ModelKind::Gpr && !matches!(likelihood.observation, Observation::Gaussian { .. }) {
            return cfg(1, "exact regression needs a `gaussian` likelihood");
        }
        let inducing = f.node("inducing")?.map(inducing_spec).transpose()?;
        let mean = f.node("mean")?.map(mean_spec).transpose()?.unwrap_or_default();
        let whiten = f.boolean("whiten")?.unwrap_or(true);
        let jitter = f.number("jitter")?;
        if jitter.is_some_and(|j| !(j >= 0.0)) {
            return cfg(1, "`jitter` must be non-negative");
        }
        let layers = match f.list("layers")? {
            Some((items, line)) => items.iter().map(|v| layer_spec(v, line)).collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        if kind == ModelKind::Dgp && layers.is_empty() {
            return cfg(1, "a deep GP needs a non-empty `layers` list");
        }
        let input_variance = f.number("input_variance")?.unwrap_or(0.01);
        if !(input_variance > 0.0) {
            return cfg(1, "`input_variance` must be positive");
        }
        let samples = f.count("samples")?.unwrap_or(1);
        if samples == 0 {
            return cfg(1, "`samples` must be positive");
        }
        let train = train_spec(f.node("train")?)?;
        Ok(Config { kind, kernel, likelihood, inducing, mean, whiten, jitter, layers, input_variance, samples, train })
    }

    /// Jitter from the config, else the environment, else the library default.
    pub fn effective_jitter(&self) -> Result<f64> {
        if let Some(j) = self.jitter {
            return Ok(j);
        }
        match std::env::var(JITTER_ENV) {
            Ok(text) => match text.trim().parse::<f64>() {
                Ok(j) if j >= 0.0 && j.is_finite() => Ok(j),
                _ => Err(CliError::Config(format!("{JITTER_ENV}=`{text}` is not a non-negative number"))),
            },
            Err(_) => Ok(DEFAULT_JITTER),
        }
    }

    /// Number of outputs the model will produce.
    pub fn num_outputs(&self) -> usize {
        match self.kind {
            ModelKind::Dgp => self.layers.last().map_or(1, |l| l.kernel.num_outputs()),
            _ => self.kernel.as_ref().map_or(1, KernelSpec::num_outputs),
        }
    }

    /// Builds the untrained model for inputs `x`.
    pub fn build(&self, x: &DenseMatrix, y: &DenseMatrix) -> Result<StoredModel> {
        let d = x.cols();
        let n = x.rows();
        let jitter = self.effective_jitter()?;
        match self.kind {
            ModelKind::Gpr => {
                let kernel = self.kernel.as_ref().expect("checked").build(d)?;
                let Observation::Gaussian { variance } = self.likelihood.observation else { unreachable!("checked") };
                let data = svgp::models::Dataset::new(x.clone(), y.clone()).map_err(crate::error::data_err)?;
                let mut m = GPRModel::new(kernel, variance, &data).map_err(config_err)?;
                m.mean = self.mean.clone();
                Ok(StoredModel::Gpr(m))
            }
            ModelKind::Svgp | ModelKind::Uncertain => {
                let spec = self.kernel.as_ref().expect("checked");
                let kernel = spec.build(d)?;
                let iv = self.inducing.clone().unwrap_or(InducingSpec::Points { at: Locations::Num(DEFAULT_NUM_INDUCING.min(n)), layout: None });
                let inducing = iv.build(&kernel, spec, x)?;
                let mut m = SVGPModel::new(kernel, self.likelihood.clone(), inducing, n, self.whiten).map_err(config_err)?;
                m.mean = self.mean.clone();
                m.jitter = jitter;
                if self.kind == ModelKind::Svgp {
                    return Ok(StoredModel::Svgp(m));
                }
                let variance = DenseMatrix::from_fn(n, d, |_, _| self.input_variance);
                let inputs = UncertainInputs::new(x.clone(), variance).map_err(config_err)?;
                Ok(StoredModel::Uncertain(UncertainSVGP::new(m, inputs, self.samples).map_err(config_err)?))
            }
            ModelKind::Dgp => {
                let mut layers = Vec::new();
                let mut h = x.clone();
                for (i, spec) in self.layers.iter().enumerate() {
                    let last = i + 1 == self.layers.len();
                    let kernel = spec.kernel.build(h.cols())?;
                    let inducing = spec.inducing.build(&kernel, &spec.kernel, &h)?;
                    let width = kernel.num_outputs();
                    let mean = match &spec.mean {
                        Some(m) => m.clone(),
                        None if !last && width <= h.cols() => MeanFunction::Identity,
                        None => MeanFunction::Zero,
                    };
                    layers.push(Layer::new(kernel, inducing, mean, self.whiten));
                    h = DenseMatrix::from_fn(h.rows(), width, |r, c| if c < h.cols() { h[(r, c)] } else { 0.0 });
                }
                let mut m = DGPModel::new(layers, self.likelihood.clone(), self.samples, n).map_err(config_err)?;
                m.jitter = jitter;
                Ok(StoredModel::Dgp(m))
            }
        }
    }
}

impl BaseSpec {
    fn build(&self, d: usize) -> Result<SingleOutputKernel> {
        let params = KernelParams::new(self.variance, self.lengthscales.clone()).map_err(config_err)?;
        SingleOutputKernel::new(self.family, params, d).map_err(config_err)
    }
}

impl KernelSpec {
    pub fn num_outputs(&self) -> usize {
        match self {
            KernelSpec::Base(_) | KernelSpec::Conv { .. } => 1,
            KernelSpec::Shared { outputs, .. } => *outputs,
            KernelSpec::Separate(k) => k.len(),
            KernelSpec::Lmc { w, .. } | KernelSpec::Imc { w, .. } => w.rows(),
        }
    }

    pub fn build(&self, d: usize) -> Result<Kernel> {
        let all = |v: &[BaseSpec]| v.iter().map(|b| b.build(d)).collect::<Result<Vec<_>>>();
        let k = match self {
            KernelSpec::Base(b) => return Ok(b.build(d)?.into()),
            KernelSpec::Shared { base, outputs } => MultioutputKernel::SharedIndependent { base: base.build(d)?, num_outputs: *outputs },
            KernelSpec::Separate(v) => MultioutputKernel::SeparateIndependent { kernels: all(v)? },
            KernelSpec::Lmc { w, latents } => MultioutputKernel::linear_coregionalization(all(latents)?, w.clone()).map_err(config_err)?,
            KernelSpec::Imc { w, base } => MultioutputKernel::IntrinsicCoregionalization { base: base.build(d)?, mixing: w.clone() },
            KernelSpec::Conv { base, image, patch } => {
                let geometry = PatchGeometry::new(image.0, image.1, patch.0, patch.1).map_err(config_err)?;
                if geometry.image_size() != d {
                    return Err(CliError::Data(format!("images of {}x{} need {} input columns, the data has {d}", image.0, image.1, geometry.image_size())));
                }
                MultioutputKernel::Convolutional(ConvolutionalKernel::new(base.build(geometry.patch_size())?, geometry).map_err(config_err)?)
            }
        };
        let k = Kernel::Multi(k);
        k.validate().map_err(config_err)?;
        Ok(k)
    }

    fn latent_count(&self) -> Option<usize> {
        match self {
            KernelSpec::Shared { outputs, .. } => Some(*outputs),
            KernelSpec::Separate(k) => Some(k.len()),
            KernelSpec::Lmc { latents, .. } => Some(latents.len()),
            KernelSpec::Imc { w, .. } => Some(w.cols()),
            KernelSpec::Base(_) | KernelSpec::Conv { .. } => None,
        }
    }
}

/// `num` rows of `x` spread evenly through its lexicographic order.
pub fn spread_rows(x: &DenseMatrix, num: usize) -> Result<DenseMatrix> {
    let n = x.rows();
    if num > n {
        return Err(CliError::Config(format!("{num} inducing locations requested from {n} candidate rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x.row(a).iter().zip(x.row(b)).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let pick: Vec<usize> = if num == 1 {
        vec![order[n / 2]]
    } else {
        (0..num).map(|i| order[(i * (n - 1) + (num - 1) / 2) / (num - 1)]).collect()
    };
    Ok(x.select_rows(&pick))
}

fn resolve(at: &Locations, x: &DenseMatrix) -> Result<DenseMatrix> {
    let z = match at {
        Locations::Num(num) => spread_rows(x, *num)?,
        Locations::Given(z) => z.clone(),
    };
    if z.cols() != x.cols() {
        return Err(CliError::Config(format!("inducing locations have {} columns, the inputs have {}", z.cols(), x.cols())));
    }
    Ok(z)
}

impl InducingSpec {
    pub fn build(&self, kernel: &Kernel, spec: &KernelSpec, x: &DenseMatrix) -> Result<InducingVariable> {
        match self {
            InducingSpec::Points { at, layout } => {
                let z = resolve(at, x)?;
                let base = InducingVariable::points(z).map_err(config_err)?;
                match (spec.latent_count(), layout.unwrap_or(Layout::Shared)) {
                    (_, Layout::Correlated) => Ok(base),
                    (None, Layout::Shared) => Ok(base),
                    (None, Layout::Separate) => Err(CliError::Config("`layout = separate` needs a kernel with latent processes".into())),
                    (Some(_), Layout::Shared) => Ok(InducingVariable::shared(base)),
                    (Some(l), Layout::Separate) => Ok(InducingVariable::SeparateIndependent(vec![base; l])),
                }
            }
            InducingSpec::Multiscale { at, scale } => {
                let z = resolve(at, x)?;
                let scales = DenseMatrix::from_fn(z.rows(), z.cols(), |_, _| *scale);
                Ok(InducingVariable::Multiscale(Multiscale::new(z, scales).map_err(config_err)?))
            }
            InducingSpec::Patches { num } => {
                let Some(MultioutputKernel::Convolutional(conv)) = kernel.as_multioutput() else {
                    return Err(CliError::Config("`patches` needs a `conv` kernel".into()));
                };
                let patches = extract_patches(x, &conv.geometry).map_err(config_err)?;
                Ok(InducingVariable::Patches(InducingPatches { z: spread_rows(&patches, *num)? }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(n: usize, d: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, d, |i, j| ((i * d + j) as f64 * 0.37).sin())
    }

    fn build(src: &str, n: usize, d: usize, p: usize) -> Result<StoredModel> {
        let c = Config::parse(src)?;
        c.build(&x(n, d), &DenseMatrix::from_fn(n, p, |i, _| i as f64))
    }

    #[test]
    fn minimal_svgp() {
        let c = Config::parse("model = svgp\nkernel = sqexp { lengthscales = 0.5 }\n").unwrap();
        assert_eq!(c.train.fit, FitConfig::default());
        assert!(c.whiten);
        let StoredModel::Svgp(m) = c.build(&x(30, 1), &x(30, 1)).unwrap() else { panic!() };
        assert_eq!(m.inducing.len(), 20);
        assert_eq!(m.num_data, 30);
    }

    #[test]
    fn every_kernel_form_builds() {
        let cases = [
            ("kernel = matern32 { variance = 2, lengthscales = [1, 2] }", 1),
            ("kernel = shared { base = sqexp, outputs = 3 }", 3),
            ("kernel = separate { kernels = [sqexp, matern52] }\ninducing = points { num = 5, layout = separate }", 2),
            ("kernel = lmc { W = [[1, 0.5], [0.2, 1], [0, 1]], latents = [sqexp, matern12] }", 3),
            ("kernel = lmc { W = [[1], [0.5]], latents = [sqexp] }\ninducing = points { num = 4, layout = correlated }", 2),
            ("kernel = imc { W = [[1, 0.5], [0.2, 1]], base = sqexp }", 2),
        ];
        for (kernel, p) in cases {
            let m = build(&format!("model = svgp\n{kernel}\n"), 12, 2, p);
            let StoredModel::Svgp(m) = m.unwrap_or_else(|e| panic!("{kernel}: {e}")) else { panic!() };
            assert_eq!(m.num_outputs(), p, "{kernel}");
        }
        let conv = "model = svgp\nkernel = conv { base = sqexp, image = [3, 3], patch = [2, 2] }\ninducing = patches { num = 6 }";
        let StoredModel::Svgp(m) = build(conv, 10, 9, 1).unwrap() else { panic!() };
        assert_eq!(m.inducing.len(), 6);
        assert!(matches!(build(conv, 10, 8, 1), Err(CliError::Data(_))));
        let ms = "model = svgp\nkernel = sqexp\ninducing = multiscale { num = 4, scale = 0.2 }";
        assert!(build(ms, 10, 1, 1).is_ok());
    }

    #[test]
    fn other_model_kinds() {
        let gpr = build("model = gpr\nkernel = sqexp\nlikelihood = gaussian { variance = 0.1 }", 8, 1, 1).unwrap();
        assert!(matches!(gpr, StoredModel::Gpr(ref m) if m.noise_variance == 0.1));
        let dgp = "model = dgp\nsamples = 3\nlayers = [\n layer { kernel = shared { base = sqexp, outputs = 2 }, inducing = points { num = 5 } },\n layer { kernel = sqexp, inducing = points { num = 5 } }\n]";
        let StoredModel::Dgp(m) = build(dgp, 10, 2, 1).unwrap() else { panic!() };
        assert_eq!((m.layers.len(), m.num_samples, m.layers[0].mean.clone()), (2, 3, MeanFunction::Identity));
        let unc = build("model = svgp+uncertain\nkernel = sqexp\ninput_variance = 0.05\ninducing = points { num = 3 }", 6, 1, 1).unwrap();
        assert!(matches!(unc, StoredModel::Uncertain(ref u) if u.inputs.variance[(0, 0)] == 0.05));
    }

    #[test]
    fn training_section() {
        let c = Config::parse(
            "model = svgp\nkernel = sqexp\ntrain {\n steps = 5, lr = 0.1, batch_size = 4, seed = 7\n gradient = finite_difference\n freeze = [kernel, \"likelihood.variance\"]\n}",
        )
        .unwrap();
        assert_eq!((c.train.fit.steps, c.train.fit.lr, c.train.fit.batch_size, c.train.fit.seed), (5, 0.1, Some(4), 7));
        assert_eq!(c.train.fit.gradient, GradientStrategy::FiniteDifference);
        assert_eq!(c.train.freeze, ["kernel", "likelihood.variance"]);
    }

    #[test]
    fn likelihood_strategies() {
        let c = Config::parse("model = svgp\nkernel = sqexp\nlikelihood = poisson { samples = 50, seed = 3 }").unwrap();
        assert_eq!(c.likelihood.strategy, Strategy::MonteCarlo { samples: 50, seed: 3 });
        let c = Config::parse("model = svgp\nkernel = sqexp\nlikelihood = gaussian { variance = 0.2, quadrature = 10 }").unwrap();
        assert_eq!(c.likelihood.strategy, Strategy::GaussHermite(10));
        let c = Config::parse("model = svgp\nkernel = sqexp\nlikelihood = correlated_gaussian { cov = [[1, 0.2], [0.2, 1]] }").unwrap();
        assert!(c.likelihood.is_output_correlated());
    }

    #[test]
    fn config_errors() {
        for bad in [
            "kernel = sqexp",
            "model = svgp",
            "model = foo\nkernel = sqexp",
            "model = svgp\nkernel = sqexp { variance = -1 }",
            "model = svgp\nkernel = sqexp { colour = 1 }",
            "model = svgp\nkernel = lmc { W = [[1, 2]], latents = [sqexp] }",
            "model = svgp\nkernel = sqexp\nlayers = []",
            "model = gpr\nkernel = sqexp\nlikelihood = bernoulli",
            "model = gpr\nkernel = sqexp\ninducing = points",
            "model = svgp\nkernel = sqexp\nlikelihood = bernoulli { variance = 1 }",
            "model = svgp\nkernel = sqexp\ntrain { steps = -1 }",
            "model = svgp\nkernel = sqexp\ntrain { steps = 1.5 }",
            "model = svgp\nkernel = sqexp\nwhiten = 1",
            "model = svgp\nkernel = sqexp\nmodel = gpr",
            "model = dgp\nlayers = [sqexp]",
            "model = svgp\nkernel = conv { base = sqexp, image = [2, 2], patch = [3, 3] }",
        ] {
            assert!(matches!(Config::parse(bad), Err(CliError::Config(_))), "{bad}");
        }
        assert!(matches!(build("model = svgp\nkernel = sqexp\ninducing = points { num = 50 }", 10, 1, 1), Err(CliError::Config(_))));
        assert!(matches!(build("model = svgp\nkernel = sqexp { lengthscales = [1, 2, 3] }", 10, 2, 1), Err(CliError::Config(_))));
        assert!(matches!(build("model = svgp\nkernel = sqexp\ninducing = points { z = [[0, 1]] }", 10, 1, 1), Err(CliError::Config(_))));
    }

    #[test]
    fn spread_rows_covers_the_range() {
        let x = DenseMatrix::from_fn(11, 1, |i, _| (10 - i) as f64);
        assert_eq!(spread_rows(&x, 3).unwrap().as_slice(), &[0.0, 5.0, 10.0]);
        assert_eq!(spread_rows(&x, 11).unwrap().as_slice(), &(0..11).map(f64::from).collect::<Vec<_>>()[..]);
        assert_eq!(spread_rows(&x, 1).unwrap().as_slice(), &[5.0]);
    }
}
