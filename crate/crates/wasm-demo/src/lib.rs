//! Browser demo: three small interactive views over the `svgp` crate.
//!
//! Each exported function takes plain numbers and returns a JSON string so
//! the page needs no bindings beyond `wasm-bindgen`'s generated loader.

use serde::Serialize;
use svgp::covariances::kuf;
use svgp::inducing::{InducingVariable, Multiscale};
use svgp::kernels::{Kernel, MultioutputKernel, SingleOutputKernel};
use svgp::likelihoods::Likelihood;
use svgp::models::{Dataset, GPRModel, SVGPModel};
use svgp::numerics::{DenseMatrix, RngState};
use wasm_bindgen::prelude::*;

const GRID: usize = 121;
const LO: f64 = -4.0;
const HI: f64 = 4.0;

fn grid() -> Vec<f64> {
    (0..GRID).map(|i| LO + (HI - LO) * i as f64 / (GRID - 1) as f64).collect()
}

fn column(v: &[f64]) -> DenseMatrix {
    DenseMatrix::column_vector(v)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

fn se(variance: f64, lengthscale: f64) -> Result<SingleOutputKernel, String> {
    SingleOutputKernel::squared_exponential(variance, lengthscale, 1).map_err(|e| e.to_string())
}

/// Noisy draws of a fixed test function, reproducible per seed.
pub fn toy_data(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = RngState::new(seed);
    let x: Vec<f64> = (0..n).map(|_| -3.0 + 6.0 * rng.uniform()).collect();
    let y = x.iter().map(|&v| (1.5 * v).sin() + 0.3 * (0.5 * v).cos() + 0.15 * rng.normal()).collect();
    (x, y)
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub grid: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub svgp_mean: Vec<f64>,
    pub svgp_var: Vec<f64>,
    pub gpr_mean: Vec<f64>,
    pub gpr_var: Vec<f64>,
    pub elbo: f64,
    pub log_marginal: f64,
}

/// SVGP with `m` evenly spaced inducing points and its optimal `q(u)`,
/// next to exact regression on the same data.
pub fn compare(n: usize, m: usize, lengthscale: f64, noise: f64, seed: u64) -> Result<Comparison, String> {
    let err = |e: svgp::Error| e.to_string();
    let (x, y) = toy_data(n.max(1), seed);
    let data = Dataset::new(column(&x), column(&y)).map_err(err)?;
    let kernel: Kernel = se(1.0, lengthscale)?.into();
    let m = m.max(1);
    let z: Vec<f64> = (0..m).map(|i| if m == 1 { 0.0 } else { -3.0 + 6.0 * i as f64 / (m - 1) as f64 }).collect();
    let iv = InducingVariable::points(column(&z)).map_err(err)?;
    let lik = Likelihood::gaussian(noise).map_err(err)?;
    let mut model = SVGPModel::new(kernel.clone(), lik, iv, data.len(), true).map_err(err)?;
    model.q = model.optimal_q(&data).map_err(err)?;
    let gpr = GPRModel::new(kernel, noise, &data).map_err(err)?;
    let g = grid();
    let s = model.predict_f(&column(&g), false, false).map_err(err)?;
    let e = gpr.predict_f(&column(&g), false).map_err(err)?;
    Ok(Comparison {
        svgp_var: s.marginal_variances().into_vec(),
        svgp_mean: s.mean.into_vec(),
        gpr_var: e.marginal_variances().into_vec(),
        gpr_mean: e.mean.into_vec(),
        elbo: model.elbo(&data, 1.0).map_err(err)?,
        log_marginal: gpr.log_marginal().map_err(err)?,
        grid: g,
        x,
        y,
        z,
    })
}

#[derive(Debug, Serialize)]
pub struct Coregionalised {
    pub grid: Vec<f64>,
    /// Inputs and values observed per output.
    pub observed: [(Vec<f64>, Vec<f64>); 2],
    pub mean: [Vec<f64>; 2],
    pub var: [Vec<f64>; 2],
}

/// Two outputs mixed from two latent processes; output 1 is only observed
/// for negative inputs, so its right half is inferred through the mixing.
pub fn coregionalised(coupling: f64, seed: u64) -> Result<Coregionalised, String> {
    let err = |e: svgp::Error| e.to_string();
    let c = coupling.clamp(-1.0, 1.0);
    let w = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![c, (1.0 - c * c).sqrt()]]).map_err(err)?;
    let kernel = MultioutputKernel::linear_coregionalization(vec![se(1.0, 1.0)?, se(1.0, 0.6)?], w).map_err(err)?;
    let mut rng = RngState::new(seed);
    let xs: Vec<f64> = (0..40).map(|i| -3.0 + 6.0 * i as f64 / 39.0).collect();
    let truth = |x: f64| [(1.2 * x).sin(), c * (1.2 * x).sin() + (1.0 - c * c).sqrt() * (2.0 * x).cos()];
    let (mut x, mut y, mut out) = (Vec::new(), Vec::new(), Vec::new());
    let mut observed: [(Vec<f64>, Vec<f64>); 2] = Default::default();
    for (i, &xi) in xs.iter().enumerate() {
        let p = i % 2;
        if p == 1 && xi > 0.0 {
            continue;
        }
        let v = truth(xi)[p] + 0.05 * rng.normal();
        x.push(xi);
        y.push(v);
        out.push(p);
        observed[p].0.push(xi);
        observed[p].1.push(v);
    }
    let data = Dataset::heterotopic(column(&x), &y, &out, 2).map_err(err)?;
    let z: Vec<f64> = (0..10).map(|i| -3.0 + 6.0 * i as f64 / 9.0).collect();
    let iv = InducingVariable::points(column(&z)).map_err(err)?;
    let lik = Likelihood::gaussian(0.0025).map_err(err)?;
    let mut model = SVGPModel::new(Kernel::Multi(kernel), lik, iv, data.len(), true).map_err(err)?;
    model.q = model.optimal_q(&data).map_err(err)?;
    let g = grid();
    let f = model.predict_f(&column(&g), false, false).map_err(err)?;
    let var = f.marginal_variances();
    let col = |m: &DenseMatrix, j: usize| m.column(j);
    Ok(Coregionalised { mean: [col(&f.mean, 0), col(&f.mean, 1)], var: [col(&var, 0), col(&var, 1)], grid: g, observed })
}

#[derive(Debug, Serialize)]
pub struct Window {
    pub grid: Vec<f64>,
    /// `cov(u, f(x))` for a Gaussian-window inducing variable at 0.
    pub multiscale: Vec<f64>,
    /// `k(0, x)`, the point-evaluation limit.
    pub point: Vec<f64>,
}

/// Covariance between one windowed inducing variable and the function.
pub fn window(scale: f64, lengthscale: f64) -> Result<Window, String> {
    let err = |e: svgp::Error| e.to_string();
    let kernel: Kernel = se(1.0, lengthscale)?.into();
    let g = grid();
    let x = column(&g);
    let z = DenseMatrix::zeros(1, 1);
    let ms = InducingVariable::Multiscale(Multiscale::new(z.clone(), DenseMatrix::from_vec(1, 1, vec![scale]).map_err(err)?).map_err(err)?);
    let pt = InducingVariable::points(z).map_err(err)?;
    let row = |iv: &InducingVariable| kuf(iv, &kernel, &x).and_then(|r| r.into_single()).map(|m| m.into_vec()).map_err(err);
    Ok(Window { multiscale: row(&ms)?, point: row(&pt)?, grid: g })
}

#[wasm_bindgen]
pub fn compare_json(n: usize, m: usize, lengthscale: f64, noise: f64, seed: u32) -> Result<String, JsValue> {
    to_js(compare(n, m, lengthscale, noise, u64::from(seed)))
}

#[wasm_bindgen]
pub fn coregionalised_json(coupling: f64, seed: u32) -> Result<String, JsValue> {
    to_js(coregionalised(coupling, u64::from(seed)))
}

#[wasm_bindgen]
pub fn window_json(scale: f64, lengthscale: f64) -> Result<String, JsValue> {
    to_js(window(scale, lengthscale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_inducing_points_recover_exact_regression() {
        let r = compare(8, 40, 1.0, 0.1, 1).unwrap();
        let gap = r.svgp_mean.iter().zip(&r.gpr_mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-4, "mean gap {gap}");
        assert!(r.log_marginal >= r.elbo - 1e-8);
        assert!(r.log_marginal - r.elbo < 1e-4);
        let sparse = compare(8, 2, 1.0, 0.1, 1).unwrap();
        assert!(sparse.elbo < r.elbo);
        assert_eq!(r.svgp_mean.len(), GRID);
    }

    #[test]
    fn coupling_transfers_information() {
        let tied = coregionalised(0.99, 3).unwrap();
        let free = coregionalised(0.0, 3).unwrap();
        let right = GRID * 3 / 4;
        assert!(tied.var[1][right] < free.var[1][right]);
        assert!(tied.observed[1].0.iter().all(|&x| x <= 0.0));
    }

    #[test]
    fn narrow_windows_approach_point_evaluations() {
        let w = window(1e-6, 0.8).unwrap();
        let gap = w.multiscale.iter().zip(&w.point).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-9);
        let wide = window(2.0, 0.8).unwrap();
        let mid = GRID / 2;
        assert!(wide.multiscale[mid] < w.multiscale[mid]);
    }

    #[test]
    fn exports_return_json() {
        let s = compare_json(10, 4, 1.0, 0.1, 0).unwrap();
        assert!(s.starts_with('{') && s.contains("\"elbo\""));
        assert!(window_json(0.3, 1.0).unwrap().contains("multiscale"));
        assert!(coregionalised_json(0.5, 0).unwrap().contains("observed"));
    }
}
