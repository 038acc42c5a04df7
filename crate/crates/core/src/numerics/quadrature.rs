use crate::error::{Error, Result};

pub const MAX_HERMITE_NODES: usize = 200;

/// Gauss-Hermite rule for expectations under a standard normal.
///
/// Returns ascending abscissae and weights summing to one, so that
/// `E[f(x)] ~ sum_i w_i f(x_i)` for `x ~ N(0, 1)`. The rule is exact for
/// polynomials of degree up to `2n - 1`.
pub fn gauss_hermite_nodes(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > MAX_HERMITE_NODES {
        return Err(Error::InvalidParameter(format!(
            "Gauss-Hermite node count must be in 1..={MAX_HERMITE_NODES}, got {n}"
        )));
    }
    // Nodes are the eigenvalues of the Jacobi matrix of the probabilists'
    // Hermite recurrence (zero diagonal, off-diagonal sqrt(k)), isolated by
    // Sturm-sequence bisection and polished by Newton steps. Weights follow
    // from the Christoffel numbers 1 / sum_k phi_k(x)^2 of the orthonormal
    // polynomials, which already sum to one.
    let bound = 2.0 * (n as f64).sqrt() + 1.0;
    let mut nodes = Vec::with_capacity(n);
    for k in 0..n {
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if eigenvalues_below(n, mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..3 {
            let (p_n, p_nm1) = orthonormal(n, x);
            let deriv = (n as f64).sqrt() * p_nm1;
            if deriv == 0.0 {
                break;
            }
            let step = p_n / deriv;
            if (x - step) > lo - (hi - lo) && (x - step) < hi + (hi - lo) {
                x -= step;
            }
        }
        nodes.push(x);
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    for i in 0..n / 2 {
        let v = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -v;
        nodes[n - 1 - i] = v;
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            let (mut prev, mut cur) = (0.0, 1.0);
            let mut sum = 1.0;
            for k in 0..n - 1 {
                let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
                prev = cur;
                cur = next;
                sum += cur * cur;
            }
            1.0 / sum
        })
        .collect();
    Ok((nodes, weights))
}

/// Number of eigenvalues of the `n`-point Jacobi matrix below `x`.
fn eigenvalues_below(n: usize, x: f64) -> usize {
    let mut count = 0;
    let mut d = -x;
    for i in 0..n {
        if i > 0 {
            let denom = if d == 0.0 { f64::MIN_POSITIVE } else { d };
            d = -x - i as f64 / denom;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// Orthonormal probabilists' Hermite polynomials of degree `n` and `n - 1` at `x`.
fn orthonormal(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// `E[f(mu + sqrt(var) x)]` with an `n`-point rule.
pub fn gaussian_expectation(nodes: &[f64], weights: &[f64], mean: f64, var: f64, f: impl Fn(f64) -> f64) -> f64 {
    let sd = var.max(0.0).sqrt();
    nodes.iter().zip(weights).map(|(&x, &w)| w * f(mean + sd * x)).sum()
}
