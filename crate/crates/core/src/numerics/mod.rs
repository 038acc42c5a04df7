//! Dense and structured linear algebra, quadrature and random streams.

mod linalg;
mod matrix;
pub mod probe;
mod quadrature;
mod rng;
mod structured;

pub use linalg::{cho_solve, cholesky, tri_solve, LowerTriangular, DEFAULT_JITTER, JITTER_RETRIES};
pub use matrix::{dot, DenseMatrix};
pub use quadrature::{gauss_hermite_nodes, gaussian_expectation, MAX_HERMITE_NODES};
pub use rng::{standard_normal, RngState};
pub use structured::{structured_logdet, structured_solve, BlockDiagonal, StructuredFactor, StructuredPSD};

/// Natural log of the standard normal CDF, accurate in the far left tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > -20.0 {
        normal_cdf(x).ln()
    } else {
        // asymptotic Mills-ratio expansion
        let t = -x;
        let t2 = t * t;
        let mut series = 1.0;
        let mut term = 1.0;
        for k in 1..12 {
            term *= -((2 * k - 1) as f64) / t2;
            series += term;
        }
        -0.5 * t2 - t.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Intended for validation and tests on small matrices.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|p| (p + 1..n).map(move |q| (p, q))).map(|(p, q)| m[(p, q)].powi(2)).sum();
        if off <= 1e-30 * m.frobenius_norm().powi(2).max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig = m.diag();
    eig.sort_by(f64::total_cmp);
    eig
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}
