use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::Result;
use crate::model::{ParamKind, ParamSpec};
use crate::params::ParamSet;
use crate::tensor::{Real, Tensor};

/// Standard deviation of the Gaussian used for embeddings and
/// non-recurrent weights.
pub const INIT_STD: f64 = 0.01;

/// Initialises parameters: embeddings and weights from `N(0, 0.01²)`,
/// square recurrent matrices random orthogonal, biases zero.
pub fn init_params<T: Real>(specs: &[ParamSpec], seed: u64) -> Result<ParamSet<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut params = ParamSet::new();
    for spec in specs {
        let [rows, cols] = spec.shape;
        let data: Vec<f64> = match spec.kind {
            ParamKind::Bias => vec![0.0; rows * cols],
            ParamKind::Embedding | ParamKind::Weight => (0..rows * cols).map(|_| normal.sample(&mut rng)).collect(),
            ParamKind::Recurrent => random_orthogonal(rows, cols, &mut rng),
        };
        params.insert(&spec.name, Tensor::from_f64(&spec.shape, &data)?)?;
    }
    Ok(params)
}

/// Q factor of a Gaussian matrix (Householder QR), with column signs
/// fixed so that R has a positive diagonal. Rows ≥ cols gives orthonormal
/// columns; otherwise the transpose is factored and orthonormal rows are
/// returned.
pub fn random_orthogonal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let tall = rows >= cols;
    let (m, n) = if tall { (rows, cols) } else { (cols, rows) };
    let mut a: Vec<f64> = (0..m * n).map(|_| StandardNormal.sample(rng)).collect();
    let q = householder_q(&mut a, m, n);
    if tall {
        q
    } else {
        let mut t = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                t[j * m + i] = q[i * n + j];
            }
        }
        t
    }
}

/// Thin Q (m×n, row-major) of `a` (m×n, m ≥ n), sign-normalised.
fn householder_q(a: &mut [f64], m: usize, n: usize) -> Vec<f64> {
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut diag_sign = vec![1.0; n];
    for k in 0..n {
        let norm: f64 = (k..m).map(|i| a[i * n + k].powi(2)).sum::<f64>().sqrt();
        let x0 = a[k * n + k];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[i * n + k]).collect();
        v[0] -= alpha;
        let vnorm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm > 0.0 {
            for x in &mut v {
                *x /= vnorm;
            }
            for j in k..n {
                let dot: f64 = (k..m).map(|i| v[i - k] * a[i * n + j]).sum();
                for i in k..m {
                    a[i * n + j] -= 2.0 * v[i - k] * dot;
                }
            }
        }
        diag_sign[k] = if a[k * n + k] < 0.0 { -1.0 } else { 1.0 };
        vs.push(v);
    }
    // Q = H_0 H_1 … H_{n−1} applied to the first n columns of I
    let mut q = vec![0.0; m * n];
    for j in 0..n {
        q[j * n + j] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &vs[k];
        for j in 0..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * q[i * n + j]).sum();
            for i in k..m {
                q[i * n + j] -= 2.0 * v[i - k] * dot;
            }
        }
    }
    for i in 0..m {
        for j in 0..n {
            q[i * n + j] *= diag_sign[j];
        }
    }
    q
}
