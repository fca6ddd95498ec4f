//! Oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `exp(M)` by scaling and squaring of a Taylor series.
pub fn expm(m: &[f64], n: usize) -> Vec<f64> {
    let norm: f64 = m.iter().map(|v| v.abs()).sum();
    let s = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
    let scaled: Vec<f64> = m.iter().map(|v| v / 2f64.powi(s)).collect();
    let mut result = vec![0.0; n * n];
    let mut term = vec![0.0; n * n];
    for i in 0..n {
        result[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    for k in 1..30 {
        term = matmul(&term, &scaled, n).into_iter().map(|v| v / k as f64).collect();
        result.iter_mut().zip(&term).for_each(|(r, t)| *r += t);
    }
    for _ in 0..s {
        result = matmul(&result, &result, n);
    }
    result
}

pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                c[i * n + j] += a[i * n + k] * b[k * n + j];
            }
        }
    }
    c
}

/// Random stable matrix: a negative definite symmetric part plus a skew part.
pub fn stable_matrix(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let bb: f64 = (0..n).map(|l| b[l * n + i] * b[l * n + j]).sum();
            a[i * n + j] = -0.5 * bb - if i == j { 0.2 } else { 0.0 } + 0.5 * (k[i * n + j] - k[j * n + i]);
        }
    }
    a
}

/// Largest of `|a − n| / max(|a|, |n|, floor)` over the entries.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor)).fold(0.0, f64::max)
}
