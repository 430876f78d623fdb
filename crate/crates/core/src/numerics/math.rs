//! Scalar and vector helpers shared by every module.

use crate::error::{check_dim, Error, Result};

/// Mean squared error between two equal-length vectors.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("mse", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("mse of empty vectors".into()));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Euclidean norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean distance between two equal-length vectors.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("l2_distance", a.len(), b.len())?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Largest absolute entry of `a - b`.
pub fn linf_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("linf_distance", a.len(), b.len())?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Max-shifted softmax; finite for any finite input.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Vector-Jacobian product of softmax: given `p = softmax(q)` and `dL/dp`,
/// returns `dL/dq`.
pub fn softmax_backward(p: &[f64], upstream: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(upstream).map(|(pi, gi)| pi * gi).sum();
    p.iter()
        .zip(upstream)
        .map(|(pi, gi)| pi * (gi - inner))
        .collect()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry; ties resolve to the lowest index.
pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

pub fn max_value(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Sign with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
