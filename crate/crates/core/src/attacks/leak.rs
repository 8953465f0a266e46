//! Closed-form gradient leakage through a linear patch embedding.
//!
//! With one patch token, `∂L/∂E = xᵖ·gᵀ` is rank one, so its dominant left
//! singular vector is the input patch direction.

use super::AttackError;
use crate::pevit::{forward_batch, ModelParams};
use crate::tensor::{Graph, Tensor};

pub const POWER_ITERATIONS: usize = 100;
pub const POWER_TOLERANCE: f64 = 1e-10;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dominant left singular direction of a `patch_dim × D` gradient, with the
/// largest-magnitude entry made positive.
pub fn grad_leak_invert(grad: &Tensor) -> Result<Vec<f64>, AttackError> {
    if grad.shape().len() != 2 {
        return Err(AttackError::Geometry(format!("expected a matrix, got shape {:?}", grad.shape())));
    }
    let (rows, cols) = (grad.shape()[0], grad.shape()[1]);
    let data = grad.data();
    // start from the largest column
    let best = (0..cols)
        .map(|c| (c, (0..rows).map(|r| data[r * cols + c].powi(2)).sum::<f64>()))
        .fold((0, 0.0), |acc, (c, n)| if n > acc.1 { (c, n) } else { acc });
    if best.1 == 0.0 || !best.1.is_finite() {
        return Err(AttackError::ZeroGradient);
    }
    let mut v: Vec<f64> = (0..rows).map(|r| data[r * cols + best.0]).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    for _ in 0..POWER_ITERATIONS {
        let mut t = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c] += data[r * cols + c] * v[r];
            }
        }
        let mut next: Vec<f64> = (0..rows)
            .map(|r| (0..cols).map(|c| data[r * cols + c] * t[c]).sum())
            .collect();
        let n = norm(&next);
        if n == 0.0 {
            return Err(AttackError::ZeroGradient);
        }
        next.iter_mut().for_each(|x| *x /= n);
        let sign = if next.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        let delta = next.iter().zip(&v).map(|(a, b)| (a * sign - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < POWER_TOLERANCE {
            break;
        }
    }
    let peak = v.iter().fold(0.0f64, |m, &x| if x.abs() > m.abs() { x } else { m });
    if peak < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(v)
}

/// `∂L/∂E` for a single-patch forward pass with cross-entropy against `label`.
pub fn single_token_embed_gradient(params: &ModelParams, patch: &[f64], label: usize) -> Result<Tensor, AttackError> {
    let mut g = Graph::new();
    let w = params.bind(&mut g);
    let logits = forward_batch(&mut g, &w, &params.config, &[vec![patch.to_vec()]], None)?;
    let loss = g
        .cross_entropy(logits, &[label])
        .map_err(crate::pevit::ModelError::from)?;
    g.backward(loss).map_err(crate::pevit::ModelError::from)?;
    Ok(g.grad_tensor(w.patch_embed))
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a[i] - ma, b[i] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
