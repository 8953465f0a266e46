//! Central-difference gradient checking.

use std::collections::BTreeSet;

use super::{Graph, Tensor, TensorError, Var};
use crate::rng::KeyStream;

/// Denominator floor for [`relative_error`]; gradients smaller than this are
/// compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    All,
    /// `count` distinct coordinates drawn uniformly over all parameters.
    Random { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn evaluate<F, E>(f: &F, params: &[Tensor]) -> Result<f64, E>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok(g.value(loss).data()[0])
}

/// Compares the analytic gradient of `f` at `params` with central
/// differences of width `2·step`.
pub fn grad_check<F, E>(
    params: &[Tensor],
    f: F,
    step: f64,
    tolerance: f64,
    sampling: Sampling,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(TensorError::Invalid {
            op: "grad_check",
            reason: format!("step must be positive, got {step}"),
        }
        .into());
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad_tensor(v)).collect();

    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, p| {
            let start = *acc;
            *acc += p.len();
            Some(start)
        })
        .collect();
    let total: usize = params.iter().map(Tensor::len).sum();
    let coords: Vec<usize> = match sampling {
        Sampling::Random { count, seed } if count < total => {
            let mut stream = KeyStream::new(seed);
            let mut picked = BTreeSet::new();
            while picked.len() < count {
                picked.insert(stream.bounded(total as u64) as usize);
            }
            picked.into_iter().collect()
        }
        _ => (0..total).collect(),
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance,
    };
    let mut work = params.to_vec();
    for flat in coords {
        let pi = offsets.partition_point(|&o| o <= flat) - 1;
        let ei = flat - offsets[pi];
        let original = work[pi].data()[ei];
        work[pi].data_mut()[ei] = original + step;
        let plus = evaluate(&f, &work)?;
        work[pi].data_mut()[ei] = original - step;
        let minus = evaluate(&f, &work)?;
        work[pi].data_mut()[ei] = original;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[pi].data()[ei], numeric);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((pi, ei));
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.7, 2.5, 0.9]);
        let report = grad_check::<_, TensorError>(
            &[x],
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                let scaled = g.scale(sq, 1.5);
                Ok(g.sum(scaled))
            },
            1e-5,
            1e-9,
            Sampling::All,
        )
        .unwrap();
        assert_eq!(report.checked, 4);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn gelu_chain() {
        let x = Tensor::new(vec![2, 3], vec![-2.0, -0.3, 0.1, 0.7, 1.9, 3.2]).unwrap();
        let w = Tensor::new(vec![3, 2], vec![0.5, -0.4, 0.3, 0.8, -1.1, 0.2]).unwrap();
        let report = grad_check::<_, TensorError>(
            &[x, w],
            |g, v| {
                let h = g.gelu(v[0]);
                let y = g.matmul(h, v[1])?;
                let z = g.gelu(y);
                let zz = g.mul(z, z)?;
                Ok(g.sum(zz))
            },
            1e-5,
            1e-6,
            Sampling::All,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        let r = grad_check::<_, TensorError>(&[Tensor::scalar(1.0)], |g, v| Ok(g.sum(v[0])), 0.0, 1e-6, Sampling::All);
        assert!(r.is_err());
    }

    #[test]
    fn random_sampling_is_deterministic() {
        let x = Tensor::vector((0..50).map(|i| i as f64 * 0.1).collect());
        let run = || {
            grad_check::<_, TensorError>(
                std::slice::from_ref(&x),
                |g, v| {
                    let s = g.sigmoid(v[0]);
                    Ok(g.sum(s))
                },
                1e-5,
                1e-6,
                Sampling::Random { count: 10, seed: 3 },
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.checked, 10);
    }
}
