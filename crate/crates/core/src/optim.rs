//! Proximal gradient descent with backtracking line search.
//!
//! Minimizes `f(θ) + g(θ)` where `f` is smooth and `g` is handled through its
//! proximal map. Projection onto a convex set is the proximal map of the
//! set's indicator, so plain projected gradient descent is the special case
//! `g = indicator`. Stopping uses the gradient-mapping norm
//! `‖θ − prox(θ − η∇f)‖ / η`, which reduces to `‖∇f‖` when `g = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOpts {
    /// Threshold on the gradient-mapping norm. GLM fits apply it to the mean
    /// per-row gradient.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Iterates are kept inside `‖θ‖ ≤ norm_cap`.
    pub norm_cap: f64,
    pub init_step: f64,
}

impl Default for OptimizerOpts {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 5000,
            norm_cap: 50.0,
            init_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    /// Stationary (or stalled) with the iterate pinned at the norm cap.
    ConvergedAtBoundary,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: FitStatus,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite objective after {iterations} iterations")]
    NonFinite { last_finite: Vec<f64>, iterations: usize },
}

const MIN_STEP: f64 = 1e-18;
const MAX_STEP: f64 = 1e12;

/// Runs proximal gradient descent from `x0`.
///
/// `smooth(θ, grad)` returns `f(θ)` and writes `∇f(θ)` into `grad`.
/// `prox(v, η)` returns `argmin_u g(u) + ‖u − v‖²/(2η)`; `penalty(θ)` is `g(θ)`
/// (zero for indicators) and only feeds the reported objective.
pub fn proximal_descent<F, P, G>(
    x0: &[f64],
    mut smooth: F,
    prox: P,
    penalty: G,
    opts: &OptimizerOpts,
) -> Result<Solution, OptimError>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: Fn(&[f64], f64) -> Vec<f64>,
    G: Fn(&[f64]) -> f64,
{
    let d = x0.len();
    let mut x = prox(x0, opts.init_step);
    let mut grad = vec![0.0; d];
    let mut fx = smooth(&x, &mut grad);
    if !fx.is_finite() {
        return Err(OptimError::NonFinite {
            last_finite: x0.to_vec(),
            iterations: 0,
        });
    }
    let mut step = opts.init_step;
    let mut trial_grad = vec![0.0; d];
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        step = (step * 2.0).min(MAX_STEP);
        let (next, f_next, mapping) = loop {
            let v: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect();
            let cand = prox(&v, step);
            let diff: Vec<f64> = cand.iter().zip(&x).map(|(c, xi)| c - xi).collect();
            let f_cand = smooth(&cand, &mut trial_grad);
            let model = fx + dot(&grad, &diff) + dot(&diff, &diff) / (2.0 * step);
            if f_cand.is_finite() && f_cand <= model + 4.0 * f64::EPSILON * fx.abs() {
                break (cand, f_cand, norm(&diff) / step);
            }
            step *= 0.5;
            if step < MIN_STEP {
                break (x.clone(), fx, 0.0);
            }
        };
        if step < MIN_STEP {
            // no descent possible at machine precision
            status = FitStatus::Converged;
            break;
        }
        x = next;
        fx = f_next;
        std::mem::swap(&mut grad, &mut trial_grad);
        if !fx.is_finite() {
            return Err(OptimError::NonFinite {
                last_finite: x,
                iterations,
            });
        }
        if mapping <= opts.grad_tol {
            status = FitStatus::Converged;
            break;
        }
    }

    if norm(&x) >= opts.norm_cap * (1.0 - 1e-9) {
        status = FitStatus::ConvergedAtBoundary;
    }
    let objective = fx + penalty(&x);
    Ok(Solution {
        theta: x,
        objective,
        iterations,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::clamp_to_ball;

    #[test]
    fn quadratic_minimum() {
        // f = ‖θ − (1, −2)‖²
        let target = [1.0, -2.0];
        let sol = proximal_descent(
            &[0.0, 0.0],
            |x, g| {
                g[0] = 2.0 * (x[0] - target[0]);
                g[1] = 2.0 * (x[1] - target[1]);
                (x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2)
            },
            |v, _| v.to_vec(),
            |_| 0.0,
            &OptimizerOpts::default(),
        )
        .unwrap();
        assert_eq!(sol.status, FitStatus::Converged);
        assert!((sol.theta[0] - 1.0).abs() < 1e-8);
        assert!((sol.theta[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn projected_quadratic_hits_boundary() {
        let target = [3.0, 0.0];
        let opts = OptimizerOpts {
            norm_cap: 1.0,
            ..Default::default()
        };
        let sol = proximal_descent(
            &[0.0, 0.0],
            |x, g| {
                g[0] = 2.0 * (x[0] - target[0]);
                g[1] = 2.0 * x[1];
                (x[0] - target[0]).powi(2) + x[1] * x[1]
            },
            |v, _| clamp_to_ball(v, &[0.0, 0.0], 1.0),
            |_| 0.0,
            &opts,
        )
        .unwrap();
        assert_eq!(sol.status, FitStatus::ConvergedAtBoundary);
        assert!((sol.theta[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nan_objective_is_an_error() {
        let err = proximal_descent(
            &[0.0],
            |_, g| {
                g[0] = 0.0;
                f64::NAN
            },
            |v, _| v.to_vec(),
            |_| 0.0,
            &OptimizerOpts::default(),
        )
        .unwrap_err();
        assert!(matches!(err, OptimError::NonFinite { .. }));
    }
}
