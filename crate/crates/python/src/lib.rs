//! Python bindings for `funnel-core`.
//!
//! Exposes the closed-form bounds, the two-stage estimator, the funnel
//! bonus, synthetic email logs, a stateful `Policy`, and the CLI entry
//! point. Invalid arguments raise `ValueError`; numerical failures raise
//! `RuntimeError`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use funnel_core::bandit::{funnel_bonus_terms, PolicyContext, RefitCadence};
use funnel_core::env::{EmailProfile, RewardVector};
use funnel_core::harness::PolicyParams;
use funnel_core::mtl::{self, BoundInputs, ConstraintSet, MtlConfig};
use funnel_core::optim::OptimizerOpts;
use funnel_core::{LayeredDataset, MeanFunction};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// `coef` stands for `c_δ / (c_μ λ)`; the remaining constants are inert.
fn bound_inputs(q: Vec<f64>, n: Vec<f64>, coef: f64, d: usize) -> PyResult<BoundInputs> {
    if q.is_empty() || q.len() != n.len() {
        return Err(value_err("q and n must be non-empty and of equal length"));
    }
    if n.iter().any(|v| !(*v > 0.0)) {
        return Err(value_err("sample counts must be positive"));
    }
    Ok(BoundInputs {
        q,
        n,
        d,
        d_x: 1.0,
        c_mu: 1.0,
        kappa: 1.0,
        lambda: 1.0,
        delta: 0.1,
        c_delta_scale: 1.0,
        coef_override: Some(coef),
    })
}

/// Sequential-dependency bound on 1-based layer `j` anchored at `j0`
/// (`j0 = J + 1` disables transfer).
#[pyfunction]
#[pyo3(signature = (q, n, coef, j, j0, d=1, kappa=1.0, x_norm=1.0))]
#[allow(clippy::too_many_arguments)]
fn sequential_bound(
    q: Vec<f64>,
    n: Vec<f64>,
    coef: f64,
    j: usize,
    j0: usize,
    d: usize,
    kappa: f64,
    x_norm: f64,
) -> PyResult<f64> {
    let mut b = bound_inputs(q, n, coef, d)?;
    b.kappa = kappa;
    mtl::theorem1_bound(&b, x_norm, j, j0).map_err(value_err)
}

/// `(j0, condition_layer, preconditions_met)` of the sequential bound.
#[pyfunction]
#[pyo3(signature = (q, n, coef, d=1))]
fn threshold_j0(q: Vec<f64>, n: Vec<f64>, coef: f64, d: usize) -> PyResult<(usize, usize, bool)> {
    let c = mtl::threshold_j0(&bound_inputs(q, n, coef, d)?);
    Ok((c.j0, c.condition_layer, c.preconditions_met))
}

/// Clustered-dependency bound on 1-based layer `j`.
#[pyfunction]
#[pyo3(signature = (q, n, coef, j, d=1, kappa=1.0, x_norm=1.0))]
fn clustered_bound(q: Vec<f64>, n: Vec<f64>, coef: f64, j: usize, d: usize, kappa: f64, x_norm: f64) -> PyResult<f64> {
    let mut b = bound_inputs(q, n, coef, d)?;
    b.kappa = kappa;
    mtl::theorem2_bound(&b, x_norm, j).map_err(value_err)
}

/// Optimistic bonus on `P_J` from per-layer means and bonuses.
#[pyfunction]
fn funnel_bonus(layer_means: Vec<f64>, delta_mu: Vec<f64>) -> PyResult<f64> {
    if layer_means.len() != delta_mu.len() {
        return Err(value_err("layer_means and delta_mu differ in length"));
    }
    Ok(funnel_bonus_terms(&layer_means, &delta_mu).total)
}

/// Two-stage estimate from funnel rows.
///
/// Returns `(theta_bar, theta_hat, fallback)` with one entry per layer.
#[pyfunction]
#[pyo3(signature = (contexts, rewards, q, dependency="sequential", delta=0.1, radius_coef=None))]
#[allow(clippy::type_complexity)]
fn mtl_estimate(
    contexts: Vec<Vec<f64>>,
    rewards: Vec<Vec<u8>>,
    q: Vec<f64>,
    dependency: &str,
    delta: f64,
    radius_coef: Option<f64>,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<bool>)> {
    let dim = contexts.first().map(Vec::len).ok_or_else(|| value_err("no rows"))?;
    if contexts.len() != rewards.len() {
        return Err(value_err("contexts and rewards differ in length"));
    }
    let mut data = LayeredDataset::new(q.len(), dim);
    for (x, r) in contexts.iter().zip(&rewards) {
        if x.len() != dim || r.len() != q.len() {
            return Err(value_err("ragged contexts or reward vectors"));
        }
        data.push(x, &RewardVector::from_bits(r).map_err(value_err)?);
    }
    let d_x = contexts
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let theta0 = match dependency {
        "sequential" => ConstraintSet::SequentialChain { q: q.clone() },
        "clustered" => ConstraintSet::ClusteredCenter { q: q.clone() },
        other => return Err(value_err(format!("unknown dependency {other:?}"))),
    };
    let mut cfg = MtlConfig::for_slack(&q, d_x, delta);
    cfg.radius_coef = radius_coef;
    let mean = MeanFunction::from_norms(d_x, cfg.norm_cap);
    let est = mtl::mtl_estimate(&data, &theta0, &mean, &cfg, None).map_err(runtime_err)?;
    let rows = |s: &funnel_core::ThetaStack| s.layers.iter().map(|l| l.0.clone()).collect();
    Ok((
        rows(&est.theta_bar),
        rows(&est.theta_hat),
        est.diagnostics.iter().map(|d| d.fallback).collect(),
    ))
}

/// Synthetic email-campaign log: `(contexts, actions, rewards)`.
#[pyfunction]
#[pyo3(signature = (n, rates=None, seed=0))]
#[allow(clippy::type_complexity)]
fn email_log(n: usize, rates: Option<Vec<f64>>, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>, Vec<Vec<u8>>)> {
    let mut profile = EmailProfile::default();
    if let Some(r) = rates {
        profile.rates = r;
    }
    let log = profile.generate_log(n, seed).map_err(value_err)?;
    Ok((
        log.iter().map(|l| l.context.clone()).collect(),
        log.iter().map(|l| l.action).collect(),
        log.iter().map(|l| l.rewards.bits().to_vec()).collect(),
    ))
}

/// Runs the `funnel` command line with `argv` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(argv: Vec<String>) -> i32 {
    funnel_core::harness::cli_main(std::iter::once("funnel".to_string()).chain(argv))
}

/// A bandit policy driven step by step from Python.
#[pyclass(name = "Policy")]
struct PyPolicy {
    inner: funnel_core::Policy,
}

#[pymethods]
impl PyPolicy {
    /// `kind` is one of `multi_layer_sequential`, `multi_layer_clustered`,
    /// `target`, `mix`, `sequential`, `optimistic`, `random`.
    #[new]
    #[pyo3(signature = (kind, arms, layers, dim, horizon, d_x, seed=0, epsilon=0.02, lambda_pen=0.01, alpha=0.6, norm_cap=20.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        arms: usize,
        layers: usize,
        dim: usize,
        horizon: usize,
        d_x: f64,
        seed: u64,
        epsilon: f64,
        lambda_pen: f64,
        alpha: f64,
        norm_cap: f64,
    ) -> PyResult<Self> {
        let params = PolicyParams {
            epsilon,
            lambda_sequential: lambda_pen,
            lambda_clustered: lambda_pen,
            alpha,
            ..PolicyParams::default()
        };
        let kind = params.kind(kind, layers).map_err(value_err)?;
        let ctx = PolicyContext {
            arms,
            layers,
            dim,
            horizon,
            d_x,
            norm_cap,
            opts: OptimizerOpts {
                grad_tol: 1e-6,
                max_iter: 200,
                norm_cap,
                init_step: 1.0,
            },
            cadence: RefitCadence::default(),
        };
        let inner = funnel_core::Policy::new(kind, ctx, seed).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn select(&mut self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.select(&x).map_err(value_err)
    }

    fn update(&mut self, arm: usize, x: Vec<f64>, rewards: Vec<u8>) -> PyResult<()> {
        let r = RewardVector::from_bits(&rewards).map_err(value_err)?;
        self.inner.update(arm, &x, &r).map_err(runtime_err)
    }

    /// Predicted probability of completing the funnel with `arm` at `x`.
    fn predict(&self, arm: usize, x: Vec<f64>) -> PyResult<f64> {
        if arm >= self.inner.context().arms {
            return Err(value_err(format!("arm {arm} out of range")));
        }
        Ok(self.inner.predict(arm, &x))
    }

    /// Per-arm, per-layer label counts.
    fn counts(&self) -> Vec<Vec<usize>> {
        self.inner.counts()
    }
}

#[pymodule]
pub fn funnel_mtl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sequential_bound, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_j0, m)?)?;
    m.add_function(wrap_pyfunction!(clustered_bound, m)?)?;
    m.add_function(wrap_pyfunction!(funnel_bonus, m)?)?;
    m.add_function(wrap_pyfunction!(mtl_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(email_log, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<PyPolicy>()?;
    Ok(())
}
