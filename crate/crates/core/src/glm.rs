//! Generalized linear model primitives for a single funnel.
//!
//! Every layer `j` is a logistic GLM `P(z_j = 1 | x) = μ(xᵀθ_j)`. A layer is
//! trained with the squared loss `Σᵢ (zᵢ − μ(xᵢᵀθ))²` over the contexts that
//! reached it, i.e. those whose previous-layer reward was 1.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::RewardVector;
use crate::linalg::{clamp_to_ball, dot, norm};
use crate::optim::{proximal_descent, FitStatus, OptimError, OptimizerOpts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("mean-function domain bound must be finite and non-negative, got {0}")]
    InvalidDomainBound(f64),
    #[error("mean-function derivative vanishes on the domain (bound {0}); c_mu must be positive")]
    DegenerateDerivative(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer index {layer} out of range 1..={layers}")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("non-finite loss after {iterations} iterations")]
    NonFinite {
        last_finite: LayerParams,
        iterations: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeanKind {
    Logistic,
}

/// Link function together with the range of linear predictors it is used on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFunction {
    pub kind: MeanKind,
    /// Largest `|xᵀθ|` the model can produce.
    pub domain_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuBounds {
    pub c_mu: f64,
    pub kappa: f64,
}

impl MeanFunction {
    pub fn logistic(domain_bound: f64) -> Self {
        Self {
            kind: MeanKind::Logistic,
            domain_bound,
        }
    }

    /// Domain bound implied by `‖x‖ ≤ d_x` and `‖θ‖ ≤ norm_cap`.
    pub fn from_norms(d_x: f64, norm_cap: f64) -> Self {
        Self::logistic(d_x * norm_cap)
    }

    #[inline]
    pub fn mu(&self, t: f64) -> f64 {
        match self.kind {
            MeanKind::Logistic => {
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    #[inline]
    pub fn mu_prime(&self, t: f64) -> f64 {
        match self.kind {
            MeanKind::Logistic => {
                // e^{−|t|} / (1 + e^{−|t|})² is exactly even in t
                let e = (-t.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
        }
    }

    /// `(c_mu, kappa)`: the minimum and maximum of `μ′` over `|t| ≤ domain_bound`.
    pub fn bounds(&self) -> Result<MuBounds, GlmError> {
        let b = self.domain_bound;
        if !b.is_finite() || b < 0.0 {
            return Err(GlmError::InvalidDomainBound(b));
        }
        match self.kind {
            MeanKind::Logistic => {
                // μ′ is even and decreasing in |t|
                let c_mu = self.mu_prime(b);
                if c_mu <= 0.0 {
                    return Err(GlmError::DegenerateDerivative(b));
                }
                Ok(MuBounds {
                    c_mu,
                    kappa: self.mu_prime(0.0),
                })
            }
        }
    }
}

/// Parameter vector of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerParams(pub Vec<f64>);

impl LayerParams {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for LayerParams {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for LayerParams {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for LayerParams {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Parameters of all `J` layers of a funnel, shallowest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaStack {
    pub layers: Vec<LayerParams>,
}

impl ThetaStack {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self, GlmError> {
        let d = layers.first().map(|l| l.dim()).unwrap_or(0);
        if layers.is_empty() {
            return Err(GlmError::LayerOutOfRange { layer: 0, layers: 0 });
        }
        if let Some(bad) = layers.iter().find(|l| l.dim() != d) {
            return Err(GlmError::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        Ok(Self { layers })
    }

    pub fn zeros(j: usize, d: usize) -> Self {
        Self {
            layers: vec![LayerParams::zeros(d); j],
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].dim()
    }

    pub fn max_norm(&self) -> f64 {
        self.layers.iter().map(|l| norm(l)).fold(0.0, f64::max)
    }
}

/// Training samples of one layer: row-major contexts and their labels.
///
/// Labels are `z ∈ {0, 1}` for funnel layers; fractional labels in `[0, 1]`
/// are accepted so that averaged-reward baselines can reuse the same loss.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerData {
    pub dim: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl LayerData {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            xs: Vec::new(),
            ys: Vec::new(),
        }
    }

    pub fn push(&mut self, x: &[f64], y: f64) {
        debug_assert_eq!(x.len(), self.dim);
        self.xs.extend_from_slice(x);
        self.ys.push(y);
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.xs.chunks_exact(self.dim.max(1)).zip(self.ys.iter().copied())
    }

    /// Sample second-moment matrix `(1/n) Σ x xᵀ`, row-major.
    pub fn second_moment(&self) -> Vec<f64> {
        let d = self.dim;
        let mut m = vec![0.0; d * d];
        let n = self.len();
        if n == 0 {
            return m;
        }
        for (x, _) in self.rows() {
            for i in 0..d {
                for k in i..d {
                    m[i * d + k] += x[i] * x[k];
                }
            }
        }
        let inv = 1.0 / n as f64;
        for i in 0..d {
            for k in i..d {
                let v = m[i * d + k] * inv;
                m[i * d + k] = v;
                m[k * d + i] = v;
            }
        }
        m
    }
}

/// Observations of one funnel split per layer.
///
/// Layer `j` holds the contexts whose reward `r_{j−1}` was 1 (every context
/// for layer 1), labeled with `z_j = r_j / r_{j−1} = r_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredDataset {
    pub layers: Vec<LayerData>,
}

impl LayeredDataset {
    pub fn new(j: usize, d: usize) -> Self {
        Self {
            layers: (0..j).map(|_| LayerData::new(d)).collect(),
        }
    }

    pub fn from_records<'a>(
        j: usize,
        d: usize,
        records: impl IntoIterator<Item = (&'a [f64], &'a RewardVector)>,
    ) -> Self {
        let mut ds = Self::new(j, d);
        for (x, r) in records {
            ds.push(x, r);
        }
        ds
    }

    /// Applies the funnel data rule to one interaction.
    pub fn push(&mut self, x: &[f64], rewards: &RewardVector) {
        debug_assert_eq!(rewards.len(), self.layers.len());
        for (j, layer) in self.layers.iter_mut().enumerate() {
            if j > 0 && !rewards.get(j - 1) {
                break;
            }
            layer.push(x, if rewards.get(j) { 1.0 } else { 0.0 });
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.layers.first().map(|l| l.dim).unwrap_or(0)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.len()).collect()
    }

    pub fn layer(&self, j: usize) -> &LayerData {
        &self.layers[j - 1]
    }
}

/// Squared loss `Σᵢ (zᵢ − μ(xᵢᵀθ))²` of one layer; zero for an empty layer.
pub fn layer_loss(f: &MeanFunction, theta: &[f64], data: &LayerData) -> f64 {
    data.rows()
        .map(|(x, z)| {
            let r = z - f.mu(dot(x, theta));
            r * r
        })
        .sum()
}

/// Gradient `Σᵢ −2 (zᵢ − μ(xᵢᵀθ)) μ′(xᵢᵀθ) xᵢ` of [`layer_loss`].
pub fn layer_loss_gradient(f: &MeanFunction, theta: &[f64], data: &LayerData) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    loss_and_gradient(f, theta, data, &mut g);
    g
}

/// Loss and gradient in one pass; the gradient is written into `grad`.
pub fn loss_and_gradient(f: &MeanFunction, theta: &[f64], data: &LayerData, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for (x, z) in data.rows() {
        let t = dot(x, theta);
        let m = f.mu(t);
        let r = z - m;
        loss += r * r;
        let w = -2.0 * r * m * (1.0 - m);
        for (g, xi) in grad.iter_mut().zip(x) {
            *g += w * xi;
        }
    }
    loss
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: LayerParams,
    pub loss: f64,
    pub iterations: usize,
    pub status: FitStatus,
}

impl From<OptimError> for GlmError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::NonFinite {
                last_finite,
                iterations,
            } => GlmError::NonFinite {
                last_finite: LayerParams(last_finite),
                iterations,
            },
        }
    }
}

fn check_dims(init: &LayerParams, data: &LayerData) -> Result<(), GlmError> {
    if !data.is_empty() && init.dim() != data.dim {
        return Err(GlmError::DimensionMismatch {
            expected: data.dim,
            got: init.dim(),
        });
    }
    Ok(())
}

/// The loss is a sum over rows, so the stopping tolerance is scaled by `n`
/// to act on the mean per-row gradient.
fn per_sample(opts: &OptimizerOpts, data: &LayerData) -> OptimizerOpts {
    OptimizerOpts {
        grad_tol: opts.grad_tol * data.len().max(1) as f64,
        ..*opts
    }
}

/// Minimizes the layer loss over `‖θ‖ ≤ opts.norm_cap`.
///
/// An empty layer has a constant loss and returns `init` unchanged.
pub fn fit_unconstrained(
    f: &MeanFunction,
    data: &LayerData,
    init: &LayerParams,
    opts: &OptimizerOpts,
) -> Result<FitResult, GlmError> {
    check_dims(init, data)?;
    if data.is_empty() {
        return Ok(FitResult {
            theta: init.clone(),
            loss: 0.0,
            iterations: 0,
            status: FitStatus::Converged,
        });
    }
    let origin = vec![0.0; init.dim()];
    let cap = opts.norm_cap;
    let sol = proximal_descent(
        init,
        |th, g| loss_and_gradient(f, th, data, g),
        |v, _| clamp_to_ball(v, &origin, cap),
        |_| 0.0,
        &per_sample(opts, data),
    )?;
    Ok(FitResult {
        theta: LayerParams(sol.theta),
        loss: sol.objective,
        iterations: sol.iterations,
        status: sol.status,
    })
}

/// Minimizes `layer_loss(θ) + weight · ‖θ − center‖₂` (non-squared norm).
///
/// The penalty's proximal map shrinks `θ − center` radially toward zero;
/// the norm cap is applied after the shrink. With no data the minimizer is
/// `center` itself whenever `weight > 0`.
pub fn fit_penalized(
    f: &MeanFunction,
    data: &LayerData,
    init: &LayerParams,
    center: &[f64],
    weight: f64,
    opts: &OptimizerOpts,
) -> Result<FitResult, GlmError> {
    check_dims(init, data)?;
    if weight <= 0.0 {
        return fit_unconstrained(f, data, init, opts);
    }
    if data.is_empty() {
        return Ok(FitResult {
            theta: LayerParams(clamp_to_ball(center, &vec![0.0; center.len()], opts.norm_cap)),
            loss: 0.0,
            iterations: 0,
            status: FitStatus::Converged,
        });
    }
    let origin = vec![0.0; init.dim()];
    let cap = opts.norm_cap;
    let prox = |v: &[f64], step: f64| {
        let diff: Vec<f64> = v.iter().zip(center).map(|(a, c)| a - c).collect();
        let r = norm(&diff);
        let shrink = if r > 0.0 {
            (1.0 - step * weight / r).max(0.0)
        } else {
            0.0
        };
        let u: Vec<f64> = center.iter().zip(&diff).map(|(c, w)| c + shrink * w).collect();
        clamp_to_ball(&u, &origin, cap)
    };
    let sol = proximal_descent(
        init,
        |th, g| loss_and_gradient(f, th, data, g),
        prox,
        |th| {
            let diff: Vec<f64> = th.iter().zip(center).map(|(a, c)| a - c).collect();
            weight * norm(&diff)
        },
        &per_sample(opts, data),
    )?;
    Ok(FitResult {
        theta: LayerParams(sol.theta),
        loss: sol.objective,
        iterations: sol.iterations,
        status: sol.status,
    })
}

/// `P_j(x, θ) = Π_{i ≤ j} μ(xᵀθ_i)` for 1-based `j`.
pub fn predict_funnel(f: &MeanFunction, stack: &ThetaStack, x: &[f64], j: usize) -> Result<f64, GlmError> {
    if j == 0 || j > stack.len() {
        return Err(GlmError::LayerOutOfRange {
            layer: j,
            layers: stack.len(),
        });
    }
    Ok(stack.layers[..j].iter().map(|th| f.mu(dot(x, th))).product())
}

/// Per-layer conversion probabilities `μ(xᵀθ_j)` for all layers.
pub fn layer_means(f: &MeanFunction, stack: &ThetaStack, x: &[f64]) -> Vec<f64> {
    stack.layers.iter().map(|th| f.mu(dot(x, th))).collect()
}
