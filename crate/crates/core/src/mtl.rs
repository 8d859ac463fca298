//! Shared-structure multi-task estimation for one funnel.
//!
//! The estimator runs in two stages:
//!
//! 1. Each layer is fit on its own data, projected onto the layer's marginal
//!    hypothesis set, and wrapped in a confidence ellipsoid
//!    `{θ : ‖θ − θ̄_j‖_M ≤ ρ_j}` with `M = (1/n_j) Σ x xᵀ` and
//!    `ρ_j = (c_{δ/J} / c_μ) √(d / n_j)`.
//! 2. Ellipsoids are relaxed to Euclidean balls through the design matrix's
//!    smallest eigenvalue, propagated across layers along the hypothesis
//!    class (chain slack for sequential dependency, distance to a shared
//!    center for clustered dependency) and intersected. Each layer's
//!    unconstrained fit is projected onto that intersection with Dykstra's
//!    alternating projections.
//!
//! The module also evaluates the closed-form prediction-error bounds for the
//! sequential and clustered hypothesis classes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glm::{fit_unconstrained, GlmError, LayerData, LayerParams, LayeredDataset, MeanFunction, ThetaStack};
use crate::linalg::{clamp_to_ball, dist, min_eigenvalue, norm};
use crate::optim::{FitStatus, OptimizerOpts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MtlError {
    #[error("constraint intersection is empty")]
    EmptyIntersection,
    #[error("projection is only defined for balls and intersections of balls")]
    NotProjectable,
    #[error("layer {layer} out of range 1..={layers}")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("hypothesis class needs finite non-negative slack values q_j with a positive sum, got {0:?}")]
    InvalidSlack(Vec<f64>),
    #[error("hypothesis class has {q} layers but the data has {data}")]
    LayerMismatch { q: usize, data: usize },
    #[error(transparent)]
    Glm(#[from] GlmError),
}

/// Displacement and feasibility tolerance, and sweep cap, of Dykstra's
/// algorithm. Points within the tolerance of every ball are fixed points.
pub const DYKSTRA_TOL: f64 = 1e-8;
pub const DYKSTRA_MAX_SWEEPS: usize = 10_000;
/// Feasibility slack used to declare an intersection empty after Dykstra.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn origin(dim: usize, radius: f64) -> Self {
        Self::new(vec![0.0; dim], radius)
    }

    pub fn contains(&self, theta: &[f64], tol: f64) -> bool {
        dist(theta, &self.center) <= self.radius + tol
    }

    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        clamp_to_ball(theta, &self.center, self.radius)
    }
}

/// Hypothesis class over the joint parameters, or a per-layer set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConstraintSet {
    /// `‖θ_1‖ ≤ q_1` and `‖θ_j − θ_{j−1}‖ ≤ q_j` for `j > 1`.
    SequentialChain {
        q: Vec<f64>,
    },
    /// Some unknown `θ_0` with `‖θ_j − θ_0‖ ≤ q_j` for all `j`.
    ClusteredCenter {
        q: Vec<f64>,
    },
    Ball(Ball),
    Intersection(Vec<ConstraintSet>),
}

impl ConstraintSet {
    pub fn slack(&self) -> Option<&[f64]> {
        match self {
            Self::SequentialChain { q } | Self::ClusteredCenter { q } => Some(q),
            _ => None,
        }
    }

    fn check_slack(q: &[f64]) -> Result<(), MtlError> {
        // Zero slack (identical layers) is allowed; the total sets the norm scale.
        if q.is_empty() || q.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || !(q.iter().sum::<f64>() > 0.0) {
            return Err(MtlError::InvalidSlack(q.to_vec()));
        }
        Ok(())
    }

    /// Marginal set `Θ[j]` of layer `j` (1-based).
    ///
    /// For the sequential chain this is `Ball(0, q_1 + … + q_j)`; the
    /// clustered class does not bound a single layer, so the norm-cap ball is
    /// returned as a sentinel. Per-layer sets are their own marginal.
    pub fn marginal_set(&self, j: usize, dim: usize, norm_cap: f64) -> Result<ConstraintSet, MtlError> {
        match self {
            Self::SequentialChain { q } => {
                Self::check_slack(q)?;
                if j == 0 || j > q.len() {
                    return Err(MtlError::LayerOutOfRange {
                        layer: j,
                        layers: q.len(),
                    });
                }
                Ok(Self::Ball(Ball::origin(dim, q[..j].iter().sum())))
            }
            Self::ClusteredCenter { q } => {
                Self::check_slack(q)?;
                if j == 0 || j > q.len() {
                    return Err(MtlError::LayerOutOfRange {
                        layer: j,
                        layers: q.len(),
                    });
                }
                Ok(Self::Ball(Ball::origin(dim, norm_cap)))
            }
            other => Ok(other.clone()),
        }
    }

    /// Flattens a ball or nested intersection of balls.
    pub fn balls(&self) -> Result<Vec<&Ball>, MtlError> {
        match self {
            Self::Ball(b) => Ok(vec![b]),
            Self::Intersection(parts) => {
                let mut out = Vec::new();
                for p in parts {
                    out.extend(p.balls()?);
                }
                Ok(out)
            }
            _ => Err(MtlError::NotProjectable),
        }
    }

    /// Euclidean projection. Balls use the radial clamp; intersections of
    /// balls use Dykstra's algorithm.
    pub fn project(&self, theta: &[f64]) -> Result<Vec<f64>, MtlError> {
        let balls: Vec<Ball> = self.balls()?.into_iter().cloned().collect();
        project_onto_balls(&balls, theta)
    }

    pub fn contains(&self, theta: &[f64], tol: f64) -> Result<bool, MtlError> {
        Ok(self.balls()?.iter().all(|b| b.contains(theta, tol)))
    }

    /// Smallest radius among the constituent balls, an upper bound on the
    /// set's circumradius.
    pub fn radius(&self) -> Result<f64, MtlError> {
        Ok(self.balls()?.iter().map(|b| b.radius).fold(f64::INFINITY, f64::min))
    }
}

/// Projects onto `∩ balls` with Dykstra's alternating projections.
///
/// Points inside every ball up to [`DYKSTRA_TOL`] are returned unchanged,
/// which makes the map idempotent. Emptiness is
/// reported when two balls are farther apart than their radii allow or when
/// the final iterate still violates some ball by more than
/// [`FEASIBILITY_TOL`].
pub fn project_onto_balls(balls: &[Ball], theta: &[f64]) -> Result<Vec<f64>, MtlError> {
    if balls.is_empty() {
        return Ok(theta.to_vec());
    }
    for (i, a) in balls.iter().enumerate() {
        for b in &balls[i + 1..] {
            if dist(&a.center, &b.center) > a.radius + b.radius {
                return Err(MtlError::EmptyIntersection);
            }
        }
    }
    let scale = norm(theta).max(1.0);
    if balls.iter().all(|b| b.contains(theta, DYKSTRA_TOL * scale)) {
        return Ok(theta.to_vec());
    }
    if balls.len() == 1 {
        return Ok(balls[0].project(theta));
    }
    let d = theta.len();
    let mut x = theta.to_vec();
    let mut increments = vec![vec![0.0; d]; balls.len()];
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        let prev = x.clone();
        for (ball, p) in balls.iter().zip(increments.iter_mut()) {
            let shifted: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a + b).collect();
            let y = ball.project(&shifted);
            for k in 0..d {
                p[k] = shifted[k] - y[k];
            }
            x = y;
        }
        let violation = balls
            .iter()
            .map(|b| dist(&x, &b.center) - b.radius)
            .fold(f64::NEG_INFINITY, f64::max);
        // A small step alone is not enough: near tangencies the iterates
        // crawl while still outside some ball.
        if dist(&x, &prev) <= DYKSTRA_TOL && violation <= DYKSTRA_TOL {
            break;
        }
    }
    let violation = balls
        .iter()
        .map(|b| dist(&x, &b.center) - b.radius)
        .fold(f64::NEG_INFINITY, f64::max);
    if violation > FEASIBILITY_TOL {
        return Err(MtlError::EmptyIntersection);
    }
    Ok(x)
}

/// `c_δ = 80 d_x √(2 ln(8/δ))`.
pub fn c_delta(d_x: f64, delta: f64) -> f64 {
    80.0 * d_x * (2.0 * (8.0 / delta).ln()).sqrt()
}

/// Confidence set `{θ : ‖θ − center‖_M ≤ radius}` for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEllipsoid {
    pub center: LayerParams,
    /// Row-major `(1/n) Σ x xᵀ`.
    pub matrix: Vec<f64>,
    /// `+∞` marks the uninformative set of a layer without data.
    pub radius: f64,
    pub n: usize,
}

impl ConfidenceEllipsoid {
    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn is_informative(&self) -> bool {
        self.radius.is_finite()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        min_eigenvalue(&self.matrix, self.dim())
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        if !self.is_informative() {
            return true;
        }
        let diff: Vec<f64> = theta.iter().zip(self.center.iter()).map(|(a, b)| a - b).collect();
        crate::linalg::quad_form(&self.matrix, &diff).max(0.0).sqrt() <= self.radius
    }

    /// Enclosing ball `Ball(center, radius / √λ_min)`.
    ///
    /// `‖v‖₂ ≤ ‖v‖_M / √λ_min(M)` for positive definite `M`, so the ball
    /// contains the ellipsoid. Singular or uninformative ellipsoids relax to
    /// `Ball(0, norm_cap)`.
    pub fn ball_relax(&self, norm_cap: f64) -> Ball {
        let lambda = self.min_eigenvalue();
        if !self.is_informative() || lambda <= SINGULAR_EIGENVALUE {
            return Ball::origin(self.dim(), norm_cap);
        }
        Ball::new(self.center.0.clone(), self.radius / lambda.sqrt())
    }

    pub fn relaxed_radius(&self) -> f64 {
        let lambda = self.min_eigenvalue();
        if !self.is_informative() || lambda <= SINGULAR_EIGENVALUE {
            f64::INFINITY
        } else {
            self.radius / lambda.sqrt()
        }
    }
}

const SINGULAR_EIGENVALUE: f64 = 1e-12;

/// Builds the confidence ellipsoid of one layer with radius
/// `radius_coef · √(d / n)`; `radius_coef` is `c_{δ/J} / c_μ` in the default
/// configuration.
pub fn confidence_ellipsoid(data: &LayerData, theta_bar: &LayerParams, radius_coef: f64) -> ConfidenceEllipsoid {
    let n = data.len();
    let d = theta_bar.dim();
    let radius = if n == 0 {
        f64::INFINITY
    } else {
        radius_coef * (d as f64 / n as f64).sqrt()
    };
    ConfidenceEllipsoid {
        center: theta_bar.clone(),
        matrix: if n == 0 { vec![0.0; d * d] } else { data.second_moment() },
        radius,
        n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtlConfig {
    pub delta: f64,
    /// Multiplier on `c_δ`; the theoretical constant is very loose.
    pub c_delta_scale: f64,
    /// Context norm bound `d_x`.
    pub d_x: f64,
    pub norm_cap: f64,
    /// Replaces `c_delta_scale · c_{δ/J} / c_μ` when set.
    pub radius_coef: Option<f64>,
    pub opts: OptimizerOpts,
}

impl MtlConfig {
    /// Default configuration for a hypothesis class with slack `q`:
    /// `norm_cap = 10 Σ q_j`.
    pub fn for_slack(q: &[f64], d_x: f64, delta: f64) -> Self {
        let norm_cap = 10.0 * q.iter().sum::<f64>();
        Self {
            delta,
            c_delta_scale: 1.0,
            d_x,
            norm_cap,
            radius_coef: None,
            opts: OptimizerOpts {
                norm_cap,
                ..Default::default()
            },
        }
    }

    /// `c_delta_scale · c_{δ/J} / c_μ`, or the override.
    pub fn radius_coef(&self, f: &MeanFunction, layers: usize) -> Result<f64, MtlError> {
        if let Some(c) = self.radius_coef {
            return Ok(c);
        }
        let c_mu = f.bounds()?.c_mu;
        Ok(self.c_delta_scale * c_delta(self.d_x, self.delta / layers as f64) / c_mu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub n: usize,
    pub min_eigenvalue: f64,
    /// Radius of the relaxed own ellipsoid (`+∞` when uninformative).
    pub own_radius: f64,
    pub marginal_radius: f64,
    /// Smallest ball radius in the relaxed `Θ₁[j]`.
    pub set_radius: f64,
    /// Layers whose confidence sets were propagated into this layer.
    pub anchors: Vec<usize>,
    /// `Θ₁[j]` was empty and the stage-1 estimate was kept.
    pub fallback: bool,
    pub fit_status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlEstimate {
    /// Unconstrained per-layer minimizers.
    pub theta_tilde: ThetaStack,
    /// Stage 1: minimizers projected onto the marginal hypothesis sets.
    pub theta_bar: ThetaStack,
    pub ellipsoids: Vec<ConfidenceEllipsoid>,
    /// Relaxed `Θ₁[j]` per layer, as intersections of balls.
    pub sets: Vec<ConstraintSet>,
    /// Stage 2: minimizers projected onto `Θ₁[j]`.
    pub theta_hat: ThetaStack,
    pub diagnostics: Vec<LayerDiagnostics>,
}

impl MtlEstimate {
    /// Whether every `truth` layer lies in its relaxed `Θ₁[j]`.
    pub fn covers(&self, truth: &ThetaStack, tol: f64) -> bool {
        self.sets
            .iter()
            .zip(&truth.layers)
            .all(|(s, th)| s.contains(th, tol).unwrap_or(false))
    }
}

/// Runs the two-stage estimator on one funnel's data.
///
/// `init` warm-starts the per-layer fits (zeros otherwise). When a layer's
/// `Θ₁[j]` turns out empty the stage-1 estimate is kept and the layer is
/// flagged in its diagnostics.
pub fn mtl_estimate(
    data: &LayeredDataset,
    theta0: &ConstraintSet,
    f: &MeanFunction,
    cfg: &MtlConfig,
    init: Option<&ThetaStack>,
) -> Result<MtlEstimate, MtlError> {
    let q = match theta0 {
        ConstraintSet::SequentialChain { q } | ConstraintSet::ClusteredCenter { q } => q,
        _ => return Err(MtlError::NotProjectable),
    };
    ConstraintSet::check_slack(q)?;
    let jn = data.num_layers();
    if q.len() != jn {
        return Err(MtlError::LayerMismatch { q: q.len(), data: jn });
    }
    let d = data.dim();
    let coef = cfg.radius_coef(f, jn)?;
    let opts = OptimizerOpts {
        norm_cap: cfg.norm_cap,
        ..cfg.opts
    };

    let mut tilde = Vec::with_capacity(jn);
    let mut bar = Vec::with_capacity(jn);
    let mut ellipsoids = Vec::with_capacity(jn);
    let mut statuses = Vec::with_capacity(jn);
    let mut marginals = Vec::with_capacity(jn);
    for j in 1..=jn {
        let start = init
            .map(|s| s.layers[j - 1].clone())
            .unwrap_or_else(|| LayerParams::zeros(d));
        let fit = fit_unconstrained(f, data.layer(j), &start, &opts)?;
        let marginal = theta0.marginal_set(j, d, cfg.norm_cap)?;
        let theta_bar = LayerParams(marginal.project(&fit.theta)?);
        ellipsoids.push(confidence_ellipsoid(data.layer(j), &theta_bar, coef));
        tilde.push(fit.theta);
        bar.push(theta_bar);
        statuses.push(fit.status);
        marginals.push(match marginal {
            ConstraintSet::Ball(b) => b,
            _ => unreachable!("marginal of a chain or cluster is a ball"),
        });
    }
    let own: Vec<f64> = ellipsoids.iter().map(|e| e.relaxed_radius()).collect();

    let mut hat = Vec::with_capacity(jn);
    let mut sets = Vec::with_capacity(jn);
    let mut diagnostics = Vec::with_capacity(jn);
    for j in 1..=jn {
        let idx = j - 1;
        let mut balls = vec![marginals[idx].clone()];
        if own[idx].is_finite() {
            balls.push(Ball::new(bar[idx].0.clone(), own[idx]));
        }
        let mut anchors = Vec::new();
        match theta0 {
            ConstraintSet::SequentialChain { .. } => {
                for j0 in 1..j {
                    if own[j0 - 1].is_finite() {
                        let slack: f64 = q[j0..j].iter().sum();
                        balls.push(Ball::new(bar[j0 - 1].0.clone(), own[j0 - 1] + slack));
                        anchors.push(j0);
                    }
                }
            }
            ConstraintSet::ClusteredCenter { .. } => {
                let best = (1..=jn)
                    .filter(|&j0| j0 != j && own[j0 - 1].is_finite())
                    .min_by(|&a, &b| (own[a - 1] + q[a - 1]).total_cmp(&(own[b - 1] + q[b - 1])));
                if let Some(j0) = best {
                    balls.push(Ball::new(bar[j0 - 1].0.clone(), own[j0 - 1] + q[j0 - 1] + q[idx]));
                    anchors.push(j0);
                }
            }
            _ => unreachable!(),
        }
        let set = ConstraintSet::Intersection(balls.iter().cloned().map(ConstraintSet::Ball).collect());
        let set_radius = set.radius()?;
        // θ̄_j already is the projection onto Θ₀[j] ⊇ Θ₁[j]
        let (theta_hat, fallback) = if balls.iter().all(|b| b.contains(&bar[idx], 0.0)) {
            (bar[idx].clone(), false)
        } else {
            match project_onto_balls(&balls, &tilde[idx]) {
                Ok(p) => (LayerParams(p), false),
                Err(MtlError::EmptyIntersection) => {
                    log::warn!("empty confidence intersection at layer {j}; keeping stage-1 estimate");
                    (bar[idx].clone(), true)
                }
                Err(e) => return Err(e),
            }
        };
        hat.push(theta_hat);
        diagnostics.push(LayerDiagnostics {
            n: ellipsoids[idx].n,
            min_eigenvalue: ellipsoids[idx].min_eigenvalue(),
            own_radius: own[idx],
            marginal_radius: marginals[idx].radius,
            set_radius,
            anchors,
            fallback,
            fit_status: statuses[idx],
        });
        sets.push(set);
    }

    Ok(MtlEstimate {
        theta_tilde: ThetaStack { layers: tilde },
        theta_bar: ThetaStack { layers: bar },
        ellipsoids,
        sets,
        theta_hat: ThetaStack { layers: hat },
        diagnostics,
    })
}

/// Inputs of the closed-form prediction-error bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub q: Vec<f64>,
    /// Per-layer sample counts (real-valued so schedules like `0.2^{j−1} n`
    /// need no rounding).
    pub n: Vec<f64>,
    pub d: usize,
    pub d_x: f64,
    pub c_mu: f64,
    pub kappa: f64,
    /// Eigenvalue floor of the per-layer design matrices.
    pub lambda: f64,
    pub delta: f64,
    pub c_delta_scale: f64,
    /// Replaces `c_delta_scale · c_{δ/J} / (c_μ λ)` when set.
    pub coef_override: Option<f64>,
}

impl BoundInputs {
    pub fn layers(&self) -> usize {
        self.q.len()
    }

    /// `c_{δ/J} / (c_μ λ)`.
    pub fn coef(&self) -> f64 {
        self.coef_override.unwrap_or_else(|| {
            self.c_delta_scale * c_delta(self.d_x, self.delta / self.layers() as f64) / (self.c_mu * self.lambda)
        })
    }

    /// Parametric error radius `coef · √(d / n_j)` of 1-based layer `j`.
    pub fn parametric(&self, j: usize) -> f64 {
        self.coef() * (self.d as f64 / self.n[j - 1]).sqrt()
    }

    /// `n_{j+1} ≤ n_j / 4` and non-increasing `q`.
    pub fn preconditions_met(&self) -> bool {
        self.n.windows(2).all(|w| w[1] <= w[0] / 4.0) && self.q.windows(2).all(|w| w[1] <= w[0])
    }

    fn check_layer(&self, j: usize) -> Result<(), MtlError> {
        if j == 0 || j > self.layers() || self.n.len() != self.layers() {
            return Err(MtlError::LayerOutOfRange {
                layer: j,
                layers: self.layers(),
            });
        }
        Ok(())
    }
}

/// Sequential-dependency bound on layer `j` when anchoring at `j0`
/// (`j0 = J + 1` means no transfer).
pub fn theorem1_bound(b: &BoundInputs, x_norm: f64, j: usize, j0: usize) -> Result<f64, MtlError> {
    b.check_layer(j)?;
    if j0 == 0 || j0 > b.layers() + 1 {
        return Err(MtlError::LayerOutOfRange {
            layer: j0,
            layers: b.layers() + 1,
        });
    }
    let inner = if j < j0 {
        b.parametric(j)
    } else {
        b.parametric(j0) + b.q[j0..j].iter().sum::<f64>()
    };
    Ok(b.kappa * x_norm * inner)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct J0Choice {
    /// Anchor layer minimizing the sequential bound at every layer.
    pub j0: usize,
    /// Smallest `j` with `coef · √d · (1/√n_j − 1/√n_{j−1}) ≥ q_j`
    /// (`n_0 = ∞`), or `J + 1` when no layer satisfies it.
    pub condition_layer: usize,
    pub preconditions_met: bool,
}

/// Threshold anchor of the sequential bound.
///
/// The condition at layer `i` states that transferring from `i − 1` beats
/// layer `i`'s own parametric radius. Under the preconditions it is monotone
/// in `i`, so the best anchor is the last layer before the condition first
/// holds: `j0 = max(condition_layer − 1, 1)`, or `J + 1` when it never
/// holds.
pub fn threshold_j0(b: &BoundInputs) -> J0Choice {
    let c = b.coef() * (b.d as f64).sqrt();
    let jn = b.layers();
    let condition_layer = (1..=jn)
        .find(|&j| {
            let prev = if j == 1 { 0.0 } else { 1.0 / b.n[j - 2].sqrt() };
            c * (1.0 / b.n[j - 1].sqrt() - prev) >= b.q[j - 1]
        })
        .unwrap_or(jn + 1);
    let j0 = if condition_layer > jn {
        jn + 1
    } else {
        condition_layer.saturating_sub(1).max(1)
    };
    J0Choice {
        j0,
        condition_layer,
        preconditions_met: b.preconditions_met(),
    }
}

/// Anchor layer of the clustered bound: `argmin_j coef √(d/n_j) + q_j`
/// (lowest index on ties).
pub fn clustered_anchor(b: &BoundInputs) -> usize {
    (1..=b.layers())
        .min_by(|&x, &y| (b.parametric(x) + b.q[x - 1]).total_cmp(&(b.parametric(y) + b.q[y - 1])))
        .unwrap_or(1)
}

/// Clustered-dependency bound on layer `j`:
/// `κ ‖x‖ min{coef √(d/n_{j0}) + q_{j0} + q_j, coef √(d/n_j)}`.
pub fn theorem2_bound(b: &BoundInputs, x_norm: f64, j: usize) -> Result<f64, MtlError> {
    b.check_layer(j)?;
    let j0 = clustered_anchor(b);
    let anchor = b.parametric(j0) + b.q[j0 - 1] + b.q[j - 1];
    let own = b.parametric(j);
    Ok(b.kappa * x_norm * if j0 == j { own } else { anchor.min(own) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Funnel, RewardVector};
    use crate::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball(c: &[f64], r: f64) -> ConstraintSet {
        ConstraintSet::Ball(Ball::new(c.to_vec(), r))
    }

    #[test]
    fn marginal_examples() {
        let seq = ConstraintSet::SequentialChain { q: vec![1.0, 0.5] };
        assert_eq!(seq.marginal_set(2, 2, 9.0).unwrap(), ball(&[0.0, 0.0], 1.5));
        assert_eq!(seq.marginal_set(1, 2, 9.0).unwrap(), ball(&[0.0, 0.0], 1.0));
        assert!(seq.marginal_set(3, 2, 9.0).is_err());
        let clu = ConstraintSet::ClusteredCenter { q: vec![1.0, 0.5] };
        assert_eq!(clu.marginal_set(1, 2, 9.0).unwrap(), ball(&[0.0, 0.0], 9.0));
        let b = ball(&[1.0, 2.0], 0.3);
        assert_eq!(b.marginal_set(1, 2, 9.0).unwrap(), b);
        let flat = ConstraintSet::SequentialChain { q: vec![1.0, 0.0] };
        assert_eq!(flat.marginal_set(2, 2, 9.0).unwrap(), ball(&[0.0, 0.0], 1.0));
        assert!(ConstraintSet::SequentialChain { q: vec![0.0, 0.0] }
            .marginal_set(1, 2, 9.0)
            .is_err());
        assert!(ConstraintSet::SequentialChain { q: vec![1.0, -0.1] }
            .marginal_set(1, 2, 9.0)
            .is_err());
    }

    #[test]
    fn sequential_marginal_contains_grid_of_joint_set() {
        let q = [0.7, 0.4, 0.25];
        let seq = ConstraintSet::SequentialChain { q: q.to_vec() };
        let m = seq.marginal_set(3, 2, 100.0).unwrap();
        // grid points of each disc
        let disc = |r: f64| -> Vec<[f64; 2]> {
            let k = 6;
            let mut pts = Vec::new();
            for a in -k..=k {
                for b in -k..=k {
                    let p = [r * a as f64 / k as f64, r * b as f64 / k as f64];
                    if norm(&p) <= r {
                        pts.push(p);
                    }
                }
            }
            pts
        };
        let (d1, d2, d3) = (disc(q[0]), disc(q[1]), disc(q[2]));
        let mut checked = 0;
        for a in &d1 {
            for b in &d2 {
                for c in &d3 {
                    let th3 = [a[0] + b[0] + c[0], a[1] + b[1] + c[1]];
                    assert!(m.contains(&th3, 1e-12).unwrap());
                    checked += 1;
                }
            }
        }
        assert!(checked > 100_000);
    }

    #[test]
    fn projection_examples() {
        let b = ball(&[0.0, 0.0], 1.0);
        assert_eq!(b.project(&[0.3, 0.4]).unwrap(), vec![0.3, 0.4]);
        assert_eq!(b.project(&[3.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let chain = ConstraintSet::SequentialChain { q: vec![1.0] };
        assert_eq!(chain.project(&[1.0]), Err(MtlError::NotProjectable));
    }

    #[test]
    fn empty_intersection_is_detected() {
        let far = ConstraintSet::Intersection(vec![ball(&[0.0, 0.0], 1.0), ball(&[3.0, 0.0], 1.0)]);
        assert_eq!(far.project(&[1.5, 2.0]), Err(MtlError::EmptyIntersection));
        // pairwise overlapping, jointly empty
        let tri = ConstraintSet::Intersection(vec![
            ball(&[0.0, 0.0], 1.0),
            ball(&[1.9, 0.0], 1.0),
            ball(&[0.95, 1.65], 1.0),
        ]);
        assert_eq!(tri.project(&[0.0, 5.0]), Err(MtlError::EmptyIntersection));
    }

    #[test]
    fn intersection_projection_matches_grid_oracle() {
        let balls = [Ball::new(vec![0.0, 0.0], 1.0), Ball::new(vec![1.2, 0.3], 0.8)];
        let set = ConstraintSet::Intersection(balls.iter().cloned().map(ConstraintSet::Ball).collect());
        // the projection of an outside point lies on the boundary, which is
        // made of two circular arcs; sample both on a fine angular grid
        let steps = 400_000;
        let boundary: Vec<[f64; 2]> = balls
            .iter()
            .flat_map(|b| {
                (0..steps).map(move |k| {
                    let a = std::f64::consts::TAU * k as f64 / steps as f64;
                    [b.center[0] + b.radius * a.cos(), b.center[1] + b.radius * a.sin()]
                })
            })
            .filter(|p| balls.iter().all(|b| b.contains(p, 1e-12)))
            .collect();
        for target in [
            [2.0, 2.0],
            [-1.0, 0.2],
            [0.5, -1.5],
            [1.5, -1.0],
            [0.6, 1.5],
            [0.6, 0.2],
        ] {
            let oracle = if balls.iter().all(|b| b.contains(&target, 0.0)) {
                target
            } else {
                *boundary
                    .iter()
                    .min_by(|a, b| dist(&a[..], &target).total_cmp(&dist(&b[..], &target)))
                    .unwrap()
            };
            let p = set.project(&target).unwrap();
            assert!(dist(&p, &oracle) <= 1e-3, "{target:?}: {p:?} vs {oracle:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            c2 in prop::collection::vec(-0.5f64..0.5, 3),
            r1 in 0.5f64..2.0,
            r2 in 0.5f64..2.0,
            a in prop::collection::vec(-4.0f64..4.0, 3),
            b in prop::collection::vec(-4.0f64..4.0, 3),
        ) {
            let set = ConstraintSet::Intersection(vec![ball(&[0.0, 0.0, 0.0], r1), ball(&c2, r2)]);
            let pa = set.project(&a).unwrap();
            let ppa = set.project(&pa).unwrap();
            prop_assert!(dist(&pa, &ppa) <= 1e-6);
            let pb = set.project(&b).unwrap();
            prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-6);
            prop_assert!(set.contains(&pa, 1e-6).unwrap());
        }
    }

    #[test]
    fn ellipsoid_examples() {
        let empty = confidence_ellipsoid(&LayerData::new(2), &LayerParams::zeros(2), 3.0);
        assert!(!empty.is_informative());
        assert_eq!(empty.ball_relax(7.0), Ball::origin(2, 7.0));

        let mut data = LayerData::new(1);
        for _ in 0..100 {
            data.push(&[1.0], 1.0);
        }
        let f = MeanFunction::logistic(0.0); // c_mu = 0.25
        let cfg = MtlConfig {
            delta: 0.05,
            c_delta_scale: 1.0,
            d_x: 1.0,
            norm_cap: 10.0,
            radius_coef: None,
            opts: OptimizerOpts::default(),
        };
        let coef = cfg.radius_coef(&f, 1).unwrap();
        let e = confidence_ellipsoid(&data, &LayerParams(vec![0.2]), coef);
        let expected = 80.0 * (2.0 * 160f64.ln()).sqrt() * (1.0 / 0.25) * (1.0f64 / 100.0).sqrt();
        assert_relative_eq!(e.radius, expected, max_relative = 1e-14);
        assert_eq!(e.matrix, vec![1.0]);
    }

    #[test]
    fn ball_relax_examples() {
        let id = ConfidenceEllipsoid {
            center: LayerParams(vec![0.5, 0.5]),
            matrix: vec![1.0, 0.0, 0.0, 1.0],
            radius: 0.7,
            n: 10,
        };
        assert_relative_eq!(id.ball_relax(9.0).radius, 0.7, epsilon = 1e-12);
        let diag = ConfidenceEllipsoid {
            matrix: vec![4.0, 0.0, 0.0, 1.0],
            radius: 1.0,
            ..id.clone()
        };
        assert_relative_eq!(diag.ball_relax(9.0).radius, 1.0, epsilon = 1e-12);
        let singular = ConfidenceEllipsoid {
            matrix: vec![1.0, 1.0, 1.0, 1.0],
            ..id
        };
        assert_eq!(singular.ball_relax(9.0), Ball::origin(2, 9.0));
    }

    #[test]
    fn ball_relax_contains_sampled_boundary_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let d = 3;
            // M = A Aᵀ with A having wide-ranging scale, some eigenvalues above 1
            let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                for k in 0..d {
                    m[i * d + k] =
                        (0..d).map(|l| a[i * d + l] * a[k * d + l]).sum::<f64>() + if i == k { 0.05 } else { 0.0 };
                }
            }
            let e = ConfidenceEllipsoid {
                center: LayerParams(vec![0.3, -0.2, 0.1]),
                matrix: m.clone(),
                radius: 1.3,
                n: 5,
            };
            let b = e.ball_relax(100.0);
            for _ in 0..1000 {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let s = e.radius / crate::linalg::quad_form(&m, &v).sqrt();
                let p: Vec<f64> = e.center.iter().zip(&v).map(|(c, x)| c + s * x).collect();
                assert!(b.contains(&p, 1e-9));
            }
        }
    }

    fn noisy_layer(theta: &[f64], n: usize, seed: u64) -> LayerData {
        let mut rng = rng::stream(seed, rng::DATA);
        let f = MeanFunction::logistic(0.0);
        let mut data = LayerData::new(theta.len());
        for _ in 0..n {
            let x: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = f.mu(crate::linalg::dot(&x, theta));
            data.push(&x, if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        }
        data
    }

    #[test]
    fn ellipsoid_coverage_monte_carlo() {
        let truth = [0.8, -0.5];
        let f = MeanFunction::logistic(2.0f64.sqrt() * 10.0);
        let cfg = MtlConfig::for_slack(&[1.0], 2f64.sqrt(), 0.1);
        let coef = cfg
            .radius_coef(&MeanFunction::logistic(2.0f64.sqrt() * 1.0), 1)
            .unwrap();
        let mut covered = 0;
        for seed in 0..500 {
            let data = noisy_layer(&truth, 200, seed);
            let fit = fit_unconstrained(&f, &data, &LayerParams::zeros(2), &cfg.opts).unwrap();
            let e = confidence_ellipsoid(&data, &fit.theta, coef);
            covered += e.contains(&truth) as usize;
        }
        assert!(covered as f64 / 500.0 >= 0.9);
    }

    fn seq_dataset(truth: &ThetaStack, n: usize, seed: u64) -> LayeredDataset {
        let funnel = Funnel::new(truth.clone(), MeanFunction::logistic(10.0));
        let mut rng = rng::stream(seed, rng::DATA);
        let mut ds = LayeredDataset::new(truth.len(), truth.dim());
        for _ in 0..n {
            let x: Vec<f64> = (0..truth.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r: RewardVector = funnel.sample(&x, &mut rng);
            ds.push(&x, &r);
        }
        ds
    }

    #[test]
    fn single_layer_estimate_is_stage_one() {
        let truth = ThetaStack::new(vec![LayerParams(vec![0.6, -0.3])]).unwrap();
        let ds = seq_dataset(&truth, 300, 1);
        let theta0 = ConstraintSet::SequentialChain { q: vec![1.0] };
        let mut cfg = MtlConfig::for_slack(&[1.0], 2f64.sqrt(), 0.1);
        cfg.radius_coef = Some(0.5);
        let est = mtl_estimate(&ds, &theta0, &MeanFunction::logistic(10.0), &cfg, None).unwrap();
        assert_eq!(est.theta_hat, est.theta_bar);
    }

    #[test]
    fn large_samples_make_transfer_inert() {
        let truth = ThetaStack::new(vec![
            LayerParams(vec![1.0, 0.5]),
            LayerParams(vec![1.3, 0.2]),
            LayerParams(vec![1.5, 0.6]),
        ])
        .unwrap();
        let ds = seq_dataset(&truth, 200_000, 2);
        assert!(ds.counts()[2] >= 50_000);
        let q = vec![1.2, 0.5, 0.5];
        let theta0 = ConstraintSet::SequentialChain { q: q.clone() };
        let mut cfg = MtlConfig::for_slack(&q, 2f64.sqrt(), 0.1);
        cfg.radius_coef = Some(3.0);
        let est = mtl_estimate(&ds, &theta0, &MeanFunction::logistic(10.0), &cfg, None).unwrap();
        for j in 0..3 {
            assert!(dist(&est.theta_hat.layers[j], &est.theta_bar.layers[j]) <= 0.05);
            let dg = &est.diagnostics[j];
            assert!(dg.set_radius <= dg.own_radius && dg.set_radius <= dg.marginal_radius);
        }
    }

    #[test]
    fn estimate_rejects_mismatched_class() {
        let ds = LayeredDataset::new(2, 2);
        let cfg = MtlConfig::for_slack(&[1.0, 1.0], 1.0, 0.1);
        let f = MeanFunction::logistic(1.0);
        let bad = ConstraintSet::SequentialChain { q: vec![1.0] };
        assert!(matches!(
            mtl_estimate(&ds, &bad, &f, &cfg, None),
            Err(MtlError::LayerMismatch { .. })
        ));
        assert!(matches!(
            mtl_estimate(&ds, &ball(&[0.0, 0.0], 1.0), &f, &cfg, None),
            Err(MtlError::NotProjectable)
        ));
    }

    #[test]
    fn empty_theta1_falls_back_to_stage_one() {
        // Two layers whose data disagree violently with a tiny chain slack,
        // with tight confidence radii: the propagated anchor misses layer 2.
        let mut ds = LayeredDataset::new(2, 1);
        for k in 0..400 {
            let x = [if k % 2 == 0 { 1.0 } else { -1.0 }];
            let r = if k % 2 == 0 { [1u8, 1] } else { [1u8, 0] };
            ds.push(&x, &RewardVector::from_bits(&r).unwrap());
        }
        let q = vec![10.0, 0.01];
        let theta0 = ConstraintSet::SequentialChain { q: q.clone() };
        let mut cfg = MtlConfig::for_slack(&q, 1.0, 0.1);
        cfg.norm_cap = 8.0;
        cfg.opts.norm_cap = 8.0;
        cfg.radius_coef = Some(1e-3);
        let est = mtl_estimate(&ds, &theta0, &MeanFunction::logistic(8.0), &cfg, None).unwrap();
        assert!(est.diagnostics[1].fallback);
        assert_eq!(est.theta_hat.layers[1], est.theta_bar.layers[1]);
    }

    fn fig2_inputs(n: f64) -> BoundInputs {
        let jn = 5;
        BoundInputs {
            q: (1..=jn).map(|j| (12.0 - 2.0 * j as f64) / 100.0).collect(),
            n: (0..jn).map(|j| 0.2f64.powi(j) * n).collect(),
            d: 1,
            d_x: 1.0,
            c_mu: 1.0,
            kappa: 1.0,
            lambda: 1.0,
            delta: 0.1,
            c_delta_scale: 1.0,
            coef_override: Some(1.0),
        }
    }

    #[test]
    fn theorem1_examples() {
        let b = fig2_inputs(1e4);
        for j in 1..=5 {
            assert_eq!(theorem1_bound(&b, 1.0, j, 6).unwrap(), b.parametric(j));
        }
        let mut huge = b.clone();
        huge.q = vec![1e9; 5];
        assert_eq!(threshold_j0(&huge).j0, 6);
        let mut zero = b.clone();
        zero.q = vec![0.0; 5];
        assert_eq!(threshold_j0(&zero).j0, 1);
        assert!(threshold_j0(&b).preconditions_met);
        let mut bad = b.clone();
        bad.n = vec![100.0, 90.0, 10.0, 1.0, 0.1];
        assert!(!threshold_j0(&bad).preconditions_met);
        assert!(theorem1_bound(&b, 1.0, 0, 1).is_err());
        assert!(theorem1_bound(&b, 1.0, 1, 7).is_err());
    }

    fn exhaustive_min(b: &BoundInputs, j: usize) -> f64 {
        (1..=b.layers() + 1)
            .map(|j0| theorem1_bound(b, 1.0, j, j0).unwrap())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn fig2_threshold_minimizes_every_layer() {
        for k in 0..=40 {
            let n = 10f64.powf(2.0 + 4.0 * k as f64 / 40.0);
            let b = fig2_inputs(n);
            let j0 = threshold_j0(&b).j0;
            for j in 1..=5 {
                let at = theorem1_bound(&b, 1.0, j, j0).unwrap();
                assert!((at - exhaustive_min(&b, j)).abs() <= 1e-12 * at);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn threshold_dominates_all_anchors(
            jn in 1usize..7,
            n1 in 10.0f64..1e7,
            ratios in prop::collection::vec(4.0f64..12.0, 6),
            q0 in 0.001f64..2.0,
            q_decay in prop::collection::vec(0.3f64..1.0, 6),
            coef in 0.01f64..50.0,
            d in 1usize..50,
        ) {
            let mut n = vec![n1];
            let mut q = vec![q0];
            for k in 1..jn {
                n.push(n[k - 1] / ratios[k - 1]);
                q.push(q[k - 1] * q_decay[k - 1]);
            }
            let b = BoundInputs { q, n, d, d_x: 1.0, c_mu: 0.25, kappa: 0.25, lambda: 1.0, delta: 0.1,
                c_delta_scale: 1.0, coef_override: Some(coef) };
            let choice = threshold_j0(&b);
            prop_assert!(choice.preconditions_met);
            for j in 1..=jn {
                let at = theorem1_bound(&b, 1.0, j, choice.j0).unwrap();
                let best = exhaustive_min(&b, j);
                prop_assert!(at <= best * (1.0 + 1e-12), "j={} j0={} {} > {}", j, choice.j0, at, best);
            }
        }
    }

    #[test]
    fn theorem2_examples() {
        let mut b = fig2_inputs(1e3);
        b.q.truncate(1);
        b.n.truncate(1);
        assert_eq!(theorem2_bound(&b, 1.0, 1).unwrap(), b.parametric(1));

        let b = BoundInputs {
            q: vec![0.05, 1e-4, 0.05, 0.05],
            n: vec![100.0, 1e9, 50.0, 10.0],
            ..fig2_inputs(1.0)
        };
        assert_eq!(clustered_anchor(&b), 2);
        for j in [1, 3, 4] {
            let expected = (b.parametric(2) + b.q[1] + b.q[j - 1]).min(b.parametric(j));
            assert_eq!(theorem2_bound(&b, 1.0, j).unwrap(), expected);
            assert!(expected < b.parametric(j));
        }
    }

    #[test]
    fn theorem2_matches_exhaustive_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..500 {
            let jn = rng.random_range(1..6);
            let b = BoundInputs {
                q: (0..jn).map(|_| rng.random_range(0.01..1.0)).collect(),
                n: (0..jn).map(|_| rng.random_range(1.0..1e5)).collect(),
                d: rng.random_range(1..10),
                ..fig2_inputs(1.0)
            };
            let score = |k: usize| b.coef() * (b.d as f64 / b.n[k]).sqrt() + b.q[k];
            let mut j0 = 0;
            for k in 1..jn {
                if score(k) < score(j0) {
                    j0 = k;
                }
            }
            for j in 0..jn {
                let own = b.coef() * (b.d as f64 / b.n[j]).sqrt();
                let expected = if j == j0 { own } else { own.min(score(j0) + b.q[j]) };
                assert_relative_eq!(theorem2_bound(&b, 1.0, j + 1).unwrap(), expected, max_relative = 1e-14);
            }
        }
    }
}
