//! Optimistic bonuses for the funnel value.

use serde::{Deserialize, Serialize};

/// Floor on the sample minimum eigenvalue inside the parametric branch.
pub const LAMBDA_FLOOR: f64 = 1e-6;

/// Per-layer conversion bonuses and their propagation through the product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonusTerms {
    /// `Δμ_j` per layer, all non-negative.
    pub delta_mu: Vec<f64>,
    /// Unclipped bonus on `P_J`.
    pub total: f64,
}

impl BonusTerms {
    /// `min(P_J + total, 1)`.
    pub fn index(&self, p_j: f64) -> f64 {
        (p_j + self.total).min(1.0)
    }
}

/// `κ ‖x‖ min{diam, coef √(d / (n ∨ 1)) / max(λ, floor)}`.
///
/// `coef` is `c_{δ/3AJT} / c_μ`. An infinite `diam` leaves only the
/// parametric branch; with `n = 0` the floored eigenvalue makes the
/// parametric branch dominate and the diameter branch wins.
pub fn layer_bonus_value(kappa: f64, x_norm: f64, diam: f64, coef: f64, d: usize, n: usize, lambda: f64) -> f64 {
    let parametric = if n == 0 {
        f64::INFINITY
    } else {
        coef / lambda.max(LAMBDA_FLOOR) * (d as f64 / n.max(1) as f64).sqrt()
    };
    kappa * x_norm * diam.min(parametric)
}

/// First- and second-order expansion of `Π_j (μ_j + Δμ_j) − Π_j μ_j`:
/// `Σ_j (Π_{i≠j} μ_i) Δμ_j + Σ_{i≠j} Δμ_i Δμ_j` over ordered pairs.
pub fn funnel_bonus_terms(layer_means: &[f64], delta_mu: &[f64]) -> BonusTerms {
    let jn = layer_means.len();
    let mut first = 0.0;
    for (j, dm) in delta_mu.iter().enumerate() {
        let others: f64 = (0..jn).filter(|&i| i != j).map(|i| layer_means[i]).product();
        first += others * dm;
    }
    let mut cross = 0.0;
    for i in 0..jn {
        for j in 0..jn {
            if i != j {
                cross += delta_mu[i] * delta_mu[j];
            }
        }
    }
    BonusTerms {
        delta_mu: delta_mu.to_vec(),
        total: first + cross,
    }
}
