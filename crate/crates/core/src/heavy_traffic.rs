//! Closed-form heavy-traffic approximations.
//!
//! The scaled CPU workload in steady state is exponential with mean
//! `m = E[S²] / (2 E[S])`. The actual system is matched to the virtual
//! system with index `n* = 1/(1−ρ)`, whose fluid server counts are
//! `(1−ρ) K_i`, and queue lengths follow from the lifting map applied to the
//! workload.
//!
//! Two published simplifications are applied on the primary path:
//! `e^{−(1−ρ)c} ≈ ρ^c` in the delay probability, and an extra factor `ρ` on
//! the mean population so that the single-node case is exact. The
//! unsimplified ("raw") values are reported alongside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::LiftingMap;
use crate::model::{DerivedQuantities, NetworkModel};

/// Drift of the limiting reflected Brownian motion. Fixed by convention.
pub const THETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayProbability {
    /// `ρ^{ρ K_b / ρ_b}`.
    pub corrected: f64,
    /// `exp(−(1−ρ) K_b ρ / ρ_b)`, the exponential tail at the critical level.
    pub raw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueLengthLaw {
    pub node: usize,
    pub level: f64,
    /// `P(X_i > level)` from the exponential workload and the lifting map.
    pub tail: f64,
    pub mean_raw: f64,
    pub mean_corrected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyTrafficSummary {
    pub theta: f64,
    pub n_star: f64,
    /// Mean of the limiting exponential workload, `σ²/(2θ)`.
    pub w_mean: f64,
    pub sigma2: f64,
    pub w_star: f64,
    pub fluid_servers: Vec<f64>,
    pub bottleneck: usize,
    pub bottleneck_tie: bool,
    pub p_d: f64,
    pub p_d_raw: f64,
    pub ev: f64,
    pub ev_raw: f64,
    pub mean_queue: Vec<f64>,
    pub mean_queue_raw: Vec<f64>,
    pub total_mean_queue: f64,
    pub warnings: Vec<String>,
}

fn stable_derived(model: &NetworkModel) -> Result<DerivedQuantities> {
    let d = model.derived()?;
    if !d.stable {
        return Err(Error::Unstable { rho: d.rho });
    }
    Ok(d)
}

/// Exponent `ρ K_b / ρ_b` shared by both delay-probability forms.
fn delay_exponent(model: &NetworkModel, d: &DerivedQuantities) -> f64 {
    let k = model.nodes[d.bottleneck].servers as f64;
    d.rho * k / d.rho_i[d.bottleneck]
}

pub fn delay_probability(model: &NetworkModel) -> Result<DelayProbability> {
    let d = stable_derived(model)?;
    let c = delay_exponent(model, &d);
    Ok(DelayProbability { corrected: d.rho.powf(c), raw: (-(1.0 - d.rho) * c).exp() })
}

fn sojourn_from(d: &DerivedQuantities, p_d: f64) -> f64 {
    d.es / (1.0 - d.rho) * ((1.0 - p_d) + p_d * d.m / d.tau[d.bottleneck])
}

/// Mean sojourn time `E[S]/(1−ρ) · [(1−p_d) + p_d m/τ_b]`.
pub fn mean_sojourn(model: &NetworkModel) -> Result<f64> {
    let d = stable_derived(model)?;
    let p = d.rho.powf(delay_exponent(model, &d));
    Ok(sojourn_from(&d, p))
}

/// Mean sojourn time without either simplification.
pub fn mean_sojourn_raw(model: &NetworkModel) -> Result<f64> {
    let d = stable_derived(model)?;
    let q = (-(1.0 - d.rho) * delay_exponent(model, &d)).exp();
    Ok(sojourn_from(&d, q) / d.rho)
}

/// Classical single-node limited processor sharing approximation.
pub fn avi_itzhak_halfin(model: &NetworkModel) -> Result<f64> {
    if model.num_nodes() != 1 {
        return Err(Error::Unsupported(format!(
            "single-node formula needs exactly one node, model has {}",
            model.num_nodes()
        )));
    }
    let d = stable_derived(model)?;
    let p_d = d.rho.powf(model.nodes[0].servers as f64);
    Ok((1.0 - p_d) * d.es / (1.0 - d.rho) + p_d * d.m / (1.0 - d.rho))
}

/// Residual mean total service time of a two-node tandem from per-node
/// residual means. Independent of the matrix route in [`NetworkModel`].
pub fn tandem_m(model: &NetworkModel) -> Result<f64> {
    let is_tandem = model.num_nodes() == 2
        && model.nodes[1].arrival_rate == 0.0
        && model.nodes[0].arrival_rate > 0.0
        && model.routing == vec![vec![0.0, 1.0], vec![0.0, 0.0]];
    if !is_tandem {
        return Err(Error::Unsupported("model is not a two-node tandem".into()));
    }
    let s1 = &model.nodes[0].service;
    let s2 = &model.nodes[1].service;
    let (b1, b2) = (s1.mean(), s2.mean());
    // γ₁ = γ₂, so ρ_i / ρ = β_i / (β₁ + β₂)
    let share1 = b1 / (b1 + b2);
    let share2 = b2 / (b1 + b2);
    Ok(share1 * (s1.residual_mean() + b2) + share2 * s2.residual_mean())
}

/// Lifting map of the virtual system matched to `model`, in normalized
/// workload units. Server counts are `(1−ρ)K`.
pub fn virtual_lifting_map(model: &NetworkModel) -> Result<LiftingMap> {
    let d = stable_derived(model)?;
    Ok(lifting_from(model, &d))
}

fn lifting_from(model: &NetworkModel, d: &DerivedQuantities) -> LiftingMap {
    let b = d.bottleneck;
    let kb = (1.0 - d.rho) * model.nodes[b].servers as f64;
    let critical_point: Vec<f64> = d.rho_i.iter().map(|r| kb * r / d.rho_i[b]).collect();
    LiftingMap {
        critical_point,
        bottleneck: b,
        w_star: d.w_star.expect("stable model has a critical workload"),
        excess_work: d.tau[b],
    }
}

/// Per-node mean of `Δ_i(W)` for `W` exponential with mean `m`, given the
/// probability `q` that `W` exceeds the critical level.
fn lifted_means(map: &LiftingMap, m: f64, q: f64) -> Vec<f64> {
    map.critical_point
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let below = c / map.w_star * m * (1.0 - q);
            if i == map.bottleneck {
                below + q * m / map.excess_work
            } else {
                below
            }
        })
        .collect()
}

/// Approximate stationary law of the number of jobs at node `node`, at
/// actual-system level `level`.
pub fn queue_length_law(model: &NetworkModel, node: usize, level: f64) -> Result<QueueLengthLaw> {
    if !(level >= 0.0) {
        return Err(Error::InvalidArgument(format!("level must be >= 0, got {level}")));
    }
    if node >= model.num_nodes() {
        return Err(Error::InvalidArgument(format!("node {node} out of range")));
    }
    let d = stable_derived(model)?;
    let map = lifting_from(model, &d);
    let scale = 1.0 - d.rho;
    let tail = match map.workload_for_level(node, scale * level) {
        Some(w) => (-w / d.m).exp(),
        None => 0.0,
    };
    let q_raw = (-map.w_star / d.m).exp();
    let p_d = d.rho.powf(delay_exponent(model, &d));
    Ok(QueueLengthLaw {
        node,
        level,
        tail,
        mean_raw: lifted_means(&map, d.m, q_raw)[node] / scale,
        mean_corrected: d.rho * lifted_means(&map, d.m, p_d)[node] / scale,
    })
}

pub fn summarize(model: &NetworkModel) -> Result<HeavyTrafficSummary> {
    let d = stable_derived(model)?;
    let map = lifting_from(model, &d);
    let c = delay_exponent(model, &d);
    let p_d = d.rho.powf(c);
    let p_d_raw = (-(1.0 - d.rho) * c).exp();
    let scale = 1.0 - d.rho;
    let mean_queue_raw: Vec<f64> = lifted_means(&map, d.m, p_d_raw).iter().map(|v| v / scale).collect();
    let mean_queue: Vec<f64> = lifted_means(&map, d.m, p_d).iter().map(|v| d.rho * v / scale).collect();
    let mut warnings = d.warnings.clone();
    if d.bottleneck_tie {
        warnings.push("heavy-traffic laws assume a unique bottleneck".into());
    }
    Ok(HeavyTrafficSummary {
        theta: THETA,
        n_star: 1.0 / scale,
        w_mean: d.sigma2 / (2.0 * THETA),
        sigma2: d.sigma2,
        w_star: map.w_star,
        fluid_servers: model.nodes.iter().map(|n| scale * n.servers as f64).collect(),
        bottleneck: d.bottleneck,
        bottleneck_tie: d.bottleneck_tie,
        p_d,
        p_d_raw,
        ev: sojourn_from(&d, p_d),
        ev_raw: sojourn_from(&d, p_d_raw) / d.rho,
        total_mean_queue: mean_queue.iter().sum(),
        mean_queue,
        mean_queue_raw,
        warnings,
    })
}
