//! Network description and the quantities that follow from it in closed form.

use serde::{Deserialize, Serialize};

use crate::distributions::ServiceDistribution;
use crate::error::{Error, Result};
use crate::linalg::{self, Lu, Matrix};

/// Relative tolerance under which two bottleneck ratios count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub arrival_rate: f64,
    pub service: ServiceDistribution,
    pub servers: u64,
}

impl Node {
    pub fn new(arrival_rate: f64, service: ServiceDistribution, servers: u64) -> Self {
        Self { arrival_rate, service, servers }
    }
}

/// Open network of multi-server nodes whose busy servers share one CPU.
///
/// `routing[i][j]` is the probability that a job leaving node `i` moves to
/// node `j`; the row deficit is the exit probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub nodes: Vec<Node>,
    pub routing: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub severity: Severity,
    pub message: String,
}

impl Violation {
    fn error(message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, message: message.into() }
    }

    fn warning(message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, message: message.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceMoments {
    pub mean: f64,
    pub second_moment: f64,
    /// Mean residual total service time.
    pub m: f64,
    pub sigma2: f64,
    pub scv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    pub rho: f64,
    pub per_node: Vec<f64>,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bottleneck {
    pub index: usize,
    pub tie: bool,
    /// Nodes with zero total arrival rate, left out of the argmin.
    pub excluded: Vec<usize>,
}

/// Everything the closed-form analysis needs, computed once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    pub lambda_total: f64,
    pub gamma: Vec<f64>,
    pub rho: f64,
    pub rho_i: Vec<f64>,
    pub stable: bool,
    pub tau: Vec<f64>,
    pub tau2: Vec<f64>,
    pub tau_e: Vec<f64>,
    pub es: f64,
    pub es2: f64,
    pub m: f64,
    pub sigma2: f64,
    pub scv: f64,
    pub bottleneck: usize,
    pub bottleneck_tie: bool,
    pub w_star: Option<f64>,
    pub warnings: Vec<String>,
}

impl NetworkModel {
    /// Builds a model and rejects it if any structural invariant fails.
    pub fn new(nodes: Vec<Node>, routing: Matrix) -> Result<Self> {
        let model = Self { nodes, routing };
        let errors: Vec<String> = model
            .validate()
            .into_iter()
            .filter(|v| v.severity == Severity::Error)
            .map(|v| v.message)
            .collect();
        if errors.is_empty() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(errors.join("; ")))
        }
    }

    /// Two nodes in series: every job enters node 0, then node 1, then leaves.
    /// External rate is chosen so the total load equals `rho`.
    pub fn tandem(services: [ServiceDistribution; 2], servers: [u64; 2], rho: f64) -> Result<Self> {
        let rate = rho / (services[0].mean() + services[1].mean());
        Self::new(
            vec![Node::new(rate, services[0], servers[0]), Node::new(0.0, services[1], servers[1])],
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        )
    }

    /// Single node with arrival rate `lambda`.
    pub fn single(lambda: f64, service: ServiceDistribution, servers: u64) -> Result<Self> {
        Self::new(vec![Node::new(lambda, service, servers)], vec![vec![0.0]])
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn arrival_rates(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.arrival_rate).collect()
    }

    pub fn servers(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.servers).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.service.mean()).collect()
    }

    pub fn second_moments(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.service.second_moment()).collect()
    }

    pub fn lambda_total(&self) -> f64 {
        self.nodes.iter().map(|n| n.arrival_rate).sum()
    }

    pub fn exit_probabilities(&self) -> Vec<f64> {
        self.routing.iter().map(|row| 1.0 - row.iter().sum::<f64>()).collect()
    }

    /// Every violated structural invariant. Instability is a warning.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let j = self.nodes.len();
        if j == 0 {
            out.push(Violation::error("model has no nodes"));
            return out;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !(node.arrival_rate >= 0.0 && node.arrival_rate.is_finite()) {
                out.push(Violation::error(format!(
                    "node {i} has invalid arrival rate {}",
                    node.arrival_rate
                )));
            }
            if node.servers == 0 {
                out.push(Violation::error(format!("node {i} has zero servers")));
            }
            if let Err(e) = node.service.validate() {
                out.push(Violation::error(format!("node {i}: {e}")));
            }
        }
        if self.lambda_total() <= 0.0 {
            out.push(Violation::error("no node has a positive external arrival rate"));
        }
        if self.routing.len() != j || self.routing.iter().any(|r| r.len() != j) {
            out.push(Violation::error(format!("routing matrix must be {j}x{j}")));
            return out;
        }
        let mut routing_ok = true;
        for (i, row) in self.routing.iter().enumerate() {
            for (k, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    routing_ok = false;
                    out.push(Violation::error(format!("routing entry ({i},{k}) = {p} outside [0,1]")));
                }
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + 1e-12 {
                routing_ok = false;
                out.push(Violation::error(format!("routing row {i} sums to {sum} > 1")));
            }
        }
        if routing_ok && Lu::factor(&self.i_minus_pt()).is_err() {
            out.push(Violation::error("I - P^T singular"));
            return out;
        }
        if out.iter().all(|v| v.severity == Severity::Warning) {
            if let Ok(u) = self.utilization() {
                if !u.stable {
                    out.push(Violation::warning(format!("load rho = {} >= 1: model is unstable", u.rho)));
                }
            }
            if let Ok(gamma) = self.solve_traffic() {
                for (i, g) in gamma.iter().enumerate() {
                    if *g <= 0.0 {
                        out.push(Violation::warning(format!("node {i} is unreachable (zero arrival rate)")));
                    }
                }
            }
        }
        out
    }

    pub(crate) fn i_minus_pt(&self) -> Matrix {
        let j = self.nodes.len();
        let mut a = linalg::identity(j);
        for (r, row) in a.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v -= self.routing[c][r];
            }
        }
        a
    }

    fn i_minus_p(&self) -> Matrix {
        let j = self.nodes.len();
        let mut a = linalg::identity(j);
        for (r, row) in a.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v -= self.routing[r][c];
            }
        }
        a
    }

    /// `(I - P^T)^{-1}`.
    pub fn inflow_inverse(&self) -> Result<Matrix> {
        Ok(Lu::factor(&self.i_minus_pt())?.inverse())
    }

    /// Total arrival rates γ solving `γ = λ + Pᵀγ`.
    pub fn solve_traffic(&self) -> Result<Vec<f64>> {
        let lu = Lu::factor(&self.i_minus_pt())?;
        let gamma = lu.solve(&self.arrival_rates());
        Ok(gamma.into_iter().map(|g| if g < 0.0 && g > -1e-14 { 0.0 } else { g }).collect())
    }

    /// First and second moments of the remaining total work of a job that is
    /// at each node, including all future visits.
    pub fn remaining_work_moments(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let lu = Lu::factor(&self.i_minus_p())?;
        let beta = self.means();
        let beta2 = self.second_moments();
        let tau = lu.solve(&beta);
        let p_tau = linalg::mat_vec(&self.routing, &tau);
        let rhs: Vec<f64> = (0..beta.len()).map(|i| beta2[i] + 2.0 * beta[i] * p_tau[i]).collect();
        let tau2 = lu.solve(&rhs);
        Ok((tau, tau2))
    }

    /// Mean remaining work of a job found in service at each node: residual
    /// work at the node itself plus all downstream visits. Equals τ for
    /// exponential nodes.
    pub fn in_service_remaining_work(&self) -> Result<Vec<f64>> {
        let (tau, _) = self.remaining_work_moments()?;
        Ok(tau
            .iter()
            .zip(&self.nodes)
            .map(|(t, n)| t - n.service.mean() + n.service.residual_mean())
            .collect())
    }

    /// Moments of the total service requirement over all visits.
    pub fn total_service_moments(&self) -> Result<ServiceMoments> {
        let lambda_total = self.lambda_total();
        if lambda_total <= 0.0 {
            return Err(Error::InvalidModel("total external arrival rate must be positive".into()));
        }
        let (tau, tau2) = self.remaining_work_moments()?;
        let a: Vec<f64> = self.arrival_rates().iter().map(|l| l / lambda_total).collect();
        let mean = linalg::dot(&a, &tau);
        let second_moment = linalg::dot(&a, &tau2);
        Ok(ServiceMoments {
            mean,
            second_moment,
            m: second_moment / (2.0 * mean),
            sigma2: second_moment / mean,
            scv: second_moment / (mean * mean) - 1.0,
        })
    }

    pub fn utilization(&self) -> Result<Utilization> {
        let gamma = self.solve_traffic()?;
        let per_node: Vec<f64> = gamma.iter().zip(self.means()).map(|(g, b)| g * b).collect();
        let rho: f64 = per_node.iter().sum();
        Ok(Utilization { rho, per_node, stable: rho < 1.0 })
    }

    /// Node minimizing `K_j / ρ_j` among nodes that receive traffic.
    pub fn find_bottleneck(&self) -> Result<Bottleneck> {
        let util = self.utilization()?;
        let servers = self.servers();
        let mut excluded = Vec::new();
        let mut best: Option<(usize, f64)> = None;
        for (i, &r) in util.per_node.iter().enumerate() {
            if r <= 0.0 {
                excluded.push(i);
                continue;
            }
            let ratio = servers[i] as f64 / r;
            if best.is_none_or(|(_, b)| ratio < b) {
                best = Some((i, ratio));
            }
        }
        let (index, min_ratio) = best.ok_or(Error::NoBottleneck)?;
        let near: Vec<usize> = util
            .per_node
            .iter()
            .enumerate()
            .filter(|&(i, &r)| {
                r > 0.0 && (servers[i] as f64 / r - min_ratio).abs() <= TIE_TOLERANCE * min_ratio
            })
            .map(|(i, _)| i)
            .collect();
        let tie = near.len() > 1;
        // Ties resolve to the lowest index.
        let index = near.first().copied().unwrap_or(index);
        Ok(Bottleneck { index, tie, excluded })
    }

    /// Workload at which the bottleneck fills its servers on the invariant
    /// manifold, in actual-system units.
    pub fn critical_workload(&self) -> Result<f64> {
        let util = self.utilization()?;
        if !util.stable {
            return Err(Error::Unstable { rho: util.rho });
        }
        let b = self.find_bottleneck()?;
        let tau_e = self.in_service_remaining_work()?;
        let moments = self.total_service_moments()?;
        let k = self.nodes[b.index].servers as f64;
        let rho_b = util.per_node[b.index];
        let weighted: f64 = util.per_node.iter().zip(&tau_e).map(|(r, t)| r * t).sum();
        let direct = (1.0 - util.rho) * weighted * k / rho_b;
        let via_m = (1.0 - util.rho) * k * util.rho * moments.m / rho_b;
        if (direct - via_m).abs() > 1e-10 * direct.abs().max(via_m.abs()) {
            return Err(Error::NonFinite(format!("critical workload forms disagree: {direct} vs {via_m}")));
        }
        Ok(direct)
    }

    pub fn derived(&self) -> Result<DerivedQuantities> {
        let gamma = self.solve_traffic()?;
        let util = self.utilization()?;
        let (tau, tau2) = self.remaining_work_moments()?;
        let moments = self.total_service_moments()?;
        let bottleneck = self.find_bottleneck()?;
        let mut warnings: Vec<String> = self
            .validate()
            .into_iter()
            .filter(|v| v.severity == Severity::Warning)
            .map(|v| v.message)
            .collect();
        if bottleneck.tie {
            warnings
                .push(format!("bottleneck is not unique; node {} chosen by lowest index", bottleneck.index));
        }
        let w_star = if util.stable { Some(self.critical_workload()?) } else { None };
        Ok(DerivedQuantities {
            lambda_total: self.lambda_total(),
            gamma,
            rho: util.rho,
            rho_i: util.per_node,
            stable: util.stable,
            tau,
            tau2,
            tau_e: self.in_service_remaining_work()?,
            es: moments.mean,
            es2: moments.second_moment,
            m: moments.m,
            sigma2: moments.sigma2,
            scv: moments.scv,
            bottleneck: bottleneck.index,
            bottleneck_tie: bottleneck.tie,
            w_star,
            warnings,
        })
    }

    /// Copy with every external rate scaled so that the total load is `rho`.
    pub fn with_load(&self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("target load must be positive, got {rho}")));
        }
        let current = self.utilization()?.rho;
        let scale = rho / current;
        let mut out = self.clone();
        for n in &mut out.nodes {
            n.arrival_rate *= scale;
        }
        Ok(out)
    }

    /// Copy with the given server counts.
    pub fn with_servers(&self, servers: &[u64]) -> Result<Self> {
        if servers.len() != self.nodes.len() {
            return Err(Error::InvalidArgument("server vector length mismatch".into()));
        }
        let mut out = self.clone();
        for (n, &k) in out.nodes.iter_mut().zip(servers) {
            n.servers = k;
        }
        Ok(out)
    }
}
