//! Critical fluid model of the layered network.
//!
//! The fluid state `x` holds continuous job counts per node. Node `i` drains
//! at rate `μ_i R_i(x)`, where `R(x)` is the CPU share of its busy servers.
//! Server counts are supplied explicitly, so the same code serves both the
//! actual system and the scaled virtual systems used in heavy traffic.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::NetworkModel;

/// CPU share of each node: busy servers at the node over all busy servers.
/// The zero state gets the zero vector (idle CPU).
pub fn share_vector(x: &[f64], servers: &[f64]) -> Vec<f64> {
    let busy: Vec<f64> = x.iter().zip(servers).map(|(&xi, &k)| xi.max(0.0).min(k)).collect();
    let total: f64 = busy.iter().sum();
    if total <= 0.0 {
        return vec![0.0; x.len()];
    }
    busy.into_iter().map(|b| b / total).collect()
}

/// Piecewise-linear map from CPU workload to the manifold point carrying it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingMap {
    /// Manifold point at the critical workload; the bottleneck entry equals
    /// its server count.
    pub critical_point: Vec<f64>,
    pub bottleneck: usize,
    pub w_star: f64,
    /// Work added per extra bottleneck job beyond the critical level.
    pub excess_work: f64,
}

impl LiftingMap {
    pub fn eval(&self, w: f64) -> Vec<f64> {
        if self.w_star <= 0.0 {
            return vec![0.0; self.critical_point.len()];
        }
        let w = w.max(0.0);
        let frac = w.min(self.w_star) / self.w_star;
        let excess = (w - self.w_star).max(0.0) / self.excess_work;
        self.critical_point
            .iter()
            .enumerate()
            .map(|(i, &c)| if i == self.bottleneck { frac * c + excess } else { frac * c })
            .collect()
    }

    pub fn component(&self, i: usize, w: f64) -> f64 {
        if self.w_star <= 0.0 {
            return 0.0;
        }
        let w = w.max(0.0);
        let base = w.min(self.w_star) / self.w_star * self.critical_point[i];
        if i == self.bottleneck {
            base + (w - self.w_star).max(0.0) / self.excess_work
        } else {
            base
        }
    }

    /// Smallest workload at which component `i` exceeds `level`, or `None`
    /// when the component never gets there.
    pub fn workload_for_level(&self, i: usize, level: f64) -> Option<f64> {
        let cap = self.critical_point[i];
        if level <= 0.0 {
            return Some(0.0);
        }
        if level < cap {
            Some(level / cap * self.w_star)
        } else if i == self.bottleneck {
            Some(self.w_star + (level - cap) * self.excess_work)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidConfig {
    pub horizon: f64,
    /// Fixed step; `None` picks `min(1e-3 T, 1e-2 / rate scale)`.
    pub step: Option<f64>,
    /// Record every `stride`-th step.
    pub stride: usize,
    /// Halve the step until terminal states agree to this tolerance.
    pub richardson_tol: Option<f64>,
}

impl FluidConfig {
    pub fn new(horizon: f64) -> Self {
        Self { horizon, step: None, stride: 100, richardson_tol: Some(1e-7) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub workload: f64,
    pub lyapunov: f64,
    pub dist_manifold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidTrajectory {
    pub samples: Vec<FluidSample>,
    pub step: f64,
    /// Terminal-state gap between the last two step sizes when the
    /// step-halving check ran.
    pub richardson_gap: Option<f64>,
    pub warnings: Vec<String>,
}

impl FluidTrajectory {
    pub fn last(&self) -> &FluidSample {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let j = self.samples.first().map_or(0, |s| s.x.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=j).map(|i| format!("x_{i}")));
        header.extend(["workload", "lyapunov", "dist_manifold"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![s.t.to_string()];
            row.extend(s.x.iter().map(f64::to_string));
            row.push(s.workload.to_string());
            row.push(s.lyapunov.to_string());
            row.push(s.dist_manifold.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Fluid model parameters for a network with explicit server counts.
#[derive(Debug, Clone)]
pub struct FluidModel {
    lambda: Vec<f64>,
    rates: Vec<f64>,
    routing: Matrix,
    servers: Vec<f64>,
    gamma: Vec<f64>,
    rho_i: Vec<f64>,
    tau: Vec<f64>,
    inflow_inverse: Matrix,
    lifting: LiftingMap,
}

impl FluidModel {
    /// Uses the model's arrival rates as given.
    pub fn new(model: &NetworkModel, servers: Vec<f64>) -> Result<Self> {
        if servers.len() != model.num_nodes() || servers.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::InvalidArgument("fluid server counts must be positive, one per node".into()));
        }
        let gamma = model.solve_traffic()?;
        let beta = model.means();
        let rho_i: Vec<f64> = gamma.iter().zip(&beta).map(|(g, b)| g * b).collect();
        let (tau, _) = model.remaining_work_moments()?;
        let inflow_inverse = model.inflow_inverse()?;
        let bottleneck =
            rho_i.iter().enumerate().filter(|(_, &r)| r > 0.0).map(|(i, &r)| (i, servers[i] / r)).fold(
                None,
                |best: Option<(usize, f64)>, cur| match best {
                    Some(b) if b.1 <= cur.1 => Some(b),
                    _ => Some(cur),
                },
            );
        // Without any traffic the manifold collapses to the origin.
        let (bottleneck, critical_point) = match bottleneck {
            Some((b, _)) => (b, rho_i.iter().map(|r| servers[b] * r / rho_i[b]).collect()),
            None => (0, vec![0.0; rho_i.len()]),
        };
        let w_star = linalg::dot(&tau, &critical_point);
        let lifting = LiftingMap { critical_point, bottleneck, w_star, excess_work: tau[bottleneck] };
        Ok(Self {
            lambda: model.arrival_rates(),
            rates: beta.iter().map(|b| 1.0 / b).collect(),
            routing: model.routing.clone(),
            servers,
            gamma,
            rho_i,
            tau,
            inflow_inverse,
            lifting,
        })
    }

    /// Rescales arrival rates so the load is exactly one.
    pub fn critical(model: &NetworkModel, servers: Vec<f64>) -> Result<Self> {
        Self::new(&model.with_load(1.0)?, servers)
    }

    pub fn num_nodes(&self) -> usize {
        self.lambda.len()
    }

    pub fn servers(&self) -> &[f64] {
        &self.servers
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn load(&self) -> f64 {
        self.rho_i.iter().sum()
    }

    pub fn bottleneck(&self) -> usize {
        self.lifting.bottleneck
    }

    pub fn w_star(&self) -> f64 {
        self.lifting.w_star
    }

    pub fn lifting_map(&self) -> &LiftingMap {
        &self.lifting
    }

    pub fn share_vector(&self, x: &[f64]) -> Vec<f64> {
        share_vector(x, &self.servers)
    }

    /// `λ − μR(x) + Pᵀ(μR(x))`.
    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let r = self.share_vector(x);
        let out_flow: Vec<f64> = r.iter().zip(&self.rates).map(|(ri, mu)| ri * mu).collect();
        let j = x.len();
        (0..j)
            .map(|i| {
                self.lambda[i] - out_flow[i] + (0..j).map(|k| self.routing[k][i] * out_flow[k]).sum::<f64>()
            })
            .collect()
    }

    /// CPU workload `τᵀx` of a fluid state.
    pub fn workload(&self, x: &[f64]) -> f64 {
        linalg::dot(&self.tau, x)
    }

    /// The invariant point at workload `w`.
    pub fn invariant_point(&self, w: f64) -> Result<Vec<f64>> {
        if !(w >= 0.0) {
            return Err(Error::InvalidArgument(format!("workload must be >= 0, got {w}")));
        }
        Ok(self.lifting.eval(w))
    }

    pub fn lifting(&self, w: f64) -> Vec<f64> {
        self.lifting.eval(w)
    }

    /// `(x − x†(w))ᵀ (I − Pᵀ)⁻¹ (x − x†(w))`.
    pub fn lyapunov(&self, x: &[f64], w: f64) -> f64 {
        let target = self.lifting.eval(w);
        let d: Vec<f64> = x.iter().zip(&target).map(|(a, b)| a - b).collect();
        linalg::dot(&d, &linalg::mat_vec(&self.inflow_inverse, &d))
    }

    /// Smallest eigenvalue of the symmetric part of `(I − Pᵀ)⁻¹`. The
    /// Lyapunov value is only guaranteed non-negative when this is ≥ 0.
    pub fn lyapunov_min_eigenvalue(&self) -> f64 {
        let m = &self.inflow_inverse;
        let j = m.len();
        let sym: Matrix = (0..j).map(|r| (0..j).map(|c| 0.5 * (m[r][c] + m[c][r])).collect()).collect();
        linalg::symmetric_eigenvalues(&sym)[0]
    }

    /// `‖x − x†(τᵀx)‖∞`.
    pub fn distance_to_manifold(&self, x: &[f64]) -> f64 {
        let target = self.lifting.eval(self.workload(x));
        x.iter().zip(&target).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn rate_scale(&self) -> f64 {
        let mu = self.rates.iter().cloned().fold(0.0, f64::max);
        mu + self.lambda.iter().sum::<f64>()
    }

    fn default_step(&self, horizon: f64) -> f64 {
        (1e-3 * horizon).min(1e-2 / self.rate_scale())
    }

    fn rk4_step(&self, x: &[f64], h: f64) -> Vec<f64> {
        let axpy = |a: &[f64], k: &[f64], s: f64| -> Vec<f64> {
            a.iter().zip(k).map(|(ai, ki)| ai + s * ki).collect()
        };
        let k1 = self.drift(x);
        let k2 = self.drift(&axpy(x, &k1, 0.5 * h));
        let k3 = self.drift(&axpy(x, &k2, 0.5 * h));
        let k4 = self.drift(&axpy(x, &k3, h));
        (0..x.len())
            .map(|i| {
                // Negative components can only come from roundoff.
                (x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).max(0.0)
            })
            .collect()
    }

    fn sample(&self, t: f64, x: &[f64]) -> FluidSample {
        let workload = self.workload(x);
        FluidSample {
            t,
            x: x.to_vec(),
            workload,
            lyapunov: self.lyapunov(x, workload),
            dist_manifold: self.distance_to_manifold(x),
        }
    }

    fn run(&self, x0: &[f64], horizon: f64, h: f64, stride: usize) -> Result<FluidTrajectory> {
        let steps = (horizon / h).ceil().max(1.0) as usize;
        let h = horizon / steps as f64;
        let stride = stride.max(1);
        let mut x = x0.to_vec();
        let mut samples = vec![self.sample(0.0, &x)];
        for n in 1..=steps {
            x = self.rk4_step(&x, h);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "fluid state became non-finite at t = {} (state {:?})",
                    n as f64 * h,
                    x
                )));
            }
            if n % stride == 0 || n == steps {
                samples.push(self.sample(n as f64 * h, &x));
            }
        }
        Ok(FluidTrajectory { samples, step: h, richardson_gap: None, warnings: Vec::new() })
    }

    /// Integrates `x' = Ψ(x)` from `x0` with classical RK4.
    pub fn integrate(&self, x0: &[f64], config: &FluidConfig) -> Result<FluidTrajectory> {
        if x0.len() != self.num_nodes() {
            return Err(Error::InvalidArgument("initial state has the wrong dimension".into()));
        }
        if x0.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("initial state must be finite and non-negative".into()));
        }
        if !(config.horizon > 0.0) || config.step.is_some_and(|h| !(h > 0.0)) {
            return Err(Error::InvalidArgument("horizon and step must be positive".into()));
        }
        let mut h = config.step.unwrap_or_else(|| self.default_step(config.horizon));
        let mut traj = self.run(x0, config.horizon, h, config.stride)?;
        if let Some(tol) = config.richardson_tol {
            let mut gap = f64::INFINITY;
            for _ in 0..6 {
                let stride = config.stride.saturating_mul(2);
                let finer = self.run(x0, config.horizon, h / 2.0, stride)?;
                gap = traj.last().x.iter().zip(&finer.last().x).fold(0.0, |m, (a, b)| m.max((a - b).abs()));
                traj = finer;
                h /= 2.0;
                if gap <= tol {
                    break;
                }
            }
            if gap > tol {
                traj.warnings.push(format!("step-halving check did not reach {tol:e} (gap {gap:e})"));
            }
            traj.richardson_gap = Some(gap);
        }
        if self.lyapunov_min_eigenvalue() < 0.0 {
            traj.warnings
                .push("symmetric part of (I - P^T)^-1 is indefinite; Lyapunov values may be negative".into());
        }
        Ok(traj)
    }

    /// Integrates with horizon doubling until the distance to the manifold
    /// drops below `tol` or the horizon reaches `max_horizon`.
    pub fn integrate_to_manifold(
        &self,
        x0: &[f64],
        tol: f64,
        horizon: f64,
        max_horizon: f64,
    ) -> Result<FluidTrajectory> {
        let mut t = horizon;
        loop {
            let cfg = FluidConfig { horizon: t, step: None, stride: 1000, richardson_tol: None };
            let traj = self.integrate(x0, &cfg)?;
            if traj.last().dist_manifold < tol || t >= max_horizon {
                return Ok(traj);
            }
            t *= 2.0;
        }
    }
}
