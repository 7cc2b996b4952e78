//! Truncated continuous-time Markov chain for networks with exponential
//! service, solved exactly as a reference for the simulator.
//!
//! States are population vectors in `{0..N}^J`, indexed lexicographically
//! with node 0 varying fastest. Arrivals to a full node are blocked and a
//! job routed into a full node leaves the network. The stationary vector is
//! computed with the Grassmann–Taksar–Heyman state reduction, which is
//! subtraction-free; lexicographic order keeps the generator banded, and the
//! reduction never fills outside the band.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::share_vector;
use crate::model::NetworkModel;

pub const MAX_STATES: usize = 1_000_000;
/// Upper limit on stored band entries (8 bytes each).
pub const MAX_BAND_ENTRIES: usize = 60_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtmcSolution {
    pub truncation: usize,
    pub states: usize,
    /// Largest boundary probability `P(x_i = N)` over nodes.
    pub truncation_mass: f64,
    pub mean_queue: Vec<f64>,
    pub mean_population: f64,
    /// Little's law with the offered external rate.
    pub mean_sojourn: f64,
    /// Time-stationary `P(x_i >= K_i)`.
    pub delay_probability: Vec<f64>,
    #[serde(skip)]
    pub distribution: Vec<f64>,
}

struct Band {
    width: usize,
    stride: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize, width: usize) -> Self {
        let stride = 2 * width + 1;
        Self { width, stride, data: vec![0.0; n * stride] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.stride + (j + self.width - i)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }
}

fn decode(mut s: usize, base: usize, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi = (s % base) as f64;
        s /= base;
    }
}

pub fn ctmc_steady_state(model: &NetworkModel, truncation: usize) -> Result<CtmcSolution> {
    if model.nodes.iter().any(|n| !n.service.is_exponential()) {
        return Err(Error::Unsupported("the CTMC oracle needs exponential service at every node".into()));
    }
    if truncation == 0 {
        return Err(Error::InvalidArgument("truncation level must be positive".into()));
    }
    let util = model.utilization()?;
    if !util.stable {
        return Err(Error::Unstable { rho: util.rho });
    }
    let j = model.num_nodes();
    let base = truncation + 1;
    let n = (0..j).try_fold(1usize, |acc, _| acc.checked_mul(base)).filter(|&n| n <= MAX_STATES);
    let n =
        n.ok_or_else(|| Error::StateSpaceTooLarge(format!("({base})^{j} states exceeds {MAX_STATES}")))?;
    let width = base.pow(j as u32 - 1);
    if n.saturating_mul(2 * width + 1) > MAX_BAND_ENTRIES {
        return Err(Error::StateSpaceTooLarge(format!(
            "banded generator needs {n} x {} entries",
            2 * width + 1
        )));
    }

    let lambda = model.arrival_rates();
    let rates: Vec<f64> = model.means().iter().map(|b| 1.0 / b).collect();
    let servers: Vec<f64> = model.servers().iter().map(|&k| k as f64).collect();
    let exit = model.exit_probabilities();
    let strides: Vec<usize> = (0..j).map(|i| base.pow(i as u32)).collect();

    let mut band = Band::new(n, width);
    let mut x = vec![0.0; j];
    for s in 0..n {
        decode(s, base, &mut x);
        for i in 0..j {
            if lambda[i] > 0.0 && (x[i] as usize) < truncation {
                band.add(s, s + strides[i], lambda[i]);
            }
        }
        let share = share_vector(&x, &servers);
        for i in 0..j {
            let out = rates[i] * share[i];
            if out <= 0.0 {
                continue;
            }
            let down = s - strides[i];
            let mut leave = exit[i].max(0.0);
            for (k, &p) in model.routing[i].iter().enumerate() {
                if p <= 0.0 || k == i {
                    continue;
                }
                if (x[k] as usize) < truncation {
                    band.add(s, down + strides[k], out * p);
                } else {
                    leave += p;
                }
            }
            if leave > 0.0 {
                band.add(s, down, out * leave);
            }
        }
    }

    // State reduction from the last state down to state 1.
    let mut outflow = vec![0.0; n];
    for k in (1..n).rev() {
        let lo = k.saturating_sub(width);
        let s: f64 = (lo..k).map(|c| band.get(k, c)).sum();
        if !(s > 0.0) {
            return Err(Error::NonFinite(format!("state {k} has no path to lower states")));
        }
        outflow[k] = s;
        for i in lo..k {
            let a_ik = band.get(i, k);
            if a_ik == 0.0 {
                continue;
            }
            let f = a_ik / s;
            let row_k = band.idx(k, lo);
            let row_i = band.idx(i, lo);
            for c in 0..(k - lo) {
                if lo + c != i {
                    band.data[row_i + c] += f * band.data[row_k + c];
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        let lo = k.saturating_sub(width);
        pi[k] = (lo..k).map(|i| pi[i] * band.get(i, k)).sum::<f64>() / outflow[k];
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);

    let mut mean_queue = vec![0.0; j];
    let mut boundary = vec![0.0; j];
    let mut delay = vec![0.0; j];
    for (s, &p) in pi.iter().enumerate() {
        decode(s, base, &mut x);
        for i in 0..j {
            mean_queue[i] += p * x[i];
            if x[i] as usize == truncation {
                boundary[i] += p;
            }
            if x[i] >= servers[i] {
                delay[i] += p;
            }
        }
    }
    let mean_population: f64 = mean_queue.iter().sum();
    Ok(CtmcSolution {
        truncation,
        states: n,
        truncation_mass: boundary.iter().cloned().fold(0.0, f64::max),
        mean_sojourn: mean_population / model.lambda_total(),
        mean_population,
        mean_queue,
        delay_probability: delay,
        distribution: pi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{fit_hyperexp, ServiceDistribution};
    use crate::model::Node;

    fn exp(mean: f64) -> ServiceDistribution {
        ServiceDistribution::exponential(mean).unwrap()
    }

    #[test]
    fn mm1_is_geometric() {
        let m = NetworkModel::single(0.5, exp(1.0), 1).unwrap();
        let sol = ctmc_steady_state(&m, 200).unwrap();
        assert!((sol.mean_population - 1.0).abs() < 1e-8);
        assert!((sol.mean_sojourn - 2.0).abs() < 1e-8);
        for (k, p) in sol.distribution.iter().take(20).enumerate() {
            assert!((p - 0.5 * 0.5f64.powi(k as i32)).abs() < 1e-12);
        }
        assert!(sol.truncation_mass < 1e-50);
    }

    #[test]
    fn multi_server_single_node_behaves_like_mm1() {
        // The shared CPU serves at total rate 1 whenever the node is busy.
        let m = NetworkModel::single(0.7, exp(1.0), 3).unwrap();
        let sol = ctmc_steady_state(&m, 300).unwrap();
        assert!((sol.mean_population - 0.7 / 0.3).abs() < 1e-8);
        // P(x >= 3) = ρ³
        assert!((sol.delay_probability[0] - 0.343).abs() < 1e-10);
    }

    #[test]
    fn global_balance_holds_for_tandem() {
        let m = NetworkModel::tandem([exp(1.0), exp(2.0)], [2, 4], 0.7).unwrap();
        let sol = ctmc_steady_state(&m, 40).unwrap();
        // rebuild the generator densely and check πQ = 0
        let base = 41;
        let n = base * base;
        let lambda = m.nodes[0].arrival_rate;
        let mut flux = vec![0.0; n];
        for s in 0..n {
            let (x0, x1) = (s % base, s / base);
            let p = sol.distribution[s];
            let mut move_to = |t: usize, r: f64| {
                flux[t] += p * r;
                flux[s] -= p * r;
            };
            if x0 < 40 {
                move_to(s + 1, lambda);
            }
            let busy = (x0.min(2) + x1.min(4)) as f64;
            if busy > 0.0 {
                let r0 = x0.min(2) as f64 / busy;
                let r1 = x1.min(4) as f64 / busy;
                if x0 > 0 {
                    let t = if x1 < 40 { s - 1 + base } else { s - 1 };
                    move_to(t, r0);
                }
                if x1 > 0 {
                    move_to(s - base, 0.5 * r1);
                }
            }
        }
        let worst = flux.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-14, "{worst}");
        assert!((sol.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refuses_non_exponential_and_oversize() {
        let m = NetworkModel::single(0.5, fit_hyperexp(1.0, 2.0).unwrap(), 1).unwrap();
        assert!(matches!(ctmc_steady_state(&m, 10), Err(Error::Unsupported(_))));
        let big = NetworkModel::new(
            vec![Node::new(0.1, exp(1.0), 1), Node::new(0.1, exp(1.0), 1), Node::new(0.1, exp(1.0), 1)],
            vec![vec![0.0; 3]; 3],
        )
        .unwrap();
        assert!(matches!(ctmc_steady_state(&big, 100), Err(Error::StateSpaceTooLarge(_))));
        let unstable = NetworkModel::single(2.0, exp(1.0), 1).unwrap();
        assert!(matches!(ctmc_steady_state(&unstable, 10), Err(Error::Unstable { .. })));
    }

    #[test]
    fn three_node_feedback_network() {
        let m = NetworkModel::new(
            vec![Node::new(0.2, exp(0.5), 2), Node::new(0.1, exp(0.4), 1), Node::new(0.0, exp(0.6), 2)],
            vec![vec![0.0, 0.3, 0.4], vec![0.2, 0.0, 0.3], vec![0.1, 0.0, 0.0]],
        )
        .unwrap();
        let coarse = ctmc_steady_state(&m, 12).unwrap();
        let fine = ctmc_steady_state(&m, 16).unwrap();
        assert!(fine.truncation_mass < coarse.truncation_mass);
        assert!(fine.truncation_mass < 1e-4, "{}", fine.truncation_mass);
        for (a, b) in coarse.mean_queue.iter().zip(&fine.mean_queue) {
            assert!((a - b).abs() < 1e-2 * b);
        }
    }
}
