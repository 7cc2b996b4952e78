//! Sojourn-time estimators behind one trait, looked up by name at runtime.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heavy_traffic;
use crate::model::NetworkModel;
use crate::sim::{self, ctmc, SimConfig};

/// Result of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SojournEstimate {
    pub method: String,
    pub mean_sojourn: f64,
    /// Confidence half-width for stochastic estimators.
    pub half_width: Option<f64>,
    /// Delay probability at the bottleneck node, when the method yields one.
    pub delay_probability: Option<f64>,
    pub mean_queue: Vec<f64>,
}

pub trait SojournEstimator: Send + Sync {
    fn name(&self) -> &str;
    fn description(&self) -> &str;
    fn estimate(&self, model: &NetworkModel) -> Result<SojournEstimate>;
}

/// Heavy-traffic approximation with the ρ-corrected delay probability.
pub struct HeavyTraffic;

impl SojournEstimator for HeavyTraffic {
    fn name(&self) -> &str {
        "heavy-traffic"
    }
    fn description(&self) -> &str {
        "closed-form heavy-traffic approximation (corrected)"
    }
    fn estimate(&self, model: &NetworkModel) -> Result<SojournEstimate> {
        let s = heavy_traffic::summarize(model)?;
        Ok(SojournEstimate {
            method: self.name().into(),
            mean_sojourn: s.ev,
            half_width: None,
            delay_probability: Some(s.p_d),
            mean_queue: s.mean_queue,
        })
    }
}

/// Same approximation before the two ad-hoc corrections.
pub struct HeavyTrafficRaw;

impl SojournEstimator for HeavyTrafficRaw {
    fn name(&self) -> &str {
        "heavy-traffic-raw"
    }
    fn description(&self) -> &str {
        "heavy-traffic approximation without the load corrections"
    }
    fn estimate(&self, model: &NetworkModel) -> Result<SojournEstimate> {
        let s = heavy_traffic::summarize(model)?;
        Ok(SojournEstimate {
            method: self.name().into(),
            mean_sojourn: s.ev_raw,
            half_width: None,
            delay_probability: Some(s.p_d_raw),
            mean_queue: s.mean_queue_raw,
        })
    }
}

/// Single-node M/G/K-LPS interpolation between FIFO and PS.
pub struct AviItzhakHalfin;

impl SojournEstimator for AviItzhakHalfin {
    fn name(&self) -> &str {
        "avi-itzhak-halfin"
    }
    fn description(&self) -> &str {
        "single-node interpolation between FIFO and PS (one node only)"
    }
    fn estimate(&self, model: &NetworkModel) -> Result<SojournEstimate> {
        let ev = heavy_traffic::avi_itzhak_halfin(model)?;
        let d = model.derived()?;
        Ok(SojournEstimate {
            method: self.name().into(),
            mean_sojourn: ev,
            half_width: None,
            delay_probability: Some(d.rho.powi(model.nodes[0].servers.min(i32::MAX as u64) as i32)),
            mean_queue: vec![d.lambda_total * ev],
        })
    }
}

/// Truncated-CTMC steady state (exponential service only).
pub struct CtmcOracle {
    pub truncation: usize,
}

impl SojournEstimator for CtmcOracle {
    fn name(&self) -> &str {
        "ctmc"
    }
    fn description(&self) -> &str {
        "exact steady state of the truncated Markov chain (exponential service)"
    }
    fn estimate(&self, model: &NetworkModel) -> Result<SojournEstimate> {
        let sol = ctmc::ctmc_steady_state(model, self.truncation)?;
        let b = model.find_bottleneck()?.index;
        Ok(SojournEstimate {
            method: self.name().into(),
            mean_sojourn: sol.mean_sojourn,
            half_width: None,
            delay_probability: Some(sol.delay_probability[b]),
            mean_queue: sol.mean_queue,
        })
    }
}

/// Discrete-event simulation.
pub struct Simulation {
    pub config: SimConfig,
}

impl SojournEstimator for Simulation {
    fn name(&self) -> &str {
        "simulation"
    }
    fn description(&self) -> &str {
        "discrete-event simulation with replication confidence intervals"
    }
    fn estimate(&self, model: &NetworkModel) -> Result<SojournEstimate> {
        let est = sim::simulate(model, &self.config)?;
        Ok(SojournEstimate {
            method: self.name().into(),
            mean_sojourn: est.mean_sojourn.mean,
            half_width: est.mean_sojourn.half_width,
            delay_probability: Some(est.bottleneck_delay.mean),
            mean_queue: est.mean_queue.iter().map(|e| e.mean).collect(),
        })
    }
}

#[derive(Default)]
pub struct Registry {
    entries: BTreeMap<String, Box<dyn SojournEstimator>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// All built-in estimators. `truncation` sizes the CTMC oracle.
    pub fn with_defaults(config: SimConfig, truncation: usize) -> Self {
        let mut r = Self::new();
        r.register(Box::new(HeavyTraffic));
        r.register(Box::new(HeavyTrafficRaw));
        r.register(Box::new(AviItzhakHalfin));
        r.register(Box::new(CtmcOracle { truncation }));
        r.register(Box::new(Simulation { config }));
        r
    }

    /// Adds an estimator, replacing any earlier one with the same name.
    pub fn register(&mut self, estimator: Box<dyn SojournEstimator>) {
        self.entries.insert(estimator.name().to_string(), estimator);
    }

    pub fn get(&self, name: &str) -> Result<&dyn SojournEstimator> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| Error::UnknownEstimator(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn estimate(&self, name: &str, model: &NetworkModel) -> Result<SojournEstimate> {
        self.get(name)?.estimate(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::ServiceDistribution;

    fn mm1() -> NetworkModel {
        NetworkModel::single(0.5, ServiceDistribution::exponential(1.0).unwrap(), 1).unwrap()
    }

    fn registry() -> Registry {
        let config = SimConfig { horizon: 20_000, replications: 4, ..SimConfig::default() };
        Registry::with_defaults(config, 200)
    }

    #[test]
    fn names_are_sorted_and_complete() {
        assert_eq!(
            registry().names(),
            vec!["avi-itzhak-halfin", "ctmc", "heavy-traffic", "heavy-traffic-raw", "simulation"]
        );
    }

    #[test]
    fn unknown_name() {
        assert_eq!(registry().get("nope").err(), Some(Error::UnknownEstimator("nope".into())));
    }

    #[test]
    fn closed_forms_agree_on_mm1() {
        let r = registry();
        let m = mm1();
        for name in ["heavy-traffic", "avi-itzhak-halfin", "ctmc"] {
            let e = r.estimate(name, &m).unwrap();
            assert!((e.mean_sojourn - 2.0).abs() < 1e-8, "{name}: {}", e.mean_sojourn);
        }
        let sim = r.estimate("simulation", &m).unwrap();
        assert!((sim.mean_sojourn - 2.0).abs() < 0.2);
        assert!(sim.half_width.is_some());
    }

    #[test]
    fn register_replaces() {
        struct Fixed;
        impl SojournEstimator for Fixed {
            fn name(&self) -> &str {
                "heavy-traffic"
            }
            fn description(&self) -> &str {
                "constant"
            }
            fn estimate(&self, _: &NetworkModel) -> Result<SojournEstimate> {
                Ok(SojournEstimate {
                    method: "fixed".into(),
                    mean_sojourn: 7.0,
                    half_width: None,
                    delay_probability: None,
                    mean_queue: vec![],
                })
            }
        }
        let mut r = registry();
        r.register(Box::new(Fixed));
        assert_eq!(r.names().len(), 5);
        assert_eq!(r.estimate("heavy-traffic", &mm1()).unwrap().mean_sojourn, 7.0);
    }
}
