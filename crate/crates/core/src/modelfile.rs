//! TOML model files.
//!
//! ```toml
//! routing = [[0.0, 1.0], [0.0, 0.0]]   # optional, all zeros when absent
//!
//! [[node]]
//! arrival_rate = 0.2333
//! servers = 3
//! service = { kind = "hyperexp", mean = 1.0, scv = 4.0 }
//!
//! [[node]]
//! arrival_rate = 0.0
//! servers = 7
//! service = { kind = "exponential", mean = 2.0 }
//!
//! [[scenario]]                          # optional, selected by name
//! name = "busy"
//! load = 0.9
//! ```
//!
//! Service kinds are `exponential` (mean), `hyperexp` (mean, scv >= 1,
//! balanced-means fit) and `deterministic` (value). Unknown keys are errors.

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::distributions::{fit_hyperexp, ServiceDistribution};
use crate::error::{Error, Result};
use crate::model::{NetworkModel, Node};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ServiceSpec {
    Exponential { mean: f64 },
    Hyperexp { mean: f64, scv: f64 },
    Deterministic { value: f64 },
}

impl ServiceSpec {
    pub fn distribution(&self) -> Result<ServiceDistribution> {
        match *self {
            ServiceSpec::Exponential { mean } => ServiceDistribution::exponential(mean),
            ServiceSpec::Hyperexp { mean, scv } => fit_hyperexp(mean, scv),
            ServiceSpec::Deterministic { value } => ServiceDistribution::deterministic(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub arrival_rate: f64,
    pub servers: u64,
    pub service: Spanned<ServiceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Target total load; external rates are rescaled proportionally.
    pub load: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing: Option<Vec<Vec<f64>>>,
    pub node: Vec<NodeSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenario: Vec<Scenario>,
    #[serde(skip)]
    source: String,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(1, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        file.source = text.to_string();
        Ok(file)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model files always serialize")
    }

    fn error_at(&self, span: std::ops::Range<usize>, e: Error) -> Error {
        if self.source.is_empty() {
            return e;
        }
        Error::Parse { line: line_of(&self.source, span.start), message: e.to_string() }
    }

    /// The base model, without any scenario applied.
    pub fn to_model(&self) -> Result<NetworkModel> {
        let nodes = self
            .node
            .iter()
            .map(|n| {
                let dist =
                    n.service.get_ref().distribution().map_err(|e| self.error_at(n.service.span(), e))?;
                Ok(Node::new(n.arrival_rate, dist, n.servers))
            })
            .collect::<Result<Vec<_>>>()?;
        let j = nodes.len();
        let routing = self.routing.clone().unwrap_or_else(|| vec![vec![0.0; j]; j]);
        NetworkModel::new(nodes, routing)
    }

    /// The model with the named scenario applied, or the base model for `None`.
    pub fn scenario_model(&self, name: Option<&str>) -> Result<NetworkModel> {
        let base = self.to_model()?;
        let Some(name) = name else { return Ok(base) };
        let s = self
            .scenario
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no scenario named `{name}`")))?;
        match s.load {
            Some(rho) => base.with_load(rho),
            None => Ok(base),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROW1: &str = r#"
routing = [[0.0, 1.0], [0.0, 0.0]]

[[node]]
arrival_rate = 0.23333333333333334
servers = 3
service = { kind = "hyperexp", mean = 1.0, scv = 4.0 }

[[node]]
arrival_rate = 0.0
servers = 7
service = { kind = "hyperexp", mean = 2.0, scv = 4.0 }

[[scenario]]
name = "busy"
load = 0.9
"#;

    #[test]
    fn parses_row1() {
        let f = ModelFile::parse(ROW1).unwrap();
        let m = f.to_model().unwrap();
        assert_eq!(m.num_nodes(), 2);
        assert!((m.derived().unwrap().rho - 0.7).abs() < 1e-12);
        let busy = f.scenario_model(Some("busy")).unwrap();
        assert!((busy.derived().unwrap().rho - 0.9).abs() < 1e-12);
        assert!(f.scenario_model(Some("idle")).is_err());
    }

    #[test]
    fn round_trip() {
        let f = ModelFile::parse(ROW1).unwrap();
        let again = ModelFile::parse(&f.to_toml()).unwrap();
        assert_eq!(f.to_model().unwrap(), again.to_model().unwrap());
        assert_eq!(f.scenario, again.scenario);
        assert_eq!(again.to_toml(), f.to_toml());
    }

    #[test]
    fn unknown_key_has_line() {
        let text = ROW1.replace("servers = 7", "servers = 7\nthreads = 2");
        match ModelFile::parse(&text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 12);
                assert!(message.contains("threads"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_service_has_line() {
        let text = ROW1.replace("mean = 2.0, scv = 4.0", "mean = 2.0, scv = 0.5");
        match ModelFile::parse(&text).unwrap().to_model() {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_line() {
        let text = "[[node]]\narrival_rate = \nservers = 1\n";
        match ModelFile::parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn routing_defaults_to_zero() {
        let text =
            "[[node]]\narrival_rate = 0.5\nservers = 1\nservice = { kind = \"exponential\", mean = 1.0 }\n";
        let m = ModelFile::parse(text).unwrap().to_model().unwrap();
        assert_eq!(m.routing, vec![vec![0.0]]);
    }

    #[test]
    fn invalid_routing_is_model_error() {
        let text = ROW1.replace("[[0.0, 1.0], [0.0, 0.0]]", "[[0.0, 1.2], [0.0, 0.0]]");
        assert!(matches!(ModelFile::parse(&text).unwrap().to_model(), Err(Error::InvalidModel(_))));
    }
}
