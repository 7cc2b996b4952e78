//! Performance analysis of two-layer queueing networks.
//!
//! Jobs move through a Jackson-type network of multi-server nodes; every busy
//! server across the network shares a single CPU by processor sharing. The
//! crate offers exact closed-form model quantities, a fluid ODE engine,
//! heavy-traffic approximations, a discrete-event simulator and a
//! truncated-CTMC oracle, plus a registry that selects sojourn-time
//! estimators by name.

pub mod benchmark;
pub mod distributions;
pub mod error;
pub mod estimator;
pub mod fluid;
pub mod heavy_traffic;
pub mod linalg;
pub mod model;
pub mod modelfile;
pub mod sim;

pub use distributions::{fit_hyperexp, ServiceDistribution};
pub use error::{Error, Result};
pub use estimator::{Registry, SojournEstimate, SojournEstimator};
pub use model::{DerivedQuantities, NetworkModel, Node};
pub use modelfile::ModelFile;
