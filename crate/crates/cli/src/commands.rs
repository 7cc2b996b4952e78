use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use lpsnet::benchmark;
use lpsnet::fluid::{FluidConfig, FluidModel};
use lpsnet::heavy_traffic;
use lpsnet::sim::{self, SimConfig};
use lpsnet::{Error, ModelFile, NetworkModel, Registry, Result};
use serde_json::{json, Value};

pub fn load_model(path: &Path, scenario: Option<&str>) -> Result<NetworkModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidModel(format!("cannot read {}: {e}", path.display())))?;
    ModelFile::parse(&text)?.scenario_model(scenario)
}

pub fn analyze(model: &NetworkModel, raw: bool) -> Result<Value> {
    let derived = model.derived()?;
    if !derived.stable {
        return Ok(json!({
            "status": "unstable",
            "form": if raw { "raw" } else { "corrected" },
            "EV": null,
            "p_d": null,
            "derived": derived,
            "heavy_traffic": null,
            "warnings": derived.warnings,
        }));
    }
    let summary = heavy_traffic::summarize(model)?;
    let (ev, p_d) = if raw { (summary.ev_raw, summary.p_d_raw) } else { (summary.ev, summary.p_d) };
    let mut warnings = derived.warnings.clone();
    for w in &summary.warnings {
        if !warnings.contains(w) {
            warnings.push(w.clone());
        }
    }
    Ok(json!({
        "status": "stable",
        "form": if raw { "raw" } else { "corrected" },
        "EV": ev,
        "p_d": p_d,
        "derived": derived,
        "heavy_traffic": summary,
        "warnings": warnings,
    }))
}

pub struct FluidArgs {
    pub x0: Option<Vec<f64>>,
    pub horizon: f64,
    pub critical: bool,
    pub virtual_servers: bool,
    pub step: Option<f64>,
    pub stride: usize,
}

/// Returns the CSV text and any integration warnings.
pub fn fluid(model: &NetworkModel, args: &FluidArgs) -> Result<(String, Vec<String>)> {
    let mut servers: Vec<f64> = model.servers().iter().map(|&k| k as f64).collect();
    if args.virtual_servers {
        let rho = model.utilization()?.rho;
        if rho >= 1.0 {
            return Err(Error::Unstable { rho });
        }
        servers.iter_mut().for_each(|k| *k *= 1.0 - rho);
    }
    let fm =
        if args.critical { FluidModel::critical(model, servers)? } else { FluidModel::new(model, servers)? };
    let x0 = args.x0.clone().unwrap_or_else(|| vec![0.0; model.num_nodes()]);
    let config = FluidConfig {
        horizon: args.horizon,
        step: args.step,
        stride: args.stride.max(1),
        ..FluidConfig::new(args.horizon)
    };
    let traj = fm.integrate(&x0, &config)?;
    let mut out = Vec::new();
    traj.write_csv(&mut out).expect("writing to memory");
    Ok((String::from_utf8(out).expect("csv is ascii"), traj.warnings))
}

pub fn simulate(model: &NetworkModel, config: &SimConfig, trace: Option<&Path>) -> Result<Value> {
    let est = match trace {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| Error::InvalidArgument(format!("cannot create {}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            let est = sim::simulate_with_trace(model, config, Some(&mut w))?;
            w.flush().map_err(|e| Error::InvalidArgument(format!("trace output failed: {e}")))?;
            est
        }
        None => sim::simulate(model, config)?,
    };
    Ok(serde_json::to_value(est).expect("estimates serialize"))
}

pub fn estimate(model: &NetworkModel, registry: &Registry, method: &str) -> Result<Value> {
    let e = registry.estimate(method, model)?;
    Ok(serde_json::to_value(e).expect("estimate serializes"))
}

pub fn list_methods(registry: &Registry) -> String {
    registry
        .names()
        .into_iter()
        .map(|n| format!("{n:<20} {}\n", registry.get(n).map(|e| e.description()).unwrap_or("")))
        .collect()
}

pub fn validate(rows: &[usize], sim: Option<&SimConfig>) -> Result<benchmark::ValidationReport> {
    benchmark::validate(rows, sim)
}
