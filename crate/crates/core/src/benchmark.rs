//! The sixteen two-node tandem benchmarks: hyper-exponential service at
//! load 0.7, with reference values for the heavy-traffic approximation and
//! for simulation. Rows are numbered from 1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::fit_hyperexp;
use crate::error::{Error, Result};
use crate::estimator::{HeavyTraffic, Simulation, SojournEstimator};
use crate::model::NetworkModel;
use crate::sim::{Estimate, SimConfig};

pub const LOAD: f64 = 0.7;
/// Reference approximation values are rounded to two decimals.
pub const APPROXIMATION_TOLERANCE: f64 = 0.01;
pub const SIMULATION_RELATIVE_TOLERANCE: f64 = 0.05;
/// Simulated rows that must agree, out of 16.
pub const SIMULATION_REQUIRED: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub row: usize,
    pub beta: [f64; 2],
    pub scv: [f64; 2],
    pub servers: [u64; 2],
    pub approximation: f64,
    pub simulation: f64,
}

const fn row(
    row: usize,
    b: (f64, f64, f64, f64, u64, u64),
    approximation: f64,
    simulation: f64,
) -> BenchmarkRow {
    BenchmarkRow { row, beta: [b.0, b.1], scv: [b.2, b.3], servers: [b.4, b.5], approximation, simulation }
}

pub const ROWS: [BenchmarkRow; 16] = [
    row(1, (1.0, 2.0, 4.0, 4.0, 3, 7), 10.24, 10.41),
    row(2, (1.0, 2.0, 4.0, 10.0, 4, 6), 11.37, 10.71),
    row(3, (1.0, 2.0, 10.0, 4.0, 4, 6), 10.77, 10.57),
    row(4, (1.0, 2.0, 10.0, 10.0, 4, 6), 11.58, 10.87),
    row(5, (2.0, 1.0, 4.0, 4.0, 6, 4), 10.24, 10.49),
    row(6, (2.0, 1.0, 4.0, 10.0, 6, 4), 10.38, 10.70),
    row(7, (2.0, 1.0, 10.0, 4.0, 6, 4), 10.78, 10.98),
    row(8, (2.0, 1.0, 10.0, 10.0, 6, 4), 10.91, 11.18),
    row(9, (1.0, 10.0, 4.0, 4.0, 2, 8), 38.86, 37.43),
    row(10, (1.0, 10.0, 4.0, 10.0, 2, 8), 43.20, 37.83),
    row(11, (1.0, 10.0, 10.0, 4.0, 2, 8), 38.91, 37.53),
    row(12, (1.0, 10.0, 10.0, 10.0, 2, 8), 43.24, 37.97),
    row(13, (10.0, 1.0, 4.0, 4.0, 8, 2), 38.52, 38.88),
    row(14, (10.0, 1.0, 4.0, 10.0, 8, 2), 38.56, 39.11),
    row(15, (10.0, 1.0, 10.0, 4.0, 8, 2), 42.46, 40.77),
    row(16, (10.0, 1.0, 10.0, 10.0, 8, 2), 42.50, 41.00),
];

impl BenchmarkRow {
    pub fn model(&self) -> Result<NetworkModel> {
        let s0 = fit_hyperexp(self.beta[0], self.scv[0])?;
        let s1 = fit_hyperexp(self.beta[1], self.scv[1])?;
        NetworkModel::tandem([s0, s1], self.servers, LOAD)
    }
}

pub fn lookup(row: usize) -> Result<&'static BenchmarkRow> {
    ROWS.iter()
        .find(|r| r.row == row)
        .ok_or_else(|| Error::InvalidArgument(format!("no benchmark row {row} (rows are 1..=16)")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub row: usize,
    pub approximation: f64,
    pub approximation_reference: f64,
    pub approximation_pass: bool,
    pub simulation: Option<Estimate>,
    pub simulation_reference: f64,
    pub simulation_relative_error: Option<f64>,
    pub simulation_pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<RowReport>,
    pub approximation_passed: usize,
    pub simulation_run: usize,
    pub simulation_passed: usize,
    /// Agreeing simulated rows needed, scaled from 14 of 16 for subsets.
    pub simulation_required: usize,
    pub simulation: Option<SimConfig>,
    pub passed: bool,
}

/// Compares the chosen rows (all when empty) against the reference values.
/// Simulation is skipped when `sim` is `None`.
pub fn validate(rows: &[usize], sim: Option<&SimConfig>) -> Result<ValidationReport> {
    let selected: Vec<&BenchmarkRow> = if rows.is_empty() {
        ROWS.iter().collect()
    } else {
        rows.iter().map(|&r| lookup(r)).collect::<Result<_>>()?
    };
    if let Some(c) = sim {
        c.validate()?;
    }
    let reports = selected.par_iter().map(|r| check_row(r, sim)).collect::<Result<Vec<_>>>()?;

    let approximation_passed = reports.iter().filter(|r| r.approximation_pass).count();
    let simulation_run = reports.iter().filter(|r| r.simulation.is_some()).count();
    let simulation_passed = reports.iter().filter(|r| r.simulation_pass == Some(true)).count();
    let simulation_required = (simulation_run * SIMULATION_REQUIRED).div_ceil(ROWS.len());
    let passed = approximation_passed == reports.len() && simulation_passed >= simulation_required;
    Ok(ValidationReport {
        rows: reports,
        approximation_passed,
        simulation_run,
        simulation_passed,
        simulation_required,
        simulation: sim.copied(),
        passed,
    })
}

fn check_row(r: &BenchmarkRow, sim: Option<&SimConfig>) -> Result<RowReport> {
    let model = r.model()?;
    let approx = HeavyTraffic.estimate(&model)?.mean_sojourn;
    let (simulation, rel, pass) = match sim {
        Some(config) => {
            let e = Simulation { config: *config }.estimate(&model)?;
            let est = Estimate { mean: e.mean_sojourn, half_width: e.half_width };
            let rel = (est.mean - r.simulation).abs() / r.simulation;
            let pass = rel <= SIMULATION_RELATIVE_TOLERANCE || est.covers(r.simulation);
            (Some(est), Some(rel), Some(pass))
        }
        None => (None, None, None),
    };
    Ok(RowReport {
        row: r.row,
        approximation: approx,
        approximation_reference: r.approximation,
        approximation_pass: (approx - r.approximation).abs() <= APPROXIMATION_TOLERANCE,
        simulation,
        simulation_reference: r.simulation,
        simulation_relative_error: rel,
        simulation_pass: pass,
    })
}

/// Six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.5e}");
    }
    format!("{:.*}", (5 - mag).max(0) as usize, x)
}

/// Plain-text table of a validation report.
pub fn render(report: &ValidationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>3}  {:>10} {:>10} {:>4}  {:>10} {:>10} {:>10} {:>9} {:>4}\n",
        "row", "approx", "ref", "ok", "sim", "+/-", "ref", "rel.err", "ok"
    ));
    let mark = |b: bool| if b { "pass" } else { "FAIL" };
    for r in &report.rows {
        out.push_str(&format!(
            "{:>3}  {:>10} {:>10} {:>4}",
            r.row,
            sig6(r.approximation),
            sig6(r.approximation_reference),
            mark(r.approximation_pass)
        ));
        match (&r.simulation, r.simulation_relative_error, r.simulation_pass) {
            (Some(s), Some(rel), Some(ok)) => out.push_str(&format!(
                "  {:>10} {:>10} {:>10} {:>9} {:>4}\n",
                sig6(s.mean),
                s.half_width.map(sig6).unwrap_or_else(|| "-".into()),
                sig6(r.simulation_reference),
                sig6(rel),
                mark(ok)
            )),
            _ => out.push_str(&format!(
                "  {:>10} {:>10} {:>10} {:>9} {:>4}\n",
                "-",
                "-",
                sig6(r.simulation_reference),
                "-",
                "-"
            )),
        }
    }
    out.push_str(&format!(
        "approximation: {}/{} within {}\n",
        report.approximation_passed,
        report.rows.len(),
        APPROXIMATION_TOLERANCE
    ));
    if report.simulation_run > 0 {
        out.push_str(&format!(
            "simulation: {}/{} within {}% or covered by the CI (need {})\n",
            report.simulation_passed,
            report.simulation_run,
            SIMULATION_RELATIVE_TOLERANCE * 100.0,
            report.simulation_required
        ));
    }
    out.push_str(if report.passed { "PASS\n" } else { "FAIL\n" });
    out
}
