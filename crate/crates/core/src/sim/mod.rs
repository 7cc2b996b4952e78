//! Discrete-event simulation of the layered network.
//!
//! Each node admits up to `K_i` jobs into service in FCFS order; every
//! in-service job in the network receives an equal share `1/B` of the CPU,
//! `B` being the total number of busy servers. Because all in-service jobs
//! deplete at the same rate, the engine tracks a single virtual clock
//! (attained service per in-service job) and keeps in-service jobs in a heap
//! keyed by the virtual time at which they finish.

pub mod ctmc;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::distributions::ServiceDistribution;
use crate::error::{Error, Result};
use crate::model::NetworkModel;

pub const RNG_NAME: &str = "pcg64";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub replications: usize,
    /// System departures per replication, warmup included.
    pub horizon: u64,
    pub warmup_fraction: f64,
    pub confidence: f64,
    /// Check server discipline and work conservation at every event.
    #[serde(default)]
    pub check_invariants: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            replications: 10,
            horizon: 1_000_000,
            warmup_fraction: 0.2,
            confidence: 0.95,
            check_invariants: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("at least one replication is required".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidArgument("warmup fraction must lie in [0, 1)".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidArgument("confidence level must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn warmup_jobs(&self) -> u64 {
        (self.warmup_fraction * self.horizon as f64).floor() as u64
    }
}

/// Point estimate with a Student-t confidence half-width over replication
/// means. The half-width is absent for a single replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: Option<f64>,
}

impl Estimate {
    pub fn from_samples(xs: &[f64], confidence: f64) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self { mean, half_width: None };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("degrees of freedom are positive")
            .inverse_cdf(0.5 + confidence / 2.0);
        Self { mean, half_width: Some(t * (var / n as f64).sqrt()) }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.half_width.is_some_and(|h| (value - self.mean).abs() <= h)
    }

    pub fn half_width_or_zero(&self) -> f64 {
        self.half_width.unwrap_or(0.0)
    }
}

/// Raw output of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub mean_sojourn: f64,
    pub completed: u64,
    pub delay_fraction: Vec<f64>,
    pub mean_queue: Vec<f64>,
    pub mean_population: f64,
    pub throughput: f64,
    pub elapsed_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEstimates {
    pub rng: String,
    pub seed: u64,
    pub replications: usize,
    pub horizon: u64,
    pub warmup_jobs: u64,
    pub confidence: f64,
    pub mean_sojourn: Estimate,
    /// Fraction of arrivals to each node that found all its servers busy.
    pub delay_probability: Vec<Estimate>,
    pub bottleneck: usize,
    pub bottleneck_delay: Estimate,
    pub mean_queue: Vec<Estimate>,
    pub mean_population: Estimate,
    pub throughput: Estimate,
    pub per_replication: Vec<ReplicationResult>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
struct Job {
    id: u64,
    entry: f64,
    /// Position in the arrival order at the current node.
    node_seq: u64,
    requirement: f64,
    path: Vec<u16>,
}

#[derive(Debug)]
struct InService {
    finish: f64,
    node: usize,
    job: Job,
}

impl PartialEq for InService {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for InService {}

impl PartialOrd for InService {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InService {
    // Reversed so the std max-heap pops the earliest finish first; ties go
    // to the lower node index, then to the earlier arrival at the node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .finish
            .total_cmp(&self.finish)
            .then_with(|| other.node.cmp(&self.node))
            .then_with(|| other.job.node_seq.cmp(&self.job.node_seq))
    }
}

struct Streams {
    arrivals: Vec<Pcg64>,
    services: Vec<Pcg64>,
    routing: Pcg64,
}

impl Streams {
    fn new(seed: u64, replication: usize, nodes: usize) -> Self {
        let state = ((seed as u128) << 64) | 0x853c_49e6_748f_ea9b_u128;
        let base = (replication as u128) * (2 * nodes as u128 + 1);
        let stream = |k: usize| Pcg64::new(state, base + k as u128);
        Self {
            arrivals: (0..nodes).map(stream).collect(),
            services: (0..nodes).map(|i| stream(nodes + i)).collect(),
            routing: stream(2 * nodes),
        }
    }
}

struct Engine<'a> {
    services: Vec<ServiceDistribution>,
    servers: Vec<u64>,
    routing: &'a [Vec<f64>],
    interarrival: Vec<Option<Exp<f64>>>,
    streams: Streams,
    check: bool,
    tracing: bool,

    t: f64,
    /// Service attained by every in-service job since the start.
    virtual_time: f64,
    busy: u64,
    x: Vec<u64>,
    in_service: Vec<u64>,
    waiting: Vec<VecDeque<Job>>,
    heap: BinaryHeap<InService>,
    next_arrival: Vec<f64>,
    next_job_id: u64,
    node_arrivals: Vec<u64>,
    last_admitted: Vec<Option<u64>>,

    measuring: bool,
    t0: f64,
    area: Vec<f64>,
    arrivals_seen: Vec<u64>,
    delayed: Vec<u64>,
    sojourn_sum: f64,
    sojourn_count: u64,
    departures: u64,
}

impl<'a> Engine<'a> {
    fn new(model: &'a NetworkModel, config: &SimConfig, replication: usize) -> Result<Self> {
        let j = model.num_nodes();
        let mut streams = Streams::new(config.seed, replication, j);
        let interarrival: Vec<Option<Exp<f64>>> = model
            .nodes
            .iter()
            .map(|n| {
                if n.arrival_rate > 0.0 {
                    Exp::new(n.arrival_rate).map(Some).map_err(|e| Error::InvalidArgument(e.to_string()))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        let next_arrival = interarrival
            .iter()
            .zip(streams.arrivals.iter_mut())
            .map(|(d, rng)| d.as_ref().map_or(f64::INFINITY, |d| d.sample(rng)))
            .collect();
        Ok(Self {
            services: model.nodes.iter().map(|n| n.service).collect(),
            servers: model.servers(),
            routing: &model.routing,
            interarrival,
            streams,
            check: config.check_invariants,
            tracing: false,
            t: 0.0,
            virtual_time: 0.0,
            busy: 0,
            x: vec![0; j],
            in_service: vec![0; j],
            waiting: (0..j).map(|_| VecDeque::new()).collect(),
            heap: BinaryHeap::new(),
            next_arrival,
            next_job_id: 0,
            node_arrivals: vec![0; j],
            last_admitted: vec![None; j],
            measuring: false,
            t0: 0.0,
            area: vec![0.0; j],
            arrivals_seen: vec![0; j],
            delayed: vec![0; j],
            sojourn_sum: 0.0,
            sojourn_count: 0,
            departures: 0,
        })
    }

    fn remaining_work(&self) -> f64 {
        self.heap.iter().map(|s| s.finish - self.virtual_time).sum()
    }

    fn advance(&mut self, t_new: f64) -> Result<()> {
        let dt = t_new - self.t;
        if !dt.is_finite() || dt < -1e-9 * self.t.max(1.0) {
            return Err(Error::NonFinite(format!(
                "time advance {dt} at t = {} (populations {:?}, busy {})",
                self.t, self.x, self.busy
            )));
        }
        let dt = dt.max(0.0);
        let before = if self.check && self.busy > 0 { Some(self.remaining_work()) } else { None };
        if self.measuring {
            for (a, &xi) in self.area.iter_mut().zip(&self.x) {
                *a += xi as f64 * dt;
            }
        }
        if self.busy > 0 {
            self.virtual_time += dt / self.busy as f64;
        }
        self.t = t_new.max(self.t);
        if let Some(before) = before {
            let after = self.remaining_work();
            let drop = before - after;
            if (drop - dt).abs() > 1e-9 * before.max(1.0) {
                return Err(Error::Invariant(format!(
                    "remaining work fell by {drop} over an interval of {dt}"
                )));
            }
        }
        Ok(())
    }

    fn admit(&mut self, node: usize, job: Job) -> Result<()> {
        if self.check {
            if let Some(last) = self.last_admitted[node] {
                if job.node_seq <= last {
                    return Err(Error::Invariant(format!("job overtook within node {node}")));
                }
            }
            self.last_admitted[node] = Some(job.node_seq);
        }
        self.in_service[node] += 1;
        self.busy += 1;
        self.heap.push(InService { finish: self.virtual_time + job.requirement, node, job });
        Ok(())
    }

    fn arrive(&mut self, node: usize, mut job: Job) -> Result<()> {
        if self.measuring {
            self.arrivals_seen[node] += 1;
            if self.x[node] >= self.servers[node] {
                self.delayed[node] += 1;
            }
        }
        self.x[node] += 1;
        job.node_seq = self.node_arrivals[node];
        self.node_arrivals[node] += 1;
        job.requirement = self.services[node].sample(&mut self.streams.services[node]);
        if self.tracing {
            job.path.push(node as u16);
        }
        if self.in_service[node] < self.servers[node] {
            self.admit(node, job)
        } else {
            self.waiting[node].push_back(job);
            Ok(())
        }
    }

    fn check_discipline(&self) -> Result<()> {
        for i in 0..self.x.len() {
            let want = self.x[i].min(self.servers[i]);
            if self.in_service[i] != want || self.waiting[i].len() as u64 != self.x[i] - self.in_service[i] {
                return Err(Error::Invariant(format!(
                    "node {i}: {} in service, {} waiting, population {}",
                    self.in_service[i],
                    self.waiting[i].len(),
                    self.x[i]
                )));
            }
        }
        if self.busy != self.in_service.iter().sum::<u64>() || self.busy as usize != self.heap.len() {
            return Err(Error::Invariant("busy-server count out of sync".into()));
        }
        Ok(())
    }

    fn start_measuring(&mut self) {
        self.measuring = true;
        self.t0 = self.t;
    }

    fn run(
        mut self,
        horizon: u64,
        warmup: u64,
        mut trace: Option<&mut dyn Write>,
    ) -> Result<ReplicationResult> {
        let j = self.x.len();
        self.tracing = trace.is_some();
        if warmup == 0 {
            self.start_measuring();
        }
        let mut io_error = None;
        while self.departures < horizon {
            let t_done = self.heap.peek().map_or(f64::INFINITY, |s| {
                self.t + (s.finish - self.virtual_time).max(0.0) * self.busy as f64
            });
            let (node, t_arr) = self
                .next_arrival
                .iter()
                .enumerate()
                .fold((usize::MAX, f64::INFINITY), |b, (i, &t)| if t < b.1 { (i, t) } else { b });
            if t_done.is_infinite() && t_arr.is_infinite() {
                return Err(Error::NonFinite("no pending events".into()));
            }
            // Completions win ties with arrivals.
            if t_done <= t_arr {
                self.advance(t_done)?;
                let done = self.heap.pop().expect("peeked entry exists");
                let i = done.node;
                self.in_service[i] -= 1;
                self.busy -= 1;
                self.x[i] -= 1;
                if let Some(next) = self.waiting[i].pop_front() {
                    self.admit(i, next)?;
                }
                let u: f64 = self.streams.routing.random();
                let mut acc = 0.0;
                let mut dest = None;
                for (k, &p) in self.routing[i].iter().enumerate() {
                    acc += p;
                    if u < acc {
                        dest = Some(k);
                        break;
                    }
                }
                match dest {
                    Some(k) => self.arrive(k, done.job)?,
                    None => {
                        self.departures += 1;
                        if self.measuring {
                            self.sojourn_sum += self.t - done.job.entry;
                            self.sojourn_count += 1;
                        }
                        if let Some(w) = trace.as_deref_mut() {
                            let path: Vec<String> = done.job.path.iter().map(u16::to_string).collect();
                            if let Err(e) = writeln!(
                                w,
                                "{},{},{},{}",
                                done.job.id,
                                done.job.entry,
                                self.t,
                                path.join(">")
                            ) {
                                io_error.get_or_insert(e);
                            }
                        }
                        if !self.measuring && self.departures == warmup {
                            self.start_measuring();
                        }
                    }
                }
            } else {
                self.advance(t_arr)?;
                let gap = self.interarrival[node]
                    .as_ref()
                    .expect("arrival stream exists")
                    .sample(&mut self.streams.arrivals[node]);
                self.next_arrival[node] = self.t + gap;
                let id = self.next_job_id;
                self.next_job_id += 1;
                let job = Job { id, entry: self.t, node_seq: 0, requirement: 0.0, path: Vec::new() };
                self.arrive(node, job)?;
            }
            if self.check {
                self.check_discipline()?;
            }
        }
        if let Some(e) = io_error {
            return Err(Error::InvalidArgument(format!("trace output failed: {e}")));
        }
        let elapsed = self.t - self.t0;
        let mean_queue: Vec<f64> = self.area.iter().map(|a| a / elapsed).collect();
        Ok(ReplicationResult {
            mean_sojourn: self.sojourn_sum / self.sojourn_count as f64,
            completed: self.sojourn_count,
            delay_fraction: (0..j)
                .map(|i| {
                    if self.arrivals_seen[i] == 0 {
                        0.0
                    } else {
                        self.delayed[i] as f64 / self.arrivals_seen[i] as f64
                    }
                })
                .collect(),
            mean_population: mean_queue.iter().sum(),
            mean_queue,
            throughput: self.sojourn_count as f64 / elapsed,
            elapsed_time: elapsed,
        })
    }
}

fn run_replication(
    model: &NetworkModel,
    config: &SimConfig,
    replication: usize,
    trace: Option<&mut dyn Write>,
) -> Result<ReplicationResult> {
    Engine::new(model, config, replication)?.run(config.horizon, config.warmup_jobs(), trace)
}

/// Runs `config.replications` independent replications and merges them in
/// replication order.
pub fn simulate(model: &NetworkModel, config: &SimConfig) -> Result<SimEstimates> {
    simulate_with_trace(model, config, None)
}

/// As [`simulate`], additionally writing a per-job CSV trace of the first
/// replication (`job_id,entry,exit,path`).
pub fn simulate_with_trace(
    model: &NetworkModel,
    config: &SimConfig,
    trace: Option<&mut dyn Write>,
) -> Result<SimEstimates> {
    config.validate()?;
    let errors: Vec<String> = model
        .validate()
        .into_iter()
        .filter(|v| v.severity == crate::model::Severity::Error)
        .map(|v| v.message)
        .collect();
    if !errors.is_empty() {
        return Err(Error::InvalidModel(errors.join("; ")));
    }
    let mut warnings = Vec::new();
    let util = model.utilization()?;
    if !util.stable {
        warnings.push(format!("load {} >= 1: estimates will not converge", util.rho));
    }
    let bottleneck = model.find_bottleneck()?;
    if config.warmup_jobs() >= config.horizon {
        return Err(Error::InvalidArgument("warmup consumes the whole horizon".into()));
    }

    let mut results = Vec::with_capacity(config.replications);
    let rest_start = match trace {
        Some(w) => {
            if let Err(e) = writeln!(w, "job_id,entry,exit,path") {
                return Err(Error::InvalidArgument(format!("trace output failed: {e}")));
            }
            results.push(run_replication(model, config, 0, Some(w))?);
            1
        }
        None => 0,
    };
    let rest: Vec<ReplicationResult> = (rest_start..config.replications)
        .into_par_iter()
        .map(|r| run_replication(model, config, r, None))
        .collect::<Result<_>>()?;
    results.extend(rest);

    let j = model.num_nodes();
    let est = |f: &dyn Fn(&ReplicationResult) -> f64| {
        let xs: Vec<f64> = results.iter().map(f).collect();
        Estimate::from_samples(&xs, config.confidence)
    };
    let delay_probability: Vec<Estimate> = (0..j).map(|i| est(&|r| r.delay_fraction[i])).collect();
    let mean_queue: Vec<Estimate> = (0..j).map(|i| est(&|r| r.mean_queue[i])).collect();
    Ok(SimEstimates {
        rng: RNG_NAME.to_string(),
        seed: config.seed,
        replications: config.replications,
        horizon: config.horizon,
        warmup_jobs: config.warmup_jobs(),
        confidence: config.confidence,
        mean_sojourn: est(&|r| r.mean_sojourn),
        bottleneck: bottleneck.index,
        bottleneck_delay: delay_probability[bottleneck.index],
        delay_probability,
        mean_queue,
        mean_population: est(&|r| r.mean_population),
        throughput: est(&|r| r.throughput),
        per_replication: results,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::fit_hyperexp;
    use crate::model::Node;

    fn exp(mean: f64) -> ServiceDistribution {
        ServiceDistribution::exponential(mean).unwrap()
    }

    fn quick(seed: u64, horizon: u64, reps: usize) -> SimConfig {
        SimConfig { seed, replications: reps, horizon, ..SimConfig::default() }
    }

    #[test]
    fn estimate_student_t() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0], 0.95);
        assert_eq!(e.mean, 2.0);
        // t_{0.975, 2} = 4.302653
        assert!((e.half_width.unwrap() - 4.302_652_729_911 * (1.0f64 / 3.0).sqrt()).abs() < 1e-6);
        assert!(Estimate::from_samples(&[5.0], 0.95).half_width.is_none());
        assert!(e.covers(4.0) && !e.covers(6.0));
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig { replications: 0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { horizon: 0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { warmup_fraction: 1.0, ..SimConfig::default() }.validate().is_err());
        assert_eq!(SimConfig { horizon: 1000, ..SimConfig::default() }.warmup_jobs(), 200);
    }

    #[test]
    fn invariants_hold_on_a_feedback_network() {
        let m = NetworkModel::new(
            vec![
                Node::new(0.15, fit_hyperexp(1.0, 6.0).unwrap(), 2),
                Node::new(0.05, exp(0.5), 1),
                Node::new(0.0, ServiceDistribution::deterministic(0.8).unwrap(), 3),
            ],
            vec![vec![0.0, 0.4, 0.4], vec![0.3, 0.0, 0.5], vec![0.1, 0.0, 0.0]],
        )
        .unwrap();
        let cfg = SimConfig { check_invariants: true, ..quick(3, 20_000, 2) };
        let est = simulate(&m, &cfg).unwrap();
        assert!(est.mean_sojourn.mean.is_finite());
        assert!(est.mean_sojourn.half_width.unwrap() >= 0.0);
    }

    #[test]
    fn deterministic_ties_are_handled() {
        // Identical deterministic requirements admitted together finish together.
        let m = NetworkModel::new(
            vec![Node::new(0.3, ServiceDistribution::deterministic(1.0).unwrap(), 4)],
            vec![vec![0.0]],
        )
        .unwrap();
        let cfg = SimConfig { check_invariants: true, ..quick(5, 5_000, 2) };
        assert!(simulate(&m, &cfg).is_ok());
    }

    #[test]
    fn same_seed_same_output() {
        let m = NetworkModel::tandem([exp(1.0), exp(2.0)], [2, 4], 0.7).unwrap();
        let a = simulate(&m, &quick(42, 20_000, 3)).unwrap();
        let b = simulate(&m, &quick(42, 20_000, 3)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = simulate(&m, &quick(43, 20_000, 3)).unwrap();
        assert_ne!(a.mean_sojourn.mean, c.mean_sojourn.mean);
    }

    #[test]
    fn replication_is_independent_of_batch() {
        let m = NetworkModel::tandem([exp(1.0), exp(2.0)], [2, 4], 0.7).unwrap();
        let three = simulate(&m, &quick(9, 10_000, 3)).unwrap();
        let one = simulate(&m, &quick(9, 10_000, 1)).unwrap();
        assert_eq!(three.per_replication[0], one.per_replication[0]);
    }

    #[test]
    fn trace_lists_departures() {
        let m = NetworkModel::tandem([exp(1.0), exp(2.0)], [2, 4], 0.5).unwrap();
        let mut buf = Vec::new();
        let est = simulate_with_trace(&m, &quick(1, 500, 2), Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "job_id,entry,exit,path");
        assert_eq!(lines.len(), 501);
        assert!(lines[1..].iter().all(|l| l.ends_with(",0>1")));
        let plain = simulate(&m, &quick(1, 500, 2)).unwrap();
        assert_eq!(est.per_replication, plain.per_replication);
    }

    #[test]
    fn mm1_short_run() {
        let m = NetworkModel::single(0.5, exp(1.0), 1).unwrap();
        let est = simulate(&m, &quick(7, 200_000, 4)).unwrap();
        assert!((est.mean_sojourn.mean - 2.0).abs() < 0.1, "{:?}", est.mean_sojourn);
        assert!((est.delay_probability[0].mean - 0.5).abs() < 0.02);
    }
}
