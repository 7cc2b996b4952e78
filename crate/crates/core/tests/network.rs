use std::path::Path;

use lpsnet::estimator::Registry;
use lpsnet::heavy_traffic;
use lpsnet::sim::{simulate, Estimate, SimConfig};
use lpsnet::{fit_hyperexp, ModelFile, NetworkModel, Node, ServiceDistribution};

fn models_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn shipped_models() -> Vec<(String, ModelFile)> {
    let mut out: Vec<_> = std::fs::read_dir(models_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| (p.display().to_string(), ModelFile::read(&p).unwrap()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn shipped_models_parse_and_round_trip() {
    let models = shipped_models();
    assert!(models.len() >= 4);
    for (name, file) in models {
        let model = file.to_model().unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = ModelFile::parse(&file.to_toml()).unwrap();
        assert_eq!(again.to_model().unwrap(), model, "{name}");
        assert_eq!(ModelFile::parse(&again.to_toml()).unwrap().to_toml(), again.to_toml(), "{name}");
    }
}

#[test]
fn littles_law_in_simulation() {
    let three = ModelFile::read(&models_dir().join("three_node.toml")).unwrap().to_model().unwrap();
    let row1 = lpsnet::benchmark::ROWS[0].model().unwrap();
    let config = SimConfig { horizon: 200_000, replications: 10, ..SimConfig::default() };
    for model in [three, row1] {
        let est = simulate(&model, &config).unwrap();
        let lambda = model.lambda_total();
        let diffs: Vec<f64> =
            est.per_replication.iter().map(|r| r.mean_population - lambda * r.mean_sojourn).collect();
        let d = Estimate::from_samples(&diffs, config.confidence);
        assert!(d.covers(0.0), "L - λV = {} ± {}", d.mean, d.half_width_or_zero());
        let total: f64 = est.mean_queue.iter().map(|q| q.mean).sum();
        assert!((total - est.mean_population.mean).abs() < 1e-9 * total.max(1.0));
    }
}

#[test]
fn estimators_agree_on_exponential_tandem() {
    let exp = |m| ServiceDistribution::exponential(m).unwrap();
    let model = NetworkModel::tandem([exp(1.0), exp(2.0)], [3, 5], 0.6).unwrap();
    let config = SimConfig { horizon: 200_000, replications: 8, confidence: 0.99, ..SimConfig::default() };
    let registry = Registry::with_defaults(config, 60);
    let exact = registry.estimate("ctmc", &model).unwrap();
    let sim = registry.estimate("simulation", &model).unwrap();
    let hw = sim.half_width.unwrap();
    assert!(
        (sim.mean_sojourn - exact.mean_sojourn).abs() <= hw,
        "{} ± {hw} vs {}",
        sim.mean_sojourn,
        exact.mean_sojourn
    );
    let ht = registry.estimate("heavy-traffic", &model).unwrap();
    assert!((ht.mean_sojourn - exact.mean_sojourn).abs() / exact.mean_sojourn < 0.15);
    assert!(registry.estimate("avi-itzhak-halfin", &model).is_err());
}

#[test]
fn approximation_tracks_simulation_on_general_network() {
    let model = NetworkModel::new(
        vec![
            Node::new(0.15, fit_hyperexp(1.0, 3.0).unwrap(), 4),
            Node::new(0.05, ServiceDistribution::deterministic(0.5).unwrap(), 3),
            Node::new(0.0, fit_hyperexp(2.0, 2.0).unwrap(), 6),
        ],
        vec![vec![0.0, 0.6, 0.3], vec![0.0, 0.0, 1.0], vec![0.2, 0.0, 0.0]],
    )
    .unwrap();
    let ht = heavy_traffic::summarize(&model).unwrap();
    let config = SimConfig { horizon: 200_000, replications: 6, ..SimConfig::default() };
    let sim = simulate(&model, &config).unwrap();
    let rel = (ht.ev - sim.mean_sojourn.mean).abs() / sim.mean_sojourn.mean;
    assert!(rel < 0.15, "approximation {} vs simulation {}", ht.ev, sim.mean_sojourn.mean);
}

#[test]
fn scenario_rescales_arrivals() {
    let file = ModelFile::read(&models_dir().join("tandem_hyperexp.toml")).unwrap();
    let base = file.to_model().unwrap();
    let heavy = file.scenario_model(Some("heavy")).unwrap();
    let ratio = heavy.nodes[0].arrival_rate / base.nodes[0].arrival_rate;
    assert!((ratio - 0.95 / 0.7).abs() < 1e-12);
    assert!(heavy_traffic::mean_sojourn(&heavy).unwrap() > heavy_traffic::mean_sojourn(&base).unwrap());
}
