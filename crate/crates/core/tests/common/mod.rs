//! Instances and a loop-based reference evaluation shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use mate_core::datagen::od_vector;
use mate_core::network::{k_shortest_paths, Interaction, Link, Network};
use mate_core::observations::{FeatureMatrix, ObservationSet, Sample};
use mate_core::params::{ModelParams, ParamSpec, PeriodTable};
use mate_core::train::TrainConfig;
use mate_core::NetworkModel;

pub fn rng(seed: u64, name: &str) -> ChaCha8Rng {
    mate_core::rng::substream(seed, name)
}

/// Sioux Falls with three free-flow shortest paths per O-D pair and its trip table.
pub fn sioux_falls() -> (NetworkModel, Vec<f64>) {
    let (net, od) = mate_core::data::sioux_falls().unwrap();
    let paths = k_shortest_paths(&net, &od.pairs(), 3, &net.free_flow_times()).unwrap();
    let model = NetworkModel::new(net, paths, Interaction::SharedNode).unwrap();
    let base = od_vector(&model, &od);
    (model, base)
}

/// Parameter and training settings of the shipped Sioux Falls preset.
pub fn preset() -> (ParamSpec, TrainConfig) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/siouxfalls.json");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let spec = serde_json::from_value(v["params"].clone()).unwrap();
    let mut config: TrainConfig = serde_json::from_value(v["train"].clone()).unwrap();
    config.seed = v["seed"].as_u64().unwrap_or(0);
    (spec, config)
}

pub fn random_interaction<R: Rng>(rng: &mut R) -> Interaction {
    match rng.random_range(0..3) {
        0 => Interaction::Diagonal,
        1 => Interaction::SharedNode,
        _ => Interaction::UpstreamDownstream,
    }
}

fn random_link<R: Rng>(rng: &mut R, tail: usize, head: usize) -> Link {
    Link {
        tail,
        head,
        capacity: rng.random_range(500.0..4000.0),
        free_flow_time: rng.random_range(1.0..6.0),
    }
}

/// Strongly connected network with at most ten links: a 2×2 grid or a
/// two-way ring of five nodes.
pub fn tiny_network<R: Rng>(rng: &mut R) -> Network {
    if rng.random_bool(0.5) {
        return Network::grid(2, 2, rng).unwrap();
    }
    let n = 5;
    let mut links = Vec::new();
    for v in 0..n {
        let w = (v + 1) % n;
        links.push(random_link(rng, v, w));
        links.push(random_link(rng, w, v));
    }
    Network::new((1..=n as u64).collect(), links).unwrap()
}

pub fn random_pairs<R: Rng>(rng: &mut R, nodes: usize, count: usize) -> Vec<(usize, usize)> {
    let count = count.min(nodes * (nodes - 1));
    let mut od = Vec::new();
    while od.len() < count {
        let pair = (rng.random_range(0..nodes), rng.random_range(0..nodes));
        if pair.0 != pair.1 && !od.contains(&pair) {
            od.push(pair);
        }
    }
    od.sort_unstable();
    od
}

pub fn model_on<R: Rng>(rng: &mut R, net: Network, num_od: usize, k: usize) -> NetworkModel {
    let od = random_pairs(rng, net.num_nodes(), num_od);
    let paths = k_shortest_paths(&net, &od, k, &net.free_flow_times()).unwrap();
    let interaction = random_interaction(rng);
    NetworkModel::new(net, paths, interaction).unwrap()
}

pub fn random_grid_model<R: Rng>(rng: &mut R) -> NetworkModel {
    let rows = rng.random_range(2..=4);
    let cols = rng.random_range(2..=4);
    let net = Network::grid(rows, cols, rng).unwrap();
    let num_od = rng.random_range(1..=8);
    let k = rng.random_range(1..=3);
    model_on(rng, net, num_od, k)
}

fn features<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Arc<FeatureMatrix> {
    let data = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
    Arc::new(FeatureMatrix::new(rows, cols, data).unwrap())
}

/// Random measurements with about `missing` of the entries absent.
pub fn random_obs<R: Rng>(
    rng: &mut R,
    model: &NetworkModel,
    periods: usize,
    samples: usize,
    kz: usize,
    ko: usize,
    missing: f64,
) -> ObservationSet {
    let a = model.num_links();
    let v = model.num_nodes();
    let mut out = Vec::new();
    for i in 0..samples {
        let mut draw = |scale: f64| -> Vec<Option<f64>> {
            (0..a)
                .map(|_| (rng.random_range(0.0..1.0) >= missing).then(|| scale * rng.random_range(0.1..2.0)))
                .collect()
        };
        let flows = draw(500.0);
        let times = draw(3.0);
        out.push(Sample {
            id: format!("s{i}"),
            period: i % periods,
            flows,
            times,
            link_features: features(rng, a, kz),
            node_features: features(rng, v, ko),
        });
    }
    ObservationSet {
        periods: (0..periods).map(|t| format!("t{t}")).collect(),
        link_feature_names: (0..kz).map(|j| format!("z{j}")).collect(),
        node_feature_names: (0..ko).map(|j| format!("o{j}")).collect(),
        samples: out,
        reference_generation: (0..periods)
            .map(|_| Some((0..v).map(|_| rng.random_range(0.0..300.0)).collect()))
            .collect(),
        reference_od: (0..periods)
            .map(|_| {
                Some(
                    (0..model.num_od_pairs())
                        .map(|_| rng.random_range(0.0..100.0))
                        .collect(),
                )
            })
            .collect(),
        flow_std_fallback: None,
    }
}

/// Feasible parameters with every value strictly inside its bounds.
pub fn random_params<R: Rng>(rng: &mut R, model: &NetworkModel, obs: &ObservationSet, degree: usize) -> ModelParams {
    let mut p = ModelParams::zeros(
        obs.periods.clone(),
        &model.incidences.e,
        obs.num_link_features(),
        obs.num_node_features(),
        model.num_nodes(),
        model.num_od_pairs(),
        degree,
    );
    let rows: Vec<Vec<f64>> = (0..obs.num_periods())
        .map(|_| {
            model
                .capacities()
                .iter()
                .map(|c| c * rng.random_range(0.05..1.2))
                .collect()
        })
        .collect();
    p.link_flows = PeriodTable::from_rows(&rows).unwrap();
    let mut fill = |v: &mut [f64], lo: f64, hi: f64| v.iter_mut().for_each(|x| *x = rng.random_range(lo..hi));
    fill(p.theta.data_mut(), -2.0, -0.2);
    fill(&mut p.gamma, -0.5, 0.5);
    fill(&mut p.kernel, 0.05, 1.5);
    fill(&mut p.poly, 0.05, 1.0);
    fill(p.kappa.data_mut(), -20.0, 20.0);
    fill(p.delta.data_mut(), 30.0, 300.0);
    fill(p.omega.data_mut(), -1.0, 1.0);
    p
}

/// Every quantity of the forward chain, computed link by link and path by path.
#[derive(Debug, Clone)]
pub struct Reference {
    pub times_hat: Vec<f64>,
    pub path_utilities: Vec<f64>,
    pub path_probs: Vec<f64>,
    pub generation: Vec<f64>,
    pub dest_probs: Vec<f64>,
    pub od_flows: Vec<f64>,
    pub path_flows: Vec<f64>,
    pub link_flows: Vec<f64>,
    pub times: Vec<f64>,
}

fn times_of(model: &NetworkModel, params: &ModelParams, x: &[f64]) -> Vec<f64> {
    let caps = model.capacities();
    let y: Vec<f64> = x
        .iter()
        .zip(caps)
        .map(|(&xa, &c)| {
            let u = xa / c;
            params
                .poly
                .iter()
                .enumerate()
                .map(|(k, b)| b * u.powi(k as i32 + 1))
                .sum()
        })
        .collect();
    let mut wy = vec![0.0; x.len()];
    for (&(a, b), w) in params.kernel_index.iter().zip(&params.kernel) {
        wy[a] += w * y[b];
    }
    model
        .free_flow_times()
        .iter()
        .zip(&wy)
        .map(|(t, s)| t * (1.0 + s))
        .collect()
}

/// p_i = 1 / Σ_j exp(v_j − v_i)
fn softmax_over(values: &[f64], members: &[usize], out: &mut [f64]) {
    for &i in members {
        out[i] = 1.0 / members.iter().map(|&j| (values[j] - values[i]).exp()).sum::<f64>();
    }
}

pub fn reference(model: &NetworkModel, params: &ModelParams, sample: &Sample) -> Reference {
    let t = sample.period;
    let paths = &model.paths;
    let times_hat = times_of(model, params, params.link_flows.row(t));
    let theta = params.theta.row(t);
    let link_u: Vec<f64> = (0..model.num_links())
        .map(|a| {
            let z = sample.link_features.row(a);
            theta[0] * times_hat[a] + z.iter().zip(&theta[1..]).map(|(z, w)| z * w).sum::<f64>() + params.gamma[a]
        })
        .collect();
    let path_utilities: Vec<f64> = paths
        .paths
        .iter()
        .map(|p| p.links.iter().map(|&a| link_u[a]).sum())
        .collect();
    let mut path_probs = vec![0.0; paths.num_paths()];
    for w in 0..paths.num_od_pairs() {
        let members: Vec<usize> = (0..paths.num_paths()).filter(|&k| paths.paths[k].od == w).collect();
        softmax_over(&path_utilities, &members, &mut path_probs);
    }
    let kappa = params.kappa.row(t);
    let delta = params.delta.row(t);
    let generation: Vec<f64> = (0..model.num_nodes())
        .map(|v| {
            let o = sample.node_features.row(v);
            (o.iter().zip(kappa).map(|(a, b)| a * b).sum::<f64>() + delta[v]).max(0.0)
        })
        .collect();
    let omega = params.omega.row(t);
    let mut dest_probs = vec![0.0; paths.num_od_pairs()];
    for v in 0..model.num_nodes() {
        let members: Vec<usize> = (0..paths.num_od_pairs())
            .filter(|&w| paths.od_pairs[w].0 == v)
            .collect();
        if !members.is_empty() {
            softmax_over(omega, &members, &mut dest_probs);
        }
    }
    let od_flows: Vec<f64> = (0..paths.num_od_pairs())
        .map(|w| generation[paths.od_pairs[w].0] * dest_probs[w])
        .collect();
    let path_flows: Vec<f64> = paths
        .paths
        .iter()
        .enumerate()
        .map(|(k, p)| od_flows[p.od] * path_probs[k])
        .collect();
    let mut link_flows = vec![0.0; model.num_links()];
    for (p, f) in paths.paths.iter().zip(&path_flows) {
        for &a in &p.links {
            link_flows[a] += f;
        }
    }
    let times = times_of(model, params, &link_flows);
    Reference {
        times_hat,
        path_utilities,
        path_probs,
        generation,
        dest_probs,
        od_flows,
        path_flows,
        link_flows,
        times,
    }
}

/// Largest elementwise discrepancy relative to max(|a|, |b|, 1).
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let e = (x - y).abs() / x.abs().max(y.abs()).max(1.0);
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        })
        .fold(0.0, f64::max)
}
