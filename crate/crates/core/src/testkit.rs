//! Small instances shared by unit tests.

use std::sync::Arc;

use rand::Rng;

use crate::model::NetworkModel;
use crate::network::fixtures::toy_network;
use crate::network::{k_shortest_paths, Interaction, Network};
use crate::observations::{FeatureMatrix, ObservationSet, Sample};
use crate::params::{ModelParams, PeriodTable};

/// The five-node network with O-D pairs 1→4 and 1→5 and two paths each,
/// ordered (1-2-4, 1-3-4, 1-2-5, 1-3-5).
pub fn toy_model(interaction: Interaction) -> NetworkModel {
    let net = toy_network();
    let n = |l| net.node_index(l).unwrap();
    let od = [(n(1), n(4)), (n(1), n(5))];
    let paths = k_shortest_paths(&net, &od, 2, &net.free_flow_times()).unwrap();
    NetworkModel::new(net, paths, interaction).unwrap()
}

/// Strongly connected grid with `num_od` random O-D pairs and up to `k` paths each.
pub fn random_model<R: Rng>(rng: &mut R, rows: usize, cols: usize, num_od: usize, k: usize) -> NetworkModel {
    let net = Network::grid(rows, cols, rng).unwrap();
    let n = net.num_nodes();
    let mut od = Vec::new();
    while od.len() < num_od {
        let pair = (rng.random_range(0..n), rng.random_range(0..n));
        if pair.0 != pair.1 && !od.contains(&pair) {
            od.push(pair);
        }
    }
    od.sort_unstable();
    let paths = k_shortest_paths(&net, &od, k, &net.free_flow_times()).unwrap();
    let interaction = match rng.random_range(0..3) {
        0 => Interaction::Diagonal,
        1 => Interaction::SharedNode,
        _ => Interaction::UpstreamDownstream,
    };
    NetworkModel::new(net, paths, interaction).unwrap()
}

fn random_features<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Arc<FeatureMatrix> {
    let data = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
    Arc::new(FeatureMatrix::new(rows, cols, data).unwrap())
}

/// Random observations with roughly `missing` of the entries absent.
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
        let period = i % periods;
        let mut draw = |scale: f64| -> Vec<Option<f64>> {
            (0..a)
                .map(|_| (rng.random_range(0.0..1.0) >= missing).then(|| scale * rng.random_range(0.1..2.0)))
                .collect()
        };
        let flows = draw(500.0);
        let times = draw(3.0);
        out.push(Sample {
            id: i.to_string(),
            period,
            flows,
            times,
            link_features: random_features(rng, a, kz),
            node_features: random_features(rng, v, ko),
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

/// Feasible random parameters with every value away from its bounds.
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
    let t = obs.num_periods();
    let caps = model.capacities().to_vec();
    let rows: Vec<Vec<f64>> = (0..t)
        .map(|_| caps.iter().map(|c| c * rng.random_range(0.05..1.2)).collect())
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
