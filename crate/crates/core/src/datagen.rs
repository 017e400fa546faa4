//! Synthetic ground truth and noisy observations.
//!
//! Each period scales and perturbs a base O-D table once, solves the logit
//! equilibrium under BPR travel times with known utility weights, and then
//! emits samples as the true link flows and times plus Gaussian noise.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MateError, Result};
use crate::forward::{forward_pass, relative_gap};
use crate::model::NetworkModel;
use crate::network::{k_shortest_paths, Interaction, Network, OdTable};
use crate::observations::{FeatureMatrix, ObservationSet, Sample};
use crate::params::ModelParams;
use crate::rng::substream;

/// Utility weight given to destinations without demand.
const ZERO_DEMAND_UTILITY: f64 = -50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodSpec {
    pub name: String,
    /// Multiplier applied to the base O-D table.
    pub scale: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub periods: Vec<PeriodSpec>,
    /// O-D noise std as a fraction of the mean scaled O-D entry.
    pub od_perturbation: f64,
    /// Measurement noise std as a fraction of the period's mean true value.
    pub noise: f64,
    pub bpr_alpha: f64,
    pub bpr_power: usize,
    /// Travel-time weight followed by one weight per link feature.
    pub theta: Vec<f64>,
    pub feature_names: Vec<String>,
    /// Link features are drawn uniformly from `[feature_low, feature_high)`.
    pub feature_low: f64,
    pub feature_high: f64,
    pub seed: u64,
    /// Relative gap the ground-truth equilibrium must reach.
    pub equilibrium_gap: f64,
    pub max_iterations: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            periods: vec![
                PeriodSpec {
                    name: "peak".into(),
                    scale: 1.0,
                    samples: 200,
                },
                PeriodSpec {
                    name: "offpeak".into(),
                    scale: 0.8,
                    samples: 100,
                },
            ],
            od_perturbation: 0.10,
            noise: 0.05,
            bpr_alpha: 0.15,
            bpr_power: 4,
            theta: vec![-1.0, -1.3, -3.0],
            feature_names: vec!["tt_sd".into(), "intersections".into()],
            feature_low: 0.0,
            feature_high: 1.0,
            seed: 0,
            equilibrium_gap: 1e-6,
            max_iterations: 20_000,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MateError::Config(m));
        if self.periods.is_empty() {
            return bad("at least one period is required".into());
        }
        for (i, p) in self.periods.iter().enumerate() {
            if !(p.scale.is_finite() && p.scale > 0.0) {
                return bad(format!("period {:?}: scale must be positive", p.name));
            }
            if p.samples == 0 {
                return bad(format!("period {:?}: at least one sample is required", p.name));
            }
            if self.periods[..i].iter().any(|q| q.name == p.name) {
                return bad(format!("duplicate period {:?}", p.name));
            }
        }
        if !(self.od_perturbation >= 0.0 && self.noise >= 0.0) {
            return bad("noise fractions must be non-negative".into());
        }
        if !(self.bpr_alpha >= 0.0) || self.bpr_power == 0 {
            return bad("BPR alpha must be non-negative and the power at least 1".into());
        }
        if self.theta.len() != 1 + self.feature_names.len() {
            return bad(format!(
                "theta has {} entries, expected {} (travel time plus features)",
                self.theta.len(),
                1 + self.feature_names.len()
            ));
        }
        if !(self.feature_low <= self.feature_high) {
            return bad("feature range is empty".into());
        }
        if !(self.equilibrium_gap > 0.0) {
            return bad("equilibrium_gap must be positive".into());
        }
        Ok(())
    }

    /// Ratio of the variability weight to the travel-time weight.
    pub fn reliability_ratio(&self) -> Option<f64> {
        (self.theta.len() > 1 && self.theta[0] != 0.0).then(|| self.theta[1] / self.theta[0])
    }
}

/// Evidence that a period's true flows are an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub relative_gap: Option<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodTruth {
    pub name: String,
    /// Perturbed O-D flows, one per model O-D pair.
    pub od: Vec<f64>,
    pub generation: Vec<f64>,
    /// Link-flow parameters at the solved fixed point.
    pub link_flow_params: Vec<f64>,
    pub link_flows: Vec<f64>,
    pub times: Vec<f64>,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format: String,
    pub spec: SyntheticSpec,
    pub reliability_ratio: Option<f64>,
    /// Link features shared by all samples, row-major |A| × features.
    pub link_features: Vec<f64>,
    pub periods: Vec<PeriodTruth>,
}

pub const TRUTH_FORMAT: &str = "mate-truth/1";

impl GroundTruth {
    /// Parameters under which the model reproduces the generator exactly.
    pub fn params(&self, model: &NetworkModel) -> Result<ModelParams> {
        let names: Vec<String> = self.periods.iter().map(|p| p.name.clone()).collect();
        let mut p = truth_template(model, &self.spec, names);
        for (t, period) in self.periods.iter().enumerate() {
            if period.link_flow_params.len() != model.num_links() || period.od.len() != model.num_od_pairs() {
                return Err(MateError::Data(format!(
                    "ground truth for period {:?} does not match the network",
                    period.name
                )));
            }
            set_demand(model, &mut p, t, &period.od);
            p.link_flows.row_mut(t).copy_from_slice(&period.link_flow_params);
        }
        Ok(p)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let truth: GroundTruth = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if truth.format != TRUTH_FORMAT {
            return Err(MateError::Data(format!(
                "unsupported ground-truth format {:?}",
                truth.format
            )));
        }
        Ok(truth)
    }
}

/// Demand of `table` for each O-D pair of `model` (zero where absent).
pub fn od_vector(model: &NetworkModel, table: &OdTable) -> Vec<f64> {
    model.paths.od_pairs.iter().map(|&(o, d)| table.get(o, d)).collect()
}

/// Trip generation by origin: ḡ = L q.
pub fn generation_of(model: &NetworkModel, od: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; model.num_nodes()];
    for (w, &q) in od.iter().enumerate() {
        g[model.incidences.od_origin[w]] += q;
    }
    g
}

/// Splits each origin's generation evenly over its O-D pairs.
pub fn uniform_od(model: &NetworkModel, generation: &[f64]) -> Vec<f64> {
    let origin = &model.incidences.od_origin;
    let mut count = vec![0usize; model.num_nodes()];
    for &o in origin {
        count[o] += 1;
    }
    origin.iter().map(|&o| generation[o] / count[o] as f64).collect()
}

/// BPR with identity kernel, θ* and no γ, κ or ω set yet.
fn truth_template(model: &NetworkModel, spec: &SyntheticSpec, periods: Vec<String>) -> ModelParams {
    let mut p = ModelParams::zeros(
        periods,
        &model.incidences.e,
        spec.feature_names.len(),
        0,
        model.num_nodes(),
        model.num_od_pairs(),
        spec.bpr_power,
    );
    for (w, &(r, c)) in p.kernel.iter_mut().zip(&p.kernel_index) {
        *w = if r == c { 1.0 } else { 0.0 };
    }
    p.poly[spec.bpr_power - 1] = spec.bpr_alpha;
    for t in 0..p.num_periods() {
        p.theta.row_mut(t).copy_from_slice(&spec.theta);
    }
    p
}

/// Sets δ = L q and ω = ln(q / g) so the generation and destination layers
/// reproduce `od`.
fn set_demand(model: &NetworkModel, p: &mut ModelParams, t: usize, od: &[f64]) {
    let g = generation_of(model, od);
    p.delta.row_mut(t).copy_from_slice(&g);
    let origin = &model.incidences.od_origin;
    for (w, omega) in p.omega.row_mut(t).iter_mut().enumerate() {
        let go = g[origin[w]];
        *omega = if od[w] > 0.0 && go > 0.0 {
            (od[w] / go).ln()
        } else {
            ZERO_DEMAND_UTILITY
        };
    }
}

/// Damped fixed-point iteration x̂ ← x̂ + α (x(x̂) − x̂) on one period's row,
/// halving α whenever the gap grows.
pub fn solve_fixed_point(
    model: &NetworkModel,
    params: &mut ModelParams,
    sample: &Sample,
    gap: f64,
    max_iterations: usize,
) -> Result<Certificate> {
    let t = sample.period;
    let mut alpha: f64 = 0.5;
    let mut previous = f64::INFINITY;
    for iteration in 0..=max_iterations {
        let x = forward_pass(model, params, sample)?.link_flows;
        let rho = match relative_gap(&x, params.link_flows.row(t)) {
            None => {
                return Ok(Certificate {
                    relative_gap: None,
                    iterations: iteration,
                })
            }
            Some(r) => r,
        };
        if rho <= gap {
            return Ok(Certificate {
                relative_gap: Some(rho),
                iterations: iteration,
            });
        }
        if rho > previous {
            alpha = (alpha * 0.5).max(1e-3);
        } else {
            alpha = (alpha * 1.05).min(1.0);
        }
        previous = rho;
        for (xh, xa) in params.link_flows.row_mut(t).iter_mut().zip(&x) {
            *xh += alpha * (xa - *xh);
        }
    }
    Err(MateError::Generation(format!(
        "equilibrium did not reach relative gap {gap:e} in {max_iterations} iterations (last {previous:e})"
    )))
}

/// Generates the synthetic dataset and its ground truth. Every sample sees
/// all links; O-D pairs follow `model.paths`.
pub fn generate(model: &NetworkModel, base_od: &[f64], spec: &SyntheticSpec) -> Result<(ObservationSet, GroundTruth)> {
    spec.validate()?;
    if base_od.len() != model.num_od_pairs() {
        return Err(MateError::Config(format!(
            "base O-D has {} entries, expected {}",
            base_od.len(),
            model.num_od_pairs()
        )));
    }
    let a = model.num_links();
    let kz = spec.feature_names.len();
    let mut rng = substream(spec.seed, "features");
    let features: Vec<f64> = (0..a * kz)
        .map(|_| {
            if spec.feature_high > spec.feature_low {
                rng.random_range(spec.feature_low..spec.feature_high)
            } else {
                spec.feature_low
            }
        })
        .collect();
    let link_features = Arc::new(FeatureMatrix::new(a, kz, features.clone())?);
    let node_features = Arc::new(FeatureMatrix::zeros(model.num_nodes(), 0));

    let names: Vec<String> = spec.periods.iter().map(|p| p.name.clone()).collect();
    let mut params = truth_template(model, spec, names.clone());
    let mut truths = Vec::new();
    let mut samples = Vec::new();
    let mut reference_generation = Vec::new();
    let mut reference_od = Vec::new();
    for (t, period) in spec.periods.iter().enumerate() {
        let mut rng = substream(spec.seed, &format!("od/{}", period.name));
        let scaled: Vec<f64> = base_od.iter().map(|q| period.scale * q).collect();
        let mean = scaled.iter().sum::<f64>() / scaled.len().max(1) as f64;
        let sd = spec.od_perturbation * mean;
        let od: Vec<f64> = scaled
            .iter()
            .map(|&q| {
                let z: f64 = rng.sample(StandardNormal);
                (q + sd * z).max(0.0)
            })
            .collect();
        set_demand(model, &mut params, t, &od);

        let probe = Sample {
            id: String::new(),
            period: t,
            flows: vec![None; a],
            times: vec![None; a],
            link_features: link_features.clone(),
            node_features: node_features.clone(),
        };
        params.link_flows.row_mut(t).fill(0.0);
        let free = forward_pass(model, &params, &probe)?.link_flows;
        params.link_flows.row_mut(t).copy_from_slice(&free);
        let certificate = solve_fixed_point(model, &mut params, &probe, spec.equilibrium_gap, spec.max_iterations)
            .map_err(|e| match e {
                MateError::Generation(m) => MateError::Generation(format!("period {:?}: {m}", period.name)),
                other => other,
            })?;
        let out = forward_pass(model, &params, &probe)?;
        log::info!(
            "period {}: equilibrium gap {:?} after {} iterations",
            period.name,
            certificate.relative_gap,
            certificate.iterations
        );

        let mean_x = out.link_flows.iter().sum::<f64>() / a as f64;
        let mean_t = out.times.iter().sum::<f64>() / a as f64;
        let tmin = model.free_flow_times();
        for i in 0..period.samples {
            let mut rng = substream(spec.seed, &format!("noise/{}/{i}", period.name));
            let mut noisy = |truth: f64, sd: f64, floor: f64| -> Option<f64> {
                let z: f64 = rng.sample(StandardNormal);
                Some((truth + sd * z).max(floor))
            };
            let flows = out
                .link_flows
                .iter()
                .map(|&x| noisy(x, spec.noise * mean_x, 0.0))
                .collect();
            let times = out
                .times
                .iter()
                .zip(tmin)
                .map(|(&tt, &lo)| noisy(tt, spec.noise * mean_t, lo))
                .collect();
            samples.push(Sample {
                id: format!("{}-{i:04}", period.name),
                period: t,
                flows,
                times,
                link_features: link_features.clone(),
                node_features: node_features.clone(),
            });
        }
        let generation = generation_of(model, &od);
        reference_od.push(Some(uniform_od(model, &generation)));
        reference_generation.push(Some(generation.clone()));
        truths.push(PeriodTruth {
            name: period.name.clone(),
            od,
            generation,
            link_flow_params: params.link_flows.row(t).to_vec(),
            link_flows: out.link_flows,
            times: out.times,
            certificate,
        });
    }
    let obs = ObservationSet {
        periods: names,
        link_feature_names: spec.feature_names.clone(),
        node_feature_names: vec![],
        samples,
        reference_generation,
        reference_od,
        flow_std_fallback: None,
    };
    let truth = GroundTruth {
        format: TRUTH_FORMAT.into(),
        spec: spec.clone(),
        reliability_ratio: spec.reliability_ratio(),
        link_features: features,
        periods: truths,
    };
    Ok((obs, truth))
}

/// Grid network with `num_od` random O-D pairs, `k` paths each and demand
/// drawn from `demand`, for scalability runs.
pub fn grid_instance(
    rows: usize,
    cols: usize,
    num_od: usize,
    k: usize,
    demand: std::ops::Range<f64>,
    interaction: Interaction,
    seed: u64,
) -> Result<(NetworkModel, Vec<f64>)> {
    let mut rng = substream(seed, "grid");
    let net = Network::grid(rows, cols, &mut rng)?;
    let n = net.num_nodes();
    if num_od > n * n.saturating_sub(1) {
        return Err(MateError::Config(format!(
            "a {rows}x{cols} grid has fewer than {num_od} O-D pairs"
        )));
    }
    let mut pairs = std::collections::BTreeSet::new();
    while pairs.len() < num_od {
        let o = rng.random_range(0..n);
        let d = rng.random_range(0..n);
        if o != d {
            pairs.insert((o, d));
        }
    }
    let pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    let demand: Vec<f64> = pairs.iter().map(|_| rng.random_range(demand.clone())).collect();
    let paths = k_shortest_paths(&net, &pairs, k, &net.free_flow_times())?;
    let model = NetworkModel::new(net, paths, interaction)?;
    Ok((model, demand))
}
