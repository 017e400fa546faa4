use serde::{Deserialize, Serialize};

use super::ForwardOutputs;
use crate::observations::{ObservationSet, Sample, Source};
use crate::params::ModelParams;

/// Weights of the loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub flow: f64,
    pub time: f64,
    pub equilibrium: f64,
    pub generation: f64,
    pub od: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            flow: 1.0,
            time: 1.0,
            equilibrium: 1.0,
            generation: 0.0,
            od: 0.0,
        }
    }
}

impl LossWeights {
    pub fn equilibrium_only() -> Self {
        LossWeights {
            flow: 0.0,
            time: 0.0,
            equilibrium: 1.0,
            generation: 0.0,
            od: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.flow, self.time, self.equilibrium, self.generation, self.od]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }
}

/// Events where a component was empty or a normalizer fell back to 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFlags {
    pub flow_unobserved: bool,
    pub time_unobserved: bool,
    pub flow_std_fallback: bool,
    pub time_std_fallback: bool,
    pub equilibrium_std_fallback: bool,
    pub generation_reference_missing: bool,
    pub od_reference_missing: bool,
}

impl LossFlags {
    pub fn any(&self) -> bool {
        self.flow_unobserved
            || self.time_unobserved
            || self.flow_std_fallback
            || self.time_std_fallback
            || self.equilibrium_std_fallback
            || self.generation_reference_missing
            || self.od_reference_missing
    }
}

/// Denominators of the flow, time and equilibrium components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizers {
    pub flow: f64,
    pub time: f64,
    pub equilibrium: f64,
    pub flags: LossFlags,
}

impl Normalizers {
    /// n̄σ̄ per source from the sample's non-missing entries; σ̄ = 0 or n̄ = 0
    /// fall back to 1. The equilibrium term uses |A| σ̄ₓ, taking σ̄ₓ from
    /// `flow_std_fallback` when the sample has no usable flows.
    pub fn for_sample(sample: &Sample, flow_std_fallback: Option<f64>) -> Self {
        let mut flags = LossFlags::default();
        let flow = sample.stats(Source::Flow);
        let time = sample.stats(Source::Time);
        flags.flow_unobserved = flow.count == 0;
        flags.time_unobserved = time.count == 0;
        let side = |count: usize, std: f64, flag: &mut bool| {
            if count == 0 || !(std > 0.0) {
                *flag = true;
                count.max(1) as f64
            } else {
                count as f64 * std
            }
        };
        let flow_norm = side(flow.count, flow.std, &mut flags.flow_std_fallback);
        let time_norm = side(time.count, time.std, &mut flags.time_std_fallback);
        let eq_std = if flow.count > 0 && flow.std > 0.0 {
            flow.std
        } else if let Some(s) = flow_std_fallback.filter(|s| *s > 0.0) {
            s
        } else {
            flags.equilibrium_std_fallback = true;
            1.0
        };
        Normalizers {
            flow: flow_norm,
            time: time_norm,
            equilibrium: sample.flows.len() as f64 * eq_std,
            flags,
        }
    }
}

/// Loss components for one sample. Components are unweighted; `total` is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub flow: f64,
    pub time: f64,
    pub equilibrium: f64,
    pub generation: f64,
    pub od: f64,
    pub weights: LossWeights,
    pub relative_gap: Option<f64>,
    pub flags: LossFlags,
}

/// ρ = ‖x − x̂‖₁ / ‖x‖₁; `None` when x = 0.
pub fn relative_gap(x: &[f64], x_hat: &[f64]) -> Option<f64> {
    let norm: f64 = x.iter().map(|v| v.abs()).sum();
    if norm == 0.0 {
        return None;
    }
    let diff: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b).abs()).sum();
    Some(diff / norm)
}

fn masked_sq(est: &[f64], obs: &[Option<f64>]) -> f64 {
    est.iter()
        .zip(obs)
        .filter_map(|(e, o)| o.map(|o| (e - o).powi(2)))
        .sum()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Loss of one sample with its own normalizers.
pub fn loss(
    out: &ForwardOutputs,
    params: &ModelParams,
    obs: &ObservationSet,
    weights: &LossWeights,
    sample: &Sample,
) -> LossReport {
    let norms = Normalizers::for_sample(sample, obs.flow_std_fallback);
    loss_with(out, params, obs, weights, sample, &norms)
}

pub fn loss_with(
    out: &ForwardOutputs,
    params: &ModelParams,
    obs: &ObservationSet,
    weights: &LossWeights,
    sample: &Sample,
    norms: &Normalizers,
) -> LossReport {
    let mut flags = norms.flags;
    flags.flow_unobserved &= weights.flow > 0.0;
    flags.flow_std_fallback &= weights.flow > 0.0;
    flags.time_unobserved &= weights.time > 0.0;
    flags.time_std_fallback &= weights.time > 0.0;
    flags.equilibrium_std_fallback &= weights.equilibrium > 0.0;
    let x_hat = params.link_flows.row(out.period);
    let flow = masked_sq(&out.link_flows, &sample.flows) / norms.flow;
    let time = masked_sq(&out.times, &sample.times) / norms.time;
    let equilibrium = sq(&out.link_flows, x_hat) / norms.equilibrium;
    let reference = |r: &Option<Vec<f64>>, est: &[f64], weight: f64, flag: &mut bool| match r {
        Some(r) => sq(est, r),
        None => {
            *flag = weight > 0.0;
            0.0
        }
    };
    let generation = reference(
        &obs.reference_generation[out.period],
        &out.generation,
        weights.generation,
        &mut flags.generation_reference_missing,
    );
    let od = reference(
        &obs.reference_od[out.period],
        &out.od_flows,
        weights.od,
        &mut flags.od_reference_missing,
    );
    let total = weights.flow * flow
        + weights.time * time
        + weights.equilibrium * equilibrium
        + weights.generation * generation
        + weights.od * od;
    LossReport {
        total,
        flow,
        time,
        equilibrium,
        generation,
        od,
        weights: *weights,
        relative_gap: relative_gap(&out.link_flows, x_hat),
        flags,
    }
}
