//! Gradient-based fitting: full training, equilibrium solving and
//! equilibrium-only inference on new demand.

mod adam;
mod grad;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MateError, Result};
use crate::eval::metrics::{metrics_pairs, Metrics};
use crate::forward::{forward_pass, ForwardOutputs, LossReport, LossWeights};
use crate::model::NetworkModel;
use crate::observations::ObservationSet;
use crate::params::{ModelParams, ParamGroup, ParamSpec};
use crate::rng::substream;

pub use adam::{Adam, AdamConfig};
pub use grad::{backward, gradients, Gradients};

/// Gap target used when none is configured.
pub const DEFAULT_GAP_TARGET: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Shuffle the sample order (once per seed).
    pub shuffle: bool,
    /// Relative-gap target for equilibrium solving and inference.
    pub gap_target: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 1,
            learning_rate: 0.05,
            weights: LossWeights::default(),
            seed: 0,
            shuffle: true,
            gap_target: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(MateError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(MateError::Config("learning_rate must be positive".into()));
        }
        if !self.weights.is_valid() {
            return Err(MateError::Config("loss weights must be finite and non-negative".into()));
        }
        if let Some(g) = self.gap_target {
            if !(g.is_finite() && g >= 0.0) {
                return Err(MateError::Config("gap_target must be non-negative".into()));
            }
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(MateError::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

/// Losses and fit statistics after one epoch, over every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_x: f64,
    pub loss_t: f64,
    pub loss_e: f64,
    pub loss_g: f64,
    pub loss_q: f64,
    pub flow: Metrics,
    pub time: Metrics,
    /// Mean relative gap over samples where it is defined.
    pub rel_gap: Option<f64>,
    pub rel_gap_per_sample: Vec<Option<f64>>,
    /// Wall time since the start of the run.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl TrainTrace {
    pub const CSV_HEADER: &'static str = "epoch,loss_total,loss_x,loss_t,loss_e,mape_x,mape_t,rel_gap,seconds";

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn write_csv_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{:.3}",
                r.epoch,
                r.loss_total,
                r.loss_x,
                r.loss_t,
                r.loss_e,
                opt(r.flow.mape),
                opt(r.time.mape),
                opt(r.rel_gap),
                r.seconds
            )?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv_to(file)
    }
}

/// Checks that `params` fits `model` and the periods and features of `obs`.
pub fn check_compatible(model: &NetworkModel, params: &ModelParams, obs: &ObservationSet) -> Result<()> {
    obs.validate(model.num_links(), model.num_nodes(), model.num_od_pairs())?;
    if params.periods != obs.periods {
        return Err(MateError::Config(format!(
            "parameter periods {:?} do not match observation periods {:?}",
            params.periods, obs.periods
        )));
    }
    let expected = [
        (ParamGroup::LinkFlows, model.num_links()),
        (ParamGroup::Theta, 1 + obs.num_link_features()),
        (ParamGroup::Kappa, obs.num_node_features()),
        (ParamGroup::Delta, model.num_nodes()),
        (ParamGroup::Omega, model.num_od_pairs()),
    ];
    for (g, width) in expected {
        if params.width(g) != width {
            return Err(MateError::Config(format!(
                "group {} has width {}, expected {width}",
                g.name(),
                params.width(g)
            )));
        }
    }
    if params.gamma.len() != model.num_links() {
        return Err(MateError::Config(
            "gamma length does not match the number of links".into(),
        ));
    }
    params.check_kernel(&model.incidences.e)
}

/// Forward pass of every sample, in sample order.
pub fn predict(model: &NetworkModel, params: &ModelParams, obs: &ObservationSet) -> Result<Vec<ForwardOutputs>> {
    obs.samples
        .par_iter()
        .map(|s| forward_pass(model, params, s).map_err(|e| e.in_context(&format!("sample {}", s.id))))
        .collect()
}

/// Loss and fit statistics of `params` over all samples.
pub fn evaluate(
    model: &NetworkModel,
    params: &ModelParams,
    obs: &ObservationSet,
    weights: &LossWeights,
) -> Result<EpochRecord> {
    let per_sample: Vec<(LossReport, ForwardOutputs)> = obs
        .samples
        .par_iter()
        .map(|s| {
            let out = forward_pass(model, params, s).map_err(|e| e.in_context(&format!("sample {}", s.id)))?;
            let report = crate::forward::loss(&out, params, obs, weights, s);
            Ok((report, out))
        })
        .collect::<Result<_>>()?;
    let n = per_sample.len().max(1) as f64;
    let mut rec = EpochRecord {
        epoch: 0,
        loss_total: 0.0,
        loss_x: 0.0,
        loss_t: 0.0,
        loss_e: 0.0,
        loss_g: 0.0,
        loss_q: 0.0,
        flow: Metrics::default(),
        time: Metrics::default(),
        rel_gap: None,
        rel_gap_per_sample: Vec::with_capacity(per_sample.len()),
        seconds: 0.0,
    };
    let mut flow_pairs = Vec::new();
    let mut time_pairs = Vec::new();
    for ((r, out), s) in per_sample.iter().zip(&obs.samples) {
        rec.loss_total += r.total / n;
        rec.loss_x += r.flow / n;
        rec.loss_t += r.time / n;
        rec.loss_e += r.equilibrium / n;
        rec.loss_g += r.generation / n;
        rec.loss_q += r.od / n;
        rec.rel_gap_per_sample.push(r.relative_gap);
        for a in 0..out.link_flows.len() {
            if let Some(o) = s.flows[a] {
                flow_pairs.push((out.link_flows[a], o));
            }
            if let Some(o) = s.times[a] {
                time_pairs.push((out.times[a], o));
            }
        }
    }
    rec.flow = metrics_pairs(&flow_pairs);
    rec.time = metrics_pairs(&time_pairs);
    let gaps: Vec<f64> = rec.rel_gap_per_sample.iter().flatten().copied().collect();
    rec.rel_gap = (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64);
    Ok(rec)
}

enum Control {
    Continue,
    Stop,
}

/// Shared epoch loop. `on_epoch` sees each record with the current
/// parameters and may stop the run early.
fn run(
    model: &NetworkModel,
    params: &mut ModelParams,
    obs: &ObservationSet,
    spec: &ParamSpec,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ModelParams) -> Result<Control>,
) -> Result<TrainTrace> {
    config.validate()?;
    spec.validate()?;
    check_compatible(model, params, obs)?;
    let start = Instant::now();
    let mut order: Vec<usize> = (0..obs.len()).collect();
    if config.shuffle {
        order.shuffle(&mut substream(config.seed, "sample-order"));
    }
    let mut adam = Adam::new(params, config.learning_rate, config.adam);
    let mut trace = TrainTrace::default();
    for epoch in 1..=config.epochs {
        for batch in order.chunks(config.batch_size) {
            let current: &ModelParams = params;
            let results: Vec<Result<Gradients>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &obs.samples[i];
                    gradients(model, current, obs, s, &config.weights, spec)
                        .map(|(_, g)| g)
                        .map_err(|e| e.in_context(&format!("epoch {epoch}, sample {}", s.id)))
                })
                .collect();
            let mut total = Gradients::zeros_like(params);
            let scale = 1.0 / batch.len() as f64;
            for g in results {
                total.add_scaled(&g?, scale);
            }
            adam.step(params, &total, spec, model.capacities());
        }
        let mut rec = evaluate(model, params, obs, &config.weights)
            .map_err(|e| e.in_context(&format!("evaluation after epoch {epoch}")))?;
        rec.epoch = epoch;
        rec.seconds = start.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: loss {:.6} (x {:.6}, t {:.6}, e {:.6}), gap {}",
            rec.loss_total,
            rec.loss_x,
            rec.loss_t,
            rec.loss_e,
            opt(rec.rel_gap)
        );
        let control = on_epoch(&rec, params)?;
        trace.records.push(rec);
        if let Control::Stop = control {
            break;
        }
    }
    Ok(trace)
}

/// Fits every trainable group to `obs` for `config.epochs` epochs.
pub fn fit(
    model: &NetworkModel,
    params: ModelParams,
    obs: &ObservationSet,
    spec: &ParamSpec,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainTrace)> {
    fit_with(model, params, obs, spec, config, |_, _| Ok(()))
}

/// [`fit`] with a callback after each epoch (progress, checkpoints).
pub fn fit_with(
    model: &NetworkModel,
    mut params: ModelParams,
    obs: &ObservationSet,
    spec: &ParamSpec,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ModelParams) -> Result<()>,
) -> Result<(ModelParams, TrainTrace)> {
    let trace = run(model, &mut params, obs, spec, config, |rec, p| {
        on_epoch(rec, p).map(|_| Control::Continue)
    })?;
    Ok((params, trace))
}

/// Result of a run that stops at a relative-gap threshold.
#[derive(Debug, Clone)]
pub struct GapRun {
    /// Final parameters when converged, otherwise the iterate with the
    /// smallest mean gap.
    pub params: ModelParams,
    pub trace: TrainTrace,
    pub converged: bool,
    /// Mean relative gap of `params`.
    pub gap: Option<f64>,
    /// Epochs run; zero when the start already met the threshold.
    pub epochs: usize,
}

fn run_to_gap(
    model: &NetworkModel,
    mut params: ModelParams,
    obs: &ObservationSet,
    spec: &ParamSpec,
    config: &TrainConfig,
    threshold: f64,
) -> Result<GapRun> {
    check_compatible(model, &params, obs)?;
    let initial = evaluate(model, &params, obs, &config.weights)?;
    let met = |gap: Option<f64>| gap.is_none_or(|g| g <= threshold);
    if met(initial.rel_gap) {
        return Ok(GapRun {
            params,
            trace: TrainTrace::default(),
            converged: true,
            gap: initial.rel_gap,
            epochs: 0,
        });
    }
    let mut best: (f64, Option<ModelParams>) = (initial.rel_gap.unwrap_or(f64::INFINITY), None);
    let mut converged = false;
    let trace = run(model, &mut params, obs, spec, config, |rec, p| {
        let gap = rec.rel_gap.unwrap_or(0.0);
        if met(rec.rel_gap) {
            converged = true;
            return Ok(Control::Stop);
        }
        if gap < best.0 {
            best = (gap, Some(p.clone()));
        }
        Ok(Control::Continue)
    })?;
    let epochs = trace.records.len();
    if converged {
        let gap = trace.last().and_then(|r| r.rel_gap);
        return Ok(GapRun {
            params,
            trace,
            converged,
            gap,
            epochs,
        });
    }
    let (gap, best_params) = best;
    Ok(GapRun {
        params: best_params.unwrap_or(params),
        gap: gap.is_finite().then_some(gap),
        trace,
        converged,
        epochs,
    })
}

/// Drives x̂ towards the assignment it induces with every other group held
/// fixed, stopping once the mean relative gap reaches the target.
pub fn solve_equilibrium(
    model: &NetworkModel,
    params: ModelParams,
    obs: &ObservationSet,
    spec: &ParamSpec,
    config: &TrainConfig,
) -> Result<GapRun> {
    let spec = spec.clone().only(&[ParamGroup::LinkFlows]);
    let config = TrainConfig {
        weights: LossWeights::equilibrium_only(),
        ..config.clone()
    };
    let target = config.gap_target.unwrap_or(DEFAULT_GAP_TARGET);
    run_to_gap(model, params, obs, &spec, &config, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferOptions {
    /// Gap reached in training; inference stops within `tolerance` of it.
    pub gap_target: f64,
    pub tolerance: f64,
    /// Flow σ for the equilibrium normalizer, usually the training set's.
    pub flow_std: Option<f64>,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            gap_target: DEFAULT_GAP_TARGET,
            tolerance: 0.2,
            flow_std: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub run: GapRun,
    /// Forward outputs of every sample under the returned parameters.
    pub outputs: Vec<ForwardOutputs>,
}

/// Re-solves the equilibrium for new demand and features with trained
/// parameters, ignoring any measurements in `obs`. Periods are matched by
/// label; only x̂ moves.
pub fn infer(
    model: &NetworkModel,
    params: &ModelParams,
    obs: &ObservationSet,
    spec: &ParamSpec,
    config: &TrainConfig,
    options: &InferOptions,
) -> Result<Inference> {
    let mut bare = obs.without_measurements();
    if options.flow_std.is_some() {
        bare.flow_std_fallback = options.flow_std;
    }
    let mut mapping = Vec::with_capacity(bare.periods.len());
    for label in &bare.periods {
        let t = params.period_index(label).ok_or_else(|| {
            MateError::Config(format!(
                "period {label:?} is not among the trained periods {:?}",
                params.periods
            ))
        })?;
        mapping.push(t);
    }
    let periods = params.num_periods();
    let mut generation = vec![None; periods];
    let mut od = vec![None; periods];
    for (old, &new) in mapping.iter().enumerate() {
        generation[new] = bare.reference_generation[old].take();
        od[new] = bare.reference_od[old].take();
    }
    for s in &mut bare.samples {
        s.period = mapping[s.period];
    }
    bare.periods = params.periods.clone();
    bare.reference_generation = generation;
    bare.reference_od = od;

    let spec = spec.clone().only(&[ParamGroup::LinkFlows]);
    let config = TrainConfig {
        weights: LossWeights {
            generation: 0.0,
            od: 0.0,
            ..config.weights
        },
        ..config.clone()
    };
    let threshold = options.gap_target * (1.0 + options.tolerance);
    let run = run_to_gap(model, params.clone(), &bare, &spec, &config, threshold)?;
    let outputs = predict(model, &run.params, &bare)?;
    Ok(Inference { run, outputs })
}

#[cfg(test)]
mod tests;
