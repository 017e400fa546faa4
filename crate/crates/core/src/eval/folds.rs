use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{MateError, Result};
use crate::model::NetworkModel;
use crate::observations::{ObservationSet, Source};
use crate::params::{initialize, ModelParams, ParamSpec};
use crate::rng::substream;
use crate::train::{evaluate, fit, EpochRecord, TrainConfig, TrainTrace};

use super::metrics::{metrics_pairs, Metrics};

/// Random partition of the observed links of each source into `k` folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Link ids per fold, ascending within a fold.
    pub flow: Vec<Vec<usize>>,
    pub time: Vec<Vec<usize>>,
}

fn partition(mut links: Vec<usize>, k: usize, seed: u64, source: Source) -> Result<Vec<Vec<usize>>> {
    if links.len() < k {
        return Err(MateError::Data(format!(
            "{} has {} observed links, fewer than {k} folds",
            source.name(),
            links.len()
        )));
    }
    links.shuffle(&mut substream(seed, &format!("folds/{}", source.name())));
    let (base, extra) = (links.len() / k, links.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        // the remainder goes to the last folds
        let size = base + usize::from(f >= k - extra);
        let mut fold = links[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

impl FoldPlan {
    pub const DEFAULT_K: usize = 5;

    /// Independent partitions per source of the links observed at least once.
    pub fn new(obs: &ObservationSet, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(MateError::Config("k-fold needs k >= 2".into()));
        }
        Ok(FoldPlan {
            k,
            seed,
            flow: partition(obs.observed_links(Source::Flow), k, seed, Source::Flow)?,
            time: partition(obs.observed_links(Source::Time), k, seed, Source::Time)?,
        })
    }

    pub fn folds(&self, source: Source) -> &[Vec<usize>] {
        match source {
            Source::Flow => &self.flow,
            Source::Time => &self.time,
        }
    }

    pub fn held_out(&self, fold: usize, source: Source) -> &[usize] {
        &self.folds(source)[fold]
    }

    /// Observations visible while training round `fold`.
    pub fn training_set(&self, obs: &ObservationSet, fold: usize) -> ObservationSet {
        obs.masked(Source::Flow, self.held_out(fold, Source::Flow))
            .masked(Source::Time, self.held_out(fold, Source::Time))
    }

    /// Only the held-out observations of round `fold`.
    pub fn validation_set(&self, obs: &ObservationSet, fold: usize) -> ObservationSet {
        let mut out = obs.clone();
        for source in Source::ALL {
            let keep = self.held_out(fold, source);
            for s in &mut out.samples {
                for (a, v) in s.values_mut(source).iter_mut().enumerate() {
                    if keep.binary_search(&a).is_err() {
                        *v = None;
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    In,
    Out,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::In => "in",
            Scope::Out => "out",
        }
    }
}

/// One line of a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub fold: usize,
    pub source: Source,
    pub scope: Scope,
    pub metrics: Metrics,
}

pub const METRICS_CSV_HEADER: &str = "fold,source,scope,mape,mdape,mse,r2,n";

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv(rows: &[MetricsRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        let m = &r.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.fold,
            r.source.name(),
            r.scope.name(),
            opt(m.mape),
            opt(m.mdape),
            opt(m.mse),
            opt(m.r2),
            m.n
        )?;
    }
    Ok(())
}

/// Median over folds of the MAPE of `source` in `scope`.
pub fn median_mape(rows: &[MetricsRow], source: Source, scope: Scope) -> Option<f64> {
    let mut v: Vec<f64> = rows
        .iter()
        .filter(|r| r.source == source && r.scope == scope)
        .filter_map(|r| r.metrics.mape)
        .collect();
    super::metrics::median(&mut v)
}

/// Outcome of one cross-validation round.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub params: ModelParams,
    pub trace: TrainTrace,
    /// Final losses and fit on the training-visible observations.
    pub train: EpochRecord,
    /// Final losses and fit on the held-out observations.
    pub validation: EpochRecord,
}

#[derive(Debug, Clone)]
pub struct KFoldReport {
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
}

impl KFoldReport {
    pub fn rows(&self) -> Vec<MetricsRow> {
        let mut rows = Vec::new();
        for f in &self.folds {
            for source in Source::ALL {
                for (scope, rec) in [(Scope::In, &f.train), (Scope::Out, &f.validation)] {
                    let metrics = match source {
                        Source::Flow => rec.flow,
                        Source::Time => rec.time,
                    };
                    rows.push(MetricsRow {
                        fold: f.fold,
                        source,
                        scope,
                        metrics,
                    });
                }
            }
        }
        rows
    }
}

/// Trains one model per fold, from a fresh initialization, on the
/// observations outside that fold and scores it on both sides.
pub fn kfold(
    model: &NetworkModel,
    obs: &ObservationSet,
    spec: &ParamSpec,
    config: &TrainConfig,
    plan: &FoldPlan,
) -> Result<KFoldReport> {
    let mut folds = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let train_obs = plan.training_set(obs, fold);
        let context = |e: MateError| e.in_context(&format!("fold {fold}"));
        let init = initialize(spec, model, &train_obs).map_err(context)?;
        let (params, trace) = fit(model, init, &train_obs, spec, config).map_err(context)?;
        let train = evaluate(model, &params, &train_obs, &config.weights).map_err(context)?;
        let validation = evaluate(model, &params, &plan.validation_set(obs, fold), &config.weights).map_err(context)?;
        log::info!(
            "fold {fold}: out-of-sample MAPE flow {:?}, time {:?}",
            validation.flow.mape,
            validation.time.mape
        );
        folds.push(FoldResult {
            fold,
            params,
            trace,
            train,
            validation,
        });
    }
    Ok(KFoldReport {
        plan: plan.clone(),
        folds,
    })
}

/// Metrics rows of per-sample estimates against the training-visible
/// (in) and held-out (out) observations of each round.
pub fn score_rows(
    obs: &ObservationSet,
    plan: &FoldPlan,
    mut estimate: impl FnMut(usize, Source) -> Result<Vec<Vec<f64>>>,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for fold in 0..plan.k {
        for source in Source::ALL {
            let est = estimate(fold, source)?;
            let held = plan.held_out(fold, source);
            let mut pairs = [Vec::new(), Vec::new()];
            for (s, e) in obs.samples.iter().zip(&est) {
                for (a, v) in s.values(source).iter().enumerate() {
                    if let Some(o) = v {
                        let out = held.binary_search(&a).is_ok();
                        pairs[usize::from(out)].push((e[a], *o));
                    }
                }
            }
            for (scope, p) in [(Scope::In, &pairs[0]), (Scope::Out, &pairs[1])] {
                rows.push(MetricsRow {
                    fold,
                    source,
                    scope,
                    metrics: metrics_pairs(p),
                });
            }
        }
    }
    Ok(rows)
}
