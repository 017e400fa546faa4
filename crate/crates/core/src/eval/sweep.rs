use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{MateError, Result};
use crate::model::NetworkModel;
use crate::observations::ObservationSet;
use crate::params::ParamSpec;
use crate::train::{EpochRecord, TrainConfig};

use super::folds::{kfold, FoldPlan, KFoldReport};

pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [0.0, 0.001, 0.01, 0.1, 1.0, 10.0];

/// Fold-averaged losses on one side of the split.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossSummary {
    pub loss_x: f64,
    pub loss_t: f64,
    pub loss_e: f64,
    pub rel_gap: Option<f64>,
    pub mse_flow: Option<f64>,
    pub mse_time: Option<f64>,
}

fn average(records: &[&EpochRecord]) -> LossSummary {
    let n = records.len().max(1) as f64;
    let avg = |f: &dyn Fn(&EpochRecord) -> Option<f64>| {
        let v: Vec<f64> = records.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    LossSummary {
        loss_x: records.iter().map(|r| r.loss_x).sum::<f64>() / n,
        loss_t: records.iter().map(|r| r.loss_t).sum::<f64>() / n,
        loss_e: records.iter().map(|r| r.loss_e).sum::<f64>() / n,
        rel_gap: avg(&|r| r.rel_gap),
        mse_flow: avg(&|r| r.flow.mse),
        mse_time: avg(&|r| r.time.mse),
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub lambda_e: f64,
    pub train: LossSummary,
    pub validation: LossSummary,
    pub report: KFoldReport,
}

impl SweepPoint {
    fn from_report(lambda_e: f64, report: KFoldReport) -> Self {
        let train: Vec<&EpochRecord> = report.folds.iter().map(|f| &f.train).collect();
        let validation: Vec<&EpochRecord> = report.folds.iter().map(|f| &f.validation).collect();
        SweepPoint {
            lambda_e,
            train: average(&train),
            validation: average(&validation),
            report,
        }
    }
}

/// Cross-validates once per equilibrium weight, all other settings fixed.
pub fn lambda_sweep(
    model: &NetworkModel,
    obs: &ObservationSet,
    spec: &ParamSpec,
    config: &TrainConfig,
    plan: &FoldPlan,
    grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(MateError::Config("lambda grid is empty".into()));
    }
    grid.iter()
        .map(|&lambda_e| {
            let mut cfg = config.clone();
            cfg.weights.equilibrium = lambda_e;
            log::info!("sweep: lambda_e = {lambda_e}");
            let report =
                kfold(model, obs, spec, &cfg, plan).map_err(|e| e.in_context(&format!("lambda_e {lambda_e}")))?;
            Ok(SweepPoint::from_report(lambda_e, report))
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "lambda_e,split,loss_x,loss_t,loss_e,rel_gap,mse_flow,mse_time";

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv(points: &[SweepPoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for p in points {
        for (split, s) in [("train", &p.train), ("validation", &p.validation)] {
            writeln!(
                w,
                "{},{split},{},{},{},{},{},{}",
                p.lambda_e,
                s.loss_x,
                s.loss_t,
                s.loss_e,
                opt(s.rel_gap),
                opt(s.mse_flow),
                opt(s.mse_time)
            )?;
        }
    }
    Ok(())
}
