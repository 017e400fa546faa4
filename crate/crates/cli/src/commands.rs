use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use mate_core::data::sioux_falls;
use mate_core::datagen::{generate, od_vector, GroundTruth};
use mate_core::eval::{
    historical_mean_rows, kfold, lambda_sweep, linear_regression_rows, median_mape, write_metrics_csv, write_sweep_csv,
    FoldPlan, MetricsRow, Scope,
};
use mate_core::forward::ForwardOutputs;
use mate_core::network::{k_shortest_paths, parse_tntp, Network, OdTable};
use mate_core::observations::{read_dataset, write_dataset, DatasetFiles, ObservationSet, Source};
use mate_core::params::{initialize, read_checkpoint, write_checkpoint, ModelParams};
use mate_core::train::{
    fit_with, infer, predict, solve_equilibrium, EpochRecord, InferOptions, TrainTrace, DEFAULT_GAP_TARGET,
};
use mate_core::NetworkModel;

use crate::config::{NetworkConfig, RunConfig};
use crate::error::CliError;

pub type CmdResult<T = ()> = Result<T, CliError>;

pub fn load_network(cfg: &NetworkConfig) -> CmdResult<(Network, OdTable)> {
    Ok(match (&cfg.net, &cfg.trips) {
        (Some(net), Some(trips)) => parse_tntp(&fs::read_to_string(net)?, &fs::read_to_string(trips)?)?,
        _ => sioux_falls()?,
    })
}

pub fn build_model(cfg: &NetworkConfig) -> CmdResult<(NetworkModel, OdTable)> {
    let (net, od) = load_network(cfg)?;
    let paths = k_shortest_paths(&net, &od.pairs(), cfg.k_paths, &net.free_flow_times())?;
    log::info!("{} O-D pairs, {} paths", paths.num_od_pairs(), paths.num_paths());
    Ok((NetworkModel::new(net, paths, cfg.interaction)?, od))
}

fn load_data(cfg: &RunConfig, model: &NetworkModel) -> CmdResult<ObservationSet> {
    let dir = cfg.data.as_deref().expect("validated");
    Ok(read_dataset(
        &DatasetFiles::in_dir(dir),
        model.num_links(),
        model.num_nodes(),
        model.num_od_pairs(),
    )?)
}

fn create(path: &Path) -> CmdResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn save_params(path: &Path, params: &ModelParams) -> CmdResult {
    write_checkpoint(params, create(path)?)?;
    Ok(())
}

fn load_params(path: &Path) -> CmdResult<ModelParams> {
    Ok(read_checkpoint(std::io::BufReader::new(File::open(path)?))?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub const PREDICTIONS_HEADER: &str =
    "sample_id,period_id,link_id,flow_observed,flow_estimated,travel_time_observed,travel_time_estimated";

/// Observed and estimated values per sample and link.
fn write_predictions(path: &Path, obs: &ObservationSet, outputs: &[ForwardOutputs]) -> CmdResult {
    let mut w = create(path)?;
    writeln!(w, "{PREDICTIONS_HEADER}")?;
    for (s, out) in obs.samples.iter().zip(outputs) {
        for a in 0..out.link_flows.len() {
            writeln!(
                w,
                "{},{},{a},{},{},{},{}",
                s.id,
                obs.periods[s.period],
                opt(s.flows[a]),
                out.link_flows[a],
                opt(s.times[a]),
                out.times[a]
            )?;
        }
    }
    Ok(())
}

fn write_trace(path: &Path, trace: &TrainTrace) -> CmdResult {
    trace.write_csv_to(create(path)?)?;
    Ok(())
}

fn record_summary(rec: Option<&EpochRecord>) -> Value {
    match rec {
        Some(r) => json!({
            "epoch": r.epoch,
            "loss_total": r.loss_total,
            "loss_x": r.loss_x,
            "loss_t": r.loss_t,
            "loss_e": r.loss_e,
            "flow": r.flow,
            "travel_time": r.time,
            "rel_gap": r.rel_gap,
        }),
        None => Value::Null,
    }
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> CmdResult<Value> {
    let (model, od) = build_model(&cfg.network)?;
    let (obs, truth) = generate(&model, &od_vector(&model, &od), &cfg.synthetic)?;
    write_dataset(&obs, out)?;
    truth.write_json(&out.join("truth.json"))?;
    let cells = (obs.len() * model.num_links()) as f64;
    let coverage = |s: Source| 100.0 * obs.count(s) as f64 / cells;
    let summary = json!({
        "samples": obs.len(),
        "periods": obs.periods,
        "links": model.num_links(),
        "od_pairs": model.num_od_pairs(),
        "paths": model.num_paths(),
        "flow_coverage_percent": coverage(Source::Flow),
        "travel_time_coverage_percent": coverage(Source::Time),
        "reliability_ratio": truth.reliability_ratio,
        "certificates": truth.periods.iter().map(|p| json!({"period": p.name, "relative_gap": p.certificate.relative_gap, "iterations": p.certificate.iterations})).collect::<Vec<_>>(),
    });
    println!(
        "generated {} samples over {} periods ({}), flow coverage {:.1}%, travel time coverage {:.1}%",
        obs.len(),
        obs.num_periods(),
        obs.periods.join(", "),
        coverage(Source::Flow),
        coverage(Source::Time)
    );
    Ok(summary)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> CmdResult<Value> {
    let (model, _) = build_model(&cfg.network)?;
    let obs = load_data(cfg, &model)?;
    let init = match &cfg.checkpoint {
        Some(c) => load_params(c)?,
        None => initialize(&cfg.params, &model, &obs)?,
    };
    let ckpt_dir = out.join("checkpoints");
    if cfg.checkpoint_every.is_some() {
        fs::create_dir_all(&ckpt_dir)?;
    }
    let (params, trace) = fit_with(&model, init, &obs, &cfg.params, &cfg.train, |rec, p| {
        if let Some(every) = cfg.checkpoint_every {
            if rec.epoch % every == 0 {
                let file = File::create(ckpt_dir.join(format!("epoch-{:04}.json", rec.epoch)))?;
                write_checkpoint(p, BufWriter::new(file))?;
            }
        }
        Ok(())
    })?;
    write_trace(&out.join("trace.csv"), &trace)?;
    save_params(&out.join("params.json"), &params)?;
    write_predictions(&out.join("predictions.csv"), &obs, &predict(&model, &params, &obs)?)?;
    let last = trace.last();
    if let Some(r) = last {
        println!(
            "trained {} epochs: flow MAPE {}%, travel time MAPE {}%, relative gap {}",
            r.epoch,
            opt(r.flow.mape),
            opt(r.time.mape),
            opt(r.rel_gap)
        );
    }
    Ok(json!({
        "epochs": trace.records.len(),
        "final": record_summary(last),
        "flow_std": obs.mean_flow_std(),
    }))
}

pub fn cmd_equilibrium(cfg: &RunConfig, out: &Path) -> CmdResult<Value> {
    let (model, _) = build_model(&cfg.network)?;
    let obs = load_data(cfg, &model)?;
    let truth_file = cfg.data.as_deref().map(|d| d.join("truth.json"));
    let (params, start) = match (&cfg.checkpoint, truth_file) {
        (Some(c), _) => (load_params(c)?, "checkpoint"),
        (None, Some(t)) if t.exists() => {
            // ground-truth behaviour, link flows from the free-flow assignment
            let mut p = GroundTruth::read_json(&t)?.params(&model)?;
            p.link_flows = initialize(&cfg.params, &model, &obs)?.link_flows;
            (p, "ground truth")
        }
        _ => (initialize(&cfg.params, &model, &obs)?, "initialization"),
    };
    let run = solve_equilibrium(&model, params, &obs, &cfg.params, &cfg.train)?;
    let target = cfg.train.gap_target.unwrap_or(DEFAULT_GAP_TARGET);
    write_trace(&out.join("trace.csv"), &run.trace)?;
    save_params(&out.join("params.json"), &run.params)?;
    write_predictions(&out.join("predictions.csv"), &obs, &predict(&model, &run.params, &obs)?)?;
    println!(
        "equilibrium from {start}: converged {} after {} epochs, relative gap {} (target {target})",
        run.converged,
        run.epochs,
        opt(run.gap)
    );
    Ok(json!({
        "start": start,
        "converged": run.converged,
        "gap": run.gap,
        "target": target,
        "epochs": run.epochs,
    }))
}

/// Training gap and flow σ recorded next to a checkpoint, if any.
fn training_summary(checkpoint: &Path) -> (Option<f64>, Option<f64>) {
    let file = checkpoint.parent().map(|d| d.join("summary.json"));
    let Some(text) = file.and_then(|f| fs::read_to_string(f).ok()) else {
        return (None, None);
    };
    let Ok(v) = serde_json::from_str::<Value>(&text) else {
        return (None, None);
    };
    let result = &v["result"];
    (result["final"]["rel_gap"].as_f64(), result["flow_std"].as_f64())
}

pub fn cmd_infer(cfg: &RunConfig, out: &Path) -> CmdResult<Value> {
    let checkpoint = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Usage("infer needs trained parameters (checkpoint / --checkpoint)".into()))?;
    let (model, _) = build_model(&cfg.network)?;
    let obs = load_data(cfg, &model)?;
    let params = load_params(checkpoint)?;
    let (trained_gap, trained_std) = training_summary(checkpoint);
    let defaults = InferOptions::default();
    let options = InferOptions {
        gap_target: cfg.infer.gap_target.or(trained_gap).unwrap_or(DEFAULT_GAP_TARGET),
        tolerance: cfg.infer.tolerance.unwrap_or(defaults.tolerance),
        flow_std: cfg.infer.flow_std.or(trained_std),
    };
    let result = infer(&model, &params, &obs, &cfg.params, &cfg.train, &options)?;
    write_trace(&out.join("trace.csv"), &result.run.trace)?;
    save_params(&out.join("params.json"), &result.run.params)?;
    write_predictions(&out.join("predictions.csv"), &obs, &result.outputs)?;
    let per_sample: Vec<Value> = result
        .outputs
        .iter()
        .zip(&obs.samples)
        .map(|(o, s)| {
            let x_hat = result.run.params.link_flows.row(o.period);
            json!({"sample": s.id, "rel_gap": mate_core::forward::relative_gap(&o.link_flows, x_hat)})
        })
        .collect();
    println!(
        "inference: converged {} after {} epochs, relative gap {} (target {} within {:.0}%)",
        result.run.converged,
        result.run.epochs,
        opt(result.run.gap),
        options.gap_target,
        100.0 * options.tolerance
    );
    Ok(json!({
        "converged": result.run.converged,
        "gap": result.run.gap,
        "target": options.gap_target,
        "tolerance": options.tolerance,
        "flow_std": options.flow_std,
        "epochs": result.run.epochs,
        "per_sample": per_sample,
    }))
}

fn write_rows(path: &Path, rows: &[MetricsRow]) -> CmdResult {
    write_metrics_csv(rows, create(path)?)?;
    Ok(())
}

fn medians(rows: &[MetricsRow]) -> Value {
    let mut m = serde_json::Map::new();
    for source in Source::ALL {
        for scope in [Scope::In, Scope::Out] {
            m.insert(
                format!("{}_{}", source.name(), scope.name()),
                json!(median_mape(rows, source, scope)),
            );
        }
    }
    Value::Object(m)
}

pub fn cmd_xval(cfg: &RunConfig, out: &Path) -> CmdResult<Value> {
    let (model, _) = build_model(&cfg.network)?;
    let obs = load_data(cfg, &model)?;
    let plan = FoldPlan::new(&obs, cfg.folds.k, cfg.seed)?;
    write_json(&out.join("folds.json"), &plan)?;
    let report = kfold(&model, &obs, &cfg.params, &cfg.train, &plan)?;
    let mate = report.rows();
    let mean = historical_mean_rows(&obs, &plan)?;
    let linear = linear_regression_rows(&model, &obs, &plan)?;
    write_rows(&out.join("metrics.csv"), &mate)?;
    write_rows(&out.join("baseline_historical_mean.csv"), &mean)?;
    write_rows(&out.join("baseline_linear_regression.csv"), &linear)?;
    for f in &report.folds {
        write_trace(&out.join(format!("trace-fold-{}.csv", f.fold)), &f.trace)?;
    }
    for source in Source::ALL {
        println!(
            "{}: median out-of-sample MAPE {}% (historical mean {}%, linear regression {}%)",
            source.name(),
            opt(median_mape(&mate, source, Scope::Out)),
            opt(median_mape(&mean, source, Scope::Out)),
            opt(median_mape(&linear, source, Scope::Out))
        );
    }
    Ok(json!({
        "k": plan.k,
        "median_mape": {
            "mate": medians(&mate),
            "historical_mean": medians(&mean),
            "linear_regression": medians(&linear),
        }
    }))
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> CmdResult<Value> {
    let (model, _) = build_model(&cfg.network)?;
    let obs = load_data(cfg, &model)?;
    let plan = FoldPlan::new(&obs, cfg.folds.k, cfg.seed)?;
    let points = lambda_sweep(&model, &obs, &cfg.params, &cfg.train, &plan, &cfg.sweep.grid)?;
    write_sweep_csv(&points, create(&out.join("sweep.csv"))?)?;
    let mut w = create(&out.join("sweep_metrics.csv"))?;
    writeln!(w, "lambda_e,{}", mate_core::eval::folds::METRICS_CSV_HEADER)?;
    for p in &points {
        let mut buf = Vec::new();
        write_metrics_csv(&p.report.rows(), &mut buf)?;
        for line in String::from_utf8_lossy(&buf).lines().skip(1) {
            writeln!(w, "{},{line}", p.lambda_e)?;
        }
    }
    for p in &points {
        println!(
            "lambda_e {}: training gap {}, validation flow MSE {}",
            p.lambda_e,
            opt(p.train.rel_gap),
            opt(p.validation.mse_flow)
        );
    }
    Ok(json!({
        "grid": cfg.sweep.grid,
        "points": points.iter().map(|p| json!({"lambda_e": p.lambda_e, "train": p.train, "validation": p.validation})).collect::<Vec<_>>(),
    }))
}

/// Output directory of a run, created if needed.
pub fn output_dir(cfg: &RunConfig) -> CmdResult<PathBuf> {
    fs::create_dir_all(&cfg.output)?;
    Ok(cfg.output.clone())
}
