use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::Value;

use crate::commands::CmdResult;
use crate::error::CliError;

fn required(command: &str) -> &'static [&'static str] {
    match command {
        "train" | "infer" | "equilibrium" => &["trace.csv", "predictions.csv", "summary.json"],
        "xval" => &[
            "metrics.csv",
            "baseline_historical_mean.csv",
            "baseline_linear_regression.csv",
            "summary.json",
        ],
        "sweep" => &["sweep.csv", "summary.json"],
        "generate" => &["observations.csv", "truth.json", "summary.json"],
        _ => &[],
    }
}

fn read_csv(path: &Path) -> CmdResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str, file: &str) -> CmdResult<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Core(mate_core::MateError::Data(format!("{file} has no column {name}"))))
}

/// Observed-versus-estimated rows per source and period.
fn scatter(dir: &Path, md: &mut String) -> CmdResult {
    let (header, rows) = read_csv(&dir.join("predictions.csv"))?;
    let col = |n: &str| column(&header, n, "predictions.csv");
    let (sample, period, link) = (col("sample_id")?, col("period_id")?, col("link_id")?);
    for (source, obs, est) in [
        ("flow", col("flow_observed")?, col("flow_estimated")?),
        (
            "travel_time",
            col("travel_time_observed")?,
            col("travel_time_estimated")?,
        ),
    ] {
        let mut by_period: BTreeMap<&str, Vec<&Vec<String>>> = BTreeMap::new();
        for r in rows.iter().filter(|r| !r[obs].is_empty()) {
            by_period.entry(r[period].as_str()).or_default().push(r);
        }
        for (p, rs) in &by_period {
            let name = format!("scatter_{source}_{p}.csv");
            let mut w = std::io::BufWriter::new(fs::File::create(dir.join(&name))?);
            writeln!(w, "sample_id,link_id,observed,estimated")?;
            for r in rs {
                writeln!(w, "{},{},{},{}", r[sample], r[link], r[obs], r[est])?;
            }
            writeln!(md, "- `{name}`: {} observed {source} values in period {p}", rs.len()).unwrap();
        }
    }
    Ok(())
}

fn gap_curve(dir: &Path, md: &mut String) -> CmdResult {
    let (header, rows) = read_csv(&dir.join("trace.csv"))?;
    let (epoch, gap) = (
        column(&header, "epoch", "trace.csv")?,
        column(&header, "rel_gap", "trace.csv")?,
    );
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join("gap.csv"))?);
    writeln!(w, "epoch,rel_gap")?;
    for r in &rows {
        writeln!(w, "{},{}", r[epoch], r[gap])?;
    }
    writeln!(md, "- `gap.csv`: relative gap over {} epochs", rows.len()).unwrap();
    Ok(())
}

const METHODS: [(&str, &str); 3] = [
    ("mate", "metrics.csv"),
    ("historical_mean", "baseline_historical_mean.csv"),
    ("linear_regression", "baseline_linear_regression.csv"),
];

type Key = (String, String, String);

/// Joins the metric files of every method on (fold, source, scope).
pub fn comparison(dir: &Path) -> CmdResult<Vec<(Key, Vec<(String, String)>)>> {
    let mut table: BTreeMap<Key, Vec<(String, String)>> = BTreeMap::new();
    for (i, (_, file)) in METHODS.iter().enumerate() {
        let (header, rows) = read_csv(&dir.join(file))?;
        let col = |n: &str| column(&header, n, file);
        let (fold, source, scope, mape, mdape) =
            (col("fold")?, col("source")?, col("scope")?, col("mape")?, col("mdape")?);
        for r in rows {
            let entry = table
                .entry((r[fold].clone(), r[source].clone(), r[scope].clone()))
                .or_insert_with(|| vec![(String::new(), String::new()); METHODS.len()]);
            entry[i] = (r[mape].clone(), r[mdape].clone());
        }
    }
    Ok(table.into_iter().collect())
}

fn xval_report(dir: &Path, md: &mut String) -> CmdResult {
    let joined = comparison(dir)?;
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join("comparison.csv"))?);
    let mut header = "fold,source,scope".to_string();
    for (m, _) in METHODS {
        write!(header, ",{m}_mape,{m}_mdape").unwrap();
    }
    writeln!(w, "{header}")?;
    for ((fold, source, scope), values) in &joined {
        let cells: Vec<String> = values.iter().map(|(a, b)| format!("{a},{b}")).collect();
        writeln!(w, "{fold},{source},{scope},{}", cells.join(","))?;
    }
    writeln!(md, "- `comparison.csv`: per-fold MAPE and MDAPE of each method\n").unwrap();

    writeln!(md, "| source | scope | MaTE | historical mean | linear regression |").unwrap();
    writeln!(md, "|---|---|---|---|---|").unwrap();
    let mut groups: BTreeMap<(String, String), Vec<Vec<f64>>> = BTreeMap::new();
    for ((_, source, scope), values) in &joined {
        let g = groups
            .entry((source.clone(), scope.clone()))
            .or_insert_with(|| vec![Vec::new(); METHODS.len()]);
        for (i, (mape, _)) in values.iter().enumerate() {
            if let Ok(v) = mape.parse::<f64>() {
                g[i].push(v);
            }
        }
    }
    for ((source, scope), mut per_method) in groups {
        let cells: Vec<String> = per_method
            .iter_mut()
            .map(|v| mate_core::eval::median(v).map_or("-".into(), |m| format!("{m:.2}%")))
            .collect();
        writeln!(md, "| {source} | {scope} | {} |", cells.join(" | ")).unwrap();
    }
    writeln!(md, "\nMedian MAPE over folds.").unwrap();
    Ok(())
}

fn sweep_report(dir: &Path, md: &mut String) -> CmdResult {
    let (header, rows) = read_csv(&dir.join("sweep.csv"))?;
    let col = |n: &str| column(&header, n, "sweep.csv");
    let idx = [col("loss_x")?, col("loss_t")?, col("loss_e")?];
    let (lambda, split, gap) = (col("lambda_e")?, col("split")?, col("rel_gap")?);
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join("sweep_log.csv"))?);
    writeln!(w, "lambda_e,split,log10_loss_x,log10_loss_t,log10_loss_e,rel_gap")?;
    let log = |s: &str| s.parse::<f64>().map(|v| v.log10().to_string()).unwrap_or_default();
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r[lambda],
            r[split],
            log(&r[idx[0]]),
            log(&r[idx[1]]),
            log(&r[idx[2]]),
            r[gap]
        )?;
    }
    writeln!(md, "- `sweep_log.csv`: log10 loss components per equilibrium weight").unwrap();
    Ok(())
}

/// Writes `report.md` and plot-ready CSVs for the run in `dir`.
pub fn cmd_report(dir: &Path) -> CmdResult<String> {
    let meta_path = dir.join("metadata.json");
    let meta: Value = match fs::read_to_string(&meta_path) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => {
            return Err(CliError::Core(mate_core::MateError::Data(format!(
                "missing artifacts in {}: metadata.json",
                dir.display()
            ))))
        }
    };
    let command = meta["command"].as_str().unwrap_or_default().to_string();
    let missing: Vec<&str> = required(&command)
        .iter()
        .copied()
        .filter(|f| !dir.join(f).exists())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Core(mate_core::MateError::Data(format!(
            "missing artifacts in {}: {}",
            dir.display(),
            missing.join(", ")
        ))));
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
    let mut md = String::new();
    writeln!(md, "# {command} run\n").unwrap();
    writeln!(
        md,
        "```json\n{}\n```\n",
        serde_json::to_string_pretty(&summary["result"])?
    )
    .unwrap();
    writeln!(md, "## Files\n").unwrap();
    match command.as_str() {
        "train" | "infer" | "equilibrium" => {
            scatter(dir, &mut md)?;
            gap_curve(dir, &mut md)?;
        }
        "xval" => xval_report(dir, &mut md)?,
        "sweep" => sweep_report(dir, &mut md)?,
        _ => {}
    }
    fs::write(dir.join("report.md"), &md)?;
    Ok(md)
}
