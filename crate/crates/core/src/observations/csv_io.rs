//! Dataset files:
//!
//! * `observations.csv`: `sample_id,period_id,link_id,flow,travel_time`, empty cells missing
//! * `features.csv`: `level,key,entity,entity_id,feature,value`, where `level` is
//!   `period` or `sample`, `key` the period or sample id, `entity` `link` or `node`
//! * `references.csv`: `period_id,kind,index,value`, `kind` one of `generation`, `od`

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{FeatureMatrix, ObservationSet, Sample};
use crate::error::{MateError, Result};

#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub observations: PathBuf,
    pub features: PathBuf,
    pub references: PathBuf,
}

impl DatasetFiles {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetFiles {
            observations: dir.join("observations.csv"),
            features: dir.join("features.csv"),
            references: dir.join("references.csv"),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn data_err(file: &str, row: usize, msg: impl std::fmt::Display) -> MateError {
    MateError::Data(format!("{file} row {row}: {msg}"))
}

fn parse_index(s: &str, limit: usize, file: &str, row: usize, what: &str) -> Result<usize> {
    let i: usize = s
        .trim()
        .parse()
        .map_err(|_| data_err(file, row, format!("invalid {what} {s:?}")))?;
    if i >= limit {
        return Err(data_err(file, row, format!("{what} {i} out of range (< {limit})")));
    }
    Ok(i)
}

fn parse_value(s: &str, file: &str, row: usize) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| data_err(file, row, format!("invalid number {s:?}")))
}

pub fn write_observations<W: Write>(set: &ObservationSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sample_id", "period_id", "link_id", "flow", "travel_time"])?;
    for s in &set.samples {
        let period = &set.periods[s.period];
        for (a, (x, t)) in s.flows.iter().zip(&s.times).enumerate() {
            w.write_record([
                s.id.as_str(),
                period.as_str(),
                &a.to_string(),
                &fmt_opt(*x),
                &fmt_opt(*t),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_matrix<W: Write>(
    w: &mut csv::Writer<W>,
    level: &str,
    key: &str,
    entity: &str,
    names: &[String],
    m: &FeatureMatrix,
) -> Result<()> {
    for i in 0..m.rows() {
        for (j, name) in names.iter().enumerate() {
            w.write_record([level, key, entity, &i.to_string(), name, &m.get(i, j).to_string()])?;
        }
    }
    Ok(())
}

/// Features shared by every sample of a period are written once at period level.
pub fn write_features<W: Write>(set: &ObservationSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["level", "key", "entity", "entity_id", "feature", "value"])?;
    for (p, label) in set.periods.iter().enumerate() {
        let members: Vec<&Sample> = set.samples.iter().filter(|s| s.period == p).collect();
        let Some(first) = members.first() else { continue };
        type Pick = fn(&Sample) -> &Arc<FeatureMatrix>;
        let kinds: [(&str, &[String], Pick); 2] = [
            ("link", &set.link_feature_names, |s| &s.link_features),
            ("node", &set.node_feature_names, |s| &s.node_features),
        ];
        for (entity, names, pick) in kinds {
            if names.is_empty() {
                continue;
            }
            let shared = members.iter().all(|s| Arc::ptr_eq(pick(s), pick(first)))
                || members.iter().all(|s| pick(s) == pick(first));
            if shared {
                write_matrix(&mut w, "period", label, entity, names, pick(first))?;
            } else {
                for s in &members {
                    write_matrix(&mut w, "sample", &s.id, entity, names, pick(s))?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_references<W: Write>(set: &ObservationSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["period_id", "kind", "index", "value"])?;
    for (p, label) in set.periods.iter().enumerate() {
        let kinds = [
            ("generation", &set.reference_generation[p]),
            ("od", &set.reference_od[p]),
        ];
        for (kind, values) in kinds {
            if let Some(values) = values {
                for (i, v) in values.iter().enumerate() {
                    w.write_record([label.as_str(), kind, &i.to_string(), &v.to_string()])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the three dataset files into `dir`.
pub fn write_dataset(set: &ObservationSet, dir: &Path) -> Result<DatasetFiles> {
    std::fs::create_dir_all(dir)?;
    let files = DatasetFiles::in_dir(dir);
    write_observations(set, File::create(&files.observations)?)?;
    write_features(set, File::create(&files.features)?)?;
    write_references(set, File::create(&files.references)?)?;
    Ok(files)
}

struct Partial {
    periods: Vec<String>,
    samples: Vec<(String, usize, Vec<Option<f64>>, Vec<Option<f64>>)>,
}

fn read_observations<R: Read>(reader: R, num_links: usize) -> Result<Partial> {
    const FILE: &str = "observations.csv";
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut periods: Vec<String> = Vec::new();
    let mut samples = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != 5 {
            return Err(data_err(FILE, row, format!("expected 5 fields, found {}", rec.len())));
        }
        let period = match periods.iter().position(|p| p == &rec[1]) {
            Some(p) => p,
            None => {
                periods.push(rec[1].to_string());
                periods.len() - 1
            }
        };
        let idx = *by_id.entry(rec[0].to_string()).or_insert_with(|| {
            samples.push((rec[0].to_string(), period, vec![None; num_links], vec![None; num_links]));
            samples.len() - 1
        });
        if samples[idx].1 != period {
            return Err(data_err(
                FILE,
                row,
                format!("sample {} appears in two periods", &rec[0]),
            ));
        }
        let a = parse_index(&rec[2], num_links, FILE, row, "link_id")?;
        samples[idx].2[a] = parse_value(&rec[3], FILE, row)?;
        samples[idx].3[a] = parse_value(&rec[4], FILE, row)?;
    }
    Ok(Partial { periods, samples })
}

#[derive(Default)]
struct FeatureTable {
    names: Vec<String>,
    /// (level, key) → entries (entity id, feature index, value)
    entries: HashMap<(String, String), Vec<(usize, usize, f64)>>,
}

impl FeatureTable {
    fn matrix(&self, level: &str, key: &str, rows: usize) -> Option<FeatureMatrix> {
        let entries = self.entries.get(&(level.to_string(), key.to_string()))?;
        let mut m = FeatureMatrix::zeros(rows, self.names.len());
        for &(i, j, v) in entries {
            m.set(i, j, v);
        }
        Some(m)
    }
}

fn read_features<R: Read>(reader: R, num_links: usize, num_nodes: usize) -> Result<(FeatureTable, FeatureTable)> {
    const FILE: &str = "features.csv";
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut link = FeatureTable::default();
    let mut node = FeatureTable::default();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != 6 {
            return Err(data_err(FILE, row, format!("expected 6 fields, found {}", rec.len())));
        }
        let level = &rec[0];
        if level != "period" && level != "sample" {
            return Err(data_err(FILE, row, format!("unknown level {level:?}")));
        }
        let (table, limit) = match &rec[2] {
            "link" => (&mut link, num_links),
            "node" => (&mut node, num_nodes),
            other => return Err(data_err(FILE, row, format!("unknown entity {other:?}"))),
        };
        let id = parse_index(&rec[3], limit, FILE, row, "entity_id")?;
        let j = match table.names.iter().position(|n| n == &rec[4]) {
            Some(j) => j,
            None => {
                table.names.push(rec[4].to_string());
                table.names.len() - 1
            }
        };
        let value = parse_value(&rec[5], FILE, row)?.ok_or_else(|| data_err(FILE, row, "missing feature value"))?;
        table
            .entries
            .entry((level.to_string(), rec[1].to_string()))
            .or_default()
            .push((id, j, value));
    }
    Ok((link, node))
}

type References = (Vec<Option<Vec<f64>>>, Vec<Option<Vec<f64>>>);

fn read_references<R: Read>(reader: R, periods: &[String], num_nodes: usize, num_od: usize) -> Result<References> {
    const FILE: &str = "references.csv";
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut gen: Vec<Option<Vec<f64>>> = vec![None; periods.len()];
    let mut od: Vec<Option<Vec<f64>>> = vec![None; periods.len()];
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != 4 {
            return Err(data_err(FILE, row, format!("expected 4 fields, found {}", rec.len())));
        }
        let p = periods
            .iter()
            .position(|l| l == &rec[0])
            .ok_or_else(|| data_err(FILE, row, format!("unknown period {:?}", &rec[0])))?;
        let (target, len) = match &rec[1] {
            "generation" => (&mut gen[p], num_nodes),
            "od" => (&mut od[p], num_od),
            other => return Err(data_err(FILE, row, format!("unknown kind {other:?}"))),
        };
        let idx = parse_index(&rec[2], len, FILE, row, "index")?;
        let value = parse_value(&rec[3], FILE, row)?.ok_or_else(|| data_err(FILE, row, "missing reference value"))?;
        target.get_or_insert_with(|| vec![0.0; len])[idx] = value;
    }
    Ok((gen, od))
}

/// Reads a dataset; the features and references files are optional.
pub fn read_dataset(files: &DatasetFiles, num_links: usize, num_nodes: usize, num_od: usize) -> Result<ObservationSet> {
    let partial = read_observations(File::open(&files.observations)?, num_links)?;
    let (link, node) = if files.features.exists() {
        read_features(File::open(&files.features)?, num_links, num_nodes)?
    } else {
        Default::default()
    };
    let (reference_generation, reference_od) = if files.references.exists() {
        read_references(File::open(&files.references)?, &partial.periods, num_nodes, num_od)?
    } else {
        (vec![None; partial.periods.len()], vec![None; partial.periods.len()])
    };

    let shared = |table: &FeatureTable, rows: usize| -> Vec<Arc<FeatureMatrix>> {
        partial
            .periods
            .iter()
            .map(|p| {
                Arc::new(
                    table
                        .matrix("period", p, rows)
                        .unwrap_or_else(|| FeatureMatrix::zeros(rows, table.names.len())),
                )
            })
            .collect()
    };
    let period_links = shared(&link, num_links);
    let period_nodes = shared(&node, num_nodes);

    let samples = partial
        .samples
        .into_iter()
        .map(|(id, period, flows, times)| {
            let link_features = link
                .matrix("sample", &id, num_links)
                .map(Arc::new)
                .unwrap_or_else(|| period_links[period].clone());
            let node_features = node
                .matrix("sample", &id, num_nodes)
                .map(Arc::new)
                .unwrap_or_else(|| period_nodes[period].clone());
            Sample {
                id,
                period,
                flows,
                times,
                link_features,
                node_features,
            }
        })
        .collect();

    let set = ObservationSet {
        periods: partial.periods,
        link_feature_names: link.names,
        node_feature_names: node.names,
        samples,
        reference_generation,
        reference_od,
        flow_std_fallback: None,
    };
    set.validate(num_links, num_nodes, num_od)?;
    Ok(set)
}
