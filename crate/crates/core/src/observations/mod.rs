//! Partially observed link measurements, grouped into samples and periods.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{MateError, Result};

mod csv_io;

pub use csv_io::{read_dataset, write_dataset, DatasetFiles};

/// Dense row-major matrix of exogenous features (entities × features).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MateError::Data(format!(
                "feature matrix {rows}x{cols} given {} values",
                data.len()
            )));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// `self · w`, one value per row.
    pub fn mul_vec(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ · v`, one value per column.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for (o, a) in out.iter_mut().zip(self.row(i)) {
                    *o += a * vi;
                }
            }
        }
        out
    }
}

/// The two measured quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Flow,
    Time,
}

impl Source {
    pub const ALL: [Source; 2] = [Source::Flow, Source::Time];

    pub fn name(self) -> &'static str {
        match self {
            Source::Flow => "flow",
            Source::Time => "travel_time",
        }
    }
}

/// Count and population standard deviation of the non-missing entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceStats {
    pub count: usize,
    pub std: f64,
}

impl SourceStats {
    pub fn of(values: &[Option<f64>]) -> Self {
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        let count = present.len();
        if count == 0 {
            return SourceStats { count, std: 0.0 };
        }
        let mean = present.iter().sum::<f64>() / count as f64;
        let var = present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        SourceStats { count, std: var.sqrt() }
    }
}

/// One day × period of measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub period: usize,
    pub flows: Vec<Option<f64>>,
    pub times: Vec<Option<f64>>,
    /// |A| × |K_Z|.
    pub link_features: Arc<FeatureMatrix>,
    /// |V| × |K_O|.
    pub node_features: Arc<FeatureMatrix>,
}

impl Sample {
    pub fn values(&self, source: Source) -> &[Option<f64>] {
        match source {
            Source::Flow => &self.flows,
            Source::Time => &self.times,
        }
    }

    pub fn values_mut(&mut self, source: Source) -> &mut Vec<Option<f64>> {
        match source {
            Source::Flow => &mut self.flows,
            Source::Time => &mut self.times,
        }
    }

    pub fn stats(&self, source: Source) -> SourceStats {
        SourceStats::of(self.values(source))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub periods: Vec<String>,
    pub link_feature_names: Vec<String>,
    pub node_feature_names: Vec<String>,
    pub samples: Vec<Sample>,
    /// Per period, reference trip generation ḡ (|V|).
    pub reference_generation: Vec<Option<Vec<f64>>>,
    /// Per period, reference O-D flows q̄ (|W|).
    pub reference_od: Vec<Option<Vec<f64>>>,
    /// Flow σ used by the equilibrium term when a sample has no observed flows.
    pub flow_std_fallback: Option<f64>,
}

impl ObservationSet {
    pub fn num_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn num_link_features(&self) -> usize {
        self.link_feature_names.len()
    }

    pub fn num_node_features(&self) -> usize {
        self.node_feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn period_index(&self, label: &str) -> Option<usize> {
        self.periods.iter().position(|p| p == label)
    }

    /// Checks every shape against the model dimensions.
    pub fn validate(&self, num_links: usize, num_nodes: usize, num_od: usize) -> Result<()> {
        let bad = |m: String| Err(MateError::Data(m));
        if self.reference_generation.len() != self.periods.len() || self.reference_od.len() != self.periods.len() {
            return bad("reference vectors must be listed per period".into());
        }
        for g in self.reference_generation.iter().flatten() {
            if g.len() != num_nodes {
                return bad(format!(
                    "reference generation has {} entries, expected {num_nodes}",
                    g.len()
                ));
            }
        }
        for q in self.reference_od.iter().flatten() {
            if q.len() != num_od {
                return bad(format!("reference O-D has {} entries, expected {num_od}", q.len()));
            }
        }
        for s in &self.samples {
            if s.period >= self.periods.len() {
                return bad(format!("sample {} refers to unknown period {}", s.id, s.period));
            }
            if s.flows.len() != num_links || s.times.len() != num_links {
                return bad(format!("sample {} does not cover {num_links} links", s.id));
            }
            for v in s.flows.iter().chain(&s.times).flatten() {
                if !(v.is_finite() && *v >= 0.0) {
                    return bad(format!("sample {} has invalid measurement {v}", s.id));
                }
            }
            let z = &s.link_features;
            if z.rows() != num_links || z.cols() != self.num_link_features() {
                return bad(format!("sample {} link features are {}x{}", s.id, z.rows(), z.cols()));
            }
            let o = &s.node_features;
            if o.rows() != num_nodes || o.cols() != self.num_node_features() {
                return bad(format!("sample {} node features are {}x{}", s.id, o.rows(), o.cols()));
            }
        }
        Ok(())
    }

    /// Mean over samples of the per-sample flow σ (samples with observed flows only).
    pub fn mean_flow_std(&self) -> Option<f64> {
        let stds: Vec<f64> = self
            .samples
            .iter()
            .map(|s| s.stats(Source::Flow))
            .filter(|st| st.count > 0 && st.std > 0.0)
            .map(|st| st.std)
            .collect();
        (!stds.is_empty()).then(|| stds.iter().sum::<f64>() / stds.len() as f64)
    }

    /// Links with at least one observation of `source`, ascending.
    pub fn observed_links(&self, source: Source) -> Vec<usize> {
        let mut set = BTreeSet::new();
        for s in &self.samples {
            for (a, v) in s.values(source).iter().enumerate() {
                if v.is_some() {
                    set.insert(a);
                }
            }
        }
        set.into_iter().collect()
    }

    /// Copy with every observation of `source` on `links` marked missing.
    pub fn masked(&self, source: Source, links: &[usize]) -> ObservationSet {
        let mut out = self.clone();
        for s in &mut out.samples {
            let values = s.values_mut(source);
            for &a in links {
                values[a] = None;
            }
        }
        out
    }

    /// Copy with all flow and time measurements removed, keeping features,
    /// references and a flow σ for the equilibrium term.
    pub fn without_measurements(&self) -> ObservationSet {
        let fallback = self.flow_std_fallback.or_else(|| self.mean_flow_std());
        let mut out = self.clone();
        for s in &mut out.samples {
            s.flows.iter_mut().for_each(|v| *v = None);
            s.times.iter_mut().for_each(|v| *v = None);
        }
        out.flow_std_fallback = fallback;
        out
    }

    /// Total number of non-missing measurements of `source`.
    pub fn count(&self, source: Source) -> usize {
        self.samples.iter().map(|s| s.stats(source).count).sum()
    }

    /// First sample of each period, if any.
    pub fn period_representatives(&self) -> Vec<Option<&Sample>> {
        let mut reps = vec![None; self.num_periods()];
        for s in &self.samples {
            if reps[s.period].is_none() {
                reps[s.period] = Some(s);
            }
        }
        reps
    }
}
