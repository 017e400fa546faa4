//! Transportation graph, path sets and incidence structures.

mod incidence;
mod paths;
mod tntp;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MateError, Result};

pub use incidence::{build_incidences, IncidenceMatrices, Interaction};
pub use paths::{k_shortest_paths, Path, PathSet};
pub use tntp::{parse_tntp, parse_tntp_network, parse_tntp_trips};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// Dense index of the tail node.
    pub tail: usize,
    /// Dense index of the head node.
    pub head: usize,
    /// Capacity in veh/h.
    pub capacity: f64,
    pub free_flow_time: f64,
}

/// Directed graph with dense node and link indices.
///
/// Link `a` is the `a`-th declared link; every matrix in the model uses this
/// ordering. Original node labels are kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    node_labels: Vec<u64>,
    #[serde(skip)]
    node_index: HashMap<u64, usize>,
    links: Vec<Link>,
}

impl Network {
    pub fn new(node_labels: Vec<u64>, links: Vec<Link>) -> Result<Self> {
        let mut node_index = HashMap::with_capacity(node_labels.len());
        for (i, &label) in node_labels.iter().enumerate() {
            if node_index.insert(label, i).is_some() {
                return Err(MateError::Data(format!("duplicate node label {label}")));
            }
        }
        for (a, link) in links.iter().enumerate() {
            if link.tail >= node_labels.len() || link.head >= node_labels.len() {
                return Err(MateError::Data(format!("link {a} references an undeclared node")));
            }
            if !(link.capacity > 0.0) {
                return Err(MateError::Data(format!("link {a} has non-positive capacity")));
            }
            if !(link.free_flow_time > 0.0) {
                return Err(MateError::Data(format!("link {a} has non-positive free-flow time")));
            }
        }
        Ok(Network {
            node_labels,
            node_index,
            links,
        })
    }

    /// Builds a network from `(tail label, head label, capacity, free-flow time)` rows,
    /// declaring nodes in order of first appearance.
    pub fn from_labeled_links(rows: &[(u64, u64, f64, f64)]) -> Result<Self> {
        let mut labels = Vec::new();
        let mut index = HashMap::new();
        let mut intern = |label: u64| -> usize {
            *index.entry(label).or_insert_with(|| {
                labels.push(label);
                labels.len() - 1
            })
        };
        let links: Vec<Link> = rows
            .iter()
            .map(|&(t, h, capacity, free_flow_time)| Link {
                tail: intern(t),
                head: intern(h),
                capacity,
                free_flow_time,
            })
            .collect();
        Network::new(labels, links)
    }

    pub fn num_nodes(&self) -> usize {
        self.node_labels.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, a: usize) -> &Link {
        &self.links[a]
    }

    pub fn node_labels(&self) -> &[u64] {
        &self.node_labels
    }

    pub fn node_label(&self, node: usize) -> u64 {
        self.node_labels[node]
    }

    pub fn node_index(&self, label: u64) -> Option<usize> {
        if self.node_index.len() != self.node_labels.len() {
            // deserialized instance without the lookup table
            return self.node_labels.iter().position(|&l| l == label);
        }
        self.node_index.get(&label).copied()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity).collect()
    }

    pub fn free_flow_times(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.free_flow_time).collect()
    }

    /// Outgoing link ids per node, in link-id order.
    pub fn out_links(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_nodes()];
        for (a, link) in self.links.iter().enumerate() {
            out[link.tail].push(a);
        }
        out
    }

    /// Incoming link ids per node, in link-id order.
    pub fn in_links(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_nodes()];
        for (a, link) in self.links.iter().enumerate() {
            inc[link.head].push(a);
        }
        inc
    }

    /// Bidirectional grid of `rows × cols` nodes with randomized capacities and
    /// free-flow times, used for scalability runs.
    pub fn grid<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Result<Self> {
        let label = |r: usize, c: usize| (r * cols + c + 1) as u64;
        let mut rows_out = Vec::new();
        let mut push = |a: u64, b: u64, rng: &mut R| {
            let capacity = rng.random_range(1000.0..4000.0);
            let fft = rng.random_range(1.0..5.0);
            rows_out.push((a, b, capacity, fft));
            rows_out.push((b, a, capacity, fft));
        };
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    push(label(r, c), label(r, c + 1), rng);
                }
                if r + 1 < rows {
                    push(label(r, c), label(r + 1, c), rng);
                }
            }
        }
        let node_labels: Vec<u64> = (1..=(rows * cols) as u64).collect();
        let links = rows_out
            .into_iter()
            .map(|(t, h, capacity, free_flow_time)| Link {
                tail: (t - 1) as usize,
                head: (h - 1) as usize,
                capacity,
                free_flow_time,
            })
            .collect();
        Network::new(node_labels, links)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdEntry {
    pub origin: usize,
    pub destination: usize,
    pub demand: f64,
}

/// Reference trip table keyed by dense `(origin, destination)` node indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OdTable {
    entries: Vec<OdEntry>,
}

impl OdTable {
    /// Keeps strictly positive inter-zonal entries, sorted by `(origin, destination)`.
    pub fn new(mut entries: Vec<OdEntry>) -> Self {
        entries.retain(|e| e.demand > 0.0 && e.origin != e.destination);
        entries.sort_by(|a, b| (a.origin, a.destination).cmp(&(b.origin, b.destination)));
        entries.dedup_by(|next, prev| {
            if (next.origin, next.destination) == (prev.origin, prev.destination) {
                prev.demand += next.demand;
                true
            } else {
                false
            }
        });
        OdTable { entries }
    }

    pub fn entries(&self) -> &[OdEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|e| (e.origin, e.destination)).collect()
    }

    pub fn demands(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.demand).collect()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.demand).sum()
    }

    pub fn get(&self, origin: usize, destination: usize) -> f64 {
        self.entries
            .binary_search_by(|e| (e.origin, e.destination).cmp(&(origin, destination)))
            .map(|i| self.entries[i].demand)
            .unwrap_or(0.0)
    }
}
