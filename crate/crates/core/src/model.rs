use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::{build_incidences, IncidenceMatrices, Interaction, Network, PathSet};

/// A network together with its path set and incidence structures: everything
/// in the computational graph that is fixed across samples and periods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkModel {
    pub network: Network,
    pub paths: PathSet,
    pub incidences: IncidenceMatrices,
    pub interaction: Interaction,
    capacities: Vec<f64>,
    free_flow_times: Vec<f64>,
}

impl NetworkModel {
    pub fn new(network: Network, paths: PathSet, interaction: Interaction) -> Result<Self> {
        let incidences = build_incidences(&network, &paths, interaction)?;
        Ok(NetworkModel {
            capacities: network.capacities(),
            free_flow_times: network.free_flow_times(),
            network,
            paths,
            incidences,
            interaction,
        })
    }

    /// Same network and paths with a different interaction mask.
    pub fn with_interaction(&self, interaction: Interaction) -> Result<Self> {
        NetworkModel::new(self.network.clone(), self.paths.clone(), interaction)
    }

    pub fn num_links(&self) -> usize {
        self.network.num_links()
    }

    pub fn num_nodes(&self) -> usize {
        self.network.num_nodes()
    }

    pub fn num_paths(&self) -> usize {
        self.paths.num_paths()
    }

    pub fn num_od_pairs(&self) -> usize {
        self.paths.num_od_pairs()
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn free_flow_times(&self) -> &[f64] {
        &self.free_flow_times
    }

    /// Destinations reachable from each node, as O-D pair indices.
    pub fn origin_blocks(&self) -> Vec<&[usize]> {
        (0..self.num_nodes())
            .map(|v| self.incidences.l.row_indices(v))
            .collect()
    }
}
