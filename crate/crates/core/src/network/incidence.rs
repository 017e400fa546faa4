use serde::{Deserialize, Serialize};

use super::{Network, PathSet};
use crate::error::Result;
use crate::sparse::CsrMatrix;

/// Which link pairs may interact in the travel-time kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// Only a link's own flow affects its travel time.
    Diagonal,
    /// Links sharing at least one endpoint node interact.
    #[default]
    SharedNode,
    /// Links interact when one feeds directly into the other.
    UpstreamDownstream,
}

/// The fixed structures of the computational graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceMatrices {
    /// Link-path incidence, |A| × |H|.
    pub d: CsrMatrix,
    /// Path-link incidence (transpose of `d`), |H| × |A|.
    pub dt: CsrMatrix,
    /// O-D-path incidence, |W| × |H|.
    pub m: CsrMatrix,
    /// Origin-O-D incidence, |V| × |W|.
    pub l: CsrMatrix,
    /// Link interaction mask, |A| × |A|, diagonal always set.
    pub e: CsrMatrix,
    /// O-D pair owning each path.
    pub path_od: Vec<usize>,
    /// Origin node of each O-D pair.
    pub od_origin: Vec<usize>,
}

impl IncidenceMatrices {
    pub fn num_links(&self) -> usize {
        self.d.rows()
    }

    pub fn num_paths(&self) -> usize {
        self.d.cols()
    }

    pub fn num_od_pairs(&self) -> usize {
        self.m.rows()
    }

    pub fn num_nodes(&self) -> usize {
        self.l.rows()
    }
}

pub fn interaction_mask(net: &Network, interaction: Interaction) -> CsrMatrix {
    let n = net.num_links();
    let rows: Vec<Vec<usize>> = match interaction {
        Interaction::Diagonal => (0..n).map(|k| vec![k]).collect(),
        Interaction::SharedNode => {
            let out = net.out_links();
            let inc = net.in_links();
            (0..n)
                .map(|k| {
                    let link = net.link(k);
                    let mut row: Vec<usize> = [link.tail, link.head]
                        .iter()
                        .flat_map(|&v| out[v].iter().chain(inc[v].iter()).copied())
                        .collect();
                    row.push(k);
                    row.sort_unstable();
                    row.dedup();
                    row
                })
                .collect()
        }
        Interaction::UpstreamDownstream => {
            let out = net.out_links();
            let inc = net.in_links();
            (0..n)
                .map(|k| {
                    let link = net.link(k);
                    let mut row: Vec<usize> = out[link.head].iter().chain(inc[link.tail].iter()).copied().collect();
                    row.push(k);
                    row.sort_unstable();
                    row.dedup();
                    row
                })
                .collect()
        }
    };
    CsrMatrix::from_rows(n, &rows)
}

/// Builds D, M, L and E for a validated path set.
pub fn build_incidences(net: &Network, paths: &PathSet, interaction: Interaction) -> Result<IncidenceMatrices> {
    paths.validate(net)?;
    let num_paths = paths.num_paths();
    let num_od = paths.num_od_pairs();

    let path_links: Vec<Vec<usize>> = paths.paths.iter().map(|p| p.links.clone()).collect();
    let dt = CsrMatrix::from_rows(net.num_links(), &path_links);
    let d = dt.transpose();

    let mut od_paths = vec![Vec::new(); num_od];
    for (h, p) in paths.paths.iter().enumerate() {
        od_paths[p.od].push(h);
    }
    let m = CsrMatrix::from_rows(num_paths, &od_paths);

    let mut origin_ods = vec![Vec::new(); net.num_nodes()];
    for (w, &(origin, _)) in paths.od_pairs.iter().enumerate() {
        origin_ods[origin].push(w);
    }
    let l = CsrMatrix::from_rows(num_od, &origin_ods);

    Ok(IncidenceMatrices {
        d,
        dt,
        m,
        l,
        e: interaction_mask(net, interaction),
        path_od: paths.paths.iter().map(|p| p.od).collect(),
        od_origin: paths.od_pairs.iter().map(|&(o, _)| o).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::toy_network;
    use crate::network::{k_shortest_paths, Path};

    fn toy_paths(net: &Network) -> PathSet {
        let n = |l| net.node_index(l).unwrap();
        let link = |a, b| {
            net.links()
                .iter()
                .position(|x| x.tail == n(a) && x.head == n(b))
                .unwrap()
        };
        PathSet {
            od_pairs: vec![(n(1), n(4)), (n(1), n(5))],
            paths: vec![
                Path {
                    od: 0,
                    links: vec![link(1, 2), link(2, 4)],
                },
                Path {
                    od: 0,
                    links: vec![link(1, 3), link(3, 4)],
                },
                Path {
                    od: 1,
                    links: vec![link(1, 2), link(2, 5)],
                },
                Path {
                    od: 1,
                    links: vec![link(1, 3), link(3, 5)],
                },
            ],
        }
    }

    #[test]
    fn toy_incidences() {
        let net = toy_network();
        let ps = toy_paths(&net);
        let inc = build_incidences(&net, &ps, Interaction::SharedNode).unwrap();
        assert_eq!((inc.d.rows(), inc.d.cols()), (6, 4));
        // path 1-2-4 uses links (1→2) and (2→4), which are links 0 and 1
        let col0: Vec<f64> = (0..6).map(|a| inc.d.get(a, 0)).collect();
        assert_eq!(col0, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(inc.m.col_sums(), vec![1.0; 4]);
        assert_eq!(inc.l.col_sums(), vec![1.0; 2]);
        assert_eq!(inc.m.row_sums(), vec![2.0, 2.0]);
        assert_eq!(inc.l.row_sums()[net.node_index(1).unwrap()], 2.0);
    }

    #[test]
    fn interaction_variants() {
        let net = toy_network();
        let diag = interaction_mask(&net, Interaction::Diagonal);
        assert_eq!(diag, CsrMatrix::identity(6));
        let shared = interaction_mask(&net, Interaction::SharedNode);
        for k in 0..6 {
            assert_eq!(shared.get(k, k), 1.0);
        }
        // (1→2) and (1→3) share node 1 but neither feeds the other
        assert_eq!(shared.get(0, 3), 1.0);
        let updown = interaction_mask(&net, Interaction::UpstreamDownstream);
        assert_eq!(updown.get(0, 3), 0.0);
        assert_eq!(updown.get(0, 1), 1.0);
        assert_eq!(updown.get(1, 0), 1.0);
        assert_eq!(shared.to_dense(), shared.transpose().to_dense());
    }

    #[test]
    fn rejects_invalid_paths() {
        let net = toy_network();
        let ps = PathSet {
            od_pairs: vec![(0, 3)],
            paths: vec![Path { od: 0, links: vec![1] }],
        };
        assert!(build_incidences(&net, &ps, Interaction::Diagonal).is_err());
        let ok = k_shortest_paths(&net, &[(0, 3)], 2, &net.free_flow_times()).unwrap();
        assert!(build_incidences(&net, &ok, Interaction::Diagonal).is_ok());
    }
}
