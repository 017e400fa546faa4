//! Loopless k-shortest path sets (Yen's scheme).

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{MateError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Index into [`PathSet::od_pairs`].
    pub od: usize,
    pub links: Vec<usize>,
}

/// Ordered O-D pairs and the paths that serve them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    /// Dense `(origin, destination)` node indices.
    pub od_pairs: Vec<(usize, usize)>,
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn num_od_pairs(&self) -> usize {
        self.od_pairs.len()
    }

    /// Checks that every path is a simple walk from its pair's origin to its
    /// destination and that every pair owns at least one path.
    pub fn validate(&self, net: &Network) -> Result<()> {
        let mut served = vec![false; self.od_pairs.len()];
        for (h, path) in self.paths.iter().enumerate() {
            let &(origin, destination) = self
                .od_pairs
                .get(path.od)
                .ok_or_else(|| MateError::Data(format!("path {h} references unknown O-D pair {}", path.od)))?;
            if path.links.is_empty() {
                return Err(MateError::Data(format!("path {h} is empty")));
            }
            let mut node = origin;
            let mut visited = vec![origin];
            for &a in &path.links {
                let link = net
                    .links()
                    .get(a)
                    .ok_or_else(|| MateError::Data(format!("path {h} references unknown link {a}")))?;
                if link.tail != node {
                    return Err(MateError::Data(format!("path {h} is not connected at link {a}")));
                }
                node = link.head;
                if visited.contains(&node) {
                    return Err(MateError::Data(format!("path {h} revisits a node")));
                }
                visited.push(node);
            }
            if node != destination {
                return Err(MateError::Data(format!("path {h} does not end at its destination")));
            }
            served[path.od] = true;
        }
        if let Some(w) = served.iter().position(|s| !s) {
            return Err(MateError::Data(format!("O-D pair {w} has no path")));
        }
        Ok(())
    }

    /// Writes `path_id,od_index,link_ids` with `;`-separated link ids.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["path_id", "od_index", "link_ids"])?;
        for (h, path) in self.paths.iter().enumerate() {
            let ids: Vec<String> = path.links.iter().map(|a| a.to_string()).collect();
            w.write_record([h.to_string(), path.od.to_string(), ids.join(";")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads paths written by [`PathSet::write_csv`]; `od_pairs` must be supplied separately.
    pub fn read_csv<R: Read>(reader: R, od_pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut paths = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |k: usize| rec.get(k).ok_or_else(|| MateError::parse(line, "missing field"));
            let od: usize = field(1)?
                .trim()
                .parse()
                .map_err(|_| MateError::parse(line, "invalid od_index"))?;
            let links = field(2)?
                .split(';')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| MateError::parse(line, "invalid link id"))
                })
                .collect::<Result<Vec<_>>>()?;
            paths.push(Path { od, links });
        }
        Ok(PathSet { od_pairs, paths })
    }
}

#[derive(Clone)]
struct Candidate {
    cost: f64,
    nodes: Vec<usize>,
    links: Vec<usize>,
    labels: Vec<u64>,
}

impl Candidate {
    fn key(&self) -> (f64, &[u64], &[usize]) {
        (self.cost, &self.labels, &self.links)
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        let (c1, n1, l1) = self.key();
        let (c2, n2, l2) = other.key();
        c1.total_cmp(&c2).then_with(|| n1.cmp(n2)).then_with(|| l1.cmp(l2))
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

struct Searcher<'a> {
    net: &'a Network,
    cost: &'a [f64],
    out_links: &'a [Vec<usize>],
    in_links: &'a [Vec<usize>],
}

impl Searcher<'_> {
    /// Shortest path from `source` to `target` avoiding blocked links and nodes.
    ///
    /// Distances to `target` are computed on the reversed graph; the path is then
    /// walked forward choosing, among links on a shortest path, the one whose head
    /// has the smallest label (then smallest link id), which makes the result
    /// independent of link declaration order.
    fn shortest(
        &self,
        source: usize,
        target: usize,
        blocked_links: &[bool],
        blocked_nodes: &[bool],
    ) -> Option<(Vec<usize>, Vec<usize>)> {
        let n = self.net.num_nodes();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[target] = 0.0;
        heap.push(HeapItem(0.0, target));
        while let Some(HeapItem(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            if u == source {
                break;
            }
            for &a in &self.in_links[u] {
                let tail = self.net.link(a).tail;
                if blocked_links[a] || blocked_nodes[tail] {
                    continue;
                }
                let nd = d + self.cost[a];
                if nd < dist[tail] {
                    dist[tail] = nd;
                    heap.push(HeapItem(nd, tail));
                }
            }
        }
        if !dist[source].is_finite() {
            return None;
        }
        let mut nodes = vec![source];
        let mut links = Vec::new();
        let mut u = source;
        while u != target {
            let tol = 1e-9 * (1.0 + dist[u].abs());
            let next = self.out_links[u]
                .iter()
                .copied()
                .filter(|&a| !blocked_links[a])
                .filter(|&a| {
                    let h = self.net.link(a).head;
                    !blocked_nodes[h] && dist[h].is_finite() && (self.cost[a] + dist[h] - dist[u]).abs() <= tol
                })
                .filter(|&a| !nodes.contains(&self.net.link(a).head))
                .min_by_key(|&a| (self.net.node_label(self.net.link(a).head), a))?;
            u = self.net.link(next).head;
            links.push(next);
            nodes.push(u);
        }
        Some((nodes, links))
    }

    fn candidate(&self, nodes: Vec<usize>, links: Vec<usize>) -> Candidate {
        let cost = links.iter().map(|&a| self.cost[a]).sum();
        let labels = nodes.iter().map(|&v| self.net.node_label(v)).collect();
        Candidate {
            cost,
            nodes,
            links,
            labels,
        }
    }

    fn yen(&self, source: usize, target: usize, k: usize) -> Option<Vec<Candidate>> {
        let num_links = self.net.num_links();
        let num_nodes = self.net.num_nodes();
        let mut blocked_links = vec![false; num_links];
        let mut blocked_nodes = vec![false; num_nodes];
        let (nodes, links) = self.shortest(source, target, &blocked_links, &blocked_nodes)?;
        let mut accepted = vec![self.candidate(nodes, links)];
        let mut pending: BTreeSet<Candidate> = BTreeSet::new();

        while accepted.len() < k {
            let prev = accepted.last().unwrap().clone();
            for i in 0..prev.links.len() {
                let spur = prev.nodes[i];
                let root_nodes = &prev.nodes[..=i];
                blocked_links.iter_mut().for_each(|b| *b = false);
                blocked_nodes.iter_mut().for_each(|b| *b = false);
                for p in &accepted {
                    if p.nodes.len() > i && p.nodes[..=i] == *root_nodes {
                        blocked_links[p.links[i]] = true;
                    }
                }
                for &v in &prev.nodes[..i] {
                    blocked_nodes[v] = true;
                }
                if let Some((spur_nodes, spur_links)) = self.shortest(spur, target, &blocked_links, &blocked_nodes) {
                    let mut nodes = root_nodes.to_vec();
                    nodes.extend_from_slice(&spur_nodes[1..]);
                    let mut links = prev.links[..i].to_vec();
                    links.extend(spur_links);
                    let cand = self.candidate(nodes, links);
                    if !accepted.iter().any(|p| p.links == cand.links) {
                        pending.insert(cand);
                    }
                }
            }
            match pending.pop_first() {
                Some(best) => accepted.push(best),
                None => break,
            }
        }
        Some(accepted)
    }
}

/// Up to `k` loopless minimum-cost paths per O-D pair, ascending by cost with
/// ties broken by the node-label sequence and then the link-id sequence.
pub fn k_shortest_paths(net: &Network, od_pairs: &[(usize, usize)], k: usize, cost: &[f64]) -> Result<PathSet> {
    if k == 0 {
        return Err(MateError::Config("k must be at least 1".into()));
    }
    if cost.len() != net.num_links() {
        return Err(MateError::Config("one cost per link is required".into()));
    }
    if let Some(a) = cost.iter().position(|&c| !(c > 0.0) || !c.is_finite()) {
        return Err(MateError::Config(format!("link {a} has non-positive path cost")));
    }
    let out_links = net.out_links();
    let in_links = net.in_links();
    let searcher = Searcher {
        net,
        cost,
        out_links: &out_links,
        in_links: &in_links,
    };
    let per_pair: Vec<Result<Vec<Candidate>>> = od_pairs
        .par_iter()
        .map(|&(o, d)| {
            searcher.yen(o, d, k).ok_or(MateError::Disconnected {
                origin: net.node_label(o),
                destination: net.node_label(d),
            })
        })
        .collect();
    let mut paths = Vec::new();
    for (w, found) in per_pair.into_iter().enumerate() {
        for cand in found? {
            paths.push(Path {
                od: w,
                links: cand.links,
            });
        }
    }
    Ok(PathSet {
        od_pairs: od_pairs.to_vec(),
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::toy_network;

    fn node_path(net: &Network, od: (usize, usize), links: &[usize]) -> Vec<u64> {
        let mut out = vec![net.node_label(od.0)];
        out.extend(links.iter().map(|&a| net.node_label(net.link(a).head)));
        out
    }

    #[test]
    fn toy_network_two_paths() {
        let net = toy_network();
        let o = net.node_index(1).unwrap();
        let d = net.node_index(4).unwrap();
        let ps = k_shortest_paths(&net, &[(o, d)], 2, &net.free_flow_times()).unwrap();
        let seqs: Vec<Vec<u64>> = ps.paths.iter().map(|p| node_path(&net, (o, d), &p.links)).collect();
        assert_eq!(seqs, vec![vec![1, 2, 4], vec![1, 3, 4]]);
        ps.validate(&net).unwrap();
    }

    #[test]
    fn single_link_pair() {
        let net = toy_network();
        let ps = k_shortest_paths(&net, &[(0, 1)], 1, &net.free_flow_times()).unwrap();
        assert_eq!(ps.paths.len(), 1);
        assert_eq!(ps.paths[0].links, vec![0]);
    }

    #[test]
    fn fewer_paths_than_k_and_disconnected_pairs() {
        let net = toy_network();
        let ps = k_shortest_paths(&net, &[(0, 1)], 5, &net.free_flow_times()).unwrap();
        assert_eq!(ps.paths.len(), 1);
        let err = k_shortest_paths(&net, &[(1, 0)], 1, &net.free_flow_times()).unwrap_err();
        assert!(matches!(
            err,
            MateError::Disconnected {
                origin: 2,
                destination: 1
            }
        ));
    }

    #[test]
    fn ascending_cost_and_loopless() {
        // two-way ladder with a detour
        let net = Network::from_labeled_links(&[
            (1, 2, 1.0, 1.0),
            (2, 1, 1.0, 1.0),
            (2, 3, 1.0, 1.0),
            (3, 2, 1.0, 1.0),
            (1, 4, 1.0, 2.0),
            (4, 3, 1.0, 1.5),
            (4, 2, 1.0, 0.5),
            (2, 4, 1.0, 0.5),
        ])
        .unwrap();
        let o = net.node_index(1).unwrap();
        let d = net.node_index(3).unwrap();
        let ps = k_shortest_paths(&net, &[(o, d)], 4, &net.free_flow_times()).unwrap();
        ps.validate(&net).unwrap();
        let cost: Vec<f64> = ps
            .paths
            .iter()
            .map(|p| p.links.iter().map(|&a| net.link(a).free_flow_time).sum())
            .collect();
        assert!(cost.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(cost[0], 2.0);
        assert_eq!(ps.paths.len(), 4);
    }

    #[test]
    fn csv_round_trip() {
        let net = toy_network();
        let ps = k_shortest_paths(&net, &[(0, 2), (0, 4)], 2, &net.free_flow_times()).unwrap();
        let mut buf = Vec::new();
        ps.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("path_id,od_index,link_ids\n"));
        let back = PathSet::read_csv(&buf[..], ps.od_pairs.clone()).unwrap();
        assert_eq!(back, ps);
    }
}
