//! Modularity and Louvain clustering on the symmetrized weighted projection
//! of one layer (`w_ij = w(i->j) + w(j->i)`, resolution 1).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GroupLabel, Layer, LayeredGraph, NodeId};
use crate::rng::stage_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Community of every node; ids are dense from 0.
    pub assignment: Vec<u32>,
    pub modularity: f64,
}

impl Partition {
    pub fn num_communities(&self) -> usize {
        self.assignment
            .iter()
            .map(|&c| c as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_communities()];
        for &c in &self.assignment {
            sizes[c as usize] += 1;
        }
        sizes
    }

    pub fn members(&self, community: u32) -> Vec<NodeId> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == community)
            .map(|(i, _)| i as NodeId)
            .collect()
    }
}

/// Relabel so communities are numbered by first appearance.
pub fn dense_labels(raw: &[usize]) -> Vec<u32> {
    let mut map: HashMap<usize, u32> = HashMap::new();
    raw.iter()
        .map(|&c| {
            let next = map.len() as u32;
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// `Q = sum_c (e_c/m - (d_c/2m)^2)` on the symmetrized projection.
pub fn modularity(g: &LayeredGraph, layer: Layer, assignment: &[u32]) -> Result<f64> {
    if g.num_nodes() == 0 {
        return Err(Error::EmptyGraph);
    }
    if assignment.len() != g.num_nodes() {
        return Err(Error::InvalidInput(format!(
            "partition covers {} nodes, graph has {}",
            assignment.len(),
            g.num_nodes()
        )));
    }
    let k = assignment
        .iter()
        .map(|&c| c as usize + 1)
        .max()
        .unwrap_or(0);
    let mut internal = vec![0.0f64; k];
    let mut degree = vec![0.0f64; k];
    let mut m = 0.0f64;
    for (u, v, w) in g.edges(layer) {
        let w = w as f64;
        let (cu, cv) = (
            assignment[u as usize] as usize,
            assignment[v as usize] as usize,
        );
        m += w;
        degree[cu] += w;
        degree[cv] += w;
        if cu == cv {
            internal[cu] += w;
        }
    }
    if m == 0.0 {
        return Err(Error::NoEdges);
    }
    Ok(internal
        .iter()
        .zip(&degree)
        .map(|(&e, &d)| e / m - (d / (2.0 * m)).powi(2))
        .sum())
}

/// One aggregation level: undirected adjacency without self loops, the
/// internal weight folded into each node, and node strengths.
#[derive(Debug, Clone)]
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    loops: Vec<f64>,
    strength: Vec<f64>,
    two_m: f64,
}

impl Level {
    fn from_graph(g: &LayeredGraph, layer: Layer) -> Self {
        let n = g.num_nodes();
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for (u, v, w) in g.edges(layer) {
            *maps[u as usize].entry(v as usize).or_default() += w as f64;
            *maps[v as usize].entry(u as usize).or_default() += w as f64;
        }
        let adj: Vec<Vec<(usize, f64)>> =
            maps.into_iter().map(|m| m.into_iter().collect()).collect();
        Level::new(adj, vec![0.0; n])
    }

    fn new(adj: Vec<Vec<(usize, f64)>>, loops: Vec<f64>) -> Self {
        let strength: Vec<f64> = adj
            .iter()
            .zip(&loops)
            .map(|(a, &l)| a.iter().map(|e| e.1).sum::<f64>() + 2.0 * l)
            .collect();
        let two_m = strength.iter().sum();
        Level {
            adj,
            loops,
            strength,
            two_m,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn modularity(&self, comm: &[usize]) -> f64 {
        let n = self.len();
        let mut inner = vec![0.0; n];
        let mut tot = vec![0.0; n];
        for i in 0..n {
            let c = comm[i];
            tot[c] += self.strength[i];
            inner[c] += 2.0 * self.loops[i];
            for &(j, w) in &self.adj[i] {
                if comm[j] == c {
                    inner[c] += w;
                }
            }
        }
        let m2 = self.two_m;
        (0..n).map(|c| inner[c] / m2 - (tot[c] / m2).powi(2)).sum()
    }

    /// Greedy local moving. Returns whether any node changed community.
    fn local_moving(&self, comm: &mut [usize], rng: &mut impl rand::Rng, tol: f64) -> bool {
        let n = self.len();
        let m2 = self.two_m;
        let mut tot = vec![0.0; n];
        for i in 0..n {
            tot[comm[i]] += self.strength[i];
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut neigh_weight = vec![0.0f64; n];
        let mut listed = vec![false; n];
        let mut neigh_comms: Vec<usize> = Vec::new();
        let mut any_move = false;
        let mut current = self.modularity(comm);
        loop {
            order.shuffle(rng);
            let mut moved = false;
            for &i in &order {
                let ki = self.strength[i];
                if ki == 0.0 {
                    continue;
                }
                let own = comm[i];
                for &c in &neigh_comms {
                    neigh_weight[c] = 0.0;
                    listed[c] = false;
                }
                neigh_comms.clear();
                listed[own] = true;
                neigh_comms.push(own);
                for &(j, w) in &self.adj[i] {
                    let c = comm[j];
                    if !listed[c] {
                        listed[c] = true;
                        neigh_comms.push(c);
                    }
                    neigh_weight[c] += w;
                }
                tot[own] -= ki;
                let gain = |c: usize| neigh_weight[c] - tot[c] * ki / m2;
                let mut best = own;
                let mut best_gain = gain(own);
                for &c in &neigh_comms {
                    let g = gain(c);
                    if g > best_gain + 1e-12 * m2.max(1.0) {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += ki;
                if best != own {
                    comm[i] = best;
                    moved = true;
                    any_move = true;
                }
            }
            if !moved {
                break;
            }
            let next = self.modularity(comm);
            debug_assert!(next >= current - 1e-12);
            let improved = next - current;
            current = next;
            if improved < tol {
                break;
            }
        }
        any_move
    }

    /// Collapse communities into nodes. `comm` must be dense.
    fn aggregate(&self, comm: &[usize], k: usize) -> Level {
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        let mut loops = vec![0.0; k];
        for i in 0..self.len() {
            let ci = comm[i];
            loops[ci] += self.loops[i];
            for &(j, w) in &self.adj[i] {
                let cj = comm[j];
                if ci == cj {
                    // every undirected edge is listed from both ends
                    loops[ci] += w / 2.0;
                } else {
                    *maps[ci].entry(cj).or_default() += w;
                }
            }
        }
        Level::new(
            maps.into_iter().map(|m| m.into_iter().collect()).collect(),
            loops,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LouvainOptions {
    pub seed: u64,
    pub tol: f64,
}

impl Default for LouvainOptions {
    fn default() -> Self {
        LouvainOptions { seed: 0, tol: 1e-7 }
    }
}

/// Seeded two-phase Louvain.
pub fn louvain(g: &LayeredGraph, layer: Layer, opts: &LouvainOptions) -> Result<Partition> {
    louvain_traced(g, layer, opts).map(|(p, _)| p)
}

/// Louvain plus the modularity reached after each aggregation level.
pub fn louvain_traced(
    g: &LayeredGraph,
    layer: Layer,
    opts: &LouvainOptions,
) -> Result<(Partition, Vec<f64>)> {
    if g.num_edges(layer) == 0 {
        return Err(Error::NoEdges);
    }
    let mut rng = stage_rng(opts.seed, 0x4C4F_5556);
    let mut level = Level::from_graph(g, layer);
    // community of each original node
    let mut membership: Vec<usize> = (0..g.num_nodes()).collect();
    let mut trace = vec![modularity(g, layer, &dense_labels(&membership))?];
    loop {
        let mut comm: Vec<usize> = (0..level.len()).collect();
        let moved = level.local_moving(&mut comm, &mut rng, opts.tol);
        if !moved {
            break;
        }
        let dense: Vec<usize> = dense_labels(&comm)
            .into_iter()
            .map(|c| c as usize)
            .collect();
        let k = dense.iter().max().map_or(0, |&c| c + 1);
        for m in membership.iter_mut() {
            *m = dense[*m];
        }
        let q = modularity(g, layer, &dense_labels(&membership))?;
        let gain = q - trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        trace.push(q);
        if k == level.len() || gain < opts.tol {
            break;
        }
        level = level.aggregate(&dense, k);
    }
    let assignment = dense_labels(&membership);
    let q = modularity(g, layer, &assignment)?;
    Ok((
        Partition {
            assignment,
            modularity: q,
        },
        trace,
    ))
}

/// `node,community` CSV.
pub fn partition_csv(g: &LayeredGraph, p: &Partition) -> String {
    let mut out = String::from("node,community\n");
    for (i, c) in p.assignment.iter().enumerate() {
        out.push_str(&format!("{},{}\n", g.id(i as NodeId), c));
    }
    out
}

/// Read a `community,role` CSV; a header line is skipped.
pub fn read_role_map(path: &Path) -> Result<BTreeMap<u32, GroupLabel>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || (i == 0 && t.eq_ignore_ascii_case("community,role")) {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (c, r) = t
            .split_once(',')
            .ok_or_else(|| parse_err("expected community,role".into()))?;
        let c: u32 = c
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad community: {e}")))?;
        let role: GroupLabel = r.parse().map_err(|e: Error| parse_err(e.to_string()))?;
        out.insert(c, role);
    }
    Ok(out)
}

/// Role of every node under a community-to-role mapping; unmapped
/// communities are `Outer`.
pub fn roles_from_partition(
    p: &Partition,
    role_map: &BTreeMap<u32, GroupLabel>,
) -> Vec<GroupLabel> {
    p.assignment
        .iter()
        .map(|c| role_map.get(c).copied().unwrap_or(GroupLabel::Outer))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use proptest::prelude::*;

    fn undirected(n: usize, edges: &[(u32, u32)]) -> LayeredGraph {
        let ids = (0..n).map(|i| format!("v{i}")).collect();
        LayeredGraph::from_parts(ids, vec![], edges.iter().map(|&(u, v)| (u, v, 1)).collect())
    }

    fn clique_edges(nodes: std::ops::Range<u32>) -> Vec<(u32, u32)> {
        let mut e = Vec::new();
        for i in nodes.clone() {
            for j in nodes.clone() {
                if i < j {
                    e.push((i, j));
                }
            }
        }
        e
    }

    #[test]
    fn single_community_has_zero_modularity() {
        let g = undirected(4, &[(0, 1), (1, 2), (2, 3)]);
        assert!(modularity(&g, Layer::Reblog, &[0; 4]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn two_disjoint_cliques() {
        let mut e = clique_edges(0..4);
        e.extend(clique_edges(4..8));
        let g = undirected(8, &e);
        let q = modularity(&g, Layer::Reblog, &[0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        assert!((q - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singletons_formula() {
        let g = undirected(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]);
        let q = modularity(&g, Layer::Reblog, &[0, 1, 2, 3]).unwrap();
        // degrees 2,2,3,1 with m = 4
        let expected = -[2.0f64, 3.0, 2.0, 1.0]
            .iter()
            .map(|d| (d / 8.0).powi(2))
            .sum::<f64>();
        assert!((q - expected).abs() < 1e-15);
        assert!(q < 0.0);
    }

    #[test]
    fn reciprocal_edges_double_the_weight() {
        let ids = vec!["a".into(), "b".into(), "c".into()];
        let g = LayeredGraph::from_parts(ids, vec![(0, 1), (1, 0), (1, 2)], vec![]);
        // w_ab = 2, w_bc = 1, m = 3
        let q = modularity(&g, Layer::Follow, &[0, 0, 1]).unwrap();
        let expected = 2.0 / 3.0 - (5.0f64 / 6.0).powi(2) - (1.0f64 / 6.0).powi(2);
        assert!((q - expected).abs() < 1e-15);
    }

    #[test]
    fn modularity_errors() {
        assert!(matches!(
            modularity(&LayeredGraph::default(), Layer::Reblog, &[]),
            Err(Error::EmptyGraph)
        ));
        let g = undirected(2, &[]);
        assert!(matches!(
            modularity(&g, Layer::Reblog, &[0, 1]),
            Err(Error::NoEdges)
        ));
    }

    #[test]
    fn two_triangles_recovered() {
        let g = undirected(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]);
        for seed in 0..10 {
            let p = louvain(&g, Layer::Reblog, &LouvainOptions { seed, tol: 1e-7 }).unwrap();
            assert_eq!(p.assignment, vec![0, 0, 0, 1, 1, 1]);
            assert!((p.modularity - 5.0 / 14.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edgeless_graph_is_rejected() {
        let g = undirected(3, &[]);
        assert!(matches!(
            louvain(&g, Layer::Reblog, &LouvainOptions::default()),
            Err(Error::NoEdges)
        ));
    }

    #[test]
    fn isolated_nodes_stay_alone() {
        let g = undirected(5, &[(0, 1), (1, 2), (0, 2)]);
        let p = louvain(&g, Layer::Reblog, &LouvainOptions::default()).unwrap();
        assert_eq!(p.assignment, vec![0, 0, 0, 1, 2]);
    }

    #[test]
    fn role_mapping() {
        let p = Partition {
            assignment: vec![0, 1, 1, 2],
            modularity: 0.0,
        };
        let map: BTreeMap<u32, GroupLabel> =
            [(0, GroupLabel::Producer1), (1, GroupLabel::Bridge2)].into();
        assert_eq!(
            roles_from_partition(&p, &map),
            vec![
                GroupLabel::Producer1,
                GroupLabel::Bridge2,
                GroupLabel::Bridge2,
                GroupLabel::Outer
            ]
        );
    }

    #[test]
    fn partition_csv_uses_external_ids() {
        let mut b = GraphBuilder::new();
        b.add_edge("x", "y", 1, Layer::Reblog);
        let g = b.build();
        let p = Partition {
            assignment: vec![0, 0],
            modularity: 0.0,
        };
        assert_eq!(partition_csv(&g, &p), "node,community\nx,0\ny,0\n");
    }

    proptest! {
        #[test]
        fn returned_modularity_is_consistent(
            edges in prop::collection::vec((0u32..15, 0u32..15, 1u64..4), 1..60),
            seed in 0u64..1000,
        ) {
            let ids = (0..15).map(|i| format!("v{i}")).collect();
            let g = LayeredGraph::from_parts(ids, vec![], edges);
            if g.num_edges(Layer::Reblog) == 0 {
                return Ok(());
            }
            let opts = LouvainOptions { seed, tol: 1e-7 };
            let (p, trace) = louvain_traced(&g, Layer::Reblog, &opts).unwrap();
            let q = modularity(&g, Layer::Reblog, &p.assignment).unwrap();
            prop_assert!((p.modularity - q).abs() <= 1e-12);
            for w in trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
            let k = p.num_communities() as u32;
            prop_assert!(p.assignment.iter().all(|&c| c < k));
            prop_assert_eq!(p.sizes().iter().filter(|&&s| s == 0).count(), 0);
            let again = louvain(&g, Layer::Reblog, &opts).unwrap();
            prop_assert_eq!(again, p);
        }
    }
}
