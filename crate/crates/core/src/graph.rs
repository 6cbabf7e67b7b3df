//! Immutable two-layer directed graph (follow, weighted reblog) over one
//! node universe, with sampling, component extraction and summary metrics.
//!
//! Edge direction `i -> j` means `i` follows (or reblogs) `j`, so content
//! flows from `j` to `i`.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stage_rng;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Layer {
    Follow,
    Reblog,
}

impl Layer {
    pub const ALL: [Layer; 2] = [Layer::Follow, Layer::Reblog];

    pub fn code(self) -> &'static str {
        match self {
            Layer::Follow => "F",
            Layer::Reblog => "R",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Follow => "follow",
            Layer::Reblog => "reblog",
        })
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "follow" => Ok(Layer::Follow),
            "r" | "reblog" => Ok(Layer::Reblog),
            other => Err(Error::InvalidInput(format!("unknown layer `{other}`"))),
        }
    }
}

/// Role of a node relative to the deviant network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupLabel {
    Producer1,
    Producer2,
    Bridge1,
    Bridge2,
    Outer,
}

impl GroupLabel {
    pub const ALL: [GroupLabel; 5] = [
        GroupLabel::Producer1,
        GroupLabel::Producer2,
        GroupLabel::Bridge1,
        GroupLabel::Bridge2,
        GroupLabel::Outer,
    ];

    pub fn code(self) -> &'static str {
        match self {
            GroupLabel::Producer1 => "P1",
            GroupLabel::Producer2 => "P2",
            GroupLabel::Bridge1 => "B1",
            GroupLabel::Bridge2 => "B2",
            GroupLabel::Outer => "O",
        }
    }

    pub fn is_producer(self) -> bool {
        matches!(self, GroupLabel::Producer1 | GroupLabel::Producer2)
    }

    pub fn is_bridge(self) -> bool {
        matches!(self, GroupLabel::Bridge1 | GroupLabel::Bridge2)
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for GroupLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace(['_', '-', ' '], "");
        Ok(match t.as_str() {
            "p1" | "producer1" | "producers1" => GroupLabel::Producer1,
            "p2" | "producer2" | "producers2" => GroupLabel::Producer2,
            "b1" | "bridge1" | "bridges1" => GroupLabel::Bridge1,
            "b2" | "bridge2" | "bridges2" => GroupLabel::Bridge2,
            "o" | "outer" => GroupLabel::Outer,
            _ => return Err(Error::InvalidInput(format!("unknown group `{}`", s.trim()))),
        })
    }
}

/// Compressed sparse rows: neighbor lists sorted by target.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    weights: Vec<u64>,
}

impl Adjacency {
    /// `edges` must be sorted by (source, target) without duplicates.
    fn from_sorted(n: usize, edges: &[(NodeId, NodeId, u64)]) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for &(u, _, _) in edges {
            offsets[u as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Adjacency {
            offsets,
            targets: edges.iter().map(|e| e.1).collect(),
            weights: edges.iter().map(|e| e.2).collect(),
        }
    }

    fn transpose(&self, n: usize) -> Self {
        let mut edges: Vec<(NodeId, NodeId, u64)> =
            self.iter().map(|(u, v, w)| (v, u, w)).collect();
        edges.sort_unstable();
        Adjacency::from_sorted(n, &edges)
    }

    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        let u = u as usize;
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn weights(&self, u: NodeId) -> &[u64] {
        let u = u as usize;
        &self.weights[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: NodeId) -> usize {
        let u = u as usize;
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, NodeId, u64)> + '_ {
        (0..self.offsets.len().saturating_sub(1)).flat_map(move |u| {
            let u = u as NodeId;
            self.neighbors(u)
                .iter()
                .zip(self.weights(u))
                .map(move |(&v, &w)| (u, v, w))
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildDiagnostics {
    pub malformed: usize,
    pub self_loops: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LayeredGraph {
    ids: Vec<String>,
    index: HashMap<String, NodeId>,
    follow_out: Adjacency,
    follow_in: Adjacency,
    reblog_out: Adjacency,
    reblog_in: Adjacency,
    labels: Vec<Option<GroupLabel>>,
}

impl LayeredGraph {
    /// Assemble from node ids and per-layer edge lists. Edges may be unsorted;
    /// follow duplicates collapse, reblog duplicates add their weights, self
    /// loops are dropped.
    pub fn from_parts(
        ids: Vec<String>,
        follow: Vec<(NodeId, NodeId)>,
        reblog: Vec<(NodeId, NodeId, u64)>,
    ) -> Self {
        let n = ids.len();
        let mut f: Vec<(NodeId, NodeId, u64)> = follow
            .into_iter()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| (u, v, 1))
            .collect();
        f.sort_unstable();
        f.dedup_by_key(|e| (e.0, e.1));
        let mut r: Vec<(NodeId, NodeId, u64)> = reblog.into_iter().filter(|e| e.0 != e.1).collect();
        r.sort_unstable();
        let mut merged: Vec<(NodeId, NodeId, u64)> = Vec::with_capacity(r.len());
        for e in r {
            match merged.last_mut() {
                Some(last) if last.0 == e.0 && last.1 == e.1 => last.2 += e.2,
                _ => merged.push(e),
            }
        }
        let follow_out = Adjacency::from_sorted(n, &f);
        let reblog_out = Adjacency::from_sorted(n, &merged);
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as NodeId))
            .collect();
        LayeredGraph {
            follow_in: follow_out.transpose(n),
            reblog_in: reblog_out.transpose(n),
            follow_out,
            reblog_out,
            labels: vec![None; n],
            ids,
            index,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.ids.len()
    }

    pub fn num_edges(&self, layer: Layer) -> usize {
        self.out(layer).num_edges()
    }

    pub fn id(&self, n: NodeId) -> &str {
        &self.ids[n as usize]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn node(&self, id: &str) -> Option<NodeId> {
        self.index.get(id).copied()
    }

    pub fn resolve(&self, id: &str) -> Result<NodeId> {
        self.node(id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn out(&self, layer: Layer) -> &Adjacency {
        match layer {
            Layer::Follow => &self.follow_out,
            Layer::Reblog => &self.reblog_out,
        }
    }

    pub fn inn(&self, layer: Layer) -> &Adjacency {
        match layer {
            Layer::Follow => &self.follow_in,
            Layer::Reblog => &self.reblog_in,
        }
    }

    pub fn edges(&self, layer: Layer) -> impl Iterator<Item = (NodeId, NodeId, u64)> + '_ {
        self.out(layer).iter()
    }

    pub fn label(&self, n: NodeId) -> Option<GroupLabel> {
        self.labels[n as usize]
    }

    pub fn labels(&self) -> &[Option<GroupLabel>] {
        &self.labels
    }

    pub fn set_label(&mut self, n: NodeId, label: GroupLabel) {
        self.labels[n as usize] = Some(label);
    }

    /// Apply `node,group` pairs; unknown node ids are returned, not fatal.
    pub fn apply_labels<'a, I>(&mut self, pairs: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a (String, GroupLabel)>,
    {
        let mut unknown = Vec::new();
        for (id, label) in pairs {
            match self.node(id) {
                Some(n) => self.labels[n as usize] = Some(*label),
                None => unknown.push(id.clone()),
            }
        }
        unknown
    }

    /// Label of every node, unlabeled nodes counted as `Outer`.
    pub fn roles(&self) -> Vec<GroupLabel> {
        self.labels
            .iter()
            .map(|l| l.unwrap_or(GroupLabel::Outer))
            .collect()
    }

    /// Sorted, deduplicated undirected neighbor lists of one layer.
    pub fn undirected(&self, layer: Layer) -> Vec<Vec<NodeId>> {
        let out = self.out(layer);
        let inn = self.inn(layer);
        (0..self.num_nodes() as NodeId)
            .map(|u| merge_sorted(out.neighbors(u), inn.neighbors(u)))
            .collect()
    }

    /// Every node within `hops` undirected steps of a seed, traversing both
    /// layers.
    pub fn snowball_sample<S: AsRef<str>>(
        &self,
        seeds: &[S],
        hops: usize,
    ) -> Result<BTreeSet<NodeId>> {
        let mut start = Vec::with_capacity(seeds.len());
        for s in seeds {
            start.push(self.resolve(s.as_ref())?);
        }
        Ok(self.snowball_from(&start, hops))
    }

    pub fn snowball_from(&self, seeds: &[NodeId], hops: usize) -> BTreeSet<NodeId> {
        let mut seen = vec![false; self.num_nodes()];
        let mut frontier = Vec::new();
        for &s in seeds {
            if !seen[s as usize] {
                seen[s as usize] = true;
                frontier.push(s);
            }
        }
        for _ in 0..hops {
            let mut next = Vec::new();
            for &u in &frontier {
                for layer in Layer::ALL {
                    for &v in self
                        .out(layer)
                        .neighbors(u)
                        .iter()
                        .chain(self.inn(layer).neighbors(u))
                    {
                        if !seen[v as usize] {
                            seen[v as usize] = true;
                            next.push(v);
                        }
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        seen.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| i as NodeId)
            .collect()
    }

    /// Subgraph over `keep` (in ascending original index order) with every
    /// edge whose endpoints are both kept. Labels carry over.
    pub fn induced_subgraph(&self, keep: &BTreeSet<NodeId>) -> LayeredGraph {
        let mut remap = vec![NodeId::MAX; self.num_nodes()];
        let mut ids = Vec::with_capacity(keep.len());
        for (new, &old) in keep.iter().enumerate() {
            remap[old as usize] = new as NodeId;
            ids.push(self.ids[old as usize].clone());
        }
        let kept = |u: NodeId| remap[u as usize] != NodeId::MAX;
        let follow = self
            .edges(Layer::Follow)
            .filter(|&(u, v, _)| kept(u) && kept(v))
            .map(|(u, v, _)| (remap[u as usize], remap[v as usize]))
            .collect();
        let reblog = self
            .edges(Layer::Reblog)
            .filter(|&(u, v, _)| kept(u) && kept(v))
            .map(|(u, v, w)| (remap[u as usize], remap[v as usize], w))
            .collect();
        let mut g = LayeredGraph::from_parts(ids, follow, reblog);
        for &old in keep {
            g.labels[remap[old as usize] as usize] = self.labels[old as usize];
        }
        g
    }

    /// Replace one layer's edges, keeping nodes, labels and the other layer.
    pub fn with_layer_edges(
        &self,
        layer: Layer,
        edges: Vec<(NodeId, NodeId, u64)>,
    ) -> LayeredGraph {
        let (follow, reblog) = match layer {
            Layer::Follow => (
                edges.into_iter().map(|(u, v, _)| (u, v)).collect(),
                self.edges(Layer::Reblog).collect(),
            ),
            Layer::Reblog => (
                self.edges(Layer::Follow).map(|(u, v, _)| (u, v)).collect(),
                edges,
            ),
        };
        let mut g = LayeredGraph::from_parts(self.ids.clone(), follow, reblog);
        g.labels = self.labels.clone();
        g
    }

    /// Weakly connected components of a layer, each sorted, ordered by their
    /// smallest node.
    pub fn weak_components(&self, layer: Layer) -> Vec<Vec<NodeId>> {
        let n = self.num_nodes();
        let out = self.out(layer);
        let inn = self.inn(layer);
        let mut comp = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            let c = comps.len();
            comp[s] = c;
            let mut members = vec![s as NodeId];
            let mut queue = VecDeque::from([s as NodeId]);
            while let Some(u) = queue.pop_front() {
                for &v in out.neighbors(u).iter().chain(inn.neighbors(u)) {
                    if comp[v as usize] == usize::MAX {
                        comp[v as usize] = c;
                        members.push(v);
                        queue.push_back(v);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps
    }

    /// Largest weakly connected component; ties go to the component holding
    /// the smallest node index.
    pub fn gwcc(&self, layer: Layer) -> Result<BTreeSet<NodeId>> {
        if self.num_nodes() == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut best: Option<Vec<NodeId>> = None;
        for c in self.weak_components(layer) {
            if best.as_ref().is_none_or(|b| c.len() > b.len()) {
                best = Some(c);
            }
        }
        Ok(best.unwrap_or_default().into_iter().collect())
    }
}

fn merge_sorted(a: &[NodeId], b: &[NodeId]) -> Vec<NodeId> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x <= y => {
                i += 1;
                if x == y {
                    j += 1;
                }
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
    out
}

/// Incremental graph construction with first-seen dense ids.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    ids: Vec<String>,
    index: HashMap<String, NodeId>,
    follow: HashSet<(NodeId, NodeId)>,
    reblog: HashMap<(NodeId, NodeId), u64>,
    pub diagnostics: BuildDiagnostics,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: &str) -> NodeId {
        if let Some(&n) = self.index.get(id) {
            return n;
        }
        let n = self.ids.len() as NodeId;
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), n);
        n
    }

    pub fn add_edge(&mut self, src: &str, dst: &str, weight: u64, layer: Layer) {
        let u = self.add_node(src);
        let v = self.add_node(dst);
        if u == v {
            self.diagnostics.self_loops += 1;
            return;
        }
        match layer {
            Layer::Follow => {
                self.follow.insert((u, v));
            }
            Layer::Reblog => *self.reblog.entry((u, v)).or_default() += weight,
        }
    }

    /// Parse one `src<TAB>dst<TAB>weight<TAB>layer` line; malformed lines are
    /// counted and skipped.
    pub fn add_line(&mut self, line: &str) {
        if line.trim().is_empty() {
            return;
        }
        match parse_edge_line(line) {
            Some((s, d, w, l)) => self.add_edge(s, d, w, l),
            None => self.diagnostics.malformed += 1,
        }
    }

    pub fn build(self) -> LayeredGraph {
        LayeredGraph::from_parts(
            self.ids,
            self.follow.into_iter().collect(),
            self.reblog
                .into_iter()
                .map(|((u, v), w)| (u, v, w))
                .collect(),
        )
    }
}

fn parse_edge_line(line: &str) -> Option<(&str, &str, u64, Layer)> {
    let mut cols = line.split('\t').map(str::trim);
    let (src, dst, w, l) = (cols.next()?, cols.next()?, cols.next()?, cols.next()?);
    if cols.next().is_some() || src.is_empty() || dst.is_empty() {
        return None;
    }
    let weight = w.parse::<u64>().ok()?;
    let layer = match l {
        "F" => Layer::Follow,
        "R" => Layer::Reblog,
        _ => return None,
    };
    Some((src, dst, weight, layer))
}

/// Build a graph from `(src, dst, weight, layer)` tuples.
pub fn build_graph<I, S>(edges: I) -> (LayeredGraph, BuildDiagnostics)
where
    I: IntoIterator<Item = (S, S, u64, Layer)>,
    S: AsRef<str>,
{
    let mut b = GraphBuilder::new();
    for (s, d, w, l) in edges {
        b.add_edge(s.as_ref(), d.as_ref(), w, l);
    }
    let diag = b.diagnostics;
    (b.build(), diag)
}

pub fn read_edge_list(path: &Path) -> Result<(LayeredGraph, BuildDiagnostics)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut b = GraphBuilder::new();
    for line in BufReader::new(file).lines() {
        b.add_line(&line.map_err(|e| Error::io(path, e))?);
    }
    let diag = b.diagnostics;
    Ok((b.build(), diag))
}

/// Read a `node,group` CSV. A `node,group` header line is skipped.
pub fn read_labels(path: &Path) -> Result<Vec<(String, GroupLabel)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || (i == 0 && t.eq_ignore_ascii_case("node,group")) {
            continue;
        }
        let (node, group) = t.split_once(',').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected node,group".into(),
        })?;
        let label = group.parse().map_err(|e: Error| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((node.trim().to_string(), label));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub n: usize,
    pub e: usize,
    pub avg_degree: f64,
    pub density: f64,
    pub reciprocity: f64,
    pub clustering: f64,
    pub avg_shortest_path: f64,
    pub diameter: u32,
    /// False when path metrics come from sampled BFS sources; the diameter is
    /// then a lower bound.
    pub paths_exact: bool,
    pub path_sources: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsOptions {
    pub exact_paths: bool,
    pub path_samples: usize,
    pub seed: u64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions {
            exact_paths: false,
            path_samples: 1000,
            seed: 0,
        }
    }
}

/// Graphs up to this many nodes always get exact path metrics.
pub const EXACT_PATH_LIMIT: usize = 10_000;

/// Average degree `|E|/|N|` and density `|E|/(|N|(|N|-1))` from counts.
pub fn degree_and_density(n: u64, e: u64) -> (f64, f64) {
    let nf = n as f64;
    let ef = e as f64;
    (ef / nf, ef / (nf * (nf - 1.0)))
}

/// Summary metrics of a layer, computed on its giant weakly connected
/// component. Clustering and path lengths use the undirected simple
/// projection.
pub fn network_stats(g: &LayeredGraph, layer: Layer, opts: &StatsOptions) -> Result<NetworkStats> {
    let keep = g.gwcc(layer)?;
    let sub = g.induced_subgraph(&keep);
    stats_of_connected(&sub, layer, opts, EXACT_PATH_LIMIT)
}

fn stats_of_connected(
    g: &LayeredGraph,
    layer: Layer,
    opts: &StatsOptions,
    exact_limit: usize,
) -> Result<NetworkStats> {
    let n = g.num_nodes();
    if n < 2 {
        return Err(Error::InsufficientData(
            "network statistics need at least 2 nodes".into(),
        ));
    }
    let out = g.out(layer);
    let e = out.num_edges();
    let (avg_degree, density) = degree_and_density(n as u64, e as u64);
    let reciprocal = out.iter().filter(|&(u, v, _)| out.has_edge(v, u)).count();
    let reciprocity = if e == 0 {
        0.0
    } else {
        reciprocal as f64 / e as f64
    };

    let und = g.undirected(layer);
    let clustering = mean_local_clustering(&und);

    let exact = opts.exact_paths || n <= exact_limit || opts.path_samples >= n;
    let sources: Vec<NodeId> = if exact {
        (0..n as NodeId).collect()
    } else {
        let mut rng = stage_rng(opts.seed, 0x5041_5448);
        let mut s: Vec<NodeId> = sample(&mut rng, n, opts.path_samples.max(1))
            .into_iter()
            .map(|i| i as NodeId)
            .collect();
        s.sort_unstable();
        s
    };
    let per_source: Vec<(u64, u64, u32)> =
        sources.par_iter().map(|&s| bfs_summary(&und, s)).collect();
    let (mut total, mut pairs, mut diameter) = (0u64, 0u64, 0u32);
    for (t, p, d) in per_source {
        total += t;
        pairs += p;
        diameter = diameter.max(d);
    }
    let avg_shortest_path = if pairs == 0 {
        0.0
    } else {
        total as f64 / pairs as f64
    };
    Ok(NetworkStats {
        n,
        e,
        avg_degree,
        density,
        reciprocity,
        clustering,
        avg_shortest_path,
        diameter,
        paths_exact: exact,
        path_sources: sources.len(),
    })
}

/// (sum of distances, reached nodes other than the source, eccentricity)
fn bfs_summary(adj: &[Vec<NodeId>], source: NodeId) -> (u64, u64, u32) {
    let mut dist = vec![u32::MAX; adj.len()];
    dist[source as usize] = 0;
    let mut queue = VecDeque::from([source]);
    let (mut total, mut reached, mut ecc) = (0u64, 0u64, 0u32);
    while let Some(u) = queue.pop_front() {
        let d = dist[u as usize];
        for &v in &adj[u as usize] {
            if dist[v as usize] == u32::MAX {
                dist[v as usize] = d + 1;
                total += (d + 1) as u64;
                reached += 1;
                ecc = ecc.max(d + 1);
                queue.push_back(v);
            }
        }
    }
    (total, reached, ecc)
}

/// Mean local clustering; nodes of degree below 2 count as 0.
pub fn mean_local_clustering(adj: &[Vec<NodeId>]) -> f64 {
    if adj.is_empty() {
        return 0.0;
    }
    let local: Vec<f64> = (0..adj.len())
        .into_par_iter()
        .map(|v| {
            let nv = &adj[v];
            let k = nv.len();
            if k < 2 {
                return 0.0;
            }
            let mut links = 0usize;
            for &u in nv {
                links += sorted_intersection_len(nv, &adj[u as usize]);
            }
            // each neighbor pair is seen from both ends
            links as f64 / (k * (k - 1)) as f64
        })
        .collect();
    local.iter().sum::<f64>() / adj.len() as f64
}

fn sorted_intersection_len(a: &[NodeId], b: &[NodeId]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}
