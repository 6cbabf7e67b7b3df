//! Diffusion trees rebuilt from reblog events, the consumer taxonomy derived
//! from them, reach accounting and spreading efficiency.
//!
//! An event `(actor, source, post)` says that `actor` reblogged the copy of
//! `post` held by `source`. The root of a chain is the node that holds the
//! post without having reblogged it, i.e. its author.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GroupLabel, Layer, LayeredGraph, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReblogEvent {
    pub actor: NodeId,
    pub source: NodeId,
    pub post_id: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node: NodeId,
    pub parent: Option<NodeId>,
    pub depth: u32,
    /// Reblog time; `None` for the root.
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionTree {
    pub root: NodeId,
    pub post_id: String,
    /// Root first, then by (depth, node).
    pub nodes: Vec<TreeNode>,
}

impl DiffusionTree {
    /// `(parent, child)` reblog relations.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes
            .iter()
            .filter_map(|n| n.parent.map(|p| (p, n.node)))
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDiagnostics {
    pub events: usize,
    pub self_reblogs: usize,
    /// Later reblogs of a post by an actor who already reblogged it.
    pub duplicate_events: usize,
    /// Reblogs dated before the reblog they copy (dropped with their subtree).
    pub out_of_order: usize,
    /// Events in chains whose root is not a producer.
    pub non_producer_rooted: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSet {
    pub trees: Vec<DiffusionTree>,
    pub diagnostics: TreeDiagnostics,
}

/// Resolve every post's reblog chains and keep the trees rooted at a producer.
pub fn build_trees(events: &[ReblogEvent], producers: &HashSet<NodeId>) -> Result<TreeSet> {
    let mut by_post: BTreeMap<&str, Vec<&ReblogEvent>> = BTreeMap::new();
    for e in events {
        by_post.entry(e.post_id.as_str()).or_default().push(e);
    }
    let per_post: Vec<Result<(Vec<DiffusionTree>, TreeDiagnostics)>> = by_post
        .into_par_iter()
        .map(|(post, evs)| post_trees(post, evs, producers))
        .collect();
    let mut out = TreeSet::default();
    out.diagnostics.events = events.len();
    for r in per_post {
        let (trees, d) = r?;
        out.trees.extend(trees);
        out.diagnostics.self_reblogs += d.self_reblogs;
        out.diagnostics.duplicate_events += d.duplicate_events;
        out.diagnostics.out_of_order += d.out_of_order;
        out.diagnostics.non_producer_rooted += d.non_producer_rooted;
    }
    Ok(out)
}

fn post_trees(
    post: &str,
    mut events: Vec<&ReblogEvent>,
    producers: &HashSet<NodeId>,
) -> Result<(Vec<DiffusionTree>, TreeDiagnostics)> {
    let mut diag = TreeDiagnostics::default();
    events.sort_by_key(|e| (e.timestamp, e.actor, e.source));
    // earliest reblog per actor
    let mut parent: HashMap<NodeId, (NodeId, u64)> = HashMap::new();
    for e in &events {
        if e.actor == e.source {
            diag.self_reblogs += 1;
            continue;
        }
        if parent.contains_key(&e.actor) {
            diag.duplicate_events += 1;
            continue;
        }
        parent.insert(e.actor, (e.source, e.timestamp));
    }

    // depth and root per actor; a revisit on the current path is a cycle
    let mut resolved: HashMap<NodeId, (NodeId, u32)> = HashMap::new();
    let mut actors: Vec<NodeId> = parent.keys().copied().collect();
    actors.sort_unstable();
    for &a in &actors {
        let mut path = Vec::new();
        let mut on_path = HashSet::new();
        let mut cur = a;
        let (root, mut depth) = loop {
            if let Some(&(r, d)) = resolved.get(&cur) {
                break (r, d);
            }
            match parent.get(&cur) {
                None => break (cur, 0),
                Some(&(p, _)) => {
                    if !on_path.insert(cur) {
                        return Err(Error::CyclicChain(post.to_string()));
                    }
                    path.push(cur);
                    cur = p;
                }
            }
        };
        while let Some(n) = path.pop() {
            depth += 1;
            resolved.insert(n, (root, depth));
        }
    }

    // a reblog is valid when its parent is the root or a valid, earlier reblog
    let mut order: Vec<NodeId> = actors.clone();
    order.sort_by_key(|a| (resolved[a].1, *a));
    let mut valid: HashSet<NodeId> = HashSet::new();
    let mut by_root: BTreeMap<NodeId, Vec<TreeNode>> = BTreeMap::new();
    for a in order {
        let (p, ts) = parent[&a];
        let (root, depth) = resolved[&a];
        let ok = if p == root {
            true
        } else {
            valid.contains(&p) && parent[&p].1 <= ts
        };
        if !ok {
            diag.out_of_order += 1;
            continue;
        }
        valid.insert(a);
        by_root.entry(root).or_default().push(TreeNode {
            node: a,
            parent: Some(p),
            depth,
            timestamp: Some(ts),
        });
    }

    let mut trees = Vec::new();
    for (root, members) in by_root {
        if !producers.contains(&root) {
            diag.non_producer_rooted += members.len();
            continue;
        }
        let mut nodes = Vec::with_capacity(members.len() + 1);
        nodes.push(TreeNode {
            node: root,
            parent: None,
            depth: 0,
            timestamp: None,
        });
        nodes.extend(members);
        trees.push(DiffusionTree {
            root,
            post_id: post.to_string(),
            nodes,
        });
    }
    Ok((trees, diag))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConsumerClass {
    Producer,
    Bridge,
    ActiveDirect,
    ActiveIndirect,
    Passive,
    Involuntary,
    Unexposed,
}

impl ConsumerClass {
    pub const ALL: [ConsumerClass; 7] = [
        ConsumerClass::Producer,
        ConsumerClass::Bridge,
        ConsumerClass::ActiveDirect,
        ConsumerClass::ActiveIndirect,
        ConsumerClass::Passive,
        ConsumerClass::Involuntary,
        ConsumerClass::Unexposed,
    ];

    pub fn is_active(self) -> bool {
        matches!(
            self,
            ConsumerClass::ActiveDirect | ConsumerClass::ActiveIndirect
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ConsumerClass::Producer => "producer",
            ConsumerClass::Bridge => "bridge",
            ConsumerClass::ActiveDirect => "active_direct",
            ConsumerClass::ActiveIndirect => "active_indirect",
            ConsumerClass::Passive => "passive",
            ConsumerClass::Involuntary => "involuntary",
            ConsumerClass::Unexposed => "unexposed",
        }
    }
}

impl fmt::Display for ConsumerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Assign each node one class, by precedence Producer > Bridge >
/// ActiveDirect > ActiveIndirect > Passive > Involuntary > Unexposed.
///
/// Producer and Bridge come from `roles`. A node reblogging straight from a
/// producer is a direct active consumer; any other reblogger in a tree is
/// indirect. Passive consumers follow a producer without reblogging;
/// involuntary ones follow an active consumer only.
pub fn classify_nodes(
    g: &LayeredGraph,
    trees: &[DiffusionTree],
    roles: &[GroupLabel],
) -> Vec<ConsumerClass> {
    let n = g.num_nodes();
    let producer = |v: NodeId| roles[v as usize].is_producer();
    let mut in_tree = vec![false; n];
    let mut direct = vec![false; n];
    for t in trees {
        for (p, c) in t.edges() {
            in_tree[c as usize] = true;
            if producer(p) {
                direct[c as usize] = true;
            }
        }
    }
    let mut classes: Vec<ConsumerClass> = (0..n)
        .map(|v| {
            let role = roles[v];
            if role.is_producer() {
                ConsumerClass::Producer
            } else if role.is_bridge() {
                ConsumerClass::Bridge
            } else if direct[v] {
                ConsumerClass::ActiveDirect
            } else if in_tree[v] {
                ConsumerClass::ActiveIndirect
            } else {
                ConsumerClass::Unexposed
            }
        })
        .collect();
    let follow = g.out(Layer::Follow);
    let exposure: Vec<Option<ConsumerClass>> = (0..n as NodeId)
        .into_par_iter()
        .map(|v| {
            if classes[v as usize] != ConsumerClass::Unexposed {
                return None;
            }
            let followed = follow.neighbors(v);
            if followed.iter().any(|&u| producer(u)) {
                Some(ConsumerClass::Passive)
            } else if followed.iter().any(|&u| classes[u as usize].is_active()) {
                Some(ConsumerClass::Involuntary)
            } else {
                None
            }
        })
        .collect();
    for (c, e) in classes.iter_mut().zip(exposure) {
        if let Some(e) = e {
            *c = e;
        }
    }
    classes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassFlow {
    pub from: ConsumerClass,
    pub to: ConsumerClass,
    pub reblogs: u64,
}

/// Efficiency form: the printed `r_r / (r_d |U|)` or its inverse
/// `r_d / (r_r |U|)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EfficiencyForm {
    #[default]
    Printed,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachReport {
    pub class_sizes: BTreeMap<ConsumerClass, usize>,
    /// Reblogs along tree edges, keyed by (class of parent, class of child).
    pub flows: Vec<ClassFlow>,
    pub producer_to_active_direct: u64,
    pub producer_to_bridge: u64,
    pub bridge_to_rest: u64,
    pub indirect_reblogs: u64,
    pub indirect_via_bridges: u64,
    pub total_reblogs: u64,
    /// (|active| + |passive| + |involuntary|) / |producers|.
    pub amplification: Option<f64>,
    pub bridge_efficiency: Option<f64>,
    pub active_efficiency: Option<f64>,
}

pub fn reach_report(classes: &[ConsumerClass], trees: &[DiffusionTree]) -> ReachReport {
    let mut class_sizes: BTreeMap<ConsumerClass, usize> =
        ConsumerClass::ALL.iter().map(|&c| (c, 0)).collect();
    for &c in classes {
        *class_sizes.get_mut(&c).unwrap() += 1;
    }
    let mut flow_counts: BTreeMap<(ConsumerClass, ConsumerClass), u64> = BTreeMap::new();
    for t in trees {
        for (p, c) in t.edges() {
            *flow_counts
                .entry((classes[p as usize], classes[c as usize]))
                .or_default() += 1;
        }
    }
    let flow =
        |from: ConsumerClass, to: ConsumerClass| flow_counts.get(&(from, to)).copied().unwrap_or(0);
    use ConsumerClass::*;
    let bridge_to_rest = [
        ActiveDirect,
        ActiveIndirect,
        Passive,
        Involuntary,
        Unexposed,
    ]
    .iter()
    .map(|&c| flow(Bridge, c))
    .sum();
    let indirect_reblogs = flow_counts
        .iter()
        .filter(|((_, to), _)| *to == ActiveIndirect)
        .map(|(_, &n)| n)
        .sum();
    let size = |c: ConsumerClass| class_sizes[&c];
    let producers = size(Producer);
    let reached = size(ActiveDirect) + size(ActiveIndirect) + size(Passive) + size(Involuntary);
    let amplification = (producers > 0).then(|| reached as f64 / producers as f64);

    let members = |pred: fn(ConsumerClass) -> bool| -> HashSet<NodeId> {
        classes
            .iter()
            .enumerate()
            .filter(|(_, &c)| pred(c))
            .map(|(i, _)| i as NodeId)
            .collect()
    };
    let bridges = members(|c| c == Bridge);
    let active = members(ConsumerClass::is_active);
    let eff = |set: &HashSet<NodeId>| spread_efficiency(set, trees, EfficiencyForm::Printed).ok();

    ReachReport {
        flows: flow_counts
            .iter()
            .map(|(&(from, to), &reblogs)| ClassFlow { from, to, reblogs })
            .collect(),
        producer_to_active_direct: flow(Producer, ActiveDirect),
        producer_to_bridge: flow(Producer, Bridge),
        bridge_to_rest,
        indirect_reblogs,
        indirect_via_bridges: flow(Bridge, ActiveIndirect),
        total_reblogs: flow_counts.values().sum(),
        amplification,
        bridge_efficiency: eff(&bridges),
        active_efficiency: eff(&active),
        class_sizes,
    }
}

/// `(r_d, r_r)`: reblogs performed by members of `set`, and reblogs by
/// non-members of copies held by members.
pub fn reblogs_done_and_received(set: &HashSet<NodeId>, trees: &[DiffusionTree]) -> (u64, u64) {
    let (mut done, mut received) = (0, 0);
    for t in trees {
        for (p, c) in t.edges() {
            if set.contains(&c) {
                done += 1;
            } else if set.contains(&p) {
                received += 1;
            }
        }
    }
    (done, received)
}

pub fn efficiency_from_counts(
    done: u64,
    received: u64,
    size: usize,
    form: EfficiencyForm,
) -> Result<f64> {
    if size == 0 {
        return Err(Error::InvalidInput("efficiency of an empty set".into()));
    }
    match form {
        EfficiencyForm::Printed => {
            if done == 0 {
                return Err(Error::NoReblogging);
            }
            Ok(received as f64 / (done as f64 * size as f64))
        }
        EfficiencyForm::Inverse => {
            if received == 0 {
                return Err(Error::NoReblogsReceived);
            }
            Ok(done as f64 / (received as f64 * size as f64))
        }
    }
}

/// Spreading efficiency of a node set, `r_r / (r_d |U|)` in the default form.
pub fn spread_efficiency(
    set: &HashSet<NodeId>,
    trees: &[DiffusionTree],
    form: EfficiencyForm,
) -> Result<f64> {
    let (done, received) = reblogs_done_and_received(set, trees);
    efficiency_from_counts(done, received, set.len(), form)
}

/// Deviant reblogs performed by each node (tree edges where it is the child).
pub fn deviant_reblog_counts(n: usize, trees: &[DiffusionTree]) -> Vec<u64> {
    let mut counts = vec![0u64; n];
    for t in trees {
        for (_, c) in t.edges() {
            counts[c as usize] += 1;
        }
    }
    counts
}

/// Posts and reblogs per node over the whole event stream: one per event as
/// actor, plus one per post a node authored (held without reblogging).
pub fn activity_counts(n: usize, events: &[ReblogEvent]) -> Vec<u64> {
    let mut counts = vec![0u64; n];
    let mut actors: HashSet<(&str, NodeId)> = HashSet::new();
    for e in events {
        counts[e.actor as usize] += 1;
        actors.insert((e.post_id.as_str(), e.actor));
    }
    let mut authored: HashSet<(&str, NodeId)> = HashSet::new();
    for e in events {
        if !actors.contains(&(e.post_id.as_str(), e.source))
            && authored.insert((e.post_id.as_str(), e.source))
        {
            counts[e.source as usize] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventReadDiagnostics {
    pub lines: usize,
    pub malformed: usize,
    pub unknown_nodes: usize,
}

/// Read `actor<TAB>source<TAB>post_id<TAB>timestamp`, resolving node ids in
/// `g`. Events naming nodes outside the graph are skipped and counted.
pub fn read_events(
    path: &Path,
    g: &LayeredGraph,
) -> Result<(Vec<ReblogEvent>, EventReadDiagnostics)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut diag = EventReadDiagnostics::default();
    let mut events = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        diag.lines += 1;
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [actor, source, post, ts] = cols[..] else {
            diag.malformed += 1;
            continue;
        };
        let Ok(timestamp) = ts.parse::<u64>() else {
            diag.malformed += 1;
            continue;
        };
        if post.is_empty() {
            diag.malformed += 1;
            continue;
        }
        match (g.node(actor), g.node(source)) {
            (Some(a), Some(s)) => events.push(ReblogEvent {
                actor: a,
                source: s,
                post_id: post.to_string(),
                timestamp,
            }),
            _ => diag.unknown_nodes += 1,
        }
    }
    Ok((events, diag))
}
