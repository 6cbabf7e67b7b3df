//! Node-removal simulation over observed diffusion trees. Erasing a node
//! removes its posts and its reblogs, so every chain through it is cut.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionTree;
use crate::error::{Error, Result};
use crate::graph::{Layer, LayeredGraph, NodeId};

pub const DEFAULT_SIZES: [usize; 6] = [0, 200, 1000, 5000, 10000, 25000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RemovalStrategy {
    ByVolume,
    ByDegree,
    Greedy,
}

impl fmt::Display for RemovalStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RemovalStrategy::ByVolume => "by_volume",
            RemovalStrategy::ByDegree => "by_degree",
            RemovalStrategy::Greedy => "greedy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageCurve {
    pub strategy: RemovalStrategy,
    /// Removal counts actually applied.
    pub sizes: Vec<usize>,
    pub reached_fraction: Vec<f64>,
    pub baseline: usize,
    /// Some requested size exceeded the ranking length.
    pub truncated: bool,
}

impl ShrinkageCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("removed,reached_fraction,strategy\n");
        self.append_rows(&mut out);
        out
    }

    pub fn append_rows(&self, out: &mut String) {
        for (k, f) in self.sizes.iter().zip(&self.reached_fraction) {
            out.push_str(&format!("{k},{f},{}\n", self.strategy));
        }
    }
}

fn children_of(t: &DiffusionTree) -> HashMap<NodeId, Vec<NodeId>> {
    let mut children: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for (p, c) in t.edges() {
        children.entry(p).or_default().push(c);
    }
    children
}

/// Nodes with at least one descendant in some tree, by the number of
/// distinct nodes found below them over all trees, descending; ties by id.
pub fn rank_by_volume(trees: &[DiffusionTree]) -> Vec<NodeId> {
    let per_tree: Vec<Vec<(NodeId, Vec<NodeId>)>> = trees
        .par_iter()
        .map(|t| {
            let children = children_of(t);
            let mut out: Vec<(NodeId, Vec<NodeId>)> = children
                .keys()
                .map(|&v| {
                    let mut below = Vec::new();
                    let mut stack = children[&v].clone();
                    while let Some(u) = stack.pop() {
                        below.push(u);
                        if let Some(cs) = children.get(&u) {
                            stack.extend_from_slice(cs);
                        }
                    }
                    (v, below)
                })
                .collect();
            out.sort_unstable_by_key(|e| e.0);
            out
        })
        .collect();
    let mut reach: BTreeMap<NodeId, HashSet<NodeId>> = BTreeMap::new();
    for (v, below) in per_tree.into_iter().flatten() {
        reach.entry(v).or_default().extend(below);
    }
    let mut ranked: Vec<(usize, NodeId)> = reach.into_iter().map(|(v, s)| (s.len(), v)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().map(|(_, v)| v).collect()
}

/// Every node by unweighted reblog in-degree, descending; ties by id.
pub fn rank_by_degree(g: &LayeredGraph) -> Result<Vec<NodeId>> {
    let inn = g.inn(Layer::Reblog);
    if inn.num_edges() == 0 {
        return Err(Error::NoEdges);
    }
    let mut nodes: Vec<NodeId> = (0..g.num_nodes() as NodeId).collect();
    nodes.sort_by(|&a, &b| inn.degree(b).cmp(&inn.degree(a)).then(a.cmp(&b)));
    Ok(nodes)
}

/// Distinct non-root tree members: the consumers reached before any removal.
pub fn baseline_consumers(trees: &[DiffusionTree]) -> Vec<NodeId> {
    let mut set: Vec<NodeId> = trees
        .iter()
        .flat_map(|t| {
            t.nodes
                .iter()
                .filter(|n| n.parent.is_some())
                .map(|n| n.node)
        })
        .collect();
    set.sort_unstable();
    set.dedup();
    set
}

/// Nodes reachable from a root along a path that avoids `erased`, flagged
/// in a vector of length `n`.
pub fn reached_nodes(n: usize, trees: &[DiffusionTree], erased: &[bool]) -> Vec<bool> {
    let per_tree: Vec<Vec<NodeId>> = trees
        .par_iter()
        .map(|t| {
            let mut alive: HashSet<NodeId> = HashSet::new();
            // Nodes are stored parent before child.
            for tn in &t.nodes {
                if erased[tn.node as usize] {
                    continue;
                }
                if tn.parent.is_none_or(|p| alive.contains(&p)) {
                    alive.insert(tn.node);
                }
            }
            let mut v: Vec<NodeId> = alive.into_iter().collect();
            v.sort_unstable();
            v
        })
        .collect();
    let mut reached = vec![false; n];
    for v in per_tree.into_iter().flatten() {
        reached[v as usize] = true;
    }
    reached
}

fn node_bound(trees: &[DiffusionTree], ranking: &[NodeId]) -> usize {
    let in_trees = trees.iter().flat_map(|t| t.nodes.iter().map(|n| n.node));
    in_trees
        .chain(ranking.iter().copied())
        .map(|v| v as usize + 1)
        .max()
        .unwrap_or(0)
}

fn erased_prefix(n: usize, ranking: &[NodeId], k: usize) -> Vec<bool> {
    let mut erased = vec![false; n];
    for &v in &ranking[..k] {
        erased[v as usize] = true;
    }
    erased
}

pub fn shrinkage_curve(
    trees: &[DiffusionTree],
    ranking: &[NodeId],
    sizes: &[usize],
    strategy: RemovalStrategy,
) -> Result<ShrinkageCurve> {
    let baseline = baseline_consumers(trees);
    shrinkage_curve_against(trees, ranking, sizes, strategy, &baseline)
}

/// Fraction of `baseline` still reached after erasing each prefix of
/// `ranking`. Sizes past the end of the ranking are clamped.
pub fn shrinkage_curve_against(
    trees: &[DiffusionTree],
    ranking: &[NodeId],
    sizes: &[usize],
    strategy: RemovalStrategy,
    baseline: &[NodeId],
) -> Result<ShrinkageCurve> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput(
            "removal sizes must be ascending".into(),
        ));
    }
    if baseline.is_empty() {
        return Err(Error::InsufficientData(
            "no reached consumers in the trees".into(),
        ));
    }
    let n =
        node_bound(trees, ranking).max(baseline.iter().map(|&v| v as usize + 1).max().unwrap_or(0));
    let mut truncated = false;
    let mut applied = Vec::with_capacity(sizes.len());
    let mut reached_fraction = Vec::with_capacity(sizes.len());
    for &k in sizes {
        let k = if k > ranking.len() {
            if !truncated {
                warn!(
                    "{strategy}: removal size {k} exceeds ranking length {}",
                    ranking.len()
                );
            }
            truncated = true;
            ranking.len()
        } else {
            k
        };
        let reached = reached_nodes(n, trees, &erased_prefix(n, ranking, k));
        let still = baseline.iter().filter(|&&v| reached[v as usize]).count();
        applied.push(k);
        reached_fraction.push(still as f64 / baseline.len() as f64);
    }
    Ok(ShrinkageCurve {
        strategy,
        sizes: applied,
        reached_fraction,
        baseline: baseline.len(),
        truncated,
    })
}

/// Adaptive ranking: repeatedly erase the candidate that cuts the most
/// still-reached baseline consumers. Candidates are the nodes with
/// descendants; stops after `limit` picks or when nothing is left to cut.
pub fn rank_greedy(trees: &[DiffusionTree], limit: usize) -> Vec<NodeId> {
    let candidates = {
        let mut c = rank_by_volume(trees);
        c.sort_unstable();
        c
    };
    let baseline = baseline_consumers(trees);
    let n = node_bound(trees, &candidates);
    let mut erased = vec![false; n];
    let mut picked = Vec::new();
    let count = |erased: &[bool]| {
        let r = reached_nodes(n, trees, erased);
        baseline.iter().filter(|&&v| r[v as usize]).count()
    };
    let mut current = count(&erased);
    while picked.len() < limit && current > 0 {
        let best = candidates
            .par_iter()
            .filter(|&&v| !erased[v as usize])
            .map(|&v| {
                let mut e = erased.clone();
                e[v as usize] = true;
                (count(&e), v)
            })
            .min();
        match best {
            Some((left, v)) if left < current => {
                erased[v as usize] = true;
                picked.push(v);
                current = left;
            }
            _ => break,
        }
    }
    picked
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnderageThreshold {
    /// Smallest prefix leaving no underage node reached; `None` if even the
    /// full ranking does not suffice.
    pub k: Option<usize>,
    pub underage_reached: usize,
    pub note: Option<String>,
}

/// Smallest `k` such that erasing the top `k` of `ranking` leaves no node
/// of `underage` reached. Reach shrinks along nested prefixes, so the
/// search is binary.
pub fn underage_exposure_threshold(
    trees: &[DiffusionTree],
    ranking: &[NodeId],
    underage: &HashSet<NodeId>,
) -> UnderageThreshold {
    let baseline: Vec<NodeId> = baseline_consumers(trees)
        .into_iter()
        .filter(|v| underage.contains(v))
        .collect();
    if baseline.is_empty() {
        return UnderageThreshold {
            k: Some(0),
            underage_reached: 0,
            note: Some("no underage consumers reached".into()),
        };
    }
    let n = node_bound(trees, ranking);
    let clear = |k: usize| {
        let r = reached_nodes(n, trees, &erased_prefix(n, ranking, k));
        !baseline.iter().any(|&v| r[v as usize])
    };
    if !clear(ranking.len()) {
        return UnderageThreshold {
            k: None,
            underage_reached: baseline.len(),
            note: Some("ranking exhausted with underage consumers still reached".into()),
        };
    }
    let (mut lo, mut hi) = (0, ranking.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if clear(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    UnderageThreshold {
        k: Some(lo),
        underage_reached: baseline.len(),
        note: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use crate::diffusion::TreeNode;

    /// Tree from `(parent, child)` pairs listed parent first.
    fn tree(root: NodeId, edges: &[(NodeId, NodeId)]) -> DiffusionTree {
        let mut nodes = vec![TreeNode {
            node: root,
            parent: None,
            depth: 0,
            timestamp: None,
        }];
        for &(p, c) in edges {
            let depth = nodes.iter().find(|n| n.node == p).unwrap().depth + 1;
            nodes.push(TreeNode {
                node: c,
                parent: Some(p),
                depth,
                timestamp: Some(depth as u64),
            });
        }
        DiffusionTree {
            root,
            post_id: format!("post{root}"),
            nodes,
        }
    }

    #[test]
    fn volume_ranking_examples() {
        let trees = vec![tree(1, &[(1, 10), (1, 11), (1, 12)]), tree(2, &[(2, 10)])];
        assert_eq!(rank_by_volume(&trees), vec![1, 2]);
        assert!(rank_by_volume(&[]).is_empty());
        let tied = vec![tree(7, &[(7, 1)]), tree(3, &[(3, 2)])];
        assert_eq!(rank_by_volume(&tied), vec![3, 7]);
    }

    #[test]
    fn volume_counts_distinct_blogs_across_trees() {
        let trees = vec![
            tree(1, &[(1, 5), (5, 6)]),
            tree(1, &[(1, 5), (5, 7)]),
            tree(2, &[(2, 8), (2, 9), (2, 10)]),
        ];
        // 1 reaches {5,6,7}, 2 reaches {8,9,10}, 5 reaches {6,7}.
        assert_eq!(rank_by_volume(&trees), vec![1, 2, 5]);
    }

    fn graph(n: usize, reblog: &[(u32, u32)]) -> LayeredGraph {
        let ids = (0..n).map(|i| format!("n{i}")).collect();
        LayeredGraph::from_parts(
            ids,
            vec![],
            reblog.iter().map(|&(u, v)| (u, v, 1)).collect(),
        )
    }

    #[test]
    fn degree_ranking_examples() {
        let g = graph(6, &[(1, 0), (2, 0), (3, 0), (4, 0), (5, 0)]);
        assert_eq!(rank_by_degree(&g).unwrap()[0], 0);
        assert!(matches!(
            rank_by_degree(&graph(3, &[])),
            Err(Error::NoEdges)
        ));
        let g = graph(8, &[(0, 5), (1, 5), (2, 5), (0, 2), (1, 2), (3, 2)]);
        assert_eq!(&rank_by_degree(&g).unwrap()[..2], &[2, 5]);
    }

    #[test]
    fn shrinkage_examples() {
        let trees = vec![tree(0, &[(0, 1), (1, 2)])];
        let c = shrinkage_curve(&trees, &[1, 0], &[0, 1, 2], RemovalStrategy::ByVolume).unwrap();
        assert_eq!(c.reached_fraction, vec![1.0, 0.0, 0.0]);
        assert_eq!(c.baseline, 2);

        let trees = vec![tree(0, &[(0, 2), (2, 3)]), tree(1, &[(1, 3), (1, 4)])];
        let c = shrinkage_curve(&trees, &[0, 1], &[0, 1, 2, 5], RemovalStrategy::ByVolume).unwrap();
        // Erasing 0 drops 2 but 3 is still reached through 1.
        assert_eq!(c.reached_fraction, vec![1.0, 2.0 / 3.0, 0.0, 0.0]);
        assert!(c.truncated);
        assert_eq!(c.sizes, vec![0, 1, 2, 2]);
        assert!(c
            .to_csv()
            .starts_with("removed,reached_fraction,strategy\n0,1,by_volume\n"));
    }

    #[test]
    fn shrinkage_rejects_unsorted_sizes() {
        let trees = vec![tree(0, &[(0, 1)])];
        assert!(shrinkage_curve(&trees, &[0], &[1, 0], RemovalStrategy::ByDegree).is_err());
        assert!(shrinkage_curve(&[], &[0], &[0], RemovalStrategy::ByDegree).is_err());
    }

    #[test]
    fn underage_examples() {
        let trees = vec![tree(0, &[(0, 5)]), tree(1, &[(1, 6)])];
        let none = underage_exposure_threshold(&trees, &[0, 1], &HashSet::new());
        assert_eq!(none.k, Some(0));
        assert!(none.note.is_some());
        let one = underage_exposure_threshold(&trees, &[0, 1], &HashSet::from([5]));
        assert_eq!(one.k, Some(1));
        let two = underage_exposure_threshold(&trees, &[0, 1], &HashSet::from([5, 6]));
        assert_eq!(two.k, Some(2));
        let never = underage_exposure_threshold(&trees, &[0], &HashSet::from([6]));
        assert_eq!(never.k, None);
    }

    #[test]
    fn greedy_prefers_the_cut_that_removes_most() {
        // 3 is a relay holding most of 0's cascade; 1 has a wide shallow tree.
        let trees = vec![
            tree(0, &[(0, 3), (3, 4), (3, 5), (3, 6), (3, 7)]),
            tree(1, &[(1, 8), (1, 9)]),
        ];
        assert_eq!(rank_greedy(&trees, 1), vec![0]);
        assert_eq!(rank_greedy(&trees, 10), vec![0, 1]);
    }

    /// Every root-to-node path spelled out explicitly.
    fn brute_reached(trees: &[DiffusionTree], erased: &HashSet<NodeId>) -> HashSet<NodeId> {
        let mut out = HashSet::new();
        for t in trees {
            let parent: HashMap<NodeId, Option<NodeId>> =
                t.nodes.iter().map(|n| (n.node, n.parent)).collect();
            for tn in &t.nodes {
                let mut path = vec![tn.node];
                let mut cur = tn.parent;
                while let Some(p) = cur {
                    path.push(p);
                    cur = parent[&p];
                }
                if path.iter().all(|v| !erased.contains(v)) {
                    out.insert(tn.node);
                }
            }
        }
        out
    }

    fn random_trees() -> impl proptest::strategy::Strategy<Value = Vec<DiffusionTree>> {
        prop::collection::vec(
            (
                0u32..5,
                prop::collection::vec((0usize..100, 5u32..40), 0..12),
            ),
            1..6,
        )
        .prop_map(|specs| {
            specs
                .into_iter()
                .map(|(root, picks)| {
                    let mut members = vec![root];
                    let mut edges = Vec::new();
                    for (pi, c) in picks {
                        if members.contains(&c) {
                            continue;
                        }
                        let p = members[pi % members.len()];
                        members.push(c);
                        edges.push((p, c));
                    }
                    tree(root, &edges)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn reached_matches_path_oracle(
            trees in random_trees(),
            erased in prop::collection::hash_set(0u32..40, 0..10),
        ) {
            let mut mask = vec![false; 40];
            for &v in &erased {
                mask[v as usize] = true;
            }
            let r = reached_nodes(40, &trees, &mask);
            let got: HashSet<NodeId> = (0..40).filter(|&v| r[v as usize]).collect();
            prop_assert_eq!(got, brute_reached(&trees, &erased));
        }

        #[test]
        fn erasing_more_reaches_less(
            trees in random_trees(),
            small in prop::collection::hash_set(0u32..40, 0..6),
            extra in prop::collection::hash_set(0u32..40, 0..6),
        ) {
            let big: HashSet<NodeId> = small.union(&extra).copied().collect();
            let a = brute_reached(&trees, &small);
            let b = brute_reached(&trees, &big);
            prop_assert!(b.is_subset(&a));
            let mut mask = vec![false; 40];
            for &v in &big {
                mask[v as usize] = true;
            }
            let r = reached_nodes(40, &trees, &mask);
            prop_assert!(b.iter().all(|&v| r[v as usize]));
        }

        #[test]
        fn curves_are_monotone_with_fixed_ends(trees in random_trees()) {
            prop_assume!(!baseline_consumers(&trees).is_empty());
            let ranking = rank_by_volume(&trees);
            let sizes: Vec<usize> = (0..=ranking.len()).collect();
            let c = shrinkage_curve(&trees, &ranking, &sizes, RemovalStrategy::ByVolume).unwrap();
            prop_assert!(c.reached_fraction.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(c.reached_fraction[0], 1.0);
            let mut roots: Vec<NodeId> = trees.iter().map(|t| t.root).collect();
            roots.sort_unstable();
            roots.dedup();
            let all = shrinkage_curve(&trees, &roots, &[roots.len()], RemovalStrategy::ByVolume).unwrap();
            prop_assert_eq!(all.reached_fraction[0], 0.0);
        }
    }
}
