//! Connectivity between role groups: average volume, density and the ratio
//! against a degree-preserving rewired null model. Rows are link origins,
//! columns link targets.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GroupLabel, Layer, LayeredGraph, NodeId};
use crate::rng::{derive_seed, stage_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixMode {
    AvgVolume,
    Density,
    NullRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CellFlag {
    #[default]
    None,
    /// Diagonal density of a one-member group, reported as 0.
    SingletonDiagonal,
    /// The null model never produced an edge for this cell.
    ZeroNullMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMatrix {
    pub groups: Vec<GroupLabel>,
    pub mode: MatrixMode,
    pub values: Vec<Vec<f64>>,
    pub flags: Vec<Vec<CellFlag>>,
}

impl GroupMatrix {
    fn new(groups: &[GroupLabel], mode: MatrixMode) -> Self {
        let k = groups.len();
        GroupMatrix {
            groups: groups.to_vec(),
            mode,
            values: vec![vec![0.0; k]; k],
            flags: vec![vec![CellFlag::None; k]; k],
        }
    }

    pub fn get(&self, from: GroupLabel, to: GroupLabel) -> Option<f64> {
        let i = self.groups.iter().position(|&g| g == from)?;
        let j = self.groups.iter().position(|&g| g == to)?;
        Some(self.values[i][j])
    }

    /// CSV with a header row and a first column of group codes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("from");
        for g in &self.groups {
            out.push(',');
            out.push_str(g.code());
        }
        out.push('\n');
        for (g, row) in self.groups.iter().zip(&self.values) {
            out.push_str(g.code());
            for v in row {
                out.push(',');
                if v.is_infinite() {
                    out.push_str("inf");
                } else {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullModelOptions {
    pub samples: usize,
    pub swaps_per_edge: usize,
    pub seed: u64,
}

impl Default for NullModelOptions {
    fn default() -> Self {
        NullModelOptions {
            samples: 10,
            swaps_per_edge: 10,
            seed: 0,
        }
    }
}

/// Groups that have at least one member, in canonical order.
pub fn present_groups(roles: &[GroupLabel]) -> Vec<GroupLabel> {
    GroupLabel::ALL
        .into_iter()
        .filter(|g| roles.contains(g))
        .collect()
}

fn group_index(roles: &[GroupLabel], groups: &[GroupLabel]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut sizes = vec![0usize; groups.len()];
    let mut of_node = Vec::with_capacity(roles.len());
    for r in roles {
        let i = groups.iter().position(|g| g == r).ok_or_else(|| {
            Error::InvalidInput(format!("node role {r} is not among the matrix groups"))
        })?;
        sizes[i] += 1;
        of_node.push(i);
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyGroup(groups[i].code().to_string()));
    }
    Ok((of_node, sizes))
}

fn count_edges<I>(edges: I, of_node: &[usize], k: usize) -> Vec<Vec<u64>>
where
    I: IntoIterator<Item = (NodeId, NodeId)>,
{
    let mut counts = vec![vec![0u64; k]; k];
    for (u, v) in edges {
        counts[of_node[u as usize]][of_node[v as usize]] += 1;
    }
    counts
}

/// Unweighted edge counts `E(A->B)` between groups.
pub fn group_edge_counts(
    g: &LayeredGraph,
    layer: Layer,
    roles: &[GroupLabel],
    groups: &[GroupLabel],
) -> Result<Vec<Vec<u64>>> {
    check_roles(g, roles)?;
    let (of_node, _) = group_index(roles, groups)?;
    Ok(count_edges(
        g.edges(layer).map(|(u, v, _)| (u, v)),
        &of_node,
        groups.len(),
    ))
}

fn check_roles(g: &LayeredGraph, roles: &[GroupLabel]) -> Result<()> {
    if roles.len() != g.num_nodes() {
        return Err(Error::InvalidInput(format!(
            "{} roles for {} nodes",
            roles.len(),
            g.num_nodes()
        )));
    }
    Ok(())
}

/// Connectivity matrix in the requested mode. `null` is only consulted for
/// [`MatrixMode::NullRatio`].
pub fn group_matrix(
    g: &LayeredGraph,
    layer: Layer,
    roles: &[GroupLabel],
    groups: &[GroupLabel],
    mode: MatrixMode,
    null: &NullModelOptions,
) -> Result<GroupMatrix> {
    if mode == MatrixMode::NullRatio {
        return null_ratio_matrix(g, layer, roles, groups, null);
    }
    check_roles(g, roles)?;
    let (of_node, sizes) = group_index(roles, groups)?;
    let counts = count_edges(
        g.edges(layer).map(|(u, v, _)| (u, v)),
        &of_node,
        groups.len(),
    );
    let mut m = GroupMatrix::new(groups, mode);
    for a in 0..groups.len() {
        for b in 0..groups.len() {
            let e = counts[a][b] as f64;
            m.values[a][b] = match mode {
                MatrixMode::AvgVolume => e / sizes[a] as f64,
                MatrixMode::Density if a == b => {
                    if sizes[a] < 2 {
                        m.flags[a][b] = CellFlag::SingletonDiagonal;
                        0.0
                    } else {
                        e / (sizes[a] * (sizes[a] - 1)) as f64
                    }
                }
                MatrixMode::Density => e / (sizes[a] * sizes[b]) as f64,
                MatrixMode::NullRatio => unreachable!(),
            };
        }
    }
    Ok(m)
}

/// Double-edge swaps on a directed edge list: `(a->b, c->d)` becomes
/// `(a->d, c->b)` unless that creates a self loop or a duplicate edge.
/// Weights travel with the edge's source. Returns the accepted swap count.
pub fn rewire_edges(
    edges: &mut [(NodeId, NodeId, u64)],
    attempts: usize,
    rng: &mut impl Rng,
) -> usize {
    let m = edges.len();
    if m < 2 {
        return 0;
    }
    let mut present: HashSet<(NodeId, NodeId)> = edges.iter().map(|e| (e.0, e.1)).collect();
    let mut accepted = 0;
    for _ in 0..attempts {
        let i = rng.random_range(0..m);
        let mut j = rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        let (a, b, wa) = edges[i];
        let (c, d, wc) = edges[j];
        if a == d || c == b || present.contains(&(a, d)) || present.contains(&(c, b)) {
            continue;
        }
        present.remove(&(a, b));
        present.remove(&(c, d));
        present.insert((a, d));
        present.insert((c, b));
        edges[i] = (a, d, wa);
        edges[j] = (c, b, wc);
        accepted += 1;
    }
    accepted
}

/// Degree-preserving randomization of one layer with
/// `swaps_per_edge * |E|` attempted swaps.
pub fn rewire_null_model(
    g: &LayeredGraph,
    layer: Layer,
    seed: u64,
    swaps_per_edge: usize,
) -> LayeredGraph {
    let mut edges: Vec<(NodeId, NodeId, u64)> = g.edges(layer).collect();
    let attempts = swaps_per_edge * edges.len();
    let mut rng = stage_rng(seed, 0x5357_4150);
    rewire_edges(&mut edges, attempts, &mut rng);
    g.with_layer_edges(layer, edges)
}

/// Ratio of the observed matrix to a mean of null-model matrices. Cells
/// whose null mean is zero are flagged; they hold `+inf` when edges were
/// observed and 0 otherwise.
pub fn ratio_to_null(
    groups: &[GroupLabel],
    observed: &[Vec<u64>],
    null_samples: &[Vec<Vec<u64>>],
) -> GroupMatrix {
    let k = groups.len();
    let mut m = GroupMatrix::new(groups, MatrixMode::NullRatio);
    let n = null_samples.len().max(1) as f64;
    for a in 0..k {
        for b in 0..k {
            let total: u64 = null_samples.iter().map(|s| s[a][b]).sum();
            let mean = total as f64 / n;
            let obs = observed[a][b] as f64;
            if mean == 0.0 {
                m.flags[a][b] = CellFlag::ZeroNullMean;
                m.values[a][b] = if obs > 0.0 { f64::INFINITY } else { 0.0 };
            } else {
                m.values[a][b] = obs / mean;
            }
        }
    }
    m
}

pub fn null_ratio_matrix(
    g: &LayeredGraph,
    layer: Layer,
    roles: &[GroupLabel],
    groups: &[GroupLabel],
    opts: &NullModelOptions,
) -> Result<GroupMatrix> {
    check_roles(g, roles)?;
    let (of_node, _) = group_index(roles, groups)?;
    let k = groups.len();
    let base: Vec<(NodeId, NodeId, u64)> = g.edges(layer).collect();
    let observed = count_edges(base.iter().map(|e| (e.0, e.1)), &of_node, k);
    let samples: Vec<Vec<Vec<u64>>> = (0..opts.samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut edges = base.clone();
            let mut rng = stage_rng(derive_seed(opts.seed, s), 0x5357_4150);
            let attempts = opts.swaps_per_edge * edges.len();
            rewire_edges(&mut edges, attempts, &mut rng);
            count_edges(edges.iter().map(|e| (e.0, e.1)), &of_node, k)
        })
        .collect();
    Ok(ratio_to_null(groups, &observed, &samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert_eq, proptest};
    use rand::SeedableRng;

    use GroupLabel::*;

    fn digraph(n: usize, edges: &[(u32, u32)]) -> LayeredGraph {
        let ids = (0..n).map(|i| format!("v{i}")).collect();
        LayeredGraph::from_parts(ids, edges.to_vec(), vec![])
    }

    fn degrees(g: &LayeredGraph, layer: Layer) -> (Vec<usize>, Vec<usize>) {
        let n = g.num_nodes() as NodeId;
        (
            (0..n).map(|u| g.out(layer).degree(u)).collect(),
            (0..n).map(|u| g.inn(layer).degree(u)).collect(),
        )
    }

    const NO_NULL: NullModelOptions = NullModelOptions {
        samples: 0,
        swaps_per_edge: 0,
        seed: 0,
    };

    #[test]
    fn bipartite_direction_examples() {
        let g = digraph(3, &[(0, 2), (1, 2)]);
        let roles = [Producer1, Producer1, Producer2];
        let groups = [Producer1, Producer2];
        let d = group_matrix(
            &g,
            Layer::Follow,
            &roles,
            &groups,
            MatrixMode::Density,
            &NO_NULL,
        )
        .unwrap();
        let v = group_matrix(
            &g,
            Layer::Follow,
            &roles,
            &groups,
            MatrixMode::AvgVolume,
            &NO_NULL,
        )
        .unwrap();
        assert_eq!(d.get(Producer1, Producer2), Some(1.0));
        assert_eq!(v.get(Producer1, Producer2), Some(1.0));
        assert_eq!(d.get(Producer2, Producer1), Some(0.0));
    }

    #[test]
    fn diagonal_density() {
        let g = digraph(2, &[(0, 1)]);
        let roles = [Bridge1, Bridge1];
        let d = group_matrix(
            &g,
            Layer::Follow,
            &roles,
            &[Bridge1],
            MatrixMode::Density,
            &NO_NULL,
        )
        .unwrap();
        assert_eq!(d.values[0][0], 0.5);
    }

    #[test]
    fn singleton_diagonal_is_flagged() {
        let g = digraph(2, &[(0, 1)]);
        let roles = [Bridge1, Outer];
        let d = group_matrix(
            &g,
            Layer::Follow,
            &roles,
            &[Bridge1, Outer],
            MatrixMode::Density,
            &NO_NULL,
        )
        .unwrap();
        assert_eq!(d.values[0][0], 0.0);
        assert_eq!(d.flags[0][0], CellFlag::SingletonDiagonal);
        assert_eq!(d.values[0][1], 1.0);
    }

    #[test]
    fn no_edges_between_groups_is_zero_everywhere() {
        let g = digraph(4, &[(0, 1), (2, 3)]);
        let roles = [Producer1, Producer1, Producer2, Producer2];
        let groups = [Producer1, Producer2];
        let null = NullModelOptions {
            samples: 5,
            swaps_per_edge: 10,
            seed: 1,
        };
        for mode in [
            MatrixMode::AvgVolume,
            MatrixMode::Density,
            MatrixMode::NullRatio,
        ] {
            let m = group_matrix(&g, Layer::Follow, &roles, &groups, mode, &null).unwrap();
            assert_eq!(m.values[0][1], 0.0, "{mode:?}");
            assert_eq!(m.values[1][0], 0.0, "{mode:?}");
        }
    }

    #[test]
    fn empty_group_is_an_error() {
        let g = digraph(2, &[(0, 1)]);
        let roles = [Producer1, Producer1];
        assert!(matches!(
            group_matrix(
                &g,
                Layer::Follow,
                &roles,
                &[Producer1, Outer],
                MatrixMode::Density,
                &NO_NULL
            ),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn complete_digraph_density_is_all_ones() {
        let n = 6u32;
        let edges: Vec<(u32, u32)> = (0..n)
            .flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v)))
            .collect();
        let g = digraph(n as usize, &edges);
        let roles = [Producer1, Producer1, Bridge1, Bridge1, Bridge1, Outer];
        let groups = present_groups(&roles);
        let d = group_matrix(
            &g,
            Layer::Follow,
            &roles,
            &groups,
            MatrixMode::Density,
            &NO_NULL,
        )
        .unwrap();
        for (a, row) in d.values.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                let expected = if a == b && groups[a] == Outer {
                    0.0
                } else {
                    1.0
                };
                assert_eq!(v, expected);
            }
        }
    }

    #[test]
    fn hand_swap_on_two_edges() {
        let mut edges = vec![(0, 1, 1), (2, 3, 1)];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert_eq!(rewire_edges(&mut edges, 1, &mut rng), 1);
        edges.sort();
        assert_eq!(edges, vec![(0, 3, 1), (2, 1, 1)]);
    }

    #[test]
    fn swaps_never_create_loops_or_duplicates() {
        // a->b, b->a: swapping yields a->a and b->b
        let mut edges = vec![(0, 1, 1), (1, 0, 1)];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(rewire_edges(&mut edges, 50, &mut rng), 0);
    }

    #[test]
    fn rewiring_is_deterministic() {
        let edges: Vec<(u32, u32)> = (0..40)
            .map(|i| (i % 13, (i * 7 + 3) % 13))
            .filter(|(a, b)| a != b)
            .collect();
        let g = digraph(13, &edges);
        let a = rewire_null_model(&g, Layer::Follow, 9, 10);
        let b = rewire_null_model(&g, Layer::Follow, 9, 10);
        assert_eq!(
            a.edges(Layer::Follow).collect::<Vec<_>>(),
            b.edges(Layer::Follow).collect::<Vec<_>>()
        );
    }

    #[test]
    fn identity_null_gives_unit_ratios() {
        let n = 5u32;
        let edges: Vec<(u32, u32)> = (0..n)
            .flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v)))
            .collect();
        let g = digraph(n as usize, &edges);
        let roles = [Producer1, Producer1, Bridge1, Bridge1, Outer];
        let groups = [Producer1, Bridge1, Outer];
        let observed = group_edge_counts(&g, Layer::Follow, &roles, &groups).unwrap();
        let m = ratio_to_null(&groups, &observed, &[observed.clone(), observed.clone()]);
        for (a, row) in m.values.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                if observed[a][b] > 0 {
                    assert_eq!(v, 1.0);
                }
            }
        }
    }

    #[test]
    fn zero_null_mean_flagged_infinite() {
        let groups = [Producer1];
        let m = ratio_to_null(&groups, &[vec![3]], &[vec![vec![0]]]);
        assert!(m.values[0][0].is_infinite());
        assert_eq!(m.flags[0][0], CellFlag::ZeroNullMean);
        assert_eq!(m.to_csv(), "from,P1\nP1,inf\n");
    }

    #[test]
    fn planted_cliques_deviate_from_null() {
        // two dense directed cliques joined by a few edges
        let mut edges = Vec::new();
        for block in [0u32, 10] {
            for u in block..block + 10 {
                for v in block..block + 10 {
                    if u != v {
                        edges.push((u, v));
                    }
                }
            }
        }
        edges.extend([(0, 10), (11, 1), (2, 12), (13, 3)]);
        let g = digraph(20, &edges);
        let roles: Vec<GroupLabel> = (0..20)
            .map(|i| if i < 10 { Producer1 } else { Producer2 })
            .collect();
        let groups = [Producer1, Producer2];
        let opts = NullModelOptions {
            samples: 100,
            swaps_per_edge: 10,
            seed: 5,
        };
        let m = null_ratio_matrix(&g, Layer::Follow, &roles, &groups, &opts).unwrap();
        // the mean over the same 100 seeded rewirings, recomputed here
        let observed = group_edge_counts(&g, Layer::Follow, &roles, &groups).unwrap();
        let mut cross_total = 0u64;
        for s in 0..100u64 {
            let r = rewire_null_model(&g, Layer::Follow, derive_seed(5, s), 10);
            cross_total += group_edge_counts(&r, Layer::Follow, &roles, &groups).unwrap()[0][1];
        }
        let expected_cross = observed[0][1] as f64 / (cross_total as f64 / 100.0);
        assert!((m.values[0][1] - expected_cross).abs() < 1e-12);
        assert!(m.values[0][0] > 1.0 && m.values[1][1] > 1.0);
        assert!(m.values[0][1] < 1.0 && m.values[1][0] < 1.0);
    }

    #[test]
    fn random_graph_stays_near_null() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 400;
        let mut edges = Vec::new();
        for _ in 0..6000 {
            edges.push((rng.random_range(0..n) as u32, rng.random_range(0..n) as u32));
        }
        let g = digraph(n, &edges);
        let roles: Vec<GroupLabel> = (0..n)
            .map(|_| GroupLabel::ALL[rng.random_range(0..5)])
            .collect();
        let opts = NullModelOptions {
            samples: 50,
            swaps_per_edge: 10,
            seed: 2,
        };
        let m = null_ratio_matrix(&g, Layer::Follow, &roles, &GroupLabel::ALL, &opts).unwrap();
        for row in &m.values {
            for &v in row {
                assert!((0.5..=2.0).contains(&v), "ratio {v}");
            }
        }
    }

    proptest! {
        #[test]
        fn rewiring_preserves_degrees(
            edges in prop::collection::vec((0u32..25, 0u32..25), 2..120),
            seed in any::<u64>(),
        ) {
            let g = digraph(25, &edges);
            let r = rewire_null_model(&g, Layer::Follow, seed, 10);
            prop_assert_eq!(degrees(&g, Layer::Follow), degrees(&r, Layer::Follow));
            prop_assert_eq!(g.num_edges(Layer::Follow), r.num_edges(Layer::Follow));
        }

        #[test]
        fn counts_sum_to_edge_total(
            edges in prop::collection::vec((0u32..15, 0u32..15), 0..80),
            roles in prop::collection::vec(0usize..5, 15),
        ) {
            let g = digraph(15, &edges);
            let roles: Vec<GroupLabel> = roles.into_iter().map(|r| GroupLabel::ALL[r]).collect();
            let groups = present_groups(&roles);
            let c = group_edge_counts(&g, Layer::Follow, &roles, &groups).unwrap();
            let total: u64 = c.iter().flatten().sum();
            prop_assert_eq!(total as usize, g.num_edges(Layer::Follow));
        }
    }
}
