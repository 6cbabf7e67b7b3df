//! Local perception biases: how deviant a node's observed neighborhood looks
//! (majority illusion) and whether its neighbors out-reblog it (volume
//! friendship paradox). A node observes its out-neighbors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{Layer, LayeredGraph, NodeId};

pub const DEFAULT_STEPS: u32 = 100;

/// Inverse cumulative distribution of the deviant share of out-neighbors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionCurve {
    pub layer: Layer,
    pub thresholds: Vec<f64>,
    pub fraction_at_least: Vec<f64>,
    pub eligible: usize,
    pub excluded_zero_outdegree: usize,
}

impl PerceptionCurve {
    pub fn value_at(&self, step: usize) -> f64 {
        self.fraction_at_least[step]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fraction,layer\n");
        self.append_rows(&mut out);
        out
    }

    /// Data rows only, for concatenating several layers under one header.
    pub fn append_rows(&self, out: &mut String) {
        for (t, f) in self.thresholds.iter().zip(&self.fraction_at_least) {
            out.push_str(&format!("{t:.2},{f},{}\n", self.layer));
        }
    }
}

pub fn perception_curve(
    g: &LayeredGraph,
    layer: Layer,
    deviant_active: &[bool],
    producers: &[bool],
) -> PerceptionCurve {
    perception_curve_steps(g, layer, deviant_active, producers, DEFAULT_STEPS)
}

/// Curve on the grid `k / steps`, `k = 0..=steps`. Non-producers with at
/// least one out-neighbor are eligible; a node counts at threshold `t` when
/// its deviant share is `>= t`, compared exactly in integers.
pub fn perception_curve_steps(
    g: &LayeredGraph,
    layer: Layer,
    deviant_active: &[bool],
    producers: &[bool],
    steps: u32,
) -> PerceptionCurve {
    let steps = steps.max(1);
    let out = g.out(layer);
    let n = g.num_nodes();
    // Highest grid index each node reaches, or None when ineligible.
    let reach: Vec<Option<Option<usize>>> = (0..n as NodeId)
        .into_par_iter()
        .map(|v| {
            if producers[v as usize] {
                return None;
            }
            let deg = out.degree(v) as u64;
            if deg == 0 {
                return Some(None);
            }
            let dev = out
                .neighbors(v)
                .iter()
                .filter(|&&u| deviant_active[u as usize])
                .count() as u64;
            Some(Some((dev * steps as u64 / deg) as usize))
        })
        .collect();
    let mut hist = vec![0usize; steps as usize + 1];
    let (mut eligible, mut excluded) = (0, 0);
    for r in reach.into_iter().flatten() {
        match r {
            Some(k) => {
                hist[k] += 1;
                eligible += 1;
            }
            None => excluded += 1,
        }
    }
    let mut fraction_at_least = vec![0.0; hist.len()];
    let mut acc = 0usize;
    for k in (0..hist.len()).rev() {
        acc += hist[k];
        if eligible > 0 {
            fraction_at_least[k] = acc as f64 / eligible as f64;
        }
    }
    PerceptionCurve {
        layer,
        thresholds: (0..=steps).map(|k| k as f64 / steps as f64).collect(),
        fraction_at_least,
        eligible,
        excluded_zero_outdegree: excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParadoxSummary {
    pub layer: Layer,
    pub fraction: f64,
    pub below: usize,
    pub considered: usize,
}

/// Share of nodes whose deviant reblog count is strictly below the mean over
/// their out-neighbors with any activity. Nodes without such a neighbor are
/// left out; with none considered the fraction is 0.
pub fn volume_paradox_fraction(
    g: &LayeredGraph,
    layer: Layer,
    reblog_counts: &[u64],
    activity: &[u64],
) -> f64 {
    volume_paradox(g, layer, reblog_counts, activity).fraction
}

pub fn volume_paradox(
    g: &LayeredGraph,
    layer: Layer,
    reblog_counts: &[u64],
    activity: &[u64],
) -> ParadoxSummary {
    let out = g.out(layer);
    let verdicts: Vec<Option<bool>> = (0..g.num_nodes() as NodeId)
        .into_par_iter()
        .map(|v| {
            let (mut k, mut sum) = (0u128, 0u128);
            for &u in out.neighbors(v) {
                if activity[u as usize] > 0 {
                    k += 1;
                    sum += reblog_counts[u as usize] as u128;
                }
            }
            (k > 0).then(|| (reblog_counts[v as usize] as u128) * k < sum)
        })
        .collect();
    let considered = verdicts.iter().flatten().count();
    let below = verdicts.iter().flatten().filter(|&&b| b).count();
    ParadoxSummary {
        layer,
        fraction: if considered == 0 {
            0.0
        } else {
            below as f64 / considered as f64
        },
        below,
        considered,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    use crate::rng::stage_rng;

    fn graph(n: usize, edges: &[(u32, u32)]) -> LayeredGraph {
        let ids = (0..n).map(|i| format!("n{i}")).collect();
        LayeredGraph::from_parts(
            ids,
            edges.to_vec(),
            edges.iter().map(|&(u, v)| (u, v, 1)).collect(),
        )
    }

    #[test]
    fn no_deviant_neighbors() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let c = perception_curve(&g, Layer::Follow, &[false; 3], &[false; 3]);
        assert_eq!(c.value_at(0), 1.0);
        assert!(c.fraction_at_least[1..].iter().all(|&f| f == 0.0));
        assert_eq!(c.eligible, 2);
        assert_eq!(c.excluded_zero_outdegree, 1);
    }

    #[test]
    fn all_deviant_neighbors() {
        let g = graph(3, &[(0, 1), (1, 2), (2, 0)]);
        let c = perception_curve(&g, Layer::Reblog, &[true; 3], &[false; 3]);
        assert!(c.fraction_at_least.iter().all(|&f| f == 1.0));
    }

    #[test]
    fn star_hub_threshold() {
        let edges: Vec<(u32, u32)> = (1..10).map(|l| (0, l)).collect();
        let g = graph(10, &edges);
        let mut dev = vec![false; 10];
        dev[1] = true;
        dev[2] = true;
        dev[3] = true;
        let c = perception_curve(&g, Layer::Follow, &dev, &[false; 10]);
        assert_eq!(c.eligible, 1);
        assert_eq!(c.value_at(30), 1.0);
        assert_eq!(c.value_at(33), 1.0);
        assert_eq!(c.value_at(34), 0.0);
    }

    #[test]
    fn producers_are_not_eligible() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let c = perception_curve(
            &g,
            Layer::Follow,
            &[false, true, true],
            &[true, false, false],
        );
        assert_eq!(c.eligible, 1);
        assert_eq!(c.value_at(100), 1.0);
    }

    #[test]
    fn csv_has_one_row_per_threshold() {
        let g = graph(2, &[(0, 1)]);
        let c = perception_curve(&g, Layer::Follow, &[false, true], &[false; 2]);
        let csv = c.to_csv();
        assert!(csv.starts_with("threshold,fraction,layer\n0.00,1,follow\n"));
        assert_eq!(csv.lines().count(), 102);
        assert!(csv.ends_with("1.00,1,follow\n"));
    }

    #[test]
    fn regular_graph_median_near_p() {
        let (n, d, p) = (10_000u32, 100u32, 0.3);
        let mut rng = stage_rng(11, 0);
        let mut edges = Vec::with_capacity((n * d) as usize);
        for v in 0..n {
            // Circulant out-neighbors: every node has out-degree d.
            for s in 1..=d {
                edges.push((v, (v + s * 37) % n));
            }
        }
        let g = LayeredGraph::from_parts((0..n).map(|i| i.to_string()).collect(), edges, vec![]);
        assert!((0..n).all(|v| g.out(Layer::Follow).degree(v) == d as usize));
        let dev: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        let c = perception_curve(&g, Layer::Follow, &dev, &vec![false; n as usize]);
        let at_p = c.value_at(30);
        assert!((at_p - 0.5).abs() <= 0.15, "{at_p}");
    }

    #[test]
    fn equal_counts_give_zero() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert_eq!(
            volume_paradox_fraction(&g, Layer::Follow, &[5; 4], &[1; 4]),
            0.0
        );
    }

    #[test]
    fn leaves_below_hub() {
        let edges: Vec<(u32, u32)> = (1..6).map(|l| (l, 0)).collect();
        let g = graph(6, &edges);
        let mut counts = vec![0; 6];
        counts[0] = 100;
        let s = volume_paradox(&g, Layer::Reblog, &counts, &[1; 6]);
        assert_eq!(s.considered, 5);
        assert_eq!(s.fraction, 1.0);
    }

    #[test]
    fn inactive_neighbors_do_not_count() {
        let g = graph(3, &[(0, 1), (0, 2)]);
        // Node 2 is busy but never posted in the window.
        let s = volume_paradox(&g, Layer::Follow, &[1, 0, 50], &[1, 1, 0]);
        assert_eq!(s.considered, 1);
        assert_eq!(s.below, 0);
    }

    fn brute_paradox(n: usize, edges: &[(u32, u32)], counts: &[u64], activity: &[u64]) -> f64 {
        let (mut considered, mut below) = (0.0, 0.0);
        for v in 0..n as u32 {
            let mut nbrs: Vec<u32> = edges
                .iter()
                .filter(|e| e.0 == v && e.1 != v)
                .map(|e| e.1)
                .collect();
            nbrs.sort();
            nbrs.dedup();
            let vals: Vec<f64> = nbrs
                .iter()
                .filter(|&&u| activity[u as usize] >= 1)
                .map(|&u| counts[u as usize] as f64)
                .collect();
            if vals.is_empty() {
                continue;
            }
            considered += 1.0;
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            if (counts[v as usize] as f64) < mean - 1e-12 {
                below += 1.0;
            }
        }
        if considered == 0.0 {
            0.0
        } else {
            below / considered
        }
    }

    type Fixture = (usize, Vec<(u32, u32)>, Vec<u64>, Vec<u64>, Vec<bool>);

    fn fixture() -> impl Strategy<Value = Fixture> {
        (2usize..40).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((0..n as u32, 0..n as u32), 0..150),
                prop::collection::vec(0u64..6, n),
                prop::collection::vec(0u64..3, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn paradox_matches_brute_force((n, edges, counts, activity, _) in fixture()) {
            let g = graph(n, &edges);
            let got = volume_paradox_fraction(&g, Layer::Follow, &counts, &activity);
            prop_assert!((got - brute_paradox(n, &edges, &counts, &activity)).abs() < 1e-12);
        }

        #[test]
        fn curve_is_monotone_and_bounded((n, edges, _, _, dev) in fixture()) {
            let g = graph(n, &edges);
            let c = perception_curve(&g, Layer::Reblog, &dev, &vec![false; n]);
            prop_assert!(c.fraction_at_least.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(c.fraction_at_least.iter().all(|&f| (0.0..=1.0).contains(&f)));
            if c.eligible > 0 {
                prop_assert_eq!(c.value_at(0), 1.0);
            }
            prop_assert_eq!(c.eligible + c.excluded_zero_outdegree, n);
        }
    }
}
