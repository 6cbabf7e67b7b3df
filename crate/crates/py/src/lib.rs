//! Python bindings. Results that are records in Rust come back as plain
//! dicts and lists.

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use devgraph_core::community::{louvain, LouvainOptions};
use devgraph_core::diffusion::{
    build_trees, classify_nodes, reach_report, read_events, DiffusionTree,
};
use devgraph_core::error::Error;
use devgraph_core::expansion::{extract_deviant_graph, ExpansionParams};
use devgraph_core::graph::{self, Layer, LayeredGraph, NodeId, StatsOptions};
use devgraph_core::ingest::{NormalizeOptions, QueryLog as CoreQueryLog};
use devgraph_core::intervention::{
    rank_by_degree, rank_by_volume, shrinkage_curve, RemovalStrategy,
};
use devgraph_core::perception::{perception_curve, volume_paradox_fraction};
use devgraph_core::{demographics, synth};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::UnknownNode(_) => PyKeyError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn layer(name: &str) -> PyResult<Layer> {
    name.parse().map_err(err)
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_pyobject(py)?.into_any(),
            (None, Some(i)) => i.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(value_to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(m) => {
            let dict = PyDict::new(py);
            for (k, x) in m {
                dict.set_item(k, value_to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    value_to_py(py, &v)
}

/// Two-layer (follow, reblog) directed graph.
#[pyclass(module = "devgraph")]
pub struct Graph {
    inner: LayeredGraph,
}

#[pymethods]
impl Graph {
    /// Build from node ids, follow edges `(u, v)` and weighted reblog
    /// edges `(u, v, w)`, all by index into `ids`.
    #[new]
    #[pyo3(signature = (ids, follow=Vec::new(), reblog=Vec::new()))]
    fn new(
        ids: Vec<String>,
        follow: Vec<(NodeId, NodeId)>,
        reblog: Vec<(NodeId, NodeId, u64)>,
    ) -> PyResult<Self> {
        let n = ids.len() as NodeId;
        if follow
            .iter()
            .map(|e| (e.0, e.1))
            .chain(reblog.iter().map(|e| (e.0, e.1)))
            .any(|(u, v)| u >= n || v >= n)
        {
            return Err(PyValueError::new_err("edge endpoint out of range"));
        }
        Ok(Graph {
            inner: LayeredGraph::from_parts(ids, follow, reblog),
        })
    }

    /// Read a `src<TAB>dst<TAB>weight<TAB>F|R` edge list.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = graph::read_edge_list(&path).map_err(err)?;
        Ok(Graph { inner })
    }

    /// Apply a `node,group` label file; returns ids not in the graph.
    fn load_labels(&mut self, path: PathBuf) -> PyResult<Vec<String>> {
        let labels = graph::read_labels(&path).map_err(err)?;
        Ok(self.inner.apply_labels(&labels))
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[pyo3(signature = (layer="reblog"))]
    fn num_edges(&self, layer: &str) -> PyResult<usize> {
        Ok(self.inner.num_edges(self::layer(layer)?))
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids().to_vec()
    }

    fn index(&self, id: &str) -> PyResult<NodeId> {
        self.inner
            .node(id)
            .ok_or_else(|| PyKeyError::new_err(id.to_string()))
    }

    /// Group labels as codes (P1, P2, B1, B2, O).
    fn roles(&self) -> Vec<String> {
        self.inner
            .roles()
            .iter()
            .map(|r| r.code().to_string())
            .collect()
    }

    #[pyo3(signature = (layer="reblog"))]
    fn out_neighbors(&self, layer: &str) -> PyResult<Vec<Vec<NodeId>>> {
        let adj = self.inner.out(self::layer(layer)?);
        Ok((0..self.inner.num_nodes() as NodeId)
            .map(|v| adj.neighbors(v).to_vec())
            .collect())
    }

    /// Subgraph induced by nodes within `hops` of the given ids.
    fn snowball(&self, ids: Vec<String>, hops: usize) -> PyResult<Graph> {
        let seeds: Vec<NodeId> = ids.iter().filter_map(|id| self.inner.node(id)).collect();
        let keep = self.inner.snowball_from(&seeds, hops);
        Ok(Graph {
            inner: self.inner.induced_subgraph(&keep),
        })
    }

    #[pyo3(signature = (layer="reblog", path_samples=1000, seed=0, exact_paths=false))]
    fn stats<'py>(
        &self,
        py: Python<'py>,
        layer: &str,
        path_samples: usize,
        seed: u64,
        exact_paths: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let opts = StatsOptions {
            exact_paths,
            path_samples,
            seed,
        };
        let s = py.detach(|| {
            graph::network_stats(&self.inner, self::layer(layer)?, &opts).map_err(err)
        })?;
        to_py(py, &s)
    }

    /// Louvain communities: `(assignment, modularity)`.
    #[pyo3(signature = (layer="reblog", seed=0))]
    fn louvain(&self, py: Python<'_>, layer: &str, seed: u64) -> PyResult<(Vec<u32>, f64)> {
        let layer = self::layer(layer)?;
        let opts = LouvainOptions {
            seed,
            ..LouvainOptions::default()
        };
        let p = py
            .detach(|| louvain(&self.inner, layer, &opts))
            .map_err(err)?;
        Ok((p.assignment, p.modularity))
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(nodes={}, follow={}, reblog={})",
            self.inner.num_nodes(),
            self.inner.num_edges(Layer::Follow),
            self.inner.num_edges(Layer::Reblog)
        )
    }
}

/// Normalized search-click log.
#[pyclass(module = "devgraph")]
pub struct QueryLog {
    inner: CoreQueryLog,
}

#[pymethods]
impl QueryLog {
    #[staticmethod]
    #[pyo3(signature = (path, region=None))]
    fn read(path: PathBuf, region: Option<String>) -> PyResult<Self> {
        let opts = NormalizeOptions {
            region,
            ..NormalizeOptions::default()
        };
        Ok(QueryLog {
            inner: CoreQueryLog::read_tsv(&path, &opts).map_err(err)?,
        })
    }

    #[getter]
    fn num_queries(&self) -> usize {
        self.inner.num_queries()
    }

    #[getter]
    fn num_blogs(&self) -> usize {
        self.inner.num_blogs()
    }

    /// Expand seed keywords to the deviant blog set. Returns a dict with
    /// `keywords`, `blogs`, `trajectory` and `converged`.
    #[pyo3(signature = (seed_keywords, decile=0.1, eps=0.01, max_iter=20))]
    fn extract<'py>(
        &self,
        py: Python<'py>,
        seed_keywords: Vec<String>,
        decile: f64,
        eps: f64,
        max_iter: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let seed: BTreeSet<String> = seed_keywords.into_iter().collect();
        let params = ExpansionParams {
            decile,
            eps,
            max_iter,
            ..ExpansionParams::default()
        };
        let ex = py
            .detach(|| extract_deviant_graph(&seed, &self.inner, &params))
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("keywords", ex.state.keywords.iter().collect::<Vec<_>>())?;
        d.set_item("blogs", ex.state.blogs.iter().collect::<Vec<_>>())?;
        d.set_item("initial", to_py(py, &ex.initial)?)?;
        d.set_item("trajectory", to_py(py, &ex.trajectory)?)?;
        d.set_item("converged", ex.converged)?;
        Ok(d.into_any())
    }
}

/// Diffusion trees over a labelled graph.
#[pyclass(module = "devgraph")]
pub struct Diffusion {
    trees: Vec<DiffusionTree>,
    classes: Vec<devgraph_core::diffusion::ConsumerClass>,
    n: usize,
}

#[pymethods]
impl Diffusion {
    /// Read reblog events for `graph`, whose labels mark the producers.
    #[new]
    fn new(graph: &Graph, events: PathBuf) -> PyResult<Self> {
        let g = &graph.inner;
        let (events, _) = read_events(&events, g).map_err(err)?;
        let roles = g.roles();
        let producers: HashSet<NodeId> = (0..g.num_nodes() as NodeId)
            .filter(|&v| roles[v as usize].is_producer())
            .collect();
        let trees = build_trees(&events, &producers).map_err(err)?.trees;
        let classes = classify_nodes(g, &trees, &roles);
        Ok(Diffusion {
            trees,
            classes,
            n: g.num_nodes(),
        })
    }

    #[getter]
    fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Consumer class name per node.
    fn classes(&self) -> Vec<&'static str> {
        self.classes.iter().map(|c| c.name()).collect()
    }

    fn reach<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &reach_report(&self.classes, &self.trees))
    }

    /// Reached fraction after removing the top `sizes` nodes by
    /// `strategy` ("by_volume" or "by_degree").
    #[pyo3(signature = (graph, sizes, strategy="by_volume"))]
    fn shrinkage(&self, graph: &Graph, sizes: Vec<usize>, strategy: &str) -> PyResult<Vec<f64>> {
        let (ranking, s) = match strategy {
            "by_volume" => (rank_by_volume(&self.trees), RemovalStrategy::ByVolume),
            "by_degree" => (
                rank_by_degree(&graph.inner).map_err(err)?,
                RemovalStrategy::ByDegree,
            ),
            other => return Err(PyValueError::new_err(format!("unknown strategy `{other}`"))),
        };
        Ok(shrinkage_curve(&self.trees, &ranking, &sizes, s)
            .map_err(err)?
            .reached_fraction)
    }

    /// Majority-illusion curve: fraction of consumers whose deviant share of
    /// out-neighbors is at least each threshold `k / 100`.
    #[pyo3(signature = (graph, layer="reblog"))]
    fn perception(&self, graph: &Graph, layer: &str) -> PyResult<Vec<f64>> {
        if graph.inner.num_nodes() != self.n {
            return Err(PyValueError::new_err(
                "graph does not match the diffusion data",
            ));
        }
        let roles = graph.inner.roles();
        let producers: Vec<bool> = roles.iter().map(|r| r.is_producer()).collect();
        let deviant: Vec<bool> = self
            .classes
            .iter()
            .zip(&producers)
            .map(|(c, &p)| p || c.is_active())
            .collect();
        Ok(
            perception_curve(&graph.inner, self::layer(layer)?, &deviant, &producers)
                .fraction_at_least,
        )
    }
}

/// Share of nodes reblogging strictly less than the mean of their active
/// out-neighbors.
#[pyfunction]
#[pyo3(signature = (graph, counts, activity, layer="reblog"))]
fn volume_paradox(
    graph: &Graph,
    counts: Vec<u64>,
    activity: Vec<u64>,
    layer: &str,
) -> PyResult<f64> {
    let n = graph.inner.num_nodes();
    if counts.len() != n || activity.len() != n {
        return Err(PyValueError::new_err(format!(
            "expected {n} counts and activities"
        )));
    }
    Ok(volume_paradox_fraction(
        &graph.inner,
        self::layer(layer)?,
        &counts,
        &activity,
    ))
}

/// `(average degree, density)` from node and edge counts.
#[pyfunction]
fn degree_and_density(n: u64, e: u64) -> (f64, f64) {
    graph::degree_and_density(n, e)
}

#[pyfunction]
fn min_max_normalize(xs: Vec<f64>) -> PyResult<Vec<f64>> {
    demographics::min_max_normalize(&xs).map_err(err)
}

/// Write a synthetic fixture to `out`; returns the written paths.
#[pyfunction]
#[pyo3(signature = (seed, out, overrides=Vec::new()))]
fn write_synth(
    seed: u64,
    out: PathBuf,
    overrides: Vec<(String, String)>,
) -> PyResult<Vec<PathBuf>> {
    let mut cfg = synth::SynthConfig {
        seed,
        ..synth::SynthConfig::default()
    };
    for (k, v) in &overrides {
        cfg.set(k, v).map_err(err)?;
    }
    let fixture = synth::generate(&cfg).map_err(err)?;
    fixture.write(&out).map_err(err)
}

/// Run the command-line tool in-process; returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("devgraph".to_string())
        .chain(args)
        .collect();
    py.detach(|| devgraph_core::cli::main_with_args(argv))
}

#[pymodule]
fn devgraph(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<QueryLog>()?;
    m.add_class::<Diffusion>()?;
    m.add_function(wrap_pyfunction!(volume_paradox, m)?)?;
    m.add_function(wrap_pyfunction!(degree_and_density, m)?)?;
    m.add_function(wrap_pyfunction!(min_max_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(write_synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
