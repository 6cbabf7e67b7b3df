//! Command-line front end. Each subcommand runs one stage and writes its
//! artifacts; `pipeline` runs them all and adds `report.json`.
//!
//! Settings come from an optional flat `key = value` file (`--config`) with
//! flags taking precedence. Relative paths in the file are resolved against
//! its directory.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::community::{
    louvain_traced, partition_csv, read_role_map, roles_from_partition, LouvainOptions, Partition,
};
use crate::connectivity::{
    group_matrix, present_groups, GroupMatrix, MatrixMode, NullModelOptions,
};
use crate::demographics::{
    age_histogram_csv, class_demographics, engagement_by_age, engagement_csv, read_demographics,
    underage_nodes, AgeBands, ClassDemographics, DemographicRecord, DemographicsReadDiagnostics,
    Deviation, EngagementCurve,
};
use crate::diffusion::{
    activity_counts, build_trees, classify_nodes, deviant_reblog_counts, reach_report, read_events,
    ConsumerClass, EventReadDiagnostics, ReachReport, ReblogEvent, TreeDiagnostics, TreeSet,
};
use crate::error::{Error, Result};
use crate::expansion::{
    extract_deviant_graph, trajectory_csv, ExpansionParams, Extraction, RatioMode, TrajectoryPoint,
};
use crate::graph::{
    network_stats, read_edge_list, read_labels, BuildDiagnostics, GroupLabel, Layer, LayeredGraph,
    NetworkStats, NodeId, StatsOptions, EXACT_PATH_LIMIT,
};
use crate::ingest::{
    bootstrap_queries, default_platform_tokens, normalize_query, read_phrases, Dictionary,
    LogDiagnostics, NormalizeOptions, QueryLog, ThresholdScope,
};
use crate::intervention::{
    baseline_consumers, rank_by_degree, rank_by_volume, rank_greedy, shrinkage_curve_against,
    RemovalStrategy, ShrinkageCurve, UnderageThreshold, DEFAULT_SIZES,
};
use crate::perception::{perception_curve, volume_paradox, ParadoxSummary, PerceptionCurve};
use crate::synth::{generate, SynthConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "devgraph",
    version,
    about = "Deviant subcommunity extraction and analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand seed keywords over the query log into a deviant blog set.
    Extract(StageArgs),
    /// Size, degree, density, reciprocity, clustering and path metrics.
    Stats(StageArgs),
    /// Louvain communities of the deviant subgraph.
    Communities(StageArgs),
    /// Role-group connectivity matrices and null-model ratios.
    Connectivity(StageArgs),
    /// Diffusion trees, consumer classes and reach.
    Diffusion(StageArgs),
    /// Majority-illusion curves and the volume paradox.
    Perception(StageArgs),
    /// Node-removal shrinkage curves.
    Intervene(StageArgs),
    /// Age and gender by consumer class.
    Demographics(StageArgs),
    /// Generate a synthetic fixture.
    Synth(SynthArgs),
    /// Run every stage in order and write report.json.
    Pipeline(StageArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct StageArgs {
    /// Flat key = value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub query_log: Option<PathBuf>,
    #[arg(long)]
    pub exact_dict: Option<PathBuf>,
    #[arg(long)]
    pub contain_dict: Option<PathBuf>,
    #[arg(long)]
    pub seed_keywords: Option<PathBuf>,
    /// Edge list: src, dst, weight, F|R (tab separated).
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Ground-truth roles, `node,group`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Community to role mapping, `community,role`.
    #[arg(long)]
    pub role_map: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub demographics: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_unique: Option<u64>,
    #[arg(long)]
    pub min_clicks: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub decile: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// `deviant` or `all`: which hits the blog thresholds count.
    #[arg(long)]
    pub threshold_scope: Option<String>,
    /// `clicks` or `unique`: how the deviant ratio is measured.
    #[arg(long)]
    pub ratio: Option<String>,
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long)]
    pub hops: Option<usize>,
    /// Layer used for communities: follow or reblog.
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub null_samples: Option<usize>,
    #[arg(long)]
    pub swaps_per_edge: Option<usize>,
    #[arg(long)]
    pub path_samples: Option<usize>,
    /// Comma-separated removal sizes.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Add the adaptive greedy removal ranking.
    #[arg(long)]
    pub greedy: bool,
    /// `population` or `sample` standard deviation.
    #[arg(long)]
    pub std: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// Synth configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set size.O=2000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Parse a flat `key = value` file. Blank lines and `#` comments are skipped.
pub fn parse_flat_config(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .or_else(|_| usage(format!("invalid value `{v}` for `{key}`")))
}

impl StageArgs {
    /// Fill unset fields from the config file named by `--config`.
    fn merge_config(mut self) -> CliResult<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path).map_err(|e| CliError::Runtime(Error::io(&path, e)))?;
        let map =
            parse_flat_config(&text).or_else(|e| usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let p = |v: &str| base.join(v);
        for (k, v) in &map {
            let v = v.as_str();
            match k.as_str() {
                "query_log" => fill(&mut self.query_log, p(v)),
                "exact_dict" => fill(&mut self.exact_dict, p(v)),
                "contain_dict" => fill(&mut self.contain_dict, p(v)),
                "seed_keywords" => fill(&mut self.seed_keywords, p(v)),
                "edges" => fill(&mut self.edges, p(v)),
                "labels" => fill(&mut self.labels, p(v)),
                "role_map" => fill(&mut self.role_map, p(v)),
                "events" => fill(&mut self.events, p(v)),
                "demographics" => fill(&mut self.demographics, p(v)),
                "out" => fill(&mut self.out, p(v)),
                "seed" => fill(&mut self.seed, parse_value(k, v)?),
                "min_unique" => fill(&mut self.min_unique, parse_value(k, v)?),
                "min_clicks" => fill(&mut self.min_clicks, parse_value(k, v)?),
                "eps" => fill(&mut self.eps, parse_value(k, v)?),
                "decile" => fill(&mut self.decile, parse_value(k, v)?),
                "max_iter" => fill(&mut self.max_iter, parse_value(k, v)?),
                "threshold_scope" => fill(&mut self.threshold_scope, v.to_string()),
                "ratio" => fill(&mut self.ratio, v.to_string()),
                "region" => fill(&mut self.region, v.to_string()),
                "hops" => fill(&mut self.hops, parse_value(k, v)?),
                "layer" => fill(&mut self.layer, v.to_string()),
                "null_samples" => fill(&mut self.null_samples, parse_value(k, v)?),
                "swaps_per_edge" => fill(&mut self.swaps_per_edge, parse_value(k, v)?),
                "path_samples" => fill(&mut self.path_samples, parse_value(k, v)?),
                "sizes" => fill(&mut self.sizes, v.to_string()),
                "greedy" => self.greedy |= parse_value::<bool>(k, v)?,
                "std" => fill(&mut self.std, v.to_string()),
                "threads" => fill(&mut self.threads, parse_value(k, v)?),
                other => return usage(format!("{}: unknown key `{other}`", path.display())),
            }
        }
        Ok(self)
    }
}

fn fill<T>(slot: &mut Option<T>, v: T) {
    if slot.is_none() {
        *slot = Some(v);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub query_log: Option<PathBuf>,
    pub exact_dict: Option<PathBuf>,
    pub contain_dict: Option<PathBuf>,
    pub seed_keywords: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub role_map: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub demographics: Option<PathBuf>,
}

impl Inputs {
    fn all(&self) -> impl Iterator<Item = &PathBuf> {
        [
            &self.query_log,
            &self.exact_dict,
            &self.contain_dict,
            &self.seed_keywords,
            &self.edges,
            &self.labels,
            &self.role_map,
            &self.events,
            &self.demographics,
        ]
        .into_iter()
        .flatten()
    }
}

/// Analysis settings recorded in the report.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub seed: Option<u64>,
    pub expansion: ExpansionParams,
    pub region: Option<String>,
    pub hops: usize,
    pub community_layer: Layer,
    pub null_samples: usize,
    pub swaps_per_edge: usize,
    pub path_samples: usize,
    pub sizes: Vec<usize>,
    pub greedy: bool,
    pub deviation: Deviation,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub inputs: Inputs,
    pub out_dir: PathBuf,
    pub settings: Settings,
    pub threads: Option<usize>,
}

impl PipelineConfig {
    pub fn from_args(args: StageArgs) -> CliResult<Self> {
        let a = args.merge_config()?;
        let mut expansion = ExpansionParams::default();
        if let Some(v) = a.min_unique {
            expansion.thresholds.min_unique = v;
        }
        if let Some(v) = a.min_clicks {
            expansion.thresholds.min_clicks = v;
        }
        if let Some(v) = a.eps {
            if v < 0.0 {
                return usage("eps must be non-negative");
            }
            expansion.eps = v;
        }
        if let Some(v) = a.decile {
            if !(v > 0.0 && v <= 1.0) {
                return usage("decile must lie in (0, 1]");
            }
            expansion.decile = v;
        }
        if let Some(v) = a.max_iter {
            expansion.max_iter = v;
        }
        if let Some(s) = &a.threshold_scope {
            expansion.thresholds.scope = match s.to_ascii_lowercase().as_str() {
                "deviant" => ThresholdScope::Deviant,
                "all" => ThresholdScope::All,
                _ => return usage(format!("threshold_scope must be deviant or all, got `{s}`")),
            };
        }
        if let Some(s) = &a.ratio {
            expansion.ratio = match s.to_ascii_lowercase().as_str() {
                "clicks" | "volume" => RatioMode::ClickVolume,
                "unique" | "queries" => RatioMode::UniqueQueries,
                _ => return usage(format!("ratio must be clicks or unique, got `{s}`")),
            };
        }
        let community_layer = match &a.layer {
            Some(s) => s.parse().or_else(|e: Error| usage(e.to_string()))?,
            None => Layer::Reblog,
        };
        let sizes = match &a.sizes {
            Some(s) => {
                let v: Vec<usize> = s
                    .split(',')
                    .map(|x| parse_value("sizes", x.trim()))
                    .collect::<CliResult<_>>()?;
                if v.windows(2).any(|w| w[0] > w[1]) {
                    return usage("sizes must be ascending");
                }
                v
            }
            None => DEFAULT_SIZES.to_vec(),
        };
        let deviation = match a.std.as_deref().map(str::to_ascii_lowercase).as_deref() {
            None | Some("population") => Deviation::Population,
            Some("sample") => Deviation::Sample,
            Some(other) => {
                return usage(format!("std must be population or sample, got `{other}`"))
            }
        };
        let defaults = NullModelOptions::default();
        Ok(PipelineConfig {
            inputs: Inputs {
                query_log: a.query_log,
                exact_dict: a.exact_dict,
                contain_dict: a.contain_dict,
                seed_keywords: a.seed_keywords,
                edges: a.edges,
                labels: a.labels,
                role_map: a.role_map,
                events: a.events,
                demographics: a.demographics,
            },
            out_dir: a.out.unwrap_or_else(|| PathBuf::from("out")),
            settings: Settings {
                seed: a.seed,
                expansion,
                region: a.region,
                hops: a.hops.unwrap_or(3),
                community_layer,
                null_samples: a.null_samples.unwrap_or(defaults.samples),
                swaps_per_edge: a.swaps_per_edge.unwrap_or(defaults.swaps_per_edge),
                path_samples: a
                    .path_samples
                    .unwrap_or(StatsOptions::default().path_samples),
                sizes,
                greedy: a.greedy,
                deviation,
            },
            threads: a.threads,
        })
    }

    fn require_seed(&self, stage: &str) -> CliResult<u64> {
        self.settings
            .seed
            .ok_or_else(|| CliError::Usage(format!("`{stage}` is randomized and needs --seed")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractReport {
    pub log: LogDiagnostics,
    pub distinct_queries: usize,
    pub distinct_blogs: usize,
    pub seed_keywords: usize,
    pub initial: TrajectoryPoint,
    pub trajectory: Vec<TrajectoryPoint>,
    pub converged: bool,
    pub keywords: usize,
    pub deviant_blogs: usize,
    pub queries_hitting: usize,
    pub bootstrap_queries: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub follow_edges: usize,
    pub reblog_edges: usize,
    pub malformed_lines: usize,
    pub self_loops: usize,
    pub unknown_labels: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub deviant_source: String,
    pub deviant_nodes: usize,
    pub deviant_missing_from_graph: usize,
    pub hops: usize,
    pub nodes: usize,
    pub follow_edges: usize,
    pub reblog_edges: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsRow {
    pub network: String,
    pub layer: Layer,
    pub stats: NetworkStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub graph: GraphSummary,
    pub sample: Option<SampleSummary>,
    pub rows: Vec<StatsRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommunitiesReport {
    pub layer: Layer,
    pub nodes: usize,
    pub communities: usize,
    pub sizes: Vec<usize>,
    pub modularity: f64,
    pub level_modularity: Vec<f64>,
    /// Share of deviant nodes whose community's majority label is their own.
    pub label_agreement: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerMatrices {
    pub layer: Layer,
    pub avg_volume: GroupMatrix,
    pub density: GroupMatrix,
    pub null_ratio: GroupMatrix,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectivityReport {
    pub role_source: String,
    pub group_sizes: BTreeMap<GroupLabel, usize>,
    pub null_model: NullModelOptions,
    pub layers: Vec<LayerMatrices>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffusionReport {
    pub events: EventReadDiagnostics,
    pub trees: TreeDiagnostics,
    pub num_trees: usize,
    pub max_depth: u32,
    pub reach: ReachReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerceptionReport {
    pub curves: Vec<PerceptionCurve>,
    pub paradox: Vec<ParadoxSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterventionReport {
    pub baseline: usize,
    pub top_by_volume: Vec<String>,
    pub top_by_degree: Vec<String>,
    pub curves: Vec<ShrinkageCurve>,
    pub underage: Option<UnderageThreshold>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemographicsReport {
    pub read: DemographicsReadDiagnostics,
    pub classes: Vec<ClassDemographics>,
    pub engagement: Option<Vec<EngagementCurve>>,
    pub engagement_error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub settings: Settings,
    pub extract: Option<ExtractReport>,
    pub stats: StatsReport,
    pub communities: Option<CommunitiesReport>,
    pub connectivity: Option<ConnectivityReport>,
    pub diffusion: Option<DiffusionReport>,
    pub perception: Option<PerceptionReport>,
    pub intervention: Option<InterventionReport>,
    pub demographics: Option<DemographicsReport>,
}

struct Loaded {
    graph: LayeredGraph,
    summary: GraphSummary,
}

/// Snowball sample around the deviant set, labels carried over.
struct Context {
    graph: LayeredGraph,
    deviant: Vec<bool>,
    summary: SampleSummary,
}

struct Diffusion {
    events: Vec<ReblogEvent>,
    read: EventReadDiagnostics,
    trees: TreeSet,
    classes: Vec<ConsumerClass>,
}

/// Lazily computed stage inputs shared by the subcommands.
pub struct Session {
    cfg: PipelineConfig,
    extraction: Option<(Extraction, ExtractReport)>,
    loaded: Option<Loaded>,
    context: Option<Context>,
    partition: Option<(LayeredGraph, Partition, Vec<f64>)>,
    roles: Option<(Vec<GroupLabel>, String)>,
    diffusion: Option<Diffusion>,
    demo: Option<(Vec<DemographicRecord>, DemographicsReadDiagnostics)>,
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

impl Session {
    pub fn new(cfg: PipelineConfig) -> Self {
        Session {
            cfg,
            extraction: None,
            loaded: None,
            context: None,
            partition: None,
            roles: None,
            diffusion: None,
            demo: None,
        }
    }

    fn out(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn need<'a>(&self, p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a PathBuf> {
        p.as_ref()
            .ok_or_else(|| CliError::Usage(format!("missing input: --{what}")))
    }

    fn ensure_extraction(&mut self) -> CliResult<()> {
        if self.extraction.is_some() {
            return Ok(());
        }
        let inputs = self.cfg.inputs.clone();
        let log_path = self.need(&inputs.query_log, "query-log")?;
        let tokens = default_platform_tokens();
        let opts = NormalizeOptions {
            region: self.cfg.settings.region.clone(),
            ..NormalizeOptions::default()
        };
        let log = QueryLog::read_tsv(log_path, &opts)?;
        let exact = inputs
            .exact_dict
            .as_ref()
            .map(|p| read_phrases(p))
            .transpose()?;
        let contain = inputs
            .contain_dict
            .as_ref()
            .map(|p| read_phrases(p))
            .transpose()?;
        let dict = (exact.is_some() || contain.is_some()).then(|| {
            Dictionary::new(
                exact.unwrap_or_default(),
                contain.unwrap_or_default(),
                &tokens,
            )
        });
        let mut seed: BTreeSet<String> = BTreeSet::new();
        if let Some(p) = &inputs.seed_keywords {
            for line in read_phrases(p)? {
                let q = normalize_query(&line, &tokens);
                if !q.is_empty() {
                    seed.insert(q);
                }
            }
        }
        if let Some(d) = &dict {
            seed.extend(d.exact().iter().cloned());
        }
        if seed.is_empty() {
            return usage("no seed keywords: pass --seed-keywords or a non-empty --exact-dict");
        }
        let ex = extract_deviant_graph(&seed, &log, &self.cfg.settings.expansion)?;
        let bootstrap = dict.as_ref().map(|d| bootstrap_queries(&log, d));
        let report = ExtractReport {
            log: log.diagnostics,
            distinct_queries: log.num_queries(),
            distinct_blogs: log.num_blogs(),
            seed_keywords: seed.len(),
            initial: ex.initial,
            trajectory: ex.trajectory.clone(),
            converged: ex.converged,
            keywords: ex.state.keywords.len(),
            deviant_blogs: ex.state.blogs.len(),
            queries_hitting: ex.state.queries_hitting.len(),
            bootstrap_queries: bootstrap.as_ref().map(Vec::len),
        };
        let dir = self.cfg.out_dir.clone();
        let lines =
            |set: &BTreeSet<String>| set.iter().map(|s| format!("{s}\n")).collect::<String>();
        write(&dir, "trajectory.csv", &trajectory_csv(&ex))?;
        write(&dir, "deviant_blogs.txt", &lines(&ex.state.blogs))?;
        write(&dir, "keywords.txt", &lines(&ex.state.keywords))?;
        if let Some(b) = &bootstrap {
            let mut s = String::from("query\tmatch\tclicks\n");
            for (q, kind, clicks) in b {
                s.push_str(&format!("{q}\t{kind:?}\t{clicks}\n"));
            }
            write(&dir, "bootstrap_queries.tsv", &s)?;
        }
        info!(
            "extract: {} deviant blogs after {} steps",
            report.deviant_blogs,
            report.trajectory.len()
        );
        self.extraction = Some((ex, report));
        Ok(())
    }

    fn ensure_graph(&mut self) -> CliResult<()> {
        if self.loaded.is_some() {
            return Ok(());
        }
        let path = self.need(&self.cfg.inputs.edges, "edges")?.clone();
        let (mut graph, diag): (LayeredGraph, BuildDiagnostics) = read_edge_list(&path)?;
        if graph.num_nodes() == 0 {
            return Err(Error::EmptyGraph.into());
        }
        let mut unknown_labels = 0;
        if let Some(p) = &self.cfg.inputs.labels {
            let labels = read_labels(p)?;
            unknown_labels = graph.apply_labels(&labels).len();
        }
        let summary = GraphSummary {
            nodes: graph.num_nodes(),
            follow_edges: graph.num_edges(Layer::Follow),
            reblog_edges: graph.num_edges(Layer::Reblog),
            malformed_lines: diag.malformed,
            self_loops: diag.self_loops,
            unknown_labels,
        };
        self.loaded = Some(Loaded { graph, summary });
        Ok(())
    }

    fn has_deviant_source(&self) -> bool {
        self.cfg.inputs.query_log.is_some() || self.cfg.inputs.labels.is_some()
    }

    fn ensure_context(&mut self) -> CliResult<()> {
        if self.context.is_some() {
            return Ok(());
        }
        self.ensure_graph()?;
        let (ids, source): (Vec<String>, &str) = if self.cfg.inputs.query_log.is_some() {
            self.ensure_extraction()?;
            let blogs = &self.extraction.as_ref().unwrap().0.state.blogs;
            (blogs.iter().cloned().collect(), "extraction")
        } else if self.cfg.inputs.labels.is_some() {
            let g = &self.loaded.as_ref().unwrap().graph;
            let ids = (0..g.num_nodes() as NodeId)
                .filter(|&v| g.label(v).is_some_and(|l| l != GroupLabel::Outer))
                .map(|v| g.id(v).to_string())
                .collect();
            (ids, "labels")
        } else {
            return usage("no deviant set: pass --query-log or --labels");
        };
        let g = &self.loaded.as_ref().unwrap().graph;
        let seeds: Vec<NodeId> = ids.iter().filter_map(|id| g.node(id)).collect();
        let missing = ids.len() - seeds.len();
        if seeds.is_empty() {
            return Err(
                Error::InsufficientData("no deviant blog appears in the graph".into()).into(),
            );
        }
        let hops = self.cfg.settings.hops;
        let keep = g.snowball_from(&seeds, hops);
        let sample = g.induced_subgraph(&keep);
        let seed_ids: HashSet<&str> = seeds.iter().map(|&v| g.id(v)).collect();
        let deviant: Vec<bool> = sample
            .ids()
            .iter()
            .map(|id| seed_ids.contains(id.as_str()))
            .collect();
        let summary = SampleSummary {
            deviant_source: source.to_string(),
            deviant_nodes: seeds.len(),
            deviant_missing_from_graph: missing,
            hops,
            nodes: sample.num_nodes(),
            follow_edges: sample.num_edges(Layer::Follow),
            reblog_edges: sample.num_edges(Layer::Reblog),
        };
        info!(
            "sample: {} nodes within {hops} hops of {} deviant nodes",
            summary.nodes, summary.deviant_nodes
        );
        self.context = Some(Context {
            graph: sample,
            deviant,
            summary,
        });
        Ok(())
    }

    fn deviant_subgraph(&self) -> LayeredGraph {
        let ctx = self.context.as_ref().unwrap();
        let keep: BTreeSet<NodeId> = (0..ctx.graph.num_nodes() as NodeId)
            .filter(|&v| ctx.deviant[v as usize])
            .collect();
        ctx.graph.induced_subgraph(&keep)
    }

    fn ensure_partition(&mut self) -> CliResult<()> {
        if self.partition.is_some() {
            return Ok(());
        }
        let seed = self.cfg.require_seed("communities")?;
        self.ensure_context()?;
        let sub = self.deviant_subgraph();
        let opts = LouvainOptions {
            seed,
            ..LouvainOptions::default()
        };
        let (p, trace) = louvain_traced(&sub, self.cfg.settings.community_layer, &opts)?;
        self.partition = Some((sub, p, trace));
        Ok(())
    }

    fn ensure_roles(&mut self) -> CliResult<()> {
        if self.roles.is_some() {
            return Ok(());
        }
        self.ensure_context()?;
        let roles = if let Some(path) = self.cfg.inputs.role_map.clone() {
            let map = read_role_map(&path)?;
            self.ensure_partition()?;
            let (sub, p, _) = self.partition.as_ref().unwrap();
            let sub_roles = roles_from_partition(p, &map);
            let by_id: HashMap<&str, GroupLabel> = (0..sub.num_nodes())
                .map(|v| (sub.id(v as NodeId), sub_roles[v]))
                .collect();
            let g = &self.context.as_ref().unwrap().graph;
            let roles = g
                .ids()
                .iter()
                .map(|id| by_id.get(id.as_str()).copied().unwrap_or(GroupLabel::Outer))
                .collect();
            (roles, "role_map".to_string())
        } else if self.cfg.inputs.labels.is_some() {
            (
                self.context.as_ref().unwrap().graph.roles(),
                "labels".to_string(),
            )
        } else {
            return usage("no role source: pass --labels or --role-map");
        };
        self.roles = Some(roles);
        Ok(())
    }

    fn ensure_diffusion(&mut self) -> CliResult<()> {
        if self.diffusion.is_some() {
            return Ok(());
        }
        self.ensure_roles()?;
        let path = self.need(&self.cfg.inputs.events, "events")?.clone();
        let g = &self.context.as_ref().unwrap().graph;
        let roles = &self.roles.as_ref().unwrap().0;
        let (events, read) = read_events(&path, g)?;
        let producers: HashSet<NodeId> = (0..g.num_nodes() as NodeId)
            .filter(|&v| roles[v as usize].is_producer())
            .collect();
        let trees = build_trees(&events, &producers)?;
        let classes = classify_nodes(g, &trees.trees, roles);
        self.diffusion = Some(Diffusion {
            events,
            read,
            trees,
            classes,
        });
        Ok(())
    }

    fn ensure_demo(&mut self) -> CliResult<()> {
        if self.demo.is_some() {
            return Ok(());
        }
        self.ensure_context()?;
        let path = self
            .need(&self.cfg.inputs.demographics, "demographics")?
            .clone();
        self.demo = Some(read_demographics(
            &path,
            &self.context.as_ref().unwrap().graph,
        )?);
        Ok(())
    }

    pub fn extract(&mut self) -> CliResult<ExtractReport> {
        self.ensure_extraction()?;
        let report = self.extraction.as_ref().unwrap().1.clone();
        write(self.out(), "extract.json", &json(&report))?;
        Ok(report)
    }

    pub fn stats(&mut self) -> CliResult<StatsReport> {
        self.ensure_graph()?;
        let mut rows = Vec::new();
        let s = &self.cfg.settings;
        let mut opts = StatsOptions {
            exact_paths: false,
            path_samples: s.path_samples,
            seed: s.seed.unwrap_or(0),
        };
        let mut sample = None;
        let mut nets: Vec<(String, LayeredGraph)> = Vec::new();
        if self.has_deviant_source() {
            self.ensure_context()?;
            nets.push(("deviant".into(), self.deviant_subgraph()));
            let ctx = self.context.as_ref().unwrap();
            nets.push(("all".into(), ctx.graph.clone()));
            sample = Some(ctx.summary.clone());
        } else {
            nets.push(("all".into(), self.loaded.as_ref().unwrap().graph.clone()));
        }
        if nets.iter().any(|(_, g)| g.num_nodes() > EXACT_PATH_LIMIT) {
            opts.seed = self.cfg.require_seed("stats")?;
        }
        for (name, g) in &nets {
            for layer in Layer::ALL {
                rows.push(StatsRow {
                    network: name.clone(),
                    layer,
                    stats: network_stats(g, layer, &opts)?,
                });
            }
        }
        let report = StatsReport {
            graph: self.loaded.as_ref().unwrap().summary.clone(),
            sample,
            rows,
        };
        let mut csv = String::from(
            "network,layer,n,e,avg_degree,density,reciprocity,clustering,avg_shortest_path,diameter,paths_exact\n",
        );
        for r in &report.rows {
            let t = &r.stats;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.network,
                r.layer,
                t.n,
                t.e,
                t.avg_degree,
                t.density,
                t.reciprocity,
                t.clustering,
                t.avg_shortest_path,
                t.diameter,
                t.paths_exact
            ));
        }
        write(self.out(), "stats.csv", &csv)?;
        write(self.out(), "stats.json", &json(&report))?;
        Ok(report)
    }

    pub fn communities(&mut self) -> CliResult<CommunitiesReport> {
        self.ensure_partition()?;
        let (sub, p, trace) = self.partition.as_ref().unwrap();
        let mut sizes = p.sizes();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        let label_agreement = self.cfg.inputs.labels.is_some().then(|| {
            let mut votes: BTreeMap<(u32, GroupLabel), usize> = BTreeMap::new();
            for (v, &c) in p.assignment.iter().enumerate() {
                let l = sub.label(v as NodeId).unwrap_or(GroupLabel::Outer);
                *votes.entry((c, l)).or_default() += 1;
            }
            let mut best: BTreeMap<u32, usize> = BTreeMap::new();
            for ((c, _), n) in votes {
                let b = best.entry(c).or_default();
                *b = (*b).max(n);
            }
            best.values().sum::<usize>() as f64 / sub.num_nodes().max(1) as f64
        });
        let report = CommunitiesReport {
            layer: self.cfg.settings.community_layer,
            nodes: sub.num_nodes(),
            communities: p.num_communities(),
            sizes,
            modularity: p.modularity,
            level_modularity: trace.clone(),
            label_agreement,
        };
        write(self.out(), "partition.csv", &partition_csv(sub, p))?;
        write(self.out(), "communities.json", &json(&report))?;
        Ok(report)
    }

    pub fn connectivity(&mut self) -> CliResult<ConnectivityReport> {
        let seed = self.cfg.require_seed("connectivity")?;
        self.ensure_roles()?;
        let g = &self.context.as_ref().unwrap().graph;
        let (roles, source) = self.roles.as_ref().unwrap();
        let groups = present_groups(roles);
        let s = &self.cfg.settings;
        let null = NullModelOptions {
            samples: s.null_samples,
            swaps_per_edge: s.swaps_per_edge,
            seed,
        };
        let mut layers = Vec::new();
        for layer in Layer::ALL {
            let m = |mode| group_matrix(g, layer, roles, &groups, mode, &null);
            layers.push(LayerMatrices {
                layer,
                avg_volume: m(MatrixMode::AvgVolume)?,
                density: m(MatrixMode::Density)?,
                null_ratio: m(MatrixMode::NullRatio)?,
            });
        }
        let mut group_sizes = BTreeMap::new();
        for &r in roles {
            *group_sizes.entry(r).or_default() += 1;
        }
        for l in &layers {
            for (name, m) in [
                ("avg_volume", &l.avg_volume),
                ("density", &l.density),
                ("null_ratio", &l.null_ratio),
            ] {
                write(
                    self.out(),
                    &format!("connectivity_{}_{name}.csv", l.layer),
                    &m.to_csv(),
                )?;
            }
        }
        let report = ConnectivityReport {
            role_source: source.clone(),
            group_sizes,
            null_model: null,
            layers,
        };
        write(self.out(), "connectivity.json", &json(&report))?;
        Ok(report)
    }

    pub fn diffusion(&mut self) -> CliResult<DiffusionReport> {
        self.ensure_diffusion()?;
        let g = &self.context.as_ref().unwrap().graph;
        let d = self.diffusion.as_ref().unwrap();
        let reach = reach_report(&d.classes, &d.trees.trees);
        let report = DiffusionReport {
            events: d.read,
            trees: d.trees.diagnostics,
            num_trees: d.trees.trees.len(),
            max_depth: d
                .trees
                .trees
                .iter()
                .map(|t| t.max_depth())
                .max()
                .unwrap_or(0),
            reach,
        };
        let mut classes = String::from("node,class\n");
        for (v, c) in d.classes.iter().enumerate() {
            classes.push_str(&format!("{},{c}\n", g.id(v as NodeId)));
        }
        let mut flows = String::from("from,to,reblogs\n");
        for f in &report.reach.flows {
            flows.push_str(&format!("{},{},{}\n", f.from, f.to, f.reblogs));
        }
        write(self.out(), "classes.csv", &classes)?;
        write(self.out(), "flows.csv", &flows)?;
        write(self.out(), "diffusion.json", &json(&report))?;
        Ok(report)
    }

    pub fn perception(&mut self) -> CliResult<PerceptionReport> {
        self.ensure_diffusion()?;
        let g = &self.context.as_ref().unwrap().graph;
        let roles = &self.roles.as_ref().unwrap().0;
        let d = self.diffusion.as_ref().unwrap();
        let producers: Vec<bool> = roles.iter().map(|r| r.is_producer()).collect();
        let deviant_active: Vec<bool> = d
            .classes
            .iter()
            .zip(&producers)
            .map(|(c, &p)| p || c.is_active())
            .collect();
        let counts = deviant_reblog_counts(g.num_nodes(), &d.trees.trees);
        let activity = activity_counts(g.num_nodes(), &d.events);
        let mut curves = Vec::new();
        let mut paradox = Vec::new();
        for layer in Layer::ALL {
            curves.push(perception_curve(g, layer, &deviant_active, &producers));
            paradox.push(volume_paradox(g, layer, &counts, &activity));
        }
        let mut csv = String::from("threshold,fraction,layer\n");
        for c in &curves {
            c.append_rows(&mut csv);
        }
        let report = PerceptionReport { curves, paradox };
        write(self.out(), "perception.csv", &csv)?;
        write(self.out(), "perception.json", &json(&report))?;
        Ok(report)
    }

    pub fn intervene(&mut self) -> CliResult<InterventionReport> {
        self.ensure_diffusion()?;
        if self.cfg.inputs.demographics.is_some() {
            self.ensure_demo()?;
        }
        let g = &self.context.as_ref().unwrap().graph;
        let d = self.diffusion.as_ref().unwrap();
        let trees = &d.trees.trees;
        let sizes = &self.cfg.settings.sizes;
        // Reach is measured over active consumers only.
        let baseline: Vec<NodeId> = baseline_consumers(trees)
            .into_iter()
            .filter(|&v| d.classes[v as usize].is_active())
            .collect();
        let curve =
            |ranking: &[NodeId], s| shrinkage_curve_against(trees, ranking, sizes, s, &baseline);
        let by_volume = rank_by_volume(trees);
        let by_degree = rank_by_degree(g)?;
        let mut curves = vec![
            curve(&by_volume, RemovalStrategy::ByVolume)?,
            curve(&by_degree, RemovalStrategy::ByDegree)?,
        ];
        if self.cfg.settings.greedy {
            let limit = sizes.last().copied().unwrap_or(0);
            curves.push(curve(&rank_greedy(trees, limit), RemovalStrategy::Greedy)?);
        }
        let underage = self.demo.as_ref().map(|(recs, _)| {
            crate::intervention::underage_exposure_threshold(
                trees,
                &by_volume,
                &underage_nodes(recs),
            )
        });
        let top = |r: &[NodeId]| r.iter().take(10).map(|&v| g.id(v).to_string()).collect();
        let report = InterventionReport {
            baseline: baseline.len(),
            top_by_volume: top(&by_volume),
            top_by_degree: top(&by_degree),
            curves,
            underage,
        };
        let mut csv = String::from("removed,reached_fraction,strategy\n");
        for c in &report.curves {
            c.append_rows(&mut csv);
        }
        write(self.out(), "shrinkage.csv", &csv)?;
        write(self.out(), "intervention.json", &json(&report))?;
        Ok(report)
    }

    pub fn demographics(&mut self) -> CliResult<DemographicsReport> {
        self.ensure_diffusion()?;
        self.ensure_demo()?;
        let classes = &self.diffusion.as_ref().unwrap().classes;
        let (recs, read) = self.demo.as_ref().unwrap();
        let bands = AgeBands::default();
        let (engagement, engagement_error) = match engagement_by_age(classes, recs, &bands) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let report = DemographicsReport {
            read: *read,
            classes: class_demographics(classes, recs, self.cfg.settings.deviation),
            engagement,
            engagement_error,
        };
        write(
            self.out(),
            "age_histogram.csv",
            &age_histogram_csv(classes, recs, &bands),
        )?;
        if let Some(c) = &report.engagement {
            write(self.out(), "engagement.csv", &engagement_csv(c))?;
        }
        write(self.out(), "demographics.json", &json(&report))?;
        Ok(report)
    }

    /// Every stage in order. Stages whose inputs are not configured are
    /// skipped and left out of the report.
    pub fn pipeline(&mut self) -> CliResult<Report> {
        let seed = self.cfg.require_seed("pipeline")?;
        self.ensure_graph()?;
        let i = self.cfg.inputs.clone();
        let extract = i.query_log.as_ref().map(|_| self.extract()).transpose()?;
        let stats = self.stats()?;
        let deviant = self.has_deviant_source();
        let communities = deviant.then(|| self.communities()).transpose()?;
        let roles = deviant && (i.labels.is_some() || i.role_map.is_some());
        let connectivity = roles.then(|| self.connectivity()).transpose()?;
        let events = roles && i.events.is_some();
        let diffusion = events.then(|| self.diffusion()).transpose()?;
        let perception = events.then(|| self.perception()).transpose()?;
        let intervention = events.then(|| self.intervene()).transpose()?;
        let demographics = (events && i.demographics.is_some())
            .then(|| self.demographics())
            .transpose()?;
        let report = Report {
            schema_version: SCHEMA_VERSION,
            settings: Settings {
                seed: Some(seed),
                ..self.cfg.settings.clone()
            },
            extract,
            stats,
            communities,
            connectivity,
            diffusion,
            perception,
            intervention,
            demographics,
        };
        write(self.out(), "report.json", &json(&report))?;
        Ok(report)
    }
}

fn run_synth(args: SynthArgs) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Runtime(Error::io(p, e)))?;
            let has_seed = parse_flat_config(&text)
                .map(|m| m.contains_key("seed"))
                .unwrap_or(false);
            let cfg =
                SynthConfig::parse(&text).or_else(|e| usage(format!("{}: {e}", p.display())))?;
            (cfg, has_seed)
        }
        None => (SynthConfig::default(), false),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.0
            .set(k.trim(), v.trim())
            .or_else(|e| usage(e.to_string()))?;
        cfg.1 |= k.trim() == "seed";
    }
    let (mut cfg, has_seed) = cfg;
    match args.seed {
        Some(s) => cfg.seed = s,
        None if has_seed => {}
        None => return usage("`synth` is randomized and needs --seed"),
    }
    cfg.validate().or_else(|e| usage(e.to_string()))?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("synth"));
    let fixture = generate(&cfg)?;
    let files = fixture.write(&out)?;
    info!("synth: wrote {} files to {}", files.len(), out.display());
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    let args = match cli.command {
        Command::Synth(a) => return run_synth(a),
        Command::Extract(ref a)
        | Command::Stats(ref a)
        | Command::Communities(ref a)
        | Command::Connectivity(ref a)
        | Command::Diffusion(ref a)
        | Command::Perception(ref a)
        | Command::Intervene(ref a)
        | Command::Demographics(ref a)
        | Command::Pipeline(ref a) => a.clone(),
    };
    let cfg = PipelineConfig::from_args(args)?;
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("thread pool already configured: {e}");
        }
    }
    for p in cfg.inputs.all() {
        if !p.exists() {
            return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)).into());
        }
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut s = Session::new(cfg);
    match cli.command {
        Command::Extract(_) => s.extract().map(drop),
        Command::Stats(_) => s.stats().map(drop),
        Command::Communities(_) => s.communities().map(drop),
        Command::Connectivity(_) => s.connectivity().map(drop),
        Command::Diffusion(_) => s.diffusion().map(drop),
        Command::Perception(_) => s.perception().map(drop),
        Command::Intervene(_) => s.intervene().map(drop),
        Command::Demographics(_) => s.demographics().map(drop),
        Command::Pipeline(_) => s.pipeline().map(drop),
        Command::Synth(_) => unreachable!(),
    }
}

/// Parse arguments, run, and map the outcome to an exit code: 0 success,
/// 1 runtime or data error, 2 usage error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_config_skips_comments() {
        let m = parse_flat_config("# header\nseed = 4 # trailing\n\nhops=2\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["seed"], "4");
        assert_eq!(m["hops"], "2");
        assert!(parse_flat_config("no equals sign").is_err());
    }

    #[test]
    fn flags_override_config_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("run.conf");
        fs::write(&conf, "edges = e.tsv\nseed = 4\nhops = 2\nsizes = 0,5\n").unwrap();
        let args = StageArgs {
            config: Some(conf),
            seed: Some(9),
            ..StageArgs::default()
        };
        let cfg = PipelineConfig::from_args(args).unwrap();
        assert_eq!(cfg.settings.seed, Some(9));
        assert_eq!(cfg.settings.hops, 2);
        assert_eq!(cfg.settings.sizes, vec![0, 5]);
        assert_eq!(cfg.inputs.edges, Some(dir.path().join("e.tsv")));
    }

    #[test]
    fn bad_settings_are_usage_errors() {
        let bad = |a: StageArgs| matches!(PipelineConfig::from_args(a), Err(CliError::Usage(_)));
        assert!(bad(StageArgs {
            sizes: Some("5,1".into()),
            ..StageArgs::default()
        }));
        assert!(bad(StageArgs {
            decile: Some(0.0),
            ..StageArgs::default()
        }));
        assert!(bad(StageArgs {
            layer: Some("likes".into()),
            ..StageArgs::default()
        }));
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("c.conf");
        fs::write(&conf, "colour = blue\n").unwrap();
        assert!(bad(StageArgs {
            config: Some(conf),
            ..StageArgs::default()
        }));
    }

    #[test]
    fn randomized_stages_need_a_seed() {
        let cfg = PipelineConfig::from_args(StageArgs::default()).unwrap();
        assert!(matches!(
            cfg.require_seed("pipeline"),
            Err(CliError::Usage(_))
        ));
    }
}
