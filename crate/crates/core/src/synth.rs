//! Seeded fixture generators: planted role graphs, reblog cascades along
//! their edges, query logs with a keyword closure fixed by construction,
//! and demographic tables. Every random stream is derived from one root
//! seed, so output is a pure function of the configuration.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal, Pareto};
use rayon::prelude::*;

use crate::demographics::Gender;
use crate::diffusion::ReblogEvent;
use crate::error::{Error, Result};
use crate::expansion::top_fraction_count;
use crate::graph::{GroupLabel, Layer, LayeredGraph, NodeId};
use crate::rng::{derive_seed, stage_rng, StageRng};

const STREAM_GRAPH: u64 = 1;
const STREAM_EVENTS: u64 = 2;
const STREAM_QUERIES: u64 = 3;
const STREAM_DEMO: u64 = 4;

/// Number of blog layers in the query-log closure design.
pub const CLOSURE_LAYERS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoParams {
    pub coverage: f64,
    pub age_min: u32,
    pub age_max: u32,
    pub unknown_gender: f64,
    pub base_male_share: f64,
    pub active_male_share: f64,
    pub active_male_mean: f64,
    pub active_male_sd: f64,
    pub active_female_mean: f64,
    pub active_female_sd: f64,
}

impl Default for DemoParams {
    fn default() -> Self {
        DemoParams {
            coverage: 0.6,
            age_min: 13,
            age_max: 70,
            unknown_gender: 0.05,
            base_male_share: 0.5,
            active_male_share: 0.6,
            active_male_mean: 45.0,
            active_male_sd: 6.0,
            active_female_mean: 24.0,
            active_female_sd: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Group sizes in `GroupLabel::ALL` order.
    pub sizes: [usize; 5],
    /// Edge probability from a member of the row group to one of the column
    /// group, per layer.
    pub follow_p: [[f64; 5]; 5],
    pub reblog_p: [[f64; 5]; 5],
    pub posts_per_producer: usize,
    /// `depth_probs[d]` is the chance that a post's cascade stops at depth `d`.
    pub depth_probs: Vec<f64>,
    /// Chance that a reblogger of a holder picks the post up.
    pub reblog_prob: f64,
    /// Posts authored by non-producers, reblogged one hop.
    pub background_posts: usize,
    pub query_outer_blogs: usize,
    pub query_decoys: usize,
    pub neutral_pool: usize,
    pub demo: DemoParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            sizes: [60, 40, 40, 30, 600],
            follow_p: [
                [0.15, 0.01, 0.01, 0.005, 0.001],
                [0.01, 0.15, 0.005, 0.01, 0.001],
                [0.06, 0.01, 0.10, 0.005, 0.002],
                [0.01, 0.06, 0.005, 0.10, 0.002],
                [0.004, 0.004, 0.015, 0.015, 0.006],
            ],
            reblog_p: [
                [0.10, 0.005, 0.005, 0.002, 0.0005],
                [0.005, 0.10, 0.002, 0.005, 0.0005],
                [0.05, 0.005, 0.06, 0.002, 0.001],
                [0.005, 0.05, 0.002, 0.06, 0.001],
                [0.003, 0.003, 0.012, 0.012, 0.004],
            ],
            posts_per_producer: 3,
            depth_probs: vec![0.1, 0.3, 0.3, 0.3],
            reblog_prob: 0.3,
            background_posts: 300,
            query_outer_blogs: 20,
            query_decoys: 5,
            neutral_pool: 40,
            demo: DemoParams::default(),
        }
    }
}

fn group_index(code: &str) -> Result<usize> {
    let g: GroupLabel = code.parse()?;
    Ok(GroupLabel::ALL.iter().position(|&x| x == g).unwrap())
}

fn parse_prob(key: &str, v: &str) -> Result<f64> {
    let p: f64 = v
        .parse()
        .map_err(|_| Error::InvalidInput(format!("{key}: `{v}` is not a number")))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "{key}: probability {p} outside [0,1]"
        )));
    }
    Ok(p)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidInput(format!("{key}: bad value `{v}`")))
}

impl SynthConfig {
    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SynthConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        match parts[..] {
            ["seed"] => self.seed = parse_num(key, v)?,
            ["size", g] => self.sizes[group_index(g)?] = parse_num(key, v)?,
            ["follow", a, b] => {
                self.follow_p[group_index(a)?][group_index(b)?] = parse_prob(key, v)?
            }
            ["reblog", a, b] => {
                self.reblog_p[group_index(a)?][group_index(b)?] = parse_prob(key, v)?
            }
            ["posts_per_producer"] => self.posts_per_producer = parse_num(key, v)?,
            ["depth_probs"] => {
                self.depth_probs = v
                    .split(',')
                    .map(|x| parse_prob(key, x.trim()))
                    .collect::<Result<_>>()?
            }
            ["reblog_prob"] => self.reblog_prob = parse_prob(key, v)?,
            ["background_posts"] => self.background_posts = parse_num(key, v)?,
            ["query", "outer_blogs"] => self.query_outer_blogs = parse_num(key, v)?,
            ["query", "decoys"] => self.query_decoys = parse_num(key, v)?,
            ["query", "neutral_pool"] => self.neutral_pool = parse_num(key, v)?,
            ["demo", "coverage"] => self.demo.coverage = parse_prob(key, v)?,
            ["demo", "age_min"] => self.demo.age_min = parse_num(key, v)?,
            ["demo", "age_max"] => self.demo.age_max = parse_num(key, v)?,
            ["demo", "unknown_gender"] => self.demo.unknown_gender = parse_prob(key, v)?,
            ["demo", "base_male_share"] => self.demo.base_male_share = parse_prob(key, v)?,
            ["demo", "active_male_share"] => self.demo.active_male_share = parse_prob(key, v)?,
            ["demo", "active_male_mean"] => self.demo.active_male_mean = parse_num(key, v)?,
            ["demo", "active_male_sd"] => self.demo.active_male_sd = parse_num(key, v)?,
            ["demo", "active_female_mean"] => self.demo.active_female_mean = parse_num(key, v)?,
            ["demo", "active_female_sd"] => self.demo.active_female_sd = parse_num(key, v)?,
            _ => return Err(Error::InvalidInput(format!("unknown synth key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth_probs.is_empty() || self.depth_probs.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidInput(
                "depth_probs needs a positive entry".into(),
            ));
        }
        let d = &self.demo;
        if d.age_min == 0 || d.age_min > d.age_max || d.age_max >= 120 {
            return Err(Error::InvalidInput(
                "demo ages must satisfy 0 < min <= max < 120".into(),
            ));
        }
        if !(d.active_male_sd > 0.0 && d.active_female_sd > 0.0) {
            return Err(Error::InvalidInput(
                "demo standard deviations must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text form; parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = &self.demo;
        writeln!(s, "seed = {}", self.seed).unwrap();
        for (g, n) in GroupLabel::ALL.iter().zip(self.sizes) {
            writeln!(s, "size.{} = {n}", g.code()).unwrap();
        }
        for (name, m) in [("follow", &self.follow_p), ("reblog", &self.reblog_p)] {
            for (a, row) in GroupLabel::ALL.iter().zip(m) {
                for (b, p) in GroupLabel::ALL.iter().zip(row) {
                    writeln!(s, "{name}.{}.{} = {p}", a.code(), b.code()).unwrap();
                }
            }
        }
        let depth: Vec<String> = self.depth_probs.iter().map(|p| p.to_string()).collect();
        writeln!(s, "posts_per_producer = {}", self.posts_per_producer).unwrap();
        writeln!(s, "depth_probs = {}", depth.join(",")).unwrap();
        writeln!(s, "reblog_prob = {}", self.reblog_prob).unwrap();
        writeln!(s, "background_posts = {}", self.background_posts).unwrap();
        writeln!(s, "query.outer_blogs = {}", self.query_outer_blogs).unwrap();
        writeln!(s, "query.decoys = {}", self.query_decoys).unwrap();
        writeln!(s, "query.neutral_pool = {}", self.neutral_pool).unwrap();
        writeln!(s, "demo.coverage = {}", d.coverage).unwrap();
        writeln!(s, "demo.age_min = {}", d.age_min).unwrap();
        writeln!(s, "demo.age_max = {}", d.age_max).unwrap();
        writeln!(s, "demo.unknown_gender = {}", d.unknown_gender).unwrap();
        writeln!(s, "demo.base_male_share = {}", d.base_male_share).unwrap();
        writeln!(s, "demo.active_male_share = {}", d.active_male_share).unwrap();
        writeln!(s, "demo.active_male_mean = {}", d.active_male_mean).unwrap();
        writeln!(s, "demo.active_male_sd = {}", d.active_male_sd).unwrap();
        writeln!(s, "demo.active_female_mean = {}", d.active_female_mean).unwrap();
        writeln!(s, "demo.active_female_sd = {}", d.active_female_sd).unwrap();
        s
    }
}

/// Node id of the `i`-th member of a group, e.g. `b2-00007`.
pub fn node_name(g: GroupLabel, i: usize) -> String {
    format!("{}-{i:05}", g.code().to_ascii_lowercase())
}

/// Bernoulli(p) positions in `0..len`, drawn by geometric skips.
fn bernoulli_positions(len: u64, p: f64, rng: &mut StageRng) -> Vec<u64> {
    if p <= 0.0 || len == 0 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (0..len).collect();
    }
    let skip = Geometric::new(p).unwrap();
    let mut out = Vec::new();
    let mut pos = skip.sample(rng);
    while pos < len {
        out.push(pos);
        pos = pos.saturating_add(1).saturating_add(skip.sample(rng));
    }
    out
}

/// Stochastic block graph on both layers plus the planted role of every node.
/// Nodes are numbered group by group in `GroupLabel::ALL` order.
pub fn planted_graph(cfg: &SynthConfig) -> (LayeredGraph, Vec<GroupLabel>) {
    let mut ids = Vec::new();
    let mut roles = Vec::new();
    let mut start = [0usize; 5];
    for (gi, &g) in GroupLabel::ALL.iter().enumerate() {
        start[gi] = ids.len();
        for i in 0..cfg.sizes[gi] {
            ids.push(node_name(g, i));
            roles.push(g);
        }
    }
    let blocks: Vec<(usize, usize, usize)> = (0..2)
        .flat_map(|l| (0..5).flat_map(move |a| (0..5).map(move |b| (l, a, b))))
        .collect();
    let root = derive_seed(cfg.seed, STREAM_GRAPH);
    let drawn: Vec<Vec<(NodeId, NodeId, u64)>> = blocks
        .par_iter()
        .map(|&(l, a, b)| {
            let p = if l == 0 {
                cfg.follow_p[a][b]
            } else {
                cfg.reblog_p[a][b]
            };
            let (na, nb) = (cfg.sizes[a] as u64, cfg.sizes[b] as u64);
            let mut rng = stage_rng(root, (l * 25 + a * 5 + b) as u64);
            bernoulli_positions(na * nb, p, &mut rng)
                .into_iter()
                .filter_map(|pos| {
                    let u = (start[a] as u64 + pos / nb) as NodeId;
                    let v = (start[b] as u64 + pos % nb) as NodeId;
                    (u != v).then(|| (u, v, if l == 0 { 1 } else { rng.random_range(1..=5) }))
                })
                .collect()
        })
        .collect();
    let mut follow = Vec::new();
    let mut reblog = Vec::new();
    for (&(l, _, _), edges) in blocks.iter().zip(drawn) {
        if l == 0 {
            follow.extend(edges.into_iter().map(|(u, v, _)| (u, v)));
        } else {
            reblog.extend(edges);
        }
    }
    let mut g = LayeredGraph::from_parts(ids, follow, reblog);
    for (v, &r) in roles.iter().enumerate() {
        g.set_label(v as NodeId, r);
    }
    (g, roles)
}

fn sample_depth(probs: &[f64], rng: &mut StageRng) -> usize {
    let total: f64 = probs.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (d, &p) in probs.iter().enumerate() {
        if x < p {
            return d;
        }
        x -= p;
    }
    probs.len() - 1
}

/// Breadth-first cascade from `author`: each holder's rebloggers take the
/// post independently with `prob`, up to `depth` hops.
fn cascade(
    g: &LayeredGraph,
    author: NodeId,
    post_id: &str,
    depth: usize,
    prob: f64,
    t0: u64,
    rng: &mut StageRng,
) -> Vec<ReblogEvent> {
    let rebloggers = g.inn(Layer::Reblog);
    let mut holders: HashSet<NodeId> = HashSet::from([author]);
    let mut frontier = vec![author];
    let mut events = Vec::new();
    for level in 1..=depth as u64 {
        let mut next = Vec::new();
        for &src in &frontier {
            for &actor in rebloggers.neighbors(src) {
                if holders.contains(&actor) || !rng.random_bool(prob) {
                    continue;
                }
                holders.insert(actor);
                next.push(actor);
                events.push(ReblogEvent {
                    actor,
                    source: src,
                    post_id: post_id.to_string(),
                    timestamp: t0 + level * 10 + rng.random_range(0..10),
                });
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    events
}

/// Reblog events: `posts_per_producer` cascades per producer with depth
/// drawn from `depth_probs`, then one-hop background cascades of posts by
/// random non-producers. Post ids of the latter start with `bg`.
pub fn synth_events(cfg: &SynthConfig, g: &LayeredGraph, roles: &[GroupLabel]) -> Vec<ReblogEvent> {
    let root = derive_seed(cfg.seed, STREAM_EVENTS);
    let producers: Vec<NodeId> = (0..g.num_nodes() as NodeId)
        .filter(|&v| roles[v as usize].is_producer())
        .collect();
    let others: Vec<NodeId> = (0..g.num_nodes() as NodeId)
        .filter(|&v| !roles[v as usize].is_producer())
        .collect();
    let mut posts: Vec<(NodeId, String, bool)> = Vec::new();
    for &p in &producers {
        for k in 0..cfg.posts_per_producer {
            posts.push((p, format!("{}-post{k}", g.id(p)), true));
        }
    }
    if !others.is_empty() {
        let mut pick = stage_rng(root, u64::MAX);
        for k in 0..cfg.background_posts {
            let author = others[pick.random_range(0..others.len())];
            posts.push((author, format!("bg{k:05}"), false));
        }
    }
    posts
        .par_iter()
        .enumerate()
        .map(|(i, (author, post_id, deviant))| {
            let mut rng = stage_rng(root, i as u64);
            let depth = if *deviant {
                sample_depth(&cfg.depth_probs, &mut rng)
            } else {
                1
            };
            cascade(
                g,
                *author,
                post_id,
                depth,
                cfg.reblog_prob,
                i as u64 * 1000,
                &mut rng,
            )
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Letters-only word for an index; distinct indices give distinct words.
pub fn word(mut i: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut s = String::new();
    let mut syllables = 0;
    while syllables < 3 || i > 0 {
        let k = i % base;
        i /= base;
        s.push(CONSONANTS[k / VOWELS.len()] as char);
        s.push(VOWELS[k % VOWELS.len()] as char);
        syllables += 1;
    }
    s
}

/// Raw surface form of a normalized query: mixed case, platform tokens and
/// digits that normalization strips again.
fn decorate(q: &str, rng: &mut StageRng) -> String {
    let mut toks: Vec<String> = q
        .split(' ')
        .map(|t| match rng.random_range(0..4) {
            0 => t.to_uppercase(),
            1 => {
                let mut c = t.chars();
                c.next()
                    .map(|f| f.to_uppercase().chain(c).collect())
                    .unwrap_or_default()
            }
            _ => t.to_string(),
        })
        .collect();
    if rng.random_bool(0.2) {
        let i = rng.random_range(0..toks.len());
        toks[i].push_str(&rng.random_range(1..100).to_string());
    }
    if rng.random_bool(0.4) {
        let platform = ["tumblr", "Tumblr", "TMBLR", "tumbler"][rng.random_range(0..4)];
        let at = rng.random_range(0..=toks.len());
        toks.insert(at, platform.to_string());
    }
    if rng.random_bool(0.2) {
        toks.push(format!("{}", rng.random_range(2008..2016)));
    }
    toks.join(if rng.random_bool(0.1) { "  " } else { " " })
}

fn blog_url(blog: &str, rng: &mut StageRng) -> String {
    let post: u32 = rng.random_range(1..1_000_000);
    match rng.random_range(0..4) {
        0 => format!("https://{blog}.tumblr.com/post/{post}"),
        1 => format!("{blog}.tumblr.com/post/{post}"),
        2 => format!("http://{}.Tumblr.com/", blog.to_uppercase()),
        _ => format!("http://{blog}.tumblr.com/post/{post}"),
    }
}

/// Cumulative blog counts per closure layer for `d` deviant blogs. Each
/// cumulative count must lift the top-decile size above the previous one
/// so the expansion's next picks land in the newest layer.
pub fn closure_layer_sizes(d: usize, decile: f64) -> Result<Vec<usize>> {
    const CUMULATIVE: [f64; CLOSURE_LAYERS] = [0.025, 0.075, 0.175, 0.415, 1.0];
    let mut cum: Vec<usize> = Vec::with_capacity(CLOSURE_LAYERS);
    for (j, &f) in CUMULATIVE.iter().enumerate() {
        let mut b = ((f * d as f64).round() as usize).max(1);
        if let Some(&prev) = cum.last() {
            b = b.max(prev + 1);
            if j + 1 < CLOSURE_LAYERS {
                while top_fraction_count(b, decile) <= top_fraction_count(prev, decile) {
                    b += 1;
                }
            }
        }
        cum.push(b);
    }
    if cum[CLOSURE_LAYERS - 1] != d || cum[CLOSURE_LAYERS - 2] >= d {
        return Err(Error::InvalidInput(format!(
            "{d} deviant blogs are too few for a {CLOSURE_LAYERS}-layer closure fixture"
        )));
    }
    Ok(cum
        .iter()
        .enumerate()
        .map(|(j, &c)| c - if j == 0 { 0 } else { cum[j - 1] })
        .collect())
}

/// Query log with a known keyword closure, plus its dictionaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryFixture {
    /// Raw `timestamp<TAB>query<TAB>url<TAB>region` lines.
    pub log_lines: Vec<String>,
    pub exact: Vec<String>,
    pub containment: Vec<String>,
    /// Normalized seed keywords.
    pub seed_keywords: Vec<String>,
    /// Blog ids per closure layer.
    pub layers: Vec<Vec<String>>,
    /// Two normalized gate queries per layer.
    pub gates: Vec<[String; 2]>,
}

impl QueryFixture {
    pub fn deviant_blogs(&self) -> BTreeSet<String> {
        self.layers.iter().flatten().cloned().collect()
    }

    pub fn log_text(&self) -> String {
        lines_text(&self.log_lines)
    }
}

fn lines_text<S: AsRef<str>>(lines: &[S]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(l.as_ref());
        s.push('\n');
    }
    s
}

/// Build the closure query log.
///
/// Deviant blogs are split into layers. A layer-`j` blog gets ten clicks
/// on each of its layer's two gate queries, one click on each gate of layer
/// `j+1`, and `4 * (layers - j)` single-click queries of its own. Seeded
/// with layer 0's gates, each expansion step picks blogs of the newest layer,
/// whose next-layer gate clicks pull in the following layer. `outer` blogs
/// only see a shared pool of neutral queries; `decoys` get one gate click,
/// short of the hit thresholds.
pub fn query_fixture(
    seed: u64,
    deviant: &[String],
    outer: &[String],
    decoys: &[String],
    neutral_pool: usize,
) -> Result<QueryFixture> {
    let mut rng = stage_rng(seed, STREAM_QUERIES);
    let sizes = closure_layer_sizes(deviant.len(), 0.10)?;
    let mut shuffled = deviant.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut rng);
    let mut layers = Vec::new();
    let mut at = 0;
    for s in &sizes {
        let mut layer = shuffled[at..at + s].to_vec();
        layer.sort();
        layers.push(layer);
        at += s;
    }

    let mut next_word = 0usize;
    let mut phrase = || {
        next_word += 2;
        format!("{} {}", word(next_word - 2), word(next_word - 1))
    };
    let gates: Vec<[String; 2]> = (0..CLOSURE_LAYERS).map(|_| [phrase(), phrase()]).collect();
    let pool: Vec<String> = (0..neutral_pool.max(1)).map(|_| phrase()).collect();

    let mut hits: Vec<(String, String)> = Vec::new();
    for (j, layer) in layers.iter().enumerate() {
        for blog in layer {
            for gq in &gates[j] {
                for _ in 0..10 {
                    hits.push((gq.clone(), blog.clone()));
                }
            }
            if j + 1 < CLOSURE_LAYERS {
                for gq in &gates[j + 1] {
                    hits.push((gq.clone(), blog.clone()));
                }
            }
            for _ in 0..4 * (CLOSURE_LAYERS - j) {
                hits.push((phrase(), blog.clone()));
            }
        }
    }
    for blog in outer {
        for _ in 0..3 {
            let q = pool[rng.random_range(0..pool.len())].clone();
            for _ in 0..rng.random_range(1..=3) {
                hits.push((q.clone(), blog.clone()));
            }
        }
    }
    for blog in decoys {
        let gate = gates[rng.random_range(0..CLOSURE_LAYERS)][rng.random_range(0..2)].clone();
        hits.push((gate, blog.clone()));
        hits.push((pool[rng.random_range(0..pool.len())].clone(), blog.clone()));
    }
    hits.shuffle(&mut rng);

    let mut log_lines = Vec::with_capacity(hits.len() + 4);
    let mut ts = 1_370_000_000u64;
    for (q, blog) in &hits {
        ts += rng.random_range(1..30);
        let region = if rng.random_bool(0.9) { "us" } else { "uk" };
        log_lines.push(format!(
            "{ts}\t{}\t{}\t{region}",
            decorate(q, &mut rng),
            blog_url(blog, &mut rng)
        ));
    }
    // Lines normalization drops: off-platform and platform-only queries.
    log_lines.push(format!(
        "{}\t{}\thttp://www.example.com/page\tus",
        ts + 1,
        gates[0][0]
    ));
    log_lines.push(format!(
        "{}\tTumblr 2014\thttp://{}.tumblr.com/\tus",
        ts + 2,
        layers[0][0]
    ));

    let exact = gates[0].iter().map(|g| g.to_uppercase()).collect();
    let containment = vec![gates[0][0].split(' ').next().unwrap().to_string()];
    let seed_keywords = gates[0].to_vec();
    Ok(QueryFixture {
        log_lines,
        exact,
        containment,
        seed_keywords,
        layers,
        gates,
    })
}

/// Query fixture over a planted graph: deviant blogs are all producers and
/// bridges; outer blogs and decoys come from the outer group.
pub fn synth_query_log(
    cfg: &SynthConfig,
    g: &LayeredGraph,
    roles: &[GroupLabel],
) -> Result<QueryFixture> {
    let deviant: Vec<String> = (0..g.num_nodes())
        .filter(|&v| roles[v] != GroupLabel::Outer)
        .map(|v| g.id(v as NodeId).to_string())
        .collect();
    let mut outer: Vec<String> = (0..g.num_nodes())
        .filter(|&v| roles[v] == GroupLabel::Outer)
        .map(|v| g.id(v as NodeId).to_string())
        .collect();
    outer.shuffle(&mut stage_rng(cfg.seed, STREAM_QUERIES + 100));
    let n_outer = cfg.query_outer_blogs.min(outer.len());
    let n_decoy = cfg.query_decoys.min(outer.len() - n_outer);
    query_fixture(
        cfg.seed,
        &deviant,
        &outer[..n_outer],
        &outer[n_outer..n_outer + n_decoy],
        cfg.neutral_pool,
    )
}

/// Demographic records for `active.len()` nodes. Covered active consumers
/// draw their age from a gender-specific normal; everyone else is uniform
/// over the age range.
pub fn sample_demographics(
    active: &[bool],
    p: &DemoParams,
    seed: u64,
) -> Vec<(NodeId, u32, Gender)> {
    let mut rng = stage_rng(seed, STREAM_DEMO);
    let male_age = Normal::new(p.active_male_mean, p.active_male_sd).unwrap();
    let female_age = Normal::new(p.active_female_mean, p.active_female_sd).unwrap();
    let mut out = Vec::new();
    for (v, &is_active) in active.iter().enumerate() {
        if !rng.random_bool(p.coverage) {
            continue;
        }
        let gender = if rng.random_bool(p.unknown_gender) {
            Gender::Unknown
        } else if rng.random_bool(if is_active {
            p.active_male_share
        } else {
            p.base_male_share
        }) {
            Gender::Male
        } else {
            Gender::Female
        };
        let age = match (is_active, gender) {
            (true, Gender::Male) => male_age.sample(&mut rng).round(),
            (true, Gender::Female) => female_age.sample(&mut rng).round(),
            _ => rng.random_range(p.age_min..=p.age_max) as f64,
        };
        let age = age.clamp(p.age_min as f64, p.age_max as f64) as u32;
        out.push((v as NodeId, age, gender));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub config: SynthConfig,
    pub graph: LayeredGraph,
    pub roles: Vec<GroupLabel>,
    pub events: Vec<ReblogEvent>,
    pub queries: QueryFixture,
    pub demographics: Vec<(NodeId, u32, Gender)>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let (graph, roles) = planted_graph(cfg);
    let events = synth_events(cfg, &graph, &roles);
    let queries = synth_query_log(cfg, &graph, &roles)?;
    let mut active = vec![false; graph.num_nodes()];
    for e in events.iter().filter(|e| !e.post_id.starts_with("bg")) {
        if !roles[e.actor as usize].is_producer() {
            active[e.actor as usize] = true;
        }
    }
    let demographics = sample_demographics(&active, &cfg.demo, cfg.seed);
    Ok(SynthOutput {
        config: cfg.clone(),
        graph,
        roles,
        events,
        queries,
        demographics,
    })
}

impl SynthOutput {
    pub fn edges_tsv(&self) -> String {
        let g = &self.graph;
        let mut s = String::new();
        for layer in Layer::ALL {
            for (u, v, w) in g.edges(layer) {
                writeln!(s, "{}\t{}\t{w}\t{}", g.id(u), g.id(v), layer.code()).unwrap();
            }
        }
        s
    }

    pub fn labels_csv(&self) -> String {
        let mut s = String::from("node,group\n");
        for (v, r) in self.roles.iter().enumerate() {
            writeln!(s, "{},{}", self.graph.id(v as NodeId), r.code()).unwrap();
        }
        s
    }

    pub fn events_tsv(&self) -> String {
        let g = &self.graph;
        let mut s = String::new();
        for e in &self.events {
            writeln!(
                s,
                "{}\t{}\t{}\t{}",
                g.id(e.actor),
                g.id(e.source),
                e.post_id,
                e.timestamp
            )
            .unwrap();
        }
        s
    }

    pub fn demographics_csv(&self) -> String {
        let mut s = String::from("node,age,gender\n");
        for (v, age, gender) in &self.demographics {
            writeln!(s, "{},{age},{gender}", self.graph.id(*v)).unwrap();
        }
        s
    }

    /// Write every artifact plus a pipeline config pointing at them.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let q = &self.queries;
        let pipeline_conf = format!(
            "query_log = query_log.tsv\nexact_dict = exact.txt\ncontain_dict = contain.txt\n\
             seed_keywords = seed_keywords.txt\nedges = edges.tsv\nlabels = labels.csv\n\
             events = events.tsv\ndemographics = demographics.csv\nseed = {}\nsizes = {}\n",
            self.config.seed,
            removal_sizes(self.graph.num_nodes())
        );
        let files: Vec<(&str, String)> = vec![
            ("synth.conf", self.config.to_text()),
            ("edges.tsv", self.edges_tsv()),
            ("labels.csv", self.labels_csv()),
            ("events.tsv", self.events_tsv()),
            ("query_log.tsv", q.log_text()),
            ("exact.txt", lines_text(&q.exact)),
            ("contain.txt", lines_text(&q.containment)),
            ("seed_keywords.txt", lines_text(&q.seed_keywords)),
            ("demographics.csv", self.demographics_csv()),
            ("pipeline.conf", pipeline_conf),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Reblog graph whose out-degrees follow a power law with the given
/// exponent. Targets are drawn in proportion to their own out-degree, so
/// busy nodes are also the most observed. Returns the graph and each node's
/// reblog count (its out-degree).
pub fn power_law_reblog_graph(n: usize, exponent: f64, seed: u64) -> (LayeredGraph, Vec<u64>) {
    let mut rng = stage_rng(seed, 0x504c);
    let pareto = Pareto::new(1.0, exponent - 1.0).unwrap();
    let cap = n.saturating_sub(1).max(1);
    let degree: Vec<usize> = (0..n)
        .map(|_| (pareto.sample(&mut rng).floor() as usize).clamp(1, cap))
        .collect();
    let stubs: Vec<NodeId> = degree
        .iter()
        .enumerate()
        .flat_map(|(v, &k)| std::iter::repeat_n(v as NodeId, k))
        .collect();
    let mut edges = Vec::new();
    for (v, &k) in degree.iter().enumerate() {
        let v = v as NodeId;
        let mut chosen: BTreeSet<NodeId> = BTreeSet::new();
        let mut tries = 0;
        while chosen.len() < k && tries < 20 * k {
            tries += 1;
            let u = stubs[rng.random_range(0..stubs.len())];
            if u != v {
                chosen.insert(u);
            }
        }
        edges.extend(chosen.into_iter().map(|u| (v, u, 1)));
    }
    let g = LayeredGraph::from_parts((0..n).map(|i| format!("u{i:05}")).collect(), vec![], edges);
    let counts = (0..n as NodeId)
        .map(|v| g.out(Layer::Reblog).degree(v) as u64)
        .collect();
    (g, counts)
}

/// Planted-hub diffusion fixture.
#[derive(Debug, Clone)]
pub struct HubFixture {
    pub graph: LayeredGraph,
    pub roles: Vec<GroupLabel>,
    pub events: Vec<ReblogEvent>,
}

/// A few producer hubs each spread through relays to many leaves; small
/// producers reach two or three leaves each; outer celebrities draw more
/// rebloggers than any hub but carry no deviant posts. Reblog in-degree
/// therefore ranks the celebrities first while cascade reach ranks the hubs.
pub fn planted_hub_fixture(seed: u64) -> HubFixture {
    let mut rng = stage_rng(seed, 0x4855_4221);
    let mut ids: Vec<String> = Vec::new();
    let mut roles = Vec::new();
    let mut add = |name: String, role: GroupLabel, ids: &mut Vec<String>| {
        ids.push(name);
        roles.push(role);
        (ids.len() - 1) as NodeId
    };
    let mut reblog = Vec::new();
    let mut events = Vec::new();
    let mut post = 0u64;
    let hubs = 5;
    for h in 0..hubs {
        let hub = add(format!("hub{h}"), GroupLabel::Producer1, &mut ids);
        let relays = rng.random_range(8..=12);
        let mut chain = Vec::new();
        for r in 0..relays {
            let relay = add(format!("hub{h}-relay{r}"), GroupLabel::Outer, &mut ids);
            reblog.push((relay, hub, 1));
            chain.push((relay, hub, 1u64));
            for l in 0..rng.random_range(6..=10) {
                let leaf = add(
                    format!("hub{h}-relay{r}-leaf{l}"),
                    GroupLabel::Outer,
                    &mut ids,
                );
                reblog.push((leaf, relay, 1));
                chain.push((leaf, relay, 2));
            }
        }
        for (actor, source, depth) in chain {
            events.push(ReblogEvent {
                actor,
                source,
                post_id: format!("hub{h}-post"),
                timestamp: post * 1000 + depth * 10,
            });
        }
        post += 1;
    }
    for s in 0..20 {
        let p = add(format!("small{s}"), GroupLabel::Producer2, &mut ids);
        for l in 0..rng.random_range(2..=3) {
            let leaf = add(format!("small{s}-leaf{l}"), GroupLabel::Outer, &mut ids);
            reblog.push((leaf, p, 1));
            events.push(ReblogEvent {
                actor: leaf,
                source: p,
                post_id: format!("small{s}-post"),
                timestamp: post * 1000 + 10,
            });
        }
        post += 1;
    }
    for c in 0..10 {
        let celeb = add(format!("celeb{c}"), GroupLabel::Outer, &mut ids);
        for f in 0..rng.random_range(30..=40) {
            let fan = add(format!("celeb{c}-fan{f}"), GroupLabel::Outer, &mut ids);
            reblog.push((fan, celeb, 1));
        }
    }
    let mut graph = LayeredGraph::from_parts(ids, vec![], reblog);
    for (v, &r) in roles.iter().enumerate() {
        graph.set_label(v as NodeId, r);
    }
    HubFixture {
        graph,
        roles,
        events,
    }
}

/// Removal sizes scaled to the fixture, as a comma list.
fn removal_sizes(n: usize) -> String {
    let mut v = vec![0, n / 100, n / 50, n / 20, n / 10, n / 4];
    v.dedup();
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}
