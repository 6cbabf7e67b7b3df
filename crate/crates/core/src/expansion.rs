//! Iterative keyword expansion: keywords select blogs, the blogs most
//! dominated by deviant queries contribute their queries back as keywords,
//! until both sets stop growing.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BlogHitStats, HitThresholds, QueryLog};

/// How the share of deviant hits on a blog is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioMode {
    #[default]
    ClickVolume,
    UniqueQueries,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionParams {
    pub decile: f64,
    pub thresholds: HitThresholds,
    pub ratio: RatioMode,
    pub max_iter: usize,
    pub eps: f64,
}

impl Default for ExpansionParams {
    fn default() -> Self {
        ExpansionParams {
            decile: 0.10,
            thresholds: HitThresholds::default(),
            ratio: RatioMode::ClickVolume,
            max_iter: 20,
            eps: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedState {
    pub iteration: usize,
    pub keywords: BTreeSet<String>,
    pub blogs: BTreeSet<String>,
    /// Every distinct query hitting a blog in `blogs`.
    pub queries_hitting: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub keywords: usize,
    pub blogs: usize,
    pub queries: usize,
}

impl From<&SeedState> for TrajectoryPoint {
    fn from(s: &SeedState) -> Self {
        TrajectoryPoint {
            iteration: s.iteration,
            keywords: s.keywords.len(),
            blogs: s.blogs.len(),
            queries: s.queries_hitting.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub state: SeedState,
    /// Sizes before the first expansion.
    pub initial: TrajectoryPoint,
    /// Sizes after each expansion step, starting at iteration 1.
    pub trajectory: Vec<TrajectoryPoint>,
    pub converged: bool,
}

/// Share of a blog's clicks coming from deviant queries.
pub fn deviant_ratio(stats: &BlogHitStats) -> Result<f64> {
    deviant_ratio_with(stats, RatioMode::ClickVolume)
}

pub fn deviant_ratio_with(stats: &BlogHitStats, mode: RatioMode) -> Result<f64> {
    let (num, den) = ratio_parts(stats, mode);
    if den == 0 {
        return Err(Error::ZeroClicks);
    }
    Ok(num as f64 / den as f64)
}

fn ratio_parts(stats: &BlogHitStats, mode: RatioMode) -> (u64, u64) {
    match mode {
        RatioMode::ClickVolume => (stats.deviant_clicks, stats.total_clicks),
        RatioMode::UniqueQueries => (stats.deviant_unique_queries, stats.unique_queries),
    }
}

/// Number of blogs selected from `n` for a given top fraction: the ceiling,
/// kept within `1..=n`.
pub fn top_fraction_count(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // 0.1 * 30 is 3.0000000000000004 in binary floating point
    let raw = (fraction * n as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Blogs retained for a keyword set, plus the queries hitting them.
fn select_blogs(
    log: &QueryLog,
    keywords: &BTreeSet<String>,
    thresholds: &HitThresholds,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let mask = log.keyword_mask(keywords.iter());
    let mut touched = BTreeSet::new();
    for (q, &on) in mask.iter().enumerate() {
        if on {
            touched.extend(log.blogs_hit_by(q as u32).iter().copied());
        }
    }
    let mut blogs = BTreeSet::new();
    let mut queries = BTreeSet::new();
    for b in touched {
        if thresholds.keeps(&log.blog_stats(b, &mask)) {
            blogs.insert(log.blog(b).to_string());
            queries.extend(
                log.hits_of_blog(b)
                    .iter()
                    .map(|&(q, _)| log.query(q).to_string()),
            );
        }
    }
    (blogs, queries)
}

/// State for a seed keyword set before any expansion.
pub fn initial_state(
    seed: &BTreeSet<String>,
    log: &QueryLog,
    params: &ExpansionParams,
) -> Result<SeedState> {
    if seed.is_empty() {
        return Err(Error::InvalidInput("empty seed keyword set".into()));
    }
    let (blogs, queries_hitting) = select_blogs(log, seed, &params.thresholds);
    Ok(SeedState {
        iteration: 0,
        keywords: seed.clone(),
        blogs,
        queries_hitting,
    })
}

/// One expansion step.
pub fn expand_keywords(
    state: &SeedState,
    log: &QueryLog,
    params: &ExpansionParams,
) -> Result<SeedState> {
    if state.blogs.is_empty() {
        return Err(Error::NothingToExpand);
    }
    let mask = log.keyword_mask(state.keywords.iter());
    let mut ranked: Vec<(u32, u64, u64)> = Vec::with_capacity(state.blogs.len());
    for blog in &state.blogs {
        let id = log
            .blog_id(blog)
            .ok_or_else(|| Error::UnknownNode(blog.clone()))?;
        let (num, den) = ratio_parts(&log.blog_stats(id, &mask), params.ratio);
        if den == 0 {
            return Err(Error::ZeroClicks);
        }
        ranked.push((id, num, den));
    }
    // blog ids are assigned in string order, so the id is the tie-break
    ranked.sort_by(|a, b| compare_ratio_desc((a.1, a.2), (b.1, b.2)).then(a.0.cmp(&b.0)));
    let take = top_fraction_count(ranked.len(), params.decile);

    let mut keywords = state.keywords.clone();
    for &(id, _, _) in &ranked[..take] {
        keywords.extend(
            log.hits_of_blog(id)
                .iter()
                .map(|&(q, _)| log.query(q).to_string()),
        );
    }
    let (blogs, queries_hitting) = select_blogs(log, &keywords, &params.thresholds);
    Ok(SeedState {
        iteration: state.iteration + 1,
        keywords,
        blogs,
        queries_hitting,
    })
}

fn compare_ratio_desc(a: (u64, u64), b: (u64, u64)) -> Ordering {
    let lhs = a.0 as u128 * b.1 as u128;
    let rhs = b.0 as u128 * a.1 as u128;
    rhs.cmp(&lhs)
}

fn relative_growth(before: usize, after: usize) -> f64 {
    if after == before {
        return 0.0;
    }
    (after as f64 - before as f64) / before.max(1) as f64
}

/// Run expansion steps until both the keyword and the blog set grow by less
/// than `eps` (relative) in one step, or `max_iter` steps have run.
pub fn extract_deviant_graph(
    seed: &BTreeSet<String>,
    log: &QueryLog,
    params: &ExpansionParams,
) -> Result<Extraction> {
    let mut state = initial_state(seed, log, params)?;
    let initial = TrajectoryPoint::from(&state);
    let mut trajectory = Vec::new();
    let mut converged = false;
    while trajectory.len() < params.max_iter {
        let next = expand_keywords(&state, log, params)?;
        debug_assert!(state.keywords.is_subset(&next.keywords));
        let gk = relative_growth(state.keywords.len(), next.keywords.len());
        let gb = relative_growth(state.blogs.len(), next.blogs.len());
        trajectory.push(TrajectoryPoint::from(&next));
        log::info!(
            "expansion step {}: {} keywords, {} blogs, {} queries",
            next.iteration,
            next.keywords.len(),
            next.blogs.len(),
            next.queries_hitting.len()
        );
        state = next;
        let settled = |g: f64| g == 0.0 || g < params.eps;
        if settled(gk) && settled(gb) {
            converged = true;
            break;
        }
    }
    Ok(Extraction {
        state,
        initial,
        trajectory,
        converged,
    })
}

/// Trajectory as `iteration,keywords,blogs,queries` CSV, including the
/// initial state as iteration 0.
pub fn trajectory_csv(ex: &Extraction) -> String {
    let mut out = String::from("iteration,keywords,blogs,queries\n");
    for p in std::iter::once(&ex.initial).chain(&ex.trajectory) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.iteration, p.keywords, p.blogs, p.queries
        ));
    }
    out
}
