//! Query-log parsing, normalization and per-blog hit aggregation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Platform name and the misspellings stripped from queries by default.
pub const DEFAULT_PLATFORM_TOKENS: [&str; 5] = ["tumblr", "tumbler", "tumblrr", "tumlr", "tmblr"];

/// Domain whose sub-hosts identify blogs.
pub const DEFAULT_PLATFORM_DOMAIN: &str = "tumblr.com";

pub fn default_platform_tokens() -> HashSet<String> {
    DEFAULT_PLATFORM_TOKENS
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLogEntry {
    pub timestamp: u64,
    pub query: String,
    pub clicked_url: String,
    pub region: String,
}

impl RawLogEntry {
    /// Parse one `timestamp<TAB>query<TAB>clicked_url<TAB>region` line.
    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let mut cols = line.split('\t');
        let (Some(ts), Some(query), Some(url), Some(region), None) = (
            cols.next(),
            cols.next(),
            cols.next(),
            cols.next(),
            cols.next(),
        ) else {
            return Err("expected 4 tab-separated columns".into());
        };
        let timestamp = ts
            .trim()
            .parse::<u64>()
            .map_err(|e| format!("bad timestamp `{ts}`: {e}"))?;
        let clicked_url = url.trim();
        if clicked_url.is_empty() {
            return Err("empty clicked_url".into());
        }
        Ok(RawLogEntry {
            timestamp,
            query: query.to_string(),
            clicked_url: clicked_url.to_string(),
            region: region.trim().to_string(),
        })
    }
}

/// Lowercase, drop digits, drop platform-name tokens, collapse whitespace.
///
/// Idempotent: digits are removed before tokens are compared, so a token
/// like `tumblr2015` is stripped on the first pass.
pub fn normalize_query(raw: &str, platform_tokens: &HashSet<String>) -> String {
    let lowered: String = raw
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_numeric())
        .collect();
    let mut out = String::with_capacity(lowered.len());
    for tok in lowered.split_whitespace() {
        if platform_tokens.contains(tok) {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// Blog identifier of a clicked URL: the host label right before the
/// platform domain, lowercased. `None` for URLs outside the platform.
pub fn extract_blog_id(clicked_url: &str, platform_domain: &str) -> Option<String> {
    let with_scheme;
    let candidate = if clicked_url.contains("://") {
        clicked_url
    } else {
        with_scheme = format!("http://{clicked_url}");
        &with_scheme
    };
    let parsed = url::Url::parse(candidate).ok()?;
    let host = parsed
        .host_str()?
        .trim_end_matches('.')
        .to_ascii_lowercase();
    let domain = platform_domain.to_ascii_lowercase();
    let prefix = host.strip_suffix(&domain)?.strip_suffix('.')?;
    let label = prefix.rsplit('.').next()?;
    if label.is_empty() || label == "www" {
        return None;
    }
    Some(label.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueryRecord {
    pub normalized_query: String,
    pub blog_id: String,
}

impl QueryRecord {
    /// Normalize a raw entry. Entries outside the platform domain or whose
    /// query normalizes to nothing yield `None`.
    pub fn from_raw(entry: &RawLogEntry, opts: &NormalizeOptions) -> Option<Self> {
        let blog_id = extract_blog_id(&entry.clicked_url, &opts.platform_domain)?;
        let normalized_query = normalize_query(&entry.query, &opts.platform_tokens);
        if normalized_query.is_empty() {
            return None;
        }
        Some(QueryRecord {
            normalized_query,
            blog_id,
        })
    }
}

#[derive(Debug, Clone)]
pub struct NormalizeOptions {
    pub platform_tokens: HashSet<String>,
    pub platform_domain: String,
    /// Keep only entries from this region, when set.
    pub region: Option<String>,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions {
            platform_tokens: default_platform_tokens(),
            platform_domain: DEFAULT_PLATFORM_DOMAIN.to_string(),
            region: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchKind {
    Exact,
    Containment,
    NoMatch,
}

/// Exact-match and containment keyword sets.
#[derive(Debug, Clone, Default)]
pub struct Dictionary {
    exact: HashSet<String>,
    containment: HashSet<String>,
    // token lengths present in `containment`
    containment_lengths: BTreeSet<usize>,
}

impl Dictionary {
    /// Phrases are normalized with the same rules as queries; phrases that
    /// normalize to nothing are dropped.
    pub fn new<I, J, S, T>(exact: I, containment: J, platform_tokens: &HashSet<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let mut dict = Dictionary::default();
        for p in exact {
            let n = normalize_query(p.as_ref(), platform_tokens);
            if !n.is_empty() {
                dict.exact.insert(n);
            }
        }
        for p in containment {
            let n = normalize_query(p.as_ref(), platform_tokens);
            if !n.is_empty() {
                dict.containment_lengths.insert(n.split(' ').count());
                dict.containment.insert(n);
            }
        }
        dict
    }

    pub fn load(
        exact_path: &Path,
        containment_path: &Path,
        platform_tokens: &HashSet<String>,
    ) -> Result<Self> {
        let exact = read_phrases(exact_path)?;
        let containment = read_phrases(containment_path)?;
        Ok(Dictionary::new(exact, containment, platform_tokens))
    }

    pub fn exact(&self) -> &HashSet<String> {
        &self.exact
    }

    pub fn containment(&self) -> &HashSet<String> {
        &self.containment
    }

    /// Classify a normalized query. Exact takes precedence over containment;
    /// containment means the phrase occurs as a contiguous run of whole tokens.
    pub fn match_query(&self, q: &str) -> MatchKind {
        if self.exact.contains(q) {
            return MatchKind::Exact;
        }
        if self.contains_phrase(q) {
            return MatchKind::Containment;
        }
        MatchKind::NoMatch
    }

    fn contains_phrase(&self, q: &str) -> bool {
        if self.containment.is_empty() || q.is_empty() {
            return false;
        }
        // normalized text has single-space separators, so a token window is a
        // plain byte slice and can be probed without allocating
        let bounds: Vec<(usize, usize)> = token_bounds(q);
        for &len in &self.containment_lengths {
            if len > bounds.len() {
                break;
            }
            for start in 0..=bounds.len() - len {
                let window = &q[bounds[start].0..bounds[start + len - 1].1];
                if self.containment.contains(window) {
                    return true;
                }
            }
        }
        false
    }
}

fn token_bounds(q: &str) -> Vec<(usize, usize)> {
    let mut bounds = Vec::new();
    let mut start = None;
    for (i, c) in q.char_indices() {
        if c == ' ' {
            if let Some(s) = start.take() {
                bounds.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        bounds.push((s, q.len()));
    }
    bounds
}

pub fn match_query(q: &str, d: &Dictionary) -> MatchKind {
    d.match_query(q)
}

/// Read a one-phrase-per-line file, skipping blank lines.
pub fn read_phrases(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlogHitStats {
    pub unique_queries: u64,
    pub total_clicks: u64,
    pub deviant_unique_queries: u64,
    pub deviant_clicks: u64,
}

/// Per-blog hit statistics plus the number of skipped records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HitAggregation {
    pub stats: BTreeMap<String, BlogHitStats>,
    pub malformed: usize,
}

/// Commutative accumulator behind [`aggregate_blog_hits`]; shards can be
/// accumulated independently and merged.
#[derive(Debug, Clone, Default)]
pub struct HitAccumulator {
    // blog -> query -> (clicks, deviant)
    per_blog: HashMap<String, HashMap<String, (u64, bool)>>,
    malformed: usize,
}

impl HitAccumulator {
    pub fn add(&mut self, record: &QueryRecord, keyword_set: &HashSet<String>) {
        if record.blog_id.is_empty() || record.normalized_query.is_empty() {
            self.malformed += 1;
            return;
        }
        let deviant = keyword_set.contains(&record.normalized_query);
        let slot = self
            .per_blog
            .entry(record.blog_id.clone())
            .or_default()
            .entry(record.normalized_query.clone())
            .or_insert((0, deviant));
        slot.0 += 1;
    }

    pub fn merge(mut self, other: HitAccumulator) -> HitAccumulator {
        self.malformed += other.malformed;
        for (blog, queries) in other.per_blog {
            let mine = self.per_blog.entry(blog).or_default();
            for (q, (clicks, deviant)) in queries {
                mine.entry(q).or_insert((0, deviant)).0 += clicks;
            }
        }
        self
    }

    pub fn finish(self) -> HitAggregation {
        let stats = self
            .per_blog
            .into_iter()
            .map(|(blog, queries)| {
                let mut s = BlogHitStats::default();
                for (clicks, deviant) in queries.into_values() {
                    s.unique_queries += 1;
                    s.total_clicks += clicks;
                    if deviant {
                        s.deviant_unique_queries += 1;
                        s.deviant_clicks += clicks;
                    }
                }
                (blog, s)
            })
            .collect();
        HitAggregation {
            stats,
            malformed: self.malformed,
        }
    }
}

/// Count distinct queries and clicks per blog, and the subsets whose query
/// exactly matches `keyword_set`.
pub fn aggregate_blog_hits<'a, I>(records: I, keyword_set: &HashSet<String>) -> HitAggregation
where
    I: IntoIterator<Item = &'a QueryRecord>,
{
    let mut acc = HitAccumulator::default();
    for r in records {
        acc.add(r, keyword_set);
    }
    acc.finish()
}

/// Whether the blog-retention thresholds count deviant hits only or all hits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdScope {
    #[default]
    Deviant,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitThresholds {
    pub min_unique: u64,
    pub min_clicks: u64,
    pub scope: ThresholdScope,
}

impl Default for HitThresholds {
    fn default() -> Self {
        HitThresholds {
            min_unique: 2,
            min_clicks: 3,
            scope: ThresholdScope::Deviant,
        }
    }
}

impl HitThresholds {
    pub fn keeps(&self, s: &BlogHitStats) -> bool {
        // a blog never reached by a deviant query is not a candidate at all
        if s.deviant_clicks == 0 {
            return false;
        }
        let (unique, clicks) = match self.scope {
            ThresholdScope::Deviant => (s.deviant_unique_queries, s.deviant_clicks),
            ThresholdScope::All => (s.unique_queries, s.total_clicks),
        };
        unique >= self.min_unique && clicks >= self.min_clicks
    }
}

pub fn filter_candidate_blogs(
    stats: &BTreeMap<String, BlogHitStats>,
    thresholds: &HitThresholds,
) -> BTreeSet<String> {
    stats
        .iter()
        .filter(|(_, s)| thresholds.keeps(s))
        .map(|(b, _)| b.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogDiagnostics {
    pub lines: usize,
    pub malformed: usize,
    pub off_platform: usize,
    pub empty_query: usize,
    pub region_filtered: usize,
}

/// A normalized query log with interned query and blog strings.
///
/// Query and blog ids are assigned in lexicographic order, so id order
/// equals string order.
#[derive(Debug, Clone, Default)]
pub struct QueryLog {
    queries: Vec<String>,
    blogs: Vec<String>,
    query_index: HashMap<String, u32>,
    blog_index: HashMap<String, u32>,
    /// blog -> sorted (query, clicks)
    by_blog: Vec<Vec<(u32, u64)>>,
    /// query -> sorted blogs it hits
    by_query: Vec<Vec<u32>>,
    records: usize,
    pub diagnostics: LogDiagnostics,
}

impl QueryLog {
    pub fn from_records<'a, I>(records: I) -> Self
    where
        I: IntoIterator<Item = &'a QueryRecord>,
    {
        let mut counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        let mut n = 0;
        for r in records {
            if r.blog_id.is_empty() || r.normalized_query.is_empty() {
                continue;
            }
            *counts
                .entry((r.blog_id.as_str(), r.normalized_query.as_str()))
                .or_default() += 1;
            n += 1;
        }
        let blogs: BTreeSet<&str> = counts.keys().map(|(b, _)| *b).collect();
        let queries: BTreeSet<&str> = counts.keys().map(|(_, q)| *q).collect();
        let blogs: Vec<String> = blogs.into_iter().map(str::to_string).collect();
        let queries: Vec<String> = queries.into_iter().map(str::to_string).collect();
        let blog_index: HashMap<String, u32> = blogs
            .iter()
            .enumerate()
            .map(|(i, b)| (b.clone(), i as u32))
            .collect();
        let query_index: HashMap<String, u32> = queries
            .iter()
            .enumerate()
            .map(|(i, q)| (q.clone(), i as u32))
            .collect();
        let mut by_blog = vec![Vec::new(); blogs.len()];
        let mut by_query = vec![Vec::new(); queries.len()];
        for ((b, q), c) in counts {
            let bi = blog_index[b];
            let qi = query_index[q];
            by_blog[bi as usize].push((qi, c));
            by_query[qi as usize].push(bi);
        }
        for list in &mut by_blog {
            list.sort_unstable();
        }
        for list in &mut by_query {
            list.sort_unstable();
        }
        QueryLog {
            queries,
            blogs,
            query_index,
            blog_index,
            by_blog,
            by_query,
            records: n,
            diagnostics: LogDiagnostics::default(),
        }
    }

    /// Parse a TSV query log, keeping entries that resolve to a blog.
    pub fn read_tsv(path: &Path, opts: &NormalizeOptions) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), opts).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn from_reader<R: BufRead>(reader: R, opts: &NormalizeOptions) -> Result<Self> {
        let mut diag = LogDiagnostics::default();
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io("<query log>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            diag.lines += 1;
            let entry = match RawLogEntry::parse(&line) {
                Ok(e) => e,
                Err(msg) => {
                    log::debug!("skipping log line {}: {msg}", diag.lines);
                    diag.malformed += 1;
                    continue;
                }
            };
            if let Some(region) = &opts.region {
                if !entry.region.eq_ignore_ascii_case(region) {
                    diag.region_filtered += 1;
                    continue;
                }
            }
            let Some(blog_id) = extract_blog_id(&entry.clicked_url, &opts.platform_domain) else {
                diag.off_platform += 1;
                continue;
            };
            let normalized_query = normalize_query(&entry.query, &opts.platform_tokens);
            if normalized_query.is_empty() {
                diag.empty_query += 1;
                continue;
            }
            records.push(QueryRecord {
                normalized_query,
                blog_id,
            });
        }
        let mut log = QueryLog::from_records(&records);
        log.diagnostics = diag;
        Ok(log)
    }

    pub fn num_records(&self) -> usize {
        self.records
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn num_blogs(&self) -> usize {
        self.blogs.len()
    }

    pub fn query(&self, id: u32) -> &str {
        &self.queries[id as usize]
    }

    pub fn blog(&self, id: u32) -> &str {
        &self.blogs[id as usize]
    }

    pub fn query_id(&self, q: &str) -> Option<u32> {
        self.query_index.get(q).copied()
    }

    pub fn blog_id(&self, b: &str) -> Option<u32> {
        self.blog_index.get(b).copied()
    }

    /// Distinct (query, clicks) pairs hitting a blog, sorted by query id.
    pub fn hits_of_blog(&self, blog: u32) -> &[(u32, u64)] {
        &self.by_blog[blog as usize]
    }

    pub fn blogs_hit_by(&self, query: u32) -> &[u32] {
        &self.by_query[query as usize]
    }

    /// Expand back into one record per click, in a canonical order.
    pub fn records(&self) -> Vec<QueryRecord> {
        let mut out = Vec::with_capacity(self.records);
        for (b, hits) in self.by_blog.iter().enumerate() {
            for &(q, c) in hits {
                for _ in 0..c {
                    out.push(QueryRecord {
                        normalized_query: self.queries[q as usize].clone(),
                        blog_id: self.blogs[b].clone(),
                    });
                }
            }
        }
        out
    }

    /// Hit statistics of one blog given a per-query deviant mask.
    pub fn blog_stats(&self, blog: u32, deviant: &[bool]) -> BlogHitStats {
        let mut s = BlogHitStats::default();
        for &(q, c) in &self.by_blog[blog as usize] {
            s.unique_queries += 1;
            s.total_clicks += c;
            if deviant[q as usize] {
                s.deviant_unique_queries += 1;
                s.deviant_clicks += c;
            }
        }
        s
    }

    /// Per-query mask of membership in `keywords`.
    pub fn keyword_mask<'a, I>(&self, keywords: I) -> Vec<bool>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut mask = vec![false; self.queries.len()];
        for k in keywords {
            if let Some(&q) = self.query_index.get(k) {
                mask[q as usize] = true;
            }
        }
        mask
    }
}

/// Queries reaching the blogs hit by dictionary-matched queries, ranked by
/// click volume. This is the candidate list handed to manual curation when
/// bootstrapping a seed keyword set.
pub fn bootstrap_queries(log: &QueryLog, dict: &Dictionary) -> Vec<(String, MatchKind, u64)> {
    let mut hit_blogs = BTreeSet::new();
    for q in 0..log.num_queries() as u32 {
        if dict.match_query(log.query(q)) != MatchKind::NoMatch {
            hit_blogs.extend(log.blogs_hit_by(q).iter().copied());
        }
    }
    let mut volume: BTreeMap<u32, u64> = BTreeMap::new();
    for b in hit_blogs {
        for &(q, c) in log.hits_of_blog(b) {
            *volume.entry(q).or_default() += c;
        }
    }
    let mut out: Vec<(String, MatchKind, u64)> = volume
        .into_iter()
        .map(|(q, c)| {
            let text = log.query(q);
            (text.to_string(), dict.match_query(text), c)
        })
        .collect();
    out.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks() -> HashSet<String> {
        default_platform_tokens()
    }

    fn rec(q: &str, b: &str) -> QueryRecord {
        QueryRecord {
            normalized_query: q.into(),
            blog_id: b.into(),
        }
    }

    fn dict(exact: &[&str], contain: &[&str]) -> Dictionary {
        Dictionary::new(exact, contain, &toks())
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_query("Tumblr  BEST   Cats 2015", &toks()),
            "best cats"
        );
        assert_eq!(normalize_query("", &toks()), "");
        assert_eq!(normalize_query("already normal", &toks()), "already normal");
        assert_eq!(normalize_query("  tmblr TUMBLR2015 ", &toks()), "");
        assert_eq!(normalize_query("r2d2 fan", &toks()), "rd fan");
    }

    #[test]
    fn platform_tokens_are_whole_tokens() {
        assert_eq!(normalize_query("tumblrcats", &toks()), "tumblrcats");
    }

    #[test]
    fn blog_id_extraction() {
        let d = DEFAULT_PLATFORM_DOMAIN;
        assert_eq!(
            extract_blog_id("https://Foo.tumblr.com/post/1", d).as_deref(),
            Some("foo")
        );
        assert_eq!(extract_blog_id("foo.tumblr.com", d).as_deref(), Some("foo"));
        assert_eq!(
            extract_blog_id("http://a.b.tumblr.com/", d).as_deref(),
            Some("b")
        );
        assert_eq!(extract_blog_id("https://www.tumblr.com/x", d), None);
        assert_eq!(extract_blog_id("https://tumblr.com/x", d), None);
        assert_eq!(extract_blog_id("https://foo.example.com", d), None);
        assert_eq!(extract_blog_id("https://nottumblr.com", d), None);
    }

    #[test]
    fn raw_entry_parsing() {
        let e = RawLogEntry::parse("12\tBig Cats\thttps://x.tumblr.com\tUS").unwrap();
        assert_eq!(e.timestamp, 12);
        assert_eq!(e.region, "US");
        assert!(RawLogEntry::parse("12\tq\t\tUS").is_err());
        assert!(RawLogEntry::parse("-1\tq\tu\tUS").is_err());
        assert!(RawLogEntry::parse("1\tq\tu").is_err());
    }

    #[test]
    fn match_examples() {
        assert_eq!(
            dict(&["big cats"], &[]).match_query("big cats"),
            MatchKind::Exact
        );
        assert_eq!(
            dict(&["porn"], &["nsfw"]).match_query("food porn"),
            MatchKind::NoMatch
        );
        assert_eq!(
            dict(&[], &["x y"]).match_query("a x y b"),
            MatchKind::Containment
        );
        assert_eq!(
            dict(&[], &["cats"]).match_query("bobcats"),
            MatchKind::NoMatch
        );
        assert_eq!(dict(&["a b"], &["a"]).match_query("a b"), MatchKind::Exact);
        assert_eq!(dict(&[], &["x y"]).match_query("x b y"), MatchKind::NoMatch);
    }

    #[test]
    fn dictionary_phrases_are_normalized() {
        let d = dict(&["Big  Cats 99"], &["TUMBLR"]);
        assert!(d.exact().contains("big cats"));
        assert!(d.containment().is_empty());
    }

    #[test]
    fn aggregate_examples() {
        let kw: HashSet<String> = ["q1".to_string()].into();
        let same = vec![rec("q", "b"), rec("q", "b"), rec("q", "b")];
        let agg = aggregate_blog_hits(&same, &kw);
        assert_eq!(agg.stats["b"].unique_queries, 1);
        assert_eq!(agg.stats["b"].total_clicks, 3);

        assert!(aggregate_blog_hits(&[], &kw).stats.is_empty());

        let recs = vec![rec("q1", "b1"), rec("q2", "b1"), rec("q1", "b2")];
        let agg = aggregate_blog_hits(&recs, &kw);
        let b1 = agg.stats["b1"];
        let b2 = agg.stats["b2"];
        assert_eq!(
            (
                b1.unique_queries,
                b1.total_clicks,
                b1.deviant_unique_queries,
                b1.deviant_clicks
            ),
            (2, 2, 1, 1)
        );
        assert_eq!(
            (
                b2.unique_queries,
                b2.total_clicks,
                b2.deviant_unique_queries,
                b2.deviant_clicks
            ),
            (1, 1, 1, 1)
        );
    }

    #[test]
    fn malformed_records_are_tallied() {
        let kw = HashSet::new();
        let agg = aggregate_blog_hits(&[rec("", "b"), rec("q", ""), rec("q", "b")], &kw);
        assert_eq!(agg.malformed, 2);
        assert_eq!(agg.stats.len(), 1);
    }

    #[test]
    fn filter_thresholds() {
        let t = HitThresholds::default();
        let s = |u, c| BlogHitStats {
            unique_queries: u,
            total_clicks: c,
            deviant_unique_queries: u,
            deviant_clicks: c,
        };
        let stats: BTreeMap<String, BlogHitStats> = [
            ("a".to_string(), s(1, 5)),
            ("b".to_string(), s(2, 3)),
            ("c".to_string(), s(3, 2)),
        ]
        .into();
        let kept = filter_candidate_blogs(&stats, &t);
        assert_eq!(kept.into_iter().collect::<Vec<_>>(), vec!["b".to_string()]);
    }

    #[test]
    fn all_hits_scope() {
        let t = HitThresholds {
            scope: ThresholdScope::All,
            ..Default::default()
        };
        let s = BlogHitStats {
            unique_queries: 4,
            total_clicks: 9,
            deviant_unique_queries: 1,
            deviant_clicks: 1,
        };
        assert!(t.keeps(&s));
        assert!(!HitThresholds::default().keeps(&s));
    }

    #[test]
    fn query_log_reader() {
        let text = "1\tBig Cats tumblr\thttps://Alpha.tumblr.com/post/3\tUS\n\
                    2\tbig cats\thttp://alpha.tumblr.com\tUS\n\
                    3\tdogs\thttp://example.com\tUS\n\
                    bad line\n\
                    4\t2015\thttp://beta.tumblr.com\tUS\n\
                    5\tdogs\thttp://beta.tumblr.com\tES\n";
        let opts = NormalizeOptions {
            region: Some("us".into()),
            ..Default::default()
        };
        let log = QueryLog::from_reader(text.as_bytes(), &opts).unwrap();
        assert_eq!(log.diagnostics.lines, 6);
        assert_eq!(log.diagnostics.malformed, 1);
        assert_eq!(log.diagnostics.off_platform, 1);
        assert_eq!(log.diagnostics.empty_query, 1);
        assert_eq!(log.diagnostics.region_filtered, 1);
        assert_eq!(log.num_records(), 2);
        let b = log.blog_id("alpha").unwrap();
        assert_eq!(
            log.hits_of_blog(b),
            &[(log.query_id("big cats").unwrap(), 2)]
        );
    }

    #[test]
    fn bootstrap_ranks_by_volume() {
        let recs = vec![
            rec("hot topic", "a"),
            rec("other", "a"),
            rec("other", "a"),
            rec("cats", "b"),
        ];
        let log = QueryLog::from_records(&recs);
        let d = dict(&[], &["topic"]);
        let out = bootstrap_queries(&log, &d);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], ("other".to_string(), MatchKind::NoMatch, 2));
        assert_eq!(out[1].1, MatchKind::Containment);
    }

    fn brute_contains(q: &str, phrases: &[String]) -> bool {
        let qt: Vec<&str> = q.split_whitespace().collect();
        phrases.iter().any(|p| {
            let pt: Vec<&str> = p.split_whitespace().collect();
            !pt.is_empty() && qt.windows(pt.len()).any(|w| w == pt.as_slice())
        })
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "c", "d", "ab", "ba", "cd", "e"]).prop_map(String::from)
    }

    fn phrase(max: usize) -> impl Strategy<Value = String> {
        prop::collection::vec(word(), 1..=max).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_query(&s, &toks());
            prop_assert_eq!(normalize_query(&once, &toks()), once.clone());
            prop_assert!(!once.chars().any(|c| c.is_numeric()));
            prop_assert!(!once.contains("  "));
            prop_assert_eq!(once.trim(), once.as_str());
        }

        #[test]
        fn normalize_idempotent_on_platform_mix(
            parts in prop::collection::vec(
                prop::sample::select(vec!["Tumblr", "tumblr2", "TMBLR", "cats", "Big", "42", " ", "\t"]),
                0..12)
        ) {
            let s = parts.join(" ");
            let once = normalize_query(&s, &toks());
            prop_assert_eq!(normalize_query(&once, &toks()), once);
        }

        #[test]
        fn containment_matches_brute_force(
            phrases in prop::collection::vec(phrase(3), 0..60),
            q in phrase(20),
        ) {
            let d = Dictionary::new(Vec::<String>::new(), &phrases, &toks());
            let got = d.match_query(&q) == MatchKind::Containment;
            prop_assert_eq!(got, brute_contains(&q, &phrases));
        }

        #[test]
        fn aggregation_is_order_and_shard_invariant(
            recs in prop::collection::vec((0u8..6, 0u8..4), 0..80),
            cut in 0usize..80,
            rot in 0usize..80,
        ) {
            let records: Vec<QueryRecord> = recs
                .iter()
                .map(|(q, b)| rec(&format!("q{}", q), &format!("b{}", b)))
                .collect();
            let kw: HashSet<String> = ["q1".to_string(), "q3".to_string()].into();
            let whole = aggregate_blog_hits(&records, &kw);

            let mut rotated = records.clone();
            if !rotated.is_empty() {
                let r = rot % rotated.len();
                rotated.rotate_left(r);
                rotated.reverse();
            }
            prop_assert_eq!(&aggregate_blog_hits(&rotated, &kw), &whole);

            let cut = cut.min(records.len());
            let mut left = HitAccumulator::default();
            let mut right = HitAccumulator::default();
            for r in &records[..cut] { left.add(r, &kw); }
            for r in &records[cut..] { right.add(r, &kw); }
            prop_assert_eq!(&right.merge(left).finish(), &whole);

            let log = QueryLog::from_records(&records);
            let mask = log.keyword_mask(kw.iter());
            for (blog, s) in &whole.stats {
                let id = log.blog_id(blog).unwrap();
                prop_assert_eq!(&log.blog_stats(id, &mask), s);
            }
        }
    }
}
