//! Age and gender breakdowns per consumer class, and engagement by age band.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::ConsumerClass;
use crate::error::{Error, Result};
use crate::graph::{LayeredGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl Gender {
    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Gender {
    type Err = Error;

    /// Anything other than a male or female marker is `Unknown`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Gender::Male,
            "f" | "female" => Gender::Female,
            _ => Gender::Unknown,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicRecord {
    pub node: NodeId,
    pub age: u32,
    pub gender: Gender,
}

impl DemographicRecord {
    pub fn valid_age(age: i64) -> bool {
        age > 0 && age < 120
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicsReadDiagnostics {
    pub lines: usize,
    pub malformed: usize,
    pub out_of_range: usize,
    pub unknown_nodes: usize,
    pub duplicates: usize,
}

/// Parse `node,age,gender` rows (header optional). Rows with an age outside
/// `0 < age < 120` are dropped and counted; for repeated nodes the first
/// row wins.
pub fn parse_demographics<R: BufRead>(
    reader: R,
    g: &LayeredGraph,
) -> std::io::Result<(Vec<DemographicRecord>, DemographicsReadDiagnostics)> {
    let mut diag = DemographicsReadDiagnostics::default();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && cols.first() == Some(&"node") {
            continue;
        }
        diag.lines += 1;
        if cols.len() != 3 {
            diag.malformed += 1;
            continue;
        }
        let Ok(age) = cols[1].parse::<i64>() else {
            diag.malformed += 1;
            continue;
        };
        if !DemographicRecord::valid_age(age) {
            diag.out_of_range += 1;
            continue;
        }
        let Some(node) = g.node(cols[0]) else {
            diag.unknown_nodes += 1;
            continue;
        };
        if !seen.insert(node) {
            diag.duplicates += 1;
            continue;
        }
        out.push(DemographicRecord {
            node,
            age: age as u32,
            gender: cols[2].parse().unwrap_or(Gender::Unknown),
        });
    }
    Ok((out, diag))
}

pub fn read_demographics(
    path: &Path,
    g: &LayeredGraph,
) -> Result<(Vec<DemographicRecord>, DemographicsReadDiagnostics)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_demographics(BufReader::new(f), g).map_err(|e| Error::io(path, e))
}

pub fn underage_nodes(demo: &[DemographicRecord]) -> HashSet<NodeId> {
    demo.iter().filter(|r| r.age < 18).map(|r| r.node).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Deviation {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeSummary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub under_18: f64,
}

pub fn age_summary(ages: &[u32], dev: Deviation) -> Option<AgeSummary> {
    if ages.is_empty() {
        return None;
    }
    let n = ages.len() as f64;
    let mean = ages.iter().map(|&a| a as f64).sum::<f64>() / n;
    let ss: f64 = ages.iter().map(|&a| (a as f64 - mean).powi(2)).sum();
    let denom = match dev {
        Deviation::Population => n,
        Deviation::Sample if ages.len() > 1 => n - 1.0,
        Deviation::Sample => return None,
    };
    let mut sorted = ages.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    };
    Some(AgeSummary {
        mean,
        median,
        std: (ss / denom).sqrt(),
        under_18: ages.iter().filter(|&&a| a < 18).count() as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDemographics {
    pub class: ConsumerClass,
    pub members: usize,
    pub covered: usize,
    pub coverage: f64,
    /// `None` when no member has demographics.
    pub ages: Option<AgeSummary>,
    pub male: usize,
    pub female: usize,
    pub unknown_gender: usize,
    /// Male share among members of known gender.
    pub male_share: Option<f64>,
}

pub fn class_demographics(
    classes: &[ConsumerClass],
    demo: &[DemographicRecord],
    dev: Deviation,
) -> Vec<ClassDemographics> {
    let mut members: BTreeMap<ConsumerClass, usize> = BTreeMap::new();
    for &c in classes {
        *members.entry(c).or_default() += 1;
    }
    let mut covered: BTreeMap<ConsumerClass, Vec<&DemographicRecord>> = BTreeMap::new();
    for r in demo {
        if let Some(&c) = classes.get(r.node as usize) {
            covered.entry(c).or_default().push(r);
        }
    }
    ConsumerClass::ALL
        .iter()
        .map(|&class| {
            let recs = covered.get(&class).map(Vec::as_slice).unwrap_or(&[]);
            let m = members.get(&class).copied().unwrap_or(0);
            let mut ages: Vec<u32> = recs.iter().map(|r| r.age).collect();
            ages.sort_unstable();
            let count = |g: Gender| recs.iter().filter(|r| r.gender == g).count();
            let (male, female) = (count(Gender::Male), count(Gender::Female));
            ClassDemographics {
                class,
                members: m,
                covered: recs.len(),
                coverage: if m == 0 {
                    0.0
                } else {
                    recs.len() as f64 / m as f64
                },
                ages: age_summary(&ages, dev),
                male,
                female,
                unknown_gender: count(Gender::Unknown),
                male_share: (male + female > 0).then(|| male as f64 / (male + female) as f64),
            }
        })
        .collect()
}

/// `x' = (x - min) / (max - min)`.
pub fn min_max_normalize(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::InsufficientData("nothing to normalize".into()));
    }
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(Error::FlatEngagement);
    }
    Ok(xs.iter().map(|&x| (x - min) / (max - min)).collect())
}

/// Contiguous age bands `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeBands {
    pub bounds: Vec<(u32, u32)>,
}

impl AgeBands {
    /// Bands of `width` years from `start`; the last one closes at `end`
    /// inclusive.
    pub fn uniform(start: u32, end: u32, width: u32) -> Self {
        let mut bounds = Vec::new();
        let mut lo = start;
        while lo <= end {
            bounds.push((lo, (lo + width).min(end + 1)));
            lo += width;
        }
        AgeBands { bounds }
    }

    pub fn band_of(&self, age: u32) -> Option<usize> {
        self.bounds
            .iter()
            .position(|&(lo, hi)| age >= lo && age < hi)
    }

    pub fn label(&self, i: usize) -> String {
        let (lo, hi) = self.bounds[i];
        format!("{lo}-{}", hi - 1)
    }
}

impl Default for AgeBands {
    fn default() -> Self {
        AgeBands::uniform(13, 70, 5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementCurve {
    pub gender: Gender,
    pub bands: Vec<String>,
    pub covered: Vec<usize>,
    pub active: Vec<usize>,
    /// Active share per band; `None` for bands without covered users.
    pub raw: Vec<Option<f64>>,
    pub normalized: Vec<Option<f64>>,
}

impl EngagementCurve {
    /// Index of the band with the highest normalized engagement.
    pub fn peak(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in self.normalized.iter().enumerate() {
            if let Some(v) = *v {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Per gender, the share of covered users in each band who are active
/// consumers, min-max normalized over the bands that have data.
pub fn engagement_by_age(
    classes: &[ConsumerClass],
    demo: &[DemographicRecord],
    bands: &AgeBands,
) -> Result<Vec<EngagementCurve>> {
    [Gender::Male, Gender::Female]
        .into_iter()
        .map(|gender| {
            let k = bands.bounds.len();
            let (mut covered, mut active) = (vec![0usize; k], vec![0usize; k]);
            for r in demo.iter().filter(|r| r.gender == gender) {
                let (Some(b), Some(c)) = (bands.band_of(r.age), classes.get(r.node as usize))
                else {
                    continue;
                };
                covered[b] += 1;
                if c.is_active() {
                    active[b] += 1;
                }
            }
            let raw: Vec<Option<f64>> = covered
                .iter()
                .zip(&active)
                .map(|(&c, &a)| (c > 0).then(|| a as f64 / c as f64))
                .collect();
            let present: Vec<f64> = raw.iter().flatten().copied().collect();
            if present.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "{gender}: fewer than two age bands with data"
                )));
            }
            let mut norm = min_max_normalize(&present)?.into_iter();
            let normalized = raw.iter().map(|r| r.and_then(|_| norm.next())).collect();
            Ok(EngagementCurve {
                gender,
                bands: (0..k).map(|i| bands.label(i)).collect(),
                covered,
                active,
                raw,
                normalized,
            })
        })
        .collect()
}

pub fn engagement_csv(curves: &[EngagementCurve]) -> String {
    let mut out = String::from("gender,band,covered,active,raw,normalized\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in curves {
        for i in 0..c.bands.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.gender,
                c.bands[i],
                c.covered[i],
                c.active[i],
                opt(c.raw[i]),
                opt(c.normalized[i])
            ));
        }
    }
    out
}

/// Age histogram per class: `class,band,count`.
pub fn age_histogram_csv(
    classes: &[ConsumerClass],
    demo: &[DemographicRecord],
    bands: &AgeBands,
) -> String {
    let mut counts: BTreeMap<(ConsumerClass, usize), usize> = BTreeMap::new();
    for r in demo {
        if let (Some(&c), Some(b)) = (classes.get(r.node as usize), bands.band_of(r.age)) {
            *counts.entry((c, b)).or_default() += 1;
        }
    }
    let mut out = String::from("class,band,count\n");
    for class in ConsumerClass::ALL {
        for b in 0..bands.bounds.len() {
            let n = counts.get(&(class, b)).copied().unwrap_or(0);
            out.push_str(&format!("{class},{},{n}\n", bands.label(b)));
        }
    }
    out
}
