//! Query/gallery splits, ranked retrieval and rank-r / mAP evaluation.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ScoringConfig;
use crate::features::FeatureRecord;
use crate::scoring::score;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("cannot parse person/camera id from '{0}'")]
    BadFilename(String),
    #[error("invalid naming pattern: {0}")]
    BadPattern(String),
    #[error("failed to write report: {0}")]
    Report(String),
}

pub const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];

/// Extracts person and camera ids from a file stem. The pattern's first
/// capture group is the person id, the second the camera id.
#[derive(Debug, Clone)]
pub struct NamingRule {
    pattern: Regex,
}

impl Default for NamingRule {
    /// Market1501 style: `0002_c1s1_000451_03`, `-1_c3s2_...`.
    fn default() -> Self {
        Self {
            pattern: Regex::new(r"^(-?\d+)_c(\d+)").expect("static pattern"),
        }
    }
}

impl NamingRule {
    pub fn new(pattern: &str) -> Result<Self, EvalError> {
        let pattern = Regex::new(pattern).map_err(|e| EvalError::BadPattern(e.to_string()))?;
        if pattern.captures_len() < 3 {
            return Err(EvalError::BadPattern(
                "pattern needs two capture groups (person id, camera id)".into(),
            ));
        }
        Ok(Self { pattern })
    }

    pub fn parse(&self, stem: &str) -> Option<(i32, u32)> {
        let caps = self.pattern.captures(stem)?;
        Some((caps.get(1)?.as_str().parse().ok()?, caps.get(2)?.as_str().parse().ok()?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub path: PathBuf,
    pub person_id: i32,
    pub camera_id: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub queries: Vec<ImageEntry>,
    pub gallery: Vec<ImageEntry>,
    /// Queries dropped by the exclusion list.
    pub removed_queries: usize,
    /// Files skipped because their name did not parse (non-strict mode).
    pub unparsed: usize,
}

/// Sorted image files of a directory.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io = |e: std::io::Error| EvalError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if path.is_file() && IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads an exclusion list: one image id or file name per line, `#` comments.
pub fn read_id_list(path: &Path) -> Result<BTreeSet<String>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| file_stem(Path::new(l)))
        .collect())
}

fn entries(dir: &Path, naming: &NamingRule, strict: bool) -> Result<(Vec<ImageEntry>, usize), EvalError> {
    let mut out = Vec::new();
    let mut unparsed = 0;
    for path in list_images(dir)? {
        let image_id = file_stem(&path);
        match naming.parse(&image_id) {
            Some((person_id, camera_id)) => out.push(ImageEntry {
                image_id,
                path,
                person_id,
                camera_id,
            }),
            None if strict => return Err(EvalError::BadFilename(image_id)),
            None => unparsed += 1,
        }
    }
    Ok((out, unparsed))
}

/// Loads a test (gallery) and query directory. Queries listed in
/// `excluded_queries` (typically ones with gross parsing errors) are
/// dropped; the gallery is never filtered.
pub fn load_split(
    test_dir: &Path,
    query_dir: &Path,
    naming: &NamingRule,
    excluded_queries: Option<&BTreeSet<String>>,
    strict: bool,
) -> Result<Split, EvalError> {
    let (gallery, g_unparsed) = entries(test_dir, naming, strict)?;
    let (mut queries, q_unparsed) = entries(query_dir, naming, strict)?;
    let before = queries.len();
    if let Some(excluded) = excluded_queries {
        queries.retain(|q| !excluded.contains(&q.image_id));
    }
    Ok(Split {
        removed_queries: before - queries.len(),
        queries,
        gallery,
        unparsed: g_unparsed + q_unparsed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Protocol {
    /// Drop gallery images sharing both person and camera with the query.
    pub cross_camera: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub image_id: String,
    pub score: f64,
}

/// Gallery ids by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub query_id: String,
    pub ranked: Vec<RankedItem>,
    pub excluded: Vec<String>,
}

pub fn sort_ranked(items: &mut [RankedItem]) {
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.image_id.cmp(&b.image_id)));
}

fn excluded_by(protocol: Protocol, q: &FeatureRecord, g: &FeatureRecord) -> bool {
    protocol.cross_camera
        && q.person_id.is_some()
        && q.camera_id.is_some()
        && q.person_id == g.person_id
        && q.camera_id == g.camera_id
}

/// Scores `q` against every gallery record in parallel.
pub fn rank_query(
    q: &FeatureRecord,
    gallery: &[FeatureRecord],
    protocol: Protocol,
    cfg: &ScoringConfig,
) -> RankingResult {
    let scored: Vec<Option<RankedItem>> = gallery
        .par_iter()
        .map(|g| {
            (!excluded_by(protocol, q, g)).then(|| RankedItem {
                image_id: g.image_id.clone(),
                score: score(q, g, cfg),
            })
        })
        .collect();
    let mut excluded = Vec::new();
    let mut ranked = Vec::with_capacity(gallery.len());
    for (g, item) in gallery.iter().zip(scored) {
        match item {
            Some(item) => ranked.push(item),
            None => excluded.push(g.image_id.clone()),
        }
    }
    sort_ranked(&mut ranked);
    excluded.sort();
    RankingResult {
        query_id: q.image_id.clone(),
        ranked,
        excluded,
    }
}

/// 1-based position of the first true match.
pub fn first_match(result: &RankingResult, is_match: impl Fn(&str) -> bool) -> Option<usize> {
    result.ranked.iter().position(|it| is_match(&it.image_id)).map(|p| p + 1)
}

/// Whether a true match appears within the top `r`.
pub fn rank_r(result: &RankingResult, r: usize, is_match: impl Fn(&str) -> bool) -> bool {
    first_match(result, is_match).is_some_and(|p| p <= r)
}

/// Mean over true-match positions `j` of (true matches up to `j`) / `j`.
/// `None` when the ranking holds no true match.
pub fn average_precision(result: &RankingResult, is_match: impl Fn(&str) -> bool) -> Option<f64> {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (j, item) in result.ranked.iter().enumerate() {
        if is_match(&item.image_id) {
            found += 1;
            sum += found as f64 / (j + 1) as f64;
        }
    }
    (found > 0).then(|| sum / found as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOutcome {
    pub map: f64,
    pub n_queries: usize,
    pub n_dropped: usize,
}

/// mAP in [0, 1] over the queries that have at least one true match.
/// `truth(query_id, gallery_id)` decides matches.
pub fn mean_average_precision(
    results: &[RankingResult],
    truth: impl Fn(&str, &str) -> bool,
) -> MapOutcome {
    let mut sum = 0.0;
    let mut n = 0;
    for r in results {
        if let Some(ap) = average_precision(r, |g| truth(&r.query_id, g)) {
            sum += ap;
            n += 1;
        }
    }
    MapOutcome {
        map: if n > 0 { sum / n as f64 } else { 0.0 },
        n_queries: n,
        n_dropped: results.len() - n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ranks: Vec<usize>,
    pub protocol: Protocol,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ranks: vec![1, 5, 10],
            protocol: Protocol { cross_camera: true },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub best_match_rank: Option<usize>,
    #[serde(rename = "AP")]
    pub ap: Option<f64>,
}

/// Percentages over the counted queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub rank_1: f64,
    pub rank_5: f64,
    pub rank_10: f64,
    /// Every requested rank, keyed by `r`.
    pub ranks: std::collections::BTreeMap<usize, f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub n_queries: usize,
    /// Queries without any true match in their gallery.
    pub n_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub per_query: Vec<QueryOutcome>,
}

fn is_true_match(q: &FeatureRecord, g: &FeatureRecord) -> bool {
    matches!((q.person_id, g.person_id), (Some(a), Some(b)) if a > 0 && a == b)
}

/// Ranks every query against the gallery and aggregates rank-r and mAP.
/// A gallery image is a true match when it has the query's person id and
/// that id is positive.
pub fn evaluate(
    queries: &[FeatureRecord],
    gallery: &[FeatureRecord],
    cfg: &EvalConfig,
    scoring: &ScoringConfig,
) -> EvalReport {
    let per_query: Vec<QueryOutcome> = queries
        .par_iter()
        .map(|q| {
            let result = rank_query(q, gallery, cfg.protocol, scoring);
            let matches: BTreeSet<&str> = gallery
                .iter()
                .filter(|g| is_true_match(q, g))
                .map(|g| g.image_id.as_str())
                .collect();
            let is_match = |id: &str| matches.contains(id);
            QueryOutcome {
                query_id: q.image_id.clone(),
                best_match_rank: first_match(&result, is_match),
                ap: average_precision(&result, is_match),
            }
        })
        .collect();
    EvalReport {
        summary: summarize(&per_query, &cfg.ranks),
        per_query,
    }
}

/// Aggregates per-query outcomes; queries without a match are dropped.
pub fn summarize(per_query: &[QueryOutcome], ranks: &[usize]) -> EvalSummary {
    let counted: Vec<&QueryOutcome> = per_query.iter().filter(|q| q.ap.is_some()).collect();
    let n = counted.len();
    let pct = |r: usize| {
        if n == 0 {
            return 0.0;
        }
        let hits = counted
            .iter()
            .filter(|q| q.best_match_rank.is_some_and(|p| p <= r))
            .count();
        100.0 * hits as f64 / n as f64
    };
    let map = if n == 0 {
        0.0
    } else {
        100.0 * counted.iter().filter_map(|q| q.ap).sum::<f64>() / n as f64
    };
    EvalSummary {
        rank_1: pct(1),
        rank_5: pct(5),
        rank_10: pct(10),
        ranks: ranks.iter().map(|&r| (r, pct(r))).collect(),
        map,
        n_queries: n,
        n_dropped: per_query.len() - n,
    }
}

/// Writes `query_id,best_match_rank,AP`, one row per query. Missing values are empty.
pub fn write_per_query_csv<W: Write>(out: W, per_query: &[QueryOutcome]) -> Result<(), EvalError> {
    let err = |e: csv::Error| EvalError::Report(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query_id", "best_match_rank", "AP"]).map_err(err)?;
    for q in per_query {
        w.write_record([
            q.query_id.clone(),
            q.best_match_rank.map(|r| r.to_string()).unwrap_or_default(),
            q.ap.map(|a| a.to_string()).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| EvalError::Report(e.to_string()))
}
