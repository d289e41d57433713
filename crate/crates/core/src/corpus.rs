//! User timelines: ingestion, time slicing and corpus statistics.
//!
//! A timeline on disk is a JSON-lines file with one tweet per line plus a
//! sidecar `<stem>.account.json` holding the account record. The diagnosis
//! category comes from the parent directory name or from a corpus manifest.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{rejected} of {total} lines malformed in {path} (tolerance {tolerance})")]
    TooManyMalformed {
        path: PathBuf,
        rejected: usize,
        total: usize,
        tolerance: f64,
    },
    #[error("empty timeline: {0}")]
    EmptyTimeline(PathBuf),
    #[error("missing account sidecar {0}")]
    MissingAccount(PathBuf),
    #[error("invalid account record {path}: {reason}")]
    BadAccount { path: PathBuf, reason: String },
    #[error("invalid document {path}: {reason}")]
    BadDocument { path: PathBuf, reason: String },
    #[error("window start {start} is not before end {end}")]
    InvertedWindow {
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("timeline of user {0} has no category label")]
    Unlabeled(u64),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
}

/// Timestamps are serialized as `2021-05-29 19:42:25+00:00` and accepted in
/// that form or as RFC 3339 with any offset (normalized to UTC).
pub mod timestamp {
    use chrono::{DateTime, FixedOffset, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub const FORMAT: &str = "%Y-%m-%d %H:%M:%S%:z";

    pub fn format(t: &DateTime<Utc>) -> String {
        t.format(FORMAT).to_string()
    }

    pub fn parse(s: &str) -> Result<DateTime<Utc>, String> {
        let s = s.trim();
        DateTime::parse_from_rfc3339(s)
            .or_else(|_| DateTime::<FixedOffset>::parse_from_str(s, FORMAT))
            .or_else(|_| DateTime::<FixedOffset>::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%:z"))
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| format!("bad timestamp {s:?}: {e}"))
    }

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(t: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
            match t {
                Some(t) => s.serialize_str(&format(t)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DateTime<Utc>>, D::Error> {
            match Option::<String>::deserialize(d)? {
                Some(raw) => parse(&raw).map(Some).map_err(serde::de::Error::custom),
                None => Ok(None),
            }
        }
    }
}

/// Accepts ids written either as JSON numbers or as decimal strings.
pub(crate) fn id_from_any<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(u64),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(n) => Ok(n),
        Raw::Str(s) => s.trim().parse().map_err(serde::de::Error::custom),
    }
}

fn ids_from_any<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(u64),
        Str(String),
    }
    let raw: Option<Vec<Raw>> = Option::deserialize(d)?;
    raw.unwrap_or_default()
        .into_iter()
        .map(|r| match r {
            Raw::Num(n) => Ok(n),
            Raw::Str(s) => s.trim().parse().map_err(serde::de::Error::custom),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tweet {
    #[serde(deserialize_with = "id_from_any")]
    pub tweet_id: u64,
    #[serde(with = "timestamp")]
    pub timestamp: DateTime<Utc>,
    pub text: String,
    #[serde(default)]
    pub lang: Option<String>,
    #[serde(default, rename = "likes_count")]
    pub likes: u64,
    #[serde(default, rename = "quote_count")]
    pub quotes: u64,
    #[serde(default, rename = "reply_count")]
    pub replies: u64,
    #[serde(default, rename = "retweet_count")]
    pub retweets: u64,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default, deserialize_with = "ids_from_any")]
    pub mentioned_users: Vec<u64>,
}

impl Tweet {
    /// Minimal constructor used by tests and synthetic data.
    pub fn new(tweet_id: u64, timestamp: DateTime<Utc>, text: impl Into<String>) -> Self {
        Tweet {
            tweet_id,
            timestamp,
            text: text.into(),
            lang: None,
            likes: 0,
            quotes: 0,
            replies: 0,
            retweets: 0,
            source: None,
            mentioned_users: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountInfo {
    #[serde(deserialize_with = "id_from_any")]
    pub user_id: u64,
    #[serde(default, with = "timestamp::option")]
    pub created_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub followers_count: u64,
    #[serde(default)]
    pub friends_count: u64,
    #[serde(default)]
    pub statuses_count: u64,
    #[serde(default)]
    pub favourites_count: u64,
    #[serde(default)]
    pub verified: bool,
    #[serde(default)]
    pub geo_tag: Option<String>,
}

/// Diagnosis label of a timeline; `Neg` is the control group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "ADHD")]
    Adhd,
    Anxiety,
    Bipolar,
    Depression,
    #[serde(rename = "NEG")]
    Neg,
    #[serde(rename = "OCD")]
    Ocd,
    #[serde(rename = "PTSD")]
    Ptsd,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Adhd,
        Category::Anxiety,
        Category::Bipolar,
        Category::Depression,
        Category::Neg,
        Category::Ocd,
        Category::Ptsd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Adhd => "ADHD",
            Category::Anxiety => "Anxiety",
            Category::Bipolar => "Bipolar",
            Category::Depression => "Depression",
            Category::Neg => "NEG",
            Category::Ocd => "OCD",
            Category::Ptsd => "PTSD",
        }
    }

    /// True for the diagnosed cohort (everything except the control group).
    pub fn is_diagnosed(self) -> bool {
        self != Category::Neg
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CorpusError::UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTimeline {
    pub user_id: u64,
    pub account: AccountInfo,
    /// Ascending by `(timestamp, tweet_id)`; ids are unique.
    pub tweets: Vec<Tweet>,
    pub category: Option<Category>,
}

impl UserTimeline {
    /// Builds a timeline from unordered tweets, sorting them and dropping
    /// duplicate ids (first occurrence wins).
    pub fn new(account: AccountInfo, mut tweets: Vec<Tweet>, category: Option<Category>) -> Self {
        let mut seen = HashSet::new();
        tweets.retain(|t| seen.insert(t.tweet_id));
        tweets.sort_by_key(|t| (t.timestamp, t.tweet_id));
        UserTimeline {
            user_id: account.user_id,
            account,
            tweets,
            category,
        }
    }

    pub fn tweet(&self, id: u64) -> Option<&Tweet> {
        self.tweets.iter().find(|t| t.tweet_id == id)
    }

    /// Last minus first tweet timestamp, in fractional days.
    pub fn span_days(&self) -> f64 {
        match (self.tweets.first(), self.tweets.last()) {
            (Some(a), Some(b)) => (b.timestamp - a.timestamp).num_seconds() as f64 / 86_400.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IngestFormat {
    /// One tweet object per line plus `<stem>.account.json`.
    Jsonl,
    /// A whole serialized [`UserTimeline`] document.
    TimelineJson,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub format: IngestFormat,
    /// Maximum fraction of malformed lines tolerated.
    pub malformed_tolerance: f64,
    /// Overrides the category derived from the parent directory.
    pub category: Option<Category>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            format: IngestFormat::Jsonl,
            malformed_tolerance: 0.01,
            category: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub total_lines: usize,
    pub accepted: usize,
    pub rejected: Vec<RejectedLine>,
}

pub fn account_sidecar(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.account.json"))
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn category_from_dir(path: &Path) -> Option<Category> {
    path.parent()
        .and_then(Path::file_name)
        .and_then(|n| n.to_str())
        .and_then(|n| n.parse().ok())
}

/// Loads one user timeline and reports every rejected line.
pub fn load_timeline(
    path: &Path,
    opts: &IngestOptions,
) -> Result<(UserTimeline, IngestReport), CorpusError> {
    match opts.format {
        IngestFormat::TimelineJson => {
            let raw = read(path)?;
            let mut timeline: UserTimeline =
                serde_json::from_str(&raw).map_err(|e| CorpusError::BadDocument {
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                })?;
            if timeline.tweets.is_empty() {
                return Err(CorpusError::EmptyTimeline(path.to_path_buf()));
            }
            if let Some(c) = opts.category {
                timeline.category = Some(c);
            }
            let n = timeline.tweets.len();
            let timeline = UserTimeline::new(timeline.account, timeline.tweets, timeline.category);
            Ok((
                timeline,
                IngestReport {
                    total_lines: n,
                    accepted: n,
                    rejected: Vec::new(),
                },
            ))
        }
        IngestFormat::Jsonl => load_jsonl(path, opts),
    }
}

fn load_jsonl(
    path: &Path,
    opts: &IngestOptions,
) -> Result<(UserTimeline, IngestReport), CorpusError> {
    let sidecar = account_sidecar(path);
    if !sidecar.exists() {
        return Err(CorpusError::MissingAccount(sidecar));
    }
    let account: AccountInfo =
        serde_json::from_str(&read(&sidecar)?).map_err(|e| CorpusError::BadAccount {
            path: sidecar.clone(),
            reason: e.to_string(),
        })?;

    let raw = read(path)?;
    let mut report = IngestReport::default();
    let mut tweets = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.total_lines += 1;
        let reason = match serde_json::from_str::<Tweet>(line) {
            Err(e) => Some(format!("unparseable record: {e}")),
            Ok(t) if t.text.trim().is_empty() => Some("empty text".to_string()),
            Ok(t) if account.created_at.is_some_and(|c| t.timestamp < c) => {
                Some("timestamp precedes account creation".to_string())
            }
            Ok(t) if !seen.insert(t.tweet_id) => Some(format!("duplicate tweet_id {}", t.tweet_id)),
            Ok(t) => {
                tweets.push(t);
                None
            }
        };
        if let Some(reason) = reason {
            log::warn!("{}:{}: rejected: {}", path.display(), idx + 1, reason);
            report.rejected.push(RejectedLine {
                line: idx + 1,
                reason,
            });
        }
    }
    report.accepted = tweets.len();

    if tweets.is_empty() {
        return Err(CorpusError::EmptyTimeline(path.to_path_buf()));
    }
    let ratio = report.rejected.len() as f64 / report.total_lines as f64;
    if ratio > opts.malformed_tolerance {
        return Err(CorpusError::TooManyMalformed {
            path: path.to_path_buf(),
            rejected: report.rejected.len(),
            total: report.total_lines,
            tolerance: opts.malformed_tolerance,
        });
    }
    let category = opts.category.or_else(|| category_from_dir(path));
    Ok((UserTimeline::new(account, tweets, category), report))
}

/// Writes a timeline in the JSON-lines layout `load_timeline` reads.
pub fn save_timeline(timeline: &UserTimeline, path: &Path) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut body = String::new();
    for t in &timeline.tweets {
        body.push_str(&serde_json::to_string(t).expect("tweet serializes"));
        body.push('\n');
    }
    fs::write(path, body).map_err(io)?;
    let account = serde_json::to_string_pretty(&timeline.account).expect("account serializes");
    fs::write(account_sidecar(path), account).map_err(io)
}

#[derive(Debug, Deserialize)]
struct Manifest {
    users: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    path: PathBuf,
    category: Category,
}

/// Loads every timeline under `root`, either listed in `root/manifest.json`
/// or found as `root/<Category>/<user>.jsonl`. Results are ordered by path.
pub fn load_corpus(
    root: &Path,
    opts: &IngestOptions,
) -> Result<Vec<(UserTimeline, IngestReport)>, CorpusError> {
    let manifest_path = root.join("manifest.json");
    let mut jobs: Vec<(PathBuf, Option<Category>)> = Vec::new();
    if manifest_path.exists() {
        let m: Manifest =
            serde_json::from_str(&read(&manifest_path)?).map_err(|e| CorpusError::BadDocument {
                path: manifest_path.clone(),
                reason: e.to_string(),
            })?;
        jobs.extend(m.users.into_iter().map(|u| (root.join(u.path), Some(u.category))));
    } else {
        let dirs = fs::read_dir(root).map_err(|source| CorpusError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        for dir in dirs.flatten() {
            let p = dir.path();
            if !p.is_dir() {
                continue;
            }
            let files = fs::read_dir(&p).map_err(|source| CorpusError::Io {
                path: p.clone(),
                source,
            })?;
            for f in files.flatten() {
                let fp = f.path();
                if fp.extension().is_some_and(|e| e == "jsonl") {
                    jobs.push((fp, None));
                }
            }
        }
    }
    jobs.sort();
    if jobs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    jobs.into_iter()
        .map(|(p, cat)| {
            let opts = IngestOptions {
                category: cat.or(opts.category),
                ..opts.clone()
            };
            load_timeline(&p, &opts)
        })
        .collect()
}

/// Tweets with `start <= timestamp < end`, in timeline order.
pub fn slice_window(
    timeline: &UserTimeline,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
) -> Result<Vec<Tweet>, CorpusError> {
    if start > end {
        return Err(CorpusError::InvertedWindow { start, end });
    }
    Ok(timeline
        .tweets
        .iter()
        .filter(|t| t.timestamp >= start && t.timestamp < end)
        .cloned()
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryRow {
    pub category: String,
    pub users: usize,
    pub avg_posts: f64,
    pub avg_span_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryStats {
    pub rows: Vec<CategoryRow>,
    /// User-count weighted averages over `rows`.
    pub all: CategoryRow,
}

impl CategoryStats {
    /// Derives the weighted all-row from per-category rows.
    pub fn from_rows(rows: Vec<CategoryRow>) -> Self {
        let users: usize = rows.iter().map(|r| r.users).sum();
        let weighted = |f: fn(&CategoryRow) -> f64| {
            if users == 0 {
                0.0
            } else {
                rows.iter().map(|r| r.users as f64 * f(r)).sum::<f64>() / users as f64
            }
        };
        let all = CategoryRow {
            category: "All (weighted)".to_string(),
            users,
            avg_posts: weighted(|r| r.avg_posts),
            avg_span_days: weighted(|r| r.avg_span_days),
        };
        CategoryStats { rows, all }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,users,avg_posts_per_user,avg_time_span_days\n");
        for r in self.rows.iter().chain(std::iter::once(&self.all)) {
            out.push_str(&format!(
                "{},{},{:.2},{:.2}\n",
                r.category,
                r.users,
                r.avg_posts,
                floor2(r.avg_span_days)
            ));
        }
        out
    }
}

/// Floors to two decimals, the reporting precision for time spans.
pub fn floor2(x: f64) -> f64 {
    (x * 100.0 + 1e-9).floor() / 100.0
}

pub fn compute_corpus_stats(corpus: &[UserTimeline]) -> Result<CategoryStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut acc: BTreeMap<Category, (usize, f64, f64)> = BTreeMap::new();
    for t in corpus {
        let c = t.category.ok_or(CorpusError::Unlabeled(t.user_id))?;
        let e = acc.entry(c).or_default();
        e.0 += 1;
        e.1 += t.tweets.len() as f64;
        e.2 += t.span_days();
    }
    let rows = acc
        .into_iter()
        .map(|(c, (n, posts, span))| CategoryRow {
            category: c.to_string(),
            users: n,
            avg_posts: posts / n as f64,
            avg_span_days: span / n as f64,
        })
        .collect();
    Ok(CategoryStats::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap()
    }

    fn account(id: u64) -> AccountInfo {
        AccountInfo {
            user_id: id,
            ..Default::default()
        }
    }

    #[test]
    fn parses_dataset_timestamp_layout() {
        let t = timestamp::parse("2021-05-29 19:42:25+00:00").unwrap();
        assert_eq!(timestamp::format(&t), "2021-05-29 19:42:25+00:00");
        let shifted = timestamp::parse("2021-05-29T21:42:25+02:00").unwrap();
        assert_eq!(t, shifted);
    }

    #[test]
    fn slice_window_picks_2019_only() {
        let tl = UserTimeline::new(
            account(1),
            vec![
                Tweet::new(1, ts(2018, 6, 27), "a"),
                Tweet::new(2, ts(2019, 5, 4), "b"),
            ],
            None,
        );
        let got = slice_window(&tl, ts(2019, 1, 1), ts(2020, 1, 1)).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].tweet_id, 2);
        assert!(slice_window(&tl, ts(2019, 1, 1), ts(2019, 1, 1)).unwrap().is_empty());
        assert_eq!(slice_window(&tl, ts(2000, 1, 1), ts(2030, 1, 1)).unwrap().len(), 2);
        assert!(matches!(
            slice_window(&tl, ts(2020, 1, 1), ts(2019, 1, 1)),
            Err(CorpusError::InvertedWindow { .. })
        ));
    }

    #[test]
    fn stats_mean_and_weighting() {
        let mk = |id, n: usize, cat| {
            let tweets = (0..n)
                .map(|i| Tweet::new(id * 1000 + i as u64, ts(2020, 1, 1) + chrono::Duration::days(i as i64), "x"))
                .collect();
            UserTimeline::new(account(id), tweets, Some(cat))
        };
        let s = compute_corpus_stats(&[mk(1, 10, Category::Adhd), mk(2, 20, Category::Adhd)]).unwrap();
        assert_eq!(s.rows[0].avg_posts, 15.0);

        let rows = vec![
            CategoryRow { category: "A".into(), users: 2, avg_posts: 10.0, avg_span_days: 0.0 },
            CategoryRow { category: "B".into(), users: 8, avg_posts: 20.0, avg_span_days: 0.0 },
        ];
        assert_eq!(CategoryStats::from_rows(rows).all.avg_posts, 18.0);
    }

    #[test]
    fn unlabeled_timeline_is_rejected() {
        let tl = UserTimeline::new(account(9), vec![Tweet::new(1, ts(2020, 1, 1), "x")], None);
        assert!(matches!(compute_corpus_stats(&[tl]), Err(CorpusError::Unlabeled(9))));
        assert!(matches!(compute_corpus_stats(&[]), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn floor2_truncates() {
        assert_eq!(floor2(1388.565137), 1388.56);
        assert_eq!(floor2(2.0), 2.0);
    }
}
