//! Two-view memory: 30-day general chunks and per-category event groups,
//! with time-decayed, importance-weighted retrieval.
//!
//! A candidate's score is
//! `cos(e_tweet, e_event) * exp(-lambda * dt_days) * (1 + k * (imp - 1)) * w_state`
//! where `w_state` is `state_coeff` when the entry's tag matches one of the
//! query's state labels and 1 otherwise. Retrieval ranks nodes by pooled
//! embedding, expands the best ones, keeps expanding until `memory_num`
//! distinct tweets are found or the store runs out, and then boosts the
//! importance of what it returns.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{timestamp, Tweet, UserTimeline};
use crate::llm::{Gateway, GatewayError};
use crate::profiling::taxonomy::same_label;
use crate::vector;

pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error("no embedding for tweet {0}")]
    MissingEmbedding(u64),
    #[error("embedding for tweet {id} has dimension {got}, store uses {expected}")]
    DimensionMismatch { id: u64, expected: usize, got: usize },
    #[error("entry {id} at {entry} is not before the event at {event}")]
    FutureEntry { id: u64, entry: String, event: String },
    #[error("invalid retrieval parameter: {0}")]
    BadParams(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub tweet_id: u64,
    #[serde(with = "timestamp")]
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub embedding: Vec<f64>,
    pub importance: f64,
    pub event_tag: Option<String>,
    /// Carried through from external data when present; never computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden_similarity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    General,
    Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryNode {
    pub kind: NodeKind,
    /// Window start date for general nodes, category label for event nodes.
    pub key: String,
    /// Latest entry timestamp.
    #[serde(with = "timestamp")]
    pub node_time: DateTime<Utc>,
    pub entries: Vec<MemoryEntry>,
    /// Mean of entry embeddings, renormalized.
    pub embedding: Vec<f64>,
    pub importance: f64,
}

impl MemoryNode {
    fn new(kind: NodeKind, key: String, entries: Vec<MemoryEntry>) -> Self {
        let embedding = vector::mean(entries.iter().map(|e| e.embedding.as_slice()))
            .and_then(|m| vector::normalized(&m))
            .unwrap_or_else(|| entries[0].embedding.clone());
        let node_time = entries.iter().map(|e| e.timestamp).max().expect("non-empty node");
        MemoryNode {
            kind,
            key,
            node_time,
            entries,
            embedding,
            importance: 1.0,
        }
    }
}

fn entry_for(t: &Tweet, embedding: &[f64], tag: Option<&str>) -> MemoryEntry {
    MemoryEntry {
        tweet_id: t.tweet_id,
        timestamp: t.timestamp,
        text: t.text.clone(),
        embedding: embedding.to_vec(),
        importance: 1.0,
        event_tag: tag.map(str::to_string),
        golden_similarity: None,
    }
}

fn lookup<'a>(embeddings: &'a HashMap<u64, Vec<f64>>, id: u64, dim: &mut Option<usize>) -> Result<&'a [f64], MemoryError> {
    let e = embeddings.get(&id).ok_or(MemoryError::MissingEmbedding(id))?;
    match dim {
        Some(d) if *d != e.len() => Err(MemoryError::DimensionMismatch {
            id,
            expected: *d,
            got: e.len(),
        }),
        _ => {
            *dim = Some(e.len());
            Ok(e)
        }
    }
}

/// Fixed windows of `chunk_days` starting at midnight UTC of the first
/// tweet's date; empty windows are omitted. `tags` gives each tweet's
/// strongest detected category, if any.
pub fn build_general_memory(
    timeline: &UserTimeline,
    embeddings: &HashMap<u64, Vec<f64>>,
    tags: &HashMap<u64, String>,
    chunk_days: i64,
) -> Result<Vec<MemoryNode>, MemoryError> {
    let Some(first) = timeline.tweets.first() else {
        return Ok(Vec::new());
    };
    let anchor = first.timestamp.date_naive().and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let width = Duration::days(chunk_days.max(1));
    let mut windows: BTreeMap<i64, Vec<MemoryEntry>> = BTreeMap::new();
    let mut dim = None;
    for t in &timeline.tweets {
        let e = lookup(embeddings, t.tweet_id, &mut dim)?;
        let idx = (t.timestamp - anchor).num_seconds().div_euclid(width.num_seconds());
        windows
            .entry(idx)
            .or_default()
            .push(entry_for(t, e, tags.get(&t.tweet_id).map(String::as_str)));
    }
    Ok(windows
        .into_iter()
        .map(|(idx, entries)| {
            let start = anchor + width * idx as i32;
            MemoryNode::new(NodeKind::General, start.format("%Y-%m-%d").to_string(), entries)
        })
        .collect())
}

/// One node per non-empty category. A tweet in several categories appears
/// in each of their nodes.
pub fn build_event_memory(
    timeline: &UserTimeline,
    embeddings: &HashMap<u64, Vec<f64>>,
    groups: &[(String, Vec<u64>)],
) -> Result<Vec<MemoryNode>, MemoryError> {
    let mut dim = None;
    let mut out = Vec::new();
    for (label, ids) in groups {
        let mut entries = Vec::new();
        for id in ids {
            let Some(t) = timeline.tweet(*id) else { continue };
            let e = lookup(embeddings, *id, &mut dim)?;
            entries.push(entry_for(t, e, Some(label)));
        }
        if !entries.is_empty() {
            entries.sort_by_key(|e| (e.timestamp, e.tweet_id));
            out.push(MemoryNode::new(NodeKind::Event, label.clone(), entries));
        }
    }
    Ok(out)
}

/// Embeds every tweet in chunks; results are keyed by tweet id.
pub fn embed_timeline(gateway: &Gateway, timeline: &UserTimeline) -> Result<HashMap<u64, Vec<f64>>, MemoryError> {
    let mut out = HashMap::new();
    for chunk in timeline.tweets.chunks(256) {
        let texts: Vec<String> = chunk
            .iter()
            .map(|t| if t.text.trim().is_empty() { "(empty)".to_string() } else { t.text.clone() })
            .collect();
        for (t, e) in chunk.iter().zip(gateway.embed(&texts)?) {
            out.insert(t.tweet_id, e.values);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    pub time_window_days: f64,
    pub node_num: usize,
    pub memory_num: usize,
    pub decay_lambda: f64,
    pub k: f64,
    pub state_coeff: f64,
    pub beta: f64,
    pub use_general: bool,
    pub use_event: bool,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            time_window_days: 365.0,
            node_num: 3,
            memory_num: 10,
            decay_lambda: 0.01,
            k: 1.0,
            state_coeff: 1.0,
            beta: 0.1,
            use_general: true,
            use_event: true,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), MemoryError> {
        let bad = |m: &str| Err(MemoryError::BadParams(m.to_string()));
        if !(self.time_window_days > 0.0) {
            return bad("time_window_days must be positive");
        }
        if self.node_num == 0 || self.memory_num == 0 {
            return bad("node_num and memory_num must be positive");
        }
        if !(self.decay_lambda >= 0.0) || !(self.k >= 0.0) || !(self.beta >= 0.0) {
            return bad("decay_lambda, k and beta must be non-negative");
        }
        if !(self.state_coeff >= 1.0) {
            return bad("state_coeff must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub similarity: f64,
    pub time_weight: f64,
    pub importance_weight: f64,
    pub state_weight: f64,
    pub delta_days: f64,
}

impl ScoreBreakdown {
    pub fn product(&self) -> f64 {
        self.similarity * self.time_weight * self.importance_weight * self.state_weight
    }
}

/// The event a retrieval is for.
#[derive(Debug, Clone, PartialEq)]
pub struct Query<'a> {
    pub embedding: &'a [f64],
    pub time: DateTime<Utc>,
    /// Labels that earn the state coefficient (usually just the event type).
    pub state_labels: Vec<String>,
}

pub fn delta_days(entry: DateTime<Utc>, event: DateTime<Utc>) -> f64 {
    (event - entry).num_milliseconds() as f64 / 86_400_000.0
}

pub fn score_candidate(
    entry: &MemoryEntry,
    query: &Query,
    params: &RetrievalParams,
) -> Result<(f64, ScoreBreakdown), MemoryError> {
    if entry.timestamp >= query.time {
        return Err(MemoryError::FutureEntry {
            id: entry.tweet_id,
            entry: timestamp::format(&entry.timestamp),
            event: timestamp::format(&query.time),
        });
    }
    let dt = delta_days(entry.timestamp, query.time);
    let state = entry
        .event_tag
        .as_deref()
        .is_some_and(|tag| query.state_labels.iter().any(|l| same_label(l, tag)));
    let b = ScoreBreakdown {
        similarity: vector::cosine(&entry.embedding, query.embedding).unwrap_or(0.0),
        time_weight: (-params.decay_lambda * dt).exp(),
        importance_weight: 1.0 + params.k * (entry.importance - 1.0),
        state_weight: if state { params.state_coeff } else { 1.0 },
        delta_days: dt,
    };
    Ok((b.product(), b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedItem {
    pub tweet_id: u64,
    #[serde(with = "timestamp")]
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub node_kind: NodeKind,
    pub node_key: String,
    pub event_tag: Option<String>,
    /// Importance when scored, before this retrieval's boost.
    pub importance: f64,
    pub score: f64,
    pub breakdown: ScoreBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    #[serde(with = "timestamp")]
    pub event_time: DateTime<Utc>,
    /// Highest score first.
    pub items: Vec<RetrievedItem>,
    /// Keys of the nodes expanded, in expansion order.
    pub source_nodes: Vec<String>,
    /// Nothing was left after the window filter.
    pub empty_window: bool,
}

impl RetrievalResult {
    pub fn empty(event_time: DateTime<Utc>) -> Self {
        RetrievalResult {
            event_time,
            items: Vec::new(),
            source_nodes: Vec::new(),
            empty_window: true,
        }
    }

    /// JSON-line records in score order, for the draft prompt.
    pub fn prompt_block(&self) -> String {
        self.items
            .iter()
            .map(|i| {
                serde_json::json!({
                    "tweet_id": i.tweet_id,
                    "timestamp_tweet": timestamp::format(&i.timestamp),
                    "text": i.text,
                })
                .to_string()
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn ids(&self) -> Vec<u64> {
        self.items.iter().map(|i| i.tweet_id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub user_id: u64,
    pub dim: usize,
    pub general: Vec<MemoryNode>,
    pub event: Vec<MemoryNode>,
}

#[derive(Serialize, Deserialize)]
struct StoreMeta {
    version: u32,
    user_id: u64,
    dim: usize,
    general: usize,
    event: usize,
}

impl MemoryStore {
    pub fn new(user_id: u64, general: Vec<MemoryNode>, event: Vec<MemoryNode>) -> Self {
        let dim = general
            .iter()
            .chain(&event)
            .next()
            .map(|n| n.embedding.len())
            .unwrap_or(0);
        MemoryStore {
            user_id,
            dim,
            general,
            event,
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &MemoryNode> {
        self.general.iter().chain(&self.event)
    }

    pub fn importance_of(&self, tweet_id: u64) -> Vec<f64> {
        self.nodes()
            .flat_map(|n| &n.entries)
            .filter(|e| e.tweet_id == tweet_id)
            .map(|e| e.importance)
            .collect()
    }

    /// Adds `beta` to the importance of every copy of each listed tweet.
    pub fn boost_importance(&mut self, ids: &[u64], beta: f64) {
        if beta == 0.0 || ids.is_empty() {
            return;
        }
        for node in self.general.iter_mut().chain(self.event.iter_mut()) {
            for e in &mut node.entries {
                if ids.contains(&e.tweet_id) {
                    e.importance += beta;
                }
            }
        }
    }

    /// Scores and ranks without changing the store.
    pub fn rank(&self, query: &Query, params: &RetrievalParams) -> Result<RetrievalResult, MemoryError> {
        params.validate()?;
        let lo = query.time - Duration::milliseconds((params.time_window_days * 86_400_000.0).round() as i64);
        let in_window = |e: &MemoryEntry| e.timestamp >= lo && e.timestamp < query.time;
        let mut nodes: Vec<(&MemoryNode, f64)> = self
            .nodes()
            .filter(|n| match n.kind {
                NodeKind::General => params.use_general,
                NodeKind::Event => params.use_event,
            })
            .filter(|n| n.entries.iter().any(in_window))
            .map(|n| (n, vector::cosine(&n.embedding, query.embedding).unwrap_or(0.0)))
            .collect();
        if nodes.is_empty() {
            return Ok(RetrievalResult::empty(query.time));
        }
        nodes.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then(a.0.kind.cmp(&b.0.kind))
                .then(a.0.key.cmp(&b.0.key))
        });

        let mut best: HashMap<u64, RetrievedItem> = HashMap::new();
        let mut source_nodes = Vec::new();
        for (i, (node, _)) in nodes.iter().enumerate() {
            if i >= params.node_num && best.len() >= params.memory_num {
                break;
            }
            source_nodes.push(node.key.clone());
            for e in node.entries.iter().filter(|e| in_window(e)) {
                let (score, breakdown) = score_candidate(e, query, params)?;
                let item = RetrievedItem {
                    tweet_id: e.tweet_id,
                    timestamp: e.timestamp,
                    text: e.text.clone(),
                    node_kind: node.kind,
                    node_key: node.key.clone(),
                    event_tag: e.event_tag.clone(),
                    importance: e.importance,
                    score,
                    breakdown,
                    golden_similarity: e.golden_similarity,
                };
                match best.get(&e.tweet_id) {
                    Some(prev) if prev.score >= score => {}
                    _ => {
                        best.insert(e.tweet_id, item);
                    }
                }
            }
        }
        let mut items: Vec<RetrievedItem> = best.into_values().collect();
        items.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.breakdown.delta_days.total_cmp(&b.breakdown.delta_days))
                .then(a.tweet_id.cmp(&b.tweet_id))
        });
        items.truncate(params.memory_num);
        Ok(RetrievalResult {
            event_time: query.time,
            items,
            source_nodes,
            empty_window: false,
        })
    }

    /// Ranks, then boosts the importance of every returned tweet by beta.
    pub fn retrieve(&mut self, query: &Query, params: &RetrievalParams) -> Result<RetrievalResult, MemoryError> {
        let result = self.rank(query, params)?;
        self.boost_importance(&result.ids(), params.beta);
        Ok(result)
    }

    /// Writes `store.json` plus one JSON file per node under `dir/nodes`.
    pub fn save(&self, dir: &Path) -> Result<(), MemoryError> {
        let io = |e: std::io::Error| MemoryError::Io(format!("{}: {e}", dir.display()));
        let nodes_dir = dir.join("nodes");
        if nodes_dir.exists() {
            std::fs::remove_dir_all(&nodes_dir).map_err(io)?;
        }
        std::fs::create_dir_all(&nodes_dir).map_err(io)?;
        let meta = StoreMeta {
            version: STORE_VERSION,
            user_id: self.user_id,
            dim: self.dim,
            general: self.general.len(),
            event: self.event.len(),
        };
        std::fs::write(dir.join("store.json"), serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(io)?;
        for (prefix, nodes) in [("general", &self.general), ("event", &self.event)] {
            for (i, n) in nodes.iter().enumerate() {
                let path = nodes_dir.join(format!("{prefix}-{i:05}.json"));
                std::fs::write(path, serde_json::to_string(n).expect("node serializes")).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, MemoryError> {
        let err = |p: &Path, e: String| MemoryError::Io(format!("{}: {e}", p.display()));
        let meta_path = dir.join("store.json");
        let raw = std::fs::read_to_string(&meta_path).map_err(|e| err(&meta_path, e.to_string()))?;
        let meta: StoreMeta = serde_json::from_str(&raw).map_err(|e| err(&meta_path, e.to_string()))?;
        if meta.version != STORE_VERSION {
            return Err(err(&meta_path, format!("unsupported store version {}", meta.version)));
        }
        let read = |prefix: &str, n: usize| -> Result<Vec<MemoryNode>, MemoryError> {
            (0..n)
                .map(|i| {
                    let p = dir.join("nodes").join(format!("{prefix}-{i:05}.json"));
                    let raw = std::fs::read_to_string(&p).map_err(|e| err(&p, e.to_string()))?;
                    serde_json::from_str(&raw).map_err(|e| err(&p, e.to_string()))
                })
                .collect()
        };
        Ok(MemoryStore {
            user_id: meta.user_id,
            dim: meta.dim,
            general: read("general", meta.general)?,
            event: read("event", meta.event)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AccountInfo;
    use proptest::prelude::*;

    fn ts(s: &str) -> DateTime<Utc> {
        timestamp::parse(s).unwrap()
    }

    fn unit_at(cos: f64) -> Vec<f64> {
        vec![cos, (1.0 - cos * cos).sqrt(), 0.0]
    }

    fn entry(id: u64, when: &str, cos: f64, imp: f64, tag: Option<&str>) -> MemoryEntry {
        MemoryEntry {
            tweet_id: id,
            timestamp: ts(when),
            text: format!("t{id}"),
            embedding: unit_at(cos),
            importance: imp,
            event_tag: tag.map(str::to_string),
            golden_similarity: None,
        }
    }

    const EVENT: &str = "2019-11-29 01:54:21+00:00";

    fn query(e: &[f64]) -> Query<'_> {
        Query {
            embedding: e,
            time: ts(EVENT),
            state_labels: vec!["Health".into()],
        }
    }

    #[test]
    fn case_study_rows() {
        let e = [1.0, 0.0, 0.0];
        let p = RetrievalParams::default();
        let (s, b) = score_candidate(&entry(1, "2019-05-04 23:25:46+00:00", 0.2394, 1.1, Some("Death")), &query(&e), &p).unwrap();
        assert!((b.time_weight - 0.1249).abs() < 5e-4, "{}", b.time_weight);
        assert!((s - 0.0329).abs() < 1e-4, "{s}");
        let (s, b) = score_candidate(&entry(2, "2018-06-27 15:20:22+00:00", 0.5045, 1.1, None), &query(&e), &p).unwrap();
        assert!((b.time_weight - 0.0056).abs() < 5e-4);
        assert!((s - 0.0031).abs() < 1e-4, "{s}");
        let (_, b) = score_candidate(&entry(3, "2018-07-18 18:13:26+00:00", 0.3, 1.0, None), &query(&e), &p).unwrap();
        assert!((b.time_weight - 0.0069).abs() < 5e-4);
    }

    #[test]
    fn zero_delta_unit_factors_is_cosine() {
        let e = [1.0, 0.0, 0.0];
        let mut en = entry(1, EVENT, 0.37, 1.0, None);
        en.timestamp -= Duration::milliseconds(0);
        // Entries at the event instant are future-dated by contract.
        assert!(score_candidate(&en, &query(&e), &RetrievalParams::default()).is_err());
        let p = RetrievalParams {
            decay_lambda: 0.0,
            ..Default::default()
        };
        en.timestamp -= Duration::seconds(1);
        let (s, _) = score_candidate(&en, &query(&e), &p).unwrap();
        assert!((s - 0.37).abs() < 1e-12);
    }

    #[test]
    fn case_study_ordering() {
        let e = [1.0, 0.0, 0.0];
        let death = MemoryNode::new(
            NodeKind::Event,
            "Death".into(),
            vec![entry(1124817424833044480, "2019-05-04 23:25:46+00:00", 0.2394, 1.1, Some("Death"))],
        );
        let cardio = MemoryNode::new(
            NodeKind::Event,
            "Cardiovascular Symptoms".into(),
            vec![entry(
                1011992643675574273,
                "2018-06-27 15:20:22+00:00",
                0.5045,
                1.1,
                Some("Cardiovascular Symptoms"),
            )],
        );
        let mut store = MemoryStore::new(1, vec![], vec![death, cardio]);
        let p = RetrievalParams {
            time_window_days: 730.0,
            ..Default::default()
        };
        let r = store.retrieve(&query(&e), &p).unwrap();
        assert_eq!(r.items[0].node_key, "Death");
        assert!((r.items[0].score - 0.0329).abs() < 1e-4);
        assert_eq!(r.items[1].node_key, "Cardiovascular Symptoms");
        assert!((r.items[1].score - 0.0031).abs() < 1e-4);
        assert_eq!(r.items[0].breakdown.importance_weight, 1.1);
        assert!((store.importance_of(1124817424833044480)[0] - 1.2).abs() < 1e-12);
    }

    fn timeline(days: &[i64]) -> UserTimeline {
        let t0 = ts("2020-12-01 08:00:00+00:00");
        let tweets = days
            .iter()
            .enumerate()
            .map(|(i, d)| Tweet::new(i as u64 + 1, t0 + Duration::days(*d), format!("tweet {i}")))
            .collect();
        UserTimeline::new(AccountInfo::default(), tweets, None)
    }

    fn embeddings(tl: &UserTimeline) -> HashMap<u64, Vec<f64>> {
        tl.tweets
            .iter()
            .map(|t| (t.tweet_id, vec![1.0, t.tweet_id as f64, 0.5]))
            .collect()
    }

    #[test]
    fn general_windows() {
        // Daily tweets over days 0..=61 cover windows [0,30), [30,60), [60,90).
        let tl = timeline(&(0..=61).collect::<Vec<_>>());
        let nodes = build_general_memory(&tl, &embeddings(&tl), &HashMap::new(), 30).unwrap();
        assert_eq!(nodes.len(), 3);
        assert_eq!(nodes.iter().map(|n| n.entries.len()).collect::<Vec<_>>(), [30, 30, 2]);
        assert_eq!(nodes[0].key, "2020-12-01");
        assert_eq!(nodes[1].key, "2020-12-31");
        // A gap leaves its window out.
        let tl = timeline(&[0, 65]);
        assert_eq!(build_general_memory(&tl, &embeddings(&tl), &HashMap::new(), 30).unwrap().len(), 2);
    }

    #[test]
    fn single_tweet_node_embedding() {
        let tl = timeline(&[0]);
        let mut emb = HashMap::new();
        emb.insert(1, vec![0.6, 0.8]);
        let n = build_general_memory(&tl, &emb, &HashMap::new(), 30).unwrap();
        assert_eq!(n[0].embedding, vec![0.6, 0.8]);
    }

    #[test]
    fn event_nodes_multi_membership() {
        let tl = timeline(&[0, 1, 2]);
        let groups = vec![
            ("Career".to_string(), vec![1, 2]),
            ("Health".to_string(), vec![2]),
            ("Legal".to_string(), vec![]),
        ];
        let nodes = build_event_memory(&tl, &embeddings(&tl), &groups).unwrap();
        assert_eq!(nodes.len(), 2);
        assert!(nodes.iter().all(|n| n.entries.iter().all(|e| e.event_tag.as_deref() == Some(n.key.as_str()))));
        assert_eq!(nodes[0].node_time, tl.tweets[1].timestamp);
        assert!(build_event_memory(&tl, &embeddings(&tl), &[]).unwrap().is_empty());
    }

    #[test]
    fn missing_embedding_is_error() {
        let tl = timeline(&[0]);
        assert_eq!(
            build_general_memory(&tl, &HashMap::new(), &HashMap::new(), 30),
            Err(MemoryError::MissingEmbedding(1))
        );
    }

    #[test]
    fn boosts_add_up() {
        let node = MemoryNode::new(NodeKind::Event, "X".into(), vec![entry(1, "2019-01-01 00:00:00+00:00", 0.5, 1.0, None)]);
        let mut s = MemoryStore::new(1, vec![node.clone()], vec![node]);
        s.boost_importance(&[1], 0.0);
        assert_eq!(s.importance_of(1), [1.0, 1.0]);
        s.boost_importance(&[1], 0.1);
        s.boost_importance(&[1], 0.1);
        assert!(s.importance_of(1).iter().all(|v| (v - 1.2).abs() < 1e-12));
    }

    #[test]
    fn outside_window_is_empty() {
        let e = [1.0, 0.0, 0.0];
        let node = MemoryNode::new(NodeKind::Event, "X".into(), vec![entry(1, "2015-01-01 00:00:00+00:00", 0.5, 1.0, None)]);
        let store = MemoryStore::new(1, vec![], vec![node]);
        let r = store.rank(&query(&e), &RetrievalParams::default()).unwrap();
        assert!(r.items.is_empty() && r.empty_window);
    }

    #[test]
    fn persistence_round_trip() {
        let tl = timeline(&[0, 1, 40]);
        let emb = embeddings(&tl);
        let g = build_general_memory(&tl, &emb, &HashMap::new(), 30).unwrap();
        let ev = build_event_memory(&tl, &emb, &[("Health".into(), vec![1, 3])]).unwrap();
        let store = MemoryStore::new(5, g, ev);
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        assert_eq!(MemoryStore::load(dir.path()).unwrap(), store);
    }

    fn arb_store() -> impl Strategy<Value = (MemoryStore, i64, Vec<f64>)> {
        let entry = (0i64..2000, prop::collection::vec(-1.0f64..1.0, 3), 1.0f64..2.0, 0usize..3);
        (prop::collection::vec(entry, 1..30), 0i64..2200, prop::collection::vec(-1.0f64..1.0, 3)).prop_map(
            |(raw, event_day, q)| {
                let t0 = ts("2018-01-01 00:00:00+00:00");
                let tags = ["A", "B", "C"];
                let entries: Vec<MemoryEntry> = raw
                    .into_iter()
                    .enumerate()
                    .map(|(i, (d, mut e, imp, tag))| {
                        if vector::norm(&e) == 0.0 {
                            e[0] = 1.0;
                        }
                        MemoryEntry {
                            tweet_id: i as u64,
                            timestamp: t0 + Duration::hours(d * 12),
                            text: String::new(),
                            embedding: e,
                            importance: imp,
                            event_tag: Some(tags[tag].to_string()),
                            golden_similarity: None,
                        }
                    })
                    .collect();
                let by_tag: Vec<MemoryNode> = tags
                    .iter()
                    .filter_map(|t| {
                        let es: Vec<_> = entries.iter().filter(|e| e.event_tag.as_deref() == Some(t)).cloned().collect();
                        (!es.is_empty()).then(|| MemoryNode::new(NodeKind::Event, t.to_string(), es))
                    })
                    .collect();
                let general = vec![MemoryNode::new(NodeKind::General, "all".into(), entries)];
                (MemoryStore::new(1, general, by_tag), event_day * 12, q)
            },
        )
    }

    proptest! {
        #[test]
        fn retrieval_invariants((store, event_hours, q) in arb_store(), n in 1usize..12, node_num in 1usize..4) {
            let t0 = ts("2018-01-01 00:00:00+00:00");
            let time = t0 + Duration::hours(event_hours);
            let query = Query { embedding: &q, time, state_labels: vec!["A".into()] };
            let params = RetrievalParams { memory_num: n, node_num, time_window_days: 365.0, state_coeff: 1.1, ..Default::default() };
            let r = store.rank(&query, &params).unwrap();
            let lo = time - Duration::days(365);
            let mut available: Vec<u64> = store.nodes().flat_map(|n| &n.entries)
                .filter(|e| e.timestamp < time && e.timestamp >= lo).map(|e| e.tweet_id).collect();
            available.sort_unstable();
            available.dedup();
            prop_assert_eq!(r.items.len(), n.min(available.len()));
            for w in r.items.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            for i in &r.items {
                prop_assert!(i.timestamp < time && i.timestamp >= lo);
                prop_assert!((i.breakdown.product() - i.score).abs() <= 1e-9);
            }
        }

        #[test]
        fn score_strictly_decreasing_in_dt(cos in 0.01f64..1.0, imp in 1.0f64..3.0, d1 in 1i64..1000, extra in 1i64..1000) {
            let e = [1.0, 0.0, 0.0];
            let p = RetrievalParams::default();
            let q = query(&e);
            let mut near = entry(1, EVENT, cos, imp, None);
            near.timestamp = q.time - Duration::hours(d1);
            let mut far = near.clone();
            far.timestamp = q.time - Duration::hours(d1 + extra);
            let (sn, _) = score_candidate(&near, &q, &p).unwrap();
            let (sf, _) = score_candidate(&far, &q, &p).unwrap();
            prop_assert!(sn > sf);
        }
    }
}
