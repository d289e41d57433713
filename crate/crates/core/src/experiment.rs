//! Experiment orchestration: per-user artifacts, the memory x profile
//! ablation grid, temporal parameter sweeps and the cohort comparison.
//!
//! All randomness derives from `ExperimentConfig::seed`. With the mock
//! backend a run is a pure function of the config and the corpus, so two
//! runs produce byte-identical reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::Datelike;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, Category, IngestOptions, Tweet, UserTimeline};
use crate::evaluation::{EvalReport, Evaluator, PairReport, ReferenceMode};
use crate::llm::hashing::HashingEmbedder;
use crate::llm::mock::MockChat;
use crate::llm::openai::OpenAiBackend;
use crate::llm::{Gateway, GatewayConfig};
use crate::memory::{self, MemoryStore, RetrievalParams};
use crate::profiling::{
    assemble_profile, build_parts, score_timeline, GeneralConfig, LexiconScorer, ProfileParts, ProfileVariant,
    ProfilingParams, Taxonomy, Thresholds, TweetScores,
};
use crate::prompts::PromptSet;
use crate::sampling::{self, SampleManifest, SamplingParams};
use crate::workflow::{self, EventSummary, SimulationParams, SimulationResult, StageRecord};

pub const NO_EVENTS: &str = "no events after time-weighted sampling";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error("no users left after filtering")]
    NoUsers,
    #[error("{}", NO_EVENTS)]
    NoEvents,
    #[error("cohort {0} is empty")]
    EmptyCohort(String),
    #[error("user {user}: {reason}")]
    User { user: u64, reason: String },
    #[error(transparent)]
    Sampling(#[from] sampling::SamplingError),
    #[error("{0}")]
    Io(String),
}

fn io_err(path: &Path, e: impl fmt::Display) -> ExperimentError {
    ExperimentError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    /// OpenAI-compatible HTTP endpoint configured through `TWEETSIM_API_*`.
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Hashing embedder dimension for the mock backend.
    pub embed_dim: usize,
    /// Optional JSONL fixtures for the mock backend.
    pub fixtures: Option<PathBuf>,
    pub max_concurrency: usize,
    pub context_budget_tokens: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let g = GatewayConfig::default();
        BackendConfig {
            kind: BackendKind::Mock,
            embed_dim: 256,
            fixtures: None,
            max_concurrency: g.max_concurrency,
            context_budget_tokens: g.context_budget_tokens,
        }
    }
}

pub fn build_gateway(b: &BackendConfig, seed: u64) -> Result<Gateway, ExperimentError> {
    let mut config = GatewayConfig {
        max_concurrency: b.max_concurrency.max(1),
        context_budget_tokens: b.context_budget_tokens,
        ..GatewayConfig::default()
    };
    match b.kind {
        BackendKind::Mock => {
            let chat = MockChat::synthetic(seed);
            if let Some(f) = &b.fixtures {
                chat.load_fixtures(f).map_err(|e| io_err(f, e))?;
            }
            config.model_id = format!("mock-synthetic-{seed}");
            Ok(Gateway::new(Arc::new(chat), Arc::new(HashingEmbedder::new(b.embed_dim)), config))
        }
        BackendKind::Openai => {
            let backend = Arc::new(OpenAiBackend::from_env().map_err(|e| ExperimentError::Config(e.to_string()))?);
            config.model_id = backend.chat_model().to_string();
            Ok(Gateway::new(backend.clone(), backend, config))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TimeWindow,
    StateCoeff,
    MemoryNum,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::TimeWindow => "time_window",
            SweepAxis::StateCoeff => "state_coeff",
            SweepAxis::MemoryNum => "memory_num",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &RetrievalParams, value: f64) -> Result<RetrievalParams, ExperimentError> {
        let mut p = base.clone();
        match self {
            SweepAxis::TimeWindow => p.time_window_days = value,
            SweepAxis::StateCoeff => p.state_coeff = value,
            SweepAxis::MemoryNum => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(ExperimentError::Config(format!("memory_num must be a positive integer, got {value}")));
                }
                p.memory_num = value as usize;
            }
        }
        p.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(p)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [SweepAxis::TimeWindow, SweepAxis::StateCoeff, SweepAxis::MemoryNum]
            .into_iter()
            .find(|a| a.as_str() == s.trim())
            .ok_or_else(|| format!("unknown sweep axis {s:?}"))
    }
}

/// Which text of a simulation is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    /// The Stage I draft.
    Original,
    /// The Stage II rewrite (the draft when rewriting is off).
    Workflow,
}

impl StageKind {
    pub const ALL: [StageKind; 2] = [StageKind::Original, StageKind::Workflow];

    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Original => "original",
            StageKind::Workflow => "workflow",
        }
    }

    pub fn pick(self, r: &PairReport) -> &EvalReport {
        match self {
            StageKind::Original => &r.draft,
            StageKind::Workflow => &r.final_report,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub profile: ProfileVariant,
    /// Restrict sweeps to users with a diagnosis label.
    pub diagnosed_only: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            axis: SweepAxis::TimeWindow,
            values: vec![30.0, 90.0, 180.0, 365.0],
            profile: ProfileVariant::Event,
            diagnosed_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub memory: bool,
    pub profile: ProfileVariant,
    pub stage: StageKind,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            memory: true,
            profile: ProfileVariant::Event,
            stage: StageKind::Workflow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Corpus root (category directories or a `manifest.json`).
    pub corpus: PathBuf,
    /// Reports and lineage go here.
    pub output: PathBuf,
    /// Empty keeps every category.
    pub categories: Vec<Category>,
    pub max_users: Option<usize>,
    /// Density-aware user sampling; off when absent.
    pub user_sample: Option<SamplingParams>,
    pub memory: Vec<bool>,
    pub profiles: Vec<ProfileVariant>,
    /// Stage II on or off.
    pub workflow_enabled: bool,
    pub retrieval: RetrievalParams,
    pub events_per_user: usize,
    pub chunk_days: i64,
    /// Detection threshold p.
    pub threshold: f64,
    pub profiling: ProfilingParams,
    pub reference_mode: ReferenceMode,
    pub history_size: usize,
    pub sweep: SweepConfig,
    pub cohort: CohortConfig,
    pub backend: BackendConfig,
    pub seed: u64,
    /// Users processed in parallel; 0 picks the core count.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: PathBuf::from("corpus"),
            output: PathBuf::from("out"),
            categories: Vec::new(),
            max_users: None,
            user_sample: None,
            memory: vec![false, true],
            profiles: ProfileVariant::ALL.to_vec(),
            workflow_enabled: true,
            retrieval: RetrievalParams::default(),
            events_per_user: 5,
            chunk_days: 30,
            threshold: 0.5,
            profiling: ProfilingParams::default(),
            reference_mode: ReferenceMode::GroundTruth,
            history_size: 50,
            sweep: SweepConfig::default(),
            cohort: CohortConfig::default(),
            backend: BackendConfig::default(),
            seed: 42,
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    /// TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&raw).map_err(|e| ExperimentError::Config(e.to_string()))?
        } else {
            toml::from_str(&raw).map_err(|e| ExperimentError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        self.retrieval.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        if self.memory.is_empty() || self.profiles.is_empty() {
            return bad("memory and profiles axes must be non-empty");
        }
        if self.events_per_user == 0 {
            return bad("events_per_user must be positive");
        }
        if self.chunk_days < 1 {
            return bad("chunk_days must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        Ok(())
    }

    /// SHA-256 of the config with the output path cleared, so the same
    /// experiment written to two places has the same hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }
}

/// Orders `tweets` by repeated draws: pick a month with probability
/// proportional to its share of all tweets (exhausted months drop out),
/// then a tweet uniformly within it. The first k ids are a time-weighted
/// sample of size k.
pub fn time_weighted_order(tweets: &[&Tweet], rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut buckets: BTreeMap<(i32, u32), Vec<u64>> = BTreeMap::new();
    for t in tweets {
        buckets.entry((t.timestamp.year(), t.timestamp.month())).or_default().push(t.tweet_id);
    }
    let mut buckets: Vec<(f64, Vec<u64>)> = buckets.into_values().map(|v| (v.len() as f64, v)).collect();
    let mut out = Vec::with_capacity(tweets.len());
    while out.len() < tweets.len() {
        let total: f64 = buckets.iter().filter(|b| !b.1.is_empty()).map(|b| b.0).sum();
        let mut u = rng.gen_range(0.0..total);
        let idx = buckets
            .iter()
            .position(|b| {
                if b.1.is_empty() {
                    return false;
                }
                if u < b.0 {
                    return true;
                }
                u -= b.0;
                false
            })
            .unwrap_or_else(|| buckets.iter().rposition(|b| !b.1.is_empty()).expect("a bucket is non-empty"));
        let bucket = &mut buckets[idx].1;
        let pick = rng.gen_range(0..bucket.len());
        out.push(bucket.remove(pick));
    }
    out
}

/// Up to `k` ids drawn time-weighted, returned in chronological order.
pub fn time_weighted_sample(tweets: &[&Tweet], k: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = time_weighted_order(tweets, &mut rng);
    ids.truncate(k);
    let pos: HashMap<u64, (chrono::DateTime<chrono::Utc>, u64)> =
        tweets.iter().map(|t| (t.tweet_id, (t.timestamp, t.tweet_id))).collect();
    ids.sort_by_key(|i| pos[i]);
    ids
}

fn user_seed(seed: u64, user: u64) -> u64 {
    seed ^ user.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledEvent {
    pub summary: EventSummary,
    /// Categories detected in the source tweet; they earn the state
    /// coefficient alongside the event type.
    pub state_labels: Vec<String>,
    pub extraction: StageRecord,
}

/// Everything the grid needs for one user, built once and shared by cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedUser {
    pub timeline: UserTimeline,
    pub parts: ProfileParts,
    pub store: MemoryStore,
    pub events: Vec<SampledEvent>,
    pub errors: Vec<String>,
}

impl PreparedUser {
    pub fn user_id(&self) -> u64 {
        self.timeline.user_id
    }

    /// The user's last `n` tweets before `event`.
    pub fn history(&self, event: &EventSummary, n: usize) -> Vec<String> {
        let before: Vec<&Tweet> = self
            .timeline
            .tweets
            .iter()
            .filter(|t| t.timestamp < event.event_time && Some(t.tweet_id) != event.source_tweet_id)
            .collect();
        before[before.len().saturating_sub(n)..].iter().map(|t| t.text.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub memory: bool,
    pub profile: ProfileVariant,
}

impl Cell {
    pub fn id(&self) -> String {
        let p = match self.profile {
            ProfileVariant::None => "none",
            other => other.as_str(),
        };
        format!("mem-{}_profile-{p}", if self.memory { "on" } else { "off" })
    }

    pub fn memory_label(&self) -> &'static str {
        if self.memory {
            "w/"
        } else {
            "w/o"
        }
    }
}

/// Lineage of one simulated event: enough to recompute every reported
/// number for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub cell: String,
    pub user_id: u64,
    pub category: Option<Category>,
    pub source_tweet_id: Option<u64>,
    pub original: String,
    pub retrieval: RetrievalParams,
    pub result: SimulationResult,
    pub evaluation: PairReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: Cell,
    pub records: Vec<EventRecord>,
    /// Relative lineage paths, parallel to `records` when lineage is written.
    pub lineage: Vec<String>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub similarity: Option<f64>,
    pub fre: Option<f64>,
    pub fkgl: Option<f64>,
    pub emotion: Option<f64>,
    pub style: Option<f64>,
    pub n: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

impl MetricMeans {
    /// Per-metric means over the reports that have the metric. Readability
    /// differences are averaged as absolute values when `abs_readability`.
    pub fn from_reports(reports: &[&EvalReport], abs_readability: bool) -> Self {
        let f = |x: f64| if abs_readability { x.abs() } else { x };
        MetricMeans {
            similarity: mean(reports.iter().filter_map(|r| r.semantic)),
            fre: mean(reports.iter().filter_map(|r| r.fre_diff).map(f)),
            fkgl: mean(reports.iter().filter_map(|r| r.fkgl_diff).map(f)),
            emotion: mean(reports.iter().filter_map(|r| r.emotion_kl)),
            style: mean(reports.iter().filter_map(|r| r.style.map(|s| s.aggregate))),
            n: reports.len(),
        }
    }
}

fn cell_num(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{x:.decimals$}")).unwrap_or_else(|| "NA".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub seed: u64,
    pub config_hash: String,
    pub model_id: String,
    pub users: usize,
    pub events: usize,
}

impl ReportHeader {
    fn comment(&self) -> String {
        format!(
            "# seed={} config={} model={} users={} events={}\n",
            self.seed, self.config_hash, self.model_id, self.users, self.events
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub memory: bool,
    pub profile: ProfileVariant,
    pub stage: StageKind,
    /// "ok", or "failed" when the cell produced no evaluated events.
    pub status: String,
    pub failed: usize,
    pub means: MetricMeans,
    pub lineage_dir: String,
}

/// Rows keyed by (memory, profile, stage); readability columns are mean
/// absolute differences from the original tweets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub header: ReportHeader,
    pub rows: Vec<AblationRow>,
    pub failures: Vec<String>,
}

impl ReportTable {
    pub const CSV_HEADER: &'static str = "memory,profile,stage,status,n,failed,semantic_similarity,fre,fkgl,emotional_divergence,style_similarity,lineage";

    pub fn row(&self, memory: bool, profile: ProfileVariant, stage: StageKind) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.memory == memory && r.profile == profile && r.stage == stage)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.comment();
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = &r.means;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                if r.memory { "w/" } else { "w/o" },
                r.profile,
                r.stage.as_str(),
                r.status,
                m.n,
                r.failed,
                cell_num(m.similarity, 6),
                cell_num(m.fre, 6),
                cell_num(m.fkgl, 6),
                cell_num(m.emotion, 6),
                cell_num(m.style, 6),
                r.lineage_dir
            ));
        }
        out
    }

    /// Wide layout: one line per (memory, profile), Original and Workflow
    /// side by side for each metric.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| Memory | Profile | Semantic Similarity (Original) | Semantic Similarity (Workflow) | FRE (Original) | FRE (Workflow) | FKGL (Original) | FKGL (Workflow) | Emotional Divergence (Original) | Emotional Divergence (Workflow) | Style Similarity (Original) | Style Similarity (Workflow) |\n",
        );
        out.push_str(&format!("|{}\n", "---|".repeat(12)));
        let mut keys: Vec<(bool, ProfileVariant)> = self.rows.iter().map(|r| (r.memory, r.profile)).collect();
        keys.dedup();
        for (memory, profile) in keys {
            let get = |stage, f: fn(&MetricMeans) -> Option<f64>, d: usize| match self.row(memory, profile, stage) {
                Some(r) if r.status == "ok" => cell_num(f(&r.means), d),
                _ => "failed".to_string(),
            };
            let mut cols = vec![if memory { "w/" } else { "w/o" }.to_string(), profile.to_string()];
            let metrics: [(fn(&MetricMeans) -> Option<f64>, usize); 5] = [
                (|m| m.similarity, 4),
                (|m| m.fre, 2),
                (|m| m.fkgl, 4),
                (|m| m.emotion, 4),
                (|m| m.style, 4),
            ];
            for (f, d) in metrics {
                for stage in StageKind::ALL {
                    cols.push(get(stage, f, d));
                }
            }
            out.push_str(&format!("| {} |\n", cols.join(" | ")));
        }
        out
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), ExperimentError> {
        write_reports(dir, stem, &self.to_csv(), &self.to_markdown(), self)
    }
}

fn write_reports<T: Serialize>(dir: &Path, stem: &str, csv: &str, md: &str, json: &T) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (ext, body) in [
        ("csv", csv.to_string()),
        ("md", md.to_string()),
        ("json", serde_json::to_string_pretty(json).expect("report serializes")),
    ] {
        let p = dir.join(format!("{stem}.{ext}"));
        std::fs::write(&p, body).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// `None` for the all-user aggregate.
    pub user_id: Option<u64>,
    pub stage: StageKind,
    pub failed: usize,
    pub means: MetricMeans,
    pub lineage_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub header: ReportHeader,
    pub axis: SweepAxis,
    pub memory: bool,
    pub profile: ProfileVariant,
    pub points: Vec<SweepPoint>,
    pub failures: Vec<String>,
}

impl SweepSeries {
    pub const CSV_HEADER: &'static str =
        "parameter,value,user_id,stage,n,failed,semantic_similarity,fre,fkgl,emotional_divergence,style_similarity,lineage";

    pub fn to_csv(&self) -> String {
        let mut out = self.header.comment();
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let m = &p.means;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                self.axis,
                p.value,
                p.user_id.map(|u| u.to_string()).unwrap_or_else(|| "all".into()),
                p.stage.as_str(),
                m.n,
                p.failed,
                cell_num(m.similarity, 6),
                cell_num(m.fre, 6),
                cell_num(m.fkgl, 6),
                cell_num(m.emotion, 6),
                cell_num(m.style, 6),
                p.lineage_dir
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "| {} | User | Stage | Semantic Similarity | FRE | FKGL | Emotional Divergence | Style Similarity |\n|---|---|---|---|---|---|---|---|\n",
            self.axis
        );
        for p in &self.points {
            let m = &p.means;
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
                p.value,
                p.user_id.map(|u| u.to_string()).unwrap_or_else(|| "all".into()),
                p.stage.as_str(),
                cell_num(m.similarity, 4),
                cell_num(m.fre, 2),
                cell_num(m.fkgl, 4),
                cell_num(m.emotion, 4),
                cell_num(m.style, 4)
            ));
        }
        out
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), ExperimentError> {
        write_reports(dir, stem, &self.to_csv(), &self.to_markdown(), self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub cohort: String,
    pub users: usize,
    pub failed: usize,
    /// Readability columns are signed mean differences (simulated minus
    /// original).
    pub means: MetricMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub header: ReportHeader,
    pub cell: Cell,
    pub stage: StageKind,
    pub rows: Vec<CohortRow>,
    pub lineage_dir: String,
    pub failures: Vec<String>,
}

impl CohortTable {
    pub const CSV_HEADER: &'static str = "Category,Emotion,Style,FRE,FKGL,Similarity,users,n,failed";

    pub fn to_csv(&self) -> String {
        let mut out = self.header.comment();
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = &r.means;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.cohort,
                cell_num(m.emotion, 6),
                cell_num(m.style, 6),
                cell_num(m.fre, 6),
                cell_num(m.fkgl, 6),
                cell_num(m.similarity, 6),
                r.users,
                m.n,
                r.failed
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Category | Emotion | Style | FRE | FKGL | Similarity |\n|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let m = &r.means;
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                r.cohort,
                cell_num(m.emotion, 4),
                cell_num(m.style, 4),
                cell_num(m.fre, 4),
                cell_num(m.fkgl, 4),
                cell_num(m.similarity, 4)
            ));
        }
        out
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), ExperimentError> {
        write_reports(dir, stem, &self.to_csv(), &self.to_markdown(), self)
    }
}

/// Runs `f` over `items` on up to `workers` threads; results keep input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let mut out: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut mine = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        mine.push((i, f(&items[i])));
                    }
                    mine
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub gateway: Gateway,
    pub prompts: PromptSet,
    pub taxonomy: Taxonomy,
    pub general: GeneralConfig,
    scorer: LexiconScorer,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, gateway: Gateway, prompts: PromptSet) -> Self {
        let taxonomy = Taxonomy::default();
        Experiment {
            scorer: LexiconScorer::new(taxonomy.clone()),
            taxonomy,
            general: GeneralConfig::default(),
            config,
            gateway,
            prompts,
        }
    }

    pub fn from_config(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let gateway = build_gateway(&config.backend, config.seed)?;
        Ok(Experiment::new(config, gateway, PromptSet::default()))
    }

    fn workers(&self) -> usize {
        if self.config.workers > 0 {
            self.config.workers
        } else {
            std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
        }
    }

    fn thresholds(&self) -> Thresholds {
        Thresholds::uniform(self.config.threshold)
    }

    /// Corpus timelines after the category filter and the user cap, in
    /// user id order.
    pub fn load_users(&self) -> Result<Vec<UserTimeline>, ExperimentError> {
        let loaded = corpus::load_corpus(&self.config.corpus, &IngestOptions::default())?;
        let mut users: Vec<UserTimeline> = loaded
            .into_iter()
            .map(|(t, _)| t)
            .filter(|t| {
                self.config.categories.is_empty() || t.category.is_some_and(|c| self.config.categories.contains(&c))
            })
            .collect();
        users.sort_by_key(|t| t.user_id);
        if let Some(n) = self.config.max_users {
            users.truncate(n);
        }
        if users.is_empty() {
            return Err(ExperimentError::NoUsers);
        }
        Ok(users)
    }

    pub fn score(&self, timeline: &UserTimeline) -> Result<TweetScores, ExperimentError> {
        score_timeline(&self.scorer, &timeline.tweets).map_err(|e| ExperimentError::User {
            user: timeline.user_id,
            reason: e.to_string(),
        })
    }

    pub fn build_memory(
        &self,
        timeline: &UserTimeline,
        scores: &TweetScores,
        parts: &ProfileParts,
    ) -> Result<MemoryStore, ExperimentError> {
        let user_err = |e: memory::MemoryError| ExperimentError::User {
            user: timeline.user_id,
            reason: e.to_string(),
        };
        let th = self.thresholds();
        let embeddings = memory::embed_timeline(&self.gateway, timeline).map_err(user_err)?;
        let tags: HashMap<u64, String> = timeline
            .tweets
            .iter()
            .filter_map(|t| scores.strongest(&self.taxonomy, t.tweet_id, &th).map(|l| (t.tweet_id, l.to_string())))
            .collect();
        let general = memory::build_general_memory(timeline, &embeddings, &tags, self.config.chunk_days).map_err(user_err)?;
        let groups: Vec<(String, Vec<u64>)> = parts
            .events
            .as_ref()
            .map(|ep| ep.groups.iter().map(|g| (g.label.clone(), g.tweet_ids.clone())).collect())
            .unwrap_or_default();
        let event = memory::build_event_memory(timeline, &embeddings, &groups).map_err(user_err)?;
        Ok(MemoryStore::new(timeline.user_id, general, event))
    }

    /// Time-weighted draw over tweets with a detected category, extracting
    /// events until `events_per_user` are meaningful or three times that
    /// many have been tried.
    pub fn sample_events(&self, timeline: &UserTimeline, scores: &TweetScores) -> (Vec<SampledEvent>, Vec<String>) {
        let th = self.thresholds();
        let candidates: Vec<&Tweet> = timeline
            .tweets
            .iter()
            .filter(|t| !scores.detected(&self.taxonomy, t.tweet_id, &th).is_empty())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(user_seed(self.config.seed, timeline.user_id));
        let order = time_weighted_order(&candidates, &mut rng);
        let want = self.config.events_per_user;
        let mut events = Vec::new();
        let mut errors = Vec::new();
        for id in order.into_iter().take(want * 3) {
            if events.len() == want {
                break;
            }
            let tweet = timeline.tweet(id).expect("candidate comes from the timeline");
            let hint = scores.strongest(&self.taxonomy, id, &th);
            match workflow::extract_from_tweet(tweet, hint, &self.gateway, &self.prompts) {
                Ok((Some(summary), extraction)) => events.push(SampledEvent {
                    summary,
                    state_labels: scores
                        .detected(&self.taxonomy, id, &th)
                        .into_iter()
                        .map(|(l, _)| l.to_string())
                        .collect(),
                    extraction,
                }),
                Ok((None, _)) => {}
                Err(e) => errors.push(format!("tweet {id}: {e}")),
            }
        }
        events.sort_by_key(|e| (e.summary.event_time, e.summary.source_tweet_id));
        (events, errors)
    }

    /// Profile, memory and sampled events for one user.
    pub fn prepare(&self, timeline: UserTimeline) -> Result<PreparedUser, ExperimentError> {
        let scores = self.score(&timeline)?;
        let out = build_parts(
            &timeline,
            &scores,
            &self.taxonomy,
            &self.thresholds(),
            &self.general,
            &self.config.profiling,
            &self.gateway,
            &self.prompts,
        );
        let store = self.build_memory(&timeline, &scores, &out.parts)?;
        let (events, event_errors) = self.sample_events(&timeline, &scores);
        let mut errors = out.errors;
        errors.extend(event_errors);
        Ok(PreparedUser {
            timeline,
            parts: out.parts,
            store,
            events,
            errors,
        })
    }

    /// Prepares every user in parallel. Users that fail to prepare are
    /// reported and left out.
    pub fn prepare_all(&self, users: Vec<UserTimeline>) -> (Vec<PreparedUser>, Vec<String>) {
        let results = parallel_map(&users, self.workers(), |t| self.prepare(t.clone()));
        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for r in results {
            match r {
                Ok(p) => ok.push(p),
                Err(e) => failures.push(e.to_string()),
            }
        }
        (ok, failures)
    }

    /// Density-aware subset of prepared users; the manifest is written to
    /// the output directory.
    pub fn sample_prepared(
        &self,
        users: Vec<PreparedUser>,
        params: &SamplingParams,
    ) -> Result<(Vec<PreparedUser>, SampleManifest), ExperimentError> {
        let profiles: Vec<_> = users
            .iter()
            .map(|u| assemble_profile(ProfileVariant::Event, u.parts.clone()))
            .collect();
        let embeddings = sampling::embed_profiles(&self.gateway, &profiles)?;
        let ids: Vec<u64> = users.iter().map(PreparedUser::user_id).collect();
        let manifest = sampling::sample_users(&ids, &embeddings, params)?;
        let keep: std::collections::HashSet<u64> = manifest.user_ids.iter().copied().collect();
        Ok((users.into_iter().filter(|u| keep.contains(&u.user_id())).collect(), manifest))
    }

    /// One grid cell over every user. Each user gets a fresh copy of the
    /// memory store and its events run in time order. Lineage files go to
    /// `<lineage_root>/<dir>/` when a root is given.
    pub fn run_cell(
        &self,
        users: &[PreparedUser],
        cell: Cell,
        retrieval: &RetrievalParams,
        lineage_root: Option<&Path>,
        dir: &str,
    ) -> CellOutcome {
        let params = |labels: &[String]| SimulationParams {
            retrieval: retrieval.clone(),
            use_memory: cell.memory,
            rewrite: self.config.workflow_enabled,
            extra_state_labels: labels.to_vec(),
        };
        let evaluator = Evaluator {
            mode: self.config.reference_mode,
            ..Evaluator::new(&self.gateway)
        };
        let per_user = parallel_map(users, self.workers(), |u| {
            let mut store = u.store.clone();
            let profile = assemble_profile(cell.profile, u.parts.clone());
            let mut records = Vec::new();
            let mut failures = Vec::new();
            for ev in &u.events {
                let source = ev.summary.source_tweet_id.and_then(|i| u.timeline.tweet(i));
                let Some(original) = source else {
                    failures.push(format!("user {}: event without a source tweet", u.user_id()));
                    continue;
                };
                match workflow::simulate_post(
                    &u.timeline,
                    &profile,
                    &mut store,
                    &ev.summary,
                    &params(&ev.state_labels),
                    &self.gateway,
                    &self.prompts,
                ) {
                    Ok(result) => {
                        let history = u.history(&ev.summary, self.config.history_size);
                        let evaluation = evaluator.evaluate_pair(original, &result, &history);
                        records.push(EventRecord {
                            cell: cell.id(),
                            user_id: u.user_id(),
                            category: u.timeline.category,
                            source_tweet_id: ev.summary.source_tweet_id,
                            original: original.text.clone(),
                            retrieval: retrieval.clone(),
                            result,
                            evaluation,
                        });
                    }
                    Err(e) => failures.push(format!("user {} tweet {}: {e}", u.user_id(), original.tweet_id)),
                }
            }
            (records, failures)
        });
        let mut outcome = CellOutcome {
            cell,
            records: Vec::new(),
            lineage: Vec::new(),
            failures: Vec::new(),
        };
        for (records, failures) in per_user {
            outcome.records.extend(records);
            outcome.failures.extend(failures);
        }
        if let Some(root) = lineage_root {
            let base = root.join(dir);
            let written: Result<Vec<String>, String> = (|| {
                std::fs::create_dir_all(&base).map_err(|e| e.to_string())?;
                outcome
                    .records
                    .iter()
                    .map(|r| {
                        let name = format!("{}_{}.json", r.user_id, r.source_tweet_id.unwrap_or(0));
                        let json = serde_json::to_string_pretty(r).expect("record serializes");
                        std::fs::write(base.join(&name), json).map_err(|e| e.to_string())?;
                        Ok(format!("{dir}/{name}"))
                    })
                    .collect()
            })();
            match written {
                Ok(paths) => outcome.lineage = paths,
                Err(e) => outcome.failures.push(format!("lineage {}: {e}", base.display())),
            }
        }
        outcome
    }

    fn header(&self, users: &[PreparedUser]) -> ReportHeader {
        ReportHeader {
            seed: self.config.seed,
            config_hash: self.config.hash(),
            model_id: self.gateway.config().model_id.clone(),
            users: users.len(),
            events: users.iter().map(|u| u.events.len()).sum(),
        }
    }

    fn lineage_root(&self) -> Option<PathBuf> {
        (!self.config.output.as_os_str().is_empty()).then(|| self.config.output.join("lineage"))
    }

    fn require_events(users: &[PreparedUser]) -> Result<(), ExperimentError> {
        if users.iter().all(|u| u.events.is_empty()) {
            return Err(ExperimentError::NoEvents);
        }
        Ok(())
    }

    /// The memory x profile grid; both stages are scored from each run.
    pub fn run_ablation(&self, users: &[PreparedUser]) -> Result<ReportTable, ExperimentError> {
        Self::require_events(users)?;
        let root = self.lineage_root();
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for &memory in &self.config.memory {
            for &profile in &self.config.profiles {
                let cell = Cell { memory, profile };
                let dir = format!("ablation/{}", cell.id());
                let out = self.run_cell(users, cell, &self.config.retrieval, root.as_deref(), &dir);
                for stage in StageKind::ALL {
                    let reports: Vec<&EvalReport> = out.records.iter().map(|r| stage.pick(&r.evaluation)).collect();
                    rows.push(AblationRow {
                        memory,
                        profile,
                        stage,
                        status: if reports.is_empty() { "failed" } else { "ok" }.into(),
                        failed: out.failures.len(),
                        means: MetricMeans::from_reports(&reports, true),
                        lineage_dir: dir.clone(),
                    });
                }
                failures.extend(out.failures.into_iter().map(|f| format!("{}: {f}", cell.id())));
            }
        }
        Ok(ReportTable {
            header: self.header(users),
            rows,
            failures,
        })
    }

    /// Per-user and aggregate series along one retrieval parameter, with
    /// memory on and the configured sweep profile.
    pub fn run_temporal_sweep(
        &self,
        users: &[PreparedUser],
        axis: SweepAxis,
        values: &[f64],
    ) -> Result<SweepSeries, ExperimentError> {
        if values.is_empty() {
            return Err(ExperimentError::Config("sweep needs at least one value".into()));
        }
        let selected: Vec<PreparedUser> = users
            .iter()
            .filter(|u| !self.config.sweep.diagnosed_only || u.timeline.category.is_some_and(Category::is_diagnosed))
            .cloned()
            .collect();
        if selected.is_empty() {
            return Err(ExperimentError::NoUsers);
        }
        Self::require_events(&selected)?;
        let cell = Cell {
            memory: true,
            profile: self.config.sweep.profile,
        };
        let root = self.lineage_root();
        let mut points = Vec::new();
        let mut failures = Vec::new();
        for &value in values {
            let params = axis.apply(&self.config.retrieval, value)?;
            let dir = format!("sweep/{axis}-{value}");
            let out = self.run_cell(&selected, cell, &params, root.as_deref(), &dir);
            for stage in StageKind::ALL {
                let all: Vec<&EvalReport> = out.records.iter().map(|r| stage.pick(&r.evaluation)).collect();
                points.push(SweepPoint {
                    value,
                    user_id: None,
                    stage,
                    failed: out.failures.len(),
                    means: MetricMeans::from_reports(&all, true),
                    lineage_dir: dir.clone(),
                });
                for u in &selected {
                    let mine: Vec<&EvalReport> = out
                        .records
                        .iter()
                        .filter(|r| r.user_id == u.user_id())
                        .map(|r| stage.pick(&r.evaluation))
                        .collect();
                    let prefix = format!("user {} ", u.user_id());
                    points.push(SweepPoint {
                        value,
                        user_id: Some(u.user_id()),
                        stage,
                        failed: out.failures.iter().filter(|f| f.starts_with(&prefix)).count(),
                        means: MetricMeans::from_reports(&mine, true),
                        lineage_dir: dir.clone(),
                    });
                }
            }
            failures.extend(out.failures.into_iter().map(|f| format!("{axis}={value}: {f}")));
        }
        Ok(SweepSeries {
            header: self.header(&selected),
            axis,
            memory: cell.memory,
            profile: cell.profile,
            points,
            failures,
        })
    }

    /// Control (NEG) against diagnosed (POS) users under one configuration.
    pub fn run_cohort_comparison(&self, users: &[PreparedUser]) -> Result<CohortTable, ExperimentError> {
        let cohort_of = |u: &PreparedUser| u.timeline.category.map(Category::is_diagnosed);
        for (name, pos) in [("NEG", false), ("POS", true)] {
            if !users.iter().any(|u| cohort_of(u) == Some(pos)) {
                return Err(ExperimentError::EmptyCohort(name.into()));
            }
        }
        let labelled: Vec<PreparedUser> = users.iter().filter(|u| cohort_of(u).is_some()).cloned().collect();
        Self::require_events(&labelled)?;
        let cfg = &self.config.cohort;
        let cell = Cell {
            memory: cfg.memory,
            profile: cfg.profile,
        };
        let dir = format!("cohort/{}", cell.id());
        let root = self.lineage_root();
        let out = self.run_cell(&labelled, cell, &self.config.retrieval, root.as_deref(), &dir);
        let rows = [("NEG", false), ("POS", true)]
            .into_iter()
            .map(|(name, pos)| {
                let ids: Vec<u64> = labelled.iter().filter(|u| cohort_of(u) == Some(pos)).map(|u| u.user_id()).collect();
                let reports: Vec<&EvalReport> = out
                    .records
                    .iter()
                    .filter(|r| ids.contains(&r.user_id))
                    .map(|r| cfg.stage.pick(&r.evaluation))
                    .collect();
                CohortRow {
                    cohort: name.into(),
                    users: ids.len(),
                    failed: out
                        .failures
                        .iter()
                        .filter(|f| ids.iter().any(|i| f.starts_with(&format!("user {i} "))))
                        .count(),
                    means: MetricMeans::from_reports(&reports, false),
                }
            })
            .collect();
        Ok(CohortTable {
            header: self.header(&labelled),
            cell,
            stage: cfg.stage,
            rows,
            lineage_dir: dir,
            failures: out.failures,
        })
    }
}
