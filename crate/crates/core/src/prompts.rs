//! Prompt templates with `!{slot}!` placeholders and their reply contracts.
//!
//! Templates ship as UTF-8 files under `prompts/` and are compiled in; a
//! directory with the same file names can override them at runtime.
//! Rendering is a pure single pass: every slot in the template must be
//! filled, every supplied value must name a slot, and values are never
//! re-scanned for placeholders.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::{timestamp, Tweet};
use crate::llm::{JsonContract, ValueKind};

pub const TEMPLATE_VERSION: &str = "v1";

pub const MARITAL_STATUSES: &[&str] = &["married", "divorced", "single", "widowed", "unknown"];
pub const WORK_STATUSES: &[&str] = &["employed", "unemployed", "retired", "student", "unknown"];
pub const GENDERS: &[&str] = &["female", "male", "nonbinary", "unknown"];
pub const TRAIT_LEVELS: &[&str] = &["Low", "Medium", "High"];
pub const EVENT_TYPES: &[&str] = &[
    "Career",
    "Death",
    "Education",
    "Financial",
    "Health",
    "Identity",
    "Legal",
    "Lifestyle_Change",
    "New_Birth_in_Family",
    "Relationships_Changes",
    "Relocation",
    "Societal",
];
pub const EMOTIONS: &[&str] = &[
    "Joy",
    "Trust",
    "Fear",
    "Surprise",
    "Sadness",
    "Disgust",
    "Anger",
    "Anticipation",
    "Neutral",
    "Mixed",
];
pub const USER_ROLES: &[&str] = &["initiator", "experiencer", "observer", "object"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    InferAge,
    PersonalityAnalysis,
    InferMaritalStatus,
    InferWorkStatus,
    InferCareerDomain,
    AnalyzePostingStyle,
    SelectBestTweets,
    EventExtraction,
    EventRelation,
    TweetGeneration,
    Rewriting,
    /// Not among the published templates; mirrors the marital-status one.
    InferGender,
    /// Not among the published templates; condenses one event group.
    SummarizeEventGroup,
}

impl TemplateId {
    pub const ALL: [TemplateId; 13] = [
        TemplateId::InferAge,
        TemplateId::PersonalityAnalysis,
        TemplateId::InferMaritalStatus,
        TemplateId::InferWorkStatus,
        TemplateId::InferCareerDomain,
        TemplateId::AnalyzePostingStyle,
        TemplateId::SelectBestTweets,
        TemplateId::EventExtraction,
        TemplateId::EventRelation,
        TemplateId::TweetGeneration,
        TemplateId::Rewriting,
        TemplateId::InferGender,
        TemplateId::SummarizeEventGroup,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            TemplateId::InferAge => "infer_age",
            TemplateId::PersonalityAnalysis => "personality_analysis",
            TemplateId::InferMaritalStatus => "infer_marital_status",
            TemplateId::InferWorkStatus => "infer_work_status",
            TemplateId::InferCareerDomain => "infer_career_domain",
            TemplateId::AnalyzePostingStyle => "analyze_posting_style",
            TemplateId::SelectBestTweets => "select_best_tweets",
            TemplateId::EventExtraction => "event_extraction",
            TemplateId::EventRelation => "event_relation",
            TemplateId::TweetGeneration => "tweet_generation",
            TemplateId::Rewriting => "rewriting",
            TemplateId::InferGender => "infer_gender",
            TemplateId::SummarizeEventGroup => "summarize_event_group",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateId::InferAge => include_str!("../prompts/infer_age.txt"),
            TemplateId::PersonalityAnalysis => include_str!("../prompts/personality_analysis.txt"),
            TemplateId::InferMaritalStatus => include_str!("../prompts/infer_marital_status.txt"),
            TemplateId::InferWorkStatus => include_str!("../prompts/infer_work_status.txt"),
            TemplateId::InferCareerDomain => include_str!("../prompts/infer_career_domain.txt"),
            TemplateId::AnalyzePostingStyle => include_str!("../prompts/analyze_posting_style.txt"),
            TemplateId::SelectBestTweets => include_str!("../prompts/select_best_tweets.txt"),
            TemplateId::EventExtraction => include_str!("../prompts/event_extraction.txt"),
            TemplateId::EventRelation => include_str!("../prompts/event_relation.txt"),
            TemplateId::TweetGeneration => include_str!("../prompts/tweet_generation.txt"),
            TemplateId::Rewriting => include_str!("../prompts/rewriting.txt"),
            TemplateId::InferGender => include_str!("../prompts/infer_gender.txt"),
            TemplateId::SummarizeEventGroup => include_str!("../prompts/summarize_event_group.txt"),
        }
    }

    /// Reply contract the model must satisfy for this template.
    pub fn contract(self) -> JsonContract {
        use ValueKind::*;
        match self {
            TemplateId::InferAge => JsonContract::new("infer_age")
                .nullable("age", Integer { min: 0, max: 150 })
                .nullable("explanation", String),
            TemplateId::PersonalityAnalysis => JsonContract::new("personality_analysis")
                .field("score", Enumeration(TRAIT_LEVELS))
                .field("explanation", String),
            TemplateId::InferMaritalStatus => JsonContract::new("infer_marital_status")
                .nullable("marital_status", Enumeration(MARITAL_STATUSES))
                .nullable("explanation", String),
            TemplateId::InferWorkStatus => JsonContract::new("infer_work_status")
                .nullable("work_status", Enumeration(WORK_STATUSES))
                .nullable("explanation", String),
            TemplateId::InferCareerDomain => JsonContract::new("infer_career_domain")
                .nullable("career_domain", Integer { min: 0, max: 8 })
                .nullable("explanation", String),
            TemplateId::InferGender => JsonContract::new("infer_gender")
                .nullable("gender", Enumeration(GENDERS))
                .nullable("explanation", String),
            TemplateId::AnalyzePostingStyle => JsonContract::new("analyze_posting_style").field("description", String),
            TemplateId::SelectBestTweets => JsonContract::new("select_best_tweets")
                .field("tweet_id", IntegerList)
                .nullable("explanation", String),
            TemplateId::EventExtraction => JsonContract::new("event_extraction")
                .field("event_triple", String)
                .field("event_type", Enumeration(EVENT_TYPES))
                .field("emotion", Enumeration(EMOTIONS))
                .nullable("time_expression", String)
                .nullable("location_expression", String)
                .nullable("external_events", String)
                .nullable("related_context", String)
                .field("surface_variants", StringList)
                .field("user_role", Enumeration(USER_ROLES)),
            TemplateId::EventRelation => JsonContract::new("event_relation")
                .nullable("tweet_id", IntegerList)
                .nullable("event_conclusion", String)
                .nullable("explanation", String),
            TemplateId::TweetGeneration => JsonContract::new("tweet_generation").field("simulated_tweet", String),
            TemplateId::Rewriting => JsonContract::new("rewriting")
                .field("rewritten_tweet", String)
                .nullable("explanation", String),
            TemplateId::SummarizeEventGroup => JsonContract::new("summarize_event_group").field("summary", String),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("template {template} has unfilled slot {slot:?}")]
    UnfilledSlot { template: TemplateId, slot: String },
    #[error("template {template} has no slot {slot:?}")]
    UnknownSlot { template: TemplateId, slot: String },
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
}

enum Piece {
    Text(String),
    Slot(String),
}

fn parse(template: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("!{") {
        let after = &rest[start + 2..];
        match after.find("}!") {
            Some(end) if !after[..end].is_empty() && after[..end].chars().all(|c| c.is_alphanumeric() || c == '_') => {
                pieces.push(Piece::Text(rest[..start].to_string()));
                pieces.push(Piece::Slot(after[..end].to_string()));
                rest = &after[end + 2..];
            }
            _ => {
                pieces.push(Piece::Text(rest[..start + 2].to_string()));
                rest = after;
            }
        }
    }
    pieces.push(Piece::Text(rest.to_string()));
    pieces
}

/// The template set in use; cheap to clone.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: HashMap<TemplateId, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            templates: TemplateId::ALL
                .iter()
                .map(|&id| (id, id.builtin().strip_suffix('\n').unwrap_or(id.builtin()).to_string()))
                .collect(),
        }
    }
}

impl PromptSet {
    /// Built-ins overridden by any `<stem>.txt` present in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = PromptSet::default();
        for id in TemplateId::ALL {
            let p = dir.join(format!("{}.txt", id.file_stem()));
            if p.exists() {
                let raw = std::fs::read_to_string(&p).map_err(|e| PromptError::Io {
                    path: p.display().to_string(),
                    reason: e.to_string(),
                })?;
                set.templates
                    .insert(id, raw.strip_suffix('\n').unwrap_or(&raw).to_string());
            }
        }
        Ok(set)
    }

    pub fn template(&self, id: TemplateId) -> &str {
        &self.templates[&id]
    }

    pub fn slots(&self, id: TemplateId) -> BTreeSet<String> {
        parse(self.template(id))
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s),
                Piece::Text(_) => None,
            })
            .collect()
    }

    pub fn render(&self, id: TemplateId, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let slots = self.slots(id);
        if let Some((name, _)) = values.iter().find(|(n, _)| !slots.contains(*n)) {
            return Err(PromptError::UnknownSlot {
                template: id,
                slot: name.to_string(),
            });
        }
        let mut out = String::new();
        for piece in parse(self.template(id)) {
            match piece {
                Piece::Text(t) => out.push_str(&t),
                Piece::Slot(s) => {
                    let v = values
                        .iter()
                        .find(|(n, _)| *n == s)
                        .ok_or_else(|| PromptError::UnfilledSlot {
                            template: id,
                            slot: s.clone(),
                        })?;
                    out.push_str(v.1);
                }
            }
        }
        Ok(out)
    }

    /// Recovers slot values from a prompt rendered with `id`. Values are cut
    /// at the next literal text, so a value that itself contains that text
    /// comes back truncated. The first occurrence of a repeated slot wins.
    pub fn slot_values(&self, id: TemplateId, prompt: &str) -> Option<HashMap<String, String>> {
        let pieces = parse(self.template(id));
        let mut out = HashMap::new();
        let mut pos = 0;
        let mut i = 0;
        while i < pieces.len() {
            match &pieces[i] {
                Piece::Text(t) => {
                    if !prompt[pos..].starts_with(t.as_str()) {
                        return None;
                    }
                    pos += t.len();
                    i += 1;
                }
                Piece::Slot(s) => {
                    let next = match pieces.get(i + 1) {
                        Some(Piece::Text(t)) => t.as_str(),
                        _ => "",
                    };
                    let end = if next.is_empty() {
                        prompt.len()
                    } else {
                        pos + prompt[pos..].find(next)?
                    };
                    out.entry(s.clone()).or_insert_with(|| prompt[pos..end].to_string());
                    pos = end;
                    i += 1;
                }
            }
        }
        Some(out)
    }

    /// Which template produced a rendered prompt, judged by the template's
    /// longest slot-free line.
    pub fn identify(&self, prompt: &str) -> Option<TemplateId> {
        TemplateId::ALL.into_iter().find(|&id| {
            self.template(id)
                .lines()
                .filter(|l| !l.contains("!{"))
                .max_by_key(|l| l.len())
                .is_some_and(|marker| prompt.contains(marker))
        })
    }
}

/// One JSON object per line with `tweet_id`, `timestamp_tweet` and `text`,
/// the record layout the templates describe.
pub fn format_tweets<'a>(tweets: impl IntoIterator<Item = &'a Tweet>) -> String {
    tweets
        .into_iter()
        .map(|t| {
            json!({
                "tweet_id": t.tweet_id,
                "timestamp_tweet": timestamp::format(&t.timestamp),
                "text": t.text,
            })
            .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// At most `max` tweets spread evenly over `tweets` (first and last kept),
/// further thinned until their block fits in `budget_tokens`.
pub fn fit_tweets<'a>(tweets: &[&'a Tweet], max: usize, budget_tokens: usize) -> Vec<&'a Tweet> {
    let spread = |n: usize| -> Vec<&'a Tweet> {
        if n >= tweets.len() {
            return tweets.to_vec();
        }
        if n == 0 {
            return Vec::new();
        }
        if n == 1 {
            return vec![tweets[tweets.len() - 1]];
        }
        (0..n).map(|i| tweets[i * (tweets.len() - 1) / (n - 1)]).collect()
    };
    let fits = |sel: &[&Tweet]| crate::llm::approx_tokens(&format_tweets(sel.iter().copied())) <= budget_tokens;
    let mut n = max.min(tweets.len());
    let first = spread(n);
    if fits(&first) {
        return first;
    }
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fits(&spread(mid)) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    n = lo;
    spread(n)
}
