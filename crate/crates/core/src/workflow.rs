//! Event extraction, the event-grounded draft and the persona rewrite.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{timestamp, Tweet, UserTimeline};
use crate::llm::{prompt_hash, AskError, ContractError, Gateway, GatewayError, Record};
use crate::memory::{MemoryError, MemoryStore, Query, RetrievalParams, RetrievalResult};
use crate::profiling::{BigFive, Profile, StyleProfile};
use crate::prompts::{self, PromptSet, TemplateId};

macro_rules! label_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn parse(s: &str) -> Option<Self> {
                let n = s.trim().replace(' ', "_").to_lowercase();
                Self::ALL.iter().copied().find(|v| v.as_str().to_lowercase() == n)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

label_enum!(EventType {
    Career => "Career",
    Death => "Death",
    Education => "Education",
    Financial => "Financial",
    Health => "Health",
    Identity => "Identity",
    Legal => "Legal",
    LifestyleChange => "Lifestyle_Change",
    NewBirthInFamily => "New_Birth_in_Family",
    RelationshipsChanges => "Relationships_Changes",
    Relocation => "Relocation",
    Societal => "Societal",
});

impl EventType {
    /// Spaced form used by the taxonomy, e.g. "Lifestyle Change".
    pub fn label(self) -> String {
        self.as_str().replace('_', " ")
    }
}

label_enum!(Emotion {
    Joy => "Joy",
    Trust => "Trust",
    Fear => "Fear",
    Surprise => "Surprise",
    Sadness => "Sadness",
    Disgust => "Disgust",
    Anger => "Anger",
    Anticipation => "Anticipation",
    Neutral => "Neutral",
    Mixed => "Mixed",
});

label_enum!(UserRole {
    Initiator => "initiator",
    Experiencer => "experiencer",
    Observer => "observer",
    Object => "object",
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl EventTriple {
    /// Parses `<subject> <predicate> <object>`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut parts = Vec::new();
        let mut rest = s.trim();
        while let Some(start) = rest.find('<') {
            let end = rest[start..].find('>')? + start;
            parts.push(rest[start + 1..end].trim().to_string());
            rest = &rest[end + 1..];
        }
        if !rest.trim().is_empty() || parts.len() != 3 || parts.iter().any(String::is_empty) {
            return None;
        }
        let mut it = parts.into_iter();
        Some(EventTriple {
            subject: it.next()?,
            predicate: it.next()?,
            object: it.next()?,
        })
    }

    pub fn sentence(&self) -> String {
        format!("{} {} {}", self.subject, self.predicate, self.object)
    }
}

impl fmt::Display for EventTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}> <{}> <{}>", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub source_tweet_id: Option<u64>,
    pub event_triple: EventTriple,
    pub event_type: EventType,
    pub emotion: Emotion,
    pub time_expression: Option<String>,
    pub location_expression: Option<String>,
    pub external_events: Option<String>,
    pub related_context: Option<String>,
    pub surface_variants: Vec<String>,
    pub user_role: UserRole,
    #[serde(with = "timestamp")]
    pub event_time: DateTime<Utc>,
}

fn opt_line(v: &Option<String>) -> &str {
    v.as_deref().unwrap_or("null")
}

impl EventSummary {
    /// The event block of the draft prompt.
    pub fn to_block(&self) -> String {
        let mut lines = vec![
            format!("Event Triple: {}", self.event_triple),
            format!("Event Type: {}", self.event_type),
            format!("Emotion: {}", self.emotion),
            format!("Time Expression: {}", opt_line(&self.time_expression)),
            format!("Location Expression: {}", opt_line(&self.location_expression)),
            format!("External Events: {}", opt_line(&self.external_events)),
            format!("Related Context: {}", opt_line(&self.related_context)),
            "Surface Variants:".to_string(),
        ];
        lines.extend(self.surface_variants.iter().enumerate().map(|(i, v)| format!("{}. {}", i + 1, v)));
        lines.push(format!("User Role: {}", self.user_role));
        lines.join("\n")
    }

    /// Text embedded to query memory.
    pub fn query_text(&self) -> String {
        let mut parts = vec![self.event_triple.sentence()];
        parts.extend(self.surface_variants.iter().cloned());
        parts.join(" ")
    }

    fn from_record(r: &Record, source_tweet_id: Option<u64>, event_time: DateTime<Utc>) -> Option<Self> {
        let opt = |k: &str| r.str(k).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string);
        Some(EventSummary {
            source_tweet_id,
            event_triple: EventTriple::parse(r.str("event_triple")?)?,
            event_type: EventType::parse(r.str("event_type")?)?,
            emotion: Emotion::parse(r.str("emotion")?)?,
            time_expression: opt("time_expression"),
            location_expression: opt("location_expression"),
            external_events: opt("external_events"),
            related_context: opt("related_context"),
            surface_variants: r
                .strings("surface_variants")
                .into_iter()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            user_role: UserRole::parse(r.str("user_role")?)?,
            event_time,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Extraction,
    Relation,
    Retrieval,
    Draft,
    Rewrite,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Extraction => "extraction",
            Stage::Relation => "relation",
            Stage::Retrieval => "retrieval",
            Stage::Draft => "draft",
            Stage::Rewrite => "rewrite",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Ask(#[from] AskError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage} stage failed: {failure}")]
pub struct WorkflowError {
    pub stage: Stage,
    pub failure: StageFailure,
}

fn fail(stage: Stage) -> impl Fn(StageFailure) -> WorkflowError {
    move |failure| WorkflowError { stage, failure }
}

/// One prompt sent during a simulation, with every raw reply it got.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub template: String,
    pub prompt_hash: String,
    pub prompt: String,
    pub responses: Vec<String>,
}

impl StageRecord {
    fn new(stage: Stage, id: TemplateId, prompt: String, responses: Vec<String>) -> Self {
        StageRecord {
            stage,
            template: id.file_stem().to_string(),
            prompt_hash: prompt_hash(&prompt),
            prompt,
            responses,
        }
    }
}

/// Extracts the event in `text`. `None` when the model judges it not
/// meaningful to the user.
pub fn extract_event(
    text: &str,
    source_tweet_id: Option<u64>,
    event_time: DateTime<Utc>,
    category_hint: Option<&str>,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<(Option<EventSummary>, StageRecord), WorkflowError> {
    let err = fail(Stage::Extraction);
    if text.trim().is_empty() {
        return Err(err(StageFailure::Input("empty source text".into())));
    }
    let id = TemplateId::EventExtraction;
    let item = category_hint.map(|h| h.replace('_', " ")).unwrap_or_else(|| "a life event".into());
    let prompt = prompts
        .render(id, &[("item", item.as_str()), ("tweet", text.trim())])
        .expect("extraction template slots are fixed");
    let check = |r: &Record| {
        if EventTriple::parse(r.str("event_triple").unwrap_or("")).is_none() {
            return Err(ContractError::Invalid {
                key: "event_triple".into(),
                reason: "expected <subject> <predicate> <object>".into(),
            });
        }
        if r.strings("surface_variants").iter().all(|s| s.trim().is_empty()) {
            return Err(ContractError::Invalid {
                key: "surface_variants".into(),
                reason: "at least one variant is required".into(),
            });
        }
        Ok(())
    };
    let answer = gateway
        .ask_checked(&prompt, &id.contract(), true, check)
        .map_err(|e| err(e.into()))?;
    let summary = answer
        .record
        .map(|r| EventSummary::from_record(&r, source_tweet_id, event_time).expect("record validated"));
    Ok((summary, StageRecord::new(Stage::Extraction, id, prompt, answer.raw)))
}

pub fn extract_from_tweet(
    tweet: &Tweet,
    category_hint: Option<&str>,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<(Option<EventSummary>, StageRecord), WorkflowError> {
    extract_event(&tweet.text, Some(tweet.tweet_id), tweet.timestamp, category_hint, gateway, prompts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCluster {
    pub tweet_ids: Vec<u64>,
    pub conclusion: String,
    pub explanation: String,
}

/// Keeps the earliest tweet of each UTC day.
pub fn one_per_day<'a>(tweets: &[&'a Tweet]) -> Vec<&'a Tweet> {
    let mut sorted = tweets.to_vec();
    sorted.sort_by_key(|t| (t.timestamp, t.tweet_id));
    let mut days = HashSet::new();
    sorted.into_iter().filter(|t| days.insert(t.timestamp.date_naive())).collect()
}

/// Asks whether tweets of one category form a related cluster. Fewer than
/// two distinct days means no prompt is sent.
pub fn link_related_events(
    tweets: &[&Tweet],
    event_label: &str,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<(Option<EventCluster>, Option<StageRecord>), WorkflowError> {
    let err = fail(Stage::Relation);
    let kept = one_per_day(tweets);
    if kept.len() < 2 {
        return Ok((None, None));
    }
    let id = TemplateId::EventRelation;
    let block = prompts::format_tweets(kept.iter().copied());
    let prompt = prompts
        .render(id, &[("event", event_label), ("tweets", block.as_str())])
        .expect("relation template slots are fixed");
    let allowed: HashSet<u64> = kept.iter().map(|t| t.tweet_id).collect();
    let mut raw = Vec::new();
    let mut record = None;
    for _ in 0..2 {
        let answer = gateway.ask(&prompt, &id.contract(), true).map_err(|e| err(e.into()))?;
        raw.extend(answer.raw);
        record = answer.record;
        let ids = record.as_ref().map(|r| r.ids("tweet_id")).unwrap_or_default();
        if ids.iter().all(|i| allowed.contains(i)) {
            break;
        }
        log::debug!("relation reply named tweets outside the input; re-prompting");
    }
    let stage = StageRecord::new(Stage::Relation, id, prompt, raw);
    let Some(r) = record else {
        return Ok((None, Some(stage)));
    };
    let mut seen = HashSet::new();
    let ids: Vec<u64> = r
        .ids("tweet_id")
        .into_iter()
        .filter(|i| allowed.contains(i) && seen.insert(*i))
        .collect();
    let conclusion = r.str("event_conclusion").unwrap_or("").trim().to_string();
    if ids.len() < 2 || conclusion.is_empty() {
        return Ok((None, Some(stage)));
    }
    Ok((
        Some(EventCluster {
            tweet_ids: ids,
            conclusion,
            explanation: r.str("explanation").unwrap_or("").trim().to_string(),
        }),
        Some(stage),
    ))
}

fn nonempty(s: &str, stage: Stage, what: &str) -> Result<String, WorkflowError> {
    let t = s.trim();
    if t.is_empty() {
        return Err(WorkflowError {
            stage,
            failure: StageFailure::Input(format!("{what} is empty")),
        });
    }
    Ok(t.to_string())
}

/// Stage I. Blocks that an ablation removes are rendered empty.
pub fn generate_draft(
    profile: &Profile,
    memory: &RetrievalResult,
    event: &EventSummary,
    style_exemplars: &[&Tweet],
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<(String, StageRecord), WorkflowError> {
    let id = TemplateId::TweetGeneration;
    let profile_block = profile.generation_block();
    let memory_block = memory.prompt_block();
    let event_block = event.to_block();
    let style_block = prompts::format_tweets(style_exemplars.iter().copied());
    let prompt = prompts
        .render(
            id,
            &[
                ("profile", profile_block.as_str()),
                ("event", event_block.as_str()),
                ("memory", memory_block.as_str()),
                ("style_tweets", style_block.as_str()),
            ],
        )
        .expect("generation template slots are fixed");
    let check = |r: &Record| match r.str("simulated_tweet") {
        Some(s) if !s.trim().is_empty() => Ok(()),
        _ => Err(ContractError::Invalid {
            key: "simulated_tweet".into(),
            reason: "empty".into(),
        }),
    };
    let answer = gateway
        .ask_checked(&prompt, &id.contract(), false, check)
        .map_err(|e| fail(Stage::Draft)(e.into()))?;
    let draft = nonempty(answer.record.as_ref().and_then(|r| r.str("simulated_tweet")).unwrap_or(""), Stage::Draft, "draft")?;
    Ok((draft, StageRecord::new(Stage::Draft, id, prompt, answer.raw)))
}

/// The style block of the rewrite prompt; empty when nothing is known.
pub fn style_block(style: Option<&StyleProfile>, exemplars: &[&Tweet]) -> String {
    let mut parts = Vec::new();
    if let Some(d) = style.map(|s| s.description.trim()).filter(|d| !d.is_empty()) {
        parts.push(format!("User's Posting Style Summary:\n{d}"));
    }
    if !exemplars.is_empty() {
        parts.push(format!(
            "Some of the User's Past Tweets:\n{}",
            prompts::format_tweets(exemplars.iter().copied())
        ));
    }
    parts.join("\n\n")
}

/// Stage II. Returns the rewritten tweet and the model's explanation.
pub fn rewrite_style(
    draft: &str,
    big_five: Option<&BigFive>,
    style: Option<&StyleProfile>,
    exemplars: &[&Tweet],
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<(String, String, StageRecord), WorkflowError> {
    let draft = nonempty(draft, Stage::Rewrite, "draft")?;
    let id = TemplateId::Rewriting;
    let traits = big_five.map(|b| b.lines().join("\n")).unwrap_or_default();
    let style = style_block(style, exemplars);
    let prompt = prompts
        .render(
            id,
            &[
                ("big_five", traits.as_str()),
                ("simulated_tweet", draft.as_str()),
                ("style", style.as_str()),
            ],
        )
        .expect("rewriting template slots are fixed");
    let check = |r: &Record| match r.str("rewritten_tweet") {
        Some(s) if !s.trim().is_empty() => Ok(()),
        _ => Err(ContractError::Invalid {
            key: "rewritten_tweet".into(),
            reason: "empty".into(),
        }),
    };
    let answer = gateway
        .ask_checked(&prompt, &id.contract(), false, check)
        .map_err(|e| fail(Stage::Rewrite)(e.into()))?;
    let r = answer.record.as_ref().expect("None not allowed");
    let text = r.str("rewritten_tweet").unwrap_or("").trim().to_string();
    let explanation = r.str("explanation").unwrap_or("").trim().to_string();
    Ok((text, explanation, StageRecord::new(Stage::Rewrite, id, prompt, answer.raw)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub retrieval: RetrievalParams,
    /// `false` is the memory-free arm: nothing is retrieved.
    pub use_memory: bool,
    /// `false` stops after Stage I; the final text is the draft.
    pub rewrite: bool,
    /// Extra labels earning the state coefficient beyond the event type,
    /// e.g. symptoms detected in the source tweet.
    pub extra_state_labels: Vec<String>,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            retrieval: RetrievalParams::default(),
            use_memory: true,
            rewrite: true,
            extra_state_labels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub user_id: u64,
    pub event: EventSummary,
    pub draft: String,
    #[serde(rename = "final")]
    pub final_text: String,
    pub rewritten: bool,
    pub rewrite_explanation: String,
    pub retrieval: RetrievalResult,
    pub style_exemplars: Vec<u64>,
    pub stages: Vec<StageRecord>,
}

impl SimulationResult {
    pub fn prompts_used(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.template.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    /// `<dir>/<user>_<source tweet>_<config>.json`
    pub fn save(&self, dir: &Path, config: &str) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let source = self.event.source_tweet_id.map(|i| i.to_string()).unwrap_or_else(|| "context".into());
        let path = dir.join(format!("{}_{}_{}.json", self.user_id, source, config));
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }
}

/// Exemplars strictly before the event, excluding the source tweet.
pub fn exemplars_before<'a>(timeline: &'a UserTimeline, style: Option<&StyleProfile>, event: &EventSummary) -> Vec<&'a Tweet> {
    style
        .map(|s| {
            s.exemplars
                .iter()
                .filter_map(|i| timeline.tweet(*i))
                .filter(|t| t.timestamp < event.event_time && Some(t.tweet_id) != event.source_tweet_id)
                .collect()
        })
        .unwrap_or_default()
}

/// Retrieval, Stage I and (unless disabled) Stage II for one event.
/// Retrieval boosts the store, so events of one user should run in order.
pub fn simulate_post(
    timeline: &UserTimeline,
    profile: &Profile,
    store: &mut MemoryStore,
    event: &EventSummary,
    params: &SimulationParams,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<SimulationResult, WorkflowError> {
    let retrieval = if params.use_memory {
        let err = fail(Stage::Retrieval);
        let embedding = gateway.embed_one(&event.query_text()).map_err(|e| err(e.into()))?;
        let mut state_labels = vec![event.event_type.label()];
        state_labels.extend(params.extra_state_labels.iter().cloned());
        let query = Query {
            embedding: &embedding.values,
            time: event.event_time,
            state_labels,
        };
        store.retrieve(&query, &params.retrieval).map_err(|e| err(e.into()))?
    } else {
        RetrievalResult {
            empty_window: false,
            ..RetrievalResult::empty(event.event_time)
        }
    };
    let exemplars = exemplars_before(timeline, profile.style.as_ref(), event);
    let mut stages = Vec::new();
    let (draft, rec) = generate_draft(profile, &retrieval, event, &exemplars, gateway, prompts)?;
    stages.push(rec);
    let (final_text, rewrite_explanation) = if params.rewrite {
        let (text, expl, rec) = rewrite_style(
            &draft,
            profile.big_five.as_ref(),
            profile.style.as_ref(),
            &exemplars,
            gateway,
            prompts,
        )?;
        stages.push(rec);
        (text, expl)
    } else {
        (draft.clone(), String::new())
    };
    Ok(SimulationResult {
        user_id: timeline.user_id,
        event: event.clone(),
        draft,
        final_text,
        rewritten: params.rewrite,
        rewrite_explanation,
        retrieval,
        style_exemplars: exemplars.iter().map(|t| t.tweet_id).collect(),
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AccountInfo;
    use crate::llm::hashing::HashingEmbedder;
    use crate::llm::mock::{Fallback, MockChat};
    use crate::llm::GatewayConfig;
    use crate::profiling::{assemble_profile, ProfileParts, ProfileVariant, TraitLevel};
    use std::sync::Arc;

    fn ts(s: &str) -> DateTime<Utc> {
        timestamp::parse(s).unwrap()
    }

    fn gw(mock: Arc<MockChat>) -> Gateway {
        Gateway::new(mock, Arc::new(HashingEmbedder::new(64)), GatewayConfig::default())
    }

    const DIAGNOSIS: &str = "Update: I went to the doctor because of the slump I was going through and ended up diagnosed with a wombo combo of anxiety and severe depression on top of my already diagnosed ADHD. How I managed to graduate like this is a mystery.";

    const EXTRACTED: &str = r#"{
        "event_triple": "<User> <was diagnosed with> <severe depression>",
        "event_type": "Health",
        "emotion": "Sadness",
        "time_expression": "recently",
        "location_expression": null,
        "external_events": null,
        "related_context": "User sought medical attention due to a persistent slump and received multiple diagnoses.",
        "surface_variants": ["I recently got diagnosed with severe depression.", "After visiting the doctor, I found out I have severe depression.", "Recently diagnosed with severe depression while feeling down."],
        "user_role": "experiencer"
    }"#;

    #[test]
    fn triple_parsing() {
        let t = EventTriple::parse("<User> <was diagnosed with> <severe depression>").unwrap();
        assert_eq!(t.predicate, "was diagnosed with");
        assert_eq!(t.to_string(), "<User> <was diagnosed with> <severe depression>");
        assert!(EventTriple::parse("User was diagnosed").is_none());
        assert!(EventTriple::parse("<a> <b>").is_none());
        assert!(EventTriple::parse("<a> <b> <c> trailing").is_none());
    }

    #[test]
    fn enum_domains_match_prompt() {
        assert_eq!(
            EventType::ALL.iter().map(|e| e.as_str()).collect::<Vec<_>>(),
            prompts::EVENT_TYPES
        );
        assert_eq!(Emotion::ALL.iter().map(|e| e.as_str()).collect::<Vec<_>>(), prompts::EMOTIONS);
        assert_eq!(UserRole::ALL.iter().map(|e| e.as_str()).collect::<Vec<_>>(), prompts::USER_ROLES);
        assert_eq!(EventType::parse("new birth in family"), Some(EventType::NewBirthInFamily));
    }

    #[test]
    fn diagnosis_extraction() {
        let mock = Arc::new(MockChat::new());
        mock.set_fallback(Fallback::Fixed(EXTRACTED.into()));
        let t = Tweet::new(1200231490409373698, ts("2019-11-29 01:54:21+00:00"), DIAGNOSIS);
        let (e, rec) = extract_from_tweet(&t, Some("Health"), &gw(mock), &PromptSet::default()).unwrap();
        let e = e.unwrap();
        assert_eq!(e.event_triple.subject, "User");
        assert_eq!(e.event_triple.object, "severe depression");
        assert_eq!(e.event_type, EventType::Health);
        assert_eq!(e.user_role, UserRole::Experiencer);
        assert_eq!(e.event_time, t.timestamp);
        assert_eq!(e.location_expression, None);
        assert_eq!(rec.template, "event_extraction");
        assert!(rec.prompt.contains(DIAGNOSIS));
    }

    #[test]
    fn trivial_is_none() {
        let mock = Arc::new(MockChat::new());
        mock.set_fallback(Fallback::Fixed("None".into()));
        let (e, _) = extract_event("To the toilet?", None, ts("2019-01-01 00:00:00+00:00"), None, &gw(mock), &PromptSet::default()).unwrap();
        assert!(e.is_none());
    }

    #[test]
    fn bad_emotion_fails_after_reprompt() {
        let mock = Arc::new(MockChat::new());
        mock.set_fallback(Fallback::Fixed(EXTRACTED.replace("Sadness", "Terrified")));
        let err = extract_event("x", None, ts("2019-01-01 00:00:00+00:00"), None, &gw(mock.clone()), &PromptSet::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Extraction);
        assert!(matches!(
            err.failure,
            StageFailure::Ask(AskError::Contract { error: ContractError::OutOfDomain { .. }, .. })
        ));
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn malformed_triple_is_violation() {
        let mock = Arc::new(MockChat::new());
        mock.set_fallback(Fallback::Fixed(EXTRACTED.replace("<User> <was diagnosed with> <severe depression>", "User diagnosed")));
        assert!(extract_event("x", None, ts("2019-01-01 00:00:00+00:00"), None, &gw(mock), &PromptSet::default()).is_err());
    }

    fn therapist() -> Vec<Tweet> {
        vec![
            Tweet::new(1, ts("2018-10-11 10:00:00+00:00"), "thinking about finding a therapist"),
            Tweet::new(2, ts("2019-03-02 10:00:00+00:00"), "called a therapist office today"),
            Tweet::new(3, ts("2019-09-14 10:00:00+00:00"), "therapist waitlist is so long"),
            Tweet::new(4, ts("2020-07-20 17:24:08+00:00"), "i had my first appointment with my therapist today"),
        ]
    }

    #[test]
    fn therapist_cluster() {
        let mock = Arc::new(MockChat::new());
        mock.set_fallback(Fallback::Fixed(
            r#"{"tweet_id": [1, 2, 3, 4], "event_conclusion": "Had a first appointment with a therapist.", "explanation": "sequence"}"#.into(),
        ));
        let tweets = therapist();
        let refs: Vec<&Tweet> = tweets.iter().collect();
        let (c, _) = link_related_events(&refs, "Health", &gw(mock), &PromptSet::default()).unwrap();
        let c = c.unwrap();
        assert_eq!(c.conclusion, "Had a first appointment with a therapist.");
        assert_eq!(c.tweet_ids, [1, 2, 3, 4]);
    }

    #[test]
    fn unrelated_is_none() {
        let mock = Arc::new(MockChat::new());
        mock.set_fallback(Fallback::Fixed(r#"{"tweet_id": None, "event_conclusion": None, "explanation": None}"#.into()));
        let tweets = therapist();
        let refs: Vec<&Tweet> = tweets.iter().collect();
        assert!(link_related_events(&refs, "Health", &gw(mock), &PromptSet::default()).unwrap().0.is_none());
    }

    #[test]
    fn same_day_prefiltered() {
        let mock = Arc::new(MockChat::new());
        let tweets = [
            Tweet::new(1, ts("2019-01-01 08:00:00+00:00"), "a"),
            Tweet::new(2, ts("2019-01-01 20:00:00+00:00"), "b"),
        ];
        let refs: Vec<&Tweet> = tweets.iter().collect();
        let (c, rec) = link_related_events(&refs, "Health", &gw(mock.clone()), &PromptSet::default()).unwrap();
        assert!(c.is_none() && rec.is_none());
        assert_eq!(mock.call_count(), 0);
    }

    #[test]
    fn foreign_ids_dropped_after_reprompt() {
        let mock = Arc::new(MockChat::new());
        mock.set_fallback(Fallback::Fixed(
            r#"{"tweet_id": [1, 2, 99], "event_conclusion": "x", "explanation": "y"}"#.into(),
        ));
        let tweets = therapist();
        let refs: Vec<&Tweet> = tweets.iter().collect();
        let (c, _) = link_related_events(&refs, "Health", &gw(mock.clone()), &PromptSet::default()).unwrap();
        assert_eq!(c.unwrap().tweet_ids, [1, 2]);
        assert_eq!(mock.call_count(), 2);
    }

    fn event() -> EventSummary {
        let r = crate::llm::parse_strict_json(EXTRACTED, &TemplateId::EventExtraction.contract()).unwrap();
        EventSummary::from_record(&r, Some(9), ts("2019-11-29 01:54:21+00:00")).unwrap()
    }

    #[test]
    fn draft_echoes_variant() {
        let mock = Arc::new(MockChat::synthetic(1));
        let profile = assemble_profile(ProfileVariant::None, ProfileParts::default());
        let (draft, rec) = generate_draft(
            &profile,
            &RetrievalResult::empty(ts("2019-11-29 01:54:21+00:00")),
            &event(),
            &[],
            &gw(mock),
            &PromptSet::default(),
        )
        .unwrap();
        assert!(draft.contains("i recently got diagnosed with severe depression"));
        let slots = PromptSet::default().slot_values(TemplateId::TweetGeneration, &rec.prompt).unwrap();
        assert_eq!(slots["profile"], "");
        assert_eq!(slots["memory"], "");
    }

    #[test]
    fn identity_rewrite() {
        let mock = Arc::new(MockChat::new());
        let draft = "After visiting the doctor, I found out I have severe depression.";
        mock.set_fallback(Fallback::Fixed(format!(r#"{{"rewritten_tweet": "{draft}", "explanation": null}}"#)));
        let b = BigFive::uniform(TraitLevel::Medium);
        let (text, _, rec) = rewrite_style(draft, Some(&b), None, &[], &gw(mock), &PromptSet::default()).unwrap();
        assert_eq!(text, draft);
        let slots = PromptSet::default().slot_values(TemplateId::Rewriting, &rec.prompt).unwrap();
        assert_eq!(slots["style"], "");
        assert!(slots["big_five"].contains("Openness: Medium"));
    }

    #[test]
    fn empty_draft_rejected() {
        let mock = Arc::new(MockChat::synthetic(0));
        let err = rewrite_style("  ", None, None, &[], &gw(mock.clone()), &PromptSet::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Rewrite);
        assert_eq!(mock.call_count(), 0);
    }

    fn timeline() -> UserTimeline {
        let tweets = vec![
            Tweet::new(1, ts("2019-05-04 23:25:46+00:00"), "my grandmother passed away"),
            Tweet::new(2, ts("2019-10-01 12:00:00+00:00"), "heart racing all day again"),
            Tweet::new(9, ts("2019-11-29 01:54:21+00:00"), DIAGNOSIS),
            Tweet::new(10, ts("2019-12-05 01:00:00+00:00"), "future tweet"),
        ];
        UserTimeline::new(AccountInfo::default(), tweets, None)
    }

    fn store(tl: &UserTimeline, g: &Gateway) -> MemoryStore {
        let emb = crate::memory::embed_timeline(g, tl).unwrap();
        let general = crate::memory::build_general_memory(tl, &emb, &Default::default(), 30).unwrap();
        MemoryStore::new(tl.user_id, general, vec![])
    }

    fn full_profile(tl: &UserTimeline) -> Profile {
        assemble_profile(
            ProfileVariant::Normal,
            ProfileParts {
                user_id: tl.user_id,
                account: Some(tl.account.clone()),
                big_five: Some(BigFive::uniform(TraitLevel::High)),
                style: Some(StyleProfile {
                    description: "all caps".into(),
                    exemplars: vec![1, 10],
                    rounds: 1,
                }),
                ..Default::default()
            },
        )
    }

    #[test]
    fn workflow_off_final_is_draft() {
        let tl = timeline();
        let g = gw(Arc::new(MockChat::synthetic(5)));
        let mut s = store(&tl, &g);
        let params = SimulationParams {
            rewrite: false,
            ..Default::default()
        };
        let r = simulate_post(&tl, &full_profile(&tl), &mut s, &event(), &params, &g, &PromptSet::default()).unwrap();
        assert_eq!(r.final_text, r.draft);
        assert_eq!(r.prompts_used(), ["tweet_generation"]);
    }

    #[test]
    fn no_leakage_into_prompts() {
        let tl = timeline();
        let g = gw(Arc::new(MockChat::synthetic(5)));
        let mut s = store(&tl, &g);
        let r = simulate_post(&tl, &full_profile(&tl), &mut s, &event(), &SimulationParams::default(), &g, &PromptSet::default()).unwrap();
        assert_eq!(r.retrieval.ids(), [2, 1]);
        assert_eq!(r.style_exemplars, [1]);
        for st in &r.stages {
            assert!(!st.prompt.contains("future tweet"));
            assert!(!st.prompt.contains("wombo combo"));
        }
        assert_eq!(r.prompts_used(), ["tweet_generation", "rewriting"]);
    }

    #[test]
    fn memory_off_and_empty_profile() {
        let tl = timeline();
        let g = gw(Arc::new(MockChat::synthetic(5)));
        let mut s = store(&tl, &g);
        let params = SimulationParams {
            use_memory: false,
            ..Default::default()
        };
        let p = assemble_profile(ProfileVariant::None, ProfileParts::default());
        let r = simulate_post(&tl, &p, &mut s, &event(), &params, &g, &PromptSet::default()).unwrap();
        assert!(r.retrieval.items.is_empty());
        assert!(!r.final_text.is_empty());
        assert_eq!(s.importance_of(1), [1.0]);
    }

    #[test]
    fn deterministic_with_fixtures() {
        let tl = timeline();
        let run = || {
            let g = gw(Arc::new(MockChat::synthetic(11)));
            let mut s = store(&tl, &g);
            simulate_post(&tl, &full_profile(&tl), &mut s, &event(), &SimulationParams::default(), &g, &PromptSet::default())
                .unwrap()
                .to_json()
        };
        assert_eq!(run(), run());
    }
}
