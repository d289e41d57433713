//! Demographic attributes: age, gender, marital status, work status and
//! career domain.
//!
//! Regex patterns propose spans. A span whose pattern fixes the value is a
//! direct extraction. Other spans, and tweets the embedding matcher finds
//! close to an attribute's lexicon centroid, are candidates that the
//! attribute prompt resolves. Conflicting direct extractions resolve to
//! the latest one and are flagged.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Tweet, UserTimeline};
use crate::llm::{AskError, Gateway};
use crate::prompts::{self, PromptSet, TemplateId};
use crate::vector;

pub const DEFAULT_PATTERNS: &str = include_str!("../../data/attribute_patterns.tsv");
pub const DEFAULT_LEXICON: &str = include_str!("../../data/attribute_lexicon.tsv");

pub const CAREER_DOMAINS: [&str; 9] = [
    "Creative Arts and Media",
    "Business and Finance",
    "Technology and Engineering",
    "Healthcare and Social Services",
    "Education and Research",
    "Legal and Public Policy",
    "Transportation and Logistics",
    "Manufacturing and Construction",
    "Hospitality and Tourism",
];

/// Words that, right after a matched number, mean it is not an age.
const UNIT_WORDS: &[&str] = &[
    "%", "percent", "min", "mins", "minute", "minutes", "hour", "hours", "hrs", "day", "days", "week", "weeks",
    "month", "months", "lbs", "lb", "kg", "pounds", "times", "dollars", "bucks", "k", "miles", "episodes", "pages",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Age,
    Gender,
    Marital,
    Work,
    Career,
}

impl Attribute {
    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "age" => Some(Attribute::Age),
            "gender" => Some(Attribute::Gender),
            "marital" => Some(Attribute::Marital),
            "work" => Some(Attribute::Work),
            "career" => Some(Attribute::Career),
            _ => None,
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::Age => "age",
            Attribute::Gender => "gender",
            Attribute::Marital => "marital",
            Attribute::Work => "work",
            Attribute::Career => "career",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Nonbinary,
}

impl Gender {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "female" => Some(Gender::Female),
            "male" => Some(Gender::Male),
            "nonbinary" | "non-binary" => Some(Gender::Nonbinary),
            _ => None,
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            Gender::Female => "Female",
            Gender::Male => "Male",
            Gender::Nonbinary => "Nonbinary",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaritalStatus {
    Married,
    Divorced,
    Single,
    Widowed,
    #[default]
    Unknown,
}

impl MaritalStatus {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "married" => Some(MaritalStatus::Married),
            "divorced" => Some(MaritalStatus::Divorced),
            "single" => Some(MaritalStatus::Single),
            "widowed" => Some(MaritalStatus::Widowed),
            "unknown" => Some(MaritalStatus::Unknown),
            _ => None,
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            MaritalStatus::Married => "Married",
            MaritalStatus::Divorced => "Divorced",
            MaritalStatus::Single => "Single",
            MaritalStatus::Widowed => "Widowed",
            MaritalStatus::Unknown => "Unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkStatus {
    Employed,
    Unemployed,
    Retired,
    Student,
    #[default]
    Unknown,
}

impl WorkStatus {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "employed" => Some(WorkStatus::Employed),
            "unemployed" => Some(WorkStatus::Unemployed),
            "retired" => Some(WorkStatus::Retired),
            "student" => Some(WorkStatus::Student),
            "unknown" => Some(WorkStatus::Unknown),
            _ => None,
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            WorkStatus::Employed => "Employed",
            WorkStatus::Unemployed => "Unemployed",
            WorkStatus::Retired => "Retired",
            WorkStatus::Student => "Student",
            WorkStatus::Unknown => "Unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagKind {
    /// Confident extractions disagreed; the latest one was kept.
    Contradiction,
    /// The prompt could not be answered; the attribute stays unset.
    GatewayFailure,
    /// The answer fell outside the attribute's valid range.
    OutOfRange,
    /// Produced by a prompt that is not among the published templates.
    Reconstructed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeFlag {
    pub attribute: Attribute,
    pub kind: FlagKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneralAttributes {
    pub age: Option<u32>,
    pub gender: Option<Gender>,
    pub marital_status: MaritalStatus,
    pub work_status: WorkStatus,
    pub career_domain: Option<u8>,
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<AttributeFlag>,
}

impl GeneralAttributes {
    pub fn career_name(&self) -> Option<&'static str> {
        self.career_domain.and_then(|d| CAREER_DOMAINS.get(d as usize).copied())
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(a) = self.age {
            if !(10..=100).contains(&a) {
                return Err(format!("age {a} outside [10, 100]"));
            }
        }
        if let Some(c) = self.career_domain {
            if c > 8 {
                return Err(format!("career domain {c} outside 0..=8"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttributeDataError {
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
}

#[derive(Debug, Clone)]
enum PatternValue {
    Fixed(String),
    Captured,
    Ambiguous,
}

#[derive(Debug, Clone)]
struct AttributePattern {
    attribute: Attribute,
    value: PatternValue,
    regex: Regex,
}

/// The editable regex bank.
#[derive(Debug, Clone)]
pub struct PatternBank {
    patterns: Vec<AttributePattern>,
}

impl Default for PatternBank {
    fn default() -> Self {
        PatternBank::parse(DEFAULT_PATTERNS).expect("shipped patterns parse")
    }
}

impl PatternBank {
    pub fn parse(raw: &str) -> Result<Self, AttributeDataError> {
        let mut patterns = Vec::new();
        for (n, line) in raw.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| AttributeDataError::BadLine { line: n + 1, reason };
            let mut parts = line.splitn(3, '\t');
            let (Some(attr), Some(value), Some(re)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected attribute<TAB>value<TAB>regex".into()));
            };
            let attribute = Attribute::parse(attr).ok_or_else(|| bad(format!("unknown attribute {attr:?}")))?;
            let regex = Regex::new(re).map_err(|e| bad(e.to_string()))?;
            let value = match value.trim() {
                "*" => {
                    if !regex.capture_names().any(|n| n == Some("value")) {
                        return Err(bad("\"*\" needs a named group `value`".into()));
                    }
                    PatternValue::Captured
                }
                "?" => PatternValue::Ambiguous,
                v => PatternValue::Fixed(v.to_string()),
            };
            patterns.push(AttributePattern { attribute, value, regex });
        }
        Ok(PatternBank { patterns })
    }

    pub fn from_file(path: &Path) -> Result<Self, AttributeDataError> {
        let raw = std::fs::read_to_string(path).map_err(|e| AttributeDataError::BadLine {
            line: 0,
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&raw)
    }
}

/// Attribute phrases whose mean embedding is the matcher's centroid.
#[derive(Debug, Clone)]
pub struct AttributeLexicon {
    pub phrases: BTreeMap<Attribute, Vec<String>>,
}

impl Default for AttributeLexicon {
    fn default() -> Self {
        AttributeLexicon::parse(DEFAULT_LEXICON).expect("shipped lexicon parses")
    }
}

impl AttributeLexicon {
    pub fn parse(raw: &str) -> Result<Self, AttributeDataError> {
        let mut phrases: BTreeMap<Attribute, Vec<String>> = BTreeMap::new();
        for (n, line) in raw.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (attr, phrase) = line.split_once('\t').ok_or_else(|| AttributeDataError::BadLine {
                line: n + 1,
                reason: "expected attribute<TAB>phrase".into(),
            })?;
            let attribute = Attribute::parse(attr).ok_or_else(|| AttributeDataError::BadLine {
                line: n + 1,
                reason: format!("unknown attribute {attr:?}"),
            })?;
            phrases.entry(attribute).or_default().push(phrase.trim().to_string());
        }
        Ok(AttributeLexicon { phrases })
    }
}

#[derive(Debug, Clone)]
pub struct GeneralConfig {
    pub ref_date: NaiveDate,
    /// Cosine threshold for the embedding matcher.
    pub tau: f64,
    pub max_prompt_tweets: usize,
    pub patterns: PatternBank,
    pub lexicon: AttributeLexicon,
}

impl Default for GeneralConfig {
    fn default() -> Self {
        GeneralConfig {
            ref_date: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            tau: 0.45,
            max_prompt_tweets: 100,
            patterns: PatternBank::default(),
            lexicon: AttributeLexicon::default(),
        }
    }
}

impl GeneralConfig {
    /// The year ages are computed against: the year of the day before
    /// `ref_date`, so a reference of 1 January counts the year just ended.
    pub fn ref_year(&self) -> i32 {
        (self.ref_date - Duration::days(1)).year()
    }
}

/// Age now, given an age stated in `stated_year`.
pub fn age_at(stated: u32, stated_year: i32, ref_year: i32) -> i64 {
    stated as i64 + (ref_year - stated_year) as i64
}

#[derive(Debug, Clone)]
struct Span<'a> {
    source: &'a Tweet,
    value: Option<String>,
}

fn normalize(text: &str) -> String {
    text.replace(['\u{2019}', '\u{2018}'], "'").to_lowercase()
}

fn followed_by_unit(text: &str, end: usize) -> bool {
    let rest = text[end..].trim_start();
    let next: String = rest
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '%')
        .collect();
    UNIT_WORDS.contains(&next.as_str())
}

fn spans<'a>(bank: &PatternBank, attribute: Attribute, sources: &[&'a Tweet]) -> Vec<Span<'a>> {
    let mut out = Vec::new();
    for t in sources {
        let text = normalize(&t.text);
        for p in bank.patterns.iter().filter(|p| p.attribute == attribute) {
            for caps in p.regex.captures_iter(&text) {
                let whole = caps.get(0).expect("group 0");
                let value = match &p.value {
                    PatternValue::Fixed(v) => Some(v.clone()),
                    PatternValue::Captured => {
                        let m = caps.name("value").expect("checked at parse");
                        if attribute == Attribute::Age && followed_by_unit(&text, whole.end()) {
                            continue;
                        }
                        Some(m.as_str().to_string())
                    }
                    PatternValue::Ambiguous => None,
                };
                out.push(Span { source: t, value });
            }
        }
    }
    out
}

/// Flags and the latest value among direct extractions. `same` decides
/// whether two values agree.
fn resolve<T: Clone + fmt::Debug>(
    attribute: Attribute,
    found: &[(DateTime<Utc>, u64, T)],
    same: impl Fn(&T, &T) -> bool,
    flags: &mut Vec<AttributeFlag>,
) -> Option<T> {
    let latest = found.iter().max_by_key(|(ts, id, _)| (*ts, *id))?;
    if found.iter().any(|(_, _, v)| !same(v, &latest.2)) {
        let distinct: Vec<String> = found.iter().map(|(_, id, v)| format!("{v:?}@{id}")).collect();
        flags.push(AttributeFlag {
            attribute,
            kind: FlagKind::Contradiction,
            detail: format!("kept {:?} from tweet {}; saw {}", latest.2, latest.1, distinct.join(", ")),
        });
    }
    Some(latest.2.clone())
}

struct Matcher<'g> {
    gateway: &'g Gateway,
    tweet_vectors: Vec<Vec<f64>>,
}

impl<'g> Matcher<'g> {
    fn new(gateway: &'g Gateway, tweets: &[Tweet]) -> Result<Self, crate::llm::GatewayError> {
        let mut tweet_vectors = Vec::with_capacity(tweets.len());
        for chunk in tweets.chunks(256) {
            let texts: Vec<String> = chunk.iter().map(|t| embeddable(&t.text)).collect();
            tweet_vectors.extend(gateway.embed(&texts)?.into_iter().map(|e| e.values));
        }
        Ok(Matcher { gateway, tweet_vectors })
    }

    fn centroid(&self, phrases: &[String]) -> Option<Vec<f64>> {
        if phrases.is_empty() {
            return None;
        }
        let vecs = self.gateway.embed(phrases).ok()?;
        let mean = vector::mean(vecs.iter().map(|e| e.values.as_slice()))?;
        vector::normalized(&mean)
    }
}

fn embeddable(text: &str) -> String {
    if text.trim().is_empty() {
        "(empty)".to_string()
    } else {
        text.to_string()
    }
}

/// Runs the three-stage flow for every attribute.
pub fn extract_general_attributes(
    timeline: &UserTimeline,
    config: &GeneralConfig,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> GeneralAttributes {
    let mut out = GeneralAttributes {
        description: timeline.account.description.clone(),
        ..GeneralAttributes::default()
    };
    let tweets: Vec<&Tweet> = timeline.tweets.iter().collect();
    let matcher = match Matcher::new(gateway, &timeline.tweets) {
        Ok(m) => Some(m),
        Err(e) => {
            log::warn!("embedding matcher unavailable for user {}: {e}", timeline.user_id);
            None
        }
    };
    // The account description counts as the most recent evidence.
    let description_tweet = Tweet::new(
        0,
        config.ref_date.and_hms_opt(0, 0, 0).expect("midnight").and_utc(),
        timeline.account.description.clone(),
    );

    for attribute in [Attribute::Age, Attribute::Gender, Attribute::Marital, Attribute::Work] {
        let mut sources = tweets.clone();
        if matches!(attribute, Attribute::Gender | Attribute::Work) && !description_tweet.text.trim().is_empty() {
            sources.push(&description_tweet);
        }
        let found = spans(&config.patterns, attribute, &sources);
        let direct: Vec<&Span> = found.iter().filter(|s| s.value.is_some()).collect();
        let resolved = resolve_direct(attribute, &direct, config, &mut out);
        if resolved {
            continue;
        }
        // Candidates: ambiguous spans plus tweets near the attribute centroid.
        let mut candidate_ids: Vec<u64> = found.iter().filter(|s| s.value.is_none()).map(|s| s.source.tweet_id).collect();
        if let Some(m) = &matcher {
            if let Some(c) = config.lexicon.phrases.get(&attribute).and_then(|p| m.centroid(p)) {
                for (t, v) in timeline.tweets.iter().zip(&m.tweet_vectors) {
                    if vector::cosine(v, &c).is_some_and(|s| s >= config.tau) {
                        candidate_ids.push(t.tweet_id);
                    }
                }
            }
        }
        candidate_ids.sort_unstable();
        candidate_ids.dedup();
        let mut candidates: Vec<&Tweet> = candidate_ids
            .iter()
            .filter_map(|id| {
                if *id == 0 {
                    Some(&description_tweet)
                } else {
                    timeline.tweet(*id)
                }
            })
            .collect();
        if candidates.is_empty() {
            continue;
        }
        candidates.sort_by_key(|t| (t.timestamp, t.tweet_id));
        ask_attribute(attribute, &candidates, config, gateway, prompts, &mut out);
    }

    if !timeline.account.description.trim().is_empty() {
        let prompt = prompts.render(
            TemplateId::InferCareerDomain,
            &[("description", timeline.account.description.as_str())],
        );
        match prompt.map_err(|e| e.to_string()).and_then(|p| {
            gateway
                .ask(&p, &TemplateId::InferCareerDomain.contract(), true)
                .map_err(|e| e.to_string())
        }) {
            Ok(a) => out.career_domain = a.record.and_then(|r| r.int("career_domain")).map(|d| d as u8),
            Err(e) => out.flags.push(AttributeFlag {
                attribute: Attribute::Career,
                kind: FlagKind::GatewayFailure,
                detail: e,
            }),
        }
    }
    out
}

fn resolve_direct(attribute: Attribute, direct: &[&Span], config: &GeneralConfig, out: &mut GeneralAttributes) -> bool {
    let key = |s: &Span| (s.source.timestamp, s.source.tweet_id);
    match attribute {
        Attribute::Age => {
            let ages: Vec<(DateTime<Utc>, u64, i64)> = direct
                .iter()
                .filter_map(|s| {
                    let stated: u32 = s.value.as_ref()?.parse().ok()?;
                    let a = age_at(stated, s.source.timestamp.year(), config.ref_year());
                    (10..=100).contains(&a).then(|| (key(s).0, key(s).1, a))
                })
                .collect();
            // Birthdays make ages one year apart consistent.
            let age = resolve(attribute, &ages, |a, b| (a - b).abs() <= 1, &mut out.flags);
            out.age = age.map(|a| a as u32);
            age.is_some()
        }
        Attribute::Gender => {
            let vals: Vec<_> = direct
                .iter()
                .filter_map(|s| Gender::parse(s.value.as_ref()?).map(|g| (key(s).0, key(s).1, g)))
                .collect();
            out.gender = resolve(attribute, &vals, |a, b| a == b, &mut out.flags);
            out.gender.is_some()
        }
        Attribute::Marital => {
            let vals: Vec<_> = direct
                .iter()
                .filter_map(|s| MaritalStatus::parse(s.value.as_ref()?).map(|g| (key(s).0, key(s).1, g)))
                .collect();
            let v = resolve(attribute, &vals, |a, b| a == b, &mut out.flags);
            out.marital_status = v.unwrap_or_default();
            v.is_some()
        }
        Attribute::Work => {
            let vals: Vec<_> = direct
                .iter()
                .filter_map(|s| WorkStatus::parse(s.value.as_ref()?).map(|g| (key(s).0, key(s).1, g)))
                .collect();
            let v = resolve(attribute, &vals, |a, b| a == b, &mut out.flags);
            out.work_status = v.unwrap_or_default();
            v.is_some()
        }
        Attribute::Career => false,
    }
}

fn ask_attribute(
    attribute: Attribute,
    candidates: &[&Tweet],
    config: &GeneralConfig,
    gateway: &Gateway,
    prompts: &PromptSet,
    out: &mut GeneralAttributes,
) {
    let id = match attribute {
        Attribute::Age => TemplateId::InferAge,
        Attribute::Gender => TemplateId::InferGender,
        Attribute::Marital => TemplateId::InferMaritalStatus,
        Attribute::Work => TemplateId::InferWorkStatus,
        Attribute::Career => return,
    };
    let budget = gateway.config().context_budget_tokens.saturating_sub(crate::llm::approx_tokens(prompts.template(id)) + 512);
    let picked = prompts::fit_tweets(candidates, config.max_prompt_tweets, budget);
    let block = prompts::format_tweets(picked.iter().copied());
    let answer = prompts
        .render(id, &[("tweets", block.as_str())])
        .map_err(|e| e.to_string())
        .and_then(|p| gateway.ask(&p, &id.contract(), true).map_err(|e: AskError| e.to_string()));
    let record = match answer {
        Ok(a) => a.record,
        Err(e) => {
            out.flags.push(AttributeFlag {
                attribute,
                kind: FlagKind::GatewayFailure,
                detail: e,
            });
            return;
        }
    };
    if attribute == Attribute::Gender {
        out.flags.push(AttributeFlag {
            attribute,
            kind: FlagKind::Reconstructed,
            detail: "inferred with the reconstructed gender prompt".into(),
        });
    }
    let Some(r) = record else { return };
    match attribute {
        Attribute::Age => {
            if let Some(a) = r.int("age") {
                if (10..=100).contains(&a) {
                    out.age = Some(a as u32);
                } else {
                    out.flags.push(AttributeFlag {
                        attribute,
                        kind: FlagKind::OutOfRange,
                        detail: format!("model answered age {a}"),
                    });
                }
            }
        }
        Attribute::Gender => out.gender = r.str("gender").and_then(Gender::parse),
        Attribute::Marital => {
            out.marital_status = r.str("marital_status").and_then(MaritalStatus::parse).unwrap_or_default()
        }
        Attribute::Work => out.work_status = r.str("work_status").and_then(WorkStatus::parse).unwrap_or_default(),
        Attribute::Career => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{timestamp, AccountInfo};
    use crate::llm::hashing::HashingEmbedder;
    use crate::llm::mock::MockChat;
    use crate::llm::GatewayConfig;
    use std::sync::Arc;

    fn tl(tweets: &[(&str, &str)], description: &str) -> UserTimeline {
        let tweets = tweets
            .iter()
            .enumerate()
            .map(|(i, (ts, text))| Tweet::new(i as u64 + 1, timestamp::parse(ts).unwrap(), *text))
            .collect();
        UserTimeline::new(
            AccountInfo {
                user_id: 7,
                description: description.into(),
                ..Default::default()
            },
            tweets,
            None,
        )
    }

    fn gw(mock: Arc<MockChat>) -> Gateway {
        Gateway::new(mock, Arc::new(HashingEmbedder::new(64)), GatewayConfig::default())
    }

    #[test]
    fn ref_year_is_year_before_new_year() {
        assert_eq!(GeneralConfig::default().ref_year(), 2020);
        assert_eq!(age_at(21, 2013, 2020), 28);
    }

    #[test]
    fn im_21_in_2013() {
        let mock = Arc::new(MockChat::new());
        let t = tl(&[("2013-05-01 10:00:00+00:00", "I'm 21 and still can't cook")], "");
        let g = extract_general_attributes(&t, &GeneralConfig::default(), &gw(mock.clone()), &PromptSet::default());
        assert_eq!(g.age, Some(28));
    }

    #[test]
    fn unit_words_are_not_ages() {
        let mock = Arc::new(MockChat::new());
        mock.set_fallback(crate::llm::mock::Fallback::Fixed("None".into()));
        let t = tl(&[("2019-05-01 10:00:00+00:00", "im 20 minutes late again")], "");
        let g = extract_general_attributes(&t, &GeneralConfig::default(), &gw(mock), &PromptSet::default());
        assert_eq!(g.age, None);
    }

    #[test]
    fn no_evidence_leaves_unset_without_calls() {
        let mock = Arc::new(MockChat::new());
        let t = tl(&[("2019-05-01 10:00:00+00:00", "pizza tonight")], "");
        let g = extract_general_attributes(&t, &GeneralConfig::default(), &gw(mock.clone()), &PromptSet::default());
        assert_eq!(g.age, None);
        assert_eq!(g.gender, None);
        assert_eq!(g.marital_status, MaritalStatus::Unknown);
        assert_eq!(g.work_status, WorkStatus::Unknown);
        assert_eq!(g.career_domain, None);
        assert_eq!(mock.call_count(), 0);
    }

    #[test]
    fn contradiction_keeps_latest_and_flags() {
        let mock = Arc::new(MockChat::new());
        let t = tl(
            &[
                ("2016-01-01 10:00:00+00:00", "so glad I'm single right now"),
                ("2019-06-01 10:00:00+00:00", "my husband made dinner"),
            ],
            "",
        );
        let g = extract_general_attributes(&t, &GeneralConfig::default(), &gw(mock), &PromptSet::default());
        assert_eq!(g.marital_status, MaritalStatus::Married);
        assert!(g.flags.iter().any(|f| f.attribute == Attribute::Marital && f.kind == FlagKind::Contradiction));
    }

    #[test]
    fn career_from_description() {
        let mock = Arc::new(MockChat::new());
        mock.on_contains(
            "Illustrator and concept artist",
            r#"{"career_domain": 0, "explanation": "illustration is visual art"}"#,
        );
        let t = tl(&[("2019-05-01 10:00:00+00:00", "pizza tonight")], "Illustrator and concept artist");
        let g = extract_general_attributes(&t, &GeneralConfig::default(), &gw(mock), &PromptSet::default());
        assert_eq!(g.career_domain, Some(0));
        assert_eq!(g.career_name(), Some("Creative Arts and Media"));
    }

    #[test]
    fn gateway_failure_is_flagged() {
        let mock = Arc::new(MockChat::new());
        let t = tl(&[("2019-05-01 10:00:00+00:00", "pizza tonight")], "Illustrator");
        let g = extract_general_attributes(&t, &GeneralConfig::default(), &gw(mock), &PromptSet::default());
        assert_eq!(g.career_domain, None);
        assert!(g.flags.iter().any(|f| f.kind == FlagKind::GatewayFailure));
    }

    #[test]
    fn ambiguous_span_goes_to_llm() {
        let mock = Arc::new(MockChat::new());
        mock.on_contains("Infer the age", r#"{"age": 30, "explanation": "born in 1990"}"#);
        let t = tl(&[("2019-05-01 10:00:00+00:00", "I was born in 1990, feeling old")], "");
        let g = extract_general_attributes(&t, &GeneralConfig::default(), &gw(mock), &PromptSet::default());
        assert_eq!(g.age, Some(30));
    }
}
