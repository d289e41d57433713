//! Deterministic stand-ins for the chat and embedding backends.
//!
//! `MockChat` answers from, in order: exact fixtures keyed by the prompt's
//! SHA-256, substring rules, then a fallback. A fixture may hold a
//! sequence of replies; each call advances it and the last reply repeats.
//! The `Synthetic` fallback recognizes the template behind a prompt and
//! returns a reply that satisfies that template's contract, derived only
//! from the prompt text and a seed.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::hashing::{fnv1a64, HashingEmbedder};
use super::{prompt_hash, BackendError, ChatBackend, ChatReply, ChatRequest, EmbeddingBackend, Usage};
use crate::prompts::{self, PromptSet, TemplateId};

#[derive(Debug, Clone, PartialEq)]
pub enum Fallback {
    /// Unknown prompts are a fatal backend error.
    Error,
    Fixed(String),
    Synthetic { seed: u64 },
}

struct Fixture {
    replies: Vec<String>,
    served: usize,
}

struct State {
    fixtures: HashMap<String, Fixture>,
    rules: Vec<(String, String)>,
    fallback: Fallback,
    failures: Vec<BackendError>,
    log: Vec<String>,
}

pub struct MockChat {
    state: Mutex<State>,
    prompts: PromptSet,
}

impl Default for MockChat {
    fn default() -> Self {
        MockChat::new()
    }
}

impl MockChat {
    pub fn new() -> Self {
        MockChat {
            state: Mutex::new(State {
                fixtures: HashMap::new(),
                rules: Vec::new(),
                fallback: Fallback::Error,
                failures: Vec::new(),
                log: Vec::new(),
            }),
            prompts: PromptSet::default(),
        }
    }

    pub fn synthetic(seed: u64) -> Self {
        let m = MockChat::new();
        m.set_fallback(Fallback::Synthetic { seed });
        m
    }

    /// Template set used to recognize prompts in synthetic mode.
    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    fn state(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("mock poisoned")
    }

    pub fn register(&self, prompt: &str, reply: &str) {
        self.register_sequence(prompt, &[reply]);
    }

    pub fn register_sequence(&self, prompt: &str, replies: &[&str]) {
        self.register_hash(&prompt_hash(prompt), replies.iter().map(|s| s.to_string()).collect());
    }

    pub fn register_hash(&self, hash: &str, replies: Vec<String>) {
        assert!(!replies.is_empty(), "fixture needs at least one reply");
        self.state().fixtures.insert(hash.to_string(), Fixture { replies, served: 0 });
    }

    /// Any prompt containing `needle` gets `reply` unless an exact fixture
    /// matches first. Rules are tried in registration order.
    pub fn on_contains(&self, needle: &str, reply: &str) {
        self.state().rules.push((needle.to_string(), reply.to_string()));
    }

    pub fn set_fallback(&self, fallback: Fallback) {
        self.state().fallback = fallback;
    }

    /// The next calls fail with these errors, in order, before any lookup.
    pub fn inject_failures(&self, errors: Vec<BackendError>) {
        self.state().failures.extend(errors);
    }

    /// Loads fixtures from a JSON object mapping prompt hashes to a reply
    /// string or an array of replies.
    pub fn load_fixtures(&self, path: &Path) -> Result<usize, BackendError> {
        let raw = std::fs::read_to_string(path).map_err(|e| BackendError::Fatal(format!("{}: {e}", path.display())))?;
        let map: HashMap<String, Value> =
            serde_json::from_str(&raw).map_err(|e| BackendError::Fatal(format!("{}: {e}", path.display())))?;
        let n = map.len();
        for (hash, v) in map {
            let replies = match v {
                Value::String(s) => vec![s],
                Value::Array(a) => a
                    .into_iter()
                    .map(|x| x.as_str().map(str::to_string))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| BackendError::Fatal(format!("fixture {hash} must hold strings")))?,
                _ => return Err(BackendError::Fatal(format!("fixture {hash} must be a string or array"))),
            };
            if replies.is_empty() {
                return Err(BackendError::Fatal(format!("fixture {hash} is empty")));
            }
            self.register_hash(&hash, replies);
        }
        Ok(n)
    }

    /// Prompts received so far, including ones that failed.
    pub fn calls(&self) -> Vec<String> {
        self.state().log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state().log.len()
    }

    fn answer(&self, prompt: &str) -> Result<String, BackendError> {
        let mut st = self.state();
        st.log.push(prompt.to_string());
        if !st.failures.is_empty() {
            return Err(st.failures.remove(0));
        }
        if let Some(f) = st.fixtures.get_mut(&prompt_hash(prompt)) {
            let i = f.served.min(f.replies.len() - 1);
            f.served += 1;
            return Ok(f.replies[i].clone());
        }
        if let Some((_, r)) = st.rules.iter().find(|(n, _)| prompt.contains(n.as_str())) {
            return Ok(r.clone());
        }
        match st.fallback.clone() {
            Fallback::Error => Err(BackendError::Fatal(format!(
                "no fixture for prompt {}",
                &prompt_hash(prompt)[..12]
            ))),
            Fallback::Fixed(s) => Ok(s),
            Fallback::Synthetic { seed } => {
                drop(st);
                Ok(synthesize(&self.prompts, prompt, seed))
            }
        }
    }
}

impl ChatBackend for MockChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let text = self.answer(&request.prompt)?;
        Ok(ChatReply {
            usage: Some(Usage {
                prompt_tokens: super::approx_tokens(&request.prompt) as u64,
                completion_tokens: super::approx_tokens(&text) as u64,
            }),
            text,
        })
    }
}

const KEYWORD_TYPES: &[(&str, &str)] = &[
    ("job", "Career"),
    ("work", "Career"),
    ("boss", "Career"),
    ("hired", "Career"),
    ("fired", "Career"),
    ("died", "Death"),
    ("funeral", "Death"),
    ("passed away", "Death"),
    ("school", "Education"),
    ("exam", "Education"),
    ("class", "Education"),
    ("college", "Education"),
    ("rent", "Financial"),
    ("money", "Financial"),
    ("bills", "Financial"),
    ("doctor", "Health"),
    ("therapist", "Health"),
    ("hospital", "Health"),
    ("meds", "Health"),
    ("diagnosed", "Health"),
    ("court", "Legal"),
    ("lawyer", "Legal"),
    ("baby", "New_Birth_in_Family"),
    ("pregnant", "New_Birth_in_Family"),
    ("girlfriend", "Relationships_Changes"),
    ("boyfriend", "Relationships_Changes"),
    ("broke up", "Relationships_Changes"),
    ("married", "Relationships_Changes"),
    ("moving", "Relocation"),
    ("moved", "Relocation"),
    ("apartment", "Relocation"),
    ("election", "Societal"),
    ("protest", "Societal"),
];

const KEYWORD_EMOTIONS: &[(&str, &str)] = &[
    ("happy", "Joy"),
    ("love", "Joy"),
    ("excited", "Anticipation"),
    ("scared", "Fear"),
    ("anxious", "Fear"),
    ("sad", "Sadness"),
    ("miss", "Sadness"),
    ("angry", "Anger"),
    ("hate", "Anger"),
    ("wow", "Surprise"),
];

const OPENERS: &[&str] = &["honestly", "ugh", "so", "well", "ok so"];

fn rng_for(prompt: &str, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fnv1a64(prompt.as_bytes()) ^ seed)
}

fn keyword<'a>(table: &'a [(&str, &'a str)], text: &str) -> Option<&'a str> {
    let lower = text.to_lowercase();
    table.iter().find(|(k, _)| lower.contains(k)).map(|(_, v)| *v)
}

/// `(id, text)` for every JSON-line tweet record in a block.
fn tweet_records(block: &str) -> Vec<(u64, String)> {
    block
        .lines()
        .filter_map(|l| serde_json::from_str::<Value>(l.trim()).ok())
        .filter_map(|v| {
            let id = v.get("tweet_id")?.as_u64()?;
            let text = v.get("text").and_then(Value::as_str).unwrap_or("").to_string();
            Some((id, text))
        })
        .collect()
}

fn content_words(text: &str) -> Vec<String> {
    crate::text::words(text).into_iter().filter(|w| w.chars().count() > 3).collect()
}

fn first_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

fn synthesize(set: &PromptSet, prompt: &str, seed: u64) -> String {
    let mut rng = rng_for(prompt, seed);
    let Some(id) = set.identify(prompt) else {
        return json!({"reply": "synthetic"}).to_string();
    };
    let slots = set.slot_values(id, prompt).unwrap_or_default();
    let slot = |name: &str| slots.get(name).map(String::as_str).unwrap_or("");
    let reply = match id {
        TemplateId::InferAge => json!({"age": rng.gen_range(18..60), "explanation": "synthetic"}),
        TemplateId::PersonalityAnalysis => json!({
            "score": prompts::TRAIT_LEVELS.choose(&mut rng).unwrap(),
            "explanation": "synthetic",
        }),
        TemplateId::InferMaritalStatus => json!({
            "marital_status": prompts::MARITAL_STATUSES.choose(&mut rng).unwrap(),
            "explanation": "synthetic",
        }),
        TemplateId::InferWorkStatus => json!({
            "work_status": prompts::WORK_STATUSES.choose(&mut rng).unwrap(),
            "explanation": "synthetic",
        }),
        TemplateId::InferGender => json!({
            "gender": prompts::GENDERS.choose(&mut rng).unwrap(),
            "explanation": "synthetic",
        }),
        TemplateId::InferCareerDomain => json!({"career_domain": rng.gen_range(0..9), "explanation": "synthetic"}),
        TemplateId::AnalyzePostingStyle => json!({
            "description": "Short casual posts in lowercase with few hashtags and frequent first-person statements.",
        }),
        TemplateId::SelectBestTweets => {
            let mut ids: Vec<u64> = tweet_records(slot("tweets")).into_iter().map(|(i, _)| i).collect();
            ids.shuffle(&mut rng);
            ids.truncate(20);
            json!({"tweet_id": ids, "explanation": "synthetic"})
        }
        TemplateId::EventExtraction => {
            let tweet = slot("tweet");
            let text = tweet_records(tweet).pop().map(|(_, t)| t).unwrap_or_else(|| tweet.trim().to_string());
            let item = slot("item").trim();
            let event_type = keyword(KEYWORD_TYPES, &text)
                .or_else(|| prompts::EVENT_TYPES.iter().copied().find(|t| t.replace('_', " ").eq_ignore_ascii_case(item)))
                .unwrap_or("Lifestyle_Change");
            let object = content_words(&text).into_iter().take(4).collect::<Vec<_>>().join(" ");
            json!({
                "event_triple": format!("<User> <experiences> <{}>", if object.is_empty() { item } else { &object }),
                "event_type": event_type,
                "emotion": keyword(KEYWORD_EMOTIONS, &text).unwrap_or("Neutral"),
                "time_expression": Value::Null,
                "location_expression": Value::Null,
                "external_events": Value::Null,
                "related_context": Value::Null,
                "surface_variants": [first_words(&text, 12)],
                "user_role": "experiencer",
            })
        }
        TemplateId::EventRelation => {
            let records = tweet_records(slot("tweets"));
            let anchor: Vec<String> = records.first().map(|(_, t)| content_words(t)).unwrap_or_default();
            let related: Vec<u64> = records
                .iter()
                .filter(|(_, t)| content_words(t).iter().any(|w| anchor.contains(w)))
                .map(|(i, _)| *i)
                .collect();
            if related.len() < 2 {
                json!({"tweet_id": Value::Null, "event_conclusion": Value::Null, "explanation": Value::Null})
            } else {
                json!({
                    "tweet_id": related,
                    "event_conclusion": format!("recurring {}", slot("event").trim().trim_end_matches('.')),
                    "explanation": "synthetic",
                })
            }
        }
        TemplateId::TweetGeneration => {
            let event = slot("event");
            let line = event
                .lines()
                .map(str::trim)
                .find_map(|l| l.strip_prefix("1. "))
                .or_else(|| event.lines().next())
                .unwrap_or("");
            let core = first_words(line.trim(), 18).to_lowercase();
            let opener = OPENERS.choose(&mut rng).unwrap();
            json!({"simulated_tweet": format!("{opener} {core}. not sure how i feel about it")})
        }
        TemplateId::Rewriting => {
            // Casual register: lowercase, the hedge clause swapped for a short tag.
            let original = slot("simulated_tweet").trim().to_lowercase();
            let core = original.trim_end_matches('.').replace(". not sure how i feel about it", "");
            let tag = ["tbh", "idk", "lol", "ugh"].choose(&mut rng).unwrap();
            json!({"rewritten_tweet": format!("{core} {tag}"), "explanation": "synthetic"})
        }
        TemplateId::SummarizeEventGroup => {
            let first = tweet_records(slot("tweets")).first().map(|(_, t)| first_words(t, 12)).unwrap_or_default();
            json!({"summary": format!("{}: {}", slot("category").trim(), first)})
        }
    };
    reply.to_string()
}

/// Fixed vectors for chosen texts; everything else is hashed.
pub struct StaticEmbedder {
    vectors: HashMap<String, Vec<f64>>,
    fallback: HashingEmbedder,
    model_id: String,
}

impl StaticEmbedder {
    pub fn new(dim: usize) -> Self {
        StaticEmbedder {
            vectors: HashMap::new(),
            fallback: HashingEmbedder::new(dim),
            model_id: format!("static-{dim}"),
        }
    }

    pub fn with(mut self, text: &str, vector: Vec<f64>) -> Self {
        assert_eq!(vector.len(), self.fallback.dim(), "static vector has the wrong dimension");
        self.vectors.insert(text.to_string(), vector);
        self
    }
}

impl EmbeddingBackend for StaticEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts
            .iter()
            .map(|t| self.vectors.get(t).cloned().unwrap_or_else(|| self.fallback.vector(t)))
            .collect())
    }
}
