//! Per-tweet life-event and symptom scores.
//!
//! The baseline scorer counts lexicon hits: `min(1, 10 * hits / tokens)`,
//! so one hit per ten tokens saturates. Scores from an external classifier
//! can be loaded from a file of `tweet_id` followed by one real per
//! category (life events first, then symptoms).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::taxonomy::{CategoryKind, Taxonomy};
use crate::corpus::Tweet;
use crate::text;

pub const DEFAULT_LEXICON: &str = include_str!("../../data/event_lexicon.tsv");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("expected {expected} scores, got {got}")]
    WrongDimension { expected: usize, got: usize },
    #[error("score {value} for {category} is outside [0, 1]")]
    OutOfRange { category: String, value: f64 },
    #[error("no scores for tweet {0}")]
    MissingTweet(u64),
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSymptomScores {
    pub life_event: Vec<f64>,
    pub symptom: Vec<f64>,
}

impl EventSymptomScores {
    pub fn zeros(taxonomy: &Taxonomy) -> Self {
        let (l, s) = taxonomy.dims();
        EventSymptomScores {
            life_event: vec![0.0; l],
            symptom: vec![0.0; s],
        }
    }

    /// Splits a flat vector (life events, then symptoms) after checking
    /// shape and range.
    pub fn from_flat(taxonomy: &Taxonomy, flat: &[f64]) -> Result<Self, ScoreError> {
        if flat.len() != taxonomy.total_dims() {
            return Err(ScoreError::WrongDimension {
                expected: taxonomy.total_dims(),
                got: flat.len(),
            });
        }
        let s = EventSymptomScores {
            life_event: flat[..taxonomy.life_events.len()].to_vec(),
            symptom: flat[taxonomy.life_events.len()..].to_vec(),
        };
        s.validate(taxonomy)?;
        Ok(s)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.life_event.iter().chain(&self.symptom).copied().collect()
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), ScoreError> {
        let (l, s) = taxonomy.dims();
        if self.life_event.len() != l || self.symptom.len() != s {
            return Err(ScoreError::WrongDimension {
                expected: l + s,
                got: self.life_event.len() + self.symptom.len(),
            });
        }
        for ((label, _), v) in taxonomy.labels().zip(self.flat()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(ScoreError::OutOfRange {
                    category: label.to_string(),
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, taxonomy: &Taxonomy, label: &str) -> Option<f64> {
        taxonomy.index_of(label).map(|i| self.flat()[i])
    }
}

pub trait EventScorer: Send + Sync {
    fn taxonomy(&self) -> &Taxonomy;
    fn score(&self, tweet: &Tweet) -> Result<EventSymptomScores, ScoreError>;
}

/// Scores every tweet, checking each result's shape.
pub fn score_timeline(scorer: &dyn EventScorer, tweets: &[Tweet]) -> Result<TweetScores, ScoreError> {
    let mut out = TweetScores::default();
    for t in tweets {
        let s = scorer.score(t)?;
        s.validate(scorer.taxonomy())?;
        out.scores.insert(t.tweet_id, s);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Pattern {
    tokens: Vec<String>,
    /// The last token matches as a prefix.
    prefix: bool,
}

impl Pattern {
    fn matches_at(&self, words: &[String], i: usize) -> bool {
        if i + self.tokens.len() > words.len() {
            return false;
        }
        let last = self.tokens.len() - 1;
        self.tokens.iter().enumerate().all(|(j, t)| {
            if j == last && self.prefix {
                words[i + j].starts_with(t.as_str())
            } else {
                words[i + j] == *t
            }
        })
    }
}

fn tokens(text: &str) -> Vec<String> {
    text::words(&text.replace('\u{2019}', "'"))
}

#[derive(Debug, Clone)]
pub struct LexiconScorer {
    taxonomy: Taxonomy,
    patterns: Vec<Vec<Pattern>>,
}

impl LexiconScorer {
    /// The shipped lexicon over `taxonomy`. Lexicon categories missing
    /// from the taxonomy are ignored.
    pub fn new(taxonomy: Taxonomy) -> Self {
        Self::from_lexicon(taxonomy, DEFAULT_LEXICON).expect("shipped lexicon parses")
    }

    /// Parses `category<TAB>phrase` lines; `#` starts a comment line and a
    /// trailing `*` makes the phrase's last word a prefix match.
    pub fn from_lexicon(taxonomy: Taxonomy, lexicon: &str) -> Result<Self, ScoreError> {
        let mut patterns = vec![Vec::new(); taxonomy.total_dims()];
        for (n, line) in lexicon.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, phrase) = line.split_once('\t').ok_or_else(|| ScoreError::BadLine {
                line: n + 1,
                reason: "expected category<TAB>phrase".into(),
            })?;
            let Some(idx) = taxonomy.index_of(label) else {
                if Taxonomy::extended().index_of(label).is_some() {
                    continue;
                }
                return Err(ScoreError::UnknownCategory(label.to_string()));
            };
            let phrase = phrase.trim();
            let prefix = phrase.ends_with('*');
            let toks = tokens(phrase.trim_end_matches('*'));
            if toks.is_empty() {
                return Err(ScoreError::BadLine {
                    line: n + 1,
                    reason: "empty phrase".into(),
                });
            }
            patterns[idx].push(Pattern { tokens: toks, prefix });
        }
        Ok(LexiconScorer { taxonomy, patterns })
    }

    pub fn from_file(taxonomy: Taxonomy, path: &Path) -> Result<Self, ScoreError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ScoreError::Io(format!("{}: {e}", path.display())))?;
        Self::from_lexicon(taxonomy, &raw)
    }

    /// Number of positions where some phrase of category `idx` starts.
    fn hits(&self, idx: usize, words: &[String]) -> usize {
        (0..words.len())
            .filter(|&i| self.patterns[idx].iter().any(|p| p.matches_at(words, i)))
            .count()
    }
}

impl EventScorer for LexiconScorer {
    fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    fn score(&self, tweet: &Tweet) -> Result<EventSymptomScores, ScoreError> {
        let words = tokens(&tweet.text);
        let flat: Vec<f64> = (0..self.taxonomy.total_dims())
            .map(|idx| {
                if words.is_empty() {
                    0.0
                } else {
                    (10.0 * self.hits(idx, &words) as f64 / words.len() as f64).min(1.0)
                }
            })
            .collect();
        EventSymptomScores::from_flat(&self.taxonomy, &flat)
    }
}

/// Scores for a set of tweets, keyed by tweet id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TweetScores {
    pub scores: HashMap<u64, EventSymptomScores>,
}

impl TweetScores {
    pub fn get(&self, id: u64) -> Option<&EventSymptomScores> {
        self.scores.get(&id)
    }

    /// Writes `tweet_id,v1,...,vn` lines under a header naming the
    /// categories, ordered by tweet id.
    pub fn to_csv(&self, taxonomy: &Taxonomy) -> String {
        let mut out = String::from("tweet_id");
        for (label, _) in taxonomy.labels() {
            out.push(',');
            out.push_str(&csv_field(label));
        }
        out.push('\n');
        let mut ids: Vec<&u64> = self.scores.keys().collect();
        ids.sort();
        for id in ids {
            let _ = write!(out, "{id}");
            for v in self.scores[id].flat() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Reads the format written by [`TweetScores::to_csv`]. A header line is
    /// optional; every data line must carry exactly one value per category.
    pub fn from_csv(taxonomy: &Taxonomy, raw: &str) -> Result<Self, ScoreError> {
        let mut out = TweetScores::default();
        for (n, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("tweet_id") || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let bad = |reason: String| ScoreError::BadLine { line: n + 1, reason };
            let id: u64 = fields
                .next()
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| bad("bad tweet id".into()))?;
            let values = fields
                .map(|f| f.trim().parse::<f64>().map_err(|_| bad(format!("bad number {f:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let s = EventSymptomScores::from_flat(taxonomy, &values).map_err(|e| bad(e.to_string()))?;
            out.scores.insert(id, s);
        }
        Ok(out)
    }

    pub fn load(taxonomy: &Taxonomy, path: &Path) -> Result<Self, ScoreError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ScoreError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(taxonomy, &raw)
    }

    pub fn save(&self, taxonomy: &Taxonomy, path: &Path) -> Result<(), ScoreError> {
        std::fs::write(path, self.to_csv(taxonomy)).map_err(|e| ScoreError::Io(format!("{}: {e}", path.display())))
    }

    /// Labels whose score meets its threshold, for one tweet.
    pub fn detected<'t>(&self, taxonomy: &'t Taxonomy, id: u64, thresholds: &Thresholds) -> Vec<(&'t str, CategoryKind)> {
        let Some(s) = self.get(id) else {
            return Vec::new();
        };
        taxonomy
            .labels()
            .zip(s.flat())
            .filter(|((label, _), v)| *v >= thresholds.for_label(label))
            .map(|(l, _)| l)
            .collect()
    }

    /// The highest-scoring category at or above threshold; earlier
    /// categories win ties.
    pub fn strongest<'t>(&self, taxonomy: &'t Taxonomy, id: u64, thresholds: &Thresholds) -> Option<&'t str> {
        let s = self.get(id)?;
        let mut best: Option<(&str, f64)> = None;
        for ((label, _), v) in taxonomy.labels().zip(s.flat()) {
            if v >= thresholds.for_label(label) && best.is_none_or(|(_, b)| v > b) {
                best = Some((label, v));
            }
        }
        best.map(|(l, _)| l)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Scores looked up from a loaded file.
#[derive(Debug, Clone)]
pub struct FileScorer {
    taxonomy: Taxonomy,
    scores: TweetScores,
}

impl FileScorer {
    pub fn new(taxonomy: Taxonomy, scores: TweetScores) -> Self {
        FileScorer { taxonomy, scores }
    }

    pub fn load(taxonomy: Taxonomy, path: &Path) -> Result<Self, ScoreError> {
        let scores = TweetScores::load(&taxonomy, path)?;
        Ok(FileScorer { taxonomy, scores })
    }
}

impl EventScorer for FileScorer {
    fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    fn score(&self, tweet: &Tweet) -> Result<EventSymptomScores, ScoreError> {
        self.scores
            .get(tweet.tweet_id)
            .cloned()
            .ok_or(ScoreError::MissingTweet(tweet.tweet_id))
    }
}

/// Hard detection threshold `p`, with optional per-category overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub default: f64,
    #[serde(default)]
    pub per_category: HashMap<String, f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::uniform(0.5)
    }
}

impl Thresholds {
    pub fn uniform(p: f64) -> Self {
        Thresholds {
            default: p,
            per_category: HashMap::new(),
        }
    }

    pub fn for_label(&self, label: &str) -> f64 {
        self.per_category
            .iter()
            .find(|(k, _)| super::taxonomy::same_label(k, label))
            .map(|(_, v)| *v)
            .unwrap_or(self.default)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::timestamp;

    fn tweet(id: u64, text: &str) -> Tweet {
        Tweet::new(id, timestamp::parse("2020-07-20 17:24:08+00:00").unwrap(), text)
    }

    #[test]
    fn therapist_tweet_is_health() {
        let s = LexiconScorer::new(Taxonomy::default());
        let r = s.score(&tweet(1, "i had my first appointment with my therapist today")).unwrap();
        let health = r.get(s.taxonomy(), "Health").unwrap();
        assert!(health >= 0.5, "{health}");
    }

    #[test]
    fn no_keywords_all_zero() {
        let s = LexiconScorer::new(Taxonomy::default());
        let r = s.score(&tweet(1, "the a of")).unwrap();
        assert!(r.flat().iter().all(|v| *v == 0.0));
        assert_eq!(r.life_event.len(), 11);
        assert_eq!(r.symptom.len(), 38);
    }

    #[test]
    fn hit_density_formula() {
        let tax = Taxonomy::default();
        let s = LexiconScorer::from_lexicon(tax.clone(), "Health\tdoctor\nCareer\tnew job*\n").unwrap();
        // 20 tokens, one Health hit -> 10 * 1 / 20
        let text = format!("doctor {}", "x ".repeat(19));
        let r = s.score(&tweet(1, &text)).unwrap();
        assert!((r.get(&tax, "Health").unwrap() - 0.5).abs() < 1e-12);
        let r = s.score(&tweet(2, "my new jobs rock")).unwrap();
        assert_eq!(r.get(&tax, "Career").unwrap(), 1.0);
    }

    #[test]
    fn file_round_trip() {
        let tax = Taxonomy::default();
        let lex = LexiconScorer::new(tax.clone());
        let tweets = vec![
            tweet(5, "so anxious about the job interview"),
            tweet(9, "couldn't sleep again, exhausted"),
        ];
        let scores = score_timeline(&lex, &tweets).unwrap();
        let back = TweetScores::from_csv(&tax, &scores.to_csv(&tax)).unwrap();
        assert_eq!(back, scores);
        let header = scores.to_csv(&tax).lines().next().unwrap().to_string();
        assert_eq!(header.split(',').count(), 50);
        let file = FileScorer::new(tax, back);
        assert_eq!(file.score(&tweets[0]).unwrap(), scores.scores[&5]);
    }

    #[test]
    fn wrong_dimension_rejected() {
        let tax = Taxonomy::default();
        assert!(matches!(
            TweetScores::from_csv(&tax, "1,0.5,0.5\n"),
            Err(ScoreError::BadLine { .. })
        ));
        assert!(matches!(
            EventSymptomScores::from_flat(&tax, &[0.0; 48]),
            Err(ScoreError::WrongDimension { expected: 49, got: 48 })
        ));
    }
}
