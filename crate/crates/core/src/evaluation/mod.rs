//! Metrics comparing simulated tweets with real ones: semantic similarity,
//! style similarity, readability differences, emotional divergence, word
//! overlap and Big Five agreement.

pub mod pos;
pub mod readability;
pub mod style;
pub mod vad;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pos::{PerceptronTagger, PosTagger};
pub use readability::{readability, text_stats, ReadabilityScores};
pub use style::{style_similarity, IdfTable, StyleBreakdown};
pub use vad::{emotion_divergence, emotion_intensity, VadLexicon};

use crate::corpus::Tweet;
use crate::llm::{Gateway, GatewayError};
use crate::profiling::BigFive;
use crate::vector;
use crate::workflow::SimulationResult;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{0} has no words")]
    NoWords(String),
    #[error("empty vocabulary after tokenization")]
    EmptyVocabulary,
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// What a simulated tweet is compared against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// The real tweet the event came from.
    #[default]
    GroundTruth,
    /// The user's earlier tweets (mean embedding; pooled for style).
    HistoryMean,
}

/// Cosine between `simulated` and the mean of `references`.
pub fn semantic_similarity_vectors(simulated: &[f64], references: &[Vec<f64>]) -> Result<f64, EvalError> {
    let mean = vector::mean(references.iter().map(Vec::as_slice)).ok_or(EvalError::ZeroNorm)?;
    vector::cosine(simulated, &mean).ok_or(EvalError::ZeroNorm)
}

pub fn semantic_similarity(gateway: &Gateway, simulated: &str, references: &[String]) -> Result<f64, EvalError> {
    if references.is_empty() {
        return Err(EvalError::NoWords("reference set".into()));
    }
    let mut texts = vec![simulated.to_string()];
    texts.extend(references.iter().cloned());
    let mut e = gateway.embed(&texts)?.into_iter().map(|e| e.values);
    let sim = e.next().expect("embedded");
    semantic_similarity_vectors(&sim, &e.collect::<Vec<_>>())
}

/// Unigram Jaccard over lowercased word sets.
pub fn word_overlap(a: &str, b: &str) -> Result<f64, EvalError> {
    let sa: BTreeSet<String> = crate::text::words(a).into_iter().collect();
    let sb: BTreeSet<String> = crate::text::words(b).into_iter().collect();
    if sa.is_empty() && sb.is_empty() {
        return Err(EvalError::NoWords("both texts".into()));
    }
    Ok(sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64)
}

/// Share of the five dimensions with the same level.
pub fn trait_agreement(a: &BigFive, b: &BigFive) -> f64 {
    a.levels().iter().zip(b.levels()).filter(|(x, y)| **x == *y).count() as f64 / 5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub semantic: Option<f64>,
    pub style: Option<StyleBreakdown>,
    /// Simulated minus original.
    pub fre_diff: Option<f64>,
    pub fkgl_diff: Option<f64>,
    pub emotion_kl: Option<f64>,
    pub emotion_intensity: Option<f64>,
    pub word_overlap: Option<f64>,
    pub trait_agreement: Option<f64>,
    /// `metric: error` for each metric that could not be computed.
    pub errors: Vec<String>,
}

impl EvalReport {
    pub fn valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub const CSV_HEADER: &'static str =
        "semantic,style,sim_tfidf,sim_pos,sim_length,fre_diff,fkgl_diff,emotion_kl,emotion_intensity,word_overlap,trait_agreement,valid";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        [
            f(self.semantic),
            f(self.style.map(|s| s.aggregate)),
            f(self.style.map(|s| s.sim_tfidf)),
            f(self.style.map(|s| s.sim_pos)),
            f(self.style.map(|s| s.sim_length)),
            f(self.fre_diff),
            f(self.fkgl_diff),
            f(self.emotion_kl),
            f(self.emotion_intensity),
            f(self.word_overlap),
            f(self.trait_agreement),
            self.valid().to_string(),
        ]
        .join(",")
    }
}

/// Draft and final reports for one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub draft: EvalReport,
    #[serde(rename = "final")]
    pub final_report: EvalReport,
}

pub struct Evaluator<'a> {
    pub gateway: &'a Gateway,
    pub tagger: &'a dyn PosTagger,
    pub lexicon: &'a VadLexicon,
    pub mode: ReferenceMode,
    pub idf: Option<&'a IdfTable>,
}

impl<'a> Evaluator<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        Evaluator {
            gateway,
            tagger: PerceptronTagger::builtin(),
            lexicon: VadLexicon::builtin(),
            mode: ReferenceMode::GroundTruth,
            idf: None,
        }
    }

    /// Every metric for one simulated text. Metrics that fail are recorded
    /// in `errors`; the rest are still computed.
    pub fn evaluate_text(
        &self,
        original: &Tweet,
        simulated: &str,
        history: &[String],
        traits: Option<(&BigFive, &BigFive)>,
    ) -> EvalReport {
        let mut errors = Vec::new();
        let mut keep = |name: &str, r: Result<f64, EvalError>| r.map_err(|e| errors.push(format!("{name}: {e}"))).ok();
        let refs: Vec<String> = match self.mode {
            ReferenceMode::GroundTruth => vec![original.text.clone()],
            ReferenceMode::HistoryMean => history.to_vec(),
        };
        let sim_set = vec![simulated.to_string()];
        let semantic = keep(
            "semantic",
            if simulated.trim().is_empty() {
                Err(EvalError::NoWords("simulated text".into()))
            } else {
                semantic_similarity(self.gateway, simulated, &refs)
            },
        );
        let style = style_similarity(&sim_set, &refs, self.tagger, self.idf);
        let style = keep("style", style.clone().map(|s| s.aggregate)).and(style.ok());
        let (ro, rs) = (readability(&original.text), readability(simulated));
        let fre_diff = keep("fre", ro.clone().and_then(|o| rs.clone().map(|s| s.fre - o.fre)));
        let fkgl_diff = keep("fkgl", ro.and_then(|o| rs.map(|s| s.fkgl - o.fkgl)));
        let has_words = !crate::text::words(simulated).is_empty();
        let emotion_kl = keep(
            "emotion_kl",
            if has_words {
                Ok(emotion_divergence(&original.text, simulated, self.lexicon))
            } else {
                Err(EvalError::NoWords("simulated text".into()))
            },
        );
        let intensity = keep(
            "emotion_intensity",
            if has_words {
                Ok(emotion_intensity(&original.text, simulated, self.lexicon))
            } else {
                Err(EvalError::NoWords("simulated text".into()))
            },
        );
        let overlap = keep("word_overlap", word_overlap(&original.text, simulated));
        EvalReport {
            semantic,
            style,
            fre_diff,
            fkgl_diff,
            emotion_kl,
            emotion_intensity: intensity,
            word_overlap: overlap,
            trait_agreement: traits.map(|(a, b)| trait_agreement(a, b)),
            errors,
        }
    }

    pub fn evaluate_pair(&self, original: &Tweet, result: &SimulationResult, history: &[String]) -> PairReport {
        PairReport {
            draft: self.evaluate_text(original, &result.draft, history, None),
            final_report: self.evaluate_text(original, &result.final_text, history, None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::timestamp;
    use crate::llm::hashing::HashingEmbedder;
    use crate::llm::mock::{MockChat, StaticEmbedder};
    use crate::llm::GatewayConfig;
    use crate::profiling::TraitLevel;
    use std::sync::Arc;

    fn gw() -> Gateway {
        Gateway::new(Arc::new(MockChat::new()), Arc::new(HashingEmbedder::new(64)), GatewayConfig::default())
    }

    fn tweet(text: &str) -> Tweet {
        Tweet::new(1, timestamp::parse("2019-11-29 01:54:21+00:00").unwrap(), text)
    }

    #[test]
    fn overlap_values() {
        assert_eq!(word_overlap("a b c", "c b a").unwrap(), 1.0);
        assert_eq!(word_overlap("a b", "c d").unwrap(), 0.0);
        assert_eq!(word_overlap("a b c", "b c d").unwrap(), 0.5);
        assert!(word_overlap("", "").is_err());
    }

    #[test]
    fn trait_values() {
        let a = BigFive::uniform(TraitLevel::High);
        let mut b = a.clone();
        assert_eq!(trait_agreement(&a, &b), 1.0);
        b.openness.level = TraitLevel::Low;
        b.neuroticism.level = TraitLevel::Low;
        assert_eq!(trait_agreement(&a, &b), 0.6);
        assert_eq!(trait_agreement(&a, &BigFive::uniform(TraitLevel::Low)), 0.0);
    }

    #[test]
    fn semantic_modes() {
        let g = Gateway::new(
            Arc::new(MockChat::new()),
            Arc::new(StaticEmbedder::new(2).with("sim", vec![1.0, 1.0]).with("r1", vec![1.0, 0.0]).with("r2", vec![0.0, 1.0]).with("o", vec![0.0, -1.0])),
            GatewayConfig::default(),
        );
        assert!((semantic_similarity(&g, "sim", &["r1".into(), "r2".into()]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(semantic_similarity(&g, "r1", &["r2".into()]).unwrap(), 0.0);
        assert!(semantic_similarity(&g, "r1", &[]).is_err());
    }

    #[test]
    fn perfect_simulation() {
        let g = gw();
        let e = Evaluator::new(&g);
        let t = tweet("I went to the doctor today and got some news. Feeling sad.");
        let r = e.evaluate_text(&t, &t.text, &[], None);
        assert!(r.valid());
        assert!((r.semantic.unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(r.style.unwrap().aggregate, 1.0);
        assert_eq!(r.fre_diff, Some(0.0));
        assert_eq!(r.fkgl_diff, Some(0.0));
        assert_eq!(r.emotion_kl, Some(0.0));
        assert_eq!(r.word_overlap, Some(1.0));
    }

    #[test]
    fn empty_simulation_marked_invalid() {
        let g = gw();
        let r = Evaluator::new(&g).evaluate_text(&tweet("hello there"), "", &[], None);
        assert!(!r.valid());
        assert!(r.semantic.is_none() && r.style.is_none() && r.fre_diff.is_none());
        assert!(r.errors.iter().any(|e| e.starts_with("semantic")));
    }

    #[test]
    fn hand_assembled_report() {
        let g = gw();
        let t = tweet("The cat sat.");
        let r = Evaluator::new(&g).evaluate_text(&t, "The dog sat down.", &[], None);
        // readability: asl 3 vs 4, asw 1 vs 1
        assert!((r.fre_diff.unwrap() - (-1.015)).abs() < 1e-9);
        assert!((r.fkgl_diff.unwrap() - 0.39).abs() < 1e-9);
        // {the, cat, sat} vs {the, dog, sat, down}
        assert_eq!(r.word_overlap, Some(2.0 / 5.0));
        let s = r.style.unwrap();
        assert_eq!(s.sim_length, 0.5);
        assert!((s.aggregate - (s.sim_tfidf + s.sim_pos + s.sim_length) / 3.0).abs() < 1e-15);
    }
}
