//! Flesch Reading Ease and Flesch-Kincaid Grade Level.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    pub sentences: usize,
    pub words: usize,
    pub syllables: usize,
    /// Words per sentence.
    pub asl: f64,
    /// Syllables per word.
    pub asw: f64,
}

pub fn text_stats(t: &str) -> Result<TextStats, EvalError> {
    let words = text::words(t);
    if words.is_empty() {
        return Err(EvalError::NoWords("text".into()));
    }
    let sentences = text::sentences(t).len().max(1);
    let syllables: usize = words.iter().map(|w| text::syllables(w)).sum();
    Ok(TextStats {
        sentences,
        words: words.len(),
        syllables,
        asl: words.len() as f64 / sentences as f64,
        asw: syllables as f64 / words.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityScores {
    pub fre: f64,
    pub fkgl: f64,
    pub asl: f64,
    pub asw: f64,
}

pub fn fre(asl: f64, asw: f64) -> f64 {
    206.835 - 1.015 * asl - 84.6 * asw
}

pub fn fkgl(asl: f64, asw: f64) -> f64 {
    0.39 * asl + 11.8 * asw - 15.59
}

/// Scores from precomputed averages. Both must be positive: a text with
/// no words has no readability.
pub fn readability_from(asl: f64, asw: f64) -> Result<ReadabilityScores, EvalError> {
    if !(asl > 0.0 && asw > 0.0 && asl.is_finite() && asw.is_finite()) {
        return Err(EvalError::NoWords("readability input".into()));
    }
    Ok(ReadabilityScores {
        fre: fre(asl, asw),
        fkgl: fkgl(asl, asw),
        asl,
        asw,
    })
}

pub fn readability(t: &str) -> Result<ReadabilityScores, EvalError> {
    let s = text_stats(t)?;
    readability_from(s.asl, s.asw)
}
