//! Style similarity: TF-IDF, POS-frequency and sentence-length components
//! and their mean.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::pos::{PosTagger, UPOS};
use super::EvalError;
use crate::{text, vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleBreakdown {
    pub sim_tfidf: f64,
    pub sim_pos: f64,
    pub sim_length: f64,
    pub aggregate: f64,
}

impl StyleBreakdown {
    pub fn new(sim_tfidf: f64, sim_pos: f64, sim_length: f64) -> Self {
        StyleBreakdown {
            sim_tfidf,
            sim_pos,
            sim_length,
            aggregate: (sim_tfidf + sim_pos + sim_length) / 3.0,
        }
    }
}

/// Corpus-level document frequencies. Without one, idf comes from the two
/// compared documents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdfTable {
    pub documents: usize,
    pub df: HashMap<String, usize>,
}

impl IdfTable {
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut t = IdfTable::default();
        for d in docs {
            t.documents += 1;
            let mut seen: Vec<String> = text::words(d);
            seen.sort();
            seen.dedup();
            for w in seen {
                *t.df.entry(w).or_default() += 1;
            }
        }
        t
    }

    /// Smoothed idf: ln((1 + N) / (1 + df)) + 1.
    pub fn idf(&self, word: &str) -> f64 {
        smoothed_idf(self.documents, self.df.get(word).copied().unwrap_or(0))
    }
}

pub fn smoothed_idf(n: usize, df: usize) -> f64 {
    ((1.0 + n as f64) / (1.0 + df as f64)).ln() + 1.0
}

fn counts(texts: &[String]) -> BTreeMap<String, f64> {
    let mut c = BTreeMap::new();
    for t in texts {
        for w in text::words(t) {
            *c.entry(w).or_insert(0.0) += 1.0;
        }
    }
    c
}

fn require_words(texts: &[String], side: &str) -> Result<(), EvalError> {
    if texts.iter().all(|t| text::words(t).is_empty()) {
        return Err(EvalError::NoWords(side.to_string()));
    }
    Ok(())
}

/// Cosine of raw-count TF-IDF vectors of the two concatenated sets.
pub fn tfidf_similarity(a: &[String], b: &[String], idf: Option<&IdfTable>) -> Result<f64, EvalError> {
    let (ca, cb) = (counts(a), counts(b));
    if ca.is_empty() && cb.is_empty() {
        return Err(EvalError::EmptyVocabulary);
    }
    if ca.is_empty() || cb.is_empty() {
        return Err(EvalError::NoWords(if ca.is_empty() { "a" } else { "b" }.into()));
    }
    let mut vocab: Vec<&String> = ca.keys().chain(cb.keys()).collect();
    vocab.sort();
    vocab.dedup();
    let weight = |w: &str| match idf {
        Some(t) => t.idf(w),
        None => smoothed_idf(2, usize::from(ca.contains_key(w)) + usize::from(cb.contains_key(w))),
    };
    let va: Vec<f64> = vocab.iter().map(|w| ca.get(*w).copied().unwrap_or(0.0) * weight(w)).collect();
    let vb: Vec<f64> = vocab.iter().map(|w| cb.get(*w).copied().unwrap_or(0.0) * weight(w)).collect();
    vector::cosine(&va, &vb).ok_or(EvalError::ZeroNorm)
}

/// Universal-tag counts over all sentences of a set.
pub fn pos_counts(texts: &[String], tagger: &dyn PosTagger) -> Vec<f64> {
    let mut c = vec![0.0; UPOS.len()];
    for t in texts {
        for s in text::sentences(t) {
            let words = text::raw_words(&s);
            for tag in tagger.tag(&words) {
                c[tag] += 1.0;
            }
        }
    }
    c
}

pub fn pos_similarity(a: &[String], b: &[String], tagger: &dyn PosTagger) -> Result<f64, EvalError> {
    require_words(a, "a")?;
    require_words(b, "b")?;
    vector::cosine(&pos_counts(a, tagger), &pos_counts(b, tagger)).ok_or(EvalError::ZeroNorm)
}

/// Mean and population standard deviation of sentence lengths in words.
pub fn length_stats(texts: &[String]) -> Option<(f64, f64)> {
    let lens: Vec<f64> = texts
        .iter()
        .flat_map(|t| text::sentences(t))
        .map(|s| text::words(&s).len() as f64)
        .filter(|n| *n > 0.0)
        .collect();
    if lens.is_empty() {
        return None;
    }
    let n = lens.len() as f64;
    let mu = lens.iter().sum::<f64>() / n;
    let var = lens.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
    Some((mu, var.sqrt()))
}

pub fn length_similarity_from(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> f64 {
    1.0 / (1.0 + (mu1 - mu2).abs() + (sigma1 - sigma2).abs())
}

pub fn length_similarity(a: &[String], b: &[String]) -> Result<f64, EvalError> {
    let (m1, s1) = length_stats(a).ok_or_else(|| EvalError::NoWords("a".into()))?;
    let (m2, s2) = length_stats(b).ok_or_else(|| EvalError::NoWords("b".into()))?;
    Ok(length_similarity_from(m1, s1, m2, s2))
}

pub fn style_similarity(a: &[String], b: &[String], tagger: &dyn PosTagger, idf: Option<&IdfTable>) -> Result<StyleBreakdown, EvalError> {
    Ok(StyleBreakdown::new(
        tfidf_similarity(a, b, idf)?,
        pos_similarity(a, b, tagger)?,
        length_similarity(a, b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::pos::PerceptronTagger;

    fn v(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identity() {
        let a = v(&["I went to the doctor today. Not great.", "lol what a day"]);
        let s = style_similarity(&a, &a, PerceptronTagger::builtin(), None).unwrap();
        assert_eq!((s.sim_tfidf, s.sim_pos, s.sim_length, s.aggregate), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn length_hand_value() {
        assert_eq!(length_similarity_from(10.0, 2.0, 12.0, 3.0), 0.25);
    }

    #[test]
    fn disjoint_vocab() {
        assert_eq!(tfidf_similarity(&v(&["apple banana"]), &v(&["cherry dates"]), None).unwrap(), 0.0);
        assert!(matches!(tfidf_similarity(&v(&["..."]), &v(&["!!"]), None), Err(EvalError::EmptyVocabulary)));
    }

    #[test]
    fn length_stats_population() {
        // sentences of 2 and 4 words: mean 3, population sd 1
        assert_eq!(length_stats(&v(&["go now. we can try it."])), Some((3.0, 1.0)));
    }

    #[test]
    fn tfidf_hand_value() {
        // shared word idf = ln(3/3)+1 = 1; unique words idf = ln(3/2)+1
        let u = (1.5f64).ln() + 1.0;
        let want = 1.0 / (1.0 + u * u);
        let got = tfidf_similarity(&v(&["cat dog"]), &v(&["cat eel"]), None).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
}
