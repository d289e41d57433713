//! Valence/arousal/dominance lexicon, softmax distributions and KL.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::text;

const BUILTIN: &str = include_str!("../../data/vad_lexicon.tsv");
pub const NEUTRAL: [f64; 3] = [0.5, 0.5, 0.5];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VadLexicon {
    entries: HashMap<String, [f64; 3]>,
}

impl VadLexicon {
    pub fn builtin() -> &'static VadLexicon {
        static LEX: OnceLock<VadLexicon> = OnceLock::new();
        LEX.get_or_init(|| VadLexicon::parse(BUILTIN).expect("shipped lexicon parses"))
    }

    /// Tab-separated `word valence arousal dominance`; `#` comments and a
    /// non-numeric header line are skipped.
    pub fn parse(raw: &str) -> Result<Self, EvalError> {
        let mut entries = HashMap::new();
        for (n, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(EvalError::Lexicon(format!("line {}: expected 4 columns", n + 1)));
            }
            let vals: Result<Vec<f64>, _> = cols[1..].iter().map(|c| c.trim().parse::<f64>()).collect();
            let Ok(vals) = vals else {
                if n == 0 {
                    continue;
                }
                return Err(EvalError::Lexicon(format!("line {}: non-numeric value", n + 1)));
            };
            if vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(EvalError::Lexicon(format!("line {}: value outside [0, 1]", n + 1)));
            }
            entries.insert(cols[0].trim().to_lowercase(), [vals[0], vals[1], vals[2]]);
        }
        if entries.is_empty() {
            return Err(EvalError::Lexicon("lexicon is empty".into()));
        }
        Ok(VadLexicon { entries })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let raw = std::fs::read_to_string(path).map_err(|e| EvalError::Lexicon(format!("{}: {e}", path.display())))?;
        Self::parse(&raw)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<[f64; 3]> {
        self.entries.get(word).copied()
    }

    /// Mean VAD over matched tokens, or the neutral point without matches.
    pub fn mean(&self, t: &str) -> [f64; 3] {
        let hits: Vec<[f64; 3]> = text::words(t).iter().filter_map(|w| self.get(w)).collect();
        if hits.is_empty() {
            return NEUTRAL;
        }
        let n = hits.len() as f64;
        [0, 1, 2].map(|i| hits.iter().map(|h| h[i]).sum::<f64>() / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadDistribution {
    pub p: [f64; 3],
}

impl VadDistribution {
    pub fn from_vad(v: [f64; 3]) -> Self {
        let s = softmax(&v);
        VadDistribution { p: [s[0], s[1], s[2]] }
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// KL(P || Q) with natural log; zero-probability terms of P contribute 0.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

pub fn emotion_divergence(original: &str, simulated: &str, lexicon: &VadLexicon) -> f64 {
    let p = VadDistribution::from_vad(lexicon.mean(original));
    let q = VadDistribution::from_vad(lexicon.mean(simulated));
    kl(&p.p, &q.p)
}

/// Absolute difference of the VAD vector magnitudes.
pub fn emotion_intensity(original: &str, simulated: &str, lexicon: &VadLexicon) -> f64 {
    let mag = |v: [f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (mag(lexicon.mean(original)) - mag(lexicon.mean(simulated))).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kl_hand_value() {
        let e = std::f64::consts::E;
        let z = e + 2.0;
        let p = [e / z, 1.0 / z, 1.0 / z];
        let q = [1.0 / z, e / z, 1.0 / z];
        // p1 ln e + p2 ln(1/e) = (e - 1)/(e + 2)
        let want = (e - 1.0) / (e + 2.0);
        let got = kl(&VadDistribution::from_vad([1.0, 0.0, 0.0]).p, &VadDistribution::from_vad([0.0, 1.0, 0.0]).p);
        assert!((got - want).abs() < 1e-9);
        assert!((kl(&p, &q) - want).abs() < 1e-12);
    }

    #[test]
    fn identity_and_neutral() {
        let lex = VadLexicon::builtin();
        assert_eq!(emotion_divergence("so happy today", "so happy today", lex), 0.0);
        assert_eq!(lex.mean("zzz qqq"), NEUTRAL);
        assert_eq!(emotion_divergence("zzz", "qqq", lex), 0.0);
    }

    #[test]
    fn valence_moves_toward_added_word() {
        let lex = VadLexicon::builtin();
        let before = lex.mean("I feel tired");
        let after = lex.mean("I feel tired amazing");
        assert!(after[0] > before[0]);
    }

    #[test]
    fn parse_errors() {
        assert!(VadLexicon::parse("# only comments\n").is_err());
        assert!(VadLexicon::parse("word\t0.1\t0.2\n").is_err());
        assert!(VadLexicon::parse("word\t1.5\t0.2\t0.3\n").is_err());
        assert_eq!(VadLexicon::parse("Word\tValence\tArousal\tDominance\nok\t0.5\t0.5\t0.5\n").unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn kl_non_negative(a in prop::array::uniform3(0.0f64..1.0), b in prop::array::uniform3(0.0f64..1.0)) {
            let (p, q) = (VadDistribution::from_vad(a), VadDistribution::from_vad(b));
            prop_assert!(kl(&p.p, &q.p) >= 0.0);
            prop_assert!((p.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(kl(&p.p, &p.p).abs() <= 1e-12);
        }
    }
}
