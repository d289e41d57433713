//! Averaged-perceptron part-of-speech tagger over the 17 universal tags.
//!
//! Model file layout (little-endian):
//! `b"TWPT"`, u32 version, u32 tag count, tags as (u8 len, bytes),
//! u32 tag-dictionary size, entries as (u16 len, bytes, u8 tag),
//! u32 feature count, features as (u16 len, bytes, u8 n, n × (u8 tag, f32 weight)).

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

pub const UPOS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN", "PUNCT", "SCONJ",
    "SYM", "VERB", "X",
];

const MAGIC: &[u8; 4] = b"TWPT";
const VERSION: u32 = 1;
const BUILTIN: &[u8] = include_bytes!("../../data/pos_model.bin");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaggerError {
    #[error("not a tagger model: {0}")]
    Format(String),
    #[error("{0}")]
    Io(String),
    #[error("training data line {line}: {reason}")]
    Data { line: usize, reason: String },
}

/// Anything that assigns universal tags (indices into [`UPOS`]) to words.
pub trait PosTagger: Send + Sync {
    fn tag(&self, words: &[String]) -> Vec<usize>;
}

pub fn tag_index(name: &str) -> Option<usize> {
    UPOS.iter().position(|t| t.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerceptronTagger {
    weights: HashMap<String, Vec<(u8, f32)>>,
    tagdict: HashMap<String, u8>,
}

fn normalize(word: &str) -> String {
    let first = word.chars().next();
    if word.contains('-') && first != Some('-') {
        "!HYPHEN".into()
    } else if word.len() == 4 && word.chars().all(|c| c.is_ascii_digit()) {
        "!YEAR".into()
    } else if first.is_some_and(|c| c.is_ascii_digit()) {
        "!DIGITS".into()
    } else {
        word.to_lowercase()
    }
}

fn suffix(w: &str, n: usize) -> &str {
    let start = w.char_indices().rev().nth(n.saturating_sub(1)).map(|(i, _)| i).unwrap_or(0);
    &w[start..]
}

fn shape(w: &str) -> String {
    let mut out = String::new();
    for c in w.chars() {
        let s = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_ascii_digit() {
            'd'
        } else {
            c
        };
        if !out.ends_with(s) {
            out.push(s);
        }
    }
    out
}

fn features(i: usize, raw: &str, context: &[String], prev: &str, prev2: &str) -> Vec<String> {
    let i = i + 2;
    let w = &context[i];
    vec![
        "bias".to_string(),
        format!("i suffix {}", suffix(w, 3)),
        format!("i pref1 {}", w.chars().next().unwrap_or(' ')),
        format!("i shape {}", shape(raw)),
        format!("i-1 tag {prev}"),
        format!("i-2 tag {prev2}"),
        format!("i tag+i-2 tag {prev} {prev2}"),
        format!("i word {w}"),
        format!("i-1 tag+i word {prev} {w}"),
        format!("i-1 word {}", context[i - 1]),
        format!("i-1 suffix {}", suffix(&context[i - 1], 3)),
        format!("i-2 word {}", context[i - 2]),
        format!("i+1 word {}", context[i + 1]),
        format!("i+1 suffix {}", suffix(&context[i + 1], 3)),
        format!("i+2 word {}", context[i + 2]),
    ]
}

fn context(words: &[String]) -> Vec<String> {
    let mut c = vec!["-START-".to_string(), "-START2-".to_string()];
    c.extend(words.iter().map(|w| normalize(w)));
    c.push("-END-".into());
    c.push("-END2-".into());
    c
}

fn tag_name(t: Option<usize>) -> &'static str {
    match t {
        Some(t) => UPOS[t],
        None => "-START-",
    }
}

impl PerceptronTagger {
    /// The model shipped with the crate.
    pub fn builtin() -> &'static PerceptronTagger {
        static MODEL: OnceLock<PerceptronTagger> = OnceLock::new();
        MODEL.get_or_init(|| PerceptronTagger::from_bytes(BUILTIN).expect("shipped tagger model is valid"))
    }

    fn predict(&self, feats: &[String]) -> usize {
        let mut scores = [0f32; 17];
        for f in feats {
            if let Some(ws) = self.weights.get(f) {
                for (t, w) in ws {
                    scores[*t as usize] += w;
                }
            }
        }
        argmax(&scores)
    }

    pub fn feature_count(&self) -> usize {
        self.weights.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(UPOS.len() as u32).to_le_bytes());
        for t in UPOS {
            out.push(t.len() as u8);
            out.extend_from_slice(t.as_bytes());
        }
        let mut dict: Vec<_> = self.tagdict.iter().collect();
        dict.sort();
        out.extend_from_slice(&(dict.len() as u32).to_le_bytes());
        for (w, t) in dict {
            out.extend_from_slice(&(w.len() as u16).to_le_bytes());
            out.extend_from_slice(w.as_bytes());
            out.push(*t);
        }
        let mut feats: Vec<_> = self.weights.iter().collect();
        feats.sort_by(|a, b| a.0.cmp(b.0));
        out.extend_from_slice(&(feats.len() as u32).to_le_bytes());
        for (f, ws) in feats {
            out.extend_from_slice(&(f.len() as u16).to_le_bytes());
            out.extend_from_slice(f.as_bytes());
            out.push(ws.len() as u8);
            for (t, w) in ws {
                out.push(*t);
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TaggerError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TaggerError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TaggerError::Format(format!("unsupported version {version}")));
        }
        let ntags = r.u32()? as usize;
        let mut tags = Vec::with_capacity(ntags);
        for _ in 0..ntags {
            let n = r.u8()? as usize;
            tags.push(r.string(n)?);
        }
        if tags.iter().map(String::as_str).ne(UPOS.iter().copied()) {
            return Err(TaggerError::Format("tag set differs from the universal tags".into()));
        }
        let mut tagdict = HashMap::new();
        for _ in 0..r.u32()? {
            let n = r.u16()? as usize;
            let w = r.string(n)?;
            tagdict.insert(w, r.tag()?);
        }
        let mut weights = HashMap::new();
        for _ in 0..r.u32()? {
            let n = r.u16()? as usize;
            let f = r.string(n)?;
            let k = r.u8()? as usize;
            let mut ws = Vec::with_capacity(k);
            for _ in 0..k {
                let t = r.tag()?;
                ws.push((t, f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"))));
            }
            weights.insert(f, ws);
        }
        if r.pos != bytes.len() {
            return Err(TaggerError::Format("trailing bytes".into()));
        }
        Ok(PerceptronTagger { weights, tagdict })
    }

    pub fn load(path: &Path) -> Result<Self, TaggerError> {
        let bytes = std::fs::read(path).map_err(|e| TaggerError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), TaggerError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| TaggerError::Io(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TaggerError> {
        let end = self.pos + n;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| TaggerError::Format("truncated".into()))?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, TaggerError> {
        Ok(self.take(1)?[0])
    }
    fn tag(&mut self) -> Result<u8, TaggerError> {
        let t = self.u8()?;
        if t as usize >= UPOS.len() {
            return Err(TaggerError::Format(format!("tag index {t}")));
        }
        Ok(t)
    }
    fn u16(&mut self) -> Result<u16, TaggerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, TaggerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn string(&mut self, n: usize) -> Result<String, TaggerError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TaggerError::Format("invalid UTF-8".into()))
    }
}

fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

impl PosTagger for PerceptronTagger {
    fn tag(&self, words: &[String]) -> Vec<usize> {
        let ctx = context(words);
        let (mut prev, mut prev2) = (None, None);
        let mut out = Vec::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            let t = match self.tagdict.get(&ctx[i + 2]) {
                Some(t) => *t as usize,
                None => self.predict(&features(i, w, &ctx, tag_name(prev), tag_name(prev2))),
            };
            out.push(t);
            prev2 = prev;
            prev = Some(t);
        }
        out
    }
}

/// A tagged training sentence.
pub type TaggedSentence = Vec<(String, usize)>;

/// Reads JSON lines `{"text": ..., "tokens": [[start, end, "TAG"], ...]}`
/// (character offsets) and aligns each word of the canonical tokenizer to
/// the tagged token covering its first character.
pub fn load_silver(raw: &str) -> Result<Vec<TaggedSentence>, TaggerError> {
    #[derive(serde::Deserialize)]
    struct Line {
        text: String,
        tokens: Vec<(usize, usize, String)>,
    }
    let mut out = Vec::new();
    for (n, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |reason: String| TaggerError::Data { line: n + 1, reason };
        let l: Line = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        // offsets are in characters; map byte offsets of words to char offsets
        let char_at: HashMap<usize, usize> = l.text.char_indices().enumerate().map(|(c, (b, _))| (b, c)).collect();
        let mut sent = Vec::new();
        for (b, w) in l.text.unicode_word_indices() {
            let c = char_at[&b];
            let tag = l
                .tokens
                .iter()
                .find(|(s, e, _)| *s <= c && c < *e)
                .ok_or_else(|| bad(format!("word {w:?} has no tagged token")))?;
            let t = tag_index(&tag.2).ok_or_else(|| bad(format!("unknown tag {:?}", tag.2)))?;
            sent.push((w.to_string(), t));
        }
        if !sent.is_empty() {
            out.push(sent);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub iterations: usize,
    pub seed: u64,
    /// Words seen at least this often with one dominant tag skip the model.
    pub dict_min_count: usize,
    pub dict_min_ratio: f64,
    /// Averaged weights below this magnitude are dropped from the model.
    pub prune_below: f32,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            iterations: 5,
            seed: 7,
            dict_min_count: 20,
            dict_min_ratio: 0.97,
            prune_below: 0.01,
        }
    }
}

#[derive(Default)]
struct Weight {
    w: f64,
    total: f64,
    stamp: u64,
}

pub fn train(sentences: &[TaggedSentence], params: &TrainParams) -> PerceptronTagger {
    let mut counts: HashMap<String, [usize; 17]> = HashMap::new();
    for s in sentences {
        for (w, t) in s {
            counts.entry(normalize(w)).or_insert([0; 17])[*t] += 1;
        }
    }
    let tagdict: HashMap<String, u8> = counts
        .into_iter()
        .filter_map(|(w, c)| {
            let n: usize = c.iter().sum();
            let (best, max) = c.iter().enumerate().max_by_key(|(i, v)| (**v, std::cmp::Reverse(*i)))?;
            (n >= params.dict_min_count && *max as f64 / n as f64 >= params.dict_min_ratio).then_some((w, best as u8))
        })
        .collect();

    let mut weights: HashMap<String, [Weight; 17]> = HashMap::new();
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for _ in 0..params.iterations {
        order.shuffle(&mut rng);
        for &si in &order {
            let s = &sentences[si];
            let words: Vec<String> = s.iter().map(|(w, _)| w.clone()).collect();
            let ctx = context(&words);
            let (mut prev, mut prev2) = (None, None);
            for (i, (w, gold)) in s.iter().enumerate() {
                let guess = match tagdict.get(&ctx[i + 2]) {
                    Some(t) => *t as usize,
                    None => {
                        let feats = features(i, w, &ctx, tag_name(prev), tag_name(prev2));
                        let mut scores = [0f32; 17];
                        for f in &feats {
                            if let Some(ws) = weights.get(f) {
                                for (t, x) in ws.iter().enumerate() {
                                    scores[t] += x.w as f32;
                                }
                            }
                        }
                        let guess = argmax(&scores);
                        step += 1;
                        if guess != *gold {
                            for f in feats {
                                let ws = weights.entry(f).or_default();
                                for (t, delta) in [(*gold, 1.0), (guess, -1.0)] {
                                    let x = &mut ws[t];
                                    x.total += (step - x.stamp) as f64 * x.w;
                                    x.stamp = step;
                                    x.w += delta;
                                }
                            }
                        }
                        guess
                    }
                };
                prev2 = prev;
                prev = Some(guess);
            }
        }
    }
    let averaged = weights
        .into_iter()
        .filter_map(|(f, ws)| {
            let kept: Vec<(u8, f32)> = ws
                .iter()
                .enumerate()
                .filter_map(|(t, x)| {
                    let total = x.total + (step - x.stamp) as f64 * x.w;
                    let avg = (total / step.max(1) as f64) as f32;
                    (avg.abs() >= params.prune_below).then_some((t as u8, avg))
                })
                .collect();
            (!kept.is_empty()).then_some((f, kept))
        })
        .collect();
    PerceptronTagger {
        weights: averaged,
        tagdict,
    }
}

/// Token-level accuracy against gold tags.
pub fn accuracy(tagger: &dyn PosTagger, sentences: &[TaggedSentence]) -> f64 {
    let (mut right, mut total) = (0usize, 0usize);
    for s in sentences {
        let words: Vec<String> = s.iter().map(|(w, _)| w.clone()).collect();
        for (p, (_, g)) in tagger.tag(&words).iter().zip(s) {
            right += usize::from(p == g);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        right as f64 / total as f64
    }
}
