//! Canonical text handling shared by every metric, scorer and embedder.
//!
//! Words are Unicode word segments, lowercased, with URLs and user mentions
//! removed and hashtags kept without the `#`. Sentences end at runs of
//! `.`, `!` or `?` followed by whitespace or end of text, except after a
//! known abbreviation. Syllables follow a vowel-group rule with a small set
//! of suffix adjustments and an exception table.

use std::sync::OnceLock;

use regex::Regex;
use unicode_segmentation::UnicodeSegmentation;

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "inc", "ltd",
    "co", "mt", "no", "approx", "dept", "est", "fig", "jan", "feb", "mar", "apr", "jun", "jul",
    "aug", "sep", "sept", "oct", "nov", "dec",
];

const SYLLABLE_EXCEPTIONS: &[(&str, usize)] = &[
    ("area", 3),
    ("idea", 3),
    ("ideas", 3),
    ("create", 2),
    ("created", 3),
    ("business", 2),
    ("every", 2),
    ("everything", 3),
    ("different", 3),
    ("being", 2),
    ("poem", 2),
    ("quiet", 2),
    ("science", 2),
    ("real", 1),
    ("really", 2),
    ("naive", 2),
    ("lmao", 2),
    ("lol", 1),
    ("omg", 3),
    ("tbh", 3),
];

fn noise_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?://|www\.)\S+|@\w+").expect("static regex"))
}

/// Removes URLs and mentions and drops the `#` from hashtags.
pub fn clean(text: &str) -> String {
    noise_pattern().replace_all(text, " ").replace('#', " ")
}

/// Lowercased word tokens under the canonical rule.
pub fn words(text: &str) -> Vec<String> {
    clean(text)
        .unicode_words()
        .map(|w| w.to_lowercase())
        .collect()
}

/// Word tokens with their original casing preserved (used by the POS tagger).
pub fn raw_words(text: &str) -> Vec<String> {
    clean(text).unicode_words().map(str::to_string).collect()
}

fn is_abbreviation(segment: &str) -> bool {
    let last = segment
        .split_whitespace()
        .last()
        .unwrap_or("")
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if last.is_empty() {
        return false;
    }
    ABBREVIATIONS.contains(&last.as_str())
        || (last.chars().count() == 1 && last.chars().all(char::is_alphabetic) && last != "i")
}

/// Splits text into sentences. Only segments that contain at least one word
/// are returned; text without terminal punctuation is a single sentence.
pub fn sentences(text: &str) -> Vec<String> {
    let cleaned = clean(text);
    let chars: Vec<(usize, char)> = cleaned.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i;
            while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?') {
                j += 1;
            }
            let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
            let single_period = j - i == 1 && c == '.';
            let end = if j == chars.len() { cleaned.len() } else { chars[j].0 };
            if at_boundary && !(single_period && is_abbreviation(&cleaned[start..pos])) {
                out.push(cleaned[start..end].trim().to_string());
                start = end;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    if start < cleaned.len() {
        out.push(cleaned[start..].trim().to_string());
    }
    out.retain(|s| s.unicode_words().next().is_some());
    out
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Syllable count for one word. Tokens without letters count as one.
pub fn syllables(word: &str) -> usize {
    let w: String = word
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphabetic())
        .collect();
    if w.is_empty() {
        return 1;
    }
    if let Some(&(_, n)) = SYLLABLE_EXCEPTIONS.iter().find(|(e, _)| *e == w) {
        return n;
    }
    let chars: Vec<char> = w.chars().collect();
    let mut groups = 0usize;
    let mut prev_vowel = false;
    for &c in &chars {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    let n = chars.len();
    if groups > 1 {
        let before = |k: usize| if n > k { Some(chars[n - 1 - k]) } else { None };
        if w.ends_with('e') && !w.ends_with("le") && !w.ends_with("ee") {
            groups -= 1;
        } else if w.ends_with("le") && before(2).is_some_and(is_vowel) {
            groups -= 1;
        } else if w.ends_with("ed") && !matches!(before(2), Some('t' | 'd')) && before(2).is_some_and(|c| !is_vowel(c)) {
            groups -= 1;
        } else if w.ends_with("es")
            && !matches!(before(2), Some('s' | 'x' | 'z' | 'c' | 'g'))
            && !w.ends_with("shes")
            && before(2).is_some_and(|c| !is_vowel(c))
        {
            groups -= 1;
        }
    }
    groups.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_strip_urls_and_mentions() {
        let w = words("LMFAO #MyTwitterAnniversary @bob see https://t.co/xyz now");
        assert_eq!(w, vec!["lmfao", "mytwitteranniversary", "see", "now"]);
    }

    #[test]
    fn contractions_stay_whole() {
        assert_eq!(words("I don't know"), vec!["i", "don't", "know"]);
    }

    #[test]
    fn sentence_counts() {
        assert_eq!(sentences("The cat sat.").len(), 1);
        assert_eq!(sentences("Hello world. Bye.").len(), 2);
        assert_eq!(sentences("no punctuation here").len(), 1);
        assert_eq!(sentences("Wait!!! What?").len(), 2);
        assert_eq!(sentences("I met Dr. Smith today. Nice.").len(), 2);
        assert_eq!(sentences("Pi is 3.14 roughly.").len(), 1);
        assert!(sentences("...").is_empty());
    }

    #[test]
    fn syllable_rule() {
        assert_eq!(syllables("cat"), 1);
        assert_eq!(syllables("cake"), 1);
        assert_eq!(syllables("table"), 2);
        assert_eq!(syllables("the"), 1);
        assert_eq!(syllables("jumped"), 1);
        assert_eq!(syllables("wanted"), 2);
        assert_eq!(syllables("makes"), 1);
        assert_eq!(syllables("horses"), 2);
        assert_eq!(syllables("therapist"), 3);
        assert_eq!(syllables("appointment"), 3);
        assert_eq!(syllables("2019"), 1);
        assert_eq!(syllables("idea"), 3);
    }
}
