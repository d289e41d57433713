//! Posting style: iterative exemplar selection, then a short description.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Tweet, UserTimeline};
use crate::llm::{AskError, Gateway};
use crate::prompts::{self, PromptSet, TemplateId};

pub const MAX_DESCRIPTION_WORDS: usize = 100;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StyleProfile {
    pub description: String,
    /// Chronological.
    pub exemplars: Vec<u64>,
    #[serde(default)]
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StyleError {
    #[error("batch size {batch} must exceed keep {keep}")]
    BadParams { batch: usize, keep: usize },
    #[error("timeline is empty")]
    Empty,
    #[error(transparent)]
    Ask(#[from] AskError),
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Cuts to at most `max` words, ending at the last full sentence inside
/// the limit when there is one.
pub fn truncate_words(s: &str, max: usize) -> String {
    if word_count(s) <= max {
        return s.trim().to_string();
    }
    let cut = s.split_whitespace().take(max).collect::<Vec<_>>().join(" ");
    match cut.rfind(['.', '!', '?']) {
        Some(i) if i > 0 => cut[..=i].to_string(),
        _ => cut,
    }
}

/// One Select round over a batch. Ids outside the batch trigger one
/// re-prompt; any still outside are dropped. At most `keep` ids survive.
fn select_batch(batch: &[&Tweet], keep: usize, gateway: &Gateway, prompts: &PromptSet) -> Result<Vec<u64>, StyleError> {
    let id = TemplateId::SelectBestTweets;
    let block = prompts::format_tweets(batch.iter().copied());
    let prompt = prompts.render(id, &[("tweets", block.as_str())]).expect("select template slots are fixed");
    let allowed = |i: &u64| batch.iter().any(|t| t.tweet_id == *i);
    let mut picks = Vec::new();
    for attempt in 0..2 {
        let answer = gateway.ask(&prompt, &id.contract(), false)?;
        picks = answer.record.map(|r| r.ids("tweet_id")).unwrap_or_default();
        if picks.iter().all(allowed) {
            break;
        }
        if attempt == 0 {
            log::debug!("selection returned ids outside the batch; re-prompting");
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut valid: Vec<u64> = picks.into_iter().filter(|i| allowed(i) && seen.insert(*i)).collect();
    valid.truncate(keep);
    Ok(valid)
}

/// Exemplar ids after iterative selection, chronological, plus the round
/// count. At least one round always runs.
pub fn select_exemplars(
    timeline: &UserTimeline,
    batch: usize,
    keep: usize,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<(Vec<u64>, usize), StyleError> {
    if batch <= keep || keep == 0 {
        return Err(StyleError::BadParams { batch, keep });
    }
    if timeline.tweets.is_empty() {
        return Err(StyleError::Empty);
    }
    let mut pool: Vec<&Tweet> = timeline.tweets.iter().collect();
    let mut rounds = 0;
    loop {
        let mut survivors = Vec::new();
        for chunk in pool.chunks(batch) {
            survivors.extend(select_batch(chunk, keep, gateway, prompts)?);
        }
        rounds += 1;
        let mut next: Vec<&Tweet> = survivors.iter().filter_map(|i| timeline.tweet(*i)).collect();
        next.sort_by_key(|t| (t.timestamp, t.tweet_id));
        next.dedup_by_key(|t| t.tweet_id);
        pool = next;
        if pool.len() <= keep {
            break;
        }
    }
    Ok((pool.iter().map(|t| t.tweet_id).collect(), rounds))
}

/// A description of at most 100 words; a longer reply is re-prompted once
/// and then truncated at a sentence boundary.
pub fn describe_style(exemplars: &[&Tweet], gateway: &Gateway, prompts: &PromptSet) -> Result<String, StyleError> {
    let id = TemplateId::AnalyzePostingStyle;
    let block = prompts::format_tweets(exemplars.iter().copied());
    let prompt = prompts.render(id, &[("posts", block.as_str())]).expect("style template slots are fixed");
    let mut description = String::new();
    for _ in 0..2 {
        let answer = gateway.ask(&prompt, &id.contract(), false)?;
        description = answer
            .record
            .and_then(|r| r.str("description").map(str::to_string))
            .unwrap_or_default();
        if word_count(&description) <= MAX_DESCRIPTION_WORDS {
            return Ok(description.trim().to_string());
        }
    }
    Ok(truncate_words(&description, MAX_DESCRIPTION_WORDS))
}

pub fn build_style_profile(
    timeline: &UserTimeline,
    batch: usize,
    keep: usize,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<StyleProfile, StyleError> {
    let (exemplars, rounds) = select_exemplars(timeline, batch, keep, gateway, prompts)?;
    let tweets: Vec<&Tweet> = exemplars.iter().filter_map(|i| timeline.tweet(*i)).collect();
    let description = describe_style(&tweets, gateway, prompts)?;
    Ok(StyleProfile {
        description,
        exemplars,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{timestamp, AccountInfo};
    use crate::llm::hashing::HashingEmbedder;
    use crate::llm::mock::MockChat;
    use crate::llm::GatewayConfig;
    use std::sync::Arc;

    fn timeline(n: u64) -> UserTimeline {
        let t0 = timestamp::parse("2019-01-01 00:00:00+00:00").unwrap();
        let tweets = (1..=n)
            .map(|i| Tweet::new(i, t0 + chrono::Duration::hours(i as i64), format!("post {i}")))
            .collect();
        UserTimeline::new(AccountInfo::default(), tweets, None)
    }

    fn gw(mock: Arc<MockChat>) -> Gateway {
        Gateway::new(mock, Arc::new(HashingEmbedder::new(32)), GatewayConfig::default())
    }

    #[test]
    fn truncation_at_sentence() {
        let s = format!("{} end. {}", "word ".repeat(60), "more ".repeat(60));
        let t = truncate_words(&s, 100);
        assert!(t.ends_with("end."));
        assert_eq!(word_count(&t), 61);
        assert_eq!(truncate_words("short one.", 100), "short one.");
    }

    #[test]
    fn two_hundred_tweets_three_calls() {
        // Synthetic selection keeps 20 random ids of each batch.
        let mock = Arc::new(MockChat::synthetic(3));
        let tl = timeline(200);
        let g = gw(mock.clone());
        let (ids, rounds) = select_exemplars(&tl, 100, 20, &g, &PromptSet::default()).unwrap();
        assert_eq!(ids.len(), 20);
        assert_eq!(rounds, 2);
        assert_eq!(mock.call_count(), 3);
        assert!(ids.iter().all(|i| tl.tweet(*i).is_some()));
    }

    #[test]
    fn invalid_ids_dropped_after_reprompt() {
        let mock = Arc::new(MockChat::new());
        mock.set_fallback(crate::llm::mock::Fallback::Fixed(
            r#"{"tweet_id": [1, 2, 999], "explanation": ""}"#.into(),
        ));
        let tl = timeline(5);
        let (ids, _) = select_exemplars(&tl, 100, 20, &gw(mock.clone()), &PromptSet::default()).unwrap();
        assert_eq!(ids, vec![1, 2]);
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn long_description_reprompted_then_truncated() {
        let mock = Arc::new(MockChat::new());
        let long = format!("{{\"description\": \"{} Done. {}\"}}", "casual ".repeat(90), "x ".repeat(30));
        mock.set_fallback(crate::llm::mock::Fallback::Fixed(long));
        let tl = timeline(1);
        let tweets: Vec<&Tweet> = tl.tweets.iter().collect();
        let d = describe_style(&tweets, &gw(mock.clone()), &PromptSet::default()).unwrap();
        assert!(d.ends_with("Done."));
        assert!(word_count(&d) <= 100);
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn batch_must_exceed_keep() {
        let tl = timeline(3);
        assert!(matches!(
            select_exemplars(&tl, 20, 20, &gw(Arc::new(MockChat::synthetic(0))), &PromptSet::default()),
            Err(StyleError::BadParams { .. })
        ));
    }
}
