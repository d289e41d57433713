//! Event profile: tweets grouped by detected life event or symptom, each
//! group condensed into one snippet.

use serde::{Deserialize, Serialize};

use super::scoring::{Thresholds, TweetScores};
use super::taxonomy::{CategoryKind, Taxonomy};
use crate::corpus::{Tweet, UserTimeline};
use crate::llm::Gateway;
use crate::prompts::{self, PromptSet, TemplateId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryGroup {
    pub label: String,
    pub kind: CategoryKind,
    pub summary: Option<String>,
    pub tweet_ids: Vec<u64>,
    /// False when the group has tweets but its summary could not be made.
    pub summarized: bool,
}

/// One group per taxonomy category, in taxonomy order; empty groups are
/// kept so the profile can list them as "(none)".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventProfile {
    pub groups: Vec<CategoryGroup>,
}

impl EventProfile {
    pub fn group(&self, label: &str) -> Option<&CategoryGroup> {
        self.groups
            .iter()
            .find(|g| super::taxonomy::same_label(&g.label, label))
    }

    /// Labels of groups holding at least one tweet.
    pub fn detected(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !g.tweet_ids.is_empty())
            .map(|g| g.label.as_str())
            .collect()
    }

    /// Every summary cites at least one tweet of the timeline.
    pub fn validate(&self, timeline: &UserTimeline) -> Result<(), String> {
        for g in &self.groups {
            if g.summary.is_some() && g.tweet_ids.is_empty() {
                return Err(format!("{} has a summary but no supporting tweets", g.label));
            }
            if let Some(id) = g.tweet_ids.iter().find(|id| timeline.tweet(**id).is_none()) {
                return Err(format!("{} cites tweet {id} missing from the timeline", g.label));
            }
        }
        Ok(())
    }
}

/// Tweet ids per category at threshold, in taxonomy order.
pub fn group_tweets(
    timeline: &UserTimeline,
    scores: &TweetScores,
    taxonomy: &Taxonomy,
    thresholds: &Thresholds,
) -> Vec<(String, CategoryKind, Vec<u64>)> {
    let mut groups: Vec<(String, CategoryKind, Vec<u64>)> = taxonomy
        .labels()
        .map(|(l, k)| (l.to_string(), k, Vec::new()))
        .collect();
    for t in &timeline.tweets {
        if let Some(s) = scores.get(t.tweet_id) {
            for ((i, (label, _)), v) in taxonomy.labels().enumerate().zip(s.flat()) {
                if v >= thresholds.for_label(label) {
                    groups[i].2.push(t.tweet_id);
                }
            }
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventProfileConfig {
    pub max_prompt_tweets: usize,
}

impl Default for EventProfileConfig {
    fn default() -> Self {
        EventProfileConfig { max_prompt_tweets: 100 }
    }
}

pub fn build_event_profile(
    timeline: &UserTimeline,
    scores: &TweetScores,
    taxonomy: &Taxonomy,
    thresholds: &Thresholds,
    config: &EventProfileConfig,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> EventProfile {
    let id = TemplateId::SummarizeEventGroup;
    let budget = gateway
        .config()
        .context_budget_tokens
        .saturating_sub(crate::llm::approx_tokens(prompts.template(id)) + 512);
    let groups = group_tweets(timeline, scores, taxonomy, thresholds)
        .into_iter()
        .map(|(label, kind, ids)| {
            if ids.is_empty() {
                return CategoryGroup {
                    label,
                    kind,
                    summary: None,
                    tweet_ids: ids,
                    summarized: true,
                };
            }
            let tweets: Vec<&Tweet> = ids.iter().filter_map(|i| timeline.tweet(*i)).collect();
            let picked = prompts::fit_tweets(&tweets, config.max_prompt_tweets, budget);
            let block = prompts::format_tweets(picked.iter().copied());
            let summary = prompts
                .render(id, &[("category", label.as_str()), ("tweets", block.as_str())])
                .map_err(|e| e.to_string())
                .and_then(|p| gateway.ask(&p, &id.contract(), false).map_err(|e| e.to_string()))
                .map(|a| a.record.and_then(|r| r.str("summary").map(|s| s.trim().to_string())));
            match summary {
                Ok(Some(s)) if !s.is_empty() => CategoryGroup {
                    label,
                    kind,
                    summary: Some(s),
                    tweet_ids: ids,
                    summarized: true,
                },
                other => {
                    if let Err(e) = other {
                        log::warn!("summary for {label} failed: {e}");
                    }
                    CategoryGroup {
                        label,
                        kind,
                        summary: None,
                        tweet_ids: ids,
                        summarized: false,
                    }
                }
            }
        })
        .collect();
    EventProfile { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{timestamp, AccountInfo};
    use crate::llm::hashing::HashingEmbedder;
    use crate::llm::mock::MockChat;
    use crate::llm::GatewayConfig;
    use crate::profiling::scoring::{score_timeline, LexiconScorer};
    use std::sync::Arc;

    fn timeline() -> UserTimeline {
        let ts = timestamp::parse("2019-01-01 00:00:00+00:00").unwrap();
        UserTimeline::new(
            AccountInfo::default(),
            vec![
                Tweet::new(1, ts, "i had my first appointment with my therapist today"),
                Tweet::new(2, ts + chrono::Duration::days(3), "pizza and a movie with friends tonight"),
            ],
            None,
        )
    }

    fn build(p: f64, mock: Arc<MockChat>) -> EventProfile {
        let tl = timeline();
        let tax = Taxonomy::default();
        let scores = score_timeline(&LexiconScorer::new(tax.clone()), &tl.tweets).unwrap();
        let g = Gateway::new(mock, Arc::new(HashingEmbedder::new(32)), GatewayConfig::default());
        build_event_profile(
            &tl,
            &scores,
            &tax,
            &Thresholds::uniform(p),
            &EventProfileConfig::default(),
            &g,
            &PromptSet::default(),
        )
    }

    #[test]
    fn single_category_one_summary() {
        let mock = Arc::new(MockChat::new());
        mock.on_contains("Health", r#"{"summary": "Started seeing a therapist."}"#);
        let ep = build(0.5, mock.clone());
        assert_eq!(ep.groups.len(), 49);
        assert_eq!(ep.detected(), vec!["Health"]);
        let h = ep.group("Health").unwrap();
        assert_eq!(h.summary.as_deref(), Some("Started seeing a therapist."));
        assert_eq!(h.tweet_ids, vec![1]);
        assert_eq!(mock.call_count(), 1);
        assert!(ep.group("Catatonic Behavior").unwrap().summary.is_none());
        ep.validate(&timeline()).unwrap();
    }

    #[test]
    fn unreachable_threshold_detects_nothing() {
        let ep = build(1.01, Arc::new(MockChat::new()));
        assert!(ep.detected().is_empty());
    }

    #[test]
    fn failed_summary_keeps_ids() {
        let ep = build(0.5, Arc::new(MockChat::new()));
        let h = ep.group("Health").unwrap();
        assert!(!h.summarized);
        assert_eq!(h.tweet_ids, vec![1]);
    }
}
