//! Two-tier user profile: general attributes from regex, embeddings and
//! prompts; personalized attributes from event/symptom scores, Big Five
//! ratings and style exemplars.

pub mod big_five;
pub mod events;
pub mod general;
pub mod profile;
pub mod scoring;
pub mod style;
pub mod taxonomy;

use serde::{Deserialize, Serialize};

pub use big_five::{infer_big_five, BigFive, Dimension, TraitLevel, TraitRating};
pub use events::{build_event_profile, EventProfile, EventProfileConfig};
pub use general::{extract_general_attributes, GeneralAttributes, GeneralConfig};
pub use profile::{assemble_profile, Profile, ProfileParts, ProfileVariant};
pub use scoring::{score_timeline, EventScorer, EventSymptomScores, LexiconScorer, Thresholds, TweetScores};
pub use style::{build_style_profile, StyleProfile};
pub use taxonomy::Taxonomy;

use crate::corpus::UserTimeline;
use crate::llm::Gateway;
use crate::prompts::PromptSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfilingParams {
    pub style_batch: usize,
    pub style_keep: usize,
    pub max_prompt_tweets: usize,
}

impl Default for ProfilingParams {
    fn default() -> Self {
        ProfilingParams {
            style_batch: 100,
            style_keep: 20,
            max_prompt_tweets: 200,
        }
    }
}

/// Result of profiling one user. Parts that failed are `None`, with the
/// reason in `errors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilingOutput {
    pub parts: ProfileParts,
    pub errors: Vec<String>,
}

/// Builds every profile part for one timeline from precomputed scores.
#[allow(clippy::too_many_arguments)]
pub fn build_parts(
    timeline: &UserTimeline,
    scores: &TweetScores,
    taxonomy: &Taxonomy,
    thresholds: &Thresholds,
    general: &GeneralConfig,
    params: &ProfilingParams,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> ProfilingOutput {
    let mut errors = Vec::new();
    let g = extract_general_attributes(timeline, general, gateway, prompts);
    let events = build_event_profile(
        timeline,
        scores,
        taxonomy,
        thresholds,
        &EventProfileConfig {
            max_prompt_tweets: params.max_prompt_tweets.min(100),
        },
        gateway,
        prompts,
    );
    let big_five = infer_big_five(timeline, gateway, prompts, params.max_prompt_tweets)
        .map_err(|e| errors.push(format!("big five: {e}")))
        .ok();
    let style = build_style_profile(timeline, params.style_batch, params.style_keep, gateway, prompts)
        .map_err(|e| errors.push(format!("style: {e}")))
        .ok();
    ProfilingOutput {
        parts: ProfileParts {
            user_id: timeline.user_id,
            general: Some(g),
            account: Some(timeline.account.clone()),
            events: Some(events),
            big_five,
            style,
        },
        errors,
    }
}
