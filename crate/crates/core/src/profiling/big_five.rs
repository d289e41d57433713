//! Big Five traits, one prompt per dimension.

use serde::{Deserialize, Serialize};

use crate::corpus::{Tweet, UserTimeline};
use crate::llm::{AskError, Gateway};
use crate::prompts::{self, PromptSet, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraitLevel {
    Low,
    Medium,
    High,
}

impl TraitLevel {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "low" => Some(TraitLevel::Low),
            "medium" => Some(TraitLevel::Medium),
            "high" => Some(TraitLevel::High),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TraitLevel::Low => "Low",
            TraitLevel::Medium => "Medium",
            TraitLevel::High => "High",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
}

impl Dimension {
    /// Display order of the profile layout.
    pub const ALL: [Dimension; 5] = [
        Dimension::Openness,
        Dimension::Conscientiousness,
        Dimension::Extraversion,
        Dimension::Neuroticism,
        Dimension::Agreeableness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Openness => "Openness",
            Dimension::Conscientiousness => "Conscientiousness",
            Dimension::Extraversion => "Extraversion",
            Dimension::Agreeableness => "Agreeableness",
            Dimension::Neuroticism => "Neuroticism",
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            Dimension::Openness => {
                "Openness reflects curiosity, imagination and willingness to try new ideas, art and experiences. High scorers seek novelty and abstract thinking; low scorers prefer the familiar and concrete."
            }
            Dimension::Conscientiousness => {
                "Conscientiousness reflects organization, dependability and goal-directed self-discipline. High scorers plan ahead and follow through; low scorers are more spontaneous and less structured."
            }
            Dimension::Extraversion => {
                "Extraversion reflects sociability, assertiveness and drawing energy from interaction with others. High scorers are outgoing and talkative; low scorers are reserved and prefer solitude."
            }
            Dimension::Agreeableness => {
                "Agreeableness reflects warmth, trust, cooperation and concern for others. High scorers are kind and accommodating; low scorers are more critical, competitive or blunt."
            }
            Dimension::Neuroticism => {
                "Neuroticism reflects the tendency to experience negative emotions such as anxiety, sadness, anger and stress. High scorers are emotionally reactive; low scorers are calm and resilient."
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitRating {
    pub level: TraitLevel,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigFive {
    pub openness: TraitRating,
    pub conscientiousness: TraitRating,
    pub extraversion: TraitRating,
    pub agreeableness: TraitRating,
    pub neuroticism: TraitRating,
}

impl BigFive {
    pub fn get(&self, d: Dimension) -> &TraitRating {
        match d {
            Dimension::Openness => &self.openness,
            Dimension::Conscientiousness => &self.conscientiousness,
            Dimension::Extraversion => &self.extraversion,
            Dimension::Agreeableness => &self.agreeableness,
            Dimension::Neuroticism => &self.neuroticism,
        }
    }

    pub fn uniform(level: TraitLevel) -> Self {
        let r = || TraitRating {
            level,
            explanation: String::new(),
        };
        BigFive {
            openness: r(),
            conscientiousness: r(),
            extraversion: r(),
            agreeableness: r(),
            neuroticism: r(),
        }
    }

    /// `Openness: Medium` lines in display order.
    pub fn lines(&self) -> Vec<String> {
        Dimension::ALL
            .iter()
            .map(|d| format!("{}: {}", d.name(), self.get(*d).level.as_str()))
            .collect()
    }

    pub fn levels(&self) -> [TraitLevel; 5] {
        Dimension::ALL.map(|d| self.get(d).level)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{dimension:?}: {source}")]
pub struct BigFiveError {
    pub dimension: Dimension,
    #[source]
    pub source: AskError,
}

/// Rates one dimension from a block of tweets.
pub fn rate_dimension(
    dimension: Dimension,
    tweets: &[&Tweet],
    gateway: &Gateway,
    prompts: &PromptSet,
    max_prompt_tweets: usize,
) -> Result<TraitRating, BigFiveError> {
    let id = TemplateId::PersonalityAnalysis;
    let budget = gateway
        .config()
        .context_budget_tokens
        .saturating_sub(crate::llm::approx_tokens(prompts.template(id)) + 1024);
    let picked = prompts::fit_tweets(tweets, max_prompt_tweets, budget);
    let block = prompts::format_tweets(picked.iter().copied());
    let prompt = prompts
        .render(
            id,
            &[
                ("dimension", dimension.name()),
                ("tweets", block.as_str()),
                ("definition", dimension.definition()),
            ],
        )
        .expect("personality template slots are fixed");
    let answer = gateway
        .ask(&prompt, &id.contract(), false)
        .map_err(|source| BigFiveError { dimension, source })?;
    let r = answer.record.expect("None not allowed");
    Ok(TraitRating {
        level: TraitLevel::parse(r.str("score").expect("validated")).expect("validated enumeration"),
        explanation: r.str("explanation").unwrap_or("").to_string(),
    })
}

/// Five prompts over the same tweet sample; dimensions run concurrently
/// through the gateway limiter.
pub fn infer_big_five(
    timeline: &UserTimeline,
    gateway: &Gateway,
    prompts: &PromptSet,
    max_prompt_tweets: usize,
) -> Result<BigFive, BigFiveError> {
    let tweets: Vec<&Tweet> = timeline.tweets.iter().collect();
    let results: Vec<Result<TraitRating, BigFiveError>> = std::thread::scope(|s| {
        let handles: Vec<_> = Dimension::ALL
            .iter()
            .map(|d| {
                let tweets = &tweets;
                s.spawn(move || rate_dimension(*d, tweets, gateway, prompts, max_prompt_tweets))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("rating thread panicked")).collect()
    });
    let mut it = results.into_iter();
    // Dimension::ALL order: O, C, E, N, A
    let openness = it.next().expect("five")?;
    let conscientiousness = it.next().expect("five")?;
    let extraversion = it.next().expect("five")?;
    let neuroticism = it.next().expect("five")?;
    let agreeableness = it.next().expect("five")?;
    Ok(BigFive {
        openness,
        conscientiousness,
        extraversion,
        agreeableness,
        neuroticism,
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

    fn setup(mock: Arc<MockChat>) -> (UserTimeline, Gateway) {
        let ts = timestamp::parse("2019-01-01 00:00:00+00:00").unwrap();
        let tl = UserTimeline::new(AccountInfo::default(), vec![Tweet::new(1, ts, "hello world")], None);
        let g = Gateway::new(mock, Arc::new(HashingEmbedder::new(32)), GatewayConfig::default());
        (tl, g)
    }

    #[test]
    fn all_medium() {
        let mock = Arc::new(MockChat::new());
        mock.set_fallback(crate::llm::mock::Fallback::Fixed(
            r#"{"score": "Medium", "explanation": "balanced"}"#.into(),
        ));
        let (tl, g) = setup(mock.clone());
        let b = infer_big_five(&tl, &g, &PromptSet::default(), 200).unwrap();
        assert_eq!(b, {
            let mut m = BigFive::uniform(TraitLevel::Medium);
            for r in [
                &mut m.openness,
                &mut m.conscientiousness,
                &mut m.extraversion,
                &mut m.agreeableness,
                &mut m.neuroticism,
            ] {
                r.explanation = "balanced".into();
            }
            m
        });
        assert_eq!(mock.call_count(), 5);
    }

    #[test]
    fn mixed_record() {
        let mock = Arc::new(MockChat::new());
        mock.on_contains("according to the Openness trait", r#"{"score": "High", "explanation": "x"}"#);
        mock.set_fallback(crate::llm::mock::Fallback::Fixed(r#"{"score": "Low", "explanation": "y"}"#.into()));
        let (tl, g) = setup(mock);
        let b = infer_big_five(&tl, &g, &PromptSet::default(), 200).unwrap();
        assert_eq!(b.openness.level, TraitLevel::High);
        assert_eq!(b.neuroticism.level, TraitLevel::Low);
    }

    #[test]
    fn very_high_fails_after_one_reprompt() {
        let mock = Arc::new(MockChat::new());
        mock.set_fallback(crate::llm::mock::Fallback::Fixed(
            r#"{"score": "very high", "explanation": "z"}"#.into(),
        ));
        let (tl, g) = setup(mock.clone());
        let err = rate_dimension(Dimension::Openness, &[&tl.tweets[0]], &g, &PromptSet::default(), 200).unwrap_err();
        assert!(matches!(err.source, AskError::Contract { .. }));
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn display_order() {
        let b = BigFive::uniform(TraitLevel::Medium);
        assert_eq!(
            b.lines(),
            [
                "Openness: Medium",
                "Conscientiousness: Medium",
                "Extraversion: Medium",
                "Neuroticism: Medium",
                "Agreeableness: Medium"
            ]
        );
    }
}
