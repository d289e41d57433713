//! Life-event and symptom category lists.

use serde::{Deserialize, Serialize};

/// Life-event categories in display form. The scorer's default vector
/// uses the first eleven; `Societal` is only part of the extended list.
pub const LIFE_EVENTS: [&str; 12] = [
    "Career",
    "Death",
    "Education",
    "Financial",
    "Health",
    "Identity",
    "Legal",
    "Lifestyle Change",
    "New Birth in Family",
    "Relationships Changes",
    "Relocation",
    "Societal",
];

pub const SYMPTOMS: [&str; 38] = [
    "Anxious Mood",
    "Autonomic Symptoms",
    "Cardiovascular Symptoms",
    "Catatonic Behavior",
    "Decreased Energy/Tiredness/Fatigue",
    "Depressed Mood",
    "Gastrointestinal Symptoms",
    "Genitourinary Symptoms",
    "Hyperactivity/Agitation",
    "Impulsivity",
    "Inattention",
    "Indecisiveness",
    "Respiratory Symptoms",
    "Suicidal Ideas",
    "Worthlessness and Guilty",
    "Avoidance of Stimuli",
    "Compensatory Behaviors to Prevent Weight Gain",
    "Compulsions",
    "Diminished Emotional Expression",
    "Do Things Easily Get Painful Consequences",
    "Drastical Shift in Mood and Energy",
    "Fear About Social Situations",
    "Fear of Gaining Weight",
    "Fears of Being Negatively Evaluated",
    "Flight of Ideas",
    "Intrusion Symptoms",
    "Loss of Interest or Motivation",
    "More Talkative",
    "Obsession",
    "Panic Fear",
    "Pessimism",
    "Poor Memory",
    "Sleep Disturbance",
    "Somatic Muscle",
    "Somatic Symptoms (Others)",
    "Somatic Symptoms (Sensory)",
    "Weight and Appetite Change",
    "Anger/Irritability",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryKind {
    LifeEvent,
    Symptom,
}

/// Labels compare case-insensitively with `_` and spaces treated alike.
pub fn same_label(a: &str, b: &str) -> bool {
    let norm = |s: &str| s.trim().replace('_', " ").to_lowercase();
    norm(a) == norm(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub life_events: Vec<String>,
    pub symptoms: Vec<String>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy {
            life_events: LIFE_EVENTS[..11].iter().map(|s| s.to_string()).collect(),
            symptoms: SYMPTOMS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Taxonomy {
    /// Twelve life events (adds `Societal`) plus the 38 symptoms.
    pub fn extended() -> Self {
        Taxonomy {
            life_events: LIFE_EVENTS.iter().map(|s| s.to_string()).collect(),
            ..Taxonomy::default()
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.life_events.len(), self.symptoms.len())
    }

    pub fn total_dims(&self) -> usize {
        self.life_events.len() + self.symptoms.len()
    }

    /// All labels, life events first.
    pub fn labels(&self) -> impl Iterator<Item = (&str, CategoryKind)> {
        self.life_events
            .iter()
            .map(|s| (s.as_str(), CategoryKind::LifeEvent))
            .chain(self.symptoms.iter().map(|s| (s.as_str(), CategoryKind::Symptom)))
    }

    /// Position in the flattened (life events, then symptoms) vector.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels().position(|(l, _)| same_label(l, label))
    }

    pub fn kind_of(&self, label: &str) -> Option<CategoryKind> {
        self.labels().find(|(l, _)| same_label(l, label)).map(|(_, k)| k)
    }

    pub fn canonical(&self, label: &str) -> Option<&str> {
        self.labels().find(|(l, _)| same_label(l, label)).map(|(l, _)| l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dims() {
        assert_eq!(Taxonomy::default().dims(), (11, 38));
        assert_eq!(Taxonomy::default().total_dims(), 49);
        assert_eq!(Taxonomy::extended().dims(), (12, 38));
    }

    #[test]
    fn labels_match_prompt_spelling() {
        let t = Taxonomy::default();
        assert_eq!(t.index_of("Lifestyle_Change"), Some(7));
        assert_eq!(t.index_of("anxious mood"), Some(11));
        assert_eq!(t.canonical("New_Birth_in_Family"), Some("New Birth in Family"));
        assert_eq!(t.index_of("Societal"), None);
        assert_eq!(Taxonomy::extended().index_of("Societal"), Some(11));
    }
}
