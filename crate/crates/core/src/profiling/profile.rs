//! The assembled profile and its text layout.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::big_five::BigFive;
use super::events::EventProfile;
use super::general::GeneralAttributes;
use super::style::StyleProfile;
use crate::corpus::{timestamp, AccountInfo};

/// Which parts reach the generation prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProfileVariant {
    /// No profile at all.
    #[default]
    #[serde(rename = "-", alias = "none")]
    None,
    /// General attributes and account metadata.
    #[serde(rename = "normal")]
    Normal,
    /// Normal plus the event profile.
    #[serde(rename = "event")]
    Event,
}

impl ProfileVariant {
    pub const ALL: [ProfileVariant; 3] = [ProfileVariant::None, ProfileVariant::Normal, ProfileVariant::Event];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileVariant::None => "-",
            ProfileVariant::Normal => "normal",
            ProfileVariant::Event => "event",
        }
    }
}

impl fmt::Display for ProfileVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "-" | "none" => Ok(ProfileVariant::None),
            "normal" => Ok(ProfileVariant::Normal),
            "event" => Ok(ProfileVariant::Event),
            other => Err(format!("unknown profile variant {other:?}")),
        }
    }
}

/// Everything profiling produced for one user; any part may be missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileParts {
    pub user_id: u64,
    pub general: Option<GeneralAttributes>,
    pub account: Option<AccountInfo>,
    pub events: Option<EventProfile>,
    pub big_five: Option<BigFive>,
    pub style: Option<StyleProfile>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub variant: ProfileVariant,
    pub user_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub general: Option<GeneralAttributes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub account: Option<AccountInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<EventProfile>,
    /// Stage II guidance; never part of the generation profile block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_five: Option<BigFive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<StyleProfile>,
}

/// Keeps the parts `variant` allows. Big Five and style are carried for
/// every variant except `-`.
pub fn assemble_profile(variant: ProfileVariant, parts: ProfileParts) -> Profile {
    match variant {
        ProfileVariant::None => Profile {
            variant,
            user_id: parts.user_id,
            ..Profile::default()
        },
        ProfileVariant::Normal => Profile {
            variant,
            user_id: parts.user_id,
            general: parts.general,
            account: parts.account,
            events: None,
            big_five: parts.big_five,
            style: parts.style,
        },
        ProfileVariant::Event => Profile {
            variant,
            user_id: parts.user_id,
            general: parts.general,
            account: parts.account,
            events: parts.events,
            big_five: parts.big_five,
            style: parts.style,
        },
    }
}

const NONE: &str = "(none)";

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        NONE
    } else {
        s.trim()
    }
}

impl Profile {
    pub fn is_empty(&self) -> bool {
        self.general.is_none() && self.account.is_none() && self.events.is_none()
    }

    /// The full layout, Big Five included.
    pub fn to_text(&self) -> String {
        self.render(true)
    }

    /// The block given to the draft prompt: the layout without Big Five.
    /// Empty for the `-` variant.
    pub fn generation_block(&self) -> String {
        self.render(false)
    }

    fn render(&self, big_five: bool) -> String {
        if self.variant == ProfileVariant::None {
            return String::new();
        }
        let mut lines = vec![format!("User ID: {}", self.user_id)];
        if let Some(g) = &self.general {
            lines.push(format!("Age: {}", g.age.map(|a| a.to_string()).unwrap_or_else(|| NONE.into())));
            lines.push(format!("Gender: {}", g.gender.map(|x| x.display()).unwrap_or(NONE)));
            lines.push(format!("Marital Status: {}", g.marital_status.display()));
            lines.push(format!("Career Domain: {}", g.career_name().unwrap_or(NONE)));
            lines.push(format!("Work Status: {}", g.work_status.display()));
            lines.push(format!("Description: {}", or_none(&g.description)));
        }
        if let Some(a) = &self.account {
            if self.general.is_none() {
                lines.push(format!("Description: {}", or_none(&a.description)));
            }
            lines.push(format!(
                "Creation Timestamp: {}",
                a.created_at.as_ref().map(timestamp::format).unwrap_or_else(|| NONE.into())
            ));
            lines.push(format!("Favourites Count: {}", a.favourites_count));
            lines.push(format!("Followers Count: {}", a.followers_count));
            lines.push(format!("Friends Count: {}", a.friends_count));
            lines.push(format!("Geo Tag: {}", or_none(a.geo_tag.as_deref().unwrap_or(""))));
            lines.push(format!("Status Count: {}", a.statuses_count));
            lines.push(format!("Verified Check: {}", if a.verified { "Yes" } else { "No" }));
        }
        if big_five {
            if let Some(b) = &self.big_five {
                lines.push("Big Five Personality Traits:".into());
                lines.extend(b.lines().into_iter().map(|l| format!("  {l}")));
            }
        }
        if let Some(e) = &self.events {
            lines.push("Life Events:".into());
            for g in &e.groups {
                let text = match (&g.summary, g.tweet_ids.is_empty()) {
                    (Some(s), _) => s.clone(),
                    (None, true) => NONE.into(),
                    (None, false) => "(unsummarized)".into(),
                };
                lines.push(format!("  {}: {}", g.label, text));
            }
        }
        lines.join("\n")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiling::big_five::TraitLevel;
    use crate::profiling::general::{MaritalStatus, WorkStatus};

    fn parts() -> ProfileParts {
        ProfileParts {
            user_id: 9,
            general: Some(GeneralAttributes {
                age: Some(30),
                marital_status: MaritalStatus::Single,
                work_status: WorkStatus::Student,
                ..Default::default()
            }),
            account: Some(AccountInfo::default()),
            events: Some(EventProfile::default()),
            big_five: Some(BigFive::uniform(TraitLevel::High)),
            style: None,
        }
    }

    #[test]
    fn variants_select_parts() {
        let none = assemble_profile(ProfileVariant::None, parts());
        assert!(none.is_empty());
        assert_eq!(none.generation_block(), "");
        let normal = assemble_profile(ProfileVariant::Normal, parts());
        assert!(normal.events.is_none() && normal.general.is_some());
        let event = assemble_profile(ProfileVariant::Event, parts());
        assert!(event.events.is_some());
        assert!(event.to_text().contains("Big Five Personality Traits:"));
        assert!(!event.generation_block().contains("Openness"));
    }

    #[test]
    fn json_round_trip() {
        let p = assemble_profile(ProfileVariant::Event, parts());
        assert_eq!(Profile::from_json(&p.to_json()).unwrap(), p);
        let v: serde_json::Value = serde_json::from_str(&assemble_profile(ProfileVariant::None, parts()).to_json()).unwrap();
        assert_eq!(v["variant"], "-");
    }
}
