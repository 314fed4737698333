//! Event/entity ontology loaded from a TOML document.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One event type with its ordered argument roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTypeDef {
    pub id: String,
    pub label: String,
    pub roles: Vec<String>,
    /// Single-sentence template, `{argK}` slots with `[...]` optional groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// Present-tense verb form used when editing a caption trigger.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb_present: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb_past: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTypeDef {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    pub event_types: Vec<EventTypeDef>,
    #[serde(default)]
    pub entity_types: Vec<EntityTypeDef>,
    /// Role id to the phrase used when a role is spelled out in a prompt.
    #[serde(default)]
    pub role_descriptions: BTreeMap<String, String>,
    #[serde(default)]
    pub type_frequency: BTreeMap<String, u64>,
}

const RUNNING_EXAMPLE: &str = include_str!("../fixtures/ontology.toml");
const TOY: &str = include_str!("../fixtures/toy_ontology.toml");

impl Ontology {
    /// Transport/Arrest/Attack ontology used throughout the docs and tests.
    pub fn running_example() -> Self {
        Self::from_toml_str(RUNNING_EXAMPLE).expect("bundled ontology is valid")
    }

    /// Ten-type ontology used by the synthetic corpora.
    pub fn toy() -> Self {
        Self::from_toml_str(TOY).expect("bundled toy ontology is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let ont: Ontology = toml::from_str(text).map_err(|e| Error::Ontology(e.to_string()))?;
        ont.check()?;
        Ok(ont)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Ontology(e.to_string()))
    }

    fn check(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for ev in &self.event_types {
            if !ids.insert(ev.id.as_str()) {
                return Err(Error::Ontology(format!("duplicate event type `{}`", ev.id)));
            }
            if ev.roles.is_empty() {
                return Err(Error::Ontology(format!(
                    "event type `{}` has no roles",
                    ev.id
                )));
            }
            let mut roles = HashSet::new();
            for r in &ev.roles {
                if !roles.insert(r.as_str()) {
                    return Err(Error::Ontology(format!(
                        "event type `{}` lists role `{r}` twice",
                        ev.id
                    )));
                }
            }
        }
        for role in self.role_descriptions.keys() {
            if !self.is_known_role(role) {
                return Err(Error::Ontology(format!(
                    "role description for `{role}` matches no event type's roles"
                )));
            }
        }
        for ty in self.type_frequency.keys() {
            if !ids.contains(ty.as_str()) {
                return Err(Error::Ontology(format!(
                    "frequency given for unknown type `{ty}`"
                )));
            }
        }
        Ok(())
    }

    pub fn event_type(&self, id: &str) -> Option<&EventTypeDef> {
        self.event_types.iter().find(|e| e.id == id)
    }

    pub fn roles(&self, event_type: &str) -> Option<&[String]> {
        self.event_type(event_type).map(|e| e.roles.as_slice())
    }

    pub fn event_type_ids(&self) -> Vec<String> {
        self.event_types.iter().map(|e| e.id.clone()).collect()
    }

    /// Display label of an event type, falling back to its id.
    pub fn event_label<'a>(&'a self, event_type: &'a str) -> &'a str {
        self.event_type(event_type)
            .map(|e| e.label.as_str())
            .unwrap_or(event_type)
    }

    pub fn role_phrase<'a>(&'a self, role: &'a str) -> &'a str {
        self.role_descriptions
            .get(role)
            .map(String::as_str)
            .unwrap_or(role)
    }

    /// Entity (or object) type label; unknown ids are used verbatim.
    pub fn entity_label<'a>(&'a self, type_id: &'a str) -> &'a str {
        self.entity_types
            .iter()
            .find(|e| e.id == type_id)
            .map(|e| e.label.as_str())
            .unwrap_or(type_id)
    }

    pub fn frequency(&self, event_type: &str) -> u64 {
        self.type_frequency.get(event_type).copied().unwrap_or(0)
    }

    pub fn is_known_role(&self, role: &str) -> bool {
        self.event_types
            .iter()
            .any(|e| e.roles.iter().any(|r| r == role))
    }

    /// Argument description "⟨Role⟩ of ⟨Type⟩", e.g. "Entity of Transport".
    pub fn argument_description(&self, role: &str, event_type: &str) -> String {
        format!(
            "{} of {}",
            capitalize(self.role_phrase(role)),
            self.event_label(event_type)
        )
    }

    /// Verb form substituted for a trigger when editing a caption. Triggers
    /// ending in "ed" take the past form; anything else the present form.
    /// Missing forms fall back to the lowercased type label.
    pub fn verb_form(&self, event_type: &str, trigger: &str) -> String {
        let def = self.event_type(event_type);
        let past = trigger.to_lowercase().ends_with("ed");
        let form = def.and_then(|d| {
            if past {
                d.verb_past.clone().or_else(|| d.verb_present.clone())
            } else {
                d.verb_present.clone().or_else(|| d.verb_past.clone())
            }
        });
        form.unwrap_or_else(|| self.event_label(event_type).to_lowercase())
    }
}

pub(crate) fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub(crate) fn decapitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}
