//! Dialogues, turns, cumulative dialogue states and the value ontology.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::tensor::Tensor;

/// Cumulative mapping `domain -> slot -> value` at one user turn.
///
/// Nesting is kept here; the flattened `"domain: slot"` form only exists in
/// reports.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogueState {
    entries: BTreeMap<String, BTreeMap<String, String>>,
}

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a state from `(domain, slot, value)` triples; later triples win.
    pub fn from_triples<I, D, S, V>(triples: I) -> Self
    where
        I: IntoIterator<Item = (D, S, V)>,
        D: Into<String>,
        S: Into<String>,
        V: Into<String>,
    {
        let mut s = Self::new();
        for (d, k, v) in triples {
            s.insert(d, k, v);
        }
        s
    }

    pub fn insert(&mut self, domain: impl Into<String>, slot: impl Into<String>, value: impl Into<String>) {
        self.entries
            .entry(domain.into())
            .or_default()
            .insert(slot.into(), value.into());
    }

    pub fn get(&self, domain: &str, slot: &str) -> Option<&str> {
        self.entries.get(domain)?.get(slot).map(String::as_str)
    }

    pub fn contains_key(&self, domain: &str, slot: &str) -> bool {
        self.get(domain, slot).is_some()
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, BTreeMap<String, String>> {
        &self.entries
    }

    /// All `(domain, slot, value)` triples in sorted order.
    pub fn triples(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.entries.iter().flat_map(|(d, slots)| {
            slots
                .iter()
                .map(move |(s, v)| (d.as_str(), s.as_str(), v.as_str()))
        })
    }

    pub fn keys(&self) -> BTreeSet<(String, String)> {
        self.triples()
            .map(|(d, s, _)| (d.to_owned(), s.to_owned()))
            .collect()
    }

    /// Number of `(domain, slot)` pairs.
    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Replaces every value through `f(domain, slot, value)`.
    pub fn map_values(&self, mut f: impl FnMut(&str, &str, &str) -> String) -> Self {
        let mut out = Self::new();
        for (d, s, v) in self.triples() {
            let nv = f(d, s, v);
            out.insert(d, s, nv);
        }
        out
    }

    /// Union of two states; `other` wins on conflicting slots.
    pub fn merged(&self, other: &DialogueState) -> Self {
        let mut out = self.clone();
        for (d, s, v) in other.triples() {
            out.insert(d, s, v);
        }
        out
    }
}

/// NFC, lowercase, collapse internal whitespace, trim.
pub fn normalize_text(s: &str) -> String {
    let lowered: String = s.nfc().collect::<String>().to_lowercase();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalizes every domain, slot and value. Empty domains are dropped. Keys
/// that collide after normalization merge, keeping the value that sorts last
/// in the original key order.
pub fn normalize_state(state: &DialogueState) -> DialogueState {
    let mut out = DialogueState::new();
    for (d, s, v) in state.triples() {
        out.insert(normalize_text(d), normalize_text(s), normalize_text(v));
    }
    out
}

/// Whole-state equality of two normalized states.
pub fn states_equal(a: &DialogueState, b: &DialogueState) -> bool {
    a == b
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Turn {
    pub speaker: Speaker,
    pub transcript: String,
    /// Acoustic frames, `T x d_enc`; user turns only.
    pub frames: Option<Tensor>,
    /// Cumulative gold state after this turn; user turns only.
    pub gold_state: Option<DialogueState>,
}

impl Turn {
    pub fn user(transcript: impl Into<String>, state: DialogueState) -> Self {
        Self {
            speaker: Speaker::User,
            transcript: transcript.into(),
            frames: None,
            gold_state: Some(state),
        }
    }

    pub fn agent(transcript: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Agent,
            transcript: transcript.into(),
            frames: None,
            gold_state: None,
        }
    }

    pub fn with_frames(mut self, frames: Tensor) -> Self {
        self.frames = Some(frames);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub domain_tags: BTreeSet<String>,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DialogueError {
    #[error("dialogue {0} has no user turn")]
    NoUserTurn(String),
    #[error("dialogue {id}: turns {index} and {next} have the same speaker")]
    NotAlternating { id: String, index: usize, next: usize },
    #[error("dialogue {id}: agent turn {index} carries frames")]
    AgentFrames { id: String, index: usize },
    #[error("dialogue {id}: agent turn {index} carries a state")]
    AgentState { id: String, index: usize },
}

impl Dialogue {
    pub fn validate(&self) -> Result<(), DialogueError> {
        if !self.turns.iter().any(|t| t.speaker == Speaker::User) {
            return Err(DialogueError::NoUserTurn(self.id.clone()));
        }
        for (i, pair) in self.turns.windows(2).enumerate() {
            if pair[0].speaker == pair[1].speaker {
                return Err(DialogueError::NotAlternating {
                    id: self.id.clone(),
                    index: i,
                    next: i + 1,
                });
            }
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.speaker == Speaker::Agent {
                if t.frames.is_some() {
                    return Err(DialogueError::AgentFrames {
                        id: self.id.clone(),
                        index: i,
                    });
                }
                if t.gold_state.is_some() {
                    return Err(DialogueError::AgentState {
                        id: self.id.clone(),
                        index: i,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn user_turns(&self) -> impl Iterator<Item = (usize, &Turn)> {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.speaker == Speaker::User)
    }

    pub fn n_user_turns(&self) -> usize {
        self.user_turns().count()
    }

    /// Reference transcripts of every turn before `index`, joined by `\n`.
    pub fn history_before(&self, index: usize) -> String {
        render_history(self.turns[..index].iter().map(|t| t.transcript.as_str()))
    }
}

/// Joins turn transcripts with a single newline between consecutive turns.
pub fn render_history<'a>(turns: impl IntoIterator<Item = &'a str>) -> String {
    turns.into_iter().collect::<Vec<_>>().join("\n")
}

/// Legal values per `(domain, slot)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ontology {
    slots: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
}

impl Ontology {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a value, normalizing it and the key.
    pub fn add(&mut self, domain: &str, slot: &str, value: &str) {
        self.slots
            .entry(normalize_text(domain))
            .or_default()
            .entry(normalize_text(slot))
            .or_default()
            .insert(normalize_text(value));
    }

    pub fn add_state(&mut self, state: &DialogueState) {
        for (d, s, v) in state.triples() {
            self.add(d, s, v);
        }
    }

    pub fn values(&self, domain: &str, slot: &str) -> Option<&BTreeSet<String>> {
        self.slots.get(domain)?.get(slot)
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.slots
            .iter()
            .flat_map(|(d, m)| m.keys().map(move |s| (d.as_str(), s.as_str())))
    }

    pub fn contains(&self, domain: &str, slot: &str, value: &str) -> bool {
        self.values(domain, slot).is_some_and(|v| v.contains(value))
    }

    pub fn merge(&mut self, other: &Ontology) {
        for (d, slots) in &other.slots {
            for (s, vals) in slots {
                let entry = self.slots.entry(d.clone()).or_default().entry(s.clone()).or_default();
                entry.extend(vals.iter().cloned());
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}
