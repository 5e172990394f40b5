//! The JSON target string: `{"transcript":"...","state":{"domain":{"slot":"value"}}}`.
//!
//! Keys appear in that fixed order, domains and slots sorted, no whitespace
//! outside strings. Decoding accepts the first complete JSON object and ignores
//! anything generated after it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::error::Category;
use serde_json::Value;

use crate::state::{normalize_state, normalize_text, DialogueState};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetString(pub String);

impl TargetString {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for TargetString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Serialize)]
struct Target<'a> {
    transcript: &'a str,
    state: &'a DialogueState,
}

pub fn encode_target(transcript: &str, state: &DialogueState) -> TargetString {
    TargetString(
        serde_json::to_string(&Target { transcript, state })
            .expect("string maps always serialize"),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    Truncated,
    InvalidJson,
    WrongSchema,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub reason: FailureReason,
    /// Whatever `domain -> slot -> value` structure could be scanned.
    pub partial: DialogueState,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub transcript: String,
    pub state: DialogueState,
}

pub fn decode_output(raw: &str) -> Result<Decoded, ParseFailure> {
    let fail = |reason| ParseFailure {
        reason,
        partial: scan_partial_state(raw),
    };
    let Some(start) = raw.find('{') else {
        return Err(fail(if raw.trim().is_empty() {
            FailureReason::Truncated
        } else {
            FailureReason::InvalidJson
        }));
    };
    let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) if e.classify() == Category::Eof => return Err(fail(FailureReason::Truncated)),
        Some(Err(_)) => return Err(fail(FailureReason::InvalidJson)),
        None => return Err(fail(FailureReason::Truncated)),
    };
    from_value(&value).ok_or_else(|| fail(FailureReason::WrongSchema))
}

fn from_value(value: &Value) -> Option<Decoded> {
    let obj = value.as_object()?;
    if obj.len() != 2 {
        return None;
    }
    let transcript = obj.get("transcript")?.as_str()?.to_owned();
    let mut state = DialogueState::new();
    for (domain, slots) in obj.get("state")?.as_object()? {
        let slots = slots.as_object()?;
        if slots.is_empty() {
            return None;
        }
        for (slot, v) in slots {
            state.insert(domain.clone(), slot.clone(), v.as_str()?);
        }
    }
    Some(Decoded {
        transcript,
        state: normalize_state(&state),
    })
}

#[derive(Debug, PartialEq)]
enum Lex {
    Str(String),
    Open,
    Close,
    Colon,
    Comma,
}

/// Lenient lexer; drops unterminated strings and unknown characters.
fn lex(raw: &str) -> Vec<Lex> {
    let mut out = Vec::new();
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        match c {
            '{' => out.push(Lex::Open),
            '}' => out.push(Lex::Close),
            ':' => out.push(Lex::Colon),
            ',' => out.push(Lex::Comma),
            '"' => {
                let mut s = String::new();
                let mut closed = false;
                while let Some(c) = chars.next() {
                    match c {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\\' => {
                            if let Some(e) = chars.next() {
                                s.push(match e {
                                    'n' => '\n',
                                    't' => '\t',
                                    other => other,
                                });
                            }
                        }
                        other => s.push(other),
                    }
                }
                if closed {
                    out.push(Lex::Str(s));
                }
            }
            _ => {}
        }
    }
    out
}

/// Recovers complete `"slot":"value"` pairs nested as `"state":{"domain":{...}}`.
fn scan_partial_state(raw: &str) -> DialogueState {
    let toks = lex(raw);
    let mut state = BTreeMap::<String, BTreeMap<String, String>>::new();
    // Keys that opened each currently open object.
    let mut path: Vec<Option<String>> = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        match &toks[i] {
            Lex::Open => path.push(None),
            Lex::Close => {
                path.pop();
            }
            Lex::Str(key) if matches!(toks.get(i + 1), Some(Lex::Colon)) => match toks.get(i + 2) {
                Some(Lex::Open) => {
                    path.push(Some(key.clone()));
                    i += 3;
                    continue;
                }
                Some(Lex::Str(value)) => {
                    let in_domain = path.len() == 3 && path[1].as_deref() == Some("state");
                    if let (true, Some(Some(domain))) = (in_domain, path.get(2)) {
                        state
                            .entry(domain.clone())
                            .or_default()
                            .insert(key.clone(), value.clone());
                    }
                    i += 3;
                    continue;
                }
                _ => {}
            },
            _ => {}
        }
        i += 1;
    }
    let mut out = DialogueState::new();
    for (d, slots) in state {
        for (s, v) in slots {
            out.insert(normalize_text(&d), normalize_text(&s), normalize_text(&v));
        }
    }
    out
}
