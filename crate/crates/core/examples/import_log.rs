//! Converts a text-only corpus in the common "log + metadata" layout into the
//! dialogue format read by `dst`:
//!
//! ```text
//! {"<id>": {"log": [{"text": "..", "metadata": {}},
//!                   {"text": "..", "metadata": {"<domain>": {"semi": {"<slot>": "<value>"}, "book": {..}}}}, ..]}}
//! ```
//!
//! Even entries are user turns, odd entries are agent turns whose metadata holds
//! the state after the preceding user turn.
//!
//! Usage: `cargo run --example import_log -- in.json out.json [name]`

use std::collections::BTreeSet;
use std::path::Path;

use dst_joint::data::io::save_corpus;
use dst_joint::data::{Corpus, Modality};
use dst_joint::state::{normalize_state, Dialogue, DialogueState, Turn};
use serde_json::Value;

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

const EMPTY: [&str; 3] = ["", "not mentioned", "none"];

fn state_of(metadata: &Value) -> DialogueState {
    let mut state = DialogueState::new();
    let Some(domains) = metadata.as_object() else {
        return state;
    };
    for (domain, parts) in domains {
        for part in ["semi", "book"] {
            let Some(slots) = parts.get(part).and_then(Value::as_object) else {
                continue;
            };
            for (slot, v) in slots {
                if let Some(v) = v.as_str().filter(|v| !EMPTY.contains(v)) {
                    state.insert(domain.as_str(), slot.as_str(), v);
                }
            }
        }
    }
    normalize_state(&state)
}

fn convert(id: &str, log: &[Value]) -> Option<Dialogue> {
    let text = |i: usize| log.get(i).and_then(|t| t.get("text")).and_then(Value::as_str);
    let mut turns = Vec::new();
    let mut domains = BTreeSet::new();
    let mut i = 0;
    while let Some(user) = text(i) {
        let state = log.get(i + 1).and_then(|t| t.get("metadata")).map(state_of).unwrap_or_default();
        domains.extend(state.domains().map(str::to_owned));
        turns.push(Turn::user(user, state));
        if let Some(agent) = text(i + 1) {
            turns.push(Turn::agent(agent));
        }
        i += 2;
    }
    let d = Dialogue {
        id: id.to_owned(),
        domain_tags: domains,
        turns,
    };
    d.validate().ok().map(|_| d)
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [input, output, rest @ ..] = args.as_slice() else {
        return Err("usage: import_log IN.json OUT.json [NAME]".into());
    };
    let raw: Value = serde_json::from_slice(&std::fs::read(input)?)?;
    let entries = raw.as_object().ok_or("top level must be an object keyed by dialogue id")?;
    let mut dialogues = Vec::new();
    let mut skipped = 0;
    for (id, body) in entries {
        match body.get("log").and_then(Value::as_array).and_then(|log| convert(id, log)) {
            Some(d) => dialogues.push(d),
            None => skipped += 1,
        }
    }
    let name = rest.first().cloned().unwrap_or_else(|| "imported".into());
    let corpus = Corpus::new(name, Modality::Text, dialogues);
    save_corpus(&corpus, Path::new(output))?;
    eprintln!("wrote {} dialogues ({skipped} skipped) to {output}", corpus.dialogues.len());
    Ok(())
}
