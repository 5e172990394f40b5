//! Ontology fuzzy matching, joint goal accuracy and per-slot recall.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::ParseFailure;
use crate::par::{self, ExecMode};
use crate::state::{states_equal, DialogueState, Ontology};

/// Default similarity needed before a value is snapped to the ontology.
pub const DEFAULT_THRESHOLD: f64 = 0.9;

/// A decoded model state, or the reason decoding failed.
pub type Prediction = Result<DialogueState, ParseFailure>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("{preds} predictions for {golds} gold states")]
    LengthMismatch { preds: usize, golds: usize },
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - lev(a, b) / max(|a|, |b|)`, with two empty strings fully similar.
pub fn similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// Closest candidate by [`similarity`] if it reaches `threshold`, else `value`.
/// Ties go to the lexicographically smallest candidate.
pub fn fuzzy_match(value: &str, candidates: &BTreeSet<String>, threshold: f64) -> String {
    let mut best: Option<(&String, f64)> = None;
    // BTreeSet iterates in lexicographic order, so strict `>` keeps the smallest on ties.
    for c in candidates {
        let sim = similarity(value, c);
        if best.map_or(true, |(_, b)| sim > b) {
            best = Some((c, sim));
        }
    }
    match best {
        Some((c, sim)) if sim >= threshold => c.clone(),
        _ => value.to_owned(),
    }
}

pub fn postprocess_state(state: &DialogueState, ontology: &Ontology, threshold: f64) -> DialogueState {
    state.map_values(|d, s, v| match ontology.values(d, s) {
        Some(cands) => fuzzy_match(v, cands, threshold),
        None => v.to_owned(),
    })
}

fn check_lengths(preds: usize, golds: usize) -> Result<(), EvalError> {
    if preds != golds {
        return Err(EvalError::LengthMismatch { preds, golds });
    }
    Ok(())
}

/// Fraction of turns whose prediction parsed and equals the gold state.
pub fn joint_goal_accuracy(preds: &[Prediction], golds: &[DialogueState]) -> Result<f64, EvalError> {
    joint_goal_accuracy_with(ExecMode::default(), preds, golds)
}

pub fn joint_goal_accuracy_with(
    mode: ExecMode,
    preds: &[Prediction],
    golds: &[DialogueState],
) -> Result<f64, EvalError> {
    check_lengths(preds.len(), golds.len())?;
    if golds.is_empty() {
        return Ok(0.0);
    }
    let hits = par::map_range(mode, golds.len(), |i| match &preds[i] {
        Ok(p) => states_equal(p, &golds[i]),
        Err(_) => false,
    });
    Ok(hits.iter().filter(|&&h| h).count() as f64 / golds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub jga: f64,
    pub n_turns: usize,
    /// Keyed by `"domain: slot"`.
    pub per_key_recall: BTreeMap<String, f64>,
    /// Among turns where the key was recalled, the fraction with the gold value.
    /// Zero for keys that were never recalled.
    pub value_recall_given_key: BTreeMap<String, f64>,
    pub parse_failure_rate: f64,
}

pub fn key_label(domain: &str, slot: &str) -> String {
    format!("{domain}: {slot}")
}

#[derive(Default, Clone, Copy)]
struct KeyCounts {
    gold: usize,
    recalled: usize,
    value_ok: usize,
}

pub fn recall_report(preds: &[Prediction], golds: &[DialogueState]) -> Result<EvalReport, EvalError> {
    recall_report_with(ExecMode::default(), preds, golds)
}

pub fn recall_report_with(
    mode: ExecMode,
    preds: &[Prediction],
    golds: &[DialogueState],
) -> Result<EvalReport, EvalError> {
    let jga = joint_goal_accuracy_with(mode, preds, golds)?;
    // Per-turn tallies in parallel, merged in turn order.
    let per_turn = par::map_range(mode, golds.len(), |i| {
        let empty = DialogueState::new();
        let pred = preds[i].as_ref().unwrap_or(&empty);
        golds[i]
            .triples()
            .map(|(d, s, v)| {
                let got = pred.get(d, s);
                (key_label(d, s), got.is_some(), got == Some(v))
            })
            .collect::<Vec<_>>()
    });
    let mut counts: BTreeMap<String, KeyCounts> = BTreeMap::new();
    for turn in per_turn {
        for (key, recalled, value_ok) in turn {
            let c = counts.entry(key).or_default();
            c.gold += 1;
            c.recalled += usize::from(recalled);
            c.value_ok += usize::from(value_ok);
        }
    }
    let per_key_recall = counts
        .iter()
        .map(|(k, c)| (k.clone(), c.recalled as f64 / c.gold as f64))
        .collect();
    let value_recall_given_key = counts
        .iter()
        .map(|(k, c)| {
            let frac = if c.recalled == 0 {
                0.0
            } else {
                c.value_ok as f64 / c.recalled as f64
            };
            (k.clone(), frac)
        })
        .collect();
    let failures = preds.iter().filter(|p| p.is_err()).count();
    Ok(EvalReport {
        jga,
        n_turns: golds.len(),
        per_key_recall,
        value_recall_given_key,
        parse_failure_rate: if preds.is_empty() {
            0.0
        } else {
            failures as f64 / preds.len() as f64
        },
    })
}

impl EvalReport {
    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "JGA {:.2}%  turns {}  parse failures {:.2}%\n",
            self.jga * 100.0,
            self.n_turns,
            self.parse_failure_rate * 100.0
        ));
        out.push_str(&format!("{:<32} {:>10} {:>14}\n", "slot", "key recall", "value | key"));
        for (k, r) in &self.per_key_recall {
            let v = self.value_recall_given_key.get(k).copied().unwrap_or(0.0);
            out.push_str(&format!("{:<32} {:>9.1}% {:>13.1}%\n", k, r * 100.0, v * 100.0));
        }
        out
    }

    /// Mean per-key recall over keys whose label starts with `domain: `.
    pub fn mean_key_recall(&self, domain: &str) -> Option<f64> {
        mean_with_prefix(&self.per_key_recall, domain)
    }

    pub fn mean_value_recall(&self, domain: &str) -> Option<f64> {
        mean_with_prefix(&self.value_recall_given_key, domain)
    }
}

fn mean_with_prefix(map: &BTreeMap<String, f64>, domain: &str) -> Option<f64> {
    let prefix = format!("{domain}: ");
    let vals: Vec<f64> = map
        .iter()
        .filter(|(k, _)| k.starts_with(&prefix))
        .map(|(_, v)| *v)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
