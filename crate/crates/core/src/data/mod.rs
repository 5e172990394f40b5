//! Corpora, tokenized training examples and mixed speech/text batching.

pub mod io;
pub mod synth;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::encode_target;
use crate::model::Example;
use crate::state::{Dialogue, DialogueError, Speaker};
use crate::tokenizer::{Tokenizer, EOS};

pub use synth::{generate_corpus, synthesize_frames, SynthConfig, SynthCorpora};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error("dialogue {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported dialogue file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed dialogue file: {0}")]
    Malformed(String),
    #[error("frame blob at offset {offset}: {reason}")]
    Frames { offset: u64, reason: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("no examples available for {0}")]
    Empty(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    /// Every user turn has frames and a gold state.
    Spoken,
    /// No frames anywhere; every user turn has a gold state.
    Text,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub modality: Modality,
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, modality: Modality, dialogues: Vec<Dialogue>) -> Self {
        Self {
            name: name.into(),
            modality,
            dialogues,
        }
    }

    /// Checks one dialogue against the structural rules and this corpus's modality.
    pub fn check(&self, d: &Dialogue) -> Result<(), DataError> {
        d.validate()?;
        let invalid = |reason: String| DataError::Invalid {
            id: d.id.clone(),
            reason,
        };
        let mut frame_dim = None;
        for (i, t) in d.user_turns() {
            if t.gold_state.is_none() {
                return Err(invalid(format!("user turn {i} has no state")));
            }
            if t.transcript.trim().is_empty() {
                return Err(invalid(format!("user turn {i} has an empty transcript")));
            }
            match (self.modality, &t.frames) {
                (Modality::Spoken, None) => return Err(invalid(format!("user turn {i} has no frames"))),
                (Modality::Text, Some(_)) => return Err(invalid(format!("text corpus turn {i} carries frames"))),
                (Modality::Spoken, Some(f)) => {
                    if f.rows() == 0 || !f.is_finite() {
                        return Err(invalid(format!("user turn {i} has empty or non-finite frames")));
                    }
                    if *frame_dim.get_or_insert(f.cols()) != f.cols() {
                        return Err(invalid(format!("user turn {i} changes the frame width")));
                    }
                }
                (Modality::Text, None) => {}
            }
        }
        Ok(())
    }

    pub fn validate_all(&self) -> Result<(), DataError> {
        self.dialogues.iter().try_for_each(|d| self.check(d))
    }

    pub fn n_user_turns(&self) -> usize {
        self.dialogues.iter().map(Dialogue::n_user_turns).sum()
    }
}

/// Which history a tokenized example sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    /// Reference transcripts of earlier turns.
    #[default]
    Gold,
    /// No dialogue history.
    None,
}

/// One user turn of a corpus, tokenized for training or teacher-forced scoring.
#[derive(Clone, Debug)]
pub struct TurnExample {
    pub dialogue: usize,
    pub turn: usize,
    pub example: Example,
}

/// Tokenizes every user turn: history, utterance, frames (when present) and
/// the JSON target followed by `<eos>`.
pub fn turn_examples(corpus: &Corpus, tok: &Tokenizer, history: HistoryMode) -> Vec<TurnExample> {
    let mut out = Vec::with_capacity(corpus.n_user_turns());
    for (di, d) in corpus.dialogues.iter().enumerate() {
        for (ti, t) in d.user_turns() {
            let hist = match history {
                HistoryMode::Gold => tok.encode(&d.history_before(ti)),
                HistoryMode::None => Vec::new(),
            };
            let state = t.gold_state.as_ref().expect("validated corpora carry states");
            let mut target = tok.encode(encode_target(&t.transcript, state).as_str());
            target.push(EOS);
            out.push(TurnExample {
                dialogue: di,
                turn: ti,
                example: Example {
                    frames: t.frames.clone().map(Arc::new),
                    utterance: Some(tok.encode(&t.transcript)),
                    history: hist,
                    target,
                },
            });
        }
    }
    out
}

/// Speech-recognition examples: the target is the transcript alone.
pub fn asr_examples(utterances: &[(String, crate::tensor::Tensor)], tok: &Tokenizer) -> Vec<Example> {
    utterances
        .iter()
        .map(|(text, frames)| {
            let mut target = tok.encode(text);
            target.push(EOS);
            Example {
                frames: Some(Arc::new(frames.clone())),
                utterance: Some(tok.encode(text)),
                history: Vec::new(),
                target,
            }
        })
        .collect()
}

/// Text used to fit the tokenizer: rendered dialogues, every transcript, the
/// JSON targets and the extra strings given.
pub fn tokenizer_corpus<'a>(corpora: impl IntoIterator<Item = &'a Corpus>, extra: &[String]) -> Vec<String> {
    let mut texts = Vec::new();
    for c in corpora {
        for d in &c.dialogues {
            texts.push(d.history_before(d.turns.len()));
            for t in &d.turns {
                texts.push(t.transcript.clone());
                if t.speaker == Speaker::User {
                    if let Some(s) = &t.gold_state {
                        texts.push(encode_target(&t.transcript, s).0);
                    }
                }
            }
        }
    }
    texts.extend(extra.iter().cloned());
    texts
}

/// Mixture of the text sources in each joint-training batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    /// Speech examples per batch.
    pub speech_batch: usize,
    /// Text examples per batch.
    pub text_batch: usize,
    /// Sampling weight of each text source by name.
    pub text_weights: BTreeMap<String, f64>,
}

impl MixSpec {
    pub fn uniform<'a>(sources: impl IntoIterator<Item = &'a str>, speech_batch: usize, text_batch: usize) -> Self {
        Self {
            speech_batch,
            text_batch,
            text_weights: sources.into_iter().map(|s| (s.to_owned(), 1.0)).collect(),
        }
    }
}

/// Indices into the speech pool and `(source, index)` pairs into the text pools.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub speech: Vec<usize>,
    pub text: Vec<(String, usize)>,
}

/// Endless epoch-shuffled cycle over `0..n`.
#[derive(Clone, Debug)]
struct Cycle {
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Seeded, endless batch stream. Each epoch of each pool is a fresh
/// permutation; text sources are picked per example by weight.
#[derive(Clone, Debug)]
pub struct PairedBatcher {
    spec: MixSpec,
    speech: Cycle,
    text: Vec<(String, f64, Cycle)>,
    total_weight: f64,
    rng: ChaCha8Rng,
}

impl PairedBatcher {
    pub fn new(spec: MixSpec, speech_len: usize, text_lens: &BTreeMap<String, usize>, seed: u64) -> Result<Self, DataError> {
        if spec.speech_batch > 0 && speech_len == 0 {
            return Err(DataError::Empty("speech".into()));
        }
        let mut text = Vec::new();
        for (name, &w) in &spec.text_weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(DataError::Config(format!("weight of `{name}` must be finite and non-negative")));
            }
            let n = *text_lens.get(name).ok_or_else(|| DataError::Empty(name.clone()))?;
            if w > 0.0 {
                if n == 0 {
                    return Err(DataError::Empty(name.clone()));
                }
                text.push((name.clone(), w, Cycle::new(n)));
            }
        }
        let total_weight = text.iter().map(|(_, w, _)| w).sum();
        if spec.text_batch > 0 && text.is_empty() {
            return Err(DataError::Empty("text".into()));
        }
        Ok(Self {
            spec,
            speech: Cycle::new(speech_len),
            text,
            total_weight,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_batch(&mut self) -> Batch {
        let speech = (0..self.spec.speech_batch)
            .map(|_| self.speech.next(&mut self.rng))
            .collect();
        let mut text = Vec::with_capacity(self.spec.text_batch);
        for _ in 0..self.spec.text_batch {
            let mut u = self.rng.gen::<f64>() * self.total_weight;
            let mut chosen = self.text.len() - 1;
            for (i, (_, w, _)) in self.text.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            let (name, _, cycle) = &mut self.text[chosen];
            text.push((name.clone(), cycle.next(&mut self.rng)));
        }
        Batch { speech, text }
    }
}

impl Iterator for PairedBatcher {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{DialogueState, Turn};
    use crate::tensor::Tensor;

    fn state(v: &str) -> DialogueState {
        DialogueState::from_triples([("hotel", "area", v)])
    }

    #[test]
    fn modality_rules() {
        let spoken = Dialogue {
            id: "a".into(),
            domain_tags: Default::default(),
            turns: vec![Turn::user("in the north", state("north")).with_frames(Tensor::zeros(6, 4))],
        };
        let text = Dialogue {
            turns: vec![Turn::user("in the north", state("north"))],
            ..spoken.clone()
        };
        let sc = Corpus::new("s", Modality::Spoken, vec![]);
        let tc = Corpus::new("t", Modality::Text, vec![]);
        assert!(sc.check(&spoken).is_ok());
        assert!(sc.check(&text).is_err());
        assert!(tc.check(&text).is_ok());
        assert!(tc.check(&spoken).is_err());
    }

    #[test]
    fn examples_end_in_eos_and_use_history() {
        let d = Dialogue {
            id: "a".into(),
            domain_tags: Default::default(),
            turns: vec![
                Turn::user("a hotel", state("north")),
                Turn::agent("what else"),
                Turn::user("cheap", state("north")),
            ],
        };
        let c = Corpus::new("t", Modality::Text, vec![d]);
        let texts = tokenizer_corpus([&c], &[]);
        let tok = Tokenizer::train(texts.iter().map(String::as_str), 200);
        let ex = turn_examples(&c, &tok, HistoryMode::Gold);
        assert_eq!(ex.len(), 2);
        assert!(ex[0].example.history.is_empty());
        assert_eq!(tok.decode(&ex[1].example.history), "a hotel\nwhat else");
        assert!(ex.iter().all(|e| *e.example.target.last().unwrap() == EOS));
        let none = turn_examples(&c, &tok, HistoryMode::None);
        assert!(none[1].example.history.is_empty());
    }

    #[test]
    fn batcher_is_seeded_and_covers_epochs() {
        let lens: BTreeMap<String, usize> = [("hotel".to_string(), 5), ("attraction".to_string(), 7)].into();
        let spec = MixSpec::uniform(["hotel", "attraction"], 3, 4);
        let a: Vec<Batch> = PairedBatcher::new(spec.clone(), 9, &lens, 4).unwrap().take(6).collect();
        let b: Vec<Batch> = PairedBatcher::new(spec.clone(), 9, &lens, 4).unwrap().take(6).collect();
        assert_eq!(a, b);
        let mut seen: Vec<usize> = a.iter().flat_map(|x| x.speech.clone()).take(9).collect();
        seen.sort();
        assert_eq!(seen, (0..9).collect::<Vec<_>>());
        assert!(a.iter().all(|x| x.text.iter().all(|(s, i)| *i < lens[s])));
    }

    #[test]
    fn zero_weight_source_is_never_drawn() {
        let lens: BTreeMap<String, usize> = [("hotel".to_string(), 5), ("attraction".to_string(), 7)].into();
        let mut spec = MixSpec::uniform(["hotel", "attraction"], 0, 8);
        spec.text_weights.insert("attraction".into(), 0.0);
        let b: Vec<Batch> = PairedBatcher::new(spec, 0, &lens, 1).unwrap().take(5).collect();
        assert!(b.iter().flat_map(|x| &x.text).all(|(s, _)| s == "hotel"));
    }

    #[test]
    fn missing_text_source_is_an_error() {
        let spec = MixSpec::uniform(["taxi"], 1, 1);
        assert!(PairedBatcher::new(spec, 3, &BTreeMap::new(), 0).is_err());
    }
}
