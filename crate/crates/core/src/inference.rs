//! Free-running, turn-by-turn state tracking from speech.

use serde::{Deserialize, Serialize};

use crate::codec::{decode_output, FailureReason, TargetString};
use crate::data::Corpus;
use crate::eval::{self, EvalReport, Prediction};
use crate::model::{ComposedModel, ModelError};
use crate::par::{self, ExecMode};
use crate::state::{render_history, Dialogue, DialogueState, Ontology, Speaker};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Keep the previous turn's state.
    #[default]
    CarryForward,
    /// Report an empty state.
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub max_new_tokens: usize,
    #[serde(default)]
    pub on_parse_failure: FailurePolicy,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 96,
            on_parse_failure: FailurePolicy::CarryForward,
        }
    }
}

/// Shortest well-formed output, `{"transcript":"","state":{}}`, is more
/// than this many tokens under any tokenizer that keeps `{` separate.
const MIN_NEW_TOKENS: usize = 8;

impl GenConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_new_tokens < MIN_NEW_TOKENS {
            return Err(ModelError::Config(format!(
                "max_new_tokens must be at least {MIN_NEW_TOKENS}"
            )));
        }
        Ok(())
    }
}

/// Which user transcripts go into the history.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistorySource {
    /// The model's own transcripts of earlier user turns.
    #[default]
    Hypothesized,
    /// Reference transcripts.
    Gold,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Session {
    history: Vec<(Speaker, String)>,
    last_state: DialogueState,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn history(&self) -> &[(Speaker, String)] {
        &self.history
    }

    pub fn last_state(&self) -> &DialogueState {
        &self.last_state
    }

    pub fn push(&mut self, speaker: Speaker, transcript: impl Into<String>) {
        self.history.push((speaker, transcript.into()));
    }

    /// Transcripts joined by `\n`.
    pub fn rendered(&self) -> String {
        render_history(self.history.iter().map(|(_, t)| t.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnOutput {
    /// Hypothesized transcript; empty when the output did not parse.
    pub transcript: String,
    /// State after the failure policy is applied.
    pub state: DialogueState,
    pub raw: TargetString,
    /// Set when the output did not decode.
    pub failure: Option<FailureReason>,
    /// Decoded, post-processed state, or the failure, for scoring.
    #[serde(skip)]
    pub prediction: Option<Prediction>,
}

/// Generates, decodes and post-processes one user turn, then appends the
/// hypothesized transcript to the session.
pub fn track_turn(
    model: &ComposedModel,
    session: &mut Session,
    frames: &Tensor,
    gen: &GenConfig,
    ontology: &Ontology,
) -> Result<TurnOutput, ModelError> {
    gen.validate()?;
    let history = model.tokenizer.encode(&session.rendered());
    let mut tape = crate::autograd::Tape::new(&model.store);
    let prefix = model.speech_prefix(&mut tape, frames)?;
    let prefix = tape.value(prefix).clone();
    drop(tape);
    let ids = model.generate(Some(&prefix), &history, gen.max_new_tokens, true)?;
    let raw = model.tokenizer.decode(&ids);
    let out = match decode_output(&raw) {
        Ok(d) => {
            let state = eval::postprocess_state(&d.state, ontology, eval::DEFAULT_THRESHOLD);
            TurnOutput {
                transcript: d.transcript,
                state: state.clone(),
                raw: TargetString(raw),
                failure: None,
                prediction: Some(Ok(state)),
            }
        }
        Err(f) => TurnOutput {
            transcript: String::new(),
            state: match gen.on_parse_failure {
                FailurePolicy::CarryForward => session.last_state.clone(),
                FailurePolicy::Empty => DialogueState::new(),
            },
            raw: TargetString(raw),
            failure: Some(f.reason),
            prediction: Some(Err(f)),
        },
    };
    session.push(Speaker::User, out.transcript.clone());
    session.last_state = out.state.clone();
    Ok(out)
}

/// Tracks every user turn of a dialogue in order. Agent turns enter the
/// history as reference transcripts.
pub fn track_dialogue(
    model: &ComposedModel,
    dialogue: &Dialogue,
    gen: &GenConfig,
    ontology: &Ontology,
    history: HistorySource,
) -> Result<Vec<TurnOutput>, ModelError> {
    walk_dialogue(dialogue, history, |session, frames| {
        track_turn(model, session, frames, gen, ontology)
    })
}

/// Drives `step` over the user turns; `step` must append the user turn it
/// tracked to the session.
fn walk_dialogue<F>(dialogue: &Dialogue, history: HistorySource, mut step: F) -> Result<Vec<TurnOutput>, ModelError>
where
    F: FnMut(&mut Session, &Tensor) -> Result<TurnOutput, ModelError>,
{
    let mut session = Session::new();
    let mut outs = Vec::new();
    for t in &dialogue.turns {
        match t.speaker {
            Speaker::Agent => session.push(Speaker::Agent, t.transcript.clone()),
            Speaker::User => {
                let frames = t.frames.as_ref().ok_or(ModelError::MissingModality("speech"))?;
                let out = step(&mut session, frames)?;
                if history == HistorySource::Gold {
                    if let Some(last) = session.history.last_mut() {
                        last.1 = t.transcript.clone();
                    }
                }
                outs.push(out);
            }
        }
    }
    Ok(outs)
}

/// Free-running predictions for every user turn of a spoken corpus, in order.
pub fn predict_corpus(
    model: &ComposedModel,
    corpus: &Corpus,
    gen: &GenConfig,
    ontology: &Ontology,
    history: HistorySource,
    exec: ExecMode,
) -> Result<Vec<Vec<TurnOutput>>, ModelError> {
    par::map(exec, &corpus.dialogues, |d| track_dialogue(model, d, gen, ontology, history))
        .into_iter()
        .collect()
}

/// Free-running evaluation report for a spoken corpus.
pub fn evaluate_corpus(
    model: &ComposedModel,
    corpus: &Corpus,
    gen: &GenConfig,
    ontology: &Ontology,
    history: HistorySource,
    exec: ExecMode,
) -> Result<EvalReport, ModelError> {
    if corpus.dialogues.is_empty() {
        return Err(ModelError::Config(format!("corpus `{}` is empty", corpus.name)));
    }
    let outs = predict_corpus(model, corpus, gen, ontology, history, exec)?;
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for (d, o) in corpus.dialogues.iter().zip(outs) {
        for ((_, t), out) in d.user_turns().zip(o) {
            preds.push(out.prediction.expect("set by track_turn"));
            golds.push(t.gold_state.clone().unwrap_or_default());
        }
    }
    eval::recall_report(&preds, &golds).map_err(|e| ModelError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_corpus;
    use crate::data::synth::SynthConfig;
    use crate::model::ModelConfig;
    use crate::tokenizer::Tokenizer;

    fn small() -> (ComposedModel, Corpus, Ontology) {
        let cfg = SynthConfig {
            n_dialogues: 4,
            n_eval_dialogues: 2,
            n_asr_utterances: 4,
            ..SynthConfig::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        let texts = crate::data::tokenizer_corpus([&c.speech_train], &[]);
        let tok = Tokenizer::train(texts.iter().map(String::as_str), 120);
        let model = ComposedModel::new(ModelConfig::desk(cfg.frame_dim), tok).unwrap();
        (model, c.speech_train, c.ontology)
    }

    fn gen() -> GenConfig {
        GenConfig {
            max_new_tokens: 12,
            ..GenConfig::default()
        }
    }

    #[test]
    fn rendered_history_has_one_newline_between_entries() {
        let mut s = Session::new();
        assert_eq!(s.rendered(), "");
        for (i, t) in ["hello there", "what area", "north please"].iter().enumerate() {
            s.push(if i % 2 == 0 { Speaker::User } else { Speaker::Agent }, *t);
            assert_eq!(s.rendered().matches('\n').count(), i);
        }
        assert_eq!(s.rendered(), "hello there\nwhat area\nnorth please");
    }

    #[test]
    fn one_prediction_per_user_turn() {
        let (model, corpus, ont) = small();
        let d = &corpus.dialogues[0];
        assert_eq!(d.n_user_turns(), 3);
        let outs = track_dialogue(&model, d, &gen(), &ont, HistorySource::Hypothesized).unwrap();
        assert_eq!(outs.len(), 3);
        for o in &outs {
            assert_eq!(o.prediction.is_some(), true);
            assert_eq!(o.failure.is_some(), o.prediction.as_ref().unwrap().is_err());
        }
    }

    #[test]
    fn greedy_decoding_is_deterministic() {
        let (model, corpus, ont) = small();
        let a = predict_corpus(&model, &corpus, &gen(), &ont, HistorySource::Hypothesized, ExecMode::Sequential).unwrap();
        let b = predict_corpus(&model, &corpus, &gen(), &ont, HistorySource::Hypothesized, ExecMode::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gold_and_hypothesized_history_agree_on_exact_transcripts() {
        let (_, corpus, _) = small();
        for d in &corpus.dialogues {
            // An oracle tracker whose transcripts are exact: it reads the
            // reference transcript for the frames it is given.
            let by_frames: Vec<(&Tensor, &str)> = d
                .turns
                .iter()
                .filter_map(|t| Some((t.frames.as_ref()?, t.transcript.as_str())))
                .collect();
            let run = |history| {
                let mut seen = Vec::new();
                let outs = walk_dialogue(d, history, |session, frames| {
                    seen.push(session.rendered());
                    let text = by_frames.iter().find(|(f, _)| std::ptr::eq(*f, frames)).unwrap().1;
                    session.push(Speaker::User, text);
                    Ok(TurnOutput {
                        transcript: text.to_owned(),
                        state: DialogueState::new(),
                        raw: TargetString(String::new()),
                        failure: None,
                        prediction: None,
                    })
                })
                .unwrap();
                (seen, outs)
            };
            assert_eq!(run(HistorySource::Gold), run(HistorySource::Hypothesized));
        }
    }

    #[test]
    fn user_turn_without_frames_is_an_error() {
        let (model, corpus, ont) = small();
        let mut d = corpus.dialogues[0].clone();
        for t in &mut d.turns {
            t.frames = None;
        }
        assert!(matches!(
            track_dialogue(&model, &d, &gen(), &ont, HistorySource::Gold),
            Err(ModelError::MissingModality(_))
        ));
    }
}
