//! Optimisation: learning-rate schedule, AdamW, the joint speech/text
//! objective and the phase drivers (foundation LM stand-in, ASR pretraining,
//! DST finetuning with early stopping).

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autograd::{Grads, ParamId, Tape, TrainMask};
use crate::codec::decode_output;
use crate::data::{Batch, MixSpec, PairedBatcher};
use crate::eval::{self, Prediction};
use crate::model::{ComposedModel, Example, ModelError, PrefixSource};
use crate::par::{self, ExecMode};
use crate::state::{DialogueState, Ontology};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at step {step} (lr {lr:e}); batch ids {batch}")]
    NonFinite { step: usize, lr: f64, loss: f64, batch: String },
}

/// Linear warmup from 0 to `peak`, then linear decay to `floor_frac * peak`
/// at `total_steps`; constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub floor_frac: f64,
}

impl LrSchedule {
    pub fn asr() -> Self {
        Self {
            peak: 2e-4,
            warmup_steps: 1000,
            total_steps: 100_000,
            floor_frac: 0.01,
        }
    }

    pub fn dst() -> Self {
        Self {
            peak: 5e-5,
            warmup_steps: 1000,
            total_steps: 60_000,
            floor_frac: 0.01,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.peak.is_finite() && self.peak >= 0.0) {
            return Err(TrainError::Config("peak learning rate must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.floor_frac) {
            return Err(TrainError::Config("floor_frac must lie in [0, 1]".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(TrainError::Config("warmup longer than the whole schedule".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let floor = self.floor_frac * self.peak;
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        if step >= self.total_steps {
            return floor;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let frac = (step - self.warmup_steps) as f64 / span;
        self.peak + (floor - self.peak) * frac
    }
}

pub fn lr_at(schedule: &LrSchedule, step: usize) -> f64 {
    schedule.lr_at(step)
}

/// Decoupled-weight-decay Adam.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    moments: BTreeMap<ParamId, (Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Parameters the optimiser has state for.
    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.moments.keys().copied()
    }

    /// One update of every trainable parameter in `model` that has a gradient.
    pub fn step(&mut self, model: &mut ComposedModel, grads: &Grads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in model.store.trainable_ids() {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = self.moments.entry(id).or_insert_with(|| {
                let (r, c) = g.shape();
                (Tensor::zeros(r, c), Tensor::zeros(r, c))
            });
            let p = model.store.value_mut(id);
            let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p -= lr * (update + wd * *p);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Foundation language-model pretraining on plain text.
    Lm,
    Asr,
    Dst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub lr: LrSchedule,
    /// Weight of both text-path losses.
    pub lambda_text: f64,
    pub speech_batch: usize,
    pub text_batch: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub use_text_encoder: bool,
    pub weight_decay: f64,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub exec: ExecMode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn asr() -> Self {
        Self {
            phase: Phase::Asr,
            lr: LrSchedule::asr(),
            lambda_text: 0.0,
            speech_batch: 8,
            text_batch: 0,
            eval_every: 250,
            patience: 8,
            use_text_encoder: true,
            weight_decay: 0.01,
            grad_clip: Some(1.0),
            exec: ExecMode::Parallel,
            seed: 0,
        }
    }

    pub fn dst() -> Self {
        Self {
            phase: Phase::Dst,
            lr: LrSchedule::dst(),
            lambda_text: 0.5,
            text_batch: 8,
            ..Self::asr()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.lr.validate()?;
        if !(self.lambda_text.is_finite() && self.lambda_text >= 0.0) {
            return Err(TrainError::Config("lambda_text must be finite and non-negative".into()));
        }
        if self.patience == 0 || self.eval_every == 0 {
            return Err(TrainError::Config("patience and eval_every must be at least 1".into()));
        }
        if self.speech_batch == 0 {
            return Err(TrainError::Config("speech batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-term losses of one joint step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub speech: f64,
    /// Unpaired text DST; absent when not computed.
    pub unpaired: Option<f64>,
    /// Text DST from the speech batch's transcripts; absent when not computed.
    pub transcript: Option<f64>,
}

/// One weighted item of a gradient computation.
struct Item<'a> {
    source: PrefixSource,
    example: &'a Example,
    weight: f64,
    group: usize,
}

/// Losses and summed weighted gradients. Examples are differentiated
/// independently and summed in input order.
fn weighted_grads(
    model: &ComposedModel,
    items: &[Item<'_>],
    exec: ExecMode,
    with_grads: bool,
) -> Result<(Vec<f64>, Option<Grads>), ModelError> {
    let results = par::map(exec, items, |it| -> Result<(f64, Option<Grads>), ModelError> {
        let mut tape = Tape::new(&model.store);
        let loss = model.forward_loss(&mut tape, it.source, it.example)?;
        let value = tape.value(loss).get(0, 0);
        let grads = (with_grads && it.weight != 0.0).then(|| tape.backward(loss));
        Ok((value, grads))
    });
    let mut losses = Vec::with_capacity(items.len());
    let mut total: Option<Grads> = with_grads.then(|| Grads::new(model.store.len()));
    for (it, r) in items.iter().zip(results) {
        let (v, g) = r?;
        losses.push(v);
        if let (Some(acc), Some(g)) = (total.as_mut(), g) {
            acc.merge_scaled(&g, it.weight);
        }
    }
    Ok((losses, total))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Which prefix the text-path terms use.
fn text_source(use_text_encoder: bool) -> PrefixSource {
    if use_text_encoder {
        PrefixSource::Text
    } else {
        PrefixSource::Inline
    }
}

/// `L_speech + lambda * (L_unpaired + L_transcript)` and, optionally, its
/// gradient. Text terms are skipped when `lambda == 0`.
pub fn joint_step(
    model: &ComposedModel,
    speech: &[&Example],
    text: &[&Example],
    lambda: f64,
    use_text_encoder: bool,
    exec: ExecMode,
    with_grads: bool,
) -> Result<(LossParts, Option<Grads>), TrainError> {
    if speech.is_empty() {
        return Err(TrainError::Input("empty speech batch".into()));
    }
    if lambda > 0.0 && text.is_empty() {
        return Err(TrainError::Input("text batch is empty but lambda_text > 0".into()));
    }
    let ts = text_source(use_text_encoder);
    let ns = speech.len() as f64;
    let mut items: Vec<Item> = speech
        .iter()
        .map(|e| Item {
            source: PrefixSource::Speech,
            example: e,
            weight: 1.0 / ns,
            group: 0,
        })
        .collect();
    let with_text = lambda > 0.0;
    if with_text {
        let nt = text.len() as f64;
        items.extend(text.iter().map(|e| Item {
            source: ts,
            example: e,
            weight: lambda / nt,
            group: 1,
        }));
        items.extend(speech.iter().map(|e| Item {
            source: ts,
            example: e,
            weight: lambda / ns,
            group: 2,
        }));
    }
    let (losses, grads) = weighted_grads(model, &items, exec, with_grads)?;
    let part = |g: usize| mean(items.iter().zip(&losses).filter(|(it, _)| it.group == g).map(|(_, &l)| l));
    let speech_loss = part(0);
    let (unpaired, transcript) = if with_text {
        (Some(part(1)), Some(part(2)))
    } else {
        (None, None)
    };
    Ok((
        LossParts {
            total: combine(speech_loss, unpaired, transcript, lambda),
            speech: speech_loss,
            unpaired,
            transcript,
        },
        grads,
    ))
}

fn combine(speech: f64, unpaired: Option<f64>, transcript: Option<f64>, lambda: f64) -> f64 {
    match (unpaired, transcript) {
        (Some(u), Some(t)) => speech + lambda * (u + t),
        _ => speech,
    }
}

/// Loss parts at fixed parameters, always computing all three terms.
pub fn joint_loss(
    model: &ComposedModel,
    speech: &[&Example],
    text: &[&Example],
    lambda: f64,
    use_text_encoder: bool,
    exec: ExecMode,
) -> Result<LossParts, TrainError> {
    let (base, _) = joint_step(model, speech, text, 0.0, use_text_encoder, exec, false)?;
    if text.is_empty() {
        if lambda > 0.0 {
            return Err(TrainError::Input("text batch is empty but lambda_text > 0".into()));
        }
        return Ok(base);
    }
    let (full, _) = joint_step(model, speech, text, 1.0, use_text_encoder, exec, false)?;
    Ok(LossParts {
        total: combine(base.speech, full.unpaired, full.transcript, lambda),
        speech: base.speech,
        unpaired: full.unpaired,
        transcript: full.transcript,
    })
}

/// A validation corpus prepared for scoring.
#[derive(Clone, Debug)]
pub struct ValSet {
    pub name: String,
    pub examples: Vec<Example>,
    pub golds: Vec<DialogueState>,
}

impl ValSet {
    pub fn from_corpus(corpus: &crate::data::Corpus, tok: &crate::tokenizer::Tokenizer) -> Self {
        let ex = crate::data::turn_examples(corpus, tok, crate::data::HistoryMode::Gold);
        let golds = ex
            .iter()
            .map(|t| {
                corpus.dialogues[t.dialogue].turns[t.turn]
                    .gold_state
                    .clone()
                    .expect("validated corpora carry states")
            })
            .collect();
        Self {
            name: corpus.name.clone(),
            examples: ex.into_iter().map(|t| t.example).collect(),
            golds,
        }
    }
}

/// Decodes raw output text into a post-processed prediction.
pub fn predict_from_text(raw: &str, ontology: &Ontology) -> Prediction {
    decode_output(raw).map(|d| eval::postprocess_state(&d.state, ontology, eval::DEFAULT_THRESHOLD))
}

/// Teacher-forced predictions (per-position argmax under the gold target)
/// and the mean target loss.
pub fn teacher_forced_scores(
    model: &ComposedModel,
    val: &ValSet,
    ontology: &Ontology,
    exec: ExecMode,
) -> Result<(Vec<Prediction>, f64), ModelError> {
    let per = par::map(exec, &val.examples, |ex| -> Result<(Prediction, f64), ModelError> {
        let mut tape = Tape::new(&model.store);
        let f = model.forward(&mut tape, PrefixSource::Speech, ex)?;
        let logits = tape.value(f.logits);
        let ids: Vec<usize> = (0..logits.rows())
            .map(|r| logits.argmax_row(r))
            .take_while(|&id| id != crate::tokenizer::EOS)
            .collect();
        let pred = predict_from_text(&model.tokenizer.decode(&ids), ontology);
        Ok((pred, tape.value(f.loss).get(0, 0)))
    });
    let mut preds = Vec::with_capacity(per.len());
    let mut loss = 0.0;
    for r in per {
        let (p, l) = r?;
        preds.push(p);
        loss += l;
    }
    let n = preds.len().max(1) as f64;
    Ok((preds, loss / n))
}

pub fn teacher_forced_predictions(
    model: &ComposedModel,
    val: &ValSet,
    ontology: &Ontology,
    exec: ExecMode,
) -> Result<Vec<Prediction>, ModelError> {
    Ok(teacher_forced_scores(model, val, ontology, exec)?.0)
}

pub fn teacher_forced_jga(model: &ComposedModel, val: &ValSet, ontology: &Ontology, exec: ExecMode) -> Result<f64, TrainError> {
    let preds = teacher_forced_predictions(model, val, ontology, exec)?;
    eval::joint_goal_accuracy(&preds, &val.golds).map_err(|e| TrainError::Input(e.to_string()))
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speech: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unpaired: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_jga: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub val: BTreeMap<String, f64>,
}

pub fn write_jsonl<W: Write>(records: &[MetricsRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub best_val_jga: Option<f64>,
    /// Mean teacher-forced validation loss at the selected checkpoint; breaks
    /// ties in validation JGA.
    pub best_val_loss: Option<f64>,
    /// Step of the selected checkpoint, rendered `step-N`.
    pub best_checkpoint_ref: Option<String>,
    pub evals_since_best: usize,
    /// Running best after each evaluation.
    pub best_history: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub log: Vec<MetricsRecord>,
    pub state: TrainState,
    pub stopped_early: bool,
}

type Snapshot = Vec<(ParamId, Tensor)>;

fn snapshot(model: &ComposedModel) -> Snapshot {
    model
        .store
        .trainable_ids()
        .into_iter()
        .map(|id| (id, model.store.value(id).clone()))
        .collect()
}

fn restore(model: &mut ComposedModel, snap: Snapshot) {
    for (id, t) in snap {
        *model.store.value_mut(id) = t;
    }
}

fn clip(grads: &mut Grads, max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let n = grads.norm();
        if n > max {
            grads.scale(max / n);
        }
    }
}

fn check_finite(parts: &LossParts, step: usize, lr: f64, batch: &Batch) -> Result<(), TrainError> {
    let all = [Some(parts.total), Some(parts.speech), parts.unpaired, parts.transcript];
    if all.iter().flatten().all(|x| x.is_finite()) {
        return Ok(());
    }
    Err(TrainError::NonFinite {
        step,
        lr,
        loss: parts.total,
        batch: format!("speech {:?} text {:?}", batch.speech, batch.text),
    })
}

fn record(step: usize, lr: f64, parts: &LossParts) -> MetricsRecord {
    MetricsRecord {
        step,
        lr,
        loss: parts.total,
        speech: Some(parts.speech),
        unpaired: parts.unpaired,
        transcript: parts.transcript,
        val_jga: None,
        val_loss: None,
        val: BTreeMap::new(),
    }
}

/// Single-source training without validation: every step draws
/// `cfg.speech_batch` examples and minimises their mean loss.
fn train_single(
    model: &mut ComposedModel,
    examples: &[Example],
    source: PrefixSource,
    mask: TrainMask,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(TrainError::Input("no training examples".into()));
    }
    model.set_mask(mask);
    let spec = MixSpec {
        speech_batch: cfg.speech_batch,
        text_batch: 0,
        text_weights: BTreeMap::new(),
    };
    let mut batcher = PairedBatcher::new(spec, examples.len(), &BTreeMap::new(), cfg.seed)?;
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut log = Vec::new();
    let mut state = TrainState::default();
    for step in 1..=cfg.lr.total_steps {
        let batch = batcher.next_batch();
        let lr = cfg.lr.lr_at(step);
        let n = batch.speech.len() as f64;
        let items: Vec<Item> = batch
            .speech
            .iter()
            .map(|&i| Item {
                source,
                example: &examples[i],
                weight: 1.0 / n,
                group: 0,
            })
            .collect();
        let (losses, grads) = weighted_grads(model, &items, cfg.exec, true)?;
        let loss = mean(losses.iter().copied());
        let parts = LossParts {
            total: loss,
            speech: loss,
            unpaired: None,
            transcript: None,
        };
        check_finite(&parts, step, lr, &batch)?;
        let mut grads = grads.expect("requested");
        clip(&mut grads, cfg.grad_clip);
        opt.step(model, &grads, lr);
        log.push(record(step, lr, &parts));
        state.step = step;
    }
    model.set_mask(TrainMask::FROZEN);
    Ok(TrainOutcome {
        log,
        state,
        stopped_early: false,
    })
}

/// Trains the base language model on plain text (`history -> target`).
pub fn pretrain_lm(model: &mut ComposedModel, examples: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_single(model, examples, PrefixSource::Plain, TrainMask::LM, cfg)
}

/// Phase 1: speech recognition with the language model frozen.
pub fn asr_pretrain(model: &mut ComposedModel, examples: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    if cfg.phase != Phase::Asr {
        return Err(TrainError::Config("asr_pretrain needs phase = asr".into()));
    }
    if let Some(i) = examples.iter().position(|e| e.frames.is_none()) {
        return Err(TrainError::Input(format!("ASR example {i} has no frames")));
    }
    train_single(model, examples, PrefixSource::Speech, TrainMask::ASR, cfg)
}

/// Everything phase 2 trains and validates on.
#[derive(Clone, Debug)]
pub struct DstData {
    pub speech: Vec<Example>,
    pub text: BTreeMap<String, Vec<Example>>,
    /// Sampling weights per text source; missing sources weigh 1.
    pub text_weights: BTreeMap<String, f64>,
    pub val: Vec<ValSet>,
    pub ontology: Ontology,
}

/// Phase 2: joint DST finetuning with early stopping on the mean
/// teacher-forced JGA over the validation sets. The returned model holds the
/// best checkpoint.
pub fn train_dst(model: &mut ComposedModel, data: &DstData, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if cfg.phase != Phase::Dst {
        return Err(TrainError::Config("train_dst needs phase = dst".into()));
    }
    if model.adapter.is_none() {
        return Err(TrainError::Config("inject adapters before DST finetuning".into()));
    }
    if cfg.use_text_encoder && model.text_encoder.is_none() {
        return Err(TrainError::Model(ModelError::NoTextEncoder));
    }
    if !cfg.use_text_encoder {
        model.drop_text_encoder();
    }
    let use_text = cfg.lambda_text > 0.0;
    let weights: BTreeMap<String, f64> = data
        .text
        .keys()
        .map(|k| (k.clone(), data.text_weights.get(k).copied().unwrap_or(1.0)))
        .collect();
    let spec = MixSpec {
        speech_batch: cfg.speech_batch,
        text_batch: if use_text { cfg.text_batch } else { 0 },
        text_weights: if use_text { weights } else { BTreeMap::new() },
    };
    if use_text && spec.text_batch == 0 {
        return Err(TrainError::Input("text batch size is zero but lambda_text > 0".into()));
    }
    let lens: BTreeMap<String, usize> = data.text.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let mut batcher = PairedBatcher::new(spec, data.speech.len(), &lens, cfg.seed)?;
    model.set_mask(TrainMask::DST);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut log = Vec::new();
    let mut state = TrainState::default();
    let mut best: Option<Snapshot> = None;
    let mut stopped_early = false;
    for step in 1..=cfg.lr.total_steps {
        let batch = batcher.next_batch();
        let lr = cfg.lr.lr_at(step);
        let speech: Vec<&Example> = batch.speech.iter().map(|&i| &data.speech[i]).collect();
        let text: Vec<&Example> = batch.text.iter().map(|(s, i)| &data.text[s][*i]).collect();
        let (parts, grads) = joint_step(model, &speech, &text, cfg.lambda_text, cfg.use_text_encoder, cfg.exec, true)?;
        check_finite(&parts, step, lr, &batch)?;
        let mut grads = grads.expect("requested");
        clip(&mut grads, cfg.grad_clip);
        opt.step(model, &grads, lr);
        let mut rec = record(step, lr, &parts);
        state.step = step;
        if step % cfg.eval_every == 0 || step == cfg.lr.total_steps {
            let mut scores = BTreeMap::new();
            let mut losses = Vec::new();
            for v in &data.val {
                let (preds, loss) = teacher_forced_scores(model, v, &data.ontology, cfg.exec)?;
                let jga = eval::joint_goal_accuracy(&preds, &v.golds).map_err(|e| TrainError::Input(e.to_string()))?;
                scores.insert(v.name.clone(), jga);
                losses.push(loss);
            }
            let jga = if scores.is_empty() {
                0.0
            } else {
                mean(scores.values().copied())
            };
            let loss = if losses.is_empty() {
                0.0
            } else {
                mean(losses.iter().copied())
            };
            rec.val_jga = Some(jga);
            rec.val_loss = Some(loss);
            rec.val = scores;
            let improved = match (state.best_val_jga, state.best_val_loss) {
                (Some(bj), Some(bl)) => jga > bj || (jga == bj && loss < bl),
                _ => true,
            };
            if improved {
                state.best_val_jga = Some(jga);
                state.best_val_loss = Some(loss);
                state.best_checkpoint_ref = Some(format!("step-{step}"));
                state.evals_since_best = 0;
                best = Some(snapshot(model));
            } else {
                state.evals_since_best += 1;
            }
            state.best_history.push(state.best_val_jga.unwrap_or(0.0));
            log.push(rec);
            if state.evals_since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        } else {
            log.push(rec);
        }
    }
    if let Some(s) = best {
        restore(model, s);
    }
    model.set_mask(TrainMask::FROZEN);
    Ok(TrainOutcome {
        log,
        state,
        stopped_early,
    })
}

/// The ablation without a text encoder: unpaired utterances are appended to
/// the history as plain text and only adapters and connector train.
pub fn train_dst_no_text_encoder(model: &mut ComposedModel, data: &DstData, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let cfg = TrainConfig {
        use_text_encoder: false,
        ..cfg.clone()
    };
    train_dst(model, data, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_anchor_points() {
        let s = LrSchedule::asr();
        assert_eq!(s.lr_at(0), 0.0);
        assert!((s.lr_at(500) - 1e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(1000), 2e-4);
        assert!((s.lr_at(100_000) - 2e-6).abs() < 1e-18);
        assert!((s.lr_at(250_000) - 2e-6).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_continuous() {
        let s = LrSchedule {
            peak: 1.0,
            warmup_steps: 10,
            total_steps: 50,
            floor_frac: 0.01,
        };
        for step in 0..50 {
            assert!((s.lr_at(step + 1) - s.lr_at(step)).abs() <= 0.1 + 1e-12);
        }
        // Decay slope: 0.99 over 40 steps.
        assert!((s.lr_at(30) - (1.0 - 0.99 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_warmup_starts_at_peak() {
        let s = LrSchedule {
            peak: 3.0,
            warmup_steps: 0,
            total_steps: 4,
            floor_frac: 0.0,
        };
        assert_eq!(s.lr_at(0), 3.0);
        assert_eq!(s.lr_at(4), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::dst();
        assert!(c.validate().is_ok());
        c.patience = 0;
        assert!(c.validate().is_err());
        c.patience = 1;
        c.lambda_text = f64::NAN;
        assert!(c.validate().is_err());
    }
}
