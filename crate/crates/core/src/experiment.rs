//! End-to-end synthetic benchmark: corpora, tokenizer, foundation LM,
//! ASR pretraining and DST finetuning variants with free-running evaluation.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::synth::lm_corpus;
use crate::data::{self, asr_examples, generate_corpus, HistoryMode, SynthConfig, SynthCorpora};
use crate::eval::EvalReport;
use crate::inference::{evaluate_corpus, GenConfig, HistorySource};
use crate::model::{AdapterConfig, ComposedModel, Example, ModelConfig};
use crate::tokenizer::{Tokenizer, EOS};
use crate::train::{self, DstData, LrSchedule, Phase, TrainConfig, TrainError, TrainOutcome, ValSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub vocab_size: usize,
    /// Plain-text examples for the foundation-LM stand-in.
    pub n_lm_examples: usize,
    pub lm: TrainConfig,
    pub asr: TrainConfig,
    pub dst: TrainConfig,
    pub adapter: AdapterConfig,
    pub gen: GenConfig,
    /// Start the text encoder's embedding from the pretrained LM embedding
    /// instead of its random initialisation.
    #[serde(default)]
    pub text_embedding_from_lm: bool,
    /// Text-only domains whose test JGA is reported as the target score.
    /// Empty means every text-only domain.
    #[serde(default)]
    pub target_domains: Vec<String>,
}

impl BenchmarkConfig {
    /// Sized for one CPU core.
    pub fn desk() -> Self {
        let synth = SynthConfig::default();
        let model = ModelConfig::desk(synth.frame_dim);
        let base = TrainConfig::asr();
        Self {
            lm: TrainConfig {
                phase: Phase::Lm,
                lr: LrSchedule {
                    peak: 3e-3,
                    warmup_steps: 100,
                    total_steps: 1500,
                    floor_frac: 0.01,
                },
                speech_batch: 16,
                ..base.clone()
            },
            asr: TrainConfig {
                lr: LrSchedule {
                    peak: 3e-3,
                    warmup_steps: 100,
                    total_steps: 1000,
                    floor_frac: 0.01,
                },
                ..base
            },
            dst: TrainConfig {
                lr: LrSchedule {
                    peak: 3e-3,
                    warmup_steps: 100,
                    total_steps: 2000,
                    floor_frac: 0.01,
                },
                eval_every: 100,
                ..TrainConfig::dst()
            },
            synth,
            model,
            vocab_size: 400,
            n_lm_examples: 4000,
            adapter: AdapterConfig {
                rank: 16,
                alpha: 16.0,
                targets: ["q", "k", "v", "o", "ffn_in", "ffn_out"].map(String::from).to_vec(),
            },
            gen: GenConfig::default(),
            text_embedding_from_lm: true,
            target_domains: vec!["target".into()],
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.synth.validate()?;
        self.model.validate()?;
        self.adapter.projections()?;
        self.gen.validate()?;
        for t in [&self.lm, &self.asr, &self.dst] {
            t.validate()?;
        }
        if self.model.speech_encoder.in_dim != self.synth.frame_dim {
            return Err(TrainError::Config(format!(
                "speech encoder expects {} features but the corpus has {}",
                self.model.speech_encoder.in_dim, self.synth.frame_dim
            )));
        }
        if self.text_embedding_from_lm && self.model.connector.dims.hidden != self.model.lm.dims.hidden {
            return Err(TrainError::Config(
                "text_embedding_from_lm needs the connector and LM widths to match".into(),
            ));
        }
        if self.vocab_size == 0 {
            return Err(TrainError::Config("vocab_size must be positive".into()));
        }
        for d in &self.target_domains {
            if self.synth.domain(d).is_none() || self.synth.speech_domains.contains(d) {
                return Err(TrainError::Config(format!("target domain `{d}` is not a text-only domain")));
            }
        }
        Ok(())
    }

    pub fn target_domains(&self) -> Vec<String> {
        if self.target_domains.is_empty() {
            self.synth.target_domains()
        } else {
            self.target_domains.clone()
        }
    }

    /// A few steps of everything on a handful of dialogues; for tests and
    /// dry runs of the pipeline.
    pub fn smoke() -> Self {
        let mut c = Self::desk();
        c.synth.n_dialogues = 4;
        c.synth.n_eval_dialogues = 2;
        c.synth.n_asr_utterances = 8;
        c.n_lm_examples = 16;
        c.vocab_size = 160;
        c.adapter.rank = 2;
        c.adapter.alpha = 2.0;
        c.gen.max_new_tokens = 16;
        for t in [&mut c.lm, &mut c.asr, &mut c.dst] {
            t.lr.warmup_steps = 1;
            t.lr.total_steps = 4;
            t.speech_batch = 2;
            t.eval_every = 2;
        }
        c.dst.text_batch = 2;
        c
    }

    /// Same experiment under another seed: corpora, initialisation and batching.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.synth.seed = seed;
        c.model.seed = seed;
        c.lm.seed = seed;
        c.asr.seed = seed;
        c.dst.seed = seed;
        c
    }
}

/// One DST finetuning configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub lambda_text: f64,
    pub use_text_encoder: bool,
}

impl Variant {
    pub const NO_TEXT: Variant = Variant {
        lambda_text: 0.0,
        use_text_encoder: true,
    };

    pub fn joint(lambda_text: f64) -> Self {
        Self {
            lambda_text,
            use_text_encoder: true,
        }
    }

    pub fn no_text_encoder(lambda_text: f64) -> Self {
        Self {
            lambda_text,
            use_text_encoder: false,
        }
    }
}

fn lm_examples(texts: &[(String, String)], tok: &Tokenizer) -> Vec<Example> {
    texts
        .iter()
        .map(|(h, t)| {
            let mut target = tok.encode(t);
            target.push(EOS);
            Example {
                frames: None,
                utterance: None,
                history: tok.encode(h),
                target,
            }
        })
        .collect()
}

/// Corpora plus a model after the foundation-LM stand-in and ASR pretraining.
#[derive(Clone, Debug)]
pub struct Foundation {
    pub config: BenchmarkConfig,
    pub corpora: SynthCorpora,
    pub model: ComposedModel,
    pub lm_log: TrainOutcome,
    pub asr_log: TrainOutcome,
}

/// Generates the corpora of `cfg.synth` and pretrains on them.
pub fn build_foundation(cfg: &BenchmarkConfig) -> Result<Foundation, TrainError> {
    let corpora = generate_corpus(&cfg.synth)?;
    let lm_texts = lm_corpus(&cfg.synth, cfg.n_lm_examples, cfg.synth.seed ^ 0x6c6d)?;
    pretrain_foundation(cfg, corpora, &lm_texts)
}

/// Tokenizer fit on the training text, the foundation-LM stand-in, then
/// phase 1 (ASR with the LM frozen).
pub fn pretrain_foundation(
    cfg: &BenchmarkConfig,
    corpora: SynthCorpora,
    lm_texts: &[(String, String)],
) -> Result<Foundation, TrainError> {
    let mut tok_texts = data::tokenizer_corpus(
        std::iter::once(&corpora.speech_train).chain(corpora.text_train.values()),
        &[],
    );
    tok_texts.extend(lm_texts.iter().flat_map(|(h, t)| [h.clone(), t.clone()]));
    let tokenizer = Tokenizer::train(tok_texts.iter().map(String::as_str), cfg.vocab_size);
    let mut model = ComposedModel::new(cfg.model.clone(), tokenizer)?;
    let lm_ex = lm_examples(lm_texts, &model.tokenizer);
    let lm_log = train::pretrain_lm(&mut model, &lm_ex, &cfg.lm)?;
    let asr_ex = asr_examples(&corpora.asr, &model.tokenizer);
    let asr_log = train::asr_pretrain(&mut model, &asr_ex, &cfg.asr)?;
    Ok(Foundation {
        config: cfg.clone(),
        corpora,
        model,
        lm_log,
        asr_log,
    })
}

/// Tokenized training and validation data for phase 2.
pub fn dst_data(found: &Foundation) -> DstData {
    let tok = &found.model.tokenizer;
    let c = &found.corpora;
    let examples = |corpus| {
        data::turn_examples(corpus, tok, HistoryMode::Gold)
            .into_iter()
            .map(|t| t.example)
            .collect::<Vec<_>>()
    };
    DstData {
        speech: examples(&c.speech_train),
        text: c.text_train.iter().map(|(k, v)| (k.clone(), examples(v))).collect(),
        text_weights: BTreeMap::new(),
        val: c.val.values().map(|v| ValSet::from_corpus(v, tok)).collect(),
        ontology: c.ontology.clone(),
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub variant: Variant,
    pub outcome: TrainOutcome,
    /// Free-running test reports per domain.
    pub test: BTreeMap<String, EvalReport>,
    pub model: Arc<ComposedModel>,
}

impl RunResult {
    pub fn jga(&self, domain: &str) -> f64 {
        self.test.get(domain).map_or(0.0, |r| r.jga)
    }

    fn mean_jga(&self, domains: &[String]) -> f64 {
        if domains.is_empty() {
            return 0.0;
        }
        domains.iter().map(|d| self.jga(d)).sum::<f64>() / domains.len() as f64
    }

    /// Mean test JGA over the speech-trained domains.
    pub fn source_jga(&self, cfg: &BenchmarkConfig) -> f64 {
        self.mean_jga(&cfg.synth.speech_domains)
    }

    /// Mean test JGA over the configured target domains.
    pub fn target_jga(&self, cfg: &BenchmarkConfig) -> f64 {
        self.mean_jga(&cfg.target_domains())
    }
}

/// Finetunes a copy of the foundation model under `variant` and evaluates it
/// on every test set.
pub fn run_variant(found: &Foundation, data: &DstData, variant: Variant) -> Result<RunResult, TrainError> {
    let cfg = &found.config;
    let mut model = found.model.clone();
    model.inject_adapters(cfg.adapter.clone(), cfg.dst.seed ^ 0xada)?;
    if cfg.text_embedding_from_lm && variant.use_text_encoder {
        model.init_text_embedding_from_lm()?;
    }
    let dst = TrainConfig {
        lambda_text: variant.lambda_text,
        use_text_encoder: variant.use_text_encoder,
        ..cfg.dst.clone()
    };
    let outcome = train::train_dst(&mut model, data, &dst)?;
    let test = evaluate_all(&model, &found.corpora, &cfg.gen, cfg.dst.exec)?;
    Ok(RunResult {
        variant,
        outcome,
        test,
        model: Arc::new(model),
    })
}

pub fn evaluate_all(
    model: &ComposedModel,
    corpora: &SynthCorpora,
    gen: &GenConfig,
    exec: crate::par::ExecMode,
) -> Result<BTreeMap<String, EvalReport>, TrainError> {
    corpora
        .test
        .iter()
        .map(|(name, corpus)| {
            Ok((
                name.clone(),
                evaluate_corpus(model, corpus, gen, &corpora.ontology, HistorySource::Hypothesized, exec)?,
            ))
        })
        .collect()
}
