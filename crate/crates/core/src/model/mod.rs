//! The composed model: speech encoder, connector, text encoder and an
//! adapter-augmented decoder-only language model.
//!
//! Input to the language model is always
//! `[prefix embeddings] ++ embed(history) ++ <sep> ++ embed(target[..n-1])`,
//! where the prefix comes from the speech path (encoder, convolutions,
//! connector Transformer), the text path (text encoder, connector Transformer)
//! or is empty.

pub mod layers;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Component, ParamId, ParamStore, Tape, TrainMask, Var};
use crate::tensor::Tensor;
use crate::tokenizer::{Tokenizer, EOS, SEP};

pub use layers::{Linear, Projection, Stack, TransformerDims};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("speech input has {frames} frames; the connector needs at least {min}")]
    TooShort { frames: usize, min: usize },
    #[error("sequence of length {len} exceeds max_pos {max}")]
    TooLong { len: usize, max: usize },
    #[error("text input is empty")]
    EmptyText,
    #[error("example has no {0} input for the selected prefix source")]
    MissingModality(&'static str),
    #[error("frame width {got} does not match encoder input width {expected}")]
    FrameWidth { got: usize, expected: usize },
    #[error("model has no text encoder")]
    NoTextEncoder,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeechEncoderKind {
    /// Frames pass through unchanged; `out_dim == in_dim`.
    Identity,
    /// Two position-wise layers with a GELU in between.
    FrameMlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeechEncoderConfig {
    pub kind: SpeechEncoderKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Output frames per second.
    pub frame_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectorConfig {
    pub dims: TransformerDims,
    /// Kernel equals stride for both convolutions.
    pub conv_strides: [usize; 2],
    pub in_dim: usize,
    pub out_dim: usize,
}

impl ConnectorConfig {
    /// Four layers, width 1024, four heads, 4096 feed-forward, 512 positions,
    /// strides 3 and 2.
    pub fn full_size(in_dim: usize, out_dim: usize) -> Self {
        Self {
            dims: TransformerDims {
                n_layers: 4,
                hidden: 1024,
                n_heads: 4,
                ffn_dim: 4096,
                max_pos: 512,
            },
            conv_strides: [3, 2],
            in_dim,
            out_dim,
        }
    }

    pub fn downsampling(&self) -> usize {
        self.conv_strides[0] * self.conv_strides[1]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.dims.validate().map_err(ModelError::Config)?;
        if self.conv_strides.iter().any(|&s| s == 0) {
            return Err(ModelError::Config("convolution strides must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub dims: TransformerDims,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
    /// Projection names: `q`, `k`, `v`, `o`, `ffn_in`, `ffn_out`.
    pub targets: Vec<String>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            rank: 32,
            alpha: 32.0,
            targets: Projection::ATTENTION.iter().map(|p| p.short().to_owned()).collect(),
        }
    }
}

impl AdapterConfig {
    pub fn projections(&self) -> Result<Vec<Projection>, ModelError> {
        if self.rank == 0 {
            return Err(ModelError::Config("adapter rank must be positive".into()));
        }
        self.targets
            .iter()
            .map(|t| t.parse::<Projection>().map_err(ModelError::Config))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub speech_encoder: SpeechEncoderConfig,
    pub connector: ConnectorConfig,
    /// The text encoder reuses the connector Transformer dimensions.
    pub text_encoder: bool,
    pub lm: LmConfig,
    pub seed: u64,
}

impl ModelConfig {
    /// Small enough to train on one CPU core in minutes.
    pub fn desk(frame_dim: usize) -> Self {
        let d = 48;
        Self {
            speech_encoder: SpeechEncoderConfig {
                kind: SpeechEncoderKind::FrameMlp,
                in_dim: frame_dim,
                out_dim: 32,
                frame_rate: 50.0,
            },
            connector: ConnectorConfig {
                dims: TransformerDims {
                    n_layers: 1,
                    hidden: d,
                    n_heads: 2,
                    ffn_dim: 2 * d,
                    max_pos: 512,
                },
                conv_strides: [3, 2],
                in_dim: 32,
                out_dim: d,
            },
            text_encoder: true,
            lm: LmConfig {
                dims: TransformerDims {
                    n_layers: 2,
                    hidden: d,
                    n_heads: 2,
                    ffn_dim: 2 * d,
                    max_pos: 512,
                },
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.connector.validate()?;
        self.lm.dims.validate().map_err(ModelError::Config)?;
        if self.speech_encoder.kind == SpeechEncoderKind::Identity
            && self.speech_encoder.in_dim != self.speech_encoder.out_dim
        {
            return Err(ModelError::Config("identity encoder must keep the frame width".into()));
        }
        if self.connector.in_dim != self.speech_encoder.out_dim {
            return Err(ModelError::Config("connector input width must equal encoder output width".into()));
        }
        if self.connector.out_dim != self.lm.dims.hidden {
            return Err(ModelError::Config("connector output width must equal the LM width".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpeechEncoder {
    pub config: SpeechEncoderConfig,
    layers: Option<(Linear, Linear)>,
}

impl SpeechEncoder {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &SpeechEncoderConfig, rng: &mut R) -> Self {
        let layers = match config.kind {
            SpeechEncoderKind::Identity => None,
            SpeechEncoderKind::FrameMlp => {
                let c = Component::SpeechEncoder;
                let (i, o) = (config.in_dim, config.out_dim);
                Some((
                    Linear::new(store, "speech.l1", c, i, o, 1.0 / (i as f64).sqrt(), rng),
                    Linear::new(store, "speech.l2", c, o, o, 1.0 / (o as f64).sqrt(), rng),
                ))
            }
        };
        Self {
            config: config.clone(),
            layers,
        }
    }

    pub fn forward(&self, tape: &mut Tape, frames: Var) -> Var {
        match &self.layers {
            None => frames,
            Some((l1, l2)) => {
                let h = l1.forward(tape, frames);
                let h = tape.gelu(h);
                l2.forward(tape, h)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Connector {
    pub config: ConnectorConfig,
    conv1: Linear,
    conv2: Linear,
    stack: Stack,
    proj: Linear,
    #[serde(skip)]
    pe: Arc<Tensor>,
}

impl Connector {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &ConnectorConfig, rng: &mut R) -> Self {
        let c = Component::Connector;
        let h = config.dims.hidden;
        let [s1, s2] = config.conv_strides;
        let k1 = s1 * config.in_dim;
        let k2 = s2 * h;
        Self {
            config: config.clone(),
            conv1: Linear::new(store, "connector.conv1", c, k1, h, 1.0 / (k1 as f64).sqrt(), rng),
            conv2: Linear::new(store, "connector.conv2", c, k2, h, 1.0 / (k2 as f64).sqrt(), rng),
            stack: Stack::new(store, "connector.transformer", c, config.dims, false, rng),
            proj: Linear::new(store, "connector.proj", c, h, config.out_dim, 1.0 / (h as f64).sqrt(), rng),
            pe: Arc::new(layers::sinusoidal_table(config.dims.max_pos, h)),
        }
    }

    /// Output length for `frames` input frames: `floor(floor(T / s1) / s2)`.
    pub fn output_len(&self, frames: usize) -> usize {
        frames / self.config.conv_strides[0] / self.config.conv_strides[1]
    }

    /// Minimum input length that yields one output frame.
    pub fn min_frames(&self) -> usize {
        self.config.downsampling()
    }

    /// Non-overlapping strided convolution: consecutive `stride` rows are
    /// concatenated and projected, trailing rows are dropped.
    fn conv(&self, tape: &mut Tape, x: Var, layer: &Linear, stride: usize) -> Var {
        let (t, d) = tape.shape(x);
        let out = t / stride;
        let x = if out * stride == t {
            x
        } else {
            tape.slice_rows(x, 0, out * stride)
        };
        let x = tape.reshape(x, out, stride * d);
        let y = layer.forward(tape, x);
        tape.gelu(y)
    }

    /// Encoder frames `T x d_enc` to LM embeddings `T' x d_lm`.
    pub fn forward(&self, tape: &mut Tape, frames: Var) -> Result<Var, ModelError> {
        let t = tape.shape(frames).0;
        if t < self.min_frames() {
            return Err(ModelError::TooShort {
                frames: t,
                min: self.min_frames(),
            });
        }
        let [s1, s2] = self.config.conv_strides;
        let x = self.conv(tape, frames, &self.conv1, s1);
        let x = self.conv(tape, x, &self.conv2, s2);
        self.transform(tape, x)
    }

    /// The Transformer stage alone; the text path enters here.
    pub fn transform(&self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let len = tape.shape(x).0;
        if len > self.config.dims.max_pos {
            return Err(ModelError::TooLong {
                len,
                max: self.config.dims.max_pos,
            });
        }
        let pe = tape.constant(self.pe.slice_rows(0, len));
        let x = tape.add(x, pe);
        let x = self.stack.forward(tape, x);
        Ok(self.proj.forward(tape, x))
    }

    fn restore(&mut self) {
        self.pe = Arc::new(layers::sinusoidal_table(self.config.dims.max_pos, self.config.dims.hidden));
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TextEncoder {
    emb: ParamId,
    stack: Stack,
    #[serde(skip)]
    pe: Arc<Tensor>,
}

impl TextEncoder {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, dims: TransformerDims, vocab: usize, rng: &mut R) -> Self {
        let c = Component::TextEncoder;
        Self {
            emb: store.add(
                "text.embedding",
                c,
                Tensor::randn(vocab, dims.hidden, 1.0 / (dims.hidden as f64).sqrt(), rng),
            ),
            stack: Stack::new(store, "text.transformer", c, dims, false, rng),
            pe: Arc::new(layers::sinusoidal_table(dims.max_pos, dims.hidden)),
        }
    }

    /// Token ids to `L x hidden`, no downsampling.
    pub fn forward(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyText);
        }
        let max = self.stack.dims.max_pos;
        if ids.len() > max {
            return Err(ModelError::TooLong { len: ids.len(), max });
        }
        let table = tape.param(self.emb);
        let x = tape.gather(table, ids);
        let x = tape.scale(x, (self.stack.dims.hidden as f64).sqrt());
        let pe = tape.constant(self.pe.slice_rows(0, ids.len()));
        let x = tape.add(x, pe);
        Ok(self.stack.forward(tape, x))
    }

    fn restore(&mut self) {
        self.pe = Arc::new(layers::sinusoidal_table(self.stack.dims.max_pos, self.stack.dims.hidden));
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LanguageModel {
    tok_emb: ParamId,
    stack: Stack,
    #[serde(skip)]
    pe: Arc<Tensor>,
}

impl LanguageModel {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, dims: TransformerDims, vocab: usize, rng: &mut R) -> Self {
        let c = Component::LanguageModel;
        Self {
            tok_emb: store.add(
                "lm.embedding",
                c,
                Tensor::randn(vocab, dims.hidden, 1.0 / (dims.hidden as f64).sqrt(), rng),
            ),
            stack: Stack::new(store, "lm.transformer", c, dims, true, rng),
            pe: Arc::new(layers::sinusoidal_table(dims.max_pos, dims.hidden)),
        }
    }

    pub fn dims(&self) -> &TransformerDims {
        &self.stack.dims
    }

    pub fn embed(&self, tape: &mut Tape, ids: &[usize]) -> Var {
        let table = tape.param(self.tok_emb);
        let x = tape.gather(table, ids);
        tape.scale(x, (self.stack.dims.hidden as f64).sqrt())
    }

    /// Final hidden states for an input embedding sequence.
    pub fn hidden(&self, tape: &mut Tape, inputs: Var) -> Result<Var, ModelError> {
        let len = tape.shape(inputs).0;
        let max = self.stack.dims.max_pos;
        if len > max {
            return Err(ModelError::TooLong { len, max });
        }
        let pe = tape.constant(self.pe.slice_rows(0, len));
        let x = tape.add(inputs, pe);
        Ok(self.stack.forward(tape, x))
    }

    /// Output logits via the tied embedding table.
    pub fn logits(&self, tape: &mut Tape, hidden: Var) -> Var {
        let table = tape.param(self.tok_emb);
        tape.matmul_t(hidden, table)
    }

    fn restore(&mut self) {
        self.pe = Arc::new(layers::sinusoidal_table(self.stack.dims.max_pos, self.stack.dims.hidden));
    }
}

/// Where the prefix embeddings of an example come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixSource {
    Speech,
    Text,
    /// No prefix; the utterance is appended to the history as plain text.
    Inline,
    /// No prefix and no utterance; the history alone is the prompt.
    Plain,
}

/// One training or evaluation item, already tokenized.
#[derive(Clone, Debug, Default)]
pub struct Example {
    pub frames: Option<Arc<Tensor>>,
    pub utterance: Option<Vec<usize>>,
    pub history: Vec<usize>,
    /// Target tokens, ending in `<eos>`.
    pub target: Vec<usize>,
}

/// Teacher-forced outputs of one forward pass.
pub struct Forward {
    pub loss: Var,
    pub logits: Var,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComposedModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub tokenizer: Tokenizer,
    pub speech_encoder: SpeechEncoder,
    pub connector: Connector,
    pub text_encoder: Option<TextEncoder>,
    pub lm: LanguageModel,
    pub adapter: Option<AdapterConfig>,
    newline: Vec<usize>,
}

impl ComposedModel {
    pub fn new(config: ModelConfig, tokenizer: Tokenizer) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let vocab = tokenizer.vocab_size();
        let speech_encoder = SpeechEncoder::new(&mut store, &config.speech_encoder, &mut rng);
        let connector = Connector::new(&mut store, &config.connector, &mut rng);
        let lm = LanguageModel::new(&mut store, config.lm.dims, vocab, &mut rng);
        let text_encoder = config
            .text_encoder
            .then(|| TextEncoder::new(&mut store, config.connector.dims, vocab, &mut rng));
        let newline = tokenizer.encode("\n");
        Ok(Self {
            config,
            store,
            tokenizer,
            speech_encoder,
            connector,
            text_encoder,
            lm,
            adapter: None,
            newline,
        })
    }

    /// Recomputes fields skipped during serialization.
    pub fn restore(&mut self) {
        self.tokenizer.rebuild();
        self.connector.restore();
        self.lm.restore();
        if let Some(t) = &mut self.text_encoder {
            t.restore();
        }
    }

    /// Adds low-rank adapters to the configured LM projections. Returns the
    /// number of adapter parameters added.
    pub fn inject_adapters(&mut self, cfg: AdapterConfig, seed: u64) -> Result<usize, ModelError> {
        let targets = cfg.projections()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let before = self.store.count(Component::Adapter);
        for (i, block) in self.lm.stack.blocks.iter_mut().enumerate() {
            for &p in &targets {
                let name = format!("lm.transformer.block{i}.{}", p.short());
                block
                    .projection_mut(p)
                    .inject_lora(&mut self.store, &name, cfg.rank, cfg.alpha, &mut rng);
            }
        }
        self.adapter = Some(cfg);
        Ok(self.store.count(Component::Adapter) - before)
    }

    /// Removes the text encoder and its parameters. Speech-path outputs are unaffected.
    pub fn drop_text_encoder(&mut self) {
        self.text_encoder = None;
        self.store.remove_component(Component::TextEncoder);
    }

    /// Re-creates a fresh text encoder (used when a checkpoint lacks one).
    pub fn add_text_encoder(&mut self, seed: u64) {
        if self.text_encoder.is_none() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vocab = self.tokenizer.vocab_size();
            self.text_encoder = Some(TextEncoder::new(&mut self.store, self.config.connector.dims, vocab, &mut rng));
        }
    }

    /// Copies the LM token embedding into the text encoder's embedding; both
    /// share the tokenizer. Fails when the widths differ.
    pub fn init_text_embedding_from_lm(&mut self) -> Result<(), ModelError> {
        let te = self.text_encoder.as_ref().ok_or(ModelError::NoTextEncoder)?;
        let table = self.store.value(self.lm.tok_emb).clone();
        if table.shape() != self.store.value(te.emb).shape() {
            return Err(ModelError::Config(
                "text encoder width must equal the LM width to share embeddings".into(),
            ));
        }
        *self.store.value_mut(te.emb) = table;
        Ok(())
    }

    pub fn set_mask(&mut self, mask: TrainMask) {
        self.store.set_mask(mask);
    }

    pub fn newline_ids(&self) -> &[usize] {
        &self.newline
    }

    /// Speech frames to prefix embeddings. Frames are right-padded with
    /// silence (zero rows) to a multiple of the connector's downsampling so
    /// trailing words are not dropped.
    pub fn speech_prefix(&self, tape: &mut Tape, frames: &Tensor) -> Result<Var, ModelError> {
        let expected = self.config.speech_encoder.in_dim;
        if frames.cols() != expected {
            return Err(ModelError::FrameWidth {
                got: frames.cols(),
                expected,
            });
        }
        let step = self.connector.config.downsampling();
        let padded_len = frames.rows().div_ceil(step) * step;
        let input = if padded_len == frames.rows() {
            frames.clone()
        } else {
            let pad = Tensor::zeros(padded_len - frames.rows(), frames.cols());
            Tensor::concat_rows(&[frames, &pad])
        };
        let x = tape.constant(input);
        let enc = self.speech_encoder.forward(tape, x);
        self.connector.forward(tape, enc)
    }

    /// Text encoder followed by the connector Transformer.
    pub fn text_prefix(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var, ModelError> {
        let te = self.text_encoder.as_ref().ok_or(ModelError::NoTextEncoder)?;
        let h = te.forward(tape, ids)?;
        self.connector.transform(tape, h)
    }

    /// Prefix and history tokens for an example under a prefix source.
    fn prompt(&self, tape: &mut Tape, source: PrefixSource, ex: &Example) -> Result<(Option<Var>, Vec<usize>), ModelError> {
        Ok(match source {
            PrefixSource::Speech => {
                let frames = ex.frames.as_ref().ok_or(ModelError::MissingModality("speech"))?;
                (Some(self.speech_prefix(tape, frames)?), ex.history.clone())
            }
            PrefixSource::Text => {
                let utt = ex.utterance.as_ref().ok_or(ModelError::MissingModality("text"))?;
                (Some(self.text_prefix(tape, utt)?), ex.history.clone())
            }
            PrefixSource::Inline => {
                let utt = ex.utterance.as_ref().ok_or(ModelError::MissingModality("text"))?;
                let mut history = ex.history.clone();
                if !history.is_empty() {
                    history.extend_from_slice(&self.newline);
                }
                history.extend_from_slice(utt);
                (None, history)
            }
            PrefixSource::Plain => (None, ex.history.clone()),
        })
    }

    /// `[prefix] ++ embed(history ++ <sep> ++ continuation)`.
    pub fn compose_input(&self, tape: &mut Tape, prefix: Option<Var>, history: &[usize], continuation: &[usize]) -> Var {
        let mut ids = Vec::with_capacity(history.len() + 1 + continuation.len());
        ids.extend_from_slice(history);
        ids.push(SEP);
        ids.extend_from_slice(continuation);
        let emb = self.lm.embed(tape, &ids);
        match prefix {
            Some(p) => tape.concat_rows(&[p, emb]),
            None => emb,
        }
    }

    /// Teacher-forced loss: mean cross-entropy of the target tokens.
    pub fn forward(&self, tape: &mut Tape, source: PrefixSource, ex: &Example) -> Result<Forward, ModelError> {
        if ex.target.is_empty() {
            return Err(ModelError::Config("empty target".into()));
        }
        let (prefix, history) = self.prompt(tape, source, ex)?;
        let inputs = self.compose_input(tape, prefix, &history, &ex.target[..ex.target.len() - 1]);
        let hidden = self.lm.hidden(tape, inputs)?;
        let total = tape.shape(hidden).0;
        let start = total - ex.target.len();
        let rows = tape.slice_rows(hidden, start, total);
        let logits = self.lm.logits(tape, rows);
        let loss = tape.cross_entropy(logits, &ex.target);
        Ok(Forward { loss, logits })
    }

    pub fn forward_loss(&self, tape: &mut Tape, source: PrefixSource, ex: &Example) -> Result<Var, ModelError> {
        Ok(self.forward(tape, source, ex)?.loss)
    }

    /// Loss value without building gradients.
    pub fn loss_value(&self, source: PrefixSource, ex: &Example) -> Result<f64, ModelError> {
        let mut tape = Tape::new(&self.store);
        let l = self.forward_loss(&mut tape, source, ex)?;
        Ok(tape.value(l).get(0, 0))
    }

    /// Per-position argmax under teacher forcing, cut at the first `<eos>`.
    pub fn teacher_forced_argmax(&self, source: PrefixSource, ex: &Example) -> Result<Vec<usize>, ModelError> {
        let mut tape = Tape::new(&self.store);
        let f = self.forward(&mut tape, source, ex)?;
        let logits = tape.value(f.logits);
        let mut out = Vec::with_capacity(logits.rows());
        for r in 0..logits.rows() {
            let id = logits.argmax_row(r);
            if id == EOS {
                break;
            }
            out.push(id);
        }
        Ok(out)
    }

    /// Precomputed prefix embeddings, as a plain tensor.
    pub fn prefix_tensor(&self, source: PrefixSource, ex: &Example) -> Result<(Option<Tensor>, Vec<usize>), ModelError> {
        let mut tape = Tape::new(&self.store);
        let (p, history) = self.prompt(&mut tape, source, ex)?;
        Ok((p.map(|p| tape.value(p).clone()), history))
    }

    /// Greedy decoding. Stops at `<eos>`, when a complete JSON object has
    /// been produced (if `stop_at_json`), or after `max_new_tokens`.
    pub fn generate(
        &self,
        prefix: Option<&Tensor>,
        history: &[usize],
        max_new_tokens: usize,
        stop_at_json: bool,
    ) -> Result<Vec<usize>, ModelError> {
        let mut out: Vec<usize> = Vec::new();
        let mut text = String::new();
        while out.len() < max_new_tokens {
            let mut tape = Tape::new(&self.store);
            let p = prefix.map(|p| tape.constant(p.clone()));
            let inputs = self.compose_input(&mut tape, p, history, &out);
            let hidden = self.lm.hidden(&mut tape, inputs)?;
            let n = tape.shape(hidden).0;
            let last = tape.slice_rows(hidden, n - 1, n);
            let logits = self.lm.logits(&mut tape, last);
            let next = tape.value(logits).argmax_row(0);
            if next == EOS {
                break;
            }
            out.push(next);
            if stop_at_json {
                text.push_str(self.tokenizer.token(next));
                if json_object_closed(&text) {
                    break;
                }
            }
        }
        Ok(out)
    }

    /// Hex digest over names and bit patterns of one component's parameters.
    pub fn fingerprint(&self, component: Component) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.store.component_values(component) {
            h.update(name.as_bytes());
            h.update((t.rows() as u64).to_le_bytes());
            h.update((t.cols() as u64).to_le_bytes());
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    /// Fingerprint of the base language model, adapters excluded.
    pub fn base_lm_fingerprint(&self) -> String {
        self.fingerprint(Component::LanguageModel)
    }
}

/// True once the text contains a balanced top-level `{...}` object.
pub fn json_object_closed(text: &str) -> bool {
    let mut depth = 0i64;
    let mut in_str = false;
    let mut escaped = false;
    let mut opened = false;
    for c in text.chars() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => {
                depth += 1;
                opened = true;
            }
            '}' => {
                depth -= 1;
                if opened && depth == 0 {
                    return true;
                }
            }
            _ => {}
        }
    }
    false
}

#[cfg(test)]
mod tests;
