//! Deterministic synthetic multi-domain dialogues with pseudo-speech.
//!
//! Each word of a transcript has a fixed acoustic template derived from a hash
//! of the word, so the same word always "sounds" the same; utterance frames are
//! the word templates repeated `frames_per_token` times plus Gaussian noise.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Corpus, DataError, Modality};
use crate::state::{Dialogue, DialogueState, Ontology, Turn};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    /// Values used in training dialogues.
    pub values: Vec<String>,
    /// When non-empty, evaluation dialogues draw from these instead, so
    /// training and evaluation values are disjoint for this slot.
    #[serde(default)]
    pub heldout_values: Vec<String>,
    /// Phrases expressing the slot; `{}` is replaced by the value.
    pub phrases: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    /// Names the corpora of this dialogue source.
    pub name: String,
    /// Domain label used in dialogue states; defaults to `name`. Several
    /// sources may share one, e.g. two datasets covering restaurants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_domain: Option<String>,
    /// First-turn openers naming the domain; a slot phrase follows.
    pub openers: Vec<String>,
    pub slots: Vec<SlotSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub domains: Vec<DomainSpec>,
    /// Domains whose training dialogues carry speech. The rest are text-only.
    pub speech_domains: Vec<String>,
    /// Training dialogues per domain.
    pub n_dialogues: usize,
    /// Validation and test dialogues per domain, each.
    pub n_eval_dialogues: usize,
    /// User turns per dialogue.
    pub turns_per_dialogue: usize,
    /// Openers for later user turns.
    pub continuations: Vec<String>,
    pub agent_prompts: Vec<String>,
    /// ASR pretraining utterances (all domains, training values).
    pub n_asr_utterances: usize,
    pub frame_dim: usize,
    pub frames_per_token: usize,
    pub noise_std: f64,
    /// Seeds the per-word acoustic templates; shared across sampling seeds.
    pub acoustic_seed: u64,
    pub seed: u64,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn slot(name: &str, values: &[&str], heldout: &[&str], phrases: &[&str]) -> SlotSpec {
    SlotSpec {
        name: name.into(),
        values: strings(values),
        heldout_values: strings(heldout),
        phrases: strings(phrases),
    }
}

/// Every `first second` pair.
fn combos(first: &[&str], second: &[&str]) -> Vec<String> {
    first.iter().flat_map(|a| second.iter().map(move |b| format!("{a} {b}"))).collect()
}


impl Default for SynthConfig {
    /// Three restaurant datasets. `source` carries speech. `target` is
    /// text-only, phrased differently, and draws names from the same
    /// inventory. `target_unseen` shares the target phrasing but has its own
    /// names, with held-out names in evaluation.
    fn default() -> Self {
        let area = &["north", "south", "east", "west", "centre"];
        let area_phrases = &["in the {}", "it should be in the {}", "somewhere in the {}"];
        let price = &["cheap", "moderate", "expensive"];
        let price_phrases = &["that is {}", "something {} please", "in the {} price range"];
        let food = &["italian", "chinese", "indian", "french", "thai", "british"];
        let food_phrases = &["serving {} food", "i would like {} food", "with {} food"];
        let restaurant = |name: &str, openers: &[&str], name_phrases: &[&str], names: Vec<String>, heldout: Vec<String>| DomainSpec {
            name: name.into(),
            state_domain: Some("restaurant".into()),
            openers: strings(openers),
            slots: vec![
                slot("area", area, &[], area_phrases),
                slot("pricerange", price, &[], price_phrases),
                slot("food", food, &[], food_phrases),
                SlotSpec {
                    name: "name".into(),
                    values: names,
                    heldout_values: heldout,
                    phrases: strings(name_phrases),
                },
            ],
        };
        let target_openers = &["i need a place to dine", "can you book a table", "we want somewhere to eat"];
        let target_name_phrases = &["a place named {}", "we like the {}", "maybe the {} one"];
        let shared_names = combos(&["golden", "lucky", "green", "river", "city"], &["curry", "palace", "bar", "star", "grill"]);
        Self {
            domains: vec![
                restaurant(
                    "source",
                    &["i am looking for a restaurant", "i want to eat at a restaurant", "find me a restaurant"],
                    &["called {}", "the name is {}", "it is the {}"],
                    shared_names.clone(),
                    vec![],
                ),
                restaurant(
                    "target",
                    target_openers,
                    target_name_phrases,
                    shared_names,
                    vec![],
                ),
                restaurant(
                    "target_unseen",
                    target_openers,
                    target_name_phrases,
                    combos(&["stone", "old", "silver", "king", "fern"], &["oven", "vine", "fork", "noodle", "bistro"]),
                    combos(&["amber", "iron", "ivy"], &["lantern", "pot", "dish"]),
                ),
            ],
            speech_domains: vec!["source".into()],
            n_dialogues: 120,
            n_eval_dialogues: 30,
            turns_per_dialogue: 3,
            continuations: strings(&["yes", "also", "and", "ok"]),
            agent_prompts: strings(&["what else", "any other preference", "sure anything else", "noted"]),
            n_asr_utterances: 600,
            frame_dim: 16,
            frames_per_token: 6,
            noise_std: 0.1,
            acoustic_seed: 17,
            seed: 1,
        }
    }
}

impl DomainSpec {
    pub fn state_name(&self) -> &str {
        self.state_domain.as_deref().unwrap_or(&self.name)
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let names: BTreeSet<&str> = self.domains.iter().map(|d| d.name.as_str()).collect();
        if names.len() != self.domains.len() {
            return Err(DataError::Config("duplicate domain names".into()));
        }
        for s in &self.speech_domains {
            if !names.contains(s.as_str()) {
                return Err(DataError::Config(format!("speech domain `{s}` is not defined")));
            }
        }
        if self.turns_per_dialogue == 0 || self.frames_per_token == 0 || self.frame_dim == 0 {
            return Err(DataError::Config(
                "turns_per_dialogue, frames_per_token and frame_dim must be positive".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(DataError::Config("noise_std must be finite and non-negative".into()));
        }
        for d in &self.domains {
            if d.openers.is_empty() || d.slots.is_empty() {
                return Err(DataError::Config(format!("domain `{}` needs openers and slots", d.name)));
            }
            if d.slots.len() < self.turns_per_dialogue {
                return Err(DataError::Config(format!(
                    "domain `{}` has {} slots for {} user turns",
                    d.name,
                    d.slots.len(),
                    self.turns_per_dialogue
                )));
            }
            for s in &d.slots {
                if s.values.is_empty() || s.phrases.is_empty() {
                    return Err(DataError::Config(format!("slot `{}.{}` needs values and phrases", d.name, s.name)));
                }
                for p in &s.phrases {
                    if p.matches("{}").count() != 1 {
                        return Err(DataError::Config(format!(
                            "phrase `{p}` of slot `{}.{}` must contain exactly one `{{}}`",
                            d.name, s.name
                        )));
                    }
                }
            }
        }
        if self.continuations.is_empty() || self.agent_prompts.is_empty() {
            return Err(DataError::Config("continuations and agent prompts must be non-empty".into()));
        }
        Ok(())
    }

    pub fn domain(&self, name: &str) -> Option<&DomainSpec> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn target_domains(&self) -> Vec<String> {
        self.domains
            .iter()
            .filter(|d| !self.speech_domains.contains(&d.name))
            .map(|d| d.name.clone())
            .collect()
    }
}

/// Per-word acoustic template, independent of vocabulary order.
pub fn word_template(word: &str, dim: usize, acoustic_seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(acoustic_seed.to_le_bytes());
    h.update(word.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Pseudo-speech for a transcript: `frames_per_token * n_words` rows.
pub fn synthesize_frames<R: Rng + ?Sized>(
    transcript: &str,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<Tensor, DataError> {
    let words: Vec<&str> = transcript.split_whitespace().collect();
    if words.is_empty() {
        return Err(DataError::EmptyTranscript);
    }
    let fpt = cfg.frames_per_token;
    let mut frames = Tensor::zeros(words.len() * fpt, cfg.frame_dim);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| DataError::Config(e.to_string()))?;
    for (w, word) in words.iter().enumerate() {
        let template = word_template(word, cfg.frame_dim, cfg.acoustic_seed);
        for f in 0..fpt {
            for (x, t) in frames.row_mut(w * fpt + f).iter_mut().zip(&template) {
                *x = t + if cfg.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            }
        }
    }
    Ok(frames)
}

/// Everything the synthetic benchmark needs.
#[derive(Clone, Debug)]
pub struct SynthCorpora {
    /// Training dialogues with speech, source domains only.
    pub speech_train: Corpus,
    /// Training dialogues without speech, one corpus per non-speech domain.
    pub text_train: BTreeMap<String, Corpus>,
    /// Validation dialogues with speech, one corpus per domain.
    pub val: BTreeMap<String, Corpus>,
    /// Test dialogues with speech, one corpus per domain.
    pub test: BTreeMap<String, Corpus>,
    /// Plain utterances with speech for ASR pretraining.
    pub asr: Vec<(String, Tensor)>,
    pub ontology: Ontology,
}

fn pick<'a, R: Rng + ?Sized>(items: &'a [String], rng: &mut R) -> &'a str {
    items.choose(rng).expect("validated non-empty")
}

fn fill(phrase: &str, value: &str) -> String {
    phrase.replacen("{}", value, 1)
}

/// One dialogue of `turns` user turns, each adding one new slot.
fn sample_dialogue<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    domain: &DomainSpec,
    id: String,
    heldout: bool,
    rng: &mut R,
) -> Dialogue {
    let mut order: Vec<usize> = (0..domain.slots.len()).collect();
    order.shuffle(rng);
    let mut state = DialogueState::new();
    let mut turns = Vec::new();
    for (k, &si) in order.iter().take(cfg.turns_per_dialogue).enumerate() {
        let slot = &domain.slots[si];
        let pool = if heldout && !slot.heldout_values.is_empty() {
            &slot.heldout_values
        } else {
            &slot.values
        };
        let value = pick(pool, rng);
        let phrase = fill(pick(&slot.phrases, rng), value);
        let text = if k == 0 {
            format!("{} {}", pick(&domain.openers, rng), phrase)
        } else {
            turns.push(Turn::agent(pick(&cfg.agent_prompts, rng)));
            format!("{} {}", pick(&cfg.continuations, rng), phrase)
        };
        state.insert(domain.state_name().to_owned(), slot.name.clone(), value);
        turns.push(Turn::user(text, state.clone()));
    }
    Dialogue {
        id,
        domain_tags: [domain.state_name().to_owned()].into_iter().collect(),
        turns,
    }
}

fn attach_frames<R: Rng + ?Sized>(dialogues: &mut [Dialogue], cfg: &SynthConfig, rng: &mut R) -> Result<(), DataError> {
    for d in dialogues {
        for t in &mut d.turns {
            if t.speaker == crate::state::Speaker::User {
                t.frames = Some(synthesize_frames(&t.transcript, cfg, rng)?);
            }
        }
    }
    Ok(())
}

/// Samples every corpus of the benchmark from `cfg`. Pure in `cfg`.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpora, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut speech_dialogues = Vec::new();
    let mut text_train = BTreeMap::new();
    let mut val = BTreeMap::new();
    let mut test = BTreeMap::new();
    let mut ontology = Ontology::new();

    for domain in &cfg.domains {
        let is_speech = cfg.speech_domains.contains(&domain.name);
        let mut train: Vec<Dialogue> = (0..cfg.n_dialogues)
            .map(|i| sample_dialogue(cfg, domain, format!("{}-train-{i:04}", domain.name), false, &mut rng))
            .collect();
        let mut held: Vec<Vec<Dialogue>> = ["val", "test"]
            .iter()
            .map(|split| {
                (0..cfg.n_eval_dialogues)
                    .map(|i| sample_dialogue(cfg, domain, format!("{}-{split}-{i:04}", domain.name), true, &mut rng))
                    .collect()
            })
            .collect();
        for d in train.iter().chain(held.iter().flatten()) {
            for (_, t) in d.user_turns() {
                ontology.add_state(t.gold_state.as_ref().expect("user turns carry states"));
            }
        }
        for h in &mut held {
            attach_frames(h, cfg, &mut rng)?;
        }
        if is_speech {
            attach_frames(&mut train, cfg, &mut rng)?;
            speech_dialogues.extend(train);
        } else {
            text_train.insert(
                domain.name.clone(),
                Corpus::new(domain.name.clone(), Modality::Text, train),
            );
        }
        let test_split = held.pop().expect("two splits");
        let val_split = held.pop().expect("two splits");
        val.insert(domain.name.clone(), Corpus::new(domain.name.clone(), Modality::Spoken, val_split));
        test.insert(domain.name.clone(), Corpus::new(domain.name.clone(), Modality::Spoken, test_split));
    }

    let asr = (0..cfg.n_asr_utterances)
        .map(|_| {
            let domain = cfg.domains.choose(&mut rng).expect("validated");
            let d = sample_dialogue(cfg, domain, String::new(), false, &mut rng);
            let user: Vec<&Turn> = d.user_turns().map(|(_, t)| t).collect();
            let t = user[rng.gen_range(0..user.len())].transcript.clone();
            let frames = synthesize_frames(&t, cfg, &mut rng)?;
            Ok((t, frames))
        })
        .collect::<Result<Vec<_>, DataError>>()?;

    let source = cfg.speech_domains.join("+");
    Ok(SynthCorpora {
        speech_train: Corpus::new(source, Modality::Spoken, speech_dialogues),
        text_train,
        val,
        test,
        asr,
        ontology,
    })
}

/// Plain text for foundation-model pretraining over training values: single
/// utterances, dialogue continuations, `(text, text)` repetition pairs and
/// generic JSON records that copy the text into a nested object.
pub fn lm_corpus(cfg: &SynthConfig, n: usize, seed: u64) -> Result<Vec<(String, String)>, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let domain = cfg.domains.choose(&mut rng).expect("validated");
        let d = sample_dialogue(cfg, domain, String::new(), false, &mut rng);
        let k = rng.gen_range(0..d.turns.len());
        let text = d.turns[k].transcript.clone();
        let item = match rng.gen_range(0..4) {
            0 => (String::new(), text),
            1 => (d.history_before(k), text),
            2 => (text.clone(), text),
            _ => {
                let words: Vec<&str> = text.split_whitespace().collect();
                let record = serde_json::json!({
                    "text": text,
                    "words": {"first": words[0], "last": words[words.len() - 1]},
                });
                (text.clone(), record.to_string())
            }
        };
        out.push(item);
    }
    Ok(out)
}
