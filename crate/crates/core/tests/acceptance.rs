//! Acceptance checks, one test per criterion. Each prints a single
//! `PASS`/`FAIL` line with the measured quantities; run with
//! `cargo test --release --test acceptance -- --nocapture --test-threads 1`
//! to see them in order.
//!
//! The training criteria share cached runs: one foundation per seed and one
//! finetuning run per (seed, variant).

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dst_joint::autograd::{Component, ParamId, Tape, TrainMask};
use dst_joint::codec::{decode_output, encode_target, FailureReason, ParseFailure};
use dst_joint::commands::{self, Command, DstOptions, MANIFEST_FILE};
use dst_joint::eval::{recall_report, Prediction};
use dst_joint::experiment::{build_foundation, dst_data, run_variant, BenchmarkConfig, Foundation, RunResult, Variant};
use dst_joint::inference::{track_dialogue, HistorySource};
use dst_joint::model::{ComposedModel, Example, ModelConfig, ModelError, PrefixSource, TransformerDims};
use dst_joint::par::ExecMode;
use dst_joint::state::{normalize_state, DialogueState};
use dst_joint::tensor::Tensor;
use dst_joint::tokenizer::{Tokenizer, EOS};
use dst_joint::train::joint_step;

// Pinned tolerances and budgets.
const CODEC_BUDGET: Duration = Duration::from_secs(30);
const CONNECTOR_BUDGET: Duration = Duration::from_secs(5);
const FD_REL_TOL: f64 = 1e-3;
const AFFINE_REL_TOL: f64 = 1e-6;
const ORACLE_TOL: f64 = 1e-12;
const MIN_FROZEN_STEPS: usize = 500;
const TARGET_GAIN: f64 = 0.10;
const SOURCE_DROP: f64 = 0.05;
const RUN_BUDGET: Duration = Duration::from_secs(15 * 60);
const SEEDS: [u64; 3] = [1, 2, 3];

/// Written to the raw stderr handle so the line shows up even when the test
/// harness captures output of passing tests.
fn verdict(id: u32, ok: bool, what: &str, detail: String) {
    use std::io::Write;
    let line = format!("[{id:02}] {} {what}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

// ----- shared training runs -----

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Kind {
    NoText,
    Joint,
    NoTextEncoder,
    HeavyText,
}

impl Kind {
    fn variant(self) -> Variant {
        match self {
            Kind::NoText => Variant::NO_TEXT,
            Kind::Joint => Variant::joint(0.5),
            Kind::NoTextEncoder => Variant::no_text_encoder(0.5),
            Kind::HeavyText => Variant::joint(64.0),
        }
    }
}

struct Seeded {
    found: Foundation,
    found_time: Duration,
}

struct Run {
    result: RunResult,
    time: Duration,
}

type Cache<K, V> = OnceLock<Mutex<HashMap<K, Arc<V>>>>;

static FOUNDATIONS: Cache<u64, Seeded> = OnceLock::new();
static RUNS: Cache<(u64, Kind), Run> = OnceLock::new();
/// Serialises the expensive work; the machine budget is one core.
static HEAVY: Mutex<()> = Mutex::new(());

fn config(seed: u64) -> BenchmarkConfig {
    BenchmarkConfig::desk().with_seed(seed)
}

fn foundation(seed: u64) -> Arc<Seeded> {
    let cache = FOUNDATIONS.get_or_init(Default::default);
    if let Some(f) = cache.lock().unwrap().get(&seed) {
        return f.clone();
    }
    let _g = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(f) = cache.lock().unwrap().get(&seed) {
        return f.clone();
    }
    let t = Instant::now();
    let found = build_foundation(&config(seed)).expect("foundation");
    let s = Arc::new(Seeded {
        found,
        found_time: t.elapsed(),
    });
    cache.lock().unwrap().insert(seed, s.clone());
    s
}

fn run(seed: u64, kind: Kind) -> Arc<Run> {
    let cache = RUNS.get_or_init(Default::default);
    if let Some(r) = cache.lock().unwrap().get(&(seed, kind)) {
        return r.clone();
    }
    let seeded = foundation(seed);
    let _g = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(r) = cache.lock().unwrap().get(&(seed, kind)) {
        return r.clone();
    }
    let t = Instant::now();
    let data = dst_data(&seeded.found);
    let result = run_variant(&seeded.found, &data, kind.variant()).expect("finetuning run");
    let r = Arc::new(Run {
        result,
        time: t.elapsed(),
    });
    cache.lock().unwrap().insert((seed, kind), r.clone());
    r
}

fn source(seed: u64, kind: Kind) -> f64 {
    run(seed, kind).result.source_jga(&config(seed))
}

fn target(seed: u64, kind: Kind) -> f64 {
    run(seed, kind).result.target_jga(&config(seed))
}

// ----- small fixtures -----

fn random_word<R: Rng>(rng: &mut R) -> String {
    const POOL: &[&str] = &[
        "north", "cheap", "the", "caf\u{e9}", "ZEBRA", "a\"quote", "back\\slash", "tab\there", "new\nline", "\u{1F600}",
        "{brace}", "[x]", "ok", "Stra\u{df}e", "   ",
    ];
    if rng.gen_bool(0.7) {
        (0..rng.gen_range(1..8)).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
    } else {
        POOL.choose(rng).unwrap().to_string()
    }
}

fn random_text<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let n = rng.gen_range(0..=max_words);
    (0..n).map(|_| random_word(rng)).collect::<Vec<_>>().join(" ")
}

fn random_state<R: Rng>(rng: &mut R) -> DialogueState {
    let mut triples = Vec::new();
    for _ in 0..rng.gen_range(0..6) {
        triples.push((random_word(rng), random_word(rng), random_text(rng, 3)));
    }
    DialogueState::from_triples(triples.iter().map(|(d, s, v)| (d.as_str(), s.as_str(), v.as_str())))
}

fn tokenizer() -> Tokenizer {
    let corpus = [
        "i am looking for a restaurant in the north",
        "what else",
        r#"{"transcript":"in the north","state":{"restaurant":{"area":"north"}}}"#,
        "cheap\nok",
    ];
    Tokenizer::train(corpus.iter().copied(), 200)
}

fn desk_model() -> ComposedModel {
    let cfg = BenchmarkConfig::desk();
    ComposedModel::new(cfg.model, tokenizer()).unwrap()
}

fn example(model: &ComposedModel, seed: u64) -> Example {
    let tok = &model.tokenizer;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["in the north", "cheap", "what else ok", "a restaurant in the north"];
    let utt = words[seed as usize % words.len()];
    let n_frames = 6 * utt.split_whitespace().count() + rng.gen_range(0..6);
    let mut target = tok.encode(&format!(r#"{{"transcript":"{utt}","state":{{}}}}"#));
    target.push(EOS);
    Example {
        frames: Some(Arc::new(Tensor::randn(n_frames, model.config.speech_encoder.in_dim, 1.0, &mut rng))),
        utterance: Some(tok.encode(utt)),
        history: tok.encode("i am looking for a restaurant\nwhat else"),
        target,
    }
}

fn perturb_adapters(model: &mut ComposedModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = model
        .store
        .iter()
        .filter(|(_, p)| p.component == Component::Adapter)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let (r, c) = model.store.value(id).shape();
        *model.store.value_mut(id) = Tensor::randn(r, c, 0.2, &mut rng);
    }
}

// ----- criteria -----

#[test]
fn c01_codec_round_trip_and_fuzz() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut round_trip_failures = 0;
    for _ in 0..10_000 {
        let t = random_text(&mut rng, 12);
        let s = random_state(&mut rng);
        let target = encode_target(&t, &s);
        match decode_output(target.as_str()) {
            Ok(d) if d.transcript == t && d.state == normalize_state(&s) => {}
            _ => round_trip_failures += 1,
        }
    }
    let mut panics = 0;
    for i in 0..10_000 {
        let fuzzed: String = match i % 3 {
            0 => {
                let bytes: Vec<u8> = (0..rng.gen_range(0..200)).map(|_| rng.gen()).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            1 => {
                let full = encode_target(&random_text(&mut rng, 6), &random_state(&mut rng)).0;
                let cut = rng.gen_range(0..=full.len());
                full.char_indices().take_while(|(k, _)| *k < cut).map(|(_, c)| c).collect()
            }
            _ => {
                let mut chars: Vec<char> = encode_target(&random_text(&mut rng, 6), &random_state(&mut rng)).0.chars().collect();
                for _ in 0..rng.gen_range(1..6) {
                    if chars.is_empty() {
                        break;
                    }
                    let k = rng.gen_range(0..chars.len());
                    chars[k] = *['{', '}', '"', ':', ',', '\\', 'x'].choose(&mut rng).unwrap();
                }
                chars.into_iter().collect()
            }
        };
        if std::panic::catch_unwind(|| {
            let _ = decode_output(&fuzzed);
        })
        .is_err()
        {
            panics += 1;
        }
    }
    let took = start.elapsed();
    let ok = round_trip_failures == 0 && panics == 0 && took < CODEC_BUDGET;
    verdict(
        1,
        ok,
        "codec round trip and fuzzing",
        format!("{round_trip_failures} round-trip failures, {panics} panics, {took:.1?}"),
    );
    assert!(ok);
}

/// Lengths the connector produces for `ts`, or `None` where it errored.
fn connector_lengths(model: &ComposedModel, ts: impl Iterator<Item = usize>) -> Vec<(usize, Option<usize>)> {
    let d = model.config.connector.in_dim;
    ts.map(|t| {
        let mut tape = Tape::new(&model.store);
        let x = tape.constant(Tensor::zeros(t, d));
        let len = match model.connector.forward(&mut tape, x) {
            Ok(y) => Some(tape.shape(y).0),
            Err(ModelError::TooShort { .. }) => None,
            Err(e) => panic!("unexpected connector error at T = {t}: {e}"),
        };
        (t, len)
    })
    .collect()
}

fn law_violations(lengths: &[(usize, Option<usize>)]) -> usize {
    let expect = |t: usize| if t < 6 { None } else { Some(t / 3 / 2) };
    lengths.iter().filter(|(t, got)| *got != expect(*t)).count()
}

#[test]
fn c02_connector_length_law() {
    // Output length depends only on the strides, so the exhaustive sweep runs
    // on a narrow Transformer; the desk width is spot-checked afterwards.
    let mut cfg = BenchmarkConfig::desk().model;
    cfg.connector.dims = TransformerDims {
        n_layers: 1,
        hidden: 8,
        n_heads: 1,
        ffn_dim: 16,
        max_pos: 512,
    };
    let narrow = ComposedModel::new(cfg, tokenizer()).unwrap();
    let start = Instant::now();
    let all = connector_lengths(&narrow, 0..=2048);
    let took = start.elapsed();
    let exhaustive = law_violations(&all);

    let desk = desk_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sample: Vec<usize> = (0..64).map(|_| rng.gen_range(0..=2048)).chain([0, 5, 6, 11, 12, 2047, 2048]).collect();
    let spot = law_violations(&connector_lengths(&desk, sample.into_iter()));

    let ok = exhaustive == 0 && spot == 0 && took < CONNECTOR_BUDGET;
    verdict(
        2,
        ok,
        "connector output length",
        format!("{exhaustive} violations over T in [0, 2048] in {took:.2?}; {spot} at desk width on 71 sampled T"),
    );
    assert!(ok);
}

#[test]
fn c03_adapter_neutral_at_init() {
    let mut model = desk_model();
    let examples: Vec<Example> = (0..10).map(|i| example(&model, i)).collect();
    let logits = |m: &ComposedModel, ex: &Example, s: PrefixSource| {
        let mut tape = Tape::new(&m.store);
        let f = m.forward(&mut tape, s, ex).unwrap();
        tape.value(f.logits).clone()
    };
    let before: Vec<Tensor> = examples.iter().map(|e| logits(&model, e, PrefixSource::Speech)).collect();
    model.inject_adapters(BenchmarkConfig::desk().adapter, 7).unwrap();
    let max_diff = examples
        .iter()
        .zip(&before)
        .map(|(e, b)| logits(&model, e, PrefixSource::Speech).max_abs_diff(b))
        .fold(0.0, f64::max);
    let ok = max_diff == 0.0;
    verdict(3, ok, "adapter neutrality at init", format!("max |logit diff| {max_diff:e} over 10 inputs"));
    assert!(ok);
}

#[test]
fn c04_freezing() {
    let mut cfg = BenchmarkConfig::smoke();
    cfg.asr.lr.total_steps = 50;
    cfg.dst.lr.total_steps = MIN_FROZEN_STEPS;
    cfg.dst.eval_every = 100;
    cfg.dst.patience = MIN_FROZEN_STEPS;
    let found = build_foundation(&cfg).unwrap();

    // Phase 1 again on top of the foundation: the LM must not move.
    let mut asr = found.model.clone();
    let lm_before = asr.base_lm_fingerprint();
    let connector_before = asr.fingerprint(Component::Connector);
    let ex = dst_joint::data::asr_examples(&found.corpora.asr, &asr.tokenizer);
    dst_joint::train::asr_pretrain(&mut asr, &ex, &cfg.asr).unwrap();
    let phase1_ok = asr.base_lm_fingerprint() == lm_before && asr.fingerprint(Component::Connector) != connector_before;

    let mut tuned = found.model.clone();
    tuned.inject_adapters(cfg.adapter.clone(), 1).unwrap();
    let adapters_before = tuned.fingerprint(Component::Adapter);
    let data = dst_data(&found);
    let dst = dst_joint::train::TrainConfig {
        lambda_text: 0.5,
        ..cfg.dst.clone()
    };
    let outcome = dst_joint::train::train_dst(&mut tuned, &data, &dst).unwrap();
    let steps = outcome.state.step;
    let phase2_ok = tuned.base_lm_fingerprint() == found.model.base_lm_fingerprint()
        && tuned.fingerprint(Component::SpeechEncoder) == found.model.fingerprint(Component::SpeechEncoder)
        && tuned.fingerprint(Component::Adapter) != adapters_before
        && steps >= MIN_FROZEN_STEPS;
    let ok = phase1_ok && phase2_ok;
    verdict(
        4,
        ok,
        "freezing",
        format!("LM unchanged by ASR training: {phase1_ok}; speech encoder and base LM unchanged over {steps} finetuning steps: {phase2_ok}"),
    );
    assert!(ok);
}

#[test]
fn c05_finite_difference_gradients() {
    let mut model = desk_model();
    model.inject_adapters(BenchmarkConfig::desk().adapter, 3).unwrap();
    perturb_adapters(&mut model, 4);
    model.set_mask(TrainMask::DST);
    let ex = example(&model, 2);
    let grads = {
        let mut tape = Tape::new(&model.store);
        let l = model.forward_loss(&mut tape, PrefixSource::Speech, &ex).unwrap();
        tape.backward(l)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pool: Vec<ParamId> = model
        .store
        .iter()
        .filter(|(_, p)| matches!(p.component, Component::Connector | Component::Adapter))
        .map(|(id, _)| id)
        .collect();
    pool.shuffle(&mut rng);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for &id in pool.iter().cycle().take(20) {
        let len = model.store.value(id).len();
        let k = rng.gen_range(0..len);
        let analytic = grads.get(id).map_or(0.0, |t| t.data()[k]);
        let h = 1e-5;
        let orig = model.store.value(id).data()[k];
        model.store.value_mut(id).data_mut()[k] = orig + h;
        let lp = model.loss_value(PrefixSource::Speech, &ex).unwrap();
        model.store.value_mut(id).data_mut()[k] = orig - h;
        let lm = model.loss_value(PrefixSource::Speech, &ex).unwrap();
        model.store.value_mut(id).data_mut()[k] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
        checked += 1;
    }
    let ok = checked == 20 && worst < FD_REL_TOL;
    verdict(5, ok, "finite-difference gradient check", format!("{checked} coordinates, worst relative error {worst:.2e}"));
    assert!(ok);
}

#[test]
fn c06_lambda_affinity() {
    let mut model = desk_model();
    model.inject_adapters(BenchmarkConfig::desk().adapter, 5).unwrap();
    perturb_adapters(&mut model, 6);
    let speech: Vec<Example> = (0..4).map(|i| example(&model, i)).collect();
    let text: Vec<Example> = (4..8).map(|i| example(&model, i)).collect();
    let sp: Vec<&Example> = speech.iter().collect();
    let tx: Vec<&Example> = text.iter().collect();
    let total = |l: f64| joint_step(&model, &sp, &tx, l, true, ExecMode::Sequential, false).unwrap().0.total;
    let l0 = total(0.0);
    let slope = total(1.0) - l0;
    let mut worst = 0.0f64;
    for l in [0.5, 2.0] {
        let got = total(l);
        let want = l0 + l * slope;
        worst = worst.max((got - want).abs() / want.abs());
    }
    let speech_only = sp.iter().map(|e| model.loss_value(PrefixSource::Speech, e).unwrap()).sum::<f64>() / sp.len() as f64;
    let exact = l0.to_bits() == speech_only.to_bits();
    let ok = worst < AFFINE_REL_TOL && exact;
    verdict(
        6,
        ok,
        "total loss affine in lambda",
        format!("worst relative deviation {worst:.2e}; lambda 0 equals speech-only loss bit for bit: {exact}"),
    );
    assert!(ok);
}

#[test]
fn c07_text_encoder_deletion() {
    let r = run(1, Kind::Joint);
    let cfg = config(1);
    let seeded = foundation(1);
    let dialogues: Vec<_> = seeded.found.corpora.test["source"].dialogues.iter().take(10).collect();
    let full = (*r.result.model).clone();
    let mut stripped = full.clone();
    stripped.drop_text_encoder();
    let ont = &seeded.found.corpora.ontology;
    let mut differing = 0;
    for d in &dialogues {
        let a = track_dialogue(&full, d, &cfg.gen, ont, HistorySource::Hypothesized).unwrap();
        let b = track_dialogue(&stripped, d, &cfg.gen, ont, HistorySource::Hypothesized).unwrap();
        let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.raw == y.raw && x.state == y.state);
        differing += usize::from(!same);
    }
    let ok = differing == 0 && stripped.text_encoder.is_none();
    verdict(7, ok, "text encoder removal", format!("{differing} of {} dialogues differ", dialogues.len()));
    assert!(ok);
}

/// Independent oracle over flat triple lists.
fn oracle(preds: &[Prediction], golds: &[DialogueState]) -> (f64, BTreeMap<String, (f64, f64)>) {
    let flat = |s: &DialogueState| {
        let mut v: Vec<(String, String, String)> = s.triples().map(|(d, k, x)| (d.into(), k.into(), x.into())).collect();
        v.sort();
        v
    };
    let mut hits = 0;
    let mut tallies: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        let pv = p.as_ref().map(flat).unwrap_or_default();
        let gv = flat(g);
        if p.is_ok() && pv == gv {
            hits += 1;
        }
        for (d, k, x) in &gv {
            let found = pv.iter().find(|(pd, pk, _)| pd == d && pk == k);
            let t = tallies.entry(format!("{d}: {k}")).or_default();
            t.0 += 1;
            if let Some((_, _, px)) = found {
                t.1 += 1;
                if px == x {
                    t.2 += 1;
                }
            }
        }
    }
    let jga = if golds.is_empty() { 0.0 } else { hits as f64 / golds.len() as f64 };
    let per_key = tallies
        .into_iter()
        .map(|(k, (n, r, v))| (k, (r as f64 / n as f64, if r == 0 { 0.0 } else { v as f64 / r as f64 })))
        .collect();
    (jga, per_key)
}

#[test]
fn c08_metrics_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let domains = ["restaurant", "hotel"];
    let slots = ["area", "name", "food"];
    let values = ["north", "south", "x", "y"];
    let pick_state = |rng: &mut ChaCha8Rng| {
        let mut t = Vec::new();
        for d in domains {
            for s in slots {
                if rng.gen_bool(0.4) {
                    t.push((d, s, *values.choose(rng).unwrap()));
                }
            }
        }
        DialogueState::from_triples(t)
    };
    let mut mismatches = 0;
    for _ in 0..500 {
        let n = rng.gen_range(1..40);
        let golds: Vec<DialogueState> = (0..n).map(|_| pick_state(&mut rng)).collect();
        let preds: Vec<Prediction> = golds
            .iter()
            .map(|g| match rng.gen_range(0..4) {
                0 => Ok(g.clone()),
                1 => Err(ParseFailure {
                    reason: FailureReason::Truncated,
                    partial: g.clone(),
                }),
                _ => Ok(pick_state(&mut rng)),
            })
            .collect();
        let report = recall_report(&preds, &golds).unwrap();
        let (jga, keys) = oracle(&preds, &golds);
        let same_keys = report.per_key_recall.len() == keys.len()
            && keys.iter().all(|(k, (r, v))| {
                (report.per_key_recall[k] - r).abs() <= ORACLE_TOL && (report.value_recall_given_key[k] - v).abs() <= ORACLE_TOL
            });
        if (report.jga - jga).abs() > ORACLE_TOL || !same_keys {
            mismatches += 1;
        }
    }
    let ok = mismatches == 0;
    verdict(8, ok, "JGA and recall against brute force", format!("{mismatches} of 500 corpora disagree"));
    assert!(ok);
}

#[test]
fn c09_joint_training_transfers() {
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let (t0, t5) = (target(seed, Kind::NoText), target(seed, Kind::Joint));
        let (s0, s5) = (source(seed, Kind::NoText), source(seed, Kind::Joint));
        let time = foundation(seed).found_time + run(seed, Kind::Joint).time;
        let good = t5 - t0 >= TARGET_GAIN && s0 - s5 <= SOURCE_DROP && time <= RUN_BUDGET;
        ok &= good;
        parts.push(format!(
            "seed {seed}: target {:.1} -> {:.1}, source {:.1} -> {:.1}, {:.0?}",
            t0 * 100.0,
            t5 * 100.0,
            s0 * 100.0,
            s5 * 100.0,
            time
        ));
    }
    verdict(9, ok, "joint training gain on the target", parts.join("; "));
    assert!(ok);
}

#[test]
fn c10_ablation_ordering() {
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let (a, d, f) = (target(seed, Kind::NoText), target(seed, Kind::NoTextEncoder), target(seed, Kind::Joint));
        ok &= a <= d && d <= f && f > a;
        parts.push(format!("seed {seed}: {:.1} / {:.1} / {:.1}", a * 100.0, d * 100.0, f * 100.0));
    }
    verdict(10, ok, "target JGA no-text <= no-encoder <= full", parts.join("; "));
    assert!(ok);
}

#[test]
fn c11_text_weight_trend() {
    let mut votes = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let up = target(seed, Kind::Joint) > target(seed, Kind::NoText);
        let down = source(seed, Kind::HeavyText) <= source(seed, Kind::Joint);
        votes += usize::from(up && down);
        parts.push(format!(
            "seed {seed}: target 0 -> 0.5 {:.1} -> {:.1}, source 0.5 -> 64 {:.1} -> {:.1}",
            target(seed, Kind::NoText) * 100.0,
            target(seed, Kind::Joint) * 100.0,
            source(seed, Kind::Joint) * 100.0,
            source(seed, Kind::HeavyText) * 100.0
        ));
    }
    let ok = votes * 2 > SEEDS.len();
    verdict(11, ok, "text weight trend", format!("{votes}/3 seeds; {}", parts.join("; ")));
    assert!(ok);
}

#[test]
fn c12_rerun_is_bit_identical() {
    let mut cfg = BenchmarkConfig::smoke();
    cfg.dst.lr.total_steps = 30;
    cfg.dst.eval_every = 10;
    let root = std::env::temp_dir().join(format!("dst-accept-rerun-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    let data = root.join("data");
    commands::run(&Command::GenData { out: data.clone() }, &cfg).unwrap();
    let asr = root.join("asr");
    commands::run(
        &Command::PretrainAsr {
            data: data.clone(),
            out: asr.clone(),
        },
        &cfg,
    )
    .unwrap();
    let first = root.join("dst");
    commands::run(
        &Command::TrainDst {
            data,
            init: Some(asr.join("checkpoint")),
            options: DstOptions {
                variant: Variant::joint(0.5),
                from_scratch: false,
            },
            out: first.clone(),
        },
        &cfg,
    )
    .unwrap();
    let second = root.join("dst-rerun");
    commands::rerun(&first.join(MANIFEST_FILE), Some(second.clone())).unwrap();
    let a = std::fs::read(first.join("metrics.jsonl")).unwrap();
    let b = std::fs::read(second.join("metrics.jsonl")).unwrap();
    let ok = !a.is_empty() && a == b;
    verdict(12, ok, "rerun from manifest", format!("metrics logs of {} bytes identical: {}", a.len(), a == b));
    assert!(ok);
}

#[test]
fn c13_key_recall_outpaces_value_recall() {
    const DOMAIN: &str = "target_unseen";
    const KEY: &str = "restaurant: name";
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let get = |kind| {
            let r = run(seed, kind);
            let rep = &r.result.test[DOMAIN];
            (rep.per_key_recall.get(KEY).copied().unwrap_or(0.0), rep.value_recall_given_key.get(KEY).copied().unwrap_or(0.0))
        };
        let (k0, v0) = get(Kind::NoText);
        let (k5, v5) = get(Kind::Joint);
        let (dk, dv) = (k5 - k0, v5 - v0);
        // Value recall must improve strictly less than key recall: dv / dk < 1 with dk > 0.
        let good = dk > 0.0 && dv < dk;
        ok &= good;
        parts.push(format!("seed {seed}: key {:+.1}, value|key {:+.1}", dk * 100.0, dv * 100.0));
    }
    verdict(13, ok, "name key recall gain exceeds value gain", parts.join("; "));
    assert!(ok);
}

#[test]
fn desk_config_is_valid() {
    let cfg = BenchmarkConfig::desk();
    cfg.validate().unwrap();
    assert_eq!(cfg.model, ModelConfig::desk(cfg.synth.frame_dim));
}
