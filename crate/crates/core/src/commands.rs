//! Experiment commands behind the command-line tool. Each command writes its
//! outputs together with an [`ExperimentManifest`] from which it can be run
//! again with identical results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, CheckpointError};
use crate::data::io::{load_corpus, save_corpus, sidecar_path};
use crate::data::synth::lm_corpus;
use crate::data::{generate_corpus, Corpus, DataError, Modality, SynthCorpora};
use crate::experiment::{self, BenchmarkConfig, Foundation, RunResult, Variant};
use crate::inference::{self, HistorySource};
use crate::model::{ComposedModel, ModelError};
use crate::state::{Dialogue, DialogueState, Ontology, Turn};
use crate::tokenizer::Tokenizer;
use crate::train::{self, TrainError, TrainOutcome};

pub const MANIFEST_FILE: &str = "manifest.json";
const SPEECH_FILE: &str = "speech_train.json";
const ASR_FILE: &str = "asr.json";
const LM_FILE: &str = "lm_text.jsonl";
const ONTOLOGY_FILE: &str = "ontology.json";
const CHECKPOINT_DIR: &str = "checkpoint";

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Data(_) => 3,
            CommandError::Runtime(_) => 4,
        }
    }
}

impl From<DataError> for CommandError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(m) => CommandError::Config(m),
            other => CommandError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CommandError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CommandError::Config(m),
            other => CommandError::Runtime(other.to_string()),
        }
    }
}

impl From<TrainError> for CommandError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CommandError::Config(m),
            TrainError::Data(d) => d.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Input(m) => CommandError::Data(m),
            other => CommandError::Runtime(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CommandError {
    fn from(e: CheckpointError) -> Self {
        CommandError::Data(format!("checkpoint: {e}"))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CommandError + '_ {
    move |e| CommandError::Runtime(format!("{}: {e}", path.display()))
}

fn read_err(path: &Path) -> impl Fn(std::io::Error) -> CommandError + '_ {
    move |e| CommandError::Data(format!("{}: {e}", path.display()))
}

/// Parses a benchmark configuration; errors carry line and column.
pub fn parse_config(text: &str) -> Result<BenchmarkConfig, CommandError> {
    let cfg: BenchmarkConfig = serde_json::from_str(text).map_err(|e| CommandError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<BenchmarkConfig, CommandError> {
    let text = fs::read_to_string(path).map_err(|e| CommandError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CommandError::Config(m) => CommandError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Which DST regime `train-dst` runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DstOptions {
    pub variant: Variant,
    /// Start from a fresh model when no phase-1 checkpoint is given.
    pub from_scratch: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    GenData {
        out: PathBuf,
    },
    PretrainAsr {
        data: PathBuf,
        out: PathBuf,
    },
    TrainDst {
        data: PathBuf,
        init: Option<PathBuf>,
        options: DstOptions,
        out: PathBuf,
    },
    Evaluate {
        checkpoint: PathBuf,
        corpus: PathBuf,
        ontology: PathBuf,
        history: HistorySource,
        out: PathBuf,
    },
    Infer {
        checkpoint: PathBuf,
        dialogues: PathBuf,
        ontology: PathBuf,
        history: HistorySource,
        out: PathBuf,
    },
    Sweep {
        data: PathBuf,
        init: Option<PathBuf>,
        from_scratch: bool,
        grid: Vec<f64>,
        out: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::PretrainAsr { .. } => "pretrain-asr",
            Command::TrainDst { .. } => "train-dst",
            Command::Evaluate { .. } => "evaluate",
            Command::Infer { .. } => "infer",
            Command::Sweep { .. } => "sweep",
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            Command::GenData { out }
            | Command::PretrainAsr { out, .. }
            | Command::TrainDst { out, .. }
            | Command::Evaluate { out, .. }
            | Command::Infer { out, .. }
            | Command::Sweep { out, .. } => out,
        }
    }

    /// The same command writing somewhere else.
    pub fn with_out(&self, dir: PathBuf) -> Command {
        let mut c = self.clone();
        match &mut c {
            Command::GenData { out }
            | Command::PretrainAsr { out, .. }
            | Command::TrainDst { out, .. }
            | Command::Evaluate { out, .. }
            | Command::Infer { out, .. }
            | Command::Sweep { out, .. } => *out = dir,
        }
        c
    }
}

/// Written beside every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: Command,
    pub config: BenchmarkConfig,
    pub seed: u64,
    pub revision: String,
    /// SHA-256 of the canonical config JSON.
    pub config_digest: String,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    /// Skipped dialogues, ontology mismatches and other non-fatal findings.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self, CommandError> {
        let text = fs::read_to_string(path).map_err(read_err(path))?;
        serde_json::from_str(&text).map_err(|e| CommandError::Config(format!("{}: {e}", path.display())))
    }
}

/// `DST_REVISION` when set, otherwise the crate version.
pub fn revision() -> String {
    std::env::var("DST_REVISION").unwrap_or_else(|_| format!("v{}", env!("CARGO_PKG_VERSION")))
}

fn digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CommandError> {
    let json = serde_json::to_vec_pretty(value).map_err(|e| CommandError::Runtime(e.to_string()))?;
    fs::write(path, json).map_err(io_err(path))
}

fn write_metrics(path: &Path, outcome: &TrainOutcome) -> Result<(), CommandError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    train::write_jsonl(&outcome.log, &mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Runs `command` under `config` and writes its manifest last.
pub fn run(command: &Command, config: &BenchmarkConfig) -> Result<ExperimentManifest, CommandError> {
    config.validate()?;
    let out = command.out();
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut warnings = Vec::new();
    let w = &mut warnings;
    let outputs = match command {
        Command::GenData { out } => gen_data(config, out)?,
        Command::PretrainAsr { data, out } => pretrain_asr(config, data, out, w)?,
        Command::TrainDst {
            data,
            init,
            options,
            out,
        } => train_dst(config, data, init.as_deref(), *options, out, w)?,
        Command::Evaluate {
            checkpoint,
            corpus,
            ontology,
            history,
            out,
        } => evaluate(config, checkpoint, corpus, ontology, *history, out, w)?,
        Command::Infer {
            checkpoint,
            dialogues,
            ontology,
            history,
            out,
        } => infer(config, checkpoint, dialogues, ontology, *history, out, w)?,
        Command::Sweep {
            data,
            init,
            from_scratch,
            grid,
            out,
        } => sweep(config, data, init.as_deref(), *from_scratch, grid, out, w)?,
    };
    let config_json = serde_json::to_vec(config).map_err(|e| CommandError::Runtime(e.to_string()))?;
    let manifest = ExperimentManifest {
        command: command.clone(),
        config: config.clone(),
        seed: config.synth.seed,
        revision: revision(),
        config_digest: digest(&config_json),
        outputs,
        warnings,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Runs a manifest's command again, optionally into another directory.
pub fn rerun(manifest: &Path, out: Option<PathBuf>) -> Result<ExperimentManifest, CommandError> {
    let m = ExperimentManifest::load(manifest)?;
    let command = match out {
        Some(dir) => m.command.with_out(dir),
        None => m.command,
    };
    run(&command, &m.config)
}

// ----- data directory layout -----

fn split_path(dir: &Path, split: &str, domain: &str) -> PathBuf {
    dir.join(split).join(format!("{domain}.json"))
}

fn asr_corpus(asr: &[(String, crate::tensor::Tensor)]) -> Corpus {
    let dialogues = asr
        .iter()
        .enumerate()
        .map(|(i, (t, f))| Dialogue {
            id: format!("asr-{i:05}"),
            domain_tags: Default::default(),
            turns: vec![Turn::user(t.clone(), DialogueState::new()).with_frames(f.clone())],
        })
        .collect();
    Corpus::new("asr", Modality::Spoken, dialogues)
}

/// Writes every corpus of the benchmark, the plain-text LM corpus and the
/// ontology under `dir`. Returns the files written, relative to `dir`.
pub fn save_corpora(corpora: &SynthCorpora, lm_texts: &[(String, String)], dir: &Path) -> Result<Vec<String>, CommandError> {
    let mut files = Vec::new();
    let mut save = |corpus: &Corpus, rel: PathBuf| -> Result<(), CommandError> {
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        save_corpus(corpus, &path)?;
        files.push(rel.display().to_string());
        Ok(())
    };
    save(&corpora.speech_train, SPEECH_FILE.into())?;
    for (d, c) in &corpora.text_train {
        save(c, Path::new("text").join(format!("{d}.json")))?;
    }
    for (d, c) in &corpora.val {
        save(c, Path::new("val").join(format!("{d}.json")))?;
    }
    for (d, c) in &corpora.test {
        save(c, Path::new("test").join(format!("{d}.json")))?;
    }
    save(&asr_corpus(&corpora.asr), ASR_FILE.into())?;
    let lm_path = dir.join(LM_FILE);
    let mut lm = String::new();
    for pair in lm_texts {
        let line = serde_json::to_string(pair).map_err(|e| CommandError::Runtime(e.to_string()))?;
        lm.push_str(&line);
        lm.push('\n');
    }
    fs::write(&lm_path, lm).map_err(io_err(&lm_path))?;
    write_json(&dir.join(ONTOLOGY_FILE), &corpora.ontology)?;
    let mut all: Vec<String> = files
        .into_iter()
        .flat_map(|f| {
            let side = sidecar_path(Path::new(&f)).display().to_string();
            [f, side]
        })
        .filter(|f| dir.join(f).exists())
        .collect();
    all.extend([LM_FILE.to_owned(), ONTOLOGY_FILE.to_owned()]);
    Ok(all)
}

/// Corpora read back from a data directory.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub corpora: SynthCorpora,
    pub lm_texts: Vec<(String, String)>,
    /// `(file, dialogue id, reason)` for every dialogue that failed to load.
    pub skipped: Vec<(String, String, String)>,
}

fn domains_in(dir: &Path) -> Result<Vec<String>, CommandError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(read_err(dir))? {
        let p = entry.map_err(read_err(dir))?.path();
        if p.extension().and_then(|e| e.to_str()) == Some("json") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                names.push(stem.to_owned());
            }
        }
    }
    names.sort();
    Ok(names)
}

pub fn load_corpora(dir: &Path) -> Result<LoadedData, CommandError> {
    let mut skipped = Vec::new();
    let mut load = |path: PathBuf| -> Result<Corpus, CommandError> {
        let l = load_corpus(&path)?;
        for (id, reason) in l.skipped {
            skipped.push((path.display().to_string(), id, reason));
        }
        Ok(l.corpus)
    };
    let speech_train = load(dir.join(SPEECH_FILE))?;
    let mut split = |name: &str| -> Result<BTreeMap<String, Corpus>, CommandError> {
        domains_in(&dir.join(name))?
            .into_iter()
            .map(|d| Ok((d.clone(), load(split_path(dir, name, &d))?)))
            .collect()
    };
    let text_train = split("text")?;
    let val = split("val")?;
    let test = split("test")?;
    let asr = load(dir.join(ASR_FILE))?
        .dialogues
        .into_iter()
        .filter_map(|d| {
            let t = d.turns.into_iter().next()?;
            Some((t.transcript, t.frames?))
        })
        .collect();
    let ontology = load_ontology(&dir.join(ONTOLOGY_FILE))?;
    let lm_path = dir.join(LM_FILE);
    let lm_texts = fs::read_to_string(&lm_path)
        .map_err(read_err(&lm_path))?
        .lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CommandError::Data(format!("{} line {}: {e}", lm_path.display(), i + 1)))
        })
        .collect::<Result<Vec<(String, String)>, _>>()?;
    Ok(LoadedData {
        corpora: SynthCorpora {
            speech_train,
            text_train,
            val,
            test,
            asr,
            ontology,
        },
        lm_texts,
        skipped,
    })
}

pub fn load_ontology(path: &Path) -> Result<Ontology, CommandError> {
    let text = fs::read_to_string(path).map_err(read_err(path))?;
    serde_json::from_str(&text).map_err(|e| CommandError::Data(format!("{}: {e}", path.display())))
}

// ----- commands -----

fn gen_data(cfg: &BenchmarkConfig, out: &Path) -> Result<Vec<String>, CommandError> {
    let corpora = generate_corpus(&cfg.synth)?;
    let lm = lm_corpus(&cfg.synth, cfg.n_lm_examples, cfg.synth.seed ^ 0x6c6d)?;
    save_corpora(&corpora, &lm, out)
}


fn note_skipped(skipped: impl IntoIterator<Item = (String, String, String)>, warnings: &mut Vec<String>) {
    for (file, id, reason) in skipped {
        warnings.push(format!("{file}: skipped dialogue {id}: {reason}"));
    }
}

fn load_noting(data: &Path, warnings: &mut Vec<String>) -> Result<LoadedData, CommandError> {
    let loaded = load_corpora(data)?;
    note_skipped(loaded.skipped.iter().cloned(), warnings);
    Ok(loaded)
}

fn load_corpus_noting(path: &Path, warnings: &mut Vec<String>) -> Result<Corpus, CommandError> {
    let l = load_corpus(path)?;
    let file = path.display().to_string();
    note_skipped(l.skipped.into_iter().map(|(id, r)| (file.clone(), id, r)), warnings);
    Ok(l.corpus)
}

fn pretrain_asr(cfg: &BenchmarkConfig, data: &Path, out: &Path, warnings: &mut Vec<String>) -> Result<Vec<String>, CommandError> {
    let loaded = load_noting(data, warnings)?;
    let found = experiment::pretrain_foundation(cfg, loaded.corpora, &loaded.lm_texts)?;
    checkpoint::save(
        &found.model,
        &out.join(CHECKPOINT_DIR),
        serde_json::json!({"phase": "asr", "steps": found.asr_log.state.step}),
    )?;
    write_metrics(&out.join("lm_metrics.jsonl"), &found.lm_log)?;
    write_metrics(&out.join("asr_metrics.jsonl"), &found.asr_log)?;
    Ok(vec![
        CHECKPOINT_DIR.into(),
        "lm_metrics.jsonl".into(),
        "asr_metrics.jsonl".into(),
    ])
}

/// Phase-1 model from `init`, or a fresh one when the waiver is set.
fn initial_model(
    cfg: &BenchmarkConfig,
    loaded: &LoadedData,
    init: Option<&Path>,
    from_scratch: bool,
) -> Result<ComposedModel, CommandError> {
    match init {
        Some(dir) => {
            if !dir.join(checkpoint::MANIFEST).exists() {
                return Err(CommandError::Data(format!("no phase-1 checkpoint at {}", dir.display())));
            }
            Ok(checkpoint::load(dir)?.0)
        }
        None if from_scratch => {
            let c = &loaded.corpora;
            let mut texts = crate::data::tokenizer_corpus(std::iter::once(&c.speech_train).chain(c.text_train.values()), &[]);
            texts.extend(loaded.lm_texts.iter().flat_map(|(h, t)| [h.clone(), t.clone()]));
            let tok = Tokenizer::train(texts.iter().map(String::as_str), cfg.vocab_size);
            Ok(ComposedModel::new(cfg.model.clone(), tok)?)
        }
        None => Err(CommandError::Config(
            "a phase-1 checkpoint is required; pass --from-scratch to train without one".into(),
        )),
    }
}

fn foundation(cfg: &BenchmarkConfig, loaded: LoadedData, model: ComposedModel) -> Foundation {
    Foundation {
        config: cfg.clone(),
        corpora: loaded.corpora,
        model,
        lm_log: TrainOutcome::default(),
        asr_log: TrainOutcome::default(),
    }
}

fn train_dst(
    cfg: &BenchmarkConfig,
    data: &Path,
    init: Option<&Path>,
    options: DstOptions,
    out: &Path,
    warnings: &mut Vec<String>,
) -> Result<Vec<String>, CommandError> {
    let loaded = load_noting(data, warnings)?;
    let model = initial_model(cfg, &loaded, init, options.from_scratch)?;
    let found = foundation(cfg, loaded, model);
    let dst = experiment::dst_data(&found);
    let r = experiment::run_variant(&found, &dst, options.variant)?;
    write_run(&r, out)
}

fn write_run(r: &RunResult, out: &Path) -> Result<Vec<String>, CommandError> {
    checkpoint::save(
        &r.model,
        &out.join(CHECKPOINT_DIR),
        serde_json::json!({
            "phase": "dst",
            "variant": r.variant,
            "steps": r.outcome.state.step,
            "best": r.outcome.state.best_checkpoint_ref,
            "best_val_jga": r.outcome.state.best_val_jga,
        }),
    )?;
    write_metrics(&out.join("metrics.jsonl"), &r.outcome)?;
    write_json(&out.join("test_report.json"), &r.test)?;
    Ok(vec![CHECKPOINT_DIR.into(), "metrics.jsonl".into(), "test_report.json".into()])
}

/// `(domain, slot, value)` triples of a corpus that the ontology does not list.
pub fn ontology_mismatches(corpus: &Corpus, ontology: &Ontology) -> Vec<(String, String, String)> {
    let mut out = std::collections::BTreeSet::new();
    for d in &corpus.dialogues {
        for (_, t) in d.user_turns() {
            if let Some(s) = &t.gold_state {
                for (dom, slot, v) in s.triples() {
                    if !ontology.contains(dom, slot, v) {
                        out.insert((dom.to_owned(), slot.to_owned(), v.to_owned()));
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

fn evaluate(
    cfg: &BenchmarkConfig,
    checkpoint_dir: &Path,
    corpus_path: &Path,
    ontology_path: &Path,
    history: HistorySource,
    out: &Path,
    warnings: &mut Vec<String>,
) -> Result<Vec<String>, CommandError> {
    let (model, _) = checkpoint::load(checkpoint_dir)?;
    let corpus = load_corpus_noting(corpus_path, warnings)?;
    if corpus.dialogues.is_empty() {
        return Err(CommandError::Data(format!("{} holds no dialogues", corpus_path.display())));
    }
    let ontology = load_ontology(ontology_path)?;
    for (d, slot, v) in ontology_mismatches(&corpus, &ontology) {
        warnings.push(format!("gold value `{v}` of {d}: {slot} is not in the ontology"));
    }
    let report = inference::evaluate_corpus(&model, &corpus, &cfg.gen, &ontology, history, cfg.dst.exec)?;
    write_json(&out.join("report.json"), &report)?;
    let table = out.join("report.txt");
    fs::write(&table, report.to_table()).map_err(io_err(&table))?;
    Ok(vec!["report.json".into(), "report.txt".into()])
}

/// One line of `infer` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferRecord {
    pub dialogue: String,
    /// Index of the turn within the dialogue, agent turns included.
    pub turn: usize,
    pub raw: String,
    pub transcript: String,
    pub state: DialogueState,
    /// `ok`, or the parse failure reason.
    pub parse_status: String,
}

fn infer(
    cfg: &BenchmarkConfig,
    checkpoint_dir: &Path,
    dialogues: &Path,
    ontology_path: &Path,
    history: HistorySource,
    out: &Path,
    warnings: &mut Vec<String>,
) -> Result<Vec<String>, CommandError> {
    let (model, _) = checkpoint::load(checkpoint_dir)?;
    let corpus = load_corpus_noting(dialogues, warnings)?;
    let ontology = load_ontology(ontology_path)?;
    let outs = inference::predict_corpus(&model, &corpus, &cfg.gen, &ontology, history, cfg.dst.exec)?;
    let path = out.join("predictions.jsonl");
    let mut w = BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
    for (d, o) in corpus.dialogues.iter().zip(outs) {
        for ((turn, _), t) in d.user_turns().zip(o) {
            let rec = InferRecord {
                dialogue: d.id.clone(),
                turn,
                raw: t.raw.0,
                transcript: t.transcript,
                state: t.state,
                parse_status: t.failure.map_or_else(|| "ok".to_owned(), failure_name),
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| CommandError::Runtime(e.to_string()))?;
            w.write_all(b"\n").map_err(io_err(&path))?;
        }
    }
    w.flush().map_err(io_err(&path))?;
    Ok(vec!["predictions.jsonl".into()])
}

fn failure_name(f: crate::codec::FailureReason) -> String {
    serde_json::to_value(f)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_else(|| format!("{f:?}"))
}

/// One row of the sweep summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub source_jga: f64,
    pub target_jga: f64,
}

fn lambda_dir(lambda: f64) -> String {
    format!("lambda-{lambda}")
}

fn sweep(
    cfg: &BenchmarkConfig,
    data: &Path,
    init: Option<&Path>,
    from_scratch: bool,
    grid: &[f64],
    out: &Path,
    warnings: &mut Vec<String>,
) -> Result<Vec<String>, CommandError> {
    if grid.is_empty() {
        return Err(CommandError::Config("the lambda grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(CommandError::Config(format!("invalid lambda {bad}")));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let loaded = load_noting(data, warnings)?;
    let model = initial_model(cfg, &loaded, init, from_scratch)?;
    let found = foundation(cfg, loaded, model);
    let dst = experiment::dst_data(&found);
    let mut rows = Vec::new();
    let mut failures = BTreeMap::new();
    let mut files = Vec::new();
    for &lambda in &grid {
        let sub = out.join(lambda_dir(lambda));
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        match experiment::run_variant(&found, &dst, Variant::joint(lambda)) {
            Ok(r) => {
                write_metrics(&sub.join("metrics.jsonl"), &r.outcome)?;
                write_json(&sub.join("test_report.json"), &r.test)?;
                files.push(format!("{}/metrics.jsonl", lambda_dir(lambda)));
                files.push(format!("{}/test_report.json", lambda_dir(lambda)));
                rows.push(SweepRow {
                    lambda,
                    source_jga: r.source_jga(cfg),
                    target_jga: r.target_jga(cfg),
                });
            }
            Err(e) => {
                failures.insert(lambda.to_string(), e.to_string());
            }
        }
    }
    let csv = out.join("sweep.csv");
    fs::write(&csv, sweep_csv(&rows)).map_err(io_err(&csv))?;
    let svg = out.join("sweep.svg");
    fs::write(&svg, sweep_svg(&rows)).map_err(io_err(&svg))?;
    files.extend(["sweep.csv".to_owned(), "sweep.svg".to_owned()]);
    if !failures.is_empty() {
        write_json(&out.join("failures.json"), &failures)?;
        files.push("failures.json".into());
    }
    Ok(files)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("numeric rows always serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is UTF-8")
}

/// JGA (%) against text-loss weight on a log axis; λ = 0 sits one decade
/// left of the smallest positive weight.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let positive: Vec<f64> = rows.iter().map(|r| r.lambda).filter(|l| *l > 0.0).collect();
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = positive.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo.log10() - 1.0, hi.log10().max(lo.log10())) } else { (-1.0, 0.0) };
    let span = (hi - lo).max(1e-9);
    let x_of = |l: f64| {
        let v = if l > 0.0 { l.log10() } else { lo };
        m + (v - lo) / span * (w - 2.0 * m)
    };
    let y_of = |jga: f64| h - m - jga * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    for pct in [0, 25, 50, 75, 100] {
        let y = y_of(pct as f64 / 100.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{pct}</text>"#, m - 6.0, y + 4.0);
    }
    for r in rows {
        let x = x_of(r.lambda);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, h - m + 16.0, r.lambda);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">Text loss weight</text>"#, w / 2.0, h - 16.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">JGA (%)</text>"#, h / 2.0, h / 2.0);
    for (name, color, get) in [
        ("source", "#1f77b4", (|r: &SweepRow| r.source_jga) as fn(&SweepRow) -> f64),
        ("target", "#d62728", |r: &SweepRow| r.target_jga),
    ] {
        let pts: Vec<String> = rows.iter().map(|r| format!("{:.1},{:.1}", x_of(r.lambda), y_of(get(r)))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted above");
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
        let ly = if name == "source" { m - 30.0 } else { m - 14.0 };
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#, w - m - 60.0);
    }
    s.push_str("</svg>\n");
    s
}
