//! Dialogue files: a JSON document plus a binary sidecar holding the frames.
//!
//! ```text
//! {"version":1,"name":..,"modality":..,"dialogues":[
//!   {"id":..,"domains":[..],"turns":[{"speaker":"user","transcript":..,"frames_ref":0,"state":{..}}]}]}
//! ```
//!
//! `frames_ref` is a byte offset into the sidecar. Each blob there starts with
//! a 16-byte little-endian header: magic `DSTF`, dtype code (1 = f32,
//! 2 = f64), row count, column count; the row-major values follow.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, DataError, Modality};
use crate::state::{Dialogue, DialogueState, Speaker, Turn};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DSTF";
const DTYPE_F32: u32 = 1;
const DTYPE_F64: u32 = 2;

#[derive(Serialize, Deserialize)]
struct FileTurn {
    speaker: Speaker,
    transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames_ref: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<DialogueState>,
}

#[derive(Serialize, Deserialize)]
struct FileDialogue {
    id: String,
    domains: Vec<String>,
    turns: Vec<FileTurn>,
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct File {
    version: u32,
    name: String,
    modality: Modality,
    dialogues: Vec<FileDialogue>,
}

/// Path of the frame sidecar that belongs to a dialogue file.
pub fn sidecar_path(json: &Path) -> PathBuf {
    let mut p = json.as_os_str().to_owned();
    p.push(".frames");
    PathBuf::from(p)
}

pub fn encode_frames(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn decode_frames(blob: &[u8], offset: u64) -> Result<Tensor, DataError> {
    let err = |reason: &str| DataError::Frames {
        offset,
        reason: reason.into(),
    };
    let start = usize::try_from(offset).map_err(|_| err("offset out of range"))?;
    let header = blob.get(start..start.saturating_add(16)).ok_or_else(|| err("header past end of sidecar"))?;
    if &header[..4] != MAGIC {
        return Err(err("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (dtype, rows, cols) = (word(4) as u32, word(8), word(12));
    let width = match dtype {
        DTYPE_F32 => 4,
        DTYPE_F64 => 8,
        _ => return Err(err("unknown dtype code")),
    };
    let n = rows.checked_mul(cols).ok_or_else(|| err("shape overflow"))?;
    let body_start = start + 16;
    let body = blob
        .get(body_start..body_start.saturating_add(n * width))
        .ok_or_else(|| err("data past end of sidecar"))?;
    let data: Vec<f64> = if dtype == DTYPE_F64 {
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    } else {
        body.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    };
    Ok(Tensor::from_vec(rows, cols, data))
}

/// Writes `path` and, if any turn has frames, its sidecar.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), DataError> {
    let mut blob = Vec::new();
    let dialogues = corpus
        .dialogues
        .iter()
        .map(|d| FileDialogue {
            id: d.id.clone(),
            domains: d.domain_tags.iter().cloned().collect(),
            turns: d
                .turns
                .iter()
                .map(|t| FileTurn {
                    speaker: t.speaker,
                    transcript: t.transcript.clone(),
                    frames_ref: t.frames.as_ref().map(|f| {
                        let off = blob.len() as u64;
                        encode_frames(f, &mut blob);
                        off
                    }),
                    state: t.gold_state.clone(),
                })
                .collect(),
        })
        .collect();
    let file = File {
        version: FORMAT_VERSION,
        name: corpus.name.clone(),
        modality: corpus.modality,
        dialogues,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, serde_json::to_vec(&file).map_err(|e| DataError::Malformed(e.to_string()))?)?;
    if !blob.is_empty() {
        fs::write(sidecar_path(path), blob)?;
    }
    Ok(())
}

/// A loaded corpus and the dialogues that were dropped.
#[derive(Debug)]
pub struct Loaded {
    pub corpus: Corpus,
    /// `(dialogue id, reason)` for each skipped dialogue.
    pub skipped: Vec<(String, String)>,
}

/// Reads a dialogue file. A file that is not valid JSON or has another
/// version is an error; dialogues that break an invariant are skipped and
/// reported.
pub fn load_corpus(path: &Path) -> Result<Loaded, DataError> {
    let bytes = fs::read(path)?;
    let header: FileHeader = serde_json::from_slice(&bytes).map_err(|e| DataError::Malformed(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(DataError::Version {
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    let file: File = serde_json::from_slice(&bytes).map_err(|e| DataError::Malformed(e.to_string()))?;
    let needs_blob = file
        .dialogues
        .iter()
        .any(|d| d.turns.iter().any(|t| t.frames_ref.is_some()));
    let blob = if needs_blob {
        fs::read(sidecar_path(path))?
    } else {
        Vec::new()
    };
    let mut corpus = Corpus::new(file.name, file.modality, Vec::with_capacity(file.dialogues.len()));
    let mut skipped = Vec::new();
    for fd in file.dialogues {
        let id = fd.id.clone();
        match convert(fd, &blob).and_then(|d| corpus.check(&d).map(|_| d)) {
            Ok(d) => corpus.dialogues.push(d),
            Err(e) => skipped.push((id, e.to_string())),
        }
    }
    Ok(Loaded { corpus, skipped })
}

fn convert(fd: FileDialogue, blob: &[u8]) -> Result<Dialogue, DataError> {
    let turns = fd
        .turns
        .into_iter()
        .map(|t| {
            Ok(Turn {
                speaker: t.speaker,
                transcript: t.transcript,
                frames: t.frames_ref.map(|off| decode_frames(blob, off)).transpose()?,
                gold_state: t.state,
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok(Dialogue {
        id: fd.id,
        domain_tags: fd.domains.into_iter().collect(),
        turns,
    })
}
