//! On-disk corpus layout:
//!
//! ```text
//! <dir>/vocab.json        ordered token list
//! <dir>/manifest.jsonl    one JSON record per utterance
//! <dir>/features/<id>.iqf "IQF1", u32 frames, u32 dim, frames×dim f32 (all little-endian)
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, TokenId, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::labeling::SlotSpan;
use crate::numkernel::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"IQF1";
const MANIFEST: &str = "manifest.jsonl";
const VOCAB: &str = "vocab.json";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    domain: String,
    intent: String,
    transcript: Vec<String>,
    silence_segments: Vec<(usize, usize)>,
    start_of_speech_frame: usize,
    token_alignment: Vec<(usize, usize)>,
    feature_file: String,
    #[serde(default)]
    slots: Vec<SlotSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    augmented_targets: Option<Vec<String>>,
}

pub fn write_feature_file(path: &Path, features: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + features.data().len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for &v in features.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::format(path, format!("header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, "magic mismatch, expected IQF1"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (frames, dim) = (u32_at(4), u32_at(8));
    let expect = 12 + frames * dim * 4;
    if bytes.len() != expect {
        return Err(Error::format(
            path,
            format!("{frames}x{dim} features need {expect} bytes, file has {}", bytes.len()),
        ));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Matrix::from_vec(frames, dim, data)
}

fn feature_name(id: &str) -> String {
    format!("features/{id}.iqf")
}

/// Writes the corpus and returns the manifest path.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;

    let vocab_path = dir.join(VOCAB);
    let vocab_json = serde_json::to_string_pretty(corpus.vocab.tokens()).expect("string list serialises");
    fs::write(&vocab_path, vocab_json).map_err(|e| Error::io(&vocab_path, e))?;

    let manifest_path = dir.join(MANIFEST);
    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut out = BufWriter::new(file);
    for u in &corpus.utterances {
        let feature_file = feature_name(&u.id);
        write_feature_file(&dir.join(&feature_file), &u.features)?;
        let rec = ManifestRecord {
            id: u.id.clone(),
            domain: u.domain.clone(),
            intent: u.intent.as_str().into(),
            transcript: corpus.vocab.decode(&u.transcript),
            silence_segments: u.silence_segments.clone(),
            start_of_speech_frame: u.start_of_speech_frame,
            token_alignment: u.token_alignment.clone(),
            feature_file,
            slots: u.slots.clone(),
            augmented_targets: u.augmented_targets.as_ref().map(|a| corpus.vocab.decode(a)),
        };
        let line = serde_json::to_string(&rec).expect("record serialises");
        writeln!(out, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tokens: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    Vocabulary::from_tokens(tokens).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let vocab = read_vocabulary(&dir.join(VOCAB))?;
    let manifest_path = dir.join(MANIFEST);
    let file = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut utterances = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |record: String, message: String| Error::Parse {
            path: manifest_path.clone(),
            record,
            message,
        };
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| parse_err(format!("line {}", line_no + 1), e.to_string()))?;
        let intent = rec.intent.parse().map_err(|m| parse_err(rec.id.clone(), m))?;
        let ids = |words: &[String]| -> Result<Vec<TokenId>> {
            words
                .iter()
                .map(|w| vocab.id(w).ok_or_else(|| parse_err(rec.id.clone(), format!("unknown token {w:?}"))))
                .collect()
        };
        let transcript = ids(&rec.transcript)?;
        let augmented_targets = rec.augmented_targets.as_deref().map(ids).transpose()?;
        let features = read_feature_file(&dir.join(&rec.feature_file))?;
        let utt = Utterance {
            id: rec.id,
            domain: rec.domain,
            intent,
            transcript,
            features,
            silence_segments: rec.silence_segments,
            start_of_speech_frame: rec.start_of_speech_frame,
            token_alignment: rec.token_alignment,
            slots: rec.slots,
            augmented_targets,
        };
        utt.check().map_err(|e| parse_err(utt.id.clone(), e.to_string()))?;
        utterances.push(utt);
    }
    Ok(Corpus { vocab, utterances })
}
