//! Configuration and end-to-end orchestration shared by the CLI and tests.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{
    acoustic_detect, acoustic_text_detect, AcousticDetectorParams, AcousticTextParams, BaselineConfig, StateMachineConfig,
};
use crate::corpus::{generate_corpus, Corpus, CorpusSpec};
use crate::decoding::{asr_decode, stream_decode, DecisionConfig, DetectorOutput};
use crate::error::{Error, Result};
use crate::eval::{corpus_wer, format_table, report, write_det_csv, DetPoint, DetectorReport, ScoredUtterance};
use crate::labeling::{augment_utterance, SlotGrammar};
use crate::training::TrainConfig;
use crate::transducer::{ModelConfig, TransducerParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_intended: usize,
    pub n_unintended: usize,
    pub n_eval_intended: usize,
    pub n_eval_unintended: usize,
    pub feature_dim: usize,
    pub frame_period_ms: f64,
    pub noise_sigma: f64,
    pub silence_insertion_prob: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let spec = CorpusSpec::default();
        CorpusConfig {
            seed: spec.seed,
            n_intended: spec.n_intended,
            n_unintended: spec.n_unintended,
            n_eval_intended: 500,
            n_eval_unintended: 500,
            feature_dim: spec.feature_dim,
            frame_period_ms: spec.frame_period_ms,
            noise_sigma: spec.noise_sigma,
            silence_insertion_prob: spec.silence_insertion_prob,
        }
    }
}

impl CorpusConfig {
    pub fn train_spec(&self) -> CorpusSpec {
        CorpusSpec {
            seed: self.seed,
            n_intended: self.n_intended,
            n_unintended: self.n_unintended,
            feature_dim: self.feature_dim,
            frame_period_ms: self.frame_period_ms,
            noise_sigma: self.noise_sigma,
            silence_insertion_prob: self.silence_insertion_prob,
            id_prefix: "train".into(),
            stream: 0,
            ..Default::default()
        }
    }

    /// Same token identities as the training split, independent utterance draws.
    pub fn eval_spec(&self) -> CorpusSpec {
        CorpusSpec {
            n_intended: self.n_eval_intended,
            n_unintended: self.n_eval_unintended,
            id_prefix: "eval".into(),
            stream: 1,
            ..self.train_spec()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fixed operating threshold for latency and per-domain FR; each model's EER threshold when absent.
    pub threshold: Option<f64>,
    /// Number of eval utterances decoded for WER; 0 uses all of them.
    pub wer_utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub decision: DecisionConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.train_spec().validate()?;
        self.train.validate()?;
        self.baseline.validate()?;
        self.decision.validate()
    }

    /// Applies `section.field=value` overrides. Values are parsed as JSON and
    /// fall back to plain strings; the path must name an existing field.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        let mut tree = serde_json::to_value(&*self).expect("config serialises");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::arg(format!("override {o:?} is not key=value")))?;
            let mut node = &mut tree;
            for part in key.split('.') {
                node = node
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| Error::arg(format!("unknown config key {key:?}")))?;
            }
            *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        }
        *self = serde_json::from_value(tree).map_err(|e| Error::arg(format!("invalid override: {e}")))?;
        Ok(())
    }

    /// Model shape with the corpus-dependent fields filled in.
    pub fn model_for(&self, corpus: &Corpus) -> ModelConfig {
        ModelConfig {
            vocab_size: corpus.vocab.asr_size(),
            feature_dim: self.corpus.feature_dim,
            ..self.model.clone()
        }
    }
}

/// Attaches IQ-augmented targets to every utterance.
pub fn augment_corpus(corpus: &mut Corpus) -> Result<()> {
    let grammar = SlotGrammar::bundled(&corpus.vocab)?;
    let vocab = &corpus.vocab;
    let targets: Vec<Vec<_>> = corpus
        .utterances
        .par_iter()
        .map(|u| Ok(augment_utterance(u, &grammar, vocab)?.ids()))
        .collect::<Result<_>>()?;
    for (u, t) in corpus.utterances.iter_mut().zip(targets) {
        u.augmented_targets = Some(t);
    }
    Ok(())
}

/// Generated and augmented `(train, eval)` splits.
pub fn build_corpora(cfg: &CorpusConfig) -> Result<(Corpus, Corpus)> {
    let mut train = generate_corpus(&cfg.train_spec())?;
    let mut eval = generate_corpus(&cfg.eval_spec())?;
    augment_corpus(&mut train)?;
    augment_corpus(&mut eval)?;
    Ok((train, eval))
}

/// A trained detector ready to stream.
#[derive(Clone, Copy)]
pub enum Detector<'a> {
    E2e(&'a TransducerParams),
    Acoustic(&'a AcousticDetectorParams, StateMachineConfig),
    AcousticText {
        params: &'a AcousticTextParams,
        asr: &'a TransducerParams,
        eval_stride: usize,
    },
}

impl Detector<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Detector::E2e(_) => "e2e",
            Detector::Acoustic(..) => "acoustic",
            Detector::AcousticText { .. } => "acoustic_text",
        }
    }

    pub fn detect(&self, features: &crate::numkernel::Matrix, decision: &DecisionConfig, frame_period_ms: f64) -> Result<DetectorOutput> {
        match *self {
            Detector::E2e(p) => stream_decode(p, features, decision, frame_period_ms),
            Detector::Acoustic(p, sm) => acoustic_detect(features, p, &sm, frame_period_ms),
            Detector::AcousticText { params, asr, eval_stride } => {
                acoustic_text_detect(features, params, asr, decision, eval_stride, frame_period_ms)
            }
        }
    }
}

/// Streams a detector over every utterance of a corpus.
pub fn score_corpus(
    detector: Detector<'_>,
    corpus: &Corpus,
    decision: &DecisionConfig,
    frame_period_ms: f64,
) -> Result<Vec<ScoredUtterance>> {
    corpus
        .utterances
        .par_iter()
        .map(|u| {
            let out = detector.detect(&u.features, decision, frame_period_ms)?;
            Ok(ScoredUtterance::from_output(
                &u.id,
                &u.domain,
                u.intent,
                u.start_of_speech_ms(frame_period_ms),
                &out,
            ))
        })
        .collect()
}

/// Corpus WER of the recognizer over the first `limit` utterances (all when 0).
pub fn asr_wer(params: &TransducerParams, corpus: &Corpus, decision: &DecisionConfig, limit: usize) -> Result<f64> {
    let n = if limit == 0 {
        corpus.utterances.len()
    } else {
        limit.min(corpus.utterances.len())
    };
    let pairs: Vec<(Vec<_>, Vec<_>)> = corpus.utterances[..n]
        .par_iter()
        .map(|u| Ok((asr_decode(params, &u.features, decision)?.label_history, u.transcript.clone())))
        .collect::<Result<_>>()?;
    corpus_wer(&pairs)
}

/// Report and DET curve for one detector.
pub fn evaluate_detector(
    detector: Detector<'_>,
    corpus: &Corpus,
    cfg: &Config,
    wer: Option<f64>,
) -> Result<(DetectorReport, Vec<DetPoint>)> {
    let scored = score_corpus(detector, corpus, &cfg.decision, cfg.corpus.frame_period_ms)?;
    report(detector.name(), &scored, cfg.eval.threshold, wer)
}

/// Writes `summary.json`, `summary.txt` and one `det_<model>.csv` per detector.
pub fn write_reports(out: &Path, results: &[(DetectorReport, Vec<DetPoint>)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for (r, det) in results {
        let path = out.join(format!("det_{}.csv", r.model));
        let mut buf = Vec::new();
        write_det_csv(&mut buf, det).expect("in-memory write");
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let reports: Vec<&DetectorReport> = results.iter().map(|(r, _)| r).collect();
    let json_path = out.join("summary.json");
    let json = serde_json::to_string_pretty(&reports).expect("reports serialise");
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    let txt_path = out.join("summary.txt");
    let owned: Vec<DetectorReport> = reports.into_iter().cloned().collect();
    fs::write(&txt_path, format_table(&owned)).map_err(|e| Error::io(&txt_path, e))?;
    written.extend([json_path, txt_path]);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_follow_dotted_paths() {
        let mut c = Config::default();
        c.apply_overrides(&["decision.beam_size=8", "train.stage2_learning_rate=0.01", "corpus.seed=7"])
            .unwrap();
        assert_eq!(c.decision.beam_size, 8);
        assert_eq!(c.train.stage2_learning_rate, Some(0.01));
        assert_eq!(c.corpus.seed, 7);
        assert!(c.apply_overrides(&["decision.beam=8"]).is_err());
        assert!(c.apply_overrides(&["decision.beam_size"]).is_err());
        assert!(c.apply_overrides(&["decision.beam_size=wide"]).is_err());
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_sections() {
        let c = Config::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<Config>(&s).unwrap(), c);
        assert_eq!(serde_json::from_str::<Config>("{}").unwrap(), c);
        assert!(serde_json::from_str::<Config>(r#"{"decoder": {}}"#).is_err());
    }

    #[test]
    fn splits_share_vocabulary_but_not_utterances() {
        let cfg = CorpusConfig {
            n_intended: 6,
            n_unintended: 6,
            n_eval_intended: 3,
            n_eval_unintended: 3,
            ..Default::default()
        };
        let (train, eval) = build_corpora(&cfg).unwrap();
        assert_eq!(train.vocab, eval.vocab);
        assert_eq!((train.utterances.len(), eval.utterances.len()), (12, 6));
        assert!(eval
            .utterances
            .iter()
            .all(|u| u.id.starts_with("eval") && u.augmented_targets.is_some()));
        assert_ne!(train.utterances[0].features, eval.utterances[0].features);
    }
}
