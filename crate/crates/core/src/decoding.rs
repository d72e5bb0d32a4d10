//! Streaming beam search over wordpieces with a per-step intended-query posterior.
//!
//! Recognition uses the ASR joint only. After each encoder step the IQ joint
//! scores the top hypothesis, and the `<intended>` probability is compared
//! with a threshold.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{Intent, TokenId};
use crate::error::{Error, Result};
use crate::numkernel::{log_add, log_softmax, softmax, LstmStackStream, Matrix};
use crate::transducer::{JointParams, TransducerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    #[default]
    FirstCrossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionConfig {
    /// A stream is intended once a posterior reaches this value. Values above 1 never trigger.
    pub intended_threshold: f64,
    pub beam_size: usize,
    pub max_symbols_per_step: usize,
    pub decision_mode: DecisionMode,
    /// Report `P(<intended>) / (P(<intended>) + P(<unintended>))` instead of the raw mass.
    pub renormalize_iq: bool,
    /// Score the top hypothesis at every prefix it may have passed through
    /// during a step (back to the shortest previous beam it extends) and keep
    /// the largest `<intended>` mass. Otherwise only its final node is scored.
    pub iq_max_over_step: bool,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            intended_threshold: 0.5,
            beam_size: 4,
            max_symbols_per_step: 4,
            decision_mode: DecisionMode::FirstCrossing,
            renormalize_iq: false,
            iq_max_over_step: true,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::arg("decision.beam_size must be at least 1"));
        }
        if self.max_symbols_per_step == 0 {
            return Err(Error::arg("decision.max_symbols_per_step must be at least 1"));
        }
        if !(self.intended_threshold >= 0.0) {
            return Err(Error::arg("decision.intended_threshold must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub label_history: Vec<TokenId>,
    pub log_prob: f64,
}

impl BeamHypothesis {
    pub fn empty() -> Self {
        BeamHypothesis {
            label_history: Vec::new(),
            log_prob: 0.0,
        }
    }
}

/// Log-probabilities over blank and wordpieces for one hypothesis at the current encoder step.
pub trait StepScorer {
    fn log_probs(&mut self, history: &[TokenId]) -> Vec<f64>;
}

/// Beam order: higher log-probability first, then lexicographically smaller history.
fn beam_order(a: &BeamHypothesis, b: &BeamHypothesis) -> std::cmp::Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.label_history.cmp(&b.label_history))
}

fn merge_into(pool: &mut Vec<BeamHypothesis>, index: &mut HashMap<Vec<TokenId>, usize>, h: BeamHypothesis) {
    match index.get(&h.label_history) {
        Some(&i) => pool[i].log_prob = log_add(pool[i].log_prob, h.log_prob),
        None => {
            index.insert(h.label_history.clone(), pool.len());
            pool.push(h);
        }
    }
}

/// One encoder step of breadth-limited transducer search.
///
/// Each round expands the live hypotheses with blank (which finishes them for
/// this step) and, for the first `max_symbols_per_step` rounds, with every
/// wordpiece. Finished and live candidates compete for `beam_size` slots per
/// round; equal histories are merged by log-addition.
pub fn beam_search_step<S: StepScorer>(beams: &[BeamHypothesis], scorer: &mut S, cfg: &DecisionConfig) -> Vec<BeamHypothesis> {
    let mut live: Vec<BeamHypothesis> = beams.to_vec();
    let mut done: Vec<BeamHypothesis> = Vec::new();
    for round in 0..=cfg.max_symbols_per_step {
        if live.is_empty() {
            break;
        }
        let mut done_pool = done.clone();
        let mut done_index: HashMap<Vec<TokenId>, usize> =
            done_pool.iter().enumerate().map(|(i, h)| (h.label_history.clone(), i)).collect();
        let mut live_pool = Vec::new();
        let mut live_index = HashMap::new();
        for h in &live {
            let lp = scorer.log_probs(&h.label_history);
            merge_into(
                &mut done_pool,
                &mut done_index,
                BeamHypothesis {
                    label_history: h.label_history.clone(),
                    log_prob: h.log_prob + lp[0],
                },
            );
            if round < cfg.max_symbols_per_step {
                for (k, &l) in lp.iter().enumerate().skip(1) {
                    let mut hist = h.label_history.clone();
                    hist.push(k);
                    merge_into(
                        &mut live_pool,
                        &mut live_index,
                        BeamHypothesis {
                            label_history: hist,
                            log_prob: h.log_prob + l,
                        },
                    );
                }
            }
        }
        let mut all: Vec<(bool, BeamHypothesis)> = done_pool
            .into_iter()
            .map(|h| (true, h))
            .chain(live_pool.into_iter().map(|h| (false, h)))
            .collect();
        all.sort_by(|a, b| beam_order(&a.1, &b.1).then(b.0.cmp(&a.0)));
        all.retain(|(_, h)| h.log_prob > f64::NEG_INFINITY);
        all.truncate(cfg.beam_size);
        done = Vec::new();
        live = Vec::new();
        for (finished, h) in all {
            if finished {
                done.push(h);
            } else {
                live.push(h);
            }
        }
    }
    done.sort_by(beam_order);
    done
}

/// Probability of `<intended>` from the IQ joint given one encoder state and a
/// wordpiece history.
pub fn iq_posterior(history: &[TokenId], encoder_state: &[f64], params: &TransducerParams, renormalize: bool) -> Result<f64> {
    let pred = params.predict_context(history)?;
    let logits = crate::transducer::joint_logits(encoder_state, &pred, &params.iq_joint)?;
    Ok(intended_mass(&logits, params.asr_joint.outputs(), renormalize))
}

fn intended_mass(iq_logits: &[f64], intended: TokenId, renormalize: bool) -> f64 {
    if renormalize {
        let pair = softmax(&iq_logits[intended..intended + 2]).expect("two logits");
        pair[0]
    } else {
        softmax(iq_logits).expect("non-empty logits")[intended]
    }
}

struct PredEntry {
    pred: Vec<f64>,
    asr_proj: Vec<f64>,
}

/// Scores hypotheses with the ASR joint at one encoder state, caching
/// prediction-network outputs by context.
struct ModelScorer<'a> {
    params: &'a TransducerParams,
    cache: &'a mut HashMap<Vec<TokenId>, PredEntry>,
    enc_proj: Vec<f64>,
}

fn pred_entry<'c>(params: &TransducerParams, cache: &'c mut HashMap<Vec<TokenId>, PredEntry>, history: &[TokenId]) -> &'c PredEntry {
    let ctx = params.context_ids(history).expect("beam histories hold wordpieces only");
    cache.entry(ctx).or_insert_with_key(|ctx| {
        let pred = params.predict_ids(ctx);
        let asr_proj = params.asr_joint.project_pred(&pred);
        PredEntry { pred, asr_proj }
    })
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&mut self, history: &[TokenId]) -> Vec<f64> {
        let entry = pred_entry(self.params, self.cache, history);
        let logits = self.params.asr_joint.logits_from(&self.enc_proj, &entry.asr_proj);
        log_softmax(&logits).expect("non-empty logits")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionEvent {
    /// 1-based.
    pub encoder_step: usize,
    pub time_ms: f64,
    pub intended_posterior: f64,
    pub crossed: bool,
}

/// Everything a detector reports for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub events: Vec<DecisionEvent>,
    /// Decision statistic per event; the stream is intended from the first
    /// event whose score reaches the threshold.
    pub scores: Vec<f64>,
    pub final_decision: Intent,
    pub decision_time_ms: Option<f64>,
    pub hypothesis: Option<Vec<TokenId>>,
}

impl DetectorOutput {
    /// First-crossing decision over the given events and scores.
    pub fn from_scores(events: Vec<DecisionEvent>, scores: Vec<f64>, threshold: f64, hypothesis: Option<Vec<TokenId>>) -> Self {
        let hit = scores.iter().position(|&s| s >= threshold);
        DetectorOutput {
            final_decision: if hit.is_some() { Intent::Intended } else { Intent::Unintended },
            decision_time_ms: hit.map(|i| events[i].time_ms),
            events,
            scores,
            hypothesis,
        }
    }

    pub fn max_score(&self) -> f64 {
        self.scores.iter().copied().fold(0.0, f64::max)
    }
}

/// Incremental decoder for one stream.
pub struct DecodeSession<'a> {
    params: &'a TransducerParams,
    cfg: DecisionConfig,
    step_ms: f64,
    stream: LstmStackStream<'a>,
    beams: Vec<BeamHypothesis>,
    cache: HashMap<Vec<TokenId>, PredEntry>,
    events: Vec<DecisionEvent>,
    with_iq: bool,
}

impl<'a> DecodeSession<'a> {
    /// `with_iq = false` runs recognition only.
    pub fn new(params: &'a TransducerParams, cfg: &DecisionConfig, frame_period_ms: f64, with_iq: bool) -> Result<Self> {
        cfg.validate()?;
        let factor = params.encoder.reduction.map_or(1, |(_, f)| f);
        Ok(DecodeSession {
            params,
            cfg: cfg.clone(),
            step_ms: frame_period_ms * factor as f64,
            stream: params.encoder.stream(),
            beams: vec![BeamHypothesis::empty()],
            cache: HashMap::new(),
            events: Vec::new(),
            with_iq,
        })
    }

    /// Feeds one feature frame; returns the decision event if an encoder step completed.
    pub fn push_frame(&mut self, frame: &[f64]) -> Result<Option<DecisionEvent>> {
        if frame.len() != self.params.encoder.input_dim() {
            return Err(Error::shape(format!(
                "frame has {} features, model expects {}",
                frame.len(),
                self.params.encoder.input_dim()
            )));
        }
        Ok(self.stream.push(frame).map(|enc| self.advance(&enc)))
    }

    /// Flushes a partial time-reduction group at end of input.
    pub fn finish(&mut self) -> Option<DecisionEvent> {
        self.stream.finish().map(|enc| self.advance(&enc))
    }

    fn advance(&mut self, enc: &[f64]) -> DecisionEvent {
        let enc_proj = self.params.asr_joint.project_enc(enc);
        let mut scorer = ModelScorer {
            params: self.params,
            cache: &mut self.cache,
            enc_proj,
        };
        let next = beam_search_step(&self.beams, &mut scorer, &self.cfg);
        let posterior = if self.with_iq {
            let top = &next[0].label_history;
            let from = if self.cfg.iq_max_over_step {
                self.beams
                    .iter()
                    .filter(|b| top.starts_with(&b.label_history))
                    .map(|b| b.label_history.len())
                    .min()
                    .unwrap_or(top.len())
            } else {
                top.len()
            };
            let iq: &JointParams = &self.params.iq_joint;
            let enc_proj = iq.project_enc(enc);
            (from..=top.len())
                .map(|j| {
                    let entry = pred_entry(self.params, &mut self.cache, &top[..j]);
                    let logits = iq.logits_from(&enc_proj, &iq.project_pred(&entry.pred));
                    intended_mass(&logits, self.params.asr_joint.outputs(), self.cfg.renormalize_iq)
                })
                .fold(0.0, f64::max)
        } else {
            0.0
        };
        self.beams = next;
        let step = self.events.len() + 1;
        let event = DecisionEvent {
            encoder_step: step,
            time_ms: step as f64 * self.step_ms,
            intended_posterior: posterior,
            crossed: posterior >= self.cfg.intended_threshold,
        };
        self.events.push(event);
        event
    }

    pub fn top(&self) -> &BeamHypothesis {
        &self.beams[0]
    }

    pub fn beams(&self) -> &[BeamHypothesis] {
        &self.beams
    }

    pub fn events(&self) -> &[DecisionEvent] {
        &self.events
    }

    pub fn into_output(self) -> DetectorOutput {
        let scores = self.events.iter().map(|e| e.intended_posterior).collect();
        let hyp = self.beams[0].label_history.clone();
        DetectorOutput::from_scores(self.events, scores, self.cfg.intended_threshold, Some(hyp))
    }
}

/// Decodes a whole feature sequence frame by frame.
pub fn stream_decode(params: &TransducerParams, features: &Matrix, cfg: &DecisionConfig, frame_period_ms: f64) -> Result<DetectorOutput> {
    run_session(params, features, cfg, frame_period_ms, true)
}

/// Recognition only: the top wordpiece hypothesis and its log-probability.
pub fn asr_decode(params: &TransducerParams, features: &Matrix, cfg: &DecisionConfig) -> Result<BeamHypothesis> {
    let mut s = DecodeSession::new(params, cfg, 1.0, false)?;
    feed(&mut s, features)?;
    Ok(s.top().clone())
}

fn feed(s: &mut DecodeSession<'_>, features: &Matrix) -> Result<()> {
    if features.rows() == 0 {
        return Err(Error::arg("empty feature sequence"));
    }
    for r in 0..features.rows() {
        s.push_frame(features.row(r))?;
    }
    s.finish();
    Ok(())
}

fn run_session(
    params: &TransducerParams,
    features: &Matrix,
    cfg: &DecisionConfig,
    frame_period_ms: f64,
    with_iq: bool,
) -> Result<DetectorOutput> {
    let mut s = DecodeSession::new(params, cfg, frame_period_ms, with_iq)?;
    feed(&mut s, features)?;
    Ok(s.into_output())
}

/// Writes one JSON line per event and a closing summary line.
pub fn write_trace<W: Write>(
    out: &mut W,
    detector: &str,
    utterance_id: &str,
    output: &DetectorOutput,
    render: impl Fn(&[TokenId]) -> String,
) -> std::io::Result<()> {
    for (e, score) in output.events.iter().zip(&output.scores) {
        let line = json!({
            "detector": detector,
            "utterance_id": utterance_id,
            "encoder_step": e.encoder_step,
            "time_ms": e.time_ms,
            "intended_posterior": e.intended_posterior,
            "score": score,
            "crossed": e.crossed,
        });
        writeln!(out, "{line}")?;
    }
    let summary = json!({
        "detector": detector,
        "utterance_id": utterance_id,
        "hypothesis": output.hypothesis.as_deref().map(&render),
        "final_decision": output.final_decision.as_str(),
        "decision_time_ms": output.decision_time_ms,
    });
    writeln!(out, "{summary}")
}
