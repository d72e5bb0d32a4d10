//! Comparison detectors: a frame-level acoustic classifier smoothed by a
//! consecutive-frame state machine, and an utterance-level acoustic-text
//! classifier evaluated incrementally on partial recognition output.

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Intent, TokenId};
use crate::decoding::{DecisionConfig, DecisionEvent, DecodeSession, DetectorOutput};
use crate::error::{Error, Result};
use crate::numkernel::{affine, affine_backward, log_softmax, softmax, LstmStack, Matrix, Optimizer, OptimizerConfig, Parameters};
use crate::training::{batch_gradient, check_loss, epoch_order, init_uniform};
use crate::transducer::TransducerParams;

const INTENDED_CLASS: usize = 1;

fn class_of(intent: Intent) -> usize {
    match intent {
        Intent::Intended => INTENDED_CLASS,
        Intent::Unintended => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub seed: u64,
    pub lstm_layers: usize,
    pub lstm_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Scale of the uniform initialisation relative to `1/sqrt(fan_in)`.
    pub init_gain: f64,
    /// Constant gain on input features ahead of the LSTM.
    pub input_scale: f64,
    pub state_machine: StateMachineConfig,
    pub word_embedding_dim: usize,
    pub text_filters: usize,
    /// Odd convolution width; inputs are zero-padded by `conv_window / 2` on each side.
    pub conv_window: usize,
    pub joint_hidden: usize,
    /// Acoustic-text evaluation cadence in recognizer encoder steps.
    pub eval_stride: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            seed: 42,
            lstm_layers: 3,
            lstm_width: 64,
            epochs: 4,
            batch_size: 8,
            optimizer: OptimizerConfig {
                learning_rate: 3e-3,
                ..Default::default()
            },
            init_gain: 5.0,
            input_scale: 8.0,
            state_machine: StateMachineConfig::default(),
            word_embedding_dim: 32,
            text_filters: 100,
            conv_window: 3,
            joint_hidden: 64,
            eval_stride: 5,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lstm_layers", self.lstm_layers),
            ("lstm_width", self.lstm_width),
            ("batch_size", self.batch_size),
            ("word_embedding_dim", self.word_embedding_dim),
            ("text_filters", self.text_filters),
            ("joint_hidden", self.joint_hidden),
            ("eval_stride", self.eval_stride),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::arg(format!("baseline.{name} must be positive")));
        }
        if !(self.init_gain > 0.0) {
            return Err(Error::arg("baseline.init_gain must be positive"));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::arg("baseline.input_scale must be positive"));
        }
        if self.conv_window.is_multiple_of(2) {
            return Err(Error::arg("baseline.conv_window must be odd"));
        }
        self.state_machine.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateMachineConfig {
    pub frame_threshold: f64,
    /// Consecutive frames at or above the threshold needed to declare intended.
    pub k_on: usize,
}

impl Default for StateMachineConfig {
    fn default() -> Self {
        StateMachineConfig {
            frame_threshold: 0.5,
            k_on: 10,
        }
    }
}

impl StateMachineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_on == 0 {
            return Err(Error::arg("k_on must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.frame_threshold) {
            return Err(Error::arg("frame_threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Smoothed statistic per frame: the minimum posterior over the last `k_on`
/// frames, or 0 before `k_on` frames have been seen. It reaches θ exactly at
/// the `k_on`-th frame of the first run of `k_on` posteriors at or above θ.
pub fn state_machine_scores(posteriors: &[f64], k_on: usize) -> Vec<f64> {
    (0..posteriors.len())
        .map(|t| {
            if t + 1 < k_on {
                0.0
            } else {
                posteriors[t + 1 - k_on..=t].iter().copied().fold(f64::INFINITY, f64::min)
            }
        })
        .collect()
}

/// Frame-level acoustic detector: LSTM stack and a 2-way projection per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticDetectorParams {
    pub lstm: LstmStack,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl AcousticDetectorParams {
    pub fn zeros(feature_dim: usize, cfg: &BaselineConfig) -> Self {
        AcousticDetectorParams {
            lstm: LstmStack::zeros(feature_dim, cfg.lstm_width, cfg.lstm_layers, None).with_input_scale(cfg.input_scale),
            w_out: Matrix::zeros(2, cfg.lstm_width),
            b_out: vec![0.0; 2],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn init(feature_dim: usize, cfg: &BaselineConfig) -> Self {
        let mut p = Self::zeros(feature_dim, cfg);
        let mut fans = Vec::new();
        for l in &p.lstm.layers {
            let f = l.input_dim() + l.width();
            fans.extend([f, f, f]);
        }
        fans.extend([cfg.lstm_width, cfg.lstm_width]);
        init_uniform(&mut p, &fans, cfg.init_gain, cfg.seed);
        p
    }

    /// Intended-class posterior of every frame.
    pub fn frame_posteriors(&self, features: &Matrix) -> Result<Vec<f64>> {
        let h = self.lstm.run(features)?;
        (0..h.rows())
            .map(|t| Ok(softmax(&affine(h.row(t), &self.w_out, &self.b_out)?)?[INTENDED_CLASS]))
            .collect()
    }
}

impl Parameters for AcousticDetectorParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut t = self.lstm.tensors("lstm");
        t.push(("out.weight".into(), self.w_out.data()));
        t.push(("out.bias".into(), &self.b_out[..]));
        t
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut t = self.lstm.tensors_mut("lstm");
        t.push(("out.weight".into(), self.w_out.data_mut()));
        t.push(("out.bias".into(), &mut self.b_out[..]));
        t
    }
}

/// Mean per-frame cross-entropy against the utterance class; accumulates gradients.
pub fn acoustic_loss(
    params: &AcousticDetectorParams,
    features: &Matrix,
    intent: Intent,
    grads: &mut AcousticDetectorParams,
) -> Result<f64> {
    let (h, cache) = params.lstm.forward(features)?;
    let frames = h.rows();
    if frames == 0 {
        return Err(Error::arg("empty feature sequence"));
    }
    let target = class_of(intent);
    let scale = 1.0 / frames as f64;
    let mut d_h = Matrix::zeros(frames, h.cols());
    let mut loss = 0.0;
    for t in 0..frames {
        let lp = log_softmax(&affine(h.row(t), &params.w_out, &params.b_out)?)?;
        loss -= lp[target];
        let g: Vec<f64> = lp
            .iter()
            .enumerate()
            .map(|(k, l)| scale * (l.exp() - f64::from(k == target)))
            .collect();
        let dx = affine_backward(h.row(t), &params.w_out, &g, &mut grads.w_out, &mut grads.b_out);
        d_h.row_mut(t).copy_from_slice(&dx);
    }
    params.lstm.backward(&cache, &d_h, &mut grads.lstm);
    Ok(loss * scale)
}

/// Minibatch training shared by both detectors. Returns the mean loss per epoch.
fn fit<P, F>(params: &mut P, n: usize, cfg: &BaselineConfig, seed: u64, loss: F) -> Result<Vec<f64>>
where
    P: Parameters + Clone + Send + Sync,
    F: Fn(&P, usize, &mut P) -> Result<f64> + Sync,
{
    let mut zero = params.clone();
    zero.zero();
    let mut opt = Optimizer::new(cfg.optimizer.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in epoch_order(n, seed, epoch, true).chunks(cfg.batch_size) {
            let (l, g) = batch_gradient(batch, &zero, |i, g| loss(params, i, g)).map_err(|e| match e {
                Error::Numeric(m) => Error::Training {
                    step: opt.steps() as usize,
                    message: m,
                },
                e => e,
            })?;
            check_loss(l, opt.steps())?;
            opt.step(params.tensors_mut(), g.tensors())?;
            total += l * batch.len() as f64;
        }
        let mean = total / n as f64;
        info!("baseline epoch {}/{}: mean loss {mean:.4}", epoch + 1, cfg.epochs);
        history.push(mean);
    }
    Ok(history)
}

fn check_corpus(corpus: &Corpus) -> Result<usize> {
    let u = corpus
        .utterances
        .first()
        .ok_or_else(|| Error::arg("cannot train on an empty corpus"))?;
    Ok(u.features.cols())
}

pub fn train_acoustic_detector(corpus: &Corpus, cfg: &BaselineConfig) -> Result<(AcousticDetectorParams, Vec<f64>)> {
    cfg.validate()?;
    let dim = check_corpus(corpus)?;
    let mut params = AcousticDetectorParams::init(dim, cfg);
    let utts = &corpus.utterances;
    let history = fit(&mut params, utts.len(), cfg, cfg.seed, |p, i, g| {
        acoustic_loss(p, &utts[i].features, utts[i].intent, g)
    })?;
    Ok((params, history))
}

/// Streams the acoustic detector over one utterance, one event per frame.
pub fn acoustic_detect(
    features: &Matrix,
    params: &AcousticDetectorParams,
    sm: &StateMachineConfig,
    frame_period_ms: f64,
) -> Result<DetectorOutput> {
    sm.validate()?;
    if features.cols() != params.lstm.input_dim() {
        return Err(Error::shape(format!(
            "frame has {} features, detector expects {}",
            features.cols(),
            params.lstm.input_dim()
        )));
    }
    let mut stream = params.lstm.stream();
    let mut posteriors = Vec::with_capacity(features.rows());
    for r in 0..features.rows() {
        let h = stream.push(features.row(r)).expect("no time reduction");
        posteriors.push(softmax(&affine(&h, &params.w_out, &params.b_out)?)?[INTENDED_CLASS]);
    }
    let scores = state_machine_scores(&posteriors, sm.k_on);
    let events = posteriors
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(t, (&p, &s))| DecisionEvent {
            encoder_step: t + 1,
            time_ms: (t + 1) as f64 * frame_period_ms,
            intended_posterior: p,
            crossed: s >= sm.frame_threshold,
        })
        .collect();
    Ok(DetectorOutput::from_scores(events, scores, sm.frame_threshold, None))
}

/// Acoustic-text detector: LSTM acoustic embedding, convolutional text
/// embedding over word vectors, and a two-layer joint classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticTextParams {
    pub lstm: LstmStack,
    /// vocabulary × embedding_dim; row 0 (blank) is never looked up.
    pub embedding: Matrix,
    /// filters × (window · embedding_dim).
    pub conv_weight: Matrix,
    pub conv_bias: Vec<f64>,
    /// hidden × (filters + lstm width); text features come first.
    pub hidden_weight: Matrix,
    pub hidden_bias: Vec<f64>,
    pub out_weight: Matrix,
    pub out_bias: Vec<f64>,
}

struct TextCache {
    windows: Matrix,
    activations: Matrix,
    argmax: Vec<usize>,
}

impl AcousticTextParams {
    pub fn zeros(feature_dim: usize, vocab_size: usize, cfg: &BaselineConfig) -> Self {
        let e = cfg.word_embedding_dim;
        AcousticTextParams {
            lstm: LstmStack::zeros(feature_dim, cfg.lstm_width, cfg.lstm_layers, None).with_input_scale(cfg.input_scale),
            embedding: Matrix::zeros(vocab_size, e),
            conv_weight: Matrix::zeros(cfg.text_filters, cfg.conv_window * e),
            conv_bias: vec![0.0; cfg.text_filters],
            hidden_weight: Matrix::zeros(cfg.joint_hidden, cfg.text_filters + cfg.lstm_width),
            hidden_bias: vec![0.0; cfg.joint_hidden],
            out_weight: Matrix::zeros(2, cfg.joint_hidden),
            out_bias: vec![0.0; 2],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn init(feature_dim: usize, vocab_size: usize, cfg: &BaselineConfig) -> Self {
        let mut p = Self::zeros(feature_dim, vocab_size, cfg);
        let mut fans = Vec::new();
        for l in &p.lstm.layers {
            let f = l.input_dim() + l.width();
            fans.extend([f, f, f]);
        }
        let conv_in = p.conv_weight.cols();
        let joint_in = p.hidden_weight.cols();
        fans.extend([1, conv_in, conv_in, joint_in, joint_in, cfg.joint_hidden, cfg.joint_hidden]);
        init_uniform(&mut p, &fans, cfg.init_gain, cfg.seed.wrapping_add(1));
        p
    }

    fn window(&self) -> usize {
        self.conv_weight.cols() / self.embedding.cols()
    }

    pub fn text_width(&self) -> usize {
        self.conv_weight.rows()
    }

    fn check_words(&self, words: &[TokenId]) -> Result<()> {
        match words.iter().find(|&&w| w == 0 || w >= self.embedding.rows()) {
            Some(w) => Err(Error::arg(format!("word id {w} is not a wordpiece of this detector"))),
            None => Ok(()),
        }
    }

    fn text_forward(&self, words: &[TokenId]) -> (Vec<f64>, Option<TextCache>) {
        let f = self.text_width();
        if words.is_empty() {
            return (vec![0.0; f], None);
        }
        let e = self.embedding.cols();
        let win = self.window();
        let pad = win / 2;
        let mut windows = Matrix::zeros(words.len(), win * e);
        for pos in 0..words.len() {
            let row = windows.row_mut(pos);
            for k in 0..win {
                if let Some(&w) = (pos + k).checked_sub(pad).and_then(|j| words.get(j)) {
                    row[k * e..(k + 1) * e].copy_from_slice(self.embedding.row(w));
                }
            }
        }
        let mut act = windows.mul_transposed(&self.conv_weight);
        for pos in 0..words.len() {
            for (a, b) in act.row_mut(pos).iter_mut().zip(&self.conv_bias) {
                *a = (*a + b).tanh();
            }
        }
        let mut pooled = vec![f64::NEG_INFINITY; f];
        let mut argmax = vec![0; f];
        for pos in 0..words.len() {
            for (j, &a) in act.row(pos).iter().enumerate() {
                if a > pooled[j] {
                    pooled[j] = a;
                    argmax[j] = pos;
                }
            }
        }
        (
            pooled,
            Some(TextCache {
                windows,
                activations: act,
                argmax,
            }),
        )
    }

    fn text_backward(&self, words: &[TokenId], cache: &TextCache, d_pooled: &[f64], grads: &mut AcousticTextParams) {
        let e = self.embedding.cols();
        let win = self.window();
        let pad = win / 2;
        let mut d_windows = Matrix::zeros(words.len(), win * e);
        for (j, (&pos, &d)) in cache.argmax.iter().zip(d_pooled).enumerate() {
            let a = cache.activations.get(pos, j);
            let dz = d * (1.0 - a * a);
            grads.conv_bias[j] += dz;
            let w_row = self.conv_weight.row(j);
            let x_row = cache.windows.row(pos);
            for (g, x) in grads.conv_weight.row_mut(j).iter_mut().zip(x_row) {
                *g += dz * x;
            }
            for (dx, w) in d_windows.row_mut(pos).iter_mut().zip(w_row) {
                *dx += dz * w;
            }
        }
        for pos in 0..words.len() {
            for k in 0..win {
                if let Some(&w) = (pos + k).checked_sub(pad).and_then(|j| words.get(j)) {
                    let src = &d_windows.row(pos)[k * e..(k + 1) * e];
                    for (g, s) in grads.embedding.row_mut(w).iter_mut().zip(src) {
                        *g += s;
                    }
                }
            }
        }
    }

    /// Joint-layer pre-activations' inputs and outputs: `(joint_input, hidden, logits)`.
    fn joint_forward(&self, text: &[f64], acoustic: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let input: Vec<f64> = text.iter().chain(acoustic).copied().collect();
        let hidden: Vec<f64> = affine(&input, &self.hidden_weight, &self.hidden_bias)?
            .into_iter()
            .map(f64::tanh)
            .collect();
        let logits = affine(&hidden, &self.out_weight, &self.out_bias)?;
        Ok((input, hidden, logits))
    }

    /// Intended posterior from an acoustic embedding and a word sequence.
    pub fn score(&self, acoustic: &[f64], words: &[TokenId]) -> Result<f64> {
        self.check_words(words)?;
        let (text, _) = self.text_forward(words);
        let (_, _, logits) = self.joint_forward(&text, acoustic)?;
        Ok(softmax(&logits)?[INTENDED_CLASS])
    }
}

impl Parameters for AcousticTextParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut t = self.lstm.tensors("lstm");
        t.extend([
            ("embedding".to_string(), self.embedding.data()),
            ("conv.weight".into(), self.conv_weight.data()),
            ("conv.bias".into(), &self.conv_bias[..]),
            ("hidden.weight".into(), self.hidden_weight.data()),
            ("hidden.bias".into(), &self.hidden_bias[..]),
            ("out.weight".into(), self.out_weight.data()),
            ("out.bias".into(), &self.out_bias[..]),
        ]);
        t
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut t = self.lstm.tensors_mut("lstm");
        t.extend([
            ("embedding".to_string(), self.embedding.data_mut()),
            ("conv.weight".into(), self.conv_weight.data_mut()),
            ("conv.bias".into(), &mut self.conv_bias[..]),
            ("hidden.weight".into(), self.hidden_weight.data_mut()),
            ("hidden.bias".into(), &mut self.hidden_bias[..]),
            ("out.weight".into(), self.out_weight.data_mut()),
            ("out.bias".into(), &mut self.out_bias[..]),
        ]);
        t
    }
}

/// One scoring point: the acoustic state after `frame` and the recognizer's
/// partial hypothesis at that moment.
#[derive(Debug, Clone, PartialEq)]
pub struct TextProbe {
    pub frame: usize,
    pub words: Vec<TokenId>,
}

/// Mean cross-entropy over `probes`; accumulates gradients.
pub fn acoustic_text_loss(
    params: &AcousticTextParams,
    features: &Matrix,
    probes: &[TextProbe],
    intent: Intent,
    grads: &mut AcousticTextParams,
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::arg("no scoring points"));
    }
    let (h, cache) = params.lstm.forward(features)?;
    if h.rows() == 0 {
        return Err(Error::arg("empty feature sequence"));
    }
    let target = class_of(intent);
    let scale = 1.0 / probes.len() as f64;
    let f = params.text_width();
    let mut d_h = Matrix::zeros(h.rows(), h.cols());
    let mut loss = 0.0;
    for probe in probes {
        params.check_words(&probe.words)?;
        if probe.frame >= h.rows() {
            return Err(Error::arg(format!("probe frame {} beyond {} frames", probe.frame, h.rows())));
        }
        let (text, text_cache) = params.text_forward(&probe.words);
        let (input, hidden, logits) = params.joint_forward(&text, h.row(probe.frame))?;
        let lp = log_softmax(&logits)?;
        loss -= scale * lp[target];
        let g: Vec<f64> = lp
            .iter()
            .enumerate()
            .map(|(k, l)| scale * (l.exp() - f64::from(k == target)))
            .collect();
        let d_hidden = affine_backward(&hidden, &params.out_weight, &g, &mut grads.out_weight, &mut grads.out_bias);
        let d_pre: Vec<f64> = d_hidden.iter().zip(&hidden).map(|(d, a)| d * (1.0 - a * a)).collect();
        let d_input = affine_backward(
            &input,
            &params.hidden_weight,
            &d_pre,
            &mut grads.hidden_weight,
            &mut grads.hidden_bias,
        );
        if let Some(tc) = &text_cache {
            params.text_backward(&probe.words, tc, &d_input[..f], grads);
        }
        for (d, s) in d_h.row_mut(probe.frame).iter_mut().zip(&d_input[f..]) {
            *d += s;
        }
    }
    params.lstm.backward(&cache, &d_h, &mut grads.lstm);
    Ok(loss)
}

/// Streams the recognizer and calls `visit` with the last consumed frame, the
/// step event and the top hypothesis every `eval_stride` encoder steps and at
/// the final step. Returns the final hypothesis.
fn at_checkpoints(
    features: &Matrix,
    asr: &TransducerParams,
    decode: &DecisionConfig,
    eval_stride: usize,
    frame_period_ms: f64,
    mut visit: impl FnMut(usize, DecisionEvent, &[TokenId]) -> Result<()>,
) -> Result<Vec<TokenId>> {
    if eval_stride == 0 {
        return Err(Error::arg("eval_stride must be positive"));
    }
    if features.rows() == 0 {
        return Err(Error::arg("empty feature sequence"));
    }
    let steps = asr.encoder.output_len(features.rows());
    let mut session = DecodeSession::new(asr, decode, frame_period_ms, false)?;
    let due = |ev: &DecisionEvent| ev.encoder_step.is_multiple_of(eval_stride) || ev.encoder_step == steps;
    for r in 0..features.rows() {
        if let Some(ev) = session.push_frame(features.row(r))? {
            if due(&ev) {
                visit(r, ev, &session.top().label_history)?;
            }
        }
    }
    if let Some(ev) = session.finish() {
        if due(&ev) {
            visit(features.rows() - 1, ev, &session.top().label_history)?;
        }
    }
    Ok(session.top().label_history.clone())
}

/// The points at which [`acoustic_text_detect`] scores an utterance.
pub fn text_probes(features: &Matrix, asr: &TransducerParams, decode: &DecisionConfig, eval_stride: usize) -> Result<Vec<TextProbe>> {
    let mut probes = Vec::new();
    at_checkpoints(features, asr, decode, eval_stride, 1.0, |frame, _, words| {
        probes.push(TextProbe {
            frame,
            words: words.to_vec(),
        });
        Ok(())
    })?;
    Ok(probes)
}

/// Trains on the acoustic state and partial hypothesis at every point the
/// detector is scored at.
pub fn train_acoustic_text_detector(
    corpus: &Corpus,
    asr: &TransducerParams,
    decode: &DecisionConfig,
    cfg: &BaselineConfig,
) -> Result<(AcousticTextParams, Vec<f64>)> {
    cfg.validate()?;
    let dim = check_corpus(corpus)?;
    let utts = &corpus.utterances;
    let probes: Vec<Vec<TextProbe>> = utts
        .par_iter()
        .map(|u| text_probes(&u.features, asr, decode, cfg.eval_stride))
        .collect::<Result<_>>()?;
    let mut params = AcousticTextParams::init(dim, asr.asr_joint.outputs(), cfg);
    let history = fit(&mut params, utts.len(), cfg, cfg.seed.wrapping_add(1), |p, i, g| {
        acoustic_text_loss(p, &utts[i].features, &probes[i], utts[i].intent, g)
    })?;
    Ok((params, history))
}

/// Runs the recognizer in streaming mode and scores the acoustic-text detector
/// every `eval_stride` encoder steps and at the final step, on the acoustic
/// state and partial hypothesis at that point. `usize::MAX` scores the end only.
pub fn acoustic_text_detect(
    features: &Matrix,
    params: &AcousticTextParams,
    asr: &TransducerParams,
    decode: &DecisionConfig,
    eval_stride: usize,
    frame_period_ms: f64,
) -> Result<DetectorOutput> {
    if params.lstm.input_dim() != asr.encoder.input_dim() {
        return Err(Error::shape("detector and recognizer disagree on feature_dim"));
    }
    let mut acoustic = params.lstm.stream();
    let mut pushed = 0;
    let mut events = Vec::new();
    let hyp = at_checkpoints(features, asr, decode, eval_stride, frame_period_ms, |frame, ev, words| {
        while pushed <= frame {
            acoustic.push(features.row(pushed));
            pushed += 1;
        }
        let p = params.score(acoustic.top_hidden(), words)?;
        events.push(DecisionEvent {
            intended_posterior: p,
            crossed: p >= decode.intended_threshold,
            ..ev
        });
        Ok(())
    })?;
    let scores = events.iter().map(|e| e.intended_posterior).collect();
    Ok(DetectorOutput::from_scores(events, scores, decode.intended_threshold, Some(hyp)))
}

/// Serialized form of a trained baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineModel {
    Acoustic {
        params: AcousticDetectorParams,
        state_machine: StateMachineConfig,
        train_loss_history: Vec<f64>,
    },
    AcousticText {
        params: AcousticTextParams,
        eval_stride: usize,
        train_loss_history: Vec<f64>,
    },
}

impl BaselineModel {
    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_vec(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}
