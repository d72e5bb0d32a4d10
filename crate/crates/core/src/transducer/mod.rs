//! RNN-Transducer with two joint networks.
//!
//! The encoder is a causal LSTM stack with a time-reduction stage. The
//! prediction network sees only the last `N` non-blank wordpieces. The ASR
//! joint scores blank plus wordpieces; the IQ joint scores the same outputs
//! plus `<intended>` and `<unintended>`.

mod checkpoint;
mod lattice;
mod loss;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::numkernel::{dot, LstmStack, LstmStackCache, Matrix, Parameters};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use lattice::{lattice_loss, LatticeLoss, LossLattice};
pub use loss::{iq_stage2_loss, iq_stage2_loss_frozen, rnnt_loss, rnnt_loss_masked, rnnt_loss_value, FrozenUtterance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub encoder_layers: usize,
    pub encoder_width: usize,
    pub time_reduction_factor: usize,
    /// Zero-based index of the layer whose output is time-reduced.
    pub time_reduction_after_layer: usize,
    /// `N`: how many previous non-blank wordpieces the prediction network sees.
    pub prediction_context: usize,
    pub embedding_dim: usize,
    pub joint_width: usize,
    /// Blank plus wordpieces.
    pub vocab_size: usize,
    /// Constant gain on input features ahead of the encoder.
    pub input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 16,
            encoder_layers: 3,
            encoder_width: 64,
            time_reduction_factor: 2,
            time_reduction_after_layer: 1,
            prediction_context: 2,
            embedding_dim: 16,
            joint_width: 64,
            vocab_size: 0,
            input_scale: 8.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("encoder_layers", self.encoder_layers),
            ("encoder_width", self.encoder_width),
            ("time_reduction_factor", self.time_reduction_factor),
            ("prediction_context", self.prediction_context),
            ("embedding_dim", self.embedding_dim),
            ("joint_width", self.joint_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::arg(format!("model.{name} must be positive")));
        }
        if self.vocab_size < 2 {
            return Err(Error::arg("model.vocab_size must cover blank and at least one wordpiece"));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::arg("model.input_scale must be positive"));
        }
        if self.time_reduction_after_layer >= self.encoder_layers {
            return Err(Error::arg(format!(
                "time_reduction_after_layer {} must be below encoder_layers {}",
                self.time_reduction_after_layer, self.encoder_layers
            )));
        }
        Ok(())
    }

    pub fn iq_output_size(&self) -> usize {
        self.vocab_size + 2
    }

    pub fn intended_id(&self) -> TokenId {
        self.vocab_size
    }

    pub fn unintended_id(&self) -> TokenId {
        self.vocab_size + 1
    }

    /// Width of an encoder output row; a reduction after the top layer
    /// concatenates `time_reduction_factor` rows.
    pub fn encoder_output_dim(&self) -> usize {
        match self.reduction() {
            Some((after, factor)) if after + 1 == self.encoder_layers => factor * self.encoder_width,
            _ => self.encoder_width,
        }
    }

    pub fn prediction_width(&self) -> usize {
        self.prediction_context * self.embedding_dim
    }

    fn reduction(&self) -> Option<(usize, usize)> {
        (self.time_reduction_factor > 1).then_some((self.time_reduction_after_layer, self.time_reduction_factor))
    }

    /// Encoder steps produced for `frames` input frames.
    pub fn encoder_steps(&self, frames: usize) -> usize {
        frames.div_ceil(self.time_reduction_factor)
    }
}

/// Embedding table plus one tanh layer over the concatenated context.
/// Row 0 of the table (the blank id) doubles as the start-of-sequence pad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionParams {
    pub embedding: Matrix,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// `tanh(W_enc·enc + W_pred·pred + b)` followed by an output projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub w_enc: Matrix,
    pub w_pred: Matrix,
    pub bias: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl JointParams {
    pub fn zeros(enc_width: usize, pred_width: usize, joint_width: usize, outputs: usize) -> Self {
        JointParams {
            w_enc: Matrix::zeros(joint_width, enc_width),
            w_pred: Matrix::zeros(joint_width, pred_width),
            bias: vec![0.0; joint_width],
            w_out: Matrix::zeros(outputs, joint_width),
            b_out: vec![0.0; outputs],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub fn outputs(&self) -> usize {
        self.w_out.rows()
    }

    pub fn width(&self) -> usize {
        self.w_enc.rows()
    }

    /// Encoder half of the pre-activation, `W_enc·enc`.
    pub fn project_enc(&self, enc: &[f64]) -> Vec<f64> {
        self.w_enc.matvec(enc)
    }

    /// Prediction half of the pre-activation, `W_pred·pred + b`.
    pub fn project_pred(&self, pred: &[f64]) -> Vec<f64> {
        let mut out = self.w_pred.matvec(pred);
        out.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        out
    }

    /// Logits from the two projected halves.
    pub fn logits_from(&self, enc_proj: &[f64], pred_proj: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = enc_proj.iter().zip(pred_proj).map(|(a, b)| (a + b).tanh()).collect();
        let mut z = self.w_out.matvec(&h);
        z.iter_mut().zip(&self.b_out).for_each(|(o, b)| *o += b);
        z
    }

    /// Copy of this joint with `extra` zero output rows appended.
    pub fn widened(&self, extra: usize) -> JointParams {
        let (k, j) = (self.w_out.rows(), self.w_out.cols());
        let mut w_out = self.w_out.data().to_vec();
        w_out.resize((k + extra) * j, 0.0);
        let mut b_out = self.b_out.clone();
        b_out.resize(k + extra, 0.0);
        JointParams {
            w_out: Matrix::from_vec(k + extra, j, w_out).expect("sizes agree"),
            b_out,
            ..self.clone()
        }
    }

    pub(crate) fn named_tensors<'a>(&'a self, prefix: &str) -> Vec<(String, &'a [f64])> {
        vec![
            (format!("{prefix}.w_enc"), self.w_enc.data()),
            (format!("{prefix}.w_pred"), self.w_pred.data()),
            (format!("{prefix}.bias"), &self.bias[..]),
            (format!("{prefix}.w_out"), self.w_out.data()),
            (format!("{prefix}.b_out"), &self.b_out[..]),
        ]
    }

    pub(crate) fn named_tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut [f64])> {
        vec![
            (format!("{prefix}.w_enc"), self.w_enc.data_mut()),
            (format!("{prefix}.w_pred"), self.w_pred.data_mut()),
            (format!("{prefix}.bias"), &mut self.bias[..]),
            (format!("{prefix}.w_out"), self.w_out.data_mut()),
            (format!("{prefix}.b_out"), &mut self.b_out[..]),
        ]
    }
}

impl Parameters for JointParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        self.named_tensors("joint")
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.named_tensors_mut("joint")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerParams {
    pub encoder: LstmStack,
    pub prediction: PredictionParams,
    pub asr_joint: JointParams,
    pub iq_joint: JointParams,
}

impl TransducerParams {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let pw = cfg.prediction_width();
        Ok(TransducerParams {
            encoder: LstmStack::zeros(cfg.feature_dim, cfg.encoder_width, cfg.encoder_layers, cfg.reduction())
                .with_input_scale(cfg.input_scale),
            prediction: PredictionParams {
                embedding: Matrix::zeros(cfg.vocab_size, cfg.embedding_dim),
                weight: Matrix::zeros(pw, pw),
                bias: vec![0.0; pw],
            },
            asr_joint: JointParams::zeros(cfg.encoder_output_dim(), pw, cfg.joint_width, cfg.vocab_size),
            iq_joint: JointParams::zeros(cfg.encoder_output_dim(), pw, cfg.joint_width, cfg.iq_output_size()),
        })
    }

    /// A zero-valued buffer with this layout, for gradient accumulation.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    /// Initialises the IQ joint from the ASR joint, with zero rows for the two IQ outputs.
    pub fn init_iq_joint_from_asr(&mut self) {
        self.iq_joint = self.asr_joint.widened(2);
    }

    /// Checks every tensor against `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let want = TransducerParams::zeros(cfg)?;
        let (a, b) = (self.tensors(), want.tensors());
        if a.len() != b.len() {
            return Err(Error::shape(format!("{} tensors, config implies {}", a.len(), b.len())));
        }
        for ((name, x), (_, y)) in a.iter().zip(&b) {
            if x.len() != y.len() {
                return Err(Error::shape(format!("{name}: {} values, config implies {}", x.len(), y.len())));
            }
        }
        if self.encoder.reduction != want.encoder.reduction {
            return Err(Error::shape("encoder time reduction differs from config"));
        }
        Ok(())
    }

    /// Full encoder pass over `frames × feature_dim` features.
    pub fn encode(&self, features: &Matrix) -> Result<Matrix> {
        self.encoder.run(features)
    }

    pub(crate) fn encode_with_cache(&self, features: &Matrix) -> Result<(Matrix, LstmStackCache)> {
        self.encoder.forward(features)
    }

    fn context_width(&self) -> usize {
        self.prediction.weight.cols() / self.prediction.embedding.cols()
    }

    /// Embedding rows used for a history: the last `N` wordpieces, left-padded with the blank row.
    pub(crate) fn context_ids(&self, history: &[TokenId]) -> Result<Vec<TokenId>> {
        let n = self.context_width();
        let vocab = self.prediction.embedding.rows();
        let mut ids = Vec::with_capacity(n);
        for &id in history.iter().rev() {
            if ids.len() == n {
                break;
            }
            match id {
                0 => return Err(Error::arg("blank id in label history")),
                id if id < vocab => ids.push(id),
                id if id < vocab + 2 => {}
                id => return Err(Error::arg(format!("token id {id} outside the model vocabulary"))),
            }
        }
        ids.resize(n, 0);
        ids.reverse();
        Ok(ids)
    }

    pub(crate) fn context_input(&self, ctx: &[TokenId]) -> Vec<f64> {
        ctx.iter()
            .flat_map(|&id| self.prediction.embedding.row(id).iter().copied())
            .collect()
    }

    /// Prediction-network output for a label history. IQ tokens are skipped.
    pub fn predict_context(&self, history: &[TokenId]) -> Result<Vec<f64>> {
        let ctx = self.context_ids(history)?;
        Ok(self.predict_ids(&ctx))
    }

    pub(crate) fn predict_ids(&self, ctx: &[TokenId]) -> Vec<f64> {
        let x = self.context_input(ctx);
        let p = &self.prediction;
        (0..p.weight.rows())
            .map(|r| (dot(p.weight.row(r), &x) + p.bias[r]).tanh())
            .collect()
    }
}

impl Parameters for TransducerParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = self.encoder.tensors("encoder");
        out.push(("prediction.embedding".into(), self.prediction.embedding.data()));
        out.push(("prediction.weight".into(), self.prediction.weight.data()));
        out.push(("prediction.bias".into(), &self.prediction.bias[..]));
        out.extend(self.asr_joint.named_tensors("asr_joint"));
        out.extend(self.iq_joint.named_tensors("iq_joint"));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = self.encoder.tensors_mut("encoder");
        out.push(("prediction.embedding".into(), self.prediction.embedding.data_mut()));
        out.push(("prediction.weight".into(), self.prediction.weight.data_mut()));
        out.push(("prediction.bias".into(), &mut self.prediction.bias[..]));
        out.extend(self.asr_joint.named_tensors_mut("asr_joint"));
        out.extend(self.iq_joint.named_tensors_mut("iq_joint"));
        out
    }
}

/// Joint logits for one (encoder state, prediction state) pair.
pub fn joint_logits(enc_state: &[f64], pred_state: &[f64], joint: &JointParams) -> Result<Vec<f64>> {
    if enc_state.len() != joint.w_enc.cols() || pred_state.len() != joint.w_pred.cols() {
        return Err(Error::shape(format!(
            "joint expects enc {} / pred {}, got {} / {}",
            joint.w_enc.cols(),
            joint.w_pred.cols(),
            enc_state.len(),
            pred_state.len()
        )));
    }
    Ok(joint.logits_from(&joint.project_enc(enc_state), &joint.project_pred(pred_state)))
}
