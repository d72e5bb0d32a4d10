use super::lattice::lattice_loss;
use super::{JointParams, TransducerParams};
use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::numkernel::Matrix;

const BLANK: TokenId = 0;

/// Prediction-network outputs for every lattice row `u = 0..=U`, plus the
/// embedding ids each row was built from.
struct PredictionPass {
    out: Matrix,
    contexts: Vec<Vec<TokenId>>,
}

fn predict_all(params: &TransducerParams, labels: &[TokenId]) -> Result<PredictionPass> {
    let width = params.prediction.weight.rows();
    let mut out = Matrix::zeros(labels.len() + 1, width);
    let mut contexts = Vec::with_capacity(labels.len() + 1);
    for u in 0..=labels.len() {
        let ctx = params.context_ids(&labels[..u])?;
        out.row_mut(u).copy_from_slice(&params.predict_ids(&ctx));
        contexts.push(ctx);
    }
    Ok(PredictionPass { out, contexts })
}

fn predict_backward(params: &TransducerParams, pass: &PredictionPass, d_out: &Matrix, grads: &mut TransducerParams) {
    let e = params.prediction.embedding.cols();
    for (u, ctx) in pass.contexts.iter().enumerate() {
        let y = pass.out.row(u);
        let d_pre: Vec<f64> = d_out.row(u).iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
        if d_pre.iter().all(|&v| v == 0.0) {
            continue;
        }
        let x = params.context_input(ctx);
        grads.prediction.weight.add_outer(&d_pre, &x);
        grads.prediction.bias.iter_mut().zip(&d_pre).for_each(|(b, g)| *b += g);
        let mut dx = vec![0.0; x.len()];
        params.prediction.weight.matvec_t_acc(&d_pre, &mut dx);
        for (slot, &id) in ctx.iter().enumerate() {
            let row = grads.prediction.embedding.row_mut(id);
            row.iter_mut().zip(&dx[slot * e..(slot + 1) * e]).for_each(|(r, g)| *r += g);
        }
    }
}

/// Joint forward, lattice loss and joint backward. Accumulates joint gradients
/// into `grads`; returns the loss and, when asked, gradients for the encoder
/// and prediction outputs.
fn joint_loss(
    joint: &JointParams,
    enc: &Matrix,
    pred: &Matrix,
    labels: &[TokenId],
    fastemit_lambda: f64,
    grads: &mut JointParams,
    input_grads: bool,
) -> Result<(f64, Option<(Matrix, Matrix)>)> {
    let (t_len, cols, jw) = (enc.rows(), pred.rows(), joint.width());
    let a = enc.mul_transposed(&joint.w_enc);
    let mut b = pred.mul_transposed(&joint.w_pred);
    for u in 0..cols {
        b.row_mut(u).iter_mut().zip(&joint.bias).for_each(|(v, bias)| *v += bias);
    }
    let mut hidden = Matrix::zeros(t_len * cols, jw);
    for t in 0..t_len {
        for u in 0..cols {
            let h = hidden.row_mut(t * cols + u);
            for ((h, x), y) in h.iter_mut().zip(a.row(t)).zip(b.row(u)) {
                *h = (x + y).tanh();
            }
        }
    }
    let mut logits = hidden.mul_transposed(&joint.w_out);
    for r in 0..logits.rows() {
        logits.row_mut(r).iter_mut().zip(&joint.b_out).for_each(|(v, bias)| *v += bias);
    }
    let out = lattice_loss(&logits, t_len, labels, BLANK, fastemit_lambda)?;
    let d_logits = out.d_logits;

    grads.w_out.add_transposed_product(&d_logits, &hidden);
    for r in 0..d_logits.rows() {
        grads.b_out.iter_mut().zip(d_logits.row(r)).for_each(|(g, d)| *g += d);
    }
    let mut d_pre = joint.w_out.left_mul(&d_logits);
    for (d, h) in d_pre.data_mut().iter_mut().zip(hidden.data()) {
        *d *= 1.0 - h * h;
    }
    let mut d_a = Matrix::zeros(t_len, jw);
    let mut d_b = Matrix::zeros(cols, jw);
    for t in 0..t_len {
        for u in 0..cols {
            let d = d_pre.row(t * cols + u);
            d_a.row_mut(t).iter_mut().zip(d).for_each(|(x, y)| *x += y);
            d_b.row_mut(u).iter_mut().zip(d).for_each(|(x, y)| *x += y);
        }
    }
    grads.w_enc.add_transposed_product(&d_a, enc);
    grads.w_pred.add_transposed_product(&d_b, pred);
    for u in 0..cols {
        grads.bias.iter_mut().zip(d_b.row(u)).for_each(|(g, d)| *g += d);
    }
    let inputs = input_grads.then(|| (joint.w_enc.left_mul(&d_a), joint.w_pred.left_mul(&d_b)));
    Ok((out.loss, inputs))
}

/// Stage-1 transducer loss over wordpiece `labels`, scored by the ASR joint.
///
/// Returns `−log P(labels | features)` and adds its gradient (with FastEmit
/// scaling) for the encoder, prediction network and ASR joint into `grads`.
pub fn rnnt_loss(
    params: &TransducerParams,
    features: &Matrix,
    labels: &[TokenId],
    fastemit_lambda: f64,
    grads: &mut TransducerParams,
) -> Result<f64> {
    rnnt_loss_masked(params, features, labels, fastemit_lambda, false, grads)
}

/// [`rnnt_loss`], optionally with the prediction-network output replaced by
/// zeros. The prediction network then receives no gradient.
pub fn rnnt_loss_masked(
    params: &TransducerParams,
    features: &Matrix,
    labels: &[TokenId],
    fastemit_lambda: f64,
    mask_prediction: bool,
    grads: &mut TransducerParams,
) -> Result<f64> {
    let vocab = params.asr_joint.outputs();
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= vocab) {
        return Err(Error::arg(format!("label {bad} is not a wordpiece")));
    }
    let (enc, cache) = params.encode_with_cache(features)?;
    if enc.rows() == 0 {
        return Err(Error::arg("empty feature sequence"));
    }
    let mut pass = predict_all(params, labels)?;
    if mask_prediction {
        pass.out = Matrix::zeros(pass.out.rows(), pass.out.cols());
    }
    let (loss, inputs) = joint_loss(
        &params.asr_joint,
        &enc,
        &pass.out,
        labels,
        fastemit_lambda,
        &mut grads.asr_joint,
        true,
    )?;
    let (d_enc, d_pred) = inputs.expect("requested");
    if !mask_prediction {
        predict_backward(params, &pass, &d_pred, grads);
    }
    params.encoder.backward(&cache, &d_enc, &mut grads.encoder);
    Ok(loss)
}

/// Frozen encoder and prediction outputs of one utterance, so stage-2 training
/// only has to run the IQ joint.
#[derive(Debug, Clone)]
pub struct FrozenUtterance {
    pub encoder_states: Matrix,
    pub prediction_states: Matrix,
    pub labels: Vec<TokenId>,
}

impl FrozenUtterance {
    pub fn new(params: &TransducerParams, features: &Matrix, augmented: &[TokenId]) -> Result<Self> {
        let encoder_states = params.encode(features)?;
        Self::from_encoder_states(params, encoder_states, augmented)
    }

    pub fn from_encoder_states(params: &TransducerParams, encoder_states: Matrix, augmented: &[TokenId]) -> Result<Self> {
        if encoder_states.rows() == 0 {
            return Err(Error::arg("empty feature sequence"));
        }
        let outputs = params.iq_joint.outputs();
        if let Some(&bad) = augmented.iter().find(|&&l| l == BLANK || l >= outputs) {
            return Err(Error::arg(format!("augmented sequence holds invalid id {bad}")));
        }
        let pass = predict_all(params, augmented)?;
        Ok(FrozenUtterance {
            encoder_states,
            prediction_states: pass.out,
            labels: augmented.to_vec(),
        })
    }
}

/// Stage-2 loss on precomputed frozen states; gradients go to `grads` (IQ joint layout).
pub fn iq_stage2_loss_frozen(
    iq_joint: &JointParams,
    frozen: &FrozenUtterance,
    fastemit_lambda: f64,
    grads: &mut JointParams,
) -> Result<f64> {
    let (loss, _) = joint_loss(
        iq_joint,
        &frozen.encoder_states,
        &frozen.prediction_states,
        &frozen.labels,
        fastemit_lambda,
        grads,
        false,
    )?;
    Ok(loss)
}

/// Stage-2 loss over the augmented sequence, scored by the IQ joint. The
/// prediction network advances on wordpieces only. Only `grads.iq_joint` is written.
pub fn iq_stage2_loss(
    params: &TransducerParams,
    features: &Matrix,
    augmented: &[TokenId],
    fastemit_lambda: f64,
    grads: &mut TransducerParams,
) -> Result<f64> {
    let frozen = FrozenUtterance::new(params, features, augmented)?;
    iq_stage2_loss_frozen(&params.iq_joint, &frozen, fastemit_lambda, &mut grads.iq_joint)
}

/// Loss only, for callers that do not need gradients.
pub fn rnnt_loss_value(params: &TransducerParams, features: &Matrix, labels: &[TokenId]) -> Result<f64> {
    let mut scratch = params.zeros_like();
    rnnt_loss(params, features, labels, 0.0, &mut scratch)
}
