//! Two-stage transducer training.
//!
//! Stage 1 fits the encoder, prediction network and ASR joint on wordpiece
//! targets. Stage 2 freezes all of that, initialises the IQ joint from the ASR
//! joint and fits it alone on the IQ-augmented targets.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TokenId};
use crate::error::{Error, Result};
use crate::numkernel::{Matrix, Optimizer, OptimizerConfig, Parameters};
use crate::transducer::{
    iq_stage2_loss_frozen, rnnt_loss_masked, rnnt_loss_value, Checkpoint, FrozenUtterance, JointParams, ModelConfig, TransducerParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub optimizer: OptimizerConfig,
    /// Learning rate for stage 2; falls back to `optimizer.learning_rate`.
    pub stage2_learning_rate: Option<f64>,
    pub fastemit_lambda: f64,
    /// Scale of the uniform initialisation relative to `1/sqrt(fan_in)`.
    pub init_gain: f64,
    /// Stage-1 optimizer steps during which the prediction-network output is
    /// zeroed, so early progress has to come from the encoder.
    pub encoder_warmup_steps: usize,
    pub shuffle: bool,
    /// Log the running loss every this many optimizer steps (0 disables).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            batch_size: 8,
            epochs_stage1: 4,
            epochs_stage2: 3,
            optimizer: OptimizerConfig {
                learning_rate: 3e-3,
                ..Default::default()
            },
            stage2_learning_rate: None,
            fastemit_lambda: 5e-3,
            init_gain: 5.0,
            encoder_warmup_steps: 250,
            shuffle: true,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("train.batch_size must be positive"));
        }
        if !(self.init_gain > 0.0) {
            return Err(Error::arg("train.init_gain must be positive"));
        }
        if !(self.fastemit_lambda >= 0.0) {
            return Err(Error::arg("train.fastemit_lambda must be non-negative"));
        }
        if let Some(lr) = self.stage2_learning_rate {
            if !(lr > 0.0) {
                return Err(Error::arg("train.stage2_learning_rate must be positive"));
            }
        }
        self.optimizer.validate()
    }

    fn stage2_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.stage2_learning_rate.unwrap_or(self.optimizer.learning_rate),
            ..self.optimizer.clone()
        }
    }
}

/// Uniform `(−r, r)` draws with `r = gain/sqrt(fan_in)`, walking `params` in
/// declaration order with one seeded generator.
pub(crate) fn init_uniform<P: Parameters>(params: &mut P, fan_ins: &[usize], gain: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = params.tensors_mut();
    assert_eq!(tensors.len(), fan_ins.len(), "one fan-in per tensor");
    for ((_, t), &fan_in) in tensors.into_iter().zip(fan_ins) {
        let r = gain / (fan_in.max(1) as f64).sqrt();
        t.iter_mut().for_each(|x| *x = rng.random_range(-r..r));
    }
}

/// Fan-in of every tensor of a transducer, in declaration order.
pub fn fan_ins(cfg: &ModelConfig) -> Vec<usize> {
    let p = TransducerParams::zeros(cfg).expect("validated config");
    let mut out = Vec::new();
    for layer in &p.encoder.layers {
        let fan = layer.input_dim() + layer.width();
        out.extend([fan, fan, fan]);
    }
    let pw = cfg.prediction_width();
    out.extend([cfg.embedding_dim, pw, pw]);
    let joint_in = cfg.encoder_output_dim() + pw;
    for _ in 0..2 {
        out.extend([joint_in, joint_in, joint_in, cfg.joint_width, cfg.joint_width]);
    }
    out
}

/// Seeded initial parameters. The IQ joint starts as a copy of the ASR joint.
pub fn init_params(cfg: &ModelConfig, gain: f64, seed: u64) -> Result<TransducerParams> {
    let mut p = TransducerParams::zeros(cfg)?;
    init_uniform(&mut p, &fan_ins(cfg), gain, seed);
    p.init_iq_joint_from_asr();
    Ok(p)
}

/// Per-epoch visiting order.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
    }
    order
}

/// Mean loss and mean gradient of a batch. Items are evaluated in parallel and
/// summed in batch order, so the result does not depend on the thread count.
pub(crate) fn batch_gradient<G, F>(batch: &[usize], zero: &G, f: F) -> Result<(f64, G)>
where
    G: Parameters + Clone + Send + Sync,
    F: Fn(usize, &mut G) -> Result<f64> + Sync,
{
    let parts: Vec<Result<(f64, G)>> = batch
        .par_iter()
        .map(|&i| {
            let mut g = zero.clone();
            let loss = f(i, &mut g)?;
            Ok((loss, g))
        })
        .collect();
    let mut total = zero.clone();
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    let scale = 1.0 / batch.len() as f64;
    for (_, t) in total.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, total))
}

pub(crate) fn check_loss(loss: f64, step: u64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training {
            step: step as usize,
            message: format!("loss is {loss}"),
        })
    }
}

/// The tensors stage 1 updates: everything except the IQ joint.
#[derive(Clone)]
struct Stage1View(TransducerParams);

impl Parameters for Stage1View {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        self.0.tensors().into_iter().filter(|(n, _)| !n.starts_with("iq_joint.")).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.0
            .tensors_mut()
            .into_iter()
            .filter(|(n, _)| !n.starts_with("iq_joint."))
            .collect()
    }
}

/// Wordpiece training pairs from a corpus.
fn stage1_examples(corpus: &Corpus) -> Vec<(&Matrix, &[TokenId])> {
    corpus.utterances.iter().map(|u| (&u.features, u.transcript.as_slice())).collect()
}

/// Mean stage-1 loss of `params` over a corpus.
pub fn mean_asr_loss(params: &TransducerParams, corpus: &Corpus) -> Result<f64> {
    let losses: Vec<Result<f64>> = corpus
        .utterances
        .par_iter()
        .map(|u| rnnt_loss_value(params, &u.features, &u.transcript))
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / corpus.utterances.len().max(1) as f64)
}

/// Stage 1: encoder, prediction network and ASR joint on wordpiece targets.
pub fn train_stage1(corpus: &Corpus, model: &ModelConfig, train: &TrainConfig) -> Result<Checkpoint> {
    model.validate()?;
    train.validate()?;
    if corpus.utterances.is_empty() {
        return Err(Error::arg("cannot train on an empty corpus"));
    }
    if model.vocab_size != corpus.vocab.asr_size() {
        return Err(Error::arg(format!(
            "model vocab_size {} differs from corpus vocabulary {}",
            model.vocab_size,
            corpus.vocab.asr_size()
        )));
    }
    let examples = stage1_examples(corpus);
    let mut state = Stage1View(init_params(model, train.init_gain, train.seed)?);
    let mut opt = Optimizer::new(train.optimizer.clone())?;
    let zero = Stage1View(state.0.zeros_like());
    let mut history = Vec::with_capacity(train.epochs_stage1);
    for epoch in 0..train.epochs_stage1 {
        let order = epoch_order(examples.len(), train.seed, epoch, train.shuffle);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train.batch_size) {
            let masked = opt.steps() < train.encoder_warmup_steps as u64;
            let (loss, grads) = batch_gradient(batch, &zero, |i, g| {
                let (x, y) = examples[i];
                rnnt_loss_masked(&state.0, x, y, train.fastemit_lambda, masked, &mut g.0)
            })
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Training {
                    step: opt.steps() as usize,
                    message: m,
                },
                e => e,
            })?;
            check_loss(loss, opt.steps())?;
            opt.step(state.tensors_mut(), grads.tensors())?;
            epoch_loss += loss * batch.len() as f64;
            if train.eval_every > 0 && opt.steps() % train.eval_every as u64 == 0 {
                debug!("stage 1 step {}: batch loss {loss:.4}", opt.steps());
            }
        }
        let mean = epoch_loss / examples.len() as f64;
        info!("stage 1 epoch {}/{}: mean loss {mean:.4}", epoch + 1, train.epochs_stage1);
        history.push(mean);
    }
    let mut params = state.0;
    params.init_iq_joint_from_asr();
    Ok(Checkpoint {
        config: model.clone(),
        params,
        stage: 1,
        step: opt.steps(),
        train_loss_history: history,
    })
}

/// Frozen-state training set for stage 2.
pub fn freeze_corpus(params: &TransducerParams, corpus: &Corpus) -> Result<Vec<FrozenUtterance>> {
    corpus
        .utterances
        .par_iter()
        .map(|u| {
            let aug = u
                .augmented_targets
                .as_ref()
                .ok_or_else(|| Error::arg(format!("utterance {} has no augmented targets", u.id)))?;
            FrozenUtterance::new(params, &u.features, aug)
        })
        .collect()
}

/// Mean stage-2 loss of an IQ joint over frozen utterances.
pub fn mean_iq_loss(iq_joint: &JointParams, frozen: &[FrozenUtterance]) -> Result<f64> {
    let losses: Vec<Result<f64>> = frozen
        .par_iter()
        .map(|f| iq_stage2_loss_frozen(iq_joint, f, 0.0, &mut iq_joint.zeros_like()))
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / frozen.len().max(1) as f64)
}

/// Stage 2: IQ joint only, on augmented targets. Everything else is copied
/// bit-for-bit from the parent.
pub fn train_stage2(parent: &Checkpoint, corpus: &Corpus, train: &TrainConfig) -> Result<Checkpoint> {
    train.validate()?;
    if parent.stage != 1 {
        return Err(Error::arg(format!("stage 2 needs a stage-1 parent, got stage {}", parent.stage)));
    }
    if corpus.utterances.is_empty() {
        return Err(Error::arg("cannot train on an empty corpus"));
    }
    let mut params = parent.params.clone();
    params.init_iq_joint_from_asr();
    let frozen = freeze_corpus(&params, corpus)?;
    let mut joint = params.iq_joint.clone();
    let mut opt = Optimizer::new(train.stage2_optimizer())?;
    let zero = joint.zeros_like();
    let mut history = Vec::with_capacity(train.epochs_stage2);
    for epoch in 0..train.epochs_stage2 {
        let order = epoch_order(frozen.len(), train.seed.wrapping_add(1), epoch, train.shuffle);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train.batch_size) {
            let (loss, grads) = batch_gradient(batch, &zero, |i, g| {
                iq_stage2_loss_frozen(&joint, &frozen[i], train.fastemit_lambda, g)
            })?;
            check_loss(loss, opt.steps())?;
            opt.step(joint.tensors_mut(), grads.tensors())?;
            epoch_loss += loss * batch.len() as f64;
        }
        let mean = epoch_loss / frozen.len() as f64;
        info!("stage 2 epoch {}/{}: mean loss {mean:.4}", epoch + 1, train.epochs_stage2);
        history.push(mean);
    }
    params.iq_joint = joint;
    Ok(Checkpoint {
        config: parent.config.clone(),
        params,
        stage: 2,
        step: parent.step + opt.steps(),
        train_loss_history: parent.train_loss_history.iter().copied().chain(history).collect(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec, Intent};
    use crate::labeling::{augment_utterance, SlotGrammar};

    pub(crate) fn tiny_corpus(n: usize) -> Corpus {
        let spec = CorpusSpec {
            n_intended: n / 2,
            n_unintended: n - n / 2,
            ..Default::default()
        };
        let mut c = generate_corpus(&spec).unwrap();
        let g = SlotGrammar::bundled(&c.vocab).unwrap();
        for i in 0..c.utterances.len() {
            let aug = augment_utterance(&c.utterances[i], &g, &c.vocab).unwrap();
            c.utterances[i].augmented_targets = Some(aug.ids());
        }
        c
    }

    fn tiny_model(c: &Corpus) -> ModelConfig {
        ModelConfig {
            encoder_width: 16,
            embedding_dim: 8,
            joint_width: 16,
            vocab_size: c.vocab.asr_size(),
            ..Default::default()
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig {
            vocab_size: 10,
            ..Default::default()
        };
        let a = init_params(&cfg, 1.0, 1).unwrap();
        assert_eq!(a, init_params(&cfg, 1.0, 1).unwrap());
        assert_ne!(a, init_params(&cfg, 1.0, 2).unwrap());
        let fans = fan_ins(&cfg);
        for ((name, t), fan) in a.tensors().into_iter().zip(fans) {
            let r = 1.0 / (fan as f64).sqrt();
            assert!(t.iter().all(|v| v.abs() < r), "{name}");
        }
    }

    #[test]
    fn zero_epochs_is_initialisation() {
        let c = tiny_corpus(4);
        let m = tiny_model(&c);
        let t = TrainConfig {
            epochs_stage1: 0,
            ..Default::default()
        };
        let ck = train_stage1(&c, &m, &t).unwrap();
        assert_eq!(ck.params, init_params(&m, t.init_gain, t.seed).unwrap());
        assert_eq!(ck.step, 0);
    }

    #[test]
    fn stage1_learns_and_is_deterministic() {
        let c = tiny_corpus(8);
        let m = tiny_model(&c);
        let t = TrainConfig {
            epochs_stage1: 30,
            batch_size: 4,
            optimizer: OptimizerConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let before = mean_asr_loss(&init_params(&m, t.init_gain, t.seed).unwrap(), &c).unwrap();
        let a = train_stage1(&c, &m, &t).unwrap();
        let after = mean_asr_loss(&a.params, &c).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert_eq!(a.train_loss_history.len(), 30);
        let b = train_stage1(&c, &m, &t).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn stage2_freezes_and_learns() {
        let c = tiny_corpus(8);
        let m = tiny_model(&c);
        let t = TrainConfig {
            epochs_stage1: 3,
            epochs_stage2: 20,
            batch_size: 4,
            optimizer: OptimizerConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let s1 = train_stage1(&c, &m, &t).unwrap();
        let s2 = train_stage2(&s1, &c, &t).unwrap();
        assert_eq!(s2.stage, 2);
        for ((name, a), (_, b)) in s1.params.tensors().into_iter().zip(s2.params.tensors()) {
            if !name.starts_with("iq_joint") {
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "{name} changed");
            }
        }
        let frozen = freeze_corpus(&s1.params, &c).unwrap();
        let before = mean_iq_loss(&s1.params.iq_joint, &frozen).unwrap();
        let after = mean_iq_loss(&s2.params.iq_joint, &frozen).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert!(train_stage2(&s2, &c, &t).is_err());
    }

    #[test]
    fn stage2_requires_augmented_targets() {
        let mut c = tiny_corpus(4);
        let m = tiny_model(&c);
        let t = TrainConfig {
            epochs_stage1: 0,
            ..Default::default()
        };
        let s1 = train_stage1(&c, &m, &t).unwrap();
        c.utterances[1].augmented_targets = None;
        assert!(matches!(train_stage2(&s1, &c, &t), Err(Error::Argument(_))));
        assert!(c.count(Intent::Intended) > 0);
    }

    #[test]
    fn divergence_names_the_step() {
        let c = tiny_corpus(4);
        let m = tiny_model(&c);
        let mut t = TrainConfig {
            epochs_stage1: 1,
            batch_size: 1,
            ..Default::default()
        };
        t.optimizer.learning_rate = f64::MAX;
        t.optimizer.clip_norm = None;
        match train_stage1(&c, &m, &t) {
            Err(Error::Training { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {:?}", other.map(|c| c.step)),
        }
    }
}
