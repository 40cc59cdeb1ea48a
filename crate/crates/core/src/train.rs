//! Mini-batch training loop, optimizers, gradient clipping, evaluation, and
//! best-checkpoint retention.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{build_forward, predict_encoded, Batch, ModelConfig, ModelParams};
use crate::tape::Tape;
use crate::text::{build_vocabularies, EncodedExample, LabelVocab, LabeledExample, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}' (expected sgd or adam)"))),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Fraction of the training set held out for validation when no
    /// explicit validation set is given; 0 disables the split.
    pub eval_split: f64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Stop once end-of-epoch training accuracy reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 42,
            eval_split: 0.1,
            clip_norm: Some(5.0),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.eval_split) {
            return Err(Error::Config("eval_split must lie in [0, 1)".into()));
        }
        if let Some(clip) = self.clip_norm {
            if clip <= 0.0 || !clip.is_finite() {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One row of the training trace.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: Option<f64>,
    pub val_macro_f1: Option<f64>,
    /// Seconds since training started; monotone across the trace.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<EpochStats>,
    /// Best validation macro F1 seen, when a validation set existed.
    pub best_val_f1: Option<f64>,
}

/// Seeded deterministic split into (train, validation).
pub fn split_train_val(
    examples: &[LabeledExample],
    eval_split: f64,
    seed: u64,
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    if eval_split <= 0.0 || examples.len() < 2 {
        return (examples.to_vec(), Vec::new());
    }
    let mut indices: Vec<usize> = (0..examples.len()).collect();
    // distinct stream from the training shuffle
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    indices.shuffle(&mut rng);
    let val_len = ((examples.len() as f64) * eval_split).round() as usize;
    let val_len = val_len.min(examples.len() - 1);
    let (val_idx, train_idx) = indices.split_at(val_len);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    (
        train_idx.iter().map(|&i| examples[i].clone()).collect(),
        val_idx.iter().map(|&i| examples[i].clone()).collect(),
    )
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

fn optimizer_step(
    params: &mut ModelParams,
    config: &TrainConfig,
    adam: &mut Option<AdamState>,
) -> Result<()> {
    // global-norm clip factor computed over every parameter gradient
    let mut scale = 1.0;
    if let Some(clip) = config.clip_norm {
        let mut sq_sum = 0.0;
        for (_, t) in params.named_tensors() {
            if let Some(g) = t.grad() {
                for &v in g {
                    sq_sum += v * v;
                }
            }
        }
        let norm = sq_sum.sqrt();
        if norm > clip {
            scale = clip / norm;
        }
    }

    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            for (_, tensor) in params.named_tensors_mut() {
                if let Some(g) = tensor.grad().map(<[f64]>::to_vec) {
                    for (p, gv) in tensor.data_mut().iter_mut().zip(g) {
                        *p -= lr * gv * scale;
                    }
                }
            }
        }
        Optimizer::Adam => {
            let state = adam.as_mut().expect("adam state initialized with optimizer");
            state.t += 1;
            let t = state.t as f64;
            let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_epsilon);
            let bias1 = 1.0 - b1.powf(t);
            let bias2 = 1.0 - b2.powf(t);
            for (idx, (_, tensor)) in params.named_tensors_mut().into_iter().enumerate() {
                let Some(g) = tensor.grad().map(<[f64]>::to_vec) else { continue };
                let m = &mut state.m[idx];
                let v = &mut state.v[idx];
                for (j, (p, gv)) in tensor.data_mut().iter_mut().zip(g).enumerate() {
                    let gv = gv * scale;
                    m[j] = b1 * m[j] + (1.0 - b1) * gv;
                    v[j] = b2 * v[j] + (1.0 - b2) * gv * gv;
                    let m_hat = m[j] / bias1;
                    let v_hat = v[j] / bias2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

/// Trains a model. When `vocabs` is `None` they are built from `train`;
/// passing prebuilt vocabularies lets ensemble members share one set.
/// `val` examples, when present, drive per-epoch macro F1 and best-epoch
/// checkpoint retention.
pub fn train_model(
    train: &[LabeledExample],
    val: Option<&[LabeledExample]>,
    vocabs: Option<(Vocabulary, Vocabulary, LabelVocab)>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    pretrained_words: Option<&HashMap<String, Vec<f64>>>,
) -> Result<TrainOutcome> {
    train_model_with_progress(
        train,
        val,
        vocabs,
        model_config,
        train_config,
        pretrained_words,
        |_| {},
    )
}

/// [`train_model`] with a per-epoch callback, for live logging.
pub fn train_model_with_progress(
    train: &[LabeledExample],
    val: Option<&[LabeledExample]>,
    vocabs: Option<(Vocabulary, Vocabulary, LabelVocab)>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    pretrained_words: Option<&HashMap<String, Vec<f64>>>,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    model_config.validate()?;
    train_config.validate()?;

    let (word_vocab, char_vocab, labels) = match vocabs {
        Some(v) => v,
        None => build_vocabularies(train, &model_config.pipeline)?,
    };
    let mut params = ModelParams::init(
        model_config.clone(),
        word_vocab,
        char_vocab,
        labels,
        train_config.seed,
        pretrained_words,
    )?;

    let train_encoded: Vec<EncodedExample> =
        train.iter().map(|e| params.encode_example(e)).collect::<Result<_>>()?;
    let val_encoded: Option<Vec<EncodedExample>> = match val {
        Some(v) if !v.is_empty() => {
            Some(v.iter().map(|e| params.encode_example(e)).collect::<Result<_>>()?)
        }
        _ => None,
    };
    let train_label_ids: Vec<usize> =
        train_encoded.iter().map(|e| e.label_id.expect("labeled")).collect();

    let mut adam = match train_config.optimizer {
        Optimizer::Adam => Some(AdamState {
            m: params.named_tensors().iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: params.named_tensors().iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            t: 0,
        }),
        Optimizer::Sgd => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut order: Vec<usize> = (0..train_encoded.len()).collect();
    let started = Instant::now();
    let mut trace = Vec::with_capacity(train_config.epochs);
    let mut best_val_f1: Option<f64> = None;
    let mut best_params: Option<ModelParams> = None;

    for epoch in 0..train_config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let examples: Vec<EncodedExample> =
                chunk.iter().map(|&i| train_encoded[i].clone()).collect();
            let batch = Batch::from_encoded(&examples, &params.config.pipeline)?;

            let mut tape = Tape::new();
            let forward = build_forward(&mut tape, &params, &batch)?;
            let loss_id = forward.loss.expect("training batches are labeled");
            let loss = tape.scalar_value(loss_id);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, batch: batch_idx + 1 });
            }
            loss_sum += loss * chunk.len() as f64;

            tape.backward(loss_id)?;
            for (name, id) in &forward.param_ids {
                let grad = tape.grad(*id)?;
                let (_, tensor) = params
                    .named_tensors_mut()
                    .into_iter()
                    .find(|(n, _)| n == name)
                    .expect("forward names mirror named_tensors");
                tensor.accumulate_grad(grad)?;
            }
            optimizer_step(&mut params, train_config, &mut adam)?;
            params.zero_grads();
        }
        let train_loss = loss_sum / train_encoded.len() as f64;

        let train_accuracy = if train_config.stop_at_train_accuracy.is_some() {
            let (predicted, _) = predict_encoded(&params, &train_encoded)?;
            let correct =
                predicted.iter().zip(&train_label_ids).filter(|(p, t)| p == t).count();
            Some(correct as f64 / train_label_ids.len() as f64)
        } else {
            None
        };

        let val_macro_f1 = match &val_encoded {
            Some(encoded) => {
                let truth: Vec<usize> =
                    encoded.iter().map(|e| e.label_id.expect("labeled")).collect();
                let (predicted, _) = predict_encoded(&params, encoded)?;
                let report = compute_metrics(&truth, &predicted, &params.labels)?;
                Some(report.macro_f1)
            }
            None => None,
        };

        // >= keeps the most-trained checkpoint among validation ties
        if let Some(f1) = val_macro_f1 {
            if best_val_f1.is_none_or(|best| f1 >= best) {
                best_val_f1 = Some(f1);
                best_params = Some(params.clone());
            }
        }

        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss,
            train_accuracy,
            val_macro_f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&stats);
        trace.push(stats);

        if let (Some(target), Some(acc)) = (train_config.stop_at_train_accuracy, train_accuracy) {
            if acc >= target {
                break;
            }
        }
    }

    Ok(TrainOutcome { params: best_params.unwrap_or(params), trace, best_val_f1 })
}

/// Convenience wrapper: splits off a seeded validation fraction, builds
/// vocabularies from the training portion only, and trains.
pub fn train(
    examples: &[LabeledExample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    pretrained_words: Option<&HashMap<String, Vec<f64>>>,
) -> Result<TrainOutcome> {
    train_config.validate()?;
    let (train_part, val_part) =
        split_train_val(examples, train_config.eval_split, train_config.seed);
    let val = if val_part.is_empty() { None } else { Some(val_part.as_slice()) };
    train_model(&train_part, val, None, model_config, train_config, pretrained_words)
}

/// Evaluates a trained model on labeled data. Every label must exist in the
/// model's label vocabulary; unseen ones are reported together.
pub fn evaluate(params: &ModelParams, data: &[LabeledExample]) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty data set".into()));
    }
    let mut unseen: Vec<&str> = data
        .iter()
        .map(|e| e.label.as_str())
        .filter(|l| params.labels.id(l).is_none())
        .collect();
    unseen.sort_unstable();
    unseen.dedup();
    if !unseen.is_empty() {
        return Err(Error::Data(format!(
            "labels not in the model's vocabulary: {}",
            unseen.join(", ")
        )));
    }

    let encoded: Vec<EncodedExample> =
        data.iter().map(|e| params.encode_example(e)).collect::<Result<_>>()?;
    let truth: Vec<usize> = encoded.iter().map(|e| e.label_id.expect("labeled")).collect();

    // fixed evaluation batch size; per-sentence results are independent
    let mut predicted = Vec::with_capacity(encoded.len());
    for chunk in encoded.chunks(64) {
        let (classes, _) = predict_encoded(params, chunk)?;
        predicted.extend(classes);
    }
    compute_metrics(&truth, &predicted, &params.labels)
}
