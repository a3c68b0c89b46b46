use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentConfig, Prepared};
use crate::error::{usage_err, Error, Result};
use crate::layers::softmax_xent;
use crate::model::{LayerParams, ModelParams, Mode};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use crate::train::sgd::{sgd_step, OptimizerState, SgdConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub epochs: usize,
    /// Random transform per training image; `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
    /// Worker count for the per-sample fan-out inside a batch. Results do
    /// not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { sgd: SgdConfig::default(), epochs: 150, augment: Some(AugmentConfig::default()), threads: 1 }
    }
}

/// One JSON-lines metrics record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training-mode forward passes (with dropout and
    /// augmentation) seen during the epoch.
    pub train_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_acc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub params: ModelParams<S>,
    pub history: Vec<EpochMetrics>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy and confusion matrix with dropout off and no augmentation.
pub fn evaluate<S: Scalar>(params: &ModelParams<S>, set: &Prepared<S>) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(usage_err!("cannot evaluate on an empty dataset"));
    }
    let k = params.n_classes();
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= k) {
        return Err(usage_err!("label {bad} is outside the model's {k} outputs"));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    let positions: Vec<usize> = (0..set.len()).collect();
    for chunk in positions.chunks(64) {
        let probs = params.predict(set.batch(chunk)?)?;
        for (row, &p) in probs.data().chunks_exact(k).zip(chunk) {
            let pred = crate::tensor::first_argmax(row).expect("k >= 2");
            confusion[set.labels[p]][pred] += 1;
        }
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation { accuracy: correct as f64 / set.len() as f64, confusion })
}

struct SampleResult<S> {
    grads: Vec<LayerParams<S>>,
    loss: f64,
    correct: bool,
}

/// Forward and backward for one sample, with the loss gradient divided by
/// the batch length so that summed sample gradients give the batch mean.
fn sample_step<S: Scalar>(
    params: &ModelParams<S>,
    image: &Tensor<S>,
    label: usize,
    batch_len: usize,
    mut rng: Rng,
) -> Result<SampleResult<S>> {
    let (logits, cache) = params.forward(image.clone(), Mode::Train(&mut rng))?;
    let out = softmax_xent(&logits, &[label])?;
    if !out.loss.is_finite() {
        return Err(Error::Numeric("training loss is not finite".into()));
    }
    let correct = crate::tensor::first_argmax(out.probs.data()) == Some(label);
    let grad = out.grad.scale(S::from_f64(1.0 / batch_len as f64));
    let grads = params.backward(cache, grad)?;
    Ok(SampleResult { grads, loss: out.loss, correct })
}

fn accumulate<S: Scalar>(total: &mut [LayerParams<S>], part: &[LayerParams<S>]) -> Result<()> {
    for (t, p) in total.iter_mut().zip(part) {
        if let (Some(a), Some(b)) = (t.weight.as_mut(), p.weight.as_ref()) {
            a.add_scaled(b, S::one())?;
        }
        if let (Some(a), Some(b)) = (t.bias.as_mut(), p.bias.as_ref()) {
            a.add_scaled(b, S::one())?;
        }
    }
    Ok(())
}

/// Mini-batch SGD over `train_set`.
///
/// Every epoch reshuffles the set, walks it in batches (the last one may be
/// short), augments each image when configured, and applies one SGD step per
/// batch. With a validation set the parameters of the epoch with the best
/// validation accuracy are returned (ties go to the earlier epoch);
/// otherwise those of the last epoch. `hook` sees every epoch's metrics and
/// may stop training early.
pub fn train<S: Scalar>(
    params: ModelParams<S>,
    train_set: &Prepared<S>,
    valid_set: Option<&Prepared<S>>,
    cfg: &TrainConfig,
    rng: &mut Rng,
    hook: &mut dyn FnMut(&EpochMetrics, &ModelParams<S>) -> Control,
) -> Result<TrainOutcome<S>> {
    if train_set.is_empty() {
        return Err(usage_err!("training set is empty"));
    }
    if cfg.epochs == 0 || cfg.sgd.batch_size == 0 {
        return Err(usage_err!("epochs and batch size must be positive"));
    }
    if let Some(aug) = &cfg.augment {
        aug.validate().map_err(Error::Usage)?;
    }
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| usage_err!("cannot start {} workers: {e}", cfg.threads))?,
        )
    } else {
        None
    };

    let mut params = params;
    let mut state = OptimizerState::new(&params, cfg.sgd.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams<S>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.sgd.batch_size) {
            let images: Vec<Tensor<S>> = batch
                .iter()
                .map(|&i| match &cfg.augment {
                    Some(aug) => augment(&train_set.images[i], aug, rng),
                    None => train_set.images[i].clone(),
                })
                .collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let step_rng = Rng::new(rng.next_u64());

            // Sample i of the batch always draws from step_rng.child(i) and
            // gradients are summed in batch order, so the worker count does
            // not change the result.
            let run = |i: usize| sample_step(&params, &images[i], labels[i], batch.len(), step_rng.child(i as u64));
            let mut grads: Option<Vec<LayerParams<S>>> = None;
            let wave = cfg.threads.max(1);
            for start in (0..batch.len()).step_by(wave) {
                let idx: Vec<usize> = (start..(start + wave).min(batch.len())).collect();
                let results: Vec<Result<SampleResult<S>>> = match &pool {
                    Some(pool) => pool.install(|| {
                        use rayon::prelude::*;
                        idx.par_iter().map(|&i| run(i)).collect()
                    }),
                    None => idx.iter().map(|&i| run(i)).collect(),
                };
                for r in results {
                    let r = r?;
                    loss_sum += r.loss;
                    correct += r.correct as usize;
                    match grads.as_mut() {
                        None => grads = Some(r.grads),
                        Some(g) => accumulate(g, &r.grads)?,
                    }
                }
            }
            let grads = grads.expect("nonempty batch");
            sgd_step(&mut params, &grads, &mut state)?;
        }

        let valid_acc = valid_set.map(|v| evaluate(&params, v)).transpose()?.map(|e| e.accuracy);
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            valid_acc,
        };
        if let Some(acc) = valid_acc {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, params.clone()));
            }
        }
        params.meta.epochs = epoch;
        history.push(metrics);
        if hook(history.last().expect("pushed"), &params) == Control::Stop {
            break;
        }
    }

    Ok(match best {
        Some((_, epoch, p)) => TrainOutcome { params: p, history, best_epoch: epoch },
        None => {
            let last = history.len();
            TrainOutcome { params, history, best_epoch: last }
        }
    })
}
