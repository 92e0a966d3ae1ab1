//! Teacher-forced training with Adam, global-norm clipping, early stopping
//! and checkpoints.

mod adam;
mod checkpoint;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, write_checkpoint, CheckpointFile, CheckpointMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, Batch};
use crate::decoder::{multilayer_loss, Decoder, LossBreakdown, VideoInput};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Stop as soon as the epoch's mean training loss falls below this.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 100,
            clip_norm: 5.0,
            patience: 10,
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", a.lr)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

/// One training caption and the video it describes.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub video: &'a VideoInput,
    /// `[BOS, w_1, …, w_k, EOS]`.
    pub caption: &'a [usize],
}

/// Loss of one caption, built on `tape`.
pub fn caption_loss(
    decoder: &Decoder,
    tape: &mut Tape,
    bound: &BoundParams,
    video: &VideoInput,
    caption: &[usize],
) -> Result<LossBreakdown> {
    let steps = decoder.teacher_forced(tape, bound, video, caption)?;
    multilayer_loss(tape, &steps, &caption[1..], &decoder.head_weights())
}

/// Summed loss of a padded batch plus the gradient of its mean, each item on
/// its own tape. Masked positions are dropped before decoding.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss_sum: f64,
    pub component_sums: Vec<f64>,
    pub grads: Vec<Tensor>,
}

pub fn batch_loss(
    decoder: &Decoder,
    params: &ParamSet,
    items: &[TrainItem<'_>],
    batch: &Batch,
    with_grads: bool,
) -> Result<BatchResult> {
    let heads = decoder.head_weights().len();
    let mut out = BatchResult {
        loss_sum: 0.0,
        component_sums: vec![0.0; heads],
        grads: if with_grads {
            params.values().iter().map(|t| Tensor::zeros(t.shape())).collect()
        } else {
            Vec::new()
        },
    };
    let scale = 1.0 / batch.len() as f64;
    for (row, &idx) in batch.items.iter().enumerate() {
        let caption: Vec<usize> = batch.tokens[row]
            .iter()
            .zip(&batch.mask[row])
            .filter(|(_, &m)| m)
            .map(|(&t, _)| t)
            .collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let loss = caption_loss(decoder, &mut tape, &bound, items[idx].video, &caption)?;
        out.loss_sum += tape.value(loss.total).data()[0];
        for (s, c) in out.component_sums.iter_mut().zip(&loss.components) {
            *s += c;
        }
        if with_grads {
            let g = tape.backward_scaled(loss.total, scale)?;
            for (acc, gi) in out.grads.iter_mut().zip(params.gradients(&tape, &bound, &g)) {
                acc.data_mut().iter_mut().zip(gi.data()).for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean weighted loss per caption.
    pub loss: f64,
    /// Mean per-head loss, in head order.
    pub components: Vec<f64>,
    /// Mean pre-clip gradient norm over batches.
    pub grad_norm: f64,
    pub val_loss: Option<f64>,
}

/// One pass over `items` in the order given by `(seed, epoch)`.
pub fn train_epoch(
    decoder: &Decoder,
    params: &mut ParamSet,
    state: &mut AdamState,
    items: &[TrainItem<'_>],
    config: &TrainConfig,
    seed: u64,
    epoch: usize,
) -> Result<EpochStats> {
    if items.is_empty() {
        return Err(Error::EmptyInput { op: "train_epoch" });
    }
    let captions: Vec<Vec<usize>> = items.iter().map(|i| i.caption.to_vec()).collect();
    let batches = batch_iter(&captions, config.batch_size, seed, epoch as u64)?;
    let heads = decoder.head_weights().len();
    let mut loss = 0.0;
    let mut components = vec![0.0; heads];
    let mut norm_sum = 0.0;
    for batch in &batches {
        let mut r = batch_loss(decoder, params, items, batch, true)?;
        loss += r.loss_sum;
        components.iter_mut().zip(&r.component_sums).for_each(|(a, b)| *a += b);
        norm_sum += clip_global_norm(&mut r.grads, config.clip_norm);
        adam_step(params, &r.grads, state)?;
    }
    let n = items.len() as f64;
    Ok(EpochStats {
        epoch,
        loss: loss / n,
        components: components.into_iter().map(|c| c / n).collect(),
        grad_norm: norm_sum / batches.len() as f64,
        val_loss: None,
    })
}

/// Mean loss and per-head components without gradients.
pub fn evaluate_loss(decoder: &Decoder, params: &ParamSet, items: &[TrainItem<'_>]) -> Result<(f64, Vec<f64>)> {
    if items.is_empty() {
        return Err(Error::EmptyInput { op: "evaluate_loss" });
    }
    let captions: Vec<Vec<usize>> = items.iter().map(|i| i.caption.to_vec()).collect();
    let batch = Batch {
        items: (0..items.len()).collect(),
        lengths: captions.iter().map(Vec::len).collect(),
        mask: captions.iter().map(|c| vec![true; c.len()]).collect(),
        tokens: captions,
    };
    let r = batch_loss(decoder, params, items, &batch, false)?;
    let n = items.len() as f64;
    Ok((r.loss_sum / n, r.component_sums.into_iter().map(|c| c / n).collect()))
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub history: Vec<EpochStats>,
    /// Parameters at the best validation epoch, or the last epoch without
    /// validation data.
    pub best_params: ParamSet,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub state: AdamState,
}

/// Runs up to `config.epochs` epochs. `on_epoch` sees every epoch's stats as
/// soon as they are known.
pub fn fit(
    decoder: &Decoder,
    mut params: ParamSet,
    train: &[TrainItem<'_>],
    val: &[TrainItem<'_>],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<FitOutcome> {
    config.validate()?;
    let seed = decoder.config().seed;
    let mut state = AdamState::new(config.adam, &params);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let mut stats = train_epoch(decoder, &mut params, &mut state, train, config, seed, epoch)?;
        if !val.is_empty() {
            let (v, _) = evaluate_loss(decoder, &params, val)?;
            stats.val_loss = Some(v);
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, params.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        on_epoch(&stats);
        let reached = config.target_loss.is_some_and(|t| stats.loss < t);
        history.push(stats);
        if reached || stale >= config.patience {
            break;
        }
    }
    let last = history.len();
    Ok(match best {
        Some((v, epoch, p)) => FitOutcome {
            history,
            best_params: p,
            best_epoch: epoch,
            best_val_loss: Some(v),
            state,
        },
        None => FitOutcome {
            history,
            best_params: params,
            best_epoch: last,
            best_val_loss: None,
            state,
        },
    })
}
