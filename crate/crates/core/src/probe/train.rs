use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{Clip, Dataset};
use super::model::{argmax, ProbeConfig, ProbeModel};
use crate::tensor::{derive_seed, seeded, softmax};
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Written after the last epoch when set.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            lr: 0.5,
            batch_size: 16,
            seed: 0,
            checkpoint: None,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Running averages over the epoch's mini-batches, before each update.
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

/// Gaps `max_k |logits(clip)_k − logits(reverse(clip))_k|`, one per reversal pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub pairs: usize,
    pub max_gap: f64,
    pub min_gap: f64,
    pub gaps: Vec<f64>,
}

impl PairedReport {
    /// Share of pairs whose gap exceeds `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        if self.gaps.is_empty() {
            return 0.0;
        }
        self.gaps.iter().filter(|&&g| g > threshold).count() as f64 / self.gaps.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: ProbeConfig,
    pub options: TrainOptions,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    /// Paired-logit test on the held-out clips after training.
    pub paired: PairedReport,
}

impl TrainReport {
    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

/// Mean loss and accuracy over `clips`.
pub fn evaluate(model: &ProbeModel, clips: &[Clip]) -> Result<(f64, f64)> {
    if clips.is_empty() {
        return Ok((0.0, 0.0));
    }
    let scored = par::map_indices(clips.len(), |i| -> Result<(f64, bool)> {
        let logits = model.logits(&clips[i].data)?;
        let label = clips[i].label.index();
        let p = softmax(&logits);
        Ok((-p[label].max(f64::MIN_POSITIVE).ln(), argmax(&logits) == label))
    });
    let (mut loss, mut hits) = (0.0, 0usize);
    for s in scored {
        let (l, ok) = s?;
        loss += l;
        hits += ok as usize;
    }
    let n = clips.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Logit gaps between each distinct pair's clip and its time reversal.
pub fn paired_logit_test(model: &ProbeModel, clips: &[Clip]) -> Result<PairedReport> {
    let mut seen = std::collections::BTreeSet::new();
    let firsts: Vec<&Clip> = clips.iter().filter(|c| seen.insert(c.pair)).collect();
    let gaps = par::map_indices(firsts.len(), |i| -> Result<f64> {
        let a = model.logits(&firsts[i].data)?;
        let b = model.logits(&firsts[i].data.reverse_time())?;
        Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(PairedReport {
        pairs: gaps.len(),
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
        gaps,
    })
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged { epoch, loss: f64::NAN },
        e => e,
    }
}

fn finite(model: &ProbeModel) -> bool {
    model
        .tensors()
        .iter()
        .all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
}

/// Plain mini-batch gradient descent on softmax cross-entropy.
///
/// Clip order is reshuffled every epoch from `options.seed`; per-clip
/// gradients are summed in batch order, so runs are bitwise reproducible.
pub fn train(config: ProbeConfig, data: &Dataset, options: &TrainOptions) -> Result<(ProbeModel, TrainReport)> {
    options.validate()?;
    let mut model = ProbeModel::new(config, options.seed)?;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epochs = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        order.shuffle(&mut seeded(derive_seed(options.seed, 1000 + epoch as u64)));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(options.batch_size) {
            let results = par::map_indices(batch.len(), |j| model.clip_grad(&data.train[batch[j]]));
            let mut total: Option<Vec<_>> = None;
            for r in results {
                let g = r.map_err(|e| diverged(e, epoch))?;
                if !g.loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss: g.loss });
                }
                loss_sum += g.loss;
                hits += g.correct as usize;
                match &mut total {
                    None => total = Some(g.grads),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g.grads) {
                            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let step = options.lr / batch.len() as f64;
            for (w, g) in model.tensors_mut().into_iter().zip(total.unwrap_or_default()) {
                w.data_mut().iter_mut().zip(g.data()).for_each(|(x, d)| *x -= step * d);
            }
            if !finite(&model) {
                return Err(Error::Diverged { epoch, loss: f64::NAN });
            }
        }
        let n = data.train.len().max(1) as f64;
        let (test_loss, test_acc) = evaluate(&model, &data.test).map_err(|e| diverged(e, epoch))?;
        if !test_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: test_loss });
        }
        epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: hits as f64 / n,
            test_loss,
            test_acc,
        });
    }
    let paired = paired_logit_test(&model, &data.test)?;
    if let Some(path) = &options.checkpoint {
        super::checkpoint::save(&model, path)?;
    }
    let report = TrainReport {
        config,
        options: options.clone(),
        seed: options.seed,
        epochs,
        paired,
    };
    Ok((model, report))
}
