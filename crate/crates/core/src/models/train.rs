use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::EmbeddingMatrix;
use crate::neuralcore::{bce_with_logits, Mode, Optimizer, Tensor};
use crate::scalar::Scalar;

use super::data::LabeledFeatures;
use super::forest::{train_random_forest_ovr, ForestParams};
use super::linear::train_logreg_ovr;
use super::network::Network;
use super::parallel::worker_threads;
use super::spec::{ModelFamily, ModelSpec, TrainConfig};
use super::trained::{ModelBody, TrainedModel};
use super::{ModelError, ModelResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopSummary {
    pub history: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Anything that can run epochs and be checkpointed in memory.
pub trait Trainable {
    type Snapshot;

    /// Runs one epoch (1-based) and returns the mean training loss.
    fn train_epoch(&mut self, epoch: usize) -> ModelResult<f64>;

    fn validation_loss(&mut self) -> ModelResult<f64>;

    fn snapshot(&self) -> Self::Snapshot;

    fn restore(&mut self, snapshot: Self::Snapshot);
}

/// Trains until the validation loss has not improved for `patience`
/// consecutive epochs or `max_epochs` is reached, then restores the
/// parameters of the best epoch.
pub fn train_with_early_stopping<T: Trainable>(
    model: &mut T,
    max_epochs: usize,
    patience: usize,
) -> ModelResult<StopSummary> {
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, T::Snapshot)> = None;
    let mut wait = 0;
    for epoch in 1..=max_epochs {
        let train_loss = model.train_epoch(epoch)?;
        let val_loss = model.validation_loss()?;
        for (what, v) in [("training loss", train_loss), ("validation loss", val_loss)] {
            if !v.is_finite() {
                return Err(ModelError::NonFinite {
                    what: what.into(),
                    epoch,
                    batch: 0,
                });
            }
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        if best.as_ref().is_none_or(|b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.snapshot()));
            wait = 0;
        } else {
            wait += 1;
            if wait >= patience {
                info!("early stop after epoch {epoch}, best epoch {}", best.as_ref().map_or(0, |b| b.0));
                break;
            }
        }
    }
    let stopped_epoch = history.len();
    let (best_epoch, best_val_loss) = match best {
        Some((e, l, snap)) => {
            model.restore(snap);
            (e, l)
        }
        None => (0, f64::NAN),
    };
    Ok(StopSummary {
        history,
        stopped_epoch,
        best_epoch,
        best_val_loss,
    })
}

struct NetTrainer<'a, F: Scalar> {
    net: Network<F>,
    opt: Optimizer<F>,
    train: &'a LabeledFeatures<F>,
    val: &'a LabeledFeatures<F>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

fn targets<F: Scalar>(data: &LabeledFeatures<F>, rows: &[usize]) -> Tensor<F> {
    data.labels.select_rows(rows).to_tensor()
}

impl<F: Scalar> NetTrainer<'_, F> {
    fn mean_loss(&mut self, data: &LabeledFeatures<F>) -> ModelResult<f64> {
        let n = data.len();
        if n == 0 {
            return Ok(f64::NAN);
        }
        let idx: Vec<usize> = (0..n).collect();
        let mut total = 0.0;
        for chunk in idx.chunks(self.batch_size) {
            let z = self.net.forward(&data.features, chunk, Mode::Eval)?;
            let (loss, _, _) = bce_with_logits(&z, &targets(data, chunk))?;
            total += loss.to_f64_lossy() * chunk.len() as f64;
        }
        Ok(total / n as f64)
    }
}

impl<F: Scalar> Trainable for NetTrainer<'_, F> {
    type Snapshot = Vec<Tensor<F>>;

    fn train_epoch(&mut self, epoch: usize) -> ModelResult<f64> {
        let n = self.train.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (b, chunk) in idx.chunks(self.batch_size).enumerate() {
            self.net.zero_grad();
            let z = self.net.forward(&self.train.features, chunk, Mode::Train)?;
            let (loss, dz, _) = bce_with_logits(&z, &targets(self.train, chunk))?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(ModelError::NonFinite {
                    what: "training loss".into(),
                    epoch,
                    batch: b,
                });
            }
            self.net.backward(&dz)?;
            if self.net.params().iter().any(|p| !p.grad.all_finite()) {
                return Err(ModelError::NonFinite {
                    what: "gradient".into(),
                    epoch,
                    batch: b,
                });
            }
            self.opt.step(&mut self.net.params_mut())?;
            total += loss * chunk.len() as f64;
        }
        Ok(total / n as f64)
    }

    fn validation_loss(&mut self) -> ModelResult<f64> {
        if self.val.is_empty() {
            return self.mean_loss(self.train);
        }
        self.mean_loss(self.val)
    }

    fn snapshot(&self) -> Vec<Tensor<F>> {
        self.net.snapshot()
    }

    fn restore(&mut self, snapshot: Vec<Tensor<F>>) {
        self.net.restore(&snapshot);
    }
}

/// Trains `spec` on `train`, monitoring `val`. Sequence models need the
/// (frozen) embedding matrix the indices refer to. An empty `val` falls
/// back to monitoring the training loss.
pub fn fit<F: Scalar>(
    spec: &ModelSpec,
    train: &LabeledFeatures<F>,
    val: &LabeledFeatures<F>,
    cfg: &TrainConfig,
    embedding: Option<&EmbeddingMatrix<F>>,
) -> ModelResult<TrainedModel<F>> {
    spec.validate()?;
    cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::Empty);
    }
    let k = train.labels.cols();
    if !val.is_empty() && val.labels.cols() != k {
        return Err(ModelError::Shape("train and validation label counts differ".into()));
    }
    let kind = train.features.kind();
    if !spec.family.accepts(kind) {
        return Err(ModelError::Input(format!("{} cannot consume {kind:?} features", spec.family)));
    }
    let input = train.features.shape()?;
    let threads = worker_threads();
    match spec.family {
        ModelFamily::Logreg => {
            let (ovr, history) = train_logreg_ovr(
                &train.features,
                &train.labels,
                Some(val),
                spec.baseline.iterations,
                spec.baseline.learning_rate,
                threads,
            )?;
            let degenerate = ovr.degenerate_labels();
            Ok(TrainedModel {
                spec: spec.clone(),
                k,
                input,
                stopped_epoch: history.len(),
                best_epoch: history.len(),
                history,
                degenerate_labels: degenerate,
                body: ModelBody::Logreg(ovr),
            })
        }
        ModelFamily::Rforest => {
            let params = ForestParams::from_baseline(&spec.baseline, cfg.seed);
            let ovr = train_random_forest_ovr(&train.features, &train.labels, &params, threads)?;
            let degenerate = ovr.degenerate_labels();
            Ok(TrainedModel {
                spec: spec.clone(),
                k,
                input,
                history: Vec::new(),
                stopped_epoch: 0,
                best_epoch: 0,
                degenerate_labels: degenerate,
                body: ModelBody::Forest(ovr),
            })
        }
        _ => {
            let net = Network::new(spec, input, k, embedding.cloned(), cfg.seed)?;
            let mut trainer = NetTrainer {
                net,
                opt: Optimizer::new(cfg.optimizer),
                train,
                val,
                batch_size: cfg.batch_size,
                rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed),
            };
            let summary = train_with_early_stopping(&mut trainer, cfg.max_epochs, cfg.patience)?;
            let degenerate = (0..k)
                .filter(|&j| {
                    let c = train.labels.column(j);
                    c.iter().all(|&b| b) || c.iter().all(|&b| !b)
                })
                .collect();
            Ok(TrainedModel {
                spec: spec.clone(),
                k,
                input,
                history: summary.history,
                stopped_epoch: summary.stopped_epoch,
                best_epoch: summary.best_epoch,
                degenerate_labels: degenerate,
                body: ModelBody::Network(trainer.net),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Emits scripted validation losses; the "weights" are the epoch number.
    struct Scripted {
        losses: Vec<f64>,
        weights: usize,
        epoch: usize,
    }

    impl Trainable for Scripted {
        type Snapshot = usize;

        fn train_epoch(&mut self, epoch: usize) -> ModelResult<f64> {
            self.epoch = epoch;
            self.weights = epoch;
            Ok(1.0)
        }

        fn validation_loss(&mut self) -> ModelResult<f64> {
            Ok(self.losses[(self.epoch - 1).min(self.losses.len() - 1)])
        }

        fn snapshot(&self) -> usize {
            self.weights
        }

        fn restore(&mut self, s: usize) {
            self.weights = s;
        }
    }

    fn scripted(losses: &[f64]) -> Scripted {
        Scripted {
            losses: losses.to_vec(),
            weights: 0,
            epoch: 0,
        }
    }

    #[test]
    fn stops_at_patience() {
        let mut m = scripted(&[1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95]);
        let s = train_with_early_stopping(&mut m, 500, 5).unwrap();
        assert_eq!(s.stopped_epoch, 7);
        assert_eq!(s.best_epoch, 2);
        assert_eq!(m.weights, 2);
        assert_eq!(s.history.len(), 7);
    }

    #[test]
    fn patience_beyond_budget_runs_everything() {
        let mut m = scripted(&[1.0, 1.1, 1.2, 1.3]);
        let s = train_with_early_stopping(&mut m, 4, 4).unwrap();
        assert_eq!(s.stopped_epoch, 4);
        assert_eq!(m.weights, 1);
    }

    #[test]
    fn equal_loss_is_not_improvement() {
        let mut m = scripted(&[1.0, 1.0, 1.0]);
        let s = train_with_early_stopping(&mut m, 10, 2).unwrap();
        assert_eq!(s.stopped_epoch, 3);
        assert_eq!(s.best_epoch, 1);
    }

    #[test]
    fn nan_aborts() {
        let mut m = scripted(&[1.0, f64::NAN]);
        let e = train_with_early_stopping(&mut m, 10, 2).unwrap_err();
        assert!(matches!(e, ModelError::NonFinite { epoch: 2, .. }));
    }
}
