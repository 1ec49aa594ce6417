use super::metrics::EvalMetrics;
use super::network::{Architecture, Classifier};
use crate::dataset::{Label, LabeledSlice};
use crate::imaging::{center_crop, normalize, ValueRange};
use crate::seeding::rng_for;
use crate::{Error, Result};
use braingan_autograd::functional::cross_entropy;
use braingan_autograd::nn::ParamSet;
use braingan_autograd::optim::{Adam, AdamConfig};
use braingan_autograd::{no_grad, Tensor, TensorArchive, Var};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub architecture: Architecture,
    /// Stem channel count.
    pub width: usize,
    pub input_size: usize,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stopping_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl ClassifierConfig {
    pub fn paper(seed: u64) -> Self {
        ClassifierConfig {
            architecture: Architecture::Resnet50Like,
            width: 64,
            input_size: 224,
            dropout_rate: 0.5,
            batch_size: 192,
            learning_rate: 1e-3,
            early_stopping_patience: 10,
            max_epochs: 100,
            seed,
        }
    }

    pub fn desk(seed: u64) -> Self {
        ClassifierConfig {
            architecture: Architecture::SmallResnet,
            width: 8,
            input_size: 64,
            batch_size: 32,
            early_stopping_patience: 4,
            max_epochs: 12,
            ..Self::paper(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.early_stopping_patience == 0 || self.max_epochs == 0 {
            return bad("patience and max_epochs must be at least 1");
        }
        if self.batch_size < 2 || self.width == 0 || self.input_size < 8 {
            return bad("batch_size >= 2, width >= 1 and input_size >= 8 required");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    fn build(&self, rng: &mut ChaCha8Rng) -> Result<Classifier> {
        Classifier::new(self.architecture, self.width, self.dropout_rate, rng)
    }
}

/// Center-crops to `size` and maps into model range.
pub fn preprocess(slice: &LabeledSlice, size: usize) -> Result<Vec<f64>> {
    let img = center_crop(&slice.image, size, size)?;
    let img = match img.range() {
        ValueRange::Model => img,
        ValueRange::Storage => normalize(&img, ValueRange::Model)?,
    };
    Ok(img.into_pixels())
}

fn to_batch(slices: &[LabeledSlice], size: usize) -> Result<(Tensor, Vec<usize>)> {
    let mut data = Vec::with_capacity(slices.len() * size * size);
    for s in slices {
        data.extend(preprocess(s, size)?);
    }
    let labels = slices.iter().map(|s| s.label.class_index()).collect();
    Ok((Tensor::new(vec![slices.len(), 1, size, size], data), labels))
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let per = t.len() / t.shape()[0];
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data)
}

const EVAL_BATCH: usize = 64;

fn predict_tensor(model: &Classifier, x: &Tensor) -> Vec<Label> {
    let _guard = no_grad();
    let b = model.params.bind_frozen();
    let n = x.shape()[0];
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(EVAL_BATCH) {
        let len = EVAL_BATCH.min(n - start);
        let (logits, _) = model.forward::<ChaCha8Rng>(&b, &Var::constant(x.slice_outer(start, len)), None);
        // Ties resolve to non-tumor.
        out.extend(logits.value().data().chunks(2).map(|l| {
            if l[1] > l[0] {
                Label::Tumor
            } else {
                Label::NonTumor
            }
        }));
    }
    out
}

/// One unit of early-stopped training.
pub trait EpochModel {
    type Snapshot: Clone;
    /// Runs one epoch and returns its mean training loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;
    fn validation_accuracy(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct EarlyStopOutcome<S> {
    pub best: S,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub log: Vec<EpochLog>,
}

/// Trains until validation accuracy has not strictly improved for
/// `patience` consecutive epochs, returning the best snapshot.
pub fn run_early_stopping<M: EpochModel>(
    model: &mut M,
    patience: usize,
    max_epochs: usize,
) -> Result<EarlyStopOutcome<M::Snapshot>> {
    if patience == 0 || max_epochs == 0 {
        return Err(Error::InvalidArgument("patience and max_epochs must be at least 1".into()));
    }
    let mut best = None;
    let (mut best_epoch, mut best_acc, mut stale) = (0, f64::NEG_INFINITY, 0);
    let mut log = Vec::new();
    for epoch in 0..max_epochs {
        let train_loss = model.train_epoch(epoch)?;
        let val_accuracy = model.validation_accuracy()?;
        let improved = val_accuracy > best_acc;
        if improved {
            best = Some(model.snapshot());
            best_epoch = epoch;
            best_acc = val_accuracy;
            stale = 0;
        } else {
            stale += 1;
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_accuracy,
            improved,
        });
        if stale >= patience {
            break;
        }
    }
    Ok(EarlyStopOutcome {
        best: best.expect("first epoch always improves"),
        best_epoch,
        best_val_accuracy: best_acc,
        log,
    })
}

struct Run<'a> {
    cfg: &'a ClassifierConfig,
    model: Classifier,
    opt: Adam,
    rng: ChaCha8Rng,
    train_x: Tensor,
    train_y: Vec<usize>,
    val_x: Tensor,
    val_y: Vec<usize>,
}

impl EpochModel for Run<'_> {
    type Snapshot = ParamSet;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let n = self.train_y.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let (mut total, mut batches) = (0.0, 0);
        // Batch norm needs two samples; a trailing singleton is skipped.
        for idx in order.chunks(self.cfg.batch_size).filter(|c| c.len() >= 2) {
            let x = Var::constant(gather(&self.train_x, idx));
            let y: Vec<usize> = idx.iter().map(|&i| self.train_y[i]).collect();
            let b = self.model.params.bind();
            let (logits, updates) = self.model.forward(&b, &x, Some(&mut self.rng));
            let loss = cross_entropy(&logits, &y);
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    iteration: epoch,
                    what: "classifier loss".into(),
                });
            }
            let grads = b.param_grads(&loss, &self.model.params);
            self.opt.step(&mut self.model.params, &grads);
            for u in &updates {
                u.apply(&mut self.model.params);
            }
            total += value;
            batches += 1;
        }
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }

    fn validation_accuracy(&mut self) -> Result<f64> {
        let pred = predict_tensor(&self.model, &self.val_x);
        let correct = pred
            .iter()
            .zip(&self.val_y)
            .filter(|(p, &y)| p.class_index() == y)
            .count();
        Ok(correct as f64 / self.val_y.len() as f64)
    }

    fn snapshot(&self) -> ParamSet {
        self.model.params.clone()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub config: ClassifierConfig,
    pub model: Classifier,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub log: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    config: ClassifierConfig,
    best_epoch: usize,
    best_val_accuracy: f64,
    log: Vec<EpochLog>,
}

const FORMAT: &str = "braingan-classifier";

impl TrainedClassifier {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = Meta {
            format: FORMAT.into(),
            config: self.config.clone(),
            best_epoch: self.best_epoch,
            best_val_accuracy: self.best_val_accuracy,
            log: self.log.clone(),
        };
        let mut ar = TensorArchive::new(serde_json::to_value(meta)?);
        ar.extend_prefixed("", self.model.params.named_tensors());
        Ok(ar.save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ar = TensorArchive::load(path)?;
        let meta: Meta = serde_json::from_value(ar.meta.clone())?;
        if meta.format != FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format {:?}", meta.format)));
        }
        let mut model = meta.config.build(&mut rng_for(0, &[]))?;
        model.params.load_named(&ar.tensors).map_err(Error::Checkpoint)?;
        Ok(TrainedClassifier {
            config: meta.config,
            model,
            best_epoch: meta.best_epoch,
            best_val_accuracy: meta.best_val_accuracy,
            log: meta.log,
        })
    }
}

/// Adam training with early stopping on validation accuracy. Initial
/// weights depend only on `cfg.seed`.
pub fn train_classifier(
    cfg: &ClassifierConfig,
    train: &[LabeledSlice],
    val: &[LabeledSlice],
) -> Result<TrainedClassifier> {
    cfg.validate()?;
    for label in Label::ALL {
        if !train.iter().any(|s| s.label == label) {
            return Err(Error::Dataset(format!("training store has no {label} slices")));
        }
    }
    if val.is_empty() {
        return Err(Error::Dataset("validation store is empty".into()));
    }
    let model = cfg.build(&mut rng_for(cfg.seed, &[0xC1A55, 0]))?;
    let (train_x, train_y) = to_batch(train, cfg.input_size)?;
    let (val_x, val_y) = to_batch(val, cfg.input_size)?;
    let mut run = Run {
        cfg,
        model,
        opt: Adam::new(AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        }),
        rng: rng_for(cfg.seed, &[0xC1A55, 1]),
        train_x,
        train_y,
        val_x,
        val_y,
    };
    let outcome = run_early_stopping(&mut run, cfg.early_stopping_patience, cfg.max_epochs)?;
    let mut model = run.model;
    model.params = outcome.best;
    Ok(TrainedClassifier {
        config: cfg.clone(),
        model,
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_val_accuracy,
        log: outcome.log,
    })
}

/// Argmax labels in eval mode.
pub fn predict(model: &TrainedClassifier, slices: &[LabeledSlice]) -> Result<Vec<Label>> {
    if slices.is_empty() {
        return Ok(Vec::new());
    }
    let (x, _) = to_batch(slices, model.config.input_size)?;
    Ok(predict_tensor(&model.model, &x))
}

pub fn evaluate(model: &TrainedClassifier, test: &[LabeledSlice]) -> Result<EvalMetrics> {
    if test.is_empty() {
        return Err(Error::Dataset("test store is empty".into()));
    }
    let pred = predict(model, test)?;
    Ok(EvalMetrics::from_predictions(test.iter().map(|s| s.label).zip(pred)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;
    use crate::imaging::Image;

    struct Constant {
        epochs: usize,
    }

    impl EpochModel for Constant {
        type Snapshot = usize;
        fn train_epoch(&mut self, _: usize) -> Result<f64> {
            self.epochs += 1;
            Ok(1.0)
        }
        fn validation_accuracy(&mut self) -> Result<f64> {
            Ok(0.5)
        }
        fn snapshot(&self) -> usize {
            self.epochs
        }
    }

    struct Scripted {
        accs: Vec<f64>,
        i: usize,
    }

    impl EpochModel for Scripted {
        type Snapshot = usize;
        fn train_epoch(&mut self, e: usize) -> Result<f64> {
            self.i = e;
            Ok(0.0)
        }
        fn validation_accuracy(&mut self) -> Result<f64> {
            Ok(self.accs[self.i])
        }
        fn snapshot(&self) -> usize {
            self.i
        }
    }

    #[test]
    fn patience_one_stops_after_first_stale_epoch() {
        let mut m = Constant { epochs: 0 };
        let out = run_early_stopping(&mut m, 1, 50).unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!((out.best, out.best_epoch), (1, 0));
    }

    #[test]
    fn best_snapshot_is_returned() {
        let mut m = Scripted {
            accs: vec![0.5, 0.7, 0.6, 0.7, 0.65, 0.9],
            i: 0,
        };
        let out = run_early_stopping(&mut m, 3, 10).unwrap();
        assert_eq!(out.log.len(), 5);
        assert_eq!((out.best, out.best_val_accuracy), (1, 0.7));
        assert!(out.log.iter().all(|l| l.val_accuracy <= out.best_val_accuracy));
        let mut m = Scripted {
            accs: vec![0.5, 0.7, 0.6, 0.7, 0.65, 0.9],
            i: 0,
        };
        assert_eq!(run_early_stopping(&mut m, 10, 3).unwrap().log.len(), 3);
    }

    fn blob_set(n: usize, seed: u64) -> Vec<LabeledSlice> {
        use rand::Rng;
        let mut rng = rng_for(seed, &[]);
        (0..n)
            .map(|i| {
                let tumor = i % 2 == 0;
                let (cr, cc) = (rng.random_range(4.0..12.0), rng.random_range(4.0..12.0));
                let img = Image::from_fn(16, 16, ValueRange::Storage, |r, c| {
                    let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                    let base = 60.0 + rng_free_noise(i, r, c);
                    if tumor && d2 < 6.0 { 240.0 } else { base }
                })
                .unwrap();
                let label = if tumor { Label::Tumor } else { Label::NonTumor };
                LabeledSlice::synthetic(img, label, Provenance::Real)
            })
            .collect()
    }

    fn rng_free_noise(i: usize, r: usize, c: usize) -> f64 {
        ((i * 31 + r * 17 + c * 7) % 13) as f64
    }

    fn toy_cfg() -> ClassifierConfig {
        ClassifierConfig {
            width: 4,
            input_size: 16,
            batch_size: 20,
            max_epochs: 20,
            early_stopping_patience: 20,
            learning_rate: 3e-3,
            dropout_rate: 0.0,
            ..ClassifierConfig::desk(3)
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let train = blob_set(200, 1);
        let val = blob_set(40, 2);
        let model = train_classifier(&toy_cfg(), &train, &val).unwrap();
        let m = evaluate(&model, &train).unwrap();
        assert!(m.accuracy >= 0.95, "{m:?}");
    }

    #[test]
    fn training_is_deterministic_and_reloadable() {
        let train = blob_set(40, 4);
        let val = blob_set(10, 5);
        let mut cfg = toy_cfg();
        cfg.max_epochs = 2;
        cfg.dropout_rate = 0.5;
        let a = train_classifier(&cfg, &train, &val).unwrap();
        let b = train_classifier(&cfg, &train, &val).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.log, b.log);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.ckpt");
        a.save(&path).unwrap();
        let back = TrainedClassifier::load(&path).unwrap();
        assert_eq!(back.model.params, a.model.params);
        assert_eq!(evaluate(&back, &val).unwrap(), evaluate(&a, &val).unwrap());
    }

    #[test]
    fn degenerate_training_store_rejected() {
        let only: Vec<LabeledSlice> = blob_set(10, 0).into_iter().filter(|s| s.label == Label::Tumor).collect();
        assert!(train_classifier(&toy_cfg(), &only, &blob_set(4, 1)).is_err());
        assert!(train_classifier(&toy_cfg(), &blob_set(10, 0), &[]).is_err());
    }
}
