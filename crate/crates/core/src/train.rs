//! The training loop: weighted cross-entropy, momentum SGD with step decay,
//! per-epoch validation AUROC and best-epoch selection.

use alloc::string::String;
use alloc::vec::Vec;

use crate::loss::batch_loss;
use crate::metrics::{macro_auroc, to_f64};
use crate::model::ModelBundle;
use crate::optim::{lr_at_epoch, Sgd};
use crate::preprocess::{PreprocessConfig, RgbImage};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::weights::ClassWeights;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    /// `None` means median-frequency weights computed from the training
    /// targets.
    pub class_weights: Option<ClassWeights>,
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay_factor: 0.1,
            lr_decay_every: 10,
            seed: 0,
            class_weights: None,
            repeats: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(alloc::format!("training config: {what}")));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must lie in (0, 1]");
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be positive");
        }
        if self.repeats == 0 {
            return bad("repeats must be positive");
        }
        if let Some(w) = &self.class_weights {
            if w.0.iter().any(|v| !(*v > 0.0)) {
                return bad("class weights must be positive");
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at_epoch(self.lr, self.lr_decay_factor, self.lr_decay_every, epoch)
    }

    /// Seeds of the repeated runs: `seed, seed + 1, …`.
    pub fn repeat_seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Absent when the validation targets hold a single class.
    pub val_auroc: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunLog {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Checkpoints still on record: the best epoch and the last epoch.
    pub checkpoints: Vec<Checkpoint>,
}

/// Epoch with the highest validation AUROC, earliest on ties. Epochs with
/// undefined AUROC never win over a defined one; if none is defined the
/// first epoch is chosen.
pub fn best_epoch(records: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<&EpochRecord> = None;
    for r in records {
        let better = match best {
            None => true,
            Some(b) => match (r.val_auroc, b.val_auroc) {
                (Some(x), Some(y)) => x > y,
                (Some(_), None) => true,
                _ => false,
            },
        };
        if better {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
}

/// Checkpoint id of the best epoch.
pub fn select_best(log: &RunLog) -> Result<&str> {
    let best = log.best_epoch.ok_or(Error::NoCheckpoints)?;
    log.checkpoints.iter().find(|c| c.epoch == best).map(|c| c.id.as_str()).ok_or(Error::NoCheckpoints)
}

/// Indexed access to preprocessed training or evaluation samples.
pub trait Samples {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `(3, H, W)` network input for sample `index`; `augment` carries
    /// the seed of a train-mode augmentation draw.
    fn image(&self, index: usize, augment: Option<u64>) -> Result<Tensor>;

    fn target(&self, index: usize) -> usize;

    fn aux(&self, index: usize) -> Option<&[f32]>;
}

/// Decoded images held in memory, preprocessed on access.
#[derive(Clone, Debug)]
pub struct InMemorySamples {
    pub images: Vec<RgbImage>,
    pub targets: Vec<usize>,
    pub aux: Option<Vec<Vec<f32>>>,
    pub preprocess: PreprocessConfig,
}

impl InMemorySamples {
    pub fn new(
        images: Vec<RgbImage>,
        targets: Vec<usize>,
        aux: Option<Vec<Vec<f32>>>,
        preprocess: PreprocessConfig,
    ) -> Result<Self> {
        if images.len() != targets.len() {
            return Err(Error::LengthMismatch(images.len(), targets.len()));
        }
        if let Some(a) = &aux {
            if a.len() != images.len() {
                return Err(Error::LengthMismatch(a.len(), images.len()));
            }
        }
        Ok(Self { images, targets, aux, preprocess })
    }
}

impl Samples for InMemorySamples {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn image(&self, index: usize, augment: Option<u64>) -> Result<Tensor> {
        self.preprocess.apply(&self.images[index], augment)
    }

    fn target(&self, index: usize) -> usize {
        self.targets[index]
    }

    fn aux(&self, index: usize) -> Option<&[f32]> {
        self.aux.as_ref().map(|a| a[index].as_slice())
    }
}

/// Receives checkpoints and per-epoch progress from [`train`].
pub trait CheckpointSink {
    /// Persists the current weights and returns an identifier.
    fn save(&mut self, epoch: usize, model: &ModelBundle) -> Result<String>;

    /// Drops a checkpoint that is no longer the best or the last.
    fn remove(&mut self, id: &str) -> Result<()>;

    fn epoch_done(&mut self, _record: &EpochRecord) {}
}

/// Sink that keeps nothing; ids are `epoch-<n>`.
pub struct NullSink;

impl CheckpointSink for NullSink {
    fn save(&mut self, epoch: usize, _model: &ModelBundle) -> Result<String> {
        Ok(alloc::format!("epoch-{epoch}"))
    }

    fn remove(&mut self, _id: &str) -> Result<()> {
        Ok(())
    }
}

fn gather(samples: &dyn Samples, indices: &[usize], augment: &[Option<u64>]) -> Result<(Tensor, Option<Tensor>)> {
    let images = indices.iter().zip(augment).map(|(&i, a)| samples.image(i, *a)).collect::<Result<Vec<_>>>()?;
    let images = Tensor::stack(&images)?;
    let aux = match samples.aux(indices[0]) {
        None => None,
        Some(first) => {
            let width = first.len();
            let mut data = Vec::with_capacity(indices.len() * width);
            for &i in indices {
                data.extend_from_slice(samples.aux(i).ok_or(Error::AuxMissing("batch"))?);
            }
            Some(Tensor::from_vec(&[indices.len(), width], data)?)
        }
    };
    Ok((images, aux))
}

/// Eval-mode logits for every sample, in order.
pub fn predict_logits(model: &ModelBundle, samples: &dyn Samples, batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let n = samples.len();
    let c = model.num_classes();
    let mut out = Vec::with_capacity(n);
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, aux) = gather(samples, chunk, &alloc::vec![None; chunk.len()])?;
        let logits = model.logits(&images, aux.as_ref())?;
        out.extend(logits.data().chunks(c).map(|r| r.to_vec()));
    }
    Ok(out)
}

/// Eval-mode class probabilities for every sample, in order.
pub fn predict(model: &ModelBundle, samples: &dyn Samples, batch_size: usize) -> Result<Vec<Vec<f32>>> {
    Ok(predict_logits(model, samples, batch_size)?.iter().map(|l| crate::model::softmax(l)).collect())
}

fn check_samples(model: &ModelBundle, samples: &dyn Samples, split: &'static str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptySplit(split));
    }
    for i in 0..samples.len() {
        let t = samples.target(i);
        if t >= model.num_classes() {
            return Err(Error::TargetOutOfRange { index: t, classes: model.num_classes() });
        }
        model.check_aux(samples.aux(i))?;
    }
    Ok(())
}

/// Median-frequency weights from the targets of `samples`.
pub fn weights_from_samples(samples: &dyn Samples, classes: usize) -> Result<ClassWeights> {
    let mut counts = alloc::vec![0usize; classes];
    for i in 0..samples.len() {
        counts[samples.target(i)] += 1;
    }
    crate::weights::compute_class_weights(&counts)
}

/// Trains `model` in place for `config.epochs` epochs of
/// `⌈n / batch_size⌉` steps each, evaluating validation AUROC after every
/// epoch. On return the model holds the weights of the best epoch.
///
/// Batch composition and augmentation draws come from `config.seed` alone,
/// so two runs with equal inputs produce equal logs and weights.
pub fn train(
    model: &mut ModelBundle,
    train_set: &dyn Samples,
    val_set: &dyn Samples,
    config: &TrainConfig,
    sink: &mut dyn CheckpointSink,
) -> Result<RunLog> {
    config.validate()?;
    check_samples(model, train_set, "train")?;
    check_samples(model, val_set, "val")?;
    let classes = model.num_classes();
    let weights = match &config.class_weights {
        Some(w) if w.len() != classes => return Err(Error::LengthMismatch(w.len(), classes)),
        Some(w) => w.clone(),
        None => weights_from_samples(train_set, classes)?,
    };
    let w = weights.as_slice();
    let val_targets: Vec<usize> = (0..val_set.len()).map(|i| val_set.target(i)).collect();

    let mut sgd = Sgd::new(config.momentum, config.weight_decay);
    let mut log = RunLog { seed: config.seed, ..Default::default() };
    let mut best: Option<(usize, Option<f64>, String, Vec<Vec<f32>>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut rng = Rng::derive(config.seed, epoch as u64);
        order.sort_unstable();
        rng.shuffle(&mut order);
        let augment: Vec<Option<u64>> = order.iter().map(|_| Some(rng.next_u64())).collect();

        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        for (idx, aug) in order.chunks(config.batch_size).zip(augment.chunks(config.batch_size)) {
            let (images, aux) = gather(train_set, idx, aug)?;
            let targets: Vec<usize> = idx.iter().map(|&i| train_set.target(i)).collect();
            model.zero_grad();
            let logits = model.forward_train(images, aux.as_ref())?;
            let (loss, dlogits) = batch_loss(&logits, &targets, w)?;
            model.backward(dlogits);
            sgd.step(model, lr);
            let bw: f64 = targets.iter().map(|&t| w[t]).sum();
            loss_sum += loss * bw;
            weight_sum += bw;
        }
        model.clear_cache();

        let val_logits = predict_logits(model, val_set, config.batch_size)?;
        let flat: Vec<f32> = val_logits.iter().flatten().copied().collect();
        let (val_loss, _) = batch_loss(&Tensor::from_vec(&[val_logits.len(), classes], flat)?, &val_targets, w)?;
        let probs: Vec<Vec<f32>> = val_logits.iter().map(|l| crate::model::softmax(l)).collect();
        let val_auroc = macro_auroc(&to_f64(&probs), &val_targets, classes);
        let record = EpochRecord { epoch, train_loss: loss_sum / weight_sum, val_loss, val_auroc, lr };
        sink.epoch_done(&record);

        let improves = match &best {
            None => true,
            Some((_, b, _, _)) => match (val_auroc, b) {
                (Some(x), Some(y)) => x > *y,
                (Some(_), None) => true,
                _ => false,
            },
        };
        if improves {
            let id = sink.save(epoch, model)?;
            if let Some((_, _, old, _)) = best.take() {
                sink.remove(&old)?;
            }
            best = Some((epoch, val_auroc, id, model.state()));
        }
        log.epochs.push(record);
    }

    let (best_epoch_idx, _, best_id, best_state) = best.expect("at least one epoch");
    log.best_epoch = Some(best_epoch_idx);
    log.checkpoints.push(Checkpoint { epoch: best_epoch_idx, id: best_id });
    let last = config.epochs - 1;
    if last != best_epoch_idx {
        let id = sink.save(last, model)?;
        log.checkpoints.push(Checkpoint { epoch: last, id });
    }
    debug_assert_eq!(log.best_epoch, best_epoch(&log.epochs));
    model.load_state(&best_state)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FusionHead, FusionMode, Role};
    use crate::nn::{Act, Activation, BatchNorm2d, Conv2d, Sequential};
    use alloc::vec;

    fn record(epoch: usize, auroc: Option<f64>) -> EpochRecord {
        EpochRecord { epoch, train_loss: 0.0, val_loss: 0.0, val_auroc: auroc, lr: 0.1 }
    }

    #[test]
    fn best_epoch_rules() {
        let recs = |v: &[f64]| v.iter().enumerate().map(|(i, a)| record(i, Some(*a))).collect::<Vec<_>>();
        assert_eq!(best_epoch(&recs(&[0.6, 0.8, 0.7])), Some(1));
        assert_eq!(best_epoch(&recs(&[0.8, 0.8])), Some(0));
        assert_eq!(best_epoch(&recs(&[0.1, 0.2, 0.3, 0.4])), Some(3));
        assert_eq!(best_epoch(&[record(0, None), record(1, Some(0.2))]), Some(1));
        assert_eq!(best_epoch(&[]), None);
    }

    #[test]
    fn select_best_needs_checkpoints() {
        assert_eq!(select_best(&RunLog::default()), Err(Error::NoCheckpoints));
        let log = RunLog {
            best_epoch: Some(1),
            checkpoints: vec![Checkpoint { epoch: 1, id: "b".into() }, Checkpoint { epoch: 2, id: "l".into() }],
            ..Default::default()
        };
        assert_eq!(select_best(&log), Ok("b"));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.lr_decay_every, c.repeats), (50, 32, 10, 3));
        assert_eq!(c.repeat_seeds(), vec![0, 1, 2]);
        c.validate().unwrap();
        assert!(TrainConfig { momentum: 1.0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { lr_decay_factor: 0.0, ..c }.validate().is_err());
    }

    /// 32×32 inputs whose class is the overall brightness, a cue that
    /// survives the dihedral augmentation and global pooling.
    fn toy_problem(n: usize, seed: u64) -> InMemorySamples {
        let mut rng = Rng::seed(seed);
        let mut images = Vec::new();
        let mut targets = Vec::new();
        for i in 0..n {
            let t = i % 2;
            let mut data = vec![0u8; 32 * 32 * 3];
            for y in 0..32 {
                for x in 0..32 {
                    let v = if t == 1 { 150 } else { 90 } as i32 + rng.index(40) as i32 + (x + y) as i32;
                    for ch in 0..3 {
                        data[(y * 32 + x) * 3 + ch] = v as u8;
                    }
                }
            }
            images.push(RgbImage::new(32, 32, data).unwrap());
            targets.push(t);
        }
        let prep = PreprocessConfig { image_size: 32, ..Default::default() };
        InMemorySamples::new(images, targets, None, prep).unwrap()
    }

    fn toy_model(seed: u64, fusion: FusionMode) -> ModelBundle {
        let mut rng = Rng::seed(seed);
        let features = Sequential::new()
            .with(Conv2d::new(3, 4, 3, 2, 1, 1, false, &mut rng))
            .with(BatchNorm2d::new(4))
            .with(Act::new(Activation::Relu));
        let aux = if fusion.uses_aux() { 3 } else { 0 };
        ModelBundle::from_parts(features, None, FusionHead::new(4, aux, 2, fusion).unwrap(), Role::Diagnosis, &mut rng)
            .unwrap()
    }

    struct Recording(Vec<String>, Vec<String>);

    impl CheckpointSink for Recording {
        fn save(&mut self, epoch: usize, _: &ModelBundle) -> Result<String> {
            self.0.push(alloc::format!("e{epoch}"));
            Ok(alloc::format!("e{epoch}"))
        }
        fn remove(&mut self, id: &str) -> Result<()> {
            self.1.push(id.into());
            Ok(())
        }
    }

    #[test]
    fn learns_and_is_deterministic() {
        let train_set = toy_problem(24, 1);
        let val_set = toy_problem(10, 2);
        let config = TrainConfig { epochs: 4, batch_size: 6, lr: 0.05, repeats: 1, ..Default::default() };
        let run = || {
            let mut m = toy_model(3, FusionMode::None);
            let mut sink = Recording(vec![], vec![]);
            let log = train(&mut m, &train_set, &val_set, &config, &mut sink).unwrap();
            (log, m.state(), sink.0, sink.1)
        };
        let (a, sa, saved, removed) = run();
        let (b, sb, _, _) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(a.epochs.len(), 4);
        assert!(a.epochs.iter().all(|e| e.train_loss >= 0.0));
        assert_eq!(a.best_epoch, best_epoch(&a.epochs));
        let best = a.best_epoch.unwrap();
        assert!(a.epochs[best].val_auroc.unwrap() > 0.9, "{:?}", a.epochs);
        assert!(select_best(&a).unwrap().ends_with(&alloc::format!("{best}")));
        // Every saved checkpoint except best and last was removed.
        let kept: Vec<&String> = saved.iter().filter(|s| !removed.contains(s)).collect();
        assert_eq!(kept.len(), a.checkpoints.len());
        for (e, lr) in a.epochs.iter().zip([0.05, 0.05, 0.05, 0.05]) {
            assert_eq!(e.lr, lr);
        }
    }

    #[test]
    fn returned_model_holds_best_weights() {
        let train_set = toy_problem(12, 4);
        let val_set = toy_problem(6, 5);
        let config = TrainConfig { epochs: 3, batch_size: 4, lr: 0.05, repeats: 1, ..Default::default() };
        let mut m = toy_model(6, FusionMode::None);
        let log = train(&mut m, &train_set, &val_set, &config, &mut NullSink).unwrap();
        let probs = predict(&m, &val_set, 4).unwrap();
        let auroc = macro_auroc(&to_f64(&probs), &val_set.targets, 2);
        assert_eq!(auroc, log.epochs[log.best_epoch.unwrap()].val_auroc);
    }

    #[test]
    fn one_step_descends_on_a_frozen_batch() {
        let data = toy_problem(8, 7);
        let mut m = toy_model(8, FusionMode::None);
        let idx: Vec<usize> = (0..8).collect();
        let (images, _) = gather(&data, &idx, &[None; 8]).unwrap();
        let targets = data.targets.clone();
        let w = [1.0, 1.0];
        // Train-mode loss before and after one small step.
        let before = batch_loss(&m.forward_train(images.clone(), None).unwrap(), &targets, &w).unwrap();
        m.zero_grad();
        m.backward(before.1.clone());
        Sgd::new(0.0, 0.0).step(&mut m, 1e-3);
        let after = batch_loss(&m.forward_train(images, None).unwrap(), &targets, &w).unwrap();
        assert!(after.0 < before.0, "{} -> {}", before.0, after.0);
    }

    #[test]
    fn split_and_aux_errors() {
        let data = toy_problem(4, 9);
        let empty = InMemorySamples::new(vec![], vec![], None, data.preprocess.clone()).unwrap();
        let config = TrainConfig { epochs: 1, ..Default::default() };
        let mut m = toy_model(1, FusionMode::None);
        assert_eq!(train(&mut m, &data, &empty, &config, &mut NullSink), Err(Error::EmptySplit("val")));
        let mut fused = toy_model(1, FusionMode::GtOnehot);
        assert_eq!(train(&mut fused, &data, &data, &config, &mut NullSink), Err(Error::AuxMissing("gt_onehot")));
    }
}
