//! Two-step alternating optimisation and evaluation.
//!
//! Odd epochs run Step 1 (everything learns from reconstruction,
//! classification and the prototype regulariser); even epochs run Step 2
//! (only the decoder learns to produce FCs that the frozen encoder assigns to
//! a donor's class).

mod gradcheck;
mod losses;
mod metrics;
mod optim;
mod step;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use gradcheck::{gradient_check, LossTerm, Probe, TensorCheck};
pub use losses::{loss_class, loss_recon, loss_reg, shuffle_opposite};
pub use metrics::{auc_rank, evaluate, metric_set, Evaluation, MetricSet, Prediction};
pub use optim::AdamW;
pub use step::{step1_update, step2_update, StepLosses};

use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::model::{Ablations, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_step1: f64,
    pub lr_step2: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub lambda_recon: f64,
    pub lambda_class: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ablations: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_step1: 5e-4,
            lr_step2: 1e-4,
            batch_size: 32,
            weight_decay: 1e-4,
            lambda_recon: 1.0,
            lambda_class: 0.1,
            epochs: 60,
            seed: 7,
            ablations: Ablations::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr_step1, self.lr_step2];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if [self.weight_decay, self.lambda_recon, self.lambda_class].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("weight decay and loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// 1 or 2.
    pub step: u8,
    pub loss_recon: f64,
    pub loss_class: f64,
    pub loss_reg: f64,
    pub loss_total: f64,
    pub val: MetricSet,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model at the selected epoch.
    pub best: Model,
    pub best_epoch: usize,
    pub best_val: MetricSet,
    /// Model after the last epoch.
    pub last: Model,
    pub logs: Vec<EpochLog>,
}

/// Which step each epoch runs: `[1, 2, 1, 2, …]`, or all 1 without Step 2.
pub fn step_schedule(epochs: usize, no_step2: bool) -> Vec<u8> {
    (1..=epochs).map(|e| if no_step2 || e % 2 == 1 { 1 } else { 2 }).collect()
}

/// Trains `model` and keeps the parameters with the best validation AUC
/// (later epochs win ties). Selection happens on Step-1 epochs; the snapshot
/// is taken once the following Step-2 epoch has refined the decoder, which
/// leaves classification untouched.
pub fn train(train_set: &Dataset, val_set: &Dataset, mut model: Model, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::TooSmall("train and validation splits must be non-empty".into()));
    }
    train_set.require_both_classes()?;
    let (a, b) = (&model.ablations, &cfg.ablations);
    if (a.no_mask, a.no_intra, a.no_prototype) != (b.no_mask, b.no_intra, b.no_prototype) {
        return Err(Error::Config(format!(
            "model built with ablations [{}] but training asks for [{}]",
            a.to_list(),
            b.to_list()
        )));
    }
    model.ablations = cfg.ablations;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt1 = AdamW::new(&model.params, cfg.lr_step1, cfg.weight_decay);
    let mut opt2 = AdamW::new(&model.params, cfg.lr_step2, cfg.weight_decay);
    let schedule = step_schedule(cfg.epochs, cfg.ablations.no_step2);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Model, usize, MetricSet)> = None;
    let mut best_auc = f64::NEG_INFINITY;
    let mut pending: Option<(usize, MetricSet)> = None;

    for (e, &step) in schedule.iter().enumerate() {
        let epoch = e + 1;
        order.shuffle(&mut rng);
        let mut sums = StepLosses::default();
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SubjectRecord> = chunk.iter().map(|&i| &train_set.records()[i]).collect();
            let l = match step {
                1 => step1_update(&mut model, &mut opt1, &batch, cfg, &mut rng)?,
                _ => match step2_update(&mut model, &mut opt2, &batch, cfg, &mut rng) {
                    Err(Error::NoValidPairs) => continue,
                    other => other?,
                },
            };
            sums.recon += l.recon;
            sums.class += l.class;
            sums.reg += l.reg;
            sums.total += l.total;
            n_batches += 1;
        }
        let n = n_batches.max(1) as f64;
        let val = evaluate(&model, val_set)?.metrics;
        log::info!(
            "epoch {epoch:>3} step {step} total {:.4} recon {:.4} class {:.4} reg {:.4} val auc {:.4} acc {:.4}",
            sums.total / n,
            sums.recon / n,
            sums.class / n,
            sums.reg / n,
            val.auc,
            val.acc
        );
        logs.push(EpochLog {
            epoch,
            step,
            loss_recon: sums.recon / n,
            loss_class: sums.class / n,
            loss_reg: sums.reg / n,
            loss_total: sums.total / n,
            val,
        });
        let auc = if val.auc.is_nan() { f64::NEG_INFINITY } else { val.auc };
        if step == 1 && auc >= best_auc {
            best_auc = auc;
            pending = Some((epoch, val));
        }
        let pair_closed = schedule.get(epoch).is_none_or(|&next| next == 1);
        if pair_closed {
            if let Some((at, metrics)) = pending.take() {
                best = Some((model.clone(), at, metrics));
            }
        }
    }
    let (best, best_epoch, best_val) = best.expect("at least one Step-1 epoch");
    Ok(TrainOutcome { best, best_epoch, best_val, last: model, logs })
}

pub fn write_epoch_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut text = String::from("epoch,step,loss_recon,loss_class,loss_reg,loss_total,val_auc,val_acc,val_sen,val_spc\n");
    for l in logs {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            l.epoch, l.step, l.loss_recon, l.loss_class, l.loss_reg, l.loss_total, l.val.auc, l.val.acc, l.val.sen, l.val.spc
        ));
    }
    crate::data::write_file(path, &text)
}
