use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::eval::{evaluate, Evaluation};
use super::metrics::{EpochRecord, MetricsReport};
use super::optim::{AdamW, WEIGHT_DECAY};
use super::schedule::{lr_at, split_dataset};
use crate::error::{Error, Result};
use crate::model::{LossKind, Model, ModelConfig, Preset};
use crate::rpm::{read_dataset, RpmProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub base_lr: f64,
    pub lr_halving_period: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub loss: LossKind,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
    /// Also stop once the running train accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
    pub data: PathBuf,
    pub checkpoint: PathBuf,
}

impl TrainConfig {
    pub fn new(preset: Preset, loss: LossKind, max_epochs: usize, seed: u64) -> Self {
        TrainConfig {
            model: ModelConfig::preset(preset),
            base_lr: 1e-4,
            lr_halving_period: 20,
            weight_decay: WEIGHT_DECAY,
            batch_size: 32,
            max_epochs,
            patience: 10,
            loss,
            fractions: [0.6, 0.2, 0.2],
            seed,
            target_train_accuracy: None,
            data: PathBuf::new(),
            checkpoint: PathBuf::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 || self.lr_halving_period == 0 {
            return Err(Error::Config("batch size, epochs and halving period must be positive".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("lr {} / weight decay {}", self.base_lr, self.weight_decay)));
        }
        if (self.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.fractions.iter().any(|&f| f < 0.0) {
            return Err(Error::Config(format!("split fractions {:?} must sum to 1", self.fractions)));
        }
        Ok(())
    }

    /// Everything that determines the run, for the metrics file.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let e = &self.model.encoder;
        let c = &self.model.contrast;
        let mut out: Vec<(String, String)> = vec![
            ("image_side".into(), e.image_side.to_string()),
            ("patch_side".into(), e.patch_side.to_string()),
            ("embed_dim".into(), e.embed_dim.to_string()),
            ("num_layers".into(), e.num_layers.to_string()),
            ("num_heads".into(), e.num_heads.to_string()),
            ("mlp_hidden".into(), e.mlp_hidden.to_string()),
            ("head_dim".into(), c.embed_dim.to_string()),
            ("num_rules".into(), c.num_rules.to_string()),
            ("loss".into(), self.loss.name().into()),
            ("base_lr".into(), format!("{:?}", self.base_lr)),
            ("lr_halving_period".into(), self.lr_halving_period.to_string()),
            ("weight_decay".into(), format!("{:?}", self.weight_decay)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("split".into(), format!("{:?}/{:?}/{:?}", self.fractions[0], self.fractions[1], self.fractions[2])),
        ];
        if let Some(t) = self.target_train_accuracy {
            out.push(("target_train_accuracy".into(), format!("{t:?}")));
        }
        out
    }
}

/// Best checkpoint by validation loss plus the run's report.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub report: MetricsReport,
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains from a fresh initialisation on in-memory splits. `observe` sees
/// every finished epoch.
pub fn train_on(
    cfg: &TrainConfig,
    train: &[&RpmProblem],
    val: &[&RpmProblem],
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    let start = Instant::now();
    let mut model = Model::init(cfg.model, cfg.seed)?;
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let mut report = MetricsReport::new(cfg.snapshot(), cfg.seed);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg.base_lr, cfg.lr_halving_period);
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&RpmProblem> = idx.iter().map(|&i| train[i]).collect();
            let step = model.loss_and_grads(&batch, cfg.loss)?;
            if !step.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: step.loss,
                });
            }
            loss_sum += step.loss * batch.len() as f64;
            for (p, row) in batch.iter().zip(step.scores.chunks(crate::contrast::CANDIDATES)) {
                correct += usize::from(crate::contrast::predict(row) == usize::from(p.answer));
            }
            opt.step(&mut model.params, &step.grads, lr)?;
            if let Some((m, v)) = &step.batch_stats {
                model.update_running(m, v);
            }
        }
        let val_eval = evaluate(&model, val, cfg.loss)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss: val_eval.loss,
            val_accuracy: val_eval.accuracy(),
        };
        report.history.push(record);
        if best.as_ref().is_none_or(|(l, _)| val_eval.loss < *l) {
            best = Some((
                val_eval.loss,
                Checkpoint {
                    model: model.clone(),
                    optimizer: Some(opt.clone()),
                },
            ));
            report.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        observe(&record);
        let reached = cfg.target_train_accuracy.is_some_and(|t| record.train_accuracy >= t);
        if since_best >= cfg.patience || reached {
            break;
        }
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    let (_, best) = best.expect("at least one epoch runs");
    Ok(TrainOutcome { best, report })
}

/// Full run from a dataset file: split, train, then score the test part
/// with the best checkpoint.
pub fn train(cfg: &TrainConfig, observe: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let problems = read_dataset(&cfg.data)?;
    let (train, val, test) = split_dataset(problems, cfg.fractions, cfg.seed)?;
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "split left an empty part ({}/{}/{})",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    let tr: Vec<&RpmProblem> = train.iter().collect();
    let va: Vec<&RpmProblem> = val.iter().collect();
    let te: Vec<&RpmProblem> = test.iter().collect();
    let start = Instant::now();
    let mut outcome = train_on(cfg, &tr, &va, observe)?;
    let test_eval: Evaluation = evaluate(&outcome.best.model, &te, cfg.loss)?;
    outcome.report.evaluation = Some(test_eval);
    outcome.report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpm::{generate, Configuration};

    fn tiny_cfg(epochs: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(Preset::Tiny, LossKind::CrossEntropy, epochs, 3);
        cfg.batch_size = 4;
        cfg
    }

    #[test]
    fn zero_patience_runs_one_epoch() {
        let ps = generate(6, Configuration::Center, 1);
        let refs: Vec<&RpmProblem> = ps.iter().collect();
        let mut cfg = tiny_cfg(5);
        cfg.patience = 0;
        let out = train_on(&cfg, &refs[..4], &refs[4..], |_| {}).unwrap();
        assert_eq!(out.report.history.len(), 1);
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let ps = generate(6, Configuration::Grid2x2, 2);
        let refs: Vec<&RpmProblem> = ps.iter().collect();
        let mut cfg = tiny_cfg(2);
        cfg.loss = LossKind::Contrast;
        let a = train_on(&cfg, &refs[..4], &refs[4..], |_| {}).unwrap();
        let b = train_on(&cfg, &refs[..4], &refs[4..], |_| {}).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.report.to_key_values(), b.report.to_key_values());
    }

    #[test]
    fn best_checkpoint_reproduces_recorded_val_loss() {
        let ps = generate(8, Configuration::Center, 3);
        let refs: Vec<&RpmProblem> = ps.iter().collect();
        let mut cfg = tiny_cfg(3);
        cfg.base_lr = 1e-3;
        let out = train_on(&cfg, &refs[..5], &refs[5..], |_| {}).unwrap();
        let best = out.report.best_epoch.unwrap();
        let recorded = out.report.history[best].val_loss;
        let again = evaluate(&out.best.model, &refs[5..], cfg.loss).unwrap().loss;
        assert!((recorded - again).abs() < 1e-10);
    }

    #[test]
    fn epoch_orders_differ_but_repeat() {
        assert_eq!(epoch_order(50, 1, 3), epoch_order(50, 1, 3));
        assert_ne!(epoch_order(50, 1, 3), epoch_order(50, 1, 4));
    }
}
