use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::eval::{Evaluation, RANDOM_BASELINE};
use crate::error::Result;

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Accuracy of the training-mode scores seen during the epoch.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Ordered `(key, value)` description of the run configuration.
    pub config: Vec<(String, String)>,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Final evaluation, if one was run.
    pub evaluation: Option<Evaluation>,
    /// Not written to the key=value file, which must be reproducible.
    pub wall_clock_secs: f64,
}

impl MetricsReport {
    pub fn new(config: Vec<(String, String)>, seed: u64) -> Self {
        MetricsReport {
            config,
            seed,
            history: Vec::new(),
            best_epoch: None,
            evaluation: None,
            wall_clock_secs: 0.0,
        }
    }

    /// Aligned human-readable summary.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        if !self.history.is_empty() {
            writeln!(s, "{:>5}  {:>10}  {:>10}  {:>9}  {:>10}  {:>9}", "epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc").unwrap();
            for r in &self.history {
                let mark = if Some(r.epoch) == self.best_epoch { " *" } else { "" };
                writeln!(
                    s,
                    "{:>5}  {:>10.3e}  {:>10.5}  {:>8.2}%  {:>10.5}  {:>8.2}%{mark}",
                    r.epoch,
                    r.lr,
                    r.train_loss,
                    100.0 * r.train_accuracy,
                    r.val_loss,
                    100.0 * r.val_accuracy
                )
                .unwrap();
            }
            s.push('\n');
        }
        if let Some(e) = &self.evaluation {
            writeln!(s, "{:<14} {:>9} {:>7}", "configuration", "accuracy", "count").unwrap();
            for (cfg, t) in &e.per_config {
                writeln!(s, "{:<14} {:>8.2}% {:>7}", cfg.name(), 100.0 * t.accuracy(), t.total).unwrap();
            }
            writeln!(s, "{:<14} {:>8.2}% {:>7}", "overall", 100.0 * e.accuracy(), e.overall.total).unwrap();
            writeln!(s, "{:<14} {:>8.2}%", "random", 100.0 * RANDOM_BASELINE).unwrap();
            writeln!(s, "{:<14} {:>9.5}", "loss", e.loss).unwrap();
        }
        writeln!(s, "wall clock {:.1}s", self.wall_clock_secs).unwrap();
        s
    }

    /// One `key=value` line per metric. Floats use the shortest exact
    /// round-trip representation.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.config {
            writeln!(s, "config.{k}={v}").unwrap();
        }
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "epochs_run={}", self.history.len()).unwrap();
        if let Some(b) = self.best_epoch {
            writeln!(s, "best_epoch={b}").unwrap();
        }
        for r in &self.history {
            let e = r.epoch;
            writeln!(s, "epoch.{e}.lr={:?}", r.lr).unwrap();
            writeln!(s, "epoch.{e}.train_loss={:?}", r.train_loss).unwrap();
            writeln!(s, "epoch.{e}.train_accuracy={:?}", r.train_accuracy).unwrap();
            writeln!(s, "epoch.{e}.val_loss={:?}", r.val_loss).unwrap();
            writeln!(s, "epoch.{e}.val_accuracy={:?}", r.val_accuracy).unwrap();
        }
        if let Some(e) = &self.evaluation {
            writeln!(s, "accuracy.overall={:?}", e.accuracy()).unwrap();
            writeln!(s, "count.overall={}", e.overall.total).unwrap();
            for (cfg, t) in &e.per_config {
                writeln!(s, "accuracy.{}={:?}", cfg.name(), t.accuracy()).unwrap();
                writeln!(s, "count.{}={}", cfg.name(), t.total).unwrap();
            }
            writeln!(s, "loss={:?}", e.loss).unwrap();
        }
        writeln!(s, "baseline.random={:?}", RANDOM_BASELINE).unwrap();
        s
    }

    pub fn write_key_values(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_key_values())?;
        Ok(())
    }
}

/// Parses a key=value file back into pairs, skipping blank lines.
pub fn parse_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
