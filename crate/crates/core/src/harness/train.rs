use serde::{Deserialize, Serialize};

use super::{mix_seed, HarnessError, Result};
use crate::graphdata::{DirectedGraph, Split};
use crate::model::{Model, ModelConfig};
use crate::tensor::AdamState;

/// Optimization schedule shared by every training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub max_epochs: usize,
    /// Stop once validation accuracy has not improved for more than this
    /// many epochs.
    pub patience: usize,
    /// Multiply the learning rate by `lr_factor` once validation accuracy
    /// has not improved for more than this many epochs.
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            max_epochs: 1500,
            patience: 410,
            lr_patience: 80,
            lr_factor: 0.5,
            min_lr: 1e-5,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.max_epochs > 1500 {
            return Err(HarnessError::InvalidHyper(format!(
                "max_epochs = {} is outside 1..=1500",
                self.max_epochs
            )));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(HarnessError::InvalidHyper(format!(
                "lr_factor = {} is outside (0, 1]",
                self.lr_factor
            )));
        }
        if !(self.min_lr > 0.0 && self.min_lr.is_finite()) {
            return Err(HarnessError::InvalidHyper(format!("min_lr = {} must be positive", self.min_lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub best_val_acc: f64,
    pub test_acc_at_best_val: f64,
    pub train_acc_at_best_val: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
    pub seed: u64,
}

/// Fraction of `idx` whose prediction matches its label; 0 for an empty set.
pub fn accuracy(pred: &[usize], labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let hits = idx.iter().filter(|&&i| pred[i] == labels[i]).count();
    hits as f64 / idx.len() as f64
}

/// Builds `cfg` on `graph` with the hyper seed and trains it.
pub fn train(cfg: &ModelConfig, graph: &DirectedGraph, split: &Split, hyper: &TrainHyper) -> Result<TrainResult> {
    let mut model = Model::new(cfg, graph, hyper.seed)?;
    train_model(&mut model, graph, split, hyper)
}

/// Adam with early stopping on validation accuracy. On return the model
/// holds the parameters of the best validation epoch.
pub fn train_model(
    model: &mut Model,
    graph: &DirectedGraph,
    split: &Split,
    hyper: &TrainHyper,
) -> Result<TrainResult> {
    hyper.validate()?;
    if split.val.is_empty() {
        return Err(HarnessError::EmptyValidation);
    }
    if split.train.is_empty() {
        return Err(HarnessError::EmptyTrain);
    }
    let labels = graph.labels();
    let use_dropout = model.config().dropout > 0.0;
    let mut adam = AdamState::new(model.config().lr)?;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_state = model.state();
    let mut bad_epochs = 0;
    let mut plateau = 0;
    let mut history = Vec::new();

    for epoch in 0..hyper.max_epochs {
        let dropout_seed = use_dropout.then(|| mix_seed(hyper.seed, epoch as u64));
        let step = model.loss_and_grads(model.params(), labels, &split.train, dropout_seed)?;
        model.set_bn_states(step.bn);
        adam.step(model.params_mut(), &step.grads)?;

        let pred = model.predict()?;
        let val_acc = accuracy(&pred, labels, &split.val);
        history.push(EpochRecord {
            loss: step.loss,
            val_acc,
            lr: adam.lr,
        });
        if val_acc > best_val {
            best_val = val_acc;
            best_epoch = epoch;
            best_state = model.state();
            bad_epochs = 0;
            plateau = 0;
        } else {
            bad_epochs += 1;
            plateau += 1;
            if plateau > hyper.lr_patience {
                adam.lr = (adam.lr * hyper.lr_factor).max(hyper.min_lr);
                plateau = 0;
            }
            if bad_epochs > hyper.patience {
                break;
            }
        }
    }

    model.restore(best_state)?;
    let pred = model.predict()?;
    Ok(TrainResult {
        best_val_acc: best_val,
        test_acc_at_best_val: accuracy(&pred, labels, &split.test),
        train_acc_at_best_val: accuracy(&pred, labels, &split.train),
        best_epoch,
        epochs_run: history.len(),
        history,
        seed: hyper.seed,
    })
}
