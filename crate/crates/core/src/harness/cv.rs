use serde::{Deserialize, Serialize};

use super::{train, HarnessError, Result, TrainHyper, TrainResult};
use crate::graphdata::{DirectedGraph, SplitSet};
use crate::model::ModelConfig;
use crate::par::{self, Execution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub config: ModelConfig,
    pub test_accs: Vec<f64>,
    pub val_accs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single split.
    pub std: f64,
    pub runs: Vec<TrainResult>,
}

/// Mean and sample standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Trains once per split, every run seeded with `hyper.seed`.
pub fn cross_validate(
    cfg: &ModelConfig,
    graph: &DirectedGraph,
    splits: &SplitSet,
    hyper: &TrainHyper,
    exec: Execution,
) -> Result<CvResult> {
    if splits.is_empty() {
        return Err(HarnessError::NoSplits);
    }
    splits.validate(graph.num_nodes())?;
    let runs = par::map_indexed(exec, splits.len(), |k| train(cfg, graph, &splits.splits[k], hyper))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let test_accs: Vec<f64> = runs.iter().map(|r| r.test_acc_at_best_val).collect();
    let val_accs = runs.iter().map(|r| r.best_val_acc).collect();
    let (mean, std) = mean_and_std(&test_accs);
    Ok(CvResult {
        config: cfg.clone(),
        test_accs,
        val_accs,
        mean,
        std,
        runs,
    })
}
