use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cv::mean_and_std;
use super::{train, HarnessError, Result, TrainHyper};
use crate::graphdata::{DirectedGraph, SplitSet};
use crate::model::{Comb1, Comb2, ModelConfig};
use crate::par::{self, Execution};
use crate::sparse::SelfLoopMode;

/// Jumping-knowledge choice of the search grid, setting both fusions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JkChoice {
    Max,
    Cat,
    None,
}

impl JkChoice {
    pub fn combs(self) -> (Comb1, Comb2) {
        match self {
            JkChoice::Max => (Comb1::JkMax, Comb2::JkMax),
            JkChoice::Cat => (Comb1::JkCat, Comb2::JkCat),
            JkChoice::None => (Comb1::Add, Comb2::Last),
        }
    }
}

/// Cartesian search space. Fields left out of the grid come from `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpace {
    pub base: ModelConfig,
    pub layers: Vec<usize>,
    pub lr: Vec<f64>,
    pub dropout: Vec<f64>,
    pub use_bn: Vec<bool>,
    pub use_relu: Vec<bool>,
    pub jk: Vec<JkChoice>,
    pub selfloop: Vec<SelfLoopMode>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for GridSpace {
    fn default() -> Self {
        Self::singleton(ModelConfig::default())
    }
}

impl GridSpace {
    /// The space containing only `cfg`.
    pub fn singleton(cfg: ModelConfig) -> Self {
        let (comb1, comb2) = (cfg.comb1, cfg.comb2);
        let jk = [JkChoice::Max, JkChoice::Cat, JkChoice::None]
            .into_iter()
            .find(|j| j.combs() == (comb1, comb2));
        Self {
            layers: vec![cfg.layers],
            lr: vec![cfg.lr],
            dropout: vec![cfg.dropout],
            use_bn: vec![cfg.use_bn],
            use_relu: vec![cfg.use_relu],
            jk: jk.into_iter().collect(),
            selfloop: vec![cfg.selfloop],
            alpha: vec![cfg.alpha],
            beta: vec![cfg.beta],
            gamma: vec![cfg.gamma],
            base: cfg,
        }
    }

    /// The full grid with one direction parameter (`alpha`) searched; `beta`
    /// and `gamma` stay at the base values.
    pub fn full(base: ModelConfig) -> Self {
        Self {
            layers: vec![1, 2, 3, 4, 5],
            lr: vec![0.1, 0.01, 0.005],
            dropout: vec![0.0, 0.5],
            use_bn: vec![false, true],
            use_relu: vec![false, true],
            jk: vec![JkChoice::Max, JkChoice::Cat, JkChoice::None],
            selfloop: vec![SelfLoopMode::Add, SelfLoopMode::Remove, SelfLoopMode::Keep],
            alpha: vec![0.0, 0.5, 1.0, 2.0, 3.0],
            beta: vec![base.beta],
            gamma: vec![base.gamma],
            base,
        }
    }

    pub fn len(&self) -> usize {
        let base_jk = usize::from(self.jk.is_empty());
        self.layers.len()
            * self.lr.len()
            * self.dropout.len()
            * self.use_bn.len()
            * self.use_relu.len()
            * (self.jk.len() + base_jk)
            * self.selfloop.len()
            * self.alpha.len()
            * self.beta.len()
            * self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All configs in a fixed order (last field varies fastest). An empty
    /// `jk` list keeps the base fusions.
    pub fn enumerate(&self) -> Vec<ModelConfig> {
        let jk: Vec<Option<JkChoice>> = if self.jk.is_empty() {
            vec![None]
        } else {
            self.jk.iter().copied().map(Some).collect()
        };
        let mut out = Vec::with_capacity(self.len());
        for &layers in &self.layers {
            for &lr in &self.lr {
                for &dropout in &self.dropout {
                    for &use_bn in &self.use_bn {
                        for &use_relu in &self.use_relu {
                            for &j in &jk {
                                for &selfloop in &self.selfloop {
                                    for &alpha in &self.alpha {
                                        for &beta in &self.beta {
                                            for &gamma in &self.gamma {
                                                let (comb1, comb2) =
                                                    j.map_or((self.base.comb1, self.base.comb2), JkChoice::combs);
                                                out.push(ModelConfig {
                                                    layers,
                                                    lr,
                                                    dropout,
                                                    use_bn,
                                                    use_relu,
                                                    comb1,
                                                    comb2,
                                                    selfloop,
                                                    alpha,
                                                    beta,
                                                    gamma,
                                                    ..self.base.clone()
                                                });
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Seed of a config's training runs: the first 8 bytes of
/// `SHA-256(base_seed || config JSON)`.
pub fn config_seed(base_seed: u64, cfg: &ModelConfig) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_le_bytes());
    hasher.update(serde_json::to_vec(cfg).expect("config serializes"));
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub rank: usize,
    pub config: ModelConfig,
    pub seed: u64,
    pub val_accs: Vec<f64>,
    pub test_accs: Vec<f64>,
    pub mean_val: f64,
    pub mean_test: f64,
    pub std_test: f64,
}

/// Trains every config of `space` on every split and ranks configs by mean
/// validation accuracy, breaking ties by fewer layers, then lower learning
/// rate, then enumeration order.
pub fn grid_search(
    space: &GridSpace,
    graph: &DirectedGraph,
    splits: &SplitSet,
    hyper: &TrainHyper,
    exec: Execution,
) -> Result<Vec<GridEntry>> {
    let configs = space.enumerate();
    if configs.is_empty() {
        return Err(HarnessError::EmptySpace);
    }
    if splits.is_empty() {
        return Err(HarnessError::NoSplits);
    }
    splits.validate(graph.num_nodes())?;
    for cfg in &configs {
        cfg.validate()?;
    }
    let seeds: Vec<u64> = configs.iter().map(|c| config_seed(hyper.seed, c)).collect();
    let k = splits.len();
    let runs = par::map_indexed(exec, configs.len() * k, |t| {
        let (c, s) = (t / k, t % k);
        let h = TrainHyper {
            seed: seeds[c],
            ..hyper.clone()
        };
        train(&configs[c], graph, &splits.splits[s], &h).map(|r| (r.best_val_acc, r.test_acc_at_best_val))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut entries: Vec<GridEntry> = configs
        .into_iter()
        .enumerate()
        .map(|(c, config)| {
            let slice = &runs[c * k..(c + 1) * k];
            let val_accs: Vec<f64> = slice.iter().map(|r| r.0).collect();
            let test_accs: Vec<f64> = slice.iter().map(|r| r.1).collect();
            let (mean_test, std_test) = mean_and_std(&test_accs);
            GridEntry {
                rank: 0,
                seed: seeds[c],
                mean_val: mean_and_std(&val_accs).0,
                config,
                val_accs,
                test_accs,
                mean_test,
                std_test,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.mean_val
            .total_cmp(&a.mean_val)
            .then(a.config.layers.cmp(&b.config.layers))
            .then(a.config.lr.total_cmp(&b.config.lr))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(entries)
}
