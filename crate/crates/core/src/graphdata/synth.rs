//! Synthetic directed stochastic block models and split construction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, DirectedGraph, Result, Split, SplitSet};
use crate::dense::Matrix;
use crate::sparse::SparseMatrix;

/// Where the class signal lives in a synthetic graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectionProfile {
    /// Each ordered pair `(u, v)` is an edge with probability `p_in` when
    /// both share a class, `p_out` otherwise. Both `A` and `Aᵀ` are
    /// informative.
    Symmetric,
    /// Class `c` links preferentially to class `c + 1 (mod C)` and only a
    /// subset of "receiver" nodes ever gets an in-edge. A fraction
    /// `starved_fraction` of the nodes has in-degree zero, so aggregating
    /// along `A` is informative while `Aᵀ` leaves most nodes empty.
    OutSignal { starved_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsbmParams {
    pub n: usize,
    pub num_classes: usize,
    /// Edge probability towards the preferred block.
    pub p_in: f64,
    /// Edge probability towards every other block.
    pub p_out: f64,
    pub profile: DirectionProfile,
    /// Standard deviation of the Gaussian noise added to one-hot features.
    pub feature_noise: f64,
    pub seed: u64,
}

impl DsbmParams {
    pub fn homophilic(n: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            n,
            num_classes,
            p_in: 0.05,
            p_out: 0.005,
            profile: DirectionProfile::Symmetric,
            feature_noise: 1.0,
            seed,
        }
    }

    pub fn heterophilic(n: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            n,
            num_classes,
            p_in: 0.2,
            p_out: 0.005,
            profile: DirectionProfile::OutSignal {
                starved_fraction: 0.6,
            },
            feature_noise: 1.0,
            seed,
        }
    }

    /// The class a node of class `c` preferentially links to.
    pub fn preferred_block(&self, c: usize) -> usize {
        match self.profile {
            DirectionProfile::Symmetric => c,
            DirectionProfile::OutSignal { .. } => (c + 1) % self.num_classes,
        }
    }

    /// Node count of every class: as equal as possible, earlier classes
    /// absorb the remainder.
    pub fn class_sizes(&self) -> Vec<usize> {
        let (base, extra) = (self.n / self.num_classes, self.n % self.num_classes);
        (0..self.num_classes)
            .map(|c| base + usize::from(c < extra))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(DataError::InvalidParameter(m));
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{name} = {p} is not a probability"));
            }
        }
        if self.num_classes == 0 || self.n < self.num_classes {
            return invalid(format!(
                "need n >= C >= 1, got n = {}, C = {}",
                self.n, self.num_classes
            ));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return invalid(format!("feature_noise = {}", self.feature_noise));
        }
        if let DirectionProfile::OutSignal { starved_fraction } = self.profile {
            if !(0.0..1.0).contains(&starved_fraction) {
                return invalid(format!("starved_fraction = {starved_fraction} not in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Samples a directed stochastic block model; deterministic in `params.seed`.
pub fn generate_dsbm(params: &DsbmParams) -> Result<DirectedGraph> {
    params.validate()?;
    let n = params.n;
    let c = params.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut labels: Vec<usize> = params
        .class_sizes()
        .iter()
        .enumerate()
        .flat_map(|(class, &size)| std::iter::repeat_n(class, size))
        .collect();
    labels.shuffle(&mut rng);

    let mut receives = vec![true; n];
    if let DirectionProfile::OutSignal { starved_fraction } = params.profile {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let starved = (starved_fraction * n as f64).floor() as usize;
        for &v in &order[..starved] {
            receives[v] = false;
        }
    }

    let mut edges = Vec::new();
    for u in 0..n {
        let preferred = params.preferred_block(labels[u]);
        for v in 0..n {
            if u == v || !receives[v] {
                continue;
            }
            let p = if labels[v] == preferred {
                params.p_in
            } else {
                params.p_out
            };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let adjacency = SparseMatrix::from_edges(n, n, edges)?;

    let noise = Normal::new(0.0, params.feature_noise)
        .map_err(|e| DataError::InvalidParameter(e.to_string()))?;
    let mut features = Matrix::zeros(n, c);
    for (u, &label) in labels.iter().enumerate() {
        for (k, f) in features.row_mut(u).iter_mut().enumerate() {
            *f = f64::from(u8::from(k == label)) + noise.sample(&mut rng);
        }
    }
    DirectedGraph::new(adjacency, features, labels, c)
}

/// Stratified random splits: within every class, `train_frac` of the nodes
/// (at least one) go to train, `val_frac` to validation, the rest to test.
pub fn random_splits(
    graph: &DirectedGraph,
    count: usize,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitSet> {
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0) {
        return Err(DataError::InvalidParameter(format!(
            "split fractions train = {train_frac}, val = {val_frac}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); graph.num_classes()];
    for (node, &label) in graph.labels().iter().enumerate() {
        by_class[label].push(node);
    }
    let splits = (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let mut split = Split::default();
            for members in &by_class {
                if members.is_empty() {
                    continue;
                }
                let mut members = members.clone();
                members.shuffle(&mut rng);
                let size = members.len();
                let n_train = ((train_frac * size as f64).round() as usize).clamp(1, size);
                let n_val = ((val_frac * size as f64).round() as usize).min(size - n_train);
                split.train.extend_from_slice(&members[..n_train]);
                split.val.extend_from_slice(&members[n_train..n_train + n_val]);
                split.test.extend_from_slice(&members[n_train + n_val..]);
            }
            split.train.sort_unstable();
            split.val.sort_unstable();
            split.test.sort_unstable();
            split
        })
        .collect();
    Ok(SplitSet { splits })
}

/// Subsamples the training set of `base` so that the largest to smallest
/// class count equals `ratio`.
///
/// With `a_min` the size of the smallest training class, the smallest class
/// keeps `s = max(1, floor(a_min / ratio))` nodes, the largest keeps
/// `floor(ratio * s)`, and every other class keeps `min(available,
/// floor(ratio * s))`. Validation and test sets are untouched.
pub fn make_imbalanced_split(
    graph: &DirectedGraph,
    base: &Split,
    ratio: f64,
    seed: u64,
) -> Result<Split> {
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(DataError::InvalidParameter(format!("imbalance ratio {ratio} < 1")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); graph.num_classes()];
    for &node in &base.train {
        by_class[graph.labels()[node]].push(node);
    }
    let present: Vec<usize> = (0..by_class.len()).filter(|&c| !by_class[c].is_empty()).collect();
    let Some(&largest) = present.iter().max_by(|&&a, &&b| {
        by_class[a].len().cmp(&by_class[b].len()).then(b.cmp(&a))
    }) else {
        return Err(DataError::EmptyTrain { split: 0 });
    };
    let available_max = by_class[largest].len();
    if ratio > available_max as f64 {
        return Err(DataError::InfeasibleRatio {
            ratio,
            largest: available_max,
        });
    }
    let smallest = *present
        .iter()
        .filter(|&&c| c != largest)
        .min_by(|&&a, &&b| by_class[a].len().cmp(&by_class[b].len()).then(b.cmp(&a)))
        .unwrap_or(&largest);

    let small_target = ((by_class[smallest].len() as f64 / ratio).floor() as usize).max(1);
    let big_target = (ratio * small_target as f64).floor() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        let target = if class == smallest && class != largest {
            small_target
        } else if class == largest {
            big_target
        } else {
            members.len().min(big_target)
        };
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..target]);
    }
    train.sort_unstable();
    Ok(Split {
        train,
        val: base.val.clone(),
        test: base.test.clone(),
    })
}
