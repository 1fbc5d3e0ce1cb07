//! Node-classification datasets on directed graphs.
//!
//! A dataset lives in four files:
//!
//! | file           | content                                                   |
//! |----------------|-----------------------------------------------------------|
//! | `edges.tsv`    | `src<TAB>dst` per line, 0-based, `#` comments             |
//! | `features.csv` | `n` rows of `d` comma-separated reals                     |
//! | `labels.txt`   | one class id per line; the line count defines `n`         |
//! | `splits.json`  | `{"splits":[{"train":[..],"val":[..],"test":[..]}]}`      |

mod stats;
mod synth;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::Matrix;
use crate::sparse::{self, io as sparse_io, SparseError, SparseMatrix};

pub use stats::{compute_stats, neighbor_label_table, LabelTable, NeighborDirection, StatsReport};
pub use synth::{
    generate_dsbm, make_imbalanced_split, random_splits, DirectionProfile, DsbmParams,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}, line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("edge ({src}, {dst}) references a node outside 0..{n}")]
    EdgeOutOfRange { src: usize, dst: usize, n: usize },
    #[error("feature matrix has {found} rows but the graph has {expected} nodes")]
    FeatureRows { expected: usize, found: usize },
    #[error("node {node} has label {label} but only {classes} classes were declared")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        classes: usize,
    },
    #[error("adjacency must be a square pattern with one row per node")]
    BadAdjacency,
    #[error("split {split}: node {node} is outside 0..{n}")]
    SplitOutOfRange { split: usize, node: usize, n: usize },
    #[error("split {split}: node {node} appears in more than one of train/val/test")]
    SplitOverlap { split: usize, node: usize },
    #[error("split {split}: empty training set")]
    EmptyTrain { split: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("infeasible imbalance ratio {ratio}: the largest training class has {largest} nodes")]
    InfeasibleRatio { ratio: f64, largest: usize },
    #[error("splits.json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Adjacency (pattern, `n × n`), node features (`n × d`) and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectedGraph {
    adjacency: SparseMatrix,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl DirectedGraph {
    pub fn new(
        adjacency: SparseMatrix,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if adjacency.shape() != (n, n) || !adjacency.is_pattern() {
            return Err(DataError::BadAdjacency);
        }
        if features.rows() != n {
            return Err(DataError::FeatureRows {
                expected: n,
                found: features.rows(),
            });
        }
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DataError::LabelOutOfRange {
                node,
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            adjacency,
            features,
            labels,
            num_classes,
        })
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Same nodes and labels, different structure or features.
    pub fn with_parts(&self, adjacency: SparseMatrix, features: Matrix) -> Result<Self> {
        Self::new(adjacency, features, self.labels.clone(), self.num_classes)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        let mut inverse = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let adjacency =
            SparseMatrix::from_edges(n, n, self.adjacency.edges().map(|(u, v)| (perm[u], perm[v])))?;
        let features = self.features.select_rows(&inverse);
        let labels = inverse.iter().map(|&i| self.labels[i]).collect();
        Self::new(adjacency, features, labels, self.num_classes)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub splits: Vec<Split>,
}

impl SplitSet {
    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    /// Checks bounds, pairwise disjointness and non-empty training sets.
    pub fn validate(&self, n: usize) -> Result<()> {
        for (k, split) in self.splits.iter().enumerate() {
            if split.train.is_empty() {
                return Err(DataError::EmptyTrain { split: k });
            }
            let mut owner = vec![false; n];
            for &node in split.train.iter().chain(&split.val).chain(&split.test) {
                if node >= n {
                    return Err(DataError::SplitOutOfRange { split: k, node, n });
                }
                if std::mem::replace(&mut owner[node], true) {
                    return Err(DataError::SplitOverlap { split: k, node });
                }
            }
        }
        Ok(())
    }
}

/// Locations of the four dataset files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.txt"),
            splits: dir.join("splits.json"),
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| DataError::Parse {
                file: "labels".into(),
                line: i + 1,
                msg: format!("invalid class id '{}'", l.trim()),
            })
        })
        .collect()
}

fn parse_features(text: &str) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let parse_err = |msg: String| DataError::Parse {
            file: "features".into(),
            line: i + 1,
            msg,
        };
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("invalid feature value '{f}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(format!(
                    "expected {} columns, found {}",
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    Ok(Matrix::from_rows(&rows).expect("row widths checked above"))
}

/// Loads and validates a dataset. The number of classes is
/// `num_classes` when given, otherwise one more than the largest label.
pub fn load_dataset(
    paths: &DatasetPaths,
    num_classes: Option<usize>,
) -> Result<(DirectedGraph, SplitSet)> {
    let labels = parse_labels(&read_to_string(&paths.labels)?)?;
    let n = labels.len();
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));

    let features = parse_features(&read_to_string(&paths.features)?)?;
    if features.rows() != n {
        return Err(DataError::FeatureRows {
            expected: n,
            found: features.rows(),
        });
    }

    let file = fs::File::open(&paths.edges).map_err(|source| DataError::Io {
        path: paths.edges.clone(),
        source,
    })?;
    let edges = sparse_io::parse_edge_list(BufReader::new(file))?;
    if let Some(&(src, dst)) = edges.iter().find(|&&(s, d)| s >= n || d >= n) {
        return Err(DataError::EdgeOutOfRange { src, dst, n });
    }
    let adjacency = SparseMatrix::from_edges(n, n, edges)?;

    let splits: SplitSet = serde_json::from_str(&read_to_string(&paths.splits)?)?;
    splits.validate(n)?;

    Ok((DirectedGraph::new(adjacency, features, labels, classes)?, splits))
}

/// Canonical text of the four dataset files, in `DatasetPaths` order.
pub fn format_dataset(graph: &DirectedGraph, splits: &SplitSet) -> [String; 4] {
    let edges = sparse_io::format_edge_list(graph.adjacency());
    let mut features = String::new();
    for r in 0..graph.features().rows() {
        let row: Vec<String> = graph.features().row(r).iter().map(f64::to_string).collect();
        features.push_str(&row.join(","));
        features.push('\n');
    }
    let labels: String = graph.labels().iter().map(|l| format!("{l}\n")).collect();
    let mut splits = serde_json::to_string(splits).expect("splits serialize");
    splits.push('\n');
    [edges, features, labels, splits]
}

pub fn write_dataset(dir: impl AsRef<Path>, graph: &DirectedGraph, splits: &SplitSet) -> Result<DatasetPaths> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let paths = DatasetPaths::in_dir(dir);
    let texts = format_dataset(graph, splits);
    for (path, text) in [&paths.edges, &paths.features, &paths.labels, &paths.splits]
        .into_iter()
        .zip(texts)
    {
        fs::write(path, text).map_err(|source| DataError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(paths)
}

/// Out-degree and in-degree of every node.
pub fn degree_pair(graph: &DirectedGraph) -> (Vec<usize>, Vec<usize>) {
    (
        sparse::degrees(graph.adjacency(), sparse::Axis::Row),
        sparse::degrees(graph.adjacency(), sparse::Axis::Col),
    )
}
