use serde::{Deserialize, Serialize};

use super::{DataError, DirectedGraph, Result};
use crate::sparse;

/// Which 1-hop neighbours to inspect: `Out` aggregates along `A`, `In`
/// along `Aᵀ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeighborDirection {
    #[serde(rename = "A")]
    Out,
    #[serde(rename = "AT")]
    In,
}

/// Partition of the nodes by the predominant label of their neighbours.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTable {
    pub homo: usize,
    pub hetero: usize,
    pub no_neighbor: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub imbalance_ratio: f64,
    pub pct_no_in: f64,
    pub pct_in_homo: f64,
    pub pct_no_out: f64,
    pub pct_out_homo: f64,
    /// Label table along `A` (out-neighbours).
    pub table_a: LabelTable,
    /// Label table along `Aᵀ` (in-neighbours).
    pub table_at: LabelTable,
}

/// Counts nodes whose neighbours in `direction` predominantly share their
/// label. A tie for the most frequent neighbour label counts as heterophilic.
pub fn neighbor_label_table(graph: &DirectedGraph, direction: NeighborDirection) -> LabelTable {
    let matrix = match direction {
        NeighborDirection::Out => graph.adjacency().clone(),
        NeighborDirection::In => sparse::transpose(graph.adjacency()),
    };
    let labels = graph.labels();
    let mut counts = vec![0usize; graph.num_classes()];
    let mut table = LabelTable::default();
    for (node, &own) in labels.iter().enumerate() {
        let (neighbors, _) = matrix.row(node);
        if neighbors.is_empty() {
            table.no_neighbor += 1;
            continue;
        }
        counts.iter_mut().for_each(|c| *c = 0);
        for &v in neighbors {
            counts[labels[v]] += 1;
        }
        let top = *counts.iter().max().expect("at least one class");
        let unique_top = counts.iter().filter(|&&c| c == top).count() == 1;
        if unique_top && counts[own] == top {
            table.homo += 1;
        } else {
            table.hetero += 1;
        }
    }
    table
}

/// Dataset statistics; the imbalance ratio is computed over the classes
/// present in `train`.
pub fn compute_stats(graph: &DirectedGraph, train: &[usize]) -> Result<StatsReport> {
    if train.is_empty() {
        return Err(DataError::EmptyTrain { split: 0 });
    }
    let mut class_counts = vec![0usize; graph.num_classes()];
    for &node in train {
        if node >= graph.num_nodes() {
            return Err(DataError::SplitOutOfRange {
                split: 0,
                node,
                n: graph.num_nodes(),
            });
        }
        class_counts[graph.labels()[node]] += 1;
    }
    let present = class_counts.iter().copied().filter(|&c| c > 0);
    let largest = present.clone().max().unwrap_or(1);
    let smallest = present.min().unwrap_or(1);

    let n = graph.num_nodes();
    let pct = |count: usize| {
        if n == 0 {
            0.0
        } else {
            100.0 * count as f64 / n as f64
        }
    };
    let table_a = neighbor_label_table(graph, NeighborDirection::Out);
    let table_at = neighbor_label_table(graph, NeighborDirection::In);
    Ok(StatsReport {
        num_nodes: n,
        num_edges: graph.num_edges(),
        num_features: graph.num_features(),
        num_classes: graph.num_classes(),
        imbalance_ratio: largest as f64 / smallest as f64,
        pct_no_in: pct(table_at.no_neighbor),
        pct_in_homo: pct(table_at.homo),
        pct_no_out: pct(table_a.no_neighbor),
        pct_out_homo: pct(table_a.homo),
        table_a,
        table_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::Matrix;
    use crate::sparse::SparseMatrix;

    fn hand_graph() -> DirectedGraph {
        let adjacency = SparseMatrix::from_edges(4, 4, [(0, 1), (2, 1)]).unwrap();
        DirectedGraph::new(adjacency, Matrix::zeros(4, 1), vec![0, 0, 0, 1], 2).unwrap()
    }

    #[test]
    fn no_edges_means_no_neighbours() {
        let g = DirectedGraph::new(SparseMatrix::zeros(5, 5), Matrix::zeros(5, 1), vec![0, 1, 0, 1, 0], 2)
            .unwrap();
        let s = compute_stats(&g, &[0, 1]).unwrap();
        assert_eq!(s.pct_no_in, 100.0);
        assert_eq!(s.pct_no_out, 100.0);
        let t = LabelTable {
            homo: 0,
            hetero: 0,
            no_neighbor: 5,
        };
        assert_eq!(neighbor_label_table(&g, NeighborDirection::Out), t);
        assert_eq!(neighbor_label_table(&g, NeighborDirection::In), t);
    }

    #[test]
    fn hand_graph_enumeration() {
        // Edges 0->1, 2->1; labels (0,0,0,1).
        // In-neighbours: node 1 <- {0, 2}, both label 0 = own label 0.
        // Out-neighbours: 0 -> {1} and 2 -> {1}, label 0 = own label 0.
        let g = hand_graph();
        assert_eq!(
            neighbor_label_table(&g, NeighborDirection::In),
            LabelTable {
                homo: 1,
                hetero: 0,
                no_neighbor: 3
            }
        );
        assert_eq!(
            neighbor_label_table(&g, NeighborDirection::Out),
            LabelTable {
                homo: 2,
                hetero: 0,
                no_neighbor: 2
            }
        );
        let s = compute_stats(&g, &[0, 3]).unwrap();
        assert_eq!(s.pct_no_in, 75.0);
        assert_eq!(s.pct_in_homo, 25.0);
        assert_eq!(s.pct_no_out, 50.0);
        assert_eq!(s.pct_out_homo, 50.0);
        assert_eq!(s.imbalance_ratio, 1.0);
    }

    #[test]
    fn ties_count_as_heterophilic() {
        // Node 0 (label 0) points at one node of each class.
        let adjacency = SparseMatrix::from_edges(3, 3, [(0, 1), (0, 2)]).unwrap();
        let g = DirectedGraph::new(adjacency, Matrix::zeros(3, 1), vec![0, 0, 1], 2).unwrap();
        let t = neighbor_label_table(&g, NeighborDirection::Out);
        assert_eq!((t.homo, t.hetero, t.no_neighbor), (0, 1, 2));
    }

    #[test]
    fn imbalance_ratio_over_train_classes() {
        let g = hand_graph();
        let s = compute_stats(&g, &[0, 1, 2, 3]).unwrap();
        assert_eq!(s.imbalance_ratio, 3.0);
        assert!(compute_stats(&g, &[]).is_err());
    }
}
