use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cv::mean_and_std;
use super::{train_model, HarnessError, Result, TrainHyper};
use crate::dense::Matrix;
use crate::graphdata::{DirectedGraph, Split};
use crate::model::{Model, ModelConfig};
use crate::par::{self, Execution};
use crate::scales::remove_shared_edges;
use crate::sparse::{self, SelfLoopMode, Semiring, SparseMatrix};

/// One column of the per-scale table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScaleColumn {
    #[serde(rename = "A")]
    A,
    #[serde(rename = "AT")]
    At,
    #[serde(rename = "A+AT")]
    APlusAt,
    #[serde(rename = "AAT")]
    Aat,
    #[serde(rename = "ATA")]
    Ata,
    #[serde(rename = "AAT+ATA")]
    AatPlusAta,
    #[serde(rename = "AA")]
    Aa,
    #[serde(rename = "ATAT")]
    Atat,
    #[serde(rename = "AA+ATAT")]
    AaPlusAtat,
    #[serde(rename = "None")]
    Zero,
}

impl ScaleColumn {
    pub const ALL: [ScaleColumn; 10] = [
        ScaleColumn::A,
        ScaleColumn::At,
        ScaleColumn::APlusAt,
        ScaleColumn::Aat,
        ScaleColumn::Ata,
        ScaleColumn::AatPlusAta,
        ScaleColumn::Aa,
        ScaleColumn::Atat,
        ScaleColumn::AaPlusAtat,
        ScaleColumn::Zero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScaleColumn::A => "A",
            ScaleColumn::At => "AT",
            ScaleColumn::APlusAt => "A+AT",
            ScaleColumn::Aat => "AAT",
            ScaleColumn::Ata => "ATA",
            ScaleColumn::AatPlusAta => "AAT+ATA",
            ScaleColumn::Aa => "AA",
            ScaleColumn::Atat => "ATAT",
            ScaleColumn::AaPlusAtat => "AA+ATAT",
            ScaleColumn::Zero => "None",
        }
    }

    /// Second-scale columns, which also get a shared-edges-removed variant.
    pub fn is_second_scale(self) -> bool {
        matches!(
            self,
            ScaleColumn::Aat
                | ScaleColumn::Ata
                | ScaleColumn::AatPlusAta
                | ScaleColumn::Aa
                | ScaleColumn::Atat
                | ScaleColumn::AaPlusAtat
        )
    }
}

impl fmt::Display for ScaleColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScaleColumn {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key = s.trim().replace('ᵀ', "T");
        ScaleColumn::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(&key))
            .ok_or_else(|| format!("unknown scale column '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    /// Training config of every column model. `selfloop` applies to `A` and
    /// `Aᵀ`, `selfloop_higher` to the second-scale products.
    pub config: ModelConfig,
    pub hyper: TrainHyper,
    pub columns: Vec<ScaleColumn>,
    /// Also train on second-scale supports with the edges of `A` and `Aᵀ`
    /// removed.
    pub remove_shared: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            config: ModelConfig {
                layers: 1,
                selfloop: SelfLoopMode::Keep,
                selfloop_higher: SelfLoopMode::Remove,
                ..ModelConfig::default()
            },
            hyper: TrainHyper::default(),
            columns: ScaleColumn::ALL.to_vec(),
            remove_shared: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleReportRow {
    pub column: ScaleColumn,
    /// Test accuracy at the best validation epoch, one per split.
    pub accs: Vec<f64>,
    pub mean: f64,
    pub without_shared: Option<Vec<f64>>,
    pub without_shared_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub rows: Vec<ScaleReportRow>,
}

impl ScaleReport {
    pub fn row(&self, column: ScaleColumn) -> Option<&ScaleReportRow> {
        self.rows.iter().find(|r| r.column == column)
    }

    pub fn mean(&self, column: ScaleColumn) -> Option<f64> {
        self.row(column).map(|r| r.mean)
    }
}

struct ScaleSupports {
    a: SparseMatrix,
    at: SparseMatrix,
    aat: SparseMatrix,
    ata: SparseMatrix,
    aa: SparseMatrix,
    atat: SparseMatrix,
}

impl ScaleSupports {
    fn new(adjacency: &SparseMatrix, cfg: &ModelConfig) -> Result<Self> {
        let raw = adjacency.pattern();
        let raw_t = sparse::transpose(&raw);
        let higher = |x: &SparseMatrix, y: &SparseMatrix| -> Result<SparseMatrix> {
            Ok(sparse::apply_self_loops(
                &sparse::spgemm(x, y, Semiring::Pattern)?,
                cfg.selfloop_higher,
            )?)
        };
        Ok(Self {
            aat: higher(&raw, &raw_t)?,
            ata: higher(&raw_t, &raw)?,
            aa: higher(&raw, &raw)?,
            atat: higher(&raw_t, &raw_t)?,
            a: sparse::apply_self_loops(&raw, cfg.selfloop)?,
            at: sparse::apply_self_loops(&raw_t, cfg.selfloop)?,
        })
    }

    fn for_column(&self, column: ScaleColumn) -> Vec<SparseMatrix> {
        let pick = |m: &SparseMatrix| m.clone();
        match column {
            ScaleColumn::A => vec![pick(&self.a)],
            ScaleColumn::At => vec![pick(&self.at)],
            ScaleColumn::APlusAt => vec![pick(&self.a), pick(&self.at)],
            ScaleColumn::Aat => vec![pick(&self.aat)],
            ScaleColumn::Ata => vec![pick(&self.ata)],
            ScaleColumn::AatPlusAta => vec![pick(&self.aat), pick(&self.ata)],
            ScaleColumn::Aa => vec![pick(&self.aa)],
            ScaleColumn::Atat => vec![pick(&self.atat)],
            ScaleColumn::AaPlusAtat => vec![pick(&self.aa), pick(&self.atat)],
            ScaleColumn::Zero => vec![SparseMatrix::zeros(self.a.n_rows(), self.a.n_cols())],
        }
    }
}

/// Trains one model per column and split, aggregating only over that
/// column's scaled graphs. `"+"` columns sum two separately weighted
/// aggregations. The `None` column sees an empty graph and zero features.
pub fn per_scale_report(
    graph: &DirectedGraph,
    splits: &[Split],
    options: &ReportOptions,
    exec: Execution,
) -> Result<ScaleReport> {
    if splits.is_empty() {
        return Err(HarnessError::NoSplits);
    }
    options.config.validate()?;
    options.hyper.validate()?;
    let n = graph.num_nodes();
    let supports = ScaleSupports::new(graph.adjacency(), &options.config)?;
    let bases = [graph.adjacency().pattern(), sparse::transpose(&graph.adjacency().pattern())];
    let blank = graph.with_parts(SparseMatrix::zeros(n, n), Matrix::zeros(n, graph.num_features()))?;

    // One task per (column, variant, split); variant 1 removes shared edges.
    let mut tasks = Vec::new();
    for (c, &column) in options.columns.iter().enumerate() {
        let variants = if options.remove_shared && column.is_second_scale() { 2 } else { 1 };
        for variant in 0..variants {
            for s in 0..splits.len() {
                tasks.push((c, column, variant, s));
            }
        }
    }
    let results = par::map_indexed(exec, tasks.len(), |t| -> Result<f64> {
        let (_, column, variant, s) = tasks[t];
        let mut mats = supports.for_column(column);
        if variant == 1 {
            mats = mats
                .iter()
                .map(|m| remove_shared_edges(m, &[&bases[0], &bases[1]]))
                .collect::<std::result::Result<_, _>>()?;
        }
        let g = if column == ScaleColumn::Zero { &blank } else { graph };
        let mut model = Model::with_supports(&options.config, g, mats, options.hyper.seed)?;
        Ok(train_model(&mut model, g, &splits[s], &options.hyper)?.test_acc_at_best_val)
    });

    let mut rows: Vec<ScaleReportRow> = options
        .columns
        .iter()
        .map(|&column| ScaleReportRow {
            column,
            accs: Vec::new(),
            mean: 0.0,
            without_shared: None,
            without_shared_mean: None,
        })
        .collect();
    for (&(c, _, variant, _), acc) in tasks.iter().zip(results) {
        let acc = acc?;
        if variant == 0 {
            rows[c].accs.push(acc);
        } else {
            rows[c].without_shared.get_or_insert_with(Vec::new).push(acc);
        }
    }
    for row in &mut rows {
        row.mean = mean_and_std(&row.accs).0;
        row.without_shared_mean = row.without_shared.as_deref().map(|v| mean_and_std(v).0);
    }
    Ok(ScaleReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{generate_dsbm, random_splits, DsbmParams};

    #[test]
    fn column_names_round_trip() {
        for c in ScaleColumn::ALL {
            assert_eq!(c.name().parse::<ScaleColumn>().unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.name()));
        }
        assert_eq!("Aᵀ".parse::<ScaleColumn>().unwrap(), ScaleColumn::At);
        assert!("AAA".parse::<ScaleColumn>().is_err());
    }

    #[test]
    fn none_column_predicts_training_majority() {
        let g = generate_dsbm(&DsbmParams::homophilic(60, 3, 1)).unwrap();
        let split = Split {
            train: (0..30).collect(),
            val: (30..45).collect(),
            test: (45..60).collect(),
        };
        let options = ReportOptions {
            columns: vec![ScaleColumn::Zero],
            hyper: TrainHyper {
                max_epochs: 100,
                patience: 30,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = per_scale_report(&g, std::slice::from_ref(&split), &options, Execution::Sequential).unwrap();
        let mut counts = [0usize; 3];
        for &i in &split.train {
            counts[g.labels()[i]] += 1;
        }
        let top = counts.iter().max().unwrap();
        let majority: Vec<usize> = (0..3).filter(|&c| counts[c] == *top).collect();
        let rates: Vec<f64> = majority
            .iter()
            .map(|&c| split.test.iter().filter(|&&i| g.labels()[i] == c).count() as f64 / 15.0)
            .collect();
        let acc = report.mean(ScaleColumn::Zero).unwrap();
        assert!(rates.contains(&acc), "{acc} not in {rates:?}");
    }

    #[test]
    fn report_has_one_row_per_column_and_shared_variants() {
        let g = generate_dsbm(&DsbmParams::homophilic(40, 2, 3)).unwrap();
        let splits = random_splits(&g, 2, 0.5, 0.25, 3).unwrap();
        let options = ReportOptions {
            config: ModelConfig {
                hidden: 4,
                layers: 1,
                selfloop: SelfLoopMode::Keep,
                ..ModelConfig::default()
            },
            hyper: TrainHyper {
                max_epochs: 5,
                ..Default::default()
            },
            ..Default::default()
        };
        let seq = per_scale_report(&g, &splits.splits, &options, Execution::Sequential).unwrap();
        assert_eq!(seq.rows.len(), 10);
        for row in &seq.rows {
            assert_eq!(row.accs.len(), 2);
            assert_eq!(row.without_shared.is_some(), row.column.is_second_scale());
        }
        let par = per_scale_report(&g, &splits.splits, &options, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
    }
}
