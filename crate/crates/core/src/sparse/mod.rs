//! Compressed sparse row matrices and the kernels the rest of the crate is
//! built on: transpose, SpGEMM, support set-algebra, self-loop handling,
//! degrees and symmetric degree normalization.
//!
//! Every constructor canonicalizes: column indices inside a row are strictly
//! increasing, so two matrices with the same entries compare equal with `==`.
//! A *pattern* matrix stores only ones; directed graphs are patterns.

pub mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::Matrix;
use crate::par::{self, Execution};

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("dimension mismatch: cannot multiply {0}x{1} by {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeValue { row: usize, col: usize, value: f64 },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("index ({row}, {col}) out of bounds for {n_rows}x{n_cols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("invalid CSR structure: {0}")]
    InvalidStructure(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SparseError>;

/// How to treat diagonal entries before a matrix is used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelfLoopMode {
    /// Set every diagonal entry to 1.
    Add,
    /// Drop every diagonal entry.
    Remove,
    /// Leave the diagonal as given.
    #[default]
    #[serde(alias = "none")]
    Keep,
}

impl std::str::FromStr for SelfLoopMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "add" => Ok(Self::Add),
            "remove" => Ok(Self::Remove),
            "keep" | "none" | "0" => Ok(Self::Keep),
            other => Err(format!("unknown self-loop mode '{other}' (add|remove|keep)")),
        }
    }
}

impl std::fmt::Display for SelfLoopMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Add => "add",
            Self::Remove => "remove",
            Self::Keep => "keep",
        })
    }
}

/// Product semantics for [`spgemm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Semiring {
    /// Ordinary real arithmetic.
    Counted,
    /// Boolean OR-AND: the support of the product, stored as ones.
    Pattern,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Number of stored entries per row (out-degree for an adjacency matrix).
    Row,
    /// Number of stored entries per column (in-degree).
    Col,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(row, col, v) in &entries {
            if row >= n_rows || col >= n_cols {
                return Err(SparseError::OutOfBounds {
                    row,
                    col,
                    n_rows,
                    n_cols,
                });
            }
            if !v.is_finite() {
                return Err(SparseError::NonFinite { row, col });
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a pattern matrix from directed edges; duplicates collapse.
    pub fn from_edges(
        n_rows: usize,
        n_cols: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        Ok(Self::from_triplets(n_rows, n_cols, edges.into_iter().map(|(r, c)| (r, c, 1.0)))?
            .pattern())
    }

    /// Validates raw CSR arrays.
    pub fn try_from_parts(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |m: &str| Err(SparseError::InvalidStructure(m.to_string()));
        if row_offsets.len() != n_rows + 1 || row_offsets[0] != 0 {
            return bad("row_offsets must have n_rows + 1 entries starting at 0");
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return bad("row_offsets must be non-decreasing");
        }
        if row_offsets[n_rows] != col_indices.len() || col_indices.len() != values.len() {
            return bad("row_offsets, col_indices and values disagree on nnz");
        }
        for r in 0..n_rows {
            let cols = &col_indices[row_offsets[r]..row_offsets[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad("columns within a row must be strictly increasing");
            }
            for (&c, &v) in cols.iter().zip(&values[row_offsets[r]..row_offsets[r + 1]]) {
                if c >= n_cols {
                    return Err(SparseError::OutOfBounds {
                        row: r,
                        col: c,
                        n_rows,
                        n_cols,
                    });
                }
                if !v.is_finite() {
                    return Err(SparseError::NonFinite { row: r, col: c });
                }
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Keeps every non-zero entry of a dense matrix.
    pub fn from_dense(dense: &Matrix) -> Self {
        let triplets = (0..dense.rows()).flat_map(|r| {
            dense
                .row(r)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(move |(c, &v)| (r, c, v))
                .collect::<Vec<_>>()
        });
        Self::from_triplets(dense.rows(), dense.cols(), triplets)
            .expect("dense entries are in bounds")
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.iter() {
            out.set(r, c, v);
        }
        out
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        (&self.col_indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).0.binary_search(&c).is_ok()
    }

    /// Stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Stored coordinates in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.iter().map(|(r, c, _)| (r, c))
    }

    pub fn is_pattern(&self) -> bool {
        self.values.iter().all(|&v| v == 1.0)
    }

    /// Same support, every value set to 1.
    pub fn pattern(&self) -> SparseMatrix {
        SparseMatrix {
            values: vec![1.0; self.nnz()],
            ..self.clone()
        }
    }

    /// Same support, values replaced by `f(row, col, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> SparseMatrix {
        let values = self.iter().map(|(r, c, v)| f(r, c, v)).collect();
        SparseMatrix {
            values,
            ..self.clone()
        }
    }

    /// Diagonal entries (zero where absent) of a square matrix.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    fn ensure_same_shape(&self, other: &SparseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(SparseError::ShapeMismatch(
                self.n_rows,
                self.n_cols,
                other.n_rows,
                other.n_cols,
            ));
        }
        Ok(())
    }

    fn ensure_square(&self) -> Result<()> {
        if !self.is_square() {
            return Err(SparseError::NotSquare(self.n_rows, self.n_cols));
        }
        Ok(())
    }

    fn from_rows_unchecked(n_rows: usize, n_cols: usize, rows: Vec<(Vec<usize>, Vec<f64>)>) -> Self {
        let nnz = rows.iter().map(|(c, _)| c.len()).sum();
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_offsets.push(0);
        for (cols, vals) in rows {
            col_indices.extend(cols);
            values.extend(vals);
            row_offsets.push(col_indices.len());
        }
        Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }
}

/// `result[j][i] = s[i][j]`, by counting sort over columns.
pub fn transpose(s: &SparseMatrix) -> SparseMatrix {
    let mut row_offsets = vec![0usize; s.n_cols + 1];
    for &c in &s.col_indices {
        row_offsets[c + 1] += 1;
    }
    for i in 0..s.n_cols {
        row_offsets[i + 1] += row_offsets[i];
    }
    let mut next = row_offsets.clone();
    let mut col_indices = vec![0usize; s.nnz()];
    let mut values = vec![0.0; s.nnz()];
    // Rows are visited in increasing order, so each output row fills sorted.
    for (r, c, v) in s.iter() {
        let slot = next[c];
        col_indices[slot] = r;
        values[slot] = v;
        next[c] += 1;
    }
    SparseMatrix {
        n_rows: s.n_cols,
        n_cols: s.n_rows,
        row_offsets,
        col_indices,
        values,
    }
}

/// Below this many multiply-adds the parallel SpGEMM path is not worth the
/// scheduling overhead.
const PARALLEL_SPGEMM_MIN_WORK: usize = 1 << 16;

/// Sparse-sparse product with a per-row dense accumulator.
pub fn spgemm(a: &SparseMatrix, b: &SparseMatrix, semiring: Semiring) -> Result<SparseMatrix> {
    let work: usize = a.col_indices.iter().map(|&k| b.row(k).0.len()).sum();
    let exec = if work >= PARALLEL_SPGEMM_MIN_WORK {
        Execution::default()
    } else {
        Execution::Sequential
    };
    spgemm_with(a, b, semiring, exec)
}

/// [`spgemm`] with an explicit execution mode.
pub fn spgemm_with(
    a: &SparseMatrix,
    b: &SparseMatrix,
    semiring: Semiring,
    exec: Execution,
) -> Result<SparseMatrix> {
    if a.n_cols != b.n_rows {
        return Err(SparseError::DimensionMismatch(
            a.n_rows, a.n_cols, b.n_rows, b.n_cols,
        ));
    }
    let n_cols = b.n_cols;
    let row_product = |r: usize, acc: &mut Vec<f64>, seen: &mut Vec<bool>| {
        let (a_cols, a_vals) = a.row(r);
        let mut touched = Vec::new();
        for (&k, &av) in a_cols.iter().zip(a_vals) {
            let (b_cols, b_vals) = b.row(k);
            for (&j, &bv) in b_cols.iter().zip(b_vals) {
                if !seen[j] {
                    seen[j] = true;
                    touched.push(j);
                }
                acc[j] += av * bv;
            }
        }
        touched.sort_unstable();
        let mut vals = Vec::with_capacity(touched.len());
        for &j in &touched {
            vals.push(match semiring {
                Semiring::Counted => acc[j],
                Semiring::Pattern => 1.0,
            });
            acc[j] = 0.0;
            seen[j] = false;
        }
        (touched, vals)
    };

    let rows: Vec<(Vec<usize>, Vec<f64>)> = if exec.is_parallel() {
        // One accumulator per chunk of rows keeps allocation off the hot path.
        const CHUNK: usize = 64;
        let n_chunks = a.n_rows.div_ceil(CHUNK);
        par::map_indexed(exec, n_chunks, |chunk| {
            let mut acc = vec![0.0; n_cols];
            let mut seen = vec![false; n_cols];
            let end = ((chunk + 1) * CHUNK).min(a.n_rows);
            (chunk * CHUNK..end)
                .map(|r| row_product(r, &mut acc, &mut seen))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    } else {
        let mut acc = vec![0.0; n_cols];
        let mut seen = vec![false; n_cols];
        (0..a.n_rows)
            .map(|r| row_product(r, &mut acc, &mut seen))
            .collect()
    };
    Ok(SparseMatrix::from_rows_unchecked(a.n_rows, n_cols, rows))
}

fn merge_supports(
    a: &SparseMatrix,
    b: &SparseMatrix,
    keep: impl Fn(bool, bool) -> bool,
) -> Result<SparseMatrix> {
    a.ensure_same_shape(b)?;
    let rows = (0..a.n_rows)
        .map(|r| {
            let (ac, _) = a.row(r);
            let (bc, _) = b.row(r);
            let mut cols = Vec::with_capacity(ac.len() + bc.len());
            let (mut i, mut j) = (0, 0);
            while i < ac.len() || j < bc.len() {
                let (col, in_a, in_b) = match (ac.get(i), bc.get(j)) {
                    (Some(&x), Some(&y)) if x == y => {
                        i += 1;
                        j += 1;
                        (x, true, true)
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        i += 1;
                        (x, true, false)
                    }
                    (Some(&x), None) => {
                        i += 1;
                        (x, true, false)
                    }
                    (_, Some(&y)) => {
                        j += 1;
                        (y, false, true)
                    }
                    (None, None) => unreachable!(),
                };
                if keep(in_a, in_b) {
                    cols.push(col);
                }
            }
            let vals = vec![1.0; cols.len()];
            (cols, vals)
        })
        .collect();
    Ok(SparseMatrix::from_rows_unchecked(a.n_rows, a.n_cols, rows))
}

/// Pattern whose support is the union of both supports.
pub fn pattern_union(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    merge_supports(a, b, |x, y| x || y)
}

/// Pattern whose support is the intersection of both supports.
pub fn pattern_intersection(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    merge_supports(a, b, |x, y| x && y)
}

/// Pattern whose support is `support(a) \ support(b)`.
pub fn pattern_difference(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    merge_supports(a, b, |x, y| x && !y)
}

/// Sets every diagonal entry to 1, leaving other entries untouched.
pub fn add_self_loops(s: &SparseMatrix) -> Result<SparseMatrix> {
    s.ensure_square()?;
    let rows = (0..s.n_rows)
        .map(|r| {
            let (cols, vals) = s.row(r);
            let mut out_c = Vec::with_capacity(cols.len() + 1);
            let mut out_v = Vec::with_capacity(cols.len() + 1);
            let mut placed = false;
            for (&c, &v) in cols.iter().zip(vals) {
                if !placed && c >= r {
                    out_c.push(r);
                    out_v.push(1.0);
                    placed = true;
                    if c == r {
                        continue;
                    }
                }
                out_c.push(c);
                out_v.push(v);
            }
            if !placed {
                out_c.push(r);
                out_v.push(1.0);
            }
            (out_c, out_v)
        })
        .collect();
    Ok(SparseMatrix::from_rows_unchecked(s.n_rows, s.n_cols, rows))
}

/// Drops every diagonal entry.
pub fn remove_self_loops(s: &SparseMatrix) -> Result<SparseMatrix> {
    s.ensure_square()?;
    let rows = (0..s.n_rows)
        .map(|r| {
            let (cols, vals) = s.row(r);
            cols.iter()
                .zip(vals)
                .filter(|(&c, _)| c != r)
                .map(|(&c, &v)| (c, v))
                .unzip()
        })
        .collect();
    Ok(SparseMatrix::from_rows_unchecked(s.n_rows, s.n_cols, rows))
}

pub fn apply_self_loops(s: &SparseMatrix, mode: SelfLoopMode) -> Result<SparseMatrix> {
    match mode {
        SelfLoopMode::Add => add_self_loops(s),
        SelfLoopMode::Remove => remove_self_loops(s),
        SelfLoopMode::Keep => {
            s.ensure_square()?;
            Ok(s.clone())
        }
    }
}

/// Stored-entry counts per row or per column.
pub fn degrees(s: &SparseMatrix, axis: Axis) -> Vec<usize> {
    match axis {
        Axis::Row => s.row_offsets.windows(2).map(|w| w[1] - w[0]).collect(),
        Axis::Col => {
            let mut deg = vec![0; s.n_cols];
            for &c in &s.col_indices {
                deg[c] += 1;
            }
            deg
        }
    }
}

/// `D_r^{-1/2} · S' · D_c^{-1/2}` where `S'` is `s` after `mode` and the
/// degrees are weighted row and column sums of `S'`. Zero-degree rows and
/// columns stay zero.
pub fn sym_normalize(s: &SparseMatrix, mode: SelfLoopMode) -> Result<SparseMatrix> {
    if let Some((row, col, value)) = s.iter().find(|&(_, _, v)| v < 0.0) {
        return Err(SparseError::NegativeValue { row, col, value });
    }
    let s = apply_self_loops(s, mode)?;
    let mut row_sum = vec![0.0; s.n_rows];
    let mut col_sum = vec![0.0; s.n_cols];
    for (r, c, v) in s.iter() {
        row_sum[r] += v;
        col_sum[c] += v;
    }
    let inv_sqrt = |d: f64| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
    let row_scale: Vec<f64> = row_sum.into_iter().map(inv_sqrt).collect();
    let col_scale: Vec<f64> = col_sum.into_iter().map(inv_sqrt).collect();
    Ok(s.map_values(|r, c, v| v * row_scale[r] * col_scale[c]))
}

/// `s · x` for dense `x`. Panics on dimension mismatch.
pub fn spmm_dense(s: &SparseMatrix, x: &Matrix) -> Matrix {
    assert_eq!(s.n_cols, x.rows(), "spmm dimension mismatch");
    let mut out = Matrix::zeros(s.n_rows, x.cols());
    for r in 0..s.n_rows {
        let (cols, vals) = s.row(r);
        let out_row = out.row_mut(r);
        for (&c, &v) in cols.iter().zip(vals) {
            for (o, &xv) in out_row.iter_mut().zip(x.row(c)) {
                *o += v * xv;
            }
        }
    }
    out
}

/// `sᵀ · g` for dense `g`, without building the transpose.
pub fn spmm_transposed_dense(s: &SparseMatrix, g: &Matrix) -> Matrix {
    assert_eq!(s.n_rows, g.rows(), "spmm dimension mismatch");
    let mut out = Matrix::zeros(s.n_cols, g.cols());
    for r in 0..s.n_rows {
        let (cols, vals) = s.row(r);
        let g_row = g.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            for (o, &gv) in out.row_mut(c).iter_mut().zip(g_row) {
                *o += v * gv;
            }
        }
    }
    out
}
