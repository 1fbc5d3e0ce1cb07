//! Text formats: tab-separated edge lists and Matrix-Market coordinate dumps.

use std::fmt::Write as _;
use std::io::BufRead;

use super::{Result, SparseError, SparseMatrix};

/// Parses `src<TAB>dst` lines (0-based). Blank lines and anything after `#`
/// are ignored; any run of whitespace is accepted as the separator.
pub fn parse_edge_list(reader: impl BufRead) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let parse = |f: Option<&str>| -> Result<usize> {
            let f = f.ok_or_else(|| SparseError::Parse {
                line: i + 1,
                msg: "expected two node indices".into(),
            })?;
            f.parse().map_err(|_| SparseError::Parse {
                line: i + 1,
                msg: format!("invalid node index '{f}'"),
            })
        };
        let src = parse(fields.next())?;
        let dst = parse(fields.next())?;
        if fields.next().is_some() {
            return Err(SparseError::Parse {
                line: i + 1,
                msg: "expected exactly two fields".into(),
            });
        }
        edges.push((src, dst));
    }
    Ok(edges)
}

/// One `src\tdst` line per stored entry, row-major.
pub fn format_edge_list(s: &SparseMatrix) -> String {
    let mut out = String::with_capacity(s.nnz() * 8);
    for (r, c) in s.edges() {
        let _ = writeln!(out, "{r}\t{c}");
    }
    out
}

/// Matrix-Market `coordinate real general` text with 1-based indices.
pub fn format_matrix_market(s: &SparseMatrix) -> String {
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", s.n_rows(), s.n_cols(), s.nnz());
    for (r, c, v) in s.iter() {
        let _ = writeln!(out, "{} {} {}", r + 1, c + 1, v);
    }
    out
}

pub fn parse_matrix_market(reader: impl BufRead) -> Result<SparseMatrix> {
    let mut header: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let err = |msg: &str| SparseError::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err("expected three fields"));
        }
        match header {
            None => {
                let dims: Vec<usize> = fields
                    .iter()
                    .map(|f| f.parse().map_err(|_| err("invalid size line")))
                    .collect::<Result<_>>()?;
                header = Some((dims[0], dims[1], dims[2]));
            }
            Some(_) => {
                let r: usize = fields[0].parse().map_err(|_| err("invalid row"))?;
                let c: usize = fields[1].parse().map_err(|_| err("invalid column"))?;
                let v: f64 = fields[2].parse().map_err(|_| err("invalid value"))?;
                if r == 0 || c == 0 {
                    return Err(err("indices are 1-based"));
                }
                triplets.push((r - 1, c - 1, v));
            }
        }
    }
    let (rows, cols, nnz) = header.ok_or(SparseError::Parse {
        line: 0,
        msg: "missing size line".into(),
    })?;
    if triplets.len() != nnz {
        return Err(SparseError::Parse {
            line: 0,
            msg: format!("header declares {nnz} entries, found {}", triplets.len()),
        });
    }
    SparseMatrix::from_triplets(rows, cols, triplets)
}
