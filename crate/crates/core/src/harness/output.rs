use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{GridEntry, HarnessError, Result, ScaleReport};

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("harness types serialize");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One line per config: rank, mean/std test accuracy, mean validation
/// accuracy and the config as compact JSON.
pub fn format_leaderboard_tsv(entries: &[GridEntry]) -> String {
    let mut out = String::from("rank\tmean_val\tmean_test\tstd_test\tseed\tconfig\n");
    for e in entries {
        let config = serde_json::to_string(&e.config).expect("config serializes");
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            e.rank, e.mean_val, e.mean_test, e.std_test, e.seed, config
        );
    }
    out
}

/// One line per column; `without_shared` is empty for columns without a
/// shared-edges-removed variant.
pub fn format_report_tsv(report: &ScaleReport) -> String {
    let mut out = String::from("column\taccuracy\twithout_shared\truns\n");
    for row in &report.rows {
        let without = row.without_shared_mean.map(|m| format!("{m:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{}\t{:.6}\t{}\t{}", row.column, row.mean, without, row.accs.len());
    }
    out
}
