//! Result files: atomic writes, record loading, aggregation and the text
//! table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::TaskKind;
use crate::error::{Error, Result};
use crate::eval::{mean_stderr, UnitActivationStats};
use crate::experiment::RunRecord;
use crate::objectives::Method;

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Every `*.json` record under `dir/records` (or `dir` itself), sorted by
/// task, method and run.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let sub = dir.join("records");
    let root = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let entries = std::fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(&root, e))?.path();
        if p.extension().is_some_and(|x| x == "json") {
            paths.push(p);
        }
    }
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let rec: RunRecord = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: p.clone(),
            detail: e.to_string(),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no result records in {}",
            root.display()
        )));
    }
    out.sort_by_key(|r| (r.task.name(), r.method, r.run));
    Ok(out)
}

/// One aggregate cell. `n_support = 0` is the invariant predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub task: TaskKind,
    pub method: Method,
    pub domain: String,
    pub n_support: usize,
    pub runs: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Mean and standard error over runs of the test accuracy and of each
/// adaptation mean.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(&str, Method, usize), (TaskKind, Vec<f64>)> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.task.name(), r.method, 0))
            .or_insert_with(|| (r.task, Vec::new()))
            .1
            .push(r.test_accuracy);
        for a in &r.adaptation {
            cells
                .entry((r.task.name(), r.method, a.n_support))
                .or_insert_with(|| (r.task, Vec::new()))
                .1
                .push(a.mean);
        }
    }
    cells
        .into_iter()
        .map(|((_, method, n_support), (task, xs))| {
            let (mean, stderr) = mean_stderr(&xs);
            AggregateRow {
                task,
                method,
                domain: "test".into(),
                n_support,
                runs: xs.len(),
                mean,
                stderr,
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("method,domain,n_support,mean,stderr\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.method.name(),
            r.domain,
            r.n_support,
            r.mean,
            r.stderr
        );
    }
    s
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_atomic(path, aggregate_csv(rows).as_bytes())
}

pub fn histogram_csv(stats: &UnitActivationStats) -> String {
    let mut s = String::from("unit,z,bin_lo,bin_hi,count\n");
    for b in &stats.histogram {
        let _ = writeln!(s, "{},{},{},{},{}", b.unit, b.z, b.bin_lo, b.bin_hi, b.count);
    }
    s
}

fn cell(row: Option<&AggregateRow>) -> String {
    match row {
        Some(r) => format!("{:.2}±{:.2}", 100.0 * r.mean, 100.0 * r.stderr),
        None => "-".into(),
    }
}

/// Fixed-width table with one row per method (ERM, IRM, MAML, ACTIR) and
/// columns for test accuracy and each adaptation size, in percent.
pub fn render_table(rows: &[AggregateRow]) -> String {
    let mut tasks: Vec<TaskKind> = rows.iter().map(|r| r.task).collect();
    tasks.dedup();
    let mut out = String::new();
    for task in tasks {
        let here: Vec<&AggregateRow> = rows.iter().filter(|r| r.task == task).collect();
        let mut sizes: Vec<usize> = here.iter().map(|r| r.n_support).filter(|&n| n > 0).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let mut header = vec!["Method".to_string(), "Test Acc.".to_string()];
        header.extend(sizes.iter().map(|n| format!("Adaptation({n})")));
        let mut lines = vec![header];
        for m in Method::ALL {
            if !here.iter().any(|r| r.method == m) {
                continue;
            }
            let find = |n: usize| here.iter().copied().find(|r| r.method == m && r.n_support == n);
            let mut line = vec![m.display().to_string(), cell(find(0))];
            line.extend(sizes.iter().map(|&n| cell(find(n))));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let _ = writeln!(out, "{}", task.name());
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{}{}", s, " ".repeat(w - s.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
    }
    out
}

/// Reads every record in `dir` and renders the table.
pub fn emit_report(dir: &Path) -> Result<String> {
    Ok(render_table(&aggregate(&load_records(dir)?)))
}
