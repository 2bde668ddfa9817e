//! Plain-text result files and atomic file replacement.
//!
//! * topics: one topic per line, words separated by single spaces;
//! * theta: one document per line, `K` proportions separated by spaces;
//! * clusters / labels: one entry per line.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use crate::corpus::read_lines;
use crate::error::{Error, Result};
use crate::numkernel::DenseMatrix;

/// Writes `bytes` to a temporary sibling and renames it over `path`, so a
/// failure never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn lines_to_bytes<I: IntoIterator<Item = String>>(lines: I) -> Vec<u8> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out.into_bytes()
}

pub fn write_topics(path: &Path, topics: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &lines_to_bytes(topics.iter().map(|t| t.join(" "))))
}

pub fn read_topics(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

pub fn write_theta(path: &Path, theta: &DenseMatrix<f64>) -> Result<()> {
    let lines = (0..theta.rows()).map(|r| {
        theta
            .row(r)
            .iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(" ")
    });
    write_atomic(path, &lines_to_bytes(lines))
}

pub fn read_theta(path: &Path) -> Result<DenseMatrix<f64>> {
    let file = path.display().to_string();
    let mut rows = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    file: file.clone(),
                    line: i + 1,
                    msg: format!("not a number: {t:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    DenseMatrix::from_rows(&rows)
}

/// One entry per line (cluster ids, label strings).
pub fn write_lines<T: ToString>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, &lines_to_bytes(items.iter().map(T::to_string)))
}

/// Trimmed lines; blank lines are kept as empty entries so that positions
/// still line up with documents.
pub fn read_entries(path: &Path) -> Result<Vec<String>> {
    let mut lines: Vec<String> = read_lines(path)?.into_iter().map(|l| l.trim().to_string()).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    Ok(lines)
}
