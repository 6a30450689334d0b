//! Metrics CSVs, manifests and content hashes.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::Settings;
use super::HarnessError;
use crate::runtime::MetricsRecord;

pub const METRICS_HEADER: [&str; 7] = [
    "clock",
    "wall_ms",
    "objective",
    "degree",
    "staleness_mean",
    "staleness_var",
    "epsilon",
];

/// Git-style object hash: SHA-256 over `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("sha256:{}", hex::encode(h.finalize()))
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".partial");
    PathBuf::from(s)
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Io(e.to_string())
}

/// Floats use the shortest text that parses back to the same value.
pub fn metrics_csv(records: &[MetricsRecord]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.clock.to_string(),
            r.wall_ms.to_string(),
            format!("{:?}", r.objective),
            r.degree.to_string(),
            format!("{:?}", r.staleness_mean),
            format!("{:?}", r.staleness_var),
            r.epsilon.map_or(String::new(), |e| format!("{e:?}")),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<(), HarnessError> {
    fs::write(path, metrics_csv(records)?)?;
    Ok(())
}

/// Rows of a metrics CSV with the `wall_ms` column removed, for comparing
/// reruns.
pub fn metrics_without_wall(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != 1)
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect()
}

pub fn write_manifest(path: &Path, s: &Settings) -> Result<(), HarnessError> {
    let text = format!(
        "# mlps run manifest; rerun with `mlps run --config {}`\n{}",
        path.display(),
        s.to_text()
    );
    fs::write(path, text)?;
    Ok(())
}

/// A small CSV with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git_object_layout() {
        // sha256 of "blob 0\0"
        assert_eq!(
            content_hash(b""),
            "sha256:473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn csv_has_header_and_drops_wall() {
        let r = MetricsRecord {
            clock: 0,
            wall_ms: 7,
            objective: 0.1,
            degree: 2,
            staleness_mean: 0.0,
            staleness_var: 0.0,
            epsilon: None,
        };
        let text = String::from_utf8(metrics_csv(&[r]).unwrap()).unwrap();
        assert_eq!(
            text,
            "clock,wall_ms,objective,degree,staleness_mean,staleness_var,epsilon\n0,7,0.1,2,0.0,0.0,\n"
        );
        assert_eq!(metrics_without_wall(&text)[1], "0,0.1,2,0.0,0.0,");
    }
}
