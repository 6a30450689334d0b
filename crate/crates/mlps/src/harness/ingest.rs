//! Dense CSV and pair-file readers.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use mlps_core::dml::Pair;
use mlps_core::lasso::{DesignMatrix, LassoProblem};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Row-major samples from comma-separated text.
pub fn read_dense_csv<R: Read>(input: R, header: bool) -> Result<Vec<Vec<f64>>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(k, f)| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| IngestError::Parse {
                        line,
                        msg: format!("field {} is not a finite number: {f:?}", k + 1),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(IngestError::Parse {
                    line,
                    msg: format!("expected {} fields, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IngestError::Invalid("no data rows".into()));
    }
    Ok(rows)
}

pub fn ingest_dense_csv(path: &Path, header: bool) -> Result<Vec<Vec<f64>>, IngestError> {
    read_dense_csv(open(path)?, header)
}

/// Scale factors applied by [`lasso_from_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    /// Original column norms; each column was divided by its norm.
    pub column_norms: Vec<f64>,
    pub y_mean: f64,
    /// `y` was centered and divided by this (its standard deviation).
    pub y_scale: f64,
}

/// Splits rows into features and a last-column response, scales columns to
/// unit norm and standardizes `y`.
pub fn lasso_from_rows(rows: &[Vec<f64>], lambda: f64) -> Result<(LassoProblem, Scaling), IngestError> {
    let width = rows.first().map_or(0, Vec::len);
    if width < 2 {
        return Err(IngestError::Invalid(
            "need at least one feature column and a response column".into(),
        ));
    }
    let features: Vec<Vec<f64>> = rows.iter().map(|r| r[..width - 1].to_vec()).collect();
    let mut x = DesignMatrix::from_rows(&features).map_err(|e| IngestError::Invalid(e.to_string()))?;
    let norms = x.normalize_columns();
    if let Some(j) = norms.iter().position(|n| *n == 0.0) {
        return Err(IngestError::Invalid(format!("feature column {} is all zeros", j + 1)));
    }
    let n = rows.len() as f64;
    let y_raw: Vec<f64> = rows.iter().map(|r| r[width - 1]).collect();
    let y_mean = y_raw.iter().sum::<f64>() / n;
    let sd = (y_raw.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
    let y_scale = if sd > 0.0 { sd } else { 1.0 };
    let y = y_raw.iter().map(|v| (v - y_mean) / y_scale).collect();
    let problem = LassoProblem::new(x, y, lambda).map_err(|e| IngestError::Invalid(e.to_string()))?;
    Ok((
        problem,
        Scaling {
            column_norms: norms,
            y_mean,
            y_scale,
        },
    ))
}

/// Similar and dissimilar pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub dim: usize,
    pub similar: Vec<Pair>,
    pub dissimilar: Vec<Pair>,
}

/// Lines of `S|D` followed by `2 * dim` whitespace-separated numbers. Blank
/// lines and `#` comments are skipped. `dim` is taken from the first pair
/// when not given.
pub fn read_pairs<R: BufRead>(input: R, dim: Option<usize>) -> Result<PairSet, IngestError> {
    let mut set = PairSet {
        dim: dim.unwrap_or(0),
        ..PairSet::default()
    };
    for (i, line) in input.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| IngestError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut fields = body.split_whitespace();
        let label = fields.next().expect("non-empty line");
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| IngestError::Parse {
                        line: line_no,
                        msg: format!("not a finite number: {f:?}"),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if set.dim == 0 {
            if values.is_empty() || values.len() % 2 != 0 {
                return Err(IngestError::Parse {
                    line: line_no,
                    msg: format!("odd or empty coordinate count {}", values.len()),
                });
            }
            set.dim = values.len() / 2;
        }
        if values.len() != 2 * set.dim {
            return Err(IngestError::Parse {
                line: line_no,
                msg: format!("expected {} numbers, found {}", 2 * set.dim, values.len()),
            });
        }
        let pair = Pair::new(values[..set.dim].to_vec(), values[set.dim..].to_vec());
        match label {
            "S" | "s" => set.similar.push(pair),
            "D" | "d" => set.dissimilar.push(pair),
            other => {
                return Err(IngestError::Parse {
                    line: line_no,
                    msg: format!("label must be S or D, found {other:?}"),
                })
            }
        }
    }
    Ok(set)
}

pub fn ingest_pairs(path: &Path, dim: Option<usize>) -> Result<PairSet, IngestError> {
    read_pairs(BufReader::new(open(path)?), dim)
}

/// Writes pairs in the format [`read_pairs`] accepts.
pub fn write_pairs<W: std::io::Write>(out: &mut W, similar: &[Pair], dissimilar: &[Pair]) -> std::io::Result<()> {
    for (label, pairs) in [("S", similar), ("D", dissimilar)] {
        for p in pairs {
            write!(out, "{label}")?;
            for v in p.a.iter().chain(&p.b) {
                write!(out, " {v:?}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Writes `X` and `y` as a headerless dense CSV, `y` last.
pub fn write_dense_csv<W: std::io::Write>(out: W, problem: &LassoProblem) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let x = problem.x();
    for i in 0..x.samples() {
        let mut row: Vec<String> = (0..x.features()).map(|j| format!("{:?}", x.get(i, j))).collect();
        row.push(format!("{:?}", problem.y()[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_file() {
        let rows = read_dense_csv("1,0\n0,1\n".as_bytes(), false).unwrap();
        assert_eq!(rows, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let x = DesignMatrix::from_rows(&rows).unwrap();
        assert_eq!(x.column(0), &[1.0, 0.0]);
        assert_eq!(x.column(1), &[0.0, 1.0]);
    }

    #[test]
    fn column_is_normalized() {
        let (p, s) = lasso_from_rows(&[vec![3.0, 1.0], vec![4.0, 3.0]], 0.1).unwrap();
        assert_eq!(p.x().column(0), &[0.6, 0.8]);
        assert_eq!(s.column_norms, vec![5.0]);
        assert_eq!((s.y_mean, s.y_scale), (2.0, 1.0));
        assert_eq!(p.y(), &[-1.0, 1.0]);
    }

    #[test]
    fn header_and_errors_carry_lines() {
        let rows = read_dense_csv("a,b\n1,2\n".as_bytes(), true).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0]]);
        match read_dense_csv("1,2\n3\n".as_bytes(), false) {
            Err(IngestError::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match read_dense_csv("1,2\n3,x\n".as_bytes(), false) {
            Err(IngestError::Parse { line: 2, msg }) => assert!(msg.contains("field 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pair_line() {
        let set = read_pairs("S 1 0 0 0\n".as_bytes(), Some(2)).unwrap();
        assert_eq!(set.similar, vec![Pair::new(vec![1.0, 0.0], vec![0.0, 0.0])]);
        assert!(set.dissimilar.is_empty());
        let set = read_pairs("# c\nD 1 2 3 4\n\nS 0 0 1 1\n".as_bytes(), None).unwrap();
        assert_eq!((set.dim, set.similar.len(), set.dissimilar.len()), (2, 1, 1));
        match read_pairs("S 1 0\nS 1 0 0\n".as_bytes(), None) {
            Err(IngestError::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_pairs("X 1 0\n".as_bytes(), None),
            Err(IngestError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn pairs_round_trip() {
        let s = vec![Pair::new(vec![0.1, -2.5], vec![3.0, 1e-9])];
        let d = vec![Pair::new(vec![1.0, 2.0], vec![0.0, 0.0])];
        let mut buf = Vec::new();
        write_pairs(&mut buf, &s, &d).unwrap();
        let set = read_pairs(buf.as_slice(), None).unwrap();
        assert_eq!((set.similar, set.dissimilar), (s, d));
    }
}
