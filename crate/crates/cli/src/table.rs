//! CSV output: header row, LF line endings, reals printed with 17
//! significant digits so they parse back bit-exactly.

use std::fmt;
use std::path::Path;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v:.16e}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

/// Builds a record from heterogeneous values.
#[macro_export]
macro_rules! record {
    ($($v:expr),* $(,)?) => {
        vec![$($crate::table::Value::from($v)),*]
    };
}

/// Writes `records` under `schema` to `path`.
pub fn emit_csv(records: &[Vec<Value>], schema: &[&str], path: &Path) -> Result<(), CliError> {
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.len() != schema.len()) {
        return Err(CliError::BadSpec(format!(
            "record {i} has {} fields, schema has {}",
            r.len(),
            schema.len()
        )));
    }
    let io = |e: csv::Error| CliError::Io(format!("writing {}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(io)?;
    w.write_record(schema).map_err(io)?;
    for r in records {
        w.write_record(r.iter().map(Value::to_string)).map_err(io)?;
    }
    w.flush()
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

/// Reads a file written by [`emit_csv`] back as header and string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("reading {}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let header = r.headers().map_err(io)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(io))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_and_single_record() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        emit_csv(&[], &["iter", "delta"], &empty).unwrap();
        assert_eq!(std::fs::read_to_string(&empty).unwrap(), "iter,delta\n");

        let one = dir.path().join("one.csv");
        emit_csv(&[record![0usize, 1.5]], &["iter", "delta"], &one).unwrap();
        assert_eq!(
            std::fs::read_to_string(&one).unwrap(),
            "iter,delta\n0,1.5000000000000000e0\n"
        );
    }

    #[test]
    fn reals_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let values = [0.1, -1.0 / 3.0, 5.656854249492381, 1e-300, f64::MAX, 0.0];
        let records: Vec<_> = values.iter().map(|&v| record![v, "a,b"]).collect();
        emit_csv(&records, &["v", "label"], &path).unwrap();
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["v", "label"]);
        for (row, &v) in rows.iter().zip(&values) {
            assert_eq!(row[0].parse::<f64>().unwrap().to_bits(), v.to_bits());
            assert_eq!(row[1], "a,b");
        }
    }

    #[test]
    fn schema_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_csv(&[record![1usize]], &["a", "b"], &dir.path().join("x.csv"));
        assert!(matches!(err, Err(CliError::BadSpec(_))));
    }
}
