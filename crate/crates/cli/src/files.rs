//! Output files: atomic writes and the CSV formats.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hbtsim_core::{CoincidenceHistogram, G2Curve};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

pub fn ensure_dir(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)
}

/// Correlation table with columns `tau_ns,counts,C_N,sigma`, plus
/// `g2_corrected,g2_corrected_sigma` when a corrected curve is given.
///
/// Floats are written in shortest round-trip form, counts as integers.
pub fn correlation_csv(
    histogram: &CoincidenceHistogram,
    raw: &G2Curve,
    corrected: Option<&G2Curve>,
) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["tau_ns", "counts", "C_N", "sigma"];
    if corrected.is_some() {
        header.extend(["g2_corrected", "g2_corrected_sigma"]);
    }
    w.write_record(&header).expect("in-memory write");
    for i in 0..raw.len() {
        let mut row = vec![
            raw.delays_ns[i].to_string(),
            histogram.counts[i].to_string(),
            raw.values[i].to_string(),
            raw.sigma[i].to_string(),
        ];
        if let Some(c) = corrected {
            row.push(c.values[i].to_string());
            row.push(c.sigma[i].to_string());
        }
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// A numeric CSV table read by column name.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: line {line}, column `{column}`: cannot parse `{value}` as a number")]
    Number { path: String, line: u64, column: String, value: String },
    #[error("{path}: missing column `{column}` (found: {found})")]
    MissingColumn { path: String, column: String, found: String },
}

impl Table {
    pub fn read(path: &Path) -> Result<Table, TableError> {
        let name = path.display().to_string();
        let csv_err = |source| TableError::Csv { path: name.clone(), source };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(csv_err)?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let row = record
                .iter()
                .zip(&headers)
                .map(|(v, h)| {
                    v.trim().parse::<f64>().map_err(|_| TableError::Number {
                        path: name.clone(),
                        line,
                        column: h.clone(),
                        value: v.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        Ok(Table { headers, rows })
    }

    pub fn has(&self, column: &str) -> bool {
        self.headers.iter().any(|h| h == column)
    }

    pub fn column(&self, path: &Path, column: &str) -> Result<Vec<f64>, TableError> {
        let i = self.headers.iter().position(|h| h == column).ok_or_else(|| TableError::MissingColumn {
            path: path.display().to_string(),
            column: column.to_string(),
            found: self.headers.join(","),
        })?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hbtsim_core::correlate::{normalize, pair_histogram};
    use hbtsim_core::{BinSpec, PhotonStream};

    #[test]
    fn csv_round_trip() {
        let s1 = PhotonStream::new(vec![1_000, 50_000, 90_123], 1_000_000, "a").unwrap();
        let s2 = PhotonStream::new(vec![3_000, 47_000, 90_000], 1_000_000, "b").unwrap();
        let h = pair_histogram(&s1, &s2, BinSpec::centered(1000, 10_000).unwrap()).unwrap();
        let raw = normalize(&h).unwrap();
        let bytes = correlation_csv(&h, &raw, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_atomic(&path, &bytes).unwrap();
        let table = Table::read(&path).unwrap();
        assert_eq!(table.headers, ["tau_ns", "counts", "C_N", "sigma"]);
        assert_eq!(table.column(&path, "C_N").unwrap(), raw.values);
        assert_eq!(table.column(&path, "sigma").unwrap(), raw.sigma);
        let counts: Vec<u64> = table.column(&path, "counts").unwrap().iter().map(|&c| c as u64).collect();
        assert_eq!(counts, h.counts);
        assert!(table.column(&path, "g2_corrected").is_err());
        assert!(!path.with_extension("csv.tmp").exists());
    }
}
