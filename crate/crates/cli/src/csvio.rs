//! CSV readers and writers. Every time series starts with a `time_us` column.

use std::fs::File;
use std::path::Path;

use qfeedback::predictor::HomodyneRecord;

use crate::Failure;

/// One row of the lifetime table.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RateRow {
    pub scheme: String,
    pub gamma_eff_per_us: f64,
    pub t1_us: f64,
}

fn writer(path: &Path) -> Result<csv::Writer<File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| Failure::io(format!("cannot create {}", path.display()), e))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<(), Failure> {
    w.flush()
        .map_err(|e| Failure::io(format!("cannot write {}", path.display()), e))
}

pub fn write_rates(path: &Path, rows: &[RateRow]) -> Result<(), Failure> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Failure::io(format!("cannot write {}", path.display()), e))?;
    }
    finish(w, path)
}

pub fn read_rates(path: &Path) -> Result<Vec<RateRow>, Failure> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Failure::io(format!("cannot open {}", path.display()), e))?;
    rdr.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::io(format!("malformed rate table {}", path.display()), e))
}

/// Writes `time_us,<names…>` with one column per series.
pub fn write_columns(path: &Path, times: &[f64], names: &[&str], columns: &[&[f64]]) -> Result<(), Failure> {
    let mut w = writer(path)?;
    let err = |e: csv::Error| Failure::io(format!("cannot write {}", path.display()), e);
    let mut header = vec!["time_us"];
    header.extend_from_slice(names);
    w.write_record(&header).map_err(err)?;
    for (k, t) in times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(columns.iter().map(|c| c[k].to_string()));
        w.write_record(&row).map_err(err)?;
    }
    finish(w, path)
}

pub fn write_record(path: &Path, record: &HomodyneRecord) -> Result<(), Failure> {
    let times: Vec<f64> = record.times().collect();
    write_columns(path, &times, &["current"], &[record.samples()])
}

/// Reads a `time_us,current` file into a uniformly sampled record.
pub fn read_record(path: &Path) -> Result<HomodyneRecord, Failure> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Failure::io(format!("cannot open {}", path.display()), e))?;
    let headers = rdr
        .headers()
        .map_err(|e| Failure::io(format!("cannot read {}", path.display()), e))?
        .clone();
    if headers.len() != 2 || &headers[0] != "time_us" || &headers[1] != "current" {
        return Err(Failure::Config(format!(
            "{}: expected header `time_us,current`, found `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Failure::io(format!("cannot read {}", path.display()), e))?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                Failure::Config(format!("{}: row {}: `{s}` is not a number", path.display(), i + 2))
            })
        };
        times.push(parse(&row[0])?);
        values.push(parse(&row[1])?);
    }
    HomodyneRecord::from_timed(&times, values)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        let rec = HomodyneRecord::new(0.5, vec![0.1, -2.5e-3, 1.0 / 3.0, 7.0]).unwrap();
        write_record(&path, &rec).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("time_us,current\n0.5,0.1\n"));
        assert_eq!(read_record(&path).unwrap(), rec);
    }

    #[test]
    fn rate_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rates.csv");
        let rows = vec![RateRow {
            scheme: "wm_eta_0.50".into(),
            gamma_eff_per_us: 0.015,
            t1_us: 1.0 / 0.015,
        }];
        write_rates(&path, &rows).unwrap();
        assert_eq!(read_rates(&path).unwrap(), rows);
    }

    #[test]
    fn bad_record_files_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,current\n1,2\n").unwrap();
        assert!(matches!(read_record(&path), Err(Failure::Config(_))));
        std::fs::write(&path, "time_us,current\n1,2\n2,x\n").unwrap();
        assert!(matches!(read_record(&path), Err(Failure::Config(m)) if m.contains("row 3")));
        assert!(matches!(read_record(&dir.path().join("missing.csv")), Err(Failure::Io(_))));
    }
}
