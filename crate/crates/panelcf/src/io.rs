//! CSV readers and writers for panels, covariates and result tables.
//!
//! Missing outcomes are written as an empty field or `NA` and read back as NaN. Numbers
//! are written in Rust's shortest round-trip form, so a rectangular panel survives a
//! save/load cycle bit for bit.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use panelcf_core::propensity::{CovariateTable, UnitCovariates};
use panelcf_core::{Matrix, PanelMatrix};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One row per unit: `unit,<t1>,<t2>,...`.
    #[default]
    UnitsAsRows,
    /// One row per cell: `unit,time,value`.
    LongFormat,
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: duplicate cell for unit `{unit}` at time `{time}`")]
    DuplicateCell { row: usize, unit: String, time: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("row {row}: cannot parse `{field}` as a number")]
    BadNumber { row: usize, field: String },
    #[error("header: {0}")]
    Header(String),
    #[error(transparent)]
    Panel(#[from] panelcf_core::Error),
}

fn reader<R: Read>(src: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).comment(Some(b'#')).trim(csv::Trim::All).from_reader(src)
}

fn parse_cell(field: &str, row: usize) -> Result<f64, CsvError> {
    if field.is_empty() || field == "NA" {
        return Ok(f64::NAN);
    }
    field.parse().map_err(|_| CsvError::BadNumber { row, field: field.into() })
}

/// Line number of a record, counting the header as line 1.
fn line_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

/// Parses a panel from CSV text.
pub fn load_panel<R: Read>(src: R, layout: Layout) -> Result<PanelMatrix, CsvError> {
    match layout {
        Layout::UnitsAsRows => load_rectangular(src),
        Layout::LongFormat => load_long(src),
    }
}

fn load_rectangular<R: Read>(src: R) -> Result<PanelMatrix, CsvError> {
    let mut rdr = reader(src);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(CsvError::Header("need a unit column and at least one time column".into()));
    }
    let labels: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line_of(&rec, k + 2);
        if rec.len() != header.len() {
            return Err(CsvError::Ragged { row, expected: header.len(), found: rec.len() });
        }
        ids.push(rec[0].to_string());
        for f in rec.iter().skip(1) {
            data.push(parse_cell(f, row)?);
        }
    }
    let values = Matrix::from_vec(ids.len(), labels.len(), data)?;
    Ok(PanelMatrix::new(values, ids, labels)?)
}

fn load_long<R: Read>(src: R) -> Result<PanelMatrix, CsvError> {
    let mut rdr = reader(src);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["unit", "time", "value"] {
        return Err(CsvError::Header(format!("expected `unit,time,value`, found `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut units: Vec<String> = Vec::new();
    let mut times: Vec<String> = Vec::new();
    let mut unit_pos = HashMap::new();
    let mut time_pos = HashMap::new();
    let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line_of(&rec, k + 2);
        if rec.len() != 3 {
            return Err(CsvError::Ragged { row, expected: 3, found: rec.len() });
        }
        let u = *unit_pos.entry(rec[0].to_string()).or_insert_with(|| {
            units.push(rec[0].to_string());
            units.len() - 1
        });
        let t = *time_pos.entry(rec[1].to_string()).or_insert_with(|| {
            times.push(rec[1].to_string());
            times.len() - 1
        });
        let v = parse_cell(&rec[2], row)?;
        if cells.insert((u, t), v).is_some() {
            return Err(CsvError::DuplicateCell { row, unit: rec[0].into(), time: rec[1].into() });
        }
    }
    // Numeric time labels are ordered by value; anything else keeps first-seen order.
    let mut order: Vec<usize> = (0..times.len()).collect();
    let numeric: Option<Vec<f64>> = times.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(v) = numeric {
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    }
    let values = Matrix::from_fn(units.len(), times.len(), |i, j| cells.get(&(i, order[j])).copied().unwrap_or(f64::NAN));
    let labels = order.iter().map(|&j| times[j].clone()).collect();
    Ok(PanelMatrix::new(values, units, labels)?)
}

/// Reads `unit,<name1>,...` covariate rows.
pub fn load_covariates<R: Read>(src: R) -> Result<UnitCovariates, CsvError> {
    let mut rdr = reader(src);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(CsvError::Header("need a unit column and at least one covariate".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line_of(&rec, k + 2);
        if rec.len() != header.len() {
            return Err(CsvError::Ragged { row, expected: header.len(), found: rec.len() });
        }
        ids.push(rec[0].to_string());
        for f in rec.iter().skip(1) {
            let v = parse_cell(f, row)?;
            if v.is_nan() {
                return Err(CsvError::BadNumber { row, field: f.into() });
            }
            data.push(v);
        }
    }
    let z = Matrix::from_vec(ids.len(), names.len(), data)?;
    Ok(UnitCovariates::new(ids, CovariateTable::new(z, names)?)?)
}

pub fn read_panel_file(path: &Path, layout: Layout) -> AppResult<PanelMatrix> {
    let f = std::fs::File::open(path).map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
    load_panel(f, layout).map_err(|e| AppError::validation(format!("{}: {e}", path.display())))
}

pub fn read_covariates_file(path: &Path) -> AppResult<UnitCovariates> {
    let f = std::fs::File::open(path).map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
    load_covariates(f).map_err(|e| AppError::validation(format!("{}: {e}", path.display())))
}

/// Shortest text that parses back to the same `f64`; NaN becomes `NA`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:?}")
    }
}

/// A table written as CSV under a `# ...` provenance line.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write_to<W: Write>(&self, provenance: Option<&str>, out: W) -> std::io::Result<()> {
        let mut out = out;
        if let Some(p) = provenance {
            writeln!(out, "# {p}")?;
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()
    }
}

/// The panel in rectangular layout.
pub fn panel_table(panel: &PanelMatrix) -> Table {
    let mut t = Table::new(std::iter::once("unit".to_string()).chain(panel.time_labels().iter().cloned()));
    for (i, id) in panel.unit_ids().iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(panel.values().row(i).iter().map(|&v| fmt_f64(v)));
        t.push(row);
    }
    t
}

pub fn save_panel<W: Write>(panel: &PanelMatrix, provenance: Option<&str>, out: W) -> std::io::Result<()> {
    panel_table(panel).write_to(provenance, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangular_parse() {
        let p = load_panel("unit,1,2,3\na,1,2,3\nb,4,5,6\n".as_bytes(), Layout::UnitsAsRows).unwrap();
        assert_eq!((p.n_units(), p.n_periods()), (2, 3));
        assert_eq!(p.values().row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn long_pivot() {
        let p = load_panel("unit,time,value\na,1,1.0\na,2,2.0\nb,1,3.0\nb,2,4.0\n".as_bytes(), Layout::LongFormat).unwrap();
        assert_eq!(p.values(), &Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        assert_eq!(p.unit_ids(), &["a", "b"]);
    }

    #[test]
    fn long_sorts_numeric_times() {
        let p = load_panel("unit,time,value\na,10,1\na,9,2\nb,9,3\nb,10,4\n".as_bytes(), Layout::LongFormat).unwrap();
        assert_eq!(p.time_labels(), &["9", "10"]);
        assert_eq!(p.values(), &Matrix::from_rows(&[[2.0, 1.0], [3.0, 4.0]]));
    }

    #[test]
    fn duplicate_cell_reports_row() {
        let e = load_panel("unit,time,value\na,1,1\nb,1,2\na,1,3\nb,2,1\n".as_bytes(), Layout::LongFormat).unwrap_err();
        match e {
            CsvError::DuplicateCell { row, unit, time } => assert_eq!((row, unit.as_str(), time.as_str()), (4, "a", "1")),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        let e = load_panel("unit,1,2\na,1,2\nb,3\n".as_bytes(), Layout::UnitsAsRows).unwrap_err();
        assert!(matches!(e, CsvError::Ragged { row: 3, expected: 3, found: 2 }), "{e}");
    }

    #[test]
    fn missing_sentinels() {
        let p = load_panel("unit,1,2,3\na,1,,NA\nb,4,5,6\n".as_bytes(), Layout::UnitsAsRows).unwrap();
        assert!(p.values()[(0, 1)].is_nan() && p.values()[(0, 2)].is_nan());
        let q = load_panel("unit,time,value\na,1,1\nb,1,2\nb,2,3\n".as_bytes(), Layout::LongFormat).unwrap();
        assert!(q.values()[(0, 1)].is_nan());
    }

    #[test]
    fn save_load_is_bit_exact() {
        let v = Matrix::from_rows(&[[0.1, 1.0 / 3.0, -2.5e-300], [f64::MAX, 7.0, f64::NAN]]);
        let p = PanelMatrix::new(v, vec!["a".into(), "b".into()], vec!["x".into(), "y".into(), "z".into()]).unwrap();
        let mut buf = Vec::new();
        save_panel(&p, Some("config_sha256=00 seed=1"), &mut buf).unwrap();
        let q = load_panel(buf.as_slice(), Layout::UnitsAsRows).unwrap();
        for (a, b) in p.values().as_slice().iter().zip(q.values().as_slice()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
        assert_eq!(q.unit_ids(), p.unit_ids());
    }

    #[test]
    fn covariates_parse() {
        let c = load_covariates("unit,z1,z2\na,1,2\nb,3,4\n".as_bytes()).unwrap();
        assert_eq!(c.unit_ids, vec!["a", "b"]);
        assert!(load_covariates("unit,z1\na,\n".as_bytes()).is_err());
    }
}
