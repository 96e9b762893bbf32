//! Delimited-text ingestion for covariates and outcomes.

use std::path::Path;

use rerand_core::CovariateMatrix;

use crate::error::CliError;

/// A header row and numeric columns; every cell must parse as a finite
/// number with `.` as decimal separator.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path, delimiter: char) -> Result<Self, CliError> {
        let file = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(file, delimiter).map_err(|e| match e {
            CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_reader<R: std::io::Read>(r: R, delimiter: char) -> Result<Self, CliError> {
        if !delimiter.is_ascii() {
            return Err(CliError::Usage(format!("delimiter {delimiter:?} is not a single-byte character")));
        }
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter as u8)
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(r);
        let names: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        if names.is_empty() || names.iter().all(|n| n.is_empty()) {
            return Err(CliError::Parse("missing header row".into()));
        }
        let mut columns = vec![Vec::new(); names.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (col, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    CliError::Parse(format!("row {}, column `{}`: `{cell}` is not a number", row + 1, names[col]))
                })?;
                if !v.is_finite() {
                    return Err(CliError::Parse(format!("row {}, column `{}`: non-finite value", row + 1, names[col])));
                }
                columns[col].push(v);
            }
        }
        Ok(Self { names, columns })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64], CliError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.columns[k].as_slice())
            .ok_or_else(|| CliError::Usage(format!("no column named `{name}`")))
    }

    pub fn select(&self, names: &[String]) -> Result<CovariateMatrix, CliError> {
        let columns = names.iter().map(|n| self.column(n).map(<[f64]>::to_vec)).collect::<Result<Vec<_>, _>>()?;
        Ok(CovariateMatrix::from_columns(names.to_vec(), &columns)?)
    }

    pub fn all(&self) -> Result<CovariateMatrix, CliError> {
        self.select(&self.names)
    }
}

/// A single outcome column: `column` by name, or the only column present.
pub fn read_outcomes(path: &Path, column: Option<&str>, delimiter: char) -> Result<Vec<f64>, CliError> {
    let table = Table::read(path, delimiter)?;
    match column {
        Some(c) => Ok(table.column(c)?.to_vec()),
        None if table.names.len() == 1 => Ok(table.columns[0].clone()),
        None => Err(CliError::Usage(format!(
            "{} has {} columns; choose one with --outcome-column",
            path.display(),
            table.names.len()
        ))),
    }
}
