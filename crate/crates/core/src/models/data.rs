use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Whether the first CSV record is a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeaderMode {
    /// Header iff no cell of the first record parses as a number.
    #[default]
    Auto,
    Present,
    Absent,
}

/// `n` observations (rows) of `m` real coordinates, all finite, `n ≥ 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::invalid(format!(
                "data needs at least 2 observations, got {}",
                values.nrows()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::invalid("data has no columns"));
        }
        if let Some(idx) = values.iter().position(|x| !x.is_finite()) {
            // Column-major storage.
            let (row, col) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::Parse {
                row: row + 1,
                column: col + 1,
                message: "non-finite value".into(),
            });
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(crate::linalg::matrix_from_rows(rows, "data")?)
    }

    pub fn from_column(xs: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(xs.len(), 1, xs))
    }

    pub fn from_csv_path(path: impl AsRef<Path>, header: HeaderMode) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file, header)
    }

    /// Parses UTF-8 CSV with decimal-point reals, one observation per row.
    /// Errors carry 1-based row (file record) and column numbers.
    pub fn from_csv_reader<R: Read>(reader: R, header: HeaderMode) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut width = None;
        for (idx, record) in rdr.records().enumerate() {
            let row = idx + 1;
            let record = record.map_err(|e| Error::Parse { row, column: 0, message: e.to_string() })?;
            if record.iter().all(|c| c.is_empty()) {
                continue;
            }
            if idx == 0 {
                let is_header = match header {
                    HeaderMode::Present => true,
                    HeaderMode::Absent => false,
                    HeaderMode::Auto => record.iter().all(|c| c.parse::<f64>().is_err()),
                };
                if is_header {
                    width = Some(record.len());
                    continue;
                }
            }
            let expected = *width.get_or_insert(record.len());
            if record.len() != expected {
                return Err(Error::Parse {
                    row,
                    column: record.len().min(expected) + 1,
                    message: format!("expected {expected} fields, found {}", record.len()),
                });
            }
            let parsed = record
                .iter()
                .enumerate()
                .map(|(j, cell)| {
                    let column = j + 1;
                    let x: f64 = cell.parse().map_err(|_| Error::Parse {
                        row,
                        column,
                        message: format!("not a number: {cell:?}"),
                    })?;
                    if !x.is_finite() {
                        return Err(Error::Parse { row, column, message: format!("non-finite value {cell:?}") });
                    }
                    Ok(x)
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(parsed);
        }
        if rows.is_empty() {
            return Err(Error::invalid("data file contains no observations"));
        }
        Self::from_rows(&rows)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().cloned().collect()
    }

    pub fn column_means(&self) -> DVector<f64> {
        self.values.row_mean().transpose()
    }

    /// Mean-centred covariance with `n − 1` denominator.
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        let mean = self.values.row_mean();
        let mut centered = self.values.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        crate::linalg::symmetrize(&(centered.tr_mul(&centered) / (self.nrows() - 1) as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_and_without_header() {
        let d = DataMatrix::from_csv_reader("a,b\n1,2\n3.5,-4e-1\n".as_bytes(), HeaderMode::Auto).unwrap();
        assert_eq!(d.values(), &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.5, -0.4]));
        let d = DataMatrix::from_csv_reader("1,2\n3,4\n\n".as_bytes(), HeaderMode::Auto).unwrap();
        assert_eq!(d.nrows(), 2);
        assert!(DataMatrix::from_csv_reader("1,2\n3,4\n".as_bytes(), HeaderMode::Present).is_err());
    }

    #[test]
    fn non_numeric_cell_names_location() {
        let err = DataMatrix::from_csv_reader("1,2\n3,x\n5,6\n".as_bytes(), HeaderMode::Auto).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (2, 2)),
            other => panic!("{other:?}"),
        }
        let err = DataMatrix::from_csv_reader("x,b\n1,2\n3,NaN\n".as_bytes(), HeaderMode::Auto).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, column: 2, .. }));
        let err = DataMatrix::from_csv_reader("1,2\n3\n".as_bytes(), HeaderMode::Auto).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }));
        // First row with one bad cell is data, not a header.
        let err = DataMatrix::from_csv_reader("1,oops\n3,4\n".as_bytes(), HeaderMode::Auto).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, column: 2, .. }));
    }

    #[test]
    fn needs_two_rows() {
        assert!(DataMatrix::from_rows(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn covariance_uses_n_minus_one() {
        let d = DataMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap();
        assert_eq!(d.column_means(), DVector::from_vec(vec![2.0, 3.0]));
        assert_eq!(d.sample_covariance(), DMatrix::from_element(2, 2, 4.0));
    }
}
