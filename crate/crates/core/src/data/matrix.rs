use std::io::Write;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::scalar::Scalar;

/// One matrix cell; `None` is the MISSING state.
pub type Cell<T> = Option<T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Boolean,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Column { name: name.into(), kind }
    }

    pub fn numeric(name: impl Into<String>) -> Self {
        Self::new(name, ColumnKind::Numeric)
    }
}

/// Row-major feature grid with explicit missing cells, a column schema and
/// one target value per row. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<T> {
    n_rows: usize,
    n_cols: usize,
    cells: Vec<Cell<T>>,
    schema: Vec<Column>,
    target: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Builds a matrix from row-major cells, validating the schema invariants:
    /// boolean columns hold only 0/1, categorical columns only nonnegative
    /// integers, and every present value is finite.
    pub fn new(schema: Vec<Column>, cells: Vec<Cell<T>>, target: Vec<T>) -> Result<Self, DataError> {
        let n_cols = schema.len();
        let n_rows = target.len();
        if cells.len() != n_rows * n_cols {
            return Err(DataError::DimensionMismatch(format!(
                "{} cells for {n_rows} rows x {n_cols} columns",
                cells.len()
            )));
        }
        for (i, cell) in cells.iter().enumerate() {
            let Some(v) = *cell else { continue };
            let col = &schema[i % n_cols];
            let reason = if !v.is_finite() {
                Some("value is not finite")
            } else {
                match col.kind {
                    ColumnKind::Numeric => None,
                    ColumnKind::Boolean => (v != T::zero() && v != T::one()).then_some("boolean column holds a value other than 0/1"),
                    ColumnKind::Categorical => {
                        (v < T::zero() || v.fract() != T::zero()).then_some("categorical code is not a nonnegative integer")
                    }
                }
            };
            if let Some(reason) = reason {
                return Err(DataError::InvalidCell {
                    row: i / n_cols,
                    column: col.name.clone(),
                    reason,
                });
            }
        }
        Ok(FeatureMatrix {
            n_rows,
            n_cols,
            cells,
            schema,
            target,
        })
    }

    /// Numeric matrix from dense rows with a zero target (test and example helper).
    pub fn from_rows(names: &[&str], rows: &[Vec<Cell<T>>]) -> Result<Self, DataError> {
        let schema = names.iter().map(|n| Column::numeric(*n)).collect::<Vec<_>>();
        if let Some(bad) = rows.iter().find(|r| r.len() != schema.len()) {
            return Err(DataError::DimensionMismatch(format!(
                "row of length {} for {} columns",
                bad.len(),
                schema.len()
            )));
        }
        let cells = rows.iter().flatten().copied().collect();
        Self::new(schema, cells, vec![T::zero(); rows.len()])
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn schema(&self) -> &[Column] {
        &self.schema
    }

    pub fn target(&self) -> &[T] {
        &self.target
    }

    pub fn column_names(&self) -> Vec<String> {
        self.schema.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Cell<T> {
        self.cells[row * self.n_cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[Cell<T>] {
        &self.cells[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Cell<T>]> {
        (0..self.n_rows).map(move |r| self.row(r))
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = Cell<T>> + '_ {
        (0..self.n_rows).map(move |r| self.get(r, col))
    }

    pub fn has_missing(&self) -> bool {
        self.cells.iter().any(Option::is_none)
    }

    /// Same cells and schema with a replaced target vector.
    pub fn with_target(&self, target: Vec<T>) -> Result<Self, DataError> {
        if target.len() != self.n_rows {
            return Err(DataError::DimensionMismatch(format!(
                "target of length {} for {} rows",
                target.len(),
                self.n_rows
            )));
        }
        Ok(FeatureMatrix {
            target,
            ..self.clone()
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut cells = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            cells.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            cells,
            schema: self.schema.clone(),
            target: rows.iter().map(|&r| self.target[r]).collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut cells = Vec::with_capacity(self.n_rows * cols.len());
        for r in 0..self.n_rows {
            let row = self.row(r);
            cells.extend(cols.iter().map(|&c| row[c]));
        }
        FeatureMatrix {
            n_rows: self.n_rows,
            n_cols: cols.len(),
            cells,
            schema: cols.iter().map(|&c| self.schema[c].clone()).collect(),
            target: self.target.clone(),
        }
    }

    /// Appends the columns of `other` (same row count); the target of `self` is kept.
    pub fn hstack(&self, other: &Self) -> Result<Self, DataError> {
        if other.n_rows != self.n_rows {
            return Err(DataError::DimensionMismatch(format!(
                "cannot join {} rows with {} rows",
                self.n_rows, other.n_rows
            )));
        }
        let n_cols = self.n_cols + other.n_cols;
        let mut cells = Vec::with_capacity(self.n_rows * n_cols);
        for r in 0..self.n_rows {
            cells.extend_from_slice(self.row(r));
            cells.extend_from_slice(other.row(r));
        }
        let mut schema = self.schema.clone();
        schema.extend(other.schema.iter().cloned());
        Ok(FeatureMatrix {
            n_rows: self.n_rows,
            n_cols,
            cells,
            schema,
            target: self.target.clone(),
        })
    }

    /// Converts every cell and target to another scalar type.
    pub fn cast<U: Scalar>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            cells: self.cells.iter().map(|c| c.map(|v| U::of(v.as_f64()))).collect(),
            schema: self.schema.clone(),
            target: self.target.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Writes the matrix as CSV: a header of column names followed by
    /// `target`, one line per row, missing cells left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.column_names();
        header.push("target".into());
        w.write_record(&header)?;
        for r in 0..self.n_rows {
            let mut fields: Vec<String> = self
                .row(r)
                .iter()
                .map(|c| c.map(|v| v.to_string()).unwrap_or_default())
                .collect();
            fields.push(self.target[r].to_string());
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_boolean_and_categorical_cells() {
        let schema = vec![Column::new("b", ColumnKind::Boolean), Column::new("c", ColumnKind::Categorical)];
        assert!(FeatureMatrix::<f64>::new(schema.clone(), vec![Some(1.0), Some(3.0)], vec![0.0]).is_ok());
        assert!(FeatureMatrix::<f64>::new(schema.clone(), vec![None, None], vec![0.0]).is_ok());
        assert!(FeatureMatrix::<f64>::new(schema.clone(), vec![Some(2.0), Some(3.0)], vec![0.0]).is_err());
        assert!(FeatureMatrix::<f64>::new(schema.clone(), vec![Some(0.0), Some(1.5)], vec![0.0]).is_err());
        assert!(FeatureMatrix::<f64>::new(schema, vec![Some(0.0)], vec![0.0]).is_err());
    }

    #[test]
    fn selection_and_stacking() {
        let m = FeatureMatrix::<f64>::from_rows(
            &["a", "b"],
            &[vec![Some(1.0), Some(2.0)], vec![Some(3.0), None], vec![Some(5.0), Some(6.0)]],
        )
        .unwrap()
        .with_target(vec![10.0, 20.0, 30.0])
        .unwrap();
        let r = m.select_rows(&[2, 0]);
        assert_eq!(r.row(0), &[Some(5.0), Some(6.0)]);
        assert_eq!(r.target(), &[30.0, 10.0]);
        let c = m.select_columns(&[1]);
        assert_eq!(c.column(0).collect::<Vec<_>>(), vec![Some(2.0), None, Some(6.0)]);
        let s = m.hstack(&c).unwrap();
        assert_eq!(s.n_cols(), 3);
        assert_eq!(s.row(1), &[Some(3.0), None, None]);
        assert!(m.has_missing());
        let m32: FeatureMatrix<f32> = m.cast();
        assert_eq!(m32.get(2, 1), Some(6.0f32));
    }

    #[test]
    fn csv_has_schema_header() {
        let m = FeatureMatrix::<f64>::from_rows(&["a", "b"], &[vec![Some(1.5), None]]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b,target\n1.5,,0\n");
    }
}
