use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matrix::{Cell, Column, ColumnKind, FeatureMatrix};
use super::records::IncidentRecord;
use super::DataError;
use crate::scalar::Scalar;

/// The baseline feature columns, in Table-1 order.
pub const BASELINE_COLUMNS: [(&str, ColumnKind); 26] = [
    ("x", ColumnKind::Numeric),
    ("y", ColumnKind::Numeric),
    ("hour_of_day", ColumnKind::Numeric),
    ("peak_hour", ColumnKind::Boolean),
    ("day_of_week", ColumnKind::Numeric),
    ("weekend", ColumnKind::Boolean),
    ("month", ColumnKind::Numeric),
    ("subtype", ColumnKind::Categorical),
    ("affected_lanes", ColumnKind::Categorical),
    ("direction", ColumnKind::Categorical),
    ("severity", ColumnKind::Numeric),
    ("incident_source", ColumnKind::Numeric),
    ("unplanned", ColumnKind::Boolean),
    ("avg_temperature", ColumnKind::Numeric),
    ("rainfall", ColumnKind::Numeric),
    ("public_holiday", ColumnKind::Boolean),
    ("sector_id", ColumnKind::Categorical),
    ("tz_name", ColumnKind::Categorical),
    ("section_id", ColumnKind::Categorical),
    ("section_speed", ColumnKind::Numeric),
    ("section_lanes", ColumnKind::Numeric),
    ("section_capacity", ColumnKind::Numeric),
    ("section_class", ColumnKind::Categorical),
    ("street_id", ColumnKind::Categorical),
    ("intersection_id", ColumnKind::Categorical),
    ("distance_from_cbd", ColumnKind::Numeric),
];

pub fn baseline_schema() -> Vec<Column> {
    BASELINE_COLUMNS.iter().map(|(n, k)| Column::new(*n, *k)).collect()
}

/// Per-column category lists; a category's code is its position in the list
/// (first-seen order while learning).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDictionary {
    columns: BTreeMap<String, Vec<String>>,
}

impl CategoryDictionary {
    pub fn code(&self, column: &str, value: &str) -> Option<u32> {
        self.columns
            .get(column)?
            .iter()
            .position(|v| v == value)
            .map(|p| p as u32)
    }

    pub fn decode(&self, column: &str, code: u32) -> Option<&str> {
        self.columns.get(column)?.get(code as usize).map(String::as_str)
    }

    pub fn categories(&self, column: &str) -> &[String] {
        self.columns.get(column).map(Vec::as_slice).unwrap_or(&[])
    }

    fn learn(&mut self, column: &str, value: &str) -> u32 {
        let values = self.columns.entry(column.to_string()).or_default();
        match values.iter().position(|v| v == value) {
            Some(p) => p as u32,
            None => {
                values.push(value.to_string());
                (values.len() - 1) as u32
            }
        }
    }
}

/// How categorical values are coded.
#[derive(Clone, Copy, Debug)]
pub enum SchemaPolicy<'a> {
    /// Build a fresh dictionary from the records.
    Learn,
    /// Apply an existing dictionary; unknown categories become MISSING.
    Frozen(&'a CategoryDictionary),
}

/// Encodes records into the 26-column baseline matrix with `duration_min`
/// as target. Returns the dictionary that was learned or applied.
pub fn encode<T: Scalar>(
    records: &[IncidentRecord],
    policy: SchemaPolicy<'_>,
) -> Result<(FeatureMatrix<T>, CategoryDictionary), DataError> {
    if records.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let (mut dict, learn) = match policy {
        SchemaPolicy::Learn => (CategoryDictionary::default(), true),
        SchemaPolicy::Frozen(d) => (d.clone(), false),
    };
    let mut cells: Vec<Cell<T>> = Vec::with_capacity(records.len() * BASELINE_COLUMNS.len());
    for r in records {
        let mut cat = |column: &str, value: &Option<String>| -> Cell<T> {
            let value = value.as_deref()?;
            let code = if learn {
                Some(dict.learn(column, value))
            } else {
                dict.code(column, value)
            };
            code.map(|c| T::of(c as f64))
        };
        let num = |v: Option<f64>| v.map(T::of);
        let int = |v: Option<u32>| v.map(|v| T::of(v as f64));
        let flag = |v: Option<bool>| v.map(|b| if b { T::one() } else { T::zero() });
        let row: [Cell<T>; 26] = [
            Some(T::of(r.x)),
            Some(T::of(r.y)),
            int(r.hour_of_day),
            flag(r.peak_hour),
            int(r.day_of_week),
            flag(r.weekend),
            int(r.month),
            cat("subtype", &r.subtype),
            cat("affected_lanes", &r.affected_lanes),
            cat("direction", &r.direction),
            int(r.severity),
            int(r.incident_source),
            flag(r.unplanned),
            num(r.avg_temperature),
            num(r.rainfall),
            flag(r.public_holiday),
            cat("sector_id", &r.sector_id),
            cat("tz_name", &r.tz_name),
            cat("section_id", &r.section_id),
            num(r.section_speed),
            int(r.section_lanes),
            num(r.section_capacity),
            cat("section_class", &r.section_class),
            cat("street_id", &r.street_id),
            cat("intersection_id", &r.intersection_id),
            num(r.distance_from_cbd),
        ];
        cells.extend_from_slice(&row);
    }
    let target = records.iter().map(|r| T::of(r.duration_min)).collect();
    let matrix = FeatureMatrix::new(baseline_schema(), cells, target)?;
    Ok((matrix, dict))
}
