//! Incident, road-section and detector-flow records, their CSV formats, and
//! the encoded [`FeatureMatrix`].

mod encode;
mod io;
mod matrix;
mod records;

pub use encode::{baseline_schema, encode, CategoryDictionary, SchemaPolicy, BASELINE_COLUMNS};
pub use io::{
    load_flows, load_incidents, load_incidents_unlabeled, load_sections, write_flows,
    write_incidents, write_sections, INCIDENT_COLUMNS,
};
pub use matrix::{Cell, Column, ColumnKind, FeatureMatrix};
pub use records::{
    bin_start_of, filter_outliers, FlowObservation, FlowStore, IncidentRecord, RoadSection,
    DEFAULT_MIN_DURATION,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("bad value {value:?} in row {row}, column `{column}`")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("file is empty (no header row)")]
    EmptyFile,
    #[error("no records to encode")]
    EmptyInput,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid cell in column `{column}` row {row}: {reason}")]
    InvalidCell {
        row: usize,
        column: String,
        reason: &'static str,
    },
    #[error("duplicate flow observation for section {section_id} at {bin_start}")]
    DuplicateFlow {
        section_id: String,
        bin_start: String,
    },
    #[error("duplicate section id {0}")]
    DuplicateSection(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
