//! Traffic-flow features (TRF, TFH, TFR) and the feature-set variants built
//! from them.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    bin_start_of, encode, CategoryDictionary, Cell, Column, DataError, FeatureMatrix, FlowStore, IncidentRecord,
    RoadSection, SchemaPolicy,
};
use crate::learner::LearnerSpec;
use crate::metrics::Metric;
use crate::scalar::Scalar;
use crate::tuning::{nested_evaluate, NestedConfig, TuningError};

/// Radii of the vicinity sensitivity sweep, in meters.
pub const DV_SENSITIVITY: [f64; 5] = [100.0, 200.0, 300.0, 500.0, 600.0];
pub const DEFAULT_K_NEAREST: usize = 5;
pub const DEFAULT_DV: f64 = 500.0;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("no road section has detectors")]
    NoDetectorSections,
    #[error("invalid feature-set spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
}

/// Flow at the report bin, flow one hour earlier, and their ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowTriple {
    pub trf: Option<f64>,
    pub tfh: Option<f64>,
    pub tfr: Option<f64>,
}

impl FlowTriple {
    /// The ratio is present only when both flows are and TFH > 0.
    pub fn new(trf: Option<f64>, tfh: Option<f64>) -> Self {
        let tfr = match (trf, tfh) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        FlowTriple { trf, tfh, tfr }
    }

    fn cells(&self) -> [Option<f64>; 3] {
        [self.trf, self.tfh, self.tfr]
    }
}

/// TRF is the bin containing `report_time`; TFH the bin starting 60 minutes
/// before it. Absent observations are MISSING.
pub fn flow_triple(section: &RoadSection, report_time: NaiveDateTime, flows: &FlowStore) -> FlowTriple {
    let bin = bin_start_of(report_time);
    FlowTriple::new(flows.get(&section.section_id, bin), flows.get_before(&section.section_id, bin, 60))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    /// Baseline columns only.
    #[serde(rename = "BFS")]
    Bfs,
    /// Baseline plus a triple for every detector section.
    #[serde(rename = "FSA")]
    Fsa,
    /// Baseline plus the triples of the k nearest detector sections.
    #[serde(rename = "FSB")]
    Fsb,
    /// Baseline plus the summed triples of the k nearest detector sections.
    #[serde(rename = "FSC")]
    Fsc,
    /// Baseline plus the summed triples of detector sections within dv.
    #[serde(rename = "FSD")]
    Fsd,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 5] = [FeatureSet::Bfs, FeatureSet::Fsa, FeatureSet::Fsb, FeatureSet::Fsc, FeatureSet::Fsd];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Bfs => "BFS",
            FeatureSet::Fsa => "FSA",
            FeatureSet::Fsb => "FSB",
            FeatureSet::Fsc => "FSC",
            FeatureSet::Fsd => "FSD",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureSet::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown feature set `{s}` (expected BFS, FSA, FSB, FSC or FSD)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetSpec {
    pub variant: FeatureSet,
    pub k_nearest: usize,
    /// Vicinity radius in meters (FSD only).
    pub dv: f64,
}

impl FeatureSetSpec {
    pub fn new(variant: FeatureSet) -> Self {
        FeatureSetSpec {
            variant,
            k_nearest: DEFAULT_K_NEAREST,
            dv: DEFAULT_DV,
        }
    }

    pub fn with_dv(mut self, dv: f64) -> Self {
        self.dv = dv;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k_nearest = k;
        self
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.k_nearest == 0 {
            return Err(FlowError::InvalidSpec("k_nearest must be at least 1".into()));
        }
        if !(self.dv > 0.0 && self.dv.is_finite()) {
            return Err(FlowError::InvalidSpec(format!("dv must be a positive distance, got {}", self.dv)));
        }
        Ok(())
    }
}

fn distance(incident: &IncidentRecord, section: &RoadSection) -> f64 {
    (incident.x - section.x).hypot(incident.y - section.y)
}

fn detector_sections(sections: &[RoadSection]) -> Vec<&RoadSection> {
    let mut d: Vec<&RoadSection> = sections.iter().filter(|s| s.has_detectors).collect();
    d.sort_by(|a, b| a.section_id.cmp(&b.section_id));
    d
}

/// The `k` detector sections closest to the incident (fewer if fewer exist),
/// nearest first, equal distances ordered by section id.
pub fn nearest_sections<'a>(
    incident: &IncidentRecord,
    sections: &'a [RoadSection],
    k: usize,
) -> Result<Vec<(&'a RoadSection, f64)>, FlowError> {
    let mut d: Vec<(&RoadSection, f64)> = sections
        .iter()
        .filter(|s| s.has_detectors)
        .map(|s| (s, distance(incident, s)))
        .collect();
    if d.is_empty() {
        return Err(FlowError::NoDetectorSections);
    }
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.section_id.cmp(&b.0.section_id)));
    d.truncate(k);
    Ok(d)
}

/// Column-wise sums that skip MISSING; a column with nothing present stays
/// MISSING.
fn sum_triples<'a>(triples: impl Iterator<Item = &'a FlowTriple>) -> [Option<f64>; 3] {
    let mut out = [None; 3];
    for t in triples {
        for (acc, v) in out.iter_mut().zip(t.cells()) {
            if let Some(v) = v {
                *acc = Some(acc.unwrap_or(0.0) + v);
            }
        }
    }
    out
}

/// Names of the flow columns appended for `spec`.
pub fn flow_column_names(spec: &FeatureSetSpec, sections: &[RoadSection]) -> Vec<String> {
    let triple = |suffix: &str| ["trf", "tfh", "tfr"].map(|p| format!("{p}_{suffix}"));
    match spec.variant {
        FeatureSet::Bfs => Vec::new(),
        FeatureSet::Fsa => detector_sections(sections)
            .iter()
            .flat_map(|s| triple(&format!("section_{}", s.section_id)))
            .collect(),
        FeatureSet::Fsb => (1..=spec.k_nearest).flat_map(|i| triple(&format!("near{i}"))).collect(),
        FeatureSet::Fsc => triple(&format!("top{}_sum", spec.k_nearest)).to_vec(),
        FeatureSet::Fsd => triple(&format!("within_{}m_sum", spec.dv)).to_vec(),
    }
}

/// Flow cells of one incident for `spec`.
pub fn flow_cells(
    incident: &IncidentRecord,
    sections: &[RoadSection],
    flows: &FlowStore,
    spec: &FeatureSetSpec,
) -> Result<Vec<Option<f64>>, FlowError> {
    let t = incident.report_time;
    Ok(match spec.variant {
        FeatureSet::Bfs => Vec::new(),
        FeatureSet::Fsa => detector_sections(sections)
            .iter()
            .flat_map(|s| flow_triple(s, t, flows).cells())
            .collect(),
        FeatureSet::Fsb => {
            let near = nearest_sections(incident, sections, spec.k_nearest)?;
            let mut cells: Vec<Option<f64>> = near.iter().flat_map(|(s, _)| flow_triple(s, t, flows).cells()).collect();
            cells.resize(3 * spec.k_nearest, None);
            cells
        }
        FeatureSet::Fsc => {
            let near = nearest_sections(incident, sections, spec.k_nearest)?;
            let triples: Vec<FlowTriple> = near.iter().map(|(s, _)| flow_triple(s, t, flows)).collect();
            sum_triples(triples.iter()).to_vec()
        }
        FeatureSet::Fsd => {
            let triples: Vec<FlowTriple> = detector_sections(sections)
                .into_iter()
                .filter(|s| distance(incident, s) <= spec.dv)
                .map(|s| flow_triple(s, t, flows))
                .collect();
            sum_triples(triples.iter()).to_vec()
        }
    })
}

/// Baseline encoding followed by the flow columns of `spec`.
pub fn build_features<T: Scalar>(
    incidents: &[IncidentRecord],
    sections: &[RoadSection],
    flows: &FlowStore,
    spec: &FeatureSetSpec,
    policy: SchemaPolicy<'_>,
) -> Result<(FeatureMatrix<T>, CategoryDictionary), FlowError> {
    spec.validate()?;
    let (base, dict) = encode::<T>(incidents, policy)?;
    if spec.variant == FeatureSet::Bfs {
        return Ok((base, dict));
    }
    let names = flow_column_names(spec, sections);
    let rows: Vec<Vec<Option<f64>>> = incidents
        .par_iter()
        .map(|inc| flow_cells(inc, sections, flows, spec))
        .collect::<Result<_, _>>()?;
    let schema: Vec<Column> = names.iter().map(|n| Column::numeric(n.as_str())).collect();
    let cells: Vec<Cell<T>> = rows.into_iter().flatten().map(|v| v.map(T::of)).collect();
    let extra = FeatureMatrix::new(schema, cells, base.target().to_vec())?;
    Ok((base.hstack(&extra)?, dict))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DvRow {
    pub dv: f64,
    pub mape_mean: f64,
    pub mape_std: f64,
}

/// Nested-evaluation test MAPE of FSD features for each radius.
pub fn dv_sensitivity(
    incidents: &[IncidentRecord],
    sections: &[RoadSection],
    flows: &FlowStore,
    dv_set: &[f64],
    spec: &LearnerSpec,
    nested: &NestedConfig,
) -> Result<Vec<DvRow>, FlowError> {
    if dv_set.is_empty() {
        return Err(FlowError::InvalidSpec("dv set is empty".into()));
    }
    let mut config = nested.clone();
    if !config.metrics.contains(&Metric::Mape) {
        config.metrics.push(Metric::Mape);
    }
    dv_set
        .iter()
        .map(|&dv| {
            let fs = FeatureSetSpec::new(FeatureSet::Fsd).with_dv(dv);
            let (m, _) = build_features::<f64>(incidents, sections, flows, &fs, SchemaPolicy::Learn)?;
            let y = m.target().to_vec();
            let report = nested_evaluate(spec, &m, &y, &config, None)?;
            let s = report.test_summary(Metric::Mape).expect("mape requested");
            Ok(DvRow {
                dv,
                mape_mean: s.mean.unwrap_or(f64::NAN),
                mape_std: s.std.unwrap_or(f64::NAN),
            })
        })
        .collect()
}

pub fn write_dv_csv<W: Write>(rows: &[DvRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dv", "mape_mean", "mape_std"])?;
    for r in rows {
        w.write_record([r.dv.to_string(), r.mape_mean.to_string(), r.mape_std.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
