use std::collections::HashMap;

use chrono::{Duration, NaiveDateTime, Timelike};

use super::DataError;

/// Incidents shorter than this many minutes are treated as erroneous reports.
pub const DEFAULT_MIN_DURATION: f64 = 5.0;

/// One reported incident. Optional attributes are `None` when the source
/// cell was empty or unparseable.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidentRecord {
    pub id: String,
    /// Planar easting in meters.
    pub x: f64,
    /// Planar northing in meters.
    pub y: f64,
    pub report_time: NaiveDateTime,
    /// Clearance time in minutes. `NaN` only for records read with
    /// [`super::load_incidents_unlabeled`], whose duration is unknown.
    pub duration_min: f64,
    pub hour_of_day: Option<u32>,
    pub peak_hour: Option<bool>,
    /// Either 1-5 (weekdays, weekend carried by `weekend`) or 1-7.
    pub day_of_week: Option<u32>,
    pub weekend: Option<bool>,
    pub month: Option<u32>,
    pub subtype: Option<String>,
    pub affected_lanes: Option<String>,
    pub direction: Option<String>,
    pub severity: Option<u32>,
    pub incident_source: Option<u32>,
    pub unplanned: Option<bool>,
    pub avg_temperature: Option<f64>,
    pub rainfall: Option<f64>,
    pub public_holiday: Option<bool>,
    pub sector_id: Option<String>,
    pub tz_name: Option<String>,
    pub section_id: Option<String>,
    pub section_speed: Option<f64>,
    pub section_lanes: Option<u32>,
    pub section_capacity: Option<f64>,
    pub section_class: Option<String>,
    pub street_id: Option<String>,
    pub intersection_id: Option<String>,
    pub distance_from_cbd: Option<f64>,
}

impl IncidentRecord {
    /// A record with only the mandatory fields set.
    pub fn new(id: impl Into<String>, x: f64, y: f64, report_time: NaiveDateTime, duration_min: f64) -> Self {
        IncidentRecord {
            id: id.into(),
            x,
            y,
            report_time,
            duration_min,
            hour_of_day: None,
            peak_hour: None,
            day_of_week: None,
            weekend: None,
            month: None,
            subtype: None,
            affected_lanes: None,
            direction: None,
            severity: None,
            incident_source: None,
            unplanned: None,
            avg_temperature: None,
            rainfall: None,
            public_holiday: None,
            sector_id: None,
            tz_name: None,
            section_id: None,
            section_speed: None,
            section_lanes: None,
            section_capacity: None,
            section_class: None,
            street_id: None,
            intersection_id: None,
            distance_from_cbd: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoadSection {
    pub section_id: String,
    pub x: f64,
    pub y: f64,
    pub speed_limit: f64,
    pub lanes: u32,
    pub capacity: f64,
    pub has_detectors: bool,
}

/// Vehicles counted on one section during the 15-minute bin starting at `bin_start`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowObservation {
    pub section_id: String,
    pub bin_start: NaiveDateTime,
    pub flow: f64,
}

/// Start of the 15-minute bin containing `t`.
pub fn bin_start_of(t: NaiveDateTime) -> NaiveDateTime {
    let minute = t.minute() - t.minute() % 15;
    t.with_minute(minute)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("valid bin start")
}

pub(crate) fn is_bin_aligned(t: NaiveDateTime) -> bool {
    t.minute() % 15 == 0 && t.second() == 0 && t.nanosecond() == 0
}

/// Read-only lookup of flow counts keyed by (section, bin start).
#[derive(Clone, Debug, Default)]
pub struct FlowStore {
    flows: HashMap<String, HashMap<NaiveDateTime, f64>>,
    count: usize,
}

impl FlowStore {
    pub fn from_observations(observations: &[FlowObservation]) -> Result<Self, DataError> {
        let mut flows: HashMap<String, HashMap<NaiveDateTime, f64>> = HashMap::new();
        for obs in observations {
            if !is_bin_aligned(obs.bin_start) {
                return Err(DataError::BadValue {
                    row: 0,
                    column: "bin_start".into(),
                    value: obs.bin_start.to_string(),
                });
            }
            let series = flows.entry(obs.section_id.clone()).or_default();
            if series.insert(obs.bin_start, obs.flow).is_some() {
                return Err(DataError::DuplicateFlow {
                    section_id: obs.section_id.clone(),
                    bin_start: obs.bin_start.to_string(),
                });
            }
        }
        Ok(FlowStore {
            flows,
            count: observations.len(),
        })
    }

    pub fn get(&self, section_id: &str, bin_start: NaiveDateTime) -> Option<f64> {
        self.flows.get(section_id)?.get(&bin_start).copied()
    }

    /// Flow in the bin that starts `minutes_before` minutes before `bin_start`.
    pub fn get_before(&self, section_id: &str, bin_start: NaiveDateTime, minutes_before: i64) -> Option<f64> {
        self.get(section_id, bin_start - Duration::minutes(minutes_before))
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Keeps the records whose duration is at least `min_duration` minutes,
/// preserving order. The boundary value itself is kept.
pub fn filter_outliers(records: &[IncidentRecord], min_duration: f64) -> Vec<IncidentRecord> {
    records
        .iter()
        .filter(|r| r.duration_min >= min_duration)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn at(h: u32, m: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2017, 3, 1).unwrap().and_hms_opt(h, m, 0).unwrap()
    }

    fn with_duration(d: f64) -> IncidentRecord {
        IncidentRecord::new("r", 0.0, 0.0, at(8, 0), d)
    }

    #[test]
    fn outlier_boundary_is_kept() {
        let records: Vec<_> = [0.0, 1.0, 5.0, 44.59].iter().map(|&d| with_duration(d)).collect();
        let kept: Vec<f64> = filter_outliers(&records, 5.0).iter().map(|r| r.duration_min).collect();
        assert_eq!(kept, vec![5.0, 44.59]);
    }

    #[test]
    fn zero_threshold_is_identity() {
        let records: Vec<_> = [0.0, 3.0, 70.0].iter().map(|&d| with_duration(d)).collect();
        assert_eq!(filter_outliers(&records, 0.0), records);
    }

    #[test]
    fn bins_floor_to_quarter_hours() {
        assert_eq!(bin_start_of(at(8, 7)), at(8, 0));
        assert_eq!(bin_start_of(at(8, 15)), at(8, 15));
        assert_eq!(bin_start_of(at(23, 59)), at(23, 45));
    }

    #[test]
    fn flow_store_rejects_duplicates_and_misaligned_bins() {
        let obs = FlowObservation { section_id: "s".into(), bin_start: at(8, 0), flow: 1.0 };
        assert!(matches!(
            FlowStore::from_observations(&[obs.clone(), obs.clone()]),
            Err(DataError::DuplicateFlow { .. })
        ));
        let odd = FlowObservation { bin_start: at(8, 7), ..obs };
        assert!(FlowStore::from_observations(&[odd]).is_err());
    }

    proptest! {
        #[test]
        fn filter_length_matches_count(durations in prop::collection::vec(0.0f64..800.0, 0..60), m in 0.0f64..60.0) {
            let records: Vec<_> = durations.iter().map(|&d| with_duration(d)).collect();
            let expected = durations.iter().filter(|&&d| d >= m).count();
            prop_assert_eq!(filter_outliers(&records, m).len(), expected);
        }
    }
}
