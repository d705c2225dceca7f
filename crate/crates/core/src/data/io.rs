use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::path::Path;

use chrono::NaiveDateTime;

use super::records::{is_bin_aligned, FlowObservation, IncidentRecord, RoadSection};
use super::DataError;

/// Header of `incidents.csv`, in emitted order.
pub const INCIDENT_COLUMNS: [&str; 29] = [
    "id",
    "x",
    "y",
    "report_time",
    "duration_min",
    "hour_of_day",
    "peak_hour",
    "day_of_week",
    "weekend",
    "month",
    "subtype",
    "affected_lanes",
    "direction",
    "severity",
    "incident_source",
    "unplanned",
    "avg_temperature",
    "rainfall",
    "public_holiday",
    "sector_id",
    "tz_name",
    "section_id",
    "section_speed",
    "section_lanes",
    "section_capacity",
    "section_class",
    "street_id",
    "intersection_id",
    "distance_from_cbd",
];

const SECTION_COLUMNS: [&str; 7] = ["section_id", "x", "y", "speed_limit", "lanes", "capacity", "has_detectors"];
const FLOW_COLUMNS: [&str; 3] = ["section_id", "bin_start", "flow"];
const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// One CSV data row with a column-name lookup.
struct Row<'a> {
    index: usize,
    record: &'a csv::StringRecord,
    columns: &'a HashMap<String, usize>,
}

impl Row<'_> {
    fn raw(&self, column: &str) -> &str {
        self.record.get(self.columns[column]).unwrap_or("").trim()
    }

    fn bad(&self, column: &str) -> DataError {
        DataError::BadValue {
            row: self.index,
            column: column.to_string(),
            value: self.raw(column).to_string(),
        }
    }

    fn required_str(&self, column: &str) -> Result<String, DataError> {
        match self.raw(column) {
            "" => Err(self.bad(column)),
            s => Ok(s.to_string()),
        }
    }

    fn required_f64(&self, column: &str) -> Result<f64, DataError> {
        parse_f64(self.raw(column)).ok_or_else(|| self.bad(column))
    }

    fn required_time(&self, column: &str) -> Result<NaiveDateTime, DataError> {
        parse_time(self.raw(column)).ok_or_else(|| self.bad(column))
    }

    fn opt_str(&self, column: &str) -> Option<String> {
        match self.raw(column) {
            "" => None,
            s => Some(s.to_string()),
        }
    }

    fn opt_f64(&self, column: &str) -> Option<f64> {
        parse_f64(self.raw(column))
    }

    fn opt_u32_in(&self, column: &str, lo: u32, hi: u32) -> Option<u32> {
        let v = self.raw(column);
        let parsed = v.parse::<u32>().ok().or_else(|| {
            // Accept integral floats such as "3.0".
            parse_f64(v).filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as u32)
        })?;
        (lo..=hi).contains(&parsed).then_some(parsed)
    }

    fn opt_bool(&self, column: &str) -> Option<bool> {
        parse_bool(self.raw(column))
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

fn parse_time(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn format_time(t: NaiveDateTime) -> String {
    t.format(TIME_FORMAT).to_string()
}

fn open_table(path: &Path, required: &[&str]) -> Result<(csv::Reader<File>, HashMap<String, usize>), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let columns: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    if let Some(missing) = required.iter().find(|c| !columns.contains_key(**c)) {
        return Err(DataError::MissingColumn(missing.to_string()));
    }
    Ok((reader, columns))
}

/// Reads `incidents.csv`. Empty or unparseable optional cells become `None`;
/// the mandatory fields (id, x, y, report_time, duration_min) must parse.
pub fn load_incidents(path: impl AsRef<Path>) -> Result<Vec<IncidentRecord>, DataError> {
    read_incidents(path.as_ref(), true)
}

/// Like [`load_incidents`] but a blank `duration_min` is accepted and stored
/// as `NaN`. Used when predicting for incidents whose clearance time is not
/// yet known.
pub fn load_incidents_unlabeled(path: impl AsRef<Path>) -> Result<Vec<IncidentRecord>, DataError> {
    read_incidents(path.as_ref(), false)
}

fn read_incidents(path: &Path, require_duration: bool) -> Result<Vec<IncidentRecord>, DataError> {
    let (mut reader, columns) = open_table(path, &INCIDENT_COLUMNS)?;
    let mut records = Vec::new();
    for (i, result) in reader.records().enumerate() {
        let record = result?;
        let row = Row {
            index: i + 1,
            record: &record,
            columns: &columns,
        };
        let duration_min = if !require_duration && row.raw("duration_min").is_empty() {
            f64::NAN
        } else {
            let d = row.required_f64("duration_min")?;
            if d < 0.0 {
                return Err(row.bad("duration_min"));
            }
            d
        };
        records.push(IncidentRecord {
            id: row.required_str("id")?,
            x: row.required_f64("x")?,
            y: row.required_f64("y")?,
            report_time: row.required_time("report_time")?,
            duration_min,
            hour_of_day: row.opt_u32_in("hour_of_day", 0, 23),
            peak_hour: row.opt_bool("peak_hour"),
            day_of_week: row.opt_u32_in("day_of_week", 1, 7),
            weekend: row.opt_bool("weekend"),
            month: row.opt_u32_in("month", 1, 12),
            subtype: row.opt_str("subtype"),
            affected_lanes: row.opt_str("affected_lanes"),
            direction: row.opt_str("direction"),
            severity: row.opt_u32_in("severity", 1, 10),
            incident_source: row.opt_u32_in("incident_source", 1, 3),
            unplanned: row.opt_bool("unplanned"),
            avg_temperature: row.opt_f64("avg_temperature"),
            rainfall: row.opt_f64("rainfall"),
            public_holiday: row.opt_bool("public_holiday"),
            sector_id: row.opt_str("sector_id"),
            tz_name: row.opt_str("tz_name"),
            section_id: row.opt_str("section_id"),
            section_speed: row.opt_f64("section_speed"),
            section_lanes: row.opt_u32_in("section_lanes", 0, 6),
            section_capacity: row.opt_f64("section_capacity"),
            section_class: row.opt_str("section_class"),
            street_id: row.opt_str("street_id"),
            intersection_id: row.opt_str("intersection_id"),
            distance_from_cbd: row.opt_f64("distance_from_cbd"),
        });
    }
    Ok(records)
}

fn cell<V: ToString>(v: &Option<V>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn bool_cell(v: Option<bool>) -> String {
    v.map(|b| if b { "1" } else { "0" }.to_string()).unwrap_or_default()
}

pub fn write_incidents(path: impl AsRef<Path>, records: &[IncidentRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(INCIDENT_COLUMNS)?;
    for r in records {
        let duration = if r.duration_min.is_nan() {
            String::new()
        } else {
            r.duration_min.to_string()
        };
        w.write_record([
            r.id.clone(),
            r.x.to_string(),
            r.y.to_string(),
            format_time(r.report_time),
            duration,
            cell(&r.hour_of_day),
            bool_cell(r.peak_hour),
            cell(&r.day_of_week),
            bool_cell(r.weekend),
            cell(&r.month),
            cell(&r.subtype),
            cell(&r.affected_lanes),
            cell(&r.direction),
            cell(&r.severity),
            cell(&r.incident_source),
            bool_cell(r.unplanned),
            cell(&r.avg_temperature),
            cell(&r.rainfall),
            bool_cell(r.public_holiday),
            cell(&r.sector_id),
            cell(&r.tz_name),
            cell(&r.section_id),
            cell(&r.section_speed),
            cell(&r.section_lanes),
            cell(&r.section_capacity),
            cell(&r.section_class),
            cell(&r.street_id),
            cell(&r.intersection_id),
            cell(&r.distance_from_cbd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `sections.csv`. Every field is mandatory and section ids are unique.
pub fn load_sections(path: impl AsRef<Path>) -> Result<Vec<RoadSection>, DataError> {
    let (mut reader, columns) = open_table(path.as_ref(), &SECTION_COLUMNS)?;
    let mut seen = HashSet::new();
    let mut sections = Vec::new();
    for (i, result) in reader.records().enumerate() {
        let record = result?;
        let row = Row {
            index: i + 1,
            record: &record,
            columns: &columns,
        };
        let section = RoadSection {
            section_id: row.required_str("section_id")?,
            x: row.required_f64("x")?,
            y: row.required_f64("y")?,
            speed_limit: row.required_f64("speed_limit")?,
            lanes: row.raw("lanes").parse().map_err(|_| row.bad("lanes"))?,
            capacity: row.required_f64("capacity")?,
            has_detectors: row.opt_bool("has_detectors").ok_or_else(|| row.bad("has_detectors"))?,
        };
        if !seen.insert(section.section_id.clone()) {
            return Err(DataError::DuplicateSection(section.section_id));
        }
        sections.push(section);
    }
    Ok(sections)
}

pub fn write_sections(path: impl AsRef<Path>, sections: &[RoadSection]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SECTION_COLUMNS)?;
    for s in sections {
        w.write_record([
            s.section_id.clone(),
            s.x.to_string(),
            s.y.to_string(),
            s.speed_limit.to_string(),
            s.lanes.to_string(),
            s.capacity.to_string(),
            bool_cell(Some(s.has_detectors)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `flows.csv`; bin starts must sit on 15-minute boundaries and flows
/// must be nonnegative.
pub fn load_flows(path: impl AsRef<Path>) -> Result<Vec<FlowObservation>, DataError> {
    let (mut reader, columns) = open_table(path.as_ref(), &FLOW_COLUMNS)?;
    let mut flows = Vec::new();
    for (i, result) in reader.records().enumerate() {
        let record = result?;
        let row = Row {
            index: i + 1,
            record: &record,
            columns: &columns,
        };
        let bin_start = row.required_time("bin_start")?;
        if !is_bin_aligned(bin_start) {
            return Err(row.bad("bin_start"));
        }
        let flow = row.required_f64("flow")?;
        if flow < 0.0 {
            return Err(row.bad("flow"));
        }
        flows.push(FlowObservation {
            section_id: row.required_str("section_id")?,
            bin_start,
            flow,
        });
    }
    Ok(flows)
}

pub fn write_flows(path: impl AsRef<Path>, flows: &[FlowObservation]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FLOW_COLUMNS)?;
    for f in flows {
        w.write_record([f.section_id.clone(), format_time(f.bin_start), f.flow.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
