//! Seeded generator of incidents, road sections and detector flows whose
//! clearance times follow a known log-linear function plus lognormal noise.
//!
//! Log-duration is the sum of standardized feature effects and a normal
//! noise term. Two effects come from detector flows: `tfr_vicinity` uses the
//! sum of TFR over detector sections within `vicinity_radius` of the
//! incident, and `tfr_hub` uses the TFR of a single hub section near the
//! centre of the plane.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    bin_start_of, write_flows, write_incidents, write_sections, DataError, FlowObservation, FlowStore,
    IncidentRecord, RoadSection,
};
use crate::flow::{flow_cells, flow_triple, FeatureSet, FeatureSetSpec};

pub const EFFECT_NAMES: [&str; 6] = [
    "affected_lanes",
    "hour_of_day",
    "section_speed",
    "distance_from_cbd",
    "tfr_vicinity",
    "tfr_hub",
];

pub const LANE_CATEGORIES: [&str; 4] = ["1 lane", "2 lanes", "3 lanes", "All lanes"];

const SUBTYPES: [&str; 6] = ["Crash", "Breakdown", "Hazard", "Vehicle fire", "Debris", "Animal"];
const DIRECTIONS: [&str; 4] = ["North", "South", "East", "West"];
const SECTORS: [&str; 5] = ["Inner", "North", "South", "East", "West"];
const TZ_NAMES: [&str; 8] = ["Ryde", "Parramatta", "Strathfield", "Ashfield", "Burwood", "Mascot", "Lane Cove", "Botany"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible generator config: {0}")]
    InfeasibleConfig(String),
    #[error("writing dataset: {0}")]
    IoFailure(String),
}

impl From<DataError> for SynthError {
    fn from(e: DataError) -> Self {
        SynthError::IoFailure(e.to_string())
    }
}

impl From<std::io::Error> for SynthError {
    fn from(e: std::io::Error) -> Self {
        SynthError::IoFailure(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_incidents: usize,
    /// Detector-equipped sections.
    pub n_sections: usize,
    /// Sections without detectors.
    pub n_plain_sections: usize,
    pub seed: u64,
    /// Effect size per feature, in standard deviations of log-duration.
    pub effects: BTreeMap<String, f64>,
    pub noise_sigma: f64,
    pub outlier_count: usize,
    pub target_mean: f64,
    pub max_duration: f64,
    pub min_duration: f64,
    pub vicinity_radius: f64,
    /// Side of the square plane, meters.
    pub plane_size: f64,
    /// Incidents are placed at least this far from the plane edge.
    pub margin: f64,
    /// Fraction of flow observations dropped at random.
    pub dropout: f64,
    /// Every flow observation gets the same count, so TFR is 1 everywhere
    /// and the flow effects carry no information.
    pub flat_flows: bool,
    /// Share of optional incident attributes left blank.
    pub missing_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let effects = [
            ("affected_lanes", 0.55),
            ("hour_of_day", 0.35),
            ("section_speed", 0.22),
            ("distance_from_cbd", 0.12),
            ("tfr_vicinity", -0.6),
            ("tfr_hub", -0.75),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        GeneratorConfig {
            n_incidents: 574,
            n_sections: 235,
            n_plain_sections: 25,
            seed: 0,
            effects,
            noise_sigma: 0.35,
            outlier_count: 27,
            target_mean: 44.59,
            max_duration: 719.0,
            min_duration: 5.0,
            vicinity_radius: 500.0,
            plane_size: 4800.0,
            margin: 600.0,
            dropout: 0.02,
            flat_flows: false,
            missing_rate: 0.03,
        }
    }
}

impl GeneratorConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_effect(mut self, name: &str, size: f64) -> Self {
        self.effects.insert(name.to_string(), size);
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InfeasibleConfig(m));
        if self.n_incidents == 0 {
            return bad("n_incidents must be positive".into());
        }
        if self.n_sections == 0 {
            return bad("n_sections must be positive".into());
        }
        if self.outlier_count > self.n_incidents {
            return bad(format!(
                "outlier_count {} exceeds n_incidents {}",
                self.outlier_count, self.n_incidents
            ));
        }
        if let Some(k) = self.effects.keys().find(|k| !EFFECT_NAMES.contains(&k.as_str())) {
            return bad(format!("unknown effect `{k}`"));
        }
        if self.effects.values().any(|v| !v.is_finite()) {
            return bad("effect sizes must be finite".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be a non-negative number".into());
        }
        if !(self.min_duration > 0.0 && self.min_duration < self.target_mean && self.target_mean < self.max_duration) {
            return bad("need 0 < min_duration < target_mean < max_duration".into());
        }
        if !(self.plane_size > 2.0 * self.margin && self.margin >= 0.0) {
            return bad("plane_size must exceed twice the margin".into());
        }
        if !(self.vicinity_radius > 0.0) {
            return bad("vicinity_radius must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.missing_rate) {
            return bad("dropout and missing_rate must lie in [0, 1)".into());
        }
        Ok(())
    }

    fn effect(&self, name: &str) -> f64 {
        self.effects.get(name).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ids: Vec<String>,
    /// Duration without noise, after scaling and clamping.
    pub noiseless: Vec<f64>,
    /// Per effect, each incident's additive term in log-duration.
    pub contributions: BTreeMap<String, Vec<f64>>,
    pub outlier: Vec<bool>,
    /// Effect names by decreasing absolute size; zero effects omitted.
    pub ranking: Vec<String>,
    pub hub_section: String,
    /// Multiplier applied to `exp(log-duration)`.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub incidents: Vec<IncidentRecord>,
    pub sections: Vec<RoadSection>,
    pub flows: Vec<FlowObservation>,
    pub truth: GroundTruth,
}

impl Dataset {
    pub fn flow_store(&self) -> FlowStore {
        FlowStore::from_observations(&self.flows).expect("generated flows are unique and bin aligned")
    }
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        v.iter().map(|x| (x - m) / sd).collect()
    } else {
        vec![0.0; v.len()]
    }
}

fn diurnal(hour: u32) -> f64 {
    let h = hour as f64;
    let bump = |c: f64, w: f64| (-((h - c) / w).powi(2)).exp();
    0.25 + 0.75 * bump(8.0, 2.0) + 0.7 * bump(17.5, 2.5) + 0.35 * bump(13.0, 4.0)
}

fn place_sections(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vec<RoadSection> {
    let total = config.n_sections + config.n_plain_sections;
    let mut detector = vec![true; config.n_sections];
    detector.extend(vec![false; config.n_plain_sections]);
    detector.shuffle(rng);
    let width = (total as f64).log10().floor() as usize + 1;
    // One section per grid cell, at a uniform position inside the cell.
    let side = (total as f64).sqrt().ceil() as usize;
    let cell = config.plane_size / side as f64;
    let mut cells: Vec<usize> = (0..side * side).collect();
    cells.shuffle(rng);
    detector
        .into_iter()
        .zip(cells)
        .enumerate()
        .map(|(i, (has_detectors, c))| {
            let lanes = rng.random_range(1..=4u32);
            let speed_limit = [40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0][rng.random_range(0..8)];
            RoadSection {
                section_id: format!("S{:0width$}", i + 1),
                x: ((c % side) as f64 + rng.random::<f64>()) * cell,
                y: ((c / side) as f64 + rng.random::<f64>()) * cell,
                speed_limit,
                lanes,
                capacity: (lanes as f64 * rng.random_range(1500.0..2100.0)).round(),
                has_detectors,
            }
        })
        .collect()
}

fn section_class(speed: f64) -> &'static str {
    if speed >= 90.0 {
        "motorway"
    } else if speed >= 60.0 {
        "arterial"
    } else {
        "local"
    }
}

/// Draws a dataset. Sections are spread one per cell of a square grid. Single-threaded; identical configs give identical output.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sections = place_sections(config, &mut rng);
    let centre = config.plane_size / 2.0;
    let hub = sections
        .iter()
        .filter(|s| s.has_detectors)
        .min_by(|a, b| {
            let da = (a.x - centre).hypot(a.y - centre);
            let db = (b.x - centre).hypot(b.y - centre);
            da.total_cmp(&db)
        })
        .expect("at least one detector section")
        .clone();

    let start = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let missing = config.missing_rate;
    let mut incidents = Vec::with_capacity(config.n_incidents);
    let mut lane_level = Vec::with_capacity(config.n_incidents);
    for i in 0..config.n_incidents {
        let x = rng.random_range(config.margin..config.plane_size - config.margin);
        let y = rng.random_range(config.margin..config.plane_size - config.margin);
        let minutes = rng.random_range(0..365 * 24 * 60i64);
        let t: NaiveDateTime = start + Duration::minutes(minutes);
        let nearest = sections
            .iter()
            .min_by(|a, b| (a.x - x).hypot(a.y - y).total_cmp(&(b.x - x).hypot(b.y - y)))
            .expect("sections are non-empty");
        let u: f64 = rng.random();
        let lanes = match u {
            u if u < 0.45 => 0,
            u if u < 0.75 => 1,
            u if u < 0.9 => 2,
            _ => 3,
        };
        lane_level.push(lanes as f64);
        let hour = t.hour();
        let dow = t.weekday().number_from_monday();
        let mut r = IncidentRecord::new(format!("INC{:04}", i + 1), x.round(), y.round(), t, f64::NAN);
        r.hour_of_day = Some(hour);
        r.peak_hour = Some(matches!(hour, 7..=9 | 16..=18));
        r.day_of_week = Some(dow);
        r.weekend = Some(dow >= 6);
        r.month = Some(t.month());
        r.subtype = Some(SUBTYPES[rng.random_range(0..SUBTYPES.len())].into());
        r.affected_lanes = Some(LANE_CATEGORIES[lanes].into());
        r.direction = Some(DIRECTIONS[rng.random_range(0..DIRECTIONS.len())].into());
        r.severity = Some(rng.random_range(1..=3));
        r.incident_source = Some(rng.random_range(1..=3));
        r.unplanned = Some(rng.random_bool(0.9));
        r.avg_temperature = Some((rng.random_range(8.0..30.0f64) * 10.0).round() / 10.0);
        r.rainfall = Some(if rng.random_bool(0.7) { 0.0 } else { (rng.random_range(0.0..40.0f64) * 10.0).round() / 10.0 });
        r.public_holiday = Some(rng.random_bool(0.03));
        r.sector_id = Some(SECTORS[rng.random_range(0..SECTORS.len())].into());
        r.tz_name = Some(TZ_NAMES[rng.random_range(0..TZ_NAMES.len())].into());
        r.section_id = Some(nearest.section_id.clone());
        r.section_speed = Some(nearest.speed_limit);
        r.section_lanes = Some(nearest.lanes);
        r.section_capacity = Some(nearest.capacity);
        r.section_class = Some(section_class(nearest.speed_limit).into());
        r.street_id = Some(format!("ST{:03}", rng.random_range(0..80)));
        r.intersection_id = Some(format!("IX{:03}", rng.random_range(0..120)));
        r.distance_from_cbd = Some(((x - centre).hypot(y - centre)).round());
        // Blank a few attributes that carry no planted effect.
        if rng.random_bool(missing) {
            r.avg_temperature = None;
        }
        if rng.random_bool(missing) {
            r.rainfall = None;
        }
        if rng.random_bool(missing) {
            r.subtype = None;
        }
        if rng.random_bool(missing) {
            r.direction = None;
        }
        if rng.random_bool(missing) {
            r.street_id = None;
        }
        incidents.push(r);
    }

    let flows = generate_flows(config, &sections, &incidents, &hub, &mut rng);
    let store = FlowStore::from_observations(&flows).expect("generated flows are unique and bin aligned");

    let vicinity_spec = FeatureSetSpec::new(FeatureSet::Fsd).with_dv(config.vicinity_radius);
    let mut raw: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    raw.insert("affected_lanes", lane_level);
    raw.insert("hour_of_day", incidents.iter().map(|r| (r.report_time.hour() as f64 - 12.0).abs()).collect());
    raw.insert("section_speed", incidents.iter().map(|r| r.section_speed.unwrap_or(0.0)).collect());
    raw.insert("distance_from_cbd", incidents.iter().map(|r| r.distance_from_cbd.unwrap_or(0.0)).collect());
    let vicinity: Vec<Option<f64>> = incidents
        .iter()
        .map(|r| flow_cells(r, &sections, &store, &vicinity_spec).expect("detector sections exist")[2])
        .collect();
    let hub_tfr: Vec<Option<f64>> = incidents.iter().map(|r| flow_triple(&hub, r.report_time, &store).tfr).collect();
    raw.insert("tfr_vicinity", fill_missing(&vicinity));
    raw.insert("tfr_hub", fill_missing(&hub_tfr));

    let n = config.n_incidents;
    let mut contributions = BTreeMap::new();
    let mut linear = vec![0.0; n];
    for name in EFFECT_NAMES {
        let beta = if config.flat_flows && name.starts_with("tfr_") { 0.0 } else { config.effect(name) };
        let c: Vec<f64> = standardize(&raw[name]).into_iter().map(|z| beta * z).collect();
        for (l, v) in linear.iter_mut().zip(&c) {
            *l += v;
        }
        contributions.insert(name.to_string(), c);
    }

    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let noisy: Vec<f64> = linear
        .iter()
        .map(|l| {
            let e = if config.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (l + e).exp()
        })
        .collect();
    let scale = config.target_mean * n as f64 / noisy.iter().sum::<f64>();
    let clamp = |v: f64| (scale * v).clamp(config.min_duration, config.max_duration);
    let noiseless: Vec<f64> = linear.iter().map(|l| clamp(l.exp())).collect();
    let mut durations: Vec<f64> = noisy.iter().map(|&v| clamp(v)).collect();

    let mut outlier = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, config.outlier_count) {
        outlier[i] = true;
        let lo = 0.5f64.min(config.min_duration / 2.0);
        durations[i] = (rng.random_range(lo..config.min_duration - 0.1) * 10.0).round() / 10.0;
    }
    for ((r, d), &o) in incidents.iter_mut().zip(&durations).zip(&outlier) {
        r.duration_min = (d * 100.0).round() / 100.0;
        if !o {
            r.duration_min = r.duration_min.clamp(config.min_duration, config.max_duration);
        }
    }

    let mut ranking: Vec<(String, f64)> = EFFECT_NAMES
        .iter()
        .map(|&k| (k.to_string(), if config.flat_flows && k.starts_with("tfr_") { 0.0 } else { config.effect(k) }))
        .filter(|(_, v)| *v != 0.0)
        .collect();
    ranking.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));

    let truth = GroundTruth {
        ids: incidents.iter().map(|r| r.id.clone()).collect(),
        noiseless,
        contributions,
        outlier,
        ranking: ranking.into_iter().map(|(k, _)| k).collect(),
        hub_section: hub.section_id.clone(),
        scale,
    };
    Ok(Dataset {
        incidents,
        sections,
        flows,
        truth,
    })
}

fn fill_missing(v: &[Option<f64>]) -> Vec<f64> {
    let present: Vec<f64> = v.iter().flatten().copied().collect();
    let fill = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    v.iter().map(|x| x.unwrap_or(fill)).collect()
}

/// Counts for the report bin and the bin an hour earlier, for every
/// detector section and incident. When two incidents share a bin the first
/// draw is kept.
fn generate_flows(
    config: &GeneratorConfig,
    sections: &[RoadSection],
    incidents: &[IncidentRecord],
    hub: &RoadSection,
    rng: &mut ChaCha8Rng,
) -> Vec<FlowObservation> {
    let detectors: Vec<&RoadSection> = sections.iter().filter(|s| s.has_detectors).collect();
    let jitter = Normal::<f64>::new(0.0, 0.12).expect("valid sigma");
    let mut seen: HashMap<(usize, NaiveDateTime), f64> = HashMap::new();
    let mut out = Vec::new();
    for r in incidents {
        let trf_bin = bin_start_of(r.report_time);
        let tfh_bin = trf_bin - Duration::minutes(60);
        let congestion: f64 = rng.random_range(0.1..1.1);
        let hub_ratio: f64 = rng.random_range(0.2..1.2);
        for (j, s) in detectors.iter().enumerate() {
            let d = (s.x - r.x).hypot(s.y - r.y);
            let base = s.capacity / 4.0 * diurnal(tfh_bin.hour());
            let tfh = base * jitter.sample(rng).exp();
            let ratio = if s.section_id == hub.section_id {
                hub_ratio
            } else {
                let w = (-(d / 450.0).powi(2)).exp();
                (1.0 - (1.0 - congestion) * w) * jitter.sample(rng).exp()
            };
            let trf = tfh * ratio;
            let keep_h = !rng.random_bool(config.dropout);
            let keep_r = !rng.random_bool(config.dropout);
            for (bin, value, keep) in [(tfh_bin, tfh, keep_h), (trf_bin, trf, keep_r)] {
                let value = if config.flat_flows { 100.0 } else { value.max(1.0).round() };
                if keep && !seen.contains_key(&(j, bin)) {
                    seen.insert((j, bin), value);
                    out.push(FlowObservation {
                        section_id: s.section_id.clone(),
                        bin_start: bin,
                        flow: value,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| a.section_id.cmp(&b.section_id).then(a.bin_start.cmp(&b.bin_start)));
    out
}

/// Writes incidents.csv, sections.csv, flows.csv and ground_truth.csv into
/// `dir`, creating it if needed.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    write_incidents(dir.join("incidents.csv"), &dataset.incidents)?;
    write_sections(dir.join("sections.csv"), &dataset.sections)?;
    write_flows(dir.join("flows.csv"), &dataset.flows)?;
    let truth = &dataset.truth;
    let mut w = csv::Writer::from_path(dir.join("ground_truth.csv")).map_err(|e| SynthError::IoFailure(e.to_string()))?;
    let mut header = vec!["id".to_string(), "noiseless_duration".into(), "outlier".into()];
    header.extend(truth.contributions.keys().map(|k| format!("contrib_{k}")));
    let io = |e: csv::Error| SynthError::IoFailure(e.to_string());
    w.write_record(&header).map_err(io)?;
    for (i, id) in truth.ids.iter().enumerate() {
        let mut row = vec![id.clone(), truth.noiseless[i].to_string(), u8::from(truth.outlier[i]).to_string()];
        row.extend(truth.contributions.values().map(|c| c[i].to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
