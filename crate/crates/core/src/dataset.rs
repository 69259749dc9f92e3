//! Samples, process conditions, zero-shot splits and the on-disk dataset
//! layout.
//!
//! Splits are always made over *conditions*: every sample recorded under a
//! condition lands on the same side of the split.
//!
//! On disk a dataset is a directory holding `manifest.json` plus one CSV per
//! trajectory (header `time_normalized,delta_e`) and optional PPM initial
//! images. Paths in the manifest are relative to the manifest's directory.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use image::ImageFormat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::basis::{BasisError, Trajectory};
use crate::signal::{smooth_lowpass, SignalError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORY_HEADER: &str = "time_normalized,delta_e";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid evaluation selection: {0}")]
    InvalidSelection(String),
    #[error("no training condition shares a temperature or air velocity with the evaluation set")]
    EmptySimilarSet,
    #[error("train and evaluation conditions overlap: {0}")]
    Overlap(String),
    #[error("{file}:{line}: {message}")]
    ParseError {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("schema mismatch in {file}: {message}")]
    SchemaMismatch { file: PathBuf, message: String },
    #[error("invalid record {id}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Trajectory(#[from] BasisError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemperatureUnit {
    #[serde(rename = "F")]
    Fahrenheit,
    #[serde(rename = "C")]
    Celsius,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VelocityUnit {
    #[serde(rename = "RPM")]
    Rpm,
    #[serde(rename = "m/s")]
    MetersPerSecond,
}

/// One point of the controllable process space.
///
/// Equality is exact on the set-point values: conditions come from a grid,
/// and no tolerance is applied.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessCondition {
    pub temperature: f64,
    pub temperature_unit: TemperatureUnit,
    pub air_velocity: f64,
    pub velocity_unit: VelocityUnit,
}

impl ProcessCondition {
    pub fn new(
        temperature: f64,
        temperature_unit: TemperatureUnit,
        air_velocity: f64,
        velocity_unit: VelocityUnit,
    ) -> Self {
        Self {
            temperature,
            temperature_unit,
            air_velocity,
            velocity_unit,
        }
    }

    pub fn fahrenheit_rpm(temperature: f64, rpm: f64) -> Self {
        Self::new(temperature, TemperatureUnit::Fahrenheit, rpm, VelocityUnit::Rpm)
    }

    pub fn celsius_mps(temperature: f64, mps: f64) -> Self {
        Self::new(
            temperature,
            TemperatureUnit::Celsius,
            mps,
            VelocityUnit::MetersPerSecond,
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.air_velocity.is_finite() && self.air_velocity > 0.0) {
            return Err(format!("air velocity must be positive, got {}", self.air_velocity));
        }
        Ok(())
    }

    fn same_temperature(&self, other: &Self) -> bool {
        self.temperature_unit == other.temperature_unit && self.temperature == other.temperature
    }

    fn same_velocity(&self, other: &Self) -> bool {
        self.velocity_unit == other.velocity_unit && self.air_velocity == other.air_velocity
    }

    /// Stable short label, e.g. `400F_1000RPM`.
    pub fn label(&self) -> String {
        let tu = match self.temperature_unit {
            TemperatureUnit::Fahrenheit => "F",
            TemperatureUnit::Celsius => "C",
        };
        let vu = match self.velocity_unit {
            VelocityUnit::Rpm => "RPM",
            VelocityUnit::MetersPerSecond => "mps",
        };
        format!("{}{tu}_{}{vu}", self.temperature, self.air_velocity)
    }
}

impl PartialEq for ProcessCondition {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ProcessCondition {}

impl Ord for ProcessCondition {
    fn cmp(&self, other: &Self) -> Ordering {
        self.temperature_unit
            .cmp(&other.temperature_unit)
            .then(self.temperature.total_cmp(&other.temperature))
            .then(self.velocity_unit.cmp(&other.velocity_unit))
            .then(self.air_velocity.total_cmp(&other.air_velocity))
    }
}

impl PartialOrd for ProcessCondition {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Hash for ProcessCondition {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.temperature_unit.hash(state);
        self.temperature.to_bits().hash(state);
        self.velocity_unit.hash(state);
        self.air_velocity.to_bits().hash(state);
    }
}

impl fmt::Display for ProcessCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tu = match self.temperature_unit {
            TemperatureUnit::Fahrenheit => "°F",
            TemperatureUnit::Celsius => "°C",
        };
        let vu = match self.velocity_unit {
            VelocityUnit::Rpm => "RPM",
            VelocityUnit::MetersPerSecond => "m/s",
        };
        write!(f, "({}{tu}, {} {vu})", self.temperature, self.air_velocity)
    }
}

/// The cookie grid: {350, 375, 385, 400} °F x {1000, 3000} RPM.
pub fn cookie_grid() -> Vec<ProcessCondition> {
    let mut out = Vec::new();
    for t in [350.0, 375.0, 385.0, 400.0] {
        for v in [1000.0, 3000.0] {
            out.push(ProcessCondition::fahrenheit_rpm(t, v));
        }
    }
    out
}

/// The apple grid: {60, 70, 80} °C x {1.5, 2.5} m/s.
pub fn apple_grid() -> Vec<ProcessCondition> {
    let mut out = Vec::new();
    for t in [60.0, 70.0, 80.0] {
        for v in [1.5, 2.5] {
            out.push(ProcessCondition::celsius_mps(t, v));
        }
    }
    out
}

/// 8-bit grayscale raster of a sample before drying.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height, "raster size mismatch");
        Self { width, height, pixels }
    }

    /// Pixel values scaled to `[0, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    /// Written as binary PPM with equal channels.
    pub fn save_ppm(&self, path: &Path) -> Result<(), DatasetError> {
        let img = image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.pixels[y as usize * self.width + x as usize];
            image::Rgb([v, v, v])
        });
        img.save_with_format(path, ImageFormat::Pnm)
            .map_err(|e| DatasetError::ParseError {
                file: path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })
    }

    /// Reads a PNM raster, converting color to gray by channel mean.
    pub fn load_pnm(path: &Path) -> Result<Self, DatasetError> {
        let mut reader = image::ImageReader::open(path).map_err(io_err(path))?;
        reader.set_format(ImageFormat::Pnm);
        let img = reader.decode().map_err(|e| DatasetError::ParseError {
            file: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let pixels = rgb
            .pixels()
            .map(|p| ((p[0] as u16 + p[1] as u16 + p[2] as u16 + 1) / 3) as u8)
            .collect();
        Ok(Self::new(rgb.width() as usize, rgb.height() as usize, pixels))
    }
}

/// One sample: its condition, initial image, raw and smoothed trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub condition: ProcessCondition,
    pub initial_image: Option<Raster>,
    pub raw_trajectory: Trajectory,
    pub smoothed_trajectory: Option<Trajectory>,
}

impl SampleRecord {
    /// The smoothed trajectory when present, else the raw one.
    pub fn target(&self) -> &Trajectory {
        self.smoothed_trajectory.as_ref().unwrap_or(&self.raw_trajectory)
    }
}

pub fn conditions_of(records: &[SampleRecord]) -> BTreeSet<ProcessCondition> {
    records.iter().map(|r| r.condition).collect()
}

/// Records whose condition is in `set`, in input order.
pub fn samples_in<'a>(records: &'a [SampleRecord], set: &BTreeSet<ProcessCondition>) -> Vec<&'a SampleRecord> {
    records.iter().filter(|r| set.contains(&r.condition)).collect()
}

/// Checks unique ids, positive conditions, consistent units and matching
/// time grids between raw and smoothed trajectories.
pub fn validate_records(records: &[SampleRecord]) -> Result<(), DatasetError> {
    let mut ids = BTreeSet::new();
    let first = records.first().map(|r| r.condition);
    for r in records {
        let bad = |message: String| DatasetError::InvalidRecord {
            id: r.id.clone(),
            message,
        };
        if !ids.insert(r.id.as_str()) {
            return Err(bad("duplicate id".into()));
        }
        r.condition.validate().map_err(bad)?;
        if let Some(f) = first {
            if f.temperature_unit != r.condition.temperature_unit || f.velocity_unit != r.condition.velocity_unit {
                return Err(bad("units differ from the rest of the dataset".into()));
            }
        }
        if let Some(s) = &r.smoothed_trajectory {
            if s.times() != r.raw_trajectory.times() {
                return Err(bad("smoothed and raw trajectories use different times".into()));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    AllUnseen,
    SimilarityInformed,
}

impl SplitMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitMode::AllUnseen => "all_unseen",
            SplitMode::SimilarityInformed => "similarity_informed",
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_unseen" => Ok(Self::AllUnseen),
            "similarity_informed" => Ok(Self::SimilarityInformed),
            other => Err(format!(
                "unknown mode {other:?} (expected all_unseen or similarity_informed)"
            )),
        }
    }
}

/// Disjoint train / evaluation condition sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitPlan {
    mode: SplitMode,
    train: BTreeSet<ProcessCondition>,
    eval: BTreeSet<ProcessCondition>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitPlanRepr {
    mode: SplitMode,
    train: Vec<ProcessCondition>,
    eval: Vec<ProcessCondition>,
}

impl<'de> Deserialize<'de> for SplitPlan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = SplitPlanRepr::deserialize(d)?;
        SplitPlan::new(
            repr.mode,
            repr.train.into_iter().collect(),
            repr.eval.into_iter().collect(),
        )
        .map_err(serde::de::Error::custom)
    }
}

impl SplitPlan {
    /// Fails unless both sets are nonempty and disjoint.
    pub fn new(
        mode: SplitMode,
        train: BTreeSet<ProcessCondition>,
        eval: BTreeSet<ProcessCondition>,
    ) -> Result<Self, DatasetError> {
        if train.is_empty() || eval.is_empty() {
            return Err(DatasetError::InvalidSelection(
                "train and evaluation sets must both be nonempty".into(),
            ));
        }
        if let Some(c) = train.intersection(&eval).next() {
            return Err(DatasetError::Overlap(c.to_string()));
        }
        Ok(Self { mode, train, eval })
    }

    pub fn mode(&self) -> SplitMode {
        self.mode
    }

    pub fn train_conditions(&self) -> &BTreeSet<ProcessCondition> {
        &self.train
    }

    pub fn eval_conditions(&self) -> &BTreeSet<ProcessCondition> {
        &self.eval
    }

    pub fn is_disjoint(&self) -> bool {
        self.train.is_disjoint(&self.eval)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split plan serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_json() + "\n").map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::ParseError {
            file: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// How the evaluation conditions are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSelector {
    Conditions(Vec<ProcessCondition>),
    Fraction(f64),
}

/// All-unseen split: the selected evaluation conditions, with every other
/// condition used for training.
pub fn make_zero_shot_split(
    conditions: &BTreeSet<ProcessCondition>,
    selector: &EvalSelector,
    seed: u64,
) -> Result<SplitPlan, DatasetError> {
    let eval: BTreeSet<ProcessCondition> = match selector {
        EvalSelector::Conditions(list) => {
            if let Some(unknown) = list.iter().find(|c| !conditions.contains(c)) {
                return Err(DatasetError::InvalidSelection(format!("unknown condition {unknown}")));
            }
            list.iter().copied().collect()
        }
        EvalSelector::Fraction(f) => {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(DatasetError::InvalidSelection(format!(
                    "fraction {f} must lie strictly between 0 and 1"
                )));
            }
            let count = (f * conditions.len() as f64).ceil() as usize;
            let mut pool: Vec<ProcessCondition> = conditions.iter().copied().collect();
            pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            pool.into_iter().take(count).collect()
        }
    };
    if eval.is_empty() {
        return Err(DatasetError::InvalidSelection("evaluation set is empty".into()));
    }
    if eval.len() >= conditions.len() {
        return Err(DatasetError::InvalidSelection(
            "evaluation set covers every condition, leaving nothing to train on".into(),
        ));
    }
    let train = conditions.difference(&eval).copied().collect();
    SplitPlan::new(SplitMode::AllUnseen, train, eval)
}

/// Restricts training to conditions sharing the temperature or the air
/// velocity of at least one evaluation condition. With several evaluation
/// conditions the per-condition selections are united.
pub fn similarity_select(plan: &SplitPlan) -> Result<SplitPlan, DatasetError> {
    let train: BTreeSet<ProcessCondition> = plan
        .train
        .iter()
        .filter(|c| plan.eval.iter().any(|e| c.same_temperature(e) || c.same_velocity(e)))
        .copied()
        .collect();
    if train.is_empty() {
        return Err(DatasetError::EmptySimilarSet);
    }
    SplitPlan::new(SplitMode::SimilarityInformed, train, plan.eval.clone())
}

/// Fills `smoothed_trajectory` with the low-pass filtered raw values.
pub fn preprocess(records: &[SampleRecord], cutoff: usize) -> Result<Vec<SampleRecord>, DatasetError> {
    records
        .iter()
        .map(|r| {
            let smoothed = smooth_lowpass(r.raw_trajectory.values(), cutoff)?;
            Ok(SampleRecord {
                smoothed_trajectory: Some(r.raw_trajectory.with_values(smoothed)?),
                ..r.clone()
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    temperature: f64,
    temperature_unit: TemperatureUnit,
    air_velocity: f64,
    velocity_unit: VelocityUnit,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_path: Option<String>,
    trajectory_path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    smoothed_trajectory_path: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    samples: Vec<ManifestEntry>,
}

const REQUIRED_KEYS: [&str; 6] = [
    "id",
    "temperature",
    "temperature_unit",
    "air_velocity",
    "velocity_unit",
    "trajectory_path",
];

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<(), DatasetError> {
    let mut out = String::with_capacity(traj.len() * 48);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (t, v) in traj.times().iter().zip(traj.values()) {
        // Debug formatting is the shortest representation that round-trips.
        out.push_str(&format!("{t:?},{v:?}\n"));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").trim();
    if header != TRAJECTORY_HEADER {
        return Err(DatasetError::SchemaMismatch {
            file: path.to_path_buf(),
            message: format!("expected header {TRAJECTORY_HEADER:?}, found {header:?}"),
        });
    }
    let parse_err = |line: usize, message: String| DatasetError::ParseError {
        file: path.to_path_buf(),
        line,
        message,
    };
    let mut times: Vec<f64> = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(t), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(line_no, format!("expected 2 fields in row {line:?}")));
        };
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|e| parse_err(line_no, format!("field time_normalized: {e}")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|e| parse_err(line_no, format!("field delta_e: {e}")))?;
        if !(0.0..=1.0).contains(&t) {
            return Err(parse_err(line_no, format!("time {t} outside [0, 1]")));
        }
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(parse_err(
                    line_no,
                    format!("time {t} does not increase over previous row ({prev})"),
                ));
            }
        }
        times.push(t);
        values.push(v);
    }
    Trajectory::new(times, values).map_err(|e| parse_err(0, e.to_string()))
}

/// Writes `manifest.json`, trajectory CSVs and images under `dir`.
pub fn save_dataset(records: &[SampleRecord], dir: &Path) -> Result<(), DatasetError> {
    validate_records(records)?;
    for sub in ["trajectories", "smoothed", "images"] {
        fs::create_dir_all(dir.join(sub)).map_err(io_err(dir))?;
    }
    let mut samples = Vec::with_capacity(records.len());
    for r in records {
        let stem = file_stem_for(&r.id);
        let trajectory_path = format!("trajectories/{stem}.csv");
        write_trajectory_csv(&r.raw_trajectory, &dir.join(&trajectory_path))?;
        let smoothed_trajectory_path = match &r.smoothed_trajectory {
            Some(s) => {
                let p = format!("smoothed/{stem}.csv");
                write_trajectory_csv(s, &dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        let image_path = match &r.initial_image {
            Some(img) => {
                let p = format!("images/{stem}.ppm");
                img.save_ppm(&dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        samples.push(ManifestEntry {
            id: r.id.clone(),
            temperature: r.condition.temperature,
            temperature_unit: r.condition.temperature_unit,
            air_velocity: r.condition.air_velocity,
            velocity_unit: r.condition.velocity_unit,
            image_path,
            trajectory_path,
            smoothed_trajectory_path,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&Manifest { samples }).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

/// Reads a dataset directory written by [`save_dataset`] (or by hand).
pub fn load_dataset(dir: &Path) -> Result<Vec<SampleRecord>, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let schema = |message: String| DatasetError::SchemaMismatch {
        file: path.clone(),
        message,
    };
    let value: Value = serde_json::from_str(&text).map_err(|e| DatasetError::ParseError {
        file: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let samples = value
        .get("samples")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("missing \"samples\" array".into()))?;
    for (i, s) in samples.iter().enumerate() {
        let obj = s
            .as_object()
            .ok_or_else(|| schema(format!("sample {i} is not an object")))?;
        if let Some(key) = REQUIRED_KEYS.iter().find(|k| !obj.contains_key(**k)) {
            return Err(schema(format!("sample {i} is missing column {key:?}")));
        }
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;

    let mut records = Vec::with_capacity(manifest.samples.len());
    for e in manifest.samples {
        let raw_trajectory = read_trajectory_csv(&dir.join(&e.trajectory_path))?;
        let smoothed_trajectory = e
            .smoothed_trajectory_path
            .as_ref()
            .map(|p| read_trajectory_csv(&dir.join(p)))
            .transpose()?;
        let initial_image = e
            .image_path
            .as_ref()
            .map(|p| Raster::load_pnm(&dir.join(p)))
            .transpose()?;
        records.push(SampleRecord {
            id: e.id,
            condition: ProcessCondition::new(e.temperature, e.temperature_unit, e.air_velocity, e.velocity_unit),
            initial_image,
            raw_trajectory,
            smoothed_trajectory,
        });
    }
    validate_records(&records)?;
    Ok(records)
}

/// Groups records by condition, preserving input order inside each group.
pub fn group_by_condition<'a, I>(records: I) -> BTreeMap<ProcessCondition, Vec<&'a SampleRecord>>
where
    I: IntoIterator<Item = &'a SampleRecord>,
{
    let mut map: BTreeMap<ProcessCondition, Vec<&SampleRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.condition).or_default().push(r);
    }
    map
}
