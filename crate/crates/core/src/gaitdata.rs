//! Raw vGRF recordings: the 19-column text format, cohort manifests, and a
//! synthetic generator for tests and demos.
//!
//! A recording line holds a timestamp in seconds, eight left-foot sensor
//! forces, eight right-foot sensor forces, and the two per-foot totals, all
//! in newtons at a nominal 100 Hz. Forces must be finite and non-negative
//! and timestamps strictly increasing; the parser reports violations with
//! 1-based line numbers and never panics on malformed text.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Sensors per foot; fixed by the recording format.
pub const SENSORS: usize = 8;
/// Nominal sampling rate of the public recordings.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 100.0;

// ── Subject metadata ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cohort {
    Ga,
    Ju,
    Si,
    Synthetic,
}

/// Binary class: healthy control or patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "CO")]
    Co,
    #[serde(rename = "PD")]
    Pd,
}

impl ClassLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            ClassLabel::Co => 0,
            ClassLabel::Pd => 1,
        }
    }
}

/// Hoehn-Yahr staging as it appears in the cohorts: 0, 2, 2.5 or 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Severity {
    NoDisability,
    BilateralWithoutBalanceImpairment,
    BilateralWithBalanceImpairment,
    ImpairedPosturalReflexes,
}

impl Severity {
    pub fn value(self) -> f64 {
        match self {
            Severity::NoDisability => 0.0,
            Severity::BilateralWithoutBalanceImpairment => 2.0,
            Severity::BilateralWithBalanceImpairment => 2.5,
            Severity::ImpairedPosturalReflexes => 3.0,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        match v {
            v if v == 0.0 => Ok(Severity::NoDisability),
            v if v == 2.0 => Ok(Severity::BilateralWithoutBalanceImpairment),
            v if v == 2.5 => Ok(Severity::BilateralWithBalanceImpairment),
            v if v == 3.0 => Ok(Severity::ImpairedPosturalReflexes),
            _ => Err(Error::Data(format!("severity {v} is not one of 0, 2, 2.5, 3"))),
        }
    }
}

impl Serialize for Severity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Severity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Severity::from_value(v).map_err(serde::de::Error::custom)
    }
}

/// Identity and diagnosis of the subject a recording belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMeta {
    pub subject_id: String,
    pub cohort: Cohort,
    pub label: ClassLabel,
    pub severity: Option<Severity>,
}

// ── Recordings ──────────────────────────────────────────────────────────────

/// One parsed walk: per-row sensor forces for both feet plus totals.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub meta: SubjectMeta,
    pub sample_rate_hz: f64,
    pub timestamps: Vec<f64>,
    pub left: Vec<[f64; SENSORS]>,
    pub right: Vec<[f64; SENSORS]>,
    pub total_left: Vec<f64>,
    pub total_right: Vec<f64>,
}

impl RawRecording {
    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    /// Number of complete fixed-length cycles this recording yields.
    pub fn n_cycles(&self, window: usize) -> usize {
        if window == 0 {
            0
        } else {
            self.n_rows() / window
        }
    }

    /// Checks the format invariants on an in-memory recording.
    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if n == 0 {
            return Err(Error::Data(format!("{}: recording has no rows", self.meta.subject_id)));
        }
        if self.left.len() != n
            || self.right.len() != n
            || self.total_left.len() != n
            || self.total_right.len() != n
        {
            return Err(Error::Data(format!("{}: ragged recording arrays", self.meta.subject_id)));
        }
        for i in 0..n {
            if i > 0 && self.timestamps[i] <= self.timestamps[i - 1] {
                return Err(Error::Data(format!(
                    "{}: timestamps not strictly increasing at row {i}",
                    self.meta.subject_id
                )));
            }
            let forces = self
                .left[i]
                .iter()
                .chain(self.right[i].iter())
                .chain([&self.total_left[i], &self.total_right[i]]);
            for &f in forces {
                if !f.is_finite() || f < 0.0 {
                    return Err(Error::Data(format!(
                        "{}: invalid force {f} at row {i}",
                        self.meta.subject_id
                    )));
                }
            }
        }
        Ok(())
    }
}

// ── Parsing and serialization ───────────────────────────────────────────────

/// Parses the 19-column whitespace-separated format. Blank lines are
/// skipped; `source` labels error messages.
pub fn parse_recording(
    text: &str,
    source: &str,
    meta: SubjectMeta,
    sample_rate_hz: f64,
) -> Result<RawRecording> {
    let mut rec = RawRecording {
        meta,
        sample_rate_hz,
        timestamps: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
        total_left: Vec::new(),
        total_right: Vec::new(),
    };
    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let n_tokens = line.split_whitespace().count();
        if n_tokens != 19 {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected 19 columns, found {n_tokens}"),
            ));
        }
        let mut values = [0.0f64; 19];
        for (col, tok) in line.split_whitespace().enumerate() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::parse(source, lineno, format!("column {}: not a number: {tok:?}", col + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("column {}: non-finite value {tok:?}", col + 1),
                ));
            }
            values[col] = v;
        }
        let t = values[0];
        if let Some(&prev) = rec.timestamps.last() {
            if t <= prev {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("timestamp {t} does not increase past {prev}"),
                ));
            }
        }
        for (col, &v) in values.iter().enumerate().skip(1) {
            if v < 0.0 {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("column {}: negative force {v}", col + 1),
                ));
            }
        }
        rec.timestamps.push(t);
        let mut l = [0.0; SENSORS];
        let mut r = [0.0; SENSORS];
        l.copy_from_slice(&values[1..9]);
        r.copy_from_slice(&values[9..17]);
        rec.left.push(l);
        rec.right.push(r);
        rec.total_left.push(values[17]);
        rec.total_right.push(values[18]);
    }
    if rec.timestamps.is_empty() {
        return Err(Error::parse(source, 0, "no data rows"));
    }
    Ok(rec)
}

/// Inverse of [`parse_recording`]; `parse(serialize(r)) == r` exactly, since
/// values print with the shortest round-tripping decimal form.
pub fn serialize_recording(rec: &RawRecording) -> String {
    let mut out = String::new();
    for i in 0..rec.n_rows() {
        let _ = write!(out, "{}", rec.timestamps[i]);
        write_foot(&mut out, &rec.left[i]);
        write_foot(&mut out, &rec.right[i]);
        let _ = write!(out, "\t{}\t{}", rec.total_left[i], rec.total_right[i]);
        out.push('\n');
    }
    out
}

fn write_foot(out: &mut String, vals: &[f64; SENSORS]) {
    for v in vals {
        let _ = write!(out, "\t{v}");
    }
}

pub fn load_recording(path: &Path, meta: SubjectMeta, sample_rate_hz: f64) -> Result<RawRecording> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_recording(&text, &path.display().to_string(), meta, sample_rate_hz)
}

pub fn save_recording(path: &Path, rec: &RawRecording) -> Result<()> {
    std::fs::write(path, serialize_recording(rec)).map_err(|e| Error::io(path, e))
}

// ── Manifests ───────────────────────────────────────────────────────────────

/// Manifest entry for one recording file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub cohort: Cohort,
    pub label: ClassLabel,
    pub severity: Option<Severity>,
}

/// Filename -> entry, in file order. Order is preserved so a manifest pins
/// the dataset ordering exactly.
pub type Manifest = IndexMap<String, ManifestEntry>;

pub fn manifest_from_json(text: &str) -> Result<Manifest> {
    serde_json::from_str(text).map_err(|e| Error::parse("manifest", 0, e.to_string()))
}

pub fn manifest_to_json(manifest: &Manifest) -> String {
    serde_json::to_string_pretty(manifest).expect("manifest serializes")
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    manifest_from_json(&text)
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::write(path, manifest_to_json(manifest)).map_err(|e| Error::io(path, e))
}

/// Subject id for a recording file: the stem up to the first underscore, so
/// repeated walks of one subject share an id.
pub fn subject_id_of(filename: &str) -> String {
    let stem = filename.strip_suffix(".txt").unwrap_or(filename);
    stem.split('_').next().unwrap_or(stem).to_string()
}

/// Derives a manifest from filenames in the public naming scheme
/// (`GaPt03_01.txt`: cohort prefix, then `Co` or `Pt`). Severity is unknown
/// from names alone and left null.
pub fn derive_manifest(filenames: &[String]) -> Result<Manifest> {
    let mut manifest = Manifest::new();
    for name in filenames {
        let stem = name.strip_suffix(".txt").unwrap_or(name);
        let cohort = match stem.get(0..2) {
            Some("Ga") => Cohort::Ga,
            Some("Ju") => Cohort::Ju,
            Some("Si") => Cohort::Si,
            _ => return Err(Error::Data(format!("{name}: unknown cohort prefix"))),
        };
        let label = match stem.get(2..4) {
            Some("Co") => ClassLabel::Co,
            Some("Pt") => ClassLabel::Pd,
            _ => return Err(Error::Data(format!("{name}: expected Co or Pt after cohort"))),
        };
        manifest.insert(name.clone(), ManifestEntry { cohort, label, severity: None });
    }
    Ok(manifest)
}

/// Loads every recording a manifest names, in manifest order. A subject
/// appearing with two different labels is rejected.
pub fn load_catalog(root: &Path, manifest: &Manifest) -> Result<Vec<RawRecording>> {
    let mut labels: HashMap<String, ClassLabel> = HashMap::new();
    let mut recs = Vec::with_capacity(manifest.len());
    for (name, entry) in manifest {
        let subject_id = subject_id_of(name);
        if let Some(&prev) = labels.get(&subject_id) {
            if prev != entry.label {
                return Err(Error::Data(format!(
                    "subject {subject_id} has conflicting labels across recordings"
                )));
            }
        } else {
            labels.insert(subject_id.clone(), entry.label);
        }
        let meta = SubjectMeta {
            subject_id,
            cohort: entry.cohort,
            label: entry.label,
            severity: entry.severity,
        };
        recs.push(load_recording(&root.join(name), meta, DEFAULT_SAMPLE_RATE_HZ)?);
    }
    Ok(recs)
}

// ── Synthetic data ──────────────────────────────────────────────────────────

/// Controls the synthetic two-class generator. `separation` in [0, 1] scales
/// how strongly the patient class deviates (right-foot timing lag plus
/// reduced toe-off force); 0 makes the classes identical in distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_control: usize,
    pub n_parkinsons: usize,
    pub rows_per_subject: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
    pub sample_rate_hz: f64,
    /// Gait period in rows; one bump per sensor per period.
    pub period: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_control: 10,
            n_parkinsons: 10,
            rows_per_subject: 480,
            separation: 0.8,
            noise: 5.0,
            seed: 7,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            period: 160,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_control + self.n_parkinsons == 0 {
            return Err(Error::Config("synthetic dataset needs at least one subject".into()));
        }
        if self.rows_per_subject == 0 || self.period == 0 {
            return Err(Error::Config("rows_per_subject and period must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.separation) {
            return Err(Error::Config(format!("separation {} outside [0, 1]", self.separation)));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::Config(format!("noise {} must be finite and non-negative", self.noise)));
        }
        if !self.sample_rate_hz.is_finite() || self.sample_rate_hz <= 0.0 {
            return Err(Error::Config(format!("sample rate {} must be positive", self.sample_rate_hz)));
        }
        Ok(())
    }
}

/// Half-sine force bump: sensor `k` fires `k/8` of the way into the stance
/// phase with amplitude growing toward the toe.
fn bump(pos: f64, onset: f64, width: f64, amp: f64) -> f64 {
    let u = pos - onset;
    if u >= 0.0 && u < width {
        amp * (std::f64::consts::PI * u / width).sin()
    } else {
        0.0
    }
}

fn synth_subject(
    config: &SynthConfig,
    label: ClassLabel,
    idx: usize,
    severity: Option<Severity>,
) -> RawRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(((label.as_u8() as u64) << 32) | idx as u64);
    let unit = Normal::new(0.0, 1.0).unwrap();

    let period = config.period as f64;
    let stance = 0.6 * period;
    let width = stance / 2.0;
    let subj_scale = 1.0 + 0.05 * unit.sample(&mut rng);
    // patient class: the right foot lags and its toe sensors push weaker
    let lag = if label == ClassLabel::Pd { config.separation * period / 8.0 } else { 0.0 };
    let toe_damp = if label == ClassLabel::Pd { 1.0 - 0.35 * config.separation } else { 1.0 };

    let prefix = match label {
        ClassLabel::Co => "SynCo",
        ClassLabel::Pd => "SynPt",
    };
    let mut rec = RawRecording {
        meta: SubjectMeta {
            subject_id: format!("{prefix}{idx:03}"),
            cohort: Cohort::Synthetic,
            label,
            severity,
        },
        sample_rate_hz: config.sample_rate_hz,
        timestamps: Vec::with_capacity(config.rows_per_subject),
        left: Vec::with_capacity(config.rows_per_subject),
        right: Vec::with_capacity(config.rows_per_subject),
        total_left: Vec::with_capacity(config.rows_per_subject),
        total_right: Vec::with_capacity(config.rows_per_subject),
    };

    let jitter = |rng: &mut ChaCha8Rng| {
        if config.noise > 0.0 {
            config.noise * unit.sample(rng)
        } else {
            0.0
        }
    };
    for t in 0..config.rows_per_subject {
        let pos_l = (t as f64).rem_euclid(period);
        let pos_r = (t as f64 - period / 2.0 - lag).rem_euclid(period);
        let mut l = [0.0; SENSORS];
        let mut r = [0.0; SENSORS];
        for k in 0..SENSORS {
            let onset = (k as f64 / SENSORS as f64) * (stance / 2.0);
            let amp = (350.0 + 40.0 * k as f64) * subj_scale;
            let amp_r = if k >= 5 { amp * toe_damp } else { amp };
            l[k] = (bump(pos_l, onset, width, amp) + jitter(&mut rng)).max(0.0);
            r[k] = (bump(pos_r, onset, width, amp_r) + jitter(&mut rng)).max(0.0);
        }
        rec.timestamps.push(t as f64 / config.sample_rate_hz);
        rec.total_left.push(l.iter().sum());
        rec.total_right.push(r.iter().sum());
        rec.left.push(l);
        rec.right.push(r);
    }
    rec
}

/// Generates `n_control + n_parkinsons` single-walk subjects. Controls carry
/// severity 0; patients cycle through 2, 2.5, 3. Fully determined by the
/// config: each subject draws from its own seeded stream.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<RawRecording>> {
    config.validate()?;
    let mut recs = Vec::with_capacity(config.n_control + config.n_parkinsons);
    for i in 0..config.n_control {
        recs.push(synth_subject(config, ClassLabel::Co, i, Some(Severity::NoDisability)));
    }
    let stages = [
        Severity::BilateralWithoutBalanceImpairment,
        Severity::BilateralWithBalanceImpairment,
        Severity::ImpairedPosturalReflexes,
    ];
    for i in 0..config.n_parkinsons {
        recs.push(synth_subject(config, ClassLabel::Pd, i, Some(stages[i % 3])));
    }
    Ok(recs)
}

/// Writes one `.txt` per recording plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, recs: &[RawRecording]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::new();
    for rec in recs {
        let name = format!("{}.txt", rec.meta.subject_id);
        save_recording(&dir.join(&name), rec)?;
        manifest.insert(
            name,
            ManifestEntry {
                cohort: rec.meta.cohort,
                label: rec.meta.label,
                severity: rec.meta.severity,
            },
        );
    }
    let path = dir.join("manifest.json");
    save_manifest(&path, &manifest)?;
    Ok(path)
}
