//! From raw recordings to model-ready gait-cycle graph samples.
//!
//! The steps, in pipeline order: fit per-channel min/max on the training
//! rows only, normalize all 16 sensor channels into [0, 1] (values outside
//! the fitted range clamp), reduce each left/right sensor pair to its
//! absolute difference, cut the 8-channel series into non-overlapping
//! fixed-length cycles, and split into train/val/test. Splits are decided
//! before fitting, so no statistic ever leaks out of the training set.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gaitdata::{RawRecording, SENSORS};
use crate::{Error, Result};

// ── Normalization ───────────────────────────────────────────────────────────

/// Per-channel min/max over the 16 raw sensor channels (left 0-7, right
/// 8-15), in fitting order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Which rows produced these statistics, e.g. "train".
    pub fitted_on: String,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        if self.min.len() != 2 * SENSORS || self.max.len() != 2 * SENSORS {
            return Err(Error::Data(format!(
                "normalizer needs {} channels, got {}/{}",
                2 * SENSORS,
                self.min.len(),
                self.max.len()
            )));
        }
        for k in 0..2 * SENSORS {
            if !self.min[k].is_finite() || !self.max[k].is_finite() || self.min[k] > self.max[k] {
                return Err(Error::Data(format!("normalizer channel {k} has invalid range")));
            }
        }
        Ok(())
    }

    /// Scales one channel into [0, 1], clamping out-of-range values. A
    /// degenerate channel (max == min) maps to 0.
    #[inline]
    pub fn apply(&self, channel: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[channel], self.max[channel]);
        if hi <= lo {
            return 0.0;
        }
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

fn raw_channels(rec: &RawRecording, row: usize) -> [f64; 2 * SENSORS] {
    let mut out = [0.0; 2 * SENSORS];
    out[..SENSORS].copy_from_slice(&rec.left[row]);
    out[SENSORS..].copy_from_slice(&rec.right[row]);
    out
}

fn fit_rows<'a>(
    rows: impl Iterator<Item = (&'a RawRecording, usize)>,
    fitted_on: &str,
) -> Result<NormStats> {
    let mut min = vec![f64::INFINITY; 2 * SENSORS];
    let mut max = vec![f64::NEG_INFINITY; 2 * SENSORS];
    let mut any = false;
    for (rec, row) in rows {
        any = true;
        for (k, v) in raw_channels(rec, row).into_iter().enumerate() {
            min[k] = min[k].min(v);
            max[k] = max[k].max(v);
        }
    }
    if !any {
        return Err(Error::Data("cannot fit a normalizer on zero rows".into()));
    }
    Ok(NormStats { min, max, fitted_on: fitted_on.to_string() })
}

/// Fits min/max over every row of every recording.
pub fn fit_normalizer(recs: &[RawRecording]) -> Result<NormStats> {
    fit_rows(
        recs.iter().flat_map(|r| (0..r.n_rows()).map(move |i| (r, i))),
        "all",
    )
}

/// Normalized 16-channel rows for a whole recording.
pub fn normalize(rec: &RawRecording, stats: &NormStats) -> Result<Vec<[f64; 2 * SENSORS]>> {
    stats.validate()?;
    Ok((0..rec.n_rows())
        .map(|row| {
            let mut out = raw_channels(rec, row);
            for (k, v) in out.iter_mut().enumerate() {
                *v = stats.apply(k, *v);
            }
            out
        })
        .collect())
}

/// Collapses left/right pairs to `|L_k - R_k|`, one channel per sensor.
pub fn reduce_lr(rows: &[[f64; 2 * SENSORS]]) -> Vec<[f64; SENSORS]> {
    rows.iter()
        .map(|row| {
            let mut out = [0.0; SENSORS];
            for k in 0..SENSORS {
                out[k] = (row[k] - row[SENSORS + k]).abs();
            }
            out
        })
        .collect()
}

// ── Segmentation ────────────────────────────────────────────────────────────

/// Cuts the series into non-overlapping `window`-row cycles, dropping the
/// incomplete tail. Each cycle is node-major: `features[sensor][step]`.
pub fn segment_cycles(series: &[[f64; SENSORS]], window: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    if window == 0 {
        return Err(Error::Config("cycle window must be positive".into()));
    }
    let n_cycles = series.len() / window;
    let mut cycles = Vec::with_capacity(n_cycles);
    for c in 0..n_cycles {
        let rows = &series[c * window..(c + 1) * window];
        let mut features = vec![vec![0.0; window]; SENSORS];
        for (t, row) in rows.iter().enumerate() {
            for k in 0..SENSORS {
                features[k][t] = row[k];
            }
        }
        cycles.push(features);
    }
    Ok(cycles)
}

// ── Samples ─────────────────────────────────────────────────────────────────

/// One model-ready gait cycle: an 8-sensor feature matrix plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitCycleSample {
    pub subject_id: String,
    /// Cycle number within the subject, counted across that subject's walks.
    pub cycle_index: usize,
    /// 0 = control, 1 = patient.
    pub label: u8,
    /// `features[sensor][step]`, normalized to [0, 1].
    pub features: Vec<Vec<f64>>,
}

impl GaitCycleSample {
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Data(format!(
                "{}#{}: label {} is not binary",
                self.subject_id, self.cycle_index, self.label
            )));
        }
        let width = self.features.first().map_or(0, Vec::len);
        if self.features.is_empty() || width == 0 {
            return Err(Error::Data(format!(
                "{}#{}: empty feature matrix",
                self.subject_id, self.cycle_index
            )));
        }
        for row in &self.features {
            if row.len() != width {
                return Err(Error::Data(format!(
                    "{}#{}: ragged feature matrix",
                    self.subject_id, self.cycle_index
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "{}#{}: non-finite feature",
                    self.subject_id, self.cycle_index
                )));
            }
        }
        Ok(())
    }

    /// `subject#cycle`, unique within a dataset.
    pub fn id(&self) -> String {
        format!("{}#{}", self.subject_id, self.cycle_index)
    }
}

/// Parses and validates one JSONL dataset line.
pub fn parse_sample_line(line: &str) -> Result<GaitCycleSample> {
    let sample: GaitCycleSample =
        serde_json::from_str(line).map_err(|e| Error::parse("sample", 0, e.to_string()))?;
    sample.validate()?;
    Ok(sample)
}

pub fn read_samples_jsonl(path: &Path) -> Result<Vec<GaitCycleSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_sample_line(&line)
            .map_err(|e| Error::parse(path.display().to_string(), idx + 1, e.to_string()))?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_samples_jsonl(path: &Path, samples: &[GaitCycleSample]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    for sample in samples {
        buf.clear();
        let _ = write!(buf, "{}", serde_json::to_string(sample).expect("sample serializes"));
        buf.push('\n');
        file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

// ── Sensor graph ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphSpec {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
}

/// Undirected sensor adjacency. Edges are canonical `(low, high)` pairs;
/// neighbour lists are sorted and never include the node itself (attention
/// layers add self-loops on their own).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct SensorGraph {
    pub n_nodes: usize,
    edges: Vec<(usize, usize)>,
    nbrs: Vec<Vec<usize>>,
}

impl SensorGraph {
    /// Builds and validates a graph; duplicate edges collapse.
    pub fn from_edges(n_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::Graph("graph needs at least one node".into()));
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::Graph(format!(
                    "edge ({a}, {b}) references a node outside 0..{n_nodes}"
                )));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop on node {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        let mut nbrs = vec![Vec::new(); n_nodes];
        for &(a, b) in &canon {
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        for list in &mut nbrs {
            list.sort_unstable();
        }
        Ok(SensorGraph { n_nodes, edges: canon, nbrs })
    }

    /// Sorted neighbours of `i`, excluding `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.nbrs[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

impl TryFrom<GraphSpec> for SensorGraph {
    type Error = Error;
    fn try_from(spec: GraphSpec) -> Result<Self> {
        SensorGraph::from_edges(spec.n_nodes, spec.edges)
    }
}

impl From<SensorGraph> for GraphSpec {
    fn from(g: SensorGraph) -> Self {
        GraphSpec { n_nodes: g.n_nodes, edges: g.edges }
    }
}

/// The anatomical adjacency of the 8 insole sensors: heel cluster (0-2),
/// mid-foot bridge (3, 4), toe cluster (5-7).
pub fn default_sensor_graph() -> SensorGraph {
    SensorGraph::from_edges(
        SENSORS,
        vec![
            (0, 1),
            (0, 2),
            (1, 2),
            (1, 3),
            (2, 4),
            (3, 4),
            (3, 5),
            (4, 7),
            (5, 6),
            (6, 7),
            (5, 7),
        ],
    )
    .expect("default graph is valid")
}

/// Parses an edge-list file: one edge per line, two zero-based node indices
/// separated by whitespace; blank lines are skipped.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::parse(
                "edges",
                idx + 1,
                format!("expected two node indices, found {}", toks.len()),
            ));
        }
        let parse = |tok: &str| {
            tok.parse::<usize>()
                .map_err(|_| Error::parse("edges", idx + 1, format!("bad node index {tok:?}")))
        };
        edges.push((parse(toks[0])?, parse(toks[1])?));
    }
    Ok(edges)
}

pub fn load_edge_list(path: &Path, n_nodes: usize) -> Result<SensorGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SensorGraph::from_edges(n_nodes, parse_edge_list(&text)?)
}

// ── Splits ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Cycles shuffle independently; one subject's cycles may span splits.
    SampleLevel,
    /// All cycles of a subject stay in one split.
    SubjectLevel,
}

/// Integer apportionment by largest remainder: floors first, then the
/// leftover units go to the largest fractional parts, earlier index winning
/// ties. The result always sums to `total`.
pub fn largest_remainder(total: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    if ratios.is_empty() {
        return Err(Error::Config("no ratios given".into()));
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut counts: Vec<usize> = Vec::with_capacity(ratios.len());
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(ratios.len());
    let mut used = 0usize;
    for (i, r) in ratios.iter().enumerate() {
        let exact = r * total as f64;
        let floor = exact.floor() as usize;
        counts.push(floor);
        fracs.push((exact - floor as f64, i));
        used += floor;
    }
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for k in 0..total - used {
        counts[fracs[k % fracs.len()].1] += 1;
    }
    Ok(counts)
}

/// Index assignment shared by [`split_dataset`] and the pipeline. Counts are
/// apportioned in (train, test, val) order so a leftover unit lands in the
/// held-out test set first; returned as `[train, val, test]` index lists in
/// draw order.
fn assign_splits(
    subjects: &[&str],
    ratios: [f64; 3],
    seed: u64,
    mode: SplitMode,
) -> Result<[Vec<usize>; 3]> {
    let n = subjects.len();
    if n == 0 {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let counts = largest_remainder(n, &[ratios[0], ratios[2], ratios[1]])?;
    let (n_train, n_test) = (counts[0], counts[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    match mode {
        SplitMode::SampleLevel => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let test_end = n_train + n_test;
            Ok([
                idx[..n_train].to_vec(),
                idx[test_end..].to_vec(),
                idx[n_train..test_end].to_vec(),
            ])
        }
        SplitMode::SubjectLevel => {
            let mut order: Vec<&str> = Vec::new();
            let mut by_subject: HashMap<&str, Vec<usize>> = HashMap::new();
            for (i, s) in subjects.iter().enumerate() {
                by_subject.entry(s).or_insert_with(|| {
                    order.push(s);
                    Vec::new()
                });
                by_subject.get_mut(s).unwrap().push(i);
            }
            order.shuffle(&mut rng);
            // fill the split with the largest remaining deficit; ties favor
            // train, then test, then val
            let mut deficit = [counts[0] as i64, counts[1] as i64, counts[2] as i64];
            let mut out: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for s in order {
                let members = &by_subject[s];
                let mut best = 0;
                for k in 1..3 {
                    if deficit[k] > deficit[best] {
                        best = k;
                    }
                }
                deficit[best] -= members.len() as i64;
                out[best].extend_from_slice(members);
            }
            let [train, test, val] = out;
            Ok([train, val, test])
        }
    }
}

/// A split dataset plus the knobs that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<GaitCycleSample>,
    pub val: Vec<GaitCycleSample>,
    pub test: Vec<GaitCycleSample>,
    pub ratios: [f64; 3],
    pub seed: u64,
    pub mode: SplitMode,
}

/// Reproducibility record: which sample ids landed where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub mode: SplitMode,
    pub ratios: [f64; 3],
    pub counts: [usize; 3],
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn manifest(&self) -> SplitManifest {
        let ids = |v: &[GaitCycleSample]| v.iter().map(GaitCycleSample::id).collect();
        SplitManifest {
            seed: self.seed,
            mode: self.mode,
            ratios: self.ratios,
            counts: [self.train.len(), self.val.len(), self.test.len()],
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }
}

/// Splits pre-built samples by `ratios = [train, val, test]` under `seed`.
pub fn split_dataset(
    samples: Vec<GaitCycleSample>,
    ratios: [f64; 3],
    seed: u64,
    mode: SplitMode,
) -> Result<DatasetSplit> {
    let subjects: Vec<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
    let assignment = assign_splits(&subjects, ratios, seed, mode)?;
    let mut slots: Vec<Option<GaitCycleSample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<GaitCycleSample> {
        idx.iter().map(|&i| slots[i].take().expect("index assigned once")).collect()
    };
    let [train_idx, val_idx, test_idx] = assignment;
    Ok(DatasetSplit {
        train: take(&train_idx),
        val: take(&val_idx),
        test: take(&test_idx),
        ratios,
        seed,
        mode,
    })
}

// ── Pipeline ────────────────────────────────────────────────────────────────

pub struct PreprocessOutput {
    pub split: DatasetSplit,
    pub norm: NormStats,
}

/// The full preprocessing pass. Cycle boundaries depend only on row counts,
/// so split membership is decided first and the normalizer is fitted on
/// training rows alone; every split is then normalized with those statistics.
pub fn preprocess_pipeline(
    recs: &[RawRecording],
    window: usize,
    ratios: [f64; 3],
    seed: u64,
    mode: SplitMode,
) -> Result<PreprocessOutput> {
    if window == 0 {
        return Err(Error::Config("cycle window must be positive".into()));
    }
    if recs.is_empty() {
        return Err(Error::Data("no recordings to preprocess".into()));
    }

    struct Entry {
        rec: usize,
        start: usize,
        cycle_index: usize,
    }
    let mut entries = Vec::new();
    let mut cycle_counter: HashMap<&str, usize> = HashMap::new();
    for (ri, rec) in recs.iter().enumerate() {
        rec.validate()?;
        let counter = cycle_counter.entry(rec.meta.subject_id.as_str()).or_insert(0);
        for c in 0..rec.n_cycles(window) {
            entries.push(Entry { rec: ri, start: c * window, cycle_index: *counter });
            *counter += 1;
        }
    }
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "no recording is long enough for a single {window}-row cycle"
        )));
    }

    let subjects: Vec<&str> = entries
        .iter()
        .map(|e| recs[e.rec].meta.subject_id.as_str())
        .collect();
    let [train_idx, val_idx, test_idx] = assign_splits(&subjects, ratios, seed, mode)?;
    if train_idx.is_empty() {
        return Err(Error::Data("training split is empty; nothing to fit on".into()));
    }

    let norm = fit_rows(
        train_idx.iter().flat_map(|&i| {
            let e = &entries[i];
            let rec = &recs[e.rec];
            (e.start..e.start + window).map(move |row| (rec, row))
        }),
        "train",
    )?;

    let build = |idx: &[usize]| -> Vec<GaitCycleSample> {
        idx.iter()
            .map(|&i| {
                let e = &entries[i];
                let rec = &recs[e.rec];
                let mut features = vec![vec![0.0; window]; SENSORS];
                for (t, row) in (e.start..e.start + window).enumerate() {
                    let raw = raw_channels(rec, row);
                    for k in 0..SENSORS {
                        let l = norm.apply(k, raw[k]);
                        let r = norm.apply(SENSORS + k, raw[SENSORS + k]);
                        features[k][t] = (l - r).abs();
                    }
                }
                GaitCycleSample {
                    subject_id: rec.meta.subject_id.clone(),
                    cycle_index: e.cycle_index,
                    label: rec.meta.label.as_u8(),
                    features,
                }
            })
            .collect()
    };

    Ok(PreprocessOutput {
        split: DatasetSplit {
            train: build(&train_idx),
            val: build(&val_idx),
            test: build(&test_idx),
            ratios,
            seed,
            mode,
        },
        norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaitdata::{generate_synthetic, SynthConfig};

    fn sample(subject: &str, cycle: usize, label: u8) -> GaitCycleSample {
        GaitCycleSample {
            subject_id: subject.into(),
            cycle_index: cycle,
            label,
            features: vec![vec![0.5; 4]; SENSORS],
        }
    }

    #[test]
    fn largest_remainder_known_cases() {
        assert_eq!(largest_remainder(10, &[0.7, 0.15, 0.15]).unwrap(), vec![7, 2, 1]);
        assert_eq!(largest_remainder(100, &[0.7, 0.15, 0.15]).unwrap(), vec![70, 15, 15]);
        assert_eq!(
            largest_remainder(20549, &[0.7, 0.15, 0.15]).unwrap(),
            vec![14384, 3083, 3082]
        );
        assert_eq!(largest_remainder(7, &[0.5, 0.5]).unwrap(), vec![4, 3]);
        assert_eq!(largest_remainder(0, &[0.5, 0.5]).unwrap(), vec![0, 0]);
    }

    #[test]
    fn largest_remainder_rejects_bad_ratios() {
        assert!(largest_remainder(10, &[]).is_err());
        assert!(largest_remainder(10, &[0.5, 0.4]).is_err());
        assert!(largest_remainder(10, &[1.5, -0.5]).is_err());
        assert!(largest_remainder(10, &[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn sample_split_has_exact_sizes_and_is_disjoint() {
        let samples: Vec<_> = (0..100).map(|i| sample(&format!("s{i}"), 0, (i % 2) as u8)).collect();
        let split = split_dataset(samples, [0.7, 0.15, 0.15], 3, SplitMode::SampleLevel).unwrap();
        assert_eq!(split.train.len(), 70);
        assert_eq!(split.val.len(), 15);
        assert_eq!(split.test.len(), 15);
        let mut ids: Vec<String> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .map(GaitCycleSample::id)
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn leftover_unit_goes_to_test_before_val() {
        // 10 samples at 70/15/15: floors are 7/1/1 and the extra goes to test
        let samples: Vec<_> = (0..10).map(|i| sample(&format!("s{i}"), 0, 0)).collect();
        let split = split_dataset(samples, [0.7, 0.15, 0.15], 0, SplitMode::SampleLevel).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (7, 1, 2));
    }

    #[test]
    fn split_is_seed_deterministic() {
        let make = || (0..50).map(|i| sample(&format!("s{i}"), 0, 0)).collect::<Vec<_>>();
        let a = split_dataset(make(), [0.7, 0.15, 0.15], 9, SplitMode::SampleLevel).unwrap();
        let b = split_dataset(make(), [0.7, 0.15, 0.15], 9, SplitMode::SampleLevel).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(make(), [0.7, 0.15, 0.15], 10, SplitMode::SampleLevel).unwrap();
        assert_ne!(a.manifest().train, c.manifest().train);
    }

    #[test]
    fn subject_split_keeps_subjects_whole() {
        let mut samples = Vec::new();
        for s in 0..12 {
            for c in 0..5 {
                samples.push(sample(&format!("subj{s}"), c, (s % 2) as u8));
            }
        }
        let split = split_dataset(samples, [0.7, 0.15, 0.15], 4, SplitMode::SubjectLevel).unwrap();
        let subjects = |v: &[GaitCycleSample]| {
            let mut s: Vec<&str> = v.iter().map(|x| x.subject_id.as_str()).collect();
            s.sort();
            s.dedup();
            s.iter().map(|x| x.to_string()).collect::<Vec<_>>()
        };
        let (tr, va, te) = (subjects(&split.train), subjects(&split.val), subjects(&split.test));
        for s in &va {
            assert!(!tr.contains(s) && !te.contains(s), "{s} leaked");
        }
        for s in &te {
            assert!(!tr.contains(s), "{s} leaked");
        }
        assert_eq!(split.train.len() + split.val.len() + split.test.len(), 60);
        // sizes approximate the ratios at subject granularity
        assert!(split.train.len() >= 40 && split.train.len() <= 45);
    }

    #[test]
    fn split_rejects_empty_and_bad_ratios() {
        assert!(split_dataset(Vec::new(), [0.7, 0.15, 0.15], 0, SplitMode::SampleLevel).is_err());
        let samples = vec![sample("a", 0, 0)];
        assert!(split_dataset(samples, [0.5, 0.2, 0.2], 0, SplitMode::SampleLevel).is_err());
    }

    #[test]
    fn normalizer_scales_and_clamps() {
        let stats = NormStats {
            min: vec![0.0; 16],
            max: {
                let mut m = vec![10.0; 16];
                m[3] = 0.0; // degenerate channel
                m
            },
            fitted_on: "train".into(),
        };
        stats.validate().unwrap();
        assert_eq!(stats.apply(0, 5.0), 0.5);
        assert_eq!(stats.apply(0, 15.0), 1.0); // clamped high
        assert_eq!(stats.apply(0, -3.0), 0.0); // clamped low
        assert_eq!(stats.apply(3, 0.0), 0.0); // degenerate -> 0
    }

    #[test]
    fn normalizer_validation_catches_bad_stats() {
        let mut stats = NormStats { min: vec![0.0; 16], max: vec![1.0; 16], fitted_on: "x".into() };
        stats.min[2] = 2.0;
        assert!(stats.validate().is_err());
        let short = NormStats { min: vec![0.0; 3], max: vec![1.0; 3], fitted_on: "x".into() };
        assert!(short.validate().is_err());
    }

    #[test]
    fn reduce_takes_absolute_differences() {
        let mut row = [0.0; 16];
        row[0] = 0.9;
        row[8] = 0.4; // pair 0: |0.9 - 0.4|
        row[7] = 0.1;
        row[15] = 0.6; // pair 7: |0.1 - 0.6|
        let out = reduce_lr(&[row]);
        assert!((out[0][0] - 0.5).abs() < 1e-15);
        assert!((out[0][7] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn segmentation_drops_incomplete_tail() {
        let series: Vec<[f64; SENSORS]> = (0..350)
            .map(|i| {
                let mut row = [0.0; SENSORS];
                row[0] = i as f64;
                row
            })
            .collect();
        let cycles = segment_cycles(&series, 160).unwrap();
        assert_eq!(cycles.len(), 2);
        assert_eq!(cycles[0][0][0], 0.0);
        assert_eq!(cycles[1][0][0], 160.0);
        assert_eq!(cycles[1][0][159], 319.0);
        assert!(segment_cycles(&series, 0).is_err());
    }

    #[test]
    fn pipeline_outputs_normalized_cycles() {
        let config = SynthConfig { n_control: 3, n_parkinsons: 3, rows_per_subject: 480, ..Default::default() };
        let recs = generate_synthetic(&config).unwrap();
        let out = preprocess_pipeline(&recs, 160, [0.7, 0.15, 0.15], 11, SplitMode::SampleLevel).unwrap();
        assert_eq!(out.norm.fitted_on, "train");
        let total = out.split.train.len() + out.split.val.len() + out.split.test.len();
        assert_eq!(total, 18); // 6 subjects x 3 cycles
        for s in out.split.train.iter().chain(&out.split.val).chain(&out.split.test) {
            s.validate().unwrap();
            assert_eq!(s.features.len(), SENSORS);
            assert_eq!(s.features[0].len(), 160);
            for row in &s.features {
                assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn pipeline_is_deterministic_and_matches_split_dataset_ids() {
        let config = SynthConfig { n_control: 2, n_parkinsons: 2, ..Default::default() };
        let recs = generate_synthetic(&config).unwrap();
        let a = preprocess_pipeline(&recs, 160, [0.7, 0.15, 0.15], 5, SplitMode::SampleLevel).unwrap();
        let b = preprocess_pipeline(&recs, 160, [0.7, 0.15, 0.15], 5, SplitMode::SampleLevel).unwrap();
        assert_eq!(a.split, b.split);
        assert_eq!(a.norm, b.norm);

        // same assignment as splitting the pre-built samples
        let all: Vec<GaitCycleSample> = {
            let c = preprocess_pipeline(&recs, 160, [1.0, 0.0, 0.0], 0, SplitMode::SampleLevel)
                .unwrap();
            c.split.train
        };
        // rebuild in entry order: subject order then cycle order
        let mut ordered = all.clone();
        ordered.sort_by_key(|s| {
            (
                recs.iter().position(|r| r.meta.subject_id == s.subject_id).unwrap(),
                s.cycle_index,
            )
        });
        let direct = split_dataset(ordered, [0.7, 0.15, 0.15], 5, SplitMode::SampleLevel).unwrap();
        let ids = |v: &[GaitCycleSample]| v.iter().map(GaitCycleSample::id).collect::<Vec<_>>();
        assert_eq!(ids(&direct.train), ids(&a.split.train));
        assert_eq!(ids(&direct.val), ids(&a.split.val));
        assert_eq!(ids(&direct.test), ids(&a.split.test));
    }

    #[test]
    fn cycle_indices_continue_across_walks_of_one_subject() {
        let config = SynthConfig { n_control: 1, n_parkinsons: 0, rows_per_subject: 320, ..Default::default() };
        let mut recs = generate_synthetic(&config).unwrap();
        // a second walk of the same subject
        let second = recs[0].clone();
        recs.push(second);
        let out = preprocess_pipeline(&recs, 160, [1.0, 0.0, 0.0], 0, SplitMode::SampleLevel).unwrap();
        let mut cycles: Vec<usize> = out.split.train.iter().map(|s| s.cycle_index).collect();
        cycles.sort_unstable();
        assert_eq!(cycles, vec![0, 1, 2, 3]);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let samples = vec![sample("a", 0, 1), sample("b", 3, 0)];
        write_samples_jsonl(&path, &samples).unwrap();
        let back = read_samples_jsonl(&path).unwrap();
        assert_eq!(samples, back);
    }

    #[test]
    fn sample_line_validation() {
        assert!(parse_sample_line("not json").is_err());
        let bad_label = r#"{"subject_id":"a","cycle_index":0,"label":2,"features":[[0.1]]}"#;
        assert!(parse_sample_line(bad_label).is_err());
        let ragged = r#"{"subject_id":"a","cycle_index":0,"label":1,"features":[[0.1,0.2],[0.3]]}"#;
        assert!(parse_sample_line(ragged).is_err());
        let empty = r#"{"subject_id":"a","cycle_index":0,"label":1,"features":[]}"#;
        assert!(parse_sample_line(empty).is_err());
        let ok = r#"{"subject_id":"a","cycle_index":0,"label":1,"features":[[0.1],[0.2],[0.3],[0.4],[0.5],[0.6],[0.7],[0.8]]}"#;
        assert_eq!(parse_sample_line(ok).unwrap().label, 1);
    }

    #[test]
    fn default_graph_shape() {
        let g = default_sensor_graph();
        assert_eq!(g.n_nodes, 8);
        assert_eq!(g.edges().len(), 11);
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(6), &[5, 7]);
        // every node is connected
        assert!((0..8).all(|i| !g.neighbors(i).is_empty()));
    }

    #[test]
    fn graph_validation() {
        assert!(SensorGraph::from_edges(0, vec![]).is_err());
        assert!(SensorGraph::from_edges(3, vec![(0, 3)]).is_err());
        assert!(SensorGraph::from_edges(3, vec![(1, 1)]).is_err());
        let g = SensorGraph::from_edges(3, vec![(1, 0), (0, 1), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn graph_serde_round_trip() {
        let g = default_sensor_graph();
        let json = serde_json::to_string(&g).unwrap();
        let back: SensorGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(g, back);
        let bad = r#"{"n_nodes":2,"edges":[[0,5]]}"#;
        assert!(serde_json::from_str::<SensorGraph>(bad).is_err());
    }

    #[test]
    fn edge_list_parsing() {
        let edges = parse_edge_list("0 1\n\n 1\t2 \n").unwrap();
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
        assert!(parse_edge_list("0\n").is_err());
        assert!(parse_edge_list("0 1 2\n").is_err());
        let err = parse_edge_list("0 1\nx 2\n").unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
    }
}
