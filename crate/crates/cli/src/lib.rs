//! Config-driven pipeline commands behind the `cgg` binary.
//!
//! Every command is a pure function of one JSON [`RunConfig`] plus the input
//! files it names: reruns with the same config and files produce identical
//! outputs, and the effective (post-override) config is echoed into the
//! output directory for provenance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cgg_core::evaluation::{evaluate, node_importance, MetricsReport, NodeImportance};
use cgg_core::gaitdata::{
    derive_manifest, generate_synthetic, load_catalog, load_manifest, save_manifest,
    subject_id_of, write_dataset, ClassLabel, Manifest, SynthConfig,
};
use cgg_core::neuralcore::gradcheck::{run_gradient_checks, GradCheckReport};
use cgg_core::neuralcore::{ModelConfig, ModelParams};
use cgg_core::preprocess::{
    default_sensor_graph, load_edge_list, preprocess_pipeline, read_samples_jsonl,
    write_samples_jsonl, GaitCycleSample, SensorGraph, SplitMode,
};
use cgg_core::training::checkpoint::{load_checkpoint, save_checkpoint};
use cgg_core::training::{train, TrainConfig};
use cgg_core::{Error, Result};

// ── Run configuration ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of raw recordings; `synth` writes here, `preprocess` reads.
    pub data_dir: PathBuf,
    /// Label manifest; defaults to `<data_dir>/manifest.json`.
    pub manifest: Option<PathBuf>,
    /// Every artifact a command produces lands here.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { data_dir: "data".into(), manifest: None, out_dir: "out".into() }
    }
}

impl PathsConfig {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.data_dir.join("manifest.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Rows per gait cycle; must match `model.seq_len` for training.
    pub window: usize,
    /// Train/val/test fractions, summing to one.
    pub ratios: [f64; 3],
    pub split_mode: SplitMode,
    pub seed: u64,
    /// Optional edge-list file replacing the default sensor adjacency.
    pub adjacency: Option<PathBuf>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            window: 160,
            ratios: [0.70, 0.15, 0.15],
            split_mode: SplitMode::SampleLevel,
            seed: 1,
            adjacency: None,
        }
    }
}

/// The optimizer settings plus the parameter-initialization seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle: bool,
    pub shuffle_seed: u64,
    pub dropout_seed: u64,
    pub init_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            shuffle: t.shuffle,
            shuffle_seed: t.shuffle_seed,
            dropout_seed: t.dropout_seed,
            init_seed: 3,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            shuffle: self.shuffle,
            shuffle_seed: self.shuffle_seed,
            dropout_seed: self.dropout_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Probability at or above which a sample is called a patient.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Explicit `subject#cycle` ids; empty means the first `max_samples`
    /// test samples.
    pub samples: Vec<String>,
    pub max_samples: usize,
    /// Also writes mean importance grouped by the severity metadata.
    pub by_severity: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { samples: Vec::new(), max_samples: 8, by_severity: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seeds_per_layer: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { seeds_per_layer: 10 }
    }
}

/// One declarative file drives every command; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub explain: ExplainConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.to_train_config().validate()?;
        if self.preprocess.window == 0 {
            return Err(Error::Config("preprocess.window must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Config(format!(
                "eval.threshold {} outside [0, 1]",
                self.eval.threshold
            )));
        }
        if self.gradcheck.seeds_per_layer == 0 {
            return Err(Error::Config("gradcheck.seeds_per_layer must be positive".into()));
        }
        Ok(())
    }

    pub fn to_train_config(&self) -> TrainConfig {
        self.train.to_train_config()
    }
}

// ── Flag overrides ──────────────────────────────────────────────────────────

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Master seed `m`: the data seeds (synthesis, split, shuffle) become
    /// `m`, the init seed `m + 1`, the dropout seed `m + 2`.
    pub seed: Option<u64>,
    pub adjacency: Option<PathBuf>,
    pub split_mode: Option<SplitMode>,
    pub threshold: Option<f64>,
}

impl RunConfig {
    pub fn apply(&mut self, overrides: &Overrides) -> Result<()> {
        if let Some(out) = &overrides.out {
            self.paths.out_dir = out.clone();
        }
        if let Some(seed) = overrides.seed {
            self.synth.seed = seed;
            self.preprocess.seed = seed;
            self.train.shuffle_seed = seed;
            self.train.init_seed = seed.wrapping_add(1);
            self.train.dropout_seed = seed.wrapping_add(2);
        }
        if let Some(adj) = &overrides.adjacency {
            self.preprocess.adjacency = Some(adj.clone());
        }
        if let Some(mode) = overrides.split_mode {
            self.preprocess.split_mode = mode;
        }
        if let Some(threshold) = overrides.threshold {
            self.eval.threshold = threshold;
        }
        self.validate()
    }
}

// ── Shared plumbing ─────────────────────────────────────────────────────────

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Config(format!("{what} not found at {}", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::Config(format!("{what} not found at {}", path.display())));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Creates the output directory and echoes the effective config into it.
fn prepare_out_dir(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.paths.out_dir)
        .map_err(|e| Error::io(&config.paths.out_dir, e))?;
    write_json(&config.paths.out_dir.join("effective_config.json"), config)
}

fn load_graph(config: &RunConfig) -> Result<SensorGraph> {
    match &config.preprocess.adjacency {
        Some(path) => load_edge_list(path, config.model.n_nodes),
        None => Ok(default_sensor_graph()),
    }
}

fn checkpoint_path(config: &RunConfig, overrides: &Overrides) -> PathBuf {
    overrides
        .checkpoint
        .clone()
        .unwrap_or_else(|| config.paths.out_dir.join("checkpoint.bin"))
}

fn read_split(config: &RunConfig, name: &str) -> Result<Vec<GaitCycleSample>> {
    read_samples_jsonl(&config.paths.out_dir.join(name))
}

// ── Commands ────────────────────────────────────────────────────────────────

/// Generates the synthetic dataset into `paths.data_dir`.
pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    prepare_out_dir(config)?;
    let recs = generate_synthetic(&config.synth)?;
    let manifest_path = write_dataset(&config.paths.data_dir, &recs)?;
    let patients = recs.iter().filter(|r| r.meta.label == ClassLabel::Pd).count();
    log::info!(
        "wrote {} recordings ({} control, {} patient) under {}",
        recs.len(),
        recs.len() - patients,
        patients,
        config.paths.data_dir.display()
    );
    println!(
        "synth: {} subjects ({} control, {} patient), manifest {}",
        recs.len(),
        recs.len() - patients,
        patients,
        manifest_path.display()
    );
    Ok(())
}

/// A manifest for a bare directory of recordings, from the public naming
/// scheme (`GaPt03_01.txt` and friends). Severities stay null.
fn manifest_from_dir(dir: &Path) -> Result<Manifest> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".txt") {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::Data(format!("no .txt recordings under {}", dir.display())));
    }
    derive_manifest(&names)
}

/// Raw recordings -> normalized graph samples in three JSONL splits.
pub fn cmd_preprocess(config: &RunConfig) -> Result<()> {
    let manifest_path = config.paths.manifest_path();
    require_dir(&config.paths.data_dir, "data directory")?;
    if config.paths.manifest.is_some() {
        require_file(&manifest_path, "manifest")?;
    }
    prepare_out_dir(config)?;

    let manifest = if manifest_path.is_file() {
        load_manifest(&manifest_path)?
    } else {
        // bare directory: labels come from the filenames; keep the result
        // next to the other artifacts for provenance
        let derived = manifest_from_dir(&config.paths.data_dir)?;
        save_manifest(&config.paths.out_dir.join("derived_manifest.json"), &derived)?;
        log::info!("no manifest found, derived one for {} recordings", derived.len());
        derived
    };
    let recs = load_catalog(&config.paths.data_dir, &manifest)?;
    let out = preprocess_pipeline(
        &recs,
        config.preprocess.window,
        config.preprocess.ratios,
        config.preprocess.seed,
        config.preprocess.split_mode,
    )?;

    let dir = &config.paths.out_dir;
    write_samples_jsonl(&dir.join("train.jsonl"), &out.split.train)?;
    write_samples_jsonl(&dir.join("val.jsonl"), &out.split.val)?;
    write_samples_jsonl(&dir.join("test.jsonl"), &out.split.test)?;
    write_json(&dir.join("norm_stats.json"), &out.norm)?;
    write_json(&dir.join("split_manifest.json"), &out.split.manifest())?;
    println!(
        "preprocess: {} cycles from {} recordings -> train {}, val {}, test {}",
        out.split.train.len() + out.split.val.len() + out.split.test.len(),
        recs.len(),
        out.split.train.len(),
        out.split.val.len(),
        out.split.test.len()
    );
    Ok(())
}

/// Trains on the preprocessed splits; writes the checkpoint and history.
pub fn cmd_train(config: &RunConfig, overrides: &Overrides) -> Result<()> {
    let dir = &config.paths.out_dir;
    for name in ["train.jsonl", "val.jsonl", "norm_stats.json"] {
        require_file(&dir.join(name), name)?;
    }
    if let Some(adj) = &config.preprocess.adjacency {
        require_file(adj, "adjacency file")?;
    }
    prepare_out_dir(config)?;

    if config.model.seq_len != config.preprocess.window {
        return Err(Error::Config(format!(
            "model.seq_len {} does not match preprocess.window {}",
            config.model.seq_len, config.preprocess.window
        )));
    }
    let train_set = read_split(config, "train.jsonl")?;
    let val_set = read_split(config, "val.jsonl")?;
    let norm_text = std::fs::read_to_string(dir.join("norm_stats.json"))
        .map_err(|e| Error::io(&dir.join("norm_stats.json"), e))?;
    let norm = serde_json::from_str(&norm_text).map_err(|e| Error::Config(e.to_string()))?;
    let graph = load_graph(config)?;

    let params = ModelParams::init(&config.model, config.train.init_seed)?;
    let outcome = train(params, &train_set, &val_set, &graph, &config.to_train_config())?;

    // the final-epoch model is the primary artifact; the lowest-val-loss
    // model is kept alongside as a convenience
    let ckpt_path = checkpoint_path(config, overrides);
    save_checkpoint(&ckpt_path, &outcome.params, &norm, &graph)?;
    save_checkpoint(&dir.join("checkpoint_best.bin"), &outcome.best_params, &norm, &graph)?;
    write_json(&dir.join("history.json"), &outcome.history)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "train: {} epochs, final train loss {:.6}, best epoch {} -> {}",
        outcome.history.len(),
        last.train_loss,
        outcome.best_epoch,
        ckpt_path.display()
    );
    Ok(())
}

/// Evaluates a checkpoint on the held-out test split.
pub fn cmd_evaluate(config: &RunConfig, overrides: &Overrides) -> Result<MetricsReport> {
    let ckpt_path = checkpoint_path(config, overrides);
    require_file(&ckpt_path, "checkpoint")?;
    require_file(&config.paths.out_dir.join("test.jsonl"), "test.jsonl")?;
    prepare_out_dir(config)?;

    let ckpt = load_checkpoint(&ckpt_path)?;
    let test_set = read_split(config, "test.jsonl")?;
    let report = evaluate(&ckpt.params, &test_set, &ckpt.graph, config.eval.threshold)?;
    write_json(&config.paths.out_dir.join("metrics.json"), &report)?;
    println!(
        "evaluate: n {} accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} auc {}",
        report.n,
        report.accuracy,
        report.precision,
        report.recall,
        report.f1,
        report.auc.map_or("n/a".to_string(), |a| format!("{a:.4}")),
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeverityGroup {
    pub count: usize,
    pub mean_importance: Vec<f64>,
}

/// Mean importance per sensor for each severity value present.
pub fn severity_summary(
    manifest_path: &Path,
    explained: &[NodeImportance],
) -> Result<BTreeMap<String, SeverityGroup>> {
    let manifest = load_manifest(manifest_path)?;
    let mut severity_of: BTreeMap<String, Option<f64>> = BTreeMap::new();
    for (file, entry) in &manifest {
        severity_of
            .entry(subject_id_of(file))
            .or_insert_with(|| entry.severity.map(|s| s.value()));
    }
    let mut groups: BTreeMap<String, SeverityGroup> = BTreeMap::new();
    for item in explained {
        let key = match severity_of.get(&item.subject_id) {
            Some(Some(v)) => {
                if v.fract() == 0.0 {
                    format!("{v:.0}")
                } else {
                    format!("{v}")
                }
            }
            Some(None) => "none".to_string(),
            None => {
                return Err(Error::Data(format!(
                    "subject {} missing from the manifest",
                    item.subject_id
                )))
            }
        };
        let group = groups.entry(key).or_insert_with(|| SeverityGroup {
            count: 0,
            mean_importance: vec![0.0; item.importance.len()],
        });
        group.count += 1;
        for (acc, &v) in group.mean_importance.iter_mut().zip(&item.importance) {
            *acc += v;
        }
    }
    for group in groups.values_mut() {
        for v in &mut group.mean_importance {
            *v /= group.count as f64;
        }
    }
    Ok(groups)
}

/// Writes per-sample sensor importances (and optionally the severity
/// grouping) for test samples.
pub fn cmd_explain(config: &RunConfig, overrides: &Overrides) -> Result<Vec<NodeImportance>> {
    let ckpt_path = checkpoint_path(config, overrides);
    require_file(&ckpt_path, "checkpoint")?;
    require_file(&config.paths.out_dir.join("test.jsonl"), "test.jsonl")?;
    let manifest_path = config.paths.manifest_path();
    if config.explain.by_severity {
        require_file(&manifest_path, "manifest")?;
    }
    prepare_out_dir(config)?;

    let ckpt = load_checkpoint(&ckpt_path)?;
    let test_set = read_split(config, "test.jsonl")?;
    let chosen: Vec<&GaitCycleSample> = if config.explain.samples.is_empty() {
        test_set.iter().take(config.explain.max_samples).collect()
    } else {
        config
            .explain
            .samples
            .iter()
            .map(|id| {
                test_set
                    .iter()
                    .find(|s| &s.id() == id)
                    .ok_or_else(|| Error::Data(format!("sample {id} not in test.jsonl")))
            })
            .collect::<Result<_>>()?
    };
    if chosen.is_empty() {
        return Err(Error::Eval("no samples to explain".into()));
    }

    let mut explained = Vec::with_capacity(chosen.len());
    for sample in chosen {
        explained.push(node_importance(&ckpt.params, sample, &ckpt.graph)?);
    }

    let mut lines = String::new();
    for item in &explained {
        lines.push_str(&serde_json::to_string(item).map_err(|e| Error::Config(e.to_string()))?);
        lines.push('\n');
    }
    let out_path = config.paths.out_dir.join("explain.jsonl");
    std::fs::write(&out_path, lines).map_err(|e| Error::io(&out_path, e))?;

    if config.explain.by_severity {
        let groups = severity_summary(&manifest_path, &explained)?;
        write_json(&config.paths.out_dir.join("severity_summary.json"), &groups)?;
    }
    println!("explain: {} samples -> {}", explained.len(), out_path.display());
    Ok(explained)
}

/// Runs the finite-difference suite; errors (nonzero exit) on any failure.
pub fn cmd_gradcheck(config: &RunConfig) -> Result<GradCheckReport> {
    prepare_out_dir(config)?;
    let report = run_gradient_checks(config.gradcheck.seeds_per_layer)?;
    write_json(&config.paths.out_dir.join("gradcheck.json"), &report)?;
    let worst = report.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    println!(
        "gradcheck: {} checks, max rel err {:.3e}, {}",
        report.entries.len(),
        worst,
        if report.passed { "all passed" } else { "FAILED" }
    );
    if !report.passed {
        return Err(Error::Eval("gradient check failed; see gradcheck.json".into()));
    }
    Ok(report)
}
