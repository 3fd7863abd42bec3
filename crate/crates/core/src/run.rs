//! Run configuration, training orchestration, checkpoints and the metrics
//! stream.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    self, DatasetManifest, FolderCodes, LabeledDataset, PreprocessDescriptor, SdnetOptions, Structure, SyntheticSpec,
    TaskShape,
};
use crate::dbn::{self, DbnModel, EvalReport, FineTuneReport, LayerStats, TrainConfig};
use crate::error::{Error, Result};
use crate::structure::{EpochRecord, EventKind, StructuralEvent};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const METRICS_HEADER: &str =
    "kind,layer,epoch,reconstruction_error,mean_energy,wd_total,hidden_count,event,neuron";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// SDNET2018-style image tree.
    Sdnet {
        root: PathBuf,
        #[serde(default)]
        codes: FolderCodes,
        /// Used when the tree has no `train/` + `test/` directories.
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Synthetic(SyntheticSpec),
}

fn default_test_fraction() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task: TaskShape,
    /// Restrict to one structure type; `None` uses all three.
    pub structure: Option<Structure>,
    pub fine_tune: bool,
    /// `source,label` CSV applied to the loaded data.
    pub relabels: Option<PathBuf>,
    /// Optional dataset cache file, rebuilt when the descriptor changes.
    pub cache: Option<PathBuf>,
    pub preprocess: PreprocessDescriptor,
    pub train: TrainConfig,
    pub data: DataSource,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("run"),
            task: TaskShape::Binary,
            structure: None,
            fine_tune: true,
            relabels: None,
            cache: None,
            preprocess: PreprocessDescriptor::default(),
            train: TrainConfig::default(),
            data: DataSource::Synthetic(SyntheticSpec::default()),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            field: "config",
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format {
            what: "config",
            reason: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match &self.data {
            DataSource::Synthetic(spec) => spec.validate()?,
            DataSource::Sdnet { test_fraction, .. } => {
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(Error::InvalidConfig {
                        field: "test_fraction",
                        reason: format!("must lie in (0, 1), got {test_fraction}"),
                    });
                }
                self.preprocess.validate()?;
            }
        }
        Ok(())
    }

    /// The preprocessing actually applied. Synthetic data is generated
    /// directly at its own side length in grayscale.
    pub fn effective_descriptor(&self) -> PreprocessDescriptor {
        match &self.data {
            DataSource::Synthetic(spec) => PreprocessDescriptor {
                target_side: spec.side,
                ..Default::default()
            },
            DataSource::Sdnet { .. } => self.preprocess.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub manifest: DatasetManifest,
    pub relabeled: usize,
}

fn cached_or<F>(config: &RunConfig, build: F) -> Result<RunData>
where
    F: FnOnce() -> Result<RunData>,
{
    let Some(cache) = &config.cache else {
        return build();
    };
    let descriptor = config.effective_descriptor();
    let (train_path, test_path) = (cache.with_extension("train.bin"), cache.with_extension("test.bin"));
    if train_path.is_file() && test_path.is_file() {
        if let (Some(train), Some(test)) = (
            dataset::read_cache(&train_path, &descriptor)?,
            dataset::read_cache(&test_path, &descriptor)?,
        ) {
            let manifest = DatasetManifest::from_splits(&train, &test);
            return Ok(RunData {
                train,
                test,
                manifest,
                relabeled: 0,
            });
        }
        log::info!("dataset cache built with a different descriptor, rebuilding");
    }
    let data = build()?;
    dataset::write_cache(&train_path, &data.train)?;
    dataset::write_cache(&test_path, &data.test)?;
    Ok(data)
}

/// Loads or generates the run's train/test data and applies relabels.
pub fn load_data(config: &RunConfig) -> Result<RunData> {
    let mut data = cached_or(config, || match &config.data {
        DataSource::Synthetic(spec) => {
            let mut all = dataset::generate_synthetic(spec, config.task)?;
            if let Some(s) = config.structure {
                all.samples.retain(|x| x.structure == s);
            }
            let (train, test) = dataset::split(&all, spec.test_fraction, spec.seed)?;
            let manifest = DatasetManifest::from_splits(&train, &test);
            Ok(RunData {
                train,
                test,
                manifest,
                relabeled: 0,
            })
        }
        DataSource::Sdnet {
            root,
            codes,
            test_fraction,
        } => {
            let options = SdnetOptions {
                subset: config.structure,
                task: config.task,
                descriptor: config.preprocess.clone(),
                codes: codes.clone(),
            };
            let loaded = dataset::load_sdnet(root, &options)?;
            let (train, test) = if loaded.test.is_empty() {
                dataset::split(&loaded.train, *test_fraction, config.seed)?
            } else {
                (loaded.train, loaded.test)
            };
            Ok(RunData {
                train,
                test,
                manifest: loaded.manifest,
                relabeled: 0,
            })
        }
    })?;
    if let Some(path) = &config.relabels {
        let relabels = dataset::read_relabels(path)?;
        data.relabeled = data.train.apply_relabels(&relabels)? + data.test.apply_relabels(&relabels)?;
        log::info!("relabel file changed {} samples", data.relabeled);
    }
    if data.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    Ok(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub train_misclassified: usize,
    pub train_accuracy: f64,
    pub test_misclassified: Option<usize>,
    pub test_accuracy: Option<f64>,
    /// Whether the counts above include the fine-tune override table.
    pub fine_tuned: bool,
    pub fine_tune: Option<FineTuneReport>,
    pub metrics_schema: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RunConfig,
    pub descriptor: PreprocessDescriptor,
    pub model: DbnModel,
    pub events: Vec<StructuralEvent>,
    pub layer_stats: LayerStats,
    pub metrics: FinalMetrics,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format {
                what: "checkpoint",
                reason: "missing format_version".into(),
            })? as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let checkpoint: Checkpoint = serde_json::from_value(value)?;
        checkpoint.model.validate()?;
        Ok(checkpoint)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Fails with [`Error::DescriptorMismatch`] unless `data` was
    /// preprocessed exactly as this model's training data.
    pub fn check_descriptor(&self, data: &PreprocessDescriptor) -> Result<()> {
        if &self.descriptor != data {
            return Err(Error::DescriptorMismatch {
                expected: self.descriptor.to_string(),
                actual: data.to_string(),
            });
        }
        Ok(())
    }
}

/// CSV metrics stream: one `epoch` row per (layer, epoch) and one `event`
/// row per structural edit, in chronological order.
pub fn metrics_csv(epochs: &[EpochRecord], events: &[StructuralEvent]) -> String {
    let mut by_slot: BTreeMap<(usize, usize), Vec<&StructuralEvent>> = BTreeMap::new();
    for e in events {
        by_slot.entry((e.layer, e.epoch)).or_default().push(e);
    }
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    let event_row = |out: &mut String, e: &StructuralEvent| {
        let _ = writeln!(out, "event,{},{},,,,,{},{}", e.layer, e.epoch, e.kind.as_str(), e.neuron);
    };
    let mut current_layer = 0;
    for r in epochs {
        if r.layer != current_layer {
            current_layer = r.layer;
            for e in by_slot.get(&(r.layer, 0)).into_iter().flatten() {
                event_row(&mut out, e);
            }
        }
        let _ = writeln!(
            out,
            "epoch,{},{},{},{},{},{},,",
            r.layer, r.epoch, r.reconstruction_error, r.mean_energy, r.wd_total, r.hidden_count
        );
        for e in by_slot.get(&(r.layer, r.epoch)).into_iter().flatten() {
            event_row(&mut out, e);
        }
    }
    out
}

/// Layer sizes, event timeline and override-table size.
pub fn structure_summary(checkpoint: &Checkpoint) -> String {
    let model = &checkpoint.model;
    let mut out = String::new();
    let _ = writeln!(out, "input: {} ({})", model.input_dim, checkpoint.descriptor);
    let _ = writeln!(out, "layers: {}", model.layers.len());
    for (l, layer) in model.layers.iter().enumerate() {
        let _ = writeln!(out, "  layer {}: {} -> {} neurons", l + 1, layer.n_visible(), layer.n_hidden());
    }
    let _ = writeln!(out, "classes: {}", model.label_names.join(", "));
    let _ = writeln!(out, "overrides: {}", model.overrides.len());
    let count = |k: EventKind| checkpoint.events.iter().filter(|e| e.kind == k).count();
    let _ = writeln!(
        out,
        "events: {} generate, {} annihilate, {} layer",
        count(EventKind::Generate),
        count(EventKind::Annihilate),
        count(EventKind::Layer)
    );
    for e in &checkpoint.events {
        let _ = writeln!(out, "  layer {} epoch {}: {} {}", e.layer, e.epoch, e.kind.as_str(), e.neuron);
    }
    out
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub checkpoint: Checkpoint,
    pub metrics_csv: String,
    pub train_report: EvalReport,
    pub test_report: Option<EvalReport>,
    pub data: RunData,
}

/// Load data, build the adaptive DBN, fit the head, optionally fine-tune,
/// and evaluate on both splits. Writes nothing.
pub fn run_training(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let data = load_data(config)?;
    data.train.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let inputs = data.train.inputs();
    let labels = data.train.labels();
    let (mut model, log) =
        dbn::train_adaptive(inputs.view(), &labels, data.train.label_names.clone(), &config.train, &mut rng)?;

    let mut fine_tune = None;
    if config.fine_tune {
        let (tuned, report) = model.fine_tune(inputs.view(), &labels)?;
        log::info!(
            "fine-tune: {} overrides, train errors {} -> {}",
            report.overrides_added,
            report.misclassified_before,
            report.misclassified_after
        );
        model = tuned;
        fine_tune = Some(report);
    }
    let train_report = model.evaluate(inputs.view(), &labels, config.fine_tune)?;
    let test_report = if data.test.is_empty() {
        None
    } else {
        Some(model.evaluate(data.test.inputs().view(), &data.test.labels(), config.fine_tune)?)
    };
    let metrics = FinalMetrics {
        train_misclassified: train_report.incorrect,
        train_accuracy: train_report.accuracy,
        test_misclassified: test_report.as_ref().map(|r| r.incorrect),
        test_accuracy: test_report.as_ref().map(|r| r.accuracy),
        fine_tuned: config.fine_tune,
        fine_tune,
        metrics_schema: METRICS_SCHEMA_VERSION,
    };
    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        config: config.clone(),
        descriptor: data.train.descriptor.clone(),
        model,
        events: log.events.clone(),
        layer_stats: log.layer_stats.clone(),
        metrics,
    };
    Ok(RunOutput {
        checkpoint,
        metrics_csv: metrics_csv(&log.epochs, &log.events),
        train_report,
        test_report,
        data,
    })
}

/// Output files written by [`write_outputs`].
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "structure.txt";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";

#[derive(Serialize)]
struct ReportDocument<'a> {
    train: &'a EvalReport,
    test: Option<&'a EvalReport>,
}

/// Refuses to touch an existing output unless `force`.
pub fn check_overwrite(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    if let Some(existing) = paths.iter().find(|p| p.exists()) {
        return Err(Error::InvalidConfig {
            field: "out_dir",
            reason: format!("{} already exists (use --force to overwrite)", existing.display()),
        });
    }
    Ok(())
}

pub fn write_outputs(out_dir: &Path, output: &RunOutput, force: bool) -> Result<()> {
    let names = [CHECKPOINT_FILE, METRICS_FILE, CONFIG_FILE, SUMMARY_FILE, REPORT_TEXT_FILE, REPORT_JSON_FILE];
    check_overwrite(&names.map(|n| out_dir.join(n)), force)?;
    fs::create_dir_all(out_dir)?;
    let io = crate::io::write_atomic;
    io(&out_dir.join(CONFIG_FILE), output.checkpoint.config.to_toml()?.as_bytes())?;
    io(&out_dir.join(METRICS_FILE), output.metrics_csv.as_bytes())?;
    io(&out_dir.join(SUMMARY_FILE), structure_summary(&output.checkpoint).as_bytes())?;
    let table = match &output.test_report {
        Some(test) => dbn::render_table(Some(&output.train_report), test),
        None => dbn::render_table(None, &output.train_report),
    };
    io(&out_dir.join(REPORT_TEXT_FILE), table.as_bytes())?;
    let doc = ReportDocument {
        train: &output.train_report,
        test: output.test_report.as_ref(),
    };
    io(&out_dir.join(REPORT_JSON_FILE), serde_json::to_string_pretty(&doc)?.as_bytes())?;
    // checkpoint last: its presence marks a complete run
    output.checkpoint.save(&out_dir.join(CHECKPOINT_FILE))
}

/// Probe helper shared by tests and the CLI: class probabilities for every row.
pub fn classify_rows(model: &DbnModel, inputs: &Array2<f64>) -> Result<Vec<ndarray::Array1<f64>>> {
    inputs.rows().into_iter().map(|r| model.classify(r)).collect()
}
