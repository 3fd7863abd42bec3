//! Deep Belief Network stack with automatic layer generation, a softmax head,
//! and the pattern-override fine-tuning pass.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rbm::{self, CdConfig, RbmParameters};
use crate::structure::{self, EpochRecord, EventKind, StructuralEvent, StructureConfig};

/// Binarized top-layer activation pattern mapped to a forced label.
pub type OverrideTable = BTreeMap<String, usize>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbnModel {
    pub input_dim: usize,
    pub layers: Vec<RbmParameters>,
    /// `M × J_top`
    pub head_weights: Array2<f64>,
    pub head_bias: Array1<f64>,
    pub label_names: Vec<String>,
    #[serde(default)]
    pub overrides: OverrideTable,
}

/// Output of a single-sample prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Array1<f64>,
    pub overridden: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.5,
            batch_size: 64,
        }
    }
}

impl DbnModel {
    /// Builds a model over trained layers with a zero-initialized head.
    pub fn from_layers(layers: Vec<RbmParameters>, label_names: Vec<String>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layer stack"));
        }
        if label_names.len() < 2 {
            return Err(Error::InvalidConfig {
                field: "label_names",
                reason: "need at least 2 categories".into(),
            });
        }
        let top = layers.last().expect("non-empty").n_hidden();
        let m = label_names.len();
        let model = Self {
            input_dim: layers[0].n_visible(),
            layers,
            head_weights: Array2::zeros((m, top)),
            head_bias: Array1::zeros(m),
            label_names,
            overrides: OverrideTable::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.n_hidden()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Empty("layer stack"));
        }
        check_len("input", self.input_dim, self.layers[0].n_visible())?;
        for pair in self.layers.windows(2) {
            check_len("layer chaining", pair[0].n_hidden(), pair[1].n_visible())?;
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        let top = self.layers.last().expect("non-empty").n_hidden();
        check_len("head rows", self.n_classes(), self.head_weights.nrows())?;
        check_len("head columns", top, self.head_weights.ncols())?;
        check_len("head bias", self.n_classes(), self.head_bias.len())?;
        if self.n_classes() < 2 {
            return Err(Error::InvalidConfig {
                field: "label_names",
                reason: "need at least 2 categories".into(),
            });
        }
        if let Some((_, &label)) = self.overrides.iter().find(|(_, &l)| l >= self.n_classes()) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.n_classes(),
            });
        }
        Ok(())
    }

    /// Mean-field activations `h^1 … h^L` for one input.
    pub fn propagate(&self, v: ArrayView1<f64>) -> Result<Vec<Array1<f64>>> {
        check_len("input", self.input_dim, v.len())?;
        let mut out: Vec<Array1<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = out.last().map_or(v, |h| h.view());
            let h = rbm::hidden_conditional(input, layer)?;
            out.push(h);
        }
        Ok(out)
    }

    /// Top-layer activations for every row of `inputs`.
    pub fn features(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_len("input", self.input_dim, inputs.ncols())?;
        let mut h = inputs.to_owned();
        for layer in &self.layers {
            h = rbm::hidden_probs(h.view(), layer)?;
        }
        Ok(h)
    }

    fn head_probs(&self, top: ArrayView1<f64>) -> Array1<f64> {
        softmax(self.head_weights.dot(&top) + &self.head_bias)
    }

    /// Softmax class probabilities, ignoring the override table.
    pub fn classify(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        let top = self.features(v.insert_axis(Axis(0)))?;
        Ok(self.head_probs(top.row(0)))
    }

    pub fn predict(&self, v: ArrayView1<f64>, use_fine_tune: bool) -> Result<Prediction> {
        let top = self.features(v.insert_axis(Axis(0)))?;
        Ok(self.predict_from_top(top.row(0), use_fine_tune))
    }

    pub fn predict_batch(&self, inputs: ArrayView2<f64>, use_fine_tune: bool) -> Result<Vec<Prediction>> {
        let top = self.features(inputs)?;
        Ok(top
            .rows()
            .into_iter()
            .map(|row| self.predict_from_top(row, use_fine_tune))
            .collect())
    }

    fn predict_from_top(&self, top: ArrayView1<f64>, use_fine_tune: bool) -> Prediction {
        let probabilities = self.head_probs(top);
        let forced = if use_fine_tune && !self.overrides.is_empty() {
            self.overrides.get(&pattern_key(top)).copied()
        } else {
            None
        };
        match forced {
            Some(label) => Prediction {
                label,
                probabilities,
                overridden: true,
            },
            None => Prediction {
                label: argmax(probabilities.view()),
                probabilities,
                overridden: false,
            },
        }
    }

    /// Trains the softmax head by mini-batch gradient descent on the
    /// cross-entropy of the frozen stack's top-layer features.
    pub fn train_head<R: Rng + ?Sized>(
        &self,
        inputs: ArrayView2<f64>,
        labels: &[usize],
        config: &HeadConfig,
        rng: &mut R,
    ) -> Result<DbnModel> {
        if inputs.nrows() == 0 {
            return Err(Error::Empty("dataset"));
        }
        check_len("labels", inputs.nrows(), labels.len())?;
        let m = self.n_classes();
        if let Some(&label) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::LabelOutOfRange { label, classes: m });
        }
        let features = self.features(inputs)?;
        let mut model = self.clone();
        if config.learning_rate == 0.0 || config.epochs == 0 {
            return Ok(model);
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        for _ in 0..config.epochs {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
            for chunk in order.chunks(config.batch_size.max(1)) {
                let x = features.select(Axis(0), chunk);
                let logits = x.dot(&model.head_weights.t()) + &model.head_bias;
                let mut delta = logits;
                for (mut row, &idx) in delta.rows_mut().into_iter().zip(chunk) {
                    let p = softmax(row.to_owned());
                    row.assign(&p);
                    row[labels[idx]] -= 1.0;
                }
                let scale = config.learning_rate / chunk.len() as f64;
                model.head_weights.scaled_add(-scale, &delta.t().dot(&x));
                model.head_bias.scaled_add(-scale, &delta.sum_axis(Axis(0)));
            }
            if !model.head_weights.iter().chain(&model.head_bias).all(|x| x.is_finite()) {
                return Err(Error::NonFinite("head"));
            }
        }
        Ok(model)
    }

    /// Adds a freshly initialized RBM on top of the stack and resets the head
    /// for the new top dimension.
    pub fn append_layer<R: Rng + ?Sized>(&self, initial_hidden: usize, max_layers: usize, rng: &mut R) -> Result<DbnModel> {
        if self.layers.len() >= max_layers {
            return Err(Error::LayerCap { max_layers });
        }
        if initial_hidden == 0 {
            return Err(Error::InvalidConfig {
                field: "initial_hidden",
                reason: "must be at least 1".into(),
            });
        }
        let top = self.layers.last().expect("non-empty").n_hidden();
        let mut layers = self.layers.clone();
        layers.push(RbmParameters::initialize(top, initial_hidden, rng));
        DbnModel::from_layers(layers, self.label_names.clone())
    }

    /// Adds override entries so that every activation pattern shared by
    /// misclassified training samples maps to its majority annotated label.
    /// An entry is only added when it strictly increases the number of
    /// correct samples carrying that pattern; ties are left to the head.
    pub fn fine_tune(&self, inputs: ArrayView2<f64>, labels: &[usize]) -> Result<(DbnModel, FineTuneReport)> {
        check_len("labels", inputs.nrows(), labels.len())?;
        let m = self.n_classes();
        if let Some(&label) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::LabelOutOfRange { label, classes: m });
        }
        let top = self.features(inputs)?;
        let preds: Vec<usize> = top.rows().into_iter().map(|r| self.predict_from_top(r, true).label).collect();

        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (idx, row) in top.rows().into_iter().enumerate() {
            groups.entry(pattern_key(row)).or_default().push(idx);
        }

        let mut model = self.clone();
        let mut report = FineTuneReport {
            misclassified_before: count_wrong(&preds, labels),
            ..Default::default()
        };
        for (pattern, members) in groups {
            if members.iter().all(|&i| preds[i] == labels[i]) {
                continue;
            }
            let mut counts = vec![0usize; m];
            for &i in &members {
                counts[labels[i]] += 1;
            }
            let best = *counts.iter().max().expect("m >= 2");
            let leaders: Vec<usize> = (0..m).filter(|&k| counts[k] == best).collect();
            let correct_now = members.iter().filter(|&&i| preds[i] == labels[i]).count();
            if leaders.len() > 1 {
                report.ties.push(PatternConflict {
                    pattern,
                    label_counts: counts,
                });
                continue;
            }
            if best > correct_now {
                model.overrides.insert(pattern.clone(), leaders[0]);
                report.overrides_added += 1;
                if best < members.len() {
                    report.collisions.push(PatternConflict {
                        pattern,
                        label_counts: counts,
                    });
                }
            }
        }
        let after: Vec<usize> = top.rows().into_iter().map(|r| model.predict_from_top(r, true).label).collect();
        report.misclassified_after = count_wrong(&after, labels);
        Ok((model, report))
    }

    pub fn evaluate(&self, inputs: ArrayView2<f64>, labels: &[usize], use_fine_tune: bool) -> Result<EvalReport> {
        if inputs.nrows() == 0 {
            return Err(Error::Empty("dataset"));
        }
        check_len("labels", inputs.nrows(), labels.len())?;
        let preds: Vec<usize> = self
            .predict_batch(inputs, use_fine_tune)?
            .into_iter()
            .map(|p| p.label)
            .collect();
        EvalReport::from_predictions(&self.label_names, labels, &preds)
    }
}

fn count_wrong(preds: &[usize], labels: &[usize]) -> usize {
    preds.iter().zip(labels).filter(|(p, l)| p != l).count()
}

/// Max-subtracted softmax.
pub fn softmax(mut z: Array1<f64>) -> Array1<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    z.mapv_inplace(|x| (x - max).exp());
    let sum = z.sum();
    z / sum
}

fn argmax(xs: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Top-layer activations binarized at 0.5, as a `0`/`1` string.
pub fn pattern_key(top: ArrayView1<f64>) -> String {
    top.iter().map(|&x| if x >= 0.5 { '1' } else { '0' }).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternConflict {
    pub pattern: String,
    pub label_counts: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    pub misclassified_before: usize,
    pub misclassified_after: usize,
    pub overrides_added: usize,
    /// Overridden patterns that still carry minority-label samples.
    pub collisions: Vec<PatternConflict>,
    /// Patterns left to the head because no label had a strict majority.
    pub ties: Vec<PatternConflict>,
}

/// Per-layer inputs to the layer-generation rule.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    /// Final-epoch WD total of each layer.
    pub wd: Vec<f64>,
    /// Magnitude of each layer's final-epoch mean energy.
    pub energy: Vec<f64>,
}

impl LayerStats {
    pub fn push(&mut self, wd_total: f64, mean_energy: f64) {
        self.wd.push(wd_total.abs());
        self.energy.push(mean_energy.abs());
    }

    pub fn layers(&self) -> usize {
        self.wd.len()
    }
}

/// `Σ WD^l > θ_L1 ∧ Σ E^l > θ_L2 ∧ k < max_layers`, with the thresholds
/// multiplied by `k` when `scale_layer_thresholds` is set.
pub fn check_layer_generation(stats: &LayerStats, config: &StructureConfig) -> bool {
    let k = stats.layers();
    if k == 0 || k >= config.max_layers {
        return false;
    }
    let scale = if config.scale_layer_thresholds { k as f64 } else { 1.0 };
    let wd: f64 = stats.wd.iter().sum();
    let energy: f64 = stats.energy.iter().sum();
    wd > config.theta_l1 * scale && energy > config.theta_l2 * scale
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_per_layer: usize,
    pub initial_hidden: usize,
    pub cd: CdConfig,
    pub structure: StructureConfig,
    pub head: HeadConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_layer: 100,
            initial_hidden: 8,
            cd: CdConfig::default(),
            structure: StructureConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_layer == 0 {
            return Err(Error::InvalidConfig {
                field: "epochs_per_layer",
                reason: "must be at least 1".into(),
            });
        }
        if self.initial_hidden == 0 || self.initial_hidden > self.structure.max_hidden {
            return Err(Error::InvalidConfig {
                field: "initial_hidden",
                reason: format!("must lie in [1, max_hidden = {}]", self.structure.max_hidden),
            });
        }
        if !(self.head.learning_rate >= 0.0 && self.head.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "head.learning_rate",
                reason: "must be a finite value >= 0".into(),
            });
        }
        if self.head.batch_size == 0 {
            return Err(Error::InvalidConfig {
                field: "head.batch_size",
                reason: "must be at least 1".into(),
            });
        }
        self.cd.validate()?;
        self.structure.validate()
    }
}

/// Everything recorded while building a model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub events: Vec<StructuralEvent>,
    pub layer_stats: LayerStats,
}

/// Greedy layer-wise construction: each layer trains under the adaptive
/// neuron controller, the stack grows while the layer-generation rule holds,
/// and the softmax head is fitted last.
pub fn train_adaptive<R: Rng + ?Sized>(
    inputs: ArrayView2<f64>,
    labels: &[usize],
    label_names: Vec<String>,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(DbnModel, TrainingLog)> {
    config.validate()?;
    if inputs.nrows() == 0 {
        return Err(Error::Empty("dataset"));
    }
    check_len("labels", inputs.nrows(), labels.len())?;

    let mut log = TrainingLog::default();
    let mut layers: Vec<RbmParameters> = Vec::new();
    let mut layer_input = inputs.to_owned();
    loop {
        let index = layers.len() + 1;
        let init = RbmParameters::initialize_for(layer_input.view(), config.initial_hidden, rng)?;
        if index > 1 {
            log.events.push(StructuralEvent {
                epoch: 0,
                kind: EventKind::Layer,
                layer: index,
                neuron: config.initial_hidden,
            });
        }
        let run = structure::train_adaptive_rbm(
            init,
            layer_input.view(),
            &config.cd,
            &config.structure,
            config.epochs_per_layer,
            index,
            rng,
        )?;
        log.layer_stats.push(run.final_wd_total(), run.final_mean_energy());
        log.epochs.extend(run.epochs);
        log.events.extend(run.events);
        layers.push(run.params);
        if !check_layer_generation(&log.layer_stats, &config.structure) {
            break;
        }
        layer_input = rbm::hidden_probs(layer_input.view(), layers.last().expect("pushed"))?;
    }
    let model = DbnModel::from_layers(layers, label_names)?;
    let model = model.train_head(inputs, labels, &config.head, rng)?;
    Ok((model, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub name: String,
    pub incorrect: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: Vec<CategoryScore>,
    pub incorrect: usize,
    pub total: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_predictions(label_names: &[String], labels: &[usize], preds: &[usize]) -> Result<Self> {
        check_len("predictions", labels.len(), preds.len())?;
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let m = label_names.len();
        let mut confusion = vec![vec![0usize; m]; m];
        for (&t, &p) in labels.iter().zip(preds) {
            if t >= m || p >= m {
                return Err(Error::LabelOutOfRange {
                    label: t.max(p),
                    classes: m,
                });
            }
            confusion[t][p] += 1;
        }
        let categories = label_names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let total: usize = confusion[k].iter().sum();
                let incorrect = total - confusion[k][k];
                CategoryScore {
                    name: name.clone(),
                    incorrect,
                    total,
                    accuracy: accuracy(incorrect, total),
                }
            })
            .collect::<Vec<_>>();
        let total = labels.len();
        let incorrect = categories.iter().map(|c| c.incorrect).sum();
        Ok(Self {
            categories,
            incorrect,
            total,
            accuracy: accuracy(incorrect, total),
            confusion,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn accuracy(incorrect: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        1.0 - incorrect as f64 / total as f64
    }
}

/// `96.5% (64/1834)`
pub fn format_cell(score: &CategoryScore) -> String {
    format!("{:.1}% ({}/{})", 100.0 * score.accuracy, score.incorrect, score.total)
}

/// Renders `Category | Train | Test (incorrect/total)` rows plus an overall
/// line. `train` may be omitted when only test data was evaluated.
pub fn render_table(train: Option<&EvalReport>, test: &EvalReport) -> String {
    let width = test
        .categories
        .iter()
        .map(|c| c.name.len())
        .max()
        .unwrap_or(8)
        .max("Category".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$} | {:>7} | Test (incorrect/total)", "Category", "Train");
    let _ = writeln!(out, "{}", "-".repeat(width + 36));
    for (k, cat) in test.categories.iter().enumerate() {
        let train_cell = train
            .and_then(|r| r.categories.get(k))
            .map_or_else(|| "-".to_string(), |c| format!("{:.1}%", 100.0 * c.accuracy));
        let _ = writeln!(out, "{:<width$} | {:>7} | {}", cat.name, train_cell, format_cell(cat));
    }
    let overall = CategoryScore {
        name: "overall".into(),
        incorrect: test.incorrect,
        total: test.total,
        accuracy: test.accuracy,
    };
    let train_cell = train.map_or_else(|| "-".to_string(), |r| format!("{:.1}%", 100.0 * r.accuracy));
    let _ = writeln!(out, "{:<width$} | {:>7} | {}", "overall", train_cell, format_cell(&overall));
    out
}
