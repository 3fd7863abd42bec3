//! Walking-Distance monitoring and hidden-neuron generation / annihilation.
//!
//! Walking Distance (WD) is tracked per hidden neuron on the two parameter
//! blocks that shape the hidden representation: the hidden bias `c_j` and the
//! weight column `W_{·j}`. The visible bias is not monitored. A neuron whose
//! smoothed WD stays large on both blocks is still being pulled around by the
//! data and gets a sibling; a neuron whose activation barely varies across
//! the data carries no information and is removed.

use ndarray::{concatenate, Array1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::{self, CdConfig, RbmParameters, Velocity};

/// Parameter movement over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WdSnapshot {
    pub epoch: usize,
    /// `|Δc_j|`
    pub wd_hidden_bias: Array1<f64>,
    /// `‖ΔW_{·j}‖₂`
    pub wd_weights: Array1<f64>,
    pub wd_total: f64,
}

/// Per-neuron parameter movement between two parameter sets of equal shape.
pub fn walking_distance(prev: &RbmParameters, curr: &RbmParameters, epoch: usize) -> Result<WdSnapshot> {
    if !rbm::shapes_match(prev, curr) {
        return Err(Error::Shape {
            axis: "hidden",
            expected: prev.n_hidden(),
            actual: curr.n_hidden(),
        });
    }
    let wd_hidden_bias = (&curr.hidden_bias - &prev.hidden_bias).mapv_into(f64::abs);
    let diff = &curr.weights - &prev.weights;
    let wd_weights = diff.map_axis(Axis(0), |col| col.dot(&col).sqrt());
    let wd_total = wd_hidden_bias.sum() + wd_weights.sum();
    Ok(WdSnapshot {
        epoch,
        wd_hidden_bias,
        wd_weights,
        wd_total,
    })
}

/// Sliding window of [`WdSnapshot`]s since the last structural edit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WdTrace {
    window: usize,
    snapshots: Vec<WdSnapshot>,
    smoothed_c: Array1<f64>,
    smoothed_w: Array1<f64>,
}

impl WdTrace {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            snapshots: Vec::new(),
            smoothed_c: Array1::zeros(0),
            smoothed_w: Array1::zeros(0),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn snapshots(&self) -> &[WdSnapshot] {
        &self.snapshots
    }

    pub fn smoothed_c(&self) -> &Array1<f64> {
        &self.smoothed_c
    }

    pub fn smoothed_w(&self) -> &Array1<f64> {
        &self.smoothed_w
    }

    /// True once at least `window` snapshots have been recorded.
    pub fn is_full(&self) -> bool {
        self.snapshots.len() >= self.window
    }

    pub fn push(&mut self, snapshot: WdSnapshot) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if last.wd_weights.len() != snapshot.wd_weights.len() {
                return Err(Error::Shape {
                    axis: "hidden",
                    expected: last.wd_weights.len(),
                    actual: snapshot.wd_weights.len(),
                });
            }
            if snapshot.epoch <= last.epoch {
                return Err(Error::Format {
                    what: "walking-distance trace",
                    reason: format!("epoch {} does not follow {}", snapshot.epoch, last.epoch),
                });
            }
        }
        self.snapshots.push(snapshot);
        self.recompute();
        Ok(())
    }

    /// Mean `wd_total` over the window.
    pub fn smoothed_total(&self) -> f64 {
        let recent = self.recent();
        if recent.is_empty() {
            return 0.0;
        }
        recent.iter().map(|s| s.wd_total).sum::<f64>() / recent.len() as f64
    }

    pub fn reset(&mut self) {
        self.snapshots.clear();
        self.smoothed_c = Array1::zeros(0);
        self.smoothed_w = Array1::zeros(0);
    }

    fn recent(&self) -> &[WdSnapshot] {
        let start = self.snapshots.len().saturating_sub(self.window);
        &self.snapshots[start..]
    }

    fn recompute(&mut self) {
        let recent = self.recent();
        let n = recent.len() as f64;
        let j = recent[0].wd_weights.len();
        let mut c = Array1::zeros(j);
        let mut w = Array1::zeros(j);
        for s in recent {
            c += &s.wd_hidden_bias;
            w += &s.wd_weights;
        }
        self.smoothed_c = c / n;
        self.smoothed_w = w / n;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureConfig {
    /// Neuron generation threshold on `smoothed_c[j] · smoothed_W[j]`.
    #[serde(rename = "theta_G")]
    pub theta_g: f64,
    /// Annihilation threshold on the activation standard deviation.
    #[serde(rename = "theta_A")]
    pub theta_a: f64,
    /// Layer generation threshold on the summed WD.
    #[serde(rename = "theta_L1")]
    pub theta_l1: f64,
    /// Layer generation threshold on the summed energy magnitude.
    #[serde(rename = "theta_L2")]
    pub theta_l2: f64,
    /// Multiply `theta_L1` / `theta_L2` by the current layer count.
    pub scale_layer_thresholds: bool,
    pub max_hidden: usize,
    pub max_layers: usize,
    pub warmup_epochs: usize,
    pub cooldown_epochs: usize,
    pub noise_sigma: f64,
    pub wd_window: usize,
    /// A layer stops early once the smoothed WD total falls below this. Zero disables.
    pub convergence_tol: f64,
    pub enable_generation: bool,
    pub enable_annihilation: bool,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self {
            theta_g: 0.05,
            theta_a: 0.01,
            theta_l1: 0.1,
            theta_l2: 0.1,
            scale_layer_thresholds: true,
            max_hidden: 256,
            max_layers: 4,
            warmup_epochs: 10,
            cooldown_epochs: 5,
            noise_sigma: 0.01,
            wd_window: 5,
            convergence_tol: 1e-6,
            enable_generation: true,
            enable_annihilation: true,
        }
    }
}

impl StructureConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig {
                    field,
                    reason: format!("must be a finite value > 0, got {x}"),
                })
            }
        };
        positive("theta_G", self.theta_g)?;
        positive("theta_A", self.theta_a)?;
        positive("theta_L1", self.theta_l1)?;
        positive("theta_L2", self.theta_l2)?;
        if self.max_hidden == 0 {
            return Err(Error::InvalidConfig {
                field: "max_hidden",
                reason: "must be at least 1".into(),
            });
        }
        if self.max_layers == 0 {
            return Err(Error::InvalidConfig {
                field: "max_layers",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "noise_sigma",
                reason: "must be a finite value >= 0".into(),
            });
        }
        if self.wd_window == 0 {
            return Err(Error::InvalidConfig {
                field: "wd_window",
                reason: "must be at least 1".into(),
            });
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return Err(Error::InvalidConfig {
                field: "convergence_tol",
                reason: "must be >= 0".into(),
            });
        }
        Ok(())
    }
}

/// Neurons whose smoothed WD product exceeds `theta_G`, strongest first up to
/// the `max_hidden` cap, returned in ascending index order.
pub fn check_generation(trace: &WdTrace, params: &RbmParameters, config: &StructureConfig) -> Vec<usize> {
    if !trace.is_full() || trace.smoothed_c().len() != params.n_hidden() {
        return Vec::new();
    }
    let room = config.max_hidden.saturating_sub(params.n_hidden());
    let mut hits: Vec<(usize, f64)> = trace
        .smoothed_c()
        .iter()
        .zip(trace.smoothed_w())
        .map(|(c, w)| c * w)
        .enumerate()
        .filter(|&(_, score)| score > config.theta_g)
        .collect();
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    hits.truncate(room);
    let mut parents: Vec<usize> = hits.into_iter().map(|(j, _)| j).collect();
    parents.sort_unstable();
    parents
}

/// Appends a hidden neuron cloned from `parent` with Gaussian jitter on its
/// weight column. The new neuron takes index `J`.
pub fn generate_neuron<R: Rng + ?Sized>(
    params: &RbmParameters,
    parent: usize,
    noise_sigma: f64,
    max_hidden: usize,
    rng: &mut R,
) -> Result<RbmParameters> {
    let j = params.n_hidden();
    if parent >= j {
        return Err(Error::OutOfRange {
            what: "hidden layer",
            index: parent,
            len: j,
        });
    }
    if j >= max_hidden {
        return Err(Error::HiddenCap { max_hidden });
    }
    let mut column = params.weights.column(parent).to_owned();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidConfig {
            field: "noise_sigma",
            reason: e.to_string(),
        })?;
        column.mapv_inplace(|w| w + normal.sample(rng));
    }
    let weights = concatenate(Axis(1), &[params.weights.view(), column.insert_axis(Axis(1)).view()])
        .expect("column height equals visible count");
    let mut hidden_bias = params.hidden_bias.to_vec();
    hidden_bias.push(params.hidden_bias[parent]);
    let next = RbmParameters {
        visible_bias: params.visible_bias.clone(),
        hidden_bias: Array1::from(hidden_bias),
        weights,
    };
    next.check_finite()?;
    Ok(next)
}

/// Neurons whose activation standard deviation over `data` is below
/// `theta_A`. The most variable neuron is always spared.
pub fn check_annihilation(
    params: &RbmParameters,
    data: ArrayView2<f64>,
    config: &StructureConfig,
) -> Result<Vec<usize>> {
    if data.nrows() == 0 {
        return Err(Error::Empty("data"));
    }
    let j = params.n_hidden();
    if j < 2 {
        return Ok(Vec::new());
    }
    let probs = rbm::hidden_probs(data, params)?;
    let spread = probs.std_axis(Axis(0), 0.0);
    let mut victims: Vec<usize> = (0..j).filter(|&k| spread[k] < config.theta_a).collect();
    if victims.len() == j {
        let keep = (0..j)
            .max_by(|&a, &b| spread[a].total_cmp(&spread[b]).then(b.cmp(&a)))
            .expect("j >= 2");
        victims.retain(|&k| k != keep);
    }
    Ok(victims)
}

/// Removes the hidden neurons listed in `victims`, preserving the order of
/// the survivors.
pub fn annihilate(params: &RbmParameters, victims: &[usize]) -> Result<RbmParameters> {
    let j = params.n_hidden();
    let mut doomed = vec![false; j];
    for &v in victims {
        if v >= j {
            return Err(Error::OutOfRange {
                what: "hidden layer",
                index: v,
                len: j,
            });
        }
        doomed[v] = true;
    }
    let keep: Vec<usize> = (0..j).filter(|&k| !doomed[k]).collect();
    if keep.is_empty() {
        return Err(Error::RemoveAll(j));
    }
    if keep.len() == j {
        return Ok(params.clone());
    }
    Ok(RbmParameters {
        visible_bias: params.visible_bias.clone(),
        hidden_bias: params.hidden_bias.select(Axis(0), &keep),
        weights: params.weights.select(Axis(1), &keep),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Generate,
    Annihilate,
    Layer,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Generate => "generate",
            EventKind::Annihilate => "annihilate",
            EventKind::Layer => "layer",
        }
    }
}

/// One structural edit. `neuron` is the created or removed neuron's index
/// for neuron events and the initial hidden count for layer events.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralEvent {
    pub epoch: usize,
    pub kind: EventKind,
    pub layer: usize,
    pub neuron: usize,
}

/// One row of training progress.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub layer: usize,
    pub epoch: usize,
    pub reconstruction_error: f64,
    pub mean_energy: f64,
    pub wd_total: f64,
    pub hidden_count: usize,
}

#[derive(Clone, Debug)]
pub struct AdaptiveRbmRun {
    pub params: RbmParameters,
    pub epochs: Vec<EpochRecord>,
    pub events: Vec<StructuralEvent>,
}

impl AdaptiveRbmRun {
    pub fn final_wd_total(&self) -> f64 {
        self.epochs.last().map_or(0.0, |r| r.wd_total)
    }

    pub fn final_mean_energy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |r| r.mean_energy)
    }

    pub fn generations(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Generate).count()
    }

    pub fn annihilations(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Annihilate).count()
    }
}

/// Trains one RBM for up to `max_epochs`, applying structural edits at epoch
/// ends. Generation has priority over annihilation, at most one kind of edit
/// happens per epoch, and annihilation is only considered once this RBM has
/// grown at least once. Any edit resets the WD trace and momentum.
pub fn train_adaptive_rbm<R: Rng + ?Sized>(
    init: RbmParameters,
    data: ArrayView2<f64>,
    cd: &CdConfig,
    structure: &StructureConfig,
    max_epochs: usize,
    layer: usize,
    rng: &mut R,
) -> Result<AdaptiveRbmRun> {
    cd.validate()?;
    structure.validate()?;
    if data.nrows() == 0 {
        return Err(Error::Empty("data"));
    }
    let mut params = init;
    params.validate()?;
    let mut trace = WdTrace::new(structure.wd_window);
    let mut velocity = Velocity::default();
    let mut epochs = Vec::with_capacity(max_epochs);
    let mut events = Vec::new();
    let mut last_event = 0usize;
    let mut grown = false;

    for epoch in 1..=max_epochs {
        let (next, stats) = rbm::train_epoch(&params, data, cd, &mut velocity, rng)?;
        let snapshot = walking_distance(&params, &next, epoch)?;
        params = next;
        let wd_total = snapshot.wd_total;
        trace.push(snapshot)?;
        epochs.push(EpochRecord {
            layer,
            epoch,
            reconstruction_error: rbm::reconstruction_error(&params, data)?,
            mean_energy: stats.mean_energy,
            wd_total,
            hidden_count: params.n_hidden(),
        });

        let schedulable = epoch >= structure.warmup_epochs
            && epoch - last_event >= structure.cooldown_epochs
            && trace.is_full();
        if schedulable && structure.enable_generation {
            let parents = check_generation(&trace, &params, structure);
            if !parents.is_empty() {
                for parent in parents {
                    params = generate_neuron(&params, parent, structure.noise_sigma, structure.max_hidden, rng)?;
                    events.push(StructuralEvent {
                        epoch,
                        kind: EventKind::Generate,
                        layer,
                        neuron: params.n_hidden() - 1,
                    });
                }
                log::debug!("layer {layer} epoch {epoch}: grew to {} hidden", params.n_hidden());
                grown = true;
                trace.reset();
                velocity.reset();
                last_event = epoch;
                continue;
            }
        }
        if schedulable && structure.enable_annihilation && grown {
            let victims = check_annihilation(&params, data, structure)?;
            if !victims.is_empty() {
                params = annihilate(&params, &victims)?;
                events.extend(victims.iter().map(|&neuron| StructuralEvent {
                    epoch,
                    kind: EventKind::Annihilate,
                    layer,
                    neuron,
                }));
                log::debug!("layer {layer} epoch {epoch}: pruned to {} hidden", params.n_hidden());
                trace.reset();
                velocity.reset();
                last_event = epoch;
                continue;
            }
        }
        if structure.convergence_tol > 0.0
            && epoch >= structure.warmup_epochs
            && trace.is_full()
            && trace.smoothed_total() < structure.convergence_tol
        {
            log::debug!("layer {layer} converged at epoch {epoch}");
            break;
        }
    }
    Ok(AdaptiveRbmRun { params, epochs, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded(i: usize, j: usize, seed: u64) -> RbmParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.5).unwrap();
        RbmParameters {
            visible_bias: Array1::from_shape_simple_fn(i, || n.sample(&mut rng)),
            hidden_bias: Array1::from_shape_simple_fn(j, || n.sample(&mut rng)),
            weights: Array2::from_shape_simple_fn((i, j), || n.sample(&mut rng)),
        }
    }

    fn trace_with(c: Array1<f64>, w: Array1<f64>) -> WdTrace {
        let mut trace = WdTrace::new(1);
        let total = c.sum() + w.sum();
        trace
            .push(WdSnapshot {
                epoch: 1,
                wd_hidden_bias: c,
                wd_weights: w,
                wd_total: total,
            })
            .unwrap();
        trace
    }

    #[test]
    fn walking_distance_examples() {
        let p = seeded(3, 2, 1);
        let wd = walking_distance(&p, &p, 1).unwrap();
        assert!(wd.wd_hidden_bias.iter().chain(&wd.wd_weights).all(|&x| x == 0.0));
        assert_eq!(wd.wd_total, 0.0);

        let mut q = p.clone();
        q.hidden_bias[0] += 0.3;
        q.visible_bias[1] += 5.0; // ignored
        let wd = walking_distance(&p, &q, 1).unwrap();
        assert!((wd.wd_hidden_bias[0] - 0.3).abs() < 1e-12);
        assert_eq!(wd.wd_hidden_bias[1], 0.0);
        assert!(wd.wd_weights.iter().all(|&x| x == 0.0));
        assert!((wd.wd_total - 0.3).abs() < 1e-12);

        assert!(walking_distance(&p, &seeded(3, 3, 1), 1).is_err());
    }

    #[test]
    fn walking_distance_matches_loop() {
        let p = seeded(6, 4, 2);
        let q = seeded(6, 4, 3);
        let wd = walking_distance(&p, &q, 1).unwrap();
        let mut total = 0.0;
        for j in 0..4 {
            let dc = (q.hidden_bias[j] - p.hidden_bias[j]).abs();
            let mut sq = 0.0;
            for i in 0..6 {
                sq += (q.weights[[i, j]] - p.weights[[i, j]]).powi(2);
            }
            assert!((wd.wd_hidden_bias[j] - dc).abs() < 1e-14);
            assert!((wd.wd_weights[j] - sq.sqrt()).abs() < 1e-14);
            total += dc + sq.sqrt();
        }
        assert!((wd.wd_total - total).abs() < 1e-12);
    }

    #[test]
    fn trace_smooths_over_window() {
        let mut trace = WdTrace::new(2);
        for (epoch, x) in [(1, 1.0), (2, 3.0), (3, 5.0)] {
            trace
                .push(WdSnapshot {
                    epoch,
                    wd_hidden_bias: array![x],
                    wd_weights: array![2.0 * x],
                    wd_total: 3.0 * x,
                })
                .unwrap();
        }
        assert_eq!(trace.smoothed_c(), &array![4.0]);
        assert_eq!(trace.smoothed_w(), &array![8.0]);
        assert_eq!(trace.smoothed_total(), 12.0);
        let stale = WdSnapshot {
            epoch: 3,
            wd_hidden_bias: array![0.0],
            wd_weights: array![0.0],
            wd_total: 0.0,
        };
        assert!(trace.push(stale).is_err());
    }

    #[test]
    fn generation_examples() {
        let p = seeded(3, 2, 1);
        let config = StructureConfig {
            theta_g: 0.1,
            max_hidden: 10,
            ..Default::default()
        };
        let zero = trace_with(array![0.0, 0.0], array![0.0, 0.0]);
        assert!(check_generation(&zero, &p, &config).is_empty());

        let trace = trace_with(array![0.5, 0.01], array![0.4, 0.01]);
        assert_eq!(check_generation(&trace, &p, &config), vec![0]);

        let capped = StructureConfig { max_hidden: 2, ..config };
        assert!(check_generation(&trace, &p, &capped).is_empty());
    }

    #[test]
    fn generation_cap_keeps_strongest() {
        let p = seeded(3, 3, 1);
        let config = StructureConfig {
            theta_g: 0.1,
            max_hidden: 4,
            ..Default::default()
        };
        let trace = trace_with(array![1.0, 2.0, 1.5], array![1.0, 1.0, 1.0]);
        assert_eq!(check_generation(&trace, &p, &config), vec![1]);
    }

    #[test]
    fn generate_neuron_examples() {
        let p = seeded(4, 3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = generate_neuron(&p, 1, 0.0, 10, &mut rng).unwrap();
        assert_eq!(q.n_hidden(), 4);
        assert_eq!(q.weights.column(3), p.weights.column(1));
        assert_eq!(q.hidden_bias[3], p.hidden_bias[1]);
        assert_eq!(q.weights.slice(s![.., ..3]), p.weights);
        assert_eq!(q.hidden_bias.slice(s![..3]), p.hidden_bias);
        assert_eq!(q.visible_bias, p.visible_bias);

        assert!(matches!(generate_neuron(&p, 3, 0.0, 10, &mut rng), Err(Error::OutOfRange { .. })));
        assert!(matches!(generate_neuron(&p, 0, 0.0, 3, &mut rng), Err(Error::HiddenCap { .. })));
    }

    #[test]
    fn generated_noise_concentrates() {
        let p = seeded(1024, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sigma = 0.01;
        let q = generate_neuron(&p, 0, sigma, 10, &mut rng).unwrap();
        let d = &q.weights.column(2) - &p.weights.column(0);
        let norm = d.dot(&d).sqrt();
        let expected = sigma * 32.0;
        assert!((norm - expected).abs() < 0.5 * expected, "{norm}");
    }

    #[test]
    fn annihilation_examples() {
        let config = StructureConfig {
            theta_a: 0.01,
            ..Default::default()
        };
        let data = array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        let mut p = RbmParameters::zeros(3, 3);
        for i in 0..3 {
            p.weights[[i, 0]] = if i == 0 { 4.0 } else { -4.0 };
            p.weights[[i, 1]] = if i == 1 { 4.0 } else { -4.0 };
        }
        p.hidden_bias[2] = 30.0;
        assert_eq!(check_annihilation(&p, data.view(), &config).unwrap(), vec![2]);

        p.hidden_bias[2] = 0.0;
        p.weights[[2, 2]] = 4.0;
        assert!(check_annihilation(&p, data.view(), &config).unwrap().is_empty());

        let single = RbmParameters::zeros(3, 1);
        assert!(check_annihilation(&single, data.view(), &config).unwrap().is_empty());

        // every neuron constant: one survives
        let flat = RbmParameters::zeros(3, 4);
        assert_eq!(check_annihilation(&flat, data.view(), &config).unwrap().len(), 3);

        assert!(check_annihilation(&p, Array2::zeros((0, 3)).view(), &config).is_err());
    }

    #[test]
    fn annihilate_examples() {
        let p = seeded(5, 4, 2);
        assert_eq!(annihilate(&p, &[]).unwrap(), p);

        let q = annihilate(&p, &[1, 3]).unwrap();
        assert_eq!(q.n_hidden(), 2);
        assert_eq!(q.weights.column(0), p.weights.column(0));
        assert_eq!(q.weights.column(1), p.weights.column(2));
        assert_eq!(q.hidden_bias, array![p.hidden_bias[0], p.hidden_bias[2]]);
        assert_eq!(q.visible_bias, p.visible_bias);

        assert!(matches!(annihilate(&p, &[0, 1, 2, 3]), Err(Error::RemoveAll(4))));
        assert!(annihilate(&p, &[4]).is_err());
    }

    #[test]
    fn annihilate_preserves_energy_of_survivors() {
        let p = seeded(4, 4, 8);
        let q = annihilate(&p, &[0, 2]).unwrap();
        let v = array![1.0, 0.0, 1.0, 1.0];
        let h_full = array![0.0, 1.0, 0.0, 1.0];
        let h_kept = array![1.0, 1.0];
        let a = rbm::energy(v.view(), h_full.view(), &p).unwrap();
        let b = rbm::energy(v.view(), h_kept.view(), &q).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn config_validation_names_field() {
        let bad = StructureConfig {
            theta_g: 0.0,
            ..Default::default()
        };
        match bad.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "theta_G"),
            other => panic!("{other:?}"),
        }
    }
}
