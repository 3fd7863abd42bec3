//! Crack image datasets: SDNET2018-style directory trees, preprocessing to
//! visible vectors, a seeded synthetic generator, stratified splits, a
//! binary cache container and relabel files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, Luma};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Deck,
    Wall,
    Pavement,
}

impl Structure {
    pub const ALL: [Structure; 3] = [Structure::Deck, Structure::Wall, Structure::Pavement];

    pub fn name(&self) -> &'static str {
        match self {
            Structure::Deck => "deck",
            Structure::Wall => "wall",
            Structure::Pavement => "pavement",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How (structure, cracked) pairs map onto class labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskShape {
    /// `uncracked` = 0, `cracked` = 1, regardless of structure.
    #[default]
    Binary,
    /// Six classes, `<structure>-uncracked` / `<structure>-cracked`.
    Combined,
}

impl TaskShape {
    pub fn label_names(&self) -> Vec<String> {
        match self {
            TaskShape::Binary => vec!["uncracked".into(), "cracked".into()],
            TaskShape::Combined => Structure::ALL
                .iter()
                .flat_map(|s| [format!("{s}-uncracked"), format!("{s}-cracked")])
                .collect(),
        }
    }

    pub fn label(&self, structure: Structure, cracked: bool) -> usize {
        match self {
            TaskShape::Binary => cracked as usize,
            TaskShape::Combined => {
                2 * Structure::ALL.iter().position(|&s| s == structure).expect("listed") + cracked as usize
            }
        }
    }

    /// Inverse of [`TaskShape::label`]; binary labels keep the given structure.
    pub fn decode(&self, label: usize, structure: Structure) -> Option<(Structure, bool)> {
        match self {
            TaskShape::Binary if label < 2 => Some((structure, label == 1)),
            TaskShape::Combined if label < 6 => Some((Structure::ALL[label / 2], label % 2 == 1)),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    /// Luminosity-weighted single channel.
    #[default]
    Grayscale,
    /// R, G and B planes concatenated.
    Rgb,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessDescriptor {
    pub target_side: usize,
    pub color: ColorMode,
    pub normalization: String,
}

impl Default for PreprocessDescriptor {
    fn default() -> Self {
        Self {
            target_side: 32,
            color: ColorMode::Grayscale,
            normalization: "unit".into(),
        }
    }
}

impl PreprocessDescriptor {
    pub fn input_dim(&self) -> usize {
        let plane = self.target_side * self.target_side;
        match self.color {
            ColorMode::Grayscale => plane,
            ColorMode::Rgb => 3 * plane,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_side < 8 {
            return Err(Error::InvalidConfig {
                field: "target_side",
                reason: format!("must be at least 8, got {}", self.target_side),
            });
        }
        if self.normalization != "unit" {
            return Err(Error::InvalidConfig {
                field: "normalization",
                reason: format!("unsupported normalization {:?}", self.normalization),
            });
        }
        Ok(())
    }
}

impl fmt::Display for PreprocessDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let color = match self.color {
            ColorMode::Grayscale => "grayscale",
            ColorMode::Rgb => "rgb",
        };
        write!(f, "{}x{} {color} {}", self.target_side, self.target_side, self.normalization)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub pixels: Vec<f64>,
    pub label: usize,
    pub structure: Structure,
    pub cracked: bool,
    /// File path, or `synthetic:<seed>:<index>`.
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub samples: Vec<LabeledSample>,
    pub label_names: Vec<String>,
    pub task: TaskShape,
    pub descriptor: PreprocessDescriptor,
}

impl LabeledDataset {
    pub fn empty(task: TaskShape, descriptor: PreprocessDescriptor) -> Self {
        Self {
            samples: Vec::new(),
            label_names: task.label_names(),
            task,
            descriptor,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(n_samples, input_dim)` matrix of pixels.
    pub fn inputs(&self) -> Array2<f64> {
        let dim = self.descriptor.input_dim();
        let mut out = Array2::zeros((self.samples.len(), dim));
        for (mut row, s) in out.rows_mut().into_iter().zip(&self.samples) {
            row.assign(&ndarray::ArrayView1::from(&s.pixels[..]));
        }
        out
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(category_name(s.structure, s.cracked)).or_insert(0) += 1;
        }
        counts
    }

    /// Checks pixel ranges, dimensions and label consistency.
    pub fn validate(&self) -> Result<()> {
        let dim = self.descriptor.input_dim();
        for s in &self.samples {
            if s.pixels.len() != dim {
                return Err(Error::Shape {
                    axis: "pixels",
                    expected: dim,
                    actual: s.pixels.len(),
                });
            }
            if s.pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Format {
                    what: "sample",
                    reason: format!("{}: pixel outside [0, 1]", s.source),
                });
            }
            if s.label != self.task.label(s.structure, s.cracked) {
                return Err(Error::Format {
                    what: "sample",
                    reason: format!("{}: label {} inconsistent with {}", s.source, s.label, s.structure),
                });
            }
        }
        Ok(())
    }

    /// Applies `source -> label name` overrides. Returns how many samples changed.
    pub fn apply_relabels(&mut self, relabels: &BTreeMap<String, String>) -> Result<usize> {
        let mut changed = 0;
        for s in &mut self.samples {
            let Some(name) = relabels.get(&s.source) else {
                continue;
            };
            let label = self
                .label_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Format {
                    what: "relabel file",
                    reason: format!("unknown label {name:?} for {}", s.source),
                })?;
            let (structure, cracked) = self.task.decode(label, s.structure).expect("label from names");
            if label != s.label {
                changed += 1;
            }
            s.label = label;
            s.structure = structure;
            s.cracked = cracked;
        }
        Ok(changed)
    }
}

pub fn category_name(structure: Structure, cracked: bool) -> String {
    format!("{structure}-{}", if cracked { "cracked" } else { "uncracked" })
}

/// Grayscale (or RGB planes), area-averaged to `target_side²`, scaled to `[0, 1]`.
pub fn preprocess(image: &DynamicImage, descriptor: &PreprocessDescriptor) -> Result<Vec<f64>> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::DegenerateImage);
    }
    descriptor.validate()?;
    let rgb = image.to_rgb8();
    let side = descriptor.target_side;
    let channel = |f: &dyn Fn(&image::Rgb<u8>) -> f64| -> Vec<f64> {
        let plane: Vec<f64> = rgb.pixels().map(|p| f(p) / 255.0).collect();
        area_resize(&plane, w, h, side)
    };
    let out = match descriptor.color {
        ColorMode::Grayscale => channel(&|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64),
        ColorMode::Rgb => {
            let mut v = channel(&|p| p[0] as f64);
            v.extend(channel(&|p| p[1] as f64));
            v.extend(channel(&|p| p[2] as f64));
            v
        }
    };
    Ok(out.into_iter().map(|x| x.clamp(0.0, 1.0)).collect())
}

/// Overlap weights of each destination cell over the source axis.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let lo = d as f64 * scale;
            let hi = lo + scale;
            let mut cells = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    cells.push((s, overlap / scale));
                }
                s += 1;
            }
            cells
        })
        .collect()
}

fn area_resize(plane: &[f64], w: usize, h: usize, side: usize) -> Vec<f64> {
    let wx = area_weights(w, side);
    let wy = area_weights(h, side);
    let mut rows = vec![0.0; h * side];
    for y in 0..h {
        for (x, cells) in wx.iter().enumerate() {
            rows[y * side + x] = cells.iter().map(|&(s, a)| a * plane[y * w + s]).sum();
        }
    }
    let mut out = vec![0.0; side * side];
    for (y, cells) in wy.iter().enumerate() {
        for x in 0..side {
            out[y * side + x] = cells.iter().map(|&(s, a)| a * rows[s * side + x]).sum();
        }
    }
    out
}

pub fn preprocess_file(path: &Path, descriptor: &PreprocessDescriptor) -> Result<Vec<f64>> {
    let image = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    preprocess(&image, descriptor)
}

/// Directory names of the SDNET2018 layout: one top-level folder per
/// structure, each with a cracked and an uncracked subfolder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FolderCodes {
    pub deck: [String; 3],
    pub wall: [String; 3],
    pub pavement: [String; 3],
}

impl Default for FolderCodes {
    fn default() -> Self {
        let codes = |top: &str| [top.to_string(), format!("C{top}"), format!("U{top}")];
        Self {
            deck: codes("D"),
            wall: codes("W"),
            pavement: codes("P"),
        }
    }
}

impl FolderCodes {
    /// `(structure dir, cracked dir, uncracked dir)`
    pub fn for_structure(&self, s: Structure) -> &[String; 3] {
        match s {
            Structure::Deck => &self.deck,
            Structure::Wall => &self.wall,
            Structure::Pavement => &self.pavement,
        }
    }
}

/// Per-category image counts of the reference SDNET2018 train/test split:
/// `(structure, cracked, train, test)`.
pub const SDNET_SPLIT_COUNTS: [(Structure, bool, usize, usize); 6] = [
    (Structure::Deck, false, 10_424, 1_834),
    (Structure::Deck, true, 1_171, 191),
    (Structure::Wall, false, 12_853, 1_434),
    (Structure::Wall, true, 3_471, 380),
    (Structure::Pavement, false, 19_531, 2_195),
    (Structure::Pavement, true, 2_369, 239),
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub train: BTreeMap<String, usize>,
    pub test: BTreeMap<String, usize>,
    pub train_total: usize,
    pub test_total: usize,
    pub skipped: usize,
    pub skipped_files: Vec<String>,
    pub descriptor: PreprocessDescriptor,
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn from_splits(train: &LabeledDataset, test: &LabeledDataset) -> Self {
        Self {
            train: train.category_counts(),
            test: test.category_counts(),
            train_total: train.len(),
            test_total: test.len(),
            descriptor: train.descriptor.clone(),
            ..Default::default()
        }
    }

    /// Compares against [`SDNET_SPLIT_COUNTS`] for the requested structures and returns
    /// one message per mismatching cell.
    pub fn compare_with_reference(&self, structures: &[Structure]) -> Vec<String> {
        let mut out = Vec::new();
        for &(s, cracked, train, test) in SDNET_SPLIT_COUNTS.iter().filter(|row| structures.contains(&row.0)) {
            let name = category_name(s, cracked);
            let got_train = self.train.get(&name).copied().unwrap_or(0);
            let got_test = self.test.get(&name).copied().unwrap_or(0);
            if got_train != train {
                out.push(format!("{name}: train count {got_train} differs from expected {train}"));
            }
            if got_test != test {
                out.push(format!("{name}: test count {got_test} differs from expected {test}"));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdnetData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub manifest: DatasetManifest,
}

#[derive(Clone, Debug)]
pub struct SdnetOptions {
    pub subset: Option<Structure>,
    pub task: TaskShape,
    pub descriptor: PreprocessDescriptor,
    pub codes: FolderCodes,
}

impl Default for SdnetOptions {
    fn default() -> Self {
        Self {
            subset: None,
            task: TaskShape::Binary,
            descriptor: PreprocessDescriptor::default(),
            codes: FolderCodes::default(),
        }
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

struct Job {
    path: PathBuf,
    structure: Structure,
    cracked: bool,
}

fn decode_all(jobs: &[Job], descriptor: &PreprocessDescriptor) -> Vec<Result<Vec<f64>>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
    let chunk = jobs.len().div_ceil(workers).max(64);
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|j| preprocess_file(&j.path, descriptor)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("decoder thread panicked"))
            .collect()
    })
}

/// Loads an SDNET2018-style tree.
///
/// When `root` has `train/` and `test/` subdirectories each is loaded as a
/// split; otherwise the whole tree becomes the training split. Undecodable
/// files are skipped, logged and counted. Counts are compared against the
/// reference split whenever both splits are present; mismatches only warn.
pub fn load_sdnet(root: &Path, options: &SdnetOptions) -> Result<SdnetData> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    options.descriptor.validate()?;
    let structures: Vec<Structure> = match options.subset {
        Some(s) => vec![s],
        None => Structure::ALL.to_vec(),
    };
    let (train_root, test_root) = (root.join("train"), root.join("test"));
    let split_layout = train_root.is_dir() && test_root.is_dir();
    let split_roots: Vec<PathBuf> = if split_layout {
        vec![train_root, test_root]
    } else {
        vec![root.to_path_buf()]
    };

    let mut manifest = DatasetManifest {
        descriptor: options.descriptor.clone(),
        ..Default::default()
    };
    let mut splits = Vec::new();
    for split_root in &split_roots {
        let mut jobs = Vec::new();
        for &s in &structures {
            let [top, cracked_dir, uncracked_dir] = options.codes.for_structure(s);
            for (dir, cracked) in [(cracked_dir, true), (uncracked_dir, false)] {
                for path in list_images(&split_root.join(top).join(dir))? {
                    jobs.push(Job {
                        path,
                        structure: s,
                        cracked,
                    });
                }
            }
        }
        let mut dataset = LabeledDataset::empty(options.task, options.descriptor.clone());
        for (job, decoded) in jobs.iter().zip(decode_all(&jobs, &options.descriptor)) {
            match decoded {
                Ok(pixels) => dataset.samples.push(LabeledSample {
                    pixels,
                    label: options.task.label(job.structure, job.cracked),
                    structure: job.structure,
                    cracked: job.cracked,
                    source: job.path.to_string_lossy().into_owned(),
                }),
                Err(e) => {
                    log::warn!("skipping {}: {e}", job.path.display());
                    manifest.skipped += 1;
                    manifest.skipped_files.push(job.path.to_string_lossy().into_owned());
                }
            }
        }
        splits.push(dataset);
    }
    let test = if split_layout {
        splits.pop().expect("two splits")
    } else {
        LabeledDataset::empty(options.task, options.descriptor.clone())
    };
    let train = splits.pop().expect("one split");
    if train.is_empty() && test.is_empty() {
        return Err(Error::NoImages(root.to_path_buf()));
    }
    let counted = DatasetManifest::from_splits(&train, &test);
    manifest.train = counted.train;
    manifest.test = counted.test;
    manifest.train_total = counted.train_total;
    manifest.test_total = counted.test_total;
    if split_layout {
        manifest.warnings = manifest.compare_with_reference(&structures);
    } else {
        manifest
            .warnings
            .push("no train/test split directories; all images loaded as training data".into());
    }
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    Ok(SdnetData { train, test, manifest })
}

/// Parameters of the synthetic crack generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub crack_fraction: f64,
    pub side: usize,
    pub seed: u64,
    pub structure: Structure,
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 1200,
            crack_fraction: 0.5,
            side: 32,
            seed: 0,
            structure: Structure::Deck,
            test_fraction: 1.0 / 6.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig {
                field: "n",
                reason: "need at least 2 samples".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.crack_fraction) {
            return Err(Error::InvalidConfig {
                field: "crack_fraction",
                reason: format!("must lie in [0, 1], got {}", self.crack_fraction),
            });
        }
        if self.side < 16 {
            return Err(Error::InvalidConfig {
                field: "side",
                reason: format!("must be at least 16, got {}", self.side),
            });
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig {
                field: "test_fraction",
                reason: format!("must lie in (0, 1), got {}", self.test_fraction),
            });
        }
        Ok(())
    }
}

/// Concrete-like texture: a mid-gray base, a few low-frequency blotches and
/// per-pixel noise.
fn render_texture(rng: &mut ChaCha8Rng, side: usize) -> Vec<f64> {
    let base = 0.85 + rng.random_range(-0.03..0.03);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let fx = rng.random_range(0.5..2.0);
            let fy = rng.random_range(0.5..2.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.02..0.05);
            (fx, fy, phase, amp)
        })
        .collect();
    let tau = std::f64::consts::TAU;
    let mut pixels = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (u, v) = (x as f64 / side as f64, y as f64 / side as f64);
            let blotch: f64 = waves
                .iter()
                .map(|&(fx, fy, phase, amp)| amp * (tau * (fx * u + fy * v) + phase).cos())
                .sum();
            let noise = rng.random_range(-0.04..0.04);
            pixels.push((base + blotch + noise).clamp(0.0, 1.0));
        }
    }
    pixels
}

/// Dark polyline entering on one edge and leaving on the opposite one.
fn draw_crack(rng: &mut ChaCha8Rng, pixels: &mut [f64], side: usize) {
    let s = side as f64;
    let horizontal = rng.random_bool(0.5);
    let segments = rng.random_range(3..=6);
    let width = rng.random_range(1..=3) as f64;
    let darkness = rng.random_range(0.0..0.1);
    let mut points = Vec::with_capacity(segments + 1);
    let mut across = rng.random_range(0.2 * s..0.8 * s);
    for k in 0..=segments {
        let along = s * k as f64 / segments as f64;
        if k > 0 {
            across = (across + rng.random_range(-0.2 * s..0.2 * s)).clamp(1.0, s - 2.0);
        }
        points.push(if horizontal { (along, across) } else { (across, along) });
    }
    let radius = width / 2.0;
    for pair in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        let steps = ((x1 - x0).hypot(y1 - y0) * 4.0).ceil() as usize + 1;
        for t in 0..=steps {
            let f = t as f64 / steps as f64;
            let (cx, cy) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let lo_x = (cx - radius).floor().max(0.0) as usize;
            let hi_x = ((cx + radius).ceil() as usize).min(side - 1);
            let lo_y = (cy - radius).floor().max(0.0) as usize;
            let hi_y = ((cy + radius).ceil() as usize).min(side - 1);
            for py in lo_y..=hi_y {
                for px in lo_x..=hi_x {
                    let d = (px as f64 + 0.5 - cx).hypot(py as f64 + 0.5 - cy);
                    if d <= radius.max(0.5) + 0.25 {
                        let p = &mut pixels[py * side + px];
                        *p = p.min(darkness);
                    }
                }
            }
        }
    }
}

/// Seeded synthetic crack images. Exactly `round(n · crack_fraction)`
/// samples are cracked; which ones is decided by the seed. Each sample is
/// rendered from its own stream so any sample can be regenerated alone.
pub fn generate_synthetic(spec: &SyntheticSpec, task: TaskShape) -> Result<LabeledDataset> {
    spec.validate()?;
    let cracked_count = (spec.n as f64 * spec.crack_fraction).round() as usize;
    let mut flags: Vec<bool> = (0..spec.n).map(|i| i < cracked_count).collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rand::seq::SliceRandom::shuffle(flags.as_mut_slice(), &mut order_rng);

    let descriptor = PreprocessDescriptor {
        target_side: spec.side,
        ..Default::default()
    };
    let mut dataset = LabeledDataset::empty(task, descriptor);
    for (index, cracked) in flags.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(index as u64 + 1);
        let mut pixels = render_texture(&mut rng, spec.side);
        if cracked {
            draw_crack(&mut rng, &mut pixels, spec.side);
        }
        dataset.samples.push(LabeledSample {
            pixels,
            label: task.label(spec.structure, cracked),
            structure: spec.structure,
            cracked,
            source: format!("synthetic:{}:{index}", spec.seed),
        });
    }
    Ok(dataset)
}

/// Grayscale rendering of a sample, for export and for writing synthetic
/// trees. RGB samples are rendered from their luminance.
pub fn render_sample(sample: &LabeledSample, descriptor: &PreprocessDescriptor) -> GrayImage {
    let side = descriptor.target_side;
    let plane = side * side;
    let value = |i: usize| match descriptor.color {
        ColorMode::Grayscale => sample.pixels[i],
        ColorMode::Rgb => {
            0.299 * sample.pixels[i] + 0.587 * sample.pixels[plane + i] + 0.114 * sample.pixels[2 * plane + i]
        }
    };
    GrayImage::from_fn(side as u32, side as u32, |x, y| {
        let v = value(y as usize * side + x as usize);
        Luma([(v * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

/// Writes `train` and `test` as PNGs in the split layout [`load_sdnet`]
/// reads: `<root>/<split>/<structure>/<cracked|uncracked>/NNNNNN.png`.
/// Returns the number of files written.
pub fn write_sdnet_tree(root: &Path, train: &LabeledDataset, test: &LabeledDataset, codes: &FolderCodes) -> Result<usize> {
    let mut written = 0;
    for (split, data) in [("train", train), ("test", test)] {
        for (index, sample) in data.samples.iter().enumerate() {
            let [top, cracked, uncracked] = codes.for_structure(sample.structure);
            let dir = root.join(split).join(top).join(if sample.cracked { cracked } else { uncracked });
            fs::create_dir_all(&dir)?;
            render_sample(sample, &data.descriptor).save(dir.join(format!("{index:06}.png")))?;
            written += 1;
        }
    }
    Ok(written)
}

/// Stratified split by label. Each label contributes
/// `round(count · test_fraction)` samples to the test side, clamped so both
/// sides keep at least one. Relative order is preserved on both sides.
pub fn split(data: &LabeledDataset, test_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig {
            field: "test_fraction",
            reason: format!("must lie in (0, 1), got {test_fraction}"),
        });
    }
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.samples.iter().enumerate() {
        by_label.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; data.len()];
    for (label, mut members) in by_label {
        if members.len() < 2 {
            let name = data.label_names.get(label).cloned().unwrap_or_else(|| label.to_string());
            return Err(Error::Stratify(name));
        }
        rand::seq::SliceRandom::shuffle(members.as_mut_slice(), &mut rng);
        let take = ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        for &i in &members[..take] {
            is_test[i] = true;
        }
    }
    let mut train = LabeledDataset {
        samples: Vec::new(),
        ..data.clone_empty()
    };
    let mut test = data.clone_empty();
    for (s, t) in data.samples.iter().zip(is_test) {
        if t {
            test.samples.push(s.clone());
        } else {
            train.samples.push(s.clone());
        }
    }
    Ok((train, test))
}

impl LabeledDataset {
    fn clone_empty(&self) -> Self {
        Self {
            samples: Vec::new(),
            label_names: self.label_names.clone(),
            task: self.task,
            descriptor: self.descriptor.clone(),
        }
    }
}

const CACHE_MAGIC: &[u8; 8] = b"ADBNDSET";
pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    descriptor: PreprocessDescriptor,
    task: TaskShape,
    label_names: Vec<String>,
    input_dim: usize,
    samples: Vec<CacheEntry>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    label: usize,
    structure: Structure,
    cracked: bool,
    source: String,
}

/// Writes the cache container: magic, format version, JSON header length,
/// JSON header, then every pixel as a little-endian `f64`.
pub fn write_cache(path: &Path, data: &LabeledDataset) -> Result<()> {
    let header = CacheHeader {
        descriptor: data.descriptor.clone(),
        task: data.task,
        label_names: data.label_names.clone(),
        input_dim: data.descriptor.input_dim(),
        samples: data
            .samples
            .iter()
            .map(|s| CacheEntry {
                label: s.label,
                structure: s.structure,
                cracked: s.cracked,
                source: s.source.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(20 + header.len() + 8 * data.len() * data.descriptor.input_dim());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for s in &data.samples {
        for p in &s.pixels {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    crate::io::write_atomic(path, &buf)
}

/// Reads a cache file. Returns `Ok(None)` when it was built with a different
/// preprocessing descriptor.
pub fn read_cache(path: &Path, expected: &PreprocessDescriptor) -> Result<Option<LabeledDataset>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |reason: &str| Error::Format {
        what: "dataset cache",
        reason: reason.to_string(),
    };
    if bytes.len() < 20 || &bytes[..8] != CACHE_MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CACHE_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CacheHeader = serde_json::from_slice(&bytes[20..header_end])?;
    if &header.descriptor != expected {
        return Ok(None);
    }
    let dim = header.input_dim;
    let body = &bytes[header_end..];
    if body.len() != 8 * dim * header.samples.len() {
        return Err(bad("pixel section length does not match header"));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let samples = header
        .samples
        .into_iter()
        .map(|e| LabeledSample {
            pixels: values.by_ref().take(dim).collect(),
            label: e.label,
            structure: e.structure,
            cracked: e.cracked,
            source: e.source,
        })
        .collect();
    let data = LabeledDataset {
        samples,
        label_names: header.label_names,
        task: header.task,
        descriptor: header.descriptor,
    };
    data.validate()?;
    Ok(Some(data))
}

#[derive(Debug, Serialize, Deserialize)]
struct RelabelRow {
    source: String,
    label: String,
}

/// Reads a `source,label` CSV.
pub fn read_relabels(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize() {
        let row: RelabelRow = row?;
        out.insert(row.source, row.label);
    }
    Ok(out)
}

pub fn write_relabels<W: Write>(out: W, rows: &[(String, String)]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["source", "label"])?;
    for (source, label) in rows {
        writer.write_record([source, label])?;
    }
    writer.flush()?;
    Ok(())
}
