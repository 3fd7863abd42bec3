//! Export of misclassified samples for expert review.
//!
//! Every misclassified sample lands in `<out>/<true>__predicted-<pred>/`,
//! either as a copy of its source file or, for samples without one, as a
//! rendered PNG. `audit.csv` lists each exported sample and `relabels.csv`
//! is a `source,label` file pre-filled with the current annotations; edited
//! copies of it are accepted by training as label overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dataset::{self, LabeledDataset};
use crate::dbn::DbnModel;
use crate::error::{Error, Result};

pub const AUDIT_MANIFEST: &str = "audit.csv";
pub const RELABEL_FILE: &str = "relabels.csv";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRow {
    pub source: String,
    pub true_label: String,
    pub predicted_label: String,
    /// Model probability of the predicted label.
    pub probability: f64,
    pub overridden: bool,
    pub exported: String,
}

pub fn partition_dir(true_label: &str, predicted: &str) -> String {
    format!("{true_label}__predicted-{predicted}")
}

fn file_name(index: usize, source: &str) -> String {
    let path = Path::new(source);
    if path.is_file() {
        let base = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        format!("{index:06}_{base}")
    } else {
        format!("{index:06}.png")
    }
}

/// Writes the export and returns its rows.
pub fn export_misclassified(
    model: &DbnModel,
    data: &LabeledDataset,
    out_dir: &Path,
    use_fine_tune: bool,
) -> Result<Vec<AuditRow>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", out_dir.display()))))?;
    let predictions = if data.is_empty() {
        Vec::new()
    } else {
        model.predict_batch(data.inputs().view(), use_fine_tune)?
    };
    let names = &model.label_names;
    let mut rows = Vec::new();
    for (index, (sample, pred)) in data.samples.iter().zip(predictions).enumerate() {
        if pred.label == sample.label {
            continue;
        }
        let dir = out_dir.join(partition_dir(&names[sample.label], &names[pred.label]));
        fs::create_dir_all(&dir)?;
        let target: PathBuf = dir.join(file_name(index, &sample.source));
        let source_path = Path::new(&sample.source);
        if source_path.is_file() {
            fs::copy(source_path, &target)?;
        } else {
            dataset::render_sample(sample, &data.descriptor).save(&target)?;
        }
        rows.push(AuditRow {
            source: sample.source.clone(),
            true_label: names[sample.label].clone(),
            predicted_label: names[pred.label].clone(),
            probability: pred.probabilities[pred.label],
            overridden: pred.overridden,
            exported: target.strip_prefix(out_dir).unwrap_or(&target).to_string_lossy().into_owned(),
        });
    }

    let mut writer = csv::Writer::from_path(out_dir.join(AUDIT_MANIFEST))?;
    if rows.is_empty() {
        writer.write_record(["source", "true_label", "predicted_label", "probability", "overridden", "exported"])?;
    }
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;

    let relabels: Vec<(String, String)> = rows.iter().map(|r| (r.source.clone(), r.true_label.clone())).collect();
    dataset::write_relabels(fs::File::create(out_dir.join(RELABEL_FILE))?, &relabels)?;
    Ok(rows)
}
