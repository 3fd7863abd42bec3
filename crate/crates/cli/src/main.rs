//! `adbn`: train, evaluate, inspect and audit adaptive Deep Belief Networks
//! for crack detection.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal error |
//! | 2 | invalid configuration or arguments, refused overwrite |
//! | 3 | dataset or file error (missing root, no images, undecodable image, empty split, I/O) |
//! | 4 | numeric blow-up during training; previous outputs are left untouched |
//! | 5 | incompatible checkpoint (version, malformed file, preprocessing or label mismatch) |

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adbn::dataset::{self, FolderCodes, LabeledDataset, Structure, SyntheticSpec, TaskShape};
use adbn::run::{self, Checkpoint, DataSource, RunConfig};
use adbn::{audit, dbn, io, Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::ArrayView1;

#[derive(Parser)]
#[command(name = "adbn", version, about = "Adaptive structural learning DBN for crack detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, metrics, config echo and reports.
    Train {
        /// TOML run configuration; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with = "no_fine_tune")]
        fine_tune: bool,
        #[arg(long)]
        no_fine_tune: bool,
        /// `source,label` CSV of corrected labels.
        #[arg(long)]
        relabels: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint on its dataset (or the one in `--config`).
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Apply the fine-tune override table.
        #[arg(long)]
        fine_tune: bool,
        #[arg(long)]
        relabels: Option<PathBuf>,
        /// Also write report.txt and report.json here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Classify image files.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fine_tune: bool,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Print the learned structure and recorded metrics.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Copy misclassified samples into per-confusion folders for review.
    ExportMisclassified {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        fine_tune: bool,
        #[arg(long)]
        relabels: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Write a synthetic dataset as an SDNET2018-style image tree plus a
    /// run config pointing at it.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1200)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[arg(long, default_value = "deck", value_parser = parse_structure)]
        structure: Structure,
        #[arg(long, default_value_t = 0.5)]
        crack_fraction: f64,
        #[arg(long, default_value_t = 1.0 / 6.0)]
        test_fraction: f64,
        #[arg(long)]
        force: bool,
    },
}

fn parse_structure(s: &str) -> std::result::Result<Structure, String> {
    Structure::parse(s).ok_or_else(|| format!("unknown structure {s:?} (deck, wall, pavement)"))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig { .. } => 2,
        Error::Io(_)
        | Error::Csv(_)
        | Error::Image(_)
        | Error::Decode { .. }
        | Error::DegenerateImage
        | Error::NoImages(_)
        | Error::MissingRoot(_)
        | Error::Stratify(_)
        | Error::Empty(_)
        | Error::LabelOutOfRange { .. } => 3,
        Error::NonFinite(_) => 4,
        Error::DescriptorMismatch { .. } | Error::Version { .. } | Error::Format { .. } | Error::Json(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            seed,
            out,
            fine_tune,
            no_fine_tune,
            relabels,
            force,
        } => {
            let mut config = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(out) = out {
                config.out_dir = out;
            }
            if fine_tune {
                config.fine_tune = true;
            }
            if no_fine_tune {
                config.fine_tune = false;
            }
            if relabels.is_some() {
                config.relabels = relabels;
            }
            train(&config, force)
        }
        Command::Evaluate {
            checkpoint,
            config,
            split,
            fine_tune,
            relabels,
            out,
            force,
        } => evaluate(&checkpoint, config.as_deref(), split, fine_tune, relabels, out.as_deref(), force),
        Command::Predict {
            checkpoint,
            fine_tune,
            images,
        } => predict(&checkpoint, fine_tune, &images),
        Command::Inspect { checkpoint } => inspect(&checkpoint),
        Command::ExportMisclassified {
            checkpoint,
            config,
            out,
            split,
            fine_tune,
            relabels,
            force,
        } => {
            run::check_overwrite(&[out.join(audit::AUDIT_MANIFEST), out.join(audit::RELABEL_FILE)], force)?;
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let data = split_data(&checkpoint, config.as_deref(), relabels, split)?;
            let rows = audit::export_misclassified(&checkpoint.model, &data, &out, fine_tune)?;
            println!("{} of {} samples misclassified, exported to {}", rows.len(), data.len(), out.display());
            Ok(())
        }
        Command::Synth {
            out,
            seed,
            n,
            side,
            structure,
            crack_fraction,
            test_fraction,
            force,
        } => {
            let spec = SyntheticSpec {
                n,
                crack_fraction,
                side,
                seed,
                structure,
                test_fraction,
            };
            synth(&spec, &out, force)
        }
    }
}

fn train(config: &RunConfig, force: bool) -> Result<()> {
    config.validate()?;
    let out = &config.out_dir;
    run::check_overwrite(&[out.join(run::CHECKPOINT_FILE), out.join(run::METRICS_FILE)], force)?;
    let output = run::run_training(config)?;
    run::write_outputs(out, &output, true)?;
    let table = match &output.test_report {
        Some(test) => dbn::render_table(Some(&output.train_report), test),
        None => dbn::render_table(None, &output.train_report),
    };
    print!("{table}");
    println!("hidden sizes: {:?}", output.checkpoint.model.hidden_sizes());
    println!("outputs written to {}", out.display());
    Ok(())
}

fn split_data(checkpoint: &Checkpoint, config: Option<&Path>, relabels: Option<PathBuf>, split: Split) -> Result<LabeledDataset> {
    let mut config = match config {
        Some(path) => RunConfig::load(path)?,
        None => checkpoint.config.clone(),
    };
    if relabels.is_some() {
        config.relabels = relabels;
    }
    let data = run::load_data(&config)?;
    let chosen = match split {
        Split::Train => data.train,
        Split::Test => data.test,
    };
    if chosen.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    checkpoint.check_descriptor(&chosen.descriptor)?;
    if chosen.label_names != checkpoint.model.label_names {
        return Err(Error::Format {
            what: "dataset",
            reason: format!(
                "labels {:?} do not match the model's {:?}",
                chosen.label_names, checkpoint.model.label_names
            ),
        });
    }
    Ok(chosen)
}

fn evaluate(
    checkpoint: &Path,
    config: Option<&Path>,
    split: Split,
    fine_tune: bool,
    relabels: Option<PathBuf>,
    out: Option<&Path>,
    force: bool,
) -> Result<()> {
    if let Some(out) = out {
        run::check_overwrite(&[out.join(run::REPORT_TEXT_FILE), out.join(run::REPORT_JSON_FILE)], force)?;
    }
    let checkpoint = Checkpoint::load(checkpoint)?;
    let data = split_data(&checkpoint, config, relabels, split)?;
    let report = checkpoint.model.evaluate(data.inputs().view(), &data.labels(), fine_tune)?;
    let table = dbn::render_table(None, &report);
    print!("{table}");
    println!("misclassified: {}/{}", report.incorrect, report.total);
    if let Some(out) = out {
        io::write_atomic(&out.join(run::REPORT_TEXT_FILE), table.as_bytes())?;
        io::write_atomic(&out.join(run::REPORT_JSON_FILE), serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(())
}

fn predict(checkpoint: &Path, fine_tune: bool, images: &[PathBuf]) -> Result<()> {
    let checkpoint = Checkpoint::load(checkpoint)?;
    let model = &checkpoint.model;
    for path in images {
        let pixels = dataset::preprocess_file(path, &checkpoint.descriptor)?;
        let p = model.predict(ArrayView1::from(&pixels), fine_tune)?;
        let probs: Vec<String> = model
            .label_names
            .iter()
            .zip(&p.probabilities)
            .map(|(name, q)| format!("{name}={q:.4}"))
            .collect();
        println!(
            "{}\t{}\t{:.4}\t{}\toverride={}",
            path.display(),
            model.label_names[p.label],
            p.probabilities[p.label],
            probs.join(","),
            p.overridden
        );
    }
    Ok(())
}

fn inspect(checkpoint: &Path) -> Result<()> {
    let checkpoint = Checkpoint::load(checkpoint)?;
    print!("{}", run::structure_summary(&checkpoint));
    let m = &checkpoint.metrics;
    println!(
        "train: {:.1}% ({} misclassified)",
        100.0 * m.train_accuracy,
        m.train_misclassified
    );
    if let (Some(acc), Some(wrong)) = (m.test_accuracy, m.test_misclassified) {
        println!("test: {:.1}% ({wrong} misclassified)", 100.0 * acc);
    }
    if let Some(ft) = &m.fine_tune {
        println!(
            "fine-tune: {} overrides, train errors {} -> {}",
            ft.overrides_added, ft.misclassified_before, ft.misclassified_after
        );
    }
    Ok(())
}

fn synth(spec: &SyntheticSpec, out: &Path, force: bool) -> Result<()> {
    spec.validate()?;
    run::check_overwrite(&[out.join("train"), out.join("test"), out.join(run::CONFIG_FILE)], force)?;
    if force {
        for split in ["train", "test"] {
            let dir = out.join(split);
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
        }
    }
    let all = dataset::generate_synthetic(spec, TaskShape::Binary)?;
    let (train, test) = dataset::split(&all, spec.test_fraction, spec.seed)?;
    let codes = FolderCodes::default();
    let written = dataset::write_sdnet_tree(out, &train, &test, &codes)?;

    let mut config = RunConfig {
        seed: spec.seed,
        structure: Some(spec.structure),
        data: DataSource::Sdnet {
            root: out.to_path_buf(),
            codes,
            test_fraction: spec.test_fraction,
        },
        ..Default::default()
    };
    config.preprocess.target_side = spec.side;
    io::write_atomic(&out.join(run::CONFIG_FILE), config.to_toml()?.as_bytes())?;
    println!(
        "{written} images written to {} ({} train, {} test)",
        out.display(),
        train.len(),
        test.len()
    );
    Ok(())
}
