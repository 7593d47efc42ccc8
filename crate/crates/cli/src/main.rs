use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use microquant_core::dataset::{
    self, load_csv_dataset, load_image_dir_dataset, load_image_dir_sources, synth_dataset_styled, synth_sources,
    write_csv, write_image_dir, Dataset, SynthStyle,
};
use microquant_core::eval::{agreement, evaluate, Classifier};
use microquant_core::experiment::{run_experiment, run_synthetic, ExperimentConfig};
use microquant_core::footprint::{footprint, DEFAULT_BUDGET_BYTES};
use microquant_core::format::{load_model, save_model, ModelFile};
use microquant_core::imaging::{augment_interpolation, augment_standard, normalize, read_pnm, resize, write_pgm, AugmentParams};
use microquant_core::netgraph::{Architecture, ModelSpec};
use microquant_core::quantizer::{quantize_with_representative, DEFAULT_REPRESENTATIVE_SAMPLES};
use microquant_core::trainer::{fit, split_validation, EpochRecord, TrainConfig};
use microquant_core::InterpMethod;

#[derive(Parser)]
#[command(name = "microquant", version, about = "Train, quantize and evaluate tiny int8 image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Interp {
    Nearest,
    Bilinear,
    Area,
    Bicubic,
    Lanczos4,
}

impl From<Interp> for InterpMethod {
    fn from(i: Interp) -> Self {
        match i {
            Interp::Nearest => InterpMethod::Nearest,
            Interp::Bilinear => InterpMethod::Bilinear,
            Interp::Area => InterpMethod::Area,
            Interp::Bicubic => InterpMethod::Bicubic,
            Interp::Lanczos4 => InterpMethod::Lanczos4,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Clean,
    Cluttered,
}

#[derive(Clone, Copy, ValueEnum)]
enum AugmentMode {
    Standard,
    Interpolation,
}

#[derive(Args)]
struct DataArgs {
    /// CSV file (`label,pixel1..pixel784`) or a directory of per-class PGM folders.
    #[arg(long)]
    data: PathBuf,
    /// Interpolation used when loading images that are not 28×28.
    #[arg(long, value_enum, default_value = "area")]
    interp: Interp,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV or as per-class PGM folders.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 24)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "clean")]
        style: Style,
        /// Keep the full 240×240 renderings instead of downscaling to 28×28.
        #[arg(long)]
        sources: bool,
    },
    /// Train a float model and save it.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Architecture JSON; defaults to the bundled 28×28 reference model.
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.001)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Save the best weights here after every improving epoch.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Convert a float model to int8 using a representative set.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_REPRESENTATIVE_SAMPLES)]
        representative: usize,
    },
    /// Accuracy and confusion matrix of a float or int8 model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Float model to compare predictions against (for int8 models).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Also write the confusion matrix as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Classify one image.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum, default_value = "area")]
        interp: Interp,
    },
    /// Write augmented variants of one image.
    Augment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "standard")]
        mode: AugmentMode,
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Model size and activation scratch against a byte budget.
    Footprint {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BUDGET_BYTES)]
        budget_bytes: usize,
    },
    /// Standard versus interpolation augmentation, float and int8.
    Experiment {
        /// Directory of full-resolution per-class PGM sources; synthetic
        /// data is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// 28×28 test set (CSV or image folders); required with --data.
        #[arg(long)]
        test: Option<PathBuf>,
        /// 28×28 generalization set; required with --data.
        #[arg(long)]
        generalization: Option<PathBuf>,
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Training-set size of each arm; defaults to five per source.
        #[arg(long)]
        train_size: Option<usize>,
        #[arg(long, default_value_t = 10)]
        sources_per_class: usize,
        #[arg(long, default_value_t = 10)]
        test_per_class: usize,
        #[arg(long, default_value_t = 10)]
        generalization_per_class: usize,
        /// Use standard augmentation in both arms.
        #[arg(long)]
        control: bool,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_data(path: &Path, interp: Interp) -> Result<Dataset> {
    let ds = if path.is_dir() {
        load_image_dir_dataset(path, interp.into())
    } else {
        load_csv_dataset(path)
    };
    ds.with_context(|| format!("loading {}", path.display()))
}

fn load_arch(path: Option<&Path>) -> Result<Architecture> {
    match path {
        None => Ok(Architecture::reference()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Architecture::from_json(&text)?)
        }
    }
}

fn load(path: &Path) -> Result<ModelFile> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn classifier(file: &ModelFile) -> &dyn Classifier {
    match file {
        ModelFile::Float(m) => m,
        ModelFile::Quantized(q) => q,
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: &'a Path,
    parameters: usize,
    train_samples: usize,
    validation_samples: usize,
    best_epoch: usize,
    history: &'a [EpochRecord],
}

#[derive(Serialize)]
struct Prediction {
    class: usize,
    letter: String,
    probabilities: Vec<f32>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth {
            out,
            per_class,
            classes,
            seed,
            style,
            sources,
        } => {
            let style = match style {
                Style::Clean => SynthStyle::Clean,
                Style::Cluttered => SynthStyle::Cluttered,
            };
            let ds = if sources {
                synth_sources(classes, per_class, seed, style)?
            } else {
                synth_dataset_styled(classes, per_class, seed, style)?
            };
            if out.extension().is_some_and(|e| e == "csv") {
                if sources {
                    bail!("CSV rows hold 28x28 images; write full-size sources to a directory");
                }
                write_csv(&ds, &out)?;
            } else {
                write_image_dir(&ds, &out)?;
            }
            print_json(&serde_json::json!({
                "out": out,
                "samples": ds.len(),
                "classes": classes,
                "seed": seed,
            }))?;
        }
        Command::Train {
            data,
            out,
            arch,
            epochs,
            batch_size,
            learning_rate,
            seed,
            checkpoint,
        } => {
            let ds = load_data(&data.data, data.interp)?;
            let arch = load_arch(arch.as_deref())?;
            let cfg = TrainConfig {
                epochs,
                batch_size,
                learning_rate,
                seed,
                checkpoint_path: checkpoint,
                ..TrainConfig::default()
            };
            let (train, val) = split_validation(&ds.examples(), cfg.validation_split, seed);
            let init = ModelSpec::he_uniform(arch, seed)?;
            let outcome = fit(init, &train, &val, &cfg)?;
            save_model(&out, &ModelFile::Float(outcome.model.clone()))?;
            print_json(&TrainSummary {
                model: &out,
                parameters: outcome.model.param_count(),
                train_samples: train.len(),
                validation_samples: val.len(),
                best_epoch: outcome.best_epoch,
                history: &outcome.history,
            })?;
        }
        Command::Quantize {
            model,
            data,
            out,
            representative,
        } => {
            let ModelFile::Float(float) = load(&model)? else {
                bail!("{} is already quantized", model.display());
            };
            let ds = load_data(&data.data, data.interp)?;
            let rep: Vec<_> = ds
                .examples()
                .into_iter()
                .take(representative.max(1))
                .map(|e| e.input)
                .collect();
            let qm = quantize_with_representative(&float, &rep)?;
            let file = ModelFile::Quantized(qm);
            save_model(&out, &file)?;
            print_json(&serde_json::json!({
                "model": out,
                "representative_samples": rep.len(),
                "footprint": footprint(&file, DEFAULT_BUDGET_BYTES)?,
            }))?;
        }
        Command::Eval {
            model,
            data,
            reference,
            csv,
        } => {
            let file = load(&model)?;
            let ds = load_data(&data.data, data.interp)?;
            let report = evaluate(classifier(&file), &ds)?;
            let agree = match (&file, reference) {
                (ModelFile::Quantized(q), Some(r)) => {
                    let ModelFile::Float(f) = load(&r)? else {
                        bail!("reference model must be float");
                    };
                    Some(agreement(&f, q, &ds)?)
                }
                (_, Some(_)) => bail!("--reference applies to quantized models"),
                _ => None,
            };
            if let Some(path) = csv {
                let mut w = fs::File::create(&path)?;
                let n = report.confusion.len();
                let names: Vec<String> = (0..n).map(dataset::class_name).collect();
                writeln!(w, "truth,{}", names.join(","))?;
                for (t, row) in report.confusion.iter().enumerate() {
                    let cells: Vec<String> = row.iter().map(u64::to_string).collect();
                    writeln!(w, "{},{}", names[t], cells.join(","))?;
                }
            }
            print_json(&serde_json::json!({
                "quantized": file.is_quantized(),
                "report": report,
                "agreement": agree,
            }))?;
        }
        Command::Infer {
            model,
            image,
            interp,
        } => {
            let file = load(&model)?;
            let img = read_pnm(&image)?;
            let shape = &file.arch().input_shape;
            let img = if shape.len() == 3 && (img.height(), img.width()) != (shape[0], shape[1]) {
                resize(&img, shape[1], shape[0], interp.into())?
            } else {
                img
            };
            let scores = classifier(&file).scores(&normalize(&img))?;
            let class = scores.argmax();
            print_json(&Prediction {
                class,
                letter: dataset::class_name(class),
                probabilities: scores.into_data(),
            })?;
        }
        Command::Augment {
            image,
            out,
            mode,
            count,
            seed,
        } => {
            let img = read_pnm(&image)?;
            fs::create_dir_all(&out)?;
            let images = match mode {
                AugmentMode::Interpolation => augment_interpolation(&img, dataset::IMAGE_SIDE)?,
                AugmentMode::Standard => {
                    let base = if img.width() == dataset::IMAGE_SIDE && img.height() == dataset::IMAGE_SIDE {
                        img
                    } else {
                        resize(&img, dataset::IMAGE_SIDE, dataset::IMAGE_SIDE, InterpMethod::Area)?
                    };
                    (0..count)
                        .map(|i| {
                            augment_standard(
                                &base,
                                &AugmentParams {
                                    seed: seed.wrapping_add(i as u64),
                                    ..AugmentParams::default()
                                },
                            )
                        })
                        .collect::<microquant_core::Result<_>>()?
                }
            };
            let mut written = Vec::new();
            for (i, im) in images.iter().enumerate() {
                let name = match mode {
                    AugmentMode::Interpolation => format!("{}.pgm", InterpMethod::ALL[i].name()),
                    AugmentMode::Standard => format!("{i:03}.pgm"),
                };
                let path = out.join(name);
                write_pgm(&path, im)?;
                written.push(path);
            }
            print_json(&serde_json::json!({ "written": written }))?;
        }
        Command::Footprint {
            model,
            budget_bytes,
        } => {
            let file = load(&model)?;
            print_json(&footprint(&file, budget_bytes)?)?;
        }
        Command::Experiment {
            data,
            test,
            generalization,
            arch,
            seed,
            epochs,
            batch_size,
            train_size,
            sources_per_class,
            test_per_class,
            generalization_per_class,
            control,
            out,
            csv,
        } => {
            let cfg = ExperimentConfig {
                arch: load_arch(arch.as_deref())?,
                train: TrainConfig {
                    epochs,
                    batch_size,
                    seed,
                    ..TrainConfig::default()
                },
                train_size,
                control,
                sources_per_class,
                test_per_class,
                generalization_per_class,
                ..ExperimentConfig::default()
            };
            let report = match data {
                None => run_synthetic(&cfg)?,
                Some(dir) => {
                    let (Some(test), Some(gen)) = (test, generalization) else {
                        bail!("--data needs --test and --generalization");
                    };
                    let sources = load_image_dir_sources(&dir)?;
                    let test = load_data(&test, Interp::Area)?;
                    let gen = load_data(&gen, Interp::Area)?;
                    run_experiment(&sources, &test, &gen, &cfg)?
                }
            };
            let json = report.to_json();
            if let Some(path) = out {
                fs::write(&path, format!("{json}\n"))?;
            }
            if let Some(path) = csv {
                report.write_csv(fs::File::create(&path)?)?;
            }
            println!("{json}");
        }
    }
    Ok(())
}
