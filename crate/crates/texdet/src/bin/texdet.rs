//! Command-line front end for the texture defect-detection pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use texdet::config::RunConfig;
use texdet::ensemble::{self, DetectionSet};
use texdet::error::Error;
use texdet::forest::{self, Dataset};
use texdet::imagecore::{load_image, AnnotatedImage, AnnotationFile, GrayImage};
use texdet::metrics::{self, CoverageRule};
use texdet::synthgen;
use texdet::texfeat::FeatureExtractor;
use texdet::windowing::{
    build_dataset, prepare_image, DatasetManifest, WindowLabel, WindowRecord,
};

type Result<T> = texdet::error::Result<T>;

#[derive(Parser)]
#[command(name = "texdet", about = "Texture defect detection pipeline", version)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, e.g. --set dataset.window.size=256. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker thread cap; never affects outputs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus with ground-truth annotations.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        n_images: usize,
    },
    /// Extract the labeled window features of a corpus.
    Dataset {
        #[arg(long)]
        images_dir: PathBuf,
        #[arg(long)]
        annotations_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a random forest on an extracted dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cross-validated hyperparameter search, then train the winner.
    Gridsearch {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Detect defects in images, emitting boxes and heatmaps.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Image files to process.
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Write 3-channel augmented composites for external detectors.
    Augment {
        #[arg(long)]
        images_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score detections against ground truth.
    Evaluate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.4)]
        coverage: f64,
    },
    /// Feature-family ablation table over a corpus.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Window/step/threshold sweep table over a corpus.
    Sweep {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        // ignored when a global pool already exists (e.g. in tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Argument(_) | Error::Format { .. } | Error::Io { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match &cli.cmd {
        Cmd::Synth { out_dir, n_images } => synth(&cfg, *n_images, out_dir),
        Cmd::Dataset {
            images_dir,
            annotations_dir,
            out_dir,
        } => dataset(&cfg, images_dir, annotations_dir, out_dir),
        Cmd::Train { dataset, out_dir } => train(&cfg, dataset, out_dir),
        Cmd::Gridsearch {
            dataset,
            out_dir,
            folds,
        } => gridsearch(&cfg, dataset, *folds, out_dir),
        Cmd::Detect {
            model,
            out_dir,
            images,
        } => detect(&cfg, model, images, out_dir),
        Cmd::Augment { images_dir, out_dir } => augment(&cfg, images_dir, out_dir),
        Cmd::Evaluate {
            detections,
            annotations,
            out_dir,
            coverage,
        } => evaluate(&cfg, detections, annotations, *coverage, out_dir),
        Cmd::Ablate { corpus, out_dir } => ablate(&cfg, corpus, out_dir),
        Cmd::Sweep { corpus, out_dir } => sweep(&cfg, corpus, out_dir),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: String,
    seed: u64,
    config: &'a RunConfig,
    artifacts: Vec<(String, String)>,
}

/// Records the resolved config and output hashes next to the outputs.
fn write_run_record(cfg: &RunConfig, command: &str, out_dir: &Path, artifacts: &[PathBuf]) -> Result<()> {
    let mut hashed = Vec::with_capacity(artifacts.len());
    for p in artifacts {
        hashed.push((p.display().to_string(), sha256_file(p)?));
    }
    write_json(
        &RunRecord {
            command: command.to_string(),
            seed: cfg.seed,
            config: cfg,
            artifacts: hashed,
        },
        &out_dir.join("run.json"),
    )
}

/// Sorted (image, annotation) pairs of a corpus laid out as
/// `images/NNNN.png` + `annotations/NNNN.json`.
fn corpus_pairs(images_dir: &Path, annotations_dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut ids: Vec<String> = fs::read_dir(annotations_dir)
        .map_err(|e| Error::io(annotations_dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension().is_some_and(|x| x == "json"))
                .then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Argument(format!(
            "no annotation files in {}",
            annotations_dir.display()
        )));
    }
    ids.iter()
        .map(|id| {
            let ann = annotations_dir.join(format!("{id}.json"));
            for ext in ["png", "pgm"] {
                let img = images_dir.join(format!("{id}.{ext}"));
                if img.exists() {
                    return Ok((img, ann));
                }
            }
            Err(Error::Argument(format!(
                "no image for annotation id '{id}' in {}",
                images_dir.display()
            )))
        })
        .collect()
}

fn load_raw_corpus(images_dir: &Path, annotations_dir: &Path) -> Result<Vec<AnnotatedImage<f64>>> {
    corpus_pairs(images_dir, annotations_dir)?
        .into_iter()
        .map(|(img_path, ann_path)| {
            let img: GrayImage<f64> = load_image(&img_path)?;
            let ann = AnnotationFile::load(&ann_path)?;
            AnnotatedImage::new(img, ann.annotations, ann.source_id)
        })
        .collect()
}

fn load_corpus_dir(corpus: &Path) -> Result<Vec<AnnotatedImage<f64>>> {
    load_raw_corpus(&corpus.join("images"), &corpus.join("annotations"))
}

fn synth(cfg: &RunConfig, n_images: usize, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let manifest = synthgen::generate_corpus(n_images, &cfg.synth, cfg.seed, out_dir)?;
    println!(
        "wrote {} images to {}",
        manifest.entries.len(),
        out_dir.display()
    );
    write_run_record(cfg, "synth", out_dir, &[out_dir.join("manifest.json")])
}

fn dataset(
    cfg: &RunConfig,
    images_dir: &Path,
    annotations_dir: &Path,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let raw = load_raw_corpus(images_dir, annotations_dir)?;
    let spec = cfg.dataset.window;
    let prepared: Vec<AnnotatedImage<f64>> = raw
        .iter()
        .map(|img| prepare_image(img, spec.size, spec.step, cfg.blur_sigma))
        .collect::<Result<_>>()?;
    let rows = build_dataset(&prepared, &cfg.dataset)?;
    if rows.is_empty() {
        return Err(Error::Training("no windows were retained".into()));
    }
    let features_path = out_dir.join("features.jsonl");
    let mut lines = String::new();
    for row in &rows {
        lines.push_str(&serde_json::to_string(&WindowRecord::from_labeled(row, spec.size))?);
        lines.push('\n');
    }
    fs::write(&features_path, lines).map_err(|e| Error::io(&features_path, e))?;
    let mut class_counts: Vec<(String, usize)> = WindowLabel::ALL
        .iter()
        .map(|l| (l.name().to_string(), rows.iter().filter(|r| r.label == *l).count()))
        .collect();
    class_counts.retain(|(_, n)| *n > 0);
    let manifest = DatasetManifest {
        config: cfg.dataset.clone(),
        class_counts,
        feature_names: rows[0].features.names.as_ref().clone(),
    };
    let manifest_path = out_dir.join("manifest.json");
    write_json(&manifest, &manifest_path)?;
    println!("wrote {} windows to {}", rows.len(), features_path.display());
    write_run_record(cfg, "dataset", out_dir, &[features_path, manifest_path])
}

/// Rebuilds an in-memory dataset from `features.jsonl` + `manifest.json`.
fn load_feature_dataset(dir: &Path) -> Result<Dataset<f64>> {
    let manifest_path = dir.join("manifest.json");
    let manifest: DatasetManifest = serde_json::from_str(
        &fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
    )
    .map_err(|e| Error::Format {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    let features_path = dir.join("features.jsonl");
    let text = fs::read_to_string(&features_path).map_err(|e| Error::io(&features_path, e))?;
    let records: Vec<WindowRecord> = text
        .lines()
        .map(|line| {
            serde_json::from_str(line).map_err(|e| Error::Format {
                path: features_path.clone(),
                reason: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    if records.is_empty() {
        return Err(Error::Training("empty feature file".into()));
    }
    let present: Vec<WindowLabel> = WindowLabel::ALL
        .iter()
        .copied()
        .filter(|l| records.iter().any(|r| r.label == *l))
        .collect();
    let classes: Vec<String> = present.iter().map(|l| l.name().to_string()).collect();
    let labels = records
        .iter()
        .map(|r| present.iter().position(|l| *l == r.label).unwrap())
        .collect();
    let rows: Vec<Vec<f64>> = records.into_iter().map(|r| r.features).collect();
    Dataset::from_rows(&rows, labels, classes, manifest.feature_names)
}

fn train(cfg: &RunConfig, dataset_dir: &Path, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let data = load_feature_dataset(dataset_dir)?;
    let model = forest::train_forest(&data, &cfg.train)?;
    let model_path = out_dir.join("model.json");
    forest::save_model(&model, &model_path)?;
    let report_path = out_dir.join("training_report.json");
    write_json(
        &serde_json::json!({
            "n_samples": data.n_samples(),
            "n_features": data.n_features(),
            "classes": data.classes,
            "oob_accuracy": model.oob_accuracy,
        }),
        &report_path,
    )?;
    match model.oob_accuracy {
        Some(acc) => println!("trained {} trees, OOB accuracy {acc:.3}", cfg.train.n_trees),
        None => println!("trained {} trees", cfg.train.n_trees),
    }
    write_run_record(cfg, "train", out_dir, &[model_path, report_path])
}

fn gridsearch(cfg: &RunConfig, dataset_dir: &Path, folds: usize, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let data = load_feature_dataset(dataset_dir)?;
    let grid = forest::TrainConfig::default_grid();
    let (best, report) = forest::grid_search_cv(&data, &grid, folds, cfg.seed)?;
    let model = forest::train_forest(&data, &best)?;
    let model_path = out_dir.join("best_model.json");
    forest::save_model(&model, &model_path)?;
    let report_path = out_dir.join("cv_report.json");
    write_json(&report, &report_path)?;
    println!(
        "selected config {} of {} (mean macro-F1 {:.3})",
        report.selected,
        grid.len(),
        report.mean_macro_f1[report.selected]
    );
    write_run_record(cfg, "gridsearch", out_dir, &[model_path, report_path])
}

/// Feature-family letters inferred from a model's column names.
fn flags_of_names(names: &[String]) -> String {
    let mut letters = String::new();
    for (prefix, letter) in [("lbp_", 'L'), ("glcm_", 'G'), ("fft_", 'F'), ("wav_", 'W')] {
        if names.iter().any(|n| n.starts_with(prefix)) {
            letters.push(letter);
        }
    }
    letters
}

fn detect(cfg: &RunConfig, model_path: &Path, images: &[PathBuf], out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let model = forest::load_model::<f64>(model_path)?;
    let extractor = FeatureExtractor::new(cfg.dataset.flags, cfg.dataset.features.clone())?;
    if *extractor.names().as_ref() != model.feature_names {
        return Err(Error::Argument(format!(
            "configured feature flags {} do not match the model's {}",
            cfg.dataset.flags,
            flags_of_names(&model.feature_names)
        )));
    }
    let mut artifacts = Vec::new();
    for image_path in images {
        let img: GrayImage<f64> = load_image(image_path)?;
        let stem = image_path
            .file_stem()
            .ok_or_else(|| Error::Argument(format!("bad image path {}", image_path.display())))?
            .to_string_lossy()
            .into_owned();
        let (detections, heatmaps) = ensemble::detect_image(
            &img,
            &stem,
            &model,
            &cfg.dataset.window,
            &extractor,
            &cfg.ensemble,
            cfg.blur_sigma,
        )?;
        let det_path = out_dir.join(format!("{stem}_detections.json"));
        write_json(&detections, &det_path)?;
        ensemble::write_heatmap_pngs(&heatmaps, out_dir, &stem)?;
        println!("{stem}: {} detections", detections.detections.len());
        artifacts.push(det_path);
    }
    write_run_record(cfg, "detect", out_dir, &artifacts)
}

fn augment(cfg: &RunConfig, images_dir: &Path, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(images_dir)
        .map_err(|e| Error::io(images_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "png" || x == "pgm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Argument(format!(
            "no images in {}",
            images_dir.display()
        )));
    }
    let mut artifacts = Vec::new();
    for path in &paths {
        let img: GrayImage<f64> = load_image(path)?;
        let out = out_dir.join(format!(
            "{}.png",
            path.file_stem().unwrap().to_string_lossy()
        ));
        texdet::augment::compose_channels(&img, &cfg.augment, &out)?;
        artifacts.push(out);
    }
    println!("augmented {} images into {}", paths.len(), out_dir.display());
    write_run_record(cfg, "augment", out_dir, &artifacts)
}

fn evaluate(
    cfg: &RunConfig,
    detections: &Path,
    annotations: &Path,
    coverage: f64,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let dets: DetectionSet = serde_json::from_str(
        &fs::read_to_string(detections).map_err(|e| Error::io(detections, e))?,
    )
    .map_err(|e| Error::Format {
        path: detections.to_path_buf(),
        reason: e.to_string(),
    })?;
    let truth = AnnotationFile::load(annotations)?;
    let report = metrics::match_detections(
        &dets,
        &truth.annotations,
        coverage,
        CoverageRule::default(),
    )?;
    println!(
        "precision {:.3} recall {:.3} f1 {:.3} (tp {} fp {} fn {})",
        report.overall.precision(),
        report.overall.recall(),
        report.overall.f1(),
        report.overall.tp_weighted,
        report.overall.fp,
        report.overall.fn_
    );
    for (class, counts) in &report.per_class {
        println!(
            "  {class}: precision {:.3} recall {:.3} f1 {:.3}",
            counts.precision(),
            counts.recall(),
            counts.f1()
        );
    }
    let report_path = out_dir.join("match_report.json");
    write_json(&report, &report_path)?;
    write_run_record(cfg, "evaluate", out_dir, &[report_path])
}

fn ablate(cfg: &RunConfig, corpus: &Path, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let raw = load_corpus_dir(corpus)?;
    let spec = cfg.dataset.window;
    let prepared: Vec<AnnotatedImage<f64>> = raw
        .iter()
        .map(|img| prepare_image(img, spec.size, spec.step, cfg.blur_sigma))
        .collect::<Result<_>>()?;
    let rows = metrics::ablation_harness(&prepared, &cfg.dataset, &cfg.train)?;
    print!("{}", metrics::render_ablation_table(&rows));
    let rows_path = out_dir.join("ablation.json");
    write_json(&rows, &rows_path)?;
    write_run_record(cfg, "ablate", out_dir, &[rows_path])
}

fn sweep(cfg: &RunConfig, corpus: &Path, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let raw = load_corpus_dir(corpus)?;
    let (windows, steps, thresholds) = metrics::paper_sweep_grid();
    let rows = metrics::grid_harness(
        &raw,
        &windows,
        &steps,
        &thresholds,
        &cfg.dataset,
        &cfg.train,
        cfg.blur_sigma,
    )?;
    print!("{}", metrics::render_sweep_table(&rows));
    let rows_path = out_dir.join("sweep.json");
    write_json(&rows, &rows_path)?;
    write_run_record(cfg, "sweep", out_dir, &[rows_path])
}
