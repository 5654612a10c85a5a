//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data or
//! validation error, 3 runtime failure (I/O on outputs, network,
//! diverged training).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fashionkit::config::Config;
use fashionkit::datasets::{load_png, save_png, synth, Role};
use fashionkit::draw;
use fashionkit::error::Error;
use fashionkit::eval;
use fashionkit::json::{self, Value};
use fashionkit::pipeline::{Bundle, Pipeline, TaskKind};
use fashionkit::runner::{load_checkpoint, save_checkpoint};
use fashionkit::zoo;

#[derive(Parser)]
#[command(
    name = "fashionkit",
    version,
    about = "Train, evaluate, and demo visual fashion analysis models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Directory for run logs, checkpoints, and other outputs.
    #[arg(long, global = true, value_name = "D")]
    work_dir: Option<PathBuf>,
    /// Dotted-path config override, e.g. schedule.max_epochs=2. Values
    /// parse as JSON, falling back to bare strings. Repeatable.
    #[arg(long = "override", global = true, value_name = "K=V")]
    overrides: Vec<String>,
    /// Print the runner's event trace after training.
    #[arg(long, global = true)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        config: PathBuf,
        /// Checkpoint to resume from.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
        /// Accept a checkpoint written under a different resolved config.
        #[arg(long)]
        allow_fingerprint_mismatch: bool,
    },
    /// Grade a predictions document against annotations.
    Evaluate {
        /// attribute | landmark | retrieval | compat | instances
        task: String,
        predictions: PathBuf,
        annotations: PathBuf,
        /// Metric report output path.
        out: PathBuf,
        /// Also write the report's curves to a separate file.
        #[arg(long, value_name = "PATH")]
        curves: Option<PathBuf>,
    },
    /// Run one image through a trained checkpoint.
    Demo {
        config: PathBuf,
        checkpoint: PathBuf,
        image: PathBuf,
        /// Results to print for ranked outputs.
        #[arg(long, default_value_t = 3)]
        topk: usize,
        /// Item type to suggest for outfit completion.
        #[arg(long, default_value = "top")]
        item_type: String,
        /// Annotated image output path.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Accept a checkpoint written under a different resolved config.
        #[arg(long)]
        allow_fingerprint_mismatch: bool,
    },
    /// List or fetch pretrained models from a zoo manifest.
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// attribute | landmark | retrieval | instances | compat
        task: String,
        /// Images, items, or outfits to generate, task-dependent.
        n: usize,
        seed: u64,
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum ZooAction {
    /// Print one line per manifest entry.
    List {
        /// Manifest path or http(s) URL.
        #[arg(long)]
        manifest: String,
    },
    /// Download and verify a model artifact.
    Fetch {
        model_id: String,
        /// Manifest path or http(s) URL.
        #[arg(long)]
        manifest: String,
        /// Directory to place the artifact in.
        #[arg(long)]
        dest: PathBuf,
    },
}

/// Which phase an error surfaced in; decides the exit code together
/// with the error class.
#[derive(Clone, Copy, PartialEq)]
enum Stage {
    /// Reading and merging configuration: everything is a usage error.
    Config,
    /// Loading datasets, checkpoints, predictions: I/O counts as bad
    /// input data.
    Data,
    /// Training and writing outputs: I/O is a runtime failure.
    Run,
}

struct Failure {
    stage: Stage,
    error: Error,
}

impl Failure {
    fn code(&self) -> u8 {
        if self.stage == Stage::Config {
            return 1;
        }
        match self.error {
            Error::Config(_)
            | Error::MissingPath { .. }
            | Error::WrongType { .. }
            | Error::MergeConflict { .. }
            | Error::DuplicateEntry { .. }
            | Error::UnknownType { .. } => 1,
            Error::Json { .. }
            | Error::ParseLine { .. }
            | Error::Validation(_)
            | Error::Shape(_)
            | Error::Checkpoint(_)
            | Error::FingerprintMismatch { .. }
            | Error::Metric(_) => 2,
            Error::Io { .. } => match self.stage {
                Stage::Data => 2,
                _ => 3,
            },
            Error::NonFiniteLoss { .. }
            | Error::Zoo(_)
            | Error::ChecksumMismatch { .. }
            | Error::Http { .. } => 3,
        }
    }
}

trait Staged<T> {
    fn at(self, stage: Stage) -> Result<T, Failure>;
}

impl<T> Staged<T> for fashionkit::error::Result<T> {
    fn at(self, stage: Stage) -> Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

fn main() -> ExitCode {
    // Die quietly on a closed pipe, like other line-oriented tools.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Train {
            config,
            resume,
            allow_fingerprint_mismatch,
        } => cmd_train(&config, &cli.common, resume.as_deref(), allow_fingerprint_mismatch),
        Command::Evaluate {
            task,
            predictions,
            annotations,
            out,
            curves,
        } => cmd_evaluate(&task, &predictions, &annotations, &out, curves.as_deref()),
        Command::Demo {
            config,
            checkpoint,
            image,
            topk,
            item_type,
            out,
            allow_fingerprint_mismatch,
        } => cmd_demo(
            &config,
            &checkpoint,
            &image,
            topk,
            &item_type,
            out.as_deref(),
            allow_fingerprint_mismatch,
            &cli.common,
        ),
        Command::Zoo { action } => cmd_zoo(action),
        Command::Synth {
            task,
            n,
            seed,
            out_dir,
        } => cmd_synth(&task, n, seed, &out_dir),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.error);
            ExitCode::from(failure.code())
        }
    }
}

/// Splits `--override` arguments at the first `=`.
fn parse_override_args(args: &[String]) -> fashionkit::error::Result<Vec<(String, String)>> {
    args.iter()
        .map(|arg| {
            arg.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| {
                    Error::Config(format!("override \"{arg}\" must look like key=value"))
                })
        })
        .collect()
}

fn load_config(path: &Path, common: &Common) -> Result<Config, Failure> {
    let base = Config::load(path).at(Stage::Config)?;
    let pairs = parse_override_args(&common.overrides).at(Stage::Config)?;
    if pairs.is_empty() {
        return Ok(base);
    }
    let overrides = Config::from_overrides(&pairs).at(Stage::Config)?;
    base.merged_with(&overrides).at(Stage::Config)
}

fn write_text(path: &Path, text: &str) -> fashionkit::error::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_train(
    config_path: &Path,
    common: &Common,
    resume: Option<&Path>,
    allow_mismatch: bool,
) -> Result<(), Failure> {
    let config = load_config(config_path, common)?;
    let mut pipeline = Pipeline::build(&config, common.work_dir.as_deref()).at(Stage::Data)?;
    if let Some(ckpt_path) = resume {
        let ckpt = load_checkpoint(ckpt_path).at(Stage::Data)?;
        pipeline.runner.resume(&ckpt, allow_mismatch).at(Stage::Data)?;
        println!(
            "resumed from {} at epoch {}",
            ckpt_path.display(),
            ckpt.state.epoch
        );
    }
    if common.trace {
        pipeline.runner.enable_trace();
    }
    if let Some(dir) = &common.work_dir {
        let resolved = dir.join("resolved_config.json");
        config.save(&resolved).at(Stage::Run)?;
    }

    let state = pipeline.run().at(Stage::Run)?;

    for warning in &pipeline.runner.warnings {
        eprintln!("warning: {warning}");
    }
    let loss = pipeline.runner.last_loss;
    let loss = if loss.is_finite() {
        format!(", final loss {loss:.6}")
    } else {
        // A resume at max_epochs runs no training step.
        String::new()
    };
    println!(
        "trained {} for {} epochs ({} iterations){loss}",
        pipeline.kind.as_str(),
        state.epoch,
        state.iter
    );
    for (epoch, report) in &pipeline.runner.reports {
        let line: Vec<String> = report
            .scalars
            .iter()
            .map(|(k, v)| format!("{k} {v:.6}"))
            .collect();
        println!("eval @ epoch {epoch}: {}", line.join("  "));
    }
    if let Some(dir) = &common.work_dir {
        let ckpt_path = dir.join("final.ckpt");
        save_checkpoint(&pipeline.runner, &ckpt_path).at(Stage::Run)?;
        println!("wrote {}", ckpt_path.display());
        let doc = pipeline.predictions().at(Stage::Run)?;
        let text = json::to_string_pretty(&doc).at(Stage::Run)?;
        let pred_path = dir.join("predictions.json");
        write_text(&pred_path, &text).at(Stage::Run)?;
        println!("wrote {}", pred_path.display());
    }
    if let Some(trace) = pipeline.runner.trace() {
        for line in trace {
            println!("trace: {line}");
        }
    }
    Ok(())
}

fn cmd_evaluate(
    task: &str,
    predictions: &Path,
    annotations: &Path,
    out: &Path,
    curves: Option<&Path>,
) -> Result<(), Failure> {
    let report = eval::evaluate_files(task, predictions, annotations).at(Stage::Data)?;
    write_text(out, &report.to_string_stable()).at(Stage::Run)?;
    for (name, value) in &report.scalars {
        println!("{name} {value:.6}");
    }
    println!("wrote {}", out.display());
    if let Some(path) = curves {
        let doc = Value::Map(
            report
                .curves
                .iter()
                .map(|(k, pts)| {
                    let list = pts
                        .iter()
                        .map(|(x, y)| Value::List(vec![Value::from(*x), Value::from(*y)]))
                        .collect();
                    (k.clone(), Value::List(list))
                })
                .collect(),
        );
        let text =
            json::to_string_styled(&doc, true, json::FloatStyle::Fixed(6)).at(Stage::Run)?;
        write_text(path, &text).at(Stage::Run)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Ranked top-k indices: ascending when `ascending`, ties by index.
fn ranked(scores: &[f64], k: usize, ascending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = scores[a].total_cmp(&scores[b]);
        if ascending { ord } else { ord.reverse() }.then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

#[allow(clippy::too_many_arguments)]
fn cmd_demo(
    config_path: &Path,
    checkpoint_path: &Path,
    image_path: &Path,
    topk: usize,
    item_type: &str,
    out: Option<&Path>,
    allow_mismatch: bool,
    common: &Common,
) -> Result<(), Failure> {
    let config = load_config(config_path, common)?;
    let mut pipeline = Pipeline::build_for_inference(&config).at(Stage::Data)?;
    let ckpt = load_checkpoint(checkpoint_path).at(Stage::Data)?;
    pipeline
        .runner
        .resume(&ckpt, allow_mismatch)
        .at(Stage::Data)?;
    let image = load_png(image_path).at(Stage::Data)?;
    let backbone = &pipeline.model.backbone;
    if image.channels != backbone.in_channels {
        return Err(Failure {
            stage: Stage::Data,
            error: Error::Validation(format!(
                "{}: {} channels, the model expects {}",
                image_path.display(),
                image.channels,
                backbone.in_channels
            )),
        });
    }
    if image.height < backbone.min_input() || image.width < backbone.min_input() {
        return Err(Failure {
            stage: Stage::Data,
            error: Error::Validation(format!(
                "{}: {}x{} is smaller than the model minimum {}",
                image_path.display(),
                image.width,
                image.height,
                backbone.min_input()
            )),
        });
    }

    let model = &pipeline.model;
    let params = &pipeline.runner.params;
    match pipeline.kind {
        TaskKind::Attribute => {
            let Bundle::Attribute { train, val } = &pipeline.bundle else {
                unreachable!("bundle matches kind");
            };
            let landmarks = demo_landmarks(image_path, train, val.as_ref()).at(Stage::Data)?;
            let logits = model
                .attribute_logits(params, &image, landmarks)
                .at(Stage::Data)?;
            for (rank, i) in ranked(&logits, topk.min(logits.len()), false).iter().enumerate() {
                println!(
                    "{}. {} {:.4}",
                    rank + 1,
                    train.attr_names[*i],
                    sigmoid(logits[*i])
                );
            }
        }
        TaskKind::Landmark => {
            let points = model.landmark_predict(params, &image).at(Stage::Data)?;
            let (w, h) = (image.width as f64, image.height as f64);
            let pixels: Vec<(f64, f64)> =
                points.iter().map(|(x, y, _)| (x * w, y * h)).collect();
            for (i, ((px, py), (_, _, vis))) in pixels.iter().zip(&points).enumerate() {
                println!("landmark {i}: x {px:.1}  y {py:.1}  visibility {vis:.3}");
            }
            let out_path = annotated_path(image_path, out, common);
            let annotated = draw::annotate_landmarks(&image, &pixels);
            save_png(&out_path, &annotated).at(Stage::Run)?;
            println!("wrote {}", out_path.display());
        }
        TaskKind::Retrieval => {
            let Bundle::Retrieval { data } = &pipeline.bundle else {
                unreachable!("bundle matches kind");
            };
            let query = model.embedding(params, &image).at(Stage::Data)?;
            let gallery = data.indices_with_role(Role::Gallery);
            if gallery.is_empty() {
                return Err(Failure {
                    stage: Stage::Data,
                    error: Error::Validation("the split has no gallery images".into()),
                });
            }
            let mut dists = Vec::with_capacity(gallery.len());
            for &gi in &gallery {
                let emb = model.embedding(params, &data.images[gi]).at(Stage::Data)?;
                let d: f64 = query
                    .iter()
                    .zip(&emb)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dists.push(d);
            }
            for (rank, i) in ranked(&dists, topk.min(dists.len()), true).iter().enumerate() {
                let record = &data.records[gallery[*i]];
                println!(
                    "{}. {} {} distance {:.6}",
                    rank + 1,
                    record.item_id,
                    record.image_path,
                    dists[*i]
                );
            }
        }
        TaskKind::Compat => {
            let Bundle::Compat { data } = &pipeline.bundle else {
                unreachable!("bundle matches kind");
            };
            let head = model.compat_head().at(Stage::Data)?;
            let hp = model.head_params(params);
            let query = model.embedding(params, &image).at(Stage::Data)?;
            let context = [(query.as_slice(), "query")];
            let mut ids = Vec::new();
            let mut scores = Vec::new();
            for item in data.items.iter().filter(|it| it.item_type == item_type) {
                let emb = model.embedding(params, &item.image).at(Stage::Data)?;
                let score = head
                    .fitb_score(hp, (&emb, item_type), &context)
                    .at(Stage::Data)?;
                ids.push(item.item_id.clone());
                scores.push(score);
            }
            if ids.is_empty() {
                return Err(Failure {
                    stage: Stage::Data,
                    error: Error::Validation(format!(
                        "the dataset has no items of type \"{item_type}\""
                    )),
                });
            }
            // Lower pair distance means a better completion.
            for (rank, i) in ranked(&scores, topk.min(ids.len()), true).iter().enumerate() {
                println!("{}. {} distance {:.6}", rank + 1, ids[*i], scores[*i]);
            }
        }
    }
    Ok(())
}

/// Landmarks for the demo image, required when the model pools by
/// landmark. Matches the image by trailing path components.
fn demo_landmarks<'a>(
    image_path: &Path,
    train: &'a fashionkit::datasets::AttributeData,
    val: Option<&'a fashionkit::datasets::AttributeData>,
) -> fashionkit::error::Result<Option<&'a [fashionkit::datasets::Landmark]>> {
    let sets = std::iter::once(train).chain(val);
    let mut needs_landmarks = false;
    for set in sets {
        let Some(attached) = &set.landmarks else {
            continue;
        };
        needs_landmarks = true;
        for (record, marks) in set.records.iter().zip(&attached.per_image) {
            if image_path.ends_with(&record.image_path) {
                return Ok(Some(marks));
            }
        }
    }
    if needs_landmarks {
        return Err(Error::Validation(format!(
            "{}: no landmarks on file for this image, which landmark pooling needs",
            image_path.display()
        )));
    }
    Ok(None)
}

/// `--out` wins; otherwise the annotated copy lands in the work dir,
/// falling back to the current directory.
fn annotated_path(image_path: &Path, out: Option<&Path>, common: &Common) -> PathBuf {
    if let Some(path) = out {
        return path.to_path_buf();
    }
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "demo".into());
    let name = format!("{stem}.annotated.png");
    match &common.work_dir {
        Some(dir) => dir.join(name),
        None => PathBuf::from(name),
    }
}

fn cmd_zoo(action: ZooAction) -> Result<(), Failure> {
    match action {
        ZooAction::List { manifest } => {
            let manifest = zoo::ZooManifest::load(&manifest).at(Stage::Data)?;
            for entry in &manifest.entries {
                let metrics: Vec<String> = entry
                    .metrics
                    .iter()
                    .map(|(k, v)| format!("{k}={v:.4}"))
                    .collect();
                println!(
                    "{}\t{}\t{} bytes\t{}",
                    entry.model_id,
                    entry.task,
                    entry.byte_size,
                    metrics.join(",")
                );
            }
        }
        ZooAction::Fetch {
            model_id,
            manifest,
            dest,
        } => {
            let manifest = zoo::ZooManifest::load(&manifest).at(Stage::Data)?;
            let entry = manifest.entry(&model_id).at(Stage::Data)?;
            let path = zoo::fetch(entry, &dest).at(Stage::Run)?;
            println!("fetched {} to {}", entry.model_id, path.display());
        }
    }
    Ok(())
}

fn cmd_synth(task: &str, n: usize, seed: u64, out_dir: &Path) -> Result<(), Failure> {
    let task: synth::SynthTask = task.parse().at(Stage::Config)?;
    let spec = synth::SynthSpec::new(task, n, seed);
    let data = synth::generate(&spec).at(Stage::Data)?;
    let files = synth::write_to_dir(&data, out_dir).at(Stage::Run)?;
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    println!(
        "wrote {} dataset under {} (annotations: {})",
        task.as_str(),
        out_dir.display(),
        names.join(", ")
    );
    Ok(())
}
