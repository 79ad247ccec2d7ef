//! Command-line entry point: training, evaluation, prediction, and container
//! inspection over the CIFAR-10 binary distribution.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::dataset::{
    load_cifar10_test, load_cifar10_train, parse_cifar10_batch, LabeledImage, RECORD_BYTES,
};
use crate::error::{exit_code, Error, Result};
use crate::pipeline::{
    build_confusion_sets, evaluate, predict_pair, predict_stage1, resolve_decision, top_pair,
    train_pair_model, train_stage1, PairModel, Stage1Model,
};
use crate::report::{PhaseTimer, RunReport};
use crate::store::{self, Bundle};

#[derive(Parser)]
#[command(
    name = "epixelhop",
    version,
    about = "Two-stage subspace-learning image classifier for CIFAR-10"
)]
struct Cli {
    /// Worker threads (0 = all cores). Thread count never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the multi-class baseline and write stage1.epx.
    TrainStage1 {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Train one-vs-one confusion-set models against a stage-1 container.
    TrainPairs {
        #[arg(long)]
        config: PathBuf,
        /// Path to the stage-1 container whose features are reused.
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override how many top-priority confusion sets get models.
        #[arg(long)]
        resolve_top_k: Option<usize>,
        /// Write one container per pair instead of a single pairs.epx.
        #[arg(long)]
        split: bool,
    },
    /// Evaluate on the test batch; write metric CSVs and sample heatmaps.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
        /// Pairs container(s) for two-stage evaluation; repeatable.
        #[arg(long)]
        pairs: Vec<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        resolve_top_k: Option<usize>,
    },
    /// Print class probabilities for one image (3073-byte record or 3072
    /// raw planar bytes).
    Predict {
        #[arg(long)]
        stage1: PathBuf,
        /// Pairs container(s); repeatable.
        #[arg(long)]
        pairs: Vec<PathBuf>,
        image: PathBuf,
        /// Where to write per-hop label heatmaps (skipped when absent).
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print a container's chunk directory and model shapes.
    Inspect { path: PathBuf },
}

/// Log level from EPXHOP_LOG: off, info (default), debug.
fn log_level() -> u8 {
    static LEVEL: OnceLock<u8> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("EPXHOP_LOG").as_deref() {
        Ok("off") => 0,
        Ok("debug") => 2,
        _ => 1,
    })
}

pub(crate) fn info(msg: &str) {
    if log_level() >= 1 {
        eprintln!("[epixelhop] {msg}");
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn load_stage1(path: &Path) -> Result<Stage1Model> {
    match store::load(path)? {
        Bundle::Stage1(model) => Ok(*model),
        Bundle::Pairs(_) => Err(Error::Config(format!(
            "{} holds pair models, expected a stage-1 container",
            path.display()
        ))),
    }
}

fn load_pairs(paths: &[PathBuf]) -> Result<Vec<PairModel>> {
    let mut all = Vec::new();
    for path in paths {
        match store::load(path)? {
            Bundle::Pairs(pairs) => all.extend(pairs),
            Bundle::Stage1(_) => {
                return Err(Error::Config(format!(
                    "{} holds a stage-1 model, expected a pairs container",
                    path.display()
                )))
            }
        }
    }
    Ok(all)
}

fn apply_overrides(
    cfg: &mut RunConfig,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    resolve_top_k: Option<usize>,
) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if let Some(k) = resolve_top_k {
        cfg.resolve_top_k = k;
    }
}

fn cmd_train_stage1(cfg: &RunConfig) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    let mut report = RunReport::new("train-stage1", cfg.seed, cfg.echo());
    let mut timer = PhaseTimer::start();

    let train = load_cifar10_train(&cfg.data_dir)?;
    info(&format!("loaded {} training images", train.len()));
    timer.lap(&mut report, "load-data");

    let model = train_stage1(&train, &cfg.pipeline_config())?;
    timer.lap(&mut report, "train-stage1");
    report.record_shapes(&model.cascade_p, &model.cascade_q);

    let out = cfg.output_dir.join("stage1.epx");
    store::save(&Bundle::Stage1(Box::new(model)), &out)?;
    timer.lap(&mut report, "save");
    report.add_output(&out);
    let report_path = report.write(&cfg.output_dir)?;
    info(&format!(
        "wrote {} and {}",
        out.display(),
        report_path.display()
    ));
    Ok(())
}

fn cmd_train_pairs(cfg: &RunConfig, stage1_path: &Path, split: bool) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    let mut report = RunReport::new("train-pairs", cfg.seed, cfg.echo());
    let mut timer = PhaseTimer::start();

    let stage1 = load_stage1(stage1_path)?;
    let train = load_cifar10_train(&cfg.data_dir)?;
    let test = load_cifar10_test(&cfg.data_dir)?;
    timer.lap(&mut report, "load");

    use rayon::prelude::*;
    let decisions: Vec<(u64, Vec<f64>)> = test
        .par_iter()
        .map(|img| Ok((img.id, predict_stage1(&stage1, img)?)))
        .collect::<Result<_>>()?;
    timer.lap(&mut report, "stage1-decisions");

    let sets = build_confusion_sets(&decisions);
    let k = cfg.resolve_top_k.min(sets.len());
    info(&format!(
        "{} confusion sets; training the top {k}",
        sets.len()
    ));
    let mut pairs = Vec::with_capacity(k);
    for set in sets.iter().take(k) {
        info(&format!(
            "pair {:?} with {} test members",
            set.pair,
            set.member_ids.len()
        ));
        pairs.push(train_pair_model(set.pair, &train, &stage1)?);
    }
    timer.lap(&mut report, "train-pairs");
    report.record_shapes(&stage1.cascade_p, &stage1.cascade_q);

    if split {
        for pair in pairs {
            let out = cfg
                .output_dir
                .join(format!("pair_{}_{}.epx", pair.pair.0, pair.pair.1));
            store::save(&Bundle::Pairs(vec![pair]), &out)?;
            report.add_output(&out);
        }
    } else {
        let out = cfg.output_dir.join("pairs.epx");
        store::save(&Bundle::Pairs(pairs), &out)?;
        report.add_output(&out);
    }
    timer.lap(&mut report, "save");
    let report_path = report.write(&cfg.output_dir)?;
    info(&format!("wrote run report {}", report_path.display()));
    Ok(())
}

/// Per-hop confidence maps of each image's predicted class, both channels.
fn write_sample_heatmaps(
    stage1: &Stage1Model,
    images: &[LabeledImage],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    use crate::heatmap::class_probability_grid;
    use crate::pipeline::{stage1_variant_maps, top_m};
    ensure_dir(dir)?;
    let classes = stage1.config.class_count;
    let mut written = Vec::new();
    for img in images {
        let soft = predict_stage1(stage1, img)?;
        let predicted = top_m(&soft, 1)[0];
        let (maps_p, maps_q) = stage1_variant_maps(stage1, img)?;
        for (tag, maps) in [("p", &maps_p), ("q", &maps_q)] {
            for (level, grid) in maps.iter().enumerate() {
                let plane = class_probability_grid(grid, predicted, classes)?;
                let path = dir.join(format!(
                    "img{}_{tag}_hop{}_class{predicted}.png",
                    img.id,
                    level + 2
                ));
                crate::heatmap::write_probability_heatmap(&plane, &path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

fn cmd_evaluate(cfg: &RunConfig, stage1_path: &Path, pairs_paths: &[PathBuf]) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    let mut report = RunReport::new("evaluate", cfg.seed, cfg.echo());
    let mut timer = PhaseTimer::start();

    let stage1 = load_stage1(stage1_path)?;
    let pairs = load_pairs(pairs_paths)?;
    let test = load_cifar10_test(&cfg.data_dir)?;
    timer.lap(&mut report, "load");

    let eval = evaluate(&stage1, &pairs, &test)?;
    timer.lap(&mut report, "evaluate");

    eval.write_csvs(&cfg.output_dir)?;
    for name in [
        "accuracy.csv",
        "confusion_matrix.csv",
        "resolved_curve.csv",
        "pair_accuracy.csv",
    ] {
        report.add_output(&cfg.output_dir.join(name));
    }
    let heatmap_dir = cfg.output_dir.join("heatmaps");
    for path in write_sample_heatmaps(&stage1, &test[..test.len().min(4)], &heatmap_dir)? {
        report.add_output(&path);
    }
    report.record_shapes(&stage1.cascade_p, &stage1.cascade_q);
    timer.lap(&mut report, "write-artifacts");
    report.write(&cfg.output_dir)?;

    for (name, t1, t2) in &eval.channel_rows {
        println!("{name}: top-1 {t1:.4}  top-2 {t2:.4}");
    }
    println!("final (two-stage): {:.4}", eval.final_accuracy);
    Ok(())
}

/// Read one image from a raw file: either a full 3073-byte labeled record or
/// 3072 planar pixel bytes.
fn read_image_file(path: &Path) -> Result<LabeledImage> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let record = match bytes.len() {
        n if n == RECORD_BYTES => bytes,
        n if n == RECORD_BYTES - 1 => {
            let mut rec = vec![0u8];
            rec.extend_from_slice(&bytes);
            rec
        }
        n => {
            return Err(Error::MalformedBatch {
                len: n,
                offset: n.min(RECORD_BYTES),
            })
        }
    };
    let mut images = parse_cifar10_batch(&record)?;
    let mut img = images.remove(0);
    img.label = None;
    Ok(img)
}

fn cmd_predict(
    stage1_path: &Path,
    pairs_paths: &[PathBuf],
    image_path: &Path,
    output_dir: Option<&Path>,
) -> Result<()> {
    let stage1 = load_stage1(stage1_path)?;
    let image = read_image_file(image_path)?;
    let soft = predict_stage1(&stage1, &image)?;
    for (class, p) in soft.iter().enumerate() {
        println!("class {class}: {p:.6}");
    }
    let mut label = resolve_decision(&soft, None);
    if !pairs_paths.is_empty() {
        let pairs = load_pairs(pairs_paths)?;
        let pair = top_pair(&soft);
        if let Some(model) = pairs.iter().find(|m| m.pair == pair) {
            let scores = predict_pair(model, &stage1, &image)?;
            label = resolve_decision(&soft, Some((pair, scores)));
            println!(
                "pair {:?} scores: {:.6} / {:.6}",
                pair, scores[0], scores[1]
            );
        }
    }
    println!("predicted class: {label}");
    if let Some(dir) = output_dir {
        let written = write_sample_heatmaps(&stage1, std::slice::from_ref(&image), dir)?;
        info(&format!(
            "wrote {} heatmaps to {}",
            written.len(),
            dir.display()
        ));
    }
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest = store::read_manifest(&bytes)?;
    println!("container: {} ({} bytes)", path.display(), bytes.len());
    println!(
        "{:<16} {:>10} {:>12} {:>10}",
        "chunk", "offset", "length", "crc32"
    );
    for info in &manifest {
        println!(
            "{:<16} {:>10} {:>12} {:>10x}",
            store::chunk_kind::name(info.kind),
            info.offset,
            info.len,
            info.crc32,
        );
    }
    match store::from_bytes(&bytes)? {
        Bundle::Stage1(model) => {
            println!("bundle: stage-1, {} classes", model.config.class_count);
            for (name, cascade) in [("P", &model.cascade_p), ("Q", &model.cascade_q)] {
                let shapes: Vec<String> = cascade
                    .output_shapes
                    .iter()
                    .map(|&(s, _, k)| format!("{s}x{s}x{k}"))
                    .collect();
                println!("cascade {name}: {}", shapes.join(" -> "));
            }
            println!(
                "meta: {} features, {} rounds",
                model.meta.feature_width, model.meta.params.rounds
            );
        }
        Bundle::Pairs(pairs) => {
            println!("bundle: {} pair models", pairs.len());
            for p in &pairs {
                println!(
                    "pair ({}, {}): meta {} features",
                    p.pair.0, p.pair.1, p.meta.feature_width
                );
            }
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        // Ignore failure when a global pool already exists (repeat calls in
        // one process, e.g. tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match cli.command {
        Command::TrainStage1 {
            config,
            seed,
            output_dir,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            apply_overrides(&mut cfg, seed, output_dir, None);
            cmd_train_stage1(&cfg)
        }
        Command::TrainPairs {
            config,
            stage1,
            seed,
            output_dir,
            resolve_top_k,
            split,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            apply_overrides(&mut cfg, seed, output_dir, resolve_top_k);
            cmd_train_pairs(&cfg, &stage1, split)
        }
        Command::Evaluate {
            config,
            stage1,
            pairs,
            output_dir,
            resolve_top_k,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            apply_overrides(&mut cfg, None, output_dir, resolve_top_k);
            cmd_evaluate(&cfg, &stage1, &pairs)
        }
        Command::Predict {
            stage1,
            pairs,
            image,
            output_dir,
        } => cmd_predict(&stage1, &pairs, &image, output_dir.as_deref()),
        Command::Inspect { path } => cmd_inspect(&path),
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I>(args: I) -> i32
where
    I: IntoIterator,
    I::Item: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own help/version output exits 0.
            let code = if e.use_stderr() { exit_code::CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
