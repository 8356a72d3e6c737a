//! `spectra`: extract features, train, fine-tune, evaluate and explain.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use spectra::config::{parse_stages, ConfigFile};
use spectra::dataset::{
    describe_record, extract, DatasetReader, DatasetWriter, ExtractOptions, ImageStageData,
    Manifest, OnError, RecomputePatches, Split,
};
use spectra::degrade::{apply_level, DegradationLevel};
use spectra::error::{Error, ErrorClass, Result, ResultExt};
use spectra::evaluation::{evaluate, render_table, MetricReport};
use spectra::model::{forward, Checkpoint, Mode, ModelParams};
use spectra::preprocess::RgbImage;
use spectra::record::{Label, RecordSource};
use spectra::semantic::{stub, ContentId, EmbeddingFile, SemanticProvider};
use spectra::train::{progressive_finetune, train, MetricsLog, OptimizerState, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "spectra",
    version,
    about = "Multi-view AI-generated image detector"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Master seed; overrides `seed` from the config file
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract multi-view records from a manifest into an SPDS dataset
    Extract(ExtractArgs),
    /// Write stub global descriptors for every manifest image to an SPCE file
    StubEmbed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch (or resume) on an SPDS dataset
    Train(TrainArgs),
    /// Progressive fine-tuning through degradation stages
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint on one or more datasets
    Evaluate(EvaluateArgs),
    /// Score one image and write its patch heatmap
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        semantic: SemanticArgs,
    },
    /// Degrade every image in a directory at one level
    Degrade {
        /// Canonical level 1-5, or `sigma:quality`
        #[arg(long)]
        level: DegradationLevel,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one dataset record as text
    Inspect {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        index: usize,
        /// Also print all 2401 patch rows
        #[arg(long)]
        patches: bool,
    },
}

#[derive(Args, Debug)]
struct SemanticArgs {
    /// SPCE embedding file; without it the stub descriptor is used
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Use the stub for ids missing from the embedding file
    #[arg(long)]
    fallback_to_stub: bool,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Only extract rows of this split
    #[arg(long)]
    split: Option<Split>,
    /// Store patch matrices inline (about 2.3 MB per record)
    #[arg(long)]
    patches: bool,
    /// Skip images that are missing or cannot be decoded
    #[arg(long)]
    skip_bad_images: bool,
    #[command(flatten)]
    semantic: SemanticArgs,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Manifest used to recompute patches when the dataset omits them
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output checkpoint
    #[arg(long)]
    out: PathBuf,
    /// Resume from this checkpoint instead of a fresh initialization
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    /// CSV metrics log
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    /// Base checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Images to fine-tune on
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    /// Directory for `stage-<k>.spck`
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma list of levels, overriding the config schedule
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    semantic: SemanticArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset to score; repeat for several splits (named by file stem)
    #[arg(long, required = true)]
    dataset: Vec<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Write the CSV report here instead of stdout
    #[arg(long)]
    csv: Option<PathBuf>,
}

struct Context {
    config: ConfigFile,
    train: TrainConfig,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(path) => ConfigFile::read(path)?,
            None => ConfigFile::default(),
        };
        let mut train = TrainConfig::default();
        config.apply(&mut train)?;
        if let Some(seed) = cli.seed {
            train.seed = seed;
        }
        Ok(Context { config, train })
    }

    fn flag(&self, cli_value: bool, key: &str) -> Result<bool> {
        Ok(cli_value || self.config.get::<bool>(key)?.unwrap_or(false))
    }

    fn provider(&self, args: &SemanticArgs) -> Result<SemanticProvider> {
        let path = args
            .embeddings
            .clone()
            .or_else(|| self.config.get_str("embeddings").map(PathBuf::from));
        Ok(match path {
            Some(path) => SemanticProvider::File {
                embeddings: EmbeddingFile::read(&path)?,
                fallback_to_stub: self.flag(args.fallback_to_stub, "fallback_to_stub")?,
            },
            None => SemanticProvider::Stub,
        })
    }
}

fn open_source(data: &DataArgs) -> Result<Box<dyn RecordSource>> {
    let reader = DatasetReader::open(&data.dataset)?;
    match (&data.manifest, reader.patches_inline()) {
        (_, true) => Ok(Box::new(reader)),
        (Some(m), false) => Ok(Box::new(RecomputePatches::new(
            reader,
            &Manifest::read(m)?,
        )?)),
        (None, false) => Err(Error::config(format!(
            "{} stores no patches; pass --manifest to recompute them",
            data.dataset.display()
        ))),
    }
}

fn metrics_log(path: &Option<PathBuf>) -> Result<Option<MetricsLog<BufWriter<File>>>> {
    path.as_ref()
        .map(|p| {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            MetricsLog::new(BufWriter::new(f))
        })
        .transpose()
}

fn run_extract(ctx: &Context, args: &ExtractArgs) -> Result<()> {
    let mut manifest = Manifest::read(&args.manifest)?;
    if let Some(split) = args.split {
        manifest = manifest.filter(split);
    }
    let provider = ctx.provider(&args.semantic)?;
    let options = ExtractOptions {
        include_patches: ctx.flag(args.patches, "patches_inline")?,
        on_error: if ctx.flag(args.skip_bad_images, "skip_bad_images")? {
            OnError::Skip
        } else {
            OnError::Abort
        },
    };
    let mut writer = DatasetWriter::create(&args.out, options.include_patches)?;
    let summary = extract(&manifest, &provider, options, &mut writer)?;
    writer.finish()?;
    println!(
        "wrote {} records to {} ({} skipped)",
        summary.written,
        args.out.display(),
        summary.skipped.len()
    );
    Ok(())
}

fn run_stub_embed(manifest: &Path, out: &Path) -> Result<()> {
    let manifest = Manifest::read(manifest)?;
    let mut file = EmbeddingFile::new();
    for entry in &manifest.entries {
        let id = ContentId::of_image(&RgbImage::open(&entry.path)?);
        file.insert(id, stub(&id))?;
    }
    file.write(out)?;
    println!("wrote {} embeddings to {}", file.len(), out.display());
    Ok(())
}

fn run_train(ctx: &Context, args: &TrainArgs) -> Result<()> {
    let mut cfg = ctx.train.clone();
    cfg.epochs = args.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.lr = args.lr.unwrap_or(cfg.lr);
    cfg.validate()?;
    let source = open_source(&args.data)?;
    let (mut params, mut state) = match &args.init {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            (ck.params, ck.optimizer.unwrap_or_default())
        }
        None => (ModelParams::init(cfg.seed), OptimizerState::new()),
    };
    let mut log = metrics_log(&args.metrics)?;
    let reports = train(
        source.as_ref(),
        &mut params,
        &mut state,
        &cfg,
        0,
        |r| match &mut log {
            Some(log) => log.record(r),
            None => Ok(()),
        },
    )?;
    Checkpoint {
        params,
        optimizer: Some(state),
    }
    .save(&args.out)?;
    if let Some(last) = reports.last() {
        println!("final loss {:.6}", last.loss);
    }
    println!("saved {}", args.out.display());
    Ok(())
}

fn run_finetune(ctx: &Context, args: &FinetuneArgs) -> Result<()> {
    let mut cfg = ctx.train.clone();
    if let Some(stages) = &args.stages {
        cfg.stages = parse_stages(stages)?;
    }
    cfg.finetune.epochs = args.epochs.unwrap_or(cfg.finetune.epochs);
    cfg.validate()?;
    let base = Checkpoint::load(&args.checkpoint)
        .map_err(|e| Error::config(format!("cannot load base checkpoint: {e}")))?;
    let manifest = Manifest::read(&args.manifest)?.filter(args.split);
    let data = ImageStageData::from_manifest(&manifest, ctx.provider(&args.semantic)?)?;
    fs::create_dir_all(&args.out_dir)?;
    let mut log = metrics_log(&args.metrics)?;
    let outcomes =
        progressive_finetune(Some(&base), &cfg.stages, &data, &cfg, |r| match &mut log {
            Some(log) => log.record(r),
            None => Ok(()),
        })?;
    for (k, outcome) in outcomes.iter().enumerate() {
        let path = args.out_dir.join(format!("stage-{}.spck", k + 1));
        outcome.checkpoint.save(&path)?;
        println!(
            "stage {} (level {}): saved {}",
            k + 1,
            outcome.level,
            path.display()
        );
    }
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let params = Checkpoint::load(&args.checkpoint)?.params;
    let mut rows = Vec::new();
    for path in &args.dataset {
        let source = open_source(&DataArgs {
            dataset: path.clone(),
            manifest: args.manifest.clone(),
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        rows.push((name, evaluate(&params, source.as_ref())?));
    }
    let mut csv = format!("{}\n", MetricReport::CSV_HEADER);
    for (name, report) in &rows {
        csv.push_str(&report.csv_row(name));
        csv.push('\n');
    }
    match &args.csv {
        Some(path) => {
            fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{csv}"),
    }
    print!("{}", render_table(&rows));
    Ok(())
}

fn heatmap_path(image: &Path, ext: &str) -> PathBuf {
    let stem = image.file_stem().unwrap_or_default().to_string_lossy();
    image.with_file_name(format!("{stem}.heatmap.{ext}"))
}

fn run_infer(
    ctx: &Context,
    image: &Path,
    checkpoint: &Path,
    semantic: &SemanticArgs,
) -> Result<()> {
    let params = Checkpoint::load(checkpoint)?.params;
    let img = RgbImage::open(image)?;
    let record =
        spectra::dataset::extract_record(&img, Label::Real, &ctx.provider(semantic)?, true)?;
    let prediction = forward(&record, &params, Mode::Inference)?;
    let (pgm, csv) = (heatmap_path(image, "pgm"), heatmap_path(image, "csv"));
    prediction.heatmap.write_pgm(&pgm)?;
    prediction.heatmap.write_csv(&csv)?;
    println!("{}", prediction.probability);
    log::info!("heatmap written to {} and {}", pgm.display(), csv.display());
    Ok(())
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn run_degrade(level: DegradationLevel, input: &Path, out: &Path) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("listing {}", input.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file() && is_image(p));
    paths.sort();
    fs::create_dir_all(out)?;
    for path in &paths {
        let img = RgbImage::open(path)?;
        let target = out.join(path.file_name().unwrap()).with_extension("png");
        apply_level(&img, level)?.save(&target)?;
    }
    println!(
        "degraded {} images at level {level} into {}",
        paths.len(),
        out.display()
    );
    Ok(())
}

fn run_inspect(dataset: &Path, index: usize, patches: bool) -> Result<()> {
    let record = DatasetReader::open(dataset)?.read_record(index)?;
    let mut out = std::io::stdout().lock();
    out.write_all(describe_record(&record, patches).as_bytes())?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Extract(args) => run_extract(&ctx, args),
        Command::StubEmbed { manifest, out } => run_stub_embed(manifest, out),
        Command::Train(args) => run_train(&ctx, args),
        Command::Finetune(args) => run_finetune(&ctx, args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Infer {
            image,
            checkpoint,
            semantic,
        } => run_infer(&ctx, image, checkpoint, semantic),
        Command::Degrade { level, input, out } => run_degrade(*level, input, out),
        Command::Inspect {
            dataset,
            index,
            patches,
        } => run_inspect(dataset, *index, *patches),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
