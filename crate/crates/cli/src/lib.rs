//! The `smae` command line: `curate`, `pretrain`, `bench` and
//! `inspect-selection`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or runtime
//! error, 3 training divergence. Data goes to the output stream, diagnostics
//! to the error stream.

mod report;

pub use report::{emit_report, CSV_HEADER};

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use smae_core::config::{RunConfig, KEYS};
use smae_core::curation::{build_manifest, DedupConfig, SliceConfig};
use smae_core::hog::{hog_score, HogConfig};
use smae_core::imaging::{self, patchify, resize_region};
use smae_core::model::checkpoint::Checkpoint;
use smae_core::model::{forward_sample, ModelParams};
use smae_core::selection::{baseline_plan, plan_epoch_selection};
use smae_core::train::{
    bench_throughput, init_seed, selection_key, train, BenchConfig, Dataset, LogFormat, TrainLogRecord,
    TrainMode, TrainObserver, Trainer,
};
use smae_core::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

fn common_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("no-timestamps")
            .long("no-timestamps")
            .action(ArgAction::SetTrue)
            .help("Suppress wall-clock values so repeated runs match byte for byte"),
    )
    .arg(
        Arg::new("verbose")
            .short('v')
            .long("verbose")
            .action(ArgAction::Count)
            .help("More log output on the error stream"),
    )
}

/// Adds `--config` and one flag per configuration key.
fn config_args(mut cmd: Command) -> Command {
    let defaults = RunConfig::default();
    cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("Flat key=value file; flags override its values"),
    );
    for k in KEYS {
        let mut arg = Arg::new(k.key)
            .long(k.key)
            .value_name("VALUE")
            .help(format!("{} [default: {}]", k.help, defaults.get(k.key).expect("listed key")))
            .help_heading("Configuration keys");
        let dashed = k.key.replace('_', "-");
        if dashed != k.key {
            arg = arg.alias(dashed);
        }
        if let Some(alias) = k.alias {
            arg = arg.alias(alias);
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

fn cli() -> Command {
    let curate = common_args(
        Command::new("curate")
            .about("Slice, hash and deduplicate an image directory into a manifest")
            .arg(path_arg("input", "Directory of PNG/PGM/PPM images").required(true))
            .arg(path_arg("output", "Manifest to write").required(true))
            .arg(path_arg("slice-dir", "Where slices are written [default: <output>.slices]"))
            .arg(
                Arg::new("min-size")
                    .long("min-size")
                    .value_parser(value_parser!(usize))
                    .default_value("64"),
            )
            .arg(
                Arg::new("max-size")
                    .long("max-size")
                    .value_parser(value_parser!(usize))
                    .default_value("1024"),
            )
            .arg(
                Arg::new("crops-per-image")
                    .long("crops-per-image")
                    .value_parser(value_parser!(usize))
                    .default_value("4"),
            )
            .arg(
                Arg::new("hamming-threshold")
                    .long("hamming-threshold")
                    .value_parser(value_parser!(u32))
                    .default_value("5")
                    .help("Duplicate radius; the review band extends 3 bits further"),
            )
            .arg(Arg::new("seed").long("seed").value_parser(value_parser!(u64)).default_value("0"))
            .arg(Arg::new("workers").long("workers").value_parser(value_parser!(usize)).default_value("1")),
    );
    let pretrain = common_args(config_args(
        Command::new("pretrain")
            .about("Pre-train on a manifest (or a synthetic set) and stream one record per step")
            .arg(path_arg("manifest", "Curated manifest; kept records are the dataset"))
            .arg(path_arg("checkpoint", "Final checkpoint; periodic ones get a .epochK suffix"))
            .arg(path_arg("resume", "Continue from this checkpoint"))
            .arg(
                Arg::new("log-format")
                    .long("log-format")
                    .value_parser(["kv", "csv"])
                    .default_value("kv"),
            ),
    ));
    let bench = common_args(config_args(
        Command::new("bench")
            .about("Selective versus baseline throughput on one synthetic dataset")
            .arg(
                Arg::new("warmup-steps")
                    .long("warmup-steps")
                    .value_parser(value_parser!(usize))
                    .default_value("20"),
            )
            .arg(Arg::new("steps").long("steps").value_parser(value_parser!(usize)).default_value("200"))
            .arg(
                Arg::new("dataset-size")
                    .long("dataset-size")
                    .value_parser(value_parser!(usize))
                    .default_value("64"),
            )
            .arg(
                Arg::new("report")
                    .long("report")
                    .value_parser(["table", "csv"])
                    .default_value("table")
                    .help("Format on the output stream"),
            )
            .arg(path_arg("csv", "Also write the CSV report here")),
    ));
    let inspect = common_args(config_args(
        Command::new("inspect-selection")
            .about("Print the selection plan of one image as CSV")
            .arg(path_arg("image", "Image to inspect").required(true))
            .arg(
                Arg::new("epoch")
                    .long("epoch")
                    .value_parser(value_parser!(usize))
                    .default_value("1"),
            )
            .arg(path_arg("checkpoint", "Weights for the patch embeddings [default: fresh init]")),
    ));
    Command::new("smae")
        .about("HOG-guided selective masked image modeling")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .subcommands([curate, pretrain, bench, inspect])
}

fn run_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut rc = RunConfig::default();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        rc.apply_file(path)?;
    }
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.key) {
            rc.set(k.key, v)?;
        }
    }
    rc.validate()?;
    Ok(rc)
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

fn curate(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let input = m.get_one::<PathBuf>("input").expect("required");
    let output = m.get_one::<PathBuf>("output").expect("required");
    let slice_dir = m.get_one::<PathBuf>("slice-dir").cloned().unwrap_or_else(|| {
        let mut p = output.clone().into_os_string();
        p.push(".slices");
        PathBuf::from(p)
    });
    let slice = SliceConfig {
        min_size: *m.get_one("min-size").expect("default"),
        max_size: *m.get_one("max-size").expect("default"),
        crops_per_image: *m.get_one("crops-per-image").expect("default"),
        seed: *m.get_one("seed").expect("default"),
    };
    slice.validate()?;
    let dedup = DedupConfig { hamming_threshold: *m.get_one("hamming-threshold").expect("default") };
    let workers: usize = *m.get_one("workers").expect("default");
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    if !input.is_dir() {
        return Err(Error::io(input, std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory")));
    }
    let s = build_manifest(input, output, &slice_dir, &slice, &dedup, workers)?;
    writeln!(
        out,
        "files={} records={} kept={} duplicate_of={} review={} excluded={} kept_pixels={}",
        s.files, s.records, s.kept, s.duplicates, s.review, s.excluded, s.kept_pixels
    )
    .map_err(io_err)
}

/// Writes every record to the output stream.
struct Printer<'a> {
    out: &'a mut dyn Write,
    format: LogFormat,
}

impl TrainObserver for Printer<'_> {
    fn on_record(&mut self, record: &TrainLogRecord) -> Result<()> {
        writeln!(self.out, "{}", record.format(self.format)).map_err(io_err)
    }
}

fn pretrain(m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let rc = run_config(m)?;
    let _ = writeln!(err, "config {}", rc.echo(&[]).join(" "));
    let format: LogFormat = m.get_one::<String>("log-format").expect("default").parse()?;
    let ds = match m.get_one::<PathBuf>("manifest") {
        Some(p) => Dataset::from_manifest(p)?,
        None => Dataset::synthetic(rc.train.synthetic_images, rc.model.image_size, rc.model.channels, rc.train.seed),
    };
    let mut trainer = match m.get_one::<PathBuf>("resume") {
        Some(p) => Trainer::from_checkpoint(&Checkpoint::load(p)?, &rc.train, &rc.selection, &rc.model, ds.len())?,
        None => Trainer::new(&rc.train, &rc.selection, &rc.model, ds.len())?,
    };
    trainer.set_timing(!m.get_flag("no-timestamps"));
    if format == LogFormat::Csv {
        writeln!(out, "{}", TrainLogRecord::csv_header()).map_err(io_err)?;
    }
    let checkpoint = m.get_one::<PathBuf>("checkpoint").map(PathBuf::as_path);
    let summary = train(&ds, &mut trainer, checkpoint, &mut Printer { out, format })?;
    let _ = writeln!(err, "finished steps={} images={}", summary.steps, ds.len());
    Ok(())
}

fn bench(m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let rc = run_config(m)?;
    let _ = writeln!(err, "config {}", rc.echo(&["synthetic_images"]).join(" "));
    let mut cfg = BenchConfig::new(rc.train, rc.selection, rc.model);
    cfg.warmup_steps = *m.get_one("warmup-steps").expect("default");
    cfg.steps = *m.get_one("steps").expect("default");
    cfg.dataset_size = *m.get_one("dataset-size").expect("default");
    if cfg.dataset_size == 0 {
        return Err(Error::Config("dataset-size must be positive".into()));
    }
    let report = bench_throughput(&cfg)?;
    let (table, csv) = emit_report(&report, !m.get_flag("no-timestamps"));
    let text = if m.get_one::<String>("report").expect("default") == "csv" { &csv } else { &table };
    out.write_all(text.as_bytes()).map_err(io_err)?;
    if let Some(path) = m.get_one::<PathBuf>("csv") {
        std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Center square crop resized to the model's input side.
fn load_model_image(path: &Path, side: usize, channels: usize) -> Result<imaging::Image> {
    let img = imaging::load(path)?.to_channels(channels)?;
    let s = img.width().min(img.height());
    let (x0, y0) = ((img.width() - s) / 2, (img.height() - s) / 2);
    resize_region(&img, (x0, y0, s, s), side, side)
}

fn inspect(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let rc = run_config(m)?;
    let epoch: usize = *m.get_one("epoch").expect("default");
    if epoch < 1 || epoch > rc.train.epochs {
        return Err(Error::Config(format!("epoch {epoch} outside [1, T={}]", rc.train.epochs)));
    }
    let (train_cfg, sel, model) = (&rc.train, &rc.selection, &rc.model);
    let params = match m.get_one::<PathBuf>("checkpoint") {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let tensors = model
                .layout()
                .iter()
                .map(|spec| Ok(ck.require(&spec.name)?.to_tensor::<f32>()))
                .collect::<Result<Vec<_>>>()?;
            ModelParams::from_tensors(model, tensors)?
        }
        None => ModelParams::<f32>::init(model, init_seed(train_cfg.seed))?,
    };
    let path = m.get_one::<PathBuf>("image").expect("required");
    let img = load_model_image(path, model.image_size, model.channels)?;
    let grid = patchify(&img, model.patch)?;
    let scores = hog_score(&grid, &HogConfig::default())?;
    let key = selection_key(train_cfg.seed, epoch, 0);
    let n = model.num_patches();
    let sample = forward_sample(
        &params,
        &grid,
        |emb, d| match train_cfg.mode {
            TrainMode::Selective => plan_epoch_selection(emb, d, &scores, sel, epoch, key),
            TrainMode::MaeBaseline => baseline_plan(n, train_cfg.baseline_mask_ratio, epoch, sel.stage(epoch), key),
        },
        false,
    )?;
    sample.plan.check(sel).or_else(|e| match train_cfg.mode {
        TrainMode::MaeBaseline => Ok(()),
        TrainMode::Selective => Err(e),
    })?;
    out.write_all(sample.plan.to_csv(&scores).as_bytes()).map_err(io_err)
}

/// Runs one invocation; `argv[0]` is the program name.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match cli().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_CONFIG
                }
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = match name {
        "curate" => curate(sub, out),
        "pretrain" => pretrain(sub, out, err),
        "bench" => bench(sub, out, err),
        "inspect-selection" => inspect(sub, out),
        _ => unreachable!("clap rejects unknown subcommands"),
    };
    let _ = out.flush();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Logger on the error stream; `-v` raises the level and `--no-timestamps`
/// drops the time prefix.
pub fn init_logging(argv: &[String]) {
    let verbosity = argv
        .iter()
        .map(|a| match a.as_str() {
            "--verbose" => 1,
            a if a.starts_with('-') && !a.starts_with("--") && a[1..].chars().all(|c| c == 'v') => a.len() - 1,
            _ => 0,
        })
        .sum::<usize>();
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let mut builder = env_logger::Builder::new();
    builder.filter_level(level).parse_default_env();
    if argv.iter().any(|a| a == "--no-timestamps") {
        builder.format_timestamp(None);
    }
    let _ = builder.try_init();
}
