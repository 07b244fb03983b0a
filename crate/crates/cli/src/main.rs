//! `reliefmap` command line.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 when an input file or
//! configuration cannot be used.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reliefmap::analysis::compute_normals;
use reliefmap::io::{self, RunConfig};
use reliefmap::postprocess::{segment_planes, smooth_chain};
use reliefmap::runner::{bench_csv, run_bench, run_replay, run_simulate};
use reliefmap::ExecMode;

#[derive(Parser)]
#[command(name = "reliefmap", version, about = "Robot-centric 2.5D elevation mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.mode`.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Det,
    Par,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Pgm,
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured scene along the trajectory and map it.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write every rendered cloud with its pose sidecar under `clouds/`.
        #[arg(long)]
        emit_clouds: bool,
    },
    /// Map recorded clouds (`*.csv` with `*.pose.csv` sidecars) in name order.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Directory holding the clouds.
        #[arg(long)]
        input: PathBuf,
    },
    /// Time every pipeline phase over a sweep of point counts.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated point counts; overrides `bench.point_counts`.
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<usize>>,
        /// Overrides `bench.repetitions`.
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Write one snapshot layer as CSV or 16-bit PGM.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value = "elevation")]
        layer: String,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Extract planar regions from a snapshot, after the configured filter chain.
    Segment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        snapshot: PathBuf,
    },
}

fn load_config(common: &Common) -> reliefmap::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.pipeline.mode = match mode {
            Mode::Det => ExecMode::Deterministic,
            Mode::Par => ExecMode::Parallel,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, bytes: &[u8]) -> reliefmap::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| reliefmap::Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| reliefmap::Error::io(path, e))
}

fn run(command: Command) -> reliefmap::Result<()> {
    match command {
        Command::Simulate { common, emit_clouds } => {
            let cfg = load_config(&common)?;
            let summary = run_simulate(&cfg, &common.out, emit_clouds)?;
            println!("{} scans, {} snapshots in {}", summary.scans, summary.snapshots.len(), common.out.display());
        }
        Command::Replay { common, input } => {
            let cfg = load_config(&common)?;
            let summary = run_replay(&cfg, &input, &common.out)?;
            println!(
                "{} scans ({} skipped), {} snapshots in {}",
                summary.scans,
                summary.skipped,
                summary.snapshots.len(),
                common.out.display()
            );
        }
        Command::Bench { common, points, repetitions } => {
            let cfg = load_config(&common)?;
            let points = points.unwrap_or_else(|| cfg.bench.point_counts.clone());
            let reps = repetitions.unwrap_or(cfg.bench.repetitions);
            if reps == 0 {
                return Err(reliefmap::Error::InvalidParam("repetitions must be at least 1".into()));
            }
            let csv = bench_csv(&run_bench(&cfg, &points, reps)?);
            write(&common.out.join("bench.csv"), csv.as_bytes())?;
            print!("{csv}");
        }
        Command::Export { common, snapshot, layer, format } => {
            let map = io::load_snapshot(&snapshot)?;
            let data = map.layer(&layer)?;
            let (ext, bytes) = match format {
                Format::Csv => ("csv", io::export_csv(&data).into_bytes()),
                Format::Pgm => ("pgm", io::export_pgm(&data)),
            };
            let path = common.out.join(format!("{layer}.{ext}"));
            write(&path, &bytes)?;
            println!("{}", path.display());
        }
        Command::Segment { common, snapshot } => {
            let cfg = load_config(&common)?;
            let mut map = io::load_snapshot(&snapshot)?;
            if !cfg.filters.steps.is_empty() {
                let smoothed = smooth_chain(&map.elevation_layer(), &cfg.filters, cfg.pipeline.mode)?;
                let raw = (0..smoothed.len())
                    .map(|i| if smoothed.valid[i] { smoothed.values[i] } else { f64::NAN })
                    .collect();
                map.set_layer_raw("elevation", raw)?;
            }
            compute_normals(&mut map, cfg.pipeline.mode);
            let regions = segment_planes(&map, &cfg.segment)?;
            let path = common.out.join("regions.txt");
            write(&path, io::regions_to_text(&regions).as_bytes())?;
            println!("{} regions in {}", regions.len(), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
