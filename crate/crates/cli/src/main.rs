use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use panofix::pipeline::synth::{make_synthetic_case, score, synthetic_scene, write_case, SyntheticSpec};
use panofix::pipeline::{run, PanoramaSource, PipelineConfig, RunOptions, TransformKind};
use panofix::raster::EquirectImage;
use panofix::segment::load_labels;
use panofix::{io, Error};

/// Calibrate a pre-captured equirectangular image against a current panorama.
#[derive(Debug, Parser)]
#[command(name = "panofix", version)]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Align, tone-correct and re-sky a pre-captured image.
    Run(RunArgs),
    /// Write a synthetic relight case with its ground truth.
    Synth(SynthArgs),
    /// Compare a result with a ground truth.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    precap: PathBuf,
    /// Stitched equirectangular panorama.
    #[arg(long, required_unless_present = "frames", conflicts_with = "frames")]
    panorama: Option<PathBuf>,
    /// Coverage mask of the panorama; non-black pixels otherwise.
    #[arg(long, requires = "panorama")]
    coverage: Option<PathBuf>,
    /// Directory of perspective frames to stitch instead of a panorama.
    #[arg(long, requires = "hfov")]
    frames: Option<PathBuf>,
    /// Horizontal field of view of the frames, degrees.
    #[arg(long)]
    hfov: Option<f64>,
    /// Use every k-th frame; chosen automatically when omitted.
    #[arg(long, requires = "frames")]
    frame_step: Option<usize>,
    #[arg(long)]
    labels_pre: Option<PathBuf>,
    #[arg(long)]
    labels_gen: Option<PathBuf>,
    #[arg(long)]
    palette: Option<PathBuf>,
    /// Precomputed panorama-to-precap matches (CSV); forces one round.
    #[arg(long)]
    matches: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// similarity, affine or homography.
    #[arg(long, default_value = "similarity")]
    transform: TransformKind,
    #[arg(long)]
    rounds: Option<usize>,
    /// Stop aligning once an increment moves every corner less than this (px).
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Force equal horizontal and vertical scale.
    #[arg(long)]
    uniform_scale: bool,
    /// Write every intermediate image.
    #[arg(long)]
    dump: bool,
    /// Feather the frame composite and the sky copy.
    #[arg(long)]
    feather: bool,
    /// Level leftover regions as a membrane instead of keeping their detail.
    #[arg(long)]
    membrane: bool,
    /// Segment sky heuristically when no label maps are given.
    #[arg(long)]
    fallback_sky: bool,
    /// Stop after tone correction.
    #[arg(long)]
    skip_sky: bool,
    /// Inpainting patch side (odd).
    #[arg(long)]
    patch_size: Option<usize>,
    /// JSON file with further run options; flags override it.
    #[arg(long)]
    options: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory for the case.
    #[arg(long)]
    out: PathBuf,
    /// Relight this image instead of a generated scene (needs --labels and --palette).
    #[arg(long, requires_all = ["labels", "palette"])]
    base: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    palette: Option<PathBuf>,
    #[arg(long, default_value_t = 905)]
    width: usize,
    #[arg(long, default_value_t = 453)]
    height: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// JSON relight spec; the built-in relight otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// The uncorrected pre-captured image.
    #[arg(long)]
    precap: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    palette: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

/// Exit status: validation problems are 1, failures while computing 2.
enum Failure {
    Invalid(String),
    Stage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Invalid(e.to_string()),
            other => Failure::Stage(other.to_string()),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn run_cmd(a: RunArgs) -> Result<(), Failure> {
    let mut options: RunOptions = match &a.options {
        Some(p) => read_json(p)?,
        None => RunOptions::default(),
    };
    options.transform = a.transform;
    if let Some(r) = a.rounds {
        options.rounds = r;
    }
    if let Some(e) = a.eps {
        options.eps = e;
    }
    if let Some(s) = a.seed {
        options.seed = s;
    }
    if let Some(p) = a.patch_size {
        options.inpaint.patch_size = p;
    }
    options.uniform_scale |= a.uniform_scale;
    options.feather |= a.feather;
    options.membrane |= a.membrane;
    options.fallback_sky |= a.fallback_sky;
    options.skip_sky |= a.skip_sky;
    let panorama = match (a.panorama, a.frames) {
        (Some(path), _) => PanoramaSource::Image {
            path,
            coverage: a.coverage,
        },
        (None, Some(dir)) => PanoramaSource::Frames {
            dir,
            hfov_deg: a.hfov.expect("clap requires --hfov with --frames"),
            frame_step: a.frame_step,
        },
        (None, None) => unreachable!("clap requires a panorama source"),
    };
    let config = PipelineConfig {
        precap: a.precap,
        panorama,
        labels_pre: a.labels_pre,
        labels_gen: a.labels_gen,
        palette: a.palette,
        matches: a.matches,
        out_dir: a.out,
        dump: a.dump,
        options,
    };
    let out = run(&config)?;
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {}", config.out_dir.join("result.png").display());
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<(), Failure> {
    let (base, labels) = match (&a.base, &a.labels, &a.palette) {
        (Some(b), Some(l), Some(p)) => {
            let img = io::read_image::<f64>(b).and_then(EquirectImage::new).map_err(|e| Failure::Invalid(e.to_string()))?;
            let labels = load_labels(l, p).map_err(|e| Failure::Invalid(e.to_string()))?;
            (img, labels)
        }
        _ => synthetic_scene(a.width, a.height, a.seed).map_err(|e| Failure::Invalid(e.to_string()))?,
    };
    let spec: SyntheticSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::relight(base.width(), a.seed),
    };
    let case = make_synthetic_case(&base, &labels, &spec)?;
    write_case(&case, &a.out)?;
    let spec_path = a.out.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(&spec).expect("spec serializes"))
        .map_err(|e| Failure::Stage(format!("{}: {e}", spec_path.display())))?;
    println!("wrote case to {}", a.out.display());
    Ok(())
}

fn score_cmd(a: ScoreArgs) -> Result<(), Failure> {
    let invalid = |e: Error| Failure::Invalid(e.to_string());
    let result = io::read_image::<f64>(&a.result).map_err(invalid)?;
    let truth = io::read_image::<f64>(&a.truth).map_err(invalid)?;
    let precap = io::read_image::<f64>(&a.precap).map_err(invalid)?;
    let labels = load_labels(&a.labels, &a.palette).map_err(invalid)?;
    let m = score(&result, &truth, &precap, &labels).map_err(invalid)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
        return Ok(());
    }
    println!("{:<12} {:>9} {:>9} {:>9} {:>9}", "category", "pixels", "mae", "median", "cdf");
    for c in &m.categories {
        println!(
            "{:<12} {:>9} {:>9.5} {:>9.5} {:>9.5}",
            c.name, c.pixels, c.mae, c.median, c.cdf_distance
        );
    }
    println!("mae {:.5} (uncorrected {:.5})", m.mae, m.baseline_mae);
    println!("improvement {:.4}", m.improvement);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let res = match cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Score(a) => score_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
