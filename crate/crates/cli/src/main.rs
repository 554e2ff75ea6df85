use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lsdm_core::config::PipelineConfig;
use lsdm_core::emma::emma_align;
use lsdm_core::eval::{evaluate, write_report};
use lsdm_core::io::{load_annotations, load_frame, load_sequence, read_field, read_tracklets, write_field, write_tracklets};
use lsdm_core::motion::{estimate_pair, Coupling};
use lsdm_core::synth::{generate, write_sequence, SynthConfig, SynthMotion};
use lsdm_core::tracker::{track_landmark, TrackPoint, Tracklet};
use lsdm_core::Error;

#[derive(Parser)]
#[command(name = "lsdm", version, about = "Landmark tracking with long/short diffeomorphic motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CouplingArg {
    Complete,
    Partial,
}

#[derive(Clone, Copy, ValueEnum)]
enum MotionArg {
    Translation,
    Svf,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the deformation between two frames.
    Register {
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        /// Output field; `energy.csv` is written next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Align a long/short field pair.
    Emma {
        #[arg(long)]
        long: PathBuf,
        #[arg(long)]
        short: PathBuf,
        /// `elbo.csv` is written next to this file.
        #[arg(long)]
        out_long: PathBuf,
        #[arg(long)]
        out_short: PathBuf,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Track every annotated landmark of a sequence.
    Track {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        annot: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        prior_weight: Option<f64>,
        #[arg(long, value_enum)]
        coupling: Option<CouplingArg>,
        #[arg(long)]
        emma_iters: Option<usize>,
    },
    /// Score tracklets against annotations.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        annot: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate a synthetic sequence with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        motion: MotionArg,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => PipelineConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Failure::Usage(format!("cannot read config {}: {io}", p.display())),
            e => Failure::Usage(format!("config {}: {e}", p.display())),
        }),
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    ensure_parent(path)?;
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Register { fixed, moving, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let f = load_frame(&fixed)?;
            let m = load_frame(&moving)?;
            let (_, phi, trace) = estimate_pair(&f, &m, &cfg.motion)?;
            ensure_parent(&out)?;
            write_field(&out, &phi)?;
            trace.write_csv(create(&sibling(&out, "energy.csv"))?)?;
        }
        Command::Emma { long, short, out_long, out_short, iters, config } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(n) = iters {
                cfg.emma.iterations = n;
            }
            cfg.emma.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let out = emma_align(&read_field(&long)?, &read_field(&short)?, &cfg.emma)?;
            ensure_parent(&out_long)?;
            ensure_parent(&out_short)?;
            write_field(&out_long, &out.phi_l)?;
            write_field(&out_short, &out.phi_s)?;
            out.trace.write_csv(create(&sibling(&out_long, "elbo.csv"))?)?;
        }
        Command::Track { seq, annot, out, config, seed, prior_weight, coupling, emma_iters } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.tracker.seed = s;
                cfg.emma.seed = s;
            }
            if let Some(w) = prior_weight {
                cfg.tracker.prior_weight = w;
            }
            if let Some(c) = coupling {
                cfg.motion.coupling = match c {
                    CouplingArg::Complete => Coupling::Complete,
                    CouplingArg::Partial => Coupling::Partial,
                };
            }
            if let Some(n) = emma_iters {
                cfg.emma.iterations = n;
            }
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;

            let data = load_sequence(&seq)?;
            let annotations = load_annotations(&annot)?;
            if annotations.is_empty() {
                return Err(Error::EmptyInput.into());
            }
            annotations.check_within(data.width, data.height)?;
            let mut tracklets = Vec::new();
            for (id, first) in annotations.initial_positions() {
                tracklets.push(track_from(&data.frames, id, first.frame, (first.x, first.y), &cfg)?);
            }
            write_tracklets(create(&out)?, &data.name, &tracklets)?;
        }
        Command::Eval { pred, annot, report } => {
            let tracklets: Vec<Tracklet> = read_tracklets(File::open(&pred)?)?
                .into_iter()
                .map(|(_, t)| t)
                .collect();
            let annotations = load_annotations(&annot)?;
            let r = evaluate(&tracklets, &annotations)?;
            write_report(create(&report)?, &r)?;
        }
        Command::Synth { out, motion, frames, seed } => {
            let cfg = SynthConfig {
                motion: match motion {
                    MotionArg::Translation => SynthMotion::Translation,
                    MotionArg::Svf => SynthMotion::Svf,
                },
                frames,
                seed,
                ..SynthConfig::default()
            };
            if frames < 2 {
                return Err(Failure::Usage("--frames must be at least 2".into()));
            }
            write_sequence(&generate(&cfg)?, &out)?;
        }
    }
    Ok(())
}

/// Tracks from the landmark's first annotated frame onward; earlier frames
/// repeat the initial position.
fn track_from(
    frames: &[lsdm_core::grid::ScalarField],
    id: u32,
    start: usize,
    init: (f64, f64),
    cfg: &PipelineConfig,
) -> Result<Tracklet, Failure> {
    if start >= frames.len() {
        return Err(Error::MissingFrame { landmark: id, frame: start }.into());
    }
    let mut t = track_landmark(&frames[start..], id, init, &cfg.tracker, &cfg.motion, &cfg.emma)?;
    for p in &mut t.points {
        p.frame += start;
    }
    let head = (0..start).map(|frame| TrackPoint { frame, x: init.0, y: init.1, out_of_view: false });
    t.points.splice(0..0, head);
    Ok(t)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 4 } else { 3 })
        }
    }
}
