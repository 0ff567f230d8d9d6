use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cine_deblur_core::checkpoint::Checkpoint;
use cine_deblur_core::data::{phantom_generate, read_cine, write_cine, write_pgm, PhantomParams};
use cine_deblur_core::kspace::{degrade_sequence, DegradeMode, DegradeParams};
use cine_deblur_core::metrics::evaluate;
use cine_deblur_core::train::{train, Model, TrainConfig, TrainMode, TrainingSet, Trained};
use cine_deblur_core::{Cine32, Error, Result};
use log::info;

/// Fast-scan cine MRI simulation, deblurring and evaluation.
#[derive(Debug, Parser)]
#[command(name = "cine-deblur", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a degraded acquisition of a phantom or an input sequence.
    Simulate(SimulateArgs),
    /// Train a model; checkpoints and the loss log go to the output directory.
    Train(TrainArgs),
    /// Restore every frame of a sequence with a trained model.
    Deblur(InferArgs),
    /// Insert predicted frames into a sequence with an interpolation model.
    Interpolate(InferArgs),
    /// Per-frame SSIM and PSNR of a test sequence against a clean one.
    Eval(EvalArgs),
    /// Write frames of a sequence as 8-bit PGM images.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SimMode {
    Cartesian,
    Radial,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Degradation model.
    #[arg(long, value_enum, default_value = "cartesian")]
    mode: SimMode,
    /// Mixing half-width N (cartesian).
    #[arg(long, default_value_t = 7)]
    n_mix: usize,
    /// Fraction of central k-space rows kept (cartesian).
    #[arg(long, default_value_t = 0.25)]
    keep: f64,
    /// Golden-angle spokes per frame (radial).
    #[arg(long, default_value_t = 32)]
    spokes: usize,
    /// Seed of the phantom noise.
    #[arg(long, env = "CINE_DEBLUR_SEED", default_value_t = 0)]
    seed: u64,
    /// Clean input sequence; a phantom is generated when absent.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Degraded output sequence.
    #[arg(long)]
    out: PathBuf,
    /// Also write the clean sequence here.
    #[arg(long)]
    clean_out: Option<PathBuf>,
    /// Phantom frame count.
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Phantom height and width.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Phantom Gaussian noise level.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Recurrent,
    Cascade,
    Interp,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Recurrent => TrainMode::RecurrentGan,
            ModeArg::Cascade => TrainMode::Cascade,
            ModeArg::Interp => TrainMode::Interpolation,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Clean `.cine` file or directory; overrides the config's dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory; overrides the config's output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "CINE_DEBLUR_SEED")]
    seed: Option<u64>,
    /// Stop after this many iterations.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Continue from a checkpoint at the fine-tune learning rate.
    #[arg(long)]
    fine_tune: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Metric CSV; the summary is printed either way.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Frame indices, e.g. `0,3,5-7`; all frames when absent.
    #[arg(long)]
    frames: Option<String>,
    #[arg(long)]
    pgm_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
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

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Deblur(a) => infer(a, false),
        Command::Interpolate(a) => infer(a, true),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let clean = match &a.input {
        Some(path) => read_cine(path)?,
        None => phantom_generate(&PhantomParams {
            height: a.size,
            width: a.size,
            frames: a.frames,
            outer_axes: (a.size as f64 * 0.31, a.size as f64 * 0.28),
            wall: (a.size as f64 * 0.09).max(1.0),
            noise_sigma: a.noise,
            seed: a.seed,
            ..Default::default()
        })?,
    };
    let params = DegradeParams {
        mode: match a.mode {
            SimMode::Cartesian => DegradeMode::CartesianMix,
            SimMode::Radial => DegradeMode::Radial,
        },
        n_mix: a.n_mix,
        keep_fraction: a.keep,
        n_spokes: a.spokes,
        ..Default::default()
    };
    let degraded = degrade_sequence(&clean, &params)?;
    write_cine(&a.out, &degraded)?;
    if let Some(path) = &a.clean_out {
        write_cine(path, &clean)?;
    }
    info!("wrote {} frames of {}x{} to {}", degraded.len(), degraded.height(), degraded.width(), a.out.display());
    Ok(())
}

fn load_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mode: TrainMode = a.mode.into();
    let mut config = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let parsed = TrainConfig::parse(&text)?;
            let names_mode = text.lines().any(|l| l.split('=').next().is_some_and(|k| k.trim() == "mode"));
            if names_mode && parsed.mode != mode {
                return Err(Error::Config(format!("--mode {} contradicts mode={} in {}", mode.as_str(), parsed.mode.as_str(), path.display())));
            }
            if names_mode {
                parsed
            } else {
                TrainConfig::parse(&format!("mode={}\n{text}", mode.as_str()))?
            }
        }
        None => TrainConfig::for_mode(mode),
    };
    if let Some(d) = &a.data {
        config.dataset = Some(d.clone());
    }
    if let Some(o) = &a.out {
        config.output = Some(o.clone());
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if a.max_steps.is_some() {
        config.max_steps = a.max_steps;
    }
    if config.output.is_none() {
        config.output = Some(PathBuf::from(format!("train_{}", mode.as_str())));
    }
    config.validate()?;
    Ok(config)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = load_config(&a)?;
    let params = config.degrade_params();
    let set = match &config.dataset {
        Some(path) => TrainingSet::load(path, &params)?,
        None => TrainingSet::simulate(vec![phantom_generate(&PhantomParams { frames: 16, ..Default::default() })?], &params)?,
    };
    info!("training {} on {} sequence(s) of {:?}", config.mode.as_str(), set.pairs().len(), set.dims());
    let trained: Trained<f32> = match &a.fine_tune {
        Some(path) => cine_deblur_core::train::fine_tune(&config, &Checkpoint::load(path)?, &set)?,
        None => train(&config, &set)?,
    };
    let log = trained.log();
    let out = config.output.as_deref().expect("output set");
    info!("{} iterations; checkpoint {}", log.len(), out.join("final.ckpt").display());
    if let Some(last) = log.records.last() {
        let row: Vec<String> = log.columns.iter().zip(&last.values).map(|(c, v)| format!("{c}={v:.6}")).collect();
        info!("last: {}", row.join(" "));
    }
    Ok(())
}

fn infer(a: InferArgs, interpolate: bool) -> Result<()> {
    let model = Model::<f32>::from_checkpoint(&Checkpoint::load(&a.ckpt)?)?;
    let input = read_cine(&a.input)?;
    let out: Cine32 = if interpolate { model.interpolate(&input)? } else { model.deblur(&input)? };
    write_cine(&a.out, &out)?;
    info!("wrote {} frames to {}", out.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let report = evaluate(&read_cine(&a.clean)?, &read_cine(&a.test)?)?;
    if let Some(path) = &a.csv {
        std::fs::write(path, report.to_csv())?;
    }
    let (s, p) = (report.ssim_summary, report.psnr_summary);
    println!("SSIM {:.4} +/- {:.4}", s.mean, s.sd);
    println!("PSNR {:.4} +/- {:.4} dB", p.mean, p.sd);
    Ok(())
}

/// Parses `0,3,5-7` into indices below `len`.
fn parse_frames(selection: &str, len: usize) -> Result<Vec<usize>> {
    let bad = |part: &str| Error::InvalidArgument(format!("bad frame selection {part:?}"));
    let mut out = Vec::new();
    for part in selection.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi): (usize, usize) = match part.split_once('-') {
            Some((lo, hi)) => (lo.trim().parse().map_err(|_| bad(part))?, hi.trim().parse().map_err(|_| bad(part))?),
            None => {
                let i = part.parse().map_err(|_| bad(part))?;
                (i, i)
            }
        };
        if lo > hi || hi >= len {
            return Err(Error::InvalidArgument(format!("frames {part} outside 0..{len}")));
        }
        out.extend(lo..=hi);
    }
    Ok(out)
}

fn export(a: ExportArgs) -> Result<()> {
    let seq = read_cine(&a.input)?;
    let frames = match &a.frames {
        Some(selection) => parse_frames(selection, seq.len())?,
        None => (0..seq.len()).collect(),
    };
    std::fs::create_dir_all(&a.pgm_dir)?;
    for &t in &frames {
        write_pgm(pgm_path(&a.pgm_dir, t), seq.frame(t))?;
    }
    info!("wrote {} frames to {}", frames.len(), a.pgm_dir.display());
    Ok(())
}

fn pgm_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t:03}.pgm"))
}
