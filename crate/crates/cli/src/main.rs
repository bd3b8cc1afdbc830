mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sfc", version, about = "Cough detection camera toolkit")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract a feature tensor from a WAV file.
    Features(FeaturesArgs),
    /// Mix event clips with background noise into an augmented set.
    Augment(AugmentArgs),
    /// Classify one feature file or WAV window.
    Infer(InferArgs),
    /// Simulate a scene and render a beamforming power map.
    Beamform(BeamformArgs),
    /// Run the streaming detector over a recording or simulated scene.
    Detect(DetectArgs),
    /// Score predictions against ground truth.
    Metrics(MetricsArgs),
    /// Run the built-in example checks.
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Resampler {
    Polyphase,
    Linear,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    input: PathBuf,
    #[arg(long, default_value = "MFCC-V-A")]
    spec: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write the planes as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "polyphase")]
    resample: Resampler,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Directory with `cough/` and `others/` subdirectories of WAV files.
    #[arg(long)]
    events: PathBuf,
    /// Directory of background-noise WAV files.
    #[arg(long)]
    noise: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 45)]
    cough_reps: usize,
    #[arg(long, default_value_t = 9)]
    others_reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    ratio_min: f64,
    #[arg(long, default_value_t = 0.4)]
    ratio_max: f64,
    #[arg(long, default_value_t = 0.6)]
    volume_min: f64,
    #[arg(long, default_value_t = 1.0)]
    volume_max: f64,
    /// Mix the raw clips instead of peak-normalized ones.
    #[arg(long)]
    no_peak_normalize: bool,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Weight manifest (JSON). The blob defaults to the same path with a `.bin` extension.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    blob: Option<PathBuf>,
    /// Per-channel normalization statistics (JSON).
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    /// `.wav` or feature file.
    input: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Feature spec used for WAV input.
    #[arg(long, default_value = "MFCC-V-A")]
    spec: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct PlaneArgs {
    /// Distance of the inspection plane from the array (m).
    #[arg(long, default_value_t = 1.0)]
    distance: f64,
    #[arg(long, default_value_t = 1.0)]
    width: f64,
    #[arg(long, default_value_t = 1.0)]
    height: f64,
    #[arg(long, default_value_t = 32)]
    cols: usize,
    #[arg(long, default_value_t = 32)]
    rows: usize,
}

#[derive(Debug, Args)]
struct SceneArgs {
    #[arg(long)]
    scene: PathBuf,
    /// CSV of microphone positions; defaults to the built-in spiral.
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Overrides the scene's noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated length in seconds; defaults to the longest source.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Args)]
struct BeamformArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    plane: PlaneArgs,
    /// Output prefix; writes `<prefix>.csv`, `<prefix>.pgm` and `<prefix>.peaks.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    peaks: usize,
    #[arg(long, default_value_t = 4.0)]
    min_separation: f64,
    /// Power window start and end in seconds (default: whole signal).
    #[arg(long)]
    window_start: Option<f64>,
    #[arg(long)]
    window_end: Option<f64>,
    #[arg(long)]
    sinc: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stub {
    AlwaysCough,
    AlwaysOthers,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Mono recording.
    #[arg(long, conflicts_with = "scene")]
    wav: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    geometry: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, conflicts_with = "weights")]
    stub: Option<Stub>,
    #[arg(long, default_value = "MFCC-V-A")]
    spec: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 2.0)]
    window: f64,
    #[arg(long, default_value_t = 0.5)]
    hop: f64,
    /// Samples per push into the stream buffer (default: one hop).
    #[arg(long)]
    chunk: Option<usize>,
    /// Buffer on a separate thread.
    #[arg(long)]
    concurrent: bool,
    #[command(flatten)]
    plane: PlaneArgs,
    /// Events as JSON lines.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// CSV with columns `predicted,truth`.
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SFC_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Features(a) => commands::features(a),
        Command::Augment(a) => commands::augment(a),
        Command::Infer(a) => commands::infer(a),
        Command::Beamform(a) => commands::beamform(a),
        Command::Detect(a) => commands::detect(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Selftest => commands::selftest(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
