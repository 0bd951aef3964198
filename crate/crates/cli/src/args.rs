//! Command-line surface. Dedicated flags and `--set` both write into the
//! config tree, so every flag names a config key and wins over the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "densewarp",
    version,
    about = "Sparse interleaved multi-view 3D pose pipeline on synthetic and file-based heatmap streams",
    after_help = "Exit codes: 0 ok, 1 I/O or data error, 2 config error, 3 out-of-order arrival, 4 strict-mode violation.\n\
                  DENSEWARP_SEED overrides the config seed; --seed overrides both."
)]
pub struct Cli {
    /// Cap on worker threads (default: machine parallelism).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Config layering: defaults < `--config` file < DENSEWARP_SEED < flags.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long, short = 'c', value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Sets `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sets `output_dir`.
    #[arg(long, short = 'o', value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Sets `fusion.lambda`, the weight of a replica's own response in [0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Sets `fusion.line_step`, the epipolar sampling step in pixels, (0, 1].
    #[arg(long = "line-step", value_name = "PX")]
    pub line_step: Option<f64>,
    /// Sets any config key, e.g. `--set scene.sigma=2.5` or
    /// `--set eval.window_sizes=[4,8]`; repeatable. Values are TOML, bare
    /// words are taken as strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Ablation,
    #[value(name = "interval_sweep", alias = "interval-sweep")]
    IntervalSweep,
    #[value(name = "window_sweep", alias = "window-sweep")]
    WindowSweep,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Ablation => "ablation",
            Experiment::IntervalSweep => "interval_sweep",
            Experiment::WindowSweep => "window_sweep",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a sparse interleaved stream: heatmaps (DWHM), arrivals,
    /// rig, schedule and ground-truth CSVs.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write all-view captures for every emitted frame (needed by
        /// `run --variant dense_oracle --input`).
        #[arg(long)]
        dense: bool,
    },
    /// Stream arrivals through a pipeline variant and write the skeletons
    /// (plus a report when ground truth is available).
    #[command(group(clap::ArgGroup::new("source").required(true).args(["input", "synth"])))]
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory written by `synth`; its config.toml is used when no
        /// --config is given.
        #[arg(long, value_name = "DIR")]
        input: Option<PathBuf>,
        /// Synthesize the stream in memory from the config.
        #[arg(long)]
        synth: bool,
        /// Sets `eval.variant`: replicate_only, spatial_fusion,
        /// fusion_plus_warper or dense_oracle.
        #[arg(long)]
        variant: Option<String>,
        /// Directory of trained warpers (`*.dwwt`); trained on the fly when
        /// absent and the variant needs them.
        #[arg(long, value_name = "DIR")]
        warpers: Option<PathBuf>,
        /// Record wall-clock stage times in the report (makes it
        /// non-reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Train one warper per temporal mode of the configured plan on held-out
    /// synthetic scenes.
    TrainWarper {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the variant ablation or a sweep and write JSON, text and SVG.
    Experiment {
        #[arg(value_enum)]
        name: Experiment,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Sets `eval.seeds`, the number of evaluation seeds.
        #[arg(long)]
        seeds: Option<usize>,
        /// Exit 4 when the expected ordering or monotonicity is violated.
        #[arg(long)]
        strict: bool,
        /// Directory of trained warpers for the ablation.
        #[arg(long, value_name = "DIR")]
        warpers: Option<PathBuf>,
    },
    /// Print a DWHM file's header and per-channel stats (or a DWWT file's
    /// tensor summary).
    Inspect { file: PathBuf },
}
