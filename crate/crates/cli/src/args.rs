use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const ENDPOINT_ENV: &str = "IGLU_ENDPOINT";
pub const QUEUE_ENV: &str = "IGLU_QUEUE_DIR";

/// Non-invasive glucometer pipeline: simulate readings, calibrate and
/// validate regression models, predict, and upload readings.
#[derive(Debug, Parser)]
#[command(name = "iglu", version, args_override_self = true)]
pub struct Cli {
    /// JSON file with one object per subcommand supplying default flags,
    /// e.g. {"simulate": {"n": 187, "seed": 42}}.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit a model on the calibration split.
    Calibrate(CalibrateArgs),
    /// Score a model on a split and write reports and plots.
    Validate(ValidateArgs),
    /// Predict glucose from one set of channel voltages.
    Predict(PredictArgs),
    /// Upload queued readings.
    Sync(SyncArgs),
    /// Render a comparison table from validation reports.
    Report(ReportArgs),
    /// Run the mock ingestion endpoint in the foreground.
    ServeMock(ServeMockArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of subjects [default: 187].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Acquisition settings (adc, forward, generation sections) as JSON.
    /// Individual flags below take precedence.
    #[arg(long, value_name = "PATH")]
    pub sim_config: Option<PathBuf>,
    #[arg(long)]
    pub glucose_lo: Option<f64>,
    #[arg(long)]
    pub glucose_hi: Option<f64>,
    /// Std of additive noise per raw sample, mV.
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Std of the per-reading channel offset, mV.
    #[arg(long)]
    pub jitter_sd: Option<f64>,
    /// Std of the capillary reference error, mg/dl.
    #[arg(long)]
    pub capillary_noise: Option<f64>,
    /// Std of the serum reference error, mg/dl.
    #[arg(long)]
    pub serum_noise: Option<f64>,
    /// Relative serum offset δ (serum = capillary · (1 − δ)).
    #[arg(long)]
    pub serum_offset: Option<f64>,
    /// Raw samples averaged per reading.
    #[arg(long)]
    pub n_raw: Option<usize>,
    /// Calibration,validation,testing fractions.
    #[arg(long, default_value = "0.6,0.4,0")]
    pub split: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Capillary,
    Serum,
}

impl From<Kind> for iglu_core::GlucoseKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Capillary => iglu_core::GlucoseKind::Capillary,
            Kind::Serum => iglu_core::GlucoseKind::Serum,
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// mpr3, mpr3:no-intercept, svr[:KERNEL] or dnn. Kernels: linear,
    /// quadratic, cubic, fine-gaussian, medium-gaussian, coarse-gaussian,
    /// gaussian=SCALE.
    #[arg(long, default_value = "mpr3")]
    pub model: String,
    #[arg(long, value_enum, default_value_t = Kind::Serum)]
    pub kind: Kind,
    #[arg(long, value_name = "PATH")]
    pub train: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Weight initialization seed (required for dnn).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden layers for dnn: a count, or a range `A..B` to sweep depths.
    #[arg(long)]
    pub hidden_layers: Option<String>,
    /// Units per hidden layer for dnn.
    #[arg(long)]
    pub width: Option<usize>,
    /// Iteration cap for dnn training.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Write the depth sweep table as CSV.
    #[arg(long, value_name = "PATH")]
    pub sweep_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    Sex,
    Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Calibration,
    Validation,
    Testing,
    All,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Reference to score against; defaults to the one the model was fit on.
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    /// Which labeled split to score. Unlabeled data is scored in full.
    #[arg(long, value_enum, default_value_t = SplitArg::Validation)]
    pub split: SplitArg,
    /// Directory for report.json, report.csv, correlation.svg, ceg.svg and zones.svg.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Split the error grid into one panel per group.
    #[arg(long, value_enum)]
    pub group_by: Option<GroupBy>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub v1: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub v2: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub v3: f64,
    /// ADC full-scale range, mV.
    #[arg(long, default_value_t = 5000.0)]
    pub fsr: f64,
    /// Append the reading to the upload queue.
    #[arg(long, requires = "queue")]
    pub enqueue: bool,
    #[arg(long, env = QUEUE_ENV, value_name = "DIR")]
    pub queue: Option<PathBuf>,
    #[arg(long, default_value = "patient-0")]
    pub patient_id: String,
    #[arg(long, default_value = "iglu-device")]
    pub device_id: String,
    /// Reading id; derived from the device and its reading count if omitted.
    #[arg(long)]
    pub reading_id: Option<String>,
    /// RFC 3339 timestamp to record instead of the current time.
    #[arg(long)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Args)]
pub struct SyncArgs {
    #[arg(long, env = QUEUE_ENV, value_name = "DIR")]
    pub queue: PathBuf,
    /// Base URL of the ingestion endpoint, e.g. http://127.0.0.1:8787.
    #[arg(long, env = ENDPOINT_ENV)]
    pub endpoint: String,
    /// Attempts per reading before giving up.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_attempts: u32,
    #[arg(long, default_value_t = 100)]
    pub base_delay_ms: u64,
    #[arg(long, default_value_t = 5000)]
    pub max_delay_ms: u64,
    /// Fraction of each backoff removed at random, in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub jitter: f64,
    /// Per-request timeout.
    #[arg(long, default_value_t = 5000)]
    pub timeout_ms: u64,
    /// Seed for the backoff jitter.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Md,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json files written by `validate`.
    #[arg(required = true, value_name = "REPORT")]
    pub reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Md)]
    pub format: Format,
    /// Write to a file instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeMockArgs {
    #[arg(long, default_value_t = 8787)]
    pub port: u16,
    #[arg(long, default_value_t = 0)]
    pub fail_every: u64,
    #[arg(long, default_value_t = 0)]
    pub fail_next: u64,
    #[arg(long, default_value_t = 0)]
    pub latency_ms: u64,
}
