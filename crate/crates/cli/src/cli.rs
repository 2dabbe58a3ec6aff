use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "crm", version, about = "Latent trajectory membership analysis")]
pub struct Cli {
    /// JSON file supplying defaults for any flag; explicit flags and CRM_*
    /// variables win.
    #[arg(long, env = "CRM_CONFIG", global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, env = "CRM_FORMAT", value_enum, default_value_t = Format::Table, global = true)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit layer selection, directions and LTS statistics on the calibration split.
    Calibrate(CalibrateArgs),
    /// Write the feature matrix for a trace.
    Featurize(FeaturizeArgs),
    /// Cross-validated detection AUC, optionally with controls.
    Evaluate(EvaluateArgs),
    /// Same as evaluate with every control enabled unless --controls narrows it.
    Controls(EvaluateArgs),
    /// Draw a synthetic trace from a planted spec.
    Generate(GenerateArgs),
    /// Run the audit server until interrupted.
    Serve(ServeArgs),
    /// Load-test a running audit server.
    Bench(BenchArgs),
    /// Project one layer's direction through an unembedding matrix.
    Backproject(BackprojectArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, env = "CRM_TRACE")]
    pub trace: Option<PathBuf>,
    /// Artifact output path.
    #[arg(long, env = "CRM_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "CRM_N_CAL")]
    pub n_cal: Option<usize>,
    #[arg(long, env = "CRM_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "CRM_THRESHOLD")]
    pub threshold: Option<f64>,
    /// pc1, supervised or pc-rank:<r>.
    #[arg(long, env = "CRM_DIRECTION")]
    pub direction: Option<String>,
    /// How the per-layer score compared against --threshold is computed.
    #[arg(long, env = "CRM_LAYER_SCORE", value_enum)]
    pub layer_score: Option<LayerScoreArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerScoreArg {
    /// Layer variance over the sum across layers.
    TotalShare,
    /// Explained-variance ratio of the layer's own first component.
    Pc1Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L2ModeArg {
    /// Five KL statistics.
    Five,
    /// kl_mean only.
    MeanOnly,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long, env = "CRM_TRACE")]
    pub trace: Option<PathBuf>,
    #[arg(long, env = "CRM_ARTIFACT")]
    pub artifact: Option<PathBuf>,
    /// Comma-separated subset of L1,L2,L3.
    #[arg(long, env = "CRM_LEVELS")]
    pub levels: Option<String>,
    #[arg(long, env = "CRM_L2_MODE", value_enum)]
    pub l2_mode: Option<L2ModeArg>,
    #[arg(long, env = "CRM_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = "CRM_TRACE")]
    pub trace: Option<PathBuf>,
    #[arg(long, env = "CRM_ARTIFACT")]
    pub artifact: Option<PathBuf>,
    #[arg(long, env = "CRM_LEVELS")]
    pub levels: Option<String>,
    #[arg(long, env = "CRM_L2_MODE", value_enum)]
    pub l2_mode: Option<L2ModeArg>,
    #[arg(long, env = "CRM_FOLDS")]
    pub folds: Option<usize>,
    #[arg(long, env = "CRM_SEED")]
    pub seed: Option<u64>,
    /// Comma-separated: permutation, l3-only, loo, layer-sweep, pca-sweep,
    /// pc-rank, same-topic, or all.
    #[arg(long, env = "CRM_CONTROLS")]
    pub controls: Option<String>,
    /// Directory for report.json and tables.txt.
    #[arg(long, env = "CRM_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "CRM_N_BOOT")]
    pub n_boot: Option<usize>,
    /// Score every sample, or only those outside the calibration split.
    #[arg(long, env = "CRM_EVAL_SET", value_enum)]
    pub eval_set: Option<EvalSet>,
    /// Perturbed run to compare against the clean one, as NAME=TRACE.
    /// Repeatable.
    #[arg(long = "compare", value_name = "NAME=TRACE")]
    pub compare: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSet {
    All,
    HeldOut,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Planted spec JSON. Without it, a preset is built from the flags below.
    #[arg(long, env = "CRM_SPEC")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::SingleLayer)]
    pub preset: Preset,
    #[arg(long, default_value_t = 12)]
    pub layers: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 250)]
    pub samples: usize,
    #[arg(long, default_value_t = 2.0)]
    pub shift: f64,
    /// Emit embeddings, KL series and token logprobs (needed by L1/L2).
    #[arg(long)]
    pub surface: bool,
    #[arg(long, env = "CRM_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "CRM_OUT")]
    pub out: Option<PathBuf>,
    /// Also write the planted spec, for oracle checks.
    #[arg(long)]
    pub spec_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Null,
    SingleLayer,
    Distributed,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CRM_ARTIFACT")]
    pub artifact: Option<PathBuf>,
    #[arg(long, env = "CRM_BIND")]
    pub bind: Option<String>,
    #[arg(long, env = "CRM_EXTRACTOR_ENDPOINT")]
    pub extractor_endpoint: Option<String>,
    #[arg(long, env = "CRM_LOG")]
    pub log: Option<PathBuf>,
    #[arg(long, env = "CRM_Z_THRESHOLD")]
    pub z_threshold: Option<f64>,
    #[arg(long, env = "CRM_DISPLAY_THRESHOLD")]
    pub display_threshold: Option<f64>,
    #[arg(long, env = "CRM_EXTRACTOR_TIMEOUT_SECS")]
    pub extractor_timeout_secs: Option<f64>,
    #[arg(long, env = "CRM_RETAIN_TEXT")]
    pub retain_text: Option<bool>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, env = "CRM_ENDPOINT", default_value = "http://127.0.0.1:8080")]
    pub endpoint: String,
    #[arg(long, short = 'n', default_value_t = 100)]
    pub requests: usize,
    /// lts, displacements or text.
    #[arg(long, default_value = "lts")]
    pub payload: String,
    #[arg(long, env = "CRM_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "CRM_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BackprojectArgs {
    #[arg(long, env = "CRM_ARTIFACT")]
    pub artifact: Option<PathBuf>,
    /// JSON with `vocab` (V strings) and `unembed` (V rows of d reals).
    #[arg(long, env = "CRM_UNEMBED")]
    pub unembed: PathBuf,
    /// Model layer whose direction to project; defaults to the first selected.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}
