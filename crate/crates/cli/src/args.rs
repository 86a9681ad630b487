use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "mdmfed",
    version,
    about = "Mixture-of-Dirichlet-Multinomials models of federated client histograms"
)]
pub struct Cli {
    /// Cap the worker thread pool.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Reduce client statistics in a fixed order so outputs are byte-identical across runs.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic client population from a preset or a params file.
    GenSynthetic(GenSyntheticArgs),
    /// Bin a record-level CSV into client histograms and/or a central pool.
    Ingest(IngestArgs),
    /// Fit an MDM with simulated federated EM.
    Infer(InferArgs),
    /// Choose K by mean validation log likelihood.
    SelectK(SelectKArgs),
    /// Split a central pool into simulated clients.
    Partition(PartitionArgs),
    /// Write normalized client histograms as CSV.
    ExportHistograms(ExportArgs),
    /// Compare fitted params against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Embedded ground truth, e.g. appendixA or table1:medium-2.
    #[arg(long, conflicts_with = "params", required_unless_present = "params")]
    pub preset: Option<String>,
    /// Ground-truth params JSON.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub clients: usize,
    #[arg(long)]
    pub seed: u64,
    /// Population JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the ground-truth params used.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    /// Also write each client's generating component, one per line.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV with a `feature` column and an optional `client_id` column.
    #[arg(long)]
    pub input: PathBuf,
    /// Binning sidecar JSON.
    #[arg(long)]
    pub binning: PathBuf,
    /// Population JSONL, one client per distinct client id.
    #[arg(long, required_unless_present = "pool_out")]
    pub out: Option<PathBuf>,
    /// Central pool JSON (rows grouped by category, client ids ignored).
    #[arg(long)]
    pub pool_out: Option<PathBuf>,
    /// Client ids in population order, one per line.
    #[arg(long)]
    pub ids_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Degenerate {
    Skip,
    Error,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub rounds: usize,
    /// Initialization cohort size (default: every client).
    #[arg(long)]
    pub init_cohort: Option<usize>,
    /// Per-round EM cohort size (default: every client).
    #[arg(long)]
    pub em_cohort: Option<usize>,
    #[arg(long, default_value_t = 1e-8)]
    pub alpha_floor: f64,
    /// What to do with a client that has zero probability under every component.
    #[arg(long, value_enum, default_value_t = Degenerate::Skip)]
    pub degenerate: Degenerate,
    /// Stop once the log likelihood plateaus.
    #[arg(long)]
    pub early_stop: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Population JSONL.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub seed: u64,
    /// Fitted params JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-round CSV of the population log likelihood.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Per-round params snapshots as JSONL.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectKArgs {
    /// Population JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub candidates: Vec<usize>,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Clients held out of every fit for validation.
    #[arg(
        long,
        conflicts_with = "validation",
        required_unless_present = "validation"
    )]
    pub val_cohort: Option<usize>,
    /// Separate validation population JSONL; all of `--input` is used for training.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, default_value_t = mdmfed_core::selection::DEFAULT_TIE_TOLERANCE)]
    pub tie_tolerance: f64,
    #[arg(long)]
    pub seed: u64,
    /// Report JSON, including every candidate's fitted params.
    #[arg(long)]
    pub out: PathBuf,
    /// `K,mean_val_loglik` CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    /// Client histograms sampled from learned params.
    Mdm,
    /// Uniform rows from the whole pool; only n follows a distribution.
    FullyIid,
    /// TEST-ONLY ORACLE: copies every true client's histogram, which requires
    /// clients to reveal them.
    ConditionallyIid,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Central pool JSON written by `ingest --pool-out`.
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, value_enum, default_value_t = GeneratorArg::Mdm)]
    pub generator: GeneratorArg,
    /// Learned params JSON (mdm).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Number of simulated clients (mdm, fully-iid).
    #[arg(long)]
    pub clients: Option<usize>,
    /// Population whose sample counts (fully-iid) or histograms
    /// (conditionally-iid, test-only oracle) are reused.
    #[arg(long)]
    pub true_pop: Option<PathBuf>,
    /// Give every fully-iid client exactly this many rows instead.
    #[arg(long, conflicts_with = "true_pop")]
    pub n_point: Option<u32>,
    #[arg(long)]
    pub seed: u64,
    /// Plan JSONL, one simulated client per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputKind {
    Population,
    Plan,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Population JSONL or plan JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Input format (default: detected from the first line).
    #[arg(long, value_enum)]
    pub kind: Option<InputKind>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub fitted: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Also report the mean log likelihood of this population under both.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report JSON (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
