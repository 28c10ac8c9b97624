//! `fgdata`: build, review, benchmark and analyze foreground-only datasets.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "fgdata", version, about, arg_required_else_help = true)]
pub struct Cli {
    /// TOML run configuration; CLI overrides win over the file, the file over defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set thresholds.max_components=4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Read a source dataset in its published layout into a manifest.
    Ingest(IngestArgs),
    /// Detect, segment, composite and auto-flag every record.
    Process(ProcessArgs),
    /// Serve the review API (and optionally the web client) for a processed manifest.
    ReviewServe(ReviewArgs),
    /// Materialize the release layout after review.
    Export(ExportArgs),
    /// Contours, foreground colour histograms and background replacement.
    Expand(ExpandArgs),
    /// Cross-evaluation experiments and reports.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Embedding projection and saliency maps.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Write the synthetic fixture corpus (stub-backend demo data).
    Fixtures(FixturesArgs),
    /// Print the resolved configuration as TOML.
    Config(ConfigArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
    /// Skip probing image headers.
    #[arg(long)]
    pub no_verify: bool,
}

#[derive(Args, Debug)]
pub struct ProcessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory the manifest's source paths are relative to.
    #[arg(long)]
    pub source_root: PathBuf,
    #[arg(long)]
    pub out_root: PathBuf,
    /// Output manifest; defaults to `<out-root>/manifest.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub detector: Option<String>,
    #[arg(long)]
    pub segmenter: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SessionArgs {
    /// Processed manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub source_root: PathBuf,
    #[arg(long)]
    pub out_root: PathBuf,
    /// Append-only decision log; defaults to `<manifest>.review.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReviewArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Built web client to serve at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    /// Rewrite this manifest after every decision.
    #[arg(long)]
    pub state: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum RejectedArg {
    Drop,
    KeepSource,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long)]
    pub dest: PathBuf,
    /// Overrides `export.rejected` from the configuration.
    #[arg(long, value_enum)]
    pub rejected: Option<RejectedArg>,
}

#[derive(Args, Debug)]
pub struct ExpandArgs {
    /// Processed (or released) manifest with masks.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub source_root: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub bins: u32,
    /// Background image, resized to each source; enables background replacement.
    #[arg(long)]
    pub background: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum BenchCommand {
    /// Run the four train/test pairings per backbone for every dataset pair.
    Run(BenchRunArgs),
    /// Render the cross table and the claim summary.
    Report(BenchReportArgs),
}

#[derive(Args, Debug)]
pub struct BenchRunArgs {
    /// `NAME=ROOT`: a manifest file and the directory its images are under.
    /// Pairs are formed between `X` and `X_FG` manifest names.
    #[arg(long = "dataset", value_name = "MANIFEST=ROOT")]
    pub datasets: Vec<String>,
    /// Use the synthetic feature generator under this name instead of manifests.
    #[arg(long, conflicts_with = "datasets")]
    pub synthetic: Option<String>,
    /// Backbone ids; default from `bench.backbones`.
    #[arg(long, value_delimiter = ',')]
    pub backbones: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "results")]
    pub results: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchReportArgs {
    /// Results directory written by `bench run`.
    #[arg(long, conflicts_with = "published")]
    pub results: Option<PathBuf>,
    /// Report on the bundled published accuracies instead.
    #[arg(long)]
    pub published: bool,
    /// Also write the table as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write one bar chart per dataset pair into this directory.
    #[arg(long)]
    pub charts: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Project source and foreground embeddings and compare cluster metrics.
    Tsne(TsneArgs),
    /// Grad-CAM heatmap overlay for one image.
    Cam(CamArgs),
}

#[derive(Args, Debug)]
pub struct TsneArgs {
    #[arg(long, requires = "source_root")]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub source_root: Option<PathBuf>,
    #[arg(long, requires = "fg_root")]
    pub fg: Option<PathBuf>,
    #[arg(long)]
    pub fg_root: Option<PathBuf>,
    /// Use synthetic embeddings with this many points per class.
    #[arg(long, conflicts_with_all = ["source", "fg"])]
    pub synthetic: Option<usize>,
    /// Which split of both manifests to project; required for manifest input.
    #[arg(long, value_enum, required_unless_present = "synthetic")]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct CamArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value = "conv2")]
    pub layer: String,
    #[arg(long, default_value_t = 0)]
    pub target: usize,
    /// Seed of the built-in demonstration network.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FixturesArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub clean: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Dataset kind whose defaults to start from.
    #[arg(long, default_value = "generic")]
    pub kind: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
