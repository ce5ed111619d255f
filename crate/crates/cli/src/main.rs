//! `mirc-lab`: stimulus generation, scoring, labeling and analysis for MIRC
//! studies, plus the experiment service.

mod analysis;
mod config;
mod context;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use context::Context;

#[derive(Debug, Parser)]
#[command(name = "mirc-lab", version, about, propagate_version = true)]
struct Cli {
    /// Run configuration (TOML or JSON).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Root seed; overrides MIRC_LAB_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset manifest; overrides the config file.
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Output directory for artifacts (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score free-text responses and compute per-node accuracies.
    Score(ScoreArgs),
    /// Run the spatial reduction search from node accuracies.
    Reduce(ReduceArgs),
    /// Label spatial MIRCs and attach one scrambled variant to each.
    Scramble(TreesArg),
    /// Attach accuracies and confidences, then assign MIRC roles.
    MircLabel(LabelArgs),
    /// Export parent/child pairs.
    Pairs(PairsArgs),
    /// Recognition gaps and reduction rates.
    Metrics {
        #[command(subcommand)]
        which: MetricsCommand,
    },
    /// Feature retention analysis.
    Features {
        #[command(subcommand)]
        which: FeaturesCommand,
    },
    /// Dataset counts per split.
    Summarize(SummarizeArgs),
    /// Run the experiment service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Response table; defaults to the manifest's.
    #[arg(long, value_name = "FILE")]
    responses: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReduceArgs {
    /// Node accuracies from `score`; defaults to `<out>/node_accuracies.json`.
    #[arg(long, value_name = "FILE")]
    accuracies: Option<PathBuf>,
    /// Generate every corner crop to the maximum level instead.
    #[arg(long)]
    full: bool,
}

#[derive(Debug, Args)]
struct TreesArg {
    /// Input trees; defaults to the previous step's output.
    #[arg(long, value_name = "FILE")]
    trees: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[arg(long, value_name = "FILE")]
    trees: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    accuracies: Option<PathBuf>,
    /// Model confidences; defaults to the manifest's.
    #[arg(long, value_name = "FILE")]
    confidences: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PairKindArg {
    Any,
    Mirc,
    Spatiotemporal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MeasureArg {
    Human,
    Model,
}

#[derive(Debug, Args)]
struct PairsArgs {
    #[arg(long, value_name = "FILE")]
    trees: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mirc")]
    kind: PairKindArg,
    #[arg(long, value_enum, default_value = "human")]
    measure: MeasureArg,
}

#[derive(Debug, Subcommand)]
enum MetricsCommand {
    /// Human and model recognition gaps per verb class.
    Rg(TreesArg),
    /// Share of pairs whose child scored lower, with the delta histogram.
    Arr(PairsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Pearson,
    Spearman,
}

#[derive(Debug, Subcommand)]
enum FeaturesCommand {
    /// Retention ratios of every feature for every tested node.
    Ratios(TreesArg),
    /// Correctness flips between parents and children with feature deltas.
    Transitions(TreesArg),
    /// Mean feature deltas per classifier and direction.
    Deltas(TreesArg),
    /// Correlation matrices of feature deltas.
    Correlate {
        #[command(flatten)]
        trees: TreesArg,
        #[arg(long, value_enum, default_value = "pearson")]
        method: MethodArg,
    },
    /// Scrambling improvement by temporal category.
    Temporal(TreesArg),
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    /// Labeled trees; without them only video counts are reported.
    #[arg(long, value_name = "FILE")]
    trees: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Event log and snapshot directory.
    #[arg(long, value_name = "DIR", default_value = "study-data")]
    data_dir: PathBuf,
    /// Events between snapshots.
    #[arg(long, default_value_t = mirc_lab_service::DEFAULT_SNAPSHOT_EVERY)]
    snapshot_every: u64,
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Serve(a) = &cli.command {
        return serve(a);
    }
    let ctx = Context::new(cli.config.as_deref(), cli.seed, cli.manifest, cli.out)?;
    match cli.command {
        Command::Score(a) => pipeline::score(&ctx, a.responses),
        Command::Reduce(a) => pipeline::reduce(&ctx, a.accuracies, a.full),
        Command::Scramble(a) => pipeline::scramble(&ctx, a.trees),
        Command::MircLabel(a) => pipeline::mirc_label(&ctx, a.trees, a.accuracies, a.confidences),
        Command::Pairs(a) => analysis::pairs(&ctx, a.trees, a.kind, a.measure),
        Command::Metrics { which } => match which {
            MetricsCommand::Rg(a) => analysis::recognition_gap(&ctx, a.trees),
            MetricsCommand::Arr(a) => analysis::reduction_rate(&ctx, a.trees, a.kind, a.measure),
        },
        Command::Features { which } => match which {
            FeaturesCommand::Ratios(a) => analysis::ratios(&ctx, a.trees),
            FeaturesCommand::Transitions(a) => analysis::transitions(&ctx, a.trees),
            FeaturesCommand::Deltas(a) => analysis::deltas(&ctx, a.trees),
            FeaturesCommand::Correlate { trees, method } => {
                analysis::correlate(&ctx, trees.trees, method)
            }
            FeaturesCommand::Temporal(a) => analysis::temporal(&ctx, a.trees),
        },
        Command::Summarize(a) => analysis::summarize(&ctx, a.trees),
        Command::Serve(_) => unreachable!("handled above"),
    }
}

fn serve(args: &ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        println!("listening on http://{}", listener.local_addr()?);
        mirc_lab_service::serve(listener, &args.data_dir, args.snapshot_every)
            .await
            .context("service stopped")
    })
}

fn main() -> ExitCode {
    // Usage errors exit with status 2 from inside `parse`.
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
