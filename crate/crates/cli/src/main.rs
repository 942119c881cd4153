//! `gnnmix`: generate graphs, profile compositions, train selectors and run
//! GNN layers with a learned or fixed composition.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gnnmix_core::Error;

#[derive(Parser, Debug)]
#[command(name = "gnnmix", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Seed for generated embeddings, weights and graphs.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Kernel thread count.
    #[arg(long, global = true, env = "SENSEI_THREADS")]
    pub threads: Option<usize>,
    /// Log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic graph (or the bundled set) as Matrix Market.
    Generate(GenerateArgs),
    /// Print the graph features of a graph.
    Featurize(FeaturizeArgs),
    /// Time every composition over graphs and sizes; write NDJSON records.
    Profile(ProfileArgs),
    /// Train a composition selector from profile records.
    Train(TrainArgs),
    /// Ask a trained selector which composition to use.
    Select(SelectArgs),
    /// Run one layer with a fixed or selected composition.
    Run(RunArgs),
    /// Compare compositions (and tuned tiling with --opt) on graphs.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Generator spec, e.g. `er:1000:8`, `powerlaw:4096:8:1`, `grid:64x64`.
    #[arg(long, required_unless_present = "bundled")]
    pub spec: Option<String>,
    #[arg(long, requires = "spec")]
    pub out: Option<PathBuf>,
    /// Write every bundled graph into --out-dir.
    #[arg(long, requires = "out_dir")]
    pub bundled: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    /// Matrix Market file or generator spec.
    #[arg(long)]
    pub graph: String,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// Directories of .mtx files, .mtx files, generator specs, or `bundled`.
    #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
    pub graphs: Vec<String>,
    #[arg(long, default_value = "gcn")]
    pub model: String,
    /// Comma-separated `k1:k2` pairs; defaults to the standard set for the model.
    #[arg(long)]
    pub sizes: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the one-time Ñ build out of precompute timings.
    #[arg(long, default_value = "yes")]
    pub amortize_precompute: String,
    #[arg(long, default_value = "local")]
    pub hw_tag: String,
    /// Comma-separated numeric machine descriptor, e.g. LLC bytes.
    #[arg(long, value_delimiter = ',')]
    pub hw_descriptor: Vec<f64>,
    /// Tiling `width:height:reorder`, e.g. `4096:512:1`.
    #[arg(long)]
    pub tiling: Option<String>,
    /// Skip configurations whose estimated working set exceeds this.
    #[arg(long)]
    pub memory_budget_mb: Option<u64>,
    #[arg(long, default_value = "relu")]
    pub activation: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub profiles: Vec<PathBuf>,
    #[arg(long, default_value = "gcn")]
    pub model: String,
    #[arg(long)]
    pub out: PathBuf,
    /// `plain` (300 trees, lr 0.001) or `optimized` (410 trees, lr 0.05).
    #[arg(long, default_value = "plain")]
    pub preset: String,
    #[arg(long)]
    pub n_estimators: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_groups: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long)]
    pub graph: String,
    #[arg(long)]
    pub k1: usize,
    #[arg(long)]
    pub k2: usize,
    #[arg(long, value_delimiter = ',')]
    pub hw_descriptor: Vec<f64>,
    #[arg(long)]
    pub tiling: Option<String>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub graph: String,
    #[arg(long, default_value = "gcn")]
    pub model: String,
    #[arg(long)]
    pub k1: usize,
    #[arg(long)]
    pub k2: usize,
    /// A composition name, or `auto` to ask the selector in --model-file.
    #[arg(long, default_value = "auto")]
    pub composition: String,
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Auto-tune a tiling configuration before running.
    #[arg(long)]
    pub opt: bool,
    /// Fixed tiling `width:height:reorder`; overrides --opt.
    #[arg(long)]
    pub tiling: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, value_delimiter = ',')]
    pub hw_descriptor: Vec<f64>,
    #[arg(long, default_value = "relu")]
    pub activation: String,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, num_args = 1.., value_delimiter = ',', default_value = "bundled")]
    pub graphs: Vec<String>,
    /// `gcn`, `gat` or `all`.
    #[arg(long, default_value = "all")]
    pub model: String,
    /// Comma-separated `k1:k2` pairs; defaults to 32:32,32:256 (GCN) and 32:256 (GAT).
    #[arg(long)]
    pub sizes: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Also auto-tune tiling per graph and size and time both compositions tiled.
    #[arg(long)]
    pub opt: bool,
    /// Tuning budget for --opt.
    #[arg(long, default_value_t = 20)]
    pub budget: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Json(_) => 3,
        Error::Shape { .. }
        | Error::InvalidCsr(_)
        | Error::NonFinite { .. }
        | Error::DegenerateNode(_)
        | Error::DegenerateInput(_)
        | Error::Precondition(_) => 4,
        Error::InsufficientData { .. } => 5,
        Error::Schema { .. } => 6,
        Error::Config(_) => 7,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(7);
        }
    }
    let g = &cli.global;
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(g, a),
        Command::Featurize(a) => commands::featurize(g, a),
        Command::Profile(a) => commands::profile(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Select(a) => commands::select(g, a),
        Command::Run(a) => commands::run(g, a),
        Command::Bench(a) => commands::bench(g, a),
    };
    match result.and_then(|v| serde_json::to_string_pretty(&v).map_err(Error::from)) {
        Ok(s) => {
            println!("{s}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
