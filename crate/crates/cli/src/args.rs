use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "convfill", version, about = "Conversational infill runtime")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and filter fine-tuning corpora.
    #[command(subcommand)]
    Forge(ForgeCommand),
    /// Run and compare QA evaluations.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run utterances through the runtime and print the turns.
    Turn(TurnArgs),
    /// Serve the session gateway over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenMode {
    Template,
    Llm,
}

#[derive(Debug, Subcommand)]
pub enum ForgeCommand {
    /// Generate conversation documents, one JSON object per line.
    Generate(GenerateArgs),
    /// Split documents into training examples.
    Split(SplitArgs),
    /// Drop examples whose final chunk does not entail the target phrase.
    Filter(FilterArgs),
    /// Corpus statistics as JSON.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// A domain name, or `all`.
    #[arg(long, default_value = "all")]
    pub domain: String,
    /// Conversations per domain.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = GenMode::Template)]
    pub mode: GenMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Runtime config; `llm` mode uses its HTTP backend section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write rejected examples with their reasons.
    #[arg(long)]
    pub rejected: Option<PathBuf>,
    /// Runtime config; its classifier section picks the gate.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Conversation documents.
    #[arg(long)]
    pub docs: PathBuf,
    /// Kept examples from `forge filter`.
    #[arg(long, requires = "rejected")]
    pub kept: Option<PathBuf>,
    /// Rejected examples from `forge filter`.
    #[arg(long, requires = "kept")]
    pub rejected: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemKind {
    /// Backend plus infill through the turn engine.
    Full,
    /// The backend alone.
    Backend,
    /// The infill model alone, prompted with the bare question.
    Infill,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Evaluate a system on QA items.
    Run(EvalRunArgs),
    /// Metric deltas between two reports (second minus first).
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct EvalRunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// QA items as JSON lines; defaults to the bundled 20-question set.
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SystemKind::Full)]
    pub system: SystemKind,
    /// Label recorded in the report header.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub sample_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Seconds before an item counts as timed out.
    #[arg(long, default_value_t = 60.0)]
    pub ceiling: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Print the delta as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TurnArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Print the conversation as JSON instead of a timeline.
    #[arg(long)]
    pub json: bool,
    /// One turn per utterance, in order.
    #[arg(required = true)]
    pub utterances: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Shared bearer token required on /v1 routes.
    #[arg(long, env = "CONVFILL_TOKEN")]
    pub token: Option<String>,
    /// Directory of static client assets served at /.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Write each session's transcript here after every turn.
    #[arg(long)]
    pub persist_dir: Option<PathBuf>,
}
