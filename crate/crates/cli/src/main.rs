//! `gfm`: batch driver for descriptor extraction, prompt encoding,
//! contrastive pretraining, adaptation, evaluation and embedding analyses.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod bundle;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gfm_core::{ErrorClass, Exec};

#[derive(Parser, Debug)]
#[command(
    name = "gfm",
    version,
    about = "Structural-prompt graph foundation model pipeline"
)]
pub struct Cli {
    /// Seed for every random choice of the command (config files may set their own).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Run all data-parallel loops on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Seq
        } else {
            Exec::default()
        }
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(42)
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct GraphArgs {
    /// Bundle directory (graph.edges plus side files) or an edge-list file.
    #[arg(long)]
    pub graph: PathBuf,
    /// Node feature matrix (text or GFMMAT32 binary).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Binary node-by-label matrix.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// One split tag (train/valid/test) per node.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Precomputed N x 384 context embeddings.
    #[arg(long)]
    pub context: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic graph bundle.
    Generate(GenerateArgs),
    /// Structural descriptor table and graph statistics.
    Descriptors(DescriptorsArgs),
    /// Render structural prompts from a descriptor directory.
    Prompt(PromptArgs),
    /// Hash-encode prompts into N x 384 context embeddings.
    Encode(EncodeArgs),
    /// Multi-graph contrastive pretraining.
    Pretrain(PretrainArgs),
    /// Initialise and tune an adapter for a new graph.
    Adapt(AdaptArgs),
    /// Zero-shot, fine-tuned or few-shot evaluation.
    Evaluate(EvaluateArgs),
    /// Embedding-space analyses.
    Analyze(AnalyzeArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Sbm,
    Gnp,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub kind: GraphKind,
    /// Block sizes of the planted partition.
    #[arg(long, value_delimiter = ',', default_value = "100,100")]
    pub blocks: Vec<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.02)]
    pub p_out: f64,
    /// Node count of a G(n, p) graph.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Edge probability of a G(n, p) graph.
    #[arg(long, default_value_t = 0.05)]
    pub p: f64,
    /// Train/valid/test fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.2")]
    pub split: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spectral {
    Adjacency,
    NormalizedLaplacian,
}

#[derive(Args, Debug)]
pub struct DescriptorsArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Stop growing 2-hop ego balls at this many nodes.
    #[arg(long)]
    pub ego_cap: Option<usize>,
    #[arg(long, value_enum, default_value = "adjacency")]
    pub spectral: Spectral,
    /// SCoDA degree threshold (default: the degree mode).
    #[arg(long)]
    pub scoda_threshold: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PromptArgs {
    /// Directory written by `gfm descriptors`.
    #[arg(long)]
    pub descriptors: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Prompt file, one prompt per line.
    #[arg(long)]
    pub prompts: PathBuf,
    /// Hash seed of the encoder.
    #[arg(long, default_value_t = gfm_core::prompt::DEFAULT_HASH_SEED)]
    pub hash_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Directory of graph bundles, one subdirectory per graph.
    #[arg(long)]
    pub graphs: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Model shape override (adapter_dim, hidden_dim, out_dim, alpha, dropout, adapter_bias); repeatable.
    #[arg(long = "model", value_name = "KEY=VALUE")]
    pub model: Vec<String>,
    /// Continue from a `last.ckpt` written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// PPR cache directory (default: <out>/ppr_cache).
    #[arg(long)]
    pub ppr_cache: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Adapter id (default: bundle directory or file stem).
    #[arg(long)]
    pub graph_id: Option<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    ZeroShot,
    Finetune,
    FewShot,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long)]
    pub graph_id: Option<String>,
    #[arg(long, value_enum)]
    pub mode: EvalMode,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Few-shot K values, e.g. 1,5,10,20.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub analysis: Analysis,
}

#[derive(Subcommand, Debug)]
pub enum Analysis {
    /// Spearman correlation of label counts with local embedding density.
    Density {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 15)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Same-label fraction among k nearest neighbours of positive nodes.
    Enrichment {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Label column to analyse.
        #[arg(long)]
        label: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,25,50")]
        k_grid: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label co-enrichment matrix in k-NN neighbourhoods.
    CoEnrichment {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Anchor label columns (default: all with a positive node).
        #[arg(long, value_delimiter = ',')]
        anchors: Option<Vec<usize>>,
        #[arg(long, default_value_t = 25)]
        k: usize,
        /// Divide by label prevalence (observed over expected).
        #[arg(long)]
        ratio: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean test AUC per label stratum of an evaluation report.
    Strata {
        /// `report.json` written by `gfm evaluate`.
        #[arg(long)]
        report: PathBuf,
        /// `label<TAB>stratum` lines.
        #[arg(long)]
        strata: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
