mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Failure class carried to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Config = 2,
    Backend = 3,
    Data = 4,
}

#[derive(Debug, thiserror::Error)]
#[error("{inner:#}")]
pub struct Coded {
    pub exit: Exit,
    pub inner: anyhow::Error,
}

pub trait CodedExt<T> {
    fn or_exit(self, exit: Exit) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> CodedExt<T> for Result<T, E> {
    fn or_exit(self, exit: Exit) -> anyhow::Result<T> {
        self.map_err(|e| Coded { exit, inner: e.into() }.into())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "clorder",
    version,
    about = "Dependency-aware chunk ordering for summarization chains"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// default, dense, dfs-greedy, cl-order, random, a comma list, or `all`.
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// dense, bm25 or local-hash.
    #[arg(long, global = true)]
    similarity: Option<String>,
    /// http or mock.
    #[arg(long, global = true)]
    generation: Option<String>,
    #[arg(long, global = true)]
    per_chunk_token_limit: Option<usize>,
    #[arg(long, global = true)]
    summary_token_limit: Option<usize>,
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON `{"values": [[..]], "query_scores": [..]}` used instead of any
    /// similarity backend.
    #[arg(long, global = true)]
    similarity_matrix_file: Option<PathBuf>,
    #[arg(long = "out", global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    mock_capacity: Option<usize>,
    /// Report zero latency so traces are byte-identical across runs.
    #[arg(long, global = true)]
    frozen_timing: bool,
}

impl CommonArgs {
    fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let path = |p: &PathBuf| p.display().to_string();
        let mut out = Vec::new();
        let mut push = |k, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("dataset", self.dataset.as_ref().map(path));
        push("strategy", self.strategy.clone());
        push("similarity", self.similarity.clone());
        push("generation", self.generation.clone());
        push(
            "per_chunk_token_limit",
            self.per_chunk_token_limit.map(|v| v.to_string()),
        );
        push("summary_token_limit", self.summary_token_limit.map(|v| v.to_string()));
        push("parallel", self.parallel.map(|v| v.to_string()));
        push("cache_dir", self.cache_dir.as_ref().map(path));
        push("seed", self.seed.map(|v| v.to_string()));
        push("similarity_matrix_file", self.similarity_matrix_file.as_ref().map(path));
        push("output_dir", self.output_dir.as_ref().map(path));
        push("mock_capacity", self.mock_capacity.map(|v| v.to_string()));
        push("frozen_timing", self.frozen_timing.then(|| "true".to_owned()));
        out
    }

    /// Defaults, then the config file, then `--set`, then dedicated flags.
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k.trim(), v)?;
        }
        for (k, v) in self.flag_pairs() {
            cfg.set(k, &v)?;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split every record's context and print the chunks as JSONL.
    Chunk {
        #[arg(long)]
        query_id: Option<String>,
    },
    /// Plan orderings for one document and print them as JSON lines; the
    /// tree goes to stderr.
    Order {
        /// Record to order; the first one if neither this nor --doc is given.
        #[arg(long)]
        query_id: Option<String>,
        /// Plain-text document, used with --query instead of a dataset.
        #[arg(long, requires = "query")]
        doc: Option<PathBuf>,
        #[arg(long)]
        query: Option<String>,
    },
    /// Run chains over the dataset and score them.
    Run,
    /// Run every configured strategy under several similarity backends.
    Ablate {
        /// Comma list of similarity backends.
        #[arg(long, default_value = "local-hash,bm25")]
        similarities: String,
    },
    /// Monte Carlo over synthetic corpora with a lossy memory.
    Simulate {
        #[arg(long, default_value_t = 200)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        /// Facts the memory holds; `inf` for no bottleneck.
        #[arg(long)]
        capacity: Option<String>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        chunks_per_cluster: Option<usize>,
    },
    /// Re-score a results file against the dataset.
    Eval {
        #[arg(long)]
        results: PathBuf,
        /// Also write the table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Inspect or clear the embedding cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum CacheAction {
    Inspect,
    Clear,
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.common.resolve().or_exit(Exit::Config)?;
    log::info!("effective config:\n{}", cfg.render());
    match cli.command {
        Command::Chunk { query_id } => commands::chunk(&cfg, query_id.as_deref()),
        Command::Order { query_id, doc, query } => {
            commands::order(&cfg, query_id.as_deref(), doc.as_deref(), query.as_deref())
        }
        Command::Run => commands::run(&cfg).map(|_| ()),
        Command::Ablate { similarities } => commands::ablate(&cfg, &similarities),
        Command::Simulate {
            seeds,
            first_seed,
            capacity,
            window,
            clusters,
            chunks_per_cluster,
        } => commands::simulate(
            &cfg,
            &commands::SimulateArgs {
                seeds,
                first_seed,
                capacity,
                window,
                clusters,
                chunks_per_cluster,
            },
        ),
        Command::Eval { results, csv } => commands::eval(&cfg, &results, csv.as_deref()),
        Command::Cache { action } => commands::cache(&cfg, matches!(action, CacheAction::Clear)),
    }
}

/// The cause chain joined by `: `, skipping causes the previous message
/// already spells out.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (exit, err) = match e.downcast_ref::<Coded>() {
                Some(c) => (c.exit, &c.inner),
                None => (Exit::Data, &e),
            };
            eprintln!("error: {}", describe(err));
            ExitCode::from(exit as u8)
        }
    }
}
