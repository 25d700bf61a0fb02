use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use clorder::chowliu::{monte_carlo, SyntheticParams};
use clorder::corpus::{load_dataset, write_chunk_dump, QueryRecord, TokenEstimator, TokenEstimatorConfig};
use clorder::eval::{aggregate, render_table, score, write_csv, write_judge_jsonl, write_results_jsonl, EvalRecord};
use clorder::ordering::{plan_ordering, Strategy};
use clorder::pipeline::{
    write_trace, BackendLimits, ChainConfig, GenerationBackend, GenerationParams, HttpGenerationBackend, MockBackend,
    Timing,
};
use clorder::similarity::{
    Bm25Params, EmbedOptions, Embedder, EmbeddingBackend, EmbeddingCache, HttpEmbeddingBackend, LocalHashEmbedder,
    MatrixFile,
};
use clorder::throttle::RateLimiter;
use clorder::workflow::{
    chunk_record, prepare_query, query_seed, run_queries, FailureKind, QueryOutcome, RunSettings, SimilaritySource,
};

use crate::config::{GenerationKind, RunConfig, SimilarityKind};
use crate::{CodedExt, Exit};

fn estimator(cfg: &RunConfig) -> Result<TokenEstimator> {
    let mut ec = TokenEstimatorConfig::new(cfg.estimator);
    ec.vocabulary_path = cfg.vocabulary.clone();
    ec.build().or_exit(Exit::Config)
}

fn limiter(cfg: &RunConfig) -> Option<Arc<RateLimiter>> {
    (cfg.rate_limit > 0.0).then(|| Arc::new(RateLimiter::new(cfg.rate_limit, cfg.rate_limit.ceil() as usize)))
}

fn chain_config(cfg: &RunConfig) -> Result<ChainConfig> {
    Ok(ChainConfig {
        per_chunk_token_limit: cfg.per_chunk_token_limit,
        summary_token_limit: cfg.summary_token_limit,
        params: GenerationParams {
            temperature: cfg.temperature,
            top_p: cfg.top_p,
            max_output_tokens: cfg.max_output_tokens,
        },
        estimator: estimator(cfg)?,
        task_instruction: cfg.task_instruction.clone(),
        timing: if cfg.frozen_timing {
            Timing::Frozen
        } else {
            Timing::Wall
        },
    })
}

/// Owns whatever a [`SimilaritySource`] borrows.
enum SourceHolder {
    Embedder(Embedder),
    Bm25(Bm25Params),
    Matrix(MatrixFile),
}

impl SourceHolder {
    fn build(cfg: &RunConfig, kind: SimilarityKind, limiter: Option<Arc<RateLimiter>>) -> Result<Self> {
        if let Some(path) = &cfg.similarity_matrix_file {
            let raw = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .or_exit(Exit::Config)?;
            let file: MatrixFile = serde_json::from_str(&raw)
                .with_context(|| format!("parsing {}", path.display()))
                .or_exit(Exit::Data)?;
            return Ok(SourceHolder::Matrix(file));
        }
        Ok(match kind {
            SimilarityKind::Bm25 => SourceHolder::Bm25(Bm25Params {
                k1: cfg.bm25_k1,
                b: cfg.bm25_b,
            }),
            SimilarityKind::LocalHash => SourceHolder::Embedder(Embedder::new(
                Arc::new(LocalHashEmbedder::default()) as Arc<dyn EmbeddingBackend>
            )),
            SimilarityKind::Dense => {
                let endpoint = cfg
                    .embed_endpoint
                    .clone()
                    .context("no embed_endpoint")
                    .or_exit(Exit::Config)?;
                let mut http = HttpEmbeddingBackend::new(endpoint, &cfg.embed_model, cfg.embed_dim, "EMBED_API_KEY");
                if let Some(l) = limiter {
                    http = http.with_rate_limiter(l);
                }
                let cache = EmbeddingCache::open(&cfg.cache_dir).or_exit(Exit::Config)?;
                SourceHolder::Embedder(
                    Embedder::new(Arc::new(http) as Arc<dyn EmbeddingBackend>)
                        .with_options(EmbedOptions {
                            batch_size: cfg.embed_batch_size,
                            max_retries: cfg.max_retries,
                            ..EmbedOptions::default()
                        })
                        .with_cache(cache),
                )
            }
        })
    }

    fn source(&self, cfg: &RunConfig) -> SimilaritySource<'_> {
        match self {
            SourceHolder::Embedder(e) => SimilaritySource::Dense(e),
            SourceHolder::Bm25(params) => SimilaritySource::Bm25 {
                params: *params,
                mode: cfg.bm25_symmetrization,
            },
            SourceHolder::Matrix(m) => SimilaritySource::Matrix(m),
        }
    }
}

fn generation_backend(cfg: &RunConfig, limiter: Option<Arc<RateLimiter>>) -> Result<Box<dyn GenerationBackend>> {
    Ok(match cfg.generation {
        GenerationKind::Mock => Box::new(MockBackend::new(cfg.mock_capacity)),
        GenerationKind::Http => {
            let endpoint = cfg
                .gen_endpoint
                .clone()
                .context("no gen_endpoint")
                .or_exit(Exit::Config)?;
            let limits = BackendLimits {
                max_context_tokens: cfg.max_context_tokens,
                max_output_tokens: cfg.max_output_tokens,
            };
            let mut b = HttpGenerationBackend::new(endpoint, cfg.gen_model.clone(), limits)
                .with_retries(cfg.max_retries, Duration::from_millis(500));
            if let Some(l) = limiter {
                b = b.with_rate_limiter(l);
            }
            Box::new(b)
        }
    })
}

fn dataset(cfg: &RunConfig) -> Result<Vec<QueryRecord>> {
    let path = cfg.dataset.as_ref().context("no dataset given").or_exit(Exit::Config)?;
    load_dataset(path).or_exit(Exit::Data)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn exit_for(kind: FailureKind) -> Exit {
    match kind {
        FailureKind::Config => Exit::Config,
        FailureKind::Backend => Exit::Backend,
        FailureKind::Data => Exit::Data,
    }
}

pub fn chunk(cfg: &RunConfig, query_id: Option<&str>) -> Result<()> {
    let est = estimator(cfg)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for r in dataset(cfg)?
        .iter()
        .filter(|r| query_id.is_none_or(|q| q == r.query_id))
    {
        let chunks = chunk_record(r, cfg.per_chunk_token_limit, &est).or_exit(Exit::Data)?;
        write_chunk_dump(&mut out, &chunks)?;
    }
    Ok(())
}

fn preview(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().take(6).collect();
    let more = if text.split_whitespace().count() > 6 {
        " ..."
    } else {
        ""
    };
    format!("{}{more}", words.join(" "))
}

pub fn order(cfg: &RunConfig, query_id: Option<&str>, doc: Option<&Path>, query: Option<&str>) -> Result<()> {
    let record = match doc {
        Some(path) => QueryRecord {
            query_id: path
                .file_stem()
                .map_or_else(|| "doc".into(), |s| s.to_string_lossy().into_owned()),
            query_text: query.unwrap_or_default().to_owned(),
            context: fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .or_exit(Exit::Config)?,
            gold_answers: Vec::new(),
            choices: None,
            gold_choice_index: None,
        },
        None => {
            let records = dataset(cfg)?;
            let found = match query_id {
                Some(id) => records.into_iter().find(|r| r.query_id == id),
                None => records.into_iter().next(),
            };
            let mut r = found.context("no matching record in dataset").or_exit(Exit::Data)?;
            if let Some(q) = query {
                r.query_text = q.to_owned();
            }
            r
        }
    };
    let holder = SourceHolder::build(cfg, cfg.similarity, limiter(cfg))?;
    let prepared = prepare_query(
        &record,
        cfg.per_chunk_token_limit,
        &estimator(cfg)?,
        &holder.source(cfg),
    )
    .map_err(|e| {
        let exit = exit_for(e.kind());
        crate::Coded { exit, inner: e.into() }
    })?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let labels: Vec<String> = prepared
        .chunks
        .iter()
        .map(|c| format!("{}: {}", c.chunk_id, preview(&c.text)))
        .collect();
    for (i, &strategy) in cfg.strategies.iter().enumerate() {
        let ordering = plan_ordering(
            strategy,
            &prepared.matrix,
            &prepared.query_scores,
            query_seed(cfg.seed, 0),
        )
        .or_exit(Exit::Data)?;
        let mut dump = ordering.to_dump();
        dump["query_id"] = record.query_id.clone().into();
        dump["chunk_ids"] = prepared
            .chunks
            .iter()
            .map(|c| c.chunk_id.clone())
            .collect::<Vec<_>>()
            .into();
        dump["config"] = cfg.to_json();
        writeln!(out, "{}", serde_json::to_string(&dump)?)?;
        if i == 0 {
            eprint!("{}", ordering.render_tree(&labels));
        }
        let names: Vec<&str> = ordering
            .order
            .iter()
            .map(|&k| prepared.chunks[k].chunk_id.as_str())
            .collect();
        eprintln!("{strategy}: {}", names.join(" -> "));
    }
    Ok(())
}

#[derive(Serialize)]
struct FailureLine<'a> {
    query_id: &'a str,
    strategy: Strategy,
    kind: FailureKind,
    message: &'a str,
    completed_steps: usize,
}

pub struct RunSummary {
    pub table: String,
    pub failures: usize,
}

fn run_with(cfg: &RunConfig, kind: SimilarityKind, out_dir: &Path) -> Result<(RunSummary, Option<Exit>)> {
    let records = dataset(cfg)?;
    let chain = chain_config(cfg)?;
    let shared = limiter(cfg);
    let holder = SourceHolder::build(cfg, kind, shared.clone())?;
    let backend = generation_backend(cfg, shared)?;
    let settings = RunSettings {
        strategies: &cfg.strategies,
        chain: &chain,
        seed: cfg.seed,
        parallel: cfg.parallel,
    };
    let outcomes = run_queries(&records, &holder.source(cfg), backend.as_ref(), &settings).or_exit(Exit::Config)?;

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("config.txt"), cfg.render())?;
    let by_id: BTreeMap<&str, &QueryRecord> = records.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let evals: Vec<EvalRecord> = outcomes
        .iter()
        .filter_map(|o| o.eval(by_id[o.query_id.as_str()]))
        .collect();
    write_outputs(cfg, out_dir, &outcomes, &evals, &records)?;

    let failed: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.result.is_err()).collect();
    let mut f = create(&out_dir.join("failures.jsonl"))?;
    for o in &failed {
        let err = o.result.as_ref().unwrap_err();
        log::warn!("{} [{}]: {}", o.query_id, o.strategy, err.message);
        let line = FailureLine {
            query_id: &o.query_id,
            strategy: o.strategy,
            kind: err.kind,
            message: &err.message,
            completed_steps: err.partial_trace.len().saturating_sub(1),
        };
        writeln!(f, "{}", serde_json::to_string(&line)?)?;
    }
    f.flush()?;
    let exit = failed.first().map(|o| exit_for(o.result.as_ref().unwrap_err().kind));
    let table = render_table(&aggregate(&evals));
    fs::write(out_dir.join("table.txt"), &table)?;
    Ok((
        RunSummary {
            table,
            failures: failed.len(),
        },
        exit,
    ))
}

fn write_outputs(
    cfg: &RunConfig,
    out_dir: &Path,
    outcomes: &[QueryOutcome],
    evals: &[EvalRecord],
    records: &[QueryRecord],
) -> Result<()> {
    let mut results = create(&out_dir.join("results.jsonl"))?;
    write_results_jsonl(&mut results, evals)?;
    results.flush()?;
    let mut judge = create(&out_dir.join("judge.jsonl"))?;
    write_judge_jsonl(&mut judge, evals, records)?;
    judge.flush()?;
    let mut csv = create(&out_dir.join("em.csv"))?;
    write_csv(&mut csv, &aggregate(evals))?;
    csv.flush()?;

    let mut orderings = create(&out_dir.join("orderings.jsonl"))?;
    for o in outcomes {
        if let Some(ord) = &o.ordering {
            let mut dump = ord.to_dump();
            dump["query_id"] = o.query_id.clone().into();
            writeln!(orderings, "{}", serde_json::to_string(&dump)?)?;
        }
    }
    orderings.flush()?;

    for &s in &cfg.strategies {
        let mut t = create(&out_dir.join("traces").join(format!("{s}.jsonl")))?;
        for o in outcomes.iter().filter(|o| o.strategy == s) {
            if let Ok(r) = &o.result {
                write_trace(&mut t, r)?;
            }
        }
        t.flush()?;
    }
    Ok(())
}

pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let (summary, exit) = run_with(cfg, cfg.similarity, &cfg.output_dir)?;
    print!("{}", summary.table);
    if let Some(exit) = exit {
        return Err(anyhow::anyhow!(
            "{} query run(s) failed; see failures.jsonl",
            summary.failures
        ))
        .or_exit(exit);
    }
    Ok(summary)
}

pub fn ablate(cfg: &RunConfig, similarities: &str) -> Result<()> {
    let mut worst = None;
    for name in similarities.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let mut c = cfg.clone();
        c.set("similarity", name).or_exit(Exit::Config)?;
        c.check().or_exit(Exit::Config)?;
        let (summary, exit) = run_with(&c, c.similarity, &cfg.output_dir.join(name))?;
        println!("similarity = {name}");
        print!("{}", summary.table);
        println!();
        worst = worst.or(exit);
    }
    if let Some(exit) = worst {
        bail!(crate::Coded {
            exit,
            inner: anyhow::anyhow!("some query runs failed; see failures.jsonl under each similarity"),
        });
    }
    Ok(())
}

pub struct SimulateArgs {
    pub seeds: usize,
    pub first_seed: u64,
    pub capacity: Option<String>,
    pub window: Option<usize>,
    pub clusters: Option<usize>,
    pub chunks_per_cluster: Option<usize>,
}

pub fn simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(anyhow::anyhow!("--seeds must be at least 1")).or_exit(Exit::Config);
    }
    let mut params = SyntheticParams::default();
    if let Some(w) = args.window {
        params.window = w;
    }
    if let Some(c) = args.clusters {
        params.clusters = c;
        params.query_affinity.resize(c, 0);
    }
    if let Some(c) = args.chunks_per_cluster {
        params.chunks_per_cluster = c;
    }
    match args.capacity.as_deref() {
        None => {}
        // no compression at all: nothing is evicted and no pair of chunks
        // is too far apart to be joined
        Some("inf") => {
            params.capacity = usize::MAX;
            params.window = params.clusters * params.chunks_per_cluster;
        }
        Some(v) => {
            params.capacity = v
                .parse()
                .ok()
                .filter(|&c| c > 0)
                .with_context(|| format!("--capacity: expected a positive integer or `inf`, got {v:?}"))
                .or_exit(Exit::Config)?
        }
    }
    let result = monte_carlo(args.seeds, args.first_seed, &params, &Strategy::ALL).or_exit(Exit::Config)?;
    let mut tests = serde_json::Map::new();
    for other in [Strategy::Random, Strategy::Dense, Strategy::Default] {
        let t = result
            .sign_test(Strategy::ClOrder, other)
            .expect("all strategies simulated");
        tests.insert(format!("cl-order>{other}"), serde_json::to_value(t)?);
    }
    let report = serde_json::json!({
        "seeds": args.seeds,
        "first_seed": args.first_seed,
        "params": params,
        "reports": result.reports,
        "sign_tests": tests,
        "config": cfg.to_json(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    for r in &result.reports {
        eprintln!(
            "{:<10}  mean {:>7.3}  sd {:>6.3}",
            r.strategy.as_str(),
            r.mean_retention,
            r.stddev
        );
    }
    Ok(())
}

#[derive(Deserialize)]
struct ResultRow {
    query_id: String,
    strategy: Strategy,
    answer: String,
}

pub fn eval(cfg: &RunConfig, results: &Path, csv: Option<&Path>) -> Result<()> {
    let records = dataset(cfg)?;
    let by_id: BTreeMap<&str, &QueryRecord> = records.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let file = File::open(results)
        .with_context(|| format!("opening {}", results.display()))
        .or_exit(Exit::Config)?;
    let mut evals = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ResultRow = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", results.display(), i + 1))
            .or_exit(Exit::Data)?;
        let rec = by_id
            .get(row.query_id.as_str())
            .with_context(|| format!("{}:{}: unknown query `{}`", results.display(), i + 1, row.query_id))
            .or_exit(Exit::Data)?;
        evals.push(score(rec, row.strategy, &row.answer));
    }
    let reports = aggregate(&evals);
    print!("{}", render_table(&reports));
    if let Some(path) = csv {
        let mut w = create(path)?;
        write_csv(&mut w, &reports)?;
        w.flush()?;
    }
    Ok(())
}

pub fn cache(cfg: &RunConfig, clear: bool) -> Result<()> {
    let dir: PathBuf = cfg.cache_dir.clone();
    let cache = EmbeddingCache::open(&dir).or_exit(Exit::Config)?;
    if clear {
        let n = cache.clear().or_exit(Exit::Data)?;
        println!("removed {n} entries from {}", dir.display());
    } else {
        let stats = cache.stats().or_exit(Exit::Data)?;
        println!("{}", serde_json::to_string_pretty(&stats)?);
    }
    Ok(())
}
