//! `trex` command line: ingest, build-index, query, eval. Stdout carries
//! only machine-readable JSON; diagnostics go to stderr. Exit codes: 0
//! success, 2 I/O and data errors, 64 usage errors, 70 internal failures.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use trex_core::corpus::{chunk_corpus, load_corpus, CorpusFormat};
use trex_core::engine::{build_corpus_index, Engine, QueryMode, QueryOptions};
use trex_core::error::{Error, Result};
use trex_core::eval::{load_dataset, run_eval, AnswerJudge, ContainmentJudge, LlmAnswerJudge};
use trex_core::llm::RemoteLlmClient;
use trex_core::EngineConfig;

#[derive(Parser)]
#[command(name = "trex", version, about = "Summary-tree retrieval engine with hybrid RRF search")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Engine config file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and chunk a corpus, reporting counts without building anything.
    Ingest {
        corpus_path: PathBuf,
        #[arg(long)]
        format: Option<FormatArg>,
    },
    /// Build the summary tree and persist the index.
    BuildIndex {
        corpus_path: PathBuf,
        #[arg(long)]
        index_dir: Option<PathBuf>,
        #[arg(long)]
        format: Option<FormatArg>,
        /// Overrides the config's clustering seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Retrieve contexts for a query from a built index.
    Query {
        query: String,
        #[arg(long)]
        index_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Trex)]
        mode: ModeArg,
        /// Trex: fused context count; traversal/collapsed: per-level k.
        #[arg(long)]
        top_n: Option<usize>,
        /// Token budget for the context list.
        #[arg(long)]
        budget: Option<usize>,
        /// Also ask the configured LLM to answer from the contexts.
        #[arg(long)]
        generate: bool,
    },
    /// Score retrieval over a JSONL dataset of questions and ground truth.
    Eval {
        dataset: PathBuf,
        #[arg(long)]
        index_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Trex)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = JudgeArg::Off)]
        judge: JudgeArg,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    PlainDir,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Trex,
    Traversal,
    Collapsed,
}

impl From<ModeArg> for QueryMode {
    fn from(mode: ModeArg) -> QueryMode {
        match mode {
            ModeArg::Trex => QueryMode::Trex,
            ModeArg::Traversal => QueryMode::Traversal,
            ModeArg::Collapsed => QueryMode::Collapsed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum JudgeArg {
    Off,
    Fallback,
    Remote,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::try_parse().unwrap_or_else(|e| {
        use clap::error::ErrorKind;
        let _ = e.print();
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => std::process::exit(0),
            _ => std::process::exit(64),
        }
    });
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("warning: could not size thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<EngineConfig> {
    match path {
        Some(path) => EngineConfig::from_file(path),
        None => Ok(EngineConfig::default()),
    }
}

fn resolve_index_dir(flag: Option<PathBuf>, config: &EngineConfig) -> Result<PathBuf> {
    flag.or_else(|| config.paths.index_dir.clone()).ok_or_else(|| {
        Error::Config("no index directory: pass --index-dir or set paths.index_dir".into())
    })
}

fn emit<T: Serialize>(value: &T, out: Option<&PathBuf>) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("serialize output: {e}")))?;
    match out {
        Some(path) => std::fs::write(path, json).map_err(|e| Error::io(path, e))?,
        None => println!("{json}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct IngestReport {
    documents: usize,
    chunks: usize,
    total_tokens: usize,
}

#[derive(Serialize)]
struct QueryOutput {
    mode: QueryMode,
    #[serde(flatten)]
    result: trex_core::retrieval::QueryResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    answer: Option<String>,
}

fn run(cli: Cli) -> Result<i32> {
    let config = load_config(&cli.config)?;
    match cli.command {
        Command::Ingest {
            corpus_path,
            format,
        } => {
            let format = format.map(|f| match f {
                FormatArg::Jsonl => CorpusFormat::Jsonl,
                FormatArg::PlainDir => CorpusFormat::PlainDir,
            });
            let documents = load_corpus(&corpus_path, format.unwrap_or(config.corpus.format))?;
            let tokenizer = config.corpus.tokenizer.build();
            let chunks = chunk_corpus(
                &documents,
                config.corpus.max_tokens,
                config.corpus.overlap_tokens,
                tokenizer.as_ref(),
            )?;
            emit(
                &IngestReport {
                    documents: documents.len(),
                    total_tokens: chunks.iter().map(|c| c.token_count).sum(),
                    chunks: chunks.len(),
                },
                None,
            )?;
            Ok(0)
        }
        Command::BuildIndex {
            corpus_path,
            index_dir,
            format,
            seed,
        } => {
            let mut config = config;
            if let Some(format) = format {
                config.corpus.format = match format {
                    FormatArg::Jsonl => CorpusFormat::Jsonl,
                    FormatArg::PlainDir => CorpusFormat::PlainDir,
                };
            }
            let index_dir = resolve_index_dir(index_dir, &config)?;
            let seed = seed.unwrap_or(config.clustering.seed);
            let report = build_corpus_index(&config, &corpus_path, &index_dir, seed)?;
            emit(&report, None)?;
            Ok(0)
        }
        Command::Query {
            query,
            index_dir,
            mode,
            top_n,
            budget,
            generate,
        } => {
            let index_dir = resolve_index_dir(index_dir, &config)?;
            let engine = Engine::open(config, &index_dir)?;
            let options = QueryOptions {
                mode: mode.into(),
                top_n,
                token_budget: budget,
            };
            let result = engine.query(&query, &options)?;
            let answer = if generate {
                Some(engine.generate(&query, &result)?)
            } else {
                None
            };
            emit(
                &QueryOutput {
                    mode: options.mode,
                    result,
                    answer,
                },
                None,
            )?;
            Ok(0)
        }
        Command::Eval {
            dataset,
            index_dir,
            mode,
            judge,
            out,
        } => {
            let index_dir = resolve_index_dir(index_dir, &config)?;
            let (rows, skipped) = load_dataset(&dataset)?;
            let judge_box: Option<Box<dyn AnswerJudge>> = match judge {
                JudgeArg::Off => None,
                JudgeArg::Fallback => Some(Box::new(ContainmentJudge)),
                JudgeArg::Remote => {
                    let llm = config.llm.clone().ok_or_else(|| {
                        Error::Config("--judge remote requires an `llm` config block".into())
                    })?;
                    Some(Box::new(LlmAnswerJudge::new(Box::new(
                        RemoteLlmClient::new(&llm)?,
                    ))))
                }
            };
            let engine = Engine::open(config, &index_dir)?;
            let options = QueryOptions {
                mode: mode.into(),
                ..QueryOptions::default()
            };
            let mut report = run_eval(
                &rows,
                |q| engine.query(q, &options),
                judge_box.as_deref(),
            );
            report.skipped = skipped;
            let all_failed = !report.rows.is_empty() && report.failed_questions == report.rows.len();
            emit(&report, out.as_ref())?;
            Ok(if all_failed { 2 } else { 0 })
        }
    }
}
