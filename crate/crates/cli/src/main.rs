//! `webcorp`: build a question-text corpus, evaluate it, or serve it for review.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 (`build` only)
//! the corpus holds no entry after the run.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use webcorp_core::eval::{auto_labels, load_labels};
use webcorp_core::search::ProviderKind;
use webcorp_core::{
    build_corpus, evaluation_report, load_questions, BuildConfig, CorpusStore, ExecMode, FetchPolicy, Pipeline,
    ProviderConfig,
};

#[derive(Debug, Parser)]
#[command(name = "webcorp", version, about = "Build an Arabic question-text corpus from the web")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search, fetch, filter and store one text per question.
    Build(BuildArgs),
    /// Report URL precision for a stored corpus.
    Eval(EvalArgs),
    /// Run the JSON review service over a corpus.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderChoice {
    Live,
    Fixture,
}

#[derive(Debug, Clone, Args)]
struct PipelineArgs {
    /// Question bank, one JSON object per line.
    #[arg(long)]
    questions: PathBuf,
    #[arg(long, value_enum, default_value_t = ProviderChoice::Fixture)]
    provider: ProviderChoice,
    /// Directory holding `manifest` and `pages/` for the fixture provider.
    #[arg(long)]
    fixture_dir: Option<PathBuf>,
    /// Search endpoint for the live provider.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 25)]
    max_urls: usize,
    #[arg(long, default_value_t = 9)]
    max_passages: usize,
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 1_000)]
    per_host_interval_ms: u64,
    #[arg(long, default_value_t = 2 * 1024 * 1024)]
    max_bytes: usize,
    #[arg(long, default_value_t = 4)]
    max_concurrent: usize,
    /// Page cache; defaults to the output directory with a `.cache` suffix.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Stamp every entry with a constant time, for reproducible output.
    #[arg(long)]
    fixed_clock: bool,
    /// Process questions and URLs one at a time.
    #[arg(long)]
    sequential: bool,
}

impl PipelineArgs {
    fn config(&self, out: PathBuf) -> BuildConfig {
        let mut provider = match self.provider {
            ProviderChoice::Fixture => ProviderConfig {
                kind: ProviderKind::Fixture,
                fixture_dir: self.fixture_dir.clone(),
                endpoint: None,
                ..ProviderConfig::fixture(PathBuf::new())
            },
            ProviderChoice::Live => ProviderConfig {
                kind: ProviderKind::Live,
                fixture_dir: None,
                endpoint: self.endpoint.clone(),
                ..ProviderConfig::live(String::new())
            },
        };
        provider.timeout_ms = self.timeout_ms;
        let mut cfg = BuildConfig::new(&self.questions, out, provider);
        if let Some(dir) = &self.cache_dir {
            cfg.cache_dir = dir.clone();
        }
        cfg.max_urls = self.max_urls;
        cfg.max_passages = self.max_passages;
        cfg.policy = FetchPolicy {
            timeout_ms: self.timeout_ms,
            max_bytes: self.max_bytes,
            per_host_interval_ms: self.per_host_interval_ms,
            max_concurrent: self.max_concurrent,
        };
        cfg.fixed_clock = self.fixed_clock;
        cfg.mode = if self.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
        cfg
    }
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Corpus directory, created if missing. Questions already stored are skipped.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("labels_source").required(true).args(["labels", "auto"]))]
struct EvalArgs {
    corpus: PathBuf,
    /// `question_id TAB url TAB 1|0` lines.
    labels: Option<PathBuf>,
    /// Use the stored qualified flags as labels.
    #[arg(long)]
    auto: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Corpus directory, created if missing.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = webcorp_api::DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Only this origin may call the service from a browser; any if unset.
    #[arg(long)]
    cors_origin: Option<String>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

/// Result of a command that ran to completion.
enum Outcome {
    Done,
    Empty,
}

fn build(args: BuildArgs) -> Result<Outcome> {
    let cfg = args.pipeline.config(args.out);
    let questions = load_questions(&cfg.questions_path)?;
    let pipeline = Pipeline::from_config(&cfg)?;
    let mut store = CorpusStore::open(&cfg.out_dir)?;
    let report = build_corpus(&questions, &pipeline, &mut store)?;
    log::info!(
        "stored {}, already present {}, no results {}, nothing qualifying {}, search failed {}",
        report.stored.len(),
        report.skipped_existing.len(),
        report.no_result.len(),
        report.no_qualifying.len(),
        report.search_failed.len()
    );
    for id in &report.no_qualifying {
        log::warn!("{id}: no candidate text qualified, question left out");
    }
    print!("{}", store.compute_stats().table_lines());
    Ok(if store.is_empty() { Outcome::Empty } else { Outcome::Done })
}

fn eval(args: EvalArgs) -> Result<Outcome> {
    let store = CorpusStore::load(&args.corpus)?;
    let labels = match (&args.labels, args.auto) {
        (_, true) => auto_labels(&store),
        (Some(path), false) => load_labels(path)?,
        (None, false) => bail!("give a labels file or --auto"),
    };
    let report = evaluation_report(&labels, &store)?;
    print!("{}", report.render());
    Ok(Outcome::Done)
}

fn serve(args: ServeArgs) -> Result<Outcome> {
    let cfg = args.pipeline.config(args.corpus);
    let questions = load_questions(&cfg.questions_path)?;
    let pipeline = Pipeline::from_config(&cfg)?;
    let store = CorpusStore::open(&cfg.out_dir)?;
    let mut state = webcorp_api::AppState::new(questions, pipeline, store);
    if let Some(origin) = &args.cors_origin {
        state = state.with_cors_origin(origin.parse().with_context(|| format!("bad CORS origin {origin:?}"))?);
    }
    let app = webcorp_api::router(Arc::new(state));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener =
            tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("cannot listen on {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        webcorp_api::serve(listener, app, webcorp_api::interrupt()).await?;
        log::info!("stopped");
        Ok(Outcome::Done)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Build(a) => build(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Empty) => {
            log::error!("no question produced a corpus entry");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
