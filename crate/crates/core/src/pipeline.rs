//! End-to-end construction: search, fetch, extract, filter, assemble, store.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::extract::{filter_foreign_tokens, html_to_text, ExtractedText};
use crate::fetch::{
    Clock, FetchPolicy, FetchStatus, Fetcher, FixtureTransport, HttpTransport, PageRecord, SystemClock, Transport,
};
use crate::filter::{build_corpus_text, CandidateText, DEFAULT_MAX_PASSAGES};
use crate::par::{self, ExecMode};
use crate::question::Question;
use crate::search::{
    build_query, ProviderConfig, ProviderKind, SearchError, SearchProvider, UrlRecord, DEFAULT_MAX_RESULTS,
};
use crate::store::{AcceptedBy, CandidateUrl, CorpusEntry, CorpusStore, StoreError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("max_urls must be at least 1")]
    MaxUrls,
    #[error("max_passages must be at least 1")]
    MaxPassages,
    #[error("output and cache directories must differ")]
    SameDirs,
    #[error(transparent)]
    Policy(#[from] crate::fetch::PolicyError),
    #[error(transparent)]
    Provider(#[from] SearchError),
    #[error("cannot set up transport: {0}")]
    Transport(String),
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub questions_path: PathBuf,
    pub out_dir: PathBuf,
    pub provider: ProviderConfig,
    pub max_urls: usize,
    pub max_passages: usize,
    pub policy: FetchPolicy,
    pub cache_dir: PathBuf,
    /// Constant provenance timestamps, for reproducible output.
    pub fixed_clock: bool,
    pub mode: ExecMode,
}

impl BuildConfig {
    pub fn new(questions_path: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, provider: ProviderConfig) -> Self {
        let out_dir = out_dir.into();
        BuildConfig {
            questions_path: questions_path.into(),
            cache_dir: out_dir.with_extension("cache"),
            out_dir,
            provider,
            max_urls: DEFAULT_MAX_RESULTS,
            max_passages: DEFAULT_MAX_PASSAGES,
            policy: FetchPolicy::default(),
            fixed_clock: false,
            mode: ExecMode::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_urls == 0 {
            return Err(ConfigError::MaxUrls);
        }
        if self.max_passages == 0 {
            return Err(ConfigError::MaxPassages);
        }
        if same_path(&self.out_dir, &self.cache_dir) {
            return Err(ConfigError::SameDirs);
        }
        self.policy.validate()?;
        self.provider.validate()?;
        Ok(())
    }
}

fn same_path(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Outcome of running one URL through fetch, extraction and scoring.
#[derive(Debug, Clone, Serialize)]
pub struct UrlOutcome {
    pub record: UrlRecord,
    pub page: PageRecord,
    pub extracted: Option<ExtractedText>,
    pub candidate: Option<CandidateText>,
}

impl UrlOutcome {
    pub fn qualified(&self) -> bool {
        self.candidate.as_ref().is_some_and(CandidateText::qualifies)
    }

    pub fn to_candidate_url(&self) -> CandidateUrl {
        CandidateUrl { record: self.record.clone(), status: self.page.status, qualified: self.qualified() }
    }
}

#[derive(Debug)]
pub enum QuestionOutcome {
    Built(Box<CorpusEntry>),
    NoResults,
    NoQualifying { candidates: Vec<CandidateUrl> },
    SearchFailed(SearchError),
}

pub struct Pipeline {
    provider: Arc<dyn SearchProvider>,
    fetcher: Fetcher,
    cache_dir: PathBuf,
    max_urls: usize,
    max_passages: usize,
    mode: ExecMode,
}

impl Pipeline {
    pub fn new(
        provider: Arc<dyn SearchProvider>,
        fetcher: Fetcher,
        cache_dir: impl Into<PathBuf>,
        max_urls: usize,
        max_passages: usize,
        mode: ExecMode,
    ) -> Self {
        Pipeline { provider, fetcher, cache_dir: cache_dir.into(), max_urls, max_passages, mode }
    }

    /// Provider, transport and clock chosen from the configuration.
    pub fn from_config(cfg: &BuildConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let provider = cfg.provider.build()?;
        let transport: Arc<dyn Transport> = match cfg.provider.kind {
            ProviderKind::Fixture => Arc::new(FixtureTransport::new(cfg.provider.fixture_dir.as_ref().unwrap())),
            ProviderKind::Live => {
                Arc::new(HttpTransport::new(cfg.policy.timeout_ms).map_err(|e| ConfigError::Transport(e.to_string()))?)
            }
        };
        let clock: Arc<dyn Clock> =
            Arc::new(if cfg.fixed_clock { SystemClock::fixed() } else { SystemClock::default() });
        Ok(Pipeline::new(
            provider,
            Fetcher::new(transport, clock, cfg.policy),
            &cfg.cache_dir,
            cfg.max_urls,
            cfg.max_passages,
            cfg.mode,
        ))
    }

    pub fn provider(&self) -> &dyn SearchProvider {
        self.provider.as_ref()
    }

    pub fn fetcher(&self) -> &Fetcher {
        &self.fetcher
    }

    pub fn max_urls(&self) -> usize {
        self.max_urls
    }

    pub fn max_passages(&self) -> usize {
        self.max_passages
    }

    pub fn search(&self, q: &Question, max_results: usize) -> Result<Vec<UrlRecord>, SearchError> {
        let query = build_query(q).with_max_results(max_results)?;
        self.provider.search(&query)
    }

    /// Fetch (through the cache), clean and score one URL for `q`.
    pub fn process_url(&self, q: &Question, record: &UrlRecord) -> UrlOutcome {
        let page = match self.fetcher.get_or_fetch(record, &self.cache_dir) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("cache unavailable for {}: {e}; fetching directly", record.url);
                self.fetcher.fetch_page(record)
            }
        };
        let mut outcome = UrlOutcome { record: record.clone(), page, extracted: None, candidate: None };
        if let (FetchStatus::Ok, Some(raw)) = (outcome.page.status, outcome.page.raw_html.as_deref()) {
            match html_to_text(raw, &outcome.page.encoding) {
                Ok(text) => {
                    let extracted = filter_foreign_tokens(&text);
                    outcome.candidate = Some(CandidateText::score(&record.url, record.rank, extracted.text.clone(), q));
                    outcome.extracted = Some(extracted);
                }
                Err(e) => log::warn!("{}: {e}", record.url),
            }
        }
        outcome
    }

    /// Run the whole chain for one question.
    pub fn process_question(&self, q: &Question, created_at: chrono::DateTime<chrono::Utc>) -> QuestionOutcome {
        let records = match self.search(q, self.max_urls) {
            Ok(r) => r,
            Err(e) => return QuestionOutcome::SearchFailed(e),
        };
        if records.is_empty() {
            return QuestionOutcome::NoResults;
        }
        let outcomes = par::map(self.mode, &records, |r| self.process_url(q, r));
        let candidates: Vec<CandidateText> = outcomes.iter().filter_map(|o| o.candidate.clone()).collect();
        let candidate_urls: Vec<CandidateUrl> = outcomes.iter().map(UrlOutcome::to_candidate_url).collect();
        match build_corpus_text(&candidates, q, self.max_passages) {
            Some(assembled) => QuestionOutcome::Built(Box::new(CorpusEntry {
                question: q.clone(),
                assembled,
                candidate_urls,
                accepted_by: AcceptedBy::Auto,
                created_at,
            })),
            None => QuestionOutcome::NoQualifying { candidates: candidate_urls },
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub stored: Vec<String>,
    pub skipped_existing: Vec<String>,
    pub no_result: Vec<String>,
    pub no_qualifying: Vec<String>,
    pub search_failed: Vec<(String, String)>,
}

/// Build entries for every question not yet in `store`. Questions are
/// processed with `mode`; entries are written in question order.
pub fn build_corpus(
    questions: &[Question],
    pipeline: &Pipeline,
    store: &mut CorpusStore,
) -> Result<BuildReport, StoreError> {
    let mut report = BuildReport::default();
    let todo: Vec<&Question> = questions
        .iter()
        .filter(|q| {
            let done = store.contains(&q.id);
            if done {
                report.skipped_existing.push(q.id.clone());
            }
            !done
        })
        .collect();
    let clock = pipeline.fetcher.clock().clone();
    let outcomes = par::map(pipeline.mode, &todo, |q| pipeline.process_question(q, clock.timestamp()));
    for (q, outcome) in todo.iter().zip(outcomes) {
        match outcome {
            QuestionOutcome::Built(entry) => {
                store.add_entry(*entry)?;
                report.stored.push(q.id.clone());
            }
            QuestionOutcome::NoResults => {
                log::info!("{}: search returned no URLs", q.id);
                report.no_result.push(q.id.clone());
            }
            QuestionOutcome::NoQualifying { candidates } => {
                log::info!("{}: none of {} URLs qualified", q.id, candidates.len());
                report.no_qualifying.push(q.id.clone());
            }
            QuestionOutcome::SearchFailed(e) => {
                log::warn!("{}: search failed: {e}", q.id);
                report.search_failed.push((q.id.clone(), e.to_string()));
            }
        }
    }
    Ok(report)
}
