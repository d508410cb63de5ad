//! Building a question–text corpus from the web.
//!
//! For each factoid question the pipeline asks a search provider for
//! candidate URLs, fetches and strips the pages, keeps texts that contain the
//! gold answer (or, lacking one, match the question keywords), and assembles
//! answer-bearing passages into one corpus text per question. The corpus is
//! stored as plain text with a tab-separated manifest, and URL-level
//! precision can be computed over it.
//!
//! Module map:
//!
//! - [`arabic`]: normalization and tokenization used by every matcher
//! - [`question`]: question bank, interrogative type, keywords, focus
//! - [`search`]: queries, URL parsing, fixture and live providers
//! - [`fetch`]: polite fetching and the page cache
//! - [`extract`]: HTML to text, foreign-token filtering
//! - [`filter`]: answer presence, coverage, passages, assembly
//! - [`store`]: corpus persistence and statistics
//! - [`eval`]: URL precision
//! - [`pipeline`]: the end-to-end build
//! - [`par`]: parallel/sequential execution switch

pub mod arabic;
pub mod eval;
pub mod extract;
pub mod fetch;
pub mod filter;
pub mod par;
pub mod pipeline;
pub mod question;
pub mod search;
pub mod store;

pub use arabic::{normalize_text, tokenize, NormalizedString};
pub use eval::{evaluation_report, micro_precision, EvalReport, UrlLabel};
pub use extract::{filter_foreign_tokens, html_to_text, ExtractedText};
pub use fetch::{FetchPolicy, FetchStatus, Fetcher, PageRecord};
pub use filter::{
    build_corpus_text, contains_answer, extract_passage, keyword_coverage, AssembledText, CandidateText, Passage,
};
pub use par::ExecMode;
pub use pipeline::{build_corpus, BuildConfig, BuildReport, Pipeline};
pub use question::{load_questions, AnswerType, Domain, Question, QuestionType, Source};
pub use search::{build_query, parse_url, ProviderConfig, SearchQuery, UrlParts, UrlRecord};
pub use store::{AcceptedBy, CandidateUrl, CorpusEntry, CorpusStats, CorpusStore, StoreError};
