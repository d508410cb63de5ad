//! Query construction and candidate URL retrieval.
//!
//! Two providers share the [`SearchProvider`] contract: an offline fixture
//! backed by a manifest file, and a live HTTP endpoint speaking a JSON
//! result listing.
//!
//! Fixture manifest: one entry per line, `<keywords> TAB <urls>`, both lists
//! space-separated. Blank lines and lines starting with `#` are ignored. An
//! entry matches a query when every one of its (normalized) keywords occurs
//! among the query's keywords. Matched entries contribute their URLs ordered
//! by descending overlap, then manifest order; the concatenation is then
//! deduplicated and truncated to `max_results`.
//!
//! Live endpoint: `GET <endpoint>?q=<query>&format=json`, answering
//! `{"results": [{"url": "..."}, ...]}` (the SearXNG JSON shape).

use std::collections::HashSet;
use std::fmt;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::arabic::normalized_tokens;
use crate::fetch::{Clock, HostPacer, SystemClock};
use crate::question::Question;

/// Default number of URLs requested per question.
pub const DEFAULT_MAX_RESULTS: usize = 25;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("max_results must be at least 1")]
    ZeroMaxResults,
    #[error("query string is empty")]
    EmptyQuery,
    #[error("fixture manifest missing: {0}")]
    ManifestMissing(String),
    #[error("fixture manifest line {line}: {reason}")]
    ManifestMalformed { line: usize, reason: String },
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("provider timed out")]
    Timeout,
    #[error("provider response not understood: {0}")]
    BadResponse(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UrlError {
    #[error("cannot parse URL {url:?}: {reason}")]
    Malformed { url: String, reason: String },
    #[error("unsupported scheme {0:?} (only http and https)")]
    Scheme(String),
    #[error("URL has no host: {0:?}")]
    NoHost(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub question_id: String,
    pub query_string: String,
    pub max_results: usize,
}

impl SearchQuery {
    pub fn new(
        question_id: impl Into<String>,
        query_string: impl Into<String>,
        max_results: usize,
    ) -> Result<Self, SearchError> {
        let query_string = query_string.into();
        if max_results == 0 {
            return Err(SearchError::ZeroMaxResults);
        }
        if query_string.trim().is_empty() {
            return Err(SearchError::EmptyQuery);
        }
        Ok(SearchQuery { question_id: question_id.into(), query_string, max_results })
    }

    pub fn with_max_results(self, max_results: usize) -> Result<Self, SearchError> {
        SearchQuery::new(self.question_id, self.query_string, max_results)
    }
}

/// Query string is the question keywords joined by single spaces.
pub fn build_query(q: &Question) -> SearchQuery {
    SearchQuery { question_id: q.id.clone(), query_string: q.keywords.join(" "), max_results: DEFAULT_MAX_RESULTS }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UrlParts {
    pub protocol: String,
    pub host: String,
    pub path: String,
    pub query: Option<String>,
}

impl UrlParts {
    /// Inverse of [`parse_url`] for the fields it keeps; fragments are not
    /// part of `UrlParts`.
    pub fn render(&self) -> String {
        let mut s = format!("{}://{}{}", self.protocol, self.host, self.path);
        if let Some(q) = &self.query {
            s.push('?');
            s.push_str(q);
        }
        s
    }
}

fn parse_absolute(url: &str) -> Result<Url, UrlError> {
    let parsed =
        Url::parse(url.trim()).map_err(|e| UrlError::Malformed { url: url.to_owned(), reason: e.to_string() })?;
    match parsed.scheme() {
        "http" | "https" => {}
        other => return Err(UrlError::Scheme(other.to_owned())),
    }
    match parsed.host_str() {
        Some(h) if !h.is_empty() => Ok(parsed),
        _ => Err(UrlError::NoHost(url.to_owned())),
    }
}

/// Split an absolute http(s) URL into protocol, host, path and query.
pub fn parse_url(url: &str) -> Result<UrlParts, UrlError> {
    let parsed = parse_absolute(url)?;
    let host = match parsed.port() {
        Some(p) => format!("{}:{p}", parsed.host_str().unwrap_or_default()),
        None => parsed.host_str().unwrap_or_default().to_owned(),
    };
    Ok(UrlParts {
        protocol: parsed.scheme().to_owned(),
        host: host.to_ascii_lowercase(),
        path: parsed.path().to_owned(),
        query: parsed.query().map(str::to_owned),
    })
}

/// Canonical form used for deduplication and cache keys: host lowercased,
/// fragment removed, query kept.
pub fn normalize_url(url: &str) -> Result<String, UrlError> {
    let mut parsed = parse_absolute(url)?;
    parsed.set_fragment(None);
    Ok(parsed.to_string())
}

/// FNV-1a 64 over the UTF-8 bytes of the normalized URL, as 16 lowercase hex
/// digits. Names fixture pages and fetch cache entries.
pub fn url_hash(url: &str) -> Result<String, UrlError> {
    let norm = normalize_url(url)?;
    Ok(hash_normalized(&norm))
}

pub(crate) fn hash_normalized(norm: &str) -> String {
    let mut h = FnvHasher::default();
    h.write(norm.as_bytes());
    format!("{:016x}", h.finish())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlRecord {
    pub url: String,
    pub rank: usize,
    pub parts: UrlParts,
}

impl UrlRecord {
    pub fn new(url: impl Into<String>, rank: usize) -> Result<Self, UrlError> {
        let url = url.into();
        let parts = parse_url(&url)?;
        Ok(UrlRecord { url, rank, parts })
    }
}

/// Dedupe on normalized URL keeping the first (best-ranked) occurrence,
/// truncate, and assign contiguous ranks from 1. Unparseable URLs are dropped.
pub fn rank_urls<I, S>(urls: I, max_results: usize) -> Vec<UrlRecord>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for u in urls {
        if out.len() >= max_results {
            break;
        }
        let u = u.as_ref().trim();
        let Ok(norm) = normalize_url(u) else {
            log::debug!("dropping unparseable search hit {u:?}");
            continue;
        };
        if !seen.insert(norm) {
            continue;
        }
        if let Ok(rec) = UrlRecord::new(u, out.len() + 1) {
            out.push(rec);
        }
    }
    out
}

pub trait SearchProvider: Send + Sync {
    fn search(&self, query: &SearchQuery) -> Result<Vec<UrlRecord>, SearchError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ManifestEntry {
    keywords: HashSet<String>,
    urls: Vec<String>,
}

/// Offline provider reading `<fixture_dir>/manifest`.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl FixtureProvider {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, SearchError> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join("manifest");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| SearchError::ManifestMissing(format!("{}: {e}", path.display())))?;
        let entries = parse_manifest(&text)?;
        Ok(FixtureProvider { dir, entries })
    }

    pub fn from_manifest(dir: impl AsRef<Path>, manifest: &str) -> Result<Self, SearchError> {
        Ok(FixtureProvider { dir: dir.as_ref().to_path_buf(), entries: parse_manifest(manifest)? })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, SearchError> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let (kw, urls) = raw
            .split_once('\t')
            .ok_or_else(|| SearchError::ManifestMalformed { line, reason: "expected <keywords> TAB <urls>".into() })?;
        let keywords: HashSet<String> = normalized_tokens(kw).into_iter().collect();
        if keywords.is_empty() {
            return Err(SearchError::ManifestMalformed { line, reason: "empty keyword list".into() });
        }
        let urls: Vec<String> = urls.split_whitespace().map(str::to_owned).collect();
        for u in &urls {
            parse_url(u).map_err(|e| SearchError::ManifestMalformed { line, reason: e.to_string() })?;
        }
        entries.push(ManifestEntry { keywords, urls });
    }
    Ok(entries)
}

impl SearchProvider for FixtureProvider {
    fn search(&self, query: &SearchQuery) -> Result<Vec<UrlRecord>, SearchError> {
        if query.max_results == 0 {
            return Err(SearchError::ZeroMaxResults);
        }
        let query_kw: HashSet<String> = normalized_tokens(&query.query_string).into_iter().collect();
        let mut matched: Vec<(usize, usize, &ManifestEntry)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.keywords.is_subset(&query_kw))
            .map(|(i, e)| (e.keywords.len(), i, e))
            .collect();
        matched.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let urls = matched.iter().flat_map(|(_, _, e)| e.urls.iter());
        Ok(rank_urls(urls, query.max_results))
    }
}

#[derive(Deserialize)]
struct LiveListing {
    results: Vec<LiveHit>,
}

#[derive(Deserialize)]
struct LiveHit {
    url: String,
}

/// Parse a live endpoint's JSON result listing into ranked records.
pub fn parse_live_listing(body: &str, max_results: usize) -> Result<Vec<UrlRecord>, SearchError> {
    let listing: LiveListing = serde_json::from_str(body).map_err(|e| SearchError::BadResponse(e.to_string()))?;
    Ok(rank_urls(listing.results.into_iter().map(|h| h.url), max_results))
}

/// Live provider: one HTTP endpoint, requests serialized by a pacer.
pub struct LiveProvider {
    endpoint: Url,
    client: reqwest::blocking::Client,
    pacer: HostPacer,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for LiveProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LiveProvider").field("endpoint", &self.endpoint.as_str()).finish()
    }
}

impl LiveProvider {
    pub fn new(endpoint: &str, timeout_ms: u64, interval_ms: u64) -> Result<Self, SearchError> {
        let endpoint = Url::parse(endpoint).map_err(|e| SearchError::Config(e.to_string()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .user_agent(concat!("webcorp/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| SearchError::Config(e.to_string()))?;
        Ok(LiveProvider {
            endpoint,
            client,
            pacer: HostPacer::new(interval_ms),
            clock: Arc::new(SystemClock::default()),
        })
    }

    fn request_url(&self, query: &SearchQuery) -> Url {
        let mut u = self.endpoint.clone();
        u.query_pairs_mut().append_pair("q", &query.query_string).append_pair("format", "json");
        u
    }
}

impl SearchProvider for LiveProvider {
    fn search(&self, query: &SearchQuery) -> Result<Vec<UrlRecord>, SearchError> {
        if query.max_results == 0 {
            return Err(SearchError::ZeroMaxResults);
        }
        let start = self.pacer.reserve("search", self.clock.now_ms());
        self.clock.sleep_until_ms(start);
        let resp = self.client.get(self.request_url(query)).send().map_err(|e| {
            if e.is_timeout() {
                SearchError::Timeout
            } else {
                SearchError::Unreachable(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(SearchError::Unreachable(format!("HTTP {}", resp.status().as_u16())));
        }
        let body = resp.text().map_err(|e| SearchError::BadResponse(e.to_string()))?;
        parse_live_listing(&body, query.max_results)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Live,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub fixture_dir: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub interval_ms: u64,
}

impl ProviderConfig {
    pub fn fixture(dir: impl Into<PathBuf>) -> Self {
        ProviderConfig {
            kind: ProviderKind::Fixture,
            fixture_dir: Some(dir.into()),
            endpoint: None,
            timeout_ms: 10_000,
            interval_ms: 1_000,
        }
    }

    pub fn live(endpoint: impl Into<String>) -> Self {
        ProviderConfig {
            kind: ProviderKind::Live,
            fixture_dir: None,
            endpoint: Some(endpoint.into()),
            timeout_ms: 10_000,
            interval_ms: 1_000,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        match (self.kind, &self.fixture_dir, &self.endpoint) {
            (ProviderKind::Fixture, Some(dir), _) if dir.is_dir() => Ok(()),
            (ProviderKind::Fixture, Some(dir), _) => {
                Err(SearchError::ManifestMissing(format!("fixture directory {} does not exist", dir.display())))
            }
            (ProviderKind::Fixture, None, _) => {
                Err(SearchError::Config("fixture provider needs a fixture directory".into()))
            }
            (ProviderKind::Live, Some(_), _) => {
                Err(SearchError::Config("fixture directory given for live provider".into()))
            }
            (ProviderKind::Live, None, None) => Err(SearchError::Config("live provider needs an endpoint".into())),
            (ProviderKind::Live, None, Some(_)) => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn SearchProvider>, SearchError> {
        self.validate()?;
        match self.kind {
            ProviderKind::Fixture => Ok(Arc::new(FixtureProvider::open(self.fixture_dir.as_ref().unwrap())?)),
            ProviderKind::Live => {
                Ok(Arc::new(LiveProvider::new(self.endpoint.as_deref().unwrap(), self.timeout_ms, self.interval_ms)?))
            }
        }
    }
}

/// Run `query` against `provider`.
pub fn search(query: &SearchQuery, provider: &dyn SearchProvider) -> Result<Vec<UrlRecord>, SearchError> {
    provider.search(query)
}
