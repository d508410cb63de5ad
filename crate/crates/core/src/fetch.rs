//! Polite page retrieval with an on-disk cache.
//!
//! Network access goes through a [`Transport`], timing through a [`Clock`];
//! both are injectable so politeness and caching can be tested without a
//! network or real sleeps.
//!
//! Cache layout: `<cache_dir>/<url-hash>.html` holds the body and
//! `<cache_dir>/<url-hash>.meta` holds `key TAB value` lines for `url`,
//! `final_url`, `encoding`, `fetched_at` and `status`. The meta file is
//! written last; an entry without it is ignored.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use encoding_rs::Encoding;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::{hash_normalized, normalize_url, UrlRecord};

/// Timestamp reported by clocks running in fixed mode.
pub fn fixed_timestamp() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap()
}

pub trait Clock: Send + Sync {
    /// Monotonic milliseconds since an arbitrary origin.
    fn now_ms(&self) -> u64;
    fn sleep_until_ms(&self, t: u64);
    /// Wall-clock time for provenance records.
    fn timestamp(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
    fixed_wall: Option<DateTime<Utc>>,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now(), fixed_wall: None }
    }
}

impl SystemClock {
    /// Real monotonic time, constant wall time. Makes outputs reproducible.
    pub fn fixed() -> Self {
        SystemClock { origin: Instant::now(), fixed_wall: Some(fixed_timestamp()) }
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_until_ms(&self, t: u64) {
        let now = self.now_ms();
        if t > now {
            std::thread::sleep(Duration::from_millis(t - now));
        }
    }

    fn timestamp(&self) -> DateTime<Utc> {
        self.fixed_wall.unwrap_or_else(Utc::now)
    }
}

/// Virtual clock: sleeping advances time instantly.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: Mutex<u64>,
}

impl ManualClock {
    pub fn advance(&self, ms: u64) {
        *self.now.lock().unwrap() += ms;
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        *self.now.lock().unwrap()
    }

    fn sleep_until_ms(&self, t: u64) {
        let mut now = self.now.lock().unwrap();
        *now = (*now).max(t);
    }

    fn timestamp(&self) -> DateTime<Utc> {
        fixed_timestamp()
    }
}

/// Hands out request start times so that consecutive starts for one host are
/// at least `interval_ms` apart.
#[derive(Debug, Default)]
pub struct HostPacer {
    interval_ms: u64,
    next_start: Mutex<HashMap<String, u64>>,
}

impl HostPacer {
    pub fn new(interval_ms: u64) -> Self {
        HostPacer { interval_ms, next_start: Mutex::new(HashMap::new()) }
    }

    /// Reserve the earliest allowed start time at or after `now` for `host`.
    pub fn reserve(&self, host: &str, now: u64) -> u64 {
        let mut map = self.next_start.lock().unwrap();
        let slot = map.entry(host.to_owned()).or_insert(0);
        let start = now.max(*slot);
        *slot = start + self.interval_ms;
        start
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchPolicy {
    pub timeout_ms: u64,
    pub max_bytes: usize,
    pub per_host_interval_ms: u64,
    pub max_concurrent: usize,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        FetchPolicy { timeout_ms: 10_000, max_bytes: 2 * 1024 * 1024, per_host_interval_ms: 1_000, max_concurrent: 4 }
    }
}

impl FetchPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.timeout_ms == 0 {
            return Err(PolicyError::NotPositive("timeout_ms"));
        }
        if self.max_bytes == 0 {
            return Err(PolicyError::NotPositive("max_bytes"));
        }
        if self.max_concurrent == 0 {
            return Err(PolicyError::NotPositive("max_concurrent"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FetchStatus {
    Ok,
    HttpError(u16),
    Timeout,
    NotHtml,
    TooLarge,
    NetworkError,
}

impl FetchStatus {
    pub fn is_ok(self) -> bool {
        self == FetchStatus::Ok
    }
}

impl fmt::Display for FetchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FetchStatus::Ok => f.write_str("ok"),
            FetchStatus::HttpError(code) => write!(f, "http_error({code})"),
            FetchStatus::Timeout => f.write_str("timeout"),
            FetchStatus::NotHtml => f.write_str("not_html"),
            FetchStatus::TooLarge => f.write_str("too_large"),
            FetchStatus::NetworkError => f.write_str("network_error"),
        }
    }
}

impl FromStr for FetchStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ok" => FetchStatus::Ok,
            "timeout" => FetchStatus::Timeout,
            "not_html" => FetchStatus::NotHtml,
            "too_large" => FetchStatus::TooLarge,
            "network_error" => FetchStatus::NetworkError,
            other => other
                .strip_prefix("http_error(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|c| c.parse().ok())
                .map(FetchStatus::HttpError)
                .ok_or_else(|| format!("unknown fetch status {other:?}"))?,
        })
    }
}

impl Serialize for FetchStatus {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FetchStatus {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PageRecord {
    pub url: String,
    /// Where redirects ended up, when that differs from `url`.
    pub final_url: Option<String>,
    pub status: FetchStatus,
    #[serde(skip)]
    pub raw_html: Option<Vec<u8>>,
    pub encoding: String,
    pub fetched_at: DateTime<Utc>,
}

impl PageRecord {
    fn failed(url: &str, status: FetchStatus, at: DateTime<Utc>) -> Self {
        PageRecord {
            url: url.to_owned(),
            final_url: None,
            status,
            raw_html: None,
            encoding: encoding_rs::UTF_8.name().to_owned(),
            fetched_at: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub status: u16,
    pub content_type: Option<String>,
    /// At most `max_bytes + 1` bytes, so oversize bodies are detectable.
    pub body: Vec<u8>,
    pub final_url: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &str, timeout_ms: u64, max_bytes: usize) -> Result<RawResponse, TransportError>;

    /// Whether requests hit real hosts and must respect the politeness interval.
    fn paced(&self) -> bool {
        true
    }
}

/// Serves `<fixture_dir>/pages/<url-hash>.html`; anything else is a 404.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    pages: PathBuf,
}

impl FixtureTransport {
    pub fn new(fixture_dir: impl AsRef<Path>) -> Self {
        FixtureTransport { pages: fixture_dir.as_ref().join("pages") }
    }
}

impl Transport for FixtureTransport {
    fn get(&self, url: &str, _timeout_ms: u64, max_bytes: usize) -> Result<RawResponse, TransportError> {
        let norm = normalize_url(url).map_err(|e| TransportError::Network(e.to_string()))?;
        let path = self.pages.join(format!("{}.html", hash_normalized(&norm)));
        match std::fs::File::open(&path) {
            Ok(f) => {
                let mut body = Vec::new();
                f.take(max_bytes as u64 + 1)
                    .read_to_end(&mut body)
                    .map_err(|e| TransportError::Network(e.to_string()))?;
                Ok(RawResponse { status: 200, content_type: Some("text/html".into()), body, final_url: url.to_owned() })
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(RawResponse {
                status: 404,
                content_type: Some("text/html".into()),
                body: Vec::new(),
                final_url: url.to_owned(),
            }),
            Err(e) => Err(TransportError::Network(e.to_string())),
        }
    }

    fn paced(&self) -> bool {
        false
    }
}

/// Blocking HTTP transport; follows up to five redirects.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout_ms: u64) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .redirect(reqwest::redirect::Policy::limited(5))
            .user_agent(concat!("webcorp/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str, timeout_ms: u64, max_bytes: usize) -> Result<RawResponse, TransportError> {
        let map_err = |e: reqwest::Error| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.to_string())
            }
        };
        let resp = self.client.get(url).timeout(Duration::from_millis(timeout_ms)).send().map_err(map_err)?;
        let status = resp.status().as_u16();
        let final_url = resp.url().to_string();
        let content_type =
            resp.headers().get(reqwest::header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).map(str::to_owned);
        let mut body = Vec::new();
        resp.take(max_bytes as u64 + 1).read_to_end(&mut body).map_err(|e| {
            if e.kind() == std::io::ErrorKind::TimedOut {
                TransportError::Timeout
            } else {
                TransportError::Network(e.to_string())
            }
        })?;
        Ok(RawResponse { status, content_type, body, final_url })
    }
}

fn charset_param(content_type: &str) -> Option<&'static Encoding> {
    content_type
        .split(';')
        .skip(1)
        .filter_map(|p| p.split_once('='))
        .find(|(k, _)| k.trim().eq_ignore_ascii_case("charset"))
        .and_then(|(_, v)| Encoding::for_label(v.trim().trim_matches(['"', '\'']).as_bytes()))
}

/// Look for `charset=` inside the first kilobyte (covers both `<meta
/// charset>` and the `http-equiv` form).
fn sniff_meta_charset(body: &[u8]) -> Option<&'static Encoding> {
    let head = &body[..body.len().min(1024)];
    let lower: Vec<u8> = head.to_ascii_lowercase();
    let needle = b"charset=";
    let pos = lower.windows(needle.len()).position(|w| w == needle)?;
    let rest = &head[pos + needle.len()..];
    let rest = rest.strip_prefix(b"\"").or_else(|| rest.strip_prefix(b"'")).unwrap_or(rest);
    let end = rest
        .iter()
        .position(|b| matches!(b, b'"' | b'\'' | b';' | b'>' | b'/' | b' ' | b'\t' | b'\r' | b'\n'))
        .unwrap_or(rest.len());
    Encoding::for_label(&rest[..end])
}

/// Header charset, else in-document declaration, else UTF-8.
pub fn detect_encoding(content_type: Option<&str>, body: &[u8]) -> &'static Encoding {
    content_type.and_then(charset_param).or_else(|| sniff_meta_charset(body)).unwrap_or(encoding_rs::UTF_8)
}

fn looks_like_html(body: &[u8]) -> bool {
    let head = body[..body.len().min(512)].to_ascii_lowercase();
    head.windows(5).any(|w| w == b"<html") || head.windows(9).any(|w| w == b"<!doctype")
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid URL {0:?}")]
    BadUrl(String),
}

const LOCK_STRIPES: usize = 64;

pub struct Fetcher {
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    policy: FetchPolicy,
    pacer: HostPacer,
    slots: Slots,
    key_locks: Vec<Mutex<()>>,
}

impl fmt::Debug for Fetcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fetcher").field("policy", &self.policy).finish_non_exhaustive()
    }
}

impl Fetcher {
    pub fn new(transport: Arc<dyn Transport>, clock: Arc<dyn Clock>, policy: FetchPolicy) -> Self {
        Fetcher {
            transport,
            clock,
            pacer: HostPacer::new(policy.per_host_interval_ms),
            slots: Slots::new(policy.max_concurrent.max(1)),
            policy,
            key_locks: (0..LOCK_STRIPES).map(|_| Mutex::new(())).collect(),
        }
    }

    pub fn policy(&self) -> &FetchPolicy {
        &self.policy
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Fetch one page. Failures are reported in the returned status.
    pub fn fetch_page(&self, u: &UrlRecord) -> PageRecord {
        let _slot = self.slots.acquire();
        if self.transport.paced() {
            let start = self.pacer.reserve(&u.parts.host, self.clock.now_ms());
            self.clock.sleep_until_ms(start);
        }
        let at = self.clock.timestamp();
        let resp = match self.transport.get(&u.url, self.policy.timeout_ms, self.policy.max_bytes) {
            Ok(r) => r,
            Err(TransportError::Timeout) => return PageRecord::failed(&u.url, FetchStatus::Timeout, at),
            Err(TransportError::Network(msg)) => {
                log::debug!("fetch {} failed: {msg}", u.url);
                return PageRecord::failed(&u.url, FetchStatus::NetworkError, at);
            }
        };
        if resp.status != 200 {
            return PageRecord::failed(&u.url, FetchStatus::HttpError(resp.status), at);
        }
        let html_type = match &resp.content_type {
            Some(ct) => ct.to_ascii_lowercase().contains("html"),
            None => looks_like_html(&resp.body),
        };
        if !html_type {
            return PageRecord::failed(&u.url, FetchStatus::NotHtml, at);
        }
        if resp.body.len() > self.policy.max_bytes {
            return PageRecord::failed(&u.url, FetchStatus::TooLarge, at);
        }
        let encoding = detect_encoding(resp.content_type.as_deref(), &resp.body);
        PageRecord {
            final_url: (!resp.final_url.is_empty() && resp.final_url != u.url).then_some(resp.final_url),
            url: u.url.clone(),
            status: FetchStatus::Ok,
            raw_html: Some(resp.body),
            encoding: encoding.name().to_owned(),
            fetched_at: at,
        }
    }

    /// Serve from `cache_dir` when an ok entry exists; otherwise fetch and
    /// cache successful results only.
    pub fn get_or_fetch(&self, u: &UrlRecord, cache_dir: &Path) -> Result<PageRecord, CacheError> {
        let norm = normalize_url(&u.url).map_err(|_| CacheError::BadUrl(u.url.clone()))?;
        let key = hash_normalized(&norm);
        let stripe = usize::from_str_radix(&key[key.len() - 2..], 16).unwrap_or(0) % LOCK_STRIPES;
        let _guard = self.key_locks[stripe].lock().unwrap();
        if let Some(hit) = load_cached(cache_dir, &key)? {
            return Ok(PageRecord { url: u.url.clone(), ..hit });
        }
        let page = self.fetch_page(u);
        if page.status.is_ok() {
            store_cached(cache_dir, &key, &page)?;
        }
        Ok(page)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io { path: path.display().to_string(), source }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn store_cached(dir: &Path, key: &str, page: &PageRecord) -> Result<(), CacheError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let html = dir.join(format!("{key}.html"));
    write_atomic(&html, page.raw_html.as_deref().unwrap_or_default()).map_err(io_err(&html))?;
    let meta = format!(
        "url\t{}\nfinal_url\t{}\nencoding\t{}\nfetched_at\t{}\nstatus\t{}\n",
        page.url,
        page.final_url.as_deref().unwrap_or("-"),
        page.encoding,
        page.fetched_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        page.status,
    );
    let meta_path = dir.join(format!("{key}.meta"));
    write_atomic(&meta_path, meta.as_bytes()).map_err(io_err(&meta_path))
}

fn load_cached(dir: &Path, key: &str) -> Result<Option<PageRecord>, CacheError> {
    let meta_path = dir.join(format!("{key}.meta"));
    let meta = match std::fs::read_to_string(&meta_path) {
        Ok(m) => m,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(&meta_path)(e)),
    };
    let fields: HashMap<&str, &str> = meta.lines().filter_map(|l| l.split_once('\t')).collect();
    let parsed = (|| {
        let status: FetchStatus = fields.get("status")?.parse().ok()?;
        if !status.is_ok() {
            return None;
        }
        Some(PageRecord {
            url: fields.get("url")?.to_string(),
            final_url: fields.get("final_url").filter(|v| **v != "-").map(|v| v.to_string()),
            status,
            raw_html: None,
            encoding: fields.get("encoding")?.to_string(),
            fetched_at: DateTime::parse_from_rfc3339(fields.get("fetched_at")?).ok()?.with_timezone(&Utc),
        })
    })();
    let Some(mut page) = parsed else {
        log::warn!("ignoring unreadable cache entry {}", meta_path.display());
        return Ok(None);
    };
    let html = dir.join(format!("{key}.html"));
    match std::fs::read(&html) {
        Ok(bytes) => {
            page.raw_html = Some(bytes);
            Ok(Some(page))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&html)(e)),
    }
}
