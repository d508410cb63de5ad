//! On-disk corpus of question–text pairs.
//!
//! Layout under the corpus directory:
//!
//! ```text
//! corpus.manifest        one line per entry, tab-separated:
//!                        id, domain, source, question text, gold answer or "-",
//!                        text path, passage count, url count, qualified count,
//!                        accepted_by
//! <Domain>/<id>.txt      the assembled text
//! urls/<id>.urls         one candidate per line: rank, status, qualified (1/0), url
//! urls/<id>.prov         created_at and the contributing source URLs
//! ```
//!
//! All files are UTF-8 with LF line ends. Sidecars are written before the
//! manifest line, so a manifest line never points at a missing file. A
//! `.urls` file without a manifest line holds decisions for a question that
//! has not been built yet.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fetch::{write_atomic, FetchStatus};
use crate::filter::AssembledText;
use crate::question::{Domain, Question, Source};
use crate::search::UrlRecord;

pub const MANIFEST_FILE: &str = "corpus.manifest";
pub const URLS_DIR: &str = "urls";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("question {0:?} is already in the corpus")]
    Duplicate(String),
    #[error("invalid entry for {id:?}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("{file} line {line}: {reason}")]
    Corrupt { file: String, line: usize, reason: String },
    #[error("manifest references missing file {0}")]
    MissingFile(String),
    #[error("no corpus manifest in {0}")]
    NoManifest(String),
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcceptedBy {
    Auto,
    Human,
}

impl fmt::Display for AcceptedBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AcceptedBy::Auto => "auto",
            AcceptedBy::Human => "human",
        })
    }
}

impl FromStr for AcceptedBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(AcceptedBy::Auto),
            "human" => Ok(AcceptedBy::Human),
            other => Err(format!("unknown accepted_by {other:?}")),
        }
    }
}

/// One search hit considered for a question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateUrl {
    pub record: UrlRecord,
    pub status: FetchStatus,
    pub qualified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub question: Question,
    pub assembled: AssembledText,
    pub candidate_urls: Vec<CandidateUrl>,
    pub accepted_by: AcceptedBy,
    pub created_at: DateTime<Utc>,
}

impl CorpusEntry {
    pub fn qualified_count(&self) -> usize {
        self.candidate_urls.iter().filter(|c| c.qualified).count()
    }

    pub fn text_path(&self) -> String {
        format!("{}/{}.txt", self.question.domain.label(), self.question.id)
    }

    fn validate(&self) -> Result<(), StoreError> {
        let id = &self.question.id;
        let invalid = |reason: &str| Err(StoreError::Invalid { id: id.clone(), reason: reason.to_owned() });
        let has_break = |s: &str| s.contains(['\t', '\n', '\r']);
        if self.assembled.question_id != *id {
            return invalid("assembled text belongs to another question");
        }
        if self.candidate_urls.is_empty() {
            return invalid("no candidate URLs");
        }
        if self.assembled.passage_count == 0 {
            return invalid("passage count must be at least 1");
        }
        if self.assembled.source_urls.is_empty() {
            return invalid("no source URLs");
        }
        for (i, u) in self.assembled.source_urls.iter().enumerate() {
            if self.assembled.source_urls[..i].contains(u) {
                return invalid("duplicate source URL");
            }
            if !self.candidate_urls.iter().any(|c| &c.record.url == u) {
                return invalid("source URL is not a candidate");
            }
        }
        if has_break(id) || has_break(&self.question.text) {
            return invalid("tab or line break in id or question text");
        }
        if let Some(g) = &self.question.gold_answer {
            if has_break(g) || g == "-" {
                return invalid("gold answer cannot be \"-\" or contain tabs or line breaks");
            }
        }
        if self.candidate_urls.iter().any(|c| c.record.url.chars().any(char::is_whitespace)) {
            return invalid("whitespace in candidate URL");
        }
        Ok(())
    }

    fn manifest_line(&self) -> String {
        let q = &self.question;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            q.id,
            q.domain.label(),
            q.source.label(),
            q.text,
            q.gold_answer.as_deref().unwrap_or("-"),
            self.text_path(),
            self.assembled.passage_count,
            self.candidate_urls.len(),
            self.qualified_count(),
            self.accepted_by,
        )
    }

    fn provenance(&self) -> String {
        let mut s = format!("created_at\t{}\n", self.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true));
        for u in &self.assembled.source_urls {
            s.push_str("source\t");
            s.push_str(u);
            s.push('\n');
        }
        s
    }
}

fn urls_sidecar(candidates: &[CandidateUrl]) -> String {
    candidates
        .iter()
        .map(|c| format!("{}\t{}\t{}\t{}\n", c.record.rank, c.status, u8::from(c.qualified), c.record.url))
        .collect()
}

/// Aggregate corpus figures in the shape of the construction report table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_questions: usize,
    pub total_urls: usize,
    pub urls_per_question: (usize, usize),
    pub n_texts: usize,
    pub correct_urls_per_question: (usize, usize),
    pub per_domain_counts: BTreeMap<Domain, usize>,
}

impl CorpusStats {
    /// `name TAB value` lines, in table order, then one line per domain.
    pub fn table_lines(&self) -> String {
        let mut s = format!(
            "number_of_questions\t{}\ntotal_of_urls\t{}\nurls_per_question\t{}→{}\ntotal_texts\t{}\ncorrect_urls_per_question\t{}→{}\n",
            self.n_questions,
            self.total_urls,
            self.urls_per_question.0,
            self.urls_per_question.1,
            self.n_texts,
            self.correct_urls_per_question.0,
            self.correct_urls_per_question.1,
        );
        for (d, n) in &self.per_domain_counts {
            s.push_str(&format!("domain.{d}\t{n}\n"));
        }
        s
    }
}

fn min_max(values: impl Iterator<Item = usize>) -> (usize, usize) {
    values
        .fold(None, |acc: Option<(usize, usize)>, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
        .unwrap_or((0, 0))
}

/// Hook points inside [`CorpusStore::add_entry_with`], in write order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteStage {
    Text,
    Urls,
    Provenance,
    Manifest,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    root: Option<PathBuf>,
    entries: Vec<CorpusEntry>,
    pending: BTreeMap<String, Vec<CandidateUrl>>,
}

impl PartialEq for CorpusStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.pending == other.pending
    }
}

impl CorpusStore {
    /// A store that lives only in memory until [`save`](Self::save).
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open the corpus in `dir`, creating an empty one when no manifest exists.
    /// Later additions are persisted immediately.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        let mut store = if dir.join(MANIFEST_FILE).exists() {
            Self::load(dir)?
        } else {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let manifest = dir.join(MANIFEST_FILE);
            write_atomic(&manifest, b"").map_err(io_err(&manifest))?;
            Self::default()
        };
        store.root = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CorpusEntry> {
        self.entries.iter().find(|e| e.question.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    /// Decisions recorded for a question that has no entry yet.
    pub fn pending(&self, id: &str) -> &[CandidateUrl] {
        self.pending.get(id).map(Vec::as_slice).unwrap_or_default()
    }

    pub fn add_entry(&mut self, entry: CorpusEntry) -> Result<(), StoreError> {
        self.add_entry_with(entry, |_| Ok(()))
    }

    /// [`add_entry`](Self::add_entry) with `before` called ahead of each
    /// file write; an error from it aborts the addition at that point.
    pub fn add_entry_with(
        &mut self,
        entry: CorpusEntry,
        mut before: impl FnMut(WriteStage) -> std::io::Result<()>,
    ) -> Result<(), StoreError> {
        entry.validate()?;
        if self.contains(&entry.question.id) {
            return Err(StoreError::Duplicate(entry.question.id.clone()));
        }
        if let Some(root) = &self.root {
            let root_err = |e| io_err(root)(e);
            before(WriteStage::Text).map_err(root_err)?;
            write_entry_files(root, &entry, &mut before)?;
            before(WriteStage::Manifest).map_err(root_err)?;
            let manifest = root.join(MANIFEST_FILE);
            let mut f = OpenOptions::new().append(true).create(true).open(&manifest).map_err(io_err(&manifest))?;
            f.write_all(entry.manifest_line().as_bytes()).map_err(io_err(&manifest))?;
            f.sync_all().map_err(io_err(&manifest))?;
        }
        self.pending.remove(&entry.question.id);
        self.entries.push(entry);
        Ok(())
    }

    /// Record a rejected (or otherwise decided) URL for a question that is not
    /// built yet. A later decision for the same URL replaces the earlier one.
    pub fn record_rejection(&mut self, question_id: &str, candidate: CandidateUrl) -> Result<(), StoreError> {
        if self.contains(question_id) {
            return Err(StoreError::Duplicate(question_id.to_owned()));
        }
        let list = self.pending.entry(question_id.to_owned()).or_default();
        list.retain(|c| c.record.url != candidate.record.url);
        list.push(CandidateUrl { qualified: false, ..candidate });
        list.sort_by_key(|c| c.record.rank);
        if let Some(root) = &self.root {
            let dir = root.join(URLS_DIR);
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let path = dir.join(format!("{question_id}.urls"));
            write_atomic(&path, urls_sidecar(list).as_bytes()).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn compute_stats(&self) -> CorpusStats {
        let mut per_domain: BTreeMap<Domain, usize> = Domain::ALL.iter().map(|d| (*d, 0)).collect();
        for e in &self.entries {
            *per_domain.entry(e.question.domain).or_default() += 1;
        }
        CorpusStats {
            n_questions: self.entries.len(),
            total_urls: self.entries.iter().map(|e| e.candidate_urls.len()).sum(),
            urls_per_question: min_max(self.entries.iter().map(|e| e.candidate_urls.len())),
            n_texts: self.entries.iter().filter(|e| !e.assembled.text.is_empty()).count(),
            correct_urls_per_question: min_max(self.entries.iter().map(CorpusEntry::qualified_count)),
            per_domain_counts: per_domain,
        }
    }

    /// Write the whole corpus to `dir`. The manifest is replaced last.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for e in &self.entries {
            write_entry_files(dir, e, &mut |_| Ok(()))?;
        }
        if !self.pending.is_empty() {
            let udir = dir.join(URLS_DIR);
            std::fs::create_dir_all(&udir).map_err(io_err(&udir))?;
            for (id, list) in &self.pending {
                let path = udir.join(format!("{id}.urls"));
                write_atomic(&path, urls_sidecar(list).as_bytes()).map_err(io_err(&path))?;
            }
        }
        let manifest: String = self.entries.iter().map(CorpusEntry::manifest_line).collect();
        let path = dir.join(MANIFEST_FILE);
        write_atomic(&path, manifest.as_bytes()).map_err(io_err(&path))
    }

    /// Read the corpus in `dir` into a detached store: later additions stay in
    /// memory. Use [`open`](Self::open) to keep writing to `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = match std::fs::read_to_string(&manifest_path) {
            Ok(m) => m,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NoManifest(dir.display().to_string()))
            }
            Err(e) => return Err(io_err(&manifest_path)(e)),
        };
        let mut store = CorpusStore::default();
        for (idx, line) in manifest.split_terminator('\n').enumerate() {
            let entry = parse_entry(dir, line, idx + 1)?;
            if store.contains(&entry.question.id) {
                return Err(corrupt(MANIFEST_FILE, idx + 1, format!("duplicate id {:?}", entry.question.id)));
            }
            store.entries.push(entry);
        }
        let udir = dir.join(URLS_DIR);
        if udir.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&udir)
                .map_err(io_err(&udir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "urls"))
                .collect();
            files.sort();
            for path in files {
                let Some(id) = path.file_stem().and_then(|s| s.to_str()) else { continue };
                if store.contains(id) {
                    continue;
                }
                let list = read_urls(&path)?;
                store.pending.insert(id.to_owned(), list);
            }
        }
        Ok(store)
    }
}

fn write_entry_files(
    root: &Path,
    e: &CorpusEntry,
    before: &mut impl FnMut(WriteStage) -> std::io::Result<()>,
) -> Result<(), StoreError> {
    let text_path = root.join(e.text_path());
    let domain_dir = text_path.parent().unwrap_or(root);
    std::fs::create_dir_all(domain_dir).map_err(io_err(domain_dir))?;
    write_atomic(&text_path, e.assembled.text.as_bytes()).map_err(io_err(&text_path))?;

    before(WriteStage::Urls).map_err(io_err(root))?;
    let udir = root.join(URLS_DIR);
    std::fs::create_dir_all(&udir).map_err(io_err(&udir))?;
    let urls = udir.join(format!("{}.urls", e.question.id));
    write_atomic(&urls, urls_sidecar(&e.candidate_urls).as_bytes()).map_err(io_err(&urls))?;

    before(WriteStage::Provenance).map_err(io_err(root))?;
    let prov = udir.join(format!("{}.prov", e.question.id));
    write_atomic(&prov, e.provenance().as_bytes()).map_err(io_err(&prov))
}

fn corrupt(file: impl Into<String>, line: usize, reason: impl Into<String>) -> StoreError {
    StoreError::Corrupt { file: file.into(), line, reason: reason.into() }
}

fn read_required(path: &Path) -> Result<String, StoreError> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::MissingFile(path.display().to_string())),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn read_urls(path: &Path) -> Result<Vec<CandidateUrl>, StoreError> {
    let text = read_required(path)?;
    let name = path.display().to_string();
    text.split_terminator('\n')
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let [rank, status, qualified, url] = f[..] else {
                return Err(corrupt(&name, i + 1, "expected 4 tab-separated fields"));
            };
            let rank: usize = rank.parse().map_err(|_| corrupt(&name, i + 1, "bad rank"))?;
            let status: FetchStatus = status.parse().map_err(|e: String| corrupt(&name, i + 1, e))?;
            let qualified = match qualified {
                "1" => true,
                "0" => false,
                _ => return Err(corrupt(&name, i + 1, "qualified flag must be 1 or 0")),
            };
            let record = UrlRecord::new(url, rank).map_err(|e| corrupt(&name, i + 1, e.to_string()))?;
            Ok(CandidateUrl { record, status, qualified })
        })
        .collect()
}

fn parse_entry(dir: &Path, line: &str, line_no: usize) -> Result<CorpusEntry, StoreError> {
    let bad = |reason: String| corrupt(MANIFEST_FILE, line_no, reason);
    let f: Vec<&str> = line.split('\t').collect();
    let [id, domain, source, text, gold, rel, passages, n_urls, n_qualified, accepted] = f[..] else {
        return Err(bad(format!("expected 10 tab-separated fields, found {}", f.len())));
    };
    let domain: Domain = domain.parse().map_err(bad)?;
    let source: Source = source.parse().map_err(bad)?;
    let gold = (gold != "-").then(|| gold.to_owned());
    let question = Question::new(id, text, domain, source, gold).map_err(|e| bad(e.to_string()))?;
    let count = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(format!("bad {what} {s:?}")));
    let passage_count = count(passages, "passage count")?;
    let n_urls = count(n_urls, "url count")?;
    let n_qualified = count(n_qualified, "qualified count")?;
    let accepted_by: AcceptedBy = accepted.parse().map_err(bad)?;

    if rel.contains("..") || Path::new(rel).is_absolute() {
        return Err(bad(format!("text path {rel:?} escapes the corpus")));
    }
    let text_body = read_required(&dir.join(rel))?;
    let candidate_urls = read_urls(&dir.join(URLS_DIR).join(format!("{id}.urls")))?;
    if candidate_urls.len() != n_urls {
        return Err(bad(format!("url count {n_urls} but sidecar lists {}", candidate_urls.len())));
    }
    let qualified = candidate_urls.iter().filter(|c| c.qualified).count();
    if qualified != n_qualified {
        return Err(bad(format!("qualified count {n_qualified} but sidecar flags {qualified}")));
    }

    let prov_path = dir.join(URLS_DIR).join(format!("{id}.prov"));
    let prov = read_required(&prov_path)?;
    let prov_name = prov_path.display().to_string();
    let mut created_at = None;
    let mut source_urls = Vec::new();
    for (i, l) in prov.split_terminator('\n').enumerate() {
        match l.split_once('\t') {
            Some(("created_at", ts)) => {
                created_at = Some(
                    DateTime::parse_from_rfc3339(ts)
                        .map_err(|e| corrupt(&prov_name, i + 1, e.to_string()))?
                        .with_timezone(&Utc),
                )
            }
            Some(("source", u)) => source_urls.push(u.to_owned()),
            _ => return Err(corrupt(&prov_name, i + 1, "unknown provenance line")),
        }
    }
    let created_at = created_at.ok_or_else(|| corrupt(&prov_name, 1, "missing created_at"))?;

    let entry = CorpusEntry {
        assembled: AssembledText { question_id: question.id.clone(), text: text_body, passage_count, source_urls },
        question,
        candidate_urls,
        accepted_by,
        created_at,
    };
    if entry.text_path() != rel {
        return Err(bad(format!("text path {rel:?} does not match domain and id")));
    }
    entry.validate().map_err(|e| bad(e.to_string()))?;
    Ok(entry)
}
