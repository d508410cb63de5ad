//! URL-level precision: correct URLs (those whose page contains the answer)
//! over all URLs used per question.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::CorpusStore;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no labels")]
    NoLabels,
    #[error("label for unknown question {0:?}")]
    UnknownQuestion(String),
    #[error("duplicate label for question {question_id:?} url {url:?}")]
    DuplicateLabel { question_id: String, url: String },
    #[error("labels line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UrlLabel {
    pub question_id: String,
    pub url: String,
    pub correct: bool,
}

/// Exact fraction of correct labels.
pub fn precision_ratio(labels: &[UrlLabel]) -> Result<Ratio<u64>, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::NoLabels);
    }
    let correct = labels.iter().filter(|l| l.correct).count() as u64;
    Ok(Ratio::new(correct, labels.len() as u64))
}

pub fn micro_precision(labels: &[UrlLabel]) -> Result<f64, EvalError> {
    precision_ratio(labels).map(ratio_to_f64)
}

pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionPrecision {
    pub correct: usize,
    pub total: usize,
    /// `None` when the question has no labeled URLs.
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_precision: f64,
    pub macro_precision: f64,
    pub per_question: BTreeMap<String, QuestionPrecision>,
    #[serde(skip)]
    pub micro_exact: (u64, u64),
}

impl EvalReport {
    /// Summary lines followed by a `question TAB correct TAB total TAB precision` table.
    pub fn render(&self) -> String {
        let mut s =
            format!("micro_precision\t{:.6}\nmacro_precision\t{:.6}\n", self.micro_precision, self.macro_precision);
        s.push_str("question\tcorrect\ttotal\tprecision\n");
        for (id, q) in &self.per_question {
            let p = q.precision.map_or_else(|| "-".to_owned(), |p| format!("{p:.6}"));
            s.push_str(&format!("{id}\t{}\t{}\t{p}\n", q.correct, q.total));
        }
        s
    }
}

/// Per-question, micro and macro precision. Every stored question appears in
/// `per_question`; those without labels are left out of the macro mean.
pub fn evaluation_report(labels: &[UrlLabel], store: &CorpusStore) -> Result<EvalReport, EvalError> {
    let mut seen = HashSet::new();
    for l in labels {
        if !store.contains(&l.question_id) {
            return Err(EvalError::UnknownQuestion(l.question_id.clone()));
        }
        if !seen.insert((&l.question_id, &l.url)) {
            return Err(EvalError::DuplicateLabel { question_id: l.question_id.clone(), url: l.url.clone() });
        }
    }
    let micro = precision_ratio(labels)?;
    let mut counts: BTreeMap<String, (usize, usize)> =
        store.entries().iter().map(|e| (e.question.id.clone(), (0, 0))).collect();
    for l in labels {
        let c = counts.entry(l.question_id.clone()).or_default();
        c.0 += usize::from(l.correct);
        c.1 += 1;
    }
    let per_question: BTreeMap<String, QuestionPrecision> = counts
        .into_iter()
        .map(|(id, (correct, total))| {
            let precision = (total > 0).then(|| correct as f64 / total as f64);
            (id, QuestionPrecision { correct, total, precision })
        })
        .collect();
    // Exact mean of per-question fractions.
    let labeled: Vec<Ratio<u128>> =
        per_question.values().filter(|q| q.total > 0).map(|q| Ratio::new(q.correct as u128, q.total as u128)).collect();
    let macro_exact =
        labeled.iter().fold(Ratio::from_integer(0u128), |a, b| a + b) / Ratio::from_integer(labeled.len() as u128);
    Ok(EvalReport {
        micro_precision: ratio_to_f64(micro),
        macro_precision: *macro_exact.numer() as f64 / *macro_exact.denom() as f64,
        per_question,
        micro_exact: (*micro.numer(), *micro.denom()),
    })
}

/// Labels derived from the qualified flags recorded at build time.
pub fn auto_labels(store: &CorpusStore) -> Vec<UrlLabel> {
    store
        .entries()
        .iter()
        .flat_map(|e| {
            e.candidate_urls.iter().map(|c| UrlLabel {
                question_id: e.question.id.clone(),
                url: c.record.url.clone(),
                correct: c.qualified,
            })
        })
        .collect()
}

/// Parse `question_id TAB url TAB {1,0}` lines. Blank lines are skipped.
pub fn parse_labels(text: &str) -> Result<Vec<UrlLabel>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            let [qid, url, flag] = f[..] else {
                return Err(EvalError::Malformed { line: i + 1, reason: "expected 3 tab-separated fields".into() });
            };
            let correct = match flag.trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(EvalError::Malformed {
                        line: i + 1,
                        reason: format!("label must be 1 or 0, got {other:?}"),
                    })
                }
            };
            Ok(UrlLabel { question_id: qid.to_owned(), url: url.to_owned(), correct })
        })
        .collect()
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<UrlLabel>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| EvalError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_labels(&text)
}
