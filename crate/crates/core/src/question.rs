//! The factoid question bank: loading, interrogative classification, keyword
//! segmentation and the derived question features.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arabic::{normalize_text, tokenize};

/// Stopword list shipped with the crate. Bump the file version when changing it.
pub const STOPWORDS_V1: &str = include_str!("../data/stopwords-v1.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuestionError {
    #[error("empty question bank")]
    EmptyBank,
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate question id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown domain {label:?}")]
    UnknownDomain { line: usize, label: String },
    #[error("line {line}: unknown source {label:?}")]
    UnknownSource { line: usize, label: String },
    #[error("line {line}: {source}")]
    Analysis {
        line: usize,
        #[source]
        source: AnalysisError,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("question text is empty")]
    EmptyText,
    #[error("unsupported question (no who/what/when/where/how-many interrogative): {0:?}")]
    Unsupported(String),
    #[error("no keywords left after filtering: {0:?}")]
    EmptyKeywords(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionType {
    Who,
    What,
    When,
    Where,
    HowMany,
}

impl QuestionType {
    pub const ALL: [QuestionType; 5] =
        [QuestionType::Who, QuestionType::What, QuestionType::When, QuestionType::Where, QuestionType::HowMany];

    /// The Arabic interrogative this type is named after.
    pub fn interrogative(self) -> &'static str {
        match self {
            QuestionType::Who => "من",
            QuestionType::What => "ما",
            QuestionType::When => "متى",
            QuestionType::Where => "أين",
            QuestionType::HowMany => "كم",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerType {
    Person,
    Entity,
    Date,
    Location,
    Number,
}

/// Expected answer type for each interrogative.
pub fn map_answer_type(t: QuestionType) -> AnswerType {
    match t {
        QuestionType::Who => AnswerType::Person,
        QuestionType::What => AnswerType::Entity,
        QuestionType::When => AnswerType::Date,
        QuestionType::Where => AnswerType::Location,
        QuestionType::HowMany => AnswerType::Number,
    }
}

macro_rules! labelled_enum {
    ($(#[$meta:meta])* $name:ident, $err:literal { $($variant:ident => $ar:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => stringify!($variant)),+
                }
            }

            pub fn arabic_label(self) -> &'static str {
                match self {
                    $($name::$variant => $ar),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = String;

            /// Accepts the English label (case-insensitive) or the Arabic label.
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let s = s.trim();
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.label().eq_ignore_ascii_case(s) || v.arabic_label() == s)
                    .ok_or_else(|| format!(concat!("unknown ", $err, " {:?}"), s))
            }
        }
    };
}

labelled_enum!(
    /// Topical area a question belongs to.
    Domain, "domain" {
        Sport => "رياضة",
        HistoryIslam => "التاريخ والإسلام",
        CultureDiscoveries => "ثقافة واكتشافات",
        WorldNews => "أخبار العالم",
        HealthMedicine => "صحة وطب",
    }
);

labelled_enum!(
    /// Where a question was collected from.
    Source, "source" {
        TREC => "TREC",
        CLEF => "CLEF",
        Forum => "منتدى",
        FAQ => "أسئلة شائعة",
    }
);

/// A question as it appears in the input file, before analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub id: String,
    pub text: String,
    pub domain: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
}

/// An analyzed factoid question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub qtype: QuestionType,
    pub keywords: Vec<String>,
    pub focus: Option<String>,
    pub expected_answer: AnswerType,
    pub domain: Domain,
    pub source: Source,
    pub gold_answer: Option<String>,
}

impl Question {
    /// Build an analyzed question from its declared fields.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        domain: Domain,
        source: Source,
        gold_answer: Option<String>,
    ) -> Result<Self, AnalysisError> {
        let text = text.into();
        let a = analyze_text(&text)?;
        Ok(Question {
            id: id.into(),
            text,
            qtype: a.qtype,
            keywords: a.keywords,
            focus: a.focus,
            expected_answer: a.expected_answer,
            domain,
            source,
            gold_answer: gold_answer.filter(|g| !g.trim().is_empty()),
        })
    }
}

struct Analysis {
    qtype: QuestionType,
    keywords: Vec<String>,
    focus: Option<String>,
    expected_answer: AnswerType,
}

fn analyze_text(text: &str) -> Result<Analysis, AnalysisError> {
    let qtype = classify_interrogative(text)?;
    let keywords = extract_keywords(text)?;
    Ok(Analysis { qtype, focus: keywords.first().cloned(), keywords, expected_answer: map_answer_type(qtype) })
}

/// Recompute the derived features of `q` from its text. Idempotent.
pub fn analyze_question(q: &Question) -> Result<Question, AnalysisError> {
    Question::new(q.id.clone(), q.text.clone(), q.domain, q.source, q.gold_answer.clone())
}

fn stopwords() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_V1
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| normalize_text(l).into_string())
            .collect()
    })
}

/// `true` if `token` (already normalized) is on the shipped stopword list.
pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

fn interrogative_of(token: &str, leading: bool) -> Option<QuestionType> {
    // "من" also means "from"; only a fronted one asks "who".
    match token {
        "من" if leading => Some(QuestionType::Who),
        "ما" | "ماذا" => Some(QuestionType::What),
        "متي" => Some(QuestionType::When),
        "اين" => Some(QuestionType::Where),
        "كم" => Some(QuestionType::HowMany),
        _ => None,
    }
}

/// Type of the first interrogative token of `text`, matched on normalized tokens.
pub fn classify_interrogative(text: &str) -> Result<QuestionType, AnalysisError> {
    if text.trim().is_empty() {
        return Err(AnalysisError::EmptyText);
    }
    tokenize(&normalize_text(text))
        .iter()
        .enumerate()
        .find_map(|(i, t)| interrogative_of(t, i == 0))
        .ok_or_else(|| AnalysisError::Unsupported(text.to_owned()))
}

/// Normalized question tokens without interrogatives, stopwords and
/// repeats, in question order.
pub fn extract_keywords(text: &str) -> Result<Vec<String>, AnalysisError> {
    if text.trim().is_empty() {
        return Err(AnalysisError::EmptyText);
    }
    let mut seen = HashSet::new();
    let keywords: Vec<String> = tokenize(&normalize_text(text))
        .into_iter()
        .filter(|t| !is_stopword(t))
        .filter(|t| seen.insert(t.clone()))
        .collect();
    if keywords.is_empty() {
        return Err(AnalysisError::EmptyKeywords(text.to_owned()));
    }
    Ok(keywords)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Parse a question bank from JSON Lines text. Blank lines are skipped.
pub fn parse_questions(input: &str) -> Result<Vec<Question>, QuestionError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let rec: QuestionRecord = serde_json::from_str(line)
            .map_err(|e| QuestionError::Malformed { line: line_no, reason: e.to_string() })?;
        if !valid_id(&rec.id) {
            return Err(QuestionError::Malformed {
                line: line_no,
                reason: format!("invalid id {:?} (use ASCII letters, digits, '-', '_', '.')", rec.id),
            });
        }
        if rec.text.contains(['\t', '\n', '\r'])
            || rec.gold_answer.as_deref().is_some_and(|g| g.contains(['\t', '\n', '\r']))
        {
            return Err(QuestionError::Malformed {
                line: line_no,
                reason: "tabs and line breaks are not allowed in text fields".into(),
            });
        }
        if !ids.insert(rec.id.clone()) {
            return Err(QuestionError::DuplicateId { line: line_no, id: rec.id });
        }
        let domain = rec
            .domain
            .parse::<Domain>()
            .map_err(|_| QuestionError::UnknownDomain { line: line_no, label: rec.domain.clone() })?;
        let source = rec
            .source
            .parse::<Source>()
            .map_err(|_| QuestionError::UnknownSource { line: line_no, label: rec.source.clone() })?;
        let q = Question::new(rec.id, rec.text, domain, source, rec.gold_answer)
            .map_err(|source| QuestionError::Analysis { line: line_no, source })?;
        out.push(q);
    }
    if out.is_empty() {
        return Err(QuestionError::EmptyBank);
    }
    Ok(out)
}

/// Load and analyze the question bank at `path`, preserving file order.
pub fn load_questions(path: impl AsRef<Path>) -> Result<Vec<Question>, QuestionError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| QuestionError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_questions(&text)
}
