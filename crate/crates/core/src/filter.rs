//! Answer presence, keyword coverage, passage selection and assembly of the
//! per-question corpus text.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::arabic::{normalized_tokens, token_spans};
use crate::question::Question;

/// Default number of passages assembled into one corpus text.
pub const DEFAULT_MAX_PASSAGES: usize = 9;

/// `true` when the gold answer's normalized tokens occur contiguously in the
/// text's normalized tokens. Matching whole tokens keeps "ايفل" from hitting
/// inside "ايفلية".
pub fn contains_answer(clean_text: &str, gold_answer: &str) -> bool {
    let needle = normalized_tokens(gold_answer);
    if needle.is_empty() {
        return false;
    }
    let hay = normalized_tokens(clean_text);
    contains_tokens(&hay, &needle)
}

fn contains_tokens(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Number of distinct keywords whose normalized form is among the text's tokens.
pub fn keyword_coverage(clean_text: &str, keywords: &[String]) -> usize {
    let toks: HashSet<String> = normalized_tokens(clean_text).into_iter().collect();
    coverage_in(&toks, keywords)
}

fn coverage_in(toks: &HashSet<String>, keywords: &[String]) -> usize {
    let mut seen = HashSet::new();
    keywords
        .iter()
        .filter_map(|k| {
            let norm = normalized_tokens(k).join(" ");
            (!norm.is_empty() && seen.insert(norm.clone())).then_some(norm)
        })
        .filter(|k| {
            // multi-token keywords must all be present
            k.split(' ').all(|t| toks.contains(t))
        })
        .count()
}

const SENTENCE_END: [char; 5] = ['.', '؟', '!', '؛', '\n'];

/// Sentences of `text`, split after `.`, `؟`, `!`, `؛` and at line breaks.
/// Terminal punctuation stays with its sentence; empty sentences are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if SENTENCE_END.contains(&c) {
            let end = if c == '\n' { i } else { i + c.len_utf8() };
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_owned());
            }
            start = i + c.len_utf8();
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_owned());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub text: String,
    /// Inclusive sentence indices.
    pub sentence_span: (usize, usize),
    pub coverage: usize,
}

/// The best sentence plus one sentence of context on each side.
///
/// Sentences holding the gold answer outrank all others; then higher keyword
/// coverage wins; ties go to the earliest sentence. `None` when no sentence
/// has a keyword or the answer.
pub fn extract_passage(clean_text: &str, question: &Question) -> Option<Passage> {
    let sentences = split_sentences(clean_text);
    let gold = question.gold_answer.as_deref().map(normalized_tokens).filter(|g| !g.is_empty());
    let mut best: Option<(usize, (bool, usize))> = None;
    for (i, s) in sentences.iter().enumerate() {
        let toks = normalized_tokens(s);
        let hit = gold.as_ref().is_some_and(|g| contains_tokens(&toks, g));
        let set: HashSet<String> = toks.into_iter().collect();
        let score = (hit, coverage_in(&set, &question.keywords));
        if best.as_ref().is_none_or(|(_, b)| score > *b) {
            best = Some((i, score));
        }
    }
    let (center, (hit, cov)) = best?;
    if !hit && cov == 0 {
        return None;
    }
    let first = center.saturating_sub(1);
    let last = (center + 1).min(sentences.len() - 1);
    let text = sentences[first..=last].join(" ");
    Some(Passage { coverage: keyword_coverage(&text, &question.keywords), text, sentence_span: (first, last) })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateText {
    pub url: String,
    pub rank: usize,
    pub clean_text: String,
    /// `None` when the question has no gold answer.
    pub contains_gold: Option<bool>,
    pub coverage: usize,
    pub passages: Vec<Passage>,
}

impl CandidateText {
    /// Score an extracted text against `question`.
    pub fn score(url: impl Into<String>, rank: usize, clean_text: impl Into<String>, question: &Question) -> Self {
        let clean_text = clean_text.into();
        CandidateText {
            url: url.into(),
            rank,
            contains_gold: question.gold_answer.as_deref().map(|g| contains_answer(&clean_text, g)),
            coverage: keyword_coverage(&clean_text, &question.keywords),
            passages: extract_passage(&clean_text, question).into_iter().collect(),
            clean_text,
        }
    }

    /// Gold known: the text must contain it. Gold unknown: at least one keyword.
    pub fn qualifies(&self) -> bool {
        match self.contains_gold {
            Some(found) => found,
            None => self.coverage >= 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledText {
    pub question_id: String,
    pub text: String,
    pub passage_count: usize,
    pub source_urls: Vec<String>,
}

/// Walk candidates in rank order, take the passage of each qualifying one
/// until `max_passages` are collected, and join them with blank lines.
pub fn build_corpus_text(
    candidates: &[CandidateText],
    question: &Question,
    max_passages: usize,
) -> Option<AssembledText> {
    let max_passages = max_passages.max(1);
    let mut ordered: Vec<&CandidateText> = candidates.iter().collect();
    ordered.sort_by_key(|c| c.rank);
    let mut passages = Vec::new();
    let mut urls: Vec<String> = Vec::new();
    for c in ordered {
        if passages.len() >= max_passages {
            break;
        }
        if !c.qualifies() {
            continue;
        }
        let Some(p) = c.passages.first() else { continue };
        passages.push(p.text.as_str());
        if !urls.contains(&c.url) {
            urls.push(c.url.clone());
        }
    }
    if passages.is_empty() {
        return None;
    }
    Some(AssembledText {
        question_id: question.id.clone(),
        text: passages.join("\n\n"),
        passage_count: passages.len(),
        source_urls: urls,
    })
}

/// Offsets of keyword and gold-answer matches in a raw text, for highlighting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSpans {
    /// Byte ranges of tokens equal to a question keyword.
    pub keywords: Vec<(usize, usize)>,
    /// Byte ranges covering each contiguous gold-answer occurrence.
    pub gold: Vec<(usize, usize)>,
}

pub fn match_spans(raw_text: &str, question: &Question) -> MatchSpans {
    let spans = token_spans(raw_text);
    let keywords: HashSet<String> = question.keywords.iter().flat_map(|k| normalized_tokens(k)).collect();
    let mut out = MatchSpans {
        keywords: spans.iter().filter(|s| keywords.contains(&s.token)).map(|s| (s.start, s.end)).collect(),
        gold: Vec::new(),
    };
    if let Some(gold) = question.gold_answer.as_deref().map(normalized_tokens).filter(|g| !g.is_empty()) {
        for (i, w) in spans.windows(gold.len()).enumerate() {
            if w.iter().map(|s| &s.token).eq(gold.iter()) {
                out.gold.push((spans[i].start, spans[i + gold.len() - 1].end));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::question::{Domain, Source};
    use proptest::prelude::*;

    fn eiffel(gold: Option<&str>) -> Question {
        Question::new("q1", "من صمم برج ايفل؟", Domain::HistoryIslam, Source::Forum, gold.map(str::to_owned)).unwrap()
    }

    /// Independent oracle: every contiguous window of the text tokens.
    fn brute_contains(text: &[String], answer: &[String]) -> bool {
        if answer.is_empty() {
            return false;
        }
        (0..text.len()).any(|start| {
            (start..=text.len()).any(|end| text[start..end].len() == answer.len() && &text[start..end] == answer)
        })
    }

    #[test]
    fn answer_examples() {
        assert!(contains_answer("صمم البرج غوستاف ايفل عام 1889", "غوستاف ايفل"));
        assert!(contains_answer("صمّم البرجَ غُوستاف إيفل", "غوستاف ايفل"));
        assert!(!contains_answer("الحقبة ايفلية في باريس", "برج ايفل"));
        assert!(!contains_answer("برج ايفلية", "برج ايفل"));
        assert!(contains_answer("برج ايفل", "برج ايفل"));
    }

    #[test]
    fn coverage_examples() {
        let q = eiffel(None);
        assert_eq!(keyword_coverage(&q.text, &q.keywords), 3);
        assert_eq!(keyword_coverage("", &q.keywords), 0);
        assert_eq!(keyword_coverage("صمم المهندس برجا يسمى برج المدينة", &q.keywords), 2);
    }

    #[test]
    fn sentences() {
        assert_eq!(split_sentences("أ. ب؟ ج!\nد؛ هـ"), ["أ.", "ب؟", "ج!", "د؛", "هـ"]);
        assert!(split_sentences("  \n ").is_empty());
    }

    const FIVE: &str =
        "الطقس جميل اليوم. زرنا باريس في الصيف. صمم البرج غوستاف ايفل. ثم عدنا الى الفندق. انتهت الرحلة.";

    #[test]
    fn passage_around_gold_sentence() {
        let p = extract_passage(FIVE, &eiffel(Some("غوستاف ايفل"))).unwrap();
        assert_eq!(p.sentence_span, (1, 3));
        assert_eq!(p.text, "زرنا باريس في الصيف. صمم البرج غوستاف ايفل. ثم عدنا الى الفندق.");
        assert_eq!(p.coverage, 2);
    }

    #[test]
    fn gold_outranks_coverage() {
        let text = "صمم برج ايفل مهندسون. وكان المصمم غوستاف ايفل. نهاية";
        let p = extract_passage(text, &eiffel(Some("غوستاف"))).unwrap();
        assert_eq!(p.sentence_span, (0, 2));
        let p = extract_passage("لا شيء. لا شيء. صمم برج. صمم برج ايفل. لا", &eiffel(None)).unwrap();
        assert_eq!(p.sentence_span, (2, 4));
    }

    #[test]
    fn passage_edges() {
        let p = extract_passage("برج عال", &eiffel(None)).unwrap();
        assert_eq!(p.sentence_span, (0, 0));
        assert_eq!(p.text, "برج عال");
        assert!(extract_passage("لا علاقة لهذا النص. ولا هذا.", &eiffel(None)).is_none());
        assert!(extract_passage("", &eiffel(Some("غوستاف"))).is_none());
        // ties go to the earliest sentence
        let p = extract_passage("أ. برج. ب. برج. ج", &eiffel(None)).unwrap();
        assert_eq!(p.sentence_span, (0, 2));
    }

    fn cand(rank: usize, text: &str, q: &Question) -> CandidateText {
        CandidateText::score(format!("https://s{rank}.example/"), rank, text, q)
    }

    #[test]
    fn assembly_caps_passages_in_rank_order() {
        let q = eiffel(Some("غوستاف ايفل"));
        let mut cands: Vec<CandidateText> =
            (1..=12).map(|r| cand(r, &format!("صمم البرج غوستاف ايفل رقم {r}"), &q)).collect();
        cands.push(cand(13, "نص لا يحتوي الجواب برج", &q));
        cands.reverse();
        let a = build_corpus_text(&cands, &q, 9).unwrap();
        assert_eq!(a.passage_count, 9);
        let expect: Vec<String> = (1..=9).map(|r| format!("https://s{r}.example/")).collect();
        assert_eq!(a.source_urls, expect);
        assert_eq!(a.text.split("\n\n").count(), 9);
        assert_eq!(a.question_id, "q1");
    }

    #[test]
    fn assembly_edge_cases() {
        let q = eiffel(Some("غوستاف ايفل"));
        assert!(build_corpus_text(&[cand(1, "برج فقط", &q)], &q, 9).is_none());
        assert!(build_corpus_text(&[], &q, 9).is_none());
        let one = build_corpus_text(&[cand(1, "صمم غوستاف ايفل البرج", &q), cand(2, "برج", &q)], &q, 9).unwrap();
        assert_eq!(one.passage_count, 1);
        assert_eq!(one.text, "صمم غوستاف ايفل البرج");

        // no gold: coverage decides
        let nog = eiffel(None);
        let a = build_corpus_text(&[cand(1, "لا شيء", &nog), cand(2, "برج", &nog)], &nog, 9).unwrap();
        assert_eq!(a.source_urls, ["https://s2.example/"]);
    }

    #[test]
    fn candidate_fields() {
        let c = cand(1, "صمم البرج غوستاف ايفل", &eiffel(Some("غوستاف ايفل")));
        assert_eq!(c.contains_gold, Some(true));
        assert!(c.qualifies());
        let c = cand(1, "صمم البرج", &eiffel(None));
        assert_eq!(c.contains_gold, None);
        assert_eq!(c.coverage, 1);
    }

    #[test]
    fn highlight_spans() {
        let raw = "صمّم البرج غوستاف إيفل، وبرج ايفل";
        let m = match_spans(raw, &eiffel(Some("غوستاف ايفل")));
        let kw: Vec<&str> = m.keywords.iter().map(|(s, e)| &raw[*s..*e]).collect();
        assert_eq!(kw, ["صمّم", "إيفل", "ايفل"]);
        let gold: Vec<&str> = m.gold.iter().map(|(s, e)| &raw[*s..*e]).collect();
        assert_eq!(gold, ["غوستاف إيفل"]);
    }

    fn words() -> impl Strategy<Value = String> {
        proptest::sample::select(vec!["برج", "ايفل", "صمم", "غوستاف", "باريس", "عام", "1889"]).prop_map(str::to_owned)
    }

    fn add_marks(s: &str, seed: &[u8]) -> String {
        let mut out = String::new();
        for (i, c) in s.chars().enumerate() {
            out.push(c);
            if seed.get(i % seed.len().max(1)).is_some_and(|b| b % 3 == 0) {
                out.push(char::from_u32(0x064B + u32::from(seed[i % seed.len()] % 8)).unwrap());
            }
        }
        out
    }

    proptest! {
        #[test]
        fn matches_brute_force(text in proptest::collection::vec(words(), 0..30),
                               ans in proptest::collection::vec(words(), 1..4)) {
            let t = text.join(" ");
            let a = ans.join(" ");
            prop_assert_eq!(contains_answer(&t, &a), brute_contains(&normalized_tokens(&t), &normalized_tokens(&a)));
        }

        #[test]
        fn diacritic_insensitive(text in proptest::collection::vec(words(), 0..20),
                                 ans in proptest::collection::vec(words(), 1..3),
                                 seed in proptest::collection::vec(any::<u8>(), 1..16)) {
            let t = text.join(" ");
            let a = ans.join(" ");
            let base = contains_answer(&t, &a);
            prop_assert_eq!(contains_answer(&add_marks(&t, &seed), &a), base);
            prop_assert_eq!(contains_answer(&t, &add_marks(&a, &seed)), base);
        }

        #[test]
        fn coverage_is_monotone(a in proptest::collection::vec(words(), 0..10),
                                b in proptest::collection::vec(words(), 0..10)) {
            let q = eiffel(None);
            let t = a.join(" ");
            let longer = format!("{t} {}", b.join(" "));
            prop_assert!(keyword_coverage(&longer, &q.keywords) >= keyword_coverage(&t, &q.keywords));
            prop_assert!(keyword_coverage(&longer, &q.keywords) <= q.keywords.len());
        }

        #[test]
        fn assembly_respects_rank_order(flags in proptest::collection::vec(any::<bool>(), 0..20), max in 1usize..6) {
            let q = eiffel(Some("غوستاف"));
            let cands: Vec<CandidateText> = flags
                .iter()
                .enumerate()
                .map(|(i, f)| cand(i + 1, if *f { "غوستاف صمم" } else { "برج" }, &q))
                .collect();
            match build_corpus_text(&cands, &q, max) {
                None => prop_assert!(!flags.iter().any(|f| *f)),
                Some(a) => {
                    prop_assert!(a.passage_count <= max);
                    let order: Vec<&String> = cands.iter().map(|c| &c.url).collect();
                    let mut it = order.iter();
                    for u in &a.source_urls {
                        prop_assert!(it.any(|o| *o == u));
                    }
                }
            }
        }
    }
}
