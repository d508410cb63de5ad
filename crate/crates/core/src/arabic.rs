//! Arabic string canonicalization and tokenization.
//!
//! Matching throughout the crate runs on normalized tokens so that optional
//! short-vowel marks, elongation and common orthographic variants never
//! decide whether a keyword or an answer is present.
//!
//! Rule table, applied in order:
//!
//! | step | effect |
//! |------|--------|
//! | 1 | drop U+064B..=U+0652 (tashkeel) |
//! | 2 | drop U+0640 (tatweel) |
//! | 3 | أ إ آ ٱ → ا |
//! | 4 | ى → ي |
//! | 5 | ة → ه |
//! | 6 | ؤ → و |
//! | 7 | ئ → ي |
//! | 8 | Latin letters lowercased |
//! | 9 | whitespace runs collapsed to one space, then trimmed |
//!
//! The ة→ه and ى→ي folds merge some distinct words; recall is preferred over
//! precision for answer-presence checks.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

const TATWEEL: char = '\u{0640}';

/// `true` for the combining tashkeel marks U+064B..=U+0652.
pub fn is_diacritic(c: char) -> bool {
    ('\u{064B}'..='\u{0652}').contains(&c)
}

/// `true` when `c` lies in the Arabic block or one of the Arabic presentation
/// form blocks.
pub fn in_arabic_block(c: char) -> bool {
    matches!(c,
        '\u{0600}'..='\u{06FF}'
        | '\u{FB50}'..='\u{FDFF}'
        | '\u{FE70}'..='\u{FEFF}')
}

fn is_arabic_mark(c: char) -> bool {
    matches!(c,
        '\u{0610}'..='\u{061A}'
        | '\u{064B}'..='\u{065F}'
        | '\u{0670}'
        | '\u{06D6}'..='\u{06ED}')
        || c == TATWEEL
}

/// A letter for ratio purposes: alphabetic, excluding combining marks and
/// tatweel, which Unicode also classifies as alphabetic.
pub fn is_letter(c: char) -> bool {
    c.is_alphabetic() && !is_arabic_mark(c)
}

/// An Arabic-block letter.
pub fn is_arabic_letter(c: char) -> bool {
    in_arabic_block(c) && is_letter(c)
}

/// Token separators besides whitespace: ASCII punctuation, Arabic
/// punctuation and the usual typographic quotes and dashes.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{061F}' // ؟
            | '\u{060C}' // ،
            | '\u{061B}' // ؛
            | '\u{00AB}' // «
            | '\u{00BB}' // »
            | '\u{066A}' // ٪
            | '\u{06D4}' // ۔
            | '\u{2018}'..='\u{201F}'
            | '\u{2010}'..='\u{2015}'
            | '\u{2026}'
            | '\u{2022}'
            | '\u{00B7}'
            | '\u{00A1}'
            | '\u{00BF}'
        )
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || is_punctuation(c)
}

/// Per-character part of the rule table (steps 1 to 8). `None` drops the
/// character.
fn fold_char(c: char, out: &mut String) {
    if is_diacritic(c) || c == TATWEEL {
        return;
    }
    match c {
        'أ' | 'إ' | 'آ' | 'ٱ' => out.push('ا'),
        'ى' => out.push('ي'),
        'ة' => out.push('ه'),
        'ؤ' => out.push('و'),
        'ئ' => out.push('ي'),
        c if c.is_alphabetic() && !in_arabic_block(c) && c.is_uppercase() => {
            out.extend(c.to_lowercase().filter(|l| !is_diacritic(*l) && *l != TATWEEL))
        }
        c => out.push(c),
    }
}

/// A string that has been through [`normalize_text`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct NormalizedString(String);

impl NormalizedString {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<str> for NormalizedString {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NormalizedString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Canonicalize an Arabic string per the rule table in the module docs.
pub fn normalize_text(s: &str) -> NormalizedString {
    let mut folded = String::with_capacity(s.len());
    for c in s.chars() {
        fold_char(c, &mut folded);
    }
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    NormalizedString(out)
}

/// Normalize a single token without whitespace handling.
fn normalize_token(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        fold_char(c, &mut out);
    }
    out
}

/// Split a normalized string on whitespace and punctuation.
pub fn tokenize(s: &NormalizedString) -> Vec<String> {
    s.as_str().split(is_separator).filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

/// Shorthand for `tokenize(&normalize_text(s))`.
pub fn normalized_tokens(s: &str) -> Vec<String> {
    tokenize(&normalize_text(s))
}

/// A normalized token together with the byte range of its source in the
/// original, unnormalized string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenSpan {
    pub token: String,
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Tokenize a raw string, keeping the byte offsets of every token in `raw`.
///
/// The token sequence equals `normalized_tokens(raw)`: normalization never
/// creates or removes separators, so splitting first and folding each piece
/// afterwards gives the same tokens.
pub fn token_spans(raw: &str) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let push = |from: usize, to: usize, spans: &mut Vec<TokenSpan>| {
        let token = normalize_token(&raw[from..to]);
        if !token.is_empty() {
            spans.push(TokenSpan { token, start: from, end: to });
        }
    };
    for (i, c) in raw.char_indices() {
        if is_separator(c) {
            if let Some(s) = start.take() {
                push(s, i, &mut spans);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        push(s, raw.len(), &mut spans);
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_diacritics_and_unifies_alef() {
        assert_eq!(normalize_text("بُرْجُ إِيفل").as_str(), "برج ايفل");
    }

    #[test]
    fn empty_input() {
        assert_eq!(normalize_text("").as_str(), "");
        assert!(tokenize(&normalize_text("")).is_empty());
    }

    #[test]
    fn rule_table() {
        assert_eq!(normalize_text("أإآٱ").as_str(), "اااا");
        assert_eq!(normalize_text("مستشفى").as_str(), "مستشفي");
        assert_eq!(normalize_text("مدرسة").as_str(), "مدرسه");
        assert_eq!(normalize_text("مؤتمر").as_str(), "موتمر");
        assert_eq!(normalize_text("رئيس").as_str(), "رييس");
        assert_eq!(normalize_text("عـــربي").as_str(), "عربي");
        assert_eq!(normalize_text("  Eiffel\t\nTOWER ").as_str(), "eiffel tower");
    }

    #[test]
    fn tokenize_question() {
        let toks = tokenize(&normalize_text("من صمم برج ايفل؟"));
        assert_eq!(toks, ["من", "صمم", "برج", "ايفل"]);
        assert_eq!(tokenize(&normalize_text("ا.ب")), ["ا", "ب"]);
        assert_eq!(normalized_tokens("«قال»، نعم؛ لا!"), ["قال", "نعم", "لا"]);
    }

    #[test]
    fn spans_point_into_raw_text() {
        let raw = "صمّم  بُرجَ، Eiffel";
        let spans = token_spans(raw);
        let toks: Vec<_> = spans.iter().map(|s| s.token.as_str()).collect();
        assert_eq!(toks, ["صمم", "برج", "eiffel"]);
        assert_eq!(&raw[spans[2].range()], "Eiffel");
        assert_eq!(&raw[spans[1].range()], "بُرجَ");
    }

    #[test]
    fn lone_marks_vanish() {
        assert_eq!(normalized_tokens("ب \u{064E} ج"), ["ب", "ج"]);
        assert_eq!(token_spans("ب \u{064E} ج").len(), 2);
    }

    fn arabicish() -> impl Strategy<Value = String> {
        let pool: Vec<char> =
            "ابتثجحخدذرزسشصضطظعغفقكلمنهويأإآٱىةؤئءـ  ؟،.!aBZ1٣\t\n".chars().chain('\u{064B}'..='\u{0652}').collect();
        proptest::collection::vec(proptest::sample::select(pool), 0..40).prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in any::<String>()) {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(once.as_str()), once);
        }

        #[test]
        fn normalize_is_idempotent_on_arabic(s in arabicish()) {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(once.as_str()), once);
        }

        #[test]
        fn spans_agree_with_tokenize(s in arabicish()) {
            let via_spans: Vec<String> = token_spans(&s).into_iter().map(|t| t.token).collect();
            prop_assert_eq!(via_spans, normalized_tokens(&s));
        }

        #[test]
        fn tokens_never_empty_and_rejoin_is_identity(s in arabicish()) {
            let toks = normalized_tokens(&s);
            prop_assert!(toks.iter().all(|t| !t.is_empty()));
            let rejoined = toks.join(" ");
            prop_assert_eq!(normalized_tokens(&rejoined), toks);
        }
    }
}
