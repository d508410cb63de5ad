//! HTML to plain text, and removal of non-Arabic tokens.
//!
//! Extraction is plain tag stripping: script, style and comment content is
//! dropped, every other tag is removed, entities are decoded and block-level
//! elements become line breaks. No main-content detection is attempted, so
//! navigation text survives and is left to passage scoring downstream.

use encoding_rs::Encoding;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arabic::{is_arabic_letter, is_letter, is_punctuation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no characters could be decoded as {encoding} ({replacements} replacements)")]
    Undecodable { encoding: String, replacements: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedHtml {
    pub text: String,
    pub encoding: &'static str,
    /// Malformed byte sequences replaced with U+FFFD.
    pub replacements: usize,
}

/// Decode page bytes. Unknown labels fall back to UTF-8; a byte order mark
/// overrides the label.
pub fn decode_html(raw: &[u8], encoding: &str) -> Result<DecodedHtml, ExtractError> {
    let enc = Encoding::for_label(encoding.trim().as_bytes()).unwrap_or(encoding_rs::UTF_8);
    let (text, used, _) = enc.decode(raw);
    let replacements = text.chars().filter(|c| *c == char::REPLACEMENT_CHARACTER).count();
    if replacements > 0 && text.chars().all(|c| c == char::REPLACEMENT_CHARACTER) {
        return Err(ExtractError::Undecodable { encoding: used.name().to_owned(), replacements });
    }
    Ok(DecodedHtml { text: text.into_owned(), encoding: used.name(), replacements })
}

/// Decode `raw_html` and strip it to text.
pub fn html_to_text(raw_html: &[u8], encoding: &str) -> Result<String, ExtractError> {
    Ok(strip_markup(&decode_html(raw_html, encoding)?.text))
}

const BLOCK_TAGS: &[&str] = &[
    "address",
    "article",
    "aside",
    "blockquote",
    "body",
    "br",
    "caption",
    "dd",
    "details",
    "dialog",
    "div",
    "dl",
    "dt",
    "fieldset",
    "figcaption",
    "figure",
    "footer",
    "form",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "head",
    "header",
    "hgroup",
    "hr",
    "html",
    "li",
    "main",
    "nav",
    "ol",
    "option",
    "p",
    "pre",
    "section",
    "summary",
    "table",
    "tbody",
    "td",
    "tfoot",
    "th",
    "thead",
    "title",
    "tr",
    "ul",
];

/// Elements whose whole content is dropped.
const RAW_TEXT_TAGS: &[&str] = &["script", "style"];

#[derive(Debug)]
enum Piece<'a> {
    Text(&'a str),
    Break,
}

fn find_ci(hay: &str, from: usize, needle: &str) -> Option<usize> {
    let n = needle.len();
    let bytes = hay.as_bytes();
    (from..=bytes.len().saturating_sub(n)).find(|&i| bytes[i..i + n].eq_ignore_ascii_case(needle.as_bytes()))
}

/// End (exclusive) of a tag starting at `start` (the `<`), honoring quoted
/// attribute values. `None` when the tag never closes.
fn tag_end(s: &str, start: usize) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut quote: Option<u8> = None;
    let mut i = start + 1;
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None if b == b'"' || b == b'\'' => {
                // only quotes that open an attribute value count
                if bytes[i - 1] == b'=' || (bytes[i - 1] == b' ' && s[start..i].trim_end().ends_with('=')) {
                    quote = Some(b);
                }
            }
            None if b == b'>' => return Some(i + 1),
            None => {}
        }
        i += 1;
    }
    None
}

fn split_markup<'a>(s: &'a str) -> Vec<Piece<'a>> {
    let bytes = s.as_bytes();
    let mut pieces = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    let flush = |pieces: &mut Vec<Piece<'a>>, from: usize, to: usize| {
        if to > from {
            pieces.push(Piece::Text(&s[from..to]));
        }
    };
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let rest = &s[i..];
        let next = bytes.get(i + 1).copied();
        let skip_to = if rest.starts_with("<!-->") {
            Some(i + 5)
        } else if rest.starts_with("<!--->") {
            Some(i + 6)
        } else if rest.starts_with("<!--") {
            Some(s[i + 4..].find("-->").map_or(s.len(), |p| i + 4 + p + 3))
        } else if rest.len() >= 9 && rest.as_bytes()[..9].eq_ignore_ascii_case(b"<![cdata[") {
            Some(s[i + 9..].find("]]>").map_or(s.len(), |p| i + 9 + p + 3))
        } else if matches!(next, Some(b'!') | Some(b'?')) {
            Some(s[i..].find('>').map_or(s.len(), |p| i + p + 1))
        } else if matches!(next, Some(b'/')) || next.is_some_and(|b| b.is_ascii_alphabetic()) {
            None
        } else {
            // a bare '<' is text
            i += 1;
            continue;
        };
        flush(&mut pieces, text_start, i);
        if let Some(end) = skip_to {
            i = end;
            text_start = end;
            continue;
        }
        let closing = next == Some(b'/');
        let name_start = if closing { i + 2 } else { i + 1 };
        let name_end =
            bytes[name_start..].iter().position(|b| !b.is_ascii_alphanumeric()).map_or(bytes.len(), |p| name_start + p);
        let name = s[name_start..name_end].to_ascii_lowercase();
        let Some(end) = tag_end(s, i) else {
            // unterminated tag swallows the rest of the document
            i = s.len();
            text_start = i;
            break;
        };
        if !closing && RAW_TEXT_TAGS.contains(&name.as_str()) {
            let close = format!("</{name}");
            i = match find_ci(s, end, &close) {
                Some(p) => tag_end(s, p).unwrap_or(s.len()),
                None => s.len(),
            };
            pieces.push(Piece::Break);
        } else {
            if BLOCK_TAGS.contains(&name.as_str()) {
                pieces.push(Piece::Break);
            }
            i = end;
        }
        text_start = i;
    }
    flush(&mut pieces, text_start, s.len().max(text_start));
    pieces
}

fn clean_whitespace(text: &str) -> String {
    text.replace("\r\n", "\n")
        .replace('\r', "\n")
        .chars()
        .map(|c| if c != '\n' && c.is_whitespace() { ' ' } else { c })
        .collect()
}

/// Remove markup from already decoded HTML.
pub fn strip_markup(html: &str) -> String {
    let mut out = String::with_capacity(html.len() / 2);
    let mut pending_break = false;
    for piece in split_markup(html) {
        match piece {
            Piece::Break => pending_break = true,
            Piece::Text(raw) => {
                let decoded = html_escape::decode_html_entities(raw);
                let text = clean_whitespace(&decoded);
                if pending_break {
                    if text.trim().is_empty() {
                        continue;
                    }
                    out.truncate(out.trim_end().len());
                    if !out.is_empty() {
                        out.push('\n');
                    }
                    out.push_str(text.trim_start());
                    pending_break = false;
                } else {
                    out.push_str(&text);
                }
            }
        }
    }
    tidy_lines(&out)
}

/// Collapse space runs, trim lines, allow at most one empty line in a row,
/// trim the whole.
fn tidy_lines(text: &str) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut blank_run = 0;
    for line in text.split('\n') {
        let collapsed = line.split(' ').filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ");
        if collapsed.is_empty() {
            blank_run += 1;
            if blank_run > 1 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        lines.push(collapsed);
    }
    lines.join("\n").trim().to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedText {
    pub text: String,
    /// Arabic-block letters over all letters of `text`; 0 without letters.
    pub arabic_char_ratio: f64,
    pub token_count: usize,
    pub removed_foreign_tokens: usize,
}

/// Kept: tokens with an Arabic letter, and tokens made only of digits and
/// punctuation.
fn keep_token(tok: &str) -> bool {
    tok.chars().any(is_arabic_letter) || tok.chars().all(|c| c.is_numeric() || is_punctuation(c))
}

/// Drop whitespace-delimited tokens written in other scripts. Line breaks are
/// kept (they delimit sentences); lines left empty are dropped.
pub fn filter_foreign_tokens(text: &str) -> ExtractedText {
    let mut removed = 0;
    let mut kept_count = 0;
    let mut lines = Vec::new();
    for line in text.lines() {
        let kept: Vec<&str> = line
            .split_whitespace()
            .filter(|t| {
                let keep = keep_token(t);
                if !keep {
                    removed += 1;
                }
                keep
            })
            .collect();
        if !kept.is_empty() {
            kept_count += kept.len();
            lines.push(kept.join(" "));
        }
    }
    let text = lines.join("\n");
    let (arabic, letters) = text
        .chars()
        .fold((0usize, 0usize), |(a, l), c| (a + usize::from(is_arabic_letter(c)), l + usize::from(is_letter(c))));
    ExtractedText {
        arabic_char_ratio: if letters == 0 { 0.0 } else { arabic as f64 / letters as f64 },
        text,
        token_count: kept_count,
        removed_foreign_tokens: removed,
    }
}
