//! Tolerant extraction of `"sentence":` / `"spans":` blocks from model replies.
//!
//! Values must be double-quoted; any prose around them is ignored.

use regex::Regex;
use thiserror::Error;

use super::templates::REFUSAL_MARKER;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no quoted {0} found in reply")]
    Missing(&'static str),
    #[error("unterminated string in reply")]
    Unterminated,
    #[error("span list is empty")]
    EmptyList,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SentenceReply {
    Sentence(String),
    Refused,
}

fn label_end(text: &str, label: &str) -> Option<usize> {
    let re = Regex::new(&format!(r#""{label}"\s*:"#)).expect("label regex");
    re.find(text).map(|m| m.end())
}

/// Reads a double-quoted string starting at the first `"` at or after `from`.
/// Returns the decoded string and the byte offset just past it.
fn quoted(text: &str, from: usize) -> Result<(String, usize), ExtractError> {
    let open = text[from..]
        .find('"')
        .ok_or(ExtractError::Missing("string"))?
        + from;
    let bytes = text.as_bytes();
    let mut i = open + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'"' => {
                let raw = &text[open..=i];
                let value = serde_json::from_str::<String>(raw)
                    .unwrap_or_else(|_| text[open + 1..i].to_string());
                return Ok((value, i + 1));
            }
            _ => i += 1,
        }
    }
    Err(ExtractError::Unterminated)
}

fn skip_ws(text: &str, mut at: usize) -> usize {
    while let Some(c) = text[at..].chars().next() {
        if !c.is_whitespace() {
            break;
        }
        at += c.len_utf8();
    }
    at
}

/// Parses `["a", "b"]` starting at `at` (after optional whitespace).
fn string_list(text: &str, at: usize) -> Result<(Vec<String>, usize), ExtractError> {
    let mut pos = skip_ws(text, at);
    if !text[pos..].starts_with('[') {
        return Err(ExtractError::Missing("span list"));
    }
    pos += 1;
    let mut out = Vec::new();
    loop {
        pos = skip_ws(text, pos);
        match text[pos..].chars().next() {
            None => return Err(ExtractError::Unterminated),
            Some(']') => return Ok((out, pos + 1)),
            Some(',') => pos += 1,
            Some('"') => {
                let (s, end) = quoted(text, pos)?;
                out.push(s);
                pos = end;
            }
            Some(_) => return Err(ExtractError::Missing("span list")),
        }
    }
}

/// Joint-translation reply: one sentence and its span list.
pub fn joint_reply(text: &str) -> Result<(String, Vec<String>), ExtractError> {
    let after = label_end(text, "sentence").ok_or(ExtractError::Missing("sentence"))?;
    let (sentence, end) = quoted(text, after)?;
    let spans_at =
        label_end(&text[end..], "spans").ok_or(ExtractError::Missing("span list"))? + end;
    let (spans, _) = string_list(text, spans_at)?;
    Ok((sentence, spans))
}

/// Span-rephrase reply: a single corrected span, bare or in a list.
pub fn span_reply(text: &str) -> Result<String, ExtractError> {
    let from = label_end(text, "spans").unwrap_or(0);
    let at = skip_ws(text, from);
    if text[at..].starts_with('[') {
        let (mut spans, _) = string_list(text, at)?;
        if spans.is_empty() {
            return Err(ExtractError::EmptyList);
        }
        return Ok(spans.swap_remove(0));
    }
    quoted(text, at).map(|(s, _)| s)
}

/// Sentence-rephrase reply, or the refusal marker.
pub fn sentence_reply(text: &str) -> Result<SentenceReply, ExtractError> {
    if text.to_lowercase().contains(REFUSAL_MARKER) {
        return Ok(SentenceReply::Refused);
    }
    let from = label_end(text, "sentence").unwrap_or(0);
    quoted(text, from).map(|(s, _)| SentenceReply::Sentence(s))
}
