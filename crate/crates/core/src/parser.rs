//! Safe parsing of model completions.
//!
//! Completions are read with a closed recursive-descent grammar, nothing is
//! ever executed:
//!
//! ```text
//! completion := "results" "=" list
//! list       := "[" (call ("," call)*)? "]"
//! call       := IDENT "(" (arg ("," arg)*)? ")"
//! arg        := STRING | call | list | IDENT "=" (STRING | call | list)
//! ```
//!
//! Anything before the first `results = [` is ignored, and so is anything
//! after the closing bracket. A malformed top-level element is dropped and
//! parsing resumes at the next top-level comma; running out of input before
//! the list closes is fatal.

use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::ontology::{Ontology, SlotKind};
use crate::sample::{ExtractionInstance, Interval, SlotValue, Span};

/// Maximum nesting of lists and calls, the outer `results` list included.
pub const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no `results =` marker found")]
    MissingMarker,
    #[error("`results =` is not followed by a list")]
    ExpectedList,
    #[error("unbalanced brackets: input ended inside the results list")]
    Unbalanced,
    #[error("nesting deeper than {MAX_DEPTH}")]
    TooDeep,
}

impl Serialize for ParseError {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Why a top-level call was discarded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropReason {
    UnknownClass(String),
    WrongArity {
        concept: String,
        expected: usize,
        got: usize,
    },
    UnknownKeyword {
        concept: String,
        keyword: String,
    },
    DuplicateArgument {
        concept: String,
        attribute: String,
    },
    KindMismatch {
        concept: String,
        attribute: String,
    },
    NotACall,
    Syntax(String),
    /// Parsed cleanly but the surrounding list never closed.
    Truncated,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::UnknownClass(c) => write!(f, "unknown-class: {c}"),
            DropReason::WrongArity {
                concept,
                expected,
                got,
            } => {
                write!(
                    f,
                    "wrong-arity: {concept} takes {expected} arguments, got {got}"
                )
            }
            DropReason::UnknownKeyword { concept, keyword } => {
                write!(f, "unknown-keyword: {concept}.{keyword}")
            }
            DropReason::DuplicateArgument { concept, attribute } => {
                write!(f, "duplicate-argument: {concept}.{attribute}")
            }
            DropReason::KindMismatch { concept, attribute } => {
                write!(f, "kind-mismatch: {concept}.{attribute}")
            }
            DropReason::NotACall => f.write_str("not-a-call"),
            DropReason::Syntax(msg) => write!(f, "syntax: {msg}"),
            DropReason::Truncated => f.write_str("truncated"),
        }
    }
}

impl Serialize for DropReason {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dropped {
    pub raw: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub instances: Vec<ExtractionInstance>,
    pub dropped: Vec<Dropped>,
    /// Span texts that could not be located in the sentence.
    pub unresolved: Vec<String>,
    pub fatal: Option<ParseError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Str(String),
    Call {
        name: String,
        args: Vec<(Option<String>, Node)>,
    },
    List(Vec<Node>),
}

#[derive(Debug)]
enum SyntaxError {
    Eof,
    TooDeep,
    Unexpected(String),
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn expect(&mut self, want: char) -> Result<(), SyntaxError> {
        self.skip_ws();
        match self.bump() {
            Some(c) if c == want => Ok(()),
            Some(c) => Err(SyntaxError::Unexpected(format!(
                "expected `{want}`, found `{c}`"
            ))),
            None => Err(SyntaxError::Eof),
        }
    }

    fn ident(&mut self) -> Option<String> {
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                self.pos += 1;
            }
            _ => return None,
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        Some(self.src[start..self.pos].to_string())
    }

    fn string(&mut self) -> Result<String, SyntaxError> {
        let delim = self.bump().ok_or(SyntaxError::Eof)?;
        let mut out = String::new();
        loop {
            match self.bump().ok_or(SyntaxError::Eof)? {
                c if c == delim => return Ok(out),
                '\\' => match self.bump().ok_or(SyntaxError::Eof)? {
                    '"' => out.push('"'),
                    '\'' => out.push('\''),
                    '\\' => out.push('\\'),
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    other => {
                        out.push('\\');
                        out.push(other);
                    }
                },
                c => out.push(c),
            }
        }
    }

    fn value(&mut self, depth: usize) -> Result<Node, SyntaxError> {
        self.skip_ws();
        match self.peek() {
            None => Err(SyntaxError::Eof),
            Some('"') | Some('\'') => Ok(Node::Str(self.string()?)),
            Some('[') => self.list(depth),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.call(depth),
            Some(c) => Err(SyntaxError::Unexpected(format!("unexpected `{c}`"))),
        }
    }

    fn list(&mut self, depth: usize) -> Result<Node, SyntaxError> {
        if depth > MAX_DEPTH {
            return Err(SyntaxError::TooDeep);
        }
        self.expect('[')?;
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(']') {
                self.pos += 1;
                return Ok(Node::List(items));
            }
            items.push(self.value(depth + 1)?);
            self.skip_ws();
            match self.bump() {
                Some(',') => {}
                Some(']') => return Ok(Node::List(items)),
                Some(c) => {
                    return Err(SyntaxError::Unexpected(format!(
                        "expected `,` or `]`, found `{c}`"
                    )))
                }
                None => return Err(SyntaxError::Eof),
            }
        }
    }

    fn call(&mut self, depth: usize) -> Result<Node, SyntaxError> {
        if depth > MAX_DEPTH {
            return Err(SyntaxError::TooDeep);
        }
        self.skip_ws();
        let name = self
            .ident()
            .ok_or_else(|| SyntaxError::Unexpected("expected a class name".into()))?;
        self.expect('(')?;
        let mut args = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(')') {
                self.pos += 1;
                return Ok(Node::Call { name, args });
            }
            args.push(self.arg(depth + 1)?);
            self.skip_ws();
            match self.bump() {
                Some(',') => {}
                Some(')') => return Ok(Node::Call { name, args }),
                Some(c) => {
                    return Err(SyntaxError::Unexpected(format!(
                        "expected `,` or `)`, found `{c}`"
                    )))
                }
                None => return Err(SyntaxError::Eof),
            }
        }
    }

    fn arg(&mut self, depth: usize) -> Result<(Option<String>, Node), SyntaxError> {
        self.skip_ws();
        let save = self.pos;
        if let Some(name) = self.ident() {
            self.skip_ws();
            if self.peek() == Some('=') {
                self.pos += 1;
                return Ok((Some(name), self.value(depth)?));
            }
            self.pos = save;
        }
        Ok((None, self.value(depth)?))
    }

    /// From the start of a list element, skips to the `,` or `]` that ends
    /// it, honouring strings and brackets. Returns false at end of input.
    fn recover(&mut self) -> bool {
        let mut depth = 0usize;
        while let Some(c) = self.peek() {
            match c {
                '"' | '\'' => {
                    if self.string().is_err() {
                        return false;
                    }
                    continue;
                }
                '[' | '(' => depth += 1,
                ')' => depth = depth.saturating_sub(1),
                ']' if depth == 0 => return true,
                ']' => depth -= 1,
                ',' if depth == 0 => return true,
                _ => {}
            }
            self.pos += c.len_utf8();
        }
        false
    }
}

fn find_marker(text: &str) -> Result<usize, ParseError> {
    let with_list = regex::Regex::new(r"\bresults\s*=\s*\[").expect("static regex");
    if let Some(m) = with_list.find(text) {
        return Ok(m.end() - 1);
    }
    let bare = regex::Regex::new(r"\bresults\s*=").expect("static regex");
    if bare.is_match(text) {
        Err(ParseError::ExpectedList)
    } else {
        Err(ParseError::MissingMarker)
    }
}

fn validate(node: &Node, ontology: &Ontology) -> Result<ExtractionInstance, DropReason> {
    let (name, args) = match node {
        Node::Call { name, args } => (name, args),
        _ => return Err(DropReason::NotACall),
    };
    let concept = ontology
        .concept(name)
        .ok_or_else(|| DropReason::UnknownClass(name.clone()))?;
    let attrs = &concept.attributes;
    let mut bound: Vec<Option<&Node>> = vec![None; attrs.len()];
    let mut positional = 0;
    for (kw, value) in args {
        let idx = match kw {
            None => {
                if positional >= attrs.len() {
                    return Err(DropReason::WrongArity {
                        concept: name.clone(),
                        expected: attrs.len(),
                        got: args.len(),
                    });
                }
                positional += 1;
                positional - 1
            }
            Some(k) => attrs.iter().position(|a| &a.name == k).ok_or_else(|| {
                DropReason::UnknownKeyword {
                    concept: name.clone(),
                    keyword: k.clone(),
                }
            })?,
        };
        if bound[idx].is_some() {
            return Err(DropReason::DuplicateArgument {
                concept: name.clone(),
                attribute: attrs[idx].name.clone(),
            });
        }
        bound[idx] = Some(value);
    }
    let mut inst = ExtractionInstance::new(name.clone());
    for (attr, value) in attrs.iter().zip(bound) {
        let mismatch = || DropReason::KindMismatch {
            concept: name.clone(),
            attribute: attr.name.clone(),
        };
        let slot = match (attr.kind, value) {
            (SlotKind::ListOfReferences, None) => SlotValue::List(Vec::new()),
            (_, None) => {
                return Err(DropReason::WrongArity {
                    concept: name.clone(),
                    expected: attrs.len(),
                    got: args.len(),
                })
            }
            (SlotKind::TextSpan, Some(Node::Str(s))) => SlotValue::Span(Span::new(s.clone())),
            (SlotKind::ConceptReference, Some(n @ Node::Call { .. })) => {
                SlotValue::Instance(Box::new(validate(n, ontology)?))
            }
            (SlotKind::ListOfReferences, Some(Node::List(items))) => SlotValue::List(
                items
                    .iter()
                    .map(|n| match n {
                        Node::Call { .. } => validate(n, ontology),
                        _ => Err(mismatch()),
                    })
                    .collect::<Result<_, _>>()?,
            ),
            _ => return Err(mismatch()),
        };
        inst.slots.insert(attr.name.clone(), slot);
    }
    Ok(inst)
}

/// Leftmost occurrence of `span_text` in `sentence` that overlaps none of
/// `used`, as a character interval. Empty spans never resolve.
pub fn resolve_offsets(span_text: &str, sentence: &str, used: &[Interval]) -> Option<Interval> {
    if span_text.is_empty() {
        return None;
    }
    let len = span_text.chars().count();
    let mut byte = 0;
    let mut chars_before = 0;
    while let Some(rel) = sentence[byte..].find(span_text) {
        chars_before += sentence[byte..byte + rel].chars().count();
        byte += rel;
        let cand = (chars_before, chars_before + len);
        if !used.iter().any(|&(a, b)| cand.0 < b && a < cand.1) {
            return Some(cand);
        }
        let step = sentence[byte..].chars().next().map_or(1, char::len_utf8);
        byte += step;
        chars_before += 1;
    }
    None
}

/// Anchors every span of the instances in `sentence`.
///
/// Direct text slots of top-level instances (entity mentions, triggers)
/// claim occurrences across the whole list. Spans nested inside an
/// instance claim occurrences only within that instance, so two relations
/// may share an argument mention.
pub fn anchor_instances(instances: &mut [ExtractionInstance], sentence: &str) -> Vec<String> {
    let mut unresolved = Vec::new();
    let mut global: Vec<Interval> = Vec::new();
    for inst in instances.iter_mut() {
        let mut local: Vec<Interval> = Vec::new();
        for value in inst.slots.values_mut() {
            match value {
                SlotValue::Span(span) => anchor(span, sentence, &mut global, &mut unresolved),
                SlotValue::Instance(i) => {
                    for span in i.spans_mut() {
                        anchor(span, sentence, &mut local, &mut unresolved);
                    }
                }
                SlotValue::List(items) => {
                    for span in items.iter_mut().flat_map(|i| i.spans_mut()) {
                        anchor(span, sentence, &mut local, &mut unresolved);
                    }
                }
            }
        }
    }
    unresolved
}

fn anchor(span: &mut Span, sentence: &str, used: &mut Vec<Interval>, unresolved: &mut Vec<String>) {
    match resolve_offsets(&span.text, sentence, used) {
        Some(iv) => {
            span.start = Some(iv.0);
            used.push(iv);
        }
        None => {
            span.start = None;
            unresolved.push(span.text.clone());
        }
    }
}

/// Parses a completion, validates each call against the ontology and anchors
/// spans in `sentence`.
pub fn parse_completion(text: &str, ontology: &Ontology, sentence: &str) -> ParseReport {
    let mut report = ParseReport::default();
    let open = match find_marker(text) {
        Ok(p) => p,
        Err(e) => {
            report.fatal = Some(e);
            return report;
        }
    };
    let mut cur = Cursor {
        src: text,
        pos: open + 1,
    };
    let mut parsed: Vec<(Node, String)> = Vec::new();

    let outcome = loop {
        cur.skip_ws();
        match cur.peek() {
            None => break Err(ParseError::Unbalanced),
            Some(']') => break Ok(()),
            _ => {}
        }
        let start = cur.pos;
        let item = cur.value(2).and_then(|node| {
            cur.skip_ws();
            match cur.peek() {
                Some(',') | Some(']') | None => Ok(node),
                Some(c) => Err(SyntaxError::Unexpected(format!(
                    "expected `,` or `]`, found `{c}`"
                ))),
            }
        });
        match item {
            Ok(node) => parsed.push((node, text[start..cur.pos].trim().to_string())),
            Err(SyntaxError::Eof) => break Err(ParseError::Unbalanced),
            Err(SyntaxError::TooDeep) => break Err(ParseError::TooDeep),
            Err(SyntaxError::Unexpected(msg)) => {
                cur.pos = start;
                if !cur.recover() {
                    break Err(ParseError::Unbalanced);
                }
                report.dropped.push(Dropped {
                    raw: text[start..cur.pos].trim().to_string(),
                    reason: DropReason::Syntax(msg),
                });
            }
        }
        if cur.peek() == Some(',') {
            cur.pos += 1;
        }
    };

    if let Err(fatal) = outcome {
        report
            .dropped
            .extend(parsed.into_iter().map(|(_, raw)| Dropped {
                raw,
                reason: DropReason::Truncated,
            }));
        report.fatal = Some(fatal);
        return report;
    }

    for (node, raw) in parsed {
        match validate(&node, ontology) {
            Ok(inst) => report.instances.push(inst),
            Err(reason) => report.dropped.push(Dropped { raw, reason }),
        }
    }
    report.unresolved = anchor_instances(&mut report.instances, sentence);
    report
}
