//! Lexical method-boundary scanner for brace-delimited (Java-family) sources.
//!
//! The scanner never builds an AST. It tracks comments, string/char/text-block
//! literals, parenthesis depth and brace depth, and classifies every `{` that
//! opens at parenthesis depth zero by looking at the declaration text that
//! precedes it. Only top-level members are reported: methods of local or
//! anonymous classes and lambda bodies stay part of the enclosing method.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub name: String,
    /// Declaration (annotations, modifiers, signature) on one line with
    /// comments removed and whitespace collapsed.
    pub signature_line: String,
    pub start_line: u32,
    /// Line holding the opening brace of the body.
    pub body_start_line: u32,
    pub end_line: u32,
    pub file: String,
}

impl MethodRecord {
    pub fn contains_line(&self, line: u32) -> bool {
        self.start_line <= line && line <= self.end_line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{file}: unbalanced braces (depth {depth} at end of file, {stray_closers} stray closers)")]
pub struct UnbalancedBraces {
    pub file: String,
    pub depth: u32,
    pub stray_closers: u32,
}

/// Result of a scan: the methods that closed, plus a brace diagnostic when the
/// file does not balance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodScan {
    pub methods: Vec<MethodRecord>,
    pub unbalanced: Option<UnbalancedBraces>,
}

impl MethodScan {
    /// Innermost reported method containing `line`.
    pub fn enclosing(&self, line: u32) -> Option<&MethodRecord> {
        self.methods.iter().filter(|m| m.contains_line(line)).min_by_key(|m| m.end_line - m.start_line)
    }
}

const NOT_METHOD_NAMES: &[&str] = &[
    "if",
    "for",
    "while",
    "switch",
    "catch",
    "synchronized",
    "try",
    "return",
    "new",
    "else",
    "do",
    "super",
    "this",
    "throw",
    "assert",
    "case",
    "yield",
    "finally",
];
const TYPE_KEYWORDS: &[&str] = &["class", "interface", "enum", "record"];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Lex {
    Code,
    LineComment,
    BlockComment,
    Str,
    TextBlock,
    Char,
}

/// Declaration text accumulated since the last statement or block boundary.
#[derive(Default)]
struct Header {
    /// Comments dropped, literals kept.
    display: String,
    /// Literal contents dropped, used for structural matching.
    shape: String,
    start_line: Option<u32>,
}

impl Header {
    fn push_code(&mut self, c: char, line: u32) {
        if self.start_line.is_none() && !c.is_whitespace() {
            self.start_line = Some(line);
        }
        self.display.push(c);
        self.shape.push(c);
    }

    fn push_literal(&mut self, c: char) {
        self.display.push(c);
    }

    fn push_gap(&mut self) {
        self.display.push(' ');
        self.shape.push(' ');
    }

    fn clear(&mut self) {
        self.display.clear();
        self.shape.clear();
        self.start_line = None;
    }
}

struct OpenMethod {
    depth: u32,
    name: String,
    signature_line: String,
    start_line: u32,
    body_start_line: u32,
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

fn has_word(text: &str, word: &str) -> bool {
    text.split(|c: char| !is_ident_char(c)).any(|w| w == word)
}

/// Class, interface, enum, record or annotation type declaration, but not an
/// anonymous class instantiation.
fn is_type_header(shape: &str) -> bool {
    let outer = outside_parens(shape);
    TYPE_KEYWORDS.iter().any(|k| has_word(&outer, k)) && !has_word(&outer, "new")
}

/// Returns the method name if `shape` is a method or constructor declaration
/// header: `... name(params) [throws A, B]`.
fn method_name(shape: &str) -> Option<String> {
    let h = shape.trim();
    let close = h.rfind(')')?;
    let tail = h[close + 1..].trim();
    if !tail.is_empty() {
        let rest = tail.strip_prefix("throws")?;
        if !rest.starts_with(char::is_whitespace)
            || !rest.chars().all(|c| is_ident_char(c) || c.is_whitespace() || ".,<>?[]".contains(c))
        {
            return None;
        }
    }

    let bytes: Vec<char> = h[..close].chars().collect();
    let mut depth = 1i32;
    let mut open = None;
    for (i, &c) in bytes.iter().enumerate().rev() {
        match c {
            ')' => depth += 1,
            '(' => {
                depth -= 1;
                if depth == 0 {
                    open = Some(i);
                    break;
                }
            }
            _ => {}
        }
    }
    let before: String = bytes[..open?].iter().collect();
    let before = before.trim_end();
    let name_start = before.char_indices().rev().take_while(|&(_, c)| is_ident_char(c)).last().map(|(i, _)| i)?;
    let name = &before[name_start..];
    if name.starts_with(|c: char| c.is_ascii_digit()) || NOT_METHOD_NAMES.contains(&name) {
        return None;
    }
    // annotation arguments may legitimately hold `=` or `Foo.class`
    let prefix = outside_parens(before[..name_start].trim_end());
    if prefix.ends_with('.')
        || prefix.ends_with("->")
        || prefix.contains('=')
        || prefix.rsplit(|c: char| !is_ident_char(c)).next().is_some_and(|w| w == "new")
        || TYPE_KEYWORDS.iter().any(|k| has_word(&prefix, k))
    {
        return None;
    }
    Some(name.to_string())
}

fn outside_parens(s: &str) -> String {
    let mut depth = 0u32;
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Scans `source` and reports every method/constructor with a brace body.
pub fn locate_methods(source: &str, file: &str) -> MethodScan {
    let chars: Vec<char> = source.chars().collect();
    let mut methods = Vec::new();
    let mut header = Header::default();
    let mut open: Option<OpenMethod> = None;
    let mut state = Lex::Code;
    let mut line = 1u32;
    let mut depth = 0u32;
    let mut paren = 0u32;
    let mut stray = 0u32;
    // One entry per open brace: whether it opened a type body.
    let mut blocks: Vec<bool> = Vec::new();

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match state {
            Lex::Code => match c {
                '/' if next == Some('/') => {
                    state = Lex::LineComment;
                    header.push_gap();
                    i += 1;
                }
                '/' if next == Some('*') => {
                    state = Lex::BlockComment;
                    header.push_gap();
                    i += 1;
                }
                '"' if next == Some('"') && chars.get(i + 2) == Some(&'"') => {
                    state = Lex::TextBlock;
                    for _ in 0..3 {
                        header.push_code('"', line);
                    }
                    i += 2;
                }
                '"' => {
                    state = Lex::Str;
                    header.push_code('"', line);
                }
                '\'' => {
                    state = Lex::Char;
                    header.push_code('\'', line);
                }
                '(' => {
                    paren += 1;
                    header.push_code(c, line);
                }
                ')' => {
                    paren = paren.saturating_sub(1);
                    header.push_code(c, line);
                }
                ';' if paren == 0 => header.clear(),
                '{' => {
                    let mut type_body = false;
                    if paren == 0 {
                        if open.is_none() {
                            type_body = is_type_header(&header.shape);
                        }
                        if open.is_none() && blocks.last() == Some(&true) {
                            if let Some(name) = method_name(&header.shape) {
                                open = Some(OpenMethod {
                                    depth,
                                    name,
                                    signature_line: normalize_ws(&header.display),
                                    start_line: header.start_line.unwrap_or(line),
                                    body_start_line: line,
                                });
                            }
                        }
                        header.clear();
                    } else {
                        header.push_code(c, line);
                    }
                    blocks.push(type_body);
                    depth += 1;
                }
                '}' => {
                    if depth == 0 {
                        stray += 1;
                    } else {
                        depth -= 1;
                        blocks.pop();
                        if open.as_ref().is_some_and(|m| m.depth == depth) {
                            let m = open.take().expect("checked above");
                            methods.push(MethodRecord {
                                name: m.name,
                                signature_line: m.signature_line,
                                start_line: m.start_line,
                                body_start_line: m.body_start_line,
                                end_line: line,
                                file: file.to_string(),
                            });
                        }
                    }
                    if paren == 0 {
                        header.clear();
                    } else {
                        header.push_code(c, line);
                    }
                }
                _ => header.push_code(c, line),
            },
            Lex::LineComment => {
                if c == '\n' {
                    state = Lex::Code;
                    header.push_gap();
                }
            }
            Lex::BlockComment => {
                if c == '*' && next == Some('/') {
                    state = Lex::Code;
                    i += 1;
                }
            }
            Lex::Str | Lex::Char => {
                let quote = if state == Lex::Str { '"' } else { '\'' };
                if c == '\\' {
                    header.push_literal(c);
                    if let Some(n) = next {
                        header.push_literal(n);
                        if n == '\n' {
                            line += 1;
                        }
                    }
                    i += 1;
                } else if c == quote {
                    state = Lex::Code;
                    header.push_code(c, line);
                } else if c == '\n' {
                    // unterminated literal; recover at end of line
                    state = Lex::Code;
                    header.push_gap();
                } else {
                    header.push_literal(c);
                }
            }
            Lex::TextBlock => {
                if c == '\\' {
                    i += 1;
                    if next == Some('\n') {
                        line += 1;
                    }
                } else if c == '"' && next == Some('"') && chars.get(i + 2) == Some(&'"') {
                    state = Lex::Code;
                    for _ in 0..3 {
                        header.push_code('"', line);
                    }
                    i += 2;
                } else {
                    header.push_literal(c);
                }
            }
        }
        if c == '\n' {
            line += 1;
        }
        i += 1;
    }

    let unbalanced =
        (depth != 0 || stray != 0).then(|| UnbalancedBraces { file: file.to_string(), depth, stray_closers: stray });
    MethodScan { methods, unbalanced }
}
