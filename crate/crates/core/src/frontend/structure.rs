use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::AstNode;
use super::FrontendError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StructureToken {
    Open(String),
    Close(String),
    Terminal(String),
}

/// Bracketed linearisation of a syntax tree (or a data-flow graph) in which
/// the terminal projection is the token stream.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureSequence {
    pub items: Vec<StructureToken>,
}

/// Depth-first flattening: `Open(kind)` before an inner node's children,
/// `Close(kind)` after them, `Terminal(text)` for each leaf.
pub fn flatten_ast(root: &AstNode) -> StructureSequence {
    enum Step<'a> {
        Enter(&'a AstNode),
        Exit(&'a str),
    }
    let mut items = Vec::new();
    let mut stack = vec![Step::Enter(root)];
    while let Some(step) = stack.pop() {
        match step {
            Step::Exit(kind) => items.push(StructureToken::Close(kind.to_string())),
            Step::Enter(n) => {
                if let Some(t) = &n.token {
                    items.push(StructureToken::Terminal(t.text.clone()));
                    continue;
                }
                items.push(StructureToken::Open(n.kind.clone()));
                stack.push(Step::Exit(&n.kind));
                stack.extend(n.children.iter().rev().map(Step::Enter));
            }
        }
    }
    StructureSequence { items }
}

impl StructureSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn terminals(&self) -> impl Iterator<Item = &str> {
        self.items.iter().filter_map(|t| match t {
            StructureToken::Terminal(s) => Some(s.as_str()),
            _ => None,
        })
    }

    /// True when markers nest like brackets with matching kinds.
    pub fn is_balanced(&self) -> bool {
        let mut stack: Vec<&str> = Vec::new();
        for item in &self.items {
            match item {
                StructureToken::Open(k) => stack.push(k),
                StructureToken::Close(k) => {
                    if stack.pop() != Some(k.as_str()) {
                        return false;
                    }
                }
                StructureToken::Terminal(_) => {}
            }
        }
        stack.is_empty()
    }

    /// One-line text form: items separated by single spaces, markers written
    /// as `⟨kind⟩` / `⟨/kind⟩`, terminals escaped with [`escape_terminal`].
    pub fn to_line(&self) -> String {
        self.items
            .iter()
            .map(|item| match item {
                StructureToken::Open(k) => format!("⟨{k}⟩"),
                StructureToken::Close(k) => format!("⟨/{k}⟩"),
                StructureToken::Terminal(t) => escape_terminal(t),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_line(line: &str) -> Result<Self, FrontendError> {
        let mut items = Vec::new();
        for word in line.split(' ').filter(|w| !w.is_empty()) {
            let marker = word
                .strip_prefix('⟨')
                .and_then(|w| w.strip_suffix('⟩'))
                .filter(|inner| !inner.is_empty());
            let item = match marker {
                Some(inner) => match inner.strip_prefix('/') {
                    Some(kind) if !kind.is_empty() => StructureToken::Close(kind.to_string()),
                    _ => StructureToken::Open(inner.to_string()),
                },
                None => StructureToken::Terminal(unescape_terminal(word)?),
            };
            items.push(item);
        }
        Ok(Self { items })
    }
}

impl fmt::Display for StructureSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

/// Escapes `\`, tab, newline, carriage return, space and `⟨` so a terminal is
/// a single space-free word that cannot be mistaken for a marker. The empty
/// string is written as `\e`.
pub fn escape_terminal(s: &str) -> String {
    if s.is_empty() {
        return "\\e".to_string();
    }
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            ' ' => out.push_str("\\s"),
            '⟨' => out.push_str("\\<"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_terminal(s: &str) -> Result<String, FrontendError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('s') => out.push(' '),
            Some('<') => out.push('⟨'),
            Some('e') => {}
            other => return Err(FrontendError::BadEscape(format!("\\{}", other.map(String::from).unwrap_or_default()))),
        }
    }
    Ok(out)
}
