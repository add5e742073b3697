use serde::{Deserialize, Serialize};

use super::lexer::{is_type_keyword, LexToken, TokenKind};

/// Syntax tree node. Leaves carry exactly one token; inner nodes carry none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub kind: String,
    pub children: Vec<AstNode>,
    pub token: Option<LexToken>,
}

impl AstNode {
    pub fn node(kind: impl Into<String>, children: Vec<AstNode>) -> Self {
        Self {
            kind: kind.into(),
            children,
            token: None,
        }
    }

    pub fn leaf(token: LexToken) -> Self {
        let kind = match token.kind {
            TokenKind::Identifier => "identifier",
            TokenKind::Number | TokenKind::StringLiteral | TokenKind::CharLiteral => "literal",
            TokenKind::Keyword if is_type_keyword(&token.text) => "primitive_type",
            TokenKind::Keyword => "keyword",
            TokenKind::Operator => "operator",
            TokenKind::Punctuation => "punctuation",
        };
        Self {
            kind: kind.to_string(),
            children: Vec::new(),
            token: Some(token),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.token.is_some()
    }

    pub fn text(&self) -> Option<&str> {
        self.token.as_ref().map(|t| t.text.as_str())
    }

    /// Leaf tokens in left-to-right order.
    pub fn leaves(&self) -> Vec<&LexToken> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            if let Some(t) = &n.token {
                out.push(t);
            }
            stack.extend(n.children.iter().rev());
        }
        out
    }

    /// Pre-order iterator over every node.
    pub fn walk(&self) -> impl Iterator<Item = &AstNode> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let n = stack.pop()?;
            stack.extend(n.children.iter().rev());
            Some(n)
        })
    }

    pub fn count_kind(&self, kind: &str) -> usize {
        self.walk().filter(|n| n.kind == kind).count()
    }

    /// Compact s-expression rendering, leaves shown by their text.
    pub fn to_sexpr(&self) -> String {
        if let Some(t) = self.text() {
            return t.to_string();
        }
        let inner: Vec<String> = self.children.iter().map(AstNode::to_sexpr).collect();
        if inner.is_empty() {
            format!("({})", self.kind)
        } else {
            format!("({} {})", self.kind, inner.join(" "))
        }
    }
}
