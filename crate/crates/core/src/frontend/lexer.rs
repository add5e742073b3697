use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    StringLiteral,
    CharLiteral,
    Operator,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexToken {
    pub text: String,
    pub kind: TokenKind,
    /// 1-based.
    pub line: u32,
    /// 1-based, in characters.
    pub col: u32,
}

impl LexToken {
    pub fn new(text: impl Into<String>, kind: TokenKind, line: u32, col: u32) -> Self {
        Self {
            text: text.into(),
            kind,
            line,
            col,
        }
    }

    pub fn is(&self, text: &str) -> bool {
        self.text == text
    }
}

pub const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum",
    "extern", "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict",
    "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef", "union",
    "unsigned", "void", "volatile", "while", "_Bool", "bool",
];

/// Keywords that may begin or continue a type specifier.
pub const TYPE_KEYWORDS: &[&str] = &[
    "auto", "char", "const", "double", "enum", "extern", "float", "inline", "int", "long",
    "register", "restrict", "short", "signed", "static", "struct", "union", "unsigned", "void",
    "volatile", "_Bool", "bool",
];

const OPERATORS: &[&str] = &[
    "...", "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=",
    "-=", "*=", "/=", "%=", "&=", "|=", "^=", "##", "+", "-", "*", "/", "%", "=", "<", ">", "!",
    "~", "&", "|", "^", "?", ":", ".", "#",
];

const PUNCTUATION: &[char] = &['(', ')', '{', '}', '[', ']', ',', ';'];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

pub fn is_type_keyword(s: &str) -> bool {
    TYPE_KEYWORDS.contains(&s)
}

/// Splits C-like source into tokens. Comments and whitespace are dropped and
/// any character outside the grammar becomes a one-character operator token,
/// so this never fails.
pub fn lex(source: &str) -> Vec<LexToken> {
    Lexer::new(source).run()
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    col: u32,
    out: Vec<LexToken>,
}

impl Lexer {
    fn new(source: &str) -> Self {
        Self {
            chars: source.chars().collect(),
            pos: 0,
            line: 1,
            col: 1,
            out: Vec::new(),
        }
    }

    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars().enumerate().all(|(i, c)| self.peek(i) == Some(c))
    }

    fn run(mut self) -> Vec<LexToken> {
        while let Some(c) = self.peek(0) {
            if c.is_whitespace() {
                self.bump();
            } else if self.starts_with("//") {
                while let Some(c) = self.peek(0) {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if self.starts_with("/*") {
                self.bump();
                self.bump();
                while self.peek(0).is_some() && !self.starts_with("*/") {
                    self.bump();
                }
                self.bump();
                self.bump();
            } else {
                self.token(c);
            }
        }
        self.out
    }

    fn token(&mut self, c: char) {
        let (line, col, start) = (self.line, self.col, self.pos);
        let kind = if c.is_ascii_alphabetic() || c == '_' {
            while matches!(self.peek(0), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                self.bump();
            }
            let text: String = self.chars[start..self.pos].iter().collect();
            if is_keyword(&text) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else if c.is_ascii_digit() || (c == '.' && matches!(self.peek(1), Some(d) if d.is_ascii_digit())) {
            self.number();
            TokenKind::Number
        } else if c == '"' || c == '\'' {
            self.quoted(c);
            if c == '"' {
                TokenKind::StringLiteral
            } else {
                TokenKind::CharLiteral
            }
        } else if PUNCTUATION.contains(&c) {
            self.bump();
            TokenKind::Punctuation
        } else if let Some(op) = OPERATORS.iter().find(|op| self.starts_with(op)) {
            for _ in 0..op.chars().count() {
                self.bump();
            }
            TokenKind::Operator
        } else {
            self.bump();
            TokenKind::Operator
        };
        let text: String = self.chars[start..self.pos].iter().collect();
        self.out.push(LexToken::new(text, kind, line, col));
    }

    fn number(&mut self) {
        let hex = self.peek(0) == Some('0') && matches!(self.peek(1), Some('x' | 'X'));
        while let Some(c) = self.peek(0) {
            if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                self.bump();
                let exponent = if hex { matches!(c, 'p' | 'P') } else { matches!(c, 'e' | 'E') };
                if exponent && matches!(self.peek(0), Some('+' | '-')) {
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    fn quoted(&mut self, quote: char) {
        self.bump();
        while let Some(c) = self.peek(0) {
            match c {
                '\n' => return,
                '\\' => {
                    self.bump();
                    if self.peek(0).is_some_and(|c| c != '\n') {
                        self.bump();
                    }
                }
                _ => {
                    self.bump();
                    if c == quote {
                        return;
                    }
                }
            }
        }
    }
}
