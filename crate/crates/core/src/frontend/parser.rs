//! Total recursive-descent parser for a C subset.
//!
//! Anything the grammar cannot place is wrapped in an `error` node holding the
//! raw tokens, so every input token ends up as exactly one leaf and the leaf
//! order equals the token order.

use super::ast::AstNode;
use super::lexer::{is_type_keyword, LexToken, TokenKind};

/// Nesting limit for statements and expressions; deeper input becomes an
/// `error` node instead of exhausting the stack.
pub const MAX_DEPTH: usize = 200;

#[derive(Debug)]
struct Fail;

type PResult = Result<AstNode, Fail>;

pub fn parse(tokens: &[LexToken]) -> AstNode {
    let mut p = Parser {
        toks: tokens,
        pos: 0,
        depth: 0,
    };
    let mut items = Vec::new();
    while p.pos < tokens.len() {
        let start = p.pos;
        match p.external() {
            Ok(n) => items.push(n),
            Err(Fail) => {
                p.pos = start;
                items.push(p.recover(true));
            }
        }
    }
    AstNode::node("translation_unit", items)
}

const BASE_TYPES: &[&str] = &[
    "char", "int", "long", "short", "float", "double", "void", "_Bool", "bool", "signed", "unsigned",
    "struct", "union", "enum",
];

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="];

fn binary_precedence(op: &str) -> Option<u8> {
    Some(match op {
        "||" => 1,
        "&&" => 2,
        "|" => 3,
        "^" => 4,
        "&" => 5,
        "==" | "!=" => 6,
        "<" | ">" | "<=" | ">=" => 7,
        "<<" | ">>" => 8,
        "+" | "-" => 9,
        "*" | "/" | "%" => 10,
        _ => return None,
    })
}

struct Parser<'t> {
    toks: &'t [LexToken],
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn peek(&self, off: usize) -> Option<&LexToken> {
        self.toks.get(self.pos + off)
    }

    fn text(&self, off: usize) -> Option<&str> {
        self.peek(off).map(|t| t.text.as_str())
    }

    fn kind(&self, off: usize) -> Option<TokenKind> {
        self.peek(off).map(|t| t.kind)
    }

    fn at(&self, s: &str) -> bool {
        self.text(0) == Some(s)
    }

    fn at_ident(&self, off: usize) -> bool {
        self.kind(off) == Some(TokenKind::Identifier)
    }

    fn take(&mut self) -> PResult {
        let t = self.peek(0).ok_or(Fail)?.clone();
        self.pos += 1;
        Ok(AstNode::leaf(t))
    }

    fn expect(&mut self, s: &str) -> PResult {
        if self.at(s) {
            self.take()
        } else {
            Err(Fail)
        }
    }

    fn ident(&mut self) -> PResult {
        if self.at_ident(0) {
            self.take()
        } else {
            Err(Fail)
        }
    }

    fn guarded(&mut self, f: impl FnOnce(&mut Self) -> PResult) -> PResult {
        if self.depth >= MAX_DEPTH {
            return Err(Fail);
        }
        self.depth += 1;
        let r = f(self);
        self.depth -= 1;
        r
    }

    /// Skips to the end of the current statement or balanced block and wraps
    /// the skipped tokens in an `error` node. At top level a stray `}` is
    /// consumed too; inside a block it is left for the enclosing block.
    fn recover(&mut self, top_level: bool) -> AstNode {
        let start = self.pos;
        let (mut paren, mut brace) = (0i32, 0i32);
        while let Some(t) = self.peek(0) {
            let punct = t.kind == TokenKind::Punctuation;
            let s = t.text.clone();
            if punct && s == "}" && brace == 0 {
                if top_level && self.pos == start {
                    self.pos += 1;
                }
                break;
            }
            self.pos += 1;
            if !punct {
                continue;
            }
            match s.as_str() {
                "(" => paren += 1,
                ")" => paren = (paren - 1).max(0),
                "{" => brace += 1,
                "}" => {
                    brace -= 1;
                    if brace == 0 && paren == 0 {
                        break;
                    }
                }
                ";" if brace == 0 && paren == 0 => break,
                _ => {}
            }
        }
        if self.pos == start && self.pos < self.toks.len() {
            self.pos += 1;
        }
        let leaves = self.toks[start..self.pos].iter().cloned().map(AstNode::leaf).collect();
        AstNode::node("error", leaves)
    }

    fn is_decl_start(&self) -> bool {
        match self.peek(0) {
            Some(t) if t.kind == TokenKind::Keyword => is_type_keyword(&t.text) || t.text == "typedef",
            Some(t) if t.kind == TokenKind::Identifier => {
                if self.at_ident(1) {
                    return true;
                }
                let mut i = 1;
                while self.text(i) == Some("*") {
                    i += 1;
                }
                i > 1 && self.at_ident(i) && matches!(self.text(i + 1), Some("=" | ";" | "," | "[" | ")"))
            }
            _ => false,
        }
    }

    /// True when the token at `off` starts a type inside parentheses (casts,
    /// `sizeof(type)`).
    fn is_type_name_at(&self, off: usize) -> bool {
        match self.peek(off) {
            Some(t) if t.kind == TokenKind::Keyword => is_type_keyword(&t.text),
            Some(t) if t.kind == TokenKind::Identifier => {
                let mut i = off + 1;
                if self.text(i) == Some("*") {
                    while self.text(i) == Some("*") {
                        i += 1;
                    }
                    return self.text(i) == Some(")");
                }
                self.text(i) == Some(")")
                    && matches!(
                        self.kind(i + 1),
                        Some(TokenKind::Identifier | TokenKind::Number | TokenKind::StringLiteral | TokenKind::CharLiteral)
                    )
            }
            _ => false,
        }
    }

    fn external(&mut self) -> PResult {
        if self.is_decl_start() {
            let ty = self.type_spec()?;
            let save = self.pos;
            if let Ok(decl) = self.declarator(false, false) {
                if self.at("(") {
                    let params = self.parameter_list()?;
                    if self.at("{") {
                        let body = self.compound()?;
                        return Ok(AstNode::node("function_definition", vec![ty, decl, params, body]));
                    }
                    let semi = self.expect(";")?;
                    let fdecl = AstNode::node("function_declarator", vec![decl, params]);
                    return Ok(AstNode::node("declaration", vec![ty, fdecl, semi]));
                }
            }
            self.pos = save;
            return self.declaration_rest(ty);
        }
        if self.at_ident(0) && self.text(1) == Some("(") {
            // Function without a return type (macros, K&R leftovers).
            let save = self.pos;
            let name = self.take()?;
            if let Ok(params) = self.parameter_list() {
                if self.at("{") {
                    let body = self.compound()?;
                    return Ok(AstNode::node("function_definition", vec![name, params, body]));
                }
            }
            self.pos = save;
        }
        self.statement()
    }

    fn type_spec(&mut self) -> PResult {
        let mut parts = Vec::new();
        let mut has_base = false;
        loop {
            let Some(t) = self.peek(0) else { break };
            if t.kind != TokenKind::Keyword || !(is_type_keyword(&t.text) || t.text == "typedef") {
                break;
            }
            let tagged = matches!(t.text.as_str(), "struct" | "union" | "enum");
            has_base |= BASE_TYPES.contains(&t.text.as_str());
            parts.push(self.take()?);
            if tagged {
                if self.at_ident(0) {
                    parts.push(self.take()?);
                }
                if self.at("{") {
                    parts.push(self.brace_group("field_declaration_list")?);
                }
            }
        }
        if !has_base && self.at_ident(0) && (self.at_ident(1) || self.text(1) == Some("*") || self.text(1) == Some(")")) {
            parts.push(self.take()?);
        }
        if parts.is_empty() {
            return Err(Fail);
        }
        Ok(AstNode::node("type", parts))
    }

    /// Balanced `{ ... }` kept as raw leaves.
    fn brace_group(&mut self, kind: &str) -> PResult {
        let start = self.pos;
        let mut depth = 0;
        loop {
            let t = self.peek(0).ok_or(Fail)?;
            let s = t.text.clone();
            self.pos += 1;
            match s.as_str() {
                "{" => depth += 1,
                "}" => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                _ => {}
            }
        }
        let leaves = self.toks[start..self.pos].iter().cloned().map(AstNode::leaf).collect();
        Ok(AstNode::node(kind, leaves))
    }

    /// Pointer stars, a name (optional when `abstract_ok`) and, when
    /// `suffixes`, array and function suffixes.
    fn declarator(&mut self, suffixes: bool, abstract_ok: bool) -> PResult {
        let mut stars = Vec::new();
        while self.at("*") || (!stars.is_empty() && matches!(self.text(0), Some("const" | "volatile" | "restrict"))) {
            stars.push(self.take()?);
        }
        let mut inner = if self.at_ident(0) {
            Some(self.take()?)
        } else if self.at("(") && self.text(1) == Some("*") {
            let open = self.take()?;
            let d = self.guarded(|p| p.declarator(true, abstract_ok))?;
            let close = self.expect(")")?;
            Some(AstNode::node("parenthesized_declarator", vec![open, d, close]))
        } else if abstract_ok {
            None
        } else {
            return Err(Fail);
        };
        if suffixes {
            loop {
                if self.at("[") {
                    let mut ch: Vec<AstNode> = inner.take().into_iter().collect();
                    ch.push(self.take()?);
                    if !self.at("]") {
                        ch.push(self.expression()?);
                    }
                    ch.push(self.expect("]")?);
                    inner = Some(AstNode::node("array_declarator", ch));
                } else if self.at("(") && inner.is_some() {
                    let params = self.parameter_list()?;
                    let ch = vec![inner.take().expect("checked"), params];
                    inner = Some(AstNode::node("function_declarator", ch));
                } else {
                    break;
                }
            }
        }
        match (stars.is_empty(), inner) {
            (true, Some(n)) => Ok(n),
            (true, None) => Ok(AstNode::node("abstract_declarator", vec![])),
            (false, inner) => {
                stars.extend(inner);
                Ok(AstNode::node("pointer_declarator", stars))
            }
        }
    }

    fn parameter_list(&mut self) -> PResult {
        let mut ch = vec![self.expect("(")?];
        if !self.at(")") {
            loop {
                if self.at("...") {
                    ch.push(self.take()?);
                } else {
                    let ty = self.type_spec()?;
                    let mut pd = vec![ty];
                    if !self.at(",") && !self.at(")") {
                        pd.push(self.declarator(true, true)?);
                    }
                    ch.push(AstNode::node("parameter_declaration", pd));
                }
                if self.at(",") {
                    ch.push(self.take()?);
                } else {
                    break;
                }
            }
        }
        ch.push(self.expect(")")?);
        Ok(AstNode::node("parameter_list", ch))
    }

    fn declaration_rest(&mut self, ty: AstNode) -> PResult {
        let mut ch = vec![ty];
        loop {
            let d = self.declarator(true, false)?;
            if self.at("=") {
                let eq = self.take()?;
                let init = self.initializer()?;
                ch.push(AstNode::node("init_declarator", vec![d, eq, init]));
            } else {
                ch.push(d);
            }
            if self.at(",") {
                ch.push(self.take()?);
            } else {
                break;
            }
        }
        ch.push(self.expect(";")?);
        Ok(AstNode::node("declaration", ch))
    }

    fn initializer(&mut self) -> PResult {
        if !self.at("{") {
            return self.assignment();
        }
        self.guarded(|p| {
            let mut ch = vec![p.take()?];
            while !p.at("}") {
                if p.at(".") {
                    let dot = p.take()?;
                    let field = p.ident()?;
                    let eq = p.expect("=")?;
                    let value = p.initializer()?;
                    ch.push(AstNode::node("initializer_pair", vec![dot, field, eq, value]));
                } else {
                    ch.push(p.initializer()?);
                }
                if p.at(",") {
                    ch.push(p.take()?);
                } else {
                    break;
                }
            }
            ch.push(p.expect("}")?);
            Ok(AstNode::node("initializer_list", ch))
        })
    }

    fn compound(&mut self) -> PResult {
        self.guarded(|p| {
            let mut ch = vec![p.expect("{")?];
            while p.pos < p.toks.len() {
                if p.at("}") {
                    ch.push(p.take()?);
                    break;
                }
                let start = p.pos;
                match p.statement() {
                    Ok(n) => ch.push(n),
                    Err(Fail) => {
                        p.pos = start;
                        ch.push(p.recover(false));
                    }
                }
            }
            Ok(AstNode::node("compound_statement", ch))
        })
    }

    fn paren_expr(&mut self) -> PResult {
        let open = self.expect("(")?;
        let e = self.expression()?;
        let close = self.expect(")")?;
        Ok(AstNode::node("parenthesized_expression", vec![open, e, close]))
    }

    fn statement(&mut self) -> PResult {
        self.guarded(Self::statement_inner)
    }

    fn statement_inner(&mut self) -> PResult {
        let keyword = self.kind(0) == Some(TokenKind::Keyword);
        let word = self.text(0).ok_or(Fail)?.to_string();
        if word == "{" {
            return self.compound();
        }
        if keyword {
            match word.as_str() {
                "if" => {
                    let mut ch = vec![self.take()?, self.paren_expr()?, self.statement()?];
                    if self.at("else") {
                        let e = self.take()?;
                        let s = self.statement()?;
                        ch.push(AstNode::node("else_clause", vec![e, s]));
                    }
                    return Ok(AstNode::node("if_statement", ch));
                }
                "while" => {
                    let ch = vec![self.take()?, self.paren_expr()?, self.statement()?];
                    return Ok(AstNode::node("while_statement", ch));
                }
                "do" => {
                    let ch = vec![
                        self.take()?,
                        self.statement()?,
                        self.expect("while")?,
                        self.paren_expr()?,
                        self.expect(";")?,
                    ];
                    return Ok(AstNode::node("do_statement", ch));
                }
                "for" => return self.for_statement(),
                "return" => {
                    let mut ch = vec![self.take()?];
                    if !self.at(";") {
                        ch.push(self.expression()?);
                    }
                    ch.push(self.expect(";")?);
                    return Ok(AstNode::node("return_statement", ch));
                }
                "break" | "continue" => {
                    let ch = vec![self.take()?, self.expect(";")?];
                    return Ok(AstNode::node(format!("{word}_statement"), ch));
                }
                "goto" => {
                    let ch = vec![self.take()?, self.ident()?, self.expect(";")?];
                    return Ok(AstNode::node("goto_statement", ch));
                }
                "switch" => {
                    let ch = vec![self.take()?, self.paren_expr()?, self.statement()?];
                    return Ok(AstNode::node("switch_statement", ch));
                }
                "case" => {
                    let ch = vec![self.take()?, self.conditional()?, self.expect(":")?];
                    return Ok(AstNode::node("case_statement", ch));
                }
                "default" => {
                    let ch = vec![self.take()?, self.expect(":")?];
                    return Ok(AstNode::node("case_statement", ch));
                }
                _ => {}
            }
        }
        if word == ";" {
            return Ok(AstNode::node("expression_statement", vec![self.take()?]));
        }
        if self.at_ident(0) && self.text(1) == Some(":") {
            let ch = vec![self.take()?, self.take()?];
            return Ok(AstNode::node("labeled_statement", ch));
        }
        if self.is_decl_start() {
            let ty = self.type_spec()?;
            return self.declaration_rest(ty);
        }
        let e = self.expression()?;
        let semi = self.expect(";")?;
        Ok(AstNode::node("expression_statement", vec![e, semi]))
    }

    fn for_statement(&mut self) -> PResult {
        let mut ch = vec![self.take()?, self.expect("(")?];
        if self.at(";") {
            ch.push(AstNode::node("expression_statement", vec![self.take()?]));
        } else if self.is_decl_start() {
            let ty = self.type_spec()?;
            ch.push(self.declaration_rest(ty)?);
        } else {
            let e = self.expression()?;
            let semi = self.expect(";")?;
            ch.push(AstNode::node("expression_statement", vec![e, semi]));
        }
        if !self.at(";") {
            ch.push(self.expression()?);
        }
        ch.push(self.expect(";")?);
        if !self.at(")") {
            ch.push(self.expression()?);
        }
        ch.push(self.expect(")")?);
        ch.push(self.statement()?);
        Ok(AstNode::node("for_statement", ch))
    }

    fn expression(&mut self) -> PResult {
        let first = self.assignment()?;
        if !self.at(",") {
            return Ok(first);
        }
        let mut ch = vec![first];
        while self.at(",") {
            ch.push(self.take()?);
            ch.push(self.assignment()?);
        }
        Ok(AstNode::node("comma_expression", ch))
    }

    fn assignment(&mut self) -> PResult {
        self.guarded(|p| {
            let lhs = p.conditional()?;
            match p.text(0) {
                Some(op) if ASSIGN_OPS.contains(&op) && p.kind(0) == Some(TokenKind::Operator) => {
                    let op = p.take()?;
                    let rhs = p.assignment()?;
                    Ok(AstNode::node("assignment", vec![lhs, op, rhs]))
                }
                _ => Ok(lhs),
            }
        })
    }

    fn conditional(&mut self) -> PResult {
        let cond = self.binary(1)?;
        if !self.at("?") {
            return Ok(cond);
        }
        self.guarded(|p| {
            let q = p.take()?;
            let then = p.expression()?;
            let colon = p.expect(":")?;
            let other = p.conditional()?;
            Ok(AstNode::node("conditional_expression", vec![cond, q, then, colon, other]))
        })
    }

    fn binary(&mut self, min_prec: u8) -> PResult {
        let mut left = self.unary()?;
        loop {
            let Some(prec) = self
                .peek(0)
                .filter(|t| t.kind == TokenKind::Operator)
                .and_then(|t| binary_precedence(&t.text))
            else {
                break;
            };
            if prec < min_prec {
                break;
            }
            let op = self.take()?;
            let right = self.guarded(|p| p.binary(prec + 1))?;
            left = AstNode::node("binary_expression", vec![left, op, right]);
        }
        Ok(left)
    }

    fn unary(&mut self) -> PResult {
        self.guarded(Self::unary_inner)
    }

    fn unary_inner(&mut self) -> PResult {
        let Some(t) = self.peek(0) else { return Err(Fail) };
        match (t.kind, t.text.as_str()) {
            (TokenKind::Operator, "++" | "--") => {
                let op = self.take()?;
                let e = self.unary()?;
                Ok(AstNode::node("update_expression", vec![op, e]))
            }
            (TokenKind::Operator, "!" | "~" | "-" | "+" | "*" | "&") => {
                let op = self.take()?;
                let e = self.unary()?;
                Ok(AstNode::node("unary_expression", vec![op, e]))
            }
            (TokenKind::Keyword, "sizeof") => {
                let kw = self.take()?;
                if self.at("(") && self.is_type_name_at(1) {
                    let open = self.take()?;
                    let ty = self.type_descriptor()?;
                    let close = self.expect(")")?;
                    Ok(AstNode::node("sizeof_expression", vec![kw, open, ty, close]))
                } else {
                    let e = self.unary()?;
                    Ok(AstNode::node("sizeof_expression", vec![kw, e]))
                }
            }
            (TokenKind::Punctuation, "(") if self.is_type_name_at(1) => {
                let open = self.take()?;
                let ty = self.type_descriptor()?;
                let close = self.expect(")")?;
                let e = self.unary()?;
                Ok(AstNode::node("cast_expression", vec![open, ty, close, e]))
            }
            _ => self.postfix(),
        }
    }

    fn type_descriptor(&mut self) -> PResult {
        let mut ch = vec![self.type_spec()?];
        if !self.at(")") {
            ch.push(self.declarator(true, true)?);
        }
        Ok(AstNode::node("type_descriptor", ch))
    }

    fn postfix(&mut self) -> PResult {
        let mut e = self.primary()?;
        loop {
            match self.text(0) {
                Some("[") if self.kind(0) == Some(TokenKind::Punctuation) => {
                    let open = self.take()?;
                    let idx = self.expression()?;
                    let close = self.expect("]")?;
                    e = AstNode::node("subscript_expression", vec![e, open, idx, close]);
                }
                Some("(") if self.kind(0) == Some(TokenKind::Punctuation) => {
                    let mut args = vec![self.take()?];
                    if !self.at(")") {
                        loop {
                            args.push(self.assignment()?);
                            if self.at(",") {
                                args.push(self.take()?);
                            } else {
                                break;
                            }
                        }
                    }
                    args.push(self.expect(")")?);
                    e = AstNode::node("call_expression", vec![e, AstNode::node("argument_list", args)]);
                }
                Some("." | "->") if self.kind(0) == Some(TokenKind::Operator) => {
                    let op = self.take()?;
                    let field = self.ident()?;
                    e = AstNode::node("field_expression", vec![e, op, field]);
                }
                Some("++" | "--") if self.kind(0) == Some(TokenKind::Operator) => {
                    let op = self.take()?;
                    e = AstNode::node("update_expression", vec![e, op]);
                }
                _ => break,
            }
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult {
        match self.kind(0).ok_or(Fail)? {
            TokenKind::Identifier | TokenKind::Number | TokenKind::CharLiteral => self.take(),
            TokenKind::StringLiteral => {
                let first = self.take()?;
                if self.kind(0) != Some(TokenKind::StringLiteral) {
                    return Ok(first);
                }
                let mut ch = vec![first];
                while self.kind(0) == Some(TokenKind::StringLiteral) {
                    ch.push(self.take()?);
                }
                Ok(AstNode::node("concatenated_string", ch))
            }
            TokenKind::Punctuation if self.at("(") => self.guarded(Self::paren_expr),
            _ => Err(Fail),
        }
    }
}
