use std::collections::HashSet;

use super::RESOURCE_PAIRS;
use crate::frontend::{lex, LexToken, TokenKind};

fn is_ident(t: &LexToken) -> bool {
    t.kind == TokenKind::Identifier
}

fn has_seq(toks: &[LexToken], pat: &[&str]) -> bool {
    toks.windows(pat.len()).any(|w| w.iter().zip(pat).all(|(t, p)| t.text == *p))
}

/// Token-pattern detector for the planted families. Returns 1 when any rule
/// fires.
pub fn rule_matcher(code: &str) -> u8 {
    let toks = lex(code);
    u8::from(
        loop_bound(&toks) || unguarded_index(&toks) || unclamped_offset(&toks) || leak(&toks) || null_deref(&toks),
    )
}

/// `<=` inside a `for (...)` header.
fn loop_bound(toks: &[LexToken]) -> bool {
    let mut i = 0;
    while i + 1 < toks.len() {
        if toks[i].text == "for" && toks[i + 1].text == "(" {
            let mut depth = 0;
            for t in &toks[i + 1..] {
                match t.text.as_str() {
                    "(" => depth += 1,
                    ")" => {
                        depth -= 1;
                        if depth == 0 {
                            break;
                        }
                    }
                    "<=" => return true,
                    _ => {}
                }
            }
        }
        i += 1;
    }
    false
}

/// `a[x]` with `x` neither a loop variable nor compared with `<`/`>=`.
fn unguarded_index(toks: &[LexToken]) -> bool {
    let loop_vars: HashSet<&str> = toks
        .windows(4)
        .filter(|w| w[0].text == "for" && w[1].text == "(" && is_ident(&w[2]) && w[3].text == "=")
        .map(|w| w[2].text.as_str())
        .collect();
    toks.windows(4).any(|w| {
        is_ident(&w[0]) && w[1].text == "[" && is_ident(&w[2]) && w[3].text == "]" && {
            let x = w[2].text.as_str();
            !loop_vars.contains(x) && !has_seq(toks, &[x, "<"]) && !has_seq(toks, &[x, ">="])
        }
    })
}

/// `*p = base + off;` without a clamp.
fn unclamped_offset(toks: &[LexToken]) -> bool {
    toks.windows(7).any(|w| {
        w[0].text == "*"
            && is_ident(&w[1])
            && w[2].text == "="
            && is_ident(&w[3])
            && w[4].text == "+"
            && is_ident(&w[5])
            && w[6].text == ";"
    })
}

/// An acquired resource with fewer releases than returns.
fn leak(toks: &[LexToken]) -> bool {
    RESOURCE_PAIRS.iter().any(|(acq, rel)| {
        has_seq(toks, &[acq, "("]) && {
            let releases = toks.windows(2).filter(|w| w[0].text == *rel && w[1].text == "(").count();
            let returns = toks.iter().filter(|t| t.text == "return").count();
            releases < returns
        }
    })
}

/// A pointer initialised to `NULL` and dereferenced without a `!= NULL` test.
fn null_deref(toks: &[LexToken]) -> bool {
    toks.windows(3)
        .filter(|w| is_ident(&w[0]) && w[1].text == "=" && w[2].text == "NULL")
        .any(|w| {
            let p = w[0].text.as_str();
            let deref = has_seq(toks, &["*", p, ";"]) || has_seq(toks, &[p, "->"]) || has_seq(toks, &[p, "["]);
            deref && !has_seq(toks, &[p, "!=", "NULL"])
        })
}
