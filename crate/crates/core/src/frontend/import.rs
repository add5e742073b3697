//! Import of externally produced syntax trees.
//!
//! Each object is `{"id": str, "kind": str, "children": [...], "text": str?}`
//! where only the root needs an `id`. Objects with `text` and no children
//! become leaves. A file holds either a JSON array of roots or one root per
//! line.

use serde::Deserialize;

use super::ast::AstNode;
use super::lexer::{lex, LexToken, TokenKind};
use super::FrontendError;

#[derive(Debug, Deserialize)]
struct RawNode {
    #[serde(default)]
    id: Option<String>,
    kind: String,
    #[serde(default)]
    children: Vec<RawNode>,
    #[serde(default)]
    text: Option<String>,
}

/// Builds an [`AstNode`] tree, keeping the external node kinds.
fn convert(raw: RawNode) -> AstNode {
    // Iterative post-order so deeply nested imports cannot overflow the stack.
    enum Step {
        Enter(RawNode),
        Exit(String, usize),
    }
    let mut out: Vec<AstNode> = Vec::new();
    let mut stack = vec![Step::Enter(raw)];
    while let Some(step) = stack.pop() {
        match step {
            Step::Enter(n) if n.children.is_empty() && n.text.is_some() => {
                let text = n.text.unwrap_or_default();
                let kind = infer_kind(&text);
                out.push(AstNode {
                    kind: n.kind,
                    children: Vec::new(),
                    token: Some(LexToken::new(text, kind, 0, 0)),
                });
            }
            Step::Enter(n) => {
                let count = n.children.len();
                stack.push(Step::Exit(n.kind, count));
                stack.extend(n.children.into_iter().rev().map(Step::Enter));
            }
            Step::Exit(kind, count) => {
                let children = out.split_off(out.len() - count);
                out.push(AstNode::node(kind, children));
            }
        }
    }
    out.pop().expect("one root")
}

fn infer_kind(text: &str) -> TokenKind {
    let toks = lex(text);
    match toks.as_slice() {
        [t] if t.text == text => t.kind,
        _ => TokenKind::Operator,
    }
}

/// Parses one root object and returns `(id, tree)`.
pub fn import_ast(json: &str) -> Result<(String, AstNode), FrontendError> {
    let raw: RawNode = serde_json::from_str(json).map_err(|e| FrontendError::Import(e.to_string()))?;
    let id = raw.id.clone().ok_or_else(|| FrontendError::Import("root object has no \"id\"".into()))?;
    Ok((id, convert(raw)))
}

/// Parses a whole file: a JSON array of roots, or JSON lines.
pub fn import_ast_file(contents: &str) -> Result<Vec<(String, AstNode)>, FrontendError> {
    if contents.trim_start().starts_with('[') {
        let raws: Vec<RawNode> =
            serde_json::from_str(contents).map_err(|e| FrontendError::Import(e.to_string()))?;
        return raws
            .into_iter()
            .enumerate()
            .map(|(i, raw)| {
                let id = raw.id.clone().ok_or_else(|| FrontendError::Import(format!("entry {i} has no \"id\"")))?;
                Ok((id, convert(raw)))
            })
            .collect();
    }
    contents
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| import_ast(line).map_err(|e| FrontendError::Import(format!("line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::flatten_ast;

    #[test]
    fn imports_tree_sitter_style_json() {
        let json = r#"{"id":"s1","kind":"translation_unit","children":[
            {"kind":"return_statement","children":[
                {"kind":"return","text":"return"},
                {"kind":"number_literal","text":"0"},
                {"kind":";","text":";"}]}]}"#;
        let (id, tree) = import_ast(json).unwrap();
        assert_eq!(id, "s1");
        let seq = flatten_ast(&tree);
        assert!(seq.is_balanced());
        assert_eq!(seq.terminals().collect::<Vec<_>>(), vec!["return", "0", ";"]);
        assert_eq!(tree.children[0].children[1].kind, "number_literal");
        assert_eq!(tree.children[0].children[1].token.as_ref().unwrap().kind, TokenKind::Number);
    }

    #[test]
    fn array_and_lines_forms() {
        let one = r#"{"id":"a","kind":"identifier","text":"x"}"#;
        assert_eq!(import_ast_file(&format!("[{one},{one}]")).unwrap().len(), 2);
        assert_eq!(import_ast_file(&format!("{one}\n\n{one}\n")).unwrap().len(), 2);
        let err = import_ast_file(&format!("{one}\n{{\"kind\":\"x\"}}")).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
