//! Mini-C front end: lexer, total recursive-descent parser, bracketed
//! structure sequences and a reaching-definitions data-flow graph.

mod ast;
mod dfg;
mod import;
mod lexer;
mod parser;
mod structure;

use serde::{Deserialize, Serialize};

pub use ast::AstNode;
pub use dfg::{extract_dfg, DataFlowGraph, DfgNode, Role};
pub use import::{import_ast, import_ast_file};
pub use lexer::{is_keyword, is_type_keyword, lex, LexToken, TokenKind, KEYWORDS, TYPE_KEYWORDS};
pub use parser::{parse, MAX_DEPTH};
pub use structure::{escape_terminal, flatten_ast, unescape_terminal, StructureSequence, StructureToken};

use crate::corpusgen::CodeSample;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrontendError {
    #[error("invalid escape sequence {0:?} in structure line")]
    BadEscape(String),
    #[error("AST import failed: {0}")]
    Import(String),
    #[error("unknown structure mode {0:?} (expected ast or dfg)")]
    UnknownMode(String),
}

/// Which syntactic view feeds the structure teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureMode {
    #[default]
    Ast,
    Dfg,
}

impl StructureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ast => "ast",
            Self::Dfg => "dfg",
        }
    }
}

impl std::str::FromStr for StructureMode {
    type Err = FrontendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ast" => Ok(Self::Ast),
            "dfg" => Ok(Self::Dfg),
            other => Err(FrontendError::UnknownMode(other.to_string())),
        }
    }
}

impl std::fmt::Display for StructureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DFG_EDGE: &str = "dfg_edge";
pub const ENTRY_INDEX: &str = "entry";

pub fn structure_sequence_of(sample: &CodeSample, mode: StructureMode) -> StructureSequence {
    structure_sequence_from_ast(&parse(&lex(&sample.code)), mode)
}

/// Structure sequence for an already built tree (parsed or imported).
pub fn structure_sequence_from_ast(tree: &AstNode, mode: StructureMode) -> StructureSequence {
    match mode {
        StructureMode::Ast => flatten_ast(tree),
        StructureMode::Dfg => linearize_dfg(tree, &extract_dfg(tree)),
    }
}

/// Terminal stream followed by one `⟨dfg_edge⟩ name def use ⟨/dfg_edge⟩`
/// group per edge, where `def`/`use` are leaf indices and the synthetic
/// entry definition is written as `entry`.
pub fn linearize_dfg(tree: &AstNode, graph: &DataFlowGraph) -> StructureSequence {
    let mut items: Vec<StructureToken> =
        tree.leaves().into_iter().map(|t| StructureToken::Terminal(t.text.clone())).collect();
    for &(d, u) in &graph.edges {
        let (def, use_) = (&graph.nodes[d], &graph.nodes[u]);
        let def_index = def.leaf.map_or_else(|| ENTRY_INDEX.to_string(), |l| l.to_string());
        let use_index = use_.leaf.map(|l| l.to_string()).unwrap_or_default();
        items.push(StructureToken::Open(DFG_EDGE.into()));
        items.push(StructureToken::Terminal(use_.name.clone()));
        items.push(StructureToken::Terminal(def_index));
        items.push(StructureToken::Terminal(use_index));
        items.push(StructureToken::Close(DFG_EDGE.into()));
    }
    StructureSequence { items }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(code: &str) -> CodeSample {
        CodeSample {
            id: "t".into(),
            code: code.into(),
            label: 0,
        }
    }

    fn groups(seq: &StructureSequence) -> usize {
        seq.items.iter().filter(|i| matches!(i, StructureToken::Open(k) if k == DFG_EDGE)).count()
    }

    #[test]
    fn dfg_mode_empty_body_has_terminals_only() {
        let s = sample("void f(){}");
        let seq = structure_sequence_of(&s, StructureMode::Dfg);
        assert_eq!(groups(&seq), 0);
        let toks: Vec<_> = lex(&s.code).into_iter().map(|t| t.text).collect();
        assert_eq!(seq.terminals().collect::<Vec<_>>(), toks);
    }

    #[test]
    fn dfg_mode_single_edge() {
        let seq = structure_sequence_of(&sample("int f(){int x=1; return x;}"), StructureMode::Dfg);
        assert_eq!(groups(&seq), 1);
        let tail: Vec<_> = seq.items[seq.items.len() - 5..].to_vec();
        assert_eq!(
            tail,
            vec![
                StructureToken::Open(DFG_EDGE.into()),
                StructureToken::Terminal("x".into()),
                StructureToken::Terminal("6".into()),
                StructureToken::Terminal("11".into()),
                StructureToken::Close(DFG_EDGE.into()),
            ]
        );
        assert!(seq.is_balanced());
    }

    #[test]
    fn ast_mode_is_flatten_of_parse() {
        let s = sample("int f(int a){ if (a > 1) a = a - 1; return a; }");
        assert_eq!(structure_sequence_of(&s, StructureMode::Ast), flatten_ast(&parse(&lex(&s.code))));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("dfg".parse::<StructureMode>().unwrap(), StructureMode::Dfg);
        assert!("cfg".parse::<StructureMode>().is_err());
    }
}
