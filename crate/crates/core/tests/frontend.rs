use proptest::prelude::*;
use vulndistill::frontend::{
    escape_terminal, extract_dfg, flatten_ast, lex, parse, structure_sequence_from_ast, unescape_terminal, Role,
    StructureMode, StructureSequence, StructureToken,
};

const VARS: [&str; 4] = ["a", "b", "x", "y"];

/// Straight-line function body: params a, b; locals x, y declared on first
/// assignment.
fn straight_line() -> impl Strategy<Value = String> {
    let operand = prop_oneof![(0..4usize).prop_map(|i| VARS[i].to_string()), (0..100u32).prop_map(|n| n.to_string())];
    let expr = (operand.clone(), prop::sample::select(vec!["+", "-", "*", "^"]), operand)
        .prop_map(|(l, op, r)| format!("{l} {op} {r}"));
    prop::collection::vec((0..4usize, expr), 0..8).prop_map(|stmts| {
        let mut declared = [true, true, false, false];
        let mut body = String::new();
        for (v, e) in stmts {
            let ty = if declared[v] { "" } else { "int " };
            declared[v] = true;
            body.push_str(&format!("  {ty}{} = {e};\n", VARS[v]));
        }
        format!("int f(int a, int b) {{\n{body}  return x + b;\n}}\n")
    })
}

proptest! {
    #[test]
    fn parse_is_total_and_lossless(src in "[ -~\n\t]{0,120}") {
        let tokens = lex(&src);
        let tree = parse(&tokens);
        let seq = flatten_ast(&tree);
        prop_assert!(seq.is_balanced());
        let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        prop_assert_eq!(seq.terminals().collect::<Vec<_>>(), texts);
        prop_assert_eq!(StructureSequence::from_line(&seq.to_line()).unwrap(), seq);
        let dfg = structure_sequence_from_ast(&tree, StructureMode::Dfg);
        prop_assert!(dfg.is_balanced());
    }

    #[test]
    fn terminal_escape_round_trip(s in any::<String>()) {
        let e = escape_terminal(&s);
        prop_assert!(!e.contains(' ') && !e.contains('\n') && !e.is_empty());
        prop_assert_eq!(unescape_terminal(&e).unwrap(), s.clone());
        let seq = StructureSequence { items: vec![StructureToken::Open("k".into()), StructureToken::Terminal(s), StructureToken::Close("k".into())] };
        prop_assert_eq!(StructureSequence::from_line(&seq.to_line()).unwrap(), seq);
    }

    #[test]
    fn straight_line_uses_read_latest_def(src in straight_line()) {
        let tree = parse(&lex(&src));
        let leaves = tree.leaves();
        let mut stmt_of = Vec::new();
        let mut stmt = 0;
        for t in &leaves {
            stmt_of.push(stmt);
            if matches!(t.text.as_str(), ";" | "{" | "}") {
                stmt += 1;
            }
        }
        let g = extract_dfg(&tree);
        for (u, node) in g.nodes.iter().enumerate().filter(|(_, n)| n.role == Role::Use) {
            let leaf = node.leaf.unwrap();
            let sources: Vec<usize> = g.edges.iter().filter(|e| e.1 == u).map(|e| e.0).collect();
            prop_assert_eq!(sources.len(), 1, "use of {} at {}", node.name, leaf);
            let expected = g
                .nodes
                .iter()
                .filter(|d| d.role == Role::Def && d.name == node.name)
                .filter_map(|d| d.leaf)
                .filter(|&d| stmt_of[d] < stmt_of[leaf])
                .max();
            prop_assert_eq!(g.nodes[sources[0]].leaf, expected, "use of {} at {}", node.name, leaf);
        }
    }
}
