//! Reaching-definitions data-flow graph over the syntax tree.
//!
//! Sequencing is flow-sensitive, branches join by union, and each loop gets
//! one extra pass so definitions in the body reach uses at the loop head.
//! Parameters are definitions at function entry. A use no definition reaches
//! is linked from a per-variable synthetic entry node (`leaf == None`).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ast::AstNode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Def,
    Use,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfgNode {
    pub name: String,
    pub role: Role,
    /// Leaf index in the terminal stream; `None` marks the synthetic entry
    /// definition.
    pub leaf: Option<usize>,
}

impl DfgNode {
    pub fn is_entry(&self) -> bool {
        self.leaf.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFlowGraph {
    pub nodes: Vec<DfgNode>,
    /// `(def node, use node)` pairs, sorted by the use's leaf index, then the
    /// def's (entry first).
    pub edges: Vec<(usize, usize)>,
}

impl DataFlowGraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Definition nodes feeding the use node `target`.
    pub fn sources_of(&self, target: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == target).map(|e| e.0).collect()
    }

    pub fn uses(&self) -> impl Iterator<Item = (usize, &DfgNode)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.role == Role::Use)
    }

    pub fn use_at(&self, leaf: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.role == Role::Use && n.leaf == Some(leaf))
    }
}

type State = BTreeMap<String, BTreeSet<usize>>;

fn union(mut a: State, b: State) -> State {
    for (k, v) in b {
        a.entry(k).or_default().extend(v);
    }
    a
}

pub fn extract_dfg(root: &AstNode) -> DataFlowGraph {
    let mut leaf_of = HashMap::new();
    let mut stack = vec![root];
    let mut next = 0;
    while let Some(n) = stack.pop() {
        if n.is_leaf() {
            leaf_of.insert(n as *const AstNode, next);
            next += 1;
        }
        stack.extend(n.children.iter().rev());
    }
    let mut b = Builder {
        leaf_of,
        nodes: Vec::new(),
        by_key: HashMap::new(),
        edges: BTreeSet::new(),
    };
    b.unit(root);
    b.finish()
}

struct Builder {
    leaf_of: HashMap<*const AstNode, usize>,
    nodes: Vec<DfgNode>,
    by_key: HashMap<(Option<usize>, Role, String), usize>,
    edges: BTreeSet<(usize, usize)>,
}

fn is_ident(n: &AstNode) -> bool {
    n.is_leaf() && n.kind == "identifier"
}

fn is_type_node(kind: &str) -> bool {
    matches!(
        kind,
        "type" | "type_descriptor" | "primitive_type" | "type_identifier" | "sized_type_specifier" | "struct_specifier"
    )
}

/// Name introduced by a declarator, looking through pointer and array
/// wrappers.
fn declared_name(n: &AstNode) -> Option<&AstNode> {
    if is_ident(n) {
        return Some(n);
    }
    match n.kind.as_str() {
        "pointer_declarator" | "array_declarator" | "parenthesized_declarator" | "init_declarator" => {
            n.children.iter().filter(|c| !c.is_leaf() || is_ident(c)).find_map(declared_name)
        }
        _ => None,
    }
}

impl Builder {
    fn node(&mut self, name: &str, role: Role, leaf: Option<usize>) -> usize {
        let key = (leaf, role, name.to_string());
        if let Some(&i) = self.by_key.get(&key) {
            return i;
        }
        self.nodes.push(DfgNode {
            name: name.to_string(),
            role,
            leaf,
        });
        let i = self.nodes.len() - 1;
        self.by_key.insert(key, i);
        i
    }

    fn leaf(&self, n: &AstNode) -> usize {
        self.leaf_of[&(n as *const AstNode)]
    }

    fn use_(&mut self, n: &AstNode, st: &State) {
        let name = n.text().unwrap_or_default().to_string();
        let u = self.node(&name, Role::Use, Some(self.leaf(n)));
        match st.get(&name).filter(|s| !s.is_empty()) {
            Some(defs) => {
                for &d in defs {
                    self.edges.insert((d, u));
                }
            }
            None => {
                let e = self.node(&name, Role::Def, None);
                self.edges.insert((e, u));
            }
        }
    }

    fn def(&mut self, n: &AstNode, st: &mut State) {
        let name = n.text().unwrap_or_default().to_string();
        let d = self.node(&name, Role::Def, Some(self.leaf(n)));
        st.insert(name, BTreeSet::from([d]));
    }

    fn finish(self) -> DataFlowGraph {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&a, &b| {
            let (na, nb) = (&self.nodes[a], &self.nodes[b]);
            (na.leaf, na.role, &na.name).cmp(&(nb.leaf, nb.role, &nb.name))
        });
        let mut remap = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let nodes: Vec<DfgNode> = order.iter().map(|&i| self.nodes[i].clone()).collect();
        let mut edges: Vec<(usize, usize)> = self.edges.iter().map(|&(s, t)| (remap[s], remap[t])).collect();
        edges.sort_by_key(|&(s, t)| (nodes[t].leaf, t, nodes[s].leaf, s));
        DataFlowGraph { nodes, edges }
    }

    fn unit(&mut self, root: &AstNode) {
        if root.kind == "translation_unit" {
            for c in &root.children {
                self.stmt(c, State::new());
            }
        } else {
            self.stmt(root, State::new());
        }
    }

    fn function(&mut self, f: &AstNode) -> State {
        let mut st = State::new();
        let params = f.walk().find(|n| n.kind == "parameter_list");
        if let Some(params) = params {
            for p in params.children.iter().filter(|c| c.kind == "parameter_declaration") {
                let name = p.children.iter().filter(|c| !is_type_node(&c.kind)).find_map(declared_name);
                if let Some(name) = name {
                    self.def(name, &mut st);
                }
            }
        }
        if let Some(body) = f.children.iter().rev().find(|c| c.kind == "compound_statement") {
            st = self.stmt(body, st);
        }
        st
    }

    fn declaration(&mut self, n: &AstNode, st: &mut State) {
        for c in &n.children {
            if is_type_node(&c.kind) || (c.is_leaf() && !is_ident(c)) {
                continue;
            }
            match c.kind.as_str() {
                "init_declarator" => {
                    for v in c.children.iter().skip(1).filter(|v| !(v.is_leaf() && v.text() == Some("="))) {
                        self.expr(v, st);
                    }
                    if let Some(name) = c.children.first().and_then(declared_name) {
                        self.def(name, st);
                    }
                }
                "function_declarator" => {}
                _ => {
                    if let Some(name) = declared_name(c) {
                        self.def(name, st);
                    }
                }
            }
        }
    }

    fn stmt(&mut self, n: &AstNode, mut st: State) -> State {
        match n.kind.as_str() {
            "function_definition" => self.function(n),
            "compound_statement" | "translation_unit" => {
                for c in &n.children {
                    st = self.stmt(c, st);
                }
                st
            }
            "declaration" => {
                self.declaration(n, &mut st);
                st
            }
            "if_statement" => {
                let mut parts = n.children.iter().filter(|c| !c.is_leaf() && c.kind != "else_clause");
                if let Some(cond) = parts.next() {
                    self.expr(cond, &mut st);
                }
                let then = parts.next();
                let other = n.children.iter().find(|c| c.kind == "else_clause");
                let s_then = match then {
                    Some(t) => self.stmt(t, st.clone()),
                    None => st.clone(),
                };
                let s_else = match other {
                    Some(e) => self.stmt(e, st),
                    None => st,
                };
                union(s_then, s_else)
            }
            "else_clause" => match n.children.iter().rev().find(|c| !c.is_leaf()) {
                Some(body) => self.stmt(body, st),
                None => st,
            },
            "while_statement" => {
                let mut parts = n.children.iter().filter(|c| !c.is_leaf());
                let cond = parts.next();
                let body = parts.next();
                self.run_loop(st, cond, &[], body)
            }
            "do_statement" => {
                let mut parts = n.children.iter().filter(|c| !c.is_leaf());
                let body = parts.next();
                let cond = parts.next();
                let mut s1 = match body {
                    Some(b) => self.stmt(b, st.clone()),
                    None => st.clone(),
                };
                if let Some(c) = cond {
                    self.expr(c, &mut s1);
                }
                let merged = union(st, s1.clone());
                let mut s2 = match body {
                    Some(b) => self.stmt(b, merged),
                    None => merged,
                };
                if let Some(c) = cond {
                    self.expr(c, &mut s2);
                }
                union(s1, s2)
            }
            "for_statement" => {
                let mut sections: [Vec<&AstNode>; 3] = Default::default();
                let mut section = 0;
                let mut inside = false;
                let mut body = None;
                for c in &n.children {
                    match (c.is_leaf(), c.text()) {
                        (true, Some("(")) if !inside => inside = true,
                        (true, Some(")")) if inside => inside = false,
                        (true, Some(";")) if inside => section = (section + 1).min(2),
                        _ if inside => {
                            let is_stmt = matches!(c.kind.as_str(), "declaration" | "expression_statement");
                            if section == 0 && is_stmt {
                                sections[0].push(c);
                                section = 1;
                            } else {
                                sections[section].push(c);
                            }
                        }
                        (false, _) => body = Some(c),
                        _ => {}
                    }
                }
                for init in &sections[0] {
                    st = self.stmt(init, st);
                }
                let cond = sections[1].first().copied();
                let mut tail: Vec<&AstNode> = sections[1].iter().skip(1).copied().collect();
                tail.extend(sections[2].iter().copied());
                self.run_loop_for(st, cond, &tail, body)
            }
            "return_statement" => {
                for c in &n.children {
                    self.expr(c, &mut st);
                }
                State::new()
            }
            "switch_statement" => {
                let mut parts = n.children.iter().filter(|c| !c.is_leaf());
                if let Some(cond) = parts.next() {
                    self.expr(cond, &mut st);
                }
                match parts.next() {
                    Some(body) => {
                        let out = self.stmt(body, st.clone());
                        union(st, out)
                    }
                    None => st,
                }
            }
            "break_statement" | "continue_statement" | "goto_statement" | "labeled_statement" | "case_statement"
            | "error" => st,
            "expression_statement" => {
                for c in &n.children {
                    self.expr(c, &mut st);
                }
                st
            }
            _ => {
                self.expr(n, &mut st);
                st
            }
        }
    }

    fn run_loop(&mut self, st: State, cond: Option<&AstNode>, tail: &[&AstNode], body: Option<&AstNode>) -> State {
        self.run_loop_for(st, cond, tail, body)
    }

    /// Loop with the condition at the head: `cond; body; tail` executed from
    /// the entry state and once more from the merged loop-back state.
    fn run_loop_for(
        &mut self,
        s0: State,
        cond: Option<&AstNode>,
        tail: &[&AstNode],
        body: Option<&AstNode>,
    ) -> State {
        let pass = |b: &mut Self, mut s: State| -> (State, State) {
            if let Some(c) = cond {
                b.expr(c, &mut s);
            }
            let head = s.clone();
            if let Some(body) = body {
                s = b.stmt(body, s);
            }
            for t in tail {
                b.expr(t, &mut s);
            }
            (head, s)
        };
        let (head0, s1) = pass(self, s0);
        let merged = union(head0, s1);
        let (head1, s2) = pass(self, merged);
        union(head1, s2)
    }

    fn expr(&mut self, n: &AstNode, st: &mut State) {
        if n.is_leaf() {
            if is_ident(n) {
                self.use_(n, st);
            }
            return;
        }
        match n.kind.as_str() {
            "assignment" | "assignment_expression" => {
                let (Some(lhs), Some(op)) = (n.children.first(), n.children.get(1)) else {
                    return;
                };
                for rhs in n.children.iter().skip(2) {
                    self.expr(rhs, st);
                }
                if is_ident(lhs) {
                    if op.text() != Some("=") {
                        self.use_(lhs, st);
                    }
                    self.def(lhs, st);
                } else {
                    self.expr(lhs, st);
                }
            }
            "update_expression" => {
                let operand = n.children.iter().find(|c| !(c.is_leaf() && matches!(c.text(), Some("++" | "--"))));
                match operand {
                    Some(v) if is_ident(v) => {
                        self.use_(v, st);
                        self.def(v, st);
                    }
                    Some(v) => self.expr(v, st),
                    None => {}
                }
            }
            "call_expression" => {
                for (i, c) in n.children.iter().enumerate() {
                    if i == 0 && is_ident(c) {
                        continue;
                    }
                    self.expr(c, st);
                }
            }
            "field_expression" => {
                if let Some(obj) = n.children.first() {
                    self.expr(obj, st);
                }
            }
            "declaration" => self.declaration(n, st),
            k if is_type_node(k) => {}
            _ => {
                for c in &n.children {
                    if !is_type_node(&c.kind) {
                        self.expr(c, st);
                    }
                }
            }
        }
    }
}
