//! Per-function control-flow graphs, loop metadata, and the call graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::frontend::{BinaryOp, Expr, ExprKind, FunctionDecl, Loc, Stmt, StmtKind, UnaryOp, Usr, VarDecl, VarId};

pub type BlockId = usize;

pub const ENTRY: BlockId = 0;
pub const EXIT: BlockId = 1;

/// A block element: a declaration (with optional initializer) or an expression statement.
#[derive(Clone, Debug)]
pub enum Elem {
    Decl(VarDecl),
    Expr(Expr),
}

impl Elem {
    pub fn loc(&self) -> Loc {
        match self {
            Elem::Decl(v) => v.loc,
            Elem::Expr(e) => e.loc,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Terminator {
    Goto(BlockId),
    Branch { cond: Expr, t: BlockId, f: BlockId },
    Return { value: Option<Expr>, loc: Loc },
    /// Follows a call to a no-return builtin; the edge to exit is never taken.
    NoReturn,
    /// Only the exit block has this.
    None,
}

#[derive(Clone, Debug)]
pub struct Block {
    pub id: BlockId,
    pub elems: Vec<Elem>,
    /// Source location of each element, kept in a separate vector for the engine's convenience.
    pub elem_locs: Vec<Loc>,
    pub term: Terminator,
}

impl Block {
    pub fn succs(&self) -> Vec<BlockId> {
        match &self.term {
            Terminator::Goto(t) => vec![*t],
            Terminator::Branch { t, f, .. } => vec![*t, *f],
            Terminator::Return { .. } | Terminator::NoReturn => vec![EXIT],
            Terminator::None => vec![],
        }
    }

    /// Location of the terminator, when it has one worth reporting.
    pub fn term_loc(&self) -> Option<Loc> {
        match &self.term {
            Terminator::Branch { cond, .. } => Some(cond.loc),
            Terminator::Return { loc, .. } => Some(*loc),
            _ => None,
        }
    }
}

/// A `while (v < K)` loop stepping `v` by a positive constant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterLoop {
    pub var: VarId,
    pub bound: i32,
    pub inclusive: bool,
    pub step: i32,
}

impl CounterLoop {
    /// Iterations still to run when the counter currently holds `v`.
    pub fn remaining(&self, v: i32) -> i64 {
        let end = self.bound as i64 + i64::from(self.inclusive);
        let v = v as i64;
        if v >= end {
            0
        } else {
            (end - v + self.step as i64 - 1) / self.step as i64
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoopInfo {
    pub head: BlockId,
    /// The while condition expression; its id keys widening symbols.
    pub cond_id: crate::frontend::ExprId,
    pub cond_blocks: BTreeSet<BlockId>,
    pub body_blocks: BTreeSet<BlockId>,
    pub exit: BlockId,
    /// Variables assigned or declared in the body.
    pub assigned: BTreeSet<VarId>,
    /// The body writes through a pointer or makes a non-builtin call.
    pub opaque_effects: bool,
    pub cond_vars: BTreeSet<VarId>,
    pub counter: Option<CounterLoop>,
}

#[derive(Clone, Debug)]
pub struct Cfg {
    pub usr: Usr,
    pub blocks: Vec<Block>,
    pub loops: Vec<LoopInfo>,
}

impl Cfg {
    pub fn entry(&self) -> BlockId {
        ENTRY
    }

    pub fn exit(&self) -> BlockId {
        EXIT
    }

    pub fn loop_at_head(&self, b: BlockId) -> Option<&LoopInfo> {
        self.loops.iter().find(|l| l.head == b)
    }

    /// Every source line holding an element or a terminator.
    pub fn lines(&self) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        for b in &self.blocks {
            out.extend(b.elem_locs.iter().map(|l| l.line));
            if let Some(l) = b.term_loc() {
                out.insert(l.line);
            }
        }
        out
    }

    /// `B<id>: [stmts] -> succs`, one block per line.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for b in &self.blocks {
            let mut parts: Vec<String> = b
                .elems
                .iter()
                .map(|e| match e {
                    Elem::Expr(e) => e.to_string(),
                    Elem::Decl(v) => match &v.init {
                        Some(init) => format!("{} {} = {init}", v.ty, v.name),
                        None => format!("{} {}", v.ty, v.name),
                    },
                })
                .collect();
            match &b.term {
                Terminator::Branch { cond, .. } => parts.push(cond.to_string()),
                Terminator::Return { value: Some(v), .. } => parts.push(format!("return {v}")),
                Terminator::Return { value: None, .. } => parts.push("return".into()),
                Terminator::NoReturn => parts.push("<noreturn>".into()),
                _ => {}
            }
            let succs: Vec<String> = b.succs().iter().map(|t| format!("B{t}")).collect();
            let _ = writeln!(s, "B{}: [{}] -> {}", b.id, parts.join("; "), succs.join(", "));
        }
        s
    }
}

struct Builder {
    blocks: Vec<Block>,
    cur: Option<BlockId>,
    loops: Vec<LoopInfo>,
}

impl Builder {
    fn new_block(&mut self) -> BlockId {
        let id = self.blocks.len();
        self.blocks.push(Block {
            id,
            elems: Vec::new(),
            elem_locs: Vec::new(),
            term: Terminator::None,
        });
        id
    }

    /// The current block, opening a fresh (unreachable) one after a return.
    fn cur(&mut self) -> BlockId {
        match self.cur {
            Some(b) => b,
            None => {
                let b = self.new_block();
                self.cur = Some(b);
                b
            }
        }
    }

    fn terminate(&mut self, term: Terminator) {
        let b = self.cur();
        self.blocks[b].term = term;
        self.cur = None;
    }

    fn goto(&mut self, target: BlockId) {
        if self.cur.is_some() {
            self.terminate(Terminator::Goto(target));
        }
    }

    fn push(&mut self, elem: Elem) {
        let b = self.cur();
        self.blocks[b].elem_locs.push(elem.loc());
        self.blocks[b].elems.push(elem);
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Compound(stmts) => stmts.iter().for_each(|s| self.stmt(s)),
            StmtKind::Empty => {}
            StmtKind::Decl(v) => self.push(Elem::Decl(v.clone())),
            StmtKind::Expr(e) => {
                let no_return = matches!(&e.kind, ExprKind::Call { usr, .. } if usr.as_str() == "F:abort#");
                self.push(Elem::Expr(e.clone()));
                if no_return {
                    self.terminate(Terminator::NoReturn);
                }
            }
            StmtKind::Return(v) => self.terminate(Terminator::Return {
                value: v.clone(),
                loc: s.loc,
            }),
            StmtKind::If { cond, then, els } => {
                let tb = self.new_block();
                let fb = self.new_block();
                let join = if els.is_some() { self.new_block() } else { fb };
                self.cond(cond, tb, fb);
                self.cur = Some(tb);
                self.stmt(then);
                self.goto(join);
                if let Some(e) = els {
                    self.cur = Some(fb);
                    self.stmt(e);
                    self.goto(join);
                }
                self.cur = Some(join);
            }
            StmtKind::While { cond, body } => {
                let head = self.new_block();
                self.goto(head);
                let body_b = self.new_block();
                let exit = self.new_block();
                let cond_start = self.blocks.len();
                self.cur = Some(head);
                self.cond(cond, body_b, exit);
                let mut cond_blocks: BTreeSet<BlockId> = (cond_start..self.blocks.len()).collect();
                cond_blocks.insert(head);
                let body_start = self.blocks.len();
                self.cur = Some(body_b);
                self.stmt(body);
                self.goto(head);
                let mut body_blocks: BTreeSet<BlockId> = (body_start..self.blocks.len()).collect();
                body_blocks.insert(body_b);

                let mut assigned = BTreeSet::new();
                let mut opaque_effects = false;
                collect_effects(body, &mut assigned, &mut opaque_effects);
                let mut cond_vars = BTreeSet::new();
                cond.walk(&mut |e| {
                    if let ExprKind::DeclRef { var, .. } = &e.kind {
                        cond_vars.insert(*var);
                    }
                });
                self.loops.push(LoopInfo {
                    head,
                    cond_id: cond.id,
                    cond_blocks,
                    body_blocks,
                    exit,
                    assigned,
                    opaque_effects,
                    cond_vars,
                    counter: counter_pattern(cond, body),
                });
                self.cur = Some(exit);
            }
        }
    }

    /// Lowers a condition into a chain of branches ending in `t` or `f`.
    fn cond(&mut self, e: &Expr, t: BlockId, f: BlockId) {
        match &e.kind {
            ExprKind::Binary { op: BinaryOp::LAnd, lhs, rhs } => {
                let mid = self.new_block();
                self.cond(lhs, mid, f);
                self.cur = Some(mid);
                self.cond(rhs, t, f);
            }
            ExprKind::Binary { op: BinaryOp::LOr, lhs, rhs } => {
                let mid = self.new_block();
                self.cond(lhs, t, mid);
                self.cur = Some(mid);
                self.cond(rhs, t, f);
            }
            ExprKind::Unary { op: UnaryOp::Not, operand } if contains_logical(operand) => self.cond(operand, f, t),
            _ => self.terminate(Terminator::Branch {
                cond: e.clone(),
                t,
                f,
            }),
        }
    }
}

fn contains_logical(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::Binary { op, .. } => op.is_logical(),
        ExprKind::Unary { op: UnaryOp::Not, operand } => contains_logical(operand),
        _ => false,
    }
}

/// The variable at the root of an lvalue, if it is written without going through a pointer.
fn direct_var(e: &Expr) -> Option<VarId> {
    match &e.kind {
        ExprKind::DeclRef { var, .. } => Some(*var),
        ExprKind::Member { base, arrow: false, .. } => direct_var(base),
        ExprKind::Index { base, .. } if matches!(base.ty, crate::frontend::Type::Array(..)) => direct_var(base),
        _ => None,
    }
}

fn collect_effects(s: &Stmt, assigned: &mut BTreeSet<VarId>, opaque: &mut bool) {
    let mut decls = Vec::new();
    let mut s = s.clone();
    s.walk_decls_mut(&mut |v| decls.push(v.id));
    assigned.extend(decls);
    s.walk_exprs(&mut |e| match &e.kind {
        ExprKind::Binary {
            op: BinaryOp::Assign,
            lhs,
            ..
        } => match direct_var(lhs) {
            Some(v) => {
                assigned.insert(v);
            }
            None => *opaque = true,
        },
        ExprKind::Call { usr, .. } if !matches!(usr.as_str(), "F:malloc#i" | "F:free#pv" | "F:abort#") => *opaque = true,
        _ => {}
    });
}

fn counter_pattern(cond: &Expr, body: &Stmt) -> Option<CounterLoop> {
    let ExprKind::Binary { op, lhs, rhs } = &cond.kind else { return None };
    let inclusive = match op {
        BinaryOp::Lt => false,
        BinaryOp::Le => true,
        _ => return None,
    };
    let (ExprKind::DeclRef { var, .. }, ExprKind::IntLit(bound)) = (&lhs.kind, &rhs.kind) else {
        return None;
    };
    let var = *var;
    let mut step = None;
    let mut writes = 0;
    let mut tainted = false;
    let top: Vec<&Stmt> = match &body.kind {
        StmtKind::Compound(v) => v.iter().collect(),
        _ => vec![body],
    };
    for s in &top {
        if let StmtKind::Expr(Expr {
            kind: ExprKind::Binary {
                op: BinaryOp::Assign,
                lhs,
                rhs,
            },
            ..
        }) = &s.kind
        {
            if let (ExprKind::DeclRef { var: l, .. }, ExprKind::Binary { op: BinaryOp::Add, lhs: a, rhs: c }) =
                (&lhs.kind, &rhs.kind)
            {
                if *l == var {
                    if let (ExprKind::DeclRef { var: r, .. }, ExprKind::IntLit(c)) = (&a.kind, &c.kind) {
                        if *r == var && *c > 0 {
                            step = Some(*c);
                        }
                    }
                }
            }
        }
    }
    body.walk_exprs(&mut |e| match &e.kind {
        ExprKind::Binary {
            op: BinaryOp::Assign,
            lhs,
            ..
        } if matches!(lhs.kind, ExprKind::DeclRef { var: v, .. } if v == var) => writes += 1,
        ExprKind::Unary {
            op: UnaryOp::AddrOf,
            operand,
        } if direct_var(operand) == Some(var) => tainted = true,
        _ => {}
    });
    let mut redeclared = false;
    body.clone().walk_decls_mut(&mut |v| redeclared |= v.id == var);
    (writes == 1 && !tainted && !redeclared).then_some(())?;
    Some(CounterLoop {
        var,
        bound: *bound,
        inclusive,
        step: step?,
    })
}

/// Builds the CFG of a function with a body. Unreachable blocks are dropped and ids renumbered.
pub fn build_cfg(f: &FunctionDecl) -> Cfg {
    let mut b = Builder {
        blocks: Vec::new(),
        cur: None,
        loops: Vec::new(),
    };
    let entry = b.new_block();
    let exit = b.new_block();
    debug_assert_eq!((entry, exit), (ENTRY, EXIT));
    let first = b.new_block();
    b.blocks[entry].term = Terminator::Goto(first);
    b.cur = Some(first);
    if let Some(body) = &f.body {
        b.stmt(body);
    }
    // falling off the end returns nothing
    if b.cur.is_some() {
        b.terminate(Terminator::Return {
            value: None,
            loc: last_loc(f),
        });
    }
    prune(f.usr.clone(), b.blocks, b.loops)
}

fn last_loc(f: &FunctionDecl) -> Loc {
    let mut loc = f.loc;
    if let Some(body) = &f.body {
        body.walk_exprs(&mut |e| loc = loc.max(e.loc));
    }
    loc
}

fn prune(usr: Usr, blocks: Vec<Block>, loops: Vec<LoopInfo>) -> Cfg {
    let mut reachable = vec![false; blocks.len()];
    reachable[ENTRY] = true;
    reachable[EXIT] = true;
    let mut stack = vec![ENTRY];
    while let Some(b) = stack.pop() {
        for s in blocks[b].succs() {
            if !reachable[s] {
                reachable[s] = true;
                stack.push(s);
            }
        }
    }
    let mut map = vec![usize::MAX; blocks.len()];
    let mut next = 0;
    for (i, r) in reachable.iter().enumerate() {
        if *r {
            map[i] = next;
            next += 1;
        }
    }
    let remap = |b: BlockId| map[b];
    let mut out = Vec::with_capacity(next);
    for (i, mut blk) in blocks.into_iter().enumerate() {
        if !reachable[i] {
            continue;
        }
        blk.id = map[i];
        blk.term = match blk.term {
            Terminator::Goto(t) => Terminator::Goto(remap(t)),
            Terminator::Branch { cond, t, f } => Terminator::Branch {
                cond,
                t: remap(t),
                f: remap(f),
            },
            other => other,
        };
        out.push(blk);
    }
    let loops = loops
        .into_iter()
        .filter(|l| reachable[l.head])
        .map(|l| LoopInfo {
            head: remap(l.head),
            cond_blocks: l.cond_blocks.iter().filter(|b| reachable[**b]).map(|b| remap(*b)).collect(),
            body_blocks: l.body_blocks.iter().filter(|b| reachable[**b]).map(|b| remap(*b)).collect(),
            exit: if reachable[l.exit] { remap(l.exit) } else { usize::MAX },
            ..l
        })
        .collect();
    Cfg {
        usr,
        blocks: out,
        loops,
    }
}

/// Caller-to-callee edges among defined functions, keyed by USR.
#[derive(Clone, Debug, Default)]
pub struct CallGraph {
    pub nodes: BTreeSet<Usr>,
    pub edges: BTreeMap<Usr, BTreeSet<Usr>>,
}

impl CallGraph {
    pub fn build<'a>(defs: impl IntoIterator<Item = &'a FunctionDecl>) -> CallGraph {
        let defs: Vec<&FunctionDecl> = defs.into_iter().filter(|f| f.body.is_some()).collect();
        let nodes: BTreeSet<Usr> = defs.iter().map(|f| f.usr.clone()).collect();
        let mut edges: BTreeMap<Usr, BTreeSet<Usr>> = BTreeMap::new();
        for f in &defs {
            let mut callees = BTreeSet::new();
            if let Some(body) = &f.body {
                body.walk_exprs(&mut |e| {
                    if let ExprKind::Call { usr, .. } = &e.kind {
                        if nodes.contains(usr) {
                            callees.insert(usr.clone());
                        }
                    }
                });
            }
            edges.insert(f.usr.clone(), callees);
        }
        CallGraph { nodes, edges }
    }

    pub fn from_edges(nodes: &[&str], edges: &[(&str, &str)]) -> CallGraph {
        let mut g = CallGraph {
            nodes: nodes.iter().map(|n| Usr(n.to_string())).collect(),
            edges: BTreeMap::new(),
        };
        for (a, b) in edges {
            g.edges.entry(Usr(a.to_string())).or_default().insert(Usr(b.to_string()));
        }
        g
    }

    pub fn callees(&self, u: &Usr) -> impl Iterator<Item = &Usr> {
        self.edges.get(u).into_iter().flatten()
    }

    /// Number of edges that go from a later to an earlier (or the same) position in `order`.
    pub fn violated_edges(&self, order: &[Usr]) -> usize {
        let pos: BTreeMap<&Usr, usize> = order.iter().enumerate().map(|(i, u)| (u, i)).collect();
        self.edges
            .iter()
            .flat_map(|(a, bs)| bs.iter().map(move |b| (a, b)))
            .filter(|(a, b)| pos[a] >= pos[b])
            .count()
    }
}

/// Orders functions callers-first. Nodes without remaining callers go first (smallest USR);
/// otherwise the node with the largest out-degree minus in-degree is taken.
pub fn top_level_order(cg: &CallGraph) -> Vec<Usr> {
    let mut remaining: BTreeSet<Usr> = cg.nodes.clone();
    let mut order = Vec::with_capacity(remaining.len());
    let mut preds: BTreeMap<&Usr, BTreeSet<&Usr>> = BTreeMap::new();
    for (a, bs) in &cg.edges {
        for b in bs {
            preds.entry(b).or_default().insert(a);
        }
    }
    while !remaining.is_empty() {
        let indeg = |u: &Usr, rem: &BTreeSet<Usr>| {
            preds.get(u).map_or(0, |p| p.iter().filter(|a| **a != u && rem.contains(**a)).count()) as i64
        };
        let outdeg = |u: &Usr, rem: &BTreeSet<Usr>| cg.callees(u).filter(|b| *b != u && rem.contains(*b)).count() as i64;
        let pick = match remaining.iter().find(|u| indeg(u, &remaining) == 0) {
            Some(u) => u.clone(),
            None => {
                let mut best: Option<(&Usr, i64)> = None;
                for u in &remaining {
                    let score = outdeg(u, &remaining) - indeg(u, &remaining);
                    if best.map_or(true, |(_, s)| score > s) {
                        best = Some((u, score));
                    }
                }
                best.expect("non-empty").0.clone()
            }
        };
        remaining.remove(&pick);
        order.push(pick);
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_translation_unit;

    fn cfg_of(src: &str) -> Cfg {
        let ast = parse_translation_unit(src, "t.mc").unwrap();
        build_cfg(ast.definitions().last().unwrap())
    }

    #[test]
    fn collatz_shape() {
        let cfg = cfg_of(
            "int collatz(int x) {\n  int num = 0;\n  while (x > 1) {\n    if (x % 2)\n      x = 3 * x + 1;\n    else\n      x = x / 2;\n    ++num;\n  }\n  return num;\n}\n",
        );
        let dump = cfg.dump();
        assert!(dump.contains("[int num = 0] -> B"), "{dump}");
        assert!(dump.contains("[x > 1] -> "), "{dump}");
        assert!(dump.contains("[x % 2] -> "), "{dump}");
        assert!(dump.contains("[x = 3 * x + 1]"), "{dump}");
        assert!(dump.contains("[x = x / 2]"), "{dump}");
        assert!(dump.contains("[return num] -> B1"), "{dump}");
        assert_eq!(cfg.loops.len(), 1);
        let l = &cfg.loops[0];
        // the join block with ++num jumps back to the head
        let back = cfg
            .blocks
            .iter()
            .filter(|b| l.body_blocks.contains(&b.id))
            .any(|b| b.succs() == vec![l.head]);
        assert!(back);
        // ENTRY, num = 0, head, if, then, else, join, return, EXIT
        assert_eq!(cfg.blocks.len(), 9);
    }

    #[test]
    fn straight_line() {
        let cfg = cfg_of("int f() { return 0; }");
        assert_eq!(cfg.blocks.len(), 3);
        assert_eq!(cfg.blocks[ENTRY].succs(), vec![2]);
        assert_eq!(cfg.blocks[2].succs(), vec![EXIT]);
        assert!(cfg.blocks[EXIT].succs().is_empty());
    }

    #[test]
    fn short_circuit_chain() {
        let cfg = cfg_of("int f(int a, int b) { int r = 0; if (a && b) r = 1; return r; }");
        let branches: Vec<_> = cfg
            .blocks
            .iter()
            .filter_map(|b| match &b.term {
                Terminator::Branch { cond, f, .. } => Some((cond.to_string(), *f)),
                _ => None,
            })
            .collect();
        assert_eq!(branches.len(), 2);
        assert_eq!(branches[0].0, "a");
        assert_eq!(branches[1].0, "b");
        assert_eq!(branches[0].1, branches[1].1, "false edges join");
    }

    #[test]
    fn abort_ends_block() {
        let cfg = cfg_of("int f(int a) { if (a) { abort(); a = 2; } return a; }");
        assert!(cfg.blocks.iter().any(|b| matches!(b.term, Terminator::NoReturn)));
        // the assignment after abort is unreachable and removed
        assert!(!cfg.dump().contains("a = 2"));
    }

    #[test]
    fn every_block_reachable_and_terminated() {
        let cfg = cfg_of("int f(int a) { while (a > 0 || a < -5) { if (!(a == 3 && a != 4)) return 1; a = a - 1; } return 0; return 2; }");
        for b in &cfg.blocks {
            if b.id != EXIT {
                assert!(!b.succs().is_empty());
            }
        }
        assert!(!cfg.dump().contains("return 2"));
    }

    #[test]
    fn counter_loop_detection() {
        let c = cfg_of("int f() { int i = 0; int s = 0; while (i < 10) { s = s + i; i = i + 2; } return s; }");
        assert_eq!(
            c.loops[0].counter,
            Some(CounterLoop {
                var: c.loops[0].counter.as_ref().unwrap().var,
                bound: 10,
                inclusive: false,
                step: 2
            })
        );
        assert_eq!(c.loops[0].counter.as_ref().unwrap().remaining(0), 5);
        let c = cfg_of("int f(int n) { int i = 0; while (i < 10) { i = i + 1; i = i + 1; } return i; }");
        assert!(c.loops[0].counter.is_none());
        let c = cfg_of("int f(int n) { int i = 0; while (i < n) { i = i + 1; } return i; }");
        assert!(c.loops[0].counter.is_none());
    }

    #[test]
    fn order_callers_first() {
        let g = CallGraph::from_edges(&["F:f#i", "F:g#"], &[("F:g#", "F:f#i")]);
        assert_eq!(top_level_order(&g), vec![Usr("F:g#".into()), Usr("F:f#i".into())]);
        let g = CallGraph::from_edges(&["c", "a", "b"], &[]);
        let o: Vec<String> = top_level_order(&g).into_iter().map(|u| u.0).collect();
        assert_eq!(o, ["a", "b", "c"]);
        let g = CallGraph::from_edges(&["F:g#", "F:f#"], &[("F:f#", "F:g#"), ("F:g#", "F:f#")]);
        let o: Vec<String> = top_level_order(&g).into_iter().map(|u| u.0).collect();
        assert_eq!(o, ["F:f#", "F:g#"]);
    }
}
