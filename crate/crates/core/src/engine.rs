//! Worklist-driven construction of exploded graphs.
//!
//! Program points are statement-granular. A call that is inlined suspends the current
//! statement; after the callee returns, the statement is evaluated again with every
//! sub-expression value it already computed taken from the environment.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;
use std::str::FromStr;

use crate::cfg::{build_cfg, top_level_order, BlockId, CallGraph, Cfg, Elem, LoopInfo, Terminator, ENTRY, EXIT};
use crate::checkers::{self, Bug, CheckOutcome, Origin, RawReport};
use crate::frontend::{
    Ast, BinaryOp, Expr, ExprId, ExprKind, FunctionDecl, Loc, Storage, Type, UnaryOp, Usr, VarId,
};
use crate::memmodel::{invalidate, pointee_region, FrameKey, MemSpace, RegionId, RegionKind};
use crate::pmap::PMap;
use crate::solver::{assume, eval_binary, eval_binary_raw, eval_unary, eval_unary_raw, simplify};
use crate::symstate::{remove_dead_bindings, Ctx, SVal, State};

/// Environment slot holding a frame's return value.
pub const RET_SLOT: ExprId = ExprId(u32::MAX);

const MALLOC: &str = "F:malloc#i";
const FREE: &str = "F:free#pv";
const ABORT: &str = "F:abort#";
/// Upper bound on iterations for a fully unrolled counter loop.
const FULL_UNROLL_MAX: i64 = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Dfs,
    Bfs,
    UnexploredFirst,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dfs" => Ok(Strategy::Dfs),
            "bfs" => Ok(Strategy::Bfs),
            "unexplored-first" => Ok(Strategy::UnexploredFirst),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AnalysisOptions {
    pub strategy: Strategy,
    pub max_nodes: usize,
    pub max_inline_depth: usize,
    pub max_block_visits: u32,
    pub max_inline_size: usize,
    pub unroll_limit: u32,
    pub widen_loops: bool,
    /// Test hook: when false, unknown calls leave memory untouched.
    pub invalidate_on_unknown_calls: bool,
    /// Test hook: when false, functions already inlined are still analyzed as top-level.
    pub skip_inlined_top_level: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            strategy: Strategy::UnexploredFirst,
            max_nodes: 100_000,
            max_inline_depth: 5,
            max_block_visits: 4,
            max_inline_size: 50,
            unroll_limit: 3,
            widen_loops: false,
            invalidate_on_unknown_calls: true,
            skip_inlined_top_level: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VarInfo {
    pub name: String,
    pub storage: Storage,
}

pub struct FnInfo {
    pub decl: FunctionDecl,
    pub cfg: Cfg,
    /// Imported from another translation unit.
    pub external: bool,
}

/// Fresh-id allocation for definitions imported into this analysis.
#[derive(Clone, Debug, Default)]
pub struct IdAlloc {
    pub next_expr: u32,
    pub next_var: u32,
    pub globals: BTreeMap<String, VarId>,
}

/// Supplies bodies for functions declared but not defined in the analyzed unit.
pub trait DefinitionSource {
    fn load(&mut self, usr: &Usr, ids: &mut IdAlloc, stats: &mut BTreeMap<String, u64>) -> Option<FunctionDecl>;
}

pub struct Program {
    pub fns: Vec<Rc<FnInfo>>,
    pub by_usr: HashMap<Usr, usize>,
    pub vars: HashMap<VarId, VarInfo>,
    pub ids: IdAlloc,
    pub file: String,
}

impl Program {
    pub fn new(ast: &Ast) -> Program {
        let mut p = Program {
            fns: Vec::new(),
            by_usr: HashMap::new(),
            vars: HashMap::new(),
            ids: IdAlloc {
                next_expr: ast.expr_count,
                next_var: ast.var_count,
                globals: BTreeMap::new(),
            },
            file: ast.file.clone(),
        };
        for g in ast.globals() {
            p.ids.globals.insert(g.name.clone(), g.id);
            p.vars.insert(
                g.id,
                VarInfo {
                    name: g.name.clone(),
                    storage: Storage::Global,
                },
            );
        }
        for f in ast.definitions() {
            p.add_function(f.clone(), false);
        }
        p
    }

    pub fn add_function(&mut self, decl: FunctionDecl, external: bool) -> usize {
        for v in &decl.params {
            self.vars.insert(
                v.id,
                VarInfo {
                    name: v.name.clone(),
                    storage: Storage::Param,
                },
            );
        }
        if let Some(body) = &decl.body {
            let mut body = body.clone();
            body.walk_decls_mut(&mut |v| {
                self.vars.insert(
                    v.id,
                    VarInfo {
                        name: v.name.clone(),
                        storage: v.storage,
                    },
                );
            });
        }
        let cfg = build_cfg(&decl);
        let idx = self.fns.len();
        self.by_usr.insert(decl.usr.clone(), idx);
        self.fns.push(Rc::new(FnInfo { decl, cfg, external }));
        idx
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Frame {
    pub func: usize,
    pub call_site: Option<ExprId>,
    pub call_loc: Loc,
    pub ret_block: BlockId,
    pub ret_idx: usize,
    pub key: FrameKey,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PointKind {
    BlockEntrance,
    /// Before element `i` of the block; `i == elems.len()` is the terminator.
    Stmt(usize),
    CallEnter,
    CallExit,
    /// An error node created by a checker at element `i`.
    Sink(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Point {
    pub stack: Rc<Vec<Frame>>,
    pub block: BlockId,
    pub kind: PointKind,
}

impl Point {
    pub fn depth(&self) -> u32 {
        (self.stack.len() - 1) as u32
    }

    pub fn frame(&self) -> &Frame {
        self.stack.last().expect("non-empty stack")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssumeTag {
    /// The condition as written, without substituting constrained symbols.
    pub cond: SVal,
    pub truth: bool,
    pub both_feasible: bool,
    pub loc: Loc,
    pub file: String,
    pub text: String,
    pub depth: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EdgeTag {
    Plain,
    Assume(AssumeTag),
    CallEnter,
    CallExit,
}

pub type NodeId = usize;

pub struct Node {
    pub state: State,
    pub point: Point,
    pub preds: Vec<(NodeId, EdgeTag)>,
}

#[derive(Default)]
pub struct Graph {
    pub nodes: Vec<Node>,
    index: HashMap<(State, Point), NodeId>,
}

impl Graph {
    /// Adds a node, or an edge to an existing identical node. Returns the id and whether it is new.
    pub fn add(&mut self, state: State, point: Point, pred: Option<(NodeId, EdgeTag)>) -> (NodeId, bool) {
        let key = (state, point);
        if let Some(&id) = self.index.get(&key) {
            if let Some(p) = pred {
                if !self.nodes[id].preds.contains(&p) {
                    self.nodes[id].preds.push(p);
                }
            }
            return (id, false);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            state: key.0.clone(),
            point: key.1.clone(),
            preds: pred.into_iter().collect(),
        });
        self.index.insert(key, id);
        (id, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// (frame depth, call site, function, block)
type VisitKey = (u32, Option<ExprId>, usize, BlockId);

struct Item {
    node: NodeId,
    visits: PMap<VisitKey, u32>,
    seq: u64,
}

enum Stop {
    Sink(Box<Bug>),
    Dead,
    Inline(InlineReq),
}

struct InlineReq {
    callee: usize,
    args: Vec<SVal>,
    call: ExprId,
    loc: Loc,
}

/// Evaluation context for the statement being processed.
struct Cur {
    depth: u32,
    frame: Frame,
    stack: Rc<Vec<Frame>>,
    visit: u32,
    file: String,
    loc: Loc,
}

pub type Coverage = BTreeMap<String, BTreeMap<u32, u64>>;

pub struct Engine<'a> {
    pub opts: AnalysisOptions,
    pub ctx: Ctx,
    pub prog: Program,
    ctu: Option<&'a mut dyn DefinitionSource>,
    imported: HashMap<Usr, Option<usize>>,
    pub inlined: BTreeSet<usize>,
    pub coverage: Coverage,
    pub alloc_sites: HashMap<RegionId, (String, Loc)>,
    block_counts: HashMap<(usize, BlockId), u64>,
}

pub struct TuResult {
    pub reports: Vec<checkers::BugReport>,
    pub coverage: Coverage,
    pub stats: BTreeMap<String, u64>,
    pub top_level: Vec<Usr>,
}

/// Analyzes every top-level function of `ast`.
pub fn analyze_tu(ast: &Ast, opts: &AnalysisOptions, ctu: Option<&mut dyn DefinitionSource>) -> TuResult {
    let mut eng = Engine::new(ast, opts.clone(), ctu);
    let cg = CallGraph::build(ast.definitions());
    let order = top_level_order(&cg);
    let mut reports = Vec::new();
    let mut top_level = Vec::new();
    for usr in order {
        let Some(&f) = eng.prog.by_usr.get(&usr) else { continue };
        if opts.skip_inlined_top_level && eng.inlined.contains(&f) {
            eng.ctx.bump("skipped_inlined_functions");
            continue;
        }
        top_level.push(usr);
        let (graph, raws) = eng.analyze_top(f);
        reports.extend(checkers::build_reports(&mut eng, &graph, &raws));
    }
    let reports = checkers::dedup_reports(reports);
    let suppressed = reports.iter().filter(|r| r.suppressed.is_some()).count() as u64;
    eng.ctx.stats.insert("element_regions".into(), eng.ctx.regions.element_count());
    *eng.ctx.stats.entry("suppressed_reports".into()).or_default() += suppressed;
    eng.ctx.stats.insert("top_level_functions".into(), top_level.len() as u64);
    TuResult {
        reports,
        coverage: eng.coverage,
        stats: eng.ctx.stats,
        top_level,
    }
}

impl<'a> Engine<'a> {
    pub fn new(ast: &Ast, opts: AnalysisOptions, ctu: Option<&'a mut dyn DefinitionSource>) -> Self {
        Engine {
            opts,
            ctx: Ctx::new(),
            prog: Program::new(ast),
            ctu,
            imported: HashMap::new(),
            inlined: BTreeSet::new(),
            coverage: BTreeMap::new(),
            alloc_sites: HashMap::new(),
            block_counts: HashMap::new(),
        }
    }

    pub fn fn_info(&self, f: usize) -> Rc<FnInfo> {
        self.prog.fns[f].clone()
    }

    /// Location of the element or terminator at a statement point.
    pub fn point_loc(&self, p: &Point) -> Option<(String, Loc)> {
        let fi = &self.prog.fns[p.frame().func];
        let b = &fi.cfg.blocks[p.block];
        let loc = match p.kind {
            PointKind::Stmt(i) | PointKind::Sink(i) if i < b.elem_locs.len() => Some(b.elem_locs[i]),
            PointKind::Stmt(_) | PointKind::Sink(_) => b.term_loc(),
            _ => None,
        }?;
        Some((fi.decl.file.clone(), loc))
    }

    fn resolve(&mut self, usr: &Usr) -> Option<usize> {
        if let Some(&f) = self.prog.by_usr.get(usr) {
            return Some(f);
        }
        if let Some(r) = self.imported.get(usr) {
            return *r;
        }
        let loaded = match self.ctu.as_mut() {
            Some(src) => src.load(usr, &mut self.prog.ids, &mut self.ctx.stats),
            None => None,
        };
        let r = loaded.map(|decl| {
            self.ctx.bump("ctu_imported_functions");
            self.prog.add_function(decl, true)
        });
        self.imported.insert(usr.clone(), r);
        r
    }

    fn var_region(&mut self, var: VarId, depth: u32) -> RegionId {
        let (storage, name) = match self.prog.vars.get(&var) {
            Some(v) => (v.storage, v.name.clone()),
            None => (Storage::Global, format!("v{}", var.0)),
        };
        self.ctx.regions.set_name(var, &name);
        match storage {
            Storage::Global => self.ctx.regions.var(var, MemSpace::Global, false),
            Storage::Param => self.ctx.regions.var(var, MemSpace::Stack(depth), true),
            Storage::Local => self.ctx.regions.var(var, MemSpace::Stack(depth), false),
        }
    }

    /// Builds the exploded graph of one top-level function.
    pub fn analyze_top(&mut self, f: usize) -> (Graph, Vec<RawReport>) {
        let mut g = Graph::default();
        let mut raws = Vec::new();
        let frame = Frame {
            func: f,
            call_site: None,
            call_loc: self.prog.fns[f].decl.loc,
            ret_block: 0,
            ret_idx: 0,
            key: FrameKey::default(),
        };
        let stack = Rc::new(vec![frame]);
        let root_point = Point {
            stack,
            block: ENTRY,
            kind: PointKind::BlockEntrance,
        };
        let (root, _) = g.add(State::default(), root_point, None);
        let mut visits = PMap::new();
        visits = visits.insert((0, None, f, ENTRY), 1);
        *self.block_counts.entry((f, ENTRY)).or_default() += 1;
        let mut work: Vec<Item> = vec![Item {
            node: root,
            visits,
            seq: 0,
        }];
        let mut seq = 1u64;
        let mut head = 0usize;
        loop {
            let item = match self.opts.strategy {
                Strategy::Dfs => work.pop(),
                Strategy::Bfs => {
                    if head < work.len() {
                        head += 1;
                        Some(std::mem::replace(
                            &mut work[head - 1],
                            Item {
                                node: usize::MAX,
                                visits: PMap::new(),
                                seq: 0,
                            },
                        ))
                    } else {
                        None
                    }
                }
                Strategy::UnexploredFirst => {
                    let best = work
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, it)| {
                            let p = &g.nodes[it.node].point;
                            let c = self.block_counts.get(&(p.frame().func, p.block)).copied().unwrap_or(0);
                            (c, it.seq)
                        })
                        .map(|(i, _)| i);
                    best.map(|i| work.remove(i))
                }
            };
            let Some(item) = item else { break };
            if g.len() >= self.opts.max_nodes {
                self.ctx.bump("node_budget_exhausted");
                break;
            }
            let succs = self.step(&g, &item);
            for s in succs {
                let is_entrance = s.point.kind == PointKind::BlockEntrance;
                let key = (s.point.frame().func, s.point.block);
                let stmt_loc = match s.point.kind {
                    PointKind::Stmt(_) => self.point_loc(&s.point),
                    _ => None,
                };
                let (id, new) = g.add(s.state, s.point, Some((item.node, s.tag)));
                for mut r in s.reports {
                    r.node = id;
                    raws.push(r);
                }
                if !new {
                    self.ctx.bump("merged_nodes");
                    continue;
                }
                self.ctx.bump("nodes");
                if let Some((file, loc)) = stmt_loc {
                    *self.coverage.entry(file).or_default().entry(loc.line).or_default() += 1;
                }
                if is_entrance {
                    *self.block_counts.entry(key).or_default() += 1;
                }
                if !s.terminal {
                    work.push(Item {
                        node: id,
                        visits: s.visits,
                        seq,
                    });
                    seq += 1;
                }
            }
            if self.opts.strategy == Strategy::Bfs && head > 1024 && head * 2 > work.len() {
                work.drain(..head);
                head = 0;
            }
        }
        (g, raws)
    }

    /// The nearest statement location at or before `node`, used to anchor leak reports.
    fn anchor(&self, g: &Graph, node: NodeId) -> (String, Loc) {
        let mut cur = node;
        loop {
            let n = &g.nodes[cur];
            if let PointKind::Stmt(_) = n.point.kind {
                if let Some(l) = self.point_loc(&n.point) {
                    return l;
                }
            }
            match n.preds.first() {
                Some((p, _)) => cur = *p,
                None => {
                    let f = &self.prog.fns[n.point.frame().func].decl;
                    return (f.file.clone(), f.loc);
                }
            }
        }
    }

    fn leak_reports(&mut self, g: &Graph, node: NodeId, dead: &[(u8, u32, u32)], point: &Point) -> Vec<RawReport> {
        let mut out = Vec::new();
        let leaked = checkers::on_dead(dead);
        if leaked.is_empty() {
            return out;
        }
        let (file, loc) = self.anchor(g, node);
        let fi = self.fn_info(point.frame().func);
        for r in leaked {
            let (afile, aloc) = self.alloc_sites.get(&r).cloned().unwrap_or((file.clone(), loc));
            out.push(RawReport {
                checker: checkers::MALLOC,
                message: "Potential memory leak".into(),
                node: usize::MAX,
                file: file.clone(),
                loc,
                fn_usr: fi.decl.usr.clone(),
                uniq: (afile, aloc),
                bug_sym: None,
                depth: point.depth(),
                origin: Origin::None,
                alloc: Some(r),
            });
        }
        out
    }

    fn step(&mut self, g: &Graph, item: &Item) -> Vec<Succ> {
        let node = &g.nodes[item.node];
        let st = node.state.clone();
        let point = node.point.clone();
        let d = point.depth();
        let fi = self.fn_info(point.frame().func);
        let mut out = Vec::new();
        match point.kind {
            PointKind::BlockEntrance => {
                if point.block == EXIT && d == 0 {
                    let mut st = st;
                    let ret = st.lookup_expr(0, RET_SLOT);
                    if let Some(r) = pointee_region(&mut self.ctx, ret) {
                        st = checkers::on_escape(&self.ctx, &st, &[r]);
                    }
                    let gc = remove_dead_bindings(&mut self.ctx, &st, None);
                    let reports = self.leak_reports(g, item.node, &gc.dead_tracked, &point);
                    out.push(Succ {
                        state: gc.state,
                        point: Point {
                            kind: PointKind::CallExit,
                            ..point
                        },
                        tag: EdgeTag::Plain,
                        visits: item.visits.clone(),
                        reports,
                        terminal: true,
                    });
                    return out;
                }
                let gc = remove_dead_bindings(&mut self.ctx, &st, Some(d));
                let reports = self.leak_reports(g, item.node, &gc.dead_tracked, &point);
                let kind = if point.block == EXIT {
                    PointKind::CallExit
                } else {
                    PointKind::Stmt(0)
                };
                out.push(Succ {
                    state: gc.state,
                    point: Point { kind, ..point },
                    tag: EdgeTag::Plain,
                    visits: item.visits.clone(),
                    reports,
                    terminal: false,
                });
            }
            PointKind::CallEnter => {
                let visits = item.visits.retain(|k, _| k.0 <= d);
                if let Some((p, v)) = self.enter_block(&st, &point, ENTRY, None, &visits) {
                    out.push(Succ::plain(p.0, p.1, v));
                }
            }
            PointKind::CallExit => {
                let frame = point.frame().clone();
                let ret = st.lookup_expr(d, RET_SLOT);
                let mut stack = (*point.stack).clone();
                stack.pop();
                let st = st
                    .clear_env(d)
                    .bind_expr(d - 1, frame.call_site.expect("inlined frame has a call site"), ret);
                // Only inlining from code of this unit makes a function skippable as top-level.
                let caller_local = stack.last().is_some_and(|c| !self.fn_info(c.func).external);
                if !fi.external && caller_local {
                    self.inlined.insert(frame.func);
                }
                let gc = remove_dead_bindings(&mut self.ctx, &st, Some(d - 1));
                let reports = self.leak_reports(g, item.node, &gc.dead_tracked, &point);
                out.push(Succ {
                    state: gc.state,
                    point: Point {
                        stack: Rc::new(stack),
                        block: frame.ret_block,
                        kind: PointKind::Stmt(frame.ret_idx),
                    },
                    tag: EdgeTag::CallExit,
                    visits: item.visits.retain(|k, _| k.0 < d),
                    reports,
                    terminal: false,
                });
            }
            PointKind::Sink(_) => {}
            PointKind::Stmt(idx) => {
                let block = &fi.cfg.blocks[point.block];
                let visit = item
                    .visits
                    .get(&(d, point.frame().call_site, point.frame().func, point.block))
                    .copied()
                    .unwrap_or(1);
                let (file, loc) = self.point_loc(&point).unwrap_or((fi.decl.file.clone(), fi.decl.loc));
                let mut cur = Cur {
                    depth: d,
                    frame: point.frame().clone(),
                    stack: point.stack.clone(),
                    visit,
                    file,
                    loc,
                };
                let mut st = st;
                if idx < block.elems.len() {
                    let r = match &block.elems[idx] {
                        Elem::Decl(v) => self.eval_decl(&mut st, &cur, v),
                        Elem::Expr(e) => self.rvalue(&mut st, &mut cur, e).map(|_| ()),
                    };
                    match r {
                        Ok(()) => out.push(Succ::plain(
                            st.clear_env(d),
                            Point {
                                kind: PointKind::Stmt(idx + 1),
                                ..point
                            },
                            item.visits.clone(),
                        )),
                        Err(stop) => self.stopped(stop, st, &point, idx, item, &cur, &mut out),
                    }
                } else {
                    self.terminator(st, &point, item, &mut cur, &mut out);
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn stopped(&mut self, stop: Stop, st: State, point: &Point, idx: usize, item: &Item, cur: &Cur, out: &mut Vec<Succ>) {
        match stop {
            Stop::Dead => self.ctx.bump("no_return_sinks"),
            Stop::Sink(bug) => {
                self.ctx.bump("sinks");
                let fi = self.fn_info(point.frame().func);
                let report = RawReport {
                    checker: bug.checker,
                    message: bug.message.clone(),
                    node: usize::MAX,
                    file: cur.file.clone(),
                    loc: bug.loc,
                    fn_usr: fi.decl.usr.clone(),
                    uniq: (cur.file.clone(), bug.loc),
                    bug_sym: bug.bug_sym,
                    depth: cur.depth,
                    origin: bug.origin.clone(),
                    alloc: None,
                };
                out.push(Succ {
                    state: bug.state,
                    point: Point {
                        kind: PointKind::Sink(idx),
                        ..point.clone()
                    },
                    tag: EdgeTag::Plain,
                    visits: item.visits.clone(),
                    reports: vec![report],
                    terminal: true,
                });
            }
            Stop::Inline(req) => {
                self.ctx.bump("inlined_calls");
                let d = cur.depth + 1;
                let callee = self.fn_info(req.callee);
                let mut st = st;
                for (p, v) in callee.decl.params.iter().zip(&req.args) {
                    let r = self.var_region(p.id, d);
                    st = st.bind_loc(&self.ctx, r, *v);
                }
                let mut stack = (*point.stack).clone();
                stack.push(Frame {
                    func: req.callee,
                    call_site: Some(req.call),
                    call_loc: req.loc,
                    ret_block: point.block,
                    ret_idx: idx,
                    key: FrameKey {
                        depth: d,
                        call_site: Some(req.call),
                        count: cur.visit,
                    },
                });
                out.push(Succ {
                    state: st,
                    point: Point {
                        stack: Rc::new(stack),
                        block: ENTRY,
                        kind: PointKind::CallEnter,
                    },
                    tag: EdgeTag::CallEnter,
                    visits: item.visits.clone(),
                    reports: Vec::new(),
                    terminal: false,
                });
            }
        }
    }

    fn terminator(&mut self, st: State, point: &Point, item: &Item, cur: &mut Cur, out: &mut Vec<Succ>) {
        let fi = self.fn_info(point.frame().func);
        let block = &fi.cfg.blocks[point.block];
        let d = cur.depth;
        let idx = block.elems.len();
        let mut st = st;
        match &block.term {
            Terminator::Goto(t) => {
                if let Some(((s, p), v)) = self.enter_block(&st.clear_env(d), point, *t, Some(point.block), &item.visits) {
                    out.push(Succ::plain(s, p, v));
                }
            }
            Terminator::NoReturn | Terminator::None => {}
            Terminator::Return { value, .. } => {
                let v = match value {
                    Some(e) => match self.rvalue(&mut st, cur, e) {
                        Ok(v) => v,
                        Err(stop) => return self.stopped(stop, st, point, idx, item, cur, out),
                    },
                    None => SVal::Unknown,
                };
                let st = st.clear_env(d).bind_expr(d, RET_SLOT, v);
                out.push(Succ::plain(
                    st,
                    Point {
                        block: EXIT,
                        kind: PointKind::BlockEntrance,
                        ..point.clone()
                    },
                    item.visits.clone(),
                ));
            }
            Terminator::Branch { cond, t, f } => {
                let v = match self.rvalue(&mut st, cur, cond) {
                    Ok(v) => v,
                    Err(stop) => return self.stopped(stop, st, point, idx, item, cur, out),
                };
                let raw = self.raw_value(&mut st, d, cond);
                let st_clean = st.clear_env(d);
                let outcomes = [
                    (true, *t, assume(&mut self.ctx, &st_clean, v, true)),
                    (false, *f, assume(&mut self.ctx, &st_clean, v, false)),
                ];
                let both = outcomes.iter().all(|o| o.2.is_some());
                for (truth, target, s) in outcomes {
                    let Some(s) = s else { continue };
                    if self.body_blocked(&fi, &s, point, target, &item.visits) {
                        self.ctx.bump("loop_unroll_limit_hits");
                        continue;
                    }
                    let tag = EdgeTag::Assume(AssumeTag {
                        cond: raw,
                        truth,
                        both_feasible: both,
                        loc: cond.loc,
                        file: cur.file.clone(),
                        text: cond.to_string(),
                        depth: d,
                    });
                    if let Some(((s, p), vis)) = self.enter_block(&s, point, target, Some(point.block), &item.visits) {
                        out.push(Succ {
                            state: s,
                            point: p,
                            tag,
                            visits: vis,
                            reports: Vec::new(),
                            terminal: false,
                        });
                    }
                }
            }
        }
    }

    fn head_visits(&self, visits: &PMap<VisitKey, u32>, point: &Point, l: &LoopInfo) -> u32 {
        let f = point.frame();
        visits.get(&(point.depth(), f.call_site, f.func, l.head)).copied().unwrap_or(0)
    }

    /// A counter loop whose remaining trip count is concrete and small runs to completion.
    fn fully_unrollable(&mut self, st: &State, point: &Point, l: &LoopInfo, head_visits: u32) -> bool {
        let Some(c) = &l.counter else { return false };
        let r = self.var_region(c.var, point.depth());
        match st.lookup_loc(&mut self.ctx, r) {
            SVal::Int(v) => (head_visits as i64 - 1).max(0) + c.remaining(v) <= FULL_UNROLL_MAX + 1,
            _ => false,
        }
    }

    fn body_blocked(&mut self, fi: &FnInfo, st: &State, point: &Point, target: BlockId, visits: &PMap<VisitKey, u32>) -> bool {
        for l in &fi.cfg.loops {
            if l.cond_blocks.contains(&point.block) && l.body_blocks.contains(&target) {
                let hv = self.head_visits(visits, point, l);
                if hv > self.opts.unroll_limit + self.opts.widen_loops as u32 && !self.fully_unrollable(st, point, l, hv) {
                    return true;
                }
            }
        }
        false
    }

    /// Moves to the start of `target`, applying visit budgets and loop widening.
    #[allow(clippy::type_complexity)]
    fn enter_block(
        &mut self,
        st: &State,
        point: &Point,
        target: BlockId,
        from: Option<BlockId>,
        visits: &PMap<VisitKey, u32>,
    ) -> Option<((State, Point), PMap<VisitKey, u32>)> {
        let fi = self.fn_info(point.frame().func);
        let f = point.frame();
        let d = point.depth();
        let mut visits = visits.clone();
        let mut st = st.clone();
        let key = (d, f.call_site, f.func, target);
        if let Some(l) = fi.cfg.loop_at_head(target) {
            let inside = from.is_some_and(|b| l.body_blocks.contains(&b) || l.cond_blocks.contains(&b));
            if !inside {
                visits = visits.retain(|k, _| {
                    !(k.0 == d
                        && k.1 == f.call_site
                        && k.2 == f.func
                        && (l.body_blocks.contains(&k.3) || l.cond_blocks.contains(&k.3)))
                });
            }
            let v = visits.get(&key).copied().unwrap_or(0) + 1;
            // The visit that would otherwise be cut carries the widened state.
            if v == self.opts.unroll_limit + 2 && self.opts.widen_loops && !self.fully_unrollable(&st, point, l, v) {
                st = self.widen(&st, point, l, v);
            }
            if v == self.opts.unroll_limit + 2 && self.fully_unrollable(&st, point, l, v) {
                self.ctx.bump("loops_fully_unrolled");
            }
        } else {
            let v = visits.get(&key).copied().unwrap_or(0) + 1;
            let mut limit = self.opts.max_block_visits;
            let loops: Vec<LoopInfo> = fi
                .cfg
                .loops
                .iter()
                .filter(|l| l.body_blocks.contains(&target) || l.cond_blocks.contains(&target))
                .cloned()
                .collect();
            for l in &loops {
                let hv = self.head_visits(&visits, point, l);
                if self.fully_unrollable(&st, point, l, hv) {
                    limit = limit.saturating_mul(130);
                }
            }
            if v > limit {
                self.ctx.bump("block_visit_limit_hits");
                return None;
            }
        }
        let v = visits.get(&key).copied().unwrap_or(0) + 1;
        visits = visits.insert(key, v);
        Some((
            (
                st,
                Point {
                    block: target,
                    kind: PointKind::BlockEntrance,
                    ..point.clone()
                },
            ),
            visits,
        ))
    }

    /// Over-approximates the remaining iterations of `l` by forgetting what the body may write.
    fn widen(&mut self, st: &State, point: &Point, l: &LoopInfo, visit: u32) -> State {
        self.ctx.bump("loops_widened");
        let d = point.depth();
        let key = FrameKey {
            depth: d,
            call_site: point.frame().call_site,
            count: visit,
        };
        let mut roots: Vec<RegionId> = Vec::new();
        if l.opaque_effects {
            let fi = self.fn_info(point.frame().func);
            let mut vars: Vec<VarId> = fi.decl.params.iter().map(|p| p.id).collect();
            if let Some(b) = &fi.decl.body {
                b.clone().walk_decls_mut(&mut |v| vars.push(v.id));
            }
            for v in vars {
                roots.push(self.var_region(v, d));
            }
            roots.push(self.ctx.regions.space(MemSpace::Global));
        } else {
            for v in l.assigned.iter().chain(&l.cond_vars) {
                roots.push(self.var_region(*v, d));
            }
        }
        roots.sort();
        roots.dedup();
        let inv = invalidate(&mut self.ctx, st, &roots, l.cond_id, key);
        checkers::on_escape(&self.ctx, &inv.state, &inv.touched.iter().copied().collect::<Vec<_>>())
    }

    fn eval_decl(&mut self, st: &mut State, cur: &Cur, v: &crate::frontend::VarDecl) -> Result<(), Stop> {
        let mut cur = Cur {
            depth: cur.depth,
            frame: cur.frame.clone(),
            stack: cur.stack.clone(),
            visit: cur.visit,
            file: cur.file.clone(),
            loc: v.loc,
        };
        let r = self.var_region(v.id, cur.depth);
        match &v.init {
            Some(init) => {
                let val = self.rvalue(st, &mut cur, init)?;
                let val = if matches!(v.ty, Type::Record(_)) {
                    self.record_copy_value(cur.depth, &cur, init.id, r)
                } else {
                    val
                };
                *st = self.store(st, r, val);
            }
            None => {
                *st = State {
                    store: st.store.retain(|k, _| !self.ctx.regions.is_within(*k, r)),
                    defaults: st.defaults.retain(|k, _| !self.ctx.regions.is_within(*k, r)),
                    ..st.clone()
                };
            }
        }
        Ok(())
    }

    fn record_copy_value(&mut self, depth: u32, cur: &Cur, site: ExprId, r: RegionId) -> SVal {
        let key = FrameKey {
            depth,
            call_site: cur.frame.call_site,
            count: cur.visit,
        };
        SVal::Sym(self.ctx.conjured(site, key, Some(r)))
    }

    /// Binds `v` into `r`, tracking pointers that escape into non-stack memory.
    fn store(&mut self, st: &State, r: RegionId, v: SVal) -> State {
        let st = st.bind_loc(&self.ctx, r, v);
        match (self.ctx.regions.memspace(r), v) {
            (MemSpace::Stack(_), _) => st,
            (_, SVal::Loc(target)) => checkers::on_escape(&self.ctx, &st, &[target]),
            _ => st,
        }
    }

    fn cache(&self, st: &mut State, d: u32, e: &Expr, v: SVal) {
        *st = st.bind_expr(d, e.id, v);
    }

    fn deref(&mut self, st: &mut State, cur: &Cur, ptr_expr: &Expr, pv: SVal, loc: Loc) -> Result<Option<RegionId>, Stop> {
        match checkers::check_deref(&mut self.ctx, st, pv) {
            CheckOutcome::Continue(s) => {
                *st = s;
                let v = simplify(st, pv);
                Ok(match v {
                    SVal::Loc(r) => Some(r),
                    SVal::Sym(s) => Some(self.ctx.regions.sym_region(s)),
                    _ => None,
                })
            }
            CheckOutcome::Bug(mut bug) => {
                bug.loc = loc;
                bug.origin = self.origin_of(st, cur, ptr_expr);
                Err(Stop::Sink(bug))
            }
        }
    }

    fn origin_of(&mut self, st: &mut State, cur: &Cur, e: &Expr) -> Origin {
        match &e.kind {
            ExprKind::IntLit(_) => Origin::Literal(cur.file.clone(), e.loc),
            ExprKind::DeclRef { var, .. } => Origin::Region(self.var_region(*var, cur.depth)),
            ExprKind::Member { arrow: false, .. } => {
                let mut c = Cur {
                    depth: cur.depth,
                    frame: cur.frame.clone(),
                    stack: cur.stack.clone(),
                    visit: cur.visit,
                    file: cur.file.clone(),
                    loc: cur.loc,
                };
                match self.lvalue(&mut st.clone(), &mut c, e) {
                    Ok(Some(r)) => Origin::Region(r),
                    _ => Origin::None,
                }
            }
            _ => Origin::None,
        }
    }

    /// Region designated by an lvalue expression, or `None` when it is unknown.
    fn lvalue(&mut self, st: &mut State, cur: &mut Cur, e: &Expr) -> Result<Option<RegionId>, Stop> {
        match &e.kind {
            ExprKind::DeclRef { var, .. } => Ok(Some(self.var_region(*var, cur.depth))),
            ExprKind::Member { base, field, arrow } => {
                let r = if *arrow {
                    let pv = self.rvalue(st, cur, base)?;
                    self.deref(st, cur, base, pv, e.loc)?
                } else {
                    self.lvalue(st, cur, base)?
                };
                Ok(r.map(|r| self.ctx.regions.field(r, field)))
            }
            ExprKind::Index { base, index } => {
                let bv = self.rvalue(st, cur, base)?;
                let iv = self.rvalue(st, cur, index)?;
                let iv = simplify(st, iv);
                let r = self.deref(st, cur, base, bv, e.loc)?;
                Ok(r.map(|r| {
                    let is_elem = matches!(self.ctx.regions.kind(r), RegionKind::Element { .. });
                    match iv {
                        SVal::Int(0) if !is_elem => r,
                        SVal::Int(_) | SVal::Sym(_) => self.ctx.regions.element(r, iv),
                        _ => self.ctx.regions.element(r, SVal::Unknown),
                    }
                }))
            }
            ExprKind::Unary { op: UnaryOp::Deref, operand } => {
                let pv = self.rvalue(st, cur, operand)?;
                self.deref(st, cur, operand, pv, e.loc)
            }
            _ => {
                self.rvalue(st, cur, e)?;
                Ok(None)
            }
        }
    }

    fn read_region(&mut self, st: &mut State, e: &Expr, r: Option<RegionId>) -> SVal {
        let Some(r) = r else { return SVal::Unknown };
        match &e.ty {
            Type::Array(..) => SVal::Loc(self.ctx.regions.element(r, SVal::Int(0))),
            Type::Record(_) => SVal::Loc(r),
            _ => {
                if let RegionKind::Element {
                    index: SVal::Unknown, ..
                } = self.ctx.regions.kind(r)
                {
                    return SVal::Unknown;
                }
                st.lookup_loc(&mut self.ctx, r)
            }
        }
    }

    fn rvalue(&mut self, st: &mut State, cur: &mut Cur, e: &Expr) -> Result<SVal, Stop> {
        if let ExprKind::IntLit(i) = e.kind {
            return Ok(if e.ty.is_pointer() && i == 0 { SVal::Null } else { SVal::Int(i) });
        }
        if let Some(v) = st.cached_expr(cur.depth, e.id) {
            return Ok(v);
        }
        let d = cur.depth;
        let v = match &e.kind {
            ExprKind::IntLit(_) => unreachable!(),
            ExprKind::DeclRef { .. } | ExprKind::Member { .. } | ExprKind::Index { .. } => {
                let r = self.lvalue(st, cur, e)?;
                self.read_region(st, e, r)
            }
            ExprKind::Unary { op, operand } => match op {
                UnaryOp::Deref => {
                    let r = self.lvalue(st, cur, e)?;
                    self.read_region(st, e, r)
                }
                UnaryOp::AddrOf => match self.lvalue(st, cur, operand)? {
                    Some(r) => SVal::Loc(r),
                    None => SVal::Unknown,
                },
                UnaryOp::Neg | UnaryOp::Not => {
                    let v = self.rvalue(st, cur, operand)?;
                    eval_unary(&mut self.ctx, st, *op, v)
                }
            },
            ExprKind::Binary {
                op: BinaryOp::Assign,
                lhs,
                rhs,
            } => {
                let v = self.rvalue(st, cur, rhs)?;
                let r = self.lvalue(st, cur, lhs)?;
                if let Some(r) = r {
                    let v = if matches!(lhs.ty, Type::Record(_)) {
                        self.record_copy_value(d, cur, e.id, r)
                    } else {
                        v
                    };
                    *st = self.store(st, r, v);
                }
                v
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let l = self.rvalue(st, cur, lhs)?;
                let r = self.rvalue(st, cur, rhs)?;
                if matches!(op, BinaryOp::Div | BinaryOp::Rem) {
                    match checkers::check_division(&mut self.ctx, st, r) {
                        CheckOutcome::Continue(s) => *st = s,
                        CheckOutcome::Bug(mut bug) => {
                            bug.loc = e.loc;
                            bug.origin = self.origin_of(st, cur, rhs);
                            return Err(Stop::Sink(bug));
                        }
                    }
                }
                self.pointer_arith(st, *op, l, r)
            }
            ExprKind::Call { usr, args, .. } => self.call(st, cur, e, usr, args)?,
        };
        self.cache(st, d, e, v);
        Ok(v)
    }

    fn pointer_arith(&mut self, st: &State, op: BinaryOp, l: SVal, r: SVal) -> SVal {
        let r = simplify(st, r);
        match (op, l, r) {
            (BinaryOp::Add | BinaryOp::Sub, SVal::Loc(base), SVal::Int(k)) => {
                let k = if op == BinaryOp::Sub { k.wrapping_neg() } else { k };
                if k == 0 {
                    return l;
                }
                SVal::Loc(self.ctx.regions.element(base, SVal::Int(k)))
            }
            _ => eval_binary(&mut self.ctx, st, op, l, r),
        }
    }

    /// The condition value rebuilt from cached leaves without substituting constrained symbols.
    fn raw_value(&mut self, st: &mut State, d: u32, e: &Expr) -> SVal {
        match &e.kind {
            ExprKind::IntLit(i) => {
                if e.ty.is_pointer() && *i == 0 {
                    SVal::Null
                } else {
                    SVal::Int(*i)
                }
            }
            ExprKind::Binary { op, lhs, rhs } if *op != BinaryOp::Assign => {
                let l = self.raw_value(st, d, lhs);
                let r = self.raw_value(st, d, rhs);
                eval_binary_raw(&mut self.ctx, *op, l, r)
            }
            ExprKind::Unary {
                op: op @ (UnaryOp::Not | UnaryOp::Neg),
                operand,
            } => {
                let v = self.raw_value(st, d, operand);
                eval_unary_raw(&mut self.ctx, *op, v)
            }
            _ => st.lookup_expr(d, e.id),
        }
    }

    fn call(&mut self, st: &mut State, cur: &mut Cur, e: &Expr, usr: &Usr, args: &[Expr]) -> Result<SVal, Stop> {
        let mut vals = Vec::with_capacity(args.len());
        for a in args {
            vals.push(self.rvalue(st, cur, a)?);
        }
        let key = FrameKey {
            depth: cur.depth,
            call_site: cur.frame.call_site,
            count: cur.visit,
        };
        match usr.as_str() {
            MALLOC => {
                let r = self.ctx.regions.alloc(e.id, key);
                self.alloc_sites.entry(r).or_insert((cur.file.clone(), e.loc));
                *st = checkers::on_malloc(st, r);
                return Ok(SVal::Loc(r));
            }
            FREE => {
                let v = vals.first().copied().unwrap_or(SVal::Unknown);
                return match checkers::on_free(&mut self.ctx, st, v) {
                    CheckOutcome::Continue(s) => {
                        *st = s;
                        Ok(SVal::Unknown)
                    }
                    CheckOutcome::Bug(mut bug) => {
                        bug.loc = e.loc;
                        Err(Stop::Sink(bug))
                    }
                };
            }
            ABORT => return Err(Stop::Dead),
            _ => {}
        }
        if let Some(callee) = self.resolve(usr) {
            let fi = self.fn_info(callee);
            let recursive = cur.stack.iter().any(|f| f.func == callee);
            if cur.stack.len() < self.opts.max_inline_depth
                && fi.cfg.blocks.len() <= self.opts.max_inline_size
                && !recursive
            {
                return Err(Stop::Inline(InlineReq {
                    callee,
                    args: vals,
                    call: e.id,
                    loc: e.loc,
                }));
            }
            self.ctx.bump(if recursive {
                "recursive_calls_not_inlined"
            } else {
                "budget_calls_not_inlined"
            });
        }
        self.ctx.bump("conservative_calls");
        let mut roots = Vec::new();
        for (a, v) in args.iter().zip(&vals) {
            if a.ty.decayed().is_pointer() {
                if let Some(r) = pointee_region(&mut self.ctx, *v) {
                    roots.push(r);
                }
            }
        }
        if self.opts.invalidate_on_unknown_calls {
            roots.push(self.ctx.regions.space(MemSpace::Global));
            let inv = invalidate(&mut self.ctx, st, &roots, e.id, key);
            let touched: Vec<RegionId> = inv.touched.iter().copied().collect();
            *st = checkers::on_escape(&self.ctx, &inv.state, &touched);
        } else {
            *st = checkers::on_escape(&self.ctx, st, &roots);
        }
        Ok(if e.ty == Type::Void {
            SVal::Unknown
        } else {
            SVal::Sym(self.ctx.conjured(e.id, key, None))
        })
    }
}

struct Succ {
    state: State,
    point: Point,
    tag: EdgeTag,
    visits: PMap<VisitKey, u32>,
    reports: Vec<RawReport>,
    terminal: bool,
}

impl Succ {
    fn plain(state: State, point: Point, visits: PMap<VisitKey, u32>) -> Succ {
        Succ {
            state,
            point,
            tag: EdgeTag::Plain,
            visits,
            reports: Vec::new(),
            terminal: false,
        }
    }
}
