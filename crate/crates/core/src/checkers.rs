//! Bug checkers, bug-path reconstruction and report deduplication.

use std::collections::{BTreeMap, HashSet, VecDeque};

use crate::engine::{EdgeTag, Engine, Graph, NodeId, PointKind};
use crate::frontend::{Loc, Usr};
use crate::memmodel::RegionId;
use crate::refutation::{collect_path_conditions, PathCondition};
use crate::solver::{assume, get_range, simplify, RangeSet};
use crate::symstate::{Ctx, SVal, State, SymId, TAG_MALLOC};

pub const DIV_ZERO: &str = "core.DivideZero";
pub const NULL_DEREF: &str = "core.NullDereference";
pub const UNDEF_DEREF: &str = "core.UndefDereference";
pub const MALLOC: &str = "unix.Malloc";

pub const ALLOCATED: u32 = 0;
pub const FREED: u32 = 1;
pub const ESCAPED: u32 = 2;

/// Where the offending value came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    None,
    Literal(String, Loc),
    Region(RegionId),
}

#[derive(Clone, Debug)]
pub struct Bug {
    pub checker: &'static str,
    pub message: String,
    pub loc: Loc,
    /// The divisor or pointer symbol before constant substitution.
    pub bug_sym: Option<SymId>,
    pub origin: Origin,
    pub state: State,
}

pub enum CheckOutcome {
    Continue(State),
    Bug(Box<Bug>),
}

/// A report as produced during exploration, before path reconstruction.
#[derive(Clone, Debug)]
pub struct RawReport {
    pub checker: &'static str,
    pub message: String,
    pub node: NodeId,
    pub file: String,
    pub loc: Loc,
    pub fn_usr: Usr,
    /// Grouping location for deduplication: the warning itself, or the allocation site for leaks.
    pub uniq: (String, Loc),
    pub bug_sym: Option<SymId>,
    pub depth: u32,
    pub origin: Origin,
    pub alloc: Option<RegionId>,
}

fn bug(checker: &'static str, message: &str, bug_sym: Option<SymId>, state: State) -> CheckOutcome {
    CheckOutcome::Bug(Box::new(Bug {
        checker,
        message: message.to_string(),
        loc: Loc::default(),
        bug_sym,
        origin: Origin::None,
        state,
    }))
}

/// Reports a divisor that must be zero; otherwise continues assuming it is not.
pub fn check_division(ctx: &mut Ctx, st: &State, divisor: SVal) -> CheckOutcome {
    let raw = divisor.as_sym();
    match simplify(st, divisor) {
        SVal::Int(0) | SVal::Null => bug(DIV_ZERO, "Division by zero", raw, st.clone()),
        v @ SVal::Sym(_) => match assume(ctx, st, v, true) {
            Some(nonzero) => CheckOutcome::Continue(nonzero),
            None => bug(DIV_ZERO, "Division by zero", raw, st.clone()),
        },
        _ => CheckOutcome::Continue(st.clone()),
    }
}

/// Reports null and undefined dereferences; a pointer that may be null is assumed non-null.
pub fn check_deref(ctx: &mut Ctx, st: &State, ptr: SVal) -> CheckOutcome {
    let raw = ptr.as_sym();
    match simplify(st, ptr) {
        SVal::Null | SVal::Int(0) => bug(NULL_DEREF, "Dereference of null pointer", raw, st.clone()),
        SVal::Undefined => bug(UNDEF_DEREF, "Dereference of undefined pointer value", None, st.clone()),
        v @ SVal::Sym(_) => match assume(ctx, st, v, true) {
            Some(nonnull) => CheckOutcome::Continue(nonnull),
            None => bug(NULL_DEREF, "Dereference of null pointer", raw, st.clone()),
        },
        _ => CheckOutcome::Continue(st.clone()),
    }
}

pub fn on_malloc(st: &State, r: RegionId) -> State {
    st.gdm_set(TAG_MALLOC, r.0, ALLOCATED)
}

pub fn on_free(ctx: &mut Ctx, st: &State, v: SVal) -> CheckOutcome {
    if let SVal::Loc(r) = simplify(st, v) {
        let base = ctx.regions.base(r);
        match st.gdm_get(TAG_MALLOC, base.0) {
            Some(FREED) => return bug(MALLOC, "Attempt to free released memory", None, st.clone()),
            Some(_) => return CheckOutcome::Continue(st.gdm_set(TAG_MALLOC, base.0, FREED)),
            None => {}
        }
    }
    CheckOutcome::Continue(st.clone())
}

/// Stops leak tracking for allocations reachable by code we cannot see.
pub fn on_escape(ctx: &Ctx, st: &State, regions: &[RegionId]) -> State {
    let mut st = st.clone();
    for r in regions {
        let base = ctx.regions.base(*r);
        if st.gdm_get(TAG_MALLOC, base.0) == Some(ALLOCATED) {
            st = st.gdm_set(TAG_MALLOC, base.0, ESCAPED);
        }
    }
    st
}

/// Allocations that became unreachable while still owned.
pub fn on_dead(dead: &[(u8, u32, u32)]) -> Vec<RegionId> {
    dead.iter()
        .filter(|(tag, _, v)| *tag == TAG_MALLOC && *v == ALLOCATED)
        .map(|(_, k, _)| RegionId(*k))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Assume,
    Call,
    Alloc,
    Origin,
    Warning,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Assume => "assume",
            EventKind::Call => "call",
            EventKind::Alloc => "alloc",
            EventKind::Origin => "origin",
            EventKind::Warning => "warning",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathEvent {
    pub kind: EventKind,
    pub file: String,
    pub loc: Loc,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BugReport {
    pub checker: String,
    pub message: String,
    pub file: String,
    pub loc: Loc,
    pub fn_usr: Usr,
    pub uniq: (String, Loc),
    pub path: Vec<PathEvent>,
    /// Filled in by the driver.
    pub issue_hash: String,
    pub suppressed: Option<String>,
    pub conditions: PathCondition,
}

/// Shortest path from a root to `end`, as (node, tag of the edge into the next node).
fn shortest_path(g: &Graph, end: NodeId) -> Vec<(NodeId, Option<EdgeTag>)> {
    let mut next: BTreeMap<NodeId, (NodeId, EdgeTag)> = BTreeMap::new();
    let mut seen = HashSet::from([end]);
    let mut queue = VecDeque::from([end]);
    let mut root = end;
    while let Some(n) = queue.pop_front() {
        if g.nodes[n].preds.is_empty() {
            root = n;
            break;
        }
        for (p, tag) in &g.nodes[n].preds {
            if seen.insert(*p) {
                next.insert(*p, (n, tag.clone()));
                queue.push_back(*p);
            }
        }
    }
    let mut out = Vec::new();
    let mut cur = root;
    while cur != end {
        let (n, tag) = next[&cur].clone();
        out.push((cur, Some(tag)));
        cur = n;
    }
    out.push((end, None));
    out
}

/// Reconstructs paths, adds notes, runs suppression visitors and collects path conditions.
pub fn build_reports(eng: &mut Engine<'_>, g: &Graph, raws: &[RawReport]) -> Vec<BugReport> {
    raws.iter().map(|r| build_report(eng, g, r)).collect()
}

fn build_report(eng: &mut Engine<'_>, g: &Graph, raw: &RawReport) -> BugReport {
    let path = shortest_path(g, raw.node);
    let mut events = Vec::new();
    let mut assumptions = Vec::new();
    let mut forcing = (false, false); // (deeper, at or above the warning frame)
    let origin_step = match raw.origin {
        Origin::Region(r) => last_store_change(g, &path, r),
        _ => None,
    };
    for (i, (n, tag)) in path.iter().enumerate() {
        let node = &g.nodes[*n];
        if let Some(r) = raw.alloc {
            if !node.state.gdm.contains_key(&(TAG_MALLOC, r.0))
                && path
                    .get(i + 1)
                    .is_some_and(|(m, _)| g.nodes[*m].state.gdm.contains_key(&(TAG_MALLOC, r.0)))
            {
                let (file, loc) = eng.alloc_sites.get(&r).cloned().unwrap_or((raw.file.clone(), raw.loc));
                events.push(PathEvent {
                    kind: EventKind::Alloc,
                    file,
                    loc,
                    message: "Memory is allocated".into(),
                });
            }
        }
        if origin_step == Some(i) {
            if let (Some((file, loc)), Origin::Region(r)) = (eng.point_loc(&node.point), &raw.origin) {
                let name = eng.ctx.regions.describe(*r);
                let val = path
                    .get(i + 1)
                    .and_then(|(m, _)| g.nodes[*m].state.store.get(r).copied())
                    .unwrap_or(SVal::Unknown);
                let message = match val {
                    SVal::Int(v) => format!("'{name}' set to {v}"),
                    SVal::Null => format!("'{name}' set to a null pointer value"),
                    _ => format!("Value assigned to '{name}'"),
                };
                events.push(PathEvent {
                    kind: EventKind::Origin,
                    file,
                    loc,
                    message,
                });
            }
        }
        match tag {
            Some(EdgeTag::Assume(a)) => {
                assumptions.push((a.cond, a.truth));
                if let Some(s) = raw.bug_sym {
                    if let Some(probe) = assume(&mut eng.ctx, &State::default(), a.cond, a.truth) {
                        if get_range(&eng.ctx, &probe, s) == RangeSet::single(0) {
                            if a.depth > raw.depth {
                                forcing.0 = true;
                            } else {
                                forcing.1 = true;
                            }
                        }
                    }
                }
                if a.both_feasible {
                    events.push(PathEvent {
                        kind: EventKind::Assume,
                        file: a.file.clone(),
                        loc: a.loc,
                        message: format!("Assuming '{}' is {}", a.text, a.truth),
                    });
                }
            }
            Some(EdgeTag::CallEnter) => {
                let (m, _) = &path[i + 1];
                let callee = &g.nodes[*m].point;
                let f = eng.fn_info(callee.frame().func);
                let caller = eng.fn_info(node.point.frame().func);
                events.push(PathEvent {
                    kind: EventKind::Call,
                    file: caller.decl.file.clone(),
                    loc: callee.frame().call_loc,
                    message: format!("Calling '{}'", f.decl.name),
                });
            }
            Some(EdgeTag::CallExit) => {
                let f = eng.fn_info(node.point.frame().func);
                let (m, _) = &path[i + 1];
                let caller = eng.fn_info(g.nodes[*m].point.frame().func);
                events.push(PathEvent {
                    kind: EventKind::Call,
                    file: caller.decl.file.clone(),
                    loc: node.point.frame().call_loc,
                    message: format!("Returning from '{}'", f.decl.name),
                });
            }
            _ => {}
        }
    }
    if let Origin::Literal(file, loc) = &raw.origin {
        events.push(PathEvent {
            kind: EventKind::Origin,
            file: file.clone(),
            loc: *loc,
            message: "The value 0 comes from this literal".into(),
        });
    }
    events.push(PathEvent {
        kind: EventKind::Warning,
        file: raw.file.clone(),
        loc: raw.loc,
        message: raw.message.clone(),
    });
    let end = &g.nodes[raw.node];
    debug_assert!(matches!(
        end.point.kind,
        PointKind::Sink(_) | PointKind::Stmt(_) | PointKind::CallExit
    ));
    let suppressed = (forcing.0 && !forcing.1).then(|| "inline defensive check".to_string());
    BugReport {
        checker: raw.checker.to_string(),
        message: raw.message.clone(),
        file: raw.file.clone(),
        loc: raw.loc,
        fn_usr: raw.fn_usr.clone(),
        uniq: raw.uniq.clone(),
        path: events,
        issue_hash: String::new(),
        suppressed,
        conditions: collect_path_conditions(&eng.ctx, &assumptions, &end.state),
    }
}

/// Index of the path step whose statement last changed the binding of `r`.
fn last_store_change(g: &Graph, path: &[(NodeId, Option<EdgeTag>)], r: RegionId) -> Option<usize> {
    (0..path.len().saturating_sub(1)).rev().find(|&i| {
        let a = &g.nodes[path[i].0];
        let b = &g.nodes[path[i + 1].0];
        matches!(a.point.kind, PointKind::Stmt(_)) && a.state.store.get(&r) != b.state.store.get(&r)
    })
}

fn event_locs(r: &BugReport) -> Vec<(String, Loc)> {
    r.path.iter().map(|e| (e.file.clone(), e.loc)).collect()
}

/// Keeps one report per (checker, location, function): unsuppressed first, then the fewest
/// path events, then the smallest sequence of event locations.
pub fn dedup_reports(reports: Vec<BugReport>) -> Vec<BugReport> {
    let mut groups: BTreeMap<(String, String, Loc, String), BugReport> = BTreeMap::new();
    for r in reports {
        let key = (r.checker.clone(), r.uniq.0.clone(), r.uniq.1, r.fn_usr.0.clone());
        let better = match groups.get(&key) {
            None => true,
            Some(old) => rank(&r) < rank(old),
        };
        if better {
            groups.insert(key, r);
        }
    }
    let mut out: Vec<BugReport> = groups.into_values().collect();
    out.sort_by(|a, b| {
        (&a.file, a.loc, &a.checker, &a.message, &a.fn_usr.0).cmp(&(&b.file, b.loc, &b.checker, &b.message, &b.fn_usr.0))
    });
    out
}

#[allow(clippy::type_complexity)]
fn rank(r: &BugReport) -> (bool, usize, Vec<(String, Loc)>, Vec<PathEvent>) {
    (r.suppressed.is_some(), r.path.len(), event_locs(r), r.path.clone())
}
