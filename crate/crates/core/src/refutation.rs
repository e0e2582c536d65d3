//! Bug-path refutation: an exact bounded-width decision procedure and an SMT-LIB exporter.
//!
//! Path conditions are kept as a small term language over integer symbols so they can be
//! decided at a reduced bit width and serialized independently of the analysis state.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::frontend::BinaryOp;
use crate::solver::{negate_cmp, Width};
use crate::symstate::{Ctx, SVal, State, SymId, SymKind};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    /// Index into [`PathCondition::symbols`].
    Sym(usize),
    Const(i64),
    Bin(Box<Term>, BinaryOp, Box<Term>),
}

impl Term {
    pub fn bin(l: Term, op: BinaryOp, r: Term) -> Term {
        Term::Bin(Box::new(l), op, Box::new(r))
    }

    fn max_sym(&self) -> Option<usize> {
        match self {
            Term::Sym(i) => Some(*i),
            Term::Const(_) => None,
            Term::Bin(l, _, r) => l.max_sym().max(r.max_sym()),
        }
    }

    fn visit(&self, f: &mut impl FnMut(&Term)) {
        f(self);
        if let Term::Bin(l, _, r) = self {
            l.visit(f);
            r.visit(f);
        }
    }
}

/// An interval bound of `None` means unbounded on that side.
pub type Interval = (Option<i64>, Option<i64>);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constraint {
    Rel(Term, BinaryOp, Term),
    InRanges(Term, Vec<Interval>),
}

impl Constraint {
    fn max_sym(&self) -> Option<usize> {
        match self {
            Constraint::Rel(l, _, r) => l.max_sym().max(r.max_sym()),
            Constraint::InRanges(t, _) => t.max_sym(),
        }
    }

    fn terms(&self) -> Vec<&Term> {
        match self {
            Constraint::Rel(l, _, r) => vec![l, r],
            Constraint::InRanges(t, _) => vec![t],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PathCondition {
    /// Display names of the symbols, indexed by `Term::Sym`.
    pub symbols: Vec<String>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Infeasible,
    /// A model, one value per symbol.
    Feasible(Vec<i64>),
    Unknown,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RefuteError {
    #[error("unsupported fragment: {0}")]
    UnsupportedFragment(String),
}

struct Collector<'a> {
    ctx: &'a Ctx,
    index: HashMap<SymId, usize>,
    pc: PathCondition,
}

impl Collector<'_> {
    fn term(&mut self, s: SymId) -> Term {
        match self.ctx.syms.kind(s) {
            SymKind::SymInt { lhs, op, rhs } => Term::bin(self.term(*lhs), *op, Term::Const(*rhs as i64)),
            SymKind::IntSym { lhs, op, rhs } => Term::bin(Term::Const(*lhs as i64), *op, self.term(*rhs)),
            SymKind::SymSym { lhs, op, rhs } => {
                let l = self.term(*lhs);
                Term::bin(l, *op, self.term(*rhs))
            }
            _ => {
                let next = self.index.len();
                let i = *self.index.entry(s).or_insert(next);
                if i == self.pc.symbols.len() {
                    self.pc.symbols.push(self.ctx.sym_text(s));
                }
                Term::Sym(i)
            }
        }
    }

    fn push(&mut self, c: Constraint) {
        if !self.pc.constraints.contains(&c) {
            self.pc.constraints.push(c);
        }
    }
}

/// Gathers the branch assumptions of a path together with the range constraints of its final state.
pub fn collect_path_conditions(ctx: &Ctx, assumptions: &[(SVal, bool)], end: &State) -> PathCondition {
    let mut c = Collector {
        ctx,
        index: HashMap::new(),
        pc: PathCondition::default(),
    };
    for (cond, truth) in assumptions {
        let SVal::Sym(s) = cond else { continue };
        let constraint = match ctx.syms.kind(*s).clone() {
            SymKind::SymInt { op, .. } | SymKind::IntSym { op, .. } | SymKind::SymSym { op, .. }
                if op.is_comparison() =>
            {
                let Term::Bin(l, _, r) = c.term(*s) else { unreachable!() };
                let op = if *truth { op } else { negate_cmp(op) };
                Constraint::Rel(*l, op, *r)
            }
            _ => {
                let t = c.term(*s);
                Constraint::Rel(t, if *truth { BinaryOp::Ne } else { BinaryOp::Eq }, Term::Const(0))
            }
        };
        c.push(constraint);
    }
    let w = ctx.width;
    for (s, rs) in end.constraints.iter() {
        let ivs: Vec<Interval> = rs
            .intervals()
            .iter()
            .map(|&(lo, hi)| ((lo != w.min()).then_some(lo), (hi != w.max()).then_some(hi)))
            .collect();
        if ivs == [(None, None)] {
            continue;
        }
        let t = c.term(*s);
        c.push(Constraint::InRanges(t, ivs));
    }
    c.pc
}

fn supported(op: BinaryOp) -> bool {
    !matches!(op, BinaryOp::LAnd | BinaryOp::LOr | BinaryOp::Assign)
}

fn check_fragment(pc: &PathCondition, w: Width) -> Result<(), RefuteError> {
    let mut err = None;
    for c in &pc.constraints {
        if let Constraint::Rel(_, op, _) = c {
            if !op.is_comparison() {
                err = Some(format!("non-relational operator '{}' at top level", op.spelling()));
            }
        }
        if let Constraint::InRanges(_, ivs) = c {
            for v in ivs.iter().flat_map(|(a, b)| [a, b]).flatten() {
                if !w.contains(*v) {
                    err = Some(format!("bound {v} does not fit in {} bits", w.0));
                }
            }
        }
        for t in c.terms() {
            t.visit(&mut |t| match t {
                Term::Const(v) if !w.contains(*v) => err = Some(format!("constant {v} does not fit in {} bits", w.0)),
                Term::Bin(_, op, _) if !supported(*op) => err = Some(format!("operator '{}'", op.spelling())),
                _ => {}
            });
        }
    }
    err.map_or(Ok(()), |e| Err(RefuteError::UnsupportedFragment(e)))
}

/// Evaluates with two's-complement wraparound; `None` for division by zero.
pub fn eval_term(t: &Term, vals: &[i64], w: Width) -> Option<i64> {
    Some(match t {
        Term::Sym(i) => vals[*i],
        Term::Const(c) => *c,
        Term::Bin(l, op, r) => {
            let a = eval_term(l, vals, w)?;
            let b = eval_term(r, vals, w)?;
            apply(*op, a, b, w)?
        }
    })
}

fn apply(op: BinaryOp, a: i64, b: i64, w: Width) -> Option<i64> {
    use BinaryOp::*;
    Some(match op {
        Add => w.wrap(a + b),
        Sub => w.wrap(a - b),
        Mul => w.wrap(a * b),
        Div if b == 0 => return None,
        Rem if b == 0 => return None,
        Div => w.wrap(a / b),
        Rem => w.wrap(a % b),
        Lt => (a < b) as i64,
        Le => (a <= b) as i64,
        Gt => (a > b) as i64,
        Ge => (a >= b) as i64,
        Eq => (a == b) as i64,
        Ne => (a != b) as i64,
        LAnd => (a != 0 && b != 0) as i64,
        LOr => (a != 0 || b != 0) as i64,
        Assign => b,
    })
}

pub fn holds(c: &Constraint, vals: &[i64], w: Width) -> bool {
    match c {
        Constraint::Rel(l, op, r) => {
            matches!((eval_term(l, vals, w), eval_term(r, vals, w)), (Some(a), Some(b)) if apply(*op, a, b, w) == Some(1))
        }
        Constraint::InRanges(t, ivs) => eval_term(t, vals, w).is_some_and(|v| {
            ivs.iter()
                .any(|(lo, hi)| lo.is_none_or(|lo| v >= lo) && hi.is_none_or(|hi| v <= hi))
        }),
    }
}

/// Candidate assignments tried before the search gives up. Large enough for three symbols at
/// width 8, too small for two at width 16.
pub const SEARCH_BUDGET: u64 = 1 << 25;

/// Exact satisfiability at width `w` by exhaustive enumeration in lexicographic order from the
/// minimum value. Gives up with `Unknown` above `max_symbols` symbols, outside the fragment, or
/// after [`SEARCH_BUDGET`] candidates.
pub fn refute_exact(pc: &PathCondition, w: Width, max_symbols: usize) -> Verdict {
    let n = pc.symbols.len();
    if n > max_symbols || check_fragment(pc, w).is_err() {
        return Verdict::Unknown;
    }
    // Constraints are checked as soon as their highest symbol is assigned.
    let mut buckets: Vec<Vec<&Constraint>> = vec![Vec::new(); n + 1];
    for c in &pc.constraints {
        buckets[c.max_sym().map_or(0, |i| i + 1)].push(c);
    }
    if !buckets[0].iter().all(|c| holds(c, &[], w)) {
        return Verdict::Infeasible;
    }
    let mut vals = vec![w.min(); n];
    if n == 0 {
        return Verdict::Feasible(vals);
    }
    let mut budget = SEARCH_BUDGET;
    match search(&buckets, &mut vals, 0, w, &mut budget) {
        Some(true) => Verdict::Feasible(vals),
        Some(false) => Verdict::Infeasible,
        None => Verdict::Unknown,
    }
}

/// `None` once the budget runs out.
fn search(buckets: &[Vec<&Constraint>], vals: &mut [i64], i: usize, w: Width, budget: &mut u64) -> Option<bool> {
    for v in w.min()..=w.max() {
        if *budget == 0 {
            return None;
        }
        *budget -= 1;
        vals[i] = v;
        if buckets[i + 1].iter().all(|c| holds(c, vals, w))
            && (i + 1 == vals.len() || search(buckets, vals, i + 1, w, budget)?)
        {
            return Some(true);
        }
    }
    Some(false)
}

fn hex(v: i64, w: Width) -> String {
    if w.0 % 4 == 0 {
        let digits = (w.0 / 4) as usize;
        let u = (v as u64) & ((1u64 << w.0) - 1);
        format!("#x{u:0digits$x}")
    } else {
        let u = (v as u64) & ((1u64 << w.0) - 1);
        format!("#b{u:0width$b}", width = w.0 as usize)
    }
}

fn smt_cmp(op: BinaryOp, a: &str, b: &str) -> String {
    match op {
        BinaryOp::Eq => format!("(= {a} {b})"),
        BinaryOp::Ne => format!("(distinct {a} {b})"),
        BinaryOp::Lt => format!("(bvslt {a} {b})"),
        BinaryOp::Le => format!("(bvsle {a} {b})"),
        BinaryOp::Gt => format!("(bvsgt {a} {b})"),
        _ => format!("(bvsge {a} {b})"),
    }
}

fn smt_term(t: &Term, w: Width, guards: &mut BTreeSet<String>) -> Result<String, RefuteError> {
    Ok(match t {
        Term::Sym(i) => format!("s{i}"),
        Term::Const(c) => hex(*c, w),
        Term::Bin(l, op, r) => {
            let a = smt_term(l, w, guards)?;
            let b = smt_term(r, w, guards)?;
            let f = match op {
                BinaryOp::Add => "bvadd",
                BinaryOp::Sub => "bvsub",
                BinaryOp::Mul => "bvmul",
                BinaryOp::Div | BinaryOp::Rem => {
                    guards.insert(format!("(distinct {b} {})", hex(0, w)));
                    if *op == BinaryOp::Div {
                        "bvsdiv"
                    } else {
                        "bvsrem"
                    }
                }
                op if op.is_comparison() => {
                    return Ok(format!("(ite {} {} {})", smt_cmp(*op, &a, &b), hex(1, w), hex(0, w)));
                }
                op => return Err(RefuteError::UnsupportedFragment(format!("operator '{}'", op.spelling()))),
            };
            format!("({f} {a} {b})")
        }
    })
}

fn smt_interval(t: &str, iv: Interval, w: Width) -> String {
    match iv {
        (None, None) => "true".into(),
        (Some(lo), Some(hi)) if lo == hi => format!("(= {t} {})", hex(lo, w)),
        (Some(lo), Some(hi)) => format!("(and (bvsge {t} {}) (bvsle {t} {}))", hex(lo, w), hex(hi, w)),
        (Some(lo), None) if lo > w.min() => format!("(bvsgt {t} {})", hex(lo - 1, w)),
        (Some(lo), None) => format!("(bvsge {t} {})", hex(lo, w)),
        (None, Some(hi)) if hi < w.max() => format!("(bvslt {t} {})", hex(hi + 1, w)),
        (None, Some(hi)) => format!("(bvsle {t} {})", hex(hi, w)),
    }
}

/// Serializes a path condition as an SMT-LIB 2 QF_BV script.
pub fn emit_smtlib(pc: &PathCondition, w: Width) -> Result<String, RefuteError> {
    check_fragment(pc, w)?;
    let mut out = String::new();
    for i in 0..pc.symbols.len() {
        let _ = writeln!(out, "(declare-const s{i} (_ BitVec {}))", w.0);
    }
    let mut guards = BTreeSet::new();
    let mut asserts: Vec<String> = Vec::new();
    for c in &pc.constraints {
        let body = match c {
            Constraint::Rel(l, op, r) => {
                let a = smt_term(l, w, &mut guards)?;
                let b = smt_term(r, w, &mut guards)?;
                smt_cmp(*op, &a, &b)
            }
            Constraint::InRanges(t, ivs) => {
                let t = smt_term(t, w, &mut guards)?;
                let parts: Vec<String> = ivs.iter().map(|iv| smt_interval(&t, *iv, w)).collect();
                match parts.len() {
                    0 => "false".into(),
                    1 => parts[0].clone(),
                    _ => format!("(or {})", parts.join(" ")),
                }
            }
        };
        let line = format!("(assert {body})");
        if !asserts.contains(&line) {
            asserts.push(line);
        }
    }
    for g in guards {
        asserts.push(format!("(assert {g})"));
    }
    for a in asserts {
        out.push_str(&a);
        out.push('\n');
    }
    out.push_str("(check-sat)\n(get-model)\n");
    Ok(out)
}
