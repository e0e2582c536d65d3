//! Range-based constraint manager and value folding.

pub mod rangeset;

pub use rangeset::{RangeSet, Width};

use crate::frontend::{BinaryOp, UnaryOp};
use crate::memmodel::RegionKind;
use crate::symstate::{Ctx, SVal, State, SymId, SymKind};

/// Current range of `s`: its recorded constraint, else {0,1} for comparisons, else everything.
pub fn get_range(ctx: &Ctx, st: &State, s: SymId) -> RangeSet {
    if let Some(r) = st.constraints.get(&s) {
        return r.clone();
    }
    if ctx.syms.is_boolean(s) {
        RangeSet::interval(0, 1)
    } else {
        RangeSet::full(ctx.width)
    }
}

pub fn perfectly_constrained(st: &State, s: SymId) -> Option<i64> {
    st.constraints.get(&s).and_then(|r| r.single_value())
}

/// Intersects the range of `s` with `r`. `None` when the result is empty.
pub fn constrain(ctx: &Ctx, st: &State, s: SymId, r: &RangeSet) -> Option<State> {
    let cur = get_range(ctx, st, s);
    let new = cur.intersect(r);
    if new.is_empty() {
        return None;
    }
    if new == cur {
        return Some(st.clone());
    }
    Some(State {
        constraints: st.constraints.insert(s, new),
        ..st.clone()
    })
}

/// Values `v` with `v op c` true, for comparison `op`.
pub fn range_for(op: BinaryOp, c: i64, w: Width) -> Option<RangeSet> {
    if !w.contains(c) {
        return None;
    }
    Some(match op {
        BinaryOp::Eq => RangeSet::single(c),
        BinaryOp::Ne => RangeSet::single(c).complement(w),
        BinaryOp::Lt => RangeSet::interval(w.min(), c - 1),
        BinaryOp::Le => RangeSet::interval(w.min(), c),
        BinaryOp::Gt => RangeSet::interval(c + 1, w.max()),
        BinaryOp::Ge => RangeSet::interval(c, w.max()),
        _ => return None,
    })
}

pub fn negate_cmp(op: BinaryOp) -> BinaryOp {
    match op {
        BinaryOp::Eq => BinaryOp::Ne,
        BinaryOp::Ne => BinaryOp::Eq,
        BinaryOp::Lt => BinaryOp::Ge,
        BinaryOp::Le => BinaryOp::Gt,
        BinaryOp::Gt => BinaryOp::Le,
        BinaryOp::Ge => BinaryOp::Lt,
        o => o,
    }
}

/// The comparison with operands exchanged: `a op b` iff `b flip(op) a`.
pub fn flip_cmp(op: BinaryOp) -> BinaryOp {
    match op {
        BinaryOp::Lt => BinaryOp::Gt,
        BinaryOp::Le => BinaryOp::Ge,
        BinaryOp::Gt => BinaryOp::Lt,
        BinaryOp::Ge => BinaryOp::Le,
        o => o,
    }
}

/// Restricts `s` to `r`, pushing the restriction through additive offsets and negation.
fn constrain_expr(ctx: &mut Ctx, st: &State, s: SymId, r: RangeSet) -> Option<State> {
    let w = ctx.width;
    match ctx.syms.kind(s).clone() {
        SymKind::SymInt { lhs, op: BinaryOp::Add, rhs } => constrain_expr(ctx, st, lhs, r.shift(-(rhs as i64), w)),
        SymKind::SymInt { lhs, op: BinaryOp::Sub, rhs } => constrain_expr(ctx, st, lhs, r.shift(rhs as i64, w)),
        SymKind::IntSym { lhs, op: BinaryOp::Add, rhs } => constrain_expr(ctx, st, rhs, r.shift(-(lhs as i64), w)),
        SymKind::IntSym { lhs, op: BinaryOp::Sub, rhs } => {
            constrain_expr(ctx, st, rhs, r.negate(w).shift(lhs as i64, w))
        }
        _ if ctx.syms.is_boolean(s) => {
            let r = r.intersect(&RangeSet::interval(0, 1));
            match (r.contains(0), r.contains(1)) {
                (false, false) => None,
                (true, true) => Some(st.clone()),
                (can_false, _) => assume_sym(ctx, st, s, !can_false),
            }
        }
        _ => constrain(ctx, st, s, &r),
    }
}

fn assume_sym(ctx: &mut Ctx, st: &State, s: SymId, truth: bool) -> Option<State> {
    let w = ctx.width;
    let st = match ctx.syms.kind(s).clone() {
        SymKind::SymInt { lhs, op, rhs } if op.is_comparison() => {
            let op = if truth { op } else { negate_cmp(op) };
            match range_for(op, rhs as i64, w) {
                Some(r) => constrain_expr(ctx, st, lhs, r)?,
                None => {
                    ctx.bump("unsupported_assumptions");
                    st.clone()
                }
            }
        }
        SymKind::IntSym { lhs, op, rhs } if op.is_comparison() => {
            let op = if truth { flip_cmp(op) } else { negate_cmp(flip_cmp(op)) };
            match range_for(op, lhs as i64, w) {
                Some(r) => constrain_expr(ctx, st, rhs, r)?,
                None => {
                    ctx.bump("unsupported_assumptions");
                    st.clone()
                }
            }
        }
        SymKind::SymSym { lhs, op, rhs } if op.is_comparison() => {
            let op = if truth { op } else { negate_cmp(op) };
            match op {
                BinaryOp::Eq | BinaryOp::Ne => {
                    let d = ctx.sym(SymKind::SymSym {
                        lhs: rhs,
                        op: BinaryOp::Sub,
                        rhs: lhs,
                    });
                    let zero = RangeSet::single(0);
                    let r = if op == BinaryOp::Eq { zero } else { zero.complement(w) };
                    constrain(ctx, st, d, &r)?
                }
                _ => {
                    let (l, r, holds) = match op {
                        BinaryOp::Lt => (lhs, rhs, true),
                        BinaryOp::Gt => (rhs, lhs, true),
                        BinaryOp::Ge => (lhs, rhs, false),
                        _ => (rhs, lhs, false),
                    };
                    let canon = ctx.sym(SymKind::SymSym {
                        lhs: l,
                        op: BinaryOp::Lt,
                        rhs: r,
                    });
                    constrain(ctx, st, canon, &RangeSet::single(i64::from(holds)))?
                }
            }
        }
        _ => {
            let zero = RangeSet::single(0);
            let r = if truth { zero.complement(w) } else { zero };
            constrain(ctx, st, s, &r)?
        }
    };
    // a comparison that is itself tracked must agree with the new outcome
    if ctx.syms.is_boolean(s) {
        return constrain(ctx, &st, s, &RangeSet::single(i64::from(truth)));
    }
    Some(st)
}

/// The state in which `v` is true (or false), or `None` if that is infeasible.
pub fn assume(ctx: &mut Ctx, st: &State, v: SVal, truth: bool) -> Option<State> {
    match v {
        SVal::Int(i) => ((i != 0) == truth).then(|| st.clone()),
        SVal::Loc(_) => truth.then(|| st.clone()),
        SVal::Null => (!truth).then(|| st.clone()),
        SVal::Unknown | SVal::Undefined => {
            ctx.bump("unsupported_assumptions");
            Some(st.clone())
        }
        SVal::Sym(s) => assume_sym(ctx, st, s, truth),
    }
}

/// Both outcomes of `v`; at least one is `Some` for a consistent state.
pub fn assume_dual(ctx: &mut Ctx, st: &State, v: SVal) -> (Option<State>, Option<State>) {
    (assume(ctx, st, v, true), assume(ctx, st, v, false))
}

/// Whether `v` may equal `val` in `st`.
pub fn can_be_value(ctx: &mut Ctx, st: &State, v: SVal, val: i32) -> bool {
    match v {
        SVal::Int(i) => i == val,
        SVal::Null => val == 0,
        SVal::Loc(_) => val != 0,
        SVal::Unknown | SVal::Undefined => true,
        SVal::Sym(s) => {
            let eq = ctx.sym(SymKind::SymInt {
                lhs: s,
                op: BinaryOp::Eq,
                rhs: val,
            });
            assume_sym(ctx, st, eq, true).is_some()
        }
    }
}

/// Replaces a symbol whose range is a single value by that value.
pub fn simplify(st: &State, v: SVal) -> SVal {
    match v {
        SVal::Sym(s) => match perfectly_constrained(st, s) {
            Some(c) => SVal::Int(c as i32),
            None => v,
        },
        v => v,
    }
}

/// Arithmetic is carried out in i64 and wrapped to the context width.
fn concrete(op: BinaryOp, a: i32, b: i32, w: Width) -> SVal {
    let bool_val = |c: bool| SVal::Int(i32::from(c));
    let (x, y) = (i64::from(a), i64::from(b));
    let int = |v: i64| SVal::Int(w.wrap(v) as i32);
    match op {
        BinaryOp::Add => int(x + y),
        BinaryOp::Sub => int(x - y),
        BinaryOp::Mul => int(x * y),
        BinaryOp::Div if b == 0 => SVal::Undefined,
        BinaryOp::Rem if b == 0 => SVal::Undefined,
        BinaryOp::Div => int(x / y),
        BinaryOp::Rem => int(x % y),
        BinaryOp::Lt => bool_val(a < b),
        BinaryOp::Le => bool_val(a <= b),
        BinaryOp::Gt => bool_val(a > b),
        BinaryOp::Ge => bool_val(a >= b),
        BinaryOp::Eq => bool_val(a == b),
        BinaryOp::Ne => bool_val(a != b),
        BinaryOp::LAnd => bool_val(a != 0 && b != 0),
        BinaryOp::LOr => bool_val(a != 0 || b != 0),
        BinaryOp::Assign => SVal::Unknown,
    }
}

fn sym_int(ctx: &mut Ctx, s: SymId, op: BinaryOp, c: i32) -> SVal {
    match op {
        BinaryOp::Sub if c != i32::MIN => return sym_int(ctx, s, BinaryOp::Add, -c),
        BinaryOp::Add if c == 0 => return SVal::Sym(s),
        BinaryOp::Mul | BinaryOp::Div if c == 1 => return SVal::Sym(s),
        BinaryOp::Mul if c == 0 => return SVal::Int(0),
        BinaryOp::Add => {
            if let SymKind::SymInt {
                lhs,
                op: BinaryOp::Add,
                rhs,
            } = ctx.syms.kind(s).clone()
            {
                return sym_int(ctx, lhs, BinaryOp::Add, rhs.wrapping_add(c));
            }
        }
        _ => {}
    }
    SVal::Sym(ctx.sym(SymKind::SymInt { lhs: s, op, rhs: c }))
}

fn loc_compare(ctx: &Ctx, op: BinaryOp, a: Option<crate::memmodel::RegionId>, b: Option<crate::memmodel::RegionId>) -> SVal {
    let symbolic = |r: crate::memmodel::RegionId| matches!(ctx.regions.kind(ctx.regions.base(r)), RegionKind::Sym { .. });
    let equal = match (a, b) {
        (Some(x), Some(y)) if x == y => true,
        (Some(x), Some(y)) if symbolic(x) || symbolic(y) => return SVal::Unknown,
        (Some(_), Some(_)) => false,
        (None, None) => true,
        _ => false,
    };
    match op {
        BinaryOp::Eq => SVal::Int(i32::from(equal)),
        BinaryOp::Ne => SVal::Int(i32::from(!equal)),
        _ => SVal::Unknown,
    }
}

/// Evaluates `l op r`, folding what can be folded.
pub fn eval_binary(ctx: &mut Ctx, st: &State, op: BinaryOp, l: SVal, r: SVal) -> SVal {
    let l = simplify(st, l);
    let r = simplify(st, r);
    fold_binary(ctx, st, op, l, r)
}

/// Like [`eval_binary`] but keeps perfectly constrained symbols symbolic.
pub fn eval_binary_raw(ctx: &mut Ctx, op: BinaryOp, l: SVal, r: SVal) -> SVal {
    fold_binary(ctx, &State::default(), op, l, r)
}

fn fold_binary(ctx: &mut Ctx, st: &State, op: BinaryOp, l: SVal, r: SVal) -> SVal {
    match (l, r) {
        (SVal::Undefined, _) | (_, SVal::Undefined) => SVal::Undefined,
        (SVal::Loc(a), SVal::Loc(b)) => {
            if op == BinaryOp::Sub {
                return match (ctx.regions.kind(a), ctx.regions.kind(b)) {
                    _ if a == b => SVal::Int(0),
                    (
                        RegionKind::Element {
                            index: SVal::Int(i),
                            parent: p,
                        },
                        RegionKind::Element {
                            index: SVal::Int(j),
                            parent: q,
                        },
                    ) if p == q => SVal::Int(ctx.width.wrap(i64::from(*i) - i64::from(*j)) as i32),
                    _ => SVal::Unknown,
                };
            }
            loc_compare(ctx, op, Some(a), Some(b))
        }
        (SVal::Loc(a), SVal::Null | SVal::Int(0)) => loc_compare(ctx, op, Some(a), None),
        (SVal::Null | SVal::Int(0), SVal::Loc(b)) => loc_compare(ctx, op, None, Some(b)),
        (SVal::Loc(_), _) | (_, SVal::Loc(_)) => SVal::Unknown,
        (SVal::Unknown, _) | (_, SVal::Unknown) => SVal::Unknown,
        (SVal::Null, x) => fold_binary(ctx, st, op, SVal::Int(0), x),
        (x, SVal::Null) => fold_binary(ctx, st, op, x, SVal::Int(0)),
        (SVal::Int(a), SVal::Int(b)) => concrete(op, a, b, ctx.width),
        (SVal::Sym(s), SVal::Int(c)) => sym_int(ctx, s, op, c),
        (SVal::Int(c), SVal::Sym(s)) => match op {
            BinaryOp::Add | BinaryOp::Mul => sym_int(ctx, s, op, c),
            o if o.is_comparison() => sym_int(ctx, s, flip_cmp(o), c),
            _ => SVal::Sym(ctx.sym(SymKind::IntSym { lhs: c, op, rhs: s })),
        },
        (SVal::Sym(a), SVal::Sym(b)) => {
            if a == b {
                match op {
                    BinaryOp::Sub => return SVal::Int(0),
                    BinaryOp::Eq | BinaryOp::Le | BinaryOp::Ge => return SVal::Int(1),
                    BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Gt => return SVal::Int(0),
                    _ => {}
                }
            }
            SVal::Sym(ctx.sym(SymKind::SymSym { lhs: a, op, rhs: b }))
        }
    }
}

pub fn eval_unary(ctx: &mut Ctx, st: &State, op: UnaryOp, v: SVal) -> SVal {
    let v = simplify(st, v);
    eval_unary_raw(ctx, op, v)
}

pub fn eval_unary_raw(ctx: &mut Ctx, op: UnaryOp, v: SVal) -> SVal {
    match (op, v) {
        (_, SVal::Undefined) => SVal::Undefined,
        (UnaryOp::Not, SVal::Int(i)) => SVal::Int(i32::from(i == 0)),
        (UnaryOp::Not, SVal::Null) => SVal::Int(1),
        (UnaryOp::Not, SVal::Loc(_)) => SVal::Int(0),
        (UnaryOp::Not, SVal::Sym(s)) => match ctx.syms.kind(s).clone() {
            SymKind::SymInt { lhs, op, rhs } if op.is_comparison() => {
                SVal::Sym(ctx.sym(SymKind::SymInt {
                    lhs,
                    op: negate_cmp(op),
                    rhs,
                }))
            }
            SymKind::SymSym { lhs, op, rhs } if op.is_comparison() => {
                SVal::Sym(ctx.sym(SymKind::SymSym {
                    lhs,
                    op: negate_cmp(op),
                    rhs,
                }))
            }
            _ => sym_int(ctx, s, BinaryOp::Eq, 0),
        },
        (UnaryOp::Neg, SVal::Int(i)) => SVal::Int(ctx.width.wrap(-i64::from(i)) as i32),
        (UnaryOp::Neg, SVal::Null) => SVal::Int(0),
        (UnaryOp::Neg, SVal::Sym(s)) => SVal::Sym(ctx.sym(SymKind::IntSym {
            lhs: 0,
            op: BinaryOp::Sub,
            rhs: s,
        })),
        _ => SVal::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::VarId;
    use crate::memmodel::MemSpace;

    fn param(ctx: &mut Ctx, i: u32) -> SymId {
        let r = ctx.regions.var(VarId(i), MemSpace::Stack(0), true);
        ctx.region_value(r)
    }

    #[test]
    fn path_sensitivity_ranges() {
        let mut ctx = Ctx::new();
        let x = param(&mut ctx, 0);
        let st = State::default();
        let gt2 = eval_binary(&mut ctx, &st, BinaryOp::Gt, SVal::Sym(x), SVal::Int(2));
        let (t, f) = assume_dual(&mut ctx, &st, gt2);
        let f = f.unwrap();
        assert_eq!(t.unwrap().constraints.get(&x), Some(&RangeSet::interval(3, i32::MAX as i64)));
        let gt5 = eval_binary(&mut ctx, &f, BinaryOp::Gt, SVal::Sym(x), SVal::Int(5));
        assert!(assume(&mut ctx, &f, gt5, true).is_none());
        assert!(assume(&mut ctx, &f, gt5, false).is_some());
    }

    #[test]
    fn offsets_wrap() {
        let mut ctx = Ctx::new();
        let x = param(&mut ctx, 0);
        let st = State::default();
        let xm = eval_binary(&mut ctx, &st, BinaryOp::Sub, SVal::Sym(x), SVal::Int(42));
        let z = eval_binary(&mut ctx, &st, BinaryOp::Eq, xm, SVal::Int(0));
        let st = assume(&mut ctx, &st, z, true).unwrap();
        assert_eq!(simplify(&st, SVal::Sym(x)), SVal::Int(42));
        assert_eq!(eval_binary(&mut ctx, &st, BinaryOp::Sub, SVal::Sym(x), SVal::Int(42)), SVal::Int(0));
    }

    #[test]
    fn folding_respects_narrow_widths() {
        let mut ctx = Ctx::with_width(Width(8));
        let x = param(&mut ctx, 0);
        let eq = eval_binary(&mut ctx, &State::default(), BinaryOp::Eq, SVal::Sym(x), SVal::Int(127));
        let st = assume(&mut ctx, &State::default(), eq, true).unwrap();
        let next = eval_binary(&mut ctx, &st, BinaryOp::Add, SVal::Sym(x), SVal::Int(1));
        assert_eq!(next, SVal::Int(-128));
        assert_eq!(eval_unary(&mut ctx, &st, UnaryOp::Neg, SVal::Int(-128)), SVal::Int(-128));
    }

    #[test]
    fn difference_symbols_link_equality_tests() {
        let mut ctx = Ctx::new();
        let a = param(&mut ctx, 0);
        let b = param(&mut ctx, 1);
        let st = State::default();
        let d = eval_binary(&mut ctx, &st, BinaryOp::Sub, SVal::Sym(a), SVal::Sym(b));
        let z = eval_binary(&mut ctx, &st, BinaryOp::Eq, d, SVal::Int(0));
        let st = assume(&mut ctx, &st, z, true).unwrap();
        let ne = eval_binary(&mut ctx, &st, BinaryOp::Ne, SVal::Sym(a), SVal::Sym(b));
        // the range solver does not relate (a - b) to (b - a), so both remain open
        assert!(assume(&mut ctx, &st, ne, true).is_some());
        assert!(assume(&mut ctx, &st, ne, false).is_some());
    }

    #[test]
    fn negation_of_comparisons() {
        let mut ctx = Ctx::new();
        let x = param(&mut ctx, 0);
        let st = State::default();
        let lt = eval_binary(&mut ctx, &st, BinaryOp::Lt, SVal::Sym(x), SVal::Int(5));
        let not = eval_unary(&mut ctx, &st, UnaryOp::Not, lt);
        let st = assume(&mut ctx, &st, not, true).unwrap();
        assert!(assume(&mut ctx, &st, lt, true).is_none());
        assert!(!can_be_value(&mut ctx, &st, SVal::Sym(x), 4));
        assert!(can_be_value(&mut ctx, &st, SVal::Sym(x), 5));
    }

    #[test]
    fn unknown_assumptions_are_counted() {
        let mut ctx = Ctx::new();
        let st = State::default();
        assert!(assume(&mut ctx, &st, SVal::Unknown, true).is_some());
        assert_eq!(ctx.stats.get("unsupported_assumptions"), Some(&1));
    }
}
