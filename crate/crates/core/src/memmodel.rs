//! Region hierarchy and the region store.
//!
//! Regions are interned per analysis. Every region except a memory space has exactly
//! one parent; the top-most non-space ancestor is its base region.

use std::collections::{BTreeSet, HashMap};

use crate::frontend::{ExprId, VarId};
use crate::symstate::{Ctx, SVal, State, SymId};
#[cfg(test)]
use crate::symstate::SymKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MemSpace {
    /// Locals and parameters of the frame at this depth.
    Stack(u32),
    Heap,
    Global,
    Unknown,
}

/// Identifies one activation of a function on a path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FrameKey {
    pub depth: u32,
    pub call_site: Option<ExprId>,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Space(MemSpace),
    Var { var: VarId, space: RegionId, param: bool },
    Field { field: String, parent: RegionId },
    Element { index: SVal, parent: RegionId },
    Alloc { site: ExprId, key: FrameKey, parent: RegionId },
    /// The pointee of a symbolic pointer.
    Sym { sym: SymId, parent: RegionId },
}

#[derive(Default)]
pub struct Regions {
    kinds: Vec<RegionKind>,
    ids: HashMap<RegionKind, RegionId>,
    sym_regions: HashMap<SymId, RegionId>,
    names: HashMap<VarId, String>,
    elements: u64,
}

impl Regions {
    fn intern(&mut self, kind: RegionKind) -> RegionId {
        if let Some(r) = self.ids.get(&kind) {
            return *r;
        }
        let r = RegionId(self.kinds.len() as u32);
        if matches!(kind, RegionKind::Element { .. }) {
            self.elements += 1;
        }
        if let RegionKind::Sym { sym, .. } = kind {
            self.sym_regions.insert(sym, r);
        }
        self.kinds.push(kind.clone());
        self.ids.insert(kind, r);
        r
    }

    pub fn kind(&self, r: RegionId) -> &RegionKind {
        &self.kinds[r.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn element_count(&self) -> u64 {
        self.elements
    }

    pub fn set_name(&mut self, v: VarId, name: &str) {
        self.names.entry(v).or_insert_with(|| name.to_string());
    }

    pub fn space(&mut self, ms: MemSpace) -> RegionId {
        self.intern(RegionKind::Space(ms))
    }

    pub fn var(&mut self, var: VarId, ms: MemSpace, param: bool) -> RegionId {
        let space = self.space(ms);
        self.intern(RegionKind::Var { var, space, param })
    }

    pub fn field(&mut self, parent: RegionId, field: &str) -> RegionId {
        self.intern(RegionKind::Field {
            field: field.to_string(),
            parent,
        })
    }

    /// Element `index` relative to `base`. Indexing an element region offsets it instead of nesting.
    pub fn element(&mut self, base: RegionId, index: SVal) -> RegionId {
        if let RegionKind::Element { index: prev, parent } = self.kind(base).clone() {
            let combined = match (prev, index) {
                (SVal::Int(0), i) => i,
                (i, SVal::Int(0)) => i,
                (SVal::Int(a), SVal::Int(b)) => SVal::Int(a.wrapping_add(b)),
                _ => SVal::Unknown,
            };
            return self.intern(RegionKind::Element { index: combined, parent });
        }
        self.intern(RegionKind::Element { index, parent: base })
    }

    pub fn alloc(&mut self, site: ExprId, key: FrameKey) -> RegionId {
        let parent = self.space(MemSpace::Heap);
        self.intern(RegionKind::Alloc { site, key, parent })
    }

    pub fn sym_region(&mut self, sym: SymId) -> RegionId {
        let parent = self.space(MemSpace::Unknown);
        self.intern(RegionKind::Sym { sym, parent })
    }

    pub fn existing_sym_region(&self, sym: SymId) -> Option<RegionId> {
        self.sym_regions.get(&sym).copied()
    }

    pub fn is_space(&self, r: RegionId) -> bool {
        matches!(self.kind(r), RegionKind::Space(_))
    }

    pub fn parent(&self, r: RegionId) -> Option<RegionId> {
        match self.kind(r) {
            RegionKind::Space(_) => None,
            RegionKind::Var { space, .. } => Some(*space),
            RegionKind::Field { parent, .. }
            | RegionKind::Element { parent, .. }
            | RegionKind::Alloc { parent, .. }
            | RegionKind::Sym { parent, .. } => Some(*parent),
        }
    }

    /// `r` followed by its ancestors up to the memory space.
    pub fn chain(&self, r: RegionId) -> Vec<RegionId> {
        let mut out = vec![r];
        let mut cur = r;
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn base(&self, r: RegionId) -> RegionId {
        let mut cur = r;
        while let Some(p) = self.parent(cur) {
            if self.is_space(p) {
                return cur;
            }
            cur = p;
        }
        cur
    }

    pub fn memspace(&self, r: RegionId) -> MemSpace {
        let top = *self.chain(r).last().expect("chain is never empty");
        match self.kind(top) {
            RegionKind::Space(ms) => *ms,
            _ => MemSpace::Unknown,
        }
    }

    pub fn is_within(&self, r: RegionId, ancestor: RegionId) -> bool {
        let mut cur = Some(r);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.parent(c);
        }
        false
    }

    /// A source-like rendering such as `x.a`, `buf[2]` or `*p`.
    pub fn describe(&self, r: RegionId) -> String {
        match self.kind(r) {
            RegionKind::Space(ms) => format!("{ms:?}"),
            RegionKind::Var { var, .. } => self.names.get(var).cloned().unwrap_or_else(|| format!("v{}", var.0)),
            RegionKind::Field { field, parent } => match self.kind(*parent) {
                RegionKind::Sym { .. } | RegionKind::Alloc { .. } => {
                    let p = self.describe(*parent);
                    format!("{}->{field}", p.strip_prefix('*').unwrap_or(&p))
                }
                _ => format!("{}.{field}", self.describe(*parent)),
            },
            RegionKind::Element { index, parent } => {
                let idx = match index {
                    SVal::Int(i) => i.to_string(),
                    SVal::Sym(s) => format!("${}", s.0),
                    _ => "?".into(),
                };
                format!("{}[{idx}]", self.describe(*parent))
            }
            RegionKind::Alloc { site, .. } => format!("heap#{}", site.0),
            RegionKind::Sym { sym, .. } => format!("*${}", sym.0),
        }
    }
}

impl State {
    #[must_use]
    pub fn bind_loc(&self, ctx: &Ctx, r: RegionId, v: SVal) -> State {
        debug_assert!(!ctx.regions.is_space(r));
        State {
            store: self.store.insert(r, v),
            ..self.clone()
        }
    }

    /// Value of `r`: its direct binding, else one derived from the nearest ancestor default,
    /// else its initial value.
    pub fn lookup_loc(&self, ctx: &mut Ctx, r: RegionId) -> SVal {
        if let Some(v) = self.store.get(&r) {
            return *v;
        }
        if let RegionKind::Element { index, parent } = ctx.regions.kind(r) {
            let parent = *parent;
            if !matches!(index, SVal::Int(_))
                && self.store.keys().any(|k| *k != r && ctx.regions.is_within(*k, parent))
            {
                return SVal::Unknown;
            }
        }
        let mut cur = Some(r);
        while let Some(a) = cur {
            if let Some(d) = self.defaults.get(&a) {
                return match *d {
                    SVal::Sym(s) if a == r => SVal::Sym(s),
                    SVal::Sym(s) => SVal::Sym(ctx.derived(s, r)),
                    other => other,
                };
            }
            cur = ctx.regions.parent(a);
        }
        let base = ctx.regions.base(r);
        match ctx.regions.kind(base) {
            RegionKind::Var {
                param: false, space, ..
            } if matches!(ctx.regions.kind(*space), RegionKind::Space(MemSpace::Stack(_))) => SVal::Undefined,
            RegionKind::Alloc { .. } => SVal::Undefined,
            _ => SVal::Sym(ctx.region_value(r)),
        }
    }

    /// Sets a default for the whole of `r`, dropping everything bound below it.
    #[must_use]
    pub fn bind_default(&self, ctx: &Ctx, r: RegionId, v: SVal) -> State {
        State {
            store: self.store.retain(|k, _| !ctx.regions.is_within(*k, r)),
            defaults: self.defaults.retain(|k, _| !ctx.regions.is_within(*k, r)).insert(r, v),
            ..self.clone()
        }
    }
}

pub struct Invalidation {
    pub state: State,
    /// Every region that received a fresh default.
    pub touched: BTreeSet<RegionId>,
}

/// Replaces the contents of `roots`, and of everything reachable from them through stored
/// pointers, by fresh conjured symbols tagged with `site` and `key`.
pub fn invalidate(ctx: &mut Ctx, st: &State, roots: &[RegionId], site: ExprId, key: FrameKey) -> Invalidation {
    let mut work: Vec<RegionId> = roots.to_vec();
    let mut touched = BTreeSet::new();
    let mut st = st.clone();
    while let Some(mut r) = work.pop() {
        while let RegionKind::Element { parent, .. } = ctx.regions.kind(r) {
            r = *parent;
        }
        if ctx.regions.is_space(r) && ctx.regions.memspace(r) != MemSpace::Global {
            continue;
        }
        if !touched.insert(r) {
            continue;
        }
        let inside: Vec<SVal> = st
            .store
            .iter()
            .chain(st.defaults.iter())
            .filter(|(k, _)| ctx.regions.is_within(**k, r))
            .map(|(_, v)| *v)
            .collect();
        for v in inside {
            match v {
                SVal::Loc(l) => work.push(l),
                SVal::Sym(s) => {
                    if let Some(sr) = ctx.regions.existing_sym_region(s) {
                        work.push(sr);
                    }
                }
                _ => {}
            }
        }
        let conj = ctx.conjured(site, key, Some(r));
        st = st.bind_default(ctx, r, SVal::Sym(conj));
    }
    // defaults of touched regions may have been dropped by a later touched ancestor
    Invalidation { state: st, touched }
}

/// The region a pointer value designates, if any.
pub fn pointee_region(ctx: &mut Ctx, v: SVal) -> Option<RegionId> {
    match v {
        SVal::Loc(r) => Some(r),
        SVal::Sym(s) => Some(ctx.regions.sym_region(s)),
        _ => None,
    }
}

pub fn is_symbolic_pointer_base(ctx: &Ctx, r: RegionId) -> Option<SymId> {
    match ctx.regions.kind(ctx.regions.base(r)) {
        RegionKind::Sym { sym, .. } => Some(*sym),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Ctx, RegionId) {
        let mut ctx = Ctx::new();
        let x = ctx.regions.var(VarId(0), MemSpace::Stack(0), false);
        ctx.regions.set_name(VarId(0), "x");
        (ctx, x)
    }

    #[test]
    fn store_laws() {
        let (mut ctx, x) = setup();
        let a = ctx.regions.field(x, "a");
        let b = ctx.regions.field(x, "b");
        let st = State::default();
        assert_eq!(st.lookup_loc(&mut ctx, a), SVal::Undefined);
        let st = st.bind_loc(&ctx, a, SVal::Int(0)).bind_loc(&ctx, b, SVal::Int(2));
        assert_eq!(st.lookup_loc(&mut ctx, a), SVal::Int(0));
        let st2 = st.bind_loc(&ctx, a, SVal::Int(7));
        assert_eq!(st2.lookup_loc(&mut ctx, a), SVal::Int(7));
        assert_eq!(st2.lookup_loc(&mut ctx, b), SVal::Int(2));
        assert_eq!(ctx.regions.describe(a), "x.a");
    }

    #[test]
    fn invalidation_is_region_precise_and_idempotent() {
        let (mut ctx, x) = setup();
        let a = ctx.regions.field(x, "a");
        let b = ctx.regions.field(x, "b");
        let st = State::default().bind_loc(&ctx, a, SVal::Int(0)).bind_loc(&ctx, b, SVal::Int(2));
        let key = FrameKey::default();
        let inv = invalidate(&mut ctx, &st, &[a], ExprId(9), key);
        assert!(matches!(inv.state.lookup_loc(&mut ctx, a), SVal::Sym(_)));
        assert_eq!(inv.state.lookup_loc(&mut ctx, b), SVal::Int(2));
        let again = invalidate(&mut ctx, &inv.state, &[a], ExprId(9), key);
        assert_eq!(again.state, inv.state);
        let empty = invalidate(&mut ctx, &st, &[], ExprId(9), key);
        assert_eq!(empty.state, st);
        let whole = invalidate(&mut ctx, &inv.state, &[x], ExprId(10), key);
        let vb = whole.state.lookup_loc(&mut ctx, b);
        let SVal::Sym(s) = vb else { panic!() };
        assert!(matches!(ctx.syms.kind(s), SymKind::Derived { .. }));
    }

    #[test]
    fn invalidation_follows_pointers() {
        let (mut ctx, x) = setup();
        let p = ctx.regions.var(VarId(1), MemSpace::Stack(0), false);
        let st = State::default().bind_loc(&ctx, x, SVal::Int(1)).bind_loc(&ctx, p, SVal::Loc(x));
        let inv = invalidate(&mut ctx, &st, &[p], ExprId(1), FrameKey::default());
        assert!(inv.touched.contains(&x));
        assert!(matches!(inv.state.lookup_loc(&mut ctx, x), SVal::Sym(_)));
    }

    #[test]
    fn element_offsets_combine() {
        let (mut ctx, x) = setup();
        let e0 = ctx.regions.element(x, SVal::Int(0));
        let e2 = ctx.regions.element(e0, SVal::Int(2));
        let e3 = ctx.regions.element(e2, SVal::Int(1));
        assert_eq!(ctx.regions.kind(e3), &RegionKind::Element { index: SVal::Int(3), parent: x });
        assert_eq!(ctx.regions.base(e3), x);
        assert_eq!(ctx.regions.memspace(e3), MemSpace::Stack(0));
    }

    #[test]
    fn parameters_read_as_region_values() {
        let mut ctx = Ctx::new();
        let p = ctx.regions.var(VarId(0), MemSpace::Stack(0), true);
        let v = State::default().lookup_loc(&mut ctx, p);
        assert_eq!(v, SVal::Sym(ctx.region_value(p)));
    }
}
