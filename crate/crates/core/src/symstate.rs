//! Symbolic values, the symbol table, the immutable program state and dead-binding collection.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use crate::frontend::{BinaryOp, ExprId};
use crate::memmodel::{FrameKey, MemSpace, RegionId, RegionKind, Regions};
use crate::pmap::PMap;
use crate::solver::{RangeSet, Width};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SVal {
    Undefined,
    Unknown,
    Int(i32),
    Sym(SymId),
    Loc(RegionId),
    Null,
}

impl SVal {
    pub fn as_sym(self) -> Option<SymId> {
        match self {
            SVal::Sym(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SymKind {
    /// The unknown initial value of a region.
    RegionValue(RegionId),
    /// A value produced by an unknown call or an invalidation at `site`.
    Conjured {
        site: ExprId,
        key: FrameKey,
        region: Option<RegionId>,
    },
    /// The value of a sub-region of a region whose default binding is `parent`.
    Derived { parent: SymId, region: RegionId },
    SymInt { lhs: SymId, op: BinaryOp, rhs: i32 },
    IntSym { lhs: i32, op: BinaryOp, rhs: SymId },
    SymSym { lhs: SymId, op: BinaryOp, rhs: SymId },
}

#[derive(Default)]
pub struct Symbols {
    kinds: Vec<SymKind>,
    ids: HashMap<SymKind, SymId>,
}

impl Symbols {
    pub fn intern(&mut self, kind: SymKind) -> SymId {
        if let Some(id) = self.ids.get(&kind) {
            return *id;
        }
        let id = SymId(self.kinds.len() as u32);
        self.kinds.push(kind.clone());
        self.ids.insert(kind, id);
        id
    }

    pub fn kind(&self, s: SymId) -> &SymKind {
        &self.kinds[s.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// True for comparison results, whose value is always 0 or 1.
    pub fn is_boolean(&self, s: SymId) -> bool {
        match self.kind(s) {
            SymKind::SymInt { op, .. } | SymKind::IntSym { op, .. } | SymKind::SymSym { op, .. } => op.is_comparison(),
            _ => false,
        }
    }

    pub fn is_atom(&self, s: SymId) -> bool {
        matches!(
            self.kind(s),
            SymKind::RegionValue(_) | SymKind::Conjured { .. } | SymKind::Derived { .. }
        )
    }

    /// Atomic symbols appearing in `s`, sorted.
    pub fn leaves(&self, s: SymId) -> Vec<SymId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![s];
        while let Some(s) = stack.pop() {
            match self.kind(s) {
                SymKind::SymInt { lhs, .. } => stack.push(*lhs),
                SymKind::IntSym { rhs, .. } => stack.push(*rhs),
                SymKind::SymSym { lhs, rhs, .. } => {
                    stack.push(*lhs);
                    stack.push(*rhs);
                }
                _ => {
                    out.insert(s);
                }
            }
        }
        out.into_iter().collect()
    }
}

/// Per-analysis interning tables and counters.
pub struct Ctx {
    pub regions: Regions,
    pub syms: Symbols,
    pub width: Width,
    pub stats: BTreeMap<String, u64>,
}

impl Default for Ctx {
    fn default() -> Self {
        Self::new()
    }
}

impl Ctx {
    pub fn new() -> Self {
        Self::with_width(Width::W32)
    }

    pub fn with_width(width: Width) -> Self {
        Ctx {
            regions: Regions::default(),
            syms: Symbols::default(),
            width,
            stats: BTreeMap::new(),
        }
    }

    pub fn bump(&mut self, stat: &str) {
        *self.stats.entry(stat.to_string()).or_default() += 1;
    }

    pub fn sym(&mut self, kind: SymKind) -> SymId {
        self.syms.intern(kind)
    }

    pub fn region_value(&mut self, r: RegionId) -> SymId {
        self.sym(SymKind::RegionValue(r))
    }

    pub fn derived(&mut self, parent: SymId, region: RegionId) -> SymId {
        self.sym(SymKind::Derived { parent, region })
    }

    pub fn conjured(&mut self, site: ExprId, key: FrameKey, region: Option<RegionId>) -> SymId {
        self.sym(SymKind::Conjured { site, key, region })
    }

    /// Human-readable rendering, close to the analyzer's debug dumps.
    pub fn sym_text(&self, s: SymId) -> String {
        match self.syms.kind(s) {
            SymKind::RegionValue(r) => format!("reg_${}<{}>", s.0, self.regions.describe(*r)),
            SymKind::Conjured { .. } => format!("conj_${}", s.0),
            SymKind::Derived { parent, region } => {
                format!("derived_${}{{{},{}}}", s.0, self.sym_text(*parent), self.regions.describe(*region))
            }
            SymKind::SymInt { lhs, op, rhs } => format!("({}) {} {rhs}", self.sym_text(*lhs), op.spelling()),
            SymKind::IntSym { lhs, op, rhs } => format!("{lhs} {} ({})", op.spelling(), self.sym_text(*rhs)),
            SymKind::SymSym { lhs, op, rhs } => {
                format!("({}) {} ({})", self.sym_text(*lhs), op.spelling(), self.sym_text(*rhs))
            }
        }
    }
}

pub const TAG_MALLOC: u8 = 1;

/// The immutable symbolic state. Every component is a persistent map, so clones are cheap
/// and updates share structure with the previous version.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct State {
    /// (frame depth, expression) to value.
    pub env: PMap<(u32, ExprId), SVal>,
    pub store: PMap<RegionId, SVal>,
    pub defaults: PMap<RegionId, SVal>,
    /// Checker-private data keyed by (checker tag, key).
    pub gdm: PMap<(u8, u32), u32>,
    pub constraints: PMap<SymId, RangeSet>,
}

impl State {
    #[must_use]
    pub fn bind_expr(&self, depth: u32, e: ExprId, v: SVal) -> State {
        State {
            env: self.env.insert((depth, e), v),
            ..self.clone()
        }
    }

    /// Unbound occurrences read as Unknown.
    pub fn lookup_expr(&self, depth: u32, e: ExprId) -> SVal {
        self.env.get(&(depth, e)).copied().unwrap_or(SVal::Unknown)
    }

    pub fn cached_expr(&self, depth: u32, e: ExprId) -> Option<SVal> {
        self.env.get(&(depth, e)).copied()
    }

    #[must_use]
    pub fn clear_env(&self, depth: u32) -> State {
        if !self.env.keys().any(|(d, _)| *d >= depth) {
            return self.clone();
        }
        State {
            env: self.env.retain(|(d, _), _| *d < depth),
            ..self.clone()
        }
    }

    pub fn gdm_get(&self, tag: u8, key: u32) -> Option<u32> {
        self.gdm.get(&(tag, key)).copied()
    }

    #[must_use]
    pub fn gdm_set(&self, tag: u8, key: u32, v: u32) -> State {
        State {
            gdm: self.gdm.insert((tag, key), v),
            ..self.clone()
        }
    }

    pub fn size(&self) -> usize {
        self.env.len() + self.store.len() + self.defaults.len() + self.gdm.len() + self.constraints.len()
    }
}

pub struct GcResult {
    pub state: State,
    pub dead_symbols: Vec<SymId>,
    /// Base regions tracked by checkers that are no longer reachable.
    pub dead_tracked: Vec<(u8, u32, u32)>,
}

/// Removes bindings, constraints and checker entries that can no longer influence the path.
///
/// `live_depth` is the innermost live stack frame; `None` means every frame is gone.
pub fn remove_dead_bindings(ctx: &mut Ctx, st: &State, live_depth: Option<u32>) -> GcResult {
    let mut by_base: BTreeMap<RegionId, Vec<(RegionId, SVal)>> = BTreeMap::new();
    for (k, v) in st.store.iter().chain(st.defaults.iter()) {
        by_base.entry(ctx.regions.base(*k)).or_default().push((*k, *v));
    }
    let mut m = Marker {
        live_bases: BTreeSet::new(),
        live_syms: BTreeSet::new(),
        queue: VecDeque::new(),
    };
    let root_space = |ctx: &Ctx, b: RegionId| match ctx.regions.memspace(b) {
        MemSpace::Global => true,
        MemSpace::Stack(d) => live_depth.is_some_and(|ld| d <= ld),
        _ => false,
    };
    for (d, _) in st.env.keys() {
        debug_assert!(live_depth.map_or(true, |ld| *d <= ld + 1));
    }
    for v in st.env.values() {
        m.queue.push_back(Item::Val(*v));
    }
    for b in by_base.keys() {
        if root_space(ctx, *b) {
            m.queue.push_back(Item::Base(*b));
        }
    }
    m.run(ctx, &by_base);
    // Lazily live atoms: still what their region would read as.
    loop {
        let candidates: Vec<SymId> = st
            .constraints
            .keys()
            .flat_map(|s| ctx.syms.leaves(*s))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|s| !m.live_syms.contains(s))
            .collect();
        let mut changed = false;
        for s in candidates {
            let region = match ctx.syms.kind(s) {
                SymKind::RegionValue(r) => Some(*r),
                SymKind::Derived { parent, region } if m.live_syms.contains(parent) => Some(*region),
                _ => None,
            };
            if let Some(r) = region {
                let b = ctx.regions.base(r);
                if (m.live_bases.contains(&b) || root_space(ctx, b)) && st.lookup_loc(ctx, r) == SVal::Sym(s) {
                    m.queue.push_back(Item::Sym(s));
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        m.run(ctx, &by_base);
    }

    let live_bases = &m.live_bases;
    let live_syms = &m.live_syms;
    let keep_region = |k: &RegionId| {
        let b = ctx.regions.base(*k);
        live_bases.contains(&b) || (ctx.regions.is_space(*k) && root_space(ctx, *k))
    };
    let store = st.store.retain(|k, _| keep_region(k));
    let defaults = st.defaults.retain(|k, _| keep_region(k));
    let mut dead_symbols = Vec::new();
    let constraints = st.constraints.retain(|s, _| {
        let keep = live_syms.contains(s) || {
            let leaves = ctx.syms.leaves(*s);
            !ctx.syms.is_atom(*s) && leaves.iter().all(|l| live_syms.contains(l))
        };
        if !keep {
            dead_symbols.push(*s);
        }
        keep
    });
    let mut dead_tracked = Vec::new();
    let gdm = st.gdm.retain(|(tag, key), v| {
        let r = RegionId(*key);
        let alive = live_bases.contains(&ctx.regions.base(r));
        if !alive {
            dead_tracked.push((*tag, *key, *v));
        }
        alive
    });
    let env = match live_depth {
        Some(ld) => st.env.retain(|(d, _), _| *d <= ld),
        None => st.env.clone(),
    };
    let state = State {
        env,
        store,
        defaults,
        gdm,
        constraints,
    };
    // keep unchanged maps physically shared
    let state = if state == *st { st.clone() } else { state };
    GcResult {
        state,
        dead_symbols,
        dead_tracked,
    }
}

enum Item {
    Val(SVal),
    Sym(SymId),
    Base(RegionId),
    Region(RegionId),
}

struct Marker {
    live_bases: BTreeSet<RegionId>,
    live_syms: BTreeSet<SymId>,
    queue: VecDeque<Item>,
}

impl Marker {
    fn run(&mut self, ctx: &Ctx, by_base: &BTreeMap<RegionId, Vec<(RegionId, SVal)>>) {
        while let Some(item) = self.queue.pop_front() {
            match item {
                Item::Val(SVal::Sym(s)) | Item::Sym(s) => {
                    if !self.live_syms.insert(s) {
                        continue;
                    }
                    match ctx.syms.kind(s) {
                        SymKind::RegionValue(r) => self.queue.push_back(Item::Region(*r)),
                        SymKind::Derived { parent, region } => {
                            self.queue.push_back(Item::Sym(*parent));
                            self.queue.push_back(Item::Region(*region));
                        }
                        SymKind::Conjured { .. } => {}
                        SymKind::SymInt { lhs, .. } => self.queue.push_back(Item::Sym(*lhs)),
                        SymKind::IntSym { rhs, .. } => self.queue.push_back(Item::Sym(*rhs)),
                        SymKind::SymSym { lhs, rhs, .. } => {
                            self.queue.push_back(Item::Sym(*lhs));
                            self.queue.push_back(Item::Sym(*rhs));
                        }
                    }
                    if let Some(r) = ctx.regions.existing_sym_region(s) {
                        self.queue.push_back(Item::Base(r));
                    }
                }
                Item::Val(SVal::Loc(r)) => {
                    self.queue.push_back(Item::Region(r));
                    self.queue.push_back(Item::Base(ctx.regions.base(r)));
                }
                Item::Val(_) => {}
                Item::Region(r) => {
                    // symbolic indices and symbolic bases along the chain stay alive
                    for a in ctx.regions.chain(r) {
                        match ctx.regions.kind(a) {
                            RegionKind::Element { index, .. } => self.queue.push_back(Item::Val(*index)),
                            RegionKind::Sym { sym, .. } => self.queue.push_back(Item::Sym(*sym)),
                            _ => {}
                        }
                    }
                }
                Item::Base(b) => {
                    if !self.live_bases.insert(b) {
                        continue;
                    }
                    if let RegionKind::Sym { sym, .. } = ctx.regions.kind(b) {
                        self.queue.push_back(Item::Sym(*sym));
                    }
                    for (k, v) in by_base.get(&b).into_iter().flatten() {
                        self.queue.push_back(Item::Region(*k));
                        self.queue.push_back(Item::Val(*v));
                    }
                }
            }
        }
    }
}

impl fmt::Display for SymId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::VarId;
    use crate::pmap::allocated_nodes;

    #[test]
    fn env_laws() {
        let st = State::default();
        let e = ExprId(3);
        assert_eq!(st.lookup_expr(0, e), SVal::Unknown);
        let st = st.bind_expr(0, e, SVal::Int(1)).bind_expr(0, e, SVal::Int(2));
        assert_eq!(st.lookup_expr(0, e), SVal::Int(2));
        assert_eq!(st.lookup_expr(1, e), SVal::Unknown);
    }

    #[test]
    fn overwritten_parameter_symbol_is_collected() {
        let mut ctx = Ctx::new();
        let x = ctx.regions.var(VarId(0), MemSpace::Stack(0), true);
        let sx = ctx.region_value(x);
        let st = State::default();
        assert_eq!(st.lookup_loc(&mut ctx, x), SVal::Sym(sx));
        let st = State {
            constraints: st.constraints.insert(sx, RangeSet::single(0).complement(ctx.width)),
            ..st
        };
        // still readable, so still live
        let gc = remove_dead_bindings(&mut ctx, &st, Some(0));
        assert!(gc.state.constraints.contains_key(&sx));
        assert_eq!(gc.state, st);
        let st = st.bind_loc(&ctx, x, SVal::Int(42));
        let gc = remove_dead_bindings(&mut ctx, &st, Some(0));
        assert!(!gc.state.constraints.contains_key(&sx));
        assert_eq!(gc.dead_symbols, vec![sx]);
        assert_eq!(gc.state.lookup_loc(&mut ctx, x), SVal::Int(42));
    }

    #[test]
    fn popped_frame_bindings_die() {
        let mut ctx = Ctx::new();
        let a = ctx.regions.var(VarId(0), MemSpace::Stack(0), false);
        let b = ctx.regions.var(VarId(1), MemSpace::Stack(1), false);
        let g = ctx.regions.var(VarId(2), MemSpace::Global, false);
        let st = State::default()
            .bind_loc(&ctx, a, SVal::Int(1))
            .bind_loc(&ctx, b, SVal::Int(2))
            .bind_loc(&ctx, g, SVal::Int(3));
        let gc = remove_dead_bindings(&mut ctx, &st, Some(0));
        assert_eq!(gc.state.store.len(), 2);
        let gc = remove_dead_bindings(&mut ctx, &st, None);
        assert_eq!(gc.state.store.len(), 1);
    }

    #[test]
    fn compound_constraints_need_all_leaves() {
        let mut ctx = Ctx::new();
        let p = ctx.regions.var(VarId(0), MemSpace::Stack(0), true);
        let q = ctx.regions.var(VarId(1), MemSpace::Stack(0), true);
        let sp = ctx.region_value(p);
        let sq = ctx.region_value(q);
        let d = ctx.sym(SymKind::SymSym {
            lhs: sp,
            op: BinaryOp::Sub,
            rhs: sq,
        });
        let st = State {
            constraints: PMap::new().insert(d, RangeSet::single(0)),
            ..State::default()
        };
        let gc = remove_dead_bindings(&mut ctx, &st, Some(0));
        assert!(gc.state.constraints.contains_key(&d));
        let st = st.bind_loc(&ctx, q, SVal::Int(0));
        let gc = remove_dead_bindings(&mut ctx, &st, Some(0));
        assert!(!gc.state.constraints.contains_key(&d));
    }

    #[test]
    fn single_updates_share_structure() {
        let mut ctx = Ctx::new();
        let regions: Vec<RegionId> = (0..1000).map(|i| ctx.regions.var(VarId(i), MemSpace::Global, false)).collect();
        let mut st = State::default();
        for r in &regions {
            st = st.bind_loc(&ctx, *r, SVal::Int(0));
        }
        let before = allocated_nodes();
        let mut cur = st.clone();
        for (i, r) in regions.iter().enumerate() {
            cur = cur.bind_loc(&ctx, *r, SVal::Int(i as i32 + 1));
        }
        let used = allocated_nodes() - before;
        // far below 1000 full copies of a 1000-entry map
        assert!(used <= 50 * 1000, "{used}");
        assert_eq!(st.lookup_loc(&mut ctx, regions[10]), SVal::Int(0));
        assert_eq!(cur.lookup_loc(&mut ctx, regions[10]), SVal::Int(11));
    }
}
