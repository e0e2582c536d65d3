//! Ordered unions of disjoint inclusive integer intervals at a fixed two's-complement width.

use std::fmt;

/// Bit width of the integer domain, between 1 and 32.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Width(pub u32);

impl Width {
    pub const W32: Width = Width(32);

    pub fn min(self) -> i64 {
        -(1i64 << (self.0 - 1))
    }

    pub fn max(self) -> i64 {
        (1i64 << (self.0 - 1)) - 1
    }

    pub fn modulus(self) -> i64 {
        1i64 << self.0
    }

    /// Reduces `v` into the signed range of this width.
    pub fn wrap(self, v: i64) -> i64 {
        let m = self.modulus();
        (v - self.min()).rem_euclid(m) + self.min()
    }

    pub fn contains(self, v: i64) -> bool {
        (self.min()..=self.max()).contains(&v)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RangeSet {
    ivs: Vec<(i64, i64)>,
}

impl RangeSet {
    pub fn empty() -> Self {
        RangeSet { ivs: Vec::new() }
    }

    pub fn full(w: Width) -> Self {
        RangeSet {
            ivs: vec![(w.min(), w.max())],
        }
    }

    pub fn single(v: i64) -> Self {
        RangeSet { ivs: vec![(v, v)] }
    }

    /// `[lo, hi]`, or empty when `lo > hi`.
    pub fn interval(lo: i64, hi: i64) -> Self {
        if lo > hi {
            Self::empty()
        } else {
            RangeSet { ivs: vec![(lo, hi)] }
        }
    }

    /// Builds a set from arbitrary (possibly overlapping) intervals.
    pub fn from_intervals(ivs: impl IntoIterator<Item = (i64, i64)>) -> Self {
        let mut v: Vec<(i64, i64)> = ivs.into_iter().filter(|(a, b)| a <= b).collect();
        v.sort_unstable();
        let mut out: Vec<(i64, i64)> = Vec::with_capacity(v.len());
        for (lo, hi) in v {
            match out.last_mut() {
                Some(last) if lo <= last.1.saturating_add(1) => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        RangeSet { ivs: out }
    }

    pub fn intervals(&self) -> &[(i64, i64)] {
        &self.ivs
    }

    pub fn is_empty(&self) -> bool {
        self.ivs.is_empty()
    }

    pub fn contains(&self, v: i64) -> bool {
        self.ivs.iter().any(|&(lo, hi)| lo <= v && v <= hi)
    }

    pub fn single_value(&self) -> Option<i64> {
        match self.ivs.as_slice() {
            [(lo, hi)] if lo == hi => Some(*lo),
            _ => None,
        }
    }

    pub fn min(&self) -> Option<i64> {
        self.ivs.first().map(|iv| iv.0)
    }

    pub fn max(&self) -> Option<i64> {
        self.ivs.last().map(|iv| iv.1)
    }

    /// Number of values in the set.
    pub fn count(&self) -> u128 {
        self.ivs.iter().map(|(a, b)| (b - a) as u128 + 1).sum()
    }

    pub fn intersect(&self, other: &RangeSet) -> RangeSet {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.ivs.len() && j < other.ivs.len() {
            let (a0, a1) = self.ivs[i];
            let (b0, b1) = other.ivs[j];
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if lo <= hi {
                out.push((lo, hi));
            }
            if a1 < b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        RangeSet { ivs: out }
    }

    pub fn union(&self, other: &RangeSet) -> RangeSet {
        Self::from_intervals(self.ivs.iter().chain(other.ivs.iter()).copied())
    }

    pub fn complement(&self, w: Width) -> RangeSet {
        let mut out = Vec::new();
        let mut next = w.min();
        for &(lo, hi) in &self.ivs {
            if lo > next {
                out.push((next, lo - 1));
            }
            next = hi + 1;
        }
        if next <= w.max() {
            out.push((next, w.max()));
        }
        RangeSet { ivs: out }
    }

    /// `{ v + c mod 2^w | v in self }`.
    pub fn shift(&self, c: i64, w: Width) -> RangeSet {
        Self::from_intervals(self.ivs.iter().flat_map(|&(lo, hi)| wrap_interval(lo + c, hi + c, w)))
    }

    /// `{ -v mod 2^w | v in self }`.
    pub fn negate(&self, w: Width) -> RangeSet {
        Self::from_intervals(self.ivs.iter().flat_map(|&(lo, hi)| wrap_interval(-hi, -lo, w)))
    }

    pub fn is_subset(&self, other: &RangeSet) -> bool {
        self.intersect(other) == *self
    }

    /// Renders bounds equal to the width's limits with symbolic names.
    pub fn display(&self, w: Width, min_name: &str, max_name: &str) -> String {
        let b = |v: i64| {
            if v == w.min() {
                min_name.to_string()
            } else if v == w.max() {
                max_name.to_string()
            } else {
                v.to_string()
            }
        };
        let parts: Vec<String> = self.ivs.iter().map(|&(lo, hi)| format!("[{}, {}]", b(lo), b(hi))).collect();
        format!("{{ {} }}", parts.join(", "))
    }
}

/// Splits `[lo, hi]` (of length at most 2^w) into at most two in-range intervals.
fn wrap_interval(lo: i64, hi: i64, w: Width) -> Vec<(i64, i64)> {
    if hi - lo + 1 >= w.modulus() {
        return vec![(w.min(), w.max())];
    }
    let a = w.wrap(lo);
    let b = a + (hi - lo);
    if b > w.max() {
        vec![(a, w.max()), (w.min(), b - w.modulus())]
    } else {
        vec![(a, b)]
    }
}

impl fmt::Debug for RangeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display(Width::W32, "IMIN", "IMAX"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const W8: Width = Width(8);

    fn bits(r: &RangeSet) -> Vec<bool> {
        (-128..=127).map(|v| r.contains(v)).collect()
    }

    fn from_bits(b: &[bool]) -> RangeSet {
        RangeSet::from_intervals((-128i64..=127).zip(b).filter(|(_, x)| **x).map(|(v, _)| (v, v)))
    }

    fn arb_set() -> impl Strategy<Value = RangeSet> {
        proptest::collection::vec((-128i64..=127, 0i64..40), 0..4)
            .prop_map(|v| RangeSet::from_intervals(v.into_iter().map(|(lo, len)| (lo, (lo + len).min(127)))))
    }

    #[test]
    fn display_and_set_operations() {
        let w = Width::W32;
        let zero = RangeSet::single(0);
        let nonzero = zero.complement(w);
        assert_eq!(nonzero.intervals(), &[(w.min(), -1), (1, w.max())]);
        assert!(nonzero.intersect(&zero).is_empty());
        assert_eq!(nonzero.union(&zero), RangeSet::full(w));
        assert_eq!(nonzero.display(w, "IMIN", "IMAX"), "{ [IMIN, -1], [1, IMAX] }");
    }

    #[test]
    fn shift_and_negate_wrap() {
        let r = RangeSet::interval(120, 127);
        assert_eq!(r.shift(10, W8).intervals(), &[(-126, -119)]);
        assert_eq!(RangeSet::interval(125, 127).shift(2, W8).intervals(), &[(-128, -127), (127, 127)]);
        let m = RangeSet::single(-128);
        assert_eq!(m.negate(W8), m);
        assert_eq!(RangeSet::interval(-3, 5).negate(W8), RangeSet::interval(-5, 3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn agrees_with_bitsets(a in arb_set(), b in arb_set(), c in -300i64..300) {
            let (ba, bb) = (bits(&a), bits(&b));
            let inter: Vec<bool> = ba.iter().zip(&bb).map(|(x, y)| *x && *y).collect();
            let uni: Vec<bool> = ba.iter().zip(&bb).map(|(x, y)| *x || *y).collect();
            let comp: Vec<bool> = ba.iter().map(|x| !x).collect();
            prop_assert_eq!(a.intersect(&b), from_bits(&inter));
            prop_assert_eq!(a.union(&b), from_bits(&uni));
            prop_assert_eq!(a.complement(W8), from_bits(&comp));
            let shifted: Vec<bool> = (-128i64..=127).map(|v| a.contains(W8.wrap(v - c))).collect();
            prop_assert_eq!(a.shift(c, W8), from_bits(&shifted));
            let neg: Vec<bool> = (-128i64..=127).map(|v| a.contains(W8.wrap(-v))).collect();
            prop_assert_eq!(a.negate(W8), from_bits(&neg));
            prop_assert_eq!(a.union(&a.complement(W8)), RangeSet::full(W8));
        }
    }
}
