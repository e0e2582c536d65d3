//! Persistent (immutable) AVL map with structural sharing.
//!
//! Every update returns a new map that shares all untouched subtrees with the
//! old one, so a single insertion allocates only the nodes on the path from the
//! root to the changed key (plus rotation nodes). Allocation is counted per
//! thread so callers can assert the sharing behaviour.

use std::cell::Cell;
use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::rc::Rc;

thread_local! {
    static ALLOCATED: Cell<u64> = const { Cell::new(0) };
}

/// Number of map nodes allocated on this thread since it started.
pub fn allocated_nodes() -> u64 {
    ALLOCATED.with(|c| c.get())
}

struct Node<K, V> {
    key: K,
    value: V,
    left: Link<K, V>,
    right: Link<K, V>,
    height: u8,
}

type Link<K, V> = Option<Rc<Node<K, V>>>;

fn height<K, V>(link: &Link<K, V>) -> u8 {
    link.as_ref().map_or(0, |n| n.height)
}

fn make<K, V>(key: K, value: V, left: Link<K, V>, right: Link<K, V>) -> Rc<Node<K, V>> {
    ALLOCATED.with(|c| c.set(c.get() + 1));
    let height = 1 + height(&left).max(height(&right));
    Rc::new(Node {
        key,
        value,
        left,
        right,
        height,
    })
}

fn balance<K: Clone, V: Clone>(
    key: K,
    value: V,
    left: Link<K, V>,
    right: Link<K, V>,
) -> Rc<Node<K, V>> {
    let hl = height(&left);
    let hr = height(&right);
    if hl > hr + 1 {
        let l = left.expect("left-heavy node has a left child");
        if height(&l.left) >= height(&l.right) {
            let new_right = make(key, value, l.right.clone(), right);
            make(l.key.clone(), l.value.clone(), l.left.clone(), Some(new_right))
        } else {
            let lr = l.right.as_ref().expect("left-right case has a grandchild");
            let new_left = make(l.key.clone(), l.value.clone(), l.left.clone(), lr.left.clone());
            let new_right = make(key, value, lr.right.clone(), right);
            make(lr.key.clone(), lr.value.clone(), Some(new_left), Some(new_right))
        }
    } else if hr > hl + 1 {
        let r = right.expect("right-heavy node has a right child");
        if height(&r.right) >= height(&r.left) {
            let new_left = make(key, value, left, r.left.clone());
            make(r.key.clone(), r.value.clone(), Some(new_left), r.right.clone())
        } else {
            let rl = r.left.as_ref().expect("right-left case has a grandchild");
            let new_left = make(key, value, left, rl.left.clone());
            let new_right = make(r.key.clone(), r.value.clone(), rl.right.clone(), r.right.clone());
            make(rl.key.clone(), rl.value.clone(), Some(new_left), Some(new_right))
        }
    } else {
        make(key, value, left, right)
    }
}

fn insert<K: Ord + Clone, V: Clone>(link: &Link<K, V>, key: K, value: V) -> (Rc<Node<K, V>>, bool) {
    match link {
        None => (make(key, value, None, None), true),
        Some(n) => match key.cmp(&n.key) {
            Ordering::Less => {
                let (l, added) = insert(&n.left, key, value);
                (balance(n.key.clone(), n.value.clone(), Some(l), n.right.clone()), added)
            }
            Ordering::Greater => {
                let (r, added) = insert(&n.right, key, value);
                (balance(n.key.clone(), n.value.clone(), n.left.clone(), Some(r)), added)
            }
            Ordering::Equal => (make(key, value, n.left.clone(), n.right.clone()), false),
        },
    }
}

fn remove_min<K: Clone, V: Clone>(n: &Rc<Node<K, V>>) -> (Link<K, V>, K, V) {
    match &n.left {
        None => (n.right.clone(), n.key.clone(), n.value.clone()),
        Some(l) => {
            let (new_left, k, v) = remove_min(l);
            (
                Some(balance(n.key.clone(), n.value.clone(), new_left, n.right.clone())),
                k,
                v,
            )
        }
    }
}

fn remove<K: Ord + Clone, V: Clone>(link: &Link<K, V>, key: &K) -> Option<Link<K, V>> {
    let n = link.as_ref()?;
    match key.cmp(&n.key) {
        Ordering::Less => {
            let l = remove(&n.left, key)?;
            Some(Some(balance(n.key.clone(), n.value.clone(), l, n.right.clone())))
        }
        Ordering::Greater => {
            let r = remove(&n.right, key)?;
            Some(Some(balance(n.key.clone(), n.value.clone(), n.left.clone(), r)))
        }
        Ordering::Equal => Some(match (&n.left, &n.right) {
            (None, None) => None,
            (Some(l), None) => Some(l.clone()),
            (None, Some(r)) => Some(r.clone()),
            (Some(_), Some(r)) => {
                let (new_right, k, v) = remove_min(r);
                Some(balance(k, v, n.left.clone(), new_right))
            }
        }),
    }
}

/// An immutable ordered map. Cloning is O(1).
pub struct PMap<K, V> {
    root: Link<K, V>,
    len: usize,
}

impl<K, V> Clone for PMap<K, V> {
    fn clone(&self) -> Self {
        PMap {
            root: self.root.clone(),
            len: self.len,
        }
    }
}

impl<K, V> Default for PMap<K, V> {
    fn default() -> Self {
        PMap { root: None, len: 0 }
    }
}

impl<K: Ord + Clone, V: Clone> PMap<K, V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, key: &K) -> Option<&V> {
        let mut cur = self.root.as_ref();
        while let Some(n) = cur {
            match key.cmp(&n.key) {
                Ordering::Less => cur = n.left.as_ref(),
                Ordering::Greater => cur = n.right.as_ref(),
                Ordering::Equal => return Some(&n.value),
            }
        }
        None
    }

    pub fn contains_key(&self, key: &K) -> bool {
        self.get(key).is_some()
    }

    #[must_use]
    pub fn insert(&self, key: K, value: V) -> Self {
        let (root, added) = insert(&self.root, key, value);
        PMap {
            root: Some(root),
            len: self.len + usize::from(added),
        }
    }

    #[must_use]
    pub fn remove(&self, key: &K) -> Self {
        match remove(&self.root, key) {
            Some(root) => PMap {
                root,
                len: self.len - 1,
            },
            None => self.clone(),
        }
    }

    /// Keeps only the entries for which `keep` returns true.
    #[must_use]
    pub fn retain(&self, mut keep: impl FnMut(&K, &V) -> bool) -> Self {
        let doomed: Vec<K> = self
            .iter()
            .filter(|(k, v)| !keep(k, v))
            .map(|(k, _)| k.clone())
            .collect();
        doomed.iter().fold(self.clone(), |m, k| m.remove(k))
    }

    pub fn iter(&self) -> Iter<'_, K, V> {
        let mut it = Iter { stack: Vec::new() };
        it.push_left(self.root.as_ref());
        it
    }

    pub fn keys(&self) -> impl Iterator<Item = &K> {
        self.iter().map(|(k, _)| k)
    }

    pub fn values(&self) -> impl Iterator<Item = &V> {
        self.iter().map(|(_, v)| v)
    }

    /// True when both maps share the same root allocation.
    pub fn ptr_eq(&self, other: &Self) -> bool {
        match (&self.root, &other.root) {
            (None, None) => true,
            (Some(a), Some(b)) => Rc::ptr_eq(a, b),
            _ => false,
        }
    }
}

pub struct Iter<'a, K, V> {
    stack: Vec<&'a Node<K, V>>,
}

impl<'a, K, V> Iter<'a, K, V> {
    fn push_left(&mut self, mut link: Option<&'a Rc<Node<K, V>>>) {
        while let Some(n) = link {
            self.stack.push(n);
            link = n.left.as_ref();
        }
    }
}

impl<'a, K, V> Iterator for Iter<'a, K, V> {
    type Item = (&'a K, &'a V);

    fn next(&mut self) -> Option<Self::Item> {
        let n = self.stack.pop()?;
        self.push_left(n.right.as_ref());
        Some((&n.key, &n.value))
    }
}

impl<K: Ord + Clone, V: Clone + PartialEq> PartialEq for PMap<K, V> {
    fn eq(&self, other: &Self) -> bool {
        self.ptr_eq(other) || (self.len == other.len && self.iter().eq(other.iter()))
    }
}

impl<K: Ord + Clone, V: Clone + Eq> Eq for PMap<K, V> {}

impl<K: Ord + Clone + Hash, V: Clone + Hash> Hash for PMap<K, V> {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.len.hash(state);
        for (k, v) in self.iter() {
            k.hash(state);
            v.hash(state);
        }
    }
}

impl<K: Ord + Clone + fmt::Debug, V: Clone + fmt::Debug> fmt::Debug for PMap<K, V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.iter()).finish()
    }
}

impl<K: Ord + Clone, V: Clone> FromIterator<(K, V)> for PMap<K, V> {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        iter.into_iter()
            .fold(PMap::new(), |m, (k, v)| m.insert(k, v))
    }
}
