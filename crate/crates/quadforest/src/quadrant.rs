//! Quadrant representation and Morton (z-order) space-filling-curve arithmetic.
//!
//! A quadrant is a node of a quadtree (d = 2) or octree (d = 3), identified by
//! the integer coordinates of its first corner and its refinement level. All
//! coordinate arithmetic happens in units of the finest level `L`, so a
//! quadrant of level `l` has edge length `2^(L - l)` and its coordinates are
//! multiples of that length.

use std::cmp::Ordering;

/// Largest maximum level such that `2 * L` Morton bits fit a u64 comfortably.
pub const MAX_LEVEL_2D: u8 = 29;
/// Largest maximum level such that `3 * L` Morton bits fit a u64 comfortably.
pub const MAX_LEVEL_3D: u8 = 19;

/// A tree node: anchor coordinates plus level. `z` is zero when d = 2.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Quadrant {
    pub x: u32,
    pub y: u32,
    pub z: u32,
    pub level: u8,
}

impl Quadrant {
    pub const fn new(x: u32, y: u32, z: u32, level: u8) -> Self {
        Quadrant { x, y, z, level }
    }
}

/// Unique curve index for a quadrant: the Morton index of its first
/// descendant at level `L`, together with the level.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct SfcKey {
    pub index: u64,
    pub level: u8,
}

/// Outcome of comparing two quadrants of one tree along the curve.
/// Partially overlapping quadrants do not exist, so five cases suffice.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SfcOrder {
    Before,
    Contains,
    ContainedBy,
    Equal,
    After,
}

/// Dimension and maximum level of one forest; parameterizes every quadrant
/// operation. Copyable and cheap to pass around.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Geometry {
    dim: u8,
    max_level: u8,
}

impl Geometry {
    pub fn new(dim: u8, max_level: u8) -> Self {
        assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
        let cap = if dim == 2 { MAX_LEVEL_2D } else { MAX_LEVEL_3D };
        assert!(
            max_level >= 1 && max_level <= cap,
            "max level {} out of range [1, {}]",
            max_level,
            cap
        );
        Geometry { dim, max_level }
    }

    /// Default maximum level for a dimension: 29 in 2D, 19 in 3D.
    pub fn with_default_level(dim: u8) -> Self {
        let l = if dim == 2 { MAX_LEVEL_2D } else { MAX_LEVEL_3D };
        Geometry::new(dim, l)
    }

    pub fn dim(&self) -> u8 {
        self.dim
    }

    pub fn max_level(&self) -> u8 {
        self.max_level
    }

    pub fn num_children(&self) -> usize {
        1 << self.dim
    }

    pub fn root(&self) -> Quadrant {
        Quadrant::new(0, 0, 0, 0)
    }

    /// Edge length of a level-`level` quadrant in level-L units.
    pub fn side(&self, level: u8) -> u32 {
        debug_assert!(level <= self.max_level);
        1u32 << (self.max_level - level)
    }

    /// Number of level-L positions per coordinate axis.
    pub fn coord_range(&self) -> u32 {
        1u32 << self.max_level
    }

    pub fn is_valid(&self, q: &Quadrant) -> bool {
        if q.level > self.max_level {
            return false;
        }
        let side = self.side(q.level);
        let range = self.coord_range();
        let mut ok = q.x < range && q.x % side == 0 && q.y < range && q.y % side == 0;
        if self.dim == 3 {
            ok = ok && q.z < range && q.z % side == 0;
        } else {
            ok = ok && q.z == 0;
        }
        ok
    }

    /// Morton index of the quadrant's first descendant at level L.
    pub fn sfc_index(&self, q: &Quadrant) -> u64 {
        let mut idx = 0u64;
        for bit in 0..self.max_level as u32 {
            idx |= (((q.x >> bit) & 1) as u64) << (self.dim as u32 * bit);
            idx |= (((q.y >> bit) & 1) as u64) << (self.dim as u32 * bit + 1);
            if self.dim == 3 {
                idx |= (((q.z >> bit) & 1) as u64) << (self.dim as u32 * bit + 2);
            }
        }
        idx
    }

    /// Number of level-L descendants of the quadrant.
    pub fn descendant_span(&self, q: &Quadrant) -> u64 {
        1u64 << (self.dim as u32 * (self.max_level - q.level) as u32)
    }

    /// Morton index of the quadrant's last descendant at level L.
    pub fn last_index(&self, q: &Quadrant) -> u64 {
        self.sfc_index(q) + (self.descendant_span(q) - 1)
    }

    pub fn sfc_key(&self, q: &Quadrant) -> SfcKey {
        SfcKey {
            index: self.sfc_index(q),
            level: q.level,
        }
    }

    /// Inverse of `sfc_index`: reconstruct the quadrant of `level` whose
    /// first descendant has Morton index `index`.
    pub fn quadrant_at_index(&self, index: u64, level: u8) -> Quadrant {
        let mut x = 0u32;
        let mut y = 0u32;
        let mut z = 0u32;
        for bit in 0..self.max_level as u32 {
            x |= (((index >> (self.dim as u32 * bit)) & 1) as u32) << bit;
            y |= (((index >> (self.dim as u32 * bit + 1)) & 1) as u32) << bit;
            if self.dim == 3 {
                z |= (((index >> (self.dim as u32 * bit + 2)) & 1) as u32) << bit;
            }
        }
        Quadrant::new(x, y, z, level)
    }

    /// Total preorder with explicit containment cases.
    pub fn compare(&self, a: &Quadrant, b: &Quadrant) -> SfcOrder {
        let ka = self.sfc_index(a);
        let kb = self.sfc_index(b);
        match ka.cmp(&kb) {
            Ordering::Equal => match a.level.cmp(&b.level) {
                Ordering::Equal => SfcOrder::Equal,
                Ordering::Less => SfcOrder::Contains,
                Ordering::Greater => SfcOrder::ContainedBy,
            },
            Ordering::Less => {
                if self.last_index(a) >= kb {
                    SfcOrder::Contains
                } else {
                    SfcOrder::Before
                }
            }
            Ordering::Greater => {
                if self.last_index(b) >= ka {
                    SfcOrder::ContainedBy
                } else {
                    SfcOrder::After
                }
            }
        }
    }

    /// Lexicographic order on (curve index, level); a strict total order on
    /// valid quadrants usable for sorting.
    pub fn cmp_key(&self, a: &Quadrant, b: &Quadrant) -> Ordering {
        (self.sfc_index(a), a.level).cmp(&(self.sfc_index(b), b.level))
    }

    pub fn child(&self, b: &Quadrant, i: usize) -> Quadrant {
        debug_assert!(b.level < self.max_level, "level overflow in child()");
        debug_assert!(i < self.num_children());
        let h = self.side(b.level + 1);
        Quadrant::new(
            b.x + ((i & 1) as u32) * h,
            b.y + (((i >> 1) & 1) as u32) * h,
            b.z + (((i >> 2) & 1) as u32) * h,
            b.level + 1,
        )
    }

    /// The `2^d` children of `b` in curve order.
    pub fn children(&self, b: &Quadrant) -> Vec<Quadrant> {
        (0..self.num_children()).map(|i| self.child(b, i)).collect()
    }

    pub fn parent(&self, q: &Quadrant) -> Quadrant {
        debug_assert!(q.level > 0, "root has no parent");
        self.ancestor_at(q, q.level - 1)
    }

    pub fn ancestor_at(&self, q: &Quadrant, level: u8) -> Quadrant {
        debug_assert!(level <= q.level);
        let mask = !(self.side(level) - 1);
        Quadrant::new(q.x & mask, q.y & mask, q.z & mask, level)
    }

    /// Index of `q` among its parent's children.
    pub fn child_id(&self, q: &Quadrant) -> usize {
        debug_assert!(q.level > 0);
        let shift = (self.max_level - q.level) as u32;
        let mut i = ((q.x >> shift) & 1) as usize;
        i |= (((q.y >> shift) & 1) as usize) << 1;
        if self.dim == 3 {
            i |= (((q.z >> shift) & 1) as usize) << 2;
        }
        i
    }

    /// Which child of `b` contains the given descendant.
    pub fn child_containing(&self, b: &Quadrant, desc: &Quadrant) -> usize {
        debug_assert!(b.level < self.max_level);
        let shift = (self.max_level - b.level - 1) as u32;
        let mut i = ((desc.x >> shift) & 1) as usize;
        i |= (((desc.y >> shift) & 1) as usize) << 1;
        if self.dim == 3 {
            i |= (((desc.z >> shift) & 1) as usize) << 2;
        }
        i
    }

    pub fn is_ancestor_or_equal(&self, a: &Quadrant, b: &Quadrant) -> bool {
        a.level <= b.level && self.ancestor_at(b, a.level) == *a
    }

    pub fn first_descendant(&self, q: &Quadrant) -> Quadrant {
        Quadrant::new(q.x, q.y, q.z, self.max_level)
    }

    pub fn last_descendant(&self, q: &Quadrant) -> Quadrant {
        let off = self.side(q.level) - 1;
        let z = if self.dim == 3 { q.z + off } else { 0 };
        Quadrant::new(q.x + off, q.y + off, z, self.max_level)
    }

    pub fn nearest_common_ancestor(&self, a: &Quadrant, b: &Quadrant) -> Quadrant {
        let mut diff = (a.x ^ b.x) | (a.y ^ b.y);
        if self.dim == 3 {
            diff |= a.z ^ b.z;
        }
        let bits = 32 - diff.leading_zeros() as u8;
        let mut level = self.max_level.saturating_sub(bits);
        level = level.min(a.level).min(b.level);
        self.ancestor_at(a, level)
    }

    /// Largest ancestor-or-equal of `f` with the same first descendant that
    /// is still a descendant of `b`.
    pub fn enlarge_first(&self, f: &Quadrant, b: &Quadrant) -> Quadrant {
        assert!(
            self.is_ancestor_or_equal(b, f),
            "enlarge_first: f must be a descendant of b"
        );
        let mut f = *f;
        let w = f.x | f.y | f.z;
        while f.level > b.level && (w & self.side(f.level)) == 0 {
            f.level -= 1;
        }
        debug_assert!(self.is_ancestor_or_equal(b, &f));
        f
    }

    /// Largest ancestor-or-equal of `l` with the same last descendant that
    /// is still a descendant of `b`.
    pub fn enlarge_last(&self, l: &Quadrant, b: &Quadrant) -> Quadrant {
        assert!(
            self.is_ancestor_or_equal(b, l),
            "enlarge_last: l must be a descendant of b"
        );
        let mut l = *l;
        let orig = l.level;
        let w = if self.dim == 3 {
            l.x & l.y & l.z
        } else {
            l.x & l.y
        };
        while l.level > b.level && (w & self.side(l.level)) != 0 {
            l.level -= 1;
        }
        // Anchor fix-up: snap coordinates down to the enlarged alignment.
        let fix = !(self.side(l.level) - self.side(orig));
        l.x &= fix;
        l.y &= fix;
        if self.dim == 3 {
            l.z &= fix;
        }
        debug_assert!(self.is_ancestor_or_equal(b, &l));
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g2() -> Geometry {
        Geometry::new(2, 3)
    }

    /// Oracle: Morton index by top-down descent from the root, accumulating
    /// one child id per level. Independent of `sfc_index`'s interleave loop.
    fn morton_oracle(g: &Geometry, q: &Quadrant) -> u64 {
        let fd = g.first_descendant(q);
        let mut idx = 0u64;
        let mut b = g.root();
        for _ in 0..g.max_level() {
            let i = g.child_containing(&b, &fd);
            idx = (idx << g.dim()) | i as u64;
            b = g.child(&b, i);
        }
        idx
    }

    /// Oracle for the nearest common ancestor: walk both ancestor chains.
    fn nca_oracle(g: &Geometry, a: &Quadrant, b: &Quadrant) -> Quadrant {
        let mut lvl = a.level.min(b.level);
        loop {
            let aa = g.ancestor_at(a, lvl);
            let bb = g.ancestor_at(b, lvl);
            if aa == bb {
                return aa;
            }
            lvl -= 1;
        }
    }

    /// All quadrants of the full tree up to max level.
    fn all_quadrants(g: &Geometry) -> Vec<Quadrant> {
        let mut out = vec![g.root()];
        let mut i = 0;
        while i < out.len() {
            let q = out[i];
            if q.level < g.max_level() {
                out.extend(g.children(&q));
            }
            i += 1;
        }
        out
    }

    #[test]
    fn compare_roots() {
        let g = g2();
        assert_eq!(g.compare(&g.root(), &g.root()), SfcOrder::Equal);
        let c = g.child(&g.root(), 2);
        assert_eq!(g.compare(&g.root(), &c), SfcOrder::Contains);
        assert_eq!(g.compare(&c, &g.root()), SfcOrder::ContainedBy);
    }

    #[test]
    fn compare_z_order() {
        let g = g2();
        let a = Quadrant::new(0, 0, 0, 3);
        let b = Quadrant::new(2, 0, 0, 3);
        assert_eq!(g.compare(&a, &b), SfcOrder::Before);
        assert_eq!(g.compare(&b, &a), SfcOrder::After);
    }

    #[test]
    fn children_of_root() {
        let g = g2();
        let cs = g.children(&g.root());
        assert_eq!(
            cs,
            vec![
                Quadrant::new(0, 0, 0, 1),
                Quadrant::new(4, 0, 0, 1),
                Quadrant::new(0, 4, 0, 1),
                Quadrant::new(4, 4, 0, 1),
            ]
        );
        assert_eq!(g.num_children(), 4);
        assert_eq!(Geometry::new(3, 3).num_children(), 8);
    }

    #[test]
    fn descendants_of_root() {
        let g = g2();
        assert_eq!(g.first_descendant(&g.root()), Quadrant::new(0, 0, 0, 3));
        assert_eq!(g.last_descendant(&g.root()), Quadrant::new(7, 7, 0, 3));
        let q = Quadrant::new(2, 4, 0, 3);
        assert_eq!(g.first_descendant(&q), q);
    }

    #[test]
    fn nca_cases() {
        let g = g2();
        let q = Quadrant::new(2, 2, 0, 2);
        assert_eq!(g.nearest_common_ancestor(&q, &q), q);
        assert_eq!(g.nearest_common_ancestor(&q, &g.root()), g.root());
        let a = Quadrant::new(0, 0, 0, 3);
        let b = Quadrant::new(3, 3, 0, 3);
        assert_eq!(g.nearest_common_ancestor(&a, &b), Quadrant::new(0, 0, 0, 1));
    }

    #[test]
    fn nca_matches_oracle() {
        let g = g2();
        let all = all_quadrants(&g);
        for a in &all {
            for b in &all {
                assert_eq!(g.nearest_common_ancestor(a, b), nca_oracle(&g, a, b));
            }
        }
    }

    /// Brute-force oracle for the enlargement operations: enumerate all
    /// ancestors of `q` inside `b` with matching first (last) descendant and
    /// take the largest.
    fn enlarge_oracle(g: &Geometry, q: &Quadrant, b: &Quadrant, first: bool) -> Quadrant {
        let mut best = *q;
        for lvl in (b.level..=q.level).rev() {
            let a = g.ancestor_at(q, lvl);
            let same = if first {
                g.first_descendant(&a) == g.first_descendant(q)
            } else {
                g.last_descendant(&a) == g.last_descendant(q)
            };
            if same && g.is_ancestor_or_equal(b, &a) {
                best = a;
            }
        }
        best
    }

    #[test]
    fn enlarge_examples() {
        let g = g2();
        let root = g.root();
        assert_eq!(g.enlarge_first(&Quadrant::new(0, 0, 0, 3), &root), root);
        assert_eq!(
            g.enlarge_first(&Quadrant::new(2, 0, 0, 3), &root),
            Quadrant::new(2, 0, 0, 2)
        );
        assert_eq!(g.enlarge_first(&root, &root), root);
        assert_eq!(g.enlarge_last(&Quadrant::new(7, 7, 0, 3), &root), root);
        let b = Quadrant::new(0, 0, 0, 1);
        assert_eq!(g.enlarge_last(&Quadrant::new(3, 3, 0, 3), &b), b);
        assert_eq!(g.enlarge_last(&b, &b), b);
    }

    #[test]
    fn enlarge_matches_oracle_full_tree() {
        let g = Geometry::new(2, 5);
        let all = all_quadrants(&g);
        for q in &all {
            for b in &all {
                if !g.is_ancestor_or_equal(b, q) {
                    continue;
                }
                assert_eq!(g.enlarge_first(q, b), enlarge_oracle(&g, q, b, true));
                assert_eq!(g.enlarge_last(q, b), enlarge_oracle(&g, q, b, false));
            }
        }
    }

    fn arb_quadrant(g: Geometry) -> impl Strategy<Value = Quadrant> {
        (0u8..=g.max_level()).prop_flat_map(move |lvl| {
            let cells = 1u32 << lvl;
            let side = g.side(lvl);
            let zmax = if g.dim() == 3 { cells } else { 1 };
            (0..cells, 0..cells, 0..zmax).prop_map(move |(i, j, k)| {
                Quadrant::new(i * side, j * side, if g.dim() == 3 { k * side } else { 0 }, lvl)
            })
        })
    }

    proptest! {
        #[test]
        fn parent_child_roundtrip(q in arb_quadrant(Geometry::new(3, 6))) {
            let g = Geometry::new(3, 6);
            if q.level < g.max_level() {
                for c in g.children(&q) {
                    prop_assert_eq!(g.parent(&c), q);
                }
            }
            if q.level >= 1 {
                let p = g.parent(&q);
                prop_assert!(g.children(&p).contains(&q));
            }
        }

        #[test]
        fn sfc_locality(q in arb_quadrant(Geometry::new(2, 6))) {
            let g = Geometry::new(2, 6);
            if q.level < g.max_level() {
                let lo = g.sfc_index(&q);
                let hi = g.last_index(&q);
                let mut prev = None;
                for c in g.children(&q) {
                    let k = g.sfc_index(&c);
                    prop_assert!(k >= lo && g.last_index(&c) <= hi);
                    if let Some(p) = prev {
                        prop_assert!(k > p);
                    }
                    prev = Some(g.last_index(&c));
                }
                // children exactly tile the parent span
                prop_assert_eq!(prev.unwrap(), hi);
            }
        }

        #[test]
        fn compare_agrees_with_key_order(
            a in arb_quadrant(Geometry::new(3, 5)),
            b in arb_quadrant(Geometry::new(3, 5)),
        ) {
            let g = Geometry::new(3, 5);
            let ord = g.compare(&a, &b);
            match g.cmp_key(&a, &b) {
                Ordering::Equal => prop_assert_eq!(ord, SfcOrder::Equal),
                Ordering::Less => prop_assert!(matches!(
                    ord,
                    SfcOrder::Before | SfcOrder::Contains
                )),
                Ordering::Greater => prop_assert!(matches!(
                    ord,
                    SfcOrder::After | SfcOrder::ContainedBy
                )),
            }
            // containment cases agree with explicit ancestor checks
            match ord {
                SfcOrder::Contains => prop_assert!(g.is_ancestor_or_equal(&a, &b)),
                SfcOrder::ContainedBy => prop_assert!(g.is_ancestor_or_equal(&b, &a)),
                _ => {}
            }
        }

        #[test]
        fn morton_index_matches_bit_oracle(q in arb_quadrant(Geometry::new(3, 6))) {
            let g = Geometry::new(3, 6);
            prop_assert_eq!(g.sfc_index(&q), morton_oracle(&g, &q));
            let back = g.quadrant_at_index(g.sfc_index(&q), q.level);
            prop_assert_eq!(g.ancestor_at(&g.first_descendant(&q), q.level), q);
            prop_assert_eq!(back.level, q.level);
        }
    }
}
