//! Linearized, partitioned forest storage.
//!
//! Only leaves are stored, ordered tree by tree and within each tree along
//! the space-filling curve. Each rank keeps its local elements per local
//! tree, plus the two shared arrays that fully encode the parallel
//! partition: the cumulative element counts and the partition markers.

use crate::comm::SimComm;
use crate::quadrant::{Geometry, Quadrant, SfcOrder};

/// Axis-aligned brick of trees: `dims[0] * dims[1] * dims[2]` unit cubes
/// with identity orientations. `dims[2]` is 1 in 2D.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BrickConnectivity {
    pub dims: [u32; 3],
}

impl BrickConnectivity {
    pub fn new(dim: u8, dims: [u32; 3]) -> Self {
        assert!(dims[0] >= 1 && dims[1] >= 1 && dims[2] >= 1);
        if dim == 2 {
            assert_eq!(dims[2], 1, "2D bricks have a single layer");
        }
        BrickConnectivity { dims }
    }

    pub fn unit(dim: u8) -> Self {
        BrickConnectivity::new(dim, [1, 1, 1])
    }

    pub fn num_trees(&self) -> u64 {
        self.dims[0] as u64 * self.dims[1] as u64 * self.dims[2] as u64
    }

    /// Brick coordinates of tree `k`; x varies fastest.
    pub fn tree_coords(&self, k: u64) -> [u32; 3] {
        let kx = self.dims[0] as u64;
        let ky = self.dims[1] as u64;
        [(k % kx) as u32, ((k / kx) % ky) as u32, (k / (kx * ky)) as u32]
    }

    pub fn tree_index(&self, c: [u32; 3]) -> u64 {
        c[0] as u64 + self.dims[0] as u64 * (c[1] as u64 + self.dims[1] as u64 * c[2] as u64)
    }
}

/// One partition marker: tree number plus the rank's first local descendant
/// (a level-L quadrant). The P+1 markers define the partition boundary.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Marker {
    pub tree: u64,
    pub desc: Quadrant,
}

impl Marker {
    pub fn sort_key(&self, geom: &Geometry) -> (u64, u64) {
        (self.tree, geom.sfc_index(&self.desc))
    }
}

/// Per-tree local storage: the rank's elements of one tree in ascending
/// curve order, the first/last local descendants bounding its range, and
/// the offset (sum of local elements over preceding local trees).
#[derive(Clone, Debug)]
pub struct LocalTree {
    pub tree: u64,
    pub elements: Vec<Quadrant>,
    pub first_desc: Quadrant,
    pub last_desc: Quadrant,
    pub offset: u64,
}

/// One rank's view of the distributed forest.
#[derive(Clone, Debug)]
pub struct Forest {
    pub geom: Geometry,
    pub conn: BrickConnectivity,
    pub rank: usize,
    pub num_ranks: usize,
    /// First and last local tree; `None` on an empty rank.
    pub local_range: Option<(u64, u64)>,
    /// Local trees for `local_range`, in tree order.
    pub trees: Vec<LocalTree>,
    /// Cumulative element counts over ranks; P+1 entries, last is N.
    pub elem_counts: Vec<u64>,
    /// Partition markers; P+1 entries, last is the sentinel (K, root).
    pub markers: Vec<Marker>,
}

impl Forest {
    pub fn num_trees(&self) -> u64 {
        self.conn.num_trees()
    }

    pub fn global_num_elements(&self) -> u64 {
        *self.elem_counts.last().unwrap()
    }

    pub fn local_num_elements(&self) -> u64 {
        self.elem_counts[self.rank + 1] - self.elem_counts[self.rank]
    }

    pub fn rank_empty(&self, p: usize) -> bool {
        self.markers[p] == self.markers[p + 1]
    }

    /// Whether rank `p` begins with tree `k` at quadrant `b`, i.e. whether
    /// the marker of `p` equals (k, first descendant of b).
    pub fn begins_with(&self, p: usize, k: u64, b: &Quadrant) -> bool {
        self.markers[p].tree == k && self.markers[p].desc == self.geom.first_descendant(b)
    }

    pub fn tree(&self, k: u64) -> Option<&LocalTree> {
        let (first, last) = self.local_range?;
        if k < first || k > last {
            return None;
        }
        Some(&self.trees[(k - first) as usize])
    }

    /// Iterate local elements as (tree, rank-local index, quadrant).
    pub fn local_elements(&self) -> impl Iterator<Item = (u64, usize, &Quadrant)> {
        self.trees.iter().flat_map(|t| {
            t.elements
                .iter()
                .enumerate()
                .map(move |(i, q)| (t.tree, t.offset as usize + i, q))
        })
    }

    /// Gather the complete global element list (tree, quadrant) in global
    /// order on every rank. Collective; intended for desk-scale use.
    pub fn allgather_elements(&self, comm: &SimComm) -> Vec<(u64, Quadrant)> {
        let mut local = Vec::new();
        for t in &self.trees {
            for q in &t.elements {
                encode_element(&mut local, t.tree, q);
            }
        }
        decode_elements(&comm.allgatherv_bytes(local))
    }

    /// Check all structural invariants of this rank's view; shared state
    /// consistency across ranks is checked by tests via gathering.
    pub fn validate(&self) -> Result<(), String> {
        let p = self.num_ranks;
        if self.elem_counts.len() != p + 1 || self.markers.len() != p + 1 {
            return Err("shared array lengths".into());
        }
        if self.elem_counts[0] != 0 {
            return Err("cumulative counts must start at 0".into());
        }
        for w in self.elem_counts.windows(2) {
            if w[1] < w[0] {
                return Err("cumulative counts must be nondecreasing".into());
            }
        }
        let k = self.num_trees();
        if self.markers[p].tree != k {
            return Err("marker sentinel must point at the nonexistent tree".into());
        }
        for w in self.markers.windows(2) {
            if w[0].sort_key(&self.geom) > w[1].sort_key(&self.geom) {
                return Err("markers must ascend by (tree, descendant)".into());
            }
        }
        let local: u64 = self.trees.iter().map(|t| t.elements.len() as u64).sum();
        if local != self.local_num_elements() {
            return Err("local element count disagrees with cumulative array".into());
        }
        match self.local_range {
            None => {
                if !self.trees.is_empty() || local != 0 {
                    return Err("empty rank must hold no trees".into());
                }
            }
            Some((first, last)) => {
                if self.trees.len() as u64 != last - first + 1 {
                    return Err("tree vector does not match local range".into());
                }
                let mut offset = 0u64;
                for (i, t) in self.trees.iter().enumerate() {
                    if t.tree != first + i as u64 {
                        return Err("tree numbering gap".into());
                    }
                    if t.offset != offset {
                        return Err("tree offset mismatch".into());
                    }
                    offset += t.elements.len() as u64;
                    if t.elements.is_empty() {
                        return Err("local tree without elements".into());
                    }
                    let mut prev: Option<&Quadrant> = None;
                    for q in &t.elements {
                        if !self.geom.is_valid(q) {
                            return Err("invalid quadrant".into());
                        }
                        if let Some(pq) = prev {
                            if !matches!(self.geom.compare(pq, q), SfcOrder::Before) {
                                return Err("elements must ascend without overlap".into());
                            }
                        }
                        prev = Some(q);
                    }
                    let f = self.geom.first_descendant(&t.elements[0]);
                    let l = self.geom.last_descendant(t.elements.last().unwrap());
                    if f != t.first_desc || l != t.last_desc {
                        return Err("tree descendant bounds mismatch".into());
                    }
                    // middle local trees must be complete
                    let complete = t.first_desc == Quadrant::new(0, 0, 0, self.geom.max_level())
                        && t.last_desc == self.geom.last_descendant(&self.geom.root());
                    if t.tree != first && t.tree != last && !complete {
                        return Err("middle local tree incomplete".into());
                    }
                }
                // marker consistency with the first local element
                let m = self.markers[self.rank];
                if m.tree != first || m.desc != self.trees[0].first_desc {
                    return Err("marker does not match first local element".into());
                }
            }
        }
        Ok(())
    }
}

fn encode_element(out: &mut Vec<u8>, tree: u64, q: &Quadrant) {
    out.extend_from_slice(&tree.to_le_bytes());
    out.extend_from_slice(&q.x.to_le_bytes());
    out.extend_from_slice(&q.y.to_le_bytes());
    out.extend_from_slice(&q.z.to_le_bytes());
    out.push(q.level);
}

fn decode_elements(bytes: &[u8]) -> Vec<(u64, Quadrant)> {
    bytes
        .chunks_exact(21)
        .map(|c| {
            (
                u64::from_le_bytes(c[0..8].try_into().unwrap()),
                Quadrant::new(
                    u32::from_le_bytes(c[8..12].try_into().unwrap()),
                    u32::from_le_bytes(c[12..16].try_into().unwrap()),
                    u32::from_le_bytes(c[16..20].try_into().unwrap()),
                    c[20],
                ),
            )
        })
        .collect()
}

/// Sentinel marker: first descendant of the nonexistent tree K.
pub fn sentinel_marker(geom: &Geometry, num_trees: u64) -> Marker {
    Marker {
        tree: num_trees,
        desc: geom.first_descendant(&geom.root()),
    }
}

/// Build the full marker array from per-rank split points into a global
/// element list. Empty ranks share the marker of the next non-empty rank.
pub(crate) fn markers_from_splits(
    geom: &Geometry,
    num_trees: u64,
    splits: &[u64],
    global: &[(u64, Quadrant)],
) -> Vec<Marker> {
    let p = splits.len() - 1;
    let mut markers = vec![sentinel_marker(geom, num_trees); p + 1];
    for rank in (0..p).rev() {
        if splits[rank] < splits[rank + 1] {
            let (tree, q) = &global[splits[rank] as usize];
            markers[rank] = Marker {
                tree: *tree,
                desc: geom.first_descendant(q),
            };
        } else {
            markers[rank] = markers[rank + 1];
        }
    }
    markers
}

/// Assemble a rank's local trees from its slice of the global element list.
pub(crate) fn trees_from_slice(
    geom: &Geometry,
    slice: &[(u64, Quadrant)],
) -> (Option<(u64, u64)>, Vec<LocalTree>) {
    if slice.is_empty() {
        return (None, Vec::new());
    }
    let first = slice[0].0;
    let last = slice.last().unwrap().0;
    let mut trees = Vec::with_capacity((last - first + 1) as usize);
    let mut offset = 0u64;
    let mut i = 0usize;
    for k in first..=last {
        let start = i;
        while i < slice.len() && slice[i].0 == k {
            i += 1;
        }
        assert!(i > start, "tree {} has no elements in slice", k);
        let elements: Vec<Quadrant> = slice[start..i].iter().map(|(_, q)| *q).collect();
        let first_desc = geom.first_descendant(&elements[0]);
        let last_desc = geom.last_descendant(elements.last().unwrap());
        trees.push(LocalTree {
            tree: k,
            elements,
            first_desc,
            last_desc,
            offset,
        });
        offset += trees.last().unwrap().elements.len() as u64;
    }
    (Some((first, last)), trees)
}

/// Uniform split points: rank p owns global indices [pN/P, (p+1)N/P).
pub fn uniform_splits(n: u64, num_ranks: usize) -> Vec<u64> {
    (0..=num_ranks)
        .map(|p| ((p as u128 * n as u128) / num_ranks as u128) as u64)
        .collect()
}

/// Construct a uniformly refined forest at the given level, load balanced
/// across all ranks of the communicator. Collective.
pub fn new_uniform(
    comm: &SimComm,
    geom: Geometry,
    conn: BrickConnectivity,
    level: u8,
) -> Forest {
    assert!(level <= geom.max_level());
    let k = conn.num_trees();
    let per_tree = 1u64 << (geom.dim() as u32 * level as u32);
    let n = k * per_tree;
    let splits = uniform_splits(n, comm.size());
    let my = &splits[comm.rank()..=comm.rank() + 1];
    let mut slice = Vec::with_capacity((my[1] - my[0]) as usize);
    let shift = geom.dim() as u32 * (geom.max_level() - level) as u32;
    for g in my[0]..my[1] {
        let tree = g / per_tree;
        let pos = g % per_tree;
        slice.push((tree, geom.quadrant_at_index(pos << shift, level)));
    }
    // markers are computable without communication for the uniform mesh
    let mut global_firsts = Vec::with_capacity(comm.size());
    for p in 0..comm.size() {
        if splits[p] < splits[p + 1] {
            let g = splits[p];
            let tree = g / per_tree;
            let pos = g % per_tree;
            global_firsts.push((tree, geom.quadrant_at_index(pos << shift, level)));
        } else {
            global_firsts.push((k, geom.root()));
        }
    }
    let mut markers = vec![sentinel_marker(&geom, k); comm.size() + 1];
    for p in (0..comm.size()).rev() {
        markers[p] = if splits[p] < splits[p + 1] {
            Marker {
                tree: global_firsts[p].0,
                desc: geom.first_descendant(&global_firsts[p].1),
            }
        } else {
            markers[p + 1]
        };
    }
    let (local_range, trees) = trees_from_slice(&geom, &slice);
    let f = Forest {
        geom,
        conn,
        rank: comm.rank(),
        num_ranks: comm.size(),
        local_range,
        trees,
        elem_counts: splits,
        markers,
    };
    debug_assert_eq!(f.validate(), Ok(()));
    f
}

impl Forest {
    /// Refine elements for which the callback returns true, one level, then
    /// recompute the cumulative counts with one allgather. The partition
    /// boundary (markers) is unchanged. Refinement past the maximum level
    /// is silently clamped. Collective.
    pub fn refine(&self, comm: &SimComm, mut want: impl FnMut(u64, &Quadrant) -> bool) -> Forest {
        let geom = self.geom;
        let mut trees = Vec::with_capacity(self.trees.len());
        let mut offset = 0u64;
        for t in &self.trees {
            let mut elements = Vec::with_capacity(t.elements.len());
            for q in &t.elements {
                if q.level < geom.max_level() && want(t.tree, q) {
                    elements.extend(geom.children(q));
                } else {
                    elements.push(*q);
                }
            }
            trees.push(LocalTree {
                tree: t.tree,
                elements,
                first_desc: t.first_desc,
                last_desc: t.last_desc,
                offset,
            });
            offset += trees.last().unwrap().elements.len() as u64;
        }
        self.rebuild_counts(comm, trees, offset)
    }

    /// Coarsen complete families for which the callback returns true, one
    /// level. A family coarsens only if all its siblings are local.
    /// Coarsening past level 0 is silently clamped (the callback never sees
    /// the root as a family member's parent candidate). Collective.
    pub fn coarsen(
        &self,
        comm: &SimComm,
        mut want: impl FnMut(u64, &[Quadrant]) -> bool,
    ) -> Forest {
        let geom = self.geom;
        let nc = geom.num_children();
        let mut trees = Vec::with_capacity(self.trees.len());
        let mut offset = 0u64;
        for t in &self.trees {
            let mut elements: Vec<Quadrant> = Vec::with_capacity(t.elements.len());
            let mut i = 0usize;
            while i < t.elements.len() {
                let q = &t.elements[i];
                let family = q.level > 0
                    && geom.child_id(q) == 0
                    && i + nc <= t.elements.len()
                    && t.elements[i..i + nc]
                        .iter()
                        .enumerate()
                        .all(|(j, s)| s.level == q.level && geom.child_id(s) == j)
                    && t.elements[i..i + nc]
                        .iter()
                        .all(|s| geom.parent(s) == geom.parent(q));
                if family && want(t.tree, &t.elements[i..i + nc]) {
                    elements.push(geom.parent(q));
                    i += nc;
                } else {
                    elements.push(*q);
                    i += 1;
                }
            }
            trees.push(LocalTree {
                tree: t.tree,
                elements,
                first_desc: t.first_desc,
                last_desc: t.last_desc,
                offset,
            });
            offset += trees.last().unwrap().elements.len() as u64;
        }
        self.rebuild_counts(comm, trees, offset)
    }

    fn rebuild_counts(&self, comm: &SimComm, trees: Vec<LocalTree>, local: u64) -> Forest {
        let counts = comm.allgather_u64(local);
        let mut elem_counts = vec![0u64; self.num_ranks + 1];
        for p in 0..self.num_ranks {
            elem_counts[p + 1] = elem_counts[p] + counts[p];
        }
        let f = Forest {
            geom: self.geom,
            conn: self.conn,
            rank: self.rank,
            num_ranks: self.num_ranks,
            local_range: self.local_range,
            trees,
            elem_counts,
            markers: self.markers.clone(),
        };
        debug_assert_eq!(f.validate(), Ok(()));
        f
    }

    /// Repartition by nonnegative integer weights: the new cumulative
    /// counts are chosen by greedy prefix splitting so that every rank's
    /// weight sum is within one maximal element weight of the ideal
    /// W/P. Elements stay the same globally; payloads do not move (see the
    /// transfer module). All-zero weights fall back to unit weights.
    /// Collective.
    pub fn partition(&self, comm: &SimComm, weights: &[u64]) -> Forest {
        assert_eq!(
            weights.len() as u64,
            self.local_num_elements(),
            "one weight per local element"
        );
        let mut local = Vec::new();
        let mut wi = 0usize;
        for t in &self.trees {
            for q in &t.elements {
                encode_element(&mut local, t.tree, q);
                local.extend_from_slice(&weights[wi].to_le_bytes());
                wi += 1;
            }
        }
        let gathered = comm.allgatherv_bytes(local);
        let mut global = Vec::with_capacity(gathered.len() / 29);
        let mut gweights = Vec::with_capacity(global.capacity());
        for c in gathered.chunks_exact(29) {
            let mut e = decode_elements(&c[0..21]);
            global.push(e.pop().unwrap());
            gweights.push(u64::from_le_bytes(c[21..29].try_into().unwrap()));
        }
        if gweights.iter().all(|&w| w == 0) {
            gweights.iter_mut().for_each(|w| *w = 1);
        }
        let n = global.len() as u64;
        let total: u128 = gweights.iter().map(|&w| w as u128).sum();
        let p = self.num_ranks as u128;
        // splits[r] = smallest prefix whose cumulative weight reaches r*W/P
        let mut splits = vec![0u64; self.num_ranks + 1];
        splits[self.num_ranks] = n;
        let mut cum: u128 = 0;
        let mut r = 1usize;
        for (i, &w) in gweights.iter().enumerate() {
            while r < self.num_ranks && cum * p >= r as u128 * total {
                splits[r] = i as u64;
                r += 1;
            }
            cum += w as u128;
        }
        while r < self.num_ranks {
            splits[r] = n;
            r += 1;
        }
        let markers = markers_from_splits(&self.geom, self.num_trees(), &splits, &global);
        let my = &global[splits[self.rank] as usize..splits[self.rank + 1] as usize];
        let (local_range, trees) = trees_from_slice(&self.geom, my);
        let f = Forest {
            geom: self.geom,
            conn: self.conn,
            rank: self.rank,
            num_ranks: self.num_ranks,
            local_range,
            trees,
            elem_counts: splits,
            markers,
        };
        debug_assert_eq!(f.validate(), Ok(()));
        f
    }
}

/// Fill the curve interval fully covered by [lo, hi] (level-L indices) with
/// the coarsest possible quadrants, recursing from `b`.
fn cover_interval(geom: &Geometry, b: &Quadrant, lo: u64, hi: u64, out: &mut Vec<Quadrant>) {
    if lo > hi {
        return;
    }
    let first = geom.sfc_index(b);
    let last = geom.last_index(b);
    if last < lo || first > hi {
        return;
    }
    if first >= lo && last <= hi {
        out.push(*b);
        return;
    }
    for c in geom.children(b) {
        cover_interval(geom, &c, lo, hi, out);
    }
}

/// Minimal non-overlapping curve-sorted sequence that begins with `f`, ends
/// with `l`, and exactly covers the interval from `f`'s first to `l`'s last
/// descendant. Requires `f` strictly before `l` (or equal), neither
/// containing the other.
pub fn complete_region(geom: &Geometry, f: &Quadrant, l: &Quadrant) -> Vec<Quadrant> {
    if f == l {
        return vec![*f];
    }
    assert!(
        matches!(geom.compare(f, l), SfcOrder::Before),
        "complete_region: f must precede l without overlap"
    );
    let mut out = vec![*f];
    let lo = geom.last_index(f) + 1;
    let hi = geom.sfc_index(l);
    if lo < hi {
        let nca = geom.nearest_common_ancestor(f, l);
        cover_interval(geom, &nca, lo, hi - 1, &mut out);
    }
    out.push(*l);
    out
}

/// Complete a sparse element list within the bounds [first, last] (level-L
/// descendants): fill every gap with the coarsest possible quadrants while
/// preserving the existing elements verbatim.
pub fn complete_subtree(
    geom: &Geometry,
    first_bound: &Quadrant,
    last_bound: &Quadrant,
    elements: &[Quadrant],
) -> Vec<Quadrant> {
    debug_assert_eq!(first_bound.level, geom.max_level());
    debug_assert_eq!(last_bound.level, geom.max_level());
    let root = geom.root();
    let mut out = Vec::with_capacity(elements.len());
    let mut cursor = geom.sfc_index(first_bound);
    for q in elements {
        let start = geom.sfc_index(q);
        debug_assert!(start >= cursor, "complete_subtree: unsorted or overlapping input");
        if start > cursor {
            cover_interval(geom, &root, cursor, start - 1, &mut out);
        }
        out.push(*q);
        cursor = geom.last_index(q) + 1;
    }
    let end = geom.sfc_index(last_bound);
    if cursor <= end {
        cover_interval(geom, &root, cursor, end, &mut out);
    }
    out
}
