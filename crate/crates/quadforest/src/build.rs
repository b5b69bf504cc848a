//! Communication-light construction of a sparse "worker" forest.
//!
//! Starting from a source forest, each rank adds an arbitrary ascending
//! subset of leaves within its own partition window; every untouched gap is
//! then filled with the coarsest possible quadrants. The result keeps the
//! source's partition boundary exactly, so it can be searched with the same
//! markers. The only communication is a single allgather of one integer per
//! rank at the end.

use crate::comm::SimComm;
use crate::forest::{complete_region, complete_subtree, Forest, LocalTree};
use crate::quadrant::{Geometry, Quadrant, SfcOrder};

#[derive(thiserror::Error, Debug, PartialEq, Eq)]
pub enum BuildError {
    #[error("tree {0} outside this rank's local range or before the current tree")]
    TreeOutOfRange(u64),
    #[error("quadrant outside this rank's partition window of tree {0}")]
    OutsideWindow(u64),
    #[error("quadrant added out of order (must strictly follow the previous add)")]
    OutOfOrder,
    #[error("invalid quadrant")]
    InvalidQuadrant,
}

/// Coarsest exact cover of the window [f, l] of one tree, where f and l are
/// level-L quadrants: shortcut to the common ancestor when the window is a
/// whole subtree, otherwise enlarge both ends within the ancestor's
/// children and complete the region between them.
pub fn coarsest_window(geom: &Geometry, f: &Quadrant, l: &Quadrant) -> Vec<Quadrant> {
    debug_assert_eq!(f.level, geom.max_level());
    debug_assert_eq!(l.level, geom.max_level());
    let a = geom.nearest_common_ancestor(f, l);
    if *f == geom.first_descendant(&a) && *l == geom.last_descendant(&a) {
        return vec![a];
    }
    let cf = geom.child(&a, geom.child_containing(&a, f));
    let cl = geom.child(&a, geom.child_containing(&a, l));
    let fq = geom.enlarge_first(f, &cf);
    let lq = geom.enlarge_last(l, &cl);
    complete_region(geom, &fq, &lq)
}

/// In-progress sparse construction on one rank. Created by [`build_begin`],
/// fed through [`Builder::add`], consumed by [`Builder::finish`].
pub struct Builder<'a> {
    source: &'a Forest,
    /// Index into `source.trees` of the tree currently accepting adds.
    cur: usize,
    /// Finalized local trees of the result, in order.
    done: Vec<LocalTree>,
    /// Ascending adds of the current tree, not yet completed.
    sparse: Vec<Quadrant>,
    /// All accepted adds, for the finish callback.
    added: Vec<(u64, Quadrant)>,
    offset: u64,
}

/// Start a sparse build that will preserve `source`'s partition boundary.
pub fn build_begin(source: &Forest) -> Builder<'_> {
    Builder {
        source,
        cur: 0,
        done: Vec::with_capacity(source.trees.len()),
        sparse: Vec::new(),
        added: Vec::new(),
        offset: 0,
    }
}

impl<'a> Builder<'a> {
    fn finalize_current_tree(&mut self) {
        let geom = self.source.geom;
        let t = &self.source.trees[self.cur];
        let elements = if self.sparse.is_empty() {
            coarsest_window(&geom, &t.first_desc, &t.last_desc)
        } else {
            complete_subtree(&geom, &t.first_desc, &t.last_desc, &self.sparse)
        };
        self.sparse.clear();
        let n = elements.len() as u64;
        self.done.push(LocalTree {
            tree: t.tree,
            elements,
            first_desc: t.first_desc,
            last_desc: t.last_desc,
            offset: self.offset,
        });
        self.offset += n;
        self.cur += 1;
    }

    /// Add quadrant `b` as a leaf of tree `k`. Adds must come in forest
    /// order: nondecreasing tree, strictly ascending and non-overlapping
    /// quadrants within a tree, all inside this rank's partition window.
    /// Re-adding the most recent quadrant is a tolerated no-op. Returns
    /// whether the quadrant was newly added.
    pub fn add(&mut self, k: u64, b: Quadrant) -> Result<bool, BuildError> {
        let geom = self.source.geom;
        if !geom.is_valid(&b) {
            return Err(BuildError::InvalidQuadrant);
        }
        let (first, last) = self.source.local_range.ok_or(BuildError::TreeOutOfRange(k))?;
        if k > last || k < first + self.cur as u64 {
            return Err(BuildError::TreeOutOfRange(k));
        }
        // check the window before finalizing intermediate trees, so a bad
        // add leaves the context untouched
        let t = &self.source.trees[(k - first) as usize];
        if geom.sfc_index(&geom.first_descendant(&b)) < geom.sfc_index(&t.first_desc)
            || geom.last_index(&b) > geom.sfc_index(&t.last_desc)
        {
            return Err(BuildError::OutsideWindow(k));
        }
        if k == first + self.cur as u64 {
            if let Some(prev) = self.sparse.last() {
                match geom.compare(prev, &b) {
                    SfcOrder::Before => {}
                    SfcOrder::Equal => return Ok(false),
                    _ => return Err(BuildError::OutOfOrder),
                }
            }
        }
        while first + (self.cur as u64) < k {
            self.finalize_current_tree();
        }
        self.sparse.push(b);
        self.added.push((k, b));
        Ok(true)
    }

    /// Finalize the remaining trees, gather the global counts (the single
    /// collective of the whole build) and return the result forest.
    /// Collective.
    pub fn finish(self, comm: &SimComm) -> Forest {
        self.finish_with(comm, |_, _, _| {})
    }

    /// As [`finish`](Self::finish); additionally invokes the callback once
    /// per distinct added quadrant with its tree, the quadrant, and its
    /// rank-local element index in the result, in forest order. The index
    /// is reported here rather than at add time because coarser fill-in
    /// elements inserted during completion shift the final positions.
    pub fn finish_with(
        mut self,
        comm: &SimComm,
        mut callback: impl FnMut(u64, &Quadrant, u64),
    ) -> Forest {
        let geom = self.source.geom;
        while self.cur < self.source.trees.len() {
            self.finalize_current_tree();
        }
        let counts = comm.allgather_u64(self.offset);
        let mut elem_counts = vec![0u64; comm.size() + 1];
        for p in 0..comm.size() {
            elem_counts[p + 1] = elem_counts[p] + counts[p];
        }
        let result = Forest {
            geom,
            conn: self.source.conn,
            rank: self.source.rank,
            num_ranks: self.source.num_ranks,
            local_range: self.source.local_range,
            trees: self.done,
            elem_counts,
            markers: self.source.markers.clone(),
        };
        debug_assert_eq!(result.validate(), Ok(()));
        for (k, q) in &self.added {
            let t = result.tree(*k).expect("added tree must be local");
            let i = t
                .elements
                .binary_search_by(|e| geom.cmp_key(e, q))
                .expect("added quadrant must appear in the result");
            callback(*k, q, t.offset + i as u64);
        }
        result
    }
}
