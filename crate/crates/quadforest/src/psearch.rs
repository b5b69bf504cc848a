//! Communication-free search over the encoded partition.
//!
//! Using only the replicated shared arrays (partition markers and tree
//! count), any rank can determine which ranks own forest regions matching a
//! set of queries, without ever touching remote elements. The recursion
//! narrows both the query set and the rank window top down; a branch whose
//! rank window collapses to a single rank is a terminal match.

use crate::forest::Forest;
use crate::quadrant::{Geometry, Quadrant};

/// Offsets of a type-sorted array: positions of type `t` are
/// `offsets[t] <= i < offsets[t + 1]`. Computed by combined multi-target
/// binary splitting rather than one search per type.
pub fn array_split(types: &[usize], num_types: usize) -> Vec<usize> {
    debug_assert!(types.windows(2).all(|w| w[0] <= w[1]), "input must be type-sorted");
    debug_assert!(types.iter().all(|&t| t < num_types));
    let mut offsets = vec![0usize; num_types + 1];
    offsets[num_types] = types.len();
    split_range(types, &mut offsets, 0, num_types, 0, types.len());
    offsets
}

/// Fill `offsets[t]` for `t_lo < t < t_hi`, given that entries of these
/// types lie in `[i_lo, i_hi)` and the bounding offsets are already set.
fn split_range(
    types: &[usize],
    offsets: &mut [usize],
    t_lo: usize,
    t_hi: usize,
    i_lo: usize,
    i_hi: usize,
) {
    if t_hi - t_lo <= 1 {
        return;
    }
    if i_lo == i_hi {
        for t in t_lo + 1..t_hi {
            offsets[t] = i_lo;
        }
        return;
    }
    let t_mid = (t_lo + t_hi) / 2;
    // first index in [i_lo, i_hi) whose type reaches t_mid
    let mut lo = i_lo;
    let mut hi = i_hi;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if types[mid] < t_mid {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    offsets[t_mid] = lo;
    split_range(types, offsets, t_lo, t_mid, i_lo, lo);
    split_range(types, offsets, t_mid, t_hi, lo, i_hi);
}

/// Widest rank range [p_first, p_last] such that both ends own at least one
/// element of type `t`, given offsets in global rank indices over a marker
/// window. `b` is the quadrant whose region type `t` describes; `k` its
/// tree.
fn processes(f: &Forest, offsets: &[usize], t: usize, k: u64, b: &Quadrant) -> (usize, usize) {
    debug_assert!(offsets[t + 1] >= 1);
    let p_last = offsets[t + 1] - 1;
    let mut p_first = offsets[t];
    if p_first <= p_last && f.begins_with(p_first, k, b) {
        // empty ranks carry the marker of their successor; skip them
        while f.rank_empty(p_first) {
            p_first += 1;
        }
    } else {
        // no rank begins at b's first descendant, so exactly one earlier
        // rank owns it
        debug_assert!(p_first >= 1);
        p_first -= 1;
    }
    (p_first, p_last)
}

/// Rank range owning elements of tree `k`, from the shared arrays alone.
pub fn owner_range(f: &Forest, k: u64) -> (usize, usize) {
    let toplevel = toplevel_offsets(f);
    processes(f, &toplevel, k as usize, k, &f.geom.root())
}

fn toplevel_offsets(f: &Forest) -> Vec<usize> {
    let types: Vec<usize> = f.markers.iter().map(|m| m.tree as usize).collect();
    array_split(&types, f.num_trees() as usize + 1)
}

/// A terminal match of the partition search: all elements below `quadrant`
/// of tree `tree` are owned by `rank`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PartitionMatch {
    pub tree: u64,
    pub quadrant: Quadrant,
    pub rank: usize,
}

/// Top-down search over the partition. For every query, returns the
/// terminal matches in (tree, curve) order. The callback decides whether a
/// query intersects the branch quadrant; it sees the current candidate
/// rank range and may match optimistically (extra branches cost time, not
/// correctness). Needs no communication: any rank may call this at any
/// time with its own queries.
pub fn search_partition<Q>(
    f: &Forest,
    queries: &[Q],
    mut matches: impl FnMut(u64, &Quadrant, usize, usize, &Q) -> bool,
) -> Vec<Vec<PartitionMatch>> {
    let mut results: Vec<Vec<PartitionMatch>> = vec![Vec::new(); queries.len()];
    let toplevel = toplevel_offsets(f);
    let all: Vec<usize> = (0..queries.len()).collect();
    for k in 0..f.num_trees() {
        let a = f.geom.root();
        let (p_first, p_last) = processes(f, &toplevel, k as usize, k, &a);
        recursion(f, k, &a, p_first, p_last, &all, queries, &mut matches, &mut results);
    }
    results
}

#[allow(clippy::too_many_arguments)]
fn recursion<Q>(
    f: &Forest,
    k: u64,
    b: &Quadrant,
    p_first: usize,
    p_last: usize,
    live: &[usize],
    queries: &[Q],
    matches: &mut impl FnMut(u64, &Quadrant, usize, usize, &Q) -> bool,
    results: &mut [Vec<PartitionMatch>],
) {
    let matched: Vec<usize> = live
        .iter()
        .copied()
        .filter(|&i| matches(k, b, p_first, p_last, &queries[i]))
        .collect();
    if matched.is_empty() {
        return;
    }
    if p_first == p_last {
        for &i in &matched {
            results[i].push(PartitionMatch {
                tree: k,
                quadrant: *b,
                rank: p_first,
            });
        }
        return;
    }
    // window of markers beginning strictly inside b, typed by child id
    let types: Vec<usize> = (p_first + 1..=p_last)
        .map(|p| f.geom.child_containing(b, &f.markers[p].desc))
        .collect();
    let mut offsets = array_split(&types, f.geom.num_children());
    for o in &mut offsets {
        *o += p_first + 1;
    }
    for (i, c) in f.geom.children(b).into_iter().enumerate() {
        let (cf, cl) = processes(f, &offsets, i, k, &c);
        recursion(f, k, &c, cf, cl, &matched, queries, matches, results);
    }
}

/// Top-down search over this rank's local leaves. The match callback
/// prunes branches (and leaves); `leaf_callback` fires once per (query,
/// containing local leaf) with the leaf's rank-local element index.
pub fn search_local<Q>(
    f: &Forest,
    queries: &[Q],
    mut matches: impl FnMut(u64, &Quadrant, &Q) -> bool,
    mut leaf_callback: impl FnMut(u64, &Quadrant, u64, &Q),
) {
    let all: Vec<usize> = (0..queries.len()).collect();
    for t in &f.trees {
        local_recursion(
            &f.geom,
            t.tree,
            &t.elements,
            t.offset,
            &f.geom.root(),
            0,
            t.elements.len(),
            &all,
            queries,
            &mut matches,
            &mut leaf_callback,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn local_recursion<Q>(
    geom: &Geometry,
    tree: u64,
    elements: &[Quadrant],
    tree_offset: u64,
    b: &Quadrant,
    lo: usize,
    hi: usize,
    live: &[usize],
    queries: &[Q],
    matches: &mut impl FnMut(u64, &Quadrant, &Q) -> bool,
    leaf_callback: &mut impl FnMut(u64, &Quadrant, u64, &Q),
) {
    if lo == hi || live.is_empty() {
        return;
    }
    // a single element that covers b terminates the descent at that leaf
    if hi - lo == 1 && geom.is_ancestor_or_equal(&elements[lo], b) {
        let leaf = &elements[lo];
        for &i in live {
            if matches(tree, leaf, &queries[i]) {
                leaf_callback(tree, leaf, tree_offset + lo as u64, &queries[i]);
            }
        }
        return;
    }
    let matched: Vec<usize> = live
        .iter()
        .copied()
        .filter(|&i| matches(tree, b, &queries[i]))
        .collect();
    if matched.is_empty() {
        return;
    }
    for c in geom.children(b) {
        let c_lo = geom.sfc_index(&c);
        let c_hi = geom.last_index(&c);
        // elements intersecting child c within [lo, hi)
        let sub_lo = lo + elements[lo..hi].partition_point(|e| geom.last_index(e) < c_lo);
        let sub_hi = lo + elements[lo..hi].partition_point(|e| geom.sfc_index(e) <= c_hi);
        local_recursion(
            geom,
            tree,
            elements,
            tree_offset,
            &c,
            sub_lo,
            sub_hi,
            &matched,
            queries,
            matches,
            leaf_callback,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::SimComm;
    use crate::forest::{new_uniform, BrickConnectivity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn split_oracle(types: &[usize], num_types: usize) -> Vec<usize> {
        (0..=num_types)
            .map(|t| types.iter().filter(|&&x| x < t).count())
            .collect()
    }

    #[test]
    fn array_split_examples() {
        assert_eq!(array_split(&[0, 0, 1, 3], 4), vec![0, 2, 3, 3, 4]);
        assert_eq!(array_split(&[], 3), vec![0, 0, 0, 0]);
        assert_eq!(array_split(&[2, 2, 2], 3), vec![0, 0, 0, 3]);
    }

    #[test]
    fn array_split_matches_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let t = rng.gen_range(1..=9usize);
            let n = rng.gen_range(0..=30usize);
            let mut types: Vec<usize> = (0..n).map(|_| rng.gen_range(0..t)).collect();
            types.sort_unstable();
            assert_eq!(array_split(&types, t), split_oracle(&types, t));
        }
    }

    /// Brute-force owner ranges from the gathered global element list.
    fn owner_oracle(
        global: &[(u64, Quadrant)],
        counts: &[u64],
        num_trees: u64,
    ) -> Vec<(usize, usize)> {
        let p = counts.len() - 1;
        let rank_of = |g: u64| (0..p).find(|&r| g >= counts[r] && g < counts[r + 1]).unwrap();
        (0..num_trees)
            .map(|k| {
                let first = global.iter().position(|(t, _)| *t == k).unwrap() as u64;
                let last = global.iter().rposition(|(t, _)| *t == k).unwrap() as u64;
                (rank_of(first), rank_of(last))
            })
            .collect()
    }

    #[test]
    fn owner_range_matches_oracle_random() {
        for case in 0..30u64 {
            let mut top = ChaCha8Rng::seed_from_u64(7000 + case);
            let p = top.gen_range(1..=9usize);
            let dims = [top.gen_range(1..=3u32), top.gen_range(1..=2u32), 1];
            SimComm::run(p, move |comm| {
                let g = Geometry::new(2, 4);
                let base = new_uniform(comm, g, BrickConnectivity::new(2, dims), 1);
                let refined = base.refine(comm, |k, q| (q.x + q.y + k as u32) % 3 == 0);
                let mut wrng = ChaCha8Rng::seed_from_u64(case);
                let w: Vec<u64> = (0..refined.local_num_elements())
                    .map(|_| wrng.gen_range(0..=3))
                    .collect();
                let f = refined.partition(comm, &w);
                let global = f.allgather_elements(comm);
                let want = owner_oracle(&global, &f.elem_counts, f.num_trees());
                for k in 0..f.num_trees() {
                    assert_eq!(
                        owner_range(&f, k),
                        want[k as usize],
                        "case {} tree {}",
                        case,
                        k
                    );
                }
            });
        }
    }

    #[test]
    fn owner_range_tree_absent_from_markers() {
        // P=2 over 3 trees with all weight on rank 0's start: rank 0 gets
        // almost everything, so some tree never appears as a marker tree
        SimComm::run(2, |comm| {
            let f0 = new_uniform(comm, Geometry::new(2, 3), BrickConnectivity::new(2, [3, 1, 1]), 1);
            let n = f0.local_num_elements() as usize;
            let mut w = vec![0u64; n];
            if comm.rank() == 0 && n > 0 {
                w[0] = 1;
            }
            let last = comm.size() - 1;
            let f = {
                // put one unit of weight on the very last element instead,
                // so rank 0 owns trees 0..2 and rank 1 only the tail
                let mut w2 = vec![0u64; n];
                if comm.rank() == last && n > 0 {
                    w2[n - 1] = 1;
                }
                let _ = w;
                f0.partition(comm, &w2)
            };
            // tree 1 starts inside rank 0's range and no marker names it
            assert!(f.markers.iter().all(|m| m.tree != 1));
            assert_eq!(owner_range(&f, 1), (0, 0));
        });
    }

    /// Point in level-L coordinates with a tree id.
    #[derive(Clone, Copy)]
    struct Pt {
        tree: u64,
        x: u32,
        y: u32,
    }

    fn pt_in(g: &Geometry, b: &Quadrant, p: &Pt) -> bool {
        let s = g.side(b.level);
        p.x >= b.x && p.x < b.x + s && p.y >= b.y && p.y < b.y + s
    }

    #[test]
    fn partition_point_search_owner_soundness() {
        for case in 0..30u64 {
            let mut top = ChaCha8Rng::seed_from_u64(9000 + case);
            let p = top.gen_range(1..=8usize);
            let dims = [top.gen_range(1..=2u32), top.gen_range(1..=2u32), 1];
            SimComm::run(p, move |comm| {
                let g = Geometry::new(2, 4);
                let base = new_uniform(comm, g, BrickConnectivity::new(2, dims), 1);
                let refined = base.refine(comm, |k, q| (2 * q.x + q.y + k as u32) % 4 == 0);
                let mut wrng = ChaCha8Rng::seed_from_u64(case + 500);
                let w: Vec<u64> = (0..refined.local_num_elements())
                    .map(|_| wrng.gen_range(0..=3))
                    .collect();
                let f = refined.partition(comm, &w);
                let global = f.allgather_elements(comm);

                let mut qrng = ChaCha8Rng::seed_from_u64(case * 17 + 3);
                let range = g.coord_range();
                let queries: Vec<Pt> = (0..40)
                    .map(|_| Pt {
                        tree: qrng.gen_range(0..f.num_trees()),
                        x: qrng.gen_range(0..range),
                        y: qrng.gen_range(0..range),
                    })
                    .collect();

                comm.reset_stats();
                let res = search_partition(&f, &queries, |k, b, _, _, q| {
                    k == q.tree && pt_in(&g, b, q)
                });
                let s = comm.stats();
                assert_eq!(s.messages_sent + s.collectives, 0, "search must not communicate");

                for (q, matches) in queries.iter().zip(&res) {
                    // brute-force owner: global index of the leaf holding q
                    let gidx = global
                        .iter()
                        .position(|(k, e)| *k == q.tree && pt_in(&g, e, q))
                        .unwrap() as u64;
                    let owner = (0..comm.size())
                        .find(|&r| gidx >= f.elem_counts[r] && gidx < f.elem_counts[r + 1])
                        .unwrap();
                    assert!(!matches.is_empty());
                    // a point can sit on shared boundaries of several
                    // branches only if coordinates coincide with edges;
                    // with half-open containment exactly one branch matches
                    assert_eq!(matches.len(), 1);
                    assert_eq!(matches[0].rank, owner, "case {}", case);
                    assert_eq!(matches[0].tree, q.tree);
                }
            });
        }
    }

    #[test]
    fn box_query_finds_exactly_intersecting_ranks() {
        #[derive(Clone, Copy)]
        struct BoxQ {
            tree: u64,
            x0: u32,
            y0: u32,
            x1: u32, // exclusive
            y1: u32,
        }
        fn overlaps(g: &Geometry, b: &Quadrant, q: &BoxQ) -> bool {
            let s = g.side(b.level);
            b.x < q.x1 && q.x0 < b.x + s && b.y < q.y1 && q.y0 < b.y + s
        }
        for case in 0..20u64 {
            let mut top = ChaCha8Rng::seed_from_u64(1300 + case);
            let p = top.gen_range(2..=8usize);
            SimComm::run(p, move |comm| {
                let g = Geometry::new(2, 4);
                let base = new_uniform(comm, g, BrickConnectivity::unit(2), 2);
                let refined = base.refine(comm, |_, q| (q.x / 4 + q.y / 4) % 2 == 0);
                let mut wrng = ChaCha8Rng::seed_from_u64(case + 77);
                let w: Vec<u64> = (0..refined.local_num_elements())
                    .map(|_| wrng.gen_range(0..=2))
                    .collect();
                let f = refined.partition(comm, &w);
                let global = f.allgather_elements(comm);

                let mut qrng = ChaCha8Rng::seed_from_u64(case * 31);
                let r = g.coord_range();
                let (ax, bx) = (qrng.gen_range(0..r), qrng.gen_range(0..r));
                let (ay, by) = (qrng.gen_range(0..r), qrng.gen_range(0..r));
                let q = BoxQ {
                    tree: 0,
                    x0: ax.min(bx),
                    y0: ay.min(by),
                    x1: ax.max(bx) + 1,
                    y1: ay.max(by) + 1,
                };
                let res = search_partition(&f, &[q], |k, b, _, _, q| {
                    k == q.tree && overlaps(&g, b, q)
                });
                let mut found: Vec<usize> = res[0].iter().map(|m| m.rank).collect();
                found.dedup();

                // oracle: ranks owning at least one overlapping leaf
                let mut want = Vec::new();
                for rank in 0..comm.size() {
                    let lo = f.elem_counts[rank] as usize;
                    let hi = f.elem_counts[rank + 1] as usize;
                    if global[lo..hi].iter().any(|(k, e)| *k == q.tree && overlaps(&g, e, &q)) {
                        want.push(rank);
                    }
                }
                assert_eq!(found, want, "case {}", case);
            });
        }
    }

    #[test]
    fn single_rank_search_terminates_at_roots() {
        SimComm::run(1, |comm| {
            let f = new_uniform(comm, Geometry::new(2, 3), BrickConnectivity::new(2, [2, 1, 1]), 2);
            let res = search_partition(&f, &[()], |_, _, _, _, _| true);
            assert_eq!(res[0].len(), 2);
            for (m, k) in res[0].iter().zip(0u64..) {
                assert_eq!(m.rank, 0);
                assert_eq!(m.tree, k);
                assert_eq!(m.quadrant, f.geom.root());
            }
        });
    }

    #[test]
    fn local_search_matches_linear_scan() {
        SimComm::run(4, |comm| {
            let g = Geometry::new(2, 5);
            let base = new_uniform(comm, g, BrickConnectivity::unit(2), 2);
            let f = base.refine(comm, |_, q| (q.x + q.y) % 3 == 0);
            let mut qrng = ChaCha8Rng::seed_from_u64(comm.rank() as u64);
            let r = g.coord_range();
            let queries: Vec<(usize, Pt)> = (0..100)
                .map(|qi| {
                    (
                        qi,
                        Pt {
                            tree: 0,
                            x: qrng.gen_range(0..r),
                            y: qrng.gen_range(0..r),
                        },
                    )
                })
                .collect();
            let mut found: Vec<(usize, Quadrant, u64)> = Vec::new();
            search_local(
                &f,
                &queries,
                |_, b, (_, q)| pt_in(&g, b, q),
                |_, leaf, idx, (qi, _)| found.push((*qi, *leaf, idx)),
            );
            // oracle: linear containment scan over local elements
            let mut want: Vec<(usize, Quadrant, u64)> = Vec::new();
            for (qi, q) in &queries {
                for (_, idx, e) in f.local_elements() {
                    if pt_in(&g, e, q) {
                        want.push((*qi, *e, idx as u64));
                    }
                }
            }
            found.sort_by_key(|(qi, _, idx)| (*qi, *idx));
            want.sort_by_key(|(qi, _, idx)| (*qi, *idx));
            assert_eq!(found, want);
        });
    }
}
