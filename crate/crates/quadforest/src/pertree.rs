//! Global per-tree element counts with minimal communication.
//!
//! Exactly one rank is responsible for counting each tree, chosen without
//! communication from the partition markers: the owner of the tree's first
//! element, except that when several ranks share the tree's first
//! descendant as their marker, the first (necessarily empty) one of them is
//! picked. Under this convention the point-to-point traffic is strictly
//! fewer than min{K, P} single-integer messages, each rank sending at most
//! one and receiving at most one, followed by one variable allgather.

use crate::comm::SimComm;
use crate::forest::Forest;

const TAG_PERTREE: u64 = 0x504552; // "PER"

/// Replicated assignment of trees to counting ranks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeResponsibility {
    /// Number of trees rank p is responsible for; length P.
    pub per_rank: Vec<u64>,
    /// Cumulative form; length P + 1, last entry K. Rank p is responsible
    /// for trees [cumulative[p], cumulative[p + 1]).
    pub cumulative: Vec<u64>,
}

/// Compute the responsibility arrays from the shared marker array alone;
/// every rank arrives at the identical result in O(max{K, P}) time.
pub fn responsible(f: &Forest) -> TreeResponsibility {
    let p_count = f.num_ranks;
    let k_count = f.num_trees();
    let mut per_rank = vec![0u64; p_count];
    // rank 0 is always responsible for tree 0, empty or not
    per_rank[0] = 1;
    let mut p = 0usize;
    let mut k = 0u64;
    loop {
        // find the first rank that begins in a later tree; p is then the
        // minimum rank whose marker names tree k (when one exists)
        loop {
            p += 1;
            if f.markers[p].tree > k {
                break;
            }
        }
        k += 1;
        // trees skipped over entirely belong to the previous rank
        while k < f.markers[p].tree {
            per_rank[p - 1] += 1;
            k += 1;
        }
        if k == k_count {
            break;
        }
        if f.begins_with(p, k, &f.geom.root()) {
            // p may be empty here; the convention picks it regardless
            per_rank[p] += 1;
        } else {
            per_rank[p - 1] += 1;
        }
    }
    let mut cumulative = vec![0u64; p_count + 1];
    for q in 0..p_count {
        cumulative[q + 1] = cumulative[q] + per_rank[q];
    }
    debug_assert_eq!(cumulative[p_count], k_count);
    TreeResponsibility {
        per_rank,
        cumulative,
    }
}

/// Cumulative global element counts per tree: K + 1 entries, first 0, last
/// N. Identical on every rank on return. Collective.
pub fn count_pertree(f: &Forest, comm: &SimComm) -> Vec<u64> {
    let resp = responsible(f);
    let p = f.rank;
    let p_count = f.num_ranks;
    let my_k = resp.per_rank[p];

    // phase 2: seed each responsible slot with the rank-local count; all
    // but the last slot are already final
    let mut counts = vec![0u64; my_k as usize];
    for (i, slot) in counts.iter_mut().enumerate() {
        let k = resp.cumulative[p] + i as u64;
        if let Some(t) = f.tree(k) {
            *slot = t.elements.len() as u64;
        }
    }

    // phase 4 first: sending is nonblocking, so emit before any receive.
    // Senders own elements in a tree preceding their first responsibility.
    if my_k > 0 && f.markers[p].tree < resp.cumulative[p] {
        let first_tree = f.markers[p].tree;
        let n_local = f
            .tree(first_tree)
            .map(|t| t.elements.len() as u64)
            .expect("a sender owns elements of its first tree");
        let mut q = p - 1;
        while resp.per_rank[q] == 0 {
            q -= 1; // never underruns: some earlier rank is responsible
        }
        comm.send(q, TAG_PERTREE, n_local.to_le_bytes().to_vec());
    }

    // phase 3: complete the last responsible slot with remote elements
    if my_k > 0 {
        let k = resp.cumulative[p + 1] - 1;
        let mut q = p + 1;
        while q < p_count && resp.per_rank[q] == 0 {
            q += 1;
        }
        let n_delta = f.elem_counts[q] - f.elem_counts[p + 1];
        let n_q = if q == p_count || f.markers[q].tree > k {
            0
        } else {
            u64::from_le_bytes(
                comm.recv(q, TAG_PERTREE)
                    .try_into()
                    .expect("per-tree message is one integer"),
            )
        };
        *counts.last_mut().unwrap() += n_delta + n_q;
    }

    // phase 5: share all per-tree totals; the responsibility arrays are
    // exactly the counts/offsets of this gather
    let all = comm.allgatherv_u64(&counts);
    debug_assert_eq!(all.len() as u64, f.num_trees());
    let mut cumulative = vec![0u64; all.len() + 1];
    for (k, n) in all.iter().enumerate() {
        cumulative[k + 1] = cumulative[k] + n;
    }
    debug_assert_eq!(*cumulative.last().unwrap(), f.global_num_elements());
    cumulative
}
