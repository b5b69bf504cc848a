//! Moving per-element payloads between two partitions of one element list.
//!
//! After repartitioning, the elements themselves are recomputed cheaply,
//! but application payloads must follow them. Senders and receivers are
//! derived purely from the two cumulative count arrays: rank p talks to
//! exactly the ranks whose after-interval overlaps its before-interval.
//! Fixed-size payloads move in one round; variable-size payloads move the
//! per-element sizes first (as a fixed transfer) and the bytes second.

use crate::comm::SimComm;

const TAG_XFER: u64 = 0x584652; // "XFR"
const TAG_XFER_VAR: u64 = 0x585641; // "XVA"

#[derive(thiserror::Error, Debug, PartialEq, Eq)]
pub enum TransferError {
    #[error("cumulative count arrays disagree on the global element count")]
    CountMismatch,
    #[error("data buffer length does not match the local element count")]
    BufferSize,
}

/// Ranks whose interval in `counts` intersects [lo, hi) nontrivially.
fn overlapping(counts: &[u64], lo: u64, hi: u64) -> std::ops::Range<usize> {
    let p = counts.len() - 1;
    // first q with counts[q + 1] > lo
    let start = counts[1..=p].partition_point(|&c| c <= lo);
    // first q with counts[q] >= hi
    let end = counts[..p].partition_point(|&c| c < hi);
    start..end.max(start)
}

fn check(
    comm: &SimComm,
    before: &[u64],
    after: &[u64],
    data_len: usize,
    elem_size: usize,
) -> Result<(), TransferError> {
    let p = comm.size();
    if before.len() != p + 1 || after.len() != p + 1 || before[p] != after[p] {
        return Err(TransferError::CountMismatch);
    }
    let local = (before[comm.rank() + 1] - before[comm.rank()]) as usize;
    if data_len != local * elem_size {
        return Err(TransferError::BufferSize);
    }
    Ok(())
}

/// In-flight fixed-size transfer: sends are posted, receives outstanding.
pub struct FixedTransfer {
    out: Vec<u8>,
    /// Receives to complete: (source rank, destination byte offset, bytes).
    pending: Vec<(usize, usize, usize)>,
    tag: u64,
}

fn fixed_begin_tagged(
    comm: &SimComm,
    before: &[u64],
    after: &[u64],
    data_before: &[u8],
    size: usize,
    tag: u64,
) -> Result<FixedTransfer, TransferError> {
    check(comm, before, after, data_before.len(), size)?;
    let me = comm.rank();
    let (b_lo, b_hi) = (before[me], before[me + 1]);
    let (a_lo, a_hi) = (after[me], after[me + 1]);
    let mut out = vec![0u8; (a_hi - a_lo) as usize * size];
    let mut pending = Vec::new();
    if size > 0 {
        for q in overlapping(after, b_lo, b_hi) {
            let g0 = b_lo.max(after[q]);
            let g1 = b_hi.min(after[q + 1]);
            let bytes =
                &data_before[(g0 - b_lo) as usize * size..(g1 - b_lo) as usize * size];
            if q == me {
                let d0 = (g0 - a_lo) as usize * size;
                out[d0..d0 + bytes.len()].copy_from_slice(bytes);
            } else {
                comm.send(q, tag, bytes.to_vec());
            }
        }
        for q in overlapping(before, a_lo, a_hi) {
            if q == me {
                continue;
            }
            let g0 = a_lo.max(before[q]);
            let g1 = a_hi.min(before[q + 1]);
            pending.push((q, (g0 - a_lo) as usize * size, (g1 - g0) as usize * size));
        }
    }
    Ok(FixedTransfer { out, pending, tag })
}

/// Post all sends of a fixed-size transfer and return the handle holding
/// the partially filled result. Collective with the matching `end`.
pub fn transfer_fixed_begin(
    comm: &SimComm,
    before: &[u64],
    after: &[u64],
    data_before: &[u8],
    size: usize,
) -> Result<FixedTransfer, TransferError> {
    fixed_begin_tagged(comm, before, after, data_before, size, TAG_XFER)
}

impl FixedTransfer {
    /// Complete the outstanding receives and return the rank's payload
    /// block in the after-partition layout.
    pub fn end(mut self, comm: &SimComm) -> Vec<u8> {
        for &(q, dst, len) in &self.pending {
            let bytes = comm.recv(q, self.tag);
            assert_eq!(bytes.len(), len, "fixed transfer message size mismatch");
            self.out[dst..dst + len].copy_from_slice(&bytes);
        }
        self.out
    }
}

/// Fused fixed-size transfer: payloads of `size` bytes per element move
/// from the before-partition to the after-partition layout. Collective.
pub fn transfer_fixed(
    comm: &SimComm,
    before: &[u64],
    after: &[u64],
    data_before: &[u8],
    size: usize,
) -> Result<Vec<u8>, TransferError> {
    Ok(transfer_fixed_begin(comm, before, after, data_before, size)?.end(comm))
}

/// In-flight variable-size transfer.
pub struct VariableTransfer {
    inner: FixedTransfer,
    sizes_after: Vec<u64>,
}

/// Begin a variable-size transfer: the per-element sizes move first as a
/// fixed transfer (fused, since the payload layout depends on them), then
/// the payload sends are posted. Collective with the matching `end`.
pub fn transfer_variable_begin(
    comm: &SimComm,
    before: &[u64],
    after: &[u64],
    data_before: &[u8],
    sizes_before: &[u64],
) -> Result<VariableTransfer, TransferError> {
    let me = comm.rank();
    let size_bytes: Vec<u8> = sizes_before.iter().flat_map(|s| s.to_le_bytes()).collect();
    let sizes_after: Vec<u64> = transfer_fixed(comm, before, after, &size_bytes, 8)?
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let prefix = |sizes: &[u64]| -> Vec<u64> {
        let mut p = vec![0u64; sizes.len() + 1];
        for (i, s) in sizes.iter().enumerate() {
            p[i + 1] = p[i] + s;
        }
        p
    };
    let b_prefix = prefix(sizes_before);
    let a_prefix = prefix(&sizes_after);
    if data_before.len() as u64 != *b_prefix.last().unwrap() {
        return Err(TransferError::BufferSize);
    }

    let (b_lo, b_hi) = (before[me], before[me + 1]);
    let (a_lo, a_hi) = (after[me], after[me + 1]);
    let mut out = vec![0u8; *a_prefix.last().unwrap() as usize];
    let mut pending = Vec::new();
    for q in overlapping(after, b_lo, b_hi) {
        let g0 = (b_lo.max(after[q]) - b_lo) as usize;
        let g1 = (b_hi.min(after[q + 1]) - b_lo) as usize;
        let bytes = &data_before[b_prefix[g0] as usize..b_prefix[g1] as usize];
        if q != me {
            comm.send(q, TAG_XFER_VAR, bytes.to_vec());
        } else {
            let d0 = a_prefix[(b_lo.max(after[q]) - a_lo) as usize] as usize;
            out[d0..d0 + bytes.len()].copy_from_slice(bytes);
        }
    }
    for q in overlapping(before, a_lo, a_hi) {
        if q == me {
            continue;
        }
        let g0 = (a_lo.max(before[q]) - a_lo) as usize;
        let g1 = (a_hi.min(before[q + 1]) - a_lo) as usize;
        pending.push((
            q,
            a_prefix[g0] as usize,
            (a_prefix[g1] - a_prefix[g0]) as usize,
        ));
    }
    Ok(VariableTransfer {
        inner: FixedTransfer {
            out,
            pending,
            tag: TAG_XFER_VAR,
        },
        sizes_after,
    })
}

impl VariableTransfer {
    /// Complete the receives; returns the payload block and the per-element
    /// sizes, both in the after-partition layout.
    pub fn end(self, comm: &SimComm) -> (Vec<u8>, Vec<u64>) {
        (self.inner.end(comm), self.sizes_after)
    }
}

/// Fused variable-size transfer. Collective.
pub fn transfer_variable(
    comm: &SimComm,
    before: &[u64],
    after: &[u64],
    data_before: &[u8],
    sizes_before: &[u64],
) -> Result<(Vec<u8>, Vec<u64>), TransferError> {
    Ok(transfer_variable_begin(comm, before, after, data_before, sizes_before)?.end(comm))
}
