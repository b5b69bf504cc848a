//! Deterministic simulated communicator over P logical ranks.
//!
//! Each logical rank runs as one OS thread inside `SimComm::run`. All
//! cross-rank effects go through this module: point-to-point queues with
//! FIFO delivery per (source, destination, tag) channel, and collective
//! operations that every rank must enter in the same order. Receives name
//! their source and tag, so a program's results are deterministic
//! independent of thread scheduling.

use std::collections::{HashMap, VecDeque};
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

/// How long a rank may block on a receive or collective before the
/// simulation declares a deadlock.
const DEADLOCK_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Default)]
struct Channels {
    queues: HashMap<(usize, usize, u64), VecDeque<Vec<u8>>>,
}

struct CollectiveState {
    epoch: u64,
    arrived: usize,
    inputs: Vec<Option<Vec<u8>>>,
    result: Arc<Vec<Vec<u8>>>,
}

struct Shared {
    size: usize,
    channels: Mutex<Channels>,
    channel_cv: Condvar,
    collective: Mutex<CollectiveState>,
    collective_cv: Condvar,
    aborted: AtomicBool,
}

impl Shared {
    fn new(size: usize) -> Self {
        Shared {
            size,
            channels: Mutex::new(Channels::default()),
            channel_cv: Condvar::new(),
            collective: Mutex::new(CollectiveState {
                epoch: 0,
                arrived: 0,
                inputs: vec![None; size],
                result: Arc::new(Vec::new()),
            }),
            collective_cv: Condvar::new(),
            aborted: AtomicBool::new(false),
        }
    }

    fn check_abort(&self) {
        if self.aborted.load(Ordering::SeqCst) {
            panic!("simulated communicator aborted: a peer rank failed");
        }
    }
}

/// Per-rank instrumentation counters.
#[derive(Clone, Copy, Default, Debug, PartialEq, Eq)]
pub struct CommStats {
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub collectives: u64,
}

/// Handle held by one logical rank. Not shareable between ranks; each rank
/// gets its own in `SimComm::run`.
pub struct SimComm {
    rank: usize,
    shared: Arc<Shared>,
    stats: std::cell::Cell<CommStats>,
}

/// Sets the abort flag when its thread unwinds, so peers blocked in
/// receives or collectives fail fast instead of timing out.
struct AbortGuard(Arc<Shared>);

impl Drop for AbortGuard {
    fn drop(&mut self) {
        if std::thread::panicking() {
            self.0.aborted.store(true, Ordering::SeqCst);
            self.0.channel_cv.notify_all();
            self.0.collective_cv.notify_all();
        }
    }
}

impl SimComm {
    /// Run `f` once per rank on `size` logical ranks and collect the
    /// results in rank order. Panics in any rank propagate.
    pub fn run<R, F>(size: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(&SimComm) -> R + Sync,
    {
        assert!(size >= 1, "need at least one rank");
        let shared = Arc::new(Shared::new(size));
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..size)
                .map(|rank| {
                    let shared = Arc::clone(&shared);
                    let f = &f;
                    scope.spawn(move || {
                        let _guard = AbortGuard(Arc::clone(&shared));
                        let comm = SimComm {
                            rank,
                            shared,
                            stats: std::cell::Cell::new(CommStats::default()),
                        };
                        f(&comm)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| match h.join() {
                    Ok(r) => r,
                    Err(e) => std::panic::resume_unwind(e),
                })
                .collect()
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.shared.size
    }

    pub fn stats(&self) -> CommStats {
        self.stats.get()
    }

    pub fn reset_stats(&self) {
        self.stats.set(CommStats::default());
    }

    fn bump(&self, f: impl FnOnce(&mut CommStats)) {
        let mut s = self.stats.get();
        f(&mut s);
        self.stats.set(s);
    }

    /// Nonblocking send: enqueues and returns. Delivery is FIFO per
    /// (source, destination, tag) channel.
    pub fn send(&self, dest: usize, tag: u64, bytes: Vec<u8>) {
        assert!(dest < self.shared.size, "destination rank out of range");
        self.bump(|s| {
            s.messages_sent += 1;
            s.bytes_sent += bytes.len() as u64;
        });
        let mut ch = self.shared.channels.lock().unwrap();
        ch.queues
            .entry((self.rank, dest, tag))
            .or_default()
            .push_back(bytes);
        self.shared.channel_cv.notify_all();
    }

    /// Blocking receive from a named source and tag.
    pub fn recv(&self, source: usize, tag: u64) -> Vec<u8> {
        assert!(source < self.shared.size, "source rank out of range");
        let mut ch = self.shared.channels.lock().unwrap();
        loop {
            self.shared.check_abort();
            if let Some(q) = ch.queues.get_mut(&(source, self.rank, tag)) {
                if let Some(bytes) = q.pop_front() {
                    drop(ch);
                    self.bump(|s| s.messages_received += 1);
                    return bytes;
                }
            }
            let (guard, timeout) = self
                .shared
                .channel_cv
                .wait_timeout(ch, DEADLOCK_TIMEOUT)
                .unwrap();
            ch = guard;
            if timeout.timed_out() {
                panic!(
                    "simulated deadlock: rank {} waiting on ({}, tag {})",
                    self.rank, source, tag
                );
            }
        }
    }

    /// Nonblocking receive handle; `RecvHandle::wait` completes it.
    pub fn irecv(&self, source: usize, tag: u64) -> RecvHandle {
        RecvHandle { source, tag }
    }

    /// Collective: everyone contributes a byte buffer, everyone gets all
    /// buffers in rank order.
    pub fn allgather(&self, local: Vec<u8>) -> Vec<Vec<u8>> {
        self.bump(|s| s.collectives += 1);
        let mut coll = self.shared.collective.lock().unwrap();
        let my_epoch = coll.epoch;
        assert!(
            coll.inputs[self.rank].is_none(),
            "collective discipline violated by rank {}",
            self.rank
        );
        coll.inputs[self.rank] = Some(local);
        coll.arrived += 1;
        if coll.arrived == self.shared.size {
            let gathered: Vec<Vec<u8>> =
                coll.inputs.iter_mut().map(|b| b.take().unwrap()).collect();
            coll.result = Arc::new(gathered);
            coll.arrived = 0;
            coll.epoch += 1;
            self.shared.collective_cv.notify_all();
            return coll.result.as_ref().clone();
        }
        loop {
            self.shared.check_abort();
            if coll.epoch != my_epoch {
                return coll.result.as_ref().clone();
            }
            let (guard, timeout) = self
                .shared
                .collective_cv
                .wait_timeout(coll, DEADLOCK_TIMEOUT)
                .unwrap();
            coll = guard;
            if timeout.timed_out() {
                panic!(
                    "simulated deadlock: rank {} stuck in collective",
                    self.rank
                );
            }
        }
    }

    pub fn barrier(&self) {
        self.allgather(Vec::new());
    }

    pub fn allgather_u64(&self, v: u64) -> Vec<u64> {
        self.allgather(v.to_le_bytes().to_vec())
            .into_iter()
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .collect()
    }

    /// Variable-count collective: concatenation of all ranks' u64 arrays.
    pub fn allgatherv_u64(&self, local: &[u64]) -> Vec<u64> {
        let bytes: Vec<u8> = local.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.allgather(bytes)
            .into_iter()
            .flat_map(|b| {
                b.chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Variable-count collective: concatenation of all ranks' byte arrays.
    pub fn allgatherv_bytes(&self, local: Vec<u8>) -> Vec<u8> {
        self.allgather(local).into_iter().flatten().collect()
    }

    /// Collective file write: every rank passes disjoint (offset, bytes)
    /// windows of one file; rank 0 assembles and writes the whole file.
    /// Window disjointness is enforced; gaps remain zero bytes.
    pub fn write_file_collective(
        &self,
        path: &Path,
        total_len: u64,
        windows: Vec<(u64, Vec<u8>)>,
    ) -> io::Result<()> {
        let mut enc = Vec::new();
        for (off, bytes) in &windows {
            enc.extend_from_slice(&off.to_le_bytes());
            enc.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            enc.extend_from_slice(bytes);
        }
        let all = self.allgather(enc);
        let status = if self.rank == 0 {
            match assemble_file(total_len, &all) {
                Ok(buf) => std::fs::write(path, buf).err(),
                Err(e) => Some(e),
            }
        } else {
            None
        };
        let code = self.allgather_u64(if self.rank == 0 {
            status.is_some() as u64
        } else {
            0
        });
        if code[0] != 0 {
            return Err(status.unwrap_or_else(|| {
                io::Error::other("collective file write failed on rank 0")
            }));
        }
        Ok(())
    }
}

fn assemble_file(total_len: u64, per_rank: &[Vec<u8>]) -> io::Result<Vec<u8>> {
    let mut buf = vec![0u8; total_len as usize];
    let mut intervals: Vec<(u64, u64)> = Vec::new();
    for enc in per_rank {
        let mut pos = 0usize;
        while pos < enc.len() {
            let off = u64::from_le_bytes(enc[pos..pos + 8].try_into().unwrap());
            let len = u64::from_le_bytes(enc[pos + 8..pos + 16].try_into().unwrap());
            pos += 16;
            let bytes = &enc[pos..pos + len as usize];
            pos += len as usize;
            if off + len > total_len {
                return Err(io::Error::other("file window exceeds declared length"));
            }
            intervals.push((off, off + len));
            buf[off as usize..(off + len) as usize].copy_from_slice(bytes);
        }
    }
    intervals.sort_unstable();
    for w in intervals.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(io::Error::other("overlapping file windows"));
        }
    }
    Ok(buf)
}

/// Completion handle for `SimComm::irecv`.
pub struct RecvHandle {
    source: usize,
    tag: u64,
}

impl RecvHandle {
    pub fn wait(self, comm: &SimComm) -> Vec<u8> {
        comm.recv(self.source, self.tag)
    }
}

const TAG_NOTIFY: u64 = 0x4e4f54; // "NOT"

/// Result of one pattern reversal: the ranks that send to this rank, with
/// the payload each attached, plus the number of communication rounds used.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NotifyOutcome {
    pub senders: Vec<(usize, u64)>,
    pub rounds: u32,
}

/// Reverse an asymmetric communication pattern over an n-ary tree.
///
/// Every rank calls collectively with the set of ranks it intends to send
/// to; the return value is the transposed pattern: the set of ranks that
/// target this rank. Rounds are bounded by one tree sweep up and one down.
pub fn nary_notify(comm: &SimComm, targets: &[usize], branching: usize) -> Vec<usize> {
    let annotated: Vec<(usize, u64)> = targets.iter().map(|&t| (t, 0)).collect();
    nary_notify_payload(comm, &annotated, branching)
        .senders
        .into_iter()
        .map(|(s, _)| s)
        .collect()
}

/// As `nary_notify`, with one small payload word carried per pattern edge
/// (used for, e.g., announcing message byte counts ahead of a transfer).
pub fn nary_notify_payload(
    comm: &SimComm,
    targets: &[(usize, u64)],
    branching: usize,
) -> NotifyOutcome {
    assert!(branching >= 2, "branching factor must be at least 2");
    let p = comm.size();
    let me = comm.rank();
    for &(t, _) in targets {
        assert!(t < p, "notify target rank out of range");
    }

    // Entries travel as (destination, sender, payload) triples. Start with
    // this rank's own outgoing edges, deduplicated by destination.
    let mut entries: Vec<(u64, u64, u64)> = {
        let mut seen = std::collections::HashSet::new();
        let mut v: Vec<(u64, u64, u64)> = targets
            .iter()
            .filter(|(t, _)| seen.insert(*t))
            .map(|&(t, w)| (t as u64, me as u64, w))
            .collect();
        v.sort_unstable();
        v
    };

    let depth_of = |r: usize| -> u32 {
        let mut d = 0;
        let mut r = r;
        while r > 0 {
            r = (r - 1) / branching;
            d += 1;
        }
        d
    };
    let max_depth = (0..p).map(depth_of).max().unwrap_or(0);
    let my_depth = depth_of(me);
    let parent = if me > 0 { Some((me - 1) / branching) } else { None };
    let children: Vec<usize> = (1..=branching)
        .map(|i| branching * me + i)
        .filter(|&c| c < p)
        .collect();
    let in_subtree = |mut r: usize, root: usize| -> bool {
        while r > root {
            r = (r - 1) / branching;
        }
        r == root
    };

    let mut rounds = 0u32;
    // Up-sweep: leaves push their edge lists toward the root, one tree
    // level per round.
    for level in (1..=max_depth).rev() {
        if my_depth + 1 == level || my_depth == level {
            if my_depth == level {
                comm.send(parent.unwrap(), TAG_NOTIFY, encode_entries(&entries));
                entries.clear();
            } else {
                for &c in children.iter().filter(|&&c| depth_of(c) == level) {
                    entries.extend(decode_entries(&comm.recv(c, TAG_NOTIFY)));
                }
            }
        }
        rounds += 1;
    }
    // Down-sweep: the root scatters each edge toward the subtree holding
    // its destination.
    let mut inbox: Vec<(u64, u64, u64)> = Vec::new();
    for level in 0..max_depth {
        if my_depth == level {
            let (mine, rest): (Vec<_>, Vec<_>) =
                entries.iter().partition(|&&(d, _, _)| d as usize == me);
            inbox.extend(mine);
            for &c in &children {
                let sub: Vec<(u64, u64, u64)> = rest
                    .iter()
                    .filter(|&&&(d, _, _)| in_subtree(d as usize, c))
                    .map(|&&e| e)
                    .collect();
                comm.send(c, TAG_NOTIFY, encode_entries(&sub));
            }
            entries.clear();
        } else if my_depth == level + 1 {
            entries = decode_entries(&comm.recv(parent.unwrap(), TAG_NOTIFY));
        }
        rounds += 1;
    }
    if my_depth == max_depth {
        inbox.extend(entries.iter().filter(|&&(d, _, _)| d as usize == me));
    }

    let mut senders: Vec<(usize, u64)> = inbox
        .into_iter()
        .map(|(_, s, w)| (s as usize, w))
        .collect();
    senders.sort_unstable();
    NotifyOutcome { senders, rounds }
}

fn encode_entries(entries: &[(u64, u64, u64)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(entries.len() * 24);
    for &(a, b, c) in entries {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

fn decode_entries(bytes: &[u8]) -> Vec<(u64, u64, u64)> {
    bytes
        .chunks_exact(24)
        .map(|c| {
            (
                u64::from_le_bytes(c[0..8].try_into().unwrap()),
                u64::from_le_bytes(c[8..16].try_into().unwrap()),
                u64::from_le_bytes(c[16..24].try_into().unwrap()),
            )
        })
        .collect()
}
