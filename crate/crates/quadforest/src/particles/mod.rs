//! Particle tracking demo: independent particles in a static gravity field,
//! tracked on an adaptive forest that follows the particle density.
//!
//! The mesh stores particles in the element containing their current
//! position. Each Runge-Kutta stage moves every particle, finds the new
//! owner rank with a partition search, reverses the send pattern with the
//! n-ary notify, redistributes the movers, adapts the mesh to the per
//! element capacity bound, and repartitions by the weight 1 + count with a
//! variable-size transfer of the particle payloads.
//!
//! Every decision that shapes the global state is a function of element
//! identity (tree, position, level) or particle identity, never of the rank
//! layout, so the final particle state is independent of the number of
//! ranks.

pub mod physics;

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::build::build_begin;
use crate::comm::{nary_notify_payload, SimComm};
use crate::forest::{new_uniform, BrickConnectivity, Forest};
use crate::pertree::count_pertree;
use crate::psearch::{search_local, search_partition};
use crate::quadrant::{Geometry, Quadrant};
use crate::transfer::transfer_variable;

pub use physics::{Particle, RkScheme, Sun, SunSet, PARTICLE_BYTES};

const TAG_PARTS: u64 = 0x505254; // "PRT"

/// All knobs of a run. Serializable so a run can be reproduced from its
/// logged configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    /// Requested particle count; the effective count is the sum of the
    /// rounded per-element expectations.
    pub particles: u64,
    /// Per-element capacity: refine above it, coarsen families below half.
    pub elem_max: u64,
    pub min_level: u8,
    pub max_level: u8,
    /// Coordinate resolution of the forest; bounds every other level.
    pub coord_level: u8,
    /// Runge-Kutta order, 1 to 4.
    pub rk_order: u8,
    pub dt: f64,
    pub steps: u64,
    /// Trees per axis of the brick.
    pub brick: [u32; 3],
    pub seed: u64,
    /// Initial density: isotropic Gaussian bump.
    pub mu: [f64; 3],
    pub sigma: f64,
    /// Branching factor of the notify tree.
    pub branching: usize,
    /// Check ownership, capacity, balance, and particle conservation after
    /// every stage.
    pub strict: bool,
}

impl SimConfig {
    /// Desk-scale preset.
    pub fn small() -> SimConfig {
        SimConfig {
            particles: 12800,
            elem_max: 5,
            min_level: 3,
            max_level: 6,
            coord_level: 12,
            rk_order: 3,
            dt: 0.008,
            steps: 50,
            brick: [1, 1, 1],
            seed: 42,
            mu: [0.3, 0.4, 0.5],
            sigma: 0.07,
            branching: 4,
            strict: true,
        }
    }

    fn check(&self) {
        assert!(self.min_level <= self.max_level);
        assert!(self.max_level <= self.coord_level);
        assert!((1..=4).contains(&self.rk_order));
        assert!(self.elem_max >= 1);
        assert!(self.branching >= 2);
        assert!(self.sigma > 0.0);
    }
}

/// Per-stage record of what happened, aggregated over all ranks.
#[derive(Clone, Debug, Serialize)]
pub struct StageStats {
    pub step: u64,
    pub stage: usize,
    pub time: f64,
    pub particles: u64,
    pub exits: u64,
    pub elements: u64,
    pub messages: u64,
    pub bytes: u64,
}

/// One rank's share of a running simulation.
pub struct Simulation {
    pub cfg: SimConfig,
    pub suns: SunSet,
    pub rk: RkScheme,
    pub forest: Forest,
    /// Particles per local element, parallel to the forest's local element
    /// order; each list sorted by particle id.
    pub parts: Vec<Vec<Particle>>,
    pub time: f64,
    pub step_index: u64,
    /// Current global particle count; decreases as particles leave the
    /// domain.
    pub total_particles: u64,
    pub total_exits: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Deterministic generator keyed by element identity, never by rank.
fn elem_rng(seed: u64, tree: u64, index: u64, level: u8, purpose: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for v in [tree, index, level as u64, purpose] {
        h = splitmix(h ^ v);
    }
    ChaCha8Rng::seed_from_u64(h)
}

impl Simulation {
    /// Set up the initial state: uniform forest at the minimum level, then
    /// alternately estimate per-element particle expectations from the
    /// density integral, refine overfull elements, and repartition by the
    /// expected weights until the capacity bound holds; finally sample the
    /// particles element by element. Collective.
    pub fn new(comm: &SimComm, cfg: SimConfig) -> Simulation {
        cfg.check();
        let geom = Geometry::new(3, cfg.coord_level);
        let conn = BrickConnectivity::new(3, cfg.brick);
        let mut forest = new_uniform(comm, geom, conn, cfg.min_level);
        let mut expected = expected_counts(comm, &forest, &cfg);
        for _ in 0..=(cfg.max_level - cfg.min_level) {
            let over: Vec<bool> = forest
                .local_elements()
                .zip(&expected)
                .map(|((_, _, q), &e)| e.round() as u64 > cfg.elem_max && q.level < cfg.max_level)
                .collect();
            let any_local = over.iter().any(|&b| b) as u64;
            if comm.allgather_u64(any_local).iter().sum::<u64>() == 0 {
                break;
            }
            let mut i = 0;
            forest = forest.refine(comm, |_, _| {
                let r = over[i];
                i += 1;
                r
            });
            expected = expected_counts(comm, &forest, &cfg);
            let weights: Vec<u64> = expected.iter().map(|e| 1 + e.round() as u64).collect();
            forest = forest.partition(comm, &weights);
            expected = expected_counts(comm, &forest, &cfg);
        }

        // sample round(expected) particles per element, uniformly within
        // the element, with a generator keyed by element identity
        let mut parts: Vec<Vec<Particle>> = Vec::new();
        let mut local_n = 0u64;
        for ((k, i, q), &e) in forest.local_elements().zip(&expected) {
            let count = e.round() as u64;
            assert!(count < 1 << 20, "element expectation too large for ids");
            let g = forest.elem_counts[forest.rank] + i as u64;
            let mut rng = elem_rng(cfg.seed, k, geom.sfc_index(q), q.level, 0);
            let (origin, width) = elem_extent(&forest, k, q);
            let mut list = Vec::with_capacity(count as usize);
            for j in 0..count {
                let pos = [
                    origin[0] + rng.gen::<f64>() * width[0],
                    origin[1] + rng.gen::<f64>() * width[1],
                    origin[2] + rng.gen::<f64>() * width[2],
                ];
                list.push(Particle::at_rest((g << 20) | j, pos));
            }
            local_n += count;
            parts.push(list);
        }
        let total_particles = comm.allgather_u64(local_n).iter().sum();

        let sim = Simulation {
            rk: RkScheme::of_order(cfg.rk_order),
            cfg,
            suns: SunSet::default(),
            forest,
            parts,
            time: 0.0,
            step_index: 0,
            total_particles,
            total_exits: 0,
        };
        if sim.cfg.strict {
            sim.check_invariants(comm, false);
        }
        sim
    }

    /// Advance one full time step; returns one stats record per stage.
    pub fn step(&mut self, comm: &SimComm) -> Vec<StageStats> {
        let stages = self.rk.stages();
        let mut out = Vec::with_capacity(stages);
        for s in 0..stages {
            out.push(self.stage(comm, s));
        }
        self.step_index += 1;
        self.time += self.cfg.dt;
        out
    }

    /// One Runge-Kutta stage: move, redistribute, adapt, repartition.
    fn stage(&mut self, comm: &SimComm, stage: usize) -> StageStats {
        comm.reset_stats();
        let rk = self.rk.clone();
        let dt = self.cfg.dt;

        // move every particle to its next tracked position; particles that
        // leave the unit cube are erased
        let mut moving: Vec<Particle> = Vec::new();
        let mut exits = 0u64;
        for list in &mut self.parts {
            for mut p in list.drain(..) {
                p.advance(&self.suns, &rk, dt, stage);
                if locate(&self.forest, &p.stage_pos).is_some() {
                    moving.push(p);
                } else {
                    exits += 1;
                }
            }
        }

        // find the owner rank of every new position in one bulk search
        let queries: Vec<(u64, [u32; 3])> = moving
            .iter()
            .map(|p| locate(&self.forest, &p.stage_pos).unwrap())
            .collect();
        let found = search_partition(&self.forest, &queries, |k, b, _, _, q| {
            k == q.0 && quadrant_contains(&self.forest.geom, b, &q.1)
        });

        // group movers by destination; the send pattern is reversed with
        // the n-ary notify so each rank knows whom to receive from
        let me = comm.rank();
        let mut kept: Vec<Particle> = Vec::new();
        let mut by_dest: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
        for (p, matches) in moving.iter().zip(&found) {
            assert_eq!(matches.len(), 1, "point query must have a unique owner");
            let dest = matches[0].rank;
            if dest == me {
                kept.push(*p);
            } else {
                physics::encode_particle(by_dest.entry(dest).or_default(), p);
            }
        }
        let targets: Vec<(usize, u64)> = by_dest
            .iter()
            .map(|(&d, b)| (d, b.len() as u64))
            .collect();
        let outcome = nary_notify_payload(comm, &targets, self.cfg.branching);
        for (dest, bytes) in by_dest {
            comm.send(dest, TAG_PARTS, bytes);
        }
        let mut senders = outcome.senders;
        senders.sort_unstable();
        for (src, expect_bytes) in senders {
            let bytes = comm.recv(src, TAG_PARTS);
            assert_eq!(bytes.len() as u64, expect_bytes);
            for c in bytes.chunks_exact(PARTICLE_BYTES) {
                kept.push(physics::decode_particle(c));
            }
        }

        // assign everyone to a local leaf
        let n_local = self.forest.local_num_elements() as usize;
        let mut parts: Vec<Vec<Particle>> = vec![Vec::new(); n_local];
        let assign_queries: Vec<(u64, [u32; 3], usize)> = kept
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (k, c) = locate(&self.forest, &p.stage_pos).unwrap();
                (k, c, i)
            })
            .collect();
        let mut assigned = 0usize;
        let geom = self.forest.geom;
        search_local(
            &self.forest,
            &assign_queries,
            |k, b, q| k == q.0 && quadrant_contains(&geom, b, &q.1),
            |_, _, idx, q| {
                parts[idx as usize].push(kept[q.2]);
                assigned += 1;
            },
        );
        assert_eq!(assigned, kept.len(), "every particle lands in one leaf");
        for list in &mut parts {
            list.sort_unstable_by_key(|p| p.id);
        }
        self.parts = parts;

        let exits_global: u64 = comm.allgather_u64(exits).iter().sum();
        self.total_particles -= exits_global;
        self.total_exits += exits_global;

        self.adapt(comm);
        self.repartition(comm);

        if self.cfg.strict {
            self.check_invariants(comm, true);
        }
        let s = comm.stats();
        let agg = comm.allgatherv_u64(&[s.messages_sent, s.bytes_sent]);
        StageStats {
            step: self.step_index,
            stage,
            time: self.time,
            particles: self.total_particles,
            exits: exits_global,
            elements: self.forest.global_num_elements(),
            messages: agg.iter().step_by(2).sum(),
            bytes: agg.iter().skip(1).step_by(2).sum(),
        }
    }

    /// Refine elements over capacity until none is left (elements at the
    /// maximum level are exempt), then coarsen families whose combined
    /// count has dropped below half the capacity.
    fn adapt(&mut self, comm: &SimComm) {
        let geom = self.forest.geom;
        let nc = geom.num_children();
        loop {
            let over: Vec<bool> = self
                .forest
                .local_elements()
                .zip(&self.parts)
                .map(|((_, _, q), list)| {
                    list.len() as u64 > self.cfg.elem_max && q.level < self.cfg.max_level
                })
                .collect();
            let any = over.iter().any(|&b| b) as u64;
            if comm.allgather_u64(any).iter().sum::<u64>() == 0 {
                break;
            }
            let mut i = 0;
            let refined = self.forest.refine(comm, |_, _| {
                let r = over[i];
                i += 1;
                r
            });
            let mut parts: Vec<Vec<Particle>> = Vec::with_capacity(refined.trees.len());
            let old: Vec<(u64, Quadrant)> = self
                .forest
                .local_elements()
                .map(|(k, _, q)| (k, *q))
                .collect();
            for (j, (_, q)) in old.iter().enumerate() {
                if over[j] {
                    let mut buckets: Vec<Vec<Particle>> = vec![Vec::new(); nc];
                    for p in self.parts[j].drain(..) {
                        let (_, c) = locate(&self.forest, &p.stage_pos).unwrap();
                        let d = Quadrant::new(c[0], c[1], c[2], geom.max_level());
                        buckets[geom.child_containing(q, &d)].push(p);
                    }
                    parts.extend(buckets);
                } else {
                    parts.push(std::mem::take(&mut self.parts[j]));
                }
            }
            self.forest = refined;
            self.parts = parts;
        }

        // decide coarsening by scanning for complete local families exactly
        // as the forest does, keyed by the first child's identity
        let mut chosen: HashSet<(u64, u64, u8)> = HashSet::new();
        let mut merged_at: HashSet<usize> = HashSet::new();
        {
            let mut base = 0usize;
            for t in &self.forest.trees {
                let e = &t.elements;
                let mut i = 0usize;
                while i < e.len() {
                    let q = &e[i];
                    let family = q.level > self.cfg.min_level
                        && geom.child_id(q) == 0
                        && i + nc <= e.len()
                        && e[i..i + nc]
                            .iter()
                            .enumerate()
                            .all(|(j, s)| s.level == q.level && geom.child_id(s) == j)
                        && e[i..i + nc].iter().all(|s| geom.parent(s) == geom.parent(q));
                    if family {
                        let total: usize =
                            (0..nc).map(|j| self.parts[base + i + j].len()).sum();
                        if (total as u64) < self.cfg.elem_max / 2 {
                            chosen.insert((t.tree, geom.sfc_index(q), q.level));
                            merged_at.insert(base + i);
                            i += nc;
                            continue;
                        }
                    }
                    i += 1;
                }
                base += e.len();
            }
        }
        if comm
            .allgather_u64(!chosen.is_empty() as u64)
            .iter()
            .sum::<u64>()
            > 0
        {
            let coarse = self.forest.coarsen(comm, |k, fam| {
                chosen.contains(&(k, geom.sfc_index(&fam[0]), fam[0].level))
            });
            let mut parts: Vec<Vec<Particle>> = Vec::with_capacity(coarse.trees.len());
            let mut j = 0usize;
            while j < self.parts.len() {
                if merged_at.contains(&j) {
                    let mut merged = Vec::new();
                    for l in 0..nc {
                        merged.append(&mut self.parts[j + l]);
                    }
                    merged.sort_unstable_by_key(|p| p.id);
                    parts.push(merged);
                    j += nc;
                } else {
                    parts.push(std::mem::take(&mut self.parts[j]));
                    j += 1;
                }
            }
            self.forest = coarse;
            self.parts = parts;
        }
    }

    /// Repartition by the weight 1 + count and move the particle payloads
    /// with one variable-size transfer.
    fn repartition(&mut self, comm: &SimComm) {
        let weights: Vec<u64> = self.parts.iter().map(|l| 1 + l.len() as u64).collect();
        let after = self.forest.partition(comm, &weights);
        let sizes: Vec<u64> = self
            .parts
            .iter()
            .map(|l| (l.len() * PARTICLE_BYTES) as u64)
            .collect();
        let mut data = Vec::with_capacity(sizes.iter().sum::<u64>() as usize);
        for list in &self.parts {
            for p in list {
                physics::encode_particle(&mut data, p);
            }
        }
        let (bytes, sizes_after) = transfer_variable(
            comm,
            &self.forest.elem_counts,
            &after.elem_counts,
            &data,
            &sizes,
        )
        .expect("transfer arrays are consistent by construction");
        let mut parts = Vec::with_capacity(sizes_after.len());
        let mut off = 0usize;
        for s in &sizes_after {
            let s = *s as usize;
            parts.push(
                bytes[off..off + s]
                    .chunks_exact(PARTICLE_BYTES)
                    .map(physics::decode_particle)
                    .collect(),
            );
            off += s;
        }
        self.forest = after;
        self.parts = parts;
    }

    /// Verify ownership, capacity, particle conservation, and partition
    /// balance. Collective; panics on violation.
    pub fn check_invariants(&self, comm: &SimComm, check_capacity: bool) {
        assert_eq!(self.forest.validate(), Ok(()));
        assert_eq!(self.parts.len() as u64, self.forest.local_num_elements());
        let geom = self.forest.geom;
        let mut local_n = 0u64;
        for ((k, i, q), list) in self.forest.local_elements().zip(&self.parts) {
            debug_assert!(i < self.parts.len());
            for p in list {
                let (pk, c) = locate(&self.forest, &p.stage_pos)
                    .expect("stored particles are inside the domain");
                assert_eq!(pk, k, "particle in the element's tree");
                assert!(
                    quadrant_contains(&geom, q, &c),
                    "particle inside its owning element"
                );
            }
            if check_capacity && q.level < self.cfg.max_level {
                assert!(
                    list.len() as u64 <= self.cfg.elem_max,
                    "capacity bound after adaptation"
                );
            }
            local_n += list.len() as u64;
        }
        let counts = comm.allgather_u64(local_n);
        assert_eq!(
            counts.iter().sum::<u64>(),
            self.total_particles,
            "particle conservation up to logged exits"
        );

        // balance: every rank's weight is within one maximal element weight
        // of the ideal share
        let w_local: u64 = self.parts.iter().map(|l| 1 + l.len() as u64).sum();
        let w_max_local = self.parts.iter().map(|l| 1 + l.len() as u64).max().unwrap_or(0);
        let sums = comm.allgather_u64(w_local);
        let maxes = comm.allgather_u64(w_max_local);
        let w_total: u64 = sums.iter().sum();
        let w_max = *maxes.iter().max().unwrap();
        let ideal = w_total as f64 / comm.size() as f64;
        for (p, &w) in sums.iter().enumerate() {
            assert!(
                (w as f64 - ideal).abs() <= w_max as f64,
                "rank {} weight {} vs ideal {:.1} (max {})",
                p,
                w,
                ideal,
                w_max
            );
        }
    }

    /// Build a sparse snapshot forest: every `stride`-th particle in global
    /// order becomes its own element at `snap_level` (or at the particle's
    /// element level if that is finer), the rest of the domain is filled
    /// with the coarsest completion. Returns the snapshot forest, its
    /// per-tree cumulative counts, and the number of selected particles.
    /// Collective.
    pub fn snapshot(&self, comm: &SimComm, stride: u64, snap_level: u8) -> (Forest, Vec<u64>, u64) {
        assert!(stride >= 1);
        assert!(snap_level <= self.forest.geom.max_level());
        let geom = self.forest.geom;
        let local_n: u64 = self.parts.iter().map(|l| l.len() as u64).sum();
        let totals = comm.allgather_u64(local_n);
        let mut g: u64 = totals[..comm.rank()].iter().sum();
        let mut adds: Vec<(u64, Quadrant)> = Vec::new();
        let mut selected_local = 0u64;
        for ((k, _, q), list) in self.forest.local_elements().zip(&self.parts) {
            for p in list {
                if g % stride == 0 {
                    let (_, c) = locate(&self.forest, &p.stage_pos).unwrap();
                    let level = snap_level.max(q.level);
                    let d = Quadrant::new(c[0], c[1], c[2], geom.max_level());
                    adds.push((k, geom.ancestor_at(&d, level)));
                    selected_local += 1;
                }
                g += 1;
            }
        }
        adds.sort_unstable_by_key(|(k, q)| (*k, geom.sfc_index(q)));
        adds.dedup();
        let mut b = build_begin(&self.forest);
        for (k, q) in adds {
            b.add(k, q).expect("snapshot additions are ordered and in window");
        }
        let snap = b.finish(comm);
        let pertree = count_pertree(&snap, comm);
        let selected: u64 = comm.allgather_u64(selected_local).iter().sum();
        (snap, pertree, selected)
    }
}

/// Map a global position to (tree, level-L coordinates); `None` outside the
/// half-open unit cube.
pub fn locate(f: &Forest, x: &[f64; 3]) -> Option<(u64, [u32; 3])> {
    let range = f.geom.coord_range();
    let mut tc = [0u32; 3];
    let mut c = [0u32; 3];
    for i in 0..3 {
        if !(0.0..1.0).contains(&x[i]) {
            return None;
        }
        let dims = f.conn.dims[i];
        let scaled = x[i] * dims as f64;
        tc[i] = (scaled as u32).min(dims - 1);
        let u = scaled - tc[i] as f64;
        c[i] = ((u * range as f64) as u32).min(range - 1);
    }
    Some((f.conn.tree_index(tc), c))
}

/// Whether the level-L coordinate triple falls inside the quadrant.
pub fn quadrant_contains(geom: &Geometry, q: &Quadrant, c: &[u32; 3]) -> bool {
    let side = geom.side(q.level);
    let anchor = [q.x, q.y, q.z];
    (0..3).all(|i| c[i] >= anchor[i] && c[i] - anchor[i] < side)
}

/// Global origin and width of an element of tree `k`.
pub fn elem_extent(f: &Forest, k: u64, q: &Quadrant) -> ([f64; 3], [f64; 3]) {
    let tc = f.conn.tree_coords(k);
    let range = f.geom.coord_range() as f64;
    let side = f.geom.side(q.level) as f64;
    let anchor = [q.x, q.y, q.z];
    let mut origin = [0.0; 3];
    let mut width = [0.0; 3];
    for i in 0..3 {
        let dims = f.conn.dims[i] as f64;
        origin[i] = (tc[i] as f64 + anchor[i] as f64 / range) / dims;
        width[i] = side / range / dims;
    }
    (origin, width)
}

/// Unnormalized initial density.
fn density(cfg: &SimConfig, x: &[f64; 3]) -> f64 {
    let r2: f64 = (0..3).map(|i| (x[i] - cfg.mu[i]).powi(2)).sum();
    (-r2 / (2.0 * cfg.sigma * cfg.sigma)).exp()
}

/// Expected particle count per local element: the density integral by a
/// tensor-product two-point Gauss rule, normalized by the domain total.
/// The total is accumulated in global element order so every rank — and
/// every rank count — produces bit-identical expectations. Collective.
fn expected_counts(comm: &SimComm, f: &Forest, cfg: &SimConfig) -> Vec<f64> {
    let locals: Vec<f64> = f
        .local_elements()
        .map(|(k, _, q)| {
            let (origin, width) = elem_extent(f, k, q);
            let vol = width[0] * width[1] * width[2];
            // two Gauss points per axis: center +- width / (2 sqrt 3)
            let mut sum = 0.0;
            for node in 0..8u32 {
                let mut x = [0.0; 3];
                for i in 0..3 {
                    let s = if node >> i & 1 == 0 { -1.0 } else { 1.0 };
                    x[i] = origin[i] + width[i] * (0.5 + s / (2.0 * 3.0f64.sqrt()));
                }
                sum += density(cfg, &x);
            }
            vol * sum / 8.0
        })
        .collect();
    let bytes: Vec<u8> = locals.iter().flat_map(|v| v.to_le_bytes()).collect();
    let all = comm.allgatherv_bytes(bytes);
    let mut total = 0.0;
    for c in all.chunks_exact(8) {
        total += f64::from_le_bytes(c.try_into().unwrap());
    }
    locals
        .iter()
        .map(|v| cfg.particles as f64 * v / total)
        .collect()
}
