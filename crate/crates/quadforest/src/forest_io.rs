//! Partition-independent file I/O for forests and per-element data.
//!
//! The mesh file stores the connectivity, the global element count, the
//! cumulative per-tree counts, and one fixed-size record per element in
//! global order — nothing about the rank count or partition, so the bytes
//! written are identical for any P and any number of ranks may load the
//! file. Data files carry per-element payloads in the same global order,
//! either at a fixed size per element (headerless) or with a size section
//! in front of concatenated variable payloads.
//!
//! All layout is little-endian. Mesh layout: magic `FRSTMESH`, u16 version
//! (= 1), u8 dimension, u8 max level, three u32 brick dimensions, u64
//! element count, then K+1 u64 cumulative per-tree counts, then the
//! records. A record is the 4d+1 bytes of coordinates and level, zero
//! padded to 12 bytes (2D) or 16 bytes (3D).

use std::path::Path;

use crate::comm::SimComm;
use crate::forest::{
    sentinel_marker, uniform_splits, BrickConnectivity, Forest, Marker,
};
use crate::pertree::count_pertree;
use crate::quadrant::{Geometry, Quadrant, SfcOrder, MAX_LEVEL_2D, MAX_LEVEL_3D};

pub const MESH_MAGIC: &[u8; 8] = b"FRSTMESH";
pub const MESH_VERSION: u16 = 1;

#[derive(thiserror::Error, Debug)]
pub enum MeshIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt mesh file: {0}")]
    Corrupt(&'static str),
}

/// Bytes per element record.
pub fn record_size(dim: u8) -> usize {
    if dim == 2 {
        12
    } else {
        16
    }
}

/// Parsed mesh file header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeshHeader {
    pub geom: Geometry,
    pub conn: BrickConnectivity,
    pub num_elements: u64,
    /// K + 1 cumulative per-tree element counts.
    pub pertree: Vec<u64>,
}

impl MeshHeader {
    pub fn byte_len(&self) -> usize {
        32 + self.pertree.len() * 8
    }

    /// Tree containing the element at global index `g`.
    pub fn tree_of(&self, g: u64) -> u64 {
        debug_assert!(g < self.num_elements);
        // first k with pertree[k + 1] > g
        self.pertree[1..].partition_point(|&n| n <= g) as u64
    }
}

fn encode_header(geom: &Geometry, conn: &BrickConnectivity, pertree: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + pertree.len() * 8);
    out.extend_from_slice(MESH_MAGIC);
    out.extend_from_slice(&MESH_VERSION.to_le_bytes());
    out.push(geom.dim());
    out.push(geom.max_level());
    for d in conn.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&pertree.last().unwrap().to_le_bytes());
    for n in pertree {
        out.extend_from_slice(&n.to_le_bytes());
    }
    out
}

fn encode_record(dim: u8, q: &Quadrant) -> Vec<u8> {
    let mut out = Vec::with_capacity(record_size(dim));
    out.extend_from_slice(&q.x.to_le_bytes());
    out.extend_from_slice(&q.y.to_le_bytes());
    if dim == 3 {
        out.extend_from_slice(&q.z.to_le_bytes());
    }
    out.push(q.level);
    out.resize(record_size(dim), 0);
    out
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Parse and validate a mesh file header from untrusted bytes. Returns the
/// header; all arithmetic is checked and no allocation exceeds what the
/// input length itself admits.
pub fn decode_mesh_header(bytes: &[u8]) -> Result<MeshHeader, MeshIoError> {
    if bytes.len() < 32 {
        return Err(MeshIoError::Corrupt("shorter than the fixed header"));
    }
    if &bytes[0..8] != MESH_MAGIC {
        return Err(MeshIoError::Corrupt("bad magic"));
    }
    if u16::from_le_bytes(bytes[8..10].try_into().unwrap()) != MESH_VERSION {
        return Err(MeshIoError::Corrupt("unsupported version"));
    }
    let dim = bytes[10];
    if dim != 2 && dim != 3 {
        return Err(MeshIoError::Corrupt("dimension must be 2 or 3"));
    }
    let max_level = bytes[11];
    let cap = if dim == 2 { MAX_LEVEL_2D } else { MAX_LEVEL_3D };
    if max_level < 1 || max_level > cap {
        return Err(MeshIoError::Corrupt("max level out of range"));
    }
    let dims = [
        u32::from_le_bytes(bytes[12..16].try_into().unwrap()),
        u32::from_le_bytes(bytes[16..20].try_into().unwrap()),
        u32::from_le_bytes(bytes[20..24].try_into().unwrap()),
    ];
    if dims.iter().any(|&d| d == 0) || (dim == 2 && dims[2] != 1) {
        return Err(MeshIoError::Corrupt("invalid brick dimensions"));
    }
    let num_trees = dims[0] as u64 * dims[1] as u64 * dims[2] as u64;
    let n = read_u64(bytes, 24);
    // the per-tree section must fit in the file before we allocate for it
    let section = num_trees
        .checked_add(1)
        .and_then(|k| k.checked_mul(8))
        .ok_or(MeshIoError::Corrupt("per-tree section overflows"))?;
    let body = (bytes.len() - 32) as u64;
    if section > body {
        return Err(MeshIoError::Corrupt("truncated per-tree section"));
    }
    let pertree: Vec<u64> = (0..=num_trees)
        .map(|k| read_u64(bytes, 32 + (k as usize) * 8))
        .collect();
    if pertree[0] != 0 || *pertree.last().unwrap() != n {
        return Err(MeshIoError::Corrupt("per-tree counts do not bracket [0, N]"));
    }
    if pertree.windows(2).any(|w| w[1] < w[0]) {
        return Err(MeshIoError::Corrupt("per-tree counts must be nondecreasing"));
    }
    let geom = Geometry::new(dim, max_level);
    let conn = BrickConnectivity::new(dim, dims);
    let header = MeshHeader {
        geom,
        conn,
        num_elements: n,
        pertree,
    };
    let records = n
        .checked_mul(record_size(dim) as u64)
        .ok_or(MeshIoError::Corrupt("record section overflows"))?;
    if header.byte_len() as u64 + records != bytes.len() as u64 {
        return Err(MeshIoError::Corrupt("file length does not match header"));
    }
    Ok(header)
}

fn decode_record(geom: &Geometry, rec: &[u8]) -> Result<Quadrant, MeshIoError> {
    let dim = geom.dim();
    let x = u32::from_le_bytes(rec[0..4].try_into().unwrap());
    let y = u32::from_le_bytes(rec[4..8].try_into().unwrap());
    let (z, level_at) = if dim == 3 {
        (u32::from_le_bytes(rec[8..12].try_into().unwrap()), 12)
    } else {
        (0, 8)
    };
    let q = Quadrant::new(x, y, z, rec[level_at]);
    if !geom.is_valid(&q) {
        return Err(MeshIoError::Corrupt("invalid element record"));
    }
    if rec[level_at + 1..].iter().any(|&b| b != 0) {
        return Err(MeshIoError::Corrupt("nonzero record padding"));
    }
    Ok(q)
}

/// Fully decode an untrusted mesh file: header plus every element with its
/// tree, in global order, with all ordering and coverage checks applied.
pub fn decode_mesh(bytes: &[u8]) -> Result<(MeshHeader, Vec<(u64, Quadrant)>), MeshIoError> {
    let header = decode_mesh_header(bytes)?;
    let geom = header.geom;
    let s = record_size(geom.dim());
    let body = &bytes[header.byte_len()..];
    let mut elements = Vec::with_capacity(header.num_elements as usize);
    let mut prev: Option<(u64, Quadrant)> = None;
    for g in 0..header.num_elements {
        let q = decode_record(&geom, &body[g as usize * s..g as usize * s + s])?;
        let k = header.tree_of(g);
        if let Some((pk, pq)) = prev {
            if pk == k && !matches!(geom.compare(&pq, &q), SfcOrder::Before) {
                return Err(MeshIoError::Corrupt("elements out of curve order"));
            }
        }
        prev = Some((k, q));
        elements.push((k, q));
    }
    Ok((header, elements))
}

/// Write the forest to one partition-independent file. Every rank writes
/// its own record window; rank 0 additionally writes the header with the
/// per-tree counts. Collective.
pub fn save_forest(comm: &SimComm, f: &Forest, path: &Path) -> Result<(), MeshIoError> {
    let pertree = count_pertree(f, comm);
    let header = encode_header(&f.geom, &f.conn, &pertree);
    let s = record_size(f.geom.dim());
    let total = header.len() as u64 + f.global_num_elements() * s as u64;
    let mut windows = Vec::new();
    let mut records = Vec::with_capacity(f.local_num_elements() as usize * s);
    for t in &f.trees {
        for q in &t.elements {
            records.extend_from_slice(&encode_record(f.geom.dim(), q));
        }
    }
    let my_off = header.len() as u64 + f.elem_counts[f.rank] * s as u64;
    if f.rank == 0 {
        windows.push((0, header));
    }
    windows.push((my_off, records));
    comm.write_file_collective(path, total, windows)?;
    Ok(())
}

/// Load a mesh file on any number of ranks: the element list is re-split
/// uniformly, each rank keeps its window, and the markers are recovered
/// from the first local elements with one allgather (empty ranks repaired
/// from their successors). Collective.
pub fn load_forest(comm: &SimComm, path: &Path) -> Result<Forest, MeshIoError> {
    let bytes = std::fs::read(path)?;
    let header = decode_mesh_header(&bytes)?;
    let geom = header.geom;
    let s = record_size(geom.dim());
    let splits = uniform_splits(header.num_elements, comm.size());
    let me = comm.rank();
    let base = header.byte_len();
    let mut slice = Vec::with_capacity((splits[me + 1] - splits[me]) as usize);
    let mut prev: Option<(u64, Quadrant)> = None;
    for g in splits[me]..splits[me + 1] {
        let rec = &bytes[base + g as usize * s..base + (g as usize + 1) * s];
        let q = decode_record(&geom, rec)?;
        let k = header.tree_of(g);
        if let Some((pk, pq)) = prev {
            if pk == k && !matches!(geom.compare(&pq, &q), SfcOrder::Before) {
                return Err(MeshIoError::Corrupt("elements out of curve order"));
            }
        }
        prev = Some((k, q));
        slice.push((k, q));
    }

    // recover the markers: first local element per rank, then repair
    // backward so empty ranks share their successor's marker
    let num_trees = header.conn.num_trees();
    let invalid = u64::MAX;
    let mine = slice
        .first()
        .map(|(k, q)| {
            let fd = geom.first_descendant(q);
            [*k, fd.x as u64, fd.y as u64, fd.z as u64]
        })
        .unwrap_or([invalid, 0, 0, 0]);
    let gathered = comm.allgatherv_u64(&mine);
    let mut markers = vec![sentinel_marker(&geom, num_trees); comm.size() + 1];
    for p in (0..comm.size()).rev() {
        let w = &gathered[p * 4..p * 4 + 4];
        markers[p] = if w[0] == invalid {
            markers[p + 1]
        } else {
            Marker {
                tree: w[0],
                desc: Quadrant::new(w[1] as u32, w[2] as u32, w[3] as u32, geom.max_level()),
            }
        };
    }

    let (local_range, trees) = crate::forest::trees_from_slice(&geom, &slice);
    let f = Forest {
        geom,
        conn: header.conn,
        rank: me,
        num_ranks: comm.size(),
        local_range,
        trees,
        elem_counts: splits,
        markers,
    };
    f.validate().map_err(|_| MeshIoError::Corrupt("inconsistent forest"))?;
    Ok(f)
}

/// Write fixed-size per-element data, headerless: byte `g * size` onward
/// holds element `g`'s payload. Collective.
pub fn save_data_fixed(
    comm: &SimComm,
    counts: &[u64],
    payload: &[u8],
    size: usize,
    path: &Path,
) -> Result<(), MeshIoError> {
    let me = comm.rank();
    assert_eq!(
        payload.len() as u64,
        (counts[me + 1] - counts[me]) * size as u64,
        "payload must cover the local elements"
    );
    let total = *counts.last().unwrap() * size as u64;
    let windows = vec![(counts[me] * size as u64, payload.to_vec())];
    comm.write_file_collective(path, total, windows)?;
    Ok(())
}

/// Read this rank's window of a fixed-size data file. Collective only in
/// the sense that every rank reads its own slice of `counts`.
pub fn load_data_fixed(
    comm: &SimComm,
    counts: &[u64],
    size: usize,
    path: &Path,
) -> Result<Vec<u8>, MeshIoError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() as u64 != *counts.last().unwrap() * size as u64 {
        return Err(MeshIoError::Corrupt("fixed data file length mismatch"));
    }
    let me = comm.rank();
    Ok(bytes[counts[me] as usize * size..counts[me + 1] as usize * size].to_vec())
}

/// Write variable-size per-element data: a fixed-size section of N u64
/// payload sizes, then the concatenated payloads. The payload offsets are
/// computed by one allgather of local byte totals, which is not itself
/// written to the file. Collective.
pub fn save_data_variable(
    comm: &SimComm,
    counts: &[u64],
    payload: &[u8],
    sizes: &[u64],
    path: &Path,
) -> Result<(), MeshIoError> {
    let me = comm.rank();
    assert_eq!(sizes.len() as u64, counts[me + 1] - counts[me]);
    let local_bytes: u64 = sizes.iter().sum();
    assert_eq!(payload.len() as u64, local_bytes);
    let totals = comm.allgather_u64(local_bytes);
    let n = *counts.last().unwrap();
    let my_payload_off =
        n * 8 + totals[..me].iter().sum::<u64>();
    let total = n * 8 + totals.iter().sum::<u64>();
    let size_bytes: Vec<u8> = sizes.iter().flat_map(|s| s.to_le_bytes()).collect();
    let windows = vec![
        (counts[me] * 8, size_bytes),
        (my_payload_off, payload.to_vec()),
    ];
    comm.write_file_collective(path, total, windows)?;
    Ok(())
}

/// Validate and split an untrusted variable-size data file for a known
/// element count: returns the size array and the payload section.
pub fn decode_data_variable(
    bytes: &[u8],
    num_elements: u64,
) -> Result<(Vec<u64>, &[u8]), MeshIoError> {
    let section = num_elements
        .checked_mul(8)
        .ok_or(MeshIoError::Corrupt("size section overflows"))?;
    if section > bytes.len() as u64 {
        return Err(MeshIoError::Corrupt("truncated size section"));
    }
    let mut sizes = Vec::with_capacity(num_elements as usize);
    let mut total: u64 = 0;
    for g in 0..num_elements as usize {
        let s = read_u64(bytes, g * 8);
        total = total
            .checked_add(s)
            .ok_or(MeshIoError::Corrupt("payload total overflows"))?;
        sizes.push(s);
    }
    let payload = &bytes[section as usize..];
    if payload.len() as u64 != total {
        return Err(MeshIoError::Corrupt("payload length disagrees with sizes"));
    }
    Ok((sizes, payload))
}

/// Read this rank's window of a variable-size data file: the sizes for the
/// local elements and the matching payload bytes.
pub fn load_data_variable(
    comm: &SimComm,
    counts: &[u64],
    path: &Path,
) -> Result<(Vec<u8>, Vec<u64>), MeshIoError> {
    let bytes = std::fs::read(path)?;
    let n = *counts.last().unwrap();
    let (sizes, payload) = decode_data_variable(&bytes, n)?;
    let me = comm.rank();
    let (lo, hi) = (counts[me] as usize, counts[me + 1] as usize);
    let off: u64 = sizes[..lo].iter().sum();
    let len: u64 = sizes[lo..hi].iter().sum();
    Ok((
        payload[off as usize..(off + len) as usize].to_vec(),
        sizes[lo..hi].to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::new_uniform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;

    fn g2(l: u8) -> Geometry {
        Geometry::new(2, l)
    }

    /// Serial oracle writer: assemble the expected file bytes directly from
    /// a gathered element list.
    fn oracle_mesh_bytes(
        geom: &Geometry,
        conn: &BrickConnectivity,
        global: &[(u64, Quadrant)],
    ) -> Vec<u8> {
        let k = conn.num_trees() as usize;
        let mut pertree = vec![0u64; k + 1];
        for (t, _) in global {
            pertree[*t as usize + 1] += 1;
        }
        for i in 0..k {
            pertree[i + 1] += pertree[i];
        }
        let mut out = encode_header(geom, conn, &pertree);
        for (_, q) in global {
            out.extend_from_slice(&encode_record(geom.dim(), q));
        }
        out
    }

    fn make_forest(comm: &SimComm, case: u64, dims: [u32; 3]) -> Forest {
        let g = g2(4);
        let base = new_uniform(comm, g, BrickConnectivity::new(2, dims), 1);
        let refined = base.refine(comm, |k, q| (q.x + 2 * q.y + k as u32 + case as u32) % 3 == 0);
        let mut wrng = ChaCha8Rng::seed_from_u64(case);
        let w: Vec<u64> = (0..refined.local_num_elements())
            .map(|_| wrng.gen_range(0..=3))
            .collect();
        refined.partition(comm, &w)
    }

    #[test]
    fn uniform_one_tree_matches_serial_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.frst");
        SimComm::run(3, |comm| {
            let f = new_uniform(comm, g2(3), BrickConnectivity::unit(2), 2);
            save_forest(comm, &f, &path).unwrap();
        });
        let bytes = std::fs::read(&path).unwrap();
        let g = g2(3);
        let global: Vec<(u64, Quadrant)> = (0..16u64)
            .map(|i| (0, g.quadrant_at_index(i << 2, 2)))
            .collect();
        assert_eq!(bytes, oracle_mesh_bytes(&g, &BrickConnectivity::unit(2), &global));
        let (header, elements) = decode_mesh(&bytes).unwrap();
        assert_eq!(header.pertree, vec![0, 16]);
        assert_eq!(elements.len(), 16);
    }

    #[test]
    fn bytes_identical_across_rank_counts() {
        let dir = tempfile::tempdir().unwrap();
        for case in 0..4u64 {
            let mut reference: Option<Vec<u8>> = None;
            for p in [1usize, 2, 3, 5, 8] {
                let path = dir.path().join(format!("mesh_{}_{}.frst", case, p));
                let path2 = path.clone();
                SimComm::run(p, move |comm| {
                    let f = make_forest(comm, case, [2, 1, 1]);
                    save_forest(comm, &f, &path2).unwrap();
                });
                let bytes = std::fs::read(&path).unwrap();
                match &reference {
                    None => reference = Some(bytes),
                    Some(r) => assert_eq!(&bytes, r, "case {} P={}", case, p),
                }
            }
        }
    }

    #[test]
    fn load_at_other_rank_count_then_save_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let a: PathBuf = dir.path().join("a.frst");
        let b: PathBuf = dir.path().join("b.frst");
        let (a2, b2) = (a.clone(), b.clone());
        SimComm::run(3, move |comm| {
            let f = make_forest(comm, 9, [3, 1, 1]);
            save_forest(comm, &f, &a2).unwrap();
        });
        let a3 = a.clone();
        SimComm::run(7, move |comm| {
            let f = load_forest(comm, &a3).unwrap();
            f.validate().unwrap();
            save_forest(comm, &f, &b2).unwrap();
        });
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn load_with_more_ranks_than_elements() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.frst");
        let p2 = path.clone();
        SimComm::run(1, move |comm| {
            let f = new_uniform(comm, g2(3), BrickConnectivity::unit(2), 1);
            save_forest(comm, &f, &p2).unwrap();
        });
        // 4 elements, 9 ranks: most ranks empty, markers repaired
        SimComm::run(9, move |comm| {
            let f = load_forest(comm, &path).unwrap();
            f.validate().unwrap();
            assert_eq!(f.global_num_elements(), 4);
        });
    }

    #[test]
    fn tree_lookup_by_cumulative_counts() {
        let header = MeshHeader {
            geom: g2(3),
            conn: BrickConnectivity::new(2, [2, 1, 1]),
            num_elements: 12,
            pertree: vec![0, 5, 12],
        };
        assert_eq!(header.tree_of(0), 0);
        assert_eq!(header.tree_of(4), 0);
        assert_eq!(header.tree_of(5), 1);
        assert_eq!(header.tree_of(7), 1);
        assert_eq!(header.tree_of(11), 1);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.frst");
        let p2 = path.clone();
        SimComm::run(1, move |comm| {
            let f = new_uniform(comm, g2(3), BrickConnectivity::unit(2), 2);
            save_forest(comm, &f, &p2).unwrap();
        });
        let good = std::fs::read(&path).unwrap();
        assert!(decode_mesh(&good).is_ok());

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_mesh(&bad), Err(MeshIoError::Corrupt(_))));

        let truncated = &good[..good.len() - 5];
        assert!(decode_mesh(truncated).is_err());

        let mut bad_level = good.clone();
        let base = decode_mesh_header(&good).unwrap().byte_len();
        bad_level[base + 8] = 31; // level beyond the max
        assert!(decode_mesh(&bad_level).is_err());

        let mut bad_pad = good.clone();
        bad_pad[base + 10] = 1; // nonzero padding byte
        assert!(decode_mesh(&bad_pad).is_err());

        assert!(decode_mesh(&[]).is_err());
        assert!(decode_mesh(MESH_MAGIC).is_err());
    }

    #[test]
    fn fixed_data_roundtrip_across_rank_counts() {
        let dir = tempfile::tempdir().unwrap();
        let n = 23u64;
        let payload = |g: u64| -> [u8; 8] { (g * 1000 + 7).to_le_bytes() };
        let mut reference: Option<Vec<u8>> = None;
        for p in [1usize, 2, 5] {
            let path = dir.path().join(format!("fixed_{}.dat", p));
            let p2 = path.clone();
            SimComm::run(p, move |comm| {
                let counts = uniform_splits(n, comm.size());
                let me = comm.rank();
                let data: Vec<u8> = (counts[me]..counts[me + 1]).flat_map(payload).collect();
                save_data_fixed(comm, &counts, &data, 8, &p2).unwrap();
                let back = load_data_fixed(comm, &counts, 8, &p2).unwrap();
                assert_eq!(back, data);
            });
            let bytes = std::fs::read(&path).unwrap();
            match &reference {
                None => reference = Some(bytes),
                Some(r) => assert_eq!(&bytes, r),
            }
        }
    }

    #[test]
    fn variable_data_layout_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("var.dat");
        let p2 = path.clone();
        SimComm::run(2, move |comm| {
            // sizes [0,3,0,5] over 4 elements split 2/2
            let counts = vec![0u64, 2, 4];
            let me = comm.rank();
            let (sizes, data): (Vec<u64>, Vec<u8>) = if me == 0 {
                (vec![0, 3], vec![1, 2, 3])
            } else {
                (vec![0, 5], vec![9, 8, 7, 6, 5])
            };
            save_data_variable(comm, &counts, &data, &sizes, &p2).unwrap();
            let (back, back_sizes) = load_data_variable(comm, &counts, &p2).unwrap();
            assert_eq!(back, data);
            assert_eq!(back_sizes, sizes);
        });
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 4 * 8 + 8);
        let (sizes, payload) = decode_data_variable(&bytes, 4).unwrap();
        assert_eq!(sizes, vec![0, 3, 0, 5]);
        assert_eq!(payload, &[1, 2, 3, 9, 8, 7, 6, 5]);
        // corrupt: declared sizes exceeding the payload
        let mut bad = bytes.clone();
        bad[0] = 200;
        assert!(decode_data_variable(&bad, 4).is_err());
    }

    #[test]
    fn zero_payload_variable_file_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.dat");
        let p2 = path.clone();
        SimComm::run(3, move |comm| {
            let counts = uniform_splits(7, comm.size());
            let me = comm.rank();
            let sizes = vec![0u64; (counts[me + 1] - counts[me]) as usize];
            save_data_variable(comm, &counts, &[], &sizes, &p2).unwrap();
            let (back, back_sizes) = load_data_variable(comm, &counts, &p2).unwrap();
            assert!(back.is_empty());
            assert_eq!(back_sizes, sizes);
        });
        assert_eq!(std::fs::read(&path).unwrap().len(), 7 * 8);
    }
}
