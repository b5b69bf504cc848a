//! Parallel forest-of-octrees algorithms over a deterministic simulated
//! communicator.
//!
//! The crate provides linearized adaptive quadtree/octree forests
//! partitioned across logical ranks by a space-filling curve, together with
//! the parallel algorithms that operate on the encoded partition: sparse
//! construction, partition search, per-tree element counting, partition
//! weighting, data transfer after repartitioning, peer discovery, and
//! partition-independent file I/O. A particle tracking demo exercises all
//! of it end to end.

pub mod build;
pub mod comm;
pub mod forest;
pub mod forest_io;
pub mod particles;
pub mod pertree;
pub mod psearch;
pub mod transfer;
pub mod quadrant;
