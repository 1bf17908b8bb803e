//! Entropy coding of anchor positions and features.

pub mod container;
pub mod mem;
pub mod octree;
pub mod prob;
pub mod range;
