//! Topology-agnostic tokenization of skeletal motion in BVH format.
//!
//! The crate covers the full pipeline: parsing and canonicalizing BVH files,
//! encoding rest-pose skeletons with a graph attention encoder, compressing
//! motion into discrete tokens through a virtual-joint residual vector
//! quantizer, decoding tokens onto arbitrary target skeletons, and scoring
//! results with standard motion metrics.
//!
//! Start with the runnable programs under `examples/`; each one demonstrates
//! a single capability end to end. The `motok` binary chains the same
//! library calls into a corpus-level pipeline.

pub mod autodiff;
pub mod bvh;
pub mod graph;
pub mod metrics;
pub mod motion;
pub mod pipeline;
pub mod skeleton;
pub mod tokenizer;

/// 3x3 rotation matrix, column-vector convention.
pub type Mat3 = nalgebra::Matrix3<f64>;
/// 3-vector in world or offset space.
pub type Vec3 = nalgebra::Vector3<f64>;
