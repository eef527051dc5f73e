//! Lossy 3D codec built on overfit neural distance fields.
//!
//! A shape (triangle mesh or point cloud) is normalized into the unit ball
//! and represented by a small sinusoidal MLP trained to regress its
//! truncated distance field; the MLP parameters are quantized, retrained
//! against the quantization grid, and entropy coded into a compact
//! bitstream. Decoding evaluates the field on a regular grid, extracts the
//! zero level set with marching cubes (via gradient pseudo-signs for
//! unsigned fields) and resamples a point cloud or mesh. Optional per-point
//! colors travel in a second field trained on the decoded surface.
//!
//! The numeric core is generic over the scalar type through [`num::Real`];
//! the reference pipeline instantiates `f64` and the bitstream pins `f32`.

pub mod compress;
pub mod attribute;
pub mod error;
pub mod extract;
pub mod field;
pub mod geometry;
pub mod io;
pub mod math;
pub mod mc_tables;
pub mod metrics;
pub mod num;
pub mod oracle;
pub mod pipeline;
pub mod primitives;
pub mod sampler;
pub mod seeds;
pub mod spatial;
pub mod train;

pub use error::{Error, Result};

/// Concrete aliases for the default double-precision pipeline.
pub type Vec3d = math::Vec3<f64>;
pub type PointCloud64 = geometry::PointCloud<f64>;
pub type TriMesh64 = geometry::TriMesh<f64>;
pub type Shape64 = geometry::Shape<f64>;
pub type FieldModel64 = field::FieldModel<f64>;
pub type TrainingSet64 = sampler::TrainingSet<f64>;

/// Single-precision variants.
pub type Vec3f = math::Vec3<f32>;
pub type PointCloud32 = geometry::PointCloud<f32>;
pub type TriMesh32 = geometry::TriMesh<f32>;
