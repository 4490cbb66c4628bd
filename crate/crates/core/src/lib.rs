//! Marker-less motion-capture fitting: estimates the shape and per-frame
//! pose of an articulated body model from multi-view (or monocular) 2D joint
//! detections and silhouette masks. Per-frame robust multi-view fitting is
//! followed by windowed temporal refinement under a low-dimensional cosine
//! trajectory prior.
//!
//! The numeric core is generic over the scalar type (see [`scalar::Real`]):
//! the same geometry and energy code evaluates with `f64` for values and
//! with dual numbers for exact forward-mode derivatives.

pub mod body;
pub mod camera;
pub mod energy;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod scalar;
pub mod silhouette;
pub mod solver;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};

/// Concrete f64 aliases for the generic geometry types.
pub type Vec2f = linalg::Vec2<f64>;
pub type Vec3f = linalg::Vec3<f64>;
pub type Mat3f = linalg::Mat3<f64>;
