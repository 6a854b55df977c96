//! Numerical engine for planar semi-dispersing billiards.
//!
//! Tables are bounded by straight segments and dispersing circular arcs,
//! either in the plane or in a flat torus. The crate provides the collision
//! map and flow, wavefront curvature transport, singularity curve tracing,
//! sufficiency checks along orbits, the geometric constructions behind the
//! local ergodic argument, and Monte Carlo diagnostics.

pub mod constructions;
pub mod diagnostics;
pub mod dynamics;
pub mod geometry;
pub mod par;
pub mod singularity;
pub mod sufficiency;
pub mod tables;
pub mod vec2;
pub mod wavefront;

pub use geometry::{Table, TableDescription};
pub use vec2::Vec2;
