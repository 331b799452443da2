//! Library learning for 2D rectangle scenes.
//!
//! Scenes are multisets of axis-aligned rectangles. Programs in a small
//! shape language reproduce them; the learner alternates between inferring
//! programs (wake), proposing parametric abstractions from those programs,
//! and integrating the ones that lower the objective. Integration rewrites
//! programs with an e-graph whose abstraction rewrites carry value
//! conditions instead of enumerating arithmetic.

pub mod dream;
pub mod dsl;
pub mod egraph;
pub mod integration;
pub mod objective;
pub mod pipeline;
pub mod proposal;
pub mod registry;
pub mod wake;

pub use dsl::{Axis, Expr, Library, Op, Primitive, Scene, Sort};
