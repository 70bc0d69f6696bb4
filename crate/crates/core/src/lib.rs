//! Core library of the box-differentiation lab.
//!
//! Everything is built from two ingredients: finite sums of weighted
//! rectangle indicators on the unit square, and binary trees of axis-parallel
//! splits. On top of those sit exact integration, the adversarial
//! constructions that make small functions with certified-large local
//! averages, and the regression / classification experiments that run on
//! them.

pub mod boxgeom;
pub mod hexfloat;
pub mod quadsum;
pub mod rectfn;
pub mod treepart;
pub mod util;

pub mod adversary;
pub mod classify;
pub mod regress;
