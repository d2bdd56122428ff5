//! Decentralized multi-vehicle simulation for unsignalized junctions: a
//! motion-primitive lattice planner, a linearized bicycle MPC tracker with a
//! parallel conflict-avoidance layer, and a deterministic multi-agent loop.

// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod avoidance;
pub mod bundled;
pub mod experiments;
pub mod geometry;
pub mod mpc;
pub mod planner;
pub mod primitives;
pub mod qp;
pub mod reference;
pub mod scenario;
pub mod sim;
pub mod vehicle;
