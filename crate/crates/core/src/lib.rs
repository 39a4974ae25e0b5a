//! Simulation and control of a tendon-driven soft quadruped.
//!
//! Legs are planar discrete Cosserat rods ([`rod`], [`leg`]) attached to a
//! rigid torso ([`body`]). A convex model-predictive controller ([`mpc`])
//! plans ground reaction forces for a gait schedule ([`gait`]) using the
//! ADMM solver in [`qp`]. [`harness`] ties the pieces into closed-loop
//! experiments, metrics and exports.

// `!(x > 0.0)` checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod body;
pub mod config;
pub mod error;
pub mod gait;
pub mod harness;
pub mod leg;
pub mod mpc;
pub mod qp;
pub mod rod;

pub use error::{Error, Result};
