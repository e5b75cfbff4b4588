//! Core library for autonomous (feedback-based) optimization.
//!
//! Builds closed-loop interconnections of physical plant models with
//! optimization-algorithm controllers, evaluates the timescale-separation
//! stability bounds from Lyapunov certificate constants, and simulates the
//! resulting dynamics at desk scale.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats and the
//! experiment runner live in the companion `fbopt-cli` crate.

#![no_std]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod controller;
pub mod geometry;
pub mod linalg;
pub mod plant;
pub mod problem;
pub mod sim;

pub use nalgebra::{DMatrix, DVector};
