//! Variational imbalanced regression at desk scale.
//!
//! The crate is organized bottom-up: [`numerics`] is the tensor and
//! differentiation substrate; [`label_space`] bins labels and smooths their
//! density; [`encoder`] and [`evidential`] are the two halves of the model;
//! [`model`] wires variants together and trains them; [`metrics`] scores them;
//! [`risk`] checks the estimator theory numerically; [`data`] supplies
//! datasets; [`experiment`] drives sweeps and writes reports.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod encoder;
pub mod evidential;
pub mod experiment;
pub mod label_space;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod par;
pub mod risk;
