//! Constant-product AMM bundle simulation with two observers: a transfer-graph
//! analyzer and an execution-aware tracer.

// Errors and actions carry addresses and amounts inline by design.
#![allow(clippy::result_large_err, clippy::large_enum_variant)]

pub mod amm;
pub mod calibration;
pub mod engine;
pub mod graph;
pub mod numeric;
pub mod planner;
pub mod scenario;
pub mod suites;
pub mod tracer;
