//! Desk-scale experiments on top of `ethanos-core`: synthetic workloads,
//! a dual-engine runner checked against a flat ledger, simulated
//! bootstrapping, and CSV/JSON reports.

pub mod config;
pub mod persist;
pub mod report;
pub mod runner;
pub mod sync;
pub mod workload;
