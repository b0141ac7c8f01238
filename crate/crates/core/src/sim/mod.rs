//! Deterministic simulation, arbitrary-state injection, traces and checkers.

pub mod check;
pub mod config;
pub mod engine;
pub mod inject;
pub mod trace;
pub mod wide;

pub use check::{check, check_applicable, Verdict, PROPERTIES};
pub use config::ScenarioConfig;
pub use engine::{run, Simulator};
pub use trace::Trace;
