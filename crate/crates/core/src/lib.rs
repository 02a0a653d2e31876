//! Deterministic simulator of an electromagnet-latched EV charging coupler.
//!
//! The crate is layered bottom-up: [`coupler`] and [`battery`] hold the
//! physical models, [`controller`] the session state machine, [`engine`]
//! the discrete-event loop, and [`scenario`] and [`report`] the text
//! formats used by the `evmagsim` binary.

// Negated float comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod controller;
pub mod coupler;
pub mod engine;
pub mod report;
pub mod scenario;

pub use engine::{EngineParams, Event, FaultKind, SimTime, TraceRecord, World};
pub use report::{summarize, RunSummary};
pub use scenario::{parse_scenario, serialize_scenario, ParseError, Scenario};
