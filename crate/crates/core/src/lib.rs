//! Search-based falsification of a versioned cruise controller.
//!
//! The pipeline: a [`testlang`] sequence generates inputs, the
//! [`controller`] drives the surrogate [`plant`] in [`closed_loop`], the
//! [`monitor`] scores the run against requirement assessments, and
//! [`search`] looks for inputs with negative fitness. [`campaign`] wires it
//! all together for the command line.

pub mod campaign;
pub mod closed_loop;
pub mod controller;
pub mod corpus;
pub mod monitor;
pub mod plant;
pub mod search;
pub mod testlang;
pub mod trace;

pub use trace::Trace;
