//! Verification toolkit for SML state manager classes.
//!
//! SML ("State Manager Language") describes hierarchical finite state
//! machines: a class declares states, each state carries prioritized `when`
//! clauses (guards over child states) and named `action` clauses (command
//! handlers). This crate provides the pieces a checker needs:
//!
//! * [`sml`] — lexer, parser, validator and pretty-printer for class files,
//! * [`semantics`] — the executable two-phase semantics of one instance,
//! * [`kripke`] — explicit when-phase transition graphs (brute-force oracle),
//! * [`sat`] — a small CDCL solver plus DIMACS import/export,
//! * [`loop_sat`] — bounded model checking for `move_to` livelock loops,
//! * [`reach`] — state-change graph construction and SCC diagnostics,
//! * [`mcrl2`] — process-algebra export of classes and node hierarchies,
//! * [`hierarchy`] — a deterministic simulator for trees of instances,
//! * [`corpus`] — seeded random class generation for differential testing.

pub mod corpus;
pub mod diag;
#[cfg(test)]
pub(crate) mod testutil;
pub mod hierarchy;
pub mod kripke;
pub mod loop_sat;
pub mod mcrl2;
pub mod reach;
pub mod sat;
pub mod semantics;
pub mod sml;
