//! text2flow: extract procedural graphs from natural-language documents and
//! iteratively refine them with simulation-grounded and text-grounded feedback.
//!
//! The pipeline is built from small, independently usable pieces:
//!
//! - [`graph`] — the typed procedural graph (actions, gateways, constraints,
//!   actor lanes) every other module operates on.
//! - [`dsl`] — total parser and serializer for the line-oriented
//!   `Node -> Node` flow text format.
//! - [`simulator`] — token-flow execution over randomized trials, exhaustive
//!   path enumeration for small graphs, static structure diagnostics, and
//!   gateway-to-gateway segment extraction.
//! - [`bleu`] — the sentence-level BLEU primitive shared by the feedback
//!   prioritizer and the evaluator.
//! - [`prioritizer`] — scoring (utility, repeat similarity, unified weight)
//!   and budget-constrained greedy selection of revision feedback.
//! - [`agents`] — the agent roles (builder, structural critic, span
//!   retriever, verbalizer, semantic judge, refiner) behind one backend
//!   trait, with an offline deterministic mock and an HTTP chat backend.
//! - [`orchestrator`] — the multi-round generate / diagnose / prioritize /
//!   refine loop with journaling and resume.
//! - [`evaluator`] — tuple matching and per-category precision/recall/F1
//!   against gold graphs.
//! - [`cli`] — the operator commands (`extract`, `simulate`, `eval`).

pub mod agents;
pub mod bleu;
pub mod cli;
pub mod config;
pub mod dsl;
pub mod evaluator;
pub mod graph;
pub mod orchestrator;
pub mod prioritizer;
pub mod simulator;

pub use graph::{Edge, FlowKind, GatewayKind, Lane, LaneId, NodeId, NodeKind, ProceduralGraph};
