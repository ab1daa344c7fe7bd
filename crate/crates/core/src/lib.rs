//! Core of the ideation service: the session model and its provenance
//! graph, the geometry of the trade-off cube, and the LLM-backed ideation
//! primitives.

pub mod engine;
pub mod geometry;
pub mod model;
