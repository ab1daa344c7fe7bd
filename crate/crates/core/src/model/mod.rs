//! Session state: dimension configuration, the idea/fragment provenance
//! graph, score corrections and the interaction event log.
//!
//! Every state change is expressed as a [`Mutation`]. Callers first
//! `prepare_*` a mutation against the current state (this assigns ids and
//! timestamps and validates preconditions), may persist it, and then
//! [`Session::apply`] it. Replaying the same mutations onto a fresh session
//! reproduces the state exactly.

mod document;
mod mutation;
mod session;
mod tree;
mod types;

use thiserror::Error;

pub use document::{SessionDocument, SessionHeader};
pub use mutation::Mutation;
pub use session::{LineageEntry, NewIdea, Session};
pub use tree::{ProvenanceTree, TreeEdge, TreeNode, TreeNodeKind, TREE_ROOT_ID};
pub use types::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{kind} {id:?} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("format error at `{path}`: {message}")]
    Format { path: String, message: String },
}

impl ModelError {
    pub(crate) fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        ModelError::NotFound { kind, id: id.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ModelError::Validation(msg.into())
    }
}
