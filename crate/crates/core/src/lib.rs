//! Capability-aware LLM routing core.
//!
//! A query is deconstructed into a capability profile (skills, knowledge,
//! difficulty), matched against a library of historical query logs in three
//! sifting stages, and routed to the model with the best normalized
//! performance/cost utility over the matching logs. Queries without
//! representative history fall back to a designated model.
//!
//! The crate is `no_std` and only needs `alloc`. IO, network backends and the
//! service live in the `caproute` crate.

#![no_std]

extern crate alloc;

pub mod backend;
pub mod decision;
pub mod deconstruct;
pub mod model;
pub mod reward;
pub mod router;
pub mod sifting;

pub use backend::{BackendError, ChatCompletion};
pub use decision::{
    aggregate_records, decide, normalize_min_max, select_model, DecisionTrace, Direction,
    FallbackReason, ModelAggregate, RoutingDecision, Selection, UtilityRow,
};
pub use deconstruct::{
    parse_profile_json, render_deconstruction_prompt, ChatDeconstructor, DeconstructError,
    Deconstructor, KeywordRules, KeywordRulesSpec,
};
pub use model::{
    normalize_label, parse_difficulty, CapabilityProfile, ConfigOverrides, DifficultyLevel,
    ExecutionRecord, FailurePolicy, HistoryEntry, Label, LabelSet, ModelError, RoutingConfig,
};
pub use reward::reward;
pub use router::{RouteError, Router, Stage};
pub use sifting::{
    sift, CoverageOracle, EmbeddingVector, Embedder, Evaluator, InvertedIndex, Library,
    OodReason, SiftOutcome, TokenHashEmbedder,
};
