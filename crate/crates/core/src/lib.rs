//! Requirements clarification and natural-language to Signal Temporal Logic
//! transformation.
//!
//! * [`stl`]: formula syntax, parsing, canonical printing, tokens, templates
//!   and exact Boolean monitoring over piecewise-constant traces.
//! * [`metrics`]: string, embedding, classification, agreement and
//!   semantic-robustness measures.
//! * [`dataset`]: dataset records, mutation operators and the syntactic
//!   validator.
//! * [`detection`]: vagueness and ambiguity detectors.
//! * [`gateway`]: completion and embedding backends.
//! * [`clarification`]: inquirers, refinement and the clarification session.

pub mod clarification;
pub mod dataset;
pub mod detection;
pub mod gateway;
pub mod metrics;
pub mod stl;
pub(crate) mod text;
pub(crate) mod util;
