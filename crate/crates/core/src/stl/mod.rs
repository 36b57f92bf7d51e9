//! Signal Temporal Logic: syntax, canonical text form, tokens, templates and
//! Boolean semantics over piecewise-constant traces.
//!
//! The text grammar (see [`parse`]) is the interchange format for formulas
//! everywhere in the crate. Operators are spelled `G F U ! & | -> true false`;
//! intervals are closed, e.g. `G[0,30](x2 < 0.5)`.

mod ast;
mod eval;
mod parse;
mod render;
mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::{Atom, Comparator, Formula, Interval, Term};
pub use eval::evaluate;
pub use render::{
    extract_template, render, tokenize_formula, TemplateFormula, Token, TokenKind,
    NUMBER_PLACEHOLDER, SIGNAL_PLACEHOLDER,
};
pub use trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseErrorKind {
    Syntax,
    Interval,
    NumberOverflow,
    EmptyInput,
    UnsupportedComparator,
}

/// Parse failure with the character offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} (at column {position})")]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StlError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid interval: {0}")]
    Interval(String),
    #[error("invalid atom: {0}")]
    Atom(String),
    #[error("invalid trace: {0}")]
    Trace(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("temporal window reaches t = {required}, beyond the trace horizon {horizon}")]
    HorizonExceeded { required: f64, horizon: f64 },
    #[error("evaluation time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
}

pub fn parse(text: &str) -> Result<Formula, StlError> {
    parse::parse(text).map_err(StlError::from)
}

/// One syntax-checker finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.position, self.message)
    }
}

/// Empty iff `text` parses.
pub fn check_syntax(text: &str) -> Vec<Diagnostic> {
    match parse::parse(text) {
        Ok(_) => Vec::new(),
        Err(e) => vec![Diagnostic {
            position: e.position,
            message: e.message,
        }],
    }
}

/// Token stream of the canonical rendering of `text`.
pub fn tokenize(text: &str) -> Result<Vec<Token>, StlError> {
    Ok(tokenize_formula(&parse(text)?))
}
