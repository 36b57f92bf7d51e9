//! Clarification inquirers and the session state machine.
//!
//! A session runs a vagueness loop (detect, query, answer, refine,
//! re-detect), then an ambiguity loop (detect, sample candidates,
//! back-translate, compare, query, answer, refine, re-detect) and finally the
//! transformation into STL. Phases only move forward.

mod backtranslate;
mod inquirer;
mod prompts;
mod session;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DefectType;
use crate::detection::DetectionError;
use crate::gateway::GatewayError;
use crate::stl::Formula;

pub use backtranslate::back_translate;
pub use inquirer::{extract_formula, Inquirer, Inquiry, TAGS};
pub use session::{
    prompt_detector, rule_detector, run_session, shared_detector, AnswerSource, BackendFactory,
    Counters, DetectorFactory, EventKind, Phase, Pipeline, RecordingBackend, ScriptedAnswers,
    Session, SessionConfig, SessionError, SessionOutcome, SessionState, Transcript,
    TranscriptEvent,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClarificationError {
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error("`{0}` returned an empty reply")]
    EmptyReply(String),
    #[error("could not use the `{tag}` reply: {reason}")]
    Unparseable { tag: String, reason: String },
    #[error("answer is empty")]
    EmptyAnswer,
    #[error("the answer does not address the query")]
    UnusableAnswer,
    #[error("no syntactically valid candidate after {attempts} attempts")]
    NoCandidates { attempts: usize },
    #[error("discrepancy report has no divergence points")]
    EmptyReport,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub before: String,
    pub query: String,
    pub answer: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub id: String,
    pub text: String,
    pub revisions: Vec<Revision>,
}

impl Requirement {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            revisions: Vec::new(),
        }
    }

    pub fn original(&self) -> &str {
        self.revisions.first().map_or(&self.text, |r| &r.before)
    }

    /// Copy with one more revision; `text` becomes `after`.
    pub fn revised(&self, query: &str, answer: &str, after: impl Into<String>) -> Self {
        let after = after.into();
        let mut next = self.clone();
        next.revisions.push(Revision {
            before: self.text.clone(),
            query: query.to_string(),
            answer: answer.to_string(),
            after: after.clone(),
        });
        next.text = after;
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Vagueness,
    Ambiguity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryTarget {
    Defect(DefectType),
    Divergence(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationQuery {
    pub stage: Stage,
    pub text: String,
    pub target: Option<QueryTarget>,
}

impl ClarificationQuery {
    /// Trims quotes and whitespace and ends the text with a question mark.
    /// `None` when nothing is left.
    pub fn new(stage: Stage, text: &str, target: Option<QueryTarget>) -> Option<Self> {
        let core = text.trim().trim_matches(|c| c == '"' || c == '`').trim();
        let core = core.trim_end_matches(['.', ':', '!', ' ', '?']).trim();
        if core.is_empty() {
            return None;
        }
        Some(Self {
            stage,
            text: format!("{core}?"),
            target,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub formulas: Vec<Formula>,
    pub descriptions: Vec<String>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.formulas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.formulas.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergencePoint {
    pub aspect: String,
    pub interpretations: Vec<String>,
}

/// An empty report means the candidates agree.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub divergence_points: Vec<DivergencePoint>,
}

impl DiscrepancyReport {
    pub fn is_empty(&self) -> bool {
        self.divergence_points.is_empty()
    }

    pub fn check(&self) -> Result<(), String> {
        for point in &self.divergence_points {
            if point.aspect.trim().is_empty() {
                return Err("divergence point without an aspect".into());
            }
            let mut distinct: Vec<&str> = point.interpretations.iter().map(|s| s.trim()).collect();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() < 2 {
                return Err(format!(
                    "`{}` needs at least two distinct interpretations",
                    point.aspect
                ));
            }
        }
        Ok(())
    }
}
