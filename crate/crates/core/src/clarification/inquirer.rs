use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::Deserialize;

use crate::dataset::DefectType;
use crate::gateway::{CompletionBackend, CompletionRequest, Message};
use crate::stl::{self, Formula};

use super::{
    back_translate, prompts, CandidateSet, ClarificationError, ClarificationQuery,
    DiscrepancyReport, DivergencePoint, QueryTarget, Requirement, Stage,
};

/// Operation tags, in the order a session first uses them.
pub const TAGS: [&str; 7] = [
    "vagueness_query",
    "refine",
    "sample_candidates",
    "back_translate",
    "analyze_discrepancies",
    "ambiguity_query",
    "transform",
];

/// Result of asking an inquirer for a query: either a question for the user
/// or its judgement that there is nothing to clarify.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inquiry {
    Query(ClarificationQuery),
    NothingToClarify,
}

/// Runs the backend-facing operations of a session. Each call under a tag
/// uses the next round index for that tag, so scripted replies are keyed by
/// `(tag, n-th call)`.
pub struct Inquirer {
    backend: Arc<dyn CompletionBackend>,
    model_id: Option<String>,
    rounds: Mutex<HashMap<String, u32>>,
}

fn strip_fences(reply: &str) -> &str {
    let trimmed = reply.trim();
    if let Some(body) = trimmed.strip_prefix("```") {
        let body = body.split_once('\n').map_or("", |(_, rest)| rest);
        return body.trim_end().trim_end_matches("```").trim();
    }
    trimmed
}

/// Value after a `Label:` line, case-insensitively, if any line has one.
fn labelled<'a>(reply: &'a str, labels: &[&str]) -> Option<&'a str> {
    reply.lines().find_map(|line| {
        let line = line.trim();
        labels.iter().find_map(|label| {
            let head = line.get(..label.len())?;
            head.eq_ignore_ascii_case(label)
                .then(|| line[label.len()..].trim())
        })
    })
}

/// Pulls a formula out of a model reply: code fences, a `STL:` label,
/// surrounding backticks or quotes are tolerated.
pub fn extract_formula(reply: &str) -> Result<Formula, stl::StlError> {
    let body = strip_fences(reply);
    let line = labelled(body, &["STL:", "Formula:", "Output:"])
        .or_else(|| body.lines().map(str::trim).find(|l| !l.is_empty()))
        .unwrap_or("");
    stl::parse(
        line.trim_matches(|c| c == '`' || c == '"' || c == '\'')
            .trim()
            .trim_end_matches('.'),
    )
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ReportReply {
    Wrapped {
        divergence_points: Vec<DivergencePoint>,
    },
    Bare(Vec<DivergencePoint>),
}

fn parse_report(reply: &str) -> Result<DiscrepancyReport, String> {
    let body = strip_fences(reply);
    let start = body.find(['{', '[']).ok_or("no JSON in reply")?;
    let end = body.rfind(['}', ']']).ok_or("no JSON in reply")?;
    if end < start {
        return Err("no JSON in reply".into());
    }
    let parsed: ReportReply =
        serde_json::from_str(&body[start..=end]).map_err(|e| e.to_string())?;
    let report = match parsed {
        ReportReply::Wrapped { divergence_points } | ReportReply::Bare(divergence_points) => {
            DiscrepancyReport { divergence_points }
        }
    };
    report.check()?;
    Ok(report)
}

impl Inquirer {
    pub fn new(backend: Arc<dyn CompletionBackend>) -> Self {
        Self {
            backend,
            model_id: None,
            rounds: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_model(mut self, model_id: Option<String>) -> Self {
        self.model_id = model_id;
        self
    }

    /// Calls made so far under `tag`.
    pub fn calls(&self, tag: &str) -> u32 {
        self.rounds
            .lock()
            .expect("round lock")
            .get(tag)
            .copied()
            .unwrap_or(0)
    }

    fn call(
        &self,
        tag: &str,
        messages: Vec<Message>,
        temperature: f64,
    ) -> Result<String, ClarificationError> {
        let round = {
            let mut rounds = self.rounds.lock().expect("round lock");
            let next = rounds.entry(tag.to_string()).or_insert(0);
            *next += 1;
            *next - 1
        };
        let mut request = CompletionRequest::new(tag, messages)
            .with_round(round)
            .with_temperature(temperature);
        if let Some(model) = &self.model_id {
            request = request.with_model(model.clone());
        }
        let reply = self.backend.complete(&request)?;
        if reply.trim().is_empty() {
            return Err(ClarificationError::EmptyReply(tag.to_string()));
        }
        Ok(reply)
    }

    fn to_inquiry(
        reply: &str,
        escape: &str,
        stage: Stage,
        target: QueryTarget,
    ) -> Result<Inquiry, ClarificationError> {
        if reply.to_lowercase().contains(escape) {
            return Ok(Inquiry::NothingToClarify);
        }
        let body = strip_fences(reply);
        let text = labelled(body, &["Query:", "Reference Query:", "Question:"])
            .or_else(|| body.lines().map(str::trim).rfind(|l| !l.is_empty()))
            .unwrap_or("");
        ClarificationQuery::new(stage, text, Some(target))
            .map(Inquiry::Query)
            .ok_or_else(|| ClarificationError::EmptyReply("query".into()))
    }

    pub fn vagueness_query(
        &self,
        requirement: &Requirement,
        vtype: DefectType,
    ) -> Result<Inquiry, ClarificationError> {
        if !vtype.is_vagueness() {
            return Err(ClarificationError::Invalid(format!(
                "{vtype} is not a vagueness type"
            )));
        }
        let reply = self.call(
            "vagueness_query",
            prompts::vagueness_query(requirement, vtype),
            0.0,
        )?;
        Self::to_inquiry(
            &reply,
            prompts::NO_VAGUENESS,
            Stage::Vagueness,
            QueryTarget::Defect(vtype),
        )
    }

    /// `n` samples at `temperature`; a reply that fails the syntax check is
    /// resampled, within `3 n` attempts in total. Descriptions are left empty.
    pub fn sample_candidates(
        &self,
        requirement: &Requirement,
        n: usize,
        temperature: f64,
    ) -> Result<CandidateSet, ClarificationError> {
        if n == 0 {
            return Err(ClarificationError::Invalid(
                "candidate count must be at least 1".into(),
            ));
        }
        let budget = 3 * n;
        let mut formulas = Vec::with_capacity(n);
        let mut attempts = 0;
        while formulas.len() < n && attempts < budget {
            attempts += 1;
            let reply = match self.call(
                "sample_candidates",
                prompts::candidates(requirement),
                temperature,
            ) {
                Ok(reply) => reply,
                Err(ClarificationError::EmptyReply(_)) => continue,
                Err(e) => return Err(e),
            };
            if let Ok(formula) = extract_formula(&reply) {
                formulas.push(formula);
            }
        }
        if formulas.is_empty() {
            return Err(ClarificationError::NoCandidates { attempts });
        }
        Ok(CandidateSet {
            formulas,
            descriptions: Vec::new(),
        })
    }

    /// Asks the backend to describe `formula` under the fixed scheme.
    pub fn back_translate(&self, formula: &Formula) -> Result<String, ClarificationError> {
        let reply = self.call(
            "back_translate",
            prompts::back_translation(&stl::render(formula)),
            0.0,
        )?;
        Ok(strip_fences(&reply).to_string())
    }

    /// Fills `descriptions`, by template unless `llm` is set.
    pub fn describe(
        &self,
        candidates: &mut CandidateSet,
        llm: bool,
    ) -> Result<(), ClarificationError> {
        candidates.descriptions = candidates
            .formulas
            .iter()
            .map(|f| {
                if llm {
                    self.back_translate(f)
                } else {
                    Ok(back_translate(f))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(())
    }

    /// Identical descriptions short-circuit to an empty report without a
    /// backend call.
    pub fn analyze_discrepancies(
        &self,
        requirement: &Requirement,
        descriptions: &[String],
    ) -> Result<DiscrepancyReport, ClarificationError> {
        if descriptions.is_empty() {
            return Err(ClarificationError::Invalid(
                "no descriptions to compare".into(),
            ));
        }
        if descriptions.iter().all(|d| d == &descriptions[0]) {
            return Ok(DiscrepancyReport::default());
        }
        let reply = self.call(
            "analyze_discrepancies",
            prompts::discrepancies(requirement, descriptions),
            0.0,
        )?;
        parse_report(&reply).map_err(|reason| ClarificationError::Unparseable {
            tag: "analyze_discrepancies".into(),
            reason,
        })
    }

    pub fn ambiguity_query(
        &self,
        requirement: &Requirement,
        report: &DiscrepancyReport,
    ) -> Result<Inquiry, ClarificationError> {
        if report.is_empty() {
            return Err(ClarificationError::EmptyReport);
        }
        let reply = self.call(
            "ambiguity_query",
            prompts::ambiguity_query(requirement, report),
            0.0,
        )?;
        Self::to_inquiry(
            &reply,
            prompts::NO_AMBIGUITY,
            Stage::Ambiguity,
            QueryTarget::Divergence(0),
        )
    }

    pub fn refine(
        &self,
        requirement: &Requirement,
        query: &ClarificationQuery,
        answer: &str,
    ) -> Result<Requirement, ClarificationError> {
        let answer = answer.trim();
        if answer.is_empty() {
            return Err(ClarificationError::EmptyAnswer);
        }
        let reply = self.call("refine", prompts::refine(requirement, query, answer), 0.0)?;
        let body = strip_fences(&reply);
        if body.starts_with(prompts::UNUSABLE) {
            return Err(ClarificationError::UnusableAnswer);
        }
        let text = labelled(body, &["Refined Requirement:"])
            .unwrap_or(body)
            .trim_matches('"')
            .trim();
        if text.is_empty() {
            return Err(ClarificationError::EmptyReply("refine".into()));
        }
        Ok(requirement.revised(&query.text, answer, text))
    }

    /// Few-shot translation at temperature 0 with one retry on a reply that
    /// fails the syntax check.
    pub fn transform(&self, requirement: &Requirement) -> Result<Formula, ClarificationError> {
        let mut last = String::new();
        for _ in 0..2 {
            let reply = self.call("transform", prompts::transform(requirement), 0.0)?;
            match extract_formula(&reply) {
                Ok(formula) => return Ok(formula),
                Err(e) => last = e.to_string(),
            }
        }
        Err(ClarificationError::Unparseable {
            tag: "transform".into(),
            reason: last,
        })
    }
}
