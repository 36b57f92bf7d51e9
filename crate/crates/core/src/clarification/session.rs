use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset::PhraseLexicon;
use crate::detection::{
    DefectFamily, DetectionResult, Detector, PromptDetector, RuleVaguenessDetector,
};
use crate::gateway::{CompletionBackend, CompletionRequest, GatewayError};
use crate::stl::{self, Formula};

use super::{ClarificationError, ClarificationQuery, Inquirer, Inquiry, Requirement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    VaguenessLoop,
    AmbiguityLoop,
    Transforming,
    Done,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Aborted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub max_iterations_per_phase: u32,
    pub candidate_n: usize,
    pub sampling_temperature: f64,
    /// Back-translate candidates with the backend instead of the template.
    pub llm_back_translation: bool,
    pub model_id: Option<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_iterations_per_phase: 10,
            candidate_n: 3,
            sampling_temperature: 0.9,
            llm_back_translation: false,
            model_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub vagueness: u32,
    pub ambiguity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    pub iterations: Counters,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Detection,
    Prompt,
    Reply,
    Query,
    Answer,
    Revision,
    Reask,
    Candidates,
    Report,
    Skip,
    Formula,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub seq: u64,
    pub phase: Phase,
    pub kind: EventKind,
    pub payload: Value,
}

#[derive(Debug)]
struct Log {
    phase: Phase,
    events: Vec<TranscriptEvent>,
}

/// Shared, ordered event log of one session.
#[derive(Debug, Clone)]
pub struct Transcript(Arc<Mutex<Log>>);

impl Default for Transcript {
    fn default() -> Self {
        Self(Arc::new(Mutex::new(Log {
            phase: Phase::VaguenessLoop,
            events: Vec::new(),
        })))
    }
}

impl Transcript {
    pub fn record(&self, kind: EventKind, payload: Value) {
        let mut log = self.0.lock().expect("transcript lock");
        let event = TranscriptEvent {
            seq: log.events.len() as u64,
            phase: log.phase,
            kind,
            payload,
        };
        log.events.push(event);
    }

    fn set_phase(&self, phase: Phase) {
        self.0.lock().expect("transcript lock").phase = phase;
    }

    pub fn events(&self) -> Vec<TranscriptEvent> {
        self.0.lock().expect("transcript lock").events.clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("transcript lock").events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.0
            .lock()
            .expect("transcript lock")
            .events
            .iter()
            .filter(|e| e.kind == kind)
            .count()
    }

    /// Number of backend calls made under `tag`.
    pub fn calls(&self, tag: &str) -> usize {
        let log = self.0.lock().expect("transcript lock");
        log.events
            .iter()
            .filter(|e| e.kind == EventKind::Prompt && e.payload["tag"] == tag)
            .count()
    }

    pub fn summary(&self) -> BTreeMap<EventKind, usize> {
        let mut out = BTreeMap::new();
        for event in self.0.lock().expect("transcript lock").events.iter() {
            *out.entry(event.kind).or_insert(0) += 1;
        }
        out
    }
}

/// Forwards to `inner` and logs every prompt and reply in a transcript.
pub struct RecordingBackend {
    inner: Arc<dyn CompletionBackend>,
    transcript: Transcript,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn CompletionBackend>, transcript: Transcript) -> Self {
        Self { inner, transcript }
    }
}

impl CompletionBackend for RecordingBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.transcript.record(
            EventKind::Prompt,
            json!({
                "tag": request.operation_tag,
                "round": request.round,
                "temperature": request.temperature,
                "messages": request.messages,
            }),
        );
        let result = self.inner.complete(request);
        let outcome = match &result {
            Ok(reply) => {
                json!({ "tag": request.operation_tag, "round": request.round, "reply": reply })
            }
            Err(e) => {
                json!({ "tag": request.operation_tag, "round": request.round, "error": e.to_string() })
            }
        };
        self.transcript.record(EventKind::Reply, outcome);
        result
    }
}

pub type BackendFactory = Arc<dyn Fn() -> Arc<dyn CompletionBackend> + Send + Sync>;

/// Builds a detector for one session, given that session's (recorded)
/// backend.
pub type DetectorFactory =
    Arc<dyn Fn(Arc<dyn CompletionBackend>) -> Box<dyn Detector> + Send + Sync>;

pub fn rule_detector(lexicon: PhraseLexicon) -> DetectorFactory {
    Arc::new(move |_| Box::new(RuleVaguenessDetector::new(lexicon.clone())))
}

pub fn prompt_detector(family: DefectFamily) -> DetectorFactory {
    Arc::new(move |backend| Box::new(PromptDetector::new(backend, family)))
}

/// Uses one detector for every session.
pub fn shared_detector(detector: Arc<dyn Detector>) -> DetectorFactory {
    Arc::new(move |_| Box::new(detector.clone()))
}

/// Everything needed to start sessions. Backends and prompt detectors are
/// created per session so round indices never interleave.
#[derive(Clone)]
pub struct Pipeline {
    pub backend: BackendFactory,
    pub vagueness: DetectorFactory,
    pub ambiguity: DetectorFactory,
    pub config: SessionConfig,
}

impl Pipeline {
    /// Rule-based vagueness detection and prompted ambiguity detection.
    pub fn new(backend: BackendFactory) -> Self {
        Self {
            backend,
            vagueness: rule_detector(PhraseLexicon::default()),
            ambiguity: prompt_detector(DefectFamily::Ambiguity),
            config: SessionConfig::default(),
        }
    }

    pub fn with_vagueness(mut self, factory: DetectorFactory) -> Self {
        self.vagueness = factory;
        self
    }

    pub fn with_ambiguity(mut self, factory: DetectorFactory) -> Self {
        self.ambiguity = factory;
        self
    }

    pub fn with_config(mut self, config: SessionConfig) -> Self {
        self.config = config;
        self
    }

    /// Creates a session and runs it up to its first query (or the end).
    pub fn start(&self, requirement: Requirement) -> Session {
        let transcript = Transcript::default();
        let backend: Arc<dyn CompletionBackend> =
            Arc::new(RecordingBackend::new((self.backend)(), transcript.clone()));
        let mut session = Session {
            requirement,
            state: SessionState {
                phase: Phase::VaguenessLoop,
                iterations: Counters::default(),
                config: self.config.clone(),
            },
            pending: None,
            formula: None,
            error: None,
            inquirer: Inquirer::new(backend.clone()).with_model(self.config.model_id.clone()),
            vagueness: (self.vagueness)(backend.clone()),
            ambiguity: (self.ambiguity)(backend),
            transcript,
        };
        session.advance();
        session
    }
}

/// Caller mistakes when answering; these leave the session unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("no query is pending")]
    NoPendingQuery,
    #[error("answer is empty")]
    EmptyAnswer,
}

/// A clarification session that pauses whenever it needs an answer.
pub struct Session {
    requirement: Requirement,
    state: SessionState,
    pending: Option<ClarificationQuery>,
    formula: Option<Formula>,
    error: Option<String>,
    inquirer: Inquirer,
    vagueness: Box<dyn Detector>,
    ambiguity: Box<dyn Detector>,
    transcript: Transcript,
}

impl Session {
    pub fn requirement(&self) -> &Requirement {
        &self.requirement
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn pending_query(&self) -> Option<&ClarificationQuery> {
        self.pending.as_ref()
    }

    pub fn formula(&self) -> Option<&Formula> {
        self.formula.as_ref()
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    /// Completed clarification rounds.
    pub fn rounds(&self) -> usize {
        self.requirement.revisions.len()
    }

    fn enter(&mut self, phase: Phase) {
        debug_assert!(phase >= self.state.phase, "phases never move backwards");
        self.state.phase = phase;
        self.transcript.set_phase(phase);
    }

    pub fn abort(&mut self, reason: impl Into<String>) {
        if self.state.phase.is_terminal() {
            return;
        }
        let reason = reason.into();
        self.transcript
            .record(EventKind::Abort, json!({ "reason": reason }));
        self.pending = None;
        self.error = Some(reason);
        self.enter(Phase::Aborted);
    }

    fn detect(&self, family: DefectFamily) -> Result<DetectionResult, ClarificationError> {
        let detector = match family {
            DefectFamily::Vagueness => &self.vagueness,
            DefectFamily::Ambiguity => &self.ambiguity,
        };
        let result = detector.detect(&self.requirement.text)?;
        self.transcript.record(
            EventKind::Detection,
            json!({ "family": family, "text": self.requirement.text, "result": result }),
        );
        Ok(result)
    }

    /// Takes one iteration slot in the current loop, aborting at the cap.
    fn take_iteration(&mut self) -> bool {
        let cap = self.state.config.max_iterations_per_phase;
        let counter = match self.state.phase {
            Phase::VaguenessLoop => &mut self.state.iterations.vagueness,
            Phase::AmbiguityLoop => &mut self.state.iterations.ambiguity,
            _ => return true,
        };
        if *counter >= cap {
            let phase = self.state.phase;
            self.abort(format!("{phase:?} reached the iteration cap of {cap}"));
            return false;
        }
        *counter += 1;
        true
    }

    fn ask(&mut self, inquiry: Inquiry, next: Phase) {
        match inquiry {
            Inquiry::Query(query) => {
                self.transcript.record(EventKind::Query, json!(query));
                self.pending = Some(query);
            }
            Inquiry::NothingToClarify => {
                self.transcript.record(
                    EventKind::Skip,
                    json!({ "reason": "inquirer found nothing to clarify" }),
                );
                self.enter(next);
            }
        }
    }

    fn step(&mut self) -> Result<(), ClarificationError> {
        match self.state.phase {
            Phase::VaguenessLoop => {
                let found = self.detect(DefectFamily::Vagueness)?;
                let Some(&vtype) = found
                    .types
                    .iter()
                    .find(|t| t.is_vagueness())
                    .filter(|_| found.is_defective)
                else {
                    self.enter(Phase::AmbiguityLoop);
                    return Ok(());
                };
                if self.take_iteration() {
                    let inquiry = self.inquirer.vagueness_query(&self.requirement, vtype)?;
                    self.ask(inquiry, Phase::AmbiguityLoop);
                }
            }
            Phase::AmbiguityLoop => {
                if !self.detect(DefectFamily::Ambiguity)?.is_defective {
                    self.enter(Phase::Transforming);
                    return Ok(());
                }
                if !self.take_iteration() {
                    return Ok(());
                }
                let config = &self.state.config;
                let mut candidates = self.inquirer.sample_candidates(
                    &self.requirement,
                    config.candidate_n,
                    config.sampling_temperature,
                )?;
                self.inquirer
                    .describe(&mut candidates, config.llm_back_translation)?;
                let formulas: Vec<String> = candidates.formulas.iter().map(stl::render).collect();
                self.transcript.record(
                    EventKind::Candidates,
                    json!({ "formulas": formulas, "descriptions": candidates.descriptions }),
                );
                let report = self
                    .inquirer
                    .analyze_discrepancies(&self.requirement, &candidates.descriptions)?;
                self.transcript.record(EventKind::Report, json!(report));
                if report.is_empty() {
                    self.enter(Phase::Transforming);
                    return Ok(());
                }
                let inquiry = self.inquirer.ambiguity_query(&self.requirement, &report)?;
                self.ask(inquiry, Phase::Transforming);
            }
            Phase::Transforming => {
                let formula = self.inquirer.transform(&self.requirement)?;
                self.transcript
                    .record(EventKind::Formula, json!({ "stl": stl::render(&formula) }));
                self.formula = Some(formula);
                self.enter(Phase::Done);
            }
            Phase::Done | Phase::Aborted => {}
        }
        Ok(())
    }

    /// Runs until a query is pending or the session has ended.
    pub fn advance(&mut self) {
        while self.pending.is_none() && !self.state.phase.is_terminal() {
            if let Err(e) = self.step() {
                self.abort(e.to_string());
            }
        }
    }

    /// Applies an answer to the pending query and continues. An answer the
    /// refiner cannot use re-asks the same query, which counts as an
    /// iteration.
    pub fn answer(&mut self, answer: &str) -> Result<(), SessionError> {
        let query = self.pending.clone().ok_or(SessionError::NoPendingQuery)?;
        if answer.trim().is_empty() {
            return Err(SessionError::EmptyAnswer);
        }
        self.transcript.record(
            EventKind::Answer,
            json!({ "query": query.text, "answer": answer }),
        );
        match self.inquirer.refine(&self.requirement, &query, answer) {
            Ok(refined) => {
                self.requirement = refined;
                let revision = self
                    .requirement
                    .revisions
                    .last()
                    .expect("refine appends a revision");
                self.transcript.record(EventKind::Revision, json!(revision));
                self.pending = None;
            }
            Err(ClarificationError::UnusableAnswer) => {
                self.transcript
                    .record(EventKind::Reask, json!({ "query": query.text }));
                if !self.take_iteration() {
                    return Ok(());
                }
            }
            Err(e) => {
                self.abort(e.to_string());
                return Ok(());
            }
        }
        self.advance();
        Ok(())
    }

    pub fn into_outcome(self) -> SessionOutcome {
        SessionOutcome {
            requirement: self.requirement,
            formula: self.formula,
            state: self.state,
            transcript: self.transcript.events(),
            error: self.error,
        }
    }
}

/// Supplies one answer per query; `None` ends the session.
pub trait AnswerSource {
    fn answer(&mut self, query: &ClarificationQuery) -> Option<String>;
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedAnswers(VecDeque<String>);

impl ScriptedAnswers {
    pub fn new<S: Into<String>>(answers: impl IntoIterator<Item = S>) -> Self {
        Self(answers.into_iter().map(Into::into).collect())
    }

    pub fn remaining(&self) -> usize {
        self.0.len()
    }
}

impl AnswerSource for ScriptedAnswers {
    fn answer(&mut self, _: &ClarificationQuery) -> Option<String> {
        self.0.pop_front()
    }
}

impl<F: FnMut(&ClarificationQuery) -> Option<String>> AnswerSource for F {
    fn answer(&mut self, query: &ClarificationQuery) -> Option<String> {
        self(query)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionOutcome {
    pub requirement: Requirement,
    #[serde(serialize_with = "serialize_formula")]
    pub formula: Option<Formula>,
    pub state: SessionState,
    pub transcript: Vec<TranscriptEvent>,
    pub error: Option<String>,
}

fn serialize_formula<S: serde::Serializer>(
    formula: &Option<Formula>,
    s: S,
) -> Result<S::Ok, S::Error> {
    formula.as_ref().map(stl::render).serialize(s)
}

/// Drives a session to completion with `answers`. Errors end the session in
/// the `Aborted` phase; the partial transcript is kept.
pub fn run_session(
    pipeline: &Pipeline,
    initial: Requirement,
    answers: &mut dyn AnswerSource,
) -> SessionOutcome {
    let mut session = pipeline.start(initial);
    while let Some(query) = session.pending_query().cloned() {
        match answers.answer(&query) {
            Some(answer) => {
                if let Err(e) = session.answer(&answer) {
                    session.abort(e.to_string());
                }
            }
            None => session.abort("no answer available"),
        }
    }
    session.into_outcome()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DefectType;
    use crate::detection::ScriptedDetector;
    use crate::gateway::{ScriptedBackend, ScriptedFixture};

    const RUNNING_EXAMPLE: &str =
        "During 10-150 seconds, if signal x1 exceeds 0.2, then signal x2 will decrease for the next 30 seconds";

    fn running_example_fixture() -> ScriptedFixture {
        ScriptedFixture::parse_lines(include_str!("../../tests/fixtures/running_example.fixture"))
            .unwrap()
    }

    fn scripted(fixture: ScriptedFixture) -> BackendFactory {
        Arc::new(move || Arc::new(ScriptedBackend::new(fixture.clone())))
    }

    #[test]
    fn running_example_reaches_the_expected_formula() {
        let pipeline = Pipeline::new(scripted(running_example_fixture()));
        let mut answers = ScriptedAnswers::new(["0.5", "the first time"]);
        let outcome = run_session(
            &pipeline,
            Requirement::new("running_example", RUNNING_EXAMPLE),
            &mut answers,
        );
        assert_eq!(outcome.error, None);
        assert_eq!(outcome.state.phase, Phase::Done);
        assert_eq!(outcome.requirement.revisions.len(), 2);
        assert_eq!(
            stl::render(outcome.formula.as_ref().unwrap()),
            "F[10,150](x1 > 0.2) -> G[0,30](x2 < 0.5)"
        );
        assert_eq!(
            outcome.requirement.revisions[0].query,
            "What specific value should signal x2 decrease?"
        );
        assert!(outcome.requirement.revisions[0]
            .after
            .contains("will decrease 0.5 for the next"));
        assert!(outcome
            .requirement
            .text
            .ends_with("starting from the first time x1 exceeds 0.2"));
        let phases: Vec<Phase> = outcome.transcript.iter().map(|e| e.phase).collect();
        assert!(phases.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn stepper_pauses_at_each_query() {
        let pipeline = Pipeline::new(scripted(running_example_fixture()));
        let mut session = pipeline.start(Requirement::new("running_example", RUNNING_EXAMPLE));
        assert_eq!(session.phase(), Phase::VaguenessLoop);
        assert_eq!(
            session.pending_query().unwrap().text,
            "What specific value should signal x2 decrease?"
        );
        assert_eq!(session.answer(""), Err(SessionError::EmptyAnswer));
        session.answer("0.5").unwrap();
        assert_eq!(session.phase(), Phase::AmbiguityLoop);
        assert!(session.pending_query().unwrap().text.contains("start"));
        session.answer("the first time").unwrap();
        assert_eq!(session.phase(), Phase::Done);
        assert_eq!(session.answer("more"), Err(SessionError::NoPendingQuery));
        assert_eq!(session.rounds(), 2);
    }

    #[test]
    fn clean_requirement_goes_straight_to_transform() {
        let fixture = ScriptedFixture::new().with("transform", 0, "G[0,2](speed < 50)");
        let pipeline = Pipeline::new(scripted(fixture))
            .with_ambiguity(shared_detector(Arc::new(ScriptedDetector::never())));
        let outcome = run_session(
            &pipeline,
            Requirement::new("c", "the speed stays below 50 for the next 2 seconds"),
            &mut ScriptedAnswers::default(),
        );
        assert_eq!(outcome.state.phase, Phase::Done);
        assert!(outcome.requirement.revisions.is_empty());
        assert!(outcome
            .transcript
            .iter()
            .all(|e| e.kind != EventKind::Query));
        let tags: Vec<&Value> = outcome
            .transcript
            .iter()
            .filter(|e| e.kind == EventKind::Prompt)
            .map(|e| &e.payload["tag"])
            .collect();
        assert_eq!(tags, [&json!("transform")]);
    }

    struct Always;

    impl Detector for Always {
        fn detect(&self, _: &str) -> Result<DetectionResult, crate::detection::DetectionError> {
            Ok(DetectionResult::defective([DefectType::Temporal], 1.0))
        }
    }

    #[test]
    fn always_positive_detector_hits_the_cap() {
        let mut fixture = ScriptedFixture::new();
        for i in 0..20 {
            fixture.push("vagueness_query", i, "When?");
            fixture.push(
                "refine",
                i,
                format!("the system responds soon (revision {i})"),
            );
        }
        let pipeline =
            Pipeline::new(scripted(fixture)).with_vagueness(shared_detector(Arc::new(Always)));
        let mut answers = |_: &ClarificationQuery| Some("later".to_string());
        let outcome = run_session(
            &pipeline,
            Requirement::new("a", "the system responds soon"),
            &mut answers,
        );
        assert_eq!(outcome.state.phase, Phase::Aborted);
        assert_eq!(outcome.state.iterations.vagueness, 10);
        assert_eq!(outcome.requirement.revisions.len(), 10);
        assert!(outcome.error.unwrap().contains("iteration cap"));
    }

    #[test]
    fn backend_failure_aborts_with_partial_transcript() {
        let pipeline = Pipeline::new(scripted(ScriptedFixture::new()));
        let outcome = run_session(
            &pipeline,
            Requirement::new("s", "speed is high"),
            &mut ScriptedAnswers::default(),
        );
        assert_eq!(outcome.state.phase, Phase::Aborted);
        assert!(outcome
            .transcript
            .iter()
            .any(|e| e.kind == EventKind::Detection));
        assert_eq!(outcome.transcript.last().unwrap().kind, EventKind::Abort);
    }

    #[test]
    fn unusable_answer_is_reasked() {
        let fixture = ScriptedFixture::new()
            .with("vagueness_query", 0, "What value counts as high speed?")
            .with("refine", 0, "UNUSABLE")
            .with("refine", 1, "speed is above 80")
            .with("transform", 0, "speed > 80");
        let pipeline = Pipeline::new(scripted(fixture))
            .with_ambiguity(shared_detector(Arc::new(ScriptedDetector::never())));
        let mut session = pipeline.start(Requirement::new("s", "speed is high"));
        session.answer("blue").unwrap();
        assert_eq!(
            session.pending_query().unwrap().text,
            "What value counts as high speed?"
        );
        session.answer("80").unwrap();
        assert_eq!(session.phase(), Phase::Done);
        assert_eq!(session.rounds(), 1);
        assert_eq!(session.transcript().count(EventKind::Reask), 1);
    }

    #[test]
    fn inquirer_escape_passes_requirement_through() {
        let fixture = ScriptedFixture::new()
            .with(
                "vagueness_query",
                0,
                "The requirement does not contain vagueness.",
            )
            .with("transform", 0, "speed > 80");
        let pipeline = Pipeline::new(scripted(fixture))
            .with_ambiguity(shared_detector(Arc::new(ScriptedDetector::never())));
        let outcome = run_session(
            &pipeline,
            Requirement::new("s", "speed is high"),
            &mut ScriptedAnswers::default(),
        );
        assert_eq!(outcome.state.phase, Phase::Done);
        assert_eq!(outcome.requirement.text, "speed is high");
    }
}
