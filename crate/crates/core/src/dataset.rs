//! Dataset records, type-directed mutation operators and the syntactic
//! validator used to filter mutants.
//!
//! Mutations align the natural-language text with its formula lexically:
//! interval bounds and thresholds are located as numeric literals, connectives
//! as keywords, and signal names as whole words.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionBackend, CompletionRequest, GatewayError, Message};
use crate::stl::{self, Formula};
use crate::text::{self, capitalize, tidy, words, MODALS};
use crate::util::{fnv1a, mix_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefectType {
    Temporal,
    Numerical,
    ConditionalLogic,
    Referential,
    Semantic,
}

impl DefectType {
    pub const ALL: [DefectType; 5] = [
        DefectType::Temporal,
        DefectType::Numerical,
        DefectType::ConditionalLogic,
        DefectType::Referential,
        DefectType::Semantic,
    ];
    pub const VAGUENESS: [DefectType; 3] = [
        DefectType::Temporal,
        DefectType::Numerical,
        DefectType::ConditionalLogic,
    ];
    pub const AMBIGUITY: [DefectType; 2] = [DefectType::Referential, DefectType::Semantic];

    pub fn is_vagueness(self) -> bool {
        Self::VAGUENESS.contains(&self)
    }

    pub fn is_ambiguity(self) -> bool {
        Self::AMBIGUITY.contains(&self)
    }

    /// Suffix used in mutant ids.
    pub fn code(self) -> char {
        match self {
            DefectType::Temporal => 'T',
            DefectType::Numerical => 'N',
            DefectType::ConditionalLogic => 'C',
            DefectType::Referential => 'R',
            DefectType::Semantic => 'S',
        }
    }
}

impl fmt::Display for DefectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DefectType::Temporal => "Temporal",
            DefectType::Numerical => "Numerical",
            DefectType::ConditionalLogic => "ConditionalLogic",
            DefectType::Referential => "Referential",
            DefectType::Semantic => "Semantic",
        };
        f.write_str(name)
    }
}

impl FromStr for DefectType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        match key.as_str() {
            "temporal" | "t" => Ok(DefectType::Temporal),
            "numerical" | "n" => Ok(DefectType::Numerical),
            "conditional" | "conditionallogic" | "c" => Ok(DefectType::ConditionalLogic),
            "referential" | "r" => Ok(DefectType::Referential),
            "semantic" | "s" => Ok(DefectType::Semantic),
            _ => Err(format!("unknown defect type `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Clean,
    Vague,
    Ambiguous,
}

/// One dataset line. Unknown fields survive a read/write round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub nl: String,
    #[serde(default)]
    pub stl: String,
    pub label: Label,
    #[serde(default)]
    pub defect_types: BTreeSet<DefectType>,
    #[serde(default)]
    pub reference_query: Option<String>,
    #[serde(default)]
    pub parent_id: Option<String>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl DatasetRecord {
    pub fn clean(id: impl Into<String>, nl: impl Into<String>, stl: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            nl: nl.into(),
            stl: stl.into(),
            label: Label::Clean,
            defect_types: BTreeSet::new(),
            reference_query: None,
            parent_id: None,
            extra: serde_json::Map::new(),
        }
    }

    /// Checks the label/defect-type invariants.
    pub fn check(&self) -> Result<(), String> {
        match self.label {
            Label::Clean if !self.defect_types.is_empty() => {
                Err("clean record with defect types".into())
            }
            Label::Vague
                if self.defect_types.is_empty()
                    || !self.defect_types.iter().all(|t| t.is_vagueness()) =>
            {
                Err("vague record needs vagueness defect types".into())
            }
            Label::Ambiguous
                if self.defect_types.is_empty()
                    || !self.defect_types.iter().all(|t| t.is_ambiguity()) =>
            {
                Err("ambiguous record needs ambiguity defect types".into())
            }
            _ => Ok(()),
        }
    }

    pub fn formula(&self) -> Option<Result<Formula, stl::StlError>> {
        (!self.stl.trim().is_empty()).then(|| stl::parse(&self.stl))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("record `{id}`: {message}")]
    Record { id: String, message: String },
    #[error("{0}")]
    Mode(String),
}

/// Parses one JSON object per non-blank line.
pub fn parse_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| DatasetError::Json {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn to_lines<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_lines<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_lines(&text)
}

pub fn write_lines<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    fs::write(path, to_lines(items)).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Lexicon

/// Expression sets sampled by the mutation operators and matched by the
/// rule-based detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseLexicon {
    pub temporal: Vec<String>,
    pub numerical: Vec<String>,
    pub conditional: Vec<String>,
    pub referential: Vec<String>,
}

fn owned(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for PhraseLexicon {
    fn default() -> Self {
        Self {
            temporal: owned(&[
                "soon",
                "later",
                "in a moment",
                "within the next period of time",
                "shortly",
                "after a while",
                "for a while",
                "before long",
                "in due course",
                "at some point",
            ]),
            numerical: owned(&[
                "is high",
                "is low",
                "is large",
                "is small",
                "is too high",
                "is too low",
                "is excessive",
                "is insufficient",
                "is very high",
                "is quite low",
            ]),
            conditional: owned(&[
                "and possibly",
                "and maybe",
                "along with",
                "in connection with",
                "together with",
                "around when",
            ]),
            referential: owned(&[
                "it",
                "the signal",
                "that signal",
                "the other signal",
                "the same signal",
                "this value",
            ]),
        }
    }
}

impl PhraseLexicon {
    /// Reads `[temporal]`, `[numerical]`, `[conditional]` and `[referential]`
    /// sections, one phrase per line; `#` starts a comment. Sections that are
    /// absent keep their defaults.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut lexicon = Self::default();
        let mut seen: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_lowercase();
                if !["temporal", "numerical", "conditional", "referential"].contains(&name.as_str())
                {
                    return Err(DatasetError::Lexicon(format!(
                        "line {}: unknown section [{name}]",
                        number + 1
                    )));
                }
                seen.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some(section) = &current else {
                return Err(DatasetError::Lexicon(format!(
                    "line {}: phrase outside a section",
                    number + 1
                )));
            };
            let phrases = seen.get_mut(section).expect("section registered");
            let phrase = tidy(&line.to_lowercase());
            if !phrases.contains(&phrase) {
                phrases.push(phrase);
            }
        }
        for (name, phrases) in seen {
            let slot = match name.as_str() {
                "temporal" => &mut lexicon.temporal,
                "numerical" => &mut lexicon.numerical,
                "conditional" => &mut lexicon.conditional,
                _ => &mut lexicon.referential,
            };
            *slot = phrases;
        }
        lexicon.check()?;
        Ok(lexicon)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        let sets = [
            ("temporal", &self.temporal),
            ("numerical", &self.numerical),
            ("conditional", &self.conditional),
            ("referential", &self.referential),
        ];
        let mut all = BTreeSet::new();
        for (name, set) in sets {
            if set.is_empty() {
                return Err(DatasetError::Lexicon(format!("[{name}] is empty")));
            }
            for phrase in set {
                if !all.insert(phrase.as_str()) {
                    return Err(DatasetError::Lexicon(format!(
                        "`{phrase}` appears in more than one section"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn for_type(&self, defect: DefectType) -> &[String] {
        match defect {
            DefectType::Temporal => &self.temporal,
            DefectType::Numerical => &self.numerical,
            DefectType::ConditionalLogic => &self.conditional,
            DefectType::Referential | DefectType::Semantic => &self.referential,
        }
    }
}

/// Surface forms a lexicon phrase may take in text: `is high` also appears as
/// `be high` after a modal and as `are high` with a plural subject.
pub(crate) fn phrase_variants(phrase: &str) -> Vec<String> {
    let mut variants = vec![phrase.to_string()];
    if let Some(rest) = phrase.strip_prefix("is ") {
        variants.push(format!("be {rest}"));
        variants.push(format!("are {rest}"));
    }
    variants
}

// ---------------------------------------------------------------------------
// Validator

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    pub ok: bool,
    pub reasons: Vec<String>,
}

fn balanced(text: &str) -> bool {
    let mut stack = Vec::new();
    for c in text.chars() {
        match c {
            '(' | '[' | '{' => stack.push(c),
            ')' | ']' | '}' => {
                let open = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                if stack.pop() != Some(open) {
                    return false;
                }
            }
            _ => {}
        }
    }
    stack.is_empty() && text.matches('"').count().is_multiple_of(2)
}

/// Rule-based syntactic validator for mutated requirements.
pub fn validate_nl(text: &str) -> Validation {
    let mut reasons = Vec::new();
    let trimmed = text.trim();
    if trimmed.is_empty() {
        reasons.push("empty text".to_string());
        return Validation { ok: false, reasons };
    }
    if !trimmed.starts_with(|c: char| c.is_alphanumeric() || "([{".contains(c)) {
        reasons.push("must start with a letter, digit or bracket".into());
    }
    let ws = words(trimmed);
    if !text::is_clause(&ws) {
        reasons.push("no verb or comparison".into());
    }
    if !balanced(trimmed) {
        reasons.push("unbalanced brackets or quotes".into());
    }
    let body = trimmed.trim_end_matches(['.', '!', '?']).trim_end();
    let last = words(body).pop().map(|w| w.lower);
    if body.ends_with(',') || matches!(last.as_deref(), Some("and" | "or" | "if" | "then")) {
        reasons.push("dangling connective at the end".into());
    }
    if text
        .chars()
        .collect::<Vec<_>>()
        .windows(2)
        .any(|w| w[0].is_whitespace() && w[1].is_whitespace())
    {
        reasons.push("doubled whitespace".into());
    }
    Validation {
        ok: reasons.is_empty(),
        reasons,
    }
}

// ---------------------------------------------------------------------------
// Mutation

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MutationError {
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("mutant rejected by the validator: {}", reasons.join("; "))]
    Rejected { text: String, reasons: Vec<String> },
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("{0}")]
    Mode(String),
    #[error(transparent)]
    Backend(#[from] GatewayError),
}

const NUM: &str = r"\d+(?:\.\d+)?";
const UNIT: &str = r"(?:time\s+units?|time\s+steps?|seconds?|secs?|s|milliseconds?|ms|minutes?|mins?|hours?|h|steps?|units?|ticks?)";

static TEMPORAL_SPANS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    let prep = r"(?:within|during|in|for|over|throughout|after)";
    let lead = r"(?:the\s+(?:next|first|following|last)\s+)?";
    [
        format!(r"(?i)(?:\b(?:within|during|in|for|over|throughout)\s+(?:the\s+)?(?:(?:time\s+)?interval\s+)?)?\[\s*({NUM})\s*,\s*({NUM})\s*\](?:\s+{UNIT}\b)?"),
        format!(r"(?i)\b(?:between|from)\s+({NUM})\s*(?:and|to|-)\s*({NUM})\s+{UNIT}\b"),
        format!(r"(?i)\b{prep}\s+{lead}({NUM})\s*(?:-|to)\s*({NUM})\s+{UNIT}\b"),
        format!(r"(?i)\b{prep}\s+{lead}({NUM})\s+{UNIT}\b"),
    ]
    .iter()
    .map(|p| Regex::new(p).expect("temporal pattern"))
    .collect()
});

static CONDITION_CUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(if|whenever|when|once)\b").expect("cue pattern"));
static THEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bthen\b").expect("then pattern"));

const CUE_WORDS: &[&str] = &[
    "is",
    "are",
    "be",
    "stays",
    "stay",
    "remains",
    "remain",
    "keeps",
    "keep",
    "goes",
    "go",
    "rises",
    "rise",
    "falls",
    "fall",
    "drops",
    "drop",
    "gets",
    "get",
    "becomes",
    "become",
    "reaches",
    "reach",
    "exceeds",
    "exceed",
    "increases",
    "increase",
    "decreases",
    "decrease",
    "greater",
    "higher",
    "larger",
    "more",
    "less",
    "lower",
    "smaller",
    "fewer",
    "than",
    "above",
    "below",
    "under",
    "over",
    "least",
    "most",
    "at",
    "no",
    "beyond",
    "equal",
    "equals",
    "to",
    "by",
    ">",
    "<",
    ">=",
    "<=",
];
const WEAK_CUES: &[&str] = &["to", "by", "at", "than", "no", "or"];
const CHANGE_VERBS: &[&str] = &[
    "increases",
    "increase",
    "decreases",
    "decrease",
    "rises",
    "rise",
    "falls",
    "fall",
    "drops",
    "drop",
];
const UPWARD: &[&str] = &[
    "exceeds",
    "exceed",
    "greater",
    "higher",
    "larger",
    "more",
    "above",
    "over",
    "beyond",
    "least",
    "rises",
    "rise",
    "increases",
    "increase",
    ">",
    ">=",
    "reaches",
    "reach",
];
const UPWARD_PHRASE: &[&str] = &["high", "large", "excessive", "big", "great", "elevated"];
const UNITS: &[&str] = &[
    "units", "unit", "degrees", "rpm", "km/h", "m/s", "mph", "percent", "volts", "meters", "bar",
    "kph", "celsius", "kelvin", "hz", "amps", "newtons", "kpa", "psi",
];

fn rng_for(seed: u64, record: &DatasetRecord, defect: DefectType) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(
        mix_seed(seed, fnv1a(record.id.as_bytes())),
        defect.code() as u64,
    ))
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn formula_of(record: &DatasetRecord) -> Result<Formula, MutationError> {
    match record.formula() {
        None => Err(MutationError::NotApplicable(
            "record has no formula to align with".into(),
        )),
        Some(Err(e)) => Err(MutationError::Precondition(format!(
            "formula does not parse: {e}"
        ))),
        Some(Ok(f)) => Ok(f),
    }
}

fn same_number(text: &str, value: f64) -> bool {
    text.parse::<f64>().is_ok_and(|v| v == value)
}

fn splice(text: &str, start: usize, end: usize, replacement: &str) -> String {
    tidy(&format!(
        "{} {} {}",
        &text[..start],
        replacement,
        &text[end..]
    ))
}

fn temporal_mutation(
    nl: &str,
    formula: &Formula,
    lexicon: &PhraseLexicon,
    rng: &mut ChaCha8Rng,
) -> Option<String> {
    let bounds: Vec<f64> = formula
        .intervals()
        .iter()
        .flat_map(|i| [i.lo(), i.hi()])
        .collect();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for pattern in TEMPORAL_SPANS.iter() {
        for caps in pattern.captures_iter(nl) {
            let whole = caps.get(0).expect("match");
            let aligned = caps
                .iter()
                .skip(1)
                .flatten()
                .all(|m| bounds.iter().any(|b| same_number(m.as_str(), *b)));
            let overlaps = spans
                .iter()
                .any(|(s, e)| whole.start() < *e && *s < whole.end());
            if aligned && !overlaps {
                spans.push((whole.start(), whole.end()));
            }
        }
    }
    if spans.is_empty() {
        return None;
    }
    spans.sort_unstable();
    let (start, end) = *pick(rng, &spans);
    let phrase = pick(rng, &lexicon.temporal);
    let phrase = if start == 0 {
        capitalize(phrase)
    } else {
        phrase.clone()
    };
    Some(splice(nl, start, end, &phrase))
}

struct ThresholdSpan {
    start: usize,
    end: usize,
    cues: Vec<String>,
    preceded_by_modal: bool,
}

fn threshold_spans(nl: &str, formula: &Formula) -> Vec<ThresholdSpan> {
    let thresholds: Vec<f64> = formula.atoms().iter().map(|a| a.threshold()).collect();
    let ws = words(nl);
    let mut spans = Vec::new();
    for (i, w) in ws.iter().enumerate() {
        if !text::is_number(&w.lower)
            || !thresholds
                .iter()
                .any(|t| same_number(w.lower.trim_end_matches('%'), *t))
        {
            continue;
        }
        let mut first = i;
        while first > 0 {
            let prev = &ws[first - 1].lower;
            let or_equal = prev == "or" && ws.get(first).is_some_and(|n| n.lower == "equal");
            if CUE_WORDS.contains(&prev.as_str()) || or_equal {
                first -= 1;
            } else {
                break;
            }
        }
        let cues: Vec<String> = ws[first..i].iter().map(|w| w.lower.clone()).collect();
        if !cues.iter().any(|c| !WEAK_CUES.contains(&c.as_str())) {
            continue;
        }
        let end = match ws.get(i + 1) {
            Some(unit) if UNITS.contains(&unit.lower.as_str()) => unit.end,
            _ => w.end,
        };
        let preceded_by_modal = first > 0 && MODALS.contains(&ws[first - 1].lower.as_str());
        spans.push(ThresholdSpan {
            start: ws[first].start,
            end,
            cues,
            preceded_by_modal,
        });
    }
    spans
}

fn numerical_mutation(
    nl: &str,
    formula: &Formula,
    lexicon: &PhraseLexicon,
    rng: &mut ChaCha8Rng,
) -> Option<String> {
    let spans = threshold_spans(nl, formula);
    if spans.is_empty() {
        return None;
    }
    let span = pick(rng, &spans);
    // "decreases by 5" loses its amount but keeps the verb.
    if span.cues.len() == 2
        && CHANGE_VERBS.contains(&span.cues[0].as_str())
        && ["by", "to"].contains(&span.cues[1].as_str())
    {
        let verb_end = span.start + span.cues[0].len();
        let deleted = tidy(&format!("{} {}", &nl[..verb_end], &nl[span.end..]));
        if text::unquantified_magnitude(&deleted).is_some() && rng.random_bool(0.5) {
            return Some(deleted);
        }
    }
    let upward = span.cues.iter().any(|c| UPWARD.contains(&c.as_str()));
    let matching: Vec<&String> = lexicon
        .numerical
        .iter()
        .filter(|p| UPWARD_PHRASE.iter().any(|u| p.contains(u)) == upward)
        .collect();
    let phrase = if matching.is_empty() {
        pick(rng, &lexicon.numerical).clone()
    } else {
        (*pick(rng, &matching)).clone()
    };
    let phrase = match phrase.strip_prefix("is ") {
        Some(rest) if span.preceded_by_modal => format!("be {rest}"),
        _ => phrase,
    };
    Some(splice(nl, span.start, span.end, &phrase))
}

fn contains_implication(formula: &Formula) -> bool {
    matches!(formula, Formula::Implies(..))
        || formula.children().into_iter().any(contains_implication)
}

fn conditional_mutation(
    nl: &str,
    formula: &Formula,
    lexicon: &PhraseLexicon,
    rng: &mut ChaCha8Rng,
) -> Option<String> {
    if !contains_implication(formula) {
        return None;
    }
    let cue = CONDITION_CUE.find(nl)?;
    let rest = &nl[cue.end()..];
    let (condition, consequence) = match THEN.find(rest) {
        Some(then) => (&rest[..then.start()], &rest[then.end()..]),
        None => {
            let comma = rest.find(',')?;
            (&rest[..comma], &rest[comma + 1..])
        }
    };
    let condition = condition.trim().trim_end_matches(',').trim();
    let consequence = consequence.trim();
    if condition.is_empty() || consequence.is_empty() {
        return None;
    }
    let prefix = &nl[..cue.start()];
    let variables = formula.variables();
    let lead_word = words(condition)
        .first()
        .map(|w| condition[w.start..w.end].to_string())
        .unwrap_or_default();
    let condition =
        if cue.as_str().starts_with(char::is_uppercase) && !variables.contains(&lead_word) {
            capitalize(condition)
        } else {
            condition.to_string()
        };
    let dropped = tidy(&format!("{prefix}{condition}, {consequence}"));
    let phrase = pick(rng, &lexicon.conditional);
    let replaced = tidy(&format!("{prefix}{condition} {phrase} {consequence}"));
    if text::comma_splice(&dropped) && rng.random_bool(0.5) {
        Some(dropped)
    } else {
        Some(replaced)
    }
}

fn referential_mutation(
    nl: &str,
    formula: &Formula,
    lexicon: &PhraseLexicon,
    rng: &mut ChaCha8Rng,
) -> Result<String, MutationError> {
    let variables = formula.variables();
    if variables.len() < 2 {
        return Err(MutationError::NotApplicable(format!(
            "referential mutation needs at least two signals, formula has {}",
            variables.len()
        )));
    }
    let mut later: Vec<(usize, usize)> = Vec::new();
    for variable in &variables {
        let pattern = Regex::new(&format!(
            r"(?:\b(?i:the\s+)?(?i:signal)\s+)?\b{}\b",
            regex::escape(variable)
        ))
        .expect("escaped pattern");
        let spans: Vec<(usize, usize)> = pattern
            .find_iter(nl)
            .map(|m| (m.start(), m.end()))
            .collect();
        later.extend(spans.into_iter().skip(1));
    }
    if later.is_empty() {
        return Err(MutationError::NotApplicable(
            "no signal is mentioned twice".into(),
        ));
    }
    later.sort_unstable();
    let (start, end) = *pick(rng, &later);
    let phrase = pick(rng, &lexicon.referential);
    let phrase = if start == 0 {
        capitalize(phrase)
    } else {
        phrase.clone()
    };
    Ok(splice(nl, start, end, &phrase))
}

fn reference_query(defect: DefectType) -> &'static str {
    match defect {
        DefectType::Temporal => "What is the exact time interval, in seconds, for this behaviour?",
        DefectType::Numerical => "What is the exact threshold value for this signal?",
        DefectType::ConditionalLogic => {
            "How are these conditions logically related: does one imply the other?"
        }
        DefectType::Referential => "Which signal does this expression refer to?",
        DefectType::Semantic => "Which of the possible readings of this requirement is intended?",
    }
}

fn finish(
    record: &DatasetRecord,
    defect: DefectType,
    nl: String,
) -> Result<DatasetRecord, MutationError> {
    let validation = validate_nl(&nl);
    if !validation.ok {
        return Err(MutationError::Rejected {
            text: nl,
            reasons: validation.reasons,
        });
    }
    let mut defect_types = if record.label == Label::Clean {
        BTreeSet::new()
    } else {
        record.defect_types.clone()
    };
    defect_types.insert(defect);
    Ok(DatasetRecord {
        id: format!("{}.{}", record.id, defect.code()),
        nl,
        stl: record.stl.clone(),
        label: if defect.is_vagueness() {
            Label::Vague
        } else {
            Label::Ambiguous
        },
        defect_types,
        reference_query: Some(reference_query(defect).to_string()),
        parent_id: Some(
            record
                .parent_id
                .clone()
                .unwrap_or_else(|| record.id.clone()),
        ),
        extra: record.extra.clone(),
    })
}

/// Makes a clean (or already vague) record vague in one more respect.
pub fn mutate_vagueness(
    record: &DatasetRecord,
    vtype: DefectType,
    lexicon: &PhraseLexicon,
    seed: u64,
) -> Result<DatasetRecord, MutationError> {
    if !vtype.is_vagueness() {
        return Err(MutationError::Precondition(format!(
            "{vtype} is not a vagueness type"
        )));
    }
    if record.label == Label::Ambiguous {
        return Err(MutationError::Precondition(
            "cannot add vagueness to an ambiguous record".into(),
        ));
    }
    let formula = formula_of(record)?;
    let mut rng = rng_for(seed, record, vtype);
    let mutated = match vtype {
        DefectType::Temporal => temporal_mutation(&record.nl, &formula, lexicon, &mut rng),
        DefectType::Numerical => numerical_mutation(&record.nl, &formula, lexicon, &mut rng),
        _ => conditional_mutation(&record.nl, &formula, lexicon, &mut rng),
    };
    let nl = mutated.ok_or_else(|| {
        MutationError::NotApplicable(format!("no span aligned to a {vtype} element"))
    })?;
    finish(record, vtype, nl)
}

const SEMANTIC_DEMONSTRATIONS: &[(&str, &str, &str)] = &[
    (
        "x2 should stay below 0.5 within 30 seconds after x1 exceeds 0.2",
        "within the next 30 seconds, if x1 exceeds 0.2, then x2 should stay below 0.5",
        "The 30-second window may bound the trigger or the response.",
    ),
    (
        "whenever the door opens the alarm sounds and the light turns on for 5 seconds",
        "whenever the door opens, the alarm sounds and the light turns on for 5 seconds",
        "The 5-second duration may apply to the light only or to both responses.",
    ),
];

fn semantic_prompt(nl: &str) -> Vec<Message> {
    let mut demos = String::new();
    for (original, rewrite, why) in SEMANTIC_DEMONSTRATIONS {
        demos.push_str(&format!(
            "Original: {original}\nAmbiguous rewrite: {rewrite}\nExplanation: {why}\n\n"
        ));
    }
    vec![
        Message::system(
            "You rewrite requirements so that they admit more than one plausible STL interpretation. \
             Keep every signal name, number and predicate unchanged, keep grammatical correctness and semantic \
             coherence, and reply with the rewritten requirement only.",
        ),
        Message::user(format!("{demos}Original: {nl}\nAmbiguous rewrite:")),
    ]
}

/// Makes a clean record ambiguous. Semantic rewrites need `backend`.
pub fn mutate_ambiguity(
    record: &DatasetRecord,
    atype: DefectType,
    lexicon: &PhraseLexicon,
    backend: Option<&dyn CompletionBackend>,
    seed: u64,
) -> Result<DatasetRecord, MutationError> {
    if !atype.is_ambiguity() {
        return Err(MutationError::Precondition(format!(
            "{atype} is not an ambiguity type"
        )));
    }
    if record.label != Label::Clean {
        return Err(MutationError::Precondition(
            "ambiguity mutation needs a clean record".into(),
        ));
    }
    let mut rng = rng_for(seed, record, atype);
    let nl = match atype {
        DefectType::Referential => {
            referential_mutation(&record.nl, &formula_of(record)?, lexicon, &mut rng)?
        }
        _ => {
            let backend = backend.ok_or_else(|| {
                MutationError::Mode("semantic mutation needs a completion backend".into())
            })?;
            let request = CompletionRequest::new("semantic_mutation", semantic_prompt(&record.nl));
            let reply = backend.complete(&request)?;
            let rewrite = tidy(
                reply
                    .lines()
                    .find(|l| !l.trim().is_empty())
                    .unwrap_or("")
                    .trim()
                    .trim_matches('"'),
            );
            let kept = |token: &str| {
                rewrite
                    .split(|c: char| !c.is_alphanumeric() && c != '.')
                    .any(|w| w == token)
            };
            let signals = record
                .formula()
                .and_then(Result::ok)
                .map(|f| f.variables())
                .unwrap_or_default();
            let lost: Vec<String> = words(&record.nl)
                .iter()
                .map(|w| record.nl[w.start..w.end].to_string())
                .filter(|w| (signals.contains(w) || text::is_number(w)) && !kept(w))
                .collect();
            if !lost.is_empty() {
                return Err(MutationError::Rejected {
                    text: rewrite,
                    reasons: vec![format!("rewrite dropped {}", lost.join(", "))],
                });
            }
            rewrite
        }
    };
    finish(record, atype, nl)
}

// ---------------------------------------------------------------------------
// Corpus construction

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationMode {
    #[default]
    RuleOnly,
    LlmAssisted,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MutationPlan {
    pub counts: BTreeMap<DefectType, usize>,
    /// Extra mutants carrying several vagueness types at once.
    #[serde(default)]
    pub stacked: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: MutationMode,
}

impl MutationPlan {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn with(mut self, defect: DefectType, count: usize) -> Self {
        self.counts.insert(defect, count);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeReport {
    pub requested: usize,
    pub applied: usize,
    pub skipped: usize,
    pub rejected: usize,
    pub shortfall: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub per_type: BTreeMap<DefectType, TypeReport>,
    pub stacked: TypeReport,
    pub originals: usize,
    pub mutants: usize,
    /// Some type produced fewer mutants than requested.
    pub partial: bool,
}

fn shuffled(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Originals followed by the planned mutants, in type order.
pub fn build_dataset(
    corpus: &[DatasetRecord],
    plan: &MutationPlan,
    lexicon: &PhraseLexicon,
    backend: Option<&dyn CompletionBackend>,
) -> Result<(Vec<DatasetRecord>, BuildReport), DatasetError> {
    lexicon.check()?;
    for record in corpus {
        if record.label != Label::Clean {
            return Err(DatasetError::Record {
                id: record.id.clone(),
                message: "corpus records must be clean".into(),
            });
        }
        if let Some(Err(e)) = record.formula() {
            return Err(DatasetError::Record {
                id: record.id.clone(),
                message: e.to_string(),
            });
        }
    }
    let backend = match plan.mode {
        MutationMode::RuleOnly => None,
        MutationMode::LlmAssisted => Some(backend.ok_or_else(|| {
            DatasetError::Mode("llm-assisted mode needs a completion backend".into())
        })?),
    };
    let mut out: Vec<DatasetRecord> = corpus.to_vec();
    let mut report = BuildReport {
        originals: corpus.len(),
        ..BuildReport::default()
    };

    for defect in DefectType::ALL {
        let requested = plan.counts.get(&defect).copied().unwrap_or(0);
        if requested == 0 {
            continue;
        }
        let mut entry = TypeReport {
            requested,
            ..TypeReport::default()
        };
        if defect == DefectType::Semantic && backend.is_none() {
            entry.skipped = requested;
            entry
                .notes
                .push("semantic mutation runs only in llm-assisted mode".into());
        } else {
            for index in shuffled(corpus.len(), mix_seed(plan.seed, defect.code() as u64)) {
                if entry.applied == requested {
                    break;
                }
                let record = &corpus[index];
                let result = if defect.is_vagueness() {
                    mutate_vagueness(record, defect, lexicon, plan.seed)
                } else {
                    mutate_ambiguity(record, defect, lexicon, backend, plan.seed)
                };
                match result {
                    Ok(mutant) => {
                        entry.applied += 1;
                        out.push(mutant);
                    }
                    Err(MutationError::NotApplicable(_) | MutationError::Precondition(_)) => {
                        entry.skipped += 1
                    }
                    Err(MutationError::Rejected { .. }) => entry.rejected += 1,
                    Err(e) => {
                        entry.rejected += 1;
                        entry.notes.push(format!("{}: {e}", record.id));
                    }
                }
            }
        }
        entry.shortfall = requested - entry.applied;
        report.partial |= entry.shortfall > 0;
        report.per_type.insert(defect, entry);
    }

    if plan.stacked > 0 {
        let mut entry = TypeReport {
            requested: plan.stacked,
            ..TypeReport::default()
        };
        for index in shuffled(corpus.len(), mix_seed(plan.seed, u64::from(b'*'))) {
            if entry.applied == plan.stacked {
                break;
            }
            let mut current = corpus[index].clone();
            let mut layers = 0;
            let mut rejected = false;
            for defect in DefectType::VAGUENESS {
                match mutate_vagueness(&current, defect, lexicon, plan.seed) {
                    Ok(next) => {
                        current = next;
                        layers += 1;
                    }
                    Err(MutationError::Rejected { .. }) => rejected = true,
                    Err(_) => {}
                }
            }
            if layers >= 2 {
                entry.applied += 1;
                out.push(current);
            } else if rejected {
                entry.rejected += 1;
            } else {
                entry.skipped += 1;
            }
        }
        entry.shortfall = plan.stacked - entry.applied;
        report.partial |= entry.shortfall > 0;
        report.stacked = entry;
    }
    report.mutants = out.len() - corpus.len();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptedBackend, ScriptedFixture};

    const RUNNING_EXAMPLE: &str = "During 10-150 seconds, if signal x1 exceeds 0.2, then signal x2 will decrease for the next 30 seconds";

    fn rec(id: &str, nl: &str, stl: &str) -> DatasetRecord {
        DatasetRecord::clean(id, nl, stl)
    }

    fn single(set: &[&str]) -> PhraseLexicon {
        let mut lexicon = PhraseLexicon::default();
        lexicon.temporal = owned(set);
        lexicon
    }

    #[test]
    fn record_json_round_trip_keeps_unknown_fields() {
        let line = r#"{"id":"a","nl":"x exceeds 1","stl":"x > 1","label":"clean","defect_types":[],"reference_query":null,"parent_id":null,"source":"deepstl","n":3}"#;
        let records: Vec<DatasetRecord> = parse_lines(line).unwrap();
        assert_eq!(records[0].extra["source"], "deepstl");
        assert_eq!(to_lines(&records).trim_end(), line);
    }

    #[test]
    fn record_invariants() {
        let mut r = rec("a", "x exceeds 1", "x > 1");
        assert!(r.check().is_ok());
        r.defect_types.insert(DefectType::Temporal);
        assert!(r.check().is_err());
        r.label = Label::Vague;
        assert!(r.check().is_ok());
        r.label = Label::Ambiguous;
        assert!(r.check().is_err());
    }

    #[test]
    fn validator_examples() {
        assert!(validate_nl(RUNNING_EXAMPLE).ok);
        let dangling = validate_nl("if speed > 50 then");
        assert!(!dangling.ok);
        assert!(dangling.reasons.iter().any(|r| r.contains("dangling")));
        assert!(!validate_nl("").ok);
        assert!(!validate_nl("speed  exceeds 50").ok);
        assert!(!validate_nl("(speed exceeds 50").ok);
        assert!(!validate_nl("- speed exceeds 50").ok);
        assert!(!validate_nl("the speed value").ok);
        assert!(!validate_nl("speed exceeds 50,").ok);
        assert!(validate_nl("speed > 50, brake activates").ok);
    }

    #[test]
    fn temporal_replaces_interval_span() {
        let r = rec(
            "t",
            "x stays above 3 for [0, 10] time units",
            "G[0,10](x > 3)",
        );
        let lexicon = single(&["within the next period of time"]);
        let m = mutate_vagueness(&r, DefectType::Temporal, &lexicon, 1).unwrap();
        assert_eq!(m.nl, "x stays above 3 within the next period of time");
        assert_eq!(m.label, Label::Vague);
        assert_eq!(m.parent_id.as_deref(), Some("t"));
        assert_eq!(m.id, "t.T");
    }

    #[test]
    fn temporal_needs_aligned_numbers() {
        let r = rec("t", "x stays above 3 for 12 seconds", "G[0,10](x > 3)");
        assert!(matches!(
            mutate_vagueness(&r, DefectType::Temporal, &PhraseLexicon::default(), 1),
            Err(MutationError::NotApplicable(_))
        ));
    }

    #[test]
    fn numerical_replaces_threshold() {
        let mut lexicon = PhraseLexicon::default();
        lexicon.numerical = owned(&["is high", "is low"]);
        let r = rec("n", "speed exceeds 50", "speed > 50");
        assert_eq!(
            mutate_vagueness(&r, DefectType::Numerical, &lexicon, 3)
                .unwrap()
                .nl,
            "speed is high"
        );
        let r = rec("m", "x2 will fall below 0.5", "x2 < 0.5");
        assert_eq!(
            mutate_vagueness(&r, DefectType::Numerical, &lexicon, 3)
                .unwrap()
                .nl,
            "x2 will be low"
        );
    }

    #[test]
    fn conditional_drops_or_replaces_connective() {
        let r = rec(
            "c",
            "if speed > 50 then brake activates",
            "(speed > 50) -> (brake > 0)",
        );
        let outputs: BTreeSet<String> = (0..20)
            .map(|seed| {
                mutate_vagueness(
                    &r,
                    DefectType::ConditionalLogic,
                    &PhraseLexicon::default(),
                    seed,
                )
                .unwrap()
                .nl
            })
            .collect();
        assert!(outputs.contains("speed > 50, brake activates"));
        assert!(outputs.iter().any(|o| PhraseLexicon::default()
            .conditional
            .iter()
            .any(|p| o.contains(p.as_str()))));
        let plain = rec(
            "d",
            "speed > 50 and brake activates",
            "(speed > 50) & (brake > 0)",
        );
        assert!(mutate_vagueness(
            &plain,
            DefectType::ConditionalLogic,
            &PhraseLexicon::default(),
            0
        )
        .is_err());
    }

    #[test]
    fn stacking_merges_types() {
        let r = rec(
            "f",
            RUNNING_EXAMPLE,
            "F[10,150](x1 > 0.2) -> G[0,30](x2 < 0.5)",
        );
        let lexicon = PhraseLexicon::default();
        let t = mutate_vagueness(&r, DefectType::Temporal, &lexicon, 0).unwrap();
        let tn = mutate_vagueness(&t, DefectType::Numerical, &lexicon, 0).unwrap();
        assert_eq!(
            tn.defect_types,
            BTreeSet::from([DefectType::Temporal, DefectType::Numerical])
        );
        assert_eq!(tn.parent_id.as_deref(), Some("f"));
        assert_eq!(tn.id, "f.T.N");
    }

    #[test]
    fn referential_example() {
        let mut lexicon = PhraseLexicon::default();
        lexicon.referential = owned(&["it"]);
        let r = rec(
            "r",
            "x1 exceeds 0.2 and x1 stays high",
            "(x1 > 0.2) & F[0,5](x2 > 1)",
        );
        let m = mutate_ambiguity(&r, DefectType::Referential, &lexicon, None, 0).unwrap();
        assert_eq!(m.nl, "x1 exceeds 0.2 and it stays high");
        assert_eq!(m.label, Label::Ambiguous);
        let single_signal = rec(
            "s",
            "x1 exceeds 0.2 and x1 stays high",
            "(x1 > 0.2) & F[0,5](x1 > 1)",
        );
        assert!(matches!(
            mutate_ambiguity(&single_signal, DefectType::Referential, &lexicon, None, 0),
            Err(MutationError::NotApplicable(_))
        ));
    }

    #[test]
    fn semantic_goes_through_backend() {
        let r = rec(
            "s",
            "x2 should stay below 0.5 within 30 seconds after x1 exceeds 0.2",
            "G[0,30]((x1 > 0.2) -> G[0,30](x2 < 0.5))",
        );
        let lexicon = PhraseLexicon::default();
        assert!(matches!(
            mutate_ambiguity(&r, DefectType::Semantic, &lexicon, None, 0),
            Err(MutationError::Mode(_))
        ));
        let backend = ScriptedBackend::new(ScriptedFixture::new().with(
            "semantic_mutation",
            0,
            "within the next 30 seconds, if x1 exceeds 0.2, then x2 should stay below 0.5",
        ));
        let m = mutate_ambiguity(&r, DefectType::Semantic, &lexicon, Some(&backend), 0).unwrap();
        assert_eq!(
            m.nl,
            "within the next 30 seconds, if x1 exceeds 0.2, then x2 should stay below 0.5"
        );
        let lossy = ScriptedBackend::new(ScriptedFixture::new().with(
            "semantic_mutation",
            0,
            "x2 should stay low",
        ));
        assert!(matches!(
            mutate_ambiguity(&r, DefectType::Semantic, &lexicon, Some(&lossy), 0),
            Err(MutationError::Rejected { .. })
        ));
    }

    fn corpus() -> Vec<DatasetRecord> {
        vec![
            rec("a", "x stays above 3 for 10 seconds", "G[0,10](x > 3)"),
            rec("b", "within 5 seconds y exceeds 2", "F[0,5](y > 2)"),
            rec("c", "z drops below 1 within 4 seconds", "F[0,4](z < 1)"),
            rec("d", "during 2-8 seconds w stays above 0", "G[2,8](w > 0)"),
            rec(
                "e",
                "v stays below 9 for the next 6 seconds",
                "G[0,6](v < 9)",
            ),
        ]
    }

    #[test]
    fn build_example_plans() {
        let lexicon = PhraseLexicon::default();
        let plan = MutationPlan::new(1).with(DefectType::Temporal, 2);
        let (out, report) = build_dataset(&corpus(), &plan, &lexicon, None).unwrap();
        assert_eq!(out.len(), 7);
        let ids: BTreeSet<String> = corpus().into_iter().map(|r| r.id).collect();
        for mutant in &out[5..] {
            assert!(ids.contains(mutant.parent_id.as_ref().unwrap()));
            assert_eq!(mutant.label, Label::Vague);
        }
        assert_eq!(report.per_type[&DefectType::Temporal].applied, 2);
        assert!(!report.partial);

        let (same, _) = build_dataset(&corpus(), &MutationPlan::new(9), &lexicon, None).unwrap();
        assert_eq!(same, corpus());

        let three: Vec<DatasetRecord> = corpus().into_iter().take(3).collect();
        let plan = MutationPlan::new(1).with(DefectType::Referential, 3);
        let (out, report) = build_dataset(&three, &plan, &lexicon, None).unwrap();
        assert_eq!(out.len(), 3);
        let entry = &report.per_type[&DefectType::Referential];
        assert_eq!((entry.applied, entry.skipped, entry.shortfall), (0, 3, 3));
        assert!(report.partial);
    }

    #[test]
    fn builds_are_reproducible() {
        let lexicon = PhraseLexicon::default();
        let plan = MutationPlan::new(5)
            .with(DefectType::Temporal, 3)
            .with(DefectType::Numerical, 3);
        let a = build_dataset(&corpus(), &plan, &lexicon, None).unwrap();
        let b = build_dataset(&corpus(), &plan, &lexicon, None).unwrap();
        assert_eq!(to_lines(&a.0), to_lines(&b.0));
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn semantic_is_skipped_in_rule_only_mode() {
        let plan = MutationPlan::new(1).with(DefectType::Semantic, 2);
        let (_, report) = build_dataset(&corpus(), &plan, &PhraseLexicon::default(), None).unwrap();
        assert_eq!(report.per_type[&DefectType::Semantic].skipped, 2);
    }

    #[test]
    fn lexicon_file_format() {
        let text = "# custom\n[temporal]\nsoon\nSoon\nlater\n\n[referential]\nit\n";
        let lexicon = PhraseLexicon::parse(text).unwrap();
        assert_eq!(lexicon.temporal, ["soon", "later"]);
        assert_eq!(lexicon.referential, ["it"]);
        assert_eq!(lexicon.numerical, PhraseLexicon::default().numerical);
        assert!(PhraseLexicon::parse("[bogus]\nx").is_err());
        assert!(PhraseLexicon::parse("orphan").is_err());
        assert!(PhraseLexicon::parse("[temporal]\nit\n[referential]\nit").is_err());
    }
}
