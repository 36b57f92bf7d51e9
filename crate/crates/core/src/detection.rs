//! Vagueness and ambiguity detectors.
//!
//! * [`rule_detect_vagueness`] matches lexicon phrases and a few shallow
//!   structural cues.
//! * [`PromptDetector`] asks a completion backend for a structured verdict.
//! * [`AmbiguityModel`] is a small projector network trained with a triplet
//!   loss over frozen text embeddings, with a two-way softmax head.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{phrase_variants, DefectType, PhraseLexicon};
use crate::gateway::{
    CompletionBackend, CompletionRequest, EmbeddingProvider, GatewayError, Message,
};
use crate::text;

pub use crate::gateway::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error("could not parse detector reply: {0}")]
    Parse(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("training: {0}")]
    Training(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("scripted detector has no more results")]
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub is_defective: bool,
    pub types: BTreeSet<DefectType>,
    pub confidence: f64,
    pub rationale: Option<String>,
}

impl DetectionResult {
    pub fn clean(confidence: f64) -> Self {
        Self {
            is_defective: false,
            types: BTreeSet::new(),
            confidence,
            rationale: None,
        }
    }

    pub fn defective(types: impl IntoIterator<Item = DefectType>, confidence: f64) -> Self {
        Self {
            is_defective: true,
            types: types.into_iter().collect(),
            confidence,
            rationale: None,
        }
    }

    pub fn with_rationale(mut self, rationale: impl Into<String>) -> Self {
        self.rationale = Some(rationale.into());
        self
    }
}

pub trait Detector: Send + Sync {
    fn detect(&self, requirement: &str) -> Result<DetectionResult, DetectionError>;
}

impl<D: Detector + ?Sized> Detector for Arc<D> {
    fn detect(&self, requirement: &str) -> Result<DetectionResult, DetectionError> {
        (**self).detect(requirement)
    }
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn detect(&self, requirement: &str) -> Result<DetectionResult, DetectionError> {
        (**self).detect(requirement)
    }
}

// ---------------------------------------------------------------------------
// Rules

fn lexicon_hit<'a>(requirement: &str, phrases: &'a [String]) -> Option<&'a str> {
    phrases
        .iter()
        .find(|p| {
            phrase_variants(p)
                .iter()
                .any(|v| text::contains_phrase(requirement, v))
        })
        .map(String::as_str)
}

/// Deterministic vagueness baseline driven by the phrase lexicon.
pub fn rule_detect_vagueness(requirement: &str, lexicon: &PhraseLexicon) -> DetectionResult {
    let mut types = BTreeSet::new();
    let mut notes = Vec::new();
    if let Some(p) = lexicon_hit(requirement, &lexicon.temporal) {
        types.insert(DefectType::Temporal);
        notes.push(format!("vague time phrase `{p}`"));
    } else if text::unquantified_temporal(requirement) {
        types.insert(DefectType::Temporal);
        notes.push("time window without a bound".to_string());
    }
    if let Some(p) = lexicon_hit(requirement, &lexicon.numerical) {
        types.insert(DefectType::Numerical);
        notes.push(format!("qualitative value `{p}`"));
    } else if let Some(index) = text::unquantified_magnitude(requirement) {
        types.insert(DefectType::Numerical);
        notes.push(format!(
            "`{}` without a value",
            text::words(requirement)[index].lower
        ));
    }
    if let Some(p) = lexicon_hit(requirement, &lexicon.conditional) {
        types.insert(DefectType::ConditionalLogic);
        notes.push(format!("loose connective `{p}`"));
    } else if text::comma_splice(requirement) {
        types.insert(DefectType::ConditionalLogic);
        notes.push("clauses joined by a bare comma".to_string());
    }
    if types.is_empty() {
        DetectionResult::clean(1.0)
    } else {
        DetectionResult::defective(types, 1.0).with_rationale(notes.join("; "))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RuleVaguenessDetector {
    pub lexicon: PhraseLexicon,
}

impl RuleVaguenessDetector {
    pub fn new(lexicon: PhraseLexicon) -> Self {
        Self { lexicon }
    }
}

impl Detector for RuleVaguenessDetector {
    fn detect(&self, requirement: &str) -> Result<DetectionResult, DetectionError> {
        Ok(rule_detect_vagueness(requirement, &self.lexicon))
    }
}

// ---------------------------------------------------------------------------
// Prompted

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectFamily {
    Vagueness,
    Ambiguity,
}

impl DefectFamily {
    pub fn tag(self) -> &'static str {
        match self {
            DefectFamily::Vagueness => "detect_vagueness",
            DefectFamily::Ambiguity => "detect_ambiguity",
        }
    }

    fn admits(self, defect: DefectType) -> bool {
        match self {
            DefectFamily::Vagueness => defect.is_vagueness(),
            DefectFamily::Ambiguity => defect.is_ambiguity(),
        }
    }
}

fn detection_instruction(family: DefectFamily) -> &'static str {
    match family {
        DefectFamily::Vagueness => {
            "Determine whether the natural language requirement is incomplete for translation into Signal \
             Temporal Logic and classify the type of vagueness. Types: Temporal (time bounds missing or \
             imprecise), Numerical (thresholds or values missing or qualitative), ConditionalLogic (logical or \
             conditional relationship missing or underspecified). A requirement may have several types. \
             Reply with JSON only: {\"defective\": bool, \"types\": [..], \"rationale\": \"..\"}."
        }
        DefectFamily::Ambiguity => {
            "Determine whether the natural language requirement admits more than one plausible Signal Temporal \
             Logic interpretation. Types: Referential (unclear which signal is meant), Semantic (scope or \
             ordering of temporal, logical or relational constraints unclear). Reply with JSON only: \
             {\"defective\": bool, \"types\": [..], \"rationale\": \"..\"}."
        }
    }
}

#[derive(Deserialize)]
struct Verdict {
    defective: bool,
    #[serde(default)]
    types: Vec<String>,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(default)]
    rationale: Option<String>,
}

const CLEAN_REPLIES: &[&str] = &[
    "complete",
    "clear",
    "not vague",
    "no vagueness",
    "unambiguous",
    "not ambiguous",
    "no ambiguity",
    "none",
];

/// Reads a JSON verdict (optionally wrapped in prose or a code fence), or a
/// one-line `vague: Numerical, Temporal` / `complete` reply.
pub fn parse_detection_reply(
    reply: &str,
    family: DefectFamily,
) -> Result<DetectionResult, DetectionError> {
    let result = if let (Some(open), Some(close)) = (reply.find('{'), reply.rfind('}')) {
        let verdict: Verdict = serde_json::from_str(&reply[open..=close])
            .map_err(|e| DetectionError::Parse(format!("{e} in `{}`", reply.trim())))?;
        let types = verdict
            .types
            .iter()
            .map(|t| t.parse::<DefectType>().map_err(DetectionError::Parse))
            .collect::<Result<BTreeSet<_>, _>>()?;
        let confidence = verdict.confidence.unwrap_or(1.0).clamp(0.0, 1.0);
        DetectionResult {
            is_defective: verdict.defective,
            types,
            confidence,
            rationale: verdict.rationale,
        }
    } else {
        let line = reply.trim().trim_end_matches('.').to_lowercase();
        if CLEAN_REPLIES.contains(&line.as_str()) {
            DetectionResult::clean(1.0)
        } else if let Some((head, list)) = line.split_once(':') {
            if !["vague", "ambiguous", "defective"].contains(&head.trim()) {
                return Err(DetectionError::Parse(format!(
                    "unrecognised reply `{}`",
                    reply.trim()
                )));
            }
            let types = list
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<DefectType>()
                        .map_err(DetectionError::Parse)
                })
                .collect::<Result<BTreeSet<_>, _>>()?;
            DetectionResult::defective(types, 1.0)
        } else {
            return Err(DetectionError::Parse(format!(
                "unrecognised reply `{}`",
                reply.trim()
            )));
        }
    };
    if result.is_defective && result.types.is_empty() {
        return Err(DetectionError::Parse(
            "defective verdict without a type".into(),
        ));
    }
    if let Some(wrong) = result.types.iter().find(|t| !family.admits(**t)) {
        return Err(DetectionError::Parse(format!(
            "{wrong} is not a {family:?} type"
        )));
    }
    if !result.is_defective && !result.types.is_empty() {
        return Err(DetectionError::Parse(
            "types given for a non-defective verdict".into(),
        ));
    }
    Ok(result)
}

/// Backend-driven detector. Each call uses the next round index under its
/// operation tag, and a malformed reply is retried once.
pub struct PromptDetector {
    backend: Arc<dyn CompletionBackend>,
    family: DefectFamily,
    model_id: Option<String>,
    calls: AtomicU32,
}

impl PromptDetector {
    pub fn new(backend: Arc<dyn CompletionBackend>, family: DefectFamily) -> Self {
        Self {
            backend,
            family,
            model_id: None,
            calls: AtomicU32::new(0),
        }
    }

    pub fn with_model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = Some(model_id.into());
        self
    }

    fn ask(&self, requirement: &str) -> Result<String, DetectionError> {
        let round = self.calls.fetch_add(1, Ordering::SeqCst);
        let messages = vec![
            Message::system(format!(
                "Instruction: {}",
                detection_instruction(self.family)
            )),
            Message::user(format!("Input: {requirement}\nOutput:")),
        ];
        let mut request = CompletionRequest::new(self.family.tag(), messages).with_round(round);
        if let Some(model) = &self.model_id {
            request = request.with_model(model.clone());
        }
        Ok(self.backend.complete(&request)?)
    }
}

impl Detector for PromptDetector {
    fn detect(&self, requirement: &str) -> Result<DetectionResult, DetectionError> {
        match parse_detection_reply(&self.ask(requirement)?, self.family) {
            Ok(result) => Ok(result),
            Err(_) => parse_detection_reply(&self.ask(requirement)?, self.family),
        }
    }
}

/// Returns queued results in order; useful for driving sessions in tests.
#[derive(Debug, Default)]
pub struct ScriptedDetector {
    results: Mutex<VecDeque<DetectionResult>>,
}

impl ScriptedDetector {
    pub fn new(results: impl IntoIterator<Item = DetectionResult>) -> Self {
        Self {
            results: Mutex::new(results.into_iter().collect()),
        }
    }

    /// A detector that always reports a clean requirement.
    pub fn never() -> NeverDefective {
        NeverDefective
    }
}

impl Detector for ScriptedDetector {
    fn detect(&self, _: &str) -> Result<DetectionResult, DetectionError> {
        self.results
            .lock()
            .expect("detector lock")
            .pop_front()
            .ok_or(DetectionError::Exhausted)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NeverDefective;

impl Detector for NeverDefective {
    fn detect(&self, _: &str) -> Result<DetectionResult, DetectionError> {
        Ok(DetectionResult::clean(1.0))
    }
}

// ---------------------------------------------------------------------------
// Triplet classifier

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `max(‖a − p‖ − ‖a − n‖ + margin, 0)`.
pub fn triplet_loss(
    anchor: &EmbeddingVector,
    positive: &EmbeddingVector,
    negative: &EmbeddingVector,
    margin: f64,
) -> Result<f64, DetectionError> {
    for other in [positive, negative] {
        if other.dim() != anchor.dim() {
            return Err(DetectionError::Dimension {
                expected: anchor.dim(),
                found: other.dim(),
            });
        }
    }
    if margin <= 0.0 {
        return Err(DetectionError::Training("margin must be positive".into()));
    }
    Ok(triplet_value(
        anchor.as_slice(),
        positive.as_slice(),
        negative.as_slice(),
        margin,
    ))
}

fn triplet_value(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    (distance(a, p) - distance(a, n) + margin).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletBatch {
    pub anchors: Vec<EmbeddingVector>,
    pub positives: Vec<EmbeddingVector>,
    pub negatives: Vec<EmbeddingVector>,
}

impl TripletBatch {
    pub fn new(
        anchors: Vec<EmbeddingVector>,
        positives: Vec<EmbeddingVector>,
        negatives: Vec<EmbeddingVector>,
    ) -> Result<Self, DetectionError> {
        if anchors.len() != positives.len() || anchors.len() != negatives.len() {
            return Err(DetectionError::Training(
                "triplet lists differ in length".into(),
            ));
        }
        let dim = anchors.first().map_or(0, EmbeddingVector::dim);
        if let Some(bad) = anchors
            .iter()
            .chain(&positives)
            .chain(&negatives)
            .find(|v| v.dim() != dim)
        {
            return Err(DetectionError::Dimension {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(Self {
            anchors,
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Mean triplet loss of the raw (unprojected) vectors.
    pub fn mean_loss(&self, margin: f64) -> Result<f64, DetectionError> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for i in 0..self.len() {
            total += triplet_loss(
                &self.anchors[i],
                &self.positives[i],
                &self.negatives[i],
                margin,
            )?;
        }
        Ok(total / self.len() as f64)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Self {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
        }
    }

    fn mul_vec(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.cols)
            .zip(bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn transpose_mul(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, gi) in self.data.chunks_exact(self.cols).zip(g) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        out
    }

    fn add_outer(&mut self, g: &[f64], x: &[f64]) {
        for (row, gi) in self.data.chunks_exact_mut(self.cols).zip(g) {
            for (w, v) in row.iter_mut().zip(x) {
                *w += gi * v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Dims {
    /// 4096 → 1024 → 256 scaled to the provider dimension, with floors of 16
    /// hidden and 8 output units.
    pub fn scaled(input: usize) -> Self {
        Self {
            input,
            hidden: (input / 4).max(16),
            output: (input / 16).max(8),
        }
    }
}

/// Projector (affine, ReLU, affine, L2 normalisation) plus a two-logit head.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityModel {
    dims: Dims,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
    head: Matrix,
    head_bias: Vec<f64>,
    pub margin: f64,
    pub threshold: f64,
}

struct Forward {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    norm: f64,
    projected: Vec<f64>,
}

#[derive(Clone)]
struct Gradients {
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
    head: Matrix,
    head_bias: Vec<f64>,
}

impl Gradients {
    fn zeros(d: Dims) -> Self {
        Self {
            w1: Matrix::zeros(d.hidden, d.input),
            b1: vec![0.0; d.hidden],
            w2: Matrix::zeros(d.output, d.hidden),
            b2: vec![0.0; d.output],
            head: Matrix::zeros(2, d.output),
            head_bias: vec![0.0; 2],
        }
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
            &mut self.head.data,
            &mut self.head_bias,
        ]
    }
}

fn softmax2(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

impl AmbiguityModel {
    pub fn new(dims: Dims, margin: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            dims,
            w1: Matrix::glorot(dims.hidden, dims.input, &mut rng),
            b1: vec![0.0; dims.hidden],
            w2: Matrix::glorot(dims.output, dims.hidden, &mut rng),
            b2: vec![0.0; dims.output],
            head: Matrix::glorot(2, dims.output, &mut rng),
            head_bias: vec![0.0; 2],
            margin,
            threshold: 0.5,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), DetectionError> {
        if x.len() != self.dims.input {
            return Err(DetectionError::Dimension {
                expected: self.dims.input,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let pre = self.w1.mul_vec(x, &self.b1);
        let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let z = self.w2.mul_vec(&hidden, &self.b2);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let projected = if norm > 1e-12 {
            z.iter().map(|v| v / norm).collect()
        } else {
            // Degenerate output: fall back to the first basis vector.
            let mut e = vec![0.0; z.len()];
            e[0] = 1.0;
            e
        };
        Forward {
            pre,
            hidden,
            norm,
            projected,
        }
    }

    fn backward(&self, x: &[f64], f: &Forward, grad_p: &[f64], grads: &mut Gradients) {
        if f.norm <= 1e-12 {
            return;
        }
        let dot: f64 = f.projected.iter().zip(grad_p).map(|(p, g)| p * g).sum();
        let dz: Vec<f64> = f
            .projected
            .iter()
            .zip(grad_p)
            .map(|(p, g)| (g - p * dot) / f.norm)
            .collect();
        grads.w2.add_outer(&dz, &f.hidden);
        grads.b2.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
        let dh = self.w2.transpose_mul(&dz);
        let da: Vec<f64> = dh
            .iter()
            .zip(&f.pre)
            .map(|(d, a)| if *a > 0.0 { *d } else { 0.0 })
            .collect();
        grads.w1.add_outer(&da, x);
        grads.b1.iter_mut().zip(&da).for_each(|(b, d)| *b += d);
    }

    /// Unit-norm projection of an embedding.
    pub fn project(&self, embedding: &EmbeddingVector) -> Result<EmbeddingVector, DetectionError> {
        self.check_dim(embedding.as_slice())?;
        Ok(EmbeddingVector {
            values: self.forward(embedding.as_slice()).projected,
        })
    }

    /// `[P(clear), P(ambiguous)]`.
    pub fn probabilities(&self, embedding: &EmbeddingVector) -> Result<[f64; 2], DetectionError> {
        self.check_dim(embedding.as_slice())?;
        let f = self.forward(embedding.as_slice());
        Ok(softmax2(&self.head.mul_vec(&f.projected, &self.head_bias)))
    }

    pub fn decide(&self, p_ambiguous: f64) -> DetectionResult {
        if p_ambiguous >= self.threshold {
            DetectionResult::defective([DefectType::Semantic], p_ambiguous)
        } else {
            DetectionResult {
                is_defective: false,
                types: BTreeSet::new(),
                confidence: p_ambiguous,
                rationale: None,
            }
        }
    }

    pub fn classify_embedding(
        &self,
        embedding: &EmbeddingVector,
    ) -> Result<DetectionResult, DetectionError> {
        Ok(self.decide(self.probabilities(embedding)?[1]))
    }

    /// Loss terms and gradients for one triplet whose anchor has `label`.
    fn triplet_step(
        &self,
        a: &[f64],
        p: &[f64],
        n: &[f64],
        label: usize,
        grads: &mut Gradients,
    ) -> (f64, f64) {
        let fa = self.forward(a);
        let fp = self.forward(p);
        let fn_ = self.forward(n);
        let d_ap = distance(&fa.projected, &fp.projected);
        let d_an = distance(&fa.projected, &fn_.projected);
        let triplet = (d_ap - d_an + self.margin).max(0.0);
        let dim = self.dims.output;
        let mut ga = vec![0.0; dim];
        let mut gp = vec![0.0; dim];
        let mut gn = vec![0.0; dim];
        if triplet > 0.0 {
            for k in 0..dim {
                if d_ap > 1e-12 {
                    let u = (fa.projected[k] - fp.projected[k]) / d_ap;
                    ga[k] += u;
                    gp[k] -= u;
                }
                if d_an > 1e-12 {
                    let v = (fa.projected[k] - fn_.projected[k]) / d_an;
                    ga[k] -= v;
                    gn[k] += v;
                }
            }
        }
        let logits = self.head.mul_vec(&fa.projected, &self.head_bias);
        let probs = softmax2(&logits);
        let cross_entropy = -probs[label].max(f64::MIN_POSITIVE).ln();
        let dl: Vec<f64> = (0..2)
            .map(|c| probs[c] - if c == label { 1.0 } else { 0.0 })
            .collect();
        grads.head.add_outer(&dl, &fa.projected);
        grads
            .head_bias
            .iter_mut()
            .zip(&dl)
            .for_each(|(b, d)| *b += d);
        for (g, h) in ga.iter_mut().zip(self.head.transpose_mul(&dl)) {
            *g += h;
        }
        self.backward(a, &fa, &ga, grads);
        self.backward(p, &fp, &gp, grads);
        self.backward(n, &fn_, &gn, grads);
        (triplet, cross_entropy)
    }

    fn params_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
            &mut self.head.data,
            &mut self.head_bias,
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for d in [self.dims.input, self.dims.hidden, self.dims.output] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.margin.to_le_bytes());
        out.extend_from_slice(&self.threshold.to_le_bytes());
        for block in [
            &self.w1.data,
            &self.b1,
            &self.w2.data,
            &self.b2,
            &self.head.data,
            &self.head_bias,
        ] {
            for v in block.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DetectionError> {
        let body = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| DetectionError::Format("missing AMBM1 header".into()))?;
        let mut reader = Reader { bytes: body };
        let dims = Dims {
            input: reader.u32()? as usize,
            hidden: reader.u32()? as usize,
            output: reader.u32()? as usize,
        };
        if dims.input == 0 || dims.hidden == 0 || dims.output == 0 {
            return Err(DetectionError::Format("zero dimension".into()));
        }
        let margin = reader.f64()?;
        let threshold = reader.f64()?;
        let mut model = AmbiguityModel::new(dims, margin, 0);
        model.threshold = threshold;
        for block in model.params_mut() {
            for v in block.iter_mut() {
                *v = reader.f64()?;
            }
        }
        if !reader.bytes.is_empty() {
            return Err(DetectionError::Format(format!(
                "{} trailing bytes",
                reader.bytes.len()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DetectionError> {
        fs::write(path, self.to_bytes()).map_err(|e| DetectionError::Format(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DetectionError> {
        Self::from_bytes(&fs::read(path).map_err(|e| DetectionError::Format(e.to_string()))?)
    }
}

/// Model file header. Layout after it, all little-endian: `u32` input,
/// hidden and output sizes; `f64` margin and threshold; then `f64` parameters
/// in the order W1 (hidden × input, row-major), b1, W2 (output × hidden), b2,
/// head (2 × output), head bias.
pub const MAGIC: &[u8] = b"AMBM1";

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DetectionError> {
        if self.bytes.len() < N {
            return Err(DetectionError::Format("truncated model file".into()));
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, DetectionError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, DetectionError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub margin: f64,
    /// `None` scales from the input dimension.
    pub dims: Option<Dims>,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 16,
            lr: 5e-5,
            margin: 1.0,
            dims: None,
            dropout: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub triplet: f64,
    pub cross_entropy: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
}

struct Adam {
    m: Gradients,
    v: Gradients,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn update(&mut self, model: &mut AmbiguityModel, grads: &mut Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let params = model.params_mut();
        let gs = grads.slices_mut();
        let ms = self.m.slices_mut();
        let vs = self.v.slices_mut();
        for (((p, g), m), v) in params.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn dropout(x: &[f64], p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if p <= 0.0 {
        return x.to_vec();
    }
    let keep = 1.0 - p;
    x.iter()
        .map(|v| if rng.random_bool(keep) { v / keep } else { 0.0 })
        .collect()
}

/// Trains on precomputed embeddings. Anchor and positive are two dropout
/// views of the same embedding; the negative is drawn from the other class.
pub fn train_on_embeddings(
    samples: &[(EmbeddingVector, bool)],
    config: &TrainConfig,
) -> Result<(AmbiguityModel, TrainingLog), DetectionError> {
    let input = samples
        .first()
        .map(|(v, _)| v.dim())
        .ok_or_else(|| DetectionError::Training("no samples".into()))?;
    if let Some((bad, _)) = samples.iter().find(|(v, _)| v.dim() != input) {
        return Err(DetectionError::Dimension {
            expected: input,
            found: bad.dim(),
        });
    }
    let dims = config.dims.unwrap_or_else(|| Dims::scaled(input));
    if dims.input != input {
        return Err(DetectionError::Dimension {
            expected: dims.input,
            found: input,
        });
    }
    let positives: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].1).collect();
    let negatives: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].1).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(DetectionError::Training(
            "both labels must be present".into(),
        ));
    }
    if config.margin.is_nan()
        || config.margin <= 0.0
        || config.batch == 0
        || !(0.0..1.0).contains(&config.dropout)
    {
        return Err(DetectionError::Training(
            "margin > 0, batch > 0 and dropout in [0, 1) are required".into(),
        ));
    }
    let mut model = AmbiguityModel::new(dims, config.margin, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut adam = Adam {
        m: Gradients::zeros(dims),
        v: Gradients::zeros(dims),
        step: 0,
    };
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut triplet_sum, mut ce_sum) = (0.0, 0.0);
        for chunk in order.chunks(config.batch) {
            let mut grads = Gradients::zeros(dims);
            for &i in chunk {
                let (embedding, label) = &samples[i];
                let pool = if *label { &negatives } else { &positives };
                let other = &samples[pool[rng.random_range(0..pool.len())]].0;
                let a = dropout(embedding.as_slice(), config.dropout, &mut rng);
                let p = dropout(embedding.as_slice(), config.dropout, &mut rng);
                let n = dropout(other.as_slice(), config.dropout, &mut rng);
                let (t, ce) = model.triplet_step(&a, &p, &n, usize::from(*label), &mut grads);
                triplet_sum += t;
                ce_sum += ce;
            }
            let scale = 1.0 / chunk.len() as f64;
            for slice in grads.slices_mut() {
                slice.iter_mut().for_each(|g| *g *= scale);
            }
            adam.update(&mut model, &mut grads, config.lr);
        }
        let n = samples.len() as f64;
        log.epochs.push(EpochStats {
            epoch,
            triplet: triplet_sum / n,
            cross_entropy: ce_sum / n,
            total: (triplet_sum + ce_sum) / n,
        });
    }
    Ok((model, log))
}

/// Mean triplet loss of `model` over `samples`, with triplets drawn the way
/// training draws them (dropout views, random opposite-class negative) from
/// a fixed seed. Comparable across models.
pub fn mean_triplet_loss(
    model: &AmbiguityModel,
    samples: &[(EmbeddingVector, bool)],
    dropout_p: f64,
    seed: u64,
) -> Result<f64, DetectionError> {
    let positives: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].1).collect();
    let negatives: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].1).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(DetectionError::Training(
            "both labels must be present".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for (embedding, label) in samples {
        model.check_dim(embedding.as_slice())?;
        let pool = if *label { &negatives } else { &positives };
        let other = &samples[pool[rng.random_range(0..pool.len())]].0;
        let a = model
            .forward(&dropout(embedding.as_slice(), dropout_p, &mut rng))
            .projected;
        let p = model
            .forward(&dropout(embedding.as_slice(), dropout_p, &mut rng))
            .projected;
        let n = model
            .forward(&dropout(other.as_slice(), dropout_p, &mut rng))
            .projected;
        total += triplet_value(&a, &p, &n, model.margin);
    }
    Ok(total / samples.len() as f64)
}

/// Embeds `records` with the frozen `provider` and trains a classifier.
pub fn train_ambiguity_model(
    records: &[(String, bool)],
    provider: &dyn EmbeddingProvider,
    config: &TrainConfig,
) -> Result<(AmbiguityModel, TrainingLog), DetectionError> {
    if let Some(dims) = config.dims {
        if dims.input != provider.dimension() {
            return Err(DetectionError::Dimension {
                expected: dims.input,
                found: provider.dimension(),
            });
        }
    }
    let samples = records
        .iter()
        .map(|(text, label)| provider.embed_one(text).map(|v| (v, *label)))
        .collect::<Result<Vec<_>, _>>()?;
    train_on_embeddings(&samples, config)
}

/// `P(ambiguous) >= threshold` marks the text as defective.
pub fn classify_ambiguity(
    model: &AmbiguityModel,
    text: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<DetectionResult, DetectionError> {
    model.classify_embedding(&provider.embed_one(text)?)
}

/// [`AmbiguityModel`] bound to its embedding provider.
pub struct ModelDetector {
    pub model: AmbiguityModel,
    pub provider: Arc<dyn EmbeddingProvider>,
}

impl Detector for ModelDetector {
    fn detect(&self, requirement: &str) -> Result<DetectionResult, DetectionError> {
        classify_ambiguity(&self.model, requirement, self.provider.as_ref())
    }
}
