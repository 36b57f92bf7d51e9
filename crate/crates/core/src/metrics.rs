//! Evaluation measures for generated formulas and clarification queries.
//!
//! Formula-level scores compare canonical token streams position by position;
//! text-level scores work on whitespace tokens.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EmbeddingProvider, GatewayError};
use crate::stl::{
    self, check_syntax, evaluate, extract_template, tokenize_formula, Formula, StlError, Token,
    Trace,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Embedding(#[from] GatewayError),
    #[error("length mismatch: {predictions} predictions, {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("{0}")]
    Empty(&'static str),
    #[error("item {item} has {found} ratings, expected {expected}")]
    UnequalRaters {
        item: usize,
        found: u32,
        expected: u32,
    },
    #[error("at least two raters per item are required")]
    TooFewRaters,
    #[error("trace budget exhausted after {attempts} attempts ({satisfying} satisfying, {violating} violating)")]
    BudgetExhausted {
        attempts: usize,
        satisfying: usize,
        violating: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn positional_score(generated: &[Token], reference: &[Token]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let hits = generated
        .iter()
        .zip(reference)
        .filter(|(g, r)| g == r)
        .count();
    hits as f64 / reference.len() as f64
}

/// Share of reference tokens matched at the same position. An unparseable
/// `generated` scores 0; an unparseable `reference` is an error.
pub fn formula_accuracy(generated: &str, reference: &str) -> Result<f64, MetricsError> {
    let reference = stl::parse(reference)?;
    if !check_syntax(generated).is_empty() {
        return Ok(0.0);
    }
    let generated = stl::parse(generated)?;
    Ok(positional_score(
        &tokenize_formula(&generated),
        &tokenize_formula(&reference),
    ))
}

/// [`formula_accuracy`] over templates, so signal names and numbers are ignored.
pub fn template_accuracy(generated: &str, reference: &str) -> Result<f64, MetricsError> {
    let reference = stl::parse(reference)?;
    if !check_syntax(generated).is_empty() {
        return Ok(0.0);
    }
    let generated = stl::parse(generated)?;
    Ok(positional_score(
        &extract_template(&generated).tokens(),
        &extract_template(&reference).tokens(),
    ))
}

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 over whitespace tokens with the standard brevity penalty.
/// A zero n-gram precision `0/d` is smoothed to `1/(d+1)`.
pub fn bleu(generated: &str, reference: &str) -> f64 {
    let hyp = words(generated);
    let refr = words(reference);
    if hyp.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let hyp_counts = ngram_counts(&hyp, n);
        let ref_counts = ngram_counts(&refr, n);
        let total: usize = hyp_counts.values().sum();
        let clipped: usize = hyp_counts
            .iter()
            .map(|(gram, count)| (*count).min(*ref_counts.get(gram).unwrap_or(&0)))
            .sum();
        let precision = if clipped == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            clipped as f64 / total as f64
        };
        log_sum += precision.ln();
    }
    let (c, r) = (hyp.len() as f64, refr.len() as f64);
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    brevity * (log_sum / 4.0).exp()
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diagonal = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y {
                diagonal + 1
            } else {
                above.max(row[j])
            };
            diagonal = above;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 over whitespace tokens.
pub fn rouge_l(generated: &str, reference: &str) -> f64 {
    let hyp = words(generated);
    let refr = words(reference);
    if hyp.is_empty() && refr.is_empty() {
        return 1.0;
    }
    let lcs = lcs_len(&hyp, &refr);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / hyp.len() as f64;
    let r = lcs as f64 / refr.len() as f64;
    2.0 * p * r / (p + r)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// Greedy token matching in embedding space: F1 of the mean best cosine per
/// generated token and per reference token.
pub fn bert_style_score(
    generated: &str,
    reference: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, MetricsError> {
    let hyp = words(generated);
    let refr = words(reference);
    if hyp.is_empty() || refr.is_empty() {
        return Ok(if hyp.is_empty() && refr.is_empty() {
            1.0
        } else {
            0.0
        });
    }
    let embed_all = |tokens: &[&str]| -> Result<Vec<Vec<f64>>, GatewayError> {
        tokens
            .iter()
            .map(|t| provider.embed_one(t).map(|v| v.values))
            .collect()
    };
    let h = embed_all(&hyp)?;
    let r = embed_all(&refr)?;
    let best = |from: &[Vec<f64>], to: &[Vec<f64>]| -> f64 {
        from.iter()
            .map(|x| to.iter().map(|y| cosine(x, y)).fold(0.0, f64::max))
            .sum::<f64>()
            / from.len() as f64
    };
    let precision = best(&h, &r);
    let recall = best(&r, &h);
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Binary metrics with `true` as the positive class.
pub fn classification_metrics(
    predictions: &[bool],
    labels: &[bool],
) -> Result<ClassificationReport, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty("no predictions"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassificationReport {
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
        precision,
        recall,
        f1,
    })
}

/// Fleiss' kappa for an items-by-categories matrix of rater counts.
pub fn fleiss_kappa(ratings: &[Vec<u32>]) -> Result<f64, MetricsError> {
    let first = ratings
        .first()
        .ok_or(MetricsError::Empty("no rated items"))?;
    let raters: u32 = first.iter().sum();
    if raters < 2 {
        return Err(MetricsError::TooFewRaters);
    }
    let categories = first.len();
    let mut totals = vec![0.0; categories];
    let mut agreement = 0.0;
    for (item, row) in ratings.iter().enumerate() {
        let found: u32 = row.iter().sum();
        if found != raters || row.len() != categories {
            return Err(MetricsError::UnequalRaters {
                item,
                found,
                expected: raters,
            });
        }
        let n = f64::from(raters);
        let pairs: f64 = row
            .iter()
            .map(|&c| f64::from(c) * (f64::from(c) - 1.0))
            .sum();
        agreement += pairs / (n * (n - 1.0));
        for (total, &c) in totals.iter_mut().zip(row) {
            *total += f64::from(c);
        }
    }
    let items = ratings.len() as f64;
    let p_bar = agreement / items;
    let all = items * f64::from(raters);
    let p_e: f64 = totals.iter().map(|t| (t / all).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub count: usize,
    pub seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self { count: 20, seed: 0 }
    }
}

/// Absolute window endpoints reachable from t = 0 along each path of nested
/// temporal operators.
fn window_times(formula: &Formula, offsets: &BTreeSet<u64>, out: &mut BTreeSet<u64>) {
    let next = match formula.interval() {
        Some(interval) => {
            let mut next = BTreeSet::new();
            for &offset in offsets {
                for bound in [interval.lo(), interval.hi()] {
                    let t = f64::from_bits(offset) + bound;
                    next.insert(t.to_bits());
                    out.insert(t.to_bits());
                }
            }
            // Keep the set small for deeply nested formulas.
            while next.len() > 64 {
                let last = *next.iter().next_back().expect("non-empty");
                next.remove(&last);
            }
            next
        }
        None => offsets.clone(),
    };
    for child in formula.children() {
        window_times(child, &next, out);
    }
}

struct TraceSampler {
    variables: Vec<String>,
    thresholds: Vec<Vec<f64>>,
    horizon: f64,
    anchors: Vec<f64>,
    jitter: f64,
}

impl TraceSampler {
    fn new(formula: &Formula) -> Self {
        let variables: Vec<String> = formula.variables().into_iter().collect();
        let mut thresholds = vec![Vec::new(); variables.len()];
        for atom in formula.atoms() {
            let scale: f64 = atom
                .terms()
                .iter()
                .map(|t| t.coefficient.abs())
                .sum::<f64>()
                .max(f64::MIN_POSITIVE);
            for term in atom.terms() {
                let index = variables
                    .iter()
                    .position(|v| *v == term.variable)
                    .expect("variable collected");
                thresholds[index].push(atom.threshold() / scale * term.coefficient.signum());
            }
        }
        let depth = formula.temporal_depth();
        let horizon = depth + (0.1 * depth).max(1.0);
        let mut times = BTreeSet::new();
        window_times(formula, &BTreeSet::from([0.0f64.to_bits()]), &mut times);
        let anchors = times
            .into_iter()
            .map(f64::from_bits)
            .filter(|t| *t > 0.0 && *t < horizon)
            .collect();
        let min_width = formula
            .intervals()
            .iter()
            .map(|i| i.width())
            .fold(f64::INFINITY, f64::min);
        let jitter = if min_width.is_finite() {
            0.1 * min_width
        } else {
            0.1
        };
        Self {
            variables,
            thresholds,
            horizon,
            anchors,
            jitter,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Trace {
        let mut cuts: Vec<f64> = Vec::new();
        for &anchor in &self.anchors {
            if rng.random_bool(0.6) {
                cuts.push(anchor + rng.random_range(-self.jitter..=self.jitter));
            }
        }
        for _ in 0..rng.random_range(0..4) {
            cuts.push(rng.random_range(0.0..self.horizon));
        }
        cuts.retain(|t| *t > 0.0 && *t < self.horizon);
        cuts.push(0.0);
        cuts.push(self.horizon);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        let segments = cuts.len() - 1;
        // Per-trace bias toward values above the thresholds.
        let above = [0.05, 0.5, 0.95][rng.random_range(0..3)];
        let constant = rng.random_bool(0.25);
        let values = self
            .thresholds
            .iter()
            .map(|candidates| {
                let mut row = Vec::with_capacity(segments);
                for segment in 0..segments {
                    if constant && segment > 0 {
                        row.push(row[0]);
                        continue;
                    }
                    let threshold = candidates[rng.random_range(0..candidates.len())];
                    let delta = (0.1 * threshold.abs()).max(0.1);
                    let offset = delta * rng.random_range(0.5..2.0);
                    row.push(if rng.random_bool(above) {
                        threshold + offset
                    } else {
                        threshold - offset
                    });
                }
                row
            })
            .collect();
        Trace::new(self.variables.clone(), cuts, values).expect("sampled trace is well formed")
    }
}

/// Seeded random step traces for `reference`, containing at least one trace
/// that satisfies it at t = 0 and one that violates it.
pub fn generate_traces(
    reference: &Formula,
    config: TraceConfig,
) -> Result<Vec<Trace>, MetricsError> {
    if config.count < 2 {
        return Err(MetricsError::Config("count must be at least 2".into()));
    }
    let sampler = TraceSampler::new(reference);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let budget = 50 * config.count;
    let mut traces = Vec::new();
    let mut verdicts = Vec::new();
    let (mut satisfying, mut violating) = (0, 0);
    for _ in 0..budget {
        let trace = sampler.sample(&mut rng);
        let verdict = evaluate(reference, &trace, 0.0)?;
        if verdict {
            satisfying += 1;
        } else {
            violating += 1;
        }
        traces.push(trace);
        verdicts.push(verdict);
        if traces.len() >= config.count && satisfying > 0 && violating > 0 {
            break;
        }
    }
    if satisfying == 0 || violating == 0 || traces.len() < config.count {
        return Err(MetricsError::BudgetExhausted {
            attempts: traces.len(),
            satisfying,
            violating,
        });
    }
    let mut chosen: Vec<usize> = (0..config.count).collect();
    for wanted in [true, false] {
        if !chosen.iter().any(|&i| verdicts[i] == wanted) {
            let late = (config.count..traces.len())
                .find(|&i| verdicts[i] == wanted)
                .expect("verdict observed");
            *chosen.last_mut().expect("count >= 2") = late;
        }
    }
    Ok(chosen.into_iter().map(|i| traces[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedTrace {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub n_traces: usize,
    pub n_agree: usize,
    /// Percentage in `[0, 100]`.
    pub score: f64,
    /// `(reference verdict, generated verdict)` for each evaluated trace.
    pub per_trace: Vec<(bool, bool)>,
    pub excluded: Vec<ExcludedTrace>,
}

/// Percentage of traces on which `generated` and `reference` agree at t = 0.
/// Traces either formula cannot be evaluated on are excluded and listed.
pub fn semantic_robustness(
    generated: &str,
    reference: &str,
    traces: &[Trace],
) -> Result<RobustnessReport, MetricsError> {
    let reference = stl::parse(reference)?;
    let Ok(generated) = stl::parse(generated) else {
        return Ok(RobustnessReport {
            n_traces: traces.len(),
            n_agree: 0,
            score: 0.0,
            per_trace: Vec::new(),
            excluded: Vec::new(),
        });
    };
    let mut per_trace = Vec::new();
    let mut excluded = Vec::new();
    for (index, trace) in traces.iter().enumerate() {
        match (
            evaluate(&reference, trace, 0.0),
            evaluate(&generated, trace, 0.0),
        ) {
            (Ok(r), Ok(g)) => per_trace.push((r, g)),
            (Err(e), _) | (_, Err(e)) => excluded.push(ExcludedTrace {
                index,
                reason: e.to_string(),
            }),
        }
    }
    let n_agree = per_trace.iter().filter(|(r, g)| r == g).count();
    let n_traces = per_trace.len();
    let score = if n_traces == 0 {
        0.0
    } else {
        100.0 * n_agree as f64 / n_traces as f64
    };
    Ok(RobustnessReport {
        n_traces,
        n_agree,
        score,
        per_trace,
        excluded,
    })
}
