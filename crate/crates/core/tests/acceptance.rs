//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clarifystl::clarification::{
    run_session, shared_detector, EventKind, Phase, Pipeline, Requirement, ScriptedAnswers,
};
use clarifystl::dataset::{
    build_dataset, validate_nl, DefectType, Label, MutationPlan, PhraseLexicon,
};
use clarifystl::detection::{
    mean_triplet_loss, rule_detect_vagueness, train_on_embeddings, AmbiguityModel, DetectionError,
    DetectionResult, Detector, Dims, NeverDefective, TrainConfig,
};
use clarifystl::gateway::{load_fixture, EmbeddingVector, ScriptedBackend, ScriptedFixture};
use clarifystl::metrics::{
    bleu, fleiss_kappa, formula_accuracy, generate_traces, rouge_l, semantic_robustness,
    template_accuracy, MetricsError, TraceConfig,
};
use clarifystl::stl::{evaluate, parse, render, tokenize, Formula};
use common::{grid_sat, random_formula, random_trace, rng, Shape};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(limit: Option<Duration>, run: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut result = run();
    let elapsed = start.elapsed();
    result.detail = format!("{} ({:.2}s)", result.detail, elapsed.as_secs_f64());
    if let Some(limit) = limit {
        if elapsed > limit {
            result.pass = false;
            result
                .detail
                .push_str(&format!(", over the {}s limit", limit.as_secs()));
        }
    }
    result
}

fn round_trip() -> Outcome {
    let mut rng = rng(1);
    let mut failures = Vec::new();
    for i in 0..1000 {
        let f = random_formula(
            &mut rng,
            Shape {
                depth: 4,
                variables: 5,
                grid: None,
            },
        );
        assert!(f.depth() <= 4);
        match parse(&render(&f)) {
            Ok(g) if g == f => {}
            other => failures.push(format!("#{i} {} -> {other:?}", render(&f))),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "1000 formulas, {} mismatches{}",
            failures.len(),
            first(&failures)
        ),
    )
}

fn semantics_oracle() -> Outcome {
    let mut rng = rng(2);
    let mut checks = 0;
    let mut failures = Vec::new();
    for i in 0..1000 {
        let variables = rng.random_range(1..=3);
        let f = random_formula(
            &mut rng,
            Shape {
                depth: 3,
                variables,
                grid: Some(6),
            },
        );
        let depth = f.temporal_depth();
        let horizon = depth + rng.random_range(1..=6) as f64;
        let trace = random_trace(&mut rng, variables, 6, horizon, true);
        let mut t = 0.0;
        while t + depth <= horizon {
            checks += 1;
            let exact = evaluate(&f, &trace, t);
            let oracle = grid_sat(&f, &trace, t, 0.5);
            if exact.as_ref().ok() != Some(&oracle) {
                failures.push(format!("#{i} t={t} {}: {exact:?} vs {oracle}", render(&f)));
            }
            t += 0.5;
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "1000 instances, {checks} time points, {} mismatches{}",
            failures.len(),
            first(&failures)
        ),
    )
}

fn sugar_laws() -> Outcome {
    let mut rng = rng(3);
    let mut failures = 0;
    for _ in 0..500 {
        let shape = Shape {
            depth: 2,
            variables: 3,
            grid: None,
        };
        let a = random_formula(&mut rng, shape);
        let b = random_formula(&mut rng, shape);
        let i = common::random_interval(&mut rng, shape);
        let laws: [(Formula, Formula); 4] = [
            (
                Formula::eventually(i, a.clone()),
                Formula::until(i, Formula::True, a.clone()),
            ),
            (
                Formula::globally(i, a.clone()),
                Formula::not(Formula::eventually(i, Formula::not(a.clone()))),
            ),
            (
                Formula::or(a.clone(), b.clone()),
                Formula::not(Formula::and(
                    Formula::not(a.clone()),
                    Formula::not(b.clone()),
                )),
            ),
            (
                Formula::implies(a.clone(), b.clone()),
                Formula::or(Formula::not(a.clone()), b.clone()),
            ),
        ];
        let depth = laws
            .iter()
            .map(|(l, _)| l.temporal_depth())
            .fold(0.0, f64::max);
        let horizon = depth + rng.random_range(0.5..20.0);
        let trace = random_trace(&mut rng, 3, 8, horizon, false);
        let t = rng.random_range(0.0..=(trace.horizon() - depth));
        for (lhs, rhs) in &laws {
            let (l, r) = (evaluate(lhs, &trace, t), evaluate(rhs, &trace, t));
            if l.is_err() || l != r {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("500 pairs x 4 laws, {failures} violations"),
    )
}

/// Modified n-gram precision, counted by brute force.
fn oracle_bleu(generated: &[&str], reference: &[&str]) -> f64 {
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let grams = |tokens: &[&str]| {
            let mut counts: HashMap<Vec<String>, usize> = HashMap::new();
            for w in tokens.windows(n) {
                *counts
                    .entry(w.iter().map(|s| s.to_string()).collect())
                    .or_default() += 1;
            }
            counts
        };
        let (g, r) = (grams(generated), grams(reference));
        let total: usize = g.values().sum();
        let clipped: usize = g
            .iter()
            .map(|(k, c)| (*c).min(*r.get(k).unwrap_or(&0)))
            .sum();
        let p = if clipped == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln() / 4.0;
    }
    let bp = if generated.len() >= reference.len() {
        1.0
    } else {
        (1.0 - reference.len() as f64 / generated.len() as f64).exp()
    };
    bp * log_sum.exp()
}

/// Fleiss' kappa from the textbook definition.
fn oracle_kappa(table: &[[f64; 2]]) -> f64 {
    let raters: f64 = table[0].iter().sum();
    let items = table.len() as f64;
    let p_bar = table
        .iter()
        .map(|row| (row.iter().map(|c| c * c).sum::<f64>() - raters) / (raters * (raters - 1.0)))
        .sum::<f64>()
        / items;
    let pe: f64 = (0..2)
        .map(|j| {
            let pj = table.iter().map(|row| row[j]).sum::<f64>() / (items * raters);
            pj * pj
        })
        .sum();
    (p_bar - pe) / (1.0 - pe)
}

fn metric_fixtures() -> Outcome {
    let tol = 1e-9;
    let mut bad = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > tol {
            bad.push(format!("{name}: {got} vs {want}"));
        }
    };
    // G [ 0 , 5 ] ( x > 1 ): eleven tokens, the threshold differs.
    check(
        "formula accuracy",
        formula_accuracy("G[0,5](x > 2)", "G[0,5](x > 1)").unwrap(),
        10.0 / 11.0,
    );
    check(
        "formula accuracy identity",
        formula_accuracy("G[0,5](x > 1)", "G[0,5](x > 1)").unwrap(),
        1.0,
    );
    check(
        "formula accuracy unparseable",
        formula_accuracy("G[0,5](x >", "G[0,5](x > 1)").unwrap(),
        0.0,
    );
    check(
        "template accuracy renamed",
        template_accuracy("G[0,5](x > 2)", "G[0,9](y > 7)").unwrap(),
        1.0,
    );
    check(
        "template accuracy operator",
        template_accuracy("F[0,5](x > 2)", "G[0,9](y > 7)").unwrap(),
        10.0 / 11.0,
    );
    let hand_bleu = (0.75f64 * (2.0 / 3.0) * 0.5 * 0.5).powf(0.25);
    check(
        "bleu oracle",
        oracle_bleu(&["a", "b", "c", "d"], &["a", "b", "c", "e"]),
        hand_bleu,
    );
    check("bleu", bleu("a b c d", "a b c e"), hand_bleu);
    let (p, r) = (1.0, 2.0 / 3.0);
    check(
        "rouge-l",
        rouge_l("what value", "what specific value"),
        2.0 * p * r / (p + r),
    );
    check(
        "rouge-l value",
        rouge_l("what value", "what specific value"),
        0.8,
    );
    let hand_kappa = oracle_kappa(&[[2.0, 1.0], [1.0, 2.0]]);
    check("kappa oracle", hand_kappa, -1.0 / 3.0);
    check(
        "kappa",
        fleiss_kappa(&[vec![2, 1], vec![1, 2]]).unwrap(),
        hand_kappa,
    );
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "all fixtures within 1e-9".to_string()
        } else {
            bad.join("; ")
        },
    )
}

/// Formulas the generator cannot split into satisfying and violating traces
/// (valid or unsatisfiable over step traces) are reported and replaced by
/// the next draw.
fn robustness_totality() -> Outcome {
    let mut rng = rng(5);
    let mut problems = Vec::new();
    let mut skipped = Vec::new();
    let mut checked = 0;
    let mut seed = 0;
    while checked < 50 {
        seed += 1;
        let f = random_formula(
            &mut rng,
            Shape {
                depth: 3,
                variables: 3,
                grid: None,
            },
        );
        let text = render(&f);
        let traces = match generate_traces(&f, TraceConfig { count: 20, seed }) {
            Ok(t) => t,
            Err(MetricsError::BudgetExhausted {
                satisfying,
                violating,
                ..
            }) if satisfying == 0 || violating == 0 => {
                skipped.push(text);
                continue;
            }
            Err(e) => {
                problems.push(format!("{text}: {e}"));
                checked += 1;
                continue;
            }
        };
        checked += 1;
        let negated = render(&Formula::not(f.clone()));
        let same = semantic_robustness(&text, &text, &traces).unwrap();
        let opposite = semantic_robustness(&negated, &text, &traces).unwrap();
        if same.score != 100.0
            || opposite.score != 0.0
            || same.n_traces != 20
            || opposite.n_traces != 20
        {
            problems.push(format!("{text}: {} / {}", same.score, opposite.score));
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "50 formulas x 20 traces, {} problems{}; {} one-verdict draws replaced",
            problems.len(),
            first(&problems),
            skipped.len()
        ),
    )
}

fn triplet_classifier() -> Outcome {
    let to_samples = |raw: Vec<(Vec<f64>, bool)>| -> Vec<(EmbeddingVector, bool)> {
        raw.into_iter()
            .map(|(v, y)| (EmbeddingVector::new(v).unwrap(), y))
            .collect()
    };
    let train = to_samples(common::two_clusters(400, 32, 5.0, 11));
    let test = to_samples(common::two_clusters(100, 32, 5.0, 12));
    let config = TrainConfig {
        epochs: 30,
        batch: 16,
        lr: 2e-3,
        seed: 7,
        ..TrainConfig::default()
    };
    let (model, log) = train_on_embeddings(&train, &config).unwrap();
    let (again, log_again) = train_on_embeddings(&train, &config).unwrap();
    let reproducible = model.to_bytes() == again.to_bytes() && log == log_again;
    let untrained = AmbiguityModel::new(Dims::scaled(32), config.margin, config.seed);
    let initial = mean_triplet_loss(&untrained, &train, config.dropout, 99).unwrap();
    let last = mean_triplet_loss(&model, &train, config.dropout, 99).unwrap();
    let correct = test
        .iter()
        .filter(|(x, y)| model.classify_embedding(x).unwrap().is_defective == *y)
        .count();
    let accuracy = correct as f64 / test.len() as f64;
    outcome(
        accuracy >= 0.95 && last <= 0.1 * initial && reproducible,
        format!(
            "held-out accuracy {accuracy:.3}, triplet loss {initial:.4} -> {last:.4} (ratio {:.3}; epoch log {:.4} -> {:.4}), reproducible {reproducible}",
            last / initial,
            log.epochs[0].triplet,
            log.epochs.last().unwrap().triplet
        ),
    )
}

fn mutation_validity() -> Outcome {
    let corpus = common::clean_corpus(60, 21);
    let plan = MutationPlan::new(4)
        .with(DefectType::Temporal, 50)
        .with(DefectType::Numerical, 50)
        .with(DefectType::ConditionalLogic, 50)
        .with(DefectType::Referential, 50);
    let lexicon = PhraseLexicon::default();
    let (records, report) = build_dataset(&corpus, &plan, &lexicon, None).unwrap();
    let ids: BTreeSet<&str> = corpus.iter().map(|r| r.id.as_str()).collect();
    let mutants: Vec<_> = records.iter().filter(|r| r.parent_id.is_some()).collect();
    let mut invalid = 0;
    let mut mislabelled = 0;
    let mut undetected = 0;
    for m in &mutants {
        if !validate_nl(&m.nl).ok {
            invalid += 1;
        }
        let defect = *m.defect_types.iter().next().unwrap();
        let label_ok = m.defect_types.len() == 1
            && m.label
                == if defect.is_vagueness() {
                    Label::Vague
                } else {
                    Label::Ambiguous
                }
            && ids.contains(m.parent_id.as_deref().unwrap())
            && m.id == format!("{}.{}", m.parent_id.as_deref().unwrap(), defect.code())
            && corpus
                .iter()
                .any(|c| Some(&c.id) == m.parent_id.as_ref() && c.stl == m.stl);
        if !label_ok {
            mislabelled += 1;
        }
        if defect.is_vagueness()
            && !rule_detect_vagueness(&m.nl, &lexicon)
                .types
                .contains(&defect)
        {
            undetected += 1;
        }
    }
    outcome(
        mutants.len() == 200 && invalid == 0 && mislabelled == 0 && undetected == 0 && !report.partial,
        format!(
            "{} mutants; {invalid} invalid, {mislabelled} mislabelled, {undetected} missed by the rule detector",
            mutants.len()
        ),
    )
}

const RUNNING_EXAMPLE: &str =
    "During 10-150 seconds, if signal x1 exceeds 0.2, then signal x2 will decrease for the next 30 seconds";

fn scripted(fixture: ScriptedFixture) -> clarifystl::clarification::BackendFactory {
    Arc::new(move || Arc::new(ScriptedBackend::new(fixture.clone())))
}

fn running_example() -> Outcome {
    let fixture = load_fixture(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/running_example.fixture"
    ))
    .unwrap();
    let pipeline = Pipeline::new(scripted(fixture));
    let mut answers = ScriptedAnswers::new(["0.5", "the first time"]);
    let result = run_session(
        &pipeline,
        Requirement::new("running_example", RUNNING_EXAMPLE),
        &mut answers,
    );
    let expected = tokenize("F[10,150](x1 > 0.2) -> G[0,30](x2 < 0.5)").unwrap();
    let got = result.formula.as_ref().map(render).unwrap_or_default();
    let equal = result
        .formula
        .as_ref()
        .is_some_and(|f| tokenize(&render(f)).unwrap() == expected);
    let rounds = result.requirement.revisions.len();
    outcome(
        result.state.phase == Phase::Done && rounds == 2 && equal,
        format!(
            "{:?}, {rounds} rounds, final `{got}`, scripted backend only",
            result.state.phase
        ),
    )
}

struct AlwaysAmbiguous;

impl Detector for AlwaysAmbiguous {
    fn detect(&self, _: &str) -> Result<DetectionResult, DetectionError> {
        Ok(DetectionResult::defective([DefectType::Semantic], 1.0))
    }
}

fn no_ambiguity_sanity() -> Outcome {
    let corpus = common::clean_corpus(20, 33);
    let mut queries = 0;
    let mut analysis_calls = 0;
    let mut not_done = 0;
    for record in &corpus {
        let mut fixture = ScriptedFixture::new();
        for round in 0..3 {
            fixture.push("sample_candidates", round, record.stl.clone());
        }
        fixture.push("transform", 0, record.stl.clone());
        let pipeline = Pipeline::new(scripted(fixture))
            .with_vagueness(shared_detector(Arc::new(NeverDefective)))
            .with_ambiguity(shared_detector(Arc::new(AlwaysAmbiguous)));
        let result = run_session(
            &pipeline,
            Requirement::new(&record.id, &record.nl),
            &mut ScriptedAnswers::default(),
        );
        queries += result
            .transcript
            .iter()
            .filter(|e| e.kind == EventKind::Query)
            .count();
        analysis_calls += result
            .transcript
            .iter()
            .filter(|e| e.kind == EventKind::Prompt && e.payload["tag"] == "analyze_discrepancies")
            .count();
        if result.state.phase != Phase::Done {
            not_done += 1;
        }
    }
    outcome(
        queries == 0 && analysis_calls == 0 && not_done == 0,
        format!("20 requirements: {queries} queries, {analysis_calls} analysis calls, {not_done} not done"),
    )
}

fn main() {
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        (
            "round-trip",
            Box::new(|| timed(Some(Duration::from_secs(5)), round_trip)),
        ),
        (
            "semantics oracle",
            Box::new(|| timed(Some(Duration::from_secs(30)), semantics_oracle)),
        ),
        (
            "duality and sugar laws",
            Box::new(|| timed(None, sugar_laws)),
        ),
        ("metric fixtures", Box::new(|| timed(None, metric_fixtures))),
        (
            "semantic robustness totality",
            Box::new(|| timed(Some(Duration::from_secs(60)), robustness_totality)),
        ),
        (
            "triplet classifier",
            Box::new(|| timed(Some(Duration::from_secs(60)), triplet_classifier)),
        ),
        (
            "mutation validity",
            Box::new(|| timed(None, mutation_validity)),
        ),
        (
            "running example end-to-end",
            Box::new(|| timed(None, running_example)),
        ),
        (
            "no-ambiguity sanity",
            Box::new(|| timed(None, no_ambiguity_sanity)),
        ),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let result = run();
        println!(
            "{} {name}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
        if !result.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

/// First failure for the report line, empty when there is none.
fn first<T: std::fmt::Debug>(items: &[T]) -> String {
    items.first().map(|x| format!(", first {x:?}")).unwrap_or_default()
}
