//! Command-line front end. [`run`] parses arguments, dispatches to the core
//! library and returns the process exit code: 0 success, 1 domain error,
//! 2 usage error.

pub mod server;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use clarifystl::clarification::{
    prompt_detector, rule_detector, run_session, shared_detector, AnswerSource, BackendFactory,
    ClarificationQuery, DetectorFactory, Phase, Pipeline, Requirement, ScriptedAnswers,
    SessionConfig,
};
use clarifystl::dataset::{
    build_dataset, parse_lines, read_lines, to_lines, write_lines, DatasetRecord, DefectType,
    Label, MutationMode, MutationPlan, PhraseLexicon,
};
use clarifystl::detection::{
    rule_detect_vagueness, AmbiguityModel, DefectFamily, DetectionResult, Detector, ModelDetector,
    PromptDetector, TrainConfig,
};
use clarifystl::gateway::{
    load_fixture, CompletionBackend, HashEmbeddingProvider, RemoteBackend, ScriptedBackend,
    ScriptedFixture, DEFAULT_EMBEDDING_DIM,
};
use clarifystl::metrics::{
    bert_style_score, bleu, classification_metrics, formula_accuracy, generate_traces, rouge_l,
    semantic_robustness, template_accuracy, TraceConfig,
};
use clarifystl::stl::{
    self, check_syntax, evaluate, extract_template, render, tokenize_formula, Trace,
};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "clarifystl",
    version,
    about = "Clarify natural-language requirements into STL formulas"
)]
struct Cli {
    /// Output style: human-readable text or one JSON object per line.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Lines,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Args, Clone)]
struct BackendOpts {
    /// Completion backend. `remote` reads CLARIFYSTL_API_KEY and CLARIFYSTL_BASE_URL.
    #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
    backend: BackendKind,
    /// Scripted replies, one {tag, round, reply} object per line.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Model id sent to the remote backend.
    #[arg(long)]
    model_id: Option<String>,
}

#[derive(Args, Clone)]
struct PipelineOpts {
    #[command(flatten)]
    backend: BackendOpts,
    /// Phrase lexicon with `[section]` headers.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Trained ambiguity classifier; the prompt detector is used otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Iteration cap per clarification phase.
    #[arg(long, default_value_t = 10)]
    max_iterations: u32,
    /// Candidate formulas sampled per ambiguity round.
    #[arg(long, default_value_t = 3)]
    candidates: usize,
    /// Back-translate candidates with the backend instead of the template.
    #[arg(long)]
    llm_back_translation: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print the canonical rendering of a formula.
    Parse { formula: String },
    /// Report syntax diagnostics.
    Check { formula: String },
    /// Evaluate a formula on each trace of a trace file.
    Monitor {
        formula: String,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        time: f64,
    },
    /// Print the signal/number-abstracted template of a formula.
    Template { formula: String },
    /// Build a defect dataset from clean records.
    Mutate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Mutants per defect type.
        #[arg(long, default_value_t = 1)]
        per_type: usize,
        /// Defect types to inject, e.g. `T,N,C,R`.
        #[arg(long, value_delimiter = ',', default_values_t = [DefectType::Temporal, DefectType::Numerical, DefectType::ConditionalLogic, DefectType::Referential])]
        types: Vec<DefectType>,
        /// Extra mutants with several vagueness types.
        #[arg(long, default_value_t = 0)]
        stacked: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Completion backend for semantic rewrites; rule-only without it.
        #[arg(long)]
        llm: bool,
        #[command(flatten)]
        backend: BackendOpts,
    },
    /// Train the ambiguity classifier on clean and ambiguous records.
    TrainAmbiguity {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 5e-5)]
        lr: f64,
        #[arg(long, default_value_t = 1.0)]
        margin: f64,
        /// Embedding dimension of the hash provider.
        #[arg(long, default_value_t = DEFAULT_EMBEDDING_DIM)]
        dim: usize,
    },
    /// Run the vagueness and ambiguity detectors.
    Detect {
        texts: Vec<String>,
        /// Dataset file; every record's text is checked.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Ask the completion backend about ambiguity when no model is given.
        #[arg(long)]
        prompt: bool,
        #[command(flatten)]
        backend: BackendOpts,
    },
    /// Score predictions against references.
    Evaluate {
        /// Dataset file whose records carry a `prediction` field.
        #[arg(long)]
        input: PathBuf,
        /// Traces per reference for semantic robustness.
        #[arg(long, default_value_t = 20)]
        traces: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Clarify one requirement and print its formula.
    Clarify {
        requirement: String,
        /// Scripted answers, one per line; the terminal is asked otherwise.
        #[arg(long)]
        answers: Option<PathBuf>,
        /// Write the session transcript, one event per line.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineOpts,
    },
    /// Host the session HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        pipeline: PipelineOpts,
    },
}

enum Failure {
    Domain(String),
    Usage(String),
}

type Outcome = Result<(), Failure>;

fn domain(e: impl ToString) -> Failure {
    Failure::Domain(e.to_string())
}

/// Standard streams handed to a command.
pub struct Streams<'a> {
    pub input: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, streams: Streams<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let mut text = e.render().to_string();
            return if e.use_stderr() {
                if !text.contains("Usage:") {
                    text.push_str(&format!("\n{}\n", Cli::command().render_usage()));
                }
                let _ = write!(streams.err, "{text}");
                2
            } else {
                let _ = write!(streams.out, "{text}");
                0
            };
        }
    };
    let Streams { input, out, err } = streams;
    match dispatch(cli, input, out, err) {
        Ok(()) => 0,
        Err(Failure::Domain(message)) => {
            let _ = writeln!(err, "error: {message}");
            1
        }
        Err(Failure::Usage(message)) => {
            let _ = writeln!(err, "usage error: {message}");
            2
        }
    }
}

fn dispatch(
    cli: Cli,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Outcome {
    let format = cli.format;
    match cli.command {
        Command::Parse { formula } => cmd_parse(&formula, format, out),
        Command::Check { formula } => cmd_check(&formula, format, out),
        Command::Monitor {
            formula,
            trace,
            time,
        } => cmd_monitor(&formula, &trace, time, format, out),
        Command::Template { formula } => cmd_template(&formula, format, out),
        Command::Mutate {
            input,
            output,
            per_type,
            types,
            stacked,
            seed,
            lexicon,
            llm,
            backend,
        } => {
            let mut plan = MutationPlan::new(seed);
            for t in types {
                plan = plan.with(t, per_type);
            }
            plan.stacked = stacked;
            plan.mode = if llm {
                MutationMode::LlmAssisted
            } else {
                MutationMode::RuleOnly
            };
            let backend = if llm {
                Some(single_backend(&backend)?)
            } else {
                None
            };
            cmd_mutate(
                &input,
                output.as_deref(),
                &plan,
                lexicon.as_deref(),
                backend,
                format,
                out,
                err,
            )
        }
        Command::TrainAmbiguity {
            input,
            output,
            seed,
            epochs,
            batch,
            lr,
            margin,
            dim,
        } => {
            let config = TrainConfig {
                epochs,
                batch,
                lr,
                margin,
                seed,
                ..TrainConfig::default()
            };
            cmd_train(&input, &output, &config, dim, format, out)
        }
        Command::Detect {
            texts,
            input,
            lexicon,
            model,
            prompt,
            backend,
        } => {
            let mut texts = texts;
            if let Some(path) = input {
                let records: Vec<DatasetRecord> = read_lines(&path).map_err(domain)?;
                texts.extend(records.into_iter().map(|r| r.nl));
            }
            if texts.is_empty() {
                return Err(Failure::Usage("give at least one text or --input".into()));
            }
            let lexicon = load_lexicon(lexicon.as_deref())?;
            let ambiguity: Option<Box<dyn Detector>> = match (model, prompt) {
                (Some(path), _) => Some(Box::new(model_detector(&path)?)),
                (None, true) => {
                    let backend = single_backend(&backend)?;
                    Some(Box::new(PromptDetector::new(
                        backend,
                        DefectFamily::Ambiguity,
                    )))
                }
                (None, false) => None,
            };
            cmd_detect(&texts, &lexicon, ambiguity.as_deref(), format, out)
        }
        Command::Evaluate {
            input,
            traces,
            seed,
        } => cmd_evaluate(
            &input,
            TraceConfig {
                count: traces,
                seed,
            },
            format,
            out,
        ),
        Command::Clarify {
            requirement,
            answers,
            transcript,
            pipeline,
        } => {
            let pipeline = build_pipeline(&pipeline)?;
            cmd_clarify(
                &pipeline,
                &requirement,
                answers.as_deref(),
                transcript.as_deref(),
                format,
                input,
                out,
                err,
            )
        }
        Command::Serve {
            port,
            host,
            pipeline,
        } => {
            let pipeline = build_pipeline(&pipeline)?;
            serve(pipeline, &host, port, err)
        }
    }
}

fn emit(out: &mut dyn Write, line: impl std::fmt::Display) -> Outcome {
    writeln!(out, "{line}").map_err(domain)
}

fn emit_json(out: &mut dyn Write, value: &impl Serialize) -> Outcome {
    emit(out, serde_json::to_string(value).map_err(domain)?)
}

fn parse_formula(text: &str) -> Result<stl::Formula, Failure> {
    stl::parse(text).map_err(domain)
}

fn cmd_parse(text: &str, format: Format, out: &mut dyn Write) -> Outcome {
    let formula = parse_formula(text)?;
    match format {
        Format::Text => emit(out, render(&formula)),
        Format::Lines => emit_json(
            out,
            &json!({ "formula": render(&formula), "variables": formula.variables(), "depth": formula.depth() }),
        ),
    }
}

fn cmd_check(text: &str, format: Format, out: &mut dyn Write) -> Outcome {
    let diagnostics = check_syntax(text);
    match format {
        Format::Text if diagnostics.is_empty() => emit(out, "ok")?,
        Format::Text => {
            for d in &diagnostics {
                emit(out, d)?;
            }
        }
        Format::Lines => emit_json(
            out,
            &json!({ "ok": diagnostics.is_empty(), "diagnostics": diagnostics }),
        )?,
    }
    if diagnostics.is_empty() {
        Ok(())
    } else {
        Err(Failure::Domain(format!(
            "{} syntax error(s)",
            diagnostics.len()
        )))
    }
}

fn cmd_monitor(text: &str, path: &Path, time: f64, format: Format, out: &mut dyn Write) -> Outcome {
    let formula = parse_formula(text)?;
    let traces: Vec<Trace> = read_lines(path).map_err(domain)?;
    for (index, trace) in traces.iter().enumerate() {
        let verdict =
            evaluate(&formula, trace, time).map_err(|e| domain(format!("trace {index}: {e}")))?;
        match format {
            Format::Text => emit(out, verdict)?,
            Format::Lines => emit_json(
                out,
                &json!({ "trace": index, "time": time, "satisfied": verdict }),
            )?,
        }
    }
    Ok(())
}

fn cmd_template(text: &str, format: Format, out: &mut dyn Write) -> Outcome {
    let formula = parse_formula(text)?;
    let template = extract_template(&formula);
    match format {
        Format::Text => emit(out, &template),
        Format::Lines => emit_json(
            out,
            &json!({
                "template": template.to_string(),
                "tokens": template.tokens().iter().map(|t| t.text.clone()).collect::<Vec<_>>(),
                "formula_tokens": tokenize_formula(&formula).len(),
            }),
        ),
    }
}

fn load_lexicon(path: Option<&Path>) -> Result<PhraseLexicon, Failure> {
    match path {
        Some(path) => PhraseLexicon::load(path).map_err(domain),
        None => Ok(PhraseLexicon::default()),
    }
}

/// One backend instance, for commands that are not sessions.
fn single_backend(opts: &BackendOpts) -> Result<Arc<dyn CompletionBackend>, Failure> {
    Ok((backend_factory(opts)?)())
}

fn backend_factory(opts: &BackendOpts) -> Result<BackendFactory, Failure> {
    match opts.backend {
        BackendKind::Scripted => {
            let fixture = match &opts.fixture {
                Some(path) => load_fixture(path).map_err(domain)?,
                None => ScriptedFixture::new(),
            };
            Ok(Arc::new(move || {
                Arc::new(ScriptedBackend::new(fixture.clone())) as Arc<dyn CompletionBackend>
            }))
        }
        BackendKind::Remote => {
            if opts.fixture.is_some() {
                return Err(Failure::Usage(
                    "--fixture applies only to --backend scripted".into(),
                ));
            }
            let shared: Arc<dyn CompletionBackend> =
                Arc::new(RemoteBackend::from_env().map_err(domain)?);
            Ok(Arc::new(move || shared.clone()))
        }
    }
}

fn model_detector(path: &Path) -> Result<ModelDetector, Failure> {
    let model = AmbiguityModel::load(path).map_err(domain)?;
    let provider = Arc::new(HashEmbeddingProvider::new(model.dims().input));
    Ok(ModelDetector { model, provider })
}

fn build_pipeline(opts: &PipelineOpts) -> Result<Pipeline, Failure> {
    let lexicon = load_lexicon(opts.lexicon.as_deref())?;
    let ambiguity: DetectorFactory = match &opts.model {
        Some(path) => shared_detector(Arc::new(model_detector(path)?)),
        None => prompt_detector(DefectFamily::Ambiguity),
    };
    let config = SessionConfig {
        max_iterations_per_phase: opts.max_iterations,
        candidate_n: opts.candidates,
        llm_back_translation: opts.llm_back_translation,
        model_id: opts.backend.model_id.clone(),
        ..SessionConfig::default()
    };
    Ok(Pipeline::new(backend_factory(&opts.backend)?)
        .with_vagueness(rule_detector(lexicon))
        .with_ambiguity(ambiguity)
        .with_config(config))
}

#[allow(clippy::too_many_arguments)]
fn cmd_mutate(
    input: &Path,
    output: Option<&Path>,
    plan: &MutationPlan,
    lexicon: Option<&Path>,
    backend: Option<Arc<dyn CompletionBackend>>,
    format: Format,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Outcome {
    let corpus: Vec<DatasetRecord> = read_lines(input).map_err(domain)?;
    let lexicon = load_lexicon(lexicon)?;
    let (records, report) =
        build_dataset(&corpus, plan, &lexicon, backend.as_deref()).map_err(domain)?;
    match output {
        Some(path) => write_lines(path, &records).map_err(domain)?,
        None => write!(out, "{}", to_lines(&records)).map_err(domain)?,
    }
    match format {
        Format::Lines => {
            writeln!(err, "{}", serde_json::to_string(&report).map_err(domain)?).map_err(domain)?
        }
        Format::Text => {
            writeln!(
                err,
                "{} originals, {} mutants",
                report.originals, report.mutants
            )
            .map_err(domain)?;
            for (defect, r) in &report.per_type {
                writeln!(
                    err,
                    "{defect}: {} of {} applied, {} skipped, {} rejected",
                    r.applied, r.requested, r.skipped, r.rejected
                )
                .map_err(domain)?;
            }
            if report.partial {
                writeln!(err, "warning: some types fell short of the requested count")
                    .map_err(domain)?;
            }
        }
    }
    Ok(())
}

fn cmd_train(
    input: &Path,
    output: &Path,
    config: &TrainConfig,
    dim: usize,
    format: Format,
    out: &mut dyn Write,
) -> Outcome {
    let records: Vec<DatasetRecord> = read_lines(input).map_err(domain)?;
    let samples: Vec<(String, bool)> = records
        .into_iter()
        .filter_map(|r| match r.label {
            Label::Clean => Some((r.nl, false)),
            Label::Ambiguous => Some((r.nl, true)),
            Label::Vague => None,
        })
        .collect();
    let provider = HashEmbeddingProvider::new(dim);
    let (model, log) = clarifystl::detection::train_ambiguity_model(&samples, &provider, config)
        .map_err(domain)?;
    model.save(output).map_err(domain)?;
    for epoch in &log.epochs {
        match format {
            Format::Text => emit(
                out,
                format!(
                    "epoch {}: triplet {:.6} cross-entropy {:.6} total {:.6}",
                    epoch.epoch, epoch.triplet, epoch.cross_entropy, epoch.total
                ),
            )?,
            Format::Lines => emit_json(out, epoch)?,
        }
    }
    Ok(())
}

fn describe(result: &DetectionResult) -> String {
    if !result.is_defective {
        return "clean".into();
    }
    let types: Vec<String> = result.types.iter().map(ToString::to_string).collect();
    match &result.rationale {
        Some(r) => format!("{} ({r})", types.join(", ")),
        None => types.join(", "),
    }
}

fn cmd_detect(
    texts: &[String],
    lexicon: &PhraseLexicon,
    ambiguity: Option<&dyn Detector>,
    format: Format,
    out: &mut dyn Write,
) -> Outcome {
    for text in texts {
        let vagueness = rule_detect_vagueness(text, lexicon);
        let ambiguity = ambiguity
            .map(|d| d.detect(text))
            .transpose()
            .map_err(domain)?;
        match format {
            Format::Text => {
                emit(out, text)?;
                emit(out, format!("  vagueness: {}", describe(&vagueness)))?;
                if let Some(a) = &ambiguity {
                    emit(out, format!("  ambiguity: {}", describe(a)))?;
                }
            }
            Format::Lines => emit_json(
                out,
                &json!({ "text": text, "vagueness": vagueness, "ambiguity": ambiguity }),
            )?,
        }
    }
    Ok(())
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn cmd_evaluate(input: &Path, traces: TraceConfig, format: Format, out: &mut dyn Write) -> Outcome {
    let text =
        fs::read_to_string(input).map_err(|e| domain(format!("{}: {e}", input.display())))?;
    let records: Vec<DatasetRecord> = parse_lines(&text).map_err(domain)?;
    if records.is_empty() {
        return Err(domain("no records"));
    }
    let provider = HashEmbeddingProvider::new(DEFAULT_EMBEDDING_DIM);
    let mut columns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut flags: Vec<(bool, bool)> = Vec::new();
    for record in &records {
        let prediction = record
            .extra
            .get("prediction")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                domain(format!(
                    "record {} has no string `prediction` field",
                    record.id
                ))
            })?;
        let reference = &record.stl;
        let mut row = BTreeMap::new();
        row.insert(
            "formula_accuracy",
            formula_accuracy(prediction, reference).map_err(domain)?,
        );
        row.insert(
            "template_accuracy",
            template_accuracy(prediction, reference).map_err(domain)?,
        );
        row.insert("bleu", bleu(prediction, reference));
        row.insert("rouge_l", rouge_l(prediction, reference));
        row.insert(
            "bert_score",
            bert_style_score(prediction, reference, &provider).map_err(domain)?,
        );
        let formula = parse_formula(reference)?;
        let robustness = generate_traces(&formula, traces)
            .ok()
            .and_then(|t| semantic_robustness(prediction, reference, &t).ok())
            .filter(|r| r.n_traces > r.excluded.len());
        if let Some(r) = &robustness {
            row.insert("semantic_robustness", r.score);
        }
        if let Some(flag) = record
            .extra
            .get("predicted_defective")
            .and_then(Value::as_bool)
        {
            flags.push((flag, record.label != Label::Clean));
        }
        for (name, value) in &row {
            columns.entry(name).or_default().push(*value);
        }
        if format == Format::Lines {
            emit_json(out, &json!({ "id": record.id, "metrics": row }))?;
        }
    }
    let mut summary: BTreeMap<String, f64> = columns
        .iter()
        .filter_map(|(name, values)| mean(values).map(|m| (name.to_string(), m)))
        .collect();
    if !flags.is_empty() {
        let (predictions, labels): (Vec<bool>, Vec<bool>) = flags.into_iter().unzip();
        let report = classification_metrics(&predictions, &labels).map_err(domain)?;
        for (name, value) in [
            ("accuracy", report.accuracy),
            ("precision", report.precision),
            ("recall", report.recall),
            ("f1", report.f1),
        ] {
            summary.insert(format!("detection_{name}"), value);
        }
    }
    match format {
        Format::Text => {
            emit(out, format!("records: {}", records.len()))?;
            for (name, value) in &summary {
                emit(out, format!("{name}: {value:.4}"))?;
            }
            Ok(())
        }
        Format::Lines => emit_json(
            out,
            &json!({ "records": records.len(), "summary": summary }),
        ),
    }
}

/// Asks each query on the error stream and reads one line per answer.
struct TerminalAnswers<'a> {
    input: &'a mut dyn BufRead,
    prompt: &'a mut dyn Write,
}

impl AnswerSource for TerminalAnswers<'_> {
    fn answer(&mut self, query: &ClarificationQuery) -> Option<String> {
        let _ = write!(self.prompt, "{}\n> ", query.text);
        let _ = self.prompt.flush();
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(line.trim_end_matches(['\r', '\n']).to_string()),
        }
    }
}

/// Scripted answers that echo each exchange on the error stream.
struct EchoAnswers<'a> {
    answers: ScriptedAnswers,
    log: &'a mut dyn Write,
}

impl AnswerSource for EchoAnswers<'_> {
    fn answer(&mut self, query: &ClarificationQuery) -> Option<String> {
        let answer = self.answers.answer(query)?;
        let _ = writeln!(self.log, "{}\n> {answer}", query.text);
        Some(answer)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_clarify(
    pipeline: &Pipeline,
    text: &str,
    answers: Option<&Path>,
    transcript: Option<&Path>,
    format: Format,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Outcome {
    let requirement = Requirement::new("cli", text);
    let outcome = match answers {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| domain(format!("{}: {e}", path.display())))?;
            let lines = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string);
            let mut source = EchoAnswers {
                answers: ScriptedAnswers::new(lines),
                log: &mut *err,
            };
            run_session(pipeline, requirement, &mut source)
        }
        None => run_session(
            pipeline,
            requirement,
            &mut TerminalAnswers {
                input,
                prompt: &mut *err,
            },
        ),
    };
    if let Some(path) = transcript {
        write_lines(path, &outcome.transcript).map_err(domain)?;
    }
    if format == Format::Lines {
        emit_json(out, &outcome)?;
    }
    match (&outcome.formula, outcome.state.phase) {
        (Some(formula), Phase::Done) => {
            if format == Format::Text {
                writeln!(err, "refined requirement: {}", outcome.requirement.text)
                    .map_err(domain)?;
                emit(out, render(formula))?;
            }
            Ok(())
        }
        _ => {
            Err(domain(outcome.error.unwrap_or_else(|| {
                "session ended without a formula".into()
            })))
        }
    }
}

fn serve(pipeline: Pipeline, host: &str, port: u16, err: &mut dyn Write) -> Outcome {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(domain)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(domain)?;
        let address = listener.local_addr().map_err(domain)?;
        writeln!(err, "listening on http://{address}").map_err(domain)?;
        axum::serve(listener, server::router(pipeline))
            .await
            .map_err(domain)
    })
}
