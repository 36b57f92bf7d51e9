use std::fs;
use std::path::Path;
use std::process::Command;

use clarifystl::dataset::{read_lines, DatasetRecord, Label};
use clarifystl_cli::{run, Streams};
use serde_json::{json, Value};

const RUNNING_EXAMPLE: &str =
    "During 10-150 seconds, if signal x1 exceeds 0.2, then signal x2 will decrease for the next 30 seconds";

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn cli(args: &[&str]) -> Run {
    cli_with_input(args, "")
}

fn cli_with_input(args: &[&str], input: &str) -> Run {
    let mut argv = vec!["clarifystl"];
    argv.extend_from_slice(args);
    let mut input = input.as_bytes();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(
        argv,
        Streams {
            input: &mut input,
            out: &mut out,
            err: &mut err,
        },
    );
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn corpus(dir: &Path) -> String {
    let records = [
        ("c1", "If speed exceeds 40, then rpm must stay below 3000 for the next 5 seconds and speed must remain below 60", "(speed > 40) -> (G[0,5](rpm < 3000) & (speed < 60))"),
        ("c2", "Whenever pressure is greater than 2, temp shall rise above 30 within 10 seconds and pressure shall stay below 9", "(pressure > 2) -> (F[0,10](temp > 30) & (pressure < 9))"),
        ("c3", "When voltage drops below 5 then flow must exceed 1.5 during 2-12 seconds and voltage must stay above 0.5", "(voltage < 5) -> (G[2,12](flow > 1.5) & (voltage > 0.5))"),
        ("c4", "If x1 exceeds 7, then x2 must stay below 3.5 for the next 8 seconds and x1 must remain below 20", "(x1 > 7) -> (G[0,8](x2 < 3.5) & (x1 < 20))"),
    ];
    let lines: Vec<String> = records
        .iter()
        .map(|(id, nl, stl)| {
            json!({ "id": id, "nl": nl, "stl": stl, "label": "clean" }).to_string()
        })
        .collect();
    let path = dir.join("corpus.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn parse_prints_the_canonical_rendering() {
    let r = cli(&["parse", "G[0,12]((speed > 45) -> F[1,4](rpm < 2700))"]);
    assert_eq!(
        (r.code, r.out.as_str()),
        (0, "G[0,12]((speed > 45) -> F[1,4](rpm < 2700))\n")
    );
    let r = cli(&["parse", "G[0, 12] ( (speed>45.0) -> F[1,4] (rpm<2700) )"]);
    assert_eq!(r.out, "G[0,12]((speed > 45) -> F[1,4](rpm < 2700))\n");
    let r = cli(&["--format", "lines", "parse", "x > 1 & y < 2"]);
    let v: Value = serde_json::from_str(r.out.trim()).unwrap();
    assert_eq!(v["variables"], json!(["x", "y"]));
}

#[test]
fn reversed_interval_is_a_domain_error() {
    let r = cli(&["parse", "G[5,2](x>0)"]);
    assert_eq!(r.code, 1);
    assert!(r.out.is_empty());
    assert!(r.err.contains("interval"), "{}", r.err);
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["parse", "--bogus", "x"][..],
        &["frobnicate"],
        &[],
        &["monitor", "x > 1"],
        &["--format", "xml", "parse", "x > 1"],
    ] {
        let r = cli(args);
        assert_eq!(r.code, 2, "{args:?}: {}", r.err);
        assert!(r.err.contains("Usage"), "{}", r.err);
    }
    assert_eq!(cli(&["--help"]).code, 0);
}

#[test]
fn check_and_template() {
    let r = cli(&["check", "G[0,1](x > 1)"]);
    assert_eq!((r.code, r.out.as_str()), (0, "ok\n"));
    let r = cli(&["check", "G[0,1](x >"]);
    assert_eq!(r.code, 1);
    assert!(!r.out.is_empty());
    let r = cli(&["template", "G[0,12]((speed > 45) -> F[1,4](rpm < 2700))"]);
    assert_eq!(r.out, "G[NUM,NUM]((SIG > NUM) -> F[NUM,NUM](SIG < NUM))\n");
}

#[test]
fn monitor_reads_trace_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traces.jsonl");
    let traces = [
        json!({ "variables": ["x"], "breakpoints": [0.0, 2.0, 10.0], "values": [[0.0, 5.0]], "horizon": 10.0 }),
        json!({ "variables": ["x"], "breakpoints": [0.0, 10.0], "values": [[0.0]], "horizon": 10.0 }),
    ];
    fs::write(&path, format!("{}\n{}\n", traces[0], traces[1])).unwrap();
    let path = path.to_str().unwrap();
    let r = cli(&["monitor", "F[0,5](x > 1)", "--trace", path]);
    assert_eq!((r.code, r.out.as_str()), (0, "true\nfalse\n"));
    let r = cli(&["monitor", "F[0,5](x > 1)", "--trace", path, "--time", "6"]);
    assert_eq!(r.code, 1, "window past the horizon");
}

#[test]
fn clarify_running_example_offline() {
    let (f, a) = (
        fixture("running_example.fixture"),
        fixture("running_example.answers"),
    );
    let r = cli(&["clarify", "--fixture", &f, "--answers", &a, RUNNING_EXAMPLE]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert_eq!(r.out, "F[10,150](x1 > 0.2) -> G[0,30](x2 < 0.5)\n");
    assert!(r
        .err
        .contains("What specific value should signal x2 decrease?"));
}

#[test]
fn clarify_reads_answers_from_the_terminal() {
    let f = fixture("running_example.fixture");
    let r = cli_with_input(
        &["clarify", "--fixture", &f, RUNNING_EXAMPLE],
        "0.5\nthe first time\n",
    );
    assert_eq!(r.code, 0, "{}", r.err);
    assert_eq!(r.out, "F[10,150](x1 > 0.2) -> G[0,30](x2 < 0.5)\n");
    let r = cli_with_input(&["clarify", "--fixture", &f, RUNNING_EXAMPLE], "0.5\n");
    assert_eq!(r.code, 1, "input ended before the second query");
}

#[test]
fn clarify_writes_transcript_and_lines() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("t.jsonl");
    let (f, a) = (
        fixture("running_example.fixture"),
        fixture("running_example.answers"),
    );
    let r = cli(&[
        "--format",
        "lines",
        "clarify",
        "--fixture",
        &f,
        "--answers",
        &a,
        "--transcript",
        transcript.to_str().unwrap(),
        RUNNING_EXAMPLE,
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    let outcome: Value = serde_json::from_str(r.out.trim()).unwrap();
    assert_eq!(
        outcome["formula"],
        "F[10,150](x1 > 0.2) -> G[0,30](x2 < 0.5)"
    );
    assert_eq!(
        outcome["requirement"]["revisions"]
            .as_array()
            .unwrap()
            .len(),
        2
    );
    let events = fs::read_to_string(&transcript).unwrap();
    assert_eq!(
        events.lines().count(),
        outcome["transcript"].as_array().unwrap().len()
    );
}

#[test]
fn clarify_without_replies_fails_offline() {
    let r = cli(&[
        "clarify",
        "--answers",
        &fixture("running_example.answers"),
        RUNNING_EXAMPLE,
    ]);
    assert_eq!(r.code, 1);
    assert!(r.err.starts_with("error:"), "{}", r.err);
}

#[test]
fn remote_backend_rejects_a_fixture() {
    let r = cli(&[
        "clarify",
        "--backend",
        "remote",
        "--fixture",
        &fixture("running_example.fixture"),
        RUNNING_EXAMPLE,
    ]);
    assert_eq!(r.code, 2);
}

#[test]
fn mutate_and_train_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = corpus(dir.path());
    let outputs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let path = dir.path().join(format!("out{i}.jsonl"));
            let r = cli(&[
                "mutate",
                "--input",
                &input,
                "--output",
                path.to_str().unwrap(),
                "--per-type",
                "2",
                "--seed",
                "5",
            ]);
            assert_eq!(r.code, 0, "{}", r.err);
            fs::read(path).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    let dataset = dir.path().join("out0.jsonl");
    let records: Vec<DatasetRecord> = read_lines(&dataset).unwrap();
    assert!(records.len() > 4);
    assert!(records.iter().any(|r| r.label == Label::Ambiguous));
    assert!(records.iter().all(|r| r.check().is_ok()));

    let models: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let path = dir.path().join(format!("model{i}.bin"));
            let r = cli(&[
                "train-ambiguity",
                "--input",
                dataset.to_str().unwrap(),
                "--output",
                path.to_str().unwrap(),
                "--seed",
                "3",
                "--epochs",
                "2",
                "--dim",
                "32",
            ]);
            assert_eq!(r.code, 0, "{}", r.err);
            assert_eq!(r.out.lines().count(), 2);
            fs::read(path).unwrap()
        })
        .collect();
    assert_eq!(models[0], models[1]);
    assert!(models[0].starts_with(b"AMBM1"));

    let model = dir.path().join("model0.bin");
    let r = cli(&[
        "--format",
        "lines",
        "detect",
        "--model",
        model.to_str().unwrap(),
        "the system responds soon",
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    let v: Value = serde_json::from_str(r.out.trim()).unwrap();
    assert_eq!(v["vagueness"]["types"], json!(["Temporal"]));
    assert!(v["ambiguity"].is_object());
}

#[test]
fn detect_uses_the_rule_baseline() {
    let r = cli(&[
        "detect",
        "the speed stays below 50 for the next 2 seconds",
        "the signal goes high soon",
    ]);
    assert_eq!(r.code, 0);
    let lines: Vec<&str> = r.out.lines().collect();
    assert_eq!(lines[1], "  vagueness: clean");
    assert!(lines[3].contains("Temporal"));
    assert_eq!(cli(&["detect"]).code, 2);
}

#[test]
fn evaluate_prints_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    let rows = [
        json!({ "id": "a", "nl": "n", "stl": "G[0,5](x > 1)", "label": "clean", "prediction": "G[0,5](x > 1)", "predicted_defective": false }),
        json!({ "id": "b", "nl": "n", "stl": "G[0,5](x > 1)", "label": "vague", "defect_types": ["Temporal"], "prediction": "F[0,5](x > 1)", "predicted_defective": true }),
    ];
    fs::write(&path, format!("{}\n{}\n", rows[0], rows[1])).unwrap();
    let r = cli(&["evaluate", "--input", path.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.err);
    for name in [
        "formula_accuracy",
        "template_accuracy",
        "bleu",
        "rouge_l",
        "bert_score",
        "semantic_robustness",
        "detection_f1",
    ] {
        assert!(r.out.contains(name), "{name} missing from {}", r.out);
    }
    assert!(r.out.contains("formula_accuracy: 0.9545"));
    assert!(r.out.contains("detection_accuracy: 1.0000"));
    let r = cli(&[
        "--format",
        "lines",
        "evaluate",
        "--input",
        path.to_str().unwrap(),
    ]);
    assert_eq!(r.out.lines().count(), 3);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_clarifystl");
    let ok = Command::new(bin)
        .args(["parse", "G[0,12]((speed > 45) -> F[1,4](rpm < 2700))"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&ok.stdout),
        "G[0,12]((speed > 45) -> F[1,4](rpm < 2700))\n"
    );
    let bad = Command::new(bin)
        .args(["parse", "G[5,2](x>0)"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("interval"));
    let usage = Command::new(bin).arg("--nope").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
    let running_example = Command::new(bin)
        .current_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures"))
        .args([
            "clarify",
            "--fixture",
            "running_example.fixture",
            "--answers",
            "running_example.answers",
            RUNNING_EXAMPLE,
        ])
        .output()
        .unwrap();
    assert_eq!(
        running_example.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&running_example.stderr)
    );
    assert_eq!(
        String::from_utf8_lossy(&running_example.stdout),
        "F[10,150](x1 > 0.2) -> G[0,30](x2 < 0.5)\n"
    );
}
