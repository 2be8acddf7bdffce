use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_ait");
const SMS: &str = "tests/fixtures/sms_toy.tsv";
const GOLDEN: &str = "tests/fixtures/select_low.golden.json";

fn ait(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = ait(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn exit_code(args: &[&str]) -> i32 {
    ait(args).status.code().unwrap()
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn compress_roundtrip_is_byte_identical() {
    let dir = tmp();
    let input = dir.path().join("in.txt");
    fs::write(&input, "the quick brown fox jumps over the lazy dog\n".repeat(20)).unwrap();
    let model = dir.path().join("m.aitm");
    ok_json(&["train", "--input", p(&input), "--order", "2", "--out", p(&model)]);
    for spec in ["uniform:bytes", p(&model)] {
        let container = dir.path().join("x.aitc");
        let back = dir.path().join("back.txt");
        let report = ok_json(&[
            "compress",
            "--model",
            spec,
            "--input",
            p(&input),
            "--out",
            p(&container),
        ]);
        let result = &report["result"];
        assert!(result["measured_bits"].as_u64().unwrap() > 0);
        assert!(result["analytic_bits"].as_f64().unwrap() > 0.0);
        assert_eq!(result["roundtrip_verified"], true);
        ok_json(&[
            "decompress",
            "--model",
            spec,
            "--input",
            p(&container),
            "--out",
            p(&back),
        ]);
        assert_eq!(fs::read(&input).unwrap(), fs::read(&back).unwrap());
    }
}

#[test]
fn decompress_with_the_wrong_model_fails() {
    let dir = tmp();
    let input = dir.path().join("in.txt");
    fs::write(&input, "0110").unwrap();
    let container = dir.path().join("x.aitc");
    ok_json(&[
        "compress",
        "--model",
        "uniform:01",
        "--input",
        p(&input),
        "--out",
        p(&container),
    ]);
    let back = dir.path().join("back");
    assert_eq!(
        exit_code(&[
            "decompress",
            "--model",
            "uniform:012",
            "--input",
            p(&container),
            "--out",
            p(&back)
        ]),
        4
    );
}

#[test]
fn configuration_errors() {
    assert_eq!(
        exit_code(&["compress", "--model", "no/such/model.aitm", "--input", SMS]),
        3
    );
    assert_eq!(
        exit_code(&[
            "select",
            "--model",
            "remote:some-model",
            "--dataset",
            SMS,
            "--format",
            "sms-tsv"
        ]),
        3
    );
    assert_eq!(
        exit_code(&["select", "--model", "icl-ngram:3", "--dataset", SMS, "--format", "csv"]),
        3
    );
    assert_eq!(exit_code(&["frobnicate"]), 2);
    assert_eq!(exit_code(&["prior", "--model", "uniform:01", "--text", "012"]), 4);

    let out = ait(&["compress", "--model", "no/such/model.aitm", "--input", SMS]);
    let last = String::from_utf8(out.stderr)
        .unwrap()
        .lines()
        .last()
        .unwrap()
        .to_string();
    let err: Value = serde_json::from_str(&last).unwrap();
    assert_eq!(err["error"]["code"], 3);
}

#[test]
fn config_file_precedence() {
    let dir = tmp();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "model = \"uniform:01\"\ntext = \"0110\"\nseed = 9\n").unwrap();
    let from_file = ok_json(&["--config", p(&cfg), "prior"]);
    assert_eq!(from_file["config"]["seed"], 9);
    let overridden = ok_json(&["--config", p(&cfg), "prior", "--seed", "2"]);
    assert_eq!(overridden["config"]["seed"], 2);
    // gamma(9) is 7 bits, gamma(2) is 3.
    let bits = |r: &Value| r["result"]["program_bits"].as_f64().unwrap();
    assert_eq!(bits(&from_file) - bits(&overridden), 4.0);

    fs::write(&cfg, "model = \"uniform:01\"\ncolour = \"blue\"\n").unwrap();
    assert_eq!(exit_code(&["--config", p(&cfg), "prior", "--text", "01"]), 3);
}

#[test]
fn prior_and_predict() {
    let r = ok_json(&["prior", "--model", "uniform:01", "--text", "0101"]);
    assert_eq!(r["result"]["log_prior"]["exact"]["value"], -24.0);
    assert_eq!(r["result"]["program_bits"], 25.0);

    let uniform = ok_json(&["predict", "--model", "uniform:abc", "--text", "abcab"]);
    for mode in ["exact", "paper-approx"] {
        let n: Vec<f64> = serde_json::from_value(uniform["result"]["modes"][mode]["normalized"].clone()).unwrap();
        assert_eq!(n, vec![1.0 / 3.0; 3]);
    }
    assert_eq!(uniform["result"]["normalized_mode_gap"], 0.0);

    let text = "01".repeat(50);
    let r = ok_json(&["predict", "--model", "uniform:01", "--text", &text]);
    let d = r["result"]["modes"]["paper-approx"]["theorem2_deviation"][0]
        .as_f64()
        .unwrap();
    assert!((d - 0.0196).abs() < 1e-3, "{d}");
}

#[test]
fn verify_and_semimeasure_pass_for_builtin_models() {
    let r = ok_json(&["verify-theorem2", "--model", "uniform:01", "--samples", "3"]);
    assert_eq!(r["result"]["pass"], true);
    let r = ok_json(&["semimeasure", "--model", "uniform:01", "--max-length", "6"]);
    assert_eq!(r["result"]["pass"], true);
    assert_eq!(
        exit_code(&["semimeasure", "--model", "uniform:bytes", "--max-length", "3"]),
        3
    );
}

#[test]
fn converge_outputs() {
    let dir = tmp();
    let csv = dir.path().join("oracle.csv");
    ok_json(&[
        "converge",
        "--predictor",
        "oracle",
        "--t-grid",
        "1,10,100",
        "--trials",
        "4",
        "--out",
        p(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("T,cumulative_mean,cumulative_stderr,last_step_error")
    );
    for line in lines {
        assert_eq!(line.split(',').nth(1), Some("0"));
    }

    let csv2 = dir.path().join("kt.csv");
    let a = ait(&["converge", "--t-grid", "10,100", "--trials", "8", "--out", p(&csv2)]);
    let first = fs::read(&csv2).unwrap();
    let b = ait(&["converge", "--t-grid", "10,100", "--trials", "8", "--out", p(&csv2)]);
    assert_eq!(first, fs::read(&csv2).unwrap());
    assert_eq!(a.stdout, b.stdout);
}

fn select_args(mode: &str) -> Vec<String> {
    [
        "select",
        "--model",
        "icl-ngram:3",
        "--dataset",
        SMS,
        "--format",
        "sms-tsv",
        "--k-total",
        "4",
        "--mode",
        mode,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_select(mode: &str) -> Output {
    let args = select_args(mode);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ait(&refs)
}

#[test]
fn select_matches_golden_report() {
    let out = run_select("low");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(GOLDEN);
    if std::env::var_os("AIT_UPDATE_GOLDEN").is_some() {
        fs::write(&golden, &out.stdout).unwrap();
    }
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        fs::read_to_string(golden).unwrap()
    );
}

#[test]
fn low_and_high_modes_differ_but_stay_balanced() {
    let report = |mode| -> Value { serde_json::from_slice(&run_select(mode).stdout).unwrap() };
    let low = report("low");
    let high = report("high");
    let ids = |r: &Value| -> Vec<u64> {
        r["result"]["selection"]["selected"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["example"]["source_index"].as_u64().unwrap())
            .collect()
    };
    assert_ne!(ids(&low), ids(&high));
    assert_eq!(
        low["result"]["selection"]["class_counts"],
        high["result"]["selection"]["class_counts"]
    );
}

#[test]
fn evaluate_uses_selected_examples() {
    let dir = tmp();
    let report = dir.path().join("select.json");
    let mut args = select_args("low");
    args.extend(["--out".to_string(), p(&report).to_string()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert!(ait(&refs).status.success());

    let eval = ok_json(&[
        "evaluate",
        "--model",
        "icl-ngram:3",
        "--dataset",
        SMS,
        "--format",
        "sms-tsv",
        "--examples",
        p(&report),
    ]);
    assert_eq!(eval["result"]["examples"].as_array().unwrap().len(), 4);
    let e = &eval["result"]["evaluation"];
    assert_eq!(e["total"], 6);
    assert_eq!(e["skipped"], 0);
}

#[test]
fn timing_is_opt_in() {
    let plain = ok_json(&["prior", "--model", "uniform:01", "--text", "01"]);
    assert!(plain.get("duration_ms").is_none());
    let timed = ok_json(&["--record-timing", "prior", "--model", "uniform:01", "--text", "01"]);
    assert!(timed["duration_ms"].is_u64());
}
