//! Black-box checks of the command-line interface: exit codes, file
//! outputs, and the train -> eval -> trace -> export pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emrisk"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (status {:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn usage_errors_exit_2_runtime_errors_exit_1() {
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2), "unknown subcommand is a usage error");

    let out = run(&["gen-synth", "--patients", "5"]);
    assert_eq!(out.status.code(), Some(2), "missing required --out is a usage error");

    let out = run(&[
        "eval",
        "--data",
        "/nonexistent/cohort.jsonl",
        "--model-file",
        "/nonexistent/model.json",
        "--metrics-out",
        "/dev/null",
    ]);
    assert_eq!(out.status.code(), Some(1), "missing input files are runtime errors");
    assert!(
        String::from_utf8_lossy(&out.stderr).starts_with("error:"),
        "runtime failures report an error: line"
    );
}

#[test]
fn gen_synth_writes_one_record_per_patient_plus_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("cohort.jsonl");
    let out = bin()
        .args(["gen-synth", "--patients", "10", "--seed", "1", "--out"])
        .arg(&out_path)
        .output()
        .unwrap();
    assert_success(&out, "gen-synth");

    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 10, "one JSONL line per patient");
    for line in text.lines() {
        let record: serde_json::Value = serde_json::from_str(line).expect("valid JSON per line");
        assert!(record["patient_id"].is_string());
        assert!(record["visits"].is_array());
    }

    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("cohort.jsonl.meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sidecar["seed"], 1);
    assert_eq!(sidecar["patients"], 10);
    assert!(sidecar["config_digest"].is_string());
}

#[test]
fn train_eval_trace_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("cohort.jsonl");
    let model = dir.path().join("model.json");
    let history = dir.path().join("history.csv");
    let metrics = dir.path().join("metrics.json");
    let trace = dir.path().join("trace.csv");
    let embeddings = dir.path().join("embeddings.csv");

    let out = bin()
        .args(["gen-synth", "--patients", "40", "--seed", "3", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert_success(&out, "gen-synth");

    let out = bin()
        .args(["train", "--model", "mdmtp", "--epochs", "2", "--seed", "3", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&model)
        .arg("--history-out")
        .arg(&history)
        .output()
        .unwrap();
    assert_success(&out, "train");

    // The model artifact is a self-describing envelope.
    let envelope: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(envelope["format_version"], 1);
    assert_eq!(envelope["model"], "risk");
    assert_eq!(envelope["seed"], 3);

    // History CSV: provenance comment, header, one row per epoch.
    let history_text = std::fs::read_to_string(&history).unwrap();
    let mut lines = history_text.lines();
    assert!(lines.next().unwrap().starts_with("# seed=3 config_digest="));
    assert_eq!(lines.next().unwrap(), "epoch,train_loss,val_auc");
    assert_eq!(lines.count(), 2, "one row per epoch");

    let out = bin()
        .arg("eval")
        .arg("--data")
        .arg(&data)
        .arg("--model-file")
        .arg(&model)
        .arg("--metrics-out")
        .arg(&metrics)
        .output()
        .unwrap();
    assert_success(&out, "eval");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    let auc = report["auc"].as_f64().expect("metrics JSON carries an auc number");
    assert!((0.0..=1.0).contains(&auc), "auc {auc} outside [0,1]");
    assert_eq!(report["model"], "mdmtp");
    assert!(report["config_digest"].is_string());

    // Trace an existing patient; unknown ids are runtime errors.
    let first_id = first_patient_id(&data);
    let out = bin()
        .arg("trace")
        .arg("--model-file")
        .arg(&model)
        .arg("--data")
        .arg(&data)
        .args(["--patient", &first_id])
        .arg("--out")
        .arg(&trace)
        .output()
        .unwrap();
    assert_success(&out, "trace");
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("# seed=3"));
    assert!(trace_text.lines().nth(1).unwrap().starts_with("visit,time,"));

    let out = bin()
        .arg("trace")
        .arg("--model-file")
        .arg(&model)
        .arg("--data")
        .arg(&data)
        .args(["--patient", "no-such-patient", "--out", "/dev/null"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin()
        .arg("embed-export")
        .arg("--model-file")
        .arg(&model)
        .arg("--out")
        .arg(&embeddings)
        .output()
        .unwrap();
    assert_success(&out, "embed-export");
    let embed_text = std::fs::read_to_string(&embeddings).unwrap();
    let header = embed_text.lines().nth(1).unwrap();
    assert!(header.starts_with("namespace,code,e_0,"));
    // One row per vocabulary entry, all of length m.
    let rows = embed_text.lines().skip(2).count();
    assert!(rows > 0, "export contains embedding rows");
}

fn first_patient_id(data: &Path) -> String {
    let text = std::fs::read_to_string(data).unwrap();
    let record: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    record["patient_id"].as_str().unwrap().to_string()
}

#[test]
fn gradcheck_command_reports_per_configuration_lines() {
    let out = run(&["gradcheck", "--seed", "5"]);
    assert_success(&out, "gradcheck");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let pass_lines = stdout.lines().filter(|l| l.starts_with("PASS")).count();
    assert_eq!(pass_lines, 12, "one PASS line per configuration:\n{stdout}");
}

#[test]
fn train_rejects_invalid_configuration_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("cohort.jsonl");
    let out = bin()
        .args(["gen-synth", "--patients", "5", "--seed", "1", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert_success(&out, "gen-synth");

    // Unknown model names fail validation, not a crash.
    let out = bin()
        .args(["train", "--model", "transformer", "--data"])
        .arg(&data)
        .args(["--out", "/dev/null"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("transformer"), "error names the offending value: {stderr}");

    // Config files with unknown keys are rejected rather than ignored.
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"learning_rate": 0.1}"#).unwrap();
    let out = bin()
        .args(["train", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&config)
        .args(["--out", "/dev/null"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("learning_rate"),
        "unknown config keys are named in the error"
    );
}
