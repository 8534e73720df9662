use std::path::Path;

use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = s4c_cli::main_with(std::iter::once("s4c").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_weights_is_a_usage_error() {
    let (code, _, err) = run(&["generate", "--draft-weights", "d.s4cw", "--prompt", "hi"]);
    assert_eq!(code, 1);
    assert!(err.contains("--weights"), "{err}");
}

#[test]
fn negative_temperature_is_rejected() {
    let (code, _, err) = run(&["verify-lossless", "--temperature", "-1"]);
    assert_eq!(code, 1);
    assert!(err.contains("range"), "{err}");
}

#[test]
fn absent_input_file_is_an_io_error() {
    let (code, _, err) = run(&["generate", "--weights", "/no/such.s4cw", "--draft-weights", "/no/d.s4cw", "--prompt", "x"]);
    assert_eq!(code, 2);
    assert!(err.contains("/no/such.s4cw"), "{err}");
}

#[test]
fn zero_lossless_trials_pass_vacuously() {
    let (code, out, _) = run(&["verify-lossless", "--trials", "0"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["trials"], 0);
    assert!(v["note"].as_str().unwrap().contains("0 trials"));
}

#[test]
fn ablation_correction_reports_deviation_without_failing() {
    let (code, out, _) = run(&["verify-lossless", "--trials", "100", "--eq12-correction"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["max_l1_deviation"].as_f64().unwrap() > 1e-3);
    assert_eq!(v["passed"], false);
}

#[test]
fn toy_grad_check_passes() {
    let (code, out, err) = run(&["grad-check"]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["max_relative_error"].as_f64().unwrap() < 1e-4);
}

/// Runs the whole pipeline at a tiny scale: corpus, both trainings,
/// generation, tree dump and a benchmark in both formats.
#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let (code, _, err) = run(&["synth-corpus", "--len", "12000", "--seed", "3", "--out", s(&d("c.txt"))]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(std::fs::read(d("c.txt")).unwrap().len(), 12_000);

    #[rustfmt::skip]
    let (code, out, err) = run(&["train-target", "--corpus", s(&d("c.txt")), "--out", s(&d("t.s4cw")), "--epochs", "1",
        "--hidden-dim", "16", "--layers", "1", "--attn-heads", "2", "--context", "128", "--window", "64",
        "--log", s(&d("t.jsonl"))]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["log"].as_array().unwrap().len(), 2);
    assert_eq!(std::fs::read_to_string(d("t.jsonl")).unwrap().lines().count(), 2);

    #[rustfmt::skip]
    let (code, out, err) = run(&["train-draft", "--weights", s(&d("t.s4cw")), "--corpus", s(&d("c.txt")),
        "--out", s(&d("d.s4cw")), "--epochs", "1", "--window", "64", "--max-windows", "10",
        "--held-out", s(&d("c.txt"))]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["agreement_trained"].as_f64().is_some());

    let (code, out, err) =
        run(&["generate", "--weights", s(&d("t.s4cw")), "--draft-weights", s(&d("d.s4cw")), "--prompt", "the ", "--max-new", "20"]);
    assert_eq!(code, 0, "{err}");
    let g: Value = serde_json::from_str(&out).unwrap();
    let (code, out, _) = run(&["generate", "--weights", s(&d("t.s4cw")), "--plain", "--prompt", "the ", "--max-new", "20"]);
    assert_eq!(code, 0);
    let plain: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(g["outputs"][0]["tokens"], plain["outputs"][0]["tokens"]);
    assert!(g["outputs"][0]["stats"].get("wall_time_ns").is_none());

    let (code, out, err) =
        run(&["dump-tree", "--weights", s(&d("t.s4cw")), "--draft-weights", s(&d("d.s4cw")), "--prompt", "the cat"]);
    assert_eq!(code, 0, "{err}");
    let tree: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(tree["nodes"].as_array().unwrap().len(), 34);
    assert_eq!(tree["draft_calls"], 10);

    let (code, _, err) = run(&["synth-suite", "--len", "3000", "--max-new", "12", "--out", s(&d("suite"))]);
    assert_eq!(code, 0, "{err}");
    let suite = d("suite/suite.json");
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(&suite).unwrap()).unwrap();
    cfg["tasks"].as_array_mut().unwrap().truncate(2);
    cfg["tasks"][0]["prompts"] = 2.into();
    cfg["tasks"][1]["prompts"] = 2.into();
    std::fs::write(&suite, cfg.to_string()).unwrap();
    for (fmt, needle) in [("json", "\"overall\""), ("md", "| Method")] {
        #[rustfmt::skip]
        let (code, out, err) = run(&["bench", "--weights", s(&d("t.s4cw")), "--draft-weights", s(&d("d.s4cw")),
            "--suite", s(&suite), "--format", fmt]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains(needle), "{out}");
    }
}
