//! CLI behavior: exit codes, flag handling, and report semantics.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn emofuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emofuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("config.json");
    write(
        &p,
        r#"{
            "dims": {"d1": 8, "d2": 5, "d3": 4, "H": 5, "M": 4, "F": 4},
            "epochs": 2,
            "lr": 3e-3,
            "batch_size": 16,
            "n_max": 3
        }"#,
    );
    p
}

fn small_synth(dir: &Path) -> PathBuf {
    let p = dir.join("synth.json");
    write(
        &p,
        r#"{
            "train_per_class": 10,
            "test_per_class": 3,
            "global_dim": 8,
            "object_dim": 4,
            "face_dim": 4,
            "objects_max": 3
        }"#,
    );
    p
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write(&cfg, r#"{"lambda": -1}"#);
    let out = emofuse(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--synth",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn missing_data_file_exits_3() {
    let out = emofuse(&["train", "--data", "/no/such/file.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_data_line_exits_3_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.jsonl");
    write(
        &data,
        "{\"id\":\"a\",\"label\":\"sad\",\"global\":[0],\"objects\":[],\"face\":null}\nnot json\n",
    );
    let out = emofuse(&["train", "--data", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn train_then_eval_consistency_and_empty_eval_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let synth = small_synth(dir.path());
    let out_dir = dir.path().join("run");

    let out = emofuse(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--synth",
        synth.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    let reported_acc = report["final_metrics"]["emotion_accuracy"].as_f64().unwrap();

    // Rebuild the same test split as a fixture and evaluate the model on it.
    let spec = emofuse::data::SynthSpec::from_json(
        &std::fs::read_to_string(&synth).unwrap(),
    )
    .unwrap();
    let data = emofuse::data::synth_generate(&spec).unwrap();
    let test_path = dir.path().join("test.jsonl");
    emofuse::data::write_jsonl(&test_path, &data.test).unwrap();

    let model_path = out_dir.join("model.bin");
    let out = emofuse(&[
        "eval",
        "--model",
        model_path.to_str().unwrap(),
        "--data",
        test_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let metrics: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("metrics are JSON");
    assert_eq!(
        metrics["emotion_accuracy"].as_f64().unwrap(),
        reported_acc,
        "eval accuracy differs from the training report"
    );
    // Confusion matrix is C x C in taxonomy order.
    let confusion = metrics["confusion"].as_array().unwrap();
    assert_eq!(confusion.len(), 8);
    assert_eq!(confusion[0].as_array().unwrap().len(), 8);
    assert_eq!(metrics["labels"][0], "excitement");

    // An empty fixture is a data error.
    let empty = dir.path().join("empty.jsonl");
    write(&empty, "");
    let out = emofuse(&[
        "eval",
        "--model",
        model_path.to_str().unwrap(),
        "--data",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_dim_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let synth = small_synth(dir.path());
    let out_dir = dir.path().join("run");
    let out = emofuse(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--synth",
        synth.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    // Same taxonomy, wrong global width.
    let wrong = emofuse::data::SynthSpec {
        global_dim: 11,
        ..emofuse::data::SynthSpec::from_json(&std::fs::read_to_string(&synth).unwrap()).unwrap()
    };
    let wrong_path = dir.path().join("wrong.jsonl");
    emofuse::data::write_jsonl(
        &wrong_path,
        &emofuse::data::synth_generate(&wrong).unwrap().test,
    )
    .unwrap();
    let out = emofuse(&[
        "eval",
        "--model",
        out_dir.join("model.bin").to_str().unwrap(),
        "--data",
        wrong_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));

    // A truncated model file is also a model error.
    let model_bytes = std::fs::read(out_dir.join("model.bin")).unwrap();
    let clipped = dir.path().join("clipped.bin");
    std::fs::write(&clipped, &model_bytes[..model_bytes.len() / 2]).unwrap();
    let data_ok = dir.path().join("ok.jsonl");
    emofuse::data::write_jsonl(
        &data_ok,
        &emofuse::data::synth_generate(
            &emofuse::data::SynthSpec::from_json(&std::fs::read_to_string(&synth).unwrap())
                .unwrap(),
        )
        .unwrap()
        .test,
    )
    .unwrap();
    let out = emofuse(&[
        "eval",
        "--model",
        clipped.to_str().unwrap(),
        "--data",
        data_ok.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn lambda_reports_differ_only_in_polarity_weighting() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_synth(dir.path());

    let run_with_lambda = |lambda: f64, out: &str| -> serde_json::Value {
        let cfg = dir.path().join(format!("cfg-{out}.json"));
        write(
            &cfg,
            &format!(
                r#"{{
                    "lambda": {lambda},
                    "dims": {{"d1": 8, "d2": 5, "d3": 4, "H": 5, "M": 4, "F": 4}},
                    "epochs": 2,
                    "lr": 3e-3,
                    "batch_size": 16,
                    "n_max": 3
                }}"#
            ),
        );
        let out_dir = dir.path().join(out);
        let res = emofuse(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--synth",
            synth.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(res.status.code(), Some(0));
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap()
    };

    let zero = run_with_lambda(0.0, "lambda0");
    let one = run_with_lambda(1.0, "lambda1");

    // Lambda 0 still reports the polarity column, but the total equals
    // the emotion term; lambda 1 adds the polarity term in.
    for row in zero["epochs"].as_array().unwrap() {
        assert!(row["l_pol"].as_f64().unwrap() > 0.0);
        assert_eq!(row["l_total"].as_f64().unwrap(), row["l_emo"].as_f64().unwrap());
    }
    let row = &one["epochs"].as_array().unwrap()[0];
    assert!(
        row["l_total"].as_f64().unwrap() > row["l_emo"].as_f64().unwrap(),
        "lambda 1 total must include the polarity term"
    );
}

#[test]
fn grad_check_exits_0() {
    let out = emofuse(&["grad-check", "--seeds", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("composite_loss"));
    assert!(text.contains("PASS"));
}

#[test]
fn loss_demo_prints_table() {
    let out = emofuse(&["loss-demo"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for scenario in ["true", "false", "easy false", "hard false"] {
        assert!(text.contains(scenario), "missing row {scenario}");
    }
    assert!(text.contains("2.2996"));
    assert!(text.contains("1.6094"));
}

#[test]
fn sweep_empty_values_exits_2_and_csv_lands_in_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let synth = small_synth(dir.path());

    let out = emofuse(&[
        "sweep",
        "--param",
        "lambda",
        "--values",
        "",
        "--config",
        cfg.to_str().unwrap(),
        "--synth",
        synth.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let csv_path = dir.path().join("sweep.csv");
    let out = emofuse(&[
        "sweep",
        "--param",
        "N",
        "--values",
        "1,2",
        "--config",
        cfg.to_str().unwrap(),
        "--synth",
        synth.to_str().unwrap(),
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("value,emotion_acc,polarity_acc"));
}
