mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use absa_kit::eval::EvalReport;
use serde_json::Value;

fn absa_kit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_absa-kit"))
        .args(args)
        .env_remove("ABSA_KIT_ENDPOINT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = absa_kit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn run_oracle_pipeline(root: &Path, out_name: &str) -> std::path::PathBuf {
    let corpus = root.join("corpus");
    if !corpus.exists() {
        common::write_synthetic_corpus(&corpus, 5, 60, 20, 40);
    }
    let out = root.join(out_name);
    let config = root.join(format!("{out_name}.json"));
    fs::write(
        &config,
        common::oracle_config(&corpus, &out, "lego_sentinel"),
    )
    .unwrap();
    ok(&["pipeline", "--config", p(&config)]);
    out
}

#[test]
fn import_directory_and_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    common::write_synthetic_corpus(&corpus, 1, 30, 10, 10);
    fs::write(corpus.join("README.md"), "not a corpus file").unwrap();
    let out = dir.path().join("corpus.jsonl");

    let stdout = ok(&["import", "--lines", p(&corpus), "--out", p(&out)]);
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["counts"]["train"], 30);
    assert_eq!(summary["counts"]["validation"], 10);
    assert_eq!(summary["counts"]["test"], 10);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 50);

    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("corpus.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);

    let again: Value = serde_json::from_str(&ok(&["summarize", "--dataset", p(&out)])).unwrap();
    assert_eq!(again, summary);
}

#[test]
fn import_reports_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("reviews.txt");
    fs::write(
        &file,
        "bagus dan bersih .####[('NULL', 'bagus', 'POS'), ('NULL', 'bersih', 'POS')]\nno separator here\n",
    )
    .unwrap();
    let out = dir.path().join("d.jsonl");

    let failed = absa_kit(&["import", "--lines", p(&file), "--out", p(&out)]);
    assert_eq!(failed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("--split"));

    ok(&[
        "import",
        "--lines",
        p(&file),
        "--split",
        "train",
        "--out",
        p(&out),
    ]);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("d.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["skipped"][0]["line"], 2);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 1);
}

#[test]
fn eval_hand_case_scores_two_thirds() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("d.jsonl");
    let record = serde_json::json!({
        "id": "r1",
        "text": "kamar bersih , staf ramah , wifi lambat",
        "split": "test",
        "gold": [
            {"aspect": "kamar", "opinion": "bersih", "polarity": "positive"},
            {"aspect": "staf", "opinion": "ramah", "polarity": "positive"},
            {"aspect": "wifi", "opinion": "lambat", "polarity": "negative"},
        ],
    });
    fs::write(&gold, format!("{record}\n")).unwrap();
    let pred = dir.path().join("outs.json");
    fs::write(
        &pred,
        r#"["(kamar, bersih, positive); (staf, ramah, positive); (wifi, lambat, positive)"]"#,
    )
    .unwrap();
    let report_path = dir.path().join("report.json");

    let stdout = ok(&[
        "eval",
        "--gold",
        p(&gold),
        "--pred",
        p(&pred),
        "--format",
        "gas",
        "--task",
        "ASTE",
        "--out",
        p(&report_path),
    ]);
    assert!(stdout.contains("66.67"), "{stdout}");
    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let counts = report.counts["ASTE"];
    assert_eq!((counts.tp, counts.fp, counts.fn_), (2, 1, 1));
    assert!(dir.path().join("report.txt").exists());
}

#[test]
fn oracle_pipeline_scores_one_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_oracle_pipeline(dir.path(), "run");
    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for task in ["ASTE", "UABSA", "AOPE", "ATE", "OTE"] {
        assert_eq!(report.per_task[task].f1, 100.0, "{task}");
    }
    for artifact in [
        "config.json",
        "corpus.jsonl",
        "import_report.json",
        "summary.json",
        "derived/ASTE.jsonl",
        "train_mix.jsonl",
        "instances/OTE.jsonl",
        "outputs/ATE.jsonl",
        "report.txt",
        "triage.json",
        "worksheet.jsonl",
        "worksheet.txt",
    ] {
        assert!(out.join(artifact).exists(), "{artifact}");
    }
    let table = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(table.contains("100.00"));
}

#[test]
fn stages_rerun_from_persisted_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_oracle_pipeline(dir.path(), "run");
    let scratch = dir.path().join("scratch");
    let read = |path: &Path| fs::read(path).unwrap();

    ok(&[
        "derive",
        "--dataset",
        p(&out.join("corpus.jsonl")),
        "--task",
        "ASTE",
        "ATE",
        "--out-dir",
        p(&scratch),
    ]);
    assert_eq!(
        read(&scratch.join("ASTE.jsonl")),
        read(&out.join("derived/ASTE.jsonl"))
    );
    assert_eq!(
        read(&scratch.join("ATE.jsonl")),
        read(&out.join("derived/ATE.jsonl"))
    );

    let mix = scratch.join("mix.jsonl");
    ok(&[
        "mix",
        "--derived",
        p(&out.join("derived")),
        "--preset",
        "all",
        "--seed",
        "13",
        "--out",
        p(&mix),
    ]);
    assert_eq!(read(&mix), read(&out.join("train_mix.jsonl")));

    let instances = scratch.join("instances.jsonl");
    ok(&[
        "prompt",
        "--dataset",
        p(&out.join("corpus.jsonl")),
        "--task",
        "AOPE",
        "--split",
        "test",
        "--out",
        p(&instances),
    ]);
    assert_eq!(read(&instances), read(&out.join("instances/AOPE.jsonl")));

    let outputs = scratch.join("outputs.jsonl");
    ok(&[
        "infer",
        "--instances",
        p(&instances),
        "--backend",
        "oracle",
        "--out",
        p(&outputs),
    ]);
    assert_eq!(read(&outputs), read(&out.join("outputs/AOPE.jsonl")));

    let report_path = scratch.join("report.json");
    ok(&[
        "eval",
        "--instances",
        p(&instances),
        "--pred",
        p(&outputs),
        "--format",
        "lego",
        "--out",
        p(&report_path),
    ]);
    let ours: EvalReport =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let theirs: EvalReport =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(ours.counts["AOPE"], theirs.counts["AOPE"]);
    assert_eq!(
        ours.per_record.unwrap()["AOPE"],
        theirs.per_record.unwrap()["AOPE"]
    );

    let analysis = scratch.join("analysis");
    ok(&[
        "analyze",
        "--report",
        p(&out.join("report.json")),
        "--out-dir",
        p(&analysis),
    ]);
    assert_eq!(
        read(&analysis.join("triage.json")),
        read(&out.join("triage.json"))
    );
    assert_eq!(
        read(&analysis.join("worksheet.txt")),
        read(&out.join("worksheet.txt"))
    );
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_oracle_pipeline(dir.path(), "a");
    let b = run_oracle_pipeline(dir.path(), "b");
    for artifact in [
        "report.json",
        "report.txt",
        "train_mix.jsonl",
        "triage.json",
        "worksheet.jsonl",
    ] {
        assert_eq!(
            fs::read(a.join(artifact)).unwrap(),
            fs::read(b.join(artifact)).unwrap(),
            "{artifact}"
        );
    }
}

#[test]
fn backend_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    common::write_synthetic_corpus(&corpus, 2, 10, 2, 5);
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let config = dir.path().join("run.json");
    let body = serde_json::json!({
        "corpus": {"lines": [corpus]},
        "backend": format!("http:http://127.0.0.1:{port}"),
        "http": {"max_retries": 0, "timeout_secs": 2},
        "output_dir": dir.path().join("out"),
    });
    fs::write(&config, body.to_string()).unwrap();

    let out = absa_kit(&["pipeline", "--config", p(&config)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "{stderr}");
    assert!(!stderr.contains("panicked"), "{stderr}");
}

#[test]
fn validation_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        r#"{"corpus": {"lines": ["corpus"]}, "eval_tasks": ["ASPECT"], "output_dir": "out"}"#,
    )
    .unwrap();
    let out = absa_kit(&["pipeline", "--config", p(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ASPECT"));

    let missing = absa_kit(&[
        "eval",
        "--instances",
        "/nonexistent/i.jsonl",
        "--pred",
        "/nonexistent/p.jsonl",
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/i.jsonl"));
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let templates = absa_kit::TemplateRegistry::load(&root.join("templates.json")).unwrap();
    assert_eq!(templates, absa_kit::TemplateRegistry::default());

    let config = absa_kit::cli::PipelineConfig::load(&root.join("run.json")).unwrap();
    assert!(config
        .templates
        .as_ref()
        .unwrap()
        .ends_with("configs/templates.json"));
    assert_eq!(config.mix_plan().unwrap().seed, 42);
    config.validate().unwrap();
}
