use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dualkb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualkb"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = dualkb(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn report(dir: &Path, name: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{name}.report.json"))).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema"], "dualkb.report");
    assert_eq!(v["command"], name);
    v["metrics"].clone()
}

#[test]
fn pipeline_stages_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["kb-build", "--select", "boil:0", "--out", "kb.jsonl"]);
    assert_eq!(report(d, "kb-build")["exp_units"], 3);
    ok(d, &["distill", "--select", "find,pour:2", "--out", "units.jsonl"]);
    // find has three milestones per variation, pour two.
    assert_eq!(report(d, "distill")["units_added"], 12 * 3 + 2);
    ok(d, &["dataset-env", "--out", "env.jsonl"]);
    ok(d, &["dataset-exp", "--out", "exp.jsonl"]);
    assert!(report(d, "dataset-exp")["instances"].as_u64().unwrap() > 0);
    ok(d, &["train", "--data", "env.jsonl,exp.jsonl", "--epochs", "2", "--out", "model.json"]);
    let losses = report(d, "train")["epoch_losses"].as_array().unwrap().clone();
    assert_eq!(losses.len(), 2);
    ok(d, &["eval-retrieval", "--model", "model.json", "--data", "env.jsonl", "--k", "5"]);
    let r = report(d, "eval-retrieval")["recall"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&r));
    ok(
        d,
        &["episode", "--task", "pour", "--variation", "2", "--kb", "units.jsonl", "--model", "model.json", "--learn", "--kb-out", "after.jsonl"],
    );
    let ep = report(d, "episode");
    assert_eq!(ep["score"], 100.0);
    assert_eq!(ep["units_learned"], 3);
    // A store built from other instances: its facts are older than the episode's own.
    ok(d, &["episode", "--task", "boil", "--variation", "9", "--decision", "noisy", "--kb", "kb.jsonl", "--kb-out", "grown.jsonl"]);
    let grown = report(d, "episode");
    assert!(grown["error"].is_null());
    let lines = |f: &str| std::fs::read_to_string(d.join(f)).unwrap().lines().count();
    assert!(lines("grown.jsonl") > lines("kb.jsonl"));
    ok(d, &["episode", "--task", "boil", "--variation", "9", "--kb", "grown.jsonl"]);
    ok(d, &["report", "episode.report.json", "train.report.json", "--out", "all.json"]);
    assert!(d.join("all.json").exists());
    for stage in ["kb-build", "distill", "dataset-env", "dataset-exp", "train", "eval-retrieval", "episode", "report"] {
        assert!(d.join(format!("{stage}.manifest.json")).exists(), "{stage}");
    }
}

#[test]
fn same_config_gives_identical_report_and_manifest_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("run.toml"),
        "[episode]\ntask = \"boil\"\nvariation = 3\ndecision = \"noisy\"\np = 0.5\nseed = 7\n[episode.agent.retrieval]\nk_candidates = 8\n",
    )
    .unwrap();
    ok(d, &["--config", "run.toml", "--run-dir", "a", "episode"]);
    ok(d, &["--config", "run.toml", "--run-dir", "b", "episode"]);
    ok(d, &["--config", "a/episode.manifest.json", "--run-dir", "c", "episode"]);
    let a = std::fs::read(d.join("a/episode.report.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b/episode.report.json")).unwrap());
    assert_eq!(a, std::fs::read(d.join("c/episode.report.json")).unwrap());
    let m: Value = serde_json::from_slice(&std::fs::read(d.join("a/episode.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["config"]["agent"]["retrieval"]["k_candidates"], 8);

    // Flags override the file.
    ok(d, &["--config", "run.toml", "--run-dir", "e", "episode", "--seed", "8"]);
    let m: Value = serde_json::from_slice(&std::fs::read(d.join("e/episode.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 8);
}

#[test]
fn untrained_model_finds_the_only_document() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("corpus.jsonl"), "{\"id\": 7, \"text\": \"stove | state | on\"}\n").unwrap();
    std::fs::write(
        d.join("queries.jsonl"),
        "{\"query\": \"is the stove on\", \"relevant\": [7]}\n{\"query\": \"zzz\", \"relevant\": [7]}\n",
    )
    .unwrap();
    ok(d, &["eval-retrieval", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl", "--k", "1"]);
    assert_eq!(report(d, "eval-retrieval")["recall"], 1.0);
}

#[test]
fn ablate_reports_three_conditions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["ablate", "--episodes", "3", "--epochs", "2"]);
    let m = report(d, "ablate");
    let names: Vec<&str> = m["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["condition"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["no-kb", "kb-untuned", "kb-tuned"]);
    for flag in ["untuned_ge_no_kb", "tuned_ge_untuned", "tuned_gt_untuned"] {
        assert!(m[flag].is_boolean());
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let code = |args: &[&str]| dualkb(d, args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["episode", "--task", "nope"]), 1);
    assert_eq!(code(&["episode", "--budget", "0"]), 1);
    assert_eq!(code(&["dataset-env", "--select", "boil:99"]), 1);
    assert_eq!(code(&["train"]), 1);
    std::fs::write(d.join("bad.toml"), "[train\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "train"]), 1);
    std::fs::write(d.join("bad.jsonl"), "not a dataset\n").unwrap();
    assert_eq!(code(&["train", "--data", "bad.jsonl"]), 2);
    assert_eq!(code(&["episode", "--kb", "missing.jsonl"]), 2);
    ok(d, &["episode"]);
    assert_eq!(code(&["--config", "episode.manifest.json", "train"]), 1);
}
