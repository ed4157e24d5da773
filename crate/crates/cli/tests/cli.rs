use std::path::Path;
use std::process::{Command, Output};

fn ibm2(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ibm2"))
        .args(args)
        .current_dir(dir)
        .env_remove("IBM2_THREADS")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY: &str = r#"{
  "mode": "fsl",
  "data": {"source": "synthetic", "preset": "fsl"},
  "shots": [1, 2],
  "episodes": 3,
  "runs": 2,
  "replicas": 8,
  "seed": 5,
  "trainer": {"epochs": 8},
  "search": {"epochs": 3}
}"#;

fn without_wall_clock(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("\"wall_clock_seconds\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&ibm2(&["synth", "--preset", "iso-easy", "--seed", "7", "--out-dir", out], dir.path()));
    }
    for file in ["train.feat", "test.feat", "spec.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn csv_report_has_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), TINY).unwrap();
    ok(&ibm2(&["run", "--config", "c.json", "--out", "out.json"], dir.path()));
    let csv = ok(&ibm2(&["report", "out.json", "--format", "csv"], dir.path()));
    // 2 shots x 2 runs x 3 episodes
    assert_eq!(csv.lines().count() - 1, 12);
    let text = ok(&ibm2(&["report", "out.json"], dir.path()));
    assert!(text.lines().nth(1).unwrap().starts_with("arm"));
    assert_eq!(text.lines().count(), 4);
    // report is a pure function of its input
    assert_eq!(text, ok(&ibm2(&["report", "out.json"], dir.path())));
}

#[test]
fn jobs_and_threads_do_not_change_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), TINY).unwrap();
    let one = ok(&ibm2(&["run", "--config", "c.json", "--jobs", "1"], dir.path()));
    let three = ok(&ibm2(&["run", "--config", "c.json", "--jobs", "3"], dir.path()));
    let env = Command::new(env!("CARGO_BIN_EXE_ibm2"))
        .args(["run", "--config", "c.json", "--jobs", "1"])
        .current_dir(dir.path())
        .env("IBM2_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(without_wall_clock(&one), without_wall_clock(&three));
    assert_eq!(without_wall_clock(&one), without_wall_clock(&ok(&env)));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), TINY).unwrap();
    let base = ok(&ibm2(&["run", "--config", "c.json", "--shots", "1"], dir.path()));
    let seeded = ok(&ibm2(&["run", "--config", "c.json", "--shots", "1", "--seed", "6"], dir.path()));
    assert_ne!(without_wall_clock(&base), without_wall_clock(&seeded));
    let doc: serde_json::Value = serde_json::from_str(&seeded).unwrap();
    assert_eq!(doc["master_seed"], 6);
    assert_eq!(doc["arms"][0]["config"]["seed"], 6);
}

#[test]
fn import_then_run_on_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::new();
    for c in 0..3 {
        for r in 0..20 {
            csv.push_str(&format!("{c},{},{},{}\n", c as f64 + 1.0, r as f64 * 0.01, 1.0 - c as f64 * 0.3));
        }
    }
    std::fs::write(dir.path().join("pool.csv"), csv).unwrap();
    ok(&ibm2(&["import", "pool.csv", "--out", "pool.feat", "--normalize"], dir.path()));
    let out = ok(&ibm2(
        &[
            "run", "--pool", "pool.feat", "--mode", "fsl", "--way", "3", "--episodes", "2",
            "--runs", "1", "--r", "4", "--method", "baseline",
        ],
        dir.path(),
    ));
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["arms"][0]["results"]["shots"][0]["runs"][0]["episodes"].as_array().unwrap().len(), 2);
}

fn failure(args: &[&str], dir: &Path) -> (i32, String) {
    let out = ibm2(args, dir);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("ibm2: error["), "{stderr}");
    (out.status.code().unwrap(), stderr)
}

#[test]
fn distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(failure(&["run", "--no-such-flag"], dir.path()).0, 2);
    assert_eq!(failure(&["frobnicate"], dir.path()).0, 2);

    std::fs::write(dir.path().join("bad.json"), "{\"mode\": ").unwrap();
    assert_eq!(failure(&["run", "--config", "bad.json"], dir.path()).0, 3);
    std::fs::write(dir.path().join("unknown.json"), "{\"colour\": 1}").unwrap();
    assert_eq!(failure(&["run", "--config", "unknown.json"], dir.path()).0, 3);
    std::fs::write(dir.path().join("pfsl.json"), "{\"episodes\": 3}").unwrap();
    let (code, line) = failure(&["run", "--config", "pfsl.json"], dir.path());
    assert_eq!(code, 3);
    assert!(line.contains("error[config]"));

    let (code, line) = failure(&["run", "--config", "missing.json"], dir.path());
    assert_eq!(code, 4);
    assert!(line.contains("error[missing-file]"));
    assert_eq!(failure(&["report", "missing.json"], dir.path()).0, 4);
    assert_eq!(failure(&["import", "missing.csv", "--out", "x.feat"], dir.path()).0, 4);
}
