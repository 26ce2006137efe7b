use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SCHEMA: &str = r#"{
  "columns": [
    {"name": "A", "kind": "categorical", "categories": ["a1", "a2"]},
    {"name": "B", "kind": "categorical", "categories": ["b1", "b2"]},
    {"name": "X", "kind": "continuous"},
    {"name": "Y", "kind": "continuous"}
  ],
  "target": "B"
}"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// Four-column table: B follows A 90% of the time, Y tracks X.
    fn new(rows: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("schema.json"), SCHEMA).unwrap();
        let mut csv = String::from("A,B,X,Y\n");
        for i in 0..rows {
            let a = i % 5 < 3;
            let agree = (i * 7) % 10 != 0;
            let b = if a == agree { "b1" } else { "b2" };
            let x = (i % 17) as f64 * 0.5 + if a { 0.0 } else { 10.0 };
            csv.push_str(&format!("{},{b},{x},{}\n", if a { "a1" } else { "a2" }, 2.0 * x + (i % 3) as f64));
        }
        std::fs::write(dir.path().join("data.csv"), csv).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, None)
    }

    fn run_env(&self, args: &[&str], seed_env: Option<&str>) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_dpcgans"));
        cmd.current_dir(self.dir.path()).args(args).env_remove("DPCGANS_SEED");
        if let Some(s) = seed_env {
            cmd.env("DPCGANS_SEED", s);
        }
        cmd.output().unwrap()
    }

    fn fit(&self, extra: &[&str]) -> Output {
        let mut args = vec![
            "fit", "--data", "data.csv", "--schema", "schema.json", "--out", "model.bin", "--epochs", "2", "--batch-size", "50",
        ];
        args.extend_from_slice(extra);
        self.run(&args)
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn non_private_fit_runs_every_epoch() {
    let ws = Workspace::new(100);
    let out = ws.fit(&["--epsilon", "inf", "--history", "history.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("epsilon: inf"), "{text}");
    assert!(text.contains("epochs completed: 2/2"));
    assert!(text.contains("wall time:"));
    let h = read_json(&ws.path("history.json"));
    assert_eq!(h["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(h["final_epsilon"], "inf");
    assert_eq!(h["noise_multiplier"], 0.0);
    assert_eq!(h["discriminator_steps"], 2 * 2 * 5);
}

#[test]
fn private_fit_calibrates_and_stays_in_budget() {
    let ws = Workspace::new(100);
    let out = ws.fit(&["--epsilon", "1", "--delta", "1e-5", "--history", "history.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("(calibrated)"));
    let h = read_json(&ws.path("history.json"));
    let last = h["epochs"].as_array().unwrap().last().unwrap()["epsilon"].as_f64().unwrap();
    assert!(last <= 1.0, "{last}");
    assert!(h["noise_multiplier"].as_f64().unwrap() > 0.0);

    let fixed = ws.fit(&["--epsilon", "1", "--sigma", "50"]);
    assert!(fixed.status.success());
    assert!(stdout(&fixed).contains("sigma: 50\n"));
}

#[test]
fn sampling_is_deterministic_and_schema_valid() {
    let ws = Workspace::new(100);
    assert!(ws.fit(&[]).status.success());
    for name in ["s1.csv", "s2.csv"] {
        let o = ws.run(&["sample", "--model", "model.bin", "--rows", "1000", "--out", name, "--seed", "4"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(ws.path("s1.csv")).unwrap();
    assert_eq!(a, std::fs::read(ws.path("s2.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1001);
    assert_eq!(lines[0], "A,B,X,Y");
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert!(["a1", "a2"].contains(&f[0]) && ["b1", "b2"].contains(&f[1]), "{l}");
        assert!(f[2].parse::<f64>().unwrap().is_finite());
    }

    // the environment variable supplies the seed when the flag is absent
    let o = ws.run_env(&["sample", "--model", "model.bin", "--rows", "1000", "--out", "s3.csv"], Some("4"));
    assert!(o.status.success());
    assert_eq!(std::fs::read(ws.path("s3.csv")).unwrap(), text.as_bytes());
    let o = ws.run(&["sample", "--model", "model.bin", "--rows", "1000", "--out", "s4.csv"]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(ws.path("s4.csv")).unwrap(), text.as_bytes());
}

#[test]
fn evaluating_a_copy_gives_perfect_scores() {
    let ws = Workspace::new(120);
    std::fs::copy(ws.path("data.csv"), ws.path("copy.csv")).unwrap();
    let args = [
        "evaluate", "--real-train", "data.csv", "--real-test", "data.csv", "--synth", "copy.csv", "--schema", "schema.json",
        "--out", "report.json", "--identity-threshold", "0.2",
    ];
    let o = ws.run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&ws.path("report.json"));
    let u = &r["utility"];
    for key in ["kl_categorical_mean", "kl_continuous_mean", "cs_score", "ks_score"] {
        assert_eq!(u[key], 1.0, "{key}");
    }
    assert_eq!(u["cramers_v_diff"], 0.0);
    assert_eq!(u["pearson_diff"], 0.0);
    assert_eq!(r["identity_disclosure"]["recall"], 1.0);
    assert_eq!(r["config"]["identity_threshold"], 0.2);
    assert_eq!(r["config"]["knn_neighbors"], 5);
    let ml = r["ml_efficacy"].as_array().unwrap();
    assert_eq!(ml.len(), 2);
    assert_eq!(ml[0]["auc"], ml[0]["baseline_auc"]);
    // two continuous columns: no continuous attribute score
    assert_eq!(r["attribute_disclosure"]["entries"][0]["continuous"], "not-applicable");

    // byte-identical on rerun
    let first = std::fs::read(ws.path("report.json")).unwrap();
    assert!(ws.run(&args).status.success());
    assert_eq!(first, std::fs::read(ws.path("report.json")).unwrap());
}

#[test]
fn efficacy_is_skipped_for_unequal_row_counts() {
    let ws = Workspace::new(100);
    let text = std::fs::read_to_string(ws.path("data.csv")).unwrap();
    let short: Vec<&str> = text.lines().take(61).collect();
    std::fs::write(ws.path("short.csv"), short.join("\n") + "\n").unwrap();
    let o = ws.run(&[
        "evaluate", "--real-train", "data.csv", "--real-test", "data.csv", "--synth", "short.csv", "--schema", "schema.json",
        "--out", "report.json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&ws.path("report.json"));
    assert_eq!(r["ml_efficacy"]["status"], "not-applicable");
}

#[test]
fn failures_map_to_exit_codes() {
    let ws = Workspace::new(100);
    assert_eq!(ws.run(&["fit", "--bogus"]).status.code(), Some(2));
    assert_eq!(ws.fit(&["--epsilon", "-1"]).status.code(), Some(2));
    assert_eq!(ws.fit(&["--epochs", "0"]).status.code(), Some(2));
    let missing = ws.run(&["fit", "--data", "nope.csv", "--schema", "schema.json", "--out", "m.bin"]);
    assert_eq!(missing.status.code(), Some(3));

    std::fs::write(ws.path("bad.csv"), "A,B,X,Y\na1,b1,1.0,2.0\na3,b1,1.0,2.0\n").unwrap();
    let bad = ws.run(&["fit", "--data", "bad.csv", "--schema", "schema.json", "--out", "m.bin"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("a3"));

    let infeasible = ws.fit(&["--epsilon", "1e-9", "--delta", "1e-12"]);
    assert_eq!(infeasible.status.code(), Some(4), "{}", String::from_utf8_lossy(&infeasible.stderr));

    assert!(ws.fit(&[]).status.success());
    let bytes = std::fs::read(ws.path("model.bin")).unwrap();
    std::fs::write(ws.path("cut.bin"), &bytes[..bytes.len() - 9]).unwrap();
    let corrupt = ws.run(&["sample", "--model", "cut.bin", "--rows", "5", "--out", "x.csv"]);
    assert_eq!(corrupt.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&corrupt.stderr).contains("corrupt payload"));

    let mut bumped = bytes.clone();
    bumped[8] = 2;
    std::fs::write(ws.path("v2.bin"), bumped).unwrap();
    let v2 = ws.run(&["sample", "--model", "v2.bin", "--rows", "5", "--out", "x.csv"]);
    assert_eq!(v2.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&v2.stderr).contains("unsupported format version 2"));

    assert_eq!(ws.run(&["sample", "--model", "model.bin", "--rows", "0", "--out", "x.csv"]).status.code(), Some(2));
}
