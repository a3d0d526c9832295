use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use rewire_core::diagnostics::{decompose_summary, ArmRun, Direction, ThreeArmReport, SCHEMA_VERSION};
use rewire_core::trainers::Mode;

const PLANTED_ST: &str = r#"
name = "planted"
seeds = [1, 2, 3]
[dataset]
kind = "synth_st"
n_nodes = 10
steps = 240
window = 6
horizon = 1
knn = 2
slack = { added = 0.5, removed = 0.0 }
[train]
epochs = 1
inner_steps = 2
batch_size = 32
"#;

fn lab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rewire-lab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn decompose_identity_and_layout() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "c.toml", PLANTED_ST);
    let o = lab(&["decompose", "--config", "c.toml", "--out", "d"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(&tmp.path().join("d"));
    assert_eq!(s["schema"], SCHEMA_VERSION);
    assert_eq!(s["status"], "ok");
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    let d = &s["report"]["decomposition"];
    let (i, g, t) = (
        d["delta_inner"].as_f64().unwrap(),
        d["delta_graph"].as_f64().unwrap(),
        d["delta_total"].as_f64().unwrap(),
    );
    assert!((i + g - t).abs() < 1e-12);
    for seed in [1, 2, 3] {
        let dir = tmp.path().join("d").join(format!("seed-{}", seed));
        let files: Vec<_> = std::fs::read_dir(&dir).unwrap().collect();
        assert_eq!(files.len(), 3, "one record per arm in {}", dir.display());
        let rec: Value =
            serde_json::from_str(&std::fs::read_to_string(files[0].as_ref().unwrap().path()).unwrap()).unwrap();
        assert_eq!(rec["seed"], seed);
        assert_eq!(rec["config_hash"], s["config_hash"]);
    }
}

#[test]
fn tsweep_t1_matches_vanilla() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "c.toml", &format!("{}\n[tsweep]\nt_values = [1, 5]\n", PLANTED_ST));
    let o = lab(&["tsweep", "--config", "c.toml", "--out", "t", "--seed-list", "7,8"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(&tmp.path().join("t"));
    let cells = s["report"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 4);
    for arm in ["frozen_phi", "bilevel"] {
        let ts: Vec<u64> = cells.iter().filter(|c| c["arm"] == arm).map(|c| c["t"].as_u64().unwrap()).collect();
        assert_eq!(ts, [1, 5]);
    }
    assert_eq!(s["report"]["t1_equals_vanilla"], true);
    assert_eq!(s["config"]["seeds"], json!([7, 8]));
}

#[test]
fn resume_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "c.toml", PLANTED_ST);
    let args = ["decompose", "--config", "c.toml", "--out", "r", "--jobs", "2"];
    let first = lab(&args, tmp.path());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert!(stderr(&first).contains("(9 trained, 0 reused)"), "{}", stderr(&first));
    let bytes = std::fs::read(tmp.path().join("r/summary.json")).unwrap();

    let resumed = lab(&[&args[..], &["--resume"]].concat(), tmp.path());
    assert_eq!(resumed.status.code(), Some(0));
    assert!(stderr(&resumed).contains("(0 trained, 9 reused)"), "{}", stderr(&resumed));
    assert_eq!(std::fs::read(tmp.path().join("r/summary.json")).unwrap(), bytes);

    let again = lab(&["decompose", "--config", "c.toml", "--out", "r", "--jobs", "1"], tmp.path());
    assert!(stderr(&again).contains("(9 trained, 0 reused)"));
    assert_eq!(std::fs::read(tmp.path().join("r/summary.json")).unwrap(), bytes);
}

fn table2_summary(dir: &Path) -> rewire_core::diagnostics::DecompositionReport {
    let d = decompose_summary(Direction::SmallerBetter, [20.925, 20.011, 19.754], [0.043, 0.034, 0.036]);
    let empty = |mode| ArmRun {
        mode,
        seeds: vec![],
        metrics: vec![],
        failures: vec![],
    };
    let report = ThreeArmReport {
        schema: SCHEMA_VERSION,
        vanilla: empty(Mode::Vanilla),
        frozen: empty(Mode::FrozenPhi),
        bilevel: empty(Mode::Bilevel),
        decomposition: Some(d.clone()),
    };
    let s = json!({
        "schema": SCHEMA_VERSION,
        "experiment": "decompose",
        "name": "PeMS04",
        "config_hash": "0",
        "config": {},
        "status": "ok",
        "runs": 0,
        "failed_runs": [],
        "error": null,
        "report": report,
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string(&s).unwrap()).unwrap();
    d
}

#[test]
fn report_renders_share_column() {
    let tmp = tempfile::tempdir().unwrap();
    table2_summary(tmp.path());
    let o = lab(&["report", "--format", "markdown", "summary.json"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let md = String::from_utf8(o.stdout).unwrap();
    let row = md.lines().find(|l| l.starts_with("| PeMS04")).unwrap();
    let cells: Vec<&str> = row.split('|').map(str::trim).collect();
    assert_eq!(cells[2], "20.925 ± 0.043");
    assert_eq!(cells[5], "78%");
    assert_eq!(cells[6], "22%");
}

#[test]
fn csv_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let d = table2_summary(tmp.path());
    let o = lab(&["report", "--format", "csv", "--out", "rendered", "."], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("rendered/report.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()].parse::<f64>().unwrap();
    assert_eq!(col("vanilla_mean"), d.vanilla.mean);
    assert_eq!(col("bilevel_std"), d.bilevel.std);
    assert_eq!(col("delta_inner"), d.delta_inner);
    assert_eq!(col("delta_graph"), d.delta_graph);
    assert_eq!(col("inner_share_pct"), d.inner_share_pct.unwrap());
}

#[test]
fn schema_mismatch_names_versions() {
    let tmp = tempfile::tempdir().unwrap();
    table2_summary(tmp.path());
    let p = tmp.path().join("summary.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    v["schema"] = json!(99);
    std::fs::write(&p, v.to_string()).unwrap();
    let o = lab(&["report", "summary.json"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("99") && e.contains(&format!("version {}", SCHEMA_VERSION)), "{}", e);
}

#[test]
fn config_errors_exit_one_before_compute() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "typo.toml", "[train]\nepochz = 3\n");
    let o = lab(&["train", "--config", "typo.toml", "--out", "x"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epochz"));

    write_config(
        tmp.path(),
        "reset.toml",
        &format!("{}regime = \"fullbatch_reset\"\n", PLANTED_ST),
    );
    let o = lab(&["decompose", "--config", "reset.toml", "--out", "y"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("vanilla"), "{}", stderr(&o));
    assert!(!tmp.path().join("y").exists());

    let o = lab(&["decompose", "--config", "c.toml", "--seed-list", "1,1"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let o = lab(&["nonsense"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn diverging_runs_are_a_total_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let text = PLANTED_ST.replace("batch_size = 32", "batch_size = 32\ninner_lr = 1e200\ngrad_clip = 1e300");
    write_config(tmp.path(), "c.toml", &text);
    let o = lab(&["train", "--config", "c.toml", "--out", "f"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let s = summary(&tmp.path().join("f"));
    assert_eq!(s["status"], "failed");
    assert_eq!(s["failed_runs"].as_array().unwrap().len(), 3);
}
