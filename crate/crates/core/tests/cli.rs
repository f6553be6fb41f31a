//! The `agora` binary driven end to end against a temporary data dir.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn agora(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agora"))
        .arg("--data-dir")
        .arg(data)
        .args(args)
        .output()
        .unwrap()
}

fn json_stdout(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn synth_analyze_and_constitution() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = json_stdout(&agora(
        &data,
        &["synth", "--participants", "60", "--statements", "12", "--blocs", "2", "--noise", "0.05", "--seed", "1"],
    ));
    assert_eq!(out["groups"], 2);
    let id = out["conversation"].as_str().unwrap().to_string();
    assert!(data.join(format!("{id}.jsonl")).exists());

    let reports = dir.path().join("reports");
    let summary = json_stdout(&agora(&data, &["analyze", "--conversation", &id, "--out", reports.to_str().unwrap()]));
    assert_eq!(summary["groups"], 2);
    for f in ["report.json", "votes.csv", "snapshot.json", "gac_histogram.svg", "polarization_histograms.svg"] {
        assert!(reports.join(f).exists(), "{f}");
    }
    let strict = dir.path().join("strict");
    json_stdout(&agora(&data, &["analyze", "--conversation", &id, "--out", strict.to_str().unwrap(), "--exclude-passes"]));
    let report: Value = serde_json::from_str(&fs::read_to_string(strict.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass_policy"], "ExcludeFromSeen");

    let svg = fs::read_to_string(reports.join("gac_histogram.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("class=\"bar\""));

    // Synthetic texts match no rewrite rule, so export needs overrides.
    let failed = agora(&data, &["constitution", "--conversation", &id, "--budget", "3", "--out", reports.to_str().unwrap()]);
    assert!(!failed.status.success());
    assert!(String::from_utf8_lossy(&failed.stderr).contains("operator"));

    let overrides: serde_json::Map<String, Value> = (0..12)
        .map(|i| (i.to_string(), Value::String(format!("Choose the response that reflects idea {i}"))))
        .collect();
    let path = dir.path().join("overrides.json");
    fs::write(&path, Value::Object(overrides).to_string()).unwrap();
    let made = json_stdout(&agora(
        &data,
        &["constitution", "--conversation", &id, "--budget", "3", "--overrides", path.to_str().unwrap(), "--out", reports.to_str().unwrap()],
    ));
    assert_eq!(made["principles"], 3);
    let text = fs::read_to_string(reports.join("constitution.txt")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("1. Choose the response that reflects idea "));
}

#[test]
fn import_with_custom_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("votes.csv");
    fs::write(&csv, "voter,comment,choice\na,10,agree\na,20,disagree\nb,10,skip\nb,10,agree\n").unwrap();
    let out = json_stdout(&agora(
        &dir.path().join("data"),
        &[
            "import", "--file", csv.to_str().unwrap(),
            "--participant-col", "voter", "--statement-col", "comment", "--vote-col", "choice",
            "--agree", "agree", "--disagree", "disagree", "--pass", "skip",
        ],
    ));
    assert_eq!(out["rows"], 4);
    assert_eq!(out["statements"], 2);
    assert_eq!(out["participants"], 2);
    assert_eq!(out["effective_votes"], 3);

    let bad = agora(&dir.path().join("data"), &["import", "--file", csv.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("missing column"));
}

#[test]
fn elo_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.csv");
    let mut csv = String::from("model_a,model_b,winner,dimension\n");
    for i in 0..500 {
        let w = if i < 266 { "A" } else { "B" };
        csv.push_str(&format!("standard,baseline,{w},harmlessness\n"));
        csv.push_str(&format!("standard,baseline,{},helpfulness\n", if i % 2 == 0 { "A" } else { "B" }));
    }
    fs::write(&records, csv).unwrap();
    let json = dir.path().join("elo.json");
    let out = agora(
        dir.path(),
        &["elo", "--records", records.to_str().unwrap(), "--anchor", "baseline", "--resamples", "50", "--seed", "3", "--json", json.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("standard") && table.contains("baseline"));
    let report: Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    let harmless = report["entries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["model"] == "standard" && e["dimension"] == "Harmlessness")
        .unwrap();
    assert!((harmless["rating"].as_f64().unwrap() - 22.27).abs() < 0.01);

    let missing = agora(dir.path(), &["elo", "--records", records.to_str().unwrap(), "--anchor", "nobody"]);
    assert!(!missing.status.success());
}

#[test]
fn serve_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("serve.json");
    fs::write(&cfg, "{\"address\": \"not an address\"}").unwrap();
    let out = agora(&dir.path().join("data"), &["serve", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("serve.json"));
}
