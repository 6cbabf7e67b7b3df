use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn devgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_devgraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_then_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let out = dir.path().join("out");
    let r = devgraph(&[
        "synth",
        "--seed",
        "3",
        "--set",
        "size.O=300",
        "--out",
        s(&input),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let conf = input.join("pipeline.conf");
    let r = devgraph(&["pipeline", "--config", s(&conf), "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for name in [
        "report.json",
        "trajectory.csv",
        "deviant_blogs.txt",
        "stats.csv",
        "partition.csv",
        "connectivity_reblog_null_ratio.csv",
        "classes.csv",
        "perception.csv",
        "shrinkage.csv",
        "engagement.csv",
        "age_histogram.csv",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    for section in [
        "extract",
        "stats",
        "communities",
        "connectivity",
        "diffusion",
        "perception",
        "intervention",
        "demographics",
    ] {
        assert!(!report[section].is_null(), "section {section} is empty");
    }
    // The stage JSON matches the report section.
    let stage: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("diffusion.json")).unwrap()).unwrap();
    assert_eq!(stage, report["diffusion"]);
}

#[test]
fn single_stage_with_flags_overriding_config() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    assert!(devgraph(&["synth", "--seed", "5", "--out", s(&input)])
        .status
        .success());
    let out = dir.path().join("out");
    let conf = input.join("pipeline.conf");
    let r = devgraph(&[
        "intervene",
        "--config",
        s(&conf),
        "--sizes",
        "0,1,2",
        "--greedy",
        "--out",
        s(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = fs::read_to_string(out.join("shrinkage.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,1,"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(devgraph(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(
        devgraph(&["stats", "--hops", "many"]).status.code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let r = devgraph(&["synth", "--out", s(dir.path())]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--seed"));
}

#[test]
fn data_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let r = devgraph(&["stats", "--edges", s(&empty), "--out", s(dir.path())]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("empty graph"));

    let missing = dir.path().join("nope.tsv");
    let r = devgraph(&["stats", "--edges", s(&missing), "--out", s(dir.path())]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("nope.tsv"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    assert!(devgraph(&["synth", "--seed", "8", "--out", s(&input)])
        .status
        .success());
    let conf = input.join("pipeline.conf");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(
            devgraph(&["pipeline", "--config", s(&conf), "--out", s(out)])
                .status
                .success()
        );
    }
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}
