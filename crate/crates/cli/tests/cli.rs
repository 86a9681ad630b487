use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn mdmfed(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdmfed"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mdmfed(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

fn generated(clients: &str) -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    ok(
        &dir,
        &[
            "gen-synthetic",
            "--preset",
            "appendixA",
            "--clients",
            clients,
            "--seed",
            "7",
            "--out",
            "pop.jsonl",
            "--truth-out",
            "truth.json",
        ],
    );
    (tmp, dir)
}

#[test]
fn select_k_recovers_three_components() {
    let (_tmp, dir) = generated("1000");
    let out = ok(
        &dir,
        &[
            "--deterministic",
            "select-k",
            "--input",
            "pop.jsonl",
            "--candidates",
            "1,2,3,4,5,6",
            "--rounds",
            "100",
            "--val-cohort",
            "200",
            "--seed",
            "7",
            "--out",
            "sel.json",
            "--csv",
            "sel.csv",
        ],
    );
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "chosen_k=3");
    assert_eq!(json(&dir, "sel.json")["chosen_k"], 3);
    assert_eq!(read(&dir, "sel.csv").lines().count(), 7);
    let manifest = json(&dir, "sel.json.manifest.json");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["subcommand"], "select-k");
}

#[test]
fn zero_rounds_returns_initialization() {
    let (_tmp, dir) = generated("300");
    ok(
        &dir,
        &[
            "infer",
            "--input",
            "pop.jsonl",
            "--k",
            "3",
            "--rounds",
            "0",
            "--seed",
            "3",
            "--out",
            "p.json",
            "--snapshots",
            "s.jsonl",
            "--trace",
            "t.csv",
        ],
    );
    let snaps = read(&dir, "s.jsonl");
    assert_eq!(snaps.lines().count(), 1);
    let first: Value = serde_json::from_str(snaps.lines().next().unwrap()).unwrap();
    assert_eq!(first["params"], json(&dir, "p.json"));
    assert_eq!(read(&dir, "t.csv").lines().count(), 2);
}

#[test]
fn eval_of_truth_against_itself_is_zero() {
    let (_tmp, dir) = generated("50");
    let out = ok(
        &dir,
        &["eval", "--fitted", "truth.json", "--truth", "truth.json"],
    );
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["nmse_tau", "nmse_alpha", "nmse_pi"] {
        assert_eq!(report[key].as_f64(), Some(0.0), "{key}");
    }
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let (_tmp, dir) = generated("200");
    for out in ["a.json", "b.json"] {
        ok(
            &dir,
            &[
                "--deterministic",
                "--threads",
                "3",
                "infer",
                "--input",
                "pop.jsonl",
                "--k",
                "2",
                "--rounds",
                "15",
                "--seed",
                "11",
                "--out",
                out,
            ],
        );
    }
    assert_eq!(read(&dir, "a.json"), read(&dir, "b.json"));
    ok(
        &dir,
        &[
            "gen-synthetic",
            "--preset",
            "appendixA",
            "--clients",
            "200",
            "--seed",
            "7",
            "--out",
            "again.jsonl",
        ],
    );
    assert_eq!(read(&dir, "pop.jsonl"), read(&dir, "again.jsonl"));
}

#[test]
fn exit_codes_distinguish_failures() {
    let (_tmp, dir) = generated("20");
    assert_eq!(mdmfed(&dir, &["infer", "--bogus"]).status.code(), Some(1));
    assert_eq!(mdmfed(&dir, &["frobnicate"]).status.code(), Some(1));
    // Seeds are mandatory.
    assert_eq!(
        mdmfed(
            &dir,
            &[
                "infer",
                "--input",
                "pop.jsonl",
                "--k",
                "2",
                "--rounds",
                "1",
                "--out",
                "x.json"
            ]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        mdmfed(
            &dir,
            &[
                "infer",
                "--input",
                "pop.jsonl",
                "--k",
                "2",
                "--rounds",
                "1",
                "--seed",
                "1",
                "--out",
                "pop.jsonl"
            ]
        )
        .status
        .code(),
        Some(1)
    );

    std::fs::write(dir.join("bad.jsonl"), "{\"c\":[1,2],\"n\":4}\n").unwrap();
    let out = mdmfed(
        &dir,
        &[
            "infer",
            "--input",
            "bad.jsonl",
            "--k",
            "1",
            "--rounds",
            "1",
            "--seed",
            "1",
            "--out",
            "x.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    assert_eq!(
        mdmfed(
            &dir,
            &[
                "infer",
                "--input",
                "pop.jsonl",
                "--k",
                "50",
                "--rounds",
                "1",
                "--seed",
                "1",
                "--out",
                "x.json"
            ]
        )
        .status
        .code(),
        Some(2)
    );

    std::fs::write(dir.join("neg.csv"), "client_id,feature\na,100\nb,-5\n").unwrap();
    std::fs::write(
        dir.join("income.json"),
        r#"{"mode":"fixed_width","lower":0,"width":5000,"bins":41}"#,
    )
    .unwrap();
    let out = mdmfed(
        &dir,
        &[
            "ingest",
            "--input",
            "neg.csv",
            "--binning",
            "income.json",
            "--out",
            "p2.jsonl",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn ingest_partition_export_pipeline() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let mut csv = String::from("client_id,feature\n");
    for i in 0..60 {
        csv.push_str(&format!(
            "u{},{}\n",
            i % 6,
            ["red", "green", "blue"][(i * 7 / 3) % 3]
        ));
    }
    std::fs::write(dir.join("rows.csv"), csv).unwrap();
    std::fs::write(
        dir.join("colors.json"),
        r#"{"mode":"categorical","vocabulary":["red","green","blue"]}"#,
    )
    .unwrap();
    ok(
        dir,
        &[
            "ingest",
            "--input",
            "rows.csv",
            "--binning",
            "colors.json",
            "--out",
            "pop.jsonl",
            "--pool-out",
            "pool.json",
            "--ids-out",
            "ids.txt",
        ],
    );
    assert_eq!(read(dir, "pop.jsonl").lines().count(), 6);
    assert_eq!(read(dir, "ids.txt").lines().next(), Some("u0"));
    assert!(dir.join("pop.jsonl.manifest.json").exists());

    ok(
        dir,
        &[
            "partition",
            "--pool",
            "pool.json",
            "--generator",
            "conditionally-iid",
            "--true-pop",
            "pop.jsonl",
            "--seed",
            "1",
            "--out",
            "plan.jsonl",
        ],
    );
    let pop = read(dir, "pop.jsonl");
    for (plan_line, pop_line) in read(dir, "plan.jsonl").lines().zip(pop.lines()) {
        let plan: Value = serde_json::from_str(plan_line).unwrap();
        let rec: Value = serde_json::from_str(pop_line).unwrap();
        assert_eq!(plan["target_c"], rec["c"]);
    }

    ok(
        dir,
        &[
            "infer",
            "--input",
            "pop.jsonl",
            "--k",
            "1",
            "--rounds",
            "5",
            "--seed",
            "2",
            "--out",
            "fit.json",
        ],
    );
    ok(
        dir,
        &[
            "partition",
            "--pool",
            "pool.json",
            "--params",
            "fit.json",
            "--clients",
            "25",
            "--seed",
            "3",
            "--out",
            "mdm.jsonl",
        ],
    );
    assert_eq!(read(dir, "mdm.jsonl").lines().count(), 25);
    ok(
        dir,
        &[
            "partition",
            "--pool",
            "pool.json",
            "--generator",
            "fully-iid",
            "--n-point",
            "8",
            "--clients",
            "4",
            "--seed",
            "3",
            "--out",
            "iid.jsonl",
        ],
    );
    assert_eq!(
        mdmfed(
            dir,
            &[
                "partition",
                "--pool",
                "pool.json",
                "--clients",
                "4",
                "--seed",
                "3",
                "--out",
                "x.jsonl"
            ]
        )
        .status
        .code(),
        Some(1)
    );

    ok(
        dir,
        &[
            "export-histograms",
            "--input",
            "mdm.jsonl",
            "--out",
            "hist.csv",
        ],
    );
    let hist = read(dir, "hist.csv");
    assert_eq!(hist.lines().count(), 26);
    assert!(hist.starts_with("p_0,p_1,p_2\n"));
    ok(
        dir,
        &[
            "export-histograms",
            "--input",
            "pop.jsonl",
            "--out",
            "pop_hist.csv",
        ],
    );
    for row in read(dir, "pop_hist.csv").lines().skip(1) {
        let total: f64 = row.split(',').map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn help_marks_the_oracle_generator() {
    let out = ok(Path::new("."), &["partition", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("TEST-ONLY ORACLE"), "{text}");
}
