//! CLI acceptance: every run writes back its resolved config, and
//! re-executing that config reproduces all artifacts bit for bit (wall
//! times excepted, which live in their own file).
//!
//! Run with `cargo test -p rte-cli --test acceptance -- --nocapture`.

use std::fs;
use std::path::Path;
use std::process::Command;

fn rte() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rte"))
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Bitwise compare every artifact except `resolved.cfg` (its `out` key
/// intentionally differs) and `timing.csv` (wall clock).
fn assert_dirs_match(a: &Path, b: &Path) {
    let mut names: Vec<String> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        if name == "timing.csv" {
            continue;
        }
        let (fa, fb) = (a.join(&name), b.join(&name));
        assert!(fb.exists(), "{name} missing from rerun");
        if name == "resolved.cfg" {
            let strip = |p: &Path| {
                read(p)
                    .lines()
                    .filter(|l| !l.starts_with("out = "))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(&fa), strip(&fb), "resolved.cfg differs beyond out");
        } else {
            assert_eq!(
                fs::read(&fa).unwrap(),
                fs::read(&fb).unwrap(),
                "{name} differs between runs"
            );
        }
    }
}

fn tiny_train_args(out: &Path) -> Vec<String> {
    [
        "train",
        "--seed",
        "3",
        "--blobs_n",
        "96",
        "--epochs",
        "3",
        "--hidden",
        "8",
        "--timesteps",
        "3",
        "--steps",
        "2",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain(["--out".to_string(), out.to_string_lossy().into_owned()])
    .collect()
}

#[test]
fn criterion_9_resolved_config_reproduces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run_a = dir.path().join("a");
    let status = rte().args(tiny_train_args(&run_a)).status().unwrap();
    assert!(status.success());

    // rerun purely from the emitted resolved config
    let run_b = dir.path().join("b");
    let status = rte()
        .args([
            "train",
            "--config",
            run_a.join("resolved.cfg").to_str().unwrap(),
            "--out",
            run_b.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_dirs_match(&run_a, &run_b);

    // same for the analysis commands driven off the checkpoint
    let ckpt = run_a.join("checkpoint.json");
    for (cmd, extra) in [
        ("eval", vec![]),
        ("transfer-matrix", vec![]),
        ("loss-surface", vec!["--resolution", "5"]),
    ] {
        let out_1 = dir.path().join(format!("{cmd}-1"));
        let out_2 = dir.path().join(format!("{cmd}-2"));
        for out in [&out_1, &out_2] {
            let status = rte()
                .arg(cmd)
                .args([
                    "--config",
                    run_a.join("resolved.cfg").to_str().unwrap(),
                    "--checkpoint",
                    ckpt.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                ])
                .args(&extra)
                .status()
                .unwrap();
            assert!(status.success(), "{cmd} failed");
        }
        assert_dirs_match(&out_1, &out_2);
    }

    println!("[PASS] criterion 9: rerunning from the emitted resolved config reproduces all artifacts bit for bit");
}

#[test]
fn train_then_eval_round_trips_final_clean_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("train");
    assert!(rte().args(tiny_train_args(&run)).status().unwrap().success());

    let eval_out = dir.path().join("eval");
    assert!(rte()
        .args([
            "eval",
            "--config",
            run.join("resolved.cfg").to_str().unwrap(),
            "--checkpoint",
            run.join("checkpoint.json").to_str().unwrap(),
            "--out",
            eval_out.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());

    let last_epoch = read(&run.join("epochs.csv"));
    let final_clean: f64 = last_epoch
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    let eval_clean: f64 = read(&eval_out.join("eval.csv"))
        .lines()
        .find(|l| l.starts_with("clean,"))
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(
        (final_clean - eval_clean).abs() < 1e-9,
        "train log {final_clean} vs eval {eval_clean}"
    );
}

#[test]
fn zero_budget_matrix_file_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("train");
    assert!(rte().args(tiny_train_args(&run)).status().unwrap().success());

    let out = dir.path().join("matrix");
    assert!(rte()
        .args([
            "transfer-matrix",
            "--config",
            run.join("resolved.cfg").to_str().unwrap(),
            "--checkpoint",
            run.join("checkpoint.json").to_str().unwrap(),
            "--epsilon",
            "0",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    for line in read(&out.join("matrix.csv")).lines() {
        for cell in line.split(',') {
            assert_eq!(cell, "0", "nonzero entry in zero-budget matrix");
        }
    }
}

#[test]
fn eval_worst_case_is_bounded_by_each_attack() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("train");
    assert!(rte().args(tiny_train_args(&run)).status().unwrap().success());

    let out = dir.path().join("eval");
    assert!(rte()
        .args([
            "eval",
            "--config",
            run.join("resolved.cfg").to_str().unwrap(),
            "--checkpoint",
            run.join("checkpoint.json").to_str().unwrap(),
            "--eval_attacks",
            "pgd@0x10,pgd@0.05x10",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());

    let body = read(&out.join("eval.csv"));
    let field = |prefix: &str| -> f64 {
        body.lines()
            .find(|l| l.starts_with(prefix))
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    let clean = field("clean");
    let zero_eps = field("pgd@0x10");
    let real = field("pgd@0.05x10");
    let worst = field("worst_case");
    assert_eq!(clean, zero_eps, "zero-budget attack must match clean accuracy");
    assert!(worst <= zero_eps + 1e-12);
    assert!(worst <= real + 1e-12);
}

#[test]
fn exit_codes_match_error_classes() {
    let dir = tempfile::tempdir().unwrap();

    // config error: unknown key in file
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "junk = 1\n").unwrap();
    let status = rte()
        .args(["train", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    // config error: constraint violation names the key
    let out = rte().args(["train", "--epsilon=-1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));

    // io error: missing checkpoint
    let status = rte()
        .args(["eval", "--out", dir.path().join("x").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    // contract violation at runtime: surface index past the eval set
    let run = dir.path().join("train");
    assert!(rte().args(tiny_train_args(&run)).status().unwrap().success());
    let status = rte()
        .args([
            "loss-surface",
            "--config",
            run.join("resolved.cfg").to_str().unwrap(),
            "--checkpoint",
            run.join("checkpoint.json").to_str().unwrap(),
            "--surface_index",
            "100000",
            "--out",
            dir.path().join("y").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
}
