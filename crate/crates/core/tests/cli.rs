use std::path::Path;
use std::process::{Command, Output};

use scci::image::load_image;
use scci::manifest::load_manifest;

fn scci(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scci")).args(args).env_remove("SCCI_CONFIG").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = scci(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a small light corpus, a small dark corpus and a model trained on both.
fn fixture(dir: &Path) {
    ok(&["synthbench", "corpus", "--domain", "light", "--n", "6", "--resolution", "16", "--seed", "1", "--out", p(&dir.join("light"))]);
    ok(&["synthbench", "corpus", "--domain", "dark", "--n", "6", "--resolution", "16", "--seed", "2", "--out", p(&dir.join("dark"))]);
    ok(&[
        "train",
        "--manifest",
        p(&dir.join("light/manifest.jsonl")),
        "--out",
        p(&dir.join("model.bin")),
        "--epochs",
        "1",
        "--resolution",
        "16",
        "--seed",
        "7",
    ]);
}

#[test]
fn usage_errors_exit_2() {
    let out = scci(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(scci(&[]).status.code(), Some(2));
    assert_eq!(scci(&["transfer", "--model", "m.bin"]).status.code(), Some(2));
    assert_eq!(scci(&["edit", "--model", "m", "--image", "i", "--out", "o", "--set", "nonsense"]).status.code(), Some(2));
}

#[test]
fn validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = scci(&["transfer", "--model", "/missing.bin", "--structure", "a.png", "--colour", "b.png", "--out", p(&dir.path().join("c.png"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = scci(&["train", "--manifest", p(&empty), "--out", p(&dir.path().join("m.bin"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scci.toml");
    std::fs::write(&cfg, "seed = 3\nresolution = 8\n").unwrap();
    let run = |extra: &[&str], out: &str| {
        let mut args = vec!["synthbench", "corpus", "--domain", "dark", "--n", "2", "--out"];
        let out = dir.path().join(out);
        args.push(p(&out));
        args.extend_from_slice(extra);
        let status = Command::new(env!("CARGO_BIN_EXE_scci")).args(&args).env("SCCI_CONFIG", &cfg).status().unwrap();
        assert!(status.success());
        load_image(out.join("dark-00000.png")).unwrap()
    };
    assert_eq!(run(&[], "a").shape(), (8, 8));
    assert_eq!(run(&["--resolution", "12"], "b").shape(), (12, 12));
    let same_seed = run(&["--seed", "3"], "c");
    assert_eq!(run(&[], "d"), same_seed);

    std::fs::write(&cfg, "unknown_key = 1\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_scci"))
        .args(["synthbench", "corpus", "--domain", "dark", "--n", "1", "--out", p(&dir.path().join("e"))])
        .env("SCCI_CONFIG", &cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn pipeline_commands_honour_their_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let model = d.join("model.bin");

    let structure = d.join("light/light-00000.png");
    ok(&["transfer", "--model", p(&model), "--structure", p(&structure), "--colour", p(&d.join("dark/dark-00001.png")), "--out", p(&d.join("t.png"))]);
    assert_eq!(load_image(d.join("t.png")).unwrap().shape(), load_image(&structure).unwrap().shape());

    ok(&["edit", "--model", p(&model), "--image", p(&structure), "--set", "0=1.5", "--set", "5=-0.5", "--out", p(&d.join("e.png"))]);
    assert_eq!(load_image(d.join("e.png")).unwrap().shape(), (16, 16));

    let targets = d.join("targets.jsonl");
    ok(&["encode", "--model", p(&model), "--manifest", p(&d.join("dark/manifest.jsonl")), "--out", p(&targets)]);
    assert_eq!(scci::embedding::read_embeddings(&targets).unwrap().len(), 6);

    ok(&[
        "augment",
        "--model",
        p(&model),
        "--source",
        p(&d.join("light/manifest.jsonl")),
        "--targets",
        p(&targets),
        "--k",
        "2",
        "--out",
        p(&d.join("aug")),
    ]);
    let aug = load_manifest(d.join("aug/manifest.jsonl")).unwrap();
    assert_eq!(aug.len(), 12);
    assert!(aug.entries().iter().all(|e| e.label.is_some() && e.source_id.is_some()));

    ok(&["normalize", "--model", p(&model), "--data", p(&d.join("dark/manifest.jsonl")), "--out", p(&d.join("norm"))]);
    assert_eq!(load_manifest(d.join("norm/manifest.jsonl")).unwrap().len(), 6);

    let report = d.join("bench.json");
    ok(&[
        "synthbench",
        "benchmark",
        "--train",
        p(&d.join("light/manifest.jsonl")),
        "--test",
        p(&d.join("dark/manifest.jsonl")),
        "--seeds",
        "0,1",
        "--epochs",
        "1",
        "--out",
        p(&report),
    ]);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["accuracies"].as_array().unwrap().len(), 2);
}
