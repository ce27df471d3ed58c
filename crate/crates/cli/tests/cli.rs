use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepembed"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const MODELS: &[&str] = &["--vocab", "vocab.bin", "--lsh", "lsh.bin"];

/// Small clean dataset, vocabulary and index in `dir`.
fn pipeline(dir: &Path) {
    ok(
        dir,
        &[
            "gen-synthetic",
            "--out",
            "db.bin",
            "--truth",
            "gt.txt",
            "--groups",
            "10",
            "--distractors",
            "20",
            "--descriptor-noise",
            "0",
            "--context-noise",
            "0",
            "--context-dim",
            "16",
        ],
    );
    ok(dir, &["build-vocab", "--data", "db.bin", "--out", "vocab.bin", "--lsh", "lsh.bin", "--k", "32"]);
    ok(dir, &[&["build-index", "--data", "db.bin", "--out", "idx.bin"], MODELS].concat());
}

fn search_args<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    [&[cmd, "--index", "idx.bin", "--queries", "db.bin"], MODELS, extra].concat()
}

#[test]
fn memstats_reports_per_feature_and_per_image_cost() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["memstats"]);
    assert!(text.contains("22.25"), "{text}");
    assert!(text.contains("12.13 KB"), "{text}");
}

#[test]
fn clean_pipeline_finds_every_group_member() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let text = ok(dir.path(), &search_args("evaluate", &["--truth", "gt.txt", "--sweep", "sweep.csv"]));
    assert!(text.starts_with("N-S 4 "), "{text}");
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 9);
    assert!(sweep.contains("local+regional+global,binary,N-S,4"), "{sweep}");

    let ranked = ok(dir.path(), &search_args("query", &["--id", "5", "--top-k", "3"]));
    // Identical group members tie and are ordered by id.
    let ids: Vec<u32> = ranked.lines().map(|l| l.split(' ').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(ids, [4, 5, 6], "{ranked}");
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        pipeline(dir);
        ok(dir, &search_args("query", &["--format", "csv", "--out", "ranks.csv", "--threads", "3"]));
    }
    for file in ["db.bin", "gt.txt", "vocab.bin", "lsh.bin", "idx.bin", "ranks.csv"] {
        let (x, y) = (std::fs::read(a.path().join(file)).unwrap(), std::fs::read(b.path().join(file)).unwrap());
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn configuration_layers() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.conf"), "images = 1000 # small\navg_keypoints = 500\n").unwrap();
    let from_file = ok(dir.path(), &["memstats", "-c", "run.conf"]);
    assert!(from_file.contains("per image: 12.13 KB"), "{from_file}");
    let out = Command::new(env!("CARGO_BIN_EXE_deepembed"))
        .args(["memstats", "-c", "run.conf", "--images", "2000"])
        .current_dir(dir.path())
        .env("DEEPEMBED_IMAGES", "x")
        .output()
        .unwrap();
    assert!(out.status.success(), "flags override the environment");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["memstats", "--no-such-flag", "1"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.conf"), "no_such_key = 1\n").unwrap();
    assert_eq!(run(dir.path(), &["memstats", "-c", "bad.conf"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["memstats", "--images", "lots"]).status.code(), Some(2));
    let missing = run(dir.path(), &search_args("query", &[]));
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error: "));
}
