use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.json");

fn mmadapt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmadapt")).args(args).output().unwrap()
}

fn last_line(out: &Output) -> PathBuf {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout.clone()).unwrap();
    PathBuf::from(stdout.lines().last().expect("no output"))
}

/// Asserts a nonzero exit with exactly one `error: <kind>: ...` line.
fn fails_with(out: &Output, kind: &str) {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    assert!(lines[0].starts_with(&format!("error: {kind}: ")), "{stderr}");
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(SMOKE).unwrap()).unwrap();
    edit(&mut cfg);
    let path = dir.join("config-edited.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let gen = last_line(&mmadapt(&["gen", "--config", SMOKE, "--out", s(out)]));
    assert_eq!(gen, out.join("config.json"));
    assert!(out.join("corpora/tgt/manifest.json").exists());

    let pre = last_line(&mmadapt(&["pretrain", "--config", SMOKE, "--out", s(out)]));
    assert_eq!(pre, out.join("pretrain.txt"));
    assert!(out.join("base.ckpt").exists());
    let pretrain = json(&out.join("pretrain.json"));
    let languages: Vec<&str> = pretrain["test"].as_array().unwrap().iter().map(|m| m["language"].as_str().unwrap()).collect();
    assert_eq!(languages, ["pre1", "pre2", "tgt"]);

    let adapt = mmadapt(&["adapt", "--config", SMOKE, "--out", s(out), "--run", "base", "--run", "system_a"]);
    let table = last_line(&adapt);
    assert_eq!(table, out.join("runs/table.txt"));
    let stdout = String::from_utf8(adapt.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3);

    let base = json(&out.join("runs/base/report.json"));
    assert_eq!(base["before"], base["after"]);
    assert_eq!(base["learnable_parameters"], 0);
    let a = json(&out.join("runs/system_a/report.json"));
    let counts = a["parameter_counts"].as_array().unwrap();
    let enc = counts.iter().find(|c| c[0] == "encoder_adapters").unwrap();
    assert_eq!(a["learnable_parameters"], enc[1]);
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.contains("encoder_adapters"), "{text}");
    assert!(text.contains("tgt WER") && text.contains('*'), "{text}");

    let eval_out = out.join("eval.json");
    let eval = last_line(&mmadapt(&[
        "eval",
        "--config",
        SMOKE,
        "--checkpoint",
        s(&out.join("runs/system_a/adapted.ckpt")),
        "--corpus",
        s(&out.join("corpora/tgt")),
        "--mode",
        "type",
        "--out",
        s(&eval_out),
    ]));
    assert_eq!(eval, eval_out);
    let e = json(&eval_out);
    assert_eq!(e["oov_mode"], "type");
    assert_eq!(e["metrics"], a["after"]);
    assert_eq!(e["hypotheses"].as_array().unwrap().len(), 10);

    let single = out.join("single.txt");
    let report = last_line(&mmadapt(&["report", "--out", s(&single), s(&out.join("runs/system_a/report.json"))]));
    assert_eq!(report, single);
    let t = std::fs::read_to_string(&single).unwrap();
    assert_eq!(t.lines().next().unwrap().matches('|').count(), 1, "{t}");
}

#[test]
fn gen_is_byte_identical_and_seed_matters() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        last_line(&mmadapt(&["gen", "--config", SMOKE, "--out", s(d.path())]));
    }
    last_line(&mmadapt(&["gen", "--config", SMOKE, "--out", s(c.path()), "--seed", "7"]));
    let file = "corpora/tgt/train.bin";
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join(file)).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(json(&c.path().join("config.json"))["seed"], 7);
}

#[test]
fn zero_shot_language_is_test_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| {
        let mut zs = c["languages"][2].clone();
        zs["name"] = "zs".into();
        zs["corpus"]["n_train"] = 0.into();
        zs["corpus"]["n_valid"] = 0.into();
        zs["corpus"]["n_text"] = 0.into();
        zs["corpus"]["held_out_fraction"] = 0.0.into();
        c["languages"].as_array_mut().unwrap().push(zs);
    });
    let out = dir.path().join("out");
    last_line(&mmadapt(&["gen", "--config", s(&cfg), "--out", s(&out)]));
    let zs = out.join("corpora/zs");
    let mut files: Vec<String> =
        std::fs::read_dir(&zs).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, ["language.json", "manifest.json", "test.bin"]);
}

#[test]
fn errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    fails_with(&mmadapt(&["gen", "--config", "/nonexistent.json", "--out", s(out)]), "io");

    let bad_key = write_config(out, |c| {
        c["training"]["epochz"] = 3.into();
    });
    fails_with(&mmadapt(&["gen", "--config", s(&bad_key), "--out", s(out)]), "json");

    let bad_recipe = write_config(out, |c| {
        c["runs"][1]["recipe"] = "system_b".into();
    });
    fails_with(&mmadapt(&["gen", "--config", s(&bad_recipe), "--out", s(out)]), "json");

    fails_with(&mmadapt(&["pretrain", "--config", SMOKE, "--out", s(&out.join("empty"))]), "io");
    fails_with(&mmadapt(&["gen", "--config", SMOKE]), "usage");
    fails_with(&mmadapt(&["report", "--out", s(&out.join("t.txt"))]), "usage");
    fails_with(&mmadapt(&["eval", "--config", SMOKE, "--checkpoint", "x", "--corpus", "y", "--mode", "words"]), "usage");
    fails_with(&mmadapt(&["frobnicate"]), "usage");
}

#[test]
fn recipe_and_corpus_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| {
        c["languages"][2]["corpus"]["n_text"] = 0.into();
        c["training"]["pretrain_epochs"] = 1.into();
    });
    let out = dir.path().join("out");
    last_line(&mmadapt(&["gen", "--config", s(&cfg), "--out", s(&out)]));
    last_line(&mmadapt(&["pretrain", "--config", s(&cfg), "--out", s(&out)]));
    fails_with(&mmadapt(&["adapt", "--config", s(&cfg), "--out", s(&out), "--run", "text_only"]), "config");
    fails_with(&mmadapt(&["adapt", "--config", s(&cfg), "--out", s(&out), "--run", "nope"]), "config");
    let bogus = dir.path().join("bogus.ckpt");
    std::fs::write(&bogus, b"ADPLxx").unwrap();
    fails_with(&mmadapt(&["adapt", "--config", s(&cfg), "--out", s(&out), "--checkpoint", s(&bogus)]), "checkpoint");
}
