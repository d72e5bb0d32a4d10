use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.json")
}

fn iqstream(args: &[&str], out: &Path) -> Output {
    let out_arg = out.to_str().unwrap();
    Command::new(env!("CARGO_BIN_EXE_iqstream"))
        .args(args)
        .args(["--out", out_arg])
        .env("IQSTREAM_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str], out: &Path) -> Output {
    let o = iqstream(args, out);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn full_run(out: &Path) {
    let cfg = tiny_config();
    let cfg = cfg.to_str().unwrap();
    ok(&["gen-corpus", "--config", cfg], out);
    ok(&["train-asr", "--config", cfg], out);
    ok(&["train-iq", "--config", cfg], out);
    ok(&["train-baseline", "--config", cfg, "--kind", "acoustic"], out);
    ok(&["train-baseline", "--config", cfg, "--kind", "acoustic-text"], out);
    ok(&["evaluate", "--config", cfg], out);
    ok(&["decode", "--config", cfg], out);
}

#[test]
fn pipeline_runs_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    full_run(a.path());
    full_run(b.path());

    for name in ["asr.iqck", "iq.iqck", "acoustic.json", "acoustic_text.json", "trace.jsonl"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between identical runs");
    }

    let trace = fs::read_to_string(a.path().join("trace.jsonl")).unwrap();
    assert!(!trace.is_empty());
    for line in trace.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.is_object());
    }
}

#[test]
fn missing_checkpoint_is_reported() {
    let out = tempfile::tempdir().unwrap();
    let missing = out.path().join("nowhere.iqck");
    let cfg = tiny_config();
    ok(&["gen-corpus", "--config", cfg.to_str().unwrap()], out.path());
    let o = iqstream(
        &["train-iq", "--config", cfg.to_str().unwrap(), "--asr", missing.to_str().unwrap()],
        out.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nowhere.iqck"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(iqstream(&["train-asr"], out.path()).status.code(), Some(2));
    assert_eq!(iqstream(&["no-such-verb"], out.path()).status.code(), Some(2));
}

#[test]
fn bad_override_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let o = iqstream(
        &["gen-corpus", "--config", cfg.to_str().unwrap(), "--set", "decision.no_such_field=1"],
        out.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_field"));
}
