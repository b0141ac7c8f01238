use std::path::PathBuf;
use std::process::Command;

fn ssvs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssvs"))
}

fn data(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "tests", "data", name].iter().collect()
}

fn tmp(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("ssvs-cli-{}-{name}", std::process::id()))
}

#[test]
fn run_writes_a_trace_that_check_accepts() {
    let out = tmp("run.jsonl");
    let st = ssvs()
        .args(["run", "--scenario"])
        .arg(data("clean_n3.json"))
        .args(["--seed", "3", "--steps", "800", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(String::from_utf8_lossy(&st.stdout).contains("PASS virtual-synchrony"));

    let st = ssvs()
        .args(["check", "--trace"])
        .arg(&out)
        .args(["--property", "smr-agreement"])
        .output()
        .unwrap();
    assert!(st.status.success());
    let stdout = String::from_utf8_lossy(&st.stdout);
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("PASS smr-agreement"));
    std::fs::remove_file(out).ok();
}

#[test]
fn fuzz_reports_every_seed() {
    let st = ssvs()
        .args(["fuzz", "--scenario"])
        .arg(data("clean_n3.json"))
        .args([
            "--seeds",
            "0..4",
            "--check",
            "virtual-synchrony,smr-agreement",
            "--steps",
            "600",
        ])
        .output()
        .unwrap();
    assert!(st.status.success());
    assert!(String::from_utf8_lossy(&st.stdout).contains("4 of 4 seeds passed"));
}

#[test]
fn failing_check_exits_one() {
    let good = std::fs::read_to_string(data("clean_n3.jsonl")).unwrap();
    // Forge one applied state.
    let i = good.find(r#""ev":"apply""#).unwrap();
    let s = i + good[i..].find(r#""state":""#).unwrap() + r#""state":""#.len();
    let mut bad = good.clone();
    bad.replace_range(s..s + 8, "deadbeef");
    let path = tmp("bad.jsonl");
    std::fs::write(&path, bad).unwrap();
    let st = ssvs()
        .args(["check", "--trace"])
        .arg(&path)
        .args(["--property", "smr-agreement"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));
    std::fs::remove_file(path).ok();
}

#[test]
fn bad_input_exits_two() {
    let st = ssvs()
        .args(["check", "--trace", "/nonexistent/trace.jsonl"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    let st = ssvs()
        .args(["fuzz", "--scenario"])
        .arg(data("clean_n3.json"))
        .args(["--seeds", "5..5"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
}
