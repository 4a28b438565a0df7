use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const PROGRAM: &str = "
global int n[1];
global int out[64];

kernel child(int base) {
    int i = blockIdx.x * blockDim.x + threadIdx.x;
    if (i < n[0]) {
        out[i] = base + i;
    }
}

kernel parent() {
    launch child<<<(n[0] + 15) / 16, 16>>>(100);
}

host main() {
    launch parent<<<1, 1>>>();
    sync;
}
";

fn dynoptc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynoptc")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn emit_writes_reparseable_source_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let src = write(dir.path(), "p.mk", PROGRAM);
    let dst = dir.path().join("out.mk");
    let o = dynoptc(&["emit", &src, "--threshold", "32", "--cfactor", "2", "--agg", "block", "--emit", dst.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = stderr(&o);
    assert!(manifest.contains("site=parent:13 pass=threshold action=transformed"), "{manifest}");
    assert!(manifest.contains("pass=aggregate"), "{manifest}");
    let emitted = fs::read_to_string(&dst).unwrap();
    assert!(emitted.contains("#define _THRESHOLD 32"));
    dynopt::lang::parse(&emitted).unwrap();
}

#[test]
fn run_prints_the_report_and_matches_untransformed_output() {
    let dir = tempfile::tempdir().unwrap();
    let src = write(dir.path(), "p.mk", PROGRAM);
    let data = write(dir.path(), "d.txt", "n int 1\n40\n");
    let plain = dynoptc(&["run", &src, "--dataset", &data]);
    let agg = dynoptc(&["run", &src, "--dataset", &data, "--agg", "grid", "--fence-check"]);
    assert!(plain.status.success() && agg.status.success(), "{}", stderr(&agg));
    let digest = |o: &Output| stdout(o).lines().next().unwrap().to_string();
    assert!(digest(&plain).starts_with("final_memory_digest="));
    assert_eq!(digest(&plain), digest(&agg));
    assert!(stdout(&plain).contains("num_launches=1"));
    assert!(stdout(&agg).contains("num_launches=0"));
}

#[test]
fn cost_overrides_change_timing_only() {
    let dir = tempfile::tempdir().unwrap();
    let src = write(dir.path(), "p.mk", PROGRAM);
    let data = write(dir.path(), "d.txt", "n int 1\n40\n");
    let base = stdout(&dynoptc(&["run", &src, "--dataset", &data]));
    let slow = stdout(&dynoptc(&["run", &src, "--dataset", &data, "--cost", "launchLatency=5000"]));
    let field = |t: &str, k: &str| t.lines().find(|l| l.starts_with(k)).unwrap().to_string();
    assert_eq!(field(&base, "final_memory_digest"), field(&slow, "final_memory_digest"));
    assert_ne!(field(&base, "makespan"), field(&slow, "makespan"));
}

#[test]
fn invalid_configurations_fail_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let src = write(dir.path(), "p.mk", PROGRAM);
    let o = dynoptc(&["emit", &src, "--agg", "multiblock", "--agg-threshold", "4"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
    let bad = write(dir.path(), "bad.mk", "kernel k( {");
    let o = dynoptc(&["emit", &bad]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bad.mk:1:"), "{}", stderr(&o));
}

#[test]
fn sweep_writes_a_csv_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let o = dynoptc(&[
        "sweep",
        "--bench",
        "manylaunch",
        "--dataset",
        "manylaunch:64:seed1",
        "--thresholds",
        "off,32",
        "--aggs",
        "none,grid",
        "--report",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
    assert_eq!(text.lines().next().unwrap(), dynopt::bench::sweep::CSV_HEADER);
}
