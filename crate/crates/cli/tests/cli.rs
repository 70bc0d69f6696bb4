//! End-to-end runs of the boxdiff binary: artifact determinism, manifest
//! replay, tamper detection, table contracts, and error reporting.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

/// A one-level construction small enough that the whole command chain
/// finishes in well under a second. Commands reject keys they do not use,
/// so each gets its own config built on this base.
const SMALL: &str = "preset=custom
levels=1
level.0.threshold=2
level.0.mesh=0.5
level.0.coverage=0.5
level.0.epsilon=1
grid=16
margin=0.0625
";

/// Stage selection needs the wider area budget because this construction's
/// certified boxes outgrow the default.
const STAGES: &str = "stages.per_level=2
stages.max_boxes=0
stages.area_budget=0.08
";

fn regress_config() -> String {
    format!("{}{}eps=0.25\nsample_cap=200000\n", SMALL, STAGES)
}

fn classify_config() -> String {
    format!("{}{}n=4000\n", SMALL, STAGES)
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn boxdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxdiff"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn expect_ok(args: &[&str]) -> String {
    let out = boxdiff(args);
    assert!(
        out.status.success(),
        "{:?} failed with {:?}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn expect_code(args: &[&str], code: i32) -> String {
    let out = boxdiff(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{:?} exited {:?}, wanted {}\nstderr: {}",
        args,
        out.status.code(),
        code,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("missing {}: {}", name, e))
}

#[test]
fn build_is_deterministic_and_certifiable() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", SMALL);
    let out1 = tmp.path().join("a");
    let out2 = tmp.path().join("b");

    let stdout = expect_ok(&["build", "--config", &cfg, "--seed", "5", "--out", out1.to_str().unwrap()]);
    assert!(stdout.contains("function:"), "build should report its outputs: {}", stdout);
    expect_ok(&["build", "--config", &cfg, "--seed", "5", "--out", out2.to_str().unwrap()]);

    assert_eq!(read(&out1, "fn.boxfn"), read(&out2, "fn.boxfn"));
    assert_eq!(read(&out1, "catalog.boxcat"), read(&out2, "catalog.boxcat"));
    assert_eq!(read(&out1, "build.manifest"), read(&out2, "build.manifest"));

    // Certify picks up the grid and margin the build recorded.
    let stdout = expect_ok(&["certify", "--out", out1.to_str().unwrap()]);
    assert!(stdout.contains("certified"), "{}", stdout);
    let summary = String::from_utf8(read(&out1, "summary.txt")).unwrap();
    assert!(summary.contains("grid=16\n"), "{}", summary);
    assert!(summary.contains("margin=0.0625\n"), "{}", summary);

    let stdout = expect_ok(&["verify", "--out", out1.to_str().unwrap()]);
    assert!(stdout.starts_with("ok:"), "{}", stdout);
}

#[test]
fn rerun_from_manifest_reproduces_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", SMALL);
    let out1 = tmp.path().join("a");
    let out2 = tmp.path().join("b");

    expect_ok(&["build", "--config", &cfg, "--seed", "9", "--out", out1.to_str().unwrap()]);
    // The manifest doubles as a config: settings and seed ride along,
    // digest lines are ignored on load.
    let manifest = out1.join("build.manifest");
    expect_ok(&["build", "--config", manifest.to_str().unwrap(), "--out", out2.to_str().unwrap()]);

    assert_eq!(read(&out1, "fn.boxfn"), read(&out2, "fn.boxfn"));
    assert_eq!(read(&out1, "catalog.boxcat"), read(&out2, "catalog.boxcat"));
    assert_eq!(read(&out1, "build.manifest"), read(&out2, "build.manifest"));
}

#[test]
fn tampered_artifacts_fail_verification() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", SMALL);
    let out = tmp.path().join("a");
    expect_ok(&["build", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
    expect_ok(&["certify", "--out", out.to_str().unwrap()]);
    expect_ok(&["verify", "--out", out.to_str().unwrap()]);

    // Any byte of drift in a regenerated table is a mismatch.
    let cert = out.join("certificate.csv");
    let mut bytes = fs::read(&cert).unwrap();
    bytes.push(b' ');
    fs::write(&cert, &bytes).unwrap();
    let stderr = expect_code(&["verify", "--out", out.to_str().unwrap()], 3);
    assert!(
        stderr.contains("certificate.csv does not match"),
        "{}",
        stderr
    );
}

#[test]
fn infeasible_build_reports_layer_demand() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "run.cfg",
        "preset=custom
levels=1
level.0.threshold=50
level.0.mesh=0.3
level.0.coverage=0.9
level.0.epsilon=0.1
",
    );
    let out = tmp.path().join("a");
    let stderr = expect_code(&["build", "--config", &cfg, "--out", out.to_str().unwrap()], 1);
    assert!(stderr.contains("layers, above the cap"), "{}", stderr);
}

#[test]
fn empty_build_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", "preset=custom\nlevels=0\n");
    let out = tmp.path().join("a");
    let stderr = expect_code(&["build", "--config", &cfg, "--out", out.to_str().unwrap()], 2);
    assert!(stderr.contains("at least one level"), "{}", stderr);
}

#[test]
fn regress_and_classify_write_contract_tables() {
    let tmp = TempDir::new().unwrap();
    let reg_cfg = write_config(tmp.path(), "regress.cfg", &regress_config());
    let cls_cfg = write_config(tmp.path(), "classify.cfg", &classify_config());
    let out1 = tmp.path().join("a");
    let out2 = tmp.path().join("b");

    expect_ok(&["regress", "--config", &reg_cfg, "--seed", "5", "--out", out1.to_str().unwrap()]);
    let table = String::from_utf8(read(&out1, "trajectory.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("stage,partition_id,N,eps,max_I_floored,witness_II,witness_I,lower_bound,flags")
    );
    assert_eq!(lines.count(), 2, "one row per stage:\n{}", table);

    expect_ok(&["classify", "--config", &cls_cfg, "--seed", "5", "--out", out1.to_str().unwrap()]);
    let table = String::from_utf8(read(&out1, "separation.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("stage,N,risk,bayes_risk,gap,disagreement_measure,cum_misclassified_fraction")
    );
    assert_eq!(lines.count(), 2, "one row per stage:\n{}", table);

    // Same config and seed, same tables.
    expect_ok(&["regress", "--config", &reg_cfg, "--seed", "5", "--out", out2.to_str().unwrap()]);
    expect_ok(&["classify", "--config", &cls_cfg, "--seed", "5", "--out", out2.to_str().unwrap()]);
    assert_eq!(read(&out1, "trajectory.csv"), read(&out2, "trajectory.csv"));
    assert_eq!(read(&out1, "separation.csv"), read(&out2, "separation.csv"));
}

#[test]
fn bench_emits_the_table() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", "terms=2000\nareas=1,0.01\nqueries=16\nrepeats=2\n");
    let out = tmp.path().join("a");
    expect_ok(&["bench", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);

    let table = String::from_utf8(read(&out, "bench.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("terms,area,queries,repeats,indexed_ns,scan_ns,speedup,indexed_sum,scan_sum")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2, "{}", table);
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 9, "{}", row);
        let speedup: f64 = fields[6].parse().unwrap();
        assert!(speedup > 0.0);
        let indexed: f64 = fields[7].parse().unwrap();
        let scan: f64 = fields[8].parse().unwrap();
        assert!((indexed - scan).abs() <= 1e-12 * scan.abs().max(1.0), "{}", row);
    }

    // Timings are volatile, so the manifest marks the table instead of
    // pinning a digest.
    let manifest = String::from_utf8(read(&out, "bench.manifest")).unwrap();
    assert!(manifest.contains("artifact.bench.csv=volatile"), "{}", manifest);
    assert!(!manifest.contains("digest.bench.csv"), "{}", manifest);
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", &format!("{}bogus=1\n", SMALL));
    let out = tmp.path().join("a");
    let stderr = expect_code(&["build", "--config", &cfg, "--out", out.to_str().unwrap()], 2);
    assert!(stderr.contains("bogus"), "{}", stderr);
}

#[test]
fn cross_command_manifest_reuse_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", SMALL);
    let out = tmp.path().join("a");
    expect_ok(&["build", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
    let manifest = out.join("build.manifest");
    let stderr = expect_code(
        &["regress", "--config", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()],
        2,
    );
    assert!(stderr.contains("written for"), "{}", stderr);
}
