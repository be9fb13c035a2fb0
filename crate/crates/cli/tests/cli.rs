use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpgaloop"))
        .args(args)
        .env("FPGALOOP_OUT_DIR", dir)
        .output()
        .expect("binary runs")
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn partitions_of_a_4k_block() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["lut", "partitions", "--bits", "4096"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for line in ["1,2048", "2,1024", "3,512", "8,16", "12,1"] {
        assert!(text.lines().any(|l| l == line), "{line}");
    }
    assert_eq!(text.lines().count(), 13);
}

#[test]
fn pipeline_report_for_gva290() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("gva290.toml");
    let out = run(dir.path(), &["pipeline", "report", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("latency: 160 ns"), "{text}");
    assert!(text.contains("control bandwidth: 6.25 MHz"), "{text}");
    assert!(text.contains("nyquist: 50 MHz"), "{text}");
}

#[test]
fn invalid_flag_is_usage_error_without_output() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["lock", "simulate", "--bogus"][..],
        &["lut", "partitions", "--bits", "many"],
        &["nonsense"],
    ] {
        let out = run(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "tf = \"wiggle:3\"\nf_lo = 1.0\nf_hi = 10.0\n").unwrap();
    let out = run(dir.path(), &["lti", "bode", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    fs::write(&bad, "this is = not toml [").unwrap();
    let out = run(dir.path(), &["lock", "design", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let missing = dir.path().join("missing.toml");
    let out = run(dir.path(), &["discretize", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(csvs(dir.path()).is_empty());
}

#[test]
fn module_errors_exit_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["lut", "partitions", "--bits", "4095"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");

    let bad = dir.path().join("fir.toml");
    fs::write(
        &bad,
        "band_edges = [0.0, 0.5, 0.4, 1.0]\ndesired_gains = [1.0, 1.0, 0.0, 0.0]\nn_taps = 31\n",
    )
    .unwrap();
    let out = run(
        dir.path(),
        &["filters", "design-fir", "--config", bad.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(csvs(dir.path()).is_empty());
}

fn all_commands() -> Vec<Vec<String>> {
    let s = |n: &str| scenario(n).to_string_lossy().into_owned();
    let cmds: Vec<Vec<&str>> = vec![
        vec!["lti", "bode", "--config"],
        vec!["discretize", "--config"],
        vec!["filters", "design-fir", "--config"],
        vec!["filters", "build-iir", "--config"],
        vec!["lut", "tabulate", "--config"],
        vec!["pipeline", "simulate", "--config"],
        vec!["adphi", "run", "--seed", "4", "--config"],
        vec!["adphi", "montecarlo", "--seed", "100", "--trials", "200", "--config"],
        vec!["lock", "design", "--config"],
        vec!["lock", "bode", "--config"],
        vec!["lock", "simulate", "--seed", "2", "--config"],
        vec!["lock", "reacquire", "--seed", "2", "--config"],
    ];
    let files = [
        "bode.toml",
        "discretize.toml",
        "fir.toml",
        "iir.toml",
        "lut.toml",
        "gva290.toml",
        "adphi.toml",
        "adphi.toml",
        "lock.toml",
        "lock.toml",
        "lock.toml",
        "lock.toml",
    ];
    cmds.into_iter()
        .zip(files)
        .map(|(c, f)| {
            let mut v: Vec<String> = c.into_iter().map(String::from).collect();
            v.push(s(f));
            v
        })
        .collect()
}

#[test]
fn every_command_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for cmd in all_commands() {
        let args: Vec<&str> = cmd.iter().map(String::as_str).collect();
        for dir in [a.path(), b.path()] {
            let out = run(dir, &args);
            assert!(
                out.status.success(),
                "{args:?}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
    }
    let (ca, cb) = (csvs(a.path()), csvs(b.path()));
    assert!(ca.len() >= 16, "{}", ca.len());
    assert_eq!(ca, cb);
}

#[test]
fn manifest_lists_outputs_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("lock.toml");
    let out = run(
        dir.path(),
        &["lock", "reacquire", "--seed", "9", "--config", cfg.to_str().unwrap()],
    );
    assert!(out.status.success());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("lock-reacquire.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "lock reacquire");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"], cfg.to_str().unwrap());
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    for o in outputs {
        assert!(Path::new(o.as_str().unwrap()).exists());
    }
    // nothing besides the declared outputs and the manifest
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 3);
}

#[test]
fn out_dir_flag_overrides_environment() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let cfg = scenario("discretize.toml");
    let out = run(
        env_dir.path(),
        &[
            "--out-dir",
            flag_dir.path().to_str().unwrap(),
            "discretize",
            "--config",
            cfg.to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    assert!(flag_dir.path().join("discrete.csv").exists());
    assert_eq!(fs::read_dir(env_dir.path()).unwrap().count(), 0);
    let json = String::from_utf8(out.stdout).unwrap();
    let first: serde_json::Value = serde_json::from_str(json.lines().next().unwrap()).unwrap();
    assert_eq!(first["fs"], 1.5625e6);
}
