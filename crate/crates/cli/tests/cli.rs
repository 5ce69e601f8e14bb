use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_latticegen"));
    cmd.env_remove("LATTICEGEN_OUTPUT_DIR");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

#[test]
fn ingest_train_generate_attack() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.json");
    let out = dir.path().join("gen");

    let o = run(&["ingest", "--corpus", s(&fixture_dir()), "--out", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("vocab.txt").exists());
    assert!(data.join("manifest.json").exists());

    let o = run(&["train", "--data", s(&data), "--order", "2", "--out", s(&model)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("dev perplexity"));

    let o = run(&[
        "generate", "--data", s(&data), "--model", s(&model), "--n", "3", "--g", "1", "--t-max", "12",
        "--scheme", "parallel", "--seed", "5", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["transcript.lgt", "lattice.lat", "generation.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let gen: Value = serde_json::from_str(&fs::read_to_string(out.join("generation.json")).unwrap()).unwrap();
    let truth = gen["true_ids"].clone();
    assert_eq!(gen["columns"].as_u64().unwrap() as usize, truth.as_array().unwrap().len());
    let truth_path = dir.path().join("truth.json");
    fs::write(&truth_path, truth.to_string()).unwrap();

    let report_path = dir.path().join("attack.json");
    let o = run(&[
        "attack", "--transcript", s(&out.join("transcript.lgt")), "--truth", s(&truth_path), "--out",
        s(&report_path),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["n"], 3);
    let rbs = report["repeated_beam_search"].as_array().unwrap();
    assert_eq!(rbs.len(), 3);
    let max = report["max_true_ratio"].as_f64().unwrap();
    assert!(max >= 1.0 / 3.0 - 1e-12);
    let flags = report["beam_search"]["matches"].as_array().unwrap();
    assert_eq!(flags.len(), 12);

    // Same seed, same output.
    let again = dir.path().join("gen2");
    let o = run(&[
        "generate", "--data", s(&data), "--model", s(&model), "--n", "3", "--g", "1", "--t-max", "12",
        "--scheme", "parallel", "--seed", "5", "--out", s(&again),
    ]);
    assert!(o.status.success());
    assert_eq!(
        fs::read(out.join("transcript.lgt")).unwrap(),
        fs::read(again.join("transcript.lgt")).unwrap()
    );
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let o = run(&["train", "--data", s(&fixture_dir()), "--order", "2", "--out", s(&model)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("from-env");
    let o = bin()
        .args(["generate", "--data", s(&fixture_dir()), "--model", s(&model), "--t-max", "5"])
        .env("LATTICEGEN_OUTPUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("generation.json").exists());
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "data = \"corpus\"\ntrials = 0\nno_such_key = 1\n").unwrap();
    let o = run(&["experiment", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(&cfg, "data = \"corpus\"\n[grid]\nn = [0]\n").unwrap();
    let o = run(&["experiment", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn runtime_failure_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["attack", "--transcript", s(&dir.path().join("missing.lgt"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let broken = dir.path().join("broken.lgt");
    fs::write(&broken, "{\"not\": \"a transcript\"}\n").unwrap();
    let o = run(&["attack", "--transcript", s(&broken)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn generate_over_tcp_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let o = run(&["train", "--data", s(&fixture_dir()), "--order", "2", "--out", s(&model)]);
    assert!(o.status.success());

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let transcripts = dir.path().join("sessions");
    let mut server = bin()
        .args(["serve", "--model", s(&model), "--listen", &addr, "--transcripts", s(&transcripts)])
        .spawn()
        .unwrap();

    let remote = dir.path().join("remote");
    let mut ok = None;
    for _ in 0..100 {
        let o = run(&[
            "generate", "--data", s(&fixture_dir()), "--connect", &addr, "--t-max", "10", "--seed", "9",
            "--out", s(&remote),
        ]);
        if o.status.success() {
            ok = Some(o);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    let local = dir.path().join("local");
    let o = run(&[
        "generate", "--data", s(&fixture_dir()), "--model", s(&model), "--t-max", "10", "--seed", "9", "--out",
        s(&local),
    ]);
    server.kill().unwrap();
    let _ = server.wait();
    assert!(ok.is_some(), "client never connected");
    assert!(o.status.success());
    assert_eq!(
        fs::read(remote.join("lattice.lat")).unwrap(),
        fs::read(local.join("lattice.lat")).unwrap()
    );
    assert_eq!(
        fs::read(remote.join("generation.json")).unwrap(),
        fs::read(local.join("generation.json")).unwrap()
    );
}
