use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dsparsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsparsa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn shipped_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_shipped_configs() {
    for name in ["regression.toml", "pca.toml", "quick.toml"] {
        let path = shipped_config(name);
        let out = dsparsa(&["validate", "--config", path.to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", stderr(&out));
        assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
    }
}

#[test]
fn validate_rejects_bad_beta_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(
        &path,
        "experiment = \"sparse_regression\"\nrounds = 10\n[dsparsa_l]\nrule = \"power\"\nalpha0 = 1.0\nbeta = 0.4\n",
    )
    .unwrap();
    let out = dsparsa(&["validate", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("beta"), "{}", stderr(&out));
}

#[test]
fn parse_errors_name_the_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    fs::write(&path, "experiment = \"sparse_pca\"\nrounds = 10\nrealisations = 3\n").unwrap();
    let out = dsparsa(&["validate", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("typo.toml") && err.contains("line 3") && err.contains("realizations"), "{err}");
}

#[test]
fn full_regression_config_dry_runs() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(shipped_config("regression.toml"))
        .unwrap()
        .replace("rounds = 1000", "rounds = 10");
    let config = dir.path().join("short.toml");
    fs::write(&config, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = dsparsa(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--realizations",
        "1",
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for algo in ["dsparsa_sca", "dsparsa_l", "subgrad_push"] {
        for file in [format!("{algo}_r000.csv"), format!("{algo}_mean.csv")] {
            let text = fs::read_to_string(out_dir.join(&file)).unwrap();
            let mut lines = text.lines();
            assert_eq!(lines.next(), Some("round,comm,J,D,NMSE,NMSE_dB,objective"));
            assert!(lines.count() >= 1, "{file}");
        }
    }
    assert!(!out_dir.join("dsparsa_l_r001.csv").exists());
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("algorithm,round,comm,J,D,NMSE,NMSE_dB,objective\n"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = shipped_config("quick.toml");
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = dsparsa(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn missing_config_reports_path() {
    let out = dsparsa(&["run", "--config", "/nonexistent/cfg.toml"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("/nonexistent/cfg.toml"));
}
