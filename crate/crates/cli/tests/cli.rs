use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cpvt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpvt")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn no_subcommand_is_usage_error() {
    assert_eq!(cpvt(&[]).status.code(), Some(2));
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = cpvt(&["count", "--no-such-flag", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.cfg");
    fs::write(&file, "preset=tiny\nbogus_key=3\n").unwrap();
    let o = cpvt(&["count", "--config", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));
}

#[test]
fn count_reports_peg_parameters() {
    let o = cpvt(&["count", "--config", config("tiny.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "PEG=1728"), "{text}");
    assert!(text.lines().any(|l| l == "peg_flops=338688"), "{text}");
}

#[test]
fn flags_override_config_file() {
    let o = cpvt(&["count", "--config", config("tiny.cfg").to_str().unwrap(), "--peg-kernel", "5"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().any(|l| l == "PEG=4800"));
}

#[test]
fn conv_expansion_probe_succeeds() {
    let o = cpvt(&["probe", "--name", "conv_expansion", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("status=pass"));
}

#[test]
fn unknown_probe_is_usage_error() {
    assert_eq!(cpvt(&["probe", "--name", "nonsense"]).status.code(), Some(2));
}

fn pipeline(dir: &Path) -> (String, String) {
    let d = dir.to_str().unwrap();
    let common = [
        "--preset", "toy", "--image-size", "48", "--n-train", "64", "--n-test", "32", "--epochs", "2", "--batch-size", "16",
    ];
    let data = format!("{d}/data");
    let out = format!("{d}/run");
    let run = |sub: &str, extra: &[&str]| {
        let mut args = vec![sub];
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--data-dir", &data, "--out-dir", &out]);
        args.extend_from_slice(extra);
        let o = cpvt(&args);
        assert_eq!(o.status.code(), Some(0), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    run("gen", &[]);
    run("train", &[]);
    let eval = run("eval", &[]);
    let attn = run("attn", &["--format", "pgm"]);
    assert!(!attn.is_empty());
    assert!(fs::read_dir(format!("{out}/attn")).unwrap().count() > 0);
    (fs::read_to_string(format!("{out}/metrics.log")).unwrap(), eval)
}

#[test]
fn gen_train_eval_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (log_a, eval_a) = pipeline(a.path());
    let (log_b, eval_b) = pipeline(b.path());
    assert_eq!(log_a, log_b);
    assert_eq!(eval_a, eval_b);
    assert_eq!(log_a.lines().count(), 2);
    assert!(eval_a.starts_with("accuracy="));
}

#[test]
fn shipped_experiment_config_parses() {
    let o = cpvt(&["count", "--config", config("shifted.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().any(|l| l == "PEG=288"));
}
