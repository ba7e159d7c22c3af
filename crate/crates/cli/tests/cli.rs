use std::path::Path;
use std::process::{Command, Output};

/// Exit code, stdout and stderr of a finished run.
struct Run {
    code: Option<i32>,
    stdout: String,
    stderr: String,
}

impl Run {
    fn code(self, want: i32) -> Self {
        assert_eq!(
            self.code,
            Some(want),
            "stdout:\n{}\nstderr:\n{}",
            self.stdout,
            self.stderr
        );
        self
    }

    fn success(self) -> Self {
        self.code(0)
    }

    fn failure(self) -> Self {
        assert_ne!(self.code, Some(0), "{}", self.stdout);
        self
    }

    fn stdout(self, needle: &str) -> Self {
        assert!(
            self.stdout.contains(needle),
            "{needle:?} not in stdout:\n{}",
            self.stdout
        );
        self
    }

    fn stderr(self, needle: &str) -> Self {
        assert!(
            self.stderr.contains(needle),
            "{needle:?} not in stderr:\n{}",
            self.stderr
        );
        self
    }
}

trait Assert {
    fn assert(&mut self) -> Run;
}

impl Assert for Command {
    fn assert(&mut self) -> Run {
        let Output {
            status,
            stdout,
            stderr,
        } = self.output().unwrap();
        Run {
            code: status.code(),
            stdout: String::from_utf8_lossy(&stdout).into_owned(),
            stderr: String::from_utf8_lossy(&stderr).into_owned(),
        }
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slimbert"))
}

const FAST: &[&str] = &[
    "--set",
    "data.synthetic.examples_per_class=60",
    "--set",
    "model.max_seq_len=8",
    "--set",
    "train.epochs=1",
    "--set",
    "prune.warmup_steps=2",
    "--set",
    "prune.cooldown_start=8",
    "--set",
    "prune.total_steps=10",
    "--set",
    "prune.final_threshold=0.5",
    "--set",
    "distill.epochs=1",
    "--set",
    "bench.warmup=1",
    "--set",
    "bench.repeats=5",
    "--set",
    "bench.batch_size=2",
];

fn slimbert(dir: &Path) -> Command {
    let mut cmd = bin();
    cmd.args(FAST)
        .arg("--set")
        .arg(format!("output_dir={}", dir.display()));
    cmd
}

fn sub(name: &str, dir: &Path) -> Command {
    let mut cmd = bin();
    cmd.arg(name)
        .args(FAST)
        .arg("--set")
        .arg(format!("output_dir={}", dir.display()));
    cmd
}

#[test]
fn help_lists_subcommands() {
    let mut out = bin().arg("--help").assert().success();
    for name in ["train", "prune", "distill", "bench", "matrix", "report"] {
        out = out.stdout(name);
    }
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    sub("train", dir.path())
        .args(["--set", "prune.final=0.5"])
        .assert()
        .code(2)
        .stderr("prune.final");
}

#[test]
fn matrix_requires_carbon_intensity() {
    let dir = tempfile::tempdir().unwrap();
    sub("matrix", dir.path())
        .assert()
        .code(2)
        .stderr("intensity_kg_per_kwh");
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    sub("train", dir.path())
        .args(["--set", "train.learning_rate=1e300"])
        .assert()
        .code(3)
        .stderr("numerical failure");
}

#[test]
fn config_file_is_merged_under_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"prune": {"final_threshold": 0.25}, "bench": {"repeats": 2}}"#,
    )
    .unwrap();
    // the file sets an invalid repeat count; the override wins
    sub("train", dir.path())
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "bench.repeats=5",
        ])
        .assert()
        .success();
    sub("train", dir.path())
        .args([
            "--config",
            dir.path().join("missing.json").to_str().unwrap(),
        ])
        .assert()
        .code(2);
}

#[test]
fn staged_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    sub("train", d)
        .assert()
        .success()
        .stdout("Baseline: test accuracy");
    let baseline = d.join("baseline.ckpt");
    assert!(baseline.exists());

    sub("prune", d)
        .arg("--baseline")
        .arg(&baseline)
        .assert()
        .success()
        .stdout("50% pruning");
    let pruned = d.join("pruned-50.ckpt");
    assert!(pruned.exists());

    sub("distill", d)
        .arg("--teacher")
        .arg(&baseline)
        .arg("--student")
        .arg(&pruned)
        .assert()
        .success();
    let kd = d.join("pruned-50-kd.ckpt");
    assert!(kd.exists());

    sub("bench", d)
        .arg(&baseline)
        .arg(&pruned)
        .arg(&kd)
        .assert()
        .success()
        .stdout("x)");
    let bench: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("bench.json")).unwrap()).unwrap();
    assert_eq!(bench.as_array().unwrap().len(), 3);

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    for key in ["baseline", "pruned-50", "pruned-50-kd"] {
        assert!(metrics.get(key).is_some(), "{key}");
    }

    // a checkpoint that is not a checkpoint
    let junk = d.join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    sub("prune", d)
        .arg("--baseline")
        .arg(&junk)
        .assert()
        .code(2);
}

#[test]
fn matrix_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    slimbert(d).arg("matrix").assert().failure();
    sub("matrix", d)
        .args([
            "--set",
            "bench.intensity_kg_per_kwh=0.5",
            "--set",
            "bench.power_w=40",
        ])
        .assert()
        .success()
        .stdout("| Optimization added |")
        .stdout("75% pruning + knowledge distillation");
    for f in [
        "results.json",
        "results.csv",
        "results.md",
        "accuracy_vs_time.csv",
        "metrics.json",
    ] {
        assert!(d.join(f).exists(), "{f}");
    }
    std::fs::remove_file(d.join("results.md")).unwrap();
    bin()
        .args(["report", "--dir"])
        .arg(d)
        .assert()
        .success()
        .stdout("Baseline");
    assert!(d.join("results.md").exists());
}
