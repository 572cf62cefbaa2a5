use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hwdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hwdm")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_succeeds_and_usage_errors_exit_1() {
    assert_eq!(code(&hwdm(&["--help"])), 0);
    assert_eq!(code(&hwdm(&["train", "--help"])), 0);
    assert_eq!(code(&hwdm(&[])), 1);
    assert_eq!(code(&hwdm(&["frobnicate"])), 1);
    assert_eq!(code(&hwdm(&["train"])), 1, "missing --manifest");
    assert_eq!(code(&hwdm(&["gen-data", "--per-class", "many"])), 1);
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# comment\nseed = 3\ntrain.epochs = -2\n").unwrap();
    let out = hwdm(&["--config", p(&cfg), "gen-data", "--out", p(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    fs::write(&cfg, "seed = 3\nbackbone.colour = red\n").unwrap();
    let out = hwdm(&["--config", p(&cfg), "gen-data", "--out", p(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let out = hwdm(&["--config", p(&dir.path().join("absent.cfg")), "gen-data"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn data_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = hwdm(&["train", "--manifest", p(&dir.path().join("none.tsv")), "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);

    let manifest = dir.path().join("m.tsv");
    fs::write(&manifest, "a.ppm\tsoil\t-\t-\t0\n").unwrap();
    let out = hwdm(&["train", "--manifest", p(&manifest), "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("m.tsv:1"), "{}", stderr(&out));

    fs::write(&manifest, "a.ppm\tweed\t-\t-\t0\n").unwrap();
    let out = hwdm(&["train", "--manifest", p(&manifest), "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));

    fs::write(dir.path().join("a.ppm"), b"P6\n4 4\n255\nshort").unwrap();
    fs::write(&manifest, "a.ppm\tsoil\t-\t-\t0\n").unwrap();
    let out = hwdm(&["train", "--manifest", p(&manifest), "--out", p(dir.path())]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn runaway_learning_rate_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&hwdm(&["gen-data", "--per-class", "4", "--out", p(&data)])), 0);
    let cfg = dir.path().join("hot.cfg");
    fs::write(&cfg, "optimizer.lr = 1e30\ntrain.epochs = 5\ntrain.batch_size = 4\n").unwrap();
    let out = hwdm(&["--config", p(&cfg), "train", "--manifest", p(&data.join("manifest.tsv")), "--out", p(dir.path())]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn trained_model_classifies_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "train.epochs = 25\ntrain.batch_size = 8\noptimizer.lr = 0.003\n").unwrap();
    let c = p(&cfg);
    assert_eq!(code(&hwdm(&["--config", c, "gen-data", "--per-class", "8", "--seed", "3", "--out", p(&data)])), 0);
    let out = hwdm(&["--config", c, "train", "--manifest", p(&data.join("manifest.tsv")), "--out", p(&run)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for file in ["model.hwdm", "best.hwdm", "history.csv"] {
        assert!(run.join(file).is_file(), "{file}");
    }
    let out =
        hwdm(&["--config", c, "infer", "--model", p(&run.join("model.hwdm")), "--image", p(&data.join("images/soil_0002.ppm"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("class: soil\n"), "{text}");
    assert!(text.contains("probabilities: ") && text.contains("growth: ") && text.contains("mask: "), "{text}");

    let out = hwdm(&[
        "--config",
        c,
        "eval",
        "--manifest",
        p(&data.join("manifest.tsv")),
        "--model",
        p(&run.join("model.hwdm")),
        "--out",
        p(&run),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8(out.stdout).unwrap().contains("procedurally generated"));
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    assert!(report.ends_with("data,procedural,,,\n"), "{report}");
}
