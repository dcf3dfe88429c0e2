use std::path::Path;
use std::process::{Command, Output};

fn vnaw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vnaw"))
        .args(args)
        .output()
        .expect("run vnaw")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

#[test]
fn no_arguments_prints_usage() {
    let o = vnaw(&[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn unknown_and_conflicting_flags_are_usage_errors() {
    assert_eq!(code(&vnaw(&["gradcheck", "--bogus"])), 1);
    assert_eq!(code(&vnaw(&["frobnicate"])), 1);
    let o = vnaw(&["train", "--data", "x", "--out", "y", "--naw", "--no-naw"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&vnaw(&["--help"])), 0);
}

#[test]
fn gradcheck_passes() {
    let o = vnaw(&["gradcheck", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    assert_eq!(out.matches("PASS").count(), 2, "{out}");
    assert!(out.contains("max relative error"));
}

#[test]
fn missing_dataset_is_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = vnaw(&[
        "train",
        "--data",
        &p(&dir.path().join("none")),
        "--out",
        &p(&dir.path().join("m")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "train.learning_rate = 3\n").unwrap();
    let o = vnaw(&["train", "--data", "x", "--out", "y", "--config", &p(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key"));
}

#[test]
fn eval_reproduces_final_log_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("m.ckpt");
    let log = dir.path().join("log.csv");
    let cfg = dir.path().join("train.conf");
    std::fs::write(
        &cfg,
        "train.epochs = 4\nmodel.dim = 16\nmodel.ff_dim = 32\nnaw.weight_cap = 10\n",
    )
    .unwrap();
    let o = vnaw(&[
        "gen-data",
        "--out",
        &p(&data),
        "--clips",
        "120",
        "--frames",
        "6",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0);
    assert!(data.join("manifest.csv").exists());

    let o = vnaw(&[
        "train",
        "--data",
        &p(&data),
        "--config",
        &p(&cfg),
        "--out",
        &p(&ckpt),
        "--log",
        &p(&log),
        "--epochs",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log_text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = log_text.lines().collect();
    // Header plus one row per epoch; the flag overrides the config's 4.
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("epoch,loss,mean_weight,train_macro_f1,Neutral,"));
    let last: Vec<&str> = lines[2].split(',').collect();
    let weight: f64 = last[2].parse().unwrap();
    assert!(weight > 0.0 && weight <= 10.0);

    let o = vnaw(&["eval", "--data", &p(&data), "--ckpt", &p(&ckpt)]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let mut rows = out.lines();
    assert!(rows.next().unwrap().ends_with("Other,macro_f1"));
    let eval_row: Vec<&str> = rows.next().unwrap().split(',').collect();
    assert_eq!(eval_row.as_slice(), &last[4..]);
    // The human table shows the same numbers.
    let table = out.lines().find(|l| l.starts_with("F1")).unwrap();
    let cells: Vec<&str> = table.split_whitespace().skip(1).collect();
    assert_eq!(cells.as_slice(), eval_row.as_slice());
}

#[test]
fn augment_writes_clip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        code(&vnaw(&[
            "gen-data",
            "--out",
            &p(&data),
            "--clips",
            "3",
            "--seed",
            "1"
        ])),
        0
    );
    let clip = data.join("clips").join("clip_00000.vclp");
    let out = dir.path().join("aug.vclp");
    let o = vnaw(&[
        "augment",
        "--clip",
        &p(&clip),
        "--out",
        &p(&out),
        "--seed",
        "4",
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("erased pixels: 51 of 256"));
    assert!(out.exists());
    let o = vnaw(&[
        "augment",
        "--clip",
        &p(&clip),
        "--out",
        &p(&out),
        "--erase-ratio",
        "1.5",
    ]);
    assert_eq!(code(&o), 1);
}
