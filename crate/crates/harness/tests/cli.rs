use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_teamregret"))
}

fn code(c: &mut Command) -> i32 {
    c.output().unwrap().status.code().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(code(bin().arg("--help")), 0);
    assert_eq!(code(bin().arg("--version")), 0);
    assert_eq!(code(&mut bin()), 1);
    assert_eq!(code(bin().args(["train", "--config", "x.toml"])), 1);
    assert_eq!(code(bin().args(["plot", "--column", "bogus", "--out", "x.svg", "a.csv"])), 1);
    assert_eq!(
        code(bin().args(["train", "--config", "/nonexistent/run.toml", "--out", "/tmp/x", "--seed", "1"])),
        2
    );
    assert_eq!(
        code(bin().args(["check", "consistency", "--agents", "9", "--actions", "2", "--trials", "1", "--seed", "0"])),
        2
    );
}

#[test]
fn consistency_check_reports_no_violations() {
    let out = bin()
        .args(["check", "consistency", "--agents", "3", "--actions", "6", "--trials", "200", "--seed", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("additive violations 0, shaped violations 0"), "{text}");
}

#[test]
fn train_eval_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "method = \"vdn\"\niterations = 6\neval_episodes = 3\n[train]\nhidden = [6]\nbatch_episodes = 4\n").unwrap();
    let out = dir.path().join("run");
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "9", "--single-thread"])
        .status()
        .unwrap();
    assert!(status.success());
    let written = std::fs::read_to_string(out.join("run.toml")).unwrap();
    assert!(written.contains("seed = 9"), "{written}");

    let eval = bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(out.join("final.ckpt"))
        .args(["--episodes", "5", "--opponent", "self"])
        .output()
        .unwrap();
    assert!(eval.status.success());
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(report["returns"].as_array().unwrap().len(), 5);

    let svg = dir.path().join("curve.svg");
    let plot = bin()
        .args(["plot", "--column", "mean_return", "--window", "3", "--out"])
        .arg(&svg)
        .arg(out.join("metrics.csv"))
        .status()
        .unwrap();
    assert!(plot.success());
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));
}
