use std::path::Path;
use std::process::{Command, Output};

fn backdrop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_backdrop"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn gptx_records(path: &Path) -> u32 {
    let bytes = std::fs::read(path).unwrap();
    u32::from_le_bytes(bytes[8..12].try_into().unwrap())
}

const CONFIG: &str = r#"
arch = "mlp-rank"
loss = "rank"
batch_size = 8
epochs = 2

[mask]
p = 0.5

[data]
kind = "clouds"
train_counts = [8, 8]
test_counts = [10, 10]
"#;

#[test]
fn gradcheck_succeeds() {
    let out = backdrop(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("all 40 gradient checks passed"));
}

#[test]
fn gen_data_writes_expected_record_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = backdrop(&[
        "gen-data", "--size", "64", "--classes", "1.5:8,2:8,1.5:12,2:12", "--n-train", "1", "--n-test",
        "25", "--out", out,
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(gptx_records(&dir.path().join("train.gptx")), 4);
    assert_eq!(gptx_records(&dir.path().join("test.gptx")), 100);

    let pgm_dir = dir.path().join("pgm");
    let res = backdrop(&[
        "export-pgm",
        "--data",
        dir.path().join("train.gptx").to_str().unwrap(),
        "--out",
        pgm_dir.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0));
    for label in 0..4 {
        let bytes = std::fs::read(pgm_dir.join(label.to_string()).join("0000.pgm")).unwrap();
        assert!(bytes.starts_with(b"P5\n64 64\n255\n"));
    }
}

#[test]
fn train_override_is_echoed_and_eval_reads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("run");
    let res = backdrop(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "mask.p=0.75",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let resolved = std::fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("p = 0.75"), "{resolved}");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,split,metric,value\n"));
    assert!(metrics.contains("2,train,ebs.p,2\n"), "{metrics}");

    let plot = dir.path().join("auc.svg");
    let res = backdrop(&[
        "plot",
        "--metrics",
        out.join("metrics.csv").to_str().unwrap(),
        "--metric",
        "auc",
        "--out",
        plot.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0));
    assert!(std::fs::read_to_string(plot).unwrap().starts_with("<svg"));

    // a checkpoint evaluated on mismatched data is a runtime failure
    let gp = dir.path().join("gp");
    backdrop(&["gen-data", "--size", "32", "--classes", "1:4", "--n-test", "2", "--out", gp.to_str().unwrap()]);
    let res = backdrop(&[
        "eval",
        "--checkpoint",
        out.join("model.ckpt").to_str().unwrap(),
        "--data",
        gp.join("test.gptx").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(backdrop(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(backdrop(&["frobnicate"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let res = backdrop(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "learning_rate=0.1",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("learning_rate"));
}

#[test]
fn missing_input_is_a_runtime_failure() {
    let res = backdrop(&["export-pgm", "--data", "/nonexistent.gptx", "--out", "/tmp/none"]);
    assert_eq!(res.status.code(), Some(1));
}
