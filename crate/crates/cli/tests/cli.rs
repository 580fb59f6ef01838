use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 5

[model]
name = "tiny"
input_channels = 2
input_len = 40
classes = 2
[[model.layers]]
kind = "conv1d"
out_channels = 4
kernel = 5
stride = 2
[[model.layers]]
kind = "relu"
[[model.layers]]
kind = "global-avg-pool"
tap = true
[[model.layers]]
kind = "dense"
out_features = 2

[cohort]
subjects = 3
fs = 4.0
channels = 2
mechanism_freqs_hz = [0.5, 1.0]
lead_seizures = 2
seizure_gap_s = 600.0
seizure_duration_s = 30.0
tail_s = 300.0

[cohort.timeline]
sph_s = 30.0
pil_s = 200.0
lead_gap_s = 600.0
interictal_guard_s = 60.0
window_s = 10.0
preictal_overlap = 0.25

[distill]
epochs_stage1 = 2
epochs_stage2 = 2
batch_size = 8
pretrain_batch_size = 8
"#;

fn bikd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bikd")).args(args).output().expect("binary runs")
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, TINY).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stdout: {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_pretrain_distill_evaluate() {
    let (dir, cfg) = setup();
    let data = dir.path().join("data");
    let out = dir.path().join("out");

    ok(&bikd(&["generate", "--config", s(&cfg), "--out", s(&data)]));
    for i in 0..3 {
        assert!(data.join(format!("subject_{i:03}.dbds")).is_file());
    }

    let common = ["--config", s(&cfg), "--data", s(&data), "--out", s(&out)];
    ok(&bikd(&[&["pretrain"][..], &common, &["--exclude", "1"]].concat()));
    let pool = out.join("pool.ckpt");
    assert!(pool.is_file());

    let r = bikd(&[&["distill"][..], &common, &["--pool", s(&pool), "--subject", "1", "--divergence", "kl"]].concat());
    ok(&r);
    for f in ["cus.ckpt", "pool_prime.ckpt", "trainlog.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("trainlog.csv")).unwrap();
    assert!(log.starts_with("epoch,batch,role,"), "{log}");

    let cus = out.join("cus.ckpt");
    let r = bikd(&[&["evaluate"][..], &common, &["--checkpoint", s(&cus), "--subject", "1"]].concat());
    ok(&r);
    assert!(String::from_utf8_lossy(&r.stdout).contains("accuracy"));
}

#[test]
fn loo_then_report() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    ok(&bikd(&["loo", "--config", s(&cfg), "--out", s(&out)]));
    let csv = out.join("report.csv");
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.lines().last().unwrap().starts_with("| Average |"), "{md}");

    let again = dir.path().join("again.md");
    ok(&bikd(&["report", "--input", s(&csv), "--output", s(&again)]));
    assert_eq!(std::fs::read_to_string(again).unwrap(), md);
}

#[test]
fn temperature_ablation_writes_four_rows() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    ok(&bikd(&["ablate", "--config", s(&cfg), "--out", s(&out), "--axis", "temperature"]));
    let csv = std::fs::read_to_string(out.join("ablation_temperature.csv")).unwrap();
    let cells: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(cells, ["naive", "T=1", "T=4", "T=8"]);
}

#[test]
fn exit_codes() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");

    let missing = bikd(&["loo", "--config", s(&dir.path().join("nope.toml")), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));

    let bad_div = bikd(&["loo", "--config", s(&cfg), "--divergence", "hinge", "--out", s(&out)]);
    assert_eq!(bad_div.status.code(), Some(2));

    let bad_momentum = bikd(&["loo", "--config", s(&cfg), "--momentum", "1.5", "--out", s(&out)]);
    assert_eq!(bad_momentum.status.code(), Some(2));

    let bad_axis = bikd(&["ablate", "--config", s(&cfg), "--axis", "depth", "--out", s(&out)]);
    assert_eq!(bad_axis.status.code(), Some(2));

    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    std::fs::write(data.join("subject_000.dbds"), b"not a dataset").unwrap();
    let corrupt = bikd(&["loo", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(corrupt.status.code(), Some(3));
}
