//! CLI acceptance: determinism of train/evaluate/sweep (criterion 8), the
//! documented exit codes, and the bound/power reference outputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn whlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_whlab"))
        .args(args)
        .current_dir(dir)
        .env("WHLAB_OUT", dir.join("default-out"))
        .output()
        .expect("failed to launch whlab")
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

const DESK_CFG: &str = "\
seed = 11
model.n = 8
model.k = 4
model.q = 16
model.v = 1
model.domain = walsh
train.batch = 256
train.enc_steps = 3
train.dec_steps = 9
train.epochs = 4
train.val_size = 1024
eval.snr_grid = 0:2:6
eval.min_errors = 30
eval.max_blocks = 8000
";

#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_cfg(dir, "desk.cfg", DESK_CFG);

    // train twice
    for out in ["t1", "t2"] {
        let r = whlab(&["train", "--config", &cfg, "--out", out], dir);
        assert!(r.status.success(), "train failed: {}", String::from_utf8_lossy(&r.stderr));
    }
    let ckpt1 = fs::read(dir.join("t1/checkpoint.txt")).unwrap();
    let ckpt2 = fs::read(dir.join("t2/checkpoint.txt")).unwrap();
    assert_eq!(ckpt1, ckpt2, "checkpoints differ between reruns");
    assert_eq!(
        fs::read(dir.join("t1/train_log.csv")).unwrap(),
        fs::read(dir.join("t2/train_log.csv")).unwrap(),
        "training logs differ between reruns"
    );

    // evaluate twice from the same checkpoint
    let ckpt = dir.join("t1/checkpoint.txt");
    for out in ["e1", "e2"] {
        let r = whlab(
            &[
                "evaluate",
                "--config",
                &cfg,
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--out",
                out,
            ],
            dir,
        );
        assert!(r.status.success(), "evaluate failed: {}", String::from_utf8_lossy(&r.stderr));
    }
    let bler1 = fs::read(dir.join("e1/bler.csv")).unwrap();
    assert_eq!(
        bler1,
        fs::read(dir.join("e2/bler.csv")).unwrap(),
        "BLER CSVs differ between reruns"
    );

    // sweep twice (two grid points, parallel workers)
    let sweep_cfg = write_cfg(
        dir,
        "sweep.cfg",
        "\
seed = 5
model.n = 8
model.k = 4
model.q = 8,12
model.v = 1
train.batch = 128
train.enc_steps = 2
train.dec_steps = 4
train.epochs = 2
train.val_size = 512
eval.snr_grid = 0:2:4
eval.min_errors = 20
eval.max_blocks = 4000
",
    );
    for out in ["s1", "s2"] {
        let r = whlab(&["sweep", "--config", &sweep_cfg, "--jobs", "2", "--out", out], dir);
        assert!(r.status.success(), "sweep failed: {}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(
        fs::read(dir.join("s1/summary.csv")).unwrap(),
        fs::read(dir.join("s2/summary.csv")).unwrap(),
        "sweep summaries differ between reruns"
    );
    for point in ["q8", "q12"] {
        for file in ["checkpoint.txt", "bler.csv", "train_log.csv", "power.csv"] {
            assert_eq!(
                fs::read(dir.join("s1").join(point).join(file)).unwrap(),
                fs::read(dir.join("s2").join(point).join(file)).unwrap(),
                "sweep artifact {point}/{file} differs between reruns"
            );
        }
    }
    println!("criterion 8 PASS: train/evaluate/sweep reruns are byte-identical");
}

#[test]
fn rerunning_from_the_resolved_echo_reproduces_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_cfg(dir, "desk.cfg", DESK_CFG);
    let r = whlab(&["train", "--config", &cfg, "--out", "a"], dir);
    assert!(r.status.success());
    let echo = dir.join("a/resolved.cfg");
    let r = whlab(
        &["train", "--config", echo.to_str().unwrap(), "--out", "b"],
        dir,
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(
        fs::read(dir.join("a/checkpoint.txt")).unwrap(),
        fs::read(dir.join("b/checkpoint.txt")).unwrap()
    );
}

#[test]
fn bound_prints_shannon_and_fbl_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let r = whlab(&["bound", "--rate", "0.5", "--n", "32", "--pe", "1e-3"], tmp.path());
    assert!(r.status.success());
    let out = String::from_utf8(r.stdout).unwrap();
    assert!(out.contains("shannon_snr_db=0"), "{out}");
    let fbl: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("fbl_threshold_snr_db="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((fbl - 2.99).abs() < 0.02, "fbl threshold {fbl}");
}

#[test]
fn power_reports_pareto_efficiency() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_cfg(
        dir,
        "power.cfg",
        "model.n = 32\nmodel.k = 16\nmodel.q = 500\nmodel.v = 4\npower.converters = walsh\n",
    );
    let r = whlab(&["power", "--config", &cfg], dir);
    assert!(r.status.success());
    let out = String::from_utf8(r.stdout).unwrap();
    let ee: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("ee_bit_per_joule,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(
        (ee - 3.55e9).abs() / 3.55e9 < 0.05,
        "EE {ee} outside the 5% band around 3.55e9"
    );
}

#[test]
fn exit_code_1_on_malformed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bad = write_cfg(dir, "bad.cfg", "model.blocksize = 8\n");
    let r = whlab(&["train", "--config", &bad, "--out", "x"], dir);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8(r.stderr).unwrap();
    assert!(err.contains("unknown key"), "{err}");

    let missing = dir.join("does-not-exist.cfg");
    let r = whlab(
        &["train", "--config", missing.to_str().unwrap(), "--out", "x"],
        dir,
    );
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn exit_code_2_on_unbracketed_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let csv = dir.join("curve.csv");
    fs::write(
        &csv,
        "snr_db,blocks,block_errors,bler\n0,100,50,0.5\n1,100,20,0.2\n",
    )
    .unwrap();
    let r = whlab(
        &["threshold", "--bler", csv.to_str().unwrap(), "--target", "1e-3"],
        dir,
    );
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8(r.stderr).unwrap();
    assert!(err.contains("not bracketed"), "{err}");
}

#[test]
fn exit_code_3_on_training_abort() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // An absurd learning rate blows the parameters up to non-finite values.
    let cfg = write_cfg(
        dir,
        "abort.cfg",
        "\
seed = 1
model.n = 8
model.k = 4
model.q = 8
model.v = 1
train.batch = 64
train.enc_steps = 4
train.dec_steps = 4
train.epochs = 8
train.val_size = 128
train.lr = 1e300
",
    );
    let r = whlab(&["train", "--config", &cfg, "--out", "x"], dir);
    assert_eq!(r.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&r.stderr));
    // Aborted runs must not leave partial artifacts behind.
    assert!(!dir.join("x/checkpoint.txt").exists());
    assert!(!dir.join("x/train_log.csv").exists());
}

#[test]
fn threshold_reads_curve_and_interpolates() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let csv = dir.join("curve.csv");
    fs::write(
        &csv,
        "snr_db,blocks,block_errors,bler\n2,1000000,2000,0.002\n3,1000000,500,0.0005\n",
    )
    .unwrap();
    let r = whlab(
        &["threshold", "--bler", csv.to_str().unwrap(), "--target", "1e-3"],
        dir,
    );
    assert!(r.status.success());
    let out = String::from_utf8(r.stdout).unwrap();
    assert_eq!(out.trim(), "threshold_snr_db=2.5");
}

#[test]
fn polar_sim_emits_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_cfg(
        dir,
        "polar.cfg",
        "\
seed = 2
model.n = 32
model.k = 16
polar.list_size = 4
eval.snr_grid = 2:1:3
eval.min_errors = 25
eval.max_blocks = 4000
",
    );
    let r = whlab(&["polar-sim", "--config", &cfg, "--out", "p"], dir);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = fs::read_to_string(dir.join("p/bler.csv")).unwrap();
    assert!(csv.contains("# model=polar_l4"));
    assert!(csv.contains("snr_db,blocks,block_errors,bler"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);
}
