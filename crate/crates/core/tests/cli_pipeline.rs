use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axrobust::dataio::{encode_idx_images, encode_idx_labels, mnist_paths, read_report, Split};

/// Writes a tiny MNIST-shaped dataset: each class is a bright horizontal bar
/// at a class-specific row, plus deterministic speckle.
fn synthetic_mnist(dir: &Path, n: usize) {
    for (split, salt) in [(Split::Train, 1u32), (Split::Test, 2u32)] {
        let mut pixels = vec![0u8; n * 784];
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 10) as u8;
            labels.push(label);
            let img = &mut pixels[i * 784..(i + 1) * 784];
            let row = 3 + 2 * label as usize;
            for c in 4..24 {
                img[row * 28 + c] = 255;
                img[(row + 1) * 28 + c] = 200;
            }
            for (k, p) in img.iter_mut().enumerate() {
                let h = (k as u32 ^ (i as u32).wrapping_mul(2654435761) ^ salt).wrapping_mul(2246822519);
                if h % 13 == 0 {
                    *p = p.saturating_add((h >> 24) as u8 / 4);
                }
            }
        }
        let (ip, lp) = mnist_paths(dir, split);
        fs::write(ip, encode_idx_images(n, 28, 28, &pixels)).unwrap();
        fs::write(lp, encode_idx_labels(&labels)).unwrap();
    }
}

fn axrobust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_axrobust")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = axrobust(args);
    assert!(
        out.status.success(),
        "axrobust {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
    root: PathBuf,
}

fn trained() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("mnist");
    fs::create_dir(&data).unwrap();
    synthetic_mnist(&data, 120);
    let model = root.join("m.axm");
    ok(&["train", "--data", s(&data), "--out", s(&model), "--epochs", "2", "--batch-size", "8", "--seed", "3"]);
    ok(&["calibrate", "--data", s(&data), "--model", s(&model), "--calib-images", "50"]);
    Workspace {
        _dir: dir,
        data,
        model,
        root,
    }
}

#[test]
fn gen_luts_writes_one_file_per_multiplier() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gen-luts", "--out", s(dir.path())]);
    let files = fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, 7);
    assert!(out.contains("wrote 7 LUT files"));
    let exact_line = out.lines().find(|l| l.starts_with("ACC")).unwrap();
    let fields: Vec<&str> = exact_line.split_whitespace().collect();
    assert_eq!(&fields[2..5], &["0.000000", "0.000000", "0"]);

    let imported = dir.path().join("drum4.axlut");
    let out = ok(&["lut-stats", "--multipliers", &format!("drum4,lut:{}", s(&imported))]);
    let mreds: Vec<&str> = out.lines().skip(1).map(|l| l.split_whitespace().nth(2).unwrap()).collect();
    assert_eq!(mreds[0], mreds[1]);
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mnist");
    fs::create_dir(&data).unwrap();
    synthetic_mnist(&data, 60);
    let a = dir.path().join("a.axm");
    let b = dir.path().join("b.axm");
    for p in [&a, &b] {
        ok(&["train", "--data", s(&data), "--out", s(p), "--epochs", "1", "--seed", "11", "--threads", "2"]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn zero_budget_sweep_matches_accuracy_command() {
    let w = trained();
    let acc_csv = w.root.join("acc.csv");
    ok(&["eval-accuracy", "--data", s(&w.data), "--model", s(&w.model), "--multipliers", "exact,drum3", "--subset", "40", "--out", s(&acc_csv)]);
    let rob_csv = w.root.join("rob.csv");
    ok(&[
        "eval-robustness", "--data", s(&w.data), "--model", s(&w.model), "--multipliers", "exact",
        "--eps-grid", "0", "--attacks", "fgsm", "--norms", "linf", "--subset", "40", "--out", s(&rob_csv),
    ]);
    let acc_text = fs::read_to_string(&acc_csv).unwrap();
    let exact_acc: f64 = acc_text.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    let report = read_report(&rob_csv).unwrap();
    assert_eq!(report.rows().len(), 1);
    assert_eq!(report.rows()[0].robust_acc, exact_acc);
    assert_eq!(report.rows()[0].n_images, 40);
}

#[test]
fn small_sweep_report_shape() {
    let w = trained();
    let csv = w.root.join("sweep.csv");
    let cfg = w.root.join("run.toml");
    fs::write(&cfg, "multipliers = [\"exact\", \"drum4\"]\neps_grid = [0.0, 0.1, 0.3]\nsubset = 6\nseed = 2\n").unwrap();
    let log = ok(&["eval-robustness", "--config", s(&cfg), "--data", s(&w.data), "--model", s(&w.model), "--norms", "linf", "--out", s(&csv)]);
    assert_eq!(log.lines().filter(|l| l.contains(" eval=")).count(), 18);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("model,multiplier,attack,norm,eps,n_images,clean_acc,robust_acc,seed\n"));
    let report = read_report(&csv).unwrap();
    let rows = report.rows();
    assert_eq!(rows.len(), 18);
    let eps: Vec<f64> = rows[..3].iter().map(|r| r.eps).collect();
    assert_eq!(eps, vec![0.0, 0.1, 0.3]);
    assert!(rows[..9].iter().all(|r| r.multiplier == "exact"));
    assert!(rows.iter().all(|r| r.seed == 2 && r.n_images == 6));

    let again = w.root.join("again.csv");
    ok(&["eval-robustness", "--config", s(&cfg), "--data", s(&w.data), "--model", s(&w.model), "--norms", "linf", "--out", s(&again)]);
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.axm");
    let out = axrobust(&["eval-accuracy", "--model", s(&missing)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.axm"));

    assert!(!axrobust(&["lut-stats", "--multipliers", "drum9"]).status.success());
    assert!(!axrobust(&["frobnicate"]).status.success());
    assert!(!axrobust(&["train", "--data", s(dir.path())]).status.success());
    assert!(axrobust(&["--help"]).status.success());
}

#[test]
fn uncalibrated_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mnist");
    fs::create_dir(&data).unwrap();
    synthetic_mnist(&data, 20);
    let model = dir.path().join("m.axm");
    ok(&["train", "--data", s(&data), "--out", s(&model), "--epochs", "1"]);
    let out = axrobust(&["eval-accuracy", "--data", s(&data), "--model", s(&model)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration"));
}
