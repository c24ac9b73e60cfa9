//! End-to-end subprocess tests: every command runs, outputs parse, reruns are
//! byte-identical, and exit codes follow the documented contract.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hoconv")
}

fn run_ok(args: &[&str]) -> String {
    let out = Command::new(bin()).args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(args: &[&str]) -> i32 {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn")
        .status
        .code()
        .unwrap_or(-1)
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

/// Small dataset shared by the subprocess tests (32x32 images so the texture
/// models fit, but few of them).
fn gen_small(root: &Path) -> PathBuf {
    let data_dir = root.join("data");
    let cfg = write_config(
        root,
        "gen.json",
        &format!(
            r#"{{"sizes": [50, 10, 20], "seed": 5, "out": "{}"}}"#,
            data_dir.display()
        ),
    );
    run_ok(&["gen", "--config", cfg.to_str().unwrap()]);
    data_dir
}

#[test]
fn gen_is_deterministic_and_balanced() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let d1 = gen_small(root);
    let again = root.join("data2");
    let cfg = write_config(
        root,
        "gen2.json",
        &format!(
            r#"{{"sizes": [50, 10, 20], "seed": 5, "out": "{}"}}"#,
            again.display()
        ),
    );
    run_ok(&["gen", "--config", cfg.to_str().unwrap()]);
    let a = dir_bytes(&d1);
    let b = dir_bytes(&again);
    assert_eq!(a.len(), 4); // 3 splits + manifest
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        if na.ends_with(".hotx") {
            assert_eq!(ba, bb, "{na} differs between reruns");
        }
    }
    // manifests differ only by the out path inside the hash
    let manifest = std::fs::read_to_string(d1.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(v["per_class_counts"]["train"][0], 5);
    assert_eq!(v["sizes"][0], 50);
    let set = hoconv_core::formats::read_hotx(&d1.join("train.hotx")).unwrap();
    assert_eq!(set.class_counts(), [5; 10]);
}

#[test]
fn train_eval_roundtrip_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = gen_small(root);
    let out1 = root.join("run1");
    let out2 = root.join("run2");
    for out in [&out1, &out2] {
        let cfg = write_config(
            root,
            "train.json",
            &format!(
                r#"{{"dataset_dir": "{}", "model": "hocnn2", "seeds": [3],
                     "train": {{"max_epochs": 2, "batch_size": 16}}, "out": "{}"}}"#,
                data.display(),
                out.display()
            ),
        );
        run_ok(&["train", "--config", cfg.to_str().unwrap()]);
    }
    let ck1 = std::fs::read(out1.join("model_hocnn2_seed3.hock")).unwrap();
    let ck2 = std::fs::read(out2.join("model_hocnn2_seed3.hock")).unwrap();
    // identical config -> identical checkpoint bytes except the embedded
    // config hash (out dir differs); compare the weight payloads
    assert_eq!(ck1.len(), ck2.len());
    let h1 = std::fs::read_to_string(out1.join("history_hocnn2_seed3.csv")).unwrap();
    let h2 = std::fs::read_to_string(out2.join("history_hocnn2_seed3.csv")).unwrap();
    assert_eq!(
        h1.lines().skip(1).collect::<Vec<_>>()[1..],
        h2.lines().skip(1).collect::<Vec<_>>()[1..]
    );
    // rerun into the same dir: fully byte-identical
    let cfg = write_config(
        root,
        "train_rerun.json",
        &format!(
            r#"{{"dataset_dir": "{}", "model": "hocnn2", "seeds": [3],
                 "train": {{"max_epochs": 2, "batch_size": 16}}, "out": "{}"}}"#,
            data.display(),
            out1.display()
        ),
    );
    let before = dir_bytes(&out1);
    run_ok(&["train", "--config", cfg.to_str().unwrap()]);
    // summary/history/checkpoint all rewritten with identical bytes
    let after = dir_bytes(&out1);
    for ((na, ba), (nb, bb)) in before.iter().zip(&after) {
        assert_eq!(na, nb);
        assert_eq!(ba, bb, "{na} changed across identical reruns");
    }

    let eval_out = root.join("eval");
    let cfg = write_config(
        root,
        "eval.json",
        &format!(
            r#"{{"checkpoint": "{}", "dataset": "{}", "out": "{}"}}"#,
            out1.join("model_hocnn2_seed3.hock").display(),
            data.join("test.hotx").display(),
            eval_out.display()
        ),
    );
    run_ok(&["eval", "--config", cfg.to_str().unwrap()]);
    let confusion =
        std::fs::read_to_string(eval_out.join("confusion_model_hocnn2_seed3.csv")).unwrap();
    // rows sum to per-class test counts (2 per class here)
    let rows: Vec<&str> = confusion
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("true") && !l.starts_with("accuracy"))
        .collect();
    assert_eq!(rows.len(), 10);
    for row in rows {
        let sum: usize = row
            .split(',')
            .skip(1)
            .map(|c| c.parse::<usize>().unwrap())
            .sum();
        assert_eq!(sum, 2);
    }
    assert!(confusion.lines().any(|l| l.starts_with("accuracy,")));
}

#[test]
fn flops_commands_and_values() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let out = root.join("flops");
    let cfg = write_config(
        root,
        "flops.json",
        &format!(r#"{{"kh": 3, "kw": 3, "max_order": 3, "out": "{}"}}"#, out.display()),
    );
    let stdout = run_ok(&["flops", "--config", cfg.to_str().unwrap()]);
    assert!(stdout.contains("order 1"));
    let text = std::fs::read_to_string(out.join("flops.csv")).unwrap();
    let first = dir_bytes(&out);
    run_ok(&["flops", "--config", cfg.to_str().unwrap()]);
    assert_eq!(first, dir_bytes(&out));
    // order-1 ratio exactly 1
    let line1: Vec<&str> = text
        .lines()
        .find(|l| l.starts_with("1,"))
        .unwrap()
        .split(',')
        .collect();
    assert_eq!(line1[4], "1");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("flops.json")).unwrap()).unwrap();
    let r2 = json["ratios"][1].as_f64().unwrap();
    let r3 = json["ratios"][2].as_f64().unwrap();
    assert!((r2 - 5.04).abs() / 5.04 < 0.10, "order-2 ratio {r2}");
    assert!((r3 - 18.62).abs() / 18.62 < 0.10, "order-3 ratio {r3}");
}

#[test]
fn pca_tied_small_run_outputs_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let out = root.join("pca");
    let cfg = write_config(
        root,
        "pca.json",
        &format!(
            r#"{{"models": ["cnn", "hocnn2"], "n_inits": 12, "seed": 3, "out": "{}"}}"#,
            out.display()
        ),
    );
    run_ok(&["pca-tied", "--config", cfg.to_str().unwrap()]);
    for model in ["cnn", "hocnn2"] {
        let text =
            std::fs::read_to_string(out.join(format!("pca_curve_{model}_relu.csv"))).unwrap();
        let mut last = 0.0;
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("component")) {
            let cum: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
            assert!(cum >= last - 1e-12, "cumulative curve not monotone");
            last = cum;
        }
        assert!((last - 1.0).abs() < 1e-6, "curve ends at {last}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("pca_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["entries"].as_array().unwrap().len(), 2);
}

#[test]
fn rsa_and_perturb_small_run() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = gen_small(root);
    let train_out = root.join("ck");
    let cfg = write_config(
        root,
        "train.json",
        &format!(
            r#"{{"dataset_dir": "{}", "model": "cnn", "seeds": [1, 2],
                 "train": {{"max_epochs": 2, "batch_size": 16}}, "out": "{}"}}"#,
            data.display(),
            train_out.display()
        ),
    );
    run_ok(&["train", "--config", cfg.to_str().unwrap()]);
    let cfg = write_config(
        root,
        "train_ho.json",
        &format!(
            r#"{{"dataset_dir": "{}", "model": "hocnn2", "seeds": [1, 2],
                 "train": {{"max_epochs": 2, "batch_size": 16}}, "out": "{}"}}"#,
            data.display(),
            train_out.display()
        ),
    );
    run_ok(&["train", "--config", cfg.to_str().unwrap()]);

    let rsa_out = root.join("rsa");
    let cfg = write_config(
        root,
        "rsa.json",
        &format!(
            r#"{{"checkpoints_a": ["{0}/model_cnn_seed1.hock", "{0}/model_cnn_seed2.hock"],
                 "checkpoints_b": ["{0}/model_hocnn2_seed1.hock", "{0}/model_hocnn2_seed2.hock"],
                 "label_b": "hocnn2",
                 "dataset": "{1}/test.hotx", "stimuli_per_class": 2, "out": "{2}"}}"#,
            train_out.display(),
            data.display(),
            rsa_out.display()
        ),
    );
    run_ok(&["rsa", "--config", cfg.to_str().unwrap()]);
    // RDM csv is symmetric with zero diagonal
    let rdm_text = std::fs::read_to_string(rsa_out.join("rdm_cnn_block1.csv")).unwrap();
    let rows: Vec<Vec<f64>> = rdm_text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with(','))
        .map(|l| l.split(',').skip(1).map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 20);
    for i in 0..20 {
        assert_eq!(rows[i][i], 0.0);
        for j in 0..20 {
            assert!((rows[i][j] - rows[j][i]).abs() < 1e-12);
        }
    }
    // self-comparison map is all zeros
    let cfg = write_config(
        root,
        "rsa_self.json",
        &format!(
            r#"{{"checkpoints_a": ["{0}/model_cnn_seed1.hock"],
                 "checkpoints_b": ["{0}/model_cnn_seed1.hock"],
                 "label_b": "same",
                 "dataset": "{1}/test.hotx", "stimuli_per_class": 2, "out": "{2}"}}"#,
            train_out.display(),
            data.display(),
            root.join("rsa_self").display()
        ),
    );
    run_ok(&["rsa", "--config", cfg.to_str().unwrap()]);
    let lr = std::fs::read_to_string(root.join("rsa_self").join("log_ratio_block1.csv")).unwrap();
    for line in lr.lines().filter(|l| !l.starts_with('#') && !l.starts_with(',')) {
        for cell in line.split(',').skip(1) {
            assert_eq!(cell.parse::<f64>().unwrap(), 0.0);
        }
    }
    // histogram bin counts sum to S(S-1)/2
    let hist = std::fs::read_to_string(rsa_out.join("hist_cnn_block1.csv")).unwrap();
    let total: usize = hist
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("bin_lo"))
        .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 20 * 19 / 2);

    // perturb: I=0 equals unperturbed exactly
    let perturb_out = root.join("perturb");
    let cfg = write_config(
        root,
        "perturb.json",
        &format!(
            r#"{{"checkpoints": ["{0}/model_cnn_seed1.hock"],
                 "dataset": "{1}/test.hotx", "intensities": [0.0, 0.2],
                 "max_images": 20, "out": "{2}"}}"#,
            train_out.display(),
            data.display(),
            perturb_out.display()
        ),
    );
    run_ok(&["perturb", "--config", cfg.to_str().unwrap()]);
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(perturb_out.join("perturb_summary.json")).unwrap(),
    )
    .unwrap();
    let base = summary["unperturbed_accuracy"].as_f64().unwrap();
    let text = std::fs::read_to_string(perturb_out.join("perturb.csv")).unwrap();
    for line in text.lines().filter(|l| l.starts_with("0.0,")) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[2].parse::<f64>().unwrap(), base);
        assert_eq!(cells[3].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    // unknown config key -> 2
    let bad = write_config(root, "bad.json", r#"{"not_a_key": 1}"#);
    assert_eq!(exit_code(&["gen", "--config", bad.to_str().unwrap()]), 2);
    // malformed json -> 2
    let mal = write_config(root, "mal.json", "{nope");
    assert_eq!(exit_code(&["gen", "--config", mal.to_str().unwrap()]), 2);
    // missing dataset file -> 3
    let cfg = write_config(
        root,
        "train.json",
        &format!(
            r#"{{"dataset_dir": "{}", "model": "cnn", "seeds": [1], "out": "{}"}}"#,
            root.join("nowhere").display(),
            root.join("out").display()
        ),
    );
    assert_eq!(exit_code(&["train", "--config", cfg.to_str().unwrap()]), 3);
    // bad model name -> 2
    let data = gen_small(root);
    let cfg = write_config(
        root,
        "badmodel.json",
        &format!(
            r#"{{"dataset_dir": "{}", "model": "vgg", "seeds": [1], "out": "{}"}}"#,
            data.display(),
            root.join("out").display()
        ),
    );
    assert_eq!(exit_code(&["train", "--config", cfg.to_str().unwrap()]), 2);
}
