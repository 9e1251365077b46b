use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn evtnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evtnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = evtnet(args);
    assert!(
        out.status.success(),
        "evtnet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &[
    "--set",
    "conv_channels=2,2,2",
    "--set",
    "image_feature_size=4",
    "--set",
    "metadata_feature_size=4",
    "--set",
    "clinic_hidden=8",
    "--set",
    "max_epochs=2",
    "--set",
    "target_dims=4,16,16",
];

fn synth(dir: &Path) -> String {
    let out = dir.join("cohort");
    ok(&[
        "synth",
        "--out-dir",
        out.to_str().unwrap(),
        "--signal",
        "metadata",
        "--seed",
        "3",
        "--set",
        "class_counts=3,4,5,6,5,4,3",
        "--set",
        "dims=4,16,16",
    ]);
    out.join("manifest.csv").to_str().unwrap().to_string()
}

fn args<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(tail).copied().collect()
}

#[test]
fn synth_train_eval_predict_report() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    assert!(fs::read_to_string(tmp.path().join("cohort/config.txt"))
        .unwrap()
        .contains("signal=metadata"));

    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();
    let stdout = ok(&args(
        &[
            "train",
            "--manifest",
            &manifest,
            "--mode",
            "multimodal",
            "--out-dir",
            run_s,
        ],
        SMALL,
    ));
    assert!(stdout.contains("experiment=dichotomised"));
    for f in [
        "config.txt",
        "report.txt",
        "history.csv",
        "predictions.csv",
        "model.stkf",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let resolved = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(resolved.contains("conv_channels=2,2,2"));
    assert!(resolved.contains("max_epochs=2"));

    // evaluating the checkpoint with the resolved config reproduces the run
    let ckpt = run.join("model.stkf");
    let eval_dir = tmp.path().join("eval");
    let cfg = run.join("config.txt");
    let report = ok(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(report, fs::read_to_string(run.join("report.txt")).unwrap());
    assert!(eval_dir.join("config.txt").exists());

    let preds = ok(&[
        "predict",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    let lines: Vec<&str> = preds.lines().collect();
    assert_eq!(lines[0], "id,prediction,p0,p1");
    assert_eq!(lines.len(), 31);

    let table = ok(&["report", run.join("report.txt").to_str().unwrap()]);
    assert!(table.starts_with("mode,attention,"));
    assert!(table.contains("multimodal,on,"));
}

#[test]
fn ablation_and_preprocess() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());

    let prep = tmp.path().join("prep");
    ok(&args(
        &[
            "preprocess",
            "--manifest",
            &manifest,
            "--out-dir",
            prep.to_str().unwrap(),
        ],
        SMALL,
    ));
    let prepared = prep.join("manifest.csv");
    assert!(prepared.exists());
    assert!(prep.join("volumes/P0000.svol").exists());

    let run = tmp.path().join("abl");
    let table = ok(&args(
        &[
            "train",
            "--manifest",
            prepared.to_str().unwrap(),
            "--mode",
            "image_only",
            "--out-dir",
            run.to_str().unwrap(),
            "--ablation",
        ],
        SMALL,
    ));
    assert!(table.contains("image_only,on,"));
    assert!(table.contains("image_only,off,"));
    assert!(run.join("ablation.csv").exists());
    assert!(run.join("attention_off/model.stkf").exists());
}

#[test]
fn config_file_with_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# small run\nmanifest={manifest}\nmode=image_only\nexperiment=individual\nmax_epochs=1\nconv_channels=2,2,2\ntarget_dims=4,16,16\n"
        ),
    )
    .unwrap();
    let run = tmp.path().join("run");
    let stdout = ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "metadata_only",
        "--set",
        "seed=5",
        "--out-dir",
        run.to_str().unwrap(),
    ]);
    assert!(stdout.contains("experiment=individual"));
    assert!(stdout.contains("mode=metadata_only"));
    let resolved = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(resolved.contains("seed=5"));
    assert!(resolved.contains("mode=metadata_only"));
}

#[test]
fn errors_exit_nonzero_with_context() {
    let tmp = tempfile::tempdir().unwrap();
    let out = evtnet(&["train", "--set", "max_epochs=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no manifest"));

    let out = evtnet(&["train", "--set", "no_such_key=1", "--manifest", "x.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let bad = tmp.path().join("bad.stkf");
    fs::write(&bad, b"STKF\x01").unwrap();
    let manifest = synth(tmp.path());
    let out = evtnet(&["eval", "--manifest", &manifest, "--checkpoint", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("checkpoint"), "{err}");
}
