use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lightformer::datakit::{label_from_lights, read_frames_csv, read_manifest};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lightformer"));
    cmd.env("LIGHTFORMER_THREADS", "2");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(out: &Output) -> (String, String) {
    (String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    let (stdout, stderr) = text(&out);
    assert!(out.status.success(), "{args:?} failed: {stderr}");
    stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn help_lists_every_flag() {
    let expected: &[(&str, &[&str])] = &[
        ("synth", &["--out", "--scenario", "--drives", "--frames", "--seed", "--force", "--left-shape"]),
        ("prepare", &["--frames", "--n", "--stride", "--out", "--split", "--seed"]),
        ("train", &["--manifest", "--config", "--out", "--ablate-tsa", "--w", "--epochs", "--lr"]),
        ("eval", &["--manifest", "--ckpt"]),
        ("predict", &["--ckpt", "--frames"]),
        ("gradcheck", &["--seeds"]),
    ];
    for (sub, flags) in expected {
        let help = ok(&[sub, "--help"]);
        for flag in *flags {
            assert!(help.contains(flag), "`{sub} --help` lacks {flag}");
        }
    }
    assert!(ok(&["--help"]).contains("Exit status"));
}

#[test]
fn unknown_flags_and_missing_arguments_are_usage_errors() {
    assert_eq!(run(&["synth", "--out", "x", "--colour", "red"]).status.code(), Some(2));
    assert_eq!(run(&["eval", "--manifest", "m"]).status.code(), Some(2));
    assert_eq!(run(&["launch"]).status.code(), Some(2));
}

#[test]
fn synth_counts_determinism_and_force() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["synth", "--out", s(out), "--drives", "2", "--frames", "30", "--seed", "11"]);
    }
    let files = tree(&a);
    assert_eq!(files.keys().filter(|p| p.extension().is_some_and(|e| e == "ppm")).count(), 60);
    assert_eq!(read_frames_csv(a.join("frames.csv")).unwrap().len(), 60);
    assert_eq!(files, tree(&b), "same seed, same bytes");

    // A non-empty directory is refused without --force.
    assert_eq!(run(&["synth", "--out", s(&a), "--drives", "1", "--frames", "3"]).status.code(), Some(2));
    ok(&["synth", "--out", s(&a), "--drives", "2", "--frames", "30", "--seed", "11", "--force"]);
    assert_eq!(tree(&a), files);

    let other = dir.path().join("c");
    ok(&["synth", "--out", s(&other), "--drives", "2", "--frames", "30", "--seed", "12"]);
    assert_ne!(tree(&other), files);
}

#[test]
fn night_synth_reports_distractors() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", s(dir.path()), "--scenario", "night", "--drives", "2", "--frames", "5"]);
    let stats = fs::read_to_string(dir.path().join("synth_stats.txt")).unwrap();
    let count: usize = stats
        .lines()
        .find_map(|l| l.strip_prefix("distractors="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(count > 0, "{stats}");
    assert!(stats.contains("scenario=night"));
}

#[test]
fn prepare_windows_splits_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--drives", "1", "--frames", "20", "--width", "32", "--height", "32"]);
    let csv = data.join("frames.csv");

    let manifest = dir.path().join("out/seqs.tsv");
    ok(&["prepare", "--frames", s(&csv), "--n", "10", "--stride", "2", "--out", s(&manifest)]);
    let samples = read_manifest(&manifest).unwrap();
    assert_eq!(samples.len(), 2);

    // Labels come from the lights of each window's final frame.
    let frames = read_frames_csv(&csv).unwrap();
    for sample in &samples {
        let last = sample.paths.last().unwrap();
        let record = frames.iter().find(|r| last.ends_with(&r.path)).unwrap();
        assert_eq!(sample.label, label_from_lights(record.straight, record.left));
        // Paths resolve from the manifest's directory.
        assert!(manifest.parent().unwrap().join(last).exists());
    }

    let split = dir.path().join("split.tsv");
    ok(&["prepare", "--frames", s(&csv), "--n", "11", "--stride", "1", "--out", s(&split), "--split", "0.8", "--seed", "3"]);
    let train = read_manifest(dir.path().join("split.train.tsv")).unwrap();
    let val = read_manifest(dir.path().join("split.val.tsv")).unwrap();
    assert_eq!((train.len(), val.len()), (8, 2));
}

#[test]
fn malformed_csv_is_a_line_numbered_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("frames.csv");
    fs::write(&csv, "drive,frame,path,straight,left\nd,0,a.ppm,green,red\nd,1,b.ppm,purple,red\n").unwrap();
    let out = run(&["prepare", "--frames", s(&csv), "--n", "1", "--out", s(&dir.path().join("m.tsv"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out).1.contains(":3:"), "{}", text(&out).1);
}

#[test]
fn config_file_errors_and_template() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "epochs = 2\nlearning_rate = 0.1\n").unwrap();
    let out = run(&["config", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out).1.contains("learning_rate"));

    let template = ok(&["config"]);
    fs::write(&cfg, &template).unwrap();
    assert_eq!(ok(&["config", "--config", s(&cfg)]), template);
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--drives", "2", "--frames", "6", "--width", "32", "--height", "32"]);
    let manifest = dir.path().join("seqs.tsv");
    ok(&["prepare", "--frames", s(&data.join("frames.csv")), "--n", "2", "--out", s(&manifest)]);
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "buffer_len = 2\nembed_dim = 8\nnum_heads = 2\nnum_points = 2\nstage_widths = 4,4,8,8\n\
         stage_blocks = 1,1,1,1\nimage_height = 32\nimage_width = 32\nepochs = 5\n",
    )
    .unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let log = dir.path().join("train.log");
    let stdout = ok(&[
        "train", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&ckpt), "--epochs", "2", "--w", "3",
        "--log", s(&log),
    ]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "epoch\tloss\ttrain_acc");
    assert_eq!(lines.len(), 3, "the --epochs flag overrides the file");
    assert_eq!(fs::read_to_string(&log).unwrap(), stdout);
    for line in &lines[1..] {
        assert_eq!(line.split('\t').count(), 3);
    }

    // Same seed, same history and checkpoint.
    let ckpt2 = dir.path().join("model2.ckpt");
    let again = ok(&[
        "train", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&ckpt2), "--epochs", "2", "--w", "3",
    ]);
    assert_eq!(again, stdout);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&ckpt2).unwrap());

    let report = ok(&["eval", "--manifest", s(&manifest), "--ckpt", s(&ckpt)]);
    for key in ["samples=10", "joint_accuracy=", "straight_pass.f1=", "left_stop.recall="] {
        assert!(report.contains(key), "{report}");
    }

    let f0 = data.join("drive000/frame00000.ppm");
    let f1 = data.join("drive000/frame00001.ppm");
    let pred = ok(&["predict", "--ckpt", s(&ckpt), "--frames", s(&f0), s(&f1)]);
    let pred_lines: Vec<&str> = pred.lines().collect();
    assert_eq!(pred_lines.len(), 2);
    assert!(pred_lines[0].starts_with("straight: pass (p=") || pred_lines[0].starts_with("straight: stop (p="));
    assert!(pred_lines[1].starts_with("left: pass (p=") || pred_lines[1].starts_with("left: stop (p="));

    let short = run(&["predict", "--ckpt", s(&ckpt), "--frames", s(&f0)]);
    assert_eq!(short.status.code(), Some(2));
    assert!(text(&short).1.contains("N = 2"));

    // A model whose buffer length disagrees with the manifest is refused.
    let bad = run(&["train", "--manifest", s(&manifest), "--out", s(&ckpt2), "--epochs", "1"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(text(&bad).1.contains("buffer_len"));

    // Damaged checkpoints are data errors.
    let bytes = fs::read(&ckpt).unwrap();
    fs::write(&ckpt2, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(run(&["eval", "--manifest", s(&manifest), "--ckpt", s(&ckpt2)]).status.code(), Some(3));
}

#[test]
fn numeric_failures_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--drives", "1", "--frames", "4", "--width", "32", "--height", "32"]);
    let manifest = dir.path().join("seqs.tsv");
    ok(&["prepare", "--frames", s(&data.join("frames.csv")), "--n", "2", "--out", s(&manifest)]);
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "buffer_len = 2\nembed_dim = 8\nnum_heads = 2\nnum_points = 2\nstage_widths = 4,4,8,8\n\
         stage_blocks = 1,1,1,1\nimage_height = 32\nimage_width = 32\nepochs = 3\nlr = 1e300\n",
    )
    .unwrap();
    let out = run(&["train", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&dir.path().join("m"))]);
    let (_, stderr) = text(&out);
    assert_eq!(out.status.code(), Some(4), "{stderr}");
    assert!(stderr.contains("epoch"), "{stderr}");
}
