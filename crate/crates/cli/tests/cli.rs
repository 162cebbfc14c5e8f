use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
seeds = [0]
variants = ["regression", "mdn"]

[sim.expert]
p_side = 0.5

[dataset]
tracks = 2
runs_per_track = 2
train_fraction = 0.75

[dataset.track]
length = 700.0
fork_density = 1.5
first_fork = 150.0
last_fork_margin = 150.0

[model.backbone]
widths = [8]
fusion_width = 4

[train]
batch_size = 32
max_epochs = 2
batches_per_epoch = 3

[evaluation]
episodes = 2

[evaluation.track]
length = 600.0

[ablation]
variant = "regression"
fractions = [0.5, 1.0]
histogram_bins = 11
"#;

fn steerlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steerlab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn full_pipeline_on_a_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("run");
    let common = ["--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()];
    let with = |cmd: &str, extra: &[&str]| {
        let mut a = vec![cmd];
        a.extend_from_slice(&common);
        a.extend_from_slice(extra);
        steerlab(&a)
    };

    let out = ok(&with("generate", &[]));
    let n: usize = out.split_whitespace().next().unwrap().parse().unwrap();
    assert!(n >= 4, "{out}");
    assert_eq!(fs::read_dir(run.join("dataset/recordings")).unwrap().count(), n);
    assert!(run.join("dataset/manifest.json").exists());
    assert!(run.join("dataset/recordings/rec_0000.csv").exists());
    assert!(run.join("dataset/fork_labels.csv").exists());
    let manifest = fs::read(run.join("dataset/manifest.json")).unwrap();
    ok(&with("generate", &[]));
    assert_eq!(fs::read(run.join("dataset/manifest.json")).unwrap(), manifest);

    ok(&with("train", &[]));
    for v in ["regression", "mdn"] {
        let d = run.join(format!("models/{v}/seed_0"));
        assert!(d.join("model.ckpt").exists());
        assert!(d.join("fit.json").exists());
        assert!(d.join("curve.csv").exists());
    }
    let again = ok(&with("train", &[]));
    assert_eq!(again.matches("(existing)").count(), 2, "{again}");

    ok(&with("evaluate", &["--jobs", "2"]));
    let episodes = run.join("evaluation/episodes.csv");
    assert_eq!(lines(&episodes), 1 + 2 * 2);
    assert_eq!(lines(&run.join("evaluation/means.csv")), 1 + 2);
    let first = fs::read(&episodes).unwrap();
    ok(&with("evaluate", &["--jobs", "1"]));
    assert_eq!(fs::read(&episodes).unwrap(), first);

    ok(&with("ablate", &[]));
    assert_eq!(lines(&run.join("ablation/sampling.csv")), 1 + 2);
    assert_eq!(lines(&run.join("ablation/data_scaling.csv")), 1 + 2);
    assert_eq!(lines(&run.join("ablation/label_histogram.csv")), 1 + 11);

    let report = steerlab(&["report", run.to_str().unwrap()]);
    let text = ok(&report);
    for id in 1..=10 {
        assert!(text.contains(&format!("AC{id} ")), "{text}");
    }
    assert!(text.contains("absent"));
    assert!(!text.contains("AC1 fail"));
    assert!(run.join("report/report.md").exists());
    assert_eq!(lines(&run.join("report/criteria.csv")), 1 + 10);

    let manifest = fs::read_to_string(run.join("manifest.json")).unwrap();
    for cmd in ["generate", "train", "evaluate", "ablate"] {
        assert!(manifest.contains(&format!("\"{cmd}\"")), "{manifest}");
    }
}

#[test]
fn usage_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "  \n").unwrap();
    let out = steerlab(&["generate", "--config", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));

    assert_eq!(steerlab(&["report"]).status.code(), Some(2));
    assert_eq!(steerlab(&["generate"]).status.code(), Some(2));
}

#[test]
fn bad_configs_are_rejected_with_a_reason() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.toml");
    fs::write(&cfg, "seed = 1\n[train]\nbatchsize = 3\n").unwrap();
    let out = steerlab(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batchsize"));

    fs::write(&cfg, "variants = [\"ebm\", \"lstm\"]\n").unwrap();
    let out = steerlab(&["generate", "--config", cfg.to_str().unwrap()]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(1));
    assert!(err.contains("lstm") && err.contains("regression"), "{err}");
}

#[test]
fn training_without_a_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = steerlab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("none").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("generate"));
}
