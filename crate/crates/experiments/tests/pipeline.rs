use std::path::{Path, PathBuf};
use std::process::Command;

use teleport_core::metrics::MetricsRecord;
use teleport_core::models::{Init, LossKind, MlpArch, MlpParams};
use teleport_core::optimizers::{EpochRecord, TrainConfig};
use teleport_core::rng::{stream, streams};
use teleport_opt::data::synth_dataset;
use teleport_opt::idx::{load_dir, parse_images, CLASSES, IMAGE_MAGIC};
use teleport_opt::output::{read_csv, Status, Summary};
use teleport_opt::runner::{train_run, ShiftRow};
use teleport_opt::{run, ExperimentConfig};

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist_dir() -> PathBuf {
    workspace().join("data/mnist5k")
}

const SYNTH: &str = r#"
experiment = "train"
seed = 3

[dataset]
kind = "synthetic"
dims = [5, 8]
count = 12
split = 0.75

[model]
dims = [5, 6, 7, 8]

[train]
epochs = 4
batch_size = 3
teleport_epochs = [0]
optimizer = { kind = "sgd", lr = 1e-3 }

[train.teleport]
batches = 1
batch_size = 4
"#;

fn synth_cfg() -> ExperimentConfig {
    ExperimentConfig::parse(SYNTH, "inline").unwrap()
}

#[test]
fn emitted_curves_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_cfg();
    let summary = run(&cfg, dir.path()).unwrap();
    assert!(summary.passed());

    let data = synth_dataset([5, 8], 12, 3).unwrap();
    let (fit, test) = data.split(0.75).unwrap();
    let arch = MlpArch::new(vec![5, 6, 7, 8], LossKind::Mse).unwrap();
    let init = MlpParams::init(&arch, Init::Uniform01, &mut stream(3, streams::INIT));
    let tc = TrainConfig {
        seed: 3,
        ..cfg.train.clone().unwrap()
    };
    let direct = train_run(&arch, &init, &fit, Some(&test), &tc).unwrap();

    let parsed: Vec<EpochRecord> = read_csv(&dir.path().join("train.csv")).unwrap();
    assert_eq!(parsed, direct.epochs);
    let text = std::fs::read_to_string(dir.path().join("train.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "epoch,train_loss,test_loss,grad_norm,wall_ms,teleported"
    );
    assert!(!text.contains('\r'));
}

#[test]
fn schedules_differ_only_in_the_teleport_flag_at_epoch_zero() {
    let dir = tempfile::tempdir().unwrap();
    run(&synth_cfg(), dir.path()).unwrap();
    let tele: Vec<EpochRecord> = read_csv(&dir.path().join("train.csv")).unwrap();
    let base: Vec<EpochRecord> = read_csv(&dir.path().join("baseline.csv")).unwrap();
    assert_eq!(tele.len(), base.len());
    let flags = |rs: &[EpochRecord]| rs.iter().map(|r| r.teleported).collect::<Vec<_>>();
    assert_eq!(flags(&tele), vec![true, false, false, false]);
    assert_eq!(flags(&base), vec![false; 4]);
}

#[test]
fn reruns_are_byte_identical_and_timing_stays_in_the_summary() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = synth_cfg();
    run(&cfg, a.path()).unwrap();
    run(&cfg, b.path()).unwrap();
    for file in ["train.csv", "baseline.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap()
        );
    }
    let summary: Summary =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary.config, cfg);
    assert!(summary.started_unix_ms > 0);
    assert_eq!(summary.files.len(), 3);
}

#[test]
fn correlate_writes_records_and_every_pair() {
    let text = r#"
experiment = "correlate"
seed = 4

[dataset]
kind = "synthetic"
dims = [3, 2]
count = 40
split = 0.75

[model]
dims = [3, 4, 2]

[population]
models = 4
directions = 10

[population.train]
epochs = 2
batch_size = 5
optimizer = { kind = "sgd", lr = 0.01 }
"#;
    let dir = tempfile::tempdir().unwrap();
    let summary = run(
        &ExperimentConfig::parse(text, "inline").unwrap(),
        dir.path(),
    )
    .unwrap();
    let records: Vec<MetricsRecord> = read_csv(&dir.path().join("records.csv")).unwrap();
    assert_eq!(records.len(), 4);
    assert_eq!(
        summary.results["correlations"].as_array().unwrap().len(),
        10
    );
    assert_eq!(
        summary
            .verdicts
            .keys()
            .filter(|k| k.starts_with("pearson/"))
            .count(),
        10
    );
    assert!(summary.verdicts["pearson/phi~validation_loss"].detail["r"].is_number());
}

#[test]
fn theory_check_reports_every_proposition() {
    let text = "experiment = \"theory-check\"\nseed = 1\n[theory]\nlemma_samples = 20\nb2_samples = 10\nb3_samples = 5\nnewton_samples = 5\nflow_steps = 200\n";
    let dir = tempfile::tempdir().unwrap();
    let summary = run(
        &ExperimentConfig::parse(text, "inline").unwrap(),
        dir.path(),
    )
    .unwrap();
    let names: Vec<&str> = summary.verdicts.keys().map(String::as_str).collect();
    assert_eq!(
        names,
        [
            "lemma-b1",
            "lemma-b1-indefinite-counterexample",
            "newton-equivalence",
            "one-teleport-booth",
            "one-teleport-ellipse",
            "prop-b2",
            "prop-b3"
        ]
    );
    assert_eq!(summary.verdicts["prop-b3"].status, Status::Fail);
    assert!(!summary.passed());
}

#[test]
fn shift_curve_csv_round_trips() {
    let text = "experiment = \"shift-mc\"\nseed = 2\n[shift]\ncurve = \"circle\"\nks = [1.0, 4.0]\nr = 0.5\nsamples = 500\n";
    let dir = tempfile::tempdir().unwrap();
    let summary = run(
        &ExperimentConfig::parse(text, "inline").unwrap(),
        dir.path(),
    )
    .unwrap();
    let rows: Vec<ShiftRow> = read_csv(&dir.path().join("shift.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].curvature, 0.25);
    assert_eq!(serde_json::to_value(&rows).unwrap(), summary.results);
}

#[test]
fn mnist_subset_loads() {
    let d = load_dir(&mnist_dir()).unwrap();
    assert_eq!((d.rows, d.cols), (28, 28));
    assert_eq!(d.images.shape(), (784, 5000));
    assert_eq!(d.len(), 5000);
    assert!(d.labels.iter().all(|&l| l < CLASSES));
    assert!(d
        .images
        .as_slice()
        .iter()
        .all(|&p| (0.0..=1.0).contains(&p)));
    let bytes = std::fs::read(mnist_dir().join("train-images-idx3-ubyte")).unwrap();
    assert_eq!(
        u32::from_be_bytes(bytes[..4].try_into().unwrap()),
        IMAGE_MAGIC
    );
    let cut = 16 + 784 * 10 + 5;
    let err = parse_images("cut", &bytes[..cut]).unwrap_err();
    assert!(
        err.to_string().contains(&format!("byte offset {cut}")),
        "{err}"
    );
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_teleport-opt"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn cli_validation_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write_config(dir.path(), SYNTH);
    let status = cli()
        .args(["train", "--config"])
        .arg(&ok)
        .arg("--validate-only")
        .status()
        .unwrap();
    assert!(status.success());

    let bad = write_config(
        dir.path(),
        &SYNTH.replace("batch_size = 3", "batch_size = 0"),
    );
    let out = cli()
        .args(["train", "--config"])
        .arg(&bad)
        .arg("--validate-only")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));

    let wrong_kind = cli()
        .args(["correlate", "--config"])
        .arg(&ok)
        .arg("--validate-only")
        .output()
        .unwrap();
    assert_eq!(wrong_kind.status.code(), Some(2));

    let listed = cli().arg("--list-experiments").output().unwrap();
    let text = String::from_utf8(listed.stdout).unwrap();
    for name in [
        "train",
        "teleport-sweep",
        "correlate",
        "theory-check",
        "shift-mc",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(name)),
            "{name} missing from {text}"
        );
    }
}

#[test]
fn cli_seed_and_out_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SYNTH);
    let out = dir.path().join("run");
    let status = cli()
        .args(["train", "--seed", "9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let summary: Summary =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.seed, 9);
    assert_eq!(summary.config.output.as_deref(), Some(out.as_path()));
}

#[test]
fn cli_fails_when_a_check_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiment = \"theory-check\"\nseed = 1\n[theory]\nlemma_samples = 5\nb2_samples = 5\nb3_samples = 5\nnewton_samples = 5\nflow_steps = 100\n");
    let out = cli()
        .args(["theory-check", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prop-b3"));
}

#[test]
fn data_root_variable_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "experiment = \"train\"\nseed = 0\n[dataset]\nkind = \"mnist\"\npath = \"data/mnist5k\"\nsubset = 50\n[model]\ndims = [784, 4, 10]\nloss = \"cross-entropy\"\n[train]\nepochs = 1\nbatch_size = 10\noptimizer = {{ kind = \"sgd\", lr = 0.01 }}\n"
    );
    let cfg = write_config(dir.path(), &text);
    let run_in = |root: Option<&Path>| {
        let mut c = cli();
        c.current_dir(dir.path())
            .args(["train", "--validate-only", "--config"])
            .arg(&cfg);
        match root {
            Some(r) => c.env(teleport_opt::config::DATA_ROOT_ENV, r),
            None => c.env_remove(teleport_opt::config::DATA_ROOT_ENV),
        };
        c.output().unwrap()
    };
    assert_eq!(run_in(None).status.code(), Some(2));
    assert!(run_in(Some(&workspace())).status.success());
}

#[test]
fn sweep_trains_both_variants_from_one_initialization() {
    let text = r#"
experiment = "teleport-sweep"
seed = 5

[dataset]
kind = "synthetic"
dims = [3, 2]
count = 30

[model]
dims = [3, 4, 2]

[train]
epochs = 3
batch_size = 5
teleport_epochs = [0]
optimizer = { kind = "sgd", lr = 0.01 }

[train.teleport]
batches = 2
batch_size = 3

[sweep]
seeds = 2
optimizers = [{ kind = "sgd", lr = 0.01 }, { kind = "adam", lr = 0.01 }]
"#;
    let dir = tempfile::tempdir().unwrap();
    let summary = run(
        &ExperimentConfig::parse(text, "inline").unwrap(),
        dir.path(),
    )
    .unwrap();
    assert_eq!(summary.verdicts.len(), 2);
    assert!(summary.verdicts.contains_key("speedup/1-adam"));
    assert_eq!(summary.files.len(), 2 * 2 * 2 + 1);
    let base: Vec<EpochRecord> =
        read_csv(&dir.path().join("sweep/0-sgd_seed6_baseline.csv")).unwrap();
    assert_eq!(base.len(), 3);
}
