//! Experiment dispatch.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use teleport_core::metrics::correlation_study;
use teleport_core::models::{Dataset, MlpArch, MlpParams, QuadraticSpec};
use teleport_core::optimizers::{train, EpochRecord, RunRecord, TrainConfig};
use teleport_core::rng::{stream, streams};
use teleport_core::theory::{
    check_prop_b2, check_prop_b3, lemma_b1, minima_shift_mc, newton_equivalence_test,
    one_teleport_flow_test, random_spd, random_vector,
};
use teleport_core::Mat;

use crate::config::{ExperimentConfig, ExperimentKind, ModelConfig, SweepConfig, TheoryConfig};
use crate::data::load_dataset;
use crate::error::{CoreContext, Result};
use crate::output::{to_value, write_csv, write_json, Summary, Verdict, Verdicts};

pub const SUMMARY_FILE: &str = "summary.json";

/// What one experiment produced before the summary is assembled.
#[derive(Debug, Default)]
pub struct Outcome {
    pub results: serde_json::Value,
    pub verdicts: Verdicts,
    pub files: Vec<PathBuf>,
}

/// Runs the experiment, writes its CSV files and `summary.json` under `out`, and returns the summary.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let clock = Instant::now();
    log::info!("running {} with seed {}", cfg.experiment.name(), cfg.seed);
    let outcome = match cfg.experiment {
        ExperimentKind::Train => run_train(cfg, out)?,
        ExperimentKind::TeleportSweep => run_sweep(cfg, out)?,
        ExperimentKind::Correlate => run_correlate(cfg, out)?,
        ExperimentKind::TheoryCheck => run_theory(cfg)?,
        ExperimentKind::ShiftMc => run_shift(cfg, out)?,
    };
    let mut files = outcome.files;
    files.push(PathBuf::from(SUMMARY_FILE));
    let summary = Summary {
        experiment: cfg.experiment.name().to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        started_unix_ms: started,
        elapsed_ms: clock.elapsed().as_millis() as u64,
        results: outcome.results,
        verdicts: outcome.verdicts,
        files,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn model_parts(cfg: &ExperimentConfig) -> Result<(&ModelConfig, MlpArch)> {
    let model = cfg.model.as_ref().expect("validated config has a model");
    let arch = model.arch().context("building the model")?;
    Ok((model, arch))
}

fn datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Dataset>)> {
    load_dataset(
        cfg.dataset
            .as_ref()
            .expect("validated config has a dataset"),
        cfg.seed,
    )
}

fn run_summary(run: &RunRecord) -> serde_json::Value {
    let last = run.epochs.last();
    json!({
        "epochs_completed": run.epochs.len(),
        "final_train_loss": last.map(|e| e.train_loss),
        "final_test_loss": last.and_then(|e| e.test_loss),
        "final_grad_norm": last.map(|e| e.grad_norm),
        "aborted": run.aborted,
        "flags": run.flags,
        "teleports": run.teleports,
    })
}

fn finite_verdict(run: &RunRecord) -> Verdict {
    match &run.aborted {
        Some(reason) => Verdict::check(false, reason),
        None => Verdict::check(true, json!({ "epochs": run.epochs.len() })),
    }
}

/// Trains `init` with `cfg` and returns the run; the config is validated by `train`.
pub fn train_run(
    arch: &MlpArch,
    init: &MlpParams,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    let (_, run) = train(arch, init, data, test, cfg)
        .context(format!("training with {}", cfg.optimizer.name()))?;
    Ok(run)
}

fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let (model, arch) = model_parts(cfg)?;
    let (data, test) = datasets(cfg)?;
    let tc = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone().expect("validated config has [train]")
    };
    let init = MlpParams::init(&arch, model.init, &mut stream(cfg.seed, streams::INIT));
    let mut outcome = Outcome::default();
    let mut results = serde_json::Map::new();

    let run = train_run(&arch, &init, &data, test.as_ref(), &tc)?;
    write_csv(&out.join("train.csv"), &run.epochs)?;
    outcome.files.push("train.csv".into());
    outcome
        .verdicts
        .insert("train-finite".into(), finite_verdict(&run));
    results.insert("train".into(), run_summary(&run));

    if tc.teleport_epochs.is_empty() {
        outcome.verdicts.insert(
            "baseline-finite".into(),
            Verdict::skipped("no teleport epochs, so the run is its own baseline"),
        );
    } else {
        let base_cfg = TrainConfig {
            teleport_epochs: BTreeSet::new(),
            ..tc.clone()
        };
        let base = train_run(&arch, &init, &data, test.as_ref(), &base_cfg)?;
        write_csv(&out.join("baseline.csv"), &base.epochs)?;
        outcome.files.push("baseline.csv".into());
        outcome
            .verdicts
            .insert("baseline-finite".into(), finite_verdict(&base));
        results.insert("baseline".into(), run_summary(&base));
    }
    outcome.results = serde_json::Value::Object(results);
    Ok(outcome)
}

/// Final train losses of one optimizer over the sweep seeds.
#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub optimizer: String,
    pub seed: u64,
    pub baseline: Vec<EpochRecord>,
    pub teleport: Vec<EpochRecord>,
    pub baseline_aborted: Option<String>,
    pub teleport_aborted: Option<String>,
    pub teleport_grad_norm: Option<(f64, f64)>,
    pub teleport_drift: Option<f64>,
}

impl SweepEntry {
    pub fn final_losses(&self) -> Option<(f64, f64)> {
        Some((
            self.baseline.last()?.train_loss,
            self.teleport.last()?.train_loss,
        ))
    }

    /// The teleport run ended at or below the baseline training loss.
    pub fn teleport_wins(&self) -> bool {
        self.baseline_aborted.is_none()
            && self.teleport_aborted.is_none()
            && self.final_losses().is_some_and(|(b, t)| t <= b)
    }
}

/// Baseline and teleport runs for every (optimizer, seed) pair. Seed `i` is `base_seed + i`; both
/// runs of a pair start from the same initialization and shuffle order.
pub fn sweep(
    arch: &MlpArch,
    model: &ModelConfig,
    data: &Dataset,
    test: Option<&Dataset>,
    train_cfg: &TrainConfig,
    sweep_cfg: &SweepConfig,
    base_seed: u64,
) -> Result<Vec<SweepEntry>> {
    let jobs: Vec<(usize, u64)> = (0..sweep_cfg.optimizers.len())
        .flat_map(|o| (0..sweep_cfg.seeds as u64).map(move |s| (o, base_seed.wrapping_add(s))))
        .collect();
    jobs.par_iter()
        .map(|&(o, seed)| {
            let optimizer = sweep_cfg.optimizers[o];
            let init = MlpParams::init(arch, model.init, &mut stream(seed, streams::INIT));
            let tele_cfg = TrainConfig {
                optimizer,
                seed,
                ..train_cfg.clone()
            };
            let base_cfg = TrainConfig {
                teleport_epochs: BTreeSet::new(),
                ..tele_cfg.clone()
            };
            let base = train_run(arch, &init, data, test, &base_cfg)?;
            let tele = train_run(arch, &init, data, test, &tele_cfg)?;
            let first = tele.teleports.first();
            Ok(SweepEntry {
                optimizer: format!("{o}-{}", optimizer.name()),
                seed,
                baseline: base.epochs,
                teleport: tele.epochs,
                baseline_aborted: base.aborted,
                teleport_aborted: tele.aborted,
                teleport_grad_norm: first.map(|r| (r.grad_norm_before, r.grad_norm_after)),
                teleport_drift: first.map(|r| r.drift),
            })
        })
        .collect()
}

/// One verdict per optimizer: teleport wins on at least `require` of the seeds.
pub fn sweep_verdicts(entries: &[SweepEntry], sweep_cfg: &SweepConfig) -> Verdicts {
    let needed = (sweep_cfg.require * sweep_cfg.seeds as f64).ceil() as usize;
    let mut names: Vec<&str> = entries.iter().map(|e| e.optimizer.as_str()).collect();
    names.dedup();
    names
        .into_iter()
        .map(|name| {
            let mine: Vec<&SweepEntry> = entries.iter().filter(|e| e.optimizer == name).collect();
            let wins = mine.iter().filter(|e| e.teleport_wins()).count();
            let finals: Vec<_> = mine.iter().map(|e| e.final_losses()).collect();
            let detail = json!({ "wins": wins, "seeds": mine.len(), "needed": needed, "final_losses": finals });
            (format!("speedup/{name}"), Verdict::check(wins >= needed, detail))
        })
        .collect()
}

fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let (model, arch) = model_parts(cfg)?;
    let (data, test) = datasets(cfg)?;
    let train_cfg = cfg.train.as_ref().expect("validated config has [train]");
    let sweep_cfg = cfg.sweep.as_ref().expect("validated config has [sweep]");
    let entries = sweep(
        &arch,
        model,
        &data,
        test.as_ref(),
        train_cfg,
        sweep_cfg,
        cfg.seed,
    )?;
    let mut outcome = Outcome {
        verdicts: sweep_verdicts(&entries, sweep_cfg),
        ..Outcome::default()
    };
    for e in &entries {
        for (variant, rows) in [("baseline", &e.baseline), ("teleport", &e.teleport)] {
            let name = PathBuf::from("sweep")
                .join(format!("{}_seed{}_{variant}.csv", e.optimizer, e.seed));
            write_csv(&out.join(&name), rows)?;
            outcome.files.push(name);
        }
    }
    outcome.results = json!(entries
        .iter()
        .map(|e| json!({
            "optimizer": e.optimizer,
            "seed": e.seed,
            "final_losses": e.final_losses(),
            "teleport_wins": e.teleport_wins(),
            "baseline_aborted": e.baseline_aborted,
            "teleport_aborted": e.teleport_aborted,
            "teleport_grad_norm": e.teleport_grad_norm,
            "teleport_drift": e.teleport_drift,
        }))
        .collect::<Vec<_>>());
    Ok(outcome)
}

fn run_correlate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let (_, arch) = model_parts(cfg)?;
    let (data, validation) = datasets(cfg)?;
    let Some(validation) = validation else {
        return Err(crate::error::ExpError::config(
            "correlate",
            "the correlation study needs a held-out split",
        ));
    };
    let pop = cfg
        .population
        .as_ref()
        .expect("validated config has [population]");
    let study = correlation_study(
        &arch,
        &data,
        &validation,
        pop,
        &mut stream(cfg.seed, streams::METRICS),
    )
    .context("correlation study")?;
    write_csv(&out.join("records.csv"), &study.records)?;
    let mut verdicts = Verdicts::new();
    for s in &study.skipped {
        verdicts.insert(format!("model-{}", s.model_id), Verdict::skipped(&s.reason));
    }
    for c in &study.correlations {
        let key = format!("pearson/{}~{}", c.x, c.y);
        let v = match (&c.r, &c.error) {
            (Some(r), _) => Verdict {
                status: crate::output::Status::Pass,
                detail: json!({ "r": r, "n": c.n }),
            },
            (None, e) => Verdict::skipped(e.clone().unwrap_or_else(|| "no value".into())),
        };
        verdicts.insert(key, v);
    }
    Ok(Outcome {
        results: json!({
            "models": study.records.len(),
            "skipped": study.skipped,
            "notes": study.notes,
            "correlations": study.correlations,
        }),
        verdicts,
        files: vec!["records.csv".into()],
    })
}

/// The theory checks as one verdict per proposition, with their measured values.
pub fn theory_suite(cfg: &TheoryConfig, seed: u64) -> Result<Verdicts> {
    let mut rng = stream(seed, streams::THEORY);
    let mut v = Verdicts::new();

    let mut violations = Vec::new();
    for case in 0..cfg.lemma_samples {
        let n = rng.random_range(1..=8);
        let a = random_spd(n, 1e3, &mut rng);
        let w = random_vector(n, &mut rng);
        for (alpha, beta) in [(0, 1), (0, 2), (1, 1), (1, 2)] {
            let r = lemma_b1(&a, &w, alpha, beta).context("lemma B.1")?;
            if !r.holds {
                violations.push(json!({ "case": case, "alpha": alpha, "beta": beta, "lhs": r.lhs, "rhs": r.rhs }));
            }
        }
    }
    v.insert(
        "lemma-b1".into(),
        Verdict::check(
            violations.is_empty(),
            json!({ "instances": cfg.lemma_samples, "violations": violations }),
        ),
    );

    let printed = lemma_b1(&Mat::diag(&[1.0, -2.0]), &[1.0, 3.0], 0, 1)
        .context("lemma B.1 counterexample")?;
    v.insert(
        "lemma-b1-indefinite-counterexample".into(),
        Verdict::check(
            printed.lhs == 100.0 && (printed.rhs - 59.5).abs() < 1e-12 && !printed.holds,
            printed,
        ),
    );

    let mut b2 = Vec::new();
    let (mut checked, mut skipped, mut worst) = (0, 0, f64::INFINITY);
    for _ in 0..cfg.b2_samples {
        let n = rng.random_range(2..=10);
        let q = random_quadratic(n, &mut rng)?;
        let w = random_vector(n, &mut rng);
        let r = check_prop_b2(&q, &[w]).context("proposition B.2")?;
        checked += r.checked;
        skipped += r.skipped;
        worst = worst.min(r.worst);
        b2.extend(r.counterexamples);
    }
    v.insert(
        "prop-b2".into(),
        Verdict::check(b2.is_empty(), json!({ "checked": checked, "skipped": skipped, "min_value": worst, "counterexamples": b2 })),
    );

    let mut b3 = Vec::new();
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    for _ in 0..cfg.b3_samples {
        let q = random_quadratic(cfg.b3_dim, &mut rng)?;
        let w = random_vector(cfg.b3_dim, &mut rng);
        let r = check_prop_b3(&q, &[w], &mut rng).context("proposition B.3")?;
        checked += r.checked;
        skipped += r.skipped;
        worst = worst.max(r.worst);
        b3.extend(r.counterexamples);
    }
    v.insert(
        "prop-b3".into(),
        Verdict::check(
            b3.is_empty(),
            json!({ "dim": cfg.b3_dim, "checked": checked, "skipped": skipped, "worst_gap": worst, "tolerance": 1e-6, "counterexamples": b3.len() }),
        ),
    );

    let phi: f64 = 0.4;
    let ellipse = one_teleport_flow_test(
        &QuadraticSpec::ellipse(2.0),
        &[2f64.sqrt() * phi.cos(), phi.sin() / 2f64.sqrt()],
        cfg.flow_steps,
        cfg.dt,
    )
    .context("ellipse flow")?;
    v.insert(
        "one-teleport-ellipse".into(),
        Verdict::check(ellipse.passed, &ellipse),
    );
    let booth = one_teleport_flow_test(
        &QuadraticSpec::booth(),
        &[-2.0, 0.5],
        cfg.flow_steps,
        cfg.dt,
    )
    .context("Booth flow")?;
    v.insert(
        "one-teleport-booth".into(),
        Verdict::check(booth.passed, &booth),
    );

    let mut failures = Vec::new();
    let (mut worst_residual, mut skipped) = (0.0f64, 0);
    for _ in 0..cfg.newton_samples {
        let n = rng.random_range(2..=5);
        let q = random_quadratic(n, &mut rng)?;
        let r = newton_equivalence_test(&q, &random_vector(n, &mut rng), 0.1)
            .context("Newton equivalence")?;
        let in_range = r.lambda0 >= 0.0 && r.lambda0 <= r.lambda_max * (1.0 + 1e-12);
        if r.skipped {
            skipped += 1;
        } else {
            worst_residual = worst_residual.max(r.eigen_residual);
        }
        if !(r.passed && in_range) {
            failures.push(r);
        }
    }
    v.insert(
        "newton-equivalence".into(),
        Verdict::check(
            failures.is_empty(),
            json!({ "samples": cfg.newton_samples, "skipped": skipped, "worst_eigen_residual": worst_residual, "failures": failures }),
        ),
    );
    Ok(v)
}

fn random_quadratic<R: Rng>(n: usize, rng: &mut R) -> Result<QuadraticSpec> {
    let a = random_spd(n, 100.0, rng);
    let b = random_vector(n, rng);
    QuadraticSpec::new(a, b, 0.0).context("random quadratic")
}

fn run_theory(cfg: &ExperimentConfig) -> Result<Outcome> {
    let verdicts = theory_suite(&cfg.theory, cfg.seed)?;
    let results = json!(verdicts
        .iter()
        .map(|(k, v)| (k.clone(), to_value(v.status)))
        .collect::<serde_json::Map<_, _>>());
    Ok(Outcome {
        results,
        verdicts,
        files: Vec::new(),
    })
}

fn run_shift(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let shift = cfg.shift.as_ref().expect("validated config has [shift]");
    let mut rng = stream(cfg.seed, streams::THEORY);
    let mut rows = Vec::new();
    for &k in &shift.ks {
        let r = minima_shift_mc(shift.curve(k), shift.r, shift.samples, &mut rng)
            .context(format!("minima shift at k = {k}"))?;
        rows.push(ShiftRow {
            k,
            curvature: r.curvature,
            r: r.r,
            samples: r.samples,
            expected_distance: r.expected_distance,
            stderr: r.stderr,
            scaled: r.scaled,
        });
    }
    write_csv(&out.join("shift.csv"), &rows)?;
    Ok(Outcome {
        results: to_value(&rows),
        verdicts: Verdicts::new(),
        files: vec!["shift.csv".into()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ShiftRow {
    pub k: f64,
    pub curvature: f64,
    pub r: f64,
    pub samples: usize,
    pub expected_distance: f64,
    pub stderr: f64,
    pub scaled: Option<f64>,
}
