//! The subcommand implementations. Every command runs from one config file,
//! writes its artifacts under the output directory, and finishes with a
//! versioned JSON report whose only nondeterministic field is the wall
//! clock.

use std::collections::BTreeMap;
use std::time::Instant;

use featguard::attack::attack_batch;
use featguard::classifier::softmax;
use featguard::data::{gen_ood, write_csv, write_unlabeled_csv, LabeledDataset};
use featguard::purify::{purify_and_reclassify, PurifyConfig};
use featguard::scoring::{ece, fit_temperature, temperature_nll};
use featguard::seed::stream;
use featguard::{Error, Result};
use ndarray::{Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::pipeline::{evaluate_method, write_report, Experiment, MethodReport, Scorer, SCHEMA_VERSION};

fn wall_clock(started: Instant) -> f64 {
    started.elapsed().as_secs_f64()
}

#[derive(Serialize)]
struct GenDataReport {
    schema_version: u32,
    seed: u64,
    class_count: usize,
    dim: usize,
    bounds: (f64, f64),
    train_rows: usize,
    val_rows: usize,
    test_rows: usize,
    files: Vec<String>,
    wall_clock_seconds: f64,
}

pub fn gen_data(exp: &mut Experiment, started: Instant) -> Result<()> {
    let files = ["dataset_train.csv", "dataset_val.csv", "dataset_test.csv"];
    for (name, ds) in files.iter().zip([&exp.train_ds, &exp.val_ds, &exp.test_ds]) {
        write_csv(ds, exp.out.join(name))?;
    }
    let report = GenDataReport {
        schema_version: SCHEMA_VERSION,
        seed: exp.seed,
        class_count: exp.train_ds.class_count,
        dim: exp.train_ds.dim(),
        bounds: exp.train_ds.bounds,
        train_rows: exp.train_ds.len(),
        val_rows: exp.val_ds.len(),
        test_rows: exp.test_ds.len(),
        files: files.iter().map(|s| s.to_string()).collect(),
        wall_clock_seconds: wall_clock(started),
    };
    write_report(&exp.out.join("gen_data_report.json"), &report)
}

#[derive(Serialize)]
struct TrainReportFile {
    schema_version: u32,
    seed: u64,
    epochs: usize,
    final_train_loss: f64,
    train_accuracy: f64,
    val_accuracy: f64,
    test_accuracy: f64,
    loss_curve: Vec<f64>,
    model_file: String,
    wall_clock_seconds: f64,
}

pub fn train(exp: &mut Experiment, started: Instant) -> Result<()> {
    let trace = exp.train_fresh()?;
    let model = exp.model()?.clone();
    let report = TrainReportFile {
        schema_version: SCHEMA_VERSION,
        seed: exp.seed,
        epochs: exp.cfg.train.epochs,
        final_train_loss: trace.train_loss.last().copied().unwrap_or(f64::NAN),
        train_accuracy: model.accuracy(&exp.train_ds)?,
        val_accuracy: model.accuracy(&exp.val_ds)?,
        test_accuracy: model.accuracy(&exp.test_ds)?,
        loss_curve: trace.train_loss,
        model_file: "model.json".to_string(),
        wall_clock_seconds: wall_clock(started),
    };
    write_report(&exp.out.join("train_report.json"), &report)
}

#[derive(Serialize)]
struct GmmReportFile {
    schema_version: u32,
    seed: u64,
    components: usize,
    iterations: usize,
    converged: bool,
    floor_activated: bool,
    reseeded: bool,
    initial_mean_log_likelihood: f64,
    final_mean_log_likelihood: f64,
    gmm_file: String,
    wall_clock_seconds: f64,
}

pub fn fit_gmm(exp: &mut Experiment, started: Instant) -> Result<()> {
    let em = exp.gmm_fresh()?;
    let report = GmmReportFile {
        schema_version: SCHEMA_VERSION,
        seed: exp.seed,
        components: exp.cfg.gmm.components,
        iterations: em.iterations,
        converged: em.converged,
        floor_activated: em.floor_activated,
        reseeded: em.reseeded,
        initial_mean_log_likelihood: *em.log_likelihoods.first().unwrap(),
        final_mean_log_likelihood: *em.log_likelihoods.last().unwrap(),
        gmm_file: "gmm.json".to_string(),
        wall_clock_seconds: wall_clock(started),
    };
    write_report(&exp.out.join("gmm_report.json"), &report)
}

#[derive(Serialize)]
struct DetectionReportFile {
    schema_version: u32,
    experiment: String,
    seed: u64,
    model_file: String,
    gmm_file: String,
    success_count: usize,
    failure_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attack: Option<AttackReportBody>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ood: Option<OodReportBody>,
    methods: Vec<MethodReport>,
    wall_clock_seconds: f64,
}

/// Per-kind evaluation shared by the three detection experiments: compare
/// the success group against the failure group on the test side, select the
/// threshold on the validation side.
struct DetectionInputs<'a> {
    experiment: &'a str,
    success_inputs: ArrayView2<'a, f64>,
    failure_inputs: ArrayView2<'a, f64>,
    val_inputs: ArrayView2<'a, f64>,
    val_failure_flags: Vec<bool>,
}

fn run_detection(
    exp: &mut Experiment,
    inputs: DetectionInputs<'_>,
) -> Result<Vec<MethodReport>> {
    let scorer = Scorer::build(exp)?;
    let kinds = exp.cfg.score_kinds()?;
    let mut methods = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let success = scorer.scores(kind, inputs.success_inputs)?;
        let failure = scorer.scores(kind, inputs.failure_inputs)?;
        let val = scorer.scores(kind, inputs.val_inputs)?;
        methods.push(evaluate_method(
            &exp.out,
            inputs.experiment,
            kind,
            &success,
            &failure,
            &val,
            &inputs.val_failure_flags,
        )?);
    }
    Ok(methods)
}

fn partition_rows(ds: &LabeledDataset, keep: &[bool]) -> (Array2<f64>, Array2<f64>) {
    let kept: Vec<usize> = (0..ds.len()).filter(|&i| keep[i]).collect();
    let dropped: Vec<usize> = (0..ds.len()).filter(|&i| !keep[i]).collect();
    (
        ds.inputs.select(Axis(0), &kept),
        ds.inputs.select(Axis(0), &dropped),
    )
}

pub fn detect_mistakes(exp: &mut Experiment, started: Instant) -> Result<()> {
    let model = exp.model()?.clone();
    let correct_mask = |ds: &LabeledDataset| -> Result<Vec<bool>> {
        ds.inputs
            .rows()
            .into_iter()
            .zip(&ds.labels)
            .map(|(row, &y)| Ok(model.predict(row)? == y))
            .collect()
    };
    let test_mask = correct_mask(&exp.test_ds)?;
    let val_mask = correct_mask(&exp.val_ds)?;
    let (correct_inputs, wrong_inputs) = partition_rows(&exp.test_ds, &test_mask);
    let test_accuracy = test_mask.iter().filter(|&&c| c).count() as f64 / test_mask.len() as f64;
    let val_flags: Vec<bool> = val_mask.iter().map(|&c| !c).collect();
    let val_inputs = exp.val_ds.inputs.clone();

    let methods = run_detection(
        exp,
        DetectionInputs {
            experiment: "mistakes",
            success_inputs: correct_inputs.view(),
            failure_inputs: wrong_inputs.view(),
            val_inputs: val_inputs.view(),
            val_failure_flags: val_flags,
        },
    )?;
    let report = DetectionReportFile {
        schema_version: SCHEMA_VERSION,
        experiment: "mistakes".to_string(),
        seed: exp.seed,
        model_file: "model.json".to_string(),
        gmm_file: "gmm.json".to_string(),
        success_count: correct_inputs.nrows(),
        failure_count: wrong_inputs.nrows(),
        test_accuracy: Some(test_accuracy),
        attack: None,
        ood: None,
        methods,
        wall_clock_seconds: wall_clock(started),
    };
    write_report(&exp.out.join("report_mistakes.json"), &report)
}

#[derive(Serialize, Clone)]
struct AttackReportBody {
    method: String,
    epsilon: f64,
    steps: usize,
    step_size: f64,
    clean_accuracy: f64,
    adversarial_accuracy: f64,
    success_rate: f64,
}

#[derive(Serialize)]
struct AttackReportFile {
    schema_version: u32,
    seed: u64,
    #[serde(flatten)]
    body: AttackReportBody,
    adversarial_csv: String,
    wall_clock_seconds: f64,
}

fn attack_stats_body(
    exp: &mut Experiment,
    ds: &LabeledDataset,
) -> Result<(featguard::data::UnlabeledDataset, AttackReportBody)> {
    let (method, cfg) = exp.cfg.attack_config(ds.bounds)?;
    let model = exp.model()?.clone();
    let (adv, stats) = attack_batch(&model, ds, method, &cfg, exp.threads)?;
    Ok((
        adv,
        AttackReportBody {
            method: method.name().to_string(),
            epsilon: cfg.epsilon,
            steps: cfg.steps,
            step_size: cfg.step_size,
            clean_accuracy: stats.clean_accuracy,
            adversarial_accuracy: stats.adversarial_accuracy,
            success_rate: stats.success_rate,
        },
    ))
}

pub fn attack(exp: &mut Experiment, started: Instant) -> Result<()> {
    let test_ds = exp.test_ds.clone();
    let (adv, body) = attack_stats_body(exp, &test_ds)?;
    write_unlabeled_csv(&adv, exp.out.join("adversarial_test.csv"))?;
    let report = AttackReportFile {
        schema_version: SCHEMA_VERSION,
        seed: exp.seed,
        body,
        adversarial_csv: "adversarial_test.csv".to_string(),
        wall_clock_seconds: wall_clock(started),
    };
    write_report(&exp.out.join("attack_report.json"), &report)
}

pub fn detect_adv(exp: &mut Experiment, started: Instant) -> Result<()> {
    let test_ds = exp.test_ds.clone();
    let val_ds = exp.val_ds.clone();
    let (adv_test, body) = attack_stats_body(exp, &test_ds)?;
    let (adv_val, _) = attack_stats_body(exp, &val_ds)?;
    write_unlabeled_csv(&adv_test, exp.out.join("adversarial_test.csv"))?;

    // Validation side: clean rows first, adversarial rows after.
    let val_stack = ndarray::concatenate(
        Axis(0),
        &[val_ds.inputs.view(), adv_val.inputs.view()],
    )
    .map_err(|e| Error::Numeric(format!("stacking validation rows: {e}")))?;
    let mut val_flags = vec![false; val_ds.len()];
    val_flags.extend(std::iter::repeat_n(true, adv_val.inputs.nrows()));

    let methods = run_detection(
        exp,
        DetectionInputs {
            experiment: "adversarial",
            success_inputs: test_ds.inputs.view(),
            failure_inputs: adv_test.inputs.view(),
            val_inputs: val_stack.view(),
            val_failure_flags: val_flags,
        },
    )?;
    let report = DetectionReportFile {
        schema_version: SCHEMA_VERSION,
        experiment: "adversarial".to_string(),
        seed: exp.seed,
        model_file: "model.json".to_string(),
        gmm_file: "gmm.json".to_string(),
        success_count: test_ds.len(),
        failure_count: adv_test.inputs.nrows(),
        test_accuracy: None,
        attack: Some(body),
        ood: None,
        methods,
        wall_clock_seconds: wall_clock(started),
    };
    write_report(&exp.out.join("report_adversarial.json"), &report)
}

#[derive(Serialize, Clone)]
struct OodReportBody {
    kind: String,
    count: usize,
    magnitude: f64,
}

pub fn detect_ood(exp: &mut Experiment, started: Instant) -> Result<()> {
    let dim = exp.test_ds.dim();
    let ood_test = gen_ood(&exp.cfg.ood_config(exp.seed, dim, stream::OOD_TEST)?)?;
    let ood_val = gen_ood(&exp.cfg.ood_config(exp.seed, dim, stream::OOD_VAL)?)?;
    write_unlabeled_csv(&ood_test, exp.out.join("ood_samples.csv"))?;

    let val_stack = ndarray::concatenate(
        Axis(0),
        &[exp.val_ds.inputs.view(), ood_val.inputs.view()],
    )
    .map_err(|e| Error::Numeric(format!("stacking validation rows: {e}")))?;
    let mut val_flags = vec![false; exp.val_ds.len()];
    val_flags.extend(std::iter::repeat_n(true, ood_val.inputs.nrows()));

    let section = exp.cfg.ood.as_ref().expect("checked by ood_config");
    let body = OodReportBody {
        kind: section.kind.clone(),
        count: section.count,
        magnitude: section.magnitude,
    };
    let test_inputs = exp.test_ds.inputs.clone();
    let val_inputs = val_stack;
    let methods = run_detection(
        exp,
        DetectionInputs {
            experiment: "ood",
            success_inputs: test_inputs.view(),
            failure_inputs: ood_test.inputs.view(),
            val_inputs: val_inputs.view(),
            val_failure_flags: val_flags,
        },
    )?;
    let report = DetectionReportFile {
        schema_version: SCHEMA_VERSION,
        experiment: "ood".to_string(),
        seed: exp.seed,
        model_file: "model.json".to_string(),
        gmm_file: "gmm.json".to_string(),
        success_count: test_inputs.nrows(),
        failure_count: ood_test.inputs.nrows(),
        test_accuracy: None,
        attack: None,
        ood: Some(body),
        methods,
        wall_clock_seconds: wall_clock(started),
    };
    write_report(&exp.out.join("report_ood.json"), &report)
}

#[derive(Serialize)]
struct CalibrationReportFile {
    schema_version: u32,
    seed: u64,
    temperature: f64,
    bins: usize,
    val_nll_uncalibrated: f64,
    val_nll_calibrated: f64,
    test_nll_uncalibrated: f64,
    test_nll_calibrated: f64,
    test_ece_uncalibrated: f64,
    test_ece_calibrated: f64,
    wall_clock_seconds: f64,
}

fn probs_at_temperature(logits: &Array2<f64>, t: f64) -> Array2<f64> {
    let mut probs = Array2::zeros(logits.raw_dim());
    for (mut out, row) in probs.rows_mut().into_iter().zip(logits.rows()) {
        out.assign(&softmax(row.mapv(|v| v / t).view()));
    }
    probs
}

pub fn calibrate(exp: &mut Experiment, started: Instant) -> Result<()> {
    let model = exp.model()?.clone();
    let val_logits = model.logits_batch(exp.val_ds.inputs.view())?;
    let test_logits = model.logits_batch(exp.test_ds.inputs.view())?;
    let t = fit_temperature(val_logits.view(), &exp.val_ds.labels)?;
    let bins = exp.cfg.calibration_bins;
    let report = CalibrationReportFile {
        schema_version: SCHEMA_VERSION,
        seed: exp.seed,
        temperature: t,
        bins,
        val_nll_uncalibrated: temperature_nll(val_logits.view(), &exp.val_ds.labels, 1.0)?,
        val_nll_calibrated: temperature_nll(val_logits.view(), &exp.val_ds.labels, t)?,
        test_nll_uncalibrated: temperature_nll(test_logits.view(), &exp.test_ds.labels, 1.0)?,
        test_nll_calibrated: temperature_nll(test_logits.view(), &exp.test_ds.labels, t)?,
        test_ece_uncalibrated: ece(
            probs_at_temperature(&test_logits, 1.0).view(),
            &exp.test_ds.labels,
            bins,
        )?,
        test_ece_calibrated: ece(
            probs_at_temperature(&test_logits, t).view(),
            &exp.test_ds.labels,
            bins,
        )?,
        wall_clock_seconds: wall_clock(started),
    };
    write_report(&exp.out.join("calibration_report.json"), &report)
}

#[derive(Serialize)]
struct PurifyCell {
    val_accuracy_before: f64,
    val_accuracy_after: f64,
    test_accuracy_before: f64,
    test_accuracy_after: f64,
    val_labels_changed: usize,
    test_labels_changed: usize,
}

#[derive(Serialize)]
struct PurifyReportFile {
    schema_version: u32,
    seed: u64,
    iterations: usize,
    cells: BTreeMap<String, PurifyCell>,
    best_cell: String,
    best_val_accuracy_after: f64,
    wall_clock_seconds: f64,
}

pub fn purify(exp: &mut Experiment, started: Instant) -> Result<()> {
    let section = exp.cfg.purify_section()?;
    let steps = section.step_sizes.clone();
    let nus = section.proximity_weights.clone();
    let iterations = section.iterations;
    if steps.is_empty() || nus.is_empty() {
        return Err(Error::invalid("purify grid must not be empty"));
    }
    exp.gmm()?;
    let model = exp.model()?.clone();
    let gmm = exp.gmm()?.clone();

    let mut cells = BTreeMap::new();
    let mut best: Option<(String, f64)> = None;
    for &step in &steps {
        for &nu in &nus {
            let cfg = PurifyConfig::new(step, nu)?.with_iterations(iterations);
            let val = purify_and_reclassify(
                &model,
                &gmm,
                exp.val_ds.inputs.view(),
                Some(&exp.val_ds.labels),
                &cfg,
            )?;
            let test = purify_and_reclassify(
                &model,
                &gmm,
                exp.test_ds.inputs.view(),
                Some(&exp.test_ds.labels),
                &cfg,
            )?;
            let key = format!("step_size={step},nu={nu}");
            let val_after = val.accuracy_after.unwrap();
            cells.insert(
                key.clone(),
                PurifyCell {
                    val_accuracy_before: val.accuracy_before.unwrap(),
                    val_accuracy_after: val_after,
                    test_accuracy_before: test.accuracy_before.unwrap(),
                    test_accuracy_after: test.accuracy_after.unwrap(),
                    val_labels_changed: val.changed(),
                    test_labels_changed: test.changed(),
                },
            );
            // Ties keep the first key in grid order.
            if best.as_ref().is_none_or(|(_, acc)| val_after > *acc) {
                best = Some((key, val_after));
            }
        }
    }
    let (best_cell, best_val_accuracy_after) = best.unwrap();
    let report = PurifyReportFile {
        schema_version: SCHEMA_VERSION,
        seed: exp.seed,
        iterations,
        cells,
        best_cell,
        best_val_accuracy_after,
        wall_clock_seconds: wall_clock(started),
    };
    write_report(&exp.out.join("purify_report.json"), &report)
}

#[derive(Serialize)]
struct MergedReport {
    schema_version: u32,
    seed: u64,
    sections: BTreeMap<String, serde_json::Value>,
    wall_clock_seconds: f64,
}

/// Collect every per-subcommand report present in the output directory.
pub fn report(exp: &mut Experiment, started: Instant) -> Result<()> {
    let known = [
        "gen_data_report.json",
        "train_report.json",
        "gmm_report.json",
        "report_mistakes.json",
        "attack_report.json",
        "report_adversarial.json",
        "report_ood.json",
        "calibration_report.json",
        "purify_report.json",
    ];
    let mut sections = BTreeMap::new();
    for name in known {
        let path = exp.out.join(name);
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            row: e.line(),
            message: format!("{name}: {e}"),
        })?;
        let key = name.trim_end_matches(".json").to_string();
        sections.insert(key, value);
    }
    if sections.is_empty() {
        return Err(Error::invalid(
            "no reports found in the output directory; run an experiment subcommand first",
        ));
    }
    let merged = MergedReport {
        schema_version: SCHEMA_VERSION,
        seed: exp.seed,
        sections,
        wall_clock_seconds: wall_clock(started),
    };
    write_report(&exp.out.join("report.json"), &merged)
}
