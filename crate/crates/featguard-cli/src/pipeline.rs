//! Shared experiment plumbing: build or load the dataset splits, model, and
//! mixture, compute suspicion scores per kind, and assemble the per-method
//! detection metrics that the report subcommands share.

use std::path::{Path, PathBuf};

use featguard::classifier::{init_mlp, train, MlpClassifier, TrainReport};
use featguard::data::{gen_blobs, load_csv, split, LabeledDataset};
use featguard::gmm::{fit_em, EmReport, GmmModel};
use featguard::scoring::{
    fit_mahalanobis, fit_temperature, score_gmm, score_mahalanobis_batch, score_max_logit,
    score_max_softmax, MahalanobisModel, ScoreKind,
};
use featguard::seed::{derive_seed, stream};
use featguard::stats::{mann_whitney, pr_auc, roc_auc, select_threshold};
use featguard::{Error, Result};
use ndarray::ArrayView2;
use serde::Serialize;

use crate::config::FileConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a detection subcommand needs, built lazily from one config.
pub struct Experiment {
    pub cfg: FileConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub train_ds: LabeledDataset,
    pub val_ds: LabeledDataset,
    pub test_ds: LabeledDataset,
    model: Option<MlpClassifier>,
    gmm: Option<GmmModel>,
}

impl Experiment {
    /// Regenerate (or reload) the dataset and split it. The dataset is
    /// always rebuilt in memory rather than read back from exported CSVs,
    /// so declared generator bounds survive.
    pub fn new(cfg: FileConfig, seed: u64, out: PathBuf, threads: usize) -> Result<Self> {
        std::fs::create_dir_all(&out)?;
        let full = match (&cfg.dataset.csv, cfg.blobs_config(seed)) {
            (Some(path), _) => load_csv(path)?,
            (None, Some(blobs)) => gen_blobs(&blobs)?,
            (None, None) => return Err(Error::invalid("config has no dataset source")),
        };
        let spec = cfg.split_spec(seed)?;
        let (train_ds, val_ds, test_ds) = split(&full, &spec)?;
        Ok(Self {
            cfg,
            seed,
            out,
            threads,
            train_ds,
            val_ds,
            test_ds,
            model: None,
            gmm: None,
        })
    }

    pub fn model_path(&self) -> PathBuf {
        self.out.join("model.json")
    }

    pub fn gmm_path(&self) -> PathBuf {
        self.out.join("gmm.json")
    }

    /// Train unconditionally, overwriting any existing model artifact.
    pub fn train_fresh(&mut self) -> Result<TrainReport> {
        let mut m = init_mlp(
            self.train_ds.dim(),
            &self.cfg.model.hidden,
            self.cfg.model.feature_dim,
            self.train_ds
                .class_count
                .max(self.val_ds.class_count)
                .max(self.test_ds.class_count),
            derive_seed(self.seed, stream::MODEL_INIT),
        )?;
        let report = train(
            &mut m,
            &self.train_ds,
            &self.val_ds,
            &self.cfg.train_config(self.seed),
        )?;
        m.save(self.model_path())?;
        self.model = Some(m);
        Ok(report)
    }

    /// Fit the mixture on training features, overwriting any artifact.
    pub fn gmm_fresh(&mut self) -> Result<EmReport> {
        self.model()?;
        let model = self.model.as_ref().unwrap();
        let feats = model.extract_features(self.train_ds.inputs.view())?;
        let em = self.cfg.em_config(self.seed, self.threads)?;
        let (g, report) = fit_em(feats.view(), self.cfg.gmm.components, &em)?;
        g.save(self.gmm_path())?;
        self.gmm = Some(g);
        Ok(report)
    }

    /// Load the trained model if an artifact exists, otherwise train and
    /// save one. Either path yields bit-identical weights because the JSON
    /// round-trip is exact.
    pub fn model(&mut self) -> Result<&MlpClassifier> {
        if self.model.is_none() {
            let path = self.model_path();
            if path.exists() {
                self.model = Some(MlpClassifier::load(&path)?);
            } else {
                self.train_fresh()?;
            }
        }
        Ok(self.model.as_ref().unwrap())
    }

    /// Load or fit the mixture over training-set features.
    pub fn gmm(&mut self) -> Result<&GmmModel> {
        if self.gmm.is_none() {
            let path = self.gmm_path();
            if path.exists() {
                self.gmm = Some(GmmModel::load(&path)?);
            } else {
                self.gmm_fresh()?;
            }
        }
        Ok(self.gmm.as_ref().unwrap())
    }
}

/// Frozen scoring state: every score kind computable for arbitrary inputs.
/// Temperature comes from the validation set, the distance baseline from
/// training features; both are fitted once.
pub struct Scorer {
    pub model: MlpClassifier,
    pub gmm: GmmModel,
    pub mahalanobis: MahalanobisModel,
    pub temperature: f64,
}

impl Scorer {
    pub fn build(exp: &mut Experiment) -> Result<Self> {
        exp.model()?;
        exp.gmm()?;
        let model = exp.model.clone().unwrap();
        let gmm = exp.gmm.clone().unwrap();
        let train_feats = model.extract_features(exp.train_ds.inputs.view())?;
        let mahalanobis = fit_mahalanobis(
            train_feats.view(),
            &exp.train_ds.labels,
            exp.train_ds.class_count,
        )?;
        let val_logits = model.logits_batch(exp.val_ds.inputs.view())?;
        let temperature = fit_temperature(val_logits.view(), &exp.val_ds.labels)?;
        Ok(Self {
            model,
            gmm,
            mahalanobis,
            temperature,
        })
    }

    /// Suspicion scores for a batch of inputs; low means likely failure.
    pub fn scores(&self, kind: ScoreKind, inputs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let out = match kind {
            ScoreKind::Gmm => {
                let feats = self.model.extract_features(inputs)?;
                score_gmm(&self.gmm, feats.view())?
            }
            ScoreKind::MaxSoftmax => {
                let logits = self.model.logits_batch(inputs)?;
                score_max_softmax(logits.view(), 1.0)?
            }
            ScoreKind::Calibrated => {
                let logits = self.model.logits_batch(inputs)?;
                score_max_softmax(logits.view(), self.temperature)?
            }
            ScoreKind::MaxLogit => {
                let logits = self.model.logits_batch(inputs)?;
                score_max_logit(logits.view())?
            }
            ScoreKind::Mahalanobis => {
                let feats = self.model.extract_features(inputs)?;
                score_mahalanobis_batch(&self.mahalanobis, feats.view())?
            }
        };
        Ok(out.to_vec())
    }
}

#[derive(Debug, Serialize)]
pub struct RankTestReport {
    pub u: f64,
    pub u_success: f64,
    pub u_failure: f64,
    pub z: f64,
    pub p_value: f64,
    pub degenerate: bool,
}

/// Metrics for one score kind on one detection task.
#[derive(Debug, Serialize)]
pub struct MethodReport {
    pub score_kind: String,
    pub scores_csv: String,
    pub roc_csv: String,
    pub pr_in_csv: String,
    pub pr_out_csv: String,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub rank_test: RankTestReport,
    pub threshold: f64,
    pub validation_f1: f64,
}

/// Score two groups (successes rank high, failures low), emit the score and
/// curve CSVs, and compute the ranking metrics plus the validation-selected
/// threshold.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_method(
    out: &Path,
    experiment: &str,
    kind: ScoreKind,
    success_scores: &[f64],
    failure_scores: &[f64],
    val_scores: &[f64],
    val_failure_flags: &[bool],
) -> Result<MethodReport> {
    let base = format!("{experiment}_{kind}");
    let scores_csv = format!("scores_{base}.csv");
    let roc_csv = format!("{base}_roc.csv");
    let pr_in_csv = format!("{base}_pr_in.csv");
    let pr_out_csv = format!("{base}_pr_out.csv");

    let mut text = String::from("score,failure\n");
    for &s in success_scores {
        text.push_str(&format!("{s},0\n"));
    }
    for &s in failure_scores {
        text.push_str(&format!("{s},1\n"));
    }
    std::fs::write(out.join(&scores_csv), text)?;

    let roc = roc_auc(success_scores, failure_scores)?;
    roc.write_csv(out.join(&roc_csv))?;
    let pr_in = pr_auc(success_scores, failure_scores)?;
    pr_in.write_csv(out.join(&pr_in_csv))?;
    // Failure-as-positive needs the score order flipped.
    let neg = |v: &[f64]| v.iter().map(|s| -s).collect::<Vec<_>>();
    let pr_out = pr_auc(&neg(failure_scores), &neg(success_scores))?;
    pr_out.write_csv(out.join(&pr_out_csv))?;

    let rank = mann_whitney(success_scores, failure_scores)?;
    let sel = select_threshold(val_scores, val_failure_flags, kind)?;

    Ok(MethodReport {
        score_kind: kind.name().to_string(),
        scores_csv,
        roc_csv,
        pr_in_csv,
        pr_out_csv,
        auroc: roc.auc,
        aupr_in: pr_in.auc,
        aupr_out: pr_out.auc,
        rank_test: RankTestReport {
            u: rank.u,
            u_success: rank.u_a,
            u_failure: rank.u_b,
            z: rank.z,
            p_value: rank.p_value,
            degenerate: rank.degenerate,
        },
        threshold: sel.threshold.value,
        validation_f1: sel.f1,
    })
}

/// Write a report struct as pretty JSON with a trailing newline.
pub fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Numeric(format!("report serialization: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
