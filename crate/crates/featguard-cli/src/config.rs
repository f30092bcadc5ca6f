//! Experiment configuration: one flat JSON document drives every
//! subcommand. Unknown fields are rejected so typos fail loudly instead of
//! silently using defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use featguard::attack::{AttackConfig, AttackMethod};
use featguard::classifier::TrainConfig;
use featguard::data::{BlobsConfig, OodConfig, OodKind, SplitSpec};
use featguard::gmm::{EmConfig, EmInit};
use featguard::scoring::ScoreKind;
use featguard::seed::{derive_seed, stream};
use featguard::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub gmm: GmmSection,
    /// Score kinds to evaluate; all of them when omitted.
    #[serde(default)]
    pub scores: Option<Vec<String>>,
    #[serde(default)]
    pub attack: Option<AttackSection>,
    #[serde(default)]
    pub ood: Option<OodSection>,
    #[serde(default)]
    pub purify: Option<PurifySection>,
    #[serde(default = "default_bins")]
    pub calibration_bins: usize,
}

fn default_bins() -> usize {
    10
}

/// Either a CSV path or synthetic blob-generator parameters, never both.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub class_count: Option<usize>,
    #[serde(default)]
    pub per_class: Option<usize>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub spread: Option<f64>,
    #[serde(default)]
    pub separation: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2_weight: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSection {
    pub components: usize,
    #[serde(default = "default_em_iters")]
    pub max_iterations: usize,
    #[serde(default = "default_em_tol")]
    pub tolerance: f64,
    #[serde(default = "default_variance_floor")]
    pub variance_floor: f64,
    /// "kmeanspp" (default) or "random_points".
    #[serde(default)]
    pub init: Option<String>,
}

fn default_em_iters() -> usize {
    200
}

fn default_em_tol() -> f64 {
    1e-6
}

fn default_variance_floor() -> f64 {
    1e-6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    /// "fgsm" or "bim".
    pub method: String,
    pub epsilon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub step_size: Option<f64>,
}

fn default_steps() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSection {
    /// "gaussian_noise", "uniform_noise", or "shifted_blobs".
    pub kind: String,
    pub count: usize,
    pub magnitude: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurifySection {
    pub step_sizes: Vec<f64>,
    pub proximity_weights: Vec<f64>,
    #[serde(default = "default_purify_iters")]
    pub iterations: usize,
}

fn default_purify_iters() -> usize {
    100
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: FileConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            row: e.line(),
            message: format!("config: {e}"),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        let generator_fields =
            [d.class_count.is_some(), d.per_class.is_some(), d.dim.is_some(), d.spread.is_some()];
        if d.csv.is_some() {
            if generator_fields.iter().any(|&s| s) || d.separation.is_some() {
                return Err(Error::invalid(
                    "dataset: csv and generator parameters are mutually exclusive",
                ));
            }
        } else if generator_fields.iter().any(|&s| !s) {
            return Err(Error::invalid(
                "dataset: need class_count, per_class, dim, and spread (or a csv path)",
            ));
        }
        if self.calibration_bins == 0 {
            return Err(Error::invalid("calibration_bins must be >= 1"));
        }
        // Parse-only checks so bad names fail before any computation.
        self.score_kinds()?;
        if let Some(a) = &self.attack {
            AttackMethod::from_str(&a.method)?;
        }
        if let Some(o) = &self.ood {
            OodKind::from_str(&o.kind)?;
        }
        if let Some(g) = &self.gmm.init {
            EmInit::from_str(g)?;
        }
        Ok(())
    }

    /// Blob generator parameters, seeded from the data stream. `None` when
    /// the dataset comes from a CSV file.
    pub fn blobs_config(&self, master_seed: u64) -> Option<BlobsConfig> {
        let d = &self.dataset;
        match (d.class_count, d.per_class, d.dim, d.spread) {
            (Some(c), Some(p), Some(dim), Some(s)) => {
                let mut cfg = BlobsConfig::new(c, p, dim, s, derive_seed(master_seed, stream::DATA_GEN));
                if let Some(sep) = d.separation {
                    cfg = cfg.with_separation(sep);
                }
                Some(cfg)
            }
            _ => None,
        }
    }

    pub fn split_spec(&self, master_seed: u64) -> Result<SplitSpec> {
        SplitSpec::new(
            self.split.train,
            self.split.val,
            self.split.test,
            derive_seed(master_seed, stream::SPLIT),
        )
    }

    pub fn train_config(&self, master_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            l2_weight: self.train.l2_weight,
            seed: derive_seed(master_seed, stream::TRAIN_SHUFFLE),
        }
    }

    pub fn em_config(&self, master_seed: u64, threads: usize) -> Result<EmConfig> {
        let init = match &self.gmm.init {
            Some(name) => EmInit::from_str(name)?,
            None => EmInit::KmeansPlusPlus,
        };
        Ok(EmConfig {
            max_iters: self.gmm.max_iterations,
            tol: self.gmm.tolerance,
            variance_floor: self.gmm.variance_floor,
            seed: derive_seed(master_seed, stream::GMM_EM),
            init,
            partitions: threads.max(1),
        })
    }

    pub fn score_kinds(&self) -> Result<Vec<ScoreKind>> {
        match &self.scores {
            None => Ok(ScoreKind::ALL.to_vec()),
            Some(names) => {
                if names.is_empty() {
                    return Err(Error::invalid("scores list is empty"));
                }
                names.iter().map(|n| ScoreKind::from_str(n)).collect()
            }
        }
    }

    pub fn attack_section(&self) -> Result<&AttackSection> {
        self.attack
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no \"attack\" section"))
    }

    pub fn attack_config(&self, bounds: (f64, f64)) -> Result<(AttackMethod, AttackConfig)> {
        let a = self.attack_section()?;
        let method = AttackMethod::from_str(&a.method)?;
        let mut cfg = AttackConfig::new(a.epsilon, a.steps, bounds)?;
        if let Some(step) = a.step_size {
            cfg = cfg.with_step_size(step)?;
        }
        Ok((method, cfg))
    }

    /// OOD generator seeded from the given stream; shifted blobs reuse the
    /// dataset's mean layout (same data seed) with their own noise stream.
    pub fn ood_config(&self, master_seed: u64, dim: usize, stream: u64) -> Result<OodConfig> {
        let o = self
            .ood
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no \"ood\" section"))?;
        let kind = OodKind::from_str(&o.kind)?;
        let blobs = match kind {
            OodKind::ShiftedBlobs => {
                let mut b = self.blobs_config(master_seed).ok_or_else(|| {
                    Error::invalid("shifted_blobs OOD requires a generated dataset")
                })?;
                b.per_class = 1; // layout only, sample count comes from `count`
                Some(b)
            }
            _ => None,
        };
        Ok(OodConfig {
            kind,
            count: o.count,
            dim,
            magnitude: o.magnitude,
            seed: derive_seed(master_seed, stream),
            blobs,
        })
    }

    pub fn purify_section(&self) -> Result<&PurifySection> {
        self.purify
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no \"purify\" section"))
    }
}
