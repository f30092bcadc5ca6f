//! Gradient-sign adversarial input crafting.
//!
//! Both attacks perturb an input along the sign of the loss gradient with
//! respect to the input, stay inside an l-infinity ball of radius epsilon
//! around the original point, and never leave the declared input domain.
//! The single-step variant takes one radius-sized step; the iterated variant
//! takes `steps` smaller steps, re-clamping after each.

use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};

use crate::classifier::MlpClassifier;
use crate::data::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};

/// Perturbation budget and clamping domain for an attack.
///
/// `step_size` is the per-iteration magnitude for the iterated attack and
/// must not exceed `epsilon`. A zero radius is legal and turns both attacks
/// into the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub bounds: (f64, f64),
}

impl AttackConfig {
    /// Config with the default per-step magnitude `epsilon / steps`.
    pub fn new(epsilon: f64, steps: usize, bounds: (f64, f64)) -> Result<Self> {
        let cfg = Self {
            epsilon,
            steps,
            step_size: if steps == 0 { f64::NAN } else { epsilon / steps as f64 },
            bounds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_step_size(mut self, step_size: f64) -> Result<Self> {
        self.step_size = step_size;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::invalid(format!(
                "attack radius {} must be finite and nonnegative",
                self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(Error::invalid("attack needs at least one step"));
        }
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return Err(Error::invalid(format!(
                "step size {} must be finite and nonnegative",
                self.step_size
            )));
        }
        if self.step_size > self.epsilon {
            return Err(Error::invalid(format!(
                "step size {} exceeds attack radius {}",
                self.step_size, self.epsilon
            )));
        }
        if !(self.bounds.0.is_finite() && self.bounds.1.is_finite()) || self.bounds.0 > self.bounds.1 {
            return Err(Error::invalid(format!(
                "bounds ({}, {}) are not a valid interval",
                self.bounds.0, self.bounds.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMethod {
    Fgsm,
    Bim,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Bim => "bim",
        }
    }
}

impl std::fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackMethod::Fgsm),
            "bim" => Ok(AttackMethod::Bim),
            other => Err(Error::invalid(format!("unknown attack method \"{other}\""))),
        }
    }
}

/// Accuracy before and after the attack. `success_rate` is the fraction of
/// originally-correct samples the attack flipped to a wrong label.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttackStats {
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub success_rate: f64,
}

// Zero gradient coordinates stay put; f64::signum would map 0 to 1.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_point(x: ArrayView1<'_, f64>, cfg: &AttackConfig) -> Result<()> {
    cfg.validate()?;
    if x.iter().any(|&v| v < cfg.bounds.0 || v > cfg.bounds.1) {
        return Err(Error::invalid("attack input lies outside the bounds"));
    }
    Ok(())
}

/// Single-step sign attack: `x + epsilon * sign(grad)`, clamped to bounds.
pub fn fgsm(
    model: &MlpClassifier,
    x: ArrayView1<'_, f64>,
    y: usize,
    cfg: &AttackConfig,
) -> Result<Array1<f64>> {
    check_point(x, cfg)?;
    let grad = model.input_gradient(x, y)?;
    let (lo, hi) = cfg.bounds;
    Ok(Array1::from_iter(
        x.iter()
            .zip(grad.iter())
            .map(|(&xi, &gi)| (xi + cfg.epsilon * sign(gi)).clamp(lo, hi)),
    ))
}

/// Iterated sign attack: `steps` updates of magnitude `step_size`, each
/// clamped to bounds and then back into the epsilon-ball around the start.
pub fn bim(
    model: &MlpClassifier,
    x: ArrayView1<'_, f64>,
    y: usize,
    cfg: &AttackConfig,
) -> Result<Array1<f64>> {
    check_point(x, cfg)?;
    let (lo, hi) = cfg.bounds;
    let mut adv = x.to_owned();
    for _ in 0..cfg.steps {
        let grad = model.input_gradient(adv.view(), y)?;
        for ((a, &x0), &g) in adv.iter_mut().zip(x.iter()).zip(grad.iter()) {
            let stepped = (*a + cfg.step_size * sign(g)).clamp(lo, hi);
            *a = stepped.clamp(x0 - cfg.epsilon, x0 + cfg.epsilon);
        }
    }
    Ok(adv)
}

/// Attack every row of `ds` using its true label.
///
/// Rows are processed in parallel across `threads` workers (1 = sequential);
/// the output order and values are identical for any worker count. Returns
/// the adversarial inputs and the accuracy bookkeeping.
pub fn attack_batch(
    model: &MlpClassifier,
    ds: &LabeledDataset,
    method: AttackMethod,
    cfg: &AttackConfig,
    threads: usize,
) -> Result<(UnlabeledDataset, AttackStats)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("cannot attack an empty dataset"));
    }
    let n = ds.len();
    let dim = ds.dim();
    let threads = threads.max(1).min(n);
    let chunk = n.div_ceil(threads);

    // (adversarial row, clean prediction, adversarial prediction) per sample.
    type RowOutcome = (Array1<f64>, usize, usize);
    let attack_row = |i: usize| -> Result<RowOutcome> {
        let x = ds.inputs.row(i);
        let y = ds.labels[i];
        let clean_pred = model.predict(x)?;
        let adv = match method {
            AttackMethod::Fgsm => fgsm(model, x, y, cfg)?,
            AttackMethod::Bim => bim(model, x, y, cfg)?,
        };
        let adv_pred = model.predict(adv.view())?;
        Ok((adv, clean_pred, adv_pred))
    };

    let outcomes: Vec<RowOutcome> = if threads == 1 {
        (0..n).map(attack_row).collect::<Result<_>>()?
    } else {
        let ranges: Vec<_> = (0..threads)
            .map(|t| (t * chunk, ((t + 1) * chunk).min(n)))
            .filter(|(s, e)| s < e)
            .collect();
        let results = std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .iter()
                .map(|&(start, end)| {
                    scope.spawn(move || (start..end).map(attack_row).collect::<Result<Vec<_>>>())
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("attack worker panicked"))
                .collect::<Vec<_>>()
        });
        let mut all = Vec::with_capacity(n);
        for chunk_result in results {
            all.extend(chunk_result?);
        }
        all
    };

    let mut adv_inputs = Array2::zeros((n, dim));
    let mut clean_correct = 0usize;
    let mut adv_correct = 0usize;
    let mut flipped = 0usize;
    for (i, (adv, clean_pred, adv_pred)) in outcomes.into_iter().enumerate() {
        adv_inputs.row_mut(i).assign(&adv);
        let y = ds.labels[i];
        if clean_pred == y {
            clean_correct += 1;
            if adv_pred != y {
                flipped += 1;
            }
        }
        if adv_pred == y {
            adv_correct += 1;
        }
    }
    let stats = AttackStats {
        clean_accuracy: clean_correct as f64 / n as f64,
        adversarial_accuracy: adv_correct as f64 / n as f64,
        success_rate: if clean_correct == 0 {
            0.0
        } else {
            flipped as f64 / clean_correct as f64
        },
    };
    Ok((UnlabeledDataset::from_inputs(adv_inputs)?, stats))
}
