//! Per-sample confidence scores and calibration.
//!
//! Every method follows one convention: higher score = more confident the
//! sample is fine. Density enters as natural-log likelihood, softmax methods
//! as maximum class probability, Mahalanobis as negated squared distance.
//! A single threshold rule ("flag when score < T") then serves all of them.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::classifier::softmax;
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::numeric::log_sum_exp;

/// Which scoring method produced a value; reports and thresholds carry this
/// so mixed-method output stays unambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    /// Feature log-density under the fitted mixture.
    Gmm,
    /// Maximum softmax probability at temperature 1.
    MaxSoftmax,
    /// Maximum softmax probability at a fitted temperature.
    Calibrated,
    /// Maximum raw logit.
    MaxLogit,
    /// Negated squared distance to the nearest class mean.
    Mahalanobis,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 5] = [
        ScoreKind::Gmm,
        ScoreKind::MaxSoftmax,
        ScoreKind::Calibrated,
        ScoreKind::MaxLogit,
        ScoreKind::Mahalanobis,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScoreKind::Gmm => "gmm",
            ScoreKind::MaxSoftmax => "max_softmax",
            ScoreKind::Calibrated => "calibrated",
            ScoreKind::MaxLogit => "max_logit",
            ScoreKind::Mahalanobis => "mahalanobis",
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreKind::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown score kind '{s}'")))
    }
}

/// Scores split by classification outcome: the two populations whose
/// separation the rank test measures.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGroups {
    pub correct_scores: Vec<f64>,
    pub wrong_scores: Vec<f64>,
}

impl ScoreGroups {
    pub fn new(correct_scores: Vec<f64>, wrong_scores: Vec<f64>) -> Result<Self> {
        if correct_scores.is_empty() && wrong_scores.is_empty() {
            return Err(Error::invalid("both score groups are empty"));
        }
        if correct_scores
            .iter()
            .chain(&wrong_scores)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("score groups must be finite"));
        }
        Ok(Self {
            correct_scores,
            wrong_scores,
        })
    }
}

/// Rejection cutoff: samples scoring below `value` are flagged as likely
/// failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionThreshold {
    pub value: f64,
    pub score_kind: ScoreKind,
}

impl DetectionThreshold {
    pub fn new(value: f64, score_kind: ScoreKind) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::invalid(format!("threshold {value} is not finite")));
        }
        Ok(Self { value, score_kind })
    }
}

/// Log-density of every feature row; the primary suspicion score.
pub fn score_gmm(g: &GmmModel, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    g.log_density_batch(features)
}

/// Maximum softmax probability per row after dividing logits by
/// `temperature`. Temperature 1 is the uncalibrated baseline.
pub fn score_max_softmax(
    logits: ArrayView2<'_, f64>,
    temperature: f64,
) -> Result<Array1<f64>> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::invalid(format!(
            "temperature = {temperature} must be > 0"
        )));
    }
    let mut out = Array1::zeros(logits.nrows());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let scaled = row.mapv(|v| v / temperature);
        let probs = softmax(scaled.view());
        out[i] = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(out)
}

/// Maximum raw logit per row. Rank-equivalent to max-softmax only when the
/// softmax denominator is constant across samples; exposed as its own kind.
pub fn score_max_logit(logits: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if logits.ncols() == 0 {
        return Err(Error::invalid("logits must have at least one column"));
    }
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Mean cross-entropy of `softmax(logits / t)` against the labels.
pub fn temperature_nll(
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
    temperature: f64,
) -> Result<f64> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::invalid(format!(
            "temperature = {temperature} must be > 0"
        )));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::dims(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if logits.nrows() == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let c = logits.ncols();
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        if y >= c {
            return Err(Error::invalid(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        let scaled: Vec<f64> = row.iter().map(|v| v / temperature).collect();
        total += log_sum_exp(&scaled) - scaled[y];
    }
    Ok(total / labels.len() as f64)
}

/// Fit the scaling temperature on held-out logits by golden-section search
/// on `ln T` over `[-3, 3]` (absolute tolerance 1e-4). Falls back to 1 if
/// the search somehow lands worse than no scaling, so the returned value
/// never increases validation NLL.
pub fn fit_temperature(val_logits: ArrayView2<'_, f64>, val_labels: &[usize]) -> Result<f64> {
    let nll = |ln_t: f64| temperature_nll(val_logits, val_labels, ln_t.exp());
    // Validate inputs once up front; later evaluations cannot fail.
    let baseline = temperature_nll(val_logits, val_labels, 1.0)?;

    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (-3.0f64, 3.0f64);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = nll(x1)?;
    let mut f2 = nll(x2)?;
    while hi - lo > 1e-4 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = nll(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = nll(x2)?;
        }
    }
    let t = ((lo + hi) / 2.0).exp();
    if temperature_nll(val_logits, val_labels, t)? > baseline {
        return Ok(1.0);
    }
    Ok(t)
}

/// Expected calibration error over `bins` equal-width confidence bins.
///
/// Bin edges are right-inclusive (`(b/B, (b+1)/B]`) with the first bin
/// closed at 0, so confidence 1.0 lands in the last bin. Rows must be
/// probability simplices within 1e-8.
pub fn ece(probs: ArrayView2<'_, f64>, labels: &[usize], bins: usize) -> Result<f64> {
    if bins < 1 {
        return Err(Error::invalid("bins must be >= 1"));
    }
    if probs.nrows() != labels.len() {
        return Err(Error::dims(format!(
            "{} prob rows but {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if probs.nrows() == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let c = probs.ncols();
    let mut bin_count = vec![0usize; bins];
    let mut bin_conf = vec![0.0f64; bins];
    let mut bin_hits = vec![0usize; bins];
    for (i, (row, &y)) in probs.rows().into_iter().zip(labels).enumerate() {
        if y >= c {
            return Err(Error::invalid(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > 1e-8 || row.iter().any(|&p| !(-1e-8..=1.0 + 1e-8).contains(&p)) {
            return Err(Error::invalid(format!(
                "row {i} is not a probability simplex (sum {sum})"
            )));
        }
        let mut pred = 0;
        for (k, &p) in row.iter().enumerate() {
            if p > row[pred] {
                pred = k;
            }
        }
        let conf = row[pred];
        let bin = ((conf * bins as f64).ceil() as isize - 1).clamp(0, bins as isize - 1) as usize;
        bin_count[bin] += 1;
        bin_conf[bin] += conf;
        bin_hits[bin] += usize::from(pred == y);
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if bin_count[b] == 0 {
            continue;
        }
        let count = bin_count[b] as f64;
        let acc = bin_hits[b] as f64 / count;
        let conf = bin_conf[b] / count;
        total += (count / n) * (acc - conf).abs();
    }
    Ok(total)
}

/// Class means with a tied diagonal covariance pooled over within-class
/// deviations. The variance floor keeps scores finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisModel {
    pub class_means: Array2<f64>,
    pub tied_variances: Array1<f64>,
}

/// Fit per-class means and the pooled per-dimension variance of
/// `feature - class_mean`, floored at 1e-6.
pub fn fit_mahalanobis(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    class_count: usize,
) -> Result<MahalanobisModel> {
    if features.nrows() != labels.len() {
        return Err(Error::dims(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if class_count < 1 {
        return Err(Error::invalid("class_count must be >= 1"));
    }
    let d = features.ncols();
    let mut counts = vec![0usize; class_count];
    let mut class_means = Array2::zeros((class_count, d));
    for (row, &y) in features.rows().into_iter().zip(labels) {
        if y >= class_count {
            return Err(Error::invalid(format!(
                "label {y} out of range for {class_count} classes"
            )));
        }
        counts[y] += 1;
        let mut mean_row = class_means.row_mut(y);
        mean_row += &row;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {empty} has no samples")));
    }
    for (c, &count) in counts.iter().enumerate() {
        let mut row = class_means.row_mut(c);
        row.mapv_inplace(|v| v / count as f64);
    }
    let mut tied: Array1<f64> = Array1::zeros(d);
    for (row, &y) in features.rows().into_iter().zip(labels) {
        for j in 0..d {
            let diff = row[j] - class_means[[y, j]];
            tied[j] += diff * diff;
        }
    }
    let n = labels.len() as f64;
    tied.mapv_inplace(|v| (v / n).max(1e-6));
    Ok(MahalanobisModel {
        class_means,
        tied_variances: tied,
    })
}

/// Negated variance-normalized squared distance to the nearest class mean;
/// 0 is the maximum, attained exactly at a class mean.
pub fn score_mahalanobis(mm: &MahalanobisModel, f: ArrayView1<'_, f64>) -> Result<f64> {
    let d = mm.tied_variances.len();
    if f.len() != d {
        return Err(Error::dims(format!(
            "point has length {}, model dimension is {d}",
            f.len()
        )));
    }
    let mut best = f64::INFINITY;
    for mean in mm.class_means.rows() {
        let mut dist = 0.0;
        for j in 0..d {
            let diff = f[j] - mean[j];
            dist += diff * diff / mm.tied_variances[j];
        }
        best = best.min(dist);
    }
    Ok(-best)
}

/// [`score_mahalanobis`] over every row.
pub fn score_mahalanobis_batch(
    mm: &MahalanobisModel,
    features: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    let mut out = Array1::zeros(features.nrows());
    for (i, row) in features.rows().into_iter().enumerate() {
        out[i] = score_mahalanobis(mm, row)?;
    }
    Ok(out)
}

/// Flag every score strictly below the threshold as a predicted failure.
pub fn apply_threshold(scores: &[f64], t: &DetectionThreshold) -> Result<Vec<bool>> {
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("scores must not be NaN"));
    }
    Ok(scores.iter().map(|&s| s < t.value).collect())
}
