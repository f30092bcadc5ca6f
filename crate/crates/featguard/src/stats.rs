//! Rank-based hypothesis testing and ranking metrics for detector output.
//!
//! The rank test decides whether two score populations differ; ROC/PR
//! summarize how well a score separates them; threshold selection picks the
//! rejection cutoff on validation scores. All of it is tie-aware, since
//! density scores can collide at float resolution.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scoring::{DetectionThreshold, ScoreKind};

/// Rank-sum test outcome for two groups `a` and `b`. `u` is `min(u_a, u_b)`;
/// `p_value` is two-sided from the tie-corrected normal approximation with
/// no continuity correction. `degenerate` is set (with `p_value = 1`) when
/// every pooled value ties, leaving the statistic undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct MannWhitneyResult {
    pub u_a: f64,
    pub u_b: f64,
    pub u: f64,
    pub z: f64,
    pub p_value: f64,
    pub degenerate: bool,
}

// Midranks of the pooled values plus tie-group sizes. Returns per-group rank
// sums; ranks are 1-based, ties share the average rank of their run.
fn rank_sums(a: &[f64], b: &[f64]) -> (f64, f64, Vec<usize>) {
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite scores"));
    let mut r_a = 0.0;
    let mut r_b = 0.0;
    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Positions i..j (0-based) share the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &pooled[i..j] {
            if item.1 {
                r_a += midrank;
            } else {
                r_b += midrank;
            }
        }
        if j - i > 1 {
            tie_groups.push(j - i);
        }
        i = j;
    }
    (r_a, r_b, tie_groups)
}

/// Two-sided rank-sum test with midranks for ties.
///
/// `u_a = R_a - n(n+1)/2` with `R_a` the rank sum of group `a`; the reported
/// statistic is the smaller of the two U values. Significance uses the
/// normal approximation with tie-corrected variance.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitneyResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("rank test needs both groups nonempty"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("rank test scores must be finite"));
    }
    let n = a.len() as f64;
    let m = b.len() as f64;
    let total = n + m;
    let (r_a, r_b, tie_groups) = rank_sums(a, b);
    let u_a = r_a - n * (n + 1.0) / 2.0;
    let u_b = r_b - m * (m + 1.0) / 2.0;
    let u = u_a.min(u_b);

    let tie_term: f64 = tie_groups
        .iter()
        .map(|&t| {
            let t = t as f64;
            (t * t * t - t) / (total * (total - 1.0))
        })
        .sum();
    let variance = n * m / 12.0 * ((total + 1.0) - tie_term);
    if variance <= 0.0 {
        return Ok(MannWhitneyResult {
            u_a,
            u_b,
            u,
            z: 0.0,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let z = (u - n * m / 2.0) / variance.sqrt();
    let p_value = libm::erfc(z.abs() / std::f64::consts::SQRT_2);
    Ok(MannWhitneyResult {
        u_a,
        u_b,
        u,
        z,
        p_value,
        degenerate: false,
    })
}

/// An ROC or PR curve with its area. `points` are (x, y) with x
/// non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl BinaryCurve {
    /// Write `x,y` rows preceded by a comment line carrying the area.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "# auc = {}", self.auc);
        out.push_str("x,y\n");
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        std::fs::write(path.as_ref(), out)?;
        Ok(())
    }
}

fn check_groups(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("need both positive and negative scores"));
    }
    if pos.iter().chain(neg).any(|v| !v.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    Ok(())
}

// Descending sweep over pooled scores; calls `emit(tp, fp)` after each
// distinct-score block.
fn sweep_descending(pos: &[f64], neg: &[f64], mut emit: impl FnMut(usize, usize)) {
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&v| (v, true))
        .chain(neg.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite scores"));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        emit(tp, fp);
    }
}

/// ROC curve with one point per distinct score plus the (0,0) origin,
/// sweeping thresholds from high to low (higher score = positive call).
/// The area is computed from rank sums (pairs, ties counted half), which
/// equals the trapezoidal area under the emitted points.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<BinaryCurve> {
    check_groups(pos, neg)?;
    let n = pos.len() as f64;
    let m = neg.len() as f64;
    let mut points = vec![(0.0, 0.0)];
    sweep_descending(pos, neg, |tp, fp| {
        points.push((fp as f64 / m, tp as f64 / n));
    });
    let (r_pos, _, _) = rank_sums(pos, neg);
    let u_pos = r_pos - n * (n + 1.0) / 2.0;
    Ok(BinaryCurve {
        points,
        auc: u_pos / (n * m),
    })
}

/// Precision-recall curve at every distinct threshold descending; the area
/// is step-wise average precision `sum_k (R_k - R_{k-1}) P_k`.
pub fn pr_auc(pos: &[f64], neg: &[f64]) -> Result<BinaryCurve> {
    check_groups(pos, neg)?;
    let n = pos.len() as f64;
    let mut points = Vec::new();
    let mut auc = 0.0;
    let mut prev_recall = 0.0;
    sweep_descending(pos, neg, |tp, fp| {
        let recall = tp as f64 / n;
        let precision = tp as f64 / (tp + fp) as f64;
        auc += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision));
    });
    Ok(BinaryCurve { points, auc })
}

/// A selected rejection threshold and the validation F1 it achieved.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSelection {
    pub threshold: DetectionThreshold,
    pub f1: f64,
}

fn f1_at(scores: &[f64], failures: &[bool], t: f64) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&s, &fail) in scores.iter().zip(failures) {
        let flagged = s < t;
        match (flagged, fail) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    // Single-division form of 2PR/(P+R): exact whenever the counts are,
    // which keeps the equal-F1 tie rule meaningful.
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Pick the threshold maximizing F1 of "flag = score < T" against known
/// failure labels, scanning midpoints between adjacent distinct scores.
/// F1 ties break toward the larger threshold. If every score ties there is
/// no midpoint to scan; the shared value itself is returned (flags nothing).
pub fn select_threshold(
    scores: &[f64],
    failure_flags: &[bool],
    kind: ScoreKind,
) -> Result<ThresholdSelection> {
    if scores.len() != failure_flags.len() {
        return Err(Error::dims(format!(
            "{} scores but {} flags",
            scores.len(),
            failure_flags.len()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let failures = failure_flags.iter().filter(|&&f| f).count();
    if failures == 0 || failures == failure_flags.len() {
        return Err(Error::invalid(
            "threshold selection needs both failed and successful samples",
        ));
    }
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    distinct.dedup();
    if distinct.len() < 2 {
        return Ok(ThresholdSelection {
            threshold: DetectionThreshold::new(distinct[0], kind)?,
            f1: 0.0,
        });
    }
    let mut best_t = f64::NEG_INFINITY;
    let mut best_f1 = f64::NEG_INFINITY;
    for pair in distinct.windows(2) {
        let t = (pair[0] + pair[1]) / 2.0;
        let f1 = f1_at(scores, failure_flags, t);
        if f1 > best_f1 || (f1 == best_f1 && t > best_t) {
            best_f1 = f1;
            best_t = t;
        }
    }
    Ok(ThresholdSelection {
        threshold: DetectionThreshold::new(best_t, kind)?,
        f1: best_f1,
    })
}
