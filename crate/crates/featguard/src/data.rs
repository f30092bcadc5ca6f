//! Synthetic dataset generation, CSV loading, and deterministic splits.
//!
//! Generators are pure functions of their arguments and seed: the same call
//! always produces the same bytes. Synthetic inputs live in the fixed domain
//! `[-10, 10]` per coordinate so that attack clamping has a well-defined box.

use ndarray::{Array1, Array2, ArrayView1};
use rand::prelude::*;
use rand_distr::StandardNormal;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// Domain bounds for all synthetic inputs.
pub const SYNTHETIC_BOUNDS: (f64, f64) = (-10.0, 10.0);

// Sub-stream indices for generator-internal RNG separation. Class-mean layout
// and sample noise draw from distinct streams so OOD generators can reuse a
// dataset's mean layout without replaying its noise.
const STREAM_MEANS: u64 = 0x4d45_414e;
const STREAM_NOISE: u64 = 0x4e4f_4953;

/// A matrix of input rows with one integer class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub bounds: (f64, f64),
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(
        inputs: Array2<f64>,
        labels: Vec<usize>,
        bounds: (f64, f64),
        class_count: usize,
    ) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::dims(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if bounds.0 > bounds.1 {
            return Err(Error::invalid(format!(
                "bounds ({}, {}) are inverted",
                bounds.0, bounds.1
            )));
        }
        if inputs.iter().any(|&v| v < bounds.0 || v > bounds.1) {
            return Err(Error::invalid("input coordinate outside declared bounds"));
        }
        Ok(Self {
            inputs,
            labels,
            bounds,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// New dataset from the given row indices, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let dim = self.dim();
        let mut flat = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            flat.extend(self.inputs.row(i).iter().copied());
            labels.push(self.labels[i]);
        }
        Self {
            inputs: Array2::from_shape_vec((indices.len(), dim), flat).expect("subset shape"),
            labels,
            bounds: self.bounds,
            class_count: self.class_count,
        }
    }
}

/// Input rows without labels, e.g. out-of-distribution or adversarial samples.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    pub inputs: Array2<f64>,
    pub bounds: (f64, f64),
}

impl UnlabeledDataset {
    /// Wrap a matrix, recording observed per-coordinate min/max as bounds.
    pub fn from_inputs(inputs: Array2<f64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::invalid("unlabeled dataset must be nonempty"));
        }
        let lo = inputs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = inputs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            inputs,
            bounds: (lo, hi),
        })
    }
}

/// Fractions of a deterministic train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, val_fraction: f64, test_fraction: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train_fraction,
            val_fraction,
            test_fraction,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("val_fraction", self.val_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid(format!("{name} = {f} not in (0, 1)")));
            }
        }
        let sum = self.train_fraction + self.val_fraction + self.test_fraction;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Parameters for the isotropic-Gaussian blob generator.
///
/// Class means sit on a seed-rotated layout (regular simplex when it fits the
/// ambient dimension, regular polygon otherwise) scaled so neighboring means
/// are `separation * spread` apart. `separation` defaults to 4, which gives
/// nearly separable classes; lower it to force class overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobsConfig {
    pub class_count: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub separation: f64,
    pub seed: u64,
}

impl BlobsConfig {
    pub fn new(class_count: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Self {
        Self {
            class_count,
            per_class,
            dim,
            spread,
            separation: 4.0,
            seed,
        }
    }

    pub fn with_separation(mut self, separation: f64) -> Self {
        self.separation = separation;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::invalid("blobs need at least 2 classes"));
        }
        if self.per_class < 1 {
            return Err(Error::invalid("per_class must be >= 1"));
        }
        if self.dim < 1 {
            return Err(Error::invalid("dim must be >= 1"));
        }
        if self.spread.is_nan() || self.spread <= 0.0 {
            return Err(Error::invalid(format!("spread = {} must be > 0", self.spread)));
        }
        if self.separation.is_nan() || self.separation <= 0.0 {
            return Err(Error::invalid(format!(
                "separation = {} must be > 0",
                self.separation
            )));
        }
        Ok(())
    }
}

/// Deterministic class-mean layout for a blob configuration.
///
/// Returns a `class_count x dim` matrix centered on the origin with
/// neighboring means `separation * spread` apart, rotated by a seed-derived
/// orthogonal transform.
pub fn blob_class_means(cfg: &BlobsConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let c = cfg.class_count;
    let d = cfg.dim;
    let scale = cfg.separation * cfg.spread;

    let mut means = if c <= d + 1 {
        simplex_vertices(c, d, scale)
    } else if d >= 2 {
        polygon_vertices(c, d, scale)
    } else {
        line_vertices(c, scale)
    };

    let mut rng = rng_from_seed(derive_seed(cfg.seed, STREAM_MEANS));
    let q = seeded_orthogonal(d, &mut rng);
    for mut row in means.rows_mut() {
        let rotated = q.dot(&row.to_owned());
        row.assign(&rotated);
    }
    Ok(means)
}

/// Regular simplex with `c` vertices in `d >= c-1` dimensions, pairwise
/// distance `scale`, centered at the origin.
fn simplex_vertices(c: usize, d: usize, scale: f64) -> Array2<f64> {
    // Center the standard-basis simplex in R^c, then express it in an
    // orthonormal basis of its own (c-1)-dimensional span.
    let mut centered = Array2::zeros((c, c));
    for i in 0..c {
        for j in 0..c {
            centered[[i, j]] = if i == j { 1.0 } else { 0.0 } - 1.0 / c as f64;
        }
    }
    // Gram-Schmidt on the first c-1 centered vertices spans the subspace.
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(c - 1);
    for i in 0..c - 1 {
        let mut v = centered.row(i).to_owned();
        for q in &basis {
            let proj = q.dot(&v);
            v = &v - &(q * proj);
        }
        let norm = v.dot(&v).sqrt();
        basis.push(v / norm);
    }
    let mut out = Array2::zeros((c, d));
    let factor = scale / std::f64::consts::SQRT_2;
    for i in 0..c {
        for (j, q) in basis.iter().enumerate() {
            out[[i, j]] = q.dot(&centered.row(i)) * factor;
        }
    }
    out
}

/// Regular polygon in the first two coordinates with adjacent-vertex
/// distance `scale`.
fn polygon_vertices(c: usize, d: usize, scale: f64) -> Array2<f64> {
    let radius = scale / (2.0 * (std::f64::consts::PI / c as f64).sin());
    let mut out = Array2::zeros((c, d));
    for i in 0..c {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / c as f64;
        out[[i, 0]] = radius * theta.cos();
        out[[i, 1]] = radius * theta.sin();
    }
    out
}

/// Evenly spaced points on a line, spacing `scale`, centered at the origin.
fn line_vertices(c: usize, scale: f64) -> Array2<f64> {
    let mut out = Array2::zeros((c, 1));
    for i in 0..c {
        out[[i, 0]] = (i as f64 - (c as f64 - 1.0) / 2.0) * scale;
    }
    out
}

/// Seed-derived orthogonal matrix: Gram-Schmidt QR of a Gaussian draw.
fn seeded_orthogonal(d: usize, rng: &mut impl Rng) -> Array2<f64> {
    loop {
        let mut a = Array2::zeros((d, d));
        for v in a.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        if let Some(q) = gram_schmidt_columns(&a) {
            return q;
        }
        // Rank-deficient draw has probability zero; redraw if it happens.
    }
}

fn gram_schmidt_columns(a: &Array2<f64>) -> Option<Array2<f64>> {
    let d = a.ncols();
    let mut q = Array2::zeros((d, d));
    for j in 0..d {
        let mut v = a.column(j).to_owned();
        for i in 0..j {
            let qi = q.column(i);
            let proj = qi.dot(&v);
            v.zip_mut_with(&qi, |vv, &qq| *vv -= proj * qq);
        }
        let norm = v.dot(&v).sqrt();
        if norm < 1e-12 {
            return None;
        }
        q.column_mut(j).assign(&(v / norm));
    }
    Some(q)
}

/// Generate `class_count * per_class` samples from isotropic Gaussians around
/// the seed-derived class means, clamped to `[-10, 10]`. Rows are ordered by
/// class: all class-0 samples first, then class 1, and so on.
pub fn gen_blobs(cfg: &BlobsConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let means = blob_class_means(cfg)?;
    let (lo, hi) = SYNTHETIC_BOUNDS;
    let n = cfg.class_count * cfg.per_class;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, STREAM_NOISE));
    let mut flat = Vec::with_capacity(n * cfg.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..cfg.class_count {
        for _ in 0..cfg.per_class {
            for j in 0..cfg.dim {
                let z: f64 = rng.sample(StandardNormal);
                flat.push((means[[c, j]] + cfg.spread * z).clamp(lo, hi));
            }
            labels.push(c);
        }
    }
    let inputs = Array2::from_shape_vec((n, cfg.dim), flat).expect("blob shape");
    LabeledDataset::new(inputs, labels, SYNTHETIC_BOUNDS, cfg.class_count)
}

/// Families of out-of-distribution samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodKind {
    /// i.i.d. N(0, magnitude^2) per coordinate.
    GaussianNoise,
    /// i.i.d. Uniform[-magnitude, magnitude] per coordinate.
    UniformNoise,
    /// Blob samples whose class means are translated by `magnitude` along
    /// every axis.
    ShiftedBlobs,
}

impl std::str::FromStr for OodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_noise" => Ok(OodKind::GaussianNoise),
            "uniform_noise" => Ok(OodKind::UniformNoise),
            "shifted_blobs" => Ok(OodKind::ShiftedBlobs),
            other => Err(Error::invalid(format!("unknown OOD kind '{other}'"))),
        }
    }
}

/// Parameters for [`gen_ood`].
///
/// `blobs` supplies the mean layout for `ShiftedBlobs` so shifted samples can
/// mirror a specific in-distribution dataset; when absent a default 3-class
/// layout is used. Noise is always drawn from this config's own seed.
#[derive(Debug, Clone, PartialEq)]
pub struct OodConfig {
    pub kind: OodKind,
    pub count: usize,
    pub dim: usize,
    pub magnitude: f64,
    pub seed: u64,
    pub blobs: Option<BlobsConfig>,
}

/// Generate out-of-distribution samples. Bounds record the observed
/// per-coordinate min/max; shifted blobs are intentionally not clamped so the
/// translation survives intact.
pub fn gen_ood(cfg: &OodConfig) -> Result<UnlabeledDataset> {
    if cfg.count < 1 {
        return Err(Error::invalid("OOD count must be >= 1"));
    }
    if cfg.dim < 1 {
        return Err(Error::invalid("OOD dim must be >= 1"));
    }
    if cfg.magnitude.is_nan() || cfg.magnitude <= 0.0 {
        return Err(Error::invalid(format!(
            "magnitude = {} must be > 0",
            cfg.magnitude
        )));
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, STREAM_NOISE));
    let flat = match cfg.kind {
        OodKind::GaussianNoise => (0..cfg.count * cfg.dim)
            .map(|_| cfg.magnitude * rng.sample::<f64, _>(StandardNormal))
            .collect::<Vec<_>>(),
        OodKind::UniformNoise => (0..cfg.count * cfg.dim)
            .map(|_| rng.random_range(-cfg.magnitude..=cfg.magnitude))
            .collect::<Vec<_>>(),
        OodKind::ShiftedBlobs => {
            let base = match &cfg.blobs {
                Some(b) => {
                    if b.dim != cfg.dim {
                        return Err(Error::dims(format!(
                            "blob layout dim {} != OOD dim {}",
                            b.dim, cfg.dim
                        )));
                    }
                    b.clone()
                }
                None => BlobsConfig::new(3, 1, cfg.dim, 1.0, cfg.seed),
            };
            let means = blob_class_means(&base)?;
            let mut flat = Vec::with_capacity(cfg.count * cfg.dim);
            let mut produced = 0;
            'outer: loop {
                for c in 0..base.class_count {
                    for j in 0..cfg.dim {
                        let z: f64 = rng.sample(StandardNormal);
                        flat.push(means[[c, j]] + cfg.magnitude + base.spread * z);
                    }
                    produced += 1;
                    if produced == cfg.count {
                        break 'outer;
                    }
                }
            }
            flat
        }
    };
    let inputs = Array2::from_shape_vec((cfg.count, cfg.dim), flat).expect("ood shape");
    UnlabeledDataset::from_inputs(inputs)
}

/// Partition a dataset into train/validation/test parts.
///
/// A seed-derived permutation assigns rows; part sizes are
/// `floor(N * fraction)` with the remainder going to train.
pub fn split(
    ds: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let n = ds.len();
    if n < 3 {
        return Err(Error::invalid(format!("cannot split {n} rows three ways")));
    }
    let n_train_base = (n as f64 * spec.train_fraction).floor() as usize;
    let n_val = (n as f64 * spec.val_fraction).floor() as usize;
    let n_test = (n as f64 * spec.test_fraction).floor() as usize;
    let n_train = n - n_val - n_test; // remainder rows go to train
    debug_assert!(n_train >= n_train_base);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::invalid(format!(
            "split sizes ({n_train}, {n_val}, {n_test}) must all be nonzero"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(spec.seed);
    indices.shuffle(&mut rng);
    let train = ds.subset(&indices[..n_train]);
    let val = ds.subset(&indices[n_train..n_train + n_val]);
    let test = ds.subset(&indices[n_train + n_val..]);
    Ok((train, val, test))
}

/// Load a labeled dataset from CSV rows of the form `v_1,...,v_d,label`.
///
/// The feature dimension comes from the first row, the class count is the
/// maximum label plus one, and bounds are the observed min/max coordinate.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_csv(&text)
}

/// Parse CSV text in the [`load_csv`] format. Row numbers in errors are
/// 1-based physical line numbers; blank lines are skipped.
pub fn parse_csv(text: &str) -> Result<LabeledDataset> {
    let mut flat: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match cols {
            None => {
                if fields.len() < 2 {
                    return Err(Error::Parse {
                        row,
                        message: format!(
                            "expected at least one feature column and a label, got {} field(s)",
                            fields.len()
                        ),
                    });
                }
                cols = Some(fields.len());
            }
            Some(c) if fields.len() != c => {
                return Err(Error::invalid(format!(
                    "row {row} has {} columns, expected {c}",
                    fields.len()
                )));
            }
            Some(_) => {}
        }
        let d = cols.unwrap() - 1;
        for field in &fields[..d] {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                message: format!("invalid numeric value '{}'", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite value '{}'", field.trim()),
                });
            }
            flat.push(v);
        }
        let label_field = fields[d].trim();
        let label: i64 = label_field.parse().map_err(|_| Error::Parse {
            row,
            message: format!("invalid label '{label_field}'"),
        })?;
        if label < 0 {
            return Err(Error::Parse {
                row,
                message: format!("negative label {label}"),
            });
        }
        labels.push(label as usize);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::invalid("CSV contains no data rows"));
    }
    let d = cols.unwrap() - 1;
    let class_count = labels.iter().copied().max().unwrap() + 1;
    let lo = flat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inputs = Array2::from_shape_vec((rows, d), flat).expect("csv shape");
    LabeledDataset::new(inputs, labels, (lo, hi), class_count)
}

/// Write a labeled dataset in the [`load_csv`] format.
pub fn write_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (row, &label) in ds.inputs.rows().into_iter().zip(&ds.labels) {
        push_row(&mut out, row);
        let _ = writeln!(out, ",{label}");
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Write unlabeled inputs as CSV rows of coordinates only.
pub fn write_unlabeled_csv(ds: &UnlabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for row in ds.inputs.rows() {
        push_row(&mut out, row);
        out.push('\n');
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

fn push_row(out: &mut String, row: ArrayView1<'_, f64>) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
}
