//! Datasets: synthetic generators, CSV ingestion, splitting and label encoding.
//!
//! CSV layout: a header row, feature columns `f0..f{d-1}`, then either an
//! integer label column `y` (classification) or target columns `t0..t{m-1}`
//! (regression). Comma separated, `.` decimal point.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Class { labels: Vec<usize>, k: usize },
    Regression { values: Vec<f64>, m: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    targets: Targets,
    split: Split,
}

impl Dataset {
    pub fn classification(features: Vec<f64>, dim: usize, labels: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return contract(format!("classification needs K >= 2, got {k}"));
        }
        if let Some((row, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
            return contract(format!("label {y} at row {row} is outside [0, {k})"));
        }
        Self::build(features, dim, Targets::Class { labels, k })
    }

    pub fn regression(features: Vec<f64>, dim: usize, values: Vec<f64>, m: usize) -> Result<Self> {
        if m == 0 {
            return contract("regression needs at least one target column");
        }
        Self::build(features, dim, Targets::Regression { values, m })
    }

    fn build(features: Vec<f64>, dim: usize, targets: Targets) -> Result<Self> {
        if dim == 0 {
            return contract("feature dimension must be positive");
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                op: "dataset features",
                left: vec![features.len()],
                right: vec![dim],
            });
        }
        let n = features.len() / dim;
        if n == 0 {
            return contract("dataset must contain at least one sample");
        }
        let target_rows = match &targets {
            Targets::Class { labels, .. } => labels.len(),
            Targets::Regression { values, m } => {
                if values.len() % m != 0 {
                    return Err(Error::Dimension {
                        op: "dataset targets",
                        left: vec![values.len()],
                        right: vec![*m],
                    });
                }
                values.len() / m
            }
        };
        if target_rows != n {
            return Err(Error::Dimension {
                op: "dataset rows",
                left: vec![n, dim],
                right: vec![target_rows],
            });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature row {}", i / dim)));
        }
        Ok(Self {
            features,
            dim,
            targets,
            split: Split::Full,
        })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Class labels, or `None` for regression data.
    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Class { labels, .. } => Some(labels),
            Targets::Regression { .. } => None,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.targets {
            Targets::Class { k, .. } => Some(k),
            Targets::Regression { .. } => None,
        }
    }

    /// Regression target row `i`, or `None` for classification data.
    pub fn target_row(&self, i: usize) -> Option<&[f64]> {
        match &self.targets {
            Targets::Regression { values, m } => Some(&values[i * m..(i + 1) * m]),
            Targets::Class { .. } => None,
        }
    }

    /// All features as an `N × d` tensor.
    pub fn feature_tensor(&self) -> Tensor {
        self.batch_features(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn batch_features(&self, idx: &[usize]) -> Tensor {
        let mut vals = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            vals.extend_from_slice(self.feature_row(i));
        }
        Tensor::new(vec![idx.len(), self.dim], vals).expect("shape matches by construction")
    }

    pub fn batch_labels(&self, idx: &[usize]) -> Option<Vec<usize>> {
        self.labels().map(|l| idx.iter().map(|&i| l[i]).collect())
    }

    pub fn batch_targets(&self, idx: &[usize]) -> Option<Tensor> {
        match &self.targets {
            Targets::Regression { m, .. } => {
                let mut vals = Vec::with_capacity(idx.len() * m);
                for &i in idx {
                    vals.extend_from_slice(self.target_row(i).unwrap());
                }
                Some(Tensor::new(vec![idx.len(), *m], vals).unwrap())
            }
            Targets::Class { .. } => None,
        }
    }

    /// Rows in the given order (may repeat or drop rows).
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.feature_row(i));
        }
        let targets = match &self.targets {
            Targets::Class { labels, k } => Targets::Class {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                k: *k,
            },
            Targets::Regression { m, .. } => Targets::Regression {
                values: idx
                    .iter()
                    .flat_map(|&i| self.target_row(i).unwrap().to_vec())
                    .collect(),
                m: *m,
            },
        };
        Self {
            features,
            dim: self.dim,
            targets,
            split: self.split,
        }
    }

    /// Deterministic shuffled split: the first `⌊N·train_fraction⌋` shuffled
    /// indices go to train, the rest to test.
    pub fn train_test_split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        let (train_idx, test_idx) = split_indices(self.len(), train_fraction, seed)?;
        Ok((
            self.subset(&train_idx).with_split(Split::Train),
            self.subset(&test_idx).with_split(Split::Test),
        ))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        match &self.targets {
            Targets::Class { .. } => header.push("y".into()),
            Targets::Regression { m, .. } => header.extend((0..*m).map(|j| format!("t{j}"))),
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.feature_row(i).iter().map(f64::to_string).collect();
            match &self.targets {
                Targets::Class { labels, .. } => rec.push(labels[i].to_string()),
                Targets::Regression { .. } => {
                    rec.extend(self.target_row(i).unwrap().iter().map(f64::to_string))
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return contract(format!("train fraction {train_fraction} outside [0, 1]"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5eed);
    idx.shuffle(&mut rng);
    let n_train = (n as f64 * train_fraction).floor() as usize;
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Column schema expected by [`load_csv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "task", deny_unknown_fields)]
pub enum CsvSchema {
    Classification { d: usize, k: usize },
    Regression { d: usize, m: usize },
}

pub fn load_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let perr = |line: usize, msg: String| Error::Parse {
        path: name.clone(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let (d, expected_header): (usize, Vec<String>) = match schema {
        CsvSchema::Classification { d, .. } => {
            let mut h: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
            h.push("y".into());
            (d, h)
        }
        CsvSchema::Regression { d, m } => {
            let mut h: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
            h.extend((0..m).map(|j| format!("t{j}")));
            (d, h)
        }
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| perr(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != expected_header {
        return Err(perr(
            1,
            format!("expected header {expected_header:?}, found {header:?}"),
        ));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut targets = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        if rec.len() != expected_header.len() {
            return Err(perr(
                line,
                format!("expected {} columns, found {}", expected_header.len(), rec.len()),
            ));
        }
        for (j, field) in rec.iter().enumerate() {
            if j < d {
                let v: f64 = field
                    .parse()
                    .map_err(|_| perr(line, format!("column f{j}: cannot parse {field:?}")))?;
                features.push(v);
            } else {
                match schema {
                    CsvSchema::Classification { k, .. } => {
                        let y: usize = field
                            .parse()
                            .map_err(|_| perr(line, format!("column y: cannot parse {field:?}")))?;
                        if y >= k {
                            return Err(perr(
                                line,
                                format!("row {row}: label {y} outside [0, {k})"),
                            ));
                        }
                        labels.push(y);
                    }
                    CsvSchema::Regression { .. } => {
                        let v: f64 = field.parse().map_err(|_| {
                            perr(line, format!("column t{}: cannot parse {field:?}", j - d))
                        })?;
                        targets.push(v);
                    }
                }
            }
        }
    }
    match schema {
        CsvSchema::Classification { d, k } => Dataset::classification(features, d, labels, k),
        CsvSchema::Regression { d, m } => Dataset::regression(features, d, targets, m),
    }
}

pub fn one_hot(label: usize, k: usize) -> Result<Vec<f64>> {
    if label >= k {
        return Err(Error::Index { index: label, len: k });
    }
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    GaussianBlobs,
    ConcentricRings,
    RegressionSurface,
}

/// Parameters of a synthetic dataset. The seed fully determines the output.
///
/// `overlap` is the class-center separation in units of `noise_std`. For
/// blobs, the last `overlapping_classes` classes sit `overlap` apart from each
/// other while the remaining ones are `easy_separation` apart from everything.
/// For regression, `k` is the target dimension, `n_per_class` the total sample
/// count and `noise_std` the largest noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_per_class: usize,
    pub d: usize,
    pub k: usize,
    pub overlap: f64,
    pub noise_std: f64,
    #[serde(default)]
    pub overlapping_classes: Option<usize>,
    #[serde(default = "default_easy_separation")]
    pub easy_separation: f64,
    pub seed: u64,
}

fn default_easy_separation() -> f64 {
    8.0
}

pub const TRAIN_FRACTION: f64 = 0.8;

impl SynthSpec {
    /// The standard benchmark: 4 classes in 8 dimensions, two of them far from
    /// everything and two overlapping each other at one standard deviation.
    pub fn std_synth(seed: u64) -> Self {
        Self {
            kind: SynthKind::GaussianBlobs,
            n_per_class: 500,
            d: 8,
            k: 4,
            overlap: 1.0,
            noise_std: 1.0,
            overlapping_classes: Some(2),
            easy_separation: 8.0,
            seed,
        }
    }

    /// Heteroscedastic regression surface with two targets over `[-1, 1]^4`.
    pub fn std_regression(seed: u64) -> Self {
        Self {
            kind: SynthKind::RegressionSurface,
            n_per_class: 5000,
            d: 4,
            k: 2,
            overlap: 0.0,
            noise_std: 0.5,
            overlapping_classes: None,
            easy_separation: default_easy_separation(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class < 2 {
            return contract(format!("need n >= 2 per class, got {}", self.n_per_class));
        }
        if self.d == 0 {
            return contract("d must be positive");
        }
        if !(self.overlap >= 0.0 && self.overlap.is_finite()) {
            return contract(format!("overlap must be finite and >= 0, got {}", self.overlap));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return contract(format!("noise_std must be positive, got {}", self.noise_std));
        }
        match self.kind {
            SynthKind::GaussianBlobs | SynthKind::ConcentricRings => {
                if self.k < 2 {
                    return contract(format!("classification needs K >= 2, got {}", self.k));
                }
            }
            SynthKind::RegressionSurface => {
                if self.k == 0 {
                    return contract("regression needs at least one target");
                }
            }
        }
        match self.kind {
            SynthKind::GaussianBlobs => {
                let hard = self.hard_classes();
                if hard > self.k {
                    return contract(format!(
                        "overlapping_classes {hard} exceeds K = {}",
                        self.k
                    ));
                }
                if self.d < self.blob_axes() {
                    return contract(format!(
                        "blobs with this layout need d >= {}, got {}",
                        self.blob_axes(),
                        self.d
                    ));
                }
            }
            SynthKind::ConcentricRings if self.d < 2 => {
                return contract("rings need d >= 2");
            }
            _ => {}
        }
        Ok(())
    }

    fn hard_classes(&self) -> usize {
        self.overlapping_classes.unwrap_or(self.k)
    }

    fn blob_axes(&self) -> usize {
        let hard = self.hard_classes();
        if hard >= self.k {
            self.k
        } else {
            self.k + 1
        }
    }

    /// Class centers for [`SynthKind::GaussianBlobs`]. Centers lie on scaled
    /// coordinate axes so pairwise distances are exact.
    pub fn blob_centers(&self) -> Vec<Vec<f64>> {
        let hard = self.hard_classes();
        let easy = self.k - hard;
        let unit = |axis: usize, len: f64| {
            let mut v = vec![0.0; self.d];
            v[axis] = len;
            v
        };
        let a_easy = self.easy_separation * self.noise_std * FRAC_1_SQRT_2;
        let a_hard = self.overlap * self.noise_std * FRAC_1_SQRT_2;
        let mut centers = Vec::with_capacity(self.k);
        for c in 0..easy {
            centers.push(unit(c, a_easy));
        }
        if hard == self.k {
            for c in 0..hard {
                centers.push(unit(c, a_hard));
            }
        } else {
            for j in 0..hard {
                let mut v = unit(easy, a_easy);
                v[easy + 1 + j] += a_hard;
                centers.push(v);
            }
        }
        centers
    }

    /// Noise level of the regression surface at `x`: low for `x₀ < 0.2`,
    /// rising smoothly to `noise_std` above it.
    pub fn regression_noise(&self, x: &[f64]) -> f64 {
        let s = 1.0 / (1.0 + (-12.0 * (x[0] - 0.2)).exp());
        self.noise_std * (0.02 + 0.98 * s)
    }

    /// Noise-free regression target at `x`.
    pub fn regression_mean(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        (0..self.k)
            .map(|j| {
                let a = x[j % d];
                let b = x[(j + 1) % d];
                (PI * a / 2.0).sin() + 0.5 * a * b
            })
            .collect()
    }
}

/// Generates a dataset and splits it 80/20 into (train, test).
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, Dataset)> {
    generate_full(spec)?.train_test_split(TRAIN_FRACTION, spec.seed)
}

/// The unsplit sample, in generation order.
pub fn generate_full(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
    match spec.kind {
        SynthKind::GaussianBlobs => {
            let centers = spec.blob_centers();
            let mut features = Vec::with_capacity(spec.k * spec.n_per_class * spec.d);
            let mut labels = Vec::with_capacity(spec.k * spec.n_per_class);
            for (c, center) in centers.iter().enumerate() {
                for _ in 0..spec.n_per_class {
                    features.extend(center.iter().map(|m| m + noise.sample(&mut rng)));
                    labels.push(c);
                }
            }
            Dataset::classification(features, spec.d, labels, spec.k)
        }
        SynthKind::ConcentricRings => {
            let angle = Uniform::new(0.0, 2.0 * PI);
            let mut features = Vec::with_capacity(spec.k * spec.n_per_class * spec.d);
            let mut labels = Vec::with_capacity(spec.k * spec.n_per_class);
            for c in 0..spec.k {
                let radius = (c + 1) as f64 * spec.overlap * spec.noise_std;
                for _ in 0..spec.n_per_class {
                    let t = angle.sample(&mut rng);
                    let r = radius + noise.sample(&mut rng);
                    features.push(r * t.cos());
                    features.push(r * t.sin());
                    for _ in 2..spec.d {
                        features.push(noise.sample(&mut rng));
                    }
                    labels.push(c);
                }
            }
            Dataset::classification(features, spec.d, labels, spec.k)
        }
        SynthKind::RegressionSurface => {
            let n = spec.n_per_class;
            let mut features = Vec::with_capacity(n * spec.d);
            let mut targets = Vec::with_capacity(n * spec.k);
            let std_normal = Normal::new(0.0, 1.0).unwrap();
            for _ in 0..n {
                let x: Vec<f64> = (0..spec.d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let sigma = spec.regression_noise(&x);
                for mu in spec.regression_mean(&x) {
                    targets.push(mu + sigma * std_normal.sample(&mut rng));
                }
                features.extend(x);
            }
            Dataset::regression(features, spec.d, targets, spec.k)
        }
    }
}
