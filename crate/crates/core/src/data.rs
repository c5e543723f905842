//! Labeled datasets, the `multidist` Gaussian-mixture generator, and the
//! dense CSV / sparse `idx:val` text formats.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{PolkError, Result};
use crate::loss::Label;

/// A feature matrix (one row per sample) with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<Label>,
    num_classes: usize,
}

impl Dataset {
    /// `features` is row-major with `dim` columns. The class count is the
    /// largest label (so `{0, 1}` binary data reports `C = 1`).
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if features.len() != dim * labels.len() {
            return Err(PolkError::Usage(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(PolkError::Usage("features must be finite".into()));
        }
        let num_classes = labels.iter().copied().max().unwrap_or(0).max(1);
        Ok(Dataset {
            dim,
            features,
            labels,
            num_classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], Label)> + '_ {
        (0..self.len()).map(move |i| (self.x(i), self.y(i)))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.x(i));
            labels.push(self.y(i));
        }
        Dataset::new(self.dim, features, labels).expect("subset of a valid dataset")
    }

    /// Largest Euclidean norm of any feature vector.
    pub fn max_norm(&self) -> f64 {
        self.iter()
            .map(|(x, _)| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Parameters of the planar `multidist` mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MultidistSpec {
    pub num_classes: usize,
    pub modes_per_class: usize,
    /// Variance of each mixture component.
    pub within_mode_var: f64,
    /// Variance of the mode means around their class anchor.
    pub mean_scatter_var: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for MultidistSpec {
    fn default() -> Self {
        MultidistSpec {
            num_classes: 5,
            modes_per_class: 3,
            within_mode_var: 0.2,
            mean_scatter_var: 1.0,
            n_train: 5000,
            n_test: 2500,
            seed: 0,
        }
    }
}

impl MultidistSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(PolkError::Usage("multidist needs at least 2 classes".into()));
        }
        if self.modes_per_class == 0 {
            return Err(PolkError::Usage("multidist needs at least 1 mode per class".into()));
        }
        if !(self.within_mode_var > 0.0 && self.mean_scatter_var > 0.0) {
            return Err(PolkError::Usage("multidist variances must be positive".into()));
        }
        Ok(())
    }

    /// Class anchor on the unit circle; class 1 sits at angle 0.
    pub fn anchor(&self, label: Label) -> [f64; 2] {
        let angle = 2.0 * PI * (label - 1) as f64 / self.num_classes as f64;
        [angle.cos(), angle.sin()]
    }
}

/// The fixed mixture: `means[y - 1][j]` is the mean of mode `j` of class `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub means: Vec<Vec<[f64; 2]>>,
}

/// Draw train and test sets from one fixed mixture.
///
/// Draw order from a single ChaCha8 stream seeded with `spec.seed`: first all
/// mode means (class-major, two standard normals each), then the training
/// samples, then the test samples. Each sample draws its class, then its mode
/// (both uniform), then two standard normals.
pub fn gen_multidist(spec: &MultidistSpec) -> Result<(Dataset, Dataset)> {
    let (train, test, _) = gen_multidist_with_mixture(spec)?;
    Ok((train, test))
}

pub fn gen_multidist_with_mixture(spec: &MultidistSpec) -> Result<(Dataset, Dataset, Mixture)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scatter = spec.mean_scatter_var.sqrt();
    let means: Vec<Vec<[f64; 2]>> = (1..=spec.num_classes)
        .map(|y| {
            let theta = spec.anchor(y);
            (0..spec.modes_per_class)
                .map(|_| {
                    let z0: f64 = rng.sample(StandardNormal);
                    let z1: f64 = rng.sample(StandardNormal);
                    [theta[0] + scatter * z0, theta[1] + scatter * z1]
                })
                .collect()
        })
        .collect();

    let sd = spec.within_mode_var.sqrt();
    let mut draw = |n: usize| -> Dataset {
        let mut features = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.random_range(1..=spec.num_classes);
            let j = rng.random_range(0..spec.modes_per_class);
            let mu = means[y - 1][j];
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            features.push(mu[0] + sd * z0);
            features.push(mu[1] + sd * z1);
            labels.push(y);
        }
        Dataset::new(2, features, labels).expect("generated data is well-formed")
    };
    let train = draw(spec.n_train);
    let test = draw(spec.n_test);
    Ok((train, test, Mixture { means }))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PolkError::io(path, e))
}

/// Non-blank, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim_end_matches('\r').trim();
        (!line.is_empty() && !line.starts_with('#')).then_some((i + 1, line))
    })
}

fn parse_label(path: &Path, line: usize, s: &str) -> Result<Label> {
    s.trim()
        .parse()
        .map_err(|_| PolkError::parse(path, line, format!("label '{s}' is not a nonnegative integer")))
}

fn parse_value(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| PolkError::parse(path, line, format!("'{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(PolkError::parse(path, line, format!("'{s}' is not finite")));
    }
    Ok(v)
}

/// Parse `label,v1,...,vp` rows.
pub fn parse_dense_csv(path: &Path, text: &str) -> Result<Dataset> {
    let mut dim = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, row) in data_lines(text) {
        let mut fields = row.split(',');
        let label = parse_label(path, line, fields.next().unwrap_or(""))?;
        let before = features.len();
        for f in fields {
            features.push(parse_value(path, line, f)?);
        }
        let p = features.len() - before;
        match dim {
            None => dim = Some(p),
            Some(d) if d != p => {
                return Err(PolkError::parse(
                    path,
                    line,
                    format!("row has {p} features, expected {d}"),
                ))
            }
            _ => {}
        }
        labels.push(label);
    }
    let Some(dim) = dim else {
        return Err(PolkError::parse(path, 0, "no data rows"));
    };
    Dataset::new(dim, features, labels).map_err(|e| PolkError::parse(path, 0, e.to_string()))
}

pub fn load_dense_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_dense_csv(path, &read_text(path)?)
}

pub fn dense_csv_string(data: &Dataset) -> String {
    let mut out = String::new();
    for (x, y) in data.iter() {
        write!(out, "{y}").unwrap();
        for v in x {
            // shortest representation that parses back to the same f64
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_dense_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dense_csv_string(data)).map_err(|e| PolkError::io(path, e))
}

/// Parse `label idx:val ...` rows with 1-based, strictly increasing indices.
pub fn parse_sparse_text(path: &Path, text: &str, dim: usize) -> Result<Dataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, row) in data_lines(text) {
        let mut tokens = row.split_whitespace();
        let label = parse_label(path, line, tokens.next().unwrap_or(""))?;
        let start = features.len();
        features.resize(start + dim, 0.0);
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| PolkError::parse(path, line, format!("'{tok}' is not idx:val")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| PolkError::parse(path, line, format!("bad index in '{tok}'")))?;
            if idx == 0 || idx > dim {
                return Err(PolkError::parse(
                    path,
                    line,
                    format!("index {idx} outside 1..={dim}"),
                ));
            }
            if idx <= last {
                return Err(PolkError::parse(
                    path,
                    line,
                    format!("index {idx} does not increase past {last}"),
                ));
            }
            last = idx;
            features[start + idx - 1] = parse_value(path, line, val)?;
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(PolkError::parse(path, 0, "no data rows"));
    }
    Dataset::new(dim, features, labels).map_err(|e| PolkError::parse(path, 0, e.to_string()))
}

pub fn load_sparse_text(path: impl AsRef<Path>, dim: usize) -> Result<Dataset> {
    let path = path.as_ref();
    parse_sparse_text(path, &read_text(path)?, dim)
}

pub fn sparse_text_string(data: &Dataset) -> String {
    let mut out = String::new();
    for (x, y) in data.iter() {
        write!(out, "{y}").unwrap();
        for (i, v) in x.iter().enumerate() {
            if *v != 0.0 {
                write!(out, " {}:{v}", i + 1).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_sparse_text(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, sparse_text_string(data)).map_err(|e| PolkError::io(path, e))
}
