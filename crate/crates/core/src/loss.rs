//! Instantaneous losses and their derivatives with respect to the scores `f(x)`.

use std::fmt;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{PolkError, Result};
use crate::kernel::{hilbert_norm, KernelExpansion};

/// Class label. Multi-class losses use `1..=C`; binary logistic uses `{0, 1}`.
pub type Label = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `max(0, 1 + f_r - f_y)` with `r` the best wrong class.
    MultiHinge { num_classes: usize },
    /// Softmax negative log-likelihood.
    MultiLogistic { num_classes: usize },
    /// Single activation with `P(y = 0 | x) = e^f / (1 + e^f)`.
    BinaryLogistic,
}

impl LossKind {
    pub fn multi_hinge(num_classes: usize) -> Result<Self> {
        check_multi(num_classes)?;
        Ok(LossKind::MultiHinge { num_classes })
    }

    pub fn multi_logistic(num_classes: usize) -> Result<Self> {
        check_multi(num_classes)?;
        Ok(LossKind::MultiLogistic { num_classes })
    }

    /// Number of activation functions the loss consumes.
    pub fn num_classes(&self) -> usize {
        match *self {
            LossKind::MultiHinge { num_classes } | LossKind::MultiLogistic { num_classes } => {
                num_classes
            }
            LossKind::BinaryLogistic => 1,
        }
    }

    /// Sup of `||grad||_2` over scores and labels.
    pub fn lipschitz(&self) -> f64 {
        match self {
            LossKind::BinaryLogistic => 1.0,
            _ => std::f64::consts::SQRT_2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::MultiHinge { .. } => "multi_hinge",
            LossKind::MultiLogistic { .. } => "multi_logistic",
            LossKind::BinaryLogistic => "binary_logistic",
        }
    }

    /// Parse a loss name for `num_classes` outputs (ignored for binary logistic).
    pub fn from_name(name: &str, num_classes: usize) -> Result<Self> {
        match name {
            "multi_hinge" => LossKind::multi_hinge(num_classes),
            "multi_logistic" => LossKind::multi_logistic(num_classes),
            "binary_logistic" => Ok(LossKind::BinaryLogistic),
            other => Err(PolkError::Usage(format!("unknown loss '{other}'"))),
        }
    }

    pub fn check_label(&self, label: Label) -> Result<()> {
        let ok = match *self {
            LossKind::BinaryLogistic => label <= 1,
            _ => (1..=self.num_classes()).contains(&label),
        };
        if ok {
            Ok(())
        } else {
            Err(PolkError::Usage(format!(
                "label {label} outside the alphabet of {}",
                self
            )))
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::BinaryLogistic => write!(f, "binary_logistic"),
            _ => write!(f, "{} (C={})", self.name(), self.num_classes()),
        }
    }
}

fn check_multi(num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(PolkError::Usage(format!(
            "multi-class losses need C >= 2, got {num_classes}"
        )));
    }
    Ok(())
}

/// Loss value and gradient of the data term with respect to the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

pub fn loss_and_grad(kind: &LossKind, scores: &[f64], label: Label) -> Result<LossGrad> {
    kind.check_label(label)?;
    if scores.len() != kind.num_classes() {
        return Err(PolkError::Usage(format!(
            "{} scores for a loss with {} outputs",
            scores.len(),
            kind.num_classes()
        )));
    }
    Ok(match kind {
        LossKind::MultiHinge { .. } => multi_hinge(scores, label - 1),
        LossKind::MultiLogistic { .. } => multi_logistic(scores, label - 1),
        LossKind::BinaryLogistic => binary_logistic(scores[0], label),
    })
}

fn multi_hinge(scores: &[f64], y: usize) -> LossGrad {
    let mut r = usize::MAX;
    for (c, &s) in scores.iter().enumerate() {
        if c != y && (r == usize::MAX || s > scores[r]) {
            r = c;
        }
    }
    let margin = 1.0 + scores[r] - scores[y];
    let mut grad = vec![0.0; scores.len()];
    if margin > 0.0 {
        grad[r] = 1.0;
        grad[y] = -1.0;
        LossGrad { value: margin, grad }
    } else {
        LossGrad { value: 0.0, grad }
    }
}

fn multi_logistic(scores: &[f64], y: usize) -> LossGrad {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let value = max + total.ln() - scores[y];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(c, e)| e / total - if c == y { 1.0 } else { 0.0 })
        .collect();
    LossGrad { value, grad }
}

/// Standard logistic function, evaluated without overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn binary_logistic(f: f64, label: Label) -> LossGrad {
    let is_zero = if label == 0 { 1.0 } else { 0.0 };
    LossGrad {
        value: softplus(f) - f * is_zero,
        grad: vec![sigmoid(f) - is_zero],
    }
}

/// Mean loss over `data` plus `(lambda / 2) ||f||_H^2`.
pub fn regularized_risk(
    f: &KernelExpansion,
    data: &Dataset,
    kind: &LossKind,
    lambda: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(PolkError::Usage("risk of an empty dataset".into()));
    }
    if !(lambda >= 0.0) {
        return Err(PolkError::Usage(format!("lambda must be >= 0, got {lambda}")));
    }
    if data.dim() != f.dim() {
        return Err(PolkError::Usage(format!(
            "data has dimension {}, model expects {}",
            data.dim(),
            f.dim()
        )));
    }
    let mut total = 0.0;
    for (x, y) in data.iter() {
        total += loss_and_grad(kind, &f.evaluate(x), y)?.value;
    }
    let norm = hilbert_norm(f);
    Ok(total / data.len() as f64 + 0.5 * lambda * norm * norm)
}

/// Predicted label for precomputed scores.
pub fn predict_scores(kind: &LossKind, scores: &[f64]) -> Label {
    match kind {
        LossKind::BinaryLogistic => {
            if scores[0] > 0.0 {
                0
            } else {
                1
            }
        }
        _ => {
            let mut best = 0;
            for (c, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = c;
                }
            }
            best + 1
        }
    }
}

pub fn predict(f: &KernelExpansion, kind: &LossKind, x: &[f64]) -> Label {
    predict_scores(kind, &f.evaluate(x))
}

/// Percentage of misclassified samples.
pub fn error_rate(f: &KernelExpansion, kind: &LossKind, data: &Dataset) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let wrong = data
        .iter()
        .filter(|(x, y)| predict(f, kind, x) != *y)
        .count();
    100.0 * wrong as f64 / data.len() as f64
}

impl FromStr for LossKind {
    type Err = PolkError;

    /// Accepts `binary_logistic` or `<name>:<C>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None => LossKind::from_name(s, 1),
            Some((name, c)) => {
                let c = c
                    .parse()
                    .map_err(|_| PolkError::Usage(format!("bad class count in '{s}'")))?;
                LossKind::from_name(name, c)
            }
        }
    }
}
