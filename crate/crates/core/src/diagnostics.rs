//! Checkable consequences of the convergence theory, evaluated on live runs.
//!
//! Every training step records the projection bias `||f~ - f||_H / eta`, the
//! iterate norm and the squared norm of the stochastic regularized gradient.
//! The checks below compare these against their theoretical bounds.

use crate::kernel::KernelSpec;

/// One training step as seen by the probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub eta: f64,
    pub epsilon: f64,
    /// `||f~_{t+1} - f_{t+1}||_H / eta_t`
    pub bias: f64,
    /// `||f_{t+1}||_H`
    pub iterate_norm: f64,
    /// `||(f_t - f~_{t+1}) / eta_t||_H^2`
    pub grad_norm_sq: f64,
}

/// Bound constants plus the per-step records of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryProbe {
    /// Lipschitz constant of the loss in the joint output norm.
    pub lipschitz_c: f64,
    /// `sup_x sqrt(k(x, x))`, a running max over the observed stream.
    pub kernel_bound_x: f64,
    pub lambda: f64,
    kernel: KernelSpec,
    records: Vec<StepRecord>,
}

impl TheoryProbe {
    pub fn new(kernel: KernelSpec, lipschitz_c: f64, lambda: f64) -> Self {
        let kernel_bound_x = match kernel {
            KernelSpec::Gaussian { .. } => 1.0,
            KernelSpec::Polynomial { .. } => 0.0,
        };
        TheoryProbe {
            lipschitz_c,
            kernel_bound_x,
            lambda,
            kernel,
            records: Vec::new(),
        }
    }

    /// Update the kernel bound with a point from the stream.
    pub fn observe(&mut self, x: &[f64]) {
        if let KernelSpec::Polynomial { .. } = self.kernel {
            self.kernel_bound_x = self.kernel_bound_x.max(self.kernel.section_norm(x));
        }
    }

    pub fn push(&mut self, record: StepRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.t < record.t));
        self.records.push(record);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// `C X / lambda`, infinite when `lambda = 0`.
    pub fn norm_bound(&self) -> f64 {
        if self.lambda > 0.0 {
            self.lipschitz_c * self.kernel_bound_x / self.lambda
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Check {
    /// Bound minus observed value, nonnegative.
    Pass { slack: f64 },
    Fail { slack: f64 },
    NotApplicable,
}

impl Check {
    pub fn failed(&self) -> bool {
        matches!(self, Check::Fail { .. })
    }
}

/// Projection bias against `epsilon / eta`.
pub fn bias_check(record: &StepRecord) -> Check {
    if !(record.eta > 0.0) {
        return Check::NotApplicable;
    }
    let bound = record.epsilon / record.eta;
    let slack = bound - record.bias;
    if record.bias <= bound + 1e-8 * (1.0 + bound) {
        Check::Pass { slack }
    } else {
        Check::Fail { slack }
    }
}

/// Iterate norm against `C X / lambda`.
pub fn norm_bound_check(record: &StepRecord, probe: &TheoryProbe) -> Check {
    if !(probe.lambda > 0.0) {
        return Check::NotApplicable;
    }
    let bound = probe.norm_bound();
    let slack = bound - record.iterate_norm;
    if record.iterate_norm <= bound * (1.0 + 1e-8) {
        Check::Pass { slack }
    } else {
        Check::Fail { slack }
    }
}

/// Mean of the squared stochastic-gradient norms; `None` with fewer than 2 records.
pub fn variance_estimate(records: &[StepRecord]) -> Option<f64> {
    if records.len() < 2 {
        return None;
    }
    Some(records.iter().map(|r| r.grad_norm_sq).sum::<f64>() / records.len() as f64)
}

/// `(sqrt(eta) / lambda) (K + sqrt(K^2 + lambda sigma^2))`.
pub fn neighborhood_radius(eta: f64, lambda: f64, parsimony_k: f64, sigma_sq: f64) -> f64 {
    (eta.sqrt() / lambda) * (parsimony_k + (parsimony_k * parsimony_k + lambda * sigma_sq).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborhoodReport {
    pub radius: f64,
    pub sigma_sq: f64,
    /// Smallest `||f_t - f_ref||_H` over the trailing 5% of steps, if distances were given.
    pub trailing_min_distance: Option<f64>,
}

/// Radius of the neighborhood a constant-step run should settle into, with the
/// observed proxy `min ||f_t - f_ref||` over the trailing window.
///
/// `distances[i]` pairs with `records[i]`; pass an empty slice to skip.
pub fn neighborhood_report(
    records: &[StepRecord],
    probe: &TheoryProbe,
    parsimony_k: f64,
    distances: &[f64],
) -> NeighborhoodReport {
    let sigma_sq = variance_estimate(records).unwrap_or(0.0);
    let eta = records.last().map_or(0.0, |r| r.eta);
    let radius = neighborhood_radius(eta, probe.lambda, parsimony_k, sigma_sq);
    let trailing_min_distance = (!distances.is_empty()).then(|| {
        let n = distances.len();
        let start = n - (n / 20).max(1);
        distances[start..].iter().copied().fold(f64::INFINITY, f64::min)
    });
    NeighborhoodReport {
        radius,
        sigma_sq,
        trailing_min_distance,
    }
}

/// Counts of failed checks over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DiagnosticSummary {
    pub steps: usize,
    pub bias_failures: usize,
    pub norm_failures: usize,
    pub norm_checks_applicable: bool,
}

impl DiagnosticSummary {
    pub fn passed(&self) -> bool {
        self.bias_failures == 0 && self.norm_failures == 0
    }
}

pub fn summarize(probe: &TheoryProbe) -> DiagnosticSummary {
    let mut s = DiagnosticSummary {
        steps: probe.records().len(),
        norm_checks_applicable: probe.lambda > 0.0,
        ..Default::default()
    };
    for r in probe.records() {
        if bias_check(r).failed() {
            s.bias_failures += 1;
        }
        if norm_bound_check(r, probe).failed() {
            s.norm_failures += 1;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn record(bias: f64, eta: f64, epsilon: f64, norm: f64) -> StepRecord {
        StepRecord {
            t: 0,
            eta,
            epsilon,
            bias,
            iterate_norm: norm,
            grad_norm_sq: 0.0,
        }
    }

    fn probe(lambda: f64) -> TheoryProbe {
        TheoryProbe::new(KernelSpec::gaussian(1.0).unwrap(), 1.0, lambda)
    }

    #[test]
    fn bias_check_cases() {
        assert!(matches!(bias_check(&record(0.0, 0.5, 0.0, 0.0)), Check::Pass { .. }));
        assert!(bias_check(&record(2.0, 1.0, 1.0, 0.0)).failed());
        assert_eq!(bias_check(&record(0.0, 0.0, 0.0, 0.0)), Check::NotApplicable);
    }

    #[test]
    fn norm_check_cases() {
        let p = probe(1.0);
        assert!(matches!(norm_bound_check(&record(0.0, 0.5, 0.0, 0.0), &p), Check::Pass { .. }));
        assert!(norm_bound_check(&record(0.0, 0.5, 0.0, 1.5), &p).failed());
        assert_eq!(
            norm_bound_check(&record(0.0, 0.5, 0.0, 1e9), &probe(0.0)),
            Check::NotApplicable
        );
    }

    #[test]
    fn radius_examples() {
        assert_relative_eq!(neighborhood_radius(0.01, 1.0, 0.0, 1.0), 0.1, epsilon = 1e-15);
        assert_eq!(neighborhood_radius(0.01, 1.0, 0.0, 0.0), 0.0);
        let r1 = neighborhood_radius(0.02, 0.3, 0.0, 2.0);
        let r2 = neighborhood_radius(0.04, 0.3, 0.0, 2.0);
        assert_relative_eq!(r2 / r1, 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn variance_is_order_free_mean() {
        let mut rs: Vec<StepRecord> = [0.5, 2.0, 1.0]
            .iter()
            .map(|&g| StepRecord {
                grad_norm_sq: g,
                ..record(0.0, 1.0, 0.0, 0.0)
            })
            .collect();
        let a = variance_estimate(&rs).unwrap();
        rs.reverse();
        assert_eq!(a, variance_estimate(&rs).unwrap());
        assert_relative_eq!(a, 3.5 / 3.0);
        assert!(variance_estimate(&rs[..1]).is_none());
        let zeros = vec![record(0.0, 1.0, 0.0, 0.0); 4];
        assert_eq!(variance_estimate(&zeros), Some(0.0));
    }

    #[test]
    fn polynomial_bound_tracks_stream() {
        let mut p = TheoryProbe::new(KernelSpec::polynomial(1.0, 2).unwrap(), 1.0, 0.5);
        p.observe(&[1.0, 0.0]);
        assert_relative_eq!(p.kernel_bound_x, 2.0);
        p.observe(&[0.0, 0.0]);
        assert_relative_eq!(p.kernel_bound_x, 2.0);
        assert_relative_eq!(p.norm_bound(), 4.0);
    }

    #[test]
    fn summary_counts_failures() {
        let mut p = probe(1.0);
        p.push(record(0.0, 0.5, 0.1, 0.5));
        p.push(StepRecord { t: 1, ..record(1.0, 0.5, 0.1, 2.0) });
        let s = summarize(&p);
        assert_eq!((s.steps, s.bias_failures, s.norm_failures), (2, 1, 1));
        assert!(!s.passed());
    }
}
