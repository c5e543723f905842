//! The parsimonious online training loop.
//!
//! Each step takes a mini-batch, forms the unprojected functional SGD iterate
//! `f~ = (1 - eta lambda) f_t - (eta / L) sum_i l'_i k(x_i, .)` on the
//! dictionary `[D_t, x_1..x_L]`, and hands it to KOMP with budget `epsilon_t`.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::diagnostics::{StepRecord, TheoryProbe};
use crate::error::{PolkError, Result};
use crate::kernel::{gram, hilbert_norm, trace_form, KernelExpansion, KernelSpec};
use crate::komp::{komp_prune_with, PruneBudget, PruneReport, PruneStrategy};
use crate::loss::{error_rate, loss_and_grad, regularized_risk, Label, LossKind};
use crate::metrics::MetricsRecord;

/// Step size as a function of the step counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `eta_t = eta_0 / (t + 1)`
    Diminishing(f64),
}

impl StepSchedule {
    pub fn eta(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant(eta) => eta,
            StepSchedule::Diminishing(eta0) => eta0 / (t as f64 + 1.0),
        }
    }

    /// Largest step the schedule ever takes.
    pub fn max_eta(&self) -> f64 {
        match *self {
            StepSchedule::Constant(eta) | StepSchedule::Diminishing(eta) => eta,
        }
    }
}

pub fn schedule_eval(schedule: &StepSchedule, t: usize) -> f64 {
    schedule.eta(t)
}

/// How the pruning budget follows the step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetRule {
    /// `epsilon = K eta^{3/2}`, for constant steps.
    MatchedConstant(f64),
    /// `epsilon_t = eta_t^2`, for diminishing steps.
    MatchedDiminishing,
    Fixed(f64),
    /// No pruning at all: plain functional SGD.
    Dense,
}

pub fn budget_eval(rule: &BudgetRule, eta: f64) -> f64 {
    match *rule {
        BudgetRule::MatchedConstant(k) => k * eta.powf(1.5),
        BudgetRule::MatchedDiminishing => eta * eta,
        BudgetRule::Fixed(eps) => eps,
        BudgetRule::Dense => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kernel: KernelSpec,
    pub loss: LossKind,
    pub lambda: f64,
    pub schedule: StepSchedule,
    pub budget: BudgetRule,
    pub batch_size: usize,
    pub max_model_order: Option<usize>,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub passes: usize,
    /// Reshuffle the stream at the start of every pass.
    pub shuffle: bool,
    pub prune_strategy: PruneStrategy,
    /// Record wall-clock seconds in the metrics (breaks byte-reproducibility).
    pub timing: bool,
}

impl TrainConfig {
    pub fn new(kernel: KernelSpec, loss: LossKind) -> Self {
        TrainConfig {
            kernel,
            loss,
            lambda: 1e-6,
            schedule: StepSchedule::Constant(1.0),
            budget: BudgetRule::MatchedConstant(0.04),
            batch_size: 1,
            max_model_order: None,
            seed: 0,
            checkpoint_every: 10,
            passes: 1,
            shuffle: false,
            prune_strategy: PruneStrategy::default(),
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(PolkError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let eta = self.schedule.max_eta();
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(PolkError::Config(format!("step size must be positive, got {eta}")));
        }
        if self.lambda > 0.0 && eta * self.lambda >= 1.0 {
            return Err(PolkError::Config(format!(
                "step size eta={eta} violates eta < 1/lambda = {}",
                1.0 / self.lambda
            )));
        }
        match self.budget {
            BudgetRule::MatchedConstant(k) if !(k >= 0.0) => {
                return Err(PolkError::Config(format!("parsimony constant must be >= 0, got {k}")))
            }
            BudgetRule::Fixed(e) if !(e >= 0.0) => {
                return Err(PolkError::Config(format!("budget must be >= 0, got {e}")))
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(PolkError::Config("batch size must be >= 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(PolkError::Config("checkpoint interval must be >= 1".into()));
        }
        if self.passes == 0 {
            return Err(PolkError::Config("passes must be >= 1".into()));
        }
        Ok(())
    }
}

/// `(1 - eta lambda) f_t` with one appended atom per batch element, weighted
/// `-(eta / L) l'(f_t(x_i), y_i)`.
pub fn fsgd_candidate(
    f: &KernelExpansion,
    loss: &LossKind,
    batch: &[(&[f64], Label)],
    eta: f64,
    lambda: f64,
    cap: Option<usize>,
) -> Result<KernelExpansion> {
    if batch.is_empty() {
        return Err(PolkError::Usage("empty batch".into()));
    }
    if lambda > 0.0 && eta * lambda >= 1.0 {
        return Err(PolkError::Config(format!(
            "step size eta={eta} violates eta < 1/lambda = {}",
            1.0 / lambda
        )));
    }
    if loss.num_classes() != f.num_classes() {
        return Err(PolkError::Usage(format!(
            "loss has {} outputs, model has {}",
            loss.num_classes(),
            f.num_classes()
        )));
    }
    let m = f.order();
    let l = batch.len();
    if let Some(cap) = cap {
        if m + l > cap {
            return Err(PolkError::Capacity {
                step: None,
                order: m + l,
                cap,
            });
        }
    }
    let c = f.num_classes();
    let scale = -eta / l as f64;
    let mut weights = DMatrix::zeros(m + l, c);
    weights.rows_mut(0, m).copy_from(&(f.weights() * (1.0 - eta * lambda)));
    let mut dict = f.dict().clone();
    for (i, (x, y)) in batch.iter().enumerate() {
        let lg = loss_and_grad(loss, &f.evaluate(x), *y)?;
        for (col, g) in lg.grad.iter().enumerate() {
            weights[(m + i, col)] = scale * g;
        }
        dict.push(x)?;
    }
    KernelExpansion::new(*f.kernel(), dict, weights)
}

/// KOMP projection of the candidate; the dense rule skips pruning entirely.
pub fn project_step(
    candidate: &KernelExpansion,
    rule: &BudgetRule,
    epsilon: f64,
    strategy: PruneStrategy,
) -> Result<(KernelExpansion, PruneReport)> {
    if let BudgetRule::Dense = rule {
        return Ok((candidate.clone(), PruneReport::default()));
    }
    komp_prune_with(candidate, &PruneBudget::new(epsilon)?, strategy)
}

/// What one call to [`Trainer::step`] did.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub eta: f64,
    pub epsilon: f64,
    pub candidate_order: usize,
    pub prune: PruneReport,
    pub record: StepRecord,
}

/// Owns the current iterate `f_t` and steps it batch by batch.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    f: KernelExpansion,
    t: usize,
    samples_seen: usize,
    probe: TheoryProbe,
    norm_sq: f64,
}

impl Trainer {
    /// Start from `f_0 = 0` on `dim`-dimensional features.
    pub fn new(config: TrainConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let f = KernelExpansion::zero(config.kernel, dim, config.loss.num_classes());
        let probe = TheoryProbe::new(config.kernel, config.loss.lipschitz(), config.lambda);
        Ok(Trainer {
            config,
            f,
            t: 0,
            samples_seen: 0,
            probe,
            norm_sq: 0.0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &KernelExpansion {
        &self.f
    }

    pub fn into_model(self) -> KernelExpansion {
        self.f
    }

    /// Steps taken so far.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    pub fn probe(&self) -> &TheoryProbe {
        &self.probe
    }

    pub fn step(&mut self, batch: &[(&[f64], Label)]) -> Result<StepOutcome> {
        let cfg = &self.config;
        let eta = cfg.schedule.eta(self.t);
        let epsilon = budget_eval(&cfg.budget, eta);
        let dense = matches!(cfg.budget, BudgetRule::Dense);
        let cand_cap = if dense { cfg.max_model_order } else { None };

        let candidate = fsgd_candidate(&self.f, &cfg.loss, batch, eta, cfg.lambda, cand_cap)
            .map_err(|e| with_step(e, self.t))?;
        let (next, prune) = project_step(&candidate, &cfg.budget, epsilon, cfg.prune_strategy)?;
        if let Some(cap) = cfg.max_model_order {
            if next.order() > cap {
                return Err(PolkError::Capacity {
                    step: Some(self.t),
                    order: next.order(),
                    cap,
                });
            }
        }

        for (x, _) in batch {
            self.probe.observe(x);
        }
        let bias = if dense { 0.0 } else { prune.final_error / eta };
        let (step_sq, candidate_sq) = self.step_norms(&candidate, eta);
        self.norm_sq = if prune.removed_indices.is_empty() {
            candidate_sq
        } else {
            hilbert_norm(&next).powi(2)
        };
        let record = StepRecord {
            t: self.t,
            eta,
            epsilon,
            bias,
            iterate_norm: self.norm_sq.sqrt(),
            grad_norm_sq: step_sq / (eta * eta),
        };
        self.probe.push(record);

        self.f = next;
        self.t += 1;
        self.samples_seen += batch.len();
        Ok(StepOutcome {
            eta,
            epsilon,
            candidate_order: candidate.order(),
            prune,
            record,
        })
    }
}

impl Trainer {
    /// `||candidate - f_t||^2` and `||candidate||^2`, expanded around the
    /// cached `||f_t||^2` so that no Gram matrix over the full dictionary is
    /// formed. The candidate is `(1 - eta lambda) f_t + sum_b A_b k(x_b, .)`.
    fn step_norms(&self, candidate: &KernelExpansion, eta: f64) -> (f64, f64) {
        let m = self.f.order();
        let l = candidate.order() - m;
        let shrink = eta * self.config.lambda;
        let appended = candidate.weights().rows(m, l).clone_owned();
        let batch = candidate.dict().select(&(m..m + l).collect::<Vec<_>>());
        let kb = gram(candidate.kernel(), &batch, &batch);
        let mut cross = 0.0;
        for (b, x) in batch.atoms().enumerate() {
            let fx = self.f.evaluate(x);
            cross += fx.iter().zip(appended.row(b).iter()).map(|(u, v)| u * v).sum::<f64>();
        }
        let tail = trace_form(&appended, &kb, &appended);
        let step = shrink * shrink * self.norm_sq - 2.0 * shrink * cross + tail;
        let whole = (1.0 - shrink).powi(2) * self.norm_sq + 2.0 * (1.0 - shrink) * cross + tail;
        (step.max(0.0), whole.max(0.0))
    }
}

fn with_step(e: PolkError, t: usize) -> PolkError {
    match e {
        PolkError::Capacity { order, cap, .. } => PolkError::Capacity {
            step: Some(t),
            order,
            cap,
        },
        other => other,
    }
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: KernelExpansion,
    pub metrics: Vec<MetricsRecord>,
    pub probe: TheoryProbe,
}

impl TrainOutput {
    pub fn final_metrics(&self) -> Option<&MetricsRecord> {
        self.metrics.last()
    }
}

/// Sample order for every pass: file order, or a per-pass shuffle driven by the seed.
pub fn stream_order(n: usize, passes: usize, shuffle: bool, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..passes)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n).collect();
            if shuffle {
                idx.shuffle(&mut rng);
            }
            idx
        })
        .collect()
}

/// Run the training loop over `stream` and emit checkpoint metrics.
pub fn train(config: &TrainConfig, stream: &Dataset, eval: Option<&Dataset>) -> Result<TrainOutput> {
    train_observed(config, stream, eval, |_, _| Ok(()))
}

/// [`train`] with a callback after every step (used to trace iterates).
pub fn train_observed<F>(
    config: &TrainConfig,
    stream: &Dataset,
    eval: Option<&Dataset>,
    mut observe: F,
) -> Result<TrainOutput>
where
    F: FnMut(&Trainer, &StepOutcome) -> Result<()>,
{
    if stream.is_empty() {
        return Err(PolkError::Usage("training stream is empty".into()));
    }
    for (_, y) in stream.iter() {
        config.loss.check_label(y)?;
    }
    if let Some(ev) = eval {
        if ev.dim() != stream.dim() {
            return Err(PolkError::Usage(format!(
                "evaluation data has dimension {}, training data {}",
                ev.dim(),
                stream.dim()
            )));
        }
        for (_, y) in ev.iter() {
            config.loss.check_label(y)?;
        }
    }

    let started = Instant::now();
    let mut trainer = Trainer::new(config.clone(), stream.dim())?;
    let total = stream.len() * config.passes;
    let window_start = 0.95 * total as f64;
    let mut metrics = Vec::new();
    let (mut tr_risk, mut tr_err, mut tr_order, mut tr_n) = (0.0, 0.0, 0.0, 0usize);

    let order = stream_order(stream.len(), config.passes, config.shuffle, config.seed);
    let steps_per_pass = stream.len().div_ceil(config.batch_size);
    let total_steps = steps_per_pass * config.passes;

    for pass in &order {
        for chunk in pass.chunks(config.batch_size) {
            let batch: Vec<(&[f64], Label)> = chunk.iter().map(|&i| (stream.x(i), stream.y(i))).collect();
            let outcome = trainer.step(&batch)?;
            observe(&trainer, &outcome)?;

            let t = trainer.t();
            if t % config.checkpoint_every != 0 && t != total_steps {
                continue;
            }
            let f = trainer.model();
            let (risk, err) = match eval {
                Some(ev) => (
                    regularized_risk(f, ev, &config.loss, config.lambda)?,
                    error_rate(f, &config.loss, ev),
                ),
                None => (f64::NAN, f64::NAN),
            };
            let seen = trainer.samples_seen();
            if seen as f64 >= window_start {
                tr_risk += risk;
                tr_err += err;
                tr_order += f.order() as f64;
                tr_n += 1;
            }
            let trailing = |s: f64| if tr_n > 0 { s / tr_n as f64 } else { f64::NAN };
            metrics.push(MetricsRecord {
                t,
                samples_seen: seen,
                eta: outcome.eta,
                epsilon: outcome.epsilon,
                model_order: f.order(),
                empirical_risk: risk,
                test_error_pct: err,
                bias: outcome.record.bias,
                bias_bound: outcome.epsilon / outcome.eta,
                iterate_norm: outcome.record.iterate_norm,
                norm_bound: trainer.probe().norm_bound(),
                trailing_risk: trailing(tr_risk),
                trailing_error_pct: trailing(tr_err),
                trailing_model_order: trailing(tr_order),
                elapsed_s: config.timing.then(|| started.elapsed().as_secs_f64()),
            });
        }
    }

    let probe = trainer.probe().clone();
    Ok(TrainOutput {
        model: trainer.into_model(),
        metrics,
        probe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gauss() -> KernelSpec {
        KernelSpec::gaussian(0.5).unwrap()
    }

    #[test]
    fn schedules_and_budgets() {
        let c = StepSchedule::Constant(6.0);
        assert_eq!(schedule_eval(&c, 0), 6.0);
        assert_eq!(schedule_eval(&c, 1000), 6.0);
        assert_eq!(schedule_eval(&StepSchedule::Diminishing(1.0), 3), 0.25);
        let eps = budget_eval(&BudgetRule::MatchedConstant(0.04), 6.0);
        assert_relative_eq!(eps, 0.04 * 6.0f64 * 6.0f64.sqrt(), epsilon = 1e-15);
        assert!((eps - 0.5879).abs() < 1e-4);
        assert_eq!(budget_eval(&BudgetRule::MatchedDiminishing, 0.1), 0.1 * 0.1);
        assert_eq!(budget_eval(&BudgetRule::Fixed(0.3), 9.0), 0.3);
        assert_eq!(budget_eval(&BudgetRule::Dense, 9.0), 0.0);
    }

    #[test]
    fn cached_norms_match_direct_computation() {
        let data = [[0.1, 0.2], [-0.4, 0.3], [0.9, -0.5], [0.2, 0.2], [-0.7, -0.1], [0.5, 0.8]];
        let mut cfg = TrainConfig::new(gauss(), LossKind::multi_logistic(3).unwrap());
        cfg.lambda = 0.05;
        cfg.schedule = StepSchedule::Constant(0.5);
        cfg.budget = BudgetRule::Fixed(0.02);
        let mut tr = Trainer::new(cfg, 2).unwrap();
        for (i, chunk) in data.chunks(2).cycle().take(6).enumerate() {
            let batch: Vec<(&[f64], Label)> = chunk.iter().map(|x| (&x[..], i % 3 + 1)).collect();
            let before = tr.model().clone();
            let candidate = fsgd_candidate(&before, &tr.config().loss, &batch, 0.5, 0.05, None).unwrap();
            let out = tr.step(&batch).unwrap();
            let step = crate::kernel::expansion_distance(&before, &candidate).unwrap() / 0.5;
            assert_relative_eq!(out.record.grad_norm_sq, step * step, epsilon = 1e-10, max_relative = 1e-9);
            assert_relative_eq!(out.record.iterate_norm, hilbert_norm(tr.model()), epsilon = 1e-10, max_relative = 1e-9);
        }
    }

    #[test]
    fn first_binary_candidate() {
        let f = KernelExpansion::zero(gauss(), 2, 1);
        let x = [0.3, -0.2];
        let cand = fsgd_candidate(&f, &LossKind::BinaryLogistic, &[(&x, 1)], 0.1, 0.0, None).unwrap();
        assert_eq!(cand.order(), 1);
        assert_relative_eq!(cand.weights()[(0, 0)], -0.05, epsilon = 1e-15);
        assert_eq!(cand.dict().atom(0), &x);
    }

    #[test]
    fn satisfied_margins_only_shrink() {
        let loss = LossKind::multi_hinge(2).unwrap();
        let x = [0.0, 0.0];
        let f = KernelExpansion::new(
            gauss(),
            crate::kernel::Dictionary::from_atoms(2, &[x]).unwrap(),
            DMatrix::from_row_slice(1, 2, &[3.0, -3.0]),
        )
        .unwrap();
        let cand = fsgd_candidate(&f, &loss, &[(&x, 1)], 0.5, 0.2, None).unwrap();
        assert_relative_eq!(cand.weights()[(0, 0)], 3.0 * 0.9);
        assert_eq!(cand.weights()[(1, 0)], 0.0);
        assert_eq!(cand.weights()[(1, 1)], 0.0);
    }

    #[test]
    fn duplicated_batch_halves_rows() {
        let f = KernelExpansion::zero(gauss(), 2, 1);
        let x = [0.4, 0.4];
        let one = fsgd_candidate(&f, &LossKind::BinaryLogistic, &[(&x, 0)], 0.2, 0.0, None).unwrap();
        let two =
            fsgd_candidate(&f, &LossKind::BinaryLogistic, &[(&x, 0), (&x, 0)], 0.2, 0.0, None).unwrap();
        assert_eq!(two.weights()[(0, 0)], two.weights()[(1, 0)]);
        assert_relative_eq!(two.weights()[(0, 0)], 0.5 * one.weights()[(0, 0)]);
    }

    #[test]
    fn candidate_cap_and_step_size_guard() {
        let f = KernelExpansion::zero(gauss(), 2, 1);
        let x = [0.0, 0.0];
        let batch = [(&x[..], 1), (&x[..], 1)];
        assert!(matches!(
            fsgd_candidate(&f, &LossKind::BinaryLogistic, &batch, 0.1, 0.0, Some(1)),
            Err(PolkError::Capacity { .. })
        ));
        assert!(matches!(
            fsgd_candidate(&f, &LossKind::BinaryLogistic, &batch, 2.0, 0.5, None),
            Err(PolkError::Config(_))
        ));
        assert!(fsgd_candidate(&f, &LossKind::BinaryLogistic, &[], 0.1, 0.0, None).is_err());
    }

    #[test]
    fn config_rejects_large_steps() {
        let mut cfg = TrainConfig::new(gauss(), LossKind::BinaryLogistic);
        cfg.lambda = 0.5;
        cfg.schedule = StepSchedule::Constant(2.0);
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, PolkError::Config(_)));
        assert!(err.to_string().contains("1/lambda"));
        cfg.lambda = 0.0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn projection_examples() {
        let f = KernelExpansion::zero(gauss(), 2, 1);
        let x = [0.1, 0.2];
        let cand = fsgd_candidate(&f, &LossKind::BinaryLogistic, &[(&x, 1)], 1.0, 0.0, None).unwrap();
        let (dense, _) = project_step(&cand, &BudgetRule::Dense, 0.0, PruneStrategy::Exact).unwrap();
        assert_eq!(dense, cand);
        let (zero, rep) = project_step(&cand, &BudgetRule::Fixed(10.0), 10.0, PruneStrategy::Downdate).unwrap();
        assert_eq!(zero.order(), 0);
        assert_relative_eq!(rep.final_error, 0.5);

        // newest atom duplicates an existing one: merged, order unchanged
        let cand2 = fsgd_candidate(&cand, &LossKind::BinaryLogistic, &[(&x, 1)], 1.0, 0.0, None).unwrap();
        let (merged, _) = project_step(&cand2, &BudgetRule::Fixed(0.0), 0.0, PruneStrategy::Downdate).unwrap();
        assert_eq!(merged.order(), 1);
    }

    #[test]
    fn zero_rows_pruned_at_zero_cost() {
        // f_0 = 0 plus two appended atoms whose gradient rows are zero
        let cand = KernelExpansion::new(
            gauss(),
            crate::kernel::Dictionary::from_atoms(2, &[[0.0, 0.0], [1.0, 1.0]]).unwrap(),
            DMatrix::zeros(2, 3),
        )
        .unwrap();
        let (f1, rep) =
            project_step(&cand, &BudgetRule::Fixed(0.0), 0.0, PruneStrategy::Downdate).unwrap();
        assert_eq!(f1.order(), 0);
        assert_eq!(rep.final_error, 0.0);
    }
}
