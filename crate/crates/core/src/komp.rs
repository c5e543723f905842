//! Destructive kernel orthogonal matching pursuit with pre-fitting.
//!
//! Starting from a candidate function `f~`, atoms are removed one at a time.
//! Each pass computes, for every remaining atom `j`, the Hilbert-norm error
//! `gamma_j` of the best approximation of `f~` on the dictionary without `j`.
//! The cheapest atom is dropped and the remaining weights are re-fit against
//! the original `f~`, until the cheapest removal would exceed the budget.

use nalgebra::DMatrix;

use crate::error::{PolkError, Result};
use crate::kernel::{
    gram, kernel_vector, trace_form, Dictionary, GramBundle, KernelExpansion,
    KernelSpec,
};
use crate::linalg::PsdFactor;

/// Approximation budget for one pruning call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneBudget {
    pub epsilon: f64,
    /// Reject inputs whose model order exceeds this cap.
    pub max_model_order: Option<usize>,
}

impl PruneBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(PolkError::Usage(format!("budget must be >= 0, got {epsilon}")));
        }
        Ok(PruneBudget {
            epsilon,
            max_model_order: None,
        })
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.max_model_order = Some(cap);
        self
    }
}

/// What a pruning call removed and how far the result is from its input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PruneReport {
    /// Indices into the input dictionary, in removal order.
    pub removed_indices: Vec<usize>,
    /// `||f - f~||_H` of the returned function.
    pub final_error: f64,
    pub passes: usize,
}

/// How removal errors are computed each pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PruneStrategy {
    /// Re-fit and measure every leave-one-out dictionary from scratch.
    Exact,
    /// One inverse per pass; leave-one-out solutions by rank-one downdate.
    #[default]
    Downdate,
}

/// Weights on `fit_dict` that best approximate `target` in Hilbert norm,
/// i.e. the solution of `K_DD W = K_{D,D~} W~`.
pub fn refit_weights(
    kernel: &KernelSpec,
    target: &KernelExpansion,
    fit_dict: &Dictionary,
) -> Result<DMatrix<f64>> {
    if kernel != target.kernel() {
        return Err(PolkError::Usage("refit kernel differs from target kernel".into()));
    }
    if fit_dict.dim() != target.dim() {
        return Err(PolkError::Usage(format!(
            "fit dictionary has dimension {}, target has {}",
            fit_dict.dim(),
            target.dim()
        )));
    }
    let c = target.num_classes();
    if fit_dict.is_empty() {
        return Ok(DMatrix::zeros(0, c));
    }
    let mut bundle = GramBundle::new(kernel, fit_dict).with_cross(kernel, fit_dict, target.dict());
    let rhs = bundle.k_de.as_ref().expect("cross gram present") * target.weights();
    Ok(bundle.solve(&rhs))
}

/// `gamma_j`: error of the best approximation of `f~` once atom `j` is removed.
pub fn removal_error(target: &KernelExpansion, j: usize) -> Result<f64> {
    if j >= target.order() {
        return Err(PolkError::Usage(format!(
            "atom index {j} out of range for model order {}",
            target.order()
        )));
    }
    let keep: Vec<usize> = (0..target.order()).filter(|&i| i != j).collect();
    reduced_fit_error(target, &keep)
}

fn reduced_fit_error(target: &KernelExpansion, keep: &[usize]) -> Result<f64> {
    let dict = target.dict().select(keep);
    let w = refit_weights(target.kernel(), target, &dict)?;
    let k = gram(target.kernel(), target.dict(), target.dict());
    Ok(residual_norm(target.weights(), keep, &w, &k))
}

/// `||f~ - f||_H` for a fit `f` on a subset `keep` of the atoms of `f~`.
///
/// The residual is one coefficient matrix on the dictionary of `f~`, so its
/// quadratic form involves no cancellation between `||f~||^2` and the fit.
fn residual_norm(target_w: &DMatrix<f64>, keep: &[usize], w: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    let mut r = target_w.clone();
    for (i, &n) in keep.iter().enumerate() {
        let fitted = w.row(i).clone_owned();
        let mut row = r.row_mut(n);
        row -= fitted;
    }
    trace_form(&r, k, &r).max(0.0).sqrt()
}

/// Hilbert distance from `k(x, .)` to `span{k(d, .) : d in D}`.
pub fn subspace_distance(kernel: &KernelSpec, dict: &Dictionary, x: &[f64]) -> Result<f64> {
    let kxx = kernel.eval(x, x);
    if dict.is_empty() {
        return Ok(kxx.max(0.0).sqrt());
    }
    let kv = kernel_vector(kernel, dict, x)?;
    let kv = DMatrix::from_column_slice(kv.len(), 1, kv.as_slice());
    let mut bundle = GramBundle::new(kernel, dict);
    let u = bundle.solve(&kv);
    // ||k(x,.) - u^T k_D(.)||^2 as the quadratic form of the coefficients
    // [1; -u] on [x; D]: neither the jitter nor a k(x,x) - k^T u cancellation
    // leaks into the distance.
    let m = dict.len();
    let mut k = DMatrix::zeros(m + 1, m + 1);
    k[(0, 0)] = kxx;
    k.view_mut((0, 1), (1, m)).copy_from(&kv.transpose());
    k.view_mut((1, 0), (m, 1)).copy_from(&kv);
    k.view_mut((1, 1), (m, m)).copy_from(&bundle.k_dd);
    let mut r = DMatrix::zeros(m + 1, 1);
    r[(0, 0)] = 1.0;
    r.view_mut((1, 0), (m, 1)).copy_from(&(-u));
    Ok(trace_form(&r, &k, &r).max(0.0).sqrt())
}

/// Prune with the default strategy.
pub fn komp_prune(
    target: &KernelExpansion,
    budget: &PruneBudget,
) -> Result<(KernelExpansion, PruneReport)> {
    komp_prune_with(target, budget, PruneStrategy::default())
}

/// Cached quantities of the original candidate `f~`.
struct Target<'a> {
    f: &'a KernelExpansion,
    /// `K_{D~ D~}`
    k: DMatrix<f64>,
    /// `K_{D~ D~} W~`; rows of this are the right-hand sides of every sub-fit.
    kw: DMatrix<f64>,
    norm_sq: f64,
}

impl<'a> Target<'a> {
    fn new(f: &'a KernelExpansion) -> Self {
        let k = gram(f.kernel(), f.dict(), f.dict());
        let kw = &k * f.weights();
        let norm_sq = f.weights().iter().zip(kw.iter()).map(|(a, b)| a * b).sum::<f64>().max(0.0);
        Target { f, k, kw, norm_sq }
    }

    fn sub_gram(&self, keep: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.k[(keep[i], keep[j])])
    }

    fn sub_rhs(&self, keep: &[usize]) -> DMatrix<f64> {
        self.kw.select_rows(keep)
    }

    /// Re-fit on `keep` and return the weights with the true quadratic-form error.
    fn fit(&self, keep: &[usize]) -> (DMatrix<f64>, f64) {
        let c = self.f.num_classes();
        if keep.is_empty() {
            return (DMatrix::zeros(0, c), self.norm_sq.sqrt());
        }
        let kss = self.sub_gram(keep);
        let rhs = self.sub_rhs(keep);
        let w = PsdFactor::new(&kss).solve(&rhs);
        let err = residual_norm(self.f.weights(), keep, &w, &self.k);
        (w, err)
    }

    fn subset_errors(&self, active: &[usize]) -> Vec<f64> {
        (0..active.len())
            .map(|pos| {
                let keep: Vec<usize> = without(active, pos);
                self.fit(&keep).1
            })
            .collect()
    }

    fn exact_errors(&self, active: &[usize]) -> Result<Vec<f64>> {
        (0..active.len())
            .map(|pos| reduced_fit_error(self.f, &without(active, pos)))
            .collect()
    }
}

fn without(active: &[usize], pos: usize) -> Vec<usize> {
    active
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pos)
        .map(|(_, &v)| v)
        .collect()
}

/// First index of the minimum; NaN never wins.
fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            None if !v.is_nan() => best = Some(i),
            Some(b) if v < values[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Prune `target` until the cheapest removal would exceed `budget.epsilon`.
///
/// The returned function satisfies `||f - f~||_H <= epsilon` up to a
/// round-off allowance of `1e-9 * (1 + ||f~||_H)`.
pub fn komp_prune_with(
    target: &KernelExpansion,
    budget: &PruneBudget,
    strategy: PruneStrategy,
) -> Result<(KernelExpansion, PruneReport)> {
    if !(budget.epsilon >= 0.0) {
        return Err(PolkError::Usage(format!("budget must be >= 0, got {}", budget.epsilon)));
    }
    if let Some(cap) = budget.max_model_order {
        if target.order() > cap {
            return Err(PolkError::Capacity {
                step: None,
                order: target.order(),
                cap,
            });
        }
    }

    let (folded, survivors, merged) = fold_duplicates(target)?;
    let cache = Target::new(&folded);
    let threshold = budget.epsilon + 1e-9 * (1.0 + cache.norm_sq.sqrt());
    let fast = match strategy {
        PruneStrategy::Downdate => cache.downdate_prune(threshold),
        PruneStrategy::Exact => None,
    };
    let (active, weights, mut report) = match fast {
        Some(done) => done,
        None => cache.careful_prune(threshold, strategy)?,
    };
    let result = match weights {
        None if merged.is_empty() => target.clone(),
        None => folded.clone(),
        Some(w) => KernelExpansion::new(*target.kernel(), folded.dict().select(&active), w)?,
    };
    report.removed_indices = merged
        .into_iter()
        .chain(report.removed_indices.iter().map(|&i| survivors[i]))
        .collect();
    Ok((result, report))
}

/// Drop repeated atoms, folding each copy's weights into the last copy.
///
/// Removing a copy costs exactly zero, so greedy selection with ties broken
/// by smallest index takes every non-last copy first, in ascending order.
/// Doing that up front keeps singular Gram matrices away from the solvers.
/// Returns the folded expansion, the original index of each kept atom, and
/// the removed indices in removal order.
fn fold_duplicates(target: &KernelExpansion) -> Result<(KernelExpansion, Vec<usize>, Vec<usize>)> {
    let dict = target.dict();
    let m = dict.len();
    let mut last: Vec<usize> = (0..m).collect();
    for i in 0..m {
        for j in (i + 1..m).rev() {
            if dict.atom(i) == dict.atom(j) {
                last[i] = j;
                break;
            }
        }
    }
    if last.iter().enumerate().all(|(i, &l)| i == l) {
        return Ok((target.clone(), (0..m).collect(), Vec::new()));
    }
    let survivors: Vec<usize> = (0..m).filter(|&i| last[i] == i).collect();
    let merged: Vec<usize> = (0..m).filter(|&i| last[i] != i).collect();
    let slot = |i: usize| survivors.binary_search(&last[i]).expect("last copy survives");
    let mut w = DMatrix::zeros(survivors.len(), target.num_classes());
    for i in 0..m {
        let mut row = w.row_mut(slot(i));
        row += target.weights().row(i);
    }
    let folded = KernelExpansion::new(*target.kernel(), dict.select(&survivors), w)?;
    Ok((folded, survivors, merged))
}

type Pruned = (Vec<usize>, Option<DMatrix<f64>>, PruneReport);

/// Inverse Gram matrix of the active set with `a = G b`, kept in sync by
/// downdates, plus the squared residual `||f~ - f_S||^2` of the current fit.
///
/// The residual is carried forward as a running sum of removal costs rather
/// than recomputed as `||f~||^2 - b^T a`, which cancels badly when the Gram
/// matrix is ill-conditioned.
struct Downdate {
    g: DMatrix<f64>,
    a: DMatrix<f64>,
    residual_sq: f64,
}

impl Downdate {
    fn new(target: &Target<'_>, active: &[usize], residual_sq: f64) -> Option<Self> {
        let g = regularized_inverse(&target.sub_gram(active))?;
        let a = &g * target.sub_rhs(active);
        Some(Downdate { g, a, residual_sq })
    }

    fn cost(&self, j: usize) -> f64 {
        self.a.row(j).norm_squared() / self.g[(j, j)]
    }

    fn errors(&self, norm_sq: f64) -> Vec<f64> {
        let m = self.g.nrows();
        if m == 1 {
            return vec![norm_sq.sqrt()];
        }
        (0..m).map(|j| (self.residual_sq + self.cost(j)).sqrt()).collect()
    }

    fn remove(&mut self, j: usize) {
        self.residual_sq += self.cost(j);
        let gjj = self.g[(j, j)];
        let gj = self.g.column(j).clone_owned().remove_row(j);
        let aj = self.a.row(j).clone_owned();
        let g = std::mem::replace(&mut self.g, DMatrix::zeros(0, 0));
        self.g = g.remove_row(j).remove_column(j) - &gj * gj.transpose() / gjj;
        let a = std::mem::replace(&mut self.a, DMatrix::zeros(0, 0));
        self.a = a.remove_row(j) - &gj * aj / gjj;
    }
}

/// `(K + dI)^-1` with the smallest `d` on a x10 ladder (relative to the
/// largest diagonal entry, up to 1e-2) that admits a Cholesky factor. Only
/// used to rank candidate removals, so a coarser shift than the solver's is fine.
fn regularized_inverse(k: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let factor = PsdFactor::new(k);
    if factor.is_cholesky() {
        return Some(factor.inverse());
    }
    let scale = k.diagonal().max().max(f64::MIN_POSITIVE);
    let mut rel = 1e-5;
    while rel <= 1e-2 * (1.0 + 1e-9) {
        let shifted = k + DMatrix::identity(k.nrows(), k.ncols()) * (rel * scale);
        if let Some(ch) = shifted.cholesky() {
            return Some(ch.inverse());
        }
        rel *= 10.0;
    }
    None
}

impl Target<'_> {
    /// Greedy removal driven by one inverse of the Gram matrix, downdated by a
    /// rank-one Schur complement after every removal. With `G = K_S^-1` and
    /// `a = G b`, dropping atom `j` leaves captured energy `b^T a - a_j^2 / G_jj`.
    ///
    /// The estimates only steer the search. Stopping is confirmed with a true
    /// refit, and if the final refit misses the budget, removed atoms are put
    /// back (newest removal first) until it fits. `None` means no usable
    /// inverse exists and the caller should fall back to pass-by-pass pruning.
    fn downdate_prune(&self, threshold: f64) -> Option<Pruned> {
        let mut active: Vec<usize> = (0..self.f.order()).collect();
        let mut report = PruneReport::default();
        if active.is_empty() {
            return Some((active, None, report));
        }
        let mut state = Downdate::new(self, &active, 0.0)?;

        loop {
            report.passes += 1;
            let gammas = state.errors(self.norm_sq);
            let Some(j) = argmin(&gammas) else { break };
            if gammas[j] > threshold {
                let keep = without(&active, j);
                let err = self.fit(&keep).1;
                if err > threshold {
                    break;
                }
                report.removed_indices.push(active[j]);
                active = keep;
                if active.is_empty() {
                    break;
                }
                state = Downdate::new(self, &active, err * err)?;
                continue;
            }
            report.removed_indices.push(active[j]);
            active.remove(j);
            if active.is_empty() {
                break;
            }
            state.remove(j);
        }

        if report.removed_indices.is_empty() {
            return Some((active, None, report));
        }
        let (w, err) = self.fit(&active);
        if err <= threshold {
            report.final_error = err;
            return Some((active, Some(w), report));
        }
        // Longest prefix of the removal sequence whose refit still fits the
        // budget; the empty prefix always does.
        let keep_after = |r: usize| -> Vec<usize> {
            let gone = &report.removed_indices[..r];
            (0..self.f.order()).filter(|i| !gone.contains(i)).collect()
        };
        let (mut lo, mut hi) = (0, report.removed_indices.len());
        let mut best: Option<(DMatrix<f64>, f64)> = None;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let (w, err) = self.fit(&keep_after(mid));
            if err <= threshold {
                lo = mid;
                best = Some((w, err));
            } else {
                hi = mid;
            }
        }
        let active = keep_after(lo);
        report.removed_indices.truncate(lo);
        match best {
            Some((w, err)) if lo > 0 => {
                report.final_error = err;
                Some((active, Some(w), report))
            }
            _ => Some((active, None, report)),
        }
    }

    /// One pass per removal, each with freshly computed removal errors and a
    /// verified refit before the removal is committed.
    fn careful_prune(&self, threshold: f64, strategy: PruneStrategy) -> Result<Pruned> {
        let mut active: Vec<usize> = (0..self.f.order()).collect();
        let mut weights: Option<DMatrix<f64>> = None;
        let mut report = PruneReport::default();
        while !active.is_empty() {
            report.passes += 1;
            let gammas = match strategy {
                PruneStrategy::Exact => self.exact_errors(&active)?,
                PruneStrategy::Downdate => self.subset_errors(&active),
            };
            let Some(pos) = argmin(&gammas) else { break };
            if gammas[pos] > threshold {
                break;
            }
            let keep = without(&active, pos);
            let (w, err) = self.fit(&keep);
            if err > threshold {
                break;
            }
            report.removed_indices.push(active[pos]);
            report.final_error = err;
            active = keep;
            weights = Some(w);
        }
        Ok((active, weights, report))
    }
}
