use nalgebra::DMatrix;
use proptest::prelude::*;

use polk::data::{gen_multidist, Dataset, MultidistSpec};
use polk::kernel::{expansion_distance, gram, hilbert_inner, hilbert_norm, Dictionary, KernelExpansion, KernelSpec};
use polk::komp::{komp_prune, komp_prune_with, PruneBudget, PruneStrategy};
use polk::loss::{loss_and_grad, LossKind};
use polk::metrics::metrics_csv;
use polk::polk::{fsgd_candidate, train, BudgetRule, StepSchedule, TrainConfig};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-300
}

fn kernel_strategy() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.2f64..3.0).prop_map(|s| KernelSpec::gaussian(s).unwrap()),
        (0.0f64..2.0, 1u32..4).prop_map(|(b, c)| KernelSpec::polynomial(b, c).unwrap()),
    ]
}

/// (p, M, C, flat points, flat weights)
fn expansion_parts(max_m: usize) -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..=4, 1usize..=max_m, 1usize..=3).prop_flat_map(|(p, m, c)| {
        (
            Just(p),
            Just(m),
            Just(c),
            prop::collection::vec(-2.0f64..2.0, p * m),
            prop::collection::vec(-1.5f64..1.5, m * c),
        )
    })
}

fn build(kernel: KernelSpec, parts: &(usize, usize, usize, Vec<f64>, Vec<f64>)) -> KernelExpansion {
    let (p, m, c, x, w) = parts;
    let dict = Dictionary::from_flat(*p, x.clone()).unwrap();
    KernelExpansion::new(kernel, dict, DMatrix::from_row_slice(*m, *c, w)).unwrap()
}

/// Atoms on a grid with spacing well above the bandwidth keep the Gram
/// matrix comfortably positive definite.
fn separated(kernel_bw: f64, m: usize, c: usize, weights: &[f64]) -> KernelExpansion {
    let spacing = 0.9 * kernel_bw.sqrt();
    let atoms: Vec<[f64; 2]> = (0..m).map(|i| [spacing * (i % 4) as f64, spacing * (i / 4) as f64]).collect();
    KernelExpansion::new(
        KernelSpec::gaussian(kernel_bw).unwrap(),
        Dictionary::from_atoms(2, &atoms).unwrap(),
        DMatrix::from_row_slice(m, c, &weights[..m * c]),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gram_is_psd(kernel in kernel_strategy(), parts in expansion_parts(8)) {
        let f = build(kernel, &parts);
        let k = gram(&kernel, f.dict(), f.dict());
        let scale = k.diagonal().max();
        let low = k.symmetric_eigenvalues().min();
        prop_assert!(low >= -1e-10 * scale, "min eigenvalue {low} with max diag {scale}");
    }

    #[test]
    fn inner_product_is_symmetric(kernel in kernel_strategy(), a in expansion_parts(8), seed in any::<u64>()) {
        let f = build(kernel, &a);
        let mut b = a.clone();
        b.4.iter_mut().enumerate().for_each(|(i, w)| *w = ((seed.wrapping_add(i as u64) % 97) as f64 - 48.0) / 30.0);
        b.3.reverse();
        let g = build(kernel, &b);
        let fg = hilbert_inner(&f, &g).unwrap();
        let gf = hilbert_inner(&g, &f).unwrap();
        prop_assert!(rel_close(fg, gf, 1e-12), "{fg} vs {gf}");

        let d = expansion_distance(&f, &g).unwrap();
        let expanded = hilbert_norm(&f).powi(2) - 2.0 * fg + hilbert_norm(&g).powi(2);
        let scale = hilbert_norm(&f).powi(2) + hilbert_norm(&g).powi(2);
        prop_assert!((d * d - expanded.max(0.0)).abs() <= 1e-10 * scale.max(1e-12));
    }

    #[test]
    fn evaluate_is_linear_in_weights(kernel in kernel_strategy(), parts in expansion_parts(8), z in prop::collection::vec(-2.0f64..2.0, 4)) {
        let f = build(kernel, &parts);
        let (p, m, c) = (parts.0, parts.1, parts.2);
        let w2 = DMatrix::from_fn(m, c, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let g = KernelExpansion::new(kernel, f.dict().clone(), w2.clone()).unwrap();
        let both = KernelExpansion::new(kernel, f.dict().clone(), f.weights() + w2).unwrap();
        let x = &z[..p];
        let (a, b, s) = (f.evaluate(x), g.evaluate(x), both.evaluate(x));
        for k in 0..c {
            let scale = a[k].abs() + b[k].abs();
            prop_assert!((s[k] - a[k] - b[k]).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn zero_weight_atom_changes_nothing(kernel in kernel_strategy(), parts in expansion_parts(7), extra in prop::collection::vec(-2.0f64..2.0, 4)) {
        let f = build(kernel, &parts);
        let (p, c) = (parts.0, parts.2);
        let mut padded = parts.clone();
        padded.1 += 1;
        padded.3.extend_from_slice(&extra[..p]);
        padded.4.extend(std::iter::repeat_n(0.0, c));
        let g = build(kernel, &padded);
        let x: Vec<f64> = extra.iter().rev().take(p).copied().collect();
        for (a, b) in f.evaluate(&x).iter().zip(g.evaluate(&x)) {
            prop_assert!(rel_close(*a, b, 1e-12) || (a - b).abs() < 1e-14);
        }
        prop_assert!(rel_close(hilbert_norm(&f), hilbert_norm(&g), 1e-12) || hilbert_norm(&f) < 1e-14);
        let h = f.scaled(-1.0);
        let (df, dg) = (expansion_distance(&f, &h).unwrap(), expansion_distance(&g, &h).unwrap());
        prop_assert!(rel_close(df, dg, 1e-12) || df < 1e-14, "{df} vs {dg}");
    }

    #[test]
    fn komp_respects_budget(bw in 0.2f64..2.0, parts in expansion_parts(12), frac in 0.0f64..1.2) {
        let f = build(KernelSpec::gaussian(bw).unwrap(), &parts);
        let norm = hilbert_norm(&f);
        let eps = frac * norm;
        let (g, report) = komp_prune(&f, &PruneBudget::new(eps).unwrap()).unwrap();
        let err = expansion_distance(&f, &g).unwrap();
        prop_assert!(err <= eps + 1e-8 * (1.0 + norm), "error {err} budget {eps}");
        prop_assert!(g.order() <= f.order());
        prop_assert_eq!(g.order() + report.removed_indices.len(), f.order());

        let (again, second) = komp_prune(&f, &PruneBudget::new(eps).unwrap()).unwrap();
        prop_assert_eq!(&second.removed_indices, &report.removed_indices);
        prop_assert_eq!(again.weights(), g.weights());
    }

    #[test]
    fn zero_budget_on_positive_definite_gram_is_identity(bw in 0.3f64..1.5, m in 1usize..10, w in prop::collection::vec(0.2f64..1.5, 30)) {
        let f = separated(bw, m, 2, &w);
        let (g, report) = komp_prune(&f, &PruneBudget::new(0.0).unwrap()).unwrap();
        prop_assert!(report.removed_indices.is_empty());
        prop_assert_eq!(g, f);
    }

    #[test]
    fn downdate_agrees_with_exact(bw in 0.3f64..1.5, m in 2usize..12, w in prop::collection::vec(-1.5f64..1.5, 36), frac in 0.0f64..0.8) {
        let f = separated(bw, m, 3, &w);
        let budget = PruneBudget::new(frac * hilbert_norm(&f)).unwrap();
        let (fast, a) = komp_prune_with(&f, &budget, PruneStrategy::Downdate).unwrap();
        let (slow, b) = komp_prune_with(&f, &budget, PruneStrategy::Exact).unwrap();
        prop_assert_eq!(&a.removed_indices, &b.removed_indices);
        prop_assert!(expansion_distance(&fast, &slow).unwrap() <= 1e-8 * (1.0 + hilbert_norm(&f)));
    }

    #[test]
    fn loss_properties(c in 2usize..6, a in prop::collection::vec(-4.0f64..4.0, 6), b in prop::collection::vec(-4.0f64..4.0, 6), alpha in 0.0f64..1.0, label in 0usize..6, shift in -3.0f64..3.0) {
        let y = label % c + 1;
        let (a, b) = (&a[..c], &b[..c]);
        let mix: Vec<f64> = a.iter().zip(b).map(|(u, v)| alpha * u + (1.0 - alpha) * v).collect();
        for kind in [LossKind::multi_hinge(c).unwrap(), LossKind::multi_logistic(c).unwrap()] {
            let la = loss_and_grad(&kind, a, y).unwrap();
            let lb = loss_and_grad(&kind, b, y).unwrap();
            let lm = loss_and_grad(&kind, &mix, y).unwrap();
            prop_assert!(lm.value <= alpha * la.value + (1.0 - alpha) * lb.value + 1e-12);
            prop_assert!(la.grad.iter().all(|g| g.abs() <= 1.0 + 1e-15));
        }
        let logistic = loss_and_grad(&LossKind::multi_logistic(c).unwrap(), a, y).unwrap();
        prop_assert!(logistic.grad.iter().sum::<f64>().abs() <= 1e-12);
        let hinge = LossKind::multi_hinge(c).unwrap();
        let moved: Vec<f64> = a.iter().map(|s| s + shift).collect();
        let (h0, h1) = (loss_and_grad(&hinge, a, y).unwrap().value, loss_and_grad(&hinge, &moved, y).unwrap().value);
        prop_assert!((h0 - h1).abs() <= 1e-12 * (1.0 + h0.abs()));

        let bin = LossKind::BinaryLogistic;
        let (s, t) = (a[0], b[0]);
        let m = alpha * s + (1.0 - alpha) * t;
        let yb = label % 2;
        let (vs, vt, vm) = (
            loss_and_grad(&bin, &[s], yb).unwrap(),
            loss_and_grad(&bin, &[t], yb).unwrap(),
            loss_and_grad(&bin, &[m], yb).unwrap(),
        );
        prop_assert!(vm.value <= alpha * vs.value + (1.0 - alpha) * vt.value + 1e-12);
        prop_assert!(vs.grad[0].abs() <= 1.0);
    }
}

/// Averaging N single-sample candidates gives the N-sample mini-batch candidate.
#[test]
fn batch_gradient_is_average_of_single_sample_gradients() {
    let spec = MultidistSpec { n_train: 40, n_test: 1, seed: 21, ..Default::default() };
    let (data, _) = gen_multidist(&spec).unwrap();
    let kernel = KernelSpec::gaussian(0.6).unwrap();
    let loss = LossKind::multi_logistic(5).unwrap();
    let start = Dictionary::from_atoms(2, &[[0.3, -0.1], [1.0, 1.0], [-0.6, 0.4]]).unwrap();
    let f = KernelExpansion::new(kernel, start, DMatrix::from_fn(3, 5, |i, j| (i as f64 - j as f64) / 4.0)).unwrap();
    let (eta, lambda) = (0.7, 0.2);

    let batch: Vec<_> = data.iter().collect();
    let n = batch.len();
    let full = fsgd_candidate(&f, &loss, &batch, eta, lambda, None).unwrap();
    // Accumulate the single-sample candidates coefficient by coefficient on
    // the batch candidate's dictionary, then measure the difference there.
    let mut avg = DMatrix::zeros(3 + n, 5);
    for (i, sample) in batch.iter().enumerate() {
        let one = fsgd_candidate(&f, &loss, &[*sample], eta, lambda, None).unwrap();
        assert_eq!(one.dict().atom(3), full.dict().atom(3 + i));
        let mut head = avg.rows_mut(0, 3);
        head += one.weights().rows(0, 3) / n as f64;
        let mut row = avg.row_mut(3 + i);
        row += one.weights().row(3) / n as f64;
    }
    let diff = KernelExpansion::new(kernel, full.dict().clone(), full.weights() - avg).unwrap();
    let gap = hilbert_norm(&diff) / eta;
    assert!(gap <= 1e-10, "{gap}");
}

fn blob_stream(n: usize) -> Dataset {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 3 + 1;
        let angle = i as f64 * 0.37;
        features.push(y as f64 + 0.4 * angle.cos());
        features.push(-(y as f64) + 0.4 * angle.sin());
        labels.push(y);
    }
    Dataset::new(2, features, labels).unwrap()
}

#[test]
fn iterate_norm_stays_below_bound() {
    let data = blob_stream(300);
    for (lambda, eta) in [(0.1, 2.0), (1.0, 0.5)] {
        let mut cfg = TrainConfig::new(KernelSpec::gaussian(0.5).unwrap(), LossKind::multi_hinge(3).unwrap());
        cfg.lambda = lambda;
        cfg.schedule = StepSchedule::Constant(eta);
        cfg.budget = BudgetRule::MatchedConstant(0.1);
        let out = train(&cfg, &data, None).unwrap();
        let c = LossKind::multi_hinge(3).unwrap().lipschitz();
        for rec in out.probe.records() {
            assert!(rec.iterate_norm <= c / lambda + 1e-9, "step {}: {}", rec.t, rec.iterate_norm);
            assert!(rec.bias <= rec.epsilon / rec.eta + 1e-9);
        }
    }
}

#[test]
fn same_seed_same_trace() {
    let data = blob_stream(200);
    let mut cfg = TrainConfig::new(KernelSpec::gaussian(0.5).unwrap(), LossKind::multi_logistic(3).unwrap());
    cfg.schedule = StepSchedule::Constant(1.0);
    cfg.budget = BudgetRule::MatchedConstant(0.05);
    cfg.shuffle = true;
    cfg.seed = 4;
    cfg.passes = 2;
    let a = train(&cfg, &data, Some(&data)).unwrap();
    let b = train(&cfg, &data, Some(&data)).unwrap();
    assert_eq!(metrics_csv(&a.metrics, false), metrics_csv(&b.metrics, false));
    assert_eq!(a.model, b.model);
}
