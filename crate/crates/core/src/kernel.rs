//! Kernels, dictionaries and vector-valued kernel expansions.
//!
//! A function `f = (f_1, ..., f_C)` in the product RKHS is stored as a single
//! dictionary of `M` points shared by all classes plus an `M x C` weight
//! matrix, so `f_c(x) = sum_n W[n, c] * k(d_n, x)`. The joint Hilbert norm is
//! `sqrt(sum_c ||f_c||^2) = sqrt(trace(W^T K W))`.

use nalgebra::{DMatrix, DVector};

use crate::error::{PolkError, Result};
use crate::linalg::PsdFactor;

/// Reproducing kernel family and its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `exp(-||x - x'||^2 / (2 * bandwidth_sq))`
    Gaussian { bandwidth_sq: f64 },
    /// `(x^T x' + offset)^degree`
    Polynomial { offset: f64, degree: u32 },
}

impl KernelSpec {
    pub fn gaussian(bandwidth_sq: f64) -> Result<Self> {
        if !(bandwidth_sq > 0.0 && bandwidth_sq.is_finite()) {
            return Err(PolkError::Usage(format!(
                "gaussian bandwidth must be positive and finite, got {bandwidth_sq}"
            )));
        }
        Ok(KernelSpec::Gaussian { bandwidth_sq })
    }

    pub fn polynomial(offset: f64, degree: u32) -> Result<Self> {
        if degree == 0 {
            return Err(PolkError::Usage("polynomial degree must be >= 1".into()));
        }
        if !offset.is_finite() {
            return Err(PolkError::Usage(format!("polynomial offset must be finite, got {offset}")));
        }
        Ok(KernelSpec::Polynomial { offset, degree })
    }

    /// Kernel value on two equal-length slices. Lengths are only debug-checked;
    /// use [`kernel_eval`] for a checked call.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match *self {
            KernelSpec::Gaussian { bandwidth_sq } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * bandwidth_sq)).exp()
            }
            KernelSpec::Polynomial { offset, degree } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                (dot + offset).powi(degree as i32)
            }
        }
    }

    /// `sqrt(k(x, x))`, the norm of the kernel section at `x`.
    pub fn section_norm(&self, x: &[f64]) -> f64 {
        self.eval(x, x).max(0.0).sqrt()
    }
}

/// Checked kernel evaluation.
pub fn kernel_eval(kernel: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(PolkError::Usage(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(kernel.eval(x, y))
}

/// An ordered set of `M` feature vectors of dimension `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    dim: usize,
    // atom-major: atom n occupies points[n * dim .. (n + 1) * dim]
    points: Vec<f64>,
}

impl Dictionary {
    pub fn empty(dim: usize) -> Self {
        Dictionary {
            dim,
            points: Vec::new(),
        }
    }

    /// Build from atom-major flat storage.
    pub fn from_flat(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 && !points.is_empty() {
            return Err(PolkError::Usage("zero-dimensional dictionary with data".into()));
        }
        if dim > 0 && points.len() % dim != 0 {
            return Err(PolkError::Usage(format!(
                "{} values do not split into atoms of dimension {dim}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(PolkError::Usage("dictionary entries must be finite".into()));
        }
        Ok(Dictionary { dim, points })
    }

    pub fn from_atoms<A: AsRef<[f64]>>(dim: usize, atoms: &[A]) -> Result<Self> {
        let mut dict = Dictionary::empty(dim);
        for a in atoms {
            dict.push(a.as_ref())?;
        }
        Ok(dict)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Model order `M`.
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.points.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn atom(&self, n: usize) -> &[f64] {
        &self.points[n * self.dim..(n + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim.max(1))
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(PolkError::Usage(format!(
                "atom has dimension {}, dictionary expects {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PolkError::Usage("dictionary entries must be finite".into()));
        }
        self.points.extend_from_slice(x);
        Ok(())
    }

    /// Keep only the atoms at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dictionary {
        let mut points = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            points.extend_from_slice(self.atom(i));
        }
        Dictionary {
            dim: self.dim,
            points,
        }
    }

    pub fn concat(&self, other: &Dictionary) -> Dictionary {
        assert_eq!(self.dim, other.dim, "dictionary dimension mismatch");
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        Dictionary {
            dim: self.dim,
            points,
        }
    }

    /// The dictionary as a `p x M` matrix, one atom per column.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.len(), &self.points)
    }
}

/// `(k(d_1, x), ..., k(d_M, x))`.
pub fn kernel_vector(kernel: &KernelSpec, dict: &Dictionary, x: &[f64]) -> Result<DVector<f64>> {
    if x.len() != dict.dim() {
        return Err(PolkError::Usage(format!(
            "point has dimension {}, dictionary expects {}",
            x.len(),
            dict.dim()
        )));
    }
    Ok(DVector::from_iterator(
        dict.len(),
        dict.atoms().map(|d| kernel.eval(d, x)),
    ))
}

/// Cross-kernel matrix with entry `(n, m) = k(a_n, b_m)`.
pub fn gram(kernel: &KernelSpec, a: &Dictionary, b: &Dictionary) -> DMatrix<f64> {
    assert_eq!(a.dim(), b.dim(), "dictionary dimension mismatch");
    if std::ptr::eq(a, b) {
        return gram_self(kernel, a);
    }
    DMatrix::from_fn(a.len(), b.len(), |n, m| kernel.eval(a.atom(n), b.atom(m)))
}

fn gram_self(kernel: &KernelSpec, a: &Dictionary) -> DMatrix<f64> {
    let m = a.len();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = kernel.eval(a.atom(i), a.atom(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Gram matrix of a dictionary, an optional cross matrix against a second
/// dictionary, and the diagonal jitter used when it is factorized.
#[derive(Debug, Clone)]
pub struct GramBundle {
    pub k_dd: DMatrix<f64>,
    pub k_de: Option<DMatrix<f64>>,
    pub jitter: f64,
}

impl GramBundle {
    pub fn new(kernel: &KernelSpec, dict: &Dictionary) -> Self {
        GramBundle {
            k_dd: gram_self(kernel, dict),
            k_de: None,
            jitter: 0.0,
        }
    }

    pub fn with_cross(mut self, kernel: &KernelSpec, dict: &Dictionary, other: &Dictionary) -> Self {
        self.k_de = Some(gram(kernel, dict, other));
        self
    }

    /// Solve `(K_DD + jitter I) X = rhs`, recording the jitter used.
    pub fn solve(&mut self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let factor = PsdFactor::new(&self.k_dd);
        self.jitter = factor.jitter();
        factor.solve(rhs)
    }
}

/// A vector-valued RKHS function: shared dictionary plus `M x C` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelExpansion {
    kernel: KernelSpec,
    dict: Dictionary,
    weights: DMatrix<f64>,
}

impl KernelExpansion {
    /// The zero function (`M = 0`).
    pub fn zero(kernel: KernelSpec, dim: usize, num_classes: usize) -> Self {
        assert!(num_classes >= 1, "need at least one output");
        KernelExpansion {
            kernel,
            dict: Dictionary::empty(dim),
            weights: DMatrix::zeros(0, num_classes),
        }
    }

    pub fn new(kernel: KernelSpec, dict: Dictionary, weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != dict.len() {
            return Err(PolkError::Usage(format!(
                "weights have {} rows but dictionary has {} atoms",
                weights.nrows(),
                dict.len()
            )));
        }
        if weights.ncols() == 0 {
            return Err(PolkError::Usage("need at least one output".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(PolkError::Usage("weights must be finite".into()));
        }
        Ok(KernelExpansion {
            kernel,
            dict,
            weights,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn dict(&self) -> &Dictionary {
        &self.dict
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.dict.len()
    }

    pub fn dim(&self) -> usize {
        self.dict.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn into_parts(self) -> (KernelSpec, Dictionary, DMatrix<f64>) {
        (self.kernel, self.dict, self.weights)
    }

    /// `W^T k_D(x)`, a length-`C` vector.
    ///
    /// Panics if `x` does not have the dictionary's dimension.
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        let mut out = vec![0.0; self.num_classes()];
        for (n, d) in self.dict.atoms().enumerate() {
            let k = self.kernel.eval(d, x);
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.weights[(n, c)] * k;
            }
        }
        out
    }

    /// `s * f`.
    pub fn scaled(&self, s: f64) -> KernelExpansion {
        KernelExpansion {
            kernel: self.kernel,
            dict: self.dict.clone(),
            weights: &self.weights * s,
        }
    }

    /// `f + g` represented on the concatenated dictionary.
    pub fn sum(&self, other: &KernelExpansion) -> Result<KernelExpansion> {
        check_compatible(self, other)?;
        let m = self.order();
        let mut weights = DMatrix::zeros(m + other.order(), self.num_classes());
        weights.rows_mut(0, m).copy_from(&self.weights);
        weights.rows_mut(m, other.order()).copy_from(&other.weights);
        Ok(KernelExpansion {
            kernel: self.kernel,
            dict: self.dict.concat(&other.dict),
            weights,
        })
    }
}

fn check_compatible(f: &KernelExpansion, g: &KernelExpansion) -> Result<()> {
    if f.kernel != g.kernel {
        return Err(PolkError::Usage("expansions use different kernels".into()));
    }
    if f.num_classes() != g.num_classes() {
        return Err(PolkError::Usage(format!(
            "expansions have {} and {} outputs",
            f.num_classes(),
            g.num_classes()
        )));
    }
    if f.dim() != g.dim() {
        return Err(PolkError::Usage(format!(
            "expansions live on dimension {} and {}",
            f.dim(),
            g.dim()
        )));
    }
    Ok(())
}

/// Weighted quadratic form `sum_c a_c^T K b_c`.
pub(crate) fn trace_form(a: &DMatrix<f64>, k: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || b.nrows() == 0 {
        return 0.0;
    }
    let kb = k * b;
    a.iter().zip(kb.iter()).map(|(x, y)| x * y).sum()
}

/// `<f, g>_H = sum_c w_{f,c}^T K_{D_f, D_g} w_{g,c}`.
pub fn hilbert_inner(f: &KernelExpansion, g: &KernelExpansion) -> Result<f64> {
    check_compatible(f, g)?;
    if f.order() == 0 || g.order() == 0 {
        return Ok(0.0);
    }
    let k = gram(&f.kernel, &f.dict, &g.dict);
    Ok(trace_form(&f.weights, &k, &g.weights))
}

pub fn hilbert_norm(f: &KernelExpansion) -> f64 {
    if f.order() == 0 {
        return 0.0;
    }
    let k = gram_self(&f.kernel, &f.dict);
    trace_form(&f.weights, &k, &f.weights).max(0.0).sqrt()
}

/// `||f - g||_H` via `w^T K w - 2 w^T K' w~ + w~^T K'' w~`.
pub fn expansion_distance(f: &KernelExpansion, g: &KernelExpansion) -> Result<f64> {
    check_compatible(f, g)?;
    let ff = trace_form(&f.weights, &gram_self(&f.kernel, &f.dict), &f.weights);
    let gg = trace_form(&g.weights, &gram_self(&g.kernel, &g.dict), &g.weights);
    let fg = if f.order() == 0 || g.order() == 0 {
        0.0
    } else {
        trace_form(&f.weights, &gram(&f.kernel, &f.dict, &g.dict), &g.weights)
    };
    Ok((ff - 2.0 * fg + gg).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gauss(s: f64) -> KernelSpec {
        KernelSpec::gaussian(s).unwrap()
    }

    fn two_points() -> Dictionary {
        Dictionary::from_atoms(2, &[[0.0, 0.0], [1.0, 0.0]]).unwrap()
    }

    #[test]
    fn kernel_eval_examples() {
        assert_eq!(kernel_eval(&gauss(0.6), &[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        assert_relative_eq!(
            kernel_eval(&gauss(0.5), &[1.0, 0.0], &[0.0, 0.0]).unwrap(),
            (-1.0f64).exp()
        );
        let poly = KernelSpec::polynomial(1.0, 2).unwrap();
        assert_eq!(kernel_eval(&poly, &[1.0, 2.0], &[3.0, 1.0]).unwrap(), 36.0);
        assert!(matches!(
            kernel_eval(&poly, &[1.0], &[1.0, 2.0]),
            Err(PolkError::Usage(_))
        ));
    }

    #[test]
    fn invalid_kernels_rejected() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
        assert!(KernelSpec::polynomial(1.0, 0).is_err());
    }

    #[test]
    fn kernel_vector_examples() {
        let k = gauss(0.5);
        assert_eq!(kernel_vector(&k, &Dictionary::empty(2), &[1.0, 0.0]).unwrap().len(), 0);
        let v = kernel_vector(&k, &two_points(), &[1.0, 0.0]).unwrap();
        assert_relative_eq!(v[0], (-1.0f64).exp());
        assert_eq!(v[1], 1.0);
    }

    #[test]
    fn gram_examples() {
        let k = gauss(0.5);
        let single = Dictionary::from_atoms(2, &[[0.4, 0.1]]).unwrap();
        assert_eq!(gram(&k, &single, &single)[(0, 0)], 1.0);
        assert_eq!(gram(&k, &Dictionary::empty(2), &two_points()).shape(), (0, 2));
        let g = GramBundle::new(&k, &two_points()).k_dd;
        let e = (-1.0f64).exp();
        assert_relative_eq!(g, DMatrix::from_row_slice(2, 2, &[1.0, e, e, 1.0]));
    }

    #[test]
    fn evaluate_examples() {
        let k = gauss(0.5);
        let zero = KernelExpansion::zero(k, 2, 3);
        assert_eq!(zero.evaluate(&[0.2, 0.2]), vec![0.0; 3]);
        let single = KernelExpansion::new(
            k,
            Dictionary::from_atoms(2, &[[0.4, 0.1]]).unwrap(),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_eq!(single.evaluate(&[0.4, 0.1]), vec![1.0]);
        let f = KernelExpansion::new(k, two_points(), DMatrix::from_column_slice(2, 1, &[2.0, -1.0]))
            .unwrap();
        assert_relative_eq!(f.evaluate(&[1.0, 0.0])[0], 2.0 * (-1.0f64).exp() - 1.0);
    }

    #[test]
    fn inner_and_norm_examples() {
        let k = gauss(0.5);
        let a = KernelExpansion::new(
            k,
            Dictionary::from_atoms(2, &[[0.0, 0.0]]).unwrap(),
            DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        let b = KernelExpansion::new(
            k,
            Dictionary::from_atoms(2, &[[1.0, 0.0]]).unwrap(),
            DMatrix::from_element(1, 1, 3.0),
        )
        .unwrap();
        assert_eq!(hilbert_inner(&a, &KernelExpansion::zero(k, 2, 1)).unwrap(), 0.0);
        assert_relative_eq!(hilbert_inner(&a, &a).unwrap(), 4.0);
        assert_relative_eq!(hilbert_inner(&a, &b).unwrap(), 6.0 * (-1.0f64).exp());
        assert_relative_eq!(hilbert_norm(&b), 3.0);
        assert_eq!(hilbert_norm(&KernelExpansion::zero(k, 2, 1)), 0.0);

        let dup = KernelExpansion::new(
            k,
            Dictionary::from_atoms(2, &[[0.5, 0.5], [0.5, 0.5]]).unwrap(),
            DMatrix::from_column_slice(2, 1, &[1.5, -4.0]),
        )
        .unwrap();
        assert_relative_eq!(hilbert_norm(&dup), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn kernel_mismatch_is_usage_error() {
        let a = KernelExpansion::zero(gauss(0.5), 2, 1);
        let b = KernelExpansion::zero(gauss(0.6), 2, 1);
        assert!(matches!(hilbert_inner(&a, &b), Err(PolkError::Usage(_))));
        let c = KernelExpansion::zero(gauss(0.5), 2, 2);
        assert!(expansion_distance(&a, &c).is_err());
    }

    #[test]
    fn distance_examples() {
        let k = gauss(0.5);
        let g = KernelExpansion::new(
            k,
            Dictionary::from_atoms(2, &[[0.0, 0.0]]).unwrap(),
            DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        assert_eq!(expansion_distance(&g, &g).unwrap(), 0.0);
        assert_relative_eq!(
            expansion_distance(&KernelExpansion::zero(k, 2, 1), &g).unwrap(),
            2.0
        );

        let f = KernelExpansion::new(k, two_points(), DMatrix::from_column_slice(2, 1, &[1.0, 1.0]))
            .unwrap();
        // brute force: ||k(0,.) + k(e1,.) - 2 k(0,.)||^2 = ||k(e1,.) - k(0,.)||^2 = 2 - 2/e
        let e = (-1.0f64).exp();
        let brute = {
            let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]];
            let w = [1.0, 1.0, -2.0];
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += w[i] * w[j] * k.eval(&pts[i], &pts[j]);
                }
            }
            s.sqrt()
        };
        let d = expansion_distance(&f, &g).unwrap();
        assert_relative_eq!(d, brute, epsilon = 1e-12);
        assert_relative_eq!(d, (2.0 - 2.0 * e).sqrt(), epsilon = 1e-12);
    }
}
