//! Symmetric positive-semidefinite solves for kernel matrices.
//!
//! Kernel matrices of near-duplicate atoms are numerically singular, so every
//! factorization adds a small diagonal jitter relative to the largest diagonal
//! entry. The jitter starts at `1e-10` and grows tenfold up to `1e-6`; if the
//! Cholesky factorization still fails the solve falls back to an SVD
//! pseudo-inverse with relative cutoff `1e-10`.

use nalgebra::{Cholesky, DMatrix, Dyn};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;
const PINV_CUTOFF: f64 = 1e-10;

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    PseudoInverse(DMatrix<f64>),
}

/// A factorization of `K + jitter * I`.
pub struct PsdFactor {
    factor: Factor,
    dim: usize,
    jitter: f64,
}

impl PsdFactor {
    pub fn new(k: &DMatrix<f64>) -> Self {
        assert!(k.is_square(), "kernel matrix must be square");
        let dim = k.nrows();
        let scale = k.diagonal().iter().fold(0.0f64, |a, &d| a.max(d.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };

        let mut rel = JITTER_START;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rel * scale;
            let mut shifted = k.clone();
            for i in 0..dim {
                shifted[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(shifted) {
                return PsdFactor {
                    factor: Factor::Cholesky(chol),
                    dim,
                    jitter,
                };
            }
            rel *= 10.0;
        }

        let svd = k.clone().svd(true, true);
        let smax = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
        let pinv = svd
            .pseudo_inverse(PINV_CUTOFF * smax.max(f64::MIN_POSITIVE))
            .expect("SVD computed with both factors");
        PsdFactor {
            factor: Factor::PseudoInverse(pinv),
            dim,
            jitter: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diagonal shift that was applied (0 for the pseudo-inverse fallback).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn is_cholesky(&self) -> bool {
        matches!(self.factor, Factor::Cholesky(_))
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(rhs.nrows(), self.dim);
        if self.dim == 0 {
            return DMatrix::zeros(0, rhs.ncols());
        }
        match &self.factor {
            Factor::Cholesky(c) => c.solve(rhs),
            Factor::PseudoInverse(p) => p * rhs,
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        if self.dim == 0 {
            return DMatrix::zeros(0, 0);
        }
        match &self.factor {
            Factor::Cholesky(c) => c.inverse(),
            Factor::PseudoInverse(p) => p.clone(),
        }
    }
}

/// Solve `K X = B` for symmetric PSD `K` using the jitter ladder.
pub fn solve_psd(k: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    PsdFactor::new(k).solve(rhs)
}
