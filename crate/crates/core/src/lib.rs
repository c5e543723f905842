//! Parsimonious online learning with kernels.
//!
//! Functional stochastic gradient descent in a reproducing kernel Hilbert
//! space, where every iterate is re-sparsified by destructive kernel
//! orthogonal matching pursuit so the model order stays finite.
//!
//! The pieces, bottom-up:
//!
//! - [`kernel`]: kernels, dictionaries, kernel expansions and their Hilbert geometry
//! - [`komp`]: greedy dictionary pruning within a Hilbert-norm budget
//! - [`loss`]: multi-class hinge, multi-class logistic and binary logistic losses
//! - [`polk`]: the training loop, step-size schedules and budget rules
//! - [`data`]: the `multidist` generator and dataset file formats
//! - [`diagnostics`]: runtime checks of the projection bias and iterate-norm bounds
//! - [`model`], [`metrics`], [`cli`]: persistence, metrics CSV and the command line
//!
//! ```
//! use polk::data::{gen_multidist, MultidistSpec};
//! use polk::kernel::KernelSpec;
//! use polk::loss::LossKind;
//! use polk::polk::{train, BudgetRule, StepSchedule, TrainConfig};
//!
//! let spec = MultidistSpec { n_train: 320, n_test: 100, seed: 3, ..Default::default() };
//! let (train_set, test_set) = gen_multidist(&spec).unwrap();
//!
//! let mut cfg = TrainConfig::new(KernelSpec::gaussian(0.6).unwrap(), LossKind::multi_hinge(5).unwrap());
//! cfg.schedule = StepSchedule::Constant(6.0);
//! cfg.budget = BudgetRule::MatchedConstant(0.04);
//! cfg.batch_size = 32;
//!
//! let out = train(&cfg, &train_set, Some(&test_set)).unwrap();
//! assert!(out.model.order() < 320);
//! ```

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod kernel;
pub mod komp;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod polk;

pub use error::{PolkError, Result};
pub use kernel::{Dictionary, KernelExpansion, KernelSpec};
pub use loss::LossKind;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/kernel-expansions.md")]
    pub mod kernel_expansions {}
    #[doc = include_str!("../../../book/src/pruning.md")]
    pub mod pruning {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    pub mod diagnostics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
