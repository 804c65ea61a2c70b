//! Perception-coherence representation transfer.
//!
//! A student representation is trained so that, around every reference
//! point, it ranks the other points by dissimilarity the way a teacher
//! representation does. The crate provides
//!
//! - [`datasets`]: seeded synthetic point sets (two moons, Gaussian clusters) and their file format,
//! - [`metric`]: Euclidean and cosine dissimilarities and pairwise matrices,
//! - [`ranking`]: hard ranks, sigmoid soft ranks and empirical cumulative functions,
//! - [`coherence`]: coherence levels, the Difference Coefficient, its mini-batch estimator and preservation probes,
//! - [`loss`]: the soft-rank coherence loss with analytic gradients,
//! - [`nn`]: a small dense network, softmax head and SGD/Adam,
//! - [`transfer`]: configuration transfer, feature transfer and linear probes,
//! - [`eval`]: retrieval mAP, correlations and the estimator batch-size ablation.
//!
//! ```
//! use pct_core::{coherence, metric::{pairwise, Metric}, ranking::empirical_cdf};
//! use ndarray::array;
//!
//! let teacher = array![[0.0], [1.0], [3.0]];
//! let student = array![[0.0], [3.0], [1.0]];
//! let f1 = empirical_cdf(pairwise(teacher.view(), Metric::euclidean())?.view())?;
//! let f2 = empirical_cdf(pairwise(student.view(), Metric::euclidean())?.view())?;
//! let report = coherence::dc_exact(&f1, &f2)?;
//! assert!((report.global_phi - 7.0 / 9.0).abs() < 1e-12);
//! # Ok::<(), pct_core::Error>(())
//! ```

pub mod coherence;
pub mod datasets;
mod error;
pub mod eval;
pub mod loss;
pub mod metric;
pub mod nn;
pub mod ranking;
pub mod rng;
pub mod transfer;

pub use error::{Error, Result};

/// The guide's code samples, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/coherence.md")]
    mod coherence {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/transfer.md")]
    mod transfer {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
