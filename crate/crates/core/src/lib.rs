//! B-spline adaptive tokenization for univariate time series.
//!
//! A lookback window is fitted with a least-squares B-spline whose interior
//! knots follow the local curvature of the signal. Each basis function yields
//! one token: its coefficient and the center of its support in sample units.
//! The crate also carries the fixed-budget comparison tokenizers, the
//! positional-encoding kernels, evaluation statistics and dataset plumbing.

pub mod baseline;
pub mod cache;
pub mod data;
pub mod error;
pub mod eval;
pub mod knots;
pub mod lsq;
pub mod posenc;
pub mod spline;
pub mod tokenizer;

pub use error::{Error, Result};
pub use spline::{basis_matrix, BasisMatrix, KnotVector};
pub use tokenizer::{fit_window, fit_window_full, TokenSequence, TokenizerConfig};
