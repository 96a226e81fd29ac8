//! Multi-index models for the quasilinear parabolic equation
//! `∂₂u - ∂₁²π(u) = ξ` driven by space-time white noise on a periodic grid.
//!
//! The algebraic layer ([`multiindex`], [`series`], [`reexpansion`]) is
//! exact; the analytic layer ([`kernels`], [`noise`], [`schauder`],
//! [`model`]) works on [`kernels::GridField`]s; [`estimator`] turns Monte
//! Carlo ensembles into moment and scaling estimates.

pub mod config;
pub mod error;
pub mod estimator;
pub mod kernels;
pub mod model;
pub mod multiindex;
pub mod noise;
pub mod reexpansion;
pub mod schauder;
pub mod selftest;
pub mod series;

pub use error::{Error, Result};
pub use kernels::{Grid, GridField, Node, Point};
pub use multiindex::{DerivIndex, Grading, Homogeneity, Key, MultiIndex};
pub use series::{Coefficient, Series, Truncation};
