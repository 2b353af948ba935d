//! Fair decision making with a portfolio of decision functions.
//!
//! A [`selector::Portfolio`] picks one member per instance with
//! multiplicative weights. Members are periodically audited for parity and
//! counterfactual (flip) fairness; unfair ones are removed and, where
//! possible, repaired by [`enhance`] and put back.

pub mod audit;
pub mod domain;
pub mod enhance;
pub mod error;
pub mod function;
pub mod harness;
pub mod par;
pub mod rule;
pub mod scenario;
pub mod selector;

pub use error::{Error, Result};
