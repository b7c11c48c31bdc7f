//! Identification and estimation of marginal treatment effects for
//! unordered multinomial choice with a generalized Roy selection rule.

pub mod cli;
pub mod config;
pub mod counterexample;
pub mod distributions;
pub mod error;
pub mod estimation;
pub mod expr;
pub mod io;
pub mod numerics;
pub mod population;
pub mod selection;

pub use error::{MteError, Result};
