//! Multiple imputation with a single maximum-likelihood estimate, and
//! between-imputation variance shrinkage.

pub mod error;
pub mod numerics;
pub mod rng;
pub mod data_model;
pub mod estimation;
pub mod imputation;
pub mod combine;
pub mod harness;

pub use error::{Error, Result};
