//! Transductive active learning on finite domains with Gaussian process
//! posteriors.
//!
//! The crate is organised bottom-up: [`kernel`] builds Gram matrices,
//! [`gp`] maintains the posterior, [`selection`] scores and picks batches,
//! [`theory`] checks the variance-reduction guarantees, [`datasets`] handles
//! files and oracles, and [`bench`] drives configured experiments.

pub mod bench;
pub mod datasets;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod selection;
pub mod theory;

pub use error::{Error, Result};
