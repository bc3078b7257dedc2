//! Sequential empirical ROC, PPV and NPV curves under case-control sampling,
//! their asymptotic covariances, Monte Carlo validation and group-sequential
//! study design.

pub mod asymptotics;
pub mod cli;
pub mod curves;
pub mod empirical_process;
pub mod error;
pub mod gaussian_limits;
pub mod gs_design;
pub mod kde;
pub mod montecarlo;
pub mod normal;
pub mod stats;

pub use error::{Error, Result};
