//! Generalized negative binomial process (gNBP) count-mixture modeling.
//!
//! The gNBP draws a random cluster structure by first drawing a Poisson
//! number of clusters and then drawing each cluster size from a truncated
//! negative binomial distribution, so that the sample size itself is a
//! generalized negative binomial random variable. Because the sample size
//! is part of the model, the partition law of a subset may depend on the
//! total sample size, and the resulting exchangeable partition probability
//! function (EPPF) is allowed to violate the addition rule that defines
//! Kingman partition structures.
//!
//! The crate provides:
//!
//! * [`special`] — log-space generalized Stirling numbers and gamma ratios;
//! * [`dist`] — PMFs, moments and exact samplers for the truncated and
//!   generalized negative binomial distributions;
//! * [`process`] — prior cluster-structure simulation and analytic
//!   cluster-number and cluster-size laws, with asymptotic regime labels;
//! * [`eppf`] — exact ECPF/EPPF evaluation, prediction rules, addition-rule
//!   residuals, size-dependent EPPFs and a set-partition enumerator;
//! * [`gibbs`] — prior-partition Gibbs chains and the full generalized
//!   Polya-urn sampler for the Gaussian count-mixture model;
//! * [`io`] — dataset loading, trace persistence and posterior summaries.

pub mod dist;
pub mod eppf;
pub mod gibbs;
pub mod io;
pub mod process;
pub mod special;

#[cfg(test)]
pub(crate) mod test_support;

pub use dist::{ModelParams, Parameterization};
pub use eppf::Partition;
pub use gibbs::{ChainConfig, MixtureState, Trace, Variant};
pub use io::{Dataset, Summary};
pub use process::ClusterStructure;
pub use special::StirlingTriangle;

/// Errors reported by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("stirling triangle mismatch: {0}")]
    TriangleMismatch(String),
    #[error("exhaustive enumeration limited to m <= {max}, requested m = {m}")]
    EnumerationLimit { m: usize, max: usize },
    #[error("sequential inversion exceeded the iteration cap")]
    SamplerOverflow,
    #[error("empty trace")]
    EmptyTrace,
    #[error("data error: {0}")]
    Data(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
