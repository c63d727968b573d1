//! Prior cluster-structure simulation and the analytic cluster-number and
//! cluster-size laws, including their asymptotic regimes.
//!
//! A prior draw is a Poisson number of clusters with iid truncated-NB
//! sizes. Conditionally on the sample size m, the number of clusters l has
//! PMF proportional to (γ0 p^{−a})^l S_a(m, l). How the mass parameter is
//! tied down decides the asymptotics: under the raw parameterization a
//! larger discount means fewer clusters, under the unit-scale one it means
//! more.

use crate::dist::{tnb_mean_from_odds, tnb_sample, ModelParams, Parameterization, DISCOUNT_LIMIT_EPS};
use crate::special::{log_sum_exp, StirlingTriangle};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// An unordered collection of cluster sizes drawn from the prior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterStructure {
    pub sizes: Vec<u64>,
}

impl ClusterStructure {
    /// Number of clusters.
    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    /// Sample size Σ n_k.
    pub fn sample_size(&self) -> u64 {
        self.sizes.iter().sum()
    }
}

/// Growth regime of a summary statistic as the expected sample size
/// diverges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AsymptoticRegime {
    /// Grows like E[m]^exponent.
    PowerLaw { exponent: f64 },
    /// Grows like log E[m].
    Logarithmic,
    /// Grows like E[m]/log E[m].
    LinearOverLog,
    /// Converges to a finite limit.
    Bounded { limit: f64 },
}

impl std::fmt::Display for AsymptoticRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AsymptoticRegime::PowerLaw { exponent } => write!(f, "power-law({exponent:.4})"),
            AsymptoticRegime::Logarithmic => write!(f, "logarithmic"),
            AsymptoticRegime::LinearOverLog => write!(f, "linear-over-log"),
            AsymptoticRegime::Bounded { limit } => write!(f, "bounded({limit:.4})"),
        }
    }
}

/// Draws a cluster structure from the prior: l ~ Pois(rate), sizes iid TNB.
pub fn simulate_prior<R: Rng + ?Sized>(
    params: &ModelParams,
    rng: &mut R,
) -> Result<ClusterStructure> {
    let rate = params.poisson_rate();
    if !rate.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "non-finite cluster-count rate {rate}"
        )));
    }
    let l = Poisson::new(rate)
        .map_err(|e| Error::InvalidParameter(format!("poisson rate {rate}: {e}")))?
        .sample(rng) as u64;
    let sizes = (0..l)
        .map(|_| tnb_sample(params.discount(), params.prob(), rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterStructure { sizes })
}

/// Conditional PMF of the cluster count given sample size m, as a
/// probability vector over l = 0..=m. For m >= 1 the l = 0 entry is zero.
pub fn cluster_number_pmf(
    m: usize,
    params: &ModelParams,
    triangle: &StirlingTriangle,
) -> Result<Vec<f64>> {
    if m == 0 {
        return Ok(vec![1.0]);
    }
    triangle.check_covers(m, params.discount())?;
    let log_w = params.new_cluster_weight().ln();
    let log_terms: Vec<f64> = (1..=m)
        .map(|l| l as f64 * log_w + triangle.log_stirling(m, l))
        .collect();
    let norm = log_sum_exp(&log_terms);
    let mut pmf = Vec::with_capacity(m + 1);
    pmf.push(0.0);
    pmf.extend(log_terms.iter().map(|&t| (t - norm).exp()));
    Ok(pmf)
}

fn solve_odds_for_expected_m(expected_m: f64, params: &ModelParams) -> Result<f64> {
    if !expected_m.is_finite() || expected_m <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "expected sample size must be positive, got {expected_m}"
        )));
    }
    Ok(match params.parameterization() {
        Parameterization::Original => {
            (expected_m / params.mass()).powf(1.0 / (1.0 - params.discount()))
        }
        Parameterization::Reparameterized => expected_m / params.mass(),
    })
}

/// Solves the probability parameter from the expected sample size:
/// E[m] = γ0 (p/(1−p))^{1−a} under Original, E[m] = h0 p/(1−p) under
/// Reparameterized. Strong positive discounts can push the solution so
/// close to 1 that it rounds to 1 in f64.
pub fn solve_prob_for_expected_m(expected_m: f64, params: &ModelParams) -> Result<f64> {
    let odds = solve_odds_for_expected_m(expected_m, params)?;
    Ok(odds / (1.0 + odds))
}

/// Closed-form expected number of clusters at a given expected sample size.
pub fn expected_clusters(expected_m: f64, params: &ModelParams) -> Result<f64> {
    if !expected_m.is_finite() || expected_m <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "expected sample size must be positive, got {expected_m}"
        )));
    }
    let a = params.discount();
    let mass = params.mass();
    let value = match params.parameterization() {
        Parameterization::Original => {
            if a.abs() < DISCOUNT_LIMIT_EPS {
                mass * ((expected_m + mass).ln() - mass.ln())
            } else {
                let r = mass / expected_m;
                mass / a * ((r.powf(1.0 / (1.0 - a)) + 1.0).powf(a) - r.powf(a / (1.0 - a)))
            }
        }
        Parameterization::Reparameterized => {
            if a.abs() < DISCOUNT_LIMIT_EPS {
                mass * ((expected_m + mass).ln() - mass.ln())
            } else {
                mass / a * (((mass + expected_m) / mass).powf(a) - 1.0)
            }
        }
    };
    Ok(value)
}

/// Asymptotic regime of the expected cluster count as E[m] → ∞.
pub fn cluster_count_regime(params: &ModelParams) -> AsymptoticRegime {
    let a = params.discount();
    match params.parameterization() {
        Parameterization::Original => {
            if a.abs() < DISCOUNT_LIMIT_EPS {
                AsymptoticRegime::Logarithmic
            } else if a < 0.0 {
                AsymptoticRegime::PowerLaw {
                    exponent: -a / (1.0 - a),
                }
            } else {
                AsymptoticRegime::Bounded {
                    limit: params.mass() / a,
                }
            }
        }
        Parameterization::Reparameterized => {
            if a.abs() < DISCOUNT_LIMIT_EPS {
                AsymptoticRegime::Logarithmic
            } else if a < 0.0 {
                AsymptoticRegime::Bounded {
                    limit: params.mass() / (-a),
                }
            } else {
                AsymptoticRegime::PowerLaw { exponent: a }
            }
        }
    }
}

/// Expected cluster size at a given expected sample size, through the TNB
/// mean with the odds solved from the parameterization's E[m] equation.
pub fn expected_cluster_size(expected_m: f64, params: &ModelParams) -> Result<f64> {
    let odds = solve_odds_for_expected_m(expected_m, params)?;
    Ok(tnb_mean_from_odds(params.discount(), odds))
}

/// Asymptotic regime of the expected cluster size as E[m] → ∞.
pub fn cluster_size_regime(params: &ModelParams) -> AsymptoticRegime {
    let a = params.discount();
    match params.parameterization() {
        Parameterization::Original => {
            if a.abs() < DISCOUNT_LIMIT_EPS {
                AsymptoticRegime::LinearOverLog
            } else if a < 0.0 {
                AsymptoticRegime::PowerLaw {
                    exponent: 1.0 / (1.0 - a),
                }
            } else {
                AsymptoticRegime::PowerLaw { exponent: 1.0 }
            }
        }
        Parameterization::Reparameterized => {
            if a.abs() < DISCOUNT_LIMIT_EPS {
                AsymptoticRegime::LinearOverLog
            } else if a < 0.0 {
                AsymptoticRegime::PowerLaw { exponent: 1.0 }
            } else {
                AsymptoticRegime::PowerLaw { exponent: 1.0 - a }
            }
        }
    }
}

/// Prior lower bound on the ratio of unit-size clusters: max{a, 0}.
pub fn unit_size_lower_bound(a: f64) -> f64 {
    a.max(0.0)
}

/// One row of an asymptotics sweep, exportable as CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub discount: f64,
    pub prob: f64,
    pub mass: f64,
    pub expected_clusters: f64,
    pub expected_cluster_size: f64,
    pub regime: String,
}

/// Evaluates E[l], E[n_k] and the cluster-count regime over a discount grid
/// at fixed mass and expected sample size.
pub fn asymptotics_sweep(
    expected_m: f64,
    mass: f64,
    discounts: &[f64],
    parameterization: Parameterization,
) -> Result<Vec<SweepRow>> {
    discounts
        .iter()
        .map(|&a| {
            let params = ModelParams::new(mass, a, 0.5, parameterization)?;
            let p = solve_prob_for_expected_m(expected_m, &params)?;
            Ok(SweepRow {
                discount: a,
                prob: p,
                mass,
                expected_clusters: expected_clusters(expected_m, &params)?,
                expected_cluster_size: expected_cluster_size(expected_m, &params)?,
                regime: cluster_count_regime(&params).to_string(),
            })
        })
        .collect()
}
