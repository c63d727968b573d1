//! Truncated and generalized negative binomial distributions.
//!
//! The truncated NB distribution `TNB(a, p)` on u = 1, 2, ... is the
//! cluster-size law of the process; the generalized NB distribution
//! `gNB(γ0, a, p)` is its compound Poisson mixture and models the sample
//! size. As `a → 0` they degenerate to the logarithmic and ordinary NB
//! distributions, and all evaluators here switch to those closed-form
//! limits below `|a| < DISCOUNT_LIMIT_EPS`.

use crate::special::{log_sum_exp, StirlingTriangle};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Below this magnitude the discount is treated as zero and every formula
/// uses its NB/logarithmic limit; (1−(1−p)^a)/(a p^a) loses precision there.
pub const DISCOUNT_LIMIT_EPS: f64 = 1e-8;

/// Probability parameters are clamped into [PROB_GUARD, 1−PROB_GUARD];
/// (1−p)^a and p^{−a} blow up at the endpoints.
pub const PROB_GUARD: f64 = 1e-6;

/// Iteration cap for sequential-inversion samplers.
const INVERSION_CAP: u64 = 1_000_000_000;

/// Which parameter the mass refers to: γ0 scales the base measure of the
/// raw process, h0 the base measure of the unit-scale process. The two
/// EPPFs coincide under γ0 = h0 (p/(1−p))^a but the priors they induce
/// have opposite asymptotics in the discount.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parameterization {
    Original,
    Reparameterized,
}

/// The (mass, discount, probability) triple governing every formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    mass: f64,
    discount: f64,
    prob: f64,
    parameterization: Parameterization,
    prob_clamped: bool,
}

impl ModelParams {
    /// Validates mass > 0, discount < 1, prob > 0. Probabilities outside
    /// the guard band [1e-6, 1-1e-6] — including values the closed-form
    /// solvers round to exactly 1 — are clamped into it and flagged.
    pub fn new(
        mass: f64,
        discount: f64,
        prob: f64,
        parameterization: Parameterization,
    ) -> Result<Self> {
        if !mass.is_finite() || mass <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mass must be positive, got {mass}"
            )));
        }
        if !discount.is_finite() || discount >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "discount must be a finite real < 1, got {discount}"
            )));
        }
        if !prob.is_finite() || prob <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "prob must be positive, got {prob}"
            )));
        }
        let clamped = prob.clamp(PROB_GUARD, 1.0 - PROB_GUARD);
        Ok(Self {
            mass,
            discount,
            prob: clamped,
            parameterization,
            prob_clamped: clamped != prob,
        })
    }

    pub fn original(mass: f64, discount: f64, prob: f64) -> Result<Self> {
        Self::new(mass, discount, prob, Parameterization::Original)
    }

    pub fn reparameterized(mass: f64, discount: f64, prob: f64) -> Result<Self> {
        Self::new(mass, discount, prob, Parameterization::Reparameterized)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn prob(&self) -> f64 {
        self.prob
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    /// True when the requested prob was clamped into the guard band.
    pub fn prob_clamped(&self) -> bool {
        self.prob_clamped
    }

    pub fn with_mass(&self, mass: f64) -> Result<Self> {
        Self::new(mass, self.discount, self.prob, self.parameterization)
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(self.mass, discount, self.prob, self.parameterization)
    }

    pub fn with_prob(&self, prob: f64) -> Result<Self> {
        Self::new(self.mass, self.discount, prob, self.parameterization)
    }

    /// Effective mass γ0 of the underlying raw process;
    /// γ0 = h0 (p/(1−p))^a under the reparameterized form.
    pub fn gamma0(&self) -> f64 {
        match self.parameterization {
            Parameterization::Original => self.mass,
            Parameterization::Reparameterized => {
                self.mass * (self.prob / (1.0 - self.prob)).powf(self.discount)
            }
        }
    }

    /// Weight of opening a new cluster in the prediction rule:
    /// γ0 p^{−a}, identically h0 (1−p)^{−a}.
    pub fn new_cluster_weight(&self) -> f64 {
        match self.parameterization {
            Parameterization::Original => self.mass * self.prob.powf(-self.discount),
            Parameterization::Reparameterized => {
                self.mass * (1.0 - self.prob).powf(-self.discount)
            }
        }
    }

    /// Poisson rate of the prior number of clusters.
    pub fn poisson_rate(&self) -> f64 {
        match self.parameterization {
            Parameterization::Original => {
                self.mass * rate_factor_original(self.discount, self.prob)
            }
            Parameterization::Reparameterized => {
                self.mass * rate_factor_reparameterized(self.discount, self.prob)
            }
        }
    }
}

/// log|1 − (1−p)^a|, evaluated through expm1 so small exponents keep
/// full precision.
pub(crate) fn log_abs_one_minus_pow(a: f64, p: f64) -> f64 {
    let e = a * (1.0 - p).ln();
    if e <= 0.0 {
        (-e.exp_m1()).ln()
    } else {
        e + (-(-e).exp_m1()).ln()
    }
}

/// (1 − (1−p)^a)/(a p^a): the per-unit-mass Poisson rate of the cluster
/// count under the raw process. Positive for every a < 1; −ln(1−p) at the
/// a → 0 limit. Evaluated in log space so extreme discounts overflow to
/// +inf instead of producing NaN.
pub fn rate_factor_original(a: f64, p: f64) -> f64 {
    if a.abs() < DISCOUNT_LIMIT_EPS {
        return -(1.0 - p).ln();
    }
    (log_abs_one_minus_pow(a, p) - a.abs().ln() - a * p.ln()).exp()
}

/// (1 − (1−p)^a)/(a (1−p)^a), the unit-scale counterpart of
/// [`rate_factor_original`]; same a → 0 limit.
pub fn rate_factor_reparameterized(a: f64, p: f64) -> f64 {
    if a.abs() < DISCOUNT_LIMIT_EPS {
        return -(1.0 - p).ln();
    }
    (log_abs_one_minus_pow(a, p) - a.abs().ln() - a * (1.0 - p).ln()).exp()
}

fn check_tnb_params(a: f64, p: f64) -> Result<f64> {
    if !a.is_finite() || a >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "discount must be a finite real < 1, got {a}"
        )));
    }
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "prob must lie in (0, 1), got {p}"
        )));
    }
    Ok(p.clamp(PROB_GUARD, 1.0 - PROB_GUARD))
}

/// Log-PMF of the truncated NB distribution on u = 1, 2, ...:
/// f(u) = Γ(u−a)/(u! Γ(1−a)) · p^u · a/(1−(1−p)^a), degenerating to the
/// logarithmic distribution −p^u/(u ln(1−p)) as a → 0.
pub fn tnb_log_pmf(u: u64, a: f64, p: f64) -> Result<f64> {
    let p = check_tnb_params(a, p)?;
    if u == 0 {
        return Err(Error::InvalidParameter(
            "truncated NB support starts at u = 1".into(),
        ));
    }
    let uf = u as f64;
    if a.abs() < DISCOUNT_LIMIT_EPS {
        return Ok(uf * p.ln() - uf.ln() - (-(1.0 - p).ln()).ln());
    }
    let log_ratio = ln_gamma(uf - a) - ln_gamma(1.0 - a) - ln_gamma(uf + 1.0);
    Ok(log_ratio + uf * p.ln() + a.abs().ln() - log_abs_one_minus_pow(a, p))
}

/// Mean of TNB(a, p): [a(1−p)^a/(1−(1−p)^a)] · p/(1−p), with limit
/// −p/((1−p) ln(1−p)).
pub fn tnb_mean(a: f64, p: f64) -> f64 {
    let odds = p / (1.0 - p);
    if a.abs() < DISCOUNT_LIMIT_EPS {
        return -odds / (1.0 - p).ln();
    }
    odds / rate_factor_reparameterized(a, p)
}

/// [`tnb_mean`] parameterized by the odds p/(1−p), so that probabilities
/// indistinguishable from 1 in f64 (odds beyond ~1e16) stay representable.
pub fn tnb_mean_from_odds(a: f64, odds: f64) -> f64 {
    let log_q = -odds.ln_1p(); // ln(1−p)
    if a.abs() < DISCOUNT_LIMIT_EPS {
        return -odds / log_q;
    }
    let e = a * log_q;
    odds * a * e.exp() / -e.exp_m1()
}

/// Exact TNB draw by sequential CDF inversion using the ratio recurrence
/// f(u+1)/f(u) = p(u−a)/(u+1).
pub fn tnb_sample<R: Rng + ?Sized>(a: f64, p: f64, rng: &mut R) -> Result<u64> {
    let p = check_tnb_params(a, p)?;
    let target: f64 = rng.random();
    let mut u = 1u64;
    let mut mass = tnb_log_pmf(1, a, p)?.exp();
    let mut cdf = mass;
    while target > cdf {
        if u >= INVERSION_CAP {
            return Err(Error::SamplerOverflow);
        }
        mass *= p * (u as f64 - a) / (u as f64 + 1.0);
        u += 1;
        cdf += mass;
    }
    Ok(u)
}

/// Log-PMF of the generalized NB distribution through the Stirling-sum
/// form f(m) = (p^m/m!) e^{−λ} Σ_{l=0}^m (γ0 p^{−a})^l S_a(m, l), whose
/// terms are all positive.
pub fn gnb_log_pmf(m: u64, params: &ModelParams, triangle: &StirlingTriangle) -> Result<f64> {
    let rate = params.poisson_rate();
    if m == 0 {
        return Ok(-rate);
    }
    triangle.check_covers(m as usize, params.discount())?;
    let mf = m as f64;
    let log_w = params.new_cluster_weight().ln();
    let terms: Vec<f64> = (1..=m as usize)
        .map(|l| l as f64 * log_w + triangle.log_stirling(m as usize, l))
        .collect();
    Ok(mf * params.prob().ln() - ln_gamma(mf + 1.0) - rate + log_sum_exp(&terms))
}

/// Exact gNB draw through the compound Poisson representation:
/// a Poisson number of TNB summands.
pub fn gnb_sample<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> Result<u64> {
    let rate = params.poisson_rate();
    if !rate.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "non-finite cluster-count rate {rate}"
        )));
    }
    let clusters = Poisson::new(rate)
        .map_err(|e| Error::InvalidParameter(format!("poisson rate {rate}: {e}")))?
        .sample(rng) as u64;
    let mut total = 0u64;
    for _ in 0..clusters {
        total += tnb_sample(params.discount(), params.prob(), rng)?;
    }
    Ok(total)
}

/// Closed-form (mean, variance) of the gNB sample-size law.
pub fn gnb_moments(params: &ModelParams) -> (f64, f64) {
    let p = params.prob();
    let odds = p / (1.0 - p);
    let mean = match params.parameterization() {
        Parameterization::Original => params.mass() * odds.powf(1.0 - params.discount()),
        Parameterization::Reparameterized => params.mass() * odds,
    };
    let var = mean * (1.0 - params.discount() * p) / (1.0 - p);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{gnb_log_pmf_series, seeded_rng};

    #[test]
    fn params_validation_and_clamping() {
        assert!(ModelParams::original(0.0, 0.5, 0.5).is_err());
        assert!(ModelParams::original(1.0, 1.0, 0.5).is_err());
        assert!(ModelParams::original(1.0, 0.5, -0.1).is_err());
        assert!(ModelParams::original(1.0, 0.5, 0.0).is_err());
        let low = ModelParams::original(1.0, 0.5, 1e-9).unwrap();
        assert!(low.prob_clamped());
        assert_eq!(low.prob(), PROB_GUARD);
        // solved probabilities can round to exactly 1 at strong discounts
        let high = ModelParams::original(1.0, 0.5, 1.0).unwrap();
        assert!(high.prob_clamped());
        assert_eq!(high.prob(), 1.0 - PROB_GUARD);
        let plain = ModelParams::original(1.0, 0.5, 0.5).unwrap();
        assert!(!plain.prob_clamped());
    }

    #[test]
    fn new_cluster_weight_agrees_across_parameterizations() {
        let orig = ModelParams::original(1.0, 0.5, 0.25).unwrap();
        let h0 = orig.mass() * ((1.0 - 0.25) / 0.25_f64).powf(0.5);
        let rep = ModelParams::reparameterized(h0, 0.5, 0.25).unwrap();
        assert!((orig.new_cluster_weight() - rep.new_cluster_weight()).abs() < 1e-12);
        assert!((orig.poisson_rate() - rep.poisson_rate()).abs() < 1e-12);
        assert!((rep.gamma0() - orig.mass()).abs() < 1e-12);
    }

    #[test]
    fn rate_factor_limits_and_extremes() {
        // a → 0 limit agrees with the general expm1 path just outside the switch
        for &p in &[0.1, 0.5, 0.9] {
            let lim = -(1.0_f64 - p).ln();
            for &a in &[1e-8, -1e-8] {
                assert!((rate_factor_original(a, p) / lim - 1.0).abs() < 1e-6);
                assert!((rate_factor_reparameterized(a, p) / lim - 1.0).abs() < 1e-6);
            }
        }
        // extreme negative discounts overflow cleanly rather than NaN
        let v = rate_factor_original(-9998.0, 0.9);
        assert!(v.is_infinite() && v > 0.0);
        let w = rate_factor_original(-9998.0, 0.5);
        assert!((w - 1.0 / 9998.0).abs() < 1e-7);
    }

    #[test]
    fn tnb_log_pmf_known_values() {
        // ap/(1−(1−p)^a) = 0.375/0.5 at u = 1
        assert!((tnb_log_pmf(1, 0.5, 0.75).unwrap() - 0.75_f64.ln()).abs() < 1e-12);
        // logarithmic limit −p/ln(1−p)
        let expect = (0.5 / std::f64::consts::LN_2).ln();
        assert!((tnb_log_pmf(1, 0.0, 0.5).unwrap() - expect).abs() < 1e-12);
        assert!(tnb_log_pmf(0, 0.5, 0.5).is_err());
    }

    #[test]
    fn tnb_ratio_recurrence_holds() {
        for &(a, p) in &[(-4.0, 0.3), (-0.5, 0.75), (0.0, 0.5), (0.5, 0.9)] {
            for u in 1..30u64 {
                let lhs = tnb_log_pmf(u + 1, a, p).unwrap() - tnb_log_pmf(u, a, p).unwrap();
                let rhs = (p * (u as f64 - a) / (u as f64 + 1.0)).ln();
                assert!((lhs - rhs).abs() < 1e-10, "a={a} p={p} u={u}");
            }
        }
    }

    #[test]
    fn tnb_normalizes_and_matches_pgf() {
        for &a in &[-4.0, -1.0, 0.0, 0.25, 0.5] {
            for &p in &[0.1, 0.3, 0.5, 0.7, 0.9] {
                let mut total = 0.0;
                let mut pgf3 = 0.0;
                let mut pgf7 = 0.0;
                let mut mass = tnb_log_pmf(1, a, p).unwrap().exp();
                let mut u = 1u64;
                loop {
                    total += mass;
                    pgf3 += mass * 0.3_f64.powi(u as i32);
                    pgf7 += mass * 0.7_f64.powi(u as i32);
                    if mass * p / (1.0 - p) < 1e-14 && u > 8 {
                        break;
                    }
                    mass *= p * (u as f64 - a) / (u as f64 + 1.0);
                    u += 1;
                }
                assert!((total - 1.0).abs() < 1e-10, "a={a} p={p}: total {total}");
                for (t, got) in [(0.3, pgf3), (0.7, pgf7)] {
                    let expect = if a.abs() < DISCOUNT_LIMIT_EPS {
                        (1.0 - p * t).ln() / (1.0 - p).ln()
                    } else {
                        (1.0 - (1.0 - p * t).powf(a)) / (1.0 - (1.0 - p).powf(a))
                    };
                    assert!((got - expect).abs() < 1e-8, "pgf a={a} p={p} t={t}");
                }
            }
        }
    }

    #[test]
    fn tnb_sample_mean_matches_closed_form() {
        let mut rng = seeded_rng(11);
        let n = 1_000_000;
        let mut sum = 0u64;
        for _ in 0..n {
            let u = tnb_sample(0.5, 0.75, &mut rng).unwrap();
            assert!(u >= 1);
            sum += u;
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 1.5).abs() < 0.01, "mean {mean}");

        let mut sum = 0u64;
        for _ in 0..n {
            sum += tnb_sample(0.0, 0.5, &mut rng).unwrap();
        }
        let mean = sum as f64 / n as f64;
        let expect = -0.5 / (0.5 * 0.5_f64.ln());
        assert!((mean - expect).abs() < 0.01, "mean {mean} vs {expect}");
    }

    #[test]
    fn gnb_log_pmf_closed_form_at_zero() {
        let params = ModelParams::original(1.0, 0.5, 0.75).unwrap();
        let t = StirlingTriangle::build(4, 0.5).unwrap();
        let expect = -(1.0 - 0.25_f64.sqrt()) / (0.5 * 0.75_f64.sqrt());
        assert!((gnb_log_pmf(0, &params, &t).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn gnb_matches_nb_near_zero_discount() {
        let a = 1e-9;
        let gamma0 = 1.4;
        let p = 0.35;
        let params = ModelParams::original(gamma0, a, p).unwrap();
        let t = StirlingTriangle::build(40, a).unwrap();
        for m in 0..40u64 {
            let mf = m as f64;
            let nb = ln_gamma(mf + gamma0) - ln_gamma(gamma0) - ln_gamma(mf + 1.0)
                + mf * p.ln()
                + gamma0 * (1.0 - p).ln();
            let got = gnb_log_pmf(m, &params, &t).unwrap();
            assert!((got - nb).abs() < 1e-6, "m={m}: {got} vs {nb}");
        }
    }

    #[test]
    fn gnb_normalizes() {
        let t = StirlingTriangle::build(400, -1.0).unwrap();
        let params = ModelParams::original(1.0, -1.0, 0.4).unwrap();
        let total: f64 = (0..=400u64)
            .map(|m| gnb_log_pmf(m, &params, &t).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-10, "total {total}");
    }

    #[test]
    fn gnb_matches_alternating_series_oracle() {
        for &(gamma0, a, p) in &[(1.0, 0.5, 0.5), (2.0, -1.0, 0.3), (0.7, 0.9, 0.6), (1.3, -0.5, 0.7)] {
            let params = ModelParams::original(gamma0, a, p).unwrap();
            let t = StirlingTriangle::build(10, a).unwrap();
            for m in 0..=10u64 {
                let series = gnb_log_pmf_series(m, gamma0, a, p);
                let got = gnb_log_pmf(m, &params, &t).unwrap().exp();
                assert!(
                    (got / series - 1.0).abs() < 1e-8,
                    "γ0={gamma0} a={a} p={p} m={m}: {got} vs {series}"
                );
            }
        }
    }

    #[test]
    fn gnb_scale_identity_is_exact() {
        let h0 = 0.8;
        let a = -0.7;
        let p = 0.45;
        let rep = ModelParams::reparameterized(h0, a, p).unwrap();
        let orig = ModelParams::original(h0 * (p / (1.0 - p)).powf(a), a, p).unwrap();
        let t = StirlingTriangle::build(30, a).unwrap();
        for m in 0..=30u64 {
            assert_eq!(
                gnb_log_pmf(m, &rep, &t).unwrap(),
                gnb_log_pmf(m, &orig, &t).unwrap()
            );
        }
    }

    #[test]
    fn gnb_sample_moments_and_histogram() {
        let mut rng = seeded_rng(7);
        let params = ModelParams::original(1.0, 0.5, 0.5).unwrap();
        let n = 1_000_000usize;
        let mut sum = 0u64;
        let mut counts = vec![0u64; 51];
        for _ in 0..n {
            let m = gnb_sample(&params, &mut rng).unwrap();
            sum += m;
            if m <= 50 {
                counts[m as usize] += 1;
            }
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");

        let t = StirlingTriangle::build(50, 0.5).unwrap();
        let tv: f64 = (0..=50u64)
            .map(|m| {
                let emp = counts[m as usize] as f64 / n as f64;
                let pmf = gnb_log_pmf(m, &params, &t).unwrap().exp();
                (emp - pmf).abs()
            })
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.005, "total variation {tv}");
    }

    #[test]
    fn gnb_sample_matches_nb_moments_at_zero_discount() {
        let mut rng = seeded_rng(13);
        let params = ModelParams::original(1.0, 0.0, 0.5).unwrap();
        let n = 400_000usize;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let m = gnb_sample(&params, &mut rng).unwrap() as f64;
            sum += m;
            sumsq += m * m;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let (em, ev) = gnb_moments(&params);
        assert!((mean - em).abs() < 3.0 * (ev / n as f64).sqrt() + 1e-3);
        assert!((var - ev).abs() < 0.05, "var {var} vs {ev}");
    }

    #[test]
    fn gnb_moment_formulas() {
        let (m, v) = gnb_moments(&ModelParams::original(1.0, 0.0, 0.5).unwrap());
        assert!((m - 1.0).abs() < 1e-12 && (v - 2.0).abs() < 1e-12);
        let (m, v) = gnb_moments(&ModelParams::original(2.0, 0.5, 0.5).unwrap());
        assert!((m - 2.0).abs() < 1e-12 && (v - 3.0).abs() < 1e-12);
    }
}
