//! Exact partition probability functions.
//!
//! The ECPF is the joint law of a sample size m and its exchangeable random
//! partition; dividing by the marginal sample-size PMF gives the EPPF. The
//! EPPF here generally violates the addition rule linking partitions of [m]
//! and [m+1] whenever the discount is nonzero, which is what makes the
//! partition law of a subset depend on the total sample size. A brute-force
//! set-partition enumerator serves as the correctness oracle for the
//! normalization and marginalization identities.

use crate::dist::ModelParams;
use crate::special::{log_gamma_ratio, log_sum_exp, StirlingTriangle};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Largest m accepted by the exhaustive partition enumerator; the Bell
/// numbers explode beyond this.
pub const ENUMERATION_M_MAX: usize = 12;

/// A partition of {0, .., m−1} with cluster labels assigned in order of
/// appearance: label k is introduced by the first element of cluster k.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    assignments: Vec<usize>,
    sizes: Vec<usize>,
}

impl Partition {
    /// The partition of zero elements.
    pub fn empty() -> Self {
        Self {
            assignments: Vec::new(),
            sizes: Vec::new(),
        }
    }

    /// Builds from arbitrary labels, relabeling in order of appearance.
    pub fn from_assignments(raw: &[usize]) -> Self {
        let mut map: Vec<(usize, usize)> = Vec::new(); // (raw label, canonical)
        let mut assignments = Vec::with_capacity(raw.len());
        let mut sizes = Vec::new();
        for &label in raw {
            let canonical = match map.iter().find(|(r, _)| *r == label) {
                Some(&(_, c)) => c,
                None => {
                    let c = sizes.len();
                    map.push((label, c));
                    sizes.push(0);
                    c
                }
            };
            sizes[canonical] += 1;
            assignments.push(canonical);
        }
        Self { assignments, sizes }
    }

    /// Every element in its own cluster.
    pub fn singletons(m: usize) -> Self {
        Self {
            assignments: (0..m).collect(),
            sizes: vec![1; m],
        }
    }

    /// All elements in one cluster.
    pub fn single_cluster(m: usize) -> Self {
        if m == 0 {
            return Self::empty();
        }
        Self {
            assignments: vec![0; m],
            sizes: vec![m],
        }
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of elements m.
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Number of clusters l.
    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    /// The partition restricted to the first j elements (relabeled).
    pub fn restrict(&self, j: usize) -> Partition {
        Partition::from_assignments(&self.assignments[..j.min(self.len())])
    }
}

/// Σ_k log(Γ(n_k−a)/Γ(1−a)), accumulated over sorted sizes so the value
/// depends only on the size multiset, making exchangeability exact.
fn log_gamma_ratio_product(sizes: &[usize], a: f64) -> f64 {
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted
        .iter()
        .map(|&n| log_gamma_ratio(n, a).expect("validated discount"))
        .sum()
}

/// Log of the joint probability of (z, m): the fully factorized
/// f(z, m) = (1/m!) e^{−λ} γ0^l p^{m−al} Π_k Γ(n_k−a)/Γ(1−a), with the
/// reparameterized form evaluated through γ0 = h0 (p/(1−p))^a.
pub fn log_ecpf(part: &Partition, params: &ModelParams) -> f64 {
    let m = part.len();
    let l = part.cluster_count();
    let rate = params.poisson_rate();
    if m == 0 {
        return -rate;
    }
    let a = params.discount();
    -ln_gamma(m as f64 + 1.0) - rate
        + l as f64 * params.gamma0().ln()
        + (m as f64 - a * l as f64) * params.prob().ln()
        + log_gamma_ratio_product(part.sizes(), a)
}

/// Log EPPF evaluated from a size multiset; the partition law depends on
/// nothing else.
pub fn log_eppf_sizes(
    sizes: &[usize],
    params: &ModelParams,
    triangle: &StirlingTriangle,
) -> Result<f64> {
    let m: usize = sizes.iter().sum();
    if sizes.iter().any(|&n| n == 0) {
        return Err(Error::InvalidParameter("cluster sizes must be >= 1".into()));
    }
    if m == 0 {
        return Ok(0.0);
    }
    triangle.check_covers(m, params.discount())?;
    let log_w = params.new_cluster_weight().ln();
    let log_norm = log_sum_exp(
        &(1..=m)
            .map(|l| l as f64 * log_w + triangle.log_stirling(m, l))
            .collect::<Vec<_>>(),
    );
    Ok(sizes.len() as f64 * log_w + log_gamma_ratio_product(sizes, params.discount()) - log_norm)
}

/// Log probability of a partition given its sample size:
/// f(z|m) = (γ0 p^{−a})^l Π_k Γ(n_k−a)/Γ(1−a) / Σ_l (γ0 p^{−a})^l S_a(m, l).
pub fn log_eppf(
    part: &Partition,
    params: &ModelParams,
    triangle: &StirlingTriangle,
) -> Result<f64> {
    log_eppf_sizes(part.sizes(), params, triangle)
}

/// Unnormalized prediction-rule weights: n_k − a per existing cluster and
/// γ0 p^{−a} (equivalently h0 (1−p)^{−a}) for a new one.
pub fn prediction_weights(sizes: &[usize], params: &ModelParams) -> Vec<f64> {
    let a = params.discount();
    let mut weights: Vec<f64> = sizes.iter().map(|&n| n as f64 - a).collect();
    weights.push(params.new_cluster_weight());
    weights
}

/// Signed residual of the addition rule at one partition:
/// p_m(n_1..n_l) − p_{m+1}(n_1..n_l, 1) − Σ_k p_{m+1}(n_1..n_k+1..n_l).
/// Zero within tolerance iff the EPPF is consistent there.
pub fn addition_rule_residual(
    part: &Partition,
    params: &ModelParams,
    triangle: &StirlingTriangle,
) -> Result<f64> {
    let sizes = part.sizes();
    let here = log_eppf_sizes(sizes, params, triangle)?.exp();
    let mut extended = sizes.to_vec();
    extended.push(1);
    let mut total = log_eppf_sizes(&extended, params, triangle)?.exp();
    let mut grown = sizes.to_vec();
    for k in 0..sizes.len() {
        grown[k] += 1;
        total += log_eppf_sizes(&grown, params, triangle)?.exp();
        grown[k] -= 1;
    }
    Ok(here - total)
}

/// Probability that the restriction of a partition of [m] to the first j
/// elements equals `sub`, by exhaustive enumeration of all extensions.
pub fn size_dependent_eppf(
    sub: &Partition,
    m: usize,
    params: &ModelParams,
    triangle: &StirlingTriangle,
) -> Result<f64> {
    let j = sub.len();
    if j > m {
        return Err(Error::InvalidParameter(format!(
            "restriction size {j} exceeds sample size {m}"
        )));
    }
    if m > ENUMERATION_M_MAX {
        return Err(Error::EnumerationLimit {
            m,
            max: ENUMERATION_M_MAX,
        });
    }
    if j == m {
        return Ok(log_eppf(sub, params, triangle)?.exp());
    }
    triangle.check_covers(m, params.discount())?;
    // Extensions assign elements j..m−1 to existing clusters or new ones;
    // because later elements only ever open higher labels, the restriction
    // of every extension to the first j elements is exactly `sub`.
    let mut sizes = sub.sizes().to_vec();
    let mut total = 0.0;
    fn recurse(
        sizes: &mut Vec<usize>,
        placed: usize,
        m: usize,
        params: &ModelParams,
        triangle: &StirlingTriangle,
        total: &mut f64,
    ) -> Result<()> {
        if placed == m {
            *total += log_eppf_sizes(sizes, params, triangle)?.exp();
            return Ok(());
        }
        for k in 0..sizes.len() {
            sizes[k] += 1;
            recurse(sizes, placed + 1, m, params, triangle, total)?;
            sizes[k] -= 1;
        }
        sizes.push(1);
        recurse(sizes, placed + 1, m, params, triangle, total)?;
        sizes.pop();
        Ok(())
    }
    recurse(&mut sizes, j, m, params, triangle, &mut total)?;
    Ok(total)
}

/// Iterator over every set partition of {0, .., m−1} in canonical
/// order-of-appearance labeling (restricted growth strings, lexicographic).
pub fn enumerate_partitions(m: usize) -> Result<PartitionIter> {
    if m == 0 || m > ENUMERATION_M_MAX {
        return Err(Error::EnumerationLimit {
            m,
            max: ENUMERATION_M_MAX,
        });
    }
    Ok(PartitionIter {
        labels: vec![0; m],
        maxes: vec![0; m],
        started: false,
        done: false,
    })
}

pub struct PartitionIter {
    labels: Vec<usize>,
    maxes: Vec<usize>,
    started: bool,
    done: bool,
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(Partition::from_assignments(&self.labels));
        }
        let m = self.labels.len();
        let mut i = m;
        loop {
            i -= 1;
            if i == 0 {
                self.done = true;
                return None;
            }
            if self.labels[i] <= self.maxes[i - 1] {
                break;
            }
        }
        self.labels[i] += 1;
        self.maxes[i] = self.maxes[i - 1].max(self.labels[i]);
        for k in i + 1..m {
            self.labels[k] = 0;
            self.maxes[k] = self.maxes[i];
        }
        Some(Partition::from_assignments(&self.labels))
    }
}

/// Bell numbers B_1..B_12, the partition counts at enumerator scale.
pub fn bell_number(m: usize) -> Option<u64> {
    const BELL: [u64; 13] = [
        1, 1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115_975, 678_570, 4_213_597,
    ];
    BELL.get(m).copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::gnb_log_pmf;
    use crate::test_support::{ewens_log_prob, integer_partitions, partition_count_for_sizes};
    use proptest::prelude::*;

    fn params_051() -> ModelParams {
        ModelParams::original(1.0, 0.5, 0.25).unwrap()
    }

    #[test]
    fn canonical_form_is_enforced() {
        let p = Partition::from_assignments(&[7, 3, 7, 1, 3]);
        assert_eq!(p.assignments(), &[0, 1, 0, 2, 1]);
        assert_eq!(p.sizes(), &[2, 2, 1]);
        assert_eq!(p.cluster_count(), 3);
        assert_eq!(p.len(), 5);
        assert_eq!(p.restrict(3).assignments(), &[0, 1, 0]);
    }

    #[test]
    fn enumerator_counts_match_bell_numbers() {
        for m in 1..=8 {
            let count = enumerate_partitions(m).unwrap().count() as u64;
            assert_eq!(count, bell_number(m).unwrap(), "m={m}");
        }
        assert!(enumerate_partitions(13).is_err());
        assert!(enumerate_partitions(0).is_err());
    }

    #[test]
    fn enumerator_yields_canonical_partitions() {
        for part in enumerate_partitions(6).unwrap() {
            let rebuilt = Partition::from_assignments(part.assignments());
            assert_eq!(rebuilt, part);
            assert_eq!(part.sizes().iter().sum::<usize>(), 6);
        }
    }

    #[test]
    fn enumerator_m3_explicit() {
        let all: Vec<Vec<usize>> = enumerate_partitions(3)
            .unwrap()
            .map(|p| p.assignments().to_vec())
            .collect();
        assert_eq!(
            all,
            vec![
                vec![0, 0, 0],
                vec![0, 0, 1],
                vec![0, 1, 0],
                vec![0, 1, 1],
                vec![0, 1, 2],
            ]
        );
    }

    #[test]
    fn ecpf_empty_partition_is_negative_rate() {
        let params = params_051();
        assert_eq!(log_ecpf(&Partition::empty(), &params), -params.poisson_rate());
    }

    #[test]
    fn ecpf_agrees_across_parameterizations() {
        let a = 0.5;
        let p = 0.25;
        let gamma0 = 1.3;
        let orig = ModelParams::original(gamma0, a, p).unwrap();
        let rep =
            ModelParams::reparameterized(gamma0 * ((1.0 - p) / p).powf(a), a, p).unwrap();
        for part in enumerate_partitions(5).unwrap() {
            let diff = (log_ecpf(&part, &orig) - log_ecpf(&part, &rep)).abs();
            assert!(diff < 1e-12, "{part:?}: {diff}");
        }
    }

    #[test]
    fn ecpf_marginalizes_to_sample_size_pmf() {
        let t = StirlingTriangle::build(6, 0.5).unwrap();
        let params = params_051();
        for m in 1..=5u64 {
            let total: f64 = enumerate_partitions(m as usize)
                .unwrap()
                .map(|part| log_ecpf(&part, &params).exp())
                .sum();
            let pmf = gnb_log_pmf(m, &params, &t).unwrap().exp();
            assert!((total / pmf - 1.0).abs() < 1e-9, "m={m}: {total} vs {pmf}");
        }
    }

    #[test]
    fn ecpf_increment_matches_prediction_weights() {
        // Removing one element changes the ECPF by ln(p/m) plus the log of
        // the prediction weight of re-adding it.
        let params = ModelParams::original(0.8, -1.5, 0.6).unwrap();
        for part in enumerate_partitions(6).unwrap() {
            let m = part.len();
            for i in 0..m {
                let mut raw: Vec<usize> = part.assignments().to_vec();
                let label = raw.remove(i);
                let reduced = Partition::from_assignments(&raw);
                let reduced_count = part.sizes()[label] - 1;
                let weight = if reduced_count == 0 {
                    params.new_cluster_weight()
                } else {
                    reduced_count as f64 - params.discount()
                };
                let lhs = log_ecpf(&part, &params) - log_ecpf(&reduced, &params);
                let rhs = params.prob().ln() - (m as f64).ln() + weight.ln();
                assert!((lhs - rhs).abs() < 1e-12, "{part:?} i={i}");
            }
        }
    }

    #[test]
    fn eppf_known_closed_form_for_pair() {
        // distinct pair at w = γ0 p^{−a} = 2: w/((1−a) + w) = 0.8
        let t = StirlingTriangle::build(2, 0.5).unwrap();
        let params = params_051();
        let distinct = Partition::from_assignments(&[0, 1]);
        let got = log_eppf(&distinct, &params, &t).unwrap().exp();
        assert!((got - 0.8).abs() < 1e-12);
        let tied = Partition::from_assignments(&[0, 0]);
        let got = log_eppf(&tied, &params, &t).unwrap().exp();
        assert!((got - 0.2).abs() < 1e-12);
    }

    #[test]
    fn eppf_normalizes_over_partitions() {
        let t = StirlingTriangle::build(6, -1.0).unwrap();
        let params = ModelParams::original(1.5, -1.0, 0.7).unwrap();
        for m in 1..=6 {
            let total: f64 = enumerate_partitions(m)
                .unwrap()
                .map(|part| log_eppf(&part, &params, &t).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-10, "m={m}: {total}");
        }
    }

    #[test]
    fn eppf_normalizes_through_multiplicity_route() {
        // Independent counting route: weight each size multiset by the number
        // of set partitions carrying it.
        let t = StirlingTriangle::build(8, 0.5).unwrap();
        let params = params_051();
        let total: f64 = integer_partitions(8)
            .iter()
            .map(|sizes| {
                partition_count_for_sizes(sizes)
                    * log_eppf_sizes(sizes, &params, &t).unwrap().exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-10, "{total}");
    }

    #[test]
    fn eppf_reduces_to_ewens_at_zero_discount() {
        let t = StirlingTriangle::build(10, 0.0).unwrap();
        let gamma0 = 1.9;
        let params = ModelParams::original(gamma0, 0.0, 0.35).unwrap();
        for m in [4usize, 7, 10] {
            for part in enumerate_partitions(m).unwrap() {
                let got = log_eppf(&part, &params, &t).unwrap();
                let want = ewens_log_prob(part.sizes(), gamma0);
                assert!((got - want).abs() < 1e-10, "{part:?}");
            }
        }
    }

    #[test]
    fn eppf_is_ecpf_over_marginal() {
        let t = StirlingTriangle::build(8, -0.5).unwrap();
        let params = ModelParams::original(1.1, -0.5, 0.45).unwrap();
        for m in 1..=8usize {
            for part in enumerate_partitions(m).unwrap() {
                let lhs = log_eppf(&part, &params, &t).unwrap();
                let rhs =
                    log_ecpf(&part, &params) - gnb_log_pmf(m as u64, &params, &t).unwrap();
                assert!((lhs - rhs).abs() < 1e-12, "m={m} {part:?}");
            }
        }
    }

    #[test]
    fn prediction_weights_closed_forms() {
        let params = params_051();
        let w = prediction_weights(&[3, 1], &params);
        assert_eq!(w.len(), 3);
        assert!((w[0] - 2.5).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12);
        assert!((w[2] - 2.0).abs() < 1e-12);

        let first = prediction_weights(&[], &params);
        assert_eq!(first.len(), 1);
        assert!((first[0] - 2.0).abs() < 1e-12);

        let crp = ModelParams::original(1.7, 0.0, 0.5).unwrap();
        let w = prediction_weights(&[4, 2, 1], &crp);
        assert_eq!(w, vec![4.0, 2.0, 1.0, 1.7]);
    }

    #[test]
    fn addition_rule_holds_at_zero_discount() {
        let t = StirlingTriangle::build(7, 0.0).unwrap();
        let params = ModelParams::original(1.3, 0.0, 0.6).unwrap();
        for m in 1..=6 {
            for part in enumerate_partitions(m).unwrap() {
                let r = addition_rule_residual(&part, &params, &t).unwrap();
                assert!(r.abs() < 1e-12, "m={m} {part:?}: residual {r}");
            }
        }
    }

    #[test]
    fn addition_rule_fails_at_nonzero_discount() {
        let t = StirlingTriangle::build(3, 0.5).unwrap();
        let params = params_051();
        let pair = Partition::from_assignments(&[0, 1]);
        let r = addition_rule_residual(&pair, &params, &t).unwrap();
        // closed forms: f(z1,z2|2) = w/((1−a)+w), and summing the three
        // partitions of [3] restricted to {1,2} gives (w² + 2(1−a)w)/D with
        // D = (2−a)(1−a) + 3(1−a)w + w², at w = 2, a = 0.5.
        let expected = 0.8 - 6.0 / 7.75;
        assert!(r.abs() > 1e-3);
        assert!((r - expected).abs() < 1e-12, "residual {r} vs {expected}");
    }

    #[test]
    fn addition_rule_trivial_for_single_element() {
        let t = StirlingTriangle::build(2, 0.5).unwrap();
        let params = params_051();
        let single = Partition::single_cluster(1);
        assert!((log_eppf(&single, &params, &t).unwrap().exp() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn size_dependent_matches_full_eppf_at_equal_sizes() {
        let t = StirlingTriangle::build(6, 0.5).unwrap();
        let params = params_051();
        for part in enumerate_partitions(5).unwrap() {
            let direct = log_eppf(&part, &params, &t).unwrap().exp();
            let via = size_dependent_eppf(&part, 5, &params, &t).unwrap();
            assert!((direct - via).abs() < 1e-14);
        }
    }

    #[test]
    fn size_dependent_closed_form_for_pair_in_three() {
        // f(z_{1:2}|3) = f(z_{1:2}|2) (1−a+w)(w+2−l₂a)/((1−a)(2−a)+(3−3a)w+w²)
        let t = StirlingTriangle::build(3, 0.5).unwrap();
        let params = params_051();
        let (a, w) = (0.5, 2.0);
        let denom = (1.0 - a) * (2.0 - a) + (3.0 - 3.0 * a) * w + w * w;
        for (sub, l2) in [
            (Partition::from_assignments(&[0, 1]), 2.0),
            (Partition::from_assignments(&[0, 0]), 1.0),
        ] {
            let base = log_eppf(&sub, &params, &t).unwrap().exp();
            let expect = base * (1.0 - a + w) * (w + 2.0 - l2 * a) / denom;
            let got = size_dependent_eppf(&sub, 3, &params, &t).unwrap();
            assert!((got - expect).abs() < 1e-12, "l2={l2}: {got} vs {expect}");
        }
    }

    #[test]
    fn size_dependent_one_step_recursion() {
        // f(z_{1:m−1}|m) = f(z_{1:m−1}|m−1) · (D_{m−1}/D_m)(w + (m−1) − a·l)
        let a = -1.0;
        let t = StirlingTriangle::build(6, a).unwrap();
        let params = ModelParams::original(0.9, a, 0.55).unwrap();
        let w = params.new_cluster_weight();
        let log_norm = |m: usize| {
            log_sum_exp(
                &(1..=m)
                    .map(|l| l as f64 * w.ln() + t.log_stirling(m, l))
                    .collect::<Vec<_>>(),
            )
        };
        for m in 2..=6usize {
            for sub in enumerate_partitions(m - 1).unwrap() {
                let base = log_eppf(&sub, &params, &t).unwrap().exp();
                let factor = (log_norm(m - 1) - log_norm(m)).exp()
                    * (w + (m - 1) as f64 - a * sub.cluster_count() as f64);
                let got = size_dependent_eppf(&sub, m, &params, &t).unwrap();
                assert!(
                    (got - base * factor).abs() < 1e-12,
                    "m={m} {sub:?}: {got} vs {}",
                    base * factor
                );
            }
        }
    }

    #[test]
    fn size_dependent_is_consistent_at_zero_discount() {
        let t = StirlingTriangle::build(8, 0.0).unwrap();
        let params = ModelParams::original(1.5, 0.0, 0.6).unwrap();
        for j in 1..=4usize {
            for sub in enumerate_partitions(j).unwrap() {
                let at_j = log_eppf(&sub, &params, &t).unwrap().exp();
                for m in j..=8usize {
                    let at_m = size_dependent_eppf(&sub, m, &params, &t).unwrap();
                    assert!((at_m - at_j).abs() < 1e-12, "j={j} m={m} {sub:?}");
                }
            }
        }
    }

    #[test]
    fn size_dependent_rejects_oversized_requests() {
        let t = StirlingTriangle::build(14, 0.5).unwrap();
        let params = params_051();
        let sub = Partition::single_cluster(2);
        assert!(size_dependent_eppf(&sub, 13, &params, &t).is_err());
        assert!(size_dependent_eppf(&sub, 1, &params, &t).is_err());
    }

    proptest! {
        #[test]
        fn eppf_is_exchangeable(raw in proptest::collection::vec(0usize..5, 1..10), seed in 0u64..1000) {
            let part = Partition::from_assignments(&raw);
            let m = part.len();
            // apply a seed-derived permutation of the element indices
            let mut order: Vec<usize> = (0..m).collect();
            let mut state = seed;
            for i in (1..m).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                order.swap(i, j);
            }
            let permuted: Vec<usize> = order.iter().map(|&i| raw[i]).collect();
            let shuffled = Partition::from_assignments(&permuted);
            let t = StirlingTriangle::build(m, -0.5).unwrap();
            let params = ModelParams::original(1.2, -0.5, 0.4).unwrap();
            let a = log_eppf(&part, &params, &t).unwrap();
            let b = log_eppf(&shuffled, &params, &t).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn canonicalization_is_idempotent(raw in proptest::collection::vec(0usize..6, 0..12)) {
            let once = Partition::from_assignments(&raw);
            let twice = Partition::from_assignments(once.assignments());
            prop_assert_eq!(once, twice);
        }
    }
}
