//! Shared helpers for unit tests. Oracles here deliberately avoid the
//! production code paths they are checked against.

use crate::special::compensated_sum;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;
use statrs::function::gamma::ln_gamma;

pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// gNB PMF through the exponentially tilted alternating series
/// f(m) = (p^m/m!) e^{γ0 (1−p)^a/(a p^a)} Σ_k (1/k!)(−γ0/(a p^a))^k Γ(m−ak)/Γ(−ak),
/// truncated once the factorial decay dominates.
pub fn gnb_log_pmf_series(m: u64, gamma0: f64, a: f64, p: f64) -> f64 {
    let x = -gamma0 / (a * p.powf(a));
    let sum = poly_exp_series(m as usize, a, x);
    let tilt = gamma0 * (1.0 - p).powf(a) / (a * p.powf(a));
    (m as f64 * p.ln() - ln_gamma(m as f64 + 1.0) + tilt).exp() * sum
}

/// Σ_{k>=0} x^k/k! · Γ(m−ak)/Γ(−ak) with Γ(m−ak)/Γ(−ak) = Π_{j<m}(j−ak).
pub fn poly_exp_series(m: usize, a: f64, x: f64) -> f64 {
    let mut terms = Vec::new();
    let mut weight = 1.0_f64; // x^k / k!
    let mut k = 0usize;
    loop {
        let ak = a * k as f64;
        let mut prod = 1.0_f64;
        for j in 0..m {
            prod *= j as f64 - ak;
        }
        terms.push(weight * prod);
        k += 1;
        weight *= x / k as f64;
        if k > 16 && weight.abs() * (1.0 + (a * k as f64).abs()).powi(m as i32) < 1e-22 {
            break;
        }
        assert!(k < 10_000, "series failed to converge");
    }
    compensated_sum(terms)
}

/// Integer partitions of m (sizes in non-increasing order).
pub fn integer_partitions(m: usize) -> Vec<Vec<usize>> {
    fn recurse(rest: usize, cap: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(acc.clone());
            return;
        }
        for next in (1..=rest.min(cap)).rev() {
            acc.push(next);
            recurse(rest - next, next, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    recurse(m, m, &mut Vec::new(), &mut out);
    out
}

/// Number of set partitions of [m] whose multiset of cluster sizes equals
/// `sizes`: m! / (Π n_k! · Π_j c_j!) with c_j the multiplicity of size j.
pub fn partition_count_for_sizes(sizes: &[usize]) -> f64 {
    let m: usize = sizes.iter().sum();
    let mut log_count = ln_gamma(m as f64 + 1.0);
    for &n in sizes {
        log_count -= ln_gamma(n as f64 + 1.0);
    }
    let mut mult = std::collections::BTreeMap::new();
    for &n in sizes {
        *mult.entry(n).or_insert(0usize) += 1;
    }
    for (_, c) in mult {
        log_count -= ln_gamma(c as f64 + 1.0);
    }
    log_count.exp().round()
}

/// Ewens sampling formula: P(partition with sizes n_1..n_l of [m]) =
/// γ0^l Γ(γ0)/Γ(m+γ0) Π_k Γ(n_k).
pub fn ewens_log_prob(sizes: &[usize], gamma0: f64) -> f64 {
    let m: usize = sizes.iter().sum();
    let mut lp = sizes.len() as f64 * gamma0.ln() + ln_gamma(gamma0)
        - ln_gamma(m as f64 + gamma0);
    for &n in sizes {
        lp += ln_gamma(n as f64);
    }
    lp
}

/// Total variation distance between a sample histogram over 0..len and a
/// probability vector.
pub fn tv_counts_vs_probs(counts: &[u64], total: u64, probs: &[f64]) -> f64 {
    let n = counts.len().max(probs.len());
    let mut tv = 0.0;
    for i in 0..n {
        let emp = counts.get(i).copied().unwrap_or(0) as f64 / total as f64;
        let p = probs.get(i).copied().unwrap_or(0.0);
        tv += (emp - p).abs();
    }
    tv / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_partition_counts() {
        assert_eq!(integer_partitions(4).len(), 5);
        assert_eq!(integer_partitions(8).len(), 22);
    }

    #[test]
    fn multiplicity_counts_sum_to_bell() {
        let total: f64 = integer_partitions(8)
            .iter()
            .map(|sizes| partition_count_for_sizes(sizes))
            .sum();
        assert_eq!(total, 4140.0);
    }
}
