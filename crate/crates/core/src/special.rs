//! Log-space special functions: log-gamma ratios and generalized Stirling
//! numbers of the first kind.
//!
//! The generalized Stirling numbers `S_a(m, l)` with discount `a < 1` satisfy
//! `S_a(m, 1) = Γ(m−a)/Γ(1−a)`, `S_a(m, m) = 1` and the recurrence
//! `S_a(m+1, l) = (m − a·l)·S_a(m, l) + S_a(m, l−1)`. For `a < 1` and
//! `l <= m` every coefficient `m − a·l` is positive, so the whole triangle is
//! positive and can be stored in log space; direct storage overflows already
//! for a few hundred elements.

use crate::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Largest `m` accepted by the enumeration-based oracles.
pub const ORACLE_M_MAX: usize = 14;

/// log(exp(a) + exp(b)) without overflow; handles -inf inputs.
pub fn log_sum_exp_pair(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// log(Σ exp(x_i)) over a slice; -inf for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Neumaier compensated summation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn check_discount(a: f64) -> Result<()> {
    if !a.is_finite() || a >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "discount must be a finite real < 1, got {a}"
        )));
    }
    Ok(())
}

/// log(Γ(n−a)/Γ(1−a)) = Σ_{j=1}^{n−1} log(j−a), the ascending factorial of
/// (1−a) in log space. Exact zero at `n = 1`.
pub fn log_gamma_ratio(n: usize, a: f64) -> Result<f64> {
    check_discount(a)?;
    if n == 0 {
        return Err(Error::InvalidParameter(
            "log_gamma_ratio requires n >= 1".into(),
        ));
    }
    if n == 1 {
        return Ok(0.0);
    }
    Ok(ln_gamma(n as f64 - a) - ln_gamma(1.0 - a))
}

/// Lower-triangular table of log S_a(m, l) for 1 <= l <= m <= m_max.
#[derive(Debug, Clone)]
pub struct StirlingTriangle {
    discount: f64,
    m_max: usize,
    log_values: Vec<f64>,
}

impl StirlingTriangle {
    /// Fills the triangle by the positive-term recurrence, with all
    /// additions performed as two-term log-sum-exp.
    pub fn build(m_max: usize, a: f64) -> Result<Self> {
        check_discount(a)?;
        if m_max == 0 {
            return Err(Error::InvalidParameter(
                "stirling triangle requires m_max >= 1".into(),
            ));
        }
        let mut log_values = vec![0.0_f64; m_max * (m_max + 1) / 2];
        // Row m = 1 is the single entry S_a(1,1) = 1.
        for m in 1..m_max {
            let (lo, hi) = log_values.split_at_mut(Self::row_start(m + 1));
            let prev = &lo[Self::row_start(m)..];
            let next = &mut hi[..m + 1];
            let mf = m as f64;
            next[0] = (mf - a).ln() + prev[0];
            for l in 2..=m {
                next[l - 1] = log_sum_exp_pair(
                    (mf - a * l as f64).ln() + prev[l - 1],
                    prev[l - 2],
                );
            }
            next[m] = 0.0; // S_a(m+1, m+1) = 1
        }
        Ok(Self {
            discount: a,
            m_max,
            log_values,
        })
    }

    fn row_start(m: usize) -> usize {
        m * (m - 1) / 2
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    /// log S_a(m, l). Panics if (m, l) is outside 1 <= l <= m <= m_max.
    pub fn log_stirling(&self, m: usize, l: usize) -> f64 {
        assert!(
            l >= 1 && l <= m && m <= self.m_max,
            "log_stirling index out of range: m={m}, l={l}, m_max={}",
            self.m_max
        );
        self.log_values[Self::row_start(m) + l - 1]
    }

    /// Errors unless the triangle was built at exactly `a` and covers `m`.
    pub fn check_covers(&self, m: usize, a: f64) -> Result<()> {
        if self.discount != a {
            return Err(Error::TriangleMismatch(format!(
                "triangle discount {} != requested {a}",
                self.discount
            )));
        }
        if m > self.m_max {
            return Err(Error::TriangleMismatch(format!(
                "triangle covers m <= {}, requested {m}",
                self.m_max
            )));
        }
        Ok(())
    }
}

fn check_oracle_range(m: usize, l: usize) -> Result<()> {
    if m > ORACLE_M_MAX {
        return Err(Error::EnumerationLimit {
            m,
            max: ORACLE_M_MAX,
        });
    }
    if l == 0 || l > m {
        return Err(Error::InvalidParameter(format!(
            "stirling oracle requires 1 <= l <= m, got m={m}, l={l}"
        )));
    }
    Ok(())
}

/// S_a(m, l) by brute force over compositions:
/// (m!/l!) Σ_{n_1+..+n_l=m} Π_k Γ(n_k−a)/(n_k! Γ(1−a)), all n_k >= 1.
///
/// Independent of the triangle recurrence; capped at `m <= 14` where the
/// composition count stays trivial.
pub fn stirling_oracle(m: usize, l: usize, a: f64) -> Result<f64> {
    check_discount(a)?;
    check_oracle_range(m, l)?;
    // log of Γ(n−a)/(n! Γ(1−a)) per part size n
    let part_log: Vec<f64> = (0..=m)
        .map(|n| {
            if n == 0 {
                f64::NEG_INFINITY
            } else {
                ln_gamma(n as f64 - a) - ln_gamma(1.0 - a) - ln_gamma(n as f64 + 1.0)
            }
        })
        .collect();
    let mut terms = Vec::new();
    fn recurse(rest: usize, parts: usize, acc: f64, part_log: &[f64], out: &mut Vec<f64>) {
        if parts == 1 {
            out.push((acc + part_log[rest]).exp());
            return;
        }
        for n in 1..=(rest - parts + 1) {
            recurse(rest - n, parts - 1, acc + part_log[n], part_log, out);
        }
    }
    recurse(m, l, 0.0, &part_log, &mut terms);
    let scale = (ln_gamma(m as f64 + 1.0) - ln_gamma(l as f64 + 1.0)).exp();
    Ok(scale * compensated_sum(terms))
}

/// Unevaluated double-precision pair: value = hi + lo. Alternating sums
/// cancel catastrophically in plain f64, so the oracle carries products
/// and partial sums at doubled precision.
#[derive(Debug, Clone, Copy)]
struct TwoFloat {
    hi: f64,
    lo: f64,
}

impl TwoFloat {
    fn from(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Self {
        let hi = a + b;
        let v = hi - a;
        let lo = (a - (hi - v)) + (b - v);
        Self { hi, lo }
    }

    fn two_prod(a: f64, b: f64) -> Self {
        let hi = a * b;
        let lo = a.mul_add(b, -hi);
        Self { hi, lo }
    }

    fn add(self, other: Self) -> Self {
        let s = Self::two_sum(self.hi, other.hi);
        let lo = s.lo + self.lo + other.lo;
        Self::two_sum(s.hi, lo)
    }

    fn mul(self, other: Self) -> Self {
        let p = Self::two_prod(self.hi, other.hi);
        let lo = p.lo + self.hi * other.lo + self.lo * other.hi;
        Self::two_sum(p.hi, lo)
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// S_a(m, l) through the alternating binomial sum
/// (1/(l! a^l)) Σ_{k=0}^l (−1)^k C(l,k) Γ(m−ak)/Γ(−ak), requiring `a != 0`.
///
/// Evaluated in paired double precision; at oracle scale the remaining
/// error comes only from the cancellation of exactly represented terms.
pub fn stirling_alternating(m: usize, l: usize, a: f64) -> Result<f64> {
    check_discount(a)?;
    check_oracle_range(m, l)?;
    if a == 0.0 {
        return Err(Error::InvalidParameter(
            "alternating stirling form is undefined at a = 0".into(),
        ));
    }
    let mut binom = 1.0_f64; // C(l, k), exact integers at this scale
    let mut sum = TwoFloat::from(0.0);
    for k in 0..=l {
        if k > 0 {
            binom = binom * (l - k + 1) as f64 / k as f64;
        }
        // Γ(m−ak)/Γ(−ak) = Π_{j=0}^{m−1} (j − ak); zero at k = 0 for m >= 1
        let ak = TwoFloat::two_prod(a, k as f64);
        let mut prod = TwoFloat::from(1.0);
        for j in 0..m {
            let factor = TwoFloat::two_sum(j as f64, -ak.hi).add(TwoFloat::from(-ak.lo));
            prod = prod.mul(factor);
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum = sum.add(prod.mul(TwoFloat::from(sign * binom)));
    }
    let mut denom = TwoFloat::from(ln_gamma(l as f64 + 1.0).exp());
    for _ in 0..l {
        denom = denom.mul(TwoFloat::from(a));
    }
    Ok(sum.value() / denom.value())
}
