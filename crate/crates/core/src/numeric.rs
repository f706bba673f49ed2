//! Small numerical kernels shared by the rest of the crate: Gaussian tails,
//! log-domain summation, an accurate binomial pmf/tail in log space and an
//! adaptive Gauss-Kronrod integrator.

use std::collections::BinaryHeap;
use std::f64::consts::{LN_2, PI};

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal upper tail 1 - Φ(x).
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal distribution function Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// log(e^a + e^b) without overflow; either argument may be -inf.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
pub struct LogSum {
    max: f64,
    scaled: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }
}

impl LogSum {
    pub fn add(&mut self, ln_term: f64) {
        if ln_term == f64::NEG_INFINITY || ln_term.is_nan() {
            return;
        }
        if ln_term > self.max {
            self.scaled = self.scaled * (self.max - ln_term).exp() + 1.0;
            self.max = ln_term;
        } else {
            self.scaled += (ln_term - self.max).exp();
        }
    }

    pub fn ln(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// Error of Stirling's approximation, ln(n!) - ln(sqrt(2πn)(n/e)^n).
fn stirling_error(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        if n == 0.0 {
            return 0.0;
        }
        return ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        return (S0 - S1 / nn) / n;
    }
    if n > 80.0 {
        return (S0 - (S1 - S2 / nn) / nn) / n;
    }
    if n > 35.0 {
        return (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n;
    }
    (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
}

/// Deviance term x ln(x/np) + np - x, evaluated without cancellation.
fn deviance(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// ln P(B = x) for B ~ Binomial(n, p), accurate to a few ulps in relative
/// terms even deep in the tails (saddle-point form).
pub fn ln_binomial_pmf(x: u64, n: u64, p: f64) -> f64 {
    if x > n {
        return f64::NEG_INFINITY;
    }
    let q = 1.0 - p;
    if p == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if x == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let (xf, nf) = (x as f64, n as f64);
    if x == 0 {
        return nf * q.ln();
    }
    if x == n {
        return nf * p.ln();
    }
    let lc = stirling_error(nf)
        - stirling_error(xf)
        - stirling_error(nf - xf)
        - deviance(xf, nf * p)
        - deviance(nf - xf, nf * q);
    lc - 0.5 * (2.0 * PI * xf * (nf - xf) / nf).ln()
}

/// ln P(B >= j) for B ~ Binomial(n, p).
pub fn ln_binomial_upper_tail(j: i64, n: u64, p: f64) -> f64 {
    if j <= 0 {
        return 0.0;
    }
    let j = j as u64;
    if j > n {
        return f64::NEG_INFINITY;
    }
    let ratio_pq = p / (1.0 - p);
    let mean = n as f64 * p;
    if (j as f64) > mean {
        // Terms decrease monotonically from j upwards.
        let first = ln_binomial_pmf(j, n, p);
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut i = j;
        while i < n {
            term *= (n - i) as f64 / (i + 1) as f64 * ratio_pq;
            sum += term;
            i += 1;
            if term < 1e-17 * sum {
                break;
            }
        }
        first + sum.ln()
    } else {
        // Complement of the lower tail P(B <= j - 1), whose terms decrease
        // from j - 1 downwards.
        let lower = ln_binomial_lower_tail(j - 1, n, p);
        (-lower.exp()).ln_1p()
    }
}

/// ln P(B <= j) for B ~ Binomial(n, p).
pub fn ln_binomial_lower_tail(j: u64, n: u64, p: f64) -> f64 {
    if j >= n {
        return 0.0;
    }
    let mean = n as f64 * p;
    if (j as f64) < mean {
        let first = ln_binomial_pmf(j, n, p);
        let ratio_qp = (1.0 - p) / p;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut i = j;
        while i > 0 {
            term *= i as f64 / (n - i + 1) as f64 * ratio_qp;
            sum += term;
            i -= 1;
            if term < 1e-17 * sum {
                break;
            }
        }
        first + sum.ln()
    } else {
        let upper = ln_binomial_upper_tail(j as i64 + 1, n, p);
        (-upper.exp()).ln_1p()
    }
}

/// Result of a numerical integration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let err = ((kronrod - gauss) * half).abs();
    (kronrod * half, err)
}

#[derive(Debug, PartialEq)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive Gauss-Kronrod (7/15) integration of `f` over `[a, b]`, bisecting
/// the segment with the largest error estimate until the total estimate is
/// below `max(abs_tol, rel_tol * |value|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Quadrature {
    integrate_with_breaks(&mut f, &[a, b], abs_tol, rel_tol, 20_000)
}

/// Same as [`integrate`], starting from the supplied breakpoints.
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(
    f: &mut F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_segments: usize,
) -> Quadrature {
    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    let (mut total, mut total_err) = (0.0, 0.0);
    for w in breaks.windows(2) {
        let (v, e) = kronrod15(f, w[0], w[1]);
        evaluations += 15;
        total += v;
        total_err += e;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }
    while total_err > abs_tol.max(rel_tol * total.abs()) && heap.len() < max_segments {
        let Some(seg) = heap.pop() else { break };
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            heap.push(seg);
            break;
        }
        let (v1, e1) = kronrod15(f, seg.a, mid);
        let (v2, e2) = kronrod15(f, mid, seg.b);
        evaluations += 30;
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.error;
        heap.push(Segment {
            a: seg.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed accumulated rounding from the running totals.
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    Quadrature {
        value,
        error,
        evaluations,
    }
}

/// Integral over `[a, ∞)` through the map x = a + t/(1 - t).
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Quadrature {
    let mut g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t;
        let v = f(a + t / s) / (s * s);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate_with_breaks(&mut g, &[0.0, 0.5, 0.9, 0.99, 1.0], abs_tol, rel_tol, 20_000)
}

/// Largest power of two not smaller than `n`.
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// ln 2, re-exported for lattice arithmetic on Rademacher sums.
pub const LN2: f64 = LN_2;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn brute_tail(j: u64, n: u64, p: f64) -> f64 {
        // Exact summation with binomial coefficients built multiplicatively.
        let mut total = 0.0;
        for x in j..=n {
            let mut c = 1.0f64;
            for i in 0..x {
                c *= (n - i) as f64 / (i + 1) as f64;
            }
            total += c * p.powi(x as i32) * (1.0 - p).powi((n - x) as i32);
        }
        total
    }

    #[test]
    fn binomial_tail_matches_enumeration() {
        for &(n, p) in &[(10u64, 0.5), (25, 0.25), (40, 0.7)] {
            for j in 0..=n + 1 {
                let want = if j > n { 0.0 } else { brute_tail(j, n, p) };
                let got = ln_binomial_upper_tail(j as i64, n, p).exp();
                assert_relative_eq!(got, want, max_relative = 1e-12, epsilon = 1e-300);
            }
        }
    }

    #[test]
    fn binomial_pmf_deep_tail_is_relative_accurate() {
        // P(B = n) = 2^-n exactly.
        let n = 3000u64;
        let got = ln_binomial_pmf(n, n, 0.5);
        assert_relative_eq!(got, -(n as f64) * LN_2, max_relative = 1e-14);
        let got = ln_binomial_pmf(n - 1, n, 0.5);
        assert_relative_eq!(got, (n as f64).ln() - (n as f64) * LN_2, max_relative = 1e-13);
    }

    #[test]
    fn log_sum_accumulates() {
        let mut s = LogSum::default();
        for v in [-1000.0, -1000.0, f64::NEG_INFINITY] {
            s.add(v);
        }
        assert_relative_eq!(s.ln(), -1000.0 + LN_2, max_relative = 1e-15);
        assert_eq!(LogSum::default().ln(), f64::NEG_INFINITY);
    }

    #[test]
    fn kronrod_integrates_smooth_and_infinite() {
        let q = integrate(|x| x.sin(), 0.0, PI, 1e-13, 1e-13);
        assert_relative_eq!(q.value, 2.0, max_relative = 1e-12);
        let q = integrate_to_infinity(|x| (-x).exp(), 0.0, 1e-13, 1e-13);
        assert_relative_eq!(q.value, 1.0, max_relative = 1e-11);
        let q = integrate(|x| x.sqrt(), 0.0, 1.0, 1e-12, 1e-12);
        assert_relative_eq!(q.value, 2.0 / 3.0, max_relative = 1e-10);
    }

    #[test]
    fn normal_tails_are_complementary() {
        for x in [-3.0, -0.5, 0.0, 1.2, 5.0] {
            assert_relative_eq!(normal_cdf(x) + normal_sf(x), 1.0, max_relative = 1e-15);
        }
        assert_relative_eq!(normal_sf(0.0), 0.5);
    }
}
