//! Limit objects of the process: Schröder and Böttcher functions, the Laplace
//! transform φ of W, the density w of W and the constants built from them.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::distengine::{generation_pmfs, EngineConfig, ProbVector};
use crate::error::{Error, Result};
use crate::numeric::{integrate, integrate_with_breaks};
use crate::offspring::OffspringLaw;

/// Depth cap of every limit iteration.
pub const MAX_DEPTH: usize = 60;
pub const DEFAULT_TOL: f64 = 1e-12;

/// A limit value together with the last successive gap and the depth used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitValue {
    pub value: f64,
    pub gap: f64,
    pub depth: usize,
}

fn converged(what: &'static str, value: f64, gap: f64, depth: usize, tol: f64) -> Result<LimitValue> {
    if gap <= tol {
        Ok(LimitValue { value, gap, depth })
    } else {
        Err(Error::NoConvergence {
            what,
            iterations: depth,
            gap,
        })
    }
}

/// Coefficients of g(d) = f(q + d) - q, so the deviation from q can be
/// iterated without cancellation.
fn shifted_coefficients(law: &OffspringLaw) -> Vec<f64> {
    let q = law.extinction_prob();
    let p = law.masses();
    let mut c = vec![0.0; p.len()];
    for (j, &pj) in p.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        // Binomial expansion of (q + d)^j.
        let mut binom = 1.0;
        for (i, ci) in c.iter_mut().enumerate().take(j + 1) {
            *ci += pj * binom * q.powi((j - i) as i32);
            binom *= (j - i) as f64 / (i + 1) as f64;
        }
    }
    c[0] = 0.0;
    c
}

const SERIES_ORDER: usize = 12;

/// Taylor coefficients b_1..b_K of 𝖲(q + d) = Σ b_k d^k, from 𝖲∘g = γ𝖲.
fn koenigs_series(c: &[f64], gamma: f64) -> Vec<f64> {
    let order = SERIES_ORDER;
    let poly_mul = |a: &[f64], b: &[f64]| {
        let mut out = vec![0.0; order + 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                if i + j <= order {
                    out[i + j] += x * y;
                }
            }
        }
        out
    };
    let mut g = vec![0.0; order + 1];
    for (i, &ci) in c.iter().enumerate().take(order + 1) {
        g[i] = ci;
    }
    // powers[j] = g^j truncated at degree `order`.
    let mut powers = vec![vec![0.0; order + 1], g.clone()];
    powers[0][0] = 1.0;
    for j in 2..=order {
        let next = poly_mul(&powers[j - 1], &g);
        powers.push(next);
    }
    let mut b = vec![0.0; order + 1];
    b[1] = 1.0;
    for k in 2..=order {
        let acc: f64 = (1..k).map(|j| b[j] * powers[j][k]).sum();
        b[k] = acc / (gamma - gamma.powi(k as i32));
    }
    b
}

/// 𝖲(s) = lim γ^{-n}(f_n(s) - q), evaluated as γ^{-n}𝖲(f_n(s)) with the
/// local series of 𝖲 at q.
pub fn schroder_function(law: &OffspringLaw, s: f64, tol: f64) -> Result<LimitValue> {
    if !law.is_schroder() {
        return Err(Error::NotSchroder);
    }
    if !(0.0..1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("s = {s} outside [0, 1)")));
    }
    let q = law.extinction_prob();
    let gamma = law.gamma();
    let c = shifted_coefficients(law);
    let g = |d: f64| c.iter().rev().fold(0.0, |acc, &ci| acc * d + ci);
    let b = koenigs_series(&c, gamma);
    let local = |d: f64| b.iter().rev().fold(0.0, |acc, &bk| acc * d + bk);
    let mut d = s - q;
    if d == 0.0 {
        return Ok(LimitValue {
            value: 0.0,
            gap: 0.0,
            depth: 0,
        });
    }
    let mut prev = local(d);
    let mut scale = 1.0;
    let mut gap = f64::INFINITY;
    for n in 1..=MAX_DEPTH {
        d = g(d);
        scale /= gamma;
        let cur = local(d) * scale;
        gap = (cur - prev).abs();
        prev = cur;
        if gap <= tol * cur.abs().max(1.0) {
            return Ok(LimitValue {
                value: cur,
                gap,
                depth: n,
            });
        }
    }
    converged("Schröder function", prev, gap, MAX_DEPTH, 0.0)
}

/// ν_k ≈ γ^{-n} P(Z_n = k) for k = 1..=k_max, with the relative gap between
/// depths n - 1 and n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchroderCoeffs {
    pub depth: usize,
    pub nu: Vec<f64>,
    pub relative_gap: Vec<f64>,
}

pub fn schroder_coeffs(
    law: &OffspringLaw,
    n: usize,
    k_max: usize,
    cfg: &EngineConfig,
) -> Result<SchroderCoeffs> {
    if !law.is_schroder() {
        return Err(Error::NotSchroder);
    }
    if n == 0 {
        return Err(Error::InvalidArgument("depth must be positive".into()));
    }
    let pmfs = generation_pmfs(law, n, cfg)?;
    schroder_coeffs_from(law, &pmfs[n - 1], &pmfs[n], n, k_max)
}

/// Same as [`schroder_coeffs`] from precomputed laws of Z_{n-1} and Z_n.
pub fn schroder_coeffs_from(
    law: &OffspringLaw,
    prev: &ProbVector,
    cur: &ProbVector,
    n: usize,
    k_max: usize,
) -> Result<SchroderCoeffs> {
    let gamma = law.gamma();
    let mut nu = Vec::with_capacity(k_max);
    let mut relative_gap = Vec::with_capacity(k_max);
    for k in 1..=k_max as i64 {
        let a = cur.mass_at(k) * gamma.powi(-(n as i32));
        let b = prev.mass_at(k) * gamma.powi(-(n as i32 - 1));
        nu.push(a);
        relative_gap.push(if a > 0.0 { (a - b).abs() / a } else { 0.0 });
    }
    Ok(SchroderCoeffs {
        depth: n,
        nu,
        relative_gap,
    })
}

/// 𝖡(s) = lim f_n(s)^{μ^{-n}}, with its logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BottcherValue {
    pub value: f64,
    pub ln_value: f64,
    pub gap: f64,
    pub depth: usize,
}

pub fn bottcher_function(law: &OffspringLaw, s: f64, tol: f64) -> Result<BottcherValue> {
    if law.is_schroder() {
        return Err(Error::NotBottcher);
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("s = {s} outside [0, 1]")));
    }
    if s == 0.0 || s == 1.0 {
        return Ok(BottcherValue {
            value: s,
            ln_value: s.ln(),
            gap: 0.0,
            depth: 0,
        });
    }
    let mu = law.min_offspring() as f64;
    let mut l = s.ln();
    let mut prev = l;
    let mut scale = 1.0;
    let mut gap = f64::INFINITY;
    for n in 1..=MAX_DEPTH {
        l = law.ln_pgf_exp(l);
        scale /= mu;
        let cur = l * scale;
        gap = (cur - prev).abs();
        prev = cur;
        if gap <= tol * cur.abs().max(1.0) {
            return Ok(BottcherValue {
                value: cur.exp(),
                ln_value: cur,
                gap,
                depth: n,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "Böttcher function",
        iterations: MAX_DEPTH,
        gap,
    })
}

/// 1 - f(1 - u) computed without cancellation for small u, with the law's
/// masses renormalised.
fn pgf_complement(law: &OffspringLaw, u: f64) -> f64 {
    let l1 = (-u).ln_1p();
    let mut acc = 0.0;
    let mut total = 0.0;
    for (j, &p) in law.masses().iter().enumerate() {
        if p > 0.0 {
            acc -= p * (j as f64 * l1).exp_m1();
            total += p;
        }
    }
    acc / total
}

/// Variance of W when E W = 1.
pub fn var_w(law: &OffspringLaw) -> f64 {
    let m = law.mean();
    law.variance() / (m * m - m)
}

/// f_n(s_n) with 1 - s_n carried exactly and s_n = exp(-t + Var(W) t²/2),
/// t = h m^{-n}; returns 1 - f_n(s_n).
fn phi_complement_at_depth(law: &OffspringLaw, h: f64, n: usize, vw: f64) -> f64 {
    let t = h * law.mean().powi(-(n as i32));
    let mut u = -(-t + 0.5 * vw * t * t).exp_m1();
    for _ in 0..n {
        u = pgf_complement(law, u);
    }
    u
}

/// φ(h) = E e^{-hW}.
pub fn laplace_w(law: &OffspringLaw, h: f64, tol: f64) -> Result<LimitValue> {
    laplace_w_complement(law, h, tol).map(|v| LimitValue {
        value: 1.0 - v.value,
        ..v
    })
}

/// 1 - φ(h), accurate for small h.
pub fn laplace_w_complement(law: &OffspringLaw, h: f64, tol: f64) -> Result<LimitValue> {
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("h = {h}")));
    }
    if h == 0.0 {
        return Ok(LimitValue {
            value: 0.0,
            gap: 0.0,
            depth: 0,
        });
    }
    let vw = var_w(law);
    let m = law.mean();
    // Start where h m^{-n} is already below one.
    let n0 = (h.ln() / m.ln()).ceil().max(1.0) as usize;
    let mut prev = phi_complement_at_depth(law, h, n0, vw);
    let mut gap = f64::INFINITY;
    for n in n0 + 1..=n0 + MAX_DEPTH {
        let cur = phi_complement_at_depth(law, h, n, vw);
        gap = (cur - prev).abs();
        prev = cur;
        if gap <= tol {
            return Ok(LimitValue {
                value: cur,
                gap,
                depth: n,
            });
        }
    }
    converged("Laplace transform of W", prev, gap, n0 + MAX_DEPTH, tol)
}

/// One evaluation of the density of W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityValue {
    pub u: f64,
    pub value: f64,
    /// Lattice point used at depth n.
    pub k: i64,
    /// |w_n(u) - w_{n-1}(u)| / w_n(u).
    pub instability: f64,
}

/// Local-limit estimate w(u) ≈ (m^n/d) P(Z_n = k_u) from the exact laws of
/// Z_{n-1} and Z_n.
#[derive(Debug, Clone)]
pub struct DensityEstimator {
    pub depth: usize,
    mean: f64,
    span: u64,
    residue: i64,
    prev: ProbVector,
    cur: ProbVector,
    prev_residue: i64,
}

fn pow_mod(base: u64, exp: usize, modulus: u64) -> i64 {
    let mut r = 1 % modulus;
    for _ in 0..exp {
        r = r * (base % modulus) % modulus;
    }
    r as i64
}

impl DensityEstimator {
    pub fn new(law: &OffspringLaw, n: usize, cfg: &EngineConfig) -> Result<Self> {
        if !law.is_schroder() {
            return Err(Error::NotSchroder);
        }
        if n < 2 {
            return Err(Error::InvalidArgument("density depth must be at least 2".into()));
        }
        let mut pmfs = generation_pmfs(law, n, cfg)?;
        let cur = pmfs.pop().expect("n + 1 laws");
        let prev = pmfs.pop().expect("n + 1 laws");
        Self::from_pmfs(law, n, prev, cur)
    }

    pub fn from_pmfs(law: &OffspringLaw, n: usize, prev: ProbVector, cur: ProbVector) -> Result<Self> {
        if !law.is_schroder() {
            return Err(Error::NotSchroder);
        }
        let d = law.lattice_span();
        let mu = law.min_offspring();
        Ok(Self {
            depth: n,
            mean: law.mean(),
            span: d,
            residue: pow_mod(mu, n, d),
            prev_residue: pow_mod(mu, n - 1, d),
            prev,
            cur,
        })
    }

    /// Lattice point ≡ residue (mod d) nearest to x.
    fn nearest(&self, x: f64, residue: i64) -> i64 {
        let d = self.span as f64;
        let j = ((x - residue as f64) / d).round();
        residue + (j as i64) * self.span as i64
    }

    fn raw(&self, pmf: &ProbVector, n: usize, u: f64, residue: i64) -> (i64, f64) {
        let mn = self.mean.powi(n as i32);
        let k = self.nearest(u * mn, residue).max(1);
        (k, mn / self.span as f64 * pmf.mass_at(k))
    }

    pub fn eval(&self, u: f64) -> Result<DensityValue> {
        let n = self.depth;
        let mn = self.mean.powi(n as i32);
        if !(u > 0.0) || u * mn < 1.0 {
            return Err(Error::DepthTooShallow {
                k: u * mn,
                threshold: 1.0,
            });
        }
        let (k, value) = self.raw(&self.cur, n, u, self.residue);
        let threshold = mn.sqrt();
        if (k as f64) < threshold {
            return Err(Error::DepthTooShallow {
                k: k as f64,
                threshold,
            });
        }
        let (_, before) = self.raw(&self.prev, n - 1, u, self.prev_residue);
        let instability = if value > 0.0 {
            (value - before).abs() / value
        } else {
            f64::INFINITY
        };
        Ok(DensityValue {
            u,
            value,
            k,
            instability,
        })
    }
}

/// Convenience wrapper building a [`DensityEstimator`] for a single point.
pub fn w_density(law: &OffspringLaw, u: f64, n: usize, cfg: &EngineConfig) -> Result<DensityValue> {
    DensityEstimator::new(law, n, cfg)?.eval(u)
}

/// Grid extrema of u^{1-α} w(u).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VBounds {
    pub v_lower: f64,
    pub v_upper: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub grid: Vec<(f64, f64)>,
    /// Largest relative change of V*/V∗ between adjacent multiplicative
    /// periods, when the window spans at least two.
    pub period_drift: Option<f64>,
}

impl VBounds {
    pub fn is_stable(&self, tol: f64) -> bool {
        self.period_drift.map_or(true, |d| d <= tol)
    }
}

pub fn v_bounds(
    law: &OffspringLaw,
    est: &DensityEstimator,
    u_min: f64,
    u_max: f64,
    points: usize,
) -> Result<VBounds> {
    if !law.is_schroder() {
        return Err(Error::NotSchroder);
    }
    let m = law.mean();
    if !(u_min > 0.0 && u_max / u_min >= m * (1.0 - 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "window [{u_min}, {u_max}] must span at least one period m = {m}"
        )));
    }
    let alpha = law.alpha();
    let points = points.max(2);
    let ratio = (u_max / u_min).ln();
    let mut grid = Vec::with_capacity(points);
    for i in 0..points {
        let u = u_min * (ratio * i as f64 / (points - 1) as f64).exp();
        let w = est.eval(u)?;
        grid.push((u, u.powf(1.0 - alpha) * w.value));
    }
    let extrema = |lo: f64, hi: f64| {
        grid.iter()
            .filter(|(u, _)| *u >= lo && *u <= hi)
            .fold((f64::INFINITY, 0.0f64), |(a, b), &(_, v)| (a.min(v), b.max(v)))
    };
    let (v_lower, v_upper) = extrema(u_min, u_max);
    let periods = (ratio / m.ln()).floor() as usize;
    let period_drift = (periods >= 2).then(|| {
        let mut drift: f64 = 0.0;
        let mut last: Option<f64> = None;
        for p in 0..periods {
            let lo = u_min * m.powi(p as i32);
            let (a, b) = extrema(lo, lo * m);
            let r = b / a;
            if let Some(prev) = last {
                drift = drift.max((r - prev).abs() / prev);
            }
            last = Some(r);
        }
        drift
    });
    Ok(VBounds {
        v_lower,
        v_upper,
        u_min,
        u_max,
        grid,
        period_drift,
    })
}

/// 𝖲(φ(h))·h^α over a grid of h; constant iff V is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VCondition {
    pub values: Vec<(f64, f64)>,
    /// Mean of 𝖲(φ(h))h^α over the grid.
    pub v0: f64,
    /// max - min over the grid.
    pub spread: f64,
    /// Constant of the density asymptotics u^{1-α}w(u) → v0/Γ(α).
    pub density_constant: f64,
}

pub fn v_condition(law: &OffspringLaw, h_grid: &[f64], tol: f64) -> Result<VCondition> {
    if !law.is_schroder() {
        return Err(Error::NotSchroder);
    }
    let alpha = law.alpha();
    let mut values = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let phi = laplace_w(law, h, tol)?.value;
        let s = schroder_function(law, phi, tol)?.value;
        values.push((h, s * h.powf(alpha)));
    }
    let lo = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let v0 = values.iter().map(|v| v.1).sum::<f64>() / values.len().max(1) as f64;
    Ok(VCondition {
        values,
        v0,
        spread: hi - lo,
        density_constant: v0 / gamma(alpha),
    })
}

/// A quadrature-based constant with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub value: f64,
    pub error: f64,
}

/// I_θ = Γ(θ-1)^{-1} ∫_0^∞ (φ(v) - q) v^{θ-2} dv.
pub fn i_theta(law: &OffspringLaw, theta: f64, tol: f64) -> Result<Constant> {
    if !(theta > 2.0) {
        return Err(Error::TailTooHeavy(theta));
    }
    let alpha = law.alpha();
    if law.is_schroder() && theta >= 1.0 + alpha {
        return Err(Error::DivergentIntegral(format!(
            "θ = {theta} >= 1 + α = {}",
            1.0 + alpha
        )));
    }
    let q = law.extinction_prob();
    let phi_tol = 1e-14;
    let mut failure = None;
    let mut integrand = |v: f64| -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        match laplace_w_complement(law, v, phi_tol) {
            Ok(c) => (1.0 - c.value - q).max(0.0) * v.powf(theta - 2.0),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let mut total = 0.0;
    let mut error = 0.0;
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut tail = f64::INFINITY;
    for _ in 0..200 {
        let piece = integrate_with_breaks(&mut integrand, &[lo, hi], tol * 1e-3, tol, 2000);
        total += piece.value;
        error += piece.error;
        // Decay of φ - q: power v^{-α} in the Schröder case, faster otherwise.
        let edge = integrand(hi) * hi;
        tail = if alpha.is_finite() {
            edge / (alpha + 1.0 - theta)
        } else {
            edge
        };
        if tail <= tol * total.abs() {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let norm = gamma(theta - 1.0);
    Ok(Constant {
        value: (total + tail) / norm,
        error: (error + tail) / norm,
    })
}

/// J_α = Γ(α)^{-1} ∫_1^m 𝖲(φ(v)) v^{α-1} dv.
pub fn j_alpha(law: &OffspringLaw, tol: f64) -> Result<Constant> {
    if !law.is_schroder() {
        return Err(Error::NotSchroder);
    }
    let alpha = law.alpha();
    let mut failure = None;
    let q = integrate(
        |v| {
            let r = laplace_w(law, v, 1e-14)
                .and_then(|phi| schroder_function(law, phi.value, 1e-14));
            match r {
                Ok(s) => s.value * v.powf(alpha - 1.0),
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        1.0,
        law.mean(),
        tol,
        tol,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let norm = gamma(alpha);
    Ok(Constant {
        value: q.value / norm,
        error: q.error / norm,
    })
}

/// log 𝖡(φ(h)).
pub fn ln_bottcher_of_phi(law: &OffspringLaw, h: f64, tol: f64) -> Result<f64> {
    let phi = laplace_w(law, h, tol)?;
    Ok(bottcher_function(law, phi.value, tol)?.ln_value)
}

/// Grids for a [`LimitReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitConfig {
    pub tol: f64,
    pub s_grid: Vec<f64>,
    pub h_grid: Vec<f64>,
    pub u_grid: Vec<f64>,
    pub density_depth: usize,
    pub nu_k_max: usize,
    pub v_window: (f64, f64),
    pub v_points: usize,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            s_grid: (0..10).map(|i| i as f64 / 10.0).collect(),
            h_grid: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            u_grid: vec![0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0],
            density_depth: 12,
            nu_k_max: 10,
            v_window: (0.05, 0.2),
            v_points: 64,
        }
    }
}

/// All limit objects of a law on the configured grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub schroder_values: Vec<(f64, f64)>,
    pub nu_coeffs: Vec<f64>,
    pub bottcher_values: Vec<(f64, f64)>,
    pub phi_values: Vec<(f64, f64)>,
    pub w_values: Vec<(f64, f64)>,
    pub v_lower: Option<f64>,
    pub v_upper: Option<f64>,
    pub convergence_diagnostics: Vec<(String, f64)>,
}

pub fn limit_report(law: &OffspringLaw, cfg: &LimitConfig, engine: &EngineConfig) -> Result<LimitReport> {
    let mut diag = Vec::new();
    let mut phi_values = Vec::new();
    for &h in &cfg.h_grid {
        let v = laplace_w(law, h, cfg.tol)?;
        diag.push((format!("phi({h})"), v.gap));
        phi_values.push((h, v.value));
    }
    let mut report = LimitReport {
        schroder_values: Vec::new(),
        nu_coeffs: Vec::new(),
        bottcher_values: Vec::new(),
        phi_values,
        w_values: Vec::new(),
        v_lower: None,
        v_upper: None,
        convergence_diagnostics: Vec::new(),
    };
    if law.is_schroder() {
        for &s in &cfg.s_grid {
            let v = schroder_function(law, s, cfg.tol)?;
            diag.push((format!("S({s})"), v.gap));
            report.schroder_values.push((s, v.value));
        }
        let n = cfg.density_depth;
        let mut pmfs = generation_pmfs(law, n, engine)?;
        let cur = pmfs.pop().expect("n + 1 laws");
        let prev = pmfs.pop().expect("n + 1 laws");
        let coeffs = schroder_coeffs_from(law, &prev, &cur, n, cfg.nu_k_max)?;
        if let Some(g) = coeffs.relative_gap.iter().cloned().reduce(f64::max) {
            diag.push(("nu".into(), g));
        }
        report.nu_coeffs = coeffs.nu;
        let est = DensityEstimator::from_pmfs(law, n, prev, cur)?;
        for &u in &cfg.u_grid {
            if let Ok(w) = est.eval(u) {
                diag.push((format!("w({u})"), w.instability));
                report.w_values.push((u, w.value));
            }
        }
        let (lo, hi) = cfg.v_window;
        let vb = v_bounds(law, &est, lo, hi, cfg.v_points)?;
        if let Some(d) = vb.period_drift {
            diag.push(("V period drift".into(), d));
        }
        report.v_lower = Some(vb.v_lower);
        report.v_upper = Some(vb.v_upper);
    } else {
        for &s in cfg.s_grid.iter().chain(std::iter::once(&1.0)) {
            let v = bottcher_function(law, s, cfg.tol)?;
            diag.push((format!("B({s})"), v.gap));
            report.bottcher_values.push((s, v.value));
        }
    }
    report.convergence_diagnostics = diag;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lf() -> OffspringLaw {
        OffspringLaw::linear_fractional(2.0).unwrap()
    }

    #[test]
    fn schroder_linear_fractional() {
        let law = lf();
        assert_eq!(schroder_function(&law, 0.0, 1e-12).unwrap().value, 0.0);
        let v = schroder_function(&law, 0.5, 1e-12).unwrap();
        assert_relative_eq!(v.value, 1.0, max_relative = 1e-10);
        let v = schroder_function(&law, 0.8, 1e-12).unwrap();
        assert_relative_eq!(v.value, 4.0, max_relative = 1e-10);
    }

    #[test]
    fn schroder_with_extinction() {
        let law = OffspringLaw::from_pairs(&[(0, 0.25), (1, 0.25), (2, 0.5)]).unwrap();
        let q = law.extinction_prob();
        assert_eq!(schroder_function(&law, q, 1e-12).unwrap().value, 0.0);
        // 𝖲 ∘ f = γ 𝖲.
        let s = 0.7;
        let a = schroder_function(&law, law.pgf(s), 1e-13).unwrap().value;
        let b = schroder_function(&law, s, 1e-13).unwrap().value;
        assert_relative_eq!(a, law.gamma() * b, max_relative = 1e-9);
        assert!(schroder_function(&law, 0.2, 1e-12).unwrap().value < 0.0);
    }

    #[test]
    fn nu_one_for_linear_fractional() {
        let c = schroder_coeffs(&lf(), 14, 10, &EngineConfig::default()).unwrap();
        assert_relative_eq!(c.nu[0], 1.0, max_relative = 1e-4);
        assert!(c.relative_gap.iter().all(|&g| g < 0.01));
    }

    #[test]
    fn bottcher_basic_values() {
        let law = OffspringLaw::from_pairs(&[(2, 0.5), (3, 0.5)]).unwrap();
        assert_eq!(bottcher_function(&law, 1.0, 1e-12).unwrap().value, 1.0);
        assert_eq!(bottcher_function(&law, 0.0, 1e-12).unwrap().value, 0.0);
        let b = bottcher_function(&law, 0.5, 1e-12).unwrap();
        // Two depths of the same iteration agree.
        let l = law.ln_pgf_exp(law.ln_pgf_exp(0.5f64.ln()));
        let deeper = bottcher_function(&law, l.exp(), 1e-12).unwrap();
        assert_relative_eq!(deeper.ln_value, 4.0 * b.ln_value, max_relative = 1e-10);
        assert!(matches!(bottcher_function(&lf(), 0.5, 1e-12), Err(Error::NotBottcher)));
        assert!(matches!(
            schroder_function(&law, 0.5, 1e-12),
            Err(Error::NotSchroder)
        ));
    }

    #[test]
    fn phi_linear_fractional() {
        let law = lf();
        assert_eq!(laplace_w(&law, 0.0, 1e-12).unwrap().value, 1.0);
        for h in [0.1, 1.0, 3.0, 20.0] {
            let v = laplace_w(&law, h, 1e-13).unwrap();
            assert_relative_eq!(v.value, 1.0 / (1.0 + h), max_relative = 1e-10);
        }
        let e = 1e-5;
        let slope = (laplace_w(&law, e, 1e-15).unwrap().value - 1.0) / e;
        assert!((slope + 1.0).abs() < 1e-4);
    }

    #[test]
    fn phi_is_monotone_and_convex() {
        let law = OffspringLaw::from_pairs(&[(0, 0.1), (1, 0.2), (2, 0.4), (3, 0.3)]).unwrap();
        let hs: Vec<f64> = (0..30).map(|i| i as f64 * 0.25).collect();
        let v: Vec<f64> = hs.iter().map(|&h| laplace_w(&law, h, 1e-12).unwrap().value).collect();
        for w in v.windows(3) {
            assert!(w[1] <= w[0] + 1e-12);
            assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-10);
        }
        assert!(v.last().unwrap() > &law.extinction_prob());
    }

    #[test]
    fn density_linear_fractional() {
        let law = lf();
        let est = DensityEstimator::new(&law, 14, &EngineConfig::default()).unwrap();
        let w = est.eval(1.0).unwrap();
        assert!((w.value - (-1f64).exp()).abs() <= 0.02 * (-1f64).exp());
        assert!(matches!(est.eval(1e-5), Err(Error::DepthTooShallow { .. })));
        let vb = v_bounds(&law, &est, 0.01, 0.02, 32).unwrap();
        assert!((vb.v_lower - 1.0).abs() < 0.05 && (vb.v_upper - 1.0).abs() < 0.05);
        assert!(vb.v_lower <= vb.v_upper);
    }

    #[test]
    fn v_condition_linear_fractional() {
        let hs: Vec<f64> = (0..7).map(|i| 0.5 + 0.25 * i as f64).collect();
        let vc = v_condition(&lf(), &hs, 1e-13).unwrap();
        assert!(vc.spread < 1e-6);
        assert_relative_eq!(vc.v0, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn j_alpha_linear_fractional() {
        let j = j_alpha(&lf(), 1e-11).unwrap();
        assert_relative_eq!(j.value, 2f64.ln(), max_relative = 1e-8);
    }

    #[test]
    fn i_theta_gates() {
        assert!(matches!(i_theta(&lf(), 2.5, 1e-8), Err(Error::DivergentIntegral(_))));
        assert!(matches!(i_theta(&lf(), 1.5, 1e-8), Err(Error::TailTooHeavy(_))));
    }
}
