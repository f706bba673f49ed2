//! P(R_n >= ε) through the decomposition Σ_k P(Z_n = k) P(S_k >= εk), the
//! constants of the limit theorems and the regime verification runs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::distengine::{generation_pmfs, tilted_generation_pmf, EngineConfig};
use crate::error::{Error, Result};
use crate::increments::{IncrementLaw, TailOptions, Tier};
use crate::limits::{
    i_theta, laplace_w_complement, ln_bottcher_of_phi, schroder_coeffs_from, v_bounds, v_condition,
    DensityEstimator, LimitConfig,
};
use crate::numeric::{integrate, integrate_with_breaks, normal_sf, LogSum, Quadrature};
use crate::offspring::OffspringLaw;

/// ε_n as a function of the generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum EpsilonFamily {
    /// ε_n = c m^{-ρn} n^κ.
    Power {
        c: f64,
        rho: f64,
        #[serde(default)]
        kappa: f64,
    },
    /// ε_n = m^{-λ_n/2} with λ_n = ⌈n / divisor⌉.
    BottcherCeil { divisor: u32 },
    /// ε_n = m^{-λ_n/2} with λ_n = lambdas[n - first_n].
    BottcherList { first_n: usize, lambdas: Vec<u32> },
}

impl EpsilonFamily {
    pub fn power(c: f64, rho: f64, kappa: f64) -> Self {
        EpsilonFamily::Power { c, rho, kappa }
    }

    /// Integer exponent λ_n of the Böttcher forms.
    pub fn lambda(&self, n: usize) -> Option<u32> {
        match self {
            EpsilonFamily::Power { .. } => None,
            EpsilonFamily::BottcherCeil { divisor } => Some((n as u32).div_ceil((*divisor).max(1))),
            EpsilonFamily::BottcherList { first_n, lambdas } => {
                n.checked_sub(*first_n).and_then(|i| lambdas.get(i).copied())
            }
        }
    }

    pub fn eps(&self, n: usize, m: f64) -> Result<f64> {
        match self {
            EpsilonFamily::Power { c, rho, kappa } => {
                Ok(c * m.powf(-rho * n as f64) * (n as f64).powf(*kappa))
            }
            _ => {
                let l = self.lambda(n).ok_or_else(|| Error::ConfigInvalid {
                    field: "epsilon.lambdas".into(),
                    message: format!("no λ given for n = {n}"),
                })?;
                Ok(m.powf(-(l as f64) / 2.0))
            }
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |message: String| Error::ConfigInvalid {
            field: "epsilon".into(),
            message,
        };
        match self {
            EpsilonFamily::Power { c, rho, kappa } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(bad(format!("c = {c} must be positive")));
                }
                if !(*rho >= 0.0 && rho.is_finite() && kappa.is_finite()) {
                    return Err(bad(format!("need ρ >= 0 and finite κ, got ρ = {rho}, κ = {kappa}")));
                }
            }
            EpsilonFamily::BottcherCeil { divisor } if *divisor == 0 => {
                return Err(bad("divisor must be positive".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Sign of the growth of ε_n m^{a n} n^b: +1 (→ ∞), 0 (bounded away
    /// from 0 and ∞) or -1 (→ 0).
    fn growth(&self, a: f64, b: f64) -> i32 {
        let sign = |x: f64| {
            if x > 1e-12 {
                1
            } else if x < -1e-12 {
                -1
            } else {
                0
            }
        };
        match self {
            EpsilonFamily::Power { rho, kappa, .. } => match sign(a - rho) {
                0 => sign(kappa + b),
                s => s,
            },
            // λ_n/2 grows like n/(2·divisor) up to bounded rounding.
            EpsilonFamily::BottcherCeil { divisor } => match sign(a - 0.5 / *divisor as f64) {
                0 => sign(b),
                s => s,
            },
            EpsilonFamily::BottcherList { .. } => sign(a),
        }
    }
}

impl fmt::Display for EpsilonFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonFamily::Power { c, rho, kappa } => write!(f, "{c}·m^(-{rho}n)·n^{kappa}"),
            EpsilonFamily::BottcherCeil { divisor } => write!(f, "m^(-ceil(n/{divisor})/2)"),
            EpsilonFamily::BottcherList { first_n, lambdas } => {
                write!(f, "m^(-λ_n/2), λ from n = {first_n}: {lambdas:?}")
            }
        }
    }
}

/// Asymptotic regime under test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Regime {
    Ddev,
    LdevA,
    LdevB,
    LdevC { tau: f64 },
    Bottcher,
    BottcherLattice,
    Ldev1,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Ddev => f.write_str("ddev"),
            Regime::LdevA => f.write_str("ldev_a"),
            Regime::LdevB => f.write_str("ldev_b"),
            Regime::LdevC { tau } => write!(f, "ldev_c(tau={tau})"),
            Regime::Bottcher => f.write_str("bottcher"),
            Regime::BottcherLattice => f.write_str("bottcher_lattice"),
            Regime::Ldev1 => f.write_str("ldev1"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let (head, args) = match norm.split_once('(') {
            Some((h, rest)) => (h.trim().to_string(), Some(rest.trim_end_matches(')').to_string())),
            None => (norm.clone(), None),
        };
        let bad = |message: String| Error::ConfigInvalid {
            field: "regime".into(),
            message,
        };
        Ok(match head.as_str() {
            "ddev" => Regime::Ddev,
            "ldev_a" => Regime::LdevA,
            "ldev_b" => Regime::LdevB,
            "ldev_c" => {
                let args = args.ok_or_else(|| bad("ldev_c needs tau, e.g. ldev_c(tau=1)".into()))?;
                let v = args.trim().trim_start_matches("tau").trim_start_matches('=').trim();
                let tau: f64 = v.parse().map_err(|_| bad(format!("cannot parse tau `{v}`")))?;
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(bad(format!("tau = {tau} must be positive")));
                }
                Regime::LdevC { tau }
            }
            "bottcher" => Regime::Bottcher,
            "bottcher_lattice" => Regime::BottcherLattice,
            "ldev1" => Regime::Ldev1,
            _ => return Err(bad(format!("unknown regime `{s}`"))),
        })
    }
}

impl TryFrom<String> for Regime {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Regime> for String {
    fn from(r: Regime) -> String {
        r.to_string()
    }
}

/// Acceptance rules of a verification run. Defaults are engineering choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Largest admissible relative distance to the target at the last n.
    pub final_relative: f64,
    /// Number of trailing n over which the distance must not increase.
    pub trend_window: usize,
    /// Every tested n must land inside the bracket.
    pub all_in_bracket: bool,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            final_relative: 0.3,
            trend_window: 3,
            all_in_bracket: false,
        }
    }
}

impl Tolerances {
    pub fn for_regime(regime: Regime) -> Self {
        match regime {
            Regime::Ddev | Regime::LdevA => Self {
                final_relative: 0.25,
                ..Self::default()
            },
            Regime::Bottcher => Self {
                final_relative: 0.0,
                all_in_bracket: true,
                ..Self::default()
            },
            _ => Self::default(),
        }
    }
}

/// One regime experiment: a law, an increment law, a range of generations
/// and the sequence ε_n.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationExperiment {
    pub law: OffspringLaw,
    pub increments: IncrementLaw,
    /// Inclusive range of generations.
    pub n_range: (usize, usize),
    pub epsilon: EpsilonFamily,
    pub regime: Regime,
    /// Largest k treated exactly; larger k enter through the Fuk-Nagaev bound.
    pub k_truncation: Option<u64>,
    pub tolerances: Tolerances,
}

/// ϰ = (1 + α - θ)/(2α - θ).
pub fn kappa(alpha: f64, theta: f64) -> f64 {
    (1.0 + alpha - theta) / (2.0 * alpha - theta)
}

impl DeviationExperiment {
    /// Experiment with the default ε family of the regime.
    pub fn new(
        law: OffspringLaw,
        increments: IncrementLaw,
        regime: Regime,
        n_range: (usize, usize),
    ) -> Result<Self> {
        let epsilon = default_epsilon(&law, &increments, regime)?;
        Ok(Self {
            law,
            increments,
            n_range,
            epsilon,
            regime,
            k_truncation: None,
            tolerances: Tolerances::for_regime(regime),
        })
    }

    pub fn with_epsilon(mut self, epsilon: EpsilonFamily) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn ns(&self) -> Vec<usize> {
        (self.n_range.0..=self.n_range.1).collect()
    }

    pub fn eps(&self, n: usize) -> Result<f64> {
        self.epsilon.eps(n, self.law.mean())
    }
}

/// ε families used when none is given.
pub fn default_epsilon(law: &OffspringLaw, x: &IncrementLaw, regime: Regime) -> Result<EpsilonFamily> {
    let kap = || -> Result<f64> {
        let theta = x.tail_index().ok_or_else(|| {
            Error::RegimePreconditionViolated(format!("{regime} needs an increment law with a tail index"))
        })?;
        Ok(kappa(law.alpha(), theta))
    };
    Ok(match regime {
        Regime::Ddev | Regime::Ldev1 => EpsilonFamily::power(1.0, 0.25, 0.0),
        Regime::LdevA => EpsilonFamily::power(1.0, (kap()? + 0.05).min(0.49), 0.0),
        Regime::LdevB => EpsilonFamily::power(1.0, (kap()? - 0.1).max(0.5 * kap()?), 0.0),
        Regime::LdevC { tau } => EpsilonFamily::power(1.0 / tau, kap()?, 0.0),
        Regime::Bottcher | Regime::BottcherLattice => EpsilonFamily::BottcherCeil { divisor: 4 },
    })
}

/// Γ_α = 2^{α-1} Γ(α + 1/2) σ^{2α} / (α √π) = ∫_0^∞ u^{α-1} Φ̄(√u/σ) du.
pub fn gamma_alpha(alpha: f64, sigma: f64) -> f64 {
    ((alpha - 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 0.5) + 2.0 * alpha * sigma.ln()
        - alpha.ln()
        - 0.5 * PI.ln())
    .exp()
}

/// ∫_lo^hi u^{α-1} Φ̄(√u/σ) du by adaptive quadrature in v = √u; `hi` may
/// be infinite.
pub fn gaussian_moment_integral(alpha: f64, sigma: f64, lo: f64, hi: f64, tol: f64) -> Quadrature {
    // Φ̄(v/σ) < 1e-320 beyond v = 38.5σ.
    let v_hi = hi.sqrt().min(40.0 * sigma);
    let v_lo = lo.max(0.0).sqrt();
    if v_hi <= v_lo {
        return Quadrature {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        };
    }
    let mut breaks = vec![v_lo];
    let mut b = (v_lo / sigma).floor() + 1.0;
    while b * sigma < v_hi {
        breaks.push(b * sigma);
        b += 1.0;
    }
    breaks.push(v_hi);
    let mut f = |v: f64| 2.0 * v.powf(2.0 * alpha - 1.0) * normal_sf(v / sigma);
    integrate_with_breaks(&mut f, &breaks, 0.0, tol, 20_000)
}

/// Quadrature cross-check of [`gamma_alpha`].
pub fn gamma_alpha_quadrature(alpha: f64, sigma: f64) -> Quadrature {
    gaussian_moment_integral(alpha, sigma, 0.0, f64::INFINITY, 1e-13)
}

/// P(m^{n/2} R_n <= x) in the limit: ∫_0^∞ Φ(x√u/σ) w(u) du.
///
/// Uses Φ̄(z) = π^{-1} ∫_0^{π/2} exp(-z²/(2 sin²ψ)) dψ, which turns the
/// mixture into an integral of φ - q over a compact interval.
pub fn normal_deviation_cdf(law: &OffspringLaw, sigma: f64, x: f64, tol: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::VarianceZero);
    }
    let q = law.extinction_prob();
    let c2 = x * x / (sigma * sigma);
    let mut failure = None;
    let upper_part = if c2 == 0.0 {
        0.5 * (1.0 - q)
    } else {
        let r = integrate(
            |psi: f64| {
                let s = psi.sin();
                if s <= 0.0 {
                    return 0.0;
                }
                let h = c2 / (2.0 * s * s);
                match laplace_w_complement(law, h, 1e-15) {
                    Ok(c) => (1.0 - c.value - q).max(0.0),
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                }
            },
            0.0,
            0.5 * PI,
            tol * 1e-2,
            tol,
        );
        r.value / PI
    };
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(if x >= 0.0 { 1.0 - q - upper_part } else { upper_part })
}

/// Knobs of [`decomposition_tail`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompositionOptions {
    pub engine: EngineConfig,
    pub tails: TailOptions,
    /// Largest k handled exactly; `None` means the whole support.
    pub k_budget: Option<u64>,
    /// Tilt override; by default the Chernoff rate of the smallest ε.
    pub tilt: Option<f64>,
    /// Number of consecutive k per tail sweep.
    pub block: usize,
}

impl Default for DecompositionOptions {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            tails: TailOptions::default(),
            k_budget: None,
            tilt: None,
            block: 4096,
        }
    }
}

/// A decomposition sum with its certified error bar: the exact value lies
/// in [value - error_bar, value + error_bar].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionValue {
    pub n: usize,
    pub epsilon: f64,
    pub value: f64,
    /// ln of `value`; finite even where `value` underflows.
    pub ln_value: f64,
    pub error_bar: f64,
    pub ln_error_bar: f64,
    /// k range actually summed.
    pub k_range: (u64, u64),
    pub tilt: f64,
    /// First k whose tail entered only through the Fuk-Nagaev bound.
    pub bounded_from: Option<u64>,
    pub tiers: Vec<Tier>,
}

/// Σ_{k ∈ k_range} P(Z_n = k) P(S_k >= εk), over the whole positive support
/// by default.
pub fn decomposition_tail(
    law: &OffspringLaw,
    x: &IncrementLaw,
    n: usize,
    eps: f64,
    k_range: Option<(u64, u64)>,
    opts: &DecompositionOptions,
) -> Result<DecompositionValue> {
    Ok(decomposition_tails(law, x, n, &[eps], k_range, opts)?.remove(0))
}

/// [`decomposition_tail`] for several ε sharing one generation law.
pub fn decomposition_tails(
    law: &OffspringLaw,
    x: &IncrementLaw,
    n: usize,
    eps: &[f64],
    k_range: Option<(u64, u64)>,
    opts: &DecompositionOptions,
) -> Result<Vec<DecompositionValue>> {
    if eps.iter().any(|e| e.is_nan()) {
        return Err(Error::InvalidArgument("ε is NaN".into()));
    }
    if eps.is_empty() {
        return Ok(Vec::new());
    }
    let eps_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    // Weighting by e^{-tk} with t <= I(ε) keeps e^{tk} P(S_k >= εk) <= 1, so
    // the tilted truncation error bounds the error of the sum.
    let tilt = opts.tilt.unwrap_or_else(|| {
        let rate = x.chernoff_rate(eps_min);
        if rate.is_finite() {
            rate
        } else {
            0.0
        }
    });
    let pmf = tilted_generation_pmf(law, n, tilt, &opts.engine)?;
    let ln_trunc = pmf.ln_error_weight();
    let (lo, hi) = k_range.unwrap_or((1, u64::MAX));
    let lo = lo.max(1);
    let points: Vec<(u64, f64)> = pmf
        .iter_ln()
        .filter(|&(k, _)| k >= 1 && (k as u64) >= lo && (k as u64) <= hi)
        .map(|(k, lp)| (k as u64, lp))
        .collect();
    let support = match (points.first(), points.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => (lo, lo),
    };
    let budget = opts.k_budget.unwrap_or(u64::MAX);
    let r = if law.alpha().is_finite() {
        1.0 + law.alpha()
    } else {
        2.0
    };

    eps.iter()
        .map(|&e| {
            let mut sum = LogSum::default();
            let mut err = LogSum::default();
            err.add(ln_trunc);
            let mut tiers = Vec::new();
            let mut bounded_from = None;
            let mut bound = LogSum::default();
            for block in points.chunks(opts.block.max(1)) {
                let exact: Vec<(u64, f64)> = if bounded_from.is_none() {
                    block.iter().filter(|p| p.0 <= budget).copied().collect()
                } else {
                    Vec::new()
                };
                let mut rest: &[(u64, f64)] = &block[exact.len()..];
                if !exact.is_empty() {
                    let query: Vec<(u64, f64)> = exact.iter().map(|&(k, _)| (k, e * k as f64)).collect();
                    match x.sum_tail_sweep(&query, &opts.tails) {
                        Ok(vals) => {
                            for (&(_, lp), v) in exact.iter().zip(vals) {
                                sum.add(lp + v.ln_value);
                                if v.error_bar > 0.0 {
                                    err.add(lp + v.error_bar.ln());
                                }
                                if !tiers.contains(&v.tier) {
                                    tiers.push(v.tier);
                                }
                            }
                        }
                        Err(Error::BudgetExceeded(_)) => rest = block,
                        Err(other) => return Err(other),
                    }
                }
                if let Some(&(k0, _)) = rest.first() {
                    bounded_from.get_or_insert(k0);
                    for &(k, lp) in rest {
                        let b = x.fuk_nagaev_1(k, e, r)?.min(1.0);
                        bound.add(lp + b.ln());
                    }
                }
            }
            // The bounded part enters at its midpoint.
            let half_bound = bound.ln() - std::f64::consts::LN_2;
            sum.add(half_bound);
            err.add(half_bound);
            let ln_value = sum.ln();
            let ln_error_bar = err.ln();
            Ok(DecompositionValue {
                n,
                epsilon: e,
                value: ln_value.exp(),
                ln_value,
                error_bar: ln_error_bar.exp(),
                ln_error_bar,
                k_range: support,
                tilt,
                bounded_from,
                tiers,
            })
        })
        .collect()
}

/// How a probability is turned into the quantity compared with a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Power of ε_n.
    pub eps_power: f64,
    /// Power of m^n.
    pub m_power: f64,
    /// Normalize ln P instead of P.
    pub log: bool,
}

impl Normalization {
    /// Normalized value from ln P.
    pub fn apply(&self, n: usize, m: f64, eps: f64, ln_p: f64) -> f64 {
        let ln_factor = self.eps_power * eps.ln() + self.m_power * n as f64 * m.ln();
        if self.log {
            ln_factor.exp() * ln_p
        } else {
            (ln_factor + ln_p).exp()
        }
    }

    /// Normalized error bar from an absolute error on P.
    pub fn apply_error(&self, n: usize, m: f64, eps: f64, ln_p: f64, ln_err: f64) -> f64 {
        let ln_factor = self.eps_power * eps.ln() + self.m_power * n as f64 * m.ln();
        if self.log {
            // |Δ ln P| <= err / (P - err) when err < P.
            let rel = (ln_err - ln_p).exp();
            if rel < 1.0 {
                ln_factor.exp() * rel / (1.0 - rel)
            } else {
                f64::INFINITY
            }
        } else {
            (ln_factor + ln_err).exp()
        }
    }
}

/// Predicted limit of the normalized probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub regime: Regime,
    pub normalization: Normalization,
    pub target_low: f64,
    pub target_high: f64,
    /// Point target when the theorem gives one.
    pub point: Option<f64>,
    pub kappa: Option<f64>,
    pub constants: BTreeMap<String, f64>,
    /// Relative uncertainty of the constants, added to the final tolerance.
    pub constant_uncertainty: f64,
    pub notes: Vec<String>,
}

/// V∗ and V* with the V-condition diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VConstants {
    pub v_lower: f64,
    pub v_upper: f64,
    /// V₀ when 𝖲(φ(h))h^α is constant on a period.
    pub v0: Option<f64>,
    pub spread: f64,
}

/// V∗, V*: exact V₀ when the V-condition holds, extrema of u^{1-α}w(u) on
/// the configured window otherwise.
pub fn v_constants(law: &OffspringLaw, cfg: &LimitConfig, engine: &EngineConfig) -> Result<VConstants> {
    let m = law.mean();
    let h_grid: Vec<f64> = (0..=16).map(|j| 100.0 * m.powf(j as f64 / 16.0)).collect();
    let cond = v_condition(law, &h_grid, cfg.tol.max(1e-13))?;
    if cond.spread <= 1e-6 * cond.v0.abs() {
        let v = cond.density_constant;
        return Ok(VConstants {
            v_lower: v,
            v_upper: v,
            v0: Some(v),
            spread: cond.spread,
        });
    }
    let est = DensityEstimator::new(law, cfg.density_depth, engine)?;
    let (u_lo, u_hi) = cfg.v_window;
    let b = v_bounds(law, &est, u_lo, u_hi.max(u_lo * m), cfg.v_points)?;
    Ok(VConstants {
        v_lower: b.v_lower,
        v_upper: b.v_upper,
        v0: None,
        spread: cond.spread,
    })
}

fn violated(msg: impl Into<String>) -> Error {
    Error::RegimePreconditionViolated(msg.into())
}

/// Checks the preconditions of the regime and returns its target.
pub fn predict_regime(
    exp: &DeviationExperiment,
    limits: &LimitConfig,
    engine: &EngineConfig,
) -> Result<Prediction> {
    exp.epsilon.check()?;
    let law = &exp.law;
    let x = &exp.increments;
    let alpha = law.alpha();
    let sigma = x.sigma();
    let fam = &exp.epsilon;
    let mut constants = BTreeMap::new();
    let mut notes = Vec::new();
    let mut uncertainty = 0.0;
    let needs_schroder = || {
        if law.is_schroder() {
            Ok(())
        } else {
            Err(violated(format!("{} requires the Schröder case", exp.regime)))
        }
    };
    let needs_bottcher = || {
        if law.is_schroder() {
            Err(violated(format!("{} requires the Böttcher case", exp.regime)))
        } else {
            Ok(())
        }
    };
    let eps_to_zero = || {
        if fam.growth(0.0, 0.0) < 0 {
            Ok(())
        } else {
            Err(violated("ε_n must tend to 0"))
        }
    };
    let eps2_mn_to_inf = || {
        // ε_n² m^n → ∞ iff ε_n m^{n/2} → ∞.
        if fam.growth(0.5, 0.0) > 0 {
            Ok(())
        } else {
            Err(violated("ε_n² m^n must tend to infinity"))
        }
    };
    let heavy = || -> Result<(f64, f64)> {
        let theta = x
            .tail_index()
            .ok_or_else(|| violated(format!("{} requires increments with a tail index", exp.regime)))?;
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(violated(format!("{} requires 1 < α < ∞, got α = {alpha}", exp.regime)));
        }
        if !(theta > 2.0 && theta < 1.0 + alpha) {
            return Err(violated(format!(
                "{} requires θ ∈ (2, 1 + α) = (2, {}), got θ = {theta}",
                exp.regime,
                1.0 + alpha
            )));
        }
        Ok((theta, kappa(alpha, theta)))
    };
    let v_and_gamma = |constants: &mut BTreeMap<String, f64>, notes: &mut Vec<String>| -> Result<(f64, f64, bool)> {
        let v = v_constants(law, limits, engine)?;
        let g = gamma_alpha(alpha, sigma);
        constants.insert("gamma_alpha".into(), g);
        constants.insert("v_lower".into(), v.v_lower);
        constants.insert("v_upper".into(), v.v_upper);
        if let Some(v0) = v.v0 {
            constants.insert("v0".into(), v0);
        } else {
            notes.push(format!(
                "V-condition not verified (spread {:.3e}); bracket from the density on [{}, {}]",
                v.spread, limits.v_window.0, limits.v_window.1
            ));
        }
        Ok((v.v_lower * g, v.v_upper * g, v.v0.is_some()))
    };
    let tail_target = |constants: &mut BTreeMap<String, f64>, theta: f64| -> Result<(f64, f64)> {
        let fit = x
            .tail_fit()
            .ok_or_else(|| violated("increments carry no fitted tail constant"))?;
        let i = i_theta(law, theta, 1e-10)?;
        constants.insert("a".into(), fit.a);
        constants.insert("i_theta".into(), i.value);
        Ok((fit.a * i.value, fit.max_rel_dev + i.error / i.value.abs()))
    };

    let (normalization, lo, hi, point, kap) = match exp.regime {
        Regime::Ddev => {
            needs_schroder()?;
            let moment_ok = x.exp_moment() || x.tail_index().is_some_and(|t| t > 1.0 + alpha);
            if !moment_ok {
                return Err(violated("ddev requires E(X⁺)^{1+α} < ∞"));
            }
            eps_to_zero()?;
            eps2_mn_to_inf()?;
            let (lo, hi, exact) = v_and_gamma(&mut constants, &mut notes)?;
            let norm = Normalization {
                eps_power: 2.0 * alpha,
                m_power: alpha,
                log: false,
            };
            (norm, lo, hi, exact.then_some(lo), None)
        }
        Regime::LdevA | Regime::LdevB | Regime::LdevC { .. } => {
            needs_schroder()?;
            let (theta, kap) = heavy()?;
            eps_to_zero()?;
            let g = fam.growth(kap, 0.0);
            constants.insert("kappa".into(), kap);
            match exp.regime {
                Regime::LdevA => {
                    if g >= 0 {
                        return Err(violated(format!("ldev_a requires ε_n m^(ϰn) → 0 (ϰ = {kap:.5})")));
                    }
                    eps2_mn_to_inf()?;
                    let (lo, hi, exact) = v_and_gamma(&mut constants, &mut notes)?;
                    let norm = Normalization {
                        eps_power: 2.0 * alpha,
                        m_power: alpha,
                        log: false,
                    };
                    (norm, lo, hi, exact.then_some(lo), Some(kap))
                }
                Regime::LdevB => {
                    if g <= 0 {
                        return Err(violated(format!("ldev_b requires ε_n m^(ϰn) → ∞ (ϰ = {kap:.5})")));
                    }
                    let (t, u) = tail_target(&mut constants, theta)?;
                    uncertainty = u;
                    let norm = Normalization {
                        eps_power: theta,
                        m_power: theta - 1.0,
                        log: false,
                    };
                    (norm, t, t, Some(t), Some(kap))
                }
                Regime::LdevC { tau } => {
                    let ok = match fam {
                        EpsilonFamily::Power { c, rho, kappa: kp } => {
                            (rho - kap).abs() < 1e-9 && kp.abs() < 1e-12 && (c * tau - 1.0).abs() < 1e-9
                        }
                        _ => false,
                    };
                    if !ok {
                        return Err(violated(format!(
                            "ldev_c(τ = {tau}) requires ε_n = τ^(-1) m^(-ϰn) with ϰ = {kap:.6}"
                        )));
                    }
                    let (vlo, vhi, _) = v_and_gamma(&mut constants, &mut notes)?;
                    let (t, u) = tail_target(&mut constants, theta)?;
                    uncertainty = u;
                    let big = tau.powf(theta) * t;
                    let norm = Normalization {
                        eps_power: 0.0,
                        m_power: alpha * (theta - 2.0) / (2.0 * alpha - theta),
                        log: false,
                    };
                    let lo = tau.powf(2.0 * alpha) * vlo + big;
                    let hi = tau.powf(2.0 * alpha) * vhi + big;
                    (norm, lo, hi, (lo == hi).then_some(lo), Some(kap))
                }
                _ => unreachable!(),
            }
        }
        Regime::Bottcher | Regime::BottcherLattice => {
            needs_bottcher()?;
            if !x.exp_moment() {
                return Err(violated(format!("{} requires a finite exponential moment", exp.regime)));
            }
            eps_to_zero()?;
            eps2_mn_to_inf()?;
            if exp.regime == Regime::BottcherLattice && fam.lambda(exp.n_range.0).is_none() {
                return Err(violated("bottcher_lattice requires ε_n = m^(-λ_n/2) with integer λ_n"));
            }
            let beta = law.bottcher_beta().expect("Böttcher law");
            let mu = law.min_offspring() as f64;
            let l = ln_bottcher_of_phi(law, 1.0 / (2.0 * sigma * sigma), 1e-13)?;
            constants.insert("L".into(), l);
            constants.insert("beta".into(), beta);
            let norm = Normalization {
                eps_power: -2.0 * beta,
                m_power: -beta,
                log: true,
            };
            if exp.regime == Regime::Bottcher {
                (norm, mu * l, l / mu, None, None)
            } else {
                (norm, l, l, Some(l), None)
            }
        }
        Regime::Ldev1 => {
            needs_bottcher()?;
            let theta = x
                .tail_index()
                .ok_or_else(|| violated("ldev1 requires increments with a tail index"))?;
            if !(theta > 2.0) {
                return Err(violated(format!("ldev1 requires θ > 2, got {theta}")));
            }
            let beta = law.bottcher_beta().expect("Böttcher law");
            if fam.growth(0.5, -0.5 / beta) <= 0 {
                return Err(violated("ldev1 requires ε_n m^(n/2) n^(-1/(2β)) → ∞"));
            }
            let (t, u) = tail_target(&mut constants, theta)?;
            uncertainty = u;
            let norm = Normalization {
                eps_power: theta,
                m_power: theta - 1.0,
                log: false,
            };
            (norm, t, t, Some(t), None)
        }
    };
    Ok(Prediction {
        regime: exp.regime,
        normalization,
        target_low: lo.min(hi),
        target_high: lo.max(hi),
        point,
        kappa: kap,
        constants,
        constant_uncertainty: uncertainty,
        notes,
    })
}

/// One generation of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub n: usize,
    pub epsilon: f64,
    pub raw_probability: f64,
    pub ln_probability: f64,
    pub error_bar: f64,
    pub normalized_value: f64,
    pub normalized_error: f64,
    pub target_low: f64,
    pub target_high: f64,
    /// Distance from the normalized value to the target interval.
    pub distance: f64,
    pub relative_distance: f64,
}

/// Outcome of one acceptance rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub rule: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub regime: Regime,
    pub epsilon: String,
    pub prediction: Prediction,
    pub rows: Vec<VerifyRow>,
    pub rules: Vec<RuleOutcome>,
    pub passed: bool,
}

/// Distance of `v` to [lo, hi], absolute and relative to the nearest end.
fn distance_to(v: f64, lo: f64, hi: f64) -> (f64, f64) {
    if v >= lo && v <= hi {
        return (0.0, 0.0);
    }
    let end = if v < lo { lo } else { hi };
    let d = (v - end).abs();
    (d, if end != 0.0 { d / end.abs() } else { d })
}

/// Runs the regime pipeline over the experiment's generations.
pub fn verify(
    exp: &DeviationExperiment,
    limits: &LimitConfig,
    opts: &DecompositionOptions,
) -> Result<VerificationReport> {
    let prediction = predict_regime(exp, limits, &opts.engine)?;
    let m = exp.law.mean();
    let mut dopts = *opts;
    if exp.k_truncation.is_some() {
        dopts.k_budget = exp.k_truncation;
    }
    let ns = exp.ns();
    let cells: Vec<Result<VerifyRow>> = ns
        .par_iter()
        .map(|&n| {
            let eps = exp.eps(n)?;
            let d = decomposition_tail(&exp.law, &exp.increments, n, eps, None, &dopts)?;
            let norm = &prediction.normalization;
            let value = norm.apply(n, m, eps, d.ln_value);
            let (distance, relative_distance) = distance_to(value, prediction.target_low, prediction.target_high);
            Ok(VerifyRow {
                n,
                epsilon: eps,
                raw_probability: d.value,
                ln_probability: d.ln_value,
                error_bar: d.error_bar,
                normalized_value: value,
                normalized_error: norm.apply_error(n, m, eps, d.ln_value, d.ln_error_bar),
                target_low: prediction.target_low,
                target_high: prediction.target_high,
                distance,
                relative_distance,
            })
        })
        .collect();
    let rows = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let rules = judge(&rows, &exp.tolerances, prediction.constant_uncertainty);
    let passed = rules.iter().all(|r| r.passed);
    Ok(VerificationReport {
        regime: exp.regime,
        epsilon: exp.epsilon.to_string(),
        prediction,
        rows,
        rules,
        passed,
    })
}

/// Applies the trend, final-tolerance and bracket rules.
pub fn judge(rows: &[VerifyRow], tol: &Tolerances, extra: f64) -> Vec<RuleOutcome> {
    let mut rules = Vec::new();
    if rows.is_empty() {
        return rules;
    }
    let w = tol.trend_window.max(1).min(rows.len());
    let tail = &rows[rows.len() - w..];
    let trend_ok = tail.windows(2).all(|p| p[1].distance <= p[0].distance);
    rules.push(RuleOutcome {
        rule: "trend".into(),
        passed: trend_ok,
        detail: format!(
            "distances over the last {w} n: {:?}",
            tail.iter().map(|r| r.distance).collect::<Vec<_>>()
        ),
    });
    let last = rows.last().expect("non-empty");
    let allowed = tol.final_relative + extra;
    rules.push(RuleOutcome {
        rule: "final_tolerance".into(),
        passed: last.relative_distance <= allowed,
        detail: format!(
            "relative distance {:.4e} at n = {} (allowed {:.4e})",
            last.relative_distance, last.n, allowed
        ),
    });
    if tol.all_in_bracket {
        let outside: Vec<usize> = rows.iter().filter(|r| r.distance > 0.0).map(|r| r.n).collect();
        rules.push(RuleOutcome {
            rule: "all_in_bracket".into(),
            passed: outside.is_empty(),
            detail: if outside.is_empty() {
                "every n inside the bracket".into()
            } else {
                format!("outside at n = {outside:?}")
            },
        });
    }
    rules
}

/// Normalized partial sum over k ∈ [δ/ε², A/ε²] against its Gaussian
/// moment bracket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketCheck {
    pub n: usize,
    pub epsilon: f64,
    pub normalized: f64,
    pub normalized_error: f64,
    pub lower: f64,
    pub upper: f64,
    /// Relative amount by which the bracket is missed (0 inside).
    pub excess: f64,
}

pub fn partial_sum_bracket(
    law: &OffspringLaw,
    x: &IncrementLaw,
    n: usize,
    eps: f64,
    delta: f64,
    big_a: f64,
    v: &VConstants,
    opts: &DecompositionOptions,
) -> Result<BracketCheck> {
    if !law.is_schroder() {
        return Err(Error::NotSchroder);
    }
    let alpha = law.alpha();
    let m = law.mean();
    let k_lo = (delta / (eps * eps)).ceil() as u64;
    let k_hi = (big_a / (eps * eps)).floor() as u64;
    let d = decomposition_tail(law, x, n, eps, Some((k_lo, k_hi)), opts)?;
    let norm = Normalization {
        eps_power: 2.0 * alpha,
        m_power: alpha,
        log: false,
    };
    let value = norm.apply(n, m, eps, d.ln_value);
    let integral = gaussian_moment_integral(alpha, x.sigma(), delta, big_a, 1e-12).value;
    let (lower, upper) = (v.v_lower * integral, v.v_upper * integral);
    let (_, excess) = distance_to(value, lower, upper);
    Ok(BracketCheck {
        n,
        epsilon: eps,
        normalized: value,
        normalized_error: norm.apply_error(n, m, eps, d.ln_value, d.ln_error_bar),
        lower,
        upper,
        excess,
    })
}

/// Truncated series Σ_{k <= k_max} ν_k P(S_k >= εk), the fixed-ε limit of
/// γ^{-n} P(R_n >= ε), with ν_k taken at the given depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEpsilonSeries {
    pub epsilon: f64,
    pub value: f64,
    pub depth: usize,
    pub k_max: usize,
    /// Largest relative change of ν_k between the last two depths.
    pub nu_gap: f64,
}

pub fn fixed_epsilon_series(
    law: &OffspringLaw,
    x: &IncrementLaw,
    eps: f64,
    k_max: usize,
    depth: usize,
    opts: &DecompositionOptions,
) -> Result<FixedEpsilonSeries> {
    if !law.is_schroder() {
        return Err(Error::NotSchroder);
    }
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be positive".into()));
    }
    let pmfs = generation_pmfs(law, depth, &opts.engine)?;
    let coeffs = schroder_coeffs_from(law, &pmfs[depth - 1], &pmfs[depth], depth, k_max)?;
    let query: Vec<(u64, f64)> = (1..=k_max as u64).map(|k| (k, eps * k as f64)).collect();
    let tails = x.sum_tail_sweep(&query, &opts.tails)?;
    let value = coeffs.nu.iter().zip(&tails).map(|(nu, t)| nu * t.value).sum();
    let nu_gap = coeffs
        .relative_gap
        .iter()
        .zip(&coeffs.nu)
        .filter(|(_, &nu)| nu > 1e-300)
        .map(|(g, _)| *g)
        .fold(0.0, f64::max);
    Ok(FixedEpsilonSeries {
        epsilon: eps,
        value,
        depth,
        k_max,
        nu_gap,
    })
}

/// Writes one CSV line per generation, every value with its error bar.
pub fn write_verify_csv<W: std::io::Write>(mut w: W, rows: &[VerifyRow]) -> Result<()> {
    writeln!(
        w,
        "n,epsilon,raw_probability,ln_probability,error_bar,normalized_value,normalized_error,target_low,target_high"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{:.14e},{:.14e},{:.14e},{:.14e},{:.14e},{:.14e},{:.14e},{:.14e}",
            r.n,
            r.epsilon,
            r.raw_probability,
            r.ln_probability,
            r.error_bar,
            r.normalized_value,
            r.normalized_error,
            r.target_low,
            r.target_high
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lf2() -> OffspringLaw {
        OffspringLaw::linear_fractional(2.0).unwrap()
    }

    #[test]
    fn hand_enumerated_decomposition() {
        let law = OffspringLaw::from_pairs(&[(1, 0.5), (2, 0.5)]).unwrap();
        let x = IncrementLaw::rademacher();
        let d = decomposition_tail(&law, &x, 1, 1.0, None, &DecompositionOptions::default()).unwrap();
        assert_relative_eq!(d.value, 0.375, max_relative = 1e-12);
        assert!(d.error_bar < 1e-12);
    }

    #[test]
    fn impossible_event_is_zero() {
        let x = IncrementLaw::rademacher();
        let d = decomposition_tail(&lf2(), &x, 4, 1.5, None, &DecompositionOptions::default()).unwrap();
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn disjoint_ranges_add_up() {
        let x = IncrementLaw::rademacher();
        let o = DecompositionOptions::default();
        let full = decomposition_tail(&lf2(), &x, 6, 0.3, None, &o).unwrap();
        let a = decomposition_tail(&lf2(), &x, 6, 0.3, Some((1, 20)), &o).unwrap();
        let b = decomposition_tail(&lf2(), &x, 6, 0.3, Some((21, u64::MAX)), &o).unwrap();
        assert_relative_eq!(a.value + b.value, full.value, max_relative = 1e-13);
    }

    #[test]
    fn monotone_in_epsilon() {
        let x = IncrementLaw::lattice_pmf(&[(-1, 0.3), (0, 0.4), (1, 0.3)]).unwrap();
        let eps = [0.05, 0.1, 0.2, 0.4, 0.8];
        let v = decomposition_tails(&lf2(), &x, 6, &eps, None, &DecompositionOptions::default()).unwrap();
        for w in v.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
    }

    #[test]
    fn gamma_alpha_values() {
        assert_relative_eq!(gamma_alpha(1.0, 1.0), 0.5, max_relative = 1e-14);
        assert_relative_eq!(gamma_alpha(1.0, 2.0), 2.0, max_relative = 1e-14);
        let q = gamma_alpha_quadrature(2.7381, 1.0);
        assert!((q.value - gamma_alpha(2.7381, 1.0)).abs() < 1e-8);
    }

    #[test]
    fn kappa_value() {
        assert!((kappa(2.7381, 2.5) - 0.41600).abs() < 1e-5);
    }

    #[test]
    fn ddev_target_for_linear_fractional() {
        let exp = DeviationExperiment::new(lf2(), IncrementLaw::rademacher(), Regime::Ddev, (8, 14)).unwrap();
        let p = predict_regime(&exp, &LimitConfig::default(), &EngineConfig::default()).unwrap();
        assert_relative_eq!(p.point.unwrap(), 0.5, max_relative = 1e-6);
    }

    #[test]
    fn bottcher_bracket_is_ordered() {
        let law = OffspringLaw::from_pairs(&[(2, 0.5), (3, 0.5)]).unwrap();
        let exp = DeviationExperiment::new(law, IncrementLaw::rademacher(), Regime::Bottcher, (8, 12)).unwrap();
        let p = predict_regime(&exp, &LimitConfig::default(), &EngineConfig::default()).unwrap();
        let l = p.constants["L"];
        assert!(l < 0.0);
        let beta = 2f64.ln() / 2.5f64.ln();
        assert_relative_eq!(p.target_low, l * 2.5f64.powf(beta), max_relative = 1e-12);
        assert_relative_eq!(p.target_high, l * 2.5f64.powf(-beta), max_relative = 1e-12);
    }

    #[test]
    fn preconditions_are_named() {
        let x = IncrementLaw::rademacher();
        let exp = DeviationExperiment::new(lf2(), x.clone(), Regime::Bottcher, (8, 12)).unwrap();
        let e = predict_regime(&exp, &LimitConfig::default(), &EngineConfig::default()).unwrap_err();
        assert!(matches!(e, Error::RegimePreconditionViolated(ref s) if s.contains("Böttcher")));
        assert!(DeviationExperiment::new(lf2(), x.clone(), Regime::LdevB, (8, 12)).is_err());
        let p = IncrementLaw::centered_pareto_lattice(2.5, 1.0, None).unwrap();
        let law = OffspringLaw::from_pairs(&[(1, 0.2), (2, 0.8)]).unwrap();
        let exp = DeviationExperiment::new(law, p, Regime::Ddev, (8, 12)).unwrap();
        assert!(predict_regime(&exp, &LimitConfig::default(), &EngineConfig::default()).is_err());
        let exp = DeviationExperiment::new(lf2(), x, Regime::Ddev, (8, 12))
            .unwrap()
            .with_epsilon(EpsilonFamily::power(1.0, 0.6, 0.0));
        let e = predict_regime(&exp, &LimitConfig::default(), &EngineConfig::default()).unwrap_err();
        assert!(e.to_string().contains("infinity"));
    }

    #[test]
    fn heavy_tail_regimes_classify_by_kappa() {
        let law = OffspringLaw::from_pairs(&[(1, 0.2), (2, 0.8)]).unwrap();
        let x = IncrementLaw::centered_pareto_lattice(2.5, 1.0, None).unwrap();
        let kap = kappa(law.alpha(), 2.5);
        let exp = DeviationExperiment::new(law.clone(), x.clone(), Regime::LdevB, (8, 10))
            .unwrap()
            .with_epsilon(EpsilonFamily::power(1.0, 0.25, 0.0));
        let p = predict_regime(&exp, &LimitConfig::default(), &EngineConfig::default()).unwrap();
        assert_relative_eq!(p.kappa.unwrap(), kap);
        assert!(p.point.unwrap() > 0.0);
        let wrong = exp.clone().with_epsilon(EpsilonFamily::power(1.0, kap + 0.02, 0.0));
        assert!(predict_regime(&wrong, &LimitConfig::default(), &EngineConfig::default()).is_err());
        let c = DeviationExperiment::new(law, x, Regime::LdevC { tau: 2.0 }, (8, 10)).unwrap();
        assert!(matches!(c.epsilon, EpsilonFamily::Power { c, .. } if (c - 0.5).abs() < 1e-15));
    }

    #[test]
    fn normal_deviation_cdf_limits() {
        let law = lf2();
        assert_relative_eq!(normal_deviation_cdf(&law, 1.0, 0.0, 1e-12).unwrap(), 0.5);
        assert!((normal_deviation_cdf(&law, 1.0, 1e4, 1e-12).unwrap() - 1.0).abs() < 1e-7);
        // Independent quadrature of ∫ Φ(√u) e^{-u} du.
        let want = integrate(|u: f64| crate::numeric::normal_cdf(u.sqrt()) * (-u).exp(), 0.0, 60.0, 1e-14, 1e-13);
        let got = normal_deviation_cdf(&law, 1.0, 1.0, 1e-12).unwrap();
        assert!((got - want.value).abs() < 1e-6, "{got} vs {}", want.value);
        let s = normal_deviation_cdf(&law, 1.0, -1.0, 1e-12).unwrap();
        assert_relative_eq!(s + got, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn regime_strings_round_trip() {
        for r in [
            Regime::Ddev,
            Regime::LdevA,
            Regime::LdevB,
            Regime::LdevC { tau: 1.5 },
            Regime::Bottcher,
            Regime::BottcherLattice,
            Regime::Ldev1,
        ] {
            assert_eq!(r.to_string().parse::<Regime>().unwrap(), r);
        }
        assert_eq!("ldev-b".parse::<Regime>().unwrap(), Regime::LdevB);
        assert!("ldev_c".parse::<Regime>().is_err());
    }

    #[test]
    fn epsilon_families() {
        let f = EpsilonFamily::BottcherCeil { divisor: 4 };
        assert_eq!(f.lambda(8), Some(2));
        assert_eq!(f.lambda(9), Some(3));
        assert_relative_eq!(f.eps(9, 2.5).unwrap(), 2.5f64.powf(-1.5));
        let g = EpsilonFamily::power(1.0, 0.25, 0.0);
        assert_relative_eq!(g.eps(8, 2.0).unwrap(), 0.25);
        let l = EpsilonFamily::BottcherList {
            first_n: 3,
            lambdas: vec![1, 2],
        };
        assert!(l.eps(5, 2.0).is_err());
    }

    #[test]
    fn fixed_epsilon_series_matches_scaled_decomposition() {
        let law = OffspringLaw::from_pairs(&[(0, 0.1), (1, 0.3), (2, 0.6)]).unwrap();
        let x = IncrementLaw::rademacher();
        let o = DecompositionOptions::default();
        let eps = 0.5;
        let series = fixed_epsilon_series(&law, &x, eps, 200, 12, &o).unwrap();
        let n = 12;
        let d = decomposition_tail(&law, &x, n, eps, None, &o).unwrap();
        let scaled = d.value / law.gamma().powi(n as i32);
        assert!((scaled / series.value - 1.0).abs() < 0.02, "{scaled} vs {}", series.value);
    }
}
