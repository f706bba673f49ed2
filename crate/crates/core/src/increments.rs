//! Centered i.i.d. increments X_i, exact tails of S_k = X_1 + ... + X_k and
//! the classical inequalities for them.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::distengine::{convolve_direct, ProbVector};
use crate::error::{Error, Result};
use crate::numeric::{ln_binomial_upper_tail, normal_sf};

/// Tail mass left out of the stored Pareto pmf.
const PARETO_TAIL: f64 = 1e-14;
/// Increments whose range exceeds this many lattice points use the Fourier tier.
const LATTICE_WIDTH_LIMIT: usize = 4096;
/// Steps between re-anchoring Q̂^k with a direct power.
const ANCHOR_EVERY: usize = 512;

/// Declared increment law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IncrementSpec {
    Rademacher,
    /// 1 - p with probability p, -p otherwise.
    TwoPointIndicator { p: f64 },
    /// Integer atoms, centered by their mean.
    LatticePmf { atoms: Vec<(i64, f64)> },
    /// Y - E Y with Y >= 1 integer and P(Y >= y) = (1 + (y - 1)/scale)^{-θ}.
    CenteredParetoLattice {
        theta: f64,
        scale: f64,
        cutoff: Option<u64>,
    },
}

impl IncrementSpec {
    pub fn build(&self) -> Result<IncrementLaw> {
        IncrementLaw::new(self.clone())
    }
}

impl fmt::Display for IncrementSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IncrementSpec::Rademacher => write!(f, "rademacher"),
            IncrementSpec::TwoPointIndicator { p } => write!(f, "two_point_indicator p={p}"),
            IncrementSpec::LatticePmf { atoms } => {
                let parts: Vec<String> = atoms.iter().map(|(k, p)| format!("{k}: {p}")).collect();
                write!(f, "{{{}}}", parts.join(", "))
            }
            IncrementSpec::CenteredParetoLattice {
                theta,
                scale,
                cutoff,
            } => {
                write!(f, "centered_pareto_lattice theta={theta} scale={scale}")?;
                if let Some(c) = cutoff {
                    write!(f, " cutoff={c}")?;
                }
                Ok(())
            }
        }
    }
}

/// `{k: p, ...}` with optional braces and quoted keys.
fn parse_atoms(s: &str) -> Result<IncrementSpec> {
    let body = s.trim_start_matches('{').trim_end_matches('}');
    let mut atoms = Vec::new();
    for pair in body.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, p) = pair
            .split_once(':')
            .ok_or_else(|| config_err(format!("unknown increment law `{s}`")))?;
        let k: i64 = k
            .trim()
            .trim_matches('"')
            .parse()
            .map_err(|_| config_err(format!("bad atom `{}`", pair.trim())))?;
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|_| config_err(format!("bad mass `{}`", pair.trim())))?;
        atoms.push((k, p));
    }
    if atoms.is_empty() {
        return Err(config_err("empty increment law".into()));
    }
    Ok(IncrementSpec::LatticePmf { atoms })
}

fn config_err(message: String) -> Error {
    Error::ConfigInvalid {
        field: "increments".into(),
        message,
    }
}

/// Parses `rademacher`, `two_point_indicator p=0.25`,
/// `centered_pareto_lattice theta=2.5 [scale=1] [cutoff=N]` or `{-1: 0.5, 1: 0.5}`.
impl FromStr for IncrementSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') || s.contains(':') {
            return parse_atoms(s);
        }
        let mut words = s.split_whitespace();
        let head = words.next().unwrap_or("");
        let mut named = std::collections::BTreeMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| config_err(format!("expected key=value, got `{w}`")))?;
            named.insert(k.to_string(), v.to_string());
        }
        let num = |key: &str| -> Result<Option<f64>> {
            named
                .get(key)
                .map(|v| {
                    v.parse()
                        .map_err(|_| config_err(format!("cannot parse {key} = `{v}`")))
                })
                .transpose()
        };
        match head {
            "rademacher" => Ok(IncrementSpec::Rademacher),
            "two_point_indicator" => Ok(IncrementSpec::TwoPointIndicator {
                p: num("p")?.ok_or_else(|| config_err("two_point_indicator needs p".into()))?,
            }),
            "centered_pareto_lattice" | "pareto" => Ok(IncrementSpec::CenteredParetoLattice {
                theta: num("theta")?
                    .ok_or_else(|| config_err("centered_pareto_lattice needs theta".into()))?,
                scale: num("scale")?.unwrap_or(1.0),
                cutoff: num("cutoff")?.map(|c| c as u64),
            }),
            _ => Err(config_err(format!("unknown increment law `{s}`"))),
        }
    }
}

/// Regularly varying upper tail P(X >= x) ~ a x^{-θ}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub theta: f64,
    /// Least-squares intercept over the calibration window.
    pub a: f64,
    /// Normalisation implied by the family, when known.
    pub a_analytic: Option<f64>,
    pub window: (f64, f64),
    /// max over the window of |P(X >= x) x^θ / a - 1|.
    pub max_rel_dev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Pareto {
    theta: f64,
    scale: f64,
}

impl Pareto {
    /// P(Y >= y) for integer y.
    fn sf(&self, y: f64) -> f64 {
        if y <= 1.0 {
            1.0
        } else {
            (1.0 + (y - 1.0) / self.scale).powf(-self.theta)
        }
    }

    /// P(Y = y) without cancellation.
    fn pmf(&self, y: u64) -> f64 {
        let base = self.scale + (y - 1) as f64;
        let head = (base / self.scale).powf(-self.theta);
        -head * (-self.theta * (1.0 / base).ln_1p()).exp_m1()
    }

    /// Σ_{j>=0} g(j) with g(j) = (1 + j/s)^{-θ}·(c1·j + c0), summed directly
    /// below `terms` and by Euler-Maclaurin above.
    fn series(&self, terms: u64, c1: f64, c0: f64) -> f64 {
        let (s, th) = (self.scale, self.theta);
        let g = |j: f64| (1.0 + j / s).powf(-th) * (c1 * j + c0);
        let dg = |j: f64| {
            let v = 1.0 + j / s;
            v.powf(-th) * c1 - th / s * v.powf(-th - 1.0) * (c1 * j + c0)
        };
        let mut acc = 0.0;
        for j in (0..terms).rev() {
            acc += g(j as f64);
        }
        let big_j = terms as f64;
        let v = 1.0 + big_j / s;
        // ∫_J^∞ (c1 s (v - 1) + c0) v^{-θ} s dv.
        let integral = s * (c1 * s * v.powf(2.0 - th) / (th - 2.0)
            + (c0 - c1 * s) * v.powf(1.0 - th) / (th - 1.0));
        acc + integral + 0.5 * g(big_j) - dg(big_j) / 12.0
    }
}

/// Validated increment law. X = raw - shift, with `raw` an integer lattice
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementLaw {
    spec: IncrementSpec,
    raw: ProbVector,
    shift: f64,
    sigma: f64,
    pareto: Option<Pareto>,
    tail: Option<TailFit>,
    exp_moment: bool,
}

/// Tail probability of S_k with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailValue {
    pub value: f64,
    /// Natural log of `value`, kept separately because `value` may underflow.
    pub ln_value: f64,
    pub error_bar: f64,
    pub tier: Tier,
}

impl TailValue {
    fn exact(ln_value: f64, tier: Tier) -> Self {
        Self {
            value: ln_value.exp(),
            ln_value,
            error_bar: 0.0,
            tier,
        }
    }

    fn from_value(value: f64, error_bar: f64, tier: Tier) -> Self {
        Self {
            value,
            ln_value: value.ln(),
            error_bar,
            tier,
        }
    }
}

/// How a tail value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    /// Closed-form binomial tail.
    Binomial,
    /// Iterated self-convolution of the pmf.
    Lattice,
    /// Windowed Fourier inversion with explicit big-jump and aliasing bounds.
    Fourier,
    /// Normal approximation Φ̄(x/(σ√k)); not exact.
    Gaussian,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tier::Binomial => "binomial",
            Tier::Lattice => "lattice",
            Tier::Fourier => "fourier",
            Tier::Gaussian => "gaussian",
        };
        f.write_str(s)
    }
}

/// Budgets for tail computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailOptions {
    /// Permit the labelled Gaussian tier when exact tiers are over budget.
    pub allow_gaussian: bool,
    /// Longest vector the lattice tier may hold.
    pub max_lattice_len: usize,
    /// Largest transform the Fourier tier may use.
    pub max_fft_len: usize,
    /// Consecutive k sharing one transform size in sweeps.
    pub chunk: usize,
}

impl Default for TailOptions {
    fn default() -> Self {
        Self {
            allow_gaussian: false,
            max_lattice_len: 1 << 22,
            max_fft_len: 1 << 22,
            chunk: 256,
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl IncrementLaw {
    pub fn rademacher() -> Self {
        Self::new(IncrementSpec::Rademacher).expect("valid law")
    }

    pub fn two_point_indicator(p: f64) -> Result<Self> {
        Self::new(IncrementSpec::TwoPointIndicator { p })
    }

    pub fn lattice_pmf(atoms: &[(i64, f64)]) -> Result<Self> {
        Self::new(IncrementSpec::LatticePmf {
            atoms: atoms.to_vec(),
        })
    }

    pub fn centered_pareto_lattice(theta: f64, scale: f64, cutoff: Option<u64>) -> Result<Self> {
        Self::new(IncrementSpec::CenteredParetoLattice {
            theta,
            scale,
            cutoff,
        })
    }

    pub fn new(spec: IncrementSpec) -> Result<Self> {
        match &spec {
            IncrementSpec::Rademacher => {
                let raw = ProbVector::new(-1, 2, vec![0.5, 0.5])?;
                Ok(Self {
                    spec,
                    raw,
                    shift: 0.0,
                    sigma: 1.0,
                    pareto: None,
                    tail: None,
                    exp_moment: true,
                })
            }
            IncrementSpec::TwoPointIndicator { p } => {
                let p = *p;
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::InvalidProbability {
                        at: "two_point_indicator p".into(),
                        value: p,
                    });
                }
                let raw = ProbVector::new(0, 1, vec![1.0 - p, p])?;
                Ok(Self {
                    spec,
                    raw,
                    shift: p,
                    sigma: (p * (1.0 - p)).sqrt(),
                    pareto: None,
                    tail: None,
                    exp_moment: true,
                })
            }
            IncrementSpec::LatticePmf { atoms } => {
                let mut atoms: Vec<(i64, f64)> = atoms.iter().filter(|a| a.1 != 0.0).cloned().collect();
                for &(k, p) in &atoms {
                    if !(p.is_finite() && p > 0.0) {
                        return Err(Error::InvalidProbability {
                            at: format!("increment atom {k}"),
                            value: p,
                        });
                    }
                }
                atoms.sort_by_key(|a| a.0);
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::MassDeficit {
                        sum: total,
                        truncated: 0.0,
                    });
                }
                let lo = atoms.first().map(|a| a.0).unwrap_or(0);
                let span = atoms
                    .iter()
                    .fold(0, |g, a| gcd(g, (a.0 - lo) as u64))
                    .max(1);
                let raw = ProbVector::from_pairs(&atoms, span)?;
                let mean: f64 = atoms.iter().map(|(k, p)| *k as f64 * p).sum();
                let var: f64 = atoms
                    .iter()
                    .map(|(k, p)| (*k as f64 - mean).powi(2) * p)
                    .sum();
                if !(var > 0.0) {
                    return Err(Error::VarianceZero);
                }
                Ok(Self {
                    spec,
                    raw,
                    shift: mean,
                    sigma: var.sqrt(),
                    pareto: None,
                    tail: None,
                    exp_moment: true,
                })
            }
            IncrementSpec::CenteredParetoLattice {
                theta,
                scale,
                cutoff,
            } => {
                let (theta, scale) = (*theta, *scale);
                if !(theta > 2.0) {
                    return Err(Error::TailTooHeavy(theta));
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidArgument(format!("pareto scale = {scale}")));
                }
                let par = Pareto { theta, scale };
                let cutoff = cutoff.unwrap_or_else(|| {
                    (scale * (PARETO_TAIL.powf(-1.0 / theta) - 1.0)).ceil() as u64 + 1
                });
                if cutoff < 2 {
                    return Err(Error::InvalidArgument("pareto cutoff must be >= 2".into()));
                }
                let masses: Vec<f64> = (1..=cutoff).map(|y| par.pmf(y)).collect();
                let mut raw = ProbVector::new(1, 1, masses)?;
                raw.truncated_mass = par.sf(cutoff as f64 + 1.0);
                // Moments of the untruncated family.
                let mean = par.series(cutoff, 0.0, 1.0);
                let second = par.series(cutoff, 2.0, 1.0);
                let var = second - mean * mean;
                let mut law = Self {
                    spec,
                    raw,
                    shift: mean,
                    sigma: var.sqrt(),
                    pareto: Some(par),
                    tail: None,
                    exp_moment: false,
                };
                law.tail = Some(law.fit_tail(theta, (1e2, 1e4), Some(scale.powf(theta))));
                Ok(law)
            }
        }
    }

    /// Least-squares fit of ln a = ln P(X >= x) + θ ln x over a log grid.
    fn fit_tail(&self, theta: f64, window: (f64, f64), a_analytic: Option<f64>) -> TailFit {
        let pts = 41;
        let xs: Vec<f64> = (0..pts)
            .map(|i| window.0 * (window.1 / window.0).powf(i as f64 / (pts - 1) as f64))
            .collect();
        let logs: Vec<f64> = xs
            .iter()
            .map(|&x| self.single_tail(x).ln() + theta * x.ln())
            .collect();
        let a = (logs.iter().sum::<f64>() / pts as f64).exp();
        let max_rel_dev = logs
            .iter()
            .map(|l| (l.exp() / a - 1.0).abs())
            .fold(0.0, f64::max);
        TailFit {
            theta,
            a,
            a_analytic,
            window,
            max_rel_dev,
        }
    }

    pub fn spec(&self) -> &IncrementSpec {
        &self.spec
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// Subtracted from the raw lattice variable to center it.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Law of the raw integer variable X + shift.
    pub fn raw_pmf(&self) -> &ProbVector {
        &self.raw
    }

    pub fn tail_index(&self) -> Option<f64> {
        self.tail.map(|t| t.theta)
    }

    pub fn tail_fit(&self) -> Option<&TailFit> {
        self.tail.as_ref()
    }

    pub fn exp_moment(&self) -> bool {
        self.exp_moment
    }

    /// Mean of the represented law, zero up to rounding and the stored
    /// truncation.
    pub fn mean(&self) -> f64 {
        let stored: f64 = self.raw.iter().map(|(y, p)| y as f64 * p).sum();
        stored / self.raw.total_mass() - self.shift
    }

    /// Largest value of X, infinite for unbounded families.
    pub fn max_value(&self) -> f64 {
        if self.pareto.is_some() {
            f64::INFINITY
        } else {
            self.raw.max_value() as f64 - self.shift
        }
    }

    /// P(X >= x).
    pub fn single_tail(&self, x: f64) -> f64 {
        let y = (x + self.shift - 1e-9 * (x + self.shift).abs().max(1.0)).ceil();
        if let Some(par) = self.pareto {
            return par.sf(y);
        }
        self.raw
            .iter()
            .filter(|&(v, _)| v as f64 >= y)
            .map(|(_, p)| p)
            .sum()
    }

    /// E{X^t; 0 <= X <= x}; for unbounded families the mass beyond the
    /// stored cutoff enters as x^t times its probability.
    pub fn truncated_moment(&self, t: f64, x: f64) -> f64 {
        let mut acc = 0.0;
        for (y, p) in self.raw.iter() {
            let v = y as f64 - self.shift;
            if v > x {
                break;
            }
            if v >= 0.0 {
                acc += v.powf(t) * p;
            }
        }
        if self.pareto.is_some() && (self.raw.max_value() as f64 - self.shift) < x {
            acc += x.powf(t) * self.raw.truncated_mass;
        }
        acc
    }

    /// sup_h (hε - ln E e^{hX}); zero without exponential moments and
    /// infinite above the support.
    pub fn chernoff_rate(&self, eps: f64) -> f64 {
        if !self.exp_moment || eps <= 0.0 {
            return 0.0;
        }
        if let IncrementSpec::Rademacher = self.spec {
            if eps > 1.0 {
                return f64::INFINITY;
            }
            if eps == 1.0 {
                return std::f64::consts::LN_2;
            }
            return 0.5 * ((1.0 + eps) * eps.ln_1p() + (1.0 - eps) * (-eps).ln_1p());
        }
        let top = self.max_value();
        if eps > top {
            return f64::INFINITY;
        }
        let xs: Vec<(f64, f64)> = self
            .raw
            .iter()
            .filter(|a| a.1 > 0.0)
            .map(|(y, p)| (y as f64 - self.shift, p))
            .collect();
        if eps == top {
            return -xs.last().map(|a| a.1).unwrap_or(1.0).ln();
        }
        // Tilted mean is increasing in h; bisect for E_h X = ε.
        let tilted_mean = |h: f64| {
            let mx = xs.iter().map(|a| h * a.0).fold(f64::NEG_INFINITY, f64::max);
            let (mut num, mut den) = (0.0, 0.0);
            for &(x, p) in &xs {
                let w = p * (h * x - mx).exp();
                num += w * x;
                den += w;
            }
            num / den
        };
        let ln_mgf = |h: f64| {
            let mx = xs.iter().map(|a| h * a.0).fold(f64::NEG_INFINITY, f64::max);
            mx + xs.iter().map(|&(x, p)| p * (h * x - mx).exp()).sum::<f64>().ln()
        };
        let mut hi = 1.0;
        while tilted_mean(hi) < eps && hi < 1e6 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tilted_mean(mid) < eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let h = 0.5 * (lo + hi);
        (h * eps - ln_mgf(h)).max(0.0)
    }

    /// Index (in raw lattice steps above k·raw_min) of the first point of
    /// R_k = Σ raw_i with S_k >= x.
    fn threshold_index(&self, k: u64, x: f64) -> i64 {
        let target = x + k as f64 * self.shift;
        let base = k as f64 * self.raw.offset as f64;
        let steps = (target - base) / self.raw.span as f64;
        (steps - 1e-9 * steps.abs().max(1.0)).ceil() as i64
    }

    fn is_two_point(&self) -> bool {
        self.pareto.is_none() && self.raw.len() == 2
    }

    fn lattice_width(&self) -> usize {
        self.raw.len()
    }

    /// P(S_k >= x).
    pub fn sum_tail(&self, k: u64, x: f64, opts: &TailOptions) -> Result<TailValue> {
        Ok(self.sum_tail_sweep(&[(k, x)], opts)?.remove(0))
    }

    /// P(S_k >= x) for many (k, x) pairs, reusing work across k.
    pub fn sum_tail_sweep(&self, points: &[(u64, f64)], opts: &TailOptions) -> Result<Vec<TailValue>> {
        let mut out = vec![None; points.len()];
        let mut pending = Vec::new();
        for (i, &(k, x)) in points.iter().enumerate() {
            let j = self.threshold_index(k, x);
            if k == 0 {
                out[i] = Some(TailValue::exact(if x <= 0.0 { 0.0 } else { f64::NEG_INFINITY }, Tier::Lattice));
            } else if j <= 0 {
                out[i] = Some(TailValue::exact(0.0, Tier::Lattice));
            } else if self.pareto.is_none() && j > (k as i64) * (self.raw.len() as i64 - 1) {
                out[i] = Some(TailValue::exact(f64::NEG_INFINITY, Tier::Lattice));
            } else if self.is_two_point() {
                let p = self.raw.masses[1];
                out[i] = Some(TailValue::exact(ln_binomial_upper_tail(j, k, p), Tier::Binomial));
            } else {
                pending.push(i);
            }
        }
        if !pending.is_empty() {
            let k_max = pending.iter().map(|&i| points[i].0).max().unwrap_or(0);
            let lattice_len = k_max as usize * (self.lattice_width() - 1) + 1;
            let use_lattice = self.pareto.is_none()
                && self.lattice_width() <= LATTICE_WIDTH_LIMIT
                && lattice_len <= opts.max_lattice_len;
            let sub: Vec<(u64, f64)> = pending.iter().map(|&i| points[i]).collect();
            let values = if use_lattice {
                Ok(self.lattice_sweep(&sub))
            } else {
                self.fourier_sweep(&sub, opts)
            };
            match values {
                Ok(v) => {
                    for (slot, val) in pending.iter().zip(v) {
                        out[*slot] = Some(val);
                    }
                }
                Err(Error::BudgetExceeded(_)) if opts.allow_gaussian => {
                    for &i in &pending {
                        out[i] = Some(self.gaussian_tail(points[i].0, points[i].1));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every point answered")).collect())
    }

    /// Labelled normal approximation Φ̄(x/(σ√k)).
    pub fn gaussian_tail(&self, k: u64, x: f64) -> TailValue {
        let v = normal_sf(x / (self.sigma * (k as f64).sqrt()));
        TailValue {
            value: v,
            ln_value: v.ln(),
            error_bar: f64::NAN,
            tier: Tier::Gaussian,
        }
    }

    /// Law of R_k = Σ raw_i by repeated convolution.
    pub fn raw_sum_pmf(&self, k: u64) -> ProbVector {
        let mut acc = ProbVector::delta(0);
        acc.span = self.raw.span;
        for _ in 0..k {
            acc.masses = convolve_direct(&acc.masses, &self.raw.masses);
            acc.offset += self.raw.offset;
        }
        acc
    }

    fn lattice_sweep(&self, points: &[(u64, f64)]) -> Vec<TailValue> {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by_key(|&i| points[i].0);
        let mut out = vec![TailValue::exact(0.0, Tier::Lattice); points.len()];
        let mut cur = vec![1.0];
        let mut k = 0u64;
        for i in order {
            let (kq, x) = points[i];
            while k < kq {
                cur = convolve_direct(&cur, &self.raw.masses);
                k += 1;
            }
            let j = self.threshold_index(kq, x).max(0) as usize;
            let v: f64 = cur.iter().skip(j).rev().sum();
            out[i] = TailValue::from_value(v, 0.0, Tier::Lattice);
        }
        out
    }

    fn fourier_sweep(&self, points: &[(u64, f64)], opts: &TailOptions) -> Result<Vec<TailValue>> {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by_key(|&i| points[i].0);
        let chunk = opts.chunk.max(1);
        let groups: Vec<Vec<usize>> = order.chunks(chunk).map(|c| c.to_vec()).collect();
        let results: Vec<Result<Vec<(usize, TailValue)>>> = groups
            .par_iter()
            .map(|g| {
                let pts: Vec<(u64, f64)> = g.iter().map(|&i| points[i]).collect();
                let vals = self.fourier_chunk(&pts, opts)?;
                Ok(g.iter().cloned().zip(vals).collect())
            })
            .collect();
        let mut out = vec![None; points.len()];
        for r in results {
            for (i, v) in r? {
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("answered")).collect())
    }

    /// P(Y > y) for the raw variable, analytic where available.
    fn raw_sf_above(&self, y: i64) -> f64 {
        if let Some(par) = self.pareto {
            return par.sf(y as f64 + 1.0);
        }
        self.raw
            .iter()
            .filter(|&(v, _)| v > y)
            .map(|(_, p)| p)
            .sum::<f64>()
            + self.raw.truncated_mass
    }

    /// Tails for sorted k sharing one transform. The raw law is split at a
    /// cap into a small-jump part, inverted on a window by DFT, and the rest,
    /// which enters through single-big-jump bounds.
    fn fourier_chunk(&self, pts: &[(u64, f64)], opts: &TailOptions) -> Result<Vec<TailValue>> {
        let sigma = self.sigma;
        let span = self.raw.span as i64;
        let lo_raw = self.raw.offset;
        let k_hi = pts.iter().map(|p| p.0).max().unwrap_or(1);
        let x_hi = pts.iter().map(|p| p.1).fold(0.0, f64::max);
        let spread = 12.0 * sigma * (k_hi as f64).sqrt();
        let d = x_hi + spread;
        let c = 2.0 * d;
        let top_stored = self.raw.max_value();
        let y_cap = ((self.shift + c).ceil() as i64).min(top_stored).max(lo_raw);
        let cap_len = ((y_cap - lo_raw) / span) as usize + 1;
        let w_low = (spread / span as f64).ceil() as i64 + 1;
        let need = (3.0 * c + 2.0 * spread) / span as f64 + w_low as f64;
        let n = (need.ceil() as usize).max(cap_len * 2).next_power_of_two();
        if n > opts.max_fft_len {
            return Err(Error::BudgetExceeded(format!(
                "Fourier tier needs a transform of length {n} (budget {})",
                opts.max_fft_len
            )));
        }
        let pi_big = self.raw_sf_above(y_cap);
        let q = &self.raw.masses[..cap_len];
        let q_mass: f64 = q.iter().sum();
        let mu = self.shift;
        let mu_c = q
            .iter()
            .enumerate()
            .map(|(i, p)| (lo_raw + span * i as i64) as f64 * p)
            .sum::<f64>()
            / q_mass;
        let var_c = sigma * sigma / q_mass;
        let b_low = mu_c - lo_raw as f64;

        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let mut qhat: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(q.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        fwd.process(&mut qhat);
        let roots: Vec<Complex64> = (0..n)
            .map(|i| Complex64::from_polar(1.0, 2.0 * PI * i as f64 / n as f64))
            .collect();
        let inv_one_minus: Vec<Complex64> = (0..n)
            .map(|f| {
                if f == 0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    (Complex64::new(1.0, 0.0) - roots[f]).inv()
                }
            })
            .collect();
        let half = n / 2;
        let mut power: Vec<Complex64> = Vec::new();
        let mut k_cur = 0u64;
        let mut since_anchor = 0usize;
        let mut out = Vec::with_capacity(pts.len());
        for &(k, x) in pts {
            if power.is_empty() || k - k_cur >= ANCHOR_EVERY as u64 || since_anchor >= ANCHOR_EVERY {
                power = qhat[..=half].iter().map(|v| v.powu(k as u32)).collect();
                since_anchor = 0;
            } else {
                for _ in k_cur..k {
                    for (p, qv) in power.iter_mut().zip(&qhat[..=half]) {
                        *p *= qv;
                    }
                    since_anchor += 1;
                }
            }
            k_cur = k;
            let kf = k as f64;
            // Window [l, l + n) in lattice units above k·lo_raw.
            let center = (kf * (mu - lo_raw as f64)) / span as f64;
            let l = (center.floor() as i64 - w_low).max(0);
            let t = self.threshold_index(k, x).max(l);
            let nn = n as i64;
            let t_mod = t.rem_euclid(nn) as u64;
            let l_mod = l.rem_euclid(nn) as u64;
            let mut acc = power[0].re * (l + nn - t) as f64;
            let mut abs_acc = acc.abs();
            for f in 1..=half {
                let zt = roots[((f as u64 * t_mod) % n as u64) as usize];
                let zl = roots[((f as u64 * l_mod) % n as u64) as usize];
                let h = (zt - zl) * inv_one_minus[f];
                let term = power[f] * h;
                let w = if f == half { 1.0 } else { 2.0 };
                acc += w * term.re;
                abs_acc += w * term.norm();
            }
            let small = acc / n as f64;
            let numeric = f64::EPSILON * (since_anchor as f64 + 2.0 * (n as f64).log2() + 4.0) * abs_acc
                / n as f64;

            // Mass outside the window in centered units of the capped law.
            let z_up = ((l + nn) * span) as f64 - kf * (mu - lo_raw as f64);
            let z_lo = kf * (mu - lo_raw as f64) - (l * span) as f64 - kf * (mu - mu_c);
            let alias_up = fuk_nagaev_capped(k, z_up, var_c, (y_cap as f64) - mu_c);
            let alias_lo = if l == 0 {
                0.0
            } else {
                bernstein_lower(z_lo, kf, var_c, b_low)
            };
            // One jump above the cap suffices unless the rest falls short.
            let z_b = (y_cap + 1) as f64 - (x + kf * mu) + (kf - 1.0) * mu_c;
            let beta = if z_b > 0.0 && k > 1 {
                bernstein_lower(z_b, kf - 1.0, var_c, b_low)
            } else if k == 1 {
                if z_b >= 0.0 { 0.0 } else { 1.0 }
            } else {
                1.0
            };
            let no_big = (1.0 - pi_big).powf(kf);
            let one_big = kf * pi_big * (1.0 - pi_big).powf(kf - 1.0);
            let lower = (small - numeric - alias_lo).max(0.0) + one_big * (1.0 - beta);
            let upper = (small + numeric + alias_up + (1.0 - no_big)).min(1.0);
            let lower = lower.min(upper);
            out.push(TailValue::from_value(
                0.5 * (lower + upper),
                0.5 * (upper - lower),
                Tier::Fourier,
            ));
        }
        Ok(out)
    }

    /// All bounds of the suite that apply to this law.
    pub fn bound_suite(&self, k: u64, eps: f64, params: &BoundParams) -> BoundSuite {
        let record = |r: Result<f64>| match r {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let mut notes = Vec::new();
        let mut take = |name: &str, r: Result<f64>| {
            let (v, n) = record(r);
            if let Some(n) = n {
                notes.push(format!("{name}: {n}"));
            }
            v
        };
        BoundSuite {
            k,
            eps,
            r: params.r,
            t: params.t,
            fuk_nagaev_1: take("fuk_nagaev_1", self.fuk_nagaev_1(k, eps, params.r)),
            fuk_nagaev_2: take("fuk_nagaev_2", self.fuk_nagaev_2(k, eps, params.r, params.t)),
            bernstein_upper: take("bernstein_upper", self.bernstein_upper(k, eps, params.delta)),
            kolmogorov_lower: take("kolmogorov_lower", self.kolmogorov_lower(k, eps, params.delta)),
            big_jump_ratio: take(
                "big_jump_ratio",
                self.big_jump_ratio(k, eps, &params.tail_options).map(|v| v.value),
            ),
            notes,
        }
    }

    /// k P(X >= εk/r) + (e r σ²)^r ε^{-2r} k^{-r}.
    pub fn fuk_nagaev_1(&self, k: u64, eps: f64, r: f64) -> Result<f64> {
        check_fn_args(eps, r)?;
        let kf = k as f64;
        let big = kf * self.single_tail(eps * kf / r);
        let gauss = (E * r * self.variance()).powf(r) * eps.powf(-2.0 * r) * kf.powf(-r);
        Ok(big + gauss)
    }

    /// k P(X >= εk/r) + exp(-2ε²k / ((t+2)² e^t σ²))
    /// + ((t+2) r^{t-1} E{X^t; 0 <= X <= εk} / (t ε^t k^{t-1}))^{tr/(t+2)}.
    pub fn fuk_nagaev_2(&self, k: u64, eps: f64, r: f64, t: f64) -> Result<f64> {
        check_fn_args(eps, r)?;
        if !(t >= 2.0) {
            return Err(Error::InvalidArgument(format!("t = {t} must be >= 2")));
        }
        let kf = k as f64;
        let big = kf * self.single_tail(eps * kf / r);
        let gauss = (-2.0 * eps * eps * kf / ((t + 2.0).powi(2) * t.exp() * self.variance())).exp();
        let moment = self.truncated_moment(t, eps * kf);
        let base = (t + 2.0) * r.powf(t - 1.0) * moment / (t * eps.powf(t) * kf.powf(t - 1.0));
        Ok(big + gauss + base.powf(t * r / (t + 2.0)))
    }

    /// exp[-(1-δ) ε² k / (2σ²)]; a diagnostic that needs exponential moments.
    pub fn bernstein_upper(&self, k: u64, eps: f64, delta: f64) -> Result<f64> {
        if !self.exp_moment {
            return Err(Error::MissingMomentFlag {
                bound: "bernstein_upper",
                requirement: "a finite exponential moment",
            });
        }
        Ok((-(1.0 - delta) * eps * eps * k as f64 / (2.0 * self.variance())).exp())
    }

    /// exp[-(1+δ) ε² k / (2σ²)]; meaningful only beyond an empirical k·ε².
    pub fn kolmogorov_lower(&self, k: u64, eps: f64, delta: f64) -> Result<f64> {
        if !self.exp_moment {
            return Err(Error::MissingMomentFlag {
                bound: "kolmogorov_lower",
                requirement: "a finite exponential moment",
            });
        }
        Ok((-(1.0 + delta) * eps * eps * k as f64 / (2.0 * self.variance())).exp())
    }

    /// P(S_k >= εk) / (k P(X >= εk)).
    pub fn big_jump_ratio(&self, k: u64, eps: f64, opts: &TailOptions) -> Result<TailValue> {
        if self.tail_index().is_none() {
            return Err(Error::MissingMomentFlag {
                bound: "big_jump_ratio",
                requirement: "a regularly varying tail (tail index)",
            });
        }
        let x = eps * k as f64;
        let tail = self.sum_tail(k, x, opts)?;
        let single = k as f64 * self.single_tail(x);
        Ok(TailValue {
            value: tail.value / single,
            ln_value: tail.ln_value - single.ln(),
            error_bar: tail.error_bar / single,
            tier: tail.tier,
        })
    }

    /// Smallest tested k after which P(S_k >= εk) stays above the
    /// Kolmogorov-type lower bound; `None` if it never does.
    pub fn kolmogorov_crossover(&self, eps: f64, ks: &[u64], delta: f64, opts: &TailOptions) -> Result<Option<u64>> {
        let pts: Vec<(u64, f64)> = ks.iter().map(|&k| (k, eps * k as f64)).collect();
        let tails = self.sum_tail_sweep(&pts, opts)?;
        let mut crossover = None;
        for (&k, tail) in ks.iter().zip(&tails).rev() {
            let lower = self.kolmogorov_lower(k, eps, delta)?;
            if tail.value + tail.error_bar >= lower {
                crossover = Some(k);
            } else {
                break;
            }
        }
        Ok(crossover)
    }
}

fn check_fn_args(eps: f64, r: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("ε = {eps} must be positive")));
    }
    if !(r > 1.0) {
        return Err(Error::InvalidArgument(format!("r = {r} must exceed 1")));
    }
    Ok(())
}

/// P(S <= -z) for k i.i.d. centered variables with variance `var` and
/// X >= -b: Bernstein's inequality applied to -X.
fn bernstein_lower(z: f64, k: f64, var: f64, b: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    (-(z * z) / (2.0 * (k * var + b.max(0.0) * z / 3.0))).exp().min(1.0)
}

/// Upper tail of a sum of k centered variables bounded above by `top`,
/// from the first Fuk-Nagaev form with r = 3.
fn fuk_nagaev_capped(k: u64, z: f64, var: f64, top: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    let r = 3.0;
    if z / r <= top {
        // The single-jump term is not zero; fall back to Chebyshev.
        return (k as f64 * var / (z * z)).min(1.0);
    }
    ((E * r * var * k as f64) / (z * z)).powf(r).min(1.0)
}

/// Parameters of [`IncrementLaw::bound_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub r: f64,
    pub t: f64,
    pub delta: f64,
    pub tail_options: TailOptions,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            r: 2.0,
            t: 2.0,
            delta: 0.1,
            tail_options: TailOptions::default(),
        }
    }
}

/// Values of every applicable bound; inapplicable ones are `None` with the
/// reason in `notes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSuite {
    pub k: u64,
    pub eps: f64,
    pub r: f64,
    pub t: f64,
    pub fuk_nagaev_1: Option<f64>,
    pub fuk_nagaev_2: Option<f64>,
    pub bernstein_upper: Option<f64>,
    pub kolmogorov_lower: Option<f64>,
    pub big_jump_ratio: Option<f64>,
    pub notes: Vec<String>,
}

/// Writes `k,x,P,tier,error_bar` rows.
pub fn write_tail_csv<W: std::io::Write>(mut w: W, rows: &[(u64, f64, TailValue)]) -> Result<()> {
    writeln!(w, "k,x,P,tier,error_bar")?;
    for (k, x, t) in rows {
        writeln!(w, "{k},{x:.14e},{:.14e},{},{:.14e}", t.value, t.tier, t.error_bar)?;
    }
    Ok(())
}
