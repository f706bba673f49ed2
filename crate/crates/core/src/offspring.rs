//! Offspring laws of a supercritical Galton-Watson process and the constants
//! derived from them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-12;
const FAMILY_TAIL: f64 = 1e-15;
const Q_TOL: f64 = 1e-14;
const Q_MAX_ITER: usize = 1_000_000;

/// How a law was declared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LawSpec {
    /// Explicit `(k, p_k)` pairs.
    Explicit { atoms: Vec<(u64, f64)> },
    /// p_k = (1/m)(1 - 1/m)^(k-1) on k >= 1, generating function s / (m - (m - 1)s).
    LinearFractional { m: f64 },
    /// p_k = p(1 - p)^k on k >= 0.
    Geometric { p: f64 },
    /// Two atoms `a`, `b` with masses `pa`, `pb`.
    TwoPoint { a: u64, b: u64, pa: f64, pb: f64 },
}

impl LawSpec {
    pub fn build(&self) -> Result<OffspringLaw> {
        OffspringLaw::from_spec(self.clone())
    }
}

impl fmt::Display for LawSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LawSpec::Explicit { atoms } => {
                let parts: Vec<String> = atoms.iter().map(|(k, p)| format!("{k}: {p}")).collect();
                write!(f, "{{{}}}", parts.join(", "))
            }
            LawSpec::LinearFractional { m } => write!(f, "linear_fractional m={m}"),
            LawSpec::Geometric { p } => write!(f, "geometric p={p}"),
            LawSpec::TwoPoint { a, b, pa, pb } => write!(f, "two_point {a} {b} {pa} {pb}"),
        }
    }
}

fn parse_number<T: FromStr>(token: &str, name: &str) -> Result<T> {
    let raw = token.split_once('=').map_or(token, |(_, v)| v);
    raw.trim().parse().map_err(|_| Error::ConfigInvalid {
        field: name.to_string(),
        message: format!("cannot parse `{token}`"),
    })
}

/// Parses `"linear_fractional m=2"`, `"geometric p=0.3"`, `"two_point 2 3 0.5 0.5"`
/// or an explicit list `"1: 0.2, 2: 0.8"` (braces optional).
impl FromStr for LawSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut words = s.split_whitespace();
        let head = words.next().unwrap_or("");
        let rest: Vec<&str> = words.collect();
        let bad = |message: &str| Error::ConfigInvalid {
            field: "law".into(),
            message: message.into(),
        };
        match head {
            "linear_fractional" => {
                let m = rest.first().ok_or_else(|| bad("linear_fractional needs m"))?;
                Ok(LawSpec::LinearFractional {
                    m: parse_number(m, "law.m")?,
                })
            }
            "geometric" => {
                let p = rest.first().ok_or_else(|| bad("geometric needs p"))?;
                Ok(LawSpec::Geometric {
                    p: parse_number(p, "law.p")?,
                })
            }
            "two_point" => {
                if rest.len() != 4 {
                    return Err(bad("two_point needs `a b pa pb`"));
                }
                Ok(LawSpec::TwoPoint {
                    a: parse_number(rest[0], "law.a")?,
                    b: parse_number(rest[1], "law.b")?,
                    pa: parse_number(rest[2], "law.pa")?,
                    pb: parse_number(rest[3], "law.pb")?,
                })
            }
            _ => {
                let body = s.trim_start_matches('{').trim_end_matches('}');
                let mut atoms = Vec::new();
                for pair in body.split(',').filter(|p| !p.trim().is_empty()) {
                    let (k, p) = pair
                        .split_once(':')
                        .ok_or_else(|| bad(&format!("expected `k: p`, got `{}`", pair.trim())))?;
                    atoms.push((
                        parse_number(k.trim().trim_matches('"'), "law.k")?,
                        parse_number(p, "law.p")?,
                    ));
                }
                if atoms.is_empty() {
                    return Err(bad("empty law"));
                }
                Ok(LawSpec::Explicit { atoms })
            }
        }
    }
}

/// Schröder or Böttcher case of a supercritical law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum LawCase {
    Schroder { gamma: f64, alpha: f64 },
    Bottcher { mu: u64, beta: f64 },
}

/// Case descriptor together with the lattice type (d, μ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub case: LawCase,
    pub span: u64,
    pub min_offspring: u64,
}

/// A validated supercritical offspring law.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    spec: LawSpec,
    masses: Vec<f64>,
    truncated_mass: f64,
    mean: f64,
    stddev: f64,
    q: f64,
    gamma: f64,
    alpha: f64,
    span: u64,
    mu: u64,
    beta: Option<f64>,
}

/// Plain-data view of a law, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawSummary {
    pub spec: String,
    pub mean: f64,
    pub stddev: f64,
    pub extinction_prob: f64,
    pub gamma: f64,
    /// `None` stands for α = ∞ (Böttcher case).
    pub schroder_alpha: Option<f64>,
    pub lattice_span: u64,
    pub min_offspring: u64,
    pub bottcher_beta: Option<f64>,
    pub zlogz_finite: bool,
    pub truncated_mass: f64,
    pub support_max: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl OffspringLaw {
    /// Validates explicit `(k, p_k)` pairs. Repeated `k` are summed.
    pub fn from_pairs(atoms: &[(u64, f64)]) -> Result<Self> {
        Self::from_spec(LawSpec::Explicit {
            atoms: atoms.to_vec(),
        })
    }

    pub fn linear_fractional(m: f64) -> Result<Self> {
        Self::from_spec(LawSpec::LinearFractional { m })
    }

    pub fn geometric(p: f64) -> Result<Self> {
        Self::from_spec(LawSpec::Geometric { p })
    }

    pub fn two_point(a: u64, b: u64, pa: f64, pb: f64) -> Result<Self> {
        Self::from_spec(LawSpec::TwoPoint { a, b, pa, pb })
    }

    pub fn from_spec(spec: LawSpec) -> Result<Self> {
        let (masses, truncated) = match &spec {
            LawSpec::Explicit { atoms } => {
                let mut masses = Vec::new();
                for &(k, p) in atoms {
                    check_prob(&format!("p[{k}]"), p)?;
                    let k = k as usize;
                    if masses.len() <= k {
                        masses.resize(k + 1, 0.0);
                    }
                    masses[k] += p;
                }
                (masses, 0.0)
            }
            LawSpec::TwoPoint { a, b, pa, pb } => {
                check_prob("pa", *pa)?;
                check_prob("pb", *pb)?;
                let mut masses = vec![0.0; (*a.max(b) + 1) as usize];
                masses[*a as usize] += pa;
                masses[*b as usize] += pb;
                (masses, 0.0)
            }
            LawSpec::LinearFractional { m } => {
                if !(m.is_finite() && *m > 0.0) {
                    return Err(Error::InvalidArgument(format!("linear_fractional m = {m}")));
                }
                if *m <= 1.0 {
                    return Err(Error::Subcritical(*m));
                }
                let r = 1.0 - 1.0 / m;
                geometric_atoms(1, 1.0 / m, r)
            }
            LawSpec::Geometric { p } => {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(Error::InvalidProbability {
                        at: "geometric p".into(),
                        value: *p,
                    });
                }
                geometric_atoms(0, *p, 1.0 - p)
            }
        };
        Self::from_masses(spec, masses, truncated)
    }

    fn from_masses(spec: LawSpec, mut masses: Vec<f64>, truncated_mass: f64) -> Result<Self> {
        while masses.last() == Some(&0.0) {
            masses.pop();
        }
        let support: Vec<u64> = masses
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(k, _)| k as u64)
            .collect();
        if support.len() == 1 {
            return Err(Error::DegenerateLaw(support[0]));
        }
        let sum: f64 = masses.iter().sum();
        if support.is_empty() || (sum + truncated_mass - 1.0).abs() > MASS_TOL {
            return Err(Error::MassDeficit {
                sum,
                truncated: truncated_mass,
            });
        }
        let mean: f64 = masses.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        if mean <= 1.0 {
            return Err(Error::Subcritical(mean));
        }
        let second: f64 = masses
            .iter()
            .enumerate()
            .map(|(k, p)| (k * k) as f64 * p)
            .sum();
        let stddev = (second - mean * mean).max(0.0).sqrt();
        let mu = support[0];
        let span = support.iter().fold(0, |g, &k| gcd(g, k - mu));
        let mut law = OffspringLaw {
            spec,
            masses,
            truncated_mass,
            mean,
            stddev,
            q: 0.0,
            gamma: 0.0,
            alpha: f64::INFINITY,
            span,
            mu,
            beta: None,
        };
        law.q = law.extinction_probability()?;
        law.gamma = law.pgf_derivative(law.q);
        if law.p(0) + law.p(1) > 0.0 {
            law.alpha = -law.gamma.ln() / mean.ln();
        } else {
            law.gamma = 0.0;
            law.beta = Some((mu as f64).ln() / mean.ln());
        }
        Ok(law)
    }

    /// Smallest fixed point of f on [0, 1), by iterating s <- f(s) from 0.
    pub fn extinction_probability(&self) -> Result<f64> {
        if self.p(0) == 0.0 {
            return Ok(0.0);
        }
        let mut s = 0.0;
        for _ in 0..Q_MAX_ITER {
            let next = self.pgf(s);
            let gap = (next - s).abs();
            s = next;
            if gap < Q_TOL {
                return Ok(s);
            }
        }
        Err(Error::NoConvergence {
            what: "extinction probability",
            iterations: Q_MAX_ITER,
            gap: (self.pgf(s) - s).abs(),
        })
    }

    pub fn classify(&self) -> Classification {
        let case = match self.beta {
            Some(beta) => LawCase::Bottcher { mu: self.mu, beta },
            None => LawCase::Schroder {
                gamma: self.gamma,
                alpha: self.alpha,
            },
        };
        Classification {
            case,
            span: self.span,
            min_offspring: self.mu,
        }
    }

    pub fn spec(&self) -> &LawSpec {
        &self.spec
    }

    /// p_k, zero outside the stored support.
    pub fn p(&self, k: usize) -> f64 {
        self.masses.get(k).copied().unwrap_or(0.0)
    }

    /// Stored masses indexed by k = 0..=support_max.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn support_max(&self) -> u64 {
        self.masses.len() as u64 - 1
    }

    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn stddev(&self) -> f64 {
        self.stddev
    }

    pub fn variance(&self) -> f64 {
        self.stddev * self.stddev
    }

    pub fn extinction_prob(&self) -> f64 {
        self.q
    }

    /// γ = f′(q); zero in the Böttcher case.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Schröder constant α, infinite in the Böttcher case.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lattice_span(&self) -> u64 {
        self.span
    }

    pub fn min_offspring(&self) -> u64 {
        self.mu
    }

    pub fn bottcher_beta(&self) -> Option<f64> {
        self.beta
    }

    pub fn is_schroder(&self) -> bool {
        self.beta.is_none()
    }

    /// All supported families have finite E Z log Z.
    pub fn zlogz_finite(&self) -> bool {
        true
    }

    /// Generating function f(s).
    pub fn pgf(&self, s: f64) -> f64 {
        self.masses.iter().rev().fold(0.0, |acc, &p| acc * s + p)
    }

    pub fn pgf_derivative(&self, s: f64) -> f64 {
        self.masses
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &p)| acc * s + k as f64 * p)
    }

    /// n-fold iterate f_n(s).
    pub fn pgf_iterate(&self, s: f64, n: usize) -> f64 {
        (0..n).fold(s, |acc, _| self.pgf(acc))
    }

    /// ln f(e^l) for l <= 0, stable for very negative l.
    pub fn ln_pgf_exp(&self, l: f64) -> f64 {
        if l == f64::NEG_INFINITY {
            return if self.mu == 0 {
                self.p(0).ln()
            } else {
                f64::NEG_INFINITY
            };
        }
        let mu = self.mu as usize;
        let x = l.exp();
        let tail = self.masses[mu..]
            .iter()
            .rev()
            .fold(0.0, |acc, &p| acc * x + p);
        mu as f64 * l + tail.ln()
    }

    pub fn summary(&self) -> LawSummary {
        LawSummary {
            spec: self.spec.to_string(),
            mean: self.mean,
            stddev: self.stddev,
            extinction_prob: self.q,
            gamma: self.gamma,
            schroder_alpha: self.alpha.is_finite().then_some(self.alpha),
            lattice_span: self.span,
            min_offspring: self.mu,
            bottcher_beta: self.beta,
            zlogz_finite: self.zlogz_finite(),
            truncated_mass: self.truncated_mass,
            support_max: self.support_max(),
        }
    }
}

/// Validates a pmf map; alias of [`OffspringLaw::from_pairs`].
pub fn validate_offspring(atoms: &[(u64, f64)]) -> Result<OffspringLaw> {
    OffspringLaw::from_pairs(atoms)
}

fn check_prob(at: &str, p: f64) -> Result<()> {
    if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidProbability {
            at: at.to_string(),
            value: p,
        });
    }
    Ok(())
}

/// Atoms p0·r^j at k = start + j until the remaining tail p0·r^J/(1 - r)
/// drops below the family cutoff.
fn geometric_atoms(start: usize, p0: f64, r: f64) -> (Vec<f64>, f64) {
    let mut masses = vec![0.0; start];
    let mut term = p0;
    loop {
        masses.push(term);
        term *= r;
        let tail = term / (1.0 - r);
        if tail < FAMILY_TAIL {
            return (masses, tail);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn two_atoms_schroder() {
        let law = OffspringLaw::from_pairs(&[(1, 0.5), (2, 0.5)]).unwrap();
        assert_relative_eq!(law.mean(), 1.5);
        assert!(law.is_schroder());
        assert_eq!(law.lattice_span(), 1);
        assert_eq!(law.min_offspring(), 1);
    }

    #[test]
    fn single_atom_rejected() {
        assert_eq!(
            OffspringLaw::from_pairs(&[(2, 1.0)]),
            Err(Error::DegenerateLaw(2))
        );
    }

    #[test]
    fn subcritical_and_deficit_rejected() {
        assert!(matches!(
            OffspringLaw::from_pairs(&[(0, 0.5), (1, 0.5)]),
            Err(Error::Subcritical(_))
        ));
        assert!(matches!(
            OffspringLaw::from_pairs(&[(1, 0.5), (2, 0.4)]),
            Err(Error::MassDeficit { .. })
        ));
        assert!(matches!(
            OffspringLaw::from_pairs(&[(1, -0.5), (2, 1.5)]),
            Err(Error::InvalidProbability { .. })
        ));
    }

    #[test]
    fn bottcher_constants() {
        let law = OffspringLaw::from_pairs(&[(2, 0.5), (3, 0.5)]).unwrap();
        assert_relative_eq!(law.mean(), 2.5);
        let beta = law.bottcher_beta().unwrap();
        assert_relative_eq!(beta, 2f64.ln() / 2.5f64.ln(), max_relative = 1e-15);
        assert!((beta - 0.75647).abs() < 1e-5);
        assert!(matches!(law.classify().case, LawCase::Bottcher { mu: 2, .. }));
    }

    #[test]
    fn quadratic_extinction() {
        let law = OffspringLaw::from_pairs(&[(0, 0.25), (1, 0.25), (2, 0.5)]).unwrap();
        // 2s^2 - 3s + 1 = 0 has roots 1/2 and 1.
        assert!((law.extinction_prob() - 0.5).abs() < 1e-13);
        assert!((law.pgf(law.extinction_prob()) - law.extinction_prob()).abs() <= 1e-14);
    }

    #[test]
    fn linear_fractional_constants() {
        let law = OffspringLaw::linear_fractional(2.0).unwrap();
        assert_eq!(law.extinction_prob(), 0.0);
        assert_relative_eq!(law.mean(), 2.0, max_relative = 1e-13);
        assert_relative_eq!(law.gamma(), 0.5);
        assert_relative_eq!(law.alpha(), 1.0, max_relative = 1e-12);
        assert_eq!(law.masses().len() - 1, 50);
        assert!(law.truncated_mass() < 1e-15);
        // Closed-form iterate s / (2^n - (2^n - 1)s).
        let s: f64 = 0.3;
        let n = 6;
        let mn = 2f64.powi(n as i32);
        assert_relative_eq!(
            law.pgf_iterate(s, n),
            s / (mn - (mn - 1.0) * s),
            max_relative = 1e-13
        );
    }

    #[test]
    fn alpha_from_gamma() {
        let law = OffspringLaw::from_pairs(&[(1, 0.2), (2, 0.8)]).unwrap();
        assert_relative_eq!(law.gamma(), 0.2);
        assert_relative_eq!(law.alpha(), 5f64.ln() / 1.8f64.ln(), max_relative = 1e-14);
        assert!((law.alpha() - 2.7381).abs() < 1e-4);
        assert!((law.mean().powf(-law.alpha()) - law.gamma()).abs() < 1e-12);
    }

    #[test]
    fn span_of_shifted_support() {
        let law = OffspringLaw::from_pairs(&[(1, 0.5), (3, 0.25), (7, 0.25)]).unwrap();
        assert_eq!(law.lattice_span(), 2);
        assert_eq!(law.min_offspring(), 1);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "linear_fractional m=2".parse::<LawSpec>().unwrap(),
            LawSpec::LinearFractional { m: 2.0 }
        );
        assert_eq!(
            "two_point 2 3 0.5 0.5".parse::<LawSpec>().unwrap(),
            LawSpec::TwoPoint {
                a: 2,
                b: 3,
                pa: 0.5,
                pb: 0.5
            }
        );
        assert_eq!(
            "{1: 0.2, 2: 0.8}".parse::<LawSpec>().unwrap(),
            LawSpec::Explicit {
                atoms: vec![(1, 0.2), (2, 0.8)]
            }
        );
        let spec = LawSpec::Geometric { p: 0.25 };
        assert_eq!(spec.to_string().parse::<LawSpec>().unwrap(), spec);
        assert!("two_point 1 2".parse::<LawSpec>().is_err());
    }

    #[test]
    fn geometric_family() {
        let law = OffspringLaw::geometric(0.25).unwrap();
        assert_relative_eq!(law.mean(), 3.0, max_relative = 1e-12);
        assert!(law.extinction_prob() > 0.0);
        // f(s) = p / (1 - (1-p)s) has fixed point p/(1-p) = 1/3.
        assert!((law.extinction_prob() - 1.0 / 3.0).abs() < 1e-12);
    }

    fn brute_span(support: &[u64]) -> u64 {
        let mut g = 0;
        for &a in support {
            for &b in support {
                if a != b {
                    g = gcd(g, a.abs_diff(b));
                }
            }
        }
        g
    }

    proptest! {
        #[test]
        fn structural_invariants(
            weights in prop::collection::vec(0.0f64..1.0, 2..8),
            shift in 0u64..3,
            stride in 1u64..4,
        ) {
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 0.1);
            let atoms: Vec<(u64, f64)> = weights
                .iter()
                .enumerate()
                .map(|(i, w)| (shift + stride * i as u64, w / total))
                .collect();
            match OffspringLaw::from_pairs(&atoms) {
                Ok(law) => {
                    let g = law.gamma();
                    prop_assert!((0.0..1.0).contains(&g));
                    prop_assert_eq!(g > 0.0, law.p(0) + law.p(1) > 0.0);
                    prop_assert!((law.pgf(law.extinction_prob()) - law.extinction_prob()).abs() <= 1e-12);
                    prop_assert_eq!(law.extinction_prob() == 0.0, law.p(0) == 0.0);
                    if law.alpha().is_finite() {
                        prop_assert!((law.mean().powf(-law.alpha()) - g).abs() <= 1e-12);
                    }
                    if law.p(0) == 0.0 && law.p(1) > 0.0 {
                        prop_assert!((g - law.p(1)).abs() <= 1e-15);
                    }
                    let support: Vec<u64> = (0..law.masses().len() as u64)
                        .filter(|&k| law.p(k as usize) > 0.0)
                        .collect();
                    prop_assert_eq!(law.lattice_span(), brute_span(&support));
                }
                Err(Error::Subcritical(_)) | Err(Error::DegenerateLaw(_)) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
