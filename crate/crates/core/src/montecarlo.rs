//! Seeded simulation of (Z_n, S_{Z_n}), used to cross-check the exact engine.
//!
//! Replication `r` of a run with seed `s` draws from ChaCha8 seeded with `s`
//! on stream `r`, so results do not depend on how replications are split
//! across threads.

use std::collections::BTreeMap;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::WeightedAliasIndex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::distengine::ProbVector;
use crate::error::{Error, Result};
use crate::increments::{IncrementLaw, IncrementSpec};
use crate::offspring::OffspringLaw;

/// Run parameters shared by all simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub replications: u64,
    pub ci_level: f64,
    /// Estimate P(R_n >= ε | Z_n > 0) instead of P(R_n >= ε, Z_n > 0).
    pub survival_conditioning: bool,
    /// Cap on offspring plus increment draws over the whole run.
    pub draw_budget: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            replications: 100_000,
            ci_level: 0.95,
            survival_conditioning: false,
            draw_budget: 4_000_000_000,
        }
    }
}

fn stream(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Alias sampler of an offspring law.
struct OffspringSampler {
    alias: WeightedAliasIndex<f64>,
    values: Vec<u64>,
}

impl OffspringSampler {
    fn new(law: &OffspringLaw) -> Result<Self> {
        let (values, weights): (Vec<u64>, Vec<f64>) = law
            .masses()
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(k, &p)| (k as u64, p))
            .unzip();
        let alias = WeightedAliasIndex::new(weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Self { alias, values })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> u64 {
        self.values[self.alias.sample(rng)]
    }
}

/// Draws of the raw lattice variable Y, with X = Y - shift.
enum IncrementSampler {
    Alias {
        alias: WeightedAliasIndex<f64>,
        values: Vec<i64>,
    },
    /// P(Y >= y) = (1 + (y - 1)/s)^{-θ}, inverted exactly.
    Pareto { theta: f64, scale: f64 },
}

impl IncrementSampler {
    fn new(x: &IncrementLaw) -> Result<Self> {
        if let IncrementSpec::CenteredParetoLattice { theta, scale, .. } = *x.spec() {
            return Ok(IncrementSampler::Pareto { theta, scale });
        }
        let (values, weights): (Vec<i64>, Vec<f64>) = x.raw_pmf().iter().filter(|a| a.1 > 0.0).unzip();
        let alias = WeightedAliasIndex::new(weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(IncrementSampler::Alias { alias, values })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> i64 {
        match self {
            IncrementSampler::Alias { alias, values } => values[alias.sample(rng)],
            IncrementSampler::Pareto { theta, scale } => {
                // U in (0, 1].
                let u = 1.0 - rng.gen::<f64>();
                let y = 1.0 + (scale * (u.powf(-1.0 / theta) - 1.0)).floor();
                if y >= i64::MAX as f64 {
                    i64::MAX
                } else {
                    y as i64
                }
            }
        }
    }
}

/// Expected offspring draws per replication, Σ_{j<n} m^j.
fn expected_draws(law: &OffspringLaw, n: usize) -> f64 {
    (0..n).map(|j| law.mean().powi(j as i32)).sum()
}

fn check_budget(law: &OffspringLaw, n: usize, cfg: &McConfig, per_rep_extra: f64) -> Result<()> {
    let projected = cfg.replications as f64 * (expected_draws(law, n) + per_rep_extra);
    if projected > cfg.draw_budget as f64 {
        return Err(Error::BudgetExceeded(format!(
            "about {projected:.3e} draws expected, budget {}",
            cfg.draw_budget
        )));
    }
    Ok(())
}

fn grow<R: Rng>(sampler: &OffspringSampler, n: usize, rng: &mut R, cap: u64) -> Result<u64> {
    let mut z = 1u64;
    let mut used = 0u64;
    for _ in 0..n {
        used += z;
        if used > cap {
            return Err(Error::BudgetExceeded(format!("replication exceeded {cap} draws")));
        }
        let mut next = 0u64;
        for _ in 0..z {
            next += sampler.draw(rng);
        }
        z = next;
        if z == 0 {
            break;
        }
    }
    Ok(z)
}

/// Tallies of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBatch {
    pub seed: u64,
    pub replications: u64,
    pub survival_conditioning: bool,
    pub ci_level: f64,
    /// Number of replications with each value of Z_n.
    pub z_tally: BTreeMap<u64, u64>,
    /// Per ε, replications with Z_n > 0 and S_{Z_n} >= ε Z_n.
    pub hits: Vec<(f64, u64)>,
}

impl SimBatch {
    pub fn survivors(&self) -> u64 {
        self.z_tally.iter().filter(|(&z, _)| z > 0).map(|(_, &c)| c).sum()
    }

    /// Estimates with Wilson intervals, one per ε.
    pub fn estimates(&self) -> Vec<McEstimate> {
        let trials = if self.survival_conditioning {
            self.survivors()
        } else {
            self.replications
        };
        self.hits
            .iter()
            .map(|&(eps, hits)| {
                let (lo, hi) = wilson_interval(hits, trials, self.ci_level);
                McEstimate {
                    seed: self.seed,
                    replications: self.replications,
                    epsilon: eps,
                    estimate: if trials > 0 { hits as f64 / trials as f64 } else { f64::NAN },
                    ci_low: lo,
                    ci_high: hi,
                }
            })
            .collect()
    }

    /// Empirical law of Z_n.
    pub fn z_pmf(&self) -> ProbVector {
        let lo = self.z_tally.keys().next().copied().unwrap_or(0);
        let hi = self.z_tally.keys().next_back().copied().unwrap_or(0);
        let mut masses = vec![0.0; (hi - lo + 1) as usize];
        for (&z, &c) in &self.z_tally {
            masses[(z - lo) as usize] = c as f64 / self.replications as f64;
        }
        ProbVector {
            offset: lo as i64,
            span: 1,
            masses,
            truncated_mass: 0.0,
            clip_error: 0.0,
        }
    }
}

/// A proportion with its confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub seed: u64,
    pub replications: u64,
    pub epsilon: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl McEstimate {
    pub fn covers(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

/// Wilson score interval for `hits` successes in `trials`.
pub fn wilson_interval(hits: u64, trials: u64, level: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + 0.5 * level);
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Runs `cfg.replications` independent copies of Z_n and, when `x` is given,
/// of S_{Z_n}, counting {S_{Z_n} >= ε Z_n, Z_n > 0} for every ε. An ε of
/// -∞ counts survival.
pub fn simulate(
    law: &OffspringLaw,
    x: Option<&IncrementLaw>,
    n: usize,
    eps: &[f64],
    seed: u64,
    cfg: &McConfig,
) -> Result<SimBatch> {
    if !(cfg.ci_level > 0.0 && cfg.ci_level < 1.0) {
        return Err(Error::InvalidArgument(format!("ci_level = {}", cfg.ci_level)));
    }
    if eps.iter().any(|e| e.is_nan()) {
        return Err(Error::InvalidArgument("ε is NaN".into()));
    }
    let extra = if x.is_some() { law.mean().powi(n as i32) } else { 0.0 };
    check_budget(law, n, cfg, extra)?;
    let offspring = OffspringSampler::new(law)?;
    let increments = x.map(IncrementSampler::new).transpose()?;
    let shift = x.map_or(0.0, |x| x.shift());
    // Per-replication guard against runaway paths: 50 times the mean load.
    let cap = ((50.0 * (expected_draws(law, n) + extra)).ceil() as u64).max(1_000);

    const CHUNK: u64 = 4096;
    let chunks: Vec<u64> = (0..cfg.replications.div_ceil(CHUNK)).collect();
    let partial: Vec<Result<(BTreeMap<u64, u64>, Vec<u64>)>> = chunks
        .par_iter()
        .map(|&c| {
            let mut tally = BTreeMap::new();
            let mut hits = vec![0u64; eps.len()];
            let end = ((c + 1) * CHUNK).min(cfg.replications);
            for rep in c * CHUNK..end {
                let mut rng = stream(seed, rep);
                let z = grow(&offspring, n, &mut rng, cap)?;
                *tally.entry(z).or_insert(0) += 1;
                if z == 0 {
                    continue;
                }
                let raw_sum: Option<i128> = increments.as_ref().map(|s| {
                    let mut acc = 0i128;
                    for _ in 0..z {
                        acc += s.draw(&mut rng) as i128;
                    }
                    acc
                });
                for (h, &e) in hits.iter_mut().zip(eps) {
                    let hit = if e == f64::NEG_INFINITY {
                        true
                    } else if let Some(sum) = raw_sum {
                        // S_Z >= εZ with S_Z = Σ Y - Z·shift.
                        let target = z as f64 * (e + shift);
                        sum as f64 >= target - 1e-9 * target.abs().max(1.0)
                    } else {
                        false
                    };
                    if hit {
                        *h += 1;
                    }
                }
            }
            Ok((tally, hits))
        })
        .collect();
    let mut z_tally = BTreeMap::new();
    let mut hits = vec![0u64; eps.len()];
    for p in partial {
        let (t, h) = p?;
        for (z, c) in t {
            *z_tally.entry(z).or_insert(0) += c;
        }
        for (a, b) in hits.iter_mut().zip(h) {
            *a += b;
        }
    }
    Ok(SimBatch {
        seed,
        replications: cfg.replications,
        survival_conditioning: cfg.survival_conditioning,
        ci_level: cfg.ci_level,
        z_tally,
        hits: eps.iter().copied().zip(hits).collect(),
    })
}

/// Empirical law of Z_n from `replications` runs.
pub fn simulate_zn(law: &OffspringLaw, n: usize, seed: u64, replications: u64) -> Result<ProbVector> {
    let cfg = McConfig {
        replications,
        ..McConfig::default()
    };
    Ok(simulate(law, None, n, &[], seed, &cfg)?.z_pmf())
}

/// Estimate of P(R_n >= ε) (on {Z_n > 0}) with its Wilson interval.
pub fn estimate_rn_tail(
    law: &OffspringLaw,
    x: &IncrementLaw,
    n: usize,
    eps: f64,
    seed: u64,
    replications: u64,
) -> Result<McEstimate> {
    let cfg = McConfig {
        replications,
        ..McConfig::default()
    };
    Ok(simulate(law, Some(x), n, &[eps], seed, &cfg)?.estimates()[0])
}

/// sup_x |F_a(x) - F_b(x)| over the union of both supports.
pub fn ks_distance(a: &ProbVector, b: &ProbVector) -> f64 {
    let mut points: Vec<(i64, f64, f64)> = a
        .iter()
        .map(|(x, p)| (x, p, 0.0))
        .chain(b.iter().map(|(x, p)| (x, 0.0, p)))
        .collect();
    points.sort_by_key(|p| p.0);
    let (mut fa, mut fb, mut d) = (0.0f64, 0.0f64, 0.0f64);
    for (_, pa, pb) in points {
        fa += pa;
        fb += pb;
        d = d.max((fa - fb).abs());
    }
    d
}

/// Writes `seed,N,epsilon,estimate,ci_low,ci_high` rows.
pub fn write_mc_csv<W: std::io::Write>(mut w: W, rows: &[McEstimate]) -> Result<()> {
    writeln!(w, "seed,N,epsilon,estimate,ci_low,ci_high")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.14e},{:.14e},{:.14e},{:.14e}",
            r.seed, r.replications, r.epsilon, r.estimate, r.ci_low, r.ci_high
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distengine::generation_pmf;
    use crate::EngineConfig;

    #[test]
    fn generation_zero_is_one() {
        let law = OffspringLaw::linear_fractional(2.0).unwrap();
        let p = simulate_zn(&law, 0, 1, 1000).unwrap();
        assert_eq!(p.offset, 1);
        assert_eq!(p.masses, vec![1.0]);
    }

    #[test]
    fn near_deterministic_doubling() {
        let law = OffspringLaw::from_pairs(&[(2, 1.0 - 1e-9), (3, 1e-9)]).unwrap();
        let p = simulate_zn(&law, 5, 7, 10_000).unwrap();
        assert!(p.mass_at(32) >= 0.999);
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let law = OffspringLaw::from_pairs(&[(0, 0.1), (1, 0.3), (2, 0.6)]).unwrap();
        let x = IncrementLaw::rademacher();
        let cfg = McConfig {
            replications: 20_000,
            ..McConfig::default()
        };
        let a = simulate(&law, Some(&x), 6, &[0.0, 0.2], 42, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate(&law, Some(&x), 6, &[0.0, 0.2], 42, &cfg).unwrap());
        assert_eq!(a, b);
        let c = simulate(&law, Some(&x), 6, &[0.0, 0.2], 43, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn impossible_and_sentinel_events() {
        let law = OffspringLaw::from_pairs(&[(0, 0.2), (1, 0.2), (2, 0.6)]).unwrap();
        let x = IncrementLaw::rademacher();
        let cfg = McConfig {
            replications: 5_000,
            ..McConfig::default()
        };
        let b = simulate(&law, Some(&x), 4, &[1.5, f64::NEG_INFINITY], 3, &cfg).unwrap();
        let est = b.estimates();
        assert_eq!(est[0].estimate, 0.0);
        assert_eq!(est[1].estimate, b.survivors() as f64 / 5_000.0);
    }

    #[test]
    fn monotone_in_epsilon_on_shared_paths() {
        let law = OffspringLaw::linear_fractional(2.0).unwrap();
        let x = IncrementLaw::centered_pareto_lattice(2.5, 1.0, None).unwrap();
        let cfg = McConfig {
            replications: 5_000,
            ..McConfig::default()
        };
        let eps = [0.0, 0.1, 0.3, 1.0];
        let est = simulate(&law, Some(&x), 5, &eps, 9, &cfg).unwrap().estimates();
        for w in est.windows(2) {
            assert!(w[1].estimate <= w[0].estimate);
        }
    }

    #[test]
    fn hand_case_is_covered() {
        let law = OffspringLaw::from_pairs(&[(1, 0.5), (2, 0.5)]).unwrap();
        let e = estimate_rn_tail(&law, &IncrementLaw::rademacher(), 1, 1.0, 11, 100_000).unwrap();
        let se = (0.375f64 * 0.625 / 1e5).sqrt();
        assert!((e.estimate - 0.375).abs() < 4.0 * se, "{e:?}");
    }

    #[test]
    fn wilson_interval_properties() {
        let (lo, hi) = wilson_interval(0, 100, 0.95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100, 0.95);
        assert!((lo + hi - 1.0).abs() < 1e-12);
        assert!(lo > 0.39 && hi < 0.61);
    }

    #[test]
    fn empirical_law_matches_exact() {
        let law = OffspringLaw::linear_fractional(2.0).unwrap();
        let exact = generation_pmf(&law, 8, &EngineConfig::default()).unwrap();
        let n = 4000;
        let emp = simulate_zn(&law, 8, 5, n).unwrap();
        assert!(ks_distance(&emp, &exact) < 1.63 / (n as f64).sqrt());
    }

    #[test]
    fn budget_is_enforced() {
        let law = OffspringLaw::linear_fractional(2.0).unwrap();
        let cfg = McConfig {
            replications: 1000,
            draw_budget: 10_000,
            ..McConfig::default()
        };
        assert!(matches!(
            simulate(&law, None, 12, &[], 1, &cfg),
            Err(Error::BudgetExceeded(_))
        ));
    }
}
