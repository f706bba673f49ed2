//! Finite lattice distributions: convolution, generation laws of Z_n,
//! lower tails and harmonic moments.

use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offspring::OffspringLaw;

/// Knobs of the exact engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Mass allowed to be dropped at the final generation.
    pub trunc_tol: f64,
    /// Length above which convolutions go through the FFT.
    pub crossover: usize,
    /// Largest lattice vector the engine may allocate.
    pub max_support: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            trunc_tol: 1e-15,
            crossover: 256,
            max_support: 1 << 24,
        }
    }
}

impl EngineConfig {
    fn check(&self) -> Result<()> {
        if !(self.trunc_tol > 0.0 && self.trunc_tol <= 1e-6) {
            return Err(Error::InvalidArgument(format!(
                "trunc_tol = {} must lie in (0, 1e-6]",
                self.trunc_tol
            )));
        }
        Ok(())
    }
}

/// Distribution on the lattice `offset + span * i`, i = 0..masses.len().
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    pub offset: i64,
    pub span: u64,
    pub masses: Vec<f64>,
    /// Probability discarded by truncations so far.
    pub truncated_mass: f64,
    /// Magnitude of negative values clipped from floating-point convolution
    /// plus any other rounding allowance.
    #[serde(default)]
    pub clip_error: f64,
}

impl ProbVector {
    pub fn new(offset: i64, span: u64, masses: Vec<f64>) -> Result<Self> {
        if span == 0 {
            return Err(Error::InvalidArgument("span must be positive".into()));
        }
        for (i, &p) in masses.iter().enumerate() {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::InvalidProbability {
                    at: format!("value {}", offset + span as i64 * i as i64),
                    value: p,
                });
            }
        }
        let total: f64 = masses.iter().sum();
        Ok(Self {
            offset,
            span,
            masses,
            truncated_mass: (1.0 - total).max(0.0),
            clip_error: 0.0,
        })
    }

    pub fn delta(x: i64) -> Self {
        Self {
            offset: x,
            span: 1,
            masses: vec![1.0],
            truncated_mass: 0.0,
            clip_error: 0.0,
        }
    }

    /// Builds a vector from `(value, mass)` pairs sharing a lattice of step `span`.
    pub fn from_pairs(pairs: &[(i64, f64)], span: u64) -> Result<Self> {
        let lo = pairs
            .iter()
            .map(|p| p.0)
            .min()
            .ok_or_else(|| Error::InvalidArgument("empty distribution".into()))?;
        let mut masses = Vec::new();
        for &(x, p) in pairs {
            let d = x - lo;
            if d % span as i64 != 0 {
                return Err(Error::SpanMismatch(span, d.unsigned_abs()));
            }
            let i = (d / span as i64) as usize;
            if masses.len() <= i {
                masses.resize(i + 1, 0.0);
            }
            masses[i] += p;
        }
        Self::new(lo, span, masses)
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn value(&self, i: usize) -> i64 {
        self.offset + self.span as i64 * i as i64
    }

    pub fn max_value(&self) -> i64 {
        self.value(self.masses.len().saturating_sub(1))
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass at `x` (zero off the lattice or outside the stored range).
    pub fn mass_at(&self, x: i64) -> f64 {
        let d = x - self.offset;
        if d < 0 || d % self.span as i64 != 0 {
            return 0.0;
        }
        self.masses
            .get((d / self.span as i64) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.masses.iter().enumerate().map(|(i, &p)| (self.value(i), p))
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(x, p)| x as f64 * p).sum::<f64>() / self.total_mass()
    }

    /// Exact law of the independent sum, up to truncation and rounding.
    pub fn convolve(&self, other: &ProbVector, crossover: usize) -> Result<ProbVector> {
        let span = match (self.len(), other.len()) {
            (1, _) => other.span,
            (_, 1) => self.span,
            _ if self.span == other.span => self.span,
            _ => return Err(Error::SpanMismatch(self.span, other.span)),
        };
        let (masses, clip) = convolve_slices(&self.masses, &other.masses, crossover);
        let (ta, tb) = (self.truncated_mass, other.truncated_mass);
        Ok(ProbVector {
            offset: self.offset + other.offset,
            span,
            masses,
            truncated_mass: ta + tb - ta * tb,
            clip_error: self.clip_error + other.clip_error + clip,
        })
    }

    /// Drops leading and trailing points while the mass dropped on each side
    /// stays below `tol / 2`; the dropped mass is added to `truncated_mass`.
    pub fn truncate(&mut self, tol: f64) {
        let (lead, trail, dropped) = trim_bounds(&self.masses, tol);
        self.masses.truncate(self.masses.len() - trail);
        self.masses.drain(..lead);
        self.offset += self.span as i64 * lead as i64;
        self.truncated_mass += dropped;
    }

    /// P(0 < Z <= k), or P(Z <= k) when `include_zero`.
    pub fn lower_tail(&self, k: i64, include_zero: bool) -> f64 {
        self.iter()
            .filter(|&(x, _)| x <= k && (include_zero || x > 0))
            .map(|(_, p)| p)
            .sum()
    }

    /// Σ_{x >= 1} x^{-r} P(Z = x).
    pub fn harmonic_moment(&self, r: f64) -> f64 {
        self.iter()
            .filter(|&(x, _)| x >= 1)
            .map(|(x, p)| p * (x as f64).powf(-r))
            .sum()
    }

    /// `value,mass` rows with 15 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "value,mass")?;
        for (x, p) in self.iter() {
            writeln!(w, "{x},{p:.14e}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::IoFailure(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::IoFailure(e.to_string()))
    }
}

/// Returns (leading count, trailing count, dropped mass).
fn trim_bounds(masses: &[f64], tol: f64) -> (usize, usize, f64) {
    let half = tol / 2.0;
    let n = masses.len();
    let (mut lead, mut acc_lead) = (0, 0.0);
    while lead < n && acc_lead + masses[lead] < half {
        acc_lead += masses[lead];
        lead += 1;
    }
    let (mut trail, mut acc_trail) = (0, 0.0);
    while trail < n - lead && acc_trail + masses[n - 1 - trail] < half {
        acc_trail += masses[n - 1 - trail];
        trail += 1;
    }
    if lead + trail == n && n > 0 {
        // Everything is below tolerance; keep the largest point.
        let imax = masses
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let dropped: f64 = masses.iter().sum::<f64>() - masses[imax];
        return (imax, n - imax - 1, dropped);
    }
    (lead, trail, acc_lead + acc_trail)
}

/// Plain linear convolution of two mass arrays.
pub fn convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    for (i, &x) in short.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(long) {
            *o += x * y;
        }
    }
    out
}

/// Linear convolution, direct or FFT depending on `crossover`; returns the
/// result and the mass clipped by noise removal.
pub fn convolve_slices(a: &[f64], b: &[f64], crossover: usize) -> (Vec<f64>, f64) {
    if a.is_empty() || b.is_empty() {
        return (Vec::new(), 0.0);
    }
    if a.len().min(b.len()) <= crossover {
        return (convolve_direct(a, b), 0.0);
    }
    let len = a.len() + b.len() - 1;
    let n = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    // Pack both real inputs into one complex transform.
    let mut z: Vec<Complex64> = (0..n)
        .map(|i| {
            Complex64::new(
                a.get(i).copied().unwrap_or(0.0),
                b.get(i).copied().unwrap_or(0.0),
            )
        })
        .collect();
    fwd.process(&mut z);
    let quarter_i = Complex64::new(0.0, -0.25);
    let mut c: Vec<Complex64> = (0..n)
        .map(|f| {
            let zf = z[f];
            let zr = z[(n - f) % n].conj();
            (zf * zf - zr * zr) * quarter_i
        })
        .collect();
    inv.process(&mut c);
    let scale = 1.0 / n as f64;
    let mut out: Vec<f64> = c[..len].iter().map(|v| v.re * scale).collect();
    let clip = denoise(&mut out, n);
    (out, clip)
}

/// Zeroes FFT round-off below the noise floor and clips negatives; returns
/// the total magnitude removed.
fn denoise(out: &mut [f64], n: usize) -> f64 {
    let l2: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    let floor = 4.0 * f64::EPSILON * (n as f64).log2().max(1.0) * l2;
    let mut clip = 0.0;
    for v in out.iter_mut() {
        if *v < floor {
            clip += v.abs();
            *v = 0.0;
        }
    }
    clip
}

/// Law of Z_n under the exponential tilt `e^{-t x}`:
/// P(Z_n = x) = masses[i] · exp(ln_norm + tilt · x) with x = offset + span·i.
///
/// `ln_norm` = ln f_n(e^{-t}) comes from scalar iteration, so the masses of
/// the exact tilted law sum to one and `deficit = 1 - Σ masses` bounds the
/// total mass lost to truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltedPmf {
    pub generation: usize,
    pub offset: i64,
    pub span: u64,
    pub masses: Vec<f64>,
    pub tilt: f64,
    pub ln_norm: f64,
    pub deficit: f64,
    pub clip_error: f64,
}

impl TiltedPmf {
    pub fn value(&self, i: usize) -> i64 {
        self.offset + self.span as i64 * i as i64
    }

    /// ln P(Z_n = x), -inf where no mass is stored.
    pub fn ln_prob(&self, x: i64) -> f64 {
        let d = x - self.offset;
        if d < 0 || d % self.span as i64 != 0 {
            return f64::NEG_INFINITY;
        }
        match self.masses.get((d / self.span as i64) as usize) {
            Some(&p) if p > 0.0 => p.ln() + self.ln_norm + self.tilt * x as f64,
            _ => f64::NEG_INFINITY,
        }
    }

    /// (x, ln P(Z_n = x)) over stored points with positive mass.
    pub fn iter_ln(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| {
                let x = self.value(i);
                (x, p.ln() + self.ln_norm + self.tilt * x as f64)
            })
    }

    /// Bound on Σ_x e^{-t x} |error in P(Z_n = x)|, on the log scale.
    pub fn ln_error_weight(&self) -> f64 {
        (self.deficit.max(0.0) + self.clip_error).ln() + self.ln_norm
    }

    /// Untilted view; only meaningful when `tilt == 0`.
    pub fn into_prob_vector(self) -> ProbVector {
        let scale = self.ln_norm.exp();
        let masses: Vec<f64> = self.masses.iter().map(|p| p * scale).collect();
        let total: f64 = masses.iter().sum();
        ProbVector {
            offset: self.offset,
            span: self.span,
            masses,
            truncated_mass: (1.0 - total).max(0.0),
            clip_error: self.clip_error,
        }
    }
}

struct Stage {
    offset: i64,
    masses: Vec<f64>,
    clip: f64,
}

struct GenerationIterator<'a> {
    law: &'a OffspringLaw,
    cfg: EngineConfig,
    tilt: f64,
    span: u64,
    /// ln f_j(e^{-t}) for the current stage j.
    ln_norm: f64,
    planner: FftPlanner<f64>,
}

impl<'a> GenerationIterator<'a> {
    /// Offspring weights w_k ∝ p_k e^{k ℓ_j}, indexed by j with k = μ + d·j.
    fn weights(&self) -> (Vec<f64>, f64) {
        let law = self.law;
        let mu = law.min_offspring() as usize;
        let d = self.span as usize;
        let next_norm = law.ln_pgf_exp(self.ln_norm);
        let mut w = Vec::new();
        let mut k = mu;
        while k < law.masses().len() {
            let p = law.p(k);
            let ln_w = if p > 0.0 {
                p.ln() + (k - mu) as f64 * self.ln_norm + mu as f64 * self.ln_norm - next_norm
            } else {
                f64::NEG_INFINITY
            };
            w.push(ln_w.exp());
            k += d;
        }
        while w.len() > 1 && w.last() == Some(&0.0) {
            w.pop();
        }
        (w, next_norm)
    }

    /// Smallest x with P_tilted(Z_{j+1} > x) <= e^{ln_target}, by a Chernoff
    /// bound over a grid of exponents.
    fn upper_bound(&self, gens: usize, next_norm: f64, ln_target: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for e in 0..=260 {
            let s = (-(e as f64) / 4.0).exp2();
            let mut l = s - self.tilt;
            for _ in 0..gens {
                l = self.law.ln_pgf_exp(l);
                if !l.is_finite() {
                    break;
                }
            }
            if !l.is_finite() {
                continue;
            }
            let k = (l - next_norm - ln_target) / s;
            if best.map_or(true, |b| k < b) {
                best = Some(k);
            }
        }
        best
    }

    fn step(&mut self, cur: Stage, gen_next: usize, stage_tol: f64) -> Result<Stage> {
        let (w, next_norm) = self.weights();
        let mu = self.law.min_offspring() as usize;
        let d = self.span as usize;
        let len = cur.masses.len();
        // Term k = μ + d·j starts (k - μ)·offset/d = j·offset slots above μ·offset.
        let shift_unit = cur.offset.max(0) as usize;
        let jmax = w.len() - 1;
        let kmax = mu + d * jmax;
        let full_len = jmax * shift_unit + kmax * (len - 1) + 1;
        let next_offset = mu as i64 * cur.offset;

        let alias_target = stage_tol * 1e-3;
        let mut alias = 0.0;
        let mut cap = full_len;
        if let Some(kx) = self.upper_bound(gen_next, next_norm, alias_target.ln()) {
            let idx = ((kx - next_offset as f64) / self.span as f64).ceil().max(0.0);
            if idx + 1.0 < full_len as f64 {
                cap = idx as usize + 1;
                alias = alias_target;
            }
        }
        if cap > self.cfg.max_support {
            return Err(Error::SupportOverflow {
                projected: cap,
                budget: self.cfg.max_support,
            });
        }

        let (mut out, mut clip) = if len <= self.cfg.crossover {
            (self.direct_step(&cur.masses, &w, mu, shift_unit, cap), 0.0)
        } else {
            let n = cap.next_power_of_two();
            if n > self.cfg.max_support {
                return Err(Error::SupportOverflow {
                    projected: n,
                    budget: self.cfg.max_support,
                });
            }
            self.fourier_step(&cur.masses, &w, mu, shift_unit, cap, n)
        };
        clip += alias + cur.clip;
        let (lead, trail, _) = trim_bounds(&out, stage_tol);
        out.truncate(out.len() - trail);
        out.drain(..lead);
        self.ln_norm = next_norm;
        Ok(Stage {
            offset: next_offset + self.span as i64 * lead as i64,
            masses: out,
            clip,
        })
    }

    fn direct_step(&self, g: &[f64], w: &[f64], mu: usize, shift: usize, cap: usize) -> Vec<f64> {
        let d = self.span as usize;
        let power = |times: usize| {
            let mut acc = vec![1.0];
            for _ in 0..times {
                acc = convolve_direct(&acc, g);
                acc.truncate(cap);
            }
            acc
        };
        let gd = power(d);
        let mut pw = power(mu);
        let mut out = vec![0.0; cap];
        for (j, &wj) in w.iter().enumerate() {
            let start = j * shift;
            if start >= cap {
                break;
            }
            if wj > 0.0 {
                for (o, &v) in out[start..].iter_mut().zip(&pw) {
                    *o += wj * v;
                }
            }
            if j + 1 < w.len() {
                pw = convolve_direct(&pw, &gd);
                pw.truncate(cap - start.min(cap));
            }
        }
        out
    }

    fn fourier_step(
        &mut self,
        g: &[f64],
        w: &[f64],
        mu: usize,
        shift: usize,
        cap: usize,
        n: usize,
    ) -> (Vec<f64>, f64) {
        let d = self.span as i32;
        let fwd = self.planner.plan_fft_forward(n);
        let inv = self.planner.plan_fft_inverse(n);
        let mut a: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(g.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        fwd.process(&mut a);
        let shift_mod = (shift % n) as u128;
        for (f, v) in a.iter_mut().enumerate() {
            let phase = ((f as u128 * shift_mod) % n as u128) as f64 / n as f64;
            let rot = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * phase);
            let y = rot * v.powi(d);
            let mut acc = Complex64::new(0.0, 0.0);
            for &wj in w.iter().rev() {
                acc = acc * y + wj;
            }
            *v = acc * v.powi(mu as i32);
        }
        inv.process(&mut a);
        let scale = 1.0 / n as f64;
        let mut out: Vec<f64> = a[..cap.min(n)].iter().map(|v| v.re * scale).collect();
        let clip = denoise(&mut out, n);
        (out, clip)
    }
}

fn run_generations(
    law: &OffspringLaw,
    n: usize,
    tilt: f64,
    cfg: &EngineConfig,
    mut visit: impl FnMut(usize, &Stage, f64),
) -> Result<()> {
    cfg.check()?;
    if !(tilt.is_finite() && tilt >= 0.0) {
        return Err(Error::InvalidArgument(format!("tilt = {tilt}")));
    }
    let mut it = GenerationIterator {
        law,
        cfg: *cfg,
        tilt,
        span: law.lattice_span(),
        ln_norm: -tilt,
        planner: FftPlanner::new(),
    };
    let mut stage = Stage {
        offset: 1,
        masses: vec![1.0],
        clip: 0.0,
    };
    visit(0, &stage, it.ln_norm);
    let m = law.mean();
    let mut individuals = 0.0;
    for j in 0..n {
        let stage_tol = cfg.trunc_tol * m.powi(-((n - 1 - j) as i32));
        stage = it.step(stage, j + 1, stage_tol)?;
        // Renormalising a truncated offspring law shifts each draw by at most
        // its truncated mass.
        individuals += m.powi(j as i32);
        let law_err = individuals * law.truncated_mass();
        let saved = stage.clip;
        stage.clip += law_err;
        visit(j + 1, &stage, it.ln_norm);
        stage.clip = saved;
    }
    Ok(())
}

fn to_tilted(gen: usize, stage: &Stage, span: u64, tilt: f64, ln_norm: f64) -> TiltedPmf {
    let total: f64 = stage.masses.iter().sum();
    TiltedPmf {
        generation: gen,
        offset: stage.offset,
        span,
        masses: stage.masses.clone(),
        tilt,
        ln_norm,
        deficit: (1.0 - total).max(0.0),
        clip_error: stage.clip,
    }
}

/// Law of Z_n started from Z_0 = 1.
pub fn generation_pmf(law: &OffspringLaw, n: usize, cfg: &EngineConfig) -> Result<ProbVector> {
    Ok(tilted_generation_pmf(law, n, 0.0, cfg)?.into_prob_vector())
}

/// Laws of Z_0, ..., Z_{n_max}; truncation is calibrated for the last one.
pub fn generation_pmfs(
    law: &OffspringLaw,
    n_max: usize,
    cfg: &EngineConfig,
) -> Result<Vec<ProbVector>> {
    let span = law.lattice_span();
    let mut out = Vec::with_capacity(n_max + 1);
    run_generations(law, n_max, 0.0, cfg, |j, stage, ln_norm| {
        out.push(to_tilted(j, stage, span, 0.0, ln_norm).into_prob_vector());
    })?;
    Ok(out)
}

/// Law of Z_n under the tilt e^{-t x}, see [`TiltedPmf`].
pub fn tilted_generation_pmf(
    law: &OffspringLaw,
    n: usize,
    tilt: f64,
    cfg: &EngineConfig,
) -> Result<TiltedPmf> {
    let span = law.lattice_span();
    let mut last = None;
    run_generations(law, n, tilt, cfg, |j, stage, ln_norm| {
        if j == n {
            last = Some(to_tilted(j, stage, span, tilt, ln_norm));
        }
    })?;
    Ok(last.expect("final generation visited"))
}

/// P(0 < Z <= k), or P(Z <= k) when `include_zero`.
pub fn lower_tail(pmf: &ProbVector, k: i64, include_zero: bool) -> f64 {
    pmf.lower_tail(k, include_zero)
}

/// E{Z^{-r}; Z > 0}.
pub fn harmonic_moment(pmf: &ProbVector, r: f64) -> f64 {
    pmf.harmonic_moment(r)
}

pub fn convolve(a: &ProbVector, b: &ProbVector) -> Result<ProbVector> {
    a.convolve(b, EngineConfig::default().crossover)
}

/// sup_k k·P(Z = k) over k >= 1, the smallest C with P(Z = k) <= C/k.
pub fn local_bound_constant(pmf: &ProbVector) -> f64 {
    pmf.iter()
        .filter(|&(k, _)| k >= 1)
        .map(|(k, p)| k as f64 * p)
        .fold(0.0, f64::max)
}

/// sup_k P(Z_n = k)·m^{αn}/k^{α-1} over k >= 1, the smallest C with
/// P(Z_n = k) <= C k^{α-1} m^{-αn}.
pub fn schroder_local_constant(pmf: &ProbVector, alpha: f64, m: f64, n: usize) -> f64 {
    let scale = alpha * n as f64 * m.ln();
    pmf.iter()
        .filter(|&(k, p)| k >= 1 && p > 0.0)
        .map(|(k, p)| (p.ln() + scale - (alpha - 1.0) * (k as f64).ln()).exp())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lf_mass(n: usize, k: i64) -> f64 {
        let mn = 2f64.powi(n as i32);
        (1.0 / mn) * (1.0 - 1.0 / mn).powi(k as i32 - 1)
    }

    #[test]
    fn local_constants_of_a_two_point_law() {
        let pv = ProbVector::from_pairs(&[(1, 0.5), (2, 0.5)], 1).unwrap();
        assert_eq!(local_bound_constant(&pv), 1.0);
        // α = 1: plain sup of P·m^n.
        assert_eq!(schroder_local_constant(&pv, 1.0, 2.0, 1), 1.0);
    }

    #[test]
    fn delta_is_identity() {
        let b = ProbVector::from_pairs(&[(-1, 0.3), (1, 0.7)], 2).unwrap();
        let c = ProbVector::delta(0).convolve(&b, 256).unwrap();
        assert_eq!(c.offset, -1);
        assert_eq!(c.span, 2);
        assert_eq!(c.masses, b.masses);
    }

    #[test]
    fn coins_and_rademacher() {
        let u = ProbVector::new(0, 1, vec![0.5, 0.5]).unwrap();
        let c = convolve(&u, &u).unwrap();
        assert_eq!(c.masses, vec![0.25, 0.5, 0.25]);
        let r = ProbVector::from_pairs(&[(-1, 0.5), (1, 0.5)], 2).unwrap();
        let r3 = r.convolve(&r, 256).unwrap().convolve(&r, 256).unwrap();
        assert_relative_eq!(r3.mass_at(1), 3.0 / 8.0);
        assert_eq!(r3.mass_at(0), 0.0);
    }

    #[test]
    fn span_mismatch_rejected() {
        let a = ProbVector::new(0, 1, vec![0.5, 0.5]).unwrap();
        let b = ProbVector::new(0, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(a.convolve(&b, 256), Err(Error::SpanMismatch(1, 2)));
    }

    #[test]
    fn fft_matches_direct() {
        let a: Vec<f64> = (0..700).map(|i| ((i * 37 % 101) as f64 + 1.0) / 5e4).collect();
        let b: Vec<f64> = (0..500).map(|i| ((i * 13 % 89) as f64 + 1.0) / 3e4).collect();
        let direct = convolve_direct(&a, &b);
        let (fft, _) = convolve_slices(&a, &b, 8);
        let scale = direct.iter().cloned().fold(0.0, f64::max);
        for (x, y) in direct.iter().zip(&fft) {
            assert!((x - y).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn first_generations() {
        let law = OffspringLaw::from_pairs(&[(1, 0.2), (2, 0.8)]).unwrap();
        let cfg = EngineConfig::default();
        let z0 = generation_pmf(&law, 0, &cfg).unwrap();
        assert_eq!((z0.offset, z0.masses.clone()), (1, vec![1.0]));
        let z1 = generation_pmf(&law, 1, &cfg).unwrap();
        assert_relative_eq!(z1.mass_at(1), 0.2, max_relative = 1e-15);
        assert_relative_eq!(z1.mass_at(2), 0.8, max_relative = 1e-15);
        // Z_2: 1 w.p. .04, 2 w.p. .16 + .8·.04, 3 w.p. .8·2·.2·.8, 4 w.p. .8^3.
        let z2 = generation_pmf(&law, 2, &cfg).unwrap();
        assert_relative_eq!(z2.mass_at(1), 0.04, max_relative = 1e-14);
        assert_relative_eq!(z2.mass_at(2), 0.16 + 0.032, max_relative = 1e-14);
        assert_relative_eq!(z2.mass_at(3), 0.256, max_relative = 1e-14);
        assert_relative_eq!(z2.mass_at(4), 0.512, max_relative = 1e-14);
    }

    #[test]
    fn linear_fractional_closed_form() {
        let law = OffspringLaw::linear_fractional(2.0).unwrap();
        let z = generation_pmf(&law, 10, &EngineConfig::default()).unwrap();
        let mut sup: f64 = 0.0;
        for (k, p) in z.iter() {
            sup = sup.max((p - lf_mass(10, k)).abs());
        }
        assert!(sup <= 1e-12, "sup-norm {sup}");
        assert!(z.total_mass() + z.truncated_mass >= 1.0 - 1e-9);
    }

    #[test]
    fn linear_fractional_deep_fft() {
        // Long vectors exercise the Fourier path.
        let law = OffspringLaw::linear_fractional(2.0).unwrap();
        let z = generation_pmf(&law, 13, &EngineConfig::default()).unwrap();
        assert!(z.len() > 256);
        for k in [1i64, 10, 100, 1000, 8192, 50_000] {
            assert_relative_eq!(z.mass_at(k), lf_mass(13, k), max_relative = 1e-9);
        }
    }

    #[test]
    fn tilted_matches_untilted_where_both_resolve() {
        let law = OffspringLaw::from_pairs(&[(1, 0.2), (2, 0.8)]).unwrap();
        let cfg = EngineConfig::default();
        let plain = generation_pmf(&law, 9, &cfg).unwrap();
        let tilted = tilted_generation_pmf(&law, 9, 0.01, &cfg).unwrap();
        for k in [1i64, 5, 40, 200] {
            let want = plain.mass_at(k).ln();
            assert_relative_eq!(tilted.ln_prob(k), want, max_relative = 1e-10);
        }
        // Exact normalisation from the scalar iterate.
        let f = law.pgf_iterate((-0.01f64).exp(), 9);
        assert_relative_eq!(tilted.ln_norm, f.ln(), max_relative = 1e-13);
    }

    #[test]
    fn bottcher_lower_tail_support() {
        let law = OffspringLaw::from_pairs(&[(2, 0.5), (3, 0.5)]).unwrap();
        let z = generation_pmf(&law, 6, &EngineConfig::default()).unwrap();
        assert_eq!(z.lower_tail(63, true), 0.0);
        // P(Z_6 = 64) = 2^-63 sits below the truncation level of the plain
        // pmf but is resolved under a tilt.
        let t = tilted_generation_pmf(&law, 6, 1.0, &EngineConfig::default()).unwrap();
        assert_relative_eq!(t.ln_prob(64), -63.0 * 2f64.ln(), max_relative = 1e-12);
        assert_eq!(t.ln_prob(63), f64::NEG_INFINITY);
        assert_relative_eq!(z.lower_tail(1 << 20, false), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lower_tail_geometric() {
        let law = OffspringLaw::linear_fractional(2.0).unwrap();
        let z = generation_pmf(&law, 5, &EngineConfig::default()).unwrap();
        let want: f64 = (1..=8).map(|j| lf_mass(5, j)).sum();
        assert_relative_eq!(z.lower_tail(8, false), want, max_relative = 1e-12);
    }

    #[test]
    fn harmonic_moments() {
        assert_eq!(ProbVector::delta(1).harmonic_moment(2.5), 1.0);
        let p = ProbVector::new(1, 1, vec![0.5, 0.5]).unwrap();
        assert_relative_eq!(p.harmonic_moment(1.0), 0.75);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let p = ProbVector::new(-1, 2, vec![0.25, 0.75]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "value,mass\n-1,2.50000000000000e-1\n1,7.50000000000000e-1\n");
        assert_eq!(ProbVector::from_json(&p.to_json().unwrap()).unwrap(), p);
    }

    #[test]
    fn truncation_accounts_mass() {
        let mut p = ProbVector::new(0, 1, vec![1e-18, 0.5, 0.5 - 2e-18, 1e-18]).unwrap();
        p.truncate(1e-15);
        assert_eq!(p.offset, 1);
        assert_eq!(p.len(), 2);
        assert!((p.total_mass() + p.truncated_mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn overflow_is_reported() {
        let law = OffspringLaw::linear_fractional(2.0).unwrap();
        let cfg = EngineConfig {
            max_support: 1000,
            ..EngineConfig::default()
        };
        assert!(matches!(
            generation_pmf(&law, 12, &cfg),
            Err(Error::SupportOverflow { .. })
        ));
    }

    proptest! {
        #[test]
        fn convolution_conserves_mass(
            a in prop::collection::vec(0.0f64..1.0, 1..40),
            b in prop::collection::vec(0.0f64..1.0, 1..40),
            crossover in 0usize..50,
        ) {
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            prop_assume!(sa > 0.0 && sb > 0.0);
            let pa = ProbVector::new(0, 1, a.iter().map(|x| x / sa).collect()).unwrap();
            let pb = ProbVector::new(3, 1, b.iter().map(|x| x / sb).collect()).unwrap();
            let c = pa.convolve(&pb, crossover).unwrap();
            prop_assert!(c.masses.iter().all(|&x| x >= 0.0));
            prop_assert!((c.total_mass() + c.truncated_mass - 1.0).abs() <= 1e-10 + c.clip_error);
            prop_assert!(c.truncated_mass >= pa.truncated_mass.max(pb.truncated_mass));
            prop_assert_eq!(c.offset, 3);
        }

        #[test]
        fn generation_mass_is_conserved(p1 in 0.05f64..0.6, n in 0usize..9) {
            let law = OffspringLaw::from_pairs(&[(1, p1), (2, (1.0 - p1) / 2.0), (3, (1.0 - p1) / 2.0)]).unwrap();
            let z = generation_pmf(&law, n, &EngineConfig::default()).unwrap();
            let total = z.total_mass() + z.truncated_mass;
            prop_assert!(total >= 1.0 - 1e-9 && total <= 1.0 + 1e-12);
        }
    }
}
