//! Compound-Poisson excursion counts, their normal limit, and the generic
//! test statistics used throughout the crate.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::lattice::{ball_sites, Disk, Site};
use crate::potential::{capacity, PotentialTable};

/// How the Poisson rate of the excursion count is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NMode {
    /// `π cap({0} ∪ B)` from the potential module.
    ExactCapacity,
    /// The leading-order rate `2 ln s`.
    Asymptotic,
}

/// Parameters of the compound-Poisson count `N = Σ_{i ≤ M} E_i`,
/// `M ~ Poisson(rate)`, `E_i ~ Exp(mean)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSampleSpec {
    /// `ln s`; the scale enters only through its logarithm.
    pub ln_s: f64,
    pub mode: NMode,
    pub rate: f64,
    pub mean: f64,
}

impl NSampleSpec {
    pub fn asymptotic(ln_s: f64) -> Result<Self> {
        if !(ln_s > 0.0 && ln_s.is_finite()) {
            return Err(Error::invalid("ln_s", "must be positive and finite"));
        }
        Ok(NSampleSpec {
            ln_s,
            mode: NMode::Asymptotic,
            rate: 2.0 * ln_s,
            mean: ln_s,
        })
    }

    /// Rate `π cap({0} ∪ B(x_s, s/ln² s))` with `x_s = (s, 0)`.
    pub fn exact_capacity(s: f64, table: &PotentialTable) -> Result<Self> {
        if !(s > std::f64::consts::E) || s > i32::MAX as f64 / 4.0 {
            return Err(Error::invalid("s", "must lie in (e, 2^29)"));
        }
        let ln_s = s.ln();
        let cap = scale_capacity(s, table)?;
        Ok(NSampleSpec {
            ln_s,
            mode: NMode::ExactCapacity,
            rate: std::f64::consts::PI * cap,
            mean: ln_s,
        })
    }

    /// `E N = rate · mean`.
    pub fn expected(&self) -> f64 {
        self.rate * self.mean
    }

    /// `Var N = 2 rate · mean²`.
    pub fn variance(&self) -> f64 {
        2.0 * self.rate * self.mean * self.mean
    }
}

/// The ball `B(x_s, s/ln² s)` with `x_s = (⌊s⌋, 0)`.
pub fn scale_ball(s: f64) -> Result<Disk> {
    let ln = s.ln();
    Disk::new(Site::new(s.floor() as i32, 0), s / (ln * ln))
}

/// `cap({0} ∪ B(x_s, s/ln² s))`.
pub fn scale_capacity(s: f64, table: &PotentialTable) -> Result<f64> {
    let mut set = ball_sites(&scale_ball(s)?);
    set.insert(Site::ORIGIN);
    capacity(&set, table)
}

/// One draw of `N`.
pub fn sample_n<R: Rng + ?Sized>(spec: &NSampleSpec, rng: &mut R) -> f64 {
    if spec.rate <= 0.0 {
        return 0.0;
    }
    let m = Poisson::new(spec.rate).expect("positive rate").sample(rng);
    if m == 0.0 {
        return 0.0;
    }
    Gamma::new(m, spec.mean).expect("positive shape and scale").sample(rng)
}

/// `(N − 2 ln² s) / (2 ln^{3/2} s)`.
pub fn normalize_n(n: f64, ln_s: f64) -> f64 {
    (n - 2.0 * ln_s * ln_s) / (2.0 * ln_s.powf(1.5))
}

/// The downward-fluctuation threshold `2 ln² s − ln^{3/2} s`.
pub fn downward_threshold(ln_s: f64) -> f64 {
    2.0 * ln_s * ln_s - ln_s.powf(1.5)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// KS distance between the normalized count (asymptotic mode) and the standard normal.
pub fn ks_normal_check<R: Rng + ?Sized>(ln_s: f64, samples: usize, rng: &mut R) -> Result<f64> {
    if samples < 1000 {
        return Err(Error::invalid("samples", "need at least 1000"));
    }
    let spec = NSampleSpec::asymptotic(ln_s)?;
    let mut z: Vec<f64> = (0..samples).map(|_| normalize_n(sample_n(&spec, rng), ln_s)).collect();
    ks_distance(&mut z, phi)
}

/// Monte Carlo estimate of a probability with its Wilson interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl ProbEstimate {
    pub fn new(successes: u64, trials: u64, level: f64) -> Result<Self> {
        let (lower, upper) = wilson_ci(successes, trials, level)?;
        Ok(ProbEstimate {
            successes,
            trials,
            estimate: successes as f64 / trials as f64,
            lower,
            upper,
            level,
        })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `P[N ≤ threshold]` in asymptotic mode, with a 99% Wilson interval;
/// the default threshold is [`downward_threshold`].
pub fn downward_prob<R: Rng + ?Sized>(
    ln_s: f64,
    threshold: Option<f64>,
    samples: usize,
    rng: &mut R,
) -> Result<ProbEstimate> {
    if samples < 1000 {
        return Err(Error::invalid("samples", "need at least 1000"));
    }
    let spec = NSampleSpec::asymptotic(ln_s)?;
    let thr = threshold.unwrap_or_else(|| downward_threshold(ln_s));
    let hits = (0..samples).filter(|_| sample_n(&spec, rng) <= thr).count();
    ProbEstimate::new(hits as u64, samples as u64, 0.99)
}

/// Wilson score interval for a binomial proportion at confidence `level`.
pub fn wilson_ci(successes: u64, trials: u64, level: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    if successes > trials {
        return Err(Error::invalid("successes", "exceeds trials"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level", "must lie in (0, 1)"));
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = std_normal().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Pearson chi-square p-value with `k − 1` degrees of freedom.
/// Expected counts are rescaled to the observed total.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::invalid("observed", "need matching lengths of at least 2"));
    }
    if expected.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::invalid("expected", "all expected masses must be positive"));
    }
    let total_obs: f64 = observed.iter().sum();
    let total_exp: f64 = expected.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| {
            let e = e * total_obs / total_exp;
            (o - e) * (o - e) / e
        })
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).expect("positive dof");
    Ok(dist.sf(stat))
}

/// [`chi_square`] after pooling adjacent bins (in the given order) until
/// every pooled expected count reaches `min_expected`.
pub fn chi_square_pooled(observed: &[f64], expected: &[f64], min_expected: f64) -> Result<f64> {
    if observed.len() != expected.len() {
        return Err(Error::invalid("observed", "length mismatch"));
    }
    let total_obs: f64 = observed.iter().sum();
    let total_exp: f64 = expected.iter().sum();
    let scale = total_obs / total_exp;
    let (mut po, mut pe) = (Vec::new(), Vec::new());
    let (mut acc_o, mut acc_e) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected) {
        acc_o += o;
        acc_e += e;
        if acc_e * scale >= min_expected {
            po.push(acc_o);
            pe.push(acc_e);
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 || acc_o > 0.0 {
        match (po.last_mut(), pe.last_mut()) {
            (Some(o), Some(e)) => {
                *o += acc_o;
                *e += acc_e;
            }
            _ => {
                po.push(acc_o);
                pe.push(acc_e);
            }
        }
    }
    if po.len() < 2 {
        return Ok(1.0);
    }
    chi_square(&po, &pe)
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples`
/// (sorted in place) and `cdf`.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "empty sample"));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("samples", "NaN in sample"));
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d)
}

/// `ψ* = 2 ln² m₀ − 3 ln m₀ ln ln m₀`, with `m₀ = s / ln² s`.
pub fn psi_star(s: f64) -> Result<f64> {
    let ln = s.ln();
    let m0 = s / (ln * ln);
    if !(m0 > std::f64::consts::E) {
        return Err(Error::invalid("s", "s/ln² s must exceed e"));
    }
    let l = m0.ln();
    Ok(2.0 * l * l - 3.0 * l * l.ln())
}

/// The coupled interlacement excursion budget `2 ln² s − ln^{3/2} s`, logged
/// next to [`psi_star`].
pub fn ri_excursion_budget(ln_s: f64) -> f64 {
    downward_threshold(ln_s)
}
