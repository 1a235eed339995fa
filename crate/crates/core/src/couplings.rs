//! Poisson total-variation distances, maximal couplings, and the staged
//! coupling of two interlacement copies that agree far from the origin.
//!
//! The staged construction takes two copies `I` and `J` of RI(α) and a finite
//! set `K ⊂ B(ln n)`:
//!
//! 1. sample the inner parts of `J`'s trajectories through `K` and require
//!    `ξ_K ≤ m₀` and `D_K ≤ min(γ₀, n − 1)`;
//! 2. couple the numbers of trajectories touching `B(L)`, `L = ⌈ln n⌉`:
//!    `Poisson(πα cap B(L))` in `I` against
//!    `ξ_K + Poisson(πα (cap B(L) − cap({0} ∪ K)))` in `J`;
//! 3. pair the walkers leaving `B(L)` in both copies and maximally couple
//!    their first entrances into `Θ_n = {‖x‖ > n − 1}`;
//! 4. drive every coupled pair by one shared conditioned walk from the common
//!    entrance, which fails if that walk ever comes back to `B(L)`.
//!
//! On success the two configurations restricted to `Θ_n` coincide.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interlacements::{noodle_config, noodle_config_by, BundleSampler, NoodleConfig, Trajectory};
use crate::lattice::{ball_sites, inner_boundary, Disk, Mask, Site, SiteSet};
use crate::linalg::{default_max_iter, LaplaceSystem};
use crate::potential::{capacity, conditioned_harmonic_measure, HarmonicMeasure, PotentialTable};
use crate::walks::{
    conditioned_step_distribution, srw_path, ConditionedWalker, Doob, PathSegment, Taboo, Truncation,
    WalkEnd, DEFAULT_STEP_BUDGET,
};

fn check_rate(name: &'static str, lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(name, format!("{lambda} is not a positive rate")));
    }
    Ok(())
}

/// Summation window `[lo, hi]` outside which the Poisson(λ) tails are far
/// below `1e-15`.
fn poisson_window(lambda: f64) -> (usize, usize) {
    let spread = 12.0 * lambda.sqrt() + 40.0;
    let lo = (lambda - spread).floor().max(0.0) as usize;
    let hi = (lambda + spread).ceil() as usize;
    (lo, hi)
}

/// Poisson(λ) masses on `lo..=hi`, built by the ratio recurrence outward from
/// the mode and normalized over the window.
pub fn poisson_pmf(lambda: f64, lo: usize, hi: usize) -> Vec<f64> {
    let mode = (lambda.floor() as usize).clamp(lo, hi);
    let mut w = vec![0.0; hi - lo + 1];
    w[mode - lo] = 1.0;
    for k in mode + 1..=hi {
        w[k - lo] = w[k - 1 - lo] * lambda / k as f64;
    }
    for k in (lo..mode).rev() {
        w[k - lo] = w[k + 1 - lo] * (k + 1) as f64 / lambda;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Total variation between two mass vectors on a common index set.
pub fn tv_of_masses(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Exact `d_TV(Poisson(λ₁), Poisson(λ₂))` by term-wise summation.
pub fn poisson_tv(lambda1: f64, lambda2: f64) -> Result<f64> {
    check_rate("lambda1", lambda1)?;
    check_rate("lambda2", lambda2)?;
    if lambda1 == lambda2 {
        return Ok(0.0);
    }
    let (lo1, hi1) = poisson_window(lambda1);
    let (lo2, hi2) = poisson_window(lambda2);
    let (lo, hi) = (lo1.min(lo2), hi1.max(hi2));
    let p = poisson_pmf(lambda1, lo, hi);
    let q = poisson_pmf(lambda2, lo, hi);
    Ok(tv_of_masses(&p, &q))
}

/// The bound `(1/2)√(e^{h²/λ} − 1)` with `λ = min`, `h = |λ₁ − λ₂|`.
pub fn poisson_tv_bound(lambda1: f64, lambda2: f64) -> f64 {
    let lambda = lambda1.min(lambda2);
    let h = (lambda1 - lambda2).abs();
    0.5 * ((h * h / lambda).exp() - 1.0).sqrt()
}

/// Exact `d_TV(Poisson(λ), 1 + Poisson(λ)) = (1/2) E|X/λ − 1|`.
pub fn poisson_shift_tv(lambda: f64) -> Result<f64> {
    check_rate("lambda", lambda)?;
    let (lo, hi) = poisson_window(lambda);
    let p = poisson_pmf(lambda, lo, hi);
    Ok(0.5
        * p.iter()
            .enumerate()
            .map(|(i, pk)| pk * ((lo + i) as f64 / lambda - 1.0).abs())
            .sum::<f64>())
}

/// Draw `(i, j)` from the maximal coupling of two laws on a common index set:
/// with probability `Σ min(p, q)` both coordinates take one value from the
/// normalized overlap (inverse CDF on a shared uniform); otherwise they are
/// drawn independently from the disjointly supported residuals.
pub fn maximal_coupling<R: Rng + ?Sized>(p: &[f64], q: &[f64], rng: &mut R) -> (usize, usize) {
    let overlap: Vec<f64> = p.iter().zip(q).map(|(a, b)| a.min(*b)).collect();
    let beta: f64 = overlap.iter().sum();
    let u = rng.random::<f64>();
    if u < beta {
        let k = inverse_cdf(&overlap, u);
        return (k, k);
    }
    let rp: Vec<f64> = p.iter().zip(&overlap).map(|(a, m)| (a - m).max(0.0)).collect();
    let rq: Vec<f64> = q.iter().zip(&overlap).map(|(a, m)| (a - m).max(0.0)).collect();
    let i = inverse_cdf(&rp, rng.random::<f64>() * rp.iter().sum::<f64>());
    let j = inverse_cdf(&rq, rng.random::<f64>() * rq.iter().sum::<f64>());
    (i, j)
}

/// Smallest index whose cumulative mass exceeds `u`; the last positive index
/// absorbs rounding.
fn inverse_cdf(w: &[f64], mut u: f64) -> usize {
    for (k, wk) in w.iter().enumerate() {
        if u < *wk {
            return k;
        }
        u -= wk;
    }
    w.iter().rposition(|v| *v > 0.0).unwrap_or(0)
}

/// Maximal coupling of `Poisson(λ_I)` and `shift + Poisson(λ_J)`.
#[derive(Clone, Debug)]
pub struct CountCoupling {
    lo: usize,
    p: Vec<f64>,
    q: Vec<f64>,
    tv: f64,
}

impl CountCoupling {
    pub fn new(lambda_i: f64, lambda_j: f64, shift: u64) -> Result<Self> {
        check_rate("lambdaI", lambda_i)?;
        check_rate("lambdaJ", lambda_j)?;
        let (lo1, hi1) = poisson_window(lambda_i);
        let (lo2, hi2) = poisson_window(lambda_j);
        let s = shift as usize;
        let (lo, hi) = (lo1.min(lo2 + s), hi1.max(hi2 + s));
        let p = poisson_pmf(lambda_i, lo, hi);
        let mut q = vec![0.0; hi - lo + 1];
        for (i, v) in poisson_pmf(lambda_j, lo2, hi2).into_iter().enumerate() {
            q[lo2 + s + i - lo] = v;
        }
        let tv = tv_of_masses(&p, &q);
        Ok(CountCoupling { lo, p, q, tv })
    }

    /// Total variation between the two laws; the coupling fails with exactly this probability.
    pub fn tv(&self) -> f64 {
        self.tv
    }

    /// `(N_I, N_J, N_I = N_J)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64, bool) {
        let (i, j) = maximal_coupling(&self.p, &self.q, rng);
        let (a, b) = ((self.lo + i) as u64, (self.lo + j) as u64);
        (a, b, a == b)
    }
}

/// One draw of [`CountCoupling`].
pub fn count_coupling<R: Rng + ?Sized>(
    lambda_i: f64,
    lambda_j: f64,
    shift: u64,
    rng: &mut R,
) -> Result<(u64, u64, bool)> {
    Ok(CountCoupling::new(lambda_i, lambda_j, shift)?.sample(rng))
}

/// A simple-walk excursion and a conditioned-walk excursion from the same
/// entrance, coupled.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkCoupling {
    pub success: bool,
    pub srw: PathSegment,
    pub conditioned: PathSegment,
}

/// How the two excursions are coupled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkMode {
    /// Maximal coupling of the two step laws at every step while the walks agree.
    Stepwise,
    /// Maximal coupling of the two excursion laws: the conditioned excursion
    /// has density `a(X_τ)/a(x)` with respect to the simple-walk excursion.
    Path,
}

struct Annulus {
    boundary: SiteSet,
    stop: Mask,
}

fn check_annulus(entry: Site, inner: &Disk, outer: &Disk) -> Result<Annulus> {
    if outer.contains(Site::ORIGIN) {
        return Err(Error::UndefinedAtOrigin(Site::ORIGIN));
    }
    let inner_sites = ball_sites(inner);
    if !inner_boundary(&inner_sites).contains(&entry) {
        return Err(Error::invalid("entry", format!("{entry} is not on ∂B")));
    }
    let outer_sites = ball_sites(outer);
    if !inner_sites.is_subset(&outer_sites) || inner_boundary(&outer_sites).contains(&entry) {
        return Err(Error::invalid("annulus", "B is not inside B'"));
    }
    let boundary = inner_boundary(&outer_sites);
    Ok(Annulus {
        stop: Mask::new(&boundary),
        boundary,
    })
}

/// Run both walks from `entry ∈ ∂B` to `∂B'`; success means identical paths.
///
/// In [`MarkMode::Stepwise`], after the first disagreement the two walks move
/// independently. In [`MarkMode::Path`], a simple-walk excursion is kept for
/// both with probability `min(1, a(X_τ)/a(x))`; otherwise the conditioned
/// excursion is drawn from the residual law by rejection.
pub fn mark_coupling_diag<R: Rng + ?Sized>(
    entry: Site,
    inner: &Disk,
    outer: &Disk,
    table: &PotentialTable,
    mode: MarkMode,
    rng: &mut R,
    budget: u64,
) -> Result<MarkCoupling> {
    let ann = check_annulus(entry, inner, outer)?;
    match mode {
        MarkMode::Stepwise => stepwise_mark(entry, &ann, table, rng, budget),
        MarkMode::Path => path_mark(entry, &ann, table, rng, budget),
    }
}

fn stepwise_mark<R: Rng + ?Sized>(
    entry: Site,
    ann: &Annulus,
    table: &PotentialTable,
    rng: &mut R,
    budget: u64,
) -> Result<MarkCoupling> {
    let stop = &ann.stop;
    let uniform = [0.25; 4];
    let doob = Doob::Conditioned(table);
    let (mut x, mut y) = (entry, entry);
    let (mut px, mut py) = (vec![x], vec![y]);
    let mut coupled = true;
    let mut steps = 0u64;
    let (mut done_x, mut done_y) = (stop.contains(x), stop.contains(y));
    while !(done_x && done_y) {
        if steps == budget {
            return Err(Truncation {
                budget,
                partial: PathSegment::new(px, 0),
            }
            .into());
        }
        if coupled {
            let q = conditioned_step_distribution(x, table)?;
            let (i, j) = maximal_coupling(&uniform, &q, rng);
            x = x.step(i);
            y = y.step(j);
            coupled = i == j;
            px.push(x);
            py.push(y);
        } else {
            if !done_x {
                x = x.step(rng.random_range(0..4));
                px.push(x);
            }
            if !done_y {
                y = doob.step(y, rng);
                py.push(y);
            }
        }
        done_x = done_x || stop.contains(x);
        done_y = done_y || stop.contains(y);
        steps += 1;
    }
    Ok(MarkCoupling {
        success: px == py,
        srw: PathSegment::new(px, 0),
        conditioned: PathSegment::new(py, 0),
    })
}

fn path_mark<R: Rng + ?Sized>(
    entry: Site,
    ann: &Annulus,
    table: &PotentialTable,
    rng: &mut R,
    budget: u64,
) -> Result<MarkCoupling> {
    let ax = table.value(entry);
    let density = |p: &PathSegment| table.value(p.last().expect("nonempty")) / ax;
    let x = srw_path(entry, |s| ann.stop.contains(s), rng, budget)?;
    if rng.random::<f64>() < density(&x).min(1.0) {
        return Ok(MarkCoupling {
            success: true,
            conditioned: x.clone(),
            srw: x,
        });
    }
    // residual law ∝ (a(X_τ)/a(x) − 1)₊ dP, sampled by rejection
    let sup = ann
        .boundary
        .iter()
        .map(|&z| table.value(z) / ax - 1.0)
        .fold(0.0, f64::max);
    loop {
        let y = srw_path(entry, |s| ann.stop.contains(s), rng, budget)?;
        if rng.random::<f64>() * sup < density(&y) - 1.0 {
            return Ok(MarkCoupling {
                success: x == y,
                srw: x,
                conditioned: y,
            });
        }
    }
}

/// Exact success probability of [`MarkMode::Path`]:
/// `Σ_z P_x[X_τ = z] min(1, a(z)/a(x))` over `z ∈ ∂B'`.
pub fn path_mark_success_probability(entry: Site, inner: &Disk, outer: &Disk, table: &PotentialTable) -> Result<f64> {
    let ann = check_annulus(entry, inner, outer)?;
    let boundary = &ann.boundary;
    let free = ball_sites(outer).difference(boundary);
    let sys = LaplaceSystem::new(free);
    let ix = sys
        .index(entry)
        .ok_or_else(|| Error::invalid("entry", "not strictly inside B'"))?;
    let mut rhs = vec![0.0; sys.len()];
    rhs[ix] = 1.0;
    let g = sys.solve(&rhs, 1e-12, default_max_iter(sys.len()))?;
    let ax = table.value(entry);
    Ok(boundary
        .iter()
        .map(|&z| {
            let p = z.neighbors().iter().filter_map(|&w| sys.index(w)).map(|i| g[i]).sum::<f64>() / 4.0;
            p * (table.value(z) / ax).min(1.0)
        })
        .sum())
}

/// Stages of the coupling construction, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InnerEvent,
    CountCoupling,
    EntryCoupling,
    TrajectoryReuse,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::InnerEvent,
        Stage::CountCoupling,
        Stage::EntryCoupling,
        Stage::TrajectoryReuse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::InnerEvent => "inner_event",
            Stage::CountCoupling => "count_coupling",
            Stage::EntryCoupling => "entry_coupling",
            Stage::TrajectoryReuse => "trajectory_reuse",
        }
    }
}

/// Result of one attempted stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub success: bool,
    /// Conditional success probability of the stage given what was sampled
    /// before it, where it is computable exactly.
    pub probability: Option<f64>,
}

/// Outcome of one run of the coupling construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingOutcome {
    pub success: bool,
    /// The last stage attempted: the failing one, or the final stage on success.
    pub stage: Stage,
    pub stages: Vec<StageResult>,
    pub xi_k: usize,
    pub d_k: f64,
    /// Number of trajectories touching `B(L)` in both copies, when the counts were coupled.
    pub y: Option<u64>,
    /// On success: whether the configurations on `Θ_n` were found identical.
    pub configs_identical: Option<bool>,
}

/// Thresholds `(m₀, γ₀)` with validation figures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub m0: usize,
    pub gamma0: f64,
    pub pilot_coverage: f64,
    pub holdout_coverage: f64,
    pub holdout_size: usize,
    pub diagnostic: Option<String>,
}

/// `(ξ_K, D_K)` of one bundle; a censored `D_K` counts as infinite.
fn xi_d<R: Rng + ?Sized>(sampler: &BundleSampler<'_>, rng: &mut R) -> Result<(usize, f64)> {
    let b = sampler.sample(rng)?;
    let d = if b.censored() { f64::INFINITY } else { b.d_k() };
    Ok((b.xi_k(), d))
}

/// Lexicographically smallest `(m₀, γ₀)` with `P̂[ξ ≤ m₀, D ≤ γ₀] ≥ q`.
fn smallest_thresholds(sample: &[(usize, f64)], q: f64) -> Option<(usize, f64, f64)> {
    let n = sample.len() as f64;
    let max_xi = sample.iter().map(|s| s.0).max()?;
    for m0 in 0..=max_xi {
        let mut ds: Vec<f64> = sample.iter().filter(|s| s.0 <= m0).map(|s| s.1).collect();
        if (ds.len() as f64) < q * n {
            continue;
        }
        ds.sort_by(|a, b| a.total_cmp(b));
        let need = (q * n).ceil().max(1.0) as usize;
        let g = ds[need - 1];
        if g.is_finite() {
            return Some((m0, g, ds.iter().filter(|d| **d <= g).count() as f64 / n));
        }
    }
    None
}

/// Choose `(m₀, γ₀)` so that `P[ξ_K ≤ m₀, D_K ≤ γ₀] ≥ 1 − ε/2`, from a pilot
/// sample of `pilot` bundles, validated on as many held-out bundles. If the
/// held-out coverage falls short by more than its 99% Wilson margin, the
/// thresholds are widened and a diagnostic is attached.
pub fn choose_thresholds<R: Rng + ?Sized>(
    sampler: &BundleSampler<'_>,
    epsilon: f64,
    pilot: usize,
    rng: &mut R,
) -> Result<Thresholds> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("epsilon", "must lie in (0, 1)"));
    }
    if pilot == 0 {
        return Err(Error::invalid("pilot", "must be positive"));
    }
    let q = 1.0 - epsilon / 2.0;
    let first: Vec<(usize, f64)> = (0..pilot).map(|_| xi_d(sampler, rng)).collect::<Result<_>>()?;
    let held: Vec<(usize, f64)> = (0..pilot).map(|_| xi_d(sampler, rng)).collect::<Result<_>>()?;
    let mut diagnostic = None;
    let (mut m0, mut gamma0, pilot_coverage) = match smallest_thresholds(&first, q) {
        Some(t) => t,
        None => {
            diagnostic = Some("pilot sample too censored: thresholds taken from all finite values".to_string());
            let m = first.iter().map(|s| s.0).max().unwrap_or(0);
            let g = first.iter().map(|s| s.1).filter(|d| d.is_finite()).fold(0.0, f64::max);
            (m, g, 0.0)
        }
    };
    let cover = |m: usize, g: f64| held.iter().filter(|s| s.0 <= m && s.1 <= g).count() as u64;
    let hits = cover(m0, gamma0);
    let (_, upper) = crate::stats::wilson_ci(hits, held.len() as u64, 0.99)?;
    if upper < q {
        let pooled: Vec<(usize, f64)> = first.iter().chain(&held).copied().collect();
        if let Some((m, g, _)) = smallest_thresholds(&pooled, q) {
            m0 = m0.max(m);
            gamma0 = gamma0.max(g);
        }
        diagnostic = Some(format!(
            "held-out coverage {:.4} below target {q:.4}: thresholds widened using the pooled sample",
            hits as f64 / held.len() as f64
        ));
    }
    Ok(Thresholds {
        m0,
        gamma0,
        pilot_coverage,
        holdout_coverage: cover(m0, gamma0) as f64 / held.len() as f64,
        holdout_size: held.len(),
        diagnostic,
    })
}

/// Which taboo set a walker avoids (besides the origin).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Zone {
    Origin,
    K,
    Ball,
}

struct Walker {
    zone: Zone,
    start: Site,
}

/// Per-replica record of the coupling experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub replica: u64,
    pub stage: String,
    pub success: bool,
    pub xi_k: usize,
    pub d_k: f64,
    pub m0: usize,
    pub gamma0: f64,
    pub n: u32,
}

impl CouplingRow {
    pub fn new(replica: u64, outcome: &CouplingOutcome, thresholds: &Thresholds, n: u32) -> Self {
        CouplingRow {
            replica,
            stage: outcome.stage.name().to_string(),
            success: outcome.success,
            xi_k: outcome.xi_k,
            d_k: outcome.d_k,
            m0: thresholds.m0,
            gamma0: thresholds.gamma0,
            n,
        }
    }
}

/// Predicate over the configuration of `J` on `K` (the conditioning event).
pub type Condition = dyn Fn(&NoodleConfig) -> bool + Send + Sync;

/// The staged coupling for fixed `K`, `α`, `n` and thresholds; the potential
/// theory is set up once and exit laws are cached across runs.
pub struct Lemma2Pipeline<'a> {
    table: &'a PotentialTable,
    k: SiteSet,
    n: u32,
    m0: usize,
    gamma0: f64,
    ball: SiteSet,
    ball_mask: Mask,
    rate_i: f64,
    rate_j: f64,
    bundles: BundleSampler<'a>,
    hm_ball: HarmonicMeasure,
    hm_avoid_k: HarmonicMeasure,
    taboo_k: Taboo<'a>,
    taboo_ball: Taboo<'a>,
    reuse: ConditionedWalker<'a>,
    entries: Vec<Site>,
    systems: HashMap<Zone, LaplaceSystem>,
    exit_cache: Mutex<HashMap<(Zone, Site), Arc<Vec<f64>>>>,
    condition: Option<Box<Condition>>,
    max_rejections: usize,
}

impl<'a> Lemma2Pipeline<'a> {
    /// `kill_radius` bounds the simulated part of the shared walks; it must be at least `n`.
    pub fn new(
        table: &'a PotentialTable,
        k: &SiteSet,
        alpha: f64,
        n: u32,
        m0: usize,
        gamma0: f64,
        kill_radius: f64,
    ) -> Result<Self> {
        if k.is_empty() {
            return Err(Error::invalid("K", "empty set"));
        }
        check_rate("alpha", alpha)?;
        let ln_n = (n as f64).ln();
        if n < 3 || k.max_norm() > ln_n {
            return Err(Error::invalid(
                "n",
                format!("K ⊂ B(ln n) is violated: max ‖x‖ over K is {} > ln n = {ln_n:.4}", k.max_norm()),
            ));
        }
        let l = ln_n.ceil();
        if l + 1.0 >= (n - 1) as f64 {
            return Err(Error::invalid("n", "B(⌈ln n⌉ + 1) must lie inside B(n − 1)"));
        }
        if kill_radius < n as f64 {
            return Err(Error::invalid("kill_radius", "must be at least n"));
        }
        let ball = ball_sites(&Disk::origin(l)?);
        let mut rooted_k = k.clone();
        rooted_k.insert(Site::ORIGIN);
        let cap_ball = capacity(&ball, table)?;
        let cap_k = capacity(&rooted_k, table)?;
        let pi_alpha = std::f64::consts::PI * alpha;
        let taboo_k = Taboo::new(table, k)?;
        let hm_ball = conditioned_harmonic_measure(&ball, table)?;
        // entrance into B(L) of trajectories that never visit K
        let avoid: Vec<f64> = hm_ball
            .support()
            .iter()
            .zip(hm_ball.weights())
            .map(|(&x, w)| w * taboo_k.avoidance_probability(x))
            .collect();
        let hm_avoid_k = HarmonicMeasure::new(hm_ball.support().to_vec(), avoid)?;
        let inside = Disk::origin((n - 1) as f64)?;
        let inside_sites = ball_sites(&inside);
        let entries: Vec<Site> = inside_sites
            .iter()
            .flat_map(|s| s.neighbors())
            .filter(|z| !inside.contains(*z))
            .collect::<SiteSet>()
            .into_vec();
        let mut systems = HashMap::new();
        for (zone, zero) in [
            (Zone::Origin, SiteSet::singleton(Site::ORIGIN)),
            (Zone::K, rooted_k.clone()),
            (Zone::Ball, ball.clone()),
        ] {
            systems.insert(zone, LaplaceSystem::new(inside_sites.difference(&zero)));
        }
        let region = Disk::origin(kill_radius)?;
        Ok(Lemma2Pipeline {
            table,
            k: k.clone(),
            n,
            m0,
            gamma0,
            ball_mask: Mask::new(&ball),
            rate_i: pi_alpha * cap_ball,
            rate_j: pi_alpha * (cap_ball - cap_k),
            bundles: BundleSampler::new(table, k, alpha, Disk::origin(n as f64)?)?,
            hm_ball,
            hm_avoid_k,
            taboo_k,
            taboo_ball: Taboo::new(table, &ball)?,
            reuse: ConditionedWalker::new(Doob::Conditioned(table), region, &ball, DEFAULT_STEP_BUDGET)?,
            ball,
            entries,
            systems,
            exit_cache: Mutex::new(HashMap::new()),
            condition: None,
            max_rejections: 100_000,
        })
    }

    /// Condition `J` on its configuration on `K` satisfying `condition`
    /// (sampled by rejection).
    pub fn with_condition(mut self, condition: Box<Condition>) -> Self {
        self.condition = Some(condition);
        self
    }

    /// Rates `(πα cap B(L), πα (cap B(L) − cap({0} ∪ K)))` of stage 2.
    pub fn rates(&self) -> (f64, f64) {
        (self.rate_i, self.rate_j)
    }

    pub fn ball(&self) -> &SiteSet {
        &self.ball
    }

    /// Entrance law into `B(L)` of trajectories touching `B(L)` but not `K`.
    pub fn avoiding_entrance(&self) -> &HarmonicMeasure {
        &self.hm_avoid_k
    }

    /// First-entrance sites into `Θ_n`, indexing the exit laws.
    pub fn theta_entries(&self) -> &[Site] {
        &self.entries
    }

    fn h(&self, zone: Zone, x: Site) -> f64 {
        match zone {
            Zone::Origin => self.table.value(x),
            Zone::K => self.taboo_k.value(x),
            Zone::Ball => self.taboo_ball.value(x),
        }
    }

    fn doob(&self, zone: Zone) -> Doob<'_> {
        match zone {
            Zone::Origin => Doob::Conditioned(self.table),
            Zone::K => Doob::Taboo(&self.taboo_k),
            Zone::Ball => Doob::Taboo(&self.taboo_ball),
        }
    }

    /// Law of the first entrance into `Θ_n` of the walk avoiding `zone`,
    /// started at `y`: `P_y[S_τ = z] h(z) / h(y)` with `τ` the exit time of
    /// `B(n − 1)`, killed on the zero set of `h`.
    fn exit_law(&self, zone: Zone, y: Site) -> Result<Arc<Vec<f64>>> {
        if let Some(v) = self.exit_cache.lock().expect("cache lock").get(&(zone, y)) {
            return Ok(v.clone());
        }
        let sys = &self.systems[&zone];
        let iy = sys
            .index(y)
            .ok_or_else(|| Error::invalid("start", format!("{y} is not a free site of B(n − 1)")))?;
        let mut rhs = vec![0.0; sys.len()];
        rhs[iy] = 1.0;
        // the killed Green function is symmetric, so this column is the row G(y, ·)
        let g = sys.solve(&rhs, 1e-12, default_max_iter(sys.len()))?;
        let hy = self.h(zone, y);
        let mut law: Vec<f64> = self
            .entries
            .iter()
            .map(|&z| {
                let p: f64 = z.neighbors().iter().filter_map(|&w| sys.index(w)).map(|i| g[i]).sum::<f64>() / 4.0;
                p * self.h(zone, z) / hy
            })
            .collect();
        let total: f64 = law.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Singular(format!("no exit from B(n − 1) for the walk started at {y}")));
        }
        law.iter_mut().for_each(|v| *v /= total);
        let law = Arc::new(law);
        self.exit_cache
            .lock()
            .expect("cache lock")
            .insert((zone, y), law.clone());
        Ok(law)
    }

    /// First step of a walk avoiding `zone` out of a site where its `h` vanishes.
    fn first_step<R: Rng + ?Sized>(&self, zone: Zone, x: Site, rng: &mut R) -> Site {
        self.doob(zone).step(x, rng)
    }

    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CouplingOutcome> {
        let mut stages = Vec::new();
        let fail = |stages: Vec<StageResult>, xi_k, d_k, y| {
            let stage = stages.last().map(|s: &StageResult| s.stage).unwrap_or(Stage::InnerEvent);
            Ok(CouplingOutcome {
                success: false,
                stage,
                stages,
                xi_k,
                d_k,
                y,
                configs_identical: None,
            })
        };

        // stage 1: inner parts of J's trajectories through K
        let mut attempts = 0;
        let bundle = loop {
            let b = self.bundles.sample(rng)?;
            match &self.condition {
                Some(c) if !c(&noodle_config(&b.paths(), &self.k)) => {
                    attempts += 1;
                    if attempts == self.max_rejections {
                        return Err(Error::invalid("condition", "rejection sampling budget exhausted"));
                    }
                }
                _ => break b,
            }
        };
        let xi = bundle.xi_k();
        let d_k = if bundle.censored() { f64::INFINITY } else { bundle.d_k() };
        let inner_ok = xi <= self.m0 && d_k <= self.gamma0 && d_k <= (self.n - 1) as f64;
        stages.push(StageResult {
            stage: Stage::InnerEvent,
            success: inner_ok,
            probability: None,
        });
        if !inner_ok {
            return fail(stages, xi, d_k, None);
        }

        // stage 2: numbers of trajectories touching B(L)
        let cc = CountCoupling::new(self.rate_i, self.rate_j.max(f64::MIN_POSITIVE), xi as u64)?;
        let (ni, _, same) = cc.sample(rng);
        stages.push(StageResult {
            stage: Stage::CountCoupling,
            success: same,
            probability: Some(1.0 - cc.tv()),
        });
        if !same {
            return fail(stages, xi, d_k, None);
        }
        let y = ni as usize;

        // stage 3: walkers leaving B(L), paired forward with forward and backward with backward
        let mut i_fwd = Vec::with_capacity(y);
        let mut i_bwd = Vec::with_capacity(y);
        for _ in 0..y {
            let x = self.hm_ball.sample(rng);
            i_fwd.push(Walker {
                zone: Zone::Origin,
                start: x,
            });
            i_bwd.push(Walker {
                zone: Zone::Ball,
                start: self.first_step(Zone::Ball, x, rng),
            });
        }
        let mut j_fwd = Vec::with_capacity(y);
        let mut j_bwd = Vec::with_capacity(y);
        let mut inner_parts = Vec::with_capacity(xi);
        for t in &bundle.trajectories {
            let piece = &t.path.pieces[1];
            let inner = PathSegment::new(piece.sites[..=t.tau_plus as usize].to_vec(), 0);
            let (entry, exit) = (inner.sites[0], *inner.sites.last().expect("nonempty"));
            j_fwd.push(Walker {
                zone: Zone::K,
                start: self.first_step(Zone::K, exit, rng),
            });
            j_bwd.push(Walker {
                zone: Zone::K,
                start: self.first_step(Zone::K, entry, rng),
            });
            inner_parts.push(inner);
        }
        for _ in xi..y {
            let x = self.hm_avoid_k.sample(rng);
            j_fwd.push(Walker { zone: Zone::K, start: x });
            j_bwd.push(Walker {
                zone: Zone::Ball,
                start: self.first_step(Zone::Ball, x, rng),
            });
        }
        let mut common = Vec::with_capacity(2 * y);
        let mut p_entry = 1.0;
        let mut entry_ok = true;
        for (a, b) in i_fwd.iter().chain(&i_bwd).zip(j_fwd.iter().chain(&j_bwd)) {
            let mu = self.exit_law(a.zone, a.start)?;
            let nu = self.exit_law(b.zone, b.start)?;
            p_entry *= 1.0 - tv_of_masses(&mu, &nu);
            let (u, v) = maximal_coupling(&mu, &nu, rng);
            entry_ok &= u == v;
            common.push(self.entries[u]);
        }
        stages.push(StageResult {
            stage: Stage::EntryCoupling,
            success: entry_ok,
            probability: Some(p_entry),
        });
        if !entry_ok {
            return fail(stages, xi, d_k, Some(ni));
        }

        // stage 4: one shared conditioned walk per pair, which must never return to B(L)
        let mut shared = Vec::with_capacity(2 * y);
        let mut p_reuse = 1.0;
        let mut reuse_ok = true;
        for &z in &common {
            p_reuse *= 1.0 - self.reuse.resolver().return_probability(z);
            if !reuse_ok {
                continue;
            }
            let rec = self.reuse.run(z, |s| self.ball_mask.contains(s), rng)?;
            reuse_ok = rec.end == WalkEnd::Escaped;
            shared.push(rec.segments);
        }
        stages.push(StageResult {
            stage: Stage::TrajectoryReuse,
            success: reuse_ok,
            probability: Some(p_reuse),
        });
        if !reuse_ok {
            return fail(stages, xi, d_k, Some(ni));
        }

        // assemble both copies (parts inside B(n − 1) before Θ_n are left unsimulated)
        let reversed = |segs: &[PathSegment]| -> Vec<PathSegment> {
            segs.iter()
                .rev()
                .map(|s| PathSegment::new(s.sites.iter().rev().copied().collect(), 0))
                .collect()
        };
        let (fwd_paths, bwd_paths) = shared.split_at(y);
        let mut copy_i = Vec::with_capacity(y);
        let mut copy_j = Vec::with_capacity(y);
        for t in 0..y {
            let mut pieces = reversed(&bwd_paths[t]);
            pieces.extend(fwd_paths[t].iter().cloned());
            copy_i.push(Trajectory { id: t, pieces });
            let mut pieces = reversed(&bwd_paths[t]);
            if t < xi {
                pieces.push(inner_parts[t].clone());
            }
            pieces.extend(fwd_paths[t].iter().cloned());
            copy_j.push(Trajectory { id: t, pieces });
        }
        let far = (self.n - 1) as i64 * (self.n - 1) as i64;
        let theta = |s: Site| s.norm2() > far;
        let identical = noodle_config_by(&copy_i, theta) == noodle_config_by(&copy_j, theta);
        Ok(CouplingOutcome {
            success: true,
            stage: Stage::TrajectoryReuse,
            stages,
            xi_k: xi,
            d_k,
            y: Some(ni),
            configs_identical: Some(identical),
        })
    }
}

/// Choose thresholds from a pilot of `pilot` bundles and run the construction once.
pub fn lemma2_pipeline<R: Rng + ?Sized>(
    table: &PotentialTable,
    k: &SiteSet,
    alpha: f64,
    epsilon: f64,
    n: u32,
    pilot: usize,
    rng: &mut R,
) -> Result<(Thresholds, CouplingOutcome)> {
    let sampler = BundleSampler::new(table, k, alpha, Disk::origin(n as f64)?)?;
    let th = choose_thresholds(&sampler, epsilon, pilot, rng)?;
    let pipe = Lemma2Pipeline::new(table, k, alpha, n, th.m0, th.gamma0, 2.0 * n as f64)?;
    let out = pipe.run(rng)?;
    Ok((th, out))
}

/// Draw `Poisson(λ)` as an integer.
pub fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        0
    } else {
        Poisson::new(lambda).expect("positive rate").sample(rng) as u64
    }
}
