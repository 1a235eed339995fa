//! The walk conditioned never to hit the origin (`Ŝ`, the Doob transform of
//! simple random walk by the potential kernel `a`) and its taboo variant,
//! conditioned in addition never to enter a finite set `F`.
//!
//! Both are h-transforms of simple random walk killed on a finite set `Z`:
//! `p(x, y) = h(y) / (4 h(x))` with `h = a` and `Z = {0}` for `Ŝ`, and
//! `h = g_F(x) = a(x) − E_x[a(S_τ)]` (`τ` the hitting time of `F ∪ {0}`) for
//! the taboo walk. Because `h` is harmonic off `Z`, the probability that the
//! transformed walk started at `x` ever hits a finite set `A` is
//! `E_x[h(S_{τ(A∪Z)})] / h(x)` and, given that it does, the hitting point has
//! law proportional to `P_x[S_{τ(A∪Z)} = w] h(w)`. [`ReturnResolver`] uses
//! these identities so that walks need only be simulated step by step inside a
//! bounded region: leaving the region, the walk either returns to `A` at an
//! exactly sampled site or escapes for good.

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{Disk, Site, SiteSet};
use crate::potential::{HittingKernel, PotentialTable};

use super::{PathSegment, Truncation};

/// The taboo harmonic function `g_F`, vanishing exactly on `F ∪ {0}`.
pub struct Taboo<'a> {
    table: &'a PotentialTable,
    forbidden: SiteSet,
    hk: HittingKernel<'a, PotentialTable>,
    coef: Vec<f64>,
}

impl<'a> Taboo<'a> {
    pub fn new(table: &'a PotentialTable, forbidden: &SiteSet) -> Result<Self> {
        let mut zero = forbidden.clone();
        zero.insert(Site::ORIGIN);
        let hk = HittingKernel::new(table, &zero)?;
        let coef = hk.expectation_coefficients(|s| table.value(s));
        Ok(Taboo {
            table,
            forbidden: zero,
            hk,
            coef,
        })
    }

    /// `F ∪ {0}`.
    pub fn forbidden(&self) -> &SiteSet {
        &self.forbidden
    }

    pub fn value(&self, x: Site) -> f64 {
        if self.hk.contains(x) {
            return 0.0;
        }
        (self.table.value(x) - self.hk.expectation(&self.coef, x)).max(0.0)
    }

    /// Probability that `Ŝ` started at `x` never enters `F`.
    pub fn avoidance_probability(&self, x: Site) -> f64 {
        let a = self.table.value(x);
        if a <= 0.0 {
            return 0.0;
        }
        (self.value(x) / a).clamp(0.0, 1.0)
    }
}

/// Which h-transform drives a walk.
#[derive(Clone, Copy)]
pub enum Doob<'a> {
    /// `Ŝ`: conditioned never to hit the origin.
    Conditioned(&'a PotentialTable),
    /// `Ŝ` conditioned in addition never to enter a taboo set.
    Taboo(&'a Taboo<'a>),
}

impl<'a> Doob<'a> {
    #[inline]
    pub fn h(&self, x: Site) -> f64 {
        match self {
            Doob::Conditioned(t) => t.value(x),
            Doob::Taboo(t) => t.value(x),
        }
    }

    /// The set where `h` vanishes.
    pub fn zero_set(&self) -> SiteSet {
        match self {
            Doob::Conditioned(_) => SiteSet::singleton(Site::ORIGIN),
            Doob::Taboo(t) => t.forbidden.clone(),
        }
    }

    pub fn table(&self) -> &'a PotentialTable {
        match self {
            Doob::Conditioned(t) => t,
            Doob::Taboo(t) => t.table,
        }
    }

    /// One transformed step from `x`, with `h(x) > 0`.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, x: Site, rng: &mut R) -> Site {
        let nbrs = x.neighbors();
        let w = nbrs.map(|y| self.h(y));
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (k, wk) in w.iter().enumerate() {
            if u < *wk {
                return nbrs[k];
            }
            u -= wk;
        }
        // rounding: last neighbor with positive weight
        let k = (0..4).rev().find(|&k| w[k] > 0.0).unwrap_or(0);
        nbrs[k]
    }
}

/// Transition masses of `Ŝ` from `x` toward its neighbors in
/// [`STEPS`](crate::lattice::STEPS) order: `a(y) / (4 a(x))`.
pub fn conditioned_step_distribution(x: Site, table: &PotentialTable) -> Result<[f64; 4]> {
    if x == Site::ORIGIN {
        return Err(Error::UndefinedAtOrigin(x));
    }
    let ax = table.value(x);
    Ok(x.neighbors().map(|y| table.value(y) / (4.0 * ax)))
}

/// Step-by-step path of `Ŝ` (or of the taboo walk) from `start` until the
/// first site satisfying `stop`.
pub fn conditioned_path<R: Rng + ?Sized>(
    start: Site,
    mut stop: impl FnMut(Site) -> bool,
    table: &PotentialTable,
    taboo: Option<&Taboo<'_>>,
    rng: &mut R,
    budget: u64,
) -> Result<PathSegment> {
    let doob = match taboo {
        Some(t) => Doob::Taboo(t),
        None => Doob::Conditioned(table),
    };
    if doob.h(start) <= 0.0 {
        return Err(Error::invalid("start", format!("{start} is absorbing for this walk")));
    }
    let mut sites = vec![start];
    let mut cur = start;
    let mut steps = 0u64;
    while !stop(cur) {
        if steps == budget {
            return Err(Truncation {
                budget,
                partial: PathSegment::new(sites, 0),
            }
            .into());
        }
        cur = doob.step(cur, rng);
        sites.push(cur);
        steps += 1;
    }
    Ok(PathSegment::new(sites, 0))
}

/// Exact resolution of "does the transformed walk ever come back to `A`, and where".
pub struct ReturnResolver<'a> {
    doob: Doob<'a>,
    target: SiteSet,
    hk: HittingKernel<'a, PotentialTable>,
    /// `h` on the support of `hk`.
    h_support: Vec<f64>,
}

impl<'a> ReturnResolver<'a> {
    pub fn new(doob: Doob<'a>, target: &SiteSet) -> Result<Self> {
        let set = target.union(&doob.zero_set());
        let hk = HittingKernel::new(doob.table(), &set)?;
        let h_support = hk.support().iter().map(|&w| doob.h(w)).collect();
        Ok(ReturnResolver {
            doob,
            target: target.clone(),
            hk,
            h_support,
        })
    }

    pub fn target(&self) -> &SiteSet {
        &self.target
    }

    /// Unnormalized landing weights `P_x[S_τ = w] h(w)` over the support.
    fn landing_weights(&self, x: Site) -> Vec<f64> {
        self.hk
            .hitting_distribution(x)
            .iter()
            .zip(&self.h_support)
            .map(|(p, h)| p * h)
            .collect()
    }

    /// Probability that the walk started at `x` ever enters the target.
    pub fn return_probability(&self, x: Site) -> f64 {
        if self.target.contains(&x) {
            return 1.0;
        }
        let hx = self.doob.h(x);
        if hx <= 0.0 {
            return 0.0;
        }
        (self.landing_weights(x).iter().sum::<f64>() / hx).clamp(0.0, 1.0)
    }

    /// Law of the entrance site given that the target is entered.
    pub fn landing_law(&self, x: Site) -> Vec<(Site, f64)> {
        let w = self.landing_weights(x);
        let total: f64 = w.iter().sum();
        self.hk
            .support()
            .iter()
            .zip(w)
            .filter(|(_, p)| *p > 0.0)
            .map(|(&s, p)| (s, p / total))
            .collect()
    }

    /// Sample the entrance site, or `None` if the walk escapes to infinity.
    pub fn resolve<R: Rng + ?Sized>(&self, x: Site, rng: &mut R) -> Option<Site> {
        if self.target.contains(&x) {
            return Some(x);
        }
        let hx = self.doob.h(x);
        if hx <= 0.0 {
            return None;
        }
        let w = self.landing_weights(x);
        let mut u = rng.random::<f64>() * hx;
        for (k, wk) in w.iter().enumerate() {
            if u < *wk {
                return Some(self.hk.support()[k]);
            }
            u -= wk;
        }
        None
    }
}

/// How a [`ConditionedWalker`] run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WalkEnd {
    /// The stopping predicate fired at the last site of the last segment.
    Stopped,
    /// The walk left the region and will never return to the target.
    Escaped,
}

/// Result of a [`ConditionedWalker`] run: explicitly simulated segments
/// separated by resolved excursions outside the region, which never visit
/// the target.
#[derive(Clone, Debug)]
pub struct WalkRecord {
    pub segments: Vec<PathSegment>,
    pub end: WalkEnd,
}

impl WalkRecord {
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.segments.iter().flat_map(|s| s.sites.iter().copied())
    }

    /// Number of unsimulated gaps (resolved returns).
    pub fn gaps(&self) -> usize {
        self.segments.len().saturating_sub(1)
    }
}

/// Simulates a transformed walk step by step inside `region` and resolves
/// every exit from it exactly against a target set.
pub struct ConditionedWalker<'a> {
    doob: Doob<'a>,
    region: Disk,
    resolver: ReturnResolver<'a>,
    budget: u64,
}

impl<'a> ConditionedWalker<'a> {
    /// `target` must lie inside `region`.
    pub fn new(doob: Doob<'a>, region: Disk, target: &SiteSet, budget: u64) -> Result<Self> {
        if !target.iter().all(|&s| region.contains(s)) {
            return Err(Error::invalid("region", "target set is not inside the simulation region"));
        }
        Ok(ConditionedWalker {
            doob,
            region,
            resolver: ReturnResolver::new(doob, target)?,
            budget,
        })
    }

    pub fn region(&self) -> &Disk {
        &self.region
    }

    pub fn resolver(&self) -> &ReturnResolver<'a> {
        &self.resolver
    }

    pub fn doob(&self) -> Doob<'a> {
        self.doob
    }

    /// Walk from `start` until `stop` fires or the walk escapes.
    pub fn run<R: Rng + ?Sized>(
        &self,
        start: Site,
        mut stop: impl FnMut(Site) -> bool,
        rng: &mut R,
    ) -> Result<WalkRecord> {
        if self.doob.h(start) <= 0.0 {
            return Err(Error::invalid("start", format!("{start} is absorbing for this walk")));
        }
        let mut segments = Vec::new();
        let mut sites = vec![start];
        let mut clock = 0i64;
        let mut cur = start;
        let mut steps = 0u64;
        loop {
            if stop(cur) {
                segments.push(PathSegment::new(sites, clock));
                return Ok(WalkRecord {
                    segments,
                    end: WalkEnd::Stopped,
                });
            }
            if !self.region.contains(cur) {
                let seg_len = sites.len() as i64;
                segments.push(PathSegment::new(std::mem::take(&mut sites), clock));
                match self.resolver.resolve(cur, rng) {
                    None => {
                        return Ok(WalkRecord {
                            segments,
                            end: WalkEnd::Escaped,
                        })
                    }
                    Some(w) => {
                        clock += seg_len;
                        cur = w;
                        sites.push(w);
                        continue;
                    }
                }
            }
            if steps == self.budget {
                segments.push(PathSegment::new(sites, clock));
                let partial = PathSegment::new(segments.into_iter().flat_map(|s| s.sites).collect(), 0);
                return Err(Truncation {
                    budget: self.budget,
                    partial,
                }
                .into());
            }
            cur = self.doob.step(cur, rng);
            sites.push(cur);
            steps += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ball_sites, inner_boundary};
    use crate::rng::RngStream;
    use crate::stats::wilson_ci;

    fn table() -> std::sync::Arc<PotentialTable> {
        PotentialTable::shared()
    }

    #[test]
    fn step_distribution_examples() {
        let t = table();
        let p = conditioned_step_distribution(Site::new(1, 0), &t).unwrap();
        assert_eq!(p[1], 0.0, "mass toward the origin");
        let p = conditioned_step_distribution(Site::new(5, 3), &t).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let p = conditioned_step_distribution(Site::new(100, 0), &t).unwrap();
        // oracle: kernel ratios straight from the table
        let a = t.value(Site::new(100, 0));
        for (k, q) in p.iter().enumerate() {
            let y = Site::new(100, 0).step(k);
            assert!((q - t.value(y) / (4.0 * a)).abs() < 1e-15);
            assert!((q - 0.25).abs() < 0.01);
        }
        assert!(conditioned_step_distribution(Site::ORIGIN, &t).is_err());
    }

    #[test]
    fn paths_avoid_origin_and_are_nearest_neighbor() {
        let t = table();
        let mut rng = RngStream::new(11, 0).rng();
        let out = Disk::origin(6.0).unwrap();
        for _ in 0..500 {
            let p = conditioned_path(Site::new(1, 0), |x| !out.contains(x), &t, None, &mut rng, 1 << 24).unwrap();
            assert!(p.is_nearest_neighbor());
            assert!(!p.sites.contains(&Site::ORIGIN));
        }
    }

    #[test]
    fn deterministic_given_stream() {
        let t = table();
        let out = Disk::origin(10.0).unwrap();
        let run = || {
            let mut rng = RngStream::new(5, 9).rng();
            conditioned_path(Site::new(2, 1), |x| !out.contains(x), &t, None, &mut rng, 1 << 24).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn taboo_paths_never_enter_taboo_set() {
        let t = table();
        let f = ball_sites(&Disk::origin(2.0).unwrap());
        let taboo = Taboo::new(&t, &f).unwrap();
        let out = Disk::origin(12.0).unwrap();
        let mut rng = RngStream::new(12, 0).rng();
        let starts: Vec<Site> = inner_boundary(&ball_sites(&Disk::origin(3.0).unwrap()))
            .iter()
            .copied()
            .filter(|s| !f.contains(s))
            .collect();
        for i in 0..10_000 {
            let s = starts[i % starts.len()];
            let p = conditioned_path(s, |x| !out.contains(x), &t, Some(&taboo), &mut rng, 1 << 24).unwrap();
            assert!(p.sites.iter().all(|x| !f.contains(x)));
        }
    }

    #[test]
    fn taboo_function_is_harmonic_off_forbidden_set() {
        let t = table();
        let f = ball_sites(&Disk::new(Site::new(3, 0), 1.0).unwrap());
        let taboo = Taboo::new(&t, &f).unwrap();
        for x in -8..=8 {
            for y in -8..=8 {
                let s = Site::new(x, y);
                if taboo.forbidden().contains(&s) {
                    assert_eq!(taboo.value(s), 0.0);
                    continue;
                }
                let mean = s.neighbors().iter().map(|&n| taboo.value(n)).sum::<f64>() / 4.0;
                assert!((mean - taboo.value(s)).abs() < 1e-9, "{s}");
                assert!(taboo.value(s) > 0.0);
            }
        }
    }

    #[test]
    fn return_probability_matches_simulation() {
        // exact formula against brute-force walks to a far kill radius
        let t = table();
        let b = ball_sites(&Disk::new(Site::new(6, 0), 1.5).unwrap());
        let res = ReturnResolver::new(Doob::Conditioned(&t), &b).unwrap();
        let x = Site::new(12, 3);
        let exact = res.return_probability(x);
        let mut rng = RngStream::new(13, 0).rng();
        // two simulation radii: the fraction of hits left to exact resolution
        // differs, the hitting probability must not
        for radius in [20.0, 60.0] {
            let walker =
                ConditionedWalker::new(Doob::Conditioned(&t), Disk::origin(radius).unwrap(), &b, 1 << 30).unwrap();
            let reps = 4000;
            let mut hits = 0;
            for _ in 0..reps {
                let rec = walker.run(x, |s| b.contains(&s), &mut rng).unwrap();
                if rec.end == WalkEnd::Stopped {
                    hits += 1;
                }
            }
            let (lo, hi) = wilson_ci(hits, reps, 0.99).unwrap();
            assert!(lo <= exact && exact <= hi, "R={radius}: {exact} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn landing_law_sums_to_one_and_avoids_zero_set() {
        let t = table();
        let b = ball_sites(&Disk::new(Site::new(0, 5), 1.0).unwrap());
        let res = ReturnResolver::new(Doob::Conditioned(&t), &b).unwrap();
        let law = res.landing_law(Site::new(30, -20));
        let total: f64 = law.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(law.iter().all(|(s, _)| b.contains(s)));
    }

    #[test]
    fn hitting_probability_from_outer_disk() {
        // P_x[Ŝ hits B] for x on ∂B', B = B(x_s, s/ln²s), B' = B(x_s, e s/ln²s)
        let t = table();
        let mut prev = 0.0;
        for s in [64.0f64, 128.0, 256.0] {
            let ln = s.ln();
            let xs = Site::new(s as i32, 0);
            let r = s / (ln * ln);
            let b = ball_sites(&Disk::new(xs, r).unwrap());
            let outer = inner_boundary(&ball_sites(&Disk::new(xs, std::f64::consts::E * r).unwrap()));
            let res = ReturnResolver::new(Doob::Conditioned(&t), &b).unwrap();
            let p: f64 =
                outer.iter().map(|&x| res.return_probability(x)).sum::<f64>() / outer.len() as f64;
            let miss = 1.0 - p;
            assert!(miss > 0.3 / ln && miss < 3.0 / ln, "s={s}: miss {miss}");
            assert!(p > prev);
            prev = p;
        }
    }

    #[test]
    fn walker_respects_stop_and_escape() {
        let t = table();
        let b = ball_sites(&Disk::origin(2.0).unwrap());
        let walker = ConditionedWalker::new(Doob::Conditioned(&t), Disk::origin(8.0).unwrap(), &b, 1 << 30).unwrap();
        let mut rng = RngStream::new(14, 0).rng();
        let mut escaped = 0;
        for _ in 0..200 {
            let rec = walker.run(Site::new(1, 0), |_| false, &mut rng).unwrap();
            assert_eq!(rec.end, WalkEnd::Escaped);
            for seg in &rec.segments {
                assert!(seg.is_nearest_neighbor());
            }
            // each segment after a gap starts inside the target
            for seg in rec.segments.iter().skip(1) {
                assert!(b.contains(&seg.first().unwrap()));
            }
            escaped += 1;
        }
        assert_eq!(escaped, 200);
    }
}
