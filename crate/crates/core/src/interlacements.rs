//! Two-dimensional random interlacements on finite windows.
//!
//! The trajectories of RI(α) that hit a finite set `K` form a Poisson
//! collection of size `ξ_K ∼ Poisson(πα cap({0} ∪ K))`. Parameterized at its
//! first entrance `x` into `K`, each one is: the entrance `x`, distributed as
//! the harmonic measure of `{0} ∪ K` for the conditioned walk; the future,
//! a conditioned walk `Ŝ` from `x`; and the past, read backwards, a walk
//! conditioned in addition never to enter `K`.
//!
//! The future is simulated step by step inside a finite kill region and every
//! exit from the region is resolved exactly (escape, or the site of the next
//! visit to `K`), so the configuration on `K` carries no truncation bias. The
//! past never visits `K`; it is kept until it first leaves the region.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ball_sites, Disk, Mask, Site, SiteSet};
use crate::potential::{capacity, conditioned_harmonic_measure, HarmonicMeasure, PotentialTable};
use crate::walks::{conditioned_path, ConditionedWalker, Doob, PathSegment, Taboo, DEFAULT_STEP_BUDGET};

/// A doubly infinite trajectory known through finitely many time-ordered
/// pieces; between consecutive pieces the trajectory was not simulated, and
/// it continues unobserved before the first and after the last piece.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub pieces: Vec<PathSegment>,
}

impl Trajectory {
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.pieces.iter().flat_map(|p| p.sites.iter().copied())
    }

    pub fn intersects(&self, k: &SiteSet) -> bool {
        self.sites().any(|s| k.contains(&s))
    }
}

/// A trajectory of `σ_K`, with its first entrance into `K` at time 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleTrajectory {
    pub path: Trajectory,
    /// Time of the first visit to `K` (always 0).
    pub tau_minus: i64,
    /// Time of the last visit to `K`, on the clock of the simulated pieces.
    pub tau_plus: i64,
    /// Largest `‖ρ(m)‖` over the inner part `τ⁻ ≤ m ≤ τ⁺`.
    pub d_k: f64,
    /// The inner part left the kill region at least once, so `d_k` is only
    /// a lower bound (the true value exceeds the distance to the region's edge).
    pub censored: bool,
}

/// The trajectories of RI(α) that hit `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingBundle {
    pub k: SiteSet,
    pub alpha: f64,
    pub trajectories: Vec<BundleTrajectory>,
}

impl HittingBundle {
    pub fn xi_k(&self) -> usize {
        self.trajectories.len()
    }

    /// `D_K`; zero for an empty bundle.
    pub fn d_k(&self) -> f64 {
        self.trajectories.iter().map(|t| t.d_k).fold(0.0, f64::max)
    }

    pub fn censored(&self) -> bool {
        self.trajectories.iter().any(|t| t.censored)
    }

    pub fn paths(&self) -> Vec<Trajectory> {
        self.trajectories.iter().map(|t| t.path.clone()).collect()
    }
}

/// Samples [`HittingBundle`]s for a fixed `K`, `α` and kill region; the
/// potential-theoretic set-up is done once.
pub struct BundleSampler<'a> {
    table: &'a PotentialTable,
    k: SiteSet,
    alpha: f64,
    rate: f64,
    entrance: Option<HarmonicMeasure>,
    forward: Option<ConditionedWalker<'a>>,
    taboo: Option<Taboo<'a>>,
    region: Disk,
}

impl<'a> BundleSampler<'a> {
    /// `region` is the kill region; it must contain `K`.
    pub fn new(table: &'a PotentialTable, k: &SiteSet, alpha: f64, region: Disk) -> Result<Self> {
        if k.is_empty() {
            return Err(Error::invalid("K", "empty set"));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::invalid("alpha", format!("{alpha} is not a finite nonnegative rate")));
        }
        if !k.iter().all(|&s| region.contains(s)) {
            return Err(Error::invalid("kill_radius", "K is not inside the kill region"));
        }
        let mut rooted = k.clone();
        rooted.insert(Site::ORIGIN);
        let trivial = rooted.len() == 1;
        let rate = if trivial {
            0.0
        } else {
            std::f64::consts::PI * alpha * capacity(&rooted, table)?
        };
        let (entrance, forward, taboo) = if trivial {
            (None, None, None)
        } else {
            (
                Some(conditioned_harmonic_measure(&rooted, table)?),
                Some(ConditionedWalker::new(
                    Doob::Conditioned(table),
                    region,
                    k,
                    DEFAULT_STEP_BUDGET,
                )?),
                Some(Taboo::new(table, k)?),
            )
        };
        Ok(BundleSampler {
            table,
            k: k.clone(),
            alpha,
            rate,
            entrance,
            forward,
            taboo,
            region,
        })
    }

    /// Poisson rate `πα cap({0} ∪ K)` of `ξ_K`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn k(&self) -> &SiteSet {
        &self.k
    }

    pub fn region(&self) -> &Disk {
        &self.region
    }

    /// Entrance law into `K` (absent when `K ⊆ {0}`).
    pub fn entrance(&self) -> Option<&HarmonicMeasure> {
        self.entrance.as_ref()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<HittingBundle> {
        let xi = if self.rate > 0.0 {
            Poisson::new(self.rate).expect("positive rate").sample(rng) as usize
        } else {
            0
        };
        let mut trajectories = Vec::with_capacity(xi);
        for id in 0..xi {
            trajectories.push(self.sample_trajectory(id, rng)?);
        }
        Ok(HittingBundle {
            k: self.k.clone(),
            alpha: self.alpha,
            trajectories,
        })
    }

    /// One trajectory of `σ_K`, labelled `id`.
    pub fn sample_trajectory<R: Rng + ?Sized>(&self, id: usize, rng: &mut R) -> Result<BundleTrajectory> {
        let (entrance, forward, taboo) = match (&self.entrance, &self.forward, &self.taboo) {
            (Some(e), Some(f), Some(t)) => (e, f, t),
            _ => return Err(Error::invalid("K", "K ⊆ {0} is never hit")),
        };
        let x = entrance.sample(rng);
        let fwd = forward.run(x, |_| false, rng)?;

        // inner part: from the entrance to the last visit of K
        let mut last = (0usize, 0usize);
        for (j, seg) in fwd.segments.iter().enumerate() {
            for (i, s) in seg.sites.iter().enumerate() {
                if self.k.contains(s) {
                    last = (j, i);
                }
            }
        }
        let tau_plus = fwd.segments[last.0].time(last.1);
        let mut d_k: f64 = 0.0;
        for (j, seg) in fwd.segments.iter().enumerate().take(last.0 + 1) {
            let end = if j == last.0 { last.1 + 1 } else { seg.len() };
            for s in &seg.sites[..end] {
                d_k = d_k.max(s.norm());
            }
        }
        let censored = last.0 > 0;

        // past, read backwards from the site preceding the entrance
        let y = Doob::Taboo(taboo).step(x, rng);
        let back = conditioned_path(
            y,
            |s| !self.region.contains(s),
            self.table,
            Some(taboo),
            rng,
            DEFAULT_STEP_BUDGET,
        )?;
        let mut past = back.sites;
        past.reverse();
        let past_clock = -(past.len() as i64);
        let mut pieces = vec![PathSegment::new(past, past_clock)];
        pieces.extend(fwd.segments);
        Ok(BundleTrajectory {
            path: Trajectory { id, pieces },
            tau_minus: 0,
            tau_plus,
            d_k,
            censored,
        })
    }
}

/// Convenience wrapper around [`BundleSampler`].
pub fn sample_hitting_bundle<R: Rng + ?Sized>(
    table: &PotentialTable,
    k: &SiteSet,
    alpha: f64,
    region: Disk,
    rng: &mut R,
) -> Result<HittingBundle> {
    BundleSampler::new(table, k, alpha, region)?.sample(rng)
}

/// Split trajectories into those avoiding `K` (`θ_K`) and those hitting it (`σ_K`).
pub fn decompose(trajectories: &[Trajectory], k: &SiteSet) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let mask = Mask::new(k);
    trajectories
        .iter()
        .cloned()
        .partition(|t| !t.sites().any(|s| mask.contains(s)))
}

/// A maximal run of a trajectory inside a host set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Noodle {
    pub trajectory: usize,
    /// Time index of the first site.
    pub start: i64,
    pub sites: Vec<Site>,
    /// The run may extend before its first site (it begins a simulated piece).
    pub open_start: bool,
    /// The run may extend after its last site (it ends a simulated piece).
    pub open_end: bool,
}

impl Noodle {
    /// Indexed by all of `Z` as far as the record can tell.
    pub fn two_sided(&self) -> bool {
        self.open_start && self.open_end
    }
}

/// Multiset of noodles on a host set, stored in canonical order
/// (trajectory id, then start time). Equality ignores labels and order.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NoodleConfig {
    pub noodles: Vec<Noodle>,
}

impl NoodleConfig {
    pub fn len(&self) -> usize {
        self.noodles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noodles.is_empty()
    }

    /// Canonical unlabeled form used for equality.
    fn shapes(&self) -> Vec<(&[Site], bool, bool)> {
        let mut v: Vec<_> = self
            .noodles
            .iter()
            .map(|n| (n.sites.as_slice(), n.open_start, n.open_end))
            .collect();
        v.sort();
        v
    }

    /// Occupied sites of the host.
    pub fn occupied(&self) -> SiteSet {
        self.noodles.iter().flat_map(|n| n.sites.iter().copied()).collect()
    }

    /// Number of visits to each occupied site.
    pub fn local_times(&self) -> BTreeMap<Site, u64> {
        let mut lt = BTreeMap::new();
        for s in self.noodles.iter().flat_map(|n| &n.sites) {
            *lt.entry(*s).or_insert(0) += 1;
        }
        lt
    }

    /// One row per noodle for serialization.
    pub fn rows(&self) -> Vec<NoodleRow> {
        self.noodles
            .iter()
            .map(|n| NoodleRow {
                trajectory: n.trajectory,
                start: n.start,
                sites: n
                    .sites
                    .iter()
                    .map(|s| format!("{}:{}", s.x, s.y))
                    .collect::<Vec<_>>()
                    .join(";"),
                two_sided: n.two_sided(),
            })
            .collect()
    }
}

impl PartialEq for NoodleConfig {
    fn eq(&self, other: &Self) -> bool {
        self.shapes() == other.shapes()
    }
}

/// Flat serialization record of a noodle; sites are `x:y` joined by `;`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoodleRow {
    pub trajectory: usize,
    pub start: i64,
    pub sites: String,
    pub two_sided: bool,
}

/// Maximal runs inside the host (given as a membership predicate) of every
/// trajectory.
pub fn noodle_config_by(trajectories: &[Trajectory], in_host: impl Fn(Site) -> bool) -> NoodleConfig {
    let mut noodles = Vec::new();
    for t in trajectories {
        for piece in &t.pieces {
            let mut run: Option<Noodle> = None;
            for (i, &s) in piece.sites.iter().enumerate() {
                if in_host(s) {
                    match run.as_mut() {
                        Some(n) => n.sites.push(s),
                        None => {
                            run = Some(Noodle {
                                trajectory: t.id,
                                start: piece.time(i),
                                sites: vec![s],
                                open_start: i == 0,
                                open_end: false,
                            })
                        }
                    }
                } else if let Some(n) = run.take() {
                    noodles.push(n);
                }
            }
            if let Some(mut n) = run.take() {
                n.open_end = true;
                noodles.push(n);
            }
        }
    }
    noodles.sort_by(|a, b| (a.trajectory, a.start).cmp(&(b.trajectory, b.start)));
    NoodleConfig { noodles }
}

/// Noodle configuration on a finite host set.
pub fn noodle_config(trajectories: &[Trajectory], host: &SiteSet) -> NoodleConfig {
    let mask = Mask::new(host);
    noodle_config_by(trajectories, |s| mask.contains(s))
}

/// Direct visit counts of the trajectories to the host.
pub fn visit_counts(trajectories: &[Trajectory], host: &SiteSet) -> BTreeMap<Site, u64> {
    let mask = Mask::new(host);
    let mut lt = BTreeMap::new();
    for s in trajectories.iter().flat_map(|t| t.sites()) {
        if mask.contains(s) {
            *lt.entry(s).or_insert(0) += 1;
        }
    }
    lt
}

/// Vacant set of a window together with the bundle that produced it.
#[derive(Clone, Debug)]
pub struct VacantSample {
    pub window: SiteSet,
    pub bundle: HittingBundle,
    pub vacant: SiteSet,
}

impl VacantSample {
    pub fn occupied(&self) -> SiteSet {
        self.window.difference(&self.vacant)
    }
}

/// Window minus the sites visited by the bundle.
pub fn vacant_of(window: &SiteSet, bundle: &HittingBundle) -> SiteSet {
    let occupied = noodle_config(&bundle.paths(), window).occupied();
    window.difference(&occupied)
}

/// Samples the vacant set of RI(α) on a disk window.
pub struct VacantSampler<'a> {
    window: SiteSet,
    bundles: BundleSampler<'a>,
}

impl<'a> VacantSampler<'a> {
    /// The kill region is the disk of radius `kill_radius` around the window
    /// center; it must exceed the window radius.
    pub fn new(table: &'a PotentialTable, window: &Disk, alpha: f64, kill_radius: f64) -> Result<Self> {
        if !(kill_radius > window.radius) {
            return Err(Error::invalid("kill_radius", "must exceed the window radius"));
        }
        let sites = ball_sites(window);
        let region = Disk::new(window.center, kill_radius)?;
        Ok(VacantSampler {
            bundles: BundleSampler::new(table, &sites, alpha, region)?,
            window: sites,
        })
    }

    pub fn window(&self) -> &SiteSet {
        &self.window
    }

    pub fn bundles(&self) -> &BundleSampler<'a> {
        &self.bundles
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<VacantSample> {
        let bundle = self.bundles.sample(rng)?;
        Ok(VacantSample {
            vacant: vacant_of(&self.window, &bundle),
            window: self.window.clone(),
            bundle,
        })
    }
}

/// Convenience wrapper around [`VacantSampler`].
pub fn vacant_set_window<R: Rng + ?Sized>(
    table: &PotentialTable,
    window: &Disk,
    alpha: f64,
    kill_radius: f64,
    rng: &mut R,
) -> Result<SiteSet> {
    Ok(VacantSampler::new(table, window, alpha, kill_radius)?.sample(rng)?.vacant)
}

/// Keep each trajectory independently with probability `α'/α`: a bundle at
/// level `α'` coupled below the input.
pub fn alpha_thinning<R: Rng + ?Sized>(bundle: &HittingBundle, alpha: f64, rng: &mut R) -> Result<HittingBundle> {
    let ratio = alpha / bundle.alpha;
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid("alpha", format!("ratio {ratio} is outside (0, 1]")));
    }
    let trajectories = bundle
        .trajectories
        .iter()
        .filter(|_| ratio == 1.0 || rng.random::<f64>() < ratio)
        .cloned()
        .collect();
    Ok(HittingBundle {
        k: bundle.k.clone(),
        alpha,
        trajectories,
    })
}

/// Per-replica record of the vacant-set experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VacantRow {
    pub s: f64,
    pub alpha: f64,
    pub replica: u64,
    pub vacant_nonempty: bool,
    pub vacant_count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::stats::{chi_square_pooled, scale_ball};
    use proptest::prelude::*;
    use statrs::distribution::{Discrete, Poisson as PoissonLaw};

    fn table() -> std::sync::Arc<PotentialTable> {
        PotentialTable::shared()
    }

    fn seg(sites: &[(i32, i32)], clock: i64) -> PathSegment {
        PathSegment::new(sites.iter().map(|&(x, y)| Site::new(x, y)).collect(), clock)
    }

    fn xi_law_p(k: &SiteSet, region: f64, seed: u64) -> f64 {
        let t = table();
        let sampler = BundleSampler::new(&t, k, 1.0, Disk::origin(region).unwrap()).unwrap();
        let law = PoissonLaw::new(sampler.rate()).unwrap();
        let mut counts = vec![0.0; 64];
        for rep in 0..10_000u64 {
            let b = sampler.sample(&mut RngStream::new(seed, rep).rng()).unwrap();
            counts[b.xi_k().min(63)] += 1.0;
            for tr in &b.trajectories {
                assert!(tr.path.intersects(k));
                assert!(tr.tau_minus <= tr.tau_plus);
                assert!(tr.d_k >= k.iter().map(|s| s.norm()).fold(f64::INFINITY, f64::min));
            }
        }
        let expected: Vec<f64> = (0..64u64).map(|j| law.pmf(j)).collect();
        chi_square_pooled(&counts, &expected, 5.0).unwrap()
    }

    #[test]
    fn origin_alone_is_never_hit() {
        let t = table();
        let k = SiteSet::singleton(Site::ORIGIN);
        let s = BundleSampler::new(&t, &k, 1.0, Disk::origin(5.0).unwrap()).unwrap();
        assert_eq!(s.rate(), 0.0);
        let mut rng = RngStream::new(1, 0).rng();
        for _ in 0..100 {
            assert_eq!(s.sample(&mut rng).unwrap().xi_k(), 0);
        }
    }

    #[test]
    fn xi_law_for_small_ball() {
        let k = ball_sites(&Disk::origin(2.0).unwrap());
        assert!(xi_law_p(&k, 8.0, 2) > 0.01);
    }

    #[test]
    fn xi_law_for_two_points() {
        let k: SiteSet = [Site::ORIGIN, Site::new(10, 0)].into_iter().collect();
        assert!(xi_law_p(&k, 20.0, 3) > 0.01);
    }

    #[test]
    fn trajectories_are_consistent() {
        let t = table();
        let k = ball_sites(&Disk::new(Site::new(12, 0), 2.0).unwrap());
        let region = Disk::new(Site::new(12, 0), 8.0).unwrap();
        let sampler = BundleSampler::new(&t, &k, 2.0, region).unwrap();
        let mut rng = RngStream::new(4, 0).rng();
        for _ in 0..200 {
            let b = sampler.sample(&mut rng).unwrap();
            for tr in &b.trajectories {
                let p = &tr.path.pieces;
                // the past never visits K and ends next to the entrance
                assert!(!p[0].sites.iter().any(|s| k.contains(s)));
                assert!(p[0].last().unwrap().is_neighbor(p[1].sites[0]));
                assert_eq!(p[1].clock, 0);
                assert!(k.contains(&p[1].sites[0]));
                for piece in p {
                    assert!(piece.is_nearest_neighbor());
                    assert!(!piece.sites.contains(&Site::ORIGIN));
                }
                // clocks increase along the pieces
                assert!(p.windows(2).all(|w| w[0].time(w[0].len() - 1) < w[1].clock));
                if !tr.censored {
                    let inner = p[1].sites[..=tr.tau_plus as usize].iter();
                    let d = inner.map(|s| s.norm()).fold(0.0, f64::max);
                    assert_eq!(d, tr.d_k);
                }
            }
        }
    }

    #[test]
    fn partition_identity_and_disjoint_case() {
        let a = Trajectory {
            id: 0,
            pieces: vec![seg(&[(5, 0), (6, 0), (7, 0)], 0)],
        };
        let b = Trajectory {
            id: 1,
            pieces: vec![seg(&[(0, 5), (0, 6)], 0)],
        };
        let k = SiteSet::singleton(Site::new(6, 0));
        let (theta, sigma) = decompose(&[a.clone(), b.clone()], &k);
        assert_eq!(theta, vec![b.clone()]);
        assert_eq!(sigma, vec![a.clone()]);
        let (theta, sigma) = decompose(&[b.clone()], &k);
        assert!(sigma.is_empty());
        assert_eq!(theta.len(), 1);
    }

    #[test]
    fn theta_is_independent_of_xi() {
        let t = table();
        let w = ball_sites(&Disk::origin(6.0).unwrap());
        let k = ball_sites(&Disk::origin(3.0).unwrap());
        let sampler = BundleSampler::new(&t, &w, 1.0, Disk::origin(12.0).unwrap()).unwrap();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for rep in 0..10_000u64 {
            let b = sampler.sample(&mut RngStream::new(5, rep).rng()).unwrap();
            let (theta, sigma) = decompose(&b.paths(), &k);
            xs.push(sigma.len() as f64);
            // window statistic of θ_K: sites of W it occupies
            ys.push(noodle_config(&theta, &w).occupied().len() as f64);
        }
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 0.05, "corr {corr}");
    }

    #[test]
    fn noodle_fixture_entering_twice() {
        let host: SiteSet = (0..3).map(|x| Site::new(x, 0)).collect();
        let t = Trajectory {
            id: 7,
            pieces: vec![seg(&[(-2, 0), (-1, 0), (0, 0), (1, 0), (1, 1), (2, 1), (2, 0), (3, 0)], -3)],
        };
        let outside = Trajectory {
            id: 8,
            pieces: vec![seg(&[(5, 5), (5, 6)], 0)],
        };
        let cfg = noodle_config(&[t, outside], &host);
        assert_eq!(cfg.len(), 2);
        let n0 = &cfg.noodles[0];
        assert_eq!(n0.sites, vec![Site::new(0, 0), Site::new(1, 0)]);
        assert_eq!(n0.start, -1);
        let n1 = &cfg.noodles[1];
        assert_eq!(n1.sites, vec![Site::new(2, 0)]);
        assert_eq!(n1.start, 3);
        assert!(cfg.noodles.iter().all(|n| !n.two_sided()));
        let rows = cfg.rows();
        assert_eq!(rows[0].sites, "0:0;1:0");
        assert_eq!(rows[1].trajectory, 7);
    }

    #[test]
    fn config_equality_ignores_labels_and_order() {
        let host: SiteSet = (0..3).map(|x| Site::new(x, 0)).collect();
        let a = Trajectory {
            id: 0,
            pieces: vec![seg(&[(-1, 0), (0, 0), (-1, 0)], 0)],
        };
        let b = Trajectory {
            id: 1,
            pieces: vec![seg(&[(3, 0), (2, 0), (3, 0)], 10)],
        };
        let mut b2 = b.clone();
        b2.id = 0;
        let mut a2 = a.clone();
        a2.id = 1;
        assert_eq!(noodle_config(&[a, b], &host), noodle_config(&[b2, a2], &host));
    }

    #[test]
    fn noodles_on_sampled_windows() {
        let t = table();
        let window = Disk::new(Site::new(20, 5), 3.0).unwrap();
        let sampler = VacantSampler::new(&t, &window, 1.5, 9.0).unwrap();
        let host = sampler.window().clone();
        let mask = Mask::new(&host);
        let mut rng = RngStream::new(6, 0).rng();
        for _ in 0..300 {
            let vs = sampler.sample(&mut rng).unwrap();
            let paths = vs.bundle.paths();
            let cfg = noodle_config(&paths, &host);
            assert_eq!(cfg.local_times(), visit_counts(&paths, &host));
            for n in &cfg.noodles {
                assert!(n.sites.iter().all(|&s| mask.contains(s)));
                let outside = |s: Site| s.neighbors().iter().any(|&y| !mask.contains(y));
                if !n.open_start {
                    assert!(outside(n.sites[0]));
                }
                if !n.open_end {
                    assert!(outside(*n.sites.last().unwrap()));
                }
            }
            let occ = vs.occupied();
            assert_eq!(occ.union(&vs.vacant), host);
            assert!(occ.difference(&vs.vacant) == occ);
        }
    }

    #[test]
    fn single_site_vacancy_matches_capacity_formula() {
        // P[y ∈ V^α] = exp(−πα cap({0, y})) and cap({0, y}) = a(y)/2
        let t = table();
        let window = Disk::new(Site::new(10, 0), 2.0).unwrap();
        let sampler = VacantSampler::new(&t, &window, 0.25, 7.0).unwrap();
        let reps = 10_000u64;
        for y in [Site::new(10, 0), Site::new(12, 0), Site::new(9, 1)] {
            let exact = (-std::f64::consts::PI * 0.25 * t.value(y) / 2.0).exp();
            let hits = (0..reps)
                .filter(|&rep| {
                    let vs = sampler.sample(&mut RngStream::new(10, rep).rng()).unwrap();
                    vs.vacant.contains(&y)
                })
                .count() as u64;
            let (lo, hi) = crate::stats::wilson_ci(hits, reps, 0.99).unwrap();
            assert!(lo <= exact && exact <= hi, "{y}: {lo}..{hi} vs {exact}");
        }
    }

    #[test]
    fn zero_level_leaves_window_vacant() {
        let t = table();
        let window = Disk::new(Site::new(10, 0), 2.0).unwrap();
        let v = vacant_set_window(&t, &window, 0.0, 6.0, &mut RngStream::new(7, 0).rng()).unwrap();
        assert_eq!(v, ball_sites(&window));
    }

    #[test]
    fn thinning_mean_and_nestedness() {
        let t = table();
        let window = Disk::new(Site::new(16, 0), 2.0).unwrap();
        let sampler = VacantSampler::new(&t, &window, 2.0, 6.0).unwrap();
        let mut rng = RngStream::new(8, 0).rng();
        let (mut kept, mut total) = (0usize, 0usize);
        let reps = 10_000;
        for _ in 0..reps {
            let vs = sampler.sample(&mut rng).unwrap();
            let same = alpha_thinning(&vs.bundle, 2.0, &mut rng).unwrap();
            assert_eq!(same, vs.bundle);
            let b1 = alpha_thinning(&vs.bundle, 1.0, &mut rng).unwrap();
            let b05 = alpha_thinning(&b1, 0.5, &mut rng).unwrap();
            total += vs.bundle.xi_k();
            kept += b1.xi_k();
            let v2 = vs.vacant.clone();
            let v1 = vacant_of(sampler.window(), &b1);
            let v05 = vacant_of(sampler.window(), &b05);
            assert!(v2.is_subset(&v1) && v1.is_subset(&v05));
        }
        // binomial thinning: given the totals, kept − total/2 has variance total/4
        let mean_total = total as f64 / reps as f64;
        let mean_kept = kept as f64 / reps as f64;
        let sd = (mean_total / 4.0 / reps as f64).sqrt();
        assert!((mean_kept - mean_total / 2.0).abs() < 3.0 * sd, "{mean_kept} vs {mean_total}");
        assert!(alpha_thinning(&sampler.sample(&mut rng).unwrap().bundle, 3.0, &mut rng).is_err());
    }

    #[test]
    fn vacant_window_far_from_origin() {
        let t = table();
        let window = scale_ball(64.0).unwrap();
        let v = vacant_set_window(&t, &window, 1.0, 4.0 * window.radius, &mut RngStream::new(9, 0).rng());
        assert!(v.unwrap().is_subset(&ball_sites(&window)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn local_times_are_reconstructed(steps in proptest::collection::vec(0usize..4, 0..200), r in 1.0f64..4.0) {
            let mut s = Site::ORIGIN;
            let mut sites = vec![s];
            for d in steps {
                s = s.step(d);
                sites.push(s);
            }
            let host = ball_sites(&Disk::origin(r).unwrap());
            let t = Trajectory { id: 0, pieces: vec![PathSegment::new(sites, 0)] };
            let cfg = noodle_config(std::slice::from_ref(&t), &host);
            prop_assert_eq!(cfg.local_times(), visit_counts(&[t], &host));
        }
    }
}
