//! Excursions between concentric disks: the count thresholds `ψ_{n,β}` and
//! `t_{m,β}`, i.i.d. excursions from a given entrance law, coverage tracking,
//! the torus excursion-count experiment and square-grid disk packings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    ball_sites, inner_boundary, torus_embed, Disk, Mask, Site, SiteSet, TorusSpec,
};
use crate::potential::HarmonicMeasure;
use crate::rng::DirectionBits;
use crate::walks::{srw_path, Annulus, Excursion, PathSegment};

/// `ψ_{n,β} = 2 ln² n / ln γ − (1+β) ln n ln ln n / ln γ`.
pub fn psi(n: f64, beta: f64, gamma: f64) -> Result<f64> {
    if !(n > std::f64::consts::E) {
        return Err(Error::invalid("n", "must exceed e"));
    }
    if !(gamma > 1.0) {
        return Err(Error::invalid("gamma", "must exceed 1"));
    }
    if !beta.is_finite() {
        return Err(Error::invalid("beta", "must be finite"));
    }
    let l = n.ln();
    let lg = gamma.ln();
    Ok(2.0 * l * l / lg - (1.0 + beta) * l * l.ln() / lg)
}

/// `t_{m,β} = (4/π) m² ln² m − (1+β)(2/π) m² ln m ln ln m`.
pub fn t_threshold(m: f64, beta: f64) -> Result<f64> {
    if !(m > std::f64::consts::E) {
        return Err(Error::invalid("m", "must exceed e"));
    }
    if !beta.is_finite() {
        return Err(Error::invalid("beta", "must be finite"));
    }
    let l = m.ln();
    let pi = std::f64::consts::PI;
    Ok(4.0 / pi * m * m * l * l - (1.0 + beta) * 2.0 / pi * m * m * l * l.ln())
}

/// Torus side `⌊3γn⌋` used by the torus experiment.
pub fn torus_side(n: u32, gamma: f64) -> u32 {
    (3.0 * gamma * n as f64).floor() as u32
}

/// Which target sites a family of excursions has visited.
#[derive(Clone, Debug)]
pub struct CoverageState {
    target: SiteSet,
    mask: Mask,
    hit: Vec<bool>,
    uncovered: usize,
}

impl CoverageState {
    pub fn new(target: SiteSet) -> Self {
        let mask = Mask::new(&target);
        let n = target.len();
        CoverageState {
            target,
            mask,
            hit: vec![false; n],
            uncovered: n,
        }
    }

    #[inline]
    pub fn visit(&mut self, s: Site) {
        if let Some(i) = self.mask.index(s) {
            if !self.hit[i] {
                self.hit[i] = true;
                self.uncovered -= 1;
            }
        }
    }

    pub fn absorb(&mut self, e: &Excursion) {
        for &s in &e.path.sites {
            self.visit(s);
        }
    }

    pub fn target(&self) -> &SiteSet {
        &self.target
    }

    /// Visited target sites.
    pub fn visited(&self) -> SiteSet {
        self.target
            .iter()
            .zip(&self.hit)
            .filter(|(_, h)| **h)
            .map(|(s, _)| *s)
            .collect()
    }

    pub fn uncovered_count(&self) -> usize {
        self.uncovered
    }

    /// Every target site visited.
    pub fn complete(&self) -> bool {
        self.uncovered == 0
    }
}

/// Coverage of the sites of `disk` by the given excursions.
pub fn coverage_report(disk: &Disk, excursions: &[Excursion]) -> CoverageState {
    let mut state = CoverageState::new(ball_sites(disk));
    for e in excursions {
        state.absorb(e);
    }
    state
}

fn check_annulus(n: u32, gamma: f64) -> Result<(Disk, Disk)> {
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", "must exceed 1"));
    }
    let inner = Disk::origin(n as f64)?;
    let outer = Disk::origin(gamma * n as f64)?;
    if ball_sites(&outer).len() == ball_sites(&inner).len() {
        return Err(Error::invalid("gamma", "outer disk adds no sites"));
    }
    Ok((inner, outer))
}

/// Independent simple-random-walk excursions from `∂B(n)` to `∂B(γn)` with
/// entrance sites drawn from `entry`.
pub fn sample_iid_excursions<R: Rng + ?Sized>(
    n: u32,
    gamma: f64,
    count: usize,
    entry: &HarmonicMeasure,
    rng: &mut R,
    budget: u64,
) -> Result<Vec<Excursion>> {
    let (inner, outer) = check_annulus(n, gamma)?;
    let inner_b = inner_boundary(&ball_sites(&inner));
    if !entry.support().iter().all(|s| inner_b.contains(s)) {
        return Err(Error::invalid("entry", "measure is not supported on the inner boundary"));
    }
    let outer_b = Mask::new(&inner_boundary(&ball_sites(&outer)));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let start = entry.sample(rng);
        let path = srw_path(start, |s| outer_b.contains(s), rng, budget)?;
        let exit = path.last().expect("nonempty path");
        out.push(Excursion {
            path,
            entry: start,
            exit,
            annulus: Some(Annulus { inner, outer }),
        });
    }
    Ok(out)
}

/// Coverage of `B(n)` by `count` independent excursions, streamed without
/// storing the paths.
pub fn iid_coverage_trial<R: Rng + ?Sized>(
    n: u32,
    gamma: f64,
    count: usize,
    entry: &HarmonicMeasure,
    rng: &mut R,
    budget: u64,
) -> Result<CoverageState> {
    let (inner, outer) = check_annulus(n, gamma)?;
    let outer_b = Mask::new(&inner_boundary(&ball_sites(&outer)));
    let mut cov = CoverageState::new(ball_sites(&inner));
    for _ in 0..count {
        // same draw order as `sample_iid_excursions`
        let mut bits = DirectionBits::new();
        let mut cur = entry.sample(rng);
        let mut steps = 0u64;
        cov.visit(cur);
        while !outer_b.contains(cur) {
            if steps == budget {
                return Err(Error::Truncated {
                    budget,
                    partial_len: steps as usize + 1,
                });
            }
            cur = cur.step(bits.next(rng));
            cov.visit(cur);
            steps += 1;
        }
    }
    Ok(cov)
}

/// Outcome of one torus run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusExcursionRecord {
    pub n: u32,
    pub gamma: f64,
    pub beta: f64,
    pub m: u32,
    pub horizon: u64,
    /// Completed excursions up to the horizon.
    pub count: u64,
    /// `B(n)` fully visited by the completed excursions.
    pub covered: bool,
    pub uncovered_count: usize,
    /// Entrance sites (in `Z²` coordinates centered at the disk), if requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entries: Option<Vec<Site>>,
}

/// Simple random walk on `Z²_m`, `m = ⌊3γn⌋`, from a uniform site for
/// `⌊t_{m,β/3}⌋` steps; counts completed excursions between `∂B(n)` and
/// `∂B(γn)` (embedded at the torus center) and the coverage of `B(n)` by them.
pub fn torus_excursion_experiment<R: Rng + ?Sized>(
    n: u32,
    gamma: f64,
    beta: f64,
    rng: &mut R,
    collect_entries: bool,
) -> Result<TorusExcursionRecord> {
    if n < 8 {
        return Err(Error::invalid("n", "must be at least 8"));
    }
    let m = torus_side(n, gamma);
    let horizon = t_threshold(m as f64, beta / 3.0)?.floor().max(0.0) as u64;
    run_torus_excursions(n, gamma, m, horizon, rng, collect_entries).map(|mut r| {
        r.beta = beta;
        r
    })
}

const INNER_B: u8 = 1;
const OUTER_B: u8 = 2;

/// Torus run with explicit side and horizon; see [`torus_excursion_experiment`].
pub fn run_torus_excursions<R: Rng + ?Sized>(
    n: u32,
    gamma: f64,
    m: u32,
    horizon: u64,
    rng: &mut R,
    collect_entries: bool,
) -> Result<TorusExcursionRecord> {
    let (inner, outer) = check_annulus(n, gamma)?;
    let torus = TorusSpec::new(m)?;
    let emb = torus_embed(&outer, torus)?;
    let vol = torus.volume();
    let target = ball_sites(&inner);
    // per torus cell: boundary flags and target index (u32::MAX outside)
    let mut flags = vec![0u8; vol];
    for s in inner_boundary(&target).iter() {
        flags[torus.index(emb.map(*s))] |= INNER_B;
    }
    for s in inner_boundary(&ball_sites(&outer)).iter() {
        flags[torus.index(emb.map(*s))] |= OUTER_B;
    }
    let mut target_idx = vec![u32::MAX; vol];
    for (i, s) in target.iter().enumerate() {
        target_idx[torus.index(emb.map(*s))] = i as u32;
    }
    let mut hit = vec![false; target.len()];
    let mut uncovered = target.len();
    let mut pending: Vec<u32> = Vec::new();
    let mut entries = collect_entries.then(Vec::new);

    let start = torus.site(rng.random_range(0..vol));
    let mut bits = DirectionBits::new();
    let mut cur = start;
    let mut in_exc = false;
    let mut count = 0u64;
    let mut t = 0u64;
    loop {
        let idx = torus.index(cur);
        let f = flags[idx];
        if !in_exc && f & INNER_B != 0 {
            in_exc = true;
            pending.clear();
            if let Some(e) = entries.as_mut() {
                e.push(emb.unmap(cur));
            }
        }
        if in_exc {
            let ti = target_idx[idx];
            if ti != u32::MAX {
                pending.push(ti);
            }
            if f & OUTER_B != 0 {
                in_exc = false;
                count += 1;
                for &ti in &pending {
                    if !hit[ti as usize] {
                        hit[ti as usize] = true;
                        uncovered -= 1;
                    }
                }
            }
        }
        if t == horizon {
            break;
        }
        cur = torus.step(cur, bits.next(rng));
        t += 1;
    }
    if let (Some(e), true) = (entries.as_mut(), in_exc) {
        // the last entrance belongs to an unfinished excursion
        e.pop();
    }
    Ok(TorusExcursionRecord {
        n,
        gamma,
        beta: f64::NAN,
        m,
        horizon,
        count,
        covered: uncovered == 0,
        uncovered_count: uncovered,
        entries,
    })
}

/// Disks `B(x_j, γn/h)` with integer centers, pairwise disjoint and inside `B(n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackingLayout {
    pub n: u32,
    pub h: f64,
    pub gamma: f64,
    /// Radius `γ n / h` of the packed disks.
    pub radius: f64,
    pub spacing: u32,
    pub centers: Vec<Site>,
    pub diagnostic: Option<String>,
}

impl PackingLayout {
    /// `κ_h`.
    pub fn count(&self) -> usize {
        self.centers.len()
    }
}

/// Square-grid packing with spacing `⌈2γn/h⌉ + 1`; of the two grid offsets
/// (a center at the origin, or the origin at a cell corner) the one holding
/// more disks is returned.
pub fn disk_packing(n: u32, h: f64, gamma: f64) -> Result<PackingLayout> {
    if !(gamma > 1.0) {
        return Err(Error::invalid("gamma", "must exceed 1"));
    }
    if !(h > gamma) {
        return Err(Error::invalid("h", "must exceed gamma"));
    }
    let n_f = n as f64;
    let radius = gamma * n_f / h;
    let spacing = (2.0 * radius).ceil() as u32 + 1;
    if n_f / h < 1.0 {
        return Ok(PackingLayout {
            n,
            h,
            gamma,
            radius,
            spacing,
            centers: Vec::new(),
            diagnostic: Some(format!("degenerate: inner radius n/h = {:.3} < 1", n_f / h)),
        });
    }
    let fits = |c: Site| c.norm() + radius <= n_f;
    let grid = |offset: i64| -> Vec<Site> {
        let d = spacing as i64;
        let k = n as i64 / d + 2;
        let mut out = Vec::new();
        for i in -k..=k {
            for j in -k..=k {
                let (x, y) = (i * d + offset, j * d + offset);
                if x.abs() > n as i64 || y.abs() > n as i64 {
                    continue;
                }
                let c = Site::new(x as i32, y as i32);
                if fits(c) {
                    out.push(c);
                }
            }
        }
        out
    };
    let a = grid(0);
    let b = grid(spacing as i64 / 2);
    let centers = if b.len() > a.len() { b } else { a };
    let diagnostic = centers
        .is_empty()
        .then(|| format!("no disk of radius {radius:.3} fits inside B({n})"));
    Ok(PackingLayout {
        n,
        h,
        gamma,
        radius,
        spacing,
        centers,
        diagnostic,
    })
}

/// One record row of the torus experiment, for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcursionRow {
    pub n: u32,
    pub gamma: f64,
    pub beta: f64,
    pub replica: u64,
    pub count: u64,
    pub covered: bool,
    pub uncovered_count: usize,
}

/// The walk path of a completed excursion list, for replay.
pub fn excursion_paths(ex: &[Excursion]) -> Vec<PathSegment> {
    ex.iter().map(|e| e.path.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{conditional_harmonic_measure, harmonic_measure, PotentialTable};
    use crate::rng::RngStream;
    use crate::stats::{chi_square, chi_square_pooled};
    use crate::walks::{extract_excursions, torus_srw_path};
    use std::f64::consts::E;

    #[test]
    fn psi_examples() {
        let n = 10f64.exp();
        let v = psi(n, 1.0, E).unwrap();
        // direct arithmetic: 2·100 − 2·10·ln 10
        assert!((v - (200.0 - 20.0 * 10f64.ln())).abs() < 1e-9);
        assert!((v - 153.948).abs() < 1e-3);
        for beta in [0.0, 0.5, 1.0, 3.0] {
            let n = 500.0f64;
            let lhs = psi(n, beta, E).unwrap() + (1.0 + beta) * n.ln() * n.ln().ln();
            assert!((lhs - 2.0 * n.ln().powi(2)).abs() < 1e-9);
        }
        let vals: Vec<f64> = (3..=20).map(|k| psi((k as f64).exp(), 1.0, E).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        assert!(psi(2.0, 1.0, E).is_err());
        assert!(psi(100.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn t_threshold_examples() {
        let m = 261.0f64;
        let pi = std::f64::consts::PI;
        for beta in [0.0, 1.0 / 3.0, 1.0] {
            let t = t_threshold(m, beta).unwrap();
            let lhs = t * pi / (m * m) + (1.0 + beta) * 2.0 * m.ln() * m.ln().ln();
            assert!((lhs - 4.0 * m.ln().powi(2)).abs() < 1e-9);
        }
        let l = m.ln();
        let direct = 4.0 / pi * m * m * l * l - (4.0 / 3.0) * 2.0 / pi * m * m * l * l.ln();
        assert!((t_threshold(m, 1.0 / 3.0).unwrap() - direct).abs() < 1e-6);
        assert!(t_threshold(m, 1.0).unwrap() < t_threshold(m, 0.5).unwrap());
        assert!(t_threshold(2.0, 0.0).is_err());
    }

    #[test]
    fn coverage_basics() {
        let disk = Disk::origin(3.0).unwrap();
        let empty = coverage_report(&disk, &[]);
        assert!(!empty.complete());
        assert_eq!(empty.uncovered_count(), ball_sites(&disk).len());
        // a space-filling excursion: boustrophedon over the bounding square
        let mut sites = Vec::new();
        for y in -3..=3 {
            let row: Vec<i32> = if (y + 3) % 2 == 0 { (-3..=3).collect() } else { (-3..=3).rev().collect() };
            for x in row {
                sites.push(Site::new(x, y));
            }
        }
        let path = PathSegment::new(sites, 0);
        assert!(path.is_nearest_neighbor());
        let e = Excursion {
            entry: path.first().unwrap(),
            exit: path.last().unwrap(),
            path,
            annulus: None,
        };
        let full = coverage_report(&disk, &[e]);
        assert!(full.complete());
        assert_eq!(full.visited(), ball_sites(&disk));
    }

    #[test]
    fn uncovered_is_monotone_in_appended_excursions() {
        let table = PotentialTable::shared();
        let n = 8;
        let hm = harmonic_measure(&ball_sites(&Disk::origin(n as f64).unwrap()), &table).unwrap();
        let mut rng = RngStream::new(21, 0).rng();
        let ex = sample_iid_excursions(n, E, 30, &hm, &mut rng, 1 << 30).unwrap();
        let disk = Disk::origin(n as f64).unwrap();
        let mut prev = usize::MAX;
        for k in 0..=ex.len() {
            let c = coverage_report(&disk, &ex[..k]).uncovered_count();
            assert!(c <= prev);
            prev = c;
        }
        assert!(sample_iid_excursions(n, E, 0, &hm, &mut rng, 1).unwrap().is_empty());
    }

    #[test]
    fn iid_entry_histogram_matches_measure() {
        let table = PotentialTable::shared();
        let n = 16;
        let hm = harmonic_measure(&ball_sites(&Disk::origin(n as f64).unwrap()), &table).unwrap();
        let mut rng = RngStream::new(22, 0).rng();
        let mut counts = vec![0.0; hm.len()];
        for _ in 0..10_000 {
            let e = &sample_iid_excursions(n, E, 1, &hm, &mut rng, 1 << 30).unwrap()[0];
            counts[hm.support().iter().position(|&s| s == e.entry).unwrap()] += 1.0;
            assert!(e.path.is_nearest_neighbor());
        }
        assert!(chi_square(&counts, hm.weights()).unwrap() > 0.01);
    }

    #[test]
    fn streamed_trial_matches_explicit_excursions() {
        let table = PotentialTable::shared();
        let n = 10;
        let hm = harmonic_measure(&ball_sites(&Disk::origin(n as f64).unwrap()), &table).unwrap();
        let mut r1 = RngStream::new(23, 0).rng();
        let mut r2 = RngStream::new(23, 0).rng();
        let ex = sample_iid_excursions(n, E, 12, &hm, &mut r1, 1 << 30).unwrap();
        let a = coverage_report(&Disk::origin(n as f64).unwrap(), &ex);
        let b = iid_coverage_trial(n, E, 12, &hm, &mut r2, 1 << 30).unwrap();
        assert_eq!(a.target(), b.target());
        assert_eq!(a.visited(), b.visited());
    }

    #[test]
    fn torus_counts_match_path_extraction() {
        let n = 8;
        let gamma = E;
        let m = torus_side(n, gamma);
        let horizon = 200_000;
        let mut r1 = RngStream::new(24, 0).rng();
        let rec = run_torus_excursions(n, gamma, m, horizon, &mut r1, true).unwrap();
        let mut r2 = RngStream::new(24, 0).rng();
        let torus = TorusSpec::new(m).unwrap();
        let start = torus.site(r2.random_range(0..torus.volume()));
        let path = torus_srw_path(torus, start, horizon, &mut r2);
        let outer = Disk::origin(gamma * n as f64).unwrap();
        let emb = torus_embed(&outer, torus).unwrap();
        let a: SiteSet = ball_sites(&Disk::origin(n as f64).unwrap()).iter().map(|&s| emb.map(s)).collect();
        let ap: SiteSet = ball_sites(&outer).iter().map(|&s| emb.map(s)).collect();
        let ex = extract_excursions(&path, &a, &ap);
        assert_eq!(rec.count, ex.len() as u64);
        let entries: Vec<Site> = ex.iter().map(|e| emb.unmap(e.entry)).collect();
        assert_eq!(rec.entries.as_ref().unwrap(), &entries);
        let mut cov = CoverageState::new(a.clone());
        for e in &ex {
            cov.absorb(e);
        }
        assert_eq!(cov.uncovered_count(), rec.uncovered_count);
        assert!(rec.count > 0);
    }

    #[test]
    fn torus_entry_law_is_conditional_harmonic_measure() {
        let n = 16;
        let gamma = E;
        let mut rng = RngStream::new(25, 0).rng();
        let mut entries = Vec::new();
        let mut rep = 0;
        while entries.len() < 10_000 {
            let rec = torus_excursion_experiment(n, gamma, 1.0, &mut rng, true).unwrap();
            entries.extend(rec.entries.unwrap());
            rep += 1;
        }
        assert!(rep > 1);
        let b = ball_sites(&Disk::origin(n as f64).unwrap());
        let bp = ball_sites(&Disk::origin(gamma * n as f64).unwrap());
        let hm = conditional_harmonic_measure(&b, &bp, None).unwrap();
        let mut counts = vec![0.0; hm.len()];
        for s in &entries {
            counts[hm.support().iter().position(|x| x == s).unwrap()] += 1.0;
        }
        // consecutive entrances are dependent only through one excursion
        assert!(chi_square_pooled(&counts, hm.weights(), 5.0).unwrap() > 0.01);
    }

    #[test]
    fn torus_record_contract() {
        let mut rng = RngStream::new(26, 0).rng();
        let rec = torus_excursion_experiment(8, E, 1.0, &mut rng, false).unwrap();
        assert_eq!(rec.m, 65);
        assert!(rec.uncovered_count <= ball_sites(&Disk::origin(8.0).unwrap()).len());
        assert_eq!(rec.covered, rec.uncovered_count == 0);
        assert!(torus_excursion_experiment(4, E, 1.0, &mut rng, false).is_err());
    }

    #[test]
    fn packing_contract_and_order() {
        for h in [10.0, 20.0, 40.0] {
            let p = disk_packing(10_000, h, E).unwrap();
            let ratio = p.count() as f64 / (h * h);
            assert!((0.05..=0.8).contains(&ratio), "h={h}: {ratio}");
        }
        let p = disk_packing(60, 8.0, E).unwrap();
        let outer = Disk::origin(60.0).unwrap();
        let disks: Vec<SiteSet> = p
            .centers
            .iter()
            .map(|&c| ball_sites(&Disk::new(c, p.radius).unwrap()))
            .collect();
        for (i, d) in disks.iter().enumerate() {
            assert!(d.iter().all(|&s| outer.contains(s)));
            for e in &disks[i + 1..] {
                assert!(d.iter().all(|s| !e.contains(s)));
            }
        }
        let tiny = disk_packing(3, 100.0, E).unwrap();
        assert!(tiny.centers.is_empty() && tiny.diagnostic.is_some());
        assert!(disk_packing(100, 2.0, E).is_err());
    }
}
