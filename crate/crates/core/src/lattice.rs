//! Geometry of Z² and of the torus Z²/mZ².

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of Z². Ordered lexicographically by `(x, y)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site {
    pub x: i32,
    pub y: i32,
}

/// Unit steps in the fixed order used by every sampler: +x, -x, +y, -y.
pub const STEPS: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

impl Site {
    pub const ORIGIN: Site = Site { x: 0, y: 0 };

    #[inline]
    pub const fn new(x: i32, y: i32) -> Self {
        Site { x, y }
    }

    #[inline]
    pub fn norm2(self) -> i64 {
        let (x, y) = (self.x as i64, self.y as i64);
        x * x + y * y
    }

    #[inline]
    pub fn norm(self) -> f64 {
        (self.norm2() as f64).sqrt()
    }

    #[inline]
    pub fn dist2(self, other: Site) -> i64 {
        (self - other).norm2()
    }

    #[inline]
    pub fn step(self, dir: usize) -> Site {
        let (dx, dy) = STEPS[dir];
        Site::new(self.x + dx, self.y + dy)
    }

    #[inline]
    pub fn neighbors(self) -> [Site; 4] {
        [self.step(0), self.step(1), self.step(2), self.step(3)]
    }

    #[inline]
    pub fn is_neighbor(self, other: Site) -> bool {
        (self.x - other.x).abs() + (self.y - other.y).abs() == 1
    }

    /// Index `n` of the shell Λ_n = {n-1 < ‖x‖ ≤ n} containing this site; 0 for the origin.
    pub fn shell_index(self) -> u32 {
        ceil_sqrt(self.norm2()) as u32
    }
}

impl std::ops::Add for Site {
    type Output = Site;
    fn add(self, o: Site) -> Site {
        Site::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Site {
    type Output = Site;
    fn sub(self, o: Site) -> Site {
        Site::new(self.x - o.x, self.y - o.y)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Smallest integer `n ≥ 0` with `n² ≥ v`.
pub(crate) fn ceil_sqrt(v: i64) -> i64 {
    if v <= 0 {
        return 0;
    }
    let mut n = (v as f64).sqrt() as i64;
    while n * n < v {
        n += 1;
    }
    while n > 0 && (n - 1) * (n - 1) >= v {
        n -= 1;
    }
    n
}

/// Largest integer `n ≥ 0` with `n² ≤ v`.
pub(crate) fn floor_sqrt(v: i64) -> i64 {
    if v <= 0 {
        return 0;
    }
    let mut n = (v as f64).sqrt() as i64;
    while n * n > v {
        n -= 1;
    }
    while (n + 1) * (n + 1) <= v {
        n += 1;
    }
    n
}

/// Euclidean disk B(center, radius) = {y : ‖y − center‖ ≤ radius}.
///
/// Membership compares integer squared distances against `⌊radius² + 1e-9⌋`,
/// so radii such as `√k` computed in floating point include the sites at
/// squared distance exactly `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Site,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: Site, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::invalid("radius", format!("{radius} is not a finite nonnegative real")));
        }
        Ok(Disk { center, radius })
    }

    /// B(0, r).
    pub fn origin(radius: f64) -> Result<Self> {
        Disk::new(Site::ORIGIN, radius)
    }

    #[inline]
    pub fn radius2_bound(&self) -> i64 {
        (self.radius * self.radius + 1e-9).floor() as i64
    }

    #[inline]
    pub fn contains(&self, s: Site) -> bool {
        s.dist2(self.center) <= self.radius2_bound()
    }

    /// All lattice points of the disk, sorted.
    pub fn sites(&self) -> SiteSet {
        ball_sites(self)
    }
}

/// Enumerate B(center, radius) row by row.
pub fn ball_sites(disk: &Disk) -> SiteSet {
    let r2 = disk.radius2_bound();
    let r = floor_sqrt(r2) as i32;
    let mut out = Vec::new();
    for dx in -r..=r {
        let rest = r2 - (dx as i64) * (dx as i64);
        let h = floor_sqrt(rest) as i32;
        for dy in -h..=h {
            out.push(Site::new(disk.center.x + dx, disk.center.y + dy));
        }
    }
    // rows are generated in lexicographic order already
    SiteSet(out)
}

/// A finite set of sites stored sorted and deduplicated.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SiteSet(Vec<Site>);

impl SiteSet {
    pub fn new() -> Self {
        SiteSet(Vec::new())
    }

    pub fn singleton(s: Site) -> Self {
        SiteSet(vec![s])
    }

    #[inline]
    pub fn contains(&self, s: &Site) -> bool {
        self.0.binary_search(s).is_ok()
    }

    pub fn index_of(&self, s: &Site) -> Option<usize> {
        self.0.binary_search(s).ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Site> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Site] {
        &self.0
    }

    pub fn insert(&mut self, s: Site) -> bool {
        match self.0.binary_search(&s) {
            Ok(_) => false,
            Err(i) => {
                self.0.insert(i, s);
                true
            }
        }
    }

    pub fn union(&self, other: &SiteSet) -> SiteSet {
        self.iter().chain(other.iter()).copied().collect()
    }

    pub fn difference(&self, other: &SiteSet) -> SiteSet {
        SiteSet(self.iter().filter(|s| !other.contains(s)).copied().collect())
    }

    pub fn is_subset(&self, other: &SiteSet) -> bool {
        self.iter().all(|s| other.contains(s))
    }

    pub fn max_norm(&self) -> f64 {
        self.iter().map(|s| s.norm2()).max().map_or(0.0, |v| (v as f64).sqrt())
    }

    pub fn min_norm(&self) -> f64 {
        self.iter().map(|s| s.norm2()).min().map_or(0.0, |v| (v as f64).sqrt())
    }

    /// Smallest `(xmin, ymin, xmax, ymax)` box containing the set.
    pub fn bounding_box(&self) -> Option<(i32, i32, i32, i32)> {
        let first = self.0.first()?;
        let mut b = (first.x, first.y, first.x, first.y);
        for s in &self.0 {
            b.0 = b.0.min(s.x);
            b.1 = b.1.min(s.y);
            b.2 = b.2.max(s.x);
            b.3 = b.3.max(s.y);
        }
        Some(b)
    }

    pub fn into_vec(self) -> Vec<Site> {
        self.0
    }
}

impl FromIterator<Site> for SiteSet {
    fn from_iter<I: IntoIterator<Item = Site>>(iter: I) -> Self {
        let mut v: Vec<Site> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        SiteSet(v)
    }
}

impl<'a> IntoIterator for &'a SiteSet {
    type Item = &'a Site;
    type IntoIter = std::slice::Iter<'a, Site>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Inner boundary ∂A: the sites of A with at least one neighbor outside A.
pub fn inner_boundary(set: &SiteSet) -> SiteSet {
    SiteSet(
        set.iter()
            .filter(|s| s.neighbors().iter().any(|n| !set.contains(n)))
            .copied()
            .collect(),
    )
}

/// Annular shell Λ_n = {x : n-1 < ‖x‖ ≤ n}.
#[derive(Clone, Debug, PartialEq)]
pub struct Shell {
    pub n: u32,
    pub sites: SiteSet,
}

pub fn shell(n: u32) -> Result<Shell> {
    if n == 0 {
        return Err(Error::invalid("n", "shell index must be at least 1"));
    }
    let outer = Disk::origin(n as f64)?;
    let sites = ball_sites(&outer)
        .iter()
        .filter(|s| s.shell_index() == n)
        .copied()
        .collect();
    Ok(Shell { n, sites })
}

/// Fast membership for a finite set over its bounding box.
#[derive(Clone, Debug)]
pub struct Mask {
    x0: i32,
    y0: i32,
    w: usize,
    h: usize,
    slot: Vec<u32>,
}

impl Mask {
    const EMPTY: u32 = u32::MAX;

    /// Mask of `set` where `index(s)` is the position of `s` in the set.
    pub fn new(set: &SiteSet) -> Self {
        let (x0, y0, x1, y1) = set.bounding_box().unwrap_or((0, 0, -1, -1));
        let w = (x1 - x0 + 1).max(0) as usize;
        let h = (y1 - y0 + 1).max(0) as usize;
        let mut slot = vec![Self::EMPTY; w * h];
        for (i, s) in set.iter().enumerate() {
            slot[(s.y - y0) as usize * w + (s.x - x0) as usize] = i as u32;
        }
        Mask { x0, y0, w, h, slot }
    }

    #[inline]
    pub fn index(&self, s: Site) -> Option<usize> {
        let dx = s.x.wrapping_sub(self.x0);
        let dy = s.y.wrapping_sub(self.y0);
        if dx < 0 || dy < 0 || dx as usize >= self.w || dy as usize >= self.h {
            return None;
        }
        let v = self.slot[dy as usize * self.w + dx as usize];
        (v != Self::EMPTY).then_some(v as usize)
    }

    #[inline]
    pub fn contains(&self, s: Site) -> bool {
        self.index(s).is_some()
    }
}

/// Side length of the torus Z²_m.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusSpec {
    m: u32,
}

impl TorusSpec {
    pub fn new(m: u32) -> Result<Self> {
        if m < 3 {
            return Err(Error::invalid("m", format!("torus side {m} < 3")));
        }
        Ok(TorusSpec { m })
    }

    pub fn side(&self) -> u32 {
        self.m
    }

    pub fn volume(&self) -> usize {
        (self.m as usize) * (self.m as usize)
    }

    #[inline]
    pub fn wrap(&self, s: Site) -> Site {
        let m = self.m as i32;
        Site::new(s.x.rem_euclid(m), s.y.rem_euclid(m))
    }

    #[inline]
    pub fn index(&self, s: Site) -> usize {
        s.y as usize * self.m as usize + s.x as usize
    }

    #[inline]
    pub fn site(&self, index: usize) -> Site {
        let m = self.m as usize;
        Site::new((index % m) as i32, (index / m) as i32)
    }

    /// Wrapped neighbor of a reduced site.
    #[inline]
    pub fn step(&self, s: Site, dir: usize) -> Site {
        let m = self.m as i32;
        let mut t = s.step(dir);
        if t.x == m {
            t.x = 0;
        } else if t.x < 0 {
            t.x = m - 1;
        }
        if t.y == m {
            t.y = 0;
        } else if t.y < 0 {
            t.y = m - 1;
        }
        t
    }
}

/// Translation of Z² placing a disk center at `(⌊m/2⌋, ⌊m/2⌋)` of the torus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusEmbedding {
    pub torus: TorusSpec,
    pub center: Site,
}

impl TorusEmbedding {
    #[inline]
    pub fn map(&self, s: Site) -> Site {
        let h = (self.torus.m / 2) as i32;
        self.torus.wrap(Site::new(s.x - self.center.x + h, s.y - self.center.y + h))
    }

    /// Inverse of [`map`](Self::map) choosing the representative nearest the disk center.
    pub fn unmap(&self, t: Site) -> Site {
        let h = (self.torus.m / 2) as i32;
        Site::new(t.x - h + self.center.x, t.y - h + self.center.y)
    }

    pub fn torus_center(&self) -> Site {
        let h = (self.torus.m / 2) as i32;
        Site::new(h, h)
    }
}

pub fn torus_embed(disk: &Disk, torus: TorusSpec) -> Result<TorusEmbedding> {
    if 2.0 * disk.radius >= torus.m as f64 {
        return Err(Error::EmbeddingTooLarge {
            radius: disk.radius,
            side: torus.m,
        });
    }
    Ok(TorusEmbedding {
        torus,
        center: disk.center,
    })
}
