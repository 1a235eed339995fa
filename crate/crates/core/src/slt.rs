//! Soft local times over a shared marked Poisson pool.
//!
//! The pool is a Poisson process of unit rate on `∂B(n) × [0, ∞)`: every
//! boundary site carries its own increasing list of heights with i.i.d.
//! standard exponential gaps, extended lazily from a per-site stream so the
//! realization does not depend on the order of queries. A process driven by
//! densities `g_1, g_2, …` raises its field `L` by `t g_k` with the smallest
//! `t` at which `L` reaches an unconsumed point; that point is consumed and
//! its site is the `k`-th entrance. Given the past, the entrance then has law
//! `g_k`. Several processes may share one pool, each with its own cursors;
//! when one field lies below another, its consumed points are a subset of the
//! other's.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ball_sites, inner_boundary, torus_embed, Disk, Mask, Site, TorusEmbedding, TorusSpec};
use crate::potential::{HarmonicMeasure, HittingKernel, TorusKernel};
use crate::rng::RngStream;
use crate::walks::{srw_path, PathSegment};

/// Identifier of a pool point: boundary-site index and rank among that site's heights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PointId {
    pub site: usize,
    pub rank: usize,
}

/// Marked Poisson point pool over a finite boundary.
pub struct PointPool {
    support: Vec<Site>,
    heights: Vec<Vec<f64>>,
    site_rngs: Vec<ChaCha8Rng>,
    stream: RngStream,
}

impl PointPool {
    /// `support` should be sorted; ties between sites are broken by position.
    pub fn new(support: Vec<Site>, stream: RngStream) -> Self {
        let n = support.len();
        PointPool {
            site_rngs: (0..n).map(|i| stream.derive(i as u64).rng()).collect(),
            heights: vec![Vec::new(); n],
            support,
            stream,
        }
    }

    pub fn support(&self) -> &[Site] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Height of point `rank` at site `site`, extending the list as needed.
    pub fn height(&mut self, site: usize, rank: usize) -> f64 {
        let list = &mut self.heights[site];
        while list.len() <= rank {
            let gap: f64 = Exp1.sample(&mut self.site_rngs[site]);
            let last = list.last().copied().unwrap_or(0.0);
            list.push(last + gap);
        }
        list[rank]
    }

    /// Heights generated so far at `site`.
    pub fn generated(&self, site: usize) -> &[f64] {
        &self.heights[site]
    }

    /// Stream reserved for the mark (excursion body) of point `id`.
    pub fn mark_stream(&self, id: PointId) -> RngStream {
        self.stream
            .derive(u64::MAX)
            .derive(((id.site as u64) << 32) ^ id.rank as u64)
    }
}

/// Values of a field on the pool support.
pub trait Field {
    fn support(&self) -> &[Site];
    fn values(&self) -> Vec<f64>;
}

/// Soft local time of one process: `k` excursions consumed, field `L`.
#[derive(Clone, Debug)]
pub struct SoftField {
    support: Vec<Site>,
    pub k: usize,
    values: Vec<f64>,
    cursors: Vec<usize>,
    consumed: Vec<PointId>,
    raises: Vec<f64>,
}

impl SoftField {
    pub fn new(pool: &PointPool) -> Self {
        let n = pool.len();
        SoftField {
            support: pool.support().to_vec(),
            k: 0,
            values: vec![0.0; n],
            cursors: vec![0; n],
            consumed: Vec::new(),
            raises: Vec::new(),
        }
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Consumed points in consumption order.
    pub fn consumed(&self) -> &[PointId] {
        &self.consumed
    }

    /// Multipliers `t_1, …, t_k` of the successive raises.
    pub fn raises(&self) -> &[f64] {
        &self.raises
    }

    /// Number of consumed points at each site.
    pub fn cursors(&self) -> &[usize] {
        &self.cursors
    }

    /// Consume the next point under density `g` (indexed like the pool support).
    pub fn advance(&mut self, pool: &mut PointPool, g: &[f64]) -> Result<PointId> {
        if g.len() != self.values.len() || pool.len() != self.values.len() {
            return Err(Error::SupportMismatch);
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, &gi) in g.iter().enumerate() {
            if !(gi > 0.0) || !gi.is_finite() {
                return Err(Error::DegenerateDensity { site: self.support[i] });
            }
            let t = (pool.height(i, self.cursors[i]) - self.values[i]) / gi;
            // strict comparison keeps the smallest site on ties
            if t < best.0 {
                best = (t, i);
            }
        }
        let (t, i) = best;
        let t = t.max(0.0);
        for (v, gi) in self.values.iter_mut().zip(g) {
            *v += t * gi;
        }
        // the consumed point sits exactly on the raised field
        self.values[i] = pool.height(i, self.cursors[i]);
        let id = PointId {
            site: i,
            rank: self.cursors[i],
        };
        self.cursors[i] += 1;
        self.k += 1;
        self.consumed.push(id);
        self.raises.push(t);
        Ok(id)
    }

    /// `{site, L}` rows for plotting.
    pub fn snapshot(&self) -> Vec<FieldRow> {
        snapshot(self)
    }
}

impl Field for SoftField {
    fn support(&self) -> &[Site] {
        &self.support
    }
    fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

/// Field `(ξ_1 + ⋯ + ξ_k) hm(y)` of `k` independent excursions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IidField {
    pub k: usize,
    pub xi_sum: f64,
    pub hm: HarmonicMeasure,
}

impl IidField {
    pub fn value_at(&self, i: usize) -> f64 {
        self.xi_sum * self.hm.weights()[i]
    }

    /// The field of an SLT process run with constant density `hm`: its
    /// multipliers play the role of the exponentials.
    pub fn from_soft(field: &SoftField, hm: &HarmonicMeasure) -> Self {
        IidField {
            k: field.k,
            xi_sum: field.raises().iter().sum(),
            hm: hm.clone(),
        }
    }
}

impl Field for IidField {
    fn support(&self) -> &[Site] {
        self.hm.support()
    }
    fn values(&self) -> Vec<f64> {
        (0..self.hm.len()).map(|i| self.value_at(i)).collect()
    }
}

/// One `{site, L}` row of a field snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub x: i32,
    pub y: i32,
    pub l: f64,
}

pub fn snapshot(field: &impl Field) -> Vec<FieldRow> {
    field
        .support()
        .iter()
        .zip(field.values())
        .map(|(s, l)| FieldRow { x: s.x, y: s.y, l })
        .collect()
}

/// Run a process for `k_max` excursions. `density(k, previous)` returns
/// `g_k` given the point consumed at step `k − 1` (`None` for `k = 1`).
pub fn slt_generate(
    pool: &mut PointPool,
    mut density: impl FnMut(usize, Option<PointId>, &PointPool) -> Result<Vec<f64>>,
    k_max: usize,
) -> Result<(Vec<Site>, SoftField)> {
    let mut field = SoftField::new(pool);
    let mut entries = Vec::with_capacity(k_max);
    let mut prev = None;
    for k in 1..=k_max {
        let g = density(k, prev, pool)?;
        let id = field.advance(pool, &g)?;
        entries.push(pool.support()[id.site]);
        prev = Some(id);
    }
    Ok((entries, field))
}

/// `(ξ̃_1 + ⋯ + ξ̃_k) hm` with fresh exponentials.
pub fn iid_field<R: Rng + ?Sized>(k: usize, hm: &HarmonicMeasure, rng: &mut R) -> IidField {
    let xi_sum = if k == 0 {
        0.0
    } else {
        Gamma::new(k as f64, 1.0).expect("positive shape").sample(rng)
    };
    IidField {
        k,
        xi_sum,
        hm: hm.clone(),
    }
}

/// `lower ≤ upper` at every boundary site.
pub fn dominance_check(lower: &impl Field, upper: &impl Field) -> Result<bool> {
    if lower.support() != upper.support() {
        return Err(Error::SupportMismatch);
    }
    Ok(lower.values().iter().zip(upper.values()).all(|(a, b)| *a <= b))
}

/// Whether every point consumed by `lower` was consumed by `upper`
/// (both run on the same pool).
pub fn consumed_subset(lower: &SoftField, upper: &SoftField) -> bool {
    lower.cursors.iter().zip(&upper.cursors).all(|(a, b)| a <= b)
}

/// Excursion process of simple random walk on the torus `Z²_m`,
/// `m = ⌊3γn⌋`, between `∂B(n)` and `∂B(γn)`, driven through a point pool:
/// the density of the `k`-th entrance is the torus hitting law of `B(n)` from
/// the exit site of the previous excursion, whose body is the mark of the
/// previously consumed point.
pub struct TorusExcursionDensities<'k> {
    n: u32,
    gamma: f64,
    torus: TorusSpec,
    emb: TorusEmbedding,
    hk: HittingKernel<'k, TorusKernel>,
    outer_b: Mask,
    start: RngStream,
}

impl<'k> TorusExcursionDensities<'k> {
    /// `kernel` must be the torus kernel for side `⌊3γn⌋`; `start` seeds the
    /// uniform starting site.
    pub fn new(kernel: &'k TorusKernel, n: u32, gamma: f64, start: RngStream) -> Result<Self> {
        let torus = kernel.torus();
        let inner = Disk::origin(n as f64)?;
        let outer = Disk::origin(gamma * n as f64)?;
        let emb = torus_embed(&outer, torus)?;
        let mapped = ball_sites(&inner).iter().map(|&s| emb.map(s)).collect();
        let hk = HittingKernel::new(kernel, &mapped)?;
        Ok(TorusExcursionDensities {
            n,
            gamma,
            torus,
            emb,
            hk,
            outer_b: Mask::new(&inner_boundary(&ball_sites(&outer))),
            start,
        })
    }

    /// `∂B(n)` in `Z²` coordinates, in pool order.
    pub fn boundary(&self) -> Vec<Site> {
        self.hk.support().iter().map(|&s| self.emb.unmap(s)).collect()
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Excursion body of point `id`: simple random walk from its site to `∂B(γn)`.
    pub fn mark(&self, pool: &PointPool, id: PointId) -> Result<PathSegment> {
        let mut rng = pool.mark_stream(id).rng();
        let start = pool.support()[id.site];
        Ok(srw_path(start, |s| self.outer_b.contains(s), &mut rng, u64::MAX)?)
    }

    /// Hitting law of `B(n)` from a torus site given in `Z²` coordinates.
    pub fn hitting_law(&self, from: Site) -> Vec<f64> {
        self.hk.hitting_distribution(self.torus.wrap(self.emb.map(from)))
    }

    /// Density of the `k`-th entrance; see [`slt_generate`].
    pub fn density(&self, prev: Option<PointId>, pool: &PointPool) -> Result<Vec<f64>> {
        self.density_with_start(prev, pool, &self.start)
    }

    /// As [`density`](Self::density), with the starting site drawn from `start`.
    pub fn density_with_start(&self, prev: Option<PointId>, pool: &PointPool, start: &RngStream) -> Result<Vec<f64>> {
        let from = match prev {
            Some(id) => self.mark(pool, id)?.last().expect("nonempty mark"),
            None => {
                let mut rng = start.rng();
                let vol = self.torus.volume();
                loop {
                    let s = self.torus.site(rng.random_range(0..vol));
                    if !self.hk.contains(s) {
                        break self.emb.unmap(s);
                    }
                }
            }
        };
        Ok(self.hitting_law(from))
    }
}

/// One comparison of the i.i.d. field with the torus excursion field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceRecord {
    pub k_iid: usize,
    pub k_torus: usize,
    /// `L̃_{k_iid} ≤ L_{k_torus}` everywhere on `∂B(n)`.
    pub dominated: bool,
    /// Every point consumed by the i.i.d. process was consumed by the torus process.
    pub contained: bool,
    /// `min_y L_{k_torus}(y) / L̃_{k_iid}(y)`.
    pub min_ratio: f64,
}

/// Run the i.i.d. process (constant density `hm`, in pool order) for `k_iid`
/// steps and the torus process for `k_torus` steps on one pool seeded by
/// `stream`, and compare the fields.
pub fn torus_dominance_trial(
    dens: &TorusExcursionDensities<'_>,
    hm: &[f64],
    k_iid: usize,
    k_torus: usize,
    stream: &RngStream,
) -> Result<DominanceRecord> {
    let mut pool = PointPool::new(dens.boundary(), stream.derive(0));
    if hm.len() != pool.len() {
        return Err(Error::SupportMismatch);
    }
    let start = stream.derive(1);
    let (_, lower) = slt_generate(&mut pool, |_, _, _| Ok(hm.to_vec()), k_iid)?;
    let (_, upper) = slt_generate(&mut pool, |_, prev, p| dens.density_with_start(prev, p, &start), k_torus)?;
    let min_ratio = (0..pool.len())
        .map(|i| upper.value(i) / lower.value(i))
        .fold(f64::INFINITY, f64::min);
    Ok(DominanceRecord {
        k_iid,
        k_torus,
        dominated: dominance_check(&lower, &upper)?,
        contained: consumed_subset(&lower, &upper),
        min_ratio,
    })
}
