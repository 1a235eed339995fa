use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ball_sites, inner_boundary, Disk, Site, SiteSet};
use crate::linalg::{default_max_iter, LaplaceSystem};

use super::hitting::HittingKernel;
use super::kernel::PotentialTable;

/// A probability vector over an ordered list of sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicMeasure {
    support: Vec<Site>,
    weights: Vec<f64>,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl HarmonicMeasure {
    /// Normalizes `weights`; rejects negative or all-zero input.
    pub fn new(support: Vec<Site>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() || support.is_empty() {
            return Err(Error::invalid("weights", "length mismatch or empty support"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("weights", "negative or NaN weight"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights", "zero total mass"));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cdf.push(acc);
        }
        Ok(HarmonicMeasure { support, weights, cdf })
    }

    pub fn uniform(support: Vec<Site>) -> Result<Self> {
        let n = support.len();
        Self::new(support, vec![1.0; n])
    }

    pub fn support(&self) -> &[Site] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn weight_of(&self, s: Site) -> f64 {
        self.support
            .iter()
            .position(|&t| t == s)
            .map_or(0.0, |i| self.weights[i])
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Site {
        self.support[self.sample_index(rng)]
    }

    /// Total variation distance; sites missing from one support carry zero mass there.
    pub fn tv_distance(&self, other: &HarmonicMeasure) -> f64 {
        let mut sites: Vec<Site> = self.support.iter().chain(&other.support).copied().collect();
        sites.sort_unstable();
        sites.dedup();
        sites
            .iter()
            .map(|&s| (self.weight_of(s) - other.weight_of(s)).abs())
            .sum::<f64>()
            / 2.0
    }
}

/// `hm_A` from infinity, computed from the potential kernel (no truncation).
pub fn harmonic_measure(set: &SiteSet, table: &PotentialTable) -> Result<HarmonicMeasure> {
    let hk = HittingKernel::new(table, set)?;
    HarmonicMeasure::new(hk.support().to_vec(), hk.harmonic_measure())
}

/// `hm_A` approximated by the escape distribution to `∂B(0, r_far)`; bias `O(diam(A)/r_far)`.
pub fn harmonic_measure_far(set: &SiteSet, r_far: u32) -> Result<HarmonicMeasure> {
    let scale = set.max_norm().max(1.0);
    if (r_far as f64) < 4.0 * scale {
        return Err(Error::invalid(
            "R_far",
            format!("{r_far} < 4 × max norm {scale:.2} of the set"),
        ));
    }
    let container = ball_sites(&Disk::origin(r_far as f64)?);
    conditional_harmonic_measure(set, &container, None)
}

/// `hm_A^{A'}(y) ∝ P_y[τ₁(∂A') < τ₁(A)]` for `y ∈ ∂A`.
///
/// With `conditioned = Some(table)` the walk is the conditioned walk with
/// transition `a(y)/(4a(x))`; the escape probabilities then come from the
/// simple-walk problem with boundary data `a` on `∂A'`, absorbed at the
/// origin, divided by `a(y)`.
pub fn conditional_harmonic_measure(
    set: &SiteSet,
    container: &SiteSet,
    conditioned: Option<&PotentialTable>,
) -> Result<HarmonicMeasure> {
    if set.is_empty() {
        return Err(Error::invalid("A", "empty set"));
    }
    let outer = inner_boundary(container);
    if !set.is_subset(container) || set.iter().any(|s| outer.contains(s)) {
        return Err(Error::invalid("A'", "A must lie inside A' away from its boundary"));
    }
    let boundary = inner_boundary(set);
    if let Some(_) = conditioned {
        if boundary.contains(&Site::ORIGIN) {
            return Err(Error::UndefinedAtOrigin(Site::ORIGIN));
        }
    }
    let unknowns: SiteSet = container
        .iter()
        .filter(|s| !set.contains(s) && !outer.contains(s))
        .filter(|s| conditioned.is_none() || **s != Site::ORIGIN)
        .copied()
        .collect();
    let outer_value = |s: Site| match conditioned {
        Some(t) => t.value(s),
        None => 1.0,
    };
    let value_at = |s: Site, u: &[f64], sys: &LaplaceSystem| -> f64 {
        if let Some(i) = sys.index(s) {
            u[i]
        } else if outer.contains(&s) {
            outer_value(s)
        } else {
            0.0
        }
    };
    let sys = LaplaceSystem::new(unknowns);
    let u = if sys.is_empty() {
        Vec::new()
    } else {
        let rhs = sys.boundary_rhs(|s| if outer.contains(&s) { outer_value(s) } else { 0.0 });
        sys.solve(&rhs, 1e-12, default_max_iter(sys.len()))?
    };
    let weights: Vec<f64> = boundary
        .iter()
        .map(|&y| {
            let esc = y.neighbors().iter().map(|&n| value_at(n, &u, &sys)).sum::<f64>() / 4.0;
            match conditioned {
                Some(t) => esc / t.value(y),
                None => esc,
            }
        })
        .collect();
    if weights.iter().all(|w| *w <= 0.0) {
        return Err(Error::Singular("no boundary site can reach ∂A' without returning".into()));
    }
    HarmonicMeasure::new(boundary.into_vec(), weights)
}

/// `cap(A) = Σ_{y∈A} hm_A(y) a(y)` for a finite set containing the origin.
pub fn capacity(set: &SiteSet, table: &PotentialTable) -> Result<f64> {
    if !set.contains(&Site::ORIGIN) {
        return Err(Error::invalid("A", "capacity is rooted at the origin: 0 ∉ A"));
    }
    let hk = HittingKernel::new(table, set)?;
    let hm = hk.harmonic_measure();
    Ok(hk
        .support()
        .iter()
        .zip(&hm)
        .map(|(s, w)| w * table.value(*s))
        .sum())
}

/// Harmonic measure of the conditioned walk from infinity,
/// `ĥm_A(y) = hm_A(y) a(y) / cap(A)`, for `A ∋ 0`; the origin carries no mass.
pub fn conditioned_harmonic_measure(set: &SiteSet, table: &PotentialTable) -> Result<HarmonicMeasure> {
    if !set.contains(&Site::ORIGIN) {
        return Err(Error::invalid("A", "0 ∉ A"));
    }
    let hk = HittingKernel::new(table, set)?;
    let hm = hk.harmonic_measure();
    let (sites, w): (Vec<Site>, Vec<f64>) = hk
        .support()
        .iter()
        .zip(&hm)
        .filter(|(s, _)| **s != Site::ORIGIN)
        .map(|(s, h)| (*s, h * table.value(*s)))
        .unzip();
    if sites.is_empty() {
        return Err(Error::invalid("A", "A ⊆ {0} has zero capacity"));
    }
    HarmonicMeasure::new(sites, w)
}
