use serde::{Deserialize, Serialize};

use crate::lattice::{inner_boundary, Disk, Mask, Site, SiteSet};

use super::PathSegment;

/// Concentric pair of disks `A ⊂ A'` labelling an excursion family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub inner: Disk,
    pub outer: Disk,
}

/// A path piece from a visit to `∂A` up to the first subsequent visit to `∂A'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub path: PathSegment,
    pub entry: Site,
    pub exit: Site,
    pub annulus: Option<Annulus>,
}

/// Streaming excursion detector over the two boundaries `∂A` and `∂A'`.
pub struct ExcursionTracker {
    inner: Mask,
    outer: Mask,
    keep_paths: bool,
    current: Option<(i64, Vec<Site>)>,
    time: i64,
    completed: u64,
}

impl ExcursionTracker {
    /// `inner_boundary` is `∂A`, `outer_boundary` is `∂A'`. With
    /// `keep_paths = false` only entry and exit sites are retained.
    pub fn new(inner_boundary: &SiteSet, outer_boundary: &SiteSet, keep_paths: bool) -> Self {
        ExcursionTracker {
            inner: Mask::new(inner_boundary),
            outer: Mask::new(outer_boundary),
            keep_paths,
            current: None,
            time: 0,
            completed: 0,
        }
    }

    /// Detector for the annulus between the sets `a ⊂ a_prime`.
    pub fn for_sets(a: &SiteSet, a_prime: &SiteSet, keep_paths: bool) -> Self {
        Self::new(&inner_boundary(a), &inner_boundary(a_prime), keep_paths)
    }

    /// Excursions completed so far.
    pub fn completed(&self) -> u64 {
        self.completed
    }

    /// Whether an excursion is in progress.
    pub fn in_progress(&self) -> bool {
        self.current.is_some()
    }

    /// Sites of the excursion in progress (empty unless paths are kept).
    pub fn current_sites(&self) -> &[Site] {
        self.current.as_ref().map(|(_, v)| v.as_slice()).unwrap_or(&[])
    }

    /// Feed the next site of the trajectory; returns an excursion when one completes.
    #[inline]
    pub fn push(&mut self, s: Site) -> Option<Excursion> {
        let t = self.time;
        self.time += 1;
        match &mut self.current {
            None => {
                if self.inner.contains(s) {
                    self.current = Some((t, vec![s]));
                    // a site on both boundaries is a complete one-site excursion
                    if self.outer.contains(s) {
                        return self.finish(s);
                    }
                }
                None
            }
            Some((_, sites)) => {
                if self.keep_paths || sites.is_empty() {
                    sites.push(s);
                } else {
                    // keep only the entry site
                    sites.truncate(1);
                }
                if self.outer.contains(s) {
                    self.finish(s)
                } else {
                    None
                }
            }
        }
    }

    fn finish(&mut self, exit: Site) -> Option<Excursion> {
        let (start, mut sites) = self.current.take()?;
        self.completed += 1;
        let entry = sites[0];
        if !self.keep_paths {
            sites = vec![entry, exit];
            if entry == exit {
                sites.truncate(1);
            }
        }
        Some(Excursion {
            path: PathSegment::new(sites, start),
            entry,
            exit,
            annulus: None,
        })
    }
}

/// All completed excursions of `path` between `∂A` and `∂A'`, in order.
/// The clock of each excursion path is its time index within `path`.
pub fn extract_excursions(path: &PathSegment, a: &SiteSet, a_prime: &SiteSet) -> Vec<Excursion> {
    let mut tracker = ExcursionTracker::for_sets(a, a_prime, true);
    let mut out = Vec::new();
    for &s in &path.sites {
        if let Some(mut e) = tracker.push(s) {
            e.path.clock += path.clock;
            out.push(e);
        }
    }
    out
}
