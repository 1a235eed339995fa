//! Trajectory generation: simple random walk on Z² and on the torus, the
//! walk conditioned to avoid the origin, and excursion extraction.

mod conditioned;
mod excursion;
mod srw;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::lattice::Site;

pub use conditioned::{
    conditioned_path, conditioned_step_distribution, ConditionedWalker, Doob, ReturnResolver, Taboo,
    WalkEnd, WalkRecord,
};
pub use excursion::{extract_excursions, Annulus, Excursion, ExcursionTracker};
pub use srw::{srw_path, torus_srw_path};

/// Default per-path step budget.
pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000_000;

/// A finite piece of a nearest-neighbor trajectory; `clock` is the time index
/// of the first site and may be negative for two-sided trajectories.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSegment {
    pub sites: Vec<Site>,
    pub clock: i64,
}

impl PathSegment {
    pub fn new(sites: Vec<Site>, clock: i64) -> Self {
        PathSegment { sites, clock }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn first(&self) -> Option<Site> {
        self.sites.first().copied()
    }

    pub fn last(&self) -> Option<Site> {
        self.sites.last().copied()
    }

    pub fn is_nearest_neighbor(&self) -> bool {
        self.sites.windows(2).all(|w| w[0].is_neighbor(w[1]))
    }

    /// Time index of position `i`.
    pub fn time(&self, i: usize) -> i64 {
        self.clock + i as i64
    }
}

/// A walk that ran out of steps; carries the path generated so far.
#[derive(Debug)]
pub struct Truncation {
    pub budget: u64,
    pub partial: PathSegment,
}

impl From<Truncation> for Error {
    fn from(t: Truncation) -> Self {
        Error::Truncated {
            budget: t.budget,
            partial_len: t.partial.len(),
        }
    }
}
