//! Simulation and verification lab for two-dimensional random interlacements.
//!
//! The crate is organized bottom-up:
//!
//! - [`lattice`]: sites, disks, shells and torus embeddings;
//! - [`potential`]: the potential kernel, harmonic measures and capacity;
//! - [`walks`]: simple and conditioned random walks, excursion extraction;
//! - [`excursions`]: excursion counts, i.i.d. excursions, torus experiments;
//! - [`slt`]: soft local times over a shared Poisson point pool;
//! - [`interlacements`]: trajectory bundles, noodles and vacant sets;
//! - [`couplings`]: Poisson total variation and the coupling pipeline;
//! - [`stats`]: compound-Poisson counts and test statistics;
//! - [`experiment`]: configuration, replica orchestration and reports.

pub mod couplings;
pub mod error;
pub mod excursions;
pub mod experiment;
pub mod interlacements;
pub mod lattice;
pub(crate) mod linalg;
pub mod potential;
pub mod rng;
pub mod slt;
pub mod stats;
pub mod walks;

pub use error::{Error, Result};
pub use lattice::{Disk, Site, SiteSet, TorusSpec};
pub use rng::RngStream;
