//! Discrete potential theory on Z²: the potential kernel, harmonic measures
//! and capacities.

mod harmonic;
mod hitting;
mod kernel;
mod torus;

pub use harmonic::{
    capacity, conditional_harmonic_measure, conditioned_harmonic_measure, harmonic_measure,
    harmonic_measure_far, HarmonicMeasure,
};
pub use hitting::HittingKernel;
pub use kernel::{asymptotic, Kernel, PotentialTable, DEFAULT_RADIUS, DEFAULT_TOL, KAPPA_EXACT};
pub use torus::TorusKernel;

/// `PotentialTable::compute(R, tol)`.
pub fn potential_kernel(radius: u32, tol: f64) -> crate::Result<PotentialTable> {
    PotentialTable::compute(radius, tol)
}
