//! Torus analogue of the potential kernel.
//!
//! `a_m(x) = m⁻² Σ_{k≠0} (1 − cos(k·x)) / (1 − φ(k))` with
//! `φ(k) = (cos k₁ + cos k₂)/2` over the dual lattice `(2π/m)Z²_m`. It
//! satisfies `a_m(0) = 0` and `Δa_m = δ₀ − m⁻²`, which is all the bordered
//! hitting system needs.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::Result;
use crate::lattice::{Site, TorusSpec};

use super::kernel::Kernel;

#[derive(Clone, Debug)]
pub struct TorusKernel {
    torus: TorusSpec,
    values: Vec<f64>,
}

impl TorusKernel {
    pub fn new(torus: TorusSpec) -> Result<Self> {
        let m = torus.side() as usize;
        let mut grid: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); m * m];
        let w = 2.0 * std::f64::consts::PI / m as f64;
        for j2 in 0..m {
            for j1 in 0..m {
                if j1 == 0 && j2 == 0 {
                    continue;
                }
                let phi = ((w * j1 as f64).cos() + (w * j2 as f64).cos()) / 2.0;
                grid[j2 * m + j1] = Complex::new(1.0 / (1.0 - phi), 0.0);
            }
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_inverse(m);
        // rows
        for row in grid.chunks_mut(m) {
            fft.process(row);
        }
        // columns
        let mut col = vec![Complex::new(0.0, 0.0); m];
        for c in 0..m {
            for r in 0..m {
                col[r] = grid[r * m + c];
            }
            fft.process(&mut col);
            for r in 0..m {
                grid[r * m + c] = col[r];
            }
        }
        let scale = 1.0 / (m * m) as f64;
        let c0 = grid[0].re * scale;
        let values = grid.iter().map(|z| c0 - z.re * scale).collect();
        Ok(TorusKernel { torus, values })
    }

    pub fn torus(&self) -> TorusSpec {
        self.torus
    }

    #[inline]
    pub fn value(&self, d: Site) -> f64 {
        let t = self.torus.wrap(d);
        self.values[self.torus.index(t)]
    }
}

impl Kernel for TorusKernel {
    #[inline]
    fn eval(&self, d: Site) -> f64 {
        self.value(d)
    }
}
