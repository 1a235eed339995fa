//! Exact hitting laws of finite sets for recurrent walks.
//!
//! For a finite set `A` with inner boundary `∂A = {s_1..s_k}` and a
//! recurrent-walk kernel `a` (the planar potential kernel, or its torus
//! analogue) every bounded function harmonic off `A` is of the form
//! `Σ_u a(x − u) μ(u) + c` with `Σ μ = 0`. Fitting boundary data therefore
//! reduces to the bordered system
//!
//! ```text
//! N = [ a(s_i − s_j)   1 ]
//!     [ 1ᵀ             0 ]
//! ```
//!
//! whose inverse `Q` gives, for `x ∉ A`,
//! `P_x[S_{τ_A} = s_w] = (Q v(x))_w` with `v(x) = (a(x − s_1), …, a(x − s_k), 1)`,
//! the harmonic measure from infinity `hm_A = Q e_{k+1}` restricted to the
//! first `k` entries, and the capacity `Σ hm_A(y) a(y) = −Q_{k+1,k+1}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lattice::{inner_boundary, Mask, Site, SiteSet};

use super::kernel::Kernel;

pub struct HittingKernel<'k, K: Kernel + ?Sized> {
    kernel: &'k K,
    set: SiteSet,
    set_mask: Mask,
    support: Vec<Site>,
    /// Row-major `(k+1)²` inverse of the bordered system.
    q: Vec<f64>,
}

impl<'k, K: Kernel + ?Sized> HittingKernel<'k, K> {
    pub fn new(kernel: &'k K, set: &SiteSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::invalid("A", "empty set"));
        }
        let support: Vec<Site> = inner_boundary(set).into_vec();
        let k = support.len();
        let mut n = DMatrix::<f64>::zeros(k + 1, k + 1);
        for i in 0..k {
            for j in 0..k {
                n[(i, j)] = kernel.eval(support[i] - support[j]);
            }
            n[(i, k)] = 1.0;
            n[(k, i)] = 1.0;
        }
        let inv = n
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("bordered kernel system of size {}", k + 1)))?;
        let mut q = Vec::with_capacity((k + 1) * (k + 1));
        for i in 0..=k {
            for j in 0..=k {
                q.push(inv[(i, j)]);
            }
        }
        Ok(HittingKernel {
            kernel,
            set: set.clone(),
            set_mask: Mask::new(set),
            support,
            q,
        })
    }

    pub fn kernel(&self) -> &'k K {
        self.kernel
    }

    pub fn set(&self) -> &SiteSet {
        &self.set
    }

    #[inline]
    pub fn contains(&self, s: Site) -> bool {
        self.set_mask.contains(s)
    }

    /// The inner boundary `∂A`, where every hitting law lives.
    pub fn support(&self) -> &[Site] {
        &self.support
    }

    fn dim(&self) -> usize {
        self.support.len() + 1
    }

    #[inline]
    fn q(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.dim() + j]
    }

    /// Harmonic measure from infinity, indexed like [`support`](Self::support).
    pub fn harmonic_measure(&self) -> Vec<f64> {
        let k = self.support.len();
        let mut w: Vec<f64> = (0..k).map(|i| self.q(i, k).max(0.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    /// The constant `Σ_y hm_A(y) a(y − x)` taking the same value at every `x ∈ A`.
    pub fn robin_constant(&self) -> f64 {
        let k = self.support.len();
        -self.q(k, k)
    }

    /// `v(x)` for the hitting formulas.
    fn kernel_vector(&self, x: Site) -> Vec<f64> {
        let mut v: Vec<f64> = self.support.iter().map(|&u| self.kernel.eval(x - u)).collect();
        v.push(1.0);
        v
    }

    /// `P_x[S_{τ_A} = ·]` over the support, for `x` outside `A`; a point mass for `x ∈ ∂A`.
    pub fn hitting_distribution(&self, x: Site) -> Vec<f64> {
        let k = self.support.len();
        if self.contains(x) {
            let mut out = vec![0.0; k];
            if let Some(i) = self.support.iter().position(|&s| s == x) {
                out[i] = 1.0;
            }
            return out;
        }
        let v = self.kernel_vector(x);
        let d = self.dim();
        let mut out: Vec<f64> = (0..k)
            .map(|w| {
                let row = &self.q[w * d..(w + 1) * d];
                row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().max(0.0)
            })
            .collect();
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= total);
        out
    }

    /// Coefficients `c` with `E_x[f(S_{τ_A})] = Σ_j c_j v_j(x)` for boundary data `f`.
    pub fn expectation_coefficients(&self, f: impl Fn(Site) -> f64) -> Vec<f64> {
        let d = self.dim();
        let fv: Vec<f64> = self.support.iter().map(|&s| f(s)).collect();
        (0..d)
            .map(|j| (0..self.support.len()).map(|w| self.q(w, j) * fv[w]).sum())
            .collect()
    }

    /// `E_x[f(S_{τ_A})]` given coefficients from [`expectation_coefficients`](Self::expectation_coefficients).
    #[inline]
    pub fn expectation(&self, coef: &[f64], x: Site) -> f64 {
        let k = self.support.len();
        let mut acc = coef[k];
        for (u, c) in self.support.iter().zip(coef) {
            acc += c * self.kernel.eval(x - *u);
        }
        acc
    }
}
