//! Sparse Dirichlet problems for the lattice Laplacian.
//!
//! The operator is `I − P` restricted to a finite set of unknown sites, where
//! `P` averages over the four lattice neighbors. It is symmetric positive
//! definite as soon as at least one neighbor of the set is absorbing, so plain
//! conjugate gradients apply.

use crate::error::{Error, Result};
use crate::lattice::{Mask, Site, SiteSet};

const NONE: u32 = u32::MAX;

pub struct LaplaceSystem {
    sites: SiteSet,
    mask: Mask,
    nbr: Vec<[u32; 4]>,
}

impl LaplaceSystem {
    pub fn new(sites: SiteSet) -> Self {
        let mask = Mask::new(&sites);
        let nbr = sites
            .iter()
            .map(|s| {
                let mut out = [NONE; 4];
                for (d, n) in s.neighbors().iter().enumerate() {
                    if let Some(i) = mask.index(*n) {
                        out[d] = i as u32;
                    }
                }
                out
            })
            .collect();
        LaplaceSystem { sites, mask, nbr }
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn index(&self, s: Site) -> Option<usize> {
        self.mask.index(s)
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, nb) in self.nbr.iter().enumerate() {
            let mut acc = 0.0;
            for &j in nb {
                if j != NONE {
                    acc += v[j as usize];
                }
            }
            out[i] = v[i] - 0.25 * acc;
        }
    }

    /// Right-hand side contributed by known values outside the unknown set.
    pub fn boundary_rhs(&self, boundary: impl Fn(Site) -> f64) -> Vec<f64> {
        self.sites
            .iter()
            .zip(&self.nbr)
            .map(|(s, nb)| {
                let mut acc = 0.0;
                for (d, &j) in nb.iter().enumerate() {
                    if j == NONE {
                        acc += boundary(s.step(d));
                    }
                }
                0.25 * acc
            })
            .collect()
    }

    /// Solve `(I − P) u = rhs` to relative residual `tol`.
    pub fn solve(&self, rhs: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        self.solve_from(rhs, vec![0.0; rhs.len()], tol, max_iter)
    }

    pub fn solve_from(&self, rhs: &[f64], mut x: Vec<f64>, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let n = rhs.len();
        assert_eq!(n, self.len());
        let bnorm = norm(rhs);
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut ax = vec![0.0; n];
        self.apply(&x, &mut ax);
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr = dot(&r, &r);
        for _ in 0..max_iter {
            if rr.sqrt() <= tol * bnorm {
                return Ok(x);
            }
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(Error::Singular("Laplacian restriction is not positive definite".into()));
            }
            let alpha = rr / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        // recompute the true residual before giving up
        self.apply(&x, &mut ax);
        let res = rhs.iter().zip(&ax).map(|(b, a)| (b - a) * (b - a)).sum::<f64>().sqrt() / bnorm;
        if res <= tol {
            Ok(x)
        } else {
            Err(Error::SolverDiverged {
                iterations: max_iter,
                residual: res,
            })
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Default iteration cap for a system of `n` unknowns.
pub(crate) fn default_max_iter(n: usize) -> usize {
    50 * (n as f64).sqrt() as usize + 1000
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ball_sites, Disk};

    #[test]
    fn exit_time_of_small_disk() {
        // E_0[exit time of B(0,1)] = 1 step exactly: from 0 every neighbor... stays inside,
        // so use the interior {0}: expected time = 1.
        let sys = LaplaceSystem::new(SiteSet::singleton(Site::ORIGIN));
        let u = sys.solve(&[1.0], 1e-14, 100).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-14);

        // B(1): from 0, each step from a boundary site exits w.p. 3/4.
        // t0 = 1 + t1, t1 = 1 + t0/4  =>  t1 = 5/3, t0 = 8/3.
        let sys = LaplaceSystem::new(ball_sites(&Disk::origin(1.0).unwrap()));
        let u = sys.solve(&vec![1.0; 5], 1e-14, 100).unwrap();
        let i0 = sys.index(Site::ORIGIN).unwrap();
        assert!((u[i0] - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_linear_boundary() {
        // x-coordinate is harmonic; the Dirichlet solution reproduces it.
        let set = ball_sites(&Disk::origin(6.0).unwrap());
        let sys = LaplaceSystem::new(set.clone());
        let rhs = sys.boundary_rhs(|s| s.x as f64);
        let u = sys.solve(&rhs, 1e-13, 1000).unwrap();
        for (s, v) in set.iter().zip(&u) {
            assert!((v - s.x as f64).abs() < 1e-10);
        }
    }
}
