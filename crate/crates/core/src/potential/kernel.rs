//! The potential kernel `a(·)` of simple random walk on Z².
//!
//! `a` vanishes at the origin, is discrete-harmonic everywhere else and has
//! mean 1 over the neighbors of the origin. Inside a disk of radius `R` it is
//! obtained from a Dirichlet solve whose boundary data is the large-distance
//! expansion
//!
//! ```text
//! a(x) ≈ (2/π) ln‖x‖ + κ − cos 4φ / (6π‖x‖²) − (3 cos 4φ / (20π) + 5 cos 8φ / (24π)) / ‖x‖⁴
//! ```
//!
//! with `κ` fitted so that `a(1,0) = 1`. Outside the disk the same expansion
//! (with the fitted `κ`) is used directly; its truncation error is below
//! `1e-12` for `‖x‖ ≥ 100`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::lattice::{ball_sites, Disk, Site, SiteSet};
use crate::linalg::{default_max_iter, LaplaceSystem};

/// Table radius used by [`PotentialTable::shared`].
pub const DEFAULT_RADIUS: u32 = 128;
pub const DEFAULT_TOL: f64 = 1e-13;

/// Euler–Mascheroni constant.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Known value of the additive constant, `(2γ + ln 8)/π`. Used only for
/// diagnostics; the table fits its own constant.
pub const KAPPA_EXACT: f64 = (2.0 * EULER_GAMMA + 2.079_441_541_679_835_8) / PI;

/// Interface shared by the planar kernel and its torus analogue.
pub trait Kernel: Sync {
    /// Kernel value at displacement `d`.
    fn eval(&self, d: Site) -> f64;
}

/// Large-distance expansion of `a` with additive constant `kappa`.
pub fn asymptotic(s: Site, kappa: f64) -> f64 {
    let r2 = s.norm2() as f64;
    if r2 == 0.0 {
        return 0.0;
    }
    let phi = (s.y as f64).atan2(s.x as f64);
    let c4 = (4.0 * phi).cos();
    let c8 = (8.0 * phi).cos();
    (1.0 / PI) * r2.ln() + kappa - c4 / (6.0 * PI * r2)
        - (3.0 * c4 / (20.0 * PI) + 5.0 * c8 / (24.0 * PI)) / (r2 * r2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialTable {
    radius: u32,
    tol: f64,
    kappa: f64,
    /// Octant values `a(i, j)` for `0 ≤ j ≤ i`, `i² + j² ≤ R²`, packed by row `i`.
    octant: Vec<f64>,
}

#[inline]
fn octant_slot(i: u32, j: u32) -> usize {
    (i as usize) * (i as usize + 1) / 2 + j as usize
}

impl PotentialTable {
    /// Solve for `a` on B(R).
    pub fn compute(radius: u32, tol: f64) -> Result<Self> {
        if radius < 2 {
            return Err(Error::invalid("R", format!("table radius {radius} < 2")));
        }
        // Unknowns: B(R) without the origin, restricted to the closed octant
        // would break the plain Laplacian structure, so solve on the full disk.
        let disk = Disk::origin(radius as f64)?;
        let unknowns: SiteSet = ball_sites(&disk)
            .iter()
            .filter(|s| **s != Site::ORIGIN)
            .copied()
            .collect();
        let sys = LaplaceSystem::new(unknowns);
        let max_iter = default_max_iter(sys.len());
        // a = base + kappa * lift, both with a(0) = 0
        let rhs_base = sys.boundary_rhs(|s| if s == Site::ORIGIN { 0.0 } else { asymptotic(s, 0.0) });
        let rhs_lift = sys.boundary_rhs(|s| if s == Site::ORIGIN { 0.0 } else { 1.0 });
        let base = sys.solve(&rhs_base, tol, max_iter)?;
        let lift = sys.solve(&rhs_lift, tol, max_iter)?;
        let e1 = sys.index(Site::new(1, 0)).expect("(1,0) in table");
        let kappa = (1.0 - base[e1]) / lift[e1];

        // slots outside the disk are never read; they hold the asymptotic value
        let mut octant = vec![0.0; octant_slot(radius, radius) + 1];
        for i in 1..=radius {
            for j in 0..=i {
                octant[octant_slot(i, j)] = asymptotic(Site::new(i as i32, j as i32), kappa);
            }
        }
        for (k, s) in sys.sites().iter().enumerate() {
            if s.x >= s.y && s.y >= 0 {
                octant[octant_slot(s.x as u32, s.y as u32)] = base[k] + kappa * lift[k];
            }
        }
        Ok(PotentialTable {
            radius,
            tol,
            kappa,
            octant,
        })
    }

    /// Process-wide table of radius [`DEFAULT_RADIUS`].
    pub fn shared() -> Arc<PotentialTable> {
        static TABLE: OnceLock<Arc<PotentialTable>> = OnceLock::new();
        TABLE
            .get_or_init(|| {
                Arc::new(
                    PotentialTable::compute(DEFAULT_RADIUS, DEFAULT_TOL)
                        .expect("default potential table solve"),
                )
            })
            .clone()
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `a(s)`.
    #[inline]
    pub fn value(&self, s: Site) -> f64 {
        let (ax, ay) = (s.x.unsigned_abs(), s.y.unsigned_abs());
        let (i, j) = if ax >= ay { (ax, ay) } else { (ay, ax) };
        let r = self.radius as u64;
        if (i as u64) * (i as u64) + (j as u64) * (j as u64) <= r * r {
            self.octant[octant_slot(i, j)]
        } else {
            asymptotic(s, self.kappa)
        }
    }

    /// Largest `|mean of a over neighbors − a(x)|` over `0 < ‖x‖ < radius`.
    pub fn harmonic_residual(&self, radius: f64) -> f64 {
        let disk = Disk::origin(radius).expect("radius");
        ball_sites(&disk)
            .iter()
            .filter(|s| **s != Site::ORIGIN && (s.norm() < radius))
            .map(|s| {
                let m = s.neighbors().iter().map(|n| self.value(*n)).sum::<f64>() / 4.0;
                (m - self.value(*s)).abs()
            })
            .fold(0.0, f64::max)
    }

    const MAGIC: &'static [u8; 8] = b"ILPOT\0v1";

    pub fn cache_file_name(radius: u32, tol: f64) -> String {
        format!("potential_R{radius}_tol{tol:e}.bin")
    }

    /// Serialize as: magic, radius (u32 LE), tol, kappa, count (u64 LE), values (f64 LE).
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&self.radius.to_le_bytes())?;
        w.write_all(&self.tol.to_le_bytes())?;
        w.write_all(&self.kappa.to_le_bytes())?;
        w.write_all(&(self.octant.len() as u64).to_le_bytes())?;
        for v in &self.octant {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Cache("bad magic or unsupported version".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let radius = u32::from_le_bytes(b4);
        r.read_exact(&mut b8)?;
        let tol = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let kappa = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        if n != octant_slot(radius, radius) + 1 {
            return Err(Error::Cache(format!("value count {n} does not match radius {radius}")));
        }
        let mut octant = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            octant.push(f64::from_le_bytes(b8));
        }
        Ok(PotentialTable {
            radius,
            tol,
            kappa,
            octant,
        })
    }

    /// Load `(radius, tol)` from `dir`, computing and storing it on a miss.
    pub fn cached(dir: &Path, radius: u32, tol: f64) -> Result<Self> {
        let path: PathBuf = dir.join(Self::cache_file_name(radius, tol));
        if path.exists() {
            let t = Self::read_from(std::io::BufReader::new(std::fs::File::open(&path)?))?;
            if t.radius == radius && t.tol.to_bits() == tol.to_bits() {
                return Ok(t);
            }
        }
        let t = Self::compute(radius, tol)?;
        std::fs::create_dir_all(dir)?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            t.write_to(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, &path)?;
        Ok(t)
    }
}

impl Kernel for PotentialTable {
    #[inline]
    fn eval(&self, d: Site) -> f64 {
        self.value(d)
    }
}
