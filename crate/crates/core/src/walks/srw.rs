use rand::RngCore;

use crate::lattice::{Site, TorusSpec};
use crate::rng::DirectionBits;

use super::{PathSegment, Truncation};

/// Simple random walk from `start` until the first site (time 0 included)
/// satisfying `stop`.
pub fn srw_path<R: RngCore + ?Sized>(
    start: Site,
    mut stop: impl FnMut(Site) -> bool,
    rng: &mut R,
    budget: u64,
) -> Result<PathSegment, Truncation> {
    let mut bits = DirectionBits::new();
    let mut sites = vec![start];
    let mut cur = start;
    let mut steps = 0u64;
    while !stop(cur) {
        if steps == budget {
            return Err(Truncation {
                budget,
                partial: PathSegment::new(sites, 0),
            });
        }
        cur = cur.step(bits.next(rng));
        sites.push(cur);
        steps += 1;
    }
    Ok(PathSegment::new(sites, 0))
}

/// Exactly `horizon` steps of simple random walk on the torus; sites are reduced.
pub fn torus_srw_path<R: RngCore + ?Sized>(
    torus: TorusSpec,
    start: Site,
    horizon: u64,
    rng: &mut R,
) -> PathSegment {
    let mut bits = DirectionBits::new();
    let mut cur = torus.wrap(start);
    let mut sites = Vec::with_capacity(horizon as usize + 1);
    sites.push(cur);
    for _ in 0..horizon {
        cur = torus.step(cur, bits.next(rng));
        sites.push(cur);
    }
    PathSegment::new(sites, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ball_sites, inner_boundary, Disk, SiteSet};
    use crate::linalg::LaplaceSystem;
    use crate::rng::RngStream;
    use crate::stats::chi_square;

    #[test]
    fn stops_on_outer_boundary() {
        let inner = inner_boundary(&ball_sites(&Disk::origin(3.0).unwrap()));
        let outer_disk = Disk::origin(3.0 * std::f64::consts::E).unwrap();
        let outer = inner_boundary(&ball_sites(&outer_disk));
        let mut rng = RngStream::new(1, 0).rng();
        for &s in inner.iter().take(5) {
            let p = srw_path(s, |x| outer.contains(&x), &mut rng, 1 << 30).unwrap();
            assert!(outer.contains(&p.last().unwrap()));
            assert!(p.is_nearest_neighbor());
        }
    }

    #[test]
    fn truncation_keeps_partial_path() {
        let mut rng = RngStream::new(1, 0).rng();
        let err = srw_path(Site::ORIGIN, |_| false, &mut rng, 10).unwrap_err();
        assert_eq!(err.partial.len(), 11);
    }

    #[test]
    fn exit_from_unit_disk_is_uniform() {
        let mut rng = RngStream::new(2, 0).rng();
        let disk = Disk::origin(1.0).unwrap();
        let mut counts = [0.0; 4];
        let targets = [Site::new(2, 0), Site::new(-2, 0), Site::new(0, 2), Site::new(0, -2)];
        for _ in 0..10_000 {
            let p = srw_path(Site::ORIGIN, |x| !disk.contains(x), &mut rng, 1 << 20).unwrap();
            let end = p.last().unwrap();
            assert!(!disk.contains(end));
            if let Some(i) = targets.iter().position(|&t| t == end) {
                counts[i] += 1.0;
            }
        }
        // by symmetry the four axial exits are equally likely
        let total: f64 = counts.iter().sum();
        let expected = [total / 4.0; 4];
        assert!(chi_square(&counts, &expected).unwrap() > 0.01);
    }

    #[test]
    fn mean_exit_time_matches_linear_solve() {
        let mut rng = RngStream::new(3, 0).rng();
        for (n, reps) in [(8.0, 4000), (16.0, 1000), (32.0, 250)] {
            let disk = Disk::origin(n).unwrap();
            let samples: Vec<f64> = (0..reps)
                .map(|_| {
                    let p = srw_path(Site::ORIGIN, |x| !disk.contains(x), &mut rng, 1 << 30).unwrap();
                    (p.len() - 1) as f64
                })
                .collect();
            let mean = samples.iter().sum::<f64>() / reps as f64;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt();
            if n == 8.0 {
                let sys = LaplaceSystem::new(ball_sites(&disk));
                let u = sys.solve(&vec![1.0; sys.len()], 1e-12, 10_000).unwrap();
                let exact = u[sys.index(Site::ORIGIN).unwrap()];
                assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact}");
            }
            let ratio = mean / (n * n);
            assert!((0.8..1.3).contains(&ratio), "n={n}: {ratio}");
        }
    }

    #[test]
    fn torus_path_shape() {
        let t = TorusSpec::new(16).unwrap();
        let mut rng = RngStream::new(4, 0).rng();
        let p = torus_srw_path(t, Site::new(3, 3), 0, &mut rng);
        assert_eq!(p.len(), 1);
        let p = torus_srw_path(t, Site::new(3, 3), 1000, &mut rng);
        assert_eq!(p.len(), 1001);
        for w in p.sites.windows(2) {
            let d = t.wrap(w[1] - w[0]);
            let ok: SiteSet = (0..4).map(|k| t.wrap(Site::ORIGIN.step(k))).collect();
            assert!(ok.contains(&d));
        }
    }

    #[test]
    fn torus_occupation_is_uniform() {
        let t = TorusSpec::new(16).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        let mut counts = vec![0.0; 256];
        let mut bits = DirectionBits::new();
        let mut cur = Site::new(0, 0);
        let horizon = 10_000_000u64;
        // thin by an odd lag (the walk is periodic on an even torus) well
        // beyond the relaxation time so the samples are nearly independent
        for k in 0..horizon {
            cur = t.step(cur, bits.next(&mut rng));
            if k % 97 == 0 {
                counts[t.index(cur)] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        let expected = vec![total / 256.0; 256];
        assert!(chi_square(&counts, &expected).unwrap() > 0.01);
    }
}
