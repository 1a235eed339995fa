//! Acceptance suite: one PASS/FAIL line per criterion, each with its runtime
//! budget. Runs with `cargo test --test acceptance`; exits non-zero when any
//! criterion fails.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::time::{Duration, Instant};

use interlace::couplings::{poisson_shift_tv, poisson_tv, poisson_tv_bound, CountCoupling};
use interlace::experiment::{run_experiment, Aggregate, ExperimentConfig, ExperimentId, ResultRecord};
use interlace::interlacements::{alpha_thinning, noodle_config, vacant_of, visit_counts, BundleSampler, VacantSampler};
use interlace::lattice::ball_sites;
use interlace::potential::{harmonic_measure, PotentialTable, DEFAULT_RADIUS, DEFAULT_TOL};
use interlace::slt::{IidField, PointPool, SoftField};
use interlace::stats::{phi, scale_ball, wilson_ci};
use interlace::{Disk, RngStream, Site, SiteSet};

const SEED: u64 = 0x5eed_a11c;
const LEVEL: f64 = 0.99;

type Check = interlace::Result<(bool, String)>;

fn run(id: ExperimentId, edit: impl FnOnce(&mut ExperimentConfig)) -> interlace::Result<ResultRecord> {
    let mut config = ExperimentConfig::new(id, SEED);
    edit(&mut config);
    run_experiment(&config)
}

/// Aggregates of `metric` in case order.
fn series<'a>(rec: &'a ResultRecord, metric: &str) -> Vec<&'a Aggregate> {
    let s = rec.metric(metric);
    assert!(!s.is_empty(), "{}: no `{metric}` aggregates", rec.experiment);
    s
}

fn estimates(aggs: &[&Aggregate]) -> Vec<f64> {
    aggs.iter().map(|a| a.estimate).collect()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn poisson_bounds() -> Check {
    let mut worst = f64::INFINITY;
    let mut holds = true;
    for lambda in [1.0f64, 4.0, 100.0, 1e4] {
        for scale in [0.1, 1.0, 2.0] {
            let h = scale * lambda.sqrt();
            let tv = poisson_tv(lambda, lambda + h)?;
            let bound = poisson_tv_bound(lambda, lambda + h);
            holds &= tv <= bound;
            worst = worst.min(bound - tv);
        }
        let shift = poisson_shift_tv(lambda)?;
        let bound = 0.5 / lambda.sqrt();
        holds &= shift <= bound;
        worst = worst.min(bound - shift);
    }
    // the experiment reports the same comparison row by row
    let rec = run(ExperimentId::PoissonTv, |_| {})?;
    let rows_hold = rec.rows.iter().all(|r| r["holds"] == true);
    Ok((holds && rows_hold, format!("smallest margin {worst:.3e}, {} rows hold: {rows_hold}", rec.rows.len())))
}

fn potential_kernel() -> Check {
    let table = PotentialTable::compute(DEFAULT_RADIUS, DEFAULT_TOL)?;
    let residual = table.harmonic_residual(50.0);
    let a10 = table.value(Site::new(1, 0));
    let a11 = table.value(Site::new(1, 1));
    let pass = residual < 1e-9 && (a10 - 1.0).abs() <= 1e-6 && (a11 - 4.0 / PI).abs() <= 1e-4;
    Ok((
        pass,
        format!("residual {residual:.2e}, a(1,0) = {a10:.9}, a(1,1) − 4/π = {:.2e}", a11 - 4.0 / PI),
    ))
}

fn hm_close() -> Check {
    let rec = run(ExperimentId::HmClose, |_| {})?;
    let dev = estimates(&series(&rec, "max_rel_dev"));
    let pass = dev.len() == 3 && strictly_decreasing(&dev) && dev[2] <= 5.0 / 32.0;
    Ok((pass, format!("max relative deviation over n = 8, 16, 32: {}", fmt(&dev))))
}

fn capacity_scan() -> Check {
    let rec = run(ExperimentId::CapacityScan, |_| {})?;
    let ratio = estimates(&series(&rec, "ratio"));
    let in_band = ratio.iter().all(|r| (0.7..=1.3).contains(r));
    let dist: Vec<f64> = ratio.iter().map(|r| (r - 1.0).abs()).collect();
    let toward_one = nonincreasing(&dist);
    Ok((
        in_band && toward_one,
        format!("ratio over s = 200, 400, 800: {} (in band: {in_band}, toward 1: {toward_one})", fmt(&ratio)),
    ))
}

fn n_distribution() -> Check {
    let rec = run(ExperimentId::NDistribution, |_| {})?;
    let ks = estimates(&series(&rec, "ks"));
    let down = series(&rec, "downward");
    let at_100 = down
        .iter()
        .find(|a| a.x == Some(100.0))
        .map(|a| a.estimate)
        .expect("ln_s = 100 case");
    let pass = ks[1] <= 0.1 && strictly_decreasing(&ks) && (0.25..=0.37).contains(&at_100);
    Ok((
        pass,
        format!(
            "KS over ln s = 25, 100, 400: {}; P[N ≤ threshold] at ln s = 100: {at_100:.4} (Φ(−1/2) = {:.4})",
            fmt(&ks),
            phi(-0.5)
        ),
    ))
}

fn torus_excursions() -> Check {
    let rec = run(ExperimentId::TorusExcursions, |_| {})?;
    let ratio = estimates(&series(&rec, "ratio"));
    let dist: Vec<f64> = ratio.iter().map(|r| (r - 1.0).abs()).collect();
    let pass = (0.6..=1.4).contains(&ratio[1]) && nonincreasing(&dist);
    Ok((pass, format!("count ratio over n = 16, 32, 64: {}", fmt(&ratio))))
}

fn iid_noncover() -> Check {
    let rec = run(ExperimentId::IidNoncover, |_| {})?;
    let nc = series(&rec, "noncover");
    let p = estimates(&nc);
    let lower = nc[2].lower.expect("Wilson interval");
    let pass = nondecreasing(&p) && lower >= 0.5;
    Ok((
        pass,
        format!("non-coverage over n = 16, 32, 64: {}; Wilson lower bound at n = 64: {lower:.4}", fmt(&p)),
    ))
}

fn slt() -> Check {
    // entry marginals against direct sampling
    let rec = run(ExperimentId::SltMarginal, |_| {})?;
    let first = rec.metric("chi2_p_entry1")[0].estimate;
    let last = rec.metric("chi2_p_entry5")[0].estimate;
    let marginal = first > 0.01 && last > 0.01;

    // proportional densities give a field proportional to hm, equal to the i.i.d. field
    let hm = harmonic_measure(&ball_sites(&Disk::origin(16.0)?), &PotentialTable::shared())?;
    let mut pool = PointPool::new(hm.support().to_vec(), RngStream::new(SEED, 1));
    let mut field = SoftField::new(&pool);
    let mut cone_err = 0.0f64;
    for _ in 0..200 {
        field.advance(&mut pool, hm.weights())?;
        let c = field.value(0) / hm.weights()[0];
        let iid = IidField::from_soft(&field, &hm);
        for (i, w) in hm.weights().iter().enumerate() {
            cone_err = cone_err.max((field.value(i) / w - c).abs() / c);
            cone_err = cone_err.max((iid.value_at(i) - field.value(i)).abs() / field.value(i));
        }
    }
    let cone = cone_err <= 1e-12;

    let rec = run(ExperimentId::SltDominance, |_| {})?;
    let dom = estimates(&series(&rec, "dominance"));
    let trend = nondecreasing(&dom);
    Ok((
        marginal && cone && trend,
        format!(
            "χ² p (first, fifth entry): {first:.3}, {last:.3}; cone relative error {cone_err:.1e}; \
             dominance over n = 16, 32, 64: {}",
            fmt(&dom)
        ),
    ))
}

/// The sets `K` of the ξ-law experiment with their kill radii.
fn xi_fixtures() -> Vec<(&'static str, SiteSet, f64)> {
    vec![
        ("ball-2", ball_sites(&Disk::origin(2.0).unwrap()), 8.0),
        ("pair", [Site::ORIGIN, Site::new(10, 0)].into_iter().collect(), 20.0),
        ("far-disk", ball_sites(&Disk::new(Site::new(6, 0), 1.0).unwrap()), 16.0),
    ]
}

fn interlacement_laws() -> Check {
    let rec = run(ExperimentId::XiLaw, |_| {})?;
    let ps = estimates(&series(&rec, "chi2_p"));
    let chi2 = ps.len() == 3 && ps.iter().all(|&p| p > 0.01);

    // local times rebuilt from noodles equal direct visit counts, on K and on a larger host
    let table = PotentialTable::shared();
    let mut windows = 0;
    let mut mismatches = 0;
    for (i, (_, k, region)) in xi_fixtures().into_iter().enumerate() {
        let sampler = BundleSampler::new(&table, &k, 1.0, Disk::origin(region)?)?;
        let host = ball_sites(&Disk::origin(region / 2.0)?);
        let mut rng = RngStream::new(SEED, 2).derive(i as u64).rng();
        for _ in 0..2000 {
            let paths = sampler.sample(&mut rng)?.paths();
            for window in [&k, &host] {
                windows += 1;
                if noodle_config(&paths, window).local_times() != visit_counts(&paths, window) {
                    mismatches += 1;
                }
            }
        }
    }

    // thinning to a lower level never removes vacant sites
    let window = scale_ball(64.0)?;
    let sampler = VacantSampler::new(&table, &window, 2.0, 2.0 * window.radius)?;
    let mut rng = RngStream::new(SEED, 3).rng();
    let mut violations = 0;
    for _ in 0..10_000 {
        let v = sampler.sample(&mut rng)?;
        let b1 = alpha_thinning(&v.bundle, 1.0, &mut rng)?;
        let b05 = alpha_thinning(&b1, 0.5, &mut rng)?;
        let v1 = vacant_of(sampler.window(), &b1);
        let v05 = vacant_of(sampler.window(), &b05);
        let kept = |child: &interlace::interlacements::HittingBundle, parent: &interlace::interlacements::HittingBundle| {
            child.trajectories.iter().all(|t| parent.trajectories.contains(t))
        };
        if !(v.vacant.is_subset(&v1) && v1.is_subset(&v05) && kept(&b1, &v.bundle) && kept(&b05, &b1)) {
            violations += 1;
        }
    }
    Ok((
        chi2 && mismatches == 0 && violations == 0,
        format!(
            "χ² p per fixture: {}; reconstruction mismatches {mismatches}/{windows}; nestedness violations {violations}/10000",
            fmt(&ps)
        ),
    ))
}

fn vacant_near_xs() -> Check {
    let base = run(ExperimentId::RiVacant, |_| {})?;
    let doubled = run(ExperimentId::RiVacant, |c| c.params.kill_factor = Some(4.0))?;
    let p = series(&base, "vacant_nonempty");
    let q = series(&doubled, "vacant_nonempty");
    let lowers: Vec<f64> = p.iter().map(|a| a.lower.expect("Wilson interval")).collect();
    let est = estimates(&p);
    let floor = lowers.iter().all(|&l| l >= 0.05);
    let collapsing = strictly_decreasing(&est) && est[2] == 0.0;
    let stable = p
        .iter()
        .zip(&q)
        .all(|(a, b)| (a.estimate - b.estimate).abs() < a.upper.unwrap() - a.lower.unwrap());
    Ok((
        floor && !collapsing && stable,
        format!(
            "P[vacant ≠ ∅] over s = 64, 128, 256: {} (Wilson lower {}), kill radius doubled: {}",
            fmt(&est),
            fmt(&lowers),
            fmt(&estimates(&q))
        ),
    ))
}

fn lemma2() -> Check {
    // count coupling: the empirical success rate against 1 − TV
    let mut rng = RngStream::new(SEED, 4).rng();
    let mut count_ok = true;
    let mut notes = Vec::new();
    for (li, lj, shift) in [(4.0, 4.5, 0), (30.0, 28.0, 1), (100.0, 95.0, 3)] {
        let c = CountCoupling::new(li, lj, shift)?;
        let trials = 100_000u64;
        let hits = (0..trials).filter(|_| c.sample(&mut rng).2).count() as u64;
        let (lo, hi) = wilson_ci(hits, trials, LEVEL)?;
        let target = 1.0 - c.tv();
        count_ok &= lo <= target && target <= hi;
        notes.push(format!("{target:.4}∈[{lo:.4},{hi:.4}]"));
    }

    let rec = run(ExperimentId::Lemma2, |_| {})?;
    let violations = rec
        .metric("identity_violations")
        .iter()
        .find(|a| a.x == Some(32.0))
        .map(|a| a.estimate)
        .expect("n = 32 case");
    let identical_at_32 = rec
        .rows
        .iter()
        .filter(|r| r["n"] == 32 && r["success"] == true)
        .all(|r| r["configs_identical"] == true);
    let fail = estimates(&series(&rec, "failure"));
    let trend = nonincreasing(&fail);
    Ok((
        count_ok && violations == 0.0 && identical_at_32 && trend,
        format!(
            "count coupling 1 − TV vs Wilson: {}; identity violations at n = 32: {violations}; \
             failure over n = 16, 32, 64: {}",
            notes.join(", "),
            fmt(&fail)
        ),
    ))
}

fn reproducibility() -> Check {
    let mut differing = Vec::new();
    for id in ExperimentId::ALL {
        let config = common::tiny(id);
        let first = common::rows_csv(&config);
        let second = common::rows_csv(&config);
        let stored = fs::read(common::golden_path(id)).unwrap_or_default();
        if first != second || first != stored {
            differing.push(id.name());
        }
    }
    Ok((
        differing.is_empty(),
        format!("{} experiments re-run against golden rows; differing: {differing:?}", ExperimentId::ALL.len()),
    ))
}

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Check); 12] = [
        (1, "Poisson TV bounds", Duration::from_secs(1), poisson_bounds),
        (2, "potential kernel", Duration::from_secs(60), potential_kernel),
        (3, "harmonic measure closeness", Duration::from_secs(300), hm_close),
        (4, "capacity of the far ball", Duration::from_secs(600), capacity_scan),
        (5, "excursion-count law", Duration::from_secs(60), n_distribution),
        (6, "torus excursion counts", Duration::from_secs(1800), torus_excursions),
        (7, "i.i.d. non-coverage", Duration::from_secs(1800), iid_noncover),
        (8, "soft local times", Duration::from_secs(1200), slt),
        (9, "interlacement laws", Duration::from_secs(600), interlacement_laws),
        (10, "vacant set near x_s", Duration::from_secs(3600), vacant_near_xs),
        (11, "coupling pipeline", Duration::from_secs(1800), lemma2),
        (12, "reproducibility", Duration::from_secs(300), reproducibility),
    ];
    let only: Vec<u32> = std::env::var("INTERLACE_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = Vec::new();
    let stdout = std::io::stdout();
    for (n, name, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok((ok, detail)) => (ok && secs < budget.as_secs_f64(), detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed.push(n);
        }
        let mut out = stdout.lock();
        writeln!(
            out,
            "criterion {n:>2} {}: {name}: {detail} [{secs:.1} s of {} s]",
            if pass { "PASS" } else { "FAIL" },
            budget.as_secs()
        )
        .unwrap();
        out.flush().unwrap();
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
