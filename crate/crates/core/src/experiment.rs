//! Experiment configuration, replica orchestration and reports.
//!
//! An experiment is described by one declarative [`ExperimentConfig`] (TOML),
//! optionally patched with `key=value` overrides. Running it expands the
//! parameter grid into cases; every `(case, replica)` job draws from the
//! stream `RngStream::new(seed, replica)` derived by the case index, so rows
//! do not depend on scheduling. Jobs run on the rayon pool and are collected
//! into a [`Batch`]; batches merge associatively and aggregates are computed
//! from the merged rows in canonical order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::couplings::{
    choose_thresholds, poisson_pmf, poisson_shift_tv, poisson_tv, poisson_tv_bound, Lemma2Pipeline, Thresholds,
};
use crate::error::{Error, Result};
use crate::excursions::{iid_coverage_trial, psi, torus_excursion_experiment, torus_side};
use crate::interlacements::{BundleSampler, VacantSampler};
use crate::lattice::{ball_sites, Disk, Site, SiteSet, TorusSpec};
use crate::potential::{
    capacity, conditional_harmonic_measure, harmonic_measure, harmonic_measure_far, PotentialTable, TorusKernel,
};
use crate::rng::RngStream;
use crate::slt::{slt_generate, torus_dominance_trial, PointPool, TorusExcursionDensities};
use crate::stats::{
    chi_square_pooled, downward_threshold, ks_distance, normalize_n, phi, sample_n, scale_ball, wilson_ci, NMode,
    NSampleSpec,
};
use crate::walks::DEFAULT_STEP_BUDGET;

/// Build identifier: crate version and the source revision when known.
pub const BUILD_ID: &str = env!("INTERLACE_BUILD_ID");

/// Confidence level of every interval in a report.
pub const LEVEL: f64 = 0.99;

/// The experiments a config can name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    PoissonTv,
    HmClose,
    CapacityScan,
    TorusExcursions,
    IidNoncover,
    SltMarginal,
    SltDominance,
    RiVacant,
    XiLaw,
    Lemma2,
    NDistribution,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 11] = [
        ExperimentId::PoissonTv,
        ExperimentId::HmClose,
        ExperimentId::CapacityScan,
        ExperimentId::TorusExcursions,
        ExperimentId::IidNoncover,
        ExperimentId::SltMarginal,
        ExperimentId::SltDominance,
        ExperimentId::RiVacant,
        ExperimentId::XiLaw,
        ExperimentId::Lemma2,
        ExperimentId::NDistribution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::PoissonTv => "poisson-tv",
            ExperimentId::HmClose => "hm-close",
            ExperimentId::CapacityScan => "capacity-scan",
            ExperimentId::TorusExcursions => "torus-excursions",
            ExperimentId::IidNoncover => "iid-noncover",
            ExperimentId::SltMarginal => "slt-marginal",
            ExperimentId::SltDominance => "slt-dominance",
            ExperimentId::RiVacant => "ri-vacant",
            ExperimentId::XiLaw => "xi-law",
            ExperimentId::Lemma2 => "lemma2",
            ExperimentId::NDistribution => "n-distribution",
        }
    }

    /// Whether every case is a single exact computation (one replica).
    pub fn deterministic(self) -> bool {
        matches!(
            self,
            ExperimentId::PoissonTv | ExperimentId::HmClose | ExperimentId::CapacityScan
        )
    }

    /// Parameter keys the experiment reads.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            ExperimentId::PoissonTv => &["lambda", "h"],
            ExperimentId::HmClose => &["n", "gamma", "R_far"],
            ExperimentId::CapacityScan => &["s"],
            ExperimentId::TorusExcursions => &["n", "gamma", "beta", "replicas"],
            ExperimentId::IidNoncover => &["n", "gamma", "beta", "replicas", "budget"],
            ExperimentId::SltMarginal => &["n", "samples", "replicas"],
            ExperimentId::SltDominance => &["n", "gamma", "beta", "replicas"],
            ExperimentId::RiVacant => &["s", "alpha", "replicas", "R_kill", "kill_factor"],
            ExperimentId::XiLaw => &["alpha", "replicas", "R_kill"],
            ExperimentId::Lemma2 => &["n", "alpha", "epsilon", "replicas", "samples", "kill_factor"],
            ExperimentId::NDistribution => &["ln_s", "s", "mode", "replicas"],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Validation(vec![format!("experiment: unknown id `{s}`")]))
    }
}

/// Report formats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
    Plotdata,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "plotdata" => Ok(Format::Plotdata),
            _ => Err(Error::Validation(vec![format!("format: unknown format `{s}`")])),
        }
    }
}

/// A scalar or a list in the config file; always a list in memory.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Grid<T>(pub Vec<T>);

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Grid<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OneOrMany<T> {
            One(T),
            Many(Vec<T>),
        }
        Ok(match OneOrMany::deserialize(d)? {
            OneOrMany::One(v) => Grid(vec![v]),
            OneOrMany::Many(v) => Grid(v),
        })
    }
}

/// Typed experiment parameters; unset keys take per-experiment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Grid<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Grid<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_s: Option<Grid<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Grid<f64>>,
    /// Shifts as multiples of `√λ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Grid<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(rename = "R_far", default, skip_serializing_if = "Option::is_none")]
    pub r_far: Option<u32>,
    #[serde(rename = "R_kill", default, skip_serializing_if = "Option::is_none")]
    pub r_kill: Option<f64>,
    /// Kill radius as a multiple of the window (or ball) radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kill_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<NMode>,
    /// Step budget of each simulated walk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
}

impl Params {
    fn is_set(&self, key: &str) -> bool {
        match key {
            "n" => self.n.is_some(),
            "s" => self.s.is_some(),
            "ln_s" => self.ln_s.is_some(),
            "lambda" => self.lambda.is_some(),
            "h" => self.h.is_some(),
            "gamma" => self.gamma.is_some(),
            "beta" => self.beta.is_some(),
            "alpha" => self.alpha.is_some(),
            "epsilon" => self.epsilon.is_some(),
            "replicas" => self.replicas.is_some(),
            "samples" => self.samples.is_some(),
            "R_far" => self.r_far.is_some(),
            "R_kill" => self.r_kill.is_some(),
            "kill_factor" => self.kill_factor.is_some(),
            "mode" => self.mode.is_some(),
            "budget" => self.budget.is_some(),
            _ => false,
        }
    }

    const KEYS: [&'static str; 16] = [
        "n",
        "s",
        "ln_s",
        "lambda",
        "h",
        "gamma",
        "beta",
        "alpha",
        "epsilon",
        "replicas",
        "samples",
        "R_far",
        "R_kill",
        "kill_factor",
        "mode",
        "budget",
    ];

    /// Fill the defaults of `id`.
    fn with_defaults(&self, id: ExperimentId) -> Params {
        use ExperimentId::*;
        let e = std::f64::consts::E;
        let mut p = self.clone();
        let grid_n = |v: &[u32]| Some(Grid(v.to_vec()));
        let grid_f = |v: &[f64]| Some(Grid(v.to_vec()));
        match id {
            PoissonTv => {
                p.lambda = p.lambda.or(grid_f(&[1.0, 4.0, 100.0, 1e4]));
                p.h = p.h.or(grid_f(&[0.1, 1.0, 2.0]));
            }
            HmClose => {
                p.n = p.n.or(grid_n(&[8, 16, 32]));
                p.gamma = p.gamma.or(Some(e));
            }
            CapacityScan => p.s = p.s.or(grid_f(&[200.0, 400.0, 800.0])),
            TorusExcursions | IidNoncover | SltDominance => {
                p.n = p.n.or(grid_n(&[16, 32, 64]));
                p.gamma = p.gamma.or(Some(e));
                p.beta = p.beta.or(Some(1.0));
                p.replicas = p.replicas.or(Some(if id == TorusExcursions { 50 } else { 200 }));
            }
            SltMarginal => {
                p.n = p.n.or(grid_n(&[16]));
                p.samples = p.samples.or(Some(5));
                p.replicas = p.replicas.or(Some(10_000));
            }
            RiVacant => {
                p.s = p.s.or(grid_f(&[64.0, 128.0, 256.0]));
                p.alpha = p.alpha.or(Some(1.0));
                p.replicas = p.replicas.or(Some(200));
                if p.r_kill.is_none() {
                    p.kill_factor = p.kill_factor.or(Some(2.0));
                }
            }
            XiLaw => {
                p.alpha = p.alpha.or(Some(1.0));
                p.replicas = p.replicas.or(Some(10_000));
            }
            Lemma2 => {
                p.n = p.n.or(grid_n(&[16, 32, 64]));
                p.alpha = p.alpha.or(Some(0.25));
                p.epsilon = p.epsilon.or(Some(0.2));
                p.replicas = p.replicas.or(Some(1000));
                p.samples = p.samples.or(Some(1000));
                p.kill_factor = p.kill_factor.or(Some(2.0));
            }
            NDistribution => {
                p.mode = p.mode.or(Some(NMode::Asymptotic));
                if p.mode == Some(NMode::Asymptotic) {
                    p.ln_s = p.ln_s.or(grid_f(&[25.0, 100.0, 400.0]));
                } else {
                    p.s = p.s.or(grid_f(&[200.0, 400.0, 800.0]));
                }
                p.replicas = p.replicas.or(Some(100_000));
            }
        }
        p
    }
}

fn default_truncation_fraction() -> f64 {
    0.01
}

/// One experiment: id, seed, parameters and output settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    /// Mandatory; an absent seed fails validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    /// Largest tolerated fraction of replicas ending in a truncated walk.
    #[serde(default = "default_truncation_fraction")]
    pub max_truncation_fraction: f64,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId, seed: u64) -> Self {
        ExperimentConfig {
            experiment,
            seed: Some(seed),
            params: Params::default(),
            out: None,
            format: Format::Csv,
            max_truncation_fraction: default_truncation_fraction(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(vec![format!("config: {}", e.message())]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `key=value`; parameter keys go to `[params]`, the rest to the top
    /// level. Values are parsed as TOML, comma lists become arrays and bare
    /// words become strings.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Validation(vec![format!("--set `{assignment}`: expected key=value")]))?;
        let (key, raw) = (key.trim(), raw.trim());
        let parse = |text: &str| -> Option<toml::Value> {
            toml::from_str::<toml::Table>(&format!("v = {text}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
        };
        let value = parse(raw)
            .or_else(|| raw.contains(',').then(|| parse(&format!("[{raw}]"))).flatten())
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut doc = toml::Value::try_from(&*self).expect("config serializes");
        let top = doc.as_table_mut().expect("table");
        if Params::KEYS.contains(&key) {
            top.entry("params")
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .expect("params table")
                .insert(key.to_string(), value);
        } else {
            top.insert(key.to_string(), value);
        }
        *self = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Validation(vec![format!("--set {key}: {}", e.message())]))?;
        Ok(())
    }

    /// Check every field; all offending fields are reported together.
    pub fn validate(&self) -> Result<Resolved> {
        let id = self.experiment;
        let mut errs = Vec::new();
        if self.seed.is_none() {
            errs.push("seed: required".to_string());
        }
        if !(0.0..=1.0).contains(&self.max_truncation_fraction) {
            errs.push("max_truncation_fraction: must lie in [0, 1]".into());
        }
        for key in Params::KEYS {
            if self.params.is_set(key) && !id.keys().contains(&key) {
                errs.push(format!("{key}: not a parameter of {id}"));
            }
        }
        let p = self.params.with_defaults(id);
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        let min_n = if id == ExperimentId::HmClose { 2 } else { 8 };
        if let Some(Grid(ns)) = &p.n {
            check(!ns.is_empty(), "n: empty grid");
            check(
                ns.iter().all(|&n| n >= min_n && n <= 4096),
                &format!("n: each value must lie in [{min_n}, 4096]"),
            );
        }
        if let Some(Grid(ss)) = &p.s {
            check(!ss.is_empty(), "s: empty grid");
            let lo = if id == ExperimentId::RiVacant { 16.0 } else { 3.0 };
            check(
                ss.iter().all(|&s| s.is_finite() && s >= lo && s <= 1e6),
                &format!("s: each value must lie in [{lo}, 1e6]"),
            );
        }
        if let Some(Grid(v)) = &p.ln_s {
            check(!v.is_empty(), "ln_s: empty grid");
            check(v.iter().all(|&x| x.is_finite() && x > 1.0), "ln_s: each value must exceed 1");
        }
        if let Some(Grid(v)) = &p.lambda {
            check(!v.is_empty(), "lambda: empty grid");
            check(v.iter().all(|&x| x.is_finite() && x > 0.0 && x <= 1e8), "lambda: each value must lie in (0, 1e8]");
        }
        if let Some(Grid(v)) = &p.h {
            check(!v.is_empty(), "h: empty grid");
            check(v.iter().all(|&x| x.is_finite() && x > 0.0 && x <= 10.0), "h: each multiple of √λ must lie in (0, 10]");
        }
        if let Some(g) = p.gamma {
            check(g > 1.0 && g <= 10.0, "gamma: must lie in (1, 10]");
        }
        if let Some(b) = p.beta {
            check(b > 0.0 && b.is_finite(), "beta: must be positive");
        }
        if let Some(a) = p.alpha {
            let lo_ok = if id == ExperimentId::Lemma2 { a > 0.0 } else { a >= 0.0 };
            check(lo_ok && a <= 20.0, "alpha: must lie in [0, 20] (positive for lemma2)");
        }
        if let Some(e) = p.epsilon {
            check(e > 0.0 && e < 1.0, "epsilon: must lie in (0, 1)");
        }
        if let Some(r) = p.replicas {
            check(r >= 1, "replicas: must be at least 1");
        }
        if let Some(r) = p.samples {
            check(r >= 1, "samples: must be at least 1");
        }
        if let Some(b) = p.budget {
            check(b >= 1, "budget: must be at least 1");
        }
        if let Some(k) = p.kill_factor {
            check(k > 1.0 && k <= 64.0, "kill_factor: must lie in (1, 64]");
        }
        if let Some(r) = p.r_kill {
            check(r > 1.0 && r.is_finite(), "R_kill: must exceed 1");
        }
        if let (Some(r), Some(Grid(ns))) = (p.r_far, &p.n) {
            let g = p.gamma.unwrap_or(std::f64::consts::E);
            check(
                ns.iter().all(|&n| r as f64 >= 4.0 * g * n as f64),
                "R_far: must be at least 4γn for every n",
            );
        }
        if id == ExperimentId::NDistribution && p.mode == Some(NMode::ExactCapacity) {
            check(p.ln_s.is_none(), "ln_s: exact-capacity mode takes s");
        }
        if id == ExperimentId::NDistribution && p.mode == Some(NMode::Asymptotic) {
            check(p.s.is_none(), "s: asymptotic mode takes ln_s");
        }
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        let seed = self.seed.expect("checked");
        let replicas = if id.deterministic() {
            1
        } else {
            p.replicas.expect("defaulted")
        };
        Ok(Resolved {
            id,
            seed,
            replicas,
            params: p,
        })
    }
}

/// A validated config with defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub id: ExperimentId,
    pub seed: u64,
    /// Replicas per case (1 for exact computations).
    pub replicas: u64,
    pub params: Params,
}

impl Resolved {
    fn ns(&self) -> &[u32] {
        self.params.n.as_ref().map_or(&[], |g| &g.0)
    }

    fn ss(&self) -> &[f64] {
        self.params.s.as_ref().map_or(&[], |g| &g.0)
    }

    fn gamma(&self) -> f64 {
        self.params.gamma.unwrap_or(std::f64::consts::E)
    }

    fn beta(&self) -> f64 {
        self.params.beta.unwrap_or(1.0)
    }

    fn alpha(&self) -> f64 {
        self.params.alpha.unwrap_or(1.0)
    }

    /// The grid cases, in order.
    pub fn cases(&self) -> Vec<Case> {
        use ExperimentId::*;
        match self.id {
            PoissonTv => {
                let hs = &self.params.h.as_ref().expect("defaulted").0;
                let mut v = Vec::new();
                for &l in &self.params.lambda.as_ref().expect("defaulted").0 {
                    for &h in hs {
                        v.push(Case::new(format!("lambda={l},h={h}"), Some(l)));
                    }
                }
                v
            }
            HmClose | TorusExcursions | IidNoncover | SltMarginal | SltDominance | Lemma2 => {
                self.ns().iter().map(|&n| Case::new(format!("n={n}"), Some(n as f64))).collect()
            }
            CapacityScan | RiVacant => self.ss().iter().map(|&s| Case::new(format!("s={s}"), Some(s))).collect(),
            XiLaw => XI_FIXTURES.iter().map(|f| Case::new(format!("fixture={}", f.name), None)).collect(),
            NDistribution => match self.params.mode {
                Some(NMode::ExactCapacity) => self.ss().iter().map(|&s| Case::new(format!("s={s}"), Some(s))).collect(),
                _ => {
                    let v = &self.params.ln_s.as_ref().expect("defaulted").0;
                    v.iter().map(|&l| Case::new(format!("ln_s={l}"), Some(l))).collect()
                }
            },
        }
    }

    /// Experiment-specific row columns (after `case` and `replica`).
    pub fn columns(&self) -> &'static [&'static str] {
        use ExperimentId::*;
        match self.id {
            PoissonTv => &["lambda", "h_scale", "h", "tv", "tv_bound", "shift_tv", "shift_bound", "holds"],
            HmClose => &["n", "gamma", "max_rel_dev", "bound"],
            CapacityScan => &["s", "radius", "capacity", "ratio"],
            TorusExcursions => &["n", "gamma", "beta", "m", "horizon", "count", "ratio", "covered", "uncovered"],
            IidNoncover => &["n", "gamma", "beta", "excursions", "covered", "uncovered"],
            SltMarginal => &["n", "k", "site", "x", "y"],
            SltDominance => &["n", "k_iid", "k_torus", "dominated", "contained", "min_ratio"],
            RiVacant => &["s", "alpha", "window_radius", "kill_radius", "xi", "vacant_count", "vacant_nonempty"],
            XiLaw => &["fixture", "alpha", "rate", "xi", "d_k", "censored"],
            Lemma2 => &["n", "alpha", "m0", "gamma0", "stage", "success", "xi_k", "d_k", "configs_identical"],
            NDistribution => &["ln_s", "rate", "value", "z", "below"],
        }
    }
}

/// One point of the parameter grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub label: String,
    /// Abscissa for trend plots.
    pub x: Option<f64>,
}

impl Case {
    fn new(label: String, x: Option<f64>) -> Self {
        Case { label, x }
    }
}

struct XiFixture {
    name: &'static str,
    region: f64,
    sites: fn() -> SiteSet,
}

const XI_FIXTURES: [XiFixture; 3] = [
    XiFixture {
        name: "ball-2",
        region: 8.0,
        sites: || ball_sites(&Disk::origin(2.0).expect("disk")),
    },
    XiFixture {
        name: "pair",
        region: 20.0,
        sites: || [Site::ORIGIN, Site::new(10, 0)].into_iter().collect(),
    },
    XiFixture {
        name: "far-disk",
        region: 16.0,
        sites: || ball_sites(&Disk::new(Site::new(6, 0), 1.0).expect("disk")),
    },
];

/// A report row: an ordered map of column name to value.
pub type Row = Map<String, Value>;

fn row(case: &Case, replica: u64, fields: Value) -> Row {
    let mut r = Row::new();
    r.insert("case".into(), Value::String(case.label.clone()));
    r.insert("replica".into(), json!(replica));
    if let Value::Object(m) = fields {
        r.extend(m);
    }
    r
}

/// Rows of a set of jobs, keyed by `(case, replica)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    rows: BTreeMap<(usize, u64), Vec<Row>>,
    truncated: BTreeSet<(usize, u64)>,
    interrupted: bool,
}

impl Batch {
    /// Union of two batches; associative and commutative.
    pub fn merge(mut self, other: Batch) -> Batch {
        self.rows.extend(other.rows);
        self.truncated.extend(other.truncated);
        self.interrupted |= other.interrupted;
        self
    }

    pub fn jobs(&self) -> usize {
        self.rows.len() + self.truncated.len()
    }

    pub fn truncated(&self) -> usize {
        self.truncated.len()
    }

    /// All rows in canonical order.
    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.rows.values().flatten()
    }
}

/// Aggregate statistic of one case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub case: String,
    #[serde(default)]
    pub x: Option<f64>,
    pub metric: String,
    pub trials: u64,
    pub estimate: f64,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
}

impl Aggregate {
    fn value(case: &Case, metric: &str, trials: u64, v: f64) -> Self {
        Aggregate {
            case: case.label.clone(),
            x: case.x,
            metric: metric.into(),
            trials,
            estimate: v,
            lower: None,
            upper: None,
        }
    }

    fn proportion(case: &Case, metric: &str, successes: u64, trials: u64) -> Result<Self> {
        let (lo, hi) = wilson_ci(successes, trials, LEVEL)?;
        Ok(Aggregate {
            lower: Some(lo),
            upper: Some(hi),
            ..Self::value(case, metric, trials, successes as f64 / trials as f64)
        })
    }

    fn mean(case: &Case, metric: &str, values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut a = Self::value(case, metric, values.len() as u64, mean);
        if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let z = Normal::standard().inverse_cdf(1.0 - (1.0 - LEVEL) / 2.0);
            let half = z * (var / n).sqrt();
            a.lower = Some(mean - half);
            a.upper = Some(mean + half);
        }
        a
    }
}

/// Output of [`run_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: ExperimentId,
    pub seed: u64,
    /// Parameters actually used, defaults included.
    pub params: Params,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
    pub jobs: u64,
    pub truncated: u64,
    /// Set when the run was interrupted before all jobs finished.
    pub partial: bool,
    pub wall_clock_secs: f64,
    pub build: String,
}

impl ResultRecord {
    pub fn truncation_fraction(&self) -> f64 {
        if self.jobs == 0 {
            0.0
        } else {
            self.truncated as f64 / self.jobs as f64
        }
    }

    /// Aggregates of one metric, in case order.
    pub fn metric(&self, name: &str) -> Vec<&Aggregate> {
        self.aggregates.iter().filter(|a| a.metric == name).collect()
    }
}

/// Run every case and replica of `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultRecord> {
    run_experiment_with(config, &AtomicBool::new(false))
}

/// As [`run_experiment`]; once `cancel` is set no further job starts and the
/// record is marked partial.
pub fn run_experiment_with(config: &ExperimentConfig, cancel: &AtomicBool) -> Result<ResultRecord> {
    let start = Instant::now();
    let res = config.validate()?;
    let batch = run_batch(&res, 0..res.replicas, cancel)?;
    let mut rec = assemble(&res, batch)?;
    rec.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Build the record of a (possibly merged) batch.
pub fn assemble(res: &Resolved, batch: Batch) -> Result<ResultRecord> {
    let cases = res.cases();
    let mut by_case: Vec<Vec<&Row>> = vec![Vec::new(); cases.len()];
    for (&(c, _), rows) in &batch.rows {
        by_case[c].extend(rows);
    }
    let aggregates = aggregate(res, &cases, &by_case)?;
    let mut columns = vec!["case".to_string(), "replica".to_string()];
    columns.extend(res.columns().iter().map(|c| c.to_string()));
    Ok(ResultRecord {
        experiment: res.id,
        seed: res.seed,
        params: res.params.clone(),
        columns,
        rows: batch.rows().cloned().collect(),
        aggregates,
        jobs: batch.jobs() as u64,
        truncated: batch.truncated() as u64,
        partial: batch.interrupted,
        wall_clock_secs: 0.0,
        build: BUILD_ID.to_string(),
    })
}

/// Run replicas `replicas` of every case.
pub fn run_batch(res: &Resolved, replicas: Range<u64>, cancel: &AtomicBool) -> Result<Batch> {
    let table = PotentialTable::shared();
    let replicas = replicas.start.min(res.replicas)..replicas.end.min(res.replicas);
    let cases = res.cases();
    let ctx = Ctx {
        seed: res.seed,
        replicas,
        cancel,
    };
    use ExperimentId::*;
    match res.id {
        PoissonTv => run_poisson_tv(res, &cases, &ctx),
        HmClose => run_hm_close(res, &cases, &ctx, &table),
        CapacityScan => run_capacity(res, &cases, &ctx, &table),
        TorusExcursions => run_torus(res, &cases, &ctx),
        IidNoncover => run_iid_noncover(res, &cases, &ctx, &table),
        SltMarginal => run_slt_marginal(res, &cases, &ctx, &table),
        SltDominance => run_slt_dominance(res, &cases, &ctx, &table),
        RiVacant => run_ri_vacant(res, &cases, &ctx, &table),
        XiLaw => run_xi_law(res, &cases, &ctx, &table),
        Lemma2 => run_lemma2(res, &cases, &ctx, &table),
        NDistribution => run_n_distribution(res, &cases, &ctx, &table),
    }
}

struct Ctx<'c> {
    seed: u64,
    replicas: Range<u64>,
    cancel: &'c AtomicBool,
}

impl Ctx<'_> {
    /// Run `job(case, replica, stream)` for every case with prepared state.
    fn run<S: Sync>(
        &self,
        cases: &[Case],
        setup: &[S],
        job: impl Fn(&Case, &S, u64, &RngStream) -> Result<Vec<Row>> + Sync,
    ) -> Result<Batch> {
        let jobs: Vec<(usize, u64)> = (0..cases.len())
            .flat_map(|c| self.replicas.clone().map(move |r| (c, r)))
            .collect();
        let outcomes: Vec<((usize, u64), Option<Result<Vec<Row>>>)> = jobs
            .into_par_iter()
            .map(|(c, r)| {
                if self.cancel.load(Ordering::Relaxed) {
                    return ((c, r), None);
                }
                let stream = RngStream::new(self.seed, r).derive(c as u64);
                ((c, r), Some(job(&cases[c], &setup[c], r, &stream)))
            })
            .collect();
        let mut batch = Batch::default();
        for (key, out) in outcomes {
            match out {
                None => batch.interrupted = true,
                Some(Ok(rows)) => {
                    batch.rows.insert(key, rows);
                }
                Some(Err(Error::Truncated { .. })) => {
                    batch.truncated.insert(key);
                }
                Some(Err(e)) => return Err(e),
            }
        }
        Ok(batch)
    }
}

fn run_poisson_tv(res: &Resolved, cases: &[Case], ctx: &Ctx) -> Result<Batch> {
    let hs = &res.params.h.as_ref().expect("defaulted").0;
    let setup: Vec<(f64, f64)> = res.params.lambda.as_ref().expect("defaulted").0.iter()
        .flat_map(|&l| hs.iter().map(move |&h| (l, h)))
        .collect();
    ctx.run(cases, &setup, |case, &(lambda, mult), r, _| {
        let h = mult * lambda.sqrt();
        let tv = poisson_tv(lambda, lambda + h)?;
        let bound = poisson_tv_bound(lambda, lambda + h);
        let shift = poisson_shift_tv(lambda)?;
        let shift_bound = 1.0 / (2.0 * lambda.sqrt());
        Ok(vec![row(
            case,
            r,
            json!({
                "lambda": lambda, "h_scale": mult, "h": h, "tv": tv, "tv_bound": bound,
                "shift_tv": shift, "shift_bound": shift_bound,
                "holds": tv <= bound && shift <= shift_bound,
            }),
        )])
    })
}

fn run_hm_close(res: &Resolved, cases: &[Case], ctx: &Ctx, table: &PotentialTable) -> Result<Batch> {
    let gamma = res.gamma();
    let r_far = res.params.r_far;
    ctx.run(cases, res.ns(), |case, &n, r, _| {
        let ball = ball_sites(&Disk::origin(n as f64)?);
        let container = ball_sites(&Disk::origin(gamma * n as f64)?);
        let cond = conditional_harmonic_measure(&ball, &container, None)?;
        let hm = match r_far {
            Some(rf) => harmonic_measure_far(&ball, rf)?,
            None => harmonic_measure(&ball, table)?,
        };
        let dev = hm
            .support()
            .iter()
            .zip(hm.weights())
            .map(|(&y, &w)| (cond.weight_of(y) / w - 1.0).abs())
            .fold(0.0, f64::max);
        Ok(vec![row(
            case,
            r,
            json!({"n": n, "gamma": gamma, "max_rel_dev": dev, "bound": 5.0 / n as f64}),
        )])
    })
}

fn run_capacity(res: &Resolved, cases: &[Case], ctx: &Ctx, table: &PotentialTable) -> Result<Batch> {
    ctx.run(cases, res.ss(), |case, &s, r, _| {
        let disk = scale_ball(s)?;
        let mut set = ball_sites(&disk);
        set.insert(Site::ORIGIN);
        let cap = capacity(&set, table)?;
        let ratio = cap * std::f64::consts::PI / (2.0 * s.ln());
        Ok(vec![row(
            case,
            r,
            json!({"s": s, "radius": disk.radius, "capacity": cap, "ratio": ratio}),
        )])
    })
}

fn run_torus(res: &Resolved, cases: &[Case], ctx: &Ctx) -> Result<Batch> {
    let (gamma, beta) = (res.gamma(), res.beta());
    ctx.run(cases, res.ns(), |case, &n, r, stream| {
        let rec = torus_excursion_experiment(n, gamma, beta, &mut stream.rng(), false)?;
        let predicted = 2.0 * (n as f64).ln().powi(2) / gamma.ln();
        Ok(vec![row(
            case,
            r,
            json!({
                "n": n, "gamma": gamma, "beta": beta, "m": rec.m, "horizon": rec.horizon,
                "count": rec.count, "ratio": rec.count as f64 / predicted,
                "covered": rec.covered, "uncovered": rec.uncovered_count,
            }),
        )])
    })
}

fn run_iid_noncover(res: &Resolved, cases: &[Case], ctx: &Ctx, table: &PotentialTable) -> Result<Batch> {
    let (gamma, beta) = (res.gamma(), res.beta());
    let budget = res.params.budget.unwrap_or(DEFAULT_STEP_BUDGET);
    let setup = res
        .ns()
        .iter()
        .map(|&n| {
            let hm = harmonic_measure(&ball_sites(&Disk::origin(n as f64)?), table)?;
            let count = psi(n as f64, beta, gamma)?.ceil().max(0.0) as usize;
            Ok((n, hm, count))
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.run(cases, &setup, |case, (n, hm, count), r, stream| {
        let cov = iid_coverage_trial(*n, gamma, *count, hm, &mut stream.rng(), budget)?;
        Ok(vec![row(
            case,
            r,
            json!({
                "n": n, "gamma": gamma, "beta": beta, "excursions": count,
                "covered": cov.complete(), "uncovered": cov.uncovered_count(),
            }),
        )])
    })
}

fn run_slt_marginal(res: &Resolved, cases: &[Case], ctx: &Ctx, table: &PotentialTable) -> Result<Batch> {
    let k_max = res.params.samples.expect("defaulted") as usize;
    let setup = res
        .ns()
        .iter()
        .map(|&n| Ok((n, harmonic_measure(&ball_sites(&Disk::origin(n as f64)?), table)?)))
        .collect::<Result<Vec<_>>>()?;
    ctx.run(cases, &setup, |case, (n, hm), r, stream| {
        let mut pool = PointPool::new(hm.support().to_vec(), stream.clone());
        let (entries, _) = slt_generate(&mut pool, |_, _, _| Ok(hm.weights().to_vec()), k_max)?;
        Ok(entries
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let site = hm.support().iter().position(|s| s == e).expect("entry on support");
                row(case, r, json!({"n": n, "k": k + 1, "site": site, "x": e.x, "y": e.y}))
            })
            .collect())
    })
}

fn run_slt_dominance(res: &Resolved, cases: &[Case], ctx: &Ctx, table: &PotentialTable) -> Result<Batch> {
    let (gamma, beta) = (res.gamma(), res.beta());
    let kernels = res
        .ns()
        .iter()
        .map(|&n| TorusKernel::new(TorusSpec::new(torus_side(n, gamma))?))
        .collect::<Result<Vec<_>>>()?;
    let setup = res
        .ns()
        .iter()
        .zip(&kernels)
        .map(|(&n, kernel)| {
            let dens = TorusExcursionDensities::new(kernel, n, gamma, RngStream::new(0, 0))?;
            let hm = harmonic_measure(&ball_sites(&Disk::origin(n as f64)?), table)?;
            let w: Vec<f64> = dens.boundary().iter().map(|&s| hm.weight_of(s)).collect();
            let k_iid = psi(n as f64, beta, gamma)?.ceil().max(0.0) as usize;
            let k_torus = psi(n as f64, beta / 2.0, gamma)?.ceil().max(0.0) as usize;
            Ok((n, dens, w, k_iid, k_torus))
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.run(cases, &setup, |case, (n, dens, w, k_iid, k_torus), r, stream| {
        let d = torus_dominance_trial(dens, w, *k_iid, *k_torus, stream)?;
        Ok(vec![row(
            case,
            r,
            json!({
                "n": n, "k_iid": d.k_iid, "k_torus": d.k_torus, "dominated": d.dominated,
                "contained": d.contained, "min_ratio": d.min_ratio,
            }),
        )])
    })
}

fn run_ri_vacant(res: &Resolved, cases: &[Case], ctx: &Ctx, table: &PotentialTable) -> Result<Batch> {
    let alpha = res.alpha();
    let setup = res
        .ss()
        .iter()
        .map(|&s| {
            let window = scale_ball(s)?;
            let kill = res
                .params
                .r_kill
                .unwrap_or_else(|| res.params.kill_factor.unwrap_or(2.0) * window.radius);
            Ok((s, window.radius, kill, VacantSampler::new(table, &window, alpha, kill)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.run(cases, &setup, |case, (s, radius, kill, sampler), r, stream| {
        let v = sampler.sample(&mut stream.rng())?;
        Ok(vec![row(
            case,
            r,
            json!({
                "s": s, "alpha": alpha, "window_radius": radius, "kill_radius": kill,
                "xi": v.bundle.xi_k(), "vacant_count": v.vacant.len(), "vacant_nonempty": !v.vacant.is_empty(),
            }),
        )])
    })
}

fn run_xi_law(res: &Resolved, cases: &[Case], ctx: &Ctx, table: &PotentialTable) -> Result<Batch> {
    let alpha = res.alpha();
    let setup = XI_FIXTURES
        .iter()
        .map(|f| {
            let region = res.params.r_kill.unwrap_or(f.region);
            BundleSampler::new(table, &(f.sites)(), alpha, Disk::origin(region)?).map(|b| (f.name, b))
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.run(cases, &setup, |case, (name, sampler), r, stream| {
        let b = sampler.sample(&mut stream.rng())?;
        let d_k = (b.xi_k() > 0 && !b.censored()).then(|| b.d_k());
        Ok(vec![row(
            case,
            r,
            json!({
                "fixture": name, "alpha": alpha, "rate": sampler.rate(), "xi": b.xi_k(),
                "d_k": d_k, "censored": b.censored(),
            }),
        )])
    })
}

/// The set `K` of the coupling experiment.
pub fn lemma2_fixture() -> SiteSet {
    ball_sites(&Disk::origin(2.0).expect("disk"))
}

/// Thresholds shared by every `n`: chosen once on the region of the largest
/// `n`, from a stream reserved for the pilot.
fn lemma2_thresholds(res: &Resolved, table: &PotentialTable) -> Result<Thresholds> {
    let n_max = *res.ns().iter().max().expect("nonempty grid");
    let kill = res.params.kill_factor.unwrap_or(2.0) * n_max as f64;
    let sampler = BundleSampler::new(table, &lemma2_fixture(), res.alpha(), Disk::origin(kill)?)?;
    let pilot = res.params.samples.expect("defaulted") as usize;
    let mut rng = RngStream::new(res.seed, u64::MAX).rng();
    choose_thresholds(&sampler, res.params.epsilon.expect("defaulted"), pilot, &mut rng)
}

fn run_lemma2(res: &Resolved, cases: &[Case], ctx: &Ctx, table: &PotentialTable) -> Result<Batch> {
    let alpha = res.alpha();
    let th = lemma2_thresholds(res, table)?;
    let k = lemma2_fixture();
    let setup = res
        .ns()
        .iter()
        .map(|&n| {
            let kill = res.params.kill_factor.unwrap_or(2.0) * n as f64;
            Ok((n, Lemma2Pipeline::new(table, &k, alpha, n, th.m0, th.gamma0, kill)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.run(cases, &setup, |case, (n, pipe), r, stream| {
        let out = pipe.run(&mut stream.rng())?;
        Ok(vec![row(
            case,
            r,
            json!({
                "n": n, "alpha": alpha, "m0": th.m0, "gamma0": th.gamma0, "stage": out.stage.name(),
                "success": out.success, "xi_k": out.xi_k, "d_k": out.d_k,
                "configs_identical": out.configs_identical,
            }),
        )])
    })
}

fn run_n_distribution(res: &Resolved, cases: &[Case], ctx: &Ctx, table: &PotentialTable) -> Result<Batch> {
    let specs = match res.params.mode {
        Some(NMode::ExactCapacity) => res
            .ss()
            .iter()
            .map(|&s| NSampleSpec::exact_capacity(s, table))
            .collect::<Result<Vec<_>>>()?,
        _ => res.params.ln_s.as_ref().expect("defaulted").0.iter()
            .map(|&l| NSampleSpec::asymptotic(l))
            .collect::<Result<Vec<_>>>()?,
    };
    ctx.run(cases, &specs, |case, spec, r, stream| {
        let v = sample_n(spec, &mut stream.rng());
        Ok(vec![row(
            case,
            r,
            json!({
                "ln_s": spec.ln_s, "rate": spec.rate, "value": v, "z": normalize_n(v, spec.ln_s),
                "below": v <= downward_threshold(spec.ln_s),
            }),
        )])
    })
}

fn get_f64(r: &Row, k: &str) -> Option<f64> {
    r.get(k).and_then(Value::as_f64)
}

fn get_bool(r: &Row, k: &str) -> bool {
    r.get(k).and_then(Value::as_bool).unwrap_or(false)
}

fn count(rows: &[&Row], f: impl Fn(&Row) -> bool) -> u64 {
    rows.iter().filter(|r| f(r)).count() as u64
}

fn aggregate(res: &Resolved, cases: &[Case], by_case: &[Vec<&Row>]) -> Result<Vec<Aggregate>> {
    use ExperimentId::*;
    let mut out = Vec::new();
    for (case, rows) in cases.iter().zip(by_case) {
        if rows.is_empty() {
            continue;
        }
        let trials = rows.len() as u64;
        let values = |k: &str| -> Vec<f64> { rows.iter().filter_map(|r| get_f64(r, k)).collect() };
        match res.id {
            PoissonTv => {
                for k in ["tv", "tv_bound", "shift_tv", "shift_bound"] {
                    out.push(Aggregate::value(case, k, 1, values(k)[0]));
                }
                out.push(Aggregate::value(case, "margin", 1, values("tv_bound")[0] - values("tv")[0]));
            }
            HmClose => out.push(Aggregate::value(case, "max_rel_dev", 1, values("max_rel_dev")[0])),
            CapacityScan => {
                out.push(Aggregate::value(case, "capacity", 1, values("capacity")[0]));
                out.push(Aggregate::value(case, "ratio", 1, values("ratio")[0]));
            }
            TorusExcursions => {
                out.push(Aggregate::mean(case, "count", &values("count")));
                out.push(Aggregate::mean(case, "ratio", &values("ratio")));
                out.push(Aggregate::proportion(case, "noncover", count(rows, |r| !get_bool(r, "covered")), trials)?);
            }
            IidNoncover => {
                out.push(Aggregate::proportion(case, "noncover", count(rows, |r| !get_bool(r, "covered")), trials)?);
            }
            SltMarginal => {
                let n = get_f64(rows[0], "n").expect("n") as u32;
                let hm = harmonic_measure(&ball_sites(&Disk::origin(n as f64)?), &PotentialTable::shared())?;
                let k_max = rows.iter().filter_map(|r| get_f64(r, "k")).fold(0.0, f64::max) as u64;
                for k in [1, k_max] {
                    let mut obs = vec![0.0; hm.len()];
                    for r in rows.iter().filter(|r| get_f64(r, "k") == Some(k as f64)) {
                        obs[get_f64(r, "site").expect("site") as usize] += 1.0;
                    }
                    let p = chi_square_pooled(&obs, hm.weights(), 5.0)?;
                    out.push(Aggregate::value(case, &format!("chi2_p_entry{k}"), obs.iter().sum::<f64>() as u64, p));
                    if k_max == 1 {
                        break;
                    }
                }
            }
            SltDominance => {
                out.push(Aggregate::proportion(case, "dominance", count(rows, |r| get_bool(r, "dominated")), trials)?);
                let violations = count(rows, |r| get_bool(r, "dominated") && !get_bool(r, "contained"));
                out.push(Aggregate::value(case, "containment_violations", trials, violations as f64));
            }
            RiVacant => {
                let hits = count(rows, |r| get_bool(r, "vacant_nonempty"));
                out.push(Aggregate::proportion(case, "vacant_nonempty", hits, trials)?);
                out.push(Aggregate::mean(case, "vacant_count", &values("vacant_count")));
            }
            XiLaw => {
                let rate = get_f64(rows[0], "rate").expect("rate");
                let xs = values("xi");
                let hi = xs.iter().fold(0.0, |a: f64, &b| a.max(b)) as usize;
                let mut obs = vec![0.0; hi + 2];
                for &x in &xs {
                    obs[x as usize] += 1.0;
                }
                let mut pmf = if rate > 0.0 { poisson_pmf(rate, 0, hi) } else { vec![1.0; 1] };
                pmf.resize(hi + 1, 0.0);
                let tail = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
                pmf.push(tail);
                let (o, e): (Vec<f64>, Vec<f64>) = obs.into_iter().zip(pmf).filter(|(_, e)| *e > 0.0).unzip();
                let p = if o.len() < 2 { 1.0 } else { chi_square_pooled(&o, &e, 5.0)? };
                out.push(Aggregate::value(case, "chi2_p", trials, p));
                out.push(Aggregate::mean(case, "xi", &xs));
                out.push(Aggregate::value(case, "rate", trials, rate));
            }
            Lemma2 => {
                out.push(Aggregate::proportion(case, "failure", count(rows, |r| !get_bool(r, "success")), trials)?);
                let violations = count(rows, |r| {
                    get_bool(r, "success") && r.get("configs_identical") != Some(&Value::Bool(true))
                });
                out.push(Aggregate::value(case, "identity_violations", trials, violations as f64));
            }
            NDistribution => {
                let mut z = values("z");
                let ks = ks_distance(&mut z, phi)?;
                out.push(Aggregate::value(case, "ks", trials, ks));
                out.push(Aggregate::proportion(case, "downward", count(rows, |r| get_bool(r, "below")), trials)?);
                out.push(Aggregate::mean(case, "value", &values("value")));
                let ln_s = get_f64(rows[0], "ln_s").expect("ln_s");
                let l = ln_s - 2.0 * ln_s.ln();
                if l > 1.0 {
                    out.push(Aggregate::value(case, "psi_star", trials, 2.0 * l * l - 3.0 * l * l.ln()));
                }
                out.push(Aggregate::value(case, "ri_budget", trials, downward_threshold(ln_s)));
            }
        }
    }
    Ok(out)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Rows as CSV with a header line; an empty record gives the header alone.
pub fn write_csv(record: &ResultRecord, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&record.columns)?;
    for r in &record.rows {
        out.write_record(record.columns.iter().map(|c| r.get(c).map(cell).unwrap_or_default()))?;
    }
    out.flush()?;
    Ok(())
}

/// Aggregates as CSV.
pub fn write_aggregates_csv(record: &ResultRecord, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["case", "x", "metric", "trials", "estimate", "lower", "upper"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for a in &record.aggregates {
        out.write_record([
            a.case.clone(),
            opt(a.x),
            a.metric.clone(),
            a.trials.to_string(),
            a.estimate.to_string(),
            opt(a.lower),
            opt(a.upper),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json(record: &ResultRecord, mut w: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, record)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_json(r: impl Read) -> Result<ResultRecord> {
    Ok(serde_json::from_reader(r)?)
}

/// One plotted curve.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A figure: one plotdata file.
#[derive(Clone, Debug, PartialEq)]
pub struct Figure {
    pub name: String,
    pub series: Vec<Series>,
}

/// Thresholds of the empirical-distribution figure of `n-distribution`.
pub fn n_distribution_grid() -> Vec<f64> {
    (-12..=12).map(|i| i as f64 * 0.25).collect()
}

/// Figures derived from a record.
pub fn figures(record: &ResultRecord) -> Vec<Figure> {
    let by_case = |case: &str| -> Vec<&Row> {
        record
            .rows
            .iter()
            .filter(|r| r.get("case").and_then(Value::as_str) == Some(case))
            .collect()
    };
    let mut cases: Vec<String> = Vec::new();
    for r in &record.rows {
        let c = r.get("case").and_then(Value::as_str).unwrap_or_default();
        if cases.last().map(String::as_str) != Some(c) {
            cases.push(c.to_string());
        }
    }
    match record.experiment {
        ExperimentId::PoissonTv => {
            let mut scales: Vec<f64> = Vec::new();
            for r in &record.rows {
                let h = get_f64(r, "h_scale").unwrap_or(0.0);
                if !scales.contains(&h) {
                    scales.push(h);
                }
            }
            let curve = |label: String, key: &str, filter: &dyn Fn(&Row) -> bool| Series {
                label,
                points: record
                    .rows
                    .iter()
                    .filter(|r| filter(r))
                    .filter_map(|r| Some((get_f64(r, "lambda")?, get_f64(r, key)?)))
                    .collect(),
            };
            let mut tv = Vec::new();
            for &h in &scales {
                let at = move |r: &Row| get_f64(r, "h_scale") == Some(h);
                tv.push(curve(format!("tv h={h}√λ"), "tv", &at));
                tv.push(curve(format!("bound h={h}√λ"), "tv_bound", &at));
            }
            let first = scales.first().copied();
            let at_first = move |r: &Row| get_f64(r, "h_scale") == first;
            let shift = vec![
                curve("shift tv".into(), "shift_tv", &at_first),
                curve("shift bound".into(), "shift_bound", &at_first),
            ];
            vec![
                Figure {
                    name: "tv".into(),
                    series: tv,
                },
                Figure {
                    name: "shift".into(),
                    series: shift,
                },
            ]
        }
        ExperimentId::NDistribution => {
            let series = cases
                .iter()
                .map(|c| {
                    let z: Vec<f64> = by_case(c).iter().filter_map(|r| get_f64(r, "z")).collect();
                    let n = z.len() as f64;
                    let points = n_distribution_grid()
                        .into_iter()
                        .map(|t| (t, z.iter().filter(|&&v| v <= t).count() as f64 / n))
                        .collect();
                    Series {
                        label: c.clone(),
                        points,
                    }
                })
                .collect();
            vec![Figure {
                name: "ecdf".into(),
                series,
            }]
        }
        ExperimentId::XiLaw | ExperimentId::SltMarginal => {
            let key = if record.experiment == ExperimentId::XiLaw { "xi" } else { "site" };
            let series = cases
                .iter()
                .map(|c| {
                    let mut hist: BTreeMap<i64, f64> = BTreeMap::new();
                    let rows = by_case(c);
                    for r in &rows {
                        *hist.entry(get_f64(r, key).unwrap_or(0.0) as i64).or_default() += 1.0;
                    }
                    let n = rows.len() as f64;
                    Series {
                        label: c.clone(),
                        points: hist.into_iter().map(|(k, v)| (k as f64, v / n)).collect(),
                    }
                })
                .collect();
            vec![Figure {
                name: "histogram".into(),
                series,
            }]
        }
        _ => {
            let mut metrics: Vec<&str> = Vec::new();
            for a in &record.aggregates {
                if a.x.is_some() && !metrics.contains(&a.metric.as_str()) {
                    metrics.push(&a.metric);
                }
            }
            metrics
                .into_iter()
                .map(|m| Figure {
                    name: m.to_string(),
                    series: vec![Series {
                        label: m.to_string(),
                        points: record
                            .metric(m)
                            .iter()
                            .filter_map(|a| a.x.map(|x| (x, a.estimate)))
                            .collect(),
                    }],
                })
                .collect()
        }
    }
}

/// `x y` columns per series, series separated by blank lines.
pub fn write_plotdata(fig: &Figure, mut w: impl Write) -> Result<()> {
    for (i, s) in fig.series.iter().enumerate() {
        if i > 0 {
            writeln!(w, "\n")?;
        }
        writeln!(w, "# {}", s.label)?;
        for (x, y) in &s.points {
            writeln!(w, "{x} {y}")?;
        }
    }
    Ok(())
}

/// Write the record in `format` under `dir`; returns the files written.
pub fn emit_report(record: &ResultRecord, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let id = record.experiment.name();
    let mut written = Vec::new();
    let mut create = |name: String| -> Result<(PathBuf, fs::File)> {
        let path = dir.join(name);
        let f = fs::File::create(&path)?;
        written.push(path.clone());
        Ok((path, f))
    };
    match format {
        Format::Csv => {
            write_csv(record, create(format!("{id}.csv"))?.1)?;
            write_aggregates_csv(record, create(format!("{id}-aggregates.csv"))?.1)?;
        }
        Format::Json => write_json(record, create(format!("{id}.json"))?.1)?,
        Format::Plotdata => {
            for fig in figures(record) {
                write_plotdata(&fig, create(format!("{id}-{}.dat", fig.name))?.1)?;
            }
        }
    }
    Ok(written)
}
