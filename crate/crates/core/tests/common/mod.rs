//! Tiny configurations shared by the golden and acceptance suites.

#![allow(dead_code)]

use std::path::PathBuf;

use interlace::experiment::{ExperimentConfig, ExperimentId, Grid};

pub const GOLDEN_SEED: u64 = 20_240_517;

/// A run of `id` small enough for a golden file.
pub fn tiny(id: ExperimentId) -> ExperimentConfig {
    use ExperimentId::*;
    let mut c = ExperimentConfig::new(id, GOLDEN_SEED);
    let p = &mut c.params;
    match id {
        PoissonTv => {
            p.lambda = Some(Grid(vec![1.0, 4.0]));
            p.h = Some(Grid(vec![0.1, 1.0]));
        }
        HmClose => p.n = Some(Grid(vec![4, 8])),
        CapacityScan => p.s = Some(Grid(vec![50.0, 100.0])),
        TorusExcursions => {
            p.n = Some(Grid(vec![8]));
            p.replicas = Some(2);
        }
        IidNoncover => {
            p.n = Some(Grid(vec![8, 10]));
            p.replicas = Some(3);
        }
        SltMarginal => {
            p.n = Some(Grid(vec![8]));
            p.samples = Some(3);
            p.replicas = Some(4);
        }
        SltDominance => {
            p.n = Some(Grid(vec![8]));
            p.replicas = Some(3);
        }
        RiVacant => {
            p.s = Some(Grid(vec![32.0]));
            p.replicas = Some(3);
        }
        XiLaw => p.replicas = Some(5),
        Lemma2 => {
            p.n = Some(Grid(vec![16]));
            p.replicas = Some(3);
            p.samples = Some(50);
        }
        NDistribution => {
            p.ln_s = Some(Grid(vec![5.0, 10.0]));
            p.replicas = Some(10);
        }
    }
    c
}

pub fn golden_path(id: ExperimentId) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("golden")
        .join(format!("{}.csv", id.name()))
}

/// Per-replica rows of a run as CSV bytes.
pub fn rows_csv(config: &ExperimentConfig) -> Vec<u8> {
    let rec = interlace::experiment::run_experiment(config).expect("tiny run");
    let mut buf = Vec::new();
    interlace::experiment::write_csv(&rec, &mut buf).expect("csv");
    buf
}
