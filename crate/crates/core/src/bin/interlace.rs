//! Command-line experiment runner.
//!
//! ```text
//! interlace <experiment> [--config PATH] [--seed U64] [--replicas N]
//!           [--out DIR] [--format csv|json|plotdata] [--set KEY=VALUE]...
//! interlace run --config PATH [...]
//! ```
//!
//! Exit codes: 0 on success, 2 on validation errors, 3 when the fraction of
//! truncated replicas exceeds the configured limit, 1 otherwise.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use interlace::experiment::{
    emit_report, figures, run_experiment_with, write_csv, write_json, write_plotdata, ExperimentConfig, ExperimentId,
    Format, ResultRecord,
};
use interlace::Error;

#[derive(Parser)]
#[command(name = "interlace", version, about = "Random interlacement and excursion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in the config file.
    Run(Common),
    /// Exact Poisson total-variation distances against their bounds.
    PoissonTv(Common),
    /// Conditional versus unconditional harmonic measure of B(n).
    HmClose(Common),
    /// Capacity of {0} ∪ B(x_s, s/ln²s).
    CapacityScan(Common),
    /// Excursion counts and coverage of simple random walk on the torus.
    TorusExcursions(Common),
    /// Non-coverage of B(n) by i.i.d. excursions.
    IidNoncover(Common),
    /// Entrance marginals of the soft-local-time sampler.
    SltMarginal(Common),
    /// Dominance of the i.i.d. field by the torus excursion field.
    SltDominance(Common),
    /// Vacant set of random interlacements near x_s.
    RiVacant(Common),
    /// Law of the number of trajectories hitting K.
    XiLaw(Common),
    /// The staged coupling of two interlacement configurations.
    Lemma2(Common),
    /// Compound-Poisson excursion count N.
    NDistribution(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Output directory; reports go to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["csv", "json", "plotdata"])]
    format: Option<String>,
    /// Parameter override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Command {
    fn split(self) -> (Option<ExperimentId>, Common) {
        use ExperimentId::*;
        match self {
            Command::Run(c) => (None, c),
            Command::PoissonTv(c) => (Some(PoissonTv), c),
            Command::HmClose(c) => (Some(HmClose), c),
            Command::CapacityScan(c) => (Some(CapacityScan), c),
            Command::TorusExcursions(c) => (Some(TorusExcursions), c),
            Command::IidNoncover(c) => (Some(IidNoncover), c),
            Command::SltMarginal(c) => (Some(SltMarginal), c),
            Command::SltDominance(c) => (Some(SltDominance), c),
            Command::RiVacant(c) => (Some(RiVacant), c),
            Command::XiLaw(c) => (Some(XiLaw), c),
            Command::Lemma2(c) => (Some(Lemma2), c),
            Command::NDistribution(c) => (Some(NDistribution), c),
        }
    }
}

fn build_config(id: Option<ExperimentId>, args: &Common) -> interlace::Result<ExperimentConfig> {
    let mut config = match (&args.config, id) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(id)) => {
            let mut c = ExperimentConfig::new(id, 0);
            c.seed = None;
            c
        }
        (None, None) => return Err(Error::Validation(vec!["config: `run` needs --config".into()])),
    };
    if let Some(id) = id {
        if config.experiment != id {
            return Err(Error::Validation(vec![format!(
                "experiment: config names `{}` but the subcommand is `{id}`",
                config.experiment
            )]));
        }
    }
    for s in &args.set {
        config.set(s)?;
    }
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    if let Some(r) = args.replicas {
        config.params.replicas = Some(r);
    }
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    if let Some(f) = &args.format {
        config.format = f.parse()?;
    }
    Ok(config)
}

fn print_report(record: &ResultRecord, format: Format) -> interlace::Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match format {
        Format::Csv => write_csv(record, &mut out)?,
        Format::Json => write_json(record, &mut out)?,
        Format::Plotdata => {
            for fig in figures(record) {
                writeln!(out, "## {}", fig.name)?;
                write_plotdata(&fig, &mut out)?;
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

fn summarize(record: &ResultRecord) {
    eprintln!(
        "{}: {} jobs, {} truncated, {:.2} s{}",
        record.experiment,
        record.jobs,
        record.truncated,
        record.wall_clock_secs,
        if record.partial { " (partial)" } else { "" }
    );
    for a in &record.aggregates {
        match (a.lower, a.upper) {
            (Some(lo), Some(hi)) => eprintln!("  {:<22} {:<26} {:.6} [{lo:.6}, {hi:.6}]", a.case, a.metric, a.estimate),
            _ => eprintln!("  {:<22} {:<26} {:.6}", a.case, a.metric, a.estimate),
        }
    }
}

fn run(cli: Cli, cancel: &AtomicBool) -> interlace::Result<ExitCode> {
    let (id, args) = cli.command.split();
    let config = build_config(id, &args)?;
    let record = run_experiment_with(&config, cancel)?;
    match &config.out {
        Some(dir) => {
            for path in emit_report(&record, config.format, dir)? {
                eprintln!("wrote {}", path.display());
            }
        }
        None => print_report(&record, config.format)?,
    }
    summarize(&record);
    if record.truncation_fraction() > config.max_truncation_fraction {
        eprintln!(
            "error: {:.3} of the replicas were truncated (limit {})",
            record.truncation_fraction(),
            config.max_truncation_fraction
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cancel = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&cancel);
    // a second interrupt falls through to the default behaviour
    let _ = ctrlc::set_handler(move || {
        if flag.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
    });
    match run(cli, &cancel) {
        Ok(code) => code,
        Err(e @ Error::Validation(_)) | Err(e @ Error::InvalidArgument { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
