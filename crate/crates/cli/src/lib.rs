//! Batch front end for kp-core: series evaluation, certificates, oracle and
//! inequality checks, and the acceptance suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
pub mod suite;

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::RunConfig;
use output::Output;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// Runtime failure, or a failed acceptance suite.
    pub const FAILURE: u8 = 1;
    /// Unreadable or inconsistent configuration.
    pub const CONFIG: u8 = 2;
    /// Some certificate is INVALID.
    pub const INVALID: u8 = 3;
    /// Some certificate is INCONCLUSIVE or HYPOTHESIS_FAIL.
    pub const OPEN: u8 = 4;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] kp_core::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io(_) | CliError::Core(_) => exit::FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kp", version, about = "Perturbation series, slicings and bound certificates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every sampler.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Output directory; tables go to stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// p^mu at the configured points.
    Series(#[command(flatten)] Common),
    /// Slice certificates for a discrete, time-sliced or diagonal-level problem.
    Certify(#[command(flatten)] Common),
    /// Compares the series with its closed form.
    OracleCheck(#[command(flatten)] Common),
    /// Kato modulus k(h) and, optionally, its certificates.
    Kato(#[command(flatten)] Common),
    /// 3G inequality for the two-subordinator kernel.
    #[command(name = "3g")]
    ThreeG {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Half-derivative of e^-x and the left-inverse residual.
    Weyl {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5.0)]
        x_max: f64,
        #[arg(long, default_value_t = 51)]
        points: usize,
        /// Point (s, x) of the left-inverse residual.
        #[arg(long, num_args = 2, value_names = ["S", "X"], default_values_t = [0.0, 0.0])]
        at: Vec<f64>,
        /// Uses κ̃ with q = c (u + z)^-p.
        #[arg(long, num_args = 2, value_names = ["C", "P"])]
        perturbed: Option<Vec<f64>>,
        #[arg(long, default_value_t = 5e-3)]
        tolerance: f64,
    },
    /// Runs the acceptance suite.
    Reproduce {
        #[command(flatten)]
        common: Common,
        /// Step name, criterion name or criterion number.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, hide = true, default_value_t = 1.0)]
        tol_scale: f64,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Err(CliError::Config("this command needs --config".into())),
    }
}

#[derive(Serialize)]
struct SuiteReport<'a> {
    seed: u64,
    tol_scale: f64,
    pass: bool,
    criteria: &'a [suite::CriterionResult],
}

#[derive(Serialize)]
struct SuiteRow<'a> {
    criterion: u8,
    name: &'a str,
    check: &'a str,
    value: Option<f64>,
    relation: suite::Relation,
    limit: f64,
    pass: bool,
}

pub fn reproduce(opts: &suite::SuiteOptions, only: Option<&str>, out: &Output) -> Result<u8, CliError> {
    println!("{:<3} {:<17} {:<6} {:>9}", "#", "criterion", "result", "seconds");
    let print = |r: &suite::CriterionResult, t: Duration| {
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        println!("{:<3} {:<17} {:<6} {:>9.2}", r.id, r.name, verdict, t.as_secs_f64());
        for c in r.checks.iter().filter(|c| !c.pass) {
            println!("      failed: {} = {:?} (limit {})", c.name, c.value, c.limit);
        }
    };
    let results = suite::run(opts, only, print)?;
    let pass = results.iter().all(|r| r.pass);
    out.json(
        "reproduce.json",
        &SuiteReport {
            seed: opts.seed,
            tol_scale: opts.tol_scale,
            pass,
            criteria: &results,
        },
    )?;
    let rows: Vec<SuiteRow> = results
        .iter()
        .flat_map(|r| {
            r.checks.iter().map(move |c| SuiteRow {
                criterion: r.id,
                name: r.name,
                check: &c.name,
                value: c.value,
                relation: c.relation,
                limit: c.limit,
                pass: c.pass,
            })
        })
        .collect();
    out.csv("reproduce.csv", &rows)?;
    println!("{}", if pass { "all criteria PASS" } else { "some criteria FAIL" });
    Ok(if pass { exit::OK } else { exit::FAILURE })
}

pub fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Series(c) => commands::cmd_series(&load(&c)?, &Output::new(c.out)?),
        Command::Certify(c) => commands::cmd_certify(&load(&c)?, c.seed, &Output::new(c.out)?),
        Command::OracleCheck(c) => commands::cmd_oracle_check(&load(&c)?, &Output::new(c.out)?),
        Command::Kato(c) => commands::cmd_kato(&load(&c)?, c.seed, &Output::new(c.out)?),
        Command::ThreeG { common, samples } => commands::cmd_3g(samples, common.seed, &Output::new(common.out)?),
        Command::Weyl {
            common,
            x_max,
            points,
            at,
            perturbed,
            tolerance,
        } => commands::cmd_weyl(
            x_max,
            points,
            (at[0], at[1]),
            perturbed.map(|v| (v[0], v[1])),
            tolerance,
            &Output::new(common.out)?,
        ),
        Command::Reproduce { common, only, tol_scale } => {
            let opts = suite::SuiteOptions {
                seed: common.seed,
                tol_scale,
            };
            reproduce(&opts, only.as_deref(), &Output::new(common.out)?)
        }
    }
}
