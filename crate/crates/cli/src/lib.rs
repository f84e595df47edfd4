pub mod config;
pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hspde::evolution::{Solver, SolverConfig};
use hspde::io::{write_csv, write_energy_series, write_json, write_state};
use hspde::verify::{
    cauchy_in_n_study, contraction_experiment, energy_report, heat_oracle_study, regularization_study, run_paths,
    ExperimentReport, CONTRACTION_MIN_ALPHA,
};
use hspde::{Error, Result};

use config::{Config, DriftConfig, Experiment};
use manifest::RunManifest;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BLOW_UP: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "hspde",
    version,
    about = "Stochastic p-Laplace evolution with Hölder noise: simulation and checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Measure the gap and Lipschitz constant of the regularized noise coefficient.
    Regcheck(CommonArgs),
    /// Simulate sample paths and write their energy series and final states.
    Simulate(CommonArgs),
    /// Run the Monte Carlo checks and write a pass/fail report.
    Verify(CommonArgs),
}

#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// TOML configuration, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Comma-separated regularization indices.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<u32>>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Regcheck(_) => "regcheck",
            Command::Simulate(_) => "simulate",
            Command::Verify(_) => "verify",
        }
    }
}

/// Runs a command and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Regcheck(a) => cmd_regcheck(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("hspde {}: {e}", cli.command.name());
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_blow_up() {
        EXIT_BLOW_UP
    } else {
        EXIT_USAGE
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    pass: bool,
    experiments: T,
}

/// Loads the configuration, applies command-line overrides, and writes the
/// manifest and the resolved configuration into the output directory.
pub fn prepare(command: &str, args: &CommonArgs) -> Result<Config> {
    let mut cfg = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
        cfg.solver.seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.experiment.paths = paths;
    }
    if let Some(w) = args.workers {
        cfg.experiment.workers = w;
    }
    if let Some(list) = &args.n_list {
        if command == "regcheck" {
            cfg.regcheck.n_list = list.clone();
        } else {
            cfg.experiment.n_list = list.clone();
        }
    }
    cfg.validate()?;
    fs::create_dir_all(&args.out)?;
    let manifest = RunManifest::new(
        command,
        args.config.as_ref().map(|p| p.display().to_string()),
        args.out.display().to_string(),
        cfg.clone(),
    );
    write_json(&args.out.join("manifest.json"), &manifest)?;
    fs::write(args.out.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(cfg)
}

fn print_report(r: &ExperimentReport) {
    for c in &r.checks {
        println!(
            "[{}] {}: {}: estimate {:.6e}, bound {:.6e}, std error {:.2e}",
            if c.pass { "PASS" } else { "FAIL" },
            r.experiment,
            c.name,
            c.estimate,
            c.bound,
            c.std_error
        );
    }
}

pub fn cmd_regcheck(args: &CommonArgs) -> Result<bool> {
    let cfg = prepare("regcheck", args)?;
    let out = regularization_study(&cfg.sigma.build()?, &cfg.regcheck)?;
    write_csv(&args.out.join("regcheck.csv"), &out.rows)?;
    print_report(&out.report);
    let pass = out.report.pass;
    write_json(
        &args.out.join("report.json"),
        &Report {
            command: "regcheck",
            pass,
            experiments: [out.report],
        },
    )?;
    Ok(pass)
}

#[derive(Serialize)]
struct PathSummary {
    n: u32,
    path: u64,
    sup_l2_sq: f64,
    final_l2_sq: f64,
    grad_lp_p_integral: f64,
    hm0_integral: f64,
    wmq_integral: f64,
    energy_identity_mismatch: f64,
    newton_iterations: usize,
    noise_digest: String,
}

pub fn cmd_simulate(args: &CommonArgs) -> Result<bool> {
    let cfg = prepare("simulate", args)?;
    let model = cfg.model()?;
    let u0 = cfg.initial_state()?;
    let n_list = args.n_list.clone().unwrap_or_else(|| vec![cfg.solver.n]);
    let mut summary = Vec::new();
    for n in n_list {
        let solver = Solver::new(
            &model,
            SolverConfig {
                n,
                seed: cfg.experiment.seed,
                ..cfg.solver.clone()
            },
        )?;
        let records = run_paths(cfg.experiment.workers, cfg.experiment.paths, |k| {
            solver.simulate_path(&u0, &mut solver.sampler(k))
        })?;
        for (k, rec) in records.iter().enumerate() {
            write_energy_series(&args.out.join(format!("energies_n{n}_path{k}.csv")), rec)?;
            write_state(&args.out.join(format!("final_n{n}_path{k}.csv")), rec.final_state())?;
            summary.push(PathSummary {
                n,
                path: k as u64,
                sup_l2_sq: rec.sup_l2_sq,
                final_l2_sq: rec.energies.last().map_or(f64::NAN, |e| e.l2_sq),
                grad_lp_p_integral: rec.integrals.grad_lp_p,
                hm0_integral: rec.integrals.hm0_sq,
                wmq_integral: rec.integrals.wmq_q,
                energy_identity_mismatch: rec.ledger.mismatch(),
                newton_iterations: rec.newton_iters.iter().sum(),
                noise_digest: format!("{:016x}", rec.noise_digest),
            });
        }
    }
    write_csv(&args.out.join("summary.csv"), &summary)?;
    write_json(
        &args.out.join("report.json"),
        &Report {
            command: "simulate",
            pass: true,
            experiments: &summary,
        },
    )?;
    println!("simulated {} path(s); outputs in {}", summary.len(), args.out.display());
    Ok(true)
}

pub fn cmd_verify(args: &CommonArgs) -> Result<bool> {
    let cfg = prepare("verify", args)?;
    let runs = &cfg.experiment.run;
    if runs.contains(&Experiment::Contraction) {
        let alpha = cfg.sigma.build()?.alpha();
        if alpha < CONTRACTION_MIN_ALPHA {
            return Err(Error::invalid(
                "sigma.alpha",
                format!("the contraction experiment needs alpha >= 1/2, got {alpha}"),
            ));
        }
    }
    let mut plan = cfg.plan(cfg.model()?);
    plan.validate()?;
    let u0 = cfg.initial_state()?;
    let out: &Path = &args.out;
    let mut reports = Vec::new();
    for exp in runs {
        match exp {
            Experiment::Heat => {
                let r = heat_oracle_study(&cfg.heat)?;
                write_csv(&out.join("heat.csv"), &r.rows)?;
                reports.push(r.report);
            }
            Experiment::Energy => {
                let r = energy_report(&plan, &u0)?;
                write_csv(&out.join("energy.csv"), &r.rows)?;
                reports.push(r.report);
            }
            Experiment::Contraction => {
                let u0_b = u0.add(&cfg.experiment.contraction.offset.sample(*u0.grid())?);
                for &c in &cfg.experiment.contraction.drift_amplitudes {
                    plan.model = cfg.model_with_drift(DriftConfig::Sine { amplitude: c }.build()?)?;
                    let mut r = contraction_experiment(&plan, &u0, &u0_b)?;
                    let l_f = c.abs();
                    write_csv(&out.join(format!("contraction_lf{l_f}.csv")), &r.rows)?;
                    r.report.experiment = format!("contraction (L_f = {l_f})");
                    reports.push(r.report);
                }
                plan.model = cfg.model()?;
            }
            Experiment::Cauchy => {
                let r = cauchy_in_n_study(&plan, &u0)?;
                write_csv(&out.join("cauchy.csv"), &r.rows)?;
                reports.push(r.report);
            }
        }
    }
    reports.iter().for_each(print_report);
    let pass = reports.iter().all(|r| r.pass);
    write_json(
        &out.join("report.json"),
        &Report {
            command: "verify",
            pass,
            experiments: &reports,
        },
    )?;
    println!(
        "{}",
        if pass {
            "all checks passed"
        } else {
            "some checks failed"
        }
    );
    Ok(pass)
}
