mod problem;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use spc_bench::report::{format_pattern, format_table, report_dir};
use spc_bench::{run_bench, BenchConfig};
use spc_core::diagnostics::{
    box_grid, convergence_certificate, estimate_bias_lipschitz, grid_bias_lipschitz, grid_sweep, transfer_check,
    write_grid_csv,
};
use spc_core::identification::{prediction_mse, Split};
use spc_core::surrogate::{estimate_lipschitz, run, RunRecord, StepSize, Variant};

use crate::problem::{build, Problem, ProblemConfig};

#[derive(Parser)]
#[command(name = "spc", version, about = "Control-aware refinement of dynamics models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit θ_TPC, then refine it by projected gradient descent on the surrogate.
    Refine {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        /// `auto` (1/L̂) or a positive step size.
        #[arg(long)]
        eta: Option<StepSize>,
        #[arg(long = "iters")]
        iterations: Option<usize>,
        /// Refresh period of the updated variant.
        #[arg(long)]
        tau: Option<usize>,
        /// Use θ_emp := θ_TPC instead of the counterfactual fit.
        #[arg(long)]
        theta_emp_tpc: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refine with the fixed variant, then report the convergence certificate,
    /// the transfer check and (for p ≤ 2) a grid sweep of V, L̃ and B.
    Diagnose {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        eta: Option<StepSize>,
        #[arg(long = "iters")]
        iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-loop tracking benchmark.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run every configured method on every seed.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the aggregate table of a finished run.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Refine {
            config,
            variant,
            eta,
            iterations,
            tau,
            theta_emp_tpc,
            out,
        } => {
            let mut cfg = ProblemConfig::load(config.as_deref())?;
            if let Some(v) = variant {
                cfg.surrogate.variant = v;
            }
            if let Some(t) = tau {
                cfg.surrogate.refresh_period = t;
            }
            if theta_emp_tpc {
                cfg.theta_emp = problem::ThetaEmpChoice::Tpc;
            }
            apply_common(&mut cfg, eta, iterations, out);
            refine(&cfg).map(|_| ExitCode::SUCCESS)
        }
        Command::Diagnose {
            config,
            eta,
            iterations,
            out,
        } => {
            let mut cfg = ProblemConfig::load(config.as_deref())?;
            cfg.surrogate.variant = Variant::Fixed;
            apply_common(&mut cfg, eta, iterations, out);
            diagnose(&cfg).map(|_| ExitCode::SUCCESS)
        }
        Command::Bench {
            command: BenchCommand::Run { config, out },
        } => {
            let mut cfg = match config {
                Some(p) => BenchConfig::load(&p)?,
                None => BenchConfig::default(),
            };
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let outcome = run_bench(&cfg)?;
            print!("{}", format_table(&outcome.summary.methods));
            println!();
            print!("{}", format_pattern(&outcome.summary.pattern));
            for f in &outcome.failures {
                eprintln!("FAILED {} seed {}: {}", f.method, f.seed, f.error);
            }
            println!("results in {}", cfg.output_dir.display());
            Ok(if outcome.any_failed() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Bench {
            command: BenchCommand::Report { dir },
        } => {
            print!("{}", report_dir(&dir)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn apply_common(cfg: &mut ProblemConfig, eta: Option<StepSize>, iterations: Option<usize>, out: Option<PathBuf>) {
    if let Some(e) = eta {
        cfg.surrogate.step_size = e;
    }
    if let Some(k) = iterations {
        cfg.surrogate.iterations = k;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Writes `run.csv`, `run.json` and `refine.json`; returns the problem and run.
fn refine(cfg: &ProblemConfig) -> Result<(Problem, Vec<f64>, RunRecord)> {
    cfg.surrogate.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let pb = build(cfg)?;
    if cfg.data.is_none() {
        pb.write_dataset(&out.join("dataset"), cfg)?;
    }
    let result = run(&pb.set, &pb.bx, &pb.theta_tpc, &pb.theta_emp, &cfg.surrogate);
    let (theta, record) = match result {
        Ok(v) => v,
        Err(f) => {
            f.record.write_csv(&out.join("run.csv"))?;
            f.record.write_summary_json(&out.join("run.json"))?;
            return Err(anyhow::Error::new(f.error).context("refinement aborted; partial record written"));
        }
    };
    record.write_csv(&out.join("run.csv"))?;
    record.write_summary_json(&out.join("run.json"))?;
    let model = pb.model.as_ref();
    write_json(
        &out.join("refine.json"),
        &serde_json::json!({
            "model": cfg.model,
            "theta_tpc": pb.theta_tpc,
            "theta_emp": pb.theta_emp,
            "theta_final": theta,
            "train_mse_tpc": prediction_mse(&pb.data, Split::Train, model, &pb.theta_tpc)?,
            "train_mse_final": prediction_mse(&pb.data, Split::Train, model, &theta)?,
        }),
    )?;
    println!(
        "refined {} over {} iterations: loss {:.6e} -> {:.6e}",
        cfg.model,
        record.rows.len().saturating_sub(1),
        record.initial_loss().unwrap_or(f64::NAN),
        record.final_row().map_or(f64::NAN, |r| r.loss)
    );
    println!("theta_final = {theta:?}");
    println!("results in {}", out.display());
    Ok((pb, theta, record))
}

fn diagnose(cfg: &ProblemConfig) -> Result<()> {
    let (pb, _, record) = refine(cfg)?;
    let out = &cfg.output_dir;
    let solver = &cfg.surrogate.solver;
    let dep = pb.deployment()?;
    let lhat = match record.lipschitz_estimate {
        Some(l) => l,
        None => estimate_lipschitz(
            &pb.set,
            &pb.theta_emp,
            &pb.bx,
            cfg.surrogate.lipschitz_samples,
            cfg.surrogate.lipschitz_seed,
            solver,
        )?,
    };
    let (lipschitz, lstar_hint) = if pb.bx.dim() <= 2 {
        let grid = box_grid(&pb.bx, cfg.grid_points);
        let points = grid_sweep(&dep, &pb.set, &pb.theta_emp, &grid, solver)?;
        write_grid_csv(&points, &out.join("grid.csv"))?;
        let best = points.iter().map(|p| p.l_tilde).fold(f64::INFINITY, f64::min);
        (grid_bias_lipschitz(&points), Some(best))
    } else {
        let l = estimate_bias_lipschitz(
            &dep,
            &pb.set,
            &pb.theta_emp,
            &pb.bx,
            cfg.bias_lipschitz_samples,
            cfg.surrogate.lipschitz_seed,
            solver,
        )?;
        (l, None)
    };
    let certificate = convergence_certificate(&record, Some(lhat), lstar_hint, 1e-9);
    let transfer = transfer_check(&record, &dep, &pb.set, lipschitz, solver)?;
    let report = serde_json::json!({
        "lipschitz_estimate": lhat,
        "certificate": certificate,
        "transfer": transfer,
    });
    write_json(&out.join("diagnose.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
