use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cpd::assembly::{Assembler, AssemblyMode};
use cpd::harness::{
    convergence_study, discretise, nonlocality_study, poisson_study, run_scenario, write_poisson_csv, ScenarioConfig,
};
use cpd::verify::{verification_suite, write_reports_csv};
use cpd::{CpdError, Result};

#[derive(Parser)]
#[command(name = "cpd", version, about = "Implicit continuum-kinematics peridynamics solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write its outputs.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
        /// Override the assembly mode of the config.
        #[arg(long)]
        mode: Option<AssemblyMode>,
    },
    /// Repeat a scenario over a list of values.
    Sweep {
        study: Study,
        config: PathBuf,
        /// Stiffness ratios (poisson), spacings (convergence) or horizons (nonlocality).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
    /// Finite-difference, balance and invariance checks on random states.
    Verify {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        samples: usize,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    Poisson,
    Convergence,
    Nonlocality,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).map_err(|e| CpdError::Io { path: dir.into(), source: e })?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CpdError::Io { path: path.clone(), source: e })?;
    Ok(BufWriter::new(f))
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { config, output_dir, mode } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            let out = run_scenario(&cfg, Some(&output_dir))?;
            for inc in &out.log.increments {
                println!(
                    "increment {:>4}  load {:.4}  iterations {:>2}  |R|/|R1| {:.3e}",
                    inc.increment,
                    inc.load_factor,
                    inc.iterations.len(),
                    inc.final_normalized()
                );
            }
            println!("wrote {} files to {}", out.files.len(), output_dir.display());
            Ok(true)
        }
        Command::Sweep { study, config, values, output_dir } => {
            let cfg = ScenarioConfig::load(&config)?;
            match study {
                Study::Poisson => {
                    let rows = poisson_study(&cfg, &values)?;
                    for r in &rows {
                        println!("ratio {:>10}  nu {:.6}", r.ratio, r.nu);
                    }
                    write_poisson_csv(&rows, create(&output_dir, "poisson.csv")?)?;
                }
                Study::Convergence | Study::Nonlocality => {
                    let (table, name) = match study {
                        Study::Convergence => (convergence_study(&cfg, &values)?, "convergence.csv"),
                        _ => (nonlocality_study(&cfg, &values)?, "nonlocality.csv"),
                    };
                    let diffs = table.successive_differences();
                    for (k, row) in table.rows.iter().enumerate() {
                        let d = if k == 0 { String::new() } else { format!("  diff {:.3e}", diffs[k - 1]) };
                        println!("spacing {:.5}  horizon {:.5}  {:?}{d}", row.spacing, row.horizon, row.values);
                    }
                    println!("differences decrease: {}", table.differences_decrease());
                    table.write_csv(create(&output_dir, name)?)?;
                }
            }
            Ok(true)
        }
        Command::Verify { config, seed, samples, output_dir } => {
            let cfg = ScenarioConfig::load(&config)?;
            let disc = discretise(&cfg)?;
            let mat = cfg.material()?;
            let asm = Assembler::new(&disc.cloud, &disc.table, &mat, cfg.mode)?;
            let reports = verification_suite(&asm, samples, seed)?;
            for r in &reports {
                println!(
                    "{:<6} {:<28} {:.3e} (tol {:.0e})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.check,
                    r.max_rel_error,
                    r.tolerance
                );
            }
            write_reports_csv(&reports, create(&output_dir, "verification.csv")?)?;
            Ok(reports.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
