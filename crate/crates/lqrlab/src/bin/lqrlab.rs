//! Command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error, 2 sweep completed with
//! failed cells.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lqrlab::harness::{emit_csv, replay_row, run_sweep, ExperimentConfig};
use lqrlab::model::{generate_instance, load_instance, save_instance, validate_instance, Instance};
use lqrlab::riccati::stability_constants;
use lqrlab::Tolerances;

#[derive(Parser)]
#[command(name = "lqrlab", version, about = "Online LQR regret experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep described by a TOML config and write the results CSV.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        /// Worker threads (0 = one per core).
        #[arg(long)]
        jobs: Option<usize>,
        /// Shift every configured seed by this offset.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
        /// Record real per-cell wall time (breaks byte-identical reruns).
        #[arg(long)]
        timing: bool,
    },
    /// Recompute one CSV row from its (seed, W, snr) triple and verify it.
    Replay {
        #[arg(long)]
        config: Option<PathBuf>,
        /// A data row copied out of a sweep CSV.
        #[arg(long)]
        row: String,
    },
    /// Check every structural assumption of an instance.
    Validate {
        #[command(flatten)]
        source: InstanceSource,
        /// Also write the instance to this path.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Print the stability constants τ, ρ, γ and P_max of an instance.
    Constants {
        #[command(flatten)]
        source: InstanceSource,
    },
}

#[derive(Args)]
struct InstanceSource {
    /// Load an instance file instead of generating one.
    #[arg(long, conflicts_with_all = ["seed", "t"])]
    instance: Option<PathBuf>,
    /// Generator seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Horizon of the generated instance.
    #[arg(long, default_value_t = 50)]
    t: usize,
}

impl InstanceSource {
    fn resolve(&self, config: &ExperimentConfig) -> lqrlab::Result<Instance> {
        match &self.instance {
            Some(path) => load_instance(path),
            None => generate_instance(self.seed, self.t, &config.profile.build()?),
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> lqrlab::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run() -> lqrlab::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            seed_offset,
            timing,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(jobs) = jobs {
                cfg.jobs = jobs;
            }
            cfg.timing |= timing;
            if seed_offset != 0 {
                for s in &mut cfg.seeds {
                    *s = s.wrapping_add(seed_offset);
                }
            }
            let result = run_sweep(&cfg)?;
            emit_csv(&result, &out)?;
            eprintln!(
                "wrote {} rows to {} ({} failed cells)",
                result.rows.len(),
                out.display(),
                result.failures.len()
            );
            for f in &result.failures {
                eprintln!(
                    "FAILED cell seed={} W={} snr={}: {}",
                    f.seed, f.w, f.snr, f.message
                );
            }
            Ok(if result.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Replay { config, row } => {
            let cfg = load_config(&config)?;
            let outcome = replay_row(&cfg, &row)?;
            println!("{}", outcome.recomputed.to_csv_line());
            for (name, given, recomputed, ok) in &outcome.fields {
                println!(
                    "{} {name}: given {given:.16e} recomputed {recomputed:.16e}",
                    if *ok { "PASS" } else { "FAIL" }
                );
            }
            Ok(if outcome.matches() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Validate { source, dump } => {
            let cfg = ExperimentConfig::default();
            let inst = source.resolve(&cfg)?;
            let tol = Tolerances::default();
            let report = validate_instance(&inst.sys, &inst.costs, &inst.bounds, &tol)?;
            print!("{report}");
            if let Some(path) = dump {
                save_instance(&inst, &path)?;
                eprintln!("instance written to {}", path.display());
            }
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Constants { source } => {
            let cfg = ExperimentConfig::default();
            let inst = source.resolve(&cfg)?;
            let tol = Tolerances::default();
            let c = stability_constants(&inst.sys, &inst.bounds, &tol)?;
            println!("tau {:.16e}", c.tau);
            println!("rho {:.16e}", c.rho);
            println!("gamma {:.16e}", c.gamma);
            let n = c.p_max.nrows();
            for i in 0..n {
                let row: Vec<String> = (0..n).map(|j| format!("{:.16e}", c.p_max[(i, j)])).collect();
                println!("P_max[{}] {}", i + 1, row.join(" "));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    // Die quietly when downstream pipes close early (e.g. `lqrlab ... | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
