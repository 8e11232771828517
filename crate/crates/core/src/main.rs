use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gpwtdg::harness::{
    emit_outputs, preset, run_convergence, run_sweep, BoundaryMode, HarnessError, ProblemKind, RunConfig, ThreadMode,
    PRESET_NAMES,
};

#[derive(Parser)]
#[command(name = "gpwtdg", version, about = "GPW Trefftz DG solver for the 2D Helmholtz equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one convergence study.
    Solve(SolveArgs),
    /// Run a named group of studies.
    Sweep {
        /// One of airy-gh3, airy-gh1, airy-g0, weber-gh3, airy-quick, smoke.
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct SolveArgs {
    #[arg(long, value_enum, default_value = "airy")]
    problem: ProblemKind,
    #[arg(long, default_value_t = 15.0)]
    kappa: f64,
    /// Directions per element are 2n+1.
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// GPW approximation order.
    #[arg(long, default_value_t = 3)]
    q: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma0: f64,
    #[arg(long, default_value_t = 3.0)]
    gamma_exp: f64,
    #[arg(long, default_value_t = 5)]
    levels: usize,
    /// Gauss points per direction, replacing the automatic choice.
    #[arg(long)]
    quad_order: Option<usize>,
    /// Initial mesh file (default: [-1,1]^2 split into 2x2 cells).
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "robin")]
    boundary: BoundaryMode,
    /// Parameter `a` of the Weber problem.
    #[arg(long, default_value_t = 5.0)]
    weber_a: f64,
    /// Plane-wave angle for the constant problem.
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Number of trailing levels used in the rate fit.
    #[arg(long)]
    rate_window: Option<usize>,
    /// Skip the DG-norm error.
    #[arg(long)]
    no_dg_error: bool,
    /// Write each level's matrix and right-hand side to the output directory.
    #[arg(long)]
    dump: bool,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let threads = ThreadMode::from_env()?;
    threads.install();
    let deterministic = threads.deterministic();
    match cli.command {
        Command::Solve(a) => {
            let label = a.label.unwrap_or_else(|| format!("{:?}-n{}-q{}", a.problem, a.n, a.q).to_lowercase());
            let config = RunConfig {
                label,
                problem: a.problem,
                kappa: a.kappa,
                n: a.n,
                q: a.q,
                gamma0: a.gamma0,
                gamma_exp: a.gamma_exp,
                levels: a.levels,
                quad_order: a.quad_order,
                mesh: a.mesh,
                boundary: a.boundary,
                weber_a: a.weber_a,
                theta: a.theta,
                rate_window: a.rate_window,
                dg_error: !a.no_dg_error,
                deterministic,
                dump_dir: a.dump.then(|| a.out.clone()),
            };
            let result = match run_convergence(&config) {
                Ok(r) => r,
                Err(HarnessError::Solver { level, source, partial }) => {
                    let partial_result =
                        gpwtdg::harness::ConvergenceResult { config: config.clone(), records: partial, rate: None };
                    emit_outputs(&partial_result, &a.out)?;
                    return Err(HarnessError::Solver { level, source, partial: partial_result.records });
                }
                Err(e) => return Err(e),
            };
            let (csv, svg) = emit_outputs(&result, &a.out)?;
            for r in &result.records {
                println!(
                    "level {:>2}  h {:.4e}  ndof {:>7}  rel_l2 {:.4e}  cond {:.3e}",
                    r.level, r.h, r.ndof, r.rel_l2, r.cond
                );
            }
            match result.rate {
                Some(rate) => println!("rate {rate:.3}"),
                None => println!("rate n/a"),
            }
            println!("wrote {} and {}", csv.display(), svg.display());
        }
        Command::Sweep { preset: name, out } => {
            let p = preset(&name).ok_or_else(|| {
                HarnessError::Config(format!("unknown preset `{name}` (expected one of {})", PRESET_NAMES.join(", ")))
            })?;
            for r in run_sweep(&p, &out, deterministic)? {
                let rate = r.rate.map_or("n/a".to_string(), |v| format!("{v:.3}"));
                println!("{:<24} rate {rate}", r.config.label);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
