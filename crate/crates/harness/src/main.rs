use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use expocol_harness::config::{ExperimentConfig, Overrides};
use expocol_harness::runner::{converge_command, energy_command, run_command};

#[derive(Parser)]
#[command(
    name = "expocol",
    version,
    about = "Structure-preserving exponential collocation integrators: runs, convergence and energy studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one problem and write trajectory/energy/diagnostics CSVs.
    Run(StudyArgs),
    /// Sweep the stepsize list and fit the observed convergence order.
    Converge(StudyArgs),
    /// Track the energy along a run: defect series, monotonicity, defect
    /// halving ratio.
    Energy(StudyArgs),
    /// List the problem catalog with default parameters.
    ListProblems,
}

#[derive(Args)]
struct StudyArgs {
    /// TOML config file with [problem]/[method]/[grid]/[output] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem name: duffing, wind, nls, stiff-gradient.
    #[arg(long)]
    problem: Option<String>,
    /// Method: ecr, tcr, rkn, baseline-rk4.
    #[arg(long)]
    method: Option<String>,
    /// Number of collocation stages.
    #[arg(long)]
    r: Option<usize>,
    /// Stepsize; repeat for a descending list (converge needs >= 3).
    #[arg(long = "h")]
    stepsizes: Vec<f64>,
    /// Integration horizon T.
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Output directory (also via EXPOCOL_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recorded in the summary for provenance of randomized studies.
    #[arg(long)]
    seed: Option<u64>,
    /// Emit dense-output samples at interior points (ecr only).
    #[arg(long)]
    dense: bool,
}

impl StudyArgs {
    fn resolve(&self) -> expocol_harness::Result<ExperimentConfig> {
        let overrides = Overrides {
            problem: self.problem.clone(),
            method: self.method.clone(),
            r: self.r,
            stepsizes: self.stepsizes.clone(),
            t_end: self.t_end,
            out_dir: self.out.clone(),
            seed: self.seed,
            dense: self.dense,
        };
        ExperimentConfig::resolve(self.config.as_deref(), &overrides)
    }
}

fn list_problems() {
    let d = expocol_core::problems::ProblemParams::default();
    println!("duffing         omega={} k={} (conservative; exact elliptic solution)", d.omega, d.k);
    println!("wind            theta={:.6} rho={} (dissipative; theta=pi/2 conservative)", d.theta, d.rho);
    println!("nls             n={} (conservative pseudospectral Schrodinger grid)", d.grid);
    println!(
        "stiff-gradient  spectrum={:?} quartic={} (gradient flow)",
        d.spectrum, d.quartic
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ListProblems => {
            list_problems();
            return ExitCode::SUCCESS;
        }
        Command::Run(args) => args.resolve().and_then(|cfg| {
            let summary = run_command(&cfg)?;
            println!(
                "run complete: {} steps, outcome {}, artifacts in {:?}",
                summary.steps_completed, summary.outcome, cfg.out_dir
            );
            Ok(())
        }),
        Command::Converge(args) => args.resolve().and_then(|cfg| {
            let report = converge_command(&cfg)?;
            println!(
                "fitted order {:.3} (R^2 = {:.6}{}) against {}; artifacts in {:?}",
                report.fit.order,
                report.fit.r_squared,
                if report.fit.meaningful { "" } else { "; order fit not meaningful" },
                report.reference,
                cfg.out_dir
            );
            Ok(())
        }),
        Command::Energy(args) => args.resolve().and_then(|cfg| {
            let report = energy_command(&cfg)?;
            println!(
                "max |H - H0| = {:.3e}{}{}; artifacts in {:?}",
                report.max_defect,
                report
                    .monotonicity_violations
                    .map_or(String::new(), |v| format!(", monotonicity violations: {v}")),
                report
                    .defect_halving_ratio
                    .map_or(String::new(), |r| format!(", defect halving ratio: {r:.1}")),
                cfg.out_dir
            );
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
