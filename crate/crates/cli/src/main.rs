use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use branchflow_cli::{Command, DemoName, RunConfig};

/// Branched-transport solver and verification toolkit.
///
/// Computes minimal flows for small instances under concave edge costs,
/// audits the local angle conditions minimal flows must satisfy, builds the
/// degree-4 branching star demonstrations, and runs the randomized
/// no-degree-4 harness.
#[derive(Parser)]
#[command(name = "branchflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoArg {
    /// Planar degree-4 star under the concave piecewise-linear cost
    Trapezoid,
    /// 3D degree-4 star for an admissible power cost and chosen masses
    Simplex3d,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve an instance file for its minimal flow
    Solve {
        /// Instance JSON file
        #[arg(long)]
        input: PathBuf,
        /// Write the JSON report here instead of stdout
        #[arg(long)]
        report: Option<PathBuf>,
        /// Render the solution flow as SVG
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Also enumerate topologies containing degree-4 branch points
        #[arg(long)]
        allow_degree4: bool,
        /// Branch-merge tolerance (default: 1e-7 x instance diameter)
        #[arg(long)]
        merge_tol: Option<f64>,
        /// Functional ties within this resolve by topology id
        #[arg(long, default_value_t = 1e-10)]
        tie_tol: f64,
        /// Angle-audit tolerance in radians
        #[arg(long, default_value_t = 1e-6)]
        angle_tol: f64,
        /// Draw vertex labels in the SVG
        #[arg(long)]
        labels: bool,
    },
    /// Validate a flow file against an instance and audit its angles
    Check {
        /// Instance JSON file
        #[arg(long)]
        input: PathBuf,
        /// Flow JSON file to check
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        merge_tol: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        angle_tol: f64,
        #[arg(long)]
        labels: bool,
    },
    /// Build one of the degree-4 branching star demonstrations
    Demo {
        #[arg(value_enum)]
        name: DemoArg,
        /// Four masses for simplex3d, e.g. --masses 1,2,3,-6
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        masses: Option<Vec<f64>>,
        /// Power-cost exponent for simplex3d
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        labels: bool,
    },
    /// Solve seeded random instances with degree-4 topologies allowed and
    /// verify no degree-4 branch point ever wins
    VerifyTheorem {
        /// Number of random instances
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// RNG seed; identical seeds give byte-identical reports
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        merge_tol: Option<f64>,
        #[arg(long, default_value_t = 1e-10)]
        tie_tol: f64,
        #[arg(long, default_value_t = 1e-6)]
        angle_tol: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match cli.command {
        Cmd::Solve {
            input,
            report,
            svg,
            allow_degree4,
            merge_tol,
            tie_tol,
            angle_tol,
            labels,
        } => RunConfig {
            command: Command::Solve { input },
            report,
            svg,
            allow_degree4,
            merge_tol,
            tie_tol,
            angle_tol,
            seed: 0,
            samples: 0,
            labels,
        },
        Cmd::Check {
            input,
            flow,
            report,
            svg,
            merge_tol,
            angle_tol,
            labels,
        } => RunConfig {
            command: Command::Check { input, flow },
            report,
            svg,
            allow_degree4: false,
            merge_tol,
            tie_tol: 1e-10,
            angle_tol,
            seed: 0,
            samples: 0,
            labels,
        },
        Cmd::Demo {
            name,
            masses,
            p,
            report,
            svg,
            labels,
        } => {
            let name = match name {
                DemoArg::Trapezoid => DemoName::Trapezoid,
                DemoArg::Simplex3d => DemoName::Simplex3d,
            };
            RunConfig {
                command: Command::Demo { name, masses, p },
                report,
                svg,
                allow_degree4: true,
                merge_tol: None,
                tie_tol: 1e-10,
                angle_tol: 1e-6,
                seed: 0,
                samples: 0,
                labels,
            }
        }
        Cmd::VerifyTheorem {
            samples,
            seed,
            report,
            merge_tol,
            tie_tol,
            angle_tol,
        } => RunConfig {
            command: Command::VerifyTheorem,
            report,
            svg: None,
            allow_degree4: true,
            merge_tol,
            tie_tol,
            angle_tol,
            seed,
            samples,
            labels: false,
        },
    };
    ExitCode::from(branchflow_cli::run(&config) as u8)
}
