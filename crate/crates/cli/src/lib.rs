//! Command-line front end: instance ingestion, solving, flow checking,
//! degree-4 star demos, the random-instance theorem harness, JSON reports,
//! and SVG renderings.
//!
//! Exit codes: 0 success (for `check`: clean), 1 check found violations,
//! 2 input or configuration error, 3 terminal cap exceeded, 4 demo
//! hypothesis rejected, 5 theorem-harness failure.

pub mod instance_gen;
pub mod report;
pub mod svg;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use branchflow::cost::CostSpec;
use branchflow::counterexamples::{self, Pairing, StarError};
use branchflow::flow::{
    branch_degrees, check_local_angles, gilbert_functional, validate_flow, Flow, Instance,
};
use branchflow::solver::{self, SolverConfig, SolverError, TopoNode};

use report::{
    AuditReport, CheckReport, DemoReport, SolveReport, TheoremFailure, TheoremReport, TopologyEcho,
    SCHEMA_VERSION,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CAP: i32 = 3;
pub const EXIT_REJECTED: i32 = 4;
pub const EXIT_THEOREM: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoName {
    Trapezoid,
    Simplex3d,
}

#[derive(Debug, Clone)]
pub enum Command {
    Solve {
        input: PathBuf,
    },
    Check {
        input: PathBuf,
        flow: PathBuf,
    },
    Demo {
        name: DemoName,
        masses: Option<Vec<f64>>,
        p: f64,
    },
    VerifyTheorem,
}

/// Everything a run needs; mirrors the CLI flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub report: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub allow_degree4: bool,
    pub merge_tol: Option<f64>,
    pub tie_tol: f64,
    pub angle_tol: f64,
    pub seed: u64,
    pub samples: usize,
    pub labels: bool,
}

impl RunConfig {
    fn validate(&self) -> Result<(), String> {
        if let Some(t) = self.merge_tol {
            if !t.is_finite() || t <= 0.0 {
                return Err(format!("--merge-tol must be positive and finite, got {t}"));
            }
        }
        if !self.tie_tol.is_finite() || self.tie_tol <= 0.0 {
            return Err(format!(
                "--tie-tol must be positive and finite, got {}",
                self.tie_tol
            ));
        }
        if !self.angle_tol.is_finite() || self.angle_tol <= 0.0 {
            return Err(format!(
                "--angle-tol must be positive and finite, got {}",
                self.angle_tol
            ));
        }
        Ok(())
    }

    fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            merge_tol: self.merge_tol,
            tie_tol: self.tie_tol,
            ..SolverConfig::default()
        }
    }
}

/// Runs the configured command, writing the report (file or stdout) and any
/// SVG; returns the process exit code. Errors print to stderr.
pub fn run(config: &RunConfig) -> i32 {
    match execute(config) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

fn execute(config: &RunConfig) -> Result<i32, Failure> {
    config.validate().map_err(Failure::input)?;
    match &config.command {
        Command::Solve { input } => cmd_solve(config, input),
        Command::Check { input, flow } => cmd_check(config, input, flow),
        Command::Demo { name, masses, p } => cmd_demo(config, *name, masses.as_deref(), *p),
        Command::VerifyTheorem => cmd_verify_theorem(config),
    }
}

fn read_instance(path: &Path) -> Result<Instance, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    let instance: Instance = serde_json::from_str(&text).map_err(|e| {
        Failure::input(format!(
            "{}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    instance
        .validate()
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(instance)
}

fn read_flow(path: &Path) -> Result<Flow, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        Failure::input(format!(
            "{}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

fn emit_report(config: &RunConfig, bytes: &[u8]) -> Result<(), Failure> {
    match &config.report {
        Some(path) => fs::write(path, bytes)
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .map_err(|e| Failure::input(format!("cannot write report to stdout: {e}")))
        }
    }
}

fn emit_svg(config: &RunConfig, flow: &Flow, cost: &CostSpec) -> Result<(), Failure> {
    if let Some(path) = &config.svg {
        let rendered = svg::render_flow(flow, cost, config.labels);
        fs::write(path, rendered)
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn map_solver_error(e: SolverError) -> Failure {
    match e {
        SolverError::CapExceeded { .. } => Failure {
            code: EXIT_CAP,
            message: e.to_string(),
        },
        other => Failure::input(other.to_string()),
    }
}

fn topology_echo(topology: &solver::Topology, instance: &Instance) -> TopologyEcho {
    let prefix = solver::branch_id_prefix(instance);
    let label = |node: TopoNode| match node {
        TopoNode::Terminal(i) => instance.terminals[i].id.clone(),
        TopoNode::Steiner(i) => format!("{prefix}{i}"),
    };
    TopologyEcho {
        id: topology.id().to_string(),
        edges: topology
            .edges()
            .iter()
            .map(|&(a, b)| [label(a), label(b)])
            .collect(),
    }
}

fn cmd_solve(config: &RunConfig, input: &Path) -> Result<i32, Failure> {
    let instance = read_instance(input)?;
    let solver_config = config.solver_config();
    let solution = solver::solve_with(&instance, config.allow_degree4, &solver_config)
        .map_err(map_solver_error)?;
    let merge_tol = solver_config.resolve_merge_tol(&instance);
    let degree_census = branch_degrees(&solution.flow, merge_tol);
    let audit = check_local_angles(&solution.flow, &instance.cost, config.angle_tol)
        .map_err(|e| Failure::input(e.to_string()))?;
    let topologies_evaluated =
        solver::enumerate_topologies(instance.terminals.len(), config.allow_degree4)
            .map_err(map_solver_error)?
            .len();

    let report = SolveReport {
        schema_version: SCHEMA_VERSION,
        command: "solve",
        instance: instance.clone(),
        allow_degree4: config.allow_degree4,
        topologies_evaluated,
        topology: topology_echo(&solution.topology, &instance),
        functional: solution.flow.functional,
        converged: solution.converged,
        iterations: solution.iterations,
        competitor_gap: solution.competitor_gap,
        degree_census,
        angle_audit: AuditReport::from_audit(&audit),
        flow: solution.flow.clone(),
    };
    emit_report(config, &report::to_bytes(&report))?;
    emit_svg(config, &solution.flow, &instance.cost)?;
    Ok(EXIT_OK)
}

fn cmd_check(config: &RunConfig, input: &Path, flow_path: &Path) -> Result<i32, Failure> {
    let instance = read_instance(input)?;
    let flow = read_flow(flow_path)?;
    let violations = validate_flow(&flow, &instance)
        .map_err(|e| Failure::input(format!("{}: {e}", flow_path.display())))?;
    let recomputed =
        gilbert_functional(&flow, &instance.cost).map_err(|e| Failure::input(e.to_string()))?;
    let functional_matches =
        (recomputed - flow.functional).abs() <= 1e-9 * recomputed.abs().max(1.0);
    let merge_tol = config.solver_config().resolve_merge_tol(&instance);
    let degree_census = branch_degrees(&flow, merge_tol);
    let audit = check_local_angles(&flow, &instance.cost, config.angle_tol)
        .map_err(|e| Failure::input(e.to_string()))?;
    let clean = violations.is_empty() && functional_matches && audit.is_clean();

    let report = CheckReport {
        schema_version: SCHEMA_VERSION,
        command: "check",
        violations,
        declared_functional: flow.functional,
        recomputed_functional: recomputed,
        functional_matches,
        degree_census,
        angle_audit: AuditReport::from_audit(&audit),
        clean,
    };
    emit_report(config, &report::to_bytes(&report))?;
    // An emitted SVG must always correspond to a flow that validates.
    if report.violations.is_empty() {
        emit_svg(config, &flow, &instance.cost)?;
    }
    Ok(if clean { EXIT_OK } else { EXIT_CHECK_FAILED })
}

const PAIRING_LABELS: [&str; 3] = [
    Pairing::FirstSecond.label(),
    Pairing::FirstThird.label(),
    Pairing::FirstFourth.label(),
];

fn cmd_demo(
    config: &RunConfig,
    name: DemoName,
    masses: Option<&[f64]>,
    p: f64,
) -> Result<i32, Failure> {
    let (demo_name, outcome) = match name {
        DemoName::Trapezoid => ("trapezoid", counterexamples::build_trapezoid_star()),
        DemoName::Simplex3d => {
            let masses = masses.ok_or_else(|| {
                Failure::input("demo simplex3d requires --masses a,b,c,d".to_string())
            })?;
            let masses: [f64; 4] = masses.try_into().map_err(|_| {
                Failure::input(format!(
                    "--masses needs exactly 4 values, got {}",
                    masses.len()
                ))
            })?;
            let cost = CostSpec::Power { p };
            cost.validate().map_err(|e| Failure::input(e.to_string()))?;
            (
                "simplex3d",
                counterexamples::build_simplex_star(masses, &cost),
            )
        }
    };

    match outcome {
        Ok(cert) => {
            let valid = cert.is_valid();
            let flow = cert.star_flow.clone();
            let cost = cert.instance.cost.clone();
            let report = DemoReport {
                schema_version: SCHEMA_VERSION,
                command: "demo",
                demo: demo_name,
                valid,
                rejection: None,
                competitor_pairings: PAIRING_LABELS,
                certificate: Some(cert),
            };
            emit_report(config, &report::to_bytes(&report))?;
            emit_svg(config, &flow, &cost)?;
            Ok(if valid { EXIT_OK } else { EXIT_REJECTED })
        }
        Err(StarError::Rejected(rejection)) => {
            let report = DemoReport {
                schema_version: SCHEMA_VERSION,
                command: "demo",
                demo: demo_name,
                valid: false,
                rejection: Some(rejection.to_string()),
                competitor_pairings: PAIRING_LABELS,
                certificate: None,
            };
            emit_report(config, &report::to_bytes(&report))?;
            eprintln!("demo hypothesis rejected: {rejection}");
            Ok(EXIT_REJECTED)
        }
        Err(other) => Err(Failure::input(other.to_string())),
    }
}

fn cmd_verify_theorem(config: &RunConfig) -> Result<i32, Failure> {
    if config.samples == 0 {
        return Err(Failure::input("verify-theorem needs --samples >= 1"));
    }
    let solver_config = config.solver_config();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut max_degree_seen = 0usize;
    let mut worst_gap: Option<f64> = None;
    let mut angle_violations_total = 0usize;
    let mut failures = Vec::new();

    for index in 0..config.samples {
        let instance = instance_gen::harness_instance(&mut rng, index);
        let solution =
            solver::solve_with(&instance, true, &solver_config).map_err(map_solver_error)?;
        let merge_tol = solver_config.resolve_merge_tol(&instance);
        let census = branch_degrees(&solution.flow, merge_tol);
        let max_degree = census.values().copied().max().unwrap_or(0);
        max_degree_seen = max_degree_seen.max(max_degree);
        if let Some(gap) = solution.competitor_gap {
            worst_gap = Some(match worst_gap {
                Some(w) => w.max(gap),
                None => gap,
            });
        }
        let audit = check_local_angles(&solution.flow, &instance.cost, config.angle_tol)
            .map_err(|e| Failure::input(e.to_string()))?;
        angle_violations_total += audit.violations().count();
        if max_degree >= 4 {
            failures.push(TheoremFailure {
                index,
                max_degree,
                degree_census: census,
                instance,
            });
        }
    }

    let all_pass = failures.is_empty();
    let report = TheoremReport {
        schema_version: SCHEMA_VERSION,
        command: "verify-theorem",
        seed: config.seed,
        samples: config.samples,
        instances_run: config.samples,
        max_degree_seen,
        worst_competitor_gap: worst_gap,
        angle_violations_total,
        all_pass,
        failures,
    };
    emit_report(config, &report::to_bytes(&report))?;
    Ok(if all_pass { EXIT_OK } else { EXIT_THEOREM })
}
