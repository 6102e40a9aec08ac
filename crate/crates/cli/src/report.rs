//! Machine-readable JSON reports. Field order is struct order and every map
//! is a `BTreeMap`, so serializing the same data always produces the same
//! bytes; the verify-theorem determinism check depends on this.

use branchflow::counterexamples::StarCertificate;
use branchflow::flow::{AngleAudit, AngleCheck, AngleStatus, Flow, Instance, Violation};
use serde::Serialize;
use std::collections::BTreeMap;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Serialize)]
pub struct TopologyEcho {
    pub id: String,
    pub edges: Vec<[String; 2]>,
}

#[derive(Debug, Serialize)]
pub struct AuditReport {
    pub tol: f64,
    pub pairs_checked: usize,
    pub violations: Vec<AngleCheck>,
    pub bound_unavailable: usize,
}

impl AuditReport {
    pub fn from_audit(audit: &AngleAudit) -> Self {
        AuditReport {
            tol: audit.tol,
            pairs_checked: audit.entries.len(),
            violations: audit
                .entries
                .iter()
                .filter(|e| e.status == AngleStatus::Violation)
                .cloned()
                .collect(),
            bound_unavailable: audit.unavailable(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SolveReport {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub instance: Instance,
    pub allow_degree4: bool,
    pub topologies_evaluated: usize,
    pub topology: TopologyEcho,
    pub flow: Flow,
    pub functional: f64,
    pub converged: bool,
    pub iterations: usize,
    pub competitor_gap: Option<f64>,
    pub degree_census: BTreeMap<String, usize>,
    pub angle_audit: AuditReport,
}

#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub violations: Vec<Violation>,
    pub declared_functional: f64,
    pub recomputed_functional: f64,
    pub functional_matches: bool,
    pub degree_census: BTreeMap<String, usize>,
    pub angle_audit: AuditReport,
    pub clean: bool,
}

#[derive(Debug, Serialize)]
pub struct DemoReport {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub demo: &'static str,
    pub valid: bool,
    pub rejection: Option<String>,
    pub competitor_pairings: [&'static str; 3],
    pub certificate: Option<StarCertificate>,
}

#[derive(Debug, Serialize)]
pub struct TheoremFailure {
    pub index: usize,
    pub max_degree: usize,
    pub degree_census: BTreeMap<String, usize>,
    pub instance: Instance,
}

#[derive(Debug, Serialize)]
pub struct TheoremReport {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub samples: usize,
    pub instances_run: usize,
    pub max_degree_seen: usize,
    pub worst_competitor_gap: Option<f64>,
    pub angle_violations_total: usize,
    pub all_pass: bool,
    pub failures: Vec<TheoremFailure>,
}

/// Canonical byte encoding of a report: pretty JSON plus a trailing newline.
pub fn to_bytes<T: Serialize>(report: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(report).expect("reports always serialize");
    bytes.push(b'\n');
    bytes
}
