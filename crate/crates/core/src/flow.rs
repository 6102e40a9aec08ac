//! Flow data model: problem instances, flows with antisymmetric edge masses,
//! the divergence identity, Gilbert functional evaluation, normalization
//! (branch merging and path smoothing), and the local angle audit.
//!
//! Sign conventions. An edge is stored once on the ordered pair `(u, v)` with
//! `u < v` lexicographically, carrying `m(u, v)`; `m(v, u) = -m(u, v)` is
//! implied. The divergence identity at a vertex `x` reads
//! `Σ_y m(x, y) = -mass(x)`, so a terminal with positive mass (a source)
//! pushes flow outward through negative outgoing `m` sums.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use thiserror::Error;

use crate::cost::{self, CostError, CostSpec};
use crate::geometry::{angle, Point};

/// Numeric tolerance for the divergence identity.
pub const DIVERGENCE_TOL: f64 = 1e-10;
/// Edge masses below this magnitude are dropped during normalization.
pub const MASS_DROP_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("instance needs at least 2 terminals, got {0}")]
    TooFewTerminals(usize),
    #[error("instance dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("terminal ids must be unique, `{0}` repeats")]
    DuplicateId(String),
    #[error("terminal `{id}` has a {got}-dimensional position in a {want}-dimensional instance")]
    PositionDimension { id: String, got: usize, want: usize },
    #[error("terminal positions must be pairwise distinct, `{0}` and `{1}` coincide")]
    CoincidentTerminals(String, String),
    #[error("terminal masses must sum to zero within 1e-12, got {0:.3e}")]
    MassImbalance(f64),
    #[error("terminal `{id}` has non-finite mass {mass}")]
    NonFiniteMass { id: String, mass: f64 },
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// A terminal: an identified point carrying signed mass (positive = source,
/// negative = sink).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub id: String,
    pub position: Point,
    pub mass: f64,
}

/// A problem instance: terminals with zero total mass plus a cost function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub dimension: usize,
    pub terminals: Vec<Terminal>,
    pub cost: CostSpec,
}

impl Instance {
    pub fn validate(&self) -> Result<(), InstanceError> {
        if self.dimension != 2 && self.dimension != 3 {
            return Err(InstanceError::BadDimension(self.dimension));
        }
        if self.terminals.len() < 2 {
            return Err(InstanceError::TooFewTerminals(self.terminals.len()));
        }
        let mut seen = HashSet::new();
        for t in &self.terminals {
            if !seen.insert(t.id.as_str()) {
                return Err(InstanceError::DuplicateId(t.id.clone()));
            }
            if t.position.dim() != self.dimension {
                return Err(InstanceError::PositionDimension {
                    id: t.id.clone(),
                    got: t.position.dim(),
                    want: self.dimension,
                });
            }
            if !t.mass.is_finite() {
                return Err(InstanceError::NonFiniteMass {
                    id: t.id.clone(),
                    mass: t.mass,
                });
            }
        }
        for i in 0..self.terminals.len() {
            for j in i + 1..self.terminals.len() {
                if self.terminals[i]
                    .position
                    .distance(&self.terminals[j].position)
                    == 0.0
                {
                    return Err(InstanceError::CoincidentTerminals(
                        self.terminals[i].id.clone(),
                        self.terminals[j].id.clone(),
                    ));
                }
            }
        }
        let sum: f64 = self.terminals.iter().map(|t| t.mass).sum();
        if sum.abs() > 1e-12 {
            return Err(InstanceError::MassImbalance(sum));
        }
        self.cost.validate()?;
        Ok(())
    }

    /// Largest pairwise terminal distance; the length scale of the instance.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.terminals.len() {
            for j in i + 1..self.terminals.len() {
                d = d.max(
                    self.terminals[i]
                        .position
                        .distance(&self.terminals[j].position),
                );
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    Terminal,
    Branching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: String,
    pub position: Point,
    pub kind: VertexKind,
}

/// One stored edge `{u, v}` with `u < v` and mass `m(u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEdge {
    pub u: String,
    pub v: String,
    pub mass: f64,
}

/// A flow: vertices, canonical edges, and the cached Gilbert functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<FlowEdge>,
    pub functional: f64,
}

impl Flow {
    pub fn vertex(&self, id: &str) -> Option<&Vertex> {
        self.vertices.iter().find(|v| v.id == id)
    }

    /// Signed outgoing mass `m(x, y)` for the stored edge, given `x`.
    fn outgoing(edge: &FlowEdge, x: &str) -> f64 {
        if edge.u == x {
            edge.mass
        } else {
            -edge.mass
        }
    }
}

#[derive(Debug, Error)]
pub enum StructuralError {
    #[error("duplicate vertex id `{0}`")]
    DuplicateVertexId(String),
    #[error("edge {index} references unknown vertex `{id}`")]
    DanglingEdge { index: usize, id: String },
}

/// A numeric or convention violation found by [`validate_flow`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    SelfLoop {
        id: String,
    },
    OrientationConvention {
        u: String,
        v: String,
    },
    DuplicateEdge {
        u: String,
        v: String,
    },
    ZeroMassEdge {
        u: String,
        v: String,
        mass: f64,
    },
    Divergence {
        vertex: String,
        net_outgoing: f64,
        required: f64,
    },
    MissingTerminal {
        id: String,
    },
    UnknownTerminal {
        id: String,
    },
    KindMismatch {
        id: String,
    },
    PositionMismatch {
        id: String,
    },
    DimensionMismatch {
        id: String,
        got: usize,
        want: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfLoop { id } => write!(f, "self-loop at `{id}`"),
            Violation::OrientationConvention { u, v } => {
                write!(f, "edge ({u}, {v}) violates the u < v storage convention")
            }
            Violation::DuplicateEdge { u, v } => write!(f, "edge {{{u}, {v}}} stored twice"),
            Violation::ZeroMassEdge { u, v, mass } => {
                write!(f, "edge {{{u}, {v}}} carries negligible mass {mass:.3e}")
            }
            Violation::Divergence {
                vertex,
                net_outgoing,
                required,
            } => write!(
                f,
                "divergence at `{vertex}`: outgoing mass sums to {net_outgoing:.12} but the \
                 terminal mass requires {required:.12}"
            ),
            Violation::MissingTerminal { id } => {
                write!(f, "instance terminal `{id}` is missing from the flow")
            }
            Violation::UnknownTerminal { id } => {
                write!(f, "flow terminal `{id}` does not appear in the instance")
            }
            Violation::KindMismatch { id } => {
                write!(f, "vertex `{id}` has the wrong kind for its role")
            }
            Violation::PositionMismatch { id } => {
                write!(
                    f,
                    "terminal `{id}` sits at a different position than in the instance"
                )
            }
            Violation::DimensionMismatch { id, got, want } => {
                write!(
                    f,
                    "vertex `{id}` has a {got}-dimensional position in a {want}-dimensional \
                     instance"
                )
            }
        }
    }
}

/// Checks a flow against its instance: storage conventions, the divergence
/// identity at every vertex (tolerance `1e-10`), nonzero edge masses, and
/// terminal coverage. Structural defects (duplicate or dangling ids) abort
/// with an error; numeric problems are returned as a violation list, empty
/// when the flow is valid.
pub fn validate_flow(flow: &Flow, instance: &Instance) -> Result<Vec<Violation>, StructuralError> {
    let mut index: HashMap<&str, &Vertex> = HashMap::new();
    for v in &flow.vertices {
        if index.insert(v.id.as_str(), v).is_some() {
            return Err(StructuralError::DuplicateVertexId(v.id.clone()));
        }
    }
    for (i, e) in flow.edges.iter().enumerate() {
        for id in [&e.u, &e.v] {
            if !index.contains_key(id.as_str()) {
                return Err(StructuralError::DanglingEdge {
                    index: i,
                    id: id.clone(),
                });
            }
        }
    }

    let mut violations = Vec::new();
    for v in &flow.vertices {
        if v.position.dim() != instance.dimension {
            violations.push(Violation::DimensionMismatch {
                id: v.id.clone(),
                got: v.position.dim(),
                want: instance.dimension,
            });
        }
    }
    let mut seen_pairs = HashSet::new();
    for e in &flow.edges {
        if e.u == e.v {
            violations.push(Violation::SelfLoop { id: e.u.clone() });
            continue;
        }
        if e.u > e.v {
            violations.push(Violation::OrientationConvention {
                u: e.u.clone(),
                v: e.v.clone(),
            });
        }
        let key = if e.u <= e.v {
            (e.u.clone(), e.v.clone())
        } else {
            (e.v.clone(), e.u.clone())
        };
        if !seen_pairs.insert(key) {
            violations.push(Violation::DuplicateEdge {
                u: e.u.clone(),
                v: e.v.clone(),
            });
        }
        if e.mass.abs() < MASS_DROP_TOL {
            violations.push(Violation::ZeroMassEdge {
                u: e.u.clone(),
                v: e.v.clone(),
                mass: e.mass,
            });
        }
    }

    let instance_mass: HashMap<&str, &Terminal> = instance
        .terminals
        .iter()
        .map(|t| (t.id.as_str(), t))
        .collect();
    for t in &instance.terminals {
        match index.get(t.id.as_str()) {
            None => violations.push(Violation::MissingTerminal { id: t.id.clone() }),
            Some(v) => {
                if v.kind != VertexKind::Terminal {
                    violations.push(Violation::KindMismatch { id: t.id.clone() });
                }
                if v.position != t.position {
                    violations.push(Violation::PositionMismatch { id: t.id.clone() });
                }
            }
        }
    }
    for v in &flow.vertices {
        if v.kind == VertexKind::Terminal && !instance_mass.contains_key(v.id.as_str()) {
            violations.push(Violation::UnknownTerminal { id: v.id.clone() });
        }
    }

    for v in &flow.vertices {
        let outgoing: f64 = flow
            .edges
            .iter()
            .filter(|e| e.u == v.id || e.v == v.id)
            .map(|e| Flow::outgoing(e, &v.id))
            .sum();
        let required = match v.kind {
            VertexKind::Terminal => instance_mass
                .get(v.id.as_str())
                .map(|t| -t.mass)
                .unwrap_or(0.0),
            VertexKind::Branching => 0.0,
        };
        if (outgoing - required).abs() > DIVERGENCE_TOL {
            violations.push(Violation::Divergence {
                vertex: v.id.clone(),
                net_outgoing: outgoing,
                required,
            });
        }
    }
    Ok(violations)
}

/// `Σ C(|m(u,v)|) · |uv|` over the edges, summed in lexicographic edge order
/// so repeated evaluation is bit-identical.
pub fn gilbert_functional(flow: &Flow, cost: &CostSpec) -> Result<f64, CostError> {
    cost.validate()?;
    let index: HashMap<&str, &Vertex> = flow.vertices.iter().map(|v| (v.id.as_str(), v)).collect();
    let mut order: Vec<&FlowEdge> = flow.edges.iter().collect();
    order.sort_by(|a, b| (&a.u, &a.v).cmp(&(&b.u, &b.v)));
    let mut total = 0.0;
    for e in order {
        let u = index.get(e.u.as_str()).expect("validated flow");
        let v = index.get(e.v.as_str()).expect("validated flow");
        total += cost.eval(e.mass.abs()) * u.position.distance(&v.position);
    }
    Ok(total)
}

/// Structure-only normalization: merges branch points that collide with a
/// terminal or with each other (within `merge_tol`), drops the edges that
/// collapse, sums parallel edges, removes negligible-mass edges, splices out
/// degree-2 branch points whose two edges carry equal mass, and deletes
/// isolated branch points.
fn merged_structure(flow: &Flow, merge_tol: f64) -> (Vec<Vertex>, Vec<FlowEdge>) {
    // Target id for every vertex after merging.
    let mut target: BTreeMap<String, String> = BTreeMap::new();
    let terminals: Vec<&Vertex> = flow
        .vertices
        .iter()
        .filter(|v| v.kind == VertexKind::Terminal)
        .collect();
    let branches: Vec<&Vertex> = flow
        .vertices
        .iter()
        .filter(|v| v.kind == VertexKind::Branching)
        .collect();

    for t in &terminals {
        target.insert(t.id.clone(), t.id.clone());
    }

    // Branch points within merge_tol of a terminal are absorbed by the
    // nearest one; terminals themselves never move or merge.
    let mut free_branches: Vec<&Vertex> = Vec::new();
    for b in &branches {
        let mut best: Option<(f64, &str)> = None;
        for t in &terminals {
            let d = b.position.distance(&t.position);
            if d <= merge_tol {
                match best {
                    Some((bd, _)) if bd <= d => {}
                    _ => best = Some((d, t.id.as_str())),
                }
            }
        }
        match best {
            Some((_, tid)) => {
                target.insert(b.id.clone(), tid.to_string());
            }
            None => free_branches.push(b),
        }
    }

    // Union-find over the remaining branch points by proximity.
    let k = free_branches.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..k {
        for j in i + 1..k {
            if free_branches[i]
                .position
                .distance(&free_branches[j].position)
                <= merge_tol
            {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..k {
        let root = find(&mut parent, i);
        clusters.entry(root).or_default().push(i);
    }

    let mut vertices: Vec<Vertex> = terminals.iter().map(|t| (*t).clone()).collect();
    for members in clusters.values() {
        // Representative id: lexicographically smallest member id; position:
        // mean over members in id order for determinism.
        let mut ids: Vec<&str> = members
            .iter()
            .map(|&i| free_branches[i].id.as_str())
            .collect();
        ids.sort_unstable();
        let rep = ids[0].to_string();
        let dim = free_branches[members[0]].position.dim();
        let mut acc = [0.0f64; 3];
        for id in &ids {
            let b = free_branches.iter().find(|b| b.id == *id).expect("member");
            let r = b.position.raw();
            acc = [acc[0] + r[0], acc[1] + r[1], acc[2] + r[2]];
        }
        let inv = 1.0 / ids.len() as f64;
        let position = Point::from_raw([acc[0] * inv, acc[1] * inv, acc[2] * inv], dim);
        for id in &ids {
            target.insert((*id).to_string(), rep.clone());
        }
        vertices.push(Vertex {
            id: rep,
            position,
            kind: VertexKind::Branching,
        });
    }

    // Remap edges onto the merged vertex set; drop collapsed edges, sum
    // parallel ones.
    let mut combined: BTreeMap<(String, String), f64> = BTreeMap::new();
    for e in &flow.edges {
        let tu = target.get(&e.u).cloned().unwrap_or_else(|| e.u.clone());
        let tv = target.get(&e.v).cloned().unwrap_or_else(|| e.v.clone());
        if tu == tv {
            continue;
        }
        let (key, mass) = if tu < tv {
            ((tu, tv), e.mass)
        } else {
            ((tv, tu), -e.mass)
        };
        *combined.entry(key).or_insert(0.0) += mass;
    }
    let edges: Vec<FlowEdge> = combined
        .into_iter()
        .map(|((u, v), mass)| FlowEdge { u, v, mass })
        .collect();
    cleanup(vertices, edges)
}

/// Iterates negligible-mass edge removal, degree-2 branch splicing, and
/// isolated-branch deletion to a fixed point.
fn cleanup(mut vertices: Vec<Vertex>, mut edges: Vec<FlowEdge>) -> (Vec<Vertex>, Vec<FlowEdge>) {
    loop {
        edges.retain(|e| e.mass.abs() >= MASS_DROP_TOL);

        let mut degree: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &edges {
            *degree.entry(e.u.as_str()).or_insert(0) += 1;
            *degree.entry(e.v.as_str()).or_insert(0) += 1;
        }

        // Splice out one degree-2 branch point whose through-masses agree.
        let splice = vertices.iter().find_map(|v| {
            if v.kind != VertexKind::Branching || degree.get(v.id.as_str()) != Some(&2) {
                return None;
            }
            let incident: Vec<usize> = edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.u == v.id || e.v == v.id)
                .map(|(i, _)| i)
                .collect();
            let (e1, e2) = (incident[0], incident[1]);
            // m(a, x) through the first edge must continue as m(x, b).
            let m_in = -Flow::outgoing(&edges[e1], &v.id);
            let m_out = Flow::outgoing(&edges[e2], &v.id);
            ((m_in - m_out).abs() <= DIVERGENCE_TOL).then_some((v.id.clone(), e1, e2, m_in))
        });
        if let Some((x, e1, e2, m_in)) = splice {
            let a = if edges[e1].u == x {
                edges[e1].v.clone()
            } else {
                edges[e1].u.clone()
            };
            let b = if edges[e2].u == x {
                edges[e2].v.clone()
            } else {
                edges[e2].u.clone()
            };
            let mut remove = [e1, e2];
            remove.sort_unstable();
            edges.remove(remove[1]);
            edges.remove(remove[0]);
            if a != b {
                let (u, v, mass) = if a < b { (a, b, m_in) } else { (b, a, -m_in) };
                if let Some(existing) = edges.iter_mut().find(|e| e.u == u && e.v == v) {
                    existing.mass += mass;
                } else {
                    edges.push(FlowEdge { u, v, mass });
                    edges.sort_by(|x, y| (&x.u, &x.v).cmp(&(&y.u, &y.v)));
                }
            }
            vertices.retain(|v| v.id != x);
            continue;
        }

        let before = vertices.len();
        vertices.retain(|v| {
            v.kind == VertexKind::Terminal || degree.get(v.id.as_str()).copied().unwrap_or(0) > 0
        });
        if vertices.len() != before {
            continue;
        }
        break;
    }
    edges.sort_by(|x, y| (&x.u, &x.v).cmp(&(&y.u, &y.v)));
    (vertices, edges)
}

/// Merges nearby branch points and reports the degree of every branch point
/// that survives normalization. Trees without branch points yield an empty
/// map.
pub fn branch_degrees(flow: &Flow, merge_tol: f64) -> BTreeMap<String, usize> {
    assert!(merge_tol >= 0.0, "merge tolerance must be nonnegative");
    let (vertices, edges) = merged_structure(flow, merge_tol);
    let mut degree: BTreeMap<String, usize> = BTreeMap::new();
    for e in &edges {
        *degree.entry(e.u.clone()).or_insert(0) += 1;
        *degree.entry(e.v.clone()).or_insert(0) += 1;
    }
    vertices
        .iter()
        .filter(|v| v.kind == VertexKind::Branching)
        .filter_map(|v| degree.get(&v.id).map(|&d| (v.id.clone(), d)))
        .collect()
}

/// Full normalization: merged structure plus a recomputed functional.
pub fn normalize_flow(flow: &Flow, cost: &CostSpec, merge_tol: f64) -> Result<Flow, CostError> {
    let (vertices, edges) = merged_structure(flow, merge_tol);
    let mut out = Flow {
        vertices,
        edges,
        functional: 0.0,
    };
    out.functional = gilbert_functional(&out, cost)?;
    Ok(out)
}

/// Outcome of one incident-edge-pair angle comparison at a branch point.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleStatus {
    Ok,
    Violation,
    /// The angle bound could not be computed (degenerate side or no triangle
    /// for a non-admissible cost); not counted as a violation.
    BoundUnavailable,
}

#[derive(Debug, Clone, Serialize)]
pub struct AngleCheck {
    pub branch: String,
    pub pair: (String, String),
    pub masses: (f64, f64),
    pub measured: Option<f64>,
    pub required: Option<f64>,
    /// `measured − required`; negative means the geometric angle undercuts
    /// the bound.
    pub margin: Option<f64>,
    pub status: AngleStatus,
}

/// Audit of every incident edge pair at every branch point.
#[derive(Debug, Clone, Serialize)]
pub struct AngleAudit {
    pub tol: f64,
    pub entries: Vec<AngleCheck>,
}

impl AngleAudit {
    pub fn violations(&self) -> impl Iterator<Item = &AngleCheck> {
        self.entries
            .iter()
            .filter(|e| e.status == AngleStatus::Violation)
    }

    pub fn is_clean(&self) -> bool {
        self.violations().next().is_none()
    }

    pub fn unavailable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.status == AngleStatus::BoundUnavailable)
            .count()
    }
}

/// Compares, at every branch point, the geometric angle between each pair of
/// incident edges against the bound `h(m_i, m_j)` computed from their
/// outgoing masses. Entries whose measured angle falls short of the bound by
/// more than `tol` are violations; minimal flows under admissible costs are
/// expected to audit clean.
pub fn check_local_angles(flow: &Flow, cost: &CostSpec, tol: f64) -> Result<AngleAudit, CostError> {
    cost.validate()?;
    let index: HashMap<&str, &Vertex> = flow.vertices.iter().map(|v| (v.id.as_str(), v)).collect();
    let mut entries = Vec::new();
    for v in &flow.vertices {
        if v.kind != VertexKind::Branching {
            continue;
        }
        let mut incident: Vec<(&str, f64)> = flow
            .edges
            .iter()
            .filter(|e| e.u == v.id || e.v == v.id)
            .map(|e| {
                let other = if e.u == v.id {
                    e.v.as_str()
                } else {
                    e.u.as_str()
                };
                (other, Flow::outgoing(e, &v.id))
            })
            .collect();
        incident.sort_by(|a, b| a.0.cmp(b.0));
        for i in 0..incident.len() {
            for j in i + 1..incident.len() {
                let (id_i, m_i) = incident[i];
                let (id_j, m_j) = incident[j];
                let p_i = index[id_i];
                let p_j = index[id_j];
                let measured = angle(&p_i.position, &v.position, &p_j.position).ok();
                let required = cost::h_angle(cost, m_i, m_j).ok().map(|h| h.value);
                let (margin, status) = match (measured, required) {
                    (Some(m), Some(r)) => {
                        let margin = m - r;
                        let status = if margin < -tol {
                            AngleStatus::Violation
                        } else {
                            AngleStatus::Ok
                        };
                        (Some(margin), status)
                    }
                    _ => (None, AngleStatus::BoundUnavailable),
                };
                entries.push(AngleCheck {
                    branch: v.id.clone(),
                    pair: (id_i.to_string(), id_j.to_string()),
                    masses: (m_i, m_j),
                    measured,
                    required,
                    margin,
                    status,
                });
            }
        }
    }
    Ok(AngleAudit { tol, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_terminal_instance() -> Instance {
        Instance {
            dimension: 2,
            terminals: vec![
                Terminal {
                    id: "t1".into(),
                    position: Point::new2(0.0, 0.0),
                    mass: 1.0,
                },
                Terminal {
                    id: "t2".into(),
                    position: Point::new2(3.0, 0.0),
                    mass: -1.0,
                },
            ],
            cost: CostSpec::Power { p: 0.5 },
        }
    }

    fn direct_edge_flow() -> Flow {
        Flow {
            vertices: vec![
                Vertex {
                    id: "t1".into(),
                    position: Point::new2(0.0, 0.0),
                    kind: VertexKind::Terminal,
                },
                Vertex {
                    id: "t2".into(),
                    position: Point::new2(3.0, 0.0),
                    kind: VertexKind::Terminal,
                },
            ],
            edges: vec![FlowEdge {
                u: "t1".into(),
                v: "t2".into(),
                mass: -1.0,
            }],
            functional: 3.0,
        }
    }

    /// Star hub with terminals B1..B3 sourcing into B4; masses (1,1,1,-3)
    /// on the rays gives terminal masses (-1,-1,-1,3).
    fn star_flow_and_instance() -> (Flow, Instance) {
        let positions = [
            Point::new2(1.0, 0.0),
            Point::new2(0.0, 1.0),
            Point::new2(-1.0, 0.0),
            Point::new2(0.0, -1.0),
        ];
        let masses = [1.0, 1.0, 1.0, -3.0];
        let instance = Instance {
            dimension: 2,
            terminals: (0..4)
                .map(|i| Terminal {
                    id: format!("B{}", i + 1),
                    position: positions[i],
                    mass: -masses[i],
                })
                .collect(),
            cost: CostSpec::Power { p: 0.5 },
        };
        let mut vertices: Vec<Vertex> = (0..4)
            .map(|i| Vertex {
                id: format!("B{}", i + 1),
                position: positions[i],
                kind: VertexKind::Terminal,
            })
            .collect();
        vertices.push(Vertex {
            id: "O".into(),
            position: Point::new2(0.0, 0.0),
            kind: VertexKind::Branching,
        });
        let edges = (0..4)
            .map(|i| FlowEdge {
                u: format!("B{}", i + 1),
                v: "O".into(),
                mass: masses[i],
            })
            .collect();
        let mut flow = Flow {
            vertices,
            edges,
            functional: 0.0,
        };
        flow.functional = gilbert_functional(&flow, &instance.cost).unwrap();
        (flow, instance)
    }

    #[test]
    fn instance_validation_catches_named_invariants() {
        let mut inst = two_terminal_instance();
        assert!(inst.validate().is_ok());
        inst.terminals[0].mass = 0.5;
        assert!(matches!(
            inst.validate(),
            Err(InstanceError::MassImbalance(_))
        ));

        let mut inst = two_terminal_instance();
        inst.terminals[1].position = Point::new2(0.0, 0.0);
        assert!(matches!(
            inst.validate(),
            Err(InstanceError::CoincidentTerminals(..))
        ));

        let mut inst = two_terminal_instance();
        inst.terminals.pop();
        inst.terminals[0].mass = 0.0;
        assert!(matches!(
            inst.validate(),
            Err(InstanceError::TooFewTerminals(1))
        ));

        let mut inst = two_terminal_instance();
        inst.dimension = 3;
        assert!(matches!(
            inst.validate(),
            Err(InstanceError::PositionDimension { .. })
        ));
    }

    #[test]
    fn validate_direct_edge() {
        let instance = two_terminal_instance();
        let flow = direct_edge_flow();
        assert!(validate_flow(&flow, &instance).unwrap().is_empty());
    }

    #[test]
    fn validate_flags_wrong_edge_mass() {
        let instance = two_terminal_instance();
        let mut flow = direct_edge_flow();
        flow.edges[0].mass = -0.5;
        let violations = validate_flow(&flow, &instance).unwrap();
        let divergences = violations
            .iter()
            .filter(|v| matches!(v, Violation::Divergence { .. }))
            .count();
        assert_eq!(divergences, 2);
    }

    #[test]
    fn validate_star_flow() {
        let (flow, instance) = star_flow_and_instance();
        assert!(validate_flow(&flow, &instance).unwrap().is_empty());
    }

    #[test]
    fn validate_flags_every_convention_breach() {
        let instance = two_terminal_instance();
        let mut flow = direct_edge_flow();
        // Orientation breach, duplicate pair, self-loop, zero mass, wrong
        // position, foreign terminal, and a dimension mismatch, all at once.
        flow.edges = vec![
            FlowEdge {
                u: "t2".into(),
                v: "t1".into(),
                mass: 1.0,
            },
            FlowEdge {
                u: "t1".into(),
                v: "t2".into(),
                mass: -1.0,
            },
            FlowEdge {
                u: "t1".into(),
                v: "t1".into(),
                mass: 1.0,
            },
            FlowEdge {
                u: "ghostless".into(),
                v: "t1".into(),
                mass: 0.0,
            },
        ];
        flow.vertices.push(Vertex {
            id: "ghostless".into(),
            position: Point::new3(0.0, 5.0, 1.0),
            kind: VertexKind::Terminal,
        });
        flow.vertices[0].position = Point::new2(0.25, 0.0);
        let violations = validate_flow(&flow, &instance).unwrap();
        let has = |p: fn(&Violation) -> bool| violations.iter().any(p);
        assert!(has(|v| matches!(
            v,
            Violation::OrientationConvention { .. }
        )));
        assert!(has(|v| matches!(v, Violation::DuplicateEdge { .. })));
        assert!(has(|v| matches!(v, Violation::SelfLoop { .. })));
        assert!(has(|v| matches!(v, Violation::ZeroMassEdge { .. })));
        assert!(has(|v| matches!(v, Violation::PositionMismatch { .. })));
        assert!(has(|v| matches!(v, Violation::UnknownTerminal { .. })));
        assert!(has(|v| matches!(v, Violation::DimensionMismatch { .. })));
        assert!(has(|v| matches!(v, Violation::Divergence { .. })));
        // Each violation renders and serializes.
        for v in &violations {
            assert!(!v.to_string().is_empty());
            assert!(serde_json::to_string(v).is_ok());
        }
    }

    #[test]
    fn validate_flags_missing_terminal_and_kind_mismatch() {
        let instance = two_terminal_instance();
        let mut flow = direct_edge_flow();
        flow.vertices[1].kind = VertexKind::Branching;
        let violations = validate_flow(&flow, &instance).unwrap();
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::KindMismatch { .. })));
        flow.vertices.remove(1);
        flow.edges.clear();
        let violations = validate_flow(&flow, &instance).unwrap();
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::MissingTerminal { .. })));
    }

    #[test]
    fn structural_errors_are_distinct() {
        let instance = two_terminal_instance();
        let mut flow = direct_edge_flow();
        flow.edges[0].v = "nope".into();
        assert!(matches!(
            validate_flow(&flow, &instance),
            Err(StructuralError::DanglingEdge { .. })
        ));
    }

    #[test]
    fn functional_of_single_edge() {
        // Mass 4 at power 1/2 costs 2 per unit length; length 3.
        let instance = two_terminal_instance();
        let mut flow = direct_edge_flow();
        flow.edges[0].mass = 4.0;
        let f = gilbert_functional(&flow, &instance.cost).unwrap();
        assert_relative_eq!(f, 6.0);
    }

    #[test]
    fn functional_of_empty_edge_set() {
        let mut flow = direct_edge_flow();
        flow.edges.clear();
        assert_eq!(
            gilbert_functional(&flow, &CostSpec::Power { p: 0.5 }).unwrap(),
            0.0
        );
    }

    #[test]
    fn star_functional_uses_tabulated_costs() {
        let (mut flow, _) = star_flow_and_instance();
        let cost = CostSpec::PiecewiseLinear {
            breakpoints: vec![(0.0, 0.0), (1.0, 1.0), (2.0, 1.9), (3.0, 2.61), (4.0, 3.11)],
        };
        flow.functional = gilbert_functional(&flow, &cost).unwrap();
        assert_relative_eq!(flow.functional, 5.61, epsilon = 1e-12);
    }

    #[test]
    fn branch_degrees_of_star() {
        let (flow, _) = star_flow_and_instance();
        let degrees = branch_degrees(&flow, 1e-9);
        assert_eq!(degrees.len(), 1);
        assert_eq!(degrees["O"], 4);
    }

    #[test]
    fn branch_degrees_merges_close_pair() {
        // Two degree-3 branch points 1e-12 apart merge into one of degree 4.
        let vertices = vec![
            Vertex {
                id: "a".into(),
                position: Point::new2(-1.0, 1.0),
                kind: VertexKind::Terminal,
            },
            Vertex {
                id: "b".into(),
                position: Point::new2(-1.0, -1.0),
                kind: VertexKind::Terminal,
            },
            Vertex {
                id: "c".into(),
                position: Point::new2(1.0, 1.0),
                kind: VertexKind::Terminal,
            },
            Vertex {
                id: "d".into(),
                position: Point::new2(1.0, -1.0),
                kind: VertexKind::Terminal,
            },
            Vertex {
                id: "u".into(),
                position: Point::new2(0.0, 0.0),
                kind: VertexKind::Branching,
            },
            Vertex {
                id: "v".into(),
                position: Point::new2(1e-12, 0.0),
                kind: VertexKind::Branching,
            },
        ];
        let edges = vec![
            FlowEdge {
                u: "a".into(),
                v: "u".into(),
                mass: 1.0,
            },
            FlowEdge {
                u: "b".into(),
                v: "u".into(),
                mass: 1.0,
            },
            FlowEdge {
                u: "u".into(),
                v: "v".into(),
                mass: -2.0,
            },
            FlowEdge {
                u: "c".into(),
                v: "v".into(),
                mass: -1.0,
            },
            FlowEdge {
                u: "d".into(),
                v: "v".into(),
                mass: -1.0,
            },
        ];
        let flow = Flow {
            vertices,
            edges,
            functional: 0.0,
        };
        let degrees = branch_degrees(&flow, 1e-9);
        assert_eq!(degrees.len(), 1);
        assert_eq!(degrees.values().next(), Some(&4));
    }

    #[test]
    fn branch_degrees_empty_for_tree_without_branches() {
        let flow = direct_edge_flow();
        assert!(branch_degrees(&flow, 1e-9).is_empty());
    }

    #[test]
    fn normalization_preserves_validity() {
        let (flow, instance) = star_flow_and_instance();
        let normalized = normalize_flow(&flow, &instance.cost, 1e-9).unwrap();
        assert!(validate_flow(&normalized, &instance).unwrap().is_empty());
        assert_relative_eq!(normalized.functional, flow.functional, epsilon = 1e-12);
    }

    #[test]
    fn normalization_splices_degree_two_branch() {
        let instance = two_terminal_instance();
        let vertices = vec![
            Vertex {
                id: "t1".into(),
                position: Point::new2(0.0, 0.0),
                kind: VertexKind::Terminal,
            },
            Vertex {
                id: "t2".into(),
                position: Point::new2(3.0, 0.0),
                kind: VertexKind::Terminal,
            },
            Vertex {
                id: "mid".into(),
                position: Point::new2(1.5, 0.0),
                kind: VertexKind::Branching,
            },
        ];
        let edges = vec![
            FlowEdge {
                u: "mid".into(),
                v: "t1".into(),
                mass: 1.0,
            },
            FlowEdge {
                u: "mid".into(),
                v: "t2".into(),
                mass: -1.0,
            },
        ];
        let flow = Flow {
            vertices,
            edges,
            functional: 3.0,
        };
        let normalized = normalize_flow(&flow, &instance.cost, 1e-9).unwrap();
        assert_eq!(normalized.vertices.len(), 2);
        assert_eq!(normalized.edges.len(), 1);
        assert!(validate_flow(&normalized, &instance).unwrap().is_empty());
    }

    #[test]
    fn angle_audit_empty_without_branch_points() {
        let instance = two_terminal_instance();
        let flow = direct_edge_flow();
        let audit = check_local_angles(&flow, &instance.cost, 1e-6).unwrap();
        assert!(audit.entries.is_empty());
        assert!(audit.is_clean());
    }

    #[test]
    fn angle_audit_flags_closed_angle() {
        // A symmetric 3-star for power 1/2 needs h(1,1) = π/2 between the
        // unit-mass rays; 60° apart violates the bound.
        let instance = Instance {
            dimension: 2,
            terminals: vec![
                Terminal {
                    id: "s".into(),
                    position: Point::new2(0.0, -1.0),
                    mass: 2.0,
                },
                Terminal {
                    id: "a".into(),
                    position: Point::new2(0.866, 0.5),
                    mass: -1.0,
                },
                Terminal {
                    id: "b".into(),
                    position: Point::new2(-0.866, 0.5),
                    mass: -1.0,
                },
            ],
            cost: CostSpec::Power { p: 0.5 },
        };
        let make_flow = |a: Point, b: Point| {
            let vertices = vec![
                Vertex {
                    id: "s".into(),
                    position: Point::new2(0.0, -1.0),
                    kind: VertexKind::Terminal,
                },
                Vertex {
                    id: "a".into(),
                    position: a,
                    kind: VertexKind::Terminal,
                },
                Vertex {
                    id: "b".into(),
                    position: b,
                    kind: VertexKind::Terminal,
                },
                Vertex {
                    id: "o".into(),
                    position: Point::new2(0.0, 0.0),
                    kind: VertexKind::Branching,
                },
            ];
            let edges = vec![
                FlowEdge {
                    u: "a".into(),
                    v: "o".into(),
                    mass: -1.0,
                },
                FlowEdge {
                    u: "b".into(),
                    v: "o".into(),
                    mass: -1.0,
                },
                FlowEdge {
                    u: "o".into(),
                    v: "s".into(),
                    mass: -2.0,
                },
            ];
            Flow {
                vertices,
                edges,
                functional: 0.0,
            }
        };
        // Equality placement: unit rays 90° apart (h(1,1) = π/2) and 135°
        // from the sink ray (h(1,-2) = 3π/4); all margins are zero.
        let s = 0.5f64.sqrt();
        let wide = make_flow(Point::new2(s, s), Point::new2(-s, s));
        let audit = check_local_angles(&wide, &instance.cost, 1e-6).unwrap();
        assert!(audit.is_clean(), "entries: {:?}", audit.entries);
        // Narrow placement: 60° between the unit-mass rays undercuts π/2.
        let narrow = make_flow(Point::new2(0.5, 0.866), Point::new2(-0.5, 0.866));
        let audit = check_local_angles(&narrow, &instance.cost, 1e-6).unwrap();
        assert!(audit.violations().count() >= 1);
    }

    #[test]
    fn instance_json_round_trip() {
        let json = r#"{
            "dimension": 2,
            "terminals": [
                {"id": "t1", "position": [0.0, 0.0], "mass": 1.0},
                {"id": "t2", "position": [1.0, 0.0], "mass": -1.0}
            ],
            "cost": {"type": "power", "p": 0.5}
        }"#;
        let inst: Instance = serde_json::from_str(json).unwrap();
        inst.validate().unwrap();
        let echoed = serde_json::to_string(&inst).unwrap();
        let back: Instance = serde_json::from_str(&echoed).unwrap();
        assert_eq!(inst, back);
    }
}
