//! Constructions of degree-4 branching stars and the certificates proving
//! their optimality against every two-branch-point competitor.
//!
//! Both constructions follow the same recipe. From four masses of zero sum
//! (no two summing to zero), form the partial sums `S_j` and the distance
//! matrix `d_ij = C(|S_j − S_i|)`; embed it as a closed polychain
//! `A_1 A_2 A_3 A_4`, and take unit rays `B_i` from the origin `O` in the
//! directions `A_{i-1} A_i`. Closure of the polychain makes the weighted ray
//! directions balance (`Σ C(|m_i|)·ē_i = 0`), and consecutive rays open at
//! exactly the angle bound `h(m_i, m_{i+1})`. When additionally both diagonal
//! angles strictly exceed their bounds, the degree-4 star through `O` is
//! optimal: every competitor pairing, a convex two-point problem, bottoms out
//! at the collapsed configuration `U = V = O`.
//!
//! In three dimensions this works for admissible costs. In the plane it
//! requires a cyclic (Ptolemy) relation among the four cost values, satisfied
//! by a concave piecewise-linear cost with `C(1) = 1`, `C(2) = 1.9`,
//! `C(3) = 2.61` on masses `(1, 1, 1, -3)`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cost::{self, CostError, CostSpec};
use crate::flow::{self, Flow, FlowEdge, Instance, Terminal, Vertex, VertexKind};
use crate::geometry::{self, norm, scale, sub_raw, GeometryError, Point};
use crate::solver::{self, SolverError, TopoNode};

/// Why a mass/cost hypothesis fails to produce a degree-4 star certificate.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum Rejection {
    #[error("masses must sum to zero within 1e-12, got {sum:.3e}")]
    MassImbalance { sum: f64 },
    #[error("mass {index} is zero; all four masses must be nonzero")]
    ZeroMass { index: usize },
    #[error("masses {i} and {j} sum to zero; no pair may cancel")]
    ZeroPairSum { i: usize, j: usize },
    #[error("cost family is not of admissible form; use power, rational, or measure_atoms")]
    NonAdmissibleCostFamily,
    #[error(
        "diagonal angle condition failed: ∠B{a}OB{b} − h(m{a}, m{b}) = {margin:.6e} is not positive"
    )]
    DiagonalCondition { a: usize, b: usize, margin: f64 },
}

#[derive(Debug, Error)]
pub enum StarError {
    #[error(transparent)]
    Rejected(#[from] Rejection),
    #[error("embedding failed: {0}")]
    Embedding(#[from] GeometryError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("construction self-check failed: {0}")]
    Construction(String),
}

/// One consecutive-ray check: the measured angle `∠B_i O B_{i+1}` and the
/// bound `h(m_i, m_{i+1})` it must equal.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConsecutiveAngle {
    pub measured: f64,
    pub required: f64,
}

/// The two-pair splits of the four rays; a competitor tree joins each pair
/// to one of two branch points connected by a bridge edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Pairing {
    /// `{B1, B2} | {B3, B4}`
    FirstSecond,
    /// `{B1, B3} | {B2, B4}` (the crossing pairing)
    FirstThird,
    /// `{B1, B4} | {B2, B3}`
    FirstFourth,
}

impl Pairing {
    pub const ALL: [Pairing; 3] = [
        Pairing::FirstSecond,
        Pairing::FirstThird,
        Pairing::FirstFourth,
    ];

    /// Ray indices (0-based) grouped with ray 0 and the complementary pair.
    pub fn groups(&self) -> ([usize; 2], [usize; 2]) {
        match self {
            Pairing::FirstSecond => ([0, 1], [2, 3]),
            Pairing::FirstThird => ([0, 2], [1, 3]),
            Pairing::FirstFourth => ([0, 3], [1, 2]),
        }
    }

    pub const fn label(&self) -> &'static str {
        match self {
            Pairing::FirstSecond => "B1B2|B3B4",
            Pairing::FirstThird => "B1B3|B2B4",
            Pairing::FirstFourth => "B1B4|B2B3",
        }
    }
}

/// Certificate that the degree-4 star on unit rays is optimal for its
/// instance: the first-order balance residual at the hub, the slack in both
/// diagonal angle conditions, and the optimized value of all three
/// competitor pairings.
#[derive(Debug, Clone, Serialize)]
pub struct StarCertificate {
    pub instance: Instance,
    pub masses: [f64; 4],
    /// `Σ C(|m_i|) · 1` over the four unit rays.
    pub star_value: f64,
    /// `‖Σ C(|m_i|)·ē_i‖` at the hub.
    pub residual: f64,
    /// `(∠B1OB3 − h(m1, m3), ∠B2OB4 − h(m2, m4))`, both positive in a valid
    /// certificate.
    pub diagonal_margins: (f64, f64),
    /// Optimized competitor values in [`Pairing::ALL`] order.
    pub competitor_values: [f64; 3],
    pub consecutive: [ConsecutiveAngle; 4],
    /// The star flow through the hub `O`.
    pub star_flow: Flow,
}

impl StarCertificate {
    /// A certificate is valid when the hub balances, both diagonal
    /// conditions hold strictly, and no competitor undercuts the star.
    pub fn is_valid(&self) -> bool {
        self.residual < 1e-8
            && self.diagonal_margins.0 > 0.0
            && self.diagonal_margins.1 > 0.0
            && self
                .competitor_values
                .iter()
                .all(|&v| v >= self.star_value - 1e-9)
    }
}

/// The geometric core shared by both constructions: embedded polychain, unit
/// rays, consecutive equalities, hub residual, and diagonal margins.
struct StarGeometry {
    rays: [Point; 4],
    residual: f64,
    consecutive: [ConsecutiveAngle; 4],
    diagonal_margins: (f64, f64),
    polychain: [Point; 4],
}

fn check_masses(masses: &[f64; 4]) -> Result<(), Rejection> {
    let sum: f64 = masses.iter().sum();
    if sum.abs() > 1e-12 {
        return Err(Rejection::MassImbalance { sum });
    }
    for (i, m) in masses.iter().enumerate() {
        if m.abs() <= 1e-12 {
            return Err(Rejection::ZeroMass { index: i });
        }
    }
    for i in 0..4 {
        for j in i + 1..4 {
            if (masses[i] + masses[j]).abs() <= 1e-12 {
                return Err(Rejection::ZeroPairSum { i: i + 1, j: j + 1 });
            }
        }
    }
    Ok(())
}

fn build_star_geometry(
    masses: &[f64; 4],
    cost: &CostSpec,
    dim: usize,
) -> Result<StarGeometry, StarError> {
    cost.validate()?;
    // Partial sums S_1..S_4 (S_4 = 0); pairwise distances C(|S_j − S_i|).
    let mut partial = [0.0f64; 4];
    let mut acc = 0.0;
    for (i, m) in masses.iter().enumerate() {
        acc += m;
        partial[i] = acc;
    }
    let d = DMatrix::from_fn(4, 4, |i, j| {
        if i == j {
            0.0
        } else {
            cost.eval((partial[j] - partial[i]).abs())
        }
    });
    let polychain_vec = geometry::embed_from_distances(&d, dim)?;
    let polychain: [Point; 4] = [
        polychain_vec[0],
        polychain_vec[1],
        polychain_vec[2],
        polychain_vec[3],
    ];

    // Unit rays B_i in the directions A_{i-1} -> A_i (indices mod 4).
    let mut rays = [Point::new2(0.0, 0.0); 4];
    for i in 0..4 {
        let from = polychain[(i + 3) % 4].raw();
        let to = polychain[i].raw();
        let dir = sub_raw(to, from);
        let len = norm(dir);
        if len == 0.0 {
            return Err(StarError::Construction(format!(
                "polychain edge {} collapsed; cannot derive a ray direction",
                i + 1
            )));
        }
        rays[i] = Point::from_raw(scale(dir, 1.0 / len), dim);
    }

    let origin = Point::from_raw([0.0; 3], dim);

    // Consecutive rays must open at exactly h(m_i, m_{i+1}).
    let mut consecutive = [ConsecutiveAngle {
        measured: 0.0,
        required: 0.0,
    }; 4];
    for i in 0..4 {
        let j = (i + 1) % 4;
        let measured = geometry::angle(&rays[i], &origin, &rays[j])
            .map_err(|e| StarError::Construction(e.to_string()))?;
        let required = cost::h_angle(cost, masses[i], masses[j])?.value;
        if (measured - required).abs() > 1e-9 {
            return Err(StarError::Construction(format!(
                "consecutive angle {}-{} is {measured}, expected {required}",
                i + 1,
                j + 1
            )));
        }
        consecutive[i] = ConsecutiveAngle { measured, required };
    }

    // First-order balance at the hub: closure of the polychain makes the
    // weighted ray sum telescope to zero.
    let mut balance = [0.0f64; 3];
    for (ray, m) in rays.iter().zip(masses) {
        balance = geometry::add_raw(balance, scale(ray.raw(), cost.eval(m.abs())));
    }
    let residual = norm(balance);

    // Diagonal conditions ∠B1OB3 > h(m1, m3), ∠B2OB4 > h(m2, m4).
    let diag = |a: usize, b: usize| -> Result<f64, StarError> {
        let measured = geometry::angle(&rays[a], &origin, &rays[b])
            .map_err(|e| StarError::Construction(e.to_string()))?;
        let required = cost::h_angle(cost, masses[a], masses[b])?.value;
        Ok(measured - required)
    };
    let diagonal_margins = (diag(0, 2)?, diag(1, 3)?);

    Ok(StarGeometry {
        rays,
        residual,
        consecutive,
        diagonal_margins,
        polychain,
    })
}

fn star_instance(masses: &[f64; 4], cost: &CostSpec, rays: &[Point; 4], dim: usize) -> Instance {
    Instance {
        dimension: dim,
        terminals: (0..4)
            .map(|i| Terminal {
                id: format!("B{}", i + 1),
                position: rays[i],
                mass: -masses[i],
            })
            .collect(),
        cost: cost.clone(),
    }
}

fn star_flow(instance: &Instance, masses: &[f64; 4], dim: usize) -> Result<Flow, CostError> {
    let mut vertices: Vec<Vertex> = instance
        .terminals
        .iter()
        .map(|t| Vertex {
            id: t.id.clone(),
            position: t.position,
            kind: VertexKind::Terminal,
        })
        .collect();
    vertices.push(Vertex {
        id: "O".into(),
        position: Point::from_raw([0.0; 3], dim),
        kind: VertexKind::Branching,
    });
    let edges = (0..4)
        .map(|i| FlowEdge {
            u: format!("B{}", i + 1),
            v: "O".into(),
            mass: masses[i],
        })
        .collect();
    let mut f = Flow {
        vertices,
        edges,
        functional: 0.0,
    };
    f.functional = flow::gilbert_functional(&f, &instance.cost)?;
    Ok(f)
}

/// Builds the competitor topology joining each group of a pairing to its own
/// branch point, and optimizes its branch positions.
fn competitor_value(instance: &Instance, pairing: Pairing) -> Result<f64, SolverError> {
    let ([a0, a1], [b0, b1]) = pairing.groups();
    let edges = [
        (TopoNode::Terminal(a0), TopoNode::Steiner(0)),
        (TopoNode::Terminal(a1), TopoNode::Steiner(0)),
        (TopoNode::Terminal(b0), TopoNode::Steiner(1)),
        (TopoNode::Terminal(b1), TopoNode::Steiner(1)),
        (TopoNode::Steiner(0), TopoNode::Steiner(1)),
    ];
    let topology = solver::topology_from_edges(4, &edges)?;
    Ok(solver::optimize_positions(&topology, instance)?.value())
}

/// Builds the 3D degree-4 star for an admissible-form cost and the given
/// masses, checking the hypothesis as it goes.
///
/// Masses must sum to zero with no zero pair sums. The diagonal angle
/// conditions are genuine hypotheses: mass vectors that fail them are
/// rejected with the failing margin rather than treated as errors.
pub fn build_simplex_star(masses: [f64; 4], cost: &CostSpec) -> Result<StarCertificate, StarError> {
    check_masses(&masses)?;
    if matches!(cost, CostSpec::PiecewiseLinear { .. }) {
        return Err(Rejection::NonAdmissibleCostFamily.into());
    }
    let geometry = build_star_geometry(&masses, cost, 3)?;
    finish_certificate(masses, cost, geometry, 3)
}

/// The planar degree-4 star under the concave piecewise-linear cost with
/// `C(1) = 1`, `C(2) = 1.9`, `C(3) = 2.61` and masses `(1, 1, 1, -3)`.
///
/// The cyclic relation `C(2)² = C(1)·(C(1) + C(3))` makes the cost-length
/// quadrilateral an isosceles trapezoid, so the whole construction stays in
/// the plane. Every step is asserted; failures indicate an implementation
/// bug, not a bad hypothesis.
pub fn build_trapezoid_star() -> Result<StarCertificate, StarError> {
    let cost = trapezoid_cost();
    let masses = [1.0, 1.0, 1.0, -3.0];
    check_masses(&masses).expect("fixed masses are conforming");

    let c1 = cost.eval(1.0);
    let c2 = cost.eval(2.0);
    let c3 = cost.eval(3.0);
    let ptolemy = c2 * c2 - c1 * (c1 + c3);
    if ptolemy.abs() > 1e-12 {
        return Err(StarError::Construction(format!(
            "cyclic quadrilateral relation violated: C(2)² − C(1)(C(1)+C(3)) = {ptolemy:.3e}"
        )));
    }

    let geometry = build_star_geometry(&masses, &cost, 2)?;

    // Isosceles-trapezoid symmetry: both realized diagonals equal C(2).
    for (i, j) in [(0usize, 2usize), (1, 3)] {
        let realized = geometry.polychain[i].distance(&geometry.polychain[j]);
        if (realized - c2).abs() > 1e-10 {
            return Err(StarError::Construction(format!(
                "trapezoid diagonal {}-{} is {realized}, expected {c2}",
                i + 1,
                j + 1
            )));
        }
    }
    // The parallel sides force ∠B2OB4 = π exactly.
    let origin = Point::new2(0.0, 0.0);
    let opposite = geometry::angle(&geometry.rays[1], &origin, &geometry.rays[3])
        .map_err(|e| StarError::Construction(e.to_string()))?;
    if (opposite - std::f64::consts::PI).abs() > 1e-9 {
        return Err(StarError::Construction(format!(
            "rays B2 and B4 should be opposite, angle is {opposite}"
        )));
    }

    let cert = finish_certificate(masses, &cost, geometry, 2)?;
    if !cert.is_valid() {
        return Err(StarError::Construction(format!(
            "certificate failed validity: residual {:.3e}, margins {:?}, star {}, competitors {:?}",
            cert.residual, cert.diagonal_margins, cert.star_value, cert.competitor_values
        )));
    }
    Ok(cert)
}

fn finish_certificate(
    masses: [f64; 4],
    cost: &CostSpec,
    geometry: StarGeometry,
    dim: usize,
) -> Result<StarCertificate, StarError> {
    if geometry.residual >= 1e-8 {
        return Err(StarError::Construction(format!(
            "hub balance residual {:.3e} exceeds 1e-8",
            geometry.residual
        )));
    }
    let (d13, d24) = geometry.diagonal_margins;
    if d13 <= 0.0 {
        return Err(Rejection::DiagonalCondition {
            a: 1,
            b: 3,
            margin: d13,
        }
        .into());
    }
    if d24 <= 0.0 {
        return Err(Rejection::DiagonalCondition {
            a: 2,
            b: 4,
            margin: d24,
        }
        .into());
    }

    let instance = star_instance(&masses, cost, &geometry.rays, dim);
    instance
        .validate()
        .map_err(|e| StarError::Construction(format!("star instance invalid: {e}")))?;
    let star = star_flow(&instance, &masses, dim)?;
    let star_value = star.functional;

    let mut competitor_values = [0.0f64; 3];
    for (k, pairing) in Pairing::ALL.iter().enumerate() {
        competitor_values[k] = competitor_value(&instance, *pairing)?;
    }

    Ok(StarCertificate {
        instance,
        masses,
        star_value,
        residual: geometry.residual,
        diagonal_margins: geometry.diagonal_margins,
        competitor_values,
        consecutive: geometry.consecutive,
        star_flow: star,
    })
}

/// The concave piecewise-linear cost of the planar star: identity up to 1,
/// then slopes 0.9, 0.71, 0.5.
pub fn trapezoid_cost() -> CostSpec {
    CostSpec::PiecewiseLinear {
        breakpoints: vec![(0.0, 0.0), (1.0, 1.0), (2.0, 1.9), (3.0, 2.61), (4.0, 3.11)],
    }
}

/// The planar star instance with the trapezoid cost; convenience for the CLI
/// and tests.
pub fn trapezoid_instance() -> Result<Instance, StarError> {
    Ok(build_trapezoid_star()?.instance)
}

/// Evaluates a competitor pairing at explicit branch positions `u` and `v`:
/// each group's rays connect to its branch point, plus the bridge.
pub fn pairing_functional(cert: &StarCertificate, pairing: Pairing, u: &Point, v: &Point) -> f64 {
    let ([a0, a1], [b0, b1]) = pairing.groups();
    let cost = &cert.instance.cost;
    let ray = |i: usize| &cert.instance.terminals[i].position;
    let w = |i: usize| cost.eval(cert.masses[i].abs());
    let bridge_mass = (cert.masses[a0] + cert.masses[a1]).abs();
    w(a0) * u.distance(ray(a0))
        + w(a1) * u.distance(ray(a1))
        + w(b0) * v.distance(ray(b0))
        + w(b1) * v.distance(ray(b1))
        + cost.eval(bridge_mass) * u.distance(v)
}

/// Samples random perturbations `U = O + εu`, `V = O + δv` of the collapsed
/// competitor and returns the minimum of `L(U, V) − L(O, O)`. For a valid
/// certificate the collapsed configuration is a local (hence global) minimum,
/// so the result is nonnegative up to round-off.
pub fn perturbation_probe<R: Rng>(
    cert: &StarCertificate,
    pairing: Pairing,
    n_samples: usize,
    radius: f64,
    rng: &mut R,
) -> f64 {
    assert!(radius >= 0.0, "perturbation radius must be nonnegative");
    let dim = cert.instance.dimension;
    let origin = Point::from_raw([0.0; 3], dim);
    let base = pairing_functional(cert, pairing, &origin, &origin);
    if radius == 0.0 || n_samples == 0 {
        return 0.0;
    }
    let mut min_delta = f64::INFINITY;
    for _ in 0..n_samples {
        let u = random_unit(rng, dim);
        let v = random_unit(rng, dim);
        let eps = radius * rng.random::<f64>();
        let delta = radius * rng.random::<f64>();
        let pu = Point::from_raw(scale(u, eps), dim);
        let pv = Point::from_raw(scale(v, delta), dim);
        let l = pairing_functional(cert, pairing, &pu, &pv);
        min_delta = min_delta.min(l - base);
    }
    min_delta
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> [f64; 3] {
    loop {
        let mut v = [0.0f64; 3];
        for c in v.iter_mut().take(dim) {
            *c = 2.0 * rng.random::<f64>() - 1.0;
        }
        let len = norm(v);
        if len > 1e-3 && len <= 1.0 {
            return scale(v, 1.0 / len);
        }
    }
}

/// An integer mass vector satisfying the degree-4 hypothesis, with the slack
/// in its two diagonal conditions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MassWitness {
    pub masses: [f64; 4],
    pub diagonal_margins: (f64, f64),
}

/// Searches integer mass vectors `(m1, m2, m3, -m1-m2-m3)` with entries in
/// `[-max_abs, max_abs]` for those satisfying the full degree-4 hypothesis
/// under the given cost (hub balance plus strictly positive diagonal
/// margins).
pub fn search_simplex_masses(cost: &CostSpec, max_abs: i64) -> Result<Vec<MassWitness>, StarError> {
    if matches!(cost, CostSpec::PiecewiseLinear { .. }) {
        return Err(Rejection::NonAdmissibleCostFamily.into());
    }
    cost.validate()?;
    let mut found = Vec::new();
    for m1 in -max_abs..=max_abs {
        for m2 in -max_abs..=max_abs {
            for m3 in -max_abs..=max_abs {
                let m4 = -(m1 + m2 + m3);
                if m4.abs() > max_abs {
                    continue;
                }
                let masses = [m1 as f64, m2 as f64, m3 as f64, m4 as f64];
                if check_masses(&masses).is_err() {
                    continue;
                }
                match build_star_geometry(&masses, cost, 3) {
                    Ok(g) if g.diagonal_margins.0 > 0.0 && g.diagonal_margins.1 > 0.0 => {
                        found.push(MassWitness {
                            masses,
                            diagonal_margins: g.diagonal_margins,
                        });
                    }
                    Ok(_) => {}
                    // Non-embeddable mass vectors are simply not witnesses.
                    Err(StarError::Embedding(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trapezoid_cost_tabulated_values() {
        let cost = trapezoid_cost();
        assert_relative_eq!(cost.eval(1.0), 1.0);
        assert_relative_eq!(cost.eval(2.0), 1.9);
        assert_relative_eq!(cost.eval(3.0), 2.61);
        // Cyclic relation: 1.9² = 3.61 = 1·(1 + 2.61).
        assert!(
            (cost.eval(2.0).powi(2) - cost.eval(1.0) * (cost.eval(1.0) + cost.eval(3.0))).abs()
                < 1e-12
        );
    }

    #[test]
    fn trapezoid_certificate_is_valid() {
        let cert = build_trapezoid_star().unwrap();
        assert!(cert.is_valid());
        assert_relative_eq!(cert.star_value, 5.61, epsilon = 1e-12);
        assert!(cert.residual < 1e-8);
        assert!(cert.diagonal_margins.0 > 0.0 && cert.diagonal_margins.1 > 0.0);
        for c in &cert.consecutive {
            assert!((c.measured - c.required).abs() < 1e-9);
        }
        // Full turn around the hub.
        let turn: f64 = cert.consecutive.iter().map(|c| c.measured).sum();
        assert_relative_eq!(turn, 2.0 * std::f64::consts::PI, epsilon = 1e-9);
        for &v in &cert.competitor_values {
            assert!(
                v >= cert.star_value - 1e-9,
                "competitor at {v} beats {}",
                cert.star_value
            );
        }
    }

    #[test]
    fn trapezoid_star_flow_validates() {
        let cert = build_trapezoid_star().unwrap();
        let violations = flow::validate_flow(&cert.star_flow, &cert.instance).unwrap();
        assert!(violations.is_empty(), "{violations:?}");
        let degrees = flow::branch_degrees(&cert.star_flow, 1e-9);
        assert_eq!(degrees.get("O"), Some(&4));
    }

    #[test]
    fn simplex_star_rejects_zero_pair_sum() {
        let err = build_simplex_star([1.0, 1.0, -1.0, -1.0], &CostSpec::Power { p: 0.5 });
        assert!(matches!(
            err,
            Err(StarError::Rejected(Rejection::ZeroPairSum { .. }))
        ));
    }

    #[test]
    fn simplex_star_rejects_mass_imbalance() {
        let err = build_simplex_star([1.0, 2.0, 3.0, -5.0], &CostSpec::Power { p: 0.5 });
        assert!(matches!(
            err,
            Err(StarError::Rejected(Rejection::MassImbalance { .. }))
        ));
    }

    #[test]
    fn simplex_star_rejects_piecewise_cost() {
        let err = build_simplex_star([1.0, 2.0, 3.0, -6.0], &trapezoid_cost());
        assert!(matches!(
            err,
            Err(StarError::Rejected(Rejection::NonAdmissibleCostFamily))
        ));
    }

    #[test]
    fn simplex_geometry_reproduces_consecutive_bounds() {
        // Whether or not the diagonal hypothesis holds for these masses, the
        // embedded geometry must satisfy the construction identities.
        let masses = [1.0, 2.0, 3.0, -6.0];
        let g = build_star_geometry(&masses, &CostSpec::Power { p: 0.5 }, 3).unwrap();
        assert!(g.residual < 1e-8, "residual {}", g.residual);
        for c in &g.consecutive {
            assert!((c.measured - c.required).abs() < 1e-9);
        }
    }

    #[test]
    fn simplex_star_reports_hypothesis_outcome() {
        // Either outcome is information; what must not happen is a panic or
        // an inconsistent certificate.
        match build_simplex_star([1.0, 2.0, 3.0, -6.0], &CostSpec::Power { p: 0.5 }) {
            Ok(cert) => {
                assert!(cert.residual < 1e-8);
                assert!(cert.diagonal_margins.0 > 0.0 && cert.diagonal_margins.1 > 0.0);
            }
            Err(StarError::Rejected(Rejection::DiagonalCondition { margin, .. })) => {
                assert!(margin <= 0.0);
            }
            Err(e) => panic!("unexpected error: {e}"),
        }
    }

    #[test]
    fn perturbation_probe_zero_radius() {
        let cert = build_trapezoid_star().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            perturbation_probe(&cert, Pairing::FirstSecond, 100, 0.0, &mut rng),
            0.0
        );
    }

    #[test]
    fn perturbation_probe_is_nonnegative_for_all_pairings() {
        let cert = build_trapezoid_star().unwrap();
        for pairing in Pairing::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let min_delta = perturbation_probe(&cert, pairing, 2000, 1e-4, &mut rng);
            assert!(
                min_delta >= -1e-12,
                "pairing {} dipped to {min_delta:.3e}",
                pairing.label()
            );
        }
    }

    #[test]
    fn perturbation_probe_covers_three_dimensions() {
        // A strict 3D witness: masses (-4, 1, 1, 2) at p = 0.7 satisfy both
        // diagonal conditions with real slack.
        let cert = build_simplex_star([-4.0, 1.0, 1.0, 2.0], &CostSpec::Power { p: 0.7 }).unwrap();
        assert!(cert.is_valid());
        for pairing in Pairing::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let min_delta = perturbation_probe(&cert, pairing, 2000, 1e-4, &mut rng);
            assert!(min_delta >= -1e-12, "{}: {min_delta:.3e}", pairing.label());
        }
    }

    #[test]
    fn integer_mass_search_is_consistent_with_builder() {
        let cost = CostSpec::Power { p: 0.5 };
        let found = search_simplex_masses(&cost, 3).unwrap();
        for witness in &found {
            assert!(witness.diagonal_margins.0 > 0.0 && witness.diagonal_margins.1 > 0.0);
            let cert = build_simplex_star(witness.masses, &cost).unwrap();
            assert!(cert.residual < 1e-8);
        }
    }
}
