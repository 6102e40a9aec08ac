//! Euclidean primitives shared by the solver and the star constructions:
//! points in 2 or 3 dimensions, angles, turning-angle sums over closed
//! polychains, the weighted Fermat–Torricelli solver, and classical
//! multidimensional scaling of a distance matrix.

use nalgebra::DMatrix;
use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(
        "iteration budget exhausted at objective {:.17}, residual {:.3e}",
        .best.objective, .best.residual
    )]
    Convergence { best: FermatResult },
    #[error(
        "distance matrix is not realizable in {target_dim} dimensions: offending eigenvalue {eigenvalue:.6e}"
    )]
    NotRealizable { eigenvalue: f64, target_dim: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// A point of the Euclidean plane or 3-space. Stored as three coordinates
/// with an explicit dimension; the third coordinate of a planar point is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    xyz: [f64; 3],
    dim: u8,
}

impl Point {
    pub fn new2(x: f64, y: f64) -> Self {
        Point {
            xyz: [x, y, 0.0],
            dim: 2,
        }
    }

    pub fn new3(x: f64, y: f64, z: f64) -> Self {
        Point {
            xyz: [x, y, z],
            dim: 3,
        }
    }

    pub fn from_coords(coords: &[f64]) -> Result<Self, GeometryError> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::Precondition(format!(
                "point coordinates must be finite, got {coords:?}"
            )));
        }
        match coords {
            [x, y] => Ok(Point::new2(*x, *y)),
            [x, y, z] => Ok(Point::new3(*x, *y, *z)),
            _ => Err(GeometryError::Precondition(format!(
                "points must have 2 or 3 coordinates, got {}",
                coords.len()
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[f64] {
        &self.xyz[..self.dim as usize]
    }

    pub(crate) fn raw(&self) -> [f64; 3] {
        self.xyz
    }

    pub(crate) fn from_raw(xyz: [f64; 3], dim: usize) -> Self {
        debug_assert!(dim == 2 || dim == 3);
        Point {
            xyz,
            dim: dim as u8,
        }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        norm(sub_raw(other.xyz, self.xyz))
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.coords();
        write!(f, "(")?;
        for (i, v) in c.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.dim()))?;
        for c in self.coords() {
            seq.serialize_element(c)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PointVisitor;
        impl<'de> Visitor<'de> for PointVisitor {
            type Value = Point;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array of 2 or 3 finite numbers")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Point, A::Error> {
                let mut coords = Vec::with_capacity(3);
                while let Some(v) = seq.next_element::<f64>()? {
                    if coords.len() == 3 {
                        return Err(de::Error::invalid_length(4, &self));
                    }
                    coords.push(v);
                }
                Point::from_coords(&coords).map_err(de::Error::custom)
            }
        }
        deserializer.deserialize_seq(PointVisitor)
    }
}

pub(crate) fn sub_raw(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add_raw(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(v: [f64; 3], s: f64) -> [f64; 3] {
    [v[0] * s, v[1] * s, v[2] * s]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(v: [f64; 3]) -> f64 {
    dot(v, v).sqrt()
}

/// The angle at `apex` between the rays toward `a` and `b`, in `[0, π]`.
pub fn angle(a: &Point, apex: &Point, b: &Point) -> Result<f64, GeometryError> {
    let u = sub_raw(a.raw(), apex.raw());
    let v = sub_raw(b.raw(), apex.raw());
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(GeometryError::Precondition(
            "angle is undefined for a zero-length ray".into(),
        ));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0).acos())
}

/// Sum of turning angles `Σ (π − ∠A_{i-1} A_i A_{i+1})` over a closed
/// polychain, indices cyclic. The sum is at least `2π` for every closed
/// polychain with distinct consecutive points, with equality exactly for
/// planar convex configurations.
pub fn turning_angle_sum(cycle: &[Point]) -> Result<f64, GeometryError> {
    let n = cycle.len();
    if n < 3 {
        return Err(GeometryError::Precondition(format!(
            "a closed polychain needs at least 3 points, got {n}"
        )));
    }
    if cycle.iter().any(|p| p.dim() != cycle[0].dim()) {
        return Err(GeometryError::Precondition(
            "mixed point dimensions in cycle".into(),
        ));
    }
    for i in 0..n {
        if cycle[i].distance(&cycle[(i + 1) % n]) == 0.0 {
            return Err(GeometryError::Precondition(format!(
                "consecutive cycle points {} and {} coincide",
                i,
                (i + 1) % n
            )));
        }
    }
    let mut sum = 0.0;
    for i in 0..n {
        let prev = &cycle[(i + n - 1) % n];
        let next = &cycle[(i + 1) % n];
        sum += PI - angle(prev, &cycle[i], next)?;
    }
    Ok(sum)
}

/// Outcome of the weighted Fermat–Torricelli minimization of
/// `L(X) = Σ w_i · |A_i X|`.
#[derive(Debug, Clone)]
pub struct FermatResult {
    pub minimizer: Point,
    /// Index of the anchor the minimizer coincides with, when the minimum is
    /// attained at an anchor.
    pub at_anchor: Option<usize>,
    pub objective: f64,
    /// First-order optimality defect: `‖Σ w_i ē_i‖` at an interior minimizer,
    /// or the excess of the pull over the anchor weight (0 when cleanly
    /// optimal at an anchor).
    pub residual: f64,
}

pub(crate) fn objective_at(x: [f64; 3], anchors: &[Point], weights: &[f64]) -> f64 {
    anchors
        .iter()
        .zip(weights)
        .map(|(a, w)| w * norm(sub_raw(a.raw(), x)))
        .sum()
}

/// Pull vector `Σ_{i≠j} w_i ē_i` at anchor `j`, where `ē_i` points from the
/// anchor toward `A_i`.
fn anchor_pull(j: usize, anchors: &[Point], weights: &[f64]) -> [f64; 3] {
    let base = anchors[j].raw();
    let mut pull = [0.0; 3];
    for (i, a) in anchors.iter().enumerate() {
        if i == j {
            continue;
        }
        let d = sub_raw(a.raw(), base);
        let len = norm(d);
        pull = add_raw(pull, scale(d, weights[i] / len));
    }
    pull
}

const WEISZFELD_MAX_ITERS: usize = 100_000;
const ANCHOR_SNAP: f64 = 1e-13;
const ANCHOR_ESCAPE: f64 = 1e-10;

/// Minimizes `L(X) = Σ w_i · |A_i X|` over 3 or 4 pairwise-distinct anchors
/// with nonnegative weights, not all zero.
///
/// Each anchor is first tested for vertex optimality, `‖Σ_{i≠j} w_i ē_i‖ ≤
/// w_j`; when no anchor qualifies, Weiszfeld iteration runs from the weighted
/// centroid until the objective decrease drops below `1e-14` relative,
/// displacing iterates that collide with a non-optimal anchor.
pub fn weighted_fermat(anchors: &[Point], weights: &[f64]) -> Result<FermatResult, GeometryError> {
    let n = anchors.len();
    if !(3..=4).contains(&n) {
        return Err(GeometryError::Precondition(format!(
            "expected 3 or 4 anchors, got {n}"
        )));
    }
    fermat_core(anchors, weights)
}

/// [`weighted_fermat`] without the anchor-count restriction; the solver uses
/// this to re-center whole clusters of coalesced branch nodes, whose
/// combined outside anchor sets can exceed four.
pub(crate) fn fermat_core(
    anchors: &[Point],
    weights: &[f64],
) -> Result<FermatResult, GeometryError> {
    let n = anchors.len();
    if n < 2 {
        return Err(GeometryError::Precondition(format!(
            "expected at least 2 anchors, got {n}"
        )));
    }
    if weights.len() != n {
        return Err(GeometryError::Precondition(format!(
            "expected {n} weights, got {}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(GeometryError::Precondition(format!(
            "weights must be finite and nonnegative, got {weights:?}"
        )));
    }
    let weight_sum: f64 = weights.iter().sum();
    if weight_sum <= 0.0 {
        return Err(GeometryError::Precondition(
            "weights must not all be zero".into(),
        ));
    }
    if anchors.iter().any(|a| a.dim() != anchors[0].dim()) {
        return Err(GeometryError::Precondition(
            "mixed anchor dimensions".into(),
        ));
    }
    let mut scale_len: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = anchors[i].distance(&anchors[j]);
            if d == 0.0 {
                return Err(GeometryError::Precondition(format!(
                    "anchors {i} and {j} coincide"
                )));
            }
            scale_len = scale_len.max(d);
        }
    }
    let dim = anchors[0].dim();

    // Vertex-optimality test; keep the anchor with the largest margin.
    let mut best_anchor: Option<(usize, f64, f64)> = None; // (index, margin, pull norm)
    for j in 0..n {
        let pull = norm(anchor_pull(j, anchors, weights));
        let margin = weights[j] - pull;
        if pull <= weights[j] * (1.0 + 1e-12) + 1e-15 {
            match best_anchor {
                Some((_, m, _)) if m >= margin => {}
                _ => best_anchor = Some((j, margin, pull)),
            }
        }
    }
    if let Some((j, _, pull)) = best_anchor {
        return Ok(FermatResult {
            minimizer: anchors[j],
            at_anchor: Some(j),
            objective: objective_at(anchors[j].raw(), anchors, weights),
            residual: (pull - weights[j]).max(0.0),
        });
    }

    // Weiszfeld from the weighted centroid.
    let mut x = [0.0; 3];
    for (a, w) in anchors.iter().zip(weights) {
        x = add_raw(x, scale(a.raw(), w / weight_sum));
    }
    x = escape_if_on_anchor(x, anchors, weights, scale_len);
    let mut objective = objective_at(x, anchors, weights);

    for iter in 0..WEISZFELD_MAX_ITERS {
        let mut numer = [0.0; 3];
        let mut denom = 0.0;
        for (a, w) in anchors.iter().zip(weights) {
            let d = norm(sub_raw(a.raw(), x));
            let coef = w / d;
            numer = add_raw(numer, scale(a.raw(), coef));
            denom += coef;
        }
        let mut next = scale(numer, 1.0 / denom);
        next = escape_if_on_anchor(next, anchors, weights, scale_len);
        let next_objective = objective_at(next, anchors, weights);
        debug_assert!(
            next_objective <= objective * (1.0 + 1e-13) + 1e-300,
            "Weiszfeld objective increased: {objective} -> {next_objective} at iteration {iter}"
        );
        let decrease = objective - next_objective;
        x = next;
        objective = next_objective;
        if decrease < 1e-14 * objective.max(1.0) {
            let residual = norm(interior_gradient(x, anchors, weights));
            return Ok(FermatResult {
                minimizer: Point::from_raw(x, dim),
                at_anchor: None,
                objective,
                residual,
            });
        }
    }
    Err(GeometryError::Convergence {
        best: FermatResult {
            minimizer: Point::from_raw(x, dim),
            at_anchor: None,
            objective,
            residual: norm(interior_gradient(x, anchors, weights)),
        },
    })
}

/// `Σ w_i ē_i` with unit vectors from `x` toward the anchors; zero at an
/// interior optimum.
fn interior_gradient(x: [f64; 3], anchors: &[Point], weights: &[f64]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (a, w) in anchors.iter().zip(weights) {
        let d = sub_raw(a.raw(), x);
        let len = norm(d);
        if len > 0.0 {
            g = add_raw(g, scale(d, w / len));
        }
    }
    g
}

fn escape_if_on_anchor(
    x: [f64; 3],
    anchors: &[Point],
    weights: &[f64],
    scale_len: f64,
) -> [f64; 3] {
    for (j, a) in anchors.iter().enumerate() {
        if norm(sub_raw(x, a.raw())) < ANCHOR_SNAP * scale_len {
            // The anchor failed the vertex test, so the pull direction is a
            // strict descent direction; step off along it.
            let pull = anchor_pull(j, anchors, weights);
            let len = norm(pull);
            debug_assert!(len > 0.0);
            return add_raw(a.raw(), scale(pull, ANCHOR_ESCAPE * scale_len / len));
        }
    }
    x
}

/// Reconstructs point coordinates from a symmetric zero-diagonal distance
/// matrix by classical multidimensional scaling.
///
/// Double-centers the squared distances, eigendecomposes, and requires every
/// eigenvalue outside the leading `target_dim` to be negligible relative to
/// the largest one (tolerance `1e-9`); otherwise the matrix does not embed in
/// `target_dim` Euclidean dimensions and the offending eigenvalue is
/// reported. Realized coordinates reproduce the input distances to `1e-8`
/// relative error.
pub fn embed_from_distances(
    d: &DMatrix<f64>,
    target_dim: usize,
) -> Result<Vec<Point>, GeometryError> {
    if target_dim != 2 && target_dim != 3 {
        return Err(GeometryError::Precondition(format!(
            "target dimension must be 2 or 3, got {target_dim}"
        )));
    }
    let n = d.nrows();
    if n == 0 || d.ncols() != n {
        return Err(GeometryError::Precondition(format!(
            "distance matrix must be square and nonempty, got {}x{}",
            n,
            d.ncols()
        )));
    }
    for i in 0..n {
        if d[(i, i)] != 0.0 {
            return Err(GeometryError::Precondition(format!(
                "distance matrix diagonal must be zero, got {} at ({i}, {i})",
                d[(i, i)]
            )));
        }
        for j in 0..n {
            let v = d[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(GeometryError::Precondition(format!(
                    "distances must be finite and nonnegative, got {v} at ({i}, {j})"
                )));
            }
            if v != d[(j, i)] {
                return Err(GeometryError::Precondition(format!(
                    "distance matrix must be symmetric, entries ({i},{j}) and ({j},{i}) differ"
                )));
            }
        }
    }

    // B = -1/2 · J D² J via row/column means of the squared distances.
    let sq = DMatrix::from_fn(n, n, |i, j| d[(i, j)] * d[(i, j)]);
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand_mean = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + grand_mean)
    });

    let eigen = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .total_cmp(&eigen.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let lambda_max = eigen.eigenvalues[order[0]].max(0.0);
    let tol = 1e-9 * lambda_max;
    for &k in order.iter().skip(target_dim) {
        if eigen.eigenvalues[k].abs() > tol {
            return Err(GeometryError::NotRealizable {
                eigenvalue: eigen.eigenvalues[k],
                target_dim,
            });
        }
    }
    for &k in order.iter().take(target_dim.min(n)) {
        if eigen.eigenvalues[k] < -tol {
            return Err(GeometryError::NotRealizable {
                eigenvalue: eigen.eigenvalues[k],
                target_dim,
            });
        }
    }

    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let mut xyz = [0.0; 3];
        for (axis, &k) in order.iter().take(target_dim.min(n)).enumerate() {
            let lambda = eigen.eigenvalues[k].max(0.0);
            xyz[axis] = eigen.eigenvectors[(i, k)] * lambda.sqrt();
        }
        points.push(Point::from_raw(xyz, target_dim));
    }

    let d_max = d.iter().cloned().fold(0.0f64, f64::max);
    for i in 0..n {
        for j in i + 1..n {
            let realized = points[i].distance(&points[j]);
            if (realized - d[(i, j)]).abs() > 1e-8 * d_max.max(f64::MIN_POSITIVE) {
                return Err(GeometryError::Numeric(format!(
                    "embedding failed to reproduce distance ({i}, {j}): {realized} vs {}",
                    d[(i, j)]
                )));
            }
        }
    }
    Ok(points)
}
