//! Cost-function families, the branch-angle bound `h(m1, m2)`, and numerical
//! admissibility verification.
//!
//! Four families are evaluated through one interface. `power` and `rational`
//! are admissible costs with closed forms; `measure_atoms` evaluates
//! `√(Σ w_i sin²(t·x_i))`, the atomic version of the integral form that
//! defines admissibility; `piecewise_linear` covers concave interpolated
//! costs, in particular the one used by the planar degree-4 star.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::quad::{self, QuadError};

#[derive(Debug, Error)]
pub enum CostError {
    #[error("invalid cost specification: {0}")]
    Config(String),
    #[error(
        "sides ({w1}, {w2}, {w3}) admit no triangle: cosine argument {cos_arg} lies outside \
         [-1, 1] beyond tolerance"
    )]
    NoTriangle {
        w1: f64,
        w2: f64,
        w3: f64,
        cos_arg: f64,
    },
    #[error("degenerate angle bound: both mass costs must be positive, got ({w1}, {w2})")]
    Degenerate { w1: f64, w2: f64 },
    #[error("numeric failure: {0}")]
    Numeric(#[from] QuadError),
}

/// A cost function `C: [0, ∞) → [0, ∞)` with `C(0) = 0`, one of four families.
///
/// The JSON encoding is tagged by `type`:
/// `{"type":"power","p":0.5}`, `{"type":"rational","c":1.0}`,
/// `{"type":"piecewise_linear","breakpoints":[[0,0],[1,1],[2,1.9]]}`,
/// `{"type":"measure_atoms","atoms":[[1.0,0.5]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CostSpec {
    /// `C(t) = t^p` with `0 < p < 1`.
    Power { p: f64 },
    /// `C(t) = t / √(t² + c²)` with `c > 0`.
    Rational { c: f64 },
    /// Linear interpolation through `(t, C(t))` breakpoints starting at
    /// `(0, 0)`; the final segment's slope extends beyond the last breakpoint.
    PiecewiseLinear { breakpoints: Vec<(f64, f64)> },
    /// `C(t) = √(Σ w_i sin²(t·x_i))` for atoms `(x_i, w_i)`, `w_i > 0`.
    ///
    /// The alternative admissible form `√(Σ 4·w·sin²(t·x/2))` is the same
    /// family: halve each atom position and fold the factor 4 into its
    /// weight.
    MeasureAtoms { atoms: Vec<(f64, f64)> },
}

impl CostSpec {
    /// Checks the family-specific parameter invariants.
    pub fn validate(&self) -> Result<(), CostError> {
        match self {
            CostSpec::Power { p } => {
                if !p.is_finite() || *p <= 0.0 || *p >= 1.0 {
                    return Err(CostError::Config(format!(
                        "power cost requires 0 < p < 1, got p = {p}"
                    )));
                }
            }
            CostSpec::Rational { c } => {
                if !c.is_finite() || *c <= 0.0 {
                    return Err(CostError::Config(format!(
                        "rational cost requires c > 0, got c = {c}"
                    )));
                }
            }
            CostSpec::PiecewiseLinear { breakpoints } => {
                if breakpoints.len() < 2 {
                    return Err(CostError::Config(
                        "piecewise_linear cost requires at least two breakpoints".into(),
                    ));
                }
                if breakpoints[0] != (0.0, 0.0) {
                    return Err(CostError::Config(format!(
                        "piecewise_linear cost must start at the breakpoint (0, 0), got {:?}",
                        breakpoints[0]
                    )));
                }
                for pair in breakpoints.windows(2) {
                    if pair[1].0 <= pair[0].0 || pair[1].0.is_nan() || pair[0].0.is_nan() {
                        return Err(CostError::Config(format!(
                            "piecewise_linear abscissae must be strictly increasing, got {} then {}",
                            pair[0].0, pair[1].0
                        )));
                    }
                }
                for &(t, v) in breakpoints {
                    if !t.is_finite() || !v.is_finite() || v < 0.0 {
                        return Err(CostError::Config(format!(
                            "piecewise_linear values must be finite and nonnegative, got ({t}, {v})"
                        )));
                    }
                }
            }
            CostSpec::MeasureAtoms { atoms } => {
                if atoms.is_empty() {
                    return Err(CostError::Config(
                        "measure_atoms cost requires at least one atom".into(),
                    ));
                }
                for &(x, w) in atoms {
                    if !x.is_finite() || !w.is_finite() || w <= 0.0 {
                        return Err(CostError::Config(format!(
                            "measure_atoms weights must be finite and positive, got ({x}, {w})"
                        )));
                    }
                }
                if atoms.iter().all(|&(x, _)| x == 0.0) {
                    return Err(CostError::Config(
                        "measure_atoms cost requires an atom with x != 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Evaluates `C(t)` assuming the spec is valid and `t >= 0`.
    pub fn eval(&self, t: f64) -> f64 {
        assert!(
            t >= 0.0 && t.is_finite(),
            "cost argument must be a finite nonnegative real"
        );
        match self {
            CostSpec::Power { p } => t.powf(*p),
            CostSpec::Rational { c } => {
                if t == 0.0 {
                    0.0
                } else {
                    t / (t * t + c * c).sqrt()
                }
            }
            CostSpec::PiecewiseLinear { breakpoints } => {
                let last = breakpoints.len() - 1;
                // First segment whose right endpoint is at or past t; beyond
                // the table, the final segment extrapolates.
                let seg_end = breakpoints
                    .partition_point(|&(bt, _)| bt < t)
                    .min(last)
                    .max(1);
                let (t0, v0) = breakpoints[seg_end - 1];
                let (t1, v1) = breakpoints[seg_end];
                v0 + (v1 - v0) / (t1 - t0) * (t - t0)
            }
            CostSpec::MeasureAtoms { atoms } => atoms
                .iter()
                .map(|&(x, w)| {
                    let s = (t * x).sin();
                    w * s * s
                })
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// Validated evaluation of `C(t)`.
pub fn eval_cost(spec: &CostSpec, t: f64) -> Result<f64, CostError> {
    spec.validate()?;
    Ok(spec.eval(t))
}

/// The angle bound at a branch point: the outer angle between the sides of
/// lengths `C(|m1|)` and `C(|m2|)` in the triangle whose third side is
/// `C(|m1 + m2|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HAngle {
    /// Outer angle in radians, in `[0, π]`.
    pub value: f64,
    /// The side triple `(C(|m1|), C(|m2|), C(|m1+m2|))` that produced it.
    pub sides: (f64, f64, f64),
}

/// Computes `h(m1, m2) = arccos((w3² − w1² − w2²) / (2·w1·w2))` with
/// `w1 = C(|m1|)`, `w2 = C(|m2|)`, `w3 = C(|m1+m2|)`.
///
/// The cosine argument is clamped to `[-1, 1]` when within `1e-12` of the
/// interval; a larger excess means the side triple violates the triangle
/// inequality, which only happens for non-admissible costs.
pub fn h_angle(spec: &CostSpec, m1: f64, m2: f64) -> Result<HAngle, CostError> {
    spec.validate()?;
    let w1 = spec.eval(m1.abs());
    let w2 = spec.eval(m2.abs());
    let w3 = spec.eval((m1 + m2).abs());
    if w1 <= 0.0 || w2 <= 0.0 {
        return Err(CostError::Degenerate { w1, w2 });
    }
    // Order the two mass sides so the result is bit-identical under swapping
    // (m1, m2), not merely equal up to rounding.
    let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
    let cos_arg = (w3 * w3 - lo * lo - hi * hi) / (2.0 * lo * hi);
    if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&cos_arg) {
        return Err(CostError::NoTriangle {
            w1,
            w2,
            w3,
            cos_arg,
        });
    }
    Ok(HAngle {
        value: cos_arg.clamp(-1.0, 1.0).acos(),
        sides: (w1, w2, w3),
    })
}

/// A grid pair on which subadditivity `C(t) + C(s) >= C(t+s)` failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubadditivityViolation {
    pub t: f64,
    pub s: f64,
    /// `C(t) + C(s)`.
    pub split: f64,
    /// `C(t + s)`.
    pub joint: f64,
}

/// Reports every pair with `C(t) + C(s) < C(t+s) − 1e−12`; empty for
/// subadditive costs.
pub fn check_subadditive(
    spec: &CostSpec,
    grid: &[(f64, f64)],
) -> Result<Vec<SubadditivityViolation>, CostError> {
    spec.validate()?;
    if grid.iter().any(|&(t, s)| t < 0.0 || s < 0.0) {
        return Err(CostError::Config(
            "subadditivity grid values must be nonnegative".into(),
        ));
    }
    Ok(grid
        .iter()
        .filter_map(|&(t, s)| {
            let split = spec.eval(t) + spec.eval(s);
            let joint = spec.eval(t + s);
            (split < joint - 1e-12).then_some(SubadditivityViolation { t, s, split, joint })
        })
        .collect())
}

/// `f(t)² = ∫_0^∞ sin²(tx) x^(−2p−1) dx`, integrated numerically per sample.
///
/// The integral is split at `x = 1/t`. On the head the substitution
/// `x = u^(1/(2−2p))` flattens the algebraic endpoint behavior; on the tail,
/// `sin²` is expanded so the monotone part integrates in closed form and the
/// oscillatory remainder is summed over half-periods with acceleration.
fn power_f_squared(p: f64, t: f64) -> Result<f64, QuadError> {
    let a = 1.0 / t;
    let alpha = 1.0 / (2.0 - 2.0 * p);
    let u_max = a.powf(1.0 / alpha);
    let head = quad::adaptive(
        &|u: f64| {
            let x = u.powf(alpha);
            alpha * t * t * quad::sinc_sq(t * x)
        },
        0.0,
        u_max,
        1e-14,
        1e-12,
        20_000,
    )?;

    // ∫_a^∞ x^(−2p−1)/2 dx, the non-oscillatory half of sin² = (1 − cos)/2.
    let smooth_tail = a.powf(-2.0 * p) / (4.0 * p);

    // ∫_a^∞ cos(2tx) x^(−2p−1) dx via sign-alternating half-periods.
    let omega = 2.0 * t;
    let g = move |x: f64| (omega * x).cos() * x.powf(-2.0 * p - 1.0);
    let j0 = ((omega * a - PI / 2.0) / PI).floor() as i64 + 1;
    let zero_at = |j: i64| (PI / 2.0 + j as f64 * PI) / omega;
    let z0 = zero_at(j0);
    let first = quad::adaptive(&g, a, z0, 1e-15, 1e-13, 2_000)?;
    let tail = quad::alternating_segments(&g, (j0..).map(zero_at), 64, 1e-17);
    let osc = first + tail;

    Ok(head + smooth_tail - 0.5 * osc)
}

/// Verifies numerically that `√(∫ sin²(tx) x^(−2p−1) dx)` scales as `t^p`.
///
/// Returns the maximum over samples of the relative deviation of
/// `f(t) / t^p` from its value at the first sample.
pub fn verify_power_admissibility(p: f64, t_samples: &[f64]) -> Result<f64, CostError> {
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return Err(CostError::Config(format!(
            "power exponent must satisfy 0 < p < 1, got {p}"
        )));
    }
    if t_samples.is_empty() || t_samples.iter().any(|&t| t.is_nan() || t <= 0.0) {
        return Err(CostError::Config(
            "power admissibility samples must be positive".into(),
        ));
    }
    let mut reference = None;
    let mut worst: f64 = 0.0;
    for &t in t_samples {
        let ratio = power_f_squared(p, t)?.sqrt() / t.powf(p);
        match reference {
            None => reference = Some(ratio),
            Some(k) => worst = worst.max((ratio - k).abs() / k),
        }
    }
    Ok(worst)
}

/// Verifies numerically that `√(∫_0^∞ sin²(tx)·4c·e^(−2cx) dx)` equals
/// `t / √(t² + c²)`; returns the maximum absolute deviation over samples.
pub fn verify_rational_admissibility(c: f64, t_samples: &[f64]) -> Result<f64, CostError> {
    if !c.is_finite() || c <= 0.0 {
        return Err(CostError::Config(format!(
            "rational parameter must satisfy c > 0, got {c}"
        )));
    }
    if t_samples.iter().any(|&t| !t.is_finite() || t < 0.0) {
        return Err(CostError::Config(
            "rational admissibility samples must be nonnegative".into(),
        ));
    }
    let cut = 20.0 / c;
    let mut worst: f64 = 0.0;
    for &t in t_samples {
        let integral = quad::adaptive(
            &|x: f64| {
                let s = (t * x).sin();
                4.0 * c * (-2.0 * c * x).exp() * s * s
            },
            0.0,
            cut,
            1e-14,
            1e-13,
            40_000,
        )?;
        let numeric = integral.max(0.0).sqrt();
        let reference = if t == 0.0 {
            0.0
        } else {
            t / (t * t + c * c).sqrt()
        };
        worst = worst.max((numeric - reference).abs());
    }
    Ok(worst)
}
