//! Seeded random instance generation for the theorem harness. Masses stay
//! away from zero and from zero pairwise sums so no edge in any candidate
//! tree degenerates; positions keep a minimum separation so the geometry is
//! well conditioned.

use branchflow::cost::CostSpec;
use branchflow::flow::{Instance, Terminal};
use branchflow::geometry::Point;
use rand::Rng;

const MIN_MASS: f64 = 0.25;
const MIN_PAIR_SUM: f64 = 0.1;
const MIN_SEPARATION: f64 = 0.2;

/// One random planar instance with `n` terminals and the cost `t^p`.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, p: f64) -> Instance {
    let masses = loop {
        let mut masses: Vec<f64> = (0..n - 1)
            .map(|_| {
                let magnitude = rng.random_range(0.3..1.5);
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect();
        let partial: f64 = masses.iter().sum();
        masses.push(-partial);
        let masses_ok = masses.iter().all(|m| m.abs() >= MIN_MASS)
            && (0..n).all(|i| (i + 1..n).all(|j| (masses[i] + masses[j]).abs() >= MIN_PAIR_SUM));
        if masses_ok {
            break masses;
        }
    };
    let mut positions: Vec<Point> = Vec::with_capacity(n);
    while positions.len() < n {
        let candidate = Point::new2(rng.random::<f64>(), rng.random::<f64>());
        if positions
            .iter()
            .all(|q| q.distance(&candidate) >= MIN_SEPARATION)
        {
            positions.push(candidate);
        }
    }
    Instance {
        dimension: 2,
        terminals: (0..n)
            .map(|i| Terminal {
                id: format!("t{i}"),
                position: positions[i],
                mass: masses[i],
            })
            .collect(),
        cost: CostSpec::Power { p },
    }
}

/// The harness schedule: terminal counts alternate between 4 and 5 and the
/// exponent cycles through {0.3, 0.5, 0.7, 0.9}.
pub fn harness_instance<R: Rng>(rng: &mut R, index: usize) -> Instance {
    let n = if index.is_multiple_of(2) { 4 } else { 5 };
    let p = [0.3, 0.5, 0.7, 0.9][index % 4];
    random_instance(rng, n, p)
}
