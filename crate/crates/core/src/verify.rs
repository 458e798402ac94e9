//! Independent verification oracles: residual reports, brute-force distance
//! checks, directional limit tests, and continuity-modulus estimation.
//!
//! Everything here recomputes from first principles. Fiber distances go
//! through a hand-rolled KKT solve instead of the affine module's projector,
//! oscillation scans are exhaustive over sample pairs instead of using the
//! grid index, and the brute-force search samples subspace points directly.
//! Agreement between these oracles and the fast paths is evidence, not
//! circularity.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::affine::{AffineError, AffineSubspace};
use crate::expr::{SystemEvalError, SystemSpec};
use crate::section::Section;

/// Per-sample euclidean residuals `‖A(y)·φ(y) − γ(y)‖`, aggregated.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub max_residual: f64,
    pub mean_residual: f64,
    pub worst_point: Vec<f64>,
    pub per_point: Option<Vec<f64>>,
}

/// Largest value differences over shrinking radii; `nonincreasing` records
/// whether tightening the radius never raised the oscillation.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub radii: Vec<f64>,
    pub max_oscillation: Vec<f64>,
    pub nonincreasing: bool,
}

/// Distance table of a directional limit test: one row per direction, one
/// column per ladder radius, plus the verdict.
#[derive(Debug, Clone, Serialize)]
pub struct DirectionalReport {
    pub ok: bool,
    pub eps: f64,
    pub radii: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    /// `distances[d][k]` is the distance from the probe value to the fiber
    /// at `x0 + radii[k] · directions[d]`.
    pub distances: Vec<Vec<f64>>,
}

/// Evaluates the system at every sample of the section and reports the
/// euclidean residual of the stored values.
pub fn residual(sys: &SystemSpec, sec: &Section) -> Result<ResidualReport, SystemEvalError> {
    let samples = sec.samples();
    let mut per_point = Vec::with_capacity(samples.len());
    let mut max_residual = 0.0f64;
    let mut sum = 0.0f64;
    let mut worst = 0usize;
    for i in 0..samples.len() {
        let (a, g) = sys.eval_system(samples.point(i))?;
        let r = (a * sec.value(i) - g).norm();
        if r > max_residual {
            max_residual = r;
            worst = i;
        }
        sum += r;
        per_point.push(r);
    }
    let count = samples.len().max(1) as f64;
    Ok(ResidualReport {
        max_residual,
        mean_residual: sum / count,
        worst_point: samples.point(worst).to_vec(),
        per_point: Some(per_point),
    })
}

/// Upper bound on `dist(w, V)` by direct search over points of `V`.
///
/// Candidates are the stationary point `t̂ = Bᵀ(w − base)` of the squared
/// distance plus `trials` random offsets from it, drawn as unit directions
/// at dyadically shrinking radii. The analytic candidate makes the bound
/// tight; the random sweep would expose a wrong stationary point by finding
/// something strictly better. Offsets never shrink below `2⁻¹⁶` of the local
/// scale, so no random candidate can tie the minimum within rounding noise.
pub fn brute_force_distance(
    v: &AffineSubspace,
    w: &DVector<f64>,
    trials: usize,
) -> Result<f64, AffineError> {
    let (base, basis) = match v {
        AffineSubspace::Empty => return Err(AffineError::EmptySubspace),
        AffineSubspace::Nonempty { base, basis } => (base, basis),
    };
    if base.len() != w.len() {
        return Err(AffineError::DimensionMismatch {
            rows: base.len(),
            rhs: w.len(),
        });
    }
    let that = basis.transpose() * (w - base);
    let value_at = |t: &DVector<f64>| (w - (base + basis * t)).norm();
    let mut best = value_at(&that);
    best = best.min(value_at(&DVector::zeros(basis.ncols())));

    let k = basis.ncols();
    if k == 0 {
        return Ok(best);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d157);
    let sigma = 1.0 + that.norm();
    for trial in 0..trials {
        let dir = random_unit(&mut rng, k);
        let radius = sigma * 0.5f64.powi((trial % 17) as i32);
        let t = &that + dir * radius;
        best = best.min(value_at(&t));
    }
    Ok(best)
}

/// Distance from `lambda` to the solution set of `A λ' = g`, solved through
/// the stationarity system `A Aᵀ ν = g − A λ` by Gaussian elimination with
/// partial pivoting; the nearest point is `λ + Aᵀ ν`. Returns `+∞` when the
/// linear system is inconsistent (empty solution set).
pub fn fiber_distance_oracle(a: &DMatrix<f64>, g: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let gram = a * a.transpose();
    let rhs = g - a * lambda;
    match eliminate_symmetric(gram, rhs) {
        Some(nu) => (a.transpose() * nu).norm(),
        None => f64::INFINITY,
    }
}

/// Gaussian elimination with partial pivoting for a (possibly singular)
/// symmetric system; zero-pivot columns with consistent right-hand side get
/// a zero coordinate, an inconsistent one yields `None`.
fn eliminate_symmetric(mut m: DMatrix<f64>, mut rhs: DVector<f64>) -> Option<DVector<f64>> {
    let n = m.nrows();
    let scale = 1.0 + m.amax() + rhs.amax();
    let tol = 1e-12 * scale;
    let mut pivot_of_col: Vec<Option<usize>> = vec![None; n];
    let mut row = 0;
    for col in 0..n {
        let (best_row, best_val) = (row..n)
            .map(|r| (r, m[(r, col)].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        if best_val <= tol {
            continue;
        }
        m.swap_rows(row, best_row);
        rhs.swap_rows(row, best_row);
        for r in row + 1..n {
            let f = m[(r, col)] / m[(row, col)];
            for c in col..n {
                m[(r, c)] -= f * m[(row, c)];
            }
            rhs[r] -= f * rhs[row];
        }
        pivot_of_col[col] = Some(row);
        row += 1;
        if row == n {
            break;
        }
    }
    // rows below the last pivot are all (numerically) zero; a nonzero
    // right-hand side there means the system has no solution
    for r in row..n {
        if rhs[r].abs() > tol {
            return None;
        }
    }
    let mut x = DVector::zeros(n);
    for col in (0..n).rev() {
        if let Some(r) = pivot_of_col[col] {
            let mut acc = rhs[r];
            for c in col + 1..n {
                acc -= m[(r, c)] * x[c];
            }
            x[col] = acc / m[(r, col)];
        }
    }
    Some(x)
}

/// Probes whether `lambda` stays reachable from the fibers along every ray
/// from `x0`: for each direction and each ladder radius, the distance from
/// `lambda` to the pointwise solution set at `x0 + ρ·u` is tabulated. The
/// verdict is true iff every direction's distances are non-increasing down
/// the ladder (within a factor of two) and end at or below `eps` times the
/// final radius; the threshold scales with the radius because the fiber
/// distance of a genuine limit value shrinks linearly along smooth rays.
pub fn directional_limit_oracle(
    sys: &SystemSpec,
    x0: &[f64],
    lambda: &DVector<f64>,
    directions: usize,
    radii: &[f64],
    eps: f64,
) -> Result<DirectionalReport, SystemEvalError> {
    assert!(
        radii.windows(2).all(|w| w[0] > w[1]),
        "radius ladder must be strictly decreasing"
    );
    let dirs = direction_set(x0.len(), directions, 0x0d15_ea5e);
    let mut distances = Vec::with_capacity(dirs.len());
    for u in &dirs {
        let mut row = Vec::with_capacity(radii.len());
        for &rho in radii {
            let y: Vec<f64> = x0.iter().zip(u.iter()).map(|(a, b)| a + rho * b).collect();
            let (a, g) = sys.eval_system(&y)?;
            row.push(fiber_distance_oracle(&a, &g, lambda));
        }
        distances.push(row);
    }
    let last_rho = *radii.last().expect("nonempty ladder");
    let ok = distances.iter().all(|row| {
        let shrinking = row.windows(2).all(|w| w[1] <= 2.0 * w[0] + 1e-12);
        shrinking && *row.last().expect("nonempty ladder") <= eps * last_rho
    });
    Ok(DirectionalReport {
        ok,
        eps,
        radii: radii.to_vec(),
        directions: dirs.iter().map(|u| u.as_slice().to_vec()).collect(),
        distances,
    })
}

/// Max oscillation of the section values at each ladder radius, by
/// exhaustive pairwise scan (no spatial index involved).
pub fn modulus_of_continuity(sec: &Section, radii: &[f64]) -> ContinuityReport {
    assert!(
        radii.windows(2).all(|w| w[0] > w[1]),
        "radius ladder must be strictly decreasing"
    );
    let samples = sec.samples();
    let n = samples.len();
    let max_oscillation: Vec<f64> = radii
        .iter()
        .map(|&rho| {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let xi = samples.point(i);
                    let mut worst = 0.0f64;
                    for j in 0..n {
                        let d2: f64 = xi
                            .iter()
                            .zip(samples.point(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        if d2 <= rho * rho {
                            worst = worst.max((sec.value(i) - sec.value(j)).norm());
                        }
                    }
                    worst
                })
                .reduce(|| 0.0, f64::max)
        })
        .collect();
    let nonincreasing = max_oscillation.windows(2).all(|w| w[1] <= w[0]);
    ContinuityReport {
        radii: radii.to_vec(),
        max_oscillation,
        nonincreasing,
    }
}

/// Deterministic unit directions: uniform angles in the plane, a Fibonacci
/// sphere in three dimensions, seeded random unit vectors otherwise.
pub fn direction_set(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    match n {
        0 => Vec::new(),
        1 => (0..count)
            .map(|k| DVector::from_vec(vec![if k % 2 == 0 { 1.0 } else { -1.0 }]))
            .collect(),
        2 => (0..count)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                DVector::from_vec(vec![angle.cos(), angle.sin()])
            })
            .collect(),
        3 => (0..count)
            .map(|k| {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
                let phi = golden * k as f64;
                DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count).map(|_| random_unit(&mut rng, n)).collect()
        }
    }
}

/// Random point on the unit sphere: normalized Box-Muller gaussians.
fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}
