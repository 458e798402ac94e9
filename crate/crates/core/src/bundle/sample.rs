//! Compact domain description and uniform grid sampling, with a cell-hash
//! spatial index answering closed-ball range queries.

use std::collections::HashMap;

use crate::expr::{CmpOp, Polynomial};

use super::BundleError;

/// A compact semialgebraic domain: a bounded box intersected with polynomial
/// inequality constraints.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    bounds: Vec<(f64, f64)>,
    constraints: Vec<(Polynomial, CmpOp, Polynomial)>,
}

impl DomainSpec {
    pub fn new(
        bounds: Vec<(f64, f64)>,
        constraints: Vec<(Polynomial, CmpOp, Polynomial)>,
    ) -> Result<Self, BundleError> {
        for (axis, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo < hi) {
                return Err(BundleError::InvalidBox { axis });
            }
        }
        Ok(DomainSpec {
            bounds,
            constraints,
        })
    }

    pub fn box_only(bounds: Vec<(f64, f64)>) -> Result<Self, BundleError> {
        DomainSpec::new(bounds, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn constraints(&self) -> &[(Polynomial, CmpOp, Polynomial)] {
        &self.constraints
    }

    pub fn has_constraints(&self) -> bool {
        !self.constraints.is_empty()
    }

    /// Longest box side; sets the grid pitch scale.
    pub fn max_side(&self) -> f64 {
        self.bounds
            .iter()
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max)
    }

    /// Euclidean diameter of the box.
    pub fn diameter(&self) -> f64 {
        self.bounds
            .iter()
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        debug_assert_eq!(x.len(), self.bounds.len());
        let in_box = x
            .iter()
            .zip(&self.bounds)
            .all(|(&xi, &(lo, hi))| xi >= lo && xi <= hi);
        in_box
            && self
                .constraints
                .iter()
                .all(|(l, op, r)| op.holds(l.eval(x), r.eval(x)))
    }

    /// True when the closed ball around `x` stays inside the box (the
    /// constraint set is not consulted).
    pub fn ball_inside_box(&self, x: &[f64], radius: f64) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(&xi, &(lo, hi))| xi - radius >= lo && xi + radius <= hi)
    }
}

/// Cell-hash index over a point list; cells have the grid pitch as side.
#[derive(Debug, Clone)]
struct GridIndex {
    cell: f64,
    origin: Vec<f64>,
    map: HashMap<Vec<i64>, Vec<usize>>,
}

impl GridIndex {
    fn build(points: &[Vec<f64>], cell: f64) -> Self {
        let n = points.first().map_or(0, |p| p.len());
        let mut origin = vec![0.0; n];
        for k in 0..n {
            origin[k] = points
                .iter()
                .map(|p| p[k])
                .fold(f64::INFINITY, f64::min);
        }
        let mut map: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            map.entry(Self::key(p, &origin, cell)).or_default().push(i);
        }
        GridIndex { cell, origin, map }
    }

    fn key(p: &[f64], origin: &[f64], cell: f64) -> Vec<i64> {
        p.iter()
            .zip(origin)
            .map(|(&x, &o)| ((x - o) / cell).floor() as i64)
            .collect()
    }

    /// Indices of points with `‖p − x‖ ≤ rho` (tiny relative slack so exact
    /// boundary points are never lost to rounding), ascending.
    fn ball(&self, points: &[Vec<f64>], x: &[f64], rho: f64) -> Vec<usize> {
        let n = x.len();
        let mut lo = vec![0i64; n];
        let mut hi = vec![0i64; n];
        for k in 0..n {
            lo[k] = (((x[k] - rho) - self.origin[k]) / self.cell).floor() as i64 - 1;
            hi[k] = (((x[k] + rho) - self.origin[k]) / self.cell).floor() as i64 + 1;
        }
        let limit = rho * rho * (1.0 + 1e-12);
        let mut out = Vec::new();
        let mut cursor = lo.clone();
        'cells: loop {
            if let Some(bucket) = self.map.get(&cursor) {
                for &i in bucket {
                    let d2: f64 = points[i]
                        .iter()
                        .zip(x)
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum();
                    if d2 <= limit {
                        out.push(i);
                    }
                }
            }
            // odometer over the cell rectangle, last axis fastest
            for k in (0..n).rev() {
                cursor[k] += 1;
                if cursor[k] <= hi[k] {
                    continue 'cells;
                }
                cursor[k] = lo[k];
            }
            break;
        }
        out.sort_unstable();
        out
    }
}

/// Points sampled from a domain at a given resolution, with a spatial index.
/// The pitch is `h = max_side · 2^(−level)`.
#[derive(Debug, Clone)]
pub struct SampleSet {
    domain: DomainSpec,
    level: u32,
    h: f64,
    points: Vec<Vec<f64>>,
    index: GridIndex,
}

impl SampleSet {
    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Grid pitch.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Indices of samples within the closed ball, ascending.
    pub fn ball(&self, x: &[f64], rho: f64) -> Vec<usize> {
        self.index.ball(&self.points, x, rho)
    }

    /// Wraps an explicit point list (all points assumed inside the domain
    /// and pairwise distinct), e.g. a subset of another sample set.
    pub fn from_points(
        domain: DomainSpec,
        level: u32,
        h: f64,
        points: Vec<Vec<f64>>,
    ) -> Result<Self, BundleError> {
        if points.is_empty() {
            return Err(BundleError::EmptyDomain);
        }
        let index = GridIndex::build(&points, h);
        Ok(SampleSet {
            domain,
            level,
            h,
            points,
            index,
        })
    }
}

/// Uniform grid of pitch `max_side·2^(−level)` over the box, filtered by the
/// constraint predicate.
pub fn sample_domain(dom: &DomainSpec, level: u32) -> Result<SampleSet, BundleError> {
    let n = dom.dim();
    let h = dom.max_side() * 0.5f64.powi(level as i32);
    let counts: Vec<usize> = dom
        .bounds()
        .iter()
        .map(|(lo, hi)| ((hi - lo) / h + 1e-9).floor() as usize + 1)
        .collect();
    let mut points = Vec::new();
    let mut idx = vec![0usize; n];
    'grid: loop {
        let p: Vec<f64> = (0..n)
            .map(|k| dom.bounds()[k].0 + idx[k] as f64 * h)
            .collect();
        if dom
            .constraints()
            .iter()
            .all(|(l, op, r)| op.holds(l.eval(&p), r.eval(&p)))
        {
            points.push(p);
        }
        for k in (0..n).rev() {
            idx[k] += 1;
            if idx[k] < counts[k] {
                continue 'grid;
            }
            idx[k] = 0;
        }
        break;
    }
    if points.is_empty() {
        return Err(BundleError::EmptyDomain);
    }
    let index = GridIndex::build(&points, h);
    Ok(SampleSet {
        domain: dom.clone(),
        level,
        h,
        points,
        index,
    })
}
