//! Continuous sections of a stable bundle.
//!
//! A section assigns to every sample a value inside its fiber. Where the
//! fibers vary continuously this is a matter of blending projections of
//! nearby anchor values; where they jump, the offending samples are carved
//! out, handled recursively on their own neighbor structure, and the result
//! is extended back and re-projected. The blend weight on a cover ball is
//! `sqrt(r² − d²)`, which vanishes at the rim, so glued values are convex
//! combinations of points of the local fiber.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::affine::{AffineError, AffineSubspace};
use crate::bundle::{has_empty_fiber, Bundle, BundleError, SampleSet};

#[derive(Debug, Clone, Error)]
pub enum SectionError {
    #[error("fiber at sample {witness} is empty; no value can be chosen there")]
    EmptyFiber { witness: usize },
    #[error("cover ball at sample {center}: anchor misses the fiber by {distance:.3e}")]
    AnchorNotInFiber { center: usize, distance: f64 },
    #[error("sample {index} lies in no cover ball")]
    UncoveredSample { index: usize },
    #[error("sample subset is empty")]
    EmptySubset,
    #[error("discontinuity locus failed to clear by recursion depth {depth}")]
    RecursionLimit { depth: usize },
    #[error(transparent)]
    Affine(#[from] AffineError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

/// Tuning knobs for section construction.
#[derive(Debug, Clone, Serialize)]
pub struct SectionParams {
    /// Oscillations are measured over balls of this many grid pitches.
    pub osc_radius_factor: f64,
    /// Absolute jump threshold for the discontinuity locus; `None` selects
    /// per-field automatic thresholds.
    pub theta: Option<f64>,
    /// Automatic threshold: `max(theta_max_factor · max oscillation,
    /// theta_median_factor · median oscillation)`. The median floor keeps a
    /// flat oscillation profile, which is resolution noise rather than a
    /// jump, from producing a locus.
    pub theta_max_factor: f64,
    pub theta_median_factor: f64,
    /// Inverse-distance exponent for off-subset extension; `None` selects
    /// `n + 2` in domain dimension `n`.
    pub blend_power: Option<u32>,
    /// Cover anchors must sit inside the center fiber within this, relative
    /// to `1 + ‖anchor‖`.
    pub anchor_tol: f64,
    /// Cover radii stop halving at this many grid pitches.
    pub cover_floor_factor: f64,
    /// Accept a single value for every fiber when its worst fiber distance
    /// is within this, relative to `1 + ‖value‖`.
    pub probe_tol: f64,
}

impl Default for SectionParams {
    fn default() -> Self {
        SectionParams {
            osc_radius_factor: 4.0,
            theta: None,
            theta_max_factor: 0.75,
            theta_median_factor: 2.0,
            blend_power: None,
            anchor_tol: 1e-8,
            cover_floor_factor: 2.0,
            probe_tol: 1e-9,
        }
    }
}

/// A candidate solution: one value per sample point.
#[derive(Debug, Clone)]
pub struct Section {
    samples: Arc<SampleSet>,
    values: Vec<DVector<f64>>,
    blend_power: u32,
}

impl Section {
    pub fn new(samples: Arc<SampleSet>, values: Vec<DVector<f64>>, blend_power: u32) -> Self {
        assert_eq!(samples.len(), values.len());
        Section {
            samples,
            values,
            blend_power,
        }
    }

    pub fn samples(&self) -> &Arc<SampleSet> {
        &self.samples
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &DVector<f64> {
        &self.values[i]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn blend_power(&self) -> u32 {
        self.blend_power
    }

    /// Value at an arbitrary domain point: the stored value on a sample,
    /// inverse-distance blending of all stored values elsewhere.
    pub fn eval_at(&self, x: &[f64]) -> DVector<f64> {
        let scale = 1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if let Some(&j) = self.samples.ball(x, 1e-12 * scale).first() {
            return self.values[j].clone();
        }
        let mut num = DVector::zeros(self.values[0].len());
        let mut den = 0.0;
        let p = -(self.blend_power as f64) / 2.0;
        for (i, v) in self.values.iter().enumerate() {
            let w = dist2(x, self.samples.point(i)).powf(p);
            num.axpy(w, v, 1.0);
            den += w;
        }
        num / den
    }
}

/// One ball of a section cover: samples strictly inside `radius` of the
/// center receive a share of the projected `anchor`.
#[derive(Debug, Clone)]
pub struct CoverBall {
    pub center: usize,
    pub radius: f64,
    pub anchor: DVector<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Cover {
    pub balls: Vec<CoverBall>,
}

/// A selection of samples carrying its own spatial index, so the selected
/// points can serve as a standalone sample set.
#[derive(Debug, Clone)]
pub struct SampleSubset {
    parent: Arc<SampleSet>,
    indices: Vec<usize>,
    local: Option<Arc<SampleSet>>,
}

impl SampleSubset {
    pub fn new(parent: Arc<SampleSet>, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        let local = if indices.is_empty() {
            None
        } else {
            let points = indices.iter().map(|&i| parent.point(i).to_vec()).collect();
            let set =
                SampleSet::from_points(parent.domain().clone(), parent.level(), parent.h(), points)
                    .expect("subset is nonempty");
            Some(Arc::new(set))
        };
        SampleSubset {
            parent,
            indices,
            local,
        }
    }

    pub fn parent(&self) -> &Arc<SampleSet> {
        &self.parent
    }

    /// Parent indices, sorted ascending.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The subset as a sample set of its own; `None` when empty.
    pub fn as_sample_set(&self) -> Option<&Arc<SampleSet>> {
        self.local.as_ref()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Blend weight of a ball with center `c` and radius `r` at the point `y`:
/// `sqrt(r² − ‖y−c‖²)`, zero outside the ball.
pub fn bump(center: &[f64], radius: f64, y: &[f64]) -> f64 {
    (radius * radius - dist2(center, y)).max(0.0).sqrt()
}

/// The field of min-norm fiber points, the canonical value choice wherever
/// the bundle varies continuously.
pub fn omega_field(bundle: &Bundle) -> Result<Section, SectionError> {
    if let Some(witness) = has_empty_fiber(bundle) {
        return Err(SectionError::EmptyFiber { witness });
    }
    let values = bundle
        .fibers()
        .iter()
        .map(|f| f.min_norm_point().expect("no empty fibers"))
        .collect();
    let power = default_power(bundle, None);
    Ok(Section::new(bundle.samples().clone(), values, power))
}

/// Projection of `v` onto the orthogonal complement of the fiber's direction
/// space at sample `i`: the part of `v` the fiber does not absorb.
pub fn pi1_apply(
    bundle: &Bundle,
    i: usize,
    v: &DVector<f64>,
) -> Result<DVector<f64>, SectionError> {
    let f = bundle.fiber(i);
    match f.basis() {
        None => Err(SectionError::EmptyFiber { witness: i }),
        Some(basis) => Ok(v - basis * (basis.transpose() * v)),
    }
}

fn nearest_in_fiber(f: &AffineSubspace, v: &DVector<f64>) -> DVector<f64> {
    // base is canonical (orthogonal to the directions), so the nearest point
    // ω + (v − π₁v) reduces to base + B Bᵀ v
    let base = f.base().expect("no empty fibers");
    let basis = f.basis().expect("no empty fibers");
    base + basis * (basis.transpose() * v)
}

/// The section a single anchor value induces on a ball: at every sample of
/// the ball, the fiber point nearest to the anchor, `ω(y) + (v − π₁(y)v)`.
pub fn local_section(
    bundle: &Bundle,
    center: usize,
    anchor: &DVector<f64>,
    radius: f64,
    anchor_tol: f64,
) -> Result<Vec<(usize, DVector<f64>)>, SectionError> {
    let cf = bundle.fiber(center);
    if cf.is_empty() {
        return Err(SectionError::EmptyFiber { witness: center });
    }
    let d = cf.distance(anchor);
    if d > anchor_tol * (1.0 + anchor.norm()) {
        return Err(SectionError::AnchorNotInFiber {
            center,
            distance: d,
        });
    }
    let samples = bundle.samples();
    let mut out = Vec::new();
    for j in samples.ball(samples.point(center), radius) {
        if bundle.fiber(j).is_empty() {
            return Err(SectionError::EmptyFiber { witness: j });
        }
        out.push((j, nearest_in_fiber(bundle.fiber(j), anchor)));
    }
    Ok(out)
}

/// Blends the local sections of a cover into one global section. Each ball
/// contributes its projected anchor with weight `sqrt(r² − d²)`, normalized
/// per sample, so every glued value is a convex combination of points of
/// that sample's fiber and in particular lies inside it.
pub fn glue(bundle: &Bundle, cover: &Cover, params: &SectionParams) -> Result<Section, SectionError> {
    if let Some(witness) = has_empty_fiber(bundle) {
        return Err(SectionError::EmptyFiber { witness });
    }
    for ball in &cover.balls {
        let d = bundle.fiber(ball.center).distance(&ball.anchor);
        if d > params.anchor_tol * (1.0 + ball.anchor.norm()) {
            return Err(SectionError::AnchorNotInFiber {
                center: ball.center,
                distance: d,
            });
        }
    }
    let samples = bundle.samples();
    let s = bundle.ambient_dim();
    let mut num = vec![DVector::<f64>::zeros(s); samples.len()];
    let mut den = vec![0.0; samples.len()];
    for ball in &cover.balls {
        let c = samples.point(ball.center);
        for j in samples.ball(c, ball.radius) {
            let mu = bump(c, ball.radius, samples.point(j));
            if mu > 0.0 {
                num[j].axpy(mu, &nearest_in_fiber(bundle.fiber(j), &ball.anchor), 1.0);
                den[j] += mu;
            }
        }
    }
    let values = num
        .into_iter()
        .zip(&den)
        .enumerate()
        .map(|(i, (v, &w))| {
            if w > 0.0 {
                Ok(v / w)
            } else {
                Err(SectionError::UncoveredSample { index: i })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let power = default_power(bundle, params.blend_power);
    Ok(Section::new(samples.clone(), values, power))
}

/// Pointwise oscillation of a vector field over `rho`-balls:
/// `osc[i] = max ‖v_j − v_i‖` over samples `j` with `‖y_j − y_i‖ ≤ rho`.
pub fn oscillation(samples: &SampleSet, values: &[DVector<f64>], rho: f64) -> Vec<f64> {
    assert_eq!(samples.len(), values.len());
    (0..samples.len())
        .map(|i| {
            samples
                .ball(samples.point(i), rho)
                .into_iter()
                .map(|j| (&values[j] - &values[i]).norm())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Matrix-field oscillation in the entrywise max norm.
pub fn oscillation_matrices(samples: &SampleSet, values: &[DMatrix<f64>], rho: f64) -> Vec<f64> {
    assert_eq!(samples.len(), values.len());
    (0..samples.len())
        .map(|i| {
            samples
                .ball(samples.point(i), rho)
                .into_iter()
                .map(|j| (&values[j] - &values[i]).amax())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Oscillation profiles of the two fields that witness fiber jumps: the
/// min-norm points and the direction-space projectors.
pub fn field_oscillations(
    bundle: &Bundle,
    rho: f64,
) -> Result<(Vec<f64>, Vec<f64>), SectionError> {
    if let Some(witness) = has_empty_fiber(bundle) {
        return Err(SectionError::EmptyFiber { witness });
    }
    let omegas: Vec<DVector<f64>> = bundle
        .fibers()
        .iter()
        .map(|f| f.min_norm_point().expect("no empty fibers"))
        .collect();
    let projectors: Vec<DMatrix<f64>> = bundle
        .fibers()
        .iter()
        .map(|f| f.projector_matrix().expect("no empty fibers"))
        .collect();
    let samples = bundle.samples();
    Ok((
        oscillation(samples, &omegas, rho),
        oscillation_matrices(samples, &projectors, rho),
    ))
}

/// Jump threshold for an oscillation profile: a fixed fraction of the peak,
/// floored at twice the median so that a flat profile (pure grid-resolution
/// variation) never yields a locus.
pub fn auto_theta(osc: &[f64], params: &SectionParams) -> f64 {
    if osc.is_empty() {
        return 0.0;
    }
    let max = osc.iter().copied().fold(0.0, f64::max);
    let mut sorted = osc.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    f64::max(params.theta_max_factor * max, params.theta_median_factor * median)
}

/// Samples where the min-norm field or the projector field oscillates by
/// more than `theta` over a `rho`-ball.
pub fn discontinuity_locus(
    bundle: &Bundle,
    theta: f64,
    rho: f64,
) -> Result<SampleSubset, SectionError> {
    let (osc_w, osc_p) = field_oscillations(bundle, rho)?;
    let flagged = (0..bundle.len())
        .filter(|&i| osc_w[i] > theta || osc_p[i] > theta)
        .collect();
    Ok(SampleSubset::new(bundle.samples().clone(), flagged))
}

/// The discontinuity locus with automatic per-field thresholds; returns the
/// thresholds used for the min-norm and projector fields.
pub fn auto_locus(
    bundle: &Bundle,
    rho: f64,
    params: &SectionParams,
) -> Result<(SampleSubset, f64, f64), SectionError> {
    let (osc_w, osc_p) = field_oscillations(bundle, rho)?;
    let theta_w = params.theta.unwrap_or_else(|| auto_theta(&osc_w, params));
    let theta_p = params.theta.unwrap_or_else(|| auto_theta(&osc_p, params));
    let flagged = (0..bundle.len())
        .filter(|&i| osc_w[i] > theta_w || osc_p[i] > theta_p)
        .collect();
    Ok((
        SampleSubset::new(bundle.samples().clone(), flagged),
        theta_w,
        theta_p,
    ))
}

/// Extends values given on a subset to every parent sample by inverse
/// distance weighting with exponent `blend_power`; exact on the subset.
pub fn extend(
    subset: &SampleSubset,
    values: &[DVector<f64>],
    blend_power: u32,
) -> Result<Section, SectionError> {
    if subset.is_empty() {
        return Err(SectionError::EmptySubset);
    }
    assert_eq!(subset.len(), values.len());
    let parent = subset.parent();
    let member: HashMap<usize, usize> = subset
        .indices()
        .iter()
        .enumerate()
        .map(|(k, &i)| (i, k))
        .collect();
    let p = -(blend_power as f64) / 2.0;
    let out = (0..parent.len())
        .map(|i| {
            if let Some(&k) = member.get(&i) {
                return values[k].clone();
            }
            let x = parent.point(i);
            let mut num = DVector::zeros(values[0].len());
            let mut den = 0.0;
            for (k, &j) in subset.indices().iter().enumerate() {
                let w = dist2(x, parent.point(j)).powf(p);
                num.axpy(w, &values[k], 1.0);
                den += w;
            }
            num / den
        })
        .collect();
    Ok(Section::new(parent.clone(), out, blend_power))
}

/// Replaces each value by the nearest point of the sample's fiber, the
/// correction step after extending values from a subset.
pub fn project_section(bundle: &Bundle, section: &Section) -> Result<Section, SectionError> {
    assert_eq!(bundle.len(), section.len());
    if let Some(witness) = has_empty_fiber(bundle) {
        return Err(SectionError::EmptyFiber { witness });
    }
    let values = bundle
        .fibers()
        .iter()
        .zip(section.values())
        .map(|(f, v)| nearest_in_fiber(f, v))
        .collect();
    Ok(Section::new(
        bundle.samples().clone(),
        values,
        section.blend_power(),
    ))
}

/// Covers every sample with balls centered on yet-uncovered samples in index
/// order, anchored at the center's min-norm point. Radii start just above
/// the domain diameter and halve until the anchor's nearest fiber points
/// across the ball stay within `theta` of the anchor, or the radius reaches
/// the floor of `cover_floor_factor` grid pitches. A sample counts as
/// covered when it lies strictly inside a ball, matching the support of the
/// blend weight.
pub fn greedy_cover(
    bundle: &Bundle,
    theta: f64,
    params: &SectionParams,
) -> Result<Cover, SectionError> {
    if let Some(witness) = has_empty_fiber(bundle) {
        return Err(SectionError::EmptyFiber { witness });
    }
    let samples = bundle.samples();
    let floor = params.cover_floor_factor * samples.h();
    let start = f64::max(1.125 * samples.domain().diameter(), floor);
    let mut covered = vec![false; samples.len()];
    let mut balls = Vec::new();
    for c in 0..samples.len() {
        if covered[c] {
            continue;
        }
        let anchor = bundle.fiber(c).min_norm_point().expect("no empty fibers");
        let x = samples.point(c);
        let mut r = start;
        loop {
            if r <= floor {
                r = floor;
                break;
            }
            let dev = samples
                .ball(x, r)
                .into_iter()
                .map(|j| (nearest_in_fiber(bundle.fiber(j), &anchor) - &anchor).norm())
                .fold(0.0, f64::max);
            if dev <= theta {
                break;
            }
            r *= 0.5;
        }
        for j in samples.ball(x, r) {
            if dist2(x, samples.point(j)) < r * r {
                covered[j] = true;
            }
        }
        balls.push(CoverBall {
            center: c,
            radius: r,
            anchor,
        });
    }
    Ok(Cover { balls })
}

/// Least-squares constant candidate: the minimizer of `Σ dist(λ, H_i)²` via
/// its normal equations `Σ(I − P_i) λ = Σ (I − P_i) c_i`, accepted when its
/// worst fiber distance is within `probe_tol`. When one value fits every
/// fiber, the constant section is the cheapest continuous choice.
fn constant_probe(bundle: &Bundle, params: &SectionParams) -> Option<DVector<f64>> {
    let s = bundle.ambient_dim();
    if s == 0 {
        return None;
    }
    let eye = DMatrix::<f64>::identity(s, s);
    let mut lhs = DMatrix::<f64>::zeros(s, s);
    let mut rhs = DVector::<f64>::zeros(s);
    for f in bundle.fibers() {
        let p = f.projector_matrix().ok()?;
        let base = f.base()?;
        lhs += &eye - &p;
        rhs += base - &p * base;
    }
    let eig = lhs.symmetric_eigen();
    let cut = 1e-12 * (1.0 + eig.eigenvalues.amax());
    let mut lam = DVector::<f64>::zeros(s);
    for k in 0..s {
        let mu = eig.eigenvalues[k];
        if mu > cut {
            let u = eig.eigenvectors.column(k);
            lam.axpy(u.dot(&rhs) / mu, &u, 1.0);
        }
    }
    let worst = bundle
        .fibers()
        .iter()
        .map(|f| f.distance(&lam))
        .fold(0.0, f64::max);
    (worst <= params.probe_tol * (1.0 + lam.norm())).then_some(lam)
}

/// The bundle induced on a subset of samples; fibers and refinement metadata
/// carry over, the subset's own index drives neighbor queries.
fn restrict_bundle(bundle: &Bundle, subset: &SampleSubset) -> Result<Bundle, SectionError> {
    let local = subset
        .as_sample_set()
        .ok_or(SectionError::EmptySubset)?
        .clone();
    let pick = subset.indices();
    Ok(Bundle {
        samples: local,
        fibers: pick.iter().map(|&i| bundle.fibers()[i].clone()).collect(),
        iteration: bundle.iteration(),
        params: bundle.params().clone(),
        initial_dim: Arc::new(pick.iter().map(|&i| bundle.initial_dim[i]).collect()),
        fit_errors: pick.iter().map(|&i| bundle.fit_errors()[i]).collect(),
    })
}

fn default_power(bundle: &Bundle, over: Option<u32>) -> u32 {
    over.unwrap_or(bundle.samples().domain().dim() as u32 + 2)
}

/// What `build_section` did at each recursion depth.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BuildReport {
    pub max_depth: usize,
    /// Flagged-sample count per depth that measured oscillations.
    pub locus_sizes: Vec<usize>,
    /// (min-norm field, projector field) thresholds per such depth.
    pub thetas: Vec<(f64, f64)>,
    /// Ball count of each glued cover, in construction order.
    pub cover_sizes: Vec<usize>,
    /// Depths at which a single value fit every fiber.
    pub constant_depths: Vec<usize>,
}

/// Builds a continuous section of a stable bundle.
///
/// Per recursion depth: an empty fiber is a hard failure; pairwise-isolated
/// samples just take their min-norm points; otherwise samples where the
/// fiber fields jump are flagged, and either nothing is flagged and a greedy
/// cover is glued, or the flagged subset is handled recursively on its own
/// neighbor structure, extended back, and re-projected into the fibers. A
/// constant value that fits every fiber short-circuits recursion depths
/// below the top. The recursion gives up past depth `n`, the domain
/// dimension, matching the depth bound for semialgebraic data.
pub fn build_section(
    bundle: &Bundle,
    params: &SectionParams,
) -> Result<(Section, BuildReport), SectionError> {
    let mut report = BuildReport::default();
    let section = build_at_depth(bundle, params, 0, &mut report)?;
    Ok((section, report))
}

fn build_at_depth(
    bundle: &Bundle,
    params: &SectionParams,
    depth: usize,
    report: &mut BuildReport,
) -> Result<Section, SectionError> {
    if let Some(witness) = has_empty_fiber(bundle) {
        return Err(SectionError::EmptyFiber { witness });
    }
    let n = bundle.samples().domain().dim();
    if depth > n {
        return Err(SectionError::RecursionLimit { depth });
    }
    report.max_depth = report.max_depth.max(depth);
    let samples = bundle.samples();
    let rho = params.osc_radius_factor * samples.h();
    let power = default_power(bundle, params.blend_power);

    // at depth ≥ 1 the subset is already the hard part of its parent; if one
    // value fits all its fibers, no further subdivision can do better
    if depth >= 1 {
        if let Some(lam) = constant_probe(bundle, params) {
            report.constant_depths.push(depth);
            let values = bundle
                .fibers()
                .iter()
                .map(|f| nearest_in_fiber(f, &lam))
                .collect();
            return Ok(Section::new(samples.clone(), values, power));
        }
    }

    let isolated = (0..samples.len()).all(|i| samples.ball(samples.point(i), rho).len() <= 1);
    if isolated {
        return omega_field(bundle);
    }

    let (locus, theta_w, theta_p) = auto_locus(bundle, rho, params)?;
    report.thetas.push((theta_w, theta_p));
    report.locus_sizes.push(locus.len());

    if locus.is_empty() {
        let cover = greedy_cover(bundle, theta_w, params)?;
        report.cover_sizes.push(cover.balls.len());
        return glue(bundle, &cover, params);
    }

    let sub_bundle = restrict_bundle(bundle, &locus)?;
    let sub_section = build_at_depth(&sub_bundle, params, depth + 1, report)?;
    let extended = extend(&locus, sub_section.values(), power)?;
    project_section(bundle, &extended)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{initial_bundle, sample_domain, stabilize, DomainSpec, RefineParams};
    use crate::expr::{parse_semialg, SystemSpec};
    use approx::assert_relative_eq;

    fn system(vars: &[&str], a: &[&[&str]], gamma: &[&str]) -> SystemSpec {
        let vars: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let rows = a
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| parse_semialg(e, &vars).unwrap())
                    .collect()
            })
            .collect();
        let g = gamma
            .iter()
            .map(|e| parse_semialg(e, &vars).unwrap())
            .collect();
        SystemSpec::new(vars, rows, g)
    }

    fn radial() -> SystemSpec {
        system(&["x", "y"], &[&["x", "y"]], &["x"])
    }

    fn kink_1d() -> SystemSpec {
        system(&["x"], &[&["x"]], &["x * abs(x)"])
    }

    fn square() -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0), (-1.0, 1.0)]
    }

    fn fresh(sys: &SystemSpec, bounds: Vec<(f64, f64)>, level: u32) -> Bundle {
        let dom = DomainSpec::box_only(bounds).unwrap();
        let n = dom.dim();
        let samples = Arc::new(sample_domain(&dom, level).unwrap());
        let params = RefineParams::for_problem(samples.h(), n, sys.unknowns());
        initial_bundle(sys, samples, params).unwrap()
    }

    fn stable(sys: &SystemSpec, bounds: Vec<(f64, f64)>, level: u32) -> Bundle {
        stabilize(fresh(sys, bounds, level)).unwrap().0
    }

    fn find_sample(samples: &SampleSet, p: &[f64]) -> usize {
        (0..samples.len())
            .find(|&i| {
                samples
                    .point(i)
                    .iter()
                    .zip(p)
                    .all(|(a, b)| (a - b).abs() < 1e-12)
            })
            .expect("sample present")
    }

    #[test]
    fn min_norm_field_picks_canonical_values() {
        let b = fresh(&radial(), square(), 1);
        let w = omega_field(&b).unwrap();
        let cases = [
            ([1.0, 0.0], [1.0, 0.0]),
            ([0.0, 1.0], [0.0, 0.0]),
            ([1.0, 1.0], [0.5, 0.5]),
        ];
        for (p, expect) in cases {
            let i = find_sample(b.samples(), &p);
            assert_relative_eq!(
                w.value(i),
                &DVector::from_row_slice(&expect),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn pi1_strips_fiber_directions() {
        let b = fresh(&radial(), square(), 1);
        // fiber at (1,0) is the line λ₁ = 1 with direction (0,1)
        let i = find_sample(b.samples(), &[1.0, 0.0]);
        let v = DVector::from_vec(vec![3.0, 4.0]);
        let r = pi1_apply(&b, i, &v).unwrap();
        assert_relative_eq!(&r, &DVector::from_vec(vec![3.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn bump_vanishes_at_the_rim() {
        assert_eq!(bump(&[0.0, 0.0], 5.0, &[3.0, 0.0]), 4.0);
        assert_eq!(bump(&[0.0, 0.0], 2.0, &[0.0, 0.0]), 2.0);
        assert_eq!(bump(&[0.0, 0.0], 1.0, &[1.0, 0.0]), 0.0);
        assert_eq!(bump(&[0.0, 0.0], 1.0, &[2.0, 0.0]), 0.0);
    }

    #[test]
    fn local_section_validates_the_anchor() {
        let b = fresh(&radial(), square(), 1);
        let i = find_sample(b.samples(), &[1.0, 0.0]);
        let err = local_section(&b, i, &DVector::from_vec(vec![2.0, 5.0]), 1.0, 1e-8).unwrap_err();
        assert!(matches!(err, SectionError::AnchorNotInFiber { .. }));

        let vals = local_section(&b, i, &DVector::from_vec(vec![1.0, 3.0]), 1.0, 1e-8).unwrap();
        assert!(vals.len() >= 3);
        for (j, v) in &vals {
            assert!(b.fiber(*j).contains(v, 1e-9));
        }
    }

    #[test]
    fn glue_blends_inside_fibers() {
        let b = stable(&kink_1d(), vec![(-1.0, 1.0)], 6);
        let params = SectionParams::default();
        let rho = params.osc_radius_factor * b.samples().h();
        let (_, theta_w, _) = auto_locus(&b, rho, &params).unwrap();
        let cover = greedy_cover(&b, theta_w, &params).unwrap();
        let sec = glue(&b, &cover, &params).unwrap();
        for i in 0..b.len() {
            let x = b.samples().point(i)[0];
            assert!(b.fiber(i).distance(sec.value(i)) <= 1e-8);
            assert!((sec.value(i)[0] - x.abs()).abs() <= 1e-8);
        }
    }

    #[test]
    fn glue_flags_uncovered_samples() {
        let b = fresh(&radial(), square(), 2);
        let anchor = b.fiber(0).min_norm_point().unwrap();
        let cover = Cover {
            balls: vec![CoverBall {
                center: 0,
                radius: 0.6,
                anchor,
            }],
        };
        let err = glue(&b, &cover, &SectionParams::default()).unwrap_err();
        assert!(matches!(err, SectionError::UncoveredSample { .. }));
    }

    #[test]
    fn glue_rejects_an_anchor_off_the_fiber() {
        let b = fresh(&radial(), square(), 2);
        let cover = Cover {
            balls: vec![CoverBall {
                center: 0,
                radius: 5.0,
                anchor: DVector::from_vec(vec![5.0, 5.0]),
            }],
        };
        let err = glue(&b, &cover, &SectionParams::default()).unwrap_err();
        assert!(matches!(err, SectionError::AnchorNotInFiber { .. }));
    }

    #[test]
    fn oscillation_of_a_linear_field() {
        let dom = DomainSpec::box_only(square()).unwrap();
        let samples = sample_domain(&dom, 4).unwrap();
        let h = samples.h();
        let center = find_sample(&samples, &[0.0, 0.0]);

        let axis: Vec<DVector<f64>> = samples
            .points()
            .iter()
            .map(|p| DVector::from_vec(vec![p[0]]))
            .collect();
        let osc = oscillation(&samples, &axis, 4.0 * h);
        assert_relative_eq!(osc[center], 4.0 * h, epsilon = 1e-12);

        // along the diagonal the grid reaches at best 5h/√2 inside the ball
        let diag: Vec<DVector<f64>> = samples
            .points()
            .iter()
            .map(|p| DVector::from_vec(vec![(p[0] + p[1]) / 2f64.sqrt()]))
            .collect();
        let osc = oscillation(&samples, &diag, 4.0 * h);
        let ratio = osc[center] / (4.0 * h);
        assert!((0.85..=1.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn oscillation_of_matrices_uses_entrywise_max() {
        let dom = DomainSpec::box_only(vec![(0.0, 1.0)]).unwrap();
        let set = SampleSet::from_points(dom, 0, 1.0, vec![vec![0.0], vec![0.5]]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, -0.1]);
        let osc = oscillation_matrices(&set, &[a, b], 1.0);
        assert_relative_eq!(osc[0], 0.3, epsilon = 1e-15);
        assert_relative_eq!(osc[1], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn locus_concentrates_at_the_jump() {
        let b = stable(&radial(), square(), 5);
        let h = b.samples().h();
        let params = SectionParams::default();
        let (locus, theta_w, _) = auto_locus(&b, params.osc_radius_factor * h, &params).unwrap();
        // min-norm values traverse the circle of diameter [(0,0),(1,0)], so
        // the peak oscillation is 1 and the max-factor branch wins
        assert!(theta_w > 0.74 && theta_w < 0.76, "theta {theta_w}");
        assert!(!locus.is_empty());
        for &i in locus.indices() {
            let p = b.samples().point(i);
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!(r <= 6.0 * h + 1e-12, "flagged sample at distance {r}");
        }
    }

    #[test]
    fn flat_oscillation_profile_yields_no_locus() {
        let b = stable(&kink_1d(), vec![(-1.0, 1.0)], 6);
        let params = SectionParams::default();
        let rho = params.osc_radius_factor * b.samples().h();
        let (locus, _, _) = auto_locus(&b, rho, &params).unwrap();
        assert!(locus.is_empty());
    }

    #[test]
    fn extend_is_exact_on_the_subset() {
        let dom = DomainSpec::box_only(vec![(0.0, 1.0)]).unwrap();
        let parent = Arc::new(sample_domain(&dom, 2).unwrap());
        let subset = SampleSubset::new(parent.clone(), vec![0, 4]);
        let vals = [
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![1.0]),
        ];
        let sec = extend(&subset, &vals, 3).unwrap();
        assert_eq!(sec.value(0)[0], 0.0);
        assert_eq!(sec.value(4)[0], 1.0);
        // midpoint is equidistant
        assert_relative_eq!(sec.value(2)[0], 0.5, epsilon = 1e-12);
        // at x = 0.25 the weights are 0.25⁻³ and 0.75⁻³
        let (w0, w1) = (64.0, 64.0 / 27.0);
        assert_relative_eq!(sec.value(1)[0], w1 / (w0 + w1), epsilon = 1e-12);

        let empty = SampleSubset::new(parent, vec![]);
        assert!(matches!(
            extend(&empty, &[], 3),
            Err(SectionError::EmptySubset)
        ));
    }

    #[test]
    fn projecting_the_zero_section_recovers_min_norm_points() {
        let b = fresh(&radial(), square(), 2);
        let zeros = Section::new(
            b.samples().clone(),
            vec![DVector::zeros(2); b.len()],
            4,
        );
        let proj = project_section(&b, &zeros).unwrap();
        let w = omega_field(&b).unwrap();
        for i in 0..b.len() {
            assert_relative_eq!(proj.value(i), w.value(i), epsilon = 1e-12);
        }
    }

    #[test]
    fn projecting_fixes_values_already_in_fibers() {
        let b = fresh(&radial(), square(), 2);
        let w = omega_field(&b).unwrap();
        let proj = project_section(&b, &w).unwrap();
        for i in 0..b.len() {
            assert_relative_eq!(proj.value(i), w.value(i), epsilon = 1e-12);
        }
    }

    #[test]
    fn build_finds_the_constant_solution_through_the_jump() {
        let sys = radial();
        let b = stable(&sys, square(), 5);
        let (sec, report) = build_section(&b, &SectionParams::default()).unwrap();
        assert_eq!(report.max_depth, 1);
        assert_eq!(report.constant_depths, vec![1]);
        let target = DVector::from_vec(vec![1.0, 0.0]);
        for i in 0..b.len() {
            assert!((sec.value(i) - &target).norm() <= 1e-8);
            let (a, g) = sys.eval_system(b.samples().point(i)).unwrap();
            assert!((a * sec.value(i) - g).norm() <= 1e-9);
        }
    }

    #[test]
    fn build_follows_the_kink_exactly() {
        let b = stable(&kink_1d(), vec![(-1.0, 1.0)], 7);
        let (sec, report) = build_section(&b, &SectionParams::default()).unwrap();
        assert_eq!(report.max_depth, 0);
        assert_eq!(report.cover_sizes.len(), 1);
        for i in 0..b.len() {
            let x = b.samples().point(i)[0];
            assert!((sec.value(i)[0] - x.abs()).abs() <= 1e-8);
        }
        let origin = find_sample(b.samples(), &[0.0]);
        assert!(sec.value(origin)[0].abs() <= 1e-12);
    }

    #[test]
    fn build_reports_the_empty_fiber() {
        let sys = system(&["x", "y"], &[&["x", "y"]], &["sqrt(x^2 + y^2)"]);
        let b = stable(&sys, square(), 5);
        let err = build_section(&b, &SectionParams::default()).unwrap_err();
        match err {
            SectionError::EmptyFiber { witness } => {
                let p = b.samples().point(witness);
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                assert!(r <= 2.0 * b.samples().h() + 1e-12, "witness at {r}");
            }
            other => panic!("expected EmptyFiber, got {other:?}"),
        }
    }

    #[test]
    fn glue_reproduces_a_globally_valid_anchor() {
        let b = stable(&radial(), square(), 4);
        let params = SectionParams::default();
        let rho = params.osc_radius_factor * b.samples().h();
        let (_, theta_w, _) = auto_locus(&b, rho, &params).unwrap();
        let mut cover = greedy_cover(&b, theta_w, &params).unwrap();
        let target = DVector::from_vec(vec![1.0, 0.0]);
        for ball in &mut cover.balls {
            ball.anchor = target.clone();
        }
        let sec = glue(&b, &cover, &params).unwrap();
        for i in 0..b.len() {
            assert!((sec.value(i) - &target).norm() <= 1e-12);
        }
    }
}
