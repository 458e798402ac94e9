//! Affine fiber bundles over sampled domains and their iterative refinement.
//!
//! The initial bundle attaches to every sample the affine solution set of the
//! pointwise system. Refinement shrinks each fiber to the candidates that
//! remain reachable as limits of values in neighboring fibers, estimated from
//! concentric sample shells; repeating until nothing moves yields the stable
//! bundle. A system admits a continuous solution exactly when the stable
//! bundle has no empty fiber.

mod refine;
mod sample;

pub use sample::{sample_domain, DomainSpec, SampleSet};

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::affine::{self, AffineSubspace};
use crate::expr::{SystemEvalError, SystemSpec};

#[derive(Debug, Clone, Error)]
pub enum BundleError {
    #[error("axis {axis}: box needs lower < upper")]
    InvalidBox { axis: usize },
    #[error("no sample point satisfies the domain constraints")]
    EmptyDomain,
    #[error("system evaluation failed at {point:?}: {source}")]
    Eval {
        point: Vec<f64>,
        source: SystemEvalError,
    },
    #[error(
        "sample {point_index}: shell {shell} holds {got} samples (need {need}); raise the level"
    )]
    InsufficientSamples {
        point_index: usize,
        shell: usize,
        got: usize,
        need: usize,
    },
    #[error("bundle did not stabilize in {iterations} iterations (last gap {last_gap:.3e})")]
    NoStabilization { iterations: usize, last_gap: f64 },
    #[error(transparent)]
    Affine(#[from] affine::AffineError),
}

/// Tuning knobs for shell-based fiber refinement.
///
/// Shells around a point have radii `shell_base_radius · shell_ratio^j` for
/// `j = 0..shell_count`; fit and direction thresholds are relative to the
/// mean shell distance, with absolute floors for exactly-degenerate data.
#[derive(Debug, Clone, Serialize)]
pub struct RefineParams {
    pub shell_base_radius: f64,
    pub shell_count: usize,
    pub shell_ratio: f64,
    /// Residual slack per unit of shell distance; a candidate value fits a
    /// shell when its RMS fiber distance is below `eps_fit · mean distance`.
    pub eps_fit: f64,
    pub eps_fit_floor: f64,
    /// A fiber direction survives when its quadratic mass on the finest
    /// shell decays to below `eps_dir` times the mass on a coarser shell.
    pub eps_dir: f64,
    pub eps_dir_floor: f64,
    pub min_shell_samples: usize,
    pub max_iterations: usize,
    /// Refinement counts as settled when no fiber moved by more than this.
    pub stabilize_gap: f64,
    /// Rank cutoff for the pointwise solver.
    pub sigma_tol: f64,
}

impl RefineParams {
    /// Defaults scaled to grid pitch `h`, domain dimension `n`, and number of
    /// unknowns `s`.
    pub fn for_problem(h: f64, n: usize, s: usize) -> Self {
        RefineParams {
            shell_base_radius: 8.0 * h,
            shell_count: 4,
            shell_ratio: 0.5,
            eps_fit: 2.2,
            eps_fit_floor: 1e-9,
            eps_dir: 0.75,
            eps_dir_floor: 1e-12,
            min_shell_samples: usize::max(4, n + 1).min(2 * n),
            max_iterations: 2 * s + 2,
            stabilize_gap: 1e-8,
            sigma_tol: 1e-9,
        }
    }
}

/// A family of affine fibers over a sample set, together with the iteration
/// count and the per-point fit error of the last refinement step.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub(crate) samples: Arc<SampleSet>,
    pub(crate) fibers: Vec<AffineSubspace>,
    pub(crate) iteration: usize,
    pub(crate) params: RefineParams,
    /// Fiber dimension at iteration zero, -1 for empty; refinement only ever
    /// shrinks a fiber, so a current dimension below the initial one marks a
    /// fiber that refinement has already cut down.
    pub(crate) initial_dim: Arc<Vec<isize>>,
    pub(crate) fit_errors: Vec<Option<f64>>,
}

fn dim_of(f: &AffineSubspace) -> isize {
    f.dim().map_or(-1, |d| d as isize)
}

impl Bundle {
    pub fn samples(&self) -> &Arc<SampleSet> {
        &self.samples
    }

    pub fn fibers(&self) -> &[AffineSubspace] {
        &self.fibers
    }

    pub fn fiber(&self, i: usize) -> &AffineSubspace {
        &self.fibers[i]
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn params(&self) -> &RefineParams {
        &self.params
    }

    pub fn fit_errors(&self) -> &[Option<f64>] {
        &self.fit_errors
    }

    pub fn len(&self) -> usize {
        self.fibers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fibers.is_empty()
    }

    /// Number of unknowns (ambient fiber dimension).
    pub fn ambient_dim(&self) -> usize {
        self.fibers
            .iter()
            .find_map(|f| match f {
                AffineSubspace::Empty => None,
                AffineSubspace::Nonempty { base, .. } => Some(base.len()),
            })
            .unwrap_or(0)
    }

    /// Swaps in a fiber before any refinement ran, e.g. to model an isolated
    /// infeasible point. Panics after the first refinement step.
    pub fn replace_fiber(&mut self, i: usize, fiber: AffineSubspace) {
        assert_eq!(
            self.iteration, 0,
            "fibers can only be replaced before refinement"
        );
        Arc::make_mut(&mut self.initial_dim)[i] = dim_of(&fiber);
        self.fibers[i] = fiber;
    }

    /// One synchronous refinement sweep over all fibers.
    pub fn refine_once(&self) -> Result<Bundle, BundleError> {
        let results: Vec<Result<(AffineSubspace, Option<f64>), BundleError>> = (0..self
            .fibers
            .len())
            .into_par_iter()
            .map(|i| refine::refine_point(self, i))
            .collect();
        let mut fibers = Vec::with_capacity(results.len());
        let mut fit_errors = Vec::with_capacity(results.len());
        for r in results {
            let (f, e) = r?;
            fibers.push(f);
            fit_errors.push(e);
        }
        Ok(Bundle {
            samples: Arc::clone(&self.samples),
            fibers,
            iteration: self.iteration + 1,
            params: self.params.clone(),
            initial_dim: Arc::clone(&self.initial_dim),
            fit_errors,
        })
    }

    /// Refinement of a single fiber; the bundle itself is unchanged.
    pub fn refine_point(&self, i: usize) -> Result<(AffineSubspace, Option<f64>), BundleError> {
        refine::refine_point(self, i)
    }
}

/// Solves the pointwise system at every sample.
pub fn initial_bundle(
    sys: &SystemSpec,
    samples: Arc<SampleSet>,
    params: RefineParams,
) -> Result<Bundle, BundleError> {
    let fibers: Vec<AffineSubspace> = samples
        .points()
        .par_iter()
        .map(|p| {
            let (a, g) = sys.eval_system(p).map_err(|source| BundleError::Eval {
                point: p.clone(),
                source,
            })?;
            affine::solve_fiber(&a, &g, params.sigma_tol).map_err(BundleError::from)
        })
        .collect::<Result<_, _>>()?;
    let initial_dim = Arc::new(fibers.iter().map(dim_of).collect());
    let n = fibers.len();
    Ok(Bundle {
        samples,
        fibers,
        iteration: 0,
        params,
        initial_dim,
        fit_errors: vec![None; n],
    })
}

/// Largest pointwise fiber movement between two sweeps of the same bundle.
pub fn max_fiber_gap(before: &Bundle, after: &Bundle) -> f64 {
    assert_eq!(before.fibers.len(), after.fibers.len());
    before
        .fibers
        .iter()
        .zip(&after.fibers)
        .map(|(a, b)| affine::subspace_gap(a, b))
        .fold(0.0, f64::max)
}

/// Refines until no fiber moves by more than `stabilize_gap`, returning the
/// stable bundle and the number of sweeps performed.
pub fn stabilize(bundle: Bundle) -> Result<(Bundle, usize), BundleError> {
    let max_iterations = bundle.params.max_iterations;
    let gap_tol = bundle.params.stabilize_gap;
    let mut current = bundle;
    let mut last_gap = f64::INFINITY;
    for iter in 1..=max_iterations {
        let next = current.refine_once()?;
        last_gap = max_fiber_gap(&current, &next);
        current = next;
        if last_gap <= gap_tol {
            return Ok((current, iter));
        }
    }
    Err(BundleError::NoStabilization {
        iterations: max_iterations,
        last_gap,
    })
}

/// Index of the first sample whose fiber is empty, if any.
pub fn has_empty_fiber(bundle: &Bundle) -> Option<usize> {
    bundle.fibers.iter().position(|f| f.is_empty())
}
