//! Affine subspaces of `ℝ^s` with exact-tolerance linear algebra: solving a
//! linear system into a fiber, orthogonal projection, min-norm points,
//! projector matrices, and a gap metric for comparing subspaces.
//!
//! Nonempty subspaces are kept in canonical form: the stored base point is
//! the minimum-norm point of the subspace and the basis columns are
//! orthonormal. This makes set equality testable through [`subspace_gap`]
//! with no basis-ordering ambiguity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative singular-value threshold used for rank decisions when the caller
/// does not override it.
pub const DEFAULT_SIGMA_TOL: f64 = 1e-9;

/// Projection onto a direction space, as an explicit `s×s` matrix
/// (symmetric, idempotent).
pub type ProjectorMatrix = DMatrix<f64>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AffineError {
    #[error("coefficient matrix has {rows} rows but right-hand side has {rhs}")]
    DimensionMismatch { rows: usize, rhs: usize },
    #[error("operation undefined on the empty subspace")]
    EmptySubspace,
}

/// An affine subspace of `ℝ^s`, possibly empty.
///
/// `basis` is `s×k` with orthonormal columns, `0 ≤ k ≤ s`; `k = 0` is a
/// single point and `k = s` the whole space. `base` is the min-norm point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SubspaceDto", try_from = "SubspaceDto")]
pub enum AffineSubspace {
    Empty,
    Nonempty {
        base: DVector<f64>,
        basis: DMatrix<f64>,
    },
}

impl AffineSubspace {
    /// Single-point subspace.
    pub fn point(p: DVector<f64>) -> Self {
        let s = p.len();
        AffineSubspace::Nonempty {
            base: p,
            basis: DMatrix::zeros(s, 0),
        }
    }

    /// The whole ambient space.
    pub fn full(s: usize) -> Self {
        AffineSubspace::Nonempty {
            base: DVector::zeros(s),
            basis: DMatrix::identity(s, s),
        }
    }

    /// Builds from a base point and an already-orthonormal basis,
    /// canonicalizing the base to the min-norm point.
    pub fn from_parts(base: DVector<f64>, basis: DMatrix<f64>) -> Self {
        debug_assert_eq!(base.len(), basis.nrows());
        let canonical = &base - &basis * (basis.transpose() * &base);
        AffineSubspace::Nonempty {
            base: canonical,
            basis,
        }
    }

    /// Builds from a base point and an arbitrary spanning matrix whose
    /// columns may be dependent or unnormalized; the direction space is
    /// orthonormalized and near-zero directions dropped.
    pub fn from_span(base: DVector<f64>, spanning: &DMatrix<f64>) -> Self {
        let s = base.len();
        debug_assert_eq!(s, spanning.nrows());
        if spanning.ncols() == 0 {
            return AffineSubspace::point(base);
        }
        let svd = spanning.clone().svd(true, false);
        let u = svd.u.expect("svd requested u");
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let mut cols: Vec<usize> = Vec::new();
        for (i, &sv) in svd.singular_values.iter().enumerate() {
            if smax > 0.0 && sv >= 1e-12 * smax {
                cols.push(i);
            }
        }
        let mut basis = DMatrix::zeros(s, cols.len());
        for (j, &i) in cols.iter().enumerate() {
            basis.set_column(j, &u.column(i));
        }
        AffineSubspace::from_parts(base, basis)
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, AffineSubspace::Empty)
    }

    /// Dimension of the direction space; `None` when empty.
    pub fn dim(&self) -> Option<usize> {
        match self {
            AffineSubspace::Empty => None,
            AffineSubspace::Nonempty { basis, .. } => Some(basis.ncols()),
        }
    }

    /// Ambient dimension `s`; `None` when empty.
    pub fn ambient_dim(&self) -> Option<usize> {
        match self {
            AffineSubspace::Empty => None,
            AffineSubspace::Nonempty { base, .. } => Some(base.len()),
        }
    }

    pub fn base(&self) -> Option<&DVector<f64>> {
        match self {
            AffineSubspace::Empty => None,
            AffineSubspace::Nonempty { base, .. } => Some(base),
        }
    }

    pub fn basis(&self) -> Option<&DMatrix<f64>> {
        match self {
            AffineSubspace::Empty => None,
            AffineSubspace::Nonempty { basis, .. } => Some(basis),
        }
    }

    /// Orthogonal projection of `w` onto the subspace, the unique nearest
    /// point.
    pub fn project(&self, w: &DVector<f64>) -> Result<DVector<f64>, AffineError> {
        match self {
            AffineSubspace::Empty => Err(AffineError::EmptySubspace),
            AffineSubspace::Nonempty { base, basis } => {
                if w.len() != base.len() {
                    return Err(AffineError::DimensionMismatch {
                        rows: base.len(),
                        rhs: w.len(),
                    });
                }
                let d = w - base;
                Ok(base + basis * (basis.transpose() * d))
            }
        }
    }

    /// Distance from `w` to the subspace; `+∞` for the empty set so that
    /// refinement logic can treat empty neighbor fibers uniformly.
    pub fn distance(&self, w: &DVector<f64>) -> f64 {
        match self.project(w) {
            Ok(p) => (w - p).norm(),
            Err(_) => f64::INFINITY,
        }
    }

    /// The point of minimal euclidean norm; in canonical form this is the
    /// stored base.
    pub fn min_norm_point(&self) -> Result<DVector<f64>, AffineError> {
        match self {
            AffineSubspace::Empty => Err(AffineError::EmptySubspace),
            AffineSubspace::Nonempty { base, .. } => Ok(base.clone()),
        }
    }

    /// The matrix `P = basis·basisᵀ` projecting onto the direction space.
    pub fn projector_matrix(&self) -> Result<ProjectorMatrix, AffineError> {
        match self {
            AffineSubspace::Empty => Err(AffineError::EmptySubspace),
            AffineSubspace::Nonempty { basis, .. } => Ok(basis * basis.transpose()),
        }
    }

    pub fn contains(&self, w: &DVector<f64>, tol: f64) -> bool {
        self.distance(w) <= tol
    }
}

/// Solves `A λ = g` into an affine subspace: `Empty` when the least-squares
/// residual exceeds `sigma_tol·(1+‖g‖)`, otherwise the full solution set in
/// canonical form (base = min-norm solution, basis = orthonormal null-space
/// basis). Rank is decided by singular values `≥ sigma_tol·σ_max`.
pub fn solve_fiber(
    a: &DMatrix<f64>,
    g: &DVector<f64>,
    sigma_tol: f64,
) -> Result<AffineSubspace, AffineError> {
    assert!(sigma_tol > 0.0, "sigma_tol must be positive");
    let (r, s) = (a.nrows(), a.ncols());
    if g.len() != r {
        return Err(AffineError::DimensionMismatch {
            rows: r,
            rhs: g.len(),
        });
    }
    // A thin SVD of a wide matrix returns too few right-singular vectors to
    // span the null space, so pad with zero rows (and zero rhs entries, which
    // change nothing) until the matrix is at least square.
    let (a_pad, g_pad) = if r < s {
        let mut ap = DMatrix::zeros(s, s);
        ap.view_mut((0, 0), (r, s)).copy_from(a);
        let mut gp = DVector::zeros(s);
        gp.view_mut((0, 0), (r, 1)).copy_from(g);
        (ap, gp)
    } else {
        (a.clone(), g.clone())
    };
    let svd = a_pad.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0, f64::max);

    let mut x = DVector::zeros(s);
    let mut null_rows: Vec<usize> = Vec::new();
    for i in 0..sigma.len() {
        if smax > 0.0 && sigma[i] >= sigma_tol * smax {
            let coef = u.column(i).dot(&g_pad) / sigma[i];
            x += v_t.row(i).transpose() * coef;
        } else {
            null_rows.push(i);
        }
    }
    let residual = (a * &x - g).norm();
    if residual > sigma_tol * (1.0 + g.norm()) {
        return Ok(AffineSubspace::Empty);
    }
    let mut basis = DMatrix::zeros(s, null_rows.len());
    for (j, &i) in null_rows.iter().enumerate() {
        basis.set_column(j, &v_t.row(i).transpose());
    }
    // The SVD solution already lies in the row space, orthogonal to the null
    // space, but canonicalize anyway to keep the invariant exact.
    Ok(AffineSubspace::from_parts(x, basis))
}

/// Gap between two subspaces: `0` if both empty, `+∞` if exactly one is
/// empty (or ambient dimensions differ), otherwise the operator norm of the
/// projector difference plus the relative base offset
/// `‖P1−P2‖ + ‖b1−b2‖/(1+‖b1‖)`.
pub fn subspace_gap(v1: &AffineSubspace, v2: &AffineSubspace) -> f64 {
    match (v1, v2) {
        (AffineSubspace::Empty, AffineSubspace::Empty) => 0.0,
        (AffineSubspace::Empty, _) | (_, AffineSubspace::Empty) => f64::INFINITY,
        (
            AffineSubspace::Nonempty {
                base: b1,
                basis: m1,
            },
            AffineSubspace::Nonempty {
                base: b2,
                basis: m2,
            },
        ) => {
            if b1.len() != b2.len() {
                return f64::INFINITY;
            }
            let diff = m1 * m1.transpose() - m2 * m2.transpose();
            // The difference of two orthogonal projectors is symmetric, so
            // its operator norm is the largest eigenvalue magnitude.
            let eig = diff.symmetric_eigen();
            let op = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
            op + (b1 - b2).norm() / (1.0 + b1.norm())
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SubspaceDto {
    Empty { empty: bool },
    Span { base: Vec<f64>, basis: Vec<Vec<f64>> },
}

impl From<AffineSubspace> for SubspaceDto {
    fn from(v: AffineSubspace) -> Self {
        match v {
            AffineSubspace::Empty => SubspaceDto::Empty { empty: true },
            AffineSubspace::Nonempty { base, basis } => SubspaceDto::Span {
                base: base.iter().cloned().collect(),
                basis: (0..basis.ncols())
                    .map(|j| basis.column(j).iter().cloned().collect())
                    .collect(),
            },
        }
    }
}

impl TryFrom<SubspaceDto> for AffineSubspace {
    type Error = String;

    fn try_from(dto: SubspaceDto) -> Result<Self, String> {
        match dto {
            SubspaceDto::Empty { empty: true } => Ok(AffineSubspace::Empty),
            SubspaceDto::Empty { empty: false } => {
                Err("subspace tagged empty:false carries no data".to_string())
            }
            SubspaceDto::Span { base, basis } => {
                let s = base.len();
                if basis.iter().any(|c| c.len() != s) {
                    return Err("basis column length differs from base length".to_string());
                }
                let spanning =
                    DMatrix::from_fn(s, basis.len(), |i, j| basis[j][i]);
                // Orthonormalize on the way in: external producers need not
                // maintain the canonical-form invariants.
                Ok(AffineSubspace::from_span(DVector::from_vec(base), &spanning))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    /// Line x+y=2 in canonical form.
    fn diagonal_line() -> AffineSubspace {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let g = DVector::from_vec(vec![2.0]);
        solve_fiber(&a, &g, DEFAULT_SIGMA_TOL).unwrap()
    }

    #[test]
    fn identity_system_gives_a_point() {
        let a = DMatrix::identity(2, 2);
        let g = vec2(3.0, 4.0);
        let v = solve_fiber(&a, &g, DEFAULT_SIGMA_TOL).unwrap();
        assert_eq!(v.dim(), Some(0));
        assert_relative_eq!(v.base().unwrap(), &vec2(3.0, 4.0), epsilon = 1e-12);
    }

    #[test]
    fn single_equation_gives_a_line_in_canonical_form() {
        let v = diagonal_line();
        assert_eq!(v.dim(), Some(1));
        let base = v.base().unwrap();
        assert_relative_eq!(base, &vec2(1.0, 1.0), epsilon = 1e-10);
        let basis = v.basis().unwrap();
        // Direction is ±(1,−1)/√2.
        assert_relative_eq!(basis.column(0).dot(&vec2(1.0, 1.0)), 0.0, epsilon = 1e-10);
        assert_relative_eq!(basis.column(0).norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inconsistent_and_degenerate_systems() {
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let one = DVector::from_vec(vec![1.0]);
        let zero = DVector::from_vec(vec![0.0]);
        assert!(solve_fiber(&a, &one, DEFAULT_SIGMA_TOL).unwrap().is_empty());
        let full = solve_fiber(&a, &zero, DEFAULT_SIGMA_TOL).unwrap();
        assert_eq!(full.dim(), Some(2));
        assert_relative_eq!(full.base().unwrap().norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = DMatrix::identity(2, 2);
        let g = DVector::from_vec(vec![1.0]);
        assert_eq!(
            solve_fiber(&a, &g, DEFAULT_SIGMA_TOL),
            Err(AffineError::DimensionMismatch { rows: 2, rhs: 1 })
        );
    }

    #[test]
    fn projection_examples() {
        let line = diagonal_line();
        assert_relative_eq!(
            line.project(&vec2(0.0, 0.0)).unwrap(),
            vec2(1.0, 1.0),
            epsilon = 1e-10
        );
        let point = AffineSubspace::point(vec2(3.0, 4.0));
        assert_relative_eq!(
            point.project(&vec2(-5.0, 2.0)).unwrap(),
            vec2(3.0, 4.0),
            epsilon = 1e-12
        );
        let full = AffineSubspace::full(2);
        let w = vec2(0.3, -0.7);
        assert_relative_eq!(full.project(&w).unwrap(), w, epsilon = 1e-12);
    }

    #[test]
    fn projection_is_idempotent() {
        let line = diagonal_line();
        let w = vec2(5.0, -3.0);
        let p1 = line.project(&w).unwrap();
        let p2 = line.project(&p1).unwrap();
        assert_relative_eq!(p1, p2, epsilon = 1e-12);
    }

    #[test]
    fn distances() {
        let line = diagonal_line();
        assert_relative_eq!(
            line.distance(&vec2(0.0, 0.0)),
            2.0f64.sqrt(),
            epsilon = 1e-10
        );
        let on_line = vec2(2.0, 0.0);
        assert!(line.distance(&on_line) < 1e-10);
        assert_eq!(AffineSubspace::Empty.distance(&vec2(0.0, 0.0)), f64::INFINITY);
    }

    #[test]
    fn min_norm_points() {
        assert_relative_eq!(
            diagonal_line().min_norm_point().unwrap(),
            vec2(1.0, 1.0),
            epsilon = 1e-10
        );
        assert_relative_eq!(
            AffineSubspace::full(3).min_norm_point().unwrap().norm(),
            0.0,
            epsilon = 1e-15
        );
        let p = vec2(3.0, 4.0);
        assert_relative_eq!(
            AffineSubspace::point(p.clone()).min_norm_point().unwrap(),
            p,
            epsilon = 1e-15
        );
        assert_eq!(
            AffineSubspace::Empty.min_norm_point(),
            Err(AffineError::EmptySubspace)
        );
    }

    #[test]
    fn projector_matrices() {
        let full = AffineSubspace::full(2).projector_matrix().unwrap();
        assert_relative_eq!(full, DMatrix::identity(2, 2), epsilon = 1e-15);
        let pt = AffineSubspace::point(vec2(1.0, 2.0))
            .projector_matrix()
            .unwrap();
        assert_relative_eq!(pt.norm(), 0.0, epsilon = 1e-15);
        let line = diagonal_line().projector_matrix().unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert_relative_eq!(line, expected, epsilon = 1e-10);
    }

    #[test]
    fn projector_is_symmetric_idempotent() {
        let p = diagonal_line().projector_matrix().unwrap();
        assert_relative_eq!(p.clone(), p.transpose(), epsilon = 1e-12);
        assert_relative_eq!(&p * &p, p, epsilon = 1e-10);
    }

    #[test]
    fn gap_examples() {
        let line = diagonal_line();
        assert_relative_eq!(subspace_gap(&line, &line), 0.0, epsilon = 1e-14);

        let e1 = AffineSubspace::from_parts(
            DVector::zeros(2),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        );
        let e2 = AffineSubspace::from_parts(
            DVector::zeros(2),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        );
        assert_relative_eq!(subspace_gap(&e1, &e2), 1.0, epsilon = 1e-12);

        assert_eq!(
            subspace_gap(&AffineSubspace::Empty, &AffineSubspace::full(2)),
            f64::INFINITY
        );
        assert_eq!(
            subspace_gap(&AffineSubspace::Empty, &AffineSubspace::Empty),
            0.0
        );
    }

    #[test]
    fn gap_ignores_basis_sign_and_order() {
        let b1 = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let b2 = DMatrix::from_column_slice(3, 2, &[0.0, -1.0, 0.0, -1.0, 0.0, 0.0]);
        let v1 = AffineSubspace::from_parts(DVector::zeros(3), b1);
        let v2 = AffineSubspace::from_parts(DVector::zeros(3), b2);
        assert!(subspace_gap(&v1, &v2) < 1e-12);
    }

    #[test]
    fn from_span_drops_dependent_columns() {
        let spanning = DMatrix::from_column_slice(3, 3, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let v = AffineSubspace::from_span(DVector::zeros(3), &spanning);
        assert_eq!(v.dim(), Some(2));
        let b = v.basis().unwrap();
        assert_relative_eq!(
            b.transpose() * b,
            DMatrix::identity(2, 2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn canonical_base_is_orthogonal_to_basis() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.0, 1.0, 1.0]);
        let g = DVector::from_vec(vec![3.0, 1.0]);
        let v = solve_fiber(&a, &g, DEFAULT_SIGMA_TOL).unwrap();
        let base = v.base().unwrap();
        let basis = v.basis().unwrap();
        assert!(basis.ncols() > 0);
        assert!((basis.transpose() * base).norm() < 1e-10);
        // Residual of random fiber points stays at solver scale.
        for t in [-1.0, 0.3, 2.0] {
            let pt = base + basis.column(0) * t;
            assert!((lhs(&a, &pt) - &g).norm() < 1e-8);
        }
    }

    fn lhs(a: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
        a * x
    }

    #[test]
    fn serde_round_trip() {
        for v in [
            AffineSubspace::Empty,
            AffineSubspace::point(vec2(1.5, -2.5)),
            diagonal_line(),
            AffineSubspace::full(2),
        ] {
            let json = serde_json::to_string(&v).unwrap();
            let back: AffineSubspace = serde_json::from_str(&json).unwrap();
            assert!(subspace_gap(&v, &back) < 1e-10, "round trip moved {json}");
        }
        let empty_json = serde_json::to_string(&AffineSubspace::Empty).unwrap();
        assert!(empty_json.contains("empty"));
    }
}
