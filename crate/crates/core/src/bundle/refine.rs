//! Single-fiber refinement from concentric shell statistics.
//!
//! A candidate value stays in the refined fiber at `x` only if its distance
//! to the neighboring fibers vanishes as the neighborhood shrinks. With
//! samples available only at pitch `h`, that limit is estimated on dyadic
//! shells: for each shell the mean squared fiber distance is a quadratic
//! `q_j` over the current fiber's coordinates, and the refined fiber keeps
//! exactly the directions whose quadratic mass keeps decaying inward, based
//! at the inward extrapolation of the per-shell minimizers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::affine::AffineSubspace;

use super::{Bundle, BundleError};

struct ShellStat {
    /// Mean distance of the used samples.
    rho: f64,
    /// Quadratic data over fiber coordinates: q(t) = tᵀAt + 2bᵀt + c.
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
    /// Minimizer of q and its value.
    tstar: DVector<f64>,
    qmin: f64,
}

fn eval_q(st: &ShellStat, t: &DVector<f64>) -> f64 {
    ((t.transpose() * &st.a * t)[(0, 0)] + 2.0 * st.b.dot(t) + st.c).max(0.0)
}

/// Least-norm minimizer of the shell quadratic via eigendecomposition of its
/// (possibly singular) symmetric matrix.
fn min_norm_minimizer(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = b.len();
    if k == 0 {
        return DVector::zeros(0);
    }
    let eig = SymmetricEigen::new(a.clone());
    let mu_max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let cutoff = 1e-12 * (1.0 + mu_max);
    let mut t = DVector::zeros(k);
    for (j, &mu) in eig.eigenvalues.iter().enumerate() {
        if mu > cutoff {
            let u = eig.eigenvectors.column(j);
            t += u * (-u.dot(b) / mu);
        }
    }
    t
}

pub(crate) fn refine_point(
    bundle: &Bundle,
    i: usize,
) -> Result<(AffineSubspace, Option<f64>), BundleError> {
    let fiber = &bundle.fibers[i];
    let (base, basis) = match fiber {
        AffineSubspace::Empty => return Ok((AffineSubspace::Empty, None)),
        AffineSubspace::Nonempty { base, basis } => (base, basis),
    };
    let k = basis.ncols();
    let params = &bundle.params;
    let samples = &bundle.samples;
    let x = samples.point(i);

    let r0 = params.shell_base_radius;
    let nshells = params.shell_count;
    // Dyadic shell radii; shell j collects distances in (radii[j+1], radii[j]].
    let radii: Vec<f64> = (0..=nshells)
        .map(|j| r0 * params.shell_ratio.powi(j as i32))
        .collect();
    let radii2: Vec<f64> = radii.iter().map(|r| r * r).collect();

    let mut members: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nshells];
    for j in samples.ball(x, r0) {
        if j == i {
            continue;
        }
        let d2: f64 = samples
            .point(j)
            .iter()
            .zip(x)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let Some(shell) = (0..nshells).find(|&s| d2 <= radii2[s] && d2 > radii2[s + 1])
        else {
            continue;
        };
        // A sample that was infeasible from the start poisons every value
        // near it; one inside any shell empties this fiber outright.
        if bundle.initial_dim[j] < 0 {
            return Ok((AffineSubspace::Empty, None));
        }
        members[shell].push((j, d2.sqrt()));
    }

    // Shells that the domain fully contains must be populated; a starved one
    // means the resolution cannot support the shell geometry.
    if !samples.domain().has_constraints() {
        for (s, shell_members) in members.iter().enumerate() {
            if shell_members.len() < params.min_shell_samples
                && samples.domain().ball_inside_box(x, radii[s])
            {
                return Err(BundleError::InsufficientSamples {
                    point_index: i,
                    shell: s,
                    got: shell_members.len(),
                    need: params.min_shell_samples,
                });
            }
        }
    }

    // Per-shell quadratic statistics over the used neighbors.
    let mut stats: Vec<ShellStat> = Vec::new();
    for shell_members in &members {
        let mut count = 0usize;
        let mut sum_d = 0.0;
        let mut a = DMatrix::<f64>::zeros(k, k);
        let mut bvec = DVector::<f64>::zeros(k);
        let mut c = 0.0;
        for &(j, d) in shell_members {
            let neighbor = &bundle.fibers[j];
            let cur = neighbor.dim().map_or(-1, |d| d as isize);
            // A neighbor that refinement already cut below its initial
            // dimension no longer witnesses the original limit geometry.
            if cur < bundle.initial_dim[j] {
                continue;
            }
            let (cy, by) = match neighbor {
                AffineSubspace::Nonempty { base, basis } => (base, basis),
                AffineSubspace::Empty => unreachable!("initially empty neighbors flood"),
            };
            // Residual of λ = base + B·t against this fiber is
            // (I − ByByᵀ)(λ − cy); accumulate its squared norm as a quadratic.
            let diff = base - cy;
            let w = &diff - by * (by.transpose() * &diff);
            let m = basis - by * (by.transpose() * basis);
            a += m.transpose() * &m;
            bvec += m.transpose() * &w;
            c += w.dot(&w);
            count += 1;
            sum_d += d;
        }
        if count == 0 {
            continue;
        }
        let scale = 1.0 / count as f64;
        let a = a * scale;
        let bvec = bvec * scale;
        let c = c * scale;
        let tstar = min_norm_minimizer(&a, &bvec);
        let mut st = ShellStat {
            rho: sum_d * scale,
            a,
            b: bvec,
            c,
            tstar: tstar.clone(),
            qmin: 0.0,
        };
        st.qmin = eval_q(&st, &tstar);
        stats.push(st);
    }

    // No usable neighbors at all: nothing to test against.
    if stats.is_empty() {
        return Ok((fiber.clone(), None));
    }

    // The best fit must keep improving (up to a factor) as shells shrink,
    // otherwise no candidate survives the limit. The slack floor scales with
    // the quadratic's constant term: minima of an exactly-fitting family are
    // pure cancellation residue of that magnitude.
    for pair in stats.windows(2) {
        let noise = 1e-12 * (1.0 + pair[0].c + pair[1].c);
        if pair[1].qmin > 2.0 * pair[0].qmin + noise {
            return Ok((AffineSubspace::Empty, None));
        }
    }

    let fin = stats.last().unwrap();
    let fit_err = fin.qmin.sqrt();
    if fit_err > params.eps_fit * fin.rho + params.eps_fit_floor {
        return Ok((AffineSubspace::Empty, None));
    }

    if k == 0 {
        return Ok((fiber.clone(), Some(fit_err)));
    }

    // Direction retention: an eigendirection of the finest shell's quadratic
    // survives when its mass is exactly degenerate or decayed against the
    // same direction's mass on a coarser shell.
    let eig = SymmetricEigen::new(fin.a.clone());
    let mu_max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let floor = params.eps_dir_floor * (1.0 + mu_max);
    let earlier = &stats[..stats.len() - 1];
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..k {
        let mu = eig.eigenvalues[j];
        let u = eig.eigenvectors.column(j);
        let keep = if mu <= floor {
            true
        } else if earlier.is_empty() {
            false
        } else {
            let coarse_mass = earlier
                .iter()
                .map(|st| (u.transpose() * &st.a * u)[(0, 0)])
                .fold(0.0f64, f64::max);
            mu <= params.eps_dir * coarse_mass
        };
        if keep {
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }

    if dropped.is_empty() {
        return Ok((fiber.clone(), Some(fit_err)));
    }

    // Base point: extrapolate the per-shell minimizers toward the center to
    // cancel the first-order drift a finite shell inevitably carries.
    let t_extrap = if stats.len() >= 2 {
        let prev = &stats[stats.len() - 2];
        let dr = prev.rho - fin.rho;
        if dr.abs() > 1e-12 * (1.0 + fin.rho) {
            &fin.tstar + (&fin.tstar - &prev.tstar) * (fin.rho / dr)
        } else {
            fin.tstar.clone()
        }
    } else {
        fin.tstar.clone()
    };

    let mut t_base = DVector::<f64>::zeros(k);
    for &j in &dropped {
        let u = eig.eigenvectors.column(j);
        t_base += u * u.dot(&t_extrap);
    }
    let new_base = base + basis * &t_base;
    let mut new_basis = DMatrix::<f64>::zeros(basis.nrows(), kept.len());
    for (col, &j) in kept.iter().enumerate() {
        let dir = basis * eig.eigenvectors.column(j);
        new_basis.set_column(col, &dir);
    }
    Ok((AffineSubspace::from_parts(new_base, new_basis), Some(fit_err)))
}
