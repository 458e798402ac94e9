//! Problem-file loading, pipeline drivers, and artifact I/O for the
//! `glaeser` binary. The drivers live here rather than in `main.rs` so
//! integration tests can run them in-process and inspect the results.

#![forbid(unsafe_code)]

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use glaeser_core::bundle::{
    has_empty_fiber, initial_bundle, max_fiber_gap, sample_domain, stabilize, Bundle, BundleError,
    DomainSpec, RefineParams, SampleSet,
};
use glaeser_core::expr::{
    parse_constraint, parse_semialg, piecewise_overlap_gap, ParseError, SemialgFn, SystemEvalError,
    SystemSpec,
};
use glaeser_core::section::{build_section, BuildReport, Section, SectionError, SectionParams};
use glaeser_core::verify::{modulus_of_continuity, residual, ContinuityReport, ResidualReport};

/// Grid level used when neither the file nor the flags pick one.
pub const DEFAULT_LEVEL: u32 = 5;
/// Residual tolerance for `verify` verdicts.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Piecewise branches disagreeing by more than this on a shared guard
/// region draw a warning during verification.
pub const OVERLAP_WARN_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{place}: {source}")]
    Expr { place: String, source: ParseError },
    #[error("problem file: {0}")]
    Shape(String),
    #[error("system is unsolvable: empty stable fiber at {witness:?}")]
    Unsolvable { witness: Vec<f64> },
    #[error("{path} line {line}: {msg}")]
    Csv {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("section file does not match problem: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Section(#[from] SectionError),
    #[error(transparent)]
    Eval(#[from] SystemEvalError),
}

impl CliError {
    /// Exit-code contract: 2 for a negative solvability verdict, 3 when
    /// section construction gives up, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Unsolvable { .. } => 2,
            CliError::Section(SectionError::RecursionLimit { .. }) => 3,
            _ => 1,
        }
    }
}

/// On-disk problem description: variable names, a box domain with optional
/// polynomial inequality constraints, and the coefficient matrix and
/// right-hand side as expression strings.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub vars: Vec<String>,
    pub domain: DomainFile,
    #[serde(rename = "A")]
    pub a: Vec<Vec<String>>,
    pub gamma: Vec<String>,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainFile {
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub constraints: Vec<String>,
}

/// Optional tuning overrides stored in the problem file. Command-line flags
/// win over these; anything left unset falls back to built-in defaults.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub level: Option<u32>,
    pub tol: Option<f64>,
    pub theta: Option<f64>,
    /// Shepard blend exponent for section evaluation between samples.
    pub p: Option<u32>,
    pub eps_fit: Option<f64>,
    pub shell_count: Option<usize>,
    pub shell_ratio: Option<f64>,
    pub max_iterations: Option<usize>,
}

/// Command-line values that override file params.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub level: Option<u32>,
    pub tol: Option<f64>,
    pub theta: Option<f64>,
}

/// A parsed and validated problem, ready to run.
#[derive(Debug)]
pub struct Problem {
    pub sys: SystemSpec,
    pub domain: DomainSpec,
    pub params: Params,
}

pub fn load_problem(path: &Path) -> Result<Problem, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.into(),
        source,
    })?;
    let file: ProblemFile = serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })?;
    problem_from_file(file)
}

pub fn problem_from_file(file: ProblemFile) -> Result<Problem, CliError> {
    if file.vars.is_empty() {
        return Err(CliError::Shape("vars must be nonempty".into()));
    }
    for (i, v) in file.vars.iter().enumerate() {
        if file.vars[..i].contains(v) {
            return Err(CliError::Shape(format!("duplicate variable `{v}`")));
        }
    }
    if file.domain.bounds.len() != file.vars.len() {
        return Err(CliError::Shape(format!(
            "domain box has {} intervals for {} variables",
            file.domain.bounds.len(),
            file.vars.len()
        )));
    }
    if file.a.is_empty() {
        return Err(CliError::Shape("A needs at least one row".into()));
    }
    let s = file.a[0].len();
    if s == 0 {
        return Err(CliError::Shape("A rows must be nonempty".into()));
    }
    for (i, row) in file.a.iter().enumerate() {
        if row.len() != s {
            return Err(CliError::Shape(format!(
                "A row {i} has {} entries, expected {s}",
                row.len()
            )));
        }
    }
    if file.gamma.len() != file.a.len() {
        return Err(CliError::Shape(format!(
            "gamma has {} entries for {} rows of A",
            file.gamma.len(),
            file.a.len()
        )));
    }

    let parse_entry = |place: String, text: &str| -> Result<SemialgFn, CliError> {
        parse_semialg(text, &file.vars).map_err(|source| CliError::Expr { place, source })
    };
    let mut a = Vec::with_capacity(file.a.len());
    for (i, row) in file.a.iter().enumerate() {
        let mut out = Vec::with_capacity(s);
        for (j, text) in row.iter().enumerate() {
            out.push(parse_entry(format!("A[{i}][{j}]"), text)?);
        }
        a.push(out);
    }
    let mut gamma = Vec::with_capacity(file.gamma.len());
    for (i, text) in file.gamma.iter().enumerate() {
        gamma.push(parse_entry(format!("gamma[{i}]"), text)?);
    }
    let mut constraints = Vec::with_capacity(file.domain.constraints.len());
    for (i, text) in file.domain.constraints.iter().enumerate() {
        constraints.push(
            parse_constraint(text, &file.vars).map_err(|source| CliError::Expr {
                place: format!("constraints[{i}]"),
                source,
            })?,
        );
    }
    let bounds = file.domain.bounds.iter().map(|b| (b[0], b[1])).collect();
    let domain = DomainSpec::new(bounds, constraints)?;
    let sys = SystemSpec::new(file.vars, a, gamma);
    Ok(Problem {
        sys,
        domain,
        params: file.params,
    })
}

fn effective_level(problem: &Problem, flags: &Flags) -> u32 {
    flags.level.or(problem.params.level).unwrap_or(DEFAULT_LEVEL)
}

fn effective_tol(problem: &Problem, flags: &Flags) -> f64 {
    flags.tol.or(problem.params.tol).unwrap_or(DEFAULT_TOL)
}

fn refine_params(problem: &Problem, h: f64) -> RefineParams {
    let mut rp = RefineParams::for_problem(h, problem.sys.dim(), problem.sys.unknowns());
    let p = &problem.params;
    if let Some(v) = p.eps_fit {
        rp.eps_fit = v;
    }
    if let Some(v) = p.shell_count {
        rp.shell_count = v;
    }
    if let Some(v) = p.shell_ratio {
        rp.shell_ratio = v;
    }
    if let Some(v) = p.max_iterations {
        rp.max_iterations = v;
    }
    rp
}

fn section_params(problem: &Problem, flags: &Flags) -> SectionParams {
    let mut sp = SectionParams::default();
    sp.theta = flags.theta.or(problem.params.theta);
    if let Some(p) = problem.params.p {
        sp.blend_power = Some(p);
    }
    sp
}

/// Outcome of a pipeline run, serialized on request.
#[derive(Debug, Serialize)]
pub struct RunResult {
    pub solvable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
    pub samples: usize,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub continuity: Option<ContinuityReport>,
}

/// Samples the domain, stabilizes the bundle, and reports solvability.
/// Returns the stable bundle so `solve` can keep going without resampling.
pub fn run_check(problem: &Problem, flags: &Flags) -> Result<(RunResult, Bundle), CliError> {
    let level = effective_level(problem, flags);
    let samples = Arc::new(sample_domain(&problem.domain, level)?);
    let rp = refine_params(problem, samples.h());
    let initial = initial_bundle(&problem.sys, samples, rp)?;
    let (bundle, iterations) = stabilize(initial)?;
    let witness = has_empty_fiber(&bundle).map(|i| bundle.samples().point(i).to_vec());
    let result = RunResult {
        solvable: witness.is_none(),
        witness,
        samples: bundle.len(),
        iterations,
        section: None,
        residual: None,
        continuity: None,
    };
    Ok((result, bundle))
}

/// Metadata written next to the section CSV.
#[derive(Serialize)]
struct SolveMeta<'a> {
    level: u32,
    h: f64,
    samples: usize,
    iterations: usize,
    refine: &'a RefineParams,
    section: &'a SectionParams,
    build: &'a BuildReport,
    residual: &'a ResidualReport,
    continuity: &'a ContinuityReport,
}

/// Checks solvability, builds a continuous section, and writes it as CSV
/// with a JSON metadata sidecar at `<out>.json`.
pub fn run_solve(problem: &Problem, flags: &Flags, out: &Path) -> Result<RunResult, CliError> {
    let (mut result, bundle) = run_check(problem, flags)?;
    if let Some(witness) = result.witness.take() {
        return Err(CliError::Unsolvable { witness });
    }
    let sp = section_params(problem, flags);
    let (section, build) = build_section(&bundle, &sp)?;
    let res = residual(&problem.sys, &section)?;
    let h = bundle.samples().h();
    let continuity = modulus_of_continuity(&section, &[16.0 * h, 8.0 * h, 4.0 * h]);

    write_section_csv(out, &bundle, &section, &res)?;
    let summary = ResidualReport {
        per_point: None,
        ..res.clone()
    };
    let meta = SolveMeta {
        level: effective_level(problem, flags),
        h,
        samples: bundle.len(),
        iterations: result.iterations,
        refine: bundle.params(),
        section: &sp,
        build: &build,
        residual: &summary,
        continuity: &continuity,
    };
    let mut meta_path = out.as_os_str().to_os_string();
    meta_path.push(".json");
    write_json(Path::new(&meta_path), &meta)?;

    result.section = Some(out.display().to_string());
    result.residual = Some(summary);
    result.continuity = Some(continuity);
    Ok(result)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.into(),
        source,
    })
}

fn fmt_float(v: f64) -> String {
    format!("{v:.12e}")
}

fn expected_header(n: usize, s: usize) -> String {
    let mut cols: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
    cols.extend((1..=s).map(|k| format!("phi{k}")));
    cols.push("residual".into());
    cols.push("fiber_dim".into());
    cols.join(",")
}

/// Writes the section as CSV: sample coordinates, section values, the
/// per-sample residual, and the stable fiber dimension. Fixed-precision
/// scientific notation keeps repeated runs byte-identical.
pub fn write_section_csv(
    path: &Path,
    bundle: &Bundle,
    section: &Section,
    res: &ResidualReport,
) -> Result<(), CliError> {
    let samples = bundle.samples();
    let n = samples.point(0).len();
    let s = section.value(0).len();
    let per_point = res
        .per_point
        .as_ref()
        .expect("residual report carries per-point values");
    let mut out = expected_header(n, s);
    out.push('\n');
    for i in 0..section.len() {
        let mut fields: Vec<String> = samples.point(i).iter().copied().map(fmt_float).collect();
        fields.extend(section.value(i).iter().copied().map(fmt_float));
        fields.push(fmt_float(per_point[i]));
        let dim = bundle.fiber(i).dim().expect("solvable bundle has no empty fiber");
        fields.push(dim.to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| CliError::Write {
        path: path.into(),
        source,
    })
}

/// A section read back from CSV, with the stored per-row residuals and
/// fiber dimensions.
pub struct StoredSection {
    pub section: Section,
    pub stored_residuals: Vec<f64>,
    pub fiber_dims: Vec<usize>,
}

/// Reads a section CSV against its problem. The sample pitch is recovered
/// as the smallest pairwise distance, which the continuity ladder scales.
pub fn read_section_csv(path: &Path, problem: &Problem) -> Result<StoredSection, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.into(),
        source,
    })?;
    let n = problem.sys.dim();
    let s = problem.sys.unknowns();
    let csv_err = |line: usize, msg: String| CliError::Csv {
        path: path.into(),
        line,
        msg,
    };

    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| csv_err(1, "empty file".into()))?;
    let expected = expected_header(n, s);
    if header != expected {
        return Err(CliError::Mismatch(format!(
            "expected header `{expected}`, found `{header}`"
        )));
    }

    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut values: Vec<DVector<f64>> = Vec::new();
    let mut stored_residuals = Vec::new();
    let mut fiber_dims = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n + s + 2 {
            return Err(csv_err(
                lineno,
                format!("expected {} fields, found {}", n + s + 2, fields.len()),
            ));
        }
        let num = |f: &str| -> Result<f64, CliError> {
            f.parse::<f64>()
                .map_err(|_| csv_err(lineno, format!("bad number `{f}`")))
        };
        let point: Vec<f64> = fields[..n].iter().map(|f| num(f)).collect::<Result<_, _>>()?;
        let value: Vec<f64> = fields[n..n + s]
            .iter()
            .map(|f| num(f))
            .collect::<Result<_, _>>()?;
        stored_residuals.push(num(fields[n + s])?);
        fiber_dims.push(
            fields[n + s + 1]
                .parse::<usize>()
                .map_err(|_| csv_err(lineno, format!("bad dimension `{}`", fields[n + s + 1])))?,
        );
        points.push(point);
        values.push(DVector::from_vec(value));
    }
    if points.is_empty() {
        return Err(csv_err(2, "no data rows".into()));
    }

    let h = match min_nn_distance(&points) {
        Some(d) if d > 0.0 => d,
        Some(_) => return Err(csv_err(2, "duplicate sample points".into())),
        None => 1.0,
    };
    let samples = Arc::new(SampleSet::from_points(
        problem.domain.clone(),
        0,
        h,
        points,
    )?);
    let p = problem.params.p.unwrap_or(problem.sys.dim() as u32 + 2);
    Ok(StoredSection {
        section: Section::new(samples, values, p),
        stored_residuals,
        fiber_dims,
    })
}

fn min_nn_distance(points: &[Vec<f64>]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d2: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let d = d2.sqrt();
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best
}

/// Report written by `verify`.
#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub tol: f64,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub worst_point: Vec<f64>,
    /// Largest disagreement between stored and recomputed residuals.
    pub residual_drift: f64,
    pub ladder_h: f64,
    pub continuity: ContinuityReport,
}

#[derive(Debug)]
pub struct VerifyOutcome {
    pub ok: bool,
    pub report: VerifyReport,
    /// Piecewise guard overlaps with conflicting branch values, one message
    /// per offending system entry.
    pub warnings: Vec<String>,
}

/// Recomputes every residual of a stored section from the problem file and
/// measures its modulus of continuity. `ok` means the recomputed maximum
/// residual is within tolerance.
pub fn run_verify(
    problem: &Problem,
    csv: &Path,
    flags: &Flags,
    out: Option<&Path>,
) -> Result<VerifyOutcome, CliError> {
    let stored = read_section_csv(csv, problem)?;
    let res = residual(&problem.sys, &stored.section)?;
    let per = res
        .per_point
        .as_ref()
        .expect("residual report carries per-point values");
    let residual_drift = per
        .iter()
        .zip(&stored.stored_residuals)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let h = stored.section.samples().h();
    let continuity = modulus_of_continuity(&stored.section, &[16.0 * h, 8.0 * h, 4.0 * h]);
    let warnings = overlap_warnings(&problem.sys, stored.section.samples());

    let tol = effective_tol(problem, flags);
    let report = VerifyReport {
        tol,
        max_residual: res.max_residual,
        mean_residual: res.mean_residual,
        worst_point: res.worst_point.clone(),
        residual_drift,
        ladder_h: h,
        continuity,
    };
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(VerifyOutcome {
        ok: res.max_residual <= tol,
        report,
        warnings,
    })
}

/// Scans every system entry over the sample set for piecewise guard
/// overlaps whose branches disagree beyond [`OVERLAP_WARN_TOL`].
pub fn overlap_warnings(sys: &SystemSpec, samples: &SampleSet) -> Vec<String> {
    let mut warnings = Vec::new();
    let mut scan = |place: String, f: &SemialgFn| {
        let mut worst = 0.0f64;
        let mut at = None;
        let mut count = 0usize;
        for i in 0..samples.len() {
            let x = samples.point(i);
            if let Some(gap) = piecewise_overlap_gap(f, x) {
                if gap > OVERLAP_WARN_TOL {
                    count += 1;
                    if gap > worst {
                        worst = gap;
                        at = Some(x.to_vec());
                    }
                }
            }
        }
        if let Some(at) = at {
            warnings.push(format!(
                "{place}: piecewise branches overlap with conflicting values at {count} sample(s); worst gap {worst:.3e} at {at:?}"
            ));
        }
    };
    for (i, row) in sys.a.iter().enumerate() {
        for (j, entry) in row.iter().enumerate() {
            scan(format!("A[{i}][{j}]"), entry);
        }
    }
    for (i, entry) in sys.gamma.iter().enumerate() {
        scan(format!("gamma[{i}]"), entry);
    }
    warnings
}

#[derive(Serialize)]
struct TraceLine<'a> {
    point: &'a [f64],
    iteration: usize,
    /// Fiber dimension; −1 encodes the empty fiber.
    dim: i64,
    /// `null` for empty fibers.
    base: Option<Vec<f64>>,
    /// Orthonormal direction vectors spanning the fiber; `null` when empty.
    basis: Option<Vec<Vec<f64>>>,
    /// `null` on iteration 0 and wherever a sweep left the fiber untouched.
    fit_error: Option<f64>,
}

fn dump_iteration(sink: &mut dyn io::Write, bundle: &Bundle, iteration: usize) -> io::Result<()> {
    for i in 0..bundle.len() {
        let fiber = bundle.fiber(i);
        let line = TraceLine {
            point: bundle.samples().point(i),
            iteration,
            dim: fiber.dim().map_or(-1, |d| d as i64),
            base: fiber.base().map(|b| b.iter().copied().collect()),
            basis: fiber.basis().map(|m| {
                m.column_iter()
                    .map(|c| c.iter().copied().collect())
                    .collect()
            }),
            fit_error: bundle.fit_errors()[i],
        };
        serde_json::to_writer(&mut *sink, &line).map_err(io::Error::other)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Runs the refinement iteration, dumping every fiber of every sweep
/// (including the initial bundle as iteration 0) as JSON lines. Returns the
/// number of sweeps until the bundle settled.
pub fn run_refine(
    problem: &Problem,
    flags: &Flags,
    sink: &mut dyn io::Write,
) -> Result<usize, CliError> {
    let level = effective_level(problem, flags);
    let samples = Arc::new(sample_domain(&problem.domain, level)?);
    let rp = refine_params(problem, samples.h());
    let mut bundle = initial_bundle(&problem.sys, samples, rp)?;
    let trace_err = |source: io::Error| CliError::Write {
        path: PathBuf::from("<trace sink>"),
        source,
    };
    dump_iteration(sink, &bundle, 0).map_err(trace_err)?;
    let max_iterations = bundle.params().max_iterations;
    let mut last_gap = f64::INFINITY;
    for iteration in 1..=max_iterations {
        let next = bundle.refine_once()?;
        dump_iteration(sink, &next, iteration).map_err(trace_err)?;
        last_gap = max_fiber_gap(&bundle, &next);
        bundle = next;
        if last_gap <= bundle.params().stabilize_gap {
            return Ok(iteration);
        }
    }
    Err(BundleError::NoStabilization {
        iterations: max_iterations,
        last_gap,
    }
    .into())
}
