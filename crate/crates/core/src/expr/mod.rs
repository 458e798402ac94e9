//! Expression trees for semialgebraic functions, plus the restricted
//! polynomial form used in guards and domain constraints.
//!
//! Functions are trees over `+ - * / ^ sqrt abs min max piecewise` with
//! numeric leaves and named variables. Guards are conjunctions of polynomial
//! comparisons and are resolved at evaluation time: the first branch whose
//! guard holds wins. All comparisons are exact floating-point comparisons.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

mod parse;

pub use parse::{parse_constraint, parse_polynomial, parse_semialg, ParseError};

/// Comparison operator allowed inside guards and domain constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Gt => lhs > rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

/// One monomial: coefficient times the product of variables raised to `exps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub exps: Vec<u32>,
}

/// Multivariate polynomial in normalized form: terms sorted by graded
/// lexicographic order (highest first), duplicate exponent vectors merged,
/// exact-zero coefficients dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    vars: Vec<String>,
    terms: Vec<Term>,
}

fn grlex_cmp(a: &[u32], b: &[u32]) -> std::cmp::Ordering {
    let da: u64 = a.iter().map(|&e| e as u64).sum();
    let db: u64 = b.iter().map(|&e| e as u64).sum();
    da.cmp(&db).then_with(|| a.cmp(b))
}

impl Polynomial {
    /// The zero polynomial.
    pub fn zero(vars: &[String]) -> Self {
        Polynomial {
            vars: vars.to_vec(),
            terms: Vec::new(),
        }
    }

    pub fn constant(vars: &[String], c: f64) -> Self {
        Polynomial::from_terms(
            vars.to_vec(),
            vec![Term {
                coeff: c,
                exps: vec![0; vars.len()],
            }],
        )
    }

    pub fn var(vars: &[String], index: usize) -> Self {
        let mut exps = vec![0; vars.len()];
        exps[index] = 1;
        Polynomial::from_terms(vars.to_vec(), vec![Term { coeff: 1.0, exps }])
    }

    /// Builds the normalized form from an arbitrary term list.
    pub fn from_terms(vars: Vec<String>, terms: Vec<Term>) -> Self {
        let mut merged: Vec<Term> = Vec::new();
        for t in terms {
            debug_assert_eq!(t.exps.len(), vars.len());
            match merged.iter_mut().find(|m| m.exps == t.exps) {
                Some(m) => m.coeff += t.coeff,
                None => merged.push(t),
            }
        }
        merged.retain(|t| t.coeff != 0.0);
        merged.sort_by(|a, b| grlex_cmp(&b.exps, &a.exps));
        Polynomial {
            vars,
            terms: merged,
        }
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Polynomial::from_terms(self.vars.clone(), terms)
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().map(|t| Term {
            coeff: -t.coeff,
            exps: t.exps.clone(),
        }));
        Polynomial::from_terms(self.vars.clone(), terms)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let exps = a
                    .exps
                    .iter()
                    .zip(&b.exps)
                    .map(|(&x, &y)| x + y)
                    .collect();
                terms.push(Term {
                    coeff: a.coeff * b.coeff,
                    exps,
                });
            }
        }
        Polynomial::from_terms(self.vars.clone(), terms)
    }

    pub fn powi(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::constant(&self.vars, 1.0);
        for _ in 0..k {
            acc = acc.mul(self);
        }
        acc
    }

    /// Evaluates by summing coefficient times monomial per term.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.vars.len());
        let mut sum = 0.0;
        for t in &self.terms {
            let mut m = t.coeff;
            for (xi, &e) in x.iter().zip(&t.exps) {
                if e > 0 {
                    m *= xi.powi(e as i32);
                }
            }
            sum += m;
        }
        sum
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let body = |t: &Term| -> String {
            let mag = t.coeff.abs();
            let mut parts: Vec<String> = Vec::new();
            if mag != 1.0 || t.exps.iter().all(|&e| e == 0) {
                parts.push(fmt_f64(mag));
            }
            for (name, &e) in self.vars.iter().zip(&t.exps) {
                match e {
                    0 => {}
                    1 => parts.push(name.clone()),
                    _ => parts.push(format!("{name}^{e}")),
                }
            }
            parts.join("*")
        };
        let first = &self.terms[0];
        if first.coeff < 0.0 {
            write!(f, "-{}", body(first))?;
        } else {
            write!(f, "{}", body(first))?;
        }
        for t in &self.terms[1..] {
            let sep = if t.coeff < 0.0 { " - " } else { " + " };
            write!(f, "{sep}{}", body(t))?;
        }
        Ok(())
    }
}

/// Conjunction of polynomial comparisons; all clauses must hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    pub clauses: Vec<(Polynomial, CmpOp, Polynomial)>,
}

impl Guard {
    pub fn holds(&self, x: &[f64]) -> bool {
        self.clauses
            .iter()
            .all(|(l, op, r)| op.holds(l.eval(x), r.eval(x)))
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (l, op, r) in &self.clauses {
            if !first {
                write!(f, "; ")?;
            }
            first = false;
            write!(f, "{l} {} {r}", op.symbol())?;
        }
        Ok(())
    }
}

/// Expression tree node. Variables are indices into the owning function's
/// variable list.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    IntPow(Box<Node>, u32),
    Sqrt(Box<Node>),
    Abs(Box<Node>),
    Min(Box<Node>, Box<Node>),
    Max(Box<Node>, Box<Node>),
    Piecewise(Vec<(Guard, Node)>),
}

/// Scalar semialgebraic function of `n` named variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SemialgFn {
    vars: Vec<String>,
    root: Node,
}

/// Evaluation failure, tagged with the offending point.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("point has {got} coordinates, function takes {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error("division by zero at {at:?}")]
    DivisionByZero { at: Vec<f64> },
    #[error("square root of negative value at {at:?}")]
    SqrtOfNegative { at: Vec<f64> },
    #[error("no piecewise branch applies at {at:?}")]
    NoBranchApplies { at: Vec<f64> },
}

impl SemialgFn {
    pub fn new(vars: Vec<String>, root: Node) -> Self {
        SemialgFn { vars, root }
    }

    pub fn constant(vars: &[String], c: f64) -> Self {
        SemialgFn::new(vars.to_vec(), Node::Const(c))
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        if x.len() != self.vars.len() {
            return Err(EvalError::PointDimension {
                expected: self.vars.len(),
                got: x.len(),
            });
        }
        eval_node(&self.root, x)
    }
}

fn eval_node(node: &Node, x: &[f64]) -> Result<f64, EvalError> {
    Ok(match node {
        Node::Const(c) => *c,
        Node::Var(i) => x[*i],
        Node::Add(a, b) => eval_node(a, x)? + eval_node(b, x)?,
        Node::Sub(a, b) => eval_node(a, x)? - eval_node(b, x)?,
        Node::Mul(a, b) => eval_node(a, x)? * eval_node(b, x)?,
        Node::Div(a, b) => {
            let num = eval_node(a, x)?;
            let den = eval_node(b, x)?;
            if den == 0.0 {
                return Err(EvalError::DivisionByZero { at: x.to_vec() });
            }
            num / den
        }
        Node::IntPow(a, k) => eval_node(a, x)?.powi(*k as i32),
        Node::Sqrt(a) => {
            let v = eval_node(a, x)?;
            if v < 0.0 {
                return Err(EvalError::SqrtOfNegative { at: x.to_vec() });
            }
            v.sqrt()
        }
        Node::Abs(a) => eval_node(a, x)?.abs(),
        Node::Min(a, b) => eval_node(a, x)?.min(eval_node(b, x)?),
        Node::Max(a, b) => eval_node(a, x)?.max(eval_node(b, x)?),
        Node::Piecewise(branches) => {
            for (guard, body) in branches {
                if guard.holds(x) {
                    return eval_node(body, x);
                }
            }
            return Err(EvalError::NoBranchApplies { at: x.to_vec() });
        }
    })
}

/// Largest disagreement between branch values of any piecewise node whose
/// guards overlap at `x`. `None` when no overlap is observable there.
/// Branches that fail to evaluate are skipped; overlap of such branches is
/// not reported.
pub fn piecewise_overlap_gap(f: &SemialgFn, x: &[f64]) -> Option<f64> {
    fn walk(node: &Node, x: &[f64], worst: &mut Option<f64>) {
        match node {
            Node::Const(_) | Node::Var(_) => {}
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Min(a, b)
            | Node::Max(a, b) => {
                walk(a, x, worst);
                walk(b, x, worst);
            }
            Node::IntPow(a, _) | Node::Sqrt(a) | Node::Abs(a) => walk(a, x, worst),
            Node::Piecewise(branches) => {
                let mut live: Vec<f64> = Vec::new();
                for (guard, body) in branches {
                    if guard.holds(x) {
                        if let Ok(v) = eval_node(body, x) {
                            live.push(v);
                        }
                        walk(body, x, worst);
                    }
                }
                for i in 0..live.len() {
                    for j in i + 1..live.len() {
                        let d = (live[i] - live[j]).abs();
                        if worst.map_or(true, |w| d > w) {
                            *worst = Some(d);
                        }
                    }
                }
            }
        }
    }
    let mut worst = None;
    walk(&f.root, x, &mut worst);
    worst
}

fn prec(node: &Node) -> u8 {
    match node {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::IntPow(..) => 3,
        // Unary minus binds at factor level, so a negative literal needs
        // parentheses only as a power base.
        Node::Const(c) if *c < 0.0 => 3,
        _ => 4,
    }
}

fn fmt_node(node: &Node, vars: &[String], min_prec: u8, out: &mut String) {
    let p = prec(node);
    let need = p < min_prec;
    if need {
        out.push('(');
    }
    match node {
        Node::Const(c) => {
            if *c < 0.0 {
                out.push('-');
                out.push_str(&fmt_f64(c.abs()));
            } else {
                out.push_str(&fmt_f64(*c));
            }
        }
        Node::Var(i) => out.push_str(&vars[*i]),
        Node::Add(a, b) => {
            fmt_node(a, vars, 1, out);
            out.push_str(" + ");
            fmt_node(b, vars, 2, out);
        }
        Node::Sub(a, b) => {
            fmt_node(a, vars, 1, out);
            out.push_str(" - ");
            fmt_node(b, vars, 2, out);
        }
        Node::Mul(a, b) => {
            fmt_node(a, vars, 2, out);
            out.push_str("*");
            fmt_node(b, vars, 3, out);
        }
        Node::Div(a, b) => {
            fmt_node(a, vars, 2, out);
            out.push_str("/");
            fmt_node(b, vars, 3, out);
        }
        Node::IntPow(a, k) => {
            fmt_node(a, vars, 4, out);
            out.push_str(&format!("^{k}"));
        }
        Node::Sqrt(a) => {
            out.push_str("sqrt(");
            fmt_node(a, vars, 1, out);
            out.push(')');
        }
        Node::Abs(a) => {
            out.push_str("abs(");
            fmt_node(a, vars, 1, out);
            out.push(')');
        }
        Node::Min(a, b) => {
            out.push_str("min(");
            fmt_node(a, vars, 1, out);
            out.push_str(", ");
            fmt_node(b, vars, 1, out);
            out.push(')');
        }
        Node::Max(a, b) => {
            out.push_str("max(");
            fmt_node(a, vars, 1, out);
            out.push_str(", ");
            fmt_node(b, vars, 1, out);
            out.push(')');
        }
        Node::Piecewise(branches) => {
            out.push_str("piecewise(");
            let mut first = true;
            for (guard, body) in branches {
                if !first {
                    out.push_str(", ");
                }
                first = false;
                out.push_str(&guard.to_string());
                out.push_str(": ");
                fmt_node(body, vars, 1, out);
            }
            out.push(')');
        }
    }
    if need {
        out.push(')');
    }
}

impl fmt::Display for SemialgFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        fmt_node(&self.root, &self.vars, 0, &mut s);
        write!(f, "{s}")
    }
}

/// Evaluation failure tagged with the system entry where it occurred.
/// `col` is `None` for right-hand-side entries.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("system entry (row {row}, col {col:?}): {source}")]
pub struct SystemEvalError {
    pub row: usize,
    pub col: Option<usize>,
    pub source: EvalError,
}

/// The linear system `A(x) φ(x) = γ(x)`: an `r × s` matrix of semialgebraic
/// entries and an `r`-vector right-hand side over shared variables.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub vars: Vec<String>,
    pub a: Vec<Vec<SemialgFn>>,
    pub gamma: Vec<SemialgFn>,
}

impl SystemSpec {
    pub fn new(vars: Vec<String>, a: Vec<Vec<SemialgFn>>, gamma: Vec<SemialgFn>) -> Self {
        assert_eq!(a.len(), gamma.len(), "row count mismatch");
        assert!(!a.is_empty(), "system needs at least one row");
        let s = a[0].len();
        assert!(a.iter().all(|row| row.len() == s), "ragged matrix");
        SystemSpec { vars, a, gamma }
    }

    /// Number of equations.
    pub fn rows(&self) -> usize {
        self.a.len()
    }

    /// Number of unknowns.
    pub fn unknowns(&self) -> usize {
        self.a[0].len()
    }

    /// Domain dimension.
    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    /// Evaluates coefficients and right-hand side at a point.
    pub fn eval_system(&self, x: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>), SystemEvalError> {
        let r = self.rows();
        let s = self.unknowns();
        let mut m = DMatrix::zeros(r, s);
        for (i, row) in self.a.iter().enumerate() {
            for (j, entry) in row.iter().enumerate() {
                m[(i, j)] = entry.eval(x).map_err(|source| SystemEvalError {
                    row: i,
                    col: Some(j),
                    source,
                })?;
            }
        }
        let mut g = DVector::zeros(r);
        for (i, entry) in self.gamma.iter().enumerate() {
            g[i] = entry.eval(x).map_err(|source| SystemEvalError {
                row: i,
                col: None,
                source,
            })?;
        }
        Ok((m, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars2() -> Vec<String> {
        vec!["x".to_string(), "y".to_string()]
    }

    #[test]
    fn polynomial_normalization_merges_and_sorts() {
        let vars = vars2();
        let p = Polynomial::from_terms(
            vars.clone(),
            vec![
                Term {
                    coeff: -3.0,
                    exps: vec![0, 0],
                },
                Term {
                    coeff: 1.0,
                    exps: vec![2, 0],
                },
                Term {
                    coeff: 2.0,
                    exps: vec![1, 1],
                },
                Term {
                    coeff: 1.0,
                    exps: vec![1, 1],
                },
                Term {
                    coeff: -1.0,
                    exps: vec![1, 1],
                },
            ],
        );
        assert_eq!(p.terms().len(), 3);
        assert_eq!(p.terms()[0].exps, vec![2, 0]);
        assert_eq!(p.terms()[1].exps, vec![1, 1]);
        assert_eq!(p.terms()[1].coeff, 2.0);
        assert_eq!(p.terms()[2].exps, vec![0, 0]);
    }

    #[test]
    fn cancellation_yields_zero_polynomial() {
        let vars = vars2();
        let x = Polynomial::var(&vars, 0);
        let diff = x.sub(&x);
        assert!(diff.is_zero());
        assert_eq!(diff.eval(&[3.7, -1.2]), 0.0);
    }

    #[test]
    fn polynomial_display_round_trips() {
        let vars = vars2();
        let p = Polynomial::from_terms(
            vars.clone(),
            vec![
                Term {
                    coeff: 1.0,
                    exps: vec![2, 0],
                },
                Term {
                    coeff: 2.0,
                    exps: vec![1, 1],
                },
                Term {
                    coeff: -3.0,
                    exps: vec![0, 0],
                },
            ],
        );
        let printed = p.to_string();
        let q = parse_polynomial(&printed, &vars).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn eval_piecewise_first_match_wins() {
        let vars = vec!["x".to_string()];
        let x = Polynomial::var(&vars, 0);
        let zero = Polynomial::zero(&vars);
        let f = SemialgFn::new(
            vars.clone(),
            Node::Piecewise(vec![
                (
                    Guard {
                        clauses: vec![(x.clone(), CmpOp::Le, zero.clone())],
                    },
                    Node::Const(0.0),
                ),
                (
                    Guard {
                        clauses: vec![(x.clone(), CmpOp::Gt, zero.clone())],
                    },
                    Node::Var(0),
                ),
            ]),
        );
        assert_eq!(f.eval(&[-2.0]).unwrap(), 0.0);
        assert_eq!(f.eval(&[3.0]).unwrap(), 3.0);
        assert_eq!(f.eval(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn eval_errors_carry_the_point() {
        let vars = vec!["x".to_string()];
        let div = SemialgFn::new(vars.clone(), Node::Div(Box::new(Node::Const(1.0)), Box::new(Node::Var(0))));
        match div.eval(&[0.0]) {
            Err(EvalError::DivisionByZero { at }) => assert_eq!(at, vec![0.0]),
            other => panic!("expected division error, got {other:?}"),
        }
        let sqrt = SemialgFn::new(vars.clone(), Node::Sqrt(Box::new(Node::Var(0))));
        match sqrt.eval(&[-1.0]) {
            Err(EvalError::SqrtOfNegative { at }) => assert_eq!(at, vec![-1.0]),
            other => panic!("expected sqrt error, got {other:?}"),
        }
    }

    #[test]
    fn eval_system_tags_failing_entry() {
        let vars = vec!["x".to_string()];
        let ok = SemialgFn::new(vars.clone(), Node::Var(0));
        let bad = SemialgFn::new(
            vars.clone(),
            Node::Div(Box::new(Node::Const(1.0)), Box::new(Node::Var(0))),
        );
        let sys = SystemSpec::new(vars.clone(), vec![vec![ok.clone(), bad]], vec![ok]);
        let err = sys.eval_system(&[0.0]).unwrap_err();
        assert_eq!(err.row, 0);
        assert_eq!(err.col, Some(1));
    }

    #[test]
    fn overlap_gap_reports_conflicting_branches() {
        let vars = vec!["x".to_string()];
        let x = Polynomial::var(&vars, 0);
        let zero = Polynomial::zero(&vars);
        let f = SemialgFn::new(
            vars.clone(),
            Node::Piecewise(vec![
                (
                    Guard {
                        clauses: vec![(x.clone(), CmpOp::Ge, zero.clone())],
                    },
                    Node::Const(1.0),
                ),
                (
                    Guard {
                        clauses: vec![(x.clone(), CmpOp::Le, zero.clone())],
                    },
                    Node::Const(2.0),
                ),
            ]),
        );
        let gap = piecewise_overlap_gap(&f, &[0.0]).unwrap();
        assert!((gap - 1.0).abs() < 1e-15);
        assert!(piecewise_overlap_gap(&f, &[1.0]).is_none());
    }
}
