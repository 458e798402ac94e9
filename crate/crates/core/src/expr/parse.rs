//! Hand-rolled lexer and recursive-descent parser for the expression
//! language. Two entry points: [`parse_semialg`] for the full grammar and
//! [`parse_polynomial`] for the polynomial subset used in guards and domain
//! constraints (no division, no function calls).

use thiserror::Error;

use super::{CmpOp, Guard, Node, Polynomial, SemialgFn};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {position}: expected {expected}")]
    Syntax { position: usize, expected: String },
    #[error("unknown variable `{name}`")]
    UnknownVariable { name: String },
    #[error("`{func}` takes {expected} argument(s), got {got}")]
    Arity {
        func: String,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Colon,
    Semi,
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

fn tok_name(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v:?}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Colon => "`:`".into(),
        Tok::Semi => "`;`".into(),
        Tok::Lt => "`<`".into(),
        Tok::Le => "`<=`".into(),
        Tok::Eq => "`=`".into(),
        Tok::Ge => "`>=`".into(),
        Tok::Gt => "`>`".into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b',' => {
                toks.push((Tok::Comma, i));
                i += 1;
            }
            b':' => {
                toks.push((Tok::Colon, i));
                i += 1;
            }
            b';' => {
                toks.push((Tok::Semi, i));
                i += 1;
            }
            b'<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push((Tok::Le, i));
                    i += 2;
                } else {
                    toks.push((Tok::Lt, i));
                    i += 1;
                }
            }
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push((Tok::Ge, i));
                    i += 2;
                } else {
                    toks.push((Tok::Gt, i));
                    i += 1;
                }
            }
            b'=' => {
                toks.push((Tok::Eq, i));
                i += 1;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    if i >= bytes.len() || !bytes[i].is_ascii_digit() {
                        return Err(ParseError::Syntax {
                            position: i,
                            expected: "digit after decimal point".into(),
                        });
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| ParseError::Syntax {
                    position: start,
                    expected: "numeric literal".into(),
                })?;
                toks.push((Tok::Num(v), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                return Err(ParseError::Syntax {
                    position: i,
                    expected: "token".into(),
                });
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [String],
    end: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &str, vars: &'a [String]) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: lex(text)?,
            pos: 0,
            vars,
            end: text.len(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, p)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            position: self.here(),
            expected: expected.to_string(),
        })
    }

    fn expect(&mut self, want: Tok, expected: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            _ => self.fail(expected),
        }
    }

    fn var_index(&self, name: &str) -> Result<usize, ParseError> {
        self.vars
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| ParseError::UnknownVariable {
                name: name.to_string(),
            })
    }

    // Full grammar: expr   -> term (('+'|'-') term)*
    //               term   -> factor (('*'|'/') factor)*
    //               factor -> '-' factor | atom ('^' uint)?

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Node::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Node::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Node::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Node::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Node, ParseError> {
        // Unary minus binds looser than `^`, so `-x^2` means `-(x^2)`.
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            let inner = self.factor()?;
            return Ok(Node::Sub(Box::new(Node::Const(0.0)), Box::new(inner)));
        }
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let k = self.exponent()?;
            return Ok(Node::IntPow(Box::new(base), k));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<u32, ParseError> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Num(v)) if v.fract() == 0.0 && v >= 0.0 && v <= u32::MAX as f64 => {
                Ok(v as u32)
            }
            _ => Err(ParseError::Syntax {
                position: pos,
                expected: "nonnegative integer exponent".into(),
            }),
        }
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    self.call(&name)
                } else {
                    Ok(Node::Var(self.var_index(&name)?))
                }
            }
            Some(t) => self.fail(&format!(
                "number, variable, function call, or `(` (found {})",
                tok_name(&t)
            )),
            None => self.fail("number, variable, function call, or `(`"),
        }
    }

    /// Parses a call body after the opening parenthesis has been consumed.
    fn call(&mut self, name: &str) -> Result<Node, ParseError> {
        match name {
            "piecewise" => self.piecewise(),
            "sqrt" | "abs" | "min" | "max" => {
                let mut args = vec![self.expr()?];
                while self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen, "`)`")?;
                let expected = if name == "sqrt" || name == "abs" { 1 } else { 2 };
                if args.len() != expected {
                    return Err(ParseError::Arity {
                        func: name.to_string(),
                        expected,
                        got: args.len(),
                    });
                }
                Ok(match name {
                    "sqrt" => Node::Sqrt(Box::new(args.remove(0))),
                    "abs" => Node::Abs(Box::new(args.remove(0))),
                    "min" => {
                        let b = args.pop().unwrap();
                        Node::Min(Box::new(args.pop().unwrap()), Box::new(b))
                    }
                    _ => {
                        let b = args.pop().unwrap();
                        Node::Max(Box::new(args.pop().unwrap()), Box::new(b))
                    }
                })
            }
            _ => self.fail("function name (sqrt, abs, min, max, piecewise)"),
        }
    }

    fn piecewise(&mut self) -> Result<Node, ParseError> {
        let mut branches = Vec::new();
        loop {
            let guard = self.guard()?;
            self.expect(Tok::Colon, "`:`")?;
            let body = self.expr()?;
            branches.push((guard, body));
            match self.bump() {
                Some(Tok::Comma) => continue,
                Some(Tok::RParen) => break,
                _ => return self.fail("`,` or `)`"),
            }
        }
        Ok(Node::Piecewise(branches))
    }

    fn guard(&mut self) -> Result<Guard, ParseError> {
        let mut clauses = vec![self.comparison()?];
        while self.peek() == Some(&Tok::Semi) {
            self.pos += 1;
            clauses.push(self.comparison()?);
        }
        Ok(Guard { clauses })
    }

    fn comparison(&mut self) -> Result<(Polynomial, CmpOp, Polynomial), ParseError> {
        let lhs = self.poly_expr()?;
        let op = match self.bump() {
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Eq) => CmpOp::Eq,
            Some(Tok::Ge) => CmpOp::Ge,
            Some(Tok::Gt) => CmpOp::Gt,
            _ => return self.fail("comparison operator"),
        };
        let rhs = self.poly_expr()?;
        Ok((lhs, op, rhs))
    }

    // Polynomial subset: no `/`, no function calls.

    fn poly_expr(&mut self) -> Result<Polynomial, ParseError> {
        let mut lhs = self.poly_term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    let rhs = self.poly_term()?;
                    lhs = lhs.add(&rhs);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    let rhs = self.poly_term()?;
                    lhs = lhs.sub(&rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn poly_term(&mut self) -> Result<Polynomial, ParseError> {
        let mut lhs = self.poly_factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    let rhs = self.poly_factor()?;
                    lhs = lhs.mul(&rhs);
                }
                Some(Tok::Slash) => {
                    return self.fail("`*`, `+`, `-`, or end of polynomial (no division here)");
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn poly_factor(&mut self) -> Result<Polynomial, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            let inner = self.poly_factor()?;
            return Ok(Polynomial::constant(self.vars, -1.0).mul(&inner));
        }
        let base = self.poly_atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let k = self.exponent()?;
            return Ok(base.powi(k));
        }
        Ok(base)
    }

    fn poly_atom(&mut self) -> Result<Polynomial, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Polynomial::constant(self.vars, v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.poly_expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    return self.fail("no function calls inside polynomials");
                }
                let idx = self.var_index(&name)?;
                Ok(Polynomial::var(self.vars, idx))
            }
            Some(t) => self.fail(&format!(
                "number, variable, or `(` (found {})",
                tok_name(&t)
            )),
            None => self.fail("number, variable, or `(`"),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            return Err(ParseError::Syntax {
                position: self.here(),
                expected: "end of input".into(),
            });
        }
        Ok(())
    }
}

/// Parses a full semialgebraic expression over the given variables.
pub fn parse_semialg(text: &str, vars: &[String]) -> Result<SemialgFn, ParseError> {
    let mut p = Parser::new(text, vars)?;
    let root = p.expr()?;
    p.finish()?;
    Ok(SemialgFn::new(vars.to_vec(), root))
}

/// Parses the polynomial subset (used for guards and domain constraints).
pub fn parse_polynomial(text: &str, vars: &[String]) -> Result<Polynomial, ParseError> {
    let mut p = Parser::new(text, vars)?;
    let poly = p.poly_expr()?;
    p.finish()?;
    Ok(poly)
}

/// Parses a single polynomial comparison such as `x^2 + y^2 <= 1`.
pub fn parse_constraint(
    text: &str,
    vars: &[String],
) -> Result<(Polynomial, CmpOp, Polynomial), ParseError> {
    let mut p = Parser::new(text, vars)?;
    let cmp = p.comparison()?;
    p.finish()?;
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::EvalError;

    fn vars2() -> Vec<String> {
        vec!["x".to_string(), "y".to_string()]
    }

    #[test]
    fn parses_arithmetic_with_precedence() {
        let vars = vars2();
        let f = parse_semialg("1 + x*y^2 - x/2", &vars).unwrap();
        let v = f.eval(&[3.0, 2.0]).unwrap();
        assert!((v - (1.0 + 3.0 * 4.0 - 1.5)).abs() < 1e-15);
    }

    #[test]
    fn left_associativity_of_subtraction() {
        let vars = vec!["x".to_string()];
        let f = parse_semialg("x - 1 - 2", &vars).unwrap();
        assert_eq!(f.eval(&[10.0]).unwrap(), 7.0);
    }

    #[test]
    fn parses_functions_and_nesting() {
        let vars = vars2();
        let f = parse_semialg("sqrt(x^2 + y^2) + min(x, abs(y))", &vars).unwrap();
        let v = f.eval(&[3.0, -4.0]).unwrap();
        assert!((v - (5.0 + 3.0)).abs() < 1e-15);
    }

    #[test]
    fn parses_piecewise_with_conjunctive_guard() {
        let vars = vars2();
        let f = parse_semialg(
            "piecewise(x >= 0; y >= 0: x + y, x < 0: 0 - x, y < 0: 42)",
            &vars,
        )
        .unwrap();
        assert_eq!(f.eval(&[1.0, 2.0]).unwrap(), 3.0);
        assert_eq!(f.eval(&[-1.0, 5.0]).unwrap(), 1.0);
        assert_eq!(f.eval(&[1.0, -5.0]).unwrap(), 42.0);
    }

    #[test]
    fn parses_standalone_constraints() {
        let vars = vars2();
        let (lhs, op, rhs) = parse_constraint("x^2 + y^2 <= 1", &vars).unwrap();
        assert_eq!(op, CmpOp::Le);
        assert_eq!(lhs.eval(&[0.6, 0.8]), 1.0);
        assert_eq!(rhs.eval(&[0.6, 0.8]), 1.0);
        assert!(parse_constraint("x + y", &vars).is_err());
        assert!(parse_constraint("x < y < 1", &vars).is_err());
    }

    #[test]
    fn no_branch_is_an_eval_error_not_a_parse_error() {
        let vars = vec!["x".to_string()];
        let f = parse_semialg("piecewise(x > 0: 1)", &vars).unwrap();
        match f.eval(&[-1.0]) {
            Err(EvalError::NoBranchApplies { at }) => assert_eq!(at, vec![-1.0]),
            other => panic!("expected no-branch error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_variable_is_reported_by_name() {
        let vars = vars2();
        match parse_semialg("x + z", &vars) {
            Err(ParseError::UnknownVariable { name }) => assert_eq!(name, "z"),
            other => panic!("expected unknown variable, got {other:?}"),
        }
    }

    #[test]
    fn arity_errors() {
        let vars = vars2();
        match parse_semialg("sqrt(x, y)", &vars) {
            Err(ParseError::Arity {
                func,
                expected,
                got,
            }) => {
                assert_eq!(func, "sqrt");
                assert_eq!(expected, 1);
                assert_eq!(got, 2);
            }
            other => panic!("expected arity error, got {other:?}"),
        }
        assert!(parse_semialg("min(x)", &vars).is_err());
    }

    #[test]
    fn unary_minus() {
        let vars = vars2();
        let f = parse_semialg("-x", &vars).unwrap();
        assert_eq!(f.eval(&[2.5, 0.0]).unwrap(), -2.5);
        // binds looser than `^`: `-x^2` is `-(x^2)`, not `(-x)^2`
        let g = parse_semialg("-x^2", &vars).unwrap();
        assert_eq!(g.eval(&[3.0, 0.0]).unwrap(), -9.0);
        let h = parse_semialg("2 * -x + -(y - 1)", &vars).unwrap();
        assert_eq!(h.eval(&[1.5, 4.0]).unwrap(), -6.0);
        // the explicit subtraction spelling keeps working
        let k = parse_semialg("0 - x", &vars).unwrap();
        assert_eq!(k.eval(&[2.5, 0.0]).unwrap(), -2.5);
        let p = parse_polynomial("-2*x + y", &vars).unwrap();
        assert_eq!(p.eval(&[1.0, 5.0]), 3.0);
    }

    #[test]
    fn fractional_exponent_rejected() {
        let vars = vars2();
        assert!(matches!(
            parse_semialg("x^1.5", &vars),
            Err(ParseError::Syntax { .. })
        ));
        assert!(parse_semialg("x^0", &vars).is_ok());
    }

    #[test]
    fn scientific_notation_literals() {
        let vars = vec!["x".to_string()];
        let f = parse_semialg("1.5e-3 + x*1E2", &vars).unwrap();
        assert!((f.eval(&[2.0]).unwrap() - 200.0015).abs() < 1e-12);
    }

    #[test]
    fn trailing_garbage_rejected() {
        let vars = vars2();
        assert!(matches!(
            parse_semialg("x + y)", &vars),
            Err(ParseError::Syntax { .. })
        ));
    }

    #[test]
    fn polynomial_subset_rejects_division_and_calls() {
        let vars = vars2();
        assert!(matches!(
            parse_polynomial("x/2", &vars),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_polynomial("sqrt(x)", &vars),
            Err(ParseError::Syntax { .. })
        ));
        let p = parse_polynomial("(x + y)^2 - x*y", &vars).unwrap();
        assert_eq!(p.eval(&[2.0, 3.0]), 25.0 - 6.0);
    }

    #[test]
    fn polynomial_expansion_is_normalized() {
        let vars = vars2();
        let p = parse_polynomial("(x + y)^2", &vars).unwrap();
        let q = parse_polynomial("x^2 + 2*x*y + y^2", &vars).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn printed_expressions_reparse_to_equal_values() {
        let vars = vars2();
        let texts = [
            "x*y + 2",
            "sqrt(x^2 + y^2)",
            "piecewise(x >= y: x - y, x < y: y - x)",
            "abs(x)/(1 + y^2)",
            "max(min(x, y), 0 - 1)",
            "(x + 1)*(y - 2)",
        ];
        for text in texts {
            let f = parse_semialg(text, &vars).unwrap();
            let printed = f.to_string();
            let g = parse_semialg(&printed, &vars)
                .unwrap_or_else(|e| panic!("reprint of `{text}` as `{printed}` failed: {e}"));
            for &pt in &[[0.3, 0.7], [-1.1, 2.2], [0.0, 0.0], [5.0, -3.0]] {
                let a = f.eval(&pt);
                let b = g.eval(&pt);
                assert_eq!(a, b, "mismatch for `{text}` at {pt:?}");
            }
        }
    }
}
