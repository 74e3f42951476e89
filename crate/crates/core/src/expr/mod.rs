//! Expression trees, the system description language, and automatic
//! differentiation.

mod dual;
mod lexer;
mod parser;
mod system;
mod tape;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

pub use dual::{Dual, Real};
pub use parser::parse_expr;
pub use system::{momentum_name, parse_system, SystemSpec, VakonomicBlock};
pub use tape::CompiledExpr;

/// Named parameter values bound at evaluation time.
pub type Bindings = BTreeMap<String, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn prec(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// Scalar expression over named variables.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Neg(Box<Expr>),
    Func(Func, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// Power with a constant integer exponent.
    Pow(Box<Expr>, i32),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// Negation that folds constants and double negatives.
    pub fn negated(self) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(a) => *a,
            e => Expr::Neg(Box::new(e)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(a) | Expr::Func(_, a) | Expr::Pow(a, _) => a.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Replaces variables by expressions.
    pub fn substitute(&self, map: &HashMap<String, Expr>) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => map.get(v).cloned().unwrap_or_else(|| self.clone()),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(map))),
            Expr::Func(f, a) => Expr::Func(*f, Box::new(a.substitute(map))),
            Expr::Pow(a, n) => Expr::Pow(Box::new(a.substitute(map)), *n),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.substitute(map), b.substitute(map)),
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Const(c) if c.is_sign_negative() => 0,
            Expr::Bin(op, _, _) => op.prec(),
            Expr::Neg(_) => 3,
            Expr::Pow(_, _) => 4,
            _ => 5,
        }
    }

    fn write_wrapped(&self, f: &mut fmt::Formatter<'_>, wrap: bool) -> fmt::Result {
        if wrap {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if c.is_sign_negative() => write!(f, "({c:?})"),
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Func(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.write_wrapped(f, matches!(**a, Expr::Const(_)) || a.prec() < 3)
            }
            Expr::Pow(a, n) => {
                a.write_wrapped(f, a.prec() < 5)?;
                if *n < 0 {
                    write!(f, "^({n})")
                } else {
                    write!(f, "^{n}")
                }
            }
            Expr::Bin(op, a, b) => {
                a.write_wrapped(f, a.prec() < op.prec())?;
                write!(f, " {} ", op.symbol())?;
                b.write_wrapped(f, b.prec() <= op.prec())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("undeclared identifier '{name}' at line {line}, column {col}")]
    Undeclared { name: String, line: usize, col: usize },
    #[error("dimension mismatch at line {line}: {msg}")]
    DimensionMismatch { line: usize, msg: String },
    #[error("duplicate index '{name}' at line {line}: {msg}")]
    Duplicate { name: String, line: usize, msg: String },
}

impl ParseError {
    pub(crate) fn syntax(line: usize, col: usize, msg: impl Into<String>) -> Self {
        ParseError::Syntax { line, col, msg: msg.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable '{0}'")]
    UnboundVariable(String),
    #[error("domain error in {op} at node {path}: argument {value}")]
    Domain { op: &'static str, path: String, value: f64 },
}

fn compile_with(expr: &Expr, wrt: &[String], bindings: &Bindings) -> Result<(CompiledExpr, Vec<f64>), EvalError> {
    let mut names: Vec<String> = wrt.to_vec();
    for v in expr.variables() {
        if !names.contains(&v) {
            names.push(v);
        }
    }
    let mut values = Vec::with_capacity(names.len());
    for n in &names {
        let v = bindings.get(n).ok_or_else(|| EvalError::UnboundVariable(n.clone()))?;
        values.push(*v);
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Ok((CompiledExpr::compile(expr, &refs)?, values))
}

/// Evaluates `expr` with every variable taken from `bindings`.
pub fn eval(expr: &Expr, bindings: &Bindings) -> Result<f64, EvalError> {
    let (c, vals) = compile_with(expr, &[], bindings)?;
    c.eval(&vals)
}

/// Gradient with respect to the variables `wrt`.
pub fn grad(expr: &Expr, wrt: &[String], bindings: &Bindings) -> Result<Vec<f64>, EvalError> {
    let (c, vals) = compile_with(expr, wrt, bindings)?;
    let idx: Vec<usize> = (0..wrt.len()).collect();
    Ok(c.gradient(&vals, &idx)?.1)
}

/// Hessian with respect to the variables `wrt`; exactly symmetric.
pub fn hessian(expr: &Expr, wrt: &[String], bindings: &Bindings) -> Result<DMatrix<f64>, EvalError> {
    let (c, vals) = compile_with(expr, wrt, bindings)?;
    let idx: Vec<usize> = (0..wrt.len()).collect();
    Ok(c.hessian(&vals, &idx)?.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(pairs: &[(&str, f64)]) -> Bindings {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn power_derivative_is_exact() {
        for k in 1..=10 {
            let e = parse_expr(&format!("x^{k}")).unwrap();
            let g = grad(&e, &["x".into()], &b(&[("x", 2.0)])).unwrap();
            assert_eq!(g[0], k as f64 * 2f64.powi(k - 1), "k = {k}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let e = parse_expr("sin(x) * exp(y) / sqrt(1 + x^2) - ln(2 + y^2) * cos(x*y)").unwrap();
        let (x, y) = (0.7, -0.3);
        let g = grad(&e, &["x".into(), "y".into()], &b(&[("x", x), ("y", y)])).unwrap();
        let h = 1e-6;
        let f = |x: f64, y: f64| eval(&e, &b(&[("x", x), ("y", y)])).unwrap();
        let gx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let gy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        assert!(((g[0] - gx) / gx).abs() < 1e-6);
        assert!(((g[1] - gy) / gy).abs() < 1e-6);
    }

    #[test]
    fn hessian_is_symmetric() {
        let e = parse_expr("x^3*y + sin(x*y*z) + exp(z)*y^2").unwrap();
        let w: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let h = hessian(&e, &w, &b(&[("x", 0.3), ("y", 1.1), ("z", -0.4)])).unwrap();
        assert_eq!(h, h.transpose());
        // d2/dx2 of x^3 y = 6xy plus the sin term
        let s: f64 = 0.3 * 1.1 * -0.4;
        let expect = 6.0 * 0.3 * 1.1 - (1.1f64 * -0.4).powi(2) * s.sin();
        assert!((h[(0, 0)] - expect).abs() < 1e-12);
    }

    #[test]
    fn domain_error_carries_path() {
        let e = parse_expr("1 + ln(x - 1)").unwrap();
        match eval(&e, &b(&[("x", 0.5)])) {
            Err(EvalError::Domain { op, path, .. }) => {
                assert_eq!(op, "ln");
                assert_eq!(path, "root.1");
            }
            other => panic!("{other:?}"),
        }
        let e = parse_expr("x / (y - y)").unwrap();
        assert!(matches!(eval(&e, &b(&[("x", 1.0), ("y", 2.0)])), Err(EvalError::Domain { op: "/", .. })));
    }

    #[test]
    fn unbound_variable() {
        let e = parse_expr("a + b").unwrap();
        assert_eq!(eval(&e, &b(&[("a", 1.0)])), Err(EvalError::UnboundVariable("b".into())));
    }

    #[test]
    fn display_round_trips() {
        for s in [
            "-x^2",
            "(-x)^2",
            "a - (b - c)",
            "a - -b",
            "-(a * b) / c",
            "x^(-3) * (-2.5)",
            "-2^2",
            "sin(-x) + cos(x)^2",
            "1e-7 * x + 3e20",
            "(x^2)^3",
        ] {
            let e = parse_expr(s).unwrap();
            let again = parse_expr(&e.to_string()).unwrap();
            assert_eq!(e, again, "{s} printed as {e}");
        }
    }

    #[test]
    fn negative_literals_fold() {
        assert_eq!(parse_expr("-2").unwrap(), Expr::Const(-2.0));
        assert_eq!(eval(&parse_expr("-2^2").unwrap(), &Bindings::new()).unwrap(), -4.0);
    }
}
