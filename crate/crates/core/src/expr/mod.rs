//! Infix scalar expressions over `x1..xn` with exact derivatives by forward-mode AD.

pub mod ad;
mod parse;

use nalgebra::{DMatrix, DVector};
use std::fmt;
use thiserror::Error;

pub use ad::{Dual, Jet2, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function '{name}' at byte {offset} takes {expected} argument(s), got {found}")]
    Arity { name: String, expected: usize, found: usize, offset: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error: {op} at {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("expected {expected} coordinates, got {found}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tan,
}

impl UnaryOp {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => UnaryOp::Exp,
            "log" | "ln" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

impl Node {
    /// Value of a variable-free subtree, if it evaluates cleanly.
    fn constant_value(&self) -> Option<f64> {
        match self {
            Node::Const(v) => Some(*v),
            Node::Var(_) => None,
            Node::Unary(op, a) => {
                let a = a.constant_value()?;
                apply_unary(*op, &a).ok()
            }
            Node::Binary(op, a, b) => {
                let (a, b) = (a.constant_value()?, b.constant_value()?);
                match op {
                    BinaryOp::Add => Some(a + b),
                    BinaryOp::Sub => Some(a - b),
                    BinaryOp::Mul => Some(a * b),
                    BinaryOp::Div => (b != 0.0).then(|| a / b),
                    BinaryOp::Pow => Some(a.powf(b)),
                }
            }
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Const(_) => None,
            Node::Var(i) => Some(*i),
            Node::Unary(_, a) => a.max_var(),
            Node::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    fn eval<S: Scalar>(&self, vars: &[S], dim: usize) -> Result<S, EvalError> {
        match self {
            Node::Const(v) => Ok(S::constant(*v, dim)),
            Node::Var(i) => Ok(vars[*i].clone()),
            Node::Unary(op, a) => apply_unary(*op, &a.eval(vars, dim)?),
            Node::Binary(BinaryOp::Pow, a, b) => {
                let base = a.eval(vars, dim)?;
                match b.constant_value() {
                    Some(k) => pow_const(&base, k),
                    None => {
                        let bv = base.value();
                        if bv <= 0.0 {
                            return Err(EvalError::Domain { op: "pow with variable exponent", value: bv });
                        }
                        let e = b.eval(vars, dim)?;
                        let lb = base.chain(bv.ln(), 1.0 / bv, -1.0 / (bv * bv));
                        let p = e * lb;
                        let pv = p.value().exp();
                        Ok(p.chain(pv, pv, pv))
                    }
                }
            }
            Node::Binary(op, a, b) => {
                let (a, b) = (a.eval(vars, dim)?, b.eval(vars, dim)?);
                Ok(match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b.value() == 0.0 {
                            return Err(EvalError::Domain { op: "division by zero", value: a.value() });
                        }
                        a / b
                    }
                    BinaryOp::Pow => unreachable!("handled above"),
                })
            }
        }
    }
}

fn apply_unary<S: Scalar>(op: UnaryOp, a: &S) -> Result<S, EvalError> {
    let v = a.value();
    Ok(match op {
        UnaryOp::Neg => -a.clone(),
        UnaryOp::Exp => {
            let e = v.exp();
            a.chain(e, e, e)
        }
        UnaryOp::Log => {
            if v <= 0.0 {
                return Err(EvalError::Domain { op: "log", value: v });
            }
            a.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
        }
        UnaryOp::Sqrt => {
            if v < 0.0 {
                return Err(EvalError::Domain { op: "sqrt", value: v });
            }
            let s = v.sqrt();
            a.chain(s, 0.5 / s, -0.25 / (s * v))
        }
        UnaryOp::Sin => a.chain(v.sin(), v.cos(), -v.sin()),
        UnaryOp::Cos => a.chain(v.cos(), -v.sin(), -v.cos()),
        UnaryOp::Tan => {
            let c = v.cos();
            if c == 0.0 {
                return Err(EvalError::Domain { op: "tan", value: v });
            }
            let t = v.tan();
            let sec2 = 1.0 + t * t;
            a.chain(t, sec2, 2.0 * t * sec2)
        }
    })
}

fn pow_const<S: Scalar>(base: &S, k: f64) -> Result<S, EvalError> {
    let b = base.value();
    if k == 0.0 {
        return Ok(base.chain(1.0, 0.0, 0.0));
    }
    if k.fract() == 0.0 && k.abs() < i32::MAX as f64 {
        let n = k as i32;
        if b == 0.0 && n < 0 {
            return Err(EvalError::Domain { op: "pow of zero to negative power", value: b });
        }
        let f1 = if n == 1 { 1.0 } else { k * b.powi(n - 1) };
        let f2 = match n {
            1 => 0.0,
            2 => 2.0,
            _ => k * (k - 1.0) * b.powi(n - 2),
        };
        return Ok(base.chain(b.powi(n), f1, f2));
    }
    if b <= 0.0 {
        return Err(EvalError::Domain { op: "pow with non-integer exponent", value: b });
    }
    Ok(base.chain(b.powf(k), k * b.powf(k - 1.0), k * (k - 1.0) * b.powf(k - 2.0)))
}

/// A parsed scalar expression in a fixed number of variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Expression {
    root: Node,
    dim: usize,
}

impl Expression {
    pub fn parse(source: &str, dim: usize) -> Result<Self, ExprError> {
        let root = parse::Parser::new(source, dim)?.parse_all()?;
        Ok(Expression { root, dim })
    }

    /// Wraps an existing tree; fails if it references a variable beyond `dim`.
    pub fn from_node(root: Node, dim: usize) -> Option<Self> {
        match root.max_var() {
            Some(i) if i >= dim => None,
            _ => Some(Expression { root, dim }),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, x: &[f64]) -> Result<(), EvalError> {
        if x.len() != self.dim {
            return Err(EvalError::Dimension { expected: self.dim, found: x.len() });
        }
        Ok(())
    }

    pub fn eval_with<S: Scalar>(&self, vars: &[S]) -> Result<S, EvalError> {
        if vars.len() != self.dim {
            return Err(EvalError::Dimension { expected: self.dim, found: vars.len() });
        }
        self.root.eval(vars, self.dim)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.check(x)?;
        self.root.eval(x, self.dim)
    }

    pub fn dual(&self, x: &[f64]) -> Result<Dual, EvalError> {
        self.check(x)?;
        let vars: Vec<Dual> = x.iter().enumerate().map(|(i, &v)| Dual::variable(i, v, self.dim)).collect();
        self.root.eval(&vars, self.dim)
    }

    pub fn jet(&self, x: &[f64]) -> Result<Jet2, EvalError> {
        self.check(x)?;
        let vars: Vec<Jet2> = x.iter().enumerate().map(|(i, &v)| Jet2::variable(i, v, self.dim)).collect();
        self.root.eval(&vars, self.dim)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<DVector<f64>, EvalError> {
        Ok(DVector::from_column_slice(&self.dual(x)?.grad))
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let j = self.jet(x)?;
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &j.hess))
    }
}

pub fn parse(source: &str, dim: usize) -> Result<Expression, ExprError> {
    Expression::parse(source, dim)
}

pub fn gradient(expr: &Expression, x: &[f64]) -> Result<DVector<f64>, EvalError> {
    expr.gradient(x)
}

pub fn hessian(expr: &Expression, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
    expr.hessian(x)
}

/// Rows are the gradients of the component expressions.
pub fn jacobian(field: &[Expression], x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
    let mut m = DMatrix::zeros(field.len(), x.len());
    for (r, e) in field.iter().enumerate() {
        let d = e.dual(x)?;
        for (c, g) in d.grad.iter().enumerate() {
            m[(r, c)] = *g;
        }
    }
    Ok(m)
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(v) if *v < 0.0 => write!(f, "(-{:?})", -v),
            Node::Const(v) => write!(f, "{v:?}"),
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Node::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Node::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => '+',
                    BinaryOp::Sub => '-',
                    BinaryOp::Mul => '*',
                    BinaryOp::Div => '/',
                    BinaryOp::Pow => '^',
                };
                write!(f, "({a}{sym}{b})")
            }
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn ev(src: &str, dim: usize, x: &[f64]) -> f64 {
        parse(src, dim).unwrap().eval(x).unwrap()
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("x+y", 2, &[1.0, 2.0]), 3.0);
        assert_eq!(ev("-x^2", 1, &[3.0]), -9.0);
        assert_eq!(ev("2^3^2", 1, &[0.0]), 512.0);
        assert_eq!(ev("2^-1", 1, &[0.0]), 0.5);
        assert_eq!(ev("x1*x2 - x3/x4", 4, &[2.0, 3.0, 8.0, 4.0]), 4.0);
        assert_eq!(ev("1.5e1 + 2E-1", 1, &[0.0]), 15.2);
    }

    #[test]
    fn closed_form_values() {
        let f = "z*exp(8/(x^2+y^2+z^2+3))";
        assert!((ev(f, 3, &[0.0, 0.0, 1.0]) - E * E).abs() < 1e-12);
        assert!((ev(f, 3, &[0.0, 0.0, 3.0]) - 3.0 * (2.0f64 / 3.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn errors_carry_positions() {
        assert_eq!(
            parse("x + * y", 2).unwrap_err(),
            ExprError::Syntax { offset: 4, message: "unexpected '*'".into() }
        );
        assert!(matches!(parse("w", 2), Err(ExprError::UnknownIdentifier { offset: 0, .. })));
        assert!(matches!(parse("z", 2), Err(ExprError::UnknownIdentifier { .. })));
        assert!(matches!(parse("x4", 3), Err(ExprError::UnknownIdentifier { .. })));
        assert!(matches!(parse("x", 4), Err(ExprError::UnknownIdentifier { .. })));
        assert!(matches!(parse("foo(x)", 1), Err(ExprError::UnknownIdentifier { .. })));
        assert!(matches!(parse("exp(x, x)", 1), Err(ExprError::Arity { found: 2, .. })));
        assert!(matches!(parse("(x", 1), Err(ExprError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(parse("log(x)", 1).unwrap().eval(&[0.0]), Err(EvalError::Domain { .. })));
        assert!(matches!(parse("1/x", 1).unwrap().eval(&[0.0]), Err(EvalError::Domain { .. })));
        assert!(matches!(parse("x^0.5", 1).unwrap().eval(&[-1.0]), Err(EvalError::Domain { .. })));
        assert_eq!(parse("x^3", 1).unwrap().eval(&[-2.0]).unwrap(), -8.0);
    }

    #[test]
    fn gradient_at_critical_point_vanishes() {
        let f = parse("z*exp(8/(x^2+y^2+z^2+3))", 3).unwrap();
        let g = f.gradient(&[0.0, 0.0, -1.0]).unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn hessian_of_polynomial() {
        let f = parse("x^3*y + y^2", 2).unwrap();
        let h = f.hessian(&[1.0, 2.0]).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[12.0, 3.0, 3.0, 2.0]));
    }

    #[test]
    fn printer_round_trip() {
        for src in ["-x^2*sin(y)/(1+z)", "x^-2", "2^x - log(sqrt(y))", "tan(x)-cos(-z)"] {
            let a = parse(src, 3).unwrap();
            let b = parse(&a.to_string(), 3).unwrap();
            assert_eq!(a, b, "{src}");
        }
    }
}
