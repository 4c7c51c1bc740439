//! Scalar-field expressions over chart coordinates.

mod dual;
mod parser;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

pub use dual::{Dual, Real};

use crate::chart::ChartSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn precedence(&self) -> u8 {
        match self {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Const(c) if c.is_sign_negative() => 3,
            Node::Pow(..) => 4,
            _ => 5,
        }
    }

    /// Value of a subtree that references no coordinates.
    fn const_value(&self) -> Option<f64> {
        if !self.is_closed() {
            return None;
        }
        self.eval::<f64>(&[], &|_| String::new()).ok()
    }

    fn is_closed(&self) -> bool {
        match self {
            Node::Const(_) => true,
            Node::Var(_) => false,
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.is_closed() && b.is_closed()
            }
            Node::Neg(a) | Node::Call(_, a) => a.is_closed(),
        }
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Node::Const(_) => {}
            Node::Var(i) => {
                out.insert(*i);
            }
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Node::Neg(a) | Node::Call(_, a) => a.collect_vars(out),
        }
    }

    fn eval<T: Real>(&self, vars: &[T], show: &dyn Fn(&Node) -> String) -> Result<T> {
        let domain = |n: &Node, reason: &str| Error::Domain { subexpr: show(n), reason: reason.into() };
        Ok(match self {
            Node::Const(c) => T::constant(*c),
            Node::Var(i) => vars[*i].clone(),
            Node::Add(a, b) => a.eval(vars, show)? + b.eval(vars, show)?,
            Node::Sub(a, b) => a.eval(vars, show)? - b.eval(vars, show)?,
            Node::Mul(a, b) => a.eval(vars, show)? * b.eval(vars, show)?,
            Node::Div(a, b) => {
                let d = b.eval(vars, show)?;
                if d.real() == 0.0 {
                    return Err(domain(self, "division by zero"));
                }
                a.eval(vars, show)? / d
            }
            Node::Neg(a) => -a.eval(vars, show)?,
            Node::Call(f, a) => {
                let x = a.eval(vars, show)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x.real() <= 0.0 {
                            return Err(domain(self, "log of non-positive argument"));
                        }
                        x.ln()
                    }
                }
            }
            Node::Pow(a, b) => {
                let x = a.eval(vars, show)?;
                match b.const_value() {
                    Some(p) => {
                        let integral = p.fract() == 0.0 && p.abs() <= i32::MAX as f64;
                        if x.real() == 0.0 && p < 0.0 {
                            return Err(domain(self, "zero raised to a negative power"));
                        }
                        if x.real() < 0.0 && !integral {
                            return Err(domain(self, "negative base with non-integer exponent"));
                        }
                        if integral {
                            x.powi(p as i32)
                        } else {
                            x.powf(p)
                        }
                    }
                    None => {
                        if x.real() <= 0.0 {
                            return Err(domain(self, "non-positive base with variable exponent"));
                        }
                        (b.eval(vars, show)? * x.ln()).exp()
                    }
                }
            }
        })
    }

    fn write(&self, names: &[&str], out: &mut String) {
        let child = |n: &Node, min: u8, out: &mut String| {
            if n.precedence() < min {
                out.push('(');
                n.write(names, out);
                out.push(')');
            } else {
                n.write(names, out);
            }
        };
        match self {
            Node::Const(c) => {
                if c.is_sign_negative() {
                    out.push_str(&format!("-{}", -c));
                } else {
                    out.push_str(&format!("{c}"));
                }
            }
            Node::Var(i) => out.push_str(names[*i]),
            Node::Add(a, b) | Node::Sub(a, b) => {
                child(a, 1, out);
                out.push_str(if matches!(self, Node::Add(..)) { " + " } else { " - " });
                child(b, 2, out);
            }
            Node::Mul(a, b) | Node::Div(a, b) => {
                child(a, 2, out);
                out.push(if matches!(self, Node::Mul(..)) { '*' } else { '/' });
                child(b, 3, out);
            }
            Node::Neg(a) => {
                out.push('-');
                child(a, 3, out);
            }
            Node::Pow(a, b) => {
                child(a, 5, out);
                out.push('^');
                child(b, 3, out);
            }
            Node::Call(f, a) => {
                out.push_str(f.name());
                out.push('(');
                a.write(names, out);
                out.push(')');
            }
        }
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn add(a: Node, b: Node) -> Node {
        match (a.as_const(), b.as_const()) {
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Node::Add(Box::new(a), Box::new(b)),
        }
    }

    fn sub(a: Node, b: Node) -> Node {
        match (a.as_const(), b.as_const()) {
            (_, Some(y)) if y == 0.0 => a,
            (Some(x), _) if x == 0.0 => Node::neg(b),
            _ => Node::Sub(Box::new(a), Box::new(b)),
        }
    }

    fn mul(a: Node, b: Node) -> Node {
        match (a.as_const(), b.as_const()) {
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Node::Const(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            _ => Node::Mul(Box::new(a), Box::new(b)),
        }
    }

    fn neg(a: Node) -> Node {
        match a {
            Node::Const(c) if c == 0.0 => Node::Const(0.0),
            Node::Neg(inner) => *inner,
            other => Node::Neg(Box::new(other)),
        }
    }
}

/// Parsed scalar field bound to a chart.
#[derive(Debug, Clone)]
pub struct Expression {
    root: Node,
    chart: Arc<ChartSpec>,
}

/// Second-derivative block with the asymmetry removed by symmetrization.
#[derive(Debug, Clone)]
pub struct HessianBlock {
    pub matrix: DMatrix<f64>,
    pub asymmetry: f64,
}

/// Value, gradient and full Hessian from one nested-dual sweep.
#[derive(Debug, Clone)]
pub struct SecondOrder {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

impl Expression {
    pub fn parse(source: &str, chart: &Arc<ChartSpec>) -> Result<Self> {
        let root = parser::Parser::new(source, chart)?.parse_all()?;
        Ok(Expression { root, chart: chart.clone() })
    }

    pub fn constant(c: f64, chart: &Arc<ChartSpec>) -> Self {
        Expression { root: Node::Const(c), chart: chart.clone() }
    }

    pub fn var(index: usize, chart: &Arc<ChartSpec>) -> Self {
        assert!(index < chart.dim(), "coordinate index out of range");
        Expression { root: Node::Var(index), chart: chart.clone() }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn chart(&self) -> &Arc<ChartSpec> {
        &self.chart
    }

    /// True for the literal constant 0.
    pub fn is_zero(&self) -> bool {
        self.root.as_const() == Some(0.0)
    }

    /// Coordinate indices the expression depends on syntactically.
    pub fn referenced(&self) -> BTreeSet<usize> {
        let mut s = BTreeSet::new();
        self.root.collect_vars(&mut s);
        s
    }

    /// Re-attaches the expression to a chart that extends its own positionally.
    pub fn rebind(&self, chart: &Arc<ChartSpec>) -> Result<Self> {
        if !chart.has_prefix(&self.chart) {
            return Err(Error::ChartMismatch("target chart does not extend the expression's chart".into()));
        }
        Ok(Expression { root: self.root.clone(), chart: chart.clone() })
    }

    fn combine(&self, other: &Expression, f: fn(Node, Node) -> Node) -> Expression {
        assert!(Arc::ptr_eq(&self.chart, &other.chart) || *self.chart == *other.chart, "chart mismatch");
        Expression { root: f(self.root.clone(), other.root.clone()), chart: self.chart.clone() }
    }

    pub fn add(&self, other: &Expression) -> Expression {
        self.combine(other, Node::add)
    }

    pub fn sub(&self, other: &Expression) -> Expression {
        self.combine(other, Node::sub)
    }

    pub fn mul(&self, other: &Expression) -> Expression {
        self.combine(other, Node::mul)
    }

    pub fn neg(&self) -> Expression {
        Expression { root: Node::neg(self.root.clone()), chart: self.chart.clone() }
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.chart.dim() {
            return Err(Error::DimensionMismatch { expected: self.chart.dim(), found: point.len() });
        }
        Ok(())
    }

    /// Evaluates on any [`Real`] scalar; `vars` is indexed by chart position.
    pub fn eval_generic<T: Real>(&self, vars: &[T]) -> Result<T> {
        if vars.len() != self.chart.dim() {
            return Err(Error::DimensionMismatch { expected: self.chart.dim(), found: vars.len() });
        }
        let names = self.chart.names();
        self.root.eval(vars, &|n| {
            let mut s = String::new();
            n.write(&names, &mut s);
            s
        })
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        self.eval_generic(point)
    }

    /// Value and gradient over every chart coordinate.
    pub fn eval_with_gradient(&self, point: &[f64]) -> Result<(f64, Vec<f64>)> {
        let cols: Vec<usize> = (0..self.chart.dim()).collect();
        self.eval_gradient_on(point, &cols)
    }

    /// Value and partials with respect to `cols` only.
    pub fn eval_gradient_on(&self, point: &[f64], cols: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_point(point)?;
        let vars: Vec<Dual<f64>> = point
            .iter()
            .enumerate()
            .map(|(i, &x)| match cols.iter().position(|&c| c == i) {
                Some(slot) => Dual::variable(x, slot, cols.len()),
                None => Dual::constant(x),
            })
            .collect();
        let r = self.eval_generic(&vars)?;
        Ok((r.value, (0..cols.len()).map(|j| r.partial(j)).collect()))
    }

    fn nested_sweep(&self, point: &[f64], rows: &[usize], cols: &[usize]) -> Result<Dual<Dual<f64>>> {
        self.check_point(point)?;
        let vars: Vec<Dual<Dual<f64>>> = point
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let inner = match rows.iter().position(|&r| r == i) {
                    Some(slot) => Dual::variable(x, slot, rows.len()),
                    None => Dual::constant(x),
                };
                let partials = match cols.iter().position(|&c| c == i) {
                    Some(slot) => {
                        let mut p = vec![Dual::constant(0.0); cols.len()];
                        p[slot] = Dual::constant(1.0);
                        p
                    }
                    None => Vec::new(),
                };
                Dual { value: inner, partials }
            })
            .collect();
        self.eval_generic(&vars)
    }

    /// `H[i][j] = ∂²e/∂rows_i ∂cols_j`, symmetrized when `rows == cols`.
    pub fn hessian_block(&self, point: &[f64], rows: &[usize], cols: &[usize]) -> Result<HessianBlock> {
        let r = self.nested_sweep(point, rows, cols)?;
        let mut m = DMatrix::from_fn(rows.len(), cols.len(), |i, j| r.partial(j).partial(i));
        let mut asymmetry = 0.0;
        if rows == cols {
            asymmetry = (&m - m.transpose()).abs().max();
            m = (&m + m.transpose()) * 0.5;
        }
        Ok(HessianBlock { matrix: m, asymmetry })
    }

    /// Value, full gradient and full symmetric Hessian.
    pub fn second_order(&self, point: &[f64]) -> Result<SecondOrder> {
        let all: Vec<usize> = (0..self.chart.dim()).collect();
        let r = self.nested_sweep(point, &all, &all)?;
        let n = all.len();
        let h = DMatrix::from_fn(n, n, |i, j| r.partial(j).partial(i));
        Ok(SecondOrder {
            value: r.value.value,
            gradient: (0..n).map(|i| r.value.partial(i)).collect(),
            hessian: (&h + h.transpose()) * 0.5,
        })
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.root.write(&self.chart.names(), &mut s);
        f.write_str(&s)
    }
}

/// Parses a source string against a chart.
pub fn parse(source: &str, chart: &Arc<ChartSpec>) -> Result<Expression> {
    Expression::parse(source, chart)
}
