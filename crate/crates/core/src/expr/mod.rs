//! Closed-form phase-space functions: parsing, exact differentiation, evaluation and jets.

mod eval;
mod parse;
mod plan;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

pub use eval::ParamEnv;
pub use parse::{parse, parse_with_params};
pub use plan::{jet_of, JetPlan};

/// A variable: `q_i`, `p_i`, or an auxiliary `e_i` (block energies in combination functions).
/// Indices are zero-based here and one-based in text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Q(u8),
    P(u8),
    E(u8),
}

impl Var {
    /// Position in a phase point ordered `(q_1..q_n, p_1..p_n)`.
    pub fn phase_slot(self, n: usize) -> Option<usize> {
        match self {
            Var::Q(i) if (i as usize) < n => Some(i as usize),
            Var::P(i) if (i as usize) < n => Some(n + i as usize),
            _ => None,
        }
    }

    /// Phase variables in jet order for `n` degrees of freedom.
    pub fn phase_vars(n: usize) -> Vec<Var> {
        (0..n).map(|i| Var::Q(i as u8)).chain((0..n).map(|i| Var::P(i as u8))).collect()
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Q(i) => write!(f, "q{}", i + 1),
            Var::P(i) => write!(f, "p{}", i + 1),
            Var::E(i) => write!(f, "e{}", i + 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

/// Exponent of a power node: an integer or a reduced fraction with denominator > 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exponent {
    Int(i64),
    Ratio(i64, i64),
}

impl Exponent {
    pub fn new(num: i64, den: i64) -> Exponent {
        assert!(den != 0);
        let g = gcd(num.abs(), den.abs()).max(1);
        let (mut n, mut d) = (num / g, den / g);
        if d < 0 {
            n = -n;
            d = -d;
        }
        if d == 1 {
            Exponent::Int(n)
        } else {
            Exponent::Ratio(n, d)
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Exponent::Int(n) => n as f64,
            Exponent::Ratio(n, d) => n as f64 / d as f64,
        }
    }

    fn minus_one(self) -> Exponent {
        match self {
            Exponent::Int(n) => Exponent::Int(n - 1),
            Exponent::Ratio(n, d) => Exponent::new(n - d, d),
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Param(Arc<str>),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, Exponent),
    Call(Func, Expr),
}

/// Immutable expression tree with cheap clones.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr(Arc<Node>);

/// The phase-space function type used throughout.
pub type PhaseExpr = Expr;

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(c: f64) -> Expr {
        Expr(Arc::new(Node::Const(c)))
    }

    pub fn var(v: Var) -> Expr {
        Expr(Arc::new(Node::Var(v)))
    }

    pub fn param(name: &str) -> Expr {
        Expr(Arc::new(Node::Param(name.into())))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    fn is_const(&self, v: f64) -> bool {
        self.as_const() == Some(v)
    }

    pub fn neg(a: Expr) -> Expr {
        match *a.0 {
            Node::Const(c) => Expr::constant(-c),
            _ => Expr(Arc::new(Node::Neg(a))),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr(Arc::new(Node::Add(a, b))),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x - y),
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr(Arc::new(Node::Sub(a, b))),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x * y),
            (Some(x), _) if x == 0.0 => Expr::constant(0.0),
            (_, Some(y)) if y == 0.0 => Expr::constant(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            (Some(x), _) if x == -1.0 => Expr::neg(b),
            (_, Some(y)) if y == -1.0 => Expr::neg(a),
            (Some(x), None) => match b.node() {
                Node::Mul(c, rest) if c.as_const().is_some() => Expr::mul(Expr::constant(x * c.as_const().unwrap()), rest.clone()),
                _ => Expr(Arc::new(Node::Mul(a, b))),
            },
            (None, Some(_)) => Expr::mul(b, a),
            _ => Expr(Arc::new(Node::Mul(a, b))),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::constant(x / y),
            (Some(x), _) if x == 0.0 => Expr::constant(0.0),
            (_, Some(y)) if y == 1.0 => a,
            (None, Some(y)) if y != 0.0 => match a.node() {
                Node::Mul(c, rest) if c.as_const().is_some() => Expr::mul(Expr::constant(c.as_const().unwrap() / y), rest.clone()),
                _ => Expr(Arc::new(Node::Div(a, b))),
            },
            _ => Expr(Arc::new(Node::Div(a, b))),
        }
    }

    pub fn pow(a: Expr, e: Exponent) -> Expr {
        match e {
            Exponent::Int(0) => return Expr::constant(1.0),
            Exponent::Int(1) => return a,
            _ => {}
        }
        if let (Some(x), Exponent::Int(n)) = (a.as_const(), e) {
            if n > 0 || x != 0.0 {
                return Expr::constant(x.powi(n as i32));
            }
        }
        Expr(Arc::new(Node::Pow(a, e)))
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        Expr(Arc::new(Node::Call(f, a)))
    }

    /// Exact partial derivative.
    pub fn diff(&self, v: Var) -> Expr {
        match self.node() {
            Node::Const(_) | Node::Param(_) => Expr::constant(0.0),
            Node::Var(w) => Expr::constant(if *w == v { 1.0 } else { 0.0 }),
            Node::Neg(a) => Expr::neg(a.diff(v)),
            Node::Add(a, b) => Expr::add(a.diff(v), b.diff(v)),
            Node::Sub(a, b) => Expr::sub(a.diff(v), b.diff(v)),
            Node::Mul(a, b) => Expr::add(Expr::mul(a.diff(v), b.clone()), Expr::mul(a.clone(), b.diff(v))),
            Node::Div(a, b) => {
                let da = a.diff(v);
                let db = b.diff(v);
                if db.is_const(0.0) {
                    Expr::div(da, b.clone())
                } else {
                    Expr::div(
                        Expr::sub(Expr::mul(da, b.clone()), Expr::mul(a.clone(), db)),
                        Expr::pow(b.clone(), Exponent::Int(2)),
                    )
                }
            }
            Node::Pow(a, e) => {
                let da = a.diff(v);
                if da.is_const(0.0) {
                    return Expr::constant(0.0);
                }
                let outer = Expr::mul(Expr::constant(e.as_f64()), Expr::pow(a.clone(), e.minus_one()));
                Expr::mul(outer, da)
            }
            Node::Call(f, a) => {
                let da = a.diff(v);
                if da.is_const(0.0) {
                    return Expr::constant(0.0);
                }
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, a.clone()),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, a.clone())),
                    Func::Exp => self.clone(),
                    Func::Log => Expr::div(Expr::constant(1.0), a.clone()),
                    Func::Sqrt => Expr::div(Expr::constant(0.5), self.clone()),
                };
                Expr::mul(outer, da)
            }
        }
    }

    /// Replace bound parameters by constants (and fold).
    pub fn bind(&self, env: &ParamEnv) -> Expr {
        self.map_leaves(&|n| match n {
            Node::Param(name) => env.get(name).map(Expr::constant),
            _ => None,
        })
    }

    /// Substitute variables by expressions.
    pub fn substitute(&self, subs: &BTreeMap<Var, Expr>) -> Expr {
        self.map_leaves(&|n| match n {
            Node::Var(v) => subs.get(v).cloned(),
            _ => None,
        })
    }

    fn map_leaves(&self, f: &dyn Fn(&Node) -> Option<Expr>) -> Expr {
        if let Some(r) = f(self.node()) {
            return r;
        }
        match self.node() {
            Node::Const(_) | Node::Var(_) | Node::Param(_) => self.clone(),
            Node::Neg(a) => Expr::neg(a.map_leaves(f)),
            Node::Add(a, b) => Expr::add(a.map_leaves(f), b.map_leaves(f)),
            Node::Sub(a, b) => Expr::sub(a.map_leaves(f), b.map_leaves(f)),
            Node::Mul(a, b) => Expr::mul(a.map_leaves(f), b.map_leaves(f)),
            Node::Div(a, b) => Expr::div(a.map_leaves(f), b.map_leaves(f)),
            Node::Pow(a, e) => Expr::pow(a.map_leaves(f), *e),
            Node::Call(g, a) => Expr::call(*g, a.map_leaves(f)),
        }
    }

    /// All variables appearing in the tree.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.visit(&mut |n| {
            if let Node::Var(v) = n {
                if !out.contains(v) {
                    out.push(*v);
                }
            }
        });
        out.sort();
        out
    }

    /// All parameter names appearing in the tree.
    pub fn params(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.visit(&mut |n| {
            if let Node::Param(p) = n {
                if !out.iter().any(|x| x == &**p) {
                    out.push(p.to_string());
                }
            }
        });
        out.sort();
        out
    }

    /// Number of degrees of freedom implied by the highest q/p index.
    pub fn dof(&self) -> usize {
        self.variables()
            .iter()
            .filter_map(|v| match v {
                Var::Q(i) | Var::P(i) => Some(*i as usize + 1),
                Var::E(_) => None,
            })
            .max()
            .unwrap_or(1)
    }

    fn visit(&self, f: &mut dyn FnMut(&Node)) {
        f(self.node());
        match self.node() {
            Node::Const(_) | Node::Var(_) | Node::Param(_) => {}
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.visit(f),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self.node() {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Pow(..) => 4,
            Node::Const(c) if *c < 0.0 || c.to_bits() == (-0.0f64).to_bits() => 3,
            _ => 5,
        }
    }

    /// Text in the input grammar; `parse(render(e))` evaluates like `e`.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

fn wrap(e: &Expr, min: u8) -> String {
    if e.precedence() < min {
        format!("({e})")
    } else {
        e.to_string()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "-{:?}", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Node::Var(v) => write!(f, "{v}"),
            Node::Param(p) => write!(f, "{p}"),
            Node::Neg(a) => write!(f, "-{}", wrap(a, 3)),
            Node::Add(a, b) => write!(f, "{} + {}", wrap(a, 1), wrap(b, 2)),
            Node::Sub(a, b) => write!(f, "{} - {}", wrap(a, 1), wrap(b, 2)),
            Node::Mul(a, b) => write!(f, "{}*{}", wrap(a, 2), wrap(b, 3)),
            Node::Div(a, b) => write!(f, "{}/{}", wrap(a, 2), wrap(b, 3)),
            Node::Pow(a, e) => {
                let base = wrap(a, 5);
                match e {
                    Exponent::Int(n) if *n >= 0 => write!(f, "{base}^{n}"),
                    Exponent::Int(n) => write!(f, "{base}^({n})"),
                    Exponent::Ratio(n, d) => write!(f, "{base}^({n}/{d})"),
                }
            }
            Node::Call(g, a) => write!(f, "{}({a})", g.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(e: &Expr, q: f64, p: f64) -> f64 {
        e.eval(&[q, p], &ParamEnv::new()).unwrap()
    }

    #[test]
    fn derivative_of_square() {
        let e = parse("q1^2").unwrap();
        let d = e.diff(Var::Q(0));
        assert_eq!(ev(&d, 1.5, 0.0), 3.0);
    }

    #[test]
    fn derivative_of_sine() {
        let e = parse("sin(q1)").unwrap();
        let d = e.diff(Var::Q(0));
        assert!((ev(&d, 0.3, 0.0) - 0.3f64.cos()).abs() < 1e-16);
    }

    #[test]
    fn derivative_in_momentum() {
        let e = parse("p1^2/2 + lambda*q1^4").unwrap();
        let d = e.diff(Var::P(0));
        assert_eq!(d.render(), "p1");
    }

    #[test]
    fn render_keeps_structure() {
        for s in ["-q1^2", "(q1 - p1)^(3/2)", "q1 - (p1 - 2)", "2/(q1*p1)", "(-2)^3", "q1^(-2)"] {
            let e = parse(s).unwrap();
            let back = parse(&e.render()).unwrap();
            assert_eq!(ev(&e, 0.7, 0.4), ev(&back, 0.7, 0.4), "{s} -> {}", e.render());
        }
    }
}
