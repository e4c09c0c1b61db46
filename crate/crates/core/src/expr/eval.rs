use std::collections::BTreeMap;

use num_complex::Complex64;

use super::{Expr, Exponent, Func, Node, Var};
use crate::error::{Error, Result};

/// Named parameter values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamEnv {
    values: BTreeMap<String, f64>,
}

impl ParamEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: &[(&str, f64)]) -> Self {
        let mut env = Self::new();
        for (k, v) in pairs {
            env.set(k, *v);
        }
        env
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.values.iter()
    }
}

fn domain(node: &Expr, reason: &str) -> Error {
    Error::Domain { node: node.render(), reason: reason.into() }
}

impl Expr {
    /// Evaluate at a phase point ordered `(q_1..q_n, p_1..p_n)`.
    pub fn eval(&self, pt: &[f64], env: &ParamEnv) -> Result<f64> {
        let n = pt.len() / 2;
        self.eval_with(&|v| v.phase_slot(n).map(|k| pt[k]), env)
    }

    /// Evaluate with an arbitrary variable lookup.
    pub fn eval_with(&self, lookup: &dyn Fn(Var) -> Option<f64>, env: &ParamEnv) -> Result<f64> {
        let v = match self.node() {
            Node::Const(c) => *c,
            Node::Var(v) => lookup(*v).ok_or_else(|| Error::Domain { node: v.to_string(), reason: "variable not supplied".into() })?,
            Node::Param(p) => env.get(p).ok_or_else(|| Error::UnboundParameter(p.to_string()))?,
            Node::Neg(a) => -a.eval_with(lookup, env)?,
            Node::Add(a, b) => a.eval_with(lookup, env)? + b.eval_with(lookup, env)?,
            Node::Sub(a, b) => a.eval_with(lookup, env)? - b.eval_with(lookup, env)?,
            Node::Mul(a, b) => a.eval_with(lookup, env)? * b.eval_with(lookup, env)?,
            Node::Div(a, b) => {
                let d = b.eval_with(lookup, env)?;
                if d == 0.0 {
                    return Err(domain(self, "division by zero"));
                }
                a.eval_with(lookup, env)? / d
            }
            Node::Pow(a, e) => {
                let x = a.eval_with(lookup, env)?;
                match *e {
                    Exponent::Int(n) => {
                        if n < 0 && x == 0.0 {
                            return Err(domain(self, "negative power of zero"));
                        }
                        if n.abs() <= i32::MAX as i64 {
                            x.powi(n as i32)
                        } else {
                            x.powf(n as f64)
                        }
                    }
                    Exponent::Ratio(n, d) => {
                        if x < 0.0 {
                            if d % 2 == 0 {
                                return Err(domain(self, "even root of a negative number"));
                            }
                            let m = (-x).powf(n as f64 / d as f64);
                            if n % 2 == 0 {
                                m
                            } else {
                                -m
                            }
                        } else {
                            if x == 0.0 && n < 0 {
                                return Err(domain(self, "negative power of zero"));
                            }
                            x.powf(n as f64 / d as f64)
                        }
                    }
                }
            }
            Node::Call(f, a) => {
                let x = a.eval_with(lookup, env)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(domain(self, "log of a nonpositive number"));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(domain(self, "sqrt of a negative number"));
                        }
                        x.sqrt()
                    }
                }
            }
        };
        Ok(v)
    }

    /// Complex evaluation (principal branches); parameters must be bound.
    pub fn eval_complex(&self, lookup: &dyn Fn(Var) -> Option<Complex64>, env: &ParamEnv) -> Result<Complex64> {
        let v = match self.node() {
            Node::Const(c) => Complex64::new(*c, 0.0),
            Node::Var(v) => lookup(*v).ok_or_else(|| Error::Domain { node: v.to_string(), reason: "variable not supplied".into() })?,
            Node::Param(p) => Complex64::new(env.get(p).ok_or_else(|| Error::UnboundParameter(p.to_string()))?, 0.0),
            Node::Neg(a) => -a.eval_complex(lookup, env)?,
            Node::Add(a, b) => a.eval_complex(lookup, env)? + b.eval_complex(lookup, env)?,
            Node::Sub(a, b) => a.eval_complex(lookup, env)? - b.eval_complex(lookup, env)?,
            Node::Mul(a, b) => a.eval_complex(lookup, env)? * b.eval_complex(lookup, env)?,
            Node::Div(a, b) => {
                let d = b.eval_complex(lookup, env)?;
                if d == Complex64::new(0.0, 0.0) {
                    return Err(domain(self, "division by zero"));
                }
                a.eval_complex(lookup, env)? / d
            }
            Node::Pow(a, e) => {
                let x = a.eval_complex(lookup, env)?;
                match *e {
                    Exponent::Int(n) => x.powi(n as i32),
                    Exponent::Ratio(n, d) => x.powf(n as f64 / d as f64),
                }
            }
            Node::Call(f, a) => {
                let x = a.eval_complex(lookup, env)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log => x.ln(),
                    Func::Sqrt => x.sqrt(),
                }
            }
        };
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn domain_errors_name_the_node() {
        let e = parse("log(q1 - 1)").unwrap();
        match e.eval(&[0.5, 0.0], &ParamEnv::new()) {
            Err(Error::Domain { node, .. }) => assert_eq!(node, "log(q1 - 1.0)"),
            other => panic!("{other:?}"),
        }
        let e = parse("1/q1").unwrap();
        assert!(matches!(e.eval(&[0.0, 0.0], &ParamEnv::new()), Err(Error::Domain { .. })));
    }

    #[test]
    fn unbound_parameter() {
        let e = parse("lambda*q1").unwrap();
        assert_eq!(e.eval(&[1.0, 0.0], &ParamEnv::new()), Err(Error::UnboundParameter("lambda".into())));
    }

    #[test]
    fn complex_matches_real_on_axis() {
        let e = parse("q1^2/2 + 0.1*q1^4 - cos(q1)").unwrap();
        let x = 0.37;
        let r = e.eval(&[x, 0.0], &ParamEnv::new()).unwrap();
        let c = e.eval_complex(&|_| Some(Complex64::new(x, 0.0)), &ParamEnv::new()).unwrap();
        assert!((r - c.re).abs() < 1e-15 && c.im == 0.0);
    }
}
