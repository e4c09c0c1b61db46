use std::sync::Arc;

use super::{Expr, ParamEnv, Var};
use crate::error::{Error, Result};
use crate::jets::{layout, multi_factorial, Jet, Layout, JET_ORDER_CAP, MAX_ORDER};

/// Precomputed derivative trees of an expression for repeated jet evaluation.
#[derive(Clone, Debug)]
pub struct JetPlan {
    vars: Vec<Var>,
    layout: Arc<Layout>,
    derivs: Vec<Expr>,
    scale: Vec<f64>,
}

impl JetPlan {
    /// Plan jets of `e` in the given variables up to `order`.
    pub fn new(e: &Expr, vars: &[Var], order: usize) -> JetPlan {
        assert!(order <= MAX_ORDER);
        let layout = layout(vars.len(), order);
        let mut derivs: Vec<Expr> = Vec::with_capacity(layout.len());
        for (k, ix) in layout.indices.iter().enumerate() {
            if k == 0 {
                derivs.push(e.clone());
                continue;
            }
            // differentiate the parent (first nonzero slot lowered by one)
            let v = ix.iter().position(|&a| a > 0).unwrap();
            let mut parent = *ix;
            parent[v] -= 1;
            let pk = layout.position(&parent).unwrap();
            derivs.push(derivs[pk].diff(vars[v]));
        }
        let scale = layout.indices.iter().map(|ix| 1.0 / multi_factorial(ix)).collect();
        JetPlan { vars: vars.to_vec(), layout, derivs, scale }
    }

    /// Plan over the phase variables of `n` degrees of freedom.
    pub fn phase(e: &Expr, n: usize, order: usize) -> JetPlan {
        JetPlan::new(e, &Var::phase_vars(n), order)
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Jet at `pt` (values of the plan's variables, in order).
    pub fn eval(&self, pt: &[f64], env: &ParamEnv) -> Result<Jet> {
        let lookup = |v: Var| self.vars.iter().position(|w| *w == v).map(|k| pt[k]);
        let mut c = Vec::with_capacity(self.derivs.len());
        for (d, s) in self.derivs.iter().zip(&self.scale) {
            c.push(d.eval_with(&lookup, env)? * s);
        }
        Ok(Jet::from_coeffs(pt, self.layout.order, c))
    }

    /// The symbolic derivative for a multi-index.
    pub fn derivative_expr(&self, ix: &[u8]) -> Option<&Expr> {
        let mut m = [0u8; crate::jets::MAX_VARS];
        m[..ix.len()].copy_from_slice(ix);
        self.layout.position(&m).map(|k| &self.derivs[k])
    }
}

/// Jet of a phase-space expression at `pt` (ordered `q_1..q_n, p_1..p_n`).
pub fn jet_of(e: &Expr, pt: &[f64], order: usize, env: &ParamEnv) -> Result<Jet> {
    if order > JET_ORDER_CAP {
        return Err(Error::JetOrder { needed: order, have: JET_ORDER_CAP });
    }
    JetPlan::phase(e, pt.len() / 2, order).eval(pt, env)
}

impl Expr {
    pub fn jet_of(&self, pt: &[f64], order: usize, env: &ParamEnv) -> Result<Jet> {
        jet_of(self, pt, order, env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use approx::assert_relative_eq;

    #[test]
    fn product_cross_term() {
        let j = parse("q1*p1").unwrap().jet_of(&[0.0, 0.0], 2, &ParamEnv::new()).unwrap();
        for (k, ix) in j.layout().indices.iter().enumerate() {
            let expect = if ix[0] == 1 && ix[1] == 1 { 1.0 } else { 0.0 };
            assert_eq!(j.coeffs()[k], expect);
        }
    }

    #[test]
    fn binomial_pattern() {
        let j = parse("q1^3").unwrap().jet_of(&[1.0, 0.3], 3, &ParamEnv::new()).unwrap();
        let c: Vec<f64> = (0..4).map(|k| j.coeff(&[k, 0])).collect();
        assert_eq!(c, vec![1.0, 3.0, 3.0, 1.0]);
    }

    #[test]
    fn cosine_taylor() {
        let j = parse("cos(q1)").unwrap().jet_of(&[0.0, 0.0], 4, &ParamEnv::new()).unwrap();
        let c: Vec<f64> = (0..5).map(|k| j.coeff(&[k, 0])).collect();
        let expect = [1.0, 0.0, -0.5, 0.0, 1.0 / 24.0];
        for (a, b) in c.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-16);
        }
    }

    #[test]
    fn cap_enforced() {
        assert!(parse("q1").unwrap().jet_of(&[0.0, 0.0], 6, &ParamEnv::new()).is_err());
    }
}
