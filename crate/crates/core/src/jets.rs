//! Truncated multivariate Taylor polynomials ("jets") and maps between them.
//!
//! Coefficients are stored densely over the simplex of multi-indices up to the
//! jet order; the coefficient of `x^α` is `∂^α f / α!`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use once_cell::sync::Lazy;

use crate::error::{Error, Result};

/// Maximum number of jet variables.
pub const MAX_VARS: usize = 4;
/// Highest order used for phase-space jets.
pub const JET_ORDER_CAP: usize = 5;
/// Highest order any jet layout supports (auxiliary one-variable series go past the cap).
pub const MAX_ORDER: usize = 8;

pub type MultiIndex = [u8; MAX_VARS];

/// Monomial ordering and multiplication table for a given (nvars, order).
#[derive(Debug)]
pub struct Layout {
    pub nvars: usize,
    pub order: usize,
    pub indices: Vec<MultiIndex>,
    degree: Vec<usize>,
    lookup: Vec<u32>,
    mul_table: Vec<(u16, u16, u16)>,
}

const NONE: u32 = u32::MAX;

impl Layout {
    fn build(nvars: usize, order: usize) -> Layout {
        let mut indices = Vec::new();
        for d in 0..=order {
            let mut level = Vec::new();
            collect(nvars, d, &mut [0u8; MAX_VARS], 0, &mut level);
            level.sort_by(|a, b| b.cmp(a));
            indices.extend(level);
        }
        let radix = order + 1;
        let mut lookup = vec![NONE; radix.pow(nvars as u32)];
        for (k, ix) in indices.iter().enumerate() {
            lookup[key(ix, nvars, radix)] = k as u32;
        }
        let degree: Vec<usize> = indices.iter().map(|a| a.iter().map(|&v| v as usize).sum()).collect();
        let mut mul_table = Vec::new();
        for (i, a) in indices.iter().enumerate() {
            for (j, b) in indices.iter().enumerate() {
                if degree[i] + degree[j] <= order {
                    let mut c = [0u8; MAX_VARS];
                    for v in 0..nvars {
                        c[v] = a[v] + b[v];
                    }
                    let k = lookup[key(&c, nvars, radix)];
                    mul_table.push((i as u16, j as u16, k as u16));
                }
            }
        }
        Layout { nvars, order, indices, degree, lookup, mul_table }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of a multi-index, if it lies inside the simplex.
    pub fn position(&self, ix: &MultiIndex) -> Option<usize> {
        let deg: usize = ix[..self.nvars].iter().map(|&v| v as usize).sum();
        if deg > self.order || ix[self.nvars..].iter().any(|&v| v != 0) {
            return None;
        }
        let k = self.lookup[key(ix, self.nvars, self.order + 1)];
        (k != NONE).then_some(k as usize)
    }

    pub fn degree_of(&self, k: usize) -> usize {
        self.degree[k]
    }
}

fn collect(nvars: usize, remaining: usize, cur: &mut MultiIndex, pos: usize, out: &mut Vec<MultiIndex>) {
    if pos + 1 == nvars {
        cur[pos] = remaining as u8;
        out.push(*cur);
        cur[pos] = 0;
        return;
    }
    for e in 0..=remaining {
        cur[pos] = e as u8;
        collect(nvars, remaining - e, cur, pos + 1, out);
    }
    cur[pos] = 0;
}

fn key(ix: &MultiIndex, nvars: usize, radix: usize) -> usize {
    ix[..nvars].iter().fold(0, |acc, &v| acc * radix + v as usize)
}

static LAYOUTS: Lazy<Mutex<HashMap<(usize, usize), Arc<Layout>>>> = Lazy::new(|| Mutex::new(HashMap::new()));

/// Shared layout for `nvars` variables truncated at `order`.
pub fn layout(nvars: usize, order: usize) -> Arc<Layout> {
    assert!((1..=MAX_VARS).contains(&nvars), "jets support 1..={MAX_VARS} variables");
    assert!(order <= MAX_ORDER, "jet order {order} exceeds {MAX_ORDER}");
    let mut map = LAYOUTS.lock().unwrap();
    map.entry((nvars, order)).or_insert_with(|| Arc::new(Layout::build(nvars, order))).clone()
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

pub fn multi_factorial(ix: &MultiIndex) -> f64 {
    ix.iter().map(|&v| factorial(v as usize)).product()
}

fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs())))
}

/// A truncated Taylor polynomial at a base point.
#[derive(Clone, Debug)]
pub struct Jet {
    layout: Arc<Layout>,
    base: Arc<[f64]>,
    c: Vec<f64>,
}

impl Jet {
    pub fn zero(base: &[f64], order: usize) -> Jet {
        let layout = layout(base.len(), order);
        let c = vec![0.0; layout.len()];
        Jet { layout, base: base.into(), c }
    }

    pub fn constant(base: &[f64], order: usize, value: f64) -> Jet {
        let mut j = Jet::zero(base, order);
        j.c[0] = value;
        j
    }

    /// The coordinate function `x_i` expanded at the base point.
    pub fn variable(base: &[f64], order: usize, i: usize) -> Jet {
        let mut j = Jet::constant(base, order, base[i]);
        if order >= 1 {
            let mut ix = [0u8; MAX_VARS];
            ix[i] = 1;
            let k = j.layout.position(&ix).unwrap();
            j.c[k] = 1.0;
        }
        j
    }

    pub fn from_coeffs(base: &[f64], order: usize, coeffs: Vec<f64>) -> Jet {
        let layout = layout(base.len(), order);
        assert_eq!(coeffs.len(), layout.len(), "coefficient table does not match layout");
        Jet { layout, base: base.into(), c: coeffs }
    }

    /// Univariate jet from Taylor coefficients `c_k` (coefficient of δ^k).
    pub fn univariate(base: f64, coeffs: &[f64]) -> Jet {
        Jet::from_coeffs(&[base], coeffs.len() - 1, coeffs.to_vec())
    }

    fn like(&self, c: Vec<f64>) -> Jet {
        Jet { layout: self.layout.clone(), base: self.base.clone(), c }
    }

    pub fn nvars(&self) -> usize {
        self.layout.nvars
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.c
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn set_value(&mut self, v: f64) {
        self.c[0] = v;
    }

    /// Taylor coefficient of the given multi-index (zero outside the simplex).
    pub fn coeff(&self, ix: &[u8]) -> f64 {
        let mut m = [0u8; MAX_VARS];
        m[..ix.len()].copy_from_slice(ix);
        self.layout.position(&m).map_or(0.0, |k| self.c[k])
    }

    /// Mixed partial derivative `∂^α f` at the base point.
    pub fn partial(&self, ix: &[u8]) -> f64 {
        let mut m = [0u8; MAX_VARS];
        m[..ix.len()].copy_from_slice(ix);
        self.coeff(ix) * multi_factorial(&m)
    }

    pub fn gradient(&self) -> Vec<f64> {
        (0..self.nvars()).map(|i| self.partial(&unit(i))).collect()
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let n = self.nvars();
        DMatrix::from_fn(n, n, |i, j| {
            let mut ix = [0u8; MAX_VARS];
            ix[i] += 1;
            ix[j] += 1;
            self.partial(&ix)
        })
    }

    fn check(&self, other: &Jet) -> Result<()> {
        if self.layout.nvars != other.layout.nvars || self.layout.order != other.layout.order {
            return Err(Error::JetMismatch(format!(
                "orders/variables differ: ({},{}) vs ({},{})",
                self.nvars(),
                self.order(),
                other.nvars(),
                other.order()
            )));
        }
        if !Arc::ptr_eq(&self.base, &other.base) && !same_point(&self.base, &other.base) {
            return Err(Error::JetMismatch("base points differ".into()));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Jet) -> Result<Jet> {
        self.check(other)?;
        Ok(self.like(self.c.iter().zip(&other.c).map(|(a, b)| a + b).collect()))
    }

    pub fn try_sub(&self, other: &Jet) -> Result<Jet> {
        self.check(other)?;
        Ok(self.like(self.c.iter().zip(&other.c).map(|(a, b)| a - b).collect()))
    }

    pub fn try_mul(&self, other: &Jet) -> Result<Jet> {
        self.check(other)?;
        let mut out = vec![0.0; self.c.len()];
        for &(i, j, k) in &self.layout.mul_table {
            out[k as usize] += self.c[i as usize] * other.c[j as usize];
        }
        Ok(self.like(out))
    }

    pub fn scale(&self, s: f64) -> Jet {
        self.like(self.c.iter().map(|a| a * s).collect())
    }

    pub fn add_const(&self, s: f64) -> Jet {
        let mut j = self.clone();
        j.c[0] += s;
        j
    }

    pub fn recip(&self) -> Jet {
        let a0 = self.c[0];
        let mut n = self.scale(-1.0 / a0);
        n.c[0] = 0.0;
        // 1/a = (1/a0) Σ n^k with n = -(a - a0)/a0 nilpotent
        let mut sum = Jet::constant(&self.base, self.order(), 1.0);
        let mut term = sum.clone();
        for _ in 0..self.order() {
            term = &term * &n;
            sum = &sum + &term;
        }
        sum.scale(1.0 / a0)
    }

    pub fn powi(&self, e: u32) -> Jet {
        let mut r = Jet::constant(&self.base, self.order(), 1.0);
        for _ in 0..e {
            r = &r * self;
        }
        r
    }

    /// Partial derivative in variable `v`, one order lower.
    pub fn derivative(&self, v: usize) -> Jet {
        assert!(self.order() >= 1, "cannot differentiate an order-0 jet");
        let lo = layout(self.nvars(), self.order() - 1);
        let mut out = vec![0.0; lo.len()];
        for (k, ix) in lo.indices.iter().enumerate() {
            let mut up = *ix;
            up[v] += 1;
            let p = self.layout.position(&up).unwrap();
            out[k] = self.c[p] * up[v] as f64;
        }
        Jet { layout: lo, base: self.base.clone(), c: out }
    }

    /// Mixed partial derivative jet `∂^α f`, of order `order - |α|`.
    pub fn derivative_multi(&self, ix: &[u8]) -> Jet {
        let mut j = self.clone();
        for (v, &n) in ix.iter().enumerate() {
            for _ in 0..n {
                j = j.derivative(v);
            }
        }
        j
    }

    /// Antiderivative in variable `v` vanishing on `x_v = base_v`, truncated at the same order.
    pub fn antiderivative(&self, v: usize) -> Jet {
        let mut out = vec![0.0; self.c.len()];
        for (k, ix) in self.layout.indices.iter().enumerate() {
            let mut up = *ix;
            up[v] += 1;
            if let Some(p) = self.layout.position(&up) {
                out[p] = self.c[k] / up[v] as f64;
            }
        }
        self.like(out)
    }

    /// Same function, lower truncation order.
    pub fn truncate(&self, order: usize) -> Jet {
        assert!(order <= self.order());
        let lo = layout(self.nvars(), order);
        let c = lo.indices.iter().map(|ix| self.c[self.layout.position(ix).unwrap()]).collect();
        Jet { layout: lo, base: self.base.clone(), c }
    }

    /// Same coefficients viewed at a higher order (missing terms set to zero).
    pub fn pad(&self, order: usize) -> Jet {
        assert!(order >= self.order());
        let hi = layout(self.nvars(), order);
        let mut c = vec![0.0; hi.len()];
        for (k, ix) in self.layout.indices.iter().enumerate() {
            c[hi.position(ix).unwrap()] = self.c[k];
        }
        Jet { layout: hi, base: self.base.clone(), c }
    }

    /// Regard this jet as a function of a larger variable set: old variable `i` becomes `map[i]`.
    pub fn embed(&self, new_base: &[f64], map: &[usize]) -> Jet {
        assert_eq!(map.len(), self.nvars());
        let hi = layout(new_base.len(), self.order());
        let mut c = vec![0.0; hi.len()];
        for (k, ix) in self.layout.indices.iter().enumerate() {
            let mut nx = [0u8; MAX_VARS];
            for (i, &m) in map.iter().enumerate() {
                nx[m] = ix[i];
            }
            c[hi.position(&nx).unwrap()] = self.c[k];
        }
        Jet { layout: hi, base: new_base.into(), c }
    }

    /// Evaluate the polynomial at base + delta.
    pub fn eval_offset(&self, delta: &[f64]) -> f64 {
        self.layout
            .indices
            .iter()
            .zip(&self.c)
            .map(|(ix, c)| c * (0..self.nvars()).map(|v| delta[v].powi(ix[v] as i32)).product::<f64>())
            .sum()
    }

    /// Move the constant term to zero and the base point to `base` (used for re-anchoring).
    pub fn rebased(&self, base: &[f64]) -> Jet {
        Jet { layout: self.layout.clone(), base: base.into(), c: self.c.clone() }
    }

    pub fn max_abs_diff(&self, other: &Jet) -> f64 {
        self.c.iter().zip(&other.c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub fn unit(i: usize) -> [u8; MAX_VARS] {
    let mut ix = [0u8; MAX_VARS];
    ix[i] = 1;
    ix
}

macro_rules! binop {
    ($tr:ident, $m:ident, $f:ident) => {
        impl std::ops::$tr<&Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                self.$f(rhs).expect("jet operands must share base point and order")
            }
        }
        impl std::ops::$tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                (&self).$f(&rhs).expect("jet operands must share base point and order")
            }
        }
    };
}
binop!(Add, add, try_add);
binop!(Sub, sub, try_sub);
binop!(Mul, mul, try_mul);

impl std::ops::Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

/// Taylor coefficients of `outer ∘ inner`. `inner[i]` is expanded about its own
/// constant term; the difference from `outer`'s base point is carried as an offset.
pub fn compose(outer: &Jet, inner: &[Jet]) -> Result<Jet> {
    if inner.len() != outer.nvars() {
        return Err(Error::JetMismatch(format!(
            "outer jet has {} variables but {} inner components were given",
            outer.nvars(),
            inner.len()
        )));
    }
    let first = &inner[0];
    for u in inner.iter().skip(1) {
        first.check(u)?;
    }
    let order = first.order();
    let m = outer.nvars();
    // powers of δu_i up to outer's order
    let mut pows: Vec<Vec<Jet>> = Vec::with_capacity(m);
    for (i, u) in inner.iter().enumerate() {
        let du = u.add_const(-outer.base[i]);
        let mut row = vec![Jet::constant(first.base(), order, 1.0)];
        for e in 1..=outer.order() {
            let next = &row[e - 1] * &du;
            row.push(next);
        }
        pows.push(row);
    }
    let mut out = Jet::zero(first.base(), order);
    for (k, ix) in outer.layout.indices.iter().enumerate() {
        let c = outer.c[k];
        if c == 0.0 {
            continue;
        }
        let mut term: Option<Jet> = None;
        for i in 0..m {
            if ix[i] > 0 {
                let p = &pows[i][ix[i] as usize];
                term = Some(match term {
                    None => p.clone(),
                    Some(t) => &t * p,
                });
            }
        }
        match term {
            None => out.c[0] += c,
            Some(t) => {
                for (o, v) in out.c.iter_mut().zip(&t.c) {
                    *o += c * v;
                }
            }
        }
    }
    Ok(out)
}

/// A germ of a map: one jet per output component, all sharing base point and order.
#[derive(Clone, Debug)]
pub struct MapJet {
    pub comps: Vec<Jet>,
}

/// Result of inverting a map germ.
#[derive(Clone, Debug)]
pub struct Inverse {
    pub map: MapJet,
    /// 2-norm condition number of the linear part.
    pub condition: f64,
}

impl MapJet {
    pub fn new(comps: Vec<Jet>) -> Result<MapJet> {
        for c in comps.iter().skip(1) {
            comps[0].check(c)?;
        }
        Ok(MapJet { comps })
    }

    pub fn identity(base: &[f64], order: usize) -> MapJet {
        MapJet { comps: (0..base.len()).map(|i| Jet::variable(base, order, i)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn order(&self) -> usize {
        self.comps[0].order()
    }

    pub fn base(&self) -> &[f64] {
        self.comps[0].base()
    }

    pub fn values(&self) -> Vec<f64> {
        self.comps.iter().map(|c| c.value()).collect()
    }

    /// Jacobian matrix (rows: components, columns: variables).
    pub fn linear_part(&self) -> DMatrix<f64> {
        let n = self.comps[0].nvars();
        DMatrix::from_fn(self.dim(), n, |i, j| self.comps[i].partial(&unit(j)))
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &MapJet) -> Result<MapJet> {
        let comps = self.comps.iter().map(|c| compose(c, &inner.comps)).collect::<Result<Vec<_>>>()?;
        Ok(MapJet { comps })
    }

    pub fn truncate(&self, order: usize) -> MapJet {
        MapJet { comps: self.comps.iter().map(|c| c.truncate(order)).collect() }
    }

    /// Inverse germ at the image point, by fixed-point iteration on the nonlinear remainder.
    pub fn invert(&self) -> Result<Inverse> {
        let n = self.dim();
        if self.comps[0].nvars() != n {
            return Err(Error::JetMismatch("only square maps can be inverted".into()));
        }
        let a = self.linear_part();
        let sv = a.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !condition.is_finite() || condition > 1e12 {
            return Err(Error::SingularLinearPart { condition });
        }
        let ainv = a.try_inverse().ok_or(Error::SingularLinearPart { condition })?;
        let order = self.order();
        let src = self.base().to_vec();
        let img = self.values();
        // remainder N(δx) = m(b+δx) - c - Aδx, expressed as jets in δx about src
        let mut rem = Vec::with_capacity(n);
        for c in &self.comps {
            let mut r = c.clone();
            r.c[0] = 0.0;
            for j in 0..n {
                let k = r.layout.position(&unit(j)).unwrap();
                r.c[k] = 0.0;
            }
            rem.push(r);
        }
        // x(y) = src + A^{-1}(δy - N(x(y) - src)); jets in y about img
        let dy: Vec<Jet> = (0..n).map(|i| Jet::variable(&img, order, i).add_const(-img[i])).collect();
        let apply_ainv = |v: &[Jet]| -> Vec<Jet> {
            (0..n)
                .map(|i| {
                    let mut acc = Jet::zero(&img, order);
                    for j in 0..n {
                        acc = &acc + &v[j].scale(ainv[(i, j)]);
                    }
                    acc
                })
                .collect()
        };
        let mut dx = apply_ainv(&dy);
        for _ in 1..order {
            let inner: Vec<Jet> = (0..n).map(|i| dx[i].add_const(src[i])).collect();
            let nl: Vec<Jet> = rem.iter().map(|r| compose(r, &inner)).collect::<Result<_>>()?;
            let rhs: Vec<Jet> = (0..n).map(|i| &dy[i] - &nl[i]).collect();
            dx = apply_ainv(&rhs);
        }
        let comps = (0..n).map(|i| dx[i].add_const(src[i])).collect();
        Ok(Inverse { map: MapJet { comps }, condition })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn layout_sizes() {
        assert_eq!(layout(2, 5).len(), 21);
        assert_eq!(layout(4, 5).len(), 126);
        assert_eq!(layout(1, 8).len(), 9);
    }

    #[test]
    fn difference_of_squares() {
        let x = Jet::variable(&[0.0], 2, 0);
        let one = Jet::constant(&[0.0], 2, 1.0);
        let p = &(&one + &x) * &(&one - &x);
        assert_eq!(p.coeffs(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn binomial_square() {
        let b = [0.0, 0.0];
        let s = &Jet::variable(&b, 2, 0) + &Jet::variable(&b, 2, 1);
        let sq = &s * &s;
        assert_eq!(sq.coeff(&[2, 0]), 1.0);
        assert_eq!(sq.coeff(&[1, 1]), 2.0);
        assert_eq!(sq.coeff(&[0, 2]), 1.0);
    }

    #[test]
    fn compose_square_with_series() {
        // outer = x^2, inner = x + x^2  → x^2 + 2x^3 + x^4, truncated at 3
        let outer = Jet::univariate(0.0, &[0.0, 0.0, 1.0, 0.0]);
        let inner = Jet::univariate(0.0, &[0.0, 1.0, 1.0, 0.0]);
        let c = compose(&outer, &[inner]).unwrap();
        assert_eq!(c.coeffs(), &[0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn lagrange_inversion() {
        let m = MapJet::new(vec![Jet::univariate(0.0, &[0.0, 1.0, 1.0])]).unwrap();
        let inv = m.invert().unwrap();
        assert_relative_eq!(inv.map.comps[0].coeff(&[1]), 1.0);
        assert_relative_eq!(inv.map.comps[0].coeff(&[2]), -1.0);
    }

    #[test]
    fn reciprocal_series() {
        let a = Jet::univariate(0.0, &[2.0, 1.0, 0.0, 0.0]);
        let r = a.recip();
        let p = &a * &r;
        assert_relative_eq!(p.coeffs()[0], 1.0);
        for c in &p.coeffs()[1..] {
            assert!(c.abs() < 1e-15);
        }
    }

    #[test]
    fn antiderivative_inverts_derivative() {
        let j = Jet::from_coeffs(&[0.3, 0.1], 3, (0..10).map(|k| k as f64 * 0.7 - 1.0).collect());
        let back = j.derivative(1).pad(3).antiderivative(1);
        // recovers every coefficient with positive power in var 1
        for (k, ix) in j.layout().indices.iter().enumerate() {
            if ix[1] > 0 {
                assert_relative_eq!(back.coeffs()[k], j.coeffs()[k], epsilon = 1e-14);
            }
        }
    }
}
